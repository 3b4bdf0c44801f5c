//! The NTBEA loop: evaluate, update the model, mutate a neighbourhood,
//! move to the UCB-best neighbour. After the budget is spent the visited
//! point with the highest exploit-only estimate is recommended.

use std::collections::BTreeSet;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::{NTupleModel, WeightingScheme};
use crate::space::{Point, SearchSpace};

/// Random stream used by runs; seeded, portable and reproducible.
pub type NtbeaRng = ChaCha8Rng;

/// Error type evaluators report.
pub type EvalError = Box<dyn std::error::Error + Send + Sync>;

/// Something that scores a point, possibly stochastically.
pub trait Evaluator {
    fn evaluate(&mut self, point: &Point, rng: &mut dyn RngCore) -> Result<f64, EvalError>;
}

impl<E: Evaluator + ?Sized> Evaluator for &mut E {
    fn evaluate(&mut self, point: &Point, rng: &mut dyn RngCore) -> Result<f64, EvalError> {
        (**self).evaluate(point, rng)
    }
}

impl<E: Evaluator + ?Sized> Evaluator for Box<E> {
    fn evaluate(&mut self, point: &Point, rng: &mut dyn RngCore) -> Result<f64, EvalError> {
        (**self).evaluate(point, rng)
    }
}

/// Adapts an infallible closure into an [`Evaluator`].
pub struct FnEvaluator<F>(pub F);

impl<F> Evaluator for FnEvaluator<F>
where
    F: FnMut(&Point, &mut dyn RngCore) -> f64,
{
    fn evaluate(&mut self, point: &Point, rng: &mut dyn RngCore) -> Result<f64, EvalError> {
        Ok((self.0)(point, rng))
    }
}

#[derive(Debug, Error)]
pub enum OptimizeError {
    #[error("invalid settings: {0}")]
    InvalidSettings(String),
    #[error("evaluation failed at iteration {iteration}: {source}")]
    Evaluation {
        iteration: usize,
        #[source]
        source: EvalError,
    },
    #[error("evaluator returned non-finite fitness {value} at iteration {iteration}")]
    NonFinite { iteration: usize, value: f64 },
    #[error("cannot recommend from an empty set of visited points")]
    NothingVisited,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NtbeaSettings {
    pub iterations: usize,
    /// Exploration constant.
    pub k: f64,
    /// Regulariser added to tuple counts in the exploration bonus.
    pub eps: f64,
    pub neighbourhood_size: usize,
    pub scheme: WeightingScheme,
    pub seed: u64,
    pub keep_trace: bool,
}

impl NtbeaSettings {
    pub const DEFAULT_K: f64 = 1.0;
    pub const DEFAULT_EPS: f64 = 0.5;
    pub const DEFAULT_NEIGHBOURHOOD: usize = 50;

    pub fn new(iterations: usize, scheme: WeightingScheme, seed: u64) -> Self {
        Self {
            iterations,
            k: Self::DEFAULT_K,
            eps: Self::DEFAULT_EPS,
            neighbourhood_size: Self::DEFAULT_NEIGHBOURHOOD,
            scheme,
            seed,
            keep_trace: false,
        }
    }

    pub fn validate(&self) -> Result<(), OptimizeError> {
        let fail = |msg: String| Err(OptimizeError::InvalidSettings(msg));
        if self.iterations == 0 {
            return fail("iterations must be at least 1".into());
        }
        if self.neighbourhood_size == 0 {
            return fail("neighbourhood size must be at least 1".into());
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return fail(format!("eps must be positive, got {}", self.eps));
        }
        if !(self.k >= 0.0 && self.k.is_finite()) {
            return fail(format!("k must be non-negative, got {}", self.k));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub iteration: usize,
    pub point: Point,
    pub fitness: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub recommended: Point,
    /// Scheme-consistent value estimate of `recommended` at termination.
    pub model_estimate: f64,
    pub evaluations_used: usize,
    pub trace: Option<Vec<TraceEntry>>,
}

/// Runs NTBEA for `settings.iterations` evaluations.
pub fn run<E: Evaluator + ?Sized>(
    space: &SearchSpace,
    evaluator: &mut E,
    settings: &NtbeaSettings,
) -> Result<(NTupleModel, RunRecord), OptimizeError> {
    settings.validate()?;
    let mut rng = NtbeaRng::seed_from_u64(settings.seed);
    let mut model = NTupleModel::new(space);
    let mut visited = BTreeSet::new();
    let mut trace = settings.keep_trace.then(Vec::new);

    let mut current = space.random_point(&mut rng);
    for iteration in 0..settings.iterations {
        let fitness = evaluator
            .evaluate(&current, &mut rng)
            .map_err(|source| OptimizeError::Evaluation { iteration, source })?;
        if !fitness.is_finite() {
            return Err(OptimizeError::NonFinite {
                iteration,
                value: fitness,
            });
        }
        model.add_evaluation(&current, fitness);
        if let Some(t) = trace.as_mut() {
            t.push(TraceEntry {
                iteration,
                point: current.clone(),
                fitness,
            });
        }
        visited.insert(current.clone());

        if iteration + 1 < settings.iterations {
            current = select_next(&model, &current, settings, &mut rng);
        }
    }

    let (recommended, model_estimate) = recommend(&model, &visited, &settings.scheme)?;
    let record = RunRecord {
        recommended,
        model_estimate,
        evaluations_used: settings.iterations,
        trace,
    };
    Ok((model, record))
}

/// UCB-argmax over a fresh neighbourhood of `current`; exact ties are broken uniformly.
fn select_next<R: Rng + ?Sized>(
    model: &NTupleModel,
    current: &Point,
    settings: &NtbeaSettings,
    rng: &mut R,
) -> Point {
    let space = model.space();
    let mut best: Option<(f64, Point)> = None;
    let mut ties = 0u32;
    for _ in 0..settings.neighbourhood_size {
        let candidate = space.mutate(current, rng);
        let score = model
            .ucb(&candidate, settings.k, settings.eps, &settings.scheme)
            .expect("model has at least one evaluation");
        match &best {
            Some((b, _)) if score < *b => {}
            Some((b, _)) if score == *b => {
                ties += 1;
                if rng.random_range(0..ties) == 0 {
                    best = Some((score, candidate));
                }
            }
            _ => {
                ties = 1;
                best = Some((score, candidate));
            }
        }
    }
    best.expect("neighbourhood is non-empty").1
}

/// The visited point with the highest value estimate (no exploration term).
/// Ties go to the point evaluated more often, then to the lexicographically smallest.
pub fn recommend(
    model: &NTupleModel,
    visited: &BTreeSet<Point>,
    scheme: &WeightingScheme,
) -> Result<(Point, f64), OptimizeError> {
    let mut best: Option<(&Point, f64, u64)> = None;
    for p in visited {
        let value = model.estimate(p, scheme);
        let count = model.point_count(p);
        let better = match best {
            None => true,
            Some((_, bv, bc)) => value > bv || (value == bv && count > bc),
        };
        if better {
            best = Some((p, value, count));
        }
    }
    best.map(|(p, v, _)| (p.clone(), v))
        .ok_or(OptimizeError::NothingVisited)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SchemeKind;
    use std::cell::Cell;

    fn space(cards: &[usize]) -> SearchSpace {
        SearchSpace::with_cardinalities(cards).unwrap()
    }

    #[test]
    fn single_iteration_recommends_the_random_start() {
        let s = space(&[5, 5, 5]);
        let mut eval = FnEvaluator(|_: &Point, _: &mut dyn RngCore| 0.3);
        let mut settings = NtbeaSettings::new(1, WeightingScheme::vanilla(), 4);
        settings.keep_trace = true;
        let (model, record) = run(&s, &mut eval, &settings).unwrap();
        let trace = record.trace.unwrap();
        assert_eq!(trace.len(), 1);
        assert_eq!(record.recommended, trace[0].point);
        assert_eq!(record.model_estimate, 0.3);
        assert_eq!(model.total_iterations(), 1);
    }

    #[test]
    fn zero_fitness_keeps_zero_sums() {
        let s = space(&[3, 3, 3]);
        let calls = Cell::new(0);
        let mut eval = FnEvaluator(|_: &Point, _: &mut dyn RngCore| {
            calls.set(calls.get() + 1);
            0.0
        });
        let settings = NtbeaSettings::new(10, WeightingScheme::vanilla(), 1);
        let (model, record) = run(&s, &mut eval, &settings).unwrap();
        assert_eq!(calls.get(), 10);
        assert_eq!(record.evaluations_used, 10);
        assert_eq!(model.total_iterations(), 10);
        assert_eq!(model.level_totals(), vec![10; 7]);
        assert!(model.dump().lines().all(|l| l.ends_with("sum=0")));
    }

    #[test]
    fn finds_dominant_corner() {
        let s = space(&[2, 2]);
        let mut eval = FnEvaluator(|p: &Point, _: &mut dyn RngCore| {
            if p.indices() == [1, 1] {
                1.0
            } else {
                0.0
            }
        });
        for seed in 0..5 {
            let settings = NtbeaSettings::new(200, WeightingScheme::vanilla(), seed);
            let (_, record) = run(&s, &mut eval, &settings).unwrap();
            assert_eq!(record.recommended.indices(), &[1, 1]);
        }
    }

    #[test]
    fn evaluator_failure_reports_iteration() {
        struct FailAt(usize, usize);
        impl Evaluator for FailAt {
            fn evaluate(&mut self, _: &Point, _: &mut dyn RngCore) -> Result<f64, EvalError> {
                self.1 += 1;
                if self.1 > self.0 {
                    Err("boom".into())
                } else {
                    Ok(0.0)
                }
            }
        }
        let err = run(
            &space(&[3, 3]),
            &mut FailAt(4, 0),
            &NtbeaSettings::new(10, WeightingScheme::vanilla(), 0),
        )
        .unwrap_err();
        assert!(matches!(err, OptimizeError::Evaluation { iteration: 4, .. }));
        assert!(err.to_string().contains("iteration 4"));
    }

    #[test]
    fn invalid_settings_rejected() {
        let s = space(&[2, 2]);
        let mut eval = FnEvaluator(|_: &Point, _: &mut dyn RngCore| 0.0);
        let mut bad = NtbeaSettings::new(0, WeightingScheme::vanilla(), 0);
        assert!(matches!(run(&s, &mut eval, &bad), Err(OptimizeError::InvalidSettings(_))));
        bad.iterations = 5;
        bad.eps = 0.0;
        assert!(run(&s, &mut eval, &bad).is_err());
        bad.eps = 0.5;
        bad.neighbourhood_size = 0;
        assert!(run(&s, &mut eval, &bad).is_err());
    }

    #[test]
    fn recommend_rules() {
        let s = space(&[2, 2]);
        let mut model = NTupleModel::new(&s);
        let vanilla = WeightingScheme::vanilla();
        assert!(matches!(
            recommend(&model, &BTreeSet::new(), &vanilla),
            Err(OptimizeError::NothingVisited)
        ));

        // (0,0) and (1,1) share no tuples; their tuples hold 0.2 and 0.6.
        let a = Point::new(vec![0, 0]);
        let b = Point::new(vec![1, 1]);
        model.add_evaluation(&a, 0.2);
        model.add_evaluation(&b, 0.6);
        let visited: BTreeSet<Point> = [a.clone(), b.clone()].into();
        let (p, v) = recommend(&model, &visited, &vanilla).unwrap();
        assert_eq!(p, b);
        assert!((v - 0.6).abs() < 1e-15);

        let only: BTreeSet<Point> = [a.clone()].into();
        assert_eq!(recommend(&model, &only, &vanilla).unwrap().0, a);
    }

    #[test]
    fn recommend_tie_prefers_more_visits() {
        let s = space(&[2, 2]);
        let mut model = NTupleModel::new(&s);
        let a = Point::new(vec![0, 0]);
        let b = Point::new(vec![1, 1]);
        model.add_evaluation(&a, 0.5);
        model.add_evaluation(&b, 0.5);
        model.add_evaluation(&b, 0.5);
        let visited: BTreeSet<Point> = [a, b.clone()].into();
        assert_eq!(recommend(&model, &visited, &WeightingScheme::vanilla()).unwrap().0, b);
    }

    #[test]
    fn weighted_runs_are_reproducible() {
        let s = space(&[4, 4, 4]);
        let scheme = WeightingScheme::new(SchemeKind::Inverse, 15.0).unwrap();
        let mut settings = NtbeaSettings::new(100, scheme, 77);
        settings.keep_trace = true;
        let noisy = |p: &Point, rng: &mut dyn RngCore| {
            let p_win = p.indices().iter().sum::<usize>() as f64 / 9.0;
            if rng.random_bool(p_win) {
                1.0
            } else {
                -1.0
            }
        };
        let a = run(&s, &mut FnEvaluator(noisy), &settings).unwrap().1;
        let b = run(&s, &mut FnEvaluator(noisy), &settings).unwrap().1;
        assert_eq!(a, b);
    }
}
