//! Noisy win/loss versions of four global-optimisation test functions.
//!
//! Each function is sign-flipped, shifted and scaled into a win probability
//! `p`, discretised onto a grid, and evaluated as a Bernoulli draw returning
//! `+1` with probability `p` and `-1` otherwise. The true `p` of every grid
//! point is cached at construction.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore};
use thiserror::Error;

use crate::optimizer::{EvalError, Evaluator};
use crate::space::{Dimension, ParamValue, Point, SearchSpace, SpaceError, DEFAULT_ENUMERATION_CAP};

#[derive(Debug, Error, PartialEq)]
pub enum BenchmarkError {
    #[error("unknown benchmark `{0}` (expected hartmann3, hartmann6, branin or goldsteinprice)")]
    Unknown(String),
    #[error("{id} expects {expected} coordinates, got {got}")]
    Arity {
        id: BenchmarkId,
        expected: usize,
        got: usize,
    },
    #[error("coordinate {index} = {value} lies outside the {id} domain [{lo}, {hi}]")]
    Domain {
        id: BenchmarkId,
        index: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error(transparent)]
    Space(#[from] SpaceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BenchmarkId {
    Hartmann3,
    Hartmann6,
    Branin,
    GoldsteinPrice,
}

impl BenchmarkId {
    pub const ALL: [BenchmarkId; 4] = [
        BenchmarkId::Hartmann3,
        BenchmarkId::Hartmann6,
        BenchmarkId::Branin,
        BenchmarkId::GoldsteinPrice,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BenchmarkId::Hartmann3 => "hartmann3",
            BenchmarkId::Hartmann6 => "hartmann6",
            BenchmarkId::Branin => "branin",
            BenchmarkId::GoldsteinPrice => "goldsteinprice",
        }
    }

    /// Per-dimension `(lo, hi)` of the standard domain.
    pub fn domain(self) -> Vec<(f64, f64)> {
        match self {
            BenchmarkId::Hartmann3 => vec![(0.0, 1.0); 3],
            BenchmarkId::Hartmann6 => vec![(0.0, 1.0); 6],
            BenchmarkId::Branin => vec![(-5.0, 10.0), (0.0, 15.0)],
            BenchmarkId::GoldsteinPrice => vec![(-2.0, 2.0); 2],
        }
    }

    /// Grid points per dimension.
    pub fn resolution(self) -> usize {
        match self {
            BenchmarkId::Hartmann3 => 10,
            BenchmarkId::Hartmann6 => 5,
            BenchmarkId::Branin | BenchmarkId::GoldsteinPrice => 20,
        }
    }
}

impl fmt::Display for BenchmarkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BenchmarkId {
    type Err = BenchmarkError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match norm.as_str() {
            "hartmann3" => Ok(BenchmarkId::Hartmann3),
            "hartmann6" => Ok(BenchmarkId::Hartmann6),
            "branin" => Ok(BenchmarkId::Branin),
            "goldsteinprice" => Ok(BenchmarkId::GoldsteinPrice),
            _ => Err(BenchmarkError::Unknown(s.to_string())),
        }
    }
}

const HARTMANN_ALPHA: [f64; 4] = [1.0, 1.2, 3.0, 3.2];

const HARTMANN3_A: [[f64; 3]; 4] = [
    [3.0, 10.0, 30.0],
    [0.1, 10.0, 35.0],
    [3.0, 10.0, 30.0],
    [0.1, 10.0, 35.0],
];

const HARTMANN3_P: [[f64; 3]; 4] = [
    [0.3689, 0.1170, 0.2673],
    [0.4699, 0.4387, 0.7470],
    [0.1091, 0.8732, 0.5547],
    [0.0381, 0.5743, 0.8828],
];

const HARTMANN6_A: [[f64; 6]; 4] = [
    [10.0, 3.0, 17.0, 3.5, 1.7, 8.0],
    [0.05, 10.0, 17.0, 0.1, 8.0, 14.0],
    [3.0, 3.5, 1.7, 10.0, 17.0, 8.0],
    [17.0, 8.0, 0.05, 10.0, 0.1, 14.0],
];

const HARTMANN6_P: [[f64; 6]; 4] = [
    [0.1312, 0.1696, 0.5569, 0.0124, 0.8283, 0.5886],
    [0.2329, 0.4135, 0.8307, 0.3736, 0.1004, 0.9991],
    [0.2348, 0.1451, 0.3522, 0.2883, 0.3047, 0.6650],
    [0.4047, 0.8828, 0.8732, 0.5743, 0.1091, 0.0381],
];

fn hartmann<const D: usize>(a: &[[f64; D]; 4], p: &[[f64; D]; 4], x: &[f64]) -> f64 {
    -(0..4)
        .map(|i| {
            let inner: f64 = (0..D).map(|j| a[i][j] * (x[j] - p[i][j]).powi(2)).sum();
            HARTMANN_ALPHA[i] * (-inner).exp()
        })
        .sum::<f64>()
}

fn branin(x: &[f64]) -> f64 {
    let b = 5.1 / (4.0 * PI * PI);
    let c = 5.0 / PI;
    let t = 1.0 / (8.0 * PI);
    let (x1, x2) = (x[0], x[1]);
    (x2 - b * x1 * x1 + c * x1 - 6.0).powi(2) + 10.0 * (1.0 - t) * x1.cos() + 10.0
}

fn goldstein_price(x: &[f64]) -> f64 {
    let (x1, x2) = (x[0], x[1]);
    let a = 1.0
        + (x1 + x2 + 1.0).powi(2)
            * (19.0 - 14.0 * x1 + 3.0 * x1 * x1 - 14.0 * x2 + 6.0 * x1 * x2 + 3.0 * x2 * x2);
    let b = 30.0
        + (2.0 * x1 - 3.0 * x2).powi(2)
            * (18.0 - 32.0 * x1 + 12.0 * x1 * x1 + 48.0 * x2 - 36.0 * x1 * x2 + 27.0 * x2 * x2);
    a * b
}

/// The standard minimisation-form function value at `x`.
pub fn continuous_value(id: BenchmarkId, x: &[f64]) -> Result<f64, BenchmarkError> {
    let domain = id.domain();
    if x.len() != domain.len() {
        return Err(BenchmarkError::Arity {
            id,
            expected: domain.len(),
            got: x.len(),
        });
    }
    for (index, (&value, &(lo, hi))) in x.iter().zip(&domain).enumerate() {
        if !(lo..=hi).contains(&value) {
            return Err(BenchmarkError::Domain {
                id,
                index,
                value,
                lo,
                hi,
            });
        }
    }
    Ok(match id {
        BenchmarkId::Hartmann3 => hartmann(&HARTMANN3_A, &HARTMANN3_P, x),
        BenchmarkId::Hartmann6 => hartmann(&HARTMANN6_A, &HARTMANN6_P, x),
        BenchmarkId::Branin => branin(x),
        BenchmarkId::GoldsteinPrice => goldstein_price(x),
    })
}

/// Maps a raw function value to a win probability in `[0, 1]`.
pub fn to_probability(id: BenchmarkId, raw: f64) -> f64 {
    let p = match id {
        BenchmarkId::Hartmann3 | BenchmarkId::Hartmann6 => -raw / 4.0,
        BenchmarkId::Branin => (-raw + 10.0) / 12.0,
        BenchmarkId::GoldsteinPrice => (-raw + 400.0) / 500.0,
    };
    p.clamp(0.0, 1.0)
}

/// How `k` grid values are laid over a dimension `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Discretization {
    /// `lo + (hi - lo) * i / k`: the left edge of each of `k` equal intervals.
    #[default]
    IntervalStart,
    /// `lo + (hi - lo) * i / (k - 1)`: both endpoints included.
    EndpointInclusive,
    /// `lo + (hi - lo) * (i + 0.5) / k`: interval midpoints.
    Midpoint,
}

impl Discretization {
    pub const ALL: [Discretization; 3] = [
        Discretization::IntervalStart,
        Discretization::EndpointInclusive,
        Discretization::Midpoint,
    ];

    pub fn grid(self, lo: f64, hi: f64, k: usize) -> Vec<f64> {
        let span = hi - lo;
        (0..k)
            .map(|i| {
                let i = i as f64;
                let k = k as f64;
                match self {
                    Discretization::IntervalStart => lo + span * i / k,
                    Discretization::EndpointInclusive => lo + span * i / (k - 1.0),
                    Discretization::Midpoint => lo + span * (i + 0.5) / k,
                }
            })
            .collect()
    }
}

/// Grid coordinate rounded for display; the exact coordinate is kept for evaluation.
fn label_value(v: f64) -> f64 {
    (v * 1e10).round() / 1e10
}

/// A discretised benchmark with its cached true win probabilities.
#[derive(Debug, Clone)]
pub struct BenchmarkInstance {
    id: BenchmarkId,
    space: SearchSpace,
    grids: Vec<Vec<f64>>,
    /// Indexed by the point's rank in enumeration order.
    true_p: Vec<f64>,
}

impl BenchmarkInstance {
    pub fn new(id: BenchmarkId) -> Self {
        Self::with_discretization(id, Discretization::default())
    }

    pub fn with_discretization(id: BenchmarkId, disc: Discretization) -> Self {
        let k = id.resolution();
        let grids: Vec<Vec<f64>> = id
            .domain()
            .into_iter()
            .map(|(lo, hi)| disc.grid(lo, hi, k))
            .collect();
        let dims = grids
            .iter()
            .enumerate()
            .map(|(i, g)| Dimension::new(format!("x{}", i + 1), g.iter().map(|&v| ParamValue::Float(label_value(v))).collect()))
            .collect();
        let space = SearchSpace::new(dims).expect("benchmark grids are valid spaces");
        let true_p = space
            .enumerate_points(DEFAULT_ENUMERATION_CAP)
            .expect("benchmark grids are small")
            .map(|p| {
                let x: Vec<f64> = p.indices().iter().zip(&grids).map(|(&v, g)| g[v]).collect();
                let raw = continuous_value(id, &x).expect("grid lies inside the domain");
                to_probability(id, raw)
            })
            .collect();
        Self {
            id,
            space,
            grids,
            true_p,
        }
    }

    pub fn id(&self) -> BenchmarkId {
        self.id
    }

    pub fn space(&self) -> &SearchSpace {
        &self.space
    }

    pub fn coordinates(&self, p: &Point) -> Vec<f64> {
        p.indices().iter().zip(&self.grids).map(|(&v, g)| g[v]).collect()
    }

    pub fn true_p(&self, p: &Point) -> f64 {
        self.true_p[self.space.rank(p) as usize]
    }

    /// `+1` with probability `true_p(p)`, else `-1`.
    pub fn noisy_evaluate<R: Rng + ?Sized>(&self, p: &Point, rng: &mut R) -> f64 {
        if rng.random::<f64>() < self.true_p(p) {
            1.0
        } else {
            -1.0
        }
    }

    /// Every grid point with its true `p`, descending by `p`, ties in enumeration order.
    pub fn ranked_points(&self) -> Vec<(Point, f64)> {
        let mut all: Vec<(Point, f64)> = self
            .space
            .enumerate_points(DEFAULT_ENUMERATION_CAP)
            .expect("benchmark grids are small")
            .zip(self.true_p.iter().copied())
            .collect();
        all.sort_by(|a, b| b.1.total_cmp(&a.1));
        all
    }

    pub fn grid_oracle(&self, top_k: usize) -> OracleReport {
        let ranked = self.ranked_points();
        let max_p = ranked.first().map(|(_, p)| *p).unwrap_or(0.0);
        let argmax = ranked
            .iter()
            .take_while(|(_, p)| *p == max_p)
            .map(|(pt, _)| pt.clone())
            .collect();
        let nonzero = ranked.iter().filter(|(_, p)| *p > 0.0).count();
        OracleReport {
            max_p,
            argmax,
            nonzero_fraction: nonzero as f64 / ranked.len() as f64,
            top: ranked.into_iter().take(top_k).collect(),
        }
    }
}

impl Evaluator for &BenchmarkInstance {
    fn evaluate(&mut self, point: &Point, rng: &mut dyn RngCore) -> Result<f64, EvalError> {
        Ok(self.noisy_evaluate(point, rng))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub max_p: f64,
    pub argmax: Vec<Point>,
    pub nonzero_fraction: f64,
    /// Best `top_k` points, descending by true `p`.
    pub top: Vec<(Point, f64)>,
}

impl OracleReport {
    pub fn in_top(&self, p: &Point) -> bool {
        self.top.iter().any(|(q, _)| q == p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn literature_optima() {
        let b = continuous_value(BenchmarkId::Branin, &[PI, 2.275]).unwrap();
        assert!((b - 0.397_887).abs() < 1e-5, "{b}");
        let g = continuous_value(BenchmarkId::GoldsteinPrice, &[0.0, -1.0]).unwrap();
        assert_eq!(g, 3.0);
        let h = continuous_value(BenchmarkId::Hartmann3, &[0.114_614, 0.555_649, 0.852_547]).unwrap();
        assert!((h + 3.86278).abs() < 1e-4, "{h}");
        let h6 = continuous_value(
            BenchmarkId::Hartmann6,
            &[0.20169, 0.150011, 0.476874, 0.275332, 0.311652, 0.6573],
        )
        .unwrap();
        assert!((h6 + 3.32237).abs() < 1e-4, "{h6}");
    }

    #[test]
    fn optima_are_local_minima_on_a_fine_grid() {
        // No point of a small lattice around each optimum is lower.
        let check = |id: BenchmarkId, x0: &[f64], step: f64| {
            let f0 = continuous_value(id, x0).unwrap();
            let d = x0.len();
            for code in 0..3usize.pow(d as u32) {
                let mut c = code;
                let x: Vec<f64> = x0
                    .iter()
                    .map(|&v| {
                        let off = (c % 3) as f64 - 1.0;
                        c /= 3;
                        v + off * step
                    })
                    .collect();
                let f = continuous_value(id, &x).unwrap();
                assert!(f >= f0 - 1e-9, "{id} lower at {x:?}");
            }
        };
        check(BenchmarkId::Branin, &[PI, 2.275], 1e-3);
        check(BenchmarkId::GoldsteinPrice, &[0.0, -1.0], 1e-3);
        check(BenchmarkId::Hartmann3, &[0.114_614, 0.555_649, 0.852_547], 1e-3);
    }

    #[test]
    fn domain_and_arity_errors() {
        assert!(matches!(
            continuous_value(BenchmarkId::Branin, &[11.0, 0.0]),
            Err(BenchmarkError::Domain { index: 0, .. })
        ));
        assert!(matches!(
            continuous_value(BenchmarkId::Hartmann3, &[0.5, 0.5]),
            Err(BenchmarkError::Arity { expected: 3, got: 2, .. })
        ));
    }

    #[test]
    fn probability_transform() {
        let p = to_probability(BenchmarkId::Branin, 0.397_887);
        assert!((p - (10.0 - 0.397_887) / 12.0).abs() < 1e-15);
        assert!((p - 0.8002).abs() < 1e-4);
        assert_eq!(to_probability(BenchmarkId::GoldsteinPrice, 3.0), 0.794);
        assert_eq!(to_probability(BenchmarkId::Branin, 10.0), 0.0);
        assert_eq!(to_probability(BenchmarkId::Branin, 25.0), 0.0);
        assert_eq!(to_probability(BenchmarkId::Hartmann3, 1.0), 0.0);
        assert_eq!(to_probability(BenchmarkId::Hartmann3, -2.0), 0.5);
    }

    #[test]
    fn instance_shapes() {
        let shape = |id| {
            let inst = BenchmarkInstance::new(id);
            (inst.space().cardinalities().to_vec(), inst.space().point_count())
        };
        assert_eq!(shape(BenchmarkId::Hartmann3), (vec![10; 3], 1000));
        assert_eq!(shape(BenchmarkId::Hartmann6), (vec![5; 6], 15_625));
        assert_eq!(shape(BenchmarkId::Branin), (vec![20; 2], 400));
        assert_eq!(shape(BenchmarkId::GoldsteinPrice), (vec![20; 2], 400));
    }

    #[test]
    fn true_p_in_unit_interval() {
        for id in BenchmarkId::ALL {
            let inst = BenchmarkInstance::new(id);
            assert!(inst.true_p.iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }

    #[test]
    fn noisy_evaluate_extremes_and_mean() {
        let inst = BenchmarkInstance::new(BenchmarkId::GoldsteinPrice);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let zero = inst.ranked_points().last().unwrap().0.clone();
        assert_eq!(inst.true_p(&zero), 0.0);
        assert!((0..1000).all(|_| inst.noisy_evaluate(&zero, &mut rng) == -1.0));

        let best = inst.grid_oracle(1).argmax[0].clone();
        let p = inst.true_p(&best);
        let n = 100_000;
        let total: f64 = (0..n).map(|_| inst.noisy_evaluate(&best, &mut rng)).sum();
        let mean = total / n as f64;
        // Var of a +-1 draw is 4p(1-p).
        let sd = (4.0 * p * (1.0 - p) / n as f64).sqrt();
        assert!((mean - (2.0 * p - 1.0)).abs() < 4.0 * sd, "{mean} vs {}", 2.0 * p - 1.0);
    }

    #[test]
    fn interval_start_grid_reproduces_published_ranges() {
        let o = BenchmarkInstance::new(BenchmarkId::Hartmann3).grid_oracle(3);
        assert!((o.max_p - 0.897).abs() < 5e-4);
        // The top three settings lie between 0.895 and 0.897.
        assert!(o.top.iter().all(|(_, p)| *p > 0.895 && *p < 0.897));
        let o = BenchmarkInstance::new(BenchmarkId::Branin).grid_oracle(6);
        assert_eq!((o.nonzero_fraction * 400.0).round(), 59.0);
        let o = BenchmarkInstance::new(BenchmarkId::GoldsteinPrice).grid_oracle(6);
        assert_eq!(o.max_p, 0.794);
        assert_eq!((o.nonzero_fraction * 400.0).round(), 53.0);
    }

    #[test]
    fn branin_has_three_separated_high_regions() {
        let inst = BenchmarkInstance::new(BenchmarkId::Branin);
        let high: Vec<(i64, i64)> = inst
            .ranked_points()
            .into_iter()
            .filter(|(_, p)| *p >= 0.7)
            .map(|(pt, _)| (pt[0] as i64, pt[1] as i64))
            .collect();
        // Connected components under 8-neighbour adjacency.
        let mut label = vec![usize::MAX; high.len()];
        let mut clusters = 0;
        for start in 0..high.len() {
            if label[start] != usize::MAX {
                continue;
            }
            let mut stack = vec![start];
            while let Some(i) = stack.pop() {
                if label[i] != usize::MAX {
                    continue;
                }
                label[i] = clusters;
                for (j, q) in high.iter().enumerate() {
                    let (a, b) = high[i];
                    if label[j] == usize::MAX && (q.0 - a).abs() <= 1 && (q.1 - b).abs() <= 1 {
                        stack.push(j);
                    }
                }
            }
            clusters += 1;
        }
        assert_eq!(clusters, 3, "{high:?}");
    }

    #[test]
    fn oracle_top_list_and_argmax() {
        let o = BenchmarkInstance::new(BenchmarkId::Branin).grid_oracle(1);
        assert_eq!(o.top.len(), 1);
        assert_eq!(o.argmax, vec![o.top[0].0.clone()]);
        assert!(o.in_top(&o.argmax[0]));
    }

    #[test]
    fn benchmark_names() {
        for id in BenchmarkId::ALL {
            assert_eq!(id.name().parse::<BenchmarkId>().unwrap(), id);
        }
        assert_eq!("Goldstein-Price".parse::<BenchmarkId>().unwrap(), BenchmarkId::GoldsteinPrice);
        assert!("rosenbrock".parse::<BenchmarkId>().is_err());
    }
}
