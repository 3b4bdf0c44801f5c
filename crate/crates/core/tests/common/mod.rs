//! Independent re-derivation of tuple-model estimates by scanning the raw
//! evaluation list. Shares no code with the library's model.

#![allow(dead_code)]

use ntbea::SchemeKind;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct Eval {
    pub point: Vec<usize>,
    pub value: f64,
}

/// 50 evaluations on a (3,3,3) grid, concentrated on a few points so that
/// patterns reach counts well above T.
pub fn scripted_evaluations() -> Vec<Eval> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED);
    let hot = [[2, 1, 0], [2, 1, 2], [0, 0, 0]];
    (0..50)
        .map(|i| {
            let point = if i % 2 == 0 {
                hot[rng.random_range(0..hot.len())].to_vec()
            } else {
                (0..3).map(|_| rng.random_range(0..3)).collect()
            };
            let value = if i % 5 == 0 {
                rng.random_range(-2.0..2.0)
            } else if rng.random_bool(0.5) {
                1.0
            } else {
                -1.0
            };
            Eval { point, value }
        })
        .collect()
}

/// Dimension sets of size 1, 2 and d, without duplicates.
pub fn stored_dim_sets(d: usize) -> Vec<Vec<usize>> {
    let mut sets = Vec::new();
    for mask in 1u32..(1 << d) {
        let dims: Vec<usize> = (0..d).filter(|i| mask & (1 << i) != 0).collect();
        if dims.len() == 1 || dims.len() == 2 || dims.len() == d {
            sets.push(dims);
        }
    }
    sets.sort_by(|a, b| a.len().cmp(&b.len()).then(a.cmp(b)));
    sets
}

/// (count, sum) of evaluations agreeing with `p` on every dimension in `dims`.
pub fn pattern_stats(evals: &[Eval], dims: &[usize], p: &[usize]) -> (u64, f64) {
    evals
        .iter()
        .filter(|e| dims.iter().all(|&i| e.point[i] == p[i]))
        .fold((0, 0.0), |(n, s), e| (n + 1, s + e.value))
}

pub fn vanilla(evals: &[Eval], d: usize, p: &[usize]) -> f64 {
    let means: Vec<f64> = stored_dim_sets(d)
        .iter()
        .map(|s| pattern_stats(evals, s, p))
        .filter(|&(n, _)| n > 0)
        .map(|(n, s)| s / n as f64)
        .collect();
    if means.is_empty() {
        0.0
    } else {
        means.iter().sum::<f64>() / means.len() as f64
    }
}

pub fn weight(kind: SchemeKind, t: f64, n: u64) -> f64 {
    let n = n as f64;
    match kind {
        SchemeKind::Linear => if n >= t { 1.0 } else { n / t },
        SchemeKind::InverseRoot => 1.0 - (t / (n + t)).sqrt(),
        SchemeKind::Inverse => n / (n + t),
        SchemeKind::Exponential => 1.0 - (-n / t).exp(),
        SchemeKind::Vanilla => unreachable!(),
    }
}

/// Value of pattern `dims` at `p`: own mean blended with the average of the
/// stored sub-patterns one stored level down (global mean under singletons).
pub fn weighted_value(evals: &[Eval], d: usize, dims: &[usize], p: &[usize], kind: SchemeKind, t: f64) -> f64 {
    let sets = stored_dim_sets(d);
    let lower = sets.iter().map(Vec::len).filter(|&l| l < dims.len()).max();
    let below = match lower {
        None => {
            if evals.is_empty() {
                0.0
            } else {
                evals.iter().map(|e| e.value).sum::<f64>() / evals.len() as f64
            }
        }
        Some(l) => {
            let children: Vec<&Vec<usize>> = sets
                .iter()
                .filter(|s| s.len() == l && s.iter().all(|x| dims.contains(x)))
                .collect();
            children
                .iter()
                .map(|c| weighted_value(evals, d, c, p, kind, t))
                .sum::<f64>()
                / children.len() as f64
        }
    };
    let (n, s) = pattern_stats(evals, dims, p);
    if n == 0 {
        below
    } else {
        let w = weight(kind, t, n);
        w * (s / n as f64) + (1.0 - w) * below
    }
}

pub fn weighted(evals: &[Eval], d: usize, p: &[usize], kind: SchemeKind, t: f64) -> f64 {
    let full: Vec<usize> = (0..d).collect();
    weighted_value(evals, d, &full, p, kind, t)
}

pub fn all_points(cards: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for &c in cards {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (0..c).map(move |v| {
                    let mut q = prefix.clone();
                    q.push(v);
                    q
                })
            })
            .collect();
    }
    out
}
