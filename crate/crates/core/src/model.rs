//! The N-Tuple model: per-pattern statistics over 1-tuples, 2-tuples and the
//! full d-tuple, plain and weighted value estimates, and the UCB bonus.
//!
//! Patterns are stored sparsely. Each tuple dimension-set owns a hash table
//! keyed by the mixed-radix code of the values at its dimensions, so only
//! patterns that have been observed take memory.

use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use thiserror::Error;

use crate::space::{Point, SearchSpace};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("the vanilla scheme has no weight function")]
    VanillaWeight,
    #[error("exploration bonus is undefined before the first evaluation")]
    NoEvaluations,
    #[error("decay scale T must be positive and finite, got {0}")]
    InvalidDecay(f64),
    #[error("unknown weighting scheme `{0}` (expected std, lin, inv, sqrt or exp)")]
    UnknownScheme(String),
}

/// Running statistics of one instantiated tuple pattern.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TupleStats {
    pub count: u64,
    pub sum: f64,
}

impl TupleStats {
    pub fn mean(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum / self.count as f64)
    }

    fn add(&mut self, value: f64) {
        self.count += 1;
        self.sum += value;
    }
}

/// A tuple's dimensions together with the value indices a point takes on them.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TupleId {
    pub dims: Vec<usize>,
    pub values: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SchemeKind {
    Vanilla,
    Linear,
    InverseRoot,
    Inverse,
    Exponential,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 5] = [
        SchemeKind::Vanilla,
        SchemeKind::Linear,
        SchemeKind::Inverse,
        SchemeKind::InverseRoot,
        SchemeKind::Exponential,
    ];

    /// Short name used on the command line and in result files.
    pub fn short_name(self) -> &'static str {
        match self {
            SchemeKind::Vanilla => "std",
            SchemeKind::Linear => "lin",
            SchemeKind::InverseRoot => "sqrt",
            SchemeKind::Inverse => "inv",
            SchemeKind::Exponential => "exp",
        }
    }
}

impl FromStr for SchemeKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "std" | "vanilla" => Ok(SchemeKind::Vanilla),
            "lin" | "linear" => Ok(SchemeKind::Linear),
            "sqrt" | "inverse-root" | "inverseroot" => Ok(SchemeKind::InverseRoot),
            "inv" | "inverse" => Ok(SchemeKind::Inverse),
            "exp" | "exponential" => Ok(SchemeKind::Exponential),
            _ => Err(ModelError::UnknownScheme(s.to_string())),
        }
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

/// How tuple statistics are combined into a value estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightingScheme {
    kind: SchemeKind,
    decay: f64,
}

impl WeightingScheme {
    pub const DEFAULT_DECAY: f64 = 15.0;

    pub fn new(kind: SchemeKind, decay: f64) -> Result<Self, ModelError> {
        if !(decay > 0.0 && decay.is_finite()) {
            return Err(ModelError::InvalidDecay(decay));
        }
        Ok(Self { kind, decay })
    }

    pub fn vanilla() -> Self {
        Self {
            kind: SchemeKind::Vanilla,
            decay: Self::DEFAULT_DECAY,
        }
    }

    pub fn kind(&self) -> SchemeKind {
        self.kind
    }

    /// The decay scale T.
    pub fn decay(&self) -> f64 {
        self.decay
    }

    pub fn is_vanilla(&self) -> bool {
        self.kind == SchemeKind::Vanilla
    }

    /// Weight given to a pattern's own mean after `n` matching evaluations.
    pub fn weight(&self, n: u64) -> Result<f64, ModelError> {
        let n = n as f64;
        let t = self.decay;
        match self.kind {
            SchemeKind::Vanilla => Err(ModelError::VanillaWeight),
            SchemeKind::Linear => Ok((n / t).min(1.0)),
            SchemeKind::InverseRoot => Ok(1.0 - (t / (n + t)).sqrt()),
            SchemeKind::Inverse => Ok(1.0 - t / (n + t)),
            SchemeKind::Exponential => Ok(1.0 - (-n / t).exp()),
        }
    }
}

#[derive(Debug, Clone)]
struct TupleTable {
    dims: Vec<usize>,
    /// Tables one stored level down whose dimensions are subsets of `dims`.
    /// Empty for singletons, whose base is the global statistics.
    children: Vec<usize>,
    entries: HashMap<u64, TupleStats>,
}

impl TupleTable {
    fn key(&self, p: &Point, cards: &[usize]) -> u64 {
        self.dims
            .iter()
            .fold(0u64, |acc, &i| acc * cards[i] as u64 + p[i] as u64)
    }

    fn decode(&self, mut key: u64, cards: &[usize]) -> Vec<usize> {
        let mut values = vec![0; self.dims.len()];
        for (slot, &i) in self.dims.iter().enumerate().rev() {
            let c = cards[i] as u64;
            values[slot] = (key % c) as usize;
            key /= c;
        }
        values
    }
}

#[derive(Debug, Clone)]
pub struct NTupleModel {
    space: SearchSpace,
    /// Ordered by tuple size, so every table's children precede it.
    tables: Vec<TupleTable>,
    global: TupleStats,
    total: u64,
}

impl NTupleModel {
    /// An empty model over all 1-tuples, all 2-tuples and the full d-tuple.
    pub fn new(space: &SearchSpace) -> Self {
        let d = space.num_dims();
        let mut dim_sets: Vec<Vec<usize>> = (0..d).map(|i| vec![i]).collect();
        for i in 0..d {
            for j in (i + 1)..d {
                dim_sets.push(vec![i, j]);
            }
        }
        let full: Vec<usize> = (0..d).collect();
        if !dim_sets.contains(&full) {
            dim_sets.push(full);
        }

        let mut tables: Vec<TupleTable> = Vec::with_capacity(dim_sets.len());
        for dims in dim_sets {
            let lower = tables
                .iter()
                .map(|t| t.dims.len())
                .filter(|&len| len < dims.len())
                .max();
            let children = match lower {
                Some(len) => tables
                    .iter()
                    .enumerate()
                    .filter(|(_, t)| t.dims.len() == len && t.dims.iter().all(|x| dims.contains(x)))
                    .map(|(idx, _)| idx)
                    .collect(),
                None => Vec::new(),
            };
            tables.push(TupleTable {
                dims,
                children,
                entries: HashMap::new(),
            });
        }
        Self {
            space: space.clone(),
            tables,
            global: TupleStats::default(),
            total: 0,
        }
    }

    pub fn space(&self) -> &SearchSpace {
        &self.space
    }

    /// Number of evaluations added so far (N).
    pub fn total_iterations(&self) -> u64 {
        self.total
    }

    /// Dimension sets in use, excluding the empty global tuple.
    pub fn tuple_dims(&self) -> Vec<&[usize]> {
        self.tables.iter().map(|t| t.dims.as_slice()).collect()
    }

    pub fn global_stats(&self) -> TupleStats {
        self.global
    }

    pub fn add_evaluation(&mut self, p: &Point, value: f64) {
        debug_assert!(self.space.contains(p));
        let cards = self.space.cardinalities();
        for table in &mut self.tables {
            let key = table.key(p, cards);
            table.entries.entry(key).or_default().add(value);
        }
        self.global.add(value);
        self.total += 1;
    }

    /// Statistics for every non-empty pattern `p` matches, in table order.
    pub fn matching_stats(&self, p: &Point) -> Vec<(TupleId, TupleStats)> {
        self.tables
            .iter()
            .map(|t| {
                let id = TupleId {
                    dims: t.dims.clone(),
                    values: t.dims.iter().map(|&i| p[i]).collect(),
                };
                (id, self.lookup(t, p))
            })
            .collect()
    }

    pub fn stats(&self, id: &TupleId) -> Option<TupleStats> {
        if id.dims.is_empty() {
            return Some(self.global);
        }
        let table = self.tables.iter().find(|t| t.dims == id.dims)?;
        let cards = self.space.cardinalities();
        let key = id
            .dims
            .iter()
            .zip(&id.values)
            .fold(0u64, |acc, (&i, &v)| acc * cards[i] as u64 + v as u64);
        Some(table.entries.get(&key).copied().unwrap_or_default())
    }

    /// Count of the full d-tuple pattern matching `p`, i.e. how often `p` itself was evaluated.
    pub fn point_count(&self, p: &Point) -> u64 {
        let full = self.tables.last().expect("at least one table");
        self.lookup(full, p).count
    }

    fn lookup(&self, table: &TupleTable, p: &Point) -> TupleStats {
        let key = table.key(p, self.space.cardinalities());
        table.entries.get(&key).copied().unwrap_or_default()
    }

    /// Mean of the means of all matching patterns with data; 0 when none have data.
    pub fn vanilla_estimate(&self, p: &Point) -> f64 {
        let (sum, n) = self
            .tables
            .iter()
            .filter_map(|t| self.lookup(t, p).mean())
            .fold((0.0, 0usize), |(s, n), m| (s + m, n + 1));
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }

    /// Recursive blend of each pattern's mean with the average value of its
    /// stored sub-patterns one level down, bottoming out at the global mean.
    pub fn weighted_estimate(&self, p: &Point, scheme: &WeightingScheme) -> f64 {
        if scheme.is_vanilla() {
            return self.vanilla_estimate(p);
        }
        let base = self.global.mean().unwrap_or(0.0);
        let mut values = Vec::with_capacity(self.tables.len());
        for table in &self.tables {
            let below = if table.children.is_empty() {
                base
            } else {
                table.children.iter().map(|&c| values[c]).sum::<f64>() / table.children.len() as f64
            };
            let stats = self.lookup(table, p);
            let v = match stats.mean() {
                Some(mean) => {
                    let w = scheme.weight(stats.count).expect("non-vanilla scheme");
                    w * mean + (1.0 - w) * below
                }
                None => below,
            };
            values.push(v);
        }
        *values.last().expect("at least one table")
    }

    /// Value estimate consistent with `scheme`.
    pub fn estimate(&self, p: &Point, scheme: &WeightingScheme) -> f64 {
        self.weighted_estimate(p, scheme)
    }

    /// Average over every matching pattern (visited or not) of `k * sqrt(ln N / (n + eps))`.
    pub fn exploration_bonus(&self, p: &Point, k: f64, eps: f64) -> Result<f64, ModelError> {
        if self.total == 0 {
            return Err(ModelError::NoEvaluations);
        }
        if k == 0.0 {
            return Ok(0.0);
        }
        let log_n = (self.total as f64).ln();
        let sum: f64 = self
            .tables
            .iter()
            .map(|t| (log_n / (self.lookup(t, p).count as f64 + eps)).sqrt())
            .sum();
        Ok(k * sum / self.tables.len() as f64)
    }

    pub fn ucb(
        &self,
        p: &Point,
        k: f64,
        eps: f64,
        scheme: &WeightingScheme,
    ) -> Result<f64, ModelError> {
        Ok(self.estimate(p, scheme) + self.exploration_bonus(p, k, eps)?)
    }

    /// Text dump, one `dims=.. vals=.. n=.. sum=..` record per stored pattern.
    /// The global tuple is written with empty `dims` and `vals`.
    pub fn dump(&self) -> String {
        let cards = self.space.cardinalities();
        let mut out = String::new();
        let join = |xs: &[usize]| {
            xs.iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join(",")
        };
        if self.global.count > 0 {
            let _ = writeln!(out, "dims= vals= n={} sum={}", self.global.count, self.global.sum);
        }
        for table in &self.tables {
            let mut keys: Vec<&u64> = table.entries.keys().collect();
            keys.sort();
            for key in keys {
                let stats = table.entries[key];
                let _ = writeln!(
                    out,
                    "dims={} vals={} n={} sum={}",
                    join(&table.dims),
                    join(&table.decode(*key, cards)),
                    stats.count,
                    stats.sum
                );
            }
        }
        out
    }

    /// Sum of pattern counts per dimension set; each equals N.
    pub fn level_totals(&self) -> Vec<u64> {
        self.tables
            .iter()
            .map(|t| t.entries.values().map(|s| s.count).sum())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space(cards: &[usize]) -> SearchSpace {
        SearchSpace::with_cardinalities(cards).unwrap()
    }

    fn pt(v: &[usize]) -> Point {
        Point::new(v.to_vec())
    }

    fn scheme(kind: SchemeKind) -> WeightingScheme {
        WeightingScheme::new(kind, 15.0).unwrap()
    }

    #[test]
    fn tuple_sets_per_dimension() {
        let m = NTupleModel::new(&space(&[3; 5]));
        assert_eq!(m.tuple_dims().len(), 16);
        let m = NTupleModel::new(&space(&[3; 2]));
        assert_eq!(m.tuple_dims(), vec![&[0][..], &[1][..], &[0, 1][..]]);
        let m = NTupleModel::new(&space(&[3]));
        assert_eq!(m.tuple_dims(), vec![&[0][..]]);
    }

    #[test]
    fn full_tuple_children_are_all_pairs() {
        let m = NTupleModel::new(&space(&[2; 4]));
        let full = m.tables.last().unwrap();
        assert_eq!(full.dims, vec![0, 1, 2, 3]);
        assert_eq!(full.children.len(), 6);
        let pair = m.tables.iter().find(|t| t.dims == vec![1, 3]).unwrap();
        assert_eq!(pair.children.len(), 2);
    }

    #[test]
    fn add_evaluation_accumulates() {
        let mut m = NTupleModel::new(&space(&[2, 2]));
        m.add_evaluation(&pt(&[0, 0]), 1.0);
        for (_, s) in m.matching_stats(&pt(&[0, 0])) {
            assert_eq!(s, TupleStats { count: 1, sum: 1.0 });
        }
        m.add_evaluation(&pt(&[0, 1]), -1.0);
        let s = m
            .stats(&TupleId {
                dims: vec![0],
                values: vec![0],
            })
            .unwrap();
        assert_eq!(s.count, 2);
        assert_eq!(s.mean(), Some(0.0));
        assert_eq!(m.total_iterations(), 2);
        assert_eq!(m.level_totals(), vec![2, 2, 2]);
    }

    #[test]
    fn vanilla_estimate_hand_values() {
        let mut m = NTupleModel::new(&space(&[2, 2]));
        assert_eq!(m.vanilla_estimate(&pt(&[1, 1])), 0.0);
        m.add_evaluation(&pt(&[0, 0]), 1.0);
        assert_eq!(m.vanilla_estimate(&pt(&[0, 0])), 1.0);
        m.add_evaluation(&pt(&[0, 1]), -1.0);
        // dim0=0 mean 0, dim1=0 mean 1, pair (0,0) mean 1.
        assert!((m.vanilla_estimate(&pt(&[0, 0])) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn weight_values() {
        for kind in &SchemeKind::ALL[1..] {
            assert_eq!(scheme(*kind).weight(0).unwrap(), 0.0);
        }
        assert_eq!(scheme(SchemeKind::Linear).weight(15).unwrap(), 1.0);
        assert_eq!(scheme(SchemeKind::Linear).weight(30).unwrap(), 1.0);
        assert!((scheme(SchemeKind::Inverse).weight(15).unwrap() - 0.5).abs() < 1e-15);
        assert!((scheme(SchemeKind::InverseRoot).weight(15).unwrap() - 0.292_893_218_813_452_5).abs() < 1e-12);
        assert!((scheme(SchemeKind::Exponential).weight(15).unwrap() - 0.632_120_558_828_557_7).abs() < 1e-12);
        assert_eq!(
            WeightingScheme::vanilla().weight(3),
            Err(ModelError::VanillaWeight)
        );
        assert!(WeightingScheme::new(SchemeKind::Linear, 0.0).is_err());
    }

    #[test]
    fn weighted_estimate_saturated_full_tuple() {
        let mut m = NTupleModel::new(&space(&[2, 2]));
        for _ in 0..15 {
            m.add_evaluation(&pt(&[0, 0]), 1.0);
        }
        assert_eq!(m.weighted_estimate(&pt(&[0, 0]), &scheme(SchemeKind::Linear)), 1.0);
    }

    #[test]
    fn weighted_estimate_small_decay_tracks_full_tuple() {
        let mut m = NTupleModel::new(&space(&[3, 3, 3]));
        m.add_evaluation(&pt(&[0, 0, 0]), 1.0);
        m.add_evaluation(&pt(&[0, 0, 1]), -1.0);
        m.add_evaluation(&pt(&[0, 0, 0]), 0.5);
        let tiny = WeightingScheme::new(SchemeKind::Linear, 1e-9).unwrap();
        assert_eq!(m.weighted_estimate(&pt(&[0, 0, 0]), &tiny), 0.75);
    }

    #[test]
    fn weighted_estimate_hand_recursion() {
        // d=2, single evaluation ((0,0), 1) under Inverse with T=15: w(1) = 1/16.
        let mut m = NTupleModel::new(&space(&[2, 2]));
        m.add_evaluation(&pt(&[0, 0]), 1.0);
        let w = 1.0 / 16.0;
        let base = 1.0; // global mean
        let single = w * 1.0 + (1.0 - w) * base;
        let pair = w * 1.0 + (1.0 - w) * single;
        let got = m.weighted_estimate(&pt(&[0, 0]), &scheme(SchemeKind::Inverse));
        assert!((got - pair).abs() < 1e-15);
        // Unvisited pattern passes straight through to the global mean.
        let got = m.weighted_estimate(&pt(&[1, 1]), &scheme(SchemeKind::Inverse));
        assert_eq!(got, 1.0);
    }

    #[test]
    fn empty_model_estimates_zero() {
        let m = NTupleModel::new(&space(&[3, 3]));
        for kind in SchemeKind::ALL {
            assert_eq!(m.estimate(&pt(&[1, 2]), &scheme(kind)), 0.0);
        }
        assert_eq!(
            m.exploration_bonus(&pt(&[0, 0]), 1.0, 0.5),
            Err(ModelError::NoEvaluations)
        );
    }

    #[test]
    fn exploration_bonus_hand_values() {
        let mut m = NTupleModel::new(&space(&[2, 2]));
        m.add_evaluation(&pt(&[0, 0]), 1.0);
        assert_eq!(m.exploration_bonus(&pt(&[0, 0]), 5.0, 0.5).unwrap(), 0.0);
        m.add_evaluation(&pt(&[0, 1]), -1.0);
        let l2 = 2f64.ln();
        let expected = ((l2 / 2.5).sqrt() + 2.0 * (l2 / 1.5).sqrt()) / 3.0;
        let got = m.exploration_bonus(&pt(&[0, 0]), 1.0, 0.5).unwrap();
        assert!((got - expected).abs() < 1e-15);
        assert_eq!(m.exploration_bonus(&pt(&[0, 0]), 0.0, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn ucb_combines_terms() {
        let mut m = NTupleModel::new(&space(&[2, 2]));
        m.add_evaluation(&pt(&[0, 0]), 1.0);
        m.add_evaluation(&pt(&[0, 1]), -1.0);
        let p = pt(&[0, 0]);
        let v = WeightingScheme::vanilla();
        let lin = scheme(SchemeKind::Linear);
        assert_eq!(m.ucb(&p, 0.0, 0.5, &v).unwrap(), m.vanilla_estimate(&p));
        let du = m.ucb(&p, 1.0, 0.5, &v).unwrap() - m.ucb(&p, 1.0, 0.5, &lin).unwrap();
        let de = m.estimate(&p, &v) - m.estimate(&p, &lin);
        assert!((du - de).abs() < 1e-15);
        let bonus = m.exploration_bonus(&p, 1.0, 0.5).unwrap();
        assert_eq!(m.ucb(&p, 1.0, 0.5, &v).unwrap(), 2.0 / 3.0 + bonus);
    }

    #[test]
    fn dump_format() {
        let mut m = NTupleModel::new(&space(&[2, 3]));
        m.add_evaluation(&pt(&[1, 2]), 0.5);
        let dump = m.dump();
        let lines: Vec<&str> = dump.lines().collect();
        assert_eq!(
            lines,
            vec![
                "dims= vals= n=1 sum=0.5",
                "dims=0 vals=1 n=1 sum=0.5",
                "dims=1 vals=2 n=1 sum=0.5",
                "dims=0,1 vals=1,2 n=1 sum=0.5",
            ]
        );
    }

    #[test]
    fn scheme_names_parse() {
        for kind in SchemeKind::ALL {
            assert_eq!(kind.short_name().parse::<SchemeKind>().unwrap(), kind);
        }
        assert!("bogus".parse::<SchemeKind>().is_err());
    }
}
