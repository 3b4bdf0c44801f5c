//! Discrete parameter spaces, points, and the mutation operator.
//!
//! A [`SearchSpace`] is an ordered list of named dimensions, each with at
//! least two opaque value labels. All algorithm logic works on value
//! indices; labels are only used for reporting and for the external
//! evaluator protocol.

use std::collections::HashSet;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default upper bound on the number of points [`SearchSpace::enumerate_points`] will walk.
pub const DEFAULT_ENUMERATION_CAP: u64 = 10_000_000;

#[derive(Debug, Error, PartialEq)]
pub enum SpaceError {
    #[error("malformed space document: {0}")]
    Parse(String),
    #[error("a space needs at least one dimension")]
    NoDimensions,
    #[error("dimension `{0}` has fewer than two values")]
    DegenerateDimension(String),
    #[error("duplicate dimension name `{0}`")]
    DuplicateDimension(String),
    #[error("duplicate value `{value}` in dimension `{dimension}`")]
    DuplicateValue { dimension: String, value: String },
    #[error("total point count overflows a 64-bit integer")]
    Overflow,
    #[error("space has {count} points, above the enumeration cap of {cap}")]
    CapExceeded { count: u64, cap: u64 },
    #[error("point {point} does not belong to a space with cardinalities {cardinalities:?}")]
    InvalidPoint {
        point: Point,
        cardinalities: Vec<usize>,
    },
    #[error("unknown value `{value}` for dimension `{dimension}`")]
    UnknownLabel { dimension: String, value: String },
}

/// A scalar value label as written in a space document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Bool(bool),
    Int(i64),
    Float(f64),
    Text(String),
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Bool(b) => write!(f, "{b}"),
            ParamValue::Int(i) => write!(f, "{i}"),
            ParamValue::Float(x) => write!(f, "{x:?}"),
            ParamValue::Text(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dimension {
    pub name: String,
    pub values: Vec<ParamValue>,
}

impl Dimension {
    pub fn new(name: impl Into<String>, values: Vec<ParamValue>) -> Self {
        Self {
            name: name.into(),
            values,
        }
    }

    /// A dimension whose labels are the integers `0..cardinality`.
    pub fn indexed(name: impl Into<String>, cardinality: usize) -> Self {
        let values = (0..cardinality as i64).map(ParamValue::Int).collect();
        Self::new(name, values)
    }

    pub fn cardinality(&self) -> usize {
        self.values.len()
    }

    pub fn label(&self, index: usize) -> String {
        self.values[index].to_string()
    }
}

/// File representation of a space: `{"dimensions": [{"name": .., "values": [..]}, ..]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceConfig {
    pub dimensions: Vec<Dimension>,
}

/// Document syntax accepted by [`SearchSpace::from_config`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfigFormat {
    Json,
    Toml,
}

impl ConfigFormat {
    /// Picks TOML for `.toml` paths and JSON otherwise.
    pub fn from_path(path: &std::path::Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => ConfigFormat::Toml,
            _ => ConfigFormat::Json,
        }
    }
}

/// One parameter setting, stored as a value index per dimension.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Point(Vec<usize>);

impl Point {
    pub fn new(indices: Vec<usize>) -> Self {
        Point(indices)
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl From<Vec<usize>> for Point {
    fn from(v: Vec<usize>) -> Self {
        Point(v)
    }
}

impl std::ops::Index<usize> for Point {
    type Output = usize;

    fn index(&self, i: usize) -> &usize {
        &self.0[i]
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("(")?;
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{v}")?;
        }
        f.write_str(")")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpace {
    dims: Vec<Dimension>,
    cardinalities: Vec<usize>,
    point_count: u64,
}

impl SearchSpace {
    /// Validates and builds a space. Dimension order is preserved.
    pub fn new(dims: Vec<Dimension>) -> Result<Self, SpaceError> {
        if dims.is_empty() {
            return Err(SpaceError::NoDimensions);
        }
        let mut point_count: u64 = 1;
        for (i, dim) in dims.iter().enumerate() {
            if dims[..i].iter().any(|other| other.name == dim.name) {
                return Err(SpaceError::DuplicateDimension(dim.name.clone()));
            }
            if dim.cardinality() < 2 {
                return Err(SpaceError::DegenerateDimension(dim.name.clone()));
            }
            let mut seen = HashSet::with_capacity(dim.cardinality());
            for label in dim.values.iter().map(ToString::to_string) {
                if !seen.insert(label.clone()) {
                    return Err(SpaceError::DuplicateValue {
                        dimension: dim.name.clone(),
                        value: label,
                    });
                }
            }
            point_count = point_count
                .checked_mul(dim.cardinality() as u64)
                .ok_or(SpaceError::Overflow)?;
        }
        let cardinalities = dims.iter().map(Dimension::cardinality).collect();
        Ok(Self {
            dims,
            cardinalities,
            point_count,
        })
    }

    /// A space with integer labels and the given cardinalities; dimensions are named `x0`, `x1`, ...
    pub fn with_cardinalities(cards: &[usize]) -> Result<Self, SpaceError> {
        let dims = cards
            .iter()
            .enumerate()
            .map(|(i, &c)| Dimension::indexed(format!("x{i}"), c))
            .collect();
        Self::new(dims)
    }

    pub fn from_config(doc: &str, format: ConfigFormat) -> Result<Self, SpaceError> {
        let config: SpaceConfig = match format {
            ConfigFormat::Json => {
                serde_json::from_str(doc).map_err(|e| SpaceError::Parse(e.to_string()))?
            }
            ConfigFormat::Toml => toml::from_str(doc).map_err(|e| SpaceError::Parse(e.to_string()))?,
        };
        Self::new(config.dimensions)
    }

    pub fn to_config(&self) -> SpaceConfig {
        SpaceConfig {
            dimensions: self.dims.clone(),
        }
    }

    /// Canonical single-line JSON form, used on the wire.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&self.to_config()).expect("space config serializes")
    }

    pub fn dims(&self) -> &[Dimension] {
        &self.dims
    }

    pub fn num_dims(&self) -> usize {
        self.dims.len()
    }

    pub fn cardinalities(&self) -> &[usize] {
        &self.cardinalities
    }

    pub fn point_count(&self) -> u64 {
        self.point_count
    }

    pub fn contains(&self, p: &Point) -> bool {
        p.len() == self.num_dims() && p.0.iter().zip(&self.cardinalities).all(|(&v, &c)| v < c)
    }

    pub fn check(&self, p: &Point) -> Result<(), SpaceError> {
        if self.contains(p) {
            Ok(())
        } else {
            Err(SpaceError::InvalidPoint {
                point: p.clone(),
                cardinalities: self.cardinalities.clone(),
            })
        }
    }

    pub fn labels(&self, p: &Point) -> Vec<String> {
        self.dims
            .iter()
            .zip(&p.0)
            .map(|(dim, &v)| dim.label(v))
            .collect()
    }

    /// Inverse of [`labels`](Self::labels).
    pub fn point_from_labels<S: AsRef<str>>(&self, labels: &[S]) -> Result<Point, SpaceError> {
        if labels.len() != self.num_dims() {
            return Err(SpaceError::Parse(format!(
                "expected {} labels, got {}",
                self.num_dims(),
                labels.len()
            )));
        }
        let mut indices = Vec::with_capacity(labels.len());
        for (dim, label) in self.dims.iter().zip(labels) {
            let label = label.as_ref();
            let idx = (0..dim.cardinality())
                .find(|&i| dim.label(i) == label)
                .ok_or_else(|| SpaceError::UnknownLabel {
                    dimension: dim.name.clone(),
                    value: label.to_string(),
                })?;
            indices.push(idx);
        }
        Ok(Point(indices))
    }

    pub fn random_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        Point(
            self.cardinalities
                .iter()
                .map(|&c| rng.random_range(0..c))
                .collect(),
        )
    }

    /// Resamples each gene uniformly with probability 1/d, then forces one
    /// uniformly chosen gene to a value different from its value in `p`.
    pub fn mutate<R: Rng + ?Sized>(&self, p: &Point, rng: &mut R) -> Point {
        let d = self.num_dims();
        let rate = 1.0 / d as f64;
        let mut out = p.0.clone();
        for (gene, &card) in out.iter_mut().zip(&self.cardinalities) {
            if rng.random::<f64>() < rate {
                *gene = rng.random_range(0..card);
            }
        }
        let forced = rng.random_range(0..d);
        let current = p.0[forced];
        let draw = rng.random_range(0..self.cardinalities[forced] - 1);
        out[forced] = if draw >= current { draw + 1 } else { draw };
        Point(out)
    }

    pub fn neighbourhood<R: Rng + ?Sized>(&self, p: &Point, size: usize, rng: &mut R) -> Vec<Point> {
        (0..size).map(|_| self.mutate(p, rng)).collect()
    }

    /// Every point in lexicographic order (leftmost dimension slowest).
    pub fn enumerate_points(&self, cap: u64) -> Result<PointIter<'_>, SpaceError> {
        if self.point_count > cap {
            return Err(SpaceError::CapExceeded {
                count: self.point_count,
                cap,
            });
        }
        Ok(PointIter {
            cards: &self.cardinalities,
            next: Some(vec![0; self.num_dims()]),
        })
    }

    /// Mixed-radix rank of `p` in enumeration order.
    pub fn rank(&self, p: &Point) -> u64 {
        p.0.iter()
            .zip(&self.cardinalities)
            .fold(0u64, |acc, (&v, &c)| acc * c as u64 + v as u64)
    }
}

pub struct PointIter<'a> {
    cards: &'a [usize],
    next: Option<Vec<usize>>,
}

impl Iterator for PointIter<'_> {
    type Item = Point;

    fn next(&mut self) -> Option<Point> {
        let current = self.next.take()?;
        let mut succ = current.clone();
        for i in (0..succ.len()).rev() {
            succ[i] += 1;
            if succ[i] < self.cards[i] {
                self.next = Some(succ);
                break;
            }
            succ[i] = 0;
        }
        Some(Point(current))
    }
}
