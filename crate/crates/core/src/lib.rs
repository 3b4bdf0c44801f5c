//! N-Tuple Bandit Evolutionary Algorithm (NTBEA) for noisy, expensive,
//! discrete black-box optimisation.
//!
//! The crate provides the optimiser with plain and weighted tuple models,
//! four noisy benchmark functions with exact grid oracles, an adapter for
//! external evaluator processes, and a harness for repeated experiments.

pub mod benchmarks;
pub mod cli;
pub mod experiments;
pub mod external;
pub mod model;
pub mod optimizer;
pub mod space;
pub mod stats;

pub use benchmarks::{BenchmarkId, BenchmarkInstance, Discretization, OracleReport};
pub use model::{NTupleModel, SchemeKind, TupleId, TupleStats, WeightingScheme};
pub use optimizer::{run, recommend, Evaluator, FnEvaluator, NtbeaRng, NtbeaSettings, RunRecord};
pub use space::{Dimension, ParamValue, Point, SearchSpace, SpaceConfig};
