//! Empirical decision theory: choice sets over observed act/consequence
//! protocols, resampling tests for choice-set membership, and robustness of
//! those decisions under contamination of the sampling model.

pub mod choice;
pub mod classes;
mod closure;
pub mod error;
pub mod harness;
pub mod inference;
pub mod protocol;
pub mod rng;
pub mod statistics;

pub use classes::{
    build_dominance_dag, dominates, enumerate_upper_sets, Bounds, DominanceDag, FunctionClassSpec,
    GridSpec, TableEntry, Utility,
};
pub use error::{Error, Result};
pub use protocol::{
    load_protocol, ActionId, ColumnSchema, Consequence, ConsequenceSpace, Direction,
    EmpiricalSample, Protocol, SubProtocol,
};
pub use statistics::{
    criterion_pair, evaluate_witness, robust_t_inf, robust_t_sup, t_statistic,
    ContaminationSpec, CriterionPair, PairContamination, StatValue, Witness,
};
