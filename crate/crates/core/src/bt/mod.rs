//! Behavior trees: representation, tick semantics and the region calculus.

pub mod fixtures;
mod parse;
mod predicate;
mod regions;
mod tree;

use thiserror::Error;

pub use parse::{parse_predicate, parse_tree, print_tree};
pub use predicate::{AtomTable, Predicate, PredicateDisplay, Valuation, MAX_ATOMS};
pub use regions::{
    convergence_set, derive_ordering, influence_region, operating_region, validate_partition,
    LeafOrdering, OrderingPattern, PartitionReport, PartitionViolation, RegionMap, Regions,
};
pub use tree::{BehaviorTree, BtNode, NodeId, NodeKind, ReturnStatus};

#[derive(Debug, Error)]
pub enum BtError {
    #[error("composite node {0} has no children")]
    EmptyComposite(NodeId),
    #[error("leaf node {0} has children")]
    LeafWithChildren(NodeId),
    #[error("atom index {0} is not in the atom table")]
    AtomOutOfRange(usize),
    #[error("unknown atom `{0}`")]
    UnknownAtom(String),
    #[error("duplicate atom `{0}`")]
    DuplicateAtom(String),
    #[error("more than {MAX_ATOMS} atoms")]
    TooManyAtoms,
    #[error("duplicate behavior label `{0}`")]
    DuplicateLabel(String),
    #[error("unknown behavior label `{0}`")]
    UnknownLabel(String),
    #[error("unknown node id {0}")]
    UnknownNode(NodeId),
    #[error("rank {rank} out of range 1..={len}")]
    RankOutOfRange { rank: usize, len: usize },
    #[error("invalid ordering: {0}")]
    InvalidOrdering(String),
    #[error("tree does not match the ordering pattern ({0}); supply the ordering explicitly")]
    PatternMismatch(String),
    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
}
