//! STRIPS PDDL ingestion, grounding and transition semantics.
//!
//! Only `:strips` and `:typing` are accepted. Everything else is a hard
//! error.

mod domain;
mod problem;
pub mod sexpr;
mod state;
mod task;

pub use domain::{
    parse_domain, ActionSchema, DomainDescription, LiftedAtom, PredicateSchema, Term, TypeHierarchy, ROOT_TYPE,
};
pub use problem::{parse_problem, NamedAtom, ProblemDescription};
pub use state::{AtomId, SymbolicState};
pub use task::{ground, GroundAction, GroundAtom, GroundedTask, Object, Successor};

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum PddlError {
    #[error("syntax error at {line}:{col}: {message}")]
    Syntax { line: usize, col: usize, message: String },
    #[error("unsupported requirement {0}")]
    UnsupportedRequirement(String),
    #[error("unsupported PDDL feature: {0}")]
    Unsupported(String),
    #[error("undeclared {kind} '{name}'")]
    Undeclared { kind: &'static str, name: String },
    #[error("predicate '{predicate}' expects {expected} arguments, found {found}")]
    ArityMismatch { predicate: String, expected: usize, found: usize },
    #[error("in {context}: '{name}' has type {found}, expected {expected}")]
    TypeMismatch { context: String, name: String, expected: String, found: String },
    #[error("problem is for domain '{found}', expected '{expected}'")]
    DomainMismatch { expected: String, found: String },
    #[error("action {action} is not applicable")]
    Inapplicable { action: String },
}

/// The four bundled evaluation domains.
pub mod builtin {
    pub const DOMAINS: [&str; 4] = ["blocksworld", "gripper", "logistics", "visitall"];

    pub fn domain_text(name: &str) -> Option<&'static str> {
        Some(match name {
            "blocksworld" => include_str!("../../domains/blocksworld.pddl"),
            "gripper" => include_str!("../../domains/gripper.pddl"),
            "logistics" => include_str!("../../domains/logistics.pddl"),
            "visitall" => include_str!("../../domains/visitall.pddl"),
            _ => return None,
        })
    }
}
