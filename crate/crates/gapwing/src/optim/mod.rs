//! Structure-exploiting QP and SQP solvers used by the trajectory optimizer
//! and the MPC.

pub mod nlp;
pub mod qp;
pub mod sparse;

pub use nlp::{check_kkt, solve_nlp, CostTerm, EvalError, KktReport, NlpModel, SqpOptions, SqpSolution, SqpStatus};
pub use qp::{solve_qp, Hessian, QpProblem, QpSolution, QpStatus};
pub use sparse::{Banded, SparseMat};
