//! Text formulas for compositions, their exact evaluation, and lowering to
//! sequential guidance stages.

mod ast;
mod eval;
mod parser;
mod plan;

pub use ast::{alpha_of, Expr};
pub use eval::{eval_exact, eval_scaled};
pub use parser::parse;
pub use plan::{lower, ClassifierRequirement, ObservationPlan, Stage, StageInput};
