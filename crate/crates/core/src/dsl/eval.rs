use std::collections::HashMap;

use super::ast::{alpha_of, Expr};
use crate::densities::{
    scaled_contrast, scaled_harmonic_mean, scaled_posterior, DensityTable, ScaledTable,
};
use crate::error::{Error, Result};

/// Evaluates `expr` exactly over bound tables and returns the normalized
/// result. Errors are tagged with the path of the failing node.
pub fn eval_exact(expr: &Expr, bindings: &HashMap<String, DensityTable>) -> Result<DensityTable> {
    Ok(eval_scaled(expr, bindings)?.table)
}

/// Like [`eval_exact`] but keeps the mass of the unnormalized composite.
pub fn eval_scaled(expr: &Expr, bindings: &HashMap<String, DensityTable>) -> Result<ScaledTable> {
    eval_at(expr, bindings, "$")
}

fn lookup(bindings: &HashMap<String, DensityTable>, name: &str) -> Result<ScaledTable> {
    bindings
        .get(name)
        .cloned()
        .map(ScaledTable::unit)
        .ok_or_else(|| Error::UnknownIdentifier(name.to_string()))
}

fn eval_at(expr: &Expr, bindings: &HashMap<String, DensityTable>, path: &str) -> Result<ScaledTable> {
    let result = match expr {
        Expr::Base(name) => lookup(bindings, name),
        Expr::Post { observations, bases } => bases
            .iter()
            .map(|n| lookup(bindings, n))
            .collect::<Result<Vec<_>>>()
            .and_then(|inputs| scaled_posterior(&inputs, observations)),
        Expr::Hm { left, right, bracket } | Expr::Con { left, right, bracket } => {
            let l = eval_at(left, bindings, &format!("{path}.left"))?;
            let r = eval_at(right, bindings, &format!("{path}.right"))?;
            let alpha = alpha_of(*bracket);
            if matches!(expr, Expr::Hm { .. }) {
                scaled_harmonic_mean(&l, &r, alpha)
            } else {
                scaled_contrast(&l, &r, alpha)
            }
        }
    };
    result.map_err(|e| e.at_path(path))
}
