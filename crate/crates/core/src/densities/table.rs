use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when validating that caller-supplied masses sum to one.
const INPUT_NORMALIZATION_TOL: f64 = 1e-9;

/// A normalized probability table over a finite, possibly multi-dimensional,
/// state space stored in row-major order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityTable {
    shape: Vec<usize>,
    mass: Vec<f64>,
}

impl DensityTable {
    /// Builds a table from masses that already sum to one.
    pub fn new(shape: Vec<usize>, mass: Vec<f64>) -> Result<Self> {
        validate_entries(&shape, &mass)?;
        let total: f64 = mass.iter().sum();
        if (total - 1.0).abs() > INPUT_NORMALIZATION_TOL {
            return Err(Error::InvalidTable(format!("masses sum to {total}, expected 1")));
        }
        Ok(Self { shape, mass })
    }

    /// Builds a table by normalizing nonnegative weights.
    pub fn from_unnormalized(shape: Vec<usize>, weights: Vec<f64>) -> Result<Self> {
        validate_entries(&shape, &weights)?;
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::DisjointSupport);
        }
        let mass = weights.into_iter().map(|w| w / total).collect();
        Ok(Self { shape, mass })
    }

    /// Builds a table from log-weights; `-inf` entries get mass exactly zero.
    pub fn from_log_weights(shape: Vec<usize>, log_weights: &[f64]) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != log_weights.len() {
            return Err(Error::InvalidTable(format!(
                "shape {shape:?} needs {expected} entries, got {}",
                log_weights.len()
            )));
        }
        if log_weights.iter().any(|w| w.is_nan() || *w == f64::INFINITY) {
            return Err(Error::NonFiniteDetected("log-weights".into()));
        }
        let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(Error::DisjointSupport);
        }
        let weights: Vec<f64> = log_weights
            .iter()
            .map(|&l| if l == f64::NEG_INFINITY { 0.0 } else { (l - max).exp() })
            .collect();
        let total: f64 = weights.iter().sum();
        let mass = weights.into_iter().map(|w| w / total).collect();
        Ok(Self { shape, mass })
    }

    pub fn uniform(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Self { shape, mass: vec![1.0 / n as f64; n] }
    }

    pub fn point_mass(shape: Vec<usize>, index: usize) -> Result<Self> {
        let n: usize = shape.iter().product();
        if index >= n {
            return Err(Error::InvalidArgument(format!("index {index} outside table of {n} states")));
        }
        let mut mass = vec![0.0; n];
        mass[index] = 1.0;
        Ok(Self { shape, mass })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }

    pub fn get(&self, index: usize) -> f64 {
        self.mass[index]
    }

    /// `true` exactly at states with positive mass.
    pub fn support_mask(&self) -> Vec<bool> {
        self.mass.iter().map(|&m| m > 0.0).collect()
    }

    pub fn total(&self) -> f64 {
        self.mass.iter().sum()
    }

    pub fn ensure_same_shape(&self, other: &DensityTable) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(())
    }

    /// Sum of absolute differences, in `[0, 2]`.
    pub fn l1_distance(&self, other: &DensityTable) -> Result<f64> {
        self.ensure_same_shape(other)?;
        Ok(self.mass.iter().zip(&other.mass).map(|(a, b)| (a - b).abs()).sum())
    }

    /// Row-major multi-index of a flat state index.
    pub fn unravel(&self, mut index: usize) -> Vec<usize> {
        let mut out = vec![0; self.shape.len()];
        for (slot, &dim) in out.iter_mut().zip(&self.shape).rev() {
            *slot = index % dim;
            index /= dim;
        }
        out
    }

    pub fn max_mass(&self) -> f64 {
        self.mass.iter().copied().fold(0.0, f64::max)
    }
}

fn validate_entries(shape: &[usize], mass: &[f64]) -> Result<()> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::InvalidTable(format!("degenerate shape {shape:?}")));
    }
    let expected: usize = shape.iter().product();
    if expected != mass.len() {
        return Err(Error::InvalidTable(format!(
            "shape {shape:?} needs {expected} entries, got {}",
            mass.len()
        )));
    }
    if let Some(bad) = mass.iter().find(|m| !m.is_finite() || **m < 0.0) {
        return Err(Error::InvalidTable(format!("mass entry {bad} is negative or non-finite")));
    }
    Ok(())
}

/// L1 distance between two tables.
pub fn l1_distance(p: &DensityTable, q: &DensityTable) -> Result<f64> {
    p.l1_distance(q)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_unnormalized_input() {
        assert!(DensityTable::new(vec![2], vec![0.5, 0.6]).is_err());
        assert!(DensityTable::new(vec![2], vec![-0.5, 1.5]).is_err());
        assert!(DensityTable::new(vec![3], vec![0.5, 0.5]).is_err());
    }

    #[test]
    fn log_weights_keep_exact_zeros() {
        let t = DensityTable::from_log_weights(vec![3], &[0.0, f64::NEG_INFINITY, 0.0]).unwrap();
        assert_eq!(t.mass(), &[0.5, 0.0, 0.5]);
        assert_eq!(t.support_mask(), vec![true, false, true]);
    }

    #[test]
    fn l1_examples() {
        let a = DensityTable::new(vec![2], vec![0.8, 0.2]).unwrap();
        let b = DensityTable::new(vec![2], vec![0.6, 0.4]).unwrap();
        assert!((a.l1_distance(&b).unwrap() - 0.4).abs() < 1e-15);
        assert_eq!(a.l1_distance(&a).unwrap(), 0.0);
        let p = DensityTable::point_mass(vec![3], 0).unwrap();
        let q = DensityTable::point_mass(vec![3], 2).unwrap();
        assert_eq!(p.l1_distance(&q).unwrap(), 2.0);
        let c = DensityTable::uniform(vec![4]);
        assert!(matches!(a.l1_distance(&c), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn unravel_is_row_major() {
        let t = DensityTable::uniform(vec![3, 4]);
        assert_eq!(t.unravel(0), vec![0, 0]);
        assert_eq!(t.unravel(5), vec![1, 1]);
        assert_eq!(t.unravel(11), vec![2, 3]);
    }
}
