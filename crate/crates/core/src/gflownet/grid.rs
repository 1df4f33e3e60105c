use serde::{Deserialize, Serialize};

use crate::densities::DensityTable;
use crate::error::{Error, Result};

pub const NUM_ACTIONS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    Down = 0,
    Right = 1,
    Stop = 2,
}

impl Action {
    pub const ALL: [Action; NUM_ACTIONS] = [Action::Down, Action::Right, Action::Stop];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// DAG over an `h x h` grid. Non-terminal state `(r, c)` has index
/// `r * h + c`; its terminal copy has index `h^2 + r * h + c`. Moves go down
/// or right; stop jumps to the terminal copy. Index order is topological.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridDag {
    h: usize,
}

impl GridDag {
    pub fn new(h: usize) -> Result<Self> {
        if h == 0 {
            return Err(Error::InvalidArgument("grid height must be positive".into()));
        }
        Ok(Self { h })
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn num_cells(&self) -> usize {
        self.h * self.h
    }

    pub fn num_states(&self) -> usize {
        2 * self.num_cells()
    }

    pub fn initial_state(&self) -> usize {
        0
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        s >= self.num_cells()
    }

    /// `(row, col)` of a state, terminal or not.
    pub fn cell(&self, s: usize) -> (usize, usize) {
        let c = s % self.num_cells();
        (c / self.h, c % self.h)
    }

    pub fn state(&self, row: usize, col: usize, terminal: bool) -> usize {
        row * self.h + col + if terminal { self.num_cells() } else { 0 }
    }

    pub fn terminal_of(&self, s: usize) -> usize {
        s % self.num_cells() + self.num_cells()
    }

    pub fn is_legal(&self, s: usize, a: Action) -> bool {
        if self.is_terminal(s) {
            return false;
        }
        let (r, c) = self.cell(s);
        match a {
            Action::Down => r + 1 < self.h,
            Action::Right => c + 1 < self.h,
            Action::Stop => true,
        }
    }

    pub fn legal_mask(&self, s: usize) -> [bool; NUM_ACTIONS] {
        Action::ALL.map(|a| self.is_legal(s, a))
    }

    pub fn successor(&self, s: usize, a: Action) -> Option<usize> {
        if !self.is_legal(s, a) {
            return None;
        }
        Some(match a {
            Action::Down => s + self.h,
            Action::Right => s + 1,
            Action::Stop => s + self.num_cells(),
        })
    }

    /// Number of parents; the terminal copy's only parent is its cell.
    pub fn num_parents(&self, s: usize) -> usize {
        if self.is_terminal(s) {
            return 1;
        }
        let (r, c) = self.cell(s);
        usize::from(r > 0) + usize::from(c > 0)
    }
}

/// Positive reward per grid cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardField {
    h: usize,
    values: Vec<f64>,
}

/// One Gaussian bump of a grid reward.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub row: f64,
    pub col: f64,
    pub sigma: f64,
}

impl RewardField {
    pub fn new(h: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != h * h {
            return Err(Error::InvalidArgument(format!("{} rewards for a {h}x{h} grid", values.len())));
        }
        if values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidArgument("rewards must be positive and finite".into()));
        }
        Ok(Self { h, values })
    }

    pub fn uniform(h: usize) -> Self {
        Self { h, values: vec![1.0; h * h] }
    }

    /// `floor + sum_b exp(-|x - c_b|^2 / (2 sigma_b^2))`.
    pub fn bumps(h: usize, bumps: &[Bump], floor: f64) -> Result<Self> {
        let values = (0..h * h)
            .map(|i| {
                let (r, c) = ((i / h) as f64, (i % h) as f64);
                floor
                    + bumps
                        .iter()
                        .map(|b| {
                            let d2 = (r - b.row).powi(2) + (c - b.col).powi(2);
                            (-d2 / (2.0 * b.sigma * b.sigma)).exp()
                        })
                        .sum::<f64>()
            })
            .collect();
        Self::new(h, values)
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn log_reward(&self, cell: usize) -> f64 {
        self.values[cell].ln()
    }

    /// `R^beta / Z` as an `h x h` table.
    pub fn target(&self, beta: f64) -> Result<DensityTable> {
        let logs: Vec<f64> = self.values.iter().map(|v| beta * v.ln()).collect();
        DensityTable::from_log_weights(vec![self.h, self.h], &logs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundary_masking() {
        let one = GridDag::new(1).unwrap();
        assert_eq!(one.num_states(), 2);
        assert_eq!(one.legal_mask(0), [false, false, true]);
        let two = GridDag::new(2).unwrap();
        assert_eq!(two.legal_mask(two.state(1, 1, false)), [false, false, true]);
        assert_eq!(two.legal_mask(0), [true, true, true]);
        assert_eq!(two.legal_mask(two.state(0, 1, false)), [true, false, true]);
        assert!(!two.is_legal(two.state(0, 0, true), Action::Stop));
        let big = GridDag::new(32).unwrap();
        assert_eq!(big.num_cells(), 1024);
    }

    #[test]
    fn successors_increase_the_index() {
        let g = GridDag::new(5).unwrap();
        for s in 0..g.num_cells() {
            for a in Action::ALL {
                if let Some(t) = g.successor(s, a) {
                    assert!(t > s);
                }
            }
        }
        assert_eq!(g.num_parents(0), 0);
        assert_eq!(g.num_parents(g.state(2, 3, false)), 2);
        assert_eq!(g.num_parents(g.state(0, 3, false)), 1);
        assert_eq!(g.num_parents(g.state(2, 3, true)), 1);
    }

    #[test]
    fn rewards_must_be_positive() {
        assert!(RewardField::new(2, vec![1.0, 0.0, 1.0, 1.0]).is_err());
        let r = RewardField::bumps(4, &[Bump { row: 1.0, col: 1.0, sigma: 1.0 }], 0.01).unwrap();
        assert!((r.values()[5] - 1.01).abs() < 1e-12);
        let t = RewardField::uniform(3).target(2.5).unwrap();
        assert!(t.mass().iter().all(|m| (m - 1.0 / 9.0).abs() < 1e-15));
    }
}
