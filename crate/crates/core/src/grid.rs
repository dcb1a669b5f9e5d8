//! Input box and regular grids over it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::INPUT_DIM;
use crate::simulator::{OMEGA_RANGE, ZETA_RANGE};

/// Axis-aligned box `∏ [lower_i, upper_i]` of physical inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputBox {
    pub lower: [f64; INPUT_DIM],
    pub upper: [f64; INPUT_DIM],
}

impl InputBox {
    pub fn new(lower: [f64; INPUT_DIM], upper: [f64; INPUT_DIM]) -> Result<Self> {
        for i in 0..INPUT_DIM {
            if !(lower[i].is_finite() && upper[i].is_finite() && lower[i] <= upper[i]) {
                return Err(Error::Precondition(format!("invalid box bounds {lower:?} .. {upper:?}")));
            }
        }
        Ok(Self { lower, upper })
    }

    /// `[0, 30] rad/s × [0, 1]`, the oscillator's `(ω0, ζ)` domain.
    pub fn oscillator() -> Self {
        Self { lower: [OMEGA_RANGE.0, ZETA_RANGE.0], upper: [OMEGA_RANGE.1, ZETA_RANGE.1] }
    }

    pub fn width(&self, i: usize) -> f64 {
        self.upper[i] - self.lower[i]
    }

    pub fn contains(&self, x: &[f64; INPUT_DIM]) -> bool {
        (0..INPUT_DIM).all(|i| x[i] >= self.lower[i] && x[i] <= self.upper[i])
    }

    /// Map a point of the unit cube into the box.
    pub fn from_unit(&self, u: [f64; INPUT_DIM]) -> [f64; INPUT_DIM] {
        std::array::from_fn(|i| self.lower[i] + u[i] * self.width(i))
    }

    /// Map a point of the box into the unit cube (degenerate axes map to 0).
    pub fn to_unit(&self, x: &[f64; INPUT_DIM]) -> [f64; INPUT_DIM] {
        std::array::from_fn(|i| {
            let w = self.width(i);
            if w > 0.0 {
                (x[i] - self.lower[i]) / w
            } else {
                0.0
            }
        })
    }
}

/// How grid nodes sit inside their cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodePlacement {
    /// Cell midpoints, `lower + (i + ½) w / n`.
    Midpoint,
    /// End points included, `lower + i w / (n − 1)`.
    Inclusive,
}

/// `n_0 × n_1` regular grid. Nodes are ordered with the first axis slowest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularGrid {
    pub bounds: InputBox,
    pub shape: [usize; INPUT_DIM],
    pub placement: NodePlacement,
}

impl RegularGrid {
    pub fn new(bounds: InputBox, shape: [usize; INPUT_DIM], placement: NodePlacement) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::Precondition(format!("grid shape {shape:?} has an empty axis")));
        }
        if placement == NodePlacement::Inclusive && shape.iter().any(|&n| n < 2) {
            return Err(Error::Precondition("an inclusive grid needs two nodes per axis".into()));
        }
        Ok(Self { bounds, shape, placement })
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn axis(&self, i: usize) -> Vec<f64> {
        let n = self.shape[i];
        let (lo, w) = (self.bounds.lower[i], self.bounds.width(i));
        (0..n)
            .map(|k| match self.placement {
                NodePlacement::Midpoint => lo + (k as f64 + 0.5) * w / n as f64,
                NodePlacement::Inclusive => lo + k as f64 * w / (n - 1) as f64,
            })
            .collect()
    }

    pub fn nodes(&self) -> Vec<[f64; INPUT_DIM]> {
        let a0 = self.axis(0);
        let a1 = self.axis(1);
        a0.iter().flat_map(|&u| a1.iter().map(move |&v| [u, v])).collect()
    }
}

/// One per-node Monte-Carlo estimate, as persisted in reference maps and
/// noise tables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub omega0: f64,
    pub zeta: f64,
    pub dt: f64,
    pub estimate: f64,
    pub stderr: f64,
    pub reps: u64,
    pub seed: u64,
}


/// Parse a `NxM` grid size.
pub fn parse_shape(s: &str) -> Result<[usize; INPUT_DIM]> {
    let bad = || Error::Precondition(format!("grid size `{s}` is not of the form NxM"));
    let (a, b) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let a = a.trim().parse().map_err(|_| bad())?;
    let b = b.trim().parse().map_err(|_| bad())?;
    if a == 0 || b == 0 {
        return Err(bad());
    }
    Ok([a, b])
}
