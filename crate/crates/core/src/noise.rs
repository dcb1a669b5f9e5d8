//! Known observation-noise variance `λ(x, t)`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::gp::INPUT_DIM;
use crate::grid::NodeRecord;

/// Lower bound applied to every tabulated variance.
pub const VARIANCE_FLOOR: f64 = 1e-6;

pub trait NoiseFunction: Send + Sync {
    /// `λ(x, t) ≥ 0`.
    fn variance(&self, x: &[f64; INPUT_DIM], t: f64) -> f64;
}

/// The same variance everywhere on a level.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantNoise {
    levels: Vec<(f64, f64)>,
}

impl ConstantNoise {
    pub fn new(levels: Vec<(f64, f64)>) -> Result<Self> {
        if levels.is_empty() || levels.iter().any(|&(t, v)| !(t > 0.0) || !(v >= 0.0)) {
            return Err(Error::Precondition("constant noise needs positive levels and nonnegative variances".into()));
        }
        Ok(Self { levels })
    }

    pub fn uniform(variance: f64) -> Self {
        Self { levels: vec![(1.0, variance)] }
    }
}

impl NoiseFunction for ConstantNoise {
    fn variance(&self, _x: &[f64; INPUT_DIM], t: f64) -> f64 {
        self.levels[nearest_level(self.levels.iter().map(|l| l.0), t)].1
    }
}

fn nearest_level(levels: impl Iterator<Item = f64>, t: f64) -> usize {
    let lt = t.ln();
    let mut best = (0, f64::INFINITY);
    for (i, l) in levels.enumerate() {
        let d = (l.ln() - lt).abs();
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

/// Per-level tables of `λ` on a tensor grid of inputs, interpolated
/// bilinearly in `x` (clamped to the grid hull). A level `t` not in the table
/// uses the nearest tabulated level in `log t`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseTable {
    levels: Vec<f64>,
    axes: [Vec<f64>; INPUT_DIM],
    /// `values[level][i0 * n1 + i1]`
    values: Vec<Vec<f64>>,
    records: Vec<NodeRecord>,
}

impl NoiseTable {
    /// Assemble a table from records covering a full `axes[0] × axes[1]`
    /// grid on every level.
    pub fn from_records(records: Vec<NodeRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Schema("noise table has no rows".into()));
        }
        let sorted_unique = |mut v: Vec<f64>| {
            v.sort_by(f64::total_cmp);
            v.dedup();
            v
        };
        let mut levels = sorted_unique(records.iter().map(|r| r.dt).collect());
        levels.reverse();
        let a0 = sorted_unique(records.iter().map(|r| r.omega0).collect());
        let a1 = sorted_unique(records.iter().map(|r| r.zeta).collect());
        let n1 = a1.len();
        let mut values = vec![vec![f64::NAN; a0.len() * n1]; levels.len()];
        for r in &records {
            if !(r.estimate >= 0.0) {
                return Err(Error::Schema(format!("negative variance in noise table: {r:?}")));
            }
            let l = levels.iter().position(|&t| t == r.dt).unwrap();
            let i = a0.iter().position(|&v| v == r.omega0).unwrap();
            let j = a1.iter().position(|&v| v == r.zeta).unwrap();
            values[l][i * n1 + j] = r.estimate;
        }
        if values.iter().flatten().any(|v| v.is_nan()) {
            return Err(Error::Schema("noise table does not cover a full grid on every level".into()));
        }
        Ok(Self { levels, axes: [a0, a1], values, records })
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn records(&self) -> &[NodeRecord] {
        &self.records
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let records = r.deserialize().collect::<std::result::Result<Vec<NodeRecord>, _>>()?;
        Self::from_records(records)
    }
}

/// Bracketing cell index and weight of `v` on a sorted axis, clamped.
fn locate(axis: &[f64], v: f64) -> (usize, usize, f64) {
    let n = axis.len();
    if n == 1 || v <= axis[0] {
        return (0, 0, 0.0);
    }
    if v >= axis[n - 1] {
        return (n - 1, n - 1, 0.0);
    }
    let hi = axis.partition_point(|&a| a <= v).min(n - 1);
    let lo = hi - 1;
    (lo, hi, (v - axis[lo]) / (axis[hi] - axis[lo]))
}

impl NoiseFunction for NoiseTable {
    fn variance(&self, x: &[f64; INPUT_DIM], t: f64) -> f64 {
        let table = &self.values[nearest_level(self.levels.iter().copied(), t)];
        let n1 = self.axes[1].len();
        let (i0, i1, w) = locate(&self.axes[0], x[0]);
        let (j0, j1, u) = locate(&self.axes[1], x[1]);
        let at = |i: usize, j: usize| table[i * n1 + j];
        let v = (1.0 - w) * ((1.0 - u) * at(i0, j0) + u * at(i0, j1)) + w * ((1.0 - u) * at(i1, j0) + u * at(i1, j1));
        v.max(0.0)
    }
}

impl<T: NoiseFunction + ?Sized> NoiseFunction for &T {
    fn variance(&self, x: &[f64; INPUT_DIM], t: f64) -> f64 {
        (**self).variance(x, t)
    }
}
