//! Nested multi-level initial designs and candidate sampling.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::INPUT_DIM;
use crate::grid::InputBox;

/// Point sets for the lowest fidelity levels, each a subset of the previous.
#[derive(Debug, Clone, PartialEq)]
pub struct NestedDesign {
    levels: Vec<Vec<[f64; INPUT_DIM]>>,
}

impl NestedDesign {
    pub fn from_levels(levels: Vec<Vec<[f64; INPUT_DIM]>>) -> Result<Self> {
        for w in levels.windows(2) {
            if !w[1].iter().all(|p| w[0].contains(p)) {
                return Err(Error::Precondition("design levels are not nested".into()));
            }
        }
        Ok(Self { levels })
    }

    pub fn levels(&self) -> &[Vec<[f64; INPUT_DIM]>] {
        &self.levels
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.levels.iter().map(Vec::len).collect()
    }

    /// Write `(level, omega0, zeta)` rows, `level` being the fidelity value
    /// `fidelities[i]` of design level `i`.
    pub fn write_csv(&self, path: &Path, fidelities: &[f64]) -> Result<()> {
        if fidelities.len() != self.levels.len() {
            return Err(Error::Precondition(format!(
                "{} fidelity values for {} design levels",
                fidelities.len(),
                self.levels.len()
            )));
        }
        let mut w = csv::Writer::from_path(path)?;
        for (pts, &level) in self.levels.iter().zip(fidelities) {
            for p in pts {
                w.serialize(DesignRow { level, omega0: p[0], zeta: p[1] })?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Inverse of [`write_csv`](Self::write_csv): the fidelity values in
    /// order of first appearance, and the design.
    pub fn read_csv(path: &Path) -> Result<(Vec<f64>, Self)> {
        let mut r = csv::Reader::from_path(path)?;
        let mut fidelities: Vec<f64> = Vec::new();
        let mut levels: Vec<Vec<[f64; INPUT_DIM]>> = Vec::new();
        for row in r.deserialize() {
            let row: DesignRow = row?;
            if fidelities.last() != Some(&row.level) {
                if fidelities.contains(&row.level) {
                    return Err(Error::Schema(format!("design rows of level {} are not contiguous", row.level)));
                }
                fidelities.push(row.level);
                levels.push(Vec::new());
            }
            levels.last_mut().unwrap().push([row.omega0, row.zeta]);
        }
        Ok((fidelities, Self::from_levels(levels)?))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct DesignRow {
    level: f64,
    omega0: f64,
    zeta: f64,
}

/// Latin hypercube sample of `n` points in the unit square, jittered within
/// strata.
pub fn latin_hypercube<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<[f64; INPUT_DIM]> {
    let mut perms: [Vec<usize>; INPUT_DIM] = std::array::from_fn(|_| (0..n).collect());
    for p in perms.iter_mut() {
        p.shuffle(rng);
    }
    (0..n)
        .map(|i| std::array::from_fn(|d| (perms[d][i] as f64 + rng.random::<f64>()) / n as f64))
        .collect()
}

fn dist2(a: &[f64; INPUT_DIM], b: &[f64; INPUT_DIM]) -> f64 {
    (0..INPUT_DIM).map(|i| (a[i] - b[i]).powi(2)).sum()
}

/// Smallest pairwise Euclidean distance (`∞` for fewer than two points).
pub fn maximin_distance(points: &[[f64; INPUT_DIM]]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            best = best.min(dist2(&points[i], &points[j]));
        }
    }
    best.sqrt()
}

/// Greedy farthest-point subset of size `m`, starting from a random member.
/// Returns indices into `points` in selection order.
fn greedy_maximin<R: Rng + ?Sized>(points: &[[f64; INPUT_DIM]], m: usize, rng: &mut R) -> Vec<usize> {
    let mut chosen = vec![rng.random_range(0..points.len())];
    let mut nearest: Vec<f64> = points.iter().map(|p| dist2(p, &points[chosen[0]])).collect();
    while chosen.len() < m {
        let mut next = 0;
        for i in 1..points.len() {
            if nearest[i] > nearest[next] {
                next = i;
            }
        }
        chosen.push(next);
        for (i, p) in points.iter().enumerate() {
            nearest[i] = nearest[i].min(dist2(p, &points[next]));
        }
    }
    chosen
}

/// Nested design with `sizes[0] ≥ sizes[1] ≥ …` points. The largest level is
/// a Latin hypercube; each further level is a greedy maximin subset of the
/// one before it. Distances are measured in unit-cube coordinates.
pub fn generate_nested_design<R: Rng + ?Sized>(sizes: &[usize], bounds: &InputBox, rng: &mut R) -> Result<NestedDesign> {
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(Error::Precondition(format!("design sizes must be positive, got {sizes:?}")));
    }
    if sizes.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::Precondition(format!("design sizes must be nonincreasing, got {sizes:?}")));
    }
    let mut unit = vec![latin_hypercube(sizes[0], rng)];
    for &m in &sizes[1..] {
        let parent = unit.last().unwrap();
        let idx = greedy_maximin(parent, m, rng);
        unit.push(idx.into_iter().map(|i| parent[i]).collect());
    }
    let levels = unit.into_iter().map(|pts| pts.into_iter().map(|u| bounds.from_unit(u)).collect()).collect();
    Ok(NestedDesign { levels })
}

/// `count` independent uniform draws from `domain`.
pub fn sample_candidates<R: Rng + ?Sized>(count: usize, domain: &InputBox, rng: &mut R) -> Result<Vec<[f64; INPUT_DIM]>> {
    if count == 0 {
        return Err(Error::Precondition("candidate count must be at least 1".into()));
    }
    Ok((0..count).map(|_| domain.from_unit(std::array::from_fn(|_| rng.random::<f64>()))).collect())
}
