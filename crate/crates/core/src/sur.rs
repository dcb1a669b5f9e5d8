//! Stepwise uncertainty reduction, single-level and cost-normalized.
//!
//! For a candidate observation at `c = (x, t)`, the expected uncertainty after
//! observing it is
//!
//! ```text
//! J_n(c) = ∫ Φ₂(u_n(y), u_n(y); r_n(y, y)) − Φ₂(u_n(y), u_n(y); ρ_c(y)) μ(dy)
//! ρ_c(y) = k_n((y, t_hf), c)² / (V_n(y, t_hf) V_n(c))
//! ```
//!
//! so the expected reduction `H_n − J_n(c) = ∫ Φ₂(u, u; ρ_c) − Φ(u)² dμ` is a
//! sum of nonnegative terms, evaluated here directly without subtracting from
//! `H_n`. Single-level SUR picks the candidate with the largest reduction on a
//! fixed level; MSUR picks the best candidate per level and then the level
//! with the largest reduction per unit cost.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exceedance::{compensated_sum, ExceedanceField, NodeSummary, QuadratureMeasure};
use crate::gp::{JointPoint, INPUT_DIM};
use crate::grid::InputBox;
use crate::stats::{binorm_excess_diag, Correlation};

/// Per-observation cost `C(t) = a / t + b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub a: f64,
    pub b: f64,
}

impl CostModel {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && a.is_finite()) || !(b >= 0.0 && b.is_finite()) {
            return Err(Error::Precondition(format!("cost coefficients need a > 0, b ≥ 0 (got a={a}, b={b})")));
        }
        Ok(Self { a, b })
    }

    /// `a = 0.0098`, `b = 0.02`, so that `C(0.01) = 1`.
    pub fn benchmark() -> Self {
        Self { a: 0.0098, b: 0.02 }
    }

    pub fn cost(&self, t: f64) -> f64 {
        self.a / t + self.b
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { a: self.a * factor, b: self.b * factor }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateLevel {
    pub level: f64,
    pub points: Vec<[f64; INPUT_DIM]>,
}

/// Candidate inputs for each fidelity level under consideration.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    levels: Vec<CandidateLevel>,
}

impl CandidateSet {
    pub fn new(levels: Vec<CandidateLevel>, domain: &InputBox) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::Precondition("candidate set has no levels".into()));
        }
        for l in &levels {
            if !(l.level > 0.0) {
                return Err(Error::Precondition(format!("fidelity level {} must be positive", l.level)));
            }
            if l.points.is_empty() {
                return Err(Error::Precondition(format!("no candidates on level {}", l.level)));
            }
            if let Some(x) = l.points.iter().find(|x| !domain.contains(x)) {
                return Err(Error::Precondition(format!("candidate {x:?} lies outside the input domain")));
            }
        }
        Ok(Self { levels })
    }

    pub fn levels(&self) -> &[CandidateLevel] {
        &self.levels
    }

    pub fn level(&self, index: usize) -> Option<&CandidateLevel> {
        self.levels.get(index)
    }
}

/// One evaluated candidate, kept for the audit trail.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub level: f64,
    pub index: usize,
    pub omega0: f64,
    pub zeta: f64,
    /// `J_n`
    pub criterion: f64,
    /// `H_n − J_n`
    pub gain: f64,
    pub cost: f64,
    /// `gain / cost`
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub point: JointPoint,
    pub level_index: usize,
    pub candidate_index: usize,
    /// `H_n` at selection time
    pub uncertainty: f64,
    pub criterion: f64,
    pub gain: f64,
    pub cost: f64,
    pub gain_per_cost: f64,
    /// Set when no candidate offered a meaningful reduction and the
    /// cheapest level's best candidate was taken instead.
    pub saturated: bool,
    pub scores: Vec<CandidateScore>,
}

/// Gains below this fraction of `H_n` count as no information.
pub const SATURATION_RATIO: f64 = 1e-14;

/// Node-side state of the criterion, computed once per posterior and shared
/// by every candidate.
pub struct SurContext<'a> {
    field: ExceedanceField<'a>,
    measure: &'a QuadratureMeasure,
    summary: NodeSummary,
}

impl<'a> SurContext<'a> {
    pub fn new(field: ExceedanceField<'a>, measure: &'a QuadratureMeasure) -> Result<Self> {
        let summary = field.summarize(measure)?;
        Ok(Self { field, measure, summary })
    }

    pub fn field(&self) -> &ExceedanceField<'a> {
        &self.field
    }

    pub fn summary(&self) -> &NodeSummary {
        &self.summary
    }

    /// `H_n`.
    pub fn uncertainty(&self) -> f64 {
        self.summary.uncertainty
    }

    /// Expected reductions `H_n − J_n(c)` for a batch of candidates.
    pub fn gains(&self, candidates: &[JointPoint]) -> Result<Vec<f64>> {
        for c in candidates {
            if !(c.t > 0.0) || c.x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Precondition(format!("candidate {c:?} is outside the domain")));
            }
        }
        if candidates.is_empty() {
            return Ok(Vec::new());
        }
        let gp = self.field.gp;
        let solve = gp.cross_solve(candidates);
        let cross = gp.cov_block(&self.summary.solve, &solve);
        let s = &self.summary;
        let weights = self.measure.weights();
        let mut out = Vec::with_capacity(candidates.len());
        for (i, c) in candidates.iter().enumerate() {
            let vc = self.field.noise.variance(&c.x, c.t) + gp.var_from(&solve, i);
            if !(vc > 0.0) {
                return Err(Error::Invariant(format!("V_n = {vc} is not positive at candidate {c:?}")));
            }
            let col = cross.column(i);
            let terms = (0..s.u.len()).map(|j| {
                if s.prob_var[j] == 0.0 {
                    return 0.0;
                }
                let k = col[j];
                // Cauchy–Schwarz bounds ρ_c(y) by r_n(y, y); clamp round-off
                let rho = (k * k / (s.total_var[j] * vc)).min(s.r[j]);
                weights[j] * binorm_excess_diag(s.u[j], Correlation::new(rho).unwrap_or(Correlation::ONE))
            });
            out.push(compensated_sum(terms).max(0.0));
        }
        Ok(out)
    }

    /// `J_n(c)` for a single candidate.
    pub fn criterion_j(&self, candidate: &JointPoint) -> Result<f64> {
        let gain = self.gains(std::slice::from_ref(candidate))?[0];
        Ok((self.uncertainty() - gain).max(0.0))
    }

    fn score_level(&self, candidates: &CandidateSet, level_index: usize, cost: f64) -> Result<Vec<CandidateScore>> {
        let level = candidates
            .level(level_index)
            .ok_or_else(|| Error::Precondition(format!("no candidate level with index {level_index}")))?;
        let points: Vec<JointPoint> = level.points.iter().map(|x| JointPoint::new(*x, level.level)).collect();
        let gains = self.gains(&points)?;
        let h = self.uncertainty();
        Ok(gains
            .into_iter()
            .zip(&level.points)
            .enumerate()
            .map(|(index, (gain, x))| CandidateScore {
                level: level.level,
                index,
                omega0: x[0],
                zeta: x[1],
                criterion: (h - gain).max(0.0),
                gain,
                cost,
                score: gain / cost,
            })
            .collect())
    }
}

/// First index of the largest gain (so ties go to the lowest index).
fn best_index(scores: &[CandidateScore]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        if s.gain > scores[best].gain {
            best = i;
        }
    }
    best
}

fn result_from(ctx: &SurContext<'_>, candidates: &CandidateSet, level_index: usize, pick: &CandidateScore, saturated: bool, scores: Vec<CandidateScore>) -> SelectionResult {
    let x = candidates.levels()[level_index].points[pick.index];
    SelectionResult {
        point: JointPoint::new(x, pick.level),
        level_index,
        candidate_index: pick.index,
        uncertainty: ctx.uncertainty(),
        criterion: pick.criterion,
        gain: pick.gain,
        cost: pick.cost,
        gain_per_cost: pick.score,
        saturated,
        scores,
    }
}

/// Single-level SUR: the candidate of level `level_index` minimizing `J_n`.
pub fn select_sur(ctx: &SurContext<'_>, candidates: &CandidateSet, level_index: usize, cost: &CostModel) -> Result<SelectionResult> {
    let t = candidates
        .level(level_index)
        .ok_or_else(|| Error::Precondition(format!("no candidate level with index {level_index}")))?
        .level;
    let scores = ctx.score_level(candidates, level_index, cost.cost(t))?;
    let best = scores[best_index(&scores)];
    let saturated = best.gain <= SATURATION_RATIO * ctx.uncertainty();
    Ok(result_from(ctx, candidates, level_index, &best, saturated, scores))
}

/// MSUR: the best candidate of each level by `J_n`, then the level with the
/// largest `(H_n − J_n) / C(t)`. Ties go to the lowest candidate index and
/// then to the cheapest level. When no level offers a gain above
/// `SATURATION_RATIO · H_n` the cheapest level's best candidate is returned
/// with `saturated` set.
pub fn select_msur(ctx: &SurContext<'_>, candidates: &CandidateSet, cost: &CostModel) -> Result<SelectionResult> {
    let mut all = Vec::new();
    let mut winners = Vec::with_capacity(candidates.levels().len());
    for (li, level) in candidates.levels().iter().enumerate() {
        let scores = ctx.score_level(candidates, li, cost.cost(level.level))?;
        winners.push((li, scores[best_index(&scores)]));
        all.extend(scores);
    }
    let cheaper = |a: &(usize, CandidateScore), b: &(usize, CandidateScore)| a.1.cost < b.1.cost;
    let mut pick = winners[0];
    for w in &winners[1..] {
        if w.1.score > pick.1.score || (w.1.score == pick.1.score && cheaper(w, &pick)) {
            pick = *w;
        }
    }
    let threshold = SATURATION_RATIO * ctx.uncertainty();
    let saturated = winners.iter().all(|w| w.1.gain <= threshold);
    if saturated {
        pick = winners[0];
        for w in &winners[1..] {
            if cheaper(w, &pick) {
                pick = *w;
            }
        }
        log::warn!("MSUR saturated: no candidate reduces H_n = {:e}; taking the cheapest level", ctx.uncertainty());
    }
    Ok(result_from(ctx, candidates, pick.0, &pick.1, saturated, all))
}

/// `J_n(candidate)` computed from scratch for one candidate.
pub fn criterion_j(field: ExceedanceField<'_>, candidate: &JointPoint, measure: &QuadratureMeasure) -> Result<f64> {
    SurContext::new(field, measure)?.criterion_j(candidate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exceedance::ThresholdSpec;
    use crate::gp::{FidelityTransform, KernelSpec, ObservationSet, PosteriorGP};
    use crate::noise::ConstantNoise;

    fn kernel() -> KernelSpec {
        KernelSpec::separable(1.0, [4.0, 0.25], 2.0, FidelityTransform::Log)
    }

    fn posterior(lambda: f64) -> PosteriorGP {
        let obs = [([5.0, 0.2], 0.2, -2.0), ([15.0, 0.5], 0.1, -3.5), ([25.0, 0.8], 0.5, -4.0), ([10.0, 0.9], 0.01, -2.8)];
        let mut d = ObservationSet::new();
        for (x, t, z) in obs {
            d.push(JointPoint::new(x, t), z, lambda).unwrap();
        }
        PosteriorGP::fit(kernel(), d).unwrap()
    }

    #[test]
    fn benchmark_costs() {
        let c = CostModel::benchmark();
        assert!((c.cost(1.0) - 0.0298).abs() < 1e-12);
        assert!((c.cost(0.01) - 1.0).abs() < 1e-9);
        assert!(CostModel::new(0.0, 1.0).is_err());
        assert!(CostModel::new(1.0, -1.0).is_err());
    }

    #[test]
    fn uninformative_candidate_leaves_h_unchanged() {
        let gp = posterior(0.05);
        let noise = ConstantNoise::uniform(0.05);
        let field = ExceedanceField::new(&gp, &noise, ThresholdSpec::benchmark());
        let measure = QuadratureMeasure::new(vec![[12.0, 0.4], [13.0, 0.45]], vec![0.5, 0.5]).unwrap();
        let ctx = SurContext::new(field, &measure).unwrap();
        // far outside the kernel's reach in x: zero cross covariance except
        // through the mean term, which vanishes for the far point as well
        let far = JointPoint::new([1e5, 0.4], 0.01);
        let j = ctx.criterion_j(&far).unwrap();
        let h = ctx.uncertainty();
        assert!(h > 0.0);
        // only the constant-mean coupling remains
        assert!(j <= h && j >= 0.9 * h, "J = {j}, H = {h}");
    }

    #[test]
    fn noiseless_observation_at_single_node_resolves_it() {
        let gp = posterior(0.0);
        let noise = ConstantNoise::uniform(0.0);
        let field = ExceedanceField::new(&gp, &noise, ThresholdSpec::benchmark());
        let y = [18.0, 0.3];
        let measure = QuadratureMeasure::dirac(y);
        let ctx = SurContext::new(field, &measure).unwrap();
        assert!(ctx.uncertainty() > 1e-3);
        let j = ctx.criterion_j(&JointPoint::new(y, 0.01)).unwrap();
        assert!(j.abs() < 1e-10, "J = {j}");
    }

    #[test]
    fn selection_tie_and_duplicate_rules() {
        let mut d = ObservationSet::new();
        d.push(JointPoint::new([10.0, 0.5], 0.01), -3.0, 0.0).unwrap();
        d.push(JointPoint::new([20.0, 0.2], 0.01), -2.0, 0.0).unwrap();
        let gp = PosteriorGP::fit(kernel(), d).unwrap();
        let noise = ConstantNoise::uniform(0.0);
        let field = ExceedanceField::new(&gp, &noise, ThresholdSpec::benchmark());
        let grid = crate::grid::RegularGrid::new(InputBox::oscillator(), [10, 10], crate::grid::NodePlacement::Midpoint).unwrap();
        let measure = QuadratureMeasure::uniform(&grid);
        let ctx = SurContext::new(field, &measure).unwrap();
        let cost = CostModel::benchmark();
        let dom = InputBox::oscillator();

        // a duplicate of a noiseless observation carries no information
        let cands = CandidateSet::new(vec![CandidateLevel { level: 0.01, points: vec![[10.0, 0.5], [14.0, 0.7]] }], &dom).unwrap();
        let r = select_sur(&ctx, &cands, 0, &cost).unwrap();
        assert_eq!(r.candidate_index, 1);
        assert!(r.scores[0].gain < 1e-8);

        // one candidate: that candidate
        let single = CandidateSet::new(vec![CandidateLevel { level: 0.01, points: vec![[3.0, 0.1]] }], &dom).unwrap();
        assert_eq!(select_sur(&ctx, &single, 0, &cost).unwrap().candidate_index, 0);

        // identical candidates tie: lowest index wins
        let twins = CandidateSet::new(vec![CandidateLevel { level: 0.01, points: vec![[3.0, 0.1], [3.0, 0.1]] }], &dom).unwrap();
        assert_eq!(select_sur(&ctx, &twins, 0, &cost).unwrap().candidate_index, 0);
    }

    #[test]
    fn candidate_set_validation() {
        let dom = InputBox::oscillator();
        assert!(CandidateSet::new(vec![], &dom).is_err());
        assert!(CandidateSet::new(vec![CandidateLevel { level: 0.1, points: vec![] }], &dom).is_err());
        assert!(CandidateSet::new(vec![CandidateLevel { level: 0.1, points: vec![[40.0, 0.5]] }], &dom).is_err());
        assert!(CandidateSet::new(vec![CandidateLevel { level: 0.0, points: vec![[4.0, 0.5]] }], &dom).is_err());
    }

    #[test]
    fn saturated_model_takes_cheapest_level() {
        // every node resolved: no gain anywhere
        let mut d = ObservationSet::new();
        d.push(JointPoint::new([10.0, 0.5], 0.01), 5.0, 0.0).unwrap();
        let gp = PosteriorGP::fit(kernel(), d).unwrap();
        let noise = ConstantNoise::uniform(0.0);
        let field = ExceedanceField::new(&gp, &noise, ThresholdSpec::benchmark());
        let measure = QuadratureMeasure::dirac([10.0, 0.5]);
        let ctx = SurContext::new(field, &measure).unwrap();
        let dom = InputBox::oscillator();
        let cands = CandidateSet::new(
            vec![
                CandidateLevel { level: 0.01, points: vec![[1.0, 0.5]] },
                CandidateLevel { level: 1.0, points: vec![[2.0, 0.5]] },
            ],
            &dom,
        )
        .unwrap();
        let r = select_msur(&ctx, &cands, &CostModel::benchmark()).unwrap();
        assert!(r.saturated);
        assert_eq!(r.level_index, 1);
    }
}
