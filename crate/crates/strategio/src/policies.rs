//! The intervention-policy family: assignment rules, their polyhedral
//! regions where exact, and the unit best response under an effort budget.
//!
//! A policy maps a submitted pre-period vector to an intervention. Units may
//! spend effort (an l2 ball of radius `delta` around their true pre-period)
//! to move what they submit, and they prefer higher-ranked interventions;
//! [`InterventionPolicy::best_response`] computes where a rational unit ends
//! up.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{pcr_fit, PcrConfig};
use crate::geometry::{
    in_ball, in_type_ball, project_onto_region, shifted_type_region, strict_margin, type_region,
    Halfspace, Region, DEFAULT_PROJECTION_TOL,
};
use crate::panel_model::PanelDataset;
use crate::rewards::{principal_reward, BetaSet, RewardWeights};

/// Ball family backing the min-index membership rule.
#[derive(Debug, Clone, PartialEq)]
pub enum TypeBalls {
    /// Balls of the policy's radius around observed units, grouped by type.
    Finite(Vec<Vec<DVector<f64>>>),
    /// Balls around every point of each polyhedral type region.
    Continuum(BetaSet),
}

/// A committed assignment rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolicyRepr", into = "PolicyRepr")]
pub enum InterventionPolicy {
    /// Two interventions, decision boundary shifted by `delta`.
    ShiftedTwo { beta0: DVector<f64>, beta1: DVector<f64>, delta: f64 },
    /// Every pairwise boundary shifted by `delta`: strict against
    /// lower-indexed interventions, slack against higher-indexed ones.
    ShiftedMulti { betas: BetaSet, delta: f64 },
    /// Smallest intervention whose type ball contains the submission.
    MinIndexMembership { balls: TypeBalls, delta: f64 },
    /// Unshifted reward argmax (not strategyproof).
    Naive { betas: BetaSet },
    /// Per-intervention donor regression on historical panel data, assigning
    /// the argmax of predicted rewards (not strategyproof).
    SyntheticInterventions { data: PanelDataset, omega: RewardWeights, p: usize },
}

/// Where a rational unit with effort budget `delta` ends up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "BestResponseRepr", into = "BestResponseRepr")]
pub struct BestResponseOutcome {
    pub y_modified: DVector<f64>,
    pub achieved_intervention: usize,
    /// `||y_modified - y||`.
    pub effort: f64,
    pub moved: bool,
    /// False when the minimum effort came from a sampling search rather than
    /// an exact projection.
    pub exact: bool,
}

#[derive(Serialize, Deserialize)]
struct BestResponseRepr {
    y_modified: Vec<f64>,
    achieved_intervention: usize,
    effort: f64,
    moved: bool,
    exact: bool,
}

impl From<BestResponseOutcome> for BestResponseRepr {
    fn from(o: BestResponseOutcome) -> Self {
        BestResponseRepr {
            y_modified: o.y_modified.iter().copied().collect(),
            achieved_intervention: o.achieved_intervention,
            effort: o.effort,
            moved: o.moved,
            exact: o.exact,
        }
    }
}

impl From<BestResponseRepr> for BestResponseOutcome {
    fn from(r: BestResponseRepr) -> Self {
        BestResponseOutcome {
            y_modified: DVector::from_vec(r.y_modified),
            achieved_intervention: r.achieved_intervention,
            effort: r.effort,
            moved: r.moved,
            exact: r.exact,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
enum BallsRepr {
    Finite { centers: Vec<Vec<Vec<f64>>> },
    Continuum { betas: BetaSet },
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
enum PolicyRepr {
    ShiftedTwo { beta0: Vec<f64>, beta1: Vec<f64>, delta: f64 },
    ShiftedMulti { betas: BetaSet, delta: f64 },
    MinIndexMembership { balls: BallsRepr, delta: f64 },
    Naive { betas: BetaSet },
    SyntheticInterventions { data: PanelDataset, omega: Vec<f64>, p: usize },
}

impl From<InterventionPolicy> for PolicyRepr {
    fn from(p: InterventionPolicy) -> Self {
        match p {
            InterventionPolicy::ShiftedTwo { beta0, beta1, delta } => PolicyRepr::ShiftedTwo {
                beta0: beta0.iter().copied().collect(),
                beta1: beta1.iter().copied().collect(),
                delta,
            },
            InterventionPolicy::ShiftedMulti { betas, delta } => {
                PolicyRepr::ShiftedMulti { betas, delta }
            }
            InterventionPolicy::MinIndexMembership { balls, delta } => {
                let balls = match balls {
                    TypeBalls::Finite(groups) => BallsRepr::Finite {
                        centers: groups
                            .into_iter()
                            .map(|g| g.into_iter().map(|c| c.iter().copied().collect()).collect())
                            .collect(),
                    },
                    TypeBalls::Continuum(betas) => BallsRepr::Continuum { betas },
                };
                PolicyRepr::MinIndexMembership { balls, delta }
            }
            InterventionPolicy::Naive { betas } => PolicyRepr::Naive { betas },
            InterventionPolicy::SyntheticInterventions { data, omega, p } => {
                PolicyRepr::SyntheticInterventions {
                    data,
                    omega: omega.omega.iter().copied().collect(),
                    p,
                }
            }
        }
    }
}

impl TryFrom<PolicyRepr> for InterventionPolicy {
    type Error = Error;

    fn try_from(r: PolicyRepr) -> Result<Self> {
        match r {
            PolicyRepr::ShiftedTwo { beta0, beta1, delta } => InterventionPolicy::shifted_two(
                DVector::from_vec(beta0),
                DVector::from_vec(beta1),
                delta,
            ),
            PolicyRepr::ShiftedMulti { betas, delta } => {
                InterventionPolicy::shifted_multi(betas, delta)
            }
            PolicyRepr::MinIndexMembership { balls, delta } => match balls {
                BallsRepr::Finite { centers } => InterventionPolicy::min_index_finite(
                    centers
                        .into_iter()
                        .map(|g| g.into_iter().map(DVector::from_vec).collect())
                        .collect(),
                    delta,
                ),
                BallsRepr::Continuum { betas } => {
                    InterventionPolicy::min_index_continuum(betas, delta)
                }
            },
            PolicyRepr::Naive { betas } => InterventionPolicy::naive(betas),
            PolicyRepr::SyntheticInterventions { data, omega, p } => {
                InterventionPolicy::synthetic_interventions(
                    data,
                    RewardWeights::new(DVector::from_vec(omega))?,
                    p,
                )
            }
        }
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if !delta.is_finite() || delta < 0.0 {
        return Err(Error::Validation(format!(
            "policy delta must be finite and nonnegative, got {delta}"
        )));
    }
    Ok(())
}

fn check_vector(name: &str, v: &DVector<f64>) -> Result<()> {
    if v.is_empty() {
        return Err(Error::Validation(format!("{name} must not be empty")));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Validation(format!("{name} must be finite")));
    }
    Ok(())
}

impl InterventionPolicy {
    pub fn shifted_two(beta0: DVector<f64>, beta1: DVector<f64>, delta: f64) -> Result<Self> {
        check_vector("beta0", &beta0)?;
        check_vector("beta1", &beta1)?;
        if beta0.len() != beta1.len() {
            return Err(Error::Validation(format!(
                "beta lengths differ: {} vs {}",
                beta0.len(),
                beta1.len()
            )));
        }
        check_delta(delta)?;
        Ok(Self::ShiftedTwo { beta0, beta1, delta })
    }

    pub fn shifted_multi(betas: BetaSet, delta: f64) -> Result<Self> {
        check_delta(delta)?;
        Ok(Self::ShiftedMulti { betas, delta })
    }

    pub fn min_index_finite(centers: Vec<Vec<DVector<f64>>>, delta: f64) -> Result<Self> {
        check_delta(delta)?;
        let dim = centers
            .iter()
            .flat_map(|g| g.first())
            .map(DVector::len)
            .next()
            .ok_or_else(|| Error::Validation("need at least one ball center".into()))?;
        for (d, group) in centers.iter().enumerate() {
            for c in group {
                if c.len() != dim {
                    return Err(Error::Validation(format!(
                        "center of type {d} has dimension {}, expected {dim}",
                        c.len()
                    )));
                }
                check_vector("ball center", c)?;
            }
        }
        Ok(Self::MinIndexMembership { balls: TypeBalls::Finite(centers), delta })
    }

    pub fn min_index_continuum(betas: BetaSet, delta: f64) -> Result<Self> {
        check_delta(delta)?;
        Ok(Self::MinIndexMembership { balls: TypeBalls::Continuum(betas), delta })
    }

    pub fn naive(betas: BetaSet) -> Result<Self> {
        Ok(Self::Naive { betas })
    }

    pub fn synthetic_interventions(
        data: PanelDataset,
        omega: RewardWeights,
        p: usize,
    ) -> Result<Self> {
        if data.k < 2 {
            return Err(Error::Validation(format!(
                "need at least two interventions, got {}",
                data.k
            )));
        }
        if p == 0 {
            return Err(Error::Validation("retained rank must be at least 1".into()));
        }
        for (d, arm) in data.arms.iter().enumerate() {
            if arm.is_empty() {
                return Err(Error::Validation(format!("intervention {d} has no donor units")));
            }
            if arm.iter().any(|&i| i >= data.num_units()) {
                return Err(Error::Validation(format!("intervention {d} lists an unknown unit")));
            }
        }
        if data.y_post.iter().any(|p| p.len() != omega.len()) {
            return Err(Error::Validation(format!(
                "post-period length does not match the {} reward weights",
                omega.len()
            )));
        }
        Ok(Self::SyntheticInterventions { data, omega, p })
    }

    /// Number of interventions.
    pub fn k(&self) -> usize {
        match self {
            Self::ShiftedTwo { .. } => 2,
            Self::ShiftedMulti { betas, .. } | Self::Naive { betas } => betas.k(),
            Self::MinIndexMembership { balls, .. } => match balls {
                TypeBalls::Finite(groups) => groups.len(),
                TypeBalls::Continuum(betas) => betas.k(),
            },
            Self::SyntheticInterventions { data, .. } => data.k,
        }
    }

    /// Expected input dimension (pre-period length).
    pub fn t0(&self) -> usize {
        match self {
            Self::ShiftedTwo { beta0, .. } => beta0.len(),
            Self::ShiftedMulti { betas, .. } | Self::Naive { betas } => betas.t0(),
            Self::MinIndexMembership { balls, .. } => match balls {
                TypeBalls::Finite(groups) => {
                    groups.iter().flat_map(|g| g.first()).map(DVector::len).next().unwrap_or(0)
                }
                TypeBalls::Continuum(betas) => betas.t0(),
            },
            Self::SyntheticInterventions { data, .. } => data.t0,
        }
    }

    /// The shift radius, where the variant has one.
    pub fn delta(&self) -> Option<f64> {
        match self {
            Self::ShiftedTwo { delta, .. }
            | Self::ShiftedMulti { delta, .. }
            | Self::MinIndexMembership { delta, .. } => Some(*delta),
            Self::Naive { .. } | Self::SyntheticInterventions { .. } => None,
        }
    }

    fn betas_opt(&self) -> Option<&BetaSet> {
        match self {
            Self::ShiftedMulti { betas, .. } | Self::Naive { betas } => Some(betas),
            Self::MinIndexMembership { balls: TypeBalls::Continuum(betas), .. } => Some(betas),
            _ => None,
        }
    }

    /// Indifference classes of interventions, most preferred first. Without
    /// an explicit preference order, higher indices are preferred and every
    /// class is a singleton.
    fn preference_groups(&self) -> Vec<Vec<usize>> {
        let k = self.k();
        match self.betas_opt() {
            Some(betas) => {
                let mut by_rank: std::collections::BTreeMap<usize, Vec<usize>> =
                    std::collections::BTreeMap::new();
                for d in 0..k {
                    by_rank.entry(betas.rank(d)).or_default().push(d);
                }
                by_rank.into_values().rev().collect()
            }
            None => (0..k).rev().map(|d| vec![d]).collect(),
        }
    }

    /// The committed assignment for a submitted pre-period vector.
    pub fn assign(&self, y_tilde: &DVector<f64>) -> Result<usize> {
        if y_tilde.len() != self.t0() {
            return Err(Error::Validation(format!(
                "submission has dimension {}, policy expects {}",
                y_tilde.len(),
                self.t0()
            )));
        }
        if y_tilde.iter().any(|x| !x.is_finite()) {
            return Err(Error::Validation("submission must be finite".into()));
        }
        match self {
            Self::ShiftedTwo { beta0, beta1, delta } => {
                let n = beta1 - beta0;
                Ok(usize::from(n.dot(y_tilde) - delta * n.norm() > 0.0))
            }
            Self::ShiftedMulti { betas, delta } => Ok(shifted_multi_assign(betas, *delta, y_tilde)),
            Self::MinIndexMembership { balls, delta } => {
                for d in 0..self.k() {
                    let member = match balls {
                        TypeBalls::Finite(groups) => in_ball(y_tilde, &groups[d], *delta),
                        TypeBalls::Continuum(betas) => {
                            in_type_ball(y_tilde, betas, d, *delta, DEFAULT_PROJECTION_TOL)?
                        }
                    };
                    if member {
                        return Ok(d);
                    }
                }
                Ok(0)
            }
            Self::Naive { betas } => {
                let mut best = 0usize;
                let mut best_r = betas.beta(0).dot(y_tilde);
                for d in 1..betas.k() {
                    let r = betas.beta(d).dot(y_tilde);
                    if r >= best_r {
                        best = d;
                        best_r = r;
                    }
                }
                Ok(best)
            }
            Self::SyntheticInterventions { data, omega, p } => {
                let rewards = si_predicted_rewards(data, omega, *p, y_tilde)?;
                let mut best = 0usize;
                for d in 1..rewards.len() {
                    if rewards[d] >= rewards[best] {
                        best = d;
                    }
                }
                Ok(best)
            }
        }
    }

    /// The set assigned intervention `d`, as halfspaces, for the variants
    /// whose rule is polyhedral.
    pub fn region(&self, d: usize) -> Result<Region> {
        if d >= self.k() {
            return Err(Error::Validation(format!(
                "intervention {d} out of range (k = {})",
                self.k()
            )));
        }
        match self {
            Self::ShiftedTwo { beta0, beta1, delta } => {
                let betas = BetaSet::new(vec![beta0.clone(), beta1.clone()])?;
                shifted_type_region(&betas, d, *delta)
            }
            Self::ShiftedMulti { betas, delta } => shifted_type_region(betas, d, *delta),
            Self::Naive { betas } => naive_region(betas, d),
            Self::MinIndexMembership { .. } | Self::SyntheticInterventions { .. } => {
                Err(Error::Validation(
                    "non-polyhedral policy variant: its assignment set has no exact halfspace form"
                        .into(),
                ))
            }
        }
    }

    /// The minimum-effort response of a unit with true pre-period `y` and
    /// effort budget `delta`: reach the most preferred intervention whose
    /// region is within budget, staying put on indifference.
    pub fn best_response(&self, y: &DVector<f64>, delta: f64) -> Result<BestResponseOutcome> {
        if !delta.is_finite() || delta < 0.0 {
            return Err(Error::Validation(format!(
                "effort budget must be finite and nonnegative, got {delta}"
            )));
        }
        let current = self.assign(y)?;
        let eps = strict_margin(y.norm());
        for group in self.preference_groups() {
            let mut reachable: Vec<(usize, DVector<f64>, f64, bool)> = Vec::new();
            for &d in &group {
                if d == current {
                    reachable.push((d, y.clone(), 0.0, true));
                    continue;
                }
                if let Some((w, effort, exact)) = self.reach_cost(y, d, delta, eps)? {
                    if effort <= delta {
                        reachable.push((d, w, effort, exact));
                    }
                }
            }
            if reachable.is_empty() {
                continue;
            }
            // Indifferent within the group: staying put costs nothing.
            if let Some(stay) = reachable.iter().find(|(d, ..)| *d == current) {
                let exact = stay.3;
                return Ok(BestResponseOutcome {
                    y_modified: y.clone(),
                    achieved_intervention: current,
                    effort: 0.0,
                    moved: false,
                    exact,
                });
            }
            reachable.sort_by(|a, b| a.2.total_cmp(&b.2).then(b.0.cmp(&a.0)));
            let (d, w, effort, exact) = reachable.swap_remove(0);
            return Ok(BestResponseOutcome {
                y_modified: w,
                achieved_intervention: d,
                effort,
                moved: true,
                exact,
            });
        }
        // The current assignment is always reachable at zero effort.
        Ok(BestResponseOutcome {
            y_modified: y.clone(),
            achieved_intervention: current,
            effort: 0.0,
            moved: false,
            exact: true,
        })
    }

    /// Minimum effort to be assigned `d`, with the achieving point; `None`
    /// when `d` is unreachable within any effort (empty region) or the
    /// search finds nothing inside the budget.
    fn reach_cost(
        &self,
        y: &DVector<f64>,
        d: usize,
        budget: f64,
        eps: f64,
    ) -> Result<Option<(DVector<f64>, f64, bool)>> {
        match self {
            Self::ShiftedTwo { .. } | Self::ShiftedMulti { .. } | Self::Naive { .. } => {
                self.polyhedral_reach(y, d, eps, self.region(d))
            }
            Self::SyntheticInterventions { data, omega, p } => {
                // Predicted rewards are linear in the submission, so the
                // assignment sets are the argmax regions of the effective
                // reward vectors.
                let betas = si_effective_betas(data, omega, *p)?;
                self.polyhedral_reach(y, d, eps, naive_region(&betas, d))
            }
            Self::MinIndexMembership { .. } => {
                Ok(self.min_index_reach(y, d, budget)?.map(|(w, e)| (w, e, false)))
            }
        }
    }

    fn polyhedral_reach(
        &self,
        y: &DVector<f64>,
        d: usize,
        eps: f64,
        region: Result<Region>,
    ) -> Result<Option<(DVector<f64>, f64, bool)>> {
        let region = match region {
            Ok(r) => r,
            // An empty assignment set (e.g. duplicated reward vectors) makes
            // the intervention unreachable, not the response an error.
            Err(Error::Validation(_)) => return Ok(None),
            Err(e) => return Err(e),
        };
        // Strict boundaries need the interior margin; non-strict ones get a
        // machine-level nudge so the verification below is robust.
        let eps_flat = 1e-12 * (1.0 + y.norm());
        let mut halfspaces = Vec::with_capacity(region.halfspaces().len());
        for h in region.halfspaces() {
            if h.is_vacuous() {
                halfspaces.push(h.clone());
                continue;
            }
            let margin = if h.strict() { eps } else { eps_flat };
            halfspaces.push(Halfspace::new(
                h.a().clone(),
                h.b() + margin * h.a().norm(),
                h.strict(),
            )?);
        }
        let tightened = Region::new(halfspaces)?;
        let proj = project_onto_region(y, &tightened, DEFAULT_PROJECTION_TOL)?;
        if !proj.feasible {
            return Ok(None);
        }
        if self.assign(&proj.point)? != d {
            return Ok(None);
        }
        Ok(Some((proj.point, proj.distance, true)))
    }

    fn min_index_reach(
        &self,
        y: &DVector<f64>,
        d: usize,
        budget: f64,
    ) -> Result<Option<(DVector<f64>, f64)>> {
        let (balls, dp) = match self {
            Self::MinIndexMembership { balls, delta } => (balls, *delta),
            _ => unreachable!("min-index search on a different variant"),
        };
        let mut anchors: Vec<DVector<f64>> = Vec::new();
        match balls {
            TypeBalls::Finite(groups) => {
                for c in &groups[d] {
                    let to = c - y;
                    let dist = to.norm();
                    if dist == 0.0 {
                        anchors.push(c.clone());
                        continue;
                    }
                    let reach = ((dist - dp * (1.0 - 1e-9)) / dist).clamp(0.0, 1.0);
                    for t in [reach, reach + 0.25 * (1.0 - reach), reach + 0.5 * (1.0 - reach), 1.0]
                    {
                        anchors.push(y + &to * t);
                    }
                }
            }
            TypeBalls::Continuum(betas) => {
                let base = type_region(betas, d)?;
                for kappa in [1e-6, 1e-3, 1e-2, 0.1, 0.5] {
                    let target = pull_inward(&base, dp * (1.0 + kappa))?;
                    let proj = project_onto_region(y, &target, DEFAULT_PROJECTION_TOL)?;
                    if proj.feasible {
                        anchors.push(proj.point);
                    }
                }
            }
        }
        let mut rng = ChaCha12Rng::seed_from_u64(0x6d69_6e69);
        for _ in 0..32 {
            let dir = DVector::from_fn(y.len(), |_, _| -> f64 { StandardNormal.sample(&mut rng) });
            let norm = dir.norm();
            if norm > 0.0 {
                anchors.push(y + dir * (budget / norm));
            }
        }

        let mut best: Option<(DVector<f64>, f64)> = None;
        for anchor in anchors {
            let offset = &anchor - y;
            let r = offset.norm();
            let w = if r > budget { y + offset * (budget * (1.0 - 1e-12) / r) } else { anchor };
            if self.assign(&w)? != d {
                continue;
            }
            // Shrink radially to the smallest step that still achieves d.
            let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
            for _ in 0..40 {
                let mid = 0.5 * (lo + hi);
                let cand = y + (&w - y) * mid;
                if self.assign(&cand)? == d {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let final_w = y + (&w - y) * hi;
            let effort = (&final_w - y).norm();
            if best.as_ref().is_none_or(|(_, e)| effort < *e) {
                best = Some((final_w, effort));
            }
        }
        Ok(best)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

fn shifted_multi_assign(betas: &BetaSet, delta: f64, y: &DVector<f64>) -> usize {
    let k = betas.k();
    'candidates: for d in 0..k {
        for d_other in 0..k {
            if d_other == d {
                continue;
            }
            let n = betas.beta(d) - betas.beta(d_other);
            let margin = delta * n.norm();
            let inner = n.dot(y);
            let holds = if d_other < d { inner - margin > 0.0 } else { inner + margin >= 0.0 };
            if !holds {
                continue 'candidates;
            }
        }
        return d;
    }
    // No intervention qualifies (possible only off the shifted regions, when
    // separation fails): default to control.
    0
}

/// Argmax region of `d` under the unshifted rule with ties to the larger
/// index: strict against larger indices, slack against smaller ones.
fn naive_region(betas: &BetaSet, d: usize) -> Result<Region> {
    let mut halfspaces = Vec::with_capacity(betas.k() - 1);
    for d_other in 0..betas.k() {
        if d_other == d {
            continue;
        }
        halfspaces.push(Halfspace::new(betas.beta(d) - betas.beta(d_other), 0.0, d_other > d)?);
    }
    Region::new(halfspaces)
}

/// Every boundary pushed inward by `amount` (in unit-normal units).
fn pull_inward(region: &Region, amount: f64) -> Result<Region> {
    let mut halfspaces = Vec::with_capacity(region.halfspaces().len());
    for h in region.halfspaces() {
        if h.is_vacuous() {
            halfspaces.push(h.clone());
        } else {
            halfspaces.push(Halfspace::new(
                h.a().clone(),
                h.b() + amount * h.a().norm(),
                h.strict(),
            )?);
        }
    }
    Region::new(halfspaces)
}

/// Predicted principal rewards for one submission: regress it on each
/// intervention's donor pre-periods (transposed system, PCR with rank `p`),
/// then carry the fitted donor weights through the donors' observed
/// post-periods.
fn si_predicted_rewards(
    data: &PanelDataset,
    omega: &RewardWeights,
    p: usize,
    y_tilde: &DVector<f64>,
) -> Result<Vec<f64>> {
    let mut rewards = Vec::with_capacity(data.k);
    for donors in &data.arms {
        let design = DMatrix::from_fn(data.t0, donors.len(), |t, j| data.y_pre[(donors[j], t)]);
        let weights = pcr_fit(&design, y_tilde, &PcrConfig::rank(p))?;
        let mut predicted = 0.0;
        for (j, &unit) in donors.iter().enumerate() {
            predicted += weights[j] * principal_reward(&data.y_post[unit], omega)?;
        }
        rewards.push(predicted);
    }
    Ok(rewards)
}

/// The donor regression is linear in the submission, so each arm's predicted
/// reward is an inner product against one effective vector: the PCR fit of
/// the arm's pre-periods against its realized rewards.
fn si_effective_betas(data: &PanelDataset, omega: &RewardWeights, p: usize) -> Result<BetaSet> {
    let mut betas = Vec::with_capacity(data.k);
    for donors in &data.arms {
        let design = DMatrix::from_fn(donors.len(), data.t0, |j, t| data.y_pre[(donors[j], t)]);
        let rewards = donors
            .iter()
            .map(|&i| principal_reward(&data.y_post[i], omega))
            .collect::<Result<Vec<f64>>>()?;
        betas.push(pcr_fit(&design, &DVector::from_vec(rewards), &PcrConfig::rank(p))?);
    }
    BetaSet::new(betas)
}
