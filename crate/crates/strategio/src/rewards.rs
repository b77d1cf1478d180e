//! Principal rewards, their dual-space representation over the pre-period,
//! span-inclusion checking, and unit types.
//!
//! The principal's reward for assigning intervention `d` to a unit is a
//! weighted sum of the unit's post-period outcomes. When the pre-period
//! control factors have full column rank, that reward equals an inner product
//! `<beta^(d), y_pre>` against the unit's expected pre-period outcomes, which
//! is the representation every policy in this crate is built from. A unit's
//! type is the intervention maximizing that reward.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative singular-value threshold for the full-column-rank test.
pub const FULL_RANK_RATIO: f64 = 1e-10;

/// Post-period reward weights `omega_{T0+1..T}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub omega: DVector<f64>,
}

impl RewardWeights {
    pub fn new(omega: DVector<f64>) -> Result<Self> {
        if omega.iter().any(|x| !x.is_finite()) {
            return Err(Error::Validation("reward weights must be finite".into()));
        }
        Ok(Self { omega })
    }

    /// All-ones weights: total post-period outcome.
    pub fn ones(len: usize) -> Self {
        Self { omega: DVector::from_element(len, 1.0) }
    }

    pub fn len(&self) -> usize {
        self.omega.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omega.len() == 0
    }
}

/// Weighted sum of post-period outcomes.
pub fn principal_reward(y_post: &DVector<f64>, omega: &RewardWeights) -> Result<f64> {
    if y_post.len() != omega.len() {
        return Err(Error::Validation(format!(
            "post-period length {} does not match weight length {}",
            y_post.len(),
            omega.len()
        )));
    }
    Ok(omega.omega.dot(y_post))
}

/// Per-intervention reward vectors over the pre-period, plus the unit
/// preference order on interventions.
///
/// Preference is a weak order given by ranks: units prefer `a` to `b` when
/// `rank[a] > rank[b]` and are indifferent at equal rank. The default ranks
/// are the identity, i.e. units prefer higher-indexed interventions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BetaSetRepr", into = "BetaSetRepr")]
pub struct BetaSet {
    betas: Vec<DVector<f64>>,
    preference_rank: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct BetaSetRepr {
    k: usize,
    #[serde(rename = "T0")]
    t0: usize,
    betas: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    preference_rank: Option<Vec<usize>>,
}

impl From<BetaSet> for BetaSetRepr {
    fn from(b: BetaSet) -> Self {
        let identity = b.preference_rank.iter().enumerate().all(|(d, &r)| r == d);
        BetaSetRepr {
            k: b.k(),
            t0: b.t0(),
            betas: b.betas.iter().map(|v| v.iter().copied().collect()).collect(),
            preference_rank: if identity { None } else { Some(b.preference_rank.clone()) },
        }
    }
}

impl TryFrom<BetaSetRepr> for BetaSet {
    type Error = Error;

    fn try_from(r: BetaSetRepr) -> Result<Self> {
        if r.betas.len() != r.k {
            return Err(Error::Validation(format!(
                "beta count {} does not match k = {}",
                r.betas.len(),
                r.k
            )));
        }
        if r.betas.iter().any(|b| b.len() != r.t0) {
            return Err(Error::Validation(format!("every beta must have length T0 = {}", r.t0)));
        }
        let set = BetaSet::new(r.betas.into_iter().map(DVector::from_vec).collect())?;
        match r.preference_rank {
            Some(ranks) => set.with_preference(ranks),
            None => Ok(set),
        }
    }
}

impl BetaSet {
    /// Build from `k >= 2` equal-length vectors with the identity preference
    /// order.
    pub fn new(betas: Vec<DVector<f64>>) -> Result<Self> {
        if betas.len() < 2 {
            return Err(Error::Validation(format!(
                "need at least two interventions, got {}",
                betas.len()
            )));
        }
        let t0 = betas[0].len();
        for (d, b) in betas.iter().enumerate() {
            if b.len() != t0 {
                return Err(Error::Validation(format!(
                    "beta {d} has length {}, expected {t0}",
                    b.len()
                )));
            }
            if b.iter().any(|x| !x.is_finite()) {
                return Err(Error::Validation(format!("beta {d} contains a non-finite entry")));
            }
        }
        let preference_rank = (0..betas.len()).collect();
        Ok(Self { betas, preference_rank })
    }

    /// Replace the preference order. Ranks may contain ties (indifference).
    pub fn with_preference(mut self, ranks: Vec<usize>) -> Result<Self> {
        if ranks.len() != self.k() {
            return Err(Error::Validation(format!(
                "preference rank length {} does not match k = {}",
                ranks.len(),
                self.k()
            )));
        }
        self.preference_rank = ranks;
        Ok(self)
    }

    pub fn k(&self) -> usize {
        self.betas.len()
    }

    pub fn t0(&self) -> usize {
        self.betas[0].len()
    }

    pub fn beta(&self, d: usize) -> &DVector<f64> {
        &self.betas[d]
    }

    pub fn betas(&self) -> &[DVector<f64>] {
        &self.betas
    }

    pub fn rank(&self, d: usize) -> usize {
        self.preference_rank[d]
    }

    /// True when units strictly prefer `a` to `b`.
    pub fn strictly_prefers(&self, a: usize, b: usize) -> bool {
        self.preference_rank[a] > self.preference_rank[b]
    }

    /// Tie-break order: `a` wins over `b` when strictly preferred, or at equal
    /// rank when `a` has the larger index.
    pub fn wins_tie(&self, a: usize, b: usize) -> bool {
        self.preference_rank[a] > self.preference_rank[b]
            || (self.preference_rank[a] == self.preference_rank[b] && a > b)
    }

    /// Interventions sorted most-preferred first (by rank, then index,
    /// descending).
    pub fn preference_descending(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.k()).collect();
        order.sort_by(|&a, &b| (self.preference_rank[b], b).cmp(&(self.preference_rank[a], a)));
        order
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Least-squares certificate that a target vector lies in the span of the
/// pre-period factors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpanCheck {
    /// Coefficients over the pre-period (the beta vector when inclusion
    /// holds).
    pub coefficients: DVector<f64>,
    pub residual_norm: f64,
}

impl SpanCheck {
    /// Inclusion holds when the residual is negligible relative to the
    /// target.
    pub fn holds(&self, target_norm: f64) -> bool {
        self.residual_norm <= 1e-9 * target_norm.max(f64::MIN_POSITIVE)
    }
}

fn svd_rank_info(m: &DMatrix<f64>) -> (f64, f64) {
    let svals = m.clone().svd(false, false).singular_values;
    let top = svals.iter().cloned().fold(0.0_f64, f64::max);
    let bottom = svals.iter().cloned().fold(f64::INFINITY, f64::min);
    (top, bottom)
}

/// Rewrite per-intervention rewards as pre-period inner products:
/// `beta^(d) = U (U^T U)^{-1} sum_t omega_t u_t^(d)` where `U` stacks the
/// pre-period control factors. Requires `U` to have full column rank.
pub fn reformulate_beta(
    u_pre: &DMatrix<f64>,
    u_post: &[DMatrix<f64>],
    omega: &RewardWeights,
) -> Result<BetaSet> {
    let (t0, s) = u_pre.shape();
    if u_post.len() < 2 {
        return Err(Error::Validation(format!(
            "need at least two interventions, got {}",
            u_post.len()
        )));
    }
    for (d, m) in u_post.iter().enumerate() {
        if m.ncols() != s {
            return Err(Error::Validation(format!(
                "post factors of intervention {d} have {} columns, expected s = {s}",
                m.ncols()
            )));
        }
        if m.nrows() != omega.len() {
            return Err(Error::Validation(format!(
                "post factors of intervention {d} have {} rows, expected {} weights",
                m.nrows(),
                omega.len()
            )));
        }
    }
    if t0 < s {
        return Err(Error::Validation(format!(
            "pre-period factors are rank deficient: T0 = {t0} < s = {s}"
        )));
    }
    let (top, bottom) = svd_rank_info(u_pre);
    if top <= 0.0 || bottom <= FULL_RANK_RATIO * top {
        return Err(Error::Validation(format!(
            "pre-period factors are rank deficient: smallest singular value {bottom} <= {FULL_RANK_RATIO} x {top}"
        )));
    }
    let gram = u_pre.transpose() * u_pre;
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::Solver("pre-period Gram matrix is not positive definite".into()))?;
    let betas = u_post
        .iter()
        .map(|m| {
            let target = m.transpose() * &omega.omega;
            u_pre * chol.solve(&target)
        })
        .collect();
    BetaSet::new(betas)
}

/// Least-squares coefficients and residual for expressing `target` in the
/// span of the pre-period factors (the columns of `u_pre` transposed).
pub fn check_span_inclusion(u_pre: &DMatrix<f64>, target: &DVector<f64>) -> Result<SpanCheck> {
    if u_pre.ncols() != target.len() {
        return Err(Error::Validation(format!(
            "target length {} does not match factor dimension {}",
            target.len(),
            u_pre.ncols()
        )));
    }
    // Solve min_c || u_pre^T c - target || over c in R^{T0}.
    let a = u_pre.transpose();
    let svd = a.clone().svd(true, true);
    let coefficients = svd
        .solve(target, FULL_RANK_RATIO * svd.singular_values.max())
        .map_err(|e| Error::Solver(format!("least-squares solve failed: {e}")))?;
    let residual_norm = (&a * &coefficients - target).norm();
    Ok(SpanCheck { coefficients, residual_norm })
}

/// The intervention maximizing the principal's expected reward for a unit
/// with expected pre-period outcomes `y_pre`, together with the full reward
/// vector. Ties break toward the unit-preferred intervention.
pub fn unit_type(y_pre: &DVector<f64>, betas: &BetaSet) -> Result<(usize, Vec<f64>)> {
    if y_pre.len() != betas.t0() {
        return Err(Error::Validation(format!(
            "pre-period length {} does not match beta length {}",
            y_pre.len(),
            betas.t0()
        )));
    }
    let rewards: Vec<f64> = betas.betas().iter().map(|b| b.dot(y_pre)).collect();
    let mut best = 0usize;
    for d in 1..rewards.len() {
        if rewards[d] > rewards[best] || (rewards[d] == rewards[best] && betas.wins_tie(d, best)) {
            best = d;
        }
    }
    Ok((best, rewards))
}
