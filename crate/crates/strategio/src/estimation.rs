//! Principal component regression on observed panels, policy learning, the
//! expected-reward gap a deployment needs, and regret accounting.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel_model::PanelDataset;
use crate::policies::InterventionPolicy;
use crate::rewards::{principal_reward, BetaSet, RewardWeights};

/// Relative cutoff below which singular values count as numerically zero.
pub const DEFAULT_MIN_SINGULAR_RATIO: f64 = 1e-10;

fn default_ratio() -> f64 {
    DEFAULT_MIN_SINGULAR_RATIO
}

/// How a principal component regression is fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PcrConfig {
    /// Retained rank.
    pub p: usize,
    /// Ridge term in the spectral filter `s / (s^2 + rho)`.
    #[serde(default)]
    pub rho: f64,
    /// Singular values below this fraction of the top one are skipped.
    #[serde(default = "default_ratio")]
    pub min_singular_ratio: f64,
}

impl PcrConfig {
    pub fn rank(p: usize) -> Self {
        PcrConfig { p, rho: 0.0, min_singular_ratio: DEFAULT_MIN_SINGULAR_RATIO }
    }
}

/// Regress `r` on the rows of `y`: the minimum-norm rank-`p` solution of
/// `y beta = r`, with optional ridge regularization along each retained
/// direction.
pub fn pcr_fit(y: &DMatrix<f64>, r: &DVector<f64>, config: &PcrConfig) -> Result<DVector<f64>> {
    let (n, t0) = y.shape();
    if n == 0 || t0 == 0 {
        return Err(Error::Validation("design matrix must be nonempty".into()));
    }
    if r.len() != n {
        return Err(Error::Validation(format!(
            "response has length {}, design has {n} rows",
            r.len()
        )));
    }
    if config.p == 0 {
        return Err(Error::Validation("retained rank must be at least 1".into()));
    }
    if config.p > n.min(t0) {
        return Err(Error::Validation(format!(
            "retained rank {} exceeds min({n}, {t0})",
            config.p
        )));
    }
    if !config.rho.is_finite() || config.rho < 0.0 {
        return Err(Error::Validation(format!(
            "ridge term must be finite and nonnegative, got {}",
            config.rho
        )));
    }
    if !config.min_singular_ratio.is_finite() || config.min_singular_ratio < 0.0 {
        return Err(Error::Validation(format!(
            "singular-value cutoff must be finite and nonnegative, got {}",
            config.min_singular_ratio
        )));
    }
    if y.iter().any(|x| !x.is_finite()) || r.iter().any(|x| !x.is_finite()) {
        return Err(Error::Validation("design and response must be finite".into()));
    }

    // Work through the Gram matrix: for each retained right singular vector
    // q with singular value s, the component is s/(s^2 + rho) * (u' r) * q,
    // and u' r = (q' Y' r) / s, with s^2 the Gram eigenvalue.
    let gram = y.transpose() * y;
    let z = y.transpose() * r;
    let eig = gram.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let s_top = eig.eigenvalues[order[0]].max(0.0).sqrt();
    let cutoff = config.min_singular_ratio * s_top;
    let mut beta = DVector::zeros(t0);
    for &idx in order.iter().take(config.p) {
        let lambda = eig.eigenvalues[idx];
        if lambda <= 0.0 {
            continue;
        }
        let sl = lambda.sqrt();
        if sl < cutoff {
            continue;
        }
        let q = eig.eigenvectors.column(idx);
        beta += q * (q.dot(&z) / (lambda + config.rho));
    }
    Ok(beta)
}

/// Per-intervention estimates from an observed panel, with the spectral
/// diagnostics a caller needs to judge them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LearnedBetasRepr", into = "LearnedBetasRepr")]
pub struct LearnedBetas {
    pub beta_hats: Vec<DVector<f64>>,
    /// Singular values of each intervention's donor pre-period matrix.
    pub singular_values: Vec<Vec<f64>>,
    /// Signal-to-noise proxy per intervention.
    pub snr: Vec<f64>,
    /// Donor count per intervention.
    pub n_d: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct LearnedBetasRepr {
    beta_hats: Vec<Vec<f64>>,
    singular_values: Vec<Vec<f64>>,
    snr: Vec<f64>,
    n_d: Vec<usize>,
}

impl From<LearnedBetas> for LearnedBetasRepr {
    fn from(l: LearnedBetas) -> Self {
        LearnedBetasRepr {
            beta_hats: l.beta_hats.iter().map(|b| b.iter().copied().collect()).collect(),
            singular_values: l.singular_values,
            snr: l.snr,
            n_d: l.n_d,
        }
    }
}

impl TryFrom<LearnedBetasRepr> for LearnedBetas {
    type Error = Error;

    fn try_from(r: LearnedBetasRepr) -> Result<Self> {
        let k = r.beta_hats.len();
        if k == 0 {
            return Err(Error::Validation("no interventions in learned estimates".into()));
        }
        if r.singular_values.len() != k || r.snr.len() != k || r.n_d.len() != k {
            return Err(Error::Validation(
                "per-intervention fields have mismatched lengths".into(),
            ));
        }
        let t0 = r.beta_hats[0].len();
        if r.beta_hats.iter().any(|b| b.len() != t0) {
            return Err(Error::Validation("estimates have mismatched lengths".into()));
        }
        Ok(LearnedBetas {
            beta_hats: r.beta_hats.into_iter().map(DVector::from_vec).collect(),
            singular_values: r.singular_values,
            snr: r.snr,
            n_d: r.n_d,
        })
    }
}

impl LearnedBetas {
    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

fn learn_arms(
    data: &PanelDataset,
    omega: &RewardWeights,
    config: &PcrConfig,
) -> Result<LearnedBetas> {
    if data.k < 2 {
        return Err(Error::Validation(format!("need at least two interventions, got {}", data.k)));
    }
    if data.y_post.iter().any(|p| p.len() != omega.len()) {
        return Err(Error::Validation(format!(
            "post-period length does not match the {} reward weights",
            omega.len()
        )));
    }
    let mut beta_hats = Vec::with_capacity(data.k);
    let mut singular_values = Vec::with_capacity(data.k);
    let mut snrs = Vec::with_capacity(data.k);
    let mut n_d = Vec::with_capacity(data.k);
    for (d, donors) in data.arms.iter().enumerate() {
        if donors.is_empty() {
            return Err(Error::Validation(format!("intervention {d} has no assigned units")));
        }
        let design = DMatrix::from_fn(donors.len(), data.t0, |j, t| data.y_pre[(donors[j], t)]);
        let rewards = donors
            .iter()
            .map(|&i| principal_reward(&data.y_post[i], omega))
            .collect::<Result<Vec<f64>>>()?;
        beta_hats.push(pcr_fit(&design, &DVector::from_vec(rewards), config)?);
        singular_values
            .push(design.clone().svd(false, false).singular_values.iter().copied().collect());
        snrs.push(snr(&design));
        n_d.push(donors.len());
    }
    Ok(LearnedBetas { beta_hats, singular_values, snr: snrs, n_d })
}

fn degenerate_pair(beta_hats: &[DVector<f64>]) -> Option<(usize, usize)> {
    let scale = 1.0 + beta_hats.iter().map(|b| b.norm()).fold(0.0, f64::max);
    for d in 0..beta_hats.len() {
        for d_other in d + 1..beta_hats.len() {
            if (&beta_hats[d_other] - &beta_hats[d]).norm() <= 1e-12 * scale {
                return Some((d, d_other));
            }
        }
    }
    None
}

/// Learn a two-intervention shifted policy from an observed panel.
pub fn learn_two(
    data: &PanelDataset,
    omega: &RewardWeights,
    delta: f64,
    config: &PcrConfig,
) -> Result<(InterventionPolicy, LearnedBetas)> {
    if data.k != 2 {
        return Err(Error::Validation(format!(
            "expected exactly two interventions, got {}",
            data.k
        )));
    }
    let learned = learn_arms(data, omega, config)?;
    if degenerate_pair(&learned.beta_hats).is_some() {
        return Err(Error::Validation(
            "learned reward vectors coincide; the policy has no decision boundary".into(),
        ));
    }
    let policy = InterventionPolicy::shifted_two(
        learned.beta_hats[0].clone(),
        learned.beta_hats[1].clone(),
        delta,
    )?;
    Ok((policy, learned))
}

/// Learn a shifted policy over any number of interventions.
pub fn learn_multi(
    data: &PanelDataset,
    omega: &RewardWeights,
    delta: f64,
    config: &PcrConfig,
) -> Result<(InterventionPolicy, LearnedBetas)> {
    let learned = learn_arms(data, omega, config)?;
    if let Some((d, d_other)) = degenerate_pair(&learned.beta_hats) {
        return Err(Error::Validation(format!(
            "learned reward vectors for interventions {d} and {d_other} coincide"
        )));
    }
    let betas = BetaSet::new(learned.beta_hats.clone())?;
    let policy = InterventionPolicy::shifted_multi(betas, delta)?;
    Ok((policy, learned))
}

/// The pairwise expected-reward gaps that guarantee truthful behavior.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GapSpec {
    /// `gamma[d][d_prime]` for `d_prime < d`; zero elsewhere.
    pub gamma: Vec<Vec<f64>>,
    pub delta: f64,
    pub sigma: f64,
    pub beta_bar: f64,
    pub t0: usize,
    pub alpha: f64,
    /// `||beta_hat - beta||` per intervention.
    pub estimation_errors: Vec<f64>,
}

impl GapSpec {
    pub fn gamma(&self, d: usize, d_prime: usize) -> f64 {
        self.gamma[d][d_prime]
    }
}

/// Required gap between each intervention pair: estimation error terms for
/// both, the shift's own slack, and a noise term that holds with probability
/// `1 - alpha` per unit.
pub fn gap_threshold(
    beta_true: &BetaSet,
    beta_hat: &BetaSet,
    delta: f64,
    sigma: f64,
    beta_bar: f64,
    alpha: f64,
) -> Result<GapSpec> {
    if beta_true.k() != beta_hat.k() || beta_true.t0() != beta_hat.t0() {
        return Err(Error::Validation(format!(
            "true and estimated sets have shapes ({}, {}) vs ({}, {})",
            beta_true.k(),
            beta_true.t0(),
            beta_hat.k(),
            beta_hat.t0()
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Validation(format!(
            "alpha must lie strictly inside (0, 1), got {alpha}"
        )));
    }
    if !delta.is_finite() || delta < 0.0 {
        return Err(Error::Validation(format!(
            "delta must be finite and nonnegative, got {delta}"
        )));
    }
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(Error::Validation(format!(
            "sigma must be finite and nonnegative, got {sigma}"
        )));
    }
    let max_entry = (0..beta_true.k())
        .flat_map(|d| beta_true.beta(d).iter().map(|x| x.abs()).collect::<Vec<f64>>())
        .fold(0.0, f64::max);
    if !beta_bar.is_finite() || beta_bar < max_entry {
        return Err(Error::Validation(format!(
            "beta_bar {beta_bar} must dominate every entry magnitude (max {max_entry})"
        )));
    }
    let t0 = beta_true.t0();
    let errors: Vec<f64> =
        (0..beta_true.k()).map(|d| (beta_hat.beta(d) - beta_true.beta(d)).norm()).collect();
    let noise = 6.0 * sigma * beta_bar * (2.0 * t0 as f64 * (1.0 / alpha).ln()).sqrt();
    let root_t0 = (t0 as f64).sqrt();
    let mut gamma = vec![vec![0.0; beta_true.k()]; beta_true.k()];
    for d in 0..beta_true.k() {
        for d_prime in 0..d {
            let separation = (beta_true.beta(d) - beta_true.beta(d_prime)).norm();
            gamma[d][d_prime] =
                (root_t0 + delta) * (errors[d] + errors[d_prime]) + delta * separation + noise;
        }
    }
    Ok(GapSpec { gamma, delta, sigma, beta_bar, t0, alpha, estimation_errors: errors })
}

/// Realized regret of one assignment against the expected-reward optimum,
/// and the prediction-error bound it must respect.
pub fn regret_decomposition(
    assigned: usize,
    optimal: usize,
    r_hat: &[f64],
    expected_rewards: &[f64],
) -> Result<(f64, f64, bool)> {
    let k = expected_rewards.len();
    if k == 0 || r_hat.len() != k {
        return Err(Error::Validation(format!(
            "need matching nonempty reward lists, got {} and {k}",
            r_hat.len()
        )));
    }
    if assigned >= k || optimal >= k {
        return Err(Error::Validation(format!(
            "interventions {assigned}, {optimal} out of range (k = {k})"
        )));
    }
    let regret = expected_rewards[optimal] - expected_rewards[assigned];
    let bound: f64 = r_hat.iter().zip(expected_rewards).map(|(rh, er)| (rh - er).abs()).sum();
    Ok((regret, bound, regret <= bound + 1e-9))
}

/// Smallest retained singular value over `sqrt(rows) + sqrt(cols)`; zero for
/// an empty or all-zero matrix.
pub fn snr(y: &DMatrix<f64>) -> f64 {
    let (n, t0) = y.shape();
    if n == 0 || t0 == 0 {
        return 0.0;
    }
    let s = y.clone().svd(false, false).singular_values;
    let top = s[0];
    if top <= 0.0 {
        return 0.0;
    }
    let cutoff = DEFAULT_MIN_SINGULAR_RATIO * top;
    let smallest = s.iter().copied().filter(|&sl| sl >= cutoff && sl > 0.0).fold(top, f64::min);
    smallest / ((n as f64).sqrt() + (t0 as f64).sqrt())
}

/// Rank suggestion from the largest multiplicative gap in a descending
/// singular-value profile. Diagnostic only.
pub fn suggest_rank(singular_values: &[f64]) -> usize {
    if singular_values.is_empty() || singular_values[0] <= 0.0 {
        return 1;
    }
    let cutoff = DEFAULT_MIN_SINGULAR_RATIO * singular_values[0];
    let retained = singular_values.iter().take_while(|&&s| s >= cutoff && s > 0.0).count();
    if retained <= 1 {
        return 1;
    }
    let mut best = (0usize, 0.0_f64);
    for i in 0..retained - 1 {
        let ratio = singular_values[i] / singular_values[i + 1];
        if ratio > best.1 {
            best = (i, ratio);
        }
    }
    best.0 + 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel_model::{generate_counterfactuals, observe, LatentFactorSpec, UnitFactors};
    use crate::rewards::reformulate_beta;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn pcr_on_identity_design_returns_the_response() {
        let y = DMatrix::<f64>::identity(3, 3);
        let r = DVector::from_row_slice(&[0.5, -1.0, 2.0]);
        let beta = pcr_fit(&y, &r, &PcrConfig::rank(3)).unwrap();
        assert_abs_diff_eq!(beta, r, epsilon = 1e-12);
    }

    #[test]
    fn pcr_rank_one_on_a_flat_matrix() {
        let y = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let r = DVector::from_row_slice(&[2.0, 2.0]);
        let beta = pcr_fit(&y, &r, &PcrConfig::rank(1)).unwrap();
        assert_abs_diff_eq!(beta, DVector::from_row_slice(&[1.0, 1.0]), epsilon = 1e-12);
    }

    #[test]
    fn pcr_recovers_exactly_on_noiseless_low_rank_data() {
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        for _ in 0..50 {
            let s = rng.random_range(1..=3);
            let t0 = rng.random_range(s..=6);
            let n = rng.random_range(s.max(2)..=12);
            let basis = DMatrix::from_fn(t0, s, |_, _| rng.random_range(-1.0_f64..1.0));
            let coords = DMatrix::from_fn(n, s, |_, _| rng.random_range(-1.0_f64..1.0));
            let y = &coords * basis.transpose();
            let beta_true = DVector::from_fn(t0, |_, _| rng.random_range(-1.0_f64..1.0));
            let r = &y * &beta_true;
            let beta = pcr_fit(&y, &r, &PcrConfig::rank(s)).unwrap();
            let r_hat = &y * &beta;
            let max_err =
                r_hat.iter().zip(r.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(max_err <= 1e-8, "reward reconstruction off by {max_err}");
        }
    }

    #[test]
    fn pcr_returns_the_rowspace_projection_of_the_truth() {
        // Independent check through the Gram matrix eigendecomposition.
        let mut rng = ChaCha12Rng::seed_from_u64(19);
        for _ in 0..20 {
            let s = 2;
            let t0 = 5;
            let basis = DMatrix::from_fn(t0, s, |_, _| rng.random_range(-1.0_f64..1.0));
            let coords = DMatrix::from_fn(8, s, |_, _| rng.random_range(-1.0_f64..1.0));
            let y = &coords * basis.transpose();
            let beta_true = DVector::from_fn(t0, |_, _| rng.random_range(-1.0_f64..1.0));
            let r = &y * &beta_true;
            let beta = pcr_fit(&y, &r, &PcrConfig::rank(s)).unwrap();

            let gram = y.transpose() * &y;
            let eig = gram.symmetric_eigen();
            let lambda_max = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
            let mut projected = DVector::zeros(t0);
            for (i, &lambda) in eig.eigenvalues.iter().enumerate() {
                if lambda > 1e-10 * lambda_max {
                    let q = eig.eigenvectors.column(i);
                    projected += q * q.dot(&beta_true);
                }
            }
            assert_abs_diff_eq!(beta, projected, epsilon = 1e-8);
        }
    }

    #[test]
    fn pcr_is_invariant_to_row_permutations() {
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        let y = DMatrix::from_fn(6, 4, |_, _| rng.random_range(-1.0_f64..1.0));
        let r = DVector::from_fn(6, |_, _| rng.random_range(-1.0_f64..1.0));
        let beta = pcr_fit(&y, &r, &PcrConfig::rank(3)).unwrap();
        let perm = [5usize, 2, 0, 4, 1, 3];
        let y_perm = DMatrix::from_fn(6, 4, |i, j| y[(perm[i], j)]);
        let r_perm = DVector::from_fn(6, |i, _| r[perm[i]]);
        let beta_perm = pcr_fit(&y_perm, &r_perm, &PcrConfig::rank(3)).unwrap();
        assert_abs_diff_eq!(beta, beta_perm, epsilon = 1e-12);
    }

    #[test]
    fn tiny_ridge_perturbs_the_fit_negligibly() {
        let y = DMatrix::from_row_slice(
            4,
            3,
            &[2.0, 0.0, 0.0, 0.0, 1.5, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0],
        );
        let r = DVector::from_row_slice(&[1.0, -0.5, 0.25, 0.8]);
        let plain = pcr_fit(&y, &r, &PcrConfig::rank(3)).unwrap();
        let ridged = pcr_fit(&y, &r, &PcrConfig { rho: 1e-12, ..PcrConfig::rank(3) }).unwrap();
        assert_abs_diff_eq!(plain, ridged, epsilon = 1e-8);
    }

    #[test]
    fn pcr_rejects_bad_shapes_and_ranks() {
        let y = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let r = DVector::from_row_slice(&[1.0, 1.0]);
        assert!(pcr_fit(&y, &r, &PcrConfig::rank(0)).is_err());
        assert!(pcr_fit(&y, &r, &PcrConfig::rank(3)).is_err());
        assert!(pcr_fit(&DMatrix::zeros(0, 2), &DVector::zeros(0), &PcrConfig::rank(1)).is_err());
        assert!(pcr_fit(&y, &DVector::zeros(3), &PcrConfig::rank(1)).is_err());
        assert!(pcr_fit(&y, &r, &PcrConfig { rho: -1.0, ..PcrConfig::rank(1) }).is_err());
    }

    /// Noiseless k = 2 world with identity pre-period factors, 24 units.
    fn noiseless_world(seed: u64) -> (LatentFactorSpec, UnitFactors, PanelDataset, RewardWeights) {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let s = 2;
        let t0 = 3;
        let t = 5;
        let factors: Vec<Vec<DVector<f64>>> = (0..2)
            .map(|d| {
                (0..t)
                    .map(|step| {
                        if step < t0 {
                            DVector::from_fn(s, |r, _| {
                                [[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]][step][r]
                            })
                        } else {
                            DVector::from_fn(s, |_, _| {
                                rng.random_range(-0.4..0.4) + 0.05 * d as f64
                            })
                        }
                    })
                    .collect()
            })
            .collect();
        let spec = LatentFactorSpec::new(s, t0, t, factors, 0.0).unwrap();
        let units = UnitFactors::new(
            (0..24).map(|_| DVector::from_fn(s, |_, _| rng.random_range(-0.9..0.9))).collect(),
        )
        .unwrap();
        let panel = generate_counterfactuals(&spec, &units, seed).unwrap();
        let assignment: Vec<usize> = (0..24).map(|i| i % 2).collect();
        let data = observe(&panel, &assignment).unwrap();
        (spec, units, data, RewardWeights::ones(t - t0))
    }

    #[test]
    fn learned_policy_matches_the_true_one_on_model_points() {
        let (spec, _units, data, omega) = noiseless_world(29);
        let (policy, learned) = learn_two(&data, &omega, 0.1, &PcrConfig::rank(2)).unwrap();
        let u_posts: Vec<DMatrix<f64>> = (0..2).map(|d| spec.u_post(d)).collect();
        let betas = reformulate_beta(&spec.u_pre(), &u_posts, &omega).unwrap();
        let truth =
            InterventionPolicy::shifted_two(betas.beta(0).clone(), betas.beta(1).clone(), 0.1)
                .unwrap();
        assert_eq!(learned.n_d, vec![12, 12]);
        assert!(learned.snr.iter().all(|&s| s > 0.0));
        let mut rng = ChaCha12Rng::seed_from_u64(31);
        for _ in 0..1000 {
            let v = DVector::from_fn(2, |_, _| rng.random_range(-0.9..0.9));
            let y = spec.u_pre() * &v;
            assert_eq!(policy.assign(&y).unwrap(), truth.assign(&y).unwrap());
        }
    }

    #[test]
    fn learning_rejects_coincident_reward_vectors() {
        let (_, _, mut data, omega) = noiseless_world(37);
        // Make both arms share the same donors, so the fits coincide.
        data.arms[1] = data.arms[0].clone();
        let err = learn_two(&data, &omega, 0.1, &PcrConfig::rank(2)).unwrap_err();
        assert!(err.to_string().contains("coincide"), "{err}");
    }

    #[test]
    fn learn_multi_with_two_interventions_matches_learn_two() {
        let (_, _, data, omega) = noiseless_world(41);
        let (two, l2) = learn_two(&data, &omega, 0.2, &PcrConfig::rank(2)).unwrap();
        let (multi, lm) = learn_multi(&data, &omega, 0.2, &PcrConfig::rank(2)).unwrap();
        assert_eq!(l2.beta_hats, lm.beta_hats);
        let mut rng = ChaCha12Rng::seed_from_u64(43);
        for _ in 0..500 {
            let y = DVector::from_fn(3, |_, _| rng.random_range(-2.0..2.0));
            assert_eq!(two.assign(&y).unwrap(), multi.assign(&y).unwrap());
        }
    }

    #[test]
    fn full_rank_pre_period_recovers_the_reward_vectors_exactly() {
        // With T0 = s the row space is everything, so the estimates equal
        // the true reward vectors, not just their projections.
        let mut rng = ChaCha12Rng::seed_from_u64(47);
        let s = 2;
        let t0 = 2;
        let t = 3;
        let factors: Vec<Vec<DVector<f64>>> = (0..3)
            .map(|_| {
                (0..t)
                    .map(|step| {
                        if step < t0 {
                            DVector::from_fn(s, |r, _| f64::from(u8::from(r == step)))
                        } else {
                            DVector::from_fn(s, |_, _| rng.random_range(-0.5..0.5))
                        }
                    })
                    .collect()
            })
            .collect();
        let spec = LatentFactorSpec::new(s, t0, t, factors, 0.0).unwrap();
        let units = UnitFactors::new(
            (0..18).map(|_| DVector::from_fn(s, |_, _| rng.random_range(-0.9..0.9))).collect(),
        )
        .unwrap();
        let panel = generate_counterfactuals(&spec, &units, 47).unwrap();
        let assignment: Vec<usize> = (0..18).map(|i| i % 3).collect();
        let data = observe(&panel, &assignment).unwrap();
        let omega = RewardWeights::ones(1);
        let (_, learned) = learn_multi(&data, &omega, 0.1, &PcrConfig::rank(2)).unwrap();
        let u_posts: Vec<DMatrix<f64>> = (0..3).map(|d| spec.u_post(d)).collect();
        let betas = reformulate_beta(&spec.u_pre(), &u_posts, &omega).unwrap();
        for d in 0..3 {
            assert_abs_diff_eq!(learned.beta_hats[d], *betas.beta(d), epsilon = 1e-8);
        }
    }

    #[test]
    fn learned_betas_round_trip_through_json() {
        let (_, _, data, omega) = noiseless_world(53);
        let (_, learned) = learn_two(&data, &omega, 0.1, &PcrConfig::rank(2)).unwrap();
        let json = learned.to_json_string().unwrap();
        let back = LearnedBetas::from_json_str(&json).unwrap();
        assert_eq!(learned, back);
    }

    fn simple_betas() -> BetaSet {
        BetaSet::new(vec![
            DVector::from_row_slice(&[-1.0, 0.5]),
            DVector::from_row_slice(&[1.0, 0.5]),
            DVector::from_row_slice(&[0.0, 1.0]),
        ])
        .unwrap()
    }

    #[test]
    fn gap_threshold_reduces_to_the_shift_term_without_noise_or_error() {
        let betas = simple_betas();
        let spec = gap_threshold(&betas, &betas, 1.0, 0.0, 1.0, 0.1).unwrap();
        assert_abs_diff_eq!(spec.gamma(2, 0), 1.25_f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(spec.gamma(1, 0), 2.0, epsilon = 1e-12);
        assert_eq!(spec.gamma(0, 0), 0.0);
        assert!(spec.estimation_errors.iter().all(|&e| e == 0.0));

        let zero = gap_threshold(&betas, &betas, 0.0, 0.0, 1.0, 0.1).unwrap();
        for d in 0..3 {
            for d_prime in 0..3 {
                assert_eq!(zero.gamma(d, d_prime), 0.0);
            }
        }
    }

    #[test]
    fn gap_threshold_grows_with_noise_and_estimation_error() {
        let betas = simple_betas();
        let noisy = gap_threshold(&betas, &betas, 0.5, 0.2, 1.0, 0.05).unwrap();
        let quiet = gap_threshold(&betas, &betas, 0.5, 0.0, 1.0, 0.05).unwrap();
        assert!(noisy.gamma(1, 0) > quiet.gamma(1, 0));
        let expected_noise = 6.0 * 0.2 * (2.0 * 2.0 * 20.0_f64.ln()).sqrt();
        assert_abs_diff_eq!(noisy.gamma(1, 0) - quiet.gamma(1, 0), expected_noise, epsilon = 1e-12);

        let shifted = BetaSet::new(vec![
            DVector::from_row_slice(&[-1.0, 0.6]),
            DVector::from_row_slice(&[1.0, 0.5]),
            DVector::from_row_slice(&[0.0, 1.0]),
        ])
        .unwrap();
        let with_err = gap_threshold(&betas, &shifted, 0.5, 0.0, 1.0, 0.05).unwrap();
        assert_abs_diff_eq!(with_err.estimation_errors[0], 0.1, epsilon = 1e-12);
        assert!(with_err.gamma(1, 0) > quiet.gamma(1, 0));
    }

    #[test]
    fn gap_threshold_rejects_bad_parameters() {
        let betas = simple_betas();
        assert!(gap_threshold(&betas, &betas, 0.5, 0.1, 1.0, 0.0).is_err());
        assert!(gap_threshold(&betas, &betas, 0.5, 0.1, 1.0, 1.0).is_err());
        assert!(gap_threshold(&betas, &betas, 0.5, 0.1, 0.5, 0.1).is_err(), "beta_bar too small");
        assert!(gap_threshold(&betas, &betas, -0.5, 0.1, 1.0, 0.1).is_err());
        let other =
            BetaSet::new(vec![DVector::from_row_slice(&[1.0]), DVector::from_row_slice(&[2.0])])
                .unwrap();
        assert!(gap_threshold(&betas, &other, 0.5, 0.1, 1.0, 0.1).is_err());
    }

    #[test]
    fn regret_is_the_expected_reward_shortfall() {
        let (regret, bound, ok) = regret_decomposition(0, 1, &[0.9, 1.05], &[1.0, 1.1]).unwrap();
        assert_abs_diff_eq!(regret, 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(bound, 0.15, epsilon = 1e-12);
        assert!(ok);

        let (regret, _, ok) = regret_decomposition(1, 1, &[1.0, 1.1], &[1.0, 1.1]).unwrap();
        assert_eq!(regret, 0.0);
        assert!(ok);

        // A bound smaller than the regret is reported, not masked.
        let (_, _, ok) = regret_decomposition(0, 1, &[0.0, 5.0], &[0.0, 5.0]).unwrap();
        assert!(!ok);

        assert!(regret_decomposition(2, 0, &[1.0, 2.0], &[1.0, 2.0]).is_err());
        assert!(regret_decomposition(0, 0, &[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn snr_matches_closed_forms() {
        let eye = DMatrix::<f64>::identity(4, 4);
        assert_abs_diff_eq!(snr(&eye), 1.0 / 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(snr(&(&eye * 3.0)), 3.0 / 4.0, epsilon = 1e-12);

        let flat = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert_abs_diff_eq!(snr(&flat), 1.0 / 2.0_f64.sqrt(), epsilon = 1e-12);

        assert_eq!(snr(&DMatrix::zeros(3, 3)), 0.0);
    }

    #[test]
    fn suggested_rank_lands_on_the_largest_spectral_gap() {
        assert_eq!(suggest_rank(&[10.0, 9.0, 0.1, 0.05]), 2);
        assert_eq!(suggest_rank(&[10.0, 0.2, 0.1]), 1);
        assert_eq!(suggest_rank(&[5.0]), 1);
        assert_eq!(suggest_rank(&[]), 1);
        assert_eq!(suggest_rank(&[1.0, 1e-14]), 1, "numerically zero tail is ignored");
    }
}
