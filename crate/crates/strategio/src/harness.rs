//! End-to-end experiments: generate a panel, learn a policy from the
//! truthful training arm, let fresh test units best-respond, and score the
//! result against ground-truth counterfactuals. Includes the shift-
//! misspecification sweep, three demonstration constructions, and long-format
//! CSV ingestion.

use std::collections::HashMap;
use std::f64::consts::TAU;
use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{learn_multi, PcrConfig};
use crate::geometry::{separation_of_types, SeparationMode, SeparationReport};
use crate::panel_model::{
    generate_counterfactuals, observe, rct_assign, truncated_gaussian, CounterfactualPanel,
    LatentFactorSpec, PanelDataset, UnitFactors,
};
use crate::policies::InterventionPolicy;
use crate::rewards::{principal_reward, BetaSet, RewardWeights};

/// Units whose best and second-best expected rewards differ by less than
/// this are treated as boundary-tied and excluded from misassignment rates.
pub const BOUNDARY_REWARD_GAP: f64 = 1e-6;

/// Which committed rule an experiment deploys.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyVariant {
    ShiftedTwo,
    ShiftedMulti,
    /// Min-index membership over the learned type cones (continuum balls).
    MinIndex,
    Naive,
    Si,
}

/// How the world behind an experiment is drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WorldModel {
    /// Shared random pre-period factors, independent post-period factors per
    /// intervention, unit factors iid uniform on a centered cube. Factor
    /// ranges are derived from the cube so expected outcomes stay in [-1, 1].
    IidUniform { unit_half_width: f64 },
    /// Fixed rank-3 seasonal factors over five pre and three post periods,
    /// two interventions, and per-period noise scaling.
    SemiSynthetic,
}

/// Everything one experiment depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub s: usize,
    pub t0: usize,
    pub t: usize,
    pub k: usize,
    pub sigma: f64,
    pub m_train: usize,
    pub m_test: usize,
    /// Effort budget test units actually have.
    pub delta_true: f64,
    /// Shift the deployed policy uses; the gap between the two is the
    /// misspecification under study.
    pub delta_hat: f64,
    pub omega: Vec<f64>,
    pub pcr: PcrConfig,
    pub seed: u64,
    pub policy: PolicyVariant,
    pub world: WorldModel,
}

impl ExperimentConfig {
    /// Retail-like defaults: five pre-periods, three post-periods, two
    /// interventions, 135 training and 135 test units.
    pub fn semi_synthetic(seed: u64) -> Self {
        ExperimentConfig {
            s: 3,
            t0: 5,
            t: 8,
            k: 2,
            sigma: 0.05,
            m_train: 135,
            m_test: 135,
            delta_true: 0.25,
            delta_hat: 0.25,
            omega: vec![1.0; 3],
            pcr: PcrConfig::rank(3),
            seed,
            policy: PolicyVariant::ShiftedTwo,
            world: WorldModel::SemiSynthetic,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.s == 0 || self.t0 == 0 {
            return Err(Error::Validation(
                "latent dimension and pre-period must be positive".into(),
            ));
        }
        if self.t <= self.t0 {
            return Err(Error::Validation(format!(
                "horizon {} must exceed the pre-period {}",
                self.t, self.t0
            )));
        }
        if self.k < 2 {
            return Err(Error::Validation(format!(
                "need at least two interventions, got {}",
                self.k
            )));
        }
        if !self.sigma.is_finite() || self.sigma < 0.0 {
            return Err(Error::Validation(format!(
                "sigma must be finite and nonnegative, got {}",
                self.sigma
            )));
        }
        if !self.delta_true.is_finite() || self.delta_true <= 0.0 {
            return Err(Error::Validation(format!(
                "true effort budget must be positive, got {}",
                self.delta_true
            )));
        }
        if !self.delta_hat.is_finite() || self.delta_hat < 0.0 {
            return Err(Error::Validation(format!(
                "deployed shift must be finite and nonnegative, got {}",
                self.delta_hat
            )));
        }
        if self.m_train < self.k {
            return Err(Error::Validation(format!(
                "need at least {} training units to fill every arm, got {}",
                self.k, self.m_train
            )));
        }
        if self.omega.len() != self.t - self.t0 {
            return Err(Error::Validation(format!(
                "omega has length {}, expected {} post-periods",
                self.omega.len(),
                self.t - self.t0
            )));
        }
        if self.pcr.p == 0 {
            return Err(Error::Validation("retained rank must be at least 1".into()));
        }
        if self.policy == PolicyVariant::ShiftedTwo && self.k != 2 {
            return Err(Error::Validation(format!(
                "the two-intervention policy needs k = 2, got k = {}",
                self.k
            )));
        }
        match &self.world {
            WorldModel::IidUniform { unit_half_width } => {
                if !unit_half_width.is_finite() || *unit_half_width <= 0.0 || *unit_half_width > 1.0
                {
                    return Err(Error::Validation(format!(
                        "unit half-width must lie in (0, 1], got {unit_half_width}"
                    )));
                }
            }
            WorldModel::SemiSynthetic => {
                if (self.s, self.t0, self.t, self.k) != (3, 5, 8, 2) {
                    return Err(Error::Validation(
                        "the semi-synthetic world is fixed at s=3, T0=5, T=8, k=2".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// One strategic test unit, scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitRecord {
    pub unit: usize,
    /// Ground-truth type: the expected-reward argmax.
    pub unit_type: usize,
    /// What the policy assigned after the unit's best response.
    pub assigned: usize,
    /// Truthful argmax of the learned reward estimates (two-intervention
    /// runs only); the equivalence reference.
    pub naive_assigned: Option<usize>,
    pub effort: f64,
    pub moved: bool,
    pub regret: f64,
    pub regret_bound: f64,
    pub bound_ok: bool,
    /// Expected-reward margin of the unit's type over the runner-up.
    pub reward_gap: f64,
}

/// Aggregate outcome of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Two-intervention runs only; at most 1 up to rounding.
    pub normalized_delta_revenue: Option<f64>,
    pub mean_squared_regret: f64,
    /// Share of boundary-excluded units assigned something other than their
    /// type.
    pub misassignment_rate: f64,
    /// Strategic-vs-truthful assignment disagreements on two-intervention
    /// shifted runs; `None` where the comparison is not defined.
    pub equivalence_mismatches: Option<usize>,
    pub units: Vec<UnitRecord>,
}

impl Metrics {
    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

const WORLD_TAG: u64 = 1;
const TRAIN_UNITS_TAG: u64 = 2;
const TRAIN_PANEL_TAG: u64 = 3;
const RCT_TAG: u64 = 4;
const TEST_UNITS_TAG: u64 = 5;
const TEST_PANEL_TAG: u64 = 6;
const SEMI_NOISE_TAG: u64 = 7;

fn sub_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn iid_world(
    config: &ExperimentConfig,
    half_width: f64,
) -> Result<(CounterfactualPanel, CounterfactualPanel)> {
    // Cap factor entries so |<u, v>| <= s * fw * hw stays below 1.
    let factor_width = 0.99 / (config.s as f64 * half_width);
    let mut rng = ChaCha12Rng::seed_from_u64(sub_seed(config.seed, WORLD_TAG));
    let pre: Vec<DVector<f64>> = (0..config.t0)
        .map(|_| DVector::from_fn(config.s, |_, _| rng.random_range(-factor_width..factor_width)))
        .collect();
    let factors: Vec<Vec<DVector<f64>>> = (0..config.k)
        .map(|_| {
            let mut rows = pre.clone();
            rows.extend((config.t0..config.t).map(|_| {
                DVector::from_fn(config.s, |_, _| rng.random_range(-factor_width..factor_width))
            }));
            rows
        })
        .collect();
    let spec = LatentFactorSpec::new(config.s, config.t0, config.t, factors, config.sigma)?;
    let draw_units = |count: usize, tag: u64| -> Result<UnitFactors> {
        let mut rng = ChaCha12Rng::seed_from_u64(sub_seed(config.seed, tag));
        UnitFactors::new(
            (0..count)
                .map(|_| {
                    DVector::from_fn(config.s, |_, _| rng.random_range(-half_width..half_width))
                })
                .collect(),
        )
    };
    let train_units = draw_units(config.m_train, TRAIN_UNITS_TAG)?;
    let test_units = draw_units(config.m_test, TEST_UNITS_TAG)?;
    let train =
        generate_counterfactuals(&spec, &train_units, sub_seed(config.seed, TRAIN_PANEL_TAG))?;
    let test = generate_counterfactuals(&spec, &test_units, sub_seed(config.seed, TEST_PANEL_TAG))?;
    Ok((train, test))
}

/// Per-period noise multipliers of the semi-synthetic world.
const SEMI_NOISE_PROFILE: [f64; 8] = [1.0, 1.3, 0.8, 1.1, 0.9, 1.4, 0.8, 1.2];

fn semi_synthetic_factors() -> Vec<Vec<DVector<f64>>> {
    let season = |t: usize| TAU * (t as f64) / 7.0;
    let baseline: Vec<DVector<f64>> = (1..=8)
        .map(|t| DVector::from_row_slice(&[0.7, 0.5 * season(t).sin(), 0.5 * season(t).cos()]))
        .collect();
    let mut uplifted = baseline.clone();
    for (t, row) in uplifted.iter_mut().enumerate().skip(5) {
        let phase = season(t + 1) + 1.0;
        *row = DVector::from_row_slice(&[0.7, -0.5 * phase.sin(), 0.5 * phase.cos()]);
    }
    vec![baseline, uplifted]
}

fn semi_synthetic_units(count: usize, seed: u64) -> Result<UnitFactors> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    UnitFactors::new(
        (0..count)
            .map(|_| {
                DVector::from_row_slice(&[
                    rng.random_range(0.3..0.9),
                    rng.random_range(-0.35..0.35),
                    rng.random_range(-0.35..0.35),
                ])
            })
            .collect(),
    )
}

/// Expected trajectories from the fixed factors, plus heteroscedastic
/// truncated noise: period `t` gets `sigma * SEMI_NOISE_PROFILE[t]`.
fn semi_synthetic_panel(
    units: &UnitFactors,
    sigma: f64,
    noise_seed: u64,
) -> Result<CounterfactualPanel> {
    let spec = LatentFactorSpec::new(3, 5, 8, semi_synthetic_factors(), 0.0)?;
    let mut panel = generate_counterfactuals(&spec, units, noise_seed)?;
    for (i, noisy_i) in panel.noisy.iter_mut().enumerate() {
        let mut rng = ChaCha12Rng::seed_from_u64(noise_seed);
        rng.set_stream(i as u64);
        let pre_noise: Vec<f64> =
            (0..5).map(|t| truncated_gaussian(&mut rng, sigma) * SEMI_NOISE_PROFILE[t]).collect();
        for arm in noisy_i.iter_mut() {
            for (t, x) in arm.iter_mut().enumerate().take(5) {
                *x += pre_noise[t];
            }
            for (t, x) in arm.iter_mut().enumerate().skip(5) {
                *x += truncated_gaussian(&mut rng, sigma) * SEMI_NOISE_PROFILE[t];
            }
        }
    }
    panel.seed = noise_seed;
    Ok(panel)
}

fn semi_synthetic_world(
    config: &ExperimentConfig,
) -> Result<(CounterfactualPanel, CounterfactualPanel)> {
    let train_units = semi_synthetic_units(config.m_train, sub_seed(config.seed, TRAIN_UNITS_TAG))?;
    let test_units = semi_synthetic_units(config.m_test, sub_seed(config.seed, TEST_UNITS_TAG))?;
    let train = semi_synthetic_panel(
        &train_units,
        config.sigma,
        sub_seed(config.seed, SEMI_NOISE_TAG ^ TRAIN_PANEL_TAG),
    )?;
    let test = semi_synthetic_panel(
        &test_units,
        config.sigma,
        sub_seed(config.seed, SEMI_NOISE_TAG ^ TEST_PANEL_TAG),
    )?;
    Ok((train, test))
}

/// Cap the global worker-thread count. Call once, before any parallel work;
/// results never depend on the thread count, only throughput does.
pub fn configure_jobs(jobs: usize) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build_global()
        .map_err(|e| Error::Validation(format!("jobs: {e}")))
}

/// Learn per-intervention reward estimates from an observed panel, then
/// build the deployed policy variant around them. Every variant shares the
/// same estimation pipeline; they differ only in the decision rule.
pub fn build_policy(
    variant: PolicyVariant,
    train: &PanelDataset,
    omega: &RewardWeights,
    delta_hat: f64,
    pcr: &PcrConfig,
) -> Result<(InterventionPolicy, crate::estimation::LearnedBetas)> {
    let (_, learned) = learn_multi(train, omega, delta_hat, pcr)?;
    let betas = BetaSet::new(learned.beta_hats.clone())?;
    let policy = match variant {
        PolicyVariant::ShiftedTwo => {
            if train.k != 2 {
                return Err(Error::Validation(format!(
                    "the two-intervention policy needs k = 2, got k = {}",
                    train.k
                )));
            }
            InterventionPolicy::shifted_two(
                learned.beta_hats[0].clone(),
                learned.beta_hats[1].clone(),
                delta_hat,
            )?
        }
        PolicyVariant::ShiftedMulti => InterventionPolicy::shifted_multi(betas, delta_hat)?,
        PolicyVariant::MinIndex => InterventionPolicy::min_index_continuum(betas, delta_hat)?,
        PolicyVariant::Naive => InterventionPolicy::naive(betas)?,
        PolicyVariant::Si => {
            InterventionPolicy::synthetic_interventions(train.clone(), omega.clone(), pcr.p)?
        }
    };
    Ok((policy, learned))
}

fn world_panels(config: &ExperimentConfig) -> Result<(CounterfactualPanel, CounterfactualPanel)> {
    match &config.world {
        WorldModel::IidUniform { unit_half_width } => iid_world(config, *unit_half_width),
        WorldModel::SemiSynthetic => semi_synthetic_world(config),
    }
}

/// The artifacts a config's generation step produces: the RCT-assigned
/// observed training panel, and the truthful pre-period submissions of the
/// test units (one row per unit).
pub fn panels(config: &ExperimentConfig) -> Result<(PanelDataset, DMatrix<f64>)> {
    config.validate()?;
    let (train_panel, test_panel) = world_panels(config)?;
    let assignment = rct_assign(config.m_train, config.k, sub_seed(config.seed, RCT_TAG))?;
    let train = observe(&train_panel, &assignment)?;
    let mut test_pre = DMatrix::zeros(config.m_test, config.t0);
    for i in 0..config.m_test {
        test_pre.set_row(i, &test_panel.noisy[i][0].rows(0, config.t0).transpose());
    }
    Ok((train, test_pre))
}

fn expected_type(expected_rewards: &[f64]) -> (usize, f64) {
    let mut best = 0usize;
    for d in 1..expected_rewards.len() {
        if expected_rewards[d] >= expected_rewards[best] {
            best = d;
        }
    }
    let runner_up = expected_rewards
        .iter()
        .enumerate()
        .filter(|&(d, _)| d != best)
        .map(|(_, &r)| r)
        .fold(f64::NEG_INFINITY, f64::max);
    (best, expected_rewards[best] - runner_up)
}

fn empty_metrics(config: &ExperimentConfig) -> Metrics {
    let shifted_two_arm = config.k == 2
        && matches!(config.policy, PolicyVariant::ShiftedTwo | PolicyVariant::ShiftedMulti);
    Metrics {
        normalized_delta_revenue: None,
        mean_squared_regret: 0.0,
        misassignment_rate: 0.0,
        equivalence_mismatches: shifted_two_arm.then_some(0),
        units: Vec::new(),
    }
}

/// Run the full protocol: train truthfully under an RCT, learn the policy
/// with the deployed shift, let fresh units best-respond with their true
/// budget, and score assignments against ground-truth expected rewards.
/// Deterministic for a fixed config.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Metrics> {
    config.validate()?;
    let (train_panel, test_panel) = world_panels(config)?;
    let assignment = rct_assign(config.m_train, config.k, sub_seed(config.seed, RCT_TAG))?;
    let train = observe(&train_panel, &assignment)?;
    let omega = RewardWeights::new(DVector::from_vec(config.omega.clone()))?;
    let (policy, learned) =
        build_policy(config.policy, &train, &omega, config.delta_hat, &config.pcr)?;
    let betas = BetaSet::new(learned.beta_hats.clone())?;
    if config.m_test == 0 {
        return Ok(empty_metrics(config));
    }
    let truthful_reference =
        if config.k == 2 { Some(InterventionPolicy::naive(betas.clone())?) } else { None };

    let post_len = config.t - config.t0;
    let records = (0..config.m_test)
        .into_par_iter()
        .map(|i| -> Result<UnitRecord> {
            let y = test_panel.noisy[i][0].rows(0, config.t0).into_owned();
            let expected: Vec<f64> = (0..config.k)
                .map(|d| {
                    let post = test_panel.expected[i][d].rows(config.t0, post_len).into_owned();
                    principal_reward(&post, &omega)
                })
                .collect::<Result<Vec<f64>>>()?;
            let (unit_type, reward_gap) = expected_type(&expected);
            let outcome = policy.best_response(&y, config.delta_true)?;
            let r_hat: Vec<f64> = (0..config.k).map(|d| betas.beta(d).dot(&y)).collect();
            let (regret, regret_bound, bound_ok) = crate::estimation::regret_decomposition(
                outcome.achieved_intervention,
                unit_type,
                &r_hat,
                &expected,
            )?;
            let naive_assigned = match &truthful_reference {
                Some(p) => Some(p.assign(&y)?),
                None => None,
            };
            Ok(UnitRecord {
                unit: i,
                unit_type,
                assigned: outcome.achieved_intervention,
                naive_assigned,
                effort: outcome.effort,
                moved: outcome.moved,
                regret,
                regret_bound,
                bound_ok,
                reward_gap,
            })
        })
        .collect::<Result<Vec<UnitRecord>>>()?;

    let mut mis_num = 0usize;
    let mut mis_den = 0usize;
    for r in &records {
        if r.reward_gap > BOUNDARY_REWARD_GAP {
            mis_den += 1;
            if r.assigned != r.unit_type {
                mis_num += 1;
            }
        }
    }
    let misassignment_rate = if mis_den == 0 { 0.0 } else { mis_num as f64 / mis_den as f64 };
    let mean_squared_regret =
        records.iter().map(|r| r.regret * r.regret).sum::<f64>() / records.len() as f64;

    let normalized = if config.k == 2 {
        let assigned: Vec<usize> = records.iter().map(|r| r.assigned).collect();
        let optimal: Vec<usize> = records.iter().map(|r| r.unit_type).collect();
        let expected: Vec<[f64; 2]> = (0..config.m_test)
            .map(|i| {
                let er = |d: usize| {
                    let post = test_panel.expected[i][d].rows(config.t0, post_len).into_owned();
                    principal_reward(&post, &omega)
                };
                Ok([er(0)?, er(1)?])
            })
            .collect::<Result<Vec<[f64; 2]>>>()?;
        let value = normalized_delta_revenue(&assigned, &optimal, &expected)?;
        if value > 1.0 + 1e-9 {
            return Err(Error::Solver(format!(
                "normalized delta revenue {value} exceeds 1; assignment scoring is inconsistent"
            )));
        }
        Some(value)
    } else {
        None
    };

    let shifted_two_arm = config.k == 2
        && matches!(config.policy, PolicyVariant::ShiftedTwo | PolicyVariant::ShiftedMulti);
    let equivalence_mismatches = shifted_two_arm.then(|| {
        records.iter().filter(|r| r.naive_assigned.is_some_and(|n| n != r.assigned)).count()
    });
    if let Some(mismatches) = equivalence_mismatches {
        // With a correctly specified shift, the strategic outcome must match
        // the truthful argmax unit for unit.
        if config.delta_hat == config.delta_true && mismatches > 0 {
            return Err(Error::Solver(format!(
                "strategic assignments diverged from the truthful argmax on {mismatches} units"
            )));
        }
    }

    Ok(Metrics {
        normalized_delta_revenue: normalized,
        mean_squared_regret,
        misassignment_rate,
        equivalence_mismatches,
        units: records,
    })
}

/// Realized reward improvement over the unchosen arm, normalized by the
/// optimal assignment's improvement. `expected_rewards[i]` holds the two
/// expected rewards of unit `i`.
pub fn normalized_delta_revenue(
    assigned: &[usize],
    optimal: &[usize],
    expected_rewards: &[[f64; 2]],
) -> Result<f64> {
    if assigned.len() != optimal.len() || assigned.len() != expected_rewards.len() {
        return Err(Error::Validation(format!(
            "mismatched lengths: {} assigned, {} optimal, {} reward pairs",
            assigned.len(),
            optimal.len(),
            expected_rewards.len()
        )));
    }
    let mut numerator = 0.0;
    let mut denominator = 0.0;
    for ((&d, &opt), er) in assigned.iter().zip(optimal).zip(expected_rewards) {
        if d > 1 || opt > 1 {
            return Err(Error::Validation(
                "the revenue metric is defined for interventions {0, 1} only".into(),
            ));
        }
        numerator += er[d] - er[1 - d];
        denominator += er[opt] - er[1 - opt];
    }
    if denominator == 0.0 {
        return Err(Error::Validation(
            "all units are indifferent: zero revenue denominator".into(),
        ));
    }
    Ok(numerator / denominator)
}

/// One row of the shift-misspecification sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub ratio: f64,
    pub mean_ndr: f64,
    pub std_ndr: f64,
    pub mean_regret: f64,
    pub misassignment: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("ratio,mean_ndr,std_ndr,mean_regret,misassignment\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
                r.ratio, r.mean_ndr, r.std_ndr, r.mean_regret, r.misassignment
            ));
        }
        out
    }
}

/// Re-run the experiment at `delta_hat = ratio * delta_true` for each ratio,
/// over `n_seeds` consecutive seeds, in parallel. Trials are merged in a
/// fixed (seed, ratio) order so the aggregates are deterministic.
pub fn delta_sweep(base: &ExperimentConfig, ratios: &[f64], n_seeds: usize) -> Result<SweepTable> {
    base.validate()?;
    if base.k != 2 {
        return Err(Error::Validation("the revenue sweep needs exactly two interventions".into()));
    }
    if ratios.is_empty() || n_seeds == 0 {
        return Err(Error::Validation("need at least one ratio and one seed".into()));
    }
    for &r in ratios {
        if !r.is_finite() || r < 0.0 {
            return Err(Error::Validation(format!(
                "ratios must be finite and nonnegative, got {r}"
            )));
        }
    }
    let jobs: Vec<(u64, usize)> = (0..n_seeds)
        .flat_map(|trial| {
            let seed = base.seed.wrapping_add(trial as u64);
            (0..ratios.len()).map(move |ri| (seed, ri))
        })
        .collect();
    let mut results: Vec<((u64, usize), Metrics)> = jobs
        .par_iter()
        .map(|&(seed, ri)| {
            let mut config = base.clone();
            config.seed = seed;
            config.delta_hat = ratios[ri] * config.delta_true;
            run_experiment(&config).map(|m| ((seed, ri), m))
        })
        .collect::<Result<Vec<_>>>()?;
    results.sort_by_key(|r| r.0);

    let mut per_ratio: Vec<Vec<&Metrics>> = vec![Vec::new(); ratios.len()];
    for ((_, ri), m) in &results {
        per_ratio[*ri].push(m);
    }
    let mut rows = Vec::with_capacity(ratios.len());
    for (ri, trials) in per_ratio.iter().enumerate() {
        let ndrs: Vec<f64> = trials
            .iter()
            .map(|m| {
                m.normalized_delta_revenue
                    .ok_or_else(|| Error::Solver("sweep trial produced no revenue metric".into()))
            })
            .collect::<Result<Vec<f64>>>()?;
        let n = ndrs.len() as f64;
        let mean_ndr = ndrs.iter().sum::<f64>() / n;
        let std_ndr = if ndrs.len() < 2 {
            0.0
        } else {
            (ndrs.iter().map(|v| (v - mean_ndr).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        let mean_regret = trials
            .iter()
            .map(|m| {
                if m.units.is_empty() {
                    0.0
                } else {
                    m.units.iter().map(|u| u.regret).sum::<f64>() / m.units.len() as f64
                }
            })
            .sum::<f64>()
            / n;
        let misassignment = trials.iter().map(|m| m.misassignment_rate).sum::<f64>() / n;
        rows.push(SweepRow { ratio: ratios[ri], mean_ndr, std_ndr, mean_regret, misassignment });
    }
    Ok(SweepTable { rows })
}

/// The three-intervention construction where no positive budget admits a
/// strategyproof policy once the unit lines crowd the top type's cone.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImpossibilityReport {
    pub alpha: f64,
    pub zeta: f64,
    pub delta: f64,
    /// `zeta/2 + alpha`.
    pub lhs: f64,
    /// `delta * (sqrt(1.25) - 0.5)`.
    pub rhs: f64,
    /// Separation is impossible when `lhs <= rhs`.
    pub impossible: bool,
    pub betas: BetaSet,
    pub finite: SeparationReport,
    pub continuum: SeparationReport,
    /// What the top-type unit actually reaches under the shifted policy.
    pub top_unit_achieved: usize,
    pub top_unit_blocked: bool,
    /// No sampled lower-type unit reaches the top intervention either.
    pub lower_units_blocked: bool,
}

impl ImpossibilityReport {
    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Reward vectors of the impossibility construction.
pub fn impossibility_betas() -> BetaSet {
    BetaSet::new(vec![
        DVector::from_row_slice(&[-1.0, 0.5]),
        DVector::from_row_slice(&[1.0, 0.5]),
        DVector::from_row_slice(&[0.0, 1.0]),
    ])
    .expect("fixed construction is valid")
}

/// Build the two-line construction, evaluate the impossibility inequality,
/// run both separation checks, and confirm through best responses that the
/// shifted policy blocks the top type.
pub fn demo_impossible(alpha: f64, zeta: f64, delta: f64) -> Result<ImpossibilityReport> {
    for (name, v) in [("alpha", alpha), ("zeta", zeta), ("delta", delta)] {
        if !v.is_finite() || v <= 0.0 {
            return Err(Error::Validation(format!("{name} must be positive and finite, got {v}")));
        }
    }
    let betas = impossibility_betas();
    let lhs = 0.5 * zeta + alpha;
    let rhs = delta * (1.25_f64.sqrt() - 0.5);
    let impossible = lhs <= rhs;

    // Pre-period factors are the identity, so submitted vectors are the unit
    // factors themselves: two half-lines flanking the top type's cone, plus
    // the top-type unit itself. The half-lines share an apex at [0, -2*alpha],
    // and the balls around the sampled units cover the top unit's whole ball
    // only if the samples hug that apex, so sample densely.
    let mut offsets: Vec<f64> = (1..=20).map(|i| 0.005 * delta * i as f64).collect();
    offsets.extend((1..=24).map(|j| 0.1 * delta + 0.05 * delta * j as f64));
    let mut units: Vec<(DVector<f64>, usize)> = Vec::new();
    for &v1 in &offsets {
        units.push((DVector::from_row_slice(&[-v1, -2.0 * alpha + 2.0 * v1]), 0));
    }
    for &v1 in &offsets {
        units.push((DVector::from_row_slice(&[v1, 2.0 * v1 - 2.0 * alpha]), 1));
    }
    let top_unit = DVector::from_row_slice(&[0.0, zeta]);
    units.push((top_unit.clone(), 2));

    let finite = separation_of_types(&units, delta, SeparationMode::Finite, None)?;
    let continuum = separation_of_types(&units, delta, SeparationMode::Continuum, Some(&betas))?;

    let policy = InterventionPolicy::shifted_multi(betas.clone(), delta)?;
    let top_outcome = policy.best_response(&top_unit, delta)?;
    let top_unit_achieved = top_outcome.achieved_intervention;
    let mut lower_units_blocked = true;
    for (y, _) in units.iter().take(units.len() - 1) {
        if policy.best_response(y, delta)?.achieved_intervention == 2 {
            lower_units_blocked = false;
        }
    }
    Ok(ImpossibilityReport {
        alpha,
        zeta,
        delta,
        lhs,
        rhs,
        impossible,
        betas,
        finite,
        continuum,
        top_unit_achieved,
        top_unit_blocked: top_unit_achieved != 2,
        lower_units_blocked,
    })
}

/// Parameters of the donor-regression failure demonstration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiFailureConfig {
    /// Effort budget, also the learned policy's shift.
    pub delta: f64,
    /// Distance between the two type centers.
    pub center_separation: f64,
    pub sigma: f64,
    pub m_train: usize,
    pub m_test: usize,
    pub n_seeds: usize,
    pub base_seed: u64,
    pub p: usize,
}

impl Default for SiFailureConfig {
    fn default() -> Self {
        SiFailureConfig {
            delta: 0.5,
            center_separation: 0.25,
            sigma: 0.02,
            m_train: 200,
            m_test: 500,
            n_seeds: 10,
            base_seed: 1,
            p: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiFailureSeed {
    pub seed: u64,
    pub si_misassignment: f64,
    pub shifted_misassignment: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiFailureReport {
    pub config: SiFailureConfig,
    pub seeds: Vec<SiFailureSeed>,
    pub min_si_misassignment: f64,
    pub max_shifted_misassignment: f64,
}

impl SiFailureReport {
    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Two unit types whose centers sit within the effort budget of each other:
/// the donor-regression baseline, lacking a shift, lets every strategic
/// lower-type unit buy the treatment; the shifted policy does not.
pub fn demo_si_failure(config: &SiFailureConfig) -> Result<SiFailureReport> {
    if !config.delta.is_finite() || config.delta <= 0.0 {
        return Err(Error::Validation(format!("delta must be positive, got {}", config.delta)));
    }
    if !config.center_separation.is_finite()
        || config.center_separation <= 0.0
        || config.center_separation > 2.0
    {
        return Err(Error::Validation(format!(
            "center separation must lie in (0, 2], got {}",
            config.center_separation
        )));
    }
    if !config.sigma.is_finite() || config.sigma < 0.0 {
        return Err(Error::Validation(format!("sigma must be nonnegative, got {}", config.sigma)));
    }
    if config.m_train < 4 || config.m_test == 0 || config.n_seeds == 0 || config.p == 0 {
        return Err(Error::Validation(
            "need at least 4 training units, 1 test unit, 1 seed, and rank 1".into(),
        ));
    }

    let half = config.center_separation / 2.0;
    let centers = [DVector::from_row_slice(&[-half, 0.5]), DVector::from_row_slice(&[half, 0.5])];
    // Identity pre-period factors over two periods; one post period whose
    // factor differs in sign on the first coordinate, so the first unit
    // coordinate decides the type.
    let factors: Vec<Vec<DVector<f64>>> = vec![
        vec![
            DVector::from_row_slice(&[1.0, 0.0]),
            DVector::from_row_slice(&[0.0, 1.0]),
            DVector::from_row_slice(&[-0.5, 0.5]),
        ],
        vec![
            DVector::from_row_slice(&[1.0, 0.0]),
            DVector::from_row_slice(&[0.0, 1.0]),
            DVector::from_row_slice(&[0.5, 0.5]),
        ],
    ];
    let spec = LatentFactorSpec::new(2, 2, 3, factors, config.sigma)?;
    let omega = RewardWeights::ones(1);
    let cluster_units = |count: usize| -> Result<UnitFactors> {
        UnitFactors::new((0..count).map(|i| centers[i % 2].clone()).collect())
    };

    let seeds: Vec<u64> =
        (0..config.n_seeds).map(|i| config.base_seed.wrapping_add(i as u64)).collect();
    let mut rows: Vec<SiFailureSeed> = seeds
        .par_iter()
        .map(|&seed| -> Result<SiFailureSeed> {
            let train_units = cluster_units(config.m_train)?;
            let train_panel =
                generate_counterfactuals(&spec, &train_units, sub_seed(seed, TRAIN_PANEL_TAG))?;
            let assignment = rct_assign(config.m_train, 2, sub_seed(seed, RCT_TAG))?;
            let train = observe(&train_panel, &assignment)?;
            let si = InterventionPolicy::synthetic_interventions(
                train.clone(),
                omega.clone(),
                config.p,
            )?;
            let (shifted, _) = crate::estimation::learn_two(
                &train,
                &omega,
                config.delta,
                &PcrConfig::rank(config.p),
            )?;

            let test_units = cluster_units(config.m_test)?;
            let test_panel =
                generate_counterfactuals(&spec, &test_units, sub_seed(seed, TEST_PANEL_TAG))?;
            let mut si_mis = 0usize;
            let mut shifted_mis = 0usize;
            for i in 0..config.m_test {
                let y = test_panel.noisy[i][0].rows(0, 2).into_owned();
                let expected: Vec<f64> = (0..2)
                    .map(|d| {
                        let post = test_panel.expected[i][d].rows(2, 1).into_owned();
                        principal_reward(&post, &omega)
                    })
                    .collect::<Result<Vec<f64>>>()?;
                let (unit_type, _) = expected_type(&expected);
                if si.best_response(&y, config.delta)?.achieved_intervention != unit_type {
                    si_mis += 1;
                }
                if shifted.best_response(&y, config.delta)?.achieved_intervention != unit_type {
                    shifted_mis += 1;
                }
            }
            Ok(SiFailureSeed {
                seed,
                si_misassignment: si_mis as f64 / config.m_test as f64,
                shifted_misassignment: shifted_mis as f64 / config.m_test as f64,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by_key(|r| r.seed);
    let min_si = rows.iter().map(|r| r.si_misassignment).fold(f64::INFINITY, f64::min);
    let max_shifted =
        rows.iter().map(|r| r.shifted_misassignment).fold(f64::NEG_INFINITY, f64::max);
    Ok(SiFailureReport {
        config: config.clone(),
        seeds: rows,
        min_si_misassignment: min_si,
        max_shifted_misassignment: max_shifted,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapNecessityRow {
    pub n: u64,
    /// Achieved intervention when the second target is perturbed downward.
    pub achieved_minus: usize,
    /// Achieved intervention when it is perturbed upward.
    pub achieved_plus: usize,
    /// The best response depends on the perturbation's sign.
    pub flips: bool,
    pub predicted_flip: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapNecessityReport {
    pub theta1: f64,
    pub theta2: f64,
    pub c: f64,
    pub alpha_small: f64,
    pub delta: f64,
    /// The probe unit's pre-period value.
    pub y: f64,
    pub rows: Vec<GapNecessityRow>,
}

impl GapNecessityReport {
    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Best response under a one-dimensional threshold rule: intervention 2 at
/// or above `theta2_hat`, intervention 1 at or above `theta1`.
fn threshold_best_response(y: f64, theta1: f64, theta2_hat: f64, delta: f64) -> usize {
    let to_two = (theta2_hat - y).max(0.0);
    if to_two <= delta {
        return 2;
    }
    let to_one = (theta1 - y).max(0.0);
    if to_one <= delta {
        1
    } else {
        0
    }
}

/// A unit sitting `delta + alpha_small` below the second target flips its
/// best response with the sign of an O(c/n) estimation perturbation for
/// every `n` below `c / alpha_small`: arbitrarily small estimation error
/// moves the outcome discontinuously.
pub fn demo_gap_necessity(
    theta1: f64,
    theta2: f64,
    c: f64,
    alpha_small: f64,
    delta: f64,
    n_values: &[u64],
) -> Result<GapNecessityReport> {
    if !theta1.is_finite() || !theta2.is_finite() || theta1 >= theta2 {
        return Err(Error::Validation(format!(
            "targets must be ordered, got theta1 = {theta1}, theta2 = {theta2}"
        )));
    }
    for (name, v) in [("c", c), ("alpha_small", alpha_small), ("delta", delta)] {
        if !v.is_finite() || v <= 0.0 {
            return Err(Error::Validation(format!("{name} must be positive and finite, got {v}")));
        }
    }
    if n_values.is_empty() || n_values.contains(&0) {
        return Err(Error::Validation("need at least one positive n".into()));
    }
    let y = theta2 - delta - alpha_small;
    if theta1 - y >= delta {
        return Err(Error::Validation(format!(
            "the probe unit at {y} cannot reach the first target {theta1} within {delta}"
        )));
    }
    let rows = n_values
        .iter()
        .map(|&n| {
            let perturbation = c / n as f64;
            let achieved_minus = threshold_best_response(y, theta1, theta2 - perturbation, delta);
            let achieved_plus = threshold_best_response(y, theta1, theta2 + perturbation, delta);
            GapNecessityRow {
                n,
                achieved_minus,
                achieved_plus,
                flips: achieved_minus != achieved_plus,
                predicted_flip: perturbation >= alpha_small,
            }
        })
        .collect();
    Ok(GapNecessityReport { theta1, theta2, c, alpha_small, delta, y, rows })
}

/// Read a long-format panel CSV (`unit_id,t,outcome,assigned_intervention`,
/// `t` 1-based) with rows in any order; unit indices follow first appearance.
pub fn ingest_csv(path: impl AsRef<Path>, t0: usize) -> Result<PanelDataset> {
    let file = std::fs::File::open(path)?;
    ingest_csv_from_reader(file, t0)
}

/// [`ingest_csv`] over any byte stream.
pub fn ingest_csv_from_reader<R: Read>(reader: R, t0: usize) -> Result<PanelDataset> {
    let mut rdr =
        csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    {
        let headers = rdr.headers()?;
        let expected = ["unit_id", "t", "outcome", "assigned_intervention"];
        if headers.len() != expected.len()
            || !headers.iter().zip(expected.iter()).all(|(h, e)| h == *e)
        {
            return Err(Error::Validation(format!(
                "header must be unit_id,t,outcome,assigned_intervention, got {}",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
    }

    struct UnitRows {
        assigned: usize,
        first_line: u64,
        outcomes: HashMap<u64, (f64, u64)>,
    }
    let mut order: Vec<String> = Vec::new();
    let mut units: HashMap<String, UnitRows> = HashMap::new();
    let mut max_t = 0u64;
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 4 {
            return Err(Error::Validation(format!(
                "line {line}: expected 4 fields, got {}",
                record.len()
            )));
        }
        let id = record[0].to_string();
        let t: u64 = record[1].parse().map_err(|e| {
            Error::Validation(format!("line {line}: bad period {:?}: {e}", &record[1]))
        })?;
        let outcome: f64 = record[2].parse().map_err(|e| {
            Error::Validation(format!("line {line}: bad outcome {:?}: {e}", &record[2]))
        })?;
        let assigned: usize = record[3].parse().map_err(|e| {
            Error::Validation(format!("line {line}: bad intervention {:?}: {e}", &record[3]))
        })?;
        if t == 0 {
            return Err(Error::Validation(format!("line {line}: periods are 1-based, got 0")));
        }
        if !outcome.is_finite() {
            return Err(Error::Validation(format!("line {line}: outcome must be finite")));
        }
        max_t = max_t.max(t);
        match units.get_mut(&id) {
            None => {
                order.push(id.clone());
                let mut outcomes = HashMap::new();
                outcomes.insert(t, (outcome, line));
                units.insert(id, UnitRows { assigned, first_line: line, outcomes });
            }
            Some(u) => {
                if u.assigned != assigned {
                    return Err(Error::Validation(format!(
                        "line {line}: unit {id} assigned {assigned}, but line {} says {}",
                        u.first_line, u.assigned
                    )));
                }
                if let Some((_, prev)) = u.outcomes.insert(t, (outcome, line)) {
                    return Err(Error::Validation(format!(
                        "line {line}: duplicate period t={t} for unit {id} (first at line {prev})"
                    )));
                }
            }
        }
    }
    if order.is_empty() {
        return Err(Error::Validation("no data rows".into()));
    }
    let t_total = max_t as usize;
    if t0 == 0 || t0 >= t_total {
        return Err(Error::Validation(format!("pre-period {t0} must lie in [1, {})", t_total)));
    }
    for id in &order {
        let u = &units[id];
        for t in 1..=max_t {
            if !u.outcomes.contains_key(&t) {
                return Err(Error::Validation(format!("unit {id} missing period t={t}")));
            }
        }
    }

    let m = order.len();
    let mut y_pre = DMatrix::zeros(m, t0);
    let mut y_post = Vec::with_capacity(m);
    let mut assigned = Vec::with_capacity(m);
    for (i, id) in order.iter().enumerate() {
        let u = &units[id];
        for t in 0..t0 {
            y_pre[(i, t)] = u.outcomes[&(t as u64 + 1)].0;
        }
        y_post.push(DVector::from_fn(t_total - t0, |j, _| u.outcomes[&((t0 + j) as u64 + 1)].0));
        assigned.push(u.assigned);
    }
    let k = assigned.iter().copied().max().unwrap_or(0) + 1;
    let mut arms = vec![Vec::new(); k];
    for (i, &d) in assigned.iter().enumerate() {
        arms[d].push(i);
    }
    Ok(PanelDataset { y_pre, assigned, y_post, arms, t0, k })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::in_type_ball;
    use approx::assert_abs_diff_eq;

    fn small_config(seed: u64) -> ExperimentConfig {
        ExperimentConfig {
            s: 2,
            t0: 3,
            t: 5,
            k: 2,
            sigma: 0.0,
            m_train: 40,
            m_test: 40,
            delta_true: 0.6,
            delta_hat: 0.6,
            omega: vec![1.0, 1.0],
            pcr: PcrConfig::rank(2),
            seed,
            policy: PolicyVariant::ShiftedTwo,
            world: WorldModel::IidUniform { unit_half_width: 0.9 },
        }
    }

    #[test]
    fn noiseless_matched_run_is_perfect() {
        let metrics = run_experiment(&small_config(11)).unwrap();
        assert_eq!(metrics.misassignment_rate, 0.0);
        assert_eq!(metrics.normalized_delta_revenue, Some(1.0));
        assert_eq!(metrics.equivalence_mismatches, Some(0));
        assert!(metrics.units.iter().all(|u| u.bound_ok));
        assert!(metrics.mean_squared_regret.abs() < 1e-20);
    }

    #[test]
    fn unshifted_deployment_is_gamed() {
        let mut config = small_config(11);
        config.delta_hat = 0.0;
        let metrics = run_experiment(&config).unwrap();
        assert!(
            metrics.misassignment_rate > 0.0,
            "some boundary-adjacent unit should have bought the treatment"
        );
        assert!(metrics.normalized_delta_revenue.unwrap() < 1.0);
    }

    #[test]
    fn empty_test_set_gives_empty_metrics() {
        let mut config = small_config(3);
        config.m_test = 0;
        let metrics = run_experiment(&config).unwrap();
        assert!(metrics.units.is_empty());
        assert_eq!(metrics.normalized_delta_revenue, None);
        assert_eq!(metrics.mean_squared_regret, 0.0);
    }

    #[test]
    fn identical_configs_give_identical_metrics() {
        let mut config = small_config(7);
        config.sigma = 0.05;
        let a = run_experiment(&config).unwrap();
        let b = run_experiment(&config).unwrap();
        assert_eq!(a.to_json_string().unwrap(), b.to_json_string().unwrap());
    }

    #[test]
    fn experiment_works_for_every_policy_variant() {
        for policy in [
            PolicyVariant::ShiftedTwo,
            PolicyVariant::ShiftedMulti,
            PolicyVariant::MinIndex,
            PolicyVariant::Naive,
            PolicyVariant::Si,
        ] {
            let mut config = small_config(19);
            config.m_test = 10;
            config.sigma = 0.02;
            config.policy = policy;
            let metrics = run_experiment(&config).unwrap();
            assert_eq!(metrics.units.len(), 10, "{policy:?}");
        }
    }

    #[test]
    fn three_intervention_run_reports_no_revenue_metric() {
        let mut config = small_config(23);
        config.k = 3;
        config.policy = PolicyVariant::ShiftedMulti;
        config.m_test = 10;
        let metrics = run_experiment(&config).unwrap();
        assert_eq!(metrics.normalized_delta_revenue, None);
        assert_eq!(metrics.equivalence_mismatches, None);
    }

    #[test]
    fn revenue_metric_matches_hand_values() {
        let er = [[0.0, 1.0], [2.0, 1.0], [0.0, 3.0], [4.0, 1.0]];
        let optimal = [1, 0, 1, 0];
        assert_abs_diff_eq!(normalized_delta_revenue(&optimal, &optimal, &er).unwrap(), 1.0);
        let anti = [0, 1, 0, 1];
        assert_abs_diff_eq!(normalized_delta_revenue(&anti, &optimal, &er).unwrap(), -1.0);
        let er_equal = [[0.0, 1.0], [0.0, 1.0]];
        let optimal2 = [1, 1];
        assert_abs_diff_eq!(normalized_delta_revenue(&[1, 0], &optimal2, &er_equal).unwrap(), 0.0);
        let indifferent = [[1.0, 1.0]];
        assert!(normalized_delta_revenue(&[0], &[0], &indifferent).is_err());
        assert!(normalized_delta_revenue(&[0, 1], &[0], &er_equal).is_err());
        assert!(normalized_delta_revenue(&[2], &[0], &indifferent).is_err());
    }

    #[test]
    fn matched_noiseless_sweep_scores_exactly_one() {
        let table = delta_sweep(&small_config(31), &[1.0], 2).unwrap();
        assert_eq!(table.rows[0].mean_ndr, 1.0);
        assert_eq!(table.rows[0].std_ndr, 0.0);
        assert_eq!(table.rows[0].misassignment, 0.0);
    }

    #[test]
    fn duplicated_ratios_produce_identical_rows() {
        let mut config = small_config(37);
        config.sigma = 0.05;
        config.m_test = 20;
        let table = delta_sweep(&config, &[0.0, 0.0], 2).unwrap();
        assert_eq!(table.rows[0].mean_ndr, table.rows[1].mean_ndr);
        assert_eq!(table.rows[0].std_ndr, table.rows[1].std_ndr);
        assert_eq!(table.rows[0].mean_regret, table.rows[1].mean_regret);
        let csv = table.to_csv_string();
        assert!(csv.starts_with("ratio,mean_ndr,std_ndr,mean_regret,misassignment\n"));
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn impossibility_demo_matches_the_closed_form() {
        let report = demo_impossible(0.01, 0.01, 1.0).unwrap();
        assert_abs_diff_eq!(report.lhs, 0.015);
        assert_abs_diff_eq!(report.rhs, 1.25_f64.sqrt() - 0.5, epsilon = 1e-15);
        assert!(report.impossible);
        assert!(!report.continuum.satisfied);
        assert!(report.continuum.certified);
        assert!(!report.finite.satisfied);
        assert!(report.finite.certified);
        assert!(report.top_unit_blocked);
        assert!(report.lower_units_blocked);

        let easy = demo_impossible(1.0, 1.0, 0.1).unwrap();
        assert_abs_diff_eq!(easy.lhs, 1.5);
        assert!(!easy.impossible);
    }

    #[test]
    fn sampled_line_unit_ball_reaches_the_unshifted_top_cone() {
        let alpha = 0.01;
        let v = DVector::from_row_slice(&[-1.0, -2.0 * alpha + 2.0]);
        assert!(in_type_ball(&v, &impossibility_betas(), 2, 1.0, 1e-9).unwrap());
    }

    #[test]
    fn si_failure_demo_separates_the_two_policies() {
        let config =
            SiFailureConfig { m_train: 60, m_test: 60, n_seeds: 2, ..SiFailureConfig::default() };
        let report = demo_si_failure(&config).unwrap();
        assert!(report.min_si_misassignment >= 0.25, "{report:?}");
        assert!(report.max_shifted_misassignment <= 0.02, "{report:?}");
    }

    #[test]
    fn noiseless_si_failure_flips_every_lower_type_unit() {
        let config = SiFailureConfig {
            sigma: 0.0,
            m_train: 40,
            m_test: 40,
            n_seeds: 1,
            ..SiFailureConfig::default()
        };
        let report = demo_si_failure(&config).unwrap();
        assert_abs_diff_eq!(report.seeds[0].si_misassignment, 0.5);
        assert_eq!(report.seeds[0].shifted_misassignment, 0.0);
    }

    #[test]
    fn distant_centers_leave_the_donor_regression_untricked() {
        let config = SiFailureConfig {
            center_separation: 1.5,
            sigma: 0.0,
            m_train: 40,
            m_test: 40,
            n_seeds: 1,
            ..SiFailureConfig::default()
        };
        let report = demo_si_failure(&config).unwrap();
        assert_eq!(report.seeds[0].si_misassignment, 0.0);
    }

    #[test]
    fn gap_necessity_flips_exactly_below_the_threshold() {
        let report = demo_gap_necessity(0.0, 1.0, 1.0, 0.01, 0.6, &[10, 50, 99, 101, 200]).unwrap();
        for row in &report.rows {
            let expect_flip = row.n < 100;
            assert_eq!(row.flips, expect_flip, "n = {}", row.n);
            assert_eq!(row.predicted_flip, expect_flip, "n = {}", row.n);
            if expect_flip {
                assert_eq!(row.achieved_minus, 2);
                assert_eq!(row.achieved_plus, 1);
            } else {
                assert_eq!(row.achieved_minus, row.achieved_plus);
            }
        }
    }

    #[test]
    fn csv_round_trip_is_identity() {
        let mut config = small_config(41);
        config.sigma = 0.03;
        let (train_panel, _) = iid_world(&config, 0.9).unwrap();
        let assignment = rct_assign(config.m_train, 2, 5).unwrap();
        let data = observe(&train_panel, &assignment).unwrap();
        let text = data.to_csv_string().unwrap();
        let back = ingest_csv_from_reader(text.as_bytes(), data.t0).unwrap();
        assert_eq!(back, data);
    }

    #[test]
    fn ingest_reports_precise_errors() {
        let gap = "unit_id,t,outcome,assigned_intervention\n\
                   a,1,0.5,0\na,2,0.5,0\na,4,0.5,0\n\
                   b,1,0.1,1\nb,2,0.1,1\nb,3,0.1,1\nb,4,0.1,1\n";
        let err = ingest_csv_from_reader(gap.as_bytes(), 2).unwrap_err().to_string();
        assert!(err.contains("unit a") && err.contains("t=3"), "{err}");

        let mixed = "unit_id,t,outcome,assigned_intervention\n\
                     a,1,0.5,0\na,2,0.5,1\n";
        let err = ingest_csv_from_reader(mixed.as_bytes(), 1).unwrap_err().to_string();
        assert!(err.contains("line 3") && err.contains("assigned 1"), "{err}");

        let bad = "unit_id,t,outcome,assigned_intervention\n\
                   a,1,oops,0\na,2,0.5,0\n";
        let err = ingest_csv_from_reader(bad.as_bytes(), 1).unwrap_err().to_string();
        assert!(err.contains("line 2") && err.contains("outcome"), "{err}");

        let dup = "unit_id,t,outcome,assigned_intervention\n\
                   a,1,0.5,0\na,1,0.6,0\na,2,0.5,0\n";
        let err = ingest_csv_from_reader(dup.as_bytes(), 1).unwrap_err().to_string();
        assert!(err.contains("duplicate") && err.contains("line 3"), "{err}");

        let header = "unit,t,outcome,assigned\na,1,0.5,0\n";
        assert!(ingest_csv_from_reader(header.as_bytes(), 1).is_err());
    }

    #[test]
    fn semi_synthetic_world_is_bounded_and_balanced() {
        let config = ExperimentConfig::semi_synthetic(5);
        let (train, test) = semi_synthetic_world(&config).unwrap();
        for panel in [&train, &test] {
            for unit in &panel.expected {
                for arm in unit {
                    assert!(arm.iter().all(|x| x.abs() <= 1.0));
                }
            }
        }
        // Both types must be well represented for the revenue trend to mean
        // anything.
        let omega = RewardWeights::ones(3);
        let mut type_counts = [0usize; 2];
        for i in 0..config.m_test {
            let expected: Vec<f64> = (0..2)
                .map(|d| {
                    let post = test.expected[i][d].rows(5, 3).into_owned();
                    principal_reward(&post, &omega).unwrap()
                })
                .collect();
            type_counts[expected_type(&expected).0] += 1;
        }
        assert!(type_counts[0] >= 20, "{type_counts:?}");
        assert!(type_counts[1] >= 20, "{type_counts:?}");
    }

    #[test]
    fn semi_synthetic_sweep_shows_the_misspecification_trend() {
        let config = ExperimentConfig::semi_synthetic(100);
        let table = delta_sweep(&config, &[0.0, 0.5, 1.0, 5.0], 3).unwrap();
        let ndr: Vec<f64> = table.rows.iter().map(|r| r.mean_ndr).collect();
        assert!(ndr[0] < ndr[1], "{ndr:?}");
        assert!(ndr[1] < ndr[2], "{ndr:?}");
        assert!(ndr[2] > ndr[3], "{ndr:?}");
        assert!(ndr[2] >= 0.9, "{ndr:?}");
    }
}
