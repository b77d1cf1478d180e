//! Latent-factor panel generation with counterfactual ground truth.
//!
//! Outcomes follow a latent factor model: the outcome of unit `i` at time `t`
//! under intervention `d` is the inner product of a time-intervention factor
//! `u_t^(d)` with a unit factor `v_i`, plus bounded noise. The first `T0`
//! periods form the pre-intervention window, during which every unit is under
//! control (`d = 0`); pre-period noise is therefore drawn once per `(i, t)`
//! and shared across counterfactual arms.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Noise is truncated at this many standard deviations.
pub const NOISE_TRUNCATION_SIGMAS: f64 = 4.0;

/// Ground truth of the world: per-intervention time factors plus a noise level.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatentFactorSpec {
    /// Latent dimension.
    pub s: usize,
    /// Pre-intervention length.
    pub t0: usize,
    /// Total horizon (strictly greater than `t0`).
    pub t: usize,
    /// Number of interventions; intervention `0` is control.
    pub k: usize,
    /// `factors[d][t - 1]` is `u_t^(d)`, one vector in `R^s` per intervention
    /// and 1-based time step.
    pub factors: Vec<Vec<DVector<f64>>>,
    /// Noise standard deviation bound.
    pub sigma: f64,
}

impl LatentFactorSpec {
    pub fn new(
        s: usize,
        t0: usize,
        t: usize,
        factors: Vec<Vec<DVector<f64>>>,
        sigma: f64,
    ) -> Result<Self> {
        if s == 0 {
            return Err(Error::Validation("latent dimension s must be positive".into()));
        }
        if t <= t0 {
            return Err(Error::Validation(format!(
                "total horizon T = {t} must exceed pre-intervention length T0 = {t0}"
            )));
        }
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::Validation(format!("sigma must be finite and >= 0, got {sigma}")));
        }
        let k = factors.len();
        if k == 0 {
            return Err(Error::Validation("need at least one intervention".into()));
        }
        for (d, arm) in factors.iter().enumerate() {
            if arm.len() != t {
                return Err(Error::Validation(format!(
                    "intervention {d} has {} time factors, expected T = {t}",
                    arm.len()
                )));
            }
            for (idx, u) in arm.iter().enumerate() {
                if u.len() != s {
                    return Err(Error::Validation(format!(
                        "factor u_{}^({d}) has length {}, expected s = {s}",
                        idx + 1,
                        u.len()
                    )));
                }
                if u.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Validation(format!(
                        "factor u_{}^({d}) contains a non-finite entry",
                        idx + 1
                    )));
                }
            }
        }
        Ok(Self { s, t0, t, k, factors, sigma })
    }

    /// Factor vector `u_t^(d)`; `t` is 1-based.
    pub fn u(&self, d: usize, t: usize) -> &DVector<f64> {
        &self.factors[d][t - 1]
    }

    /// Pre-period control factors stacked as a `T0 x s` matrix (row `t` is
    /// `u_{t+1}^(0)`).
    pub fn u_pre(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.t0, self.s, |r, c| self.factors[0][r][c])
    }

    /// Post-period factors of intervention `d` as a `(T - T0) x s` matrix.
    pub fn u_post(&self, d: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.t - self.t0, self.s, |r, c| self.factors[d][self.t0 + r][c])
    }
}

/// Unit factors `v_i` in `R^s`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UnitFactors {
    pub v: Vec<DVector<f64>>,
}

impl UnitFactors {
    pub fn new(v: Vec<DVector<f64>>) -> Result<Self> {
        if let Some(first) = v.first() {
            let s = first.len();
            for (i, vi) in v.iter().enumerate() {
                if vi.len() != s {
                    return Err(Error::Validation(format!(
                        "unit factor {i} has length {}, expected {s}",
                        vi.len()
                    )));
                }
                if vi.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Validation(format!(
                        "unit factor {i} contains a non-finite entry"
                    )));
                }
            }
        }
        Ok(Self { v })
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }
}

/// An expected-outcome cell that exceeds the model bound `|E[y]| <= 1`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundViolation {
    pub unit: usize,
    pub intervention: usize,
    /// 1-based time step.
    pub t: usize,
    pub value: f64,
}

/// Full counterfactual grid: expected and noisy trajectories for every unit
/// under every intervention.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CounterfactualPanel {
    /// `expected[i][d]` is the length-`T` expected trajectory of unit `i`
    /// under intervention `d`.
    pub expected: Vec<Vec<DVector<f64>>>,
    /// Same shape as `expected`, with additive truncated-Gaussian noise;
    /// pre-period noise is shared across interventions.
    pub noisy: Vec<Vec<DVector<f64>>>,
    pub seed: u64,
    pub t0: usize,
    pub t: usize,
    pub k: usize,
}

impl CounterfactualPanel {
    pub fn num_units(&self) -> usize {
        self.expected.len()
    }
}

/// Observed panel: pre-period outcomes under control plus post-period
/// outcomes under one assigned intervention per unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelDataset {
    /// `m x T0` pre-intervention outcomes.
    pub y_pre: DMatrix<f64>,
    /// Assigned intervention per unit, each in `{0..k-1}`.
    pub assigned: Vec<usize>,
    /// Observed post-period trajectory per unit, length `T - T0`.
    pub y_post: Vec<DVector<f64>>,
    /// `arms[d]` lists the units assigned intervention `d`.
    pub arms: Vec<Vec<usize>>,
    pub t0: usize,
    pub k: usize,
}

impl PanelDataset {
    pub fn num_units(&self) -> usize {
        self.assigned.len()
    }

    pub fn t_total(&self) -> usize {
        self.t0 + self.y_post.first().map_or(0, |p| p.len())
    }

    /// Pre-period row of one unit as an owned vector.
    pub fn y_pre_row(&self, i: usize) -> DVector<f64> {
        self.y_pre.row(i).transpose()
    }

    /// Serialize as long-format CSV with header
    /// `unit_id,t,outcome,assigned_intervention`; `t` is 1-based and floats
    /// carry 17 significant digits.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["unit_id", "t", "outcome", "assigned_intervention"])?;
        for i in 0..self.num_units() {
            let d = self.assigned[i];
            for t in 0..self.t0 {
                wtr.write_record(&[
                    i.to_string(),
                    (t + 1).to_string(),
                    format!("{:.16e}", self.y_pre[(i, t)]),
                    d.to_string(),
                ])?;
            }
            for (j, y) in self.y_post[i].iter().enumerate() {
                wtr.write_record(&[
                    i.to_string(),
                    (self.t0 + j + 1).to_string(),
                    format!("{:.16e}", y),
                    d.to_string(),
                ])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::Validation(format!("csv not utf-8: {e}")))
    }
}

pub(crate) fn truncated_gaussian(rng: &mut ChaCha12Rng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    let normal = Normal::new(0.0, sigma).expect("sigma validated finite and positive");
    let cap = NOISE_TRUNCATION_SIGMAS * sigma;
    loop {
        let x = normal.sample(rng);
        if x.abs() <= cap {
            return x;
        }
    }
}

/// Generate expected and noisy counterfactual trajectories for every unit and
/// intervention. Identical inputs produce bit-identical output; per-unit RNG
/// streams are derived from `(seed, unit index)` so adding units never
/// perturbs existing ones.
///
/// Expected outcomes must satisfy `|E[y]| <= 1`; the first violating cell is
/// reported as an error.
pub fn generate_counterfactuals(
    spec: &LatentFactorSpec,
    units: &UnitFactors,
    seed: u64,
) -> Result<CounterfactualPanel> {
    let (panel, violations) = generate_counterfactuals_lenient(spec, units, seed)?;
    if let Some(v) = violations.first() {
        return Err(Error::Validation(format!(
            "expected outcome out of bounds: |{}| > 1 at unit {}, intervention {}, t = {}",
            v.value, v.unit, v.intervention, v.t
        )));
    }
    Ok(panel)
}

/// Like [`generate_counterfactuals`] but reports `|E[y]| > 1` cells instead of
/// failing, for callers that treat the bound as a warning.
pub fn generate_counterfactuals_lenient(
    spec: &LatentFactorSpec,
    units: &UnitFactors,
    seed: u64,
) -> Result<(CounterfactualPanel, Vec<BoundViolation>)> {
    for (i, v) in units.v.iter().enumerate() {
        if v.len() != spec.s {
            return Err(Error::Validation(format!(
                "unit factor {i} has length {}, expected s = {}",
                v.len(),
                spec.s
            )));
        }
    }
    let m = units.len();
    let mut expected = Vec::with_capacity(m);
    let mut noisy = Vec::with_capacity(m);
    let mut violations = Vec::new();
    for (i, v) in units.v.iter().enumerate() {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let pre_noise: Vec<f64> =
            (0..spec.t0).map(|_| truncated_gaussian(&mut rng, spec.sigma)).collect();
        let mut exp_i = Vec::with_capacity(spec.k);
        let mut noisy_i = Vec::with_capacity(spec.k);
        for d in 0..spec.k {
            let exp = DVector::from_fn(spec.t, |r, _| spec.factors[d][r].dot(v));
            for (r, &x) in exp.iter().enumerate() {
                if x.abs() > 1.0 {
                    violations.push(BoundViolation {
                        unit: i,
                        intervention: d,
                        t: r + 1,
                        value: x,
                    });
                }
            }
            let mut noise = DVector::zeros(spec.t);
            for r in 0..spec.t0 {
                noise[r] = pre_noise[r];
            }
            for r in spec.t0..spec.t {
                noise[r] = truncated_gaussian(&mut rng, spec.sigma);
            }
            noisy_i.push(&exp + noise);
            exp_i.push(exp);
        }
        expected.push(exp_i);
        noisy.push(noisy_i);
    }
    Ok((
        CounterfactualPanel { expected, noisy, seed, t0: spec.t0, t: spec.t, k: spec.k },
        violations,
    ))
}

/// Realize an observed dataset from a counterfactual grid: the pre-period is
/// taken from the control trajectories, the post-period from each unit's
/// assigned arm.
pub fn observe(panel: &CounterfactualPanel, assignment: &[usize]) -> Result<PanelDataset> {
    let m = panel.num_units();
    if assignment.len() != m {
        return Err(Error::Validation(format!(
            "assignment length {} does not match unit count {m}",
            assignment.len()
        )));
    }
    if let Some((i, &d)) = assignment.iter().enumerate().find(|(_, &d)| d >= panel.k) {
        return Err(Error::Validation(format!(
            "unit {i} assigned intervention {d}, but k = {}",
            panel.k
        )));
    }
    let y_pre = DMatrix::from_fn(m, panel.t0, |i, t| panel.noisy[i][0][t]);
    let y_post: Vec<DVector<f64>> = (0..m)
        .map(|i| {
            DVector::from_fn(panel.t - panel.t0, |r, _| panel.noisy[i][assignment[i]][panel.t0 + r])
        })
        .collect();
    let mut arms = vec![Vec::new(); panel.k];
    for (i, &d) in assignment.iter().enumerate() {
        arms[d].push(i);
    }
    Ok(PanelDataset {
        y_pre,
        assigned: assignment.to_vec(),
        y_post,
        arms,
        t0: panel.t0,
        k: panel.k,
    })
}

/// Uniform randomized-control-trial assignment of `m` units to `k` arms,
/// resampled until every arm is nonempty. Deterministic per seed.
pub fn rct_assign(m: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k == 0 || m < k {
        return Err(Error::Validation(format!(
            "need m >= k >= 1 to fill every arm, got m = {m}, k = {k}"
        )));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    loop {
        let assignment: Vec<usize> = (0..m).map(|_| rng.random_range(0..k)).collect();
        let mut seen = vec![false; k];
        for &d in &assignment {
            seen[d] = true;
        }
        if seen.iter().all(|&s| s) {
            return Ok(assignment);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_factor_spec() -> LatentFactorSpec {
        // u_t^(0) = [1, 0], u_t^(1) = [0, 1] for all t.
        let u0 = DVector::from_row_slice(&[1.0, 0.0]);
        let u1 = DVector::from_row_slice(&[0.0, 1.0]);
        LatentFactorSpec::new(2, 2, 4, vec![vec![u0; 4], vec![u1; 4]], 0.0).unwrap()
    }

    #[test]
    fn expected_outcomes_are_inner_products() {
        let spec = constant_factor_spec();
        let units = UnitFactors::new(vec![DVector::from_row_slice(&[0.3, 0.7])]).unwrap();
        let panel = generate_counterfactuals(&spec, &units, 0).unwrap();
        for t in 0..4 {
            assert_eq!(panel.expected[0][0][t], 0.3);
            assert_eq!(panel.expected[0][1][t], 0.7);
        }
    }

    #[test]
    fn zero_sigma_means_noiseless() {
        let spec = constant_factor_spec();
        let units = UnitFactors::new(vec![DVector::from_row_slice(&[0.3, 0.7])]).unwrap();
        let panel = generate_counterfactuals(&spec, &units, 7).unwrap();
        assert_eq!(panel.expected, panel.noisy);
    }

    #[test]
    fn identity_pre_factors_reproduce_unit_factor() {
        // u_1^(0) = e1, u_2^(0) = e2 makes the pre-period of unit v equal v.
        let e1 = DVector::from_row_slice(&[1.0, 0.0]);
        let e2 = DVector::from_row_slice(&[0.0, 1.0]);
        let post = DVector::from_row_slice(&[0.0, 0.5]);
        let spec = LatentFactorSpec::new(2, 2, 3, vec![vec![e1, e2, post]], 0.0).unwrap();
        let v = DVector::from_row_slice(&[0.25, -0.5]);
        let units = UnitFactors::new(vec![v.clone()]).unwrap();
        let panel = generate_counterfactuals(&spec, &units, 0).unwrap();
        let dataset = observe(&panel, &[0]).unwrap();
        assert_eq!(dataset.y_pre_row(0), v);
    }

    #[test]
    fn generation_is_reproducible_and_unit_streams_are_stable() {
        let u0 = DVector::from_row_slice(&[0.5, 0.1]);
        let u1 = DVector::from_row_slice(&[0.1, 0.6]);
        let spec = LatentFactorSpec::new(2, 3, 5, vec![vec![u0; 5], vec![u1; 5]], 0.05).unwrap();
        let v: Vec<DVector<f64>> =
            (0..4).map(|i| DVector::from_row_slice(&[0.1 * i as f64, 0.2])).collect();
        let units = UnitFactors::new(v.clone()).unwrap();
        let a = generate_counterfactuals(&spec, &units, 42).unwrap();
        let b = generate_counterfactuals(&spec, &units, 42).unwrap();
        assert_eq!(a.noisy, b.noisy);
        // Dropping the last unit leaves earlier units' noise untouched.
        let fewer = UnitFactors::new(v[..2].to_vec()).unwrap();
        let c = generate_counterfactuals(&spec, &fewer, 42).unwrap();
        assert_eq!(a.noisy[0], c.noisy[0]);
        assert_eq!(a.noisy[1], c.noisy[1]);
    }

    #[test]
    fn pre_period_noise_is_shared_across_arms() {
        let u0 = DVector::from_row_slice(&[0.5, 0.1]);
        let u1 = DVector::from_row_slice(&[0.1, 0.6]);
        // Same pre-period factors on both arms, so shared noise means equal
        // noisy pre-period cells.
        let spec = LatentFactorSpec::new(
            2,
            2,
            4,
            vec![
                vec![u0.clone(), u0.clone(), u0.clone(), u0.clone()],
                vec![u0.clone(), u0, u1.clone(), u1],
            ],
            0.1,
        )
        .unwrap();
        let units = UnitFactors::new(vec![DVector::from_row_slice(&[0.4, 0.3])]).unwrap();
        let panel = generate_counterfactuals(&spec, &units, 3).unwrap();
        for t in 0..2 {
            assert_eq!(panel.noisy[0][0][t], panel.noisy[0][1][t]);
        }
        assert_ne!(panel.noisy[0][0][2], panel.noisy[0][1][2]);
    }

    #[test]
    fn noise_is_truncated_and_mean_reverts() {
        let u = DVector::from_row_slice(&[0.0, 0.0]);
        let sigma = 0.2;
        let spec = LatentFactorSpec::new(2, 5, 10, vec![vec![u; 10]], sigma).unwrap();
        let units = UnitFactors::new(vec![DVector::from_row_slice(&[0.0, 0.0]); 400]).unwrap();
        let panel = generate_counterfactuals(&spec, &units, 9).unwrap();
        let mut sum = 0.0;
        let mut count = 0usize;
        for i in 0..400 {
            for x in panel.noisy[i][0].iter() {
                assert!(x.abs() <= NOISE_TRUNCATION_SIGMAS * sigma);
                sum += x;
                count += 1;
            }
        }
        let mean = sum / count as f64;
        assert!(mean.abs() <= 5.0 * sigma / (count as f64).sqrt(), "mean {mean} too large");
    }

    #[test]
    fn expected_pre_matrix_has_rank_at_most_s() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let (s, t0, t, m) = (3, 6, 8, 20);
        let factors: Vec<Vec<DVector<f64>>> =
            vec![(0..t).map(|_| DVector::from_fn(s, |_, _| rng.random_range(-0.4..0.4))).collect()];
        let spec = LatentFactorSpec::new(s, t0, t, factors, 0.0).unwrap();
        let units = UnitFactors::new(
            (0..m).map(|_| DVector::from_fn(s, |_, _| rng.random_range(-0.8..0.8))).collect(),
        )
        .unwrap();
        let panel = generate_counterfactuals(&spec, &units, 1).unwrap();
        let pre = DMatrix::from_fn(m, t0, |i, c| panel.expected[i][0][c]);
        let svals = pre.svd(false, false).singular_values;
        let top = svals[0];
        for i in s..svals.len() {
            assert!(svals[i] <= 1e-10 * top, "singular value {} beyond rank budget", svals[i]);
        }
    }

    #[test]
    fn out_of_bounds_expectation_is_an_error() {
        let u = DVector::from_row_slice(&[2.0, 0.0]);
        let spec = LatentFactorSpec::new(2, 1, 2, vec![vec![u; 2]], 0.0).unwrap();
        let units = UnitFactors::new(vec![DVector::from_row_slice(&[0.9, 0.0])]).unwrap();
        let err = generate_counterfactuals(&spec, &units, 0).unwrap_err();
        assert!(err.to_string().contains("unit 0"));
        let (_, violations) = generate_counterfactuals_lenient(&spec, &units, 0).unwrap();
        assert_eq!(violations.len(), 2);
    }

    #[test]
    fn observe_routes_pre_and_post_periods() {
        let spec = constant_factor_spec();
        let units = UnitFactors::new(vec![
            DVector::from_row_slice(&[0.3, 0.7]),
            DVector::from_row_slice(&[0.1, 0.2]),
        ])
        .unwrap();
        let panel = generate_counterfactuals(&spec, &units, 0).unwrap();
        let data = observe(&panel, &[0, 1]).unwrap();
        assert_eq!(data.arms, vec![vec![0], vec![1]]);
        // Pre-period always comes from control.
        assert_eq!(data.y_pre[(1, 0)], 0.1);
        // Post-period comes from the assigned arm.
        assert_eq!(data.y_post[1][0], 0.2);
        assert_eq!(data.y_post[0][0], 0.3);
        let all_control = observe(&panel, &[0, 0]).unwrap();
        assert_eq!(all_control.y_post[1][0], 0.1);
    }

    #[test]
    fn observe_rejects_bad_assignments() {
        let spec = constant_factor_spec();
        let units = UnitFactors::new(vec![DVector::from_row_slice(&[0.3, 0.7])]).unwrap();
        let panel = generate_counterfactuals(&spec, &units, 0).unwrap();
        assert!(observe(&panel, &[0, 1]).is_err());
        assert!(observe(&panel, &[2]).is_err());
    }

    #[test]
    fn rct_assignment_fills_every_arm_deterministically() {
        let a = rct_assign(2, 2, 5).unwrap();
        let mut sorted = a.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1]);
        for seed in 0..20 {
            let x = rct_assign(100, 2, seed).unwrap();
            assert!(x.contains(&0) && x.contains(&1));
            assert_eq!(x, rct_assign(100, 2, seed).unwrap());
        }
        assert!(rct_assign(1, 2, 0).is_err());
    }

    #[test]
    fn csv_export_has_long_schema() {
        let spec = constant_factor_spec();
        let units = UnitFactors::new(vec![DVector::from_row_slice(&[0.3, 0.7])]).unwrap();
        let panel = generate_counterfactuals(&spec, &units, 0).unwrap();
        let data = observe(&panel, &[1]).unwrap();
        let text = data.to_csv_string().unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "unit_id,t,outcome,assigned_intervention");
        let first = lines.next().unwrap();
        let fields: Vec<&str> = first.split(',').collect();
        assert_eq!(fields[0], "0");
        assert_eq!(fields[1], "1");
        assert_eq!(fields[3], "1");
        assert_eq!(fields[2].parse::<f64>().unwrap(), 0.3);
        assert_eq!(text.lines().count(), 1 + 4);
    }
}
