//! Polyhedral type regions, Euclidean projection onto them (the membership
//! oracle behind every policy), best-response balls, and the
//! separation-of-types checker.
//!
//! All regions are intersections of halfspaces. Projection is exact up to a
//! reported KKT residual; strict decision boundaries are handled by callers
//! through an interior margin (see [`strict_margin`]).

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rewards::BetaSet;

/// Default KKT-residual tolerance for projections.
pub const DEFAULT_PROJECTION_TOL: f64 = 1e-9;

/// Interior margin by which a point must clear strict boundaries to count as
/// having reached them: `1e-9 * (1 + ||y||)`.
pub fn strict_margin(y_norm: f64) -> f64 {
    1e-9 * (1.0 + y_norm)
}

/// One constraint `<a, y> >= b` (or `> b` when `strict`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "HalfspaceRepr", into = "HalfspaceRepr")]
pub struct Halfspace {
    a: DVector<f64>,
    b: f64,
    strict: bool,
}

#[derive(Serialize, Deserialize)]
struct HalfspaceRepr {
    a: Vec<f64>,
    b: f64,
    strict: bool,
}

impl From<Halfspace> for HalfspaceRepr {
    fn from(h: Halfspace) -> Self {
        HalfspaceRepr { a: h.a.iter().copied().collect(), b: h.b, strict: h.strict }
    }
}

impl TryFrom<HalfspaceRepr> for Halfspace {
    type Error = Error;

    fn try_from(r: HalfspaceRepr) -> Result<Self> {
        Halfspace::new(DVector::from_vec(r.a), r.b, r.strict)
    }
}

impl Halfspace {
    /// A zero normal is allowed only when the constraint holds everywhere
    /// (`0 >= b`, or `0 > b` when strict); otherwise it describes the empty
    /// set and is rejected.
    pub fn new(a: DVector<f64>, b: f64, strict: bool) -> Result<Self> {
        if a.iter().any(|x| !x.is_finite()) || !b.is_finite() {
            return Err(Error::Validation("halfspace coefficients must be finite".into()));
        }
        if a.iter().all(|&x| x == 0.0) {
            let vacuous = if strict { 0.0 > b } else { 0.0 >= b };
            if !vacuous {
                return Err(Error::Validation(format!(
                    "halfspace with zero normal and offset {b} excludes every point"
                )));
            }
        }
        Ok(Self { a, b, strict })
    }

    pub fn a(&self) -> &DVector<f64> {
        &self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn strict(&self) -> bool {
        self.strict
    }

    pub fn dim(&self) -> usize {
        self.a.len()
    }

    /// Constraint slack `<a, y> - b` (nonnegative inside the closure).
    pub fn slack(&self, y: &DVector<f64>) -> f64 {
        self.a.dot(y) - self.b
    }

    pub fn satisfies(&self, y: &DVector<f64>) -> bool {
        let s = self.slack(y);
        if self.strict {
            s > 0.0
        } else {
            s >= 0.0
        }
    }

    /// True when the constraint holds at every point.
    pub fn is_vacuous(&self) -> bool {
        self.a.iter().all(|&x| x == 0.0)
    }

    /// Unit-normal form `(a/||a||, b/||a||)`; `None` when vacuous.
    fn normalized(&self) -> Option<(DVector<f64>, f64)> {
        let n = self.a.norm();
        if n == 0.0 {
            None
        } else {
            Some((&self.a / n, self.b / n))
        }
    }
}

/// Intersection of halfspaces. An empty list is all of space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Halfspace>", into = "Vec<Halfspace>")]
pub struct Region {
    halfspaces: Vec<Halfspace>,
}

impl From<Region> for Vec<Halfspace> {
    fn from(r: Region) -> Self {
        r.halfspaces
    }
}

impl TryFrom<Vec<Halfspace>> for Region {
    type Error = Error;

    fn try_from(halfspaces: Vec<Halfspace>) -> Result<Self> {
        Region::new(halfspaces)
    }
}

impl Region {
    pub fn new(halfspaces: Vec<Halfspace>) -> Result<Self> {
        if let Some(first) = halfspaces.first() {
            let dim = first.dim();
            if halfspaces.iter().any(|h| h.dim() != dim) {
                return Err(Error::Validation(
                    "all halfspaces in a region must share one dimension".into(),
                ));
            }
        }
        Ok(Self { halfspaces })
    }

    pub fn all_space() -> Self {
        Self { halfspaces: Vec::new() }
    }

    pub fn halfspaces(&self) -> &[Halfspace] {
        &self.halfspaces
    }

    pub fn dim(&self) -> Option<usize> {
        self.halfspaces.first().map(Halfspace::dim)
    }

    pub fn is_all_space(&self) -> bool {
        self.halfspaces.iter().all(Halfspace::is_vacuous)
    }

    /// Exact membership, honoring strictness.
    pub fn contains(&self, y: &DVector<f64>) -> bool {
        self.halfspaces.iter().all(|h| h.satisfies(y))
    }

    /// Membership with strict constraints required to hold by a margin of
    /// `eps` in unit-normal units; non-strict constraints stay `>= b`.
    pub fn contains_with_margin(&self, y: &DVector<f64>, eps: f64) -> bool {
        self.halfspaces.iter().all(|h| match h.normalized() {
            None => h.satisfies(y),
            Some((a, b)) => {
                let s = a.dot(y) - b;
                if h.strict {
                    s >= eps
                } else {
                    s >= 0.0
                }
            }
        })
    }

    /// The region with every strict boundary pulled inward by `eps` (in
    /// unit-normal units), so that its closure lies inside the open region.
    pub fn with_strict_margin(&self, eps: f64) -> Region {
        let halfspaces = self
            .halfspaces
            .iter()
            .map(|h| {
                if h.strict && !h.is_vacuous() {
                    Halfspace { a: h.a.clone(), b: h.b + eps * h.a.norm(), strict: h.strict }
                } else {
                    h.clone()
                }
            })
            .collect();
        Region { halfspaces }
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Outcome of projecting a point onto a region's closure.
#[derive(Debug, Clone)]
pub struct ProjectionResult {
    pub point: DVector<f64>,
    pub distance: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub feasible: bool,
}

/// Region of points whose reward is maximized by intervention `d`:
/// `{y : <beta^(d) - beta^(d'), y> >= 0 for all d' != d}`.
pub fn type_region(betas: &BetaSet, d: usize) -> Result<Region> {
    if d >= betas.k() {
        return Err(Error::Validation(format!(
            "intervention {d} out of range (k = {})",
            betas.k()
        )));
    }
    let mut halfspaces = Vec::with_capacity(betas.k() - 1);
    for d_other in 0..betas.k() {
        if d_other == d {
            continue;
        }
        halfspaces.push(Halfspace::new(betas.beta(d) - betas.beta(d_other), 0.0, false)?);
    }
    Region::new(halfspaces)
}

/// The set of points assigned intervention `d` by the shifted multi-boundary
/// rule: boundaries against lower interventions pushed out by `delta` times
/// the boundary normal's length (strict), boundaries against higher
/// interventions pulled in by the same amount (non-strict).
pub fn shifted_type_region(betas: &BetaSet, d: usize, delta: f64) -> Result<Region> {
    if d >= betas.k() {
        return Err(Error::Validation(format!(
            "intervention {d} out of range (k = {})",
            betas.k()
        )));
    }
    if !delta.is_finite() || delta < 0.0 {
        return Err(Error::Validation(format!(
            "delta must be finite and nonnegative, got {delta}"
        )));
    }
    let mut halfspaces = Vec::with_capacity(betas.k() - 1);
    for d_other in 0..betas.k() {
        if d_other == d {
            continue;
        }
        let n = betas.beta(d) - betas.beta(d_other);
        let len = n.norm();
        if d_other < d {
            if len == 0.0 {
                return Err(Error::Validation(format!(
                    "interventions {d} and {d_other} have identical reward vectors, so the shifted region of {d} is empty"
                )));
            }
            halfspaces.push(Halfspace::new(n, delta * len, true)?);
        } else {
            halfspaces.push(Halfspace::new(n, -delta * len, false)?);
        }
    }
    Region::new(halfspaces)
}

struct NormalizedConstraints {
    rows: Vec<DVector<f64>>,
    offsets: Vec<f64>,
}

impl NormalizedConstraints {
    fn max_violation(&self, x: &DVector<f64>) -> f64 {
        self.rows
            .iter()
            .zip(&self.offsets)
            .map(|(a, &b)| (b - a.dot(x)).max(0.0))
            .fold(0.0, f64::max)
    }
}

/// Exact projection onto the intersection of the active equalities, with the
/// dual variables. Pseudo-inverse through the Gram matrix's eigensystem, so
/// duplicated constraints are harmless.
fn equality_projection(
    y: &DVector<f64>,
    cons: &NormalizedConstraints,
    active: &[usize],
) -> (DVector<f64>, Vec<f64>) {
    if active.is_empty() {
        return (y.clone(), Vec::new());
    }
    let n = y.len();
    let m = active.len();
    let mat = DMatrix::from_fn(m, n, |r, c| cons.rows[active[r]][c]);
    let rhs = DVector::from_fn(m, |r, _| cons.offsets[active[r]]) - &mat * y;
    let gram = &mat * mat.transpose();
    let eig = nalgebra::SymmetricEigen::new(gram);
    let top = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    let mut lambda = DVector::zeros(m);
    if top > 0.0 {
        for j in 0..m {
            let ev = eig.eigenvalues[j];
            if ev > 1e-12 * top {
                let q = eig.eigenvectors.column(j);
                lambda += q * (q.dot(&rhs) / ev);
            }
        }
    }
    let x = y + mat.transpose() * &lambda;
    (x, lambda.iter().copied().collect())
}

fn kkt_residual(
    y: &DVector<f64>,
    x: &DVector<f64>,
    cons: &NormalizedConstraints,
    lambdas: &[(usize, f64)],
) -> f64 {
    let primal = cons.max_violation(x);
    let mut combination = y.clone();
    let mut complementarity = 0.0;
    for &(j, l) in lambdas {
        combination += &cons.rows[j] * l;
        complementarity += l.max(0.0) * (cons.rows[j].dot(x) - cons.offsets[j]).max(0.0);
    }
    let stationarity = (x - combination).norm();
    primal + stationarity + complementarity
}

/// Active-set refinement seeded from a Dykstra iterate. Returns an exact
/// projection when it converges with nonnegative duals and global
/// feasibility.
fn refine_active_set(
    y: &DVector<f64>,
    cons: &NormalizedConstraints,
    x_seed: &DVector<f64>,
    tol: f64,
) -> Option<(DVector<f64>, f64)> {
    let m = cons.rows.len();
    let seed_violation = cons.max_violation(x_seed);
    let act_tol = (10.0 * seed_violation).max(1e-8);
    let mut active: Vec<usize> =
        (0..m).filter(|&j| cons.rows[j].dot(x_seed) - cons.offsets[j] <= act_tol).collect();
    for _ in 0..3 * (m + 2) {
        let (x, lambda) = equality_projection(y, cons, &active);
        // Drop the most negative dual, if any.
        let most_negative = lambda.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1));
        if let Some((pos, &l)) = most_negative {
            if l < -1e-10 {
                active.remove(pos);
                continue;
            }
        }
        // Add the most violated constraint, if any.
        let worst = (0..m)
            .filter(|j| !active.contains(j))
            .map(|j| (j, cons.rows[j].dot(&x) - cons.offsets[j]))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        if let Some((j, slack)) = worst {
            if slack < -1e-13 {
                active.push(j);
                continue;
            }
        }
        let pairs: Vec<(usize, f64)> = active.iter().copied().zip(lambda).collect();
        let kkt = kkt_residual(y, &x, cons, &pairs);
        if kkt <= tol {
            return Some((x, kkt));
        }
        return None;
    }
    None
}

/// Projection of `y_tilde` onto the closure of `region`, by Dykstra's
/// alternating projections with periodic active-set refinement. The reported
/// KKT residual is the sum of the worst primal violation, the stationarity
/// gap, and the complementarity gap, all on unit-normal constraints.
///
/// Infeasible regions are reported (`feasible = false`, infinite distance),
/// not errors; strictness is ignored here (callers tighten strict boundaries
/// via [`Region::with_strict_margin`] when the open region is meant).
pub fn project_onto_region(
    y_tilde: &DVector<f64>,
    region: &Region,
    tol: f64,
) -> Result<ProjectionResult> {
    if !tol.is_finite() || tol <= 0.0 {
        return Err(Error::Validation(format!("projection tolerance must be positive, got {tol}")));
    }
    if y_tilde.iter().any(|x| !x.is_finite()) {
        return Err(Error::Validation("projection input must be finite".into()));
    }
    if let Some(dim) = region.dim() {
        if dim != y_tilde.len() {
            return Err(Error::Validation(format!(
                "point dimension {} does not match region dimension {dim}",
                y_tilde.len()
            )));
        }
    }
    let mut rows = Vec::new();
    let mut offsets = Vec::new();
    for h in region.halfspaces() {
        if let Some((a, b)) = h.normalized() {
            rows.push(a);
            offsets.push(b);
        }
    }
    let cons = NormalizedConstraints { rows, offsets };
    let m = cons.rows.len();
    let dim = y_tilde.len();
    if m == 0 {
        return Ok(ProjectionResult {
            point: y_tilde.clone(),
            distance: 0.0,
            kkt_residual: 0.0,
            iterations: 0,
            feasible: true,
        });
    }

    let scale = 1.0 + y_tilde.norm();
    let offset_scale = cons.offsets.iter().fold(0.0_f64, |acc, b| acc.max(b.abs()));
    let max_steps = 100 * m * dim.max(1);
    let mut x = y_tilde.clone();
    let mut corrections: Vec<DVector<f64>> = vec![DVector::zeros(dim); m];
    let mut steps = 0usize;
    let mut history: Vec<(f64, f64)> = Vec::new(); // (violation, dual mass) per cycle

    let finish = |x: DVector<f64>,
                  cons: &NormalizedConstraints,
                  corrections: &[DVector<f64>],
                  steps: usize| {
        let lambdas: Vec<(usize, f64)> =
            corrections.iter().enumerate().map(|(j, p)| (j, p.norm())).collect();
        let kkt = kkt_residual(y_tilde, &x, cons, &lambdas);
        let violation = cons.max_violation(&x);
        let feasible = violation <= 1e-6 * scale;
        ProjectionResult {
            distance: if feasible { (&x - y_tilde).norm() } else { f64::INFINITY },
            point: x,
            kkt_residual: kkt,
            iterations: steps,
            feasible,
        }
    };

    let mut cycle = 0usize;
    loop {
        for (correction, (row, &offset)) in
            corrections.iter_mut().zip(cons.rows.iter().zip(&cons.offsets))
        {
            let z = &x + &*correction;
            let slack = row.dot(&z) - offset;
            let projected = if slack < 0.0 { &z - row * slack } else { z.clone() };
            *correction = z - &projected;
            x = projected;
            steps += 1;
        }
        cycle += 1;
        let violation = cons.max_violation(&x);
        let dual_mass: f64 = corrections.iter().map(|p| p.norm()).sum();
        history.push((violation, dual_mass));

        // Converged in place: feasible with negligible complementarity gap.
        if violation <= tol {
            let lambdas: Vec<(usize, f64)> =
                corrections.iter().enumerate().map(|(j, p)| (j, p.norm())).collect();
            let kkt = kkt_residual(y_tilde, &x, &cons, &lambdas);
            if kkt <= tol {
                return Ok(ProjectionResult {
                    distance: (&x - y_tilde).norm(),
                    point: x,
                    kkt_residual: kkt,
                    iterations: steps,
                    feasible: true,
                });
            }
        }
        // Periodic exact refinement.
        if cycle <= 3 || cycle.is_multiple_of(4) {
            if let Some((point, kkt)) = refine_active_set(y_tilde, &cons, &x, tol) {
                return Ok(ProjectionResult {
                    distance: (&point - y_tilde).norm(),
                    point,
                    kkt_residual: kkt,
                    iterations: steps,
                    feasible: true,
                });
            }
        }
        // Infeasibility: the primal violation stalls at a positive gap while
        // the dual corrections keep accumulating without bound.
        if cycle >= 60 {
            let (v_old, s_old) = history[cycle - 51];
            let stalled = (violation - v_old).abs() <= (1e-3 * violation).max(1e-12);
            let accumulating = dual_mass - s_old >= 25.0 * violation;
            let blown_up = dual_mass > 1e6 * (scale + offset_scale);
            if (violation > 10.0 * tol * scale && stalled && accumulating) || blown_up {
                return Ok(ProjectionResult {
                    point: x,
                    distance: f64::INFINITY,
                    kkt_residual: f64::INFINITY,
                    iterations: steps,
                    feasible: false,
                });
            }
        }
        if steps >= max_steps {
            return Ok(finish(x, &cons, &corrections, steps));
        }
    }
}

/// True iff `y_tilde` lies within `delta` of some center.
pub fn in_ball(y_tilde: &DVector<f64>, center_set: &[DVector<f64>], delta: f64) -> bool {
    center_set.iter().any(|c| (y_tilde - c).norm() <= delta)
}

/// True iff `y_tilde` lies within `delta` (plus `tol` slack, inclusive) of
/// the type-`d` region — the ball around every possible type-`d` unit.
pub fn in_type_ball(
    y_tilde: &DVector<f64>,
    betas: &BetaSet,
    d: usize,
    delta: f64,
    tol: f64,
) -> Result<bool> {
    let region = type_region(betas, d)?;
    let proj = project_onto_region(y_tilde, &region, tol.clamp(1e-15, DEFAULT_PROJECTION_TOL))?;
    Ok(proj.feasible && proj.distance <= delta + tol)
}

/// How the separation check measures "lower-type balls".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeparationMode {
    /// Balls around the listed units only.
    Finite,
    /// Balls around every point of each lower type region.
    Continuum,
}

/// Per-unit separation verdict.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UnitSeparation {
    pub unit: usize,
    pub unit_type: usize,
    pub satisfied: bool,
    /// Whether the verdict is backed by an explicit witness or a grid
    /// certificate (vs. sampling only).
    pub certified: bool,
    /// A reachable point outside all lower-type balls, when one exists.
    pub witness: Option<Vec<f64>>,
    /// Positive slack of the separation test (negative when violated;
    /// infinite when there is no lower type at all).
    pub margin: f64,
}

/// Outcome of the separation-of-types check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeparationReport {
    pub satisfied: bool,
    pub certified: bool,
    pub mode: SeparationMode,
    pub delta: f64,
    pub units: Vec<UnitSeparation>,
}

impl SeparationReport {
    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn clamp_to_ball(center: &DVector<f64>, delta: f64, w: DVector<f64>) -> DVector<f64> {
    let v = &w - center;
    let r = v.norm();
    if r > delta {
        center + v * (delta * (1.0 - 1e-12) / r)
    } else {
        w
    }
}

fn min_center_distance(w: &DVector<f64>, centers: &[DVector<f64>]) -> (f64, usize) {
    let mut best = (f64::INFINITY, 0usize);
    for (j, c) in centers.iter().enumerate() {
        let d = (w - c).norm();
        if d < best.0 {
            best = (d, j);
        }
    }
    best
}

/// Hill-climb `min_j ||w - y_j||` over the ball around `y_i`.
fn ascend_min_distance(
    y_i: &DVector<f64>,
    delta: f64,
    lower: &[DVector<f64>],
    start: DVector<f64>,
) -> (DVector<f64>, f64) {
    let dim = y_i.len();
    let mut w = clamp_to_ball(y_i, delta, start);
    let mut best = w.clone();
    let mut best_g = min_center_distance(&w, lower).0;
    let witness_bar = delta + 1e-12 * (1.0 + delta);
    let mut step = delta * 0.5;
    for _ in 0..500 {
        if best_g > witness_bar {
            break;
        }
        let (g, j) = min_center_distance(&w, lower);
        let dir = if g > 0.0 {
            (&w - &lower[j]) / g
        } else {
            let mut e = DVector::zeros(dim);
            e[0] = 1.0;
            e
        };
        w = clamp_to_ball(y_i, delta, &w + dir * step);
        let g_new = min_center_distance(&w, lower).0;
        if g_new > best_g {
            best_g = g_new;
            best = w.clone();
        }
        step *= 0.99;
    }
    (best, best_g)
}

/// Exhaustive ball scan at resolution `delta / 200`; only affordable in low
/// dimension. Returns a witness if the grid holds one.
fn grid_witness(
    y_i: &DVector<f64>,
    delta: f64,
    lower: &[DVector<f64>],
) -> Option<(DVector<f64>, f64)> {
    let dim = y_i.len();
    let h = delta / 200.0;
    let witness_bar = delta + 1e-12 * (1.0 + delta);
    let span: i64 = 200;
    let scan_point = |offsets: &[i64]| -> Option<(DVector<f64>, f64)> {
        let w = DVector::from_fn(dim, |r, _| y_i[r] + h * offsets[r] as f64);
        if (&w - y_i).norm() > delta {
            return None;
        }
        let g = min_center_distance(&w, lower).0;
        if g > witness_bar {
            Some((w, g))
        } else {
            None
        }
    };
    match dim {
        1 => (-span..=span).find_map(|i| scan_point(&[i])),
        2 => (-span..=span)
            .into_par_iter()
            .find_map_first(|i| (-span..=span).find_map(|j| scan_point(&[i, j]))),
        3 => (-span..=span).into_par_iter().find_map_first(|i| {
            (-span..=span).find_map(|j| (-span..=span).find_map(|l| scan_point(&[i, j, l])))
        }),
        _ => None,
    }
}

/// Decide whether every unit can reach a point of its own ball that lies in
/// no lower-type ball — the necessary and sufficient condition for a
/// strategyproof assignment of the most-rewarding intervention to each unit.
///
/// `Finite` mode covers against the listed lower-type units themselves, with
/// a multi-start search plus (dimension <= 3) an exhaustive grid certificate;
/// higher-dimensional violations are sampling-based and flagged uncertified.
/// `Continuum` mode covers against *all* possible lower-type units, which
/// reduces to an exact projection: the unit must be within `delta` of the
/// shifted region of its type (requires `betas`).
pub fn separation_of_types(
    units: &[(DVector<f64>, usize)],
    delta: f64,
    mode: SeparationMode,
    betas: Option<&BetaSet>,
) -> Result<SeparationReport> {
    if !delta.is_finite() || delta <= 0.0 {
        return Err(Error::Validation(format!("delta must be positive and finite, got {delta}")));
    }
    if let Some(first) = units.first() {
        let dim = first.0.len();
        if units.iter().any(|(y, _)| y.len() != dim) {
            return Err(Error::Validation("all units must share one dimension".into()));
        }
    }
    let mut records = Vec::with_capacity(units.len());
    match mode {
        SeparationMode::Finite => {
            for (i, (y_i, type_i)) in units.iter().enumerate() {
                let lower: Vec<DVector<f64>> =
                    units.iter().filter(|(_, t)| t < type_i).map(|(y, _)| y.clone()).collect();
                if lower.is_empty() {
                    records.push(UnitSeparation {
                        unit: i,
                        unit_type: *type_i,
                        satisfied: true,
                        certified: true,
                        witness: Some(y_i.iter().copied().collect()),
                        margin: f64::INFINITY,
                    });
                    continue;
                }
                let witness_bar = delta + 1e-12 * (1.0 + delta);
                let mut starts: Vec<DVector<f64>> = vec![y_i.clone()];
                let mut nearest: Vec<(f64, usize)> =
                    lower.iter().enumerate().map(|(j, c)| ((y_i - c).norm(), j)).collect();
                nearest.sort_by(|a, b| a.0.total_cmp(&b.0));
                for &(dist, j) in nearest.iter().take(3) {
                    if dist > 0.0 {
                        let dir = (y_i - &lower[j]) / dist;
                        starts.push(y_i + &dir * delta);
                        starts.push(y_i - &dir * delta);
                    }
                }
                let mut rng = ChaCha12Rng::seed_from_u64(0x5349);
                rng.set_stream(i as u64);
                let dim = y_i.len();
                for _ in 0..32 {
                    let dir =
                        DVector::from_fn(dim, |_, _| -> f64 { StandardNormal.sample(&mut rng) });
                    let norm = dir.norm();
                    if norm > 0.0 {
                        starts.push(y_i + dir * (delta / norm));
                    }
                }
                let results: Vec<(DVector<f64>, f64)> = starts
                    .into_par_iter()
                    .map(|s| ascend_min_distance(y_i, delta, &lower, s))
                    .collect();
                let (mut best_w, mut best_g) = (y_i.clone(), f64::NEG_INFINITY);
                for (w, g) in results {
                    if g > best_g {
                        best_g = g;
                        best_w = w;
                    }
                }
                if best_g > witness_bar {
                    records.push(UnitSeparation {
                        unit: i,
                        unit_type: *type_i,
                        satisfied: true,
                        certified: true,
                        witness: Some(best_w.iter().copied().collect()),
                        margin: best_g - delta,
                    });
                } else if y_i.len() <= 3 {
                    match grid_witness(y_i, delta, &lower) {
                        Some((w, g)) => records.push(UnitSeparation {
                            unit: i,
                            unit_type: *type_i,
                            satisfied: true,
                            certified: true,
                            witness: Some(w.iter().copied().collect()),
                            margin: g - delta,
                        }),
                        None => records.push(UnitSeparation {
                            unit: i,
                            unit_type: *type_i,
                            satisfied: false,
                            certified: true,
                            witness: None,
                            margin: best_g - delta,
                        }),
                    }
                } else {
                    records.push(UnitSeparation {
                        unit: i,
                        unit_type: *type_i,
                        satisfied: false,
                        certified: false,
                        witness: None,
                        margin: best_g - delta,
                    });
                }
            }
        }
        SeparationMode::Continuum => {
            let betas = betas.ok_or_else(|| {
                Error::Validation("continuum mode needs the reward vectors".into())
            })?;
            for (i, (y_i, type_i)) in units.iter().enumerate() {
                if *type_i >= betas.k() {
                    return Err(Error::Validation(format!(
                        "unit {i} has type {type_i}, out of range (k = {})",
                        betas.k()
                    )));
                }
                let region = shifted_type_region(betas, *type_i, delta)?;
                let proj = project_onto_region(y_i, &region, DEFAULT_PROJECTION_TOL)?;
                let satisfied = proj.feasible && proj.distance <= delta + DEFAULT_PROJECTION_TOL;
                records.push(UnitSeparation {
                    unit: i,
                    unit_type: *type_i,
                    satisfied,
                    certified: true,
                    witness: satisfied.then(|| proj.point.iter().copied().collect()),
                    margin: delta - proj.distance,
                });
            }
        }
    }
    Ok(SeparationReport {
        satisfied: records.iter().all(|r| r.satisfied),
        certified: records.iter().all(|r| r.certified),
        mode,
        delta,
        units: records,
    })
}
