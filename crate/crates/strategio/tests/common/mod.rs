//! Independent oracles for the acceptance suite: brute-force geometry and
//! plain-arithmetic references that share no code with the implementations
//! they check.

use nalgebra::DVector;
use strategio::geometry::Region;

/// Brute-force nearest feasible distance on a square grid of the given step,
/// scanned over a box that provably contains the projection of `y` onto a
/// cone through the origin (`||p|| <= ||y||`). The origin itself is always
/// checked, so the result is finite for any nonempty cone.
pub fn grid_min_distance(y: &DVector<f64>, region: &Region, step: f64) -> f64 {
    assert_eq!(y.len(), 2, "the grid oracle is two-dimensional");
    let rows: Vec<(f64, f64, f64, bool)> =
        region.halfspaces().iter().map(|h| (h.a()[0], h.a()[1], h.b(), h.strict())).collect();
    let feasible = |px: f64, py: f64| {
        rows.iter().all(|&(a0, a1, b, strict)| {
            let s = a0 * px + a1 * py;
            if strict {
                s > b
            } else {
                s >= b
            }
        })
    };
    let (yx, yy) = (y[0], y[1]);
    let mut best_sq = if feasible(0.0, 0.0) { yx * yx + yy * yy } else { f64::INFINITY };
    // Extend the box two steps past ||y|| so a grid neighbor of the true
    // projection is always inside the scan.
    let n = ((y.norm() + 2.0 * step) / step).ceil() as i64;
    for i in -n..=n {
        let px = i as f64 * step;
        for j in -n..=n {
            let py = j as f64 * step;
            if feasible(px, py) {
                let d_sq = (px - yx) * (px - yx) + (py - yy) * (py - yy);
                if d_sq < best_sq {
                    best_sq = d_sq;
                }
            }
        }
    }
    assert!(best_sq.is_finite(), "the oracle found no feasible point");
    best_sq.sqrt()
}

/// Median with the usual even-length midpoint convention.
pub fn median(mut values: Vec<f64>) -> f64 {
    assert!(!values.is_empty(), "median of nothing");
    values.sort_by(|a, b| a.partial_cmp(b).expect("comparable values"));
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    }
}
