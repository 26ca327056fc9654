//! Smooth compactly supported bumps and cutoffs.

use crate::grid::{Field, Grid};

/// `exp(-1/(1-t^2))` on `|t| < 1`, zero outside.
pub fn bump(t: f64) -> f64 {
    let s = 1.0 - t * t;
    if s <= 0.0 {
        0.0
    } else {
        (-1.0 / s).exp()
    }
}

fn smooth_ramp(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else {
        (-1.0 / t).exp()
    }
}

/// Smooth step: 0 for `t <= 0`, 1 for `t >= 1`.
pub fn smooth_step(t: f64) -> f64 {
    let a = smooth_ramp(t);
    let b = smooth_ramp(1.0 - t);
    if a + b == 0.0 {
        0.0
    } else {
        a / (a + b)
    }
}

/// Radial cutoff profile: 1 on `|x| <= 1`, 0 on `|x| >= 2`.
pub fn cutoff_profile(r: f64) -> f64 {
    smooth_step(2.0 - r)
}

/// Cutoff `φ(x) = φ̂((x - c)/R)` sampled with the torus metric.
pub fn cutoff_field(grid: Grid, center: &[f64], radius: f64) -> Field {
    Field::from_fn(grid, |x| cutoff_profile(grid.torus_dist(x, center) / radius))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_limits() {
        assert_eq!(smooth_step(-1.0), 0.0);
        assert_eq!(smooth_step(2.0), 1.0);
        assert!((smooth_step(0.5) - 0.5).abs() < 1e-15);
        assert_eq!(cutoff_profile(0.5), 1.0);
        assert_eq!(cutoff_profile(2.5), 0.0);
    }

    #[test]
    fn bump_support() {
        assert_eq!(bump(1.0), 0.0);
        assert!(bump(0.0) > 0.36 && bump(0.0) < 0.37);
    }
}
