//! Quadrature helpers: Gauss-Legendre panels, sequence acceleration, radial angular averages.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;

thread_local! {
    static RULES: RefCell<HashMap<usize, Vec<(f64, f64)>>> = RefCell::new(HashMap::new());
}

/// Gauss-Legendre node/weight pairs on `[-1, 1]`.
pub fn gauss_rule(order: usize) -> Vec<(f64, f64)> {
    RULES.with(|cell| {
        cell.borrow_mut()
            .entry(order)
            .or_insert_with(|| {
                let rule = GaussLegendre::new(NonZeroUsize::new(order.max(1)).unwrap());
                rule.as_node_weight_pairs().to_vec()
            })
            .clone()
    })
}

/// `∫_a^b f` with one Gauss-Legendre panel.
pub fn gauss_panel(rule: &[(f64, f64)], a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    rule.iter().map(|&(x, w)| w * f(c + h * x)).sum::<f64>() * h
}

/// `∫_a^b f` over log-spaced panels, `panels_per_decade` per factor of ten.
pub fn gauss_log(
    rule: &[(f64, f64)],
    a: f64,
    b: f64,
    panels_per_decade: usize,
    mut f: impl FnMut(f64) -> f64,
) -> f64 {
    if b <= a {
        return 0.0;
    }
    let (la, lb) = (a.ln(), b.ln());
    let decades = (lb - la) / std::f64::consts::LN_10;
    let panels = ((decades * panels_per_decade as f64).ceil() as usize).max(1);
    let du = (lb - la) / panels as f64;
    let mut total = 0.0;
    for j in 0..panels {
        let u0 = la + j as f64 * du;
        total += gauss_panel(rule, u0, u0 + du, |u| {
            let x = u.exp();
            f(x) * x
        });
    }
    total
}

/// `∫_a^b f` over uniform panels no wider than `width`.
pub fn gauss_uniform(
    rule: &[(f64, f64)],
    a: f64,
    b: f64,
    width: f64,
    mut f: impl FnMut(f64) -> f64,
) -> f64 {
    if b <= a {
        return 0.0;
    }
    let panels = (((b - a) / width).ceil() as usize).max(1);
    let w = (b - a) / panels as f64;
    (0..panels)
        .map(|j| {
            let x0 = a + j as f64 * w;
            gauss_panel(rule, x0, x0 + w, &mut f)
        })
        .sum()
}

/// Wynn epsilon extrapolation of a sequence of partial sums.
///
/// Returns the even-column estimate whose change from the previous even column is smallest.
pub fn wynn_epsilon(sums: &[f64]) -> f64 {
    let m = sums.len();
    let Some(&last) = sums.last() else {
        return 0.0;
    };
    if m < 3 {
        return last;
    }
    let scale = sums.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
    let mut prev = vec![0.0; m + 1];
    let mut cur: Vec<f64> = sums.to_vec();
    let mut best = last;
    let mut best_err = (sums[m - 1] - sums[m - 2]).abs();
    let mut last_even = last;
    let mut col = 0;
    'outer: while cur.len() > 1 {
        let mut next = Vec::with_capacity(cur.len() - 1);
        for i in 0..cur.len() - 1 {
            let d = cur[i + 1] - cur[i];
            if col % 2 == 0 && d.abs() <= 1e-15 * scale {
                break 'outer;
            }
            if d == 0.0 {
                break 'outer;
            }
            next.push(prev[i + 1] + 1.0 / d);
        }
        prev = cur;
        cur = next;
        col += 1;
        if col % 2 == 0 {
            let Some(&v) = cur.last() else { break };
            if !v.is_finite() {
                break;
            }
            let err = (v - last_even).abs();
            if err < best_err {
                best = v;
                best_err = err;
            }
            last_even = v;
        }
    }
    best
}

/// Surface area of the unit sphere `S^{n-1}`.
pub fn sphere_area(n: usize) -> f64 {
    match n {
        1 => 2.0,
        2 => 2.0 * PI,
        3 => 4.0 * PI,
        _ => 2.0 * PI.powf(n as f64 / 2.0) / statrs::function::gamma::gamma(n as f64 / 2.0),
    }
}

/// Volume of the unit ball in `R^n`.
pub fn ball_volume(n: usize) -> f64 {
    sphere_area(n) / n as f64
}

/// Angular average of `cos(z θ·e)` over `S^{n-1}`: `cos z`, `J0(z)`, `sin z / z`.
pub fn radial_lambda(n: usize, z: f64) -> f64 {
    match n {
        1 => z.cos(),
        2 => bessel_j0(z),
        _ => {
            if z.abs() < 1e-8 {
                1.0
            } else {
                z.sin() / z
            }
        }
    }
}

/// `1 - radial_lambda(n, z)` without cancellation near `z = 0`.
pub fn one_minus_lambda(n: usize, z: f64) -> f64 {
    let z = z.abs();
    match n {
        1 => 2.0 * (0.5 * z).sin().powi(2),
        2 => {
            if z <= 25.0 {
                // (1/π)∫_0^π 2 sin²(z sin t / 2) dt, trapezoid on a periodic integrand
                let m = (z as usize + 34).max(16);
                let dt = PI / m as f64;
                let mut s = 0.0;
                for j in 0..m {
                    let t = (j as f64 + 0.5) * dt;
                    s += (0.5 * z * t.sin()).sin().powi(2);
                }
                2.0 * s / m as f64
            } else {
                1.0 - hankel_j0(z)
            }
        }
        _ => {
            if z < 1.0 {
                // ∫_0^1 2 sin²(z u / 2) du
                let rule = gauss_rule(16);
                gauss_panel(&rule, 0.0, 1.0, |u| 2.0 * (0.5 * z * u).sin().powi(2))
            } else {
                1.0 - z.sin() / z
            }
        }
    }
}

/// Bessel `J0` by its periodic integral (small argument) or Hankel expansion.
pub fn bessel_j0(z: f64) -> f64 {
    let z = z.abs();
    if z <= 25.0 {
        1.0 - one_minus_lambda(2, z)
    } else {
        hankel_j0(z)
    }
}

fn hankel_j0(z: f64) -> f64 {
    // P and Q series of the Hankel asymptotic expansion of J0
    let mut p = 1.0;
    let mut q = 0.0;
    let mut term = 1.0;
    let eight_z = 8.0 * z;
    for k in 1..30 {
        let kk = (2 * k - 1) as f64;
        term *= -(kk * kk) / (k as f64 * eight_z);
        let old = term;
        if k % 2 == 1 {
            q += term * if (k / 2) % 2 == 0 { 1.0 } else { -1.0 };
        } else {
            p += term * if (k / 2) % 2 == 1 { -1.0 } else { 1.0 };
        }
        if old.abs() < 1e-17 {
            break;
        }
    }
    let chi = z - 0.25 * PI;
    (2.0 / (PI * z)).sqrt() * (p * chi.cos() - q * chi.sin())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn j0_reference_values() {
        let cases = [
            (0.0, 1.0),
            (1.0, 0.765_197_686_557_966_6),
            (10.0, -0.245_935_764_451_348_3),
            (24.0, -0.056_230_274_166_859_65),
            (30.0, -0.086_367_983_581_040_23),
            (100.0, 0.019_985_850_304_223_12),
        ];
        for (z, want) in cases {
            assert!((bessel_j0(z) - want).abs() < 1e-13, "J0({z})");
        }
    }

    #[test]
    fn j0_continuous_across_switch() {
        let a = 1.0 - one_minus_lambda(2, 25.0);
        let b = hankel_j0(25.0);
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn small_argument_has_no_cancellation() {
        let z: f64 = 1e-6;
        let want = z * z / 4.0;
        assert!((one_minus_lambda(2, z) / want - 1.0).abs() < 1e-8);
        assert!((one_minus_lambda(3, z) / (z * z / 6.0) - 1.0).abs() < 1e-8);
    }

    #[test]
    fn wynn_accelerates_alternating_series() {
        let mut s = 0.0;
        let sums: Vec<f64> = (0..20)
            .map(|k| {
                s += (if k % 2 == 0 { 1.0 } else { -1.0 }) / (k as f64 + 1.0);
                s
            })
            .collect();
        assert!((wynn_epsilon(&sums) - std::f64::consts::LN_2).abs() < 1e-9);
    }
}
