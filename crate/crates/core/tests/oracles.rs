//! Independent oracles and frozen reference values.

use std::f64::consts::PI;

use transdiff::levy::{apply_operator, KernelSpec, LevyKernel, LevySymbol, Profile};
use transdiff::drift::VelocityField;
use transdiff::molecule::{frakc, schedule_iterations};
use transdiff::solver::{contraction_constant, heat_semigroup, local_window, solve, Scheme, SolverConfig, ViscousProblem};
use transdiff::spaces::{besov_seminorm, holder_seminorm, morrey_norm, radius_ladder, MorreyParams};
use transdiff::synth::{band_limited, rng};
use transdiff::{Field, Grid};

fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    // Newton on the three-term recurrence
    (0..n)
        .map(|i| {
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-15 {
                    break;
                }
            }
            (x, 2.0 / ((1.0 - x * x) * dp * dp))
        })
        .collect()
}

#[test]
fn operator_matches_real_space_quadrature() {
    // truncated kernel: the jump integral never leaves the fundamental cell
    let alpha = 0.8;
    let spec = KernelSpec {
        alpha,
        delta: 0.6,
        cbar1: 1.0,
        cbar2: 1.0,
        profile: Profile::TruncatedStable,
        amplitude: 1.0,
    };
    let kernel = LevyKernel::new(2, &spec).unwrap();
    let g = Grid::new(2, 32, 2.0 * PI).unwrap();
    let c = [PI, PI];
    let sigma = 0.5;
    let f = |x: f64, y: f64| (-((x - c[0]).powi(2) + (y - c[1]).powi(2)) / (2.0 * sigma * sigma)).exp();
    let field = Field::from_fn(g, |x| f(x[0], x[1]));
    let spectral = apply_operator(&field, &LevySymbol::tabulate(&kernel, g).unwrap()).unwrap();

    // ½∫_{|y|<=1} (2f(x) − f(x+y) − f(x−y)) |y|^{−2−α} dy in polar form with r = u², dr = 2u du
    let rule = gauss_legendre(48);
    let angles = 96;
    let oracle = |x: f64, y: f64| {
        let mut total = 0.0;
        for &(t, w) in &rule {
            let u = 0.5 * (t + 1.0);
            let r = u * u;
            let mut ring = 0.0;
            for j in 0..angles {
                let th = 2.0 * PI * j as f64 / angles as f64;
                let (dx, dy) = (r * th.cos(), r * th.sin());
                ring += 2.0 * f(x, y) - f(x + dx, y + dy) - f(x - dx, y - dy);
            }
            ring *= 2.0 * PI / angles as f64;
            total += 0.5 * w * 0.5 * ring * r.powf(-1.0 - alpha) * 2.0 * u;
        }
        total
    };
    let peak = spectral.values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    for (i, j) in [(16, 16), (18, 16), (20, 19), (13, 17), (24, 16), (16, 9)] {
        let idx = g.ravel(&[i, j]);
        let x = g.coords(idx);
        let want = oracle(x[0], x[1]);
        let got = spectral.values[idx];
        assert!((got - want).abs() <= 1e-3 * peak, "at ({i},{j}): spectral {got} quadrature {want}");
    }
}

#[test]
fn morrey_norm_equals_exhaustive_search() {
    let g = Grid::new(2, 16, 1.0).unwrap();
    let f = band_limited(g, 6, 1.0, &mut rng(42));
    let np = 16i64;
    let h = g.spacing();
    for (q, a) in [(2.0, 1.0), (1.5, 0.5), (3.0, 2.5)] {
        let mut best = 0.0f64;
        for r in radius_ladder(&g) {
            for ci in 0..np {
                for cj in 0..np {
                    let members: Vec<f64> = (0..np)
                        .flat_map(|i| (0..np).map(move |j| (i, j)))
                        .filter(|&(i, j)| {
                            let wrap = |d: i64| d.rem_euclid(np).min(np - d.rem_euclid(np)) as f64 * h;
                            let (di, dj) = (wrap(i - ci), wrap(j - cj));
                            di * di + dj * dj <= r * r * (1.0 + 1e-12)
                        })
                        .map(|(i, j)| f.values[(i * np + j) as usize])
                        .collect();
                    let mean = members.iter().sum::<f64>() / members.len() as f64;
                    let s: f64 = members.iter().map(|v| (v - mean).abs().powf(q)).sum::<f64>() * g.cell_volume();
                    best = best.max((s / r.powf(a)).powf(1.0 / q));
                }
            }
        }
        let got = morrey_norm(&f, &MorreyParams { q, a, local: false }).unwrap();
        assert!((got - best).abs() <= 1e-12 * best, "q={q} a={a}: {got} vs {best}");
    }
}

#[test]
fn hat_function_holder_seminorm() {
    let g = Grid::new(2, 64, 4.0).unwrap();
    let h = g.spacing();
    let w = 16.0 * h;
    let field = Field::from_fn(g, |x| (1.0 - (x[0] - 2.0).abs() / (w / 2.0)).max(0.0));
    for gamma in [0.25, 0.5, 0.75] {
        let got = holder_seminorm(&field, gamma).unwrap();
        let want = (w / 2.0).powf(-gamma);
        assert!((got - want).abs() <= 1e-12 * want, "gamma={gamma}: {got} vs {want}");
    }
}

#[test]
fn besov_seminorm_of_a_mode_scales_with_frequency() {
    let g = Grid::new(2, 128, 2.0 * PI).unwrap();
    let s = 0.5;
    let norm = |k: f64| besov_seminorm(&Field::from_fn(g, |x| (k * x[0]).sin()), s, 2.0).unwrap();
    let slope = (norm(4.0) / norm(2.0)).log2();
    assert!((slope - s).abs() < 0.1, "slope {slope}");
}

#[test]
fn frakc_reference_value() {
    let want = (PI * 24.0 - (2.0 * PI).sqrt() * 5f64.powf(1.7)) / (2.0 * 5f64.powf(2.5));
    let got = frakc(2, 0.3, 0.5);
    assert!((got - want).abs() <= 1e-15 * want);
    assert!(got > 0.0);
    // frozen
    assert!((got - 0.328_535_276_103_335_8).abs() < 1e-12, "{got:.16}");
    assert!((frakc(2, 0.5, 0.8) - 0.261_449_209_895_226_7).abs() < 1e-12, "{:.16}", frakc(2, 0.5, 0.8));
}

#[test]
fn schedule_replay() {
    let (r, alpha, eps, t0, zeta, k) = (0.05, 0.8, 0.1, 0.8, 2.0, 0.3);
    let s = schedule_iterations(r, alpha, eps, t0, zeta, k).unwrap();
    let mut prev = 0.0;
    for (i, (&t, &ri)) in s.times.iter().zip(&s.radii).enumerate() {
        let want_r = (r.powf(alpha) + k * prev / zeta.powf(alpha)).powf(1.0 / alpha);
        assert!((ri - want_r).abs() <= 1e-12 * want_r, "radius {i}");
        assert!((t - prev - eps * ri.powf(alpha)).abs() <= 1e-12 * t, "step {i}");
        prev = t;
    }
    assert!(s.radii.windows(2).all(|w| w[1] > w[0]));
    assert!(s.stopped_by_rule);
    assert!(s.size_at(s.final_time()) >= t0 / 2.0);
    assert!(s.size_at(s.times[s.times.len() - 2]) < t0 / 2.0);
}

fn problem(eps: f64, horizon: f64, symbol: LevySymbol, theta0: Field) -> ViscousProblem {
    let g = theta0.grid;
    let morrey = MorreyParams {
        q: 6.0,
        a: 1.0,
        local: false,
    };
    ViscousProblem::new(symbol, VelocityField::zero(g, horizon, 2), eps, theta0, horizon, &morrey).unwrap()
}

#[test]
fn local_window_is_the_bisection_threshold() {
    let g = Grid::new(2, 32, 2.0 * PI).unwrap();
    let kernel = LevyKernel::fractional_laplacian(2, 0.8, 0.6).unwrap();
    let p = problem(0.01, 4.0, LevySymbol::tabulate(&kernel, g).unwrap(), band_limited(g, 4, 1.0, &mut rng(3)));
    for prefactor in [0.2, 0.5, 1.0] {
        let w = local_window(&p, prefactor, 1e-3).unwrap();
        assert!(contraction_constant(&p, prefactor, w) <= 0.5);
        assert!(w >= p.horizon || contraction_constant(&p, prefactor, 2.0 * w) > 0.5);
    }
}

#[test]
fn pure_heat_flow_matches_semigroup() {
    let g = Grid::new(2, 32, 2.0 * PI).unwrap();
    let zero = LevySymbol::from_radial(g, "zero", 0.8, 0.6, |_| 0.0);
    let theta0 = band_limited(g, 6, 1.0, &mut rng(9));
    let (eps, t) = (0.05, 0.3);
    for scheme in [Scheme::ExpMidpoint, Scheme::ImexSpectral, Scheme::PicardDuhamel] {
        let sol = solve(&problem(eps, t, zero.clone(), theta0.clone()), &SolverConfig::new(0.01, scheme)).unwrap();
        let exact = heat_semigroup(&theta0, eps * t);
        let err = sol.last().axpy(-1.0, &exact).unwrap().lp_norm(2.0) / exact.lp_norm(2.0);
        assert!(err <= 1e-10, "{scheme:?}: {err}");
    }
}

#[test]
fn exp_midpoint_converges_at_least_first_order() {
    let g = Grid::new(2, 32, 2.0 * PI).unwrap();
    let kernel = LevyKernel::fractional_laplacian(2, 0.8, 0.6).unwrap();
    let symbol = LevySymbol::tabulate(&kernel, g).unwrap();
    let theta0 = band_limited(g, 4, 1.5, &mut rng(5));
    let morrey = MorreyParams {
        q: 6.0,
        a: 1.0,
        local: false,
    };
    let v = transdiff::drift::make_divfree(
        &transdiff::drift::DriftSpec::Shear { amplitude: 1.0, mode: 1 },
        g,
        0.4,
        3,
        transdiff::drift::DriftScale::Raw,
        &morrey,
    )
    .unwrap();
    let run = |dt: f64| {
        let p = ViscousProblem::new(symbol.clone(), v.clone(), 0.01, theta0.clone(), 0.4, &morrey).unwrap();
        solve(&p, &SolverConfig::new(dt, Scheme::ExpMidpoint)).unwrap().last().clone()
    };
    let fine = run(0.4 / 320.0);
    let err = |dt: f64| run(dt).axpy(-1.0, &fine).unwrap().lp_norm(2.0);
    let (e1, e2, e3) = (err(0.04), err(0.02), err(0.01));
    let order = ((e1 / e2).log2() + (e2 / e3).log2()) / 2.0;
    assert!(order >= 0.9, "observed order {order} ({e1:e}, {e2:e}, {e3:e})");
}
