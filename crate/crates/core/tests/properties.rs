//! Randomized invariants across modules.

use proptest::prelude::*;

use transdiff::config::{parse_tree, set_scalar};
use transdiff::drift::{make_divfree, mollify, DriftScale, DriftSpec, MollifierPair};
use transdiff::io::{decode_fields, encode_fields};
use transdiff::levy::{apply_operator, stable_symbol_closed_form, LevyKernel, LevySymbol};
use transdiff::molecule::{
    check_molecule, evaluate_bundle, make_molecule, schedule_iterations, ConstantParams, ExponentChoice,
    MoleculeProfile, MoleculeSpec,
};
use transdiff::solver::Dynamics;
use transdiff::spaces::{besov_seminorm, holder_seminorm, morrey_norm, MorreyParams};
use transdiff::synth::{band_limited, rng};
use transdiff::verify::{CertSample, Certificate};
use transdiff::{Field, Grid};

fn grid(points: usize) -> Grid {
    Grid::new(2, points, 2.0 * std::f64::consts::PI).unwrap()
}

fn field(g: Grid, seed: u64) -> Field {
    band_limited(g, 5, 1.5, &mut rng(seed))
}

fn closed_symbol(g: Grid, alpha: f64) -> LevySymbol {
    LevySymbol::from_radial(g, "stable", alpha, alpha * 0.75, |k| stable_symbol_closed_form(2, alpha, k))
}

fn config_text() -> &'static str {
    r#"
[grid]
n = 2
points = 16
side_length = 1.0
[kernel]
alpha = 0.8
delta = 0.6
cbar1 = 1.0
cbar2 = 1.0
profile = "stable"
"#
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn symbol_is_nonnegative_and_vanishes_at_origin(alpha in prop_oneof![0.2..0.95f64, 1.05..1.9f64], k in 0.05..40.0f64) {
        let delta = if alpha < 1.0 { 0.5 * alpha } else { 0.5 * (1.0 + alpha) };
        let kernel = LevyKernel::fractional_laplacian(2, alpha, delta).unwrap();
        prop_assert_eq!(kernel.symbol(&[0.0, 0.0]).unwrap(), 0.0);
        let a = kernel.symbol_radial(k).unwrap();
        prop_assert!(a >= 0.0);
        prop_assert!((kernel.symbol(&[k, 0.0]).unwrap() - kernel.symbol(&[0.0, -k]).unwrap()).abs() <= 1e-12 * a);
    }

    #[test]
    fn operator_is_linear_symmetric_and_nonnegative(s1 in 0u64..1000, s2 in 0u64..1000, a in -3.0..3.0f64, b in -3.0..3.0f64, alpha in 0.3..1.9f64) {
        let g = grid(16);
        let sym = closed_symbol(g, alpha);
        let (f, h) = (field(g, s1), field(g, s2.wrapping_add(7919)));
        let lhs = apply_operator(&f.scale(a).axpy(b, &h).unwrap(), &sym).unwrap();
        let rhs = apply_operator(&f, &sym).unwrap().scale(a).axpy(b, &apply_operator(&h, &sym).unwrap()).unwrap();
        let scale = rhs.lp_norm(f64::INFINITY).max(1e-300);
        prop_assert!(lhs.axpy(-1.0, &rhs).unwrap().lp_norm(f64::INFINITY) <= 1e-12 * scale);
        let lf_h = apply_operator(&f, &sym).unwrap().inner(&h).unwrap();
        let f_lh = f.inner(&apply_operator(&h, &sym).unwrap()).unwrap();
        prop_assert!((lf_h - f_lh).abs() <= 1e-10 * lf_h.abs().max(f_lh.abs()).max(1e-300));
        prop_assert!(apply_operator(&f, &sym).unwrap().inner(&f).unwrap() >= 0.0);
    }

    #[test]
    fn norms_are_homogeneous_and_subadditive(s1 in 0u64..500, s2 in 500u64..1000, c in -4.0..4.0f64) {
        let g = Grid::new(2, 16, 1.0).unwrap();
        let (f, h) = (field(g, s1), field(g, s2));
        let sum = f.axpy(1.0, &h).unwrap();
        let morrey = MorreyParams { q: 2.0, a: 1.0, local: false };
        let norms: Vec<Box<dyn Fn(&Field) -> f64>> = vec![
            Box::new(|x: &Field| x.lp_norm(1.0)),
            Box::new(|x: &Field| x.lp_norm(3.0)),
            Box::new(|x: &Field| x.lp_norm(f64::INFINITY)),
            Box::new(|x: &Field| holder_seminorm(x, 0.5).unwrap()),
            Box::new(|x: &Field| besov_seminorm(x, 0.4, 2.0).unwrap()),
            Box::new(move |x: &Field| morrey_norm(x, &morrey).unwrap()),
        ];
        for (i, nrm) in norms.iter().enumerate() {
            let (nf, nh) = (nrm(&f), nrm(&h));
            let tol = 1e-10 * (nf + nh).max(1e-300);
            prop_assert!((nrm(&f.scale(c)) - c.abs() * nf).abs() <= tol * (1.0 + c.abs()), "norm {} not homogeneous", i);
            prop_assert!(nrm(&sum) <= nf + nh + tol, "norm {} not subadditive", i);
        }
    }

    #[test]
    fn morrey_with_zero_index_is_below_lp(seed in 0u64..1000, p in 1.0..4.0f64) {
        let g = Grid::new(2, 16, 1.0).unwrap();
        let f = field(g, seed);
        // subtracting the ball mean is a projection only in L2; in general it costs at most a factor 2
        let m = morrey_norm(&f, &MorreyParams { q: p, a: 0.0, local: false }).unwrap();
        prop_assert!(m <= 2.0 * f.lp_norm(p) * (1.0 + 1e-10));
        let m2 = morrey_norm(&f, &MorreyParams { q: 2.0, a: 0.0, local: false }).unwrap();
        prop_assert!(m2 <= f.lp_norm(2.0) * (1.0 + 1e-10));
    }

    #[test]
    fn generated_drifts_are_divergence_free(seed in 0u64..1000, projection in any::<bool>(), width in 0.2..0.6f64) {
        let g = grid(32);
        let spec = if projection {
            DriftSpec::SpectralProjection { max_mode: 4, seed, unsteady: true }
        } else {
            DriftSpec::StreamFunction { max_mode: 4, seed, unsteady: true }
        };
        let morrey = MorreyParams { q: 6.0, a: 1.0, local: false };
        let v = make_divfree(&spec, g, 1.0, 6, DriftScale::Speed(1.0), &morrey).unwrap();
        prop_assert!(v.divergence_residual() <= 1e-10);
        let vm = mollify(&v, &MollifierPair { epsilon: width }).unwrap();
        prop_assert!(vm.divergence_residual() <= 1e-10);
    }

    #[test]
    fn steps_conserve_mass(seed in 0u64..1000, eps in 0.0..0.05f64, dt in 0.001..0.02f64, implicit in any::<bool>()) {
        let g = grid(32);
        let sym = closed_symbol(g, 0.8);
        let morrey = MorreyParams { q: 6.0, a: 1.0, local: false };
        let v = make_divfree(&DriftSpec::StreamFunction { max_mode: 3, seed, unsteady: true }, g, 1.0, 3, DriftScale::Speed(1.0), &morrey).unwrap();
        let dynamics = Dynamics::forward(&sym, &v, eps);
        let theta = field(g, seed + 1);
        let next = if implicit {
            dynamics.exp_midpoint_step(&theta.values, 0.1, dt).unwrap()
        } else {
            dynamics.imex_step(&theta.values, 0.1, dt).unwrap()
        };
        let after = Field::from_values(g, next).unwrap();
        let scale = theta.lp_norm(1.0);
        prop_assert!((after.integral() - theta.integral()).abs() <= 1e-10 * scale);
    }

    #[test]
    fn certificate_fails_iff_some_margin_is_below_tolerance(pairs in prop::collection::vec((-2.0..2.0f64, -2.0..2.0f64), 1..12), tol in 0.0..0.5f64) {
        let samples: Vec<CertSample> = pairs.iter().map(|(l, r)| CertSample::new("s", *l, *r, 1.0)).collect();
        let expect = samples.iter().all(|s| s.margin >= -tol);
        let c = Certificate::new("c", String::new(), tol, samples);
        prop_assert_eq!(c.pass, expect);
    }

    #[test]
    fn field_files_roundtrip_bit_exactly(values in prop::collection::vec(-1e300..1e300f64, 64), count in 1usize..4) {
        let g = Grid::new(2, 8, 1.5).unwrap();
        let fields: Vec<Field> = (0..count).map(|i| Field::from_values(g, values.iter().map(|v| v / (i + 1) as f64).collect()).unwrap()).collect();
        let back = decode_fields(&encode_fields(&fields).unwrap()).unwrap();
        prop_assert_eq!(back.len(), fields.len());
        for (a, b) in back.iter().zip(&fields) {
            prop_assert!(a.values.iter().zip(&b.values).all(|(x, y)| x.to_bits() == y.to_bits()));
            prop_assert_eq!(a.grid, b.grid);
        }
    }

    #[test]
    fn schedule_radii_are_nondecreasing(r in 0.01..0.5f64, alpha in prop_oneof![0.3..0.95f64, 1.05..1.9f64], k in 0.0..2.0f64, zeta in 1.5..8.0f64) {
        let s = schedule_iterations(r, alpha, 0.1, 1.0, zeta, k).unwrap();
        prop_assert!(s.radii.windows(2).all(|w| w[1] >= w[0]));
        prop_assert!(s.times.windows(2).all(|w| w[1] > w[0]));
        if s.radii.is_empty() {
            prop_assert!(s.stopped_by_rule && s.size_at(0.0) >= 0.5);
        } else {
            prop_assert!((s.radii[0] - r).abs() <= 1e-12 * r);
        }
    }

    #[test]
    fn constructed_molecules_satisfy_their_bounds(r in 0.07..0.16f64, x in 0.0..2.0f64, y in 0.0..2.0f64, gamma in 0.05..0.3f64, dipole in any::<bool>()) {
        let g = Grid::new(2, 64, 2.0).unwrap();
        let spec = MoleculeSpec {
            r,
            x0: vec![x, y],
            gamma,
            omega_exp: gamma + 0.3,
            zeta: 2.0,
            profile: if dipole { MoleculeProfile::Dipole } else { MoleculeProfile::Difference },
        };
        let m = make_molecule(&spec, g).unwrap();
        let c = check_molecule(&m);
        prop_assert!(c.pass, "{:?}", c.margins);
    }

    #[test]
    fn bundles_recheck_after_serialization(nu0 in 0.01..0.5f64, nu1 in 0.01..0.5f64, zeta_exp in 1i32..12) {
        let params = ConstantParams { n: 2, alpha: 1.4, delta: 1.2, gamma: 0.2, omega_exp: 0.3, q: 10.0, mu: 1.0, cbar1: 1.0, eta_prefactor: 1.0 };
        let choice = ExponentChoice { nu0, nu1, p: None, p_tilde_margin: 0.05, q_bar: 3.0 };
        let b = evaluate_bundle(&params, &choice, 2f64.powi(zeta_exp)).unwrap();
        let back: transdiff::molecule::ConstantBundle = serde_json::from_str(&serde_json::to_string(&b).unwrap()).unwrap();
        prop_assert!(back.recheck().unwrap());
        prop_assert_eq!(back, b);
    }

    #[test]
    fn sweep_axis_values_reach_the_parsed_config(alpha in 0.1..0.95f64, points in 8i64..40) {
        let mut tree: toml::Table = config_text().parse().unwrap();
        set_scalar(&mut tree, "kernel.alpha", alpha).unwrap();
        set_scalar(&mut tree, "grid.points", points as f64).unwrap();
        let c = parse_tree(&tree).unwrap();
        prop_assert_eq!(c.kernel.alpha, alpha);
        prop_assert_eq!(c.grid.points, points as usize);
    }
}
