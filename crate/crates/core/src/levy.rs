//! Lévy kernels, their symbols and the associated Fourier multipliers.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{lp_norm, Field, Grid, Spectral};
use crate::quad::{gauss_log, gauss_panel, gauss_rule, gauss_uniform, one_minus_lambda, sphere_area, wynn_epsilon};

/// Radial shape of the jump density.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    /// `A|y|^{-n-α}` everywhere.
    Stable,
    /// `A|y|^{-n-α}` on `|y| <= 1`, zero beyond.
    TruncatedStable,
    /// `A|y|^{-n-α}` on `|y| <= 1`, `A|y|^{-n-δ}` beyond.
    TwoExponent,
}

/// Kernel parameters as they appear in a config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub alpha: f64,
    pub delta: f64,
    pub cbar1: f64,
    pub cbar2: f64,
    pub profile: Profile,
    #[serde(default = "one")]
    pub amplitude: f64,
}

fn one() -> f64 {
    1.0
}

/// Symmetric radial jump density `π` with exponents `(α, δ)` and bounds `(c̄₁, c̄₂)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevyKernel {
    pub n: usize,
    pub alpha: f64,
    pub delta: f64,
    pub cbar1: f64,
    pub cbar2: f64,
    pub amplitude: f64,
    pub profile: Profile,
}

impl LevyKernel {
    pub fn new(n: usize, spec: &KernelSpec) -> Result<Self> {
        if !(1..=3).contains(&n) {
            return Err(invalid("kernel.n", "dimension must be 1, 2 or 3"));
        }
        let (a, d) = (spec.alpha, spec.delta);
        if !(a > 0.0 && a < 2.0) || a == 1.0 {
            return Err(invalid("kernel.alpha", "must lie in (0,1) or (1,2)"));
        }
        if !(d > 0.0 && d < a) {
            return Err(invalid("kernel.delta", "must lie in (0, alpha)"));
        }
        if (a < 1.0) != (d < 1.0) || d == 1.0 {
            return Err(invalid(
                "kernel.delta",
                "delta and alpha must both lie below 1 or both above 1",
            ));
        }
        if !(spec.cbar1 > 0.0 && spec.cbar1 <= spec.cbar2 && spec.cbar2.is_finite()) {
            return Err(invalid("kernel.cbar1", "need 0 < cbar1 <= cbar2"));
        }
        if !(spec.amplitude > 0.0 && spec.amplitude.is_finite()) {
            return Err(invalid("kernel.amplitude", "must be positive"));
        }
        Ok(Self {
            n,
            alpha: a,
            delta: d,
            cbar1: spec.cbar1,
            cbar2: spec.cbar2,
            amplitude: spec.amplitude,
            profile: spec.profile,
        })
    }

    /// `π(y) = |y|^{-n-α}` with `c̄₁ = c̄₂ = 1`.
    pub fn fractional_laplacian(n: usize, alpha: f64, delta: f64) -> Result<Self> {
        Self::new(
            n,
            &KernelSpec {
                alpha,
                delta,
                cbar1: 1.0,
                cbar2: 1.0,
                profile: Profile::Stable,
                amplitude: 1.0,
            },
        )
    }

    pub fn spec(&self) -> KernelSpec {
        KernelSpec {
            alpha: self.alpha,
            delta: self.delta,
            cbar1: self.cbar1,
            cbar2: self.cbar2,
            profile: self.profile,
            amplitude: self.amplitude,
        }
    }

    pub fn with_amplitude(&self, amplitude: f64) -> Self {
        Self {
            amplitude,
            ..self.clone()
        }
    }

    /// Stable identifier of the kernel parameters.
    pub fn id(&self) -> String {
        format!(
            "{:?}:n={}:alpha={}:delta={}:A={}:c1={}:c2={}",
            self.profile, self.n, self.alpha, self.delta, self.amplitude, self.cbar1, self.cbar2
        )
    }

    /// Exponent of the far-field power law, if the far density is nonzero.
    pub fn far_exponent(&self) -> Option<f64> {
        match self.profile {
            Profile::Stable => Some(self.alpha),
            Profile::TruncatedStable => None,
            Profile::TwoExponent => Some(self.delta),
        }
    }

    pub fn density_radial(&self, rho: f64) -> f64 {
        let n = self.n as f64;
        if rho <= 1.0 {
            self.amplitude * rho.powf(-n - self.alpha)
        } else {
            match self.far_exponent() {
                Some(s) => self.amplitude * rho.powf(-n - s),
                None => 0.0,
            }
        }
    }

    pub fn density(&self, y: &[f64]) -> f64 {
        let rho = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        self.density_radial(rho)
    }

    /// Lévy-Khinchin symbol at frequency `xi`.
    pub fn symbol(&self, xi: &[f64]) -> Result<f64> {
        let k = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
        self.symbol_radial(k)
    }

    /// Symbol as a function of `|ξ|`, refined until successive orders agree.
    pub fn symbol_radial(&self, k: f64) -> Result<f64> {
        if k == 0.0 {
            return Ok(0.0);
        }
        let mut prev = self.symbol_at_order(k, 10);
        for order in [20, 40] {
            let next = self.symbol_at_order(k, order);
            if (next - prev).abs() <= SYMBOL_RTOL * next.abs().max(1e-300) {
                return Ok(next);
            }
            prev = next;
            if order == 40 {
                let last = self.symbol_at_order(k, 60);
                if (last - prev).abs() <= SYMBOL_RTOL * last.abs() {
                    return Ok(last);
                }
                return Err(Error::Quadrature {
                    xi: k,
                    prev,
                    last,
                });
            }
        }
        unreachable!()
    }

    fn symbol_at_order(&self, k: f64, order: usize) -> f64 {
        let n = self.n;
        let area = sphere_area(n) * self.amplitude;
        let alpha = self.alpha;
        let rule = gauss_rule(order);
        let near = |r: f64| area * r.powf(-1.0 - alpha) * one_minus_lambda(n, k * r);

        // analytic leading term on the smallest ball
        let r0 = SMALL_BALL.min(1e-3 / k);
        let mut total = area * k * k * r0.powf(2.0 - alpha) / (2.0 * n as f64 * (2.0 - alpha));
        let r1 = (4.0 / k).min(1.0);
        total += gauss_log(&rule, r0, r1, 4, near);
        if r1 < 1.0 {
            total += gauss_uniform(&rule, r1, 1.0, PI / (2.0 * k), near);
        }

        if let Some(s) = self.far_exponent() {
            let far = |r: f64| area * r.powf(-1.0 - s);
            // first zero of the angular average beyond max(1, π/k)
            let phase = match n {
                1 => 0.5 * PI,
                2 => 0.75 * PI,
                _ => 0.0,
            };
            let z_min = k * 1f64.max(PI / k);
            let j = ((z_min - phase) / PI).ceil().max(0.0);
            let z_start = phase + j * PI;
            let rz = (z_start / k).max(1.0);
            total += gauss_log(&rule, 1.0, rz, 8, |r| far(r) * one_minus_lambda(n, k * r));
            let mass = area * rz.powf(-s) / s;
            let panels = 2 * order + 20;
            let mut sums = Vec::with_capacity(panels);
            let mut acc = 0.0;
            for p in 0..panels {
                let a = (z_start + p as f64 * PI) / k;
                let b = a + PI / k;
                acc += gauss_panel(&rule, a, b, |r| {
                    far(r) * crate::quad::radial_lambda(n, k * r)
                });
                sums.push(acc);
            }
            total += mass - wynn_epsilon(&sums);
        }
        total
    }
}

/// Relative tolerance of the symbol refinement.
pub const SYMBOL_RTOL: f64 = 1e-8;
const SMALL_BALL: f64 = 1e-6;

/// Closed form `|ξ|^α / C(n,α)` of the fractional-Laplacian symbol with unit amplitude.
pub fn stable_symbol_closed_form(n: usize, alpha: f64, k: f64) -> f64 {
    use statrs::function::gamma::gamma;
    let half = alpha / 2.0;
    // |Γ(-s)| = Γ(1-s)/s for 0 < s < 1
    let g_neg = gamma(1.0 - half) / half;
    let c = 2f64.powf(alpha) * gamma((n as f64 + alpha) / 2.0) / (PI.powf(n as f64 / 2.0) * g_neg);
    k.powf(alpha) / c
}

/// One sample of the [ND] check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NdSample {
    pub y: Vec<f64>,
    pub ratio: f64,
    pub region: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NdReport {
    pub near_min: Option<f64>,
    pub near_max: Option<f64>,
    pub far_min: Option<f64>,
    pub far_max: Option<f64>,
    pub symmetric: bool,
    pub violations: Vec<NdSample>,
    pub pass: bool,
}

/// Log-spaced radii in `[1e-3, 1e3]` along a fixed set of directions.
pub fn default_lattice(n: usize) -> Vec<Vec<f64>> {
    let dirs: Vec<Vec<f64>> = match n {
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..8)
            .map(|j| {
                let t = j as f64 * PI / 4.0 + 0.1;
                vec![t.cos(), t.sin()]
            })
            .collect(),
        _ => {
            let mut d = Vec::new();
            for &(a, b, c) in &[
                (1.0, 0.0, 0.0),
                (0.0, 1.0, 0.0),
                (0.0, 0.0, 1.0),
                (1.0, 1.0, 1.0),
                (-1.0, 0.5, 0.25),
            ] {
                let norm = f64::sqrt(a * a + b * b + c * c);
                d.push(vec![a / norm, b / norm, c / norm]);
            }
            d
        }
    };
    let mut out = Vec::new();
    for i in 0..=60 {
        let r = 10f64.powf(-3.0 + i as f64 * 0.1);
        for d in &dirs {
            out.push(d.iter().map(|c| c * r).collect());
        }
    }
    out
}

/// Checks the two-sided near bound and the one-sided far bound on a sample set.
pub fn check_nondegeneracy(kernel: &LevyKernel, lattice: &[Vec<f64>]) -> NdReport {
    let n = kernel.n as f64;
    let mut report = NdReport {
        near_min: None,
        near_max: None,
        far_min: None,
        far_max: None,
        symmetric: true,
        violations: Vec::new(),
        pass: true,
    };
    let upd = |slot: &mut Option<f64>, v: f64, take_min: bool| {
        *slot = Some(match *slot {
            None => v,
            Some(old) if take_min => old.min(v),
            Some(old) => old.max(v),
        });
    };
    for y in lattice {
        let rho = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if rho == 0.0 {
            continue;
        }
        let p = kernel.density(y);
        let minus: Vec<f64> = y.iter().map(|v| -v).collect();
        if kernel.density(&minus) != p {
            report.symmetric = false;
        }
        if rho <= 1.0 {
            let ratio = p * rho.powf(n + kernel.alpha);
            upd(&mut report.near_min, ratio, true);
            upd(&mut report.near_max, ratio, false);
            let tol = 1e-12 * kernel.cbar2;
            if ratio < kernel.cbar1 - tol || ratio > kernel.cbar2 + tol {
                report.violations.push(NdSample {
                    y: y.clone(),
                    ratio,
                    region: "near".into(),
                });
            }
        } else {
            let ratio = p * rho.powf(n + kernel.delta);
            upd(&mut report.far_min, ratio, true);
            upd(&mut report.far_max, ratio, false);
            if ratio < 0.0 || ratio > kernel.cbar2 * (1.0 + 1e-12) {
                report.violations.push(NdSample {
                    y: y.clone(),
                    ratio,
                    region: "far".into(),
                });
            }
        }
    }
    report.pass = report.symmetric && report.violations.is_empty();
    report
}

/// Symbol tabulated on the DFT lattice of a grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevySymbol {
    pub grid: Grid,
    pub values: Vec<f64>,
    pub kernel_id: String,
    pub alpha: f64,
    pub delta: f64,
}

impl LevySymbol {
    /// Evaluates the symbol once per distinct `|m|^2` of the lattice.
    pub fn tabulate(kernel: &LevyKernel, grid: Grid) -> Result<Self> {
        if kernel.n != grid.n {
            return Err(Error::GridMismatch(format!(
                "kernel dimension {} vs grid dimension {}",
                kernel.n, grid.n
            )));
        }
        let spectral = Spectral::new(grid);
        let distinct: Vec<u64> = {
            let mut set: Vec<u64> = spectral.msq.clone();
            set.sort_unstable();
            set.dedup();
            set
        };
        let k0 = grid.k0();
        let computed: Vec<(u64, Result<f64>)> = distinct
            .par_iter()
            .map(|&m| (m, kernel.symbol_radial(k0 * (m as f64).sqrt())))
            .collect();
        let mut table = BTreeMap::new();
        for (m, v) in computed {
            table.insert(m, v?);
        }
        let values = spectral.msq.iter().map(|m| table[m]).collect();
        Ok(Self {
            grid,
            values,
            kernel_id: kernel.id(),
            alpha: kernel.alpha,
            delta: kernel.delta,
        })
    }

    /// Symbol of an arbitrary radial function of `|ξ|` (used for closed forms).
    pub fn from_radial(grid: Grid, kernel_id: &str, alpha: f64, delta: f64, f: impl Fn(f64) -> f64) -> Self {
        let spectral = Spectral::new(grid);
        let values = spectral.k2.iter().map(|k2| if *k2 == 0.0 { 0.0 } else { f(k2.sqrt()) }).collect();
        Self {
            grid,
            values,
            kernel_id: kernel_id.to_string(),
            alpha,
            delta,
        }
    }

    /// Maximum of the symbol on the lattice.
    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }
}

/// `𝓛f` as the spectral multiplier `a(ξ) f̂(ξ)`.
pub fn apply_operator(field: &Field, symbol: &LevySymbol) -> Result<Field> {
    field.grid.check_same(&symbol.grid)?;
    let spectral = Spectral::new(field.grid);
    Ok(Field {
        grid: field.grid,
        values: spectral.apply_multiplier(&field.values, &symbol.values),
        time: field.time,
    })
}

/// `[𝓛, φ] f = 𝓛(φ f) − φ 𝓛 f`.
pub fn apply_commutator(cutoff: &Field, field: &Field, symbol: &LevySymbol) -> Result<Field> {
    cutoff.grid.check_same(&field.grid)?;
    let prod = field.zip_map(cutoff, |f, c| f * c)?;
    let l_prod = apply_operator(&prod, symbol)?;
    let l_f = apply_operator(field, symbol)?;
    let phi_lf = l_f.zip_map(cutoff, |l, c| l * c)?;
    l_prod.axpy(-1.0, &phi_lf)
}

/// One level of a fitted-constant sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepLevel {
    pub param: f64,
    pub lhs: f64,
    pub shape: f64,
    pub ratio: f64,
}

/// Boundedness of `lhs / shape` across a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub name: String,
    pub levels: Vec<SweepLevel>,
    /// Largest ratio, i.e. the fitted constant.
    pub fitted_c: f64,
    /// Max over min of the ratio.
    pub spread: f64,
    /// Least-squares slope of `log lhs` against `log param`.
    pub decay_exponent: f64,
}

impl SweepReport {
    pub fn from_levels(name: &str, levels: Vec<SweepLevel>) -> Self {
        let fitted_c = levels.iter().map(|l| l.ratio).fold(0.0, f64::max);
        let min = levels.iter().map(|l| l.ratio).fold(f64::INFINITY, f64::min);
        let spread = if min > 0.0 { fitted_c / min } else { f64::INFINITY };
        let pts: Vec<(f64, f64)> = levels
            .iter()
            .filter(|l| l.lhs > 0.0 && l.param > 0.0)
            .map(|l| (l.param.ln(), l.lhs.ln()))
            .collect();
        let decay_exponent = -linear_fit(&pts).0;
        Self {
            name: name.to_string(),
            levels,
            fitted_c,
            spread,
            decay_exponent,
        }
    }
}

/// Least-squares `(slope, intercept, r2)`.
pub fn linear_fit(pts: &[(f64, f64)]) -> (f64, f64, f64) {
    let m = pts.len() as f64;
    if pts.len() < 2 {
        return (0.0, pts.first().map(|p| p.1).unwrap_or(0.0), 0.0);
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let r2 = if sxx > 0.0 && syy > 0.0 {
        sxy * sxy / (sxx * syy)
    } else {
        1.0
    };
    (slope, my - slope * mx, r2)
}

/// Sweeps `‖[𝓛,φ_R] f‖_{L^p}` against `(R^{-α} + R^{-δ})‖f‖_{L^p}` over cutoff radii.
pub fn commutator_sweep(
    field: &Field,
    symbol: &LevySymbol,
    center: &[f64],
    radii: &[f64],
    p: f64,
) -> Result<SweepReport> {
    let cell = field.grid.cell_volume();
    let f_norm = lp_norm(&field.values, p, cell);
    let mut levels = Vec::new();
    for &r in radii {
        let phi = crate::bump::cutoff_field(field.grid, center, r);
        let c = apply_commutator(&phi, field, symbol)?;
        let lhs = lp_norm(&c.values, p, cell);
        let shape = (r.powf(-symbol.alpha) + r.powf(-symbol.delta)) * f_norm;
        levels.push(SweepLevel {
            param: r,
            lhs,
            shape,
            ratio: if shape > 0.0 { lhs / shape } else { 0.0 },
        });
    }
    Ok(SweepReport::from_levels("commutator", levels))
}

/// Split `π = π̃ + π̲` at the unit sphere.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnderKernel {
    pub base: LevyKernel,
}

impl UnderKernel {
    pub fn density_radial(&self, rho: f64) -> f64 {
        if rho <= 1.0 {
            return 0.0;
        }
        let tilde = self.base.amplitude * rho.powf(-(self.base.n as f64) - self.base.alpha);
        self.base.density_radial(rho) - tilde
    }

    pub fn density(&self, y: &[f64]) -> f64 {
        self.density_radial(y.iter().map(|v| v * v).sum::<f64>().sqrt())
    }
}

/// The stable extension `π̃` of the near profile and the signed residual `π̲`.
pub fn decompose_kernel(kernel: &LevyKernel) -> (LevyKernel, UnderKernel) {
    let tilde = LevyKernel {
        profile: Profile::Stable,
        ..kernel.clone()
    };
    (
        tilde,
        UnderKernel {
            base: kernel.clone(),
        },
    )
}

/// `(‖𝓛(−Δ)^{β/2} h_t‖_{L¹}, t^{−(α+β)/2} + t^{−(δ+β)/2})` for the periodic heat kernel.
pub fn heat_levy_l1_check(symbol: &LevySymbol, t: f64, beta: f64) -> Result<(f64, f64)> {
    let grid = symbol.grid;
    let h = grid.spacing();
    if !(t > 0.0) || (2.0 * t).sqrt() < 3.0 * h {
        return Err(Error::Resolution(format!(
            "heat kernel width {:.3e} below three cells ({:.3e})",
            (2.0 * t).max(0.0).sqrt(),
            3.0 * h
        )));
    }
    if !(0.0..=2.0).contains(&beta) {
        return Err(invalid("beta", "must lie in [0, 2]"));
    }
    let spectral = Spectral::new(grid);
    let scale = grid.len() as f64 / grid.volume();
    let buf: Vec<Complex64> = spectral
        .k2
        .iter()
        .zip(&symbol.values)
        .map(|(&k2, &a)| {
            let lap = if k2 == 0.0 { 0.0 } else { k2.powf(beta / 2.0) };
            Complex64::new(scale * a * lap * (-t * k2).exp(), 0.0)
        })
        .collect();
    let vals = spectral.inverse(buf);
    let lhs = lp_norm(&vals, 1.0, grid.cell_volume());
    let shape = t.powf(-(symbol.alpha + beta) / 2.0) + t.powf(-(symbol.delta + beta) / 2.0);
    Ok((lhs, shape))
}

/// Dyadic sweep of [`heat_levy_l1_check`] over `t, t/2, ...`.
pub fn heat_levy_sweep(symbol: &LevySymbol, t_max: f64, levels: usize, beta: f64) -> Result<SweepReport> {
    let mut out = Vec::new();
    for j in 0..levels {
        let t = t_max / 2f64.powi(j as i32);
        let (lhs, shape) = heat_levy_l1_check(symbol, t, beta)?;
        out.push(SweepLevel {
            param: t,
            lhs,
            shape,
            ratio: lhs / shape,
        });
    }
    Ok(SweepReport::from_levels("heat-levy-l1", out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_exp(alpha: f64, delta: f64) -> LevyKernel {
        LevyKernel::new(
            2,
            &KernelSpec {
                alpha,
                delta,
                cbar1: 1.0,
                cbar2: 1.0,
                profile: Profile::TwoExponent,
                amplitude: 1.0,
            },
        )
        .unwrap()
    }

    #[test]
    fn rejects_excluded_exponents() {
        assert!(LevyKernel::fractional_laplacian(2, 1.0, 0.5).is_err());
        assert!(LevyKernel::fractional_laplacian(2, 0.8, 0.8).is_err());
        assert!(LevyKernel::fractional_laplacian(2, 1.5, 0.8).is_err());
    }

    #[test]
    fn stable_symbol_matches_closed_form() {
        for n in 1..=3 {
            for &alpha in &[0.5, 0.8, 1.5] {
                let delta = if alpha < 1.0 { 0.4 } else { 1.2 };
                let k = LevyKernel::fractional_laplacian(n, alpha, delta).unwrap();
                for &xi in &[0.3, 1.0, 7.0, 45.0, 180.0] {
                    let got = k.symbol_radial(xi).unwrap();
                    let want = stable_symbol_closed_form(n, alpha, xi);
                    assert!((got / want - 1.0).abs() < 1e-7, "n={n} a={alpha} xi={xi}: {got} vs {want}");
                }
            }
        }
    }

    #[test]
    fn truncated_symbol_matches_direct_difference() {
        // truncated = stable minus the far tail; compare the two routes
        let base = LevyKernel::fractional_laplacian(2, 0.8, 0.6).unwrap();
        let trunc = LevyKernel {
            profile: Profile::TruncatedStable,
            ..base.clone()
        };
        let two = two_exp(0.8, 0.6);
        for &xi in &[0.5, 3.0, 20.0] {
            let s = base.symbol_radial(xi).unwrap();
            let t = trunc.symbol_radial(xi).unwrap();
            let e = two.symbol_radial(xi).unwrap();
            assert!(t < s && t < e && t > 0.0);
        }
    }

    #[test]
    fn decomposition_reconstructs_density() {
        let k = two_exp(0.8, 0.6);
        let (tilde, under) = decompose_kernel(&k);
        for &r in &[0.1, 0.9, 1.5, 2.0, 4.0, 8.0] {
            let y = [r, 0.0];
            let sum = tilde.density(&y) + under.density(&y);
            assert!((sum - k.density(&y)).abs() <= 1e-15 * k.density(&y));
        }
        let (_, u) = decompose_kernel(&LevyKernel::fractional_laplacian(2, 0.8, 0.6).unwrap());
        assert_eq!(u.density(&[3.0, 0.0]), 0.0);
    }

    #[test]
    fn nd_report_flags_scaled_kernel() {
        let k = LevyKernel::fractional_laplacian(2, 0.8, 0.6).unwrap();
        let lat = default_lattice(2);
        let ok = check_nondegeneracy(&k, &lat);
        assert!(ok.pass);
        assert!((ok.near_min.unwrap() - 1.0).abs() < 1e-12 && (ok.near_max.unwrap() - 1.0).abs() < 1e-12);
        let bad = check_nondegeneracy(&k.with_amplitude(2.0), &lat);
        assert!(!bad.pass && !bad.violations.is_empty());
        let trunc = LevyKernel {
            profile: Profile::TruncatedStable,
            ..k
        };
        assert!(check_nondegeneracy(&trunc, &lat).pass);
    }
}
