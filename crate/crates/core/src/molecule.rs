//! Molecules of the local Hardy space, the constants that govern their deformation,
//! and their evolution under the dual transport flow.

use std::collections::HashMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::drift::VelocityField;
use crate::error::{invalid, Error, Result};
use crate::grid::{Field, Grid, Spectral};
use crate::levy::{LevyKernel, LevySymbol, Profile};
use crate::quad::{ball_volume, gauss_log, gauss_panel, gauss_rule, sphere_area};
use crate::solver::{Dynamics, Scheme};

/// Shape of the sampled molecule.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MoleculeProfile {
    /// `A(g_σ − g_{2σ})` with concentric normalized Gaussians.
    #[default]
    Difference,
    /// `A(g_σ(x − σe₁) − g_σ(x + σe₁))`.
    Dipole,
}

/// Parameters of an `r`-molecule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MoleculeSpec {
    pub r: f64,
    pub x0: Vec<f64>,
    pub gamma: f64,
    pub omega_exp: f64,
    pub zeta: f64,
    #[serde(default)]
    pub profile: MoleculeProfile,
}

impl MoleculeSpec {
    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.r > 0.0 && self.r.is_finite()) {
            return Err(invalid("molecule.r", "must be positive"));
        }
        if self.x0.len() != n {
            return Err(invalid("molecule.x0", format!("needs {n} coordinates")));
        }
        if !(self.gamma > 0.0 && self.gamma < self.omega_exp && self.omega_exp < 2.0) {
            return Err(invalid("molecule.gamma", "need 0 < gamma < omega_exp < 2"));
        }
        if !(self.zeta > 1.0 && self.zeta.is_finite()) {
            return Err(invalid("molecule.zeta", "must exceed 1"));
        }
        Ok(())
    }

    /// Scale `ζr` of the molecule.
    pub fn scale(&self) -> f64 {
        self.zeta * self.r
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Molecule {
    pub r: f64,
    pub x0: Vec<f64>,
    pub gamma: f64,
    pub omega_exp: f64,
    pub zeta: f64,
    pub field: Field,
}

impl Molecule {
    pub fn spec(&self) -> MoleculeSpec {
        MoleculeSpec {
            r: self.r,
            x0: self.x0.clone(),
            gamma: self.gamma,
            omega_exp: self.omega_exp,
            zeta: self.zeta,
            profile: MoleculeProfile::Difference,
        }
    }

    pub fn is_small(&self) -> bool {
        self.r < 1.0
    }
}

/// `2 v_n^{ω/(n+ω)}`, the constant of the L¹ bound.
pub fn l1_constant(n: usize, omega: f64) -> f64 {
    let nf = n as f64;
    2.0 * ball_volume(n).powf(omega / (nf + omega))
}

/// `C_p` in `‖ψ‖_{L^p} <= C_p (ζr)^{−n+n/p−γ}`.
pub fn lp_constant(n: usize, omega: f64, p: f64) -> f64 {
    if p.is_infinite() {
        1.0
    } else {
        l1_constant(n, omega).powf(1.0 / p)
    }
}

fn gaussian(grid: &Grid, center: &[f64], sigma: f64) -> Vec<f64> {
    let mut g: Vec<f64> = (0..grid.len())
        .map(|idx| {
            let d = grid.torus_delta(&grid.coords(idx), center);
            let r2: f64 = d[..grid.n].iter().map(|v| v * v).sum();
            (-0.5 * r2 / (sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = g.iter().sum::<f64>() * grid.cell_volume();
    for v in &mut g {
        *v /= s;
    }
    g
}

fn weighted_moment(field: &Field, center: &[f64], omega: f64) -> f64 {
    let g = field.grid;
    field
        .values
        .iter()
        .enumerate()
        .map(|(idx, v)| v.abs() * g.torus_dist(&g.coords(idx), center).powf(omega))
        .sum::<f64>()
        * g.cell_volume()
}

/// Sampled molecule saturating 90% of the tighter of the height and concentration bounds.
pub fn make_molecule(spec: &MoleculeSpec, grid: Grid) -> Result<Molecule> {
    make_molecule_with_amplitude(spec, grid, 0.9)
}

fn make_molecule_with_amplitude(spec: &MoleculeSpec, grid: Grid, fill: f64) -> Result<Molecule> {
    spec.validate(grid.n)?;
    let lambda = spec.scale();
    let h = grid.spacing();
    if lambda < 4.0 * h {
        return Err(Error::Resolution(format!(
            "molecule scale {lambda} spans fewer than 4 cells of width {h}"
        )));
    }
    if lambda > grid.side_length / 6.0 {
        return Err(Error::Resolution(format!(
            "molecule scale {lambda} does not fit in a periodic box of side {}",
            grid.side_length
        )));
    }
    let sigma = lambda / 4.0;
    let profile: Vec<f64> = match spec.profile {
        MoleculeProfile::Difference => {
            let a = gaussian(&grid, &spec.x0, sigma);
            let b = gaussian(&grid, &spec.x0, 2.0 * sigma);
            a.iter().zip(&b).map(|(x, y)| x - y).collect()
        }
        MoleculeProfile::Dipole => {
            let mut plus = spec.x0.clone();
            let mut minus = spec.x0.clone();
            plus[0] += sigma;
            minus[0] -= sigma;
            let a = gaussian(&grid, &plus, sigma);
            let b = gaussian(&grid, &minus, sigma);
            a.iter().zip(&b).map(|(x, y)| x - y).collect()
        }
    };
    let shape = Field::from_values(grid, profile)?;
    let n = grid.n as f64;
    let height = shape.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let conc = weighted_moment(&shape, &spec.x0, spec.omega_exp);
    let a_height = lambda.powf(-(n + spec.gamma)) / height;
    let a_conc = lambda.powf(spec.omega_exp - spec.gamma) / conc;
    let amp = fill * a_height.min(a_conc);
    let m = Molecule {
        r: spec.r,
        x0: spec.x0.clone(),
        gamma: spec.gamma,
        omega_exp: spec.omega_exp,
        zeta: spec.zeta,
        field: shape.scale(amp),
    };
    if fill < 1.0 {
        let report = check_molecule(&m);
        if !report.pass {
            return Err(Error::Precondition(format!(
                "constructed molecule violates its bounds: {report:?}"
            )));
        }
    }
    Ok(m)
}

/// Measured molecule quantities against their bounds; margins are `(bound − value)/bound`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoleculeCheck {
    pub concentration: f64,
    pub concentration_bound: f64,
    pub height: f64,
    pub height_bound: f64,
    /// `|∫ψ|` and its bound `1e-10 ‖ψ‖_{L¹}`; absent for `r >= 1`.
    pub moment: Option<(f64, f64)>,
    pub l1: f64,
    pub l1_bound: f64,
    pub margins: Vec<(String, f64)>,
    pub pass: bool,
}

pub fn check_molecule(m: &Molecule) -> MoleculeCheck {
    let grid = m.field.grid;
    let n = grid.n;
    let lambda = m.zeta * m.r;
    let concentration = weighted_moment(&m.field, &m.x0, m.omega_exp);
    let concentration_bound = lambda.powf(m.omega_exp - m.gamma);
    let height = m.field.values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let height_bound = lambda.powf(-(n as f64 + m.gamma));
    let l1 = m.field.lp_norm(1.0);
    let l1_bound = l1_constant(n, m.omega_exp) * lambda.powf(-m.gamma);
    let moment = m
        .is_small()
        .then(|| (m.field.integral().abs(), 1e-10 * l1));
    let margin = |value: f64, bound: f64| {
        if bound > 0.0 {
            (bound - value) / bound
        } else if value == 0.0 {
            0.0
        } else {
            -1.0
        }
    };
    let mut margins = vec![
        ("concentration".to_string(), margin(concentration, concentration_bound)),
        ("height".to_string(), margin(height, height_bound)),
        ("l1".to_string(), margin(l1, l1_bound)),
    ];
    if let Some((v, b)) = moment {
        // a vanishing field has a vanishing moment
        let mm = if v == 0.0 { 1.0 } else { margin(v, b) };
        margins.push(("moment".to_string(), mm));
    }
    let pass = margins.iter().all(|(_, v)| *v >= 0.0);
    MoleculeCheck {
        concentration,
        concentration_bound,
        height,
        height_bound,
        moment,
        l1,
        l1_bound,
        margins,
        pass,
    }
}

/// Scale an existing molecule's field; the result need not satisfy the molecule bounds.
pub fn rescaled(m: &Molecule, factor: f64) -> Molecule {
    Molecule {
        field: m.field.scale(factor),
        ..m.clone()
    }
}

// ---------------------------------------------------------------------------
// constants

fn one() -> f64 {
    1.0
}

/// Inputs of the constants engine.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantParams {
    pub n: usize,
    pub alpha: f64,
    pub delta: f64,
    pub gamma: f64,
    pub omega_exp: f64,
    pub q: f64,
    /// Bound on `‖v‖_{L^∞(M^{q,a})}`.
    pub mu: f64,
    #[serde(default = "one")]
    pub cbar1: f64,
    /// The unquantified constant `C` in front of `η`.
    #[serde(default = "one")]
    pub eta_prefactor: f64,
}

impl ConstantParams {
    pub fn validate(&self) -> Result<()> {
        let (a, d, g, w) = (self.alpha, self.delta, self.gamma, self.omega_exp);
        let nf = self.n as f64;
        if !(1..=3).contains(&self.n) {
            return Err(invalid("constants.n", "dimension must be 1, 2 or 3"));
        }
        if a < 1.0 {
            if !(0.0 < g && g < w && w < d && d < a) {
                return Err(invalid(
                    "constants.omega_exp",
                    "need 0 < gamma < omega < delta < alpha < 1",
                ));
            }
            if !(self.q > nf / (a - g)) {
                return Err(invalid("constants.q", "need q > n/(alpha - gamma)"));
            }
        } else if a > 1.0 && a < 2.0 {
            if !(1.0 < d && d < a) {
                return Err(invalid("constants.delta", "need 1 < delta < alpha < 2"));
            }
            if !(0.0 < g && g < w && w < 2.0 - a) {
                return Err(invalid("constants.omega_exp", "need 0 < gamma < omega < 2 - alpha"));
            }
            if !(self.q > nf / (1.0 - g)) {
                return Err(invalid("constants.q", "need q > n/(1 - gamma)"));
            }
        } else {
            return Err(invalid("constants.alpha", "must lie in (0,1) or (1,2)"));
        }
        if !(self.mu >= 0.0 && self.cbar1 > 0.0 && self.eta_prefactor > 0.0) {
            return Err(invalid("constants.mu", "mu >= 0, cbar1 > 0, eta_prefactor > 0"));
        }
        Ok(())
    }

    /// Morrey index with `(a − n)/q = 1 − α`.
    pub fn morrey_a(&self) -> f64 {
        self.n as f64 + self.q * (1.0 - self.alpha)
    }

    pub fn small_alpha(&self) -> bool {
        self.alpha < 1.0
    }
}

/// `𝔠 = (v_n(5^n − 1) − √(2v_n) 5^{n−ω}) / (2·5^{n+α})`.
pub fn frakc(n: usize, omega: f64, alpha: f64) -> f64 {
    let vn = ball_volume(n);
    let nf = n as f64;
    (vn * (5f64.powf(nf) - 1.0) - (2.0 * vn).sqrt() * 5f64.powf(nf - omega)) / (2.0 * 5f64.powf(nf + alpha))
}

/// Free parameters of the exponent bookkeeping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExponentChoice {
    /// `β₀ = 1 − ν₀`.
    pub nu0: f64,
    /// `β₁ = 1 + ν₁`.
    pub nu1: f64,
    /// Used for `α < 1` only.
    pub p: Option<f64>,
    /// Relative excess of `p̃` over its threshold.
    pub p_tilde_margin: f64,
    pub q_bar: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentCertificate {
    pub expression: String,
    pub value: f64,
    /// Whether zero is admissible.
    pub allow_zero: bool,
    /// Whether the sign condition holds.
    pub negative: bool,
}

/// Everything the deformation theorems need, with the certificates that justify it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantBundle {
    pub params: ConstantParams,
    pub a: f64,
    pub choice: ExponentChoice,
    pub beta0: f64,
    pub beta1: f64,
    pub p_tilde: f64,
    /// `1/p̃ + 1/q + 1/z = 1`, used for `α > 1`.
    pub z: Option<f64>,
    pub epsilon_exp: f64,
    pub frakc: f64,
    pub zeta_chosen: f64,
    pub k_value: f64,
    pub k_bound: f64,
    pub exponent_certificates: Vec<ExponentCertificate>,
    /// Whether `k_value` comes from the `η` formula or was set explicitly.
    pub k_from_eta: bool,
}

impl ConstantBundle {
    pub fn exponents_negative(&self) -> bool {
        self.exponent_certificates.iter().all(|c| c.negative)
    }

    pub fn k_condition(&self) -> bool {
        self.k_value <= self.k_bound
    }

    /// Replace `K`, e.g. by the largest value the height argument admits.
    pub fn with_k(mut self, k: f64) -> Self {
        self.k_value = k;
        self.k_from_eta = false;
        self
    }

    /// Recompute every certificate from the stored parameters and compare.
    pub fn recheck(&self) -> Result<bool> {
        let fresh = evaluate_bundle(&self.params, &self.choice, self.zeta_chosen)?;
        if fresh.exponent_certificates.len() != self.exponent_certificates.len() {
            return Ok(false);
        }
        let certs_ok = fresh
            .exponent_certificates
            .iter()
            .zip(&self.exponent_certificates)
            .all(|(a, b)| {
                a.expression == b.expression
                    && a.negative == b.negative
                    && (a.value - b.value).abs() <= 1e-9 * (1.0 + b.value.abs())
            });
        let k_ok = !self.k_from_eta || (fresh.k_value - self.k_value).abs() <= 1e-9 * self.k_value.abs();
        Ok(certs_ok && k_ok && (fresh.k_bound - self.k_bound).abs() <= 1e-12 * self.k_bound.abs())
    }
}

fn p_tilde_threshold(params: &ConstantParams) -> f64 {
    let nf = params.n as f64;
    if params.small_alpha() {
        nf / (params.alpha - params.omega_exp)
    } else {
        nf / (1.0 - params.omega_exp)
    }
}

/// `p̃(ω − 1) + n`, computed without cancellation near the `α > 1` threshold.
fn m_tilde(params: &ConstantParams, margin: f64) -> f64 {
    let nf = params.n as f64;
    if params.small_alpha() {
        nf - (1.0 - params.omega_exp) * p_tilde_threshold(params) * (1.0 + margin)
    } else {
        -nf * margin
    }
}

/// Certificates, `ε` and `K` at a given choice and `ζ`.
pub fn evaluate_bundle(params: &ConstantParams, choice: &ExponentChoice, zeta: f64) -> Result<ConstantBundle> {
    params.validate()?;
    if !(zeta > 1.0) {
        return Err(invalid("constants.zeta", "must exceed 1"));
    }
    if !(choice.nu0 > 0.0 && choice.nu0 < 1.0 && choice.nu1 > 0.0) {
        return Err(invalid("constants.nu", "need 0 < nu0 < 1 and nu1 > 0"));
    }
    if !(choice.p_tilde_margin > 0.0) {
        return Err(invalid("constants.p_tilde_margin", "must be positive"));
    }
    let nf = params.n as f64;
    let (al, de, w, q) = (params.alpha, params.delta, params.omega_exp, params.q);
    let a = params.morrey_a();
    let b0 = 1.0 - choice.nu0;
    let b1 = 1.0 + choice.nu1;
    let pt = p_tilde_threshold(params) * (1.0 + choice.p_tilde_margin);
    let m = m_tilde(params, choice.p_tilde_margin);
    let lz = zeta.ln();
    let x = (b1 - b0) * m * lz;
    let eps = (-(x.exp_m1())).ln() / (m * b0 * lz);
    let qb = choice.q_bar;
    let mut certs: Vec<(String, f64)> = Vec::new();
    let mut z = None;
    if params.small_alpha() {
        let p = choice
            .p
            .ok_or_else(|| invalid("constants.p", "required when alpha < 1"))?;
        certs.push((
            "(b0-1)(w-a+n/p)+(1-a)(b1-b0)".into(),
            (b0 - 1.0) * (w - al + nf / p) + (1.0 - al) * (b1 - b0),
        ));
        certs.push((
            "(1-b0(1+e))(a-w-n/pt)+(b1-b0(1+e))(1-a)".into(),
            (1.0 - b0 * (1.0 + eps)) * (al - w - nf / pt) + (b1 - b0 * (1.0 + eps)) * (1.0 - al),
        ));
        certs.push(("(b1-1)(w-a+n/q)".into(), (b1 - 1.0) * (w - al + nf / q)));
        certs.push(("(b1-1)(w-a+n/qbar)".into(), (b1 - 1.0) * (w - al + nf / qb)));
        certs.push(("1-p".into(), 1.0 - p));
        certs.push(("p-n/(2-a-w)".into(), p - nf / (2.0 - al - w)));
        certs.push(("n/(a-w)-pt".into(), nf / (al - w) - pt));
    } else {
        certs.push((
            "(b0-1)(w-a+n)+(b1-b0)(1-a+n/q)".into(),
            (b0 - 1.0) * (w - al + nf) + (b1 - b0) * (1.0 - al + nf / q),
        ));
        certs.push((
            "b1(1-a+n/q)+b0(1+e)(w-1+n/pt)-(n/q+n/pt)+a-w".into(),
            b1 * (1.0 - al + nf / q) + b0 * (1.0 + eps) * (m / pt) - (nf / q + nf / pt) + al - w,
        ));
        certs.push(("(b1-1)(w-a+n/q)".into(), (b1 - 1.0) * (w - al + nf / q)));
        certs.push(("(b1-1)(w-a+n/qbar)".into(), (b1 - 1.0) * (w - al + nf / qb)));
        certs.push(("n/(1-w)-pt".into(), nf / (1.0 - w) - pt));
        certs.push(("1/pt+1/q-1".into(), 1.0 / pt + 1.0 / q - 1.0));
        certs.push(("nu1-nu0".into(), choice.nu1 - choice.nu0));
        let inv_z = 1.0 - 1.0 / pt - 1.0 / q;
        if inv_z > 0.0 {
            z = Some(1.0 / inv_z);
        }
    }
    certs.push(("w-d+n/qbar".into(), w - de + nf / qb));
    certs.push(("w-a+n/q".into(), w - al + nf / q));
    certs.push(("-e".into(), -eps));
    let exponent_certificates: Vec<ExponentCertificate> = certs
        .into_iter()
        .map(|(expression, value)| {
            let allow_zero = expression == "nu1-nu0";
            ExponentCertificate {
                negative: value < 0.0 || (allow_zero && value == 0.0),
                expression,
                allow_zero,
                value,
            }
        })
        .collect();
    let sum: f64 = exponent_certificates[..4].iter().map(|c| zeta.powf(c.value)).sum();
    let k_value = 2.0 * al / (w - params.gamma) * params.eta_prefactor * params.mu.max(1.0) * sum;
    let fc = frakc(params.n, w, al);
    let k_bound = al / (nf + params.gamma) * params.cbar1 * fc;
    Ok(ConstantBundle {
        params: params.clone(),
        a,
        choice: choice.clone(),
        beta0: b0,
        beta1: b1,
        p_tilde: pt,
        z,
        epsilon_exp: eps,
        frakc: fc,
        zeta_chosen: zeta,
        k_value,
        k_bound,
        exponent_certificates,
        k_from_eta: true,
    })
}

/// Largest power of two searched for `ζ`.
pub const ZETA_MAX_LOG2: u32 = 20;

fn candidate_choices(params: &ConstantParams) -> Vec<ExponentChoice> {
    let nf = params.n as f64;
    let margins: Vec<f64> = (0..14).map(|j| 10f64.powi(-j)).chain([3.0, 0.3, 0.03]).collect();
    let qbar_threshold = nf / (params.delta - params.omega_exp);
    let qbars: Vec<f64> = [1.001, 2.0, 10.0, 100.0, 1000.0]
        .iter()
        .map(|f| qbar_threshold * f)
        .collect();
    let nus: Vec<f64> = (1..100).map(|i| i as f64 / 100.0).collect();
    let mut out = Vec::new();
    if params.small_alpha() {
        let p_hi = nf / (2.0 - params.alpha - params.omega_exp);
        let ps: Vec<f64> = [1.0001, 1.01, 1.1, 0.5 * (1.0 + p_hi)]
            .into_iter()
            .filter(|p| *p > 1.0 && *p < p_hi)
            .collect();
        for &nu in &nus {
            for &p in &ps {
                for &pm in &margins {
                    for &qb in &qbars {
                        out.push(ExponentChoice {
                            nu0: nu,
                            nu1: nu,
                            p: Some(p),
                            p_tilde_margin: pm,
                            q_bar: qb,
                        });
                    }
                }
            }
        }
    } else {
        for &nu in &nus {
            for ratio in [0.01, 0.1, 0.5, 1.0] {
                for &pm in &margins {
                    for &qb in &qbars {
                        out.push(ExponentChoice {
                            nu0: nu,
                            nu1: nu * ratio,
                            p: None,
                            p_tilde_margin: pm,
                            q_bar: qb,
                        });
                    }
                }
            }
        }
    }
    out
}

/// Search `ζ = 2, 4, …, 2^20` for the first value at which some exponent choice makes every
/// certificate negative and `K <= (α/(n+γ)) c̄₁ 𝔠`; the smallest such `K` is returned.
pub fn compute_constants(params: &ConstantParams) -> Result<ConstantBundle> {
    params.validate()?;
    let choices = candidate_choices(params);
    let mut best_violation: Option<(f64, String, f64)> = None;
    let mut best_feasible_k: Option<(f64, f64, f64)> = None;
    for j in 1..=ZETA_MAX_LOG2 {
        let zeta = 2f64.powi(j as i32);
        let mut best: Option<ConstantBundle> = None;
        for c in &choices {
            let b = evaluate_bundle(params, c, zeta)?;
            if !b.exponent_certificates.iter().all(|e| e.value.is_finite()) {
                continue;
            }
            if b.exponents_negative() {
                if best.as_ref().is_none_or(|x| b.k_value < x.k_value) {
                    best = Some(b);
                }
            } else {
                let worst = b
                    .exponent_certificates
                    .iter()
                    .max_by(|x, y| x.value.total_cmp(&y.value))
                    .unwrap();
                if best_violation.as_ref().is_none_or(|v| worst.value < v.0) {
                    best_violation = Some((worst.value, worst.expression.clone(), zeta));
                }
            }
        }
        if let Some(b) = best {
            if b.k_condition() {
                return Ok(b);
            }
            if best_feasible_k.is_none_or(|v| b.k_value < v.0) {
                best_feasible_k = Some((b.k_value, zeta, b.k_bound));
            }
        }
    }
    let blocking = match (best_feasible_k, best_violation) {
        (Some((k, zeta, bound)), _) => format!(
            "K condition: smallest K = {k:.6e} (at zeta = {zeta}) exceeds (alpha/(n+gamma)) cbar1 c = {bound:.6e}"
        ),
        (None, Some((v, expr, zeta))) => {
            format!("exponent `{expr}` stays nonnegative (best value {v:.3e} at zeta = {zeta})")
        }
        (None, None) => "no finite exponent evaluation".to_string(),
    };
    Err(Error::Infeasible {
        max_log2: ZETA_MAX_LOG2,
        blocking,
    })
}

// ---------------------------------------------------------------------------
// schedule

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub r: f64,
    pub alpha: f64,
    pub zeta: f64,
    pub k: f64,
    pub eps_step: f64,
    pub t0: f64,
    /// Cumulative end times `s_i` of each step.
    pub times: Vec<f64>,
    /// Radius `r_i` in force during step `i`.
    pub radii: Vec<f64>,
    /// Whether the `T0/2` rule (rather than the step cap) ended the schedule.
    pub stopped_by_rule: bool,
}

impl Schedule {
    /// `(ζr)^α + K s`.
    pub fn size_at(&self, s: f64) -> f64 {
        (self.zeta * self.r).powf(self.alpha) + self.k * s
    }

    pub fn final_time(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }
}

/// Steps `s_i − s_{i−1} = ε r_i^α` with `r_i = (r^α + K s_{i−1}/ζ^α)^{1/α}`, stopped once
/// `(ζr)^α + K s_i >= T0/2` or after `⌈T0/(ε r^α)⌉` steps.
pub fn schedule_iterations(r: f64, alpha: f64, eps_step: f64, t0: f64, zeta: f64, k: f64) -> Result<Schedule> {
    if !(r > 0.0 && r < 1.0) {
        return Err(invalid("schedule.r", "need 0 < r < 1"));
    }
    if !(t0 > 0.0 && eps_step > 0.0 && zeta > 1.0 && k >= 0.0 && alpha > 0.0) {
        return Err(invalid("schedule", "need T0, eps_step, K >= 0 and zeta > 1"));
    }
    let mut sch = Schedule {
        r,
        alpha,
        zeta,
        k,
        eps_step,
        t0,
        times: Vec::new(),
        radii: Vec::new(),
        stopped_by_rule: false,
    };
    if sch.size_at(0.0) >= t0 / 2.0 {
        sch.stopped_by_rule = true;
        return Ok(sch);
    }
    let cap = (t0 / (eps_step * r.powf(alpha))).ceil() as usize;
    let mut s = 0.0;
    for _ in 0..cap {
        let ri = (r.powf(alpha) + k * s / zeta.powf(alpha)).powf(1.0 / alpha);
        s += eps_step * ri.powf(alpha);
        sch.times.push(s);
        sch.radii.push(ri);
        if sch.size_at(s) >= t0 / 2.0 {
            sch.stopped_by_rule = true;
            break;
        }
    }
    Ok(sch)
}

// ---------------------------------------------------------------------------
// center transport

/// Fourier multiplier of the ball average of radius 1 at `z = |k|ρ`.
pub fn ball_multiplier(n: usize, z: f64) -> f64 {
    let z = z.abs();
    match n {
        1 => {
            if z < 1e-4 {
                1.0 - z * z / 6.0
            } else {
                z.sin() / z
            }
        }
        2 => {
            if z < 1e-2 {
                1.0 - z * z / 8.0 + z.powi(4) / 192.0
            } else {
                2.0 * bessel_j1(z) / z
            }
        }
        _ => {
            if z < 1e-2 {
                1.0 - z * z / 10.0 + z.powi(4) / 280.0
            } else {
                3.0 * (z.sin() - z * z.cos()) / z.powi(3)
            }
        }
    }
}

/// `J1(z) = (1/2π)∫_0^{2π} cos(t − z sin t) dt` by the periodic trapezoid rule.
pub fn bessel_j1(z: f64) -> f64 {
    let m = (z.abs().ceil() as usize + 40).max(32);
    let dt = 2.0 * PI / m as f64;
    let s: f64 = (0..m)
        .map(|j| {
            let t = j as f64 * dt;
            (t - z * t.sin()).cos()
        })
        .sum();
    s / m as f64
}

/// Ball averages of a time-dependent drift at arbitrary points.
pub struct BallAverager {
    grid: Grid,
    times: Vec<f64>,
    hats: Vec<Vec<Vec<Complex64>>>,
    msq: Vec<u64>,
    modes: Vec<[i64; 3]>,
    mult: Vec<f64>,
    radius: f64,
}

impl BallAverager {
    pub fn new(v: &VelocityField) -> Self {
        let grid = v.grid;
        let s = Spectral::new(grid);
        let norm = 1.0 / grid.len() as f64;
        let hats = v
            .components
            .iter()
            .map(|node| {
                node.iter()
                    .map(|c| s.forward(c).into_iter().map(|x| x * norm).collect())
                    .collect()
            })
            .collect();
        let modes = (0..grid.len()).map(|i| grid.modes(i)).collect();
        Self {
            grid,
            times: v.time_nodes.clone(),
            hats,
            msq: s.msq,
            modes,
            mult: vec![1.0; grid.len()],
            radius: 0.0,
        }
    }

    pub fn set_radius(&mut self, rho: f64) -> Result<()> {
        if rho < self.grid.spacing() {
            return Err(Error::Resolution(format!(
                "averaging radius {rho} is below the grid spacing {}",
                self.grid.spacing()
            )));
        }
        if rho == self.radius {
            return Ok(());
        }
        let k0 = self.grid.k0();
        let n = self.grid.n;
        let mut cache: HashMap<u64, f64> = HashMap::new();
        for (m, &sq) in self.mult.iter_mut().zip(&self.msq) {
            *m = *cache
                .entry(sq)
                .or_insert_with(|| ball_multiplier(n, k0 * (sq as f64).sqrt() * rho));
        }
        self.radius = rho;
        Ok(())
    }

    fn weights(&self, t: f64) -> [(usize, f64); 2] {
        let nodes = &self.times;
        if nodes.len() == 1 || t <= nodes[0] {
            return [(0, 1.0), (0, 0.0)];
        }
        let last = nodes.len() - 1;
        if t >= nodes[last] {
            return [(last, 1.0), (last, 0.0)];
        }
        let j = nodes.partition_point(|&x| x <= t) - 1;
        let w = (t - nodes[j]) / (nodes[j + 1] - nodes[j]);
        [(j, 1.0 - w), (j + 1, w)]
    }

    /// `v̄_{B(x,ρ)}(t)` from the trigonometric interpolant of the drift.
    pub fn average(&self, t: f64, x: &[f64]) -> [f64; 3] {
        let g = self.grid;
        let n = g.n;
        let k0 = g.k0();
        let np = g.points_per_dim;
        let phases: Vec<Vec<Complex64>> = (0..n)
            .map(|a| {
                (0..np)
                    .map(|i| Complex64::from_polar(1.0, k0 * g.signed_mode(i) as f64 * x[a]))
                    .collect()
            })
            .collect();
        let w = self.weights(t);
        let mut out = [0.0; 3];
        for (a, o) in out.iter_mut().enumerate().take(n) {
            let mut acc = Complex64::new(0.0, 0.0);
            for (idx, m) in self.modes.iter().enumerate() {
                let mut ph = Complex64::new(self.mult[idx], 0.0);
                for b in 0..n {
                    let i = m[b].rem_euclid(np as i64) as usize;
                    ph *= phases[b][i];
                }
                let h = self.hats[w[0].0][a][idx] * w[0].1 + self.hats[w[1].0][a][idx] * w[1].1;
                acc += h * ph;
            }
            *o = acc.re;
        }
        out
    }

    /// One classical Runge-Kutta step of `x′ = v̄_{B(x,ρ)}`.
    pub fn rk4_step(&self, t: f64, x: &[f64], dt: f64) -> Vec<f64> {
        let n = self.grid.n;
        let add = |x: &[f64], k: &[f64; 3], c: f64| -> Vec<f64> { (0..n).map(|a| x[a] + c * k[a]).collect() };
        let k1 = self.average(t, x);
        let k2 = self.average(t + dt / 2.0, &add(x, &k1, dt / 2.0));
        let k3 = self.average(t + dt / 2.0, &add(x, &k2, dt / 2.0));
        let k4 = self.average(t + dt, &add(x, &k3, dt));
        (0..n)
            .map(|a| x[a] + dt / 6.0 * (k1[a] + 2.0 * k2[a] + 2.0 * k3[a] + k4[a]))
            .collect()
    }
}

/// Center path of `x′(s) = v̄_{B(x(s),ρ)}` on `[s0, s1]` with `steps` RK4 steps.
pub fn evolve_center(
    v: &VelocityField,
    x0: &[f64],
    rho: f64,
    interval: (f64, f64),
    steps: usize,
) -> Result<Vec<(f64, Vec<f64>)>> {
    if x0.len() != v.grid.n {
        return Err(invalid("x0", "dimension mismatch"));
    }
    if steps == 0 || !(interval.1 >= interval.0) {
        return Err(invalid("interval", "need s1 >= s0 and at least one step"));
    }
    let mut avg = BallAverager::new(v);
    avg.set_radius(rho)?;
    let dt = (interval.1 - interval.0) / steps as f64;
    let mut x = x0.to_vec();
    let mut path = vec![(interval.0, x.clone())];
    for i in 0..steps {
        let t = interval.0 + i as f64 * dt;
        x = avg.rk4_step(t, &x, dt);
        path.push((interval.0 + (i + 1) as f64 * dt, x.clone()));
    }
    Ok(path)
}

// ---------------------------------------------------------------------------
// concentration integrals

/// Spherical mean of `|d e₁ − y|^ω` over `|y| = ρ`.
fn sphere_mean_power(n: usize, d: f64, rho: f64, omega: f64) -> f64 {
    match n {
        1 => 0.5 * ((d - rho).abs().powf(omega) + (d + rho).powf(omega)),
        2 => {
            // cusp at θ = 0 when ρ = d: geometric panels toward 0
            let rule = gauss_rule(8);
            let f = |t: f64| (d * d + rho * rho - 2.0 * d * rho * t.cos()).max(0.0).powf(omega / 2.0);
            let mut s = gauss_panel(&rule, 0.0, PI * 2f64.powi(-40), f);
            for j in 0..40 {
                let lo = PI * 2f64.powi(-(j + 1));
                let hi = PI * 2f64.powi(-j);
                s += gauss_panel(&rule, lo, hi, f);
            }
            s / PI
        }
        _ => {
            let e = omega + 2.0;
            ((d + rho).powf(e) - (d - rho).abs().powf(e)) / (2.0 * d * rho * e)
        }
    }
}

/// `𝓛(|·|^ω)` evaluated at distance `d` from the origin, by radial quadrature of the
/// spherically averaged second difference.
pub fn power_operator_profile(kernel: &LevyKernel, omega: f64, d: f64) -> f64 {
    let n = kernel.n;
    let nf = n as f64;
    let dw = d.powf(omega);
    let rule = gauss_rule(12);
    let g = |rho: f64| (dw - sphere_mean_power(n, d, rho, omega)) * kernel.density_radial(rho) * rho.powf(nf - 1.0);
    // g ≈ −ω(ω+n−2) d^{ω−2} ρ²/(2n) near the origin
    let curv = omega * (omega + nf - 2.0) * d.powf(omega - 2.0) / (2.0 * nf);
    let rho0 = (1e-3 * d).min(1.0);
    let mut total = -curv * kernel.amplitude * rho0.powf(2.0 - kernel.alpha) / (2.0 - kernel.alpha);
    let reach = match kernel.far_exponent() {
        None => 1.0,
        Some(_) => 1e4 * d.max(1.0),
    };
    let mut breaks: Vec<f64> = [rho0, 0.5 * d, d, 2.0 * d, 1.0, reach]
        .into_iter()
        .filter(|&x| x >= rho0 && x <= reach)
        .collect();
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let gap = 1e-13 * d;
    for w in breaks.windows(2) {
        let (a, b) = (w[0], w[1]);
        total += if b == d {
            gauss_log(&rule, gap, d - a, 6, |u| g(d - u))
        } else if a == d {
            gauss_log(&rule, gap, b - d, 6, |u| g(d + u))
        } else {
            gauss_log(&rule, a, b, 6, g)
        };
    }
    if let Some(e) = kernel.far_exponent() {
        let c = kernel.density_radial(reach) * reach.powf(nf + e);
        let corr = omega * (omega + nf - 2.0) * d * d / (2.0 * nf);
        total += c
            * (dw * reach.powf(-e) / e
                - reach.powf(omega - e) / (e - omega)
                - corr * reach.powf(omega - e - 2.0) / (e + 2.0 - omega));
    }
    sphere_area(n) * total
}

/// Tabulated `|𝓛(|·|^ω)|` on distances, exact homogeneity for the stable profile.
pub struct PowerProfileTable {
    stable: Option<f64>,
    alpha: f64,
    omega: f64,
    log_d: Vec<f64>,
    values: Vec<f64>,
}

impl PowerProfileTable {
    pub fn new(kernel: &LevyKernel, omega: f64, d_min: f64, d_max: f64) -> Self {
        if kernel.profile == Profile::Stable {
            return Self {
                stable: Some(power_operator_profile(kernel, omega, 1.0).abs()),
                alpha: kernel.alpha,
                omega,
                log_d: Vec::new(),
                values: Vec::new(),
            };
        }
        let (a, b) = (d_min.ln(), d_max.ln());
        let count = (((b - a) / std::f64::consts::LN_10) * 16.0).ceil().max(2.0) as usize;
        let log_d: Vec<f64> = (0..=count).map(|j| a + (b - a) * j as f64 / count as f64).collect();
        let values = log_d
            .iter()
            .map(|ld| power_operator_profile(kernel, omega, ld.exp()).abs())
            .collect();
        Self {
            stable: None,
            alpha: kernel.alpha,
            omega,
            log_d,
            values,
        }
    }

    pub fn eval(&self, d: f64) -> f64 {
        if let Some(c) = self.stable {
            return c * d.powf(self.omega - self.alpha);
        }
        let ld = d.ln();
        let last = self.log_d.len() - 1;
        if ld <= self.log_d[0] {
            // below the table the near-field homogeneity takes over
            return self.values[0] * (d / self.log_d[0].exp()).powf(self.omega - self.alpha);
        }
        if ld >= self.log_d[last] {
            return self.values[last];
        }
        let j = self.log_d.partition_point(|&x| x <= ld) - 1;
        let w = (ld - self.log_d[j]) / (self.log_d[j + 1] - self.log_d[j]);
        self.values[j] * (1.0 - w) + self.values[j + 1] * w
    }
}

/// Cell averages of a radial weight around `center`, sub-sampled near the singularity.
fn radial_weights(grid: &Grid, center: &[f64], f: impl Fn(f64) -> f64) -> Vec<f64> {
    let h = grid.spacing();
    let n = grid.n;
    let sub = 8usize;
    (0..grid.len())
        .map(|idx| {
            let x = grid.coords(idx);
            let dvec = grid.torus_delta(&x, center);
            let d: f64 = dvec[..n].iter().map(|v| v * v).sum::<f64>().sqrt();
            if d >= 2.0 * h {
                return f(d);
            }
            let count = sub.pow(n as u32);
            let mut s = 0.0;
            for j in 0..count {
                let mut rem = j;
                let mut r2 = 0.0;
                for a in 0..n {
                    let o = ((rem % sub) as f64 + 0.5) / sub as f64 - 0.5;
                    rem /= sub;
                    let c = dvec[a] + o * h;
                    r2 += c * c;
                }
                s += f(r2.sqrt());
            }
            s / count as f64
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationIntegrals {
    /// `∫|x − x(s)|^{ω−1}|v − v̄_{B_ρ}||ψ|`.
    pub i1: f64,
    /// `∫|𝓛Ω_s||ψ|` with `Ω_s = |x − x(s)|^ω`.
    pub i2: f64,
    pub bound1: f64,
    pub bound2: f64,
    pub ratio1: f64,
    pub ratio2: f64,
}

fn conjugate(p: f64) -> f64 {
    if p.is_infinite() {
        1.0
    } else if p <= 1.0 {
        f64::INFINITY
    } else {
        p / (p - 1.0)
    }
}

/// Drift and operator terms of the concentration derivative and their bound shapes at radius `r`.
#[allow(clippy::too_many_arguments)]
pub fn concentration_integrals(
    psi: &Field,
    v_slice: &[Vec<f64>],
    v_bar: &[f64],
    center: &[f64],
    r: f64,
    mu: f64,
    bundle: &ConstantBundle,
    table: &PowerProfileTable,
) -> Result<ConcentrationIntegrals> {
    let grid = psi.grid;
    let n = grid.n;
    if v_slice.len() != n || v_bar.len() < n || center.len() != n {
        return Err(invalid("concentration_integrals", "dimension mismatch"));
    }
    let p = &bundle.params;
    if (p.alpha < 1.0) != (table.alpha < 1.0) || p.n != n {
        return Err(Error::Precondition("bundle regime does not match the kernel".into()));
    }
    let w = p.omega_exp;
    let cell = grid.cell_volume();
    let w1 = radial_weights(&grid, center, |d| d.powf(w - 1.0));
    let w2 = radial_weights(&grid, center, |d| table.eval(d));
    let mut i1 = 0.0;
    let mut i2 = 0.0;
    for idx in 0..grid.len() {
        let a = psi.values[idx].abs();
        if a == 0.0 {
            continue;
        }
        let dv: f64 = (0..n).map(|c| (v_slice[c][idx] - v_bar[c]).powi(2)).sum::<f64>().sqrt();
        i1 += w1[idx] * dv * a;
        i2 += w2[idx] * a;
    }
    i1 *= cell;
    i2 *= cell;
    let nf = n as f64;
    let (al, q, a_m) = (p.alpha, p.q, bundle.a);
    let z = bundle.zeta_chosen;
    let (b0, b1, e) = (bundle.beta0, bundle.beta1, bundle.epsilon_exp);
    let pt = bundle.p_tilde;
    let lp = |s: f64| psi.lp_norm(s);
    let bound1 = if p.small_alpha() {
        let pp = bundle.choice.p.unwrap_or(1.0 + 1e-4);
        mu * ((z.powf(b1) * r).powf((a_m - nf) / q)
            * ((z.powf(b0) * r).powf(w - 1.0 + nf / pp) * lp(conjugate(pp))
                + (z.powf(b0 * (1.0 + e)) * r).powf(w - 1.0 + nf / pt) * lp(conjugate(pt)))
            + (z.powf(b1) * r).powf(w - 1.0 + a_m / q) * lp(conjugate(q)))
    } else {
        let zz = bundle.z.unwrap_or(f64::INFINITY);
        mu * (z.powf(b1) * r).powf(a_m / q)
            * ((z.powf(b0) * r).powf(w - 1.0 + nf / conjugate(q)) * lp(f64::INFINITY)
                + (z.powf(b0 * (1.0 + e)) * r).powf(w - 1.0 + nf / pt) * lp(zz)
                + (z.powf(b1) * r).powf(w - 1.0) * lp(conjugate(q)))
    };
    let qb = bundle.choice.q_bar;
    let bound2 = (z.powf(b1) * r).powf(w - al + nf / qb) * lp(conjugate(qb));
    let ratio = |x: f64, b: f64| if b > 0.0 { x / b } else { f64::INFINITY };
    Ok(ConcentrationIntegrals {
        i1,
        i2,
        bound1,
        bound2,
        ratio1: ratio(i1, bound1),
        ratio2: ratio(i2, bound2),
    })
}

// ---------------------------------------------------------------------------
// deformation tracking

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceOptions {
    /// Largest solver substep.
    pub dt_max: f64,
    #[serde(default)]
    pub epsilon_visc: f64,
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
    /// Evolve `ψ₊` and `ψ₋` separately and compare with the direct run.
    #[serde(default)]
    pub split: bool,
    /// Record the concentration integrals at each step.
    #[serde(default)]
    pub integrals: bool,
    /// Drift size used in the drift-term bound.
    #[serde(default = "one")]
    pub mu: f64,
    #[serde(default = "default_trace_tol")]
    pub tol: f64,
}

fn default_scheme() -> Scheme {
    Scheme::ExpMidpoint
}

fn default_trace_tol() -> f64 {
    1e-6
}

impl TraceOptions {
    pub fn new(dt_max: f64) -> Self {
        Self {
            dt_max,
            epsilon_visc: 0.0,
            scheme: default_scheme(),
            split: false,
            integrals: false,
            mu: 1.0,
            tol: default_trace_tol(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub s: f64,
    pub radius: f64,
    pub rho: f64,
    pub center: Vec<f64>,
    pub concentration: f64,
    pub sup: f64,
    pub l1: f64,
    pub concentration_bound: f64,
    pub sup_bound: f64,
    pub l1_bound: f64,
    pub concentration_ok: bool,
    pub sup_ok: bool,
    pub l1_ok: bool,
    pub integrals: Option<ConcentrationIntegrals>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoleculeTrace {
    pub rows: Vec<TraceRow>,
    pub t0: f64,
    pub stopped_by_rule: bool,
    /// `2 v_n^{ω/(n+ω)} 2^{γ/α} T0^{γ−γ/α}`, so that the final bound reads `C T0^{−γ}`.
    pub final_constant: f64,
    /// `‖ψ(s_N)‖_{L¹} T0^γ`.
    pub measured_constant: f64,
    /// Largest relative sup difference between the direct run and `ψ₊ − ψ₋`.
    pub split_mismatch: Option<f64>,
    pub pass: bool,
}

impl MoleculeTrace {
    /// Rows as CSV with a header line.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let header = [
            "s", "radius", "rho", "center", "concentration", "concentration_bound", "sup", "sup_bound", "l1",
            "l1_bound", "concentration_margin", "sup_margin", "l1_margin",
        ];
        w.write_record(header).map_err(|e| Error::Format(e.to_string()))?;
        for r in &self.rows {
            let center = r.center.iter().map(|c| format!("{c:.17e}")).collect::<Vec<_>>().join(" ");
            let rec = vec![
                format!("{:.17e}", r.s),
                format!("{:.17e}", r.radius),
                format!("{:.17e}", r.rho),
                center,
                format!("{:.17e}", r.concentration),
                format!("{:.17e}", r.concentration_bound),
                format!("{:.17e}", r.sup),
                format!("{:.17e}", r.sup_bound),
                format!("{:.17e}", r.l1),
                format!("{:.17e}", r.l1_bound),
                format!("{:.17e}", 1.0 - r.concentration / r.concentration_bound),
                format!("{:.17e}", 1.0 - r.sup / r.sup_bound),
                format!("{:.17e}", 1.0 - r.l1 / r.l1_bound),
            ];
            w.write_record(rec).map_err(|e| Error::Format(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
    }
}

struct Measure {
    concentration: f64,
    sup: f64,
    l1: f64,
}

fn measure(psi: &Field, center: &[f64], omega: f64) -> Measure {
    Measure {
        concentration: weighted_moment(psi, center, omega),
        sup: psi.values.iter().fold(0.0f64, |a, v| a.max(v.abs())),
        l1: psi.lp_norm(1.0),
    }
}

/// Co-evolve a small molecule under the dual flow `∂sψ = −∇·(v(T−s)ψ) − 𝓛ψ` and its center
/// under the ball-averaged reversed drift, checking the deformation bounds at every schedule time.
/// `v` is the forward drift on `[0, T]`.
pub fn track_deformation(
    molecule: &Molecule,
    v: &VelocityField,
    symbol: &LevySymbol,
    kernel: &LevyKernel,
    bundle: &ConstantBundle,
    schedule: &Schedule,
    opts: &TraceOptions,
) -> Result<MoleculeTrace> {
    let grid = molecule.field.grid;
    grid.check_same(&v.grid)?;
    grid.check_same(&symbol.grid)?;
    if !molecule.is_small() {
        return Err(Error::Precondition("deformation tracking needs a small molecule (r < 1)".into()));
    }
    if (schedule.r - molecule.r).abs() > 1e-15 * molecule.r || (schedule.zeta - molecule.zeta).abs() > 0.0 {
        return Err(invalid("schedule", "schedule was built for a different molecule"));
    }
    if !(opts.dt_max > 0.0) {
        return Err(invalid("trace.dt_max", "must be positive"));
    }
    if opts.scheme == Scheme::PicardDuhamel {
        return Err(invalid("trace.scheme", "use exp-midpoint or imex-spectral for traces"));
    }
    if schedule.final_time() > v.horizon() * (1.0 + 1e-12) {
        return Err(invalid("drift", "drift horizon ends before the schedule"));
    }
    let mut prev = 0.0;
    for (s, ri) in schedule.times.iter().zip(&schedule.radii) {
        if s - prev > schedule.eps_step * ri.powf(schedule.alpha) * (1.0 + 1e-12) {
            return Err(Error::StepBound(format!("schedule step ending at {s} exceeds eps r_i^alpha")));
        }
        prev = *s;
    }
    let n = grid.n as f64;
    let (al, ga, w) = (schedule.alpha, molecule.gamma, molecule.omega_exp);
    let c1 = l1_constant(grid.n, w);
    let reversed = v.time_reversed();
    let dyn_ = Dynamics::transport(symbol, &reversed, opts.epsilon_visc);
    let mut avg = BallAverager::new(&reversed);
    let table = opts.integrals.then(|| {
        PowerProfileTable::new(kernel, w, grid.spacing() / 16.0, grid.side_length * n.sqrt())
    });
    let step = |x: &[f64], t: f64, dt: f64| -> Result<Vec<f64>> {
        match opts.scheme {
            Scheme::ImexSpectral => dyn_.imex_step(x, t, dt),
            _ => dyn_.exp_midpoint_step(x, t, dt),
        }
    };
    let tol = opts.tol;
    let row = |s: f64, radius: f64, rho: f64, center: &[f64], psi: &Field, integrals| {
        let m = measure(psi, center, w);
        let x = schedule.size_at(s);
        let cb = x.powf((w - ga) / al);
        let sb = x.powf(-(n + ga) / al);
        let lb = c1 * x.powf(-ga / al);
        TraceRow {
            s,
            radius,
            rho,
            center: center.to_vec(),
            concentration: m.concentration,
            sup: m.sup,
            l1: m.l1,
            concentration_bound: cb,
            sup_bound: sb,
            l1_bound: lb,
            concentration_ok: m.concentration <= cb * (1.0 + tol),
            sup_ok: m.sup <= sb * (1.0 + tol),
            l1_ok: m.l1 <= lb * (1.0 + tol),
            integrals,
        }
    };
    let mut psi = molecule.field.values.clone();
    let (mut plus, mut minus) = if opts.split {
        (
            Some(psi.iter().map(|x| x.max(0.0)).collect::<Vec<_>>()),
            Some(psi.iter().map(|x| (-x).max(0.0)).collect::<Vec<_>>()),
        )
    } else {
        (None, None)
    };
    let mut split_mismatch: Option<f64> = opts.split.then_some(0.0);
    let mut center = molecule.x0.clone();
    let rho0 = bundle.zeta_chosen.powf(bundle.beta1) * molecule.r;
    let integrals_at = |psi: &Field, s: f64, center: &[f64], r: f64, avg: &BallAverager| -> Result<Option<ConcentrationIntegrals>> {
        match &table {
            None => Ok(None),
            Some(t) => {
                let vb = avg.average(s, center);
                let slice = reversed.at_time(s);
                concentration_integrals(psi, &slice, &vb, center, r, opts.mu, bundle, t).map(Some)
            }
        }
    };
    avg.set_radius(rho0)?;
    let mut rows = vec![row(
        0.0,
        molecule.r,
        rho0,
        &center,
        &molecule.field,
        integrals_at(&molecule.field, 0.0, &center, molecule.r, &avg)?,
    )];
    let mut s_prev = 0.0;
    for (&s_i, &r_i) in schedule.times.iter().zip(&schedule.radii) {
        let rho = bundle.zeta_chosen.powf(bundle.beta1) * r_i;
        avg.set_radius(rho)?;
        let span = s_i - s_prev;
        let subs = (span / opts.dt_max).ceil().max(1.0) as usize;
        let dt = span / subs as f64;
        for j in 0..subs {
            let t = s_prev + j as f64 * dt;
            psi = step(&psi, t, dt)?;
            if let (Some(pp), Some(mm)) = (plus.as_mut(), minus.as_mut()) {
                *pp = step(pp, t, dt)?;
                *mm = step(mm, t, dt)?;
            }
            center = avg.rk4_step(t, &center, dt);
        }
        if let (Some(pp), Some(mm), Some(sm)) = (&plus, &minus, split_mismatch.as_mut()) {
            let scale = psi.iter().fold(0.0f64, |a, x| a.max(x.abs())).max(1e-300);
            let diff = psi
                .iter()
                .zip(pp.iter().zip(mm))
                .fold(0.0f64, |a, (x, (p, m))| a.max((x - (p - m)).abs()));
            *sm = sm.max(diff / scale);
        }
        let field = Field {
            grid,
            values: psi.clone(),
            time: Some(s_i),
        };
        let ints = integrals_at(&field, s_i, &center, r_i, &avg)?;
        rows.push(row(s_i, r_i, rho, &center, &field, ints));
        s_prev = s_i;
    }
    let t0 = schedule.t0;
    let final_constant = c1 * 2f64.powf(ga / al) * t0.powf(ga - ga / al);
    let l1_final = rows.last().map(|r| r.l1).unwrap_or(0.0);
    let measured_constant = l1_final * t0.powf(ga);
    let bounds_ok = rows.iter().all(|r| r.concentration_ok && r.sup_ok && r.l1_ok);
    let split_ok = split_mismatch.is_none_or(|m| m <= 1e-6);
    let final_ok = !schedule.stopped_by_rule || measured_constant <= final_constant * (1.0 + tol);
    Ok(MoleculeTrace {
        rows,
        t0,
        stopped_by_rule: schedule.stopped_by_rule,
        final_constant,
        measured_constant,
        split_mismatch,
        pass: bounds_ok && split_ok && final_ok,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params_small() -> ConstantParams {
        ConstantParams {
            n: 2,
            alpha: 0.8,
            delta: 0.6,
            gamma: 0.2,
            omega_exp: 0.5,
            q: 20.0,
            mu: 1.0,
            cbar1: 1.0,
            eta_prefactor: 1.0,
        }
    }

    #[test]
    fn molecule_passes_its_check() {
        let g = Grid::new(2, 64, 2.0).unwrap();
        let spec = MoleculeSpec {
            r: 0.125,
            x0: vec![1.0, 1.0],
            gamma: 0.2,
            omega_exp: 0.5,
            zeta: 2.0,
            profile: MoleculeProfile::Difference,
        };
        let m = make_molecule(&spec, g).unwrap();
        let c = check_molecule(&m);
        assert!(c.pass, "{c:?}");
        let loud = check_molecule(&rescaled(&m, 10.0));
        assert!(!loud.pass);
    }

    #[test]
    fn schedule_with_zero_k_is_uniform() {
        let s = schedule_iterations(0.01, 0.8, 0.1, 1.0, 2.0, 0.0).unwrap();
        let step = 0.1 * 0.01f64.powf(0.8);
        assert_eq!(s.times.len(), (1.0 / step).ceil() as usize);
        assert!(!s.stopped_by_rule);
    }

    #[test]
    fn ball_multiplier_limits() {
        for n in 1..=3 {
            assert!((ball_multiplier(n, 1e-6) - 1.0).abs() < 1e-12);
            let z = 0.011;
            let series = ball_multiplier(n, 0.0099);
            assert!((ball_multiplier(n, z) - series).abs() < 1e-4);
        }
        assert!((bessel_j1(1.0) - 0.440_050_585_744_933_5).abs() < 1e-14);
    }

    #[test]
    fn evaluate_matches_search_result() {
        let mut p = params_small();
        p.alpha = 1.4;
        p.delta = 1.2;
        p.omega_exp = 0.3;
        p.q = 10.0;
        let b = compute_constants(&p).unwrap();
        assert!(b.exponents_negative() && b.k_condition());
        assert!(b.recheck().unwrap());
    }

    fn riesz_power_constant(n: usize, s: f64, beta: f64) -> f64 {
        use statrs::function::gamma::gamma;
        let nf = n as f64;
        4f64.powf(s) * gamma((nf + beta) / 2.0) * gamma(s - beta / 2.0)
            / (gamma(-beta / 2.0) * gamma((nf + beta) / 2.0 - s))
    }

    #[test]
    fn power_profile_matches_riesz_identity() {
        use crate::levy::stable_symbol_closed_form;
        for (n, alpha, omega) in [(1, 0.8, 0.5), (2, 0.8, 0.5), (2, 1.4, 0.3), (3, 1.2, 0.6)] {
            let delta = if alpha < 1.0 { 0.5 * alpha } else { 0.5 * (1.0 + alpha) };
            let k = LevyKernel::fractional_laplacian(n, alpha, delta).unwrap();
            for d in [0.3, 1.0, 2.5] {
                let got = power_operator_profile(&k, omega, d);
                let want = stable_symbol_closed_form(n, alpha, 1.0)
                    * riesz_power_constant(n, alpha / 2.0, omega)
                    * d.powf(omega - alpha);
                assert!((got - want).abs() <= 1e-6 * want.abs(), "n={n} a={alpha} d={d}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn center_rk4_is_fourth_order() {
        let g = Grid::new(2, 32, 2.0 * PI).unwrap();
        let vx: Vec<f64> = (0..g.len()).map(|i| g.coords(i)[1].sin()).collect();
        let vy: Vec<f64> = (0..g.len()).map(|i| g.coords(i)[0].sin()).collect();
        let v = VelocityField::stationary(g, vec![vx, vy], 2.0, 2);
        let x0 = [0.3, 1.1];
        let rho = 0.5;
        let end = |steps| evolve_center(&v, &x0, rho, (0.0, 2.0), steps).unwrap().last().unwrap().1.clone();
        let reference = end(1024);
        let err = |steps| {
            let e = end(steps);
            ((e[0] - reference[0]).powi(2) + (e[1] - reference[1]).powi(2)).sqrt()
        };
        let (e1, e2) = (err(8), err(16));
        let slope = (e1 / e2).log2();
        assert!(slope >= 3.5, "observed order {slope}");
    }
}
