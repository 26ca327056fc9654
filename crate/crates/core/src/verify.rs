//! Pass/fail certificates for the maximum, positivity and dissipativity principles.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::{Field, Grid, Spectral};
use crate::levy::{apply_operator, LevyKernel, LevySymbol};
use crate::solver::TrajectorySolution;
use crate::spaces::{besov_seminorm, interpolant_max, interpolant_min, BallStencil};

/// One checked inequality `lhs <= rhs`, with margin `(rhs − lhs) / scale`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertSample {
    pub label: String,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
}

impl CertSample {
    pub fn new(label: impl Into<String>, lhs: f64, rhs: f64, scale: f64) -> Self {
        let margin = if lhs <= rhs {
            if scale > 0.0 {
                (rhs - lhs) / scale
            } else {
                0.0
            }
        } else if scale > 0.0 {
            (rhs - lhs) / scale
        } else {
            f64::NEG_INFINITY
        };
        Self {
            label: label.into(),
            lhs,
            rhs,
            margin,
        }
    }

    /// Margin relative to `max(|lhs|, |rhs|)`.
    pub fn relative(label: impl Into<String>, lhs: f64, rhs: f64) -> Self {
        Self::new(label, lhs, rhs, lhs.abs().max(rhs.abs()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub name: String,
    pub inputs_digest: String,
    pub tolerance: f64,
    pub samples: Vec<CertSample>,
    pub pass: bool,
    /// Reported constants and auxiliary numbers.
    pub notes: BTreeMap<String, f64>,
}

impl Certificate {
    pub fn new(name: &str, digest: String, tolerance: f64, samples: Vec<CertSample>) -> Self {
        let pass = samples.iter().all(|s| s.margin >= -tolerance);
        Self {
            name: name.to_string(),
            inputs_digest: digest,
            tolerance,
            samples,
            pass,
            notes: BTreeMap::new(),
        }
    }

    pub fn with_note(mut self, key: &str, value: f64) -> Self {
        self.notes.insert(key.to_string(), value);
        self
    }

    pub fn worst_margin(&self) -> f64 {
        self.samples.iter().map(|s| s.margin).fold(f64::INFINITY, f64::min)
    }
}

/// SHA-256 over the grid headers and little-endian values of the fields.
pub fn digest_fields<'a>(fields: impl IntoIterator<Item = &'a Field>) -> String {
    let mut h = Sha256::new();
    for f in fields {
        h.update((f.grid.n as u64).to_le_bytes());
        h.update((f.grid.points_per_dim as u64).to_le_bytes());
        h.update(f.grid.side_length.to_le_bytes());
        for v in &f.values {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// Largest `|θ|` of the trigonometric interpolant.
pub fn continuum_sup(field: &Field) -> f64 {
    interpolant_max(field).max(-interpolant_min(field))
}

fn lp_or_sup(field: &Field, p: f64) -> f64 {
    if p.is_infinite() {
        continuum_sup(field)
    } else {
        field.lp_norm(p)
    }
}

/// `‖θ(t_k)‖_p <= ‖θ(t_{k−1})‖_p <= ‖θ0‖_p`, with `p = ∞` through the interpolant supremum.
///
/// The note `linf_grid_constant` is `max_k ‖θ(t_k)‖_∞ / ‖θ0‖_∞` on grid values.
pub fn verify_max_principle(traj: &TrajectorySolution, p_list: &[f64], tol: f64) -> Certificate {
    let fields = &traj.fields;
    let rows: Vec<Vec<f64>> = fields
        .par_iter()
        .map(|f| p_list.iter().map(|&p| lp_or_sup(f, p)).collect())
        .collect();
    let mut samples = Vec::new();
    for (j, &p) in p_list.iter().enumerate() {
        let n0 = rows[0][j];
        for k in 1..rows.len() {
            let t = traj.times[k];
            samples.push(CertSample::new(format!("p={p} t={t} step"), rows[k][j], rows[k - 1][j], n0));
            samples.push(CertSample::new(format!("p={p} t={t} initial"), rows[k][j], n0, n0));
        }
    }
    let g0 = fields[0].lp_norm(f64::INFINITY);
    let grid_c = fields
        .iter()
        .map(|f| f.lp_norm(f64::INFINITY))
        .fold(0.0, f64::max);
    Certificate::new("max-principle", digest_fields(fields), tol, samples)
        .with_note("linf_grid_constant", if g0 > 0.0 { grid_c / g0 } else { 1.0 })
}

/// `0 <= θ(t, x) <= M` at every step; requires `0 <= θ0 <= M`.
pub fn verify_positivity(traj: &TrajectorySolution, m: f64, tol: f64) -> Result<Certificate> {
    let f0 = &traj.fields[0];
    if f0.values.iter().any(|v| *v < 0.0 || *v > m) {
        return Err(Error::Precondition(format!("initial data leaves [0, {m}]")));
    }
    let mut samples = Vec::new();
    for (f, t) in traj.fields.iter().zip(&traj.times) {
        samples.push(CertSample::new(format!("t={t} lower"), -f.min(), 0.0, m));
        samples.push(CertSample::new(format!("t={t} upper"), f.max(), m, m));
    }
    Ok(Certificate::new("positivity", digest_fields(&traj.fields), tol, samples))
}

/// `sgn(0) = 0`.
fn sgn(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Both pairings of the Stroock-Varopoulos inequality.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvPairings {
    /// `⟨𝓛|θ|^{p/2}, |θ|^{p/2}⟩`.
    pub lhs: f64,
    /// `⟨𝓛θ, |θ|^{p−1} sgn θ⟩`.
    pub rhs: f64,
    /// `‖𝓛θ‖_2 ‖|θ|^{p−1}‖_2`.
    pub scale: f64,
}

pub fn stroock_varopoulos_pairings(field: &Field, symbol: &LevySymbol, p: f64) -> Result<SvPairings> {
    let half = field.map(|v| v.abs().powf(p / 2.0));
    let l_half = apply_operator(&half, symbol)?;
    let lhs = l_half.inner(&half)?;
    let l_f = apply_operator(field, symbol)?;
    let pow = field.map(|v| v.abs().powf(p - 1.0) * sgn(v));
    let rhs = l_f.inner(&pow)?;
    Ok(SvPairings {
        lhs,
        rhs,
        scale: l_f.lp_norm(2.0) * pow.lp_norm(2.0),
    })
}

/// Certifies `⟨𝓛θ, |θ|^{p−1} sgn θ⟩ >= 0` and reports `C = rhs / lhs`.
pub fn verify_stroock_varopoulos(field: &Field, symbol: &LevySymbol, p: f64, tol: f64) -> Result<Certificate> {
    if field.values.iter().all(|v| *v == 0.0) {
        return Err(Error::Precondition("field is identically zero".into()));
    }
    let sv = stroock_varopoulos_pairings(field, symbol, p)?;
    let samples = vec![CertSample::new("rhs >= 0", 0.0, sv.rhs, sv.scale.max(1e-300))];
    let mut cert = Certificate::new("stroock-varopoulos", digest_fields([field]), tol, samples)
        .with_note("lhs", sv.lhs)
        .with_note("rhs", sv.rhs)
        .with_note("p", p);
    if sv.lhs > 0.0 {
        cert = cert.with_note("c", sv.rhs / sv.lhs);
    }
    Ok(cert)
}

/// Lattice multiplier of the difference-form `Ḃ^{s,2}_2` seminorm squared.
pub fn besov2_multiplier(grid: Grid, s: f64) -> Vec<f64> {
    let spectral = Spectral::new(grid);
    let stencil = BallStencil::new(&grid, grid.side_length / 2.0);
    let h = grid.spacing();
    let n = grid.n as f64;
    let cell = grid.cell_volume();
    let offs: Vec<([f64; 3], f64)> = stencil
        .offsets
        .iter()
        .filter_map(|o| {
            let y = [o[0] as f64 * h, o[1] as f64 * h, o[2] as f64 * h];
            let d = y[..grid.n].iter().map(|v| v * v).sum::<f64>().sqrt();
            (d >= h * (1.0 - 1e-12)).then_some((y, cell * d.powf(-(n + 2.0 * s))))
        })
        .collect();
    (0..grid.len())
        .into_par_iter()
        .map(|idx| {
            offs.iter()
                .map(|(y, w)| {
                    let kd: f64 = (0..grid.n).map(|a| spectral.k[a][idx] * y[a]).sum();
                    2.0 * w * (1.0 - kd.cos())
                })
                .sum()
        })
        .collect()
}

/// The three terms `(‖f‖^p_{Ḃ^{α/p,p}_p}, ‖f^{p/2}‖²_{Ḃ^{α/2,2}_2}, ‖f^{p/2}‖²_{L²} + ∫|f|^{p−2}f𝓛f)`.
pub fn besov_chain_terms(field: &Field, symbol: &LevySymbol, p: f64) -> Result<[f64; 3]> {
    let alpha = symbol.alpha;
    let t1 = besov_seminorm(field, alpha / p, p)?.powf(p);
    let g = field.map(|v| v.abs().powf(p / 2.0));
    let t2 = besov_seminorm(&g, alpha / 2.0, 2.0)?.powi(2);
    let lf = apply_operator(field, symbol)?;
    let w = field.map(|v| v.abs().powf(p - 2.0) * v);
    let t3 = g.lp_norm(2.0).powi(2) + lf.inner(&w)?;
    Ok([t1, t2, t3])
}

/// Constant of the second link: `max_k m(k) / (1 + c_p a(k))` with `c_p = 4(p−1)/p²`.
pub fn besov_second_constant(symbol: &LevySymbol, p: f64) -> f64 {
    let m = besov2_multiplier(symbol.grid, symbol.alpha / 2.0);
    let cp = 4.0 * (p - 1.0) / (p * p);
    m.iter()
        .zip(&symbol.values)
        .map(|(mm, a)| mm / (1.0 + cp * a))
        .fold(0.0, f64::max)
}

/// Frozen constants of the Besov chain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BesovConstants {
    pub p: f64,
    pub c1: f64,
    pub c2: f64,
}

/// Fits `C1` on a calibration corpus with 25% headroom; `C2` from the symbol.
pub fn calibrate_besov(corpus: &[Field], symbol: &LevySymbol, p: f64) -> Result<BesovConstants> {
    let mut c1 = 0.0f64;
    for f in corpus {
        let [t1, t2, _] = besov_chain_terms(f, symbol, p)?;
        if t2 > 0.0 {
            c1 = c1.max(t1 / t2);
        }
    }
    Ok(BesovConstants {
        p,
        c1: 1.25 * c1,
        c2: besov_second_constant(symbol, p),
    })
}

/// `T1 <= C1 T2 <= C1 C2 T3` with frozen constants.
pub fn verify_besov_regularity(
    field: &Field,
    symbol: &LevySymbol,
    constants: &BesovConstants,
    tol: f64,
) -> Result<Certificate> {
    let [t1, t2, t3] = besov_chain_terms(field, symbol, constants.p)?;
    let samples = vec![
        CertSample::relative("first", t1, constants.c1 * t2),
        CertSample::relative("second", t2, constants.c2 * t3),
    ];
    Ok(Certificate::new("besov-chain", digest_fields([field]), tol, samples)
        .with_note("t1", t1)
        .with_note("t2", t2)
        .with_note("t3", t3)
        .with_note("c1", constants.c1)
        .with_note("c2", constants.c2))
}

/// `⟨𝓛f₊, f₋⟩`, nonpositive when the two parts have disjoint supports.
pub fn besov_cross_term(field: &Field, symbol: &LevySymbol) -> Result<f64> {
    let plus = field.map(|v| v.max(0.0));
    let minus = field.map(|v| (-v).max(0.0));
    apply_operator(&plus, symbol)?.inner(&minus)
}

/// Frozen constants of the two symbol inequalities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymbolConstants {
    /// `a(ξ) <= C (|ξ|^α + |ξ|^δ)`.
    pub upper: f64,
    /// `|ξ|^α <= a(ξ) + C`.
    pub lower: f64,
}

/// Fits both constants on a dense radial set spanning `[k_min, k_max]`, with 1% headroom.
pub fn calibrate_symbol_bounds(kernel: &LevyKernel, k_min: f64, k_max: f64, points: usize) -> Result<SymbolConstants> {
    let ks: Vec<f64> = (0..points)
        .map(|i| k_min * (k_max / k_min).powf(i as f64 / (points - 1).max(1) as f64))
        .collect();
    let vals: Vec<Result<(f64, f64)>> = ks
        .par_iter()
        .map(|&k| kernel.symbol_radial(k).map(|a| (k, a)))
        .collect();
    let (mut upper, mut lower) = (0.0f64, 0.0f64);
    for v in vals {
        let (k, a) = v?;
        upper = upper.max(a / (k.powf(kernel.alpha) + k.powf(kernel.delta)));
        lower = lower.max(k.powf(kernel.alpha) - a);
    }
    Ok(SymbolConstants {
        upper: 1.01 * upper,
        lower: 1.01 * lower,
    })
}

/// Certifies both inequalities at every lattice frequency with frozen constants.
pub fn verify_symbol_bounds(symbol: &LevySymbol, constants: &SymbolConstants, tol: f64) -> Certificate {
    let s = Spectral::new(symbol.grid);
    let (al, de) = (symbol.alpha, symbol.delta);
    let mut samples = Vec::with_capacity(2 * symbol.values.len());
    for (idx, &a) in symbol.values.iter().enumerate() {
        let k = s.k2[idx].sqrt();
        let ka = k.powf(al);
        samples.push(CertSample::relative(
            format!("upper |xi|={k}"),
            a,
            constants.upper * (ka + k.powf(de)),
        ));
        samples.push(CertSample::relative(format!("lower |xi|={k}"), ka, a + constants.lower));
    }
    let mut h = Sha256::new();
    h.update(symbol.kernel_id.as_bytes());
    for v in &symbol.values {
        h.update(v.to_le_bytes());
    }
    Certificate::new("symbol-bounds", hex::encode(h.finalize()), tol, samples)
        .with_note("c_upper", constants.upper)
        .with_note("c_lower", constants.lower)
}

/// `⟨θ(t−s), ψ(s)⟩` constant in `s`, in particular `⟨θ(t), ψ0⟩ = ⟨θ0, ψ(t)⟩`.
pub fn verify_transfer(forward: &TrajectorySolution, backward: &TrajectorySolution, tol: f64) -> Result<Certificate> {
    let nf = forward.fields.len();
    if nf != backward.fields.len() {
        return Err(Error::GridMismatch("forward and backward time grids differ".into()));
    }
    forward.fields[0].grid.check_same(&backward.fields[0].grid)?;
    let t = *forward.times.last().unwrap();
    if (t - backward.times.last().unwrap()).abs() > 1e-12 * t.max(1.0) {
        return Err(Error::GridMismatch("horizons differ".into()));
    }
    let pairings: Vec<f64> = (0..nf)
        .map(|j| forward.fields[nf - 1 - j].inner(&backward.fields[j]))
        .collect::<Result<_>>()?;
    let p0 = pairings[0];
    let scale = pairings.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let samples = pairings
        .iter()
        .enumerate()
        .skip(1)
        .map(|(j, &pj)| {
            let s = backward.times[j];
            CertSample::new(format!("s={s}"), (pj - p0).abs(), 0.0, scale)
        })
        .collect();
    let last = pairings[nf - 1];
    Ok(Certificate::new(
        "transfer",
        digest_fields(forward.fields.iter().chain(&backward.fields)),
        tol,
        samples,
    )
    .with_note("forward_pairing", p0)
    .with_note("backward_pairing", last)
    .with_note("mismatch", if scale > 0.0 { (p0 - last).abs() / scale } else { 0.0 }))
}

/// `‖θ0‖² − ‖θ(T)‖²` against `2∫(⟨𝓛θ,θ⟩ + ε‖∇θ‖²)dt` (trapezoid in time).
pub fn dissipation_balance(traj: &TrajectorySolution, symbol: &LevySymbol, eps: f64) -> Result<(f64, f64)> {
    let s = Spectral::new(symbol.grid);
    let rates: Vec<f64> = traj
        .fields
        .iter()
        .map(|f| {
            let hat = s.forward(&f.values);
            let norm = f.grid.cell_volume() / f.grid.len() as f64;
            hat.iter()
                .zip(&symbol.values)
                .zip(&s.k2)
                .map(|((c, a), k2)| c.norm_sqr() * (a + eps * k2))
                .sum::<f64>()
                * norm
        })
        .collect();
    let mut integral = 0.0;
    for k in 1..rates.len() {
        integral += 0.5 * (rates[k] + rates[k - 1]) * (traj.times[k] - traj.times[k - 1]);
    }
    let lhs = traj.fields[0].lp_norm(2.0).powi(2) - traj.last().lp_norm(2.0).powi(2);
    Ok((lhs, 2.0 * integral))
}

/// Successive Picard residual ratios `<= bound` on every window, ignoring residuals below `floor`.
pub fn verify_picard_contraction(traj: &TrajectorySolution, bound: f64, tol: f64, floor: f64) -> Certificate {
    let mut samples = Vec::new();
    let mut worst = 0.0f64;
    for w in &traj.diagnostics.windows {
        for (j, pair) in w.residuals.windows(2).enumerate() {
            if pair[0] > floor && pair[1] > floor {
                let r = pair[1] / pair[0];
                worst = worst.max(r);
                samples.push(CertSample::new(format!("window {} iterate {}", w.start, j + 1), r, bound, 1.0));
            }
        }
    }
    Certificate::new("picard-contraction", digest_fields(&traj.fields), tol, samples)
        .with_note("windows", traj.diagnostics.windows.len() as f64)
        .with_note("worst_ratio", worst)
}
