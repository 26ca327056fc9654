//! Morrey-Campanato, Besov, Hölder and Sobolev norms of grid fields.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{lp_norm, Field, Grid, Spectral};

/// Exponents of a Morrey-Campanato norm.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MorreyParams {
    pub q: f64,
    pub a: f64,
    /// Local variant: oscillation for `r < 1`, plain integral for `r >= 1`.
    #[serde(default)]
    pub local: bool,
}

impl MorreyParams {
    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.q >= 1.0 && self.q.is_finite()) {
            return Err(invalid("morrey.q", "must be >= 1"));
        }
        if !(self.a >= 0.0 && self.a < n as f64 + self.q) {
            return Err(invalid("morrey.a", "must lie in [0, n + q)"));
        }
        Ok(())
    }
}

/// Dyadic radius ladder `h, 2h, ...` up to `L/2`.
pub fn radius_ladder(grid: &Grid) -> Vec<f64> {
    let h = grid.spacing();
    let half = grid.side_length / 2.0;
    let mut out = Vec::new();
    let mut r = h;
    while r <= half * (1.0 + 1e-12) {
        out.push(r);
        r *= 2.0;
    }
    out
}

/// Integer offsets of the grid points in a closed ball of radius `r` (wrapped metric).
#[derive(Clone, Debug)]
pub struct BallStencil {
    pub radius: f64,
    pub offsets: Vec<[i64; 3]>,
}

impl BallStencil {
    pub fn new(grid: &Grid, radius: f64) -> Self {
        let np = grid.points_per_dim as i64;
        let h = grid.spacing();
        let lo = -np / 2;
        let hi = np / 2 - 1;
        let reach = ((radius / h).floor() as i64).min(np / 2);
        let lim = radius * radius * (1.0 + 1e-12);
        let mut offsets = Vec::new();
        let range = |_: usize| (-reach).max(lo)..=reach.min(hi);
        match grid.n {
            1 => {
                for i in range(0) {
                    if ((i * i) as f64) * h * h <= lim {
                        offsets.push([i, 0, 0]);
                    }
                }
            }
            2 => {
                for i in range(0) {
                    for j in range(1) {
                        if ((i * i + j * j) as f64) * h * h <= lim {
                            offsets.push([i, j, 0]);
                        }
                    }
                }
            }
            _ => {
                for i in range(0) {
                    for j in range(1) {
                        for k in range(2) {
                            if ((i * i + j * j + k * k) as f64) * h * h <= lim {
                                offsets.push([i, j, k]);
                            }
                        }
                    }
                }
            }
        }
        Self { radius, offsets }
    }

    pub fn volume(&self, grid: &Grid) -> f64 {
        self.offsets.len() as f64 * grid.cell_volume()
    }

    /// Flat indices of the ball around the grid point `center`.
    pub fn indices(&self, grid: &Grid, center: usize, out: &mut Vec<usize>) {
        let np = grid.points_per_dim as i64;
        let mask = np - 1;
        let c = grid.unravel(center);
        out.clear();
        for o in &self.offsets {
            let mut idx = 0i64;
            for a in 0..grid.n {
                idx = idx * np + ((c[a] as i64 + o[a]) & mask);
            }
            out.push(idx as usize);
        }
    }
}

/// Morrey-Campanato norm of a scalar field.
pub fn morrey_norm(field: &Field, params: &MorreyParams) -> Result<f64> {
    morrey_norm_components(&field.grid, &[&field.values], params)
}

/// Morrey-Campanato norm of a vector field, with the Euclidean norm of `v - v̄`.
pub fn morrey_norm_components(grid: &Grid, comps: &[&[f64]], params: &MorreyParams) -> Result<f64> {
    params.validate(grid.n)?;
    for c in comps {
        if c.len() != grid.len() {
            return Err(Error::GridMismatch("component length".into()));
        }
    }
    let mut osc_sup = 0.0f64;
    let mut plain_sup = 0.0f64;
    for r in radius_ladder(grid) {
        let stencil = BallStencil::new(grid, r);
        let plain = params.local && r >= 1.0 - 1e-12;
        let v = ball_sup(grid, comps, &stencil, params.q, plain) / r.powf(params.a);
        let v = v.powf(1.0 / params.q);
        if plain {
            plain_sup = plain_sup.max(v);
        } else {
            osc_sup = osc_sup.max(v);
        }
    }
    Ok(osc_sup + plain_sup)
}

/// `sup_center ∫_B |f - f̄_B|^q` (or `∫_B |f|^q` when `plain`).
fn ball_sup(grid: &Grid, comps: &[&[f64]], stencil: &BallStencil, q: f64, plain: bool) -> f64 {
    let cell = grid.cell_volume();
    let m = stencil.offsets.len() as f64;
    let per_center: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map_init(Vec::new, |idx, c| {
            stencil.indices(grid, c, idx);
            let mut means = [0.0f64; 3];
            if !plain {
                for (a, comp) in comps.iter().enumerate() {
                    means[a] = idx.iter().map(|&i| comp[i]).sum::<f64>() / m;
                }
            }
            let mut s = 0.0;
            for &i in idx.iter() {
                let d2: f64 = comps
                    .iter()
                    .enumerate()
                    .map(|(a, comp)| (comp[i] - means[a]).powi(2))
                    .sum();
                s += if q == 2.0 { d2 } else { d2.sqrt().powf(q) };
            }
            s * cell
        })
        .collect();
    per_center.into_iter().fold(0.0, f64::max)
}

/// Mean of a field over the closed ball `B(x, r)` (torus metric).
pub fn ball_mean(field: &Field, center: &[f64], r: f64) -> Result<f64> {
    let g = field.grid;
    let mut s = 0.0;
    let mut count = 0usize;
    for i in 0..g.len() {
        let x = g.coords(i);
        if g.torus_dist(&x[..g.n], center) <= r * (1.0 + 1e-12) {
            s += field.values[i];
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Resolution(format!("ball of radius {r} contains no grid point")));
    }
    Ok(s / count as f64)
}

/// Offsets `y` with `h <= |y| <= L/2`, as (flat-shift multi-index, |y|).
fn annulus_offsets(grid: &Grid) -> Vec<([i64; 3], f64)> {
    let stencil = BallStencil::new(grid, grid.side_length / 2.0);
    let h = grid.spacing();
    stencil
        .offsets
        .iter()
        .filter_map(|o| {
            let d = (o.iter().take(grid.n).map(|v| (v * v) as f64).sum::<f64>()).sqrt() * h;
            (d >= h * (1.0 - 1e-12)).then_some((*o, d))
        })
        .collect()
}

fn shifted(grid: &Grid, idx: usize, o: &[i64; 3], sign: i64) -> usize {
    let np = grid.points_per_dim as i64;
    let mask = np - 1;
    let c = grid.unravel(idx);
    let mut out = 0i64;
    for a in 0..grid.n {
        out = out * np + ((c[a] as i64 + sign * o[a]) & mask);
    }
    out as usize
}

/// Difference-form Besov seminorm `(∬ |f(x) - f(x-y)|^p / |y|^{n+sp})^{1/p}` with `h <= |y| <= L/2`.
pub fn besov_seminorm(field: &Field, s: f64, p: f64) -> Result<f64> {
    if !(s > 0.0 && s < 1.0) {
        return Err(invalid("besov.s", "must lie in (0, 1)"));
    }
    if p < 1.0 {
        return Err(invalid("besov.p", "must be >= 1"));
    }
    let g = field.grid;
    let offs = annulus_offsets(&g);
    let cell = g.cell_volume();
    let n = g.n as f64;
    let f = &field.values;
    let per_offset: Vec<f64> = offs
        .par_iter()
        .map(|(o, d)| {
            let w = d.powf(-(n + s * p));
            let mut acc = 0.0;
            for i in 0..g.len() {
                let j = shifted(&g, i, o, -1);
                let diff = (f[i] - f[j]).abs();
                acc += if p == 2.0 { diff * diff } else { diff.powf(p) };
            }
            acc * w
        })
        .collect();
    let total: f64 = per_offset.iter().sum::<f64>() * cell * cell;
    Ok(total.powf(1.0 / p))
}

/// Largest increment `max_x |f(x) − f(x+o)|` and the length `|o|` for every offset `h <= |o| <= L/2`.
/// Offsets `o` and `−o` share one entry.
pub fn increment_profile(field: &Field) -> Vec<(f64, f64)> {
    let g = field.grid;
    annulus_offsets(&g)
        .into_iter()
        .filter(|(o, _)| o[..g.n].iter().find(|&&v| v != 0).is_some_and(|&v| v > 0))
        .collect::<Vec<_>>()
        .par_iter()
        .map(|(o, d)| (*d, max_increment(field, o)))
        .collect()
}

/// `max_x |f(x) − f(x+o)|`, walking the last axis in two contiguous segments.
fn max_increment(field: &Field, o: &[i64; 3]) -> f64 {
    let g = field.grid;
    let np = g.points_per_dim;
    let f = &field.values;
    let last = (o[g.n - 1].rem_euclid(np as i64)) as usize;
    let rows = g.len() / np;
    let mut m = 0.0f64;
    for row in 0..rows {
        // multi-index of the row over the leading axes
        let mut shifted_row = 0usize;
        let mut rem = row;
        let mut stride = 1usize;
        for a in (0..g.n - 1).rev() {
            let c = rem % np;
            rem /= np;
            let sc = ((c as i64 + o[a]).rem_euclid(np as i64)) as usize;
            shifted_row += sc * stride;
            stride *= np;
        }
        let a = &f[row * np..(row + 1) * np];
        let b = &f[shifted_row * np..(shifted_row + 1) * np];
        let (a1, a2) = a.split_at(np - last);
        let (b1, b2) = b.split_at(last);
        for (x, y) in a1.iter().zip(b2) {
            m = m.max((x - y).abs());
        }
        for (x, y) in a2.iter().zip(b1) {
            m = m.max((x - y).abs());
        }
    }
    m
}

/// Hölder seminorm from an increment profile.
pub fn holder_from_profile(profile: &[(f64, f64)], gamma: f64) -> f64 {
    profile.iter().map(|(d, m)| m * d.powf(-gamma)).fold(0.0, f64::max)
}

/// Hölder seminorm over all grid pairs within torus distance `L/2`.
pub fn holder_seminorm(field: &Field, gamma: f64) -> Result<f64> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(invalid("holder.gamma", "must lie in (0, 1)"));
    }
    Ok(holder_from_profile(&increment_profile(field), gamma))
}

/// `‖f‖_{L^∞} + [f]_{C^γ}`.
pub fn holder_norm(field: &Field, gamma: f64) -> Result<f64> {
    Ok(field.lp_norm(f64::INFINITY) + holder_seminorm(field, gamma)?)
}

/// Spectral `(−Δ)^{s/2} f`; `s = 0` is the identity.
pub fn fractional_laplacian(field: &Field, s: f64) -> Field {
    let spectral = Spectral::new(field.grid);
    let mult: Vec<f64> = spectral
        .k2
        .iter()
        .map(|&k2| if s == 0.0 { 1.0 } else if k2 == 0.0 { 0.0 } else { k2.powf(s / 2.0) })
        .collect();
    Field {
        grid: field.grid,
        values: spectral.apply_multiplier(&field.values, &mult),
        time: field.time,
    }
}

/// `‖f‖_{L^p} + ‖(−Δ)^{s/2} f‖_{L^p}`.
pub fn sobolev_norm(field: &Field, s: f64, p: f64) -> Result<f64> {
    if p < 1.0 {
        return Err(invalid("sobolev.p", "must be >= 1"));
    }
    Ok(field.lp_norm(p) + fractional_laplacian(field, s).lp_norm(p))
}

/// Regime of the dyadic oscillation bound.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OscRegime {
    /// `a < n`: shape `ρ^{(a−n)/q}`.
    BelowDimension,
    /// `a = n`: logarithmic growth `(1 + k)`.
    Critical,
    /// `n < a`: shape `(2^k ρ)^{(a−n)/q}`.
    AboveDimension,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OscReport {
    pub regime: OscRegime,
    pub lhs: f64,
    pub shape: f64,
    pub ratio: f64,
    pub morrey: f64,
}

/// `|f̄_{B(x0, 2^k ρ)} − f̄_{B(x0, ρ)}|` against the dyadic Morrey shape.
pub fn dyadic_oscillation_check(
    field: &Field,
    params: &MorreyParams,
    center: &[f64],
    rho: f64,
    k: u32,
) -> Result<OscReport> {
    let morrey = morrey_norm(field, params)?;
    dyadic_oscillation_with_norm(field, params, morrey, center, rho, k)
}

/// As [`dyadic_oscillation_check`] with a precomputed Morrey norm.
pub fn dyadic_oscillation_with_norm(
    field: &Field,
    params: &MorreyParams,
    morrey: f64,
    center: &[f64],
    rho: f64,
    k: u32,
) -> Result<OscReport> {
    if k == 0 {
        return Err(invalid("k", "must be >= 1"));
    }
    let big = rho * 2f64.powi(k as i32);
    if big > field.grid.side_length / 2.0 * (1.0 + 1e-12) {
        return Err(invalid("rho", format!("2^k rho = {big} exceeds L/2")));
    }
    let lhs = (ball_mean(field, center, big)? - ball_mean(field, center, rho)?).abs();
    let n = field.grid.n as f64;
    let e = (params.a - n) / params.q;
    let (regime, shape) = if params.a < n {
        (OscRegime::BelowDimension, rho.powf(e))
    } else if params.a == n {
        (OscRegime::Critical, 1.0 + k as f64)
    } else {
        (OscRegime::AboveDimension, big.powf(e))
    };
    let shape = shape * morrey;
    Ok(OscReport {
        regime,
        lhs,
        shape,
        ratio: if shape > 0.0 { lhs / shape } else { 0.0 },
        morrey,
    })
}

/// JSON record emitted by norm commands.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormRecord {
    pub norm_name: String,
    pub params: serde_json::Value,
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sweep: Option<Vec<(f64, f64)>>,
}

/// Trigonometric interpolant of a grid field, evaluable off the grid.
///
/// Coefficients below `1e-15` of the largest are dropped.
pub struct Interpolant {
    n: usize,
    terms: Vec<(Complex64, [f64; 3])>,
}

impl Interpolant {
    pub fn new(field: &Field) -> Self {
        let g = field.grid;
        let spectral = Spectral::new(g);
        let c = spectral.forward(&field.values);
        let norm = 1.0 / g.len() as f64;
        let cmax = c.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let k0 = g.k0();
        let terms = c
            .iter()
            .enumerate()
            .filter(|(_, v)| v.norm() > 1e-15 * cmax)
            .map(|(idx, v)| {
                let m = g.modes(idx);
                let mut k = [0.0; 3];
                for a in 0..g.n {
                    k[a] = k0 * m[a] as f64;
                }
                (v * norm, k)
            })
            .collect();
        Self { n: g.n, terms }
    }

    /// Value, gradient and Hessian at `x`.
    pub fn eval(&self, x: &[f64]) -> (f64, [f64; 3], [[f64; 3]; 3]) {
        let n = self.n;
        let mut val = 0.0;
        let mut grad = [0.0; 3];
        let mut hess = [[0.0; 3]; 3];
        for (c, k) in &self.terms {
            let phase: f64 = (0..n).map(|a| k[a] * x[a]).sum();
            let t = c * Complex64::from_polar(1.0, phase);
            val += t.re;
            for a in 0..n {
                grad[a] += -k[a] * t.im;
                for b in 0..n {
                    hess[a][b] += -k[a] * k[b] * t.re;
                }
            }
        }
        (val, grad, hess)
    }
}

/// Maximum of the trigonometric interpolant, refined from the largest grid local maxima.
pub fn interpolant_max(field: &Field) -> f64 {
    let g = field.grid;
    let f = &field.values;
    let grid_max = field.max();
    let mut cands: Vec<usize> = (0..g.len())
        .filter(|&i| {
            let c = g.unravel(i);
            neighbours(&g, &c).into_iter().all(|j| f[j] <= f[i])
        })
        .collect();
    cands.sort_by(|&a, &b| f[b].total_cmp(&f[a]).then(a.cmp(&b)));
    cands.truncate(6);
    let interp = Interpolant::new(field);
    let h = g.spacing();
    let mut best = grid_max;
    for &c in &cands {
        let x0 = g.coords(c);
        let mut x = x0;
        let (mut v, mut gr, mut he) = interp.eval(&x[..g.n]);
        for _ in 0..30 {
            let step = newton_step(g.n, &gr, &he).unwrap_or_else(|| {
                let norm = gr.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
                let mut s = [0.0; 3];
                for a in 0..g.n {
                    s[a] = 0.25 * h * gr[a] / norm;
                }
                s
            });
            let mut trial = x;
            for a in 0..g.n {
                trial[a] += step[a];
                trial[a] = trial[a].clamp(x0[a] - h, x0[a] + h);
            }
            let (tv, tg, th) = interp.eval(&trial[..g.n]);
            if tv < v {
                break;
            }
            let moved: f64 = (0..g.n).map(|a| (trial[a] - x[a]).abs()).sum();
            x = trial;
            v = tv;
            gr = tg;
            he = th;
            if moved < 1e-13 * h {
                break;
            }
        }
        best = best.max(v);
    }
    best
}

/// Minimum of the trigonometric interpolant.
pub fn interpolant_min(field: &Field) -> f64 {
    -interpolant_max(&field.scale(-1.0))
}

fn neighbours(g: &Grid, c: &[usize; 3]) -> Vec<usize> {
    let mut out = Vec::new();
    let span: Vec<i64> = vec![-1, 0, 1];
    let dims = g.n;
    let mut idx = [0usize; 3];
    let total = 3usize.pow(dims as u32);
    for t in 0..total {
        let mut r = t;
        let mut off = [0i64; 3];
        for a in 0..dims {
            off[a] = span[r % 3];
            r /= 3;
        }
        if off.iter().all(|&o| o == 0) {
            continue;
        }
        let mut ix = [0i64; 3];
        for a in 0..dims {
            ix[a] = c[a] as i64 + off[a];
        }
        idx[0] = g.ravel_wrapped(&ix[..dims]);
        out.push(idx[0]);
    }
    out
}

/// Newton ascent step `-H^{-1} g` when `H` is negative definite.
fn newton_step(n: usize, g: &[f64; 3], h: &[[f64; 3]; 3]) -> Option<[f64; 3]> {
    let mut s = [0.0; 3];
    match n {
        1 => {
            if h[0][0] >= 0.0 {
                return None;
            }
            s[0] = -g[0] / h[0][0];
        }
        2 => {
            let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
            if !(h[0][0] < 0.0 && det > 0.0) {
                return None;
            }
            s[0] = -(h[1][1] * g[0] - h[0][1] * g[1]) / det;
            s[1] = -(-h[1][0] * g[0] + h[0][0] * g[1]) / det;
        }
        _ => {
            // Cramer's rule on the 3x3 system
            let m = h;
            let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
            let d2 = m[0][0] * m[1][1] - m[0][1] * m[1][0];
            if !(m[0][0] < 0.0 && d2 > 0.0 && det < 0.0) {
                return None;
            }
            let rhs = [-g[0], -g[1], -g[2]];
            for col in 0..3 {
                let mut mm = *m;
                for row in 0..3 {
                    mm[row][col] = rhs[row];
                }
                let dc = mm[0][0] * (mm[1][1] * mm[2][2] - mm[1][2] * mm[2][1])
                    - mm[0][1] * (mm[1][0] * mm[2][2] - mm[1][2] * mm[2][0])
                    + mm[0][2] * (mm[1][0] * mm[2][1] - mm[1][1] * mm[2][0]);
                s[col] = dc / det;
            }
        }
    }
    Some(s)
}

/// Grid `L^p` norm helper used across modules.
pub fn norm_p(field: &Field, p: f64) -> f64 {
    lp_norm(&field.values, p, field.grid.cell_volume())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn increment_profile_matches_pairwise_scan() {
        for n in 1..=3 {
            let np = if n == 3 { 8 } else { 16 };
            let g = Grid::new(n, np, 3.0).unwrap();
            let f = Field::from_fn(g, |x| (x[0] * 2.1).sin() + x[n - 1] * x[0] * 0.3);
            let fast = holder_seminorm(&f, 0.4).unwrap();
            let mut slow = 0.0f64;
            for (o, d) in annulus_offsets(&g) {
                for i in 0..g.len() {
                    let j = shifted(&g, i, &o, 1);
                    slow = slow.max((f.values[i] - f.values[j]).abs() * d.powf(-0.4));
                }
            }
            assert!((fast - slow).abs() <= 1e-14 * slow, "n={n}: {fast} vs {slow}");
        }
    }

    #[test]
    fn constant_field_has_zero_oscillation() {
        let g = Grid::new(2, 16, 4.0).unwrap();
        let f = Field::constant(g, 3.0);
        let p = MorreyParams {
            q: 2.0,
            a: 1.0,
            local: false,
        };
        assert!(morrey_norm(&f, &p).unwrap() < 1e-12);
        assert!(besov_seminorm(&f, 0.5, 2.0).unwrap() < 1e-12);
        assert!((holder_norm(&f, 0.5).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn local_constant_branch_is_max_ball_volume() {
        let g = Grid::new(2, 16, 4.0).unwrap();
        let f = Field::constant(g, 2.0);
        let p = MorreyParams {
            q: 1.0,
            a: 0.0,
            local: true,
        };
        let big = BallStencil::new(&g, 2.0).volume(&g);
        assert!((morrey_norm(&f, &p).unwrap() - 2.0 * big).abs() < 1e-12);
    }

    #[test]
    fn sobolev_single_mode() {
        let g = Grid::new(2, 32, 2.0 * PI).unwrap();
        let f = Field::from_fn(g, |x| 2.0 * (3.0 * x[0]).cos());
        let base = f.lp_norm(2.0);
        let got = sobolev_norm(&f, 0.5, 2.0).unwrap();
        assert!((got - base * (1.0 + 3f64.sqrt())).abs() < 1e-10);
        assert!((sobolev_norm(&f, 0.0, 2.0).unwrap() - 2.0 * base).abs() < 1e-12);
    }

    #[test]
    fn interpolant_finds_off_grid_peak() {
        let g = Grid::new(2, 32, 2.0 * PI).unwrap();
        let f = Field::from_fn(g, |x| (x[0] - 0.05).cos() + 0.5 * (x[1] - 0.11).cos());
        assert!(f.max() < 1.5 - 1e-4);
        assert!((interpolant_max(&f) - 1.5).abs() < 1e-12);
        assert!((interpolant_min(&f) + 1.5).abs() < 1e-12);
    }
}
