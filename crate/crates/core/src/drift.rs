//! Divergence-free drifts, their mollification and the drift-cutoff estimates.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bump::{bump, cutoff_field};
use crate::error::{invalid, Error, Result};
use crate::grid::{lp_norm, Field, Grid, Spectral};
use crate::levy::{SweepLevel, SweepReport};
use crate::spaces::{interpolant_max, morrey_norm_components, MorreyParams};
use crate::synth::{band_limited, hermitian, rng};

/// Velocity field on a uniform time grid, `components[node][axis][point]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VelocityField {
    pub grid: Grid,
    pub time_nodes: Vec<f64>,
    pub components: Vec<Vec<Vec<f64>>>,
}

impl VelocityField {
    pub fn zero(grid: Grid, horizon: f64, nodes: usize) -> Self {
        Self::stationary(grid, vec![vec![0.0; grid.len()]; grid.n], horizon, nodes)
    }

    /// Time-independent field sampled at `nodes` uniform nodes of `[0, T]`.
    pub fn stationary(grid: Grid, comps: Vec<Vec<f64>>, horizon: f64, nodes: usize) -> Self {
        let nodes = nodes.max(2);
        Self {
            grid,
            time_nodes: uniform_nodes(horizon, nodes),
            components: vec![comps; nodes],
        }
    }

    /// `v(t) = cos(πt/T) V1 + sin(πt/T) V2` sampled at `nodes` nodes.
    pub fn rotating(grid: Grid, v1: &[Vec<f64>], v2: &[Vec<f64>], horizon: f64, nodes: usize) -> Self {
        let nodes = nodes.max(2);
        let time_nodes = uniform_nodes(horizon, nodes);
        let components = time_nodes
            .iter()
            .map(|&t| {
                let (s, c) = (std::f64::consts::PI * t / horizon).sin_cos();
                v1.iter()
                    .zip(v2)
                    .map(|(a, b)| a.iter().zip(b).map(|(x, y)| c * x + s * y).collect())
                    .collect()
            })
            .collect();
        Self {
            grid,
            time_nodes,
            components,
        }
    }

    pub fn horizon(&self) -> f64 {
        *self.time_nodes.last().unwrap_or(&0.0)
    }

    pub fn node_spacing(&self) -> f64 {
        if self.time_nodes.len() < 2 {
            return 0.0;
        }
        self.time_nodes[1] - self.time_nodes[0]
    }

    /// Linear interpolation in time, clamped to `[0, T]`.
    pub fn at_time(&self, t: f64) -> Vec<Vec<f64>> {
        let nodes = &self.time_nodes;
        if nodes.len() == 1 || t <= nodes[0] {
            return self.components[0].clone();
        }
        let last = nodes.len() - 1;
        if t >= nodes[last] {
            return self.components[last].clone();
        }
        let dt = nodes[1] - nodes[0];
        let j = (((t - nodes[0]) / dt).floor() as usize).min(last - 1);
        let w = (t - nodes[j]) / (nodes[j + 1] - nodes[j]);
        self.components[j]
            .iter()
            .zip(&self.components[j + 1])
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (1.0 - w) * x + w * y).collect())
            .collect()
    }

    /// `s ↦ v(T − s)`.
    pub fn time_reversed(&self) -> Self {
        let mut components = self.components.clone();
        components.reverse();
        Self {
            grid: self.grid,
            time_nodes: self.time_nodes.clone(),
            components,
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        for node in out.components.iter_mut() {
            for comp in node.iter_mut() {
                for v in comp.iter_mut() {
                    *v *= c;
                }
            }
        }
        out
    }

    /// Largest Euclidean speed over all nodes and grid points.
    pub fn max_speed(&self) -> f64 {
        self.components
            .iter()
            .map(|node| speed_max(node))
            .fold(0.0, f64::max)
    }

    /// Largest speed of the trigonometric interpolants (componentwise bound).
    pub fn continuum_speed_bound(&self) -> f64 {
        self.components
            .iter()
            .map(|node| {
                node.iter()
                    .map(|c| {
                        let f = Field::from_values(self.grid, c.clone()).unwrap();
                        interpolant_max(&f).max(interpolant_max(&f.scale(-1.0)))
                    })
                    .map(|m| m * m)
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max)
    }

    /// Largest relative spectral divergence `‖∇·v‖_∞ / (k_max ‖v‖_∞)` over the nodes.
    pub fn divergence_residual(&self) -> f64 {
        let spectral = Spectral::new(self.grid);
        let kmax = spectral.k2.iter().cloned().fold(0.0, f64::max).sqrt();
        self.components
            .iter()
            .map(|node| {
                let div = divergence(&spectral, node);
                let dmax = div.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                let vmax = speed_max(node);
                if vmax == 0.0 {
                    0.0
                } else {
                    dmax / (kmax * vmax)
                }
            })
            .fold(0.0, f64::max)
    }

    /// `‖v‖_{L^∞(M^{q,a})}`: the largest Morrey norm over the time nodes.
    pub fn morrey_norm(&self, params: &MorreyParams) -> Result<f64> {
        let vals: Vec<Result<f64>> = self
            .components
            .iter()
            .map(|node| {
                let refs: Vec<&[f64]> = node.iter().map(|c| c.as_slice()).collect();
                morrey_norm_components(&self.grid, &refs, params)
            })
            .collect();
        let mut m = 0.0f64;
        for v in vals {
            m = m.max(v?);
        }
        Ok(m)
    }
}

fn uniform_nodes(horizon: f64, nodes: usize) -> Vec<f64> {
    (0..nodes)
        .map(|i| horizon * i as f64 / (nodes - 1) as f64)
        .collect()
}

fn speed_max(node: &[Vec<f64>]) -> f64 {
    let len = node.first().map_or(0, |c| c.len());
    (0..len)
        .map(|i| node.iter().map(|c| c[i] * c[i]).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

/// Spectral divergence of a vector field.
pub fn divergence(spectral: &Spectral, comps: &[Vec<f64>]) -> Vec<f64> {
    let mut acc = vec![0.0; spectral.len()];
    for (a, c) in comps.iter().enumerate() {
        let d = spectral.derivative(c, a);
        for (x, y) in acc.iter_mut().zip(d) {
            *x += y;
        }
    }
    acc
}

/// `∇^⊥ φ = (−∂₂φ, ∂₁φ)` in two dimensions.
pub fn perp_gradient(phi: &Field) -> Result<Vec<Vec<f64>>> {
    if phi.grid.n != 2 {
        return Err(invalid("drift", "stream functions need n = 2"));
    }
    let s = Spectral::new(phi.grid);
    let d1 = s.derivative(&phi.values, 0);
    let d2 = s.derivative(&phi.values, 1);
    Ok(vec![d2.into_iter().map(|v| -v).collect(), d1])
}

/// Leray projection `v − ∇Δ^{-1}∇·v`, Nyquist modes removed.
pub fn leray_project(grid: Grid, comps: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let s = Spectral::new(grid);
    let hats: Vec<Vec<Complex64>> = comps.iter().map(|c| s.forward(c)).collect();
    let mut out: Vec<Vec<Complex64>> = hats.clone();
    for idx in 0..grid.len() {
        if s.nyquist[idx] {
            for o in out.iter_mut() {
                o[idx] = Complex64::new(0.0, 0.0);
            }
            continue;
        }
        let k2 = s.k2[idx];
        if k2 == 0.0 {
            continue;
        }
        let kdotv: Complex64 = (0..grid.n).map(|a| hats[a][idx] * s.k[a][idx]).sum();
        for a in 0..grid.n {
            out[a][idx] = hats[a][idx] - kdotv * (s.k[a][idx] / k2);
        }
    }
    out.into_iter().map(|h| s.inverse(h)).collect()
}

/// Generator family of a drift.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DriftSpec {
    Zero,
    /// `v = (A sin(m k₀ x₂), 0, ...)`.
    Shear { amplitude: f64, mode: i64 },
    /// `v = ∇^⊥(A·bump(|x − c|/R))`, `n = 2`.
    BumpStream { amplitude: f64, center: Vec<f64>, radius: f64 },
    /// Random band-limited stream function, `n = 2`.
    StreamFunction { max_mode: i64, seed: u64, #[serde(default)] unsteady: bool },
    /// Leray projection of a random band-limited vector field.
    SpectralProjection { max_mode: i64, seed: u64, #[serde(default)] unsteady: bool },
}

/// Overall scale of a generated drift.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum DriftScale {
    /// Leave the generator's own amplitude.
    Raw,
    /// Largest speed (continuum bound) equal to the value.
    Speed(f64),
    /// `‖v‖_{L^∞(M^{q,a})}` equal to the value.
    Morrey(f64),
}

/// Generate a divergence-free drift on `[0, T]`.
pub fn make_divfree(
    spec: &DriftSpec,
    grid: Grid,
    horizon: f64,
    nodes: usize,
    scale: DriftScale,
    morrey: &MorreyParams,
) -> Result<VelocityField> {
    let v = match spec {
        DriftSpec::Zero => VelocityField::zero(grid, horizon, nodes),
        DriftSpec::Shear { amplitude, mode } => {
            if grid.n < 2 {
                return Err(invalid("drift.kind", "shear needs n >= 2"));
            }
            let k = grid.k0() * *mode as f64;
            let mut comps = vec![vec![0.0; grid.len()]; grid.n];
            for (i, slot) in comps[0].iter_mut().enumerate() {
                *slot = amplitude * (k * grid.coords(i)[1]).sin();
            }
            VelocityField::stationary(grid, comps, horizon, nodes)
        }
        DriftSpec::BumpStream {
            amplitude,
            center,
            radius,
        } => {
            if center.len() != grid.n {
                return Err(invalid("drift.center", "length must equal n"));
            }
            let phi = Field::from_fn(grid, |x| amplitude * bump(grid.torus_dist(x, center) / radius));
            VelocityField::stationary(grid, perp_gradient(&phi)?, horizon, nodes)
        }
        DriftSpec::StreamFunction {
            max_mode,
            seed,
            unsteady,
        } => {
            let mut r = rng(*seed);
            let v1 = perp_gradient(&band_limited(grid, *max_mode, 2.0, &mut r))?;
            if *unsteady {
                let v2 = perp_gradient(&band_limited(grid, *max_mode, 2.0, &mut r))?;
                VelocityField::rotating(grid, &v1, &v2, horizon, nodes)
            } else {
                VelocityField::stationary(grid, v1, horizon, nodes)
            }
        }
        DriftSpec::SpectralProjection {
            max_mode,
            seed,
            unsteady,
        } => {
            if grid.n < 2 {
                return Err(invalid("drift.kind", "divergence-free fields need n >= 2"));
            }
            let mut r = rng(*seed);
            let mut draw = || {
                let raw: Vec<Vec<f64>> = (0..grid.n)
                    .map(|_| band_limited(grid, *max_mode, 1.0, &mut r).values)
                    .collect();
                leray_project(grid, &raw)
            };
            let v1 = draw();
            if *unsteady {
                let v2 = draw();
                VelocityField::rotating(grid, &v1, &v2, horizon, nodes)
            } else {
                VelocityField::stationary(grid, v1, horizon, nodes)
            }
        }
    };
    match scale {
        DriftScale::Raw => Ok(v),
        DriftScale::Speed(target) => {
            let s = v.continuum_speed_bound();
            Ok(if s > 0.0 { v.scaled(target / s) } else { v })
        }
        DriftScale::Morrey(target) => {
            let m = v.morrey_norm(morrey)?;
            Ok(if m > 0.0 { v.scaled(target / m) } else { v })
        }
    }
}

/// Time bump `ψ_ε` and space bump `ω_ε`, both the canonical `exp(−1/(1−|x|²))` profile.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MollifierPair {
    pub epsilon: f64,
}

impl MollifierPair {
    /// Discrete time weights `ψ_ε(t_j − t_i)Δt`, normalized over the infinite node lattice.
    pub fn time_weights(&self, dt: f64) -> Vec<(i64, f64)> {
        let reach = (self.epsilon / dt).ceil() as i64;
        let raw: Vec<(i64, f64)> = (-reach..=reach)
            .map(|j| (j, bump(j as f64 * dt / self.epsilon)))
            .filter(|(_, w)| *w > 0.0)
            .collect();
        let total: f64 = raw.iter().map(|(_, w)| w).sum();
        raw.into_iter().map(|(j, w)| (j, w / total)).collect()
    }

    /// Spatial mollifier sampled on the grid (unit grid integral).
    pub fn space_kernel(&self, grid: Grid) -> Field {
        let origin = vec![0.0; grid.n];
        let raw = Field::from_fn(grid, |x| bump(grid.torus_dist(x, &origin) / self.epsilon));
        let total = raw.integral();
        raw.scale(1.0 / total)
    }

    /// Fourier multiplier of `ω_ε ∗ ·`.
    pub fn space_multiplier(&self, grid: Grid) -> Vec<Complex64> {
        let k = self.space_kernel(grid);
        let s = Spectral::new(grid);
        let cell = grid.cell_volume();
        s.forward(&k.values).into_iter().map(|c| c * cell).collect()
    }
}

/// `v_ε = (ψ_ε ∗_t v) ∗_x ω_ε` with `v` extended by zero outside `[0, T]`.
pub fn mollify(v: &VelocityField, m: &MollifierPair) -> Result<VelocityField> {
    let h = v.grid.spacing();
    if m.epsilon < h * (1.0 - 1e-12) {
        return Err(Error::Resolution(format!(
            "mollifier width {} below grid spacing {h}",
            m.epsilon
        )));
    }
    let dt = v.node_spacing();
    if dt > 0.0 && m.epsilon < dt * (1.0 - 1e-12) {
        return Err(Error::Resolution(format!(
            "mollifier width {} below time-node spacing {dt}",
            m.epsilon
        )));
    }
    let nodes = v.time_nodes.len();
    let weights = if dt > 0.0 { m.time_weights(dt) } else { vec![(0, 1.0)] };
    let mult = m.space_multiplier(v.grid);
    let s = Spectral::new(v.grid);
    let components: Vec<Vec<Vec<f64>>> = (0..nodes)
        .into_par_iter()
        .map(|j| {
            (0..v.grid.n)
                .map(|a| {
                    let mut acc = vec![0.0; v.grid.len()];
                    for &(off, w) in &weights {
                        let i = j as i64 - off;
                        if i < 0 || i >= nodes as i64 {
                            continue;
                        }
                        for (x, y) in acc.iter_mut().zip(&v.components[i as usize][a]) {
                            *x += w * y;
                        }
                    }
                    let mut hat = s.forward(&acc);
                    for (c, w) in hat.iter_mut().zip(&mult) {
                        *c *= w;
                    }
                    hermitian(&v.grid, &mut hat);
                    s.inverse(hat)
                })
                .collect()
        })
        .collect();
    Ok(VelocityField {
        grid: v.grid,
        time_nodes: v.time_nodes.clone(),
        components,
    })
}

/// Sweep of `‖v_ε‖_∞ / (ε^{−n/q} ‖v‖_{L^∞(M^{q,a})})` over mollifier widths.
pub fn mollifier_linf_sweep(v: &VelocityField, params: &MorreyParams, widths: &[f64]) -> Result<SweepReport> {
    let norm = v.morrey_norm(params)?;
    let n = v.grid.n as f64;
    let mut levels = Vec::new();
    for &eps in widths {
        let ve = mollify(v, &MollifierPair { epsilon: eps })?;
        let lhs = ve.max_speed();
        let shape = eps.powf(-n / params.q) * norm;
        levels.push(SweepLevel {
            param: eps,
            lhs,
            shape,
            ratio: if shape > 0.0 { lhs / shape } else { 0.0 },
        });
    }
    Ok(SweepReport::from_levels("mollifier-linf", levels))
}

/// Exponent regime of the kernel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlphaRegime {
    /// `0 < δ < α < 1`.
    Below,
    /// `1 < δ < α < 2`.
    Above,
}

impl AlphaRegime {
    pub fn of(alpha: f64) -> Self {
        if alpha < 1.0 {
            AlphaRegime::Below
        } else {
            AlphaRegime::Above
        }
    }
}

/// `‖(A − M/2) v·∇φ_R‖_{L^p}` against `R^{−1+n/p}` (or `R^{−1+n/p+(a−n)/q}`) times `M ‖v‖`.
pub fn verify_drift_cutoff_bound(
    v: &[Vec<f64>],
    field: &Field,
    m: f64,
    radii: &[f64],
    p: f64,
    params: &MorreyParams,
    regime: AlphaRegime,
) -> Result<SweepReport> {
    let grid = field.grid;
    if regime == AlphaRegime::Above && params.q < p {
        return Err(invalid("morrey.q", "must satisfy q >= p when alpha > 1"));
    }
    let refs: Vec<&[f64]> = v.iter().map(|c| c.as_slice()).collect();
    let vnorm = morrey_norm_components(&grid, &refs, params)?;
    let n = grid.n as f64;
    let center: Vec<f64> = vec![0.0; grid.n];
    let s = Spectral::new(grid);
    let mut levels = Vec::new();
    for &r in radii {
        if 2.0 * r > grid.side_length / 2.0 {
            return Err(invalid("R", "cutoff support exceeds half the period"));
        }
        let phi = cutoff_field(grid, &center, r);
        let grads: Vec<Vec<f64>> = (0..grid.n).map(|a| s.derivative(&phi.values, a)).collect();
        let vals: Vec<f64> = (0..grid.len())
            .map(|i| {
                let vg: f64 = (0..grid.n).map(|a| v[a][i] * grads[a][i]).sum();
                (field.values[i] - 0.5 * m) * vg
            })
            .collect();
        let lhs = lp_norm(&vals, p, grid.cell_volume());
        let mut e = -1.0 + n / p;
        if regime == AlphaRegime::Above {
            e += (params.a - n) / params.q;
        }
        let shape = r.powf(e) * m * vnorm;
        levels.push(SweepLevel {
            param: r,
            lhs,
            shape,
            ratio: if shape > 0.0 { lhs / shape } else { 0.0 },
        });
    }
    Ok(SweepReport::from_levels("drift-cutoff", levels))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> MorreyParams {
        MorreyParams {
            q: 4.0,
            a: 3.0,
            local: false,
        }
    }

    #[test]
    fn generators_are_divergence_free() {
        let g = Grid::new(2, 32, 6.0).unwrap();
        for spec in [
            DriftSpec::Shear {
                amplitude: 1.0,
                mode: 2,
            },
            DriftSpec::BumpStream {
                amplitude: 1.0,
                center: vec![3.0, 3.0],
                radius: 1.5,
            },
            DriftSpec::StreamFunction {
                max_mode: 4,
                seed: 3,
                unsteady: true,
            },
            DriftSpec::SpectralProjection {
                max_mode: 4,
                seed: 3,
                unsteady: false,
            },
        ] {
            let v = make_divfree(&spec, g, 1.0, 5, DriftScale::Speed(1.0), &params()).unwrap();
            assert!(v.divergence_residual() < 1e-10, "{spec:?}");
            let m = mollify(&v, &MollifierPair { epsilon: 0.4 }).unwrap();
            assert!(m.divergence_residual() < 1e-10, "{spec:?}");
        }
    }

    #[test]
    fn mollifier_time_weights_sum_to_one() {
        let m = MollifierPair { epsilon: 0.3 };
        let s: f64 = m.time_weights(0.05).iter().map(|(_, w)| w).sum();
        assert!((s - 1.0).abs() < 1e-14);
        let g = Grid::new(2, 32, 4.0).unwrap();
        assert!((m.space_kernel(g).integral() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn interior_node_of_constant_drift_is_time_invariant() {
        let g = Grid::new(2, 16, 4.0).unwrap();
        let v = make_divfree(
            &DriftSpec::Shear {
                amplitude: 1.0,
                mode: 0,
            },
            g,
            1.0,
            11,
            DriftScale::Raw,
            &params(),
        )
        .unwrap();
        let comps = vec![vec![0.7; g.len()], vec![-0.2; g.len()]];
        let v = VelocityField::stationary(g, comps, v.horizon(), 11);
        let m = mollify(&v, &MollifierPair { epsilon: 0.25 }).unwrap();
        assert!((m.components[5][0][3] - 0.7).abs() < 1e-12);
        assert!(m.components[0][0][3] < 0.7);
    }

    #[test]
    fn rejects_unresolved_width() {
        let g = Grid::new(2, 16, 4.0).unwrap();
        let v = VelocityField::zero(g, 1.0, 3);
        assert!(mollify(&v, &MollifierPair { epsilon: 0.1 }).is_err());
    }
}
