//! Pseudo-spectral solvers for `∂tθ − ∇·(vθ) + 𝓛θ = εΔθ` and its backward dual.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::drift::VelocityField;
use crate::error::{invalid, Error, Result};
use crate::grid::{Field, Grid, Spectral};
use crate::levy::LevySymbol;
use crate::spaces::MorreyParams;
use crate::synth::{band_limited, rng};

/// `e^{τΔ} f` as the multiplier `exp(−τ|k|²)`.
pub fn heat_semigroup(field: &Field, tau: f64) -> Field {
    if tau == 0.0 {
        return field.clone();
    }
    let s = Spectral::new(field.grid);
    let mult: Vec<f64> = s.k2.iter().map(|k2| (-tau * k2).exp()).collect();
    Field {
        grid: field.grid,
        values: s.apply_multiplier(&field.values, &mult),
        time: field.time,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Windowed Picard iteration of the Duhamel form with heat semigroup and midpoint quadrature.
    PicardDuhamel,
    /// Exact linear multiplier, explicit first-order advection.
    ImexSpectral,
    /// Exact linear multiplier, implicit midpoint advection.
    ExpMidpoint,
}

fn default_tol() -> f64 {
    1e-10
}
fn default_iters() -> usize {
    200
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub dt: f64,
    pub scheme: Scheme,
    #[serde(default = "default_tol")]
    pub picard_tol: f64,
    #[serde(default = "default_iters")]
    pub max_iters: usize,
    /// Fixed window length; automatic from `C₀ <= 1/2` when absent.
    #[serde(default)]
    pub window: Option<f64>,
}

impl SolverConfig {
    pub fn new(dt: f64, scheme: Scheme) -> Self {
        Self {
            dt,
            scheme,
            picard_tol: default_tol(),
            max_iters: default_iters(),
            window: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(invalid("solver.dt", "must be positive"));
        }
        if !(self.picard_tol > 0.0) {
            return Err(invalid("solver.picard_tol", "must be positive"));
        }
        if self.max_iters == 0 {
            return Err(invalid("solver.max_iters", "must be positive"));
        }
        Ok(())
    }
}

/// A mollified viscous problem.
#[derive(Clone, Debug)]
pub struct ViscousProblem {
    pub symbol: LevySymbol,
    pub drift: VelocityField,
    pub epsilon_visc: f64,
    pub theta0: Field,
    pub horizon: f64,
    /// `‖v‖_{L^∞(M^{q,a})}` of the drift.
    pub drift_norm: f64,
    pub q: f64,
}

impl ViscousProblem {
    pub fn new(
        symbol: LevySymbol,
        drift: VelocityField,
        epsilon_visc: f64,
        theta0: Field,
        horizon: f64,
        morrey: &MorreyParams,
    ) -> Result<Self> {
        let norm = drift.morrey_norm(morrey)?;
        Self::with_drift_norm(symbol, drift, epsilon_visc, theta0, horizon, norm, morrey.q)
    }

    pub fn with_drift_norm(
        symbol: LevySymbol,
        drift: VelocityField,
        epsilon_visc: f64,
        theta0: Field,
        horizon: f64,
        drift_norm: f64,
        q: f64,
    ) -> Result<Self> {
        symbol.grid.check_same(&theta0.grid)?;
        drift.grid.check_same(&theta0.grid)?;
        if !(epsilon_visc >= 0.0) {
            return Err(invalid("epsilon_visc", "must be >= 0"));
        }
        if !(horizon > 0.0) {
            return Err(invalid("horizon", "must be positive"));
        }
        Ok(Self {
            symbol,
            drift,
            epsilon_visc,
            theta0,
            horizon,
            drift_norm,
            q,
        })
    }

    /// `T′^{1/2} ε^{−1/2−n/q} ‖v‖ + T′^{1−α/2} ε^{−α/2} + T′^{1−δ/2} ε^{−δ/2}`.
    pub fn contraction_shape(&self, window: f64) -> f64 {
        let e = self.epsilon_visc;
        let n = self.theta0.grid.n as f64;
        let (a, d) = (self.symbol.alpha, self.symbol.delta);
        window.sqrt() / e.sqrt() * e.powf(-n / self.q) * self.drift_norm
            + window.powf(1.0 - a / 2.0) / e.powf(a / 2.0)
            + window.powf(1.0 - d / 2.0) / e.powf(d / 2.0)
    }
}

/// L^p norms recorded after each step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormRow {
    pub time: f64,
    pub l1: f64,
    pub l2: f64,
    pub l4: f64,
    pub linf: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowLog {
    pub start: f64,
    pub end: f64,
    pub substeps: usize,
    pub residuals: Vec<f64>,
}

impl WindowLog {
    /// Ratios of successive residuals.
    pub fn ratios(&self) -> Vec<f64> {
        self.residuals
            .windows(2)
            .filter(|w| w[0] > 0.0)
            .map(|w| w[1] / w[0])
            .collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub norms: Vec<NormRow>,
    pub windows: Vec<WindowLog>,
    pub c0_prefactor: Option<f64>,
    pub window_length: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySolution {
    pub scheme: Scheme,
    pub times: Vec<f64>,
    pub fields: Vec<Field>,
    pub diagnostics: Diagnostics,
}

impl TrajectorySolution {
    pub fn last(&self) -> &Field {
        self.fields.last().expect("trajectory has the initial field")
    }
}

fn norm_row(f: &Field) -> NormRow {
    NormRow {
        time: f.time.unwrap_or(0.0),
        l1: f.lp_norm(1.0),
        l2: f.lp_norm(2.0),
        l4: f.lp_norm(4.0),
        linf: f.lp_norm(f64::INFINITY),
    }
}

/// Linear part and drift of one evolution direction.
pub struct Dynamics {
    pub spectral: Spectral,
    symbol: Vec<f64>,
    eps: f64,
    drift: VelocityField,
    /// `+1` for `∇·(vθ)`, `−1` for the dual `−∇·(vψ)`.
    sign: f64,
}

impl Dynamics {
    pub fn forward(symbol: &LevySymbol, drift: &VelocityField, eps: f64) -> Self {
        Self {
            spectral: Spectral::new(symbol.grid),
            symbol: symbol.values.clone(),
            eps,
            drift: drift.clone(),
            sign: 1.0,
        }
    }

    /// Dual flow `∂sψ = −∇·(v(t−s)ψ) − 𝓛ψ + εΔψ`.
    pub fn backward(symbol: &LevySymbol, drift: &VelocityField, eps: f64) -> Self {
        Self::transport(symbol, &drift.time_reversed(), eps)
    }

    /// `∂sψ = −∇·(v(s)ψ) − 𝓛ψ + εΔψ` with the drift used as given.
    pub fn transport(symbol: &LevySymbol, drift: &VelocityField, eps: f64) -> Self {
        Self {
            spectral: Spectral::new(symbol.grid),
            symbol: symbol.values.clone(),
            eps,
            drift: drift.clone(),
            sign: -1.0,
        }
    }

    pub fn grid(&self) -> Grid {
        self.spectral.grid
    }

    fn velocity(&self, t: f64) -> Vec<Vec<f64>> {
        self.drift.at_time(t)
    }

    fn has_drift(&self) -> bool {
        self.drift.max_speed() > 0.0
    }

    /// Dealiased `±∇·(v m)` in Fourier space.
    fn advect_hat(&self, v: &[Vec<f64>], m: &[f64]) -> Vec<Complex64> {
        let s = &self.spectral;
        let mut acc = vec![Complex64::new(0.0, 0.0); s.len()];
        for (a, va) in v.iter().enumerate() {
            if va.iter().all(|x| *x == 0.0) {
                continue;
            }
            let prod: Vec<f64> = va.iter().zip(m).map(|(x, y)| x * y).collect();
            let hat = s.forward(&prod);
            let ka = &s.k[a];
            for (i, (c, h)) in acc.iter_mut().zip(hat).enumerate() {
                *c += h * Complex64::new(0.0, self.sign * ka[i]);
            }
        }
        s.apply_dealias(&mut acc);
        s.zero_nyquist(&mut acc);
        acc
    }

    fn full_multiplier(&self, tau: f64) -> Vec<f64> {
        self.symbol
            .iter()
            .zip(&self.spectral.k2)
            .map(|(a, k2)| (-tau * (a + self.eps * k2)).exp())
            .collect()
    }

    fn heat_multiplier(&self, tau: f64) -> Vec<f64> {
        self.spectral.k2.iter().map(|k2| (-tau * self.eps * k2).exp()).collect()
    }

    /// One implicit-midpoint step with the linear part integrated exactly.
    pub fn exp_midpoint_step(&self, theta: &[f64], t: f64, dt: f64) -> Result<Vec<f64>> {
        let s = &self.spectral;
        let h = self.full_multiplier(dt / 2.0);
        let th = s.forward(theta);
        let hth: Vec<Complex64> = th.iter().zip(&h).map(|(c, m)| c * m).collect();
        let h2th: Vec<Complex64> = hth.iter().zip(&h).map(|(c, m)| c * m).collect();
        let mut m_hat = hth.clone();
        if self.has_drift() {
            let v = self.velocity(t + dt / 2.0);
            let mut m = s.inverse(m_hat.clone());
            let mut prev = f64::INFINITY;
            let scale = hat_norm(&hth).max(1e-300);
            let mut converged = false;
            for _ in 0..200 {
                let g = self.advect_hat(&v, &m);
                let next: Vec<Complex64> = hth.iter().zip(&g).map(|(a, b)| a + b * (dt / 2.0)).collect();
                let diff = hat_diff(&next, &m_hat);
                m_hat = next;
                m = s.inverse(m_hat.clone());
                if diff <= 1e-14 * scale {
                    converged = true;
                    break;
                }
                if diff > prev && diff > 1e-10 * scale {
                    return Err(Error::StepBound(format!(
                        "midpoint iteration diverges at t = {t}, dt = {dt}"
                    )));
                }
                prev = diff;
            }
            if !converged {
                return Err(Error::StepBound(format!("midpoint iteration stalled at t = {t}")));
            }
        }
        let out: Vec<Complex64> = m_hat
            .iter()
            .zip(&h)
            .zip(&h2th)
            .map(|((mm, hm), b)| 2.0 * hm * mm - b)
            .collect();
        Ok(s.inverse(out))
    }

    /// One IMEX step `θ' = e^{−dt(a+ε|k|²)}(θ + dt ∇·(vθ))`.
    pub fn imex_step(&self, theta: &[f64], t: f64, dt: f64) -> Result<Vec<f64>> {
        let s = &self.spectral;
        let speed = self.drift.max_speed();
        let h = self.grid().spacing();
        if speed > 0.0 && dt > h / (2.0 * speed) * (1.0 + 1e-12) {
            return Err(Error::StepBound(format!(
                "dt = {dt} exceeds h/(2 max|v|) = {}",
                h / (2.0 * speed)
            )));
        }
        let e = self.full_multiplier(dt);
        let mut th = s.forward(theta);
        if speed > 0.0 {
            let g = self.advect_hat(&self.velocity(t), theta);
            for (c, gg) in th.iter_mut().zip(g) {
                *c += gg * dt;
            }
        }
        for (c, m) in th.iter_mut().zip(&e) {
            *c *= m;
        }
        Ok(s.inverse(th))
    }
}

fn hat_norm(a: &[Complex64]) -> f64 {
    a.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

fn hat_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt()
}

fn step_count(horizon: f64, dt: f64) -> Result<usize> {
    let steps = (horizon / dt).round() as usize;
    if steps == 0 || ((steps as f64) * dt - horizon).abs() > 1e-9 * horizon.max(1.0) {
        return Err(invalid("solver.dt", "horizon must be a whole number of steps"));
    }
    Ok(steps)
}

/// Solve a problem with the configured scheme.
pub fn solve(problem: &ViscousProblem, config: &SolverConfig) -> Result<TrajectorySolution> {
    config.validate()?;
    let dynamics = Dynamics::forward(&problem.symbol, &problem.drift, problem.epsilon_visc);
    match config.scheme {
        Scheme::PicardDuhamel => picard_run(problem, &dynamics, &problem.theta0, config),
        _ => march(&dynamics, &problem.theta0, problem.horizon, config),
    }
}

/// Windowed Picard solve of the Duhamel form.
pub fn picard_solve(problem: &ViscousProblem, config: &SolverConfig) -> Result<TrajectorySolution> {
    let mut c = config.clone();
    c.scheme = Scheme::PicardDuhamel;
    solve(problem, &c)
}

/// Dual solve `∂sψ = −∇·[v(t−s)ψ] − 𝓛ψ + εΔψ` on `[0, t_final]`.
pub fn backward_dual_solve(
    drift: &VelocityField,
    symbol: &LevySymbol,
    psi0: &Field,
    t_final: f64,
    epsilon_visc: f64,
    config: &SolverConfig,
) -> Result<TrajectorySolution> {
    config.validate()?;
    if (drift.horizon() - t_final).abs() > 1e-9 * t_final.max(1.0) {
        return Err(invalid("t_final", "must equal the drift horizon"));
    }
    let dynamics = Dynamics::backward(symbol, drift, epsilon_visc);
    match config.scheme {
        Scheme::PicardDuhamel => {
            let p = ViscousProblem::with_drift_norm(
                symbol.clone(),
                drift.time_reversed(),
                epsilon_visc,
                psi0.clone(),
                t_final,
                // the window rule only needs a drift size; use the sup norm
                drift.max_speed(),
                f64::INFINITY,
            )?;
            picard_run(&p, &dynamics, psi0, config)
        }
        _ => march(&dynamics, psi0, t_final, config),
    }
}

fn march(dyn_: &Dynamics, theta0: &Field, horizon: f64, config: &SolverConfig) -> Result<TrajectorySolution> {
    let steps = step_count(horizon, config.dt)?;
    let dt = config.dt;
    let mut fields = vec![theta0.clone().with_time(0.0)];
    let mut cur = theta0.values.clone();
    for i in 0..steps {
        let t = i as f64 * dt;
        cur = match config.scheme {
            Scheme::ImexSpectral => dyn_.imex_step(&cur, t, dt)?,
            _ => dyn_.exp_midpoint_step(&cur, t, dt)?,
        };
        fields.push(Field {
            grid: theta0.grid,
            values: cur.clone(),
            time: Some((i + 1) as f64 * dt),
        });
    }
    let times = fields.iter().map(|f| f.time.unwrap()).collect();
    let norms = fields.iter().map(norm_row).collect();
    Ok(TrajectorySolution {
        scheme: config.scheme,
        times,
        fields,
        diagnostics: Diagnostics {
            norms,
            ..Default::default()
        },
    })
}

/// Midpoint-quadrature Duhamel window: unknowns are the midpoint states.
struct Window<'a> {
    dyn_: &'a Dynamics,
    h: Vec<f64>,
    h2: Vec<f64>,
    dt: f64,
    velocities: Vec<Vec<Vec<f64>>>,
}

impl<'a> Window<'a> {
    fn new(dyn_: &'a Dynamics, start: f64, dt: f64, nodes: usize) -> Self {
        let h = dyn_.heat_multiplier(dt / 2.0);
        let h2 = h.iter().map(|x| x * x).collect();
        let velocities = (0..nodes)
            .map(|i| dyn_.velocity(start + (i as f64 + 0.5) * dt))
            .collect();
        Self {
            dyn_,
            h,
            h2,
            dt,
            velocities,
        }
    }

    /// `G(m) = ±∇·(v m) − 𝓛m` in Fourier space.
    fn g_hat(&self, i: usize, m: &[f64]) -> Vec<Complex64> {
        let s = &self.dyn_.spectral;
        let mut g = self.dyn_.advect_hat(&self.velocities[i], m);
        let mh = s.forward(m);
        for ((gg, mm), a) in g.iter_mut().zip(mh).zip(&self.dyn_.symbol) {
            *gg -= mm * a;
        }
        g
    }

    /// One application of the window map; returns new midpoints and the node states.
    fn apply(&self, start: &[Complex64], mids: &[Vec<f64>], affine: bool) -> (Vec<Vec<f64>>, Vec<Vec<Complex64>>) {
        let s = &self.dyn_.spectral;
        let mut theta: Vec<Complex64> = if affine {
            start.to_vec()
        } else {
            vec![Complex64::new(0.0, 0.0); s.len()]
        };
        let mut out_m = Vec::with_capacity(mids.len());
        let mut states = Vec::with_capacity(mids.len());
        for (i, m) in mids.iter().enumerate() {
            let g = self.g_hat(i, m);
            let new_m: Vec<Complex64> = theta
                .iter()
                .zip(&g)
                .zip(&self.h)
                .map(|((th, gg), hh)| th * hh + gg * (self.dt / 2.0))
                .collect();
            out_m.push(s.inverse(new_m));
            theta = theta
                .iter()
                .zip(&g)
                .zip(self.h.iter().zip(&self.h2))
                .map(|((th, gg), (hh, h2))| th * h2 + gg * (self.dt * hh))
                .collect();
            states.push(theta.clone());
        }
        (out_m, states)
    }

    fn free_guess(&self, start: &[Complex64], nodes: usize) -> Vec<Vec<f64>> {
        let s = &self.dyn_.spectral;
        let mut cur = start.to_vec();
        (0..nodes)
            .map(|_| {
                let m: Vec<Complex64> = cur.iter().zip(&self.h).map(|(c, h)| c * h).collect();
                cur = cur.iter().zip(&self.h2).map(|(c, h)| c * h).collect();
                s.inverse(m)
            })
            .collect()
    }
}

fn sup_l2(grid: &Grid, fields: &[Vec<f64>]) -> f64 {
    let cell = grid.cell_volume();
    fields
        .iter()
        .map(|f| (f.iter().map(|v| v * v).sum::<f64>() * cell).sqrt())
        .fold(0.0, f64::max)
}

fn sup_l2_diff(grid: &Grid, a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let cell = grid.cell_volume();
    a.iter()
        .zip(b)
        .map(|(x, y)| (x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() * cell).sqrt())
        .fold(0.0, f64::max)
}

/// Measured Lipschitz constant of the window map in `L^∞(L²)`.
pub fn window_lipschitz(dyn_: &Dynamics, start: f64, dt: f64, nodes: usize) -> f64 {
    let grid = dyn_.grid();
    let w = Window::new(dyn_, start, dt, nodes);
    let np = grid.points_per_dim as i64;
    let cut = (np / 3).max(1);
    let mut probes: Vec<Vec<f64>> = Vec::new();
    let mut modes: Vec<i64> = vec![1, cut / 4, cut / 2, 3 * cut / 4, cut];
    modes.sort_unstable();
    modes.dedup();
    let k0 = grid.k0();
    for &m in modes.iter().filter(|m| **m > 0) {
        for axis in 0..grid.n {
            probes.push(Field::from_fn(grid, |x| (k0 * m as f64 * x[axis]).cos()).values);
        }
        if grid.n > 1 {
            probes.push(Field::from_fn(grid, |x| (k0 * m as f64 * (x[0] + x[1])).cos()).values);
        }
    }
    let mut r = rng(0x5eed);
    for _ in 0..3 {
        probes.push(band_limited(grid, cut, 0.0, &mut r).values);
    }
    let mut best = 0.0f64;
    let mut best_out: Option<Vec<Vec<f64>>> = None;
    for p in probes {
        let mids = vec![p; nodes];
        let norm = sup_l2(&grid, &mids);
        if norm == 0.0 {
            continue;
        }
        let (out, _) = w.apply(&[], &mids, false);
        let ratio = sup_l2(&grid, &out) / norm;
        if ratio > best {
            best = ratio;
            best_out = Some(out);
        }
    }
    // two power-iteration refinements from the worst probe
    if let Some(mut cur) = best_out {
        for _ in 0..2 {
            let norm = sup_l2(&grid, &cur);
            if norm == 0.0 {
                break;
            }
            let (out, _) = w.apply(&[], &cur, false);
            best = best.max(sup_l2(&grid, &out) / norm);
            cur = out;
        }
    }
    best
}

/// Window partition: `(steps per window, substeps per step)`.
fn window_layout(window: f64, dt: f64) -> (usize, usize) {
    let w = ((window / dt) * (1.0 + 1e-12)).floor().max(1.0) as usize;
    let sub = 8usize.div_ceil(w);
    (w, sub)
}

/// Prefactor `C` with `C · shape(T′) >= measured Lipschitz constant` on a dyadic ladder of `T′`,
/// climbed until the measured constant first exceeds 1/2.
pub fn calibrate_c0(problem: &ViscousProblem, dyn_: &Dynamics, dt: f64) -> f64 {
    let mut best = 0.0f64;
    let mut window = dt;
    let starts = [0.0, 0.5 * problem.horizon];
    while window <= problem.horizon * (1.0 + 1e-12) {
        let (w, sub) = window_layout(window, dt);
        let nodes = w * sub;
        let dt_sub = dt / sub as f64;
        let lip = starts
            .iter()
            .map(|&s| window_lipschitz(dyn_, s, dt_sub, nodes))
            .fold(0.0, f64::max);
        let shape = problem.contraction_shape(window);
        if shape > 0.0 {
            best = best.max(lip / shape);
        }
        // windows past the contraction threshold are never selected
        if lip > 0.5 {
            break;
        }
        window *= 2.0;
    }
    // calibration headroom
    1.1 * best
}

/// `C₀(T′) = C · shape(T′)`.
pub fn contraction_constant(problem: &ViscousProblem, prefactor: f64, window: f64) -> f64 {
    prefactor * problem.contraction_shape(window)
}

/// Largest `T′ <= T` with `C₀(T′) <= 1/2`, by bisection.
pub fn local_window(problem: &ViscousProblem, prefactor: f64, dt: f64) -> Result<f64> {
    let c = |w: f64| contraction_constant(problem, prefactor, w);
    if c(problem.horizon) <= 0.5 {
        return Ok(problem.horizon);
    }
    let (mut lo, mut hi) = (0.0, problem.horizon);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if c(mid) <= 0.5 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if lo < dt * (1.0 - 1e-12) {
        return Err(Error::NoWindow { dt, c0: c(dt) });
    }
    Ok(lo)
}

fn picard_run(
    problem: &ViscousProblem,
    dyn_: &Dynamics,
    theta0: &Field,
    config: &SolverConfig,
) -> Result<TrajectorySolution> {
    if problem.epsilon_visc <= 0.0 {
        return Err(Error::Precondition("the Picard scheme needs epsilon_visc > 0".into()));
    }
    let dt = config.dt;
    let steps = step_count(problem.horizon, dt)?;
    let (prefactor, window) = match config.window {
        Some(w) => (None, w),
        None => {
            let c = calibrate_c0(problem, dyn_, dt);
            (Some(c), local_window(problem, c, dt)?)
        }
    };
    let (w, sub) = window_layout(window, dt);
    let grid = theta0.grid;
    let s = &dyn_.spectral;
    let mut fields = vec![theta0.clone().with_time(0.0)];
    let mut logs = Vec::new();
    let mut start_hat = s.forward(&theta0.values);
    let mut step = 0usize;
    while step < steps {
        let w_cur = w.min(steps - step);
        let nodes = w_cur * sub;
        let dt_sub = dt / sub as f64;
        let t0 = step as f64 * dt;
        let win = Window::new(dyn_, t0, dt_sub, nodes);
        let scale = (hat_norm(&start_hat) * (grid.cell_volume() / grid.len() as f64).sqrt()).max(1e-300);
        let mut mids = win.free_guess(&start_hat, nodes);
        let mut residuals = Vec::new();
        loop {
            let (next, _) = win.apply(&start_hat, &mids, true);
            let res = sup_l2_diff(&grid, &next, &mids) / scale;
            mids = next;
            residuals.push(res);
            if res <= config.picard_tol {
                break;
            }
            if residuals.len() >= config.max_iters {
                return Err(Error::Picard {
                    iters: residuals.len(),
                    residual: res,
                });
            }
        }
        // one more sweep so the stored states match the converged midpoints
        let (_, states) = win.apply(&start_hat, &mids, true);
        for j in 0..w_cur {
            let hat = states[(j + 1) * sub - 1].clone();
            fields.push(Field {
                grid,
                values: s.inverse(hat),
                time: Some((step + j + 1) as f64 * dt),
            });
        }
        start_hat = states.last().unwrap().clone();
        logs.push(WindowLog {
            start: t0,
            end: (step + w_cur) as f64 * dt,
            substeps: sub,
            residuals,
        });
        step += w_cur;
    }
    let times = fields.iter().map(|f| f.time.unwrap()).collect();
    let norms = fields.iter().map(norm_row).collect();
    Ok(TrajectorySolution {
        scheme: Scheme::PicardDuhamel,
        times,
        fields,
        diagnostics: Diagnostics {
            norms,
            windows: logs,
            c0_prefactor: prefactor,
            window_length: Some(w as f64 * dt),
        },
    })
}

/// Pairwise `L²` distances at `T` along a descending viscosity list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VanishingReport {
    pub eps: Vec<f64>,
    /// `‖θ_{ε_i}(T) − θ_{ε_{i+1}}(T)‖_{L²}`.
    pub distances: Vec<f64>,
    pub monotone: bool,
    /// The smallest-ε solution stands in for the limit; empirical only.
    pub limit_is_empirical: bool,
}

pub fn vanishing_viscosity(
    problem: &ViscousProblem,
    config: &SolverConfig,
    eps_list: &[f64],
) -> Result<VanishingReport> {
    if eps_list.len() < 3 {
        return Err(invalid("eps_list", "needs at least three values"));
    }
    if eps_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(invalid("eps_list", "must be strictly descending"));
    }
    let mut finals = Vec::new();
    for &e in eps_list {
        let mut p = problem.clone();
        p.epsilon_visc = e;
        finals.push(solve(&p, config)?.last().clone());
    }
    let distances: Vec<f64> = finals
        .windows(2)
        .map(|w| w[0].axpy(-1.0, &w[1]).map(|d| d.lp_norm(2.0)))
        .collect::<Result<_>>()?;
    let monotone = distances.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12));
    Ok(VanishingReport {
        eps: eps_list.to_vec(),
        distances,
        monotone,
        limit_is_empirical: true,
    })
}

/// `sup_t ‖θ(t) − φ(t)‖_{L^p} / ‖θ0 − φ0‖_{L^p}` over the first local window.
pub fn continuous_dependence(
    problem: &ViscousProblem,
    config: &SolverConfig,
    phi0: &Field,
    p: f64,
) -> Result<f64> {
    let dyn_ = Dynamics::forward(&problem.symbol, &problem.drift, problem.epsilon_visc);
    let c = calibrate_c0(problem, &dyn_, config.dt);
    let window = local_window(problem, c, config.dt)?;
    let (w, _) = window_layout(window, config.dt);
    let mut p1 = problem.clone();
    p1.horizon = w as f64 * config.dt;
    let mut cfg = config.clone();
    cfg.scheme = Scheme::PicardDuhamel;
    cfg.window = Some(p1.horizon);
    let a = solve(&p1, &cfg)?;
    let mut p2 = p1.clone();
    p2.theta0 = phi0.clone();
    let b = solve(&p2, &cfg)?;
    let d0 = problem.theta0.axpy(-1.0, phi0)?.lp_norm(p);
    if d0 == 0.0 {
        return Ok(0.0);
    }
    let mut sup = 0.0f64;
    for (x, y) in a.fields.iter().zip(&b.fields) {
        sup = sup.max(x.axpy(-1.0, y)?.lp_norm(p));
    }
    Ok(sup / d0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drift::{make_divfree, DriftScale, DriftSpec};
    use crate::levy::{stable_symbol_closed_form, LevyKernel};
    use std::f64::consts::PI;

    fn stable_symbol(grid: Grid, alpha: f64) -> LevySymbol {
        LevySymbol::from_radial(grid, "stable", alpha, alpha * 0.75, |k| {
            stable_symbol_closed_form(grid.n, alpha, k)
        })
    }

    fn problem(grid: Grid, drift: VelocityField, theta0: Field, eps: f64, horizon: f64) -> ViscousProblem {
        ViscousProblem::with_drift_norm(stable_symbol(grid, 0.8), drift, eps, theta0, horizon, 1.0, 8.0).unwrap()
    }

    #[test]
    fn heat_contracts_lp() {
        let g = Grid::new(2, 32, 2.0 * PI).unwrap();
        let f = band_limited(g, 6, 0.0, &mut rng(2));
        let h = heat_semigroup(&f, 0.05);
        for p in [1.0, 2.0, f64::INFINITY] {
            assert!(h.lp_norm(p) <= f.lp_norm(p) * (1.0 + 1e-10));
        }
        assert_eq!(heat_semigroup(&f, 0.0), f);
    }

    #[test]
    fn single_mode_matches_multiplier() {
        let g = Grid::new(2, 16, 2.0 * PI).unwrap();
        let theta0 = Field::from_fn(g, |x| (2.0 * x[0]).cos());
        let v = VelocityField::zero(g, 0.2, 3);
        let p = problem(g, v, theta0.clone(), 1e-2, 0.2);
        let a = stable_symbol_closed_form(2, 0.8, 2.0);
        let want = (-0.2 * (a + 1e-2 * 4.0)).exp();
        for scheme in [Scheme::ExpMidpoint, Scheme::ImexSpectral] {
            let sol = solve(&p, &SolverConfig::new(0.01, scheme)).unwrap();
            let got = sol.last().values[0] / theta0.values[0];
            assert!((got / want - 1.0).abs() < 1e-12, "{scheme:?}");
        }
        let theta1 = Field::from_fn(g, |x| x[0].cos());
        let p = problem(g, VelocityField::zero(g, 0.1, 3), theta1.clone(), 1e-2, 0.1);
        let a = stable_symbol_closed_form(2, 0.8, 1.0);
        let want = (-0.1 * (a + 1e-2)).exp();
        let sol = solve(&p, &SolverConfig::new(2.5e-4, Scheme::PicardDuhamel)).unwrap();
        let got = sol.last().values[0] / theta1.values[0];
        assert!((got / want - 1.0).abs() < 1e-6, "{got} vs {want}");
    }

    #[test]
    fn zero_data_stays_zero() {
        let g = Grid::new(2, 16, 2.0 * PI).unwrap();
        let spec = DriftSpec::Shear {
            amplitude: 1.0,
            mode: 1,
        };
        let m = MorreyParams {
            q: 4.0,
            a: 3.0,
            local: false,
        };
        let v = make_divfree(&spec, g, 0.1, 3, DriftScale::Raw, &m).unwrap();
        let p = problem(g, v, Field::zeros(g), 1e-2, 0.1);
        let sol = solve(&p, &SolverConfig::new(0.005, Scheme::PicardDuhamel)).unwrap();
        assert!(sol.last().values.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn picard_agrees_with_exp_midpoint_and_conserves_mass() {
        let g = Grid::new(2, 32, 2.0 * PI).unwrap();
        let m = MorreyParams {
            q: 4.0,
            a: 3.0,
            local: false,
        };
        let spec = DriftSpec::StreamFunction {
            max_mode: 3,
            seed: 9,
            unsteady: true,
        };
        let v = make_divfree(&spec, g, 0.2, 9, DriftScale::Speed(1.0), &m).unwrap();
        let theta0 = crate::synth::normalize_to_range(&band_limited(g, 4, 1.0, &mut rng(5)), 0.0, 1.0);
        let p = problem(g, v, theta0.clone(), 1e-2, 0.2);
        let a = solve(&p, &SolverConfig::new(0.0025, Scheme::PicardDuhamel)).unwrap();
        let b = solve(&p, &SolverConfig::new(0.0025, Scheme::ExpMidpoint)).unwrap();
        let diff = a.last().axpy(-1.0, b.last()).unwrap().lp_norm(2.0);
        assert!(diff < 1e-3, "{diff}");
        let m0 = theta0.integral();
        assert!((a.last().integral() - m0).abs() < 1e-10 * m0.abs());
        for w in &a.diagnostics.windows {
            for r in w.ratios().iter().take(1) {
                assert!(*r <= 0.55, "{r}");
            }
        }
    }

    #[test]
    fn imex_is_first_order() {
        let g = Grid::new(2, 32, 2.0 * PI).unwrap();
        let m = MorreyParams {
            q: 4.0,
            a: 3.0,
            local: false,
        };
        let v = make_divfree(
            &DriftSpec::Shear {
                amplitude: 1.0,
                mode: 1,
            },
            g,
            0.4,
            3,
            DriftScale::Raw,
            &m,
        )
        .unwrap();
        let theta0 = Field::from_fn(g, |x| (x[0]).cos() + 0.5 * (x[1]).sin());
        let p = problem(g, v, theta0, 1e-2, 0.4);
        let reference = solve(&p, &SolverConfig::new(0.4 / 640.0, Scheme::ExpMidpoint)).unwrap();
        let errs: Vec<f64> = [0.02, 0.01, 0.005]
            .iter()
            .map(|&dt| {
                let s = solve(&p, &SolverConfig::new(dt, Scheme::ImexSpectral)).unwrap();
                s.last().axpy(-1.0, reference.last()).unwrap().lp_norm(2.0)
            })
            .collect();
        let order = (errs[1] / errs[2]).log2();
        assert!(order >= 0.9, "{errs:?}");
    }

    #[test]
    fn cfl_violation_is_reported() {
        let g = Grid::new(2, 16, 2.0 * PI).unwrap();
        let m = MorreyParams {
            q: 4.0,
            a: 3.0,
            local: false,
        };
        let v = make_divfree(
            &DriftSpec::Shear {
                amplitude: 10.0,
                mode: 1,
            },
            g,
            1.0,
            3,
            DriftScale::Raw,
            &m,
        )
        .unwrap();
        let p = problem(g, v, Field::constant(g, 1.0), 0.0, 1.0);
        let err = solve(&p, &SolverConfig::new(0.5, Scheme::ImexSpectral)).unwrap_err();
        assert!(matches!(err, Error::StepBound(_)));
        let err = solve(&p, &SolverConfig::new(0.5, Scheme::PicardDuhamel)).unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
    }

    #[test]
    fn tabulated_kernel_runs() {
        let g = Grid::new(2, 16, 2.0 * PI).unwrap();
        let k = LevyKernel::fractional_laplacian(2, 1.5, 1.2).unwrap();
        let sym = LevySymbol::tabulate(&k, g).unwrap();
        let theta0 = Field::from_fn(g, |x| x[0].sin());
        let p = ViscousProblem::with_drift_norm(sym, VelocityField::zero(g, 0.1, 2), 0.0, theta0, 0.1, 0.0, 4.0)
            .unwrap();
        let s = solve(&p, &SolverConfig::new(0.05, Scheme::ExpMidpoint)).unwrap();
        assert_eq!(s.times.len(), 3);
    }
}
