//! Browser bindings: symbol profiles, a live transport-diffusion simulation and the constants engine.

use transdiff::drift::{make_divfree, DriftScale, DriftSpec};
use transdiff::levy::{stable_symbol_closed_form, KernelSpec, LevyKernel, LevySymbol, Profile};
use transdiff::molecule::{compute_constants, ConstantParams};
use transdiff::solver::Dynamics;
use transdiff::spaces::MorreyParams;
use transdiff::synth::{band_limited, normalize_to_range, rng};
use transdiff::Grid;
use wasm_bindgen::prelude::*;

fn js_err(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

fn profile_from(name: &str) -> Result<Profile, JsValue> {
    match name {
        "stable" => Ok(Profile::Stable),
        "truncated-stable" => Ok(Profile::TruncatedStable),
        "two-exponent" => Ok(Profile::TwoExponent),
        other => Err(js_err(format!("unknown profile `{other}`"))),
    }
}

/// Radial symbol `a(k)` on `points` log-spaced wavenumbers in `[k_min, k_max]`, in 2D,
/// returned as interleaved `(k, a(k), a_stable(k))` triples.
#[wasm_bindgen]
pub fn symbol_profile(
    alpha: f64,
    delta: f64,
    profile: &str,
    k_min: f64,
    k_max: f64,
    points: usize,
) -> Result<Vec<f64>, JsValue> {
    let spec = KernelSpec {
        alpha,
        delta,
        cbar1: 1.0,
        cbar2: 1.0,
        profile: profile_from(profile)?,
        amplitude: 1.0,
    };
    let kernel = LevyKernel::new(2, &spec).map_err(js_err)?;
    if !(k_min > 0.0 && k_max > k_min) || points < 2 {
        return Err(js_err("need 0 < k_min < k_max and at least 2 points"));
    }
    let mut out = Vec::with_capacity(3 * points);
    for i in 0..points {
        let k = k_min * (k_max / k_min).powf(i as f64 / (points - 1) as f64);
        out.push(k);
        out.push(kernel.symbol_radial(k).map_err(js_err)?);
        out.push(stable_symbol_closed_form(2, alpha, k));
    }
    Ok(out)
}

/// A 2D periodic simulation stepped on demand.
#[wasm_bindgen]
pub struct Simulation {
    dynamics: Dynamics,
    theta: Vec<f64>,
    initial_sup: f64,
    time: f64,
    dt: f64,
    cell: f64,
}

#[wasm_bindgen]
impl Simulation {
    /// Random data in `[0, 1]` on an `points²` grid of side `2π`, steady random drift of the given speed.
    #[wasm_bindgen(constructor)]
    pub fn new(points: usize, alpha: f64, speed: f64, epsilon: f64, dt: f64, seed: u64) -> Result<Simulation, JsValue> {
        let grid = Grid::new(2, points, 2.0 * std::f64::consts::PI).map_err(js_err)?;
        let delta = if alpha < 1.0 { 0.5 * alpha } else { 0.5 * (1.0 + alpha) };
        let kernel = LevyKernel::fractional_laplacian(2, alpha, delta).map_err(js_err)?;
        let symbol = LevySymbol::tabulate(&kernel, grid).map_err(js_err)?;
        let morrey = MorreyParams {
            q: 6.0,
            a: 1.0,
            local: false,
        };
        let spec = DriftSpec::StreamFunction {
            max_mode: 3,
            seed,
            unsteady: false,
        };
        let scale = if speed > 0.0 { DriftScale::Speed(speed) } else { DriftScale::Raw };
        let spec = if speed > 0.0 { spec } else { DriftSpec::Zero };
        let drift = make_divfree(&spec, grid, 1e12, 2, scale, &morrey).map_err(js_err)?;
        let theta0 = normalize_to_range(&band_limited(grid, 8, 1.0, &mut rng(seed)), 0.0, 1.0);
        Ok(Simulation {
            dynamics: Dynamics::forward(&symbol, &drift, epsilon),
            initial_sup: theta0.max(),
            theta: theta0.values,
            time: 0.0,
            dt,
            cell: grid.cell_volume(),
        })
    }

    pub fn step(&mut self, steps: usize) -> Result<(), JsValue> {
        for _ in 0..steps {
            self.theta = self
                .dynamics
                .exp_midpoint_step(&self.theta, self.time, self.dt)
                .map_err(js_err)?;
            self.time += self.dt;
        }
        Ok(())
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn field(&self) -> Vec<f64> {
        self.theta.clone()
    }

    /// `[L¹, L², L^∞, initial L^∞, min]` of the current field.
    pub fn norms(&self) -> Vec<f64> {
        let l1 = self.theta.iter().map(|v| v.abs()).sum::<f64>() * self.cell;
        let l2 = (self.theta.iter().map(|v| v * v).sum::<f64>() * self.cell).sqrt();
        let sup = self.theta.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let min = self.theta.iter().copied().fold(f64::INFINITY, f64::min);
        vec![l1, l2, sup, self.initial_sup, min]
    }
}

/// Constants bundle for the molecule theorems as JSON, or the blocking condition.
#[wasm_bindgen]
pub fn constants_json(alpha: f64, delta: f64, gamma: f64, omega: f64, q: f64, mu: f64) -> Result<String, JsValue> {
    let params = ConstantParams {
        n: 2,
        alpha,
        delta,
        gamma,
        omega_exp: omega,
        q,
        mu,
        cbar1: 1.0,
        eta_prefactor: 1.0,
    };
    params.validate().map_err(js_err)?;
    let bundle = compute_constants(&params).map_err(js_err)?;
    serde_json::to_string_pretty(&bundle).map_err(js_err)
}
