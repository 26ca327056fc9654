//! Scenario execution: staged pipeline, certificates and atomic artifacts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{load_config, parse_tree, set_scalar, Check, LoadedConfig, ScenarioConfig, Theta0Spec};
use crate::drift::{make_divfree, mollify, DriftScale, DriftSpec, MollifierPair, VelocityField};
use crate::error::{invalid, Error, Result};
use crate::grid::{Field, Grid};
use crate::holder::{estimate_holder_exponent, HolderOptions, HolderReport, MoleculeFamily};
use crate::io::{csv_bytes, encode_fields, json_bytes, read_fields, ArtifactDir};
use crate::levy::{check_nondegeneracy, default_lattice, LevyKernel, LevySymbol};
use crate::molecule::{
    check_molecule, compute_constants, evaluate_bundle, make_molecule, schedule_iterations, track_deformation,
    ConstantBundle, ConstantParams, MoleculeSpec, MoleculeTrace,
};
use crate::solver::{backward_dual_solve, picard_solve, solve, NormRow, Scheme, TrajectorySolution, ViscousProblem};
use crate::spaces::{besov_seminorm, holder_norm, holder_seminorm, morrey_norm, sobolev_norm, MorreyParams};
use crate::synth::{band_limited, normalize_to_range, rng};
use crate::verify::{
    calibrate_besov, calibrate_symbol_bounds, digest_fields, verify_besov_regularity, verify_max_principle,
    verify_picard_contraction, verify_positivity, verify_stroock_varopoulos, verify_symbol_bounds, verify_transfer,
    CertSample, Certificate,
};

/// Environment variable holding the worker count.
pub const WORKERS_ENV: &str = "TRANSDIFF_WORKERS";

/// Seed offsets of the auxiliary random streams.
const BESOV_CORPUS_STREAM: u64 = 1;
const TRANSFER_STREAM: u64 = 2;

/// Picard contraction is judged on ratios of residuals above this floor.
const PICARD_FLOOR: f64 = 1e-11;

/// Worker count from the environment, else the available parallelism.
pub fn worker_count() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// Install the global rayon pool with [`worker_count`] threads; later calls are no-ops.
pub fn configure_workers() -> usize {
    let n = worker_count();
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    n
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageStatus {
    Ok,
    Failed,
    Skipped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub status: StageStatus,
    pub detail: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub r: f64,
    pub steps: usize,
    pub trace: MoleculeTrace,
}

/// Deterministic summary of one scenario run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub name: String,
    pub seed: u64,
    pub scenario_digest: String,
    pub kernel_id: String,
    pub pass: bool,
    pub stages: Vec<StageRecord>,
    pub certificates: Vec<Certificate>,
    pub norms: Vec<NormRow>,
    pub constants: Option<ConstantBundle>,
    pub traces: Vec<TraceRecord>,
    pub holder: Option<HolderReport>,
}

impl RunReport {
    pub fn certificate(&self, name: &str) -> Option<&Certificate> {
        self.certificates.iter().find(|c| c.name == name)
    }
}

/// A finished run with the data written next to the report.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub report: RunReport,
    /// Wall-clock seconds per stage, kept out of the report.
    pub timings: BTreeMap<String, f64>,
    pub config: ScenarioConfig,
    pub theta0: Option<Field>,
    pub theta_final: Option<Field>,
}

/// Certificate standing in for a check that could not be evaluated.
pub fn error_certificate(name: &str, err: &Error) -> Certificate {
    Certificate::new(name, String::new(), 0.0, vec![CertSample::new(format!("error: {err}"), 1.0, 0.0, 0.0)])
}

fn is_fatal(e: &Error) -> bool {
    matches!(e, Error::Config { .. } | Error::Invalid { .. })
}

struct Pipeline {
    stages: Vec<StageRecord>,
    timings: BTreeMap<String, f64>,
    certificates: Vec<Certificate>,
}

impl Pipeline {
    /// Run a stage; invalid parameters abort the run, other errors mark the stage failed.
    fn stage<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<Option<T>> {
        let start = Instant::now();
        let out = f(self);
        self.timings.insert(name.to_string(), start.elapsed().as_secs_f64());
        match out {
            Ok(v) => {
                self.record(name, StageStatus::Ok, None);
                Ok(Some(v))
            }
            Err(e) if is_fatal(&e) => Err(e),
            Err(e) => {
                self.record(name, StageStatus::Failed, Some(e.to_string()));
                Ok(None)
            }
        }
    }

    fn record(&mut self, name: &str, status: StageStatus, detail: Option<String>) {
        self.stages.push(StageRecord {
            name: name.to_string(),
            status,
            detail,
        });
    }

    fn skip(&mut self, name: &str, why: &str) {
        self.record(name, StageStatus::Skipped, Some(why.to_string()));
    }

    /// Push the certificate of a check, or a failing one when it errored.
    fn push(&mut self, name: &str, cert: Result<Certificate>) -> Result<()> {
        match cert {
            Ok(c) => self.certificates.push(c),
            Err(e) if is_fatal(&e) => return Err(e),
            Err(e) => self.certificates.push(error_certificate(name, &e)),
        }
        Ok(())
    }
}

fn seeded_drift(spec: &DriftSpec, seed: u64) -> DriftSpec {
    let mut s = spec.clone();
    match &mut s {
        DriftSpec::StreamFunction { seed: sd, .. } | DriftSpec::SpectralProjection { seed: sd, .. } => {
            *sd = sd.wrapping_add(seed);
        }
        _ => {}
    }
    s
}

/// The scenario drift and its Morrey norm.
fn build_drift(cfg: &ScenarioConfig, grid: Grid, horizon: f64) -> Result<(VelocityField, f64, MorreyParams)> {
    match &cfg.drift {
        None => {
            let m = MorreyParams {
                q: 2.0 * grid.n as f64 + 2.0,
                a: 1.0,
                local: false,
            };
            Ok((VelocityField::zero(grid, horizon, 2), 0.0, m))
        }
        Some(d) => {
            let spec = seeded_drift(&d.spec, cfg.seed);
            let h = d.horizon.unwrap_or(horizon);
            let mut v = make_divfree(&spec, grid, h, d.nodes, d.scale, &d.morrey)?;
            let mut norm = match (&spec, d.scale) {
                (DriftSpec::Zero, _) => Some(0.0),
                (_, DriftScale::Morrey(target)) => Some(target),
                _ => None,
            };
            if let Some(eps) = d.mollifier {
                v = mollify(&v, &MollifierPair { epsilon: eps })?;
                if !matches!(spec, DriftSpec::Zero) {
                    norm = None;
                }
            }
            let norm = match norm {
                Some(x) => x,
                None => v.morrey_norm(&d.morrey)?,
            };
            Ok((v, norm, d.morrey))
        }
    }
}

fn build_theta0(loaded: &LoadedConfig, grid: Grid) -> Result<Field> {
    let cfg = &loaded.config;
    match cfg.theta0.as_ref().ok_or_else(|| invalid("theta0", "missing"))? {
        Theta0Spec::BandLimited { max_mode, decay, range } => {
            let f = band_limited(grid, *max_mode, *decay, &mut rng(cfg.seed));
            Ok(match range {
                Some([lo, hi]) => normalize_to_range(&f, *lo, *hi),
                None => f,
            })
        }
        Theta0Spec::Constant { value } => Ok(Field::constant(grid, *value)),
        Theta0Spec::Indicator {
            center,
            radius,
            inside,
            outside,
        } => {
            if center.len() != grid.n {
                return Err(invalid("theta0.center", "needs one coordinate per dimension"));
            }
            Ok(Field::from_fn(grid, |x| {
                if grid.torus_dist(x, center) < *radius {
                    *inside
                } else {
                    *outside
                }
            }))
        }
        Theta0Spec::File { path } => {
            let fields = read_fields(&loaded.resolve(path))?;
            let f = fields.into_iter().next().ok_or_else(|| Error::Format("empty field file".into()))?;
            grid.check_same(&f.grid)?;
            Ok(f)
        }
    }
}

/// Symbol-bound certificate with constants fitted on the radial range of the lattice.
pub fn symbol_bounds_certificate(kernel: &LevyKernel, symbol: &LevySymbol, tol: f64) -> Result<Certificate> {
    let g = symbol.grid;
    let k_min = g.k0();
    let k_max = g.k0() * (g.points_per_dim / 2) as f64 * (g.n as f64).sqrt() * 1.01;
    let consts = calibrate_symbol_bounds(kernel, k_min, k_max, 256)?;
    Ok(verify_symbol_bounds(symbol, &consts, tol)
        .with_note("upper", consts.upper)
        .with_note("lower", consts.lower))
}

/// Nondegeneracy bounds on the default sample set as a certificate.
pub fn nondegeneracy_certificate(kernel: &LevyKernel, tol: f64) -> Certificate {
    let rep = check_nondegeneracy(kernel, &default_lattice(kernel.n));
    let mut samples = Vec::new();
    if let (Some(lo), Some(hi)) = (rep.near_min, rep.near_max) {
        samples.push(CertSample::relative("cbar1 <= near ratio", kernel.cbar1, lo));
        samples.push(CertSample::relative("near ratio <= cbar2", hi, kernel.cbar2));
    }
    if let (Some(lo), Some(hi)) = (rep.far_min, rep.far_max) {
        samples.push(CertSample::new("0 <= far ratio", 0.0, lo, 1.0));
        samples.push(CertSample::relative("far ratio <= cbar2", hi, kernel.cbar2));
    }
    let mut cert = Certificate::new("nondegeneracy", kernel.id(), tol, samples)
        .with_note("violations", rep.violations.len() as f64)
        .with_note("symmetric", if rep.symmetric { 1.0 } else { 0.0 });
    cert.pass = cert.pass && rep.pass;
    cert
}

fn constants_certificate(bundle: &ConstantBundle, tol: f64) -> Certificate {
    let mut samples: Vec<CertSample> = bundle
        .exponent_certificates
        .iter()
        .map(|c| CertSample::new(c.expression.clone(), c.value, 0.0, 1.0))
        .collect();
    samples.push(CertSample::relative("K <= K bound", bundle.k_value, bundle.k_bound));
    let mut cert = Certificate::new("constants", String::new(), tol, samples)
        .with_note("zeta", bundle.zeta_chosen)
        .with_note("k", bundle.k_value)
        .with_note("k_bound", bundle.k_bound)
        .with_note("beta0", bundle.beta0)
        .with_note("beta1", bundle.beta1)
        .with_note("epsilon_exp", bundle.epsilon_exp);
    cert.pass = cert.pass && bundle.exponents_negative() && bundle.k_condition();
    cert
}

fn trace_certificate(name: &str, trace: &MoleculeTrace, initial_pass: bool, tol: f64) -> Certificate {
    let mut samples = Vec::new();
    for row in &trace.rows {
        samples.push(CertSample::relative(format!("s={} concentration", row.s), row.concentration, row.concentration_bound));
        samples.push(CertSample::relative(format!("s={} sup", row.s), row.sup, row.sup_bound));
        samples.push(CertSample::relative(format!("s={} l1", row.s), row.l1, row.l1_bound));
    }
    samples.push(CertSample::relative("final l1 constant", trace.measured_constant, trace.final_constant));
    let mut cert = Certificate::new(name, String::new(), tol, samples)
        .with_note("steps", trace.rows.len() as f64)
        .with_note("stopped_by_rule", if trace.stopped_by_rule { 1.0 } else { 0.0 })
        .with_note("measured_constant", trace.measured_constant)
        .with_note("final_constant", trace.final_constant)
        .with_note("initial_molecule_ok", if initial_pass { 1.0 } else { 0.0 });
    if let Some(m) = trace.split_mismatch {
        cert = cert.with_note("split_mismatch", m);
    }
    cert.pass = cert.pass && trace.pass && initial_pass;
    cert
}

fn holder_certificate(rep: &HolderReport, opts: &HolderOptions) -> Certificate {
    let mut samples = Vec::new();
    match (rep.gamma_dual, rep.gamma_direct) {
        (Some(d), Some(g)) => {
            samples.push(CertSample::new("estimates agree", (d - g).abs(), opts.agreement, 1.0));
            samples.push(CertSample::new("dual below bound", d, rep.regime_bound, 1.0));
            samples.push(CertSample::new("direct below bound", g, rep.regime_bound, 1.0));
        }
        _ => samples.push(CertSample::new(format!("verdict {}", rep.verdict), 1.0, 0.0, 0.0)),
    }
    if let Some(r2) = rep.fit_r2 {
        samples.push(CertSample::new("fit quality", opts.min_r2, r2, 1.0));
    }
    let mut cert = Certificate::new("holder", String::new(), 0.0, samples).with_note("time", rep.time);
    cert.pass = cert.pass && rep.pass();
    cert
}

/// Run every configured stage without touching the filesystem beyond input files.
pub fn execute(loaded: &LoadedConfig) -> Result<RunOutput> {
    let cfg = &loaded.config;
    cfg.validate()?;
    let grid = Grid::new(cfg.grid.n, cfg.grid.points, cfg.grid.side_length)?;
    let kernel = LevyKernel::new(cfg.grid.n, &cfg.kernel)?;
    if let Some(s) = &cfg.solver {
        s.validate()?;
    }
    let tol = cfg.verify.as_ref().map_or(1e-6, |v| v.tol);
    let checks: Vec<Check> = cfg.verify.as_ref().map(|v| v.checks.clone()).unwrap_or_default();
    let mut p = Pipeline {
        stages: Vec::new(),
        timings: BTreeMap::new(),
        certificates: Vec::new(),
    };

    let symbol = p.stage("kernel", |p| {
        let symbol = LevySymbol::tabulate(&kernel, grid)?;
        if checks.contains(&Check::Nondegeneracy) {
            p.certificates.push(nondegeneracy_certificate(&kernel, tol));
        }
        if checks.contains(&Check::SymbolBounds) {
            let c = symbol_bounds_certificate(&kernel, &symbol, tol);
            p.push("symbol-bounds", c)?;
        }
        Ok(symbol)
    })?;

    let wants_evolution = cfg.theta0.is_some() && cfg.evolution.is_some() && cfg.solver.is_some();
    let mut evolved: Option<(ViscousProblem, TrajectorySolution)> = None;
    let mut drift_for_molecules: Option<VelocityField> = None;
    match &symbol {
        None => p.skip("evolution", "kernel stage failed"),
        Some(_) if !wants_evolution => {
            if cfg.drift.is_some() && cfg.molecule.is_some() {
                let horizon = cfg.drift.as_ref().and_then(|d| d.horizon);
                if let Some(h) = horizon {
                    drift_for_molecules = p.stage("drift", |_| Ok(build_drift(cfg, grid, h)?.0))?;
                }
            }
            p.skip("evolution", "no [theta0], [evolution] and [solver]");
        }
        Some(symbol) => {
            let evo = cfg.evolution.as_ref().expect("checked");
            let solver = cfg.solver.as_ref().expect("checked");
            evolved = p.stage("evolution", |_| {
                let (drift, norm, morrey) = build_drift(cfg, grid, evo.horizon)?;
                let theta0 = build_theta0(loaded, grid)?;
                let problem = ViscousProblem::with_drift_norm(
                    symbol.clone(),
                    drift,
                    evo.epsilon_visc,
                    theta0,
                    evo.horizon,
                    norm,
                    morrey.q,
                )?;
                let traj = solve(&problem, solver)?;
                Ok((problem, traj))
            })?;
            if let Some((pr, _)) = &evolved {
                drift_for_molecules = Some(pr.drift.clone());
            }
        }
    }

    let trajectory_checks: Vec<Check> = checks.iter().copied().filter(|c| c.needs_trajectory()).collect();
    if !trajectory_checks.is_empty() {
        match (&evolved, &symbol) {
            (Some((problem, traj)), Some(symbol)) => {
                let solver = cfg.solver.as_ref().expect("checked");
                let vcfg = cfg.verify.as_ref().expect("checked");
                p.stage("verify", |p| {
                    for check in &trajectory_checks {
                        let name = check.name();
                        let cert = match check {
                            Check::MaxPrinciple => Ok(verify_max_principle(traj, &vcfg.p_list, tol)),
                            Check::Positivity => positivity(traj, tol),
                            Check::StroockVaropoulos => stroock_varopoulos(traj.last(), symbol, tol),
                            Check::Besov => besov(traj.last(), symbol, cfg.seed, tol),
                            Check::Transfer => transfer(problem, traj, solver, cfg.seed, tol),
                            Check::PicardContraction => picard(problem, traj, solver),
                            Check::SymbolBounds | Check::Nondegeneracy => continue,
                        };
                        p.push(name, cert)?;
                    }
                    Ok(())
                })?;
            }
            _ => {
                p.skip("verify", "no trajectory");
                for c in &trajectory_checks {
                    let e = Error::Precondition("no trajectory".into());
                    p.certificates.push(error_certificate(c.name(), &e));
                }
            }
        }
    }

    let mut constants = None;
    let mut traces = Vec::new();
    if let Some(mcfg) = &cfg.molecule {
        let params = ConstantParams {
            n: grid.n,
            alpha: kernel.alpha,
            delta: kernel.delta,
            gamma: mcfg.gamma,
            omega_exp: mcfg.omega_exp,
            q: mcfg.constants.q,
            mu: mcfg.constants.mu,
            cbar1: mcfg.constants.cbar1.unwrap_or(kernel.cbar1),
            eta_prefactor: mcfg.constants.eta_prefactor,
        };
        params.validate()?;
        let bundle = p.stage("constants", |p| {
            let b = match &mcfg.constants.choice {
                Some(choice) => evaluate_bundle(&params, choice, mcfg.constants.zeta.unwrap_or(2.0)),
                None => compute_constants(&params),
            };
            let b = match b {
                Ok(b) if mcfg.constants.k_at_bound => b.clone().with_k(b.k_bound),
                Ok(b) => b,
                Err(e) => {
                    p.push("constants", Err(Error::Precondition(e.to_string())))?;
                    return Err(e);
                }
            };
            p.certificates.push(constants_certificate(&b, tol));
            Ok(b)
        })?;
        match (&bundle, &symbol) {
            (Some(bundle), Some(symbol)) => {
                p.stage("molecules", |p| {
                    for &r in &mcfg.radii {
                        let name = format!("molecule-trace r={r}");
                        match trace_one(mcfg, r, grid, &kernel, symbol, bundle, drift_for_molecules.as_ref()) {
                            Ok((trace, steps, initial_pass)) => {
                                p.certificates.push(trace_certificate(&name, &trace, initial_pass, tol));
                                traces.push(TraceRecord { r, steps, trace });
                            }
                            Err(e) => p.certificates.push(error_certificate(&name, &e)),
                        }
                    }
                    Ok(())
                })?;
            }
            _ => p.skip("molecules", "constants or kernel stage failed"),
        }
        constants = bundle;
    }

    let mut holder = None;
    if let Some(hcfg) = &cfg.holder {
        match &evolved {
            Some((problem, traj)) => {
                holder = p.stage("holder", |p| {
                    let mut family = MoleculeFamily::dyadic(grid, hcfg.gamma, hcfg.omega_exp, hcfg.zeta, hcfg.profile)?;
                    family.center_stride = hcfg.center_stride;
                    let opts = HolderOptions {
                        t0: hcfg.t0,
                        alpha: kernel.alpha,
                        delta: kernel.delta,
                        min_r2: hcfg.min_r2,
                        stability: hcfg.stability,
                        agreement: hcfg.agreement,
                    };
                    match estimate_holder_exponent(traj, &family, problem.horizon, &opts) {
                        Ok(rep) => {
                            p.certificates.push(holder_certificate(&rep, &opts));
                            Ok(rep)
                        }
                        Err(e) => {
                            p.certificates.push(error_certificate("holder", &e));
                            Err(e)
                        }
                    }
                })?;
            }
            None => {
                p.skip("holder", "no trajectory");
                let e = Error::Precondition("no trajectory".into());
                p.certificates.push(error_certificate("holder", &e));
            }
        }
    }

    let stages_ok = p.stages.iter().all(|s| s.status != StageStatus::Failed);
    let pass = stages_ok && p.certificates.iter().all(|c| c.pass);
    let (norms, theta0, theta_final) = match &evolved {
        Some((pr, traj)) => (traj.diagnostics.norms.clone(), Some(pr.theta0.clone()), Some(traj.last().clone())),
        None => (Vec::new(), None, None),
    };
    Ok(RunOutput {
        report: RunReport {
            name: cfg.name.clone(),
            seed: cfg.seed,
            scenario_digest: loaded.digest(),
            kernel_id: kernel.id(),
            pass,
            stages: p.stages,
            certificates: p.certificates,
            norms,
            constants,
            traces,
            holder,
        },
        timings: p.timings,
        config: cfg.clone(),
        theta0,
        theta_final,
    })
}

fn positivity(traj: &TrajectorySolution, tol: f64) -> Result<Certificate> {
    let f0 = &traj.fields[0];
    if f0.min() < 0.0 {
        return Err(Error::Precondition("positivity needs theta0 >= 0".into()));
    }
    verify_positivity(traj, f0.max(), tol)
}

fn stroock_varopoulos(field: &Field, symbol: &LevySymbol, tol: f64) -> Result<Certificate> {
    let mut samples = Vec::new();
    let mut notes = BTreeMap::new();
    for p in [2.0, 4.0] {
        let c = verify_stroock_varopoulos(field, symbol, p, tol)?;
        samples.extend(c.samples.into_iter().map(|mut s| {
            s.label = format!("p={p} {}", s.label);
            s
        }));
        if let Some(v) = c.notes.get("c") {
            notes.insert(format!("c_p{p}"), *v);
        }
    }
    let mut out = Certificate::new("stroock-varopoulos", digest_fields([field]), tol, samples);
    out.notes = notes;
    Ok(out)
}

fn besov(field: &Field, symbol: &LevySymbol, seed: u64, tol: f64) -> Result<Certificate> {
    let grid = field.grid;
    let mut r = rng(seed.wrapping_add(BESOV_CORPUS_STREAM));
    let corpus: Vec<Field> = (0..8)
        .map(|i| band_limited(grid, 2 + i as i64, 1.0 + 0.25 * i as f64, &mut r))
        .collect();
    let consts = calibrate_besov(&corpus, symbol, 2.0)?;
    let mut c = verify_besov_regularity(field, symbol, &consts, tol)?;
    c.name = "besov".into();
    Ok(c)
}

fn transfer(
    problem: &ViscousProblem,
    traj: &TrajectorySolution,
    solver: &crate::solver::SolverConfig,
    seed: u64,
    tol: f64,
) -> Result<Certificate> {
    let grid = problem.theta0.grid;
    let psi0 = band_limited(grid, 4, 1.5, &mut rng(seed.wrapping_add(TRANSFER_STREAM)));
    let back = backward_dual_solve(&problem.drift, &problem.symbol, &psi0, problem.horizon, problem.epsilon_visc, solver)?;
    verify_transfer(traj, &back, tol)
}

fn picard(problem: &ViscousProblem, traj: &TrajectorySolution, solver: &crate::solver::SolverConfig) -> Result<Certificate> {
    let c = if solver.scheme == Scheme::PicardDuhamel {
        verify_picard_contraction(traj, 0.5, 0.05, PICARD_FLOOR)
    } else {
        let mut s = solver.clone();
        s.scheme = Scheme::PicardDuhamel;
        verify_picard_contraction(&picard_solve(problem, &s)?, 0.5, 0.05, PICARD_FLOOR)
    };
    if c.samples.is_empty() {
        return Err(Error::Precondition("no Picard residuals above the floor".into()));
    }
    Ok(c)
}

fn trace_one(
    mcfg: &crate::config::MoleculeLabConfig,
    r: f64,
    grid: Grid,
    kernel: &LevyKernel,
    symbol: &LevySymbol,
    bundle: &ConstantBundle,
    drift: Option<&VelocityField>,
) -> Result<(MoleculeTrace, usize, bool)> {
    let spec = MoleculeSpec {
        r,
        x0: mcfg.x0.clone(),
        gamma: mcfg.gamma,
        omega_exp: mcfg.omega_exp,
        zeta: bundle.zeta_chosen,
        profile: mcfg.profile,
    };
    let molecule = make_molecule(&spec, grid)?;
    let initial = check_molecule(&molecule).pass;
    let schedule = schedule_iterations(r, kernel.alpha, mcfg.eps_step, mcfg.t0, bundle.zeta_chosen, bundle.k_value)?;
    let zero;
    let v = match drift {
        Some(v) => v,
        None => {
            zero = VelocityField::zero(grid, schedule.final_time().max(mcfg.t0), 2);
            &zero
        }
    };
    let trace = track_deformation(&molecule, v, symbol, kernel, bundle, &schedule, &mcfg.trace)?;
    Ok((trace, schedule.times.len(), initial))
}

fn fmt_num(x: f64) -> String {
    format!("{x:.17e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_num).unwrap_or_default()
}

/// Write the report, timings, norms, traces and fields into `dir`, replacing it atomically.
pub fn write_artifacts(out: &RunOutput, dir: &Path) -> Result<PathBuf> {
    let staged = ArtifactDir::new(dir)?;
    stage_artifacts(out, &staged, "")?;
    staged.commit()
}

fn stage_artifacts(out: &RunOutput, staged: &ArtifactDir, prefix: &str) -> Result<()> {
    let name = |f: &str| format!("{prefix}{f}");
    staged.write(&name("report.json"), &json_bytes(&out.report)?)?;
    staged.write(&name("timings.json"), &json_bytes(&out.timings)?)?;
    staged.write(&name("config.json"), &json_bytes(&out.config)?)?;
    if !out.report.norms.is_empty() {
        let rows: Vec<Vec<String>> = out
            .report
            .norms
            .iter()
            .map(|r| vec![fmt_num(r.time), fmt_num(r.l1), fmt_num(r.l2), fmt_num(r.l4), fmt_num(r.linf)])
            .collect();
        staged.write(&name("norms.csv"), &csv_bytes(&["time", "l1", "l2", "l4", "linf"], &rows)?)?;
    }
    for t in &out.report.traces {
        staged.write(&name(&format!("trace_r{}.csv", t.r)), t.trace.to_csv()?.as_bytes())?;
    }
    if let (Some(a), Some(b)) = (&out.theta0, &out.theta_final) {
        staged.write(&name("theta.bin"), &encode_fields(&[a.clone(), b.clone()])?)?;
    }
    Ok(())
}

/// Load, execute and write artifacts for a scenario file.
pub fn run(path: &Path) -> Result<(RunOutput, PathBuf)> {
    let loaded = load_config(path)?;
    let out = execute(&loaded)?;
    let dir = write_artifacts(&out, &loaded.output_dir())?;
    Ok((out, dir))
}

/// One sweep point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub report: RunReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub axis: String,
    pub points: Vec<SweepPoint>,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnDoc {
    pub name: String,
    pub description: String,
}

/// Comma-separated numbers.
pub fn parse_values(s: &str) -> Result<Vec<f64>> {
    let vals: Vec<f64> = s
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| invalid("values", format!("`{t}` is not a number"))))
        .collect::<Result<_>>()?;
    if vals.is_empty() {
        return Err(invalid("values", "must not be empty"));
    }
    Ok(vals)
}

/// Combined table of a sweep: one row per value, worst margin per certificate.
pub fn sweep_table(s: &SweepReport) -> (Vec<ColumnDoc>, Vec<Vec<String>>) {
    let mut cert_names: Vec<String> = Vec::new();
    for p in &s.points {
        for c in &p.report.certificates {
            if !cert_names.contains(&c.name) {
                cert_names.push(c.name.clone());
            }
        }
    }
    let doc = |n: &str, d: &str| ColumnDoc {
        name: n.to_string(),
        description: d.to_string(),
    };
    let mut cols = vec![
        doc(&s.axis, "swept value"),
        doc("pass", "1 when every stage and certificate passed"),
        doc("failed_stages", "names of failed stages separated by spaces"),
        doc("final_l1", "L1 norm at the final time"),
        doc("final_l2", "L2 norm at the final time"),
        doc("final_linf", "grid sup norm at the final time"),
        doc("gamma_dual", "Hölder exponent from molecule pairings"),
        doc("gamma_direct", "Hölder exponent from two-resolution stability"),
    ];
    for n in &cert_names {
        cols.push(doc(&format!("margin:{n}"), "worst normalized margin of the certificate"));
    }
    let rows = s
        .points
        .iter()
        .map(|p| {
            let r = &p.report;
            let last = r.norms.last();
            let mut row = vec![
                fmt_num(p.value),
                (r.pass as u8).to_string(),
                r.stages
                    .iter()
                    .filter(|st| st.status == StageStatus::Failed)
                    .map(|st| st.name.as_str())
                    .collect::<Vec<_>>()
                    .join(" "),
                fmt_opt(last.map(|n| n.l1)),
                fmt_opt(last.map(|n| n.l2)),
                fmt_opt(last.map(|n| n.linf)),
                fmt_opt(r.holder.as_ref().and_then(|h| h.gamma_dual)),
                fmt_opt(r.holder.as_ref().and_then(|h| h.gamma_direct)),
            ];
            for n in &cert_names {
                row.push(fmt_opt(r.certificate(n).map(|c| c.worst_margin())));
            }
            row
        })
        .collect();
    (cols, rows)
}

/// Run one scenario per value of a dotted config path on a bounded worker pool.
pub fn sweep(path: &Path, axis: &str, values: &[f64]) -> Result<(SweepReport, PathBuf)> {
    if values.is_empty() {
        return Err(invalid("values", "must not be empty"));
    }
    let loaded = load_config(path)?;
    let mut variants = Vec::with_capacity(values.len());
    for &v in values {
        let mut tree = loaded.tree.clone();
        set_scalar(&mut tree, axis, v)?;
        let config = parse_tree(&tree)?;
        config.validate()?;
        variants.push(LoadedConfig {
            config,
            base_dir: loaded.base_dir.clone(),
            tree,
        });
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count())
        .build()
        .map_err(|e| Error::Precondition(e.to_string()))?;
    let outputs: Vec<Result<RunOutput>> = pool.install(|| variants.par_iter().map(execute).collect());
    let outputs: Vec<RunOutput> = outputs.into_iter().collect::<Result<_>>()?;

    let base = loaded.output_dir();
    let file = base.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let dir = base.with_file_name(format!("{file}-sweep-{axis}"));
    let staged = ArtifactDir::new(&dir)?;
    let mut points = Vec::with_capacity(outputs.len());
    for (i, (out, &v)) in outputs.iter().zip(values).enumerate() {
        stage_artifacts(out, &staged, &format!("point-{i:03}/"))?;
        points.push(SweepPoint {
            value: v,
            report: out.report.clone(),
        });
    }
    let report = SweepReport {
        axis: axis.to_string(),
        pass: points.iter().all(|p| p.report.pass),
        points,
    };
    let (cols, rows) = sweep_table(&report);
    let header: Vec<&str> = cols.iter().map(|c| c.name.as_str()).collect();
    staged.write("sweep.csv", &csv_bytes(&header, &rows)?)?;
    staged.write("columns.json", &json_bytes(&cols)?)?;
    staged.write("sweep.json", &json_bytes(&report)?)?;
    let dir = staged.commit()?;
    Ok((report, dir))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelReport {
    pub kernel_id: String,
    pub certificates: Vec<Certificate>,
    pub pass: bool,
}

/// Nondegeneracy and symbol bounds of a scenario's kernel.
pub fn check_kernel(path: &Path) -> Result<KernelReport> {
    let loaded = load_config(path)?;
    let cfg = &loaded.config;
    let grid = Grid::new(cfg.grid.n, cfg.grid.points, cfg.grid.side_length)?;
    let kernel = LevyKernel::new(cfg.grid.n, &cfg.kernel)?;
    let tol = cfg.verify.as_ref().map_or(1e-6, |v| v.tol);
    let mut certificates = vec![nondegeneracy_certificate(&kernel, tol)];
    let sb = LevySymbol::tabulate(&kernel, grid).and_then(|s| symbol_bounds_certificate(&kernel, &s, tol));
    certificates.push(match sb {
        Ok(c) => c,
        Err(e) if is_fatal(&e) => return Err(e),
        Err(e) => error_certificate("symbol-bounds", &e),
    });
    Ok(KernelReport {
        kernel_id: kernel.id(),
        pass: certificates.iter().all(|c| c.pass),
        certificates,
    })
}

/// One requested norm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NormSpec {
    Lp { p: f64 },
    Holder { gamma: f64 },
    HolderSeminorm { gamma: f64 },
    Besov { s: f64, p: f64 },
    Sobolev { s: f64, p: f64 },
    Morrey { q: f64, a: f64 },
}

impl NormSpec {
    pub fn label(&self) -> String {
        match self {
            NormSpec::Lp { p } if p.is_infinite() => "linf".into(),
            NormSpec::Lp { p } if *p == 1.0 => "l1".into(),
            NormSpec::Lp { p } if *p == 2.0 => "l2".into(),
            NormSpec::Lp { p } => format!("lp:{p}"),
            NormSpec::Holder { gamma } => format!("holder:{gamma}"),
            NormSpec::HolderSeminorm { gamma } => format!("holder-semi:{gamma}"),
            NormSpec::Besov { s, p } => format!("besov:{s}:{p}"),
            NormSpec::Sobolev { s, p } => format!("sobolev:{s}:{p}"),
            NormSpec::Morrey { q, a } => format!("morrey:{q}:{a}"),
        }
    }

    pub fn evaluate(&self, f: &Field) -> Result<f64> {
        match *self {
            NormSpec::Lp { p } => Ok(f.lp_norm(p)),
            NormSpec::Holder { gamma } => holder_norm(f, gamma),
            NormSpec::HolderSeminorm { gamma } => holder_seminorm(f, gamma),
            NormSpec::Besov { s, p } => besov_seminorm(f, s, p),
            NormSpec::Sobolev { s, p } => sobolev_norm(f, s, p),
            NormSpec::Morrey { q, a } => morrey_norm(f, &MorreyParams { q, a, local: false }),
        }
    }
}

/// Parse `l1,l2,linf,lp:4,holder:0.5,holder-semi:0.5,besov:0.5:2,sobolev:1:2,morrey:4:3`.
pub fn parse_norm_specs(s: &str) -> Result<Vec<NormSpec>> {
    let num = |t: &str, what: &str| -> Result<f64> {
        t.parse::<f64>()
            .map_err(|_| invalid("spec", format!("`{t}` is not a number in `{what}`")))
    };
    let mut out = Vec::new();
    for item in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let parts: Vec<&str> = item.split(':').collect();
        let spec = match parts.as_slice() {
            ["l1"] => NormSpec::Lp { p: 1.0 },
            ["l2"] => NormSpec::Lp { p: 2.0 },
            ["linf"] => NormSpec::Lp { p: f64::INFINITY },
            ["lp", p] => NormSpec::Lp { p: num(p, item)? },
            ["holder", g] => NormSpec::Holder { gamma: num(g, item)? },
            ["holder-semi", g] => NormSpec::HolderSeminorm { gamma: num(g, item)? },
            ["besov", s, p] => NormSpec::Besov {
                s: num(s, item)?,
                p: num(p, item)?,
            },
            ["sobolev", s, p] => NormSpec::Sobolev {
                s: num(s, item)?,
                p: num(p, item)?,
            },
            ["morrey", q, a] => NormSpec::Morrey {
                q: num(q, item)?,
                a: num(a, item)?,
            },
            _ => return Err(invalid("spec", format!("unknown norm `{item}`"))),
        };
        out.push(spec);
    }
    if out.is_empty() {
        return Err(invalid("spec", "must name at least one norm"));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldNorms {
    pub index: usize,
    pub values: BTreeMap<String, f64>,
}

/// Evaluate norms of every field stored in a field file.
pub fn field_norms(path: &Path, spec: &str) -> Result<Vec<FieldNorms>> {
    let specs = parse_norm_specs(spec)?;
    let fields = read_fields(path)?;
    fields
        .iter()
        .enumerate()
        .map(|(index, f)| {
            let values = specs
                .iter()
                .map(|s| Ok((s.label(), s.evaluate(f)?)))
                .collect::<Result<BTreeMap<_, _>>>()?;
            Ok(FieldNorms { index, values })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn norm_spec_parsing() {
        let s = parse_norm_specs("l1, linf,lp:3,holder:0.5,besov:0.5:2,sobolev:1:2,morrey:4:3").unwrap();
        assert_eq!(s.len(), 7);
        assert_eq!(s[1].label(), "linf");
        assert!(parse_norm_specs("").is_err());
        assert!(parse_norm_specs("holder").is_err());
        assert!(parse_norm_specs("lp:x").is_err());
    }

    #[test]
    fn value_list_parsing() {
        assert_eq!(parse_values("1, 2.5,3").unwrap(), vec![1.0, 2.5, 3.0]);
        assert!(parse_values(" , ").is_err());
        assert!(parse_values("1,a").is_err());
    }
}
