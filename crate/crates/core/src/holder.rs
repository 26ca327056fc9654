//! Hölder regularity of solutions, measured directly and through pairings with molecules.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{Field, Grid, Spectral};
use crate::levy::linear_fit;
use crate::molecule::{l1_constant, make_molecule, Molecule, MoleculeProfile, MoleculeSpec};
use crate::solver::TrajectorySolution;
use crate::spaces::{holder_from_profile, increment_profile};
use crate::verify::{digest_fields, CertSample, Certificate};

/// Molecules on a dyadic scale ladder, centered on a subsample of the grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoleculeFamily {
    pub grid: Grid,
    /// `r_j = 2^{−j}`, largest first.
    pub scales: Vec<f64>,
    /// Centers are the grid points whose indices are multiples of the stride.
    pub center_stride: usize,
    pub gamma: f64,
    pub omega_exp: f64,
    pub zeta: f64,
    pub profile: MoleculeProfile,
}

impl MoleculeFamily {
    /// Every dyadic `r` with `4h <= ζr <= L/6`.
    pub fn dyadic(grid: Grid, gamma: f64, omega_exp: f64, zeta: f64, profile: MoleculeProfile) -> Result<Self> {
        let h = grid.spacing();
        let scales: Vec<f64> = (0..60)
            .map(|j| 2f64.powi(-j))
            .filter(|r| zeta * r >= 4.0 * h * (1.0 - 1e-12) && zeta * r <= grid.side_length / 6.0)
            .collect();
        if scales.len() < 2 {
            return Err(invalid("family.scales", "grid resolves fewer than two dyadic molecule scales"));
        }
        Ok(Self {
            grid,
            scales,
            center_stride: 4,
            gamma,
            omega_exp,
            zeta,
            profile,
        })
    }

    pub fn centers(&self) -> Vec<usize> {
        let s = self.center_stride.max(1);
        (0..self.grid.len())
            .filter(|&i| self.grid.unravel(i)[..self.grid.n].iter().all(|c| c % s == 0))
            .collect()
    }

    /// Member of scale `r` centered at grid point `center`.
    pub fn member(&self, r: f64, center: usize) -> Result<Molecule> {
        let x0 = self.grid.coords(center)[..self.grid.n].to_vec();
        make_molecule(
            &MoleculeSpec {
                r,
                x0,
                gamma: self.gamma,
                omega_exp: self.omega_exp,
                zeta: self.zeta,
                profile: self.profile,
            },
            self.grid,
        )
    }
}

/// `∫θψ` as a grid sum.
pub fn duality_pairing(theta: &Field, m: &Molecule) -> Result<f64> {
    theta.grid.check_same(&m.field.grid)?;
    theta.inner(&m.field)
}

/// `⟨θ, ψ(· − y)⟩` for every grid point `y`, where `ψ` is centered at the origin.
pub fn correlation_pairings(theta: &Field, psi_at_origin: &Field) -> Result<Vec<f64>> {
    theta.grid.check_same(&psi_at_origin.grid)?;
    let s = Spectral::new(theta.grid);
    let a = s.forward(&theta.values);
    let b = s.forward(&psi_at_origin.values);
    let prod: Vec<Complex64> = a.iter().zip(&b).map(|(x, y)| x * y.conj()).collect();
    let cell = theta.grid.cell_volume();
    Ok(s.inverse(prod).into_iter().map(|v| v * cell).collect())
}

/// `sup_y |⟨θ, ψ_{r,y}⟩|` over the family centers, for every scale.
pub fn sup_pairings(theta: &Field, family: &MoleculeFamily) -> Result<Vec<f64>> {
    let centers = family.centers();
    family
        .scales
        .iter()
        .map(|&r| {
            let m = family.member(r, 0)?;
            let c = correlation_pairings(theta, &m.field)?;
            Ok(centers.iter().map(|&i| c[i].abs()).fold(0.0, f64::max))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HolderOptions {
    /// Earliest time at which regularity is claimed.
    pub t0: f64,
    pub alpha: f64,
    pub delta: f64,
    /// Largest admissible residual for the pairing fit.
    #[serde(default = "default_r2")]
    pub min_r2: f64,
    /// Relative agreement demanded between the two resolutions.
    #[serde(default = "default_stability")]
    pub stability: f64,
    /// Agreement demanded between the two estimates.
    #[serde(default = "default_agreement")]
    pub agreement: f64,
}

fn default_r2() -> f64 {
    0.9
}

fn default_stability() -> f64 {
    0.1
}

fn default_agreement() -> f64 {
    0.15
}

impl HolderOptions {
    pub fn new(t0: f64, alpha: f64, delta: f64) -> Self {
        Self {
            t0,
            alpha,
            delta,
            min_r2: default_r2(),
            stability: default_stability(),
            agreement: default_agreement(),
        }
    }

    /// `δ` for `α < 1`, `2 − α` for `α > 1`.
    pub fn regime_bound(&self) -> f64 {
        if self.alpha < 1.0 {
            self.delta
        } else {
            2.0 - self.alpha
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub gamma: f64,
    pub fine: f64,
    pub coarse: f64,
    pub stable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolderReport {
    pub gamma_dual: Option<f64>,
    pub gamma_direct: Option<f64>,
    pub fit_r2: Option<f64>,
    pub regime_bound: f64,
    /// `consistent`, `inconsistent`, `flat`, `noisy` or `unresolved`.
    pub verdict: String,
    pub time: f64,
    pub scales: Vec<f64>,
    pub pairings: Vec<f64>,
    pub probe: Vec<ProbeRow>,
}

impl HolderReport {
    pub fn pass(&self) -> bool {
        self.verdict == "consistent"
    }
}

/// Every other grid point in each direction.
pub fn downsample(field: &Field) -> Result<Field> {
    let g = field.grid;
    if g.points_per_dim % 2 != 0 || g.points_per_dim < 8 {
        return Err(Error::Resolution("downsampling needs an even grid of at least 8 points".into()));
    }
    let coarse = Grid::new(g.n, g.points_per_dim / 2, g.side_length)?;
    let values = (0..coarse.len())
        .map(|i| {
            let c = coarse.unravel(i);
            let fine: Vec<usize> = c[..g.n].iter().map(|x| 2 * x).collect();
            field.values[g.ravel(&fine)]
        })
        .collect();
    Ok(Field {
        grid: coarse,
        values,
        time: field.time,
    })
}

/// Probe exponents `0.02, 0.04, …, 0.98`.
pub fn gamma_probe_grid() -> Vec<f64> {
    (1..50).map(|j| j as f64 * 0.02).collect()
}

/// Largest `γ` below which the Hölder norm agrees between the grid and its 2× coarsening.
pub fn direct_holder_exponent(field: &Field, stability: f64) -> Result<(Option<f64>, Vec<ProbeRow>)> {
    let coarse_field = downsample(field)?;
    let fine = increment_profile(field);
    let coarse = increment_profile(&coarse_field);
    let (sup_f, sup_c) = (field.lp_norm(f64::INFINITY), coarse_field.lp_norm(f64::INFINITY));
    let mut rows = Vec::new();
    let mut best = None;
    let mut contiguous = true;
    for gamma in gamma_probe_grid() {
        let f = sup_f + holder_from_profile(&fine, gamma);
        let c = sup_c + holder_from_profile(&coarse, gamma);
        let stable = f > 0.0 && c > 0.0 && (f / c - 1.0).abs() <= stability;
        if stable && contiguous {
            best = Some(gamma);
        }
        contiguous &= stable;
        rows.push(ProbeRow {
            gamma,
            fine: f,
            coarse: c,
            stable,
        });
    }
    Ok((best, rows))
}

/// Field of the trajectory recorded at time `t`.
pub fn snapshot_at(traj: &TrajectorySolution, t: f64) -> Result<&Field> {
    let (i, dt) = traj
        .times
        .iter()
        .enumerate()
        .map(|(i, s)| (i, (s - t).abs()))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or_else(|| invalid("trajectory", "empty trajectory"))?;
    if dt > 1e-9 * t.abs().max(1.0) {
        return Err(invalid("holder.t", format!("no snapshot at t = {t}")));
    }
    Ok(&traj.fields[i])
}

/// Dual exponent from the decay of the sup pairings and direct exponent from two-resolution
/// stability, compared with each other and with the admissible range.
pub fn estimate_holder_exponent(
    traj: &TrajectorySolution,
    family: &MoleculeFamily,
    t: f64,
    opts: &HolderOptions,
) -> Result<HolderReport> {
    if !(opts.t0 > 0.0) {
        return Err(invalid("holder.t0", "must be positive"));
    }
    if t < opts.t0 {
        return Err(Error::Precondition(format!("probe time {t} precedes T0 = {}", opts.t0)));
    }
    let theta = snapshot_at(traj, t)?;
    holder_report(theta, family, t, opts)
}

/// The report of [`estimate_holder_exponent`] for a single field.
pub fn holder_report(theta: &Field, family: &MoleculeFamily, t: f64, opts: &HolderOptions) -> Result<HolderReport> {
    theta.grid.check_same(&family.grid)?;
    let pairings = sup_pairings(theta, family)?;
    let theta_sup = theta.lp_norm(f64::INFINITY);
    let l1_scale = l1_constant(family.grid.n, family.omega_exp);
    let flat = pairings
        .iter()
        .zip(&family.scales)
        .all(|(p, r)| *p <= 1e-12 * theta_sup.max(1e-300) * l1_scale * (family.zeta * r).powf(-family.gamma));
    let regime_bound = opts.regime_bound();
    let (gamma_direct, probe) = direct_holder_exponent(theta, opts.stability)?;
    let mut report = HolderReport {
        gamma_dual: None,
        gamma_direct,
        fit_r2: None,
        regime_bound,
        verdict: String::new(),
        time: t,
        scales: family.scales.clone(),
        pairings: pairings.clone(),
        probe,
    };
    if flat {
        report.verdict = "flat".into();
        return Ok(report);
    }
    let pts: Vec<(f64, f64)> = family
        .scales
        .iter()
        .zip(&pairings)
        .filter(|(_, p)| **p > 0.0)
        // undo the `(ζr)^{−γ}` amplitude of the members so that the slope itself estimates γ
        .map(|(r, p)| {
            let l = (family.zeta * r).ln();
            (l, p.ln() + family.gamma * l)
        })
        .collect();
    if pts.len() < 2 {
        report.verdict = "noisy".into();
        return Ok(report);
    }
    let (slope, _, r2) = linear_fit(&pts);
    let r2 = if pts.len() == 2 { 1.0 } else { r2 };
    report.fit_r2 = Some(r2);
    if r2 < opts.min_r2 {
        report.verdict = "noisy".into();
        return Ok(report);
    }
    let gd = slope;
    report.gamma_dual = Some(gd);
    report.verdict = match gamma_direct {
        None => "unresolved".into(),
        Some(gdir) => {
            let agree = (gd - gdir).abs() <= opts.agreement;
            let in_range = |g: f64| (0.0..regime_bound).contains(&g);
            if agree && in_range(gd) && in_range(gdir) {
                "consistent".into()
            } else {
                "inconsistent".into()
            }
        }
    };
    Ok(report)
}

/// `|⟨θ(t), ψ₀⟩| <= ‖θ₀‖_{L^∞}‖ψ(t)‖_{L¹}` for a molecule evolved by the dual flow.
pub fn pairing_chain(theta0: &Field, theta_t: &Field, psi0: &Field, psi_t: &Field, tol: f64) -> Result<Certificate> {
    let lhs = theta_t.inner(psi0)?.abs();
    let rhs = theta0.lp_norm(f64::INFINITY) * psi_t.lp_norm(1.0);
    let sample = CertSample::new("pairing <= sup(theta0) l1(psi_t)", lhs, rhs, rhs.max(f64::MIN_POSITIVE));
    Ok(Certificate::new(
        "pairing_chain",
        digest_fields([theta0, theta_t, psi0, psi_t]),
        tol,
        vec![sample],
    ))
}

/// `|⟨θ(t), ψ⟩| <= ‖θ₀‖_{L^∞} C (ζr)^{−γ}` for a molecule with `r >= 1`.
pub fn big_molecule_bound(theta0: &Field, theta_t: &Field, m: &Molecule, tol: f64) -> Result<Certificate> {
    if m.is_small() {
        return Err(Error::Precondition("the maximum-principle shortcut needs r >= 1".into()));
    }
    let lhs = duality_pairing(theta_t, m)?.abs();
    let c = l1_constant(m.field.grid.n, m.omega_exp);
    let rhs = theta0.lp_norm(f64::INFINITY) * c * (m.zeta * m.r).powf(-m.gamma);
    Ok(Certificate::new(
        "big_molecule_pairing",
        digest_fields([theta0, theta_t, &m.field]),
        tol,
        vec![CertSample::new("pairing <= sup(theta0) C r^-gamma", lhs, rhs, rhs)],
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn correlation_matches_direct_pairing() {
        let g = Grid::new(2, 64, 2.0).unwrap();
        let fam = MoleculeFamily::dyadic(g, 0.2, 0.5, 2.0, MoleculeProfile::Dipole).unwrap();
        let theta = Field::from_fn(g, |x| (3.0 * x[0]).sin() + (x[1] * x[0]).cos());
        let r = fam.scales[0];
        let c = correlation_pairings(&theta, &fam.member(r, 0).unwrap().field).unwrap();
        for idx in [0, 37, 500, 4095] {
            let direct = duality_pairing(&theta, &fam.member(r, idx).unwrap()).unwrap();
            assert!((c[idx] - direct).abs() <= 1e-12 * (1.0 + direct.abs()), "{idx}");
        }
    }

    #[test]
    fn constant_field_is_flat() {
        let g = Grid::new(2, 64, 2.0).unwrap();
        let fam = MoleculeFamily::dyadic(g, 0.2, 0.5, 2.0, MoleculeProfile::Difference).unwrap();
        let r = holder_report(&Field::constant(g, 3.0), &fam, 1.0, &HolderOptions::new(0.5, 0.8, 0.6)).unwrap();
        assert_eq!(r.verdict, "flat");
        assert!(r.gamma_dual.is_none());
    }
}
