//! Periodic grids, sampled fields and the spectral transform.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Uniform periodic grid on the torus `[0, L)^n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub n: usize,
    pub points_per_dim: usize,
    pub side_length: f64,
}

impl Grid {
    pub fn new(n: usize, points_per_dim: usize, side_length: f64) -> Result<Self> {
        if !(1..=3).contains(&n) {
            return Err(invalid("grid.n", "dimension must be 1, 2 or 3"));
        }
        if points_per_dim < 8 || !points_per_dim.is_power_of_two() {
            return Err(invalid("grid.points_per_dim", "must be a power of two >= 8"));
        }
        if !(side_length > 0.0 && side_length.is_finite()) {
            return Err(invalid("grid.side_length", "must be positive"));
        }
        Ok(Self {
            n,
            points_per_dim,
            side_length,
        })
    }

    pub fn len(&self) -> usize {
        self.points_per_dim.pow(self.n as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self) -> f64 {
        self.side_length / self.points_per_dim as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.n as i32)
    }

    pub fn volume(&self) -> f64 {
        self.side_length.powi(self.n as i32)
    }

    /// Fundamental wavenumber `2π/L`.
    pub fn k0(&self) -> f64 {
        2.0 * PI / self.side_length
    }

    /// Multi-index of a flat index, last axis fastest.
    pub fn unravel(&self, mut idx: usize) -> [usize; 3] {
        let np = self.points_per_dim;
        let mut out = [0usize; 3];
        for a in (0..self.n).rev() {
            out[a] = idx % np;
            idx /= np;
        }
        out
    }

    pub fn ravel(&self, ix: &[usize]) -> usize {
        let np = self.points_per_dim;
        ix.iter().take(self.n).fold(0, |acc, &i| acc * np + (i % np))
    }

    /// Flat index of a signed, wrapped multi-index.
    pub fn ravel_wrapped(&self, ix: &[i64]) -> usize {
        let np = self.points_per_dim as i64;
        ix.iter()
            .take(self.n)
            .fold(0usize, |acc, &i| acc * np as usize + i.rem_euclid(np) as usize)
    }

    pub fn coords(&self, idx: usize) -> [f64; 3] {
        let ix = self.unravel(idx);
        let h = self.spacing();
        let mut x = [0.0; 3];
        for a in 0..self.n {
            x[a] = ix[a] as f64 * h;
        }
        x
    }

    /// Signed integer frequency of a DFT index along one axis.
    pub fn signed_mode(&self, i: usize) -> i64 {
        let np = self.points_per_dim;
        if i <= np / 2 {
            i as i64
        } else {
            i as i64 - np as i64
        }
    }

    pub fn modes(&self, idx: usize) -> [i64; 3] {
        let ix = self.unravel(idx);
        let mut m = [0i64; 3];
        for a in 0..self.n {
            m[a] = self.signed_mode(ix[a]);
        }
        m
    }

    /// Wrapped displacement `x - y` on the torus, componentwise in `[-L/2, L/2)`.
    pub fn torus_delta(&self, x: &[f64], y: &[f64]) -> [f64; 3] {
        let l = self.side_length;
        let mut d = [0.0; 3];
        for a in 0..self.n {
            let mut v = (x[a] - y[a]).rem_euclid(l);
            if v >= 0.5 * l {
                v -= l;
            }
            d[a] = v;
        }
        d
    }

    pub fn torus_dist(&self, x: &[f64], y: &[f64]) -> f64 {
        let d = self.torus_delta(x, y);
        d.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn check_same(&self, other: &Grid) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch(format!("{self:?} vs {other:?}")));
        }
        Ok(())
    }
}

/// Real scalar field sampled on a grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Field {
    pub grid: Grid,
    pub values: Vec<f64>,
    #[serde(default)]
    pub time: Option<f64>,
}

impl Field {
    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len()],
            time: None,
        }
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.len()],
            time: None,
        }
    }

    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for a grid of {}",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("field.values", "non-finite sample"));
        }
        Ok(Self {
            grid,
            values,
            time: None,
        })
    }

    pub fn from_fn(grid: Grid, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..grid.len())
            .map(|i| {
                let x = grid.coords(i);
                f(&x[..grid.n])
            })
            .collect();
        Self {
            grid,
            values,
            time: None,
        }
    }

    pub fn with_time(mut self, t: f64) -> Self {
        self.time = Some(t);
        self
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
            time: self.time,
        }
    }

    pub fn zip_map(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.grid.check_same(&other.grid)?;
        Ok(Self {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            time: self.time,
        })
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    pub fn axpy(&self, c: f64, other: &Field) -> Result<Self> {
        self.zip_map(other, |a, b| a + c * b)
    }

    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Grid `L^p` norm with cell-volume weights; `p = ∞` is the grid maximum.
    pub fn lp_norm(&self, p: f64) -> f64 {
        lp_norm(&self.values, p, self.grid.cell_volume())
    }

    /// `∫ f g dx` by grid summation.
    pub fn inner(&self, other: &Field) -> Result<f64> {
        self.grid.check_same(&other.grid)?;
        Ok(dot(&self.values, &other.values) * self.grid.cell_volume())
    }
}

pub fn lp_norm(values: &[f64], p: f64, cell: f64) -> f64 {
    if p.is_infinite() {
        values.iter().fold(0.0, |m, v| m.max(v.abs()))
    } else if p == 1.0 {
        values.iter().map(|v| v.abs()).sum::<f64>() * cell
    } else if p == 2.0 {
        (values.iter().map(|v| v * v).sum::<f64>() * cell).sqrt()
    } else {
        (values.iter().map(|v| v.abs().powf(p)).sum::<f64>() * cell).powf(1.0 / p)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

type Plan = Arc<dyn Fft<f64>>;

thread_local! {
    static PLANS: RefCell<(FftPlanner<f64>, HashMap<(usize, bool), Plan>)> =
        RefCell::new((FftPlanner::new(), HashMap::new()));
}

fn plan(len: usize, inverse: bool) -> Plan {
    PLANS.with(|cell| {
        let mut guard = cell.borrow_mut();
        let (planner, cache) = &mut *guard;
        cache
            .entry((len, inverse))
            .or_insert_with(|| {
                if inverse {
                    planner.plan_fft_inverse(len)
                } else {
                    planner.plan_fft_forward(len)
                }
            })
            .clone()
    })
}

/// Spectral toolkit for one grid: transforms, wavevectors, masks.
#[derive(Clone, Debug)]
pub struct Spectral {
    pub grid: Grid,
    /// Wavevector components, `k[a][idx]`.
    pub k: Vec<Vec<f64>>,
    pub k2: Vec<f64>,
    /// Integer `|m|^2` of each mode.
    pub msq: Vec<u64>,
    /// Two-thirds truncation mask.
    pub dealias: Vec<bool>,
    /// Modes touching the unpaired Nyquist frequency.
    pub nyquist: Vec<bool>,
}

impl Spectral {
    pub fn new(grid: Grid) -> Self {
        let len = grid.len();
        let k0 = grid.k0();
        let cut = grid.points_per_dim as i64 / 3;
        let mut k = vec![vec![0.0; len]; grid.n];
        let mut k2 = vec![0.0; len];
        let mut msq = vec![0u64; len];
        let mut dealias = vec![true; len];
        let mut nyquist = vec![false; len];
        let half = grid.points_per_dim / 2;
        for idx in 0..len {
            let m = grid.modes(idx);
            nyquist[idx] = grid.unravel(idx)[..grid.n].contains(&half);
            let mut s = 0u64;
            for a in 0..grid.n {
                k[a][idx] = k0 * m[a] as f64;
                s += (m[a] * m[a]) as u64;
                if m[a].abs() > cut {
                    dealias[idx] = false;
                }
            }
            msq[idx] = s;
            k2[idx] = k0 * k0 * s as f64;
        }
        Self {
            grid,
            k,
            k2,
            msq,
            dealias,
            nyquist,
        }
    }

    pub fn len(&self) -> usize {
        self.k2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.k2.is_empty()
    }

    /// Unnormalized forward DFT of real samples.
    pub fn forward(&self, values: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut buf, false);
        buf
    }

    /// Inverse DFT (normalized), returning the real part.
    pub fn inverse(&self, mut buf: Vec<Complex64>) -> Vec<f64> {
        self.transform(&mut buf, true);
        buf.into_iter().map(|c| c.re).collect()
    }

    pub fn forward_complex(&self, buf: &mut [Complex64]) {
        self.transform(buf, false);
    }

    pub fn inverse_complex(&self, buf: &mut [Complex64]) {
        self.transform(buf, true);
    }

    fn transform(&self, buf: &mut [Complex64], inverse: bool) {
        let np = self.grid.points_per_dim;
        let n = self.grid.n;
        let len = buf.len();
        let fft = plan(np, inverse);
        let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
        // last axis is contiguous
        fft.process_with_scratch(buf, &mut scratch);
        let mut lines = vec![Complex64::new(0.0, 0.0); len];
        for axis in 0..n.saturating_sub(1) {
            let stride = np.pow((n - 1 - axis) as u32);
            let block = stride * np;
            // gather lines along `axis` into contiguous rows
            let mut row = 0;
            for start in (0..len).step_by(block) {
                for off in 0..stride {
                    let base = start + off;
                    let dst = &mut lines[row * np..(row + 1) * np];
                    for (j, d) in dst.iter_mut().enumerate() {
                        *d = buf[base + j * stride];
                    }
                    row += 1;
                }
            }
            fft.process_with_scratch(&mut lines, &mut scratch);
            let mut row = 0;
            for start in (0..len).step_by(block) {
                for off in 0..stride {
                    let base = start + off;
                    let src = &lines[row * np..(row + 1) * np];
                    for (j, s) in src.iter().enumerate() {
                        buf[base + j * stride] = *s;
                    }
                    row += 1;
                }
            }
        }
        if inverse {
            let norm = 1.0 / len as f64;
            for c in buf.iter_mut() {
                *c *= norm;
            }
        }
    }

    /// Apply a real diagonal multiplier to real samples.
    pub fn apply_multiplier(&self, values: &[f64], mult: &[f64]) -> Vec<f64> {
        let mut s = self.forward(values);
        for (c, m) in s.iter_mut().zip(mult) {
            *c *= *m;
        }
        self.inverse(s)
    }

    /// Spectral partial derivative along `axis`.
    pub fn derivative(&self, values: &[f64], axis: usize) -> Vec<f64> {
        let mut s = self.forward(values);
        let ka = &self.k[axis];
        for (i, c) in s.iter_mut().enumerate() {
            *c *= Complex64::new(0.0, ka[i]);
        }
        self.zero_nyquist(&mut s);
        self.inverse(s)
    }

    /// Zero the unpaired Nyquist modes so odd operators stay real.
    pub fn zero_nyquist(&self, s: &mut [Complex64]) {
        for (c, &nyq) in s.iter_mut().zip(&self.nyquist) {
            if nyq {
                *c = Complex64::new(0.0, 0.0);
            }
        }
    }

    pub fn apply_dealias(&self, s: &mut [Complex64]) {
        for (c, &keep) in s.iter_mut().zip(&self.dealias) {
            if !keep {
                *c = Complex64::new(0.0, 0.0);
            }
        }
    }
}
