//! Seeded band-limited random fields.

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::grid::{Field, Grid, Spectral};
use crate::spaces::{interpolant_max, interpolant_min};

/// Deterministic generator from a seed.
pub fn rng(seed: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(seed)
}

/// Real random field with modes `0 < |m|_∞ <= max_mode` and amplitudes `(1 + |m|^2)^{-decay/2}`.
pub fn band_limited(grid: Grid, max_mode: i64, decay: f64, rng: &mut impl Rng) -> Field {
    let spectral = Spectral::new(grid);
    let mut c = vec![Complex64::new(0.0, 0.0); grid.len()];
    for (idx, slot) in c.iter_mut().enumerate() {
        let m = grid.modes(idx);
        let inf = m[..grid.n].iter().map(|v| v.abs()).max().unwrap_or(0);
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        if inf == 0 || inf > max_mode || spectral.nyquist[idx] {
            continue;
        }
        let w = (1.0 + spectral.msq[idx] as f64).powf(-decay / 2.0);
        *slot = Complex64::new(re, im) * w;
    }
    hermitian(&grid, &mut c);
    Field {
        grid,
        values: spectral.inverse(c),
        time: None,
    }
}

/// Symmetrize `c` so that its inverse transform is real.
pub fn hermitian(grid: &Grid, c: &mut [Complex64]) {
    let orig = c.to_vec();
    let np = grid.points_per_dim;
    for (idx, slot) in c.iter_mut().enumerate() {
        let ix = grid.unravel(idx);
        let mut neg = [0usize; 3];
        for a in 0..grid.n {
            neg[a] = (np - ix[a]) % np;
        }
        let j = grid.ravel(&neg[..grid.n]);
        *slot = 0.5 * (orig[idx] + orig[j].conj());
    }
}

/// Affine rescaling so that the trigonometric interpolant spans exactly `[lo, hi]`.
pub fn normalize_to_range(field: &Field, lo: f64, hi: f64) -> Field {
    let fmin = interpolant_min(field);
    let fmax = interpolant_max(field);
    let span = fmax - fmin;
    if span <= 0.0 {
        return Field::constant(field.grid, 0.5 * (lo + hi));
    }
    let s = (hi - lo) / span;
    // the affine map keeps the field band-limited, so its extremes map exactly
    field.map(|v| lo + (v - fmin) * s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn band_limited_is_real_and_seeded() {
        let g = Grid::new(2, 16, 6.0).unwrap();
        let a = band_limited(g, 3, 1.0, &mut rng(4));
        let b = band_limited(g, 3, 1.0, &mut rng(4));
        assert_eq!(a, b);
        assert!(a.mean().abs() < 1e-12);
        let s = Spectral::new(g);
        let c = s.forward(&a.values);
        for (idx, v) in c.iter().enumerate() {
            let m = g.modes(idx);
            if m[0].abs() > 3 || m[1].abs() > 3 {
                assert!(v.norm() < 1e-10);
            }
        }
    }

    #[test]
    fn normalized_range() {
        let g = Grid::new(2, 32, 6.0).unwrap();
        let f = normalize_to_range(&band_limited(g, 3, 1.0, &mut rng(1)), 0.0, 1.0);
        assert!(f.min() >= -1e-12 && f.max() <= 1.0 + 1e-12);
        assert!((interpolant_max(&f) - 1.0).abs() < 1e-10);
    }
}
