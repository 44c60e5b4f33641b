//! Spectral grids on the torus `[0, L)^d` and functions living on them.
//!
//! A grid has `n` equispaced nodes per axis (spacing `L/n`) and the
//! frequency lattice `{2*pi*k/L : k in [-n/2, n/2)}` per axis, stored in FFT
//! bin order. Position-space data ([`GridFunction`]) and frequency-space
//! data ([`SpectralField`]) are exchanged by the unitary FFT, so the
//! weighted `l2` norms on both sides agree (Parseval).

use crate::error::{Error, Result};
use crate::{fft, C64};

/// Shape of a spectral grid: dimension, nodes per axis, box side length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    /// Spatial dimension `d`.
    pub d: usize,
    /// Nodes per axis (a power of two, at least 8).
    pub n: usize,
    /// Side length `L` of the fundamental domain.
    pub length: f64,
}

impl GridSpec {
    /// Total number of nodes, `n^d`.
    pub fn total(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    /// Grid spacing `L/n`.
    pub fn spacing(&self) -> f64 {
        self.length / self.n as f64
    }

    /// Quadrature weight of one node, `(L/n)^d`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.d as i32)
    }

    /// Row-major shape `[n, n, ...]` with `d` entries.
    pub fn shape(&self) -> Vec<usize> {
        vec![self.n; self.d]
    }

    /// Node coordinates along one axis: `0, L/n, ..., L(n-1)/n`.
    pub fn axis_nodes(&self) -> Vec<f64> {
        (0..self.n).map(|j| j as f64 * self.spacing()).collect()
    }

    /// Signed integer frequency index of FFT bin `bin` (in `[-n/2, n/2)`).
    pub fn bin_to_k(&self, bin: usize) -> i64 {
        debug_assert!(bin < self.n);
        if bin < self.n / 2 {
            bin as i64
        } else {
            bin as i64 - self.n as i64
        }
    }

    /// Frequencies along one axis in FFT bin order: `2*pi*k/L`.
    pub fn axis_freqs(&self) -> Vec<f64> {
        let scale = 2.0 * std::f64::consts::PI / self.length;
        (0..self.n).map(|bin| scale * self.bin_to_k(bin) as f64).collect()
    }

    /// Decomposes a linear row-major index into per-axis indices.
    pub fn unravel(&self, mut index: usize, out: &mut [usize]) {
        debug_assert_eq!(out.len(), self.d);
        for axis in (0..self.d).rev() {
            out[axis] = index % self.n;
            index /= self.n;
        }
    }

    /// Node coordinates of linear index `index`, written into `out`.
    pub fn node(&self, index: usize, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.d);
        let mut rest = index;
        for axis in (0..self.d).rev() {
            out[axis] = (rest % self.n) as f64 * self.spacing();
            rest /= self.n;
        }
    }
}

/// Builds a grid, validating the spectral preconditions.
///
/// `n` must be a power of two and at least 8; `length` must be positive.
pub fn make_grid(d: usize, n: usize, length: f64) -> Result<GridSpec> {
    if d == 0 || d > 3 {
        return Err(Error::InvalidGrid(format!("dimension {d} not in 1..=3")));
    }
    if n < 8 || !n.is_power_of_two() {
        return Err(Error::InvalidGrid(format!(
            "n = {n} must be a power of two and at least 8"
        )));
    }
    if !(length > 0.0) || !length.is_finite() {
        return Err(Error::InvalidGrid(format!("side length {length} must be positive")));
    }
    Ok(GridSpec { d, n, length })
}

/// Complex samples at the grid nodes, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    pub spec: GridSpec,
    pub values: Vec<C64>,
}

impl GridFunction {
    /// Samples `f` at every node.
    pub fn from_fn(spec: GridSpec, mut f: impl FnMut(&[f64]) -> C64) -> Self {
        let mut values = Vec::with_capacity(spec.total());
        let mut point = vec![0.0; spec.d];
        for index in 0..spec.total() {
            spec.node(index, &mut point);
            values.push(f(&point));
        }
        GridFunction { spec, values }
    }

    /// Samples a real-valued `f` at every node.
    pub fn from_real_fn(spec: GridSpec, mut f: impl FnMut(&[f64]) -> f64) -> Self {
        Self::from_fn(spec, |t| C64::new(f(t), 0.0))
    }

    /// Constant function.
    pub fn constant(spec: GridSpec, value: C64) -> Self {
        GridFunction { spec, values: vec![value; spec.total()] }
    }

    /// Largest absolute value over the nodes.
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Weighted `l2` norm, `sqrt((L/n)^d * sum |f_j|^2)`.
    pub fn norm(&self) -> f64 {
        (self.spec.cell_volume() * self.values.iter().map(|z| z.norm_sqr()).sum::<f64>()).sqrt()
    }
}

/// Frequency-space coefficients of a grid function, FFT bin order, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    pub spec: GridSpec,
    pub coeffs: Vec<C64>,
}

/// Unitary forward transform.
pub fn transform(f: &GridFunction) -> SpectralField {
    let mut coeffs = f.values.clone();
    fft::forward(&mut coeffs, &f.spec.shape());
    SpectralField { spec: f.spec, coeffs }
}

/// Unitary inverse transform.
pub fn inverse_transform(field: &SpectralField) -> GridFunction {
    let mut values = field.coeffs.clone();
    fft::inverse(&mut values, &field.spec.shape());
    GridFunction { spec: field.spec, values }
}

/// Weighted inner product, conjugate-linear in the first argument:
/// `(L/n)^d * sum conj(f_j) g_j`.
pub fn inner(f: &GridFunction, g: &GridFunction) -> C64 {
    assert_eq!(f.spec, g.spec, "inner product requires a common grid");
    let dot: C64 = f.values.iter().zip(&g.values).map(|(a, b)| a.conj() * b).sum();
    dot * f.spec.cell_volume()
}

/// Shortest signed displacement from `0` to `x` on the circle of length `l`.
pub fn torus_delta(x: f64, l: f64) -> f64 {
    let mut r = (x + 0.5 * l).rem_euclid(l) - 0.5 * l;
    if r == -0.5 * l {
        r = 0.5 * l;
    }
    r
}

/// The smooth compactly supported profile `exp(1 - 1/(1 - r^2))` for
/// `|r| < 1`, zero otherwise. Equals `1` at `r = 0` and `exp(-1)` at
/// `r = 1/sqrt(2)`.
pub fn bump_profile(r: f64) -> f64 {
    let r2 = r * r;
    if r2 >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - r2)).exp()
    }
}

/// Smooth bump supported in the ball of radius `radius` about `center`.
///
/// The closed ball must fit strictly inside the fundamental domain
/// `(0, L)^d` (no wraparound).
pub fn bump(spec: GridSpec, center: &[f64], radius: f64) -> Result<GridFunction> {
    if center.len() != spec.d {
        return Err(Error::Shape(format!(
            "bump center has {} coordinates on a {}-dimensional grid",
            center.len(),
            spec.d
        )));
    }
    if !(radius > 0.0) {
        return Err(Error::Domain(format!("bump radius {radius} must be positive")));
    }
    for &c in center {
        if !(c - radius > 0.0 && c + radius < spec.length) {
            return Err(Error::Domain(format!(
                "ball of radius {radius} about {center:?} does not fit strictly inside (0, {})^{}",
                spec.length, spec.d
            )));
        }
    }
    Ok(GridFunction::from_real_fn(spec, |t| {
        let r2: f64 = t
            .iter()
            .zip(center)
            .map(|(&ti, &ci)| {
                let delta = torus_delta(ti - ci, spec.length);
                delta * delta
            })
            .sum();
        bump_profile(r2.sqrt() / radius)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    const L: f64 = 2.0 * std::f64::consts::PI;

    #[test]
    fn make_grid_exposes_expected_nodes() {
        let spec = make_grid(1, 8, 1.0).unwrap();
        let nodes = spec.axis_nodes();
        let want = [0.0, 0.125, 0.25, 0.375, 0.5, 0.625, 0.75, 0.875];
        assert_eq!(nodes.len(), 8);
        for (got, want) in nodes.iter().zip(want) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn make_grid_exposes_expected_frequencies() {
        let spec = make_grid(2, 8, L).unwrap();
        // 2*pi/L = 1, so frequencies are the integers -4..=3 in FFT order.
        let freqs = spec.axis_freqs();
        let want = [0.0, 1.0, 2.0, 3.0, -4.0, -3.0, -2.0, -1.0];
        for (got, want) in freqs.iter().zip(want) {
            assert!((got - want).abs() < 1e-15);
        }
        let ks: Vec<i64> = (0..8).map(|b| spec.bin_to_k(b)).collect();
        assert_eq!(ks, vec![0, 1, 2, 3, -4, -3, -2, -1]);
    }

    #[test]
    fn make_grid_rejects_bad_sizes() {
        assert!(make_grid(1, 7, 1.0).is_err());
        assert!(make_grid(1, 4, 1.0).is_err());
        assert!(make_grid(1, 12, 1.0).is_err());
        assert!(make_grid(1, 8, -1.0).is_err());
        assert!(make_grid(0, 8, 1.0).is_err());
    }

    #[test]
    fn transform_roundtrip_is_tight() {
        let spec = make_grid(1, 64, L).unwrap();
        let f = bump(spec, &[L / 2.0], L / 4.0).unwrap();
        let back = inverse_transform(&transform(&f));
        let err: f64 = f
            .values
            .iter()
            .zip(&back.values)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(err < 1e-12);
    }

    #[test]
    fn parseval_holds_for_bump() {
        let spec = make_grid(2, 32, L).unwrap();
        let f = bump(spec, &[L / 2.0, L / 2.0], L / 4.0).unwrap();
        let field = transform(&f);
        let pos: f64 = f.values.iter().map(|z| z.norm_sqr()).sum();
        let freq: f64 = field.coeffs.iter().map(|z| z.norm_sqr()).sum();
        assert!((pos - freq).abs() <= 1e-12 * pos);
    }

    #[test]
    fn bump_profile_reference_values() {
        assert_eq!(bump_profile(0.0), 1.0);
        assert_eq!(bump_profile(1.0), 0.0);
        assert_eq!(bump_profile(1.5), 0.0);
        assert!((bump_profile(1.0 / 2.0f64.sqrt()) - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn bump_on_grid_hits_center_and_vanishes_outside() {
        let spec = make_grid(1, 64, L).unwrap();
        let f = bump(spec, &[L / 2.0], L / 4.0).unwrap();
        // L/2 is node 32.
        assert!((f.values[32].re - 1.0).abs() < 1e-15);
        for (j, value) in f.values.iter().enumerate() {
            let r = torus_delta(j as f64 * spec.spacing() - L / 2.0, L).abs();
            if r >= L / 4.0 {
                assert_eq!(value.re, 0.0, "node {j} at distance {r} should be zero");
            }
        }
    }

    #[test]
    fn bump_requires_ball_inside_domain() {
        let spec = make_grid(1, 64, L).unwrap();
        assert!(bump(spec, &[L / 2.0], L / 2.0).is_err());
        assert!(bump(spec, &[0.1], 0.2).is_err());
        assert!(bump(spec, &[L / 2.0], L / 4.0).is_ok());
    }

    #[test]
    fn bump_spectrum_decays_super_polynomially() {
        let spec = make_grid(1, 512, L).unwrap();
        let field = transform(&bump(spec, &[L / 2.0], L / 4.0).unwrap());
        let band_max = |lo: i64, hi: i64| -> f64 {
            (0..spec.n)
                .filter(|&b| {
                    let k = spec.bin_to_k(b).abs();
                    k >= lo && k < hi
                })
                .map(|b| field.coeffs[b].norm())
                .fold(0.0, f64::max)
        };
        let peak = field.coeffs.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let b1 = band_max(32, 64) / peak;
        let b2 = band_max(64, 128) / peak;
        let b3 = band_max(128, 256) / peak;
        // Successive octave ratios must shrink (faster than any fixed power)
        // and the far tail must be tiny.
        assert!(b2 / b1 < 0.1, "octave ratio {}", b2 / b1);
        assert!(b3 / b2 < b2 / b1, "ratios {} then {}", b2 / b1, b3 / b2);
        assert!(b3 < 1e-6, "tail {b3}");
    }

    #[test]
    fn inner_is_weighted_and_conjugate_linear_in_first_slot() {
        let spec = make_grid(2, 8, 2.0).unwrap();
        let one = GridFunction::constant(spec, C64::new(1.0, 0.0));
        let ip = inner(&one, &one);
        assert!((ip.re - 4.0).abs() < 1e-14 && ip.im.abs() < 1e-15);

        let f = GridFunction::from_fn(spec, |t| C64::new(t[0], t[1]));
        let g = GridFunction::from_fn(spec, |t| C64::new(t[1], -t[0]));
        let i = C64::new(0.0, 1.0);
        let scaled = GridFunction {
            spec,
            values: f.values.iter().map(|z| z * i).collect(),
        };
        let lhs = inner(&scaled, &g);
        let rhs = -i * inner(&f, &g);
        assert!((lhs - rhs).norm() < 1e-14);
    }

    #[test]
    fn construction_is_pure() {
        let spec = make_grid(1, 64, L).unwrap();
        let a = bump(spec, &[L / 2.0], L / 4.0).unwrap();
        let b = bump(spec, &[L / 2.0], L / 4.0).unwrap();
        assert_eq!(a, b);
        let fa = transform(&a);
        let fb = transform(&b);
        assert_eq!(fa.coeffs, fb.coeffs);
    }
}
