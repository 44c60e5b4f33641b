//! Trigonometric interpolation of grid data at off-grid points.
//!
//! A grid function is identified with the band-limited trigonometric
//! polynomial having the same FFT coefficients, each frequency taken with
//! its centered representative `k in [-n/2, n/2)`. Evaluation at a point
//! `x` sums `(1/sqrt(total)) * F_k * exp(i <2 pi k / L, x>)`; at the nodes
//! this reproduces the samples exactly.

use crate::grid::{GridFunction, GridSpec, SpectralField, transform};
use crate::C64;

/// Precomputed spectral coefficients ready for point evaluation.
#[derive(Debug, Clone)]
pub struct Interpolator {
    spec: GridSpec,
    coeffs: Vec<C64>,
    axis_freqs: Vec<f64>,
    norm: f64,
}

impl Interpolator {
    /// Builds an interpolator from position-space samples (one FFT).
    pub fn new(f: &GridFunction) -> Self {
        Self::from_field(transform(f))
    }

    /// Builds an interpolator directly from spectral coefficients.
    pub fn from_field(field: SpectralField) -> Self {
        let spec = field.spec;
        Interpolator {
            spec,
            coeffs: field.coeffs,
            axis_freqs: spec.axis_freqs(),
            norm: 1.0 / (spec.total() as f64).sqrt(),
        }
    }

    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    fn axis_phases(&self, x: f64, out: &mut [C64]) {
        for (bin, slot) in out.iter_mut().enumerate() {
            *slot = C64::from_polar(1.0, self.axis_freqs[bin] * x);
        }
    }

    /// Evaluates the interpolant at one point.
    pub fn eval(&self, point: &[f64]) -> C64 {
        assert_eq!(point.len(), self.spec.d);
        let n = self.spec.n;
        match self.spec.d {
            1 => {
                let mut acc = C64::default();
                for bin in 0..n {
                    acc += self.coeffs[bin] * C64::from_polar(1.0, self.axis_freqs[bin] * point[0]);
                }
                acc * self.norm
            }
            2 => {
                let mut p1 = vec![C64::default(); n];
                let mut p2 = vec![C64::default(); n];
                self.axis_phases(point[0], &mut p1);
                self.axis_phases(point[1], &mut p2);
                let mut acc = C64::default();
                for b1 in 0..n {
                    let row = &self.coeffs[b1 * n..(b1 + 1) * n];
                    let mut inner = C64::default();
                    for (b2, &c) in row.iter().enumerate() {
                        inner += c * p2[b2];
                    }
                    acc += inner * p1[b1];
                }
                acc * self.norm
            }
            _ => {
                // General d: full lattice sum (used only for small grids).
                let total = self.spec.total();
                let mut idx = vec![0usize; self.spec.d];
                let mut acc = C64::default();
                for lin in 0..total {
                    self.spec.unravel(lin, &mut idx);
                    let phase: f64 = idx
                        .iter()
                        .zip(point)
                        .map(|(&b, &x)| self.axis_freqs[b] * x)
                        .sum();
                    acc += self.coeffs[lin] * C64::from_polar(1.0, phase);
                }
                acc * self.norm
            }
        }
    }

    /// Evaluates the interpolant at many points.
    pub fn eval_many(&self, points: &[Vec<f64>]) -> Vec<C64> {
        points.iter().map(|p| self.eval(p)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{bump, make_grid};

    const L: f64 = 2.0 * std::f64::consts::PI;

    #[test]
    fn plane_wave_is_reproduced_exactly_off_grid() {
        let spec = make_grid(1, 32, L).unwrap();
        let k = 5.0; // integer frequency since L = 2 pi
        let f = GridFunction::from_fn(spec, |t| C64::from_polar(1.0, k * t[0]));
        let interp = Interpolator::new(&f);
        for &x in &[0.123, 1.77, 4.999, 6.2] {
            let got = interp.eval(&[x]);
            let want = C64::from_polar(1.0, k * x);
            assert!((got - want).norm() < 1e-12, "x={x}: {got} vs {want}");
        }
    }

    #[test]
    fn node_values_are_reproduced() {
        let spec = make_grid(2, 16, L).unwrap();
        let f = bump(spec, &[L / 2.0, L / 2.0], L / 4.0).unwrap();
        let interp = Interpolator::new(&f);
        let mut point = vec![0.0; 2];
        for index in [0usize, 17, 100, 255] {
            spec.node(index, &mut point);
            let got = interp.eval(&point);
            assert!((got - f.values[index]).norm() < 1e-12);
        }
    }

    #[test]
    fn smooth_function_interpolates_accurately_between_nodes() {
        // The interpolant is band-limited, so off-grid it differs from the
        // true bump by the spectral tail mass, which shrinks with n.
        let mut errs = Vec::new();
        for n in [256usize, 512] {
            let spec = make_grid(1, n, L).unwrap();
            let f = bump(spec, &[L / 2.0], L / 4.0).unwrap();
            let interp = Interpolator::new(&f);
            let mut worst = 0.0f64;
            for j in 0..50 {
                let x = 1.3 + 0.07 * j as f64;
                let r = crate::grid::torus_delta(x - L / 2.0, L).abs() / (L / 4.0);
                let want = crate::grid::bump_profile(r);
                let got = interp.eval(&[x]);
                worst = worst.max((got - C64::new(want, 0.0)).norm());
            }
            errs.push(worst);
        }
        assert!(errs[0] < 1e-5, "n=256 error {}", errs[0]);
        assert!(errs[1] < 1e-7, "n=512 error {}", errs[1]);
        assert!(errs[1] < errs[0] / 10.0, "no spectral improvement: {errs:?}");
    }

    #[test]
    fn spectral_derivative_field_evaluates_correctly() {
        // d/dx of exp(i 3 x) via coefficient multiplication by i*k is
        // 3i exp(i 3 x); evaluated off-grid through from_field.
        let spec = make_grid(1, 32, L).unwrap();
        let f = GridFunction::from_fn(spec, |t| C64::from_polar(1.0, 3.0 * t[0]));
        let mut field = transform(&f);
        let freqs = spec.axis_freqs();
        for (bin, c) in field.coeffs.iter_mut().enumerate() {
            *c *= C64::new(0.0, freqs[bin]);
        }
        let interp = Interpolator::from_field(field);
        let x = 2.345;
        let got = interp.eval(&[x]);
        let want = C64::new(0.0, 3.0) * C64::from_polar(1.0, 3.0 * x);
        assert!((got - want).norm() < 1e-11);
    }
}
