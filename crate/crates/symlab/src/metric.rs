//! Riemannian metric fields sampled on a grid.
//!
//! A metric assigns to every node a symmetric positive-definite `d x d`
//! matrix `g(t)`; the catalog used by the experiments (flat, conformal,
//! constant diagonal) is constant outside a central ball, matching the
//! diffeomorphism support convention.

use crate::grid::{GridFunction, GridSpec};
use crate::{Error, Result};

/// Per-node symmetric positive-definite matrices.
#[derive(Debug, Clone)]
pub struct MetricField {
    spec: GridSpec,
    /// `total * d * d` entries; node-major, each block row-major.
    g: Vec<f64>,
    /// Whether the field is constant outside the central ball of radius
    /// `L/4` (true for the catalog, recorded for the atlas checks).
    constant_outside: bool,
}

impl MetricField {
    /// The flat metric `g = I`.
    pub fn flat(spec: GridSpec) -> Self {
        let d = spec.d;
        let mut g = vec![0.0; spec.total() * d * d];
        for node in 0..spec.total() {
            for i in 0..d {
                g[node * d * d + i * d + i] = 1.0;
            }
        }
        MetricField { spec, g, constant_outside: true }
    }

    /// Conformal metric `exp(2 u) I` from a real conformal factor `u`.
    pub fn conformal(u: &GridFunction) -> Self {
        let spec = u.spec;
        let d = spec.d;
        let mut g = vec![0.0; spec.total() * d * d];
        for (node, value) in u.values.iter().enumerate() {
            let scale = (2.0 * value.re).exp();
            for i in 0..d {
                g[node * d * d + i * d + i] = scale;
            }
        }
        MetricField { spec, g, constant_outside: true }
    }

    /// Constant diagonal metric.
    pub fn diagonal_const(spec: GridSpec, diag: &[f64]) -> Result<Self> {
        if diag.len() != spec.d {
            return Err(Error::Shape(format!(
                "{} diagonal entries for dimension {}",
                diag.len(),
                spec.d
            )));
        }
        if diag.iter().any(|&x| !(x > 0.0)) {
            return Err(Error::Domain("diagonal metric entries must be positive".into()));
        }
        let d = spec.d;
        let mut g = vec![0.0; spec.total() * d * d];
        for node in 0..spec.total() {
            for i in 0..d {
                g[node * d * d + i * d + i] = diag[i];
            }
        }
        Ok(MetricField { spec, g, constant_outside: true })
    }

    /// Samples an arbitrary smooth metric; `f` returns the row-major
    /// `d x d` matrix at a point.
    pub fn from_fn(
        spec: GridSpec,
        constant_outside: bool,
        mut f: impl FnMut(&[f64]) -> Vec<f64>,
    ) -> Result<Self> {
        let d = spec.d;
        let mut g = vec![0.0; spec.total() * d * d];
        let mut point = vec![0.0; d];
        for node in 0..spec.total() {
            spec.node(node, &mut point);
            let block = f(&point);
            if block.len() != d * d {
                return Err(Error::Shape("metric block has wrong size".into()));
            }
            g[node * d * d..(node + 1) * d * d].copy_from_slice(&block);
        }
        let field = MetricField { spec, g, constant_outside };
        field.validate(1e6)?;
        Ok(field)
    }

    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    pub fn constant_outside(&self) -> bool {
        self.constant_outside
    }

    /// Metric block at a node, row-major `d x d`.
    pub fn at(&self, node: usize) -> &[f64] {
        let d = self.spec.d;
        &self.g[node * d * d..(node + 1) * d * d]
    }

    /// Determinant of the metric at a node.
    pub fn det_at(&self, node: usize) -> f64 {
        let g = self.at(node);
        match self.spec.d {
            1 => g[0],
            2 => g[0] * g[3] - g[1] * g[2],
            _ => unreachable!("metrics are 1- or 2-dimensional here"),
        }
    }

    /// Inverse metric at a node, row-major `d x d`.
    pub fn inverse_at(&self, node: usize) -> Vec<f64> {
        let g = self.at(node);
        match self.spec.d {
            1 => vec![1.0 / g[0]],
            2 => {
                let det = self.det_at(node);
                vec![g[3] / det, -g[1] / det, -g[2] / det, g[0] / det]
            }
            _ => unreachable!("metrics are 1- or 2-dimensional here"),
        }
    }

    /// Checks symmetry, eigenvalue bounds `[1/kappa, kappa]` and a positive
    /// determinant at every node.
    pub fn validate(&self, kappa: f64) -> Result<()> {
        let d = self.spec.d;
        for node in 0..self.spec.total() {
            let g = self.at(node);
            for i in 0..d {
                for j in i + 1..d {
                    let gap = (g[i * d + j] - g[j * d + i]).abs();
                    if gap > 1e-12 {
                        return Err(Error::Domain(format!(
                            "metric asymmetric by {gap} at node {node}"
                        )));
                    }
                }
            }
            let (lo, hi) = match d {
                1 => (g[0], g[0]),
                2 => {
                    let tr = g[0] + g[3];
                    let det = self.det_at(node);
                    let disc = (tr * tr - 4.0 * det).max(0.0).sqrt();
                    ((tr - disc) / 2.0, (tr + disc) / 2.0)
                }
                _ => unreachable!(),
            };
            if !(lo >= 1.0 / kappa && hi <= kappa) {
                return Err(Error::Domain(format!(
                    "metric eigenvalues [{lo}, {hi}] escape [{}, {kappa}] at node {node}",
                    1.0 / kappa
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{bump, make_grid};

    const L: f64 = 2.0 * std::f64::consts::PI;

    #[test]
    fn flat_metric_is_identity_everywhere() {
        let spec = make_grid(2, 8, L).unwrap();
        let g = MetricField::flat(spec);
        g.validate(1.0 + 1e-12).unwrap();
        assert_eq!(g.at(17), &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(g.det_at(17), 1.0);
    }

    #[test]
    fn conformal_metric_has_expected_determinant() {
        let spec = make_grid(2, 16, L).unwrap();
        let u = bump(spec, &[L / 2.0, L / 2.0], L / 4.0).unwrap();
        let g = MetricField::conformal(&u);
        g.validate(10.0).unwrap();
        // At the center node (L/2, L/2) the factor is exp(2 * 1).
        let center = (8 * 16 + 8) as usize;
        assert!((g.det_at(center) - (4.0f64).exp()).abs() < 1e-12);
        // Far from the bump the metric is flat.
        assert_eq!(g.at(0), &[1.0, 0.0, 0.0, 1.0]);
        assert!(g.constant_outside());
    }

    #[test]
    fn diagonal_metric_inverse_is_reciprocal() {
        let spec = make_grid(2, 8, 1.0).unwrap();
        let g = MetricField::diagonal_const(spec, &[4.0, 1.0]).unwrap();
        let inv = g.inverse_at(5);
        assert_eq!(inv, vec![0.25, 0.0, 0.0, 1.0]);
        assert_eq!(g.det_at(5), 4.0);
    }

    #[test]
    fn validate_rejects_indefinite_and_asymmetric_fields() {
        let spec = make_grid(2, 8, 1.0).unwrap();
        let bad = MetricField::from_fn(spec, true, |_| vec![1.0, 0.0, 0.0, -1.0]);
        assert!(bad.is_err());
        let asym = MetricField::from_fn(spec, true, |_| vec![1.0, 0.3, 0.1, 1.0]);
        assert!(asym.is_err());
    }
}
