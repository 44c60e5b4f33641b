//! Linear operators on grid functions.
//!
//! Operators carry one of five representations: multiplication in position
//! space, a multiplier in frequency space, an explicit dense matrix, a
//! matrix-free diffeomorphism unitary, or a composition of such factors.
//! Dense matrices are stored column-major (`mat[row + col * total]`), which
//! feeds LAPACK directly. Dense materialisation is allowed only up to
//! [`DENSE_CAP`] rows; everything else stays matrix-free.
//!
//! Adjoints are structural and exact: the adjoint of every representation
//! materialises to the conjugate transpose of the original within rounding,
//! including the diffeomorphism unitaries (whose discrete adjoint differs
//! from the inverse map's unitary by the interpolation error).

use crate::diffeo::Diffeo;
use crate::grid::{GridFunction, GridSpec};
use crate::interp::Interpolator;
use crate::{fft, Error, Result, C64};

/// Largest total grid size for which operators may be materialised.
pub const DENSE_CAP: usize = 8192;

/// A linear operator on the `total()`-dimensional space of grid samples.
#[derive(Debug, Clone)]
pub enum LinOp {
    /// Pointwise multiplication in position space.
    PosDiag { spec: GridSpec, diag: Vec<C64> },
    /// Diagonal multiplier in frequency space (FFT bin order).
    FreqDiag { spec: GridSpec, diag: Vec<C64> },
    /// Explicit matrix, column-major.
    Dense { spec: GridSpec, mat: Vec<C64> },
    /// The unitary induced by a diffeomorphism (`inverted` selects the
    /// inverse map; `adjoint` the exact discrete adjoint).
    DiffeoUnitary { spec: GridSpec, phi: Diffeo, inverted: bool, adjoint: bool },
    /// Product of factors applied right to left: `[A, B]` acts as `A B`.
    Compose { spec: GridSpec, factors: Vec<LinOp> },
}

impl LinOp {
    pub fn pos_diag(spec: GridSpec, diag: Vec<C64>) -> Result<Self> {
        if diag.len() != spec.total() {
            return Err(Error::Shape(format!(
                "diagonal has {} entries on a grid with {} nodes",
                diag.len(),
                spec.total()
            )));
        }
        Ok(LinOp::PosDiag { spec, diag })
    }

    pub fn freq_diag(spec: GridSpec, diag: Vec<C64>) -> Result<Self> {
        if diag.len() != spec.total() {
            return Err(Error::Shape(format!(
                "multiplier has {} entries on a grid with {} bins",
                diag.len(),
                spec.total()
            )));
        }
        Ok(LinOp::FreqDiag { spec, diag })
    }

    pub fn from_dense(spec: GridSpec, mat: Vec<C64>) -> Result<Self> {
        let total = spec.total();
        if mat.len() != total * total {
            return Err(Error::Shape(format!(
                "dense matrix has {} entries, expected {}",
                mat.len(),
                total * total
            )));
        }
        Ok(LinOp::Dense { spec, mat })
    }

    /// The unitary `U_Phi` (or `U_{Phi^{-1}}` when `inverted`).
    pub fn unitary(spec: GridSpec, phi: Diffeo, inverted: bool) -> Result<Self> {
        if phi.d() != spec.d {
            return Err(Error::Shape("diffeomorphism dimension differs from grid".into()));
        }
        if (phi.length() - spec.length).abs() > 1e-12 * spec.length {
            return Err(Error::Shape("diffeomorphism box differs from grid".into()));
        }
        Ok(LinOp::DiffeoUnitary { spec, phi, inverted, adjoint: false })
    }

    pub fn compose(factors: Vec<LinOp>) -> Result<Self> {
        let spec = match factors.first() {
            Some(f) => f.spec(),
            None => return Err(Error::Shape("empty composition".into())),
        };
        for f in &factors {
            if f.spec() != spec {
                return Err(Error::Shape("composition factors live on different grids".into()));
            }
        }
        Ok(LinOp::Compose { spec, factors })
    }

    pub fn spec(&self) -> GridSpec {
        match self {
            LinOp::PosDiag { spec, .. }
            | LinOp::FreqDiag { spec, .. }
            | LinOp::Dense { spec, .. }
            | LinOp::DiffeoUnitary { spec, .. }
            | LinOp::Compose { spec, .. } => *spec,
        }
    }

    /// Applies the operator to a sample vector.
    pub fn apply(&self, x: &[C64]) -> Vec<C64> {
        let total = self.spec().total();
        assert_eq!(x.len(), total, "vector length mismatch");
        match self {
            LinOp::PosDiag { diag, .. } => x.iter().zip(diag).map(|(v, d)| v * d).collect(),
            LinOp::FreqDiag { spec, diag } => {
                let shape = spec.shape();
                let mut buf = x.to_vec();
                fft::forward(&mut buf, &shape);
                for (b, d) in buf.iter_mut().zip(diag) {
                    *b *= d;
                }
                fft::inverse(&mut buf, &shape);
                buf
            }
            LinOp::Dense { mat, .. } => dense_matvec(mat, x, total),
            LinOp::DiffeoUnitary { spec, phi, inverted, adjoint } => {
                if *adjoint {
                    unitary_apply_adjoint(*spec, phi, *inverted, x)
                } else {
                    unitary_apply(*spec, phi, *inverted, x)
                }
            }
            LinOp::Compose { factors, .. } => {
                let mut cur = x.to_vec();
                for f in factors.iter().rev() {
                    cur = f.apply(&cur);
                }
                cur
            }
        }
    }

    /// Applies the exact adjoint of the operator.
    pub fn apply_adjoint(&self, x: &[C64]) -> Vec<C64> {
        let total = self.spec().total();
        assert_eq!(x.len(), total, "vector length mismatch");
        match self {
            LinOp::PosDiag { diag, .. } => {
                x.iter().zip(diag).map(|(v, d)| v * d.conj()).collect()
            }
            LinOp::FreqDiag { spec, diag } => {
                let shape = spec.shape();
                let mut buf = x.to_vec();
                fft::forward(&mut buf, &shape);
                for (b, d) in buf.iter_mut().zip(diag) {
                    *b *= d.conj();
                }
                fft::inverse(&mut buf, &shape);
                buf
            }
            LinOp::Dense { mat, .. } => {
                let mut out = vec![C64::default(); total];
                for (m, slot) in out.iter_mut().enumerate() {
                    let col = &mat[m * total..(m + 1) * total];
                    *slot = col.iter().zip(x).map(|(a, v)| a.conj() * v).sum();
                }
                out
            }
            LinOp::DiffeoUnitary { spec, phi, inverted, adjoint } => {
                if *adjoint {
                    unitary_apply(*spec, phi, *inverted, x)
                } else {
                    unitary_apply_adjoint(*spec, phi, *inverted, x)
                }
            }
            LinOp::Compose { factors, .. } => {
                let mut cur = x.to_vec();
                for f in factors.iter() {
                    cur = f.apply_adjoint(&cur);
                }
                cur
            }
        }
    }

    /// Structural adjoint (same representation family).
    pub fn adjoint(&self) -> LinOp {
        match self {
            LinOp::PosDiag { spec, diag } => LinOp::PosDiag {
                spec: *spec,
                diag: diag.iter().map(|d| d.conj()).collect(),
            },
            LinOp::FreqDiag { spec, diag } => LinOp::FreqDiag {
                spec: *spec,
                diag: diag.iter().map(|d| d.conj()).collect(),
            },
            LinOp::Dense { spec, mat } => {
                let total = spec.total();
                let mut out = vec![C64::default(); total * total];
                for col in 0..total {
                    for row in 0..total {
                        out[col + row * total] = mat[row + col * total].conj();
                    }
                }
                LinOp::Dense { spec: *spec, mat: out }
            }
            LinOp::DiffeoUnitary { spec, phi, inverted, adjoint } => LinOp::DiffeoUnitary {
                spec: *spec,
                phi: phi.clone(),
                inverted: *inverted,
                adjoint: !adjoint,
            },
            LinOp::Compose { spec, factors } => LinOp::Compose {
                spec: *spec,
                factors: factors.iter().rev().map(|f| f.adjoint()).collect(),
            },
        }
    }

    /// Materialises the operator as a column-major matrix.
    ///
    /// Fails with [`Error::DenseCap`] when the grid exceeds [`DENSE_CAP`]
    /// nodes.
    pub fn to_dense(&self) -> Result<Vec<C64>> {
        let total = self.spec().total();
        if total > DENSE_CAP {
            return Err(Error::DenseCap { total, cap: DENSE_CAP });
        }
        Ok(match self {
            LinOp::PosDiag { diag, .. } => {
                let mut mat = vec![C64::default(); total * total];
                for (j, d) in diag.iter().enumerate() {
                    mat[j + j * total] = *d;
                }
                mat
            }
            LinOp::FreqDiag { spec, diag } => circulant_dense(*spec, diag),
            LinOp::Dense { mat, .. } => mat.clone(),
            LinOp::DiffeoUnitary { .. } | LinOp::Compose { .. } => {
                // Column by column through the (matrix-free) apply.
                let mut mat = vec![C64::default(); total * total];
                let mut e = vec![C64::default(); total];
                for m in 0..total {
                    e[m] = C64::new(1.0, 0.0);
                    let col = self.apply(&e);
                    e[m] = C64::default();
                    mat[m * total..(m + 1) * total].copy_from_slice(&col);
                }
                mat
            }
        })
    }
}

/// `y = A x` for a column-major matrix.
pub fn dense_matvec(mat: &[C64], x: &[C64], total: usize) -> Vec<C64> {
    let mut y = vec![C64::default(); total];
    for (m, &xm) in x.iter().enumerate() {
        if xm == C64::default() {
            continue;
        }
        let col = &mat[m * total..(m + 1) * total];
        for (slot, &a) in y.iter_mut().zip(col) {
            *slot += a * xm;
        }
    }
    y
}

/// Dense form of a frequency multiplier: a (multi-level) circulant built
/// from one inverse FFT of the multiplier.
fn circulant_dense(spec: GridSpec, diag: &[C64]) -> Vec<C64> {
    let total = spec.total();
    let n = spec.n;
    let d = spec.d;
    let mut kernel = diag.to_vec();
    fft::inverse(&mut kernel, &spec.shape());
    let scale = 1.0 / (total as f64).sqrt();
    for k in kernel.iter_mut() {
        *k *= scale;
    }
    // A[j, m] = kernel[(j - m) mod n per axis].
    let mut mat = vec![C64::default(); total * total];
    let mut jm = vec![0usize; d];
    let mut mm = vec![0usize; d];
    for m in 0..total {
        spec.unravel(m, &mut mm);
        let col = &mut mat[m * total..(m + 1) * total];
        for (j, slot) in col.iter_mut().enumerate() {
            spec.unravel(j, &mut jm);
            let mut idx = 0usize;
            for axis in 0..d {
                idx = idx * n + (jm[axis] + n - mm[axis]) % n;
            }
            *slot = kernel[idx];
        }
    }
    mat
}

fn mapped_point(phi: &Diffeo, inverted: bool, t: &[f64]) -> Vec<f64> {
    if inverted {
        phi.inverse(t)
    } else {
        phi.forward(t)
    }
}

fn sqrt_abs_det(phi: &Diffeo, inverted: bool, t: &[f64], mapped: &[f64]) -> f64 {
    if inverted {
        // J_{Phi^{-1}}(t) = J_Phi(Phi^{-1}(t))^{-1}.
        1.0 / phi.det_jacobian(mapped).abs().sqrt()
    } else {
        phi.det_jacobian(t).abs().sqrt()
    }
}

/// `(U xi)(t_j) = sqrt(|det J(t_j)|) * (interpolant of xi)(map(t_j))`.
///
/// Nodes the map fixes (the whole complement of the support ball, plus any
/// interior fixed point) skip the interpolation and read the sample
/// directly, but they still carry the Jacobian weight: a fixed point of
/// the map need not have unit Jacobian. Where the weight is exactly 1 the
/// multiplication is bit-exact, so identity maps copy verbatim.
fn unitary_apply(spec: GridSpec, phi: &Diffeo, inverted: bool, x: &[C64]) -> Vec<C64> {
    let interp = Interpolator::new(&GridFunction { spec, values: x.to_vec() });
    let mut out = vec![C64::default(); spec.total()];
    let mut t = vec![0.0; spec.d];
    for (j, slot) in out.iter_mut().enumerate() {
        spec.node(j, &mut t);
        let mapped = mapped_point(phi, inverted, &t);
        if mapped == t {
            *slot = sqrt_abs_det(phi, inverted, &t, &mapped) * x[j];
        } else {
            *slot = sqrt_abs_det(phi, inverted, &t, &mapped) * interp.eval(&mapped);
        }
    }
    out
}

/// Exact adjoint of [`unitary_apply`]: with `U = E D` (`D` the Jacobian
/// weight, `E` evaluation of the interpolant at the warped nodes), applies
/// `D E^*`, where `E^* = F^H N` and `N` is the adjoint of the phase sum.
fn unitary_apply_adjoint(spec: GridSpec, phi: &Diffeo, inverted: bool, x: &[C64]) -> Vec<C64> {
    let total = spec.total();
    let n = spec.n;
    let shape = spec.shape();
    let norm = 1.0 / (total as f64).sqrt();
    let freqs = spec.axis_freqs();
    let mut fixed = vec![C64::default(); total];
    let mut z = vec![C64::default(); total];
    let mut t = vec![0.0; spec.d];
    for (j, &xj) in x.iter().enumerate() {
        spec.node(j, &mut t);
        let mapped = mapped_point(phi, inverted, &t);
        if mapped == t {
            // Mirror of the fixed-node path in `unitary_apply`: the row of
            // `U` is `w_j e_j^T`, so the adjoint contributes `w_j x_j` here.
            fixed[j] = sqrt_abs_det(phi, inverted, &t, &mapped) * xj;
            continue;
        }
        let y = xj * sqrt_abs_det(phi, inverted, &t, &mapped) * norm;
        match spec.d {
            1 => {
                for (bin, slot) in z.iter_mut().enumerate() {
                    *slot += y * C64::from_polar(1.0, -freqs[bin] * mapped[0]);
                }
            }
            2 => {
                let mut p1 = vec![C64::default(); n];
                let mut p2 = vec![C64::default(); n];
                for bin in 0..n {
                    p1[bin] = C64::from_polar(1.0, -freqs[bin] * mapped[0]);
                    p2[bin] = C64::from_polar(1.0, -freqs[bin] * mapped[1]);
                }
                for b1 in 0..n {
                    let w = y * p1[b1];
                    let row = &mut z[b1 * n..(b1 + 1) * n];
                    for (slot, &q) in row.iter_mut().zip(&p2) {
                        *slot += w * q;
                    }
                }
            }
            _ => {
                let mut idx = vec![0usize; spec.d];
                for (lin, slot) in z.iter_mut().enumerate() {
                    spec.unravel(lin, &mut idx);
                    let phase: f64 = idx
                        .iter()
                        .zip(&mapped)
                        .map(|(&b, &xm)| -freqs[b] * xm)
                        .sum();
                    *slot += y * C64::from_polar(1.0, phase);
                }
            }
        }
    }
    fft::forward(&mut fixed, &shape);
    for (slot, add) in z.iter_mut().zip(&fixed) {
        *slot += add;
    }
    fft::inverse(&mut z, &shape);
    z
}

/// Identity matrix, column-major.
pub fn dense_identity(total: usize) -> Vec<C64> {
    let mut mat = vec![C64::default(); total * total];
    for j in 0..total {
        mat[j + j * total] = C64::new(1.0, 0.0);
    }
    mat
}

/// `a - b` entrywise.
pub fn dense_sub(a: &[C64], b: &[C64]) -> Vec<C64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// `a + b` entrywise.
pub fn dense_add(a: &[C64], b: &[C64]) -> Vec<C64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// `alpha * a` entrywise.
pub fn dense_scale(a: &[C64], alpha: C64) -> Vec<C64> {
    a.iter().map(|x| x * alpha).collect()
}
