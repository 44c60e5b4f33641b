//! The operator zoo of the calculus: multiplication operators, direction
//! multipliers, frequency multipliers, pseudodifferential-like operators,
//! diffeomorphism unitaries, and Laplace–Beltrami operators, together with
//! the measurement tools used throughout — singular values, compactness
//! scores, and the conjugation-identity residuals.
//!
//! Conventions (fixed across the crate):
//!
//! * `D_k = ∂/(i ∂t_k)` is the Hermitian derivative, a frequency multiplier
//!   by the real value `s_k = 2*pi*kappa/L` with centered representative
//!   `kappa in [-n/2, n/2)`;
//! * `Δ = -Σ_k D_k²`, so `-Δ` is the multiplier `|s|²`;
//! * the Laplace–Beltrami operator is assembled with the sign adjusted so
//!   that `1 - Δ_g` is positive definite.

use crate::diffeo::Diffeo;
use crate::fft;
use crate::grid::{bump_profile, torus_delta, GridFunction, GridSpec};
use crate::interp::Interpolator;
use crate::la;
use crate::linop::{dense_sub, LinOp, DENSE_CAP};
use crate::metric::MetricField;
use crate::symbol::{angle_mode, angle_modes, direction_angle, DirectionSet, Symbol};
use crate::{C64, Error, Result};

/// Condition bound used when validating metric fields at assembly time.
pub(crate) const METRIC_KAPPA: f64 = 1e8;

/// The multiplication operator `π₁(f) = M_f` (position-diagonal).
pub fn mult_op(f: &GridFunction) -> Result<LinOp> {
    LinOp::pos_diag(f.spec, f.values.clone())
}

/// The frequency multiplier `h(∇)`: diagonal value `h(s)` at lattice
/// frequency `s`. Realizes `(1-Δ)^{-r/2}` via `h(s) = (1+|s|²)^{-r/2}`
/// and `-Δ` via `h(s) = |s|²`.
pub fn freq_multiplier(spec: GridSpec, mut h: impl FnMut(&[f64]) -> C64) -> Result<LinOp> {
    let freqs = spec.axis_freqs();
    let total = spec.total();
    let mut bins = vec![0usize; spec.d];
    let mut s = vec![0.0; spec.d];
    let mut diag = Vec::with_capacity(total);
    for lin in 0..total {
        spec.unravel(lin, &mut bins);
        for (a, &b) in bins.iter().enumerate() {
            s[a] = freqs[b];
        }
        diag.push(h(&s));
    }
    LinOp::freq_diag(spec, diag)
}

/// The direction multiplier `π₂(g) = g(∇/√-Δ)`: frequency-diagonal with
/// value `g(s/|s|)` at `s ≠ 0`. The zero frequency — where no direction is
/// defined — takes the mean of `g` over the sampled direction set, the
/// neutral choice consistent with the pseudodifferential-like assembly.
pub fn dir_multiplier(
    spec: GridSpec,
    dirs: &DirectionSet,
    mut g: impl FnMut(&[f64]) -> C64,
) -> Result<LinOp> {
    if dirs.d() != spec.d {
        return Err(Error::Shape(format!(
            "direction set dimension {} != grid dimension {}",
            dirs.d(),
            spec.d
        )));
    }
    let mut mean = C64::default();
    for m in 0..dirs.len() {
        mean += g(dirs.dir(m));
    }
    mean /= dirs.len() as f64;

    let freqs = spec.axis_freqs();
    let total = spec.total();
    let mut bins = vec![0usize; spec.d];
    let mut unit = vec![0.0; spec.d];
    let mut diag = Vec::with_capacity(total);
    for lin in 0..total {
        spec.unravel(lin, &mut bins);
        let mut norm2 = 0.0;
        for (a, &b) in bins.iter().enumerate() {
            unit[a] = freqs[b];
            norm2 += unit[a] * unit[a];
        }
        if norm2 == 0.0 {
            diag.push(mean);
        } else {
            let inv = 1.0 / norm2.sqrt();
            for u in unit.iter_mut() {
                *u *= inv;
            }
            diag.push(g(&unit));
        }
    }
    LinOp::freq_diag(spec, diag)
}

/// The pseudodifferential-like operator of a symbol:
/// `(T_q ξ)(t) = Σ_{s≠0} e^{i<t,s>} q(t, s/|s|) (Fξ)(s)` in the grid's
/// unitary normalization, with the zero frequency weighted by the
/// direction-mean of `q(t, ·)` (the `dir_multiplier` convention).
///
/// Assembly factorizes `q` through its angular modes: `q(t, s/|s|) =
/// Σ_m c_m(t) E_m(θ(s))` with the same centered-mode convention as symbol
/// interpolation, so each mode contributes a row-scaled circulant.
pub fn psdo_like(q: &Symbol) -> Result<LinOp> {
    let spec = q.spec();
    let total = spec.total();
    if total > DENSE_CAP {
        return Err(Error::DenseCap { total, cap: DENSE_CAP });
    }
    let dirs = q.dirs();
    let m_count = dirs.len();

    // Angular mode coefficients c_m(t): DFT of the direction samples.
    let mut coeff = vec![C64::default(); m_count * total];
    let mut slice = vec![C64::default(); m_count];
    for node in 0..total {
        for m in 0..m_count {
            slice[m] = q.value(node, m);
        }
        for (m, c) in angle_modes(&slice).into_iter().enumerate() {
            coeff[m * total + node] = c;
        }
    }

    // Per-mode direction phase on the frequency lattice.
    let freqs = spec.axis_freqs();
    let mut angles = Vec::with_capacity(total);
    let mut bins = vec![0usize; spec.d];
    let mut s = vec![0.0; spec.d];
    for lin in 0..total {
        spec.unravel(lin, &mut bins);
        let mut norm2 = 0.0;
        for (a, &b) in bins.iter().enumerate() {
            s[a] = freqs[b];
            norm2 += s[a] * s[a];
        }
        angles.push(if norm2 == 0.0 { f64::NAN } else { direction_angle(&s) });
    }

    let mut out = vec![C64::default(); total * total];
    for m in 0..m_count {
        let diag: Vec<C64> = angles
            .iter()
            .map(|&theta| {
                if theta.is_nan() {
                    // Zero frequency: only the constant mode passes.
                    if m == 0 { C64::new(1.0, 0.0) } else { C64::default() }
                } else {
                    angle_mode(m, m_count, theta)
                }
            })
            .collect();
        let mode_dense = LinOp::freq_diag(spec, diag)?.to_dense()?;
        let c_m = &coeff[m * total..(m + 1) * total];
        for col in 0..total {
            let src = &mode_dense[col * total..(col + 1) * total];
            let dst = &mut out[col * total..(col + 1) * total];
            for row in 0..total {
                dst[row] += c_m[row] * src[row];
            }
        }
    }
    LinOp::from_dense(spec, out)
}

/// The diffeomorphism unitary `U_Φ ξ = |det J_Φ|^{1/2} (ξ ∘ Φ)`, with `ξ`
/// extended off the grid by periodic Fourier interpolation.
pub fn diffeo_unitary(spec: GridSpec, phi: Diffeo) -> Result<LinOp> {
    LinOp::unitary(spec, phi, false)
}

/// Applies the Hermitian derivative `D_axis = ∂/(i ∂t_axis)` spectrally.
fn dk_apply(spec: GridSpec, x: &[C64], axis: usize) -> Vec<C64> {
    let shape = spec.shape();
    let freqs = spec.axis_freqs();
    let mut buf = x.to_vec();
    fft::forward(&mut buf, &shape);
    let mut bins = vec![0usize; spec.d];
    for (lin, v) in buf.iter_mut().enumerate() {
        spec.unravel(lin, &mut bins);
        *v *= freqs[bins[axis]];
    }
    fft::inverse(&mut buf, &shape);
    buf
}

/// Applies `-Δ` (the multiplier `|s|²`) spectrally.
fn neg_laplace_apply(spec: GridSpec, x: &[C64]) -> Vec<C64> {
    let shape = spec.shape();
    let freqs = spec.axis_freqs();
    let mut buf = x.to_vec();
    fft::forward(&mut buf, &shape);
    let mut bins = vec![0usize; spec.d];
    for (lin, v) in buf.iter_mut().enumerate() {
        spec.unravel(lin, &mut bins);
        let s2: f64 = bins.iter().map(|&b| freqs[b] * freqs[b]).sum();
        *v *= s2;
    }
    fft::inverse(&mut buf, &shape);
    buf
}

/// Laplace–Beltrami action for a fixed metric: shared by the assembly of
/// the operator and of its flat-symmetrized companion.
///
/// With `w_kl = det(g)^{1/2} (g^{-1})_{kl}` and `S = Σ_{k,l} D_k M_{w_kl}
/// D_l`, the operator is `Δ_g = -M_{det^{-1/2}} S`; the companion
/// `B = M_{det^{-1/4}} S M_{det^{-1/4}}` is exactly Hermitian in the flat
/// pairing and similar to `-Δ_g` (conjugation by `M_{det^{-1/4}}`), so the
/// two share a real nonnegative spectrum.
struct LbKernel {
    spec: GridSpec,
    /// `w_kl` per node, node-major `d x d` blocks.
    w: Vec<f64>,
    /// `det(g)^{-1/2}` per node.
    det_m12: Vec<f64>,
    /// `det(g)^{-1/4}` per node.
    det_m14: Vec<f64>,
}

impl LbKernel {
    fn new(g: &MetricField) -> Result<Self> {
        g.validate(METRIC_KAPPA)?;
        let spec = g.spec();
        let total = spec.total();
        let d = spec.d;
        let mut w = vec![0.0; total * d * d];
        let mut det_m12 = vec![0.0; total];
        let mut det_m14 = vec![0.0; total];
        for node in 0..total {
            let det = g.det_at(node);
            let root = det.sqrt();
            det_m12[node] = 1.0 / root;
            det_m14[node] = 1.0 / root.sqrt();
            let inv = g.inverse_at(node);
            for e in 0..d * d {
                w[node * d * d + e] = root * inv[e];
            }
        }
        Ok(LbKernel { spec, w, det_m12, det_m14 })
    }

    /// `S x = Σ_k D_k ( Σ_l w_kl · D_l x )`.
    fn s_apply(&self, x: &[C64]) -> Vec<C64> {
        let spec = self.spec;
        let d = spec.d;
        let total = spec.total();
        let shape = spec.shape();
        let freqs = spec.axis_freqs();
        let derivs: Vec<Vec<C64>> = (0..d).map(|l| dk_apply(spec, x, l)).collect();
        let mut acc_freq = vec![C64::default(); total];
        let mut bins = vec![0usize; d];
        for k in 0..d {
            let mut uk = vec![C64::default(); total];
            for node in 0..total {
                let block = &self.w[node * d * d..(node + 1) * d * d];
                let mut v = C64::default();
                for l in 0..d {
                    v += block[k * d + l] * derivs[l][node];
                }
                uk[node] = v;
            }
            fft::forward(&mut uk, &shape);
            for (lin, &v) in uk.iter().enumerate() {
                spec.unravel(lin, &mut bins);
                acc_freq[lin] += freqs[bins[k]] * v;
            }
        }
        fft::inverse(&mut acc_freq, &shape);
        acc_freq
    }

    /// `Δ_g x = -det^{-1/2} · (S x)`.
    fn lb_apply(&self, x: &[C64]) -> Vec<C64> {
        let mut y = self.s_apply(x);
        for (v, &m) in y.iter_mut().zip(&self.det_m12) {
            *v *= -m;
        }
        y
    }

    /// `B x = det^{-1/4} · S (det^{-1/4} · x)`.
    fn sym_apply(&self, x: &[C64]) -> Vec<C64> {
        let scaled: Vec<C64> = x.iter().zip(&self.det_m14).map(|(&v, &m)| v * m).collect();
        let mut y = self.s_apply(&scaled);
        for (v, &m) in y.iter_mut().zip(&self.det_m14) {
            *v *= m;
        }
        y
    }

    fn materialize(&self, apply: impl Fn(&[C64]) -> Vec<C64>) -> Result<LinOp> {
        let total = self.spec.total();
        if total > DENSE_CAP {
            return Err(Error::DenseCap { total, cap: DENSE_CAP });
        }
        let mut mat = vec![C64::default(); total * total];
        let mut basis = vec![C64::default(); total];
        for col in 0..total {
            basis[col] = C64::new(1.0, 0.0);
            let y = apply(&basis);
            mat[col * total..(col + 1) * total].copy_from_slice(&y);
            basis[col] = C64::default();
        }
        LinOp::from_dense(self.spec, mat)
    }
}

/// The Laplace–Beltrami operator of a metric field, assembled densely as
/// `Δ_g = -M_{det(g)^{-1/2}} Σ_{k,l} D_k M_{det(g)^{1/2} (g^{-1})_{kl}} D_l`
/// (sign adjusted so `1 - Δ_g` is positive definite).
pub fn laplace_beltrami(g: &MetricField) -> Result<LinOp> {
    let kernel = LbKernel::new(g)?;
    kernel.materialize(|x| kernel.lb_apply(x))
}

/// The flat-symmetrized companion `M_{det^{-1/4}} S M_{det^{-1/4}}` of
/// `-Δ_g`: exactly Hermitian in the plain pairing and similar to `-Δ_g`,
/// hence the preferred form for spectral work (eigenvalues, powers).
pub fn laplace_beltrami_sym(g: &MetricField) -> Result<LinOp> {
    let kernel = LbKernel::new(g)?;
    kernel.materialize(|x| kernel.sym_apply(x))
}

/// Relative deviation of `Δ_g` from self-adjointness in the
/// `det(g)^{1/2}`-weighted pairing: `‖A - W^{-1} A* W‖_F / ‖A‖_F` with
/// `W = M_{det(g)^{1/2}}` and `A*` the plain conjugate transpose.
pub fn weighted_self_adjoint_deviation(g: &MetricField) -> Result<f64> {
    let kernel = LbKernel::new(g)?;
    let total = kernel.spec.total();
    let a = kernel.materialize(|x| kernel.lb_apply(x))?.to_dense()?;
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for col in 0..total {
        for row in 0..total {
            let a_rc = a[col * total + row];
            // (W^{-1} A* W)_{rc} = conj(A_{cr}) * w_c / w_r.
            let w_ratio = kernel.det_m12[row] / kernel.det_m12[col];
            let adj = a[row * total + col].conj() * w_ratio;
            num += (a_rc - adj).norm_sqr();
            den += a_rc.norm_sqr();
        }
    }
    Ok((num / den).sqrt())
}

/// The commutator `[A, B] = AB - BA`, materialized densely.
pub fn commutator(a: &LinOp, b: &LinOp) -> Result<LinOp> {
    if a.spec() != b.spec() {
        return Err(Error::Shape("commutator operands live on different grids".into()));
    }
    let total = a.spec().total();
    let ad = a.to_dense()?;
    let bd = b.to_dense()?;
    let ab = la::matmul(&ad, &bd, total, total, total);
    let ba = la::matmul(&bd, &ad, total, total, total);
    LinOp::from_dense(a.spec(), dense_sub(&ab, &ba))
}

/// Singular values of an operator, in decreasing order (`total` of them).
///
/// Diagonal operators short-circuit to sorted absolute diagonal values;
/// everything else is materialized and sent to LAPACK (a real SVD when the
/// matrix is real up to roundoff, a complex SVD otherwise).
pub fn singular_values(a: &LinOp) -> Result<Vec<f64>> {
    match a {
        LinOp::PosDiag { diag, .. } | LinOp::FreqDiag { diag, .. } => {
            let mut s: Vec<f64> = diag.iter().map(|v| v.norm()).collect();
            s.sort_by(|x, y| y.partial_cmp(x).unwrap());
            Ok(s)
        }
        _ => {
            let total = a.spec().total();
            let dense = a.to_dense()?;
            let max_im = dense.iter().map(|v| v.im.abs()).fold(0.0, f64::max);
            let max_re = dense.iter().map(|v| v.re.abs()).fold(0.0, f64::max);
            if max_im <= 1e-12 * max_re {
                let real: Vec<f64> = dense.iter().map(|v| v.re).collect();
                la::singular_values_real(real, total, total)
            } else {
                la::singular_values_complex(dense, total, total)
            }
        }
    }
}

/// Compactness report from the singular-value profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompactnessScore {
    /// `μ(total/4) / μ(0)`: the relative level of the spectral tail.
    pub tail_ratio: f64,
    /// Log-log slope of `μ(k)` against `k` on `k in [total/16, total/4]`.
    pub decay_exponent: f64,
}

/// Operators whose top singular value sits at or below this level are
/// treated as zero by [`compactness_score`]. Every operator in this
/// laboratory is O(1)-normalized, so a norm at roundoff scale means the
/// operator vanishes up to floating-point noise and its singular-value
/// profile is meaningless ratios of rounding errors.
pub const COMPACTNESS_ZERO_FLOOR: f64 = 1e-12;

/// Scores how compact an operator looks at this resolution: small tail
/// ratios and steep negative decay exponents are compact-like; operators
/// that are zero up to roundoff ([`COMPACTNESS_ZERO_FLOOR`]) report zeros.
pub fn compactness_score(a: &LinOp) -> Result<CompactnessScore> {
    let mu = singular_values(a)?;
    let total = mu.len();
    let mu0 = mu[0];
    if mu0 <= COMPACTNESS_ZERO_FLOOR {
        return Ok(CompactnessScore { tail_ratio: 0.0, decay_exponent: 0.0 });
    }
    let tail_ratio = mu[total / 4] / mu0;
    // Values below the relative machine floor are clamped before the log
    // fit; the fitted slope then saturates instead of overflowing.
    let floor = mu0 * 1e-18;
    let lo = (total / 16).max(1);
    let hi = total / 4;
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut count = 0.0;
    for k in lo..=hi {
        let x = (k as f64).ln();
        let y = mu[k].max(floor).ln();
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
        count += 1.0;
    }
    let det = count * sxx - sx * sx;
    let decay_exponent = if det.abs() < 1e-30 { 0.0 } else { (count * sxy - sx * sy) / det };
    Ok(CompactnessScore { tail_ratio, decay_exponent })
}

/// Envelope family for conjugation-identity test vectors.
///
/// `Wide` covers the whole support ball (radius `0.8 ρ` bump), appropriate
/// for maps that are smooth throughout. `AffineCore` concentrates on the
/// region where the stretch map is exactly linear (radius `0.2 ρ`, a bump
/// window times a Gaussian of deviation `0.05 ρ`): wider envelopes see the
/// profile's junctions, narrower plain bumps are under-resolved after the
/// slope-2 compression.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConjugationVectors {
    Wide,
    AffineCore,
}

/// The fixed test vectors: radial envelopes at the domain center modulated
/// by carriers `e^{i kappa (2 pi / L) t_axis}` with `kappa in {0, ±n/16,
/// ±n/8}` along every axis, each normalized in plain l2.
fn conjugation_test_vectors(spec: GridSpec, family: ConjugationVectors) -> Vec<Vec<C64>> {
    let l = spec.length;
    let rho = l / 4.0;
    let c = l / 2.0;
    let n = spec.n as i64;
    let carriers: Vec<i64> = vec![0, n / 16, -(n / 16), n / 8, -(n / 8)];
    let total = spec.total();
    let mut point = vec![0.0; spec.d];

    let envelope = |r: f64| -> f64 {
        match family {
            ConjugationVectors::Wide => bump_profile(r / (0.8 * rho)),
            ConjugationVectors::AffineCore => {
                let rsup = 0.2 * rho;
                let sigma = rsup / 4.0;
                bump_profile(r / rsup) * (-(r / sigma) * (r / sigma)).exp()
            }
        }
    };

    let mut vectors = Vec::new();
    for axis in 0..spec.d {
        for &kappa in &carriers {
            if axis > 0 && kappa == 0 {
                continue; // the zero carrier is axis-independent
            }
            let lambda = kappa as f64 * 2.0 * std::f64::consts::PI / l;
            let mut v = vec![C64::default(); total];
            let mut norm_sq = 0.0;
            for (node, slot) in v.iter_mut().enumerate() {
                spec.node(node, &mut point);
                let mut r2 = 0.0;
                for &x in &point {
                    let dt = torus_delta(x - c, l);
                    r2 += dt * dt;
                }
                let env = envelope(r2.sqrt());
                if env != 0.0 {
                    *slot = C64::from_polar(env, lambda * point[axis]);
                    norm_sq += env * env;
                }
            }
            let inv = 1.0 / norm_sq.sqrt();
            for slot in v.iter_mut() {
                *slot *= inv;
            }
            vectors.push(v);
        }
    }
    vectors
}

/// Conjugation coefficient fields shared by the first- and second-order
/// residuals, all sampled at the grid nodes `t`:
///
/// * `jac` — `J_Φ(Φ^{-1}(t))` (analytic, row-major blocks), so that
///   `a_{k,l}(t) = (J_Φ* ∘ Φ^{-1})_{k,l} = jac[l*d + k]`;
/// * `a_dir` — `a_k(t) = ((D_k w)/w) ∘ Φ^{-1}` with `w = |det J_Φ|^{1/2}`,
///   the derivative taken spectrally on the grid field `w` and the
///   composition by trigonometric interpolation.
struct ConjCoeffs {
    jac: Vec<f64>,
    a_dir: Vec<C64>,
}

fn conj_coeffs(spec: GridSpec, phi: &Diffeo) -> ConjCoeffs {
    let total = spec.total();
    let d = spec.d;
    let mut qinv = vec![0.0; total * d];
    let mut jac = vec![0.0; total * d * d];
    let mut point = vec![0.0; d];
    for node in 0..total {
        spec.node(node, &mut point);
        let q = phi.inverse(&point);
        let j = phi.jacobian(&q);
        qinv[node * d..(node + 1) * d].copy_from_slice(&q);
        jac[node * d * d..(node + 1) * d * d].copy_from_slice(&j);
    }

    let w12 = GridFunction::from_real_fn(spec, |t| phi.det_jacobian(t).abs().sqrt());
    let mut a_dir = vec![C64::default(); d * total];
    for k in 0..d {
        let dkw = dk_apply(spec, &w12.values, k);
        let ratio = GridFunction {
            spec,
            values: dkw.iter().zip(&w12.values).map(|(&num, &den)| num / den).collect(),
        };
        let interp = Interpolator::new(&ratio);
        for node in 0..total {
            a_dir[k * total + node] = interp.eval(&qinv[node * d..(node + 1) * d]);
        }
    }
    ConjCoeffs { qinv, jac, a_dir }
}

/// First-order conjugation residual: the worst relative defect of
/// `U_Φ^{-1} D_axis U_Φ = Σ_l M_{a_{axis,l}} D_l + M_{a_axis}` over the
/// fixed test vectors, with both sides assembled from this module's
/// primitives.
pub fn conjugation_residual_d(
    spec: GridSpec,
    phi: &Diffeo,
    axis: usize,
    family: ConjugationVectors,
) -> Result<f64> {
    if phi.d() != spec.d || axis >= spec.d {
        return Err(Error::Shape("diffeomorphism/axis incompatible with grid".into()));
    }
    let total = spec.total();
    let d = spec.d;
    let coeffs = conj_coeffs(spec, phi);
    let u = LinOp::unitary(spec, phi.clone(), false)?;
    let u_inv = LinOp::unitary(spec, phi.clone(), true)?;

    let mut worst = 0.0f64;
    for v in conjugation_test_vectors(spec, family) {
        let lhs = u_inv.apply(&dk_apply(spec, &u.apply(&v), axis));
        let derivs: Vec<Vec<C64>> = (0..d).map(|l| dk_apply(spec, &v, l)).collect();
        let mut rhs = vec![C64::default(); total];
        for node in 0..total {
            let block = &coeffs.jac[node * d * d..(node + 1) * d * d];
            let mut acc = coeffs.a_dir[axis * total + node] * v[node];
            for l in 0..d {
                // a_{axis,l}(t) = (J_Φ*)_{axis,l} at Φ^{-1}(t) = J[l,axis].
                acc += block[l * d + axis] * derivs[l][node];
            }
            rhs[node] = acc;
        }
        let mut err = 0.0f64;
        for node in 0..total {
            err += (lhs[node] - rhs[node]).norm_sqr();
        }
        worst = worst.max(err.sqrt());
    }
    Ok(worst)
}

/// Second-order conjugation residual: the worst relative defect of
/// `-U_Φ^{-1} Δ U_Φ = Σ D_{l1} M_{b_{l1,l2}} D_{l2} + Σ M_{b_l} D_l + M_b`
/// with `b_{l1,l2} = Σ_k conj(a_{k,l1}) a_{k,l2}`,
/// `b_l = 2 Σ_k Re(conj(a_k) a_{k,l})`, and
/// `b = Σ_l D_l(Σ_k conj(a_{k,l}) a_k) + Σ_k |a_k|²`.
pub fn conjugation_residual_lap(
    spec: GridSpec,
    phi: &Diffeo,
    family: ConjugationVectors,
) -> Result<f64> {
    if phi.d() != spec.d {
        return Err(Error::Shape("diffeomorphism dimension mismatch".into()));
    }
    let total = spec.total();
    let d = spec.d;
    let coeffs = conj_coeffs(spec, phi);
    let u = LinOp::unitary(spec, phi.clone(), false)?;
    let u_inv = LinOp::unitary(spec, phi.clone(), true)?;

    // b_{l1,l2}(t) = Σ_k jac[l1,k] jac[l2,k] (J J^T at the inverse point),
    // real; b_l and b as documented above.
    let mut b_scalar = vec![C64::default(); total];
    for node in 0..total {
        let mut sum_sq = 0.0;
        for k in 0..d {
            sum_sq += coeffs.a_dir[k * total + node].norm_sqr();
        }
        b_scalar[node] = C64::new(sum_sq, 0.0);
    }
    for l in 0..d {
        let p_l: Vec<C64> = (0..total)
            .map(|node| {
                let block = &coeffs.jac[node * d * d..(node + 1) * d * d];
                let mut acc = C64::default();
                for k in 0..d {
                    acc += block[l * d + k] * coeffs.a_dir[k * total + node];
                }
                acc
            })
            .collect();
        let dl_p = dk_apply(spec, &p_l, l);
        for node in 0..total {
            b_scalar[node] += dl_p[node];
        }
    }

    let mut worst = 0.0f64;
    for v in conjugation_test_vectors(spec, family) {
        let lhs = u_inv.apply(&neg_laplace_apply(spec, &u.apply(&v)));

        let derivs: Vec<Vec<C64>> = (0..d).map(|l| dk_apply(spec, &v, l)).collect();
        let mut rhs = vec![C64::default(); total];
        // Second-order block: Σ_{l1} D_{l1}( Σ_{l2} b_{l1,l2} · D_{l2} v ).
        for l1 in 0..d {
            let inner: Vec<C64> = (0..total)
                .map(|node| {
                    let block = &coeffs.jac[node * d * d..(node + 1) * d * d];
                    let mut acc = C64::default();
                    for l2 in 0..d {
                        let mut b12 = 0.0;
                        for k in 0..d {
                            b12 += block[l1 * d + k] * block[l2 * d + k];
                        }
                        acc += b12 * derivs[l2][node];
                    }
                    acc
                })
                .collect();
            let outer = dk_apply(spec, &inner, l1);
            for node in 0..total {
                rhs[node] += outer[node];
            }
        }
        // First-order block Σ_l b_l D_l v and the scalar block b · v.
        for node in 0..total {
            let block = &coeffs.jac[node * d * d..(node + 1) * d * d];
            for l in 0..d {
                let mut b_l = 0.0;
                for k in 0..d {
                    b_l += 2.0 * block[l * d + k] * coeffs.a_dir[k * total + node].re;
                }
                rhs[node] += b_l * derivs[l][node];
            }
            rhs[node] += b_scalar[node] * v[node];
        }

        let mut err = 0.0f64;
        for node in 0..total {
            err += (lhs[node] - rhs[node]).norm_sqr();
        }
        worst = worst.max(err.sqrt());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{bump, make_grid};
    use crate::linop::dense_matvec;
    use crate::symbol::{symbol_algebra, symbol_of_dir, symbol_of_mult, Symbol, SymbolOp};

    const L: f64 = 2.0 * std::f64::consts::PI;

    fn band_limited_vector(spec: GridSpec, max_band: i64) -> Vec<C64> {
        // Deterministic band-limited test vector: a fixed mix of harmonics.
        GridFunction::from_fn(spec, |t| {
            let mut acc = C64::default();
            for (j, &k) in [1i64, 3, -2, max_band / 2, max_band].iter().enumerate() {
                let phase: f64 = t.iter().map(|&x| k as f64 * 2.0 * std::f64::consts::PI / L * x).sum();
                acc += C64::from_polar(1.0 / (j as f64 + 1.0), phase + 0.7 * j as f64);
            }
            acc
        })
        .values
    }

    #[test]
    fn mult_op_norm_is_exact_sup() {
        let spec = make_grid(1, 64, L).unwrap();
        let f = bump(spec, &[L / 2.0], L / 4.0).unwrap();
        let op = mult_op(&f).unwrap();
        let mu = singular_values(&op).unwrap();
        assert_eq!(mu[0], 1.0);
        assert_eq!(mu.len(), 64);

        let ones = GridFunction::constant(spec, C64::new(1.0, 0.0));
        let id = mult_op(&ones).unwrap();
        let x = band_limited_vector(spec, 16);
        assert_eq!(id.apply(&x), x);
    }

    #[test]
    fn dir_multiplier_sign_and_zero_frequency_mean() {
        let spec = make_grid(1, 32, L).unwrap();
        let dirs = DirectionSet::line();
        let op = dir_multiplier(spec, &dirs, |s| C64::new(s[0], 0.0)).unwrap();
        let LinOp::FreqDiag { diag, .. } = &op else { panic!("expected freq diag") };
        for bin in 0..spec.n {
            let k = spec.bin_to_k(bin);
            if k == 0 {
                assert_eq!(diag[bin], C64::default()); // mean of {+1, -1}
            } else {
                assert_eq!(diag[bin], C64::new((k as f64).signum(), 0.0));
            }
        }

        // sgn-limit property: odd roots of the sign are the sign already on
        // the unit sphere, for every m.
        for m in [0usize, 1, 5, 20] {
            let p = 1.0 / (2.0 * m as f64 + 1.0);
            let op_m =
                dir_multiplier(spec, &dirs, |s| C64::new(s[0].signum() * s[0].abs().powf(p), 0.0))
                    .unwrap();
            let LinOp::FreqDiag { diag: dm, .. } = &op_m else { panic!() };
            for bin in 0..spec.n {
                if spec.bin_to_k(bin) != 0 {
                    assert_eq!(dm[bin], diag[bin]);
                }
            }
        }
    }

    #[test]
    fn dir_multiplier_diagonal_algebra() {
        let spec = make_grid(2, 8, L).unwrap();
        let dirs = DirectionSet::circle(16).unwrap();
        let g1 = |s: &[f64]| C64::new(s[0] + 0.2, 0.3 * s[1]);
        let g2 = |s: &[f64]| C64::new(0.5 - s[1], s[0]);
        let a = dir_multiplier(spec, &dirs, g1).unwrap();
        let b = dir_multiplier(spec, &dirs, g2).unwrap();
        let prod = dir_multiplier(spec, &dirs, |s| g1(s) * g2(s)).unwrap();
        let (LinOp::FreqDiag { diag: da, .. }, LinOp::FreqDiag { diag: db, .. }) = (&a, &b) else {
            panic!()
        };
        let LinOp::FreqDiag { diag: dp, .. } = &prod else { panic!() };
        let mut bins = vec![0usize; 2];
        for lin in 0..spec.total() {
            spec.unravel(lin, &mut bins);
            if bins.iter().all(|&b| spec.bin_to_k(b) == 0) {
                continue; // zero frequency composes means, not products
            }
            assert!((da[lin] * db[lin] - dp[lin]).norm() < 1e-15);
        }
    }

    #[test]
    fn freq_multiplier_eigenvalues() {
        let spec = make_grid(1, 32, L).unwrap();
        // h(s) = |s|^2 on the first harmonic.
        let op = freq_multiplier(spec, |s| C64::new(s[0] * s[0], 0.0)).unwrap();
        let base = 2.0 * std::f64::consts::PI / L;
        let wave = GridFunction::from_fn(spec, |t| C64::from_polar(1.0, base * t[0]));
        let y = op.apply(&wave.values);
        for (got, want) in y.iter().zip(&wave.values) {
            assert!((got - want * base.powi(2)).norm() < 1e-12);
        }
        // (1-Δ)^{-1/2} eigenvalue at the same frequency.
        let res = freq_multiplier(spec, |s| {
            C64::new(1.0 / (1.0 + s[0] * s[0]).sqrt(), 0.0)
        })
        .unwrap();
        let y = res.apply(&wave.values);
        let want = 1.0 / (1.0 + base * base).sqrt();
        for (got, x) in y.iter().zip(&wave.values) {
            assert!((got - x * want).norm() < 1e-12);
        }
    }

    #[test]
    fn psdo_like_factorizes_pure_tensors() {
        let spec = make_grid(1, 64, L).unwrap();
        let dirs = DirectionSet::line();
        let f = bump(spec, &[L / 2.0], 0.45 * L).unwrap();

        // Direction-independent symbol is exactly the multiplication operator.
        let qf = symbol_of_mult(&f, dirs.clone()).unwrap();
        let tf = psdo_like(&qf).unwrap().to_dense().unwrap();
        let mf = mult_op(&f).unwrap().to_dense().unwrap();
        let err = tf.iter().zip(&mf).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-12, "psdo vs mult {err}");

        // Position-independent symbol is exactly the direction multiplier.
        let g = |s: &[f64]| C64::new(0.7 + 0.3 * s[0].signum(), 0.0);
        let qg = symbol_of_dir(spec, dirs.clone(), g).unwrap();
        let tg = psdo_like(&qg).unwrap().to_dense().unwrap();
        let dg = dir_multiplier(spec, &dirs, g).unwrap().to_dense().unwrap();
        let err = tg.iter().zip(&dg).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-12, "psdo vs dir {err}");
    }

    #[test]
    fn psdo_like_tensor_deviation_from_product_is_compact() {
        let spec = make_grid(1, 256, L).unwrap();
        let dirs = DirectionSet::line();
        let f = bump(spec, &[L / 2.0], 0.45 * L).unwrap();
        let g = |s: &[f64]| C64::new(0.7 + 0.3 * s[0].signum(), 0.0);
        let q = symbol_algebra(
            &symbol_of_mult(&f, dirs.clone()).unwrap(),
            Some(&symbol_of_dir(spec, dirs.clone(), g).unwrap()),
            SymbolOp::Mul,
        )
        .unwrap();
        let t_q = psdo_like(&q).unwrap();
        let product = LinOp::compose(vec![
            mult_op(&f).unwrap(),
            dir_multiplier(spec, &dirs, g).unwrap(),
        ])
        .unwrap();
        let diff = LinOp::from_dense(
            spec,
            dense_sub(&t_q.to_dense().unwrap(), &product.to_dense().unwrap()),
        )
        .unwrap();
        // The assembly expands q over angular modes, and for a pure tensor
        // f(t) g(s) that expansion reproduces M_f after the frequency
        // diagonal exactly. The deviation is therefore compact in the
        // strongest possible sense: zero to machine precision, which the
        // score reports through its zero floor.
        let mu = singular_values(&diff).unwrap();
        assert!(mu[0] < COMPACTNESS_ZERO_FLOOR, "deviation norm {}", mu[0]);
        let score = compactness_score(&diff).unwrap();
        assert_eq!((score.tail_ratio, score.decay_exponent), (0.0, 0.0));
        assert!(score.tail_ratio < 0.05);
    }

    #[test]
    fn psdo_like_adjoint_matches_dense_conjugate_transpose() {
        let spec = make_grid(1, 32, L).unwrap();
        let dirs = DirectionSet::line();
        let q = Symbol::from_fn(spec, dirs, |t, s| {
            C64::new((t[0]).sin() + 0.2 * s[0], 0.4 * (t[0] * 0.5).cos())
        })
        .unwrap();
        let op = psdo_like(&q).unwrap();
        let dense = op.to_dense().unwrap();
        let x = band_limited_vector(spec, 8);
        let via_op = op.apply_adjoint(&x);
        let total = spec.total();
        let mut conj_t = vec![C64::default(); total * total];
        for col in 0..total {
            for row in 0..total {
                conj_t[col * total + row] = dense[row * total + col].conj();
            }
        }
        let via_dense = dense_matvec(&conj_t, &x, total);
        for (a, b) in via_op.iter().zip(&via_dense) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn diffeo_unitary_is_unitary_and_composes() {
        let spec = make_grid(1, 512, L).unwrap();
        let phi1 = Diffeo::smooth_displacement_1d(L, 0.35).unwrap();
        let phi2 = Diffeo::stretch_1d(L);
        // Band n/8: the warp slopes reach 2, so content up to n/8 stays
        // well inside Nyquist after mapping. At band n/4 the warped
        // spectrum crowds Nyquist and the exact discrete adjoint honestly
        // reports the aliasing (defect jumps from ~5e-8 to ~5e-2).
        let x = band_limited_vector(spec, (spec.n / 8) as i64);
        let norm_x: f64 = x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();

        let u1 = diffeo_unitary(spec, phi1.clone()).unwrap();
        let back = u1.adjoint().apply(&u1.apply(&x));
        let err: f64 = back
            .iter()
            .zip(&x)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt()
            / norm_x;
        assert!(err < 1e-6, "U*U defect {err}");

        // U_{phi1 ∘ phi2} = U_{phi2} U_{phi1} on band-limited vectors.
        let u2 = diffeo_unitary(spec, phi2.clone()).unwrap();
        let composed =
            diffeo_unitary(spec, Diffeo::compose(phi1.clone(), phi2.clone()).unwrap()).unwrap();
        let lhs = composed.apply(&x);
        let rhs = u2.apply(&u1.apply(&x));
        let err: f64 = lhs
            .iter()
            .zip(&rhs)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt()
            / norm_x;
        assert!(err < 1e-6, "composition defect {err}");
    }

    #[test]
    fn laplace_beltrami_flat_and_scaled_metrics() {
        let spec = make_grid(1, 64, L).unwrap();
        let x = band_limited_vector(spec, 16);

        let flat = laplace_beltrami(&MetricField::flat(spec)).unwrap();
        let reference = freq_multiplier(spec, |s| {
            C64::new(-(s.iter().map(|v| v * v).sum::<f64>()), 0.0)
        })
        .unwrap();
        let got = flat.apply(&x);
        let want = reference.apply(&x);
        let err = got.iter().zip(&want).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-9, "flat Laplace–Beltrami defect {err}");

        // g = c·I scales the flat operator by 1/c.
        let c = 2.5;
        let scaled = laplace_beltrami(&MetricField::diagonal_const(spec, &[c]).unwrap()).unwrap();
        let got = scaled.apply(&x);
        let err = got
            .iter()
            .zip(&want)
            .map(|(a, b)| (a - b / c).norm())
            .fold(0.0, f64::max);
        assert!(err < 1e-9, "scaled metric defect {err}");
    }

    #[test]
    fn laplace_beltrami_weighted_self_adjointness_and_positivity() {
        let spec = make_grid(1, 128, L).unwrap();
        let u = bump(spec, &[L / 2.0], L / 4.0).unwrap();
        let scaled = GridFunction {
            spec,
            values: u.values.iter().map(|v| 0.4 * v).collect(),
        };
        let metric = MetricField::conformal(&scaled);
        let dev = weighted_self_adjoint_deviation(&metric).unwrap();
        assert!(dev < 1e-8, "weighted self-adjointness deviation {dev}");

        // The flat-symmetrized companion is Hermitian and PSD, so 1 - Δ_g
        // (similar to 1 + B) is positive definite.
        let b = laplace_beltrami_sym(&metric).unwrap();
        let mut dense = b.to_dense().unwrap();
        let herm_defect = {
            let total = spec.total();
            let mut worst = 0.0f64;
            for col in 0..total {
                for row in 0..total {
                    let d = (dense[col * total + row] - dense[row * total + col].conj()).norm();
                    worst = worst.max(d);
                }
            }
            worst
        };
        assert!(herm_defect < 1e-9, "flat-symmetrized Hermitian defect {herm_defect}");
        let eigs = la::eigh(&mut dense, spec.total()).unwrap();
        assert!(eigs[0] > -1e-9, "companion not PSD: min eig {}", eigs[0]);
    }

    #[test]
    fn commutators_of_commuting_families_vanish() {
        let spec = make_grid(1, 32, L).unwrap();
        let dirs = DirectionSet::line();
        let f1 = bump(spec, &[L / 2.0], L / 3.0).unwrap();
        let f2 = GridFunction::from_real_fn(spec, |t| (t[0]).cos() + 2.0);
        let a = mult_op(&f1).unwrap();
        let b = mult_op(&f2).unwrap();
        let zero = commutator(&a, &b).unwrap().to_dense().unwrap();
        assert!(zero.iter().all(|v| v.norm() < 1e-14));

        let aa = commutator(&a, &a).unwrap().to_dense().unwrap();
        assert!(aa.iter().all(|v| v.norm() == 0.0));

        let g1 = dir_multiplier(spec, &dirs, |s| C64::new(s[0], 0.0)).unwrap();
        let g2 = dir_multiplier(spec, &dirs, |s| C64::new(0.3 + s[0], 0.0)).unwrap();
        let zero = commutator(&g1, &g2).unwrap().to_dense().unwrap();
        assert!(zero.iter().all(|v| v.norm() < 1e-14));

        let other = make_grid(1, 64, L).unwrap();
        let f3 = bump(other, &[L / 2.0], L / 3.0).unwrap();
        assert!(commutator(&a, &mult_op(&f3).unwrap()).is_err());
    }

    #[test]
    fn singular_value_paths_agree() {
        let spec = make_grid(1, 32, L).unwrap();
        let f = GridFunction::from_real_fn(spec, |t| 1.0 + 0.5 * (t[0]).sin());
        let diag_fast = singular_values(&mult_op(&f).unwrap()).unwrap();
        let dense = mult_op(&f).unwrap().to_dense().unwrap();
        let diag_dense = singular_values(&LinOp::from_dense(spec, dense).unwrap()).unwrap();
        for (a, b) in diag_fast.iter().zip(&diag_dense) {
            assert!((a - b).abs() < 1e-12);
        }
        let mut sorted: Vec<f64> = f.values.iter().map(|v| v.norm()).collect();
        sorted.sort_by(|x, y| y.partial_cmp(x).unwrap());
        assert_eq!(diag_fast, sorted);

        // Rank-one projector e ⊗ e.
        let total = spec.total();
        let e: Vec<C64> = (0..total)
            .map(|j| C64::from_polar(1.0 / (total as f64).sqrt(), 0.1 * j as f64))
            .collect();
        let mut mat = vec![C64::default(); total * total];
        for col in 0..total {
            for row in 0..total {
                mat[col * total + row] = e[row] * e[col].conj();
            }
        }
        let mu = singular_values(&LinOp::from_dense(spec, mat).unwrap()).unwrap();
        assert!((mu[0] - 1.0).abs() < 1e-12);
        assert!(mu[1] < 1e-12);
    }

    #[test]
    fn compactness_scores_flag_the_right_operators() {
        let spec = make_grid(1, 256, L).unwrap();
        let total = spec.total();

        let id = freq_multiplier(spec, |_| C64::new(1.0, 0.0)).unwrap();
        let score = compactness_score(&id).unwrap();
        assert_eq!(score.tail_ratio, 1.0);
        assert!(score.decay_exponent.abs() < 1e-12);

        // diag(1/(k+1)) has tail ratio 4/(total+4)-ish and slope near -1.
        let diag: Vec<C64> = (0..total).map(|k| C64::new(1.0 / (k as f64 + 1.0), 0.0)).collect();
        let op = LinOp::pos_diag(spec, diag).unwrap();
        let score = compactness_score(&op).unwrap();
        assert!((score.tail_ratio - 1.0 / (total as f64 / 4.0 + 1.0)).abs() < 1e-12);
        assert!(
            score.decay_exponent < -0.9 && score.decay_exponent > -1.05,
            "slope {}",
            score.decay_exponent
        );

        // [M_bump, sgn(D)] is compact-like at n = 256.
        let dirs = DirectionSet::line();
        let f = bump(spec, &[L / 2.0], L / 4.0).unwrap();
        let sgn = dir_multiplier(spec, &dirs, |s| C64::new(s[0], 0.0)).unwrap();
        let comm = commutator(&mult_op(&f).unwrap(), &sgn).unwrap();
        let score = compactness_score(&comm).unwrap();
        assert!(score.tail_ratio < 0.05, "commutator tail {}", score.tail_ratio);

        let zero = LinOp::pos_diag(spec, vec![C64::default(); total]).unwrap();
        let score = compactness_score(&zero).unwrap();
        assert_eq!((score.tail_ratio, score.decay_exponent), (0.0, 0.0));
    }

    #[test]
    fn conjugation_residuals_vanish_for_identity() {
        let spec = make_grid(1, 256, L).unwrap();
        let id = Diffeo::identity(1, L);
        let rd = conjugation_residual_d(spec, &id, 0, ConjugationVectors::Wide).unwrap();
        let rl = conjugation_residual_lap(spec, &id, ConjugationVectors::Wide).unwrap();
        assert!(rd < 1e-10, "identity D residual {rd}");
        assert!(rl < 1e-10, "identity Laplacian residual {rl}");
    }

    #[test]
    fn conjugation_residuals_stretch_on_adapted_vectors() {
        let spec = make_grid(1, 1024, L).unwrap();
        let phi = Diffeo::stretch_1d(L);
        let rd = conjugation_residual_d(spec, &phi, 0, ConjugationVectors::AffineCore).unwrap();
        let rl = conjugation_residual_lap(spec, &phi, ConjugationVectors::AffineCore).unwrap();
        assert!(rd < 1e-3, "stretch D residual {rd}");
        assert!(rl < 1e-3, "stretch Laplacian residual {rl}");
    }

    #[test]
    fn conjugation_residuals_smooth_map_converge_in_n() {
        let phi = Diffeo::smooth_displacement_1d(L, 0.35).unwrap();
        let mut rd = Vec::new();
        let mut rl = Vec::new();
        for n in [512usize, 1024] {
            let spec = make_grid(1, n, L).unwrap();
            rd.push(conjugation_residual_d(spec, &phi, 0, ConjugationVectors::Wide).unwrap());
            rl.push(conjugation_residual_lap(spec, &phi, ConjugationVectors::Wide).unwrap());
        }
        assert!(rd[1] < 1e-3, "smooth D residual at n=1024: {}", rd[1]);
        assert!(rl[1] < 1e-3, "smooth Laplacian residual at n=1024: {}", rl[1]);
        assert!(rd[1] < rd[0] / 1.5, "no D convergence: {rd:?}");
        assert!(rl[1] < rl[0] / 1.5, "no Laplacian convergence: {rl:?}");
    }
}
