//! Principal symbols on the unit cotangent bundle of the grid torus.
//!
//! A symbol is a complex field on `grid nodes x direction set`, the discrete
//! stand-in for a function on the unit sphere bundle. The module provides
//!
//! * [`DirectionSet`] — the sampled unit sphere (`{-1,+1}` for `d = 1`,
//!   equally spaced angles for `d = 2`), closed under `s -> -s`;
//! * [`Symbol`] — the field itself with pointwise *-algebra operations;
//! * [`theta_pullback`] — the cotangent pullback `a -> a ∘ Θ_Φ` with
//!   `Θ_Φ(t, s) = (Φ⁻¹(t), O_{J_Φ*(Φ⁻¹(t))} s)` and `O_A s = As/|As|`;
//! * [`probe_symbol`] — wave-packet probing of an operator's symbol with
//!   Richardson extrapolation in the packet frequency.
//!
//! Off-grid symbol values are defined by trigonometric interpolation in the
//! base point and trigonometric interpolation on the angle, so that symbols
//! and their pullbacks are evaluable at arbitrary `(point, direction)` pairs.

use crate::diffeo::Diffeo;
use crate::grid::{bump_profile, torus_delta, transform, GridFunction, GridSpec};
use crate::interp::Interpolator;
use crate::linop::LinOp;
use crate::{C64, Error, Result};

/// A finite sampling of the unit sphere `S^{d-1}`, closed under negation.
///
/// For `d = 1` the set is exactly `{+1, -1}`; for `d = 2` it consists of `M`
/// equally spaced angles `2*pi*m/M` with `M` a positive multiple of 4 (so the
/// set contains the coordinate directions and is closed under `s -> -s`).
/// Both cases are uniform samplings in angle, which lets one interpolation
/// rule (trigonometric in the angle) serve every dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionSet {
    d: usize,
    /// Flattened direction vectors, `d`-major: entry `m*d + a`.
    dirs: Vec<f64>,
}

impl DirectionSet {
    /// The two directions of the line, in the order `[+1, -1]`.
    pub fn line() -> Self {
        DirectionSet { d: 1, dirs: vec![1.0, -1.0] }
    }

    /// `m` equally spaced unit vectors in the plane, angles `2*pi*j/m`.
    ///
    /// `m` must be a positive multiple of 4.
    pub fn circle(m: usize) -> Result<Self> {
        if m == 0 || m % 4 != 0 {
            return Err(Error::Domain(format!(
                "direction count {m} must be a positive multiple of 4"
            )));
        }
        let mut dirs = Vec::with_capacity(2 * m);
        for j in 0..m {
            let theta = 2.0 * std::f64::consts::PI * j as f64 / m as f64;
            dirs.push(theta.cos());
            dirs.push(theta.sin());
        }
        Ok(DirectionSet { d: 2, dirs })
    }

    /// Default direction set for dimension `d` (16 angles when `d = 2`).
    pub fn for_dim(d: usize) -> Result<Self> {
        match d {
            1 => Ok(Self::line()),
            2 => Self::circle(16),
            _ => Err(Error::Domain(format!("no direction set for dimension {d}"))),
        }
    }

    /// Spatial dimension of the ambient space.
    pub fn d(&self) -> usize {
        self.d
    }

    /// Number of sampled directions.
    pub fn len(&self) -> usize {
        self.dirs.len() / self.d
    }

    /// True when the set is empty (never, for the provided constructors).
    pub fn is_empty(&self) -> bool {
        self.dirs.is_empty()
    }

    /// The `m`-th unit vector.
    pub fn dir(&self, m: usize) -> &[f64] {
        &self.dirs[m * self.d..(m + 1) * self.d]
    }

    /// Angle `2*pi*m/M` of the `m`-th direction (also valid for `d = 1`,
    /// where the two directions sit at angles `0` and `pi`).
    pub fn angle(&self, m: usize) -> f64 {
        2.0 * std::f64::consts::PI * m as f64 / self.len() as f64
    }

    /// Index of the antipodal direction `-s_m`.
    pub fn negation_index(&self, m: usize) -> usize {
        (m + self.len() / 2) % self.len()
    }

    /// Index of the sampled direction closest to `v` (largest inner product).
    pub fn closest(&self, v: &[f64]) -> usize {
        let mut best = 0usize;
        let mut best_dot = f64::NEG_INFINITY;
        for m in 0..self.len() {
            let dot: f64 = self.dir(m).iter().zip(v).map(|(a, b)| a * b).sum();
            if dot > best_dot {
                best_dot = dot;
                best = m;
            }
        }
        best
    }
}

/// Angle of a nonzero vector, measured as for the matching [`DirectionSet`].
///
/// For `d = 1` this is `0` for positive and `pi` for negative values; for
/// `d = 2` it is `atan2(v_1, v_0)`.
pub(crate) fn direction_angle(v: &[f64]) -> f64 {
    match v.len() {
        1 => {
            if v[0] >= 0.0 {
                0.0
            } else {
                std::f64::consts::PI
            }
        }
        2 => v[1].atan2(v[0]),
        _ => unreachable!("direction sets exist only for d = 1, 2"),
    }
}

/// Basis value of angular mode `bin` (of `count` equally spaced samples) at
/// angle `theta`: `e^{i k theta}` with the centered representative
/// `k in [-count/2, count/2)`, the Nyquist mode split symmetrically into
/// `cos(count*theta/2)`. This single convention defines both symbol
/// interpolation on the angle and the angular factorization of
/// pseudodifferential-like operators, so they agree exactly.
pub(crate) fn angle_mode(bin: usize, count: usize, theta: f64) -> C64 {
    debug_assert!(count >= 2 && count % 2 == 0 && bin < count);
    if bin == count / 2 {
        C64::new((count as f64 / 2.0 * theta).cos(), 0.0)
    } else {
        let k = if bin < count / 2 { bin as f64 } else { bin as f64 - count as f64 };
        C64::from_polar(1.0, k * theta)
    }
}

/// DFT coefficients over the angle samples: `c_bin = (1/M) sum_j vals[j]
/// e^{-2 pi i bin j / M}` (direct `O(M^2)` sum; `M` is small).
pub(crate) fn angle_modes(vals: &[C64]) -> Vec<C64> {
    let m = vals.len();
    let mf = m as f64;
    (0..m)
        .map(|bin| {
            let mut c = C64::default();
            for (j, &v) in vals.iter().enumerate() {
                let ang = -2.0 * std::f64::consts::PI * (bin * j % m) as f64 / mf;
                c += v * C64::from_polar(1.0, ang);
            }
            c / mf
        })
        .collect()
}

/// Trigonometric interpolation of values sampled at `M` equally spaced
/// angles `2*pi*j/M`, evaluated at angle `theta`. Exact at the sample
/// angles; reflection-balanced through the symmetric Nyquist split.
fn angle_interp(vals: &[C64], theta: f64) -> C64 {
    angle_modes(vals)
        .iter()
        .enumerate()
        .map(|(bin, &c)| c * angle_mode(bin, vals.len(), theta))
        .sum()
}

/// A complex field on `grid nodes x directions`: the discrete principal
/// symbol. Values are stored direction-major: `values[m * total + node]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Symbol {
    spec: GridSpec,
    dirs: DirectionSet,
    values: Vec<C64>,
}

impl Symbol {
    /// Wraps precomputed values (direction-major) after a shape check.
    pub fn new(spec: GridSpec, dirs: DirectionSet, values: Vec<C64>) -> Result<Self> {
        if dirs.d() != spec.d {
            return Err(Error::Shape(format!(
                "direction set dimension {} != grid dimension {}",
                dirs.d(),
                spec.d
            )));
        }
        if values.len() != dirs.len() * spec.total() {
            return Err(Error::Shape(format!(
                "symbol values length {} != directions {} x nodes {}",
                values.len(),
                dirs.len(),
                spec.total()
            )));
        }
        Ok(Symbol { spec, dirs, values })
    }

    /// Samples `f(t, s)` at every node and direction.
    pub fn from_fn(
        spec: GridSpec,
        dirs: DirectionSet,
        mut f: impl FnMut(&[f64], &[f64]) -> C64,
    ) -> Result<Self> {
        if dirs.d() != spec.d {
            return Err(Error::Shape(format!(
                "direction set dimension {} != grid dimension {}",
                dirs.d(),
                spec.d
            )));
        }
        let total = spec.total();
        let mut values = Vec::with_capacity(dirs.len() * total);
        let mut point = vec![0.0; spec.d];
        for m in 0..dirs.len() {
            for node in 0..total {
                spec.node(node, &mut point);
                values.push(f(&point, dirs.dir(m)));
            }
        }
        Ok(Symbol { spec, dirs, values })
    }

    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    pub fn dirs(&self) -> &DirectionSet {
        &self.dirs
    }

    /// All stored values, direction-major.
    pub fn values(&self) -> &[C64] {
        &self.values
    }

    /// Value at a node index and direction index.
    pub fn value(&self, node: usize, dir: usize) -> C64 {
        self.values[dir * self.spec.total() + node]
    }

    /// The node slice for one direction.
    pub fn slice(&self, dir: usize) -> &[C64] {
        let total = self.spec.total();
        &self.values[dir * total..(dir + 1) * total]
    }

    /// Largest absolute value over all nodes and directions.
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Precomputes spectral data for off-grid evaluation.
    pub fn evaluator(&self) -> SymbolEvaluator {
        SymbolEvaluator::new(self)
    }
}

/// Builds the symbol of a multiplication operator: `(t, s) -> f(t)`,
/// constant in the direction.
pub fn symbol_of_mult(f: &GridFunction, dirs: DirectionSet) -> Result<Symbol> {
    let total = f.spec.total();
    let mut values = Vec::with_capacity(dirs.len() * total);
    for _ in 0..dirs.len() {
        values.extend_from_slice(&f.values);
    }
    Symbol::new(f.spec, dirs, values)
}

/// Builds the symbol of a direction multiplier: `(t, s) -> g(s)`,
/// constant in the base point.
pub fn symbol_of_dir(
    spec: GridSpec,
    dirs: DirectionSet,
    mut g: impl FnMut(&[f64]) -> C64,
) -> Result<Symbol> {
    let total = spec.total();
    let mut values = Vec::with_capacity(dirs.len() * total);
    for m in 0..dirs.len() {
        let v = g(dirs.dir(m));
        values.extend(std::iter::repeat(v).take(total));
    }
    Symbol::new(spec, dirs, values)
}

/// Pointwise *-algebra operations on symbols.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SymbolOp {
    /// `a + b`.
    Add,
    /// `a * b` (pointwise; the symbol algebra is commutative).
    Mul,
    /// Complex conjugate of `a` (unary; `b` is ignored and must be absent).
    Conjugate,
    /// `alpha * a` (unary).
    Scale(C64),
}

/// Applies a pointwise algebra operation. Binary operations require `b` on
/// the same grid and direction set; unary operations require `b = None`.
pub fn symbol_algebra(a: &Symbol, b: Option<&Symbol>, op: SymbolOp) -> Result<Symbol> {
    let binary = matches!(op, SymbolOp::Add | SymbolOp::Mul);
    let values = if binary {
        let b = b.ok_or_else(|| {
            Error::Shape("binary symbol operation needs a second operand".into())
        })?;
        if b.spec != a.spec || b.dirs != a.dirs {
            return Err(Error::Shape(
                "symbol operands live on different grids or direction sets".into(),
            ));
        }
        match op {
            SymbolOp::Add => a.values.iter().zip(&b.values).map(|(x, y)| x + y).collect(),
            SymbolOp::Mul => a.values.iter().zip(&b.values).map(|(x, y)| x * y).collect(),
            _ => unreachable!(),
        }
    } else {
        if b.is_some() {
            return Err(Error::Shape(
                "unary symbol operation takes no second operand".into(),
            ));
        }
        match op {
            SymbolOp::Conjugate => a.values.iter().map(|x| x.conj()).collect(),
            SymbolOp::Scale(alpha) => a.values.iter().map(|x| alpha * x).collect(),
            _ => unreachable!(),
        }
    };
    Symbol::new(a.spec, a.dirs.clone(), values)
}

/// Spectral data of a symbol, ready for evaluation at arbitrary
/// `(point, direction)` pairs: one base interpolant per stored direction,
/// combined by trigonometric interpolation on the angle.
#[derive(Debug, Clone)]
pub struct SymbolEvaluator {
    spec: GridSpec,
    dirs: DirectionSet,
    slices: Vec<Interpolator>,
}

impl SymbolEvaluator {
    fn new(symbol: &Symbol) -> Self {
        let slices = (0..symbol.dirs.len())
            .map(|m| {
                Interpolator::new(&GridFunction {
                    spec: symbol.spec,
                    values: symbol.slice(m).to_vec(),
                })
            })
            .collect();
        SymbolEvaluator { spec: symbol.spec, dirs: symbol.dirs.clone(), slices }
    }

    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    pub fn dirs(&self) -> &DirectionSet {
        &self.dirs
    }

    /// Evaluates the symbol at base point `q` and nonzero direction `v`
    /// (`v` need not be normalised; only its direction enters).
    pub fn eval(&self, q: &[f64], v: &[f64]) -> C64 {
        let theta = direction_angle(v);
        let base: Vec<C64> = self.slices.iter().map(|s| s.eval(q)).collect();
        angle_interp(&base, theta)
    }
}

/// Pulls a symbol back along a diffeomorphism of the underlying torus:
/// `(theta_pullback(a, Φ))(t, s) = a(Φ⁻¹(t), O_{J_Φ*(Φ⁻¹(t))} s)` where
/// `O_A s = As / |As|` and `J_Φ*` is the transposed Jacobian.
///
/// Base points are interpolated trigonometrically; transported directions
/// are interpolated trigonometrically on the angle. When the base point
/// lands exactly on a node and the Jacobian is exactly the identity matrix
/// (in particular for `Φ = id` everywhere, and outside the support ball of
/// any catalog map), stored values are copied bitwise.
pub fn theta_pullback(a: &Symbol, phi: &Diffeo) -> Result<Symbol> {
    let spec = a.spec();
    if phi.d() != spec.d {
        return Err(Error::Shape(format!(
            "diffeomorphism dimension {} != grid dimension {}",
            phi.d(),
            spec.d
        )));
    }
    if (phi.length() - spec.length).abs() > 1e-12 * spec.length {
        return Err(Error::Domain(format!(
            "diffeomorphism period {} != grid length {}",
            phi.length(),
            spec.length
        )));
    }
    let total = spec.total();
    let nd = a.dirs().len();
    let d = spec.d;
    let n = spec.n;
    let h = spec.spacing();

    // Spectral coefficients per direction slice, for shared-phase evaluation.
    let slice_coeffs: Vec<Vec<C64>> = (0..nd)
        .map(|m| {
            transform(&GridFunction { spec, values: a.slice(m).to_vec() }).coeffs
        })
        .collect();
    let axis_freqs = spec.axis_freqs();
    let norm = 1.0 / (total as f64).sqrt();

    let mut values = vec![C64::default(); nd * total];
    let mut t = vec![0.0; d];
    let mut phases = vec![C64::default(); d * n];
    let mut base = vec![C64::default(); nd];
    let mut inner = vec![C64::default(); n];
    for node in 0..total {
        spec.node(node, &mut t);
        let q = phi.inverse(&t);
        let jac = phi.jacobian(&q);

        let jac_is_id = (0..d * d).all(|e| jac[e] == if e / d == e % d { 1.0 } else { 0.0 });
        let exact_node = exact_node_index(&q, n, h);
        if jac_is_id {
            if let Some(src) = exact_node {
                for m in 0..nd {
                    values[m * total + node] = a.value(src, m);
                }
                continue;
            }
        }

        // Shared phase vectors for all direction slices at this base point.
        for axis in 0..d {
            for bin in 0..n {
                phases[axis * n + bin] = C64::from_polar(1.0, axis_freqs[bin] * q[axis]);
            }
        }
        for m in 0..nd {
            base[m] = eval_with_phases(&slice_coeffs[m], &phases, d, n, &mut inner) * norm;
        }
        for m in 0..nd {
            let s = a.dirs().dir(m);
            let mut v = vec![0.0; d];
            for c in 0..d {
                v[c] = (0..d).map(|r| jac[r * d + c] * s[r]).sum();
            }
            let len: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            for x in v.iter_mut() {
                *x /= len;
            }
            values[m * total + node] = angle_interp(&base, direction_angle(&v));
        }
    }
    Symbol::new(spec, a.dirs().clone(), values)
}

/// Linear node index of `q` when every coordinate is bitwise equal to a grid
/// node coordinate `j * (L/n)`; `None` otherwise.
fn exact_node_index(q: &[f64], n: usize, h: f64) -> Option<usize> {
    let mut index = 0usize;
    for &x in q {
        let j = (x / h).round();
        if !(0.0..(n as f64)).contains(&j) || j * h != x {
            return None;
        }
        index = index * n + j as usize;
    }
    Some(index)
}

/// Separable evaluation of spectral coefficients against precomputed phase
/// vectors (one per axis, FFT bin order). `inner` is scratch of length `n`.
fn eval_with_phases(coeffs: &[C64], phases: &[C64], d: usize, n: usize, inner: &mut [C64]) -> C64 {
    match d {
        1 => coeffs.iter().zip(&phases[..n]).map(|(&c, &p)| c * p).sum(),
        2 => {
            let p1 = &phases[..n];
            let p2 = &phases[n..2 * n];
            for (b2, slot) in inner.iter_mut().enumerate() {
                let mut acc = C64::default();
                for b1 in 0..n {
                    acc += coeffs[b1 * n + b2] * p1[b1];
                }
                *slot = acc;
            }
            inner.iter().zip(p2).map(|(&c, &p)| c * p).sum()
        }
        _ => {
            // General d: full lattice product sum.
            let total = coeffs.len();
            let mut acc = C64::default();
            for (lin, &c) in coeffs.iter().enumerate() {
                let mut rest = lin;
                let mut ph = C64::new(1.0, 0.0);
                for axis in (0..d).rev() {
                    ph *= phases[axis * n + rest % n];
                    rest /= n;
                }
                acc += c * ph;
                let _ = total;
            }
            acc
        }
    }
}

/// Checks that the normalised pullback `a ∘ Θ_Φ` agrees with the
/// unnormalised cotangent pullback of the homogeneous extension
/// `a_homog(t, s) = a(t, s/|s|)` along `Ξ_Φ(t, s) = (Φ⁻¹(t), J_Φ*(Φ⁻¹(t)) s)`.
///
/// Returns the maximum absolute discrepancy over the samples `(t, s)` with
/// `s` not necessarily normalised. The identity `O_A(s/|s|) = (A s)/|A s|`
/// makes the two evaluations agree up to floating-point normalisation order,
/// so the discrepancy is expected at the `1e-15` scale.
pub fn xi_equivalence_check(
    a: &Symbol,
    phi: &Diffeo,
    samples: &[(Vec<f64>, Vec<f64>)],
) -> Result<f64> {
    let spec = a.spec();
    if phi.d() != spec.d {
        return Err(Error::Shape(format!(
            "diffeomorphism dimension {} != grid dimension {}",
            phi.d(),
            spec.d
        )));
    }
    let eval = a.evaluator();
    let d = spec.d;
    let mut worst = 0.0f64;
    for (t, s) in samples {
        if t.len() != d || s.len() != d {
            return Err(Error::Shape("sample dimension mismatch".into()));
        }
        let slen: f64 = s.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(slen > 0.0) {
            return Err(Error::Domain("zero covector in equivalence sample".into()));
        }
        let q = phi.inverse(t);
        let jac = phi.jacobian(&q);
        // Theta route: normalise first, then transport and renormalise.
        let mut v1 = vec![0.0; d];
        for c in 0..d {
            v1[c] = (0..d).map(|r| jac[r * d + c] * s[r] / slen).sum();
        }
        let l1: f64 = v1.iter().map(|x| x * x).sum::<f64>().sqrt();
        for x in v1.iter_mut() {
            *x /= l1;
        }
        // Xi route: transport the raw covector, normalise inside a_homog.
        let mut v2 = vec![0.0; d];
        for c in 0..d {
            v2[c] = (0..d).map(|r| jac[r * d + c] * s[r]).sum();
        }
        let l2: f64 = v2.iter().map(|x| x * x).sum::<f64>().sqrt();
        for x in v2.iter_mut() {
            *x /= l2;
        }
        let diff = (eval.eval(&q, &v1) - eval.eval(&q, &v2)).norm();
        worst = worst.max(diff);
    }
    Ok(worst)
}

/// Wave-packet probe schedule: packet width, frequency ladder, and the
/// `(point, direction)` samples at which a symbol field is estimated.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeParams {
    /// Envelope support radius `w` of the packets.
    pub packet_width: f64,
    /// Increasing carrier frequencies `lambda` (radians per unit length).
    pub frequency_scale: Vec<f64>,
    /// Probe samples `(t0, s0)` with `s0` a unit direction.
    pub sample_points: Vec<(Vec<f64>, Vec<f64>)>,
}

impl ProbeParams {
    /// Default schedule for a grid: width `L * n^{-1/3}` and carriers
    /// `{n/16, n/8, n/4} * 2*pi/L`, the coarse ladder that balances spatial
    /// and frequency localisation without tuning.
    pub fn default_for(spec: &GridSpec) -> Self {
        let nf = spec.n as f64;
        let scale = 2.0 * std::f64::consts::PI / spec.length;
        ProbeParams {
            packet_width: spec.length * nf.powf(-1.0 / 3.0),
            frequency_scale: vec![
                nf / 16.0 * scale,
                nf / 8.0 * scale,
                nf / 4.0 * scale,
            ],
            sample_points: Vec::new(),
        }
    }

    /// Sharper schedule used by the acceptance experiments: width
    /// `L * n^{-0.45}` and carriers `{n/8, 3n/16, n/4} * 2*pi/L`. The
    /// narrower packet reduces the position smear of the estimate and the
    /// higher carrier floor reduces the angular spread `~1/(lambda w)`,
    /// which dominates the error under direction-dependent symbols.
    pub fn tuned_for(spec: &GridSpec) -> Self {
        let nf = spec.n as f64;
        let scale = 2.0 * std::f64::consts::PI / spec.length;
        ProbeParams {
            packet_width: spec.length * nf.powf(-0.45),
            frequency_scale: vec![
                nf / 8.0 * scale,
                3.0 * nf / 16.0 * scale,
                nf / 4.0 * scale,
            ],
            sample_points: Vec::new(),
        }
    }

    /// Validates the schedule against a grid: positive width inside the
    /// fundamental domain, a nonempty strictly increasing frequency ladder,
    /// and all carriers within the `n/4` bandwidth budget (the packet's own
    /// spectral spread must fit between the carrier and the Nyquist rim).
    pub fn validate(&self, spec: &GridSpec) -> Result<()> {
        if !(self.packet_width > 0.0) || self.packet_width > spec.length / 2.0 {
            return Err(Error::Domain(format!(
                "packet width {} outside (0, L/2]",
                self.packet_width
            )));
        }
        if self.frequency_scale.is_empty() {
            return Err(Error::Domain("empty probe frequency ladder".into()));
        }
        let mut prev = 0.0;
        for &lam in &self.frequency_scale {
            if !(lam > prev) {
                return Err(Error::Domain(
                    "probe frequencies must be positive and strictly increasing".into(),
                ));
            }
            prev = lam;
        }
        let budget = (spec.n as f64 / 4.0) * 2.0 * std::f64::consts::PI / spec.length;
        if prev > budget * (1.0 + 1e-12) {
            return Err(Error::Domain(format!(
                "packet bandwidth exceeds grid budget: carrier {prev} > n/4 rim {budget}"
            )));
        }
        for (t, s) in &self.sample_points {
            if t.len() != spec.d || s.len() != spec.d {
                return Err(Error::Shape("probe sample dimension mismatch".into()));
            }
        }
        Ok(())
    }
}

/// Probe packet envelope at scaled radius `r = |t - t0| / w`: a smooth bump
/// window times a Gaussian core. The window keeps the support inside radius
/// `w`; the Gaussian (deviation `w/2.2`) keeps the spectrum concentrated so
/// the packet stays coherent under frequency-side operators.
fn probe_envelope(r: f64) -> f64 {
    bump_profile(r) * (-(2.2 * r) * (2.2 * r)).exp()
}

/// Builds the normalised wave packet `e^{i lambda <s0, t>} env(|t - t0|/w)`
/// on the grid (plain l2 normalisation).
pub fn wave_packet(
    spec: GridSpec,
    t0: &[f64],
    s0: &[f64],
    lambda: f64,
    width: f64,
) -> Vec<C64> {
    let total = spec.total();
    let mut packet = vec![C64::default(); total];
    let mut point = vec![0.0; spec.d];
    let mut norm_sq = 0.0f64;
    for (node, slot) in packet.iter_mut().enumerate() {
        spec.node(node, &mut point);
        let mut r2 = 0.0;
        let mut carrier = 0.0;
        for a in 0..spec.d {
            let dt = torus_delta(point[a] - t0[a], spec.length);
            r2 += dt * dt;
            carrier += s0[a] * point[a];
        }
        let env = probe_envelope(r2.sqrt() / width);
        if env != 0.0 {
            *slot = C64::from_polar(env, lambda * carrier);
            norm_sq += env * env;
        }
    }
    let inv = 1.0 / norm_sq.sqrt();
    for slot in packet.iter_mut() {
        *slot *= inv;
    }
    packet
}

/// Result of probing one `(point, direction)` pair: the extrapolated symbol
/// value, the raw diagonal matrix elements per carrier frequency, and the
/// residual of the `raw = estimate + c/lambda` fit.
#[derive(Debug, Clone)]
pub struct ProbeEstimate {
    pub estimate: C64,
    /// `(lambda, <packet, T packet>)` pairs, in ladder order.
    pub convergence: Vec<(f64, C64)>,
    /// Maximum absolute deviation of the raw values from the affine fit.
    pub fit_residual: f64,
}

/// Estimates the principal symbol of `op` at `(t0, s0)` by diagonal matrix
/// elements on wave packets, extrapolated in `1/lambda` by least squares.
pub fn probe_symbol(
    op: &LinOp,
    t0: &[f64],
    s0: &[f64],
    params: &ProbeParams,
) -> Result<ProbeEstimate> {
    let spec = op.spec();
    params.validate(&spec)?;
    if t0.len() != spec.d || s0.len() != spec.d {
        return Err(Error::Shape("probe point dimension mismatch".into()));
    }
    let slen: f64 = s0.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(slen > 0.0) {
        return Err(Error::Domain("probe direction must be nonzero".into()));
    }
    let unit: Vec<f64> = s0.iter().map(|x| x / slen).collect();

    let mut convergence = Vec::with_capacity(params.frequency_scale.len());
    for &lambda in &params.frequency_scale {
        let packet = wave_packet(spec, t0, &unit, lambda, params.packet_width);
        let image = op.apply(&packet);
        let raw: C64 = packet.iter().zip(&image).map(|(p, y)| p.conj() * y).sum();
        convergence.push((lambda, raw));
    }

    let (estimate, fit_residual) = extrapolate_in_inverse_lambda(&convergence);
    Ok(ProbeEstimate { estimate, convergence, fit_residual })
}

/// Least-squares intercept of `raw` against `1/lambda` (affine model
/// `raw = b + c/lambda`), with the maximum fit deviation. A single rung
/// returns the raw value with zero residual.
fn extrapolate_in_inverse_lambda(convergence: &[(f64, C64)]) -> (C64, f64) {
    if convergence.len() == 1 {
        return (convergence[0].1, 0.0);
    }
    let nf = convergence.len() as f64;
    let mut sx = 0.0;
    let mut sxx = 0.0;
    let mut sy = C64::default();
    let mut sxy = C64::default();
    for &(lam, y) in convergence {
        let x = 1.0 / lam;
        sx += x;
        sxx += x * x;
        sy += y;
        sxy += y * x;
    }
    let det = nf * sxx - sx * sx;
    let intercept = (sy * sxx - sxy * sx) / det;
    let slope = (sxy * nf - sy * sx) / det;
    let mut resid = 0.0f64;
    for &(lam, y) in convergence {
        resid = resid.max((y - (intercept + slope / lam)).norm());
    }
    (intercept, resid)
}

/// A symbol field estimated at the probe samples: values parallel to
/// `sample_points`, plus the worst extrapolation-fit residual.
#[derive(Debug, Clone)]
pub struct FieldEstimate {
    /// The probed `(t0, s0)` pairs, echoed from the schedule.
    pub points: Vec<(Vec<f64>, Vec<f64>)>,
    /// Extrapolated symbol values, parallel to `points`.
    pub values: Vec<C64>,
    /// Maximum fit residual over all samples.
    pub max_residual: f64,
}

/// Probes the symbol of `op` at every sample of the schedule.
pub fn estimate_symbol_field(op: &LinOp, params: &ProbeParams) -> Result<FieldEstimate> {
    params.validate(&op.spec())?;
    if params.sample_points.is_empty() {
        return Err(Error::Domain("symbol field estimate needs sample points".into()));
    }
    let mut values = Vec::with_capacity(params.sample_points.len());
    let mut max_residual = 0.0f64;
    for (t0, s0) in &params.sample_points {
        let probe = probe_symbol(op, t0, s0, params)?;
        values.push(probe.estimate);
        max_residual = max_residual.max(probe.fit_residual);
    }
    Ok(FieldEstimate { points: params.sample_points.clone(), values, max_residual })
}
