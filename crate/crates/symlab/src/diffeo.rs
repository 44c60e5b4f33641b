//! Diffeomorphisms of the torus that are the identity outside a ball.
//!
//! Every map in the catalog fixes the complement of the ball of radius
//! `support_radius` about the center `L/2 * (1, ..., 1)`, is orientation
//! preserving, and comes with an exact inverse (closed form or Newton) and
//! an analytic Jacobian. Composition is available for the cocycle checks.

use crate::grid::{bump_profile, torus_delta};
use crate::{Error, Result};

/// Smooth monotone step: `0` for `x <= 0`, `1` for `x >= 1`.
fn smoothstep(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x >= 1.0 {
        1.0
    } else {
        let a = (-1.0 / x).exp();
        let b = (-1.0 / (1.0 - x)).exp();
        a / (a + b)
    }
}

/// Derivative of [`smoothstep`].
fn smoothstep_deriv(x: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        0.0
    } else {
        let a = (-1.0 / x).exp();
        let b = (-1.0 / (1.0 - x)).exp();
        // (a' b - a b') / (a + b)^2 with a' = a/x^2, b' = -b/(1-x)^2.
        a * b / (a + b).powi(2) * (1.0 / (x * x) + 1.0 / ((1.0 - x) * (1.0 - x)))
    }
}

// Stretch displacement profile in the scaled radius `u = |t - c| / rho`:
// slope-2 core `D(u) = u` on `[0, R0]`, a C^5 polynomial turnover, a linear
// descent of slope `-beta`, and a C^5 landing with `D(u) = 0` exactly for
// `u >= 1`. `beta` balances the areas so the landing closes at zero.
const STRETCH_R0: f64 = 0.2;
const STRETCH_W1: f64 = 0.3;
const STRETCH_W2: f64 = 0.3;

fn stretch_beta() -> f64 {
    (STRETCH_R0 + STRETCH_W1 / 2.0) / ((1.0 - STRETCH_R0) - STRETCH_W1 / 2.0 - STRETCH_W2 / 2.0)
}

/// C^5 smoothstep on `[0, 1]`.
fn s5(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x.powi(6) * (462.0 + x * (-1980.0 + x * (3465.0 + x * (-3080.0 + x * (1386.0 + x * -252.0)))))
}

/// Integral of [`s5`] from zero; `q5(1) = 1/2`.
fn q5(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x.powi(7) * (66.0 + x * (-247.5 + x * (385.0 + x * (-308.0 + x * (126.0 + x * -21.0)))))
}

fn stretch_d(u: f64) -> f64 {
    let beta = stretch_beta();
    let a1 = STRETCH_R0 + STRETCH_W1;
    let a2 = 1.0 - STRETCH_W2;
    let d_a1 = STRETCH_R0 + STRETCH_W1 - (1.0 + beta) * STRETCH_W1 / 2.0;
    let d_a2 = d_a1 - beta * (a2 - a1);
    if u <= STRETCH_R0 {
        u
    } else if u < a1 {
        u - (1.0 + beta) * STRETCH_W1 * q5((u - STRETCH_R0) / STRETCH_W1)
    } else if u <= a2 {
        d_a1 - beta * (u - a1)
    } else if u < 1.0 {
        let v = (u - a2) / STRETCH_W2;
        d_a2 - beta * STRETCH_W2 * (v - q5(v))
    } else {
        0.0
    }
}

fn stretch_d_deriv(u: f64) -> f64 {
    let beta = stretch_beta();
    let a1 = STRETCH_R0 + STRETCH_W1;
    let a2 = 1.0 - STRETCH_W2;
    if u <= STRETCH_R0 {
        1.0
    } else if u < a1 {
        1.0 - (1.0 + beta) * s5((u - STRETCH_R0) / STRETCH_W1)
    } else if u <= a2 {
        -beta
    } else if u < 1.0 {
        -beta * (1.0 - s5((u - a2) / STRETCH_W2))
    } else {
        0.0
    }
}

/// Derivative of `r -> bump_profile(r)` for `|r| < 1`.
fn bump_profile_deriv(r: f64) -> f64 {
    let r2 = r * r;
    if r2 >= 1.0 {
        0.0
    } else {
        let q = 1.0 - r2;
        -2.0 * r / (q * q) * bump_profile(r)
    }
}

/// Radial twist profile: `1` for `r <= r_flat`, `0` for `r >= 1`.
fn twist_eta(r: f64, r_flat: f64) -> f64 {
    let a = smoothstep(1.0 - r);
    let b = smoothstep(r - r_flat);
    if a == 0.0 {
        0.0
    } else {
        a / (a + b)
    }
}

fn twist_eta_deriv(r: f64, r_flat: f64) -> f64 {
    let a = smoothstep(1.0 - r);
    let b = smoothstep(r - r_flat);
    if a == 0.0 || b == 0.0 {
        return 0.0;
    }
    let da = -smoothstep_deriv(1.0 - r);
    let db = smoothstep_deriv(r - r_flat);
    (da * b - a * db) / (a + b).powi(2)
}

#[derive(Debug, Clone)]
enum Kind {
    Identity,
    /// Radial stretch with slope 2 on `|t - c| <= 0.2 * rho`.
    Stretch1d,
    /// Odd smooth displacement `t + amp * rho * bump_profile(u) * u`.
    Smooth1d { amp: f64 },
    /// Rotation about the center by the angle `alpha0 * eta(r / rho)`.
    Twist2d { alpha0: f64, r_flat: f64 },
    /// `first` composed after `second`: `t -> first(second(t))`.
    Compose(Box<Diffeo>, Box<Diffeo>),
}

/// A smooth bijection of the torus `[0, L)^d`, identity outside the ball of
/// radius [`Diffeo::support_radius`] about the center.
#[derive(Debug, Clone)]
pub struct Diffeo {
    d: usize,
    length: f64,
    support_radius: f64,
    kind: Kind,
}

impl Diffeo {
    /// The identity map.
    pub fn identity(d: usize, length: f64) -> Self {
        Diffeo { d, length, support_radius: length / 4.0, kind: Kind::Identity }
    }

    /// One-dimensional stretch, exactly `c + 2 (t - c)` on `|t - c| <= 0.2 rho`
    /// and exactly the identity for `|t - c| >= rho`; the slope stays within
    /// `[0.3, 2]` throughout.
    pub fn stretch_1d(length: f64) -> Self {
        Diffeo { d: 1, length, support_radius: length / 4.0, kind: Kind::Stretch1d }
    }

    /// One-dimensional smooth displacement of amplitude `amp` (relative to
    /// the support radius); `amp` must be small enough to keep the map
    /// monotone (safe well beyond `0.35`).
    pub fn smooth_displacement_1d(length: f64, amp: f64) -> Result<Self> {
        if !(amp.abs() < 0.75) {
            return Err(Error::Domain(format!("displacement amplitude {amp} too large")));
        }
        Ok(Diffeo { d: 1, length, support_radius: length / 4.0, kind: Kind::Smooth1d { amp } })
    }

    /// Two-dimensional twist rotating by `alpha0` inside `r <= 0.3 rho`,
    /// easing down to the identity at the support boundary.
    pub fn twist_2d(length: f64, alpha0: f64) -> Result<Self> {
        if !(alpha0.abs() < std::f64::consts::PI) {
            return Err(Error::Domain(format!("twist angle {alpha0} too large")));
        }
        Ok(Diffeo {
            d: 2,
            length,
            support_radius: length / 4.0,
            kind: Kind::Twist2d { alpha0, r_flat: 0.3 },
        })
    }

    /// Composition `first o second` (apply `second`, then `first`).
    pub fn compose(first: Diffeo, second: Diffeo) -> Result<Self> {
        if first.d != second.d || first.length != second.length {
            return Err(Error::Shape("composed diffeos must share dimension and box".into()));
        }
        Ok(Diffeo {
            d: first.d,
            length: first.length,
            support_radius: first.support_radius.max(second.support_radius),
            kind: Kind::Compose(Box::new(first), Box::new(second)),
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn support_radius(&self) -> f64 {
        self.support_radius
    }

    /// Center of the supported ball, `L/2 * (1, ..., 1)`.
    pub fn center(&self) -> Vec<f64> {
        vec![self.length / 2.0; self.d]
    }

    fn delta(&self, t: &[f64], out: &mut [f64]) -> f64 {
        let c = self.length / 2.0;
        let mut r2 = 0.0;
        for (o, &ti) in out.iter_mut().zip(t) {
            *o = torus_delta(ti - c, self.length);
            r2 += *o * *o;
        }
        r2.sqrt()
    }

    /// Forward map `Phi(t)`.
    pub fn forward(&self, t: &[f64]) -> Vec<f64> {
        assert_eq!(t.len(), self.d);
        let c = self.length / 2.0;
        let rho = self.support_radius;
        match &self.kind {
            Kind::Identity => t.to_vec(),
            Kind::Stretch1d => {
                let dt = torus_delta(t[0] - c, self.length);
                vec![t[0] + rho * dt.signum() * stretch_d(dt.abs() / rho)]
            }
            Kind::Smooth1d { amp } => {
                let dt = torus_delta(t[0] - c, self.length);
                let u = dt / rho;
                vec![t[0] + amp * rho * bump_profile(u) * u]
            }
            Kind::Twist2d { alpha0, r_flat } => {
                let mut delta = [0.0; 2];
                let r = self.delta(t, &mut delta) / rho;
                if r >= 1.0 {
                    return t.to_vec();
                }
                let a = alpha0 * twist_eta(r, *r_flat);
                let (sa, ca) = a.sin_cos();
                vec![c + ca * delta[0] - sa * delta[1], c + sa * delta[0] + ca * delta[1]]
            }
            Kind::Compose(first, second) => first.forward(&second.forward(t)),
        }
    }

    /// Inverse map `Phi^{-1}(t)`; exact for the twist, Newton for the
    /// one-dimensional maps.
    pub fn inverse(&self, t: &[f64]) -> Vec<f64> {
        assert_eq!(t.len(), self.d);
        let c = self.length / 2.0;
        let rho = self.support_radius;
        match &self.kind {
            Kind::Identity => t.to_vec(),
            Kind::Stretch1d | Kind::Smooth1d { .. } => {
                // Safeguarded Newton on the monotone forward map. The root
                // lies within `rho` of the target because the displacement is
                // supported in the ball, so `[target - rho, target + rho]`
                // always brackets it; a Newton step that leaves the current
                // bracket falls back to bisection.
                let target = t[0];
                if torus_delta(target - c, self.length).abs() >= rho {
                    return vec![target];
                }
                let (mut lo, mut hi) = (target - rho, target + rho);
                let mut x = target;
                for _ in 0..200 {
                    let f = self.forward(&[x])[0] - target;
                    if f > 0.0 {
                        hi = hi.min(x);
                    } else if f < 0.0 {
                        lo = lo.max(x);
                    } else {
                        break;
                    }
                    let cand = x - f / self.jacobian(&[x])[0];
                    x = if cand.is_finite() && lo < cand && cand < hi {
                        cand
                    } else {
                        0.5 * (lo + hi)
                    };
                    if hi - lo < 1e-16 * self.length {
                        break;
                    }
                }
                vec![x]
            }
            Kind::Twist2d { alpha0, r_flat } => {
                // The rotation preserves the radius, so invert by rotating
                // backwards through the same angle.
                let mut delta = [0.0; 2];
                let r = self.delta(t, &mut delta) / rho;
                if r >= 1.0 {
                    return t.to_vec();
                }
                let a = -alpha0 * twist_eta(r, *r_flat);
                let (sa, ca) = a.sin_cos();
                vec![c + ca * delta[0] - sa * delta[1], c + sa * delta[0] + ca * delta[1]]
            }
            Kind::Compose(first, second) => second.inverse(&first.inverse(t)),
        }
    }

    /// Analytic Jacobian matrix at `t`, row-major (`J[i*d + j] = dPhi_i/dt_j`).
    pub fn jacobian(&self, t: &[f64]) -> Vec<f64> {
        assert_eq!(t.len(), self.d);
        let c = self.length / 2.0;
        let rho = self.support_radius;
        match &self.kind {
            Kind::Identity => identity_matrix(self.d),
            Kind::Stretch1d => {
                let dt = torus_delta(t[0] - c, self.length);
                vec![1.0 + stretch_d_deriv(dt.abs() / rho)]
            }
            Kind::Smooth1d { amp } => {
                let dt = torus_delta(t[0] - c, self.length);
                let u = dt / rho;
                vec![1.0 + amp * (bump_profile(u) + u * bump_profile_deriv(u))]
            }
            Kind::Twist2d { alpha0, r_flat } => {
                let mut delta = [0.0; 2];
                let rabs = self.delta(t, &mut delta);
                let r = rabs / rho;
                if r >= 1.0 {
                    return identity_matrix(2);
                }
                let a = alpha0 * twist_eta(r, *r_flat);
                let (sa, ca) = a.sin_cos();
                let mut j = vec![ca, -sa, sa, ca];
                let etap = twist_eta_deriv(r, *r_flat);
                if etap != 0.0 {
                    // d alpha / dt_j = alpha0 * eta'(r) * delta_j / (|delta| rho)
                    let scale = alpha0 * etap / (rabs * rho);
                    // dR/da applied to delta.
                    let v = [-sa * delta[0] - ca * delta[1], ca * delta[0] - sa * delta[1]];
                    for i in 0..2 {
                        for jj in 0..2 {
                            j[i * 2 + jj] += v[i] * scale * delta[jj];
                        }
                    }
                }
                j
            }
            Kind::Compose(first, second) => {
                let mid = second.forward(t);
                let ja = first.jacobian(&mid);
                let jb = second.jacobian(t);
                let d = self.d;
                let mut out = vec![0.0; d * d];
                for i in 0..d {
                    for jj in 0..d {
                        let mut acc = 0.0;
                        for k in 0..d {
                            acc += ja[i * d + k] * jb[k * d + jj];
                        }
                        out[i * d + jj] = acc;
                    }
                }
                out
            }
        }
    }

    /// Determinant of the Jacobian at `t` (positive for the whole catalog).
    pub fn det_jacobian(&self, t: &[f64]) -> f64 {
        let j = self.jacobian(t);
        match self.d {
            1 => j[0],
            2 => j[0] * j[3] - j[1] * j[2],
            d => det_general(&j, d),
        }
    }
}

fn identity_matrix(d: usize) -> Vec<f64> {
    let mut m = vec![0.0; d * d];
    for i in 0..d {
        m[i * d + i] = 1.0;
    }
    m
}

fn det_general(m: &[f64], d: usize) -> f64 {
    // Gaussian elimination with partial pivoting; only used for d = 3.
    let mut a = m.to_vec();
    let mut det = 1.0;
    for col in 0..d {
        let pivot = (col..d).max_by(|&r1, &r2| {
            a[r1 * d + col].abs().partial_cmp(&a[r2 * d + col].abs()).unwrap()
        });
        let p = pivot.unwrap();
        if a[p * d + col] == 0.0 {
            return 0.0;
        }
        if p != col {
            for k in 0..d {
                a.swap(p * d + k, col * d + k);
            }
            det = -det;
        }
        det *= a[col * d + col];
        for row in col + 1..d {
            let factor = a[row * d + col] / a[col * d + col];
            for k in col..d {
                a[row * d + k] -= factor * a[col * d + k];
            }
        }
    }
    det
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;

    const L: f64 = 2.0 * std::f64::consts::PI;

    fn catalog() -> Vec<Diffeo> {
        vec![
            Diffeo::identity(1, L),
            Diffeo::stretch_1d(L),
            Diffeo::smooth_displacement_1d(L, 0.35).unwrap(),
        ]
    }

    #[test]
    fn roundtrip_on_nodes_1d() {
        let spec = make_grid(1, 512, L).unwrap();
        for phi in catalog() {
            for j in 0..spec.n {
                let t = [j as f64 * spec.spacing()];
                let back = phi.inverse(&phi.forward(&t));
                assert!(
                    (back[0] - t[0]).abs() < 1e-10,
                    "roundtrip error {} at node {j}",
                    (back[0] - t[0]).abs()
                );
            }
        }
    }

    #[test]
    fn roundtrip_on_nodes_2d_twist() {
        let spec = make_grid(2, 64, L).unwrap();
        let phi = Diffeo::twist_2d(L, 0.5).unwrap();
        let mut t = vec![0.0; 2];
        for index in 0..spec.total() {
            spec.node(index, &mut t);
            let back = phi.inverse(&phi.forward(&t));
            let err = (back[0] - t[0]).hypot(back[1] - t[1]);
            assert!(err < 1e-12, "roundtrip error {err} at node {index}");
        }
    }

    #[test]
    fn identity_outside_support_ball() {
        let phis = vec![
            Diffeo::stretch_1d(L),
            Diffeo::smooth_displacement_1d(L, 0.35).unwrap(),
        ];
        for phi in phis {
            for &t in &[0.1, 1.0, L / 2.0 - L / 4.0, L / 2.0 + L / 4.0, L - 0.3] {
                let out = phi.forward(&[t]);
                assert_eq!(out[0], t, "map moved point {t} outside the ball");
            }
        }
        let twist = Diffeo::twist_2d(L, 0.5).unwrap();
        let c = L / 2.0;
        for &p in &[[0.2, 0.3], [c + L / 4.0, c], [c, c - L / 4.0 - 0.01]] {
            let out = twist.forward(&p);
            assert_eq!(out, p.to_vec());
        }
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let h = 1e-6;
        let stretch = Diffeo::stretch_1d(L);
        let smooth = Diffeo::smooth_displacement_1d(L, 0.35).unwrap();
        for phi in [&stretch, &smooth] {
            for j in 0..200 {
                let t = L / 2.0 - L / 4.0 + (j as f64 + 0.5) / 200.0 * (L / 2.0);
                let fd = (phi.forward(&[t + h])[0] - phi.forward(&[t - h])[0]) / (2.0 * h);
                let an = phi.jacobian(&[t])[0];
                assert!((fd - an).abs() < 1e-7, "t={t}: fd {fd} vs analytic {an}");
            }
        }

        let twist = Diffeo::twist_2d(L, 0.5).unwrap();
        let c = L / 2.0;
        for j in 0..100 {
            let ang = 0.063 * j as f64;
            let rad = (0.02 + 0.0095 * j as f64) * (L / 4.0);
            let t = [c + rad * ang.cos(), c + rad * ang.sin()];
            let an = twist.jacobian(&t);
            for col in 0..2 {
                let mut tp = t;
                let mut tm = t;
                tp[col] += h;
                tm[col] -= h;
                let fp = twist.forward(&tp);
                let fm = twist.forward(&tm);
                for row in 0..2 {
                    let fd = (fp[row] - fm[row]) / (2.0 * h);
                    assert!(
                        (fd - an[row * 2 + col]).abs() < 1e-6,
                        "entry ({row},{col}) at {t:?}: fd {fd} vs {}",
                        an[row * 2 + col]
                    );
                }
            }
        }
    }

    #[test]
    fn stretch_has_slope_two_near_center() {
        let phi = Diffeo::stretch_1d(L);
        let c = L / 2.0;
        let rho = phi.support_radius();
        // The core `|t - c| <= 0.2 rho` is exactly affine with slope 2.
        for &dt in &[0.0, 0.05, -0.1, 0.19 * rho, -0.2 * rho] {
            assert!((phi.jacobian(&[c + dt])[0] - 2.0).abs() < 1e-12);
            assert!((phi.forward(&[c + dt])[0] - (c + 2.0 * dt)).abs() < 1e-12);
        }
    }

    #[test]
    fn stretch_profile_slope_bounds_and_exact_landing() {
        let phi = Diffeo::stretch_1d(L);
        let c = L / 2.0;
        let rho = phi.support_radius();
        let mut min_slope = f64::INFINITY;
        let mut max_slope = f64::NEG_INFINITY;
        for j in 0..=20_000 {
            let dt = (j as f64 / 20_000.0 * 2.4 - 1.2) * rho;
            let slope = phi.jacobian(&[c + dt])[0];
            min_slope = min_slope.min(slope);
            max_slope = max_slope.max(slope);
        }
        assert!(min_slope >= 0.3 - 1e-12, "min slope {min_slope}");
        assert!(max_slope <= 2.0 + 1e-12, "max slope {max_slope}");
        // Exact identity at and beyond the support boundary.
        for &dt in &[rho, -rho, 1.001 * rho, 1.5 * rho] {
            assert_eq!(phi.forward(&[c + dt])[0], c + dt);
        }
    }

    #[test]
    fn twist_preserves_radius_and_rotates_core() {
        let phi = Diffeo::twist_2d(L, 0.5).unwrap();
        let c = L / 2.0;
        let p = [c + 0.1, c + 0.05];
        let q = phi.forward(&p);
        let r_in = (p[0] - c).hypot(p[1] - c);
        let r_out = (q[0] - c).hypot(q[1] - c);
        assert!((r_in - r_out).abs() < 1e-13);
        // Inside the flat core the Jacobian is the rotation itself.
        let j = phi.jacobian(&p);
        let (sa, ca) = 0.5f64.sin_cos();
        let want = [ca, -sa, sa, ca];
        for (got, want) in j.iter().zip(want) {
            assert!((got - want).abs() < 1e-13);
        }
    }

    #[test]
    fn determinants_are_positive_on_nodes() {
        let spec = make_grid(1, 256, L).unwrap();
        for phi in catalog() {
            for j in 0..spec.n {
                let det = phi.det_jacobian(&[j as f64 * spec.spacing()]);
                assert!(det > 0.0, "nonpositive det {det} at node {j}");
            }
        }
        let twist = Diffeo::twist_2d(L, 0.5).unwrap();
        let spec2 = make_grid(2, 32, L).unwrap();
        let mut t = vec![0.0; 2];
        for index in 0..spec2.total() {
            spec2.node(index, &mut t);
            assert!(twist.det_jacobian(&t) > 0.0);
        }
    }

    #[test]
    fn composition_follows_chain_rule() {
        let a = Diffeo::smooth_displacement_1d(L, 0.2).unwrap();
        let b = Diffeo::stretch_1d(L);
        let ab = Diffeo::compose(a.clone(), b.clone()).unwrap();
        for j in 0..100 {
            let t = [L / 2.0 - L / 4.0 + (j as f64 + 0.5) / 100.0 * (L / 2.0)];
            let want = a.forward(&b.forward(&t));
            let got = ab.forward(&t);
            assert!((got[0] - want[0]).abs() < 1e-14);
            let jc = ab.jacobian(&t)[0];
            let jchain = a.jacobian(&b.forward(&t))[0] * b.jacobian(&t)[0];
            assert!((jc - jchain).abs() < 1e-12);
            let back = ab.inverse(&got);
            assert!((back[0] - t[0]).abs() < 1e-10);
        }
    }
}
