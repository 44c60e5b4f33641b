//! Charts, transition maps, densities, good partitions of unity, and the
//! globalised principal symbol patched over an atlas.
//!
//! Desk-scale manifolds: a circle covered by two overlapping arc charts
//! (optionally with a linearly rescaled second chart, exercising non-unit
//! Jacobians in every cotangent formula) and a flat 2-torus covered by four
//! rectangle charts with translation transitions. Every chart carries a full
//! periodic coordinate window whose nodes are in exact one-to-one
//! correspondence with the global sample grid, so chart transfer is a node
//! relabeling, the atlas identities hold at machine precision, and the probe
//! machinery is sample-covariant across charts. Chart transfer `W_i` is the
//! plain composition pullback (no density weight); the measure enters
//! through the weighted adjoint identity
//! `W_i T* W_i^{-1} = M_{1/a_i} (W_i T W_i^{-1})* M_{a_i}`,
//! which holds exactly in dense arithmetic for the `nu`-weighted adjoint.

use crate::error::{Error, Result};
use crate::grid::{bump_profile, make_grid, torus_delta, GridSpec};
use crate::linop::{LinOp, DENSE_CAP};
use crate::metric::MetricField;
use crate::operators::{compactness_score, CompactnessScore};
use crate::symbol::{wave_packet, DirectionSet, ProbeParams, Symbol};
use crate::{la, C64};

// ---------------------------------------------------------------------------
// Seeded layout fractions
// ---------------------------------------------------------------------------

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn unit_fracs(seed: u64, count: usize) -> Vec<f64> {
    let mut state = seed;
    (0..count).map(|_| splitmix64(&mut state) as f64 / 2f64.powi(64)).collect()
}

/// `C^inf` step: `0` for `x <= 0`, `1` for `x >= 1`, exp-based in between.
/// Its square root is smooth too, so partition pieces cut operators without
/// introducing kinks.
fn smoothstep01(x: f64) -> f64 {
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

// ---------------------------------------------------------------------------
// Arcs and charts
// ---------------------------------------------------------------------------

/// An arc `[start, start + len)` on a circle of a given period, possibly
/// wrapping past the seam.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arc {
    pub start: f64,
    pub len: f64,
}

impl Arc {
    /// Membership, with a relative slack guarding the half-open boundaries
    /// against wrap roundoff. Arcs in the built-in atlases are node-aligned,
    /// so grid nodes classify exactly.
    pub fn contains(&self, x: f64, period: f64) -> bool {
        let slack = 1e-9 * period;
        let rel = (x - self.start).rem_euclid(period);
        rel < self.len - slack || rel > period - slack
    }
}

/// Intersection of two arcs on the same circle: zero, one, or two arcs.
fn arc_intersection(a: &Arc, b: &Arc, period: f64) -> Vec<Arc> {
    let b0 = (b.start - a.start).rem_euclid(period);
    let mut found = Vec::new();
    let mut push = |s: f64, e: f64| {
        let s2 = s.max(0.0);
        let e2 = e.min(a.len);
        if e2 - s2 > 1e-9 * period {
            found.push(Arc { start: (a.start + s2).rem_euclid(period), len: e2 - s2 });
        }
    };
    if b0 + b.len <= period {
        push(b0, b0 + b.len);
    } else {
        push(b0, period);
        push(0.0, b0 + b.len - period);
    }
    found
}

/// One chart of an atlas: a product-of-arcs domain in the manifold
/// parameters and an affine coordinate map `h` onto a full periodic window.
#[derive(Debug, Clone)]
pub struct Chart {
    /// Index of the chart within its atlas.
    pub id: usize,
    /// Chart domain: one manifold-parameter arc per axis.
    pub domain: Vec<Arc>,
    /// Coordinate window: a full periodic grid of side `scale * manifold_len`.
    pub spec: GridSpec,
    /// Translation part of `h`, in manifold units; multiples of the global
    /// grid spacing, so nodes map to nodes.
    pub offset: Vec<f64>,
    /// Linear rescale applied by `h` (chart units per manifold unit).
    pub scale: f64,
    /// Period of the manifold parameter space.
    pub manifold_len: f64,
}

impl Chart {
    /// Chart coordinates of a manifold point: `scale * ((p - offset) mod L)`.
    pub fn h(&self, p: &[f64]) -> Vec<f64> {
        p.iter()
            .zip(&self.offset)
            .map(|(&x, &o)| self.scale * (x - o).rem_euclid(self.manifold_len))
            .collect()
    }

    /// Manifold point of chart coordinates: `(x / scale + offset) mod L`.
    pub fn h_inverse(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.offset)
            .map(|(&v, &o)| (v / self.scale + o).rem_euclid(self.manifold_len))
            .collect()
    }

    /// Whether a manifold point lies in the chart domain.
    pub fn contains(&self, p: &[f64]) -> bool {
        p.iter().zip(&self.domain).all(|(&x, arc)| arc.contains(x, self.manifold_len))
    }

    /// Chart node index of every global node: an exact permutation, because
    /// `h` is a node-aligned translation followed by a pure rescale.
    pub(crate) fn node_map(&self, global: &GridSpec) -> Vec<usize> {
        let n = global.n as i64;
        let shifts: Vec<i64> = self
            .offset
            .iter()
            .map(|o| (o / global.spacing()).round() as i64)
            .collect();
        let total = global.total();
        let mut bins = vec![0usize; global.d];
        let mut out = Vec::with_capacity(total);
        for j in 0..total {
            global.unravel(j, &mut bins);
            let mut lin = 0usize;
            for a in 0..global.d {
                let m = (bins[a] as i64 - shifts[a]).rem_euclid(n) as usize;
                lin = lin * global.n + m;
            }
            out.push(lin);
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Transition maps and atlases
// ---------------------------------------------------------------------------

/// The transition `Phi_{ij} = h_j o h_i^{-1}` between two chart windows:
/// an affine map `x -> wrap(ratio * x + shift)` with constant Jacobian
/// `ratio * Identity`.
#[derive(Debug, Clone)]
pub struct TransitionMap {
    pub from: usize,
    pub to: usize,
    /// Scalar linear part; the Jacobian is `ratio` times the identity.
    pub ratio: f64,
    /// Per-axis shift, already in target-window units.
    pub shift: Vec<f64>,
    /// Side length of the target window (all axes equal).
    pub to_len: f64,
}

impl TransitionMap {
    fn between(from: &Chart, to: &Chart) -> Self {
        let ratio = to.scale / from.scale;
        let to_len = to.spec.length;
        let shift = from
            .offset
            .iter()
            .zip(&to.offset)
            .map(|(&of, &ot)| (to.scale * (of - ot)).rem_euclid(to_len))
            .collect();
        TransitionMap { from: from.id, to: to.id, ratio, shift, to_len }
    }

    /// Applies the transition to chart-`from` coordinates.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.shift)
            .map(|(&v, &s)| (self.ratio * v + s).rem_euclid(self.to_len))
            .collect()
    }

    /// The (constant) Jacobian matrix, row-major `d x d`.
    pub fn jacobian(&self, d: usize) -> Vec<f64> {
        let mut out = vec![0.0; d * d];
        for a in 0..d {
            out[a * d + a] = self.ratio;
        }
        out
    }
}

/// The supported model manifolds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ManifoldKind {
    /// Circle, two translated arc charts.
    Circle,
    /// Circle, second chart linearly rescaled (non-unit Jacobians).
    CircleRescaled,
    /// Flat 2-torus, four translated rectangle charts.
    FlatTorus2d,
}

/// An atlas over a model manifold, with a global sample grid in the
/// manifold parameters and affine transitions between chart windows.
#[derive(Debug, Clone)]
pub struct Atlas {
    pub kind: ManifoldKind,
    pub manifold_len: f64,
    /// Global sample grid in manifold parameters.
    pub global: GridSpec,
    pub charts: Vec<Chart>,
    /// Transitions for every ordered pair of distinct overlapping charts.
    pub transitions: Vec<TransitionMap>,
}

impl Atlas {
    /// The transition from chart `i` to chart `j`, if the charts overlap.
    pub fn transition(&self, i: usize, j: usize) -> Option<&TransitionMap> {
        self.transitions.iter().find(|t| t.from == i && t.to == j)
    }

    /// Global node indices lying in `U_i ∩ U_j`.
    pub fn overlap_nodes(&self, i: usize, j: usize) -> Vec<usize> {
        let total = self.global.total();
        let mut point = vec![0.0; self.global.d];
        let mut out = Vec::new();
        for node in 0..total {
            self.global.node(node, &mut point);
            if self.charts[i].contains(&point) && self.charts[j].contains(&point) {
                out.push(node);
            }
        }
        out
    }

    /// Connected components of `U_i ∩ U_j` as products of manifold arcs.
    pub fn overlap_components(&self, i: usize, j: usize) -> Vec<Vec<Arc>> {
        let mut per_axis: Vec<Vec<Arc>> = Vec::with_capacity(self.global.d);
        for a in 0..self.global.d {
            per_axis.push(arc_intersection(
                &self.charts[i].domain[a],
                &self.charts[j].domain[a],
                self.manifold_len,
            ));
        }
        let mut comps: Vec<Vec<Arc>> = vec![Vec::new()];
        for axis_arcs in &per_axis {
            let mut next = Vec::new();
            for partial in &comps {
                for arc in axis_arcs {
                    let mut c = partial.clone();
                    c.push(*arc);
                    next.push(c);
                }
            }
            comps = next;
        }
        comps
    }

    /// Maximum defect over the atlas identities: `h o h_inverse = id`,
    /// `Phi_{ij} = h_j o h_i^{-1}` at overlap nodes, the cocycle
    /// `Phi_{jk} o Phi_{ij} = Phi_{ik}` at triple-overlap nodes, and the
    /// Jacobian chain rule on the linear parts.
    pub fn integrity_residual(&self) -> f64 {
        let mut worst = 0.0f64;
        let d = self.global.d;
        let mut point = vec![0.0; d];

        // h o h_inverse on every chart's own window nodes.
        for chart in &self.charts {
            let total = chart.spec.total();
            for node in (0..total).step_by((total / 64).max(1)) {
                chart.spec.node(node, &mut point);
                let p = chart.h_inverse(&point);
                let back = chart.h(&p);
                for a in 0..d {
                    worst = worst.max(torus_delta(back[a] - point[a], chart.spec.length).abs());
                }
            }
        }

        // Transition definition at overlap nodes.
        for tr in &self.transitions {
            let (i, j) = (tr.from, tr.to);
            for node in self.overlap_nodes(i, j) {
                self.global.node(node, &mut point);
                let xi = self.charts[i].h(&point);
                let xj = self.charts[j].h(&point);
                let mapped = tr.apply(&xi);
                for a in 0..d {
                    worst = worst.max(torus_delta(mapped[a] - xj[a], tr.to_len).abs());
                }
            }
        }

        // Cocycle and chain rule over chart triples (k = i covers inverses).
        for ij in &self.transitions {
            for jk in &self.transitions {
                if jk.from != ij.to {
                    continue;
                }
                let (i, k) = (ij.from, jk.to);
                let composed_ratio = jk.ratio * ij.ratio;
                let direct_ratio = if i == k {
                    1.0
                } else {
                    match self.transition(i, k) {
                        Some(t) => t.ratio,
                        None => continue,
                    }
                };
                worst = worst.max((composed_ratio - direct_ratio).abs());
                for node in self.overlap_nodes(i, jk.from) {
                    self.global.node(node, &mut point);
                    if !self.charts[k].contains(&point) {
                        continue;
                    }
                    let xi = self.charts[i].h(&point);
                    let via = jk.apply(&ij.apply(&xi));
                    let direct = if i == k {
                        xi.clone()
                    } else {
                        self.transition(i, k).unwrap().apply(&xi)
                    };
                    for a in 0..d {
                        worst = worst
                            .max(torus_delta(via[a] - direct[a], jk.to_len).abs());
                    }
                }
            }
        }
        worst
    }
}

/// Builds a desk-scale atlas at resolution `n` (a power of two), together
/// with the default Riemannian density and one metric field per chart.
///
/// Circle kinds use two arcs `[0, 5L/8)` and `[L/2, 9L/8)` (two overlap
/// components); the flat 2-torus uses the four products of those arcs.
pub fn build_atlas(
    kind: ManifoldKind,
    n: usize,
) -> Result<(Atlas, Density, Vec<MetricField>)> {
    let length = 2.0 * std::f64::consts::PI;
    let (d, scales): (usize, Vec<f64>) = match kind {
        ManifoldKind::Circle => (1, vec![1.0, 1.0]),
        ManifoldKind::CircleRescaled => (1, vec![1.0, 1.25]),
        ManifoldKind::FlatTorus2d => (2, vec![1.0; 4]),
    };
    let global = make_grid(d, n, length)?;

    let arc0 = Arc { start: 0.0, len: 5.0 * length / 8.0 };
    let arc1 = Arc { start: length / 2.0, len: 5.0 * length / 8.0 };
    let mut charts = Vec::new();
    match kind {
        ManifoldKind::Circle | ManifoldKind::CircleRescaled => {
            for (id, &scale) in scales.iter().enumerate() {
                let arc = if id == 0 { arc0 } else { arc1 };
                charts.push(Chart {
                    id,
                    domain: vec![arc],
                    spec: make_grid(1, n, scale * length)?,
                    offset: vec![if id == 0 { 0.0 } else { length / 2.0 }],
                    scale,
                    manifold_len: length,
                });
            }
        }
        ManifoldKind::FlatTorus2d => {
            for (id, (a, b)) in [(0, 0), (0, 1), (1, 0), (1, 1)].iter().enumerate() {
                let pick = |s: usize| if s == 0 { (arc0, 0.0) } else { (arc1, length / 2.0) };
                let (ax, ox) = pick(*a);
                let (ay, oy) = pick(*b);
                charts.push(Chart {
                    id,
                    domain: vec![ax, ay],
                    spec: make_grid(2, n, length)?,
                    offset: vec![ox, oy],
                    scale: 1.0,
                    manifold_len: length,
                });
            }
        }
    }

    let mut transitions = Vec::new();
    for i in 0..charts.len() {
        for j in 0..charts.len() {
            if i == j {
                continue;
            }
            let overlap_nonempty = (0..d).all(|a| {
                !arc_intersection(&charts[i].domain[a], &charts[j].domain[a], length)
                    .is_empty()
            });
            if overlap_nonempty {
                transitions.push(TransitionMap::between(&charts[i], &charts[j]));
            }
        }
    }

    let atlas = Atlas { kind, manifold_len: length, global, charts, transitions };
    let metrics: Vec<MetricField> = atlas
        .charts
        .iter()
        .map(|c| {
            if c.scale == 1.0 {
                Ok(MetricField::flat(c.spec))
            } else {
                MetricField::diagonal_const(c.spec, &vec![c.scale.powi(-2); d])
            }
        })
        .collect::<Result<_>>()?;
    let density = Density::riemannian(&atlas, &metrics)?;
    Ok((atlas, density, metrics))
}

// ---------------------------------------------------------------------------
// Densities
// ---------------------------------------------------------------------------

/// A positive continuous measure density, sampled per chart at chart nodes.
/// On overlaps the samples obey the change-of-variables rule
/// `a_j = (a_i o Phi_{ji}) * |det J_{Phi_{ji}}|`.
#[derive(Debug, Clone)]
pub struct Density {
    pub per_chart: Vec<Vec<f64>>,
}

impl Density {
    /// The Riemannian volume density `det(g_i)^{1/2}` of per-chart metrics.
    pub fn riemannian(atlas: &Atlas, metrics: &[MetricField]) -> Result<Self> {
        check_metric_shapes(atlas, metrics)?;
        let per_chart = metrics
            .iter()
            .map(|g| (0..g.spec().total()).map(|m| g.det_at(m).sqrt()).collect())
            .collect();
        Ok(Density { per_chart })
    }

    /// Override hook: an arbitrary positive weight given at the global
    /// manifold nodes, transported into every chart as
    /// `a_i(x) = a(h_i^{-1}(x)) * |det J_{h_i^{-1}}|`.
    pub fn from_manifold_weight(atlas: &Atlas, weight: &[f64]) -> Result<Self> {
        let total = atlas.global.total();
        if weight.len() != total {
            return Err(Error::Shape(format!(
                "manifold weight length {} != node count {}",
                weight.len(),
                total
            )));
        }
        if weight.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::Domain("manifold weight must be positive".into()));
        }
        let d = atlas.global.d as i32;
        let mut per_chart = Vec::with_capacity(atlas.charts.len());
        for chart in &atlas.charts {
            let map = chart.node_map(&atlas.global);
            let jac = chart.scale.powi(-d);
            let mut vals = vec![0.0; total];
            for (j, &m) in map.iter().enumerate() {
                vals[m] = weight[j] * jac;
            }
            per_chart.push(vals);
        }
        Ok(Density { per_chart })
    }

    /// The manifold-coordinate density at every global node, reconstructed
    /// from any chart containing the node (consistent by the overlap rule).
    pub fn manifold_weight(&self, atlas: &Atlas) -> Result<Vec<f64>> {
        let total = atlas.global.total();
        let d = atlas.global.d as i32;
        let mut out = vec![0.0; total];
        let maps: Vec<Vec<usize>> =
            atlas.charts.iter().map(|c| c.node_map(&atlas.global)).collect();
        let mut point = vec![0.0; atlas.global.d];
        for j in 0..total {
            atlas.global.node(j, &mut point);
            let chart = atlas
                .charts
                .iter()
                .position(|c| c.contains(&point))
                .ok_or_else(|| Error::Domain("atlas charts leave a coverage gap".into()))?;
            out[j] = self.per_chart[chart][maps[chart][j]] * atlas.charts[chart].scale.powi(d);
        }
        Ok(out)
    }

    /// Positivity plus the change-of-variables residual over all overlaps.
    pub fn validate(&self, atlas: &Atlas) -> Result<f64> {
        if self.per_chart.len() != atlas.charts.len() {
            return Err(Error::Shape("one density field per chart required".into()));
        }
        for (chart, vals) in atlas.charts.iter().zip(&self.per_chart) {
            if vals.len() != chart.spec.total() {
                return Err(Error::Shape("density sample count mismatch".into()));
            }
            if vals.iter().any(|&v| !(v > 0.0)) {
                return Err(Error::Domain("density must be strictly positive".into()));
            }
        }
        let d = atlas.global.d as i32;
        let maps: Vec<Vec<usize>> =
            atlas.charts.iter().map(|c| c.node_map(&atlas.global)).collect();
        let mut worst = 0.0f64;
        for tr in &atlas.transitions {
            // |det J_{Phi_{ji}}| for Phi from chart `to` back to chart `from`.
            let det_back = (1.0 / tr.ratio).abs().powi(d);
            for node in atlas.overlap_nodes(tr.from, tr.to) {
                let ai = self.per_chart[tr.from][maps[tr.from][node]];
                let aj = self.per_chart[tr.to][maps[tr.to][node]];
                worst = worst.max((aj - ai * det_back).abs());
            }
        }
        Ok(worst)
    }
}

fn check_metric_shapes(atlas: &Atlas, metrics: &[MetricField]) -> Result<()> {
    if metrics.len() != atlas.charts.len() {
        return Err(Error::Shape(format!(
            "expected {} per-chart metrics, got {}",
            atlas.charts.len(),
            metrics.len()
        )));
    }
    for (chart, g) in atlas.charts.iter().zip(metrics) {
        if g.spec() != chart.spec {
            return Err(Error::Shape(format!(
                "metric grid mismatch on chart {}",
                chart.id
            )));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Metric and cotangent compatibility
// ---------------------------------------------------------------------------

/// Maximum over overlap nodes of the two-sided metric pullback deviation
/// `|G_i(x_i) - J* G_j(x_j) J|` with `J` the Jacobian of `Phi_{ij}`.
pub fn check_metric_compatibility(atlas: &Atlas, metrics: &[MetricField]) -> Result<f64> {
    check_metric_shapes(atlas, metrics)?;
    let d = atlas.global.d;
    let maps: Vec<Vec<usize>> =
        atlas.charts.iter().map(|c| c.node_map(&atlas.global)).collect();
    let mut worst = 0.0f64;
    for tr in &atlas.transitions {
        let r2 = tr.ratio * tr.ratio; // J* G J for J = ratio * Identity
        for node in atlas.overlap_nodes(tr.from, tr.to) {
            let gi = metrics[tr.from].at(maps[tr.from][node]);
            let gj = metrics[tr.to].at(maps[tr.to][node]);
            for e in 0..d * d {
                worst = worst.max((gi[e] - r2 * gj[e]).abs());
            }
        }
    }
    Ok(worst)
}

/// Maximum over overlap nodes and covector samples of
/// `|q_i(t, s) - q_j(Phi_{ij}(t), (J*)^{-1} s)|`, with
/// `q_i(t, s) = <g_i(t)^{-1} s, s>`. Each sample is used as a chart-`i`
/// covector for every transition.
pub fn check_q_compatibility(
    atlas: &Atlas,
    metrics: &[MetricField],
    samples: &[Vec<f64>],
) -> Result<f64> {
    check_metric_shapes(atlas, metrics)?;
    let d = atlas.global.d;
    if samples.iter().any(|s| s.len() != d) {
        return Err(Error::Shape("covector sample dimension mismatch".into()));
    }
    let maps: Vec<Vec<usize>> =
        atlas.charts.iter().map(|c| c.node_map(&atlas.global)).collect();
    let q_form = |inv: &[f64], s: &[f64]| {
        let mut acc = 0.0;
        for a in 0..d {
            for b in 0..d {
                acc += inv[a * d + b] * s[a] * s[b];
            }
        }
        acc
    };
    let mut worst = 0.0f64;
    for tr in &atlas.transitions {
        for node in atlas.overlap_nodes(tr.from, tr.to) {
            let inv_i = metrics[tr.from].inverse_at(maps[tr.from][node]);
            let inv_j = metrics[tr.to].inverse_at(maps[tr.to][node]);
            for s in samples {
                let qi = q_form(&inv_i, s);
                let sj: Vec<f64> = s.iter().map(|v| v / tr.ratio).collect();
                let qj = q_form(&inv_j, &sj);
                worst = worst.max((qi - qj).abs());
            }
        }
    }
    Ok(worst)
}

// ---------------------------------------------------------------------------
// Good partitions of unity
// ---------------------------------------------------------------------------

/// A finite partition of unity on the manifold: nonnegative pieces sampled
/// at global nodes, each compactly supported in an assigned chart, summing
/// to one everywhere.
#[derive(Debug, Clone)]
pub struct PartitionOfUnity {
    /// Piece values at the global manifold nodes.
    pub pieces: Vec<Vec<f64>>,
    /// Chart index each piece is supported in.
    pub chart_of: Vec<usize>,
}

impl PartitionOfUnity {
    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    /// Checks nonnegativity, per-chart compact support, and the unit sum;
    /// returns the maximum deviation of the sum from one.
    pub fn validate(&self, atlas: &Atlas) -> Result<f64> {
        let total = atlas.global.total();
        if self.pieces.len() != self.chart_of.len() || self.pieces.is_empty() {
            return Err(Error::Shape("pieces and chart assignments must pair up".into()));
        }
        let mut point = vec![0.0; atlas.global.d];
        for (vals, &chart) in self.pieces.iter().zip(&self.chart_of) {
            if vals.len() != total {
                return Err(Error::Shape("partition piece sample count mismatch".into()));
            }
            if chart >= atlas.charts.len() {
                return Err(Error::Shape("partition piece assigned to missing chart".into()));
            }
            for (node, &v) in vals.iter().enumerate() {
                if !(v >= 0.0) {
                    return Err(Error::Domain("partition pieces must be nonnegative".into()));
                }
                if v != 0.0 {
                    atlas.global.node(node, &mut point);
                    if !atlas.charts[chart].contains(&point) {
                        return Err(Error::Domain(format!(
                            "partition piece leaks outside chart {chart}"
                        )));
                    }
                }
            }
        }
        let mut worst = 0.0f64;
        for node in 0..total {
            let sum: f64 = self.pieces.iter().map(|vals| vals[node]).sum();
            worst = worst.max((sum - 1.0).abs());
        }
        Ok(worst)
    }
}

/// Seed-dependent ramp window `[start, start + width]` within a component.
fn ramp_layout(comp: &Arc, fpos: f64, fwidth: f64) -> (f64, f64) {
    let width = (0.3 + 0.4 * fwidth) * comp.len;
    let slack = comp.len - width;
    (comp.start + (0.08 + 0.84 * fpos) * slack, width)
}

/// One-axis pair `(u, 1 - u)` subordinate to the standard two-arc cover,
/// built from four layout fractions; values at the axis nodes.
fn axis_pair(n: usize, length: f64, fr: &[f64]) -> (Vec<f64>, Vec<f64>) {
    // Overlap components of [0, 5L/8) and [L/2, 9L/8):
    // A = [L/2, 5L/8) (ramp down), B = [0, L/8) (ramp up).
    let comp_a = Arc { start: length / 2.0, len: length / 8.0 };
    let comp_b = Arc { start: 0.0, len: length / 8.0 };
    let (sa, wa) = ramp_layout(&comp_a, fr[0], fr[1]);
    let (sb, wb) = ramp_layout(&comp_b, fr[2], fr[3]);
    let h = length / n as f64;
    let mut u = Vec::with_capacity(n);
    for idx in 0..n {
        let t = idx as f64 * h;
        let v = if t < length / 8.0 {
            smoothstep01((t - sb) / wb)
        } else if t < length / 2.0 {
            1.0
        } else if t < 5.0 * length / 8.0 {
            1.0 - smoothstep01((t - sa) / wa)
        } else {
            0.0
        };
        u.push(v);
    }
    let v = u.iter().map(|&x| 1.0 - x).collect();
    (u, v)
}

/// Builds a good partition of unity subordinate to the atlas; distinct
/// seeds move and reshape the ramps, giving genuinely different families.
pub fn good_partition(atlas: &Atlas, seed: u64) -> Result<PartitionOfUnity> {
    // Coverage check (the built-in atlases always cover; hand-edited ones
    // may not).
    let total = atlas.global.total();
    let mut point = vec![0.0; atlas.global.d];
    for node in 0..total {
        atlas.global.node(node, &mut point);
        if !atlas.charts.iter().any(|c| c.contains(&point)) {
            return Err(Error::Domain("atlas charts leave a coverage gap".into()));
        }
    }
    let n = atlas.global.n;
    let length = atlas.manifold_len;
    match atlas.kind {
        ManifoldKind::Circle | ManifoldKind::CircleRescaled => {
            let fr = unit_fracs(seed, 4);
            let (u, v) = axis_pair(n, length, &fr);
            Ok(PartitionOfUnity { pieces: vec![u, v], chart_of: vec![0, 1] })
        }
        ManifoldKind::FlatTorus2d => {
            let fr = unit_fracs(seed, 8);
            let (ux, vx) = axis_pair(n, length, &fr[0..4]);
            let (uy, vy) = axis_pair(n, length, &fr[4..8]);
            let tensor = |fx: &[f64], fy: &[f64]| -> Vec<f64> {
                let mut vals = Vec::with_capacity(total);
                for ix in 0..n {
                    for iy in 0..n {
                        vals.push(fx[ix] * fy[iy]);
                    }
                }
                vals
            };
            // Chart order from build_atlas: (0,0), (0,1), (1,0), (1,1).
            Ok(PartitionOfUnity {
                pieces: vec![
                    tensor(&ux, &uy),
                    tensor(&ux, &vy),
                    tensor(&vx, &uy),
                    tensor(&vx, &vy),
                ],
                chart_of: vec![0, 1, 2, 3],
            })
        }
    }
}

// ---------------------------------------------------------------------------
// Manifold operators
// ---------------------------------------------------------------------------

/// A dense operator on the discretized `L_2(X, nu)`: samples at the global
/// grid with a positive `nu`-density per node; adjoints are taken in the
/// `nu`-weighted pairing.
#[derive(Debug, Clone)]
pub struct ManifoldOperator {
    spec: GridSpec,
    nu: Vec<f64>,
    mat: Vec<C64>,
}

impl ManifoldOperator {
    /// Wraps a dense column-major matrix with its `nu`-density.
    pub fn new(spec: GridSpec, nu: Vec<f64>, mat: Vec<C64>) -> Result<Self> {
        let total = spec.total();
        if total > DENSE_CAP {
            return Err(Error::DenseCap { total, cap: DENSE_CAP });
        }
        if nu.len() != total || mat.len() != total * total {
            return Err(Error::Shape("manifold operator shape mismatch".into()));
        }
        if nu.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::Domain("nu density must be strictly positive".into()));
        }
        Ok(ManifoldOperator { spec, nu, mat })
    }

    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    pub fn nu(&self) -> &[f64] {
        &self.nu
    }

    pub fn dense(&self) -> &[C64] {
        &self.mat
    }

    /// Multiplication by a function of the manifold point.
    pub fn multiplication(spec: GridSpec, nu: Vec<f64>, values: &[C64]) -> Result<Self> {
        let total = spec.total();
        if values.len() != total {
            return Err(Error::Shape("multiplier sample count mismatch".into()));
        }
        let mut mat = vec![C64::default(); total * total];
        for (j, &v) in values.iter().enumerate() {
            mat[j * total + j] = v;
        }
        ManifoldOperator::new(spec, nu, mat)
    }

    /// The reflection `xi(t) -> xi(-t)` on the periodic manifold.
    pub fn reflection(spec: GridSpec, nu: Vec<f64>) -> Result<Self> {
        let total = spec.total();
        let mut mat = vec![C64::default(); total * total];
        let mut bins = vec![0usize; spec.d];
        for j in 0..total {
            spec.unravel(j, &mut bins);
            let mut lin = 0usize;
            for a in 0..spec.d {
                lin = lin * spec.n + (spec.n - bins[a]) % spec.n;
            }
            mat[j * total + lin] = C64::new(1.0, 0.0);
        }
        ManifoldOperator::new(spec, nu, mat)
    }

    /// Pulls a chart-window operator back to the manifold: `W_i^{-1} S W_i`.
    pub fn from_chart_op(
        atlas: &Atlas,
        chart: usize,
        op: &LinOp,
        nu: Vec<f64>,
    ) -> Result<Self> {
        if chart >= atlas.charts.len() {
            return Err(Error::Shape("chart index out of range".into()));
        }
        if op.spec() != atlas.charts[chart].spec {
            return Err(Error::Shape("operator grid does not match the chart window".into()));
        }
        let dense = op.to_dense()?;
        let map = atlas.charts[chart].node_map(&atlas.global);
        let total = atlas.global.total();
        let mut mat = vec![C64::default(); total * total];
        for col in 0..total {
            for row in 0..total {
                mat[col * total + row] = dense[map[col] * total + map[row]];
            }
        }
        ManifoldOperator::new(atlas.global, nu, mat)
    }

    pub fn apply(&self, x: &[C64]) -> Vec<C64> {
        crate::linop::dense_matvec(&self.mat, x, self.spec.total())
    }

    /// The adjoint in the `nu`-weighted pairing: `N^{-1} A^H N`.
    pub fn adjoint(&self) -> ManifoldOperator {
        let total = self.spec.total();
        let mut mat = vec![C64::default(); total * total];
        for col in 0..total {
            for row in 0..total {
                let a = self.mat[row * total + col].conj();
                mat[col * total + row] = a * (self.nu[col] / self.nu[row]);
            }
        }
        ManifoldOperator { spec: self.spec, nu: self.nu.clone(), mat }
    }

    /// Operator composition `self * other`.
    pub fn compose(&self, other: &ManifoldOperator) -> Result<ManifoldOperator> {
        if self.spec != other.spec {
            return Err(Error::Shape("composition grid mismatch".into()));
        }
        let total = self.spec.total();
        let mat = la::matmul(&self.mat, &other.mat, total, total, total);
        Ok(ManifoldOperator { spec: self.spec, nu: self.nu.clone(), mat })
    }

    /// `self + c * other`.
    pub fn add_scaled(&self, other: &ManifoldOperator, c: C64) -> Result<ManifoldOperator> {
        if self.spec != other.spec {
            return Err(Error::Shape("sum grid mismatch".into()));
        }
        let mat = self
            .mat
            .iter()
            .zip(&other.mat)
            .map(|(&a, &b)| a + c * b)
            .collect();
        Ok(ManifoldOperator { spec: self.spec, nu: self.nu.clone(), mat })
    }

    /// Deterministic power-iteration estimate of the operator norm.
    pub fn norm_estimate(&self) -> f64 {
        let total = self.spec.total();
        let mut x: Vec<C64> = (0..total)
            .map(|j| {
                let t = j as f64 / total as f64;
                C64::new(1.0 + 0.5 * (2.0 * std::f64::consts::PI * t).cos(), 0.3 * t)
            })
            .collect();
        let mut norm = 0.0;
        for _ in 0..20 {
            let nx: f64 = x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
            if nx == 0.0 {
                return 0.0;
            }
            for v in x.iter_mut() {
                *v /= nx;
            }
            // One step of A^H A.
            let ax = self.apply(&x);
            let mut back = vec![C64::default(); total];
            for col in 0..total {
                let mut acc = C64::default();
                for row in 0..total {
                    acc += self.mat[col * total + row].conj() * ax[row];
                }
                back[col] = acc;
            }
            norm = back.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt().sqrt();
            x = back;
        }
        norm
    }
}

// ---------------------------------------------------------------------------
// Localization
// ---------------------------------------------------------------------------

/// Localizes a manifold operator to a chart:
/// `M_{phi^{1/2} o h_i^{-1}} (W_i T W_i^{-1}) M_{phi^{1/2} o h_i^{-1}}`
/// as a dense operator on the chart window. The piece `phi` must vanish
/// outside the chart domain.
pub fn localize_to_chart(
    t: &ManifoldOperator,
    phi: &[f64],
    atlas: &Atlas,
    chart: usize,
) -> Result<LinOp> {
    if chart >= atlas.charts.len() {
        return Err(Error::Shape("chart index out of range".into()));
    }
    if t.spec() != atlas.global {
        return Err(Error::Shape("operator grid does not match the atlas".into()));
    }
    let total = atlas.global.total();
    if phi.len() != total {
        return Err(Error::Shape("cutoff sample count mismatch".into()));
    }
    let mut point = vec![0.0; atlas.global.d];
    for (node, &v) in phi.iter().enumerate() {
        if v != 0.0 {
            atlas.global.node(node, &mut point);
            if !atlas.charts[chart].contains(&point) {
                return Err(Error::Domain(format!(
                    "cutoff support violates chart {chart}"
                )));
            }
        }
    }
    let map = atlas.charts[chart].node_map(&atlas.global);
    let roots: Vec<f64> = phi.iter().map(|&v| v.max(0.0).sqrt()).collect();
    let dense = t.dense();
    let mut mat = vec![C64::default(); total * total];
    for col in 0..total {
        if roots[col] == 0.0 {
            continue;
        }
        for row in 0..total {
            if roots[row] == 0.0 {
                continue;
            }
            mat[map[col] * total + map[row]] =
                dense[col * total + row] * (roots[row] * roots[col]);
        }
    }
    LinOp::from_dense(atlas.charts[chart].spec, mat)
}

/// Residual of the weighted adjoint-transfer identity
/// `W_i T* W_i^{-1} = M_{1/a_i} (W_i T W_i^{-1})* M_{a_i}` in dense
/// arithmetic, maximized over matrix entries.
pub fn adjoint_transfer_residual(
    t: &ManifoldOperator,
    atlas: &Atlas,
    density: &Density,
    chart: usize,
) -> Result<f64> {
    density.validate(atlas)?;
    if chart >= atlas.charts.len() {
        return Err(Error::Shape("chart index out of range".into()));
    }
    if t.spec() != atlas.global {
        return Err(Error::Shape("operator grid does not match the atlas".into()));
    }
    let total = atlas.global.total();
    let map = atlas.charts[chart].node_map(&atlas.global);
    let a = &density.per_chart[chart];
    let transfer = |m: &[C64]| -> Vec<C64> {
        let mut out = vec![C64::default(); total * total];
        for col in 0..total {
            for row in 0..total {
                out[map[col] * total + map[row]] = m[col * total + row];
            }
        }
        out
    };
    let lhs = transfer(&t.adjoint().mat);
    let wtw = transfer(t.dense());
    let mut worst = 0.0f64;
    for col in 0..total {
        for row in 0..total {
            // (M_{1/a} (WTW^{-1})^H M_a)[row, col]
            let rhs = wtw[row * total + col].conj() * (a[col] / a[row]);
            worst = worst.max((lhs[col * total + row] - rhs).norm());
        }
    }
    Ok(worst)
}

// ---------------------------------------------------------------------------
// Probing on chart windows
// ---------------------------------------------------------------------------

/// Probe parameters transported to a chart window: widths scale with the
/// window, carriers scale inversely, so packets are sample-covariant.
fn chart_probe_params(params: &ProbeParams, chart: &Chart) -> ProbeParams {
    ProbeParams {
        packet_width: params.packet_width * chart.scale,
        frequency_scale: params.frequency_scale.iter().map(|l| l / chart.scale).collect(),
        sample_points: Vec::new(),
    }
}

/// Least-squares weights for the affine model `y = b + c x` at fixed
/// abscissas: returns per-rung coefficients for the intercept and slope.
fn affine_weights(xs: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let nf = xs.len() as f64;
    if xs.len() == 1 {
        return (vec![1.0], vec![0.0]);
    }
    let sx: f64 = xs.iter().sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let det = nf * sxx - sx * sx;
    let wb = xs.iter().map(|x| (sxx - sx * x) / det).collect();
    let wc = xs.iter().map(|x| (nf * x - sx) / det).collect();
    (wb, wc)
}

/// Probes a dense chart operator at the given chart nodes and all
/// directions, batched through one matrix product per carrier frequency.
/// Returns direction-major values `[dir][node]` and the worst fit residual.
fn probe_field(
    op: &LinOp,
    dirs: &DirectionSet,
    params: &ProbeParams,
    node_list: &[usize],
) -> Result<(Vec<C64>, f64)> {
    let spec = op.spec();
    params.validate(&spec)?;
    let total = spec.total();
    let cols = node_list.len() * dirs.len();
    // Cap the packet batch so the scratch matrices stay modest.
    let block = (4_000_000 / total.max(1)).clamp(1, cols.max(1));
    let mut packets = vec![C64::default(); total * block];
    let mut raws: Vec<Vec<C64>> = Vec::with_capacity(params.frequency_scale.len());
    let mut point = vec![0.0; spec.d];
    let dense = match op {
        LinOp::Dense { mat, .. } => Some(mat.as_slice()),
        _ => None,
    };
    for &lambda in &params.frequency_scale {
        let mut raw = Vec::with_capacity(cols);
        let mut start = 0;
        while start < cols {
            let width = block.min(cols - start);
            for (b, column) in packets[..total * width].chunks_exact_mut(total).enumerate() {
                let c = start + b;
                let m = c / node_list.len();
                let node = node_list[c % node_list.len()];
                spec.node(node, &mut point);
                let pk =
                    wave_packet(spec, &point, dirs.dir(m), lambda, params.packet_width);
                column.copy_from_slice(&pk);
            }
            let images = match dense {
                Some(mat) => la::matmul(mat, &packets[..total * width], total, total, width),
                None => {
                    let mut out = vec![C64::default(); total * width];
                    for (src, dst) in packets[..total * width]
                        .chunks_exact(total)
                        .zip(out.chunks_exact_mut(total))
                    {
                        dst.copy_from_slice(&op.apply(src));
                    }
                    out
                }
            };
            for b in 0..width {
                let p = &packets[b * total..(b + 1) * total];
                let y = &images[b * total..(b + 1) * total];
                raw.push(p.iter().zip(y).map(|(a, b)| a.conj() * b).sum());
            }
            start += width;
        }
        raws.push(raw);
    }
    let xs: Vec<f64> = params.frequency_scale.iter().map(|l| 1.0 / l).collect();
    let (wb, wc) = affine_weights(&xs);
    let mut values = Vec::with_capacity(cols);
    let mut worst = 0.0f64;
    for c in 0..cols {
        let mut b = C64::default();
        let mut slope = C64::default();
        for (r, raw) in raws.iter().enumerate() {
            b += raw[c] * wb[r];
            slope += raw[c] * wc[r];
        }
        for (r, raw) in raws.iter().enumerate() {
            worst = worst.max((raw[c] - (b + slope * xs[r])).norm());
        }
        values.push(b);
    }
    Ok((values, worst))
}

// ---------------------------------------------------------------------------
// Globalised symbol
// ---------------------------------------------------------------------------

/// The globalised symbol of a manifold operator: one full field per chart
/// (the glued sum of all probed partition pieces, transported into that
/// chart), with a cross-chart consistency residual measured on dedicated
/// overlap test pieces probed independently in both charts.
#[derive(Debug, Clone)]
pub struct GlobalSymbol {
    pub charts: Vec<Symbol>,
    /// Max overlap deviation after cotangent pullback, relative to the
    /// operator norm estimate.
    pub consistency_residual: f64,
    /// The norm estimate used for normalization.
    pub norm_scale: f64,
}

fn direction_set_for(atlas: &Atlas) -> Result<DirectionSet> {
    DirectionSet::for_dim(atlas.global.d)
}

/// Glues the per-chart fields: probes every partition piece in its own
/// chart and resamples the results into every chart through the exact
/// node correspondence (directions are invariant under the positive
/// scalar-Jacobian transitions).
fn glue_fields(
    t: &ManifoldOperator,
    atlas: &Atlas,
    pou: &PartitionOfUnity,
    params: &ProbeParams,
    dirs: &DirectionSet,
) -> Result<(Vec<Symbol>, f64)> {
    let total = atlas.global.total();
    let all_nodes: Vec<usize> = (0..total).collect();
    let maps: Vec<Vec<usize>> =
        atlas.charts.iter().map(|c| c.node_map(&atlas.global)).collect();

    // Probed piece fields, indexed by global node through the chart map.
    let mut piece_fields: Vec<Vec<C64>> = Vec::with_capacity(pou.len());
    let mut worst_fit = 0.0f64;
    for (phi, &chart) in pou.pieces.iter().zip(&pou.chart_of) {
        let local = localize_to_chart(t, phi, atlas, chart)?;
        let cparams = chart_probe_params(params, &atlas.charts[chart]);
        // Chart nodes listed in global order, so probed columns line up
        // with global nodes directly.
        let chart_nodes: Vec<usize> = all_nodes.iter().map(|&j| maps[chart][j]).collect();
        let (vals, fit) = probe_field(&local, dirs, &cparams, &chart_nodes)?;
        worst_fit = worst_fit.max(fit);
        piece_fields.push(vals);
    }

    let mut charts_out = Vec::with_capacity(atlas.charts.len());
    for chart in &atlas.charts {
        let map = &maps[chart.id];
        let mut values = vec![C64::default(); dirs.len() * total];
        for m in 0..dirs.len() {
            for j in 0..total {
                let mut acc = C64::default();
                for pf in &piece_fields {
                    acc += pf[m * total + j];
                }
                values[m * total + map[j]] = acc;
            }
        }
        charts_out.push(Symbol::new(chart.spec, dirs.clone(), values)?);
    }
    Ok((charts_out, worst_fit))
}

/// Computes the globalised symbol. The consistency residual probes, for
/// every overlap component of every chart pair, a dedicated compactly
/// supported test piece in both charts and compares the fields after the
/// cotangent pullback; deviations are normalized by the operator norm.
pub fn global_symbol(
    t: &ManifoldOperator,
    atlas: &Atlas,
    pou: &PartitionOfUnity,
    params: &ProbeParams,
) -> Result<GlobalSymbol> {
    pou.validate(atlas)?;
    let dirs = direction_set_for(atlas)?;
    let (charts, _fit) = glue_fields(t, atlas, pou, params, &dirs)?;
    let norm_scale = t.norm_estimate().max(1e-12);

    let total = atlas.global.total();
    let maps: Vec<Vec<usize>> =
        atlas.charts.iter().map(|c| c.node_map(&atlas.global)).collect();
    let mut point = vec![0.0; atlas.global.d];
    let mut worst = 0.0f64;
    for i in 0..atlas.charts.len() {
        for j in (i + 1)..atlas.charts.len() {
            if atlas.transition(i, j).is_none() {
                continue;
            }
            for comp in atlas.overlap_components(i, j) {
                // Test piece: product bump filling 80% of the component.
                let chi: Vec<f64> = (0..total)
                    .map(|node| {
                        atlas.global.node(node, &mut point);
                        point
                            .iter()
                            .zip(&comp)
                            .map(|(&x, arc)| {
                                let center = (arc.start + 0.5 * arc.len)
                                    .rem_euclid(atlas.manifold_len);
                                bump_profile(
                                    torus_delta(x - center, atlas.manifold_len)
                                        / (0.4 * arc.len),
                                )
                            })
                            .product()
                    })
                    .collect();
                let mut picks: Vec<usize> =
                    (0..total).filter(|&node| chi[node] > 0.5).collect();
                if picks.len() > 4 {
                    let stride = picks.len() / 4;
                    picks = picks.iter().copied().step_by(stride).take(4).collect();
                }
                if picks.is_empty() {
                    continue;
                }
                let li = localize_to_chart(t, &chi, atlas, i)?;
                let lj = localize_to_chart(t, &chi, atlas, j)?;
                let ni: Vec<usize> = picks.iter().map(|&g| maps[i][g]).collect();
                let nj: Vec<usize> = picks.iter().map(|&g| maps[j][g]).collect();
                let (vi, _) = probe_field(
                    &li,
                    &dirs,
                    &chart_probe_params(params, &atlas.charts[i]),
                    &ni,
                )?;
                let (vj, _) = probe_field(
                    &lj,
                    &dirs,
                    &chart_probe_params(params, &atlas.charts[j]),
                    &nj,
                )?;
                for (a, b) in vi.iter().zip(&vj) {
                    worst = worst.max((a - b).norm());
                }
            }
        }
    }

    Ok(GlobalSymbol { charts, consistency_residual: worst / norm_scale, norm_scale })
}

/// Sup deviation between the glued fields produced by two good partitions,
/// relative to the operator norm estimate.
pub fn pou_independence(
    t: &ManifoldOperator,
    atlas: &Atlas,
    pou1: &PartitionOfUnity,
    pou2: &PartitionOfUnity,
    params: &ProbeParams,
) -> Result<f64> {
    pou1.validate(atlas)?;
    pou2.validate(atlas)?;
    let dirs = direction_set_for(atlas)?;
    let (f1, _) = glue_fields(t, atlas, pou1, params, &dirs)?;
    let (f2, _) = glue_fields(t, atlas, pou2, params, &dirs)?;
    let norm_scale = t.norm_estimate().max(1e-12);
    let mut worst = 0.0f64;
    for (a, b) in f1.iter().zip(&f2) {
        for (x, y) in a.values().iter().zip(b.values()) {
            worst = worst.max((x - y).norm());
        }
    }
    Ok(worst / norm_scale)
}

// ---------------------------------------------------------------------------
// Membership diagnostics
// ---------------------------------------------------------------------------

/// Configurable verdict thresholds: commutator compactness and probe
/// convergence. Compactness has no absolute finite-dimensional meaning, so
/// the raw scores are always reported alongside the verdict.
#[derive(Debug, Clone, Copy)]
pub struct MembershipThresholds {
    /// Commutator singular-value tail ratio must stay below this.
    pub tail_ratio: f64,
    /// Commutator singular-value decay exponent must stay below this
    /// (operators that vanish to roundoff pass outright).
    pub decay_exponent: f64,
    /// Probe extrapolation residual, relative to the operator norm.
    pub probe_residual: f64,
}

impl Default for MembershipThresholds {
    fn default() -> Self {
        MembershipThresholds { tail_ratio: 0.1, decay_exponent: -0.5, probe_residual: 0.1 }
    }
}

/// One commutator check of the membership battery.
#[derive(Debug, Clone)]
pub struct CommutatorCheck {
    pub label: String,
    pub score: CompactnessScore,
    pub pass: bool,
}

/// One probe-convergence flag for a localized partition piece.
#[derive(Debug, Clone)]
pub struct ProbeFlag {
    pub piece: usize,
    pub fit_residual: f64,
    pub converged: bool,
}

/// The membership diagnostic report: commutator compactness for a battery
/// of multipliers, probe-convergence flags for the localized pieces, and
/// the threshold-based verdict.
#[derive(Debug, Clone)]
pub struct MembershipReport {
    pub commutators: Vec<CommutatorCheck>,
    pub probe_flags: Vec<ProbeFlag>,
    pub thresholds: MembershipThresholds,
    pub verdict: bool,
}

/// Runs the membership battery: compactness of `[T, M_psi]` for every
/// partition piece and one canonical bump per chart (scored on the
/// `nu`-unitary realization `N^{1/2} C N^{-1/2}`), plus probe-convergence
/// flags of the localized pieces.
pub fn membership_diagnostic(
    t: &ManifoldOperator,
    atlas: &Atlas,
    pou: &PartitionOfUnity,
    params: &ProbeParams,
    thresholds: MembershipThresholds,
) -> Result<MembershipReport> {
    pou.validate(atlas)?;
    if t.spec() != atlas.global {
        return Err(Error::Shape("operator grid does not match the atlas".into()));
    }
    let total = atlas.global.total();
    let d = atlas.global.d;
    let mut point = vec![0.0; d];

    let mut battery: Vec<(String, Vec<f64>)> = Vec::new();
    for (idx, phi) in pou.pieces.iter().enumerate() {
        battery.push((format!("pou piece {idx}"), phi.clone()));
    }
    for chart in &atlas.charts {
        let vals: Vec<f64> = (0..total)
            .map(|node| {
                atlas.global.node(node, &mut point);
                point
                    .iter()
                    .zip(&chart.domain)
                    .map(|(&x, arc)| {
                        let center =
                            (arc.start + 0.5 * arc.len).rem_euclid(atlas.manifold_len);
                        bump_profile(
                            torus_delta(x - center, atlas.manifold_len) / (0.3 * arc.len),
                        )
                    })
                    .product()
            })
            .collect();
        battery.push((format!("chart {} bump", chart.id), vals));
    }

    let dense = t.dense();
    let nu = t.nu();
    let mut commutators = Vec::with_capacity(battery.len());
    let mut verdict = true;
    for (label, psi) in battery {
        // nu-frame commutator N^{1/2} (T M_psi - M_psi T) N^{-1/2}.
        let mut c = vec![C64::default(); total * total];
        for col in 0..total {
            for row in 0..total {
                let v = dense[col * total + row] * (psi[col] - psi[row]);
                c[col * total + row] = v * (nu[row] / nu[col]).sqrt();
            }
        }
        let score = compactness_score(&LinOp::from_dense(atlas.global, c)?)?;
        let zero = score.tail_ratio == 0.0 && score.decay_exponent == 0.0;
        let pass = zero
            || (score.tail_ratio < thresholds.tail_ratio
                && score.decay_exponent < thresholds.decay_exponent);
        verdict = verdict && pass;
        commutators.push(CommutatorCheck { label, score, pass });
    }

    let norm_scale = t.norm_estimate().max(1e-12);
    let dirs = direction_set_for(atlas)?;
    let maps: Vec<Vec<usize>> =
        atlas.charts.iter().map(|c| c.node_map(&atlas.global)).collect();
    let mut probe_flags = Vec::with_capacity(pou.len());
    for (idx, (phi, &chart)) in pou.pieces.iter().zip(&pou.chart_of).enumerate() {
        let local = localize_to_chart(t, phi, atlas, chart)?;
        let peak = phi.iter().cloned().fold(0.0, f64::max);
        let mut picks: Vec<usize> =
            (0..total).filter(|&node| phi[node] >= 0.5 * peak).collect();
        if picks.len() > 3 {
            let stride = picks.len() / 3;
            picks = picks.iter().copied().step_by(stride).take(3).collect();
        }
        let chart_nodes: Vec<usize> = picks.iter().map(|&g| maps[chart][g]).collect();
        let (_, fit) = probe_field(
            &local,
            &dirs,
            &chart_probe_params(params, &atlas.charts[chart]),
            &chart_nodes,
        )?;
        let rel = fit / norm_scale;
        let converged = rel <= thresholds.probe_residual;
        verdict = verdict && converged;
        probe_flags.push(ProbeFlag { piece: idx, fit_residual: rel, converged });
    }

    Ok(MembershipReport { commutators, probe_flags, thresholds, verdict })
}

// ---------------------------------------------------------------------------
// Liouville two-chart integration
// ---------------------------------------------------------------------------

/// Integrates a cotangent function through a chart: nodes in position, the
/// frequency lattice in the covector, both transported to manifold terms,
/// with the canonical weight `(h * 2*pi/L)^d` per sample. Functions
/// compactly supported in `U_i ∩ U_j` (and inside the frequency window)
/// integrate identically through overlapping charts.
pub fn liouville_chart_integral(
    atlas: &Atlas,
    chart: usize,
    mut f: impl FnMut(&[f64], &[f64]) -> f64,
) -> Result<f64> {
    if chart >= atlas.charts.len() {
        return Err(Error::Shape("chart index out of range".into()));
    }
    let ch = &atlas.charts[chart];
    let spec = ch.spec;
    let d = spec.d;
    let total = spec.total();
    let freqs = spec.axis_freqs();
    let weight = (spec.spacing() * 2.0 * std::f64::consts::PI / spec.length).powi(d as i32);
    let mut x = vec![0.0; d];
    let mut bins = vec![0usize; d];
    let mut sigma = vec![0.0; d];
    let mut acc = 0.0;
    for node in 0..total {
        spec.node(node, &mut x);
        let p = ch.h_inverse(&x);
        for k in 0..total {
            spec.unravel(k, &mut bins);
            for a in 0..d {
                // Covector pullback to manifold terms: sigma = J_h^* s.
                sigma[a] = ch.scale * freqs[bins[a]];
            }
            acc += f(&p, &sigma);
        }
    }
    Ok(acc * weight)
}

/// Integrates through two overlapping charts and returns both values.
pub fn liouville_two_chart(
    atlas: &Atlas,
    i: usize,
    j: usize,
    mut f: impl FnMut(&[f64], &[f64]) -> f64,
) -> Result<(f64, f64)> {
    let a = liouville_chart_integral(atlas, i, &mut f)?;
    let b = liouville_chart_integral(atlas, j, &mut f)?;
    Ok((a, b))
}
