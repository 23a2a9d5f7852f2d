//! Discrete Plateau solver: minimize the Dirichlet energy of piecewise-linear
//! disc maps into the ambient metric over interior vertex positions and a
//! monotone boundary reparametrization with a three-point condition.
//!
//! Energy of a map u on triangle T with domain differential J and metric G at
//! the image barycenter is (1/2)·area(T)·tr(Jᵀ G J); area uses √det of the same
//! pullback, so energy ≥ area with equality exactly on conformal triangles.

use crate::ambient_metric::{AmbientMetric, MetricError};
use crate::disc_mesh::{DiscMesh, Location, MeshError};
use crate::vecn;
use serde::Serialize;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlateauError {
    #[error("boundary curve invalid: {0}")]
    CurveInvalid(String),
    #[error("vertex {vertex} at |x| = {norm} is outside the safe ball")]
    PositionOutsideBall { vertex: usize, norm: f64 },
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("recentering point sits on the boundary ring; handle concentration first")]
    RecenterOnBoundary,
    #[error("invalid argument: {0}")]
    InvalidArg(String),
}

/// Closed polyline boundary curve with arclength parametrization (Euclidean
/// chord lengths, linear interpolation).
#[derive(Debug, Clone, Serialize)]
pub struct BoundaryCurve {
    pub samples: Vec<Vec<f64>>,
    cum: Vec<f64>,
    total: f64,
}

impl BoundaryCurve {
    pub fn new(samples: Vec<Vec<f64>>) -> Result<Self, PlateauError> {
        if samples.len() < 3 {
            return Err(PlateauError::CurveInvalid(format!(
                "need >= 3 samples, got {}",
                samples.len()
            )));
        }
        let m = samples.len();
        let mut cum = Vec::with_capacity(m + 1);
        cum.push(0.0);
        for i in 0..m {
            let d = vecn::dist(&samples[i], &samples[(i + 1) % m]);
            cum.push(cum[i] + d);
        }
        let total = cum[m];
        if !(total > 0.0) {
            return Err(PlateauError::CurveInvalid("zero length".into()));
        }
        let curve = BoundaryCurve {
            samples,
            cum,
            total,
        };
        curve.check_simple()?;
        Ok(curve)
    }

    /// Self-intersection check at sample resolution: non-adjacent segments must
    /// stay apart by a fraction of the median segment length.
    fn check_simple(&self) -> Result<(), PlateauError> {
        let m = self.samples.len();
        let mut seg_lens: Vec<f64> = (0..m)
            .map(|i| vecn::dist(&self.samples[i], &self.samples[(i + 1) % m]))
            .collect();
        seg_lens.sort_by(f64::total_cmp);
        let med = seg_lens[m / 2];
        let tol = (med * 1e-6).max(self.total * 1e-12);
        for i in 0..m {
            for j in i + 2..m {
                if i == 0 && j == m - 1 {
                    continue; // adjacent through the wrap
                }
                let d = segment_distance(
                    &self.samples[i],
                    &self.samples[(i + 1) % m],
                    &self.samples[j],
                    &self.samples[(j + 1) % m],
                );
                if d < tol {
                    return Err(PlateauError::CurveInvalid(format!(
                        "segments {i} and {j} intersect at sample resolution (distance {d:e})"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn total_len(&self) -> f64 {
        self.total
    }

    fn segment_of(&self, t: f64) -> (usize, f64) {
        let t = t.rem_euclid(self.total);
        let i = self.cum.partition_point(|&c| c <= t).clamp(1, self.samples.len()) - 1;
        (i, t - self.cum[i])
    }

    pub fn point(&self, t: f64) -> Vec<f64> {
        let (i, along) = self.segment_of(t);
        let m = self.samples.len();
        let seg = self.cum[i + 1] - self.cum[i];
        let w = if seg > 0.0 { along / seg } else { 0.0 };
        let a = &self.samples[i];
        let b = &self.samples[(i + 1) % m];
        a.iter().zip(b).map(|(x, y)| x + w * (y - x)).collect()
    }

    /// Unit tangent of the segment containing t.
    pub fn tangent(&self, t: f64) -> Vec<f64> {
        let (i, _) = self.segment_of(t);
        let m = self.samples.len();
        let d = vecn::sub(&self.samples[(i + 1) % m], &self.samples[i]);
        let n = vecn::norm(&d);
        if n > 0.0 {
            vecn::scale(&d, 1.0 / n)
        } else {
            d
        }
    }

    /// Parameter of the nearest point on the polyline.
    pub fn project(&self, p: &[f64]) -> f64 {
        let m = self.samples.len();
        let mut best = (f64::INFINITY, 0.0);
        for i in 0..m {
            let a = &self.samples[i];
            let b = &self.samples[(i + 1) % m];
            let d = vecn::sub(b, a);
            let dd = vecn::dot(&d, &d);
            let w = if dd > 0.0 {
                (vecn::dot(&vecn::sub(p, a), &d) / dd).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let mut q = a.clone();
            vecn::axpy(&mut q, w, &d);
            let dist = vecn::dist(p, &q);
            if dist < best.0 {
                best = (dist, self.cum[i] + w * (self.cum[i + 1] - self.cum[i]));
            }
        }
        best.1
    }
}

fn segment_distance(a0: &[f64], a1: &[f64], b0: &[f64], b1: &[f64]) -> f64 {
    // Closest distance between two segments (clamped quadratic minimization).
    let d1 = vecn::sub(a1, a0);
    let d2 = vecn::sub(b1, b0);
    let r = vecn::sub(a0, b0);
    let (a, e, f) = (vecn::dot(&d1, &d1), vecn::dot(&d2, &d2), vecn::dot(&d2, &r));
    let (b, c) = (vecn::dot(&d1, &d2), vecn::dot(&d1, &r));
    let denom = a * e - b * b;
    let mut s = if denom.abs() > 1e-30 {
        ((b * f - c * e) / denom).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let mut t = if e > 0.0 { (b * s + f) / e } else { 0.0 };
    if t < 0.0 {
        t = 0.0;
        s = if a > 0.0 { (-c / a).clamp(0.0, 1.0) } else { 0.0 };
    } else if t > 1.0 {
        t = 1.0;
        s = if a > 0.0 { ((b - c) / a).clamp(0.0, 1.0) } else { 0.0 };
    }
    let mut pa = a0.to_vec();
    vecn::axpy(&mut pa, s, &d1);
    let mut pb = b0.to_vec();
    vecn::axpy(&mut pb, t, &d2);
    vecn::dist(&pa, &pb)
}

/// Piecewise-linear disc map: mesh, vertex images (flat storage, stride = dim),
/// and monotone boundary parameters tied to the curve.
#[derive(Debug, Clone)]
pub struct DiscMap {
    pub mesh: Arc<DiscMesh>,
    pub metric: Arc<AmbientMetric>,
    pub curve: BoundaryCurve,
    /// len = vertices · dim.
    pub positions: Vec<f64>,
    /// Per boundary_loop entry; strictly increasing, spanning exactly total_len.
    pub boundary_params: Vec<f64>,
}

impl DiscMap {
    pub fn dim(&self) -> usize {
        self.metric.dimension
    }

    pub fn position(&self, v: usize) -> &[f64] {
        let n = self.dim();
        &self.positions[v * n..(v + 1) * n]
    }

    fn set_position(&mut self, v: usize, p: &[f64]) {
        let n = self.dim();
        self.positions[v * n..(v + 1) * n].copy_from_slice(p);
    }

    /// Re-pin boundary vertex positions to the curve at their parameters.
    pub fn sync_boundary_positions(&mut self) {
        let loop_indices = self.mesh.boundary_loop.clone();
        for (k, &v) in loop_indices.iter().enumerate() {
            let p = self.curve.point(self.boundary_params[k]);
            self.set_position(v, &p);
        }
    }

    /// Evaluate the PL map at a domain point (barycentric interior, boundary
    /// params on the sliver outside the outer chords).
    pub fn eval(&self, z: [f64; 2]) -> Result<Vec<f64>, PlateauError> {
        match self.mesh.locate(z)? {
            Location::Triangle(t, bary) => {
                let [i0, i1, i2] = self.mesh.triangles[t];
                let n = self.dim();
                let mut out = vec![0.0; n];
                for (w, v) in bary.iter().zip([i0, i1, i2]) {
                    vecn::axpy(&mut out, *w, self.position(v));
                }
                Ok(out)
            }
            Location::Boundary(i, frac) => Ok(self.curve.point(self.boundary_param_at(i, frac))),
        }
    }

    /// Boundary parameter between loop entries i and i+1 (unwrapped).
    pub fn boundary_param_at(&self, i: usize, frac: f64) -> f64 {
        let nb = self.boundary_params.len();
        let t0 = self.boundary_params[i];
        let t1 = if i + 1 < nb {
            self.boundary_params[i + 1]
        } else {
            self.boundary_params[0] + self.curve.total_len()
        };
        t0 + frac * (t1 - t0)
    }

    pub fn check_positions(&self) -> Result<(), PlateauError> {
        for v in 0..self.mesh.vertices.len() {
            let p = self.position(v);
            if self.metric.check_point(p).is_err() {
                return Err(PlateauError::PositionOutsideBall {
                    vertex: v,
                    norm: vecn::norm(p),
                });
            }
        }
        Ok(())
    }
}

/// Domain-triangle precomputation: inverse edge matrix and reference area.
struct TriGeom {
    verts: [usize; 3],
    /// Inverse of Z = [z1-z0, z2-z0] (columns), row-major 2x2.
    inv: [f64; 4],
    area: f64,
}

fn tri_geoms(mesh: &DiscMesh) -> Vec<TriGeom> {
    mesh.triangles
        .iter()
        .map(|&[i0, i1, i2]| {
            let (a, b, c) = (mesh.vertices[i0], mesh.vertices[i1], mesh.vertices[i2]);
            let z = [b[0] - a[0], c[0] - a[0], b[1] - a[1], c[1] - a[1]];
            let det = z[0] * z[3] - z[1] * z[2];
            TriGeom {
                verts: [i0, i1, i2],
                inv: [z[3] / det, -z[1] / det, -z[2] / det, z[0] / det],
                area: 0.5 * det.abs(),
            }
        })
        .collect()
}

/// Energy, area and defect of one map.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EnergyBreakdown {
    pub energy: f64,
    pub area: f64,
    pub defect: f64,
}

/// (1/2) Σ_T area_T tr(Jᵀ G(x̄) J).
pub fn dirichlet_energy(map: &DiscMap) -> Result<f64, PlateauError> {
    map.check_positions()?;
    let ws = Workspace::new(map);
    ws.energy(map, &map.positions)
}

/// Σ_T √det(Jᵀ G(x̄) J) · area_T.
pub fn surface_area(map: &DiscMap) -> Result<f64, PlateauError> {
    map.check_positions()?;
    let n = map.dim();
    let mut contributions = Vec::with_capacity(map.mesh.triangles.len());
    for t in &map.mesh.triangles {
        let (p0, p1, p2) = (map.position(t[0]), map.position(t[1]), map.position(t[2]));
        if let Some(a) = crate::ambient_metric::triangle_area(&map.metric, p0, p1, p2)? {
            contributions.push(a);
        }
        let _ = n;
    }
    Ok(vecn::pairwise_sum(&contributions))
}

/// energy - area >= 0; zero iff the map is conformal triangle-wise.
pub fn conformality_defect(map: &DiscMap) -> Result<f64, PlateauError> {
    Ok(dirichlet_energy(map)? - surface_area(map)?)
}

pub fn energy_breakdown(map: &DiscMap) -> Result<EnergyBreakdown, PlateauError> {
    let energy = dirichlet_energy(map)?;
    let area = surface_area(map)?;
    Ok(EnergyBreakdown {
        energy,
        area,
        defect: energy - area,
    })
}

/// Euclidean (flat-metric) Dirichlet energy of the same map.
pub fn euclidean_energy(map: &DiscMap) -> f64 {
    let geoms = tri_geoms(&map.mesh);
    let n = map.dim();
    let contributions: Vec<f64> = geoms
        .iter()
        .map(|tg| {
            let (p0, p1, p2) = (
                map.position(tg.verts[0]),
                map.position(tg.verts[1]),
                map.position(tg.verts[2]),
            );
            let mut s = 0.0;
            for c in 0..n {
                let q1 = p1[c] - p0[c];
                let q2 = p2[c] - p0[c];
                let j0 = q1 * tg.inv[0] + q2 * tg.inv[2];
                let j1 = q1 * tg.inv[1] + q2 * tg.inv[3];
                s += j0 * j0 + j1 * j1;
            }
            0.5 * tg.area * s
        })
        .collect();
    vecn::pairwise_sum(&contributions)
}

/// Euclidean energy restricted to triangles whose barycenter lies in
/// D_r(z0) (when `inside`) or its complement.
pub fn euclidean_energy_in_subdisc(map: &DiscMap, z0: [f64; 2], r: f64, inside: bool) -> f64 {
    let geoms = tri_geoms(&map.mesh);
    let n = map.dim();
    let mut contributions = Vec::new();
    for tg in &geoms {
        let (a, b, c) = (
            map.mesh.vertices[tg.verts[0]],
            map.mesh.vertices[tg.verts[1]],
            map.mesh.vertices[tg.verts[2]],
        );
        let bx = (a[0] + b[0] + c[0]) / 3.0 - z0[0];
        let by = (a[1] + b[1] + c[1]) / 3.0 - z0[1];
        if ((bx * bx + by * by).sqrt() < r) != inside {
            continue;
        }
        let (p0, p1, p2) = (
            map.position(tg.verts[0]),
            map.position(tg.verts[1]),
            map.position(tg.verts[2]),
        );
        let mut s = 0.0;
        for cc in 0..n {
            let q1 = p1[cc] - p0[cc];
            let q2 = p2[cc] - p0[cc];
            let j0 = q1 * tg.inv[0] + q2 * tg.inv[2];
            let j1 = q1 * tg.inv[1] + q2 * tg.inv[3];
            s += j0 * j0 + j1 * j1;
        }
        contributions.push(0.5 * tg.area * s);
    }
    vecn::pairwise_sum(&contributions)
}

/// Ambient-metric energy over triangles with barycenter inside |z - z0| < r.
pub fn energy_in_subdisc(map: &DiscMap, z0: [f64; 2], r: f64) -> Result<f64, PlateauError> {
    let ws = Workspace::new(map);
    let mut contributions = Vec::new();
    for (ti, tg) in ws.geoms.iter().enumerate() {
        let (a, b, c) = (
            map.mesh.vertices[tg.verts[0]],
            map.mesh.vertices[tg.verts[1]],
            map.mesh.vertices[tg.verts[2]],
        );
        let bx = (a[0] + b[0] + c[0]) / 3.0 - z0[0];
        let by = (a[1] + b[1] + c[1]) / 3.0 - z0[1];
        if (bx * bx + by * by).sqrt() >= r {
            continue;
        }
        contributions.push(ws.triangle_energy(map, &map.positions, ti)?);
    }
    Ok(vecn::pairwise_sum(&contributions))
}

/// Capacity of the concentric condenser (D_rho, D): π / (-ln rho).
pub fn concentric_capacity(rho: f64) -> f64 {
    std::f64::consts::PI / (-rho.ln())
}

/// Max over triangles of ‖du_rad‖² - ‖du_spher‖² (should be <= tol on
/// conformal maps; rotationally symmetric metric only).
pub fn radial_spherical_excess(map: &DiscMap) -> Result<f64, PlateauError> {
    if !map.metric.is_euclidean_b() {
        return Err(PlateauError::InvalidArg(
            "radial/spherical split needs the euclidean b-form".into(),
        ));
    }
    let ws = Workspace::new(map);
    let n = map.dim();
    let mut excess = f64::NEG_INFINITY;
    for tg in &ws.geoms {
        let (p0, p1, p2) = (
            map.position(tg.verts[0]),
            map.position(tg.verts[1]),
            map.position(tg.verts[2]),
        );
        let bary = vecn::barycenter(p0, p1, p2);
        let rad = vecn::norm(&bary);
        if rad < 1e-9 {
            continue;
        }
        let xhat = vecn::scale(&bary, 1.0 / rad);
        let (l2, _) = map.metric.lambda_sq_with_derivative(rad)?;
        let mut rad2 = 0.0;
        let mut tot2 = 0.0;
        for a in 0..2 {
            let mut dot_r = 0.0;
            let mut norm2 = 0.0;
            for c in 0..n {
                let q1 = p1[c] - p0[c];
                let q2 = p2[c] - p0[c];
                let j = q1 * tg.inv[a] + q2 * tg.inv[2 + a];
                dot_r += j * xhat[c];
                norm2 += j * j;
            }
            rad2 += l2 * dot_r * dot_r;
            tot2 += l2 * norm2;
        }
        excess = excess.max(rad2 - (tot2 - rad2));
    }
    Ok(excess)
}

/// area(u|D_r(z0)) against π·δ(r)², where δ(r) is the smallest difference of
/// geodesic radii between the subdisc's boundary image and u(z0).
pub fn interior_area_floor(
    map: &DiscMap,
    z0: [f64; 2],
    r: f64,
) -> Result<(f64, f64), PlateauError> {
    let u0 = map.eval(z0)?;
    let r0 = map.metric.geodesic_radius(&u0)?;
    let mut delta = f64::INFINITY;
    for k in 0..256 {
        let ang = std::f64::consts::TAU * k as f64 / 256.0;
        let z = [z0[0] + r * ang.cos(), z0[1] + r * ang.sin()];
        if z[0] * z[0] + z[1] * z[1] >= 1.0 {
            continue;
        }
        let u = map.eval(z)?;
        delta = delta.min((map.metric.geodesic_radius(&u)? - r0).abs());
    }
    let mut patch = crate::ambient_metric::SurfacePatch::default();
    for tg in &map.mesh.triangles {
        let (a, b, c) = (
            map.mesh.vertices[tg[0]],
            map.mesh.vertices[tg[1]],
            map.mesh.vertices[tg[2]],
        );
        let bx = (a[0] + b[0] + c[0]) / 3.0 - z0[0];
        let by = (a[1] + b[1] + c[1]) / 3.0 - z0[1];
        if (bx * bx + by * by).sqrt() < r {
            patch.triangles.push([
                map.position(tg[0]).to_vec(),
                map.position(tg[1]).to_vec(),
                map.position(tg[2]).to_vec(),
            ]);
        }
    }
    let area = crate::ambient_metric::patch_area(&map.metric, &patch)?.area;
    Ok((area, std::f64::consts::PI * delta * delta))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnchorMode {
    /// Freeze anchors at curve parameters 0, L/3, 2L/3 (fresh solves).
    Thirds,
    /// Freeze anchors at the warm-start map's own parameters.
    KeepCurrent,
}

#[derive(Debug, Clone)]
pub struct SolveOpts {
    pub gtol: f64,
    pub max_iters: usize,
    pub memory: usize,
    pub anchor: AnchorMode,
    pub threads: usize,
    pub trace: bool,
}

impl Default for SolveOpts {
    fn default() -> Self {
        SolveOpts {
            gtol: 1e-5,
            max_iters: 600,
            memory: 8,
            anchor: AnchorMode::Thirds,
            threads: 1,
            trace: false,
        }
    }
}

#[derive(Debug, Clone)]
pub enum Init {
    HarmonicExtension,
    PriorMap(DiscMap),
}

#[derive(Debug, Clone)]
pub struct PlateauResult {
    pub map: DiscMap,
    pub energy: f64,
    pub area: f64,
    pub conformality_defect: f64,
    pub iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
    pub concentration_suspected: bool,
    pub energy_trace: Vec<f64>,
}

/// Shared evaluation machinery for the solver: triangle geometry, variable
/// layout, energy and analytic gradient.
struct Workspace {
    geoms: Vec<TriGeom>,
    dim: usize,
    /// Interior vertex -> slot index.
    interior_slot: Vec<Option<usize>>,
    interior: Vec<usize>,
    /// boundary_loop position -> variable slot (anchors None).
    bd_slot: Vec<Option<usize>>,
    bd_free: Vec<usize>,
    /// anchor positions in the boundary loop (sorted).
    anchors: [usize; 3],
    eps_gap: f64,
    threads: usize,
    /// vertex -> boundary loop position.
    loop_pos: Vec<Option<usize>>,
}

impl Workspace {
    fn new(map: &DiscMap) -> Self {
        Self::with_anchors(map, [0, 0, 0], 0.0, 1)
    }

    fn with_anchors(map: &DiscMap, anchors: [usize; 3], eps_gap: f64, threads: usize) -> Self {
        let mesh = &map.mesh;
        let nv = mesh.vertices.len();
        let mut interior_slot = vec![None; nv];
        let mut interior = Vec::new();
        for v in mesh.interior_vertices() {
            interior_slot[v] = Some(interior.len());
            interior.push(v);
        }
        let nb = mesh.boundary_loop.len();
        let mut bd_slot = vec![None; nb];
        let mut bd_free = Vec::new();
        for i in 0..nb {
            if !anchors.contains(&i) {
                bd_slot[i] = Some(bd_free.len());
                bd_free.push(i);
            }
        }
        let mut loop_pos = vec![None; nv];
        for (k, &v) in mesh.boundary_loop.iter().enumerate() {
            loop_pos[v] = Some(k);
        }
        Workspace {
            geoms: tri_geoms(mesh),
            dim: map.dim(),
            interior_slot,
            interior,
            bd_slot,
            bd_free,
            anchors,
            eps_gap,
            threads,
            loop_pos,
        }
    }

    fn var_count(&self) -> usize {
        self.interior.len() * self.dim + self.bd_free.len()
    }

    /// Pack the current map state into the variable vector.
    fn pack(&self, map: &DiscMap) -> Vec<f64> {
        let n = self.dim;
        let mut x = vec![0.0; self.var_count()];
        for (slot, &v) in self.interior.iter().enumerate() {
            x[slot * n..(slot + 1) * n].copy_from_slice(map.position(v));
        }
        let off = self.interior.len() * n;
        for (slot, &i) in self.bd_free.iter().enumerate() {
            x[off + slot] = map.boundary_params[i];
        }
        x
    }

    /// Write the variable vector into positions/params (anchors untouched),
    /// and sync boundary positions.
    fn unpack(&self, x: &[f64], map: &mut DiscMap) {
        let n = self.dim;
        for (slot, &v) in self.interior.iter().enumerate() {
            let p = x[slot * n..(slot + 1) * n].to_vec();
            map.set_position(v, &p);
        }
        let off = self.interior.len() * n;
        for (slot, &i) in self.bd_free.iter().enumerate() {
            map.boundary_params[i] = x[off + slot];
        }
        map.sync_boundary_positions();
    }

    /// Project boundary parameters onto the monotone simplex between anchors.
    fn project(&self, x: &mut [f64], map: &DiscMap) {
        let off = self.interior.len() * self.dim;
        let nb = map.boundary_params.len();
        let total = map.curve.total_len();
        // Three anchor-to-anchor segments (cyclically).
        for k in 0..3 {
            let a0 = self.anchors[k];
            let a1 = self.anchors[(k + 1) % 3];
            let lo = map.boundary_params[a0] + if k == 0 { 0.0 } else { 0.0 };
            let mut hi = map.boundary_params[a1];
            let mut count = (a1 + nb - a0) % nb;
            if count == 0 {
                count = nb;
            }
            if hi <= lo {
                hi += total;
            }
            let m = count - 1; // free params strictly between the anchors
            if m == 0 {
                continue;
            }
            // Gather, shift by index*gap so monotone+gap becomes isotone, PAV, clip.
            let mut y = Vec::with_capacity(m);
            for j in 1..count {
                let i = (a0 + j) % nb;
                let slot = self.bd_slot[i].expect("anchor inside segment");
                let mut t = x[off + slot];
                // Unwrap into (lo, hi).
                while t < lo - 0.5 * total {
                    t += total;
                }
                while t > hi + 0.5 * total {
                    t -= total;
                }
                y.push(t - self.eps_gap * j as f64);
            }
            isotonic_nondecreasing(&mut y);
            let y_lo = lo;
            let y_hi = hi - self.eps_gap * count as f64;
            for (j, val) in y.iter_mut().enumerate() {
                *val = val.clamp(y_lo, y_hi.max(y_lo));
                let i = (a0 + j + 1) % nb;
                let slot = self.bd_slot[i].unwrap();
                x[off + slot] = *val + self.eps_gap * (j + 1) as f64;
            }
        }
    }

    fn triangle_energy(
        &self,
        map: &DiscMap,
        positions: &[f64],
        ti: usize,
    ) -> Result<f64, PlateauError> {
        let tg = &self.geoms[ti];
        let n = self.dim;
        let p = |v: usize| &positions[v * n..(v + 1) * n];
        let (p0, p1, p2) = (p(tg.verts[0]), p(tg.verts[1]), p(tg.verts[2]));
        let bary = vecn::barycenter(p0, p1, p2);
        let (l2, _) = map.metric.lambda_sq_with_derivative(vecn::norm(&bary))?;
        let s = if map.metric.is_euclidean_b() {
            let mut s = 0.0;
            for c in 0..n {
                let q1 = p1[c] - p0[c];
                let q2 = p2[c] - p0[c];
                let j0 = q1 * tg.inv[0] + q2 * tg.inv[2];
                let j1 = q1 * tg.inv[1] + q2 * tg.inv[3];
                s += j0 * j0 + j1 * j1;
            }
            s
        } else {
            let mut b = vec![0.0; n * n];
            map.metric.b_matrix(&bary, &mut b);
            let mut jcols = vec![0.0; 2 * n];
            for c in 0..n {
                let q1 = p1[c] - p0[c];
                let q2 = p2[c] - p0[c];
                jcols[c] = q1 * tg.inv[0] + q2 * tg.inv[2];
                jcols[n + c] = q1 * tg.inv[1] + q2 * tg.inv[3];
            }
            let mut s = 0.0;
            for a in 0..2 {
                let col = &jcols[a * n..(a + 1) * n];
                for i in 0..n {
                    for jj in 0..n {
                        s += col[i] * b[i * n + jj] * col[jj];
                    }
                }
            }
            s
        };
        Ok(0.5 * tg.area * l2 * s)
    }

    fn energy(&self, map: &DiscMap, positions: &[f64]) -> Result<f64, PlateauError> {
        let nt = self.geoms.len();
        let compute = |range: std::ops::Range<usize>,
                       out: &mut [f64]|
         -> Result<(), PlateauError> {
            for (k, ti) in range.enumerate() {
                out[k] = self.triangle_energy(map, positions, ti)?;
            }
            Ok(())
        };
        let mut contributions = vec![0.0; nt];
        if self.threads <= 1 || nt < 2048 {
            compute(0..nt, &mut contributions)?;
        } else {
            let chunk = 512; // fixed: reduction order independent of thread count
            let res: Result<Vec<()>, PlateauError> = std::thread::scope(|scope| {
                let handles: Vec<_> = contributions
                    .chunks_mut(chunk)
                    .enumerate()
                    .map(|(ci, out)| {
                        let lo = ci * chunk;
                        let hi = (lo + out.len()).min(nt);
                        scope.spawn(move || compute(lo..hi, out))
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().unwrap()).collect()
            });
            res?;
        }
        Ok(vecn::pairwise_sum(&contributions))
    }

    /// Energy and gradient wrt the packed variables.
    fn energy_grad(&self, map: &DiscMap, x: &[f64]) -> Result<(f64, Vec<f64>), PlateauError> {
        // Positions corresponding to x (anchors and boundary from params).
        let mut work = map.clone();
        self.unpack(x, &mut work);
        work.check_positions().map_err(|e| match e {
            PlateauError::PositionOutsideBall { vertex, norm } => {
                PlateauError::PositionOutsideBall { vertex, norm }
            }
            other => other,
        })?;

        let n = self.dim;
        let mut grad_pos = vec![0.0; work.positions.len()];
        let mut energies = Vec::with_capacity(self.geoms.len());
        let fd_h = 1e-6;
        let mut b = vec![0.0; n * n];
        let mut b_p = vec![0.0; n * n];
        let mut b_m = vec![0.0; n * n];
        for tg in &self.geoms {
            let p = |v: usize| {
                let s = &work.positions[v * n..(v + 1) * n];
                s.to_vec()
            };
            let (p0, p1, p2) = (p(tg.verts[0]), p(tg.verts[1]), p(tg.verts[2]));
            let bary = vecn::barycenter(&p0, &p1, &p2);
            let rad = vecn::norm(&bary);
            let (l2, dl2) = work.metric.lambda_sq_with_derivative(rad)?;
            let mut jcols = vec![0.0; 2 * n];
            for c in 0..n {
                let q1 = p1[c] - p0[c];
                let q2 = p2[c] - p0[c];
                jcols[c] = q1 * tg.inv[0] + q2 * tg.inv[2];
                jcols[n + c] = q1 * tg.inv[1] + q2 * tg.inv[3];
            }
            let euclid = work.metric.is_euclidean_b();
            let mut s_val = 0.0;
            // dS/dq1, dS/dq2 (n-vectors).
            let mut ds_dq1 = vec![0.0; n];
            let mut ds_dq2 = vec![0.0; n];
            if euclid {
                for a in 0..2 {
                    let col = &jcols[a * n..(a + 1) * n];
                    let m0 = tg.inv[a];
                    let m1 = tg.inv[2 + a];
                    for c in 0..n {
                        s_val += col[c] * col[c];
                        ds_dq1[c] += 2.0 * col[c] * m0;
                        ds_dq2[c] += 2.0 * col[c] * m1;
                    }
                }
            } else {
                work.metric.b_matrix(&bary, &mut b);
                for a in 0..2 {
                    let col = &jcols[a * n..(a + 1) * n];
                    let m0 = tg.inv[a];
                    let m1 = tg.inv[2 + a];
                    let mut bcol = vec![0.0; n];
                    for i in 0..n {
                        for jj in 0..n {
                            bcol[i] += b[i * n + jj] * col[jj];
                        }
                    }
                    for c in 0..n {
                        s_val += col[c] * bcol[c];
                        ds_dq1[c] += 2.0 * bcol[c] * m0;
                        ds_dq2[c] += 2.0 * bcol[c] * m1;
                    }
                }
            }
            energies.push(0.5 * tg.area * l2 * s_val);

            let w = 0.5 * tg.area;
            // Metric variation through the barycenter: d(λ²)/dx̄ = dl2 · x̂,
            // plus ∂B/∂x̄ by central differences for perturbed forms.
            let mut dmetric = vec![0.0; n];
            if rad > 1e-14 {
                for c in 0..n {
                    dmetric[c] = dl2 * bary[c] / rad * s_val;
                }
            }
            if !euclid {
                for c in 0..n {
                    let mut bp = bary.clone();
                    bp[c] += fd_h;
                    let mut bm = bary.clone();
                    bm[c] -= fd_h;
                    work.metric.b_matrix(&bp, &mut b_p);
                    work.metric.b_matrix(&bm, &mut b_m);
                    let mut ds_b = 0.0;
                    for a in 0..2 {
                        let col = &jcols[a * n..(a + 1) * n];
                        for i in 0..n {
                            for jj in 0..n {
                                ds_b += col[i] * (b_p[i * n + jj] - b_m[i * n + jj]) * col[jj];
                            }
                        }
                    }
                    dmetric[c] += l2 * ds_b / (2.0 * fd_h);
                }
            } else {
                // dmetric currently holds dl2 terms only; keep.
            }

            for (local, &v) in tg.verts.iter().enumerate() {
                let gp = &mut grad_pos[v * n..(v + 1) * n];
                for c in 0..n {
                    let dsdq = match local {
                        0 => -(ds_dq1[c] + ds_dq2[c]),
                        1 => ds_dq1[c],
                        _ => ds_dq2[c],
                    };
                    gp[c] += w * (l2 * dsdq + dmetric[c] / 3.0);
                }
            }
        }
        let energy = vecn::pairwise_sum(&energies);

        // Pack: interior position gradients, boundary chain rule through γ'.
        let mut grad = vec![0.0; self.var_count()];
        for (slot, &v) in self.interior.iter().enumerate() {
            grad[slot * n..(slot + 1) * n].copy_from_slice(&grad_pos[v * n..(v + 1) * n]);
        }
        let off = self.interior.len() * n;
        for (slot, &i) in self.bd_free.iter().enumerate() {
            let v = work.mesh.boundary_loop[i];
            let tangent = work.curve.tangent(work.boundary_params[i]);
            grad[off + slot] = vecn::dot(&grad_pos[v * n..(v + 1) * n], &tangent);
        }
        Ok((energy, grad))
    }
}

/// Pool-adjacent-violators: project onto non-decreasing sequences (L²).
fn isotonic_nondecreasing(y: &mut [f64]) {
    let n = y.len();
    let mut vals: Vec<f64> = Vec::with_capacity(n);
    let mut weights: Vec<f64> = Vec::with_capacity(n);
    let mut counts: Vec<usize> = Vec::with_capacity(n);
    for i in 0..n {
        vals.push(y[i]);
        weights.push(1.0);
        counts.push(1);
        while vals.len() > 1 && vals[vals.len() - 2] > vals[vals.len() - 1] {
            let (v1, w1, c1) = (vals.pop().unwrap(), weights.pop().unwrap(), counts.pop().unwrap());
            let last = vals.len() - 1;
            let merged_w = weights[last] + w1;
            vals[last] = (vals[last] * weights[last] + v1 * w1) / merged_w;
            weights[last] = merged_w;
            counts[last] += c1;
        }
    }
    let mut idx = 0;
    for (v, c) in vals.iter().zip(&counts) {
        for _ in 0..*c {
            y[idx] = *v;
            idx += 1;
        }
    }
}

/// Boundary anchor loop positions nearest to angles 0, 2π/3, 4π/3.
fn anchor_positions(mesh: &DiscMesh) -> [usize; 3] {
    let nb = mesh.boundary_loop.len();
    let pick = |ang: f64| -> usize {
        ((ang / std::f64::consts::TAU * nb as f64).round() as usize) % nb
    };
    [
        pick(0.0),
        pick(std::f64::consts::TAU / 3.0),
        pick(2.0 * std::f64::consts::TAU / 3.0),
    ]
}

/// Cotangent-weight harmonic extension of the boundary positions.
fn harmonic_extension(map: &mut DiscMap) {
    let mesh = map.mesh.clone();
    let n = map.dim();
    let nv = mesh.vertices.len();
    // Assemble cotan weights.
    let mut weights: std::collections::BTreeMap<(usize, usize), f64> = Default::default();
    for t in &mesh.triangles {
        for k in 0..3 {
            let (i, j, o) = (t[k], t[(k + 1) % 3], t[(k + 2) % 3]);
            let a = mesh.vertices[i];
            let b = mesh.vertices[j];
            let c = mesh.vertices[o];
            let u = [a[0] - c[0], a[1] - c[1]];
            let v = [b[0] - c[0], b[1] - c[1]];
            let cross = (u[0] * v[1] - u[1] * v[0]).abs();
            let cot = (u[0] * v[0] + u[1] * v[1]) / cross.max(1e-300);
            let key = (i.min(j), i.max(j));
            *weights.entry(key).or_insert(0.0) += 0.5 * cot;
        }
    }
    let mut slot = vec![usize::MAX; nv];
    let interior: Vec<usize> = mesh.interior_vertices().collect();
    for (s, &v) in interior.iter().enumerate() {
        slot[v] = s;
    }
    let m = interior.len();
    // CSR-ish adjacency.
    let mut neighbors: Vec<Vec<(usize, f64)>> = vec![Vec::new(); m];
    let mut diag = vec![0.0; m];
    let mut rhs = vec![vec![0.0; m]; n];
    for (&(i, j), &w) in &weights {
        for (p, q) in [(i, j), (j, i)] {
            if slot[p] != usize::MAX {
                let sp = slot[p];
                diag[sp] += w;
                if slot[q] != usize::MAX {
                    neighbors[sp].push((slot[q], w));
                } else {
                    let pos = map.position(q).to_vec();
                    for c in 0..n {
                        rhs[c][sp] += w * pos[c];
                    }
                }
            }
        }
    }
    // Jacobi-preconditioned CG per coordinate.
    for c in 0..n {
        let bvec = &rhs[c];
        let mut x = vec![0.0; m];
        for (s, &v) in interior.iter().enumerate() {
            x[s] = map.position(v)[c];
        }
        let apply = |x: &[f64], out: &mut [f64]| {
            for s in 0..m {
                let mut acc = diag[s] * x[s];
                for &(t, w) in &neighbors[s] {
                    acc -= w * x[t];
                }
                out[s] = acc;
            }
        };
        let mut r = vec![0.0; m];
        apply(&x, &mut r);
        for s in 0..m {
            r[s] = bvec[s] - r[s];
        }
        let mut z: Vec<f64> = r.iter().zip(&diag).map(|(ri, di)| ri / di).collect();
        let mut p = z.clone();
        let mut rz = vecn::dot(&r, &z);
        let b_norm = vecn::norm(bvec).max(1e-300);
        let mut ap = vec![0.0; m];
        for _ in 0..(4 * m + 100) {
            if vecn::norm(&r) <= 1e-12 * b_norm {
                break;
            }
            apply(&p, &mut ap);
            let alpha = rz / vecn::dot(&p, &ap);
            for s in 0..m {
                x[s] += alpha * p[s];
                r[s] -= alpha * ap[s];
            }
            for s in 0..m {
                z[s] = r[s] / diag[s];
            }
            let rz_new = vecn::dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for s in 0..m {
                p[s] = z[s] + beta * p[s];
            }
        }
        for (s, &v) in interior.iter().enumerate() {
            let mut pos = map.position(v).to_vec();
            pos[c] = x[s];
            map.set_position(v, &pos);
        }
    }
}

/// Build the initial map: uniform boundary parameters aligned with the anchors
/// plus harmonic extension, or a resampled prior map.
pub fn initial_map(
    curve: &BoundaryCurve,
    mesh: Arc<DiscMesh>,
    metric: Arc<AmbientMetric>,
    init: &Init,
) -> Result<DiscMap, PlateauError> {
    for s in &curve.samples {
        if metric.check_point(s).is_err() {
            return Err(PlateauError::CurveInvalid(format!(
                "curve sample at |x| = {} outside the safe ball",
                vecn::norm(s)
            )));
        }
    }
    let n = metric.dimension;
    let nb = mesh.boundary_loop.len();
    let total = curve.total_len();
    match init {
        Init::HarmonicExtension => {
            let mut map = DiscMap {
                positions: vec![0.0; mesh.vertices.len() * n],
                boundary_params: (0..nb).map(|i| total * i as f64 / nb as f64).collect(),
                mesh,
                metric,
                curve: curve.clone(),
            };
            map.sync_boundary_positions();
            // Interior seed: affine blend towards the centroid, then harmonic solve.
            let centroid = {
                let mut c = vec![0.0; n];
                for s in &map.curve.samples {
                    vecn::axpy(&mut c, 1.0 / map.curve.samples.len() as f64, s);
                }
                c
            };
            for v in map.mesh.interior_vertices() {
                map.set_position(v, &centroid);
            }
            harmonic_extension(&mut map);
            Ok(map)
        }
        Init::PriorMap(prior) => {
            let mut map = DiscMap {
                positions: vec![0.0; mesh.vertices.len() * n],
                boundary_params: vec![0.0; nb],
                mesh: mesh.clone(),
                metric,
                curve: curve.clone(),
            };
            let scale = total / prior.curve.total_len();
            for i in 0..nb {
                let v = mesh.boundary_loop[i];
                let z = mesh.vertices[v];
                let theta = z[1].atan2(z[0]).rem_euclid(std::f64::consts::TAU);
                let t_prior = prior_boundary_param(prior, theta);
                map.boundary_params[i] = t_prior * scale;
            }
            enforce_monotone(&mut map.boundary_params, total);
            for v in mesh.interior_vertices() {
                let p = prior.eval(mesh.vertices[v])?;
                map.set_position(v, &p);
            }
            map.sync_boundary_positions();
            Ok(map)
        }
    }
}

/// Boundary parameter of a map at angle theta (cyclic linear interpolation).
fn prior_boundary_param(map: &DiscMap, theta: f64) -> f64 {
    let nb = map.boundary_params.len();
    let pos = theta / std::f64::consts::TAU * nb as f64;
    let i = (pos as usize).min(nb - 1);
    map.boundary_param_at(i, pos - i as f64)
}

fn enforce_monotone(t: &mut [f64], total: f64) {
    // Unwrap so the sequence increases; tiny violations from interpolation
    // noise are flattened forward.
    for i in 1..t.len() {
        while t[i] < t[i - 1] - 0.5 * total {
            t[i] += total;
        }
        if t[i] < t[i - 1] {
            t[i] = t[i - 1];
        }
    }
}

/// Minimize the Dirichlet energy over interior positions and monotone boundary
/// parameters (projected L-BFGS, Armijo backtracking).
pub fn solve_plateau(
    curve: &BoundaryCurve,
    mesh: Arc<DiscMesh>,
    metric: Arc<AmbientMetric>,
    init: Init,
    opts: &SolveOpts,
) -> Result<PlateauResult, PlateauError> {
    let mut map = initial_map(curve, mesh, metric, &init)?;
    if opts.anchor == AnchorMode::Thirds {
        // Pin the anchor parameters exactly at 0, L/3, 2L/3.
        let anchors = anchor_positions(&map.mesh);
        let total = map.curve.total_len();
        for (k, &a) in anchors.iter().enumerate() {
            map.boundary_params[a] = total * k as f64 / 3.0;
        }
        enforce_monotone(&mut map.boundary_params, total);
        map.sync_boundary_positions();
    }
    solve_from(map, opts)
}

/// Optimize from an existing map state (anchors frozen at its current values).
pub fn solve_from(mut map: DiscMap, opts: &SolveOpts) -> Result<PlateauResult, PlateauError> {
    let anchors = anchor_positions(&map.mesh);
    let nb = map.mesh.boundary_loop.len();
    let eps_gap = map.curve.total_len() * 1e-4 / nb as f64;
    let ws = Workspace::with_anchors(&map, anchors, eps_gap, opts.threads.max(1));

    let mut x = ws.pack(&map);
    ws.project(&mut x, &map);
    let (mut energy, mut grad) = ws.energy_grad(&map, &x)?;
    let mut trace = if opts.trace { vec![energy] } else { Vec::new() };

    let mut s_list: Vec<Vec<f64>> = Vec::new();
    let mut y_list: Vec<Vec<f64>> = Vec::new();
    let mut rho_list: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut collapse_streak = 0usize;
    let mut concentration_suspected = false;
    let mut grad_norm = proj_grad_norm(&ws, &map, &x, &grad);

    for iter in 0..opts.max_iters {
        iterations = iter + 1;
        if grad_norm <= opts.gtol {
            converged = true;
            iterations = iter;
            break;
        }
        // Two-loop recursion.
        let mut d: Vec<f64> = grad.iter().map(|g| -g).collect();
        let k = s_list.len();
        let mut alphas = vec![0.0; k];
        for i in (0..k).rev() {
            alphas[i] = rho_list[i] * vecn::dot(&s_list[i], &d);
            vecn::axpy(&mut d, -alphas[i], &y_list[i]);
        }
        let gamma = if k > 0 {
            let sy = vecn::dot(&s_list[k - 1], &y_list[k - 1]);
            let yy = vecn::dot(&y_list[k - 1], &y_list[k - 1]);
            (sy / yy).max(1e-12)
        } else {
            1.0 / vecn::norm(&grad).max(1.0)
        };
        for v in d.iter_mut() {
            *v *= gamma;
        }
        for i in 0..k {
            let beta = rho_list[i] * vecn::dot(&y_list[i], &d);
            vecn::axpy(&mut d, alphas[i] - beta, &s_list[i]);
        }
        if vecn::dot(&d, &grad) >= 0.0 {
            // Not a descent direction; restart with steepest descent.
            d = grad.iter().map(|g| -g * gamma).collect();
            s_list.clear();
            y_list.clear();
            rho_list.clear();
        }

        // Backtracking Armijo with projection.
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let mut x_new: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + alpha * di).collect();
            ws.project(&mut x_new, &map);
            match ws.energy_grad(&map, &x_new) {
                Ok((e_new, g_new)) => {
                    let step: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
                    let decrease = vecn::dot(&grad, &step);
                    if e_new <= energy + 1e-4 * decrease || e_new < energy - 1e-15 * energy.abs() {
                        accepted = Some((x_new, e_new, g_new, step));
                        break;
                    }
                }
                Err(PlateauError::PositionOutsideBall { .. })
                | Err(PlateauError::Metric(_)) => {} // step left the ball: shrink
                Err(other) => return Err(other),
            }
            alpha *= 0.5;
        }
        let Some((x_new, e_new, g_new, step)) = accepted else {
            // Line-search failure: return best-so-far flagged non-converged.
            break;
        };
        let y: Vec<f64> = g_new.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = vecn::dot(&step, &y);
        if sy > 1e-12 * vecn::norm(&step) * vecn::norm(&y) {
            s_list.push(step);
            y_list.push(y);
            rho_list.push(1.0 / sy);
            if s_list.len() > opts.memory {
                s_list.remove(0);
                y_list.remove(0);
                rho_list.remove(0);
            }
        }
        x = x_new;
        energy = e_new;
        grad = g_new;
        grad_norm = proj_grad_norm(&ws, &map, &x, &grad);
        if opts.trace {
            trace.push(energy);
        }

        // Monotonicity-collapse bookkeeping: boundary gaps pinned at eps_gap.
        let off = ws.interior.len() * ws.dim;
        let mut active = 0usize;
        for w in 0..ws.bd_free.len().saturating_sub(1) {
            if (x[off + w + 1] - x[off + w] - eps_gap).abs() < eps_gap * 1e-3 {
                active += 1;
            }
        }
        if active * 2 > nb {
            collapse_streak += 1;
            if collapse_streak >= 10 {
                concentration_suspected = true;
            }
        } else {
            collapse_streak = 0;
        }
    }

    ws.unpack(&x, &mut map);
    let area = surface_area(&map)?;
    Ok(PlateauResult {
        energy,
        area,
        conformality_defect: energy - area,
        iterations,
        grad_norm,
        converged,
        concentration_suspected,
        energy_trace: trace,
        map,
    })
}

fn proj_grad_norm(ws: &Workspace, map: &DiscMap, x: &[f64], grad: &[f64]) -> f64 {
    let mut moved: Vec<f64> = x.iter().zip(grad).map(|(xi, gi)| xi - gi).collect();
    ws.project(&mut moved, map);
    let mut acc = 0.0;
    for (m, xi) in moved.iter().zip(x) {
        acc += (m - xi) * (m - xi);
    }
    acc.sqrt()
}

/// Compare the analytic energy gradient against central finite differences on
/// `coords` randomly chosen variables; returns the max relative error.
pub fn gradient_check(map: &DiscMap, seed: u64, coords: usize) -> Result<f64, PlateauError> {
    use rand::{Rng, SeedableRng};
    let anchors = anchor_positions(&map.mesh);
    let ws = Workspace::with_anchors(map, anchors, 0.0, 1);
    let x = ws.pack(map);
    let (_, grad) = ws.energy_grad(map, &x)?;
    let scale = vecn::norm(&grad).max(1e-9);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-6;
    let mut max_rel = 0.0_f64;
    for _ in 0..coords {
        let i = rng.gen_range(0..x.len());
        let mut xp = x.clone();
        xp[i] += h;
        let mut xm = x.clone();
        xm[i] -= h;
        let (ep, _) = ws.energy_grad(map, &xp)?;
        let (em, _) = ws.energy_grad(map, &xm)?;
        let fd = (ep - em) / (2.0 * h);
        max_rel = max_rel.max((fd - grad[i]).abs() / scale);
    }
    Ok(max_rel)
}

/// Conformal recentering: pull back by the disc automorphism sending 0 to the
/// parameter point whose image is closest to the origin, then resample onto
/// the reference mesh.
pub fn recenter(map: &DiscMap) -> Result<DiscMap, PlateauError> {
    use num_complex::Complex64;
    let mut best = (f64::INFINITY, 0usize);
    for v in 0..map.mesh.vertices.len() {
        let r = map.metric.geodesic_radius(map.position(v))?;
        if r < best.0 {
            best = (r, v);
        }
    }
    let v_star = best.1;
    if map.mesh.is_boundary_vertex(v_star) {
        return Err(PlateauError::RecenterOnBoundary);
    }
    let z_star = map.mesh.vertices[v_star];
    let z_star_c = Complex64::new(z_star[0], z_star[1]);
    if z_star_c.norm() < 1e-15 {
        return Ok(map.clone());
    }
    resample_with_automorphism(map, |z| crate::disc_mesh::disc_automorphism(z_star_c, z))
}

/// Resample `map` through a disc automorphism φ: new_u(z) = old_u(φ(z)).
pub fn resample_with_automorphism(
    map: &DiscMap,
    phi: impl Fn(num_complex::Complex64) -> num_complex::Complex64,
) -> Result<DiscMap, PlateauError> {
    use num_complex::Complex64;
    let mut out = map.clone();
    for v in map.mesh.interior_vertices().collect::<Vec<_>>() {
        let z = map.mesh.vertices[v];
        let w = phi(Complex64::new(z[0], z[1]));
        let p = map.eval([w.re, w.im])?;
        out.set_position(v, &p);
    }
    let nb = map.mesh.boundary_loop.len();
    let mut new_params = Vec::with_capacity(nb);
    for i in 0..nb {
        let v = map.mesh.boundary_loop[i];
        let z = map.mesh.vertices[v];
        let w = phi(Complex64::new(z[0], z[1]));
        let theta = w.im.atan2(w.re).rem_euclid(std::f64::consts::TAU);
        new_params.push(prior_boundary_param(map, theta));
    }
    enforce_monotone(&mut new_params, map.curve.total_len());
    out.boundary_params = new_params;
    out.sync_boundary_positions();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ambient_metric::AmbientMetric;
    use crate::ball_model::BallModel;
    use crate::comparison_ode::{solve_comparison, CurvatureProfile};
    use crate::disc_mesh::build_mesh;

    fn h3_metric() -> Arc<AmbientMetric> {
        let p = CurvatureProfile::constant(-1.0).unwrap();
        let model = BallModel::build(solve_comparison(&p, 25.0, 1e-8).unwrap()).unwrap();
        Arc::new(AmbientMetric::rotationally_symmetric(Arc::new(model), 3))
    }

    fn circle_curve(radius: f64, samples: usize, tilt: f64) -> BoundaryCurve {
        let pts = (0..samples)
            .map(|i| {
                let a = std::f64::consts::TAU * i as f64 / samples as f64;
                let (x, y, z) = (radius * a.cos(), radius * a.sin(), 0.0);
                // Rotate about the y-axis by `tilt`.
                vec![
                    x * tilt.cos() + z * tilt.sin(),
                    y,
                    -x * tilt.sin() + z * tilt.cos(),
                ]
            })
            .collect();
        BoundaryCurve::new(pts).unwrap()
    }

    /// Scaled-identity equatorial map: u(z) = c·z in the equatorial plane.
    fn scaled_identity_map(metric: Arc<AmbientMetric>, level: usize, c: f64) -> DiscMap {
        let mesh = Arc::new(build_mesh(level));
        let curve = circle_curve(c, 512, 0.0);
        let mut map = DiscMap {
            positions: vec![0.0; mesh.vertices.len() * 3],
            boundary_params: vec![0.0; mesh.boundary_loop.len()],
            mesh: mesh.clone(),
            metric,
            curve,
        };
        for v in 0..mesh.vertices.len() {
            let z = mesh.vertices[v];
            map.set_position(v, &[c * z[0], c * z[1], 0.0]);
        }
        let nb = mesh.boundary_loop.len();
        for i in 0..nb {
            let z = mesh.vertices[mesh.boundary_loop[i]];
            let theta = z[1].atan2(z[0]).rem_euclid(std::f64::consts::TAU);
            map.boundary_params[i] = map.curve.total_len() * theta / std::f64::consts::TAU;
        }
        map.sync_boundary_positions();
        map
    }

    #[test]
    fn curve_rejects_self_intersection() {
        // Figure-eight-ish polyline.
        let pts = vec![
            vec![0.0, 0.0, 0.0],
            vec![1.0, 1.0, 0.0],
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
        ];
        assert!(BoundaryCurve::new(pts).is_err());
        let ok = circle_curve(0.5, 64, 0.0);
        assert!((ok.total_len() - std::f64::consts::TAU * 0.5).abs() < 0.01);
    }

    #[test]
    fn constant_map_zero_energy() {
        let metric = h3_metric();
        let mesh = Arc::new(build_mesh(2));
        let curve = circle_curve(0.3, 64, 0.0);
        let mut map = DiscMap {
            positions: vec![0.0; mesh.vertices.len() * 3],
            boundary_params: (0..mesh.boundary_loop.len())
                .map(|i| curve.total_len() * i as f64 / mesh.boundary_loop.len() as f64)
                .collect(),
            mesh: mesh.clone(),
            metric,
            curve,
        };
        for v in 0..mesh.vertices.len() {
            map.set_position(v, &[0.1, 0.0, 0.0]);
        }
        // (boundary not on curve: fine for the energy formulas under test)
        assert!(dirichlet_energy(&map).unwrap().abs() < 1e-18);
        assert!(surface_area(&map).unwrap().abs() < 1e-18);
    }

    #[test]
    fn scaled_identity_is_conformal_with_exact_defect_zero() {
        let metric = h3_metric();
        let c = metric.euclidean_ball_radius(1.0);
        let map = scaled_identity_map(metric, 4, c);
        let bd = energy_breakdown(&map).unwrap();
        // Conformal: defect vanishes to roundoff at any level.
        assert!(bd.defect.abs() <= 1e-12 * bd.energy, "defect {}", bd.defect);
        // Both converge to the geodesic disc area 2π(cosh 1 - 1) = 3.412282.
        let exact = std::f64::consts::TAU * (1.0_f64.cosh() - 1.0);
        assert!((bd.energy - exact).abs() < 0.02 * exact, "{}", bd.energy);
    }

    #[test]
    fn anisotropic_stretch_defect_closed_form() {
        // Flat metric, u(x, y) = (2x, y, 0): E = (5/2)·π·? on the unit disc:
        // |du|² = 4 + 1 per point, E = (1/2)(5)(π) ; area = 2π; defect = π/2.
        let metric = Arc::new(AmbientMetric::flat(3));
        let mesh = Arc::new(build_mesh(4));
        let curve = {
            let pts = (0..256)
                .map(|i| {
                    let a = std::f64::consts::TAU * i as f64 / 256.0;
                    vec![2.0 * a.cos(), a.sin(), 0.0]
                })
                .collect();
            BoundaryCurve::new(pts).unwrap()
        };
        let mut map = DiscMap {
            positions: vec![0.0; mesh.vertices.len() * 3],
            boundary_params: vec![0.0; mesh.boundary_loop.len()],
            mesh: mesh.clone(),
            metric,
            curve,
        };
        for v in 0..mesh.vertices.len() {
            let z = mesh.vertices[v];
            map.set_position(v, &[2.0 * z[0], z[1], 0.0]);
        }
        let e = dirichlet_energy(&map).unwrap();
        let a = surface_area(&map).unwrap();
        // PL interpolation of an affine map is exact; quadrature of constants too.
        assert!((e - 2.5 * std::f64::consts::PI).abs() < 1e-10);
        assert!((a - 2.0 * std::f64::consts::PI).abs() < 1e-10);
        assert!((conformality_defect(&map).unwrap() - std::f64::consts::FRAC_PI_2).abs() < 1e-10);
    }

    #[test]
    fn energy_dominates_area() {
        // Random-ish map: energy >= area always.
        let metric = h3_metric();
        let map = {
            let mut m = scaled_identity_map(metric, 3, 0.4);
            let nv = m.mesh.vertices.len();
            for v in 0..nv {
                if m.mesh.is_boundary_vertex(v) {
                    continue;
                }
                let z = m.mesh.vertices[v];
                let wob = 0.05 * (7.0 * z[0]).sin() * (5.0 * z[1]).cos();
                let p = [
                    0.4 * z[0] + 0.3 * wob,
                    0.4 * z[1] - 0.2 * wob,
                    0.3 * wob,
                ];
                m.set_position(v, &p);
            }
            m
        };
        let bd = energy_breakdown(&map).unwrap();
        assert!(bd.defect >= 0.0);
        assert!(bd.defect > 1e-3); // genuinely non-conformal
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let metric = h3_metric();
        let mut map = scaled_identity_map(metric, 2, 0.35);
        // Random small distortion, keep boundary params off polyline corners.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let nv = map.mesh.vertices.len();
        for v in 0..nv {
            if map.mesh.is_boundary_vertex(v) {
                continue;
            }
            let mut p = map.position(v).to_vec();
            for c in &mut p {
                *c += rng.gen_range(-0.02..0.02);
            }
            map.set_position(v, &p);
        }
        let err = gradient_check(&map, 5, 60).unwrap();
        assert!(err < 1e-6, "gradient rel err {err:e}");
    }

    #[test]
    fn gradient_matches_for_perturbed_metric() {
        let metric = Arc::new(
            AmbientMetric::rotationally_symmetric(
                h3_metric().ball_model().unwrap().clone().into(),
                3,
            )
            .with_catalog_perturbation("rotation-shear")
            .unwrap(),
        );
        let map = scaled_identity_map(metric, 2, 0.3);
        let err = gradient_check(&map, 9, 40).unwrap();
        assert!(err < 1e-5, "gradient rel err {err:e}");
    }

    #[test]
    fn solves_tiny_circle_to_flat_disc() {
        // Near the origin the metric is ~4·I (k=-1): the minimizer is the flat
        // disc and energy ≈ 4·(Euclidean energy) = 4·π·ρ_e².
        let metric = h3_metric();
        let rho_e = 0.05;
        let curve = circle_curve(rho_e, 256, 0.0);
        let mesh = Arc::new(build_mesh(3));
        let res = solve_plateau(
            &curve,
            mesh,
            metric,
            Init::HarmonicExtension,
            &SolveOpts {
                gtol: 1e-7,
                max_iters: 400,
                ..Default::default()
            },
        )
        .unwrap();
        let expect = 4.0 * std::f64::consts::PI * rho_e * rho_e;
        assert!(
            (res.energy - expect).abs() < 0.02 * expect,
            "energy {} vs {}",
            res.energy,
            expect
        );
        // Flatness: third coordinates stay at 0 by symmetry.
        let nv = res.map.mesh.vertices.len();
        for v in 0..nv {
            assert!(res.map.position(v)[2].abs() < 1e-9);
        }
        // Monotone energy decrease along the trace is checked in the
        // equatorial oracle below (trace enabled there).
    }

    #[test]
    fn equatorial_oracle_level3() {
        let metric = h3_metric();
        let g3 = metric.euclidean_ball_radius(3.0);
        let curve = circle_curve(g3, 512, 0.0);
        let mesh = Arc::new(build_mesh(3));
        let res = solve_plateau(
            &curve,
            mesh,
            metric,
            Init::HarmonicExtension,
            &SolveOpts {
                gtol: 1e-6,
                max_iters: 800,
                trace: true,
                ..Default::default()
            },
        )
        .unwrap();
        // Planarity oracle.
        let nv = res.map.mesh.vertices.len();
        let mut max_dev = 0.0_f64;
        for v in 0..nv {
            max_dev = max_dev.max(res.map.position(v)[2].abs());
        }
        assert!(max_dev < 1e-3 * g3, "plane deviation {max_dev:e}");
        assert!(
            res.conformality_defect / res.energy < 5e-3,
            "defect ratio {}",
            res.conformality_defect / res.energy
        );
        // Energy decreases monotonically across accepted steps.
        for w in res.energy_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12 * w[0].abs());
        }
        // Capacity bound: E(u, D_1/2) <= max(8a^{-2}, 8a^{-1})·cap + slack.
        let e_half = energy_in_subdisc(&res.map, [0.0, 0.0], 0.5).unwrap();
        let cap = concentric_capacity(0.5);
        assert!(e_half <= 8.0 * cap * 1.05, "{e_half} vs {}", 8.0 * cap);
        // Radial–spherical inequality on the (near-)conformal solution.
        let excess = radial_spherical_excess(&res.map).unwrap();
        assert!(excess <= 1e-6, "radial excess {excess:e}");
        // Interior area floor at the center.
        let (area, floor) = interior_area_floor(&res.map, [0.0, 0.0], 0.5).unwrap();
        assert!(area >= floor - 1e-6, "area {area} < floor {floor}");
    }

    #[test]
    fn warm_start_agrees_with_cold_start() {
        let metric = h3_metric();
        let g2 = metric.euclidean_ball_radius(2.0);
        let curve = circle_curve(g2, 384, 0.3);
        let mesh = Arc::new(build_mesh(3));
        let gtol = 1e-5;
        let cold = solve_plateau(
            &curve,
            mesh.clone(),
            metric.clone(),
            Init::HarmonicExtension,
            &SolveOpts {
                gtol,
                max_iters: 900,
                ..Default::default()
            },
        )
        .unwrap();
        // Warm start from a coarser-level solution of the same curve.
        let coarse = solve_plateau(
            &curve,
            Arc::new(build_mesh(2)),
            metric.clone(),
            Init::HarmonicExtension,
            &SolveOpts {
                gtol,
                max_iters: 900,
                ..Default::default()
            },
        )
        .unwrap();
        let warm = solve_plateau(
            &curve,
            mesh,
            metric,
            Init::PriorMap(coarse.map),
            &SolveOpts {
                gtol,
                max_iters: 900,
                anchor: AnchorMode::KeepCurrent,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(cold.converged && warm.converged);
        assert!(
            (cold.energy - warm.energy).abs() <= 10.0 * gtol,
            "cold {} vs warm {}",
            cold.energy,
            warm.energy
        );
    }

    #[test]
    fn recenter_restores_centered_map() {
        use num_complex::Complex64;
        let metric = h3_metric();
        let c = metric.euclidean_ball_radius(2.0);
        let map = scaled_identity_map(metric, 4, c);
        // Identity case: already centered.
        let same = recenter(&map).unwrap();
        assert!(vecn::dist(same.position(0), &[0.0, 0.0, 0.0]) < 1e-12);

        // Push the center off with a Möbius automorphism, then recenter.
        let sigma = Complex64::new(0.35, 0.1);
        let pushed =
            resample_with_automorphism(&map, |z| crate::disc_mesh::disc_automorphism(sigma, z))
                .unwrap();
        let dist_before = vecn::norm(pushed.position(0));
        let fixed = recenter(&pushed).unwrap();
        let dist_after = vecn::norm(fixed.position(0));
        let h = 1.5 / map.mesh.rings as f64 * c;
        assert!(dist_before > 2.0 * h, "fixture did not move the center");
        assert!(dist_after < h, "recentered distance {dist_after} vs cell {h}");
    }

    #[test]
    fn isotonic_projection_properties() {
        let mut y = vec![3.0, 1.0, 2.0, 5.0, 4.0];
        isotonic_nondecreasing(&mut y);
        for w in y.windows(2) {
            assert!(w[1] >= w[0] - 1e-15);
        }
        // Already sorted stays put.
        let mut z = vec![1.0, 2.0, 3.0];
        isotonic_nondecreasing(&mut z);
        assert_eq!(z, vec![1.0, 2.0, 3.0]);
    }
}
