//! Triangulated parameter disc D = {|z| < 1}: concentric polar meshes with
//! doubling ring counts, point location, the discrete Courant–Lebesgue radius
//! search, and the conformal lune map used by the blow-up rescaling.

use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("annulus ({s}, √{s}) crosses no mesh edges; smallest usable s ≈ {min_usable_s:e}")]
    AnnulusEmpty { s: f64, min_usable_s: f64 },
    #[error("lune radius r = {r} must lie in (0, 1)")]
    LuneRadius { r: f64 },
    #[error("point ({0}, {1}) could not be located in the mesh")]
    PointNotLocated(f64, f64),
    #[error("invalid argument: {0}")]
    InvalidArg(String),
}

/// Ring counts double with the ring's dyadic scale, capped so boundary counts
/// stay 6·2^min(level, RING_CAP).
const RING_CAP: u32 = 5;

/// Concentric polar triangulation of the closed unit disc.
///
/// Ring j of 2^level sits at radius j/2^level with 6·2^min(⌊log2 j⌋, cap)
/// vertices; counts double exactly when the radius doubles, which keeps the
/// minimum angle bounded independently of the level.
#[derive(Debug, Clone, Serialize)]
pub struct DiscMesh {
    pub vertices: Vec<[f64; 2]>,
    /// CCW index triples.
    pub triangles: Vec<[usize; 3]>,
    /// Boundary vertex indices in angular order.
    pub boundary_loop: Vec<usize>,
    pub level: usize,
    pub rings: usize,
    ring_offsets: Vec<usize>,
    band_ranges: Vec<(usize, usize)>,
    edges: Vec<[usize; 2]>,
}

fn ring_count(j: usize) -> usize {
    6 * (1usize << (j.ilog2().min(RING_CAP) as usize))
}

pub fn build_mesh(level: usize) -> DiscMesh {
    assert!(level <= 9, "level {level} too deep");
    let rings = 1usize << level;
    let mut vertices = vec![[0.0, 0.0]];
    let mut ring_offsets = vec![0usize; rings + 1];
    for j in 1..=rings {
        ring_offsets[j] = vertices.len();
        let n = ring_count(j);
        let r = j as f64 / rings as f64;
        for i in 0..n {
            let theta = std::f64::consts::TAU * i as f64 / n as f64;
            vertices.push([r * theta.cos(), r * theta.sin()]);
        }
    }

    let mut triangles: Vec<[usize; 3]> = Vec::new();
    let mut band_ranges = Vec::with_capacity(rings);
    // Center fan.
    let start = triangles.len();
    let n1 = ring_count(1);
    for i in 0..n1 {
        triangles.push([0, ring_offsets[1] + i, ring_offsets[1] + (i + 1) % n1]);
    }
    band_ranges.push((start, triangles.len()));

    for j in 1..rings {
        let start = triangles.len();
        let (n_in, n_out) = (ring_count(j), ring_count(j + 1));
        let (off_in, off_out) = (ring_offsets[j], ring_offsets[j + 1]);
        if n_in == n_out {
            for i in 0..n_in {
                let (a, b) = (off_in + i, off_in + (i + 1) % n_in);
                let (c, d) = (off_out + i, off_out + (i + 1) % n_out);
                triangles.push([a, c, d]);
                triangles.push([a, d, b]);
            }
        } else {
            debug_assert_eq!(n_out, 2 * n_in);
            for i in 0..n_in {
                let a = off_in + i;
                let b = off_in + (i + 1) % n_in;
                let (c, d, e) = (
                    off_out + 2 * i,
                    off_out + 2 * i + 1,
                    off_out + (2 * i + 2) % n_out,
                );
                triangles.push([a, c, d]);
                triangles.push([a, d, b]);
                triangles.push([b, d, e]);
            }
        }
        band_ranges.push((start, triangles.len()));
    }

    let boundary_loop: Vec<usize> =
        (ring_offsets[rings]..ring_offsets[rings] + ring_count(rings)).collect();

    let mut edge_set = std::collections::BTreeSet::new();
    for t in &triangles {
        for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
            edge_set.insert([a.min(b), a.max(b)]);
        }
    }

    DiscMesh {
        vertices,
        triangles,
        boundary_loop,
        level,
        rings,
        ring_offsets,
        band_ranges,
        edges: edge_set.into_iter().collect(),
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Location {
    /// Triangle index and barycentric coordinates.
    Triangle(usize, [f64; 3]),
    /// Between boundary vertices `boundary_loop[i]` and `boundary_loop[i+1]`,
    /// at fraction `frac` (by angle). Covers the sliver between the outer
    /// chords and the unit circle.
    Boundary(usize, f64),
}

impl DiscMesh {
    pub fn interior_vertices(&self) -> impl Iterator<Item = usize> + '_ {
        let bd_start = self.ring_offsets[self.rings];
        0..bd_start
    }

    pub fn is_boundary_vertex(&self, v: usize) -> bool {
        v >= self.ring_offsets[self.rings]
    }

    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }

    pub fn euler_characteristic(&self) -> isize {
        self.vertices.len() as isize - self.edges.len() as isize + self.triangles.len() as isize
    }

    pub fn min_angle_degrees(&self) -> f64 {
        let mut min_angle = f64::INFINITY;
        for t in &self.triangles {
            for k in 0..3 {
                let a = self.vertices[t[k]];
                let b = self.vertices[t[(k + 1) % 3]];
                let c = self.vertices[t[(k + 2) % 3]];
                let u = [b[0] - a[0], b[1] - a[1]];
                let v = [c[0] - a[0], c[1] - a[1]];
                let dot = u[0] * v[0] + u[1] * v[1];
                let cross = u[0] * v[1] - u[1] * v[0];
                min_angle = min_angle.min(cross.abs().atan2(dot));
            }
        }
        min_angle.to_degrees()
    }

    pub fn triangle_barycentric(&self, tri: usize, z: [f64; 2]) -> [f64; 3] {
        let [i0, i1, i2] = self.triangles[tri];
        let (a, b, c) = (self.vertices[i0], self.vertices[i1], self.vertices[i2]);
        let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
        let l1 = ((z[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (z[1] - a[1])) / det;
        let l2 = ((b[0] - a[0]) * (z[1] - a[1]) - (z[0] - a[0]) * (b[1] - a[1])) / det;
        [1.0 - l1 - l2, l1, l2]
    }

    /// Locate a point of the closed disc.
    pub fn locate(&self, z: [f64; 2]) -> Result<Location, MeshError> {
        let r = (z[0] * z[0] + z[1] * z[1]).sqrt();
        if r >= 1.0 {
            return Ok(self.boundary_location(z));
        }
        let band = ((r * self.rings as f64) as usize).min(self.rings - 1);
        for b in [Some(band), band.checked_sub(1), Some(band + 1)]
            .into_iter()
            .flatten()
        {
            if b >= self.band_ranges.len() {
                continue;
            }
            let (lo, hi) = self.band_ranges[b];
            for t in lo..hi {
                let bary = self.triangle_barycentric(t, z);
                if bary.iter().all(|&l| l >= -1e-10) {
                    return Ok(Location::Triangle(t, bary));
                }
            }
        }
        // Sliver between the outer chords and the circle.
        let chord_r = (std::f64::consts::PI / ring_count(self.rings) as f64).cos();
        if r > chord_r - 1e-9 {
            return Ok(self.boundary_location(z));
        }
        // Robustness fallback.
        for t in 0..self.triangles.len() {
            let bary = self.triangle_barycentric(t, z);
            if bary.iter().all(|&l| l >= -1e-9) {
                return Ok(Location::Triangle(t, bary));
            }
        }
        Err(MeshError::PointNotLocated(z[0], z[1]))
    }

    fn boundary_location(&self, z: [f64; 2]) -> Location {
        let n = self.boundary_loop.len();
        let theta = z[1].atan2(z[0]).rem_euclid(std::f64::consts::TAU);
        let pos = theta / std::f64::consts::TAU * n as f64;
        let i = (pos as usize).min(n - 1);
        Location::Boundary(i, pos - i as f64)
    }
}

/// One crossing of the circle |z - z0| = r with a mesh edge.
#[derive(Debug, Clone)]
pub struct ClCrossing {
    pub domain: [f64; 2],
    pub angle: f64,
    pub edge: [usize; 2],
    /// Interpolation weight towards edge[1].
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct ClRadius {
    pub r: f64,
    pub arc_length: f64,
    pub crossings: Vec<ClCrossing>,
}

/// Discrete Courant–Lebesgue search: scan candidate radii in (s, √s) around z0
/// and return the radius whose image polyline (positions interpolated along
/// crossed edges, Euclidean lengths) is shortest.
pub fn courant_lebesgue_radius(
    mesh: &DiscMesh,
    positions: &[Vec<f64>],
    z0: [f64; 2],
    s: f64,
) -> Result<ClRadius, MeshError> {
    if !(0.0 < s && s < 1.0) {
        return Err(MeshError::InvalidArg(format!("s = {s} must be in (0, 1)")));
    }
    let (lo, hi) = (s * (1.0 + 1e-9), s.sqrt() * (1.0 - 1e-9));
    let candidates = 48;
    let mut best: Option<ClRadius> = None;
    for i in 0..candidates {
        let r = lo * (hi / lo).powf((i as f64 + 0.5) / candidates as f64);
        let crossings = circle_crossings(mesh, z0, r);
        if crossings.is_empty() {
            continue;
        }
        let arc_length = image_arc_length(&crossings, positions, z0, r);
        if best.as_ref().map_or(true, |b| arc_length < b.arc_length) {
            best = Some(ClRadius {
                r,
                arc_length,
                crossings,
            });
        }
    }
    best.ok_or(MeshError::AnnulusEmpty {
        s,
        min_usable_s: (2.0 / mesh.rings as f64).powi(2),
    })
}

fn circle_crossings(mesh: &DiscMesh, z0: [f64; 2], r: f64) -> Vec<ClCrossing> {
    let mut crossings = Vec::new();
    for &[v0, v1] in mesh.edges() {
        let a = mesh.vertices[v0];
        let b = mesh.vertices[v1];
        let ax = [a[0] - z0[0], a[1] - z0[1]];
        let d = [b[0] - a[0], b[1] - a[1]];
        let aa = ax[0] * ax[0] + ax[1] * ax[1];
        let ad = ax[0] * d[0] + ax[1] * d[1];
        let dd = d[0] * d[0] + d[1] * d[1];
        if dd == 0.0 {
            continue;
        }
        let disc = ad * ad - dd * (aa - r * r);
        if disc <= 0.0 {
            continue;
        }
        let sq = disc.sqrt();
        for t in [(-ad - sq) / dd, (-ad + sq) / dd] {
            if (0.0..=1.0).contains(&t) {
                let z = [a[0] + t * d[0], a[1] + t * d[1]];
                crossings.push(ClCrossing {
                    domain: z,
                    angle: (z[1] - z0[1]).atan2(z[0] - z0[0]),
                    edge: [v0, v1],
                    weight: t,
                });
            }
        }
    }
    crossings.sort_by(|a, b| a.angle.total_cmp(&b.angle));
    crossings
}

fn image_arc_length(
    crossings: &[ClCrossing],
    positions: &[Vec<f64>],
    z0: [f64; 2],
    r: f64,
) -> f64 {
    let image = |c: &ClCrossing| -> Vec<f64> {
        let p0 = &positions[c.edge[0]];
        let p1 = &positions[c.edge[1]];
        p0.iter()
            .zip(p1)
            .map(|(x, y)| (1.0 - c.weight) * x + c.weight * y)
            .collect()
    };
    let m = crossings.len();
    let mut total = 0.0;
    for i in 0..m {
        let cj = &crossings[i];
        let ck = &crossings[(i + 1) % m];
        // Skip gaps whose circle arc leaves the closed disc.
        let mut mid_angle = 0.5 * (cj.angle + ck.angle);
        if i + 1 == m {
            mid_angle += std::f64::consts::PI;
        }
        let mid = [z0[0] + r * mid_angle.cos(), z0[1] + r * mid_angle.sin()];
        if mid[0] * mid[0] + mid[1] * mid[1] > 1.0 {
            continue;
        }
        total += crate::vecn::dist(&image(cj), &image(ck));
    }
    total
}

/// Disc automorphism sending 0 to z_star: z ↦ (z + z*)/(1 + conj(z*)·z).
pub fn disc_automorphism(z_star: Complex64, z: Complex64) -> Complex64 {
    (z + z_star) / (Complex64::new(1.0, 0.0) + z_star.conj() * z)
}

/// Intersection angle of two circles with center distance d and radii r1, r2.
pub fn circle_intersection_angle(d: f64, r1: f64, r2: f64) -> f64 {
    ((r1 * r1 + r2 * r2 - d * d) / (2.0 * r1 * r2))
        .clamp(-1.0, 1.0)
        .acos()
}

/// Conformal map from the unit disc onto the lune D ∩ D_r(-1).
///
/// Built as (Möbius sending the circle intersection points to 0, ∞) then a
/// power map straightening the lune angle, then the half-plane Cayley map;
/// forward is the inverse chain.
#[derive(Debug, Clone)]
pub struct LuneMap {
    pub r: f64,
    p: Complex64,
    q: Complex64,
    /// Rotation aligning the first lune edge with the positive real axis.
    phase: Complex64,
    /// Lune interior angle at the corners.
    pub alpha: f64,
    /// Corner clamp radius for `forward_clamped`.
    pub corner_margin: f64,
}

pub fn lune_to_disc(r: f64) -> Result<LuneMap, MeshError> {
    if !(0.0 < r && r < 1.0) {
        return Err(MeshError::LuneRadius { r });
    }
    let x = (r * r - 2.0) / 2.0;
    let y = (1.0 - x * x).sqrt();
    let build = |p: Complex64, q: Complex64| -> (Complex64, f64, bool) {
        let moeb = |z: Complex64| (z - p) / (z - q);
        // Ray directions of the two lune boundary arcs and of an interior point.
        let u1 = moeb(Complex64::new(-1.0, 0.0));
        let u2 = moeb(Complex64::new(-1.0 + r, 0.0));
        let um = moeb(Complex64::new(-1.0 + 0.5 * r, 0.001 * r));
        let phi1 = u1.arg();
        let wrap = |a: f64| {
            let mut a = a;
            while a <= -std::f64::consts::PI {
                a += std::f64::consts::TAU;
            }
            while a > std::f64::consts::PI {
                a -= std::f64::consts::TAU;
            }
            a
        };
        let psi2 = wrap(u2.arg() - phi1);
        let psim = wrap(um.arg() - phi1);
        let ok = psi2 > 0.0 && psim > 0.0 && psim < psi2;
        (Complex64::from_polar(1.0, -phi1), psi2, ok)
    };
    let (p, q) = (Complex64::new(x, y), Complex64::new(x, -y));
    let (phase, alpha, ok) = build(p, q);
    let (p, q, phase, alpha) = if ok {
        (p, q, phase, alpha)
    } else {
        let (phase2, alpha2, ok2) = build(q, p);
        debug_assert!(ok2, "lune sector orientation failed both ways");
        (q, p, phase2, alpha2)
    };
    Ok(LuneMap {
        r,
        p,
        q,
        phase,
        alpha,
        corner_margin: 1e-4,
    })
}

impl LuneMap {
    /// D → lune.
    pub fn forward(&self, z: Complex64) -> Complex64 {
        let i = Complex64::new(0.0, 1.0);
        let w = i * (Complex64::new(1.0, 0.0) + z) / (Complex64::new(1.0, 0.0) - z);
        // Boundary points land on the real axis; a rounding −0 imaginary part
        // would flip arg from +π to −π through powf.
        let w = Complex64::new(w.re, w.im.max(0.0));
        let zeta = w.powf(self.alpha / std::f64::consts::PI) * self.phase.conj();
        (self.p - zeta * self.q) / (Complex64::new(1.0, 0.0) - zeta)
    }

    /// Forward with the corner clamp (evaluation near z = ±1 is ill-posed).
    pub fn forward_clamped(&self, z: Complex64) -> Complex64 {
        let m = self.corner_margin;
        let mut z = z;
        for corner in [Complex64::new(1.0, 0.0), Complex64::new(-1.0, 0.0)] {
            let d = z - corner;
            if d.norm() < m {
                z = corner
                    + if d.norm() == 0.0 {
                        -corner * m
                    } else {
                        d / d.norm() * m
                    };
                if z.norm() > 1.0 {
                    z /= z.norm();
                }
            }
        }
        self.forward(z)
    }

    /// Lune → D.
    pub fn inverse(&self, w: Complex64) -> Complex64 {
        let i = Complex64::new(0.0, 1.0);
        let zeta = (w - self.p) / (w - self.q) * self.phase;
        let x = zeta.powf(std::f64::consts::PI / self.alpha);
        (x - i) / (x + i)
    }
}
