//! The Riemannian metric on the unit ball: rotationally symmetric form
//! f'(|x|)²·(Euclidean) or the perturbed form f'(|x|)²·⟨,⟩_b with a user
//! callback B(x) bounded between m_lo and m_hi times the identity.
//!
//! A flat mode (conformal factor ≡ 1) backs the Euclidean-limit oracles.

use crate::ball_model::{BallError, BallModel};
use crate::vecn;
use serde::Serialize;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("point with |x| = {norm} is outside the working ball (limit {limit})")]
    OutsideBall { norm: f64, limit: f64 },
    #[error(transparent)]
    Ball(#[from] BallError),
    #[error("perturbation matrix at {point:?} is not symmetric (|B - Bᵀ|max = {asym:e})")]
    NotSymmetric { point: Vec<f64>, asym: f64 },
    #[error("perturbation eigenvalues at {point:?} leave [{m_lo}, {m_hi}]")]
    BoundsViolated { point: Vec<f64>, m_lo: f64, m_hi: f64 },
    #[error("invalid argument: {0}")]
    InvalidArg(String),
    #[error("unknown perturbation '{0}' (catalog: identity, diagonal-bump, rotation-shear)")]
    UnknownPerturbation(String),
}

/// Radial conformal structure: a ball model, or the flat unit ball (factor 1).
#[derive(Clone)]
pub enum RadialFactor {
    Ball(Arc<BallModel>),
    Flat,
}

pub type PerturbationFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

#[derive(Clone)]
pub enum BForm {
    Euclidean,
    Perturbation {
        name: String,
        callback: Arc<PerturbationFn>,
        m_lo: f64,
        m_hi: f64,
    },
}

impl std::fmt::Debug for BForm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BForm::Euclidean => write!(f, "Euclidean"),
            BForm::Perturbation { name, m_lo, m_hi, .. } => {
                write!(f, "Perturbation({name}, [{m_lo}, {m_hi}])")
            }
        }
    }
}

impl std::fmt::Debug for RadialFactor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RadialFactor::Ball(m) => write!(f, "Ball(s_max = {})", m.s_max()),
            RadialFactor::Flat => write!(f, "Flat"),
        }
    }
}

/// Metric tensor field G(x) = f'(|x|)²·B(x) on the unit ball, immutable and
/// reentrant after construction.
#[derive(Debug, Clone)]
pub struct AmbientMetric {
    pub radial: RadialFactor,
    pub b_form: BForm,
    pub dimension: usize,
}

impl AmbientMetric {
    pub fn rotationally_symmetric(model: Arc<BallModel>, dimension: usize) -> Self {
        assert!(dimension >= 3, "ambient dimension must be >= 3");
        AmbientMetric {
            radial: RadialFactor::Ball(model),
            b_form: BForm::Euclidean,
            dimension,
        }
    }

    /// Flat unit ball (conformal factor 1, B = I): the Euclidean-limit oracle.
    pub fn flat(dimension: usize) -> Self {
        assert!(dimension >= 3, "ambient dimension must be >= 3");
        AmbientMetric {
            radial: RadialFactor::Flat,
            b_form: BForm::Euclidean,
            dimension,
        }
    }

    /// Attach a perturbation ⟨,⟩_b with declared eigenvalue bounds. The bounds
    /// must straddle the Euclidean normalization (0 < m_lo <= 1 <= m_hi) and are
    /// spot-checked at quasi-random points, not verified globally.
    pub fn with_perturbation(
        mut self,
        name: impl Into<String>,
        callback: Arc<PerturbationFn>,
        m_lo: f64,
        m_hi: f64,
    ) -> Result<Self, MetricError> {
        if !(0.0 < m_lo && m_lo <= 1.0 && 1.0 <= m_hi) {
            return Err(MetricError::InvalidArg(format!(
                "perturbation bounds must satisfy 0 < m_lo <= 1 <= m_hi, got [{m_lo}, {m_hi}]"
            )));
        }
        let b_form = BForm::Perturbation {
            name: name.into(),
            callback,
            m_lo,
            m_hi,
        };
        self.b_form = b_form;
        self.spot_check_bounds(64)?;
        Ok(self)
    }

    /// Built-in perturbation catalog (documented bounds):
    /// - `identity`:       B = I, bounds (1, 1)
    /// - `diagonal-bump`:  B = diag(1 + 0.25 sin(3 x_i + 0.7 i)), bounds (0.75, 1.25)
    /// - `rotation-shear`: diag(1.2, 0.85, 1, ..) conjugated by an x-dependent
    ///   rotation in the first two coordinates, bounds (0.85, 1.2)
    pub fn with_catalog_perturbation(self, name: &str) -> Result<Self, MetricError> {
        let n = self.dimension;
        match name {
            "identity" => {
                let cb: Arc<PerturbationFn> = Arc::new(move |_x, out| identity_matrix(n, out));
                self.with_perturbation("identity", cb, 1.0, 1.0)
            }
            "diagonal-bump" => {
                let cb: Arc<PerturbationFn> = Arc::new(move |x, out| {
                    identity_matrix(n, out);
                    for i in 0..n {
                        out[i * n + i] = 1.0 + 0.25 * (3.0 * x[i] + 0.7 * i as f64).sin();
                    }
                });
                self.with_perturbation("diagonal-bump", cb, 0.75, 1.25)
            }
            "rotation-shear" => {
                let cb: Arc<PerturbationFn> = Arc::new(move |x, out| {
                    identity_matrix(n, out);
                    // Rᵀ D R in the (0,1) plane; rotation leaves eigenvalues fixed.
                    let (d0, d1) = (1.2, 0.85);
                    let phi = 0.5 * x[0] + 0.3 * x[1];
                    let (s, c) = phi.sin_cos();
                    out[0] = c * c * d0 + s * s * d1;
                    out[1] = s * c * (d0 - d1);
                    out[n] = out[1];
                    out[n + 1] = s * s * d0 + c * c * d1;
                });
                self.with_perturbation("rotation-shear", cb, 0.85, 1.2)
            }
            other => Err(MetricError::UnknownPerturbation(other.to_string())),
        }
    }

    pub fn comparison(&self) -> Option<&crate::comparison_ode::ComparisonSolution> {
        match &self.radial {
            RadialFactor::Ball(m) => Some(&m.sol),
            RadialFactor::Flat => None,
        }
    }

    pub fn ball_model(&self) -> Option<&BallModel> {
        match &self.radial {
            RadialFactor::Ball(m) => Some(m),
            RadialFactor::Flat => None,
        }
    }

    fn radius_limit(&self) -> f64 {
        match &self.radial {
            RadialFactor::Ball(m) => m.g_max().min(1.0 - m.margin),
            RadialFactor::Flat => f64::INFINITY,
        }
    }

    pub fn check_point(&self, x: &[f64]) -> Result<(), MetricError> {
        let norm = vecn::norm(x);
        let limit = self.radius_limit();
        if norm > limit {
            return Err(MetricError::OutsideBall { norm, limit });
        }
        Ok(())
    }

    /// Conformal factor λ(|x|) = f'(|x|); 1 in flat mode.
    pub fn lambda(&self, radius: f64) -> Result<f64, MetricError> {
        match &self.radial {
            RadialFactor::Ball(m) => Ok(m.conformal_factor(radius)?),
            RadialFactor::Flat => Ok(1.0),
        }
    }

    /// (λ², d(λ²)/dt) at t = |x|; the derivative feeds the analytic gradient.
    pub fn lambda_sq_with_derivative(&self, radius: f64) -> Result<(f64, f64), MetricError> {
        match &self.radial {
            RadialFactor::Ball(m) => {
                let (l, lp) = m.conformal_factor_with_derivative(radius)?;
                Ok((l * l, 2.0 * l * lp))
            }
            RadialFactor::Flat => Ok((1.0, 0.0)),
        }
    }

    /// Geodesic radius f(|x|): distance to the origin (radial lines are unit
    /// speed, so this is also the radial-geodesic length under perturbations).
    pub fn geodesic_radius(&self, x: &[f64]) -> Result<f64, MetricError> {
        let norm = vecn::norm(x);
        match &self.radial {
            RadialFactor::Ball(m) => Ok(m.f(norm)?),
            RadialFactor::Flat => Ok(norm),
        }
    }

    /// Euclidean radius of the geodesic ball of radius r.
    pub fn euclidean_ball_radius(&self, r: f64) -> f64 {
        match &self.radial {
            RadialFactor::Ball(m) => m.g(r),
            RadialFactor::Flat => r,
        }
    }

    /// Jacobi kernel F(r): norm growth of perpendicular differentials of Exp.
    pub fn jacobi_kernel(&self, r: f64) -> f64 {
        match &self.radial {
            RadialFactor::Ball(m) => m.sol.eval_f(r),
            RadialFactor::Flat => r,
        }
    }

    /// Area kernel G(r) = ∫₀ʳ F.
    pub fn area_kernel(&self, r: f64) -> f64 {
        match &self.radial {
            RadialFactor::Ball(m) => m.sol.eval_g(r),
            RadialFactor::Flat => 0.5 * r * r,
        }
    }

    /// Writes B(x) (row-major n×n) into `out`.
    pub fn b_matrix(&self, x: &[f64], out: &mut [f64]) {
        match &self.b_form {
            BForm::Euclidean => identity_matrix(self.dimension, out),
            BForm::Perturbation { callback, .. } => callback(x, out),
        }
    }

    pub fn is_euclidean_b(&self) -> bool {
        matches!(self.b_form, BForm::Euclidean)
    }

    /// Full metric tensor G(x) = f'(|x|)² B(x), symmetric positive definite.
    pub fn metric_tensor(&self, x: &[f64]) -> Result<Vec<f64>, MetricError> {
        self.check_point(x)?;
        let n = self.dimension;
        let (l2, _) = self.lambda_sq_with_derivative(vecn::norm(x))?;
        let mut out = vec![0.0; n * n];
        self.b_matrix(x, &mut out);
        for v in &mut out {
            *v *= l2;
        }
        Ok(out)
    }

    /// ⟨u, v⟩ at x.
    pub fn inner(&self, x: &[f64], u: &[f64], v: &[f64]) -> Result<f64, MetricError> {
        let g = self.metric_tensor(x)?;
        let n = self.dimension;
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                acc += u[i] * g[i * n + j] * v[j];
            }
        }
        Ok(acc)
    }

    pub fn length(&self, x: &[f64], u: &[f64]) -> Result<f64, MetricError> {
        Ok(self.inner(x, u, u)?.max(0.0).sqrt())
    }

    /// Spot-check symmetry and the declared eigenvalue bounds of B at `count`
    /// Halton points in the ball.
    pub fn spot_check_bounds(&self, count: usize) -> Result<(), MetricError> {
        let BForm::Perturbation { m_lo, m_hi, .. } = &self.b_form else {
            return Ok(());
        };
        let (m_lo, m_hi) = (*m_lo, *m_hi);
        let n = self.dimension;
        let mut b = vec![0.0; n * n];
        for s in 0..count {
            let x = halton_point(s as u32 + 1, n, 0.9);
            self.b_matrix(&x, &mut b);
            let mut asym = 0.0_f64;
            for i in 0..n {
                for j in 0..i {
                    asym = asym.max((b[i * n + j] - b[j * n + i]).abs());
                }
            }
            if asym > 1e-10 {
                return Err(MetricError::NotSymmetric { point: x, asym });
            }
            // Eigenvalue bounds via shifted Cholesky: B - m_lo I and m_hi I - B
            // must both be positive semidefinite (small slack for roundoff).
            let slack = 1e-10 * (1.0 + m_hi);
            let shifted = |sign: f64, shift: f64| -> Vec<f64> {
                let mut m = vec![0.0; n * n];
                for i in 0..n {
                    for j in 0..n {
                        m[i * n + j] = sign * b[i * n + j];
                    }
                    m[i * n + i] += shift + slack;
                }
                m
            };
            if !cholesky_ok(&shifted(1.0, -m_lo), n) || !cholesky_ok(&shifted(-1.0, m_hi), n) {
                return Err(MetricError::BoundsViolated {
                    point: x,
                    m_lo,
                    m_hi,
                });
            }
        }
        Ok(())
    }
}

fn identity_matrix(n: usize, out: &mut [f64]) {
    out.fill(0.0);
    for i in 0..n {
        out[i * n + i] = 1.0;
    }
}

fn cholesky_ok(m: &[f64], n: usize) -> bool {
    let mut l = vec![0.0_f64; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = m[i * n + j];
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if sum < 0.0 {
                    return false;
                }
                l[i * n + i] = sum.sqrt();
            } else if l[j * n + j] > 0.0 {
                l[i * n + j] = sum / l[j * n + j];
            } else if sum.abs() > 1e-14 {
                return false;
            }
        }
    }
    true
}

fn halton_point(index: u32, dim: usize, scale: f64) -> Vec<f64> {
    const PRIMES: [u32; 8] = [2, 3, 5, 7, 11, 13, 17, 19];
    let mut x: Vec<f64> = (0..dim)
        .map(|d| 2.0 * halton(index, PRIMES[d % PRIMES.len()]) - 1.0)
        .collect();
    let n = vecn::norm(&x);
    if n > 0.0 {
        let r = scale * halton(index, 23).powf(1.0 / dim as f64);
        x = vecn::scale(&x, r / n);
    }
    x
}

fn halton(mut index: u32, base: u32) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while index > 0 {
        f /= base as f64;
        r += f * (index % base) as f64;
        index /= base;
    }
    r
}

/// Triangles in the ball; the area estimator is one-point (barycenter)
/// quadrature per triangle, second order under refinement.
#[derive(Debug, Clone, Default)]
pub struct SurfacePatch {
    pub triangles: Vec<[Vec<f64>; 3]>,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct PatchArea {
    pub area: f64,
    pub degenerate_skipped: usize,
}

/// Metric area of a patch: Σ √det(JᵀG(x̄)J)·area_ref per triangle.
pub fn patch_area(metric: &AmbientMetric, patch: &SurfacePatch) -> Result<PatchArea, MetricError> {
    let mut contributions = Vec::with_capacity(patch.triangles.len());
    let mut degenerate_skipped = 0usize;
    for tri in &patch.triangles {
        match triangle_area(metric, &tri[0], &tri[1], &tri[2])? {
            Some(a) => contributions.push(a),
            None => degenerate_skipped += 1,
        }
    }
    Ok(PatchArea {
        area: vecn::pairwise_sum(&contributions),
        degenerate_skipped,
    })
}

/// Metric area of one coordinate triangle; `None` when Euclidean-degenerate.
pub fn triangle_area(
    metric: &AmbientMetric,
    p0: &[f64],
    p1: &[f64],
    p2: &[f64],
) -> Result<Option<f64>, MetricError> {
    let bary = vecn::barycenter(p0, p1, p2);
    metric.check_point(&bary)?;
    let e1 = vecn::sub(p1, p0);
    let e2 = vecn::sub(p2, p0);
    let (g11e, g12e, g22e) = (vecn::dot(&e1, &e1), vecn::dot(&e1, &e2), vecn::dot(&e2, &e2));
    let det_e = g11e * g22e - g12e * g12e;
    let scale = (g11e + g22e).powi(2);
    if !(det_e > scale * 1e-28) {
        return Ok(None);
    }
    let (l2, _) = metric.lambda_sq_with_derivative(vecn::norm(&bary))?;
    let (g11, g12, g22) = if metric.is_euclidean_b() {
        (g11e, g12e, g22e)
    } else {
        let n = metric.dimension;
        let mut b = vec![0.0; n * n];
        metric.b_matrix(&bary, &mut b);
        let bv = |u: &[f64], v: &[f64]| {
            let mut acc = 0.0;
            for i in 0..n {
                for j in 0..n {
                    acc += u[i] * b[i * n + j] * v[j];
                }
            }
            acc
        };
        (bv(&e1, &e1), bv(&e1, &e2), bv(&e2, &e2))
    };
    let det = (g11 * g22 - g12 * g12).max(0.0);
    Ok(Some(0.5 * l2 * det.sqrt()))
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct JacobiReport {
    pub numeric: f64,
    pub analytic: f64,
}

/// Central finite difference of Exp across a direction perpendicular to the
/// radial one, measured in the ambient metric, against the kernel F(s). In the
/// rotationally symmetric case the two agree.
pub fn jacobi_norm_check(
    metric: &AmbientMetric,
    direction: &[f64],
    s: f64,
    h: f64,
) -> Result<JacobiReport, MetricError> {
    if !metric.is_euclidean_b() {
        return Err(MetricError::InvalidArg(
            "jacobi check needs the euclidean b-form (exact oracle case)".into(),
        ));
    }
    if !(h > 1e-9) {
        return Err(MetricError::InvalidArg(format!(
            "finite-difference step h = {h:e} below precision floor"
        )));
    }
    let u = vecn::orthogonal_unit(direction);
    let radius = metric.euclidean_ball_radius(s);
    let point = |t: f64| -> Vec<f64> {
        let mut d = vecn::scale(direction, t.cos());
        vecn::axpy(&mut d, t.sin(), &u);
        vecn::scale(&vecn::normalize(&d), radius)
    };
    let (xp, xm) = (point(h), point(-h));
    let x0 = point(0.0);
    let diff = vecn::scale(&vecn::sub(&xp, &xm), 0.5 / h);
    let numeric = metric.length(&x0, &diff)?;
    Ok(JacobiReport {
        numeric,
        analytic: metric.jacobi_kernel(s),
    })
}
