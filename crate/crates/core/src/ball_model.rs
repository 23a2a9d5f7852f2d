//! Conformal unit-ball coordinates of a rotationally symmetric model: the radius
//! transfer g(r) = exp(-∫_r^∞ dt/F), its inverse f, and the conformal factor
//! λ = f', with a certified bracket for the truncated tail of the integral.
//!
//! All evaluations come from the algebraic relations g' = g/F, f' = (F∘f)/(g∘f)
//! and f'' = ((F'-1)F/g²)∘f at solver nodes plus the cubic Hermite interpolation
//! contract — never from numerical differentiation.

use crate::comparison_ode::ComparisonSolution;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BallError {
    #[error("profile declares no uniform bound a > 0; ∫ dt/F may diverge")]
    NoUniformBound,
    #[error("certified tail half-width {tail_bound:e} exceeds tolerance {tol:e}; raise s_max")]
    TailTooWide { tail_bound: f64, tol: f64 },
    #[error("t = {t} is within margin {margin:e} of the ideal boundary |x| = 1")]
    NearIdealBoundary { t: f64, margin: f64 },
    #[error("t = {t} is beyond the certified range g(s_max) = {g_max}; raise s_max")]
    BeyondRange { t: f64, g_max: f64 },
    #[error("radius r = {r} outside [0, s_max = {s_max}]")]
    RadiusOutOfRange { r: f64, s_max: f64 },
}

/// Ball-model radius maps for one comparison solution.
#[derive(Debug, Clone, Serialize)]
pub struct BallModel {
    pub sol: ComparisonSolution,
    /// g at the solution grid nodes (g[0] = 0).
    g: Vec<f64>,
    /// g' = g/F at nodes; g'[0] is the analytic limit g(r)/r at 0.
    gprime: Vec<f64>,
    /// λ = f' sampled at t = g(node); λ[0] = 1/g'(0).
    lambda: Vec<f64>,
    /// λ' = f'' at the same nodes (0 at t = 0).
    lambda_prime: Vec<f64>,
    /// Certified half-width of the tail bracket for ∫_{s_max}^∞ dt/F.
    pub tail_bound: f64,
    /// Midpoint of the tail bracket actually used.
    pub tail_mid: f64,
    /// Evaluations are refused for t >= 1 - margin.
    pub margin: f64,
    /// Uniform lookup accelerator over [0, g_max] into the node arrays.
    lookup: Vec<u32>,
}

pub const DEFAULT_MARGIN: f64 = 1e-6;
const LOOKUP_SIZE: usize = 4096;

const GAUSS4: [(f64, f64); 4] = [
    (-0.8611363115940526, 0.3478548451374538),
    (-0.3399810435848563, 0.6521451548625461),
    (0.3399810435848563, 0.6521451548625461),
    (0.8611363115940526, 0.3478548451374538),
];

const GAUSS8: [(f64, f64); 8] = [
    (-0.9602898564975363, 0.1012285362903763),
    (-0.7966664774136267, 0.2223810344533745),
    (-0.5255324099163290, 0.3137066458778873),
    (-0.1834346424956498, 0.3626837833783620),
    (0.1834346424956498, 0.3626837833783620),
    (0.5255324099163290, 0.3137066458778873),
    (0.7966664774136267, 0.2223810344533745),
    (0.9602898564975363, 0.1012285362903763),
];

impl BallModel {
    /// Build the ball model from a comparison solution with a declared uniform
    /// bound a > 0. Fails when the certified tail bracket is wider than the
    /// solution tolerance (the advice then is to raise s_max).
    pub fn build(sol: ComparisonSolution) -> Result<Self, BallError> {
        let a = sol.profile.a;
        if !(a > 0.0) {
            return Err(BallError::NoUniformBound);
        }
        let n = sol.grid.len();
        let s_max = sol.s_max();
        let f_end = sol.f[n - 1];

        // Tail bracket [0, T_hi]: beyond s_max, F(t) >= F(s_max) cosh(b (t - s_max))
        // with b the curvature bound certifiable past the window.
        let k_end = sol.profile.eval(s_max);
        let b = if sol.profile.monotone_nonincreasing {
            (-k_end).sqrt()
        } else {
            a
        };
        let t_hi = std::f64::consts::FRAC_PI_2 / (b * f_end);
        let tail_mid = 0.5 * t_hi;
        let tail_bound = 0.5 * t_hi;
        if tail_bound > sol.tol {
            return Err(BallError::TailTooWide {
                tail_bound,
                tol: sol.tol,
            });
        }

        // Backward cumulative ∫ dt/F per interval: the 1/t part of the integrand
        // is a hyperbola the quadrature handles poorly on the first (ratio-2)
        // intervals, so integrate ln exactly and Gauss-4 only 1/F - 1/t.
        let mut big_j = vec![0.0_f64; n];
        for i in (1..n - 1).rev() {
            let (s0, s1) = (sol.grid[i], sol.grid[i + 1]);
            let mid = 0.5 * (s0 + s1);
            let half = 0.5 * (s1 - s0);
            let mut quad = 0.0;
            for (x, w) in GAUSS4 {
                let t = mid + half * x;
                quad += w * (1.0 / sol.eval_f(t) - 1.0 / t);
            }
            big_j[i] = big_j[i + 1] + quad * half + (s1 / s0).ln();
        }

        let mut g = vec![0.0_f64; n];
        let mut gprime = vec![0.0_f64; n];
        for i in 1..n {
            g[i] = (-(big_j[i] + tail_mid)).exp();
            gprime[i] = g[i] / sol.f[i];
        }
        // g'(0) = lim g/r: split the logarithmic part of ∫ dt/F on [0, s1], so
        // g(r) = (r/s1) exp(-β(r)) g(s1) with β(r) = ∫_r^{s1} (1/F - 1/t) dt.
        let s1 = sol.grid[1];
        let mut beta0 = 0.0;
        let (mid, half) = (0.5 * s1, 0.5 * s1);
        for (x, w) in GAUSS8 {
            let t = mid + half * x;
            beta0 += w * (1.0 / sol.eval_f(t) - 1.0 / t);
        }
        beta0 *= half;
        gprime[0] = g[1] / s1 * (-beta0).exp();

        let mut lambda = vec![0.0_f64; n];
        let mut lambda_prime = vec![0.0_f64; n];
        lambda[0] = 1.0 / gprime[0];
        lambda_prime[0] = 0.0;
        for i in 1..n {
            lambda[i] = sol.f[i] / g[i];
            lambda_prime[i] = (sol.fprime[i] - 1.0) * sol.f[i] / (g[i] * g[i]);
        }

        let g_max = g[n - 1];
        let mut lookup = vec![0u32; LOOKUP_SIZE + 1];
        let mut idx = 0usize;
        for (j, slot) in lookup.iter_mut().enumerate() {
            let t = g_max * j as f64 / LOOKUP_SIZE as f64;
            while idx + 1 < n && g[idx + 1] <= t {
                idx += 1;
            }
            *slot = idx as u32;
        }

        Ok(BallModel {
            sol,
            g,
            gprime,
            lambda,
            lambda_prime,
            tail_bound,
            tail_mid,
            margin: DEFAULT_MARGIN,
            lookup,
        })
    }

    pub fn s_max(&self) -> f64 {
        self.sol.s_max()
    }

    /// Largest Euclidean radius the model certifies, g(s_max).
    pub fn g_max(&self) -> f64 {
        *self.g.last().unwrap()
    }

    pub fn g_prime_at_zero(&self) -> f64 {
        self.gprime[0]
    }

    fn r_interval(&self, r: f64) -> usize {
        let i = self.sol.grid.partition_point(|&s| s <= r);
        i.clamp(1, self.sol.grid.len() - 1) - 1
    }

    /// Euclidean radius g(r) of the geodesic sphere of radius r.
    pub fn g(&self, r: f64) -> f64 {
        assert!(r >= 0.0 && r <= self.s_max() * (1.0 + 1e-12), "r = {r}");
        if r == 0.0 {
            return 0.0;
        }
        let i = self.r_interval(r);
        hermite(
            self.sol.grid[i],
            self.sol.grid[i + 1],
            self.g[i],
            self.g[i + 1],
            self.gprime[i],
            self.gprime[i + 1],
            r,
        )
    }

    pub fn g_prime(&self, r: f64) -> f64 {
        if r == 0.0 {
            return self.gprime[0];
        }
        self.g(r) / self.sol.eval_f(r)
    }

    fn t_interval(&self, t: f64) -> usize {
        let g_max = self.g_max();
        let slot = ((t / g_max * LOOKUP_SIZE as f64) as usize).min(LOOKUP_SIZE);
        let mut i = self.lookup[slot] as usize;
        while i + 1 < self.g.len() && self.g[i + 1] <= t {
            i += 1;
        }
        i.min(self.g.len() - 2)
    }

    fn check_t(&self, t: f64) -> Result<(), BallError> {
        if !(t >= 0.0) || t >= 1.0 - self.margin {
            return Err(BallError::NearIdealBoundary {
                t,
                margin: self.margin,
            });
        }
        if t > self.g_max() {
            return Err(BallError::BeyondRange {
                t,
                g_max: self.g_max(),
            });
        }
        Ok(())
    }

    /// Inverse radius map f = g⁻¹: Euclidean radius to geodesic radius.
    ///
    /// Bracketed bisection on the node arrays followed by two Newton steps
    /// with the exact derivative g' = g/F.
    pub fn f(&self, t: f64) -> Result<f64, BallError> {
        self.check_t(t)?;
        if t == 0.0 {
            return Ok(0.0);
        }
        let i = self.t_interval(t);
        let (mut lo, mut hi) = (self.sol.grid[i], self.sol.grid[i + 1]);
        for _ in 0..30 {
            let mid = 0.5 * (lo + hi);
            if self.g(mid) <= t {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let mut r = 0.5 * (lo + hi);
        for _ in 0..2 {
            let gr = self.g(r);
            let gp = if r > 0.0 {
                gr / self.sol.eval_f(r)
            } else {
                self.gprime[0]
            };
            r -= (gr - t) / gp;
            r = r.clamp(0.0, self.s_max());
        }
        Ok(r)
    }

    /// Conformal factor λ(t) = f'(t), from the node relation f' = (F∘f)/(g∘f).
    pub fn conformal_factor(&self, t: f64) -> Result<f64, BallError> {
        self.check_t(t)?;
        let i = self.t_interval(t);
        Ok(hermite(
            self.g[i],
            self.g[i + 1],
            self.lambda[i],
            self.lambda[i + 1],
            self.lambda_prime[i],
            self.lambda_prime[i + 1],
            t,
        ))
    }

    /// λ(t) and λ'(t) = f''(t) from one Hermite evaluation on the node tables;
    /// this is the hot path of metric gradients.
    pub fn conformal_factor_with_derivative(&self, t: f64) -> Result<(f64, f64), BallError> {
        self.check_t(t)?;
        let i = self.t_interval(t);
        Ok(hermite_with_derivative(
            self.g[i],
            self.g[i + 1],
            self.lambda[i],
            self.lambda[i + 1],
            self.lambda_prime[i],
            self.lambda_prime[i + 1],
            t,
        ))
    }

    /// f''(t) = ((F' - 1) F / g²) ∘ f; convexity of f is an invariant.
    pub fn f_second(&self, t: f64) -> Result<f64, BallError> {
        self.check_t(t)?;
        if t == 0.0 {
            return Ok(0.0);
        }
        let r = self.f(t)?;
        Ok((self.sol.eval_fprime(r) - 1.0) * self.sol.eval_f(r) / (t * t))
    }

    /// Exp(r·direction) in model coordinates: the straight segment to g(r)·direction.
    pub fn exp_point(&self, direction: &[f64], r: f64) -> Result<Vec<f64>, BallError> {
        if !(r >= 0.0) || r > self.s_max() {
            return Err(BallError::RadiusOutOfRange {
                r,
                s_max: self.s_max(),
            });
        }
        debug_assert!((crate::vecn::norm(direction) - 1.0).abs() < 1e-9);
        Ok(crate::vecn::scale(direction, self.g(r)))
    }
}

fn hermite(s0: f64, s1: f64, f0: f64, f1: f64, d0: f64, d1: f64, s: f64) -> f64 {
    let h = s1 - s0;
    let t = (s - s0) / h;
    let t2 = t * t;
    let t3 = t2 * t;
    (2.0 * t3 - 3.0 * t2 + 1.0) * f0
        + (t3 - 2.0 * t2 + t) * h * d0
        + (-2.0 * t3 + 3.0 * t2) * f1
        + (t3 - t2) * h * d1
}

fn hermite_with_derivative(
    s0: f64,
    s1: f64,
    f0: f64,
    f1: f64,
    d0: f64,
    d1: f64,
    s: f64,
) -> (f64, f64) {
    let h = s1 - s0;
    let t = (s - s0) / h;
    let t2 = t * t;
    let t3 = t2 * t;
    let value = (2.0 * t3 - 3.0 * t2 + 1.0) * f0
        + (t3 - 2.0 * t2 + t) * h * d0
        + (-2.0 * t3 + 3.0 * t2) * f1
        + (t3 - t2) * h * d1;
    let deriv = ((6.0 * t2 - 6.0 * t) * f0
        + (3.0 * t2 - 4.0 * t + 1.0) * h * d0
        + (-6.0 * t2 + 6.0 * t) * f1
        + (3.0 * t2 - 2.0 * t) * h * d1)
        / h;
    (value, deriv)
}

#[derive(Debug, Clone, Serialize)]
pub struct PolarIdentityReport {
    pub max_rel_err: f64,
    pub samples: usize,
}

/// Pull the flat metric back through x = g(r)·θ with finite-difference tangents
/// and compare against dr² + F(r)² dθ²: radial factor 1, angular factor F(r).
pub fn check_polar_identity(model: &BallModel, samples: usize, seed: u64) -> PolarIdentityReport {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut max_rel_err = 0.0_f64;
    let h = 1e-5;
    for _ in 0..samples {
        let r = rng.gen_range(0.05..0.9 * model.s_max().min(10.0));
        let theta = rng.gen_range(0.0..std::f64::consts::TAU);
        let point = |r: f64, th: f64| [model.g(r) * th.cos(), model.g(r) * th.sin()];
        let x = point(r, theta);
        let lam = model
            .conformal_factor((x[0].powi(2) + x[1].powi(2)).sqrt())
            .unwrap();

        let (xp, xm) = (point(r + h, theta), point(r - h, theta));
        let radial =
            lam * ((xp[0] - xm[0]).powi(2) + (xp[1] - xm[1]).powi(2)).sqrt() / (2.0 * h);
        max_rel_err = max_rel_err.max((radial - 1.0).abs());

        let (xp, xm) = (point(r, theta + h), point(r, theta - h));
        let angular =
            lam * ((xp[0] - xm[0]).powi(2) + (xp[1] - xm[1]).powi(2)).sqrt() / (2.0 * h);
        let f_r = model.sol.eval_f(r);
        max_rel_err = max_rel_err.max((angular - f_r).abs() / f_r);
    }
    PolarIdentityReport {
        max_rel_err,
        samples,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::comparison_ode::{solve_comparison, CurvatureProfile};

    fn hyperbolic_model(s_max: f64) -> BallModel {
        let p = CurvatureProfile::constant(-1.0).unwrap();
        BallModel::build(solve_comparison(&p, s_max, 1e-8).unwrap()).unwrap()
    }

    #[test]
    fn g_matches_tanh_half() {
        // k = -1: g(r) = tanh(r/2).
        let m = hyperbolic_model(25.0);
        assert!((m.g(2.0) - 0.761594).abs() < 1e-6);
        for i in 1..=40 {
            let r = 10.0 * i as f64 / 40.0;
            assert!(
                (m.g(r) - (r / 2.0).tanh()).abs() < 1e-8,
                "r={r}: {:e}",
                (m.g(r) - (r / 2.0).tanh()).abs()
            );
        }
        assert!((m.g_prime_at_zero() - 0.5).abs() < 1e-8);
    }

    #[test]
    fn scaled_profile_g() {
        // k = -4 (a = 2): g(r) = tanh(r); g(1) = tanh 1.
        let p = CurvatureProfile::constant(-4.0).unwrap();
        let m = BallModel::build(solve_comparison(&p, 12.0, 1e-8).unwrap()).unwrap();
        assert!((m.g(1.0) - 1.0_f64.tanh()).abs() < 1e-8);
        assert!((m.g(1.0) - 0.761594).abs() < 1e-6);
    }

    #[test]
    fn f_inverts_g() {
        let m = hyperbolic_model(25.0);
        // f(0.5) = 2 artanh(1/2) = ln 3.
        assert!((m.f(0.5).unwrap() - 1.098612).abs() < 1e-6);
        for i in 0..=50 {
            let r = 0.9 * 25.0 * i as f64 / 50.0;
            let t = m.g(r);
            if t > 1.0 - m.margin {
                continue;
            }
            assert!((m.f(t).unwrap() - r).abs() < 1e-8, "roundtrip at r={r}");
        }
    }

    #[test]
    fn conformal_factor_is_poincare() {
        // k = -1: f'(t) = 2/(1-t²).
        let m = hyperbolic_model(25.0);
        assert!((m.conformal_factor(0.0).unwrap() - 2.0).abs() < 1e-8);
        assert!((m.conformal_factor(0.5).unwrap() - 2.666667).abs() < 1e-6);
        for i in 0..999 {
            let t = i as f64 / 1000.0;
            let exact = 2.0 / (1.0 - t * t);
            let got = m.conformal_factor(t).unwrap();
            assert!(
                ((got - exact) / exact).abs() < 1e-6,
                "t={t}: rel err {:e}",
                ((got - exact) / exact).abs()
            );
        }
        // f''(t) = 4t/(1-t²)².
        let fs = m.f_second(0.5).unwrap();
        assert!((fs - 4.0 * 0.5 / (0.75_f64 * 0.75)).abs() < 1e-5);
    }

    #[test]
    fn monotone_and_convex() {
        let m = hyperbolic_model(25.0);
        for i in 0..60 {
            let r0 = 20.0 * i as f64 / 60.0;
            let r1 = 20.0 * (i + 1) as f64 / 60.0;
            assert!(m.g(r1) > m.g(r0));
            assert!(m.g_prime(r0) > 0.0);
        }
        for i in 0..40 {
            let t = 0.95 * i as f64 / 40.0;
            assert!(m.f_second(t).unwrap() >= -1e-9);
        }
    }

    #[test]
    fn area_kernel_bounded_by_f() {
        // G a <= F (+tol): consequence of F'/F >= a.
        let m = hyperbolic_model(25.0);
        let a = m.sol.profile.a;
        for (i, &s) in m.sol.grid.iter().enumerate() {
            assert!(m.sol.g[i] * a <= m.sol.f[i] + 1e-8, "s={s}");
        }
    }

    #[test]
    fn tail_bracket_certifies_truncation() {
        let m1 = hyperbolic_model(20.0);
        let m2 = hyperbolic_model(40.0);
        let mut max_diff = 0.0_f64;
        for i in 1..=40 {
            let r = 16.0 * i as f64 / 40.0;
            max_diff = max_diff.max((m1.g(r) - m2.g(r)).abs());
        }
        assert!(
            max_diff <= m1.tail_bound,
            "doubling s_max moved g by {max_diff:e} > certified {:e}",
            m1.tail_bound
        );
    }

    #[test]
    fn rejects_unbounded_profile_and_wide_tail() {
        // a = 0: ∫ dt/F may diverge.
        let p = CurvatureProfile::new(
            crate::comparison_ode::ProfileKind::Constant { value: 0.0 },
            0.0,
            true,
        )
        .unwrap();
        let sol = solve_comparison(&p, 5.0, 1e-6).unwrap();
        assert!(matches!(BallModel::build(sol), Err(BallError::NoUniformBound)));

        // Tiny s_max: tail bracket wider than the tolerance.
        let p = CurvatureProfile::constant(-1.0).unwrap();
        let sol = solve_comparison(&p, 1.0, 1e-6).unwrap();
        assert!(matches!(
            BallModel::build(sol),
            Err(BallError::TailTooWide { .. })
        ));
    }

    #[test]
    fn exp_point_basics() {
        let m = hyperbolic_model(25.0);
        let origin = m.exp_point(&[1.0, 0.0, 0.0], 0.0).unwrap();
        assert_eq!(origin, vec![0.0, 0.0, 0.0]);
        let p = m.exp_point(&[1.0, 0.0, 0.0], 2.0).unwrap();
        assert!((p[0] - 0.761594).abs() < 1e-6);
        assert!(p[1] == 0.0 && p[2] == 0.0);
        for r in [0.1, 1.0, 5.0, 20.0] {
            let p = m.exp_point(&[0.0, 1.0, 0.0], r).unwrap();
            assert!(crate::vecn::norm(&p) < 1.0);
        }
    }

    #[test]
    fn polar_identity_holds() {
        let m = hyperbolic_model(25.0);
        let rep = check_polar_identity(&m, 200, 7);
        assert!(rep.max_rel_err < 1e-6, "max rel err {:e}", rep.max_rel_err);
        // Angular factor at r = 1 is F(1) = sinh 1.
        let lam = m.conformal_factor(m.g(1.0)).unwrap();
        assert!((lam * m.g(1.0) - 1.175201).abs() < 1e-6);
    }
}
