//! Comparison initial value problem F'' + kF = 0, F(0) = 0, F'(0) = 1, plus the
//! growth/ratio properties of its solution as checkable reports.
//!
//! F is the Jacobi-field norm of the rotationally symmetric model with radial
//! curvature k <= 0; G(s) = ∫₀ˢ F is the associated area kernel. The solver is an
//! embedded Dormand–Prince 5(4) pair integrating (F, F', G) jointly, so G carries
//! the same order as F. Accepted steps are additionally capped so that the cubic
//! Hermite midpoint residual |F'' + kF| stays below `tol·max(1, F)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OdeError {
    #[error("curvature sample k({s}) = {value} is not negative enough (need {need})")]
    CurvatureTooLarge { s: f64, value: f64, need: f64 },
    #[error("step size underflow at s = {last_good_s} (solution valid up to there)")]
    StepSizeUnderflow { last_good_s: f64 },
    #[error("invalid argument: {0}")]
    InvalidArg(String),
    #[error("profile is not flagged monotone non-increasing; hypothesis unmet")]
    NotMonotone,
    #[error("background curvature touches 0 (max sample {max}); 1/sqrt(-k0) blows up")]
    BackgroundTouchesZero { max: f64 },
}

/// Closed-form curvature families usable from configs by id.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "kebab-case")]
pub enum ClosedFormKind {
    /// k(s) = base - e^{-s}; not monotone (increases towards `base`).
    ExpBump { base: f64 },
    /// k(s) = base - slope*s; non-increasing for slope >= 0.
    LinearRamp { base: f64, slope: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ProfileKind {
    Constant { value: f64 },
    PiecewiseSamples { grid: Vec<f64>, values: Vec<f64> },
    ClosedForm(ClosedFormKind),
}

/// Radial curvature profile k(s) <= 0 with an optional declared uniform bound
/// k <= -a² and a monotonicity flag (hypothesis of the G/(sF) check).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvatureProfile {
    pub kind: ProfileKind,
    /// Declared uniform bound: k(s) <= -a² for all s. `a = 0` means "none declared".
    pub a: f64,
    pub monotone_nonincreasing: bool,
}

impl CurvatureProfile {
    pub fn constant(value: f64) -> Result<Self, OdeError> {
        let a = if value < 0.0 { (-value).sqrt() } else { 0.0 };
        Self::new(ProfileKind::Constant { value }, a, true)
    }

    pub fn new(kind: ProfileKind, a: f64, monotone_nonincreasing: bool) -> Result<Self, OdeError> {
        if a < 0.0 || !a.is_finite() {
            return Err(OdeError::InvalidArg(format!("bound a = {a} must be >= 0")));
        }
        let profile = CurvatureProfile {
            kind,
            a,
            monotone_nonincreasing,
        };
        profile.validate()?;
        Ok(profile)
    }

    fn validate(&self) -> Result<(), OdeError> {
        // One-ulp slack so a = sqrt(-k) round-trips through a².
        let need = -self.a * self.a * (1.0 - 1e-14);
        let check = |s: f64, v: f64| -> Result<(), OdeError> {
            if !(v <= need.min(0.0)) {
                return Err(OdeError::CurvatureTooLarge {
                    s,
                    value: v,
                    need: need.min(0.0),
                });
            }
            Ok(())
        };
        match &self.kind {
            ProfileKind::Constant { value } => check(0.0, *value)?,
            ProfileKind::PiecewiseSamples { grid, values } => {
                if grid.len() != values.len() || grid.len() < 2 {
                    return Err(OdeError::InvalidArg(
                        "piecewise profile needs matching grid/values with >= 2 samples".into(),
                    ));
                }
                if grid[0] != 0.0 || grid.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(OdeError::InvalidArg(
                        "piecewise grid must be strictly increasing from 0".into(),
                    ));
                }
                for (s, v) in grid.iter().zip(values) {
                    check(*s, *v)?;
                }
                if self.monotone_nonincreasing && values.windows(2).any(|w| w[1] > w[0] + 1e-15) {
                    return Err(OdeError::InvalidArg(
                        "profile flagged non-increasing but samples increase".into(),
                    ));
                }
            }
            ProfileKind::ClosedForm(cf) => {
                // Supremum of each family is attained in closed form.
                let sup = match cf {
                    ClosedFormKind::ExpBump { base } => *base,
                    ClosedFormKind::LinearRamp { base, slope } => {
                        if *slope < 0.0 {
                            return Err(OdeError::InvalidArg("linear-ramp slope must be >= 0".into()));
                        }
                        *base
                    }
                };
                check(0.0, sup)?;
                if self.monotone_nonincreasing && matches!(cf, ClosedFormKind::ExpBump { .. }) {
                    return Err(OdeError::InvalidArg(
                        "exp-bump profile is increasing; cannot flag non-increasing".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// k(s); piecewise samples are linearly interpolated and clamped at the ends.
    pub fn eval(&self, s: f64) -> f64 {
        match &self.kind {
            ProfileKind::Constant { value } => *value,
            ProfileKind::PiecewiseSamples { grid, values } => {
                if s <= grid[0] {
                    return values[0];
                }
                if s >= *grid.last().unwrap() {
                    return *values.last().unwrap();
                }
                let i = grid.partition_point(|&g| g <= s) - 1;
                let w = (s - grid[i]) / (grid[i + 1] - grid[i]);
                values[i] * (1.0 - w) + values[i + 1] * w
            }
            ProfileKind::ClosedForm(cf) => match cf {
                ClosedFormKind::ExpBump { base } => base - (-s).exp(),
                ClosedFormKind::LinearRamp { base, slope } => base - slope * s,
            },
        }
    }
}

/// Sampled solution (F, F', G) on an adaptive grid with a cubic Hermite
/// interpolation contract (node slopes are exact: F'' = -kF, G' = F).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonSolution {
    pub grid: Vec<f64>,
    pub f: Vec<f64>,
    pub fprime: Vec<f64>,
    pub g: Vec<f64>,
    pub profile: CurvatureProfile,
    pub tol: f64,
}

impl ComparisonSolution {
    pub fn s_max(&self) -> f64 {
        *self.grid.last().unwrap()
    }

    fn interval(&self, s: f64) -> usize {
        let i = self.grid.partition_point(|&g| g <= s);
        i.clamp(1, self.grid.len() - 1) - 1
    }

    pub fn eval_f(&self, s: f64) -> f64 {
        assert!(
            (0.0..=self.s_max() * (1.0 + 1e-12)).contains(&s),
            "s = {s} outside [0, {}]",
            self.s_max()
        );
        let i = self.interval(s);
        hermite(
            self.grid[i],
            self.grid[i + 1],
            self.f[i],
            self.f[i + 1],
            self.fprime[i],
            self.fprime[i + 1],
            s,
        )
    }

    pub fn eval_fprime(&self, s: f64) -> f64 {
        let i = self.interval(s);
        let k0 = self.profile.eval(self.grid[i]);
        let k1 = self.profile.eval(self.grid[i + 1]);
        hermite(
            self.grid[i],
            self.grid[i + 1],
            self.fprime[i],
            self.fprime[i + 1],
            -k0 * self.f[i],
            -k1 * self.f[i + 1],
            s,
        )
    }

    pub fn eval_g(&self, s: f64) -> f64 {
        let i = self.interval(s);
        hermite(
            self.grid[i],
            self.grid[i + 1],
            self.g[i],
            self.g[i + 1],
            self.f[i],
            self.f[i + 1],
            s,
        )
    }

    /// Cubic Hermite midpoint residual |F'' + kF| per interval, alongside the
    /// tolerance scale max(1, F) it is compared against.
    pub fn residuals(&self) -> Vec<(f64, f64)> {
        (0..self.grid.len() - 1)
            .map(|i| {
                let h = self.grid[i + 1] - self.grid[i];
                let mid = 0.5 * (self.grid[i] + self.grid[i + 1]);
                // Second derivative of the cubic Hermite at the midpoint.
                let d2 = (self.fprime[i + 1] - self.fprime[i]) / h;
                let fm = 0.5 * (self.f[i] + self.f[i + 1])
                    + 0.125 * h * (self.fprime[i] - self.fprime[i + 1]);
                ((d2 + self.profile.eval(mid) * fm).abs(), fm.abs().max(1.0))
            })
            .collect()
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

/// Solve F'' + kF = 0 with F(0)=0, F'(0)=1 up to `s_max`.
///
/// `tol` is the midpoint residual tolerance of the returned grid (the internal
/// integrator runs two orders tighter). Rejects profiles with any non-negative
/// curvature sample.
pub fn solve_comparison(
    profile: &CurvatureProfile,
    s_max: f64,
    tol: f64,
) -> Result<ComparisonSolution, OdeError> {
    if !(s_max > 0.0) {
        return Err(OdeError::InvalidArg(format!("s_max = {s_max} must be > 0")));
    }
    if !(tol > 0.0 && tol <= 1e-4) {
        return Err(OdeError::InvalidArg(format!(
            "tol = {tol} must lie in (0, 1e-4]"
        )));
    }
    // The k <= 0 requirement (beyond the declared bound) is re-checked densely
    // during integration; a quick sanity sweep catches gross misuse early.
    for i in 0..=64 {
        let s = s_max * i as f64 / 64.0;
        let k = profile.eval(s);
        if k > 0.0 {
            return Err(OdeError::CurvatureTooLarge {
                s,
                value: k,
                need: 0.0,
            });
        }
    }

    let rtol = (tol * 1e-2).max(1e-13);
    let atol = 1e-14;
    // Residual cap: cubic Hermite midpoint residual ~ h² k² F / 24.
    let resid_cap = |k_abs: f64| 0.7 * (24.0 * tol).sqrt() / k_abs.max(1e-6);

    let mut s = 0.0_f64;
    let mut y = [0.0_f64, 1.0, 0.0];
    let mut grid = vec![0.0];
    let mut f = vec![0.0];
    let mut fprime = vec![1.0];
    let mut g = vec![0.0];

    let h_min = s_max * 1e-14;
    let mut h = (1e-3_f64)
        .min(s_max / 64.0)
        .min(resid_cap(profile.eval(0.0).abs()));

    let rhs = |s: f64, y: &[f64; 3]| -> [f64; 3] {
        let kk = profile.eval(s.min(s_max));
        [y[1], -kk * y[0], y[0]]
    };

    while s < s_max {
        h = h
            .min(s_max - s)
            .min(s_max / 64.0)
            .min(resid_cap(profile.eval(s).abs()));
        if h < h_min {
            return Err(OdeError::StepSizeUnderflow { last_good_s: s });
        }
        let (y5, y4) = dp45_step(s, &y, h, &rhs);
        let mut err: f64 = 0.0;
        for i in 0..3 {
            let sc = atol + rtol * y[i].abs().max(y5[i].abs());
            err += ((y5[i] - y4[i]) / sc).powi(2);
        }
        err = (err / 3.0).sqrt();
        if err <= 1.0 {
            s += h;
            y = y5;
            grid.push(s);
            f.push(y[0]);
            fprime.push(y[1]);
            g.push(y[2]);
        }
        let fac = if err > 0.0 {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        } else {
            5.0
        };
        h *= fac;
    }

    Ok(ComparisonSolution {
        grid,
        f,
        fprime,
        g,
        profile: profile.clone(),
        tol,
    })
}

/// One Dormand–Prince 5(4) step; returns (5th order, embedded 4th order).
fn dp45_step(
    s: f64,
    y: &[f64; 3],
    h: f64,
    rhs: &impl Fn(f64, &[f64; 3]) -> [f64; 3],
) -> ([f64; 3], [f64; 3]) {
    const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
    const A: [[f64; 6]; 7] = [
        [0.0; 6],
        [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [
            19372.0 / 6561.0,
            -25360.0 / 2187.0,
            64448.0 / 6561.0,
            -212.0 / 729.0,
            0.0,
            0.0,
        ],
        [
            9017.0 / 3168.0,
            -355.0 / 33.0,
            46732.0 / 5247.0,
            49.0 / 176.0,
            -5103.0 / 18656.0,
            0.0,
        ],
        [
            35.0 / 384.0,
            0.0,
            500.0 / 1113.0,
            125.0 / 192.0,
            -2187.0 / 6784.0,
            11.0 / 84.0,
        ],
    ];
    const B4: [f64; 7] = [
        5179.0 / 57600.0,
        0.0,
        7571.0 / 16695.0,
        393.0 / 640.0,
        -92097.0 / 339200.0,
        187.0 / 2100.0,
        1.0 / 40.0,
    ];

    let mut k = [[0.0_f64; 3]; 7];
    k[0] = rhs(s, y);
    for i in 1..7 {
        let mut yi = *y;
        for (j, kj) in k.iter().enumerate().take(i) {
            for m in 0..3 {
                yi[m] += h * A[i][j] * kj[m];
            }
        }
        k[i] = rhs(s + C[i] * h, &yi);
    }
    // Row 7 of A is the 5th-order weight vector (FSAL pair).
    let mut y5 = *y;
    for (j, kj) in k.iter().enumerate().take(6) {
        for m in 0..3 {
            y5[m] += h * A[6][j] * kj[m];
        }
    }
    let mut y4 = *y;
    for (j, kj) in k.iter().enumerate() {
        for m in 0..3 {
            y4[m] += h * B4[j] * kj[m];
        }
    }
    (y5, y4)
}

#[derive(Debug, Clone, Serialize)]
pub struct GrowthRatioReport {
    /// min over grid s > 0 of s F'(s)/F(s) (limit at 0 is 1, handled analytically).
    pub min_s_fprime_over_f: f64,
    /// min over grid s > 0 of F'(s)/F(s).
    pub min_fprime_over_f: f64,
}

/// Minima of the two growth ratios s F'/F and F'/F over the grid (s > 0).
pub fn check_growth_ratios(sol: &ComparisonSolution) -> GrowthRatioReport {
    let mut min_sff = f64::INFINITY;
    let mut min_ff = f64::INFINITY;
    for i in 1..sol.grid.len() {
        let s = sol.grid[i];
        let ratio = sol.fprime[i] / sol.f[i];
        min_ff = min_ff.min(ratio);
        min_sff = min_sff.min(s * ratio);
    }
    GrowthRatioReport {
        min_s_fprime_over_f: min_sff,
        min_fprime_over_f: min_ff,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MonotoneRatioReport {
    /// max over consecutive grid pairs of the increase of G/(sF); <= tol passes.
    pub max_violation: f64,
}

/// Check that G/(sF) is non-increasing along the grid (needs the profile's
/// monotone flag — the hypothesis of the statement).
pub fn check_g_over_sf(sol: &ComparisonSolution) -> Result<MonotoneRatioReport, OdeError> {
    if !sol.profile.monotone_nonincreasing {
        return Err(OdeError::NotMonotone);
    }
    let mut max_violation = f64::NEG_INFINITY;
    let mut prev: Option<f64> = None;
    for i in 1..sol.grid.len() {
        let q = sol.g[i] / (sol.grid[i] * sol.f[i]);
        if let Some(p) = prev {
            max_violation = max_violation.max(q - p);
        }
        prev = Some(q);
    }
    Ok(MonotoneRatioReport { max_violation })
}

#[derive(Debug, Clone, Serialize)]
pub struct RatioConstant {
    /// C = (π/2) ∫₀^{s_max} |k - k0| / sqrt(-k0).
    pub value: f64,
    /// Set when the integrand has not decayed below tolerance by s_max, i.e.
    /// the constant only certifies the window [0, s_max].
    pub window_only: bool,
}

/// Quadrature of the ratio-envelope constant for a profile pair.
pub fn ratio_constant_c(
    k: &CurvatureProfile,
    k0: &CurvatureProfile,
    s_max: f64,
) -> Result<RatioConstant, OdeError> {
    if !k0.monotone_nonincreasing {
        return Err(OdeError::NotMonotone);
    }
    let mut max_k0 = f64::NEG_INFINITY;
    for i in 0..=256 {
        max_k0 = max_k0.max(k0.eval(s_max * i as f64 / 256.0));
    }
    if max_k0 >= -1e-12 {
        return Err(OdeError::BackgroundTouchesZero { max: max_k0 });
    }
    let phi = |s: f64| (k.eval(s) - k0.eval(s)).abs() / (-k0.eval(s)).sqrt();
    let integral = adaptive_simpson(&phi, 0.0, s_max, 1e-12, 40);
    let window_only = phi(s_max) > 1e-9;
    Ok(RatioConstant {
        value: std::f64::consts::FRAC_PI_2 * integral,
        window_only,
    })
}

fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    fn simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    fn rec(
        f: &impl Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(f, a, m, fa, flm, fm);
        let right = simpson(f, m, b, fm, frm, fb);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            left + right + (left + right - whole) / 15.0
        } else {
            rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = simpson(f, a, b, fa, fm, fb);
    rec(f, a, b, fa, fm, fb, whole, tol, depth)
}

#[derive(Debug, Clone, Serialize)]
pub struct RatioBoundReport {
    /// max over the probe grid (s > 0) of |ln(F/F0)|.
    pub max_log_ratio: f64,
    /// The envelope constant the ratio is compared against.
    pub c: f64,
    pub pass: bool,
    pub window_only: bool,
}

/// Check the two-sided envelope e^{-C} <= F/F0 <= e^{C}.
///
/// Both solutions must cover the same [0, s_max]; F0 is evaluated on F's grid
/// through the interpolation contract.
pub fn check_ratio_bound(
    sol_f: &ComparisonSolution,
    sol_f0: &ComparisonSolution,
    c: &RatioConstant,
) -> Result<RatioBoundReport, OdeError> {
    let s_max = sol_f.s_max();
    if (s_max - sol_f0.s_max()).abs() > s_max * 1e-12 {
        return Err(OdeError::InvalidArg(
            "solutions must share the same s_max".into(),
        ));
    }
    let mut max_log_ratio = 0.0_f64;
    for (i, &s) in sol_f.grid.iter().enumerate().skip(1) {
        let f0 = sol_f0.eval_f(s);
        max_log_ratio = max_log_ratio.max((sol_f.f[i] / f0).ln().abs());
    }
    let tol = sol_f.tol.max(sol_f0.tol);
    Ok(RatioBoundReport {
        max_log_ratio,
        c: c.value,
        pass: max_log_ratio <= c.value + tol,
        window_only: c.window_only,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solve_const(k: f64, s_max: f64, tol: f64) -> ComparisonSolution {
        solve_comparison(&CurvatureProfile::constant(k).unwrap(), s_max, tol).unwrap()
    }

    #[test]
    fn zero_curvature_closed_form() {
        let sol = solve_const(0.0, 2.0, 1e-8);
        assert!((sol.eval_f(2.0) - 2.0).abs() < 1e-10);
        assert!((sol.eval_g(2.0) - 2.0).abs() < 1e-10);
        assert!((sol.eval_f(1.37) - 1.37).abs() < 1e-10);
        assert!((sol.eval_g(1.37) - 1.37_f64.powi(2) / 2.0).abs() < 1e-10);
    }

    #[test]
    fn hyperbolic_closed_form() {
        // k = -1: F = sinh, G = cosh - 1.
        let sol = solve_const(-1.0, 2.0, 1e-8);
        assert!((sol.eval_f(2.0) - 3.626860).abs() < 1e-5);
        assert!((sol.eval_g(2.0) - 2.762196).abs() < 1e-5);
        assert!((sol.eval_f(2.0) - 2.0_f64.sinh()).abs() < 1e-9);
        assert!((sol.eval_g(2.0) - (2.0_f64.cosh() - 1.0)).abs() < 1e-9);
        // Interpolated points against the closed form.
        for i in 0..50 {
            let s = 2.0 * (i as f64 + 0.5) / 50.0;
            assert!((sol.eval_f(s) - s.sinh()).abs() < 1e-8 * s.cosh());
            assert!((sol.eval_fprime(s) - s.cosh()).abs() < 1e-8 * s.cosh());
        }
    }

    #[test]
    fn scaled_hyperbolic_closed_form() {
        // k = -4: F = sinh(2s)/2.
        let sol = solve_const(-4.0, 1.0, 1e-8);
        assert!((sol.eval_f(1.0) - 1.813430).abs() < 1e-5);
        assert!((sol.eval_f(1.0) - 2.0_f64.sinh() / 2.0).abs() < 1e-9);
    }

    #[test]
    fn closed_form_equivalence_sup_norm() {
        for a in [1.0_f64, 2.0] {
            let sol = solve_const(-a * a, 6.0, 1e-8);
            let scale = (a * 6.0).cosh();
            let max_err = sol
                .grid
                .iter()
                .zip(&sol.f)
                .map(|(&s, &f)| (f - (a * s).sinh() / a).abs())
                .fold(0.0_f64, f64::max);
            assert!(max_err <= 1e-8 * scale, "a={a}: {max_err:e}");
        }
    }

    #[test]
    fn residual_contract() {
        for (k, tol) in [(-1.0, 1e-6), (-4.0, 1e-8), (0.0, 1e-5)] {
            let sol = solve_const(k, 4.0, tol);
            for (r, scale) in sol.residuals() {
                assert!(r <= tol * scale, "k={k}: residual {r:e} > {:e}", tol * scale);
            }
        }
    }

    #[test]
    fn growth_ratios_flat_and_hyperbolic() {
        let sol = solve_const(0.0, 2.0, 1e-8);
        let rep = check_growth_ratios(&sol);
        assert!((rep.min_s_fprime_over_f - 1.0).abs() < 1e-9);

        // k = -1 on [0,5]: F'/F = coth s decreases to coth 5 > 1 = a.
        let sol = solve_const(-1.0, 5.0, 1e-8);
        let rep = check_growth_ratios(&sol);
        assert!(rep.min_fprime_over_f >= 1.0);
        assert!((rep.min_fprime_over_f - 5.0_f64.tanh().recip()).abs() < 1e-7);
        assert!(rep.min_s_fprime_over_f >= 1.0 - 1e-9);

        // k = -4: F'/F = 2 coth(2s) >= 2.
        let sol = solve_const(-4.0, 5.0, 1e-8);
        let rep = check_growth_ratios(&sol);
        assert!(rep.min_fprime_over_f >= 2.0);
    }

    #[test]
    fn g_over_sf_monotone() {
        let sol = solve_const(0.0, 2.0, 1e-8);
        let rep = check_g_over_sf(&sol).unwrap();
        assert!(rep.max_violation.abs() < 1e-12);
        // Closed form: G/(sF) = (cosh s - 1)/(s sinh s), strictly decreasing.
        let sol = solve_const(-1.0, 5.0, 1e-8);
        let rep = check_g_over_sf(&sol).unwrap();
        assert!(rep.max_violation <= 1e-12);
        // Non-constant non-increasing profile: k = -1 - s.
        let ramp = CurvatureProfile::new(
            ProfileKind::ClosedForm(ClosedFormKind::LinearRamp { base: -1.0, slope: 1.0 }),
            1.0,
            true,
        )
        .unwrap();
        let sol = solve_comparison(&ramp, 5.0, 1e-8).unwrap();
        let rep = check_g_over_sf(&sol).unwrap();
        assert!(rep.max_violation <= 1e-8);
    }

    #[test]
    fn g_over_sf_requires_monotone_flag() {
        let bump = CurvatureProfile::new(
            ProfileKind::ClosedForm(ClosedFormKind::ExpBump { base: -1.0 }),
            1.0,
            false,
        )
        .unwrap();
        let sol = solve_comparison(&bump, 2.0, 1e-6).unwrap();
        assert!(matches!(check_g_over_sf(&sol), Err(OdeError::NotMonotone)));
    }

    #[test]
    fn rejects_nonnegative_curvature() {
        assert!(CurvatureProfile::constant(0.5).is_err());
        let p = CurvatureProfile::new(
            ProfileKind::PiecewiseSamples {
                grid: vec![0.0, 1.0, 2.0],
                values: vec![-1.0, -0.5, 0.25],
            },
            0.0,
            false,
        );
        assert!(p.is_err());
    }

    #[test]
    fn rejects_bound_violation() {
        // Declared a = 2 but k = -1 > -4.
        let p = CurvatureProfile::new(ProfileKind::Constant { value: -1.0 }, 2.0, true);
        assert!(matches!(p, Err(OdeError::CurvatureTooLarge { .. })));
    }

    #[test]
    fn step_underflow_reports_last_good_s() {
        let p = CurvatureProfile::constant(-1e24).unwrap();
        match solve_comparison(&p, 1.0, 1e-6) {
            Err(OdeError::StepSizeUnderflow { last_good_s }) => assert!(last_good_s < 1.0),
            other => panic!("expected underflow, got {other:?}"),
        }
    }

    #[test]
    fn ratio_constant_exact_integrals() {
        let k0 = CurvatureProfile::constant(-1.0).unwrap();
        let k = CurvatureProfile::new(
            ProfileKind::ClosedForm(ClosedFormKind::ExpBump { base: -1.0 }),
            1.0,
            false,
        )
        .unwrap();
        // (π/2)∫₀^∞ e^{-s} ds = π/2.
        let c = ratio_constant_c(&k, &k0, 40.0).unwrap();
        assert!((c.value - std::f64::consts::FRAC_PI_2).abs() < 1e-9);
        assert!(!c.window_only);

        let k0 = CurvatureProfile::constant(-4.0).unwrap();
        let k = CurvatureProfile::new(
            ProfileKind::ClosedForm(ClosedFormKind::ExpBump { base: -4.0 }),
            2.0,
            false,
        )
        .unwrap();
        // sqrt(-k0) = 2: C = π/4.
        let c = ratio_constant_c(&k, &k0, 40.0).unwrap();
        assert!((c.value - std::f64::consts::FRAC_PI_4).abs() < 1e-9);

        let c = ratio_constant_c(&k0, &k0, 40.0).unwrap();
        assert!(c.value.abs() < 1e-12);
    }

    #[test]
    fn ratio_constant_rejects_zero_touching_background() {
        let k0 = CurvatureProfile::constant(0.0).unwrap();
        let k = CurvatureProfile::constant(-1.0).unwrap();
        assert!(matches!(
            ratio_constant_c(&k, &k0, 10.0),
            Err(OdeError::BackgroundTouchesZero { .. })
        ));
    }

    #[test]
    fn ratio_bound_envelope() {
        let s_max = 25.0;
        let k0 = CurvatureProfile::constant(-1.0).unwrap();
        let k = CurvatureProfile::new(
            ProfileKind::ClosedForm(ClosedFormKind::ExpBump { base: -1.0 }),
            1.0,
            false,
        )
        .unwrap();
        let sol0 = solve_comparison(&k0, s_max, 1e-8).unwrap();
        let sol = solve_comparison(&k, s_max, 1e-8).unwrap();
        let c = ratio_constant_c(&k, &k0, s_max).unwrap();
        let rep = check_ratio_bound(&sol, &sol0, &c).unwrap();
        assert!(rep.pass, "max |ln F/F0| = {} > C = {}", rep.max_log_ratio, rep.c);
        assert!(!rep.window_only);
        assert!(rep.max_log_ratio > 0.0);

        // Identical profiles: ratio 1 everywhere.
        let rep = check_ratio_bound(&sol0, &sol0, &ratio_constant_c(&k0, &k0, s_max).unwrap())
            .unwrap();
        assert!(rep.max_log_ratio < 1e-12);
    }

    #[test]
    fn ratio_bound_window_only_case() {
        // |k - k0| does not decay: certifies the window only.
        let k0 = CurvatureProfile::constant(-1.0).unwrap();
        let k = CurvatureProfile::constant(-1.21).unwrap();
        let sol0 = solve_comparison(&k0, 10.0, 1e-8).unwrap();
        let sol = solve_comparison(&k, 10.0, 1e-8).unwrap();
        let c = ratio_constant_c(&k, &k0, 10.0).unwrap();
        assert!(c.window_only);
        let rep = check_ratio_bound(&sol, &sol0, &c).unwrap();
        assert!(rep.window_only);
        assert!(rep.max_log_ratio.is_finite());
        assert!(rep.pass);
    }
}
