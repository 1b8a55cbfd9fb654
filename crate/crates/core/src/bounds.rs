//! Closed-form growth and convergence-rate bounds, Monte Carlo estimators of
//! the bounded functionals, and pass/fail certification reports.

use std::io::Write;

use serde::Serialize;

use crate::error::{domain, finite, Error, Result};
use crate::model::{bessel_sq_moment, BesselSqParams, CirParams};
use crate::numeric::{cumulative_trapezoid, mean_var};
use crate::simulate::PathEnsemble;

/// Monte Carlo mean with its standard error `sd / sqrt(n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimateWithError {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

impl EstimateWithError {
    pub fn from_samples(samples: impl IntoIterator<Item = f64>) -> Result<Self> {
        let (mean, var, n) = mean_var(samples);
        if n < 2 {
            return Err(domain(format!("need at least two samples, got {n}")));
        }
        Ok(Self {
            mean,
            stderr: (var / n as f64).sqrt(),
            n,
        })
    }
}

fn check_t(t: f64) -> Result<()> {
    finite("t", t)?;
    if t < 0.0 {
        return Err(domain(format!("t must be nonnegative, got {t}")));
    }
    Ok(())
}

/// `(1 - e^{-bt}) / b`, equal to `t` at `b = 0`.
fn decay_integral(b: f64, t: f64) -> f64 {
    if b == 0.0 {
        t
    } else {
        -(-b * t).exp_m1() / b
    }
}

/// `2((x0 + at)^2 + 2 sigma^2 t) e^{4 sigma^2 t}`; bounds `E (sup_{s<=t} Z_s)^2`
/// for both the CIR and the squared Bessel process.
pub fn growth_bound_gronwall(p: &CirParams, t: f64) -> Result<f64> {
    check_t(t)?;
    let s2 = p.sigma * p.sigma;
    let m = p.x0 + p.a * t;
    Ok(2.0 * (m * m + 2.0 * s2 * t) * (4.0 * s2 * t).exp())
}

/// `2(x0 + at)^2 + (8 sigma^2 / b)(x0 - a/b)(1 - e^{-bt}) + (8 sigma^2 a / b) t`,
/// which bounds `E sup_{s<=t} (X_s + b int_0^s X_u du)^2`.
pub fn growth_bound_moment(p: &CirParams, t: f64) -> Result<f64> {
    if p.is_bessel() {
        return Err(Error::RedirectToBessel);
    }
    check_t(t)?;
    let m = p.x0 + p.a * t;
    Ok(2.0 * m * m + 8.0 * p.sigma * p.sigma * p.integrated_mean(t))
}

/// Upper and lower bounds on `E sup_{s<=t} Y_s^2` for the squared Bessel process.
pub fn bessel_growth_bounds(p: &BesselSqParams, t: f64) -> Result<(f64, f64)> {
    check_t(t)?;
    let s2 = p.sigma * p.sigma;
    let m = p.y0 + p.a * t;
    let q = 2.0 * p.y0 * t + p.a * t * t;
    Ok((2.0 * m * m + 4.0 * s2 * q, m * m + 0.5 * s2 * q))
}

fn check_pair(pn: &CirParams, p0: &CirParams, t: f64) -> Result<()> {
    check_t(t)?;
    if pn.x0 != p0.x0 {
        return Err(domain(format!(
            "compared models must share x0 ({} vs {})",
            pn.x0, p0.x0
        )));
    }
    Ok(())
}

/// `|a_n - a_0| T + |b_n - b_0| I_0 + |sigma_n - sigma_0| I_0^{1/2}` with
/// `I_0 = int_0^T E X_0(s) ds` (`A_0^2` for `b_0 > 0`, `B_0^2` for `b_0 = 0`).
fn l1_core(pn: &CirParams, p0: &CirParams, t: f64) -> f64 {
    let i0 = p0.integrated_mean(t);
    (pn.a - p0.a).abs() * t + (pn.b - p0.b).abs() * i0 + (pn.sigma - p0.sigma).abs() * i0.sqrt()
}

/// Bound on `sup_{t<=T} E|X_n(t) - X_0(t)|` for two coupled CIR/Bessel models.
pub fn rate_bound_l1(pn: &CirParams, p0: &CirParams, t: f64) -> Result<f64> {
    check_pair(pn, p0, t)?;
    Ok((pn.b * t).exp() * l1_core(pn, p0, t))
}

/// `R(T)`, a bound on `sup_{t<=T} E X_t^3`: the CIR envelope for `b > 0`,
/// the third moment at `T` for `b = 0`.
pub fn third_moment_envelope(p: &CirParams, t: f64) -> Result<f64> {
    check_t(t)?;
    if p.is_bessel() {
        return bessel_sq_moment(&p.bessel_limit(), t, 3);
    }
    let CirParams { x0, a, b, sigma } = *p;
    let s2 = sigma * sigma;
    let q = -(-b * t).exp_m1();
    let kappa = 1.0 + 1.5 * s2 / a + 0.5 * s2 * s2 / (a * a);
    Ok(x0.powi(3)
        + kappa * ((a / b).powi(3) * q.powi(3) + 3.0 * x0 * (a / b).powi(2) * q * q)
        + 3.0 * x0 * x0 * a / b * (1.0 + s2 / a) * q)
}

/// Bound on `sup_{t<=T} E(X_n(t) - X_0(t))^2` from the L1 bound and the
/// third-moment envelopes.
pub fn rate_bound_l2_distributional(pn: &CirParams, p0: &CirParams, t: f64) -> Result<f64> {
    check_pair(pn, p0, t)?;
    let r = third_moment_envelope(pn, t)? + third_moment_envelope(p0, t)?;
    Ok(2.0 * r.sqrt() * (0.5 * pn.b * t).exp() * l1_core(pn, p0, t).sqrt())
}

/// `D^2(T)`; at `b = 0` it reduces to `x0^2 + (sigma^2/2 + a)(2 x0 T + a T^2)`.
pub fn d_squared(p: &CirParams, t: f64) -> f64 {
    let s = p.sigma * p.sigma + 2.0 * p.a;
    let q = decay_integral(p.b, t);
    p.x0 * s * q + 0.5 * p.a * s * q * q + p.x0 * p.x0
}

/// Bound on `sup_{t<=T} E(X_n(t) - X_0(t))^2` obtained by stochastic calculus.
/// With `b_0 = 0` the Gronwall factor `e^{b_0 T}` equals one and `D_0 = E_0`.
pub fn rate_bound_l2_pathwise(pn: &CirParams, p0: &CirParams, t: f64) -> Result<f64> {
    check_pair(pn, p0, t)?;
    let da = (pn.a - p0.a).abs();
    let db = (pn.b - p0.b).abs();
    let ds = (pn.sigma - p0.sigma).abs();
    let coef = 2.0 * da + p0.sigma * p0.sigma + 2.0 * p0.sigma * ds;
    let dn2 = d_squared(pn, t);
    let d02 = d_squared(p0, t);
    let first = ((pn.b + p0.b) * t).exp() * coef * l1_core(pn, p0, t) * t;
    let second = (p0.b * t).exp()
        * (2.0 * db * t * (dn2 + (dn2 * d02).sqrt()) + ds * ds * pn.integrated_mean(t));
    Ok(first + second)
}

fn check_coupled(e1: &PathEnsemble, e2: &PathEnsemble) -> Result<()> {
    if e1.seed != e2.seed {
        return Err(Error::Uncoupled(format!("seeds {} and {}", e1.seed, e2.seed)));
    }
    if e1.grid != e2.grid {
        return Err(Error::Uncoupled("grids differ".into()));
    }
    if e1.n_paths() != e2.n_paths() {
        return Err(Error::Uncoupled(format!(
            "{} vs {} paths",
            e1.n_paths(),
            e2.n_paths()
        )));
    }
    Ok(())
}

fn distance_curve(e1: &PathEnsemble, e2: &PathEnsemble, f: impl Fn(f64) -> f64) -> Result<Vec<EstimateWithError>> {
    check_coupled(e1, e2)?;
    (0..e1.n_times())
        .map(|j| EstimateWithError::from_samples(e1.column(j).zip(e2.column(j)).map(|(x, y)| f(x - y))))
        .collect()
}

/// `E|X_1(t) - X_2(t)|` at every grid time.
pub fn mc_l1_curve(e1: &PathEnsemble, e2: &PathEnsemble) -> Result<Vec<EstimateWithError>> {
    distance_curve(e1, e2, f64::abs)
}

/// `E(X_1(t) - X_2(t))^2` at every grid time.
pub fn mc_l2_curve(e1: &PathEnsemble, e2: &PathEnsemble) -> Result<Vec<EstimateWithError>> {
    distance_curve(e1, e2, |d| d * d)
}

fn sup_of(curve: &[EstimateWithError], times: &[f64]) -> (EstimateWithError, f64) {
    let (j, est) = curve
        .iter()
        .enumerate()
        .max_by(|x, y| x.1.mean.total_cmp(&y.1.mean))
        .expect("grids have at least two points");
    (*est, times[j])
}

/// Grid maximum of `E|X_1(t) - X_2(t)|` with the standard error at the argmax.
pub fn mc_sup_l1_distance(e1: &PathEnsemble, e2: &PathEnsemble) -> Result<(EstimateWithError, f64)> {
    Ok(sup_of(&mc_l1_curve(e1, e2)?, e1.times()))
}

/// Grid maximum of `E(X_1(t) - X_2(t))^2` with the standard error at the argmax.
pub fn mc_sup_l2_distance(e1: &PathEnsemble, e2: &PathEnsemble) -> Result<(EstimateWithError, f64)> {
    Ok(sup_of(&mc_l2_curve(e1, e2)?, e1.times()))
}

/// `E sup_{s<=T} (X_s + b int_0^s X_u du)^2` over the grid, with the
/// integral by the trapezoid rule. `b` is taken from `p`.
pub fn mc_sup_second_moment(e: &PathEnsemble, p: &CirParams) -> Result<EstimateWithError> {
    let t = e.times();
    EstimateWithError::from_samples(e.paths().map(|x| {
        let integral = cumulative_trapezoid(t, x);
        x.iter()
            .zip(&integral)
            .map(|(&xs, &is)| (xs + p.b * is).powi(2))
            .fold(0.0, f64::max)
    }))
}

/// `E (sup_{s<=T} X_s)^2` over the grid.
pub fn mc_sup_square(e: &PathEnsemble) -> Result<EstimateWithError> {
    EstimateWithError::from_samples(e.paths().map(|x| x.iter().fold(0.0f64, |m, &v| m.max(v * v))))
}

/// Twice the per-time change of a Monte Carlo curve when the step is halved.
pub fn discretization_budget(coarse: &[EstimateWithError], fine: &[EstimateWithError]) -> Result<Vec<f64>> {
    if coarse.len() != fine.len() {
        return Err(domain("budget curves must have equal length"));
    }
    Ok(coarse.iter().zip(fine).map(|(c, f)| 2.0 * (c.mean - f.mean).abs()).collect())
}

/// Per-time comparison of a Monte Carlo estimate with an upper bound.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub times: Vec<f64>,
    pub empirical: Vec<EstimateWithError>,
    pub bound: Vec<f64>,
    /// Allowance for discretization bias added to the bound at each time.
    pub budget: Vec<f64>,
    /// `(bound + budget - mean) / stderr`; infinite when the stderr is zero.
    pub slack_in_stderr: Vec<f64>,
    pub z: f64,
    pub pass: bool,
}

impl BoundReport {
    /// Passes iff `mean <= bound + budget + z * stderr` at every time.
    pub fn new(
        times: Vec<f64>,
        empirical: Vec<EstimateWithError>,
        bound: Vec<f64>,
        budget: Option<Vec<f64>>,
        z: f64,
    ) -> Result<Self> {
        let n = times.len();
        let budget = budget.unwrap_or_else(|| vec![0.0; n]);
        if empirical.len() != n || bound.len() != n || budget.len() != n {
            return Err(domain("report columns must have equal length"));
        }
        finite("z", z)?;
        let slack: Vec<f64> = empirical
            .iter()
            .zip(&bound)
            .zip(&budget)
            .map(|((e, &b), &d)| {
                let gap = b + d - e.mean;
                if e.stderr > 0.0 {
                    gap / e.stderr
                } else if gap >= 0.0 {
                    f64::INFINITY
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
        let pass = empirical
            .iter()
            .zip(&bound)
            .zip(&budget)
            .all(|((e, &b), &d)| e.mean <= b + d + z * e.stderr);
        Ok(Self {
            times,
            empirical,
            bound,
            budget,
            slack_in_stderr: slack,
            z,
            pass,
        })
    }

    pub fn row_pass(&self, i: usize) -> bool {
        let e = &self.empirical[i];
        e.mean <= self.bound[i] + self.budget[i] + self.z * e.stderr
    }

    /// Columns `time,empirical_mean,stderr,bound,pass`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "time,empirical_mean,stderr,bound,pass")?;
        for i in 0..self.times.len() {
            writeln!(
                w,
                "{:.16e},{:.16e},{:.16e},{:.16e},{}",
                self.times[i],
                self.empirical[i].mean,
                self.empirical[i].stderr,
                self.bound[i],
                self.row_pass(i)
            )?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }
}

/// Which distance a coupled certification checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Distance {
    L1,
    /// Second moment against the distributional bound.
    L2Distributional,
    /// Second moment against the stochastic-calculus bound.
    L2Pathwise,
}

/// Certifies `E dist(X_n(t), X_0(t)) <= bound(t)` at every grid time of two
/// coupled ensembles. `halved` optionally supplies the same pair simulated
/// with half the step, from which the discretization budget is formed.
pub fn certify_coupled(
    en: &PathEnsemble,
    e0: &PathEnsemble,
    pn: &CirParams,
    p0: &CirParams,
    distance: Distance,
    halved: Option<(&PathEnsemble, &PathEnsemble)>,
    z: f64,
) -> Result<BoundReport> {
    let curve_of = |a: &PathEnsemble, b: &PathEnsemble| match distance {
        Distance::L1 => mc_l1_curve(a, b),
        _ => mc_l2_curve(a, b),
    };
    let curve = curve_of(en, e0)?;
    let budget = match halved {
        Some((hn, h0)) => {
            if hn.grid != en.grid {
                return Err(domain("halved-step run must use the same output grid"));
            }
            Some(discretization_budget(&curve, &curve_of(hn, h0)?)?)
        }
        None => None,
    };
    let bound = en
        .times()
        .iter()
        .map(|&t| match distance {
            Distance::L1 => rate_bound_l1(pn, p0, t),
            Distance::L2Distributional => rate_bound_l2_distributional(pn, p0, t),
            Distance::L2Pathwise => rate_bound_l2_pathwise(pn, p0, t),
        })
        .collect::<Result<Vec<_>>>()?;
    BoundReport::new(en.times().to_vec(), curve, bound, budget, z)
}
