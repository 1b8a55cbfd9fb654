//! Model parameters, transition and stationary densities, and the closed-form
//! moments of the CIR and squared Bessel processes.

use serde::{Deserialize, Serialize};

use crate::error::{domain, finite, Error, Result};
use crate::specfun::{bessel_i, kummer_1f1, ln_gamma_unchecked};

/// Coefficients of `dX = (a - bX) dt + sigma sqrt(X) dW`, `X_0 = x0`.
///
/// `b = 0` is allowed and denotes the squared Bessel process; routines that
/// need mean reversion reject it with [`Error::RedirectToBessel`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CirParams {
    pub x0: f64,
    pub a: f64,
    pub b: f64,
    pub sigma: f64,
}

/// Coefficients of `dY = a dt + sigma sqrt(Y) dW`, `Y_0 = y0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BesselSqParams {
    pub y0: f64,
    pub a: f64,
    pub sigma: f64,
}

/// Result of the Feller check on `2a` against `sigma^2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Feller {
    /// `2a >= sigma^2`: paths stay strictly positive.
    pub holds: bool,
    /// `2a > sigma^2`: required by the drift estimator and the ergodic
    /// inverse mean.
    pub strict: bool,
}

fn feller(a: f64, sigma: f64) -> Feller {
    let two_a = 2.0 * a;
    let s2 = sigma * sigma;
    Feller {
        holds: two_a >= s2,
        strict: two_a > s2,
    }
}

fn positive(name: &str, v: f64) -> Result<f64> {
    finite(name, v)?;
    if v > 0.0 {
        Ok(v)
    } else {
        Err(domain(format!("{name} must be positive, got {v}")))
    }
}

impl CirParams {
    pub fn new(x0: f64, a: f64, b: f64, sigma: f64) -> Result<Self> {
        positive("x0", x0)?;
        positive("a", a)?;
        positive("sigma", sigma)?;
        finite("b", b)?;
        if b < 0.0 {
            return Err(domain(format!("b must be nonnegative, got {b}")));
        }
        Ok(Self { x0, a, b, sigma })
    }

    /// Index `nu = 2a / sigma^2 - 1` of the Bessel function in the density.
    pub fn nu(&self) -> f64 {
        2.0 * self.a / (self.sigma * self.sigma) - 1.0
    }

    pub fn feller_strict(&self) -> Feller {
        feller(self.a, self.sigma)
    }

    pub fn is_bessel(&self) -> bool {
        self.b == 0.0
    }

    /// The `b -> 0` limit, i.e. the squared Bessel process with the same
    /// initial value, drift level and diffusion scale.
    pub fn bessel_limit(&self) -> BesselSqParams {
        BesselSqParams {
            y0: self.x0,
            a: self.a,
            sigma: self.sigma,
        }
    }

    /// Same coefficients with a different mean-reversion rate.
    pub fn with_b(&self, b: f64) -> Result<Self> {
        Self::new(self.x0, self.a, b, self.sigma)
    }

    /// Scale `c(t) = sigma^2 (1 - e^{-bt}) / (2b)`, continuous at `b = 0`.
    pub fn scale(&self, t: f64) -> f64 {
        let s2 = self.sigma * self.sigma;
        if self.b == 0.0 {
            0.5 * s2 * t
        } else {
            -s2 * (-self.b * t).exp_m1() / (2.0 * self.b)
        }
    }

    /// `E X_t^k` for `k` in 1..=3, dispatching to the squared Bessel formulas
    /// when `b = 0`.
    pub fn moment(&self, t: f64, k: u32) -> Result<f64> {
        if self.is_bessel() {
            bessel_sq_moment(&self.bessel_limit(), t, k)
        } else {
            cir_moment(self, t, k)
        }
    }

    /// `int_0^T E X_s ds`; equals `A^2(T)` for `b > 0` and `B^2(T)` for `b = 0`.
    pub fn integrated_mean(&self, t: f64) -> f64 {
        if self.is_bessel() {
            self.x0 * t + 0.5 * self.a * t * t
        } else {
            let b = self.b;
            let one_minus = -(-b * t).exp_m1();
            (self.x0 - self.a / b) * one_minus / b + self.a / b * t
        }
    }

    pub(crate) fn tag(&self) -> String {
        if self.is_bessel() {
            format!(
                "besq y0={} a={} sigma={}",
                self.x0, self.a, self.sigma
            )
        } else {
            format!(
                "cir x0={} a={} b={} sigma={}",
                self.x0, self.a, self.b, self.sigma
            )
        }
    }
}

impl BesselSqParams {
    pub fn new(y0: f64, a: f64, sigma: f64) -> Result<Self> {
        positive("y0", y0)?;
        positive("a", a)?;
        positive("sigma", sigma)?;
        Ok(Self { y0, a, sigma })
    }

    pub fn nu(&self) -> f64 {
        2.0 * self.a / (self.sigma * self.sigma) - 1.0
    }

    pub fn feller_strict(&self) -> Feller {
        feller(self.a, self.sigma)
    }

    pub fn as_cir(&self) -> CirParams {
        CirParams {
            x0: self.y0,
            a: self.a,
            b: 0.0,
            sigma: self.sigma,
        }
    }
}

impl From<BesselSqParams> for CirParams {
    fn from(p: BesselSqParams) -> Self {
        p.as_cir()
    }
}

fn check_time(t: f64) -> Result<()> {
    finite("t", t)?;
    if t <= 0.0 {
        return Err(domain(format!(
            "densities need t > 0 (the law at t = 0 is a point mass), got {t}"
        )));
    }
    Ok(())
}

/// Log of the scaled non-central chi-squared density with scale `c`,
/// non-centrality mean `m` and index `nu`, at `x > 0`.
fn ln_noncentral(c: f64, m: f64, nu: f64, x: f64) -> Result<f64> {
    let arg = 2.0 * (x * m).sqrt() / c;
    let ln_i = bessel_i(nu, arg)?.ln();
    Ok(-c.ln() + 0.5 * nu * (x.ln() - m.ln()) - (x + m) / c + ln_i)
}

/// Transition density `p_t(x)` of the CIR process started at `x0`.
pub fn cir_density(p: &CirParams, t: f64, x: f64) -> Result<f64> {
    if p.is_bessel() {
        return Err(Error::RedirectToBessel);
    }
    check_time(t)?;
    if x.is_nan() {
        return Err(domain("x must not be NaN"));
    }
    if x <= 0.0 || x.is_infinite() {
        return Ok(0.0);
    }
    let m = p.x0 * (-p.b * t).exp();
    Ok(ln_noncentral(p.scale(t), m, p.nu(), x)?.exp())
}

/// Gamma density with shape `2a/sigma^2` and rate `2b/sigma^2`, the limit of
/// `p_t` as `t -> inf`.
pub fn cir_stationary_density(p: &CirParams, x: f64) -> Result<f64> {
    if p.is_bessel() {
        return Err(Error::NoStationaryLaw);
    }
    if x.is_nan() {
        return Err(domain("x must not be NaN"));
    }
    if x <= 0.0 || x.is_infinite() {
        return Ok(0.0);
    }
    let s2 = p.sigma * p.sigma;
    let shape = 2.0 * p.a / s2;
    let rate = 2.0 * p.b / s2;
    Ok((shape * rate.ln() - ln_gamma_unchecked(shape) + (shape - 1.0) * x.ln() - rate * x).exp())
}

/// Transition density `g_t(x)` of the squared Bessel process started at `y0`.
///
/// The prefactor is `2 / (sigma^2 t)`, i.e. `1 / c(t)` with `c(t) = sigma^2 t / 2`,
/// which makes `g_t` the `b -> 0` limit of `p_t` and a probability density.
pub fn bessel_sq_density(p: &BesselSqParams, t: f64, x: f64) -> Result<f64> {
    check_time(t)?;
    if x.is_nan() {
        return Err(domain("x must not be NaN"));
    }
    if x <= 0.0 || x.is_infinite() {
        return Ok(0.0);
    }
    let c = 0.5 * p.sigma * p.sigma * t;
    Ok(ln_noncentral(c, p.y0, p.nu(), x)?.exp())
}

fn check_moment_time(t: f64) -> Result<()> {
    finite("t", t)?;
    if t < 0.0 {
        return Err(domain(format!("t must be nonnegative, got {t}")));
    }
    Ok(())
}

/// Closed-form `E X_t^k`, `k` in 1..=3, for the CIR process (`b > 0`).
pub fn cir_moment(p: &CirParams, t: f64, k: u32) -> Result<f64> {
    if p.is_bessel() {
        return Err(Error::RedirectToBessel);
    }
    check_moment_time(t)?;
    let CirParams { x0, a, b, sigma } = *p;
    let s2 = sigma * sigma;
    let e = (-b * t).exp();
    // 1 - e^{-bt}
    let one_minus = -(-b * t).exp_m1();
    match k {
        1 => Ok(x0 * e + a / b * one_minus),
        2 => Ok(x0 * (s2 + 2.0 * a) / b * e * one_minus
            + a * (s2 + 2.0 * a) / (2.0 * b * b) * one_minus * one_minus
            + x0 * x0 * e * e),
        3 => {
            let kappa = 1.0 + 1.5 * s2 / a + 0.5 * s2 * s2 / (a * a);
            Ok(x0.powi(3) * e.powi(3)
                + kappa
                    * (a.powi(3) / b.powi(3) * one_minus.powi(3)
                        + 3.0 * x0 * a * a / (b * b) * e * one_minus * one_minus)
                + 3.0 * x0 * x0 * a / b * (1.0 + s2 / a) * e * e * one_minus)
        }
        other => Err(Error::UnsupportedMoment(other)),
    }
}

/// Closed-form `E Y_t^k`, `k` in 1..=3, for the squared Bessel process.
pub fn bessel_sq_moment(p: &BesselSqParams, t: f64, k: u32) -> Result<f64> {
    check_moment_time(t)?;
    let BesselSqParams { y0, a, sigma } = *p;
    let s2 = sigma * sigma;
    match k {
        1 => Ok(y0 + a * t),
        2 => Ok(y0 * y0 + (0.5 * s2 + a) * (2.0 * y0 * t + a * t * t)),
        3 => Ok((0.5 * a * s2 * s2 + 1.5 * a * a * s2 + a.powi(3)) * t.powi(3)
            + 3.0 * (0.5 * y0 * s2 * s2 + 1.5 * a * y0 * s2 + a * a * y0) * t * t
            + 3.0 * y0 * y0 * (s2 + a) * t
            + y0.powi(3)),
        other => Err(Error::UnsupportedMoment(other)),
    }
}

/// `E Y_t^pw` for real `pw >= -2a/sigma^2` through the `1F1` representation
/// `(sigma^2 t/2)^pw Gamma(d+pw)/Gamma(d) e^{-x} 1F1(d+pw; d; x)`,
/// `d = 2a/sigma^2`, `x = 2 y0 / (sigma^2 t)`.
///
/// At `pw = -2a/sigma^2` the moment diverges and `+inf` is returned.
pub fn bessel_sq_moment_p(p: &BesselSqParams, t: f64, pw: f64) -> Result<f64> {
    finite("pw", pw)?;
    finite("t", t)?;
    if t <= 0.0 {
        return Err(domain(format!("t must be positive, got {t}")));
    }
    let s2 = p.sigma * p.sigma;
    let d = 2.0 * p.a / s2;
    if pw < -d {
        return Err(domain(format!(
            "moment order {pw} is below -2a/sigma^2 = {}",
            -d
        )));
    }
    if pw == -d {
        return Ok(f64::INFINITY);
    }
    if pw == 0.0 {
        return Ok(1.0);
    }
    let x = 2.0 * p.y0 / (s2 * t);
    let ln_f = kummer_1f1(d + pw, d, x)?.ln();
    let ln_m = pw * (0.5 * s2 * t).ln() + ln_gamma_unchecked(d + pw) - ln_gamma_unchecked(d) - x + ln_f;
    Ok(ln_m.exp())
}

/// Space average `int p_inf(x) / x dx = b / (a - sigma^2/2)`, the almost-sure
/// limit of `(1/T) int_0^T dt / X_t`.
pub fn ergodic_inverse_mean(p: &CirParams) -> Result<f64> {
    if p.is_bessel() {
        return Err(Error::RedirectToBessel);
    }
    if !p.feller_strict().strict {
        return Err(domain(format!(
            "the inverse moment needs 2a > sigma^2 (a = {}, sigma = {})",
            p.a, p.sigma
        )));
    }
    Ok(p.b / (p.a - 0.5 * p.sigma * p.sigma))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::integrate_to_infinity;
    use proptest::prelude::*;

    fn cir(x0: f64, a: f64, b: f64, s: f64) -> CirParams {
        CirParams::new(x0, a, b, s).unwrap()
    }

    /// RK4 integration of the moment ODEs
    /// m1' = a - b m1, m2' = (2a + s^2) m1 - 2b m2, m3' = 3(a + s^2) m2 - 3b m3.
    fn moment_ode(p: &CirParams, t: f64) -> [f64; 3] {
        let CirParams { x0, a, b, sigma } = *p;
        let s2 = sigma * sigma;
        let rhs = |m: [f64; 3]| {
            [
                a - b * m[0],
                (2.0 * a + s2) * m[0] - 2.0 * b * m[1],
                3.0 * (a + s2) * m[1] - 3.0 * b * m[2],
            ]
        };
        let n = 20_000;
        let h = t / n as f64;
        let mut m = [x0, x0 * x0, x0.powi(3)];
        let add = |m: [f64; 3], k: [f64; 3], s: f64| [m[0] + s * k[0], m[1] + s * k[1], m[2] + s * k[2]];
        for _ in 0..n {
            let k1 = rhs(m);
            let k2 = rhs(add(m, k1, 0.5 * h));
            let k3 = rhs(add(m, k2, 0.5 * h));
            let k4 = rhs(add(m, k3, h));
            for i in 0..3 {
                m[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        m
    }

    #[test]
    fn parameter_validation() {
        assert!(CirParams::new(0.0, 1.0, 1.0, 1.0).is_err());
        assert!(CirParams::new(1.0, 0.0, 1.0, 1.0).is_err());
        assert!(CirParams::new(1.0, 1.0, -0.1, 1.0).is_err());
        assert!(CirParams::new(1.0, 1.0, 1.0, 0.0).is_err());
        assert!(CirParams::new(f64::NAN, 1.0, 1.0, 1.0).is_err());
        let p = cir(1.0, 2.0, 1.0, 1.0);
        assert_eq!(p.nu(), 3.0);
        assert_eq!(p.feller_strict(), Feller { holds: true, strict: true });
        let q = cir(1.0, 0.5, 1.0, 1.0);
        assert_eq!(q.feller_strict(), Feller { holds: true, strict: false });
        let r = cir(1.0, 0.25, 1.0, 1.0);
        assert!(!r.feller_strict().holds);
        assert!(r.nu() > -1.0);
    }

    #[test]
    fn densities_reject_bad_inputs() {
        let p = cir(1.0, 2.0, 1.0, 1.0);
        assert!(matches!(cir_density(&p.with_b(0.0).unwrap(), 1.0, 1.0), Err(Error::RedirectToBessel)));
        assert!(cir_density(&p, 0.0, 1.0).is_err());
        assert!(cir_density(&p, -1.0, 1.0).is_err());
        assert!(matches!(
            cir_stationary_density(&p.with_b(0.0).unwrap(), 1.0),
            Err(Error::NoStationaryLaw)
        ));
        assert_eq!(cir_density(&p, 1.0, -2.0).unwrap(), 0.0);
        assert_eq!(cir_density(&p, 1.0, 0.0).unwrap(), 0.0);
        let q = p.bessel_limit();
        assert!(bessel_sq_density(&q, 0.0, 1.0).is_err());
        assert_eq!(bessel_sq_density(&q, 1.0, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn densities_normalize() {
        for (p, t) in [
            (cir(1.0, 2.0, 1.0, 1.0), 0.1),
            (cir(1.0, 2.0, 1.0, 1.0), 1.0),
            (cir(0.3, 0.7, 2.5, 0.9), 3.0),
        ] {
            let mass = integrate_to_infinity(|x| cir_density(&p, t, x).unwrap(), 0.0, 1e-12, 1e-10).unwrap();
            assert!((mass - 1.0).abs() < 1e-6, "{p:?} t={t}: {mass}");
        }
        let q = BesselSqParams::new(1.0, 2.0, 1.0).unwrap();
        for t in [0.1, 1.0, 10.0] {
            let mass = integrate_to_infinity(|x| bessel_sq_density(&q, t, x).unwrap(), 0.0, 1e-12, 1e-10).unwrap();
            assert!((mass - 1.0).abs() < 1e-6, "t={t}: {mass}");
        }
    }

    #[test]
    fn density_matches_moments() {
        let p = cir(1.0, 2.0, 1.0, 1.0);
        let q = p.bessel_limit();
        for t in [0.5, 2.0] {
            for k in [1, 2] {
                let m = integrate_to_infinity(|x| x.powi(k as i32) * cir_density(&p, t, x).unwrap(), 0.0, 1e-12, 1e-10)
                    .unwrap();
                assert!((m - cir_moment(&p, t, k).unwrap()).abs() < 1e-6);
                let m = integrate_to_infinity(
                    |x| x.powi(k as i32) * bessel_sq_density(&q, t, x).unwrap(),
                    0.0,
                    1e-12,
                    1e-10,
                )
                .unwrap();
                assert!((m - bessel_sq_moment(&q, t, k).unwrap()).abs() < 1e-6 * m.max(1.0));
            }
        }
    }

    #[test]
    fn transition_density_tends_to_gamma() {
        let p = cir(1.0, 2.0, 1.0, 1.0);
        for x in [0.2, 1.0, 2.0, 5.0] {
            let stat = cir_stationary_density(&p, x).unwrap();
            let late = cir_density(&p, 40.0, x).unwrap();
            assert!((late - stat).abs() < 1e-12 * stat.max(1.0), "x={x}");
            let mid = cir_density(&p, 5.0, x).unwrap();
            assert!((mid - stat).abs() > (late - stat).abs());
        }
    }

    #[test]
    fn stationary_density_properties() {
        // shape 1 rate 1 is the unit exponential
        let p = cir(1.0, 1.0, 1.0, 2f64.sqrt());
        for x in [0.1, 1.0, 3.0] {
            let d = cir_stationary_density(&p, x).unwrap();
            assert!((d - (-x).exp()).abs() < 1e-14);
        }
        let p = cir(1.0, 2.0, 1.5, 1.0);
        let mass = integrate_to_infinity(|x| cir_stationary_density(&p, x).unwrap(), 0.0, 1e-13, 1e-12).unwrap();
        assert!((mass - 1.0).abs() < 1e-8);
        let mean = integrate_to_infinity(|x| x * cir_stationary_density(&p, x).unwrap(), 0.0, 1e-13, 1e-12).unwrap();
        assert!((mean - p.a / p.b).abs() < 1e-8);
    }

    #[test]
    fn bessel_density_vanishes_at_large_times() {
        let q = BesselSqParams::new(1.0, 2.0, 1.0).unwrap();
        let mut prev = f64::INFINITY;
        for t in [10.0, 100.0, 1e3, 1e4] {
            let g = bessel_sq_density(&q, t, 1.0).unwrap();
            assert!(g < prev);
            prev = g;
        }
        assert!(prev < 1e-10);
    }

    #[test]
    fn moments_match_ode_oracle() {
        for p in [cir(1.0, 2.0, 1.0, 1.0), cir(1.3, 2.0, 0.7, 1.1), cir(0.2, 0.9, 3.0, 0.5)] {
            for t in [0.0, 0.3, 1.0, 2.5] {
                let ode = moment_ode(&p, t);
                for k in 1..=3 {
                    let m = cir_moment(&p, t, k).unwrap();
                    assert!((m - ode[k as usize - 1]).abs() < 1e-9 * m.max(1.0), "{p:?} t={t} k={k}");
                }
            }
        }
        let p = cir(1.0, 2.0, 0.0, 1.0);
        let q = p.bessel_limit();
        for t in [0.0, 0.5, 2.0] {
            let ode = moment_ode(&p, t);
            for k in 1..=3 {
                let m = bessel_sq_moment(&q, t, k).unwrap();
                assert!((m - ode[k as usize - 1]).abs() < 1e-9 * m.max(1.0));
            }
        }
    }

    #[test]
    fn moment_examples() {
        let p = cir(1.7, 2.0, 1.0, 1.0);
        assert_eq!(cir_moment(&p, 0.0, 1).unwrap(), 1.7);
        assert!((cir_moment(&p, 200.0, 1).unwrap() - 2.0).abs() < 1e-12);
        assert!(matches!(cir_moment(&p, 1.0, 4), Err(Error::UnsupportedMoment(4))));
        assert!(matches!(cir_moment(&p.with_b(0.0).unwrap(), 1.0, 1), Err(Error::RedirectToBessel)));
        let q = BesselSqParams::new(1.5, 2.0, 1.0).unwrap();
        assert_eq!(bessel_sq_moment(&q, 3.0, 1).unwrap(), 1.5 + 6.0);
        assert_eq!(bessel_sq_moment(&q, 0.0, 3).unwrap(), 1.5f64.powi(3));
        assert!(bessel_sq_moment(&q, -1.0, 1).is_err());
    }

    #[test]
    fn cir_moments_converge_to_bessel_as_b_vanishes() {
        let base = cir(1.0, 2.0, 1.0, 1.0);
        let q = base.bessel_limit();
        for t in [0.5, 1.0, 2.0] {
            for k in 1..=3 {
                let target = bessel_sq_moment(&q, t, k).unwrap();
                let mut prev_ratio: Option<f64> = None;
                for e in 1..=6 {
                    let b = 10f64.powi(-e);
                    let diff = (cir_moment(&base.with_b(b).unwrap(), t, k).unwrap() - target).abs();
                    let ratio = diff / b;
                    // O(b): the ratio settles to a constant
                    if let Some(r) = prev_ratio {
                        assert!((ratio - r).abs() < 0.2 * ratio.max(1e-12) + 1e-6, "t={t} k={k} b={b}");
                    }
                    prev_ratio = Some(ratio);
                }
            }
        }
    }

    #[test]
    fn general_bessel_moment() {
        let q = BesselSqParams::new(1.0, 2.0, 1.0).unwrap();
        for t in [0.01, 0.5, 2.0, 50.0] {
            let m1 = bessel_sq_moment_p(&q, t, 1.0).unwrap();
            assert!((m1 - bessel_sq_moment(&q, t, 1).unwrap()).abs() < 1e-10 * m1);
            let m3 = bessel_sq_moment_p(&q, t, 3.0).unwrap();
            let closed = bessel_sq_moment(&q, t, 3).unwrap();
            assert!(((m3 - closed) / closed).abs() < 1e-8, "t={t}");
        }
        assert_eq!(bessel_sq_moment_p(&q, 1.0, 0.0).unwrap(), 1.0);
        assert!(bessel_sq_moment_p(&q, 1.0, -4.5).is_err());
        assert_eq!(bessel_sq_moment_p(&q, 1.0, -4.0).unwrap(), f64::INFINITY);
        assert!(bessel_sq_moment_p(&q, 0.0, 1.0).is_err());
        // E[1/Y_t] against quadrature of the density
        for t in [0.5, 2.0] {
            let quad = integrate_to_infinity(|x| bessel_sq_density(&q, t, x).unwrap() / x, 0.0, 1e-13, 1e-11).unwrap();
            let m = bessel_sq_moment_p(&q, t, -1.0).unwrap();
            assert!((m - quad).abs() < 1e-8, "t={t}: {m} vs {quad}");
        }
    }

    #[test]
    fn ergodic_inverse_mean_examples() {
        let p = cir(1.0, 2.0, 1.0, 1.0);
        assert!((ergodic_inverse_mean(&p).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        let tiny = p.with_b(1e-12).unwrap();
        assert!(ergodic_inverse_mean(&tiny).unwrap() < 1e-11);
        assert!(ergodic_inverse_mean(&cir(1.0, 0.5, 1.0, 1.0)).is_err());
        assert!(ergodic_inverse_mean(&p.with_b(0.0).unwrap()).is_err());
        let quad = integrate_to_infinity(|x| cir_stationary_density(&p, x).unwrap() / x, 0.0, 1e-14, 1e-12).unwrap();
        assert!((quad - 2.0 / 3.0).abs() < 1e-8);
    }

    #[test]
    fn integrated_mean_matches_quadrature_of_mean() {
        for p in [cir(1.0, 2.0, 1.0, 1.0), cir(3.0, 0.5, 0.4, 1.0), cir(1.0, 2.0, 0.0, 1.0)] {
            let quad = crate::numeric::integrate(|s| p.moment(s, 1).unwrap(), 0.0, 3.0, 1e-13, 1e-13).unwrap();
            assert!((quad - p.integrated_mean(3.0)).abs() < 1e-10);
        }
    }

    proptest! {
        #[test]
        fn jensen_holds_for_closed_forms(
            x0 in 0.01f64..10.0,
            a in 0.05f64..5.0,
            b in 0.0f64..5.0,
            sigma in 0.05f64..3.0,
            t in 0.001f64..20.0,
        ) {
            let p = CirParams::new(x0, a, b, sigma).unwrap();
            let m1 = p.moment(t, 1).unwrap();
            let m2 = p.moment(t, 2).unwrap();
            let m3 = p.moment(t, 3).unwrap();
            prop_assert!(m2 >= m1 * m1 * (1.0 - 1e-12));
            // Lyapunov: E X^3 >= (E X^2)^{3/2}
            prop_assert!(m3 >= m2.powf(1.5) * (1.0 - 1e-10));
        }
    }
}
