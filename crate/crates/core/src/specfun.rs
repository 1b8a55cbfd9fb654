//! Scalar special functions: log-gamma, the regularized lower incomplete
//! gamma function, the modified Bessel function of the first kind and the
//! confluent hypergeometric function `1F1`.
//!
//! Functions that can overflow return a [`SpecialValue`], which carries the
//! result either directly or as its natural logarithm.

use std::f64::consts::PI;
use std::sync::OnceLock;

use crate::error::{domain, finite, Error, Result};

/// Euler–Mascheroni constant.
const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Above this argument `bessel_i` switches from the power series to the
/// large-argument expansions and returns log-scaled values.
pub const BESSEL_SERIES_SWITCH: f64 = 30.0;

/// Relative size of the last retained term in the `1F1` series.
const KUMMER_TERM_TOL: f64 = 1e-16;

/// A possibly log-scaled positive-or-signed real value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpecialValue {
    /// The value itself, or `ln(value)` when `log_scale` is set.
    pub value: f64,
    /// Set when `value` holds the natural logarithm of a positive result.
    pub log_scale: bool,
}

impl SpecialValue {
    pub fn linear(value: f64) -> Self {
        Self {
            value,
            log_scale: false,
        }
    }

    pub fn from_ln(ln_value: f64) -> Self {
        Self {
            value: ln_value,
            log_scale: true,
        }
    }

    /// Natural logarithm of the value. Returns NaN for negative linear values
    /// and `-inf` for zero.
    pub fn ln(&self) -> f64 {
        if self.log_scale {
            self.value
        } else {
            self.value.ln()
        }
    }

    /// The value on the linear scale; may overflow to `inf` or underflow to 0.
    pub fn exp(&self) -> f64 {
        if self.log_scale {
            self.value.exp()
        } else {
            self.value
        }
    }

    /// Switches to the linear scale when the value is representable there.
    pub fn normalized(self) -> Self {
        if self.log_scale && self.value.abs() < 700.0 {
            Self::linear(self.value.exp())
        } else {
            self
        }
    }
}

// ---------------------------------------------------------------------------
// Gamma
// ---------------------------------------------------------------------------

/// `zeta(k) - 1` for k = 2..=ZETA_TERMS+1, via Euler–Maclaurin summation.
fn zeta_minus_one() -> &'static [f64] {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        // B_2j / (2j)!
        const B_OVER_FACT: [f64; 6] = [
            1.0 / 12.0,
            -1.0 / 720.0,
            1.0 / 30_240.0,
            -1.0 / 1_209_600.0,
            1.0 / 47_900_160.0,
            -691.0 / 1_307_674_368_000.0,
        ];
        let n_cut = 16.0_f64;
        (2..=41)
            .map(|k| {
                let kf = k as f64;
                let mut s: f64 = (2..16).map(|n| (n as f64).powf(-kf)).sum();
                s += n_cut.powf(1.0 - kf) / (kf - 1.0) + 0.5 * n_cut.powf(-kf);
                let mut power = n_cut.powf(-kf - 1.0);
                for (j, c) in B_OVER_FACT.iter().enumerate() {
                    if j > 0 {
                        power /= n_cut * n_cut;
                    }
                    s += c * rising_factorial(kf, 2 * j + 1) * power;
                }
                s
            })
            .collect()
    })
}

fn rising_factorial(x: f64, n: usize) -> f64 {
    (0..n).fold(1.0, |acc, i| acc * (x + i as f64))
}

/// `ln Gamma(1 + z)` for `|z| <= 0.5`.
fn ln_gamma_1p(z: f64) -> f64 {
    let zeta = zeta_minus_one();
    let mut sum = 0.0;
    // (-1)^k z^k, advanced before use
    let mut zk = -z;
    for (i, zm1) in zeta.iter().enumerate() {
        let k = (i + 2) as f64;
        zk *= -z;
        let term = zm1 * zk / k;
        sum += term;
        if term.abs() < 1e-18 * sum.abs().max(1e-300) {
            break;
        }
    }
    (z - z.ln_1p()) - EULER_GAMMA * z + sum
}

/// Natural logarithm of the Gamma function for `x > 0`.
pub fn ln_gamma(x: f64) -> Result<f64> {
    finite("x", x)?;
    if x <= 0.0 {
        return Err(domain(format!("ln_gamma requires x > 0, got {x}")));
    }
    Ok(ln_gamma_unchecked(x))
}

pub(crate) fn ln_gamma_unchecked(x: f64) -> f64 {
    if x < 0.5 {
        ln_gamma_1p(x) - x.ln()
    } else if x <= 1.5 {
        ln_gamma_1p(x - 1.0)
    } else if x <= 2.5 {
        (x - 2.0).ln_1p() + ln_gamma_1p(x - 2.0)
    } else if x < 10.0 {
        let n = (10.0 - x).ceil() as usize;
        let shifted = x + n as f64;
        let log_prod: f64 = (0..n).map(|i| (x + i as f64).ln()).sum();
        ln_gamma_stirling(shifted) - log_prod
    } else {
        ln_gamma_stirling(x)
    }
}

/// Stirling series, accurate to machine precision for `x >= 10`.
fn ln_gamma_stirling(x: f64) -> f64 {
    const C: [f64; 8] = [
        1.0 / 12.0,
        -1.0 / 360.0,
        1.0 / 1260.0,
        -1.0 / 1680.0,
        1.0 / 1188.0,
        -691.0 / 360_360.0,
        1.0 / 156.0,
        -3617.0 / 122_400.0,
    ];
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let mut corr = 0.0;
    let mut p = inv;
    for c in C {
        corr += c * p;
        p *= inv2;
    }
    (x - 0.5) * x.ln() - x + 0.5 * (2.0 * PI).ln() + corr
}

/// Regularized lower incomplete gamma function `P(s, x) = gamma(s, x) / Gamma(s)`.
pub fn reg_lower_inc_gamma(s: f64, x: f64) -> Result<f64> {
    finite("s", s)?;
    if x.is_nan() {
        return Err(domain("x must not be NaN"));
    }
    if s <= 0.0 {
        return Err(domain(format!("incomplete gamma requires s > 0, got {s}")));
    }
    if x < 0.0 {
        return Err(domain(format!("incomplete gamma requires x >= 0, got {x}")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x.is_infinite() {
        return Ok(1.0);
    }
    let log_prefactor = -x + s * x.ln() - ln_gamma_unchecked(s);
    let p = if x < s + 1.0 {
        let mut term = 1.0 / s;
        let mut sum = term;
        let mut denom = s;
        for _ in 0..10_000 {
            denom += 1.0;
            term *= x / denom;
            sum += term;
            if term < sum * 1e-17 {
                break;
            }
        }
        sum * log_prefactor.exp()
    } else {
        // Modified Lentz evaluation of the continued fraction for Q(s, x).
        const TINY: f64 = 1e-300;
        let mut b = x + 1.0 - s;
        let mut c = 1.0 / TINY;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..10_000 {
            let an = -(i as f64) * (i as f64 - s);
            b += 2.0;
            d = an * d + b;
            if d.abs() < TINY {
                d = TINY;
            }
            c = b + an / c;
            if c.abs() < TINY {
                c = TINY;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        1.0 - log_prefactor.exp() * h
    };
    Ok(p.clamp(0.0, 1.0))
}

// ---------------------------------------------------------------------------
// Modified Bessel function of the first kind
// ---------------------------------------------------------------------------

/// Modified Bessel function of the first kind `I_nu(x)` for `nu > -1`, `x >= 0`.
///
/// Uses the defining power series up to [`BESSEL_SERIES_SWITCH`] and returns a
/// linear value there; above it the result is log-scaled and comes from the
/// Hankel expansion when `nu^2 <= x/2` and the Debye uniform expansion otherwise.
pub fn bessel_i(nu: f64, x: f64) -> Result<SpecialValue> {
    finite("nu", nu)?;
    finite("x", x)?;
    if nu <= -1.0 {
        return Err(domain(format!("bessel_i requires nu > -1, got {nu}")));
    }
    if x < 0.0 {
        return Err(domain(format!("bessel_i requires x >= 0, got {x}")));
    }
    if x == 0.0 {
        return if nu == 0.0 {
            Ok(SpecialValue::linear(1.0))
        } else if nu > 0.0 {
            Ok(SpecialValue::linear(0.0))
        } else {
            Err(domain(format!("I_nu(0) diverges for nu = {nu} < 0")))
        };
    }
    if x <= BESSEL_SERIES_SWITCH {
        Ok(bessel_i_series(nu, x))
    } else if nu * nu <= 0.5 * x {
        Ok(SpecialValue::from_ln(ln_bessel_i_hankel(nu, x)))
    } else {
        Ok(SpecialValue::from_ln(ln_bessel_i_debye(nu, x)))
    }
}

/// Power series `sum (x/2)^(2j+nu) / (j! Gamma(j+1+nu))`.
fn bessel_i_series(nu: f64, x: f64) -> SpecialValue {
    let q = 0.25 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut j = 0.0;
    loop {
        j += 1.0;
        term *= q / (j * (nu + j));
        sum += term;
        if term < 1e-17 * sum && j * j > q {
            break;
        }
    }
    let ln_pref = nu * (0.5 * x).ln() - ln_gamma_unchecked(nu + 1.0);
    if ln_pref.abs() < 700.0 {
        SpecialValue::linear(ln_pref.exp() * sum)
    } else {
        SpecialValue::from_ln(ln_pref + sum.ln())
    }
}

fn ln_bessel_i_hankel(nu: f64, x: f64) -> f64 {
    let mu = 4.0 * nu * nu;
    let mut term = 1.0_f64;
    let mut sum = 1.0;
    for k in 1..60 {
        let odd = (2 * k - 1) as f64;
        let next = -term * (mu - odd * odd) / (k as f64 * 8.0 * x);
        if next.abs() > term.abs() {
            break;
        }
        term = next;
        sum += term;
        if term.abs() < 1e-17 * sum.abs() {
            break;
        }
    }
    x - 0.5 * (2.0 * PI * x).ln() + sum.ln()
}

const DEBYE_ORDER: usize = 14;

/// Coefficients of the Debye polynomials `u_k(t)`, lowest degree first.
fn debye_polynomials() -> &'static [Vec<f64>] {
    static POLYS: OnceLock<Vec<Vec<f64>>> = OnceLock::new();
    POLYS.get_or_init(|| {
        let mut polys: Vec<Vec<f64>> = vec![vec![1.0]];
        for k in 0..DEBYE_ORDER {
            let u = &polys[k];
            // u_{k+1} = t^2 (1 - t^2) u_k' / 2 + (1/8) int_0^t (1 - 5 s^2) u_k(s) ds
            let mut next = vec![0.0; u.len() + 3];
            for (i, &c) in u.iter().enumerate().skip(1) {
                let d = c * i as f64;
                next[i + 1] += 0.5 * d;
                next[i + 3] -= 0.5 * d;
            }
            for (i, &c) in u.iter().enumerate() {
                next[i + 1] += c / (8.0 * (i + 1) as f64);
                next[i + 3] -= 5.0 * c / (8.0 * (i + 3) as f64);
            }
            polys.push(next);
        }
        polys
    })
}

fn eval_poly(coeffs: &[f64], t: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * t + c)
}

fn ln_bessel_i_debye(nu: f64, x: f64) -> f64 {
    let z = x / nu;
    let root = (1.0 + z * z).sqrt();
    let t = 1.0 / root;
    let eta = root + (z / (1.0 + root)).ln();
    let mut sum = 1.0;
    // Largest magnitude among the two previous terms; a single term can be
    // tiny when u_k(t) is close to a root, so one step of growth is not
    // enough to declare divergence.
    let mut recent = [f64::INFINITY, f64::INFINITY];
    let mut nu_pow = 1.0;
    for u in debye_polynomials().iter().skip(1) {
        nu_pow *= nu;
        let term = eval_poly(u, t) / nu_pow;
        if term.abs() > recent[0].max(recent[1]) {
            break;
        }
        sum += term;
        recent = [recent[1], term.abs()];
        if recent[0].max(recent[1]) < 1e-17 {
            break;
        }
    }
    nu * eta - 0.5 * (2.0 * PI * nu).ln() - 0.5 * root.ln() + sum.ln()
}

// ---------------------------------------------------------------------------
// Confluent hypergeometric function
// ---------------------------------------------------------------------------

fn is_nonpositive_integer(v: f64) -> bool {
    v <= 0.0 && v.fract() == 0.0
}

/// Kummer's function `1F1(a; c; x)`.
///
/// Negative arguments go through Kummer's transformation
/// `1F1(a; c; -x) = e^{-x} 1F1(c - a; c; x)`.
pub fn kummer_1f1(a: f64, c: f64, x: f64) -> Result<SpecialValue> {
    finite("a", a)?;
    finite("c", c)?;
    finite("x", x)?;
    if is_nonpositive_integer(c) {
        return Err(domain(format!(
            "1F1 is undefined for c = {c} (zero or negative integer)"
        )));
    }
    if x == 0.0 || a == 0.0 {
        return Ok(SpecialValue::linear(1.0));
    }
    if x < 0.0 {
        let inner = kummer_nonneg(c - a, c, -x)?;
        return if inner.log_scale {
            Ok(SpecialValue::from_ln(inner.value + x).normalized())
        } else {
            let ln_scale = x;
            let v = inner.value * ln_scale.exp();
            Ok(SpecialValue::linear(v))
        };
    }
    kummer_nonneg(a, c, x)
}

fn kummer_nonneg(a: f64, c: f64, x: f64) -> Result<SpecialValue> {
    if x == 0.0 || a == 0.0 {
        return Ok(SpecialValue::linear(1.0));
    }
    if x > 50.0 && !is_nonpositive_integer(a) {
        if let Some(ln) = ln_kummer_asymptotic(a, c, x) {
            return Ok(SpecialValue::from_ln(ln).normalized());
        }
    }
    kummer_series(a, c, x)
}

fn kummer_series(a: f64, c: f64, x: f64) -> Result<SpecialValue> {
    const RESCALE: f64 = 1e280;
    let mut term = 1.0_f64;
    let mut sum = 1.0_f64;
    let mut ln_offset = 0.0;
    let mut j = 0.0_f64;
    let max_terms = 1_000_000.0 + 10.0 * x;
    loop {
        let ratio = (a + j) / (c + j) * x / (j + 1.0);
        term *= ratio;
        sum += term;
        j += 1.0;
        if term == 0.0 {
            break;
        }
        if term.abs() <= KUMMER_TERM_TOL * sum.abs() && ratio.abs() < 1.0 {
            break;
        }
        if sum.abs() > RESCALE {
            sum /= RESCALE;
            term /= RESCALE;
            ln_offset += RESCALE.ln();
        }
        if j > max_terms {
            return Err(domain(format!(
                "1F1({a}; {c}; {x}) series failed to converge"
            )));
        }
    }
    if ln_offset == 0.0 {
        Ok(SpecialValue::linear(sum))
    } else if sum > 0.0 {
        Ok(SpecialValue::from_ln(ln_offset + sum.ln()))
    } else {
        Err(Error::Domain(format!(
            "1F1({a}; {c}; {x}) is negative and overflows"
        )))
    }
}

/// Large-x expansion `Gamma(c)/Gamma(a) e^x x^(a-c) sum (c-a)_k (1-a)_k / (k! x^k)`.
/// Returns `None` when the expansion cannot reach full precision or when the
/// leading factor is not positive.
fn ln_kummer_asymptotic(a: f64, c: f64, x: f64) -> Option<f64> {
    if a <= 0.0 || c <= 0.0 {
        return None;
    }
    let mut term = 1.0_f64;
    let mut sum = 1.0;
    for k in 0..200 {
        let kf = k as f64;
        let next = term * (c - a + kf) * (1.0 - a + kf) / ((kf + 1.0) * x);
        if next.abs() > term.abs() && k > 0 {
            return None;
        }
        term = next;
        sum += term;
        if term.abs() < 1e-17 * sum.abs() {
            if sum <= 0.0 {
                return None;
            }
            return Some(
                ln_gamma_unchecked(c) - ln_gamma_unchecked(a) + x + (a - c) * x.ln() + sum.ln(),
            );
        }
    }
    None
}
