//! Occupancy averages `(1/t) int_0^t P(|xi_s| < N) ds`, the CIR occupancy
//! limit, and the marginal law of the weak limit of the rescaled smoothed
//! Bessel process.

use std::io::Write;

use serde::Serialize;

use crate::bounds::EstimateWithError;
use crate::error::{domain, finite, Error, Result};
use crate::model::CirParams;
use crate::simulate::PathEnsemble;
use crate::specfun::reg_lower_inc_gamma;

/// Running occupancy average at selected times, with the experiment recorded.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OccupancyCurve {
    pub times: Vec<f64>,
    pub value: Vec<EstimateWithError>,
    pub level: f64,
    pub params_tag: String,
    pub seed: u64,
}

impl OccupancyCurve {
    /// Columns `time,occupancy,stderr,level,seed,params`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "time,occupancy,stderr,level,seed,params")?;
        for (t, v) in self.times.iter().zip(&self.value) {
            writeln!(
                w,
                "{:.16e},{:.16e},{:.16e},{:.16e},{},{}",
                t, v.mean, v.stderr, self.level, self.seed, self.params_tag
            )?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }
}

/// For each requested time `t` (a grid time), the Monte Carlo mean over paths
/// of the trapezoid average `(1/t) int_0^t 1{|x_s| < N} ds`.
pub fn occupancy_average(e: &PathEnsemble, level: f64, times: &[f64]) -> Result<OccupancyCurve> {
    finite("N", level)?;
    if level <= 0.0 {
        return Err(domain(format!("N must be positive, got {level}")));
    }
    let idx = times
        .iter()
        .map(|&t| {
            if t <= 0.0 {
                return Err(Error::Grid(format!("occupancy times must be positive, got {t}")));
            }
            e.grid
                .index_of(t)
                .ok_or_else(|| Error::Grid(format!("{t} is not a grid time")))
        })
        .collect::<Result<Vec<_>>>()?;
    let grid = e.times();
    // cumulative occupation time of each path at every grid point
    let per_path: Vec<Vec<f64>> = e
        .paths()
        .map(|x| {
            let mut acc = 0.0;
            let mut out = Vec::with_capacity(x.len());
            out.push(0.0);
            for k in 1..x.len() {
                let i0 = f64::from(u8::from(x[k - 1].abs() < level));
                let i1 = f64::from(u8::from(x[k].abs() < level));
                acc += 0.5 * (grid[k] - grid[k - 1]) * (i0 + i1);
                out.push(acc);
            }
            out
        })
        .collect();
    let value = idx
        .iter()
        .map(|&k| EstimateWithError::from_samples(per_path.iter().map(|c| c[k] / grid[k])))
        .collect::<Result<Vec<_>>>()?;
    Ok(OccupancyCurve {
        times: idx.iter().map(|&k| grid[k]).collect(),
        value,
        level,
        params_tag: e.params_tag.clone(),
        seed: e.seed,
    })
}

/// `gamma(2a/sigma^2, 2bN/sigma^2) / Gamma(2a/sigma^2)`, the long-run
/// occupancy of `[0, N)` by the CIR process.
pub fn cir_occupancy_limit(p: &CirParams, level: f64) -> Result<f64> {
    if p.is_bessel() {
        return Err(Error::NoStationaryLaw);
    }
    finite("N", level)?;
    if level < 0.0 {
        return Err(domain(format!("N must be nonnegative, got {level}")));
    }
    let s2 = p.sigma * p.sigma;
    reg_lower_inc_gamma(2.0 * p.a / s2, 2.0 * p.b * level / s2)
}

/// CDF at `x` of `|Y_t|` where `Y_t^2` is `Gamma(3/2, scale 2t)`, the marginal
/// of the Bessel process solving `Y_t^2 = 3t + 2 int_0^t Y dW`.
pub fn weak_limit_reference_cdf(t: f64, x: f64) -> Result<f64> {
    weak_limit_cdf_for_drift(1.0, t, x)
}

/// Marginal CDF of the limit for a general drift constant `c`: `Y_t^2` is
/// `Gamma((2c+1)/2, scale 2t)`, i.e. `Y^2 = (2c+1) t + 2 int Y dW`.
pub fn weak_limit_cdf_for_drift(c: f64, t: f64, x: f64) -> Result<f64> {
    finite("c", c)?;
    finite("t", t)?;
    if c <= 0.0 {
        return Err(domain(format!("c must be positive, got {c}")));
    }
    if t <= 0.0 {
        return Err(domain(format!("t must be positive, got {t}")));
    }
    if x.is_nan() {
        return Err(domain("x must not be NaN"));
    }
    if x <= 0.0 {
        return Ok(0.0);
    }
    reg_lower_inc_gamma(c + 0.5, x * x / (2.0 * t))
}

/// Kolmogorov-Smirnov distance between the empirical CDF of `samples` and `cdf`.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    let n = samples.len();
    if n < 10 {
        return Err(domain(format!("need at least 10 samples, got {n}")));
    }
    if samples.iter().any(|v| v.is_nan()) {
        return Err(domain("samples must not contain NaN"));
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let nf = n as f64;
    let mut d = 0.0f64;
    for (i, &x) in s.iter().enumerate() {
        let f = cdf(x);
        d = d.max(f - i as f64 / nf).max((i + 1) as f64 / nf - f);
    }
    Ok(d)
}

/// The 1% critical value `1.63 / sqrt(n)` of the one-sample KS statistic.
pub fn ks_critical_1pct(n: usize) -> f64 {
    1.63 / (n as f64).sqrt()
}

/// Result of a KS comparison, with the experiment recorded.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KsReport {
    pub statistic: f64,
    pub n: usize,
    pub critical_1pct: f64,
    pub params_tag: String,
    pub seed: u64,
}

impl KsReport {
    pub fn new(samples: &[f64], cdf: impl Fn(f64) -> f64, params_tag: String, seed: u64) -> Result<Self> {
        Ok(Self {
            statistic: ks_statistic(samples, cdf)?,
            n: samples.len(),
            critical_1pct: ks_critical_1pct(samples.len()),
            params_tag,
            seed,
        })
    }

    /// Columns `statistic,n,critical_1pct,seed,params`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "statistic,n,critical_1pct,seed,params")?;
        writeln!(
            w,
            "{:.16e},{},{:.16e},{},{}",
            self.statistic, self.n, self.critical_1pct, self.seed, self.params_tag
        )?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::{simulate_exact, TimeGrid};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn occupancy_limit_examples() {
        let p = CirParams::new(1.0, 1.0, 1.0, 2f64.sqrt()).unwrap();
        for n in [0.1, 1.0, 3.0] {
            let v = cir_occupancy_limit(&p, n).unwrap();
            assert!((v - (1.0 - (-n).exp())).abs() < 1e-14);
        }
        assert_eq!(cir_occupancy_limit(&p, 0.0).unwrap(), 0.0);
        assert!((cir_occupancy_limit(&p, 1e3).unwrap() - 1.0).abs() < 1e-15);
        assert!(cir_occupancy_limit(&p.with_b(0.0).unwrap(), 1.0).is_err());
    }

    #[test]
    fn reference_cdf_examples() {
        assert_eq!(weak_limit_reference_cdf(1.0, 0.0).unwrap(), 0.0);
        assert!(weak_limit_reference_cdf(0.0, 1.0).is_err());
        // median of Gamma(3/2, 1)
        let med = 1.182_986_942_187_669_1_f64;
        for t in [0.5, 1.0, 4.0] {
            let x = (2.0 * t * med).sqrt();
            assert!((weak_limit_reference_cdf(t, x).unwrap() - 0.5).abs() < 1e-14);
        }
        // E Y_t^2 = 3t through the tail integral int_0^inf 2x (1 - F(x)) dx
        for t in [1.0, 2.5] {
            let m = crate::numeric::integrate_to_infinity(
                |x| 2.0 * x * (1.0 - weak_limit_reference_cdf(t, x).unwrap()),
                0.0,
                1e-12,
                1e-12,
            )
            .unwrap();
            assert!((m - 3.0 * t).abs() < 1e-8);
        }
    }

    #[test]
    fn ks_calibration() {
        // exponential samples by inversion
        let cdf = |x: f64| if x <= 0.0 { 0.0 } else { 1.0 - (-x).exp() };
        let n = 500;
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut below = 0;
        for _ in 0..100 {
            let s: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
            if ks_statistic(&s, cdf).unwrap() < ks_critical_1pct(n) {
                below += 1;
            }
        }
        assert!(below >= 95, "{below}");
        assert!(ks_statistic(&[1.0; 20], cdf).unwrap() >= 0.5);
        assert!(ks_statistic(&[1.0; 9], cdf).is_err());
    }

    #[test]
    fn occupancy_of_unbounded_level_is_one() {
        let p = CirParams::new(1.0, 2.0, 1.0, 1.0).unwrap();
        let g = TimeGrid::uniform(10.0, 100).unwrap();
        let e = simulate_exact(&p, &g, 50, 1).unwrap();
        let c = occupancy_average(&e, 1e12, &[1.0, 5.0, 10.0]).unwrap();
        assert!(c.value.iter().all(|v| v.mean == 1.0 && v.stderr == 0.0));
        assert!(occupancy_average(&e, 0.0, &[1.0]).is_err());
        assert!(occupancy_average(&e, 1.0, &[1.05]).is_err());
        assert!(occupancy_average(&e, 1.0, &[0.0]).is_err());
        // monotone in N
        let lo = occupancy_average(&e, 1.0, &[5.0, 10.0]).unwrap();
        let hi = occupancy_average(&e, 2.0, &[5.0, 10.0]).unwrap();
        for (l, h) in lo.value.iter().zip(&hi.value) {
            assert!(l.mean <= h.mean);
        }
        let mut buf = Vec::new();
        hi.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("time,occupancy,stderr,level,seed,params\n"));
        assert!(text.lines().nth(1).unwrap().ends_with(",1,cir x0=1 a=2 b=1 sigma=1"));
        assert!(hi.to_json().unwrap().contains("\"seed\": 1"));
    }

    #[test]
    fn ks_report_output() {
        let s: Vec<f64> = (1..=20).map(|k| k as f64 / 21.0).collect();
        let r = KsReport::new(&s, |x| x.clamp(0.0, 1.0), "uniform".into(), 3).unwrap();
        assert!(r.statistic < 0.06);
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().lines().nth(1).unwrap().ends_with(",3,uniform"));
    }
}
