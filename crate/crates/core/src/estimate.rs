//! Diffusion estimation by realized quadratic variation, the maximum
//! likelihood drift estimator for the squared Bessel process, and ergodic
//! time averages of `1/X`.

use std::io::BufRead;

use serde::Serialize;

use crate::error::{domain, finite, Error, Result};
use crate::numeric::trapezoid;
use crate::simulate::TimeGrid;

/// Observed values on a uniform time grid; all values strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteTrajectory {
    grid: TimeGrid,
    values: Vec<f64>,
}

impl DiscreteTrajectory {
    pub fn new(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        if grid.uniform_step().is_none() {
            return Err(Error::Grid("trajectories must be observed on a uniform grid".into()));
        }
        if grid.len() != values.len() {
            return Err(domain(format!(
                "{} times but {} values",
                grid.len(),
                values.len()
            )));
        }
        if let Some((k, v)) = values.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v > 0.0)) {
            return Err(domain(format!(
                "values must be finite and positive; value {k} is {v}"
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn t_end(&self) -> f64 {
        self.grid.t_end()
    }

    /// Number of increments.
    pub fn n(&self) -> usize {
        self.values.len() - 1
    }

    pub fn step(&self) -> f64 {
        self.grid.uniform_step().expect("checked on construction")
    }

    /// The observations on `[0, t]`, `t` a grid time.
    pub fn truncate_at(&self, t: f64) -> Result<Self> {
        let k = self
            .grid
            .index_of(t)
            .ok_or_else(|| Error::Grid(format!("{t} is not a grid time")))?;
        Ok(Self {
            grid: self.grid.prefix(k + 1)?,
            values: self.values[..=k].to_vec(),
        })
    }

    /// Reads two comma-separated columns under the header `t,value`.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty trajectory file".into()))??;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols != ["t", "value"] {
            return Err(Error::Parse(format!(
                "expected header `t,value`, got `{header}`"
            )));
        }
        let mut t = Vec::new();
        let mut v = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut it = line.split(',');
            let (Some(a), Some(b), None) = (it.next(), it.next(), it.next()) else {
                return Err(Error::Parse(format!("line {}: expected two fields", i + 2)));
            };
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("line {}: {s:?}: {e}", i + 2)))
            };
            t.push(parse(a)?);
            v.push(parse(b)?);
        }
        Self::new(TimeGrid::from_times(t)?, v)
    }
}

/// `sum (Y_k - Y_{k-1})^2 / int_0^T Y ds`, the integral by the trapezoid rule.
pub fn sigma2_qv(traj: &DiscreteTrajectory) -> Result<f64> {
    let y = traj.values();
    let qv: f64 = y.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum();
    if qv == 0.0 {
        return Err(Error::Degenerate("constant trajectory has no quadratic variation".into()));
    }
    Ok(qv / trapezoid(traj.grid().times(), y))
}

fn check_sigma(sigma: f64) -> Result<()> {
    finite("sigma", sigma)?;
    if sigma <= 0.0 {
        return Err(domain(format!("sigma must be positive, got {sigma}")));
    }
    Ok(())
}

/// `theta_hat = 2 sum dZ_k / Z_{k-1} / (sigma sum dt / Z_{k-1}^2)`, `Z = sqrt(Y)`,
/// with left-endpoint sums.
pub fn mle_theta(traj: &DiscreteTrajectory, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    let dt = traj.step();
    let mut num = 0.0;
    let mut den = 0.0;
    let mut z_prev = traj.values()[0].sqrt();
    for &y in &traj.values()[1..] {
        let z = y.sqrt();
        num += (z - z_prev) / z_prev;
        den += dt / (z_prev * z_prev);
        z_prev = z;
    }
    if !(den > 0.0 && den.is_finite()) {
        return Err(Error::Degenerate(format!("denominator {den}")));
    }
    Ok(2.0 * num / (sigma * den))
}

/// `a_hat = sigma theta_hat + sigma^2 / 4`.
pub fn mle_a(traj: &DiscreteTrajectory, sigma: f64) -> Result<f64> {
    Ok(sigma * mle_theta(traj, sigma)? + 0.25 * sigma * sigma)
}

/// `(1/T) int_0^T dt / X_t` by the trapezoid rule.
pub fn ergodic_time_average_inverse(traj: &DiscreteTrajectory) -> Result<f64> {
    let inv: Vec<f64> = traj.values().iter().map(|v| 1.0 / v).collect();
    Ok(trapezoid(traj.grid().times(), &inv) / traj.t_end())
}

/// Summary written by the `estimate` command.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimationReport {
    pub sigma2: f64,
    pub theta: f64,
    pub a: f64,
    #[serde(rename = "T")]
    pub t: f64,
    pub n: usize,
}

/// Runs all estimators. With `sigma = None` the drift estimator uses the
/// quadratic-variation estimate of sigma.
pub fn estimate_all(traj: &DiscreteTrajectory, sigma: Option<f64>) -> Result<EstimationReport> {
    let sigma2 = sigma2_qv(traj)?;
    let s = sigma.unwrap_or_else(|| sigma2.sqrt());
    let theta = mle_theta(traj, s)?;
    Ok(EstimationReport {
        sigma2,
        theta,
        a: s * theta + 0.25 * s * s,
        t: traj.t_end(),
        n: traj.n(),
    })
}
