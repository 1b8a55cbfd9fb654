//! Time grids, reproducible random streams, exact transition samplers,
//! coupled full-truncation Euler paths and the smoothed Bessel SDE.

use std::io::{BufRead, Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};
use rayon::prelude::*;

use crate::error::{domain, finite, Error, Result};
use crate::model::{BesselSqParams, CirParams};

const UNIFORM_TOL: f64 = 1e-12;

/// Ordered observation times starting at 0.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    t: Vec<f64>,
    uniform_step: Option<f64>,
}

impl TimeGrid {
    /// Validates an explicit list of times and detects a uniform spacing.
    pub fn from_times(t: Vec<f64>) -> Result<Self> {
        if t.len() < 2 {
            return Err(Error::Grid("need at least two time points".into()));
        }
        if t[0] != 0.0 {
            return Err(Error::Grid(format!("grid must start at 0, got {}", t[0])));
        }
        for w in t.windows(2) {
            if !w[1].is_finite() || w[1] <= w[0] {
                return Err(Error::Grid(format!(
                    "times must be finite and strictly increasing ({} then {})",
                    w[0], w[1]
                )));
            }
        }
        let n = t.len() - 1;
        let h = t[n] / n as f64;
        let uniform = t
            .iter()
            .enumerate()
            .all(|(k, &tk)| (tk - k as f64 * h).abs() <= UNIFORM_TOL * tk.max(h));
        Ok(Self {
            t,
            uniform_step: uniform.then_some(h),
        })
    }

    /// `n_steps + 1` equally spaced points on `[0, t_end]`.
    pub fn uniform(t_end: f64, n_steps: usize) -> Result<Self> {
        finite("t_end", t_end)?;
        if t_end <= 0.0 || n_steps == 0 {
            return Err(Error::Grid("uniform grid needs t_end > 0 and n_steps >= 1".into()));
        }
        let t = (0..=n_steps)
            .map(|k| t_end * k as f64 / n_steps as f64)
            .collect();
        Ok(Self {
            t,
            uniform_step: Some(t_end / n_steps as f64),
        })
    }

    /// `0` followed by `n` geometrically spaced points from `t_first` to `t_end`.
    pub fn geometric(t_first: f64, t_end: f64, n: usize) -> Result<Self> {
        finite("t_first", t_first)?;
        finite("t_end", t_end)?;
        if !(t_first > 0.0 && t_end > t_first) || n < 2 {
            return Err(Error::Grid(
                "geometric grid needs 0 < t_first < t_end and n >= 2".into(),
            ));
        }
        let ratio = (t_end / t_first).ln() / (n - 1) as f64;
        let mut t = Vec::with_capacity(n + 1);
        t.push(0.0);
        for k in 0..n {
            t.push(if k + 1 == n {
                t_end
            } else {
                t_first * (ratio * k as f64).exp()
            });
        }
        Self::from_times(t)
    }

    pub fn times(&self) -> &[f64] {
        &self.t
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn t_end(&self) -> f64 {
        self.t[self.t.len() - 1]
    }

    pub fn uniform_step(&self) -> Option<f64> {
        self.uniform_step
    }

    /// Index of the grid point equal to `t` up to a relative `1e-12`.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let tol = UNIFORM_TOL * t.abs().max(self.t[1]);
        let k = self.t.partition_point(|&s| s < t - tol);
        (k < self.t.len() && (self.t[k] - t).abs() <= tol).then_some(k)
    }

    /// The first `n` points as a grid of their own.
    pub fn prefix(&self, n: usize) -> Result<Self> {
        if n < 2 || n > self.t.len() {
            return Err(Error::Grid(format!("prefix length {n} out of range")));
        }
        Ok(Self {
            t: self.t[..n].to_vec(),
            uniform_step: self.uniform_step,
        })
    }
}

/// Identifies one reproducible random stream: `seed` selects the experiment,
/// `stream_id` the path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        r.set_stream(self.stream_id);
        r
    }
}

/// Paths sampled on a common grid, stored row-major (`n_paths x n_times`).
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    pub grid: TimeGrid,
    values: Vec<f64>,
    n_paths: usize,
    pub params_tag: String,
    pub seed: u64,
}

const MAGIC: &[u8; 8] = b"CIRLABPE";
const BINARY_VERSION: u32 = 1;

impl PathEnsemble {
    pub fn new(grid: TimeGrid, n_paths: usize, values: Vec<f64>, params_tag: String, seed: u64) -> Result<Self> {
        if n_paths == 0 {
            return Err(domain("an ensemble needs at least one path"));
        }
        if values.len() != n_paths * grid.len() {
            return Err(domain(format!(
                "expected {} values for {} paths on {} times, got {}",
                n_paths * grid.len(),
                n_paths,
                grid.len(),
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(domain(format!("non-finite path value {v}")));
        }
        Ok(Self {
            grid,
            values,
            n_paths,
            params_tag,
            seed,
        })
    }

    fn from_rows(grid: TimeGrid, rows: Vec<Vec<f64>>, params_tag: String, seed: u64) -> Result<Self> {
        let n = rows.len();
        Self::new(grid, n, rows.concat(), params_tag, seed)
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn n_times(&self) -> usize {
        self.grid.len()
    }

    pub fn times(&self) -> &[f64] {
        self.grid.times()
    }

    pub fn path(&self, i: usize) -> &[f64] {
        let m = self.n_times();
        &self.values[i * m..(i + 1) * m]
    }

    pub fn paths(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.n_times())
    }

    /// Values of all paths at time index `j`.
    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        self.paths().map(move |p| p[j])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Header row of times, then one row per path, 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write_row(&mut w, self.times())?;
        for p in self.paths() {
            write_row(&mut w, p)?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R, params_tag: String, seed: u64) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty path file".into()))??;
        let grid = TimeGrid::from_times(parse_row(&header)?)?;
        let mut rows = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row = parse_row(&line)?;
            if row.len() != grid.len() {
                return Err(Error::Parse(format!(
                    "row {} has {} fields, header has {}",
                    rows.len() + 1,
                    row.len(),
                    grid.len()
                )));
            }
            rows.push(row);
        }
        Self::from_rows(grid, rows, params_tag, seed)
    }

    /// Binary layout, all little-endian: magic `CIRLABPE`, `u32` version,
    /// `u64` n_paths, `u64` n_times, `u64` seed, `u64` tag length and UTF-8
    /// tag bytes, the times as `f64`, then the `f64` values row-major.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&BINARY_VERSION.to_le_bytes())?;
        w.write_all(&(self.n_paths as u64).to_le_bytes())?;
        w.write_all(&(self.n_times() as u64).to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&(self.params_tag.len() as u64).to_le_bytes())?;
        w.write_all(self.params_tag.as_bytes())?;
        for v in self.times().iter().chain(&self.values) {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Parse("not a path-ensemble file".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != BINARY_VERSION {
            return Err(Error::Parse(format!("unsupported version {version}")));
        }
        let read_u64 = |r: &mut R| -> Result<u64> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            Ok(u64::from_le_bytes(b))
        };
        let n_paths = read_u64(&mut r)? as usize;
        let n_times = read_u64(&mut r)? as usize;
        let seed = read_u64(&mut r)?;
        let tag_len = read_u64(&mut r)? as usize;
        let mut tag = vec![0u8; tag_len];
        r.read_exact(&mut tag)?;
        let tag = String::from_utf8(tag).map_err(|e| Error::Parse(e.to_string()))?;
        let mut read_f64s = |n: usize| -> Result<Vec<f64>> {
            let mut buf = vec![0u8; n * 8];
            r.read_exact(&mut buf)?;
            Ok(buf
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect())
        };
        let times = read_f64s(n_times)?;
        let values = read_f64s(n_paths * n_times)?;
        Self::new(TimeGrid::from_times(times)?, n_paths, values, tag, seed)
    }
}

pub(crate) fn write_row<W: Write>(w: &mut W, row: &[f64]) -> Result<()> {
    let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
    writeln!(w, "{}", line.join(","))?;
    Ok(())
}

fn parse_row(line: &str) -> Result<Vec<f64>> {
    line.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("{s:?}: {e}")))
        })
        .collect()
}

/// Precomputed one-step exact law: `Gamma(shape0 + P, scale)` with
/// `P ~ Poisson(x * decay / scale)`.
#[derive(Debug, Clone, Copy)]
struct ExactStep {
    shape0: f64,
    scale: f64,
    decay: f64,
}

impl ExactStep {
    fn cir(p: &CirParams, dt: f64) -> Self {
        Self {
            shape0: 2.0 * p.a / (p.sigma * p.sigma),
            scale: p.scale(dt),
            decay: (-p.b * dt).exp(),
        }
    }

    fn sample<R: Rng + ?Sized>(&self, x: f64, rng: &mut R) -> Result<f64> {
        let lambda = x * self.decay / self.scale;
        let k = if lambda > 0.0 {
            Poisson::new(lambda)
                .map_err(|e| domain(format!("Poisson mean {lambda}: {e}")))?
                .sample(rng)
        } else {
            0.0
        };
        let g = Gamma::new(self.shape0 + k, self.scale).map_err(|e| domain(e.to_string()))?;
        Ok(g.sample(rng))
    }
}

fn check_step(x_from: f64, dt: f64) -> Result<()> {
    finite("x_from", x_from)?;
    finite("dt", dt)?;
    if x_from < 0.0 {
        return Err(domain(format!("x_from must be nonnegative, got {x_from}")));
    }
    if dt <= 0.0 {
        return Err(domain(format!("dt must be positive, got {dt}")));
    }
    Ok(())
}

/// One draw from the CIR transition law over `dt` started at `x_from`.
pub fn cir_exact_transition<R: Rng + ?Sized>(p: &CirParams, x_from: f64, dt: f64, rng: &mut R) -> Result<f64> {
    if p.is_bessel() {
        return Err(Error::RedirectToBessel);
    }
    check_step(x_from, dt)?;
    ExactStep::cir(p, dt).sample(x_from, rng)
}

/// One draw from the squared Bessel transition law over `dt` started at `y_from`.
pub fn bessel_sq_exact_transition<R: Rng + ?Sized>(
    p: &BesselSqParams,
    y_from: f64,
    dt: f64,
    rng: &mut R,
) -> Result<f64> {
    check_step(y_from, dt)?;
    ExactStep::cir(&p.as_cir(), dt).sample(y_from, rng)
}

/// A single exact path on `grid`, drawn from stream `(seed, stream_id)`.
/// Works for both `b > 0` and `b = 0`.
pub fn simulate_exact_path(p: &CirParams, grid: &TimeGrid, stream: RngStream) -> Result<Vec<f64>> {
    let mut rng = stream.rng();
    let t = grid.times();
    let mut out = Vec::with_capacity(t.len());
    out.push(p.x0);
    let uniform = grid.uniform_step().map(|h| ExactStep::cir(p, h));
    let mut x = p.x0;
    for w in t.windows(2) {
        let step = uniform.unwrap_or_else(|| ExactStep::cir(p, w[1] - w[0]));
        x = step.sample(x, &mut rng)?;
        out.push(x);
    }
    Ok(out)
}

/// `n_paths` exact paths; path `i` uses stream `(seed, i)`.
pub fn simulate_exact(p: &CirParams, grid: &TimeGrid, n_paths: usize, seed: u64) -> Result<PathEnsemble> {
    let rows = (0..n_paths)
        .into_par_iter()
        .map(|i| simulate_exact_path(p, grid, RngStream::new(seed, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    PathEnsemble::from_rows(grid.clone(), rows, p.tag(), seed)
}

/// Full-truncation Euler for every model in `models`, all driven by the same
/// Brownian increments on each path. Each grid interval is split into
/// `substeps` Euler steps; only grid values are stored (as `max(state, 0)`).
pub fn simulate_coupled(
    models: &[CirParams],
    grid: &TimeGrid,
    substeps: usize,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<PathEnsemble>> {
    let h = grid
        .uniform_step()
        .ok_or_else(|| Error::Grid("coupled simulation needs a uniform grid".into()))?;
    let first = models.first().ok_or_else(|| domain("no models given"))?;
    if let Some(m) = models.iter().find(|m| m.x0 != first.x0) {
        return Err(domain(format!(
            "coupled models must share x0 ({} vs {})",
            first.x0, m.x0
        )));
    }
    if substeps == 0 || n_paths == 0 {
        return Err(domain("substeps and n_paths must be positive"));
    }
    let dt = h / substeps as f64;
    let sqrt_dt = dt.sqrt();
    let m = models.len();
    let n_times = grid.len();
    let rows: Vec<Vec<f64>> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = RngStream::new(seed, i as u64).rng();
            let mut state = vec![first.x0; m];
            // model-major block: row for model j at [j * n_times ..]
            let mut out = vec![0.0; m * n_times];
            for j in 0..m {
                out[j * n_times] = first.x0;
            }
            for k in 1..n_times {
                for _ in 0..substeps {
                    let dw = sqrt_dt * rng.sample::<f64, _>(StandardNormal);
                    for (x, p) in state.iter_mut().zip(models) {
                        let xp = x.max(0.0);
                        *x += (p.a - p.b * xp) * dt + p.sigma * xp.sqrt() * dw;
                    }
                }
                for j in 0..m {
                    out[j * n_times + k] = state[j].max(0.0);
                }
            }
            out
        })
        .collect();
    (0..m)
        .map(|j| {
            let mut values = Vec::with_capacity(n_paths * n_times);
            for r in &rows {
                values.extend_from_slice(&r[j * n_times..(j + 1) * n_times]);
            }
            PathEnsemble::new(
                grid.clone(),
                n_paths,
                values,
                format!("{} euler-ft dt={dt}", models[j].tag()),
                seed,
            )
        })
        .collect()
}

/// Parameters of `dV = c / sqrt(V^2 + eps^2) dt + dW`, `V_0 = v0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothedBessel {
    pub eps: f64,
    pub c: f64,
    pub v0: f64,
}

impl SmoothedBessel {
    pub fn new(eps: f64, c: f64, v0: f64) -> Result<Self> {
        finite("eps", eps)?;
        finite("c", c)?;
        finite("v0", v0)?;
        if eps == 0.0 {
            return Err(domain("eps must be nonzero"));
        }
        if c < 0.0 {
            return Err(domain(format!("c must be nonnegative, got {c}")));
        }
        if v0 <= 0.0 {
            return Err(domain(format!("v0 must be positive, got {v0}")));
        }
        Ok(Self { eps, c, v0 })
    }

    pub fn drift(&self, v: f64) -> f64 {
        self.c / (v * v + self.eps * self.eps).sqrt()
    }

    fn tag(&self) -> String {
        format!("smoothed-bessel eps={} c={} v0={}", self.eps, self.c, self.v0)
    }
}

/// Euler paths of the smoothed Bessel SDE; each grid interval is split into
/// `substeps` equal steps, so the step grows with a geometric grid.
pub fn simulate_smoothed_bessel(
    sde: &SmoothedBessel,
    grid: &TimeGrid,
    substeps: usize,
    n_paths: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    simulate_smoothed_bessel_family(std::slice::from_ref(sde), grid, substeps, n_paths, seed)
        .map(|mut v| v.remove(0))
}

/// Several smoothed Bessel SDEs driven by the same increments on each path.
pub fn simulate_smoothed_bessel_family(
    sdes: &[SmoothedBessel],
    grid: &TimeGrid,
    substeps: usize,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<PathEnsemble>> {
    if sdes.is_empty() || substeps == 0 || n_paths == 0 {
        return Err(domain("need at least one SDE, one substep and one path"));
    }
    let t = grid.times();
    let n_times = t.len();
    let m = sdes.len();
    let rows: Vec<Vec<f64>> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = RngStream::new(seed, i as u64).rng();
            let mut state: Vec<f64> = sdes.iter().map(|s| s.v0).collect();
            let mut out = vec![0.0; m * n_times];
            for j in 0..m {
                out[j * n_times] = state[j];
            }
            for k in 1..n_times {
                let dt = (t[k] - t[k - 1]) / substeps as f64;
                let sqrt_dt = dt.sqrt();
                for _ in 0..substeps {
                    let dw = sqrt_dt * rng.sample::<f64, _>(StandardNormal);
                    for (v, s) in state.iter_mut().zip(sdes) {
                        *v += s.drift(*v) * dt + dw;
                    }
                }
                for j in 0..m {
                    out[j * n_times + k] = state[j];
                }
            }
            out
        })
        .collect();
    (0..m)
        .map(|j| {
            let mut values = Vec::with_capacity(n_paths * n_times);
            for r in &rows {
                values.extend_from_slice(&r[j * n_times..(j + 1) * n_times]);
            }
            PathEnsemble::new(grid.clone(), n_paths, values, sdes[j].tag(), seed)
        })
        .collect()
}
