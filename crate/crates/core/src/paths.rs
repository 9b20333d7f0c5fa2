//! Seeded Brownian increments on a uniform time grid.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Uniform grid `t_k = k T / K`, `k = 0..=K`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    steps: usize,
    horizon: f64,
}

impl TimeGrid {
    pub fn new(steps: usize, horizon: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("time grid needs at least one step".into()));
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::Config(format!("horizon must be positive and finite (got {horizon})")));
        }
        Ok(Self { steps, horizon })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// `t_k`, computed as `k T / K` so that `t_K == T` exactly.
    pub fn knot(&self, k: usize) -> f64 {
        k as f64 * self.horizon / self.steps as f64
    }

    pub fn knots(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| self.knot(k)).collect()
    }
}

/// Brownian increments and levels for a batch of paths.
///
/// Storage is step-major so that one time slice across the batch is contiguous.
#[derive(Clone, Debug, PartialEq)]
pub struct PathBatch {
    batch: usize,
    steps: usize,
    dim: usize,
    dt: f64,
    seed: u64,
    increments: Vec<f64>,
    levels: Vec<f64>,
}

impl PathBatch {
    /// Draws `batch` paths of `K` iid `N(0, dt)` increments per dimension.
    pub fn sample(seed: u64, batch: usize, grid: &TimeGrid, dim: usize) -> Result<Self> {
        if batch == 0 {
            return Err(Error::Config("path batch must contain at least one path".into()));
        }
        if dim == 0 {
            return Err(Error::Config("Brownian dimension must be at least 1".into()));
        }
        let (steps, dt) = (grid.steps(), grid.dt());
        let sd = dt.sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut increments = vec![0.0; steps * batch * dim];
        for x in increments.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *x = sd * z;
        }
        Ok(Self::from_increments(seed, batch, steps, dim, dt, increments))
    }

    /// Builds a batch from explicit increments laid out as `[k][path][dim]`.
    pub fn from_increments(seed: u64, batch: usize, steps: usize, dim: usize, dt: f64, increments: Vec<f64>) -> Self {
        assert_eq!(increments.len(), steps * batch * dim, "increment array has the wrong length");
        let slice = batch * dim;
        let mut levels = vec![0.0; (steps + 1) * slice];
        for k in 0..steps {
            for i in 0..slice {
                levels[(k + 1) * slice + i] = levels[k * slice + i] + increments[k * slice + i];
            }
        }
        Self { batch, steps, dim, dt, seed, increments, levels }
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    #[inline]
    pub fn increment(&self, path: usize, k: usize, j: usize) -> f64 {
        self.increments[(k * self.batch + path) * self.dim + j]
    }

    #[inline]
    pub fn level(&self, path: usize, k: usize, j: usize) -> f64 {
        self.levels[(k * self.batch + path) * self.dim + j]
    }

    /// `Delta B_k` for every path (`batch * dim` values), `k < K`.
    pub fn increments_at(&self, k: usize) -> &[f64] {
        let s = self.batch * self.dim;
        &self.increments[k * s..(k + 1) * s]
    }

    /// `B_k` for every path (`batch * dim` values), `k <= K`.
    pub fn levels_at(&self, k: usize) -> &[f64] {
        let s = self.batch * self.dim;
        &self.levels[k * s..(k + 1) * s]
    }

    /// Rows `[start, end)` of the batch as a new batch.
    pub fn slice(&self, start: usize, end: usize) -> PathBatch {
        assert!(start < end && end <= self.batch, "invalid path slice {start}..{end}");
        let d = self.dim;
        let mut inc = Vec::with_capacity(self.steps * (end - start) * d);
        for k in 0..self.steps {
            let row = self.increments_at(k);
            inc.extend_from_slice(&row[start * d..end * d]);
        }
        PathBatch::from_increments(self.seed, end - start, self.steps, d, self.dt, inc)
    }

    /// Writes `path,k,B,dB` rows (first dimension only); `dB` is empty at `k = K`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Format { what: "path csv".into(), detail: e.to_string() };
        w.write_record(["path", "k", "B", "dB"]).map_err(io)?;
        for p in 0..self.batch {
            for k in 0..=self.steps {
                let db = if k < self.steps { self.increment(p, k, 0).to_string() } else { String::new() };
                w.write_record([p.to_string(), k.to_string(), self.level(p, k, 0).to_string(), db]).map_err(io)?;
            }
        }
        w.flush().map_err(|e| Error::io("path csv", e))?;
        Ok(())
    }
}

/// One Euler–Maruyama step `x + drift dt + diffusion dB`.
#[inline]
pub fn euler_step(x: f64, drift: f64, diffusion: f64, db: f64, dt: f64) -> f64 {
    x + drift * dt + diffusion * db
}

/// Training phase tag mixed into batch seeds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Generator,
    Discriminator,
    Evaluation,
    Pilot,
}

impl Phase {
    fn tag(self) -> u64 {
        match self {
            Phase::Generator => 1,
            Phase::Discriminator => 2,
            Phase::Evaluation => 3,
            Phase::Pilot => 4,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based stream seed for `(seed, round, epoch, phase)`.
pub fn derive_seed(seed: u64, round: usize, epoch: usize, phase: Phase) -> u64 {
    let mut h = splitmix64(seed);
    h = splitmix64(h ^ round as u64);
    h = splitmix64(h ^ ((epoch as u64) << 20));
    splitmix64(h ^ (phase.tag() << 56))
}
