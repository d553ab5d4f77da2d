//! Brownian paths, running suprema and first-passage times.
//!
//! Every path is a pure function of a [`PathSeed`]: the master seed and a
//! region tag select a ChaCha key, and the trajectory index selects the
//! stream. Paths can therefore be
//! generated in any order, on any number of workers, with identical results.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Reproducibility token for one trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PathSeed {
    pub master: u64,
    pub index: u64,
}

/// Separate regions of a trajectory's stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamRegion {
    Increments,
    /// Bridge draws for the refinement that produced `steps` intervals.
    Refinement { steps: u64 },
    /// Bridge draws used when an Euler-Maruyama step is halved.
    Halving,
}

impl PathSeed {
    pub fn new(master: u64, index: u64) -> Self {
        Self { master, index }
    }

    /// Deterministic generator for one region of this trajectory's stream.
    ///
    /// The ChaCha key is built from `(master, region)` and the stream id is the
    /// trajectory index, so distinct regions and trajectories never overlap.
    pub fn rng(&self, region: StreamRegion) -> ChaCha8Rng {
        let (tag, extra) = match region {
            StreamRegion::Increments => (0u64, 0u64),
            StreamRegion::Halving => (1, 0),
            StreamRegion::Refinement { steps } => (2, steps),
        };
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.master.to_le_bytes());
        key[8..16].copy_from_slice(&tag.to_le_bytes());
        key[16..24].copy_from_slice(&extra.to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(self.index);
        rng
    }
}

/// Draws a standard normal variate.
#[inline]
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// A sampled Brownian trajectory on an increasing time grid with `B(0) = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianPath<T> {
    times: Vec<T>,
    values: Vec<T>,
    running_sup: Vec<T>,
    seed: PathSeed,
}

impl<T: Scalar> BrownianPath<T> {
    /// Assembles a path from explicit samples; `values[0]` must be 0.
    pub fn from_samples(times: Vec<T>, values: Vec<T>, seed: PathSeed) -> Result<Self> {
        if times.len() != values.len() || times.len() < 2 {
            return Err(Error::InvalidArgument(
                "path needs matching times and values with at least 2 samples".into(),
            ));
        }
        if times[0] != T::zero() || values[0] != T::zero() {
            return Err(Error::InvalidArgument("path must start at (0, 0)".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("path times must increase".into()));
        }
        let running_sup = running_sup(&values);
        Ok(Self {
            times,
            values,
            running_sup,
            seed,
        })
    }

    pub fn times(&self) -> &[T] {
        &self.times
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// `B*_t = sup_{u <= t} |B_u|` at each sample.
    pub fn running_sup(&self) -> &[T] {
        &self.running_sup
    }

    pub fn seed(&self) -> PathSeed {
        self.seed
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn horizon(&self) -> T {
        *self.times.last().expect("non-empty path")
    }

    pub fn increments(&self) -> impl Iterator<Item = T> + '_ {
        self.values.windows(2).map(|w| w[1] - w[0])
    }

    /// Linear interpolation of `B` at time `t` inside the horizon.
    pub fn value_at(&self, t: T) -> T {
        let i = match self
            .times
            .binary_search_by(|x| x.partial_cmp(&t).expect("finite times"))
        {
            Ok(i) => return self.values[i],
            Err(i) => i,
        };
        if i == 0 {
            return self.values[0];
        }
        if i >= self.times.len() {
            return *self.values.last().unwrap();
        }
        let (t0, t1) = (self.times[i - 1], self.times[i]);
        let w = (t - t0) / (t1 - t0);
        self.values[i - 1] + w * (self.values[i] - self.values[i - 1])
    }

    /// Every `stride`-th sample, keeping both endpoints.
    pub fn subsample(&self, stride: usize) -> Result<Self> {
        if stride == 0 || self.steps() % stride != 0 {
            return Err(Error::InvalidArgument(format!(
                "stride {stride} does not divide {} steps",
                self.steps()
            )));
        }
        let pick = |v: &[T]| v.iter().step_by(stride).copied().collect::<Vec<_>>();
        Self::from_samples(pick(&self.times), pick(&self.values), self.seed)
    }
}

fn running_sup<T: Scalar>(values: &[T]) -> Vec<T> {
    let mut m = T::zero();
    values
        .iter()
        .map(|v| {
            m = m.max(v.abs());
            m
        })
        .collect()
}

/// Samples `B` on a uniform grid of `steps` intervals over `[0, horizon]`.
pub fn generate_path<T: Scalar>(horizon: T, steps: usize, seed: PathSeed) -> Result<BrownianPath<T>> {
    if !(horizon > T::zero()) || !horizon.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "horizon must be positive, got {horizon}"
        )));
    }
    if steps == 0 {
        return Err(Error::InvalidArgument("steps must be at least 1".into()));
    }
    let dt = horizon / T::from_usize_lossy(steps);
    let sd = dt.sqrt();
    let mut rng = seed.rng(StreamRegion::Increments);
    let mut times = Vec::with_capacity(steps + 1);
    let mut values = Vec::with_capacity(steps + 1);
    let mut running = Vec::with_capacity(steps + 1);
    let mut b = T::zero();
    let mut m = T::zero();
    times.push(T::zero());
    values.push(b);
    running.push(m);
    for i in 1..=steps {
        b = b + sd * T::lit(standard_normal(&mut rng));
        m = m.max(b.abs());
        times.push(if i == steps {
            horizon
        } else {
            horizon * T::from_usize_lossy(i) / T::from_usize_lossy(steps)
        });
        values.push(b);
        running.push(m);
    }
    Ok(BrownianPath {
        times,
        values,
        running_sup: running,
        seed,
    })
}

/// Inserts `factor - 1` bridge-sampled points in every interval.
///
/// Coarse samples are copied unchanged; inserted points are drawn
/// sequentially from the Brownian bridge pinned at the interval's ends, so the
/// refined path has the law of Brownian motion conditioned on the coarse one.
pub fn refine_path<T: Scalar>(path: &BrownianPath<T>, factor: usize) -> Result<BrownianPath<T>> {
    if factor < 2 {
        return Err(Error::InvalidArgument(format!(
            "refinement factor must be at least 2, got {factor}"
        )));
    }
    let fine_steps = path.steps() * factor;
    let mut rng = path.seed.rng(StreamRegion::Refinement {
        steps: fine_steps as u64,
    });
    let mut times = Vec::with_capacity(fine_steps + 1);
    let mut values = Vec::with_capacity(fine_steps + 1);
    let m = T::from_usize_lossy(factor);
    for i in 0..path.steps() {
        let (t0, t1) = (path.times[i], path.times[i + 1]);
        let (b0, b1) = (path.values[i], path.values[i + 1]);
        times.push(t0);
        values.push(b0);
        let h = (t1 - t0) / m;
        let mut b = b0;
        for j in 1..factor {
            let s = t0 + h * T::from_usize_lossy(j);
            // bridge from (s - h, b) to (t1, b1), evaluated at s
            let remaining = t1 - (s - h);
            let mean = b + (b1 - b) * h / remaining;
            let var = h * (t1 - s) / remaining;
            b = mean + var.sqrt() * T::lit(standard_normal(&mut rng));
            times.push(s);
            values.push(b);
        }
    }
    times.push(path.horizon());
    values.push(*path.values.last().unwrap());
    let running_sup = running_sup(&values);
    Ok(BrownianPath {
        times,
        values,
        running_sup,
        seed: path.seed,
    })
}

/// Barrier crossing of `|B|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum Passage<T> {
    Reached { index: usize, time: T },
    NotReached,
}

/// First-passage time of `|B|` through the level `barrier`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoppingTime<T> {
    pub barrier: T,
    pub passage: Passage<T>,
}

impl<T: Scalar> StoppingTime<T> {
    pub fn time(&self) -> Option<T> {
        match self.passage {
            Passage::Reached { time, .. } => Some(time),
            Passage::NotReached => None,
        }
    }

    pub fn index(&self) -> Option<usize> {
        match self.passage {
            Passage::Reached { index, .. } => Some(index),
            Passage::NotReached => None,
        }
    }

    pub fn reached(&self) -> bool {
        matches!(self.passage, Passage::Reached { .. })
    }
}

/// First sampled time with `B*_t >= barrier`. Detection is on the sampled
/// grid only, so crossings between samples are missed; the bias shrinks
/// under [`refine_path`].
pub fn first_passage<T: Scalar>(path: &BrownianPath<T>, barrier: T) -> Result<StoppingTime<T>> {
    if !(barrier > T::zero()) {
        return Err(Error::InvalidArgument(format!(
            "barrier must be positive, got {barrier}"
        )));
    }
    let passage = path
        .running_sup
        .iter()
        .position(|&m| m >= barrier)
        .map_or(Passage::NotReached, |index| Passage::Reached {
            index,
            time: path.times[index],
        });
    Ok(StoppingTime { barrier, passage })
}

/// Empirical `P(B*_horizon >= barrier)` over `n_paths` independent paths with
/// `steps` intervals each.
pub fn estimate_bad_set_probability(
    barrier: f64,
    horizon: f64,
    steps: usize,
    n_paths: usize,
    master_seed: u64,
) -> Result<f64> {
    if n_paths == 0 {
        return Err(Error::InvalidArgument("n_paths must be at least 1".into()));
    }
    if !(barrier > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "barrier must be positive, got {barrier}"
        )));
    }
    let hits = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| -> Result<usize> {
            let path = generate_path::<f64>(horizon, steps, PathSeed::new(master_seed, i))?;
            Ok(usize::from(*path.running_sup().last().unwrap() >= barrier))
        })
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    Ok(hits as f64 / n_paths as f64)
}
