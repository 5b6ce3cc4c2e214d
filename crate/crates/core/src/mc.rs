//! Deterministic Monte Carlo fan-out.
//!
//! Replica `r` always draws from stream `r`, replicas are grouped into fixed
//! chunks, each chunk is accumulated sequentially and chunk accumulators are
//! merged pairwise in index order. The result therefore does not depend on
//! the number of worker threads or on scheduling.

use std::panic::{catch_unwind, AssertUnwindSafe};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const CHUNK: u64 = 256;

/// Replica count, master seed and worker count of a Monte Carlo run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct McConfig {
    pub replicas: u64,
    pub seed: u64,
    pub workers: usize,
}

impl McConfig {
    pub fn new(replicas: u64, seed: u64, workers: usize) -> Self {
        Self {
            replicas,
            seed,
            workers,
        }
    }

    pub fn with_replicas(self, replicas: u64) -> Self {
        Self { replicas, ..self }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub(crate) fn require_replicas(&self, min: u64) -> Result<()> {
        if self.replicas < min {
            return Err(Error::InvalidInput(format!(
                "at least {min} replicas required, got {}",
                self.replicas
            )));
        }
        Ok(())
    }
}

/// Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MCEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub replicas: u64,
}

impl MCEstimate {
    /// An exactly known value.
    pub fn exact(value: f64) -> Self {
        Self {
            mean: value,
            std_error: 0.0,
            replicas: 0,
        }
    }

    pub fn from_samples(samples: &[f64]) -> Result<Self> {
        let mut acc = Moments::default();
        samples.iter().for_each(|&x| acc.push(x));
        acc.estimate()
    }

    /// Estimate of `sqrt(E[X])` from an estimate of `E[X]` (delta method).
    pub fn sqrt(&self) -> Self {
        let root = self.mean.max(0.0).sqrt();
        let std_error = if root > 0.0 {
            self.std_error / (2.0 * root)
        } else {
            self.std_error.sqrt()
        };
        Self {
            mean: root,
            std_error,
            replicas: self.replicas,
        }
    }
}

/// Running count, mean and centred second moment; merged with Chan's rule.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    count: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    fn merge(a: Moments, b: Moments) -> Moments {
        if a.count == 0 {
            return b;
        }
        if b.count == 0 {
            return a;
        }
        let count = a.count + b.count;
        let d = b.mean - a.mean;
        let wb = b.count as f64 / count as f64;
        Moments {
            count,
            mean: a.mean + d * wb,
            m2: a.m2 + b.m2 + d * d * a.count as f64 * wb,
        }
    }

    fn estimate(&self) -> Result<MCEstimate> {
        if self.count < 2 {
            return Err(Error::InvalidInput(format!(
                "a Monte Carlo estimate needs at least 2 replicas, got {}",
                self.count
            )));
        }
        let n = self.count as f64;
        let var = (self.m2 / (n - 1.0)).max(0.0);
        Ok(MCEstimate {
            mean: self.mean,
            std_error: (var / n).sqrt(),
            replicas: self.count,
        })
    }
}

fn tree_merge(parts: &[Vec<Moments>]) -> Vec<Moments> {
    match parts.len() {
        0 => Vec::new(),
        1 => parts[0].clone(),
        n => {
            let (l, r) = parts.split_at(n / 2);
            tree_merge(l)
                .into_iter()
                .zip(tree_merge(r))
                .map(|(a, b)| Moments::merge(a, b))
                .collect()
        }
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    if workers == 0 {
        return Err(Error::InvalidInput("worker count must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Numeric(format!("cannot start worker pool: {e}")))
}

fn guarded<T>(replica: u64, task: impl FnOnce() -> Result<T>) -> Result<T> {
    catch_unwind(AssertUnwindSafe(task)).unwrap_or_else(|payload| {
        let message = payload
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| payload.downcast_ref::<String>().cloned())
            .unwrap_or_else(|| "unknown panic".into());
        Err(Error::WorkerPanic { replica, message })
    })
}

/// Runs `task` for every replica index and returns the replica outputs in
/// index order.
pub fn collect<T, F>(replicas: u64, workers: usize, task: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync,
{
    pool(workers)?.install(|| {
        (0..replicas)
            .into_par_iter()
            .map(|r| guarded(r, || task(r)))
            .collect()
    })
}

/// Monte Carlo estimate of `E[task(r)]` over `replicas` replicas.
pub fn fanout<F>(replicas: u64, workers: usize, task: F) -> Result<MCEstimate>
where
    F: Fn(u64) -> Result<f64> + Sync,
{
    let est = fanout_vec(replicas, workers, 1, |r| task(r).map(|x| vec![x]))?;
    Ok(est[0])
}

/// Component-wise Monte Carlo estimates of a vector-valued task.
pub fn fanout_vec<F>(replicas: u64, workers: usize, len: usize, task: F) -> Result<Vec<MCEstimate>>
where
    F: Fn(u64) -> Result<Vec<f64>> + Sync,
{
    let chunks = replicas.div_ceil(CHUNK);
    let parts: Vec<Vec<Moments>> = pool(workers)?.install(|| {
        (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut acc = vec![Moments::default(); len];
                for r in c * CHUNK..((c + 1) * CHUNK).min(replicas) {
                    let values = guarded(r, || task(r))?;
                    if values.len() != len {
                        return Err(Error::Shape {
                            context: "replica output length",
                            expected: len,
                            actual: values.len(),
                        });
                    }
                    acc.iter_mut().zip(values).for_each(|(a, x)| a.push(x));
                }
                Ok(acc)
            })
            .collect::<Result<_>>()
    })?;
    if parts.is_empty() {
        return Err(Error::InvalidInput("no replicas requested".into()));
    }
    tree_merge(&parts).iter().map(Moments::estimate).collect()
}
