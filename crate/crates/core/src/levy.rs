//! Sampling increments of a cylindrical Levy process on the truncated basis.
//!
//! An increment over an interval of length `dt` is the coefficient vector
//! `delta` with `delta_k = (L(t) - L(s)) e_k`; the scalar `(L(t) - L(s)) u`
//! is then `<delta, u>` for every `u` in the truncated space. The sample is
//! built from the decomposition `L = p~ t + W + P`: drift, Gaussian part and
//! compensated compound Poisson jumps.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::cylindrical::{CylindricalCharacteristics, JumpDist};
use crate::error::{check_shape, Error, Result};
use crate::hilbert::{HVector, Space};
use crate::mc::{fanout_vec, McConfig};
use crate::report::{CheckRecord, ToleranceRule};

/// Independent sub-streams of one replica stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lane {
    /// Increments of the driving noise.
    Noise,
    /// Pre-increment draws that realize random integrands.
    Branch,
    /// Anything else a caller needs; `0..14`.
    Aux(u8),
}

impl Lane {
    fn index(self) -> u128 {
        match self {
            Lane::Noise => 0,
            Lane::Branch => 1,
            Lane::Aux(i) => 2 + u128::from(i.min(13)),
        }
    }
}

/// Counter-based random stream addressed by `(master_seed, stream_id)`.
///
/// Each replica of a Monte Carlo run owns the stream whose id is its index;
/// lanes partition the ChaCha counter space so that the noise and branch
/// draws of a replica never overlap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub master_seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        Self {
            master_seed,
            stream_id,
        }
    }

    pub fn lane(&self, lane: Lane) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.stream_id);
        rng.set_word_pos(lane.index() << 60);
        rng
    }

    pub fn noise(&self) -> ChaCha8Rng {
        self.lane(Lane::Noise)
    }

    pub fn branch(&self) -> ChaCha8Rng {
        self.lane(Lane::Branch)
    }
}

/// Deterministic time grid `0 = t_0 < t_1 < ... < t_N = T`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::InvalidInput(
                "a time grid needs at least two points".into(),
            ));
        }
        if times[0] != 0.0 {
            return Err(Error::InvalidInput(format!(
                "time grid must start at 0, starts at {}",
                times[0]
            )));
        }
        for (i, w) in times.windows(2).enumerate() {
            if !(w[1].is_finite() && w[1] > w[0]) {
                return Err(Error::InvalidInput(format!(
                    "time grid not strictly increasing at index {}: {} -> {}",
                    i + 1,
                    w[0],
                    w[1]
                )));
            }
        }
        Ok(Self { times })
    }

    /// `steps` equal intervals on `[0, horizon]`.
    pub fn uniform(horizon: f64, steps: usize) -> Result<Self> {
        if steps == 0 || !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidInput(format!(
                "uniform grid needs horizon > 0 and steps > 0, got {horizon}, {steps}"
            )));
        }
        let dt = horizon / steps as f64;
        let mut times: Vec<f64> = (0..=steps).map(|i| i as f64 * dt).collect();
        times[steps] = horizon;
        Self::new(times)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    pub fn dt(&self, k: usize) -> f64 {
        self.times[k + 1] - self.times[k]
    }

    pub fn intervals(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.times.windows(2).map(|w| (w[0], w[1]))
    }

    /// Splits every interval into `factor` equal pieces.
    pub fn refine(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::InvalidInput("refinement factor must be >= 1".into()));
        }
        let mut times = Vec::with_capacity(self.steps() * factor + 1);
        for (a, b) in self.intervals() {
            for i in 0..factor {
                times.push(a + (b - a) * i as f64 / factor as f64);
            }
        }
        times.push(self.horizon());
        Self::new(times)
    }
}

/// Coefficients of `L(t) - L(s)` on the truncated basis of `U`.
#[derive(Debug, Clone, PartialEq)]
pub struct IncrementSample {
    pub dt: f64,
    pub coords: HVector,
}

impl IncrementSample {
    /// The realized scalar `(L(t) - L(s)) u`.
    pub fn apply(&self, u: &HVector) -> Result<f64> {
        self.coords.inner(u)
    }
}

/// Draws one increment of length `dt`.
///
/// Draw order is canonical: the Gaussian block, then one Poisson count per
/// coordinate, then the jump sizes coordinate by coordinate.
pub fn sample_increment<R: Rng + ?Sized>(
    law: &CylindricalCharacteristics,
    dt: f64,
    rng: &mut R,
) -> Result<IncrementSample> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidInput(format!(
            "increment length must be positive, got {dt}"
        )));
    }
    let n = law.dim();
    let mut coords: Vec<f64> = law.drift().coords().iter().map(|p| p * dt).collect();

    if !law.is_gaussian_free() {
        let z: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let mut g = vec![0.0; n];
        law.cov_sqrt().apply_into(&z, &mut g);
        let scale = dt.sqrt();
        coords.iter_mut().zip(&g).for_each(|(c, gi)| *c += scale * gi);
    }

    let mut counts = vec![0u64; n];
    for (count, jump) in counts.iter_mut().zip(law.jumps()) {
        let intensity = jump.rate * dt;
        if intensity > 0.0 {
            let poisson = Poisson::new(intensity)
                .map_err(|e| Error::Numeric(format!("poisson intensity {intensity}: {e}")))?;
            *count = poisson.sample(rng) as u64;
        }
    }
    for ((c, &count), jump) in coords.iter_mut().zip(&counts).zip(law.jumps()) {
        let mut sum = 0.0;
        for _ in 0..count {
            sum += match jump.dist {
                JumpDist::TwoPoint { a } => {
                    if rng.random::<bool>() {
                        a
                    } else {
                        -a
                    }
                }
                JumpDist::Gaussian { sigma } => sigma * rng.sample::<f64, _>(StandardNormal),
            };
        }
        *c += sum - jump.rate * jump.dist.mean() * dt;
    }

    if coords.iter().any(|c| !c.is_finite()) {
        return Err(Error::Numeric("sampled increment is not finite".into()));
    }
    Ok(IncrementSample {
        dt,
        coords: HVector::from_raw(Space::U, coords),
    })
}

/// One independent increment per interval of `grid`.
pub fn sample_path_increments<R: Rng + ?Sized>(
    law: &CylindricalCharacteristics,
    grid: &TimeGrid,
    rng: &mut R,
) -> Result<Vec<IncrementSample>> {
    grid.intervals()
        .map(|(a, b)| sample_increment(law, b - a, rng))
        .collect()
}

/// Sums consecutive blocks of `factor` increments, giving the increments of
/// the coarser grid that `factor`-fold refinement came from.
pub fn coarsen(increments: &[IncrementSample], factor: usize) -> Result<Vec<IncrementSample>> {
    if factor == 0 || !increments.len().is_multiple_of(factor) {
        return Err(Error::InvalidInput(format!(
            "cannot coarsen {} increments by factor {factor}",
            increments.len()
        )));
    }
    increments
        .chunks(factor)
        .map(|block| {
            let n = block[0].coords.dim();
            let mut coords = vec![0.0; n];
            let mut dt = 0.0;
            for inc in block {
                dt += inc.dt;
                coords
                    .iter_mut()
                    .zip(inc.coords.coords())
                    .for_each(|(c, x)| *c += x);
            }
            Ok(IncrementSample {
                dt,
                coords: HVector::from_raw(Space::U, coords),
            })
        })
        .collect()
}

/// Number of vectors in [`charfn_test_vectors`].
pub const CHARFN_TEST_VECTORS: usize = 20;

/// A fixed set of probe vectors: scaled basis vectors followed by seeded
/// Gaussian directions at several lengths.
pub fn charfn_test_vectors(n: usize) -> Vec<HVector> {
    let mut out: Vec<HVector> = (0..n.min(5))
        .map(|k| HVector::from_raw(Space::U, unit(n, k, 0.5 + 0.25 * k as f64)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0xc4a2);
    let lengths = [0.3, 0.7, 1.0, 1.5, 2.0];
    let mut i = 0;
    while out.len() < CHARFN_TEST_VECTORS {
        let dir: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        let len = lengths[i % lengths.len()];
        out.push(HVector::from_raw(Space::U, dir.iter().map(|x| len * x / norm).collect()));
        i += 1;
    }
    out
}

fn unit(n: usize, k: usize, scale: f64) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[k] = scale;
    v
}

/// Empirical `E exp(i L(t) u)` against the analytic characteristic function
/// for every probe `u`, real and imaginary parts separately, with absolute
/// tolerance `4 / sqrt(M)`.
pub fn verify_char_function(
    law: &CylindricalCharacteristics,
    t: f64,
    probes: &[HVector],
    mc: McConfig,
) -> Result<Vec<CheckRecord>> {
    for u in probes {
        check_shape("probe dimension", law.dim(), u.dim())?;
    }
    let est = fanout_vec(mc.replicas, mc.workers, 2 * probes.len(), |r| {
        let inc = sample_increment(law, t, &mut RngStream::new(mc.seed, r).noise())?;
        let mut out = Vec::with_capacity(2 * probes.len());
        for u in probes {
            let (s, c) = inc.apply(u)?.sin_cos();
            out.extend([c, s]);
        }
        Ok(out)
    })?;
    let tol = 4.0 / (mc.replicas as f64).sqrt();
    let mut records = Vec::with_capacity(est.len());
    for (i, u) in probes.iter().enumerate() {
        let phi = law.char_function(u, t)?;
        for (part, e, exact) in [("re", est[2 * i], phi.re), ("im", est[2 * i + 1], phi.im)] {
            records.push(CheckRecord::new(
                format!("charfn_{part}_{i}"),
                e,
                exact,
                ToleranceRule::AbsDiffAtMost { tol },
            ));
        }
    }
    Ok(records)
}
