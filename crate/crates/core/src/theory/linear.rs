use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from;

/// One latent coordinate of a linear autoencoder: input weights `w`, output
/// weight `w_prime`, and the step size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub w: Array1<f64>,
    pub w_prime: f64,
    pub eta: f64,
}

impl LinearModel {
    /// `eta = 0` is accepted so that the no-update equality cases can be run.
    pub fn new(w: Array1<f64>, w_prime: f64, eta: f64) -> Result<Self> {
        if w.iter().any(|v| !v.is_finite()) || !w_prime.is_finite() {
            return Err(Error::NonFinite("linear model weights"));
        }
        if !(eta >= 0.0 && eta.is_finite()) {
            return Err(Error::invalid("linear model", "eta must be finite and non-negative"));
        }
        Ok(LinearModel { w, w_prime, eta })
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    fn step(&self, x: ArrayView1<f64>, x2: ArrayView1<f64>, sign: f64) -> Result<LinearModel> {
        if x.len() != self.dim() || x2.len() != self.dim() {
            return Err(Error::shape("linear update", &[self.dim()], &[x.len(), x2.len()]));
        }
        let k = self.eta * self.w_prime;
        let w = &self.w - &((&x + &(&x2 * sign)) * k);
        Ok(LinearModel { w, ..self.clone() })
    }

    /// Update for a pair that shares a label: `w <- w - eta w' (x + x')`.
    pub fn gd_update_same(&self, x: ArrayView1<f64>, x2: ArrayView1<f64>) -> Result<LinearModel> {
        self.step(x, x2, 1.0)
    }

    /// Update for a pair with different labels: `w <- w - eta w' (x - x')`.
    pub fn gd_update_diff(&self, x: ArrayView1<f64>, x2: ArrayView1<f64>) -> Result<LinearModel> {
        self.step(x, x2, -1.0)
    }
}

/// `(w - k (x + sign x'))^T v` without allocating.
fn updated_dot(w: &[f64], k: f64, x: &[f64], x2: &[f64], sign: f64, v: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..w.len() {
        s += (w[i] - k * (x[i] + sign * x2[i])) * v[i];
    }
    s
}

/// Distributions for the pair experiments. All variants except `Empirical`
/// are symmetric about the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Sampler {
    /// `+v` or `-v` with equal probability.
    TwoPoint { v: Vec<f64> },
    /// `-v`, `0`, or `+v` with equal probability.
    ThreePoint { v: Vec<f64> },
    /// Isotropic normal with mean zero.
    Gaussian { dim: usize, stddev: f64 },
    /// Uniform on `[-half_width, half_width]^dim`.
    UniformCube { dim: usize, half_width: f64 },
    /// Equal mixture of normals at `+mean` and `-mean`.
    SymmetricBlobs { mean: Vec<f64>, stddev: f64 },
    /// Independent `+scale` / `-scale` coordinates.
    Rademacher { dim: usize, scale: f64 },
    /// Uniform over the rows of a point set, recentred to mean zero.
    Empirical { points: Array2<f64> },
}

impl Sampler {
    pub fn name(&self) -> &'static str {
        match self {
            Sampler::TwoPoint { .. } => "two_point",
            Sampler::ThreePoint { .. } => "three_point",
            Sampler::Gaussian { .. } => "gaussian",
            Sampler::UniformCube { .. } => "uniform_cube",
            Sampler::SymmetricBlobs { .. } => "symmetric_blobs",
            Sampler::Rademacher { .. } => "rademacher",
            Sampler::Empirical { .. } => "empirical",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Sampler::TwoPoint { v } | Sampler::ThreePoint { v } => v.len(),
            Sampler::SymmetricBlobs { mean, .. } => mean.len(),
            Sampler::Gaussian { dim, .. } | Sampler::UniformCube { dim, .. } | Sampler::Rademacher { dim, .. } => *dim,
            Sampler::Empirical { points } => points.ncols(),
        }
    }

    /// Reject invalid parameters, and distributions that put all mass on a
    /// single point.
    pub fn validate(&self) -> Result<()> {
        if self.dim() == 0 {
            return Err(Error::invalid("sampler", "dimension must be positive"));
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        let degenerate = match self {
            Sampler::TwoPoint { v } | Sampler::ThreePoint { v } => {
                if !finite(v) {
                    return Err(Error::NonFinite("sampler parameters"));
                }
                v.iter().all(|&x| x == 0.0)
            }
            Sampler::Gaussian { stddev: s, .. } | Sampler::UniformCube { half_width: s, .. } | Sampler::Rademacher { scale: s, .. } => {
                if !(s.is_finite() && *s >= 0.0) {
                    return Err(Error::invalid("sampler", "scale must be finite and non-negative"));
                }
                *s == 0.0
            }
            Sampler::SymmetricBlobs { mean, stddev } => {
                if !finite(mean) || !(stddev.is_finite() && *stddev >= 0.0) {
                    return Err(Error::invalid("sampler", "parameters must be finite, stddev non-negative"));
                }
                *stddev == 0.0 && mean.iter().all(|&x| x == 0.0)
            }
            Sampler::Empirical { points } => {
                if points.nrows() == 0 || !points.iter().all(|x| x.is_finite()) {
                    return Err(Error::invalid("sampler", "empirical points must be non-empty and finite"));
                }
                let first = points.row(0);
                points.rows().into_iter().all(|r| r == first)
            }
        };
        if degenerate {
            return Err(Error::Degenerate(format!("{} sampler puts all mass on one point", self.name())));
        }
        Ok(())
    }

    /// Sampler ready to draw; empirical points are recentred once here.
    fn prepared(&self) -> Result<Sampler> {
        self.validate()?;
        Ok(match self {
            Sampler::Empirical { points } => {
                let mean = points.mean_axis(ndarray::Axis(0)).expect("non-empty");
                Sampler::Empirical { points: points - &mean }
            }
            other => other.clone(),
        })
    }

    fn draw_into(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        match self {
            Sampler::TwoPoint { v } => {
                let s = if rng.random::<bool>() { 1.0 } else { -1.0 };
                out.iter_mut().zip(v).for_each(|(o, x)| *o = s * x);
            }
            Sampler::ThreePoint { v } => {
                let s = rng.random_range(-1i32..=1) as f64;
                out.iter_mut().zip(v).for_each(|(o, x)| *o = s * x);
            }
            Sampler::Gaussian { stddev, .. } => {
                let n = Normal::new(0.0, *stddev).expect("validated stddev");
                out.iter_mut().for_each(|o| *o = n.sample(rng));
            }
            Sampler::UniformCube { half_width, .. } => {
                out.iter_mut().for_each(|o| *o = rng.random_range(-half_width..=*half_width));
            }
            Sampler::SymmetricBlobs { mean, stddev } => {
                let s = if rng.random::<bool>() { 1.0 } else { -1.0 };
                let n = Normal::new(0.0, *stddev).expect("validated stddev");
                out.iter_mut().zip(mean).for_each(|(o, m)| *o = s * m + n.sample(rng));
            }
            Sampler::Rademacher { scale, .. } => {
                out.iter_mut().for_each(|o| *o = if rng.random::<bool>() { *scale } else { -scale });
            }
            Sampler::Empirical { points } => {
                let i = rng.random_range(0..points.nrows());
                out.iter_mut().zip(points.row(i)).for_each(|(o, x)| *o = *x);
            }
        }
    }
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

/// Running mean and centred second moment, mergeable in a fixed order.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Moments {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Moments {
    pub(crate) fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub(crate) fn merge(self, other: Moments) -> Moments {
        if self.n == 0 {
            return other;
        }
        if other.n == 0 {
            return self;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        Moments {
            n,
            mean: self.mean + delta * other.n as f64 / n as f64,
            m2: self.m2 + other.m2 + delta * delta * (self.n as f64 * other.n as f64) / n as f64,
        }
    }

    pub(crate) fn estimate(&self) -> Estimate {
        let var = if self.n > 1 { self.m2 / (self.n - 1) as f64 } else { 0.0 };
        Estimate {
            mean: self.mean,
            stderr: (var.max(0.0) / self.n.max(1) as f64).sqrt(),
            n: self.n,
        }
    }
}

pub(crate) const CHUNK: usize = 4096;

/// Run `n` samples in fixed-size chunks, each with its own stream derived from
/// `seed`, and merge the per-chunk moments in chunk order. The result does not
/// depend on the thread count.
pub(crate) fn chunked<const K: usize>(
    n: usize,
    seed: u64,
    sample: impl Fn(&mut ChaCha8Rng) -> [f64; K] + Sync,
) -> [Moments; K] {
    let chunks = n.div_ceil(CHUNK);
    let parts: Vec<[Moments; K]> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng_from(seed, &[c as u64]);
            let mut acc = [Moments::default(); K];
            for _ in 0..CHUNK.min(n - c * CHUNK) {
                let v = sample(&mut rng);
                for (a, x) in acc.iter_mut().zip(v) {
                    a.push(x);
                }
            }
            acc
        })
        .collect();
    parts.into_iter().fold([Moments::default(); K], |mut total, part| {
        for (t, p) in total.iter_mut().zip(part) {
            *t = t.merge(p);
        }
        total
    })
}

pub(crate) const MIN_SAMPLES: usize = 10_000;

fn check_run(sampler: &Sampler, model: &LinearModel, n_samples: usize) -> Result<Sampler> {
    if n_samples < MIN_SAMPLES {
        return Err(Error::invalid("monte carlo", format!("need at least {MIN_SAMPLES} samples, got {n_samples}")));
    }
    if sampler.dim() != model.dim() {
        return Err(Error::shape("sampler dimension", &[model.dim()], &[sampler.dim()]));
    }
    sampler.prepared()
}

/// Expected squared encoded distance between the two points of an update
/// pair, after a same-label and after a different-label step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Report {
    pub sampler: String,
    pub u_same: Estimate,
    pub u_diff: Estimate,
    /// Paired estimate of `u_diff - u_same`.
    pub gap: Estimate,
    /// Estimate of `E ||x - x'||^2`.
    pub mean_sq_distance: Estimate,
    /// `(eta w')^2 (E ||x - x'||^2)^2` from the plug-in distance estimate.
    pub bound: f64,
}

impl Lemma1Report {
    /// Gap at least the bound, allowing three standard errors.
    pub fn bound_holds(&self) -> bool {
        self.gap.mean >= self.bound - 3.0 * self.gap.stderr
    }
}

pub fn lemma1_experiment(sampler: &Sampler, model: &LinearModel, n_samples: usize, seed: u64) -> Result<Lemma1Report> {
    let sampler = check_run(sampler, model, n_samples)?;
    let m = model.dim();
    let k = model.eta * model.w_prime;
    let w = model.w.as_slice().expect("contiguous weights");
    let [same, diff, gap, dist] = chunked(n_samples, seed, |rng| {
        let (mut x, mut x2) = (vec![0.0; m], vec![0.0; m]);
        sampler.draw_into(rng, &mut x);
        sampler.draw_into(rng, &mut x2);
        let v: Vec<f64> = x.iter().zip(&x2).map(|(a, b)| a - b).collect();
        let us = updated_dot(w, k, &x, &x2, 1.0, &v).powi(2);
        let ud = updated_dot(w, k, &x, &x2, -1.0, &v).powi(2);
        [us, ud, ud - us, v.iter().map(|d| d * d).sum()]
    });
    let mean_sq_distance = dist.estimate();
    Ok(Lemma1Report {
        sampler: sampler.name().to_string(),
        u_same: same.estimate(),
        u_diff: diff.estimate(),
        gap: gap.estimate(),
        mean_sq_distance,
        bound: (k * mean_sq_distance.mean).powi(2),
    })
}

/// Expected squared encoded distance from an update point to an independent
/// third point, after a same-label and after a different-label step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma2Report {
    pub sampler: String,
    pub v_same: Estimate,
    pub v_diff: Estimate,
    /// Paired estimate of `v_same - v_diff`.
    pub difference: Estimate,
}

impl Lemma2Report {
    /// Equality within four standard errors of the paired difference.
    pub fn equality_holds(&self) -> bool {
        self.difference.mean.abs() <= 4.0 * self.difference.stderr
    }
}

pub fn lemma2_experiment(sampler: &Sampler, model: &LinearModel, n_samples: usize, seed: u64) -> Result<Lemma2Report> {
    let sampler = check_run(sampler, model, n_samples)?;
    let m = model.dim();
    let k = model.eta * model.w_prime;
    let w = model.w.as_slice().expect("contiguous weights");
    let [same, diff, d] = chunked(n_samples, seed, |rng| {
        let (mut x, mut x2, mut z) = (vec![0.0; m], vec![0.0; m], vec![0.0; m]);
        sampler.draw_into(rng, &mut x);
        sampler.draw_into(rng, &mut x2);
        sampler.draw_into(rng, &mut z);
        let v: Vec<f64> = x.iter().zip(&z).map(|(a, b)| a - b).collect();
        let vs = updated_dot(w, k, &x, &x2, 1.0, &v).powi(2);
        let vd = updated_dot(w, k, &x, &x2, -1.0, &v).powi(2);
        [vs, vd, vs - vd]
    });
    Ok(Lemma2Report {
        sampler: sampler.name().to_string(),
        v_same: same.estimate(),
        v_diff: diff.estimate(),
        difference: d.estimate(),
    })
}
