//! Checks of the linear-encoder analysis: entropy of confident predictions,
//! pairwise update lemmas, the separation identity, and the sign of the
//! separation change after a correctly versus incorrectly labelled step.
//!
//! Monte Carlo experiments split their samples into fixed chunks with derived
//! seeds, so reports are identical for any worker count.

mod decomposition;
mod entropy;
mod linear;

pub use decomposition::{lambdas, lemma3_check, theorem_experiment, LinearEncoder, Lemma3Check, TheoremReport, TheoryDataset};
pub use entropy::{entropy, entropy_curve, max_slope, uniform_grid};
pub use linear::{lemma1_experiment, lemma2_experiment, Estimate, Lemma1Report, Lemma2Report, LinearModel, Sampler};

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::BlobSpec;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from};
use linear::Moments;

const TAG_LEMMA1: u64 = 11;
const TAG_LEMMA2: u64 = 12;
const TAG_LEMMA3: u64 = 13;
const TAG_THEOREM: u64 = 14;

/// Tolerance for the exact separation identity.
pub const LEMMA3_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheoryConfig {
    pub seed: u64,
    /// Step size. Zero switches the inequality claims to "not applicable" and
    /// checks the forced equalities instead.
    pub eta: f64,
    pub w_prime: f64,
    /// Encoder weights for the pair lemmas; must match every sampler's dimension.
    pub w: Vec<f64>,
    pub samplers: Vec<Sampler>,
    pub n_samples: usize,
    pub lemma3_datasets: usize,
    pub lemma3_dim: usize,
    pub lemma3_code_dim: usize,
    pub theorem_blobs: BlobSpec,
    /// Every coordinate of the theorem's starting weight vector.
    pub theorem_w: f64,
    pub n_trials: usize,
    pub entropy_max_clusters: usize,
    pub entropy_grid_points: usize,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        TheoryConfig {
            seed: 0,
            eta: 0.1,
            w_prime: 1.5,
            w: vec![0.3, -0.2, 0.5, 0.1],
            samplers: vec![
                Sampler::TwoPoint { v: vec![1.0, -0.5, 2.0, 0.3] },
                Sampler::Gaussian { dim: 4, stddev: 1.0 },
                Sampler::UniformCube { dim: 4, half_width: 1.5 },
                Sampler::SymmetricBlobs { mean: vec![2.0, 0.0, -1.0, 1.0], stddev: 0.5 },
                Sampler::Rademacher { dim: 4, scale: 1.0 },
            ],
            n_samples: 100_000,
            lemma3_datasets: 100,
            lemma3_dim: 4,
            lemma3_code_dim: 3,
            theorem_blobs: BlobSpec {
                n_clusters: 2,
                points_per_cluster: 100,
                ambient_dim: 5,
                centroid_separation: 6.0,
                within_cluster_stddev: 1.0,
                seed: 0,
            },
            theorem_w: 0.01,
            n_trials: 10_000,
            entropy_max_clusters: 20,
            entropy_grid_points: 100,
        }
    }
}

impl TheoryConfig {
    pub fn model(&self) -> Result<LinearModel> {
        LinearModel::new(Array1::from(self.w.clone()), self.w_prime, self.eta)
    }

    pub fn validate(&self) -> Result<()> {
        self.model()?;
        if self.samplers.is_empty() {
            return Err(Error::invalid("theory config", "no samplers"));
        }
        if self.lemma3_datasets == 0 || self.lemma3_dim == 0 || self.lemma3_code_dim == 0 {
            return Err(Error::invalid("theory config", "lemma3 counts and dimensions must be positive"));
        }
        if self.entropy_max_clusters < 2 || self.entropy_grid_points < 2 {
            return Err(Error::invalid("theory config", "entropy needs C >= 2 and at least 2 grid points"));
        }
        if !self.theorem_w.is_finite() {
            return Err(Error::NonFinite("theorem_w"));
        }
        Ok(())
    }

    fn step_is_zero(&self) -> bool {
        self.eta * self.w_prime == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClaimStatus {
    Pass,
    Fail,
    NotApplicable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Claim {
    pub name: String,
    pub status: ClaimStatus,
    pub detail: String,
}

impl Claim {
    fn check(name: impl Into<String>, ok: bool, detail: String) -> Self {
        Claim {
            name: name.into(),
            status: if ok { ClaimStatus::Pass } else { ClaimStatus::Fail },
            detail,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropySummary {
    pub n_clusters: usize,
    pub grid_points: usize,
    pub max_slope: f64,
}

/// Aggregate over the random datasets of the separation identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma3Summary {
    pub datasets: usize,
    pub max_residual: f64,
    pub d: Estimate,
    pub r: Estimate,
    pub s: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub config: TheoryConfig,
    pub entropy: Vec<EntropySummary>,
    pub lemma1: Vec<Lemma1Report>,
    pub lemma2: Vec<Lemma2Report>,
    pub lemma3: Lemma3Summary,
    pub theorem: TheoremReport,
    pub claims: Vec<Claim>,
}

impl TheoryReport {
    pub fn all_pass(&self) -> bool {
        self.claims.iter().all(|c| c.status != ClaimStatus::Fail)
    }

    pub fn failed(&self) -> impl Iterator<Item = &Claim> {
        self.claims.iter().filter(|c| c.status == ClaimStatus::Fail)
    }
}

/// `(C, t, H)` rows for every `C` in `2..=max_clusters`.
pub fn entropy_table(max_clusters: usize, grid_points: usize) -> Result<Vec<(usize, f64, f64)>> {
    let mut rows = Vec::new();
    for c in 2..=max_clusters {
        for (t, h) in entropy_curve(c, &uniform_grid(c, grid_points))? {
            rows.push((c, t, h));
        }
    }
    Ok(rows)
}

/// Random labelled dataset with equal clusters for the separation identity:
/// `C` in {2, 3, 4}, 2 to 10 points per cluster, shifted cluster centres.
pub fn random_lemma3_case(seed: u64, dim: usize, code_dim: usize) -> Result<(TheoryDataset, LinearEncoder)> {
    let mut rng = rng_from(seed, &[]);
    let c = rng.random_range(2..=4usize);
    let per = rng.random_range(2..=10usize);
    let centres = Array2::from_shape_fn((c, dim), |_| {
        let z: f64 = StandardNormal.sample(&mut rng);
        3.0 * z
    });
    let n = c * per;
    let labels: Vec<usize> = (0..n).map(|i| i % c).collect();
    let points = Array2::from_shape_fn((n, dim), |(i, j)| {
        let z: f64 = StandardNormal.sample(&mut rng);
        centres[[i % c, j]] + z
    });
    let weights = Array2::from_shape_fn((code_dim, dim), |_| StandardNormal.sample(&mut rng));
    Ok((TheoryDataset::new(points, labels, c)?, LinearEncoder::new(weights)?))
}

fn describe(e: &Estimate) -> String {
    format!("{:.6e} +/- {:.3e}", e.mean, e.stderr)
}

/// Run every experiment and grade each claim.
pub fn run_all(config: &TheoryConfig) -> Result<TheoryReport> {
    config.validate()?;
    let model = config.model()?;
    let zero_step = config.step_is_zero();
    let mut claims = Vec::new();

    let mut entropy = Vec::new();
    for c in 2..=config.entropy_max_clusters {
        let curve = entropy_curve(c, &uniform_grid(c, config.entropy_grid_points))?;
        entropy.push(EntropySummary {
            n_clusters: c,
            grid_points: curve.len(),
            max_slope: max_slope(&curve),
        });
    }
    let worst = entropy.iter().map(|e| e.max_slope).fold(f64::NEG_INFINITY, f64::max);
    claims.push(Claim::check(
        "entropy_strictly_decreasing",
        worst < 0.0,
        format!("largest slope over C = 2..={}: {worst:.6e}", config.entropy_max_clusters),
    ));

    let mut lemma1 = Vec::new();
    let mut lemma2 = Vec::new();
    for (i, sampler) in config.samplers.iter().enumerate() {
        let seed1 = derive_seed(config.seed, &[TAG_LEMMA1, i as u64]);
        let seed2 = derive_seed(config.seed, &[TAG_LEMMA2, i as u64]);
        let r1 = lemma1_experiment(sampler, &model, config.n_samples, seed1)?;
        let r2 = lemma2_experiment(sampler, &model, config.n_samples, seed2)?;
        let name = format!("{}[{i}]", r1.sampler);
        if zero_step {
            claims.push(Claim {
                name: format!("lemma1_gap_bound/{name}"),
                status: ClaimStatus::NotApplicable,
                detail: "no step: the strict gap does not apply".into(),
            });
            claims.push(Claim::check(
                format!("lemma1_equal_without_step/{name}"),
                r1.u_same == r1.u_diff,
                format!("u_same {} u_diff {}", describe(&r1.u_same), describe(&r1.u_diff)),
            ));
            claims.push(Claim::check(
                format!("lemma2_equal/{name}"),
                r2.v_same == r2.v_diff,
                format!("v_same {} v_diff {}", describe(&r2.v_same), describe(&r2.v_diff)),
            ));
        } else {
            claims.push(Claim::check(
                format!("lemma1_gap_bound/{name}"),
                r1.bound_holds() && r1.gap.mean > 0.0,
                format!("gap {} bound {:.6e}", describe(&r1.gap), r1.bound),
            ));
            claims.push(Claim::check(
                format!("lemma2_equal/{name}"),
                r2.equality_holds(),
                format!("difference {}", describe(&r2.difference)),
            ));
        }
        lemma1.push(r1);
        lemma2.push(r2);
    }

    let (mut d, mut r, mut s) = (Moments::default(), Moments::default(), Moments::default());
    let mut max_residual: f64 = 0.0;
    for i in 0..config.lemma3_datasets {
        let seed = derive_seed(config.seed, &[TAG_LEMMA3, i as u64]);
        let (data, encoder) = random_lemma3_case(seed, config.lemma3_dim, config.lemma3_code_dim)?;
        let check = lemma3_check(&data, &encoder)?;
        max_residual = max_residual.max(check.residual());
        d.push(check.d);
        r.push(check.r);
        s.push(check.s);
    }
    claims.push(Claim::check(
        "lemma3_identity",
        max_residual <= LEMMA3_TOLERANCE,
        format!("max |d - (l1 r - l2 s)| over {} datasets: {max_residual:.3e}", config.lemma3_datasets),
    ));
    let lemma3 = Lemma3Summary {
        datasets: config.lemma3_datasets,
        max_residual,
        d: d.estimate(),
        r: r.estimate(),
        s: s.estimate(),
    };

    let data = TheoryDataset::from_blobs(&config.theorem_blobs)?;
    let theorem_model = LinearModel::new(Array1::from_elem(data.dim(), config.theorem_w), config.w_prime, config.eta)?;
    let theorem = theorem_experiment(
        &data,
        &theorem_model,
        config.n_trials,
        derive_seed(config.seed, &[TAG_THEOREM]),
    )?;
    if zero_step {
        claims.push(Claim {
            name: "theorem_sign".into(),
            status: ClaimStatus::NotApplicable,
            detail: "no step: separation cannot change".into(),
        });
        claims.push(Claim::check(
            "theorem_equal_without_step",
            theorem.d_true == theorem.d_false,
            format!("d_T {} d_F {}", describe(&theorem.d_true), describe(&theorem.d_false)),
        ));
    } else {
        claims.push(Claim::check(
            "theorem_sign",
            theorem.sign_holds(),
            format!("d_T - d_F {}", describe(&theorem.difference)),
        ));
    }

    Ok(TheoryReport {
        config: config.clone(),
        entropy,
        lemma1,
        lemma2,
        lemma3,
        theorem,
        claims,
    })
}
