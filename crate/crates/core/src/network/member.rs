use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::mlp::{Activation, Dense, Mlp, MlpSpec, MlpTrace};
use super::{CE_FLOOR, CHECKPOINT_FORMAT};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from};

/// Layer sizes shared by every member of an ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberArchitecture {
    pub input_dim: usize,
    pub latent_dim: usize,
    pub n_clusters: usize,
    /// Encoder hidden widths; the decoder mirrors them.
    pub encoder_hidden: Vec<usize>,
    pub classifier_hidden: usize,
    pub leaky_slope: f64,
    pub noise_stddev: f64,
}

impl MemberArchitecture {
    pub fn new(input_dim: usize, latent_dim: usize, n_clusters: usize) -> Self {
        MemberArchitecture {
            input_dim,
            latent_dim,
            n_clusters,
            encoder_hidden: vec![256, 128],
            classifier_hidden: 25,
            leaky_slope: 0.01,
            noise_stddev: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.latent_dim == 0 || self.n_clusters < 2 || self.classifier_hidden == 0 {
            return Err(Error::invalid(
                "member architecture",
                "dimensions must be positive and n_clusters >= 2",
            ));
        }
        if !(self.noise_stddev >= 0.0 && self.noise_stddev.is_finite()) {
            return Err(Error::invalid("member architecture", "noise stddev must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Whether latent noise is injected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseMode {
    Eval,
    Train { seed: u64 },
}

/// Per-point branch of the combined loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointTarget {
    /// l1 reconstruction through decoder and encoder.
    Reconstruct,
    /// Cross-entropy against a pseudo-label through classifier and encoder.
    Classify(usize),
}

/// One autoencoder of the ensemble plus its classifier head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderMember {
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub classifier: Mlp,
    pub latent_dim: usize,
    pub n_clusters: usize,
    pub noise_stddev: f64,
    pub seed: u64,
    #[serde(skip)]
    version: u64,
}

/// Cached forward pass over one batch.
#[derive(Debug, Clone)]
pub struct MemberTrace {
    batch: Array2<f64>,
    latent: Array2<f64>,
    encoder: MlpTrace,
    decoder: MlpTrace,
    classifier: MlpTrace,
    version: u64,
}

impl MemberTrace {
    /// Latent codes after noise injection.
    pub fn latent(&self) -> &Array2<f64> {
        &self.latent
    }

    pub fn reconstruction(&self) -> &Array2<f64> {
        self.decoder.output()
    }

    pub fn probabilities(&self) -> &Array2<f64> {
        self.classifier.output()
    }

    /// Replace the reconstruction target, keeping the cached activations.
    #[cfg(test)]
    pub(crate) fn with_target(mut self, target: Array2<f64>) -> Self {
        assert_eq!(target.dim(), self.batch.dim());
        self.batch = target;
        self
    }
}

/// Gradients for every parameter of a member.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub encoder: Vec<Dense>,
    pub decoder: Vec<Dense>,
    pub classifier: Vec<Dense>,
}

impl Gradients {
    pub fn iter(&self) -> impl Iterator<Item = &Dense> {
        self.encoder.iter().chain(&self.decoder).chain(&self.classifier)
    }
}

/// Gradients paired with the step size to apply them with.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientUpdate {
    pub gradients: Gradients,
    pub learning_rate: f64,
}

impl GradientUpdate {
    pub fn new(gradients: Gradients, learning_rate: f64) -> Result<Self> {
        if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate", format!("{learning_rate}")));
        }
        if !gradients.iter().all(Dense::is_finite) {
            return Err(Error::NonFinite("gradients"));
        }
        Ok(GradientUpdate {
            gradients,
            learning_rate,
        })
    }
}

impl AutoencoderMember {
    pub fn new(arch: &MemberArchitecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let hidden = Activation::LeakyRelu {
            slope: arch.leaky_slope,
        };
        let mut enc_widths = vec![arch.input_dim];
        enc_widths.extend(&arch.encoder_hidden);
        enc_widths.push(arch.latent_dim);
        let dec_widths: Vec<usize> = enc_widths.iter().rev().copied().collect();

        let encoder = Mlp::new(MlpSpec {
            layer_widths: enc_widths,
            hidden_activation: hidden,
            output_activation: Activation::Identity,
            seed: derive_seed(seed, &[1]),
        })?;
        let decoder = Mlp::new(MlpSpec {
            layer_widths: dec_widths,
            hidden_activation: hidden,
            output_activation: Activation::Tanh,
            seed: derive_seed(seed, &[2]),
        })?;
        let classifier = Mlp::new(MlpSpec {
            layer_widths: vec![arch.latent_dim, arch.classifier_hidden, arch.n_clusters],
            hidden_activation: hidden,
            output_activation: Activation::Softmax,
            seed: derive_seed(seed, &[3]),
        })?;
        Ok(AutoencoderMember {
            encoder,
            decoder,
            classifier,
            latent_dim: arch.latent_dim,
            n_clusters: arch.n_clusters,
            noise_stddev: arch.noise_stddev,
            seed,
            version: 0,
        })
    }

    /// Assemble a member from explicit networks, checking that their widths line up.
    pub fn from_parts(encoder: Mlp, decoder: Mlp, classifier: Mlp, noise_stddev: f64, seed: u64) -> Result<Self> {
        let m = encoder.output_dim();
        if decoder.input_dim() != m || classifier.input_dim() != m {
            return Err(Error::shape(
                "member latent widths",
                &[m, m, m],
                &[m, decoder.input_dim(), classifier.input_dim()],
            ));
        }
        if decoder.output_dim() != encoder.input_dim() {
            return Err(Error::shape("decoder output", &[encoder.input_dim()], &[decoder.output_dim()]));
        }
        if classifier.spec().output_activation != Activation::Softmax {
            return Err(Error::invalid("classifier", "output activation must be softmax"));
        }
        let n_clusters = classifier.output_dim();
        Ok(AutoencoderMember {
            encoder,
            decoder,
            classifier,
            latent_dim: m,
            n_clusters,
            noise_stddev,
            seed,
            version: 0,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    /// Number of parameter updates applied since construction or load.
    pub fn version(&self) -> u64 {
        self.version
    }

    fn add_noise(&self, latent: &mut Array2<f64>, mode: NoiseMode) {
        if let NoiseMode::Train { seed } = mode {
            if self.noise_stddev > 0.0 {
                let normal = Normal::new(0.0, self.noise_stddev).expect("validated stddev");
                let mut rng = rng_from(seed, &[]);
                latent.iter_mut().for_each(|v| *v += normal.sample(&mut rng));
            }
        }
    }

    pub fn encode(&self, batch: ArrayView2<f64>, mode: NoiseMode) -> Result<Array2<f64>> {
        let mut latent = self.encoder.predict(batch)?;
        self.add_noise(&mut latent, mode);
        Ok(latent)
    }

    pub fn decode(&self, latent: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.decoder.predict(latent)
    }

    pub fn classify(&self, latent: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.classifier.predict(latent)
    }

    pub fn forward(&self, batch: ArrayView2<f64>, mode: NoiseMode) -> Result<MemberTrace> {
        let encoder = self.encoder.forward(batch)?;
        let mut latent = encoder.output().clone();
        self.add_noise(&mut latent, mode);
        let decoder = self.decoder.forward(latent.view())?;
        let classifier = self.classifier.forward(latent.view())?;
        Ok(MemberTrace {
            batch: batch.to_owned(),
            latent,
            encoder,
            decoder,
            classifier,
            version: self.version,
        })
    }

    /// Mean over the batch of the per-point loss selected by `targets`:
    /// `recon_weight * mean|g(f(x)) - x|` or `-ln p[c]`.
    pub fn loss(&self, trace: &MemberTrace, targets: &[PointTarget], recon_weight: f64) -> Result<f64> {
        self.check_trace(trace, targets)?;
        let rec = trace.reconstruction();
        let probs = trace.probabilities();
        let dim = rec.ncols() as f64;
        let mut total = 0.0;
        for (i, target) in targets.iter().enumerate() {
            total += match *target {
                PointTarget::Reconstruct => {
                    let row: f64 = rec
                        .row(i)
                        .iter()
                        .zip(trace.batch.row(i))
                        .map(|(r, x)| (r - x).abs())
                        .sum();
                    recon_weight * row / dim
                }
                PointTarget::Classify(c) => -probs[[i, c]].max(CE_FLOOR).ln(),
            };
        }
        Ok(total / targets.len() as f64)
    }

    /// Exact gradients of [`AutoencoderMember::loss`] for the cached pass.
    ///
    /// Reconstruction points contribute only to encoder and decoder; classified
    /// points only to encoder and classifier.
    pub fn backward(&self, trace: &MemberTrace, targets: &[PointTarget], recon_weight: f64) -> Result<(f64, Gradients)> {
        let loss = self.loss(trace, targets, recon_weight)?;
        let rec = trace.reconstruction();
        let probs = trace.probabilities();
        let batch = targets.len() as f64;
        let dim = rec.ncols() as f64;

        let mut grad_rec = Array2::<f64>::zeros(rec.raw_dim());
        let mut grad_probs = Array2::<f64>::zeros(probs.raw_dim());
        for (i, target) in targets.iter().enumerate() {
            match *target {
                PointTarget::Reconstruct => {
                    let scale = recon_weight / (dim * batch);
                    for ((g, r), x) in grad_rec.row_mut(i).iter_mut().zip(rec.row(i)).zip(trace.batch.row(i)) {
                        *g = scale * sign(r - x);
                    }
                }
                PointTarget::Classify(c) => {
                    let p = probs[[i, c]];
                    // Below the floor the clamped loss is constant.
                    if p >= CE_FLOOR {
                        grad_probs[[i, c]] = -1.0 / (p * batch);
                    }
                }
            }
        }

        let (dec_grads, grad_latent_dec) = self.decoder.backward(&trace.decoder, &grad_rec)?;
        let (cls_grads, grad_latent_cls) = self.classifier.backward(&trace.classifier, &grad_probs)?;
        let grad_latent = grad_latent_dec + grad_latent_cls;
        let (enc_grads, _) = self.encoder.backward(&trace.encoder, &grad_latent)?;
        Ok((
            loss,
            Gradients {
                encoder: enc_grads,
                decoder: dec_grads,
                classifier: cls_grads,
            },
        ))
    }

    fn check_trace(&self, trace: &MemberTrace, targets: &[PointTarget]) -> Result<()> {
        if trace.version != self.version {
            return Err(Error::StaleCache {
                cached: trace.version,
                current: self.version,
            });
        }
        if targets.len() != trace.batch.nrows() || targets.is_empty() {
            return Err(Error::shape("loss targets", &[trace.batch.nrows()], &[targets.len()]));
        }
        if let Some(PointTarget::Classify(c)) = targets
            .iter()
            .find(|t| matches!(t, PointTarget::Classify(c) if *c >= self.n_clusters))
        {
            return Err(Error::invalid("target", format!("cluster {c} out of range 0..{}", self.n_clusters)));
        }
        Ok(())
    }

    /// `theta <- theta - eta * grad` for every parameter.
    pub fn sgd_step(&mut self, update: &GradientUpdate) -> Result<()> {
        let g = &update.gradients;
        let groups = [
            (self.encoder.layers(), &g.encoder),
            (self.decoder.layers(), &g.decoder),
            (self.classifier.layers(), &g.classifier),
        ];
        for (params, grads) in groups {
            if params.len() != grads.len() || params.iter().zip(grads).any(|(p, g)| !p.same_shape(g)) {
                return Err(Error::invalid("gradient update", "shapes do not match member parameters"));
            }
        }
        let eta = update.learning_rate;
        for (net, grads) in [
            (&mut self.encoder, &g.encoder),
            (&mut self.decoder, &g.decoder),
            (&mut self.classifier, &g.classifier),
        ] {
            for (p, g) in net.layers_mut().iter_mut().zip(grads) {
                p.weights.scaled_add(-eta, &g.weights);
                p.bias.scaled_add(-eta, &g.bias);
            }
        }
        self.version += 1;
        Ok(())
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let file = Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            member: self.clone(),
        };
        fs::write(path, serde_json::to_vec(&file)?)?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let file: Checkpoint = serde_json::from_slice(&fs::read(path)?)?;
        if file.format != CHECKPOINT_FORMAT {
            return Err(Error::invalid("checkpoint", format!("unsupported format {:?}", file.format)));
        }
        let m = file.member;
        AutoencoderMember::from_parts(m.encoder, m.decoder, m.classifier, m.noise_stddev, m.seed)
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    member: AutoencoderMember,
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Default-architecture member: `n -> 256 -> 128 -> m` encoder, mirrored
/// decoder, `m -> 25 -> C` classifier.
pub fn init_member(input_dim: usize, latent_dim: usize, n_clusters: usize, seed: u64) -> Result<AutoencoderMember> {
    AutoencoderMember::new(&MemberArchitecture::new(input_dim, latent_dim, n_clusters), seed)
}
