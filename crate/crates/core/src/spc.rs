//! The training driver: pretrain an ensemble on reconstruction, then
//! alternate between clustering every member's latent space, voting, and
//! training on the unanimous points until the vote stops growing.

use log::{info, warn};
use ndarray::{concatenate, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{gmm_fit, gmm_predict, kmeans_fit, GmmModel, GmmOptions, Labelling};
use crate::consensus::{best_matching, consensus, ConsensusResult};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::network::{
    combined_loss, targets_from_consensus, AutoencoderMember, GradientUpdate, MemberArchitecture, NoiseMode,
    PointTarget,
};
use crate::rng::{derive_seed, rng_from, TAG_CLUSTER, TAG_CONCAT, TAG_LOOP, TAG_MEMBER, TAG_NOISE, TAG_PRETRAIN, TAG_SHUFFLE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Clusterer {
    Gmm,
    Kmeans,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpcConfig {
    pub ensemble_size: usize,
    pub latent_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub classifier_hidden: usize,
    pub pretrain_epochs: usize,
    /// Epochs of pseudo-label training between re-clusterings.
    pub loop_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub noise_stddev: f64,
    /// Weight on the reconstruction branch of the combined loss.
    pub recon_weight: f64,
    /// Iterations without a strict increase in agreed points before stopping.
    pub plateau_patience: usize,
    pub max_iterations: usize,
    pub master_seed: u64,
    pub clusterer: Clusterer,
    pub gmm: GmmOptions,
    pub kmeans_iters: usize,
    /// Add a labelling from clustering the concatenated latents of all members.
    pub concat_member: bool,
}

impl Default for SpcConfig {
    fn default() -> Self {
        SpcConfig {
            ensemble_size: 5,
            latent_dim: 50,
            encoder_hidden: vec![256, 128],
            classifier_hidden: 25,
            pretrain_epochs: 20,
            loop_epochs: 5,
            batch_size: 64,
            learning_rate: 1e-3,
            noise_stddev: 0.1,
            recon_weight: 1.0,
            plateau_patience: 2,
            max_iterations: 20,
            master_seed: 0,
            clusterer: Clusterer::Gmm,
            gmm: GmmOptions {
                n_init: 10,
                ..GmmOptions::default()
            },
            kmeans_iters: 300,
            concat_member: false,
        }
    }
}

impl SpcConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| Err(Error::invalid("spc config", reason));
        if self.ensemble_size == 0 {
            return bad("ensemble_size must be at least 1");
        }
        if self.latent_dim == 0 || self.classifier_hidden == 0 || self.encoder_hidden.contains(&0) {
            return bad("layer widths must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive and finite");
        }
        if !(self.noise_stddev >= 0.0 && self.noise_stddev.is_finite()) {
            return bad("noise_stddev must be non-negative and finite");
        }
        if !(self.recon_weight >= 0.0 && self.recon_weight.is_finite()) {
            return bad("recon_weight must be non-negative and finite");
        }
        if self.plateau_patience == 0 {
            return bad("plateau_patience must be at least 1");
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be at least 1");
        }
        if !(self.gmm.tol >= 0.0) || !(self.gmm.reg_epsilon > 0.0) {
            return bad("gmm tol must be non-negative and reg_epsilon positive");
        }
        Ok(())
    }

    pub fn architecture(&self, input_dim: usize, n_clusters: usize) -> MemberArchitecture {
        MemberArchitecture {
            encoder_hidden: self.encoder_hidden.clone(),
            classifier_hidden: self.classifier_hidden,
            noise_stddev: self.noise_stddev,
            ..MemberArchitecture::new(input_dim, self.latent_dim, n_clusters)
        }
    }
}

/// One pass of cluster, vote, and (unless the run stops here) train.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub n_agreed: usize,
    /// Labellings that entered the vote.
    pub members_used: usize,
    /// Accuracy on agreed points under the matching that is best for all points.
    pub agreed_accuracy: Option<f64>,
    pub overall_accuracy: Option<f64>,
    /// Ensemble objective at the time of the vote.
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ClusterModel {
    Gmm(GmmModel),
    Kmeans { centroids: Array2<f64> },
}

#[derive(Debug, Clone)]
pub struct SpcOutcome {
    pub final_labels: Labelling,
    pub history: Vec<IterationRecord>,
    pub members: Vec<AutoencoderMember>,
    pub consensus: ConsensusResult,
    /// Cluster model behind each member's last labelling; `None` if it failed.
    pub cluster_models: Vec<Option<ClusterModel>>,
}

pub fn final_assignment(consensus: &ConsensusResult) -> Labelling {
    consensus.labelling()
}

/// Fresh ensemble with per-member seeds derived from the master seed.
pub fn init_ensemble(dataset: &Dataset, config: &SpcConfig) -> Result<Vec<AutoencoderMember>> {
    config.validate()?;
    let arch = config.architecture(dataset.dim(), dataset.n_clusters());
    (0..config.ensemble_size)
        .map(|j| AutoencoderMember::new(&arch, derive_seed(config.master_seed, &[TAG_MEMBER, j as u64])))
        .collect()
}

/// Phase tag plus loop iteration, used to key per-member random streams.
#[derive(Clone, Copy)]
struct Stream {
    phase: u64,
    iteration: u64,
}

fn train_member(
    member: &mut AutoencoderMember,
    index: usize,
    points: ArrayView2<f64>,
    targets: &[PointTarget],
    epochs: usize,
    config: &SpcConfig,
    stream: Stream,
) -> Result<()> {
    let n = points.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    let key = |tag: u64, epoch: usize| [tag, stream.phase, stream.iteration, index as u64, epoch as u64];
    for epoch in 0..epochs {
        order.shuffle(&mut rng_from(config.master_seed, &key(TAG_SHUFFLE, epoch)));
        let noise_base = derive_seed(config.master_seed, &key(TAG_NOISE, epoch));
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch = points.select(Axis(0), chunk);
            let batch_targets: Vec<PointTarget> = chunk.iter().map(|&i| targets[i]).collect();
            let mode = NoiseMode::Train {
                seed: derive_seed(noise_base, &[b as u64]),
            };
            let trace = member.forward(batch.view(), mode)?;
            let (_, grads) = member.backward(&trace, &batch_targets, config.recon_weight)?;
            member.sgd_step(&GradientUpdate::new(grads, config.learning_rate)?)?;
        }
    }
    Ok(())
}

/// Train every member for `pretrain_epochs` on reconstruction alone.
pub fn pretrain(members: &mut [AutoencoderMember], dataset: &Dataset, config: &SpcConfig) -> Result<()> {
    config.validate()?;
    let targets = vec![PointTarget::Reconstruct; dataset.len()];
    let stream = Stream {
        phase: TAG_PRETRAIN,
        iteration: 0,
    };
    members
        .par_iter_mut()
        .enumerate()
        .try_for_each(|(j, m)| train_member(m, j, dataset.points().view(), &targets, config.pretrain_epochs, config, stream))
}

fn cluster_latents(latents: ArrayView2<f64>, n_clusters: usize, seed: u64, config: &SpcConfig) -> Result<(Labelling, ClusterModel)> {
    match config.clusterer {
        Clusterer::Gmm => {
            let model = gmm_fit(latents, n_clusters, seed, &config.gmm)?;
            let labels = gmm_predict(&model, latents)?;
            Ok((labels, ClusterModel::Gmm(model)))
        }
        Clusterer::Kmeans => {
            let km = kmeans_fit(latents, n_clusters, seed, config.kmeans_iters)?;
            Ok((km.labelling, ClusterModel::Kmeans { centroids: km.centroids }))
        }
    }
}

struct Vote {
    consensus: ConsensusResult,
    models: Vec<Option<ClusterModel>>,
}

fn vote(members: &[AutoencoderMember], dataset: &Dataset, config: &SpcConfig, iteration: usize) -> Result<Vote> {
    let c = dataset.n_clusters();
    let latents: Vec<Array2<f64>> = members
        .par_iter()
        .map(|m| m.encode(dataset.points().view(), NoiseMode::Eval))
        .collect::<Result<_>>()?;
    let mut fits: Vec<Result<(Labelling, ClusterModel)>> = latents
        .par_iter()
        .enumerate()
        .map(|(j, z)| {
            let seed = derive_seed(config.master_seed, &[TAG_CLUSTER, iteration as u64, j as u64]);
            cluster_latents(z.view(), c, seed, config)
        })
        .collect();
    if config.concat_member && members.len() > 1 {
        let views: Vec<ArrayView2<f64>> = latents.iter().map(|z| z.view()).collect();
        let joined = concatenate(Axis(1), &views).map_err(|_| Error::invalid("latents", "cannot concatenate"))?;
        let seed = derive_seed(config.master_seed, &[TAG_CONCAT, iteration as u64]);
        fits.push(cluster_latents(joined.view(), c, seed, config));
    }

    let mut labellings = Vec::new();
    let mut models = Vec::new();
    for (j, fit) in fits.into_iter().enumerate() {
        match fit {
            Ok((l, m)) => {
                labellings.push(l);
                models.push(Some(m));
            }
            Err(e) => {
                warn!("iteration {iteration}: clustering for member {j} failed, excluded from the vote: {e}");
                models.push(None);
            }
        }
    }
    if labellings.is_empty() {
        return Err(Error::Numerical {
            stage: "clustering every ensemble member",
            iteration,
        });
    }
    Ok(Vote {
        consensus: consensus(&labellings)?,
        models,
    })
}

fn accuracies(result: &ConsensusResult, truth: Option<&[usize]>, n_clusters: usize) -> Result<(Option<f64>, Option<f64>)> {
    let Some(truth) = truth else {
        return Ok((None, None));
    };
    let truth = Labelling::new(truth.to_vec(), n_clusters)?;
    let predicted = result.labelling();
    let map = best_matching(&predicted, &truth)?;
    let correct: Vec<bool> = predicted
        .labels()
        .iter()
        .zip(truth.labels())
        .map(|(&p, &t)| map[p] == t)
        .collect();
    let overall = correct.iter().filter(|&&c| c).count() as f64 / correct.len() as f64;
    let agreed = (result.n_agreed > 0).then(|| {
        let hits = correct.iter().zip(&result.agreement).filter(|(&c, &a)| a && c).count();
        hits as f64 / result.n_agreed as f64
    });
    Ok((agreed, Some(overall)))
}

/// Run the full procedure on a normalized dataset.
pub fn spc_train(dataset: &Dataset, config: &SpcConfig) -> Result<SpcOutcome> {
    let mut members = init_ensemble(dataset, config)?;
    pretrain(&mut members, dataset, config)?;
    spc_loop(members, dataset, config)
}

/// The clustering and pseudo-label loop on already pretrained members.
pub fn spc_loop(mut members: Vec<AutoencoderMember>, dataset: &Dataset, config: &SpcConfig) -> Result<SpcOutcome> {
    config.validate()?;
    if members.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let points = dataset.points().view();
    let mut history = Vec::new();
    let mut best_agreed = None;
    let mut stalled = 0;
    let mut iteration = 0;
    let last = loop {
        let Vote { consensus: result, models } = vote(&members, dataset, config, iteration)?;
        let loss = combined_loss(&members, points, &result.consensus_labels, &result.agreement, config.recon_weight)?;
        let (agreed_accuracy, overall_accuracy) = accuracies(&result, dataset.labels(), dataset.n_clusters())?;
        let record = IterationRecord {
            iteration,
            n_agreed: result.n_agreed,
            members_used: result.aligned_labellings.len(),
            agreed_accuracy,
            overall_accuracy,
            loss,
        };
        info!(
            "iteration {iteration}: {} of {} agreed, loss {loss:.6}, accuracy {:?}",
            record.n_agreed,
            dataset.len(),
            record.overall_accuracy
        );
        history.push(record);

        if best_agreed.is_none_or(|b| result.n_agreed > b) {
            best_agreed = Some(result.n_agreed);
            stalled = 0;
        } else {
            stalled += 1;
        }
        if stalled >= config.plateau_patience || iteration + 1 >= config.max_iterations {
            break (result, models);
        }

        let targets = targets_from_consensus(&result.consensus_labels, &result.agreement)?;
        let stream = Stream {
            phase: TAG_LOOP,
            iteration: iteration as u64,
        };
        members
            .par_iter_mut()
            .enumerate()
            .try_for_each(|(j, m)| train_member(m, j, points, &targets, config.loop_epochs, config, stream))?;
        iteration += 1;
    };

    let (result, cluster_models) = last;
    Ok(SpcOutcome {
        final_labels: final_assignment(&result),
        history,
        members,
        consensus: result,
        cluster_models,
    })
}
