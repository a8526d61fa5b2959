use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::{kmeans_fit, Labelling};
use crate::error::{Error, Result};
use crate::rng::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmOptions {
    pub max_iters: usize,
    /// Stop once the mean per-point log-likelihood gains less than this.
    pub tol: f64,
    /// Floor for every variance entry.
    pub reg_epsilon: f64,
    pub kmeans_iters: usize,
    /// Independent k-means initializations, each followed by EM; the fit with
    /// the highest final log-likelihood is kept.
    pub n_init: usize,
}

impl Default for GmmOptions {
    fn default() -> Self {
        GmmOptions {
            max_iters: 100,
            tol: 1e-3,
            reg_epsilon: 1e-6,
            kmeans_iters: 300,
            n_init: 1,
        }
    }
}

/// Diagonal-covariance Gaussian mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    /// `C x m`.
    pub means: Array2<f64>,
    /// `C x m` diagonal variances.
    pub variances: Array2<f64>,
    /// Mean per-point log-likelihood at each E-step.
    pub log_likelihood_trace: Vec<f64>,
    pub converged: bool,
}

impl GmmModel {
    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    /// `ln(w_k) + ln N(x | mu_k, diag(var_k))` for every point and component.
    pub fn weighted_log_densities(&self, latents: ArrayView2<f64>) -> Result<Array2<f64>> {
        if latents.ncols() != self.dim() {
            return Err(Error::shape("gmm input", &[latents.nrows(), self.dim()], &[latents.nrows(), latents.ncols()]));
        }
        let k = self.n_components();
        let consts: Vec<f64> = (0..k)
            .map(|c| {
                let log_det: f64 = self.variances.row(c).iter().map(|v| v.ln()).sum();
                self.weights[c].ln() - 0.5 * (self.dim() as f64 * (2.0 * PI).ln() + log_det)
            })
            .collect();
        let mut out = Array2::zeros((latents.nrows(), k));
        for (i, x) in latents.rows().into_iter().enumerate() {
            for c in 0..k {
                out[[i, c]] = consts[c] - 0.5 * mahalanobis_diag(x, self.means.row(c), self.variances.row(c));
            }
        }
        Ok(out)
    }
}

fn mahalanobis_diag(x: ArrayView1<f64>, mean: ArrayView1<f64>, var: ArrayView1<f64>) -> f64 {
    x.iter()
        .zip(mean)
        .zip(var)
        .map(|((x, m), v)| (x - m) * (x - m) / v)
        .sum()
}

fn log_sum_exp(row: ArrayView1<f64>) -> f64 {
    let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// EM for a diagonal Gaussian mixture, initialized from k-means.
pub fn gmm_fit(latents: ArrayView2<f64>, n_clusters: usize, seed: u64, opts: &GmmOptions) -> Result<GmmModel> {
    if !(opts.reg_epsilon > 0.0) {
        return Err(Error::invalid("gmm options", "reg_epsilon must be positive"));
    }
    let n = latents.nrows();
    if n < n_clusters || n_clusters == 0 {
        return Err(Error::invalid("gmm", format!("{n} points cannot fill {n_clusters} clusters")));
    }

    let mut best: Option<GmmModel> = None;
    for r in 0..opts.n_init.max(1) {
        let init = kmeans_fit(latents, n_clusters, derive_seed(seed, &[r as u64]), opts.kmeans_iters)?;
        let model = run_em(latents, init.labelling.labels(), n_clusters, opts)?;
        let score = |m: &GmmModel| *m.log_likelihood_trace.last().unwrap_or(&f64::NEG_INFINITY);
        if best.as_ref().is_none_or(|b| score(&model) > score(b)) {
            best = Some(model);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn run_em(latents: ArrayView2<f64>, init: &[usize], n_clusters: usize, opts: &GmmOptions) -> Result<GmmModel> {
    let (n, dim) = latents.dim();
    let mut resp = Array2::<f64>::zeros((n, n_clusters));
    for (i, &l) in init.iter().enumerate() {
        resp[[i, l]] = 1.0;
    }

    let mut model = GmmModel {
        weights: vec![0.0; n_clusters],
        means: Array2::zeros((n_clusters, dim)),
        variances: Array2::zeros((n_clusters, dim)),
        log_likelihood_trace: Vec::new(),
        converged: false,
    };
    m_step(latents, &resp, opts.reg_epsilon, &mut model);

    for iteration in 0..opts.max_iters {
        let log_dens = model.weighted_log_densities(latents)?;
        let mut total = 0.0;
        for (i, row) in log_dens.rows().into_iter().enumerate() {
            let norm = log_sum_exp(row);
            if !norm.is_finite() {
                return Err(Error::Numerical {
                    stage: "gmm responsibilities",
                    iteration,
                });
            }
            total += norm;
            for c in 0..n_clusters {
                resp[[i, c]] = (row[c] - norm).exp();
            }
        }
        let ll = total / n as f64;
        if let Some(&prev) = model.log_likelihood_trace.last() {
            model.log_likelihood_trace.push(ll);
            if ll - prev < opts.tol {
                model.converged = true;
                break;
            }
        } else {
            model.log_likelihood_trace.push(ll);
        }
        m_step(latents, &resp, opts.reg_epsilon, &mut model);
        if model.means.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical {
                stage: "gmm parameters",
                iteration,
            });
        }
    }
    Ok(model)
}

fn m_step(x: ArrayView2<f64>, resp: &Array2<f64>, reg: f64, model: &mut GmmModel) {
    let nk: Array1<f64> = resp.sum_axis(Axis(0)) + 10.0 * f64::EPSILON;
    let total: f64 = nk.sum();
    model.weights = nk.iter().map(|v| v / total).collect();
    let means = resp.t().dot(&x) / nk.view().insert_axis(Axis(1));
    let mut variances = Array2::<f64>::zeros(means.raw_dim());
    for c in 0..means.nrows() {
        let mean = means.row(c);
        let mut var = variances.row_mut(c);
        for (i, row) in x.rows().into_iter().enumerate() {
            let r = resp[[i, c]];
            if r == 0.0 {
                continue;
            }
            for ((v, &xv), &m) in var.iter_mut().zip(row).zip(mean) {
                *v += r * (xv - m) * (xv - m);
            }
        }
        var.mapv_inplace(|v: f64| (v / nk[c]).max(reg));
    }
    model.means = means;
    model.variances = variances;
}

/// Hard assignment by largest responsibility; ties go to the lowest index.
pub fn gmm_predict(model: &GmmModel, latents: ArrayView2<f64>) -> Result<Labelling> {
    let log_dens = model.weighted_log_densities(latents)?;
    let labels = log_dens
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = (0, f64::NEG_INFINITY);
            for (c, &v) in row.iter().enumerate() {
                if v > best.1 {
                    best = (c, v);
                }
            }
            best.0
        })
        .collect();
    Labelling::new(labels, model.n_components())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use ndarray::array;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn two_component_sample(n: usize, seed: u64) -> (Array2<f64>, Array2<f64>) {
        let truth = array![[-5.0, 0.0, 2.0], [5.0, 1.0, -2.0]];
        let mut rng = rng_from(seed, &[]);
        let x = Array2::from_shape_fn((n, 3), |(i, j)| {
            let z: f64 = StandardNormal.sample(&mut rng);
            truth[[i % 2, j]] + z
        });
        (x, truth)
    }

    #[test]
    fn recovers_known_mixture_means() {
        let (x, truth) = two_component_sample(2000, 3);
        let model = gmm_fit(x.view(), 2, 1, &GmmOptions::default()).unwrap();
        let err = |perm: [usize; 2]| {
            (0..2)
                .map(|c| {
                    (0..3)
                        .map(|j| (model.means[[perm[c], j]] - truth[[c, j]]).abs())
                        .fold(0.0, f64::max)
                })
                .fold(0.0, f64::max)
        };
        let best = err([0, 1]).min(err([1, 0]));
        assert!(best < 0.2, "mean error {best}");
        assert!((model.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn log_likelihood_is_monotone() {
        for seed in 0..5 {
            let mut rng = rng_from(seed, &[9]);
            let x = Array2::from_shape_fn((300, 4), |(i, _)| {
                let z: f64 = StandardNormal.sample(&mut rng);
                (i % 3) as f64 * 1.5 + z
            });
            let opts = GmmOptions {
                tol: 0.0,
                max_iters: 60,
                ..GmmOptions::default()
            };
            let model = gmm_fit(x.view(), 3, seed, &opts).unwrap();
            for w in model.log_likelihood_trace.windows(2) {
                assert!(w[1] >= w[0] - 1e-7, "{} -> {}", w[0], w[1]);
            }
            assert!(model.variances.iter().all(|&v| v >= opts.reg_epsilon));
        }
    }

    #[test]
    fn single_component_matches_moments() {
        let (x, _) = two_component_sample(500, 8);
        let model = gmm_fit(x.view(), 1, 0, &GmmOptions::default()).unwrap();
        for j in 0..3 {
            let col = x.column(j);
            let mean = col.sum() / 500.0;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 500.0;
            assert!((model.means[[0, j]] - mean).abs() < 1e-9);
            assert!((model.variances[[0, j]] - var).abs() < 1e-9);
        }
    }

    fn symmetric_model() -> GmmModel {
        GmmModel {
            weights: vec![0.5, 0.5],
            means: array![[-1.0, 0.0], [1.0, 0.0]],
            variances: array![[1.0, 1.0], [1.0, 1.0]],
            log_likelihood_trace: vec![],
            converged: true,
        }
    }

    #[test]
    fn predict_component_means_and_ties() {
        let model = symmetric_model();
        let l = gmm_predict(&model, array![[-1.0, 0.0], [1.0, 0.0], [0.0, 3.0]].view()).unwrap();
        assert_eq!(l.labels(), &[0, 1, 0]);
        assert!(gmm_predict(&model, array![[0.0]].view()).is_err());
    }

    #[test]
    fn predict_matches_scalar_density_oracle() {
        let model = GmmModel {
            weights: vec![0.2, 0.5, 0.3],
            means: array![[0.0, 1.0], [2.0, -1.0], [-2.0, 0.5]],
            variances: array![[1.0, 0.5], [0.3, 2.0], [1.5, 1.5]],
            log_likelihood_trace: vec![],
            converged: true,
        };
        let mut rng = rng_from(4, &[]);
        let x = Array2::from_shape_fn((20, 2), |_| rng.random_range(-3.0..3.0));
        let pred = gmm_predict(&model, x.view()).unwrap();
        for i in 0..20 {
            let mut best = (0, -1.0);
            for c in 0..3 {
                let mut dens = model.weights[c];
                for j in 0..2 {
                    let v = model.variances[[c, j]];
                    let d = x[[i, j]] - model.means[[c, j]];
                    dens *= (-d * d / (2.0 * v)).exp() / (2.0 * PI * v).sqrt();
                }
                if dens > best.1 {
                    best = (c, dens);
                }
            }
            assert_eq!(pred.labels()[i], best.0);
        }
    }

    #[test]
    fn rejects_bad_options() {
        let (x, _) = two_component_sample(10, 1);
        let opts = GmmOptions {
            reg_epsilon: 0.0,
            ..GmmOptions::default()
        };
        assert!(gmm_fit(x.view(), 2, 0, &opts).is_err());
        assert!(gmm_fit(x.view(), 11, 0, &GmmOptions::default()).is_err());
    }
}
