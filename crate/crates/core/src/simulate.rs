//! Monte-Carlo validation of the information matrix.
//!
//! Counts are drawn from the generative story of the model: one person per
//! administered item, ability `theta ~ Gamma(a, b)` (or fixed `theta0`), and
//! `Y | theta ~ Poisson(theta * sigma(x))`. Each replication owns the ChaCha
//! stream `(seed, replication)`, so results do not depend on scheduling.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{DesignError, Result};
use crate::fisher::{accumulate, info_matrix, matrix_csv, Design};
use crate::model::{check_dim, Family, ModelSpec};
use crate::scan::map_indices_from;

const SCORE_TOL: f64 = 1e-8;
const MAX_FIT_ITER: usize = 200;
const MIN_COVARIANCE_REPLICATIONS: usize = 500;

/// A simulation run: exact design, true model, replications and seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub design: Design,
    pub model: ModelSpec,
    pub replications: usize,
    pub seed: u64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        check_dim(self.model.k(), self.design.k())?;
        let Some(n) = self.design.total() else {
            return Err(DesignError::InvalidDesign("simulation needs an exact design".into()));
        };
        let min = 5 * self.model.p() as u64;
        if n < min {
            return Err(DesignError::InvalidDesign(format!("design has {n} items, at least {min} needed")));
        }
        if self.replications == 0 {
            return Err(DesignError::InvalidArgument("replications must be positive".into()));
        }
        Ok(())
    }
}

/// Simulated counts, one inner vector per design point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub counts: Vec<Vec<u64>>,
}

impl SampleSet {
    pub fn totals(&self) -> Vec<u64> {
        self.counts.iter().map(|c| c.iter().sum()).collect()
    }
}

fn stream_rng(seed: u64, replication: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replication);
    rng
}

fn poisson_draw<R: Rng>(rng: &mut R, lambda: f64) -> u64 {
    if lambda <= 0.0 {
        return 0;
    }
    Poisson::new(lambda).expect("finite positive rate").sample(rng) as u64
}

/// Draw `n` independent counts for one item.
pub fn sample_counts<R: Rng>(rng: &mut R, family: Family, sigma: f64, n: u64) -> Vec<u64> {
    match family {
        Family::Poisson { theta0 } => (0..n).map(|_| poisson_draw(rng, theta0 * sigma)).collect(),
        Family::PoissonGamma { a, b } => {
            let gamma = Gamma::new(a, b).expect("validated shape and scale");
            (0..n)
                .map(|_| {
                    let theta: f64 = gamma.sample(rng);
                    poisson_draw(rng, theta * sigma)
                })
                .collect()
        }
    }
}

/// Counts for the first replication stream.
pub fn sample_responses(cfg: &SimConfig) -> Result<SampleSet> {
    sample_replication(cfg, 0)
}

/// Counts for replication `rep`.
pub fn sample_replication(cfg: &SimConfig, rep: u64) -> Result<SampleSet> {
    cfg.validate()?;
    let mut rng = stream_rng(cfg.seed, rep);
    let counts = cfg
        .design
        .points()
        .iter()
        .map(|p| {
            let sigma = cfg.model.easiness(&p.item)?;
            Ok(sample_counts(&mut rng, cfg.model.family(), sigma, p.count.unwrap_or(0)))
        })
        .collect::<Result<_>>()?;
    Ok(SampleSet { counts })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    /// `(beta0, beta_1, ..., beta_K)`.
    pub beta_hat: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub log_lik: f64,
}

/// Log-likelihood pieces that depend on `beta` only through `eta`.
struct Likelihood {
    family: Family,
    masks: Vec<u64>,
    sizes: Vec<f64>,
    totals: Vec<f64>,
    constant: f64,
    p: usize,
}

impl Likelihood {
    fn new(data: &SampleSet, design: &Design, family: Family, p: usize) -> Result<Self> {
        if data.counts.len() != design.len() {
            return Err(DesignError::DimensionMismatch { expected: design.len(), actual: data.counts.len() });
        }
        let ln_fact = |y: u64| ln_gamma(y as f64 + 1.0);
        let constant = data
            .counts
            .iter()
            .flatten()
            .map(|&y| match family {
                Family::Poisson { .. } => -ln_fact(y),
                Family::PoissonGamma { a, .. } => ln_gamma(y as f64 + a) - ln_gamma(a) - ln_fact(y),
            })
            .sum();
        Ok(Self {
            family,
            masks: design.points().iter().map(|pt| pt.item.mask()).collect(),
            sizes: data.counts.iter().map(|c| c.len() as f64).collect(),
            totals: data.counts.iter().map(|c| c.iter().sum::<u64>() as f64).collect(),
            constant,
            p,
        })
    }

    fn eta(&self, beta: &[f64], mask: u64) -> f64 {
        beta[0] + (0..self.p - 1).filter(|i| mask >> i & 1 == 1).map(|i| beta[i + 1]).sum::<f64>()
    }

    fn log_lik(&self, beta: &[f64]) -> f64 {
        let mut ll = self.constant;
        for (i, &mask) in self.masks.iter().enumerate() {
            let sigma = self.eta(beta, mask).exp();
            let (n, s) = (self.sizes[i], self.totals[i]);
            ll += match self.family {
                Family::Poisson { theta0 } => {
                    let mu = theta0 * sigma;
                    if s > 0.0 { s * mu.ln() - n * mu } else { -n * mu }
                }
                Family::PoissonGamma { a, b } => {
                    let bs = b * sigma;
                    -a * n * bs.ln_1p() + if s > 0.0 { s * (bs.ln() - bs.ln_1p()) } else { 0.0 }
                }
            };
        }
        ll
    }

    /// Score vector and expected information at `beta`.
    fn score_info(&self, beta: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let mut score = DVector::zeros(self.p);
        let mut weights = Vec::with_capacity(self.masks.len());
        for (i, &mask) in self.masks.iter().enumerate() {
            let sigma = self.eta(beta, mask).exp();
            let (n, s) = (self.sizes[i], self.totals[i]);
            let (u, w) = match self.family {
                Family::Poisson { theta0 } => (s - n * theta0 * sigma, n * theta0 * sigma),
                Family::PoissonGamma { a, b } => {
                    let denom = 1.0 + b * sigma;
                    ((s - n * a * b * sigma) / denom, n * a * b * sigma / denom)
                }
            };
            score[0] += u;
            for j in 0..self.p - 1 {
                if mask >> j & 1 == 1 {
                    score[j + 1] += u;
                }
            }
            weights.push((mask, w));
        }
        (score, accumulate(self.p, weights.into_iter()))
    }
}

/// Maximum likelihood fit of `beta` by Fisher scoring with step halving.
///
/// The family parameters (`theta0`, or `a` and `b`) of `model` are treated
/// as known; its coefficients are ignored. Starts from `start` or zero and
/// retries once from a perturbed start.
pub fn fit_mle(data: &SampleSet, design: &Design, model: &ModelSpec, start: Option<&[f64]>) -> Result<FitResult> {
    let p = model.p();
    check_dim(model.k(), design.k())?;
    let lik = Likelihood::new(data, design, model.family(), p)?;
    if lik.totals.iter().all(|&t| t == 0.0) {
        return Err(DesignError::Degenerate("all counts are zero".into()));
    }
    if design.len() == p {
        if let Some(i) = lik.totals.iter().position(|&t| t == 0.0) {
            return Err(DesignError::Degenerate(format!(
                "all counts at support point {} are zero",
                design.points()[i].item
            )));
        }
    }
    if info_matrix(design, model)?.is_singular() {
        return Err(DesignError::Degenerate("design does not identify all coefficients".into()));
    }

    let first: Vec<f64> = match start {
        Some(s) => {
            check_dim(p, s.len())?;
            s.to_vec()
        }
        None => vec![0.0; p],
    };
    match scoring(&lik, first.clone()) {
        Ok(fit) => Ok(fit),
        Err(_) => {
            let perturbed: Vec<f64> = first.iter().enumerate().map(|(i, b)| b - 0.1 * (i as f64 + 1.0)).collect();
            scoring(&lik, perturbed)
        }
    }
}

fn scoring(lik: &Likelihood, mut beta: Vec<f64>) -> Result<FitResult> {
    let mut ll = lik.log_lik(&beta);
    for iteration in 0..MAX_FIT_ITER {
        let (score, info) = lik.score_info(&beta);
        if score.amax() < SCORE_TOL {
            return Ok(FitResult { beta_hat: beta, converged: true, iterations: iteration, log_lik: ll });
        }
        let Some(chol) = info.cholesky() else {
            return Err(DesignError::Degenerate("information matrix lost positive definiteness".into()));
        };
        let step = chol.solve(&score);
        let mut t = 1.0;
        loop {
            let trial: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + t * s).collect();
            let trial_ll = lik.log_lik(&trial);
            if trial_ll.is_finite() && trial_ll >= ll - 1e-12 * ll.abs().max(1.0) {
                beta = trial;
                ll = trial_ll;
                break;
            }
            t *= 0.5;
            if t < 1e-10 {
                return Err(DesignError::NonConvergence { iterations: iteration + 1 });
            }
        }
        if beta.iter().any(|b| !b.is_finite() || b.abs() > 1e3) {
            return Err(DesignError::NonConvergence { iterations: iteration + 1 });
        }
    }
    Err(DesignError::NonConvergence { iterations: MAX_FIT_ITER })
}

/// Empirical covariance of the MLE across replications against the
/// predicted `(N M(xi; beta))^{-1}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovarianceReport {
    pub replications: usize,
    pub failures: usize,
    pub n: u64,
    pub mean_beta_hat: Vec<f64>,
    pub empirical_cov: Vec<Vec<f64>>,
    pub predicted_cov: Vec<Vec<f64>>,
    /// Largest `|emp_ii - pred_ii| / pred_ii`.
    pub max_rel_error: f64,
    /// Largest `|emp_ij - pred_ij| / sqrt(pred_ii pred_jj)` for `i != j`.
    pub max_scaled_offdiag_error: f64,
    #[serde(skip)]
    pub beta_hats: Vec<Vec<f64>>,
}

impl CovarianceReport {
    /// `det` of the empirical covariance.
    pub fn generalized_variance(&self) -> f64 {
        to_matrix(&self.empirical_cov).determinant()
    }

    /// One row per successful replication, columns `beta0..betaK`.
    pub fn beta_hat_csv(&self) -> String {
        let p = self.mean_beta_hat.len();
        matrix_csv(&DMatrix::from_fn(self.beta_hats.len(), p, |i, j| self.beta_hats[i][j]))
    }
}

fn to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), rows.len(), |i, j| rows[i][j])
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

/// Simulate, refit and compare covariances. Needs at least 500
/// replications.
pub fn covariance_check(cfg: &SimConfig) -> Result<CovarianceReport> {
    cfg.validate()?;
    if cfg.replications < MIN_COVARIANCE_REPLICATIONS {
        return Err(DesignError::InvalidArgument(format!(
            "covariance check needs at least {MIN_COVARIANCE_REPLICATIONS} replications, got {}",
            cfg.replications
        )));
    }
    let n = cfg.design.total().expect("validated exact design");
    let info = info_matrix(&cfg.design, &cfg.model)?;
    let predicted = info.inverse()? / n as f64;

    let fits = map_indices_from(cfg.replications, 2, |rep| {
        let data = sample_replication(cfg, rep as u64)?;
        fit_mle(&data, &cfg.design, &cfg.model, None)
    });
    let beta_hats: Vec<Vec<f64>> = fits.iter().filter_map(|f| f.as_ref().ok()).map(|f| f.beta_hat.clone()).collect();
    let failures = cfg.replications - beta_hats.len();
    if beta_hats.len() < 2 {
        return Err(DesignError::Degenerate(format!("{failures} of {} fits failed", cfg.replications)));
    }

    let p = cfg.model.p();
    let r = beta_hats.len() as f64;
    let mean: Vec<f64> = (0..p).map(|j| beta_hats.iter().map(|b| b[j]).sum::<f64>() / r).collect();
    let empirical = DMatrix::from_fn(p, p, |i, j| {
        beta_hats.iter().map(|b| (b[i] - mean[i]) * (b[j] - mean[j])).sum::<f64>() / (r - 1.0)
    });
    let max_rel_error =
        (0..p).map(|i| (empirical[(i, i)] - predicted[(i, i)]).abs() / predicted[(i, i)]).fold(0.0, f64::max);
    let max_scaled_offdiag_error = (0..p)
        .flat_map(|i| (0..p).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| (empirical[(i, j)] - predicted[(i, j)]).abs() / (predicted[(i, i)] * predicted[(j, j)]).sqrt())
        .fold(0.0, f64::max);

    Ok(CovarianceReport {
        replications: cfg.replications,
        failures,
        n,
        mean_beta_hat: mean,
        empirical_cov: to_rows(&empirical),
        predicted_cov: to_rows(&predicted),
        max_rel_error,
        max_scaled_offdiag_error,
        beta_hats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ItemVector;
    use crate::optimizer::{round_to_exact, xi0};

    fn one_point_config(model: ModelSpec, n: u64) -> SimConfig {
        let design = Design::exact(vec![(ItemVector::zero(model.k()).unwrap(), n)]).unwrap();
        SimConfig { design, model, replications: 1, seed: 42 }
    }

    fn mean_var(xs: &[u64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<u64>() as f64 / n;
        let var = xs.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var)
    }

    #[test]
    fn poisson_sample_mean() {
        let cfg = one_point_config(ModelSpec::poisson(1.0, 0.0, vec![-1.0]).unwrap(), 100_000);
        let data = sample_responses(&cfg).unwrap();
        let (mean, _) = mean_var(&data.counts[0]);
        assert!((mean - 1.0).abs() < 3.0 * (1.0f64 / 1e5).sqrt());
    }

    #[test]
    fn gamma_mixture_moments() {
        let cfg = one_point_config(ModelSpec::poisson_gamma(2.0, 0.5, 0.0, vec![-1.0]).unwrap(), 100_000);
        let (mean, var) = mean_var(&sample_responses(&cfg).unwrap().counts[0]);
        assert!((mean - 1.0).abs() < 0.05);
        assert!((var - 1.5).abs() < 0.05 * 1.5);
    }

    #[test]
    fn seeded_sampling_is_reproducible() {
        let model = ModelSpec::poisson_gamma(2.0, 0.5, 0.0, vec![-1.0, -0.5]).unwrap();
        let design = round_to_exact(&xi0(2).unwrap(), 30).unwrap();
        let cfg = SimConfig { design, model, replications: 1, seed: 7 };
        assert_eq!(sample_responses(&cfg).unwrap(), sample_responses(&cfg).unwrap());
        assert_ne!(sample_replication(&cfg, 0).unwrap(), sample_replication(&cfg, 1).unwrap());
    }

    #[test]
    fn config_validation() {
        let model = ModelSpec::poisson(1.0, 0.0, vec![-1.0; 3]).unwrap();
        let small = SimConfig { design: round_to_exact(&xi0(3).unwrap(), 8).unwrap(), model: model.clone(), replications: 1, seed: 0 };
        assert!(small.validate().is_err());
        let approx = SimConfig { design: xi0(3).unwrap(), model: model.clone(), replications: 1, seed: 0 };
        assert!(approx.validate().is_err());
        let one = SimConfig { design: round_to_exact(&xi0(3).unwrap(), 40).unwrap(), model, replications: 1, seed: 0 };
        assert!(matches!(covariance_check(&one), Err(DesignError::InvalidArgument(_))));
    }

    #[test]
    fn all_zero_counts_are_degenerate() {
        let model = ModelSpec::poisson(1.0, 0.0, vec![-1.0; 2]).unwrap();
        let design = round_to_exact(&xi0(2).unwrap(), 30).unwrap();
        let data = SampleSet { counts: vec![vec![0; 10]; 3] };
        assert!(matches!(fit_mle(&data, &design, &model, None), Err(DesignError::Degenerate(_))));
        let data = SampleSet { counts: vec![vec![1; 10], vec![0; 10], vec![2; 10]] };
        assert!(matches!(fit_mle(&data, &design, &model, None), Err(DesignError::Degenerate(_))));
    }

    #[test]
    fn saturated_poisson_fit_is_closed_form() {
        // with one parameter per support point the MLE matches log means
        let model = ModelSpec::poisson(2.0, 0.0, vec![0.0; 2]).unwrap();
        let design = round_to_exact(&xi0(2).unwrap(), 30).unwrap();
        let data = SampleSet { counts: vec![vec![3, 5, 1, 0, 2, 4, 1, 2, 2, 1], vec![1; 10], vec![0, 0, 1, 0, 2, 0, 0, 1, 0, 1]] };
        let fit = fit_mle(&data, &design, &model, None).unwrap();
        let log_mean = |s: f64| (s / 10.0 / 2.0).ln();
        let b0 = log_mean(21.0);
        assert!((fit.beta_hat[0] - b0).abs() < 1e-8);
        assert!((fit.beta_hat[1] - (log_mean(10.0) - b0)).abs() < 1e-8);
        assert!((fit.beta_hat[2] - (log_mean(5.0) - b0)).abs() < 1e-8);
    }
}
