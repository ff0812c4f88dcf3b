//! Exact Gaussian-process regression with a Matérn-5/2 ARD kernel.
//!
//! Targets are centered on their sample mean (a constant prior mean) and the
//! GP models the residual. Hyperparameters are fitted by projected gradient
//! ascent on the log marginal likelihood in log-parameter space, started from
//! a fixed set of pseudo-random points so the fit is deterministic.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_training_set, Posterior};
use crate::error::{Error, Result};

/// Number of optimizer starts per fit.
pub const GP_RESTARTS: usize = 8;

const RESTART_SEED: u64 = 0x6770_5f66_6974;
const MAX_ASCENT_STEPS: usize = 60;
const JITTER_LADDER: [f64; 5] = [1e-8, 1e-7, 1e-6, 1e-5, 1e-4];
const SQRT5: f64 = 2.236_067_977_499_79;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpHyperparams {
    pub lengthscales: [f64; 2],
    pub signal_variance: f64,
    pub noise_variance: f64,
}

impl GpHyperparams {
    /// `(ln l1, ln l2, ln σf², ln σn²)`, the coordinates the gradient is taken in.
    pub fn to_log(self) -> [f64; 4] {
        [
            self.lengthscales[0].ln(),
            self.lengthscales[1].ln(),
            self.signal_variance.ln(),
            self.noise_variance.ln(),
        ]
    }

    pub fn from_log(theta: &[f64; 4]) -> Self {
        Self {
            lengthscales: [theta[0].exp(), theta[1].exp()],
            signal_variance: theta[2].exp(),
            noise_variance: theta[3].exp(),
        }
    }

    fn validate(&self) -> Result<()> {
        let all = [
            self.lengthscales[0],
            self.lengthscales[1],
            self.signal_variance,
            self.noise_variance,
        ];
        if all.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(Error::validation(format!("GP hyperparameters must be > 0: {self:?}")))
        }
    }
}

/// Box constraints for the hyperparameter search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperBounds {
    pub lengthscale: (f64, f64),
    pub signal_variance: (f64, f64),
    pub noise_variance: (f64, f64),
}

impl Default for HyperBounds {
    fn default() -> Self {
        Self {
            lengthscale: (0.01, 2.0),
            signal_variance: (1e-4, 100.0),
            noise_variance: (1e-6, 1.0),
        }
    }
}

impl HyperBounds {
    fn log_box(&self) -> [(f64, f64); 4] {
        let ln = |(a, b): (f64, f64)| (a.ln(), b.ln());
        [
            ln(self.lengthscale),
            ln(self.lengthscale),
            ln(self.signal_variance),
            ln(self.noise_variance),
        ]
    }
}

/// `σ_f² (1 + √5 r + 5r²/3) exp(−√5 r)` with `r` the lengthscale-scaled distance.
pub fn matern52(a: [f64; 2], b: [f64; 2], params: &GpHyperparams) -> f64 {
    let r = scaled_distance(a, b, &params.lengthscales);
    let sr = SQRT5 * r;
    params.signal_variance * (1.0 + sr + sr * sr / 3.0) * (-sr).exp()
}

fn scaled_distance(a: [f64; 2], b: [f64; 2], ls: &[f64; 2]) -> f64 {
    let d0 = (a[0] - b[0]) / ls[0];
    let d1 = (a[1] - b[1]) / ls[1];
    (d0 * d0 + d1 * d1).sqrt()
}

fn centered(targets: &[f64]) -> (f64, DVector<f64>) {
    let offset = targets.iter().sum::<f64>() / targets.len() as f64;
    (
        offset,
        DVector::from_iterator(targets.len(), targets.iter().map(|t| t - offset)),
    )
}

/// Factorizes `K + σ_n² I`, escalating diagonal jitter if needed.
fn factorize(points: &[[f64; 2]], params: &GpHyperparams) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let n = points.len();
    let mut k = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = params.signal_variance + params.noise_variance;
        for j in 0..i {
            let v = matern52(points[i], points[j], params);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    if let Some(chol) = Cholesky::new(k.clone()) {
        return Ok((chol, 0.0));
    }
    for jitter in JITTER_LADDER {
        let mut kj = k.clone();
        for i in 0..n {
            kj[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(kj) {
            return Ok((chol, jitter));
        }
    }
    Err(Error::Numeric(format!(
        "Gram matrix not positive definite after jitter {}",
        JITTER_LADDER[JITTER_LADDER.len() - 1]
    )))
}

fn lml_from_factor(chol: &Cholesky<f64, Dyn>, y: &DVector<f64>) -> (f64, DVector<f64>) {
    let alpha = chol.solve(y);
    let log_det_half: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
    let n = y.len() as f64;
    (-0.5 * y.dot(&alpha) - log_det_half - 0.5 * n * LN_2PI, alpha)
}

/// Log marginal likelihood of the mean-centered targets.
pub fn log_marginal_likelihood(points: &[[f64; 2]], targets: &[f64], params: &GpHyperparams) -> Result<f64> {
    check_training_set(points, targets)?;
    params.validate()?;
    let (_, y) = centered(targets);
    let (chol, _) = factorize(points, params)?;
    Ok(lml_from_factor(&chol, &y).0)
}

/// Log marginal likelihood and its gradient with respect to
/// `(ln l₁, ln l₂, ln σ_f², ln σ_n²)`.
pub fn log_marginal_likelihood_gradient(
    points: &[[f64; 2]],
    targets: &[f64],
    params: &GpHyperparams,
) -> Result<(f64, [f64; 4])> {
    check_training_set(points, targets)?;
    params.validate()?;
    let (_, y) = centered(targets);
    lml_and_grad(points, &y, params)
}

fn lml_and_grad(points: &[[f64; 2]], y: &DVector<f64>, params: &GpHyperparams) -> Result<(f64, [f64; 4])> {
    let (chol, _) = factorize(points, params)?;
    let (lml, alpha) = lml_from_factor(&chol, y);
    let k_inv = chol.inverse();
    let n = points.len();
    let ls = params.lengthscales;
    let sf2 = params.signal_variance;

    // dL/dθ = ½ Σ_ij (αα' − K⁻¹)_ij ∂K_ij/∂θ
    let mut grad = [0.0; 4];
    for i in 0..n {
        let w_ii = alpha[i] * alpha[i] - k_inv[(i, i)];
        grad[2] += 0.5 * w_ii * sf2;
        grad[3] += 0.5 * w_ii * params.noise_variance;
        for j in 0..i {
            // Off-diagonal terms appear twice in the symmetric sum.
            let w = alpha[i] * alpha[j] - k_inv[(i, j)];
            let d0 = (points[i][0] - points[j][0]) / ls[0];
            let d1 = (points[i][1] - points[j][1]) / ls[1];
            let sr = SQRT5 * (d0 * d0 + d1 * d1).sqrt();
            let e = (-sr).exp();
            let k = sf2 * (1.0 + sr + sr * sr / 3.0) * e;
            let common = sf2 * (5.0 / 3.0) * (1.0 + sr) * e;
            grad[0] += w * common * d0 * d0;
            grad[1] += w * common * d1 * d1;
            grad[2] += w * k;
        }
    }
    Ok((lml, grad))
}

#[derive(Debug, Clone)]
pub struct GpModel {
    points: Vec<[f64; 2]>,
    targets: Vec<f64>,
    offset: f64,
    params: GpHyperparams,
    jitter: f64,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    log_likelihood: f64,
}

impl GpModel {
    /// Conditions a GP with fixed hyperparameters on the training data.
    pub fn with_hyperparams(points: &[[f64; 2]], targets: &[f64], params: GpHyperparams) -> Result<Self> {
        check_training_set(points, targets)?;
        params.validate()?;
        let (offset, y) = centered(targets);
        let (chol, jitter) = factorize(points, &params)?;
        let (log_likelihood, alpha) = lml_from_factor(&chol, &y);
        Ok(Self {
            points: points.to_vec(),
            targets: targets.to_vec(),
            offset,
            params,
            jitter,
            chol,
            alpha,
            log_likelihood,
        })
    }

    pub fn hyperparams(&self) -> &GpHyperparams {
        &self.params
    }

    pub fn log_likelihood(&self) -> f64 {
        self.log_likelihood
    }

    /// Prior mean: the average training target.
    pub fn mean_offset(&self) -> f64 {
        self.offset
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn training_points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn training_targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn dump(&self) -> String {
        format!(
            "model=gp\nkernel=matern52\nlengthscale_vm={}\nlengthscale_size={}\nsignal_variance={}\nnoise_variance={}\njitter={}\nmean_offset={}\nlog_marginal_likelihood={}\ntraining_points={}\n",
            self.params.lengthscales[0],
            self.params.lengthscales[1],
            self.params.signal_variance,
            self.params.noise_variance,
            self.jitter,
            self.offset,
            self.log_likelihood,
            self.points.len()
        )
    }
}

fn project(theta: &mut [f64; 4], bounds: &[(f64, f64); 4]) {
    for (v, (lo, hi)) in theta.iter_mut().zip(bounds) {
        *v = v.clamp(*lo, *hi);
    }
}

/// Monotone projected gradient ascent from `start`; returns the best point
/// reached and its likelihood. Never returns a likelihood below the start's.
fn ascend(points: &[[f64; 2]], y: &DVector<f64>, start: [f64; 4], bounds: &[(f64, f64); 4]) -> Option<([f64; 4], f64)> {
    let eval = |theta: &[f64; 4]| lml_and_grad(points, y, &GpHyperparams::from_log(theta)).ok();
    let value = |theta: &[f64; 4]| {
        let p = GpHyperparams::from_log(theta);
        factorize(points, &p).ok().map(|(c, _)| lml_from_factor(&c, y).0)
    };

    let mut theta = start;
    project(&mut theta, bounds);
    let (mut f, mut g) = eval(&theta)?;
    let mut step = 0.5;
    for _ in 0..MAX_ASCENT_STEPS {
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-8 {
            break;
        }
        let mut accepted = None;
        while step > 1e-6 {
            let mut cand = theta;
            for (c, gi) in cand.iter_mut().zip(&g) {
                *c += step * gi / norm;
            }
            project(&mut cand, bounds);
            if cand == theta {
                break;
            }
            match value(&cand) {
                Some(fc) if fc > f => {
                    accepted = Some((cand, fc));
                    break;
                }
                _ => step *= 0.5,
            }
        }
        let Some((cand, fc)) = accepted else { break };
        let gain = fc - f;
        theta = cand;
        let (fe, ge) = eval(&theta)?;
        f = fe;
        g = ge;
        step = (step * 1.5).min(2.0);
        if gain < 1e-9 * (1.0 + f.abs()) {
            break;
        }
    }
    Some((theta, f))
}

/// Fits hyperparameters by maximizing the log marginal likelihood from
/// [`GP_RESTARTS`] fixed pseudo-random starts.
pub fn gp_fit(points: &[[f64; 2]], targets: &[f64]) -> Result<GpModel> {
    gp_fit_with(points, targets, &HyperBounds::default())
}

pub(crate) fn gp_fit_with(points: &[[f64; 2]], targets: &[f64], bounds: &HyperBounds) -> Result<GpModel> {
    check_training_set(points, targets)?;
    let (_, y) = centered(targets);
    let log_box = bounds.log_box();
    let mut rng = ChaCha8Rng::seed_from_u64(RESTART_SEED);

    let mut best: Option<([f64; 4], f64)> = None;
    for _ in 0..GP_RESTARTS {
        let start: [f64; 4] = std::array::from_fn(|k| rng.random_range(log_box[k].0..=log_box[k].1));
        if let Some((theta, f)) = ascend(points, &y, start, &log_box) {
            if best.is_none_or(|(_, bf)| f > bf) {
                best = Some((theta, f));
            }
        }
    }
    let (theta, _) = best.ok_or_else(|| Error::Numeric("GP likelihood could not be evaluated at any start".into()))?;
    GpModel::with_hyperparams(points, targets, GpHyperparams::from_log(&theta))
}

/// Posterior of the latent function (observation noise excluded).
pub fn gp_predict(model: &GpModel, point: [f64; 2]) -> Posterior {
    let n = model.points.len();
    let k_star = DVector::from_iterator(n, model.points.iter().map(|p| matern52(*p, point, &model.params)));
    let mean = model.offset + k_star.dot(&model.alpha);
    let v = model
        .chol
        .l_dirty()
        .solve_lower_triangular(&k_star)
        .expect("Cholesky factor has a positive diagonal");
    let var = (model.params.signal_variance - v.dot(&v)).max(0.0);
    Posterior {
        mean,
        stddev: var.sqrt(),
    }
}
