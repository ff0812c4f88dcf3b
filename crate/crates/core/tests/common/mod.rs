//! Test-side reference implementations. Nothing here calls into the library's
//! numeric paths: GP quantities use a dense Gauss-Jordan solve, fronts use
//! pairwise dominance, areas use Monte-Carlo sampling.
#![allow(dead_code)]

use rand::Rng;

use cloudsearch_core::surrogate::GpHyperparams;

pub fn matern(a: [f64; 2], b: [f64; 2], h: &GpHyperparams) -> f64 {
    let r = (((a[0] - b[0]) / h.lengthscales[0]).powi(2) + ((a[1] - b[1]) / h.lengthscales[1]).powi(2)).sqrt();
    let s = 5f64.sqrt() * r;
    h.signal_variance * (1.0 + s + s * s / 3.0) * (-s).exp()
}

/// Inverse and log-determinant by Gauss-Jordan elimination with partial pivoting.
pub fn invert(mut a: Vec<Vec<f64>>) -> (Vec<Vec<f64>>, f64) {
    let n = a.len();
    let mut inv: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect())
        .collect();
    let mut logdet = 0.0;
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        inv.swap(col, pivot);
        let p = a[col][col];
        logdet += p.abs().ln();
        for j in 0..n {
            a[col][j] /= p;
            inv[col][j] /= p;
        }
        for row in 0..n {
            if row != col {
                let f = a[row][col];
                if f != 0.0 {
                    for j in 0..n {
                        a[row][j] -= f * a[col][j];
                        inv[row][j] -= f * inv[col][j];
                    }
                }
            }
        }
    }
    (inv, logdet)
}

fn gram(points: &[[f64; 2]], h: &GpHyperparams, extra_diag: f64) -> Vec<Vec<f64>> {
    points
        .iter()
        .enumerate()
        .map(|(i, a)| {
            points
                .iter()
                .enumerate()
                .map(|(j, b)| matern(*a, *b, h) + if i == j { h.noise_variance + extra_diag } else { 0.0 })
                .collect()
        })
        .collect()
}

fn mat_vec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter()
        .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Latent posterior `(mean, stddev)` with targets centered on their mean.
pub fn gp_posterior(points: &[[f64; 2]], targets: &[f64], h: &GpHyperparams, jitter: f64, x: [f64; 2]) -> (f64, f64) {
    let offset = targets.iter().sum::<f64>() / targets.len() as f64;
    let y: Vec<f64> = targets.iter().map(|t| t - offset).collect();
    let (inv, _) = invert(gram(points, h, jitter));
    let k: Vec<f64> = points.iter().map(|p| matern(*p, x, h)).collect();
    let mean = offset + dot(&k, &mat_vec(&inv, &y));
    let var = h.signal_variance - dot(&k, &mat_vec(&inv, &k));
    (mean, var.max(0.0).sqrt())
}

pub fn log_marginal_likelihood(points: &[[f64; 2]], targets: &[f64], h: &GpHyperparams) -> f64 {
    let offset = targets.iter().sum::<f64>() / targets.len() as f64;
    let y: Vec<f64> = targets.iter().map(|t| t - offset).collect();
    let (inv, logdet) = invert(gram(points, h, 0.0));
    let n = points.len() as f64;
    -0.5 * dot(&y, &mat_vec(&inv, &y)) - 0.5 * logdet - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
}

pub fn random_hyperparams<R: Rng>(rng: &mut R) -> GpHyperparams {
    let log_uniform = |rng: &mut R, lo: f64, hi: f64| (rng.random_range(lo.ln()..hi.ln())).exp();
    GpHyperparams {
        lengthscales: [log_uniform(rng, 0.05, 2.0), log_uniform(rng, 0.05, 2.0)],
        signal_variance: log_uniform(rng, 0.01, 10.0),
        noise_variance: log_uniform(rng, 1e-3, 1.0),
    }
}

pub fn random_points<R: Rng>(rng: &mut R, n: usize) -> (Vec<[f64; 2]>, Vec<f64>) {
    let pts = (0..n).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect();
    let ys = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
    (pts, ys)
}

/// Indices of points not dominated by any other; among identical points
/// only the one with the smallest `key` survives.
pub fn dominance_front(points: &[(f64, f64)], key: impl Fn(usize) -> (usize, u32)) -> Vec<usize> {
    (0..points.len())
        .filter(|&i| {
            let (ri, ci) = points[i];
            !points.iter().enumerate().any(|(j, &(rj, cj))| {
                let dominates = rj <= ri && cj <= ci && (rj < ri || cj < ci);
                let duplicate_ahead = j != i && rj == ri && cj == ci && key(j) < key(i);
                dominates || duplicate_ahead
            })
        })
        .collect()
}

/// Fraction of `samples` uniform points in the unit square dominated toward
/// (1,1) by some front point, i.e. lying in some `[0,x]×[0,y]`.
pub fn monte_carlo_area<R: Rng>(front: &[[f64; 2]], samples: usize, rng: &mut R) -> f64 {
    let mut hits = 0usize;
    for _ in 0..samples {
        let u: f64 = rng.random();
        let v: f64 = rng.random();
        if front.iter().any(|p| u <= p[0] && v <= p[1]) {
            hits += 1;
        }
    }
    hits as f64 / samples as f64
}

pub fn std_normal_cdf(z: f64) -> f64 {
    // Taylor series of erf; adequate for |z| <= 6 at double precision with enough terms.
    let x = z / 2f64.sqrt();
    if x.abs() > 4.0 {
        return if z > 0.0 { 1.0 } else { 0.0 };
    }
    let mut term = x;
    let mut sum = x;
    for n in 1..200 {
        term *= -x * x / n as f64;
        sum += term / (2 * n + 1) as f64;
    }
    0.5 * (1.0 + 2.0 / std::f64::consts::PI.sqrt() * sum)
}
