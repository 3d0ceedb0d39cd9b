//! Exact t-SNE: per-point bandwidths found by bisection to a target
//! perplexity, then Kullback-Leibler gradient descent with momentum and
//! early exaggeration. Quadratic in N, which is fine at the few hundred
//! samples this pipeline embeds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Pcg32;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub early_exaggeration: f64,
    pub exaggeration_iters: usize,
    pub momentum_switch_iter: usize,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            seed: 0,
            early_exaggeration: 4.0,
            exaggeration_iters: 100,
            momentum_switch_iter: 250,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Embedding2D {
    pub points: Vec<[f64; 2]>,
    pub kl: f64,
    pub perplexity: f64,
    pub iterations: usize,
    pub seed: u64,
}

/// Conditional affinities and per-point achieved perplexity.
pub struct Affinities {
    /// Row-normalized conditional probabilities, N x N, zero diagonal.
    pub conditional: Vec<f64>,
    pub achieved_perplexity: Vec<f64>,
    pub n: usize,
}

fn pairwise_sq_dists(features: &[Vec<f64>]) -> Vec<f64> {
    let n = features.len();
    let mut d2 = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..i {
            let dist: f64 = features[i]
                .iter()
                .zip(&features[j])
                .map(|(&a, &b)| (a - b) * (a - b))
                .sum();
            d2[i * n + j] = dist;
            d2[j * n + i] = dist;
        }
    }
    d2
}

/// Bisection on the precision beta_i so each row's Shannon entropy matches
/// ln(perplexity) within 1e-5, up to 50 iterations.
pub fn conditional_affinities(features: &[Vec<f64>], perplexity: f64) -> Result<Affinities> {
    let n = features.len();
    if (n as f64) < 3.0 * perplexity {
        return Err(Error::Input(format!(
            "need at least 3 x perplexity samples: N = {}, perplexity = {}",
            n, perplexity
        )));
    }
    let d2 = pairwise_sq_dists(features);
    if d2.iter().all(|&v| v == 0.0) {
        return Err(Error::Input(
            "degenerate input: all feature vectors are identical".into(),
        ));
    }
    let target_entropy = perplexity.ln();
    let mut p = vec![0.0; n * n];
    let mut achieved = vec![0.0; n];

    for i in 0..n {
        if (0..n).all(|j| j == i || d2[i * n + j] == 0.0) {
            return Err(Error::Input(format!(
                "degenerate input: sample {} coincides with every other sample",
                i
            )));
        }
        let mut beta = 1.0f64;
        let mut beta_min = f64::NEG_INFINITY;
        let mut beta_max = f64::INFINITY;
        let row = &mut p[i * n..(i + 1) * n];
        let mut entropy = 0.0;
        for _ in 0..50 {
            let mut sum = 0.0;
            for j in 0..n {
                row[j] = if j == i {
                    0.0
                } else {
                    (-beta * d2[i * n + j]).exp()
                };
                sum += row[j];
            }
            entropy = 0.0;
            if sum > 0.0 {
                for (j, v) in row.iter_mut().enumerate() {
                    if j == i {
                        continue;
                    }
                    *v /= sum;
                    if *v > 1e-12 {
                        entropy -= *v * v.ln();
                    }
                }
            }
            let diff = entropy - target_entropy;
            if diff.abs() < 1e-5 {
                break;
            }
            if diff > 0.0 {
                beta_min = beta;
                beta = if beta_max.is_infinite() {
                    beta * 2.0
                } else {
                    (beta + beta_max) / 2.0
                };
            } else {
                beta_max = beta;
                beta = if beta_min.is_infinite() {
                    beta / 2.0
                } else {
                    (beta + beta_min) / 2.0
                };
            }
        }
        achieved[i] = entropy.exp();
    }
    Ok(Affinities {
        conditional: p,
        achieved_perplexity: achieved,
        n,
    })
}

fn joint_from_conditional(cond: &[f64], n: usize) -> Vec<f64> {
    let mut joint = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            joint[i * n + j] =
                ((cond[i * n + j] + cond[j * n + i]) / (2.0 * n as f64)).max(1e-12);
        }
    }
    joint
}

/// Student-t similarities in the embedding; returns (q, raw weights).
fn low_dim_affinities(y: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut weights = vec![0.0; n * n];
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..i {
            let dy = y[i * 2] - y[j * 2];
            let dx = y[i * 2 + 1] - y[j * 2 + 1];
            let w = 1.0 / (1.0 + dy * dy + dx * dx);
            weights[i * n + j] = w;
            weights[j * n + i] = w;
            sum += 2.0 * w;
        }
    }
    let mut q = vec![0.0; n * n];
    for (qv, &w) in q.iter_mut().zip(&weights) {
        *qv = (w / sum).max(1e-12);
    }
    (q, weights)
}

fn kl_divergence(p: &[f64], q: &[f64], n: usize) -> f64 {
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let pij = p[i * n + j];
            if pij > 1e-12 {
                kl += pij * (pij / q[i * n + j]).ln();
            }
        }
    }
    kl
}

/// Run exact t-SNE into two dimensions.
pub fn tsne(features: &[Vec<f64>], config: &TsneConfig) -> Result<Embedding2D> {
    let n = features.len();
    let affinities = conditional_affinities(features, config.perplexity)?;
    let p = joint_from_conditional(&affinities.conditional, n);

    let mut rng = Pcg32::new(config.seed).substream("tsne/init");
    let mut y: Vec<f64> = (0..n * 2).map(|_| rng.normal_f64() * 1e-4).collect();
    let mut velocity = vec![0.0f64; n * 2];
    let mut gradient = vec![0.0f64; n * 2];

    for iter in 0..config.iterations {
        let exaggeration = if iter < config.exaggeration_iters {
            config.early_exaggeration
        } else {
            1.0
        };
        let momentum = if iter < config.momentum_switch_iter {
            0.5
        } else {
            0.8
        };

        let (q, weights) = low_dim_affinities(&y, n);
        gradient.iter_mut().for_each(|g| *g = 0.0);
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let pij = (p[i * n + j] * exaggeration).max(1e-12);
                let factor = 4.0 * (pij - q[i * n + j]) * weights[i * n + j];
                gradient[i * 2] += factor * (y[i * 2] - y[j * 2]);
                gradient[i * 2 + 1] += factor * (y[i * 2 + 1] - y[j * 2 + 1]);
            }
        }
        for ((yv, vel), &g) in y.iter_mut().zip(velocity.iter_mut()).zip(&gradient) {
            *vel = momentum * *vel - config.learning_rate * g;
            *yv += *vel;
        }
    }

    let (q, _) = low_dim_affinities(&y, n);
    let kl = kl_divergence(&p, &q, n);
    if !kl.is_finite() {
        return Err(Error::Numeric("t-SNE diverged to a non-finite KL".into()));
    }
    Ok(Embedding2D {
        points: y.chunks(2).map(|c| [c[0], c[1]]).collect(),
        kl,
        perplexity: config.perplexity,
        iterations: config.iterations,
        seed: config.seed,
    })
}

/// KL divergence of a freshly initialized embedding, for optimization sanity
/// checks (same seed and init scale as [`tsne`]).
pub fn initial_kl(features: &[Vec<f64>], config: &TsneConfig) -> Result<f64> {
    let n = features.len();
    let affinities = conditional_affinities(features, config.perplexity)?;
    let p = joint_from_conditional(&affinities.conditional, n);
    let mut rng = Pcg32::new(config.seed).substream("tsne/init");
    let y: Vec<f64> = (0..n * 2).map(|_| rng.normal_f64() * 1e-4).collect();
    let (q, _) = low_dim_affinities(&y, n);
    Ok(kl_divergence(&p, &q, n))
}

/// Embedding CSV: `lesion_id,label,x,y`.
pub fn write_embedding_csv(
    path: &std::path::Path,
    ids: &[String],
    labels: &[crate::data::manifest::Label],
    embedding: &Embedding2D,
) -> Result<()> {
    use std::io::Write;
    let mut file = std::fs::File::create(path)?;
    file.write_all(b"lesion_id,label,x,y\n")?;
    for ((id, label), point) in ids.iter().zip(labels).zip(&embedding.points) {
        file.write_all(format!("{},{},{},{}\n", id, label, point[0], point[1]).as_bytes())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian_clusters(
        rng: &mut Pcg32,
        centers: &[Vec<f64>],
        per_cluster: usize,
        spread: f64,
    ) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (ci, center) in centers.iter().enumerate() {
            for _ in 0..per_cluster {
                rows.push(
                    center
                        .iter()
                        .map(|&c| c + spread * rng.normal_f64())
                        .collect(),
                );
                labels.push(ci);
            }
        }
        (rows, labels)
    }

    fn knn_purity(points: &[[f64; 2]], labels: &[usize], k: usize) -> f64 {
        let n = points.len();
        let mut pure = 0usize;
        for i in 0..n {
            let mut dists: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let dy = points[i][0] - points[j][0];
                    let dx = points[i][1] - points[j][1];
                    (dy * dy + dx * dx, j)
                })
                .collect();
            dists.sort_by(|a, b| a.0.total_cmp(&b.0));
            let same = dists
                .iter()
                .take(k)
                .filter(|(_, j)| labels[*j] == labels[i])
                .count();
            if same * 2 > k {
                pure += 1;
            }
        }
        pure as f64 / n as f64
    }

    #[test]
    fn two_separated_clusters_embed_purely() {
        let mut rng = Pcg32::new(71);
        let centers = vec![vec![0.0; 10], vec![8.0; 10]];
        let (rows, labels) = gaussian_clusters(&mut rng, &centers, 40, 0.5);
        let cfg = TsneConfig {
            perplexity: 10.0,
            iterations: 400,
            seed: 3,
            ..Default::default()
        };
        let emb = tsne(&rows, &cfg).unwrap();
        assert!(emb.points.iter().all(|p| p[0].is_finite() && p[1].is_finite()));
        assert!(emb.kl >= 0.0);
        let purity = knn_purity(&emb.points, &labels, 5);
        assert!(purity >= 0.9, "purity {}", purity);
    }

    #[test]
    fn optimization_halves_the_initial_kl_on_three_clusters() {
        let mut rng = Pcg32::new(72);
        let centers = vec![vec![0.0; 8], vec![6.0; 8], {
            let mut c = vec![0.0; 8];
            c[0] = -6.0;
            c
        }];
        let (rows, _) = gaussian_clusters(&mut rng, &centers, 30, 0.4);
        let cfg = TsneConfig {
            perplexity: 12.0,
            iterations: 350,
            seed: 5,
            ..Default::default()
        };
        let start = initial_kl(&rows, &cfg).unwrap();
        let emb = tsne(&rows, &cfg).unwrap();
        assert!(
            emb.kl <= 0.5 * start,
            "final KL {} vs initial {}",
            emb.kl,
            start
        );
    }

    #[test]
    fn bisection_hits_the_target_perplexity() {
        let mut rng = Pcg32::new(73);
        let rows: Vec<Vec<f64>> = (0..120)
            .map(|_| (0..6).map(|_| rng.normal_f64()).collect())
            .collect();
        let target = 20.0;
        let aff = conditional_affinities(&rows, target).unwrap();
        for (i, &p) in aff.achieved_perplexity.iter().enumerate() {
            assert!(
                (p - target).abs() <= 1e-3,
                "point {} achieved perplexity {}",
                i,
                p
            );
        }
    }

    #[test]
    fn identical_features_error_names_the_condition() {
        let rows = vec![vec![1.0, 2.0]; 30];
        let err = tsne(&rows, &TsneConfig {
            perplexity: 5.0,
            ..Default::default()
        })
        .unwrap_err();
        match err {
            Error::Input(msg) => assert!(msg.contains("degenerate"), "{}", msg),
            other => panic!("expected Input error, got {:?}", other),
        }
    }

    #[test]
    fn too_few_samples_for_perplexity_is_an_input_error() {
        let rows = vec![vec![0.0], vec![1.0], vec![2.0]];
        assert!(tsne(&rows, &TsneConfig::default()).is_err());
    }

    #[test]
    fn seeded_runs_are_bitwise_identical() {
        let mut rng = Pcg32::new(74);
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|_| (0..4).map(|_| rng.normal_f64()).collect())
            .collect();
        let cfg = TsneConfig {
            perplexity: 8.0,
            iterations: 120,
            seed: 9,
            ..Default::default()
        };
        let a = tsne(&rows, &cfg).unwrap();
        let b = tsne(&rows, &cfg).unwrap();
        let bits = |e: &Embedding2D| -> Vec<u64> {
            e.points
                .iter()
                .flat_map(|p| [p[0].to_bits(), p[1].to_bits()])
                .collect()
        };
        assert_eq!(bits(&a), bits(&b));
        assert_eq!(a.kl.to_bits(), b.kl.to_bits());
    }
}
