//! Weighted kernel extreme learning machine.
//!
//! Fitting solves the N x N linear system `(I/C + W K) A = W T` where `K` is
//! the kernel Gram matrix, `W = diag(w_i)` holds per-sample weights (inverse
//! class counts by default, so the minority class is not drowned out), `T`
//! is the +-1 target coding, and `C` trades training error against the L2
//! norm of the implicit output weights. Prediction scores a point x as
//! `k(x)^T A`.

pub mod features;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{confusion_metrics, roc_auc, MetricsReport};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Kernel {
    Rbf { gamma: f64 },
    /// Plain inner product; used by the primal-equivalence oracle.
    Linear,
}

/// RBF kernel `exp(-gamma * ||u - v||^2)`.
pub fn rbf_kernel(u: &[f64], v: &[f64], gamma: f64) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Input(format!(
            "rbf_kernel dimension mismatch: {} vs {}",
            u.len(),
            v.len()
        )));
    }
    let d2: f64 = u.iter().zip(v).map(|(&a, &b)| (a - b) * (a - b)).sum();
    Ok((-gamma * d2).exp())
}

pub fn kernel_value(kernel: Kernel, u: &[f64], v: &[f64]) -> Result<f64> {
    match kernel {
        Kernel::Rbf { gamma } => rbf_kernel(u, v, gamma),
        Kernel::Linear => {
            if u.len() != v.len() {
                return Err(Error::Input(format!(
                    "linear kernel dimension mismatch: {} vs {}",
                    u.len(),
                    v.len()
                )));
            }
            Ok(u.iter().zip(v).map(|(&a, &b)| a * b).sum())
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let d = rows[0].len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for row in rows {
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += v / n;
            }
        }
        let mut std = vec![0.0; d];
        for row in rows {
            for ((s, &v), &m) in std.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        for s in std.iter_mut() {
            *s = s.sqrt();
            if *s < 1e-12 {
                *s = 1.0; // constant dimension: leave centered values at 0
            }
        }
        Standardizer { mean, std }
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&v, (&m, &s))| (v - m) / s)
            .collect()
    }
}

/// Fitted model: standardized training inputs, targets, weights, and the
/// solved coefficient matrix A (N x 2).
#[derive(Clone, Debug)]
pub struct KernelModel {
    pub x: Vec<Vec<f64>>,
    pub targets: Vec<[f64; 2]>,
    pub sample_weights: Vec<f64>,
    pub class_weights: [f64; 2],
    pub c: f64,
    pub kernel: Kernel,
    pub coeffs: Vec<[f64; 2]>,
    pub standardizer: Option<Standardizer>,
}

#[derive(Clone, Debug)]
pub struct WelmOptions {
    pub c: f64,
    pub kernel: Kernel,
    pub standardize: bool,
}

/// Dense LU solve with partial pivoting: `a` is n x n (consumed), `b` is
/// n x m (consumed, overwritten with the solution).
fn lu_solve(mut a: Vec<f64>, mut b: Vec<f64>, n: usize, m: usize) -> Result<Vec<f64>> {
    let mut max_pivot = 0.0f64;
    let mut min_pivot = f64::INFINITY;
    for k in 0..n {
        let mut pivot_row = k;
        let mut pivot_val = a[k * n + k].abs();
        for i in k + 1..n {
            let v = a[i * n + k].abs();
            if v > pivot_val {
                pivot_val = v;
                pivot_row = i;
            }
        }
        if pivot_val < f64::MIN_POSITIVE * 1e4 {
            return Err(Error::Numeric(format!(
                "singular kernel system at column {} (pivot {:.3e}, condition estimate overflow)",
                k, pivot_val
            )));
        }
        max_pivot = max_pivot.max(pivot_val);
        min_pivot = min_pivot.min(pivot_val);
        if pivot_row != k {
            for j in 0..n {
                a.swap(k * n + j, pivot_row * n + j);
            }
            for j in 0..m {
                b.swap(k * m + j, pivot_row * m + j);
            }
        }
        let inv = 1.0 / a[k * n + k];
        for i in k + 1..n {
            let factor = a[i * n + k] * inv;
            if factor == 0.0 {
                continue;
            }
            a[i * n + k] = 0.0;
            for j in k + 1..n {
                a[i * n + j] -= factor * a[k * n + j];
            }
            for j in 0..m {
                b[i * m + j] -= factor * b[k * m + j];
            }
        }
    }
    let cond_estimate = max_pivot / min_pivot;
    if !cond_estimate.is_finite() {
        return Err(Error::Numeric(format!(
            "kernel system condition estimate overflowed ({:e} / {:e})",
            max_pivot, min_pivot
        )));
    }
    // Back substitution.
    for k in (0..n).rev() {
        let inv = 1.0 / a[k * n + k];
        for j in 0..m {
            let mut acc = b[k * m + j];
            for i in k + 1..n {
                acc -= a[k * n + i] * b[i * m + j];
            }
            b[k * m + j] = acc * inv;
        }
    }
    Ok(b)
}

/// Kernel Gram matrix of the rows of `x`.
pub fn gram_matrix(x: &[Vec<f64>], kernel: Kernel) -> Result<Vec<f64>> {
    let n = x.len();
    let mut omega = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let v = kernel_value(kernel, &x[i], &x[j])?;
            omega[i * n + j] = v;
            omega[j * n + i] = v;
        }
    }
    Ok(omega)
}

/// Fit with explicit per-sample weights.
pub fn welm_fit_with_weights(
    features: &[Vec<f64>],
    labels: &[bool],
    weights: &[f64],
    opts: &WelmOptions,
) -> Result<KernelModel> {
    let n = features.len();
    if n < 2 {
        return Err(Error::Input(format!("need at least 2 samples, got {}", n)));
    }
    if labels.len() != n || weights.len() != n {
        return Err(Error::Input("features, labels and weights must align".into()));
    }
    if !labels.iter().any(|&l| l) || labels.iter().all(|&l| l) {
        return Err(Error::Input("both classes must be present".into()));
    }
    if opts.c <= 0.0 {
        return Err(Error::Config(format!("C must be positive, got {}", opts.c)));
    }
    if let Kernel::Rbf { gamma } = opts.kernel {
        if gamma <= 0.0 {
            return Err(Error::Config(format!("gamma must be positive, got {}", gamma)));
        }
    }

    let standardizer = if opts.standardize {
        Some(Standardizer::fit(features))
    } else {
        None
    };
    let x: Vec<Vec<f64>> = match &standardizer {
        Some(s) => features.iter().map(|r| s.apply(r)).collect(),
        None => features.to_vec(),
    };

    let targets: Vec<[f64; 2]> = labels
        .iter()
        .map(|&mal| if mal { [-1.0, 1.0] } else { [1.0, -1.0] })
        .collect();

    let omega = gram_matrix(&x, opts.kernel)?;

    // System matrix I/C + W*Omega and right-hand side W*T.
    let mut system = vec![0.0; n * n];
    let mut rhs = vec![0.0; n * 2];
    for i in 0..n {
        for j in 0..n {
            system[i * n + j] = weights[i] * omega[i * n + j];
        }
        system[i * n + i] += 1.0 / opts.c;
        rhs[i * 2] = weights[i] * targets[i][0];
        rhs[i * 2 + 1] = weights[i] * targets[i][1];
    }
    let solution = lu_solve(system.clone(), rhs.clone(), n, 2)?;

    // Residual check against the solved system.
    let mut residual2 = 0.0f64;
    let mut rhs_norm2 = 0.0f64;
    for i in 0..n {
        for col in 0..2 {
            let mut acc = 0.0;
            for j in 0..n {
                acc += system[i * n + j] * solution[j * 2 + col];
            }
            let r = acc - rhs[i * 2 + col];
            residual2 += r * r;
            rhs_norm2 += rhs[i * 2 + col] * rhs[i * 2 + col];
        }
    }
    if residual2.sqrt() > 1e-6 * rhs_norm2.sqrt().max(1e-30) {
        return Err(Error::Numeric(format!(
            "kernel solve residual {:.3e} exceeds tolerance (|rhs| = {:.3e})",
            residual2.sqrt(),
            rhs_norm2.sqrt()
        )));
    }

    let n_mal = labels.iter().filter(|&&l| l).count();
    let class_weights = [1.0 / (n - n_mal) as f64, 1.0 / n_mal as f64];
    let coeffs: Vec<[f64; 2]> = solution.chunks(2).map(|c| [c[0], c[1]]).collect();
    Ok(KernelModel {
        x,
        targets,
        sample_weights: weights.to_vec(),
        class_weights,
        c: opts.c,
        kernel: opts.kernel,
        coeffs,
        standardizer,
    })
}

/// Weighted fit: w_i is the inverse of the size of the class sample i
/// belongs to.
pub fn welm_fit(features: &[Vec<f64>], labels: &[bool], opts: &WelmOptions) -> Result<KernelModel> {
    let n_mal = labels.iter().filter(|&&l| l).count();
    let n_ben = labels.len() - n_mal;
    if n_mal == 0 || n_ben == 0 {
        return Err(Error::Input("both classes must be present".into()));
    }
    let weights: Vec<f64> = labels
        .iter()
        .map(|&mal| {
            if mal {
                1.0 / n_mal as f64
            } else {
                1.0 / n_ben as f64
            }
        })
        .collect();
    welm_fit_with_weights(features, labels, &weights, opts)
}

/// Unweighted kernel ELM: solves `(I/C + Omega) A = T` directly.
pub fn welm_fit_unweighted(
    features: &[Vec<f64>],
    labels: &[bool],
    opts: &WelmOptions,
) -> Result<KernelModel> {
    let weights = vec![1.0; features.len()];
    welm_fit_with_weights(features, labels, &weights, opts)
}

/// Scores and decision for one point. Ties resolve to benign.
pub fn welm_predict(model: &KernelModel, x: &[f64]) -> Result<([f64; 2], bool)> {
    let expected = model.x[0].len();
    let x = match &model.standardizer {
        Some(s) => {
            if x.len() != s.mean.len() {
                return Err(Error::Input(format!(
                    "feature dimension {} does not match model dimension {}",
                    x.len(),
                    s.mean.len()
                )));
            }
            s.apply(x)
        }
        None => {
            if x.len() != expected {
                return Err(Error::Input(format!(
                    "feature dimension {} does not match model dimension {}",
                    x.len(),
                    expected
                )));
            }
            x.to_vec()
        }
    };
    let mut scores = [0.0f64; 2];
    for (xi, a) in model.x.iter().zip(&model.coeffs) {
        let k = kernel_value(model.kernel, &x, xi)?;
        scores[0] += k * a[0];
        scores[1] += k * a[1];
    }
    let malignant = scores[1] > scores[0];
    Ok((scores, malignant))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperGrid {
    pub c_values: Vec<f64>,
    pub gamma_values: Vec<f64>,
}

impl Default for HyperGrid {
    fn default() -> Self {
        // C in 2^-6 .. 2^12 and gamma in 2^-10 .. 2^4, both stepping x4.
        HyperGrid {
            c_values: (-3..=6).map(|e| 4.0f64.powi(e)).collect(),
            gamma_values: (-5..=2).map(|e| 4.0f64.powi(e)).collect(),
        }
    }
}

impl HyperGrid {
    pub fn validate(&self) -> Result<()> {
        if self.c_values.is_empty() || self.gamma_values.is_empty() {
            return Err(Error::Config("hyperparameter grid must be non-empty".into()));
        }
        if self.c_values.iter().chain(&self.gamma_values).any(|&v| v <= 0.0) {
            return Err(Error::Config("grid values must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct GridOutcome {
    pub c: f64,
    pub gamma: f64,
    pub metrics: MetricsReport,
    pub model: KernelModel,
}

/// Validation metrics of a fitted model on a labeled set. The malignant
/// score column feeds the AUC.
pub fn evaluate_model(
    model: &KernelModel,
    val_x: &[Vec<f64>],
    val_labels: &[bool],
) -> Result<MetricsReport> {
    let mut decisions = Vec::with_capacity(val_x.len());
    let mut scores = Vec::with_capacity(val_x.len());
    for x in val_x {
        let (s, mal) = welm_predict(model, x)?;
        decisions.push(mal);
        scores.push(s[1]);
    }
    let mut metrics = confusion_metrics(&decisions, val_labels)?;
    metrics.auc = roc_auc(&scores, val_labels);
    Ok(metrics)
}

/// Pick the (C, gamma) cell maximizing validation G-mean. Earlier cells win
/// ties, so the scan order (C outer, gamma inner) is part of the contract.
pub fn grid_search(
    train_x: &[Vec<f64>],
    train_labels: &[bool],
    val_x: &[Vec<f64>],
    val_labels: &[bool],
    grid: &HyperGrid,
) -> Result<GridOutcome> {
    grid.validate()?;
    let mut best: Option<GridOutcome> = None;
    for &c in &grid.c_values {
        for &gamma in &grid.gamma_values {
            let opts = WelmOptions {
                c,
                kernel: Kernel::Rbf { gamma },
                standardize: true,
            };
            let model = welm_fit(train_x, train_labels, &opts)?;
            let metrics = evaluate_model(&model, val_x, val_labels)?;
            let better = match &best {
                None => true,
                Some(b) => metrics.g_mean > b.metrics.g_mean,
            };
            if better {
                best = Some(GridOutcome {
                    c,
                    gamma,
                    metrics,
                    model,
                });
            }
        }
    }
    Ok(best.expect("grid validated non-empty"))
}

/// One row per tap combination, in the shape of the layer-tap experiment
/// table: C1, C2, C3, C4, FC1, FC2, C1+C4 by default.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TapTable {
    pub pooling: features::Pooling,
    pub rows: Vec<TapRow>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TapRow {
    pub taps: String,
    pub c: f64,
    pub gamma: f64,
    pub metrics: MetricsReport,
}

impl TapTable {
    pub fn to_text(&self) -> String {
        let mut out = String::from("taps    sens  spec  gmean  auc    C        gamma\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{:<7} {:<5.2} {:<5.2} {:<6.2} {:<6.2} {:<8.4} {:<8.5}\n",
                row.taps,
                row.metrics.sensitivity,
                row.metrics.specificity,
                row.metrics.g_mean,
                row.metrics.auc,
                row.c,
                row.gamma
            ));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("taps,sensitivity,specificity,g_mean,auc,c,gamma\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                row.taps,
                row.metrics.sensitivity,
                row.metrics.specificity,
                row.metrics.g_mean,
                row.metrics.auc,
                row.c,
                row.gamma
            ));
        }
        out
    }
}

pub const DEFAULT_TAP_SETS: [&str; 7] = ["C1", "C2", "C3", "C4", "FC1", "FC2", "C1+C4"];

/// Grid-searched wELM metrics for each tap combination, on one
/// train/validation split of patches.
pub fn tap_table(
    network: &crate::model::Network<f32>,
    train: &[crate::data::patch::Patch],
    val: &[crate::data::patch::Patch],
    tap_sets: &[String],
    pooling: features::Pooling,
    grid: &HyperGrid,
) -> Result<TapTable> {
    let mut rows = Vec::with_capacity(tap_sets.len());
    for spec_str in tap_sets {
        let taps = features::parse_taps(spec_str)?;
        let (train_x, train_y, _) =
            features::extract_feature_matrix(network, train, &taps, pooling)?;
        let (val_x, val_y, _) = features::extract_feature_matrix(network, val, &taps, pooling)?;
        let outcome = grid_search(&train_x, &train_y, &val_x, &val_y, grid)?;
        rows.push(TapRow {
            taps: spec_str.clone(),
            c: outcome.c,
            gamma: outcome.gamma,
            metrics: outcome.metrics,
        });
    }
    Ok(TapTable {
        pooling,
        rows,
    })
}

#[derive(Serialize, Deserialize)]
struct WelmMeta {
    c: f64,
    kernel: Kernel,
    class_weights: [f64; 2],
    n: usize,
    d: usize,
    standardized: bool,
}

/// Persist a fitted model in the checkpoint container with record kind
/// `WELM`. Payloads are float32, per the container format.
pub fn save_welm_model(model: &KernelModel, path: &std::path::Path) -> Result<()> {
    use crate::model::checkpoint::{write_container, Container, ContainerTensor};
    let n = model.x.len();
    let d = model.x[0].len();
    let meta = WelmMeta {
        c: model.c,
        kernel: model.kernel,
        class_weights: model.class_weights,
        n,
        d,
        standardized: model.standardizer.is_some(),
    };
    let mut tensors = vec![
        ContainerTensor {
            name: "welm.x".into(),
            shape: vec![n, d],
            data: model.x.iter().flatten().map(|&v| v as f32).collect(),
        },
        ContainerTensor {
            name: "welm.targets".into(),
            shape: vec![n, 2],
            data: model.targets.iter().flatten().map(|&v| v as f32).collect(),
        },
        ContainerTensor {
            name: "welm.coeffs".into(),
            shape: vec![n, 2],
            data: model.coeffs.iter().flatten().map(|&v| v as f32).collect(),
        },
        ContainerTensor {
            name: "welm.sample_weights".into(),
            shape: vec![n],
            data: model.sample_weights.iter().map(|&v| v as f32).collect(),
        },
    ];
    if let Some(s) = &model.standardizer {
        tensors.push(ContainerTensor {
            name: "welm.mean".into(),
            shape: vec![d],
            data: s.mean.iter().map(|&v| v as f32).collect(),
        });
        tensors.push(ContainerTensor {
            name: "welm.std".into(),
            shape: vec![d],
            data: s.std.iter().map(|&v| v as f32).collect(),
        });
    }
    let container = Container {
        kind: "WELM".into(),
        config_json: serde_json::to_string(&meta)?,
        log_json: "{}".into(),
        tensors,
    };
    write_container(path, &container)
}

pub fn load_welm_model(path: &std::path::Path) -> Result<KernelModel> {
    use crate::model::checkpoint::read_container;
    let container = read_container(path)?;
    if container.kind != "WELM" {
        return Err(Error::Format(format!(
            "expected a WELM container, found kind `{}`",
            container.kind
        )));
    }
    let meta: WelmMeta = serde_json::from_str(&container.config_json)?;
    let mut by_name: std::collections::HashMap<String, crate::model::checkpoint::ContainerTensor> =
        container
            .tensors
            .into_iter()
            .map(|t| (t.name.clone(), t))
            .collect();
    let mut take = |name: &str| -> Result<Vec<f32>> {
        by_name
            .remove(name)
            .map(|t| t.data)
            .ok_or_else(|| Error::Format(format!("WELM container lacks `{}`", name)))
    };
    let x_flat = take("welm.x")?;
    let targets_flat = take("welm.targets")?;
    let coeffs_flat = take("welm.coeffs")?;
    let sample_weights = take("welm.sample_weights")?;
    let standardizer = if meta.standardized {
        Some(Standardizer {
            mean: take("welm.mean")?.iter().map(|&v| v as f64).collect(),
            std: take("welm.std")?.iter().map(|&v| v as f64).collect(),
        })
    } else {
        None
    };
    let (n, d) = (meta.n, meta.d);
    if x_flat.len() != n * d || targets_flat.len() != n * 2 || coeffs_flat.len() != n * 2 {
        return Err(Error::Format("WELM tensor sizes don't match metadata".into()));
    }
    Ok(KernelModel {
        x: x_flat
            .chunks(d)
            .map(|c| c.iter().map(|&v| v as f64).collect())
            .collect(),
        targets: targets_flat
            .chunks(2)
            .map(|c| [c[0] as f64, c[1] as f64])
            .collect(),
        sample_weights: sample_weights.iter().map(|&v| v as f64).collect(),
        class_weights: meta.class_weights,
        c: meta.c,
        kernel: meta.kernel,
        coeffs: coeffs_flat
            .chunks(2)
            .map(|c| [c[0] as f64, c[1] as f64])
            .collect(),
        standardizer,
    })
}
