//! Subcommand implementations. Each command resolves its configuration
//! (config file first, flags win), runs the corresponding library
//! operation, and writes a run manifest of produced artifacts plus the
//! configuration fingerprint into the output directory.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use focusclf_core::cam::{build_cam_head, compute_cam, finetune_cam, save_cam_head, CamTrainConfig};
use focusclf_core::data::{
    augment, bundle, load_manifest, original_patches, stratified_folds, CaseLibrary, FoldSplit,
    Label, LesionRecord,
};
use focusclf_core::error::{Error, Result};
use focusclf_core::metrics::{confusion_metrics, roc_auc};
use focusclf_core::model::{cross_validate, Checkpoint};
use focusclf_core::report::{fingerprint, write_run_manifest, RunManifest};
use focusclf_core::rng::Pcg32;
use focusclf_core::synth;
use focusclf_core::tsne::{tsne, write_embedding_csv};
use focusclf_core::welm::{
    features::{self, parse_taps, Pooling},
    grid_search, save_welm_model, tap_table, HyperGrid, TapRow, TapTable,
};

use crate::config::{with_jobs, RunConfig};

fn finish_run(out: &Path, command: &str, config: impl serde::Serialize, artifacts: Vec<String>) -> Result<()> {
    let config_value = serde_json::to_value(&config)?;
    let manifest = RunManifest {
        command: command.to_string(),
        config_fingerprint: fingerprint(&config_value),
        config: config_value,
        artifacts,
    };
    write_run_manifest(out, &manifest)?;
    Ok(())
}

fn parse_list(list: &str) -> Vec<String> {
    list.split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// synth

pub struct SynthArgs {
    pub out: PathBuf,
    pub lesions: usize,
    pub ratio: f64,
    pub seed: u64,
    pub depth: usize,
    pub height: usize,
    pub width: usize,
    pub noise: f64,
    pub t2w_only_signal: bool,
}

pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    if args.lesions < 20 {
        return Err(Error::Input(format!(
            "synthetic datasets need at least 20 lesions, got {}",
            args.lesions
        )));
    }
    let mut cfg = synth::SynthConfig {
        lesions: args.lesions,
        malignant_fraction: args.ratio,
        dims: (args.depth, args.height, args.width),
        seed: args.seed,
        noise: args.noise,
        ..Default::default()
    };
    if args.t2w_only_signal {
        // Class signal only on channel 0; functional channels identical
        // across classes (both discs).
        cfg.malignant_contrast = [-0.40, -0.20, 0.10];
        cfg.benign_contrast = [0.40, -0.20, 0.10];
        cfg.benign_dwi_ring = false;
    }
    let ds = synth::generate(&cfg);
    std::fs::create_dir_all(&args.out)?;
    let manifest_path = synth::write_to_dir(&ds, &args.out)?;
    let mut artifacts = vec![manifest_path.display().to_string()];
    artifacts.push(args.out.join("synthetic").display().to_string());
    finish_run(&args.out, "synth", &cfg, artifacts)?;
    println!(
        "synth: {} lesions ({} malignant) under {}",
        ds.records.len(),
        ds.records
            .iter()
            .filter(|r| r.label == Label::Malignant)
            .count(),
        args.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// extract-patches / augment

pub fn cmd_extract_patches(config: &RunConfig) -> Result<()> {
    config.validate_paths()?;
    let out = config.require_out()?.to_path_buf();
    let records = load_manifest(config.require_manifest()?, true)?;
    let lib = CaseLibrary::load(&records, &config.data_root())?;
    let patches = original_patches(&lib, &records, config.patch_size, &config.modalities)?;
    std::fs::create_dir_all(&out)?;
    bundle::write_bundle(&out, &patches)?;
    finish_run(
        &out,
        "extract-patches",
        config,
        vec![
            out.join(bundle::SIDECAR).display().to_string(),
            out.join(bundle::RASTER_DIR).display().to_string(),
        ],
    )?;
    println!("extract-patches: {} patches under {}", patches.len(), out.display());
    Ok(())
}

pub fn cmd_augment(config: &RunConfig) -> Result<()> {
    config.validate_paths()?;
    let out = config.require_out()?.to_path_buf();
    let seed = config.require_seed()?;
    let records = load_manifest(config.require_manifest()?, false)?;
    let lib = CaseLibrary::load(&records, &config.data_root())?;
    let rng = Pcg32::new(seed).substream("augment");
    let patches = augment(
        &lib,
        &records,
        config.patch_size,
        &config.modalities,
        config.augment_policy,
        &rng,
    )?;
    std::fs::create_dir_all(&out)?;
    bundle::write_bundle(&out, &patches)?;
    finish_run(
        &out,
        "augment",
        config,
        vec![
            out.join(bundle::SIDECAR).display().to_string(),
            out.join(bundle::RASTER_DIR).display().to_string(),
        ],
    )?;
    println!("augment: {} patches under {}", patches.len(), out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// cv-train

pub fn cmd_cv_train(config: &RunConfig) -> Result<()> {
    config.validate_paths()?;
    let out = config.require_out()?.to_path_buf();
    let seed = config.require_seed()?;
    let records = load_manifest(config.require_manifest()?, false)?;
    let lib = CaseLibrary::load(&records, &config.data_root())?;
    let model = config.resolved_model()?;
    let rng = Pcg32::new(seed);

    let result = with_jobs(config.jobs, || {
        cross_validate(
            &lib,
            &records,
            &model,
            config.folds,
            config.augment_policy,
            &rng,
        )
    })?;

    std::fs::create_dir_all(&out)?;
    let mut artifacts = Vec::new();
    for fold in &result.folds {
        let path = out.join(format!("fold_{:02}.fclf", fold.fold));
        fold.checkpoint.save(&path)?;
        artifacts.push(path.display().to_string());
    }
    let folds_path = out.join("folds.json");
    result.split.save(&folds_path)?;
    artifacts.push(folds_path.display().to_string());

    let summary_json = out.join("summary.json");
    let mut json = serde_json::to_string_pretty(&result.summary)?;
    json.push('\n');
    write_text(&summary_json, &json)?;
    write_text(&out.join("summary.txt"), &result.summary.to_text())?;
    write_text(&out.join("summary.csv"), &result.summary.to_csv())?;
    artifacts.push(summary_json.display().to_string());
    artifacts.push(out.join("summary.txt").display().to_string());
    artifacts.push(out.join("summary.csv").display().to_string());

    let resolved = out.join("resolved_config.json");
    let mut cfg_json = serde_json::to_string_pretty(config)?;
    cfg_json.push('\n');
    write_text(&resolved, &cfg_json)?;
    artifacts.push(resolved.display().to_string());

    finish_run(&out, "cv-train", config, artifacts)?;
    print!("{}", result.summary.to_text());
    Ok(())
}

// ---------------------------------------------------------------------------
// predict

pub struct PredictArgs {
    pub checkpoint: PathBuf,
    pub patches: PathBuf,
    pub out: PathBuf,
}

fn provenance_tag(p: &focusclf_core::data::Provenance) -> String {
    match p {
        focusclf_core::data::Provenance::Original => "original".to_string(),
        focusclf_core::data::Provenance::Rotated { angle_deg } => format!("rot{}", angle_deg),
    }
}

pub fn cmd_predict(args: &PredictArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let patches = bundle::read_bundle(&args.patches)?;
    std::fs::create_dir_all(&args.out)?;
    let path = args.out.join("predictions.csv");
    let mut file = std::fs::File::create(&path)?;
    file.write_all(b"lesion_id,provenance,label,p_benign,p_malignant,decision\n")?;
    for patch in &patches {
        let (pb, pm) = ckpt.network.predict(patch)?;
        let decision = if pm > pb { "malignant" } else { "benign" };
        file.write_all(
            format!(
                "{},{},{},{},{},{}\n",
                patch.record.lesion_id,
                provenance_tag(&patch.provenance),
                patch.record.label,
                pb,
                pm,
                decision
            )
            .as_bytes(),
        )?;
    }
    // A labels CSV for the originals, ready for `eval`.
    let labels_path = args.out.join("labels.csv");
    let originals: Vec<LesionRecord> = {
        let mut seen = std::collections::BTreeSet::new();
        patches
            .iter()
            .filter(|p| seen.insert(p.record.lesion_id.clone()))
            .map(|p| p.record.clone())
            .collect()
    };
    write_labels_csv(&labels_path, &originals)?;
    finish_run(
        &args.out,
        "predict",
        serde_json::json!({
            "checkpoint": args.checkpoint.display().to_string(),
            "patches": args.patches.display().to_string(),
        }),
        vec![path.display().to_string(), labels_path.display().to_string()],
    )?;
    println!("predict: {} rows -> {}", patches.len(), path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// features

pub struct FeaturesArgs {
    pub checkpoint: PathBuf,
    pub patches: PathBuf,
    pub taps: String,
    pub pooling: String,
    pub out: PathBuf,
}

pub fn cmd_features(args: &FeaturesArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let patches = bundle::read_bundle(&args.patches)?;
    let taps = parse_taps(&args.taps)?;
    let pooling: Pooling = args.pooling.parse()?;
    let rows: Vec<features::FeatureVector> = patches
        .iter()
        .map(|p| features::extract_features(&ckpt.network, p, &taps, pooling))
        .collect::<Result<Vec<_>>>()?;
    std::fs::create_dir_all(&args.out)?;
    let path = args.out.join("features.csv");
    features::write_features_csv(&path, &rows)?;
    finish_run(
        &args.out,
        "features",
        serde_json::json!({
            "checkpoint": args.checkpoint.display().to_string(),
            "patches": args.patches.display().to_string(),
            "taps": args.taps,
            "pooling": args.pooling,
        }),
        vec![path.display().to_string()],
    )?;
    println!(
        "features: {} rows x {} dims -> {}",
        rows.len(),
        rows.first().map(|r| r.values.len()).unwrap_or(0),
        path.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// welm

pub struct WelmArgs {
    pub features: Option<PathBuf>,
    pub folds: PathBuf,
    pub out: PathBuf,
    pub grid_c: Option<String>,
    pub grid_gamma: Option<String>,
    pub checkpoint: Option<PathBuf>,
    pub patches: Option<PathBuf>,
    pub fold: usize,
    pub tap_sets: Option<String>,
    pub pooling: String,
}

fn parse_grid(grid_c: &Option<String>, grid_gamma: &Option<String>) -> Result<HyperGrid> {
    let mut grid = HyperGrid::default();
    if let Some(cs) = grid_c {
        grid.c_values = parse_list(cs)
            .iter()
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|e| Error::Input(format!("bad C value `{}`: {}", v, e)))
            })
            .collect::<Result<Vec<_>>>()?;
    }
    if let Some(gs) = grid_gamma {
        grid.gamma_values = parse_list(gs)
            .iter()
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|e| Error::Input(format!("bad gamma value `{}`: {}", v, e)))
            })
            .collect::<Result<Vec<_>>>()?;
    }
    grid.validate()?;
    Ok(grid)
}

pub fn cmd_welm(args: &WelmArgs) -> Result<()> {
    let grid = parse_grid(&args.grid_c, &args.grid_gamma)?;
    let split = FoldSplit::load(&args.folds)?;
    std::fs::create_dir_all(&args.out)?;

    if let Some(features_path) = &args.features {
        // Per-fold grid search over a single feature matrix.
        let rows = features::read_features_csv(features_path)?;
        let mut artifacts = Vec::new();
        let mut fold_rows = Vec::new();
        for fold in 0..split.k {
            let mut train_x = Vec::new();
            let mut train_y = Vec::new();
            let mut val_x = Vec::new();
            let mut val_y = Vec::new();
            for row in &rows {
                let in_val = split.fold_of(&row.lesion_id) == Some(fold);
                let mal = row.label == Label::Malignant;
                if in_val {
                    val_x.push(row.values.clone());
                    val_y.push(mal);
                } else {
                    train_x.push(row.values.clone());
                    train_y.push(mal);
                }
            }
            let outcome = grid_search(&train_x, &train_y, &val_x, &val_y, &grid)?;
            let model_path = args.out.join(format!("welm_fold_{:02}.fclf", fold));
            save_welm_model(&outcome.model, &model_path)?;
            artifacts.push(model_path.display().to_string());
            let mut metrics = outcome.metrics.clone();
            metrics.fold = Some(fold);
            fold_rows.push(TapRow {
                taps: "features".into(),
                c: outcome.c,
                gamma: outcome.gamma,
                metrics,
            });
        }
        let table = TapTable {
            pooling: args.pooling.parse()?,
            rows: fold_rows,
        };
        let json_path = args.out.join("welm_summary.json");
        let mut json = serde_json::to_string_pretty(&table)?;
        json.push('\n');
        write_text(&json_path, &json)?;
        write_text(&args.out.join("welm_summary.txt"), &table.to_text())?;
        write_text(&args.out.join("welm_summary.csv"), &table.to_csv())?;
        artifacts.push(json_path.display().to_string());
        finish_run(
            &args.out,
            "welm",
            serde_json::json!({
                "features": features_path.display().to_string(),
                "folds": args.folds.display().to_string(),
                "grid": &grid,
            }),
            artifacts,
        )?;
        print!("{}", table.to_text());
        return Ok(());
    }

    // Tap-table mode: extract features per tap set from a checkpoint on one
    // designated validation fold.
    let checkpoint_path = args
        .checkpoint
        .as_ref()
        .ok_or_else(|| Error::Input("welm needs either --features or --checkpoint".into()))?;
    let patches_path = args
        .patches
        .as_ref()
        .ok_or_else(|| Error::Input("tap-table mode needs --patches".into()))?;
    let ckpt = Checkpoint::load(checkpoint_path)?;
    let patches = bundle::read_bundle(patches_path)?;
    let (train, val): (Vec<_>, Vec<_>) = patches
        .into_iter()
        .partition(|p| split.fold_of(&p.record.lesion_id) != Some(args.fold));
    if val.is_empty() {
        return Err(Error::Input(format!(
            "no patches fall in validation fold {}",
            args.fold
        )));
    }
    let tap_sets: Vec<String> = match &args.tap_sets {
        Some(s) => parse_list(s),
        None => focusclf_core::welm::DEFAULT_TAP_SETS
            .iter()
            .map(|s| s.to_string())
            .collect(),
    };
    let pooling: Pooling = args.pooling.parse()?;
    let table = tap_table(&ckpt.network, &train, &val, &tap_sets, pooling, &grid)?;
    let json_path = args.out.join("tap_table.json");
    let mut json = serde_json::to_string_pretty(&table)?;
    json.push('\n');
    write_text(&json_path, &json)?;
    write_text(&args.out.join("tap_table.txt"), &table.to_text())?;
    write_text(&args.out.join("tap_table.csv"), &table.to_csv())?;
    finish_run(
        &args.out,
        "welm",
        serde_json::json!({
            "checkpoint": checkpoint_path.display().to_string(),
            "patches": patches_path.display().to_string(),
            "fold": args.fold,
            "tap_sets": tap_sets,
            "pooling": args.pooling,
            "grid": &grid,
        }),
        vec![json_path.display().to_string()],
    )?;
    print!("{}", table.to_text());
    Ok(())
}

// ---------------------------------------------------------------------------
// cam

pub struct CamArgs {
    pub checkpoint: PathBuf,
    pub train_patches: PathBuf,
    pub render_patches: Option<PathBuf>,
    pub out: PathBuf,
    pub class: String,
    pub alpha: f32,
    pub max_epochs: usize,
    pub full_finetune: bool,
    /// Also export each conv layer's channel-mean map per rendered patch.
    pub avg_feature_maps: bool,
}

pub fn cmd_cam(args: &CamArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let train = bundle::read_bundle(&args.train_patches)?;
    let mut head = build_cam_head(&ckpt)?;
    let mut train_config = CamTrainConfig {
        full_finetune: args.full_finetune,
        ..Default::default()
    };
    if args.max_epochs > 0 {
        train_config.max_epochs = args.max_epochs;
    }
    let log = finetune_cam(&mut head, &train, &train_config)?;

    std::fs::create_dir_all(&args.out)?;
    let head_path = args.out.join("cam_head.fclf");
    save_cam_head(&head, &log, &head_path)?;
    let mut artifacts = vec![head_path.display().to_string()];

    let classes: Vec<usize> = match args.class.as_str() {
        "malignant" => vec![1],
        "benign" => vec![0],
        "both" => vec![0, 1],
        other => {
            return Err(Error::Input(format!(
                "unknown class `{}` (expected malignant, benign or both)",
                other
            )))
        }
    };
    let render = match &args.render_patches {
        Some(path) => bundle::read_bundle(path)?,
        None => train.clone(),
    };
    let class_name = |c: usize| if c == 1 { "malignant" } else { "benign" };
    for patch in &render {
        for &class in &classes {
            let cam = compute_cam(&head, patch, class)?;
            let base = focusclf_core::ppm::patch_base_plane(patch);
            let overlay = focusclf_core::ppm::render_overlay(
                &base,
                cam.upsampled.data(),
                patch.size,
                args.alpha,
            )?;
            let stem = format!("{}_{}", patch.record.lesion_id, class_name(class));
            let ppm_path = args.out.join(format!("{}.ppm", stem));
            focusclf_core::ppm::write_bytes(&ppm_path, &overlay)?;
            let vol = focusclf_core::viz::map_to_volume(&cam.raw)?;
            let vol_path = args.out.join(format!("{}.mpv", stem));
            vol.save(&vol_path)?;
            artifacts.push(ppm_path.display().to_string());
            artifacts.push(vol_path.display().to_string());
        }
        if args.avg_feature_maps {
            let means =
                focusclf_core::viz::average_feature_maps(&ckpt.network, patch)?;
            for (layer, map) in means.iter().enumerate() {
                let stem = format!("{}_avg_c{}", patch.record.lesion_id, layer + 1);
                let vol_path = args.out.join(format!("{}.mpv", stem));
                focusclf_core::viz::map_to_volume(map)?.save(&vol_path)?;
                let gray = focusclf_core::ppm::render_gray(
                    &focusclf_core::viz::display_normalize(map),
                );
                let ppm_path = args.out.join(format!("{}.ppm", stem));
                focusclf_core::ppm::write_bytes(&ppm_path, &gray)?;
                artifacts.push(vol_path.display().to_string());
                artifacts.push(ppm_path.display().to_string());
            }
        }
    }

    let report = serde_json::json!({
        "losses": log.losses,
        "converged_at": log.converged_at,
        "train_accuracy": log.train_accuracy,
        "frozen_stack": !args.full_finetune,
    });
    let report_path = args.out.join("cam_report.json");
    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    write_text(&report_path, &json)?;
    artifacts.push(report_path.display().to_string());

    finish_run(
        &args.out,
        "cam",
        serde_json::json!({
            "checkpoint": args.checkpoint.display().to_string(),
            "train_patches": args.train_patches.display().to_string(),
            "class": args.class,
            "alpha": args.alpha,
            "full_finetune": args.full_finetune,
        }),
        artifacts,
    )?;
    println!(
        "cam: head accuracy {:.3}, {} overlays under {}",
        log.train_accuracy,
        render.len() * classes.len(),
        args.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// tsne

pub struct TsneArgs {
    pub features: PathBuf,
    pub out: PathBuf,
    pub perplexity: Option<f64>,
    pub iterations: Option<usize>,
    pub seed: Option<u64>,
}

pub fn cmd_tsne(args: &TsneArgs, config: &RunConfig) -> Result<()> {
    let rows = features::read_features_csv(&args.features)?;
    let mut tsne_config = config.tsne.clone();
    if let Some(p) = args.perplexity {
        tsne_config.perplexity = p;
    }
    if let Some(i) = args.iterations {
        tsne_config.iterations = i;
    }
    if let Some(s) = args.seed.or(config.seed) {
        tsne_config.seed = s;
    } else {
        return Err(Error::Input(
            "a seed is required: pass --seed or set it in the config".into(),
        ));
    }
    let matrix: Vec<Vec<f64>> = rows.iter().map(|r| r.values.clone()).collect();
    let embedding = tsne(&matrix, &tsne_config)?;
    std::fs::create_dir_all(&args.out)?;
    let csv_path = args.out.join("embedding.csv");
    let ids: Vec<String> = rows.iter().map(|r| r.lesion_id.clone()).collect();
    let labels: Vec<Label> = rows.iter().map(|r| r.label).collect();
    write_embedding_csv(&csv_path, &ids, &labels, &embedding)?;
    let report_path = args.out.join("tsne.json");
    let mut json = serde_json::to_string_pretty(&serde_json::json!({
        "kl": embedding.kl,
        "perplexity": embedding.perplexity,
        "iterations": embedding.iterations,
        "seed": embedding.seed,
        "samples": rows.len(),
    }))?;
    json.push('\n');
    write_text(&report_path, &json)?;
    finish_run(
        &args.out,
        "tsne",
        &tsne_config,
        vec![
            csv_path.display().to_string(),
            report_path.display().to_string(),
        ],
    )?;
    println!(
        "tsne: {} points, final KL {:.4} -> {}",
        rows.len(),
        embedding.kl,
        csv_path.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// eval

pub struct EvalArgs {
    pub pred: PathBuf,
    pub labels: PathBuf,
    pub out: Option<PathBuf>,
}

fn read_csv_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Input(format!("cannot read {}: {}", path.display(), e)))?;
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::Format(format!("{} is empty", path.display())))?
        .split(',')
        .map(|s| s.trim().to_string())
        .collect();
    let rows = lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split(',').map(|s| s.trim().to_string()).collect())
        .collect();
    Ok((header, rows))
}

fn column(header: &[String], name: &str) -> Option<usize> {
    header.iter().position(|h| h == name)
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let (pred_header, pred_rows) = read_csv_table(&args.pred)?;
    let (label_header, label_rows) = read_csv_table(&args.labels)?;
    let id_col = column(&pred_header, "lesion_id")
        .ok_or_else(|| Error::Format("prediction CSV lacks a lesion_id column".into()))?;
    let score_col = column(&pred_header, "p_malignant").or_else(|| column(&pred_header, "score"));
    let decision_col = column(&pred_header, "decision");
    if score_col.is_none() && decision_col.is_none() {
        return Err(Error::Format(
            "prediction CSV needs a p_malignant/score or decision column".into(),
        ));
    }
    let lid_col = column(&label_header, "lesion_id")
        .ok_or_else(|| Error::Format("label CSV lacks a lesion_id column".into()))?;
    let lab_col = column(&label_header, "label")
        .ok_or_else(|| Error::Format("label CSV lacks a label column".into()))?;

    let mut truth: HashMap<String, bool> = HashMap::new();
    for row in &label_rows {
        let malignant = match row[lab_col].as_str() {
            "malignant" => true,
            "benign" => false,
            other => {
                return Err(Error::Input(format!(
                    "label `{}` is neither malignant nor benign",
                    other
                )))
            }
        };
        truth.insert(row[lid_col].clone(), malignant);
    }

    let mut decisions = Vec::new();
    let mut labels = Vec::new();
    let mut scores = Vec::new();
    for row in &pred_rows {
        let id = &row[id_col];
        let label = *truth
            .get(id)
            .ok_or_else(|| Error::Input(format!("no label for lesion {}", id)))?;
        let decision = if let Some(c) = decision_col {
            row[c] == "malignant"
        } else {
            let score: f64 = row[score_col.unwrap()]
                .parse()
                .map_err(|e| Error::Format(format!("bad score for {}: {}", id, e)))?;
            score >= 0.5
        };
        if let Some(c) = score_col {
            let score: f64 = row[c]
                .parse()
                .map_err(|e| Error::Format(format!("bad score for {}: {}", id, e)))?;
            scores.push(score);
        }
        decisions.push(decision);
        labels.push(label);
    }

    let mut metrics = confusion_metrics(&decisions, &labels)?;
    if scores.len() == labels.len() {
        metrics.auc = roc_auc(&scores, &labels);
    }
    println!("(sensitivity, specificity, g-mean) = {}", metrics.triple());
    println!(
        "accuracy = {:.2}  auc = {:.2}  [tp {} fp {} tn {} fn {}]",
        metrics.accuracy, metrics.auc, metrics.tp, metrics.fp, metrics.tn, metrics.fn_
    );
    if let Some(out) = &args.out {
        std::fs::create_dir_all(out)?;
        let path = out.join("eval.json");
        let mut json = serde_json::to_string_pretty(&metrics)?;
        json.push('\n');
        write_text(&path, &json)?;
        finish_run(
            out,
            "eval",
            serde_json::json!({
                "pred": args.pred.display().to_string(),
                "labels": args.labels.display().to_string(),
            }),
            vec![path.display().to_string()],
        )?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// sweep

pub struct SweepArgs {
    pub combos: Option<String>,
    pub fold: usize,
}

pub fn cmd_sweep(args: &SweepArgs, config: &RunConfig) -> Result<()> {
    config.validate_paths()?;
    let out = config.require_out()?.to_path_buf();
    let seed = config.require_seed()?;
    let records = load_manifest(config.require_manifest()?, false)?;
    let lib = CaseLibrary::load(&records, &config.data_root())?;
    let combos: Vec<Vec<String>> = match &args.combos {
        Some(s) => parse_list(s)
            .iter()
            .map(|combo| combo.split('+').map(|m| m.trim().to_string()).collect())
            .collect(),
        None => vec![config.modalities.clone()],
    };
    let model = config.resolved_model()?;
    let rng = Pcg32::new(seed);
    let table = with_jobs(config.jobs, || {
        focusclf_core::sweep::modality_sweep(
            &lib,
            &records,
            &combos,
            &model,
            config.folds,
            args.fold,
            config.augment_policy,
            &rng,
        )
    })?;
    std::fs::create_dir_all(&out)?;
    let json_path = out.join("sweep.json");
    let mut json = serde_json::to_string_pretty(&table)?;
    json.push('\n');
    write_text(&json_path, &json)?;
    write_text(&out.join("sweep.txt"), &table.to_text())?;
    write_text(&out.join("sweep.csv"), &table.to_csv())?;
    finish_run(
        &out,
        "sweep",
        serde_json::json!({ "config": config, "combos": combos, "fold": args.fold }),
        vec![json_path.display().to_string()],
    )?;
    print!("{}", table.to_text());
    Ok(())
}

// ---------------------------------------------------------------------------
// shared label export used by tests and downstream tooling

/// Write a `lesion_id,label` CSV for a set of records.
pub fn write_labels_csv(path: &Path, records: &[LesionRecord]) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(b"lesion_id,label\n")?;
    for r in records {
        file.write_all(format!("{},{}\n", r.lesion_id, r.label).as_bytes())?;
    }
    Ok(())
}

/// Stratified folds as a standalone artifact (used when no cv-train ran).
pub fn make_folds(records: &[LesionRecord], k: usize, seed: u64) -> Result<FoldSplit> {
    stratified_folds(records, k, &Pcg32::new(seed))
}
