//! Declarative run configuration: a JSON file of defaults that individual
//! flags override (flags win).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use focusclf_core::data::AugmentPolicy;
use focusclf_core::error::{Error, Result};
use focusclf_core::model::ModelConfig;
use focusclf_core::tsne::TsneConfig;
use focusclf_core::welm::HyperGrid;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub manifest: Option<PathBuf>,
    pub data_root: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub modalities: Vec<String>,
    pub patch_size: usize,
    pub augment_policy: AugmentPolicy,
    pub folds: usize,
    pub model: ModelConfig,
    pub welm_grid: HyperGrid,
    pub tsne: TsneConfig,
    pub taps: String,
    pub pooling: String,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            manifest: None,
            data_root: None,
            out: None,
            modalities: vec!["T2W".into(), "ADC".into(), "DWI_b50".into()],
            patch_size: 32,
            augment_policy: AugmentPolicy::Policy1,
            folds: 10,
            model: ModelConfig::default(),
            welm_grid: HyperGrid::default(),
            tsne: TsneConfig::default(),
            taps: "C1+C4".into(),
            pooling: "channel-average".into(),
            seed: None,
            jobs: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Input(format!("cannot read config {}: {}", path.display(), e)))?;
        let config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("config {}: {}", path.display(), e)))?;
        Ok(config)
    }

    /// The seed is mandatory once a command actually consumes randomness.
    pub fn require_seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::Input("a seed is required: pass --seed or set it in the config".into()))
    }

    pub fn require_manifest(&self) -> Result<&Path> {
        self.manifest
            .as_deref()
            .ok_or_else(|| Error::Input("a manifest is required: pass --manifest or set it in the config".into()))
    }

    pub fn require_out(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| Error::Input("an output directory is required: pass --out".into()))
    }

    pub fn data_root(&self) -> PathBuf {
        match &self.data_root {
            Some(root) => root.clone(),
            None => self
                .manifest
                .as_deref()
                .and_then(Path::parent)
                .map(Path::to_path_buf)
                .unwrap_or_else(|| PathBuf::from(".")),
        }
    }

    /// Validate that every referenced input path exists.
    pub fn validate_paths(&self) -> Result<()> {
        if let Some(manifest) = &self.manifest {
            if !manifest.exists() {
                return Err(Error::Input(format!(
                    "manifest {} does not exist",
                    manifest.display()
                )));
            }
        }
        if let Some(root) = &self.data_root {
            if !root.exists() {
                return Err(Error::Input(format!(
                    "data root {} does not exist",
                    root.display()
                )));
            }
        }
        Ok(())
    }

    /// The model configuration with the pipeline-level fields folded in.
    pub fn resolved_model(&self) -> Result<ModelConfig> {
        let mut model = self.model.clone();
        model.input_size = self.patch_size;
        model.channels = self.modalities.clone();
        if let Some(seed) = self.seed {
            model.seed = seed;
        }
        model.validate()?;
        Ok(model)
    }
}

/// Run operations inside a bounded thread pool when `jobs` is given.
pub fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> T {
    match jobs {
        None | Some(0) => f(),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .expect("thread pool")
            .install(f),
    }
}
