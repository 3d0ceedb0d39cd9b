//! Checkpoint container: magic `FCLF`, version, a record kind, JSON config
//! and log blocks, then named float32 tensors. The same container carries
//! CNN checkpoints (kind `CNN`), fitted kernel models (kind `WELM`) and CAM
//! heads (kind `CAM`).

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, Network};
use crate::ops::RunningStats;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"FCLF";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct ContainerTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug)]
pub struct Container {
    pub kind: String,
    pub config_json: String,
    pub log_json: String,
    pub tensors: Vec<ContainerTensor>,
}

fn write_block(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(bytes);
}

pub fn container_to_bytes(container: &Container) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    write_block(&mut out, container.kind.as_bytes());
    write_block(&mut out, container.config_json.as_bytes());
    write_block(&mut out, container.log_json.as_bytes());
    out.extend_from_slice(&(container.tensors.len() as u32).to_le_bytes());
    for t in &container.tensors {
        write_block(&mut out, t.name.as_bytes());
        out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for &e in &t.shape {
            out.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for &v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn read_exact_u32(reader: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    reader.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_block(reader: &mut impl Read) -> Result<Vec<u8>> {
    let len = read_exact_u32(reader)? as usize;
    let mut buf = vec![0u8; len];
    reader.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_string_block(reader: &mut impl Read) -> Result<String> {
    String::from_utf8(read_block(reader)?)
        .map_err(|e| Error::Format(format!("container block is not UTF-8: {}", e)))
}

pub fn container_from_reader(mut reader: impl Read) -> Result<Container> {
    let mut magic = [0u8; 4];
    reader.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "bad checkpoint magic {:?}, expected {:?}",
            magic, MAGIC
        )));
    }
    let version = read_exact_u32(&mut reader)?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {}",
            version
        )));
    }
    let kind = read_string_block(&mut reader)?;
    let config_json = read_string_block(&mut reader)?;
    let log_json = read_string_block(&mut reader)?;
    let count = read_exact_u32(&mut reader)? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name = read_string_block(&mut reader)?;
        let rank = read_exact_u32(&mut reader)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_exact_u32(&mut reader)? as usize);
        }
        let len: usize = shape.iter().product();
        let mut payload = vec![0u8; len * 4];
        reader.read_exact(&mut payload).map_err(|_| {
            Error::Format(format!("tensor `{}` payload truncated", name))
        })?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        tensors.push(ContainerTensor { name, shape, data });
    }
    Ok(Container {
        kind,
        config_json,
        log_json,
        tensors,
    })
}

pub fn write_container(path: &Path, container: &Container) -> Result<()> {
    std::fs::write(path, container_to_bytes(container))?;
    Ok(())
}

pub fn read_container(path: &Path) -> Result<Container> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Input(format!("cannot open checkpoint {}: {}", path.display(), e)))?;
    container_from_reader(std::io::BufReader::new(file))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub val_sensitivity: f64,
    pub val_specificity: f64,
    pub val_g_mean: f64,
    pub val_auc: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub entries: Vec<EpochRecord>,
    /// Epoch whose snapshot the checkpoint holds (earliest among ties).
    pub best_epoch: Option<usize>,
    /// Absent when training ran for zero epochs.
    pub best_val_accuracy: Option<f64>,
    pub config_fingerprint: String,
}

impl TrainingLog {
    pub fn max_val_accuracy(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.val_accuracy)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
struct LogBlock {
    log: TrainingLog,
    adam_t: Option<u64>,
}

/// Per-buffer Adam moments, stored alongside the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerSnapshot {
    pub t: u64,
    /// (param name, first moment, second moment)
    pub moments: Vec<(String, Vec<f32>, Vec<f32>)>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub network: Network<f32>,
    pub log: TrainingLog,
    pub optimizer: Option<OptimizerSnapshot>,
}

fn push_tensor(tensors: &mut Vec<ContainerTensor>, name: &str, shape: &[usize], data: &[f32]) {
    tensors.push(ContainerTensor {
        name: name.to_string(),
        shape: shape.to_vec(),
        data: data.to_vec(),
    });
}

impl Checkpoint {
    pub fn new(network: Network<f32>, log: TrainingLog) -> Self {
        Checkpoint {
            network,
            log,
            optimizer: None,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors = Vec::new();
        let net = &self.network;
        for (i, block) in net.conv.iter().enumerate() {
            let n = i + 1;
            push_tensor(
                &mut tensors,
                &format!("conv{}.weight", n),
                block.weights.shape(),
                block.weights.data(),
            );
            push_tensor(&mut tensors, &format!("conv{}.bias", n), &[block.bias.len()], &block.bias);
            push_tensor(&mut tensors, &format!("bn{}.scale", n), &[block.bn.scale.len()], &block.bn.scale);
            push_tensor(&mut tensors, &format!("bn{}.shift", n), &[block.bn.shift.len()], &block.bn.shift);
            if let Some(running) = &block.bn.running {
                push_tensor(&mut tensors, &format!("bn{}.running_mean", n), &[running.mean.len()], &running.mean);
                push_tensor(&mut tensors, &format!("bn{}.running_var", n), &[running.var.len()], &running.var);
            }
        }
        for (name, layer) in [("fc1", &net.fc1), ("fc2", &net.fc2), ("head", &net.head)] {
            push_tensor(&mut tensors, &format!("{}.weight", name), layer.weights.shape(), layer.weights.data());
            push_tensor(&mut tensors, &format!("{}.bias", name), &[layer.bias.len()], &layer.bias);
        }
        if let Some(opt) = &self.optimizer {
            for (name, m, v) in &opt.moments {
                push_tensor(&mut tensors, &format!("adam.m.{}", name), &[m.len()], m);
                push_tensor(&mut tensors, &format!("adam.v.{}", name), &[v.len()], v);
            }
        }
        let block = LogBlock {
            log: self.log.clone(),
            adam_t: self.optimizer.as_ref().map(|o| o.t),
        };
        let container = Container {
            kind: "CNN".to_string(),
            config_json: serde_json::to_string(&net.config)?,
            log_json: serde_json::to_string(&block)?,
            tensors,
        };
        Ok(container_to_bytes(&container))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn from_container(container: Container) -> Result<Self> {
        if container.kind != "CNN" {
            return Err(Error::Format(format!(
                "expected a CNN checkpoint, found kind `{}`",
                container.kind
            )));
        }
        let config: ModelConfig = serde_json::from_str(&container.config_json)?;
        let block: LogBlock = serde_json::from_str(&container.log_json)?;
        let mut network = Network::<f32>::build(&config, &crate::rng::Pcg32::new(config.seed))?;

        let mut by_name: std::collections::HashMap<String, ContainerTensor> = container
            .tensors
            .into_iter()
            .map(|t| (t.name.clone(), t))
            .collect();
        fn take(
            by_name: &mut std::collections::HashMap<String, ContainerTensor>,
            name: String,
        ) -> Result<ContainerTensor> {
            by_name
                .remove(&name)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks tensor `{}`", name)))
        }

        for i in 0..4 {
            let n = i + 1;
            let w = take(&mut by_name, format!("conv{}.weight", n))?;
            network.conv[i].weights = Tensor::from_vec(&w.shape, w.data)?;
            network.conv[i].bias = take(&mut by_name, format!("conv{}.bias", n))?.data;
            network.conv[i].bn.scale = take(&mut by_name, format!("bn{}.scale", n))?.data;
            network.conv[i].bn.shift = take(&mut by_name, format!("bn{}.shift", n))?.data;
            let mean = by_name.remove(&format!("bn{}.running_mean", n));
            let var = by_name.remove(&format!("bn{}.running_var", n));
            network.conv[i].bn.running = match (mean, var) {
                (Some(m), Some(v)) => Some(RunningStats {
                    mean: m.data,
                    var: v.data,
                }),
                (None, None) => None,
                _ => {
                    return Err(Error::Format(format!(
                        "checkpoint has only one of bn{}.running_mean / bn{}.running_var",
                        n, n
                    )))
                }
            };
        }
        {
            let w = by_name
                .remove("fc1.weight")
                .ok_or_else(|| Error::Format("checkpoint lacks tensor `fc1.weight`".into()))?;
            network.fc1.weights = Tensor::from_vec(&w.shape, w.data)?;
            network.fc1.bias = by_name
                .remove("fc1.bias")
                .ok_or_else(|| Error::Format("checkpoint lacks tensor `fc1.bias`".into()))?
                .data;
            let w = by_name
                .remove("fc2.weight")
                .ok_or_else(|| Error::Format("checkpoint lacks tensor `fc2.weight`".into()))?;
            network.fc2.weights = Tensor::from_vec(&w.shape, w.data)?;
            network.fc2.bias = by_name
                .remove("fc2.bias")
                .ok_or_else(|| Error::Format("checkpoint lacks tensor `fc2.bias`".into()))?
                .data;
            let w = by_name
                .remove("head.weight")
                .ok_or_else(|| Error::Format("checkpoint lacks tensor `head.weight`".into()))?;
            network.head.weights = Tensor::from_vec(&w.shape, w.data)?;
            network.head.bias = by_name
                .remove("head.bias")
                .ok_or_else(|| Error::Format("checkpoint lacks tensor `head.bias`".into()))?
                .data;
        }

        let optimizer = if let Some(t) = block.adam_t {
            let mut moments = Vec::new();
            let names: Vec<String> = by_name
                .keys()
                .filter(|k| k.starts_with("adam.m."))
                .cloned()
                .collect();
            let mut sorted = names;
            sorted.sort();
            for m_name in sorted {
                let param = m_name.trim_start_matches("adam.m.").to_string();
                let m = by_name.remove(&m_name).expect("listed key");
                let v = by_name
                    .remove(&format!("adam.v.{}", param))
                    .ok_or_else(|| Error::Format(format!("missing adam.v.{}", param)))?;
                moments.push((param, m.data, v.data));
            }
            Some(OptimizerSnapshot { t, moments })
        } else {
            None
        };

        Ok(Checkpoint {
            network,
            log: block.log,
            optimizer,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(read_container(path)?)
    }
}
