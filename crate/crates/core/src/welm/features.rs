//! Intermediate-feature extraction from a trained network, and the CSV
//! format the feature matrices travel in.

use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::manifest::Label;
use crate::data::patch::Patch;
use crate::error::{Error, Result};
use crate::model::Network;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Tap {
    C1,
    C2,
    C3,
    C4,
    FC1,
    FC2,
}

impl Tap {
    pub const ALL: [Tap; 6] = [Tap::C1, Tap::C2, Tap::C3, Tap::C4, Tap::FC1, Tap::FC2];

    pub fn is_conv(self) -> bool {
        matches!(self, Tap::C1 | Tap::C2 | Tap::C3 | Tap::C4)
    }
}

impl fmt::Display for Tap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self)
    }
}

impl FromStr for Tap {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "C1" => Ok(Tap::C1),
            "C2" => Ok(Tap::C2),
            "C3" => Ok(Tap::C3),
            "C4" => Ok(Tap::C4),
            "FC1" => Ok(Tap::FC1),
            "FC2" => Ok(Tap::FC2),
            other => Err(Error::Input(format!(
                "unknown tap `{}` (expected C1..C4, FC1, FC2)",
                other
            ))),
        }
    }
}

/// Parse a tap combination such as `C1+C4`.
pub fn parse_taps(s: &str) -> Result<Vec<Tap>> {
    s.split('+').map(|part| part.trim().parse()).collect()
}

pub fn taps_label(taps: &[Tap]) -> String {
    taps.iter()
        .map(|t| format!("{:?}", t))
        .collect::<Vec<_>>()
        .join("+")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pooling {
    #[serde(rename = "channel-average")]
    ChannelAverage,
    #[serde(rename = "flatten")]
    Flatten,
}

impl FromStr for Pooling {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "channel-average" | "avg" => Ok(Pooling::ChannelAverage),
            "flatten" => Ok(Pooling::Flatten),
            other => Err(Error::Input(format!(
                "unknown pooling mode `{}` (expected channel-average or flatten)",
                other
            ))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct FeatureVector {
    pub lesion_id: String,
    pub label: Label,
    pub values: Vec<f64>,
}

fn reduce_conv_map(map: &Tensor<f32>, pooling: Pooling) -> Vec<f64> {
    let (h, w, c) = map.dims3();
    match pooling {
        Pooling::ChannelAverage => {
            let mut means = vec![0.0f64; c];
            for row in map.data().chunks(c) {
                for (m, &v) in means.iter_mut().zip(row) {
                    *m += v as f64;
                }
            }
            let inv = 1.0 / (h * w) as f64;
            for m in means.iter_mut() {
                *m *= inv;
            }
            means
        }
        Pooling::Flatten => map.data().iter().map(|&v| v as f64).collect(),
    }
}

/// Features for one patch: conv taps are the post-ReLU maps of each block
/// (before pooling) reduced per the pooling mode; FC taps are post-activation
/// vectors. Taps concatenate in the order given.
pub fn extract_features(
    network: &Network<f32>,
    patch: &Patch,
    taps: &[Tap],
    pooling: Pooling,
) -> Result<FeatureVector> {
    if taps.is_empty() {
        return Err(Error::Input("at least one tap required".into()));
    }
    let input: Tensor<f32> = patch.data.clone();
    let features = network.conv_stack_infer(&input)?;
    let needs_fc = taps.iter().any(|t| !t.is_conv());
    let fc = if needs_fc {
        let flat = features.pooled.data();
        let (fc1, fc2, _) = network.dense_head(flat)?;
        Some((fc1, fc2))
    } else {
        None
    };

    let mut values = Vec::new();
    for tap in taps {
        match tap {
            Tap::C1 => values.extend(reduce_conv_map(&features.conv_maps[0], pooling)),
            Tap::C2 => values.extend(reduce_conv_map(&features.conv_maps[1], pooling)),
            Tap::C3 => values.extend(reduce_conv_map(&features.conv_maps[2], pooling)),
            Tap::C4 => values.extend(reduce_conv_map(&features.conv_maps[3], pooling)),
            Tap::FC1 => {
                let (fc1, _) = fc.as_ref().expect("fc computed");
                values.extend(fc1.iter().map(|&v| v as f64));
            }
            Tap::FC2 => {
                let (_, fc2) = fc.as_ref().expect("fc computed");
                values.extend(fc2.iter().map(|&v| v as f64));
            }
        }
    }
    Ok(FeatureVector {
        lesion_id: patch.record.lesion_id.clone(),
        label: patch.record.label,
        values,
    })
}

/// Feature matrix over patches: rows, malignant flags and lesion ids.
pub fn extract_feature_matrix(
    network: &Network<f32>,
    patches: &[Patch],
    taps: &[Tap],
    pooling: Pooling,
) -> Result<(Vec<Vec<f64>>, Vec<bool>, Vec<String>)> {
    let mut rows = Vec::with_capacity(patches.len());
    let mut labels = Vec::with_capacity(patches.len());
    let mut ids = Vec::with_capacity(patches.len());
    for patch in patches {
        let fv = extract_features(network, patch, taps, pooling)?;
        labels.push(fv.label == Label::Malignant);
        ids.push(fv.lesion_id);
        rows.push(fv.values);
    }
    Ok((rows, labels, ids))
}

/// CSV with header `lesion_id,label,f0..f{d-1}`.
pub fn write_features_csv(path: &Path, rows: &[FeatureVector]) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    let d = rows.first().map(|r| r.values.len()).unwrap_or(0);
    let mut header = String::from("lesion_id,label");
    for i in 0..d {
        header.push_str(&format!(",f{}", i));
    }
    header.push('\n');
    file.write_all(header.as_bytes())?;
    for row in rows {
        let mut line = format!("{},{}", row.lesion_id, row.label);
        for v in &row.values {
            line.push_str(&format!(",{}", v));
        }
        line.push('\n');
        file.write_all(line.as_bytes())?;
    }
    Ok(())
}

pub fn read_features_csv(path: &Path) -> Result<Vec<FeatureVector>> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Input(format!("cannot open features {}: {}", path.display(), e)))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("features CSV is empty".into()))??;
    if !header.starts_with("lesion_id,label") {
        return Err(Error::Format(format!(
            "features CSV header must start with `lesion_id,label`, got `{}`",
            header
        )));
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let lesion_id = parts
            .next()
            .ok_or_else(|| Error::Format(format!("line {}: missing lesion_id", lineno + 2)))?
            .to_string();
        let label = match parts.next() {
            Some("malignant") => Label::Malignant,
            Some("benign") => Label::Benign,
            Some("unknown") => Label::Unknown,
            other => {
                return Err(Error::Format(format!(
                    "line {}: bad label {:?}",
                    lineno + 2,
                    other
                )))
            }
        };
        let values: Vec<f64> = parts
            .map(|p| {
                p.parse::<f64>().map_err(|e| {
                    Error::Format(format!("line {}: bad feature value `{}`: {}", lineno + 2, p, e))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(FeatureVector {
            lesion_id,
            label,
            values,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tap_parsing_and_combos() {
        assert_eq!(parse_taps("C1").unwrap(), vec![Tap::C1]);
        assert_eq!(parse_taps("C1+C4").unwrap(), vec![Tap::C1, Tap::C4]);
        assert_eq!(parse_taps("FC2").unwrap(), vec![Tap::FC2]);
        assert!(parse_taps("C9").is_err());
        assert!(matches!(parse_taps("conv1").unwrap_err(), Error::Input(_)));
    }

    #[test]
    fn csv_round_trips() {
        let rows = vec![
            FeatureVector {
                lesion_id: "L0001".into(),
                label: Label::Malignant,
                values: vec![0.5, -1.25, 3.0],
            },
            FeatureVector {
                lesion_id: "L0002".into(),
                label: Label::Benign,
                values: vec![0.0, 2.5, -0.125],
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("features.csv");
        write_features_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("lesion_id,label,f0,f1,f2\n"));
        let back = read_features_csv(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].lesion_id, "L0001");
        assert_eq!(back[0].label, Label::Malignant);
        assert_eq!(back[0].values, rows[0].values);
    }
}
