//! Model checkpoints: one JSON document holding the architecture, every
//! parameter matrix as nested row-major arrays, the initialization seed and
//! training metadata. Floats are written in shortest round-trip form, so a
//! save/load cycle is value-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::ModelParams;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
const INIT_SCHEME: &str = "uniform(+-sqrt(1/fan_in))";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub seed: u64,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub train_instances: usize,
    pub val_instances: usize,
    pub n_robots: Option<usize>,
    pub dataset_seed: Option<u64>,
    /// Set when training stopped early on a non-finite loss.
    pub halted: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub precision: String,
    pub init_scheme: String,
    pub model: ModelParams<f32>,
    pub training: Option<TrainingMeta>,
}

impl Checkpoint {
    pub fn new(model: ModelParams<f32>, training: Option<TrainingMeta>) -> Self {
        Self {
            format_version: CHECKPOINT_FORMAT_VERSION,
            precision: "f32".into(),
            init_scheme: INIT_SCHEME.into(),
            model,
            training,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {} (expected {CHECKPOINT_FORMAT_VERSION})",
                ck.format_version
            )));
        }
        check_shapes(&ck.model)?;
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Every tensor must match the dimensions its config implies.
fn check_shapes(p: &ModelParams<f32>) -> Result<()> {
    let c = &p.config;
    c.validate()?;
    let bad = |what: String| Err(Error::Checkpoint(format!("shape mismatch: {what}")));
    if p.encoder.len() != c.encoder_widths.len() || p.gnn.len() != c.gnn_widths.len() {
        return bad("layer count differs from config".into());
    }
    let mut prev = c.input_width;
    for (l, (d, &w)) in p.encoder.iter().zip(&c.encoder_widths).enumerate() {
        if d.weight.dim() != (prev, w) || d.bias.len() != w {
            return bad(format!("encoder layer {l}"));
        }
        prev = w;
    }
    for (l, (g, &w)) in p.gnn.iter().zip(&c.gnn_widths).enumerate() {
        if g.taps.len() != c.taps + 1 || g.taps.iter().any(|h| h.dim() != (prev, w)) || g.bias.len() != w {
            return bad(format!("graph layer {l}"));
        }
        prev = w;
    }
    if p.head.weight.dim() != (prev, c.actions) || p.head.bias.len() != c.actions {
        return bad("action head".into());
    }
    Ok(())
}

pub(crate) mod matrix {
    use ndarray::Array2;
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<T: Serialize + Copy, S: Serializer>(m: &Array2<T>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<T>> = m.rows().into_iter().map(|r| r.to_vec()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, T, D>(d: D) -> Result<Array2<T>, D::Error>
    where
        T: Deserialize<'de> + Copy,
        D: Deserializer<'de>,
    {
        let rows = Vec::<Vec<T>>::deserialize(d)?;
        from_rows(rows).map_err(D::Error::custom)
    }

    pub fn from_rows<T: Copy>(rows: Vec<Vec<T>>) -> Result<Array2<T>, String> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err("ragged matrix rows".into());
        }
        let flat: Vec<T> = rows.into_iter().flatten().collect();
        Array2::from_shape_vec((n, m), flat).map_err(|e| e.to_string())
    }
}

pub(crate) mod matrices {
    use ndarray::Array2;
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<T: Serialize + Copy, S: Serializer>(ms: &[Array2<T>], s: S) -> Result<S::Ok, S::Error> {
        let all: Vec<Vec<Vec<T>>> = ms
            .iter()
            .map(|m| m.rows().into_iter().map(|r| r.to_vec()).collect())
            .collect();
        all.serialize(s)
    }

    pub fn deserialize<'de, T, D>(d: D) -> Result<Vec<Array2<T>>, D::Error>
    where
        T: Deserialize<'de> + Copy,
        D: Deserializer<'de>,
    {
        Vec::<Vec<Vec<T>>>::deserialize(d)?
            .into_iter()
            .map(|rows| super::matrix::from_rows(rows).map_err(D::Error::custom))
            .collect()
    }
}

pub(crate) mod vector {
    use ndarray::Array1;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<T: Serialize + Copy, S: Serializer>(v: &Array1<T>, s: S) -> Result<S::Ok, S::Error> {
        v.to_vec().serialize(s)
    }

    pub fn deserialize<'de, T, D>(d: D) -> Result<Array1<T>, D::Error>
    where
        T: Deserialize<'de> + Copy,
        D: Deserializer<'de>,
    {
        Ok(Array1::from(Vec::<T>::deserialize(d)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::ModelConfig;

    #[test]
    fn round_trip_is_exact() {
        let p = ModelParams::<f32>::init(ModelConfig::default(), 42).unwrap();
        let ck = Checkpoint::new(p, None);
        let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn rejects_wrong_version_and_shapes() {
        let p = ModelParams::<f32>::init(ModelConfig::default(), 1).unwrap();
        let mut ck = Checkpoint::new(p, None);
        ck.format_version = 99;
        assert!(Checkpoint::from_json(&ck.to_json().unwrap()).is_err());
        ck.format_version = CHECKPOINT_FORMAT_VERSION;
        ck.model.config.gnn_widths[1] = 64;
        assert!(matches!(Checkpoint::from_json(&ck.to_json().unwrap()), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn document_is_self_describing() {
        let p = ModelParams::<f32>::init(ModelConfig::default(), 3).unwrap();
        let v: serde_json::Value = serde_json::from_str(&Checkpoint::new(p, None).to_json().unwrap()).unwrap();
        assert_eq!(v["format_version"], 1);
        assert_eq!(v["model"]["config"]["activation"], "relu");
        assert_eq!(v["model"]["config"]["taps"], 1);
        assert_eq!(v["model"]["init_seed"], 3);
        assert_eq!(v["model"]["encoder"][0]["weight"].as_array().unwrap().len(), 60);
        assert_eq!(v["model"]["gnn"][1]["taps"].as_array().unwrap().len(), 2);
    }
}
