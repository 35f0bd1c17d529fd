//! Self-describing JSON checkpoints.
//!
//! ```json
//! {
//!   "format_version": 1,
//!   "encoding": "decimal",
//!   "seed": 0,
//!   "epochs_completed": 300,
//!   "config": { ... },
//!   "geometry": { "dt": 0.0833, "cell_lengths": [0.5, ...] },
//!   "scaler": { "columns": [{ "min": 0.0, "max": 1900.0 }, ...] },
//!   "generator": [{ "name": "lstm.w_oh", "shape": [16, 16], "data": [...] }, ...],
//!   "discriminator": [ ... ]
//! }
//! ```
//!
//! With `"encoding": "f64le"` every `data` field is instead a base64 string
//! of little-endian IEEE-754 doubles. Decimal output uses shortest
//! round-trip formatting, so both encodings are lossless.

use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use super::{DiscriminatorNet, GanConfig, GanModel, GeneratorNet};
use crate::data::{Geometry, Scaler};
use crate::error::{Error, Result};
use crate::params::Params;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Encoding {
    Decimal,
    F64le,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ArrayData {
    Decimal(Vec<f64>),
    Raw(String),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NamedArray {
    name: String,
    shape: [usize; 2],
    data: ArrayData,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    format_version: u32,
    encoding: Encoding,
    seed: u64,
    epochs_completed: usize,
    config: GanConfig,
    geometry: Geometry,
    scaler: Scaler,
    generator: Vec<NamedArray>,
    discriminator: Vec<NamedArray>,
}

/// A trained model with everything needed to use it on physical data.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: GanConfig,
    pub model: GanModel,
    pub scaler: Scaler,
    pub geometry: Geometry,
}

impl Checkpoint {
    pub fn to_json(&self, encoding: Encoding) -> Result<String> {
        let doc = Document {
            format_version: CHECKPOINT_FORMAT_VERSION,
            encoding,
            seed: self.config.seed,
            epochs_completed: self.model.epochs_completed,
            config: self.config.clone(),
            geometry: self.geometry.clone(),
            scaler: self.scaler.clone(),
            generator: export(&self.model.generator, encoding),
            discriminator: export(&self.model.discriminator, encoding),
        };
        let mut s = serde_json::to_string_pretty(&doc)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let probe: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        match probe.get("format_version").and_then(|v| v.as_u64()) {
            Some(v) if v == u64::from(CHECKPOINT_FORMAT_VERSION) => {}
            Some(v) => {
                return Err(Error::Checkpoint(format!(
                    "unsupported format version {v} (this build reads {CHECKPOINT_FORMAT_VERSION})"
                )))
            }
            None => return Err(Error::Checkpoint("missing format_version".into())),
        }
        let doc: Document =
            serde_json::from_value(probe).map_err(|e| Error::Checkpoint(e.to_string()))?;
        doc.config.validate()?;
        doc.geometry.validate()?;
        let c = &doc.config;
        if doc.scaler.width() != c.feature_dim || doc.geometry.feature_dim() != c.feature_dim {
            return Err(Error::Checkpoint("scaler or geometry does not match feature_dim".into()));
        }
        let mut generator = GeneratorNet::zeros(c.latent_dim, c.hidden_size, c.feature_dim);
        import(&mut generator, &doc.generator, doc.encoding, "generator")?;
        let mut discriminator = DiscriminatorNet::zeros(c.feature_dim, c.hidden_size);
        import(&mut discriminator, &doc.discriminator, doc.encoding, "discriminator")?;
        Ok(Checkpoint {
            config: doc.config,
            model: GanModel {
                generator,
                discriminator,
                epochs_completed: doc.epochs_completed,
            },
            scaler: doc.scaler,
            geometry: doc.geometry,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>, encoding: Encoding) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json(encoding)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_json(&text)
    }
}

fn export<P: Params>(net: &P, encoding: Encoding) -> Vec<NamedArray> {
    net.tensors()
        .into_iter()
        .map(|t| NamedArray {
            name: t.name.to_string(),
            shape: t.shape,
            data: match encoding {
                Encoding::Decimal => ArrayData::Decimal(t.data.to_vec()),
                Encoding::F64le => {
                    let bytes: Vec<u8> = t.data.iter().flat_map(|v| v.to_le_bytes()).collect();
                    ArrayData::Raw(BASE64.encode(bytes))
                }
            },
        })
        .collect()
}

fn import<P: Params>(net: &mut P, arrays: &[NamedArray], encoding: Encoding, which: &str) -> Result<()> {
    let expected: Vec<(&'static str, [usize; 2])> =
        net.tensors().iter().map(|t| (t.name, t.shape)).collect();
    if arrays.len() != expected.len() {
        return Err(Error::Checkpoint(format!(
            "{which}: expected {} arrays, found {}",
            expected.len(),
            arrays.len()
        )));
    }
    for ((dst, (name, shape)), src) in net.tensors_mut().into_iter().zip(expected).zip(arrays) {
        if src.name != name || src.shape != shape {
            return Err(Error::Checkpoint(format!(
                "{which}: expected {name} {shape:?}, found {} {:?}",
                src.name, src.shape
            )));
        }
        let values: Vec<f64> = match (&src.data, encoding) {
            (ArrayData::Decimal(v), Encoding::Decimal) => v.clone(),
            (ArrayData::Raw(s), Encoding::F64le) => {
                let bytes = BASE64
                    .decode(s)
                    .map_err(|e| Error::Checkpoint(format!("{which}.{name}: {e}")))?;
                if bytes.len() % 8 != 0 {
                    return Err(Error::Checkpoint(format!("{which}.{name}: truncated data")));
                }
                bytes
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                    .collect()
            }
            _ => {
                return Err(Error::Checkpoint(format!(
                    "{which}.{name}: data does not match the declared encoding"
                )))
            }
        };
        if values.len() != dst.len() {
            return Err(Error::Checkpoint(format!(
                "{which}.{name}: expected {} values, found {}",
                dst.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Checkpoint(format!("{which}.{name}: non-finite value")));
        }
        dst.copy_from_slice(&values);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ColumnRange;

    fn sample() -> Checkpoint {
        let config = GanConfig {
            hidden_size: 4,
            latent_dim: 3,
            feature_dim: 7,
            seed: 99,
            ..GanConfig::default()
        };
        let mut model = GanModel::init(&config).unwrap();
        model.epochs_completed = 12;
        Checkpoint {
            config,
            model,
            scaler: Scaler {
                columns: (0..7).map(|i| ColumnRange { min: i as f64, max: 10.0 + i as f64 / 3.0 }).collect(),
            },
            geometry: Geometry::uniform(1.0 / 12.0, 3, 0.5),
        }
    }

    #[test]
    fn both_encodings_round_trip_exactly() {
        let ck = sample();
        for enc in [Encoding::Decimal, Encoding::F64le] {
            let text = ck.to_json(enc).unwrap();
            assert_eq!(Checkpoint::from_json(&text).unwrap(), ck);
        }
    }

    #[test]
    fn unknown_version_is_rejected() {
        let text = sample().to_json(Encoding::Decimal).unwrap();
        let bumped = text.replacen("\"format_version\": 1", "\"format_version\": 7", 1);
        let err = Checkpoint::from_json(&bumped).unwrap_err();
        assert!(err.to_string().contains("unsupported format version 7"), "{err}");
    }

    #[test]
    fn mismatched_encoding_flag_is_rejected() {
        let text = sample().to_json(Encoding::Decimal).unwrap();
        let lying = text.replacen("\"encoding\": \"decimal\"", "\"encoding\": \"f64le\"", 1);
        assert!(Checkpoint::from_json(&lying).is_err());
    }
}
