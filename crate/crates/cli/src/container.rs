//! The `BMS1` container used for model checkpoints and image datasets.
//!
//! Layout: the 4 magic bytes `BMS1`, a little-endian `u32` header length, the
//! JSON header, then the payload of little-endian `f64` values. Tensor
//! offsets in the header are byte offsets from the start of the payload.

use crate::config::{Profile, RunConfig};
use crate::error::{CliError, Result};
use bms_core::data::{BlobSpec, ImageSequenceDataset};
use bms_core::models::{Model, ModelConfig};
use bms_core::Tensor;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"BMS1";
pub const FORMAT_VERSION: u32 = 1;
pub const DTYPE: &str = "f64";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format_version: u32,
    /// `trajectory`, `visual_trajectory`, `image_seq` or `blob_dataset`.
    pub model_kind: String,
    pub profile: Option<Profile>,
    pub dtype: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    pub params: Vec<TensorEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_config: Option<RunConfig>,
    pub step: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blob_spec: Option<BlobSpec>,
}

/// A header together with its named tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub header: Header,
    pub tensors: Vec<(String, Tensor)>,
}

impl Container {
    fn new(mut header: Header, tensors: Vec<(String, Tensor)>) -> Self {
        let mut offset = 0;
        header.params = tensors
            .iter()
            .map(|(name, t)| {
                let e = TensorEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                    offset,
                    len: t.len(),
                };
                offset += t.len() * 8;
                e
            })
            .collect();
        Container { header, tensors }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let len =
            u32::try_from(header.len()).map_err(|_| CliError::Failed("header too large".into()))?;
        let values: usize = self.tensors.iter().map(|(_, t)| t.len()).sum();
        let mut out = Vec::with_capacity(8 + header.len() + values * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(&header);
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            return Err(CliError::VersionMismatch("missing BMS1 magic".into()));
        }
        let len = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
        let body = &bytes[8..];
        if body.len() < len {
            return Err(CliError::CorruptPayload(format!(
                "header length {len} exceeds file ({} bytes)",
                body.len()
            )));
        }
        let header: Header = serde_json::from_slice(&body[..len])
            .map_err(|e| CliError::CorruptPayload(format!("header: {e}")))?;
        if header.format_version != FORMAT_VERSION {
            return Err(CliError::VersionMismatch(format!(
                "format version {} (supported: {FORMAT_VERSION})",
                header.format_version
            )));
        }
        if header.dtype != DTYPE {
            return Err(CliError::VersionMismatch(format!("dtype {}", header.dtype)));
        }
        let payload = &body[len..];
        let mut expected = 0;
        let mut tensors = Vec::with_capacity(header.params.len());
        for e in &header.params {
            let n: usize = e.shape.iter().product();
            if n != e.len || e.offset != expected {
                return Err(CliError::CorruptPayload(format!(
                    "{}: shape {:?}, len {}, offset {} (expected offset {expected})",
                    e.name, e.shape, e.len, e.offset
                )));
            }
            let end = e.offset + e.len * 8;
            if end > payload.len() {
                return Err(CliError::CorruptPayload(format!(
                    "{} ends at byte {end}, payload has {}",
                    e.name,
                    payload.len()
                )));
            }
            let data = payload[e.offset..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.push((e.name.clone(), Tensor::new(e.shape.clone(), data)?));
            expected = end;
        }
        if expected != payload.len() {
            return Err(CliError::CorruptPayload(format!(
                "{} trailing payload bytes",
                payload.len() - expected
            )));
        }
        Ok(Container { header, tensors })
    }

    /// Writes through a temporary file so an interrupted save never leaves a
    /// half-written container at `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, bytes)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// A model with the run that produced it.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model,
    pub profile: Profile,
    pub run_config: Option<RunConfig>,
    pub step: usize,
}

impl Checkpoint {
    pub fn to_container(&self) -> Result<Container> {
        if !self.model.params.all_finite() {
            return Err(CliError::Failed(
                "refusing to checkpoint non-finite parameters".into(),
            ));
        }
        let header = Header {
            format_version: FORMAT_VERSION,
            model_kind: self.model.config().name().to_string(),
            profile: Some(self.profile),
            dtype: DTYPE.into(),
            model: Some(self.model.config().clone()),
            params: Vec::new(),
            run_config: self.run_config.clone(),
            step: self.step,
            blob_spec: None,
        };
        Ok(Container::new(header, self.model.params.entries().to_vec()))
    }

    pub fn from_container(c: Container) -> Result<Self> {
        let config = c.header.model.ok_or_else(|| {
            CliError::CorruptPayload(format!("{} container holds no model", c.header.model_kind))
        })?;
        if config.name() != c.header.model_kind {
            return Err(CliError::CorruptPayload(format!(
                "model kind {} disagrees with config ({})",
                c.header.model_kind,
                config.name()
            )));
        }
        let mut model = Model::new(config, 0)?;
        model
            .params
            .load_from(&c.tensors)
            .map_err(|e| CliError::CorruptPayload(e.to_string()))?;
        Ok(Checkpoint {
            model,
            profile: c.header.profile.unwrap_or(Profile::Desk),
            run_config: c.header.run_config,
            step: c.header.step,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(Container::load(path)?)
    }
}

pub const BLOB_DATASET: &str = "blob_dataset";

pub fn blobs_to_container(ds: &ImageSequenceDataset) -> Result<Container> {
    let n = ds.len();
    let t = ds.spec.t_obs + ds.spec.t_fut;
    let centers = ds.centers.iter().flatten().flat_map(|c| *c).collect();
    let as_f64 = |v: &[usize]| v.iter().map(|&d| d as f64).collect();
    let header = Header {
        format_version: FORMAT_VERSION,
        model_kind: BLOB_DATASET.into(),
        profile: None,
        dtype: DTYPE.into(),
        model: None,
        params: Vec::new(),
        run_config: None,
        step: 0,
        blob_spec: Some(ds.spec.clone()),
    };
    Ok(Container::new(
        header,
        vec![
            ("frames".into(), ds.frames.clone()),
            ("centers".into(), Tensor::new(vec![n, t, 2], centers)?),
            (
                "obs_direction".into(),
                Tensor::new(vec![n], as_f64(&ds.obs_direction))?,
            ),
            (
                "fut_direction".into(),
                Tensor::new(vec![n], as_f64(&ds.fut_direction))?,
            ),
        ],
    ))
}

pub fn blobs_from_container(c: &Container) -> Result<ImageSequenceDataset> {
    let spec = match (&c.header.model_kind[..], &c.header.blob_spec) {
        (BLOB_DATASET, Some(s)) => s.clone(),
        _ => {
            return Err(CliError::CorruptPayload(format!(
                "{} container is not a blob dataset",
                c.header.model_kind
            )))
        }
    };
    let get = |name: &str| {
        c.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| CliError::CorruptPayload(format!("missing tensor {name}")))
    };
    let frames = get("frames")?.clone();
    let centers = get("centers")?;
    let n = centers.shape()[0];
    let t = spec.t_obs + spec.t_fut;
    if frames.shape() != [n, t, 1, spec.grid, spec.grid] || centers.shape() != [n, t, 2] {
        return Err(CliError::CorruptPayload(
            "blob tensors disagree with spec".into(),
        ));
    }
    let dirs = |name: &str| -> Result<Vec<usize>> {
        let d = get(name)?;
        if d.shape() != [n] {
            return Err(CliError::CorruptPayload(format!(
                "{name} has shape {:?}",
                d.shape()
            )));
        }
        Ok(d.data().iter().map(|&v| v as usize).collect())
    };
    Ok(ImageSequenceDataset {
        frames,
        centers: centers
            .data()
            .chunks(t * 2)
            .map(|r| r.chunks(2).map(|c| [c[0], c[1]]).collect())
            .collect(),
        obs_direction: dirs("obs_direction")?,
        fut_direction: dirs("fut_direction")?,
        spec,
    })
}
