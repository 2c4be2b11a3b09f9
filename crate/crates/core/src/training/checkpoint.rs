//! Binary checkpoint: magic, version, JSON metadata, then named f64 tensors.
//!
//! Layout (little-endian):
//! `magic[8] | version u32 | meta_len u64 | meta JSON | count u32 |`
//! `{ name_len u32 | name | rank u32 | dims u64 * rank | data f64 * prod(dims) } * count`

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{AdamState, TrainConfig};
use crate::error::{Error, Result};
use crate::geometry::CameraIntrinsics;
use crate::neuralnet::Tensor;
use crate::regressor::{LossBreakdown, RegressorConfig, RegressorModel, NORMALIZATION_ID};
use crate::simulator::PoseGridSpec;

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"TRJPCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

const ADAM_M_PREFIX: &str = "adam.m/";
const ADAM_V_PREFIX: &str = "adam.v/";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub intrinsics: CameraIntrinsics,
    pub grid: Option<PoseGridSpec>,
    pub normalization: String,
    pub model: RegressorConfig,
    pub seed: u64,
    pub epoch: usize,
    pub loss_history: Vec<LossBreakdown>,
    pub train: Option<TrainConfig>,
    pub adam_step: Option<u64>,
}

impl CheckpointMeta {
    pub fn new(intrinsics: CameraIntrinsics, model: RegressorConfig) -> Self {
        Self {
            intrinsics,
            grid: None,
            normalization: NORMALIZATION_ID.to_string(),
            model,
            seed: 0,
            epoch: 0,
            loss_history: Vec::new(),
            train: None,
            adam_step: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub model: RegressorModel,
    pub adam: Option<AdamState>,
}

fn encode(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let mut meta = ckpt.meta.clone();
    meta.model = ckpt.model.config().clone();
    meta.adam_step = ckpt.adam.as_ref().map(|a| a.step);
    let json = serde_json::to_vec(&meta)?;

    let store = ckpt.model.store();
    let mut tensors: Vec<(String, &Tensor)> =
        store.names().iter().cloned().zip(store.params()).collect();
    if let Some(adam) = &ckpt.adam {
        for (name, (m, v)) in store.names().iter().zip(adam.m.iter().zip(&adam.v)) {
            tensors.push((format!("{ADAM_M_PREFIX}{name}"), m));
            tensors.push((format!("{ADAM_V_PREFIX}{name}"), v));
        }
    }

    let mut out = Vec::with_capacity(json.len() + 8 * store.num_scalars() * 3 + 64);
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Writes to a sibling temporary file and renames it into place.
pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(ckpt)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn corrupt(&self, message: impl Into<String>) -> Error {
        Error::CorruptFile {
            path: self.path.to_path_buf(),
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                self.corrupt(format!(
                    "truncated while reading {what} at byte {}",
                    self.pos
                ))
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8, what)?.try_into().expect("8 bytes"),
        ))
    }

    fn len(&mut self, what: &str) -> Result<usize> {
        let v = self.u64(what)?;
        usize::try_from(v).map_err(|_| self.corrupt(format!("{what} {v} too large")))
    }
}

fn decode(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let mut r = Reader {
        buf: bytes,
        pos: 0,
        path,
    };
    if r.take(8, "magic")? != CHECKPOINT_MAGIC {
        return Err(r.corrupt("not a checkpoint file (bad magic)"));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            supported: CHECKPOINT_VERSION,
        });
    }
    let meta_len = r.len("metadata length")?;
    let meta: CheckpointMeta = serde_json::from_slice(r.take(meta_len, "metadata")?)
        .map_err(|e| r.corrupt(format!("metadata: {e}")))?;
    if meta.normalization != NORMALIZATION_ID {
        return Err(r.corrupt(format!(
            "unsupported input normalization {:?} (expected {NORMALIZATION_ID:?})",
            meta.normalization
        )));
    }
    meta.intrinsics.validate()?;

    let mut model = RegressorModel::new(meta.model.clone())?;
    let n_params = model.store().len();
    let mut adam = meta.adam_step.map(|step| {
        let cfg = meta.train.unwrap_or_default();
        let mut a = AdamState::new(model.store(), &cfg);
        a.step = step;
        a
    });
    let mut seen = vec![false; n_params * 3];

    let count = r.u32("tensor count")?;
    for _ in 0..count {
        let name_len = r.u32("tensor name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
            .map_err(|_| r.corrupt("tensor name is not UTF-8"))?
            .to_string();
        let rank = r.u32("tensor rank")? as usize;
        if rank > 8 {
            return Err(r.corrupt(format!("tensor {name} has implausible rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.len("tensor dimension")?);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| r.corrupt(format!("tensor {name} is too large")))?;
        let raw = r.take(
            numel
                .checked_mul(8)
                .ok_or_else(|| r.corrupt(format!("tensor {name} is too large")))?,
            &format!("tensor {name}"),
        )?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::from_vec(&shape, data)?;

        let (slot, base) = if let Some(p) = name.strip_prefix(ADAM_M_PREFIX) {
            (1, p)
        } else if let Some(p) = name.strip_prefix(ADAM_V_PREFIX) {
            (2, p)
        } else {
            (0, name.as_str())
        };
        let id = model
            .store()
            .id(base)
            .ok_or_else(|| r.corrupt(format!("unknown tensor {name}")))?;
        let expected = model.store().param(id).shape().to_vec();
        if t.shape() != expected {
            return Err(r.corrupt(format!(
                "tensor {name} has shape {:?}, expected {expected:?}",
                t.shape()
            )));
        }
        let k = id_index(&model, base);
        if std::mem::replace(&mut seen[slot * n_params + k], true) {
            return Err(r.corrupt(format!("duplicate tensor {name}")));
        }
        match (slot, adam.as_mut()) {
            (0, _) => *model.store_mut().param_mut(id) = t,
            (1, Some(a)) => a.m[k] = t,
            (2, Some(a)) => a.v[k] = t,
            _ => return Err(r.corrupt(format!("optimizer tensor {name} without optimizer state"))),
        }
    }
    if r.pos != bytes.len() {
        return Err(r.corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let needed = if adam.is_some() { 3 } else { 1 };
    if let Some(missing) = (0..needed * n_params).find(|&i| !seen[i]) {
        let prefix = ["", ADAM_M_PREFIX, ADAM_V_PREFIX][missing / n_params];
        return Err(r.corrupt(format!(
            "missing tensor {prefix}{}",
            model.store().names()[missing % n_params]
        )));
    }
    Ok(Checkpoint { meta, model, adam })
}

fn id_index(model: &RegressorModel, name: &str) -> usize {
    model
        .store()
        .names()
        .iter()
        .position(|n| n == name)
        .expect("name resolved above")
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    decode(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuralnet::ParameterStore;
    use crate::regressor::tests::tiny_config;
    use crate::simulator::stream_rng;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(800.0, 810.0, 640.5, 360.25, 1280, 720).unwrap()
    }

    fn sample_checkpoint() -> Checkpoint {
        let mut model = RegressorModel::new(tiny_config()).unwrap();
        model.init(&mut stream_rng(8, 0, 0, 0));
        let cfg = TrainConfig {
            learning_rate: 0.003,
            ..TrainConfig::default()
        };
        let mut adam = AdamState::new(model.store(), &cfg);
        adam.step = 17;
        for (i, (m, v)) in adam.m.iter_mut().zip(&mut adam.v).enumerate() {
            m.data_mut()
                .iter_mut()
                .enumerate()
                .for_each(|(j, x)| *x = (i * 31 + j) as f64 * 1e-3 - 0.1);
            v.data_mut()
                .iter_mut()
                .enumerate()
                .for_each(|(j, x)| *x = 1.0 / (1 + i + j) as f64);
        }
        let mut meta = CheckpointMeta::new(k(), tiny_config());
        meta.seed = 99;
        meta.epoch = 17;
        meta.loss_history = vec![LossBreakdown {
            total: 1.0 / 3.0,
            location: 0.1,
            orientation: 0.2333,
            alpha: 1.0,
        }];
        meta.train = Some(cfg);
        Checkpoint {
            meta,
            model,
            adam: Some(adam),
        }
    }

    fn bits(store: &ParameterStore) -> Vec<u64> {
        store
            .params()
            .iter()
            .flat_map(|t| t.data())
            .map(|v| v.to_bits())
            .collect()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let ckpt = sample_checkpoint();
        save_checkpoint(&path, &ckpt).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(bits(back.model.store()), bits(ckpt.model.store()));
        assert_eq!(back.adam, ckpt.adam);
        let mut expected_meta = ckpt.meta.clone();
        expected_meta.adam_step = Some(17);
        assert_eq!(back.meta, expected_meta);
    }

    #[test]
    fn without_optimizer_state() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut ckpt = sample_checkpoint();
        ckpt.adam = None;
        save_checkpoint(&path, &ckpt).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert!(back.adam.is_none());
        assert_eq!(back.model, ckpt.model);
    }

    #[test]
    fn truncation_is_detected_everywhere() {
        let bytes = encode(&sample_checkpoint()).unwrap();
        let path = Path::new("mem");
        for cut in [0, 5, 8, 11, 20, 100, bytes.len() / 2, bytes.len() - 1] {
            match decode(&bytes[..cut], path) {
                Err(Error::CorruptFile { .. }) => {}
                other => panic!("cut {cut}: {other:?}"),
            }
        }
    }

    #[test]
    fn future_version_is_rejected() {
        let mut bytes = encode(&sample_checkpoint()).unwrap();
        bytes[8..12].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(
            decode(&bytes, Path::new("mem")),
            Err(Error::VersionMismatch {
                found: 7,
                supported: 1
            })
        ));
    }

    #[test]
    fn bad_magic_and_trailing_bytes() {
        let mut bytes = encode(&sample_checkpoint()).unwrap();
        bytes.push(0);
        assert!(matches!(
            decode(&bytes, Path::new("mem")),
            Err(Error::CorruptFile { .. })
        ));
        bytes[0] = b'X';
        assert!(matches!(
            decode(&bytes, Path::new("mem")),
            Err(Error::CorruptFile { .. })
        ));
    }
}
