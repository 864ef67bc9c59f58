//! Binary checkpoint format shared by every trained artifact.
//!
//! Layout: magic `RCMB`, format version, a named-tensor table (name,
//! dimension list, 64-bit little-endian reals), then a string metadata map.
//! Maps are serialized in key order, so equal content produces equal bytes.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::Error;
use crate::mlp::{Activation, DenseLayer, MlpParams};
use crate::numerics::Matrix;
use crate::recombine::Reparam;
use crate::toydiffusion::{
    DenoiserParams, DiffusionState, EncoderParams, Schedule, Standardizer,
};
use crate::Result;

pub const MAGIC: [u8; 4] = *b"RCMB";
pub const VERSION: u32 = 1;

const MAX_NAME_LEN: usize = 1 << 16;
const MAX_NDIM: usize = 32;

/// One named payload: dimension list plus row-major values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

/// In-memory checkpoint: tensors and metadata, both keyed by name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    tensors: BTreeMap<String, Tensor>,
    metadata: BTreeMap<String, String>,
}

fn element_count(dims: &[usize]) -> Result<usize> {
    dims.iter().try_fold(1usize, |acc, &d| {
        acc.checked_mul(d)
            .ok_or_else(|| Error::Format("tensor dimension product overflows".into()))
    })
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_tensor(&mut self, name: &str, dims: Vec<usize>, data: Vec<f64>) -> Result<()> {
        if name.is_empty() || name.len() > MAX_NAME_LEN {
            return Err(Error::Format(format!("bad tensor name length {}", name.len())));
        }
        if element_count(&dims)? != data.len() {
            return Err(Error::Format(format!(
                "tensor {name:?}: {} values for dimensions {dims:?}",
                data.len()
            )));
        }
        self.tensors.insert(name.to_string(), Tensor { dims, data });
        Ok(())
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn require_tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Format(format!("missing tensor {name:?}")))
    }

    pub fn tensor_names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn insert_matrix(&mut self, name: &str, m: &Matrix) -> Result<()> {
        self.insert_tensor(name, vec![m.rows(), m.cols()], m.data().to_vec())
    }

    pub fn matrix(&self, name: &str) -> Result<Matrix> {
        let t = self.require_tensor(name)?;
        let [rows, cols] = t.dims[..] else {
            return Err(Error::Format(format!(
                "tensor {name:?} has {} dimensions, expected 2",
                t.dims.len()
            )));
        };
        Matrix::new(rows, cols, t.data.clone())
    }

    pub fn insert_vector(&mut self, name: &str, v: &[f64]) -> Result<()> {
        self.insert_tensor(name, vec![v.len()], v.to_vec())
    }

    pub fn vector(&self, name: &str) -> Result<Vec<f64>> {
        let t = self.require_tensor(name)?;
        if t.dims.len() != 1 {
            return Err(Error::Format(format!(
                "tensor {name:?} has {} dimensions, expected 1",
                t.dims.len()
            )));
        }
        Ok(t.data.clone())
    }

    pub fn set_meta(&mut self, key: &str, value: &str) {
        self.metadata.insert(key.to_string(), value.to_string());
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.get(key).map(String::as_str)
    }

    pub fn require_meta(&self, key: &str) -> Result<&str> {
        self.meta(key)
            .ok_or_else(|| Error::Format(format!("missing metadata key {key:?}")))
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    /// Stores an f64 metadata value by its bit pattern, exactly.
    pub fn set_meta_f64(&mut self, key: &str, value: f64) {
        self.set_meta(key, &format!("{:016x}", value.to_bits()));
    }

    pub fn meta_f64(&self, key: &str) -> Result<f64> {
        let raw = self.require_meta(key)?;
        u64::from_str_radix(raw, 16)
            .map(f64::from_bits)
            .map_err(|_| Error::Format(format!("metadata key {key:?} holds {raw:?}, not f64 bits")))
    }

    pub fn meta_usize(&self, key: &str) -> Result<usize> {
        let raw = self.require_meta(key)?;
        raw.parse()
            .map_err(|_| Error::Format(format!("metadata key {key:?} holds {raw:?}, not an integer")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
            for &d in &t.dims {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&(self.metadata.len() as u32).to_le_bytes());
        for (k, v) in &self.metadata {
            out.extend_from_slice(&(k.len() as u32).to_le_bytes());
            out.extend_from_slice(k.as_bytes());
            out.extend_from_slice(&(v.len() as u32).to_le_bytes());
            out.extend_from_slice(v.as_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("bad magic, not a checkpoint file".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!(
                "unknown checkpoint version {version}, expected {VERSION}"
            )));
        }
        let mut ck = Checkpoint::new();
        let tensor_count = r.u32()? as usize;
        for _ in 0..tensor_count {
            let name = r.string(MAX_NAME_LEN)?;
            let ndim = r.u32()? as usize;
            if ndim > MAX_NDIM {
                return Err(Error::Format(format!("tensor {name:?} claims {ndim} dimensions")));
            }
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                let d = r.u64()?;
                let d = usize::try_from(d)
                    .map_err(|_| Error::Format(format!("dimension {d} too large")))?;
                dims.push(d);
            }
            let count = element_count(&dims)?;
            if r.remaining() < count.checked_mul(8).ok_or_else(|| {
                Error::Format("tensor payload size overflows".into())
            })? {
                return Err(Error::Format(format!(
                    "tensor {name:?} payload truncated: {} elements declared",
                    count
                )));
            }
            let mut data = Vec::with_capacity(count);
            for _ in 0..count {
                data.push(f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes")));
            }
            if ck.tensors.insert(name.clone(), Tensor { dims, data }).is_some() {
                return Err(Error::Format(format!("duplicate tensor {name:?}")));
            }
        }
        let meta_count = r.u32()? as usize;
        for _ in 0..meta_count {
            let k = r.string(MAX_NAME_LEN)?;
            let v = r.string(1 << 24)?;
            if ck.metadata.insert(k.clone(), v).is_some() {
                return Err(Error::Format(format!("duplicate metadata key {k:?}")));
            }
        }
        if r.remaining() != 0 {
            return Err(Error::Format(format!(
                "{} trailing bytes after checkpoint payload",
                r.remaining()
            )));
        }
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_bytes()).map_err(|e| {
            Error::Io(format!("writing {}: {e}", path.as_ref().display()))
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path.as_ref())
            .map_err(|e| Error::Io(format!("reading {}: {e}", path.as_ref().display())))?;
        Self::from_bytes(&bytes)
    }

    /// Stores an MLP as one weight and one bias tensor per layer plus an
    /// activation-tag list under `{prefix}.acts`.
    pub fn store_mlp(&mut self, prefix: &str, params: &MlpParams) -> Result<()> {
        let tags: Vec<&str> = params.layers().iter().map(|l| l.act.tag()).collect();
        self.set_meta(&format!("{prefix}.acts"), &tags.join(","));
        for (i, layer) in params.layers().iter().enumerate() {
            self.insert_matrix(&format!("{prefix}.layer{i}.w"), &layer.w)?;
            self.insert_vector(&format!("{prefix}.layer{i}.b"), &layer.b)?;
        }
        Ok(())
    }

    pub fn load_mlp(&self, prefix: &str) -> Result<MlpParams> {
        let tags = self.require_meta(&format!("{prefix}.acts"))?;
        let mut layers = Vec::new();
        for (i, tag) in tags.split(',').enumerate() {
            layers.push(DenseLayer {
                w: self.matrix(&format!("{prefix}.layer{i}.w"))?,
                b: self.vector(&format!("{prefix}.layer{i}.b"))?,
                act: Activation::from_tag(tag)?,
            });
        }
        MlpParams::from_layers(layers)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Format(format!(
                "unexpected end of checkpoint: wanted {n} bytes, {} left",
                self.remaining()
            )));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self, cap: usize) -> Result<String> {
        let len = self.u32()? as usize;
        if len > cap {
            return Err(Error::Format(format!("string length {len} exceeds cap {cap}")));
        }
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| Error::Format("non-UTF-8 string in checkpoint".into()))
    }
}

/// Packs a trained reparameterization and its discriminator.
pub fn store_synth(rep: &Reparam, disc: &MlpParams) -> Result<Checkpoint> {
    let mut ck = Checkpoint::new();
    ck.set_meta("kind", "synth");
    ck.insert_matrix("w", rep.w())?;
    ck.store_mlp("disc", disc)?;
    Ok(ck)
}

/// Restores the pair stored by [`store_synth`], revalidating `W`.
pub fn load_synth(ck: &Checkpoint) -> Result<(Reparam, MlpParams)> {
    match ck.require_meta("kind")? {
        "synth" => {}
        other => {
            return Err(Error::Format(format!(
                "checkpoint kind {other:?}, expected \"synth\""
            )))
        }
    }
    let rep = Reparam::new(ck.matrix("w")?)?;
    let disc = ck.load_mlp("disc")?;
    Ok((rep, disc))
}

/// Trained diffusion artifacts ready for sampling.
#[derive(Debug, Clone)]
pub struct DiffusionArtifacts {
    pub encoder: EncoderParams,
    pub denoiser: DenoiserParams,
    pub disc: MlpParams,
    pub standardizer: Standardizer,
    pub schedule: Schedule,
}

/// Packs everything sampling needs from a trained diffusion state.
pub fn store_diffusion(state: &DiffusionState) -> Result<Checkpoint> {
    let mut ck = Checkpoint::new();
    ck.set_meta("kind", "diffusion");
    ck.store_mlp("encoder", &state.encoder.mlp)?;
    ck.store_mlp("denoiser", &state.denoiser.mlp)?;
    ck.store_mlp("disc", &state.disc)?;
    ck.insert_vector("standardizer.mean", &state.standardizer.mean)?;
    ck.insert_vector("standardizer.std", &state.standardizer.std)?;
    ck.insert_vector("schedule.alpha_bar", state.schedule.alpha_bar_table())?;
    ck.set_meta("schedule.t_max", &state.schedule.t_max().to_string());
    ck.set_meta_f64("schedule.offset", state.schedule.offset());
    Ok(ck)
}

fn vector_as_array(ck: &Checkpoint, name: &str) -> Result<[f64; 4]> {
    let v = ck.vector(name)?;
    v.try_into()
        .map_err(|v: Vec<f64>| Error::Format(format!("{name:?} has length {}, expected 4", v.len())))
}

/// Restores the artifacts stored by [`store_diffusion`].
pub fn load_diffusion(ck: &Checkpoint) -> Result<DiffusionArtifacts> {
    match ck.require_meta("kind")? {
        "diffusion" => {}
        other => {
            return Err(Error::Format(format!(
                "checkpoint kind {other:?}, expected \"diffusion\""
            )))
        }
    }
    let schedule = Schedule::from_parts(
        ck.meta_usize("schedule.t_max")?,
        ck.vector("schedule.alpha_bar")?,
        ck.meta_f64("schedule.offset")?,
    )?;
    Ok(DiffusionArtifacts {
        encoder: EncoderParams::new(ck.load_mlp("encoder")?)?,
        denoiser: DenoiserParams::new(ck.load_mlp("denoiser")?)?,
        disc: ck.load_mlp("disc")?,
        standardizer: Standardizer {
            mean: vector_as_array(ck, "standardizer.mean")?,
            std: vector_as_array(ck, "standardizer.std")?,
        },
        schedule,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::Activation;

    fn sample_checkpoint() -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.insert_tensor("a", vec![2, 3], vec![1.0, -0.0, f64::NAN, 1e-310, f64::INFINITY, -2.5])
            .unwrap();
        ck.insert_vector("b", &[0.125, -7.0]).unwrap();
        ck.set_meta("seed", "42");
        ck.set_meta_f64("offset", 0.008);
        ck
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = sample_checkpoint();
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.meta("seed"), Some("42"));
        assert_eq!(back.meta_f64("offset").unwrap().to_bits(), 0.008f64.to_bits());
        let a = back.tensor("a").unwrap();
        assert!(a.data[2].is_nan());
        assert_eq!(a.data[1].to_bits(), (-0.0f64).to_bits());
        assert_eq!(a.data[3], 1e-310);
    }

    #[test]
    fn serialization_ignores_insertion_order() {
        let mut first = Checkpoint::new();
        first.insert_vector("x", &[1.0]).unwrap();
        first.insert_vector("y", &[2.0]).unwrap();
        first.set_meta("p", "1");
        first.set_meta("q", "2");
        let mut second = Checkpoint::new();
        second.set_meta("q", "2");
        second.insert_vector("y", &[2.0]).unwrap();
        second.set_meta("p", "1");
        second.insert_vector("x", &[1.0]).unwrap();
        assert_eq!(first.to_bytes(), second.to_bytes());
    }

    #[test]
    fn malformed_inputs_are_rejected() {
        let good = sample_checkpoint().to_bytes();

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad_magic), Err(Error::Format(_))));

        let mut bad_version = good.clone();
        bad_version[4] = 99;
        let err = Checkpoint::from_bytes(&bad_version).unwrap_err();
        assert!(err.to_string().contains("version"));

        let truncated = &good[..good.len() - 3];
        assert!(matches!(Checkpoint::from_bytes(truncated), Err(Error::Format(_))));

        let mut trailing = good.clone();
        trailing.push(0);
        assert!(matches!(Checkpoint::from_bytes(&trailing), Err(Error::Format(_))));

        assert!(matches!(Checkpoint::from_bytes(b"RCM"), Err(Error::Format(_))));
    }

    #[test]
    fn size_mismatch_rejected_on_insert() {
        let mut ck = Checkpoint::new();
        assert!(ck.insert_tensor("t", vec![2, 2], vec![1.0; 3]).is_err());
    }

    #[test]
    fn mlp_round_trip_preserves_forward_pass() {
        let params = MlpParams::he_init(
            &[4, 16, 16, 1],
            &[Activation::Relu, Activation::Relu, Activation::Identity],
            913,
        )
        .unwrap();
        let mut ck = Checkpoint::new();
        ck.store_mlp("net", &params).unwrap();
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        let restored = back.load_mlp("net").unwrap();
        assert_eq!(restored.flatten(), params.flatten());
        let x = Matrix::new(3, 4, (0..12).map(|i| i as f64 * 0.3 - 1.0).collect()).unwrap();
        let before = params.forward(&x).unwrap();
        let after = restored.forward(&x).unwrap();
        assert_eq!(before.output().data(), after.output().data());
    }

    #[test]
    fn file_round_trip() {
        let ck = sample_checkpoint();
        let dir = std::env::temp_dir().join("recomb-checkpoint-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("sample.rcmb");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.to_bytes(), ck.to_bytes());
        std::fs::remove_file(&path).unwrap();

        assert!(matches!(
            Checkpoint::load(dir.join("missing.rcmb")),
            Err(Error::Io(_))
        ));
    }

    #[test]
    fn diffusion_round_trip() {
        use crate::synthdata::{make_dataset, GroundTruthSpec};
        use crate::toydiffusion::{init_state, DiffusionConfig, DiffusionSeeds};

        let data = make_dataset(11, 300, &GroundTruthSpec::with_mixing_seed(5)).unwrap();
        let mut config = DiffusionConfig::with_seeds(DiffusionSeeds {
            init: 1,
            noise: 2,
            batches: 3,
        });
        config.t_max = 20;
        config.ddim_steps = 10;
        config.hidden = 16;
        let state = init_state(&config, &data).unwrap();
        let ck = store_diffusion(&state).unwrap();
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        let arts = load_diffusion(&back).unwrap();
        assert_eq!(arts.denoiser.mlp.flatten(), state.denoiser.mlp.flatten());
        assert_eq!(arts.encoder.mlp.flatten(), state.encoder.mlp.flatten());
        assert_eq!(arts.standardizer.mean, state.standardizer.mean);
        assert_eq!(arts.standardizer.std, state.standardizer.std);
        assert_eq!(arts.schedule.alpha_bar_table(), state.schedule.alpha_bar_table());
        assert_eq!(arts.schedule.offset().to_bits(), state.schedule.offset().to_bits());

        assert!(load_synth(&back).is_err());
    }

    #[test]
    fn synth_round_trip() {
        let rep = Reparam::new(Matrix::identity(6)).unwrap();
        let disc = crate::synthtrain::disc_init(7);
        let ck = store_synth(&rep, &disc).unwrap();
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        let (rep2, disc2) = load_synth(&back).unwrap();
        assert_eq!(rep2.w().data(), rep.w().data());
        assert_eq!(disc2.flatten(), disc.flatten());

        assert!(load_diffusion(&back).is_err());
    }
}
