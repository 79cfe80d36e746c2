//! Binary model file.
//!
//! ```text
//! "RGC1" | version: u32 | layer count: u32
//!        | per layer: kind tag u8, then that kind's extents as u32
//!        | every weight tensor as f32, row-major, layer order
//!        | CRC32 (IEEE) of all preceding bytes
//! ```
//! All integers and floats are little-endian. Extents per tag:
//! conv `[K, K, Cin, Cout]`, pool none, flatten `[len]`, dense `[N, M]`,
//! dropout `[rate as f32 bits]`.

use std::fmt;
use std::path::Path;

use super::{Activation, ArchConfig, LayerSpec, ModelParams, INPUT_SHAPE};
use crate::error::{Error, ModelFileError, Result};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"RGC1";
pub const FORMAT_VERSION: u32 = 1;

const TAG_CONV: u8 = 1;
const TAG_POOL: u8 = 2;
const TAG_FLATTEN: u8 = 3;
const TAG_DENSE_RELU: u8 = 4;
const TAG_DENSE_SOFTMAX: u8 = 5;
const TAG_DENSE_LINEAR: u8 = 6;
const TAG_DROPOUT: u8 = 7;

/// Architecture identity: per layer, the kind tag and its extents.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fingerprint(pub Vec<(u8, Vec<u32>)>);

impl Fingerprint {
    pub fn of(model: &ModelParams<f32>) -> Self {
        Self(
            model
                .layers()
                .iter()
                .map(|l| match l.spec {
                    LayerSpec::Conv { .. } => (TAG_CONV, l.params[0].shape().iter().map(|&d| d as u32).collect()),
                    LayerSpec::MaxPool => (TAG_POOL, vec![]),
                    LayerSpec::Flatten => (TAG_FLATTEN, vec![l.output_shape[0] as u32]),
                    LayerSpec::Dense { activation, .. } => {
                        let tag = match activation {
                            Activation::Relu => TAG_DENSE_RELU,
                            Activation::Softmax => TAG_DENSE_SOFTMAX,
                            Activation::None => TAG_DENSE_LINEAR,
                        };
                        (tag, l.params[0].shape().iter().map(|&d| d as u32).collect())
                    }
                    LayerSpec::Dropout { rate } => (TAG_DROPOUT, vec![rate.to_bits()]),
                })
                .collect(),
        )
    }
}

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} layers [", self.0.len())?;
        for (i, (tag, ext)) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            let name = match *tag {
                TAG_CONV => "conv",
                TAG_POOL => "pool",
                TAG_FLATTEN => "flatten",
                TAG_DENSE_RELU | TAG_DENSE_SOFTMAX | TAG_DENSE_LINEAR => "dense",
                TAG_DROPOUT => "dropout",
                _ => "?",
            };
            f.write_str(name)?;
            if *tag != TAG_DROPOUT && !ext.is_empty() {
                let dims: Vec<String> = ext.iter().map(u32::to_string).collect();
                write!(f, " {}", dims.join("x"))?;
            }
        }
        f.write_str("]")
    }
}

pub fn encode_model(model: &ModelParams<f32>) -> Vec<u8> {
    let fp = Fingerprint::of(model);
    let mut buf = Vec::with_capacity(16 + model.parameter_count() * 4);
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(fp.0.len() as u32).to_le_bytes());
    for (tag, extents) in &fp.0 {
        buf.push(*tag);
        for e in extents {
            buf.extend_from_slice(&e.to_le_bytes());
        }
    }
    for t in model.tensors() {
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], ModelFileError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            ModelFileError::Malformed(format!("unexpected end of data at byte {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, ModelFileError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, ModelFileError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Parses a model file for a network taking `input_shape` inputs.
pub fn decode_model(bytes: &[u8], input_shape: [usize; 3]) -> Result<ModelParams<f32>> {
    if bytes.len() < 4 || bytes[..4] != MAGIC {
        return Err(ModelFileError::BadMagic.into());
    }
    if bytes.len() < 8 {
        return Err(ModelFileError::Crc { stored: 0, computed: crc32fast::hash(bytes) }.into());
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(ModelFileError::Crc { stored, computed }.into());
    }
    let mut r = Reader { bytes: body, pos: 4 };
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(ModelFileError::UnsupportedVersion(version).into());
    }
    let n_layers = r.u32()? as usize;
    if n_layers > 1024 {
        return Err(ModelFileError::Malformed(format!("implausible layer count {n_layers}")).into());
    }
    let mut fingerprint = Vec::with_capacity(n_layers);
    let mut specs = Vec::with_capacity(n_layers);
    for i in 0..n_layers {
        let tag = r.u8()?;
        let n_ext = match tag {
            TAG_CONV => 4,
            TAG_POOL => 0,
            TAG_FLATTEN | TAG_DROPOUT => 1,
            TAG_DENSE_RELU | TAG_DENSE_SOFTMAX | TAG_DENSE_LINEAR => 2,
            other => return Err(ModelFileError::Malformed(format!("layer {i}: unknown kind tag {other}")).into()),
        };
        let ext: Vec<u32> = (0..n_ext).map(|_| r.u32()).collect::<Result<_, _>>()?;
        let spec = match tag {
            TAG_CONV => LayerSpec::Conv { filters: ext[3] as usize, kernel: ext[0] as usize },
            TAG_POOL => LayerSpec::MaxPool,
            TAG_FLATTEN => LayerSpec::Flatten,
            TAG_DROPOUT => LayerSpec::Dropout { rate: f32::from_bits(ext[0]) },
            TAG_DENSE_RELU => LayerSpec::Dense { units: ext[1] as usize, activation: Activation::Relu },
            TAG_DENSE_SOFTMAX => LayerSpec::Dense { units: ext[1] as usize, activation: Activation::Softmax },
            _ => LayerSpec::Dense { units: ext[1] as usize, activation: Activation::None },
        };
        fingerprint.push((tag, ext));
        specs.push(spec);
    }
    let found = Fingerprint(fingerprint);

    // Rebuild for the requested input and require the same fingerprint.
    let skeleton = ModelParams::<f32>::from_specs(input_shape, &specs, 0).map_err(|e| ModelFileError::Fingerprint {
        expected: format!("a network accepting {input_shape:?} input"),
        found: format!("{found} ({e})"),
    })?;
    let expected = Fingerprint::of(&skeleton);
    if expected != found {
        return Err(ModelFileError::Fingerprint { expected: expected.to_string(), found: found.to_string() }.into());
    }
    let mut tensors = Vec::with_capacity(n_layers);
    for layer in skeleton.layers() {
        let mut layer_tensors = Vec::new();
        for t in &layer.params {
            let raw = r.take(t.len() * 4)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            layer_tensors.push(Tensor::new(t.shape().to_vec(), data)?);
        }
        tensors.push(layer_tensors);
    }
    if r.pos != body.len() {
        return Err(ModelFileError::Malformed(format!("{} trailing bytes", body.len() - r.pos)).into());
    }
    ModelParams::from_parts(input_shape, &specs, tensors)
}

pub fn save_model(model: &ModelParams<f32>, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_model(model))?;
    Ok(())
}

/// Loads a model for the standard 50×50×3 input.
pub fn load_model(path: impl AsRef<Path>) -> Result<ModelParams<f32>> {
    decode_model(&std::fs::read(path)?, INPUT_SHAPE)
}

/// Loads a model and requires it to match the architecture `arch` would build.
pub fn load_model_expecting(path: impl AsRef<Path>, arch: &ArchConfig) -> Result<ModelParams<f32>> {
    let model = load_model(path)?;
    let expected = Fingerprint::of(&super::build_model(arch, 0)?);
    let found = Fingerprint::of(&model);
    if expected != found {
        return Err(Error::ModelFile(ModelFileError::Fingerprint {
            expected: expected.to_string(),
            found: found.to_string(),
        }));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, Depth};

    fn reseal(mut bytes: Vec<u8>) -> Vec<u8> {
        let n = bytes.len() - 4;
        let crc = crc32fast::hash(&bytes[..n]);
        bytes[n..].copy_from_slice(&crc.to_le_bytes());
        bytes
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = build_model(&ArchConfig::default(), 5).unwrap();
        let bytes = encode_model(&m);
        assert_eq!(&bytes[..4], b"RGC1");
        let back = decode_model(&bytes, INPUT_SHAPE).unwrap();
        for (a, b) in m.tensors().zip(back.tensors()) {
            assert_eq!(a.shape(), b.shape());
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert_eq!(encode_model(&back), bytes);
    }

    #[test]
    fn truncation_is_a_crc_error() {
        let bytes = encode_model(&build_model(&ArchConfig::default(), 5).unwrap());
        for cut in [1, 100, bytes.len() / 2] {
            let err = decode_model(&bytes[..bytes.len() - cut], INPUT_SHAPE).unwrap_err();
            assert!(matches!(err, Error::ModelFile(ModelFileError::Crc { .. })), "{err}");
        }
    }

    #[test]
    fn magic_and_version_checks() {
        let mut bytes = encode_model(&build_model(&ArchConfig::default(), 5).unwrap());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_model(&bad, INPUT_SHAPE), Err(Error::ModelFile(ModelFileError::BadMagic))));
        bytes[4] = 9;
        let bytes = reseal(bytes);
        assert!(matches!(
            decode_model(&bytes, INPUT_SHAPE),
            Err(Error::ModelFile(ModelFileError::UnsupportedVersion(9)))
        ));
    }

    #[test]
    fn altered_layer_count_is_rejected() {
        let mut bytes = encode_model(&build_model(&ArchConfig::default(), 5).unwrap());
        bytes[8] = 6;
        let err = decode_model(&reseal(bytes), INPUT_SHAPE).unwrap_err();
        assert!(matches!(err, Error::ModelFile(_)), "{err}");
    }

    #[test]
    fn architecture_mismatch_names_both_sides() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.rgc");
        save_model(&build_model(&ArchConfig { depth: Depth::Shallow, ..Default::default() }, 1).unwrap(), &path).unwrap();
        let err = load_model_expecting(&path, &ArchConfig::default()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("expected 7 layers") && msg.contains("found 5 layers"), "{msg}");
    }

    #[test]
    fn wrong_input_shape_is_a_fingerprint_error() {
        let bytes = encode_model(&build_model(&ArchConfig::default(), 5).unwrap());
        let err = decode_model(&bytes, [64, 64, 3]).unwrap_err();
        assert!(matches!(err, Error::ModelFile(ModelFileError::Fingerprint { .. })), "{err}");
    }
}
