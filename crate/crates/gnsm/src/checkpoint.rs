//! Binary checkpoint container: model config, schema binding,
//! standardization stats, and all weight/optimizer tensors, bit-exact.
//!
//! Layout: 8-byte magic, u32 version, u64 header length, JSON header
//! (dtype tag, config, metadata, tensor lengths), then raw little-endian
//! tensor sections in a fixed order (frozen frequencies, live weights,
//! EMA weights, Adam first and second moments).

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::ContStats;
use crate::error::{Error, Result};
use crate::network::{ModelConfig, ModelParameters, ParamSet};
use crate::schema::CategoricalSchema;
use crate::trainer::AdamState;
use crate::Scalar;

const MAGIC: &[u8; 8] = b"GNSMCKPT";
const VERSION: u32 = 1;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Serialize, Deserialize)]
struct Header {
    dtype: String,
    config: ModelConfig,
    schema: CategoricalSchema,
    delta: f64,
    step: u64,
    best_val_loss: f64,
    cont_stats: Option<ContStats>,
    opt_step: u64,
    n_params: usize,
    fourier_len: usize,
}

/// Everything needed to resume or score: best weights, optimizer state,
/// and the data bindings (full schema, standardization stats). Carrying
/// the schema itself lets scoring parse raw CSV against exactly the
/// vocabulary the model was trained on.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<S: Scalar> {
    pub config: ModelConfig,
    pub schema: CategoricalSchema,
    /// Logit-encoding offset the training data used; scoring must reuse it.
    pub delta: f64,
    pub step: u64,
    pub best_val_loss: f64,
    pub cont_stats: Option<ContStats>,
    pub params: ModelParameters<S>,
    pub opt: AdamState<S>,
}

fn write_section<S: Scalar>(out: &mut Vec<u8>, values: impl Iterator<Item = S>) {
    for v in values {
        v.write_le(out);
    }
}

fn read_section<S: Scalar>(bytes: &[u8], pos: &mut usize, n: usize) -> Result<Vec<S>> {
    let need = n * S::BYTES;
    let end = pos.checked_add(need).filter(|&e| e <= bytes.len());
    let end = end.ok_or_else(|| {
        Error::Validation("checkpoint truncated: tensor section out of bounds".into())
    })?;
    let out = bytes[*pos..end]
        .chunks_exact(S::BYTES)
        .map(S::read_le)
        .collect();
    *pos = end;
    Ok(out)
}

impl<S: Scalar> Checkpoint<S> {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let n_params = self.params.live.n_params();
        if self.params.ema_shadow.n_params() != n_params
            || self.opt.m.len() != n_params
            || self.opt.v.len() != n_params
        {
            return Err(Error::Validation(
                "parameter, EMA, and optimizer tensor sizes disagree".into(),
            ));
        }
        if self.params.live.fourier_freqs != self.params.ema_shadow.fourier_freqs {
            return Err(Error::Validation(
                "frozen frequencies differ between live and EMA weights".into(),
            ));
        }
        let header = Header {
            dtype: S::DTYPE.to_string(),
            config: self.config.clone(),
            schema: self.schema.clone(),
            delta: self.delta,
            step: self.step,
            best_val_loss: self.best_val_loss,
            cont_stats: self.cont_stats.clone(),
            opt_step: self.opt.step,
            n_params,
            fourier_len: self.params.live.fourier_freqs.len(),
        };
        let header_json = serde_json::to_vec(&header)?;

        let mut out = Vec::with_capacity(
            MAGIC.len() + 12 + header_json.len() + (4 * n_params + header.fourier_len) * S::BYTES,
        );
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
        out.extend_from_slice(&header_json);
        write_section(&mut out, self.params.live.fourier_freqs.iter().copied());
        write_section(&mut out, self.params.live.to_flat().into_iter());
        write_section(&mut out, self.params.ema_shadow.to_flat().into_iter());
        write_section(&mut out, self.opt.m.iter().copied());
        write_section(&mut out, self.opt.v.iter().copied());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 12 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::Validation("not a checkpoint file".into()));
        }
        let mut pos = MAGIC.len();
        let version = u32::from_le_bytes(bytes[pos..pos + 4].try_into().expect("4 bytes"));
        pos += 4;
        if version != VERSION {
            return Err(Error::Validation(format!(
                "unsupported checkpoint version {version} (expected {VERSION})"
            )));
        }
        let header_len =
            u64::from_le_bytes(bytes[pos..pos + 8].try_into().expect("8 bytes")) as usize;
        pos += 8;
        if pos + header_len > bytes.len() {
            return Err(Error::Validation("checkpoint truncated: header".into()));
        }
        let header: Header = serde_json::from_slice(&bytes[pos..pos + header_len])?;
        pos += header_len;

        if header.dtype != S::DTYPE {
            return Err(Error::Validation(format!(
                "checkpoint stores {} weights, caller expects {}",
                header.dtype,
                S::DTYPE
            )));
        }
        let mut live = ParamSet::<S>::zeros(&header.config)?;
        if live.n_params() != header.n_params || live.fourier_freqs.len() != header.fourier_len {
            return Err(Error::Validation(
                "tensor lengths do not match the stored config".into(),
            ));
        }
        let fourier: Vec<S> = read_section(bytes, &mut pos, header.fourier_len)?;
        let live_flat: Vec<S> = read_section(bytes, &mut pos, header.n_params)?;
        let ema_flat: Vec<S> = read_section(bytes, &mut pos, header.n_params)?;
        let m: Vec<S> = read_section(bytes, &mut pos, header.n_params)?;
        let v: Vec<S> = read_section(bytes, &mut pos, header.n_params)?;
        if pos != bytes.len() {
            return Err(Error::Validation(format!(
                "checkpoint has {} trailing bytes",
                bytes.len() - pos
            )));
        }

        live.fourier_freqs = ndarray::Array1::from_vec(fourier);
        let mut ema = live.clone();
        live.assign_flat(&live_flat)?;
        ema.assign_flat(&ema_flat)?;
        Ok(Checkpoint {
            config: header.config,
            schema: header.schema,
            delta: header.delta,
            step: header.step,
            best_val_loss: header.best_val_loss,
            cont_stats: header.cont_stats,
            params: ModelParameters {
                live,
                ema_shadow: ema,
            },
            opt: AdamState {
                step: header.opt_step,
                m,
                v,
            },
        })
    }

    /// Hash of the embedded schema, the value scorer files bind against.
    pub fn schema_hash(&self) -> String {
        self.schema.hash()
    }

    /// Write to disk; returns the SHA-256 of the file contents, which
    /// scorer files embed to bind themselves to this checkpoint.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<String> {
        let bytes = self.to_bytes()?;
        std::fs::write(path.as_ref(), &bytes)?;
        Ok(sha256_hex(&bytes))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, String)> {
        let bytes = std::fs::read(path.as_ref())?;
        let ckpt = Self::from_bytes(&bytes)?;
        Ok((ckpt, sha256_hex(&bytes)))
    }
}

/// Read only the stored dtype tag ("f32" or "f64") without parsing
/// tensors, so callers can dispatch to the right `Checkpoint<S>`.
pub fn peek_dtype(path: impl AsRef<Path>) -> Result<String> {
    let bytes = std::fs::read(path.as_ref())?;
    if bytes.len() < MAGIC.len() + 12 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Validation("not a checkpoint file".into()));
    }
    let mut pos = MAGIC.len() + 4;
    let header_len = u64::from_le_bytes(bytes[pos..pos + 8].try_into().expect("8 bytes")) as usize;
    pos += 8;
    if pos + header_len > bytes.len() {
        return Err(Error::Validation("checkpoint truncated: header".into()));
    }
    let header: Header = serde_json::from_slice(&bytes[pos..pos + header_len])?;
    Ok(header.dtype)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::init_parameters;
    use crate::schema::Feature;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_schema() -> CategoricalSchema {
        CategoricalSchema::new(vec![
            Feature::categorical("color", vec!["r".into(), "g".into(), "b".into()]),
            Feature::categorical("state", vec!["on".into(), "off".into()]),
            Feature::continuous("mass"),
            Feature::continuous("length"),
        ])
        .unwrap()
    }

    fn small_config() -> ModelConfig {
        let mut c = ModelConfig::new(small_schema().input_dim());
        c.width = 8;
        c.n_blocks = 2;
        c.time_embedding_size = 8;
        c.n_scales = 3;
        c.sigma_min = Some(0.1);
        c.sigma_max = Some(1.0);
        c
    }

    fn sample_checkpoint(seed: u64) -> Checkpoint<f32> {
        let config = small_config();
        let params = init_parameters::<f32>(&config, seed).unwrap();
        let n = params.live.n_params();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        let opt = AdamState {
            step: 42,
            m: (0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect(),
            v: (0..n).map(|_| rng.gen_range(0.0f32..1.0)).collect(),
        };
        Checkpoint {
            config,
            schema: small_schema(),
            delta: 1e-6,
            step: 1000,
            best_val_loss: 0.125,
            cont_stats: Some(ContStats {
                mean: vec![1.5, -2.0],
                std: vec![0.5, 3.0],
            }),
            params,
            opt,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = sample_checkpoint(0);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("model.ckpt");
        let hash = ck.save(&p).unwrap();
        let (back, hash2) = Checkpoint::<f32>::load(&p).unwrap();
        assert_eq!(hash, hash2);
        assert_eq!(back.config, ck.config);
        assert_eq!(back.schema, ck.schema);
        assert_eq!(back.schema_hash(), ck.schema.hash());
        assert_eq!(back.step, ck.step);
        assert_eq!(back.best_val_loss, ck.best_val_loss);
        assert_eq!(back.cont_stats, ck.cont_stats);
        // Bitwise tensor equality.
        assert_eq!(back.params.live.to_flat(), ck.params.live.to_flat());
        assert_eq!(
            back.params.ema_shadow.to_flat(),
            ck.params.ema_shadow.to_flat()
        );
        assert_eq!(back.params.live.fourier_freqs, ck.params.live.fourier_freqs);
        assert_eq!(back.opt, ck.opt);
    }

    #[test]
    fn dtype_mismatch_is_rejected() {
        let ck = sample_checkpoint(1);
        let bytes = ck.to_bytes().unwrap();
        let err = Checkpoint::<f64>::from_bytes(&bytes).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        assert!(err.to_string().contains("f32"), "{err}");
    }

    #[test]
    fn corrupted_and_truncated_files_are_rejected() {
        let ck = sample_checkpoint(2);
        let mut bytes = ck.to_bytes().unwrap();
        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(Checkpoint::<f32>::from_bytes(&bad_magic).is_err());

        let truncated = &bytes[..bytes.len() - 5];
        assert!(Checkpoint::<f32>::from_bytes(truncated).is_err());

        bytes.extend_from_slice(&[0, 0, 0]);
        let err = Checkpoint::<f32>::from_bytes(&bytes).unwrap_err().to_string();
        assert!(err.contains("trailing"), "{err}");
    }

    #[test]
    fn hash_tracks_content() {
        let ck = sample_checkpoint(3);
        let a = sha256_hex(&ck.to_bytes().unwrap());
        let b = sha256_hex(&ck.to_bytes().unwrap());
        assert_eq!(a, b, "serialization must be deterministic");

        let mut changed = ck.clone();
        changed.params.live.visit_mut()[0][0] += 0.5;
        let c = sha256_hex(&changed.to_bytes().unwrap());
        assert_ne!(a, c);
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = Checkpoint::<f32>::load("/nonexistent/model.ckpt").unwrap_err();
        assert!(matches!(err, Error::Io(_)));
    }

    #[test]
    fn peek_dtype_reads_tag_without_tensor_parse() {
        let ck = sample_checkpoint(4);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("model.ckpt");
        ck.save(&p).unwrap();
        assert_eq!(peek_dtype(&p).unwrap(), "f32");
        assert!(peek_dtype("/nonexistent/model.ckpt").is_err());

        std::fs::write(dir.path().join("junk.bin"), b"not a checkpoint").unwrap();
        assert!(peek_dtype(dir.path().join("junk.bin")).is_err());
    }
}
