//! Binary checkpoint format.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic        4 bytes   "GRUC"
//! version      u32
//! config       vocab_size, layers, blocks_per_layer, units_per_block,
//!              bptt_window (u32 each), learning_rate (f64), seed (u64)
//! vocabulary   char count (u32), then per char: codepoint (u32);
//!              then per char: relative frequency (f64); unk id (u32)
//! parameters   every tensor in ModelParams::tensors() order, each
//!              element as an f32
//! ```
//!
//! No padding, no trailing bytes. Parameters are quantized to f32 at
//! init and after every update, so a save/load round trip is bitwise.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::corpus::Vocabulary;
use crate::{Error, Result};

use super::{quantize_params, Model, ModelConfig, ModelParams};

const MAGIC: [u8; 4] = *b"GRUC";
pub const CHECKPOINT_VERSION: u32 = 1;

fn write_u32<W: Write>(w: &mut W, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_u64<W: Write>(w: &mut W, v: u64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_f64<W: Write>(w: &mut W, v: f64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn read_exact_or_truncated<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            Error::TruncatedCheckpoint
        } else {
            Error::Io(e)
        }
    })
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact_or_truncated(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact_or_truncated(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    read_exact_or_truncated(r, &mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn read_usize<R: Read>(r: &mut R, what: &str, max: usize) -> Result<usize> {
    let v = read_u32(r)? as usize;
    if v == 0 || v > max {
        return Err(Error::CorruptCheckpoint(format!(
            "{what} value {v} out of range"
        )));
    }
    Ok(v)
}

/// Serialize a model to `path`. The write is atomic: a temporary file
/// in the same directory is renamed over the target.
pub fn save_checkpoint(
    params: &ModelParams,
    config: &ModelConfig,
    vocab: &Vocabulary,
    path: &Path,
) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        w.write_all(&MAGIC)?;
        write_u32(&mut w, CHECKPOINT_VERSION)?;

        write_u32(&mut w, config.vocab_size as u32)?;
        write_u32(&mut w, config.layers as u32)?;
        write_u32(&mut w, config.blocks_per_layer as u32)?;
        write_u32(&mut w, config.units_per_block as u32)?;
        write_u32(&mut w, config.bptt_window as u32)?;
        write_f64(&mut w, config.learning_rate)?;
        write_u64(&mut w, config.seed)?;

        write_u32(&mut w, vocab.len() as u32)?;
        for &c in vocab.chars() {
            write_u32(&mut w, c as u32)?;
        }
        for &f in vocab.freqs() {
            write_f64(&mut w, f)?;
        }
        write_u32(&mut w, vocab.unk_id() as u32)?;

        for tensor in params.tensors() {
            for &v in tensor {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        w.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Load a model from `path`, rejecting malformed files.
pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let mut r = BufReader::new(File::open(path)?);

    let mut magic = [0u8; 4];
    read_exact_or_truncated(&mut r, &mut magic)?;
    if magic != MAGIC {
        return Err(Error::BadMagic);
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }

    const LIMIT: usize = 1 << 24;
    let config = ModelConfig {
        vocab_size: read_usize(&mut r, "vocab_size", LIMIT)?,
        layers: read_usize(&mut r, "layers", 1 << 10)?,
        blocks_per_layer: read_usize(&mut r, "blocks_per_layer", 1 << 10)?,
        units_per_block: read_usize(&mut r, "units_per_block", LIMIT)?,
        bptt_window: read_usize(&mut r, "bptt_window", LIMIT)?,
        learning_rate: read_f64(&mut r)?,
        seed: read_u64(&mut r)?,
    };
    config
        .validate()
        .map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;

    let n_chars = read_usize(&mut r, "vocabulary size", LIMIT)?;
    if n_chars != config.vocab_size {
        return Err(Error::CorruptCheckpoint(format!(
            "vocabulary size {n_chars} does not match config vocab_size {}",
            config.vocab_size
        )));
    }
    let mut chars = Vec::with_capacity(n_chars);
    for _ in 0..n_chars {
        let cp = read_u32(&mut r)?;
        let c = char::from_u32(cp)
            .ok_or_else(|| Error::CorruptCheckpoint(format!("invalid codepoint {cp:#x}")))?;
        chars.push(c);
    }
    let mut freq = Vec::with_capacity(n_chars);
    for _ in 0..n_chars {
        let f = read_f64(&mut r)?;
        if !(0.0..=1.0).contains(&f) {
            return Err(Error::CorruptCheckpoint(format!(
                "frequency {f} outside [0, 1]"
            )));
        }
        freq.push(f);
    }
    let unk_id = read_u32(&mut r)? as usize;
    let vocab = Vocabulary::from_parts(chars, freq, unk_id)?;

    let mut params = ModelParams::zeros(&config);
    for tensor in params.tensors_mut() {
        let mut bytes = vec![0u8; tensor.len() * 4];
        read_exact_or_truncated(&mut r, &mut bytes)?;
        for (v, chunk) in tensor.iter_mut().zip(bytes.chunks_exact(4)) {
            let f = f32::from_le_bytes(chunk.try_into().unwrap());
            if !f.is_finite() {
                return Err(Error::CorruptCheckpoint("non-finite parameter".into()));
            }
            *v = f as f64;
        }
    }
    let mut extra = [0u8; 1];
    match r.read(&mut extra)? {
        0 => {}
        _ => {
            return Err(Error::CorruptCheckpoint(
                "trailing bytes after parameters".into(),
            ))
        }
    }
    quantize_params(&mut params);
    Ok(Model {
        config,
        vocab,
        params,
    })
}
