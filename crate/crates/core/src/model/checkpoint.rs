//! Checkpoint persistence.
//!
//! Flat, framework-free layout, all integers and floats little-endian:
//!
//! ```text
//!   magic        8 bytes  "TMPCKPT1"
//!   config       11 x u32: embed_dim, ff_dim, embed_layers, class_layers,
//!                decoder_layers, l_max, l_prime, vocab, num_classes, heads,
//!                byte_cap
//!   lambda       f32
//!   num_tensors  u32
//!   per tensor:  u16 name length, name bytes (utf-8),
//!                u32 rows, u32 cols, rows*cols f32 values (row-major)
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::params::{ModelConfig, ModelParams};

const MAGIC: &[u8; 8] = b"TMPCKPT1";

pub fn save_checkpoint(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    write_checkpoint(params, std::io::BufWriter::new(f))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    read_checkpoint(std::io::BufReader::new(f))
}

pub fn write_checkpoint(params: &ModelParams, mut w: impl Write) -> Result<()> {
    let io_err = |e| Error::io("<checkpoint>", e);
    let cfg = &params.config;
    w.write_all(MAGIC).map_err(io_err)?;
    for field in [
        cfg.embed_dim,
        cfg.ff_dim,
        cfg.embed_layers,
        cfg.class_layers,
        cfg.decoder_layers,
        cfg.l_max,
        cfg.l_prime,
        cfg.vocab,
        cfg.num_classes,
        cfg.heads,
        cfg.byte_cap,
    ] {
        w.write_all(&(field as u32).to_le_bytes()).map_err(io_err)?;
    }
    w.write_all(&(cfg.lambda as f32).to_le_bytes()).map_err(io_err)?;
    w.write_all(&(params.tensors().len() as u32).to_le_bytes()).map_err(io_err)?;
    for (name, tensor) in params.tensors() {
        let name_bytes = name.as_bytes();
        w.write_all(&(name_bytes.len() as u16).to_le_bytes()).map_err(io_err)?;
        w.write_all(name_bytes).map_err(io_err)?;
        w.write_all(&(tensor.nrows() as u32).to_le_bytes()).map_err(io_err)?;
        w.write_all(&(tensor.ncols() as u32).to_le_bytes()).map_err(io_err)?;
        for &v in tensor.iter() {
            w.write_all(&(v as f32).to_le_bytes()).map_err(io_err)?;
        }
    }
    Ok(())
}

pub fn read_checkpoint(mut r: impl Read) -> Result<ModelParams> {
    let io_err = |e| Error::io("<checkpoint>", e);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic; not a checkpoint file".into()));
    }

    let mut u32buf = [0u8; 4];
    let mut next_u32 = |r: &mut dyn Read| -> Result<u32> {
        r.read_exact(&mut u32buf).map_err(|e| Error::io("<checkpoint>", e))?;
        Ok(u32::from_le_bytes(u32buf))
    };

    let mut fields = [0usize; 11];
    for f in fields.iter_mut() {
        *f = next_u32(&mut r)? as usize;
    }
    let mut f32buf = [0u8; 4];
    r.read_exact(&mut f32buf).map_err(io_err)?;
    let lambda = f32::from_le_bytes(f32buf) as f64;

    let config = ModelConfig {
        embed_dim: fields[0],
        ff_dim: fields[1],
        embed_layers: fields[2],
        class_layers: fields[3],
        decoder_layers: fields[4],
        l_max: fields[5],
        l_prime: fields[6],
        vocab: fields[7],
        num_classes: fields[8],
        heads: fields[9],
        byte_cap: fields[10],
        lambda,
    };
    config.validate().map_err(|e| Error::Checkpoint(format!("invalid stored config: {e}")))?;

    let mut params = ModelParams::init(&config, 0)
        .map_err(|e| Error::Checkpoint(format!("cannot allocate params: {e}")))?;

    let num_tensors = next_u32(&mut r)? as usize;
    if num_tensors != params.tensors().len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {num_tensors} tensors, config implies {}",
            params.tensors().len()
        )));
    }

    for _ in 0..num_tensors {
        let mut lenbuf = [0u8; 2];
        r.read_exact(&mut lenbuf).map_err(io_err)?;
        let name_len = u16::from_le_bytes(lenbuf) as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes).map_err(io_err)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::Checkpoint("tensor name is not utf-8".into()))?;
        let rows = next_u32(&mut r)? as usize;
        let cols = next_u32(&mut r)? as usize;

        let expected = params
            .tensor_index(&name)
            .ok_or_else(|| Error::Checkpoint(format!("unexpected tensor {name}")))?;
        let target_shape = params.tensors()[expected].1.dim();
        if target_shape != (rows, cols) {
            return Err(Error::Checkpoint(format!(
                "tensor {name} has shape ({rows}, {cols}), expected {target_shape:?}"
            )));
        }

        let mut data = vec![0u8; rows * cols * 4];
        r.read_exact(&mut data).map_err(io_err)?;
        let tensor = params.get_mut(&name);
        for (slot, chunk) in tensor.iter_mut().zip(data.chunks_exact(4)) {
            *slot = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]) as f64;
        }
    }

    Ok(params)
}
