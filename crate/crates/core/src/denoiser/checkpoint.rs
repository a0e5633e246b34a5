//! Checkpoint file format.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic   4 bytes  "HIDF"
//! version u32      1
//! h, w, d_model, blocks, heads, d_appearance, d_step   u32 each
//! k_steps u32      diffusion step count the model was trained against
//! patchify u32     0 slice, 1 horizontal-only, 2 vertical-only, 3 local
//! n_params u64
//! params  n_params × f64, in canonical layout order
//! ```

use super::config::{ModelConfig, Patchify};
use super::params::DenoiserParams;
use crate::error::{Error, Result};
use std::io::{Read, Write};
use std::path::Path;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"HIDF";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn save_checkpoint(path: &Path, params: &DenoiserParams, k_steps: usize) -> Result<()> {
    let cfg = params.config();
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(&CHECKPOINT_MAGIC)?;
    for v in [
        CHECKPOINT_VERSION,
        cfg.h as u32,
        cfg.w as u32,
        cfg.d_model as u32,
        cfg.blocks as u32,
        cfg.heads as u32,
        cfg.d_appearance as u32,
        cfg.d_step as u32,
        k_steps as u32,
        cfg.patchify.code(),
    ] {
        f.write_all(&v.to_le_bytes())?;
    }
    f.write_all(&(params.len() as u64).to_le_bytes())?;
    for v in params.values() {
        f.write_all(&v.to_le_bytes())?;
    }
    f.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(DenoiserParams, usize)> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let bad = |reason: String| Error::Format {
        path: path.display().to_string(),
        reason,
    };
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(bad(format!("bad magic {magic:?}")));
    }
    let mut u32buf = [0u8; 4];
    let mut next_u32 = |f: &mut dyn Read| -> Result<u32> {
        f.read_exact(&mut u32buf)?;
        Ok(u32::from_le_bytes(u32buf))
    };
    let version = next_u32(&mut f)?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let h = next_u32(&mut f)? as usize;
    let w = next_u32(&mut f)? as usize;
    let d_model = next_u32(&mut f)? as usize;
    let blocks = next_u32(&mut f)? as usize;
    let heads = next_u32(&mut f)? as usize;
    let d_appearance = next_u32(&mut f)? as usize;
    let d_step = next_u32(&mut f)? as usize;
    let k_steps = next_u32(&mut f)? as usize;
    let patchify = Patchify::from_code(next_u32(&mut f)?)?;
    let cfg = ModelConfig {
        h,
        w,
        d_model,
        blocks,
        heads,
        d_appearance,
        d_step,
        patchify,
    };
    let mut u64buf = [0u8; 8];
    f.read_exact(&mut u64buf)?;
    let n_params = u64::from_le_bytes(u64buf) as usize;

    let mut params = DenoiserParams::zeros(cfg)?;
    if n_params != params.len() {
        return Err(bad(format!(
            "parameter count {n_params} does not match header shape (expected {})",
            params.len()
        )));
    }
    let mut values = vec![0.0f64; n_params];
    for v in &mut values {
        f.read_exact(&mut u64buf)?;
        *v = f64::from_le_bytes(u64buf);
    }
    let mut trailing = [0u8; 1];
    if f.read(&mut trailing)? != 0 {
        return Err(bad("trailing bytes after parameter block".into()));
    }
    params.set_values(values)?;
    Ok((params, k_steps))
}
