//! Parameter traversal and the SFMA weight format.
//!
//! Layout (little-endian):
//!
//! | field        | type                         |
//! |--------------|------------------------------|
//! | magic        | `b"SFMA"`                    |
//! | version      | u32 (= 1)                    |
//! | config       | u32 byte length + JSON       |
//! | scalar count | u64                          |
//! | tensors      | f32 values in visiting order |
//!
//! A text manifest produced by [`manifest`] names each tensor and its shape
//! in the same order.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{de::DeserializeOwned, Serialize};

use crate::{NnError, Result};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"SFMA";
pub const WEIGHTS_VERSION: u32 = 1;

/// Visits every tensor in a fixed declared order.
pub trait Params {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64]));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64]));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, _, v| n += v.len());
        n
    }
}

/// One `name<TAB>d0xd1...` line per tensor.
pub fn manifest(model: &dyn Params, root: &str) -> String {
    let mut out = String::new();
    model.visit(root, &mut |name, shape, _| {
        let dims: Vec<String> = shape.iter().map(usize::to_string).collect();
        out.push_str(name);
        out.push('\t');
        out.push_str(&dims.join("x"));
        out.push('\n');
    });
    out
}

pub fn write_sfma<C: Serialize>(out: &mut impl Write, config: &C, model: &dyn Params) -> Result<()> {
    let cfg = serde_json::to_vec(config).map_err(|e| NnError::Format(e.to_string()))?;
    out.write_all(WEIGHTS_MAGIC)?;
    out.write_u32::<LittleEndian>(WEIGHTS_VERSION)?;
    out.write_u32::<LittleEndian>(cfg.len() as u32)?;
    out.write_all(&cfg)?;
    out.write_u64::<LittleEndian>(model.param_count() as u64)?;
    let mut status = Ok(());
    model.visit("", &mut |_, _, values| {
        for &v in values {
            if status.is_ok() {
                status = out.write_f32::<LittleEndian>(v as f32);
            }
        }
    });
    Ok(status?)
}

/// Reads the header, builds a model from the stored configuration and fills
/// its tensors.
pub fn read_sfma<C, M>(input: &mut impl Read, build: impl FnOnce(&C) -> Result<M>) -> Result<(C, M)>
where
    C: DeserializeOwned,
    M: Params,
{
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != WEIGHTS_MAGIC {
        return Err(NnError::Format(format!("bad magic {magic:?}")));
    }
    let version = input.read_u32::<LittleEndian>()?;
    if version != WEIGHTS_VERSION {
        return Err(NnError::Format(format!("unsupported version {version}")));
    }
    let len = input.read_u32::<LittleEndian>()? as usize;
    let mut cfg = vec![0u8; len];
    input.read_exact(&mut cfg)?;
    let config: C = serde_json::from_slice(&cfg).map_err(|e| NnError::Format(e.to_string()))?;
    let mut model = build(&config)?;
    let count = input.read_u64::<LittleEndian>()? as usize;
    if count != model.param_count() {
        return Err(NnError::Format(format!(
            "{count} stored scalars, configuration needs {}",
            model.param_count()
        )));
    }
    let mut status = Ok(());
    model.visit_mut("", &mut |_, _, values| {
        for v in values.iter_mut() {
            match input.read_f32::<LittleEndian>() {
                Ok(x) if status.is_ok() => *v = f64::from(x),
                Ok(_) => {}
                Err(e) => {
                    if status.is_ok() {
                        status = Err(e);
                    }
                }
            }
        }
    });
    status?;
    Ok((config, model))
}
