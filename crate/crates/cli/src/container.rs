//! Binary tensor container used by `--inputs` and output digests.
//!
//! ```text
//! file    := "DATI" version:u8 count:u32 tensor*
//! tensor  := name_len:u16 name:utf8 elem:u8 rank:u8 dim:u32* payload
//! ```
//! All integers are little-endian. The payload is row-major; i4 and i8
//! take one byte per element, i16 two, i32 and f32 four, bf16 two (the
//! upper half of the f32 bit pattern).

use std::collections::BTreeMap;

use datoc::ir::ElemType;
use datoc::sim::TensorValue;
use sha2::{Digest, Sha256};

pub const MAGIC: &[u8; 4] = b"DATI";
pub const VERSION: u8 = 1;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ContainerError {
    #[error("not a tensor container (bad magic)")]
    Magic,
    #[error("unsupported container version {0}")]
    Version(u8),
    #[error("truncated container")]
    Truncated,
    #[error("unknown element code {0}")]
    Elem(u8),
    #[error("tensor name is not UTF-8")]
    Name,
    #[error("{0} trailing bytes")]
    Trailing(usize),
}

fn width(e: ElemType) -> usize {
    match e {
        ElemType::I4 | ElemType::I8 => 1,
        ElemType::I16 | ElemType::Bf16 => 2,
        ElemType::I32 | ElemType::F32 => 4,
    }
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &TensorValue) {
    out.extend((name.len() as u16).to_le_bytes());
    out.extend(name.as_bytes());
    out.push(t.elem.code());
    out.push(t.shape.len() as u8);
    for &d in &t.shape {
        out.extend((d as u32).to_le_bytes());
    }
    match t.elem {
        ElemType::F32 => t.floats().iter().for_each(|x| out.extend(x.to_le_bytes())),
        ElemType::Bf16 => t
            .floats()
            .iter()
            .for_each(|x| out.extend(((x.to_bits() >> 16) as u16).to_le_bytes())),
        e => {
            let w = width(e);
            for &x in t.ints() {
                out.extend(&x.to_le_bytes()[..w]);
            }
        }
    }
}

pub fn encode(tensors: &BTreeMap<String, TensorValue>) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    out.push(VERSION);
    out.extend((tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        put_tensor(&mut out, name, t);
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ContainerError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or(ContainerError::Truncated)?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, ContainerError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, ContainerError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, ContainerError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

fn sign_extend(bytes: &[u8], bits: u32) -> i64 {
    let mut raw = [0u8; 8];
    raw[..bytes.len()].copy_from_slice(bytes);
    let v = i64::from_le_bytes(raw);
    let shift = 64 - bits;
    (v << shift) >> shift
}

pub fn decode(buf: &[u8]) -> Result<BTreeMap<String, TensorValue>, ContainerError> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(ContainerError::Magic);
    }
    let v = r.u8()?;
    if v != VERSION {
        return Err(ContainerError::Version(v));
    }
    let count = r.u32()?;
    let mut out = BTreeMap::new();
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| ContainerError::Name)?
            .to_string();
        let code = r.u8()?;
        let elem = ElemType::from_code(code).ok_or(ContainerError::Elem(code))?;
        let rank = r.u8()? as usize;
        let shape = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let n: usize = shape.iter().product();
        let w = width(elem);
        let payload = r.take(n.checked_mul(w).ok_or(ContainerError::Truncated)?)?;
        let t = match elem {
            ElemType::F32 => TensorValue::from_floats(
                elem,
                shape,
                payload
                    .chunks(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            ElemType::Bf16 => TensorValue::from_floats(
                elem,
                shape,
                payload
                    .chunks(2)
                    .map(|c| f32::from_bits((u16::from_le_bytes(c.try_into().unwrap()) as u32) << 16))
                    .collect(),
            ),
            e => TensorValue::from_ints(
                e,
                shape,
                payload.chunks(w).map(|c| sign_extend(c, e.bitwidth())).collect(),
            ),
        };
        out.insert(name, t);
    }
    if r.pos != buf.len() {
        return Err(ContainerError::Trailing(buf.len() - r.pos));
    }
    Ok(out)
}

/// SHA-256 of the container encoding, as lowercase hex.
pub fn digest(tensors: &BTreeMap<String, TensorValue>) -> String {
    Sha256::digest(encode(tensors))
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
