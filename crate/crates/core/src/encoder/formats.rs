//! Little-endian binary exports.
//!
//! * `RANC` condition tensor: magic, u32 version (1), u32 C, u32 H, u32 W,
//!   then C*H*W f32 in row-major `(C, H, W)` order.
//! * `RANM` attention mask: magic, u32 N_I, u32 N_T, then N_I rows of
//!   ceil(N_T / 8) bytes; token `t` of a row is bit `7 - t % 8` of byte
//!   `t / 8` (MSB first), trailing bits zero.
//! * `RANW` encoder weights: magic, u32 version (1), u32 text_dim,
//!   u32 color_dim, u32 channels, u32 palette size (156), then f32 arrays
//!   color_projection, text_conv, color_conv, box_conv, keypoint_conv,
//!   merge in that order.

use std::io::{self, Read, Write};

use thiserror::Error;

use super::{AttentionMask, EncoderWeights};
use crate::edit::LatentTensor;
use crate::panel::PALETTE_SIZE;

const CONDITION_MAGIC: &[u8; 4] = b"RANC";
const MASK_MAGIC: &[u8; 4] = b"RANM";
const WEIGHTS_MAGIC: &[u8; 4] = b"RANW";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("bad magic {found:?}, expected {expected:?}")]
    Magic { found: [u8; 4], expected: [u8; 4] },
    #[error("unsupported version {0}")]
    Version(u32),
    #[error("invalid header: {0}")]
    Header(String),
}

fn put_u32(w: &mut impl Write, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_f32s(w: &mut impl Write, vs: &[f32]) -> io::Result<()> {
    let mut buf = Vec::with_capacity(vs.len() * 4);
    for v in vs {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

fn get_u32(r: &mut impl Read) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_f32s(r: &mut impl Read, n: usize) -> io::Result<Vec<f32>> {
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf)?;
    Ok(buf.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

fn expect_magic(r: &mut impl Read, expected: &[u8; 4]) -> Result<(), FormatError> {
    let mut found = [0u8; 4];
    r.read_exact(&mut found)?;
    if &found != expected {
        return Err(FormatError::Magic { found, expected: *expected });
    }
    Ok(())
}

fn dim(v: usize) -> io::Result<u32> {
    u32::try_from(v).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "dimension exceeds u32"))
}

/// Element count, refusing products that overflow.
fn volume(dims: &[u32]) -> Result<usize, FormatError> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
        .ok_or_else(|| FormatError::Header(format!("dimensions {dims:?} overflow")))
}

pub fn write_condition(w: &mut impl Write, t: &LatentTensor) -> io::Result<()> {
    w.write_all(CONDITION_MAGIC)?;
    put_u32(w, FORMAT_VERSION)?;
    put_u32(w, dim(t.channels)?)?;
    put_u32(w, dim(t.height)?)?;
    put_u32(w, dim(t.width)?)?;
    put_f32s(w, &t.data)
}

pub fn read_condition(r: &mut impl Read) -> Result<LatentTensor, FormatError> {
    expect_magic(r, CONDITION_MAGIC)?;
    let version = get_u32(r)?;
    if version != FORMAT_VERSION {
        return Err(FormatError::Version(version));
    }
    let (c, h, w) = (get_u32(r)?, get_u32(r)?, get_u32(r)?);
    let n = volume(&[c, h, w])?;
    let data = get_f32s(r, n)?;
    Ok(LatentTensor { channels: c as usize, height: h as usize, width: w as usize, data })
}

pub fn write_attention_mask(w: &mut impl Write, m: &AttentionMask) -> io::Result<()> {
    w.write_all(MASK_MAGIC)?;
    put_u32(w, dim(m.n_patches)?)?;
    put_u32(w, dim(m.n_tokens)?)?;
    let row_bytes = m.n_tokens.div_ceil(8);
    let mut buf = vec![0u8; row_bytes * m.n_patches];
    for p in 0..m.n_patches {
        for t in 0..m.n_tokens {
            if m.get(p, t) == 1 {
                buf[p * row_bytes + t / 8] |= 0x80 >> (t % 8);
            }
        }
    }
    w.write_all(&buf)
}

/// Reads the bit matrix back; per-concept spans are not part of the format.
pub fn read_attention_mask(r: &mut impl Read) -> Result<AttentionMask, FormatError> {
    expect_magic(r, MASK_MAGIC)?;
    let (n_i, n_t) = (get_u32(r)? as usize, get_u32(r)? as usize);
    let row_bytes = n_t.div_ceil(8);
    let total = n_i
        .checked_mul(row_bytes)
        .ok_or_else(|| FormatError::Header(format!("{n_i} x {n_t} overflows")))?;
    let mut buf = vec![0u8; total];
    r.read_exact(&mut buf)?;
    let mut bits = vec![0u8; n_i * n_t];
    for p in 0..n_i {
        for t in 0..n_t {
            bits[p * n_t + t] = (buf[p * row_bytes + t / 8] >> (7 - t % 8)) & 1;
        }
    }
    Ok(AttentionMask { n_patches: n_i, n_tokens: n_t, bits, spans: Vec::new() })
}

pub fn write_weights(w: &mut impl Write, weights: &EncoderWeights) -> io::Result<()> {
    weights.check().map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e.to_string()))?;
    w.write_all(WEIGHTS_MAGIC)?;
    put_u32(w, FORMAT_VERSION)?;
    put_u32(w, dim(weights.text_dim)?)?;
    put_u32(w, dim(weights.color_dim)?)?;
    put_u32(w, dim(weights.channels)?)?;
    put_u32(w, dim(PALETTE_SIZE)?)?;
    for part in [
        &weights.color_projection,
        &weights.text_conv,
        &weights.color_conv,
        &weights.box_conv,
        &weights.keypoint_conv,
        &weights.merge,
    ] {
        put_f32s(w, part)?;
    }
    Ok(())
}

pub fn read_weights(r: &mut impl Read) -> Result<EncoderWeights, FormatError> {
    expect_magic(r, WEIGHTS_MAGIC)?;
    let version = get_u32(r)?;
    if version != FORMAT_VERSION {
        return Err(FormatError::Version(version));
    }
    let (t, c_dim, ch, pal) = (get_u32(r)?, get_u32(r)?, get_u32(r)?, get_u32(r)?);
    if pal as usize != PALETTE_SIZE {
        return Err(FormatError::Header(format!("palette size {pal}, expected {PALETTE_SIZE}")));
    }
    Ok(EncoderWeights {
        text_dim: t as usize,
        color_dim: c_dim as usize,
        channels: ch as usize,
        color_projection: get_f32s(r, volume(&[c_dim, pal])?)?,
        text_conv: get_f32s(r, volume(&[ch, t])?)?,
        color_conv: get_f32s(r, volume(&[ch, c_dim])?)?,
        box_conv: get_f32s(r, ch as usize)?,
        keypoint_conv: get_f32s(r, ch as usize)?,
        merge: get_f32s(r, volume(&[ch, ch, 9])?)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn condition_header_layout() {
        let t = LatentTensor::from_vec(1, 1, 2, vec![1.0, -2.5]).unwrap();
        let mut buf = Vec::new();
        write_condition(&mut buf, &t).unwrap();
        assert_eq!(&buf[..4], b"RANC");
        assert_eq!(&buf[4..20], &[1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(&buf[20..24], &1.0f32.to_le_bytes());
        assert_eq!(buf.len(), 28);
        assert_eq!(read_condition(&mut buf.as_slice()).unwrap(), t);
    }

    #[test]
    fn mask_bit_packing() {
        let m = AttentionMask {
            n_patches: 2,
            n_tokens: 10,
            bits: vec![1, 0, 0, 0, 0, 0, 0, 0, 1, 1, 0, 1, 1, 1, 1, 1, 1, 1, 0, 0],
            spans: vec![],
        };
        let mut buf = Vec::new();
        write_attention_mask(&mut buf, &m).unwrap();
        assert_eq!(&buf[12..], &[0b1000_0000, 0b1100_0000, 0b0111_1111, 0b0000_0000]);
        assert_eq!(read_attention_mask(&mut buf.as_slice()).unwrap(), m);
    }

    #[test]
    fn weights_roundtrip_bit_exact() {
        let w = EncoderWeights::from_seed(11, 6, 5, 3);
        let mut buf = Vec::new();
        write_weights(&mut buf, &w).unwrap();
        let back = read_weights(&mut buf.as_slice()).unwrap();
        assert_eq!(back, w);
        let mut again = Vec::new();
        write_weights(&mut again, &back).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn wrong_magic_and_truncation() {
        assert!(matches!(read_condition(&mut &b"RANMxxxx"[..]), Err(FormatError::Magic { .. })));
        let mut buf = Vec::new();
        write_condition(&mut buf, &LatentTensor::zeros(2, 2, 2)).unwrap();
        buf.truncate(buf.len() - 1);
        assert!(matches!(read_condition(&mut buf.as_slice()), Err(FormatError::Io(_))));
    }
}
