//! Delta checkpoint file (`*.svdd`).
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "SVDD" | u32 version=1 | u64 base_fingerprint | u32 entry_count
//! per entry:
//!   u16 name_len | name UTF-8 | u8 kind
//!   kind 0 spectral: u32 delta_len | u32 active_len | delta_len * f32
//!   kind 1 dense1d:  u32 len                        | len * f32
//!   kind 2 lora:     u32 len_b | u32 len_a          | len_b * f32 | len_a * f32
//! u32 crc32 (IEEE) of all preceding bytes
//! ```
//!
//! `active_len` persists a rank mask (`0xFFFF_FFFF` when unmasked).
//! Entries are written spectral first, then dense, then lora, each group
//! sorted by name, so equal checkpoints serialize to equal bytes.

use std::path::Path;

use svdiff_linalg::byteio::{put_f32s, put_name, put_u32, put_u64, Reader};
use svdiff_linalg::error::{Error, Result};
use svdiff_linalg::DenseTensor;

use crate::types::{DeltaCheckpoint, LoraDelta, LoraLayer, SpectralShift};

const MAGIC: &[u8; 4] = b"SVDD";
const VERSION: u32 = 1;
const NO_MASK: u32 = u32::MAX;

const KIND_SPECTRAL: u8 = 0;
const KIND_DENSE1D: u8 = 1;
const KIND_LORA: u8 = 2;

/// Raw decoded contents of a `.svdd` file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SvddContents {
    pub fingerprint: u64,
    pub spectral: Vec<SpectralShift>,
    pub dense: Vec<(String, DenseTensor)>,
    pub lora: Vec<(String, LoraLayer)>,
}

impl SvddContents {
    pub fn into_delta_checkpoint(self) -> Result<DeltaCheckpoint> {
        if !self.lora.is_empty() {
            return Err(Error::Format(
                "file holds rank-1 adapter entries, not a spectral delta checkpoint".into(),
            ));
        }
        let mut out = DeltaCheckpoint::new(self.fingerprint);
        for s in self.spectral {
            out.insert_shift(s);
        }
        for (name, t) in self.dense {
            out.insert_dense(&name, t)?;
        }
        Ok(out)
    }

    pub fn into_lora_delta(self) -> Result<LoraDelta> {
        if !self.spectral.is_empty() {
            return Err(Error::Format(
                "file holds spectral shift entries, not a rank-1 adapter".into(),
            ));
        }
        let mut out = LoraDelta::new(self.fingerprint);
        for (name, pair) in self.lora {
            out.insert_pair(&name, pair);
        }
        for (name, t) in self.dense {
            out.insert_dense(&name, t)?;
        }
        Ok(out)
    }
}

pub fn delta_to_bytes(d: &DeltaCheckpoint) -> Result<Vec<u8>> {
    let mut buf = header(d.fingerprint, d.shift_count() + d.dense_count());
    for (name, shift) in d.shifts() {
        put_name(&mut buf, name)?;
        buf.push(KIND_SPECTRAL);
        put_u32(&mut buf, shift.rank() as u32);
        put_u32(&mut buf, shift.rank_mask().map_or(NO_MASK, |k| k as u32));
        put_f32s(&mut buf, shift.delta());
    }
    write_dense(&mut buf, d.dense_deltas())?;
    seal(&mut buf);
    Ok(buf)
}

pub fn lora_to_bytes(l: &LoraDelta) -> Result<Vec<u8>> {
    let count = l.pairs().count() + l.dense_deltas().count();
    let mut buf = header(l.fingerprint, count);
    write_dense(&mut buf, l.dense_deltas())?;
    for (name, pair) in l.pairs() {
        put_name(&mut buf, name)?;
        buf.push(KIND_LORA);
        put_u32(&mut buf, pair.b.len() as u32);
        put_u32(&mut buf, pair.a.len() as u32);
        put_f32s(&mut buf, &pair.b);
        put_f32s(&mut buf, &pair.a);
    }
    seal(&mut buf);
    Ok(buf)
}

fn header(fingerprint: u64, count: usize) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, VERSION);
    put_u64(&mut buf, fingerprint);
    put_u32(&mut buf, count as u32);
    buf
}

fn write_dense<'a>(
    buf: &mut Vec<u8>,
    dense: impl Iterator<Item = (&'a String, &'a DenseTensor)>,
) -> Result<()> {
    for (name, t) in dense {
        put_name(buf, name)?;
        buf.push(KIND_DENSE1D);
        put_u32(buf, t.numel() as u32);
        put_f32s(buf, t.data());
    }
    Ok(())
}

fn seal(buf: &mut Vec<u8>) {
    let crc = crc32(buf);
    put_u32(buf, crc);
}

pub fn from_bytes(bytes: &[u8]) -> Result<SvddContents> {
    if bytes.len() < 4 {
        return Err(Error::CorruptFile("file shorter than its magic".into()));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&bytes[..4]),
            String::from_utf8_lossy(MAGIC)
        )));
    }
    if bytes.len() < 8 {
        return Err(Error::CorruptFile("file truncated before checksum".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored_crc = u32::from_le_bytes(tail.try_into().unwrap());
    let actual_crc = crc32(body);
    if stored_crc != actual_crc {
        return Err(Error::CorruptFile(format!(
            "crc mismatch: stored {stored_crc:#010x}, computed {actual_crc:#010x}"
        )));
    }

    let mut r = Reader::new(body);
    r.magic(MAGIC, "delta checkpoint")?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("delta checkpoint version {version}, expected {VERSION}")));
    }
    let fingerprint = r.u64()?;
    let count = r.u32()? as usize;
    let mut out = SvddContents {
        fingerprint,
        ..Default::default()
    };
    for _ in 0..count {
        let name = r.name()?;
        let kind = r.u8()?;
        match kind {
            KIND_SPECTRAL => {
                let len = r.u32()? as usize;
                let mask = r.u32()?;
                let delta = r.f32s(len)?;
                let mask = if mask == NO_MASK { None } else { Some(mask as usize) };
                out.spectral.push(SpectralShift::with_mask(&name, delta, mask)?);
            }
            KIND_DENSE1D => {
                let len = r.u32()? as usize;
                let data = r.f32s(len)?;
                out.dense.push((name, DenseTensor::new(vec![len], data)?));
            }
            KIND_LORA => {
                let len_b = r.u32()? as usize;
                let len_a = r.u32()? as usize;
                let b = r.f32s(len_b)?;
                let a = r.f32s(len_a)?;
                out.lora.push((name, LoraLayer { b, a }));
            }
            other => return Err(Error::Format(format!("unknown entry kind {other}"))),
        }
    }
    r.expect_end("delta checkpoint")?;
    Ok(out)
}

pub fn save_delta(d: &DeltaCheckpoint, path: &Path) -> Result<()> {
    std::fs::write(path, delta_to_bytes(d)?)?;
    Ok(())
}

pub fn load_delta(path: &Path) -> Result<DeltaCheckpoint> {
    from_bytes(&std::fs::read(path)?)?.into_delta_checkpoint()
}

pub fn save_lora(l: &LoraDelta, path: &Path) -> Result<()> {
    std::fs::write(path, lora_to_bytes(l)?)?;
    Ok(())
}

pub fn load_lora(path: &Path) -> Result<LoraDelta> {
    from_bytes(&std::fs::read(path)?)?.into_lora_delta()
}

/// CRC-32 (IEEE 802.3, reflected polynomial 0xEDB88320).
pub fn crc32(bytes: &[u8]) -> u32 {
    let mut crc = !0u32;
    for &b in bytes {
        crc ^= b as u32;
        for _ in 0..8 {
            let mask = (crc & 1).wrapping_neg();
            crc = (crc >> 1) ^ (0xEDB88320 & mask);
        }
    }
    !crc
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_delta() -> DeltaCheckpoint {
        // values chosen exactly representable in f32 so the on-disk
        // round trip is lossless
        let mut d = DeltaCheckpoint::new(0xDEADBEEF12345678);
        d.insert_shift(SpectralShift::new("conv.weight", vec![0.125, -0.375, 0.75]));
        d.insert_shift(
            SpectralShift::with_mask("attn.weight", vec![0.5, 0.0], Some(1)).unwrap(),
        );
        d.insert_dense("conv.bias", DenseTensor::new(vec![2], vec![0.25, -0.5]).unwrap())
            .unwrap();
        d
    }

    #[test]
    fn crc_reference_vector() {
        assert_eq!(crc32(b"123456789"), 0xCBF43926);
    }

    #[test]
    fn delta_round_trip_preserves_content_and_mask() {
        let d = sample_delta();
        let bytes = delta_to_bytes(&d).unwrap();
        let back = from_bytes(&bytes).unwrap().into_delta_checkpoint().unwrap();
        assert!(back.content_eq(&d));
        assert_eq!(back.shift("attn.weight").unwrap().rank_mask(), Some(1));
    }

    #[test]
    fn lora_round_trip() {
        let mut l = LoraDelta::new(7);
        l.insert_pair("w", LoraLayer { b: vec![1.0, 2.0], a: vec![0.5, 0.25, 0.125] });
        l.insert_dense("b", DenseTensor::new(vec![1], vec![0.75]).unwrap()).unwrap();
        let bytes = lora_to_bytes(&l).unwrap();
        let back = from_bytes(&bytes).unwrap().into_lora_delta().unwrap();
        assert_eq!(back, l);
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let bytes = delta_to_bytes(&sample_delta()).unwrap();
        let cut = &bytes[..bytes.len() - 5];
        assert!(matches!(from_bytes(cut), Err(Error::CorruptFile(_))));
    }

    #[test]
    fn flipped_payload_byte_fails_crc() {
        let mut bytes = delta_to_bytes(&sample_delta()).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        assert!(matches!(from_bytes(&bytes), Err(Error::CorruptFile(_))));
    }

    #[test]
    fn bad_magic_is_format_error() {
        let mut bytes = delta_to_bytes(&sample_delta()).unwrap();
        bytes[1] = b'!';
        assert!(matches!(from_bytes(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn size_matches_independent_calculator() {
        let d = sample_delta();
        let bytes = delta_to_bytes(&d).unwrap();
        // header: magic 4 + version 4 + fingerprint 8 + count 4
        let mut expect = 4 + 4 + 8 + 4;
        for (name, s) in d.shifts() {
            expect += 2 + name.len() + 1 + 4 + 4 + 4 * s.rank();
        }
        for (name, t) in d.dense_deltas() {
            expect += 2 + name.len() + 1 + 4 + 4 * t.numel();
        }
        expect += 4; // crc
        assert_eq!(bytes.len(), expect);
    }

    #[test]
    fn mixed_kind_loads_reject_wrong_view() {
        let d = sample_delta();
        let bytes = delta_to_bytes(&d).unwrap();
        assert!(from_bytes(&bytes).unwrap().into_lora_delta().is_err());
    }
}
