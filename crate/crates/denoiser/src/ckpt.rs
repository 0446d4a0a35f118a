//! Full model checkpoint file (`*.ckpt`).
//!
//! ```text
//! "SVCK" | u32 version=1 | u32 layer_count
//! per layer (sorted by name):
//!   u16 name_len | name UTF-8 | u8 kind | u8 ndims | ndims * u32 dims
//!   | prod(dims) * f32 payload
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use svdiff_linalg::byteio::{put_f32s, put_name, put_u32, Reader};
use svdiff_linalg::error::{Error, Result};
use svdiff_linalg::{DenseTensor, LayerKind, WeightStore};

use crate::model::{from_layers, Layer, ToyDenoiser};

const MAGIC: &[u8; 4] = b"SVCK";
const VERSION: u32 = 1;

pub fn model_to_bytes(model: &ToyDenoiser) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, VERSION);
    put_u32(&mut buf, model.layer_names().len() as u32);
    for name in model.layer_names() {
        let kind = model.layer_kind(&name).expect("name came from the model");
        let tensor = model.layer(&name).expect("name came from the model");
        put_name(&mut buf, &name)?;
        buf.push(kind.code());
        buf.push(tensor.dims().len() as u8);
        for &d in tensor.dims() {
            put_u32(&mut buf, d as u32);
        }
        put_f32s(&mut buf, tensor.data());
    }
    Ok(buf)
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<ToyDenoiser> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC, "model checkpoint")?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("model checkpoint version {version}, expected {VERSION}")));
    }
    let count = r.u32()? as usize;
    let mut layers = BTreeMap::new();
    for _ in 0..count {
        let name = r.name()?;
        let kind = LayerKind::from_code(r.u8()?)
            .ok_or_else(|| Error::Format(format!("layer {name}: unknown kind code")))?;
        let ndims = r.u8()? as usize;
        if !matches!(ndims, 1 | 2 | 4) {
            return Err(Error::Format(format!("layer {name}: rank {ndims} not supported")));
        }
        let mut dims = Vec::with_capacity(ndims);
        for _ in 0..ndims {
            dims.push(r.u32()? as usize);
        }
        let numel: usize = dims.iter().product();
        let data = r.f32s(numel)?;
        layers.insert(
            name,
            Layer {
                kind,
                tensor: DenseTensor::new(dims, data)?,
            },
        );
    }
    r.expect_end("model checkpoint")?;
    from_layers(layers)
}

pub fn save_model(model: &ToyDenoiser, path: &Path) -> Result<()> {
    std::fs::write(path, model_to_bytes(model)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ToyDenoiser> {
    model_from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use svdiff_spectral_shim::fingerprint_stub;

    // fingerprint lives in the spectral crate; a tiny local stand-in
    // keeps this test self-contained
    mod svdiff_spectral_shim {
        use svdiff_linalg::WeightStore;

        pub fn fingerprint_stub(store: &impl WeightStore) -> u64 {
            let mut h: u64 = 0xcbf29ce484222325;
            for name in store.layer_names() {
                for &x in store.layer(&name).unwrap().data() {
                    for b in (x as f32).to_le_bytes() {
                        h ^= b as u64;
                        h = h.wrapping_mul(0x100000001b3);
                    }
                }
            }
            h
        }
    }

    #[test]
    fn round_trip_preserves_f32_weights_and_fingerprint() {
        let model = ToyDenoiser::init(3);
        let bytes = model_to_bytes(&model).unwrap();
        let back = model_from_bytes(&bytes).unwrap();
        assert_eq!(fingerprint_stub(&model), fingerprint_stub(&back));
        for name in model.layer_names() {
            let a = model.layer(&name).unwrap();
            let b = back.layer(&name).unwrap();
            assert_eq!(a.dims(), b.dims());
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(*x as f32, *y as f32, "layer {name}");
            }
        }
    }

    #[test]
    fn bad_magic_and_truncation() {
        let model = ToyDenoiser::init(0);
        let mut bytes = model_to_bytes(&model).unwrap();
        let cut = bytes[..bytes.len() - 2].to_vec();
        assert!(matches!(model_from_bytes(&cut), Err(Error::CorruptFile(_))));
        bytes[2] = b'?';
        assert!(matches!(model_from_bytes(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn missing_layer_is_format_error() {
        let model = ToyDenoiser::init(0);
        let bytes = model_to_bytes(&model).unwrap();
        // drop the layer count by one and strip the last layer's bytes:
        // simplest is to corrupt the count field instead
        let mut bytes2 = bytes.clone();
        bytes2[8] = bytes2[8].wrapping_sub(1);
        assert!(model_from_bytes(&bytes2).is_err());
    }
}
