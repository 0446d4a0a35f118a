//! Base-model fingerprint.
//!
//! 64-bit FNV-1a over the f32 little-endian bytes of every weight layer,
//! taken in sorted name order. Delta arithmetic implicitly assumes the
//! checkpoints share the base model's singular vectors, so every apply
//! and combine operation validates this hash first.

use svdiff_linalg::WeightStore;

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

pub fn fnv1a(bytes: &[u8], state: u64) -> u64 {
    let mut h = state;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Fingerprint of all base weights.
pub fn fingerprint(store: &impl WeightStore) -> u64 {
    let mut h = FNV_OFFSET;
    for name in store.layer_names() {
        let tensor = store.layer(&name).expect("name came from the store");
        for &x in tensor.data() {
            h = fnv1a(&(x as f32).to_le_bytes(), h);
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;
    use svdiff_linalg::{DenseTensor, LayerKind, Result};

    struct Toy(BTreeMap<String, DenseTensor>);

    impl WeightStore for Toy {
        fn layer_names(&self) -> Vec<String> {
            self.0.keys().cloned().collect()
        }
        fn layer_kind(&self, _name: &str) -> Option<LayerKind> {
            Some(LayerKind::Bias1d)
        }
        fn layer(&self, name: &str) -> Option<&DenseTensor> {
            self.0.get(name)
        }
        fn set_layer(&mut self, name: &str, tensor: DenseTensor) -> Result<()> {
            self.0.insert(name.to_string(), tensor);
            Ok(())
        }
    }

    #[test]
    fn sensitive_to_any_weight_change() {
        let mut m = BTreeMap::new();
        m.insert("a".to_string(), DenseTensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        let mut toy = Toy(m);
        let f0 = fingerprint(&toy);
        assert_eq!(f0, fingerprint(&toy), "deterministic");
        toy.set_layer("a", DenseTensor::new(vec![2], vec![1.0, 2.00000001]).unwrap())
            .unwrap();
        // below f32 resolution -> same fingerprint
        assert_eq!(f0, fingerprint(&toy));
        toy.set_layer("a", DenseTensor::new(vec![2], vec![1.0, 2.5]).unwrap()).unwrap();
        assert_ne!(f0, fingerprint(&toy));
    }

    #[test]
    fn fnv_reference_vector() {
        // FNV-1a 64 of empty input is the offset basis.
        assert_eq!(fnv1a(b"", FNV_OFFSET), FNV_OFFSET);
        // Known vector: fnv1a64("a") = 0xaf63dc4c8601ec8c
        assert_eq!(fnv1a(b"a", FNV_OFFSET), 0xaf63dc4c8601ec8c);
    }
}
