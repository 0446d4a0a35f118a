//! Rank-1 low-rank-adaptation baseline.
//!
//! Per 2-D/4-D layer the update is the outer product `b a^T` (M + N
//! floats against the spectral shift's min(M, N)); 1-D layers carry
//! dense deltas.

use svdiff_linalg::error::{Error, Result};
use svdiff_linalg::{reshape_kernel, unreshape_kernel, DenseTensor, Matrix, WeightStore};

use crate::fingerprint::fingerprint;
use crate::types::{LoraDelta, LoraLayer};

/// `W' = W + b a^T` for every adapted layer; dense 1-D deltas added.
pub fn lora_apply(store: &mut impl WeightStore, l: &LoraDelta) -> Result<()> {
    let base_fp = fingerprint(store);
    if base_fp != l.fingerprint {
        return Err(Error::BaseModelMismatch {
            base: base_fp,
            artifact: l.fingerprint,
        });
    }
    for (name, pair) in l.pairs() {
        let tensor = store
            .layer(name)
            .ok_or_else(|| Error::Shape(format!("layer {name} absent from base model")))?;
        let dims = tensor.dims().to_vec();
        let w = reshape_kernel(tensor)?;
        if pair.b.len() != w.rows() || pair.a.len() != w.cols() {
            return Err(Error::Shape(format!(
                "layer {name}: factors {}x{} vs weight {}x{}",
                pair.b.len(),
                pair.a.len(),
                w.rows(),
                w.cols()
            )));
        }
        if pair.b.iter().all(|&x| x == 0.0) || pair.a.iter().all(|&x| x == 0.0) {
            continue;
        }
        let mut updated = w.clone();
        for (r, &bv) in pair.b.iter().enumerate() {
            if bv == 0.0 {
                continue;
            }
            let row = &mut updated.data_mut()[r * pair.a.len()..(r + 1) * pair.a.len()];
            for (dst, &av) in row.iter_mut().zip(&pair.a) {
                *dst += bv * av;
            }
        }
        let new_tensor = match dims.len() {
            2 => DenseTensor::new(dims, updated.data().to_vec())?,
            4 => unreshape_kernel(&updated, [dims[0], dims[1], dims[2], dims[3]])?,
            _ => unreachable!("decomposed layers are 2-D or 4-D"),
        };
        store.set_layer(name, new_tensor)?;
    }
    for (name, delta) in l.dense_deltas() {
        let tensor = store
            .layer(name)
            .ok_or_else(|| Error::Shape(format!("layer {name} absent from base model")))?;
        if tensor.dims() != delta.dims() {
            return Err(Error::Shape(format!("layer {name}: dense delta dims mismatch")));
        }
        let summed: Vec<f64> = tensor.data().iter().zip(delta.data()).map(|(w, d)| w + d).collect();
        let dims = tensor.dims().to_vec();
        store.set_layer(name, DenseTensor::new(dims, summed)?)?;
    }
    Ok(())
}

/// Gradients of a loss with weight gradient `G` through `W + b a^T`:
/// `grad_b = G a`, `grad_a = G^T b`.
pub fn lora_gradient(g: &Matrix, l: &LoraLayer) -> Result<(Vec<f64>, Vec<f64>)> {
    if l.b.len() != g.rows() || l.a.len() != g.cols() {
        return Err(Error::Shape(format!(
            "lora factors {}x{} vs gradient {}x{}",
            l.b.len(),
            l.a.len(),
            g.rows(),
            g.cols()
        )));
    }
    let mut grad_b = vec![0.0; g.rows()];
    let mut grad_a = vec![0.0; g.cols()];
    for r in 0..g.rows() {
        let row = g.row(r);
        let mut dot = 0.0;
        for (c, &gv) in row.iter().enumerate() {
            dot += gv * l.a[c];
            grad_a[c] += gv * l.b[r];
        }
        grad_b[r] = dot;
    }
    Ok((grad_b, grad_a))
}
