//! Spectral-shift reassembly, gradient projection and checkpoint
//! arithmetic.

use svdiff_linalg::error::{Error, Result};
use svdiff_linalg::{
    reshape_kernel, unreshape_kernel, DenseTensor, Matrix, SvdCache, SvdFactors, WeightStore,
};

use crate::fingerprint::fingerprint;
use crate::types::{DeltaCheckpoint, SpectralShift};

/// `U diag(ReLU(sigma + delta)) V^T`.
pub fn reassemble_weight(f: &SvdFactors, s: &SpectralShift) -> Result<Matrix> {
    if s.rank() != f.rank_capacity() {
        return Err(Error::Shape(format!(
            "layer {}: shift rank {} vs factor rank {}",
            s.layer_name(),
            s.rank(),
            f.rank_capacity()
        )));
    }
    let values: Vec<f64> = f
        .sigma()
        .iter()
        .zip(s.delta())
        .map(|(&sig, &d)| (sig + d).max(0.0))
        .collect();
    f.compose(&values)
}

/// Projects a dense weight gradient `G = dL/dW` onto the shift space:
/// `g_i = (U^T G V)_ii * 1[sigma_i + delta_i > 0]`, with masked
/// directions returning 0. The indicator at exactly zero is 0, so clamped
/// directions stay frozen.
pub fn gradient_wrt_shift(g: &Matrix, f: &SvdFactors, s: &SpectralShift) -> Result<Vec<f64>> {
    if g.rows() != f.rows() || g.cols() != f.cols() {
        return Err(Error::Shape(format!(
            "layer {}: gradient {}x{} vs weight {}x{}",
            s.layer_name(),
            g.rows(),
            g.cols(),
            f.rows(),
            f.cols()
        )));
    }
    if s.rank() != f.rank_capacity() {
        return Err(Error::Shape(format!(
            "layer {}: shift rank {} vs factor rank {}",
            s.layer_name(),
            s.rank(),
            f.rank_capacity()
        )));
    }
    let r = f.rank_capacity();
    let mut out = vec![0.0; r];
    for i in 0..r {
        if !s.is_active(i) {
            continue;
        }
        if f.sigma()[i] + s.delta()[i] <= 0.0 {
            continue;
        }
        // u_i^T G v_i without materializing U^T G V
        let mut acc = 0.0;
        for row in 0..g.rows() {
            let u = f.u().get(row, i);
            if u == 0.0 {
                continue;
            }
            let grow = g.row(row);
            let mut dot = 0.0;
            for (col, &gv) in grow.iter().enumerate() {
                dot += gv * f.v().get(col, i);
            }
            acc += u * dot;
        }
        out[i] = acc;
    }
    Ok(out)
}

/// Per-layer `delta' = delta_1 + delta_2`; dense deltas sum elementwise.
pub fn add_shifts(a: &DeltaCheckpoint, b: &DeltaCheckpoint) -> Result<DeltaCheckpoint> {
    a.check_compatible(b)?;
    let mut out = DeltaCheckpoint::new(a.fingerprint);
    for (name, sa) in a.shifts() {
        let sb = b.shift(name).expect("layer sets verified equal");
        let delta: Vec<f64> = sa.delta().iter().zip(sb.delta()).map(|(x, y)| x + y).collect();
        out.insert_shift(SpectralShift::new(name, delta));
    }
    for (name, ta) in a.dense_deltas() {
        let tb = b.dense_delta(name).expect("layer sets verified equal");
        let sum: Vec<f64> = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        out.insert_dense(name, DenseTensor::new(ta.dims().to_vec(), sum)?)?;
    }
    Ok(out)
}

/// `delta' = alpha*delta_1 + (1-alpha)*delta_2` with `alpha` in [0, 1].
/// Endpoints return the corresponding checkpoint's vectors exactly.
pub fn interp_shifts(a: &DeltaCheckpoint, b: &DeltaCheckpoint, alpha: f64) -> Result<DeltaCheckpoint> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Domain(format!("interpolation alpha {alpha} outside [0, 1]")));
    }
    a.check_compatible(b)?;
    let mut out = DeltaCheckpoint::new(a.fingerprint);
    for (name, sa) in a.shifts() {
        let sb = b.shift(name).expect("layer sets verified equal");
        let delta: Vec<f64> = if alpha == 1.0 {
            sa.delta().to_vec()
        } else if alpha == 0.0 {
            sb.delta().to_vec()
        } else {
            sa.delta()
                .iter()
                .zip(sb.delta())
                .map(|(x, y)| alpha * x + (1.0 - alpha) * y)
                .collect()
        };
        out.insert_shift(SpectralShift::new(name, delta));
    }
    for (name, ta) in a.dense_deltas() {
        let tb = b.dense_delta(name).expect("layer sets verified equal");
        let mixed: Vec<f64> = if alpha == 1.0 {
            ta.data().to_vec()
        } else if alpha == 0.0 {
            tb.data().to_vec()
        } else {
            ta.data()
                .iter()
                .zip(tb.data())
                .map(|(x, y)| alpha * x + (1.0 - alpha) * y)
                .collect()
        };
        out.insert_dense(name, DenseTensor::new(ta.dims().to_vec(), mixed)?)?;
    }
    Ok(out)
}

/// `delta' = s*delta`; dense deltas scaled alike. `s` may leave [0, 1]
/// (extrapolation sweeps), it only has to be finite.
pub fn scale_shifts(a: &DeltaCheckpoint, s: f64) -> Result<DeltaCheckpoint> {
    if !s.is_finite() {
        return Err(Error::Domain(format!("scale factor {s} is not finite")));
    }
    let mut out = DeltaCheckpoint::new(a.fingerprint);
    for (name, sa) in a.shifts() {
        let delta: Vec<f64> = if s == 1.0 {
            sa.delta().to_vec()
        } else {
            sa.delta().iter().map(|x| s * x).collect()
        };
        out.insert_shift(SpectralShift::new(name, delta));
    }
    for (name, ta) in a.dense_deltas() {
        let scaled: Vec<f64> = if s == 1.0 {
            ta.data().to_vec()
        } else {
            ta.data().iter().map(|x| s * x).collect()
        };
        out.insert_dense(name, DenseTensor::new(ta.dims().to_vec(), scaled)?)?;
    }
    Ok(out)
}

/// Keeps the top-k singular directions of every spectral shift (singular
/// values are stored descending); 1-D dense deltas are untouched.
pub fn limit_rank(a: &DeltaCheckpoint, k: usize) -> DeltaCheckpoint {
    let mut out = DeltaCheckpoint::new(a.fingerprint);
    for (_, shift) in a.shifts() {
        out.insert_shift(shift.limit_rank(k));
    }
    for (name, t) in a.dense_deltas() {
        out.insert_dense(name, t.clone()).expect("dense deltas are 1-D by invariant");
    }
    out
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// Pairwise mean-over-layers cosine similarity between checkpoints.
/// Layers where either shift is all-zero are skipped; a pair with no
/// usable layer at all is degenerate. Self-comparisons are exactly 1.
pub fn shift_correlation(set: &[DeltaCheckpoint]) -> Result<Matrix> {
    if set.len() < 2 {
        return Err(Error::Domain(format!(
            "correlation needs at least 2 checkpoints, got {}",
            set.len()
        )));
    }
    for other in &set[1..] {
        set[0].check_compatible(other)?;
    }
    let n = set.len();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let value = if i == j {
                if set[i].shifts().all(|(_, s)| s.is_zero()) {
                    return Err(Error::DegenerateInput(format!(
                        "checkpoint {i} has all-zero spectral shifts"
                    )));
                }
                1.0
            } else {
                let mut sum = 0.0;
                let mut used = 0usize;
                for (name, si) in set[i].shifts() {
                    let sj = set[j].shift(name).expect("layer sets verified equal");
                    if si.is_zero() || sj.is_zero() {
                        continue;
                    }
                    sum += cosine(si.delta(), sj.delta());
                    used += 1;
                }
                if used == 0 {
                    return Err(Error::DegenerateInput(format!(
                        "checkpoints {i} and {j} share no non-zero layer shift"
                    )));
                }
                sum / used as f64
            };
            out.set(i, j, value);
            out.set(j, i, value);
        }
    }
    Ok(out)
}

/// Applies a delta checkpoint on top of base weights: decomposed layers
/// are rebuilt as `U diag(ReLU(sigma+delta)) V^T` (back in their original
/// dims), 1-D layers get `w + dw`, untouched layers stay bitwise equal.
/// An all-zero shift leaves its layer bitwise untouched as well, so a
/// zero checkpoint is an exact identity.
pub fn apply_checkpoint(
    store: &mut impl WeightStore,
    d: &DeltaCheckpoint,
    cache: &SvdCache,
) -> Result<()> {
    let base_fp = fingerprint(store);
    if base_fp != d.fingerprint {
        return Err(Error::BaseModelMismatch {
            base: base_fp,
            artifact: d.fingerprint,
        });
    }
    for (name, shift) in d.shifts() {
        let tensor = store
            .layer(name)
            .ok_or_else(|| Error::Shape(format!("layer {name} absent from base model")))?;
        let kind = store.layer_kind(name).expect("layer exists");
        if !kind.is_decomposed() {
            return Err(Error::Shape(format!("layer {name} is 1-D, cannot take a spectral shift")));
        }
        if shift.is_zero() {
            continue;
        }
        let factors = cache
            .get(name)
            .ok_or_else(|| Error::Config(format!("svd cache has no entry for layer {name}")))?;
        let dims = tensor.dims().to_vec();
        let rebuilt = reassemble_weight(factors, shift)?;
        let new_tensor = match dims.len() {
            2 => DenseTensor::new(dims, rebuilt.data().to_vec())?,
            4 => unreshape_kernel(&rebuilt, [dims[0], dims[1], dims[2], dims[3]])?,
            _ => unreachable!("decomposed layers are 2-D or 4-D"),
        };
        store.set_layer(name, new_tensor)?;
    }
    for (name, delta) in d.dense_deltas() {
        let tensor = store
            .layer(name)
            .ok_or_else(|| Error::Shape(format!("layer {name} absent from base model")))?;
        if tensor.dims() != delta.dims() {
            return Err(Error::Shape(format!(
                "layer {name}: delta dims {:?} vs weight dims {:?}",
                delta.dims(),
                tensor.dims()
            )));
        }
        if delta.data().iter().all(|&x| x == 0.0) {
            continue;
        }
        let summed: Vec<f64> = tensor.data().iter().zip(delta.data()).map(|(w, d)| w + d).collect();
        let dims = tensor.dims().to_vec();
        store.set_layer(name, DenseTensor::new(dims, summed)?)?;
    }
    Ok(())
}

/// Decomposes every 2-D/4-D layer of a model into an [`SvdCache`].
pub fn build_cache(store: &impl WeightStore) -> Result<SvdCache> {
    let mut cache = SvdCache::new();
    for name in store.layer_names() {
        let kind = store.layer_kind(&name).expect("name came from the store");
        if !kind.is_decomposed() {
            continue;
        }
        let m = reshape_kernel(store.layer(&name).expect("name came from the store"))?;
        cache.insert(&name, svdiff_linalg::svd_decompose(&m)?);
    }
    Ok(cache)
}

/// A checkpoint with zero shifts for every decomposed layer and zero
/// dense deltas for every 1-D layer of `store`.
pub fn zero_checkpoint(store: &impl WeightStore) -> DeltaCheckpoint {
    let mut out = DeltaCheckpoint::new(fingerprint(store));
    for name in store.layer_names() {
        let kind = store.layer_kind(&name).expect("name came from the store");
        let tensor = store.layer(&name).expect("name came from the store");
        if kind.is_decomposed() {
            let dims = tensor.dims();
            let (m, n) = if dims.len() == 2 {
                (dims[0], dims[1])
            } else {
                (dims[0], dims[1] * dims[2] * dims[3])
            };
            out.insert_shift(SpectralShift::zeros(&name, m.min(n)));
        } else {
            out.insert_dense(&name, DenseTensor::zeros(vec![tensor.numel()]))
                .expect("1-D by construction");
        }
    }
    out
}
