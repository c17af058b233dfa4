use super::params::TaskTransformerParams;
use super::{conv, ModelConfig, ModelError, Result};
use crate::tensor::{im2col, overlap_counts, Graph, IndexTensor, Real, ResampleMode, Scale, Tensor, Var};

/// Query rows scored per GEMM call; bounds the relevance buffer at
/// `RELEVANCE_ROWS x L` instead of `L x L`.
const RELEVANCE_ROWS: usize = 64;

/// Hard and soft attention of one task transformer.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionOutputs<T> {
    /// `[B, L]` index of the best-matching key patch for every query patch.
    pub transfer_index: IndexTensor,
    /// `[B, 1, h, w]` relevance of that match, in `[-1, 1]`.
    pub soft_map: Tensor<T>,
    /// `[B, C, h, w]` features gathered from V.
    pub transferred: Tensor<T>,
}

/// Unfolds one `[C, h, w]` plane into `[C*k*k, L]` and scales every column to
/// unit length. All-zero columns stay zero.
fn unit_patches<T: Real>(x: &[T], c: usize, h: usize, w: usize, k: usize) -> Vec<T> {
    let l = h * w;
    let mut cols = im2col(x, c, h, w, k, 1, k / 2, h, w);
    let d = cols.len() / l;
    let mut norms = vec![T::zero(); l];
    for row in cols.chunks(l) {
        for (n, &v) in norms.iter_mut().zip(row) {
            *n = *n + v * v;
        }
    }
    let inv: Vec<T> = norms
        .into_iter()
        .map(|n| if n > T::zero() { T::one() / n.sqrt() } else { T::zero() })
        .collect();
    for row in cols.chunks_mut(l) {
        for (v, &s) in row.iter_mut().zip(&inv) {
            *v = *v * s;
        }
    }
    debug_assert_eq!(cols.len(), d * l);
    cols
}

/// Cosine similarity between every query patch and every key patch; returns
/// the argmax index (lowest index on ties) and the max value per query.
pub fn relevance_embedding<T: Real>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    patch_k: usize,
) -> Result<(IndexTensor, Tensor<T>)> {
    if q.shape() != k.shape() {
        return Err(ModelError::Shape(format!(
            "relevance: query {:?} vs key {:?}",
            q.shape(),
            k.shape()
        )));
    }
    if patch_k.is_multiple_of(2) {
        return Err(ModelError::Config(format!("patch size {patch_k} must be odd")));
    }
    let [b, c, h, w] = q.dims4("relevance_embedding")?;
    let (l, plane) = (h * w, c * h * w);
    let d = c * patch_k * patch_k;
    let mut index = Vec::with_capacity(b * l);
    let mut soft = Vec::with_capacity(b * l);
    let mut buf = vec![T::zero(); RELEVANCE_ROWS.min(l) * l];
    for bi in 0..b {
        let qn = unit_patches(&q.data()[bi * plane..(bi + 1) * plane], c, h, w, patch_k);
        let kn = unit_patches(&k.data()[bi * plane..(bi + 1) * plane], c, h, w, patch_k);
        for i0 in (0..l).step_by(RELEVANCE_ROWS) {
            let rows = RELEVANCE_ROWS.min(l - i0);
            // rows x L block of Qn^T Kn
            T::gemm(
                rows,
                d,
                l,
                T::one(),
                &qn[i0..],
                1,
                l as isize,
                &kn,
                l as isize,
                1,
                T::zero(),
                &mut buf,
                l as isize,
                1,
            );
            for r in buf[..rows * l].chunks(l) {
                let (mut best, mut arg) = (r[0], 0);
                for (j, &v) in r.iter().enumerate().skip(1) {
                    if v > best {
                        best = v;
                        arg = j;
                    }
                }
                index.push(arg);
                soft.push(best.max(-T::one()).min(T::one()));
            }
        }
    }
    Ok((IndexTensor::new(b, l, index)?, Tensor::new(vec![b, 1, h, w], soft)?))
}

/// Gathers patch `T[i]` of V into position `i`, then folds the patches back
/// and divides by the overlap count, so the identity index reproduces V.
pub fn transfer_features<T: Real>(g: &mut Graph<T>, v: Var, index: &IndexTensor, patch_k: usize) -> Result<Var> {
    let [b, _, h, w] = g.value(v).dims4("transfer_features")?;
    let pad = patch_k / 2;
    let cols = g.unfold(v, patch_k, 1, pad)?;
    let picked = g.index_select_columns(cols, index)?;
    let folded = g.fold(picked, h, w, patch_k, 1, pad)?;
    let counts = overlap_counts(h, w, patch_k, 1, pad)?;
    let inv = g.constant(Tensor::from_fn(&[b, 1, h, w], |i| T::one() / T::of(counts[i % (h * w)] as f64)));
    Ok(g.mul(folded, inv)?)
}

/// One task transformer: `Q + conv_out(conv_z([C, Q])) * S` with
/// `Q = F_sr + F_rec`, `K = F_rec` and V the up-then-down resampled `F_rec`.
///
/// With `frozen`, the given transfer index and soft map are reused instead of
/// being recomputed from Q and K.
pub fn task_transformer<T: Real>(
    g: &mut Graph<T>,
    f_sr: Var,
    f_rec: Var,
    p: &TaskTransformerParams<Var>,
    cfg: &ModelConfig,
    frozen: Option<&AttentionOutputs<T>>,
) -> Result<(Var, AttentionOutputs<T>)> {
    let q = g.add(f_sr, f_rec)?;
    let up = g.resample(f_rec, Scale::integer(cfg.scale), ResampleMode::Bilinear)?;
    let v = g.resample(up, Scale::integer(cfg.scale).inverse(), ResampleMode::Bilinear)?;
    let (index, soft) = match frozen {
        Some(a) => (a.transfer_index.clone(), a.soft_map.clone()),
        None => relevance_embedding(g.value(q), g.value(f_rec), cfg.patch_k)?,
    };
    let c = transfer_features(g, v, &index, cfg.patch_k)?;
    let transferred = g.value(c).clone();
    let cq = g.concat_channels(c, q)?;
    let z = conv(g, cq, &p.conv_z)?;
    let o = conv(g, z, &p.conv_out)?;
    let s = g.constant(soft.clone());
    let gated = g.mul(o, s)?;
    let out = g.add(q, gated)?;
    Ok((
        out,
        AttentionOutputs {
            transfer_index: index,
            soft_map: soft,
            transferred,
        },
    ))
}
