use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ModelConfig, ModelError, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams<P> {
    pub weight: P,
    pub bias: P,
}

/// `x + conv2(relu(conv1(x)))`.
#[derive(Clone, Debug, PartialEq)]
pub struct ResblockParams<P> {
    pub conv1: ConvParams<P>,
    pub conv2: ConvParams<P>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskTransformerParams<P> {
    pub conv_z: ConvParams<P>,
    pub conv_out: ConvParams<P>,
}

/// Every learnable array of the network. `P` is the leaf type: a tensor when
/// stored, a graph handle while a forward pass is being recorded.
#[derive(Clone, Debug, PartialEq)]
pub struct T2NetParams<P = Tensor<f32>> {
    pub sr_shallow: ConvParams<P>,
    pub rec_shallow: ConvParams<P>,
    pub sr_blocks: Vec<ResblockParams<P>>,
    pub rec_blocks: Vec<ResblockParams<P>>,
    pub tt: Vec<TaskTransformerParams<P>>,
    pub upsampler: ConvParams<P>,
    pub final_conv: ConvParams<P>,
    pub rec_out: ConvParams<P>,
}

/// Shape of one conv layer: `(cout, cin, k)`.
type ConvShape = (usize, usize, usize);

fn conv_with<P, Q, E>(
    name: &str,
    c: &ConvParams<P>,
    f: &mut impl FnMut(&str, &P) -> std::result::Result<Q, E>,
) -> std::result::Result<ConvParams<Q>, E> {
    Ok(ConvParams {
        weight: f(&format!("{name}.weight"), &c.weight)?,
        bias: f(&format!("{name}.bias"), &c.bias)?,
    })
}

fn block_with<P, Q, E>(
    name: &str,
    b: &ResblockParams<P>,
    f: &mut impl FnMut(&str, &P) -> std::result::Result<Q, E>,
) -> std::result::Result<ResblockParams<Q>, E> {
    Ok(ResblockParams {
        conv1: conv_with(&format!("{name}.conv1"), &b.conv1, f)?,
        conv2: conv_with(&format!("{name}.conv2"), &b.conv2, f)?,
    })
}

impl<P> T2NetParams<P> {
    /// Rebuilds the structure leaf by leaf, passing each leaf's dotted name
    /// (e.g. `sr_blocks.0.conv1.weight`). Leaves are visited in a fixed order.
    pub fn try_map<Q, E>(
        &self,
        mut f: impl FnMut(&str, &P) -> std::result::Result<Q, E>,
    ) -> std::result::Result<T2NetParams<Q>, E> {
        let f = &mut f;
        let blocks = |prefix: &str, bs: &[ResblockParams<P>], f: &mut _| {
            bs.iter()
                .enumerate()
                .map(|(i, b)| block_with(&format!("{prefix}.{i}"), b, f))
                .collect::<std::result::Result<Vec<_>, E>>()
        };
        Ok(T2NetParams {
            sr_shallow: conv_with("sr_shallow", &self.sr_shallow, f)?,
            rec_shallow: conv_with("rec_shallow", &self.rec_shallow, f)?,
            sr_blocks: blocks("sr_blocks", &self.sr_blocks, f)?,
            rec_blocks: blocks("rec_blocks", &self.rec_blocks, f)?,
            tt: self
                .tt
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    Ok(TaskTransformerParams {
                        conv_z: conv_with(&format!("tt.{i}.conv_z"), &t.conv_z, f)?,
                        conv_out: conv_with(&format!("tt.{i}.conv_out"), &t.conv_out, f)?,
                    })
                })
                .collect::<std::result::Result<Vec<_>, E>>()?,
            upsampler: conv_with("upsampler", &self.upsampler, f)?,
            final_conv: conv_with("final_conv", &self.final_conv, f)?,
            rec_out: conv_with("rec_out", &self.rec_out, f)?,
        })
    }

    pub fn map<Q>(&self, mut f: impl FnMut(&str, &P) -> Q) -> T2NetParams<Q> {
        self.try_map(|n, p| Ok::<_, std::convert::Infallible>(f(n, p)))
            .unwrap_or_else(|e| match e {})
    }

    pub fn visit(&self, mut f: impl FnMut(&str, &P)) {
        self.map(|n, p| f(n, p));
    }

    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.visit(|n, _| out.push(n.to_string()));
        out
    }
}

impl T2NetParams<ConvShape> {
    /// Layer shapes implied by a configuration.
    pub fn layout(cfg: &ModelConfig) -> Self {
        let (c, k, s) = (cfg.channels, 3, cfg.scale);
        let conv = |cout, cin| ConvParams {
            weight: (cout, cin, k),
            bias: (cout, cin, k),
        };
        let block = || ResblockParams {
            conv1: conv(c, c),
            conv2: conv(c, c),
        };
        T2NetParams {
            sr_shallow: conv(c, 1),
            rec_shallow: conv(c, 1),
            sr_blocks: (0..cfg.n_stages).map(|_| block()).collect(),
            rec_blocks: (0..cfg.n_stages).map(|_| block()).collect(),
            tt: (0..cfg.n_stages)
                .map(|_| TaskTransformerParams {
                    conv_z: conv(c, 2 * c),
                    conv_out: conv(c, c),
                })
                .collect(),
            upsampler: conv(c * s * s, c),
            final_conv: conv(1, c),
            rec_out: conv(1, c),
        }
    }
}

fn leaf_shape(name: &str, (cout, cin, k): ConvShape) -> Vec<usize> {
    if name.ends_with(".bias") {
        vec![cout]
    } else {
        vec![cout, cin, k, k]
    }
}

fn zero_initialized(name: &str) -> bool {
    name.starts_with("final_conv.") || name.starts_with("rec_out.") || name.contains(".conv_out.")
}

impl T2NetParams<Tensor<f32>> {
    /// Uniform `±1/sqrt(fan_in)` initialization for every weight and bias.
    /// With `zero_init_outputs`, the fusion output convs and both image
    /// output convs start at zero.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(T2NetParams::layout(cfg).map(|name, &(cout, cin, k)| {
            let shape = leaf_shape(name, (cout, cin, k));
            let bound = 1.0 / ((cin * k * k) as f64).sqrt();
            let t = Tensor::rand_uniform(&shape, -bound, bound, &mut rng);
            if cfg.zero_init_outputs && zero_initialized(name) {
                Tensor::zeros(&shape)
            } else {
                t
            }
        }))
    }

    pub fn count(&self) -> usize {
        let mut n = 0;
        self.visit(|_, t| n += t.numel());
        n
    }

    pub fn is_finite(&self) -> bool {
        let mut ok = true;
        self.visit(|_, t| ok &= t.is_finite());
        ok
    }

    pub fn to_arrays(&self) -> Vec<(String, Tensor<f32>)> {
        let mut out = Vec::new();
        self.visit(|n, t| out.push((n.to_string(), t.clone())));
        out
    }

    /// Inverse of [`T2NetParams::to_arrays`]; every expected name must be
    /// present with the shape `cfg` implies, and nothing else.
    pub fn from_arrays(cfg: &ModelConfig, arrays: &[(String, Tensor<f32>)]) -> Result<Self> {
        cfg.validate()?;
        let layout = T2NetParams::layout(cfg);
        let expected = layout.names();
        if let Some((extra, _)) = arrays.iter().find(|(n, _)| !expected.contains(n)) {
            return Err(ModelError::Params(format!("unexpected array {extra}")));
        }
        layout.try_map(|name, &shape| {
            let (_, t) = arrays
                .iter()
                .find(|(n, _)| n == name)
                .ok_or_else(|| ModelError::Params(format!("missing array {name}")))?;
            let want = leaf_shape(name, shape);
            if t.shape() != want {
                return Err(ModelError::Params(format!(
                    "{name} has shape {:?}, expected {want:?}",
                    t.shape()
                )));
            }
            Ok(t.clone())
        })
    }
}

/// Parameter count implied by a configuration.
pub fn param_count(cfg: &ModelConfig) -> usize {
    let mut n = 0;
    T2NetParams::layout(cfg).visit(|name, &s| n += leaf_shape(name, s).iter().product::<usize>());
    n
}
