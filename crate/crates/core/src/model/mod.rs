//! The two-branch network: a reconstruction branch and a super-resolution
//! branch joined after every stage by a task transformer.

mod attention;
mod params;

pub use attention::{relevance_embedding, task_transformer, transfer_features, AttentionOutputs};
pub use params::{param_count, ConvParams, ResblockParams, T2NetParams, TaskTransformerParams};

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::sidecar::{KvDoc, SidecarError};
use crate::tensor::{Graph, Real, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("parameter set: {0}")]
    Params(String),
    #[error(transparent)]
    Sidecar(#[from] SidecarError),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

/// Network variants compared in the ablation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Both branches joined by task transformers.
    Full,
    /// Super-resolution branch alone.
    NoRec,
    /// Both branches, fused by plain addition.
    NoTt,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::NoRec, Variant::NoTt, Variant::Full];
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Full => "full",
            Variant::NoRec => "no_rec",
            Variant::NoTt => "no_tt",
        })
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "full" => Ok(Variant::Full),
            "no_rec" => Ok(Variant::NoRec),
            "no_tt" => Ok(Variant::NoTt),
            other => Err(format!("unknown variant {other:?} (expected full, no_rec or no_tt)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub n_stages: usize,
    pub channels: usize,
    pub scale: usize,
    pub patch_k: usize,
    pub resblock_convs: usize,
    pub zero_init_outputs: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_stages: 4,
            channels: 32,
            scale: 2,
            patch_k: 3,
            resblock_convs: 2,
            zero_init_outputs: true,
        }
    }
}

impl ModelConfig {
    pub const KEYS: [&'static str; 6] = [
        "n_stages",
        "channels",
        "scale",
        "patch_k",
        "resblock_convs",
        "zero_init_outputs",
    ];

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(ModelError::Config(m));
        if self.n_stages == 0 {
            return fail("n_stages must be at least 1".into());
        }
        if self.channels == 0 {
            return fail("channels must be at least 1".into());
        }
        if ![1, 2, 4].contains(&self.scale) {
            return fail(format!("scale must be 1, 2 or 4, got {}", self.scale));
        }
        if self.patch_k.is_multiple_of(2) {
            return fail(format!("patch_k must be odd, got {}", self.patch_k));
        }
        if self.resblock_convs != 2 {
            return fail(format!("resblocks have exactly 2 convs, got {}", self.resblock_convs));
        }
        Ok(())
    }

    pub fn write_to(&self, doc: &mut KvDoc) {
        doc.set("n_stages", self.n_stages)
            .set("channels", self.channels)
            .set("scale", self.scale)
            .set("patch_k", self.patch_k)
            .set("resblock_convs", self.resblock_convs)
            .set("zero_init_outputs", self.zero_init_outputs);
    }

    /// Reads the model keys of `doc`, falling back to the defaults.
    pub fn from_doc(doc: &KvDoc) -> Result<Self> {
        let d = ModelConfig::default();
        let cfg = ModelConfig {
            n_stages: doc.get_or("n_stages", d.n_stages)?,
            channels: doc.get_or("channels", d.channels)?,
            scale: doc.get_or("scale", d.scale)?,
            patch_k: doc.get_or("patch_k", d.patch_k)?,
            resblock_convs: doc.get_or("resblock_convs", d.resblock_convs)?,
            zero_init_outputs: doc.get_or("zero_init_outputs", d.zero_init_outputs)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

pub(crate) fn conv<T: Real>(g: &mut Graph<T>, x: Var, p: &ConvParams<Var>) -> Result<Var> {
    let k = g.shape(p.weight)[2];
    Ok(g.conv2d(x, p.weight, p.bias, 1, k / 2)?)
}

pub fn resblock<T: Real>(g: &mut Graph<T>, x: Var, p: &ResblockParams<Var>) -> Result<Var> {
    let h = conv(g, x, &p.conv1)?;
    let h = g.relu(h);
    let h = conv(g, h, &p.conv2)?;
    Ok(g.add(x, h)?)
}

/// Handles produced by one recorded forward pass.
#[derive(Debug)]
pub struct ForwardOutputs<T> {
    /// `[B, 1, s*h, s*w]`.
    pub sr: Var,
    /// `[B, 1, h, w]`; absent without the reconstruction branch.
    pub rec: Option<Var>,
    /// One entry per task transformer that ran.
    pub attention: Vec<AttentionOutputs<T>>,
}

/// Puts every parameter on the graph as a trainable leaf.
pub fn register<T: Real>(g: &mut Graph<T>, params: &T2NetParams<Tensor<T>>) -> T2NetParams<Var> {
    params.map(|_, t| g.param(t.clone()))
}

/// Records the network on `g` for an `[B, 1, h, w]` input.
///
/// `frozen` replays previously computed attention (one entry per stage), so
/// the output becomes a smooth function of the parameters.
pub fn forward<T: Real>(
    g: &mut Graph<T>,
    p: &T2NetParams<Var>,
    input: Var,
    cfg: &ModelConfig,
    variant: Variant,
    frozen: Option<&[AttentionOutputs<T>]>,
) -> Result<ForwardOutputs<T>> {
    cfg.validate()?;
    let [_, c, _, _] = g.value(input).dims4("t2net_forward")?;
    if c != 1 {
        return Err(ModelError::Shape(format!("input must have 1 channel, got {c}")));
    }
    if let Some(f) = frozen {
        if f.len() != cfg.n_stages {
            return Err(ModelError::Shape(format!(
                "{} frozen attention maps for {} stages",
                f.len(),
                cfg.n_stages
            )));
        }
    }
    let f0_sr = conv(g, input, &p.sr_shallow)?;
    let mut rec = match variant {
        Variant::NoRec => None,
        _ => Some(conv(g, input, &p.rec_shallow)?),
    };
    let mut sr = f0_sr;
    let mut attention = Vec::new();
    for i in 0..cfg.n_stages {
        if let Some(r) = rec {
            rec = Some(resblock(g, r, &p.rec_blocks[i])?);
        }
        sr = resblock(g, sr, &p.sr_blocks[i])?;
        sr = match (variant, rec) {
            (Variant::Full, Some(r)) => {
                let (out, att) = task_transformer(g, sr, r, &p.tt[i], cfg, frozen.map(|f| &f[i]))?;
                attention.push(att);
                out
            }
            (Variant::NoTt, Some(r)) => g.add(sr, r)?,
            _ => sr,
        };
    }
    let skip = g.add(sr, f0_sr)?;
    let up = conv(g, skip, &p.upsampler)?;
    let up = g.pixel_shuffle(up, cfg.scale)?;
    let out_sr = conv(g, up, &p.final_conv)?;
    let out_rec = rec.map(|r| conv(g, r, &p.rec_out)).transpose()?;
    Ok(ForwardOutputs {
        sr: out_sr,
        rec: out_rec,
        attention,
    })
}

/// Forward pass without gradient bookkeeping: `(x_sr, x_rec)`.
pub fn infer(
    params: &T2NetParams,
    cfg: &ModelConfig,
    variant: Variant,
    input: &Tensor<f32>,
) -> Result<(Tensor<f32>, Option<Tensor<f32>>)> {
    let mut g = Graph::new();
    let p = params.map(|_, t| g.constant(t.clone()));
    let x = g.constant(input.clone());
    let out = forward(&mut g, &p, x, cfg, variant, None)?;
    Ok((g.value(out.sr).clone(), out.rec.map(|r| g.value(r).clone())))
}
