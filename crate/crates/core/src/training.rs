//! The joint objective `alpha * |x_sr - x| + beta * |x_rec - x_lr|`, the Adam
//! training loop and dataset evaluation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::metrics::{bicubic_upsample, MetricError, MetricReport};
use crate::model::{forward, infer, register, ModelConfig, ModelError, T2NetParams, Variant};
use crate::mri::SampleTriple;
use crate::sidecar::{KvDoc, SidecarError};
use crate::tensor::{adam_step, AdamConfig, AdamState, Graph, Real, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Sidecar(#[from] SidecarError),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("dataset is inconsistent: {0}")]
    Dataset(String),
    #[error("non-finite loss {value} at step {step}")]
    NonFinite { step: usize, value: f64 },
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    /// Weight of the super-resolution term.
    pub alpha: f64,
    /// Weight of the reconstruction term.
    pub beta: f64,
    pub lr: f64,
    pub steps: usize,
    pub batch: usize,
    pub seed: u64,
    pub model: ModelConfig,
    pub variant: Variant,
    /// Evaluate on the training set every this many steps; 0 disables.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    pub const KEYS: [&'static str; 8] = ["alpha", "beta", "lr", "steps", "batch", "seed", "variant", "eval_every"];

    /// Small model and raised learning rate for CPU-scale runs.
    pub fn desk() -> Self {
        TrainConfig {
            alpha: 0.2,
            beta: 0.8,
            lr: 5e-4,
            steps: 500,
            batch: 2,
            seed: 0,
            model: ModelConfig::default(),
            variant: Variant::Full,
            eval_every: 0,
        }
    }

    /// Eight stages and a smaller learning rate for long runs.
    pub fn full_scale() -> Self {
        TrainConfig {
            lr: 5e-5,
            model: ModelConfig {
                n_stages: 8,
                ..ModelConfig::default()
            },
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0 && self.alpha + self.beta > 0.0) {
            return Err(TrainError::Config(format!(
                "alpha and beta must be non-negative with a positive sum, got {} and {}",
                self.alpha, self.beta
            )));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(TrainError::Config(format!("learning rate must be finite and >= 0, got {}", self.lr)));
        }
        if self.batch == 0 {
            return Err(TrainError::Config("batch must be at least 1".into()));
        }
        self.model.validate()?;
        Ok(())
    }

    pub fn to_doc(&self) -> KvDoc {
        let mut doc = KvDoc::new();
        doc.set("alpha", self.alpha)
            .set("beta", self.beta)
            .set("lr", self.lr)
            .set("steps", self.steps)
            .set("batch", self.batch)
            .set("seed", self.seed)
            .set("variant", self.variant)
            .set("eval_every", self.eval_every);
        self.model.write_to(&mut doc);
        doc
    }

    /// Reads a config document; absent keys take the desk defaults and
    /// unknown keys are rejected.
    pub fn from_doc(doc: &KvDoc) -> Result<Self> {
        let allowed: Vec<&str> = Self::KEYS.iter().chain(ModelConfig::KEYS.iter()).copied().collect();
        doc.reject_unknown(&allowed)?;
        let d = Self::desk();
        let cfg = TrainConfig {
            alpha: doc.get_or("alpha", d.alpha)?,
            beta: doc.get_or("beta", d.beta)?,
            lr: doc.get_or("lr", d.lr)?,
            steps: doc.get_or("steps", d.steps)?,
            batch: doc.get_or("batch", d.batch)?,
            seed: doc.get_or("seed", d.seed)?,
            variant: doc.get_or("variant", d.variant)?,
            eval_every: doc.get_or("eval_every", d.eval_every)?,
            model: ModelConfig::from_doc(doc)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Graph handles of the objective and its two raw l1 terms.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub sr: Var,
    pub rec: Option<Var>,
}

/// `alpha * l1(x_sr, target_sr) + beta * l1(x_rec, target_rec)`; the second
/// term is dropped when there is no reconstruction output.
pub fn multitask_loss<T: Real>(
    g: &mut Graph<T>,
    x_sr: Var,
    target_sr: Var,
    x_rec: Option<Var>,
    target_rec: Var,
    alpha: f64,
    beta: f64,
) -> Result<LossTerms> {
    let sr = g.l1_loss(x_sr, target_sr)?;
    let mut total = g.scale(sr, T::of(alpha));
    let rec = match x_rec {
        Some(x) => {
            let rec = g.l1_loss(x, target_rec)?;
            let weighted = g.scale(rec, T::of(beta));
            total = g.add(total, weighted)?;
            Some(rec)
        }
        None => None,
    };
    Ok(LossTerms { total, sr, rec })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub total: f64,
    pub sr_term: f64,
    /// Zero when the variant has no reconstruction output.
    pub rec_term: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    /// `(step, report)` pairs taken every `eval_every` steps.
    pub evals: Vec<(usize, EvalReport)>,
}

impl TrainLog {
    /// `step,total,sr_term,rec_term` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,total,sr_term,rec_term\n");
        for r in &self.steps {
            out.push_str(&format!("{},{:e},{:e},{:e}\n", r.step, r.total, r.sr_term, r.rec_term));
        }
        out
    }
}

fn check_dataset(data: &[SampleTriple], scale: usize) -> Result<()> {
    let first = data.first().ok_or(TrainError::EmptyDataset)?;
    for (i, s) in data.iter().enumerate() {
        if s.input_lr.shape() != first.input_lr.shape() || s.target_sr.shape() != first.target_sr.shape() {
            return Err(TrainError::Dataset(format!("sample {i} differs in shape from sample 0")));
        }
        if s.scale != scale {
            return Err(TrainError::Dataset(format!(
                "sample {i} has scale {} but the model upsamples by {scale}",
                s.scale
            )));
        }
    }
    Ok(())
}

fn stack(data: &[SampleTriple], idx: &[usize], pick: impl Fn(&SampleTriple) -> &Tensor<f32>) -> Result<Tensor<f32>> {
    let items: Vec<&Tensor<f32>> = idx.iter().map(|&i| pick(&data[i])).collect();
    Ok(Tensor::stack_batch(&items)?)
}

/// Values of one loss evaluation on the samples `idx`; also leaves the
/// gradients on `g` when `params` are trainable leaves.
fn record_loss(
    g: &mut Graph<f32>,
    params: &T2NetParams<Var>,
    data: &[SampleTriple],
    idx: &[usize],
    cfg: &TrainConfig,
) -> Result<LossTerms> {
    let x = g.constant(stack(data, idx, |s| &s.input_lr)?);
    let t_sr = g.constant(stack(data, idx, |s| &s.target_sr)?);
    let t_rec = g.constant(stack(data, idx, |s| &s.target_rec)?);
    let out = forward(g, params, x, &cfg.model, cfg.variant, None)?;
    multitask_loss(g, out.sr, t_sr, out.rec, t_rec, cfg.alpha, cfg.beta)
}

/// The objective averaged over every sample of `data`.
pub fn dataset_objective(params: &T2NetParams, data: &[SampleTriple], cfg: &TrainConfig) -> Result<f64> {
    check_dataset(data, cfg.model.scale)?;
    let mut total = 0.0;
    for i in 0..data.len() {
        let mut g = Graph::new();
        let p = params.map(|_, t| g.constant(t.clone()));
        let terms = record_loss(&mut g, &p, data, &[i], cfg)?;
        total += g.value(terms.total).item() as f64;
    }
    Ok(total / data.len() as f64)
}

pub fn train(data: &[SampleTriple], cfg: &TrainConfig) -> Result<(T2NetParams, TrainLog)> {
    train_with(data, cfg, |_| {})
}

/// Trains from the seeded initialization, calling `on_step` after every
/// update.
pub fn train_with(
    data: &[SampleTriple],
    cfg: &TrainConfig,
    on_step: impl FnMut(&StepRecord),
) -> Result<(T2NetParams, TrainLog)> {
    cfg.validate()?;
    let params = T2NetParams::init(&cfg.model, cfg.seed)?;
    train_from(params, data, cfg, on_step)
}

pub fn train_from(
    mut params: T2NetParams,
    data: &[SampleTriple],
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&StepRecord),
) -> Result<(T2NetParams, TrainLog)> {
    cfg.validate()?;
    check_dataset(data, cfg.model.scale)?;
    let adam = AdamConfig::with_lr(cfg.lr);
    let mut states = Vec::new();
    params.visit(|_, t| states.push(AdamState::<f32>::new(t.numel())));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut log = TrainLog::default();

    for step in 0..cfg.steps {
        let idx: Vec<usize> = (0..cfg.batch).map(|_| rng.random_range(0..data.len())).collect();
        let mut g = Graph::new();
        let vars = register(&mut g, &params);
        let terms = record_loss(&mut g, &vars, data, &idx, cfg)?;
        let record = StepRecord {
            step,
            total: g.value(terms.total).item() as f64,
            sr_term: g.value(terms.sr).item() as f64,
            rec_term: terms.rec.map_or(0.0, |r| g.value(r).item() as f64),
        };
        if !record.total.is_finite() {
            return Err(TrainError::NonFinite {
                step,
                value: record.total,
            });
        }
        g.backward(terms.total)?;

        let mut leaves = Vec::new();
        params.visit(|_, t| leaves.push(t.clone()));
        let mut grad_vars = Vec::new();
        vars.visit(|_, &v| grad_vars.push(v));
        for ((t, st), v) in leaves.iter_mut().zip(&mut states).zip(grad_vars) {
            // leaves outside the chosen variant's graph never get a gradient
            if let Some(grad) = g.grad(v) {
                adam_step(t, Some(grad), st, &adam)?;
            }
        }
        let mut it = leaves.into_iter();
        params = params.map(|_, _| it.next().expect("one leaf per parameter"));

        log.steps.push(record);
        on_step(&record);
        if cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0 {
            log.evals.push((step + 1, evaluate(&params, data, &cfg.model, cfg.variant)?));
        }
    }
    Ok((params, log))
}

/// Dataset-averaged metrics of one model, with the two input baselines.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EvalReport {
    /// Network SR output vs the high-resolution target.
    pub sr: MetricReport,
    /// Network reconstruction output vs the low-resolution target.
    pub rec: Option<MetricReport>,
    /// Bicubic upsampling of the input vs the high-resolution target.
    pub bicubic: MetricReport,
    /// The input itself vs the low-resolution target.
    pub zero_filled: MetricReport,
}

/// Metrics of externally supplied `(x_sr, x_rec)` predictions, one per sample.
pub fn evaluate_predictions(
    data: &[SampleTriple],
    predictions: &[(Tensor<f32>, Option<Tensor<f32>>)],
) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if predictions.len() != data.len() {
        return Err(TrainError::Dataset(format!(
            "{} predictions for {} samples",
            predictions.len(),
            data.len()
        )));
    }
    let mut sr = Vec::new();
    let mut rec = Vec::new();
    let mut bicubic = Vec::new();
    let mut zero_filled = Vec::new();
    for (s, (x_sr, x_rec)) in data.iter().zip(predictions) {
        sr.push(MetricReport::compute(x_sr, &s.target_sr)?);
        if let Some(x) = x_rec {
            rec.push(MetricReport::compute(x, &s.target_rec)?);
        }
        bicubic.push(MetricReport::compute(&bicubic_upsample(&s.input_lr, s.scale), &s.target_sr)?);
        zero_filled.push(MetricReport::compute(&s.input_lr, &s.target_rec)?);
    }
    Ok(EvalReport {
        sr: MetricReport::mean(&sr),
        rec: (!rec.is_empty()).then(|| MetricReport::mean(&rec)),
        bicubic: MetricReport::mean(&bicubic),
        zero_filled: MetricReport::mean(&zero_filled),
    })
}

pub fn predict(
    params: &T2NetParams,
    data: &[SampleTriple],
    model: &ModelConfig,
    variant: Variant,
) -> Result<Vec<(Tensor<f32>, Option<Tensor<f32>>)>> {
    data.iter()
        .map(|s| Ok(infer(params, model, variant, &s.input_lr)?))
        .collect()
}

pub fn evaluate(params: &T2NetParams, data: &[SampleTriple], model: &ModelConfig, variant: Variant) -> Result<EvalReport> {
    check_dataset(data, model.scale)?;
    evaluate_predictions(data, &predict(params, data, model, variant)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_doc_round_trip() {
        let cfg = TrainConfig {
            alpha: 0.5,
            steps: 7,
            variant: Variant::NoTt,
            ..TrainConfig::full_scale()
        };
        let back = TrainConfig::from_doc(&KvDoc::parse(&cfg.to_doc().to_string()).unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(TrainConfig::from_doc(&KvDoc::new()).unwrap(), TrainConfig::desk());
        assert!(TrainConfig::from_doc(&KvDoc::parse("gamma: 1").unwrap()).is_err());
    }

    #[test]
    fn config_validation() {
        let bad = [
            TrainConfig { alpha: -0.1, ..TrainConfig::desk() },
            TrainConfig { alpha: 0.0, beta: 0.0, ..TrainConfig::desk() },
            TrainConfig { lr: f64::NAN, ..TrainConfig::desk() },
            TrainConfig { batch: 0, ..TrainConfig::desk() },
        ];
        for cfg in bad {
            assert!(matches!(cfg.validate(), Err(TrainError::Config(_))));
        }
    }

    #[test]
    fn full_scale_config_keeps_weights() {
        let p = TrainConfig::full_scale();
        assert_eq!((p.alpha, p.beta, p.lr, p.model.n_stages), (0.2, 0.8, 5e-5, 8));
    }
}
