//! Python module `t2net`: dataset simulation, metrics and the network,
//! with images passed as nested lists of floats (`rows x cols`).

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use t2net_core::cli::{load_model, save_model};
use t2net_core::metrics;
use t2net_core::model::{infer, param_count, ModelConfig, T2NetParams, Variant};
use t2net_core::mri::{self, GenConfig, SampleTriple};
use t2net_core::tensor::Tensor;
use t2net_core::training::{self, EvalReport, TrainConfig};

type Image = Vec<Vec<f32>>;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_tensor(img: &Image) -> PyResult<Tensor<f32>> {
    let h = img.len();
    let w = img.first().map_or(0, Vec::len);
    if h == 0 || w == 0 || img.iter().any(|r| r.len() != w) {
        return Err(PyValueError::new_err("image must be a non-empty rectangular list of rows"));
    }
    Tensor::new(vec![1, 1, h, w], img.concat()).map_err(value_err)
}

fn to_image(t: &Tensor<f32>) -> Image {
    let w = t.shape()[t.shape().len() - 1];
    t.data().chunks(w).map(<[f32]>::to_vec).collect()
}

/// Simulates a phantom dataset into `out_dir`; returns the number of slices.
#[pyfunction]
#[pyo3(signature = (out_dir, slices=16, size=64, scale=2, acceleration=6.0, center_fraction=0.0625, seed=0))]
fn generate_dataset(
    out_dir: PathBuf,
    slices: usize,
    size: usize,
    scale: usize,
    acceleration: f64,
    center_fraction: f64,
    seed: u64,
) -> PyResult<usize> {
    let cfg = GenConfig {
        slices,
        size,
        scale,
        acceleration,
        center_fraction,
        seed,
        ..GenConfig::default()
    };
    let m = mri::generate_dataset(&out_dir, &cfg).map_err(value_err)?;
    Ok(m.files.len())
}

/// Sampled columns of a seeded Cartesian mask.
#[pyfunction]
#[pyo3(signature = (width, acceleration, center_fraction, seed=0))]
fn cartesian_mask(width: usize, acceleration: f64, center_fraction: f64, seed: u64) -> PyResult<Vec<bool>> {
    let m = mri::make_cartesian_mask(width, acceleration, center_fraction, seed).map_err(value_err)?;
    Ok(m.sampled)
}

/// `(input_lr, target_rec, target_sr, scale)` of one sample file.
#[pyfunction]
fn load_sample(path: PathBuf) -> PyResult<(Image, Image, Image, usize)> {
    let s = mri::read_sample(&path).map_err(|e| PyIOError::new_err(e.to_string()))?;
    Ok((to_image(&s.input_lr), to_image(&s.target_rec), to_image(&s.target_sr), s.scale))
}

#[pyfunction]
fn psnr(pred: Image, target: Image, data_range: f64) -> PyResult<f64> {
    metrics::psnr(&to_tensor(&pred)?, &to_tensor(&target)?, data_range).map_err(value_err)
}

#[pyfunction]
fn ssim(pred: Image, target: Image, data_range: f64) -> PyResult<f64> {
    metrics::ssim(&to_tensor(&pred)?, &to_tensor(&target)?, data_range).map_err(value_err)
}

#[pyfunction]
fn nmse(pred: Image, target: Image) -> PyResult<f64> {
    metrics::nmse(&to_tensor(&pred)?, &to_tensor(&target)?).map_err(value_err)
}

fn load_data(dir: &std::path::Path) -> PyResult<Vec<SampleTriple>> {
    let (_, samples) = mri::load_dataset(dir).map_err(|e| PyIOError::new_err(e.to_string()))?;
    Ok(samples)
}

fn report_dict(r: &EvalReport) -> Vec<(String, f64)> {
    let mut out = Vec::new();
    let rows = [("sr", Some(r.sr)), ("rec", r.rec), ("bicubic", Some(r.bicubic)), ("zero_filled", Some(r.zero_filled))];
    for (name, m) in rows {
        if let Some(m) = m {
            out.push((format!("{name}_psnr_db"), m.psnr_db));
            out.push((format!("{name}_ssim"), m.ssim));
            out.push((format!("{name}_nmse"), m.nmse));
        }
    }
    out
}

/// The two-branch network with its training configuration.
#[pyclass(name = "T2Net")]
struct PyT2Net {
    params: T2NetParams,
    cfg: TrainConfig,
}

#[pymethods]
impl PyT2Net {
    #[new]
    #[pyo3(signature = (n_stages=4, channels=32, scale=2, variant="full", seed=0, zero_init_outputs=true))]
    fn new(n_stages: usize, channels: usize, scale: usize, variant: &str, seed: u64, zero_init_outputs: bool) -> PyResult<Self> {
        let model = ModelConfig {
            n_stages,
            channels,
            scale,
            zero_init_outputs,
            ..ModelConfig::default()
        };
        let cfg = TrainConfig {
            model,
            seed,
            variant: variant.parse::<Variant>().map_err(PyValueError::new_err)?,
            ..TrainConfig::desk()
        };
        let params = T2NetParams::init(&model, seed).map_err(value_err)?;
        Ok(PyT2Net { params, cfg })
    }

    /// Reads a checkpoint and the `.cfg` file beside it.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (params, cfg) = load_model(&path).map_err(|e| PyIOError::new_err(e.to_string()))?;
        Ok(PyT2Net { params, cfg })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_model(&path, &self.params, &self.cfg).map_err(|e| PyIOError::new_err(e.to_string()))
    }

    #[getter]
    fn param_count(&self) -> usize {
        param_count(&self.cfg.model)
    }

    #[getter]
    fn scale(&self) -> usize {
        self.cfg.model.scale
    }

    #[getter]
    fn variant(&self) -> String {
        self.cfg.variant.to_string()
    }

    /// `(x_sr, x_rec)` for one low-resolution image; `x_rec` is `None`
    /// without the reconstruction branch.
    fn forward(&self, image: Image) -> PyResult<(Image, Option<Image>)> {
        let x = to_tensor(&image)?;
        let (sr, rec) = infer(&self.params, &self.cfg.model, self.cfg.variant, &x).map_err(value_err)?;
        Ok((to_image(&sr), rec.as_ref().map(to_image)))
    }

    /// Continues training on a dataset directory; returns the per-step loss.
    #[pyo3(signature = (data_dir, steps=500, lr=None, batch=None, alpha=None, beta=None))]
    fn train(
        &mut self,
        py: Python<'_>,
        data_dir: PathBuf,
        steps: usize,
        lr: Option<f64>,
        batch: Option<usize>,
        alpha: Option<f64>,
        beta: Option<f64>,
    ) -> PyResult<Vec<f64>> {
        let data = load_data(&data_dir)?;
        let cfg = TrainConfig {
            steps,
            lr: lr.unwrap_or(self.cfg.lr),
            batch: batch.unwrap_or(self.cfg.batch),
            alpha: alpha.unwrap_or(self.cfg.alpha),
            beta: beta.unwrap_or(self.cfg.beta),
            ..self.cfg
        };
        let start = self.params.clone();
        let (params, log) = py
            .detach(|| training::train_from(start, &data, &cfg, |_| {}))
            .map_err(value_err)?;
        self.params = params;
        self.cfg = cfg;
        Ok(log.steps.iter().map(|r| r.total).collect())
    }

    /// Dataset-averaged metrics as `{name}_{psnr_db,ssim,nmse}` entries.
    fn evaluate(&self, data_dir: PathBuf) -> PyResult<Vec<(String, f64)>> {
        let data = load_data(&data_dir)?;
        let r = training::evaluate(&self.params, &data, &self.cfg.model, self.cfg.variant).map_err(value_err)?;
        Ok(report_dict(&r))
    }

    fn __repr__(&self) -> String {
        let m = &self.cfg.model;
        format!(
            "T2Net(n_stages={}, channels={}, scale={}, variant='{}')",
            m.n_stages, m.channels, m.scale, self.cfg.variant
        )
    }
}

#[pymodule]
fn t2net(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyT2Net>()?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(cartesian_mask, m)?)?;
    m.add_function(wrap_pyfunction!(load_sample, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(nmse, m)?)?;
    Ok(())
}
