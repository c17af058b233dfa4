//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use t2net_core::gradcheck::{check_gradients, GradCheckReport};
use t2net_core::model::{forward, ModelConfig, ModelError, T2NetParams, Variant};
use t2net_core::tensor::{Graph, IndexTensor, ResampleMode, Result as TResult, Scale, Tensor, TensorError, Var};

pub fn rand_t(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::rand_uniform(shape, -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Direct-loop 3x3 (or any odd k) cross-correlation, stride 1, same padding.
pub fn ref_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    let [bs, cin, h, wd] = x.dims4("ref").unwrap();
    let [cout, _, k, _] = w.dims4("ref").unwrap();
    let p = (k / 2) as isize;
    Tensor::from_fn(&[bs, cout, h, wd], |i| {
        let (n, co, y, xx) = (i / (cout * h * wd), i / (h * wd) % cout, i / wd % h, i % wd);
        let mut acc = b.data()[co];
        for ci in 0..cin {
            for ky in 0..k {
                for kx in 0..k {
                    let sy = y as isize + ky as isize - p;
                    let sx = xx as isize + kx as isize - p;
                    if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < wd {
                        acc += w.data()[((co * cin + ci) * k + ky) * k + kx]
                            * x.data()[((n * cin + ci) * h + sy as usize) * wd + sx as usize];
                    }
                }
            }
        }
        acc
    })
}

pub fn tensor_err(e: ModelError) -> TensorError {
    match e {
        ModelError::Tensor(t) => t,
        other => TensorError::Contract(other.to_string()),
    }
}

/// Finite-difference check of a whole network (every parameter and the
/// input), with attention maps frozen at their values for the unperturbed
/// parameters.
pub fn model_gradcheck(cfg: &ModelConfig, variant: Variant, hw: usize, seed: u64) -> GradCheckReport {
    let params = T2NetParams::init(cfg, seed).unwrap().map(|_, t| t.cast::<f64>());
    let input = rand_t(&[1, 1, hw, hw], seed + 1).map(|v| v.abs());

    let mut g = Graph::new();
    let p = params.map(|_, t| g.constant(t.clone()));
    let x = g.constant(input.clone());
    let frozen = forward(&mut g, &p, x, cfg, variant, None).unwrap().attention;

    let mut leaves = Vec::new();
    params.visit(|_, t| leaves.push(t.clone()));
    let n_params = leaves.len();
    leaves.push(input);
    let sr_w = rand_t(&[1, 1, hw * cfg.scale, hw * cfg.scale], seed + 2);
    let rec_w = rand_t(&[1, 1, hw, hw], seed + 3);

    check_gradients(&leaves, |g: &mut Graph<f64>, vars: &[Var]| {
        let mut it = vars[..n_params].iter();
        let p = params.map(|_, _| *it.next().unwrap());
        let frozen = (variant == Variant::Full).then_some(&frozen[..]);
        let out = forward(g, &p, vars[n_params], cfg, variant, frozen).map_err(tensor_err)?;
        let w = g.constant(sr_w.clone());
        let y = g.mul(out.sr, w)?;
        let mut loss = g.sum(y);
        if let Some(rec) = out.rec {
            let w = g.constant(rec_w.clone());
            let y = g.mul(rec, w)?;
            let s = g.sum(y);
            loss = g.add(loss, s)?;
        }
        Ok(loss)
    })
    .unwrap()
}

/// The small end-to-end configuration used by the gradient suite.
pub fn gradcheck_config() -> ModelConfig {
    ModelConfig {
        n_stages: 1,
        channels: 4,
        scale: 2,
        zero_init_outputs: false,
        ..ModelConfig::default()
    }
}

/// Dots the output with a fixed random tensor so every output element gets
/// a distinct, smooth weight.
pub fn weighted_sum(g: &mut Graph<f64>, y: Var, seed: u64) -> Var {
    let w = g.constant(rand_t(g.shape(y), seed));
    let p = g.mul(y, w).unwrap();
    g.sum(p)
}

fn check(
    out: &mut Vec<(&'static str, GradCheckReport)>,
    name: &'static str,
    inputs: &[Tensor<f64>],
    f: impl Fn(&mut Graph<f64>, &[Var]) -> TResult<Var>,
) {
    out.push((name, check_gradients(inputs, f).unwrap()));
}

/// Central-difference reports for every differentiable engine op.
pub fn op_gradient_suite() -> Vec<(&'static str, GradCheckReport)> {
    let mut out = Vec::new();
    check(&mut out, "conv2d", &[rand_t(&[2, 2, 5, 5], 30), rand_t(&[3, 2, 3, 3], 31), rand_t(&[3], 32)], |g, v| {
        let y = g.conv2d(v[0], v[1], v[2], 1, 1)?;
        Ok(weighted_sum(g, y, 33))
    });
    check(&mut out, "conv2d strided", &[rand_t(&[1, 2, 6, 6], 34), rand_t(&[2, 2, 3, 3], 35), rand_t(&[2], 36)], |g, v| {
        let y = g.conv2d(v[0], v[1], v[2], 2, 1)?;
        Ok(weighted_sum(g, y, 37))
    });
    check(&mut out, "pixel_shuffle", &[rand_t(&[1, 8, 2, 3], 38)], |g, v| {
        let y = g.pixel_shuffle(v[0], 2)?;
        Ok(weighted_sum(g, y, 39))
    });
    check(&mut out, "pixel_unshuffle", &[rand_t(&[1, 2, 4, 6], 40)], |g, v| {
        let y = g.pixel_unshuffle(v[0], 2)?;
        Ok(weighted_sum(g, y, 41))
    });
    check(&mut out, "unfold", &[rand_t(&[2, 2, 4, 3], 42)], |g, v| {
        let y = g.unfold(v[0], 3, 1, 1)?;
        Ok(weighted_sum(g, y, 43))
    });
    check(&mut out, "fold", &[rand_t(&[1, 18, 12], 44)], |g, v| {
        let y = g.fold(v[0], 4, 3, 3, 1, 1)?;
        Ok(weighted_sum(g, y, 45))
    });
    check(&mut out, "index_select", &[rand_t(&[2, 3, 5], 46)], |g, v| {
        let idx = IndexTensor::new(2, 4, vec![0, 0, 4, 2, 1, 3, 3, 3]).unwrap();
        let y = g.index_select_columns(v[0], &idx)?;
        Ok(weighted_sum(g, y, 47))
    });
    for (scale, mode) in [
        (Scale::new(2, 1), ResampleMode::Bilinear),
        (Scale::new(1, 2), ResampleMode::Bilinear),
        (Scale::new(3, 2), ResampleMode::Nearest),
    ] {
        check(&mut out, "resample", &[rand_t(&[1, 2, 4, 4], 48)], move |g, v| {
            let y = g.resample(v[0], scale, mode)?;
            Ok(weighted_sum(g, y, 49))
        });
    }
    let two = [rand_t(&[2, 3, 2, 2], 50), rand_t(&[2, 3, 2, 2], 51)];
    check(&mut out, "add", &two, |g, v| {
        let y = g.add(v[0], v[1])?;
        Ok(weighted_sum(g, y, 52))
    });
    check(&mut out, "sub", &two, |g, v| {
        let y = g.sub(v[0], v[1])?;
        Ok(weighted_sum(g, y, 53))
    });
    check(&mut out, "mul", &two, |g, v| {
        let y = g.mul(v[0], v[1])?;
        Ok(weighted_sum(g, y, 54))
    });
    check(&mut out, "mul broadcast", &[rand_t(&[2, 3, 2, 2], 55), rand_t(&[2, 1, 2, 2], 56)], |g, v| {
        let y = g.mul(v[0], v[1])?;
        Ok(weighted_sum(g, y, 57))
    });
    check(&mut out, "scale/add_scalar", &[rand_t(&[5], 58)], |g, v| {
        let y = g.scale(v[0], -1.7);
        let y = g.add_scalar(y, 0.3);
        Ok(weighted_sum(g, y, 59))
    });
    check(&mut out, "relu", &[rand_t(&[3, 7], 60)], |g, v| {
        let y = g.relu(v[0]);
        Ok(weighted_sum(g, y, 61))
    });
    check(&mut out, "concat", &[rand_t(&[2, 1, 2, 3], 62), rand_t(&[2, 2, 2, 3], 63)], |g, v| {
        let y = g.concat_channels(v[0], v[1])?;
        Ok(weighted_sum(g, y, 64))
    });
    check(&mut out, "mean", &[rand_t(&[4, 2], 65)], |g, v| {
        let y = g.mul(v[0], v[0])?;
        Ok(g.mean(y))
    });
    check(&mut out, "l1", &[rand_t(&[2, 1, 3, 3], 66), rand_t(&[2, 1, 3, 3], 67)], |g, v| g.l1_loss(v[0], v[1]));
    out
}
