use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use t2net_core::metrics::{nmse, psnr, ssim, MetricReport, PSNR_CAP_DB};
use t2net_core::mri::{generate_phantom, PhantomSpec};
use t2net_core::tensor::Tensor;

fn rand_img(seed: u64, h: usize, w: usize) -> Tensor<f64> {
    Tensor::rand_uniform(&[1, 1, h, w], 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn phantom() -> Tensor<f64> {
    generate_phantom(&PhantomSpec::new(32, 8, 5)).unwrap().cast()
}

#[test]
fn psnr_examples() {
    let t = rand_img(1, 16, 16);
    assert_eq!(psnr(&t, &t, 1.0).unwrap(), PSNR_CAP_DB);
    let shifted = t.map(|v| v + 0.1);
    assert!((psnr(&shifted, &t, 1.0).unwrap() - 20.0).abs() < 1e-6);

    let p = rand_img(2, 16, 16);
    let mse: f64 = p.data().iter().zip(t.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / 256.0;
    let oracle = 10.0 * (0.8f64 * 0.8 / mse).log10();
    assert!((psnr(&p, &t, 0.8).unwrap() - oracle).abs() < 1e-9);
}

#[test]
fn psnr_strictly_decreases_with_noise_amplitude() {
    let t = phantom();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let noise: Vec<f64> = (0..t.numel()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut last = f64::INFINITY;
    for amp in [0.001, 0.01, 0.03, 0.1, 0.3, 1.0] {
        let noisy = Tensor::from_fn(t.shape(), |i| t.data()[i] + amp * noise[i]);
        let v = psnr(&noisy, &t, 1.0).unwrap();
        assert!(v < last, "amplitude {amp}: {v} !< {last}");
        last = v;
    }
}

#[test]
fn ssim_examples() {
    let t = phantom();
    assert!((ssim(&t, &t, 1.0).unwrap() - 1.0).abs() < 1e-6);
    let r = rand_img(4, 20, 24);
    assert!((ssim(&r, &r, 1.0).unwrap() - 1.0).abs() < 1e-6);

    let inverted = t.map(|v| 1.0 - v);
    assert!(ssim(&inverted, &t, 1.0).unwrap() < 0.0);

    let p = rand_img(5, 32, 32);
    let a = ssim(&p, &t, 1.0).unwrap();
    let b = ssim(&t, &p, 1.0).unwrap();
    assert!((a - b).abs() < 1e-9);
}

/// Direct windowed statistics of the reference and the closed-form SSIM of
/// an affine copy `c x + d`.
fn affine_ssim_oracle(x: &Tensor<f64>, c: f64, d: f64, range: f64) -> f64 {
    let (h, w) = (x.shape()[2], x.shape()[3]);
    let g: Vec<f64> = (0..11).map(|i| (-((i as f64 - 5.0).powi(2)) / 4.5).exp()).collect();
    let gs: f64 = g.iter().sum();
    let (c1, c2) = ((0.01 * range).powi(2), (0.03 * range).powi(2));
    let mut total = 0.0;
    let mut count = 0;
    for y0 in 0..=h - 11 {
        for x0 in 0..=w - 11 {
            let (mut m, mut m2) = (0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let wt = g[i] * g[j] / (gs * gs);
                    let v = x.data()[(y0 + i) * w + x0 + j];
                    m += wt * v;
                    m2 += wt * v * v;
                }
            }
            let var = m2 - m * m;
            let my = c * m + d;
            total += (2.0 * m * my + c1) * (2.0 * c * var + c2) / ((m * m + my * my + c1) * ((1.0 + c * c) * var + c2));
            count += 1;
        }
    }
    total / count as f64
}

#[test]
fn ssim_matches_affine_closed_form() {
    let t = phantom();
    for (c, d) in [(0.5, 0.1), (1.0, 0.2), (2.0, -0.3), (-1.0, 1.0)] {
        let pred = t.map(|v| c * v + d);
        let got = ssim(&pred, &t, 1.0).unwrap();
        let want = affine_ssim_oracle(&t, c, d, 1.0);
        assert!((got - want).abs() < 1e-9, "c={c} d={d}: {got} vs {want}");
        assert!(got < 1.0);
    }
}

#[test]
fn nmse_examples() {
    let t = rand_img(6, 8, 8);
    assert_eq!(nmse(&t, &t).unwrap(), 0.0);
    let doubled = t.map(|v| 2.0 * v);
    assert!((nmse(&doubled, &t).unwrap() - 1.0).abs() < 1e-12);
    let p = rand_img(7, 8, 8);
    let num: f64 = p.data().iter().zip(t.data()).map(|(a, b)| (a - b).powi(2)).sum();
    let den: f64 = t.data().iter().map(|b| b * b).sum();
    assert!((nmse(&p, &t).unwrap() - num / den).abs() < 1e-12);
    for c in [-3.0, 0.5, 7.0] {
        let a = nmse(&p.map(|v| c * v), &t.map(|v| c * v)).unwrap();
        assert!((a - num / den).abs() < 1e-9);
    }
}

#[test]
fn report_on_identical_images() {
    let t = phantom();
    let r = MetricReport::compute(&t, &t).unwrap();
    assert_eq!(r.psnr_db, PSNR_CAP_DB);
    assert!((r.ssim - 1.0).abs() < 1e-6);
    assert_eq!(r.nmse, 0.0);
}
