use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use t2net_core::metrics::{psnr, PSNR_CAP_DB};
use t2net_core::mri::*;

fn random_grid(h: usize, w: usize, seed: u64) -> ComplexGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = ComplexGrid::zeros(h, w);
    for i in 0..h * w {
        g.re[i] = rng.random_range(-1.0..1.0);
        g.im[i] = rng.random_range(-1.0..1.0);
    }
    g
}

/// O(n^4) centred DFT: output index `u'` holds frequency `u' - h/2`.
fn naive_centred_dft(x: &ComplexGrid) -> ComplexGrid {
    let (h, w) = (x.height, x.width);
    let norm = 1.0 / ((h * w) as f64).sqrt();
    let mut out = ComplexGrid::zeros(h, w);
    for us in 0..h {
        for vs in 0..w {
            let (u, v) = (us as f64 - (h / 2) as f64, vs as f64 - (w / 2) as f64);
            let (mut re, mut im) = (0.0, 0.0);
            for y in 0..h {
                for xx in 0..w {
                    let phase = -2.0 * PI * (u * y as f64 / h as f64 + v * xx as f64 / w as f64);
                    let (s, c) = phase.sin_cos();
                    let (a, b) = (x.re[y * w + xx], x.im[y * w + xx]);
                    re += a * c - b * s;
                    im += a * s + b * c;
                }
            }
            out.re[us * w + vs] = re * norm;
            out.im[us * w + vs] = im * norm;
        }
    }
    out
}

fn max_abs_diff(a: &ComplexGrid, b: &ComplexGrid) -> f64 {
    a.re.iter()
        .zip(&b.re)
        .chain(a.im.iter().zip(&b.im))
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[test]
fn fft_matches_naive_dft() {
    for (h, w, seed) in [(8, 8, 1), (4, 16, 2), (2, 8, 3)] {
        let x = random_grid(h, w, seed);
        let got = fft2(&x).unwrap();
        assert!(max_abs_diff(&got, &naive_centred_dft(&x)) < 1e-5);
    }
}

#[test]
fn fft_round_trip_and_parseval() {
    for seed in 0..10 {
        let x = random_grid(16, 32, seed);
        let k = fft2(&x).unwrap();
        let back = ifft2(&k).unwrap();
        let scale = x.re.iter().chain(&x.im).fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max_abs_diff(&back, &x) <= 1e-6 * scale);
        assert!((k.energy() - x.energy()).abs() <= 1e-6 * x.energy());
    }
}

#[test]
fn mask_fraction_over_many_seeds() {
    for seed in 0..100 {
        let m = make_cartesian_mask(256, 6.0, 0.0625, seed).unwrap();
        let frac = m.count() as f64 / 256.0;
        assert!((frac - 1.0 / 6.0).abs() <= 1.0 / 256.0, "seed {seed}: {frac}");
        let band = CartesianMask::center_band(256, 0.0625);
        assert_eq!(band.len(), 16);
        assert!(band.contains(&128));
        assert!(m.sampled[band].iter().all(|&s| s));
    }
}

#[test]
fn undersample_examples() {
    let k = random_grid(8, 16, 4);
    assert_eq!(undersample(&k, &CartesianMask::full(16)).unwrap(), k);
    let empty = CartesianMask::from_columns(vec![false; 16]);
    assert_eq!(undersample(&k, &empty).unwrap().energy(), 0.0);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cols: Vec<bool> = (0..16).map(|_| rng.random_bool(0.4)).collect();
    let m = CartesianMask::from_columns(cols.clone());
    let u = undersample(&k, &m).unwrap();
    for (x, &keep) in cols.iter().enumerate() {
        let col_energy = |g: &ComplexGrid| (0..8).map(|y| g.re[y * 16 + x].powi(2) + g.im[y * 16 + x].powi(2)).sum::<f64>();
        if keep {
            assert_eq!(col_energy(&u), col_energy(&k));
        } else {
            assert_eq!(col_energy(&u), 0.0);
        }
    }
    assert!(undersample(&k, &CartesianMask::full(8)).is_err());
}

#[test]
fn degrade_examples() {
    let k = random_grid(8, 8, 6);
    assert_eq!(degrade_lr(&k, 1).unwrap(), k);
    assert!(degrade_lr(&random_grid(8, 8, 6), 3).is_err());

    let c = ComplexGrid::from_real(16, 16, &[0.37; 256]).unwrap();
    let lr = ifft2(&degrade_lr(&fft2(&c).unwrap(), 2).unwrap()).unwrap();
    assert_eq!((lr.height, lr.width), (8, 8));
    assert!(lr.re.iter().all(|v| (v - 0.37).abs() < 1e-12));
    assert!(lr.im.iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn band_limited_truncation_equals_decimation() {
    let (h, w, s) = (32usize, 16usize, 2usize);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut x = ComplexGrid::zeros(h, w);
    for _ in 0..6 {
        let u = rng.random_range(-((h / (2 * s)) as i64)..(h / (2 * s)) as i64) as f64;
        let v = rng.random_range(-((w / (2 * s)) as i64)..(w / (2 * s)) as i64) as f64;
        let (ar, ai) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        for y in 0..h {
            for xx in 0..w {
                let (sn, cs) = (2.0 * PI * (u * y as f64 / h as f64 + v * xx as f64 / w as f64)).sin_cos();
                x.re[y * w + xx] += ar * cs - ai * sn;
                x.im[y * w + xx] += ar * sn + ai * cs;
            }
        }
    }
    let lr = ifft2(&degrade_lr(&fft2(&x).unwrap(), s).unwrap()).unwrap();
    let (hl, wl) = (h / s, w / s);
    for m in 0..hl {
        for n in 0..wl {
            let src = (s * m) * w + s * n;
            assert!((lr.re[m * wl + n] - x.re[src]).abs() < 1e-5);
            assert!((lr.im[m * wl + n] - x.im[src]).abs() < 1e-5);
        }
    }
}

fn phantom(seed: u64) -> t2net_core::tensor::Tensor<f32> {
    generate_phantom(&PhantomSpec::new(64, 10, seed)).unwrap()
}

#[test]
fn make_sample_examples() {
    let hr = phantom(1);
    let full = make_sample(&hr, &CartesianMask::full(64), 2).unwrap();
    assert_eq!(full.input_lr.shape(), &[1, 1, 32, 32]);
    assert_eq!(full.target_sr.shape(), &[1, 1, 64, 64]);
    for (a, b) in full.input_lr.data().iter().zip(full.target_rec.data()) {
        assert!((a - b).abs() < 1e-5);
    }
    assert_eq!(full.target_sr.max_value(), 1.0);

    let s1 = make_sample(&hr, &CartesianMask::full(64), 1).unwrap();
    for (a, b) in s1.input_lr.data().iter().zip(s1.target_sr.data()) {
        assert!((a - b).abs() < 1e-5);
    }

    let mask = make_cartesian_mask(64, 6.0, 0.0625, 3).unwrap();
    let under = make_sample(&hr, &mask, 2).unwrap();
    let range = under.target_rec.max_value() as f64;
    let zero_filled = psnr(&under.input_lr, &under.target_rec, range).unwrap();
    assert!(zero_filled < PSNR_CAP_DB);
    assert!(zero_filled > 5.0);
    println!("zero-filled LR baseline PSNR: {zero_filled:.3} dB");

    assert!(make_sample(&phantom(1).reshape(&[1, 1, 32, 128]).unwrap(), &CartesianMask::full(128), 3).is_err());
}

#[test]
fn pipeline_is_positively_homogeneous() {
    let hr = phantom(2);
    let mask = make_cartesian_mask(64, 6.0, 0.0625, 9).unwrap();
    let run = |c: f64| {
        let vals: Vec<f64> = hr.data().iter().map(|&v| c * v as f64).collect();
        let k = fft2(&ComplexGrid::from_real(64, 64, &vals).unwrap()).unwrap();
        let rec = ifft2(&degrade_lr(&k, 2).unwrap()).unwrap().magnitude();
        let inp = ifft2(&degrade_lr(&undersample(&k, &mask).unwrap(), 2).unwrap()).unwrap().magnitude();
        (rec, inp)
    };
    let (rec1, inp1) = run(1.0);
    for c in [0.25, 3.0, 17.0] {
        let (rec, inp) = run(c);
        for (a, b) in rec.iter().zip(&rec1).chain(inp.iter().zip(&inp1)) {
            assert!((a - c * b).abs() <= 1e-6 * (c * b).abs().max(1e-3));
        }
    }
}

#[test]
fn more_columns_rarely_hurt() {
    let mut better_or_equal = 0;
    let trials = 20;
    for seed in 0..trials {
        let hr = phantom(100 + seed);
        let sparse = make_cartesian_mask(64, 6.0, 0.0625, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
        let mut cols = sparse.sampled.clone();
        for _ in 0..6 {
            cols[rng.random_range(0..64)] = true;
        }
        let dense = CartesianMask::from_columns(cols);
        let a = make_sample(&hr, &sparse, 2).unwrap();
        let b = make_sample(&hr, &dense, 2).unwrap();
        let range = a.target_rec.max_value() as f64;
        let pa = psnr(&a.input_lr, &a.target_rec, range).unwrap();
        let pb = psnr(&b.input_lr, &b.target_rec, range).unwrap();
        if pb >= pa {
            better_or_equal += 1;
        }
    }
    assert!(better_or_equal * 10 >= trials * 9, "{better_or_equal}/{trials}");
}

#[test]
fn dataset_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = GenConfig {
        slices: 3,
        size: 32,
        ..GenConfig::default()
    };
    let manifest = generate_dataset(dir.path(), &cfg).unwrap();
    assert_eq!(manifest.files.len(), 3);
    let (m2, samples) = load_dataset(dir.path()).unwrap();
    assert_eq!(m2, manifest);
    assert_eq!(samples, cfg.generate().unwrap());

    let first = std::fs::read(dir.path().join("slice_0000.t2nt")).unwrap();
    write_sample(&dir.path().join("copy"), &samples[0]).unwrap();
    assert_eq!(std::fs::read(dir.path().join("copy.t2nt")).unwrap(), first);
    assert_eq!(read_sample(&dir.path().join("copy.t2nt")).unwrap(), samples[0]);
}
