use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use t2net_core::cli::write_error_maps;
use t2net_core::mri::{load_dataset, read_sample};
use t2net_core::pgm;

fn t2net(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_t2net"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn ok(o: Output) -> Output {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    o
}

const TINY: &str = "steps: 4\nn_stages: 1\nchannels: 4\n";

fn tiny_dataset(dir: &Path) {
    ok(t2net(dir, &["gen-data", "--out", "data", "--slices", "3", "--size", "32"]));
    fs::write(dir.join("tiny.cfg"), TINY).unwrap();
}

#[test]
fn gen_data_examples() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();

    let o = ok(t2net(d, &["gen-data", "--out", "empty", "--slices", "0"]));
    assert!(stdout(&o).starts_with("# config\n"));
    let (m, samples) = load_dataset(&d.join("empty")).unwrap();
    assert!(m.files.is_empty() && samples.is_empty());

    ok(t2net(d, &["gen-data", "--out", "full", "--slices", "2", "--size", "32", "--accel", "1", "--scale", "1", "--verify"]));
    for s in load_dataset(&d.join("full")).unwrap().1 {
        for (a, b) in s.input_lr.data().iter().zip(s.target_sr.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    ok(t2net(d, &["gen-data", "--out", "a"]));
    ok(t2net(d, &["gen-data", "--out", "b", "--slices", "16", "--size", "64", "--scale", "2", "--accel", "6"]));
    let list = |p: &str| {
        let mut v: Vec<_> = fs::read_dir(d.join(p)).unwrap().map(|e| e.unwrap().file_name()).collect();
        v.sort();
        v
    };
    assert_eq!(list("a"), list("b"));
    assert_eq!(list("a").iter().filter(|f| f.to_string_lossy().ends_with(".t2nt")).count(), 16);
    for f in list("a") {
        assert_eq!(fs::read(d.join("a").join(&f)).unwrap(), fs::read(d.join("b").join(&f)).unwrap());
    }

    assert_eq!(t2net(d, &["gen-data", "--out", "x", "--size", "48"]).status.code(), Some(2));
    assert_eq!(t2net(d, &["gen-data", "--out", "x", "--size", "32", "--scale", "3"]).status.code(), Some(2));
    assert_eq!(t2net(d, &["gen-data", "--out", "x", "--frobnicate"]).status.code(), Some(2));
}

#[test]
fn train_then_eval_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    tiny_dataset(d);
    let o = ok(t2net(d, &["train", "--data", "data", "--config", "tiny.cfg", "--out", "m.ckpt"]));
    assert!(stdout(&o).contains("steps: 4\n"));

    let log = fs::read_to_string(d.join("m.ckpt.log.csv")).unwrap();
    let rows: Vec<&str> = log.lines().collect();
    assert_eq!(rows[0], "step,total,sr_term,rec_term");
    assert_eq!(rows.len(), 5);
    for row in &rows[1..] {
        let v: Vec<f64> = row.split(',').map(|x| x.parse().unwrap()).collect();
        assert!((v[1] - (0.2 * v[2] + 0.8 * v[3])).abs() < 1e-6);
    }

    let a = ok(t2net(d, &["eval", "--data", "data", "--ckpt", "m.ckpt", "--report", "r1.txt"]));
    let b = ok(t2net(d, &["eval", "--data", "data", "--ckpt", "m.ckpt", "--report", "r2.txt"]));
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(fs::read(d.join("r1.txt")).unwrap(), fs::read(d.join("r2.txt")).unwrap());
    let table = stdout(&a);
    for label in ["sr ", "rec ", "bicubic_baseline", "zero_filled_baseline"] {
        assert!(table.lines().any(|l| l.starts_with(label)), "{label} missing from\n{table}");
    }
    let report = fs::read_to_string(d.join("r1.txt")).unwrap();
    assert!(report.contains("variant: full") && report.contains("sr_psnr_db: "));

    // retraining is byte-identical
    ok(t2net(d, &["train", "--data", "data", "--config", "tiny.cfg", "--out", "m2.ckpt"]));
    assert_eq!(fs::read(d.join("m.ckpt")).unwrap(), fs::read(d.join("m2.ckpt")).unwrap());
    assert_eq!(fs::read(d.join("m.ckpt.log.csv")).unwrap(), fs::read(d.join("m2.ckpt.log.csv")).unwrap());
}

#[test]
fn outputs_create_missing_directories() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    tiny_dataset(d);
    ok(t2net(d, &["train", "--data", "data", "--config", "tiny.cfg", "--out", "runs/a/m.ckpt"]));
    assert!(d.join("runs/a/m.ckpt.cfg").exists() && d.join("runs/a/m.ckpt.log.csv").exists());
    ok(t2net(d, &["eval", "--data", "data", "--ckpt", "runs/a/m.ckpt", "--report", "reports/r.txt"]));
    assert!(d.join("reports/r.txt").exists());
    ok(t2net(d, &["error-map", "--ckpt", "runs/a/m.ckpt", "--sample", "data/slice_0000.t2nt", "--out", "maps/s0"]));
    assert!(d.join("maps/s0_err.pgm").exists());
}

#[test]
fn artifact_and_numeric_failures() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    tiny_dataset(d);
    ok(t2net(d, &["train", "--data", "data", "--config", "tiny.cfg", "--out", "m.ckpt"]));

    let mut bytes = fs::read(d.join("m.ckpt")).unwrap();
    bytes[0] = b'X';
    fs::write(d.join("bad.ckpt"), &bytes).unwrap();
    fs::copy(d.join("m.ckpt.cfg"), d.join("bad.ckpt.cfg")).unwrap();
    assert_eq!(t2net(d, &["eval", "--data", "data", "--ckpt", "bad.ckpt"]).status.code(), Some(3));
    assert_eq!(t2net(d, &["eval", "--data", "nowhere", "--ckpt", "m.ckpt"]).status.code(), Some(3));

    fs::write(d.join("nan.cfg"), "steps: 3\nlr: 1e30\nn_stages: 1\nchannels: 4\nzero_init_outputs: false\n").unwrap();
    let o = t2net(d, &["train", "--data", "data", "--config", "nan.cfg", "--out", "n.ckpt"]);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("at step"));

    fs::write(d.join("typo.cfg"), "stpes: 3\n").unwrap();
    assert_eq!(t2net(d, &["train", "--data", "data", "--config", "typo.cfg", "--out", "t.ckpt"]).status.code(), Some(2));
}

#[test]
fn ablate_prints_three_rows_of_six_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    tiny_dataset(d);
    let out = stdout(&ok(t2net(d, &["ablate", "--data", "data", "--config", "tiny.cfg"])));
    let table: Vec<&str> = out.lines().skip_while(|l| !l.contains("sr_psnr")).filter(|l| !l.starts_with('#')).collect();
    assert_eq!(table[0].split_whitespace().count(), 7);
    let rows = &table[1..];
    assert_eq!(rows.len(), 3);
    let labels: Vec<&str> = rows.iter().map(|r| r.split_whitespace().next().unwrap()).collect();
    assert_eq!(labels, ["no_rec", "no_tt", "full"]);
    for r in rows {
        assert_eq!(r.split_whitespace().count(), 7);
    }
    assert!(rows[0].contains(" -"));
    assert!(out.contains("# trend full >= no_tt >= no_rec: "));
}

#[test]
fn error_maps() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(t2net(d, &["gen-data", "--out", "data", "--slices", "1"]));
    fs::write(d.join("zero.cfg"), "steps: 0\nn_stages: 1\nchannels: 4\n").unwrap();
    ok(t2net(d, &["train", "--data", "data", "--config", "zero.cfg", "--out", "z.ckpt"]));
    let o = ok(t2net(d, &["error-map", "--ckpt", "z.ckpt", "--sample", "data/slice_0000.t2nt", "--out", "s0"]));
    assert!(stdout(&o).contains("error scale: 255.000000"));

    for (name, side) in [("input", 32), ("sr", 64), ("rec", 32), ("target", 64), ("err", 64)] {
        let bytes = fs::read(d.join(format!("s0_{name}.pgm"))).unwrap();
        let header = format!("P5\n{side} {side}\n255\n");
        assert_eq!(&bytes[..header.len()], header.as_bytes(), "{name}");
        assert_eq!(bytes.len(), header.len() + side * side, "{name}");
    }
    // zero-initialized outputs: the error is the target itself
    assert_eq!(fs::read(d.join("s0_err.pgm")).unwrap(), fs::read(d.join("s0_target.pgm")).unwrap());
    let (_, _, sr) = pgm::decode(&fs::read(d.join("s0_sr.pgm")).unwrap()).unwrap();
    assert!(sr.iter().all(|&v| v == 0));

    // a prediction equal to the target gives an all-zero map
    let sample = read_sample(&d.join("data/slice_0000.t2nt")).unwrap();
    let maps = write_error_maps(&d.join("self"), &sample, &sample.target_sr, Some(&sample.target_rec)).unwrap();
    assert_eq!(maps.error_scale, 0.0);
    assert_eq!(maps.files.len(), 5);
    let (w, h, err) = pgm::decode(&fs::read(d.join("self_err.pgm")).unwrap()).unwrap();
    assert_eq!((w, h), (64, 64));
    assert!(err.iter().all(|&v| v == 0));
}
