//! On-disk dataset: `slice_NNNN.t2nt` (arrays `input_lr`, `target_rec`,
//! `target_sr`) plus a `slice_NNNN.meta` sidecar with mask metadata, and a
//! `manifest.txt` listing the seed of every slice.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{generate_phantom, make_cartesian_mask, make_sample, CartesianMask, MriError, PhantomSpec, Result, SampleTriple};
use crate::checkpoint;
use crate::sidecar::KvDoc;

pub const MANIFEST: &str = "manifest.txt";

fn with_ext(stem: &Path, ext: &str) -> PathBuf {
    let mut p = stem.as_os_str().to_owned();
    p.push(ext);
    PathBuf::from(p)
}

/// Sidecar path for a sample array file (`x.t2nt` -> `x.meta`).
pub fn meta_path(sample: &Path) -> PathBuf {
    sample.with_extension("meta")
}

/// Writes `<stem>.t2nt` and `<stem>.meta`; returns the array file path.
pub fn write_sample(stem: &Path, sample: &SampleTriple) -> Result<PathBuf> {
    let arrays = vec![
        ("input_lr".to_string(), sample.input_lr.clone()),
        ("target_rec".to_string(), sample.target_rec.clone()),
        ("target_sr".to_string(), sample.target_sr.clone()),
    ];
    let path = with_ext(stem, ".t2nt");
    checkpoint::save(&path, &arrays)?;
    let m = &sample.mask;
    let columns: String = m.sampled.iter().map(|&s| if s { '1' } else { '0' }).collect();
    let mut doc = KvDoc::new();
    doc.set("width", m.width)
        .set("acceleration", m.acceleration)
        .set("center_fraction", m.center_fraction)
        .set("seed", m.seed)
        .set("scale", sample.scale)
        .set("columns", columns);
    doc.save(meta_path(&path))?;
    Ok(path)
}

pub fn read_sample(path: &Path) -> Result<SampleTriple> {
    let arrays = checkpoint::load(path)?;
    let take = |name: &str| {
        arrays
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t.clone())
            .ok_or_else(|| MriError::Format(format!("{}: missing array `{name}`", path.display())))
    };
    let (input_lr, target_rec, target_sr) = (take("input_lr")?, take("target_rec")?, take("target_sr")?);
    let doc = KvDoc::load(meta_path(path))?;
    let width: usize = doc.require("width")?;
    let acceleration: f64 = doc.require("acceleration")?;
    let center_fraction: f64 = doc.require("center_fraction")?;
    let seed: u64 = doc.require("seed")?;
    let scale: usize = doc.require("scale")?;
    let sampled = match doc.get("columns") {
        Some(cols) => cols.chars().map(|c| c == '1').collect(),
        None => make_cartesian_mask(width, acceleration, center_fraction, seed)?.sampled,
    };
    if sampled.len() != width {
        return Err(MriError::Format(format!("{}: mask columns disagree with width", path.display())));
    }
    let expect_hr = [input_lr.shape()[2] * scale, input_lr.shape()[3] * scale];
    if target_sr.shape()[2..] != expect_hr || target_rec.shape() != input_lr.shape() {
        return Err(MriError::Format(format!("{}: inconsistent image shapes", path.display())));
    }
    Ok(SampleTriple {
        input_lr,
        target_rec,
        target_sr,
        scale,
        mask: CartesianMask {
            width,
            sampled,
            acceleration,
            center_fraction,
            seed,
        },
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenConfig {
    pub slices: usize,
    pub size: usize,
    pub scale: usize,
    pub acceleration: f64,
    pub center_fraction: f64,
    pub num_ellipses: usize,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            slices: 16,
            size: 64,
            scale: 2,
            acceleration: 6.0,
            center_fraction: 0.0625,
            num_ellipses: 10,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.size.is_power_of_two() || self.size < 16 {
            return Err(MriError::Parameter(format!("size {} must be a power of two >= 16", self.size)));
        }
        if !self.scale.is_power_of_two() || !self.size.is_multiple_of(self.scale) || self.size / self.scale < 2 {
            return Err(MriError::Parameter(format!(
                "scale {} must be a power of two dividing size {}",
                self.scale, self.size
            )));
        }
        // surfaces infeasible mask parameters before anything is written
        make_cartesian_mask(self.size, self.acceleration, self.center_fraction, 0)?;
        Ok(())
    }

    /// Per-slice seeds derived from the base seed.
    pub fn slice_seeds(&self) -> Vec<u64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.slices).map(|_| rng.next_u64()).collect()
    }

    pub fn make_slice(&self, slice_seed: u64) -> Result<SampleTriple> {
        let hr = generate_phantom(&PhantomSpec::new(self.size, self.num_ellipses, slice_seed))?;
        let mask = make_cartesian_mask(self.size, self.acceleration, self.center_fraction, slice_seed)?;
        make_sample(&hr, &mask, self.scale)
    }

    /// Generates every slice in memory.
    pub fn generate(&self) -> Result<Vec<SampleTriple>> {
        self.validate()?;
        self.slice_seeds().into_iter().map(|s| self.make_slice(s)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub config: GenConfig,
    pub files: Vec<String>,
    pub seeds: Vec<u64>,
}

impl Manifest {
    fn to_doc(&self) -> KvDoc {
        let c = &self.config;
        let mut doc = KvDoc::new();
        doc.set("slices", c.slices)
            .set("size", c.size)
            .set("scale", c.scale)
            .set("acceleration", c.acceleration)
            .set("center_fraction", c.center_fraction)
            .set("ellipses", c.num_ellipses)
            .set("seed", c.seed);
        for (f, s) in self.files.iter().zip(&self.seeds) {
            doc.set(f, s);
        }
        doc
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let doc = KvDoc::load(dir.join(MANIFEST))?;
        let config = GenConfig {
            slices: doc.require("slices")?,
            size: doc.require("size")?,
            scale: doc.require("scale")?,
            acceleration: doc.require("acceleration")?,
            center_fraction: doc.require("center_fraction")?,
            num_ellipses: doc.require("ellipses")?,
            seed: doc.require("seed")?,
        };
        let mut files = Vec::new();
        let mut seeds = Vec::new();
        for (k, _) in doc.entries().iter().filter(|(k, _)| k.ends_with(".t2nt")) {
            files.push(k.clone());
            seeds.push(doc.require(k)?);
        }
        if files.len() != config.slices {
            return Err(MriError::Format(format!(
                "manifest lists {} files but declares {} slices",
                files.len(),
                config.slices
            )));
        }
        Ok(Manifest { config, files, seeds })
    }
}

/// Writes a full dataset directory and its manifest.
pub fn generate_dataset(dir: &Path, cfg: &GenConfig) -> Result<Manifest> {
    cfg.validate()?;
    fs::create_dir_all(dir)?;
    let seeds = cfg.slice_seeds();
    let mut files = Vec::with_capacity(seeds.len());
    for (i, &seed) in seeds.iter().enumerate() {
        let name = format!("slice_{i:04}");
        write_sample(&dir.join(&name), &cfg.make_slice(seed)?)?;
        files.push(format!("{name}.t2nt"));
    }
    let manifest = Manifest {
        config: cfg.clone(),
        files,
        seeds,
    };
    manifest.to_doc().save(dir.join(MANIFEST))?;
    Ok(manifest)
}

pub fn load_dataset(dir: &Path) -> Result<(Manifest, Vec<SampleTriple>)> {
    let manifest = Manifest::load(dir)?;
    let samples = manifest
        .files
        .iter()
        .map(|f| read_sample(&dir.join(f)))
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, samples))
}
