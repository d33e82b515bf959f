use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::AugmentationSpec;
use crate::error::EpisodeError;
use crate::image_buf::ImageBuf;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Val,
    Test,
}

/// How base classes (sorted by name) are partitioned into splits, and which
/// split this index should expose. Splits are disjoint by class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub take: Split,
    pub augment: AugmentationSpec,
    /// Classes with fewer base samples than this are a load error.
    pub min_samples: usize,
}

impl SplitConfig {
    /// Everything into the train split, no augmentation.
    pub fn all_train(n_classes: usize) -> Self {
        SplitConfig {
            train: n_classes,
            val: 0,
            test: 0,
            take: Split::Train,
            augment: AugmentationSpec::off(),
            min_samples: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub enum ClassSource {
    /// PNG files on disk, decoded on demand.
    Files(Vec<PathBuf>),
    /// Procedurally generated images held in memory.
    Synth(Vec<ImageBuf>),
}

impl ClassSource {
    pub fn len(&self) -> usize {
        match self {
            ClassSource::Files(v) => v.len(),
            ClassSource::Synth(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone)]
pub struct ClassRecord {
    pub name: String,
    /// Class-level 90-degree rotation count (rotation variants are classes).
    pub rot: u8,
    pub source: ClassSource,
}

/// Immutable view of one dataset split.
#[derive(Debug, Clone)]
pub struct DatasetIndex {
    pub classes: Vec<ClassRecord>,
    pub split: Split,
    /// (height, width, channels)
    pub image_shape: (usize, usize, usize),
    pub augment: AugmentationSpec,
    /// Scalar normalization statistics computed over the train split's base
    /// images (rotation variants share the pixel multiset, so base suffices).
    pub norm_mean: f32,
    pub norm_std: f32,
}

impl DatasetIndex {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn samples_in_class(&self, class: usize) -> usize {
        self.classes[class].source.len()
    }

    /// Decoded base image in [0,1], before augmentation and normalization.
    pub fn base_image(&self, class: usize, sample: usize) -> Result<ImageBuf, EpisodeError> {
        let rec = &self.classes[class];
        match &rec.source {
            ClassSource::Synth(images) => Ok(images[sample].clone()),
            ClassSource::Files(paths) => decode_png(&paths[sample], self.image_shape),
        }
    }
}

fn decode_png(path: &Path, expect: (usize, usize, usize)) -> Result<ImageBuf, EpisodeError> {
    let img = image::open(path).map_err(|e| EpisodeError::Image {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    let (h, w, c) = expect;
    if img.height() as usize != h || img.width() as usize != w {
        return Err(EpisodeError::Image {
            path: path.display().to_string(),
            detail: format!(
                "size {}x{} does not match dataset {}x{}",
                img.height(),
                img.width(),
                h,
                w
            ),
        });
    }
    let mut buf = ImageBuf::new(c, h, w);
    match c {
        1 => {
            let gray = img.to_luma8();
            for y in 0..h {
                for x in 0..w {
                    *buf.at_mut(0, y, x) = gray.get_pixel(x as u32, y as u32).0[0] as f32 / 255.0;
                }
            }
        }
        3 => {
            let rgb = img.to_rgb8();
            for y in 0..h {
                for x in 0..w {
                    let p = rgb.get_pixel(x as u32, y as u32).0;
                    for ch in 0..3 {
                        *buf.at_mut(ch, y, x) = p[ch] as f32 / 255.0;
                    }
                }
            }
        }
        other => {
            return Err(EpisodeError::Image {
                path: path.display().to_string(),
                detail: format!("unsupported channel count {}", other),
            })
        }
    }
    Ok(buf)
}

/// Shared assembly: split base classes (already sorted by name), expand
/// rotation variants, compute normalization statistics over the train
/// portion, and return the requested split's index.
pub(crate) fn assemble(
    base: Vec<(String, ClassSource)>,
    image_shape: (usize, usize, usize),
    cfg: &SplitConfig,
) -> Result<DatasetIndex, EpisodeError> {
    for (name, src) in &base {
        if src.is_empty() {
            return Err(EpisodeError::Class {
                class: name.clone(),
                detail: "no samples".into(),
            });
        }
        if src.len() < cfg.min_samples {
            return Err(EpisodeError::Class {
                class: name.clone(),
                detail: format!("{} samples, need at least {}", src.len(), cfg.min_samples),
            });
        }
    }
    let want = cfg.train + cfg.val + cfg.test;
    if want > base.len() {
        return Err(EpisodeError::Dataset(format!(
            "split wants {} classes, dataset has {}",
            want,
            base.len()
        )));
    }
    if cfg.augment.rotations_90 && image_shape.0 != image_shape.1 {
        return Err(EpisodeError::Dataset(
            "rotation augmentation needs square images".into(),
        ));
    }
    let (mean, std) = train_stats(&base[..cfg.train], image_shape)?;
    let (start, count) = match cfg.take {
        Split::Train => (0, cfg.train),
        Split::Val => (cfg.train, cfg.val),
        Split::Test => (cfg.train + cfg.val, cfg.test),
    };
    if count == 0 {
        return Err(EpisodeError::Dataset(format!(
            "requested split {:?} has zero classes",
            cfg.take
        )));
    }
    let rots: &[u8] = if cfg.augment.rotations_90 {
        &[0, 1, 2, 3]
    } else {
        &[0]
    };
    let mut classes = Vec::with_capacity(count * rots.len());
    for (name, source) in base.into_iter().skip(start).take(count) {
        for &rot in rots {
            let rname = if rot == 0 {
                name.clone()
            } else {
                format!("{}+r{}", name, rot as usize * 90)
            };
            classes.push(ClassRecord {
                name: rname,
                rot,
                source: source.clone(),
            });
        }
    }
    Ok(DatasetIndex {
        classes,
        split: cfg.take,
        image_shape,
        augment: cfg.augment,
        norm_mean: mean,
        norm_std: std,
    })
}

fn train_stats(
    train: &[(String, ClassSource)],
    image_shape: (usize, usize, usize),
) -> Result<(f32, f32), EpisodeError> {
    if train.is_empty() {
        // No train classes to measure; fall back to identity normalization.
        return Ok((0.0, 1.0));
    }
    let mut sum = 0.0f64;
    let mut sumsq = 0.0f64;
    let mut count = 0usize;
    for (_, src) in train {
        let n = src.len();
        for i in 0..n {
            let img = match src {
                ClassSource::Synth(images) => images[i].clone(),
                ClassSource::Files(paths) => decode_png(&paths[i], image_shape)?,
            };
            for &v in &img.data {
                sum += v as f64;
                sumsq += (v as f64) * (v as f64);
            }
            count += img.data.len();
        }
    }
    let mean = sum / count as f64;
    let var = (sumsq / count as f64 - mean * mean).max(0.0);
    let std = var.sqrt().max(1e-6);
    Ok((mean as f32, std as f32))
}

/// Loads a directory dataset laid out as `root/<class_name>/*.png`. Class
/// ordering is the sorted class-directory name order, so repeated loads give
/// identical indexes.
pub fn load_dataset(root: &Path, cfg: &SplitConfig) -> Result<DatasetIndex, EpisodeError> {
    if !root.is_dir() {
        return Err(EpisodeError::Dataset(format!(
            "{} is not a directory",
            root.display()
        )));
    }
    let mut class_dirs: Vec<(String, PathBuf)> = Vec::new();
    for entry in std::fs::read_dir(root)? {
        let entry = entry?;
        if entry.file_type()?.is_dir() {
            let name = entry.file_name().to_string_lossy().into_owned();
            class_dirs.push((name, entry.path()));
        }
    }
    if class_dirs.is_empty() {
        return Err(EpisodeError::Dataset(format!(
            "{} contains no class directories",
            root.display()
        )));
    }
    class_dirs.sort_by(|a, b| a.0.cmp(&b.0));
    let mut base = Vec::with_capacity(class_dirs.len());
    for (name, dir) in class_dirs {
        let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| {
                p.extension()
                    .map(|e| e.eq_ignore_ascii_case("png"))
                    .unwrap_or(false)
            })
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(EpisodeError::Class {
                class: name,
                detail: "no PNG files".into(),
            });
        }
        base.push((name, ClassSource::Files(files)));
    }
    // Dataset shape and channel count come from the first image.
    let probe_path = match &base[0].1 {
        ClassSource::Files(f) => f[0].clone(),
        ClassSource::Synth(_) => unreachable!(),
    };
    let probe = image::open(&probe_path).map_err(|e| EpisodeError::Image {
        path: probe_path.display().to_string(),
        detail: e.to_string(),
    })?;
    let channels = if probe.color().has_color() { 3 } else { 1 };
    let shape = (probe.height() as usize, probe.width() as usize, channels);
    assemble(base, shape, cfg)
}
