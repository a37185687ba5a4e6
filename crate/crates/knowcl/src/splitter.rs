//! Disjoint train/test pixel splits.
//!
//! Instead of random pixel sampling, a fixed proportion of each class is
//! taken contiguously in row-major scan order (top to bottom), so training
//! selections stay spatially contiguous and never interleave with test
//! pixels of the same class.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::datacube::GroundTruth;
use crate::error::{Error, Result};

/// One labeled pixel, `label` is 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LabeledPixel {
    pub row: u32,
    pub col: u32,
    pub label: u32,
}

/// Disjoint train/test pixel sets over all labeled pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<LabeledPixel>,
    pub test: Vec<LabeledPixel>,
}

/// Per-class training proportion in (0, 1].
#[derive(Debug, Clone, PartialEq)]
pub enum SplitRatio {
    Global(f64),
    PerClass(BTreeMap<u32, f64>),
}

impl SplitRatio {
    fn for_class(&self, class: u32) -> Result<f64> {
        let r = match self {
            SplitRatio::Global(r) => *r,
            SplitRatio::PerClass(map) => *map
                .get(&class)
                .ok_or_else(|| Error::invalid(format!("no ratio given for class {class}")))?,
        };
        if r <= 0.0 || r > 1.0 {
            return Err(Error::invalid(format!(
                "ratio for class {class} must be in (0, 1], got {r}"
            )));
        }
        Ok(r)
    }
}

/// Number of training pixels for a class: round-half-up of `ratio * n`.
pub fn train_count(ratio: f64, n: usize) -> usize {
    (ratio * n as f64).round() as usize
}

/// Splits every labeled pixel into train/test: per class, the first
/// `round(ratio * n)` pixels in row-major scan order become training
/// samples, the rest test. Deterministic, no randomness.
pub fn split_disjoint(gt: &GroundTruth, ratio: &SplitRatio) -> Result<Split> {
    let k = gt.num_classes;
    let mut per_class: Vec<Vec<LabeledPixel>> = vec![Vec::new(); k as usize];
    for ((row, col), &label) in gt.labels.indexed_iter() {
        if label > 0 {
            per_class[(label - 1) as usize].push(LabeledPixel {
                row: row as u32,
                col: col as u32,
                label,
            });
        }
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in 1..=k {
        let pixels = &per_class[(class - 1) as usize];
        if pixels.is_empty() {
            return Err(Error::EmptyClass { class });
        }
        let r = ratio.for_class(class)?;
        let n_train = train_count(r, pixels.len());
        train.extend_from_slice(&pixels[..n_train]);
        test.extend_from_slice(&pixels[n_train..]);
    }
    Ok(Split { train, test })
}

/// Exact per-class pixel counts; unlabeled (label 0) counted separately.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassCounts {
    /// `labeled[c - 1]` is the pixel count of class `c`.
    pub labeled: Vec<usize>,
    pub unlabeled: usize,
}

pub fn class_counts(gt: &GroundTruth) -> ClassCounts {
    let mut labeled = vec![0usize; gt.num_classes as usize];
    let mut unlabeled = 0usize;
    for &l in gt.labels.iter() {
        if l == 0 {
            unlabeled += 1;
        } else {
            labeled[(l - 1) as usize] += 1;
        }
    }
    ClassCounts { labeled, unlabeled }
}

/// Writes the split manifest: a `train` header, one `row,col,label` line per
/// training pixel, then a `test` header and its lines.
pub fn save_split(split: &Split, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    out.push_str("train\n");
    for p in &split.train {
        writeln!(out, "{},{},{}", p.row, p.col, p.label).expect("string write");
    }
    out.push_str("test\n");
    for p in &split.test {
        writeln!(out, "{},{},{}", p.row, p.col, p.label).expect("string write");
    }
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a split manifest and re-checks train/test disjointness.
pub fn load_split(path: impl AsRef<Path>) -> Result<Split> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut section: Option<bool> = None; // Some(true) = train
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        match line {
            "train" => section = Some(true),
            "test" => section = Some(false),
            _ => {
                let is_train = section.ok_or_else(|| {
                    Error::invalid(format!("manifest line {} before any section", lineno + 1))
                })?;
                let mut it = line.split(',');
                let mut next = |field: &str| -> Result<u32> {
                    it.next()
                        .ok_or_else(|| {
                            Error::invalid(format!("manifest line {}: missing {field}", lineno + 1))
                        })?
                        .trim()
                        .parse::<u32>()
                        .map_err(|e| Error::invalid(format!("manifest line {}: {e}", lineno + 1)))
                };
                let p = LabeledPixel {
                    row: next("row")?,
                    col: next("col")?,
                    label: next("label")?,
                };
                if p.label == 0 {
                    return Err(Error::invalid(format!(
                        "manifest line {}: label 0 is unlabeled",
                        lineno + 1
                    )));
                }
                if is_train {
                    train.push(p);
                } else {
                    test.push(p);
                }
            }
        }
    }
    let train_coords: std::collections::HashSet<(u32, u32)> =
        train.iter().map(|p| (p.row, p.col)).collect();
    if let Some(p) = test.iter().find(|p| train_coords.contains(&(p.row, p.col))) {
        return Err(Error::invalid(format!(
            "manifest not disjoint: ({}, {}) appears in both train and test",
            p.row, p.col
        )));
    }
    Ok(Split { train, test })
}
