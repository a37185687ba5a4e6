//! Hyperspectral cube and label-raster data model, on-disk formats,
//! normalization, and a synthetic-scene generator for desk-scale runs.
//!
//! On-disk format: a `<name>.json` sidecar plus a `<name>.raw` raster.
//! Cubes are band-sequential (band outermost) little-endian `f32`; ground
//! truth is row-major little-endian `i32` with 0 meaning unlabeled.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A 3-D hyperspectral raster with values indexed `(band, row, col)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cube {
    pub bands: usize,
    pub rows: usize,
    pub cols: usize,
    pub values: Array3<f32>,
    pub name: String,
}

impl Cube {
    /// Builds a cube and checks its invariants (positive dims, matching
    /// element count, all values finite).
    pub fn new(values: Array3<f32>, name: impl Into<String>) -> Result<Self> {
        let (bands, rows, cols) = values.dim();
        if bands == 0 || rows == 0 || cols == 0 {
            return Err(Error::invalid(format!(
                "cube dimensions must be positive, got {bands}x{rows}x{cols}"
            )));
        }
        let cube = Cube {
            bands,
            rows,
            cols,
            values,
            name: name.into(),
        };
        cube.check_finite()?;
        Ok(cube)
    }

    /// Returns the first non-finite entry as an error, if any.
    pub fn check_finite(&self) -> Result<()> {
        for ((band, row, col), v) in self.values.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::NonFinite { band, row, col });
            }
        }
        Ok(())
    }

    /// Spectrum of one pixel as an owned vector of length `bands`.
    pub fn spectrum(&self, row: usize, col: usize) -> Vec<f32> {
        (0..self.bands).map(|b| self.values[[b, row, col]]).collect()
    }

    /// Per-band min-max rescale to [0, 1]. A constant band maps to all
    /// zeros. Idempotent: normalizing twice equals normalizing once exactly.
    pub fn normalize(&self) -> Cube {
        let mut out = self.values.clone();
        for mut band in out.axis_iter_mut(Axis(0)) {
            let mut lo = f32::INFINITY;
            let mut hi = f32::NEG_INFINITY;
            for &v in band.iter() {
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if hi > lo {
                let range = hi - lo;
                band.mapv_inplace(|v| (v - lo) / range);
            } else {
                band.fill(0.0);
            }
        }
        Cube {
            bands: self.bands,
            rows: self.rows,
            cols: self.cols,
            values: out,
            name: self.name.clone(),
        }
    }
}

/// Integer label raster aligned to a [`Cube`]; label 0 means unlabeled.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub rows: usize,
    pub cols: usize,
    pub labels: Array2<u32>,
    pub num_classes: u32,
    pub class_names: Option<Vec<String>>,
}

impl GroundTruth {
    pub fn new(
        labels: Array2<u32>,
        num_classes: u32,
        class_names: Option<Vec<String>>,
    ) -> Result<Self> {
        let (rows, cols) = labels.dim();
        if rows == 0 || cols == 0 {
            return Err(Error::invalid("ground truth dimensions must be positive"));
        }
        if num_classes == 0 {
            return Err(Error::invalid("num_classes must be positive"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l > num_classes) {
            return Err(Error::invalid(format!(
                "label {bad} exceeds num_classes {num_classes}"
            )));
        }
        if let Some(names) = &class_names {
            if names.len() != num_classes as usize {
                return Err(Error::invalid(format!(
                    "class_names has {} entries for {} classes",
                    names.len(),
                    num_classes
                )));
            }
        }
        Ok(GroundTruth {
            rows,
            cols,
            labels,
            num_classes,
            class_names,
        })
    }

    /// Checks spatial agreement with a cube.
    pub fn check_matches(&self, cube: &Cube) -> Result<()> {
        if self.rows != cube.rows || self.cols != cube.cols {
            return Err(Error::ShapeMismatch {
                expected: format!("{}x{}", cube.rows, cube.cols),
                actual: format!("{}x{}", self.rows, self.cols),
            });
        }
        Ok(())
    }
}

/// Parameters of the synthetic blob-tiled scene generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub rows: usize,
    pub cols: usize,
    pub bands: usize,
    pub num_classes: u32,
    /// Minimum pairwise angle between class mean spectra, radians.
    pub class_signature_separation: f64,
    pub noise_sigma: f64,
    /// Side length of the contiguous single-class tiles, pixels.
    pub region_scale: usize,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 || self.bands == 0 {
            return Err(Error::invalid("synth dimensions must be positive"));
        }
        if self.num_classes < 2 {
            return Err(Error::invalid("num_classes must be at least 2"));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::invalid("noise_sigma must be non-negative"));
        }
        if self.region_scale == 0 {
            return Err(Error::invalid("region_scale must be at least 1"));
        }
        Ok(())
    }
}

/// Draws unit-norm class signatures with pairwise angle at least
/// `separation`, by seeded rejection sampling.
fn class_signatures(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
    let cos_limit = spec.class_signature_separation.cos();
    let mut signatures: Vec<Vec<f64>> = Vec::with_capacity(spec.num_classes as usize);
    let max_attempts = 2000usize * spec.num_classes as usize;
    let mut attempts = 0;
    while signatures.len() < spec.num_classes as usize {
        if attempts >= max_attempts {
            return Err(Error::Infeasible(format!(
                "could not place {} class signatures with separation {} rad in {} bands",
                spec.num_classes, spec.class_signature_separation, spec.bands
            )));
        }
        attempts += 1;
        let mut v: Vec<f64> = (0..spec.bands)
            .map(|_| StandardNormal.sample(rng))
            .collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-9 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        let ok = signatures
            .iter()
            .all(|s| s.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() <= cos_limit);
        if ok {
            signatures.push(v);
        }
    }
    Ok(signatures)
}

/// Generates a blob-tiled scene: contiguous `region_scale`-sided single-class
/// tiles cover the raster round-robin, and each pixel spectrum is its class
/// signature plus per-band Gaussian noise. Deterministic under the seed.
pub fn synth_cube(spec: &SynthSpec) -> Result<(Cube, GroundTruth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let signatures = class_signatures(spec, &mut rng)?;

    let blob_cols = spec.cols.div_ceil(spec.region_scale);
    let mut labels = Array2::<u32>::zeros((spec.rows, spec.cols));
    for row in 0..spec.rows {
        for col in 0..spec.cols {
            let blob = (row / spec.region_scale) * blob_cols + col / spec.region_scale;
            labels[[row, col]] = (blob % spec.num_classes as usize) as u32 + 1;
        }
    }

    let mut values = Array3::<f32>::zeros((spec.bands, spec.rows, spec.cols));
    let sigma = spec.noise_sigma;
    for row in 0..spec.rows {
        for col in 0..spec.cols {
            let sig = &signatures[(labels[[row, col]] - 1) as usize];
            for band in 0..spec.bands {
                let noise: f64 = StandardNormal.sample(&mut rng);
                values[[band, row, col]] = (sig[band] + sigma * noise) as f32;
            }
        }
    }

    let cube = Cube::new(values, "synth")?;
    let gt = GroundTruth::new(labels, spec.num_classes, None)?;
    Ok((cube, gt))
}

#[derive(Serialize, Deserialize)]
struct CubeSidecar {
    bands: usize,
    rows: usize,
    cols: usize,
    dtype: String,
    order: String,
}

#[derive(Serialize, Deserialize)]
struct GtSidecar {
    rows: usize,
    cols: usize,
    dtype: String,
    order: String,
    num_classes: u32,
    class_names: Vec<String>,
}

/// Strips a trailing `.json` / `.raw` so callers may pass either the stem or
/// one of the pair's files.
fn stem_of(path: &Path) -> PathBuf {
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") | Some("raw") => path.with_extension(""),
        _ => path.to_path_buf(),
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes `<stem>.json` + `<stem>.raw` (band-sequential f32 LE).
pub fn save_cube(cube: &Cube, path: impl AsRef<Path>) -> Result<()> {
    cube.check_finite()?;
    if cube.bands == 0 || cube.rows == 0 || cube.cols == 0 {
        return Err(Error::invalid("refusing to write cube with zero dimension"));
    }
    let stem = stem_of(path.as_ref());
    let sidecar = CubeSidecar {
        bands: cube.bands,
        rows: cube.rows,
        cols: cube.cols,
        dtype: "f32le".into(),
        order: "bsq".into(),
    };
    write_file(
        &stem.with_extension("json"),
        &serde_json::to_vec(&sidecar).expect("sidecar serializes"),
    )?;
    let mut bytes = Vec::with_capacity(cube.values.len() * 4);
    for &v in cube.values.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_file(&stem.with_extension("raw"), &bytes)
}

/// Reads a `<stem>.json` + `<stem>.raw` pair written by [`save_cube`].
pub fn load_cube(path: impl AsRef<Path>) -> Result<Cube> {
    let stem = stem_of(path.as_ref());
    let sidecar_path = stem.with_extension("json");
    let raw_path = stem.with_extension("raw");
    let sidecar: CubeSidecar = serde_json::from_slice(&read_file(&sidecar_path)?)
        .map_err(|e| Error::Sidecar {
            path: sidecar_path.clone(),
            source: e,
        })?;
    if sidecar.dtype != "f32le" || sidecar.order != "bsq" {
        return Err(Error::invalid(format!(
            "unsupported cube encoding dtype={} order={}",
            sidecar.dtype, sidecar.order
        )));
    }
    let raw = read_file(&raw_path)?;
    let expected = (sidecar.bands * sidecar.rows * sidecar.cols * 4) as u64;
    if raw.len() as u64 != expected {
        return Err(Error::SizeMismatch {
            path: raw_path,
            expected,
            actual: raw.len() as u64,
        });
    }
    let values: Vec<f32> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let array = Array3::from_shape_vec((sidecar.bands, sidecar.rows, sidecar.cols), values)
        .expect("length checked above");
    let name = stem
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "cube".into());
    Cube::new(array, name)
}

/// Writes a ground-truth raster pair (row-major i32 LE).
pub fn save_gt(gt: &GroundTruth, path: impl AsRef<Path>) -> Result<()> {
    let stem = stem_of(path.as_ref());
    let sidecar = GtSidecar {
        rows: gt.rows,
        cols: gt.cols,
        dtype: "i32le".into(),
        order: "rm".into(),
        num_classes: gt.num_classes,
        class_names: gt.class_names.clone().unwrap_or_default(),
    };
    write_file(
        &stem.with_extension("json"),
        &serde_json::to_vec(&sidecar).expect("sidecar serializes"),
    )?;
    let mut bytes = Vec::with_capacity(gt.labels.len() * 4);
    for &l in gt.labels.iter() {
        bytes.extend_from_slice(&(l as i32).to_le_bytes());
    }
    write_file(&stem.with_extension("raw"), &bytes)
}

/// Reads a ground-truth raster pair written by [`save_gt`].
pub fn load_gt(path: impl AsRef<Path>) -> Result<GroundTruth> {
    let stem = stem_of(path.as_ref());
    let sidecar_path = stem.with_extension("json");
    let raw_path = stem.with_extension("raw");
    let sidecar: GtSidecar = serde_json::from_slice(&read_file(&sidecar_path)?)
        .map_err(|e| Error::Sidecar {
            path: sidecar_path.clone(),
            source: e,
        })?;
    if sidecar.dtype != "i32le" || sidecar.order != "rm" {
        return Err(Error::invalid(format!(
            "unsupported ground-truth encoding dtype={} order={}",
            sidecar.dtype, sidecar.order
        )));
    }
    let raw = read_file(&raw_path)?;
    let expected = (sidecar.rows * sidecar.cols * 4) as u64;
    if raw.len() as u64 != expected {
        return Err(Error::SizeMismatch {
            path: raw_path,
            expected,
            actual: raw.len() as u64,
        });
    }
    let mut labels = Vec::with_capacity(sidecar.rows * sidecar.cols);
    for c in raw.chunks_exact(4) {
        let v = i32::from_le_bytes([c[0], c[1], c[2], c[3]]);
        if v < 0 {
            return Err(Error::invalid(format!("negative label {v} in raster")));
        }
        labels.push(v as u32);
    }
    let array = Array2::from_shape_vec((sidecar.rows, sidecar.cols), labels)
        .expect("length checked above");
    let class_names = if sidecar.class_names.is_empty() {
        None
    } else {
        Some(sidecar.class_names)
    };
    GroundTruth::new(array, sidecar.num_classes, class_names)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr3;
    use proptest::prelude::*;
    use tempfile::tempdir;

    fn toy_cube() -> Cube {
        // 2 bands, 1 row, 2 cols: [0, 1 | 2, 3]
        Cube::new(arr3(&[[[0.0f32, 1.0]], [[2.0, 3.0]]]), "toy").unwrap()
    }

    #[test]
    fn roundtrip_identity() {
        let dir = tempdir().unwrap();
        let cube = toy_cube();
        let path = dir.path().join("toy");
        save_cube(&cube, &path).unwrap();
        let loaded = load_cube(&path).unwrap();
        assert_eq!(cube, loaded);
    }

    #[test]
    fn size_mismatch_reported() {
        let dir = tempdir().unwrap();
        let cube = toy_cube();
        let path = dir.path().join("toy");
        save_cube(&cube, &path).unwrap();
        // Claim 3 bands in the sidecar while the raster holds 2 bands + 4 extra bytes.
        let sidecar = r#"{"bands":3,"rows":1,"cols":2,"dtype":"f32le","order":"bsq"}"#;
        std::fs::write(path.with_extension("json"), sidecar).unwrap();
        let mut raw = std::fs::read(path.with_extension("raw")).unwrap();
        raw.extend_from_slice(&[0u8; 4]);
        std::fs::write(path.with_extension("raw"), raw).unwrap();
        let err = load_cube(&path).unwrap_err();
        assert!(err.to_string().contains("size mismatch"), "{err}");
    }

    #[test]
    fn nan_rejected_with_index() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad");
        let cube = toy_cube();
        save_cube(&cube, &path).unwrap();
        // Poison the value at (band 1, row 0, col 1) = last element.
        let mut raw = std::fs::read(path.with_extension("raw")).unwrap();
        let n = raw.len();
        raw[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        std::fs::write(path.with_extension("raw"), raw).unwrap();
        let err = load_cube(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("band 1") && msg.contains("row 0") && msg.contains("col 1"), "{msg}");
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_cube("/nonexistent/cube").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn zero_dimension_rejected_before_write() {
        let values = Array3::<f32>::zeros((1, 1, 1));
        let mut cube = Cube::new(values, "z").unwrap();
        cube.rows = 0;
        cube.values = Array3::zeros((1, 0, 1));
        let err = save_cube(&cube, "/tmp/should-not-exist-knowcl");
        assert!(err.is_err());
    }

    #[test]
    fn single_value_bytes_exact() {
        let dir = tempdir().unwrap();
        let cube = Cube::new(arr3(&[[[0.5f32]]]), "one").unwrap();
        let path = dir.path().join("one");
        save_cube(&cube, &path).unwrap();
        let raw = std::fs::read(path.with_extension("raw")).unwrap();
        assert_eq!(raw, vec![0x00, 0x00, 0x00, 0x3F]);
    }

    #[test]
    fn normalize_analytic_band() {
        let cube = Cube::new(arr3(&[[[2.0f32, 4.0, 6.0]]]), "n").unwrap();
        let out = cube.normalize();
        assert_eq!(out.values.as_slice().unwrap(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn normalize_constant_band_to_zeros() {
        let cube = Cube::new(arr3(&[[[7.0f32, 7.0, 7.0]]]), "c").unwrap();
        let out = cube.normalize();
        assert_eq!(out.values.as_slice().unwrap(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn normalize_idempotent_exactly() {
        let (cube, _) = synth_cube(&SynthSpec {
            rows: 8,
            cols: 8,
            bands: 6,
            num_classes: 3,
            class_signature_separation: 0.4,
            noise_sigma: 0.2,
            region_scale: 4,
            seed: 11,
        })
        .unwrap();
        let once = cube.normalize();
        let twice = once.normalize();
        assert_eq!(once, twice);
    }

    #[test]
    fn normalize_band_extremes() {
        let (cube, _) = synth_cube(&SynthSpec {
            rows: 6,
            cols: 5,
            bands: 4,
            num_classes: 2,
            class_signature_separation: 0.3,
            noise_sigma: 0.1,
            region_scale: 2,
            seed: 3,
        })
        .unwrap();
        let out = cube.normalize();
        for band in out.values.axis_iter(Axis(0)) {
            let lo = band.iter().cloned().fold(f32::INFINITY, f32::min);
            let hi = band.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            assert_eq!(lo, 0.0);
            assert_eq!(hi, 1.0);
        }
    }

    #[test]
    fn synth_deterministic_under_seed() {
        let spec = SynthSpec {
            rows: 10,
            cols: 12,
            bands: 8,
            num_classes: 3,
            class_signature_separation: 0.5,
            noise_sigma: 0.05,
            region_scale: 4,
            seed: 42,
        };
        let (c1, g1) = synth_cube(&spec).unwrap();
        let (c2, g2) = synth_cube(&spec).unwrap();
        assert_eq!(c1, c2);
        assert_eq!(g1, g2);
    }

    #[test]
    fn synth_zero_noise_constant_within_class() {
        let spec = SynthSpec {
            rows: 8,
            cols: 8,
            bands: 5,
            num_classes: 2,
            class_signature_separation: 0.5,
            noise_sigma: 0.0,
            region_scale: 4,
            seed: 9,
        };
        let (cube, gt) = synth_cube(&spec).unwrap();
        for class in 1..=2u32 {
            let mut reference: Option<Vec<f32>> = None;
            for row in 0..8 {
                for col in 0..8 {
                    if gt.labels[[row, col]] == class {
                        let s = cube.spectrum(row, col);
                        match &reference {
                            None => reference = Some(s),
                            Some(r) => assert_eq!(r, &s),
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn synth_blob_tiling_counts() {
        let spec = SynthSpec {
            rows: 64,
            cols: 64,
            bands: 32,
            num_classes: 4,
            class_signature_separation: 0.5,
            noise_sigma: 0.05,
            region_scale: 16,
            seed: 7,
        };
        let (_, gt) = synth_cube(&spec).unwrap();
        let mut counts = [0usize; 5];
        for &l in gt.labels.iter() {
            counts[l as usize] += 1;
        }
        assert_eq!(counts[0], 0);
        for class in 1..=4 {
            assert_eq!(counts[class], 1024, "class {class}");
        }
    }

    #[test]
    fn synth_signature_separation_holds() {
        let spec = SynthSpec {
            rows: 4,
            cols: 4,
            bands: 16,
            num_classes: 5,
            class_signature_separation: 0.6,
            noise_sigma: 0.0,
            region_scale: 1,
            seed: 5,
        };
        let (cube, gt) = synth_cube(&spec).unwrap();
        // With zero noise each pixel is its class signature; collect one per class.
        let mut sigs: Vec<Vec<f32>> = vec![Vec::new(); 5];
        for row in 0..4 {
            for col in 0..4 {
                let c = gt.labels[[row, col]] as usize - 1;
                if sigs[c].is_empty() {
                    sigs[c] = cube.spectrum(row, col);
                }
            }
        }
        let limit = 0.6f64.cos() + 1e-6;
        for i in 0..5 {
            for j in (i + 1)..5 {
                if sigs[i].is_empty() || sigs[j].is_empty() {
                    continue;
                }
                let dot: f64 = sigs[i]
                    .iter()
                    .zip(&sigs[j])
                    .map(|(a, b)| *a as f64 * *b as f64)
                    .sum();
                assert!(dot <= limit, "classes {i},{j} cosine {dot}");
            }
        }
    }

    #[test]
    fn synth_infeasible_separation_errors() {
        let spec = SynthSpec {
            rows: 4,
            cols: 4,
            bands: 2,
            num_classes: 8,
            class_signature_separation: 1.5,
            noise_sigma: 0.0,
            region_scale: 1,
            seed: 1,
        };
        assert!(matches!(synth_cube(&spec), Err(Error::Infeasible(_))));
    }

    #[test]
    fn gt_roundtrip_with_names() {
        let dir = tempdir().unwrap();
        let gt = GroundTruth::new(
            Array2::from_shape_vec((2, 2), vec![0u32, 1, 2, 1]).unwrap(),
            2,
            Some(vec!["water".into(), "soil".into()]),
        )
        .unwrap();
        let path = dir.path().join("gt");
        save_gt(&gt, &path).unwrap();
        assert_eq!(load_gt(&path).unwrap(), gt);
    }

    proptest! {
        #[test]
        fn prop_cube_roundtrip(bands in 1usize..4, rows in 1usize..5, cols in 1usize..5, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let values: Vec<f32> = (0..bands * rows * cols)
                .map(|_| StandardNormal.sample(&mut rng))
                .map(|v: f64| v as f32)
                .collect();
            let cube = Cube::new(Array3::from_shape_vec((bands, rows, cols), values).unwrap(), "p").unwrap();
            let dir = tempdir().unwrap();
            let path = dir.path().join("p");
            save_cube(&cube, &path).unwrap();
            let loaded = load_cube(&path).unwrap();
            prop_assert_eq!(cube, loaded);
        }
    }
}
