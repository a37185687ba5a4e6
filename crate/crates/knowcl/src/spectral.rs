//! Spectral grouping and per-group PCA reduction.
//!
//! The band axis is halved into two groups that act as two observations of
//! the same scene; each group is then reduced to its leading principal
//! components before patch extraction.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, Array3, Axis, s};
use serde::{Deserialize, Serialize};

use crate::datacube::Cube;
use crate::error::{Error, Result};

/// Principal-component model fitted on the pixels of one spectral group.
///
/// `components` rows are orthonormal and ordered by decreasing
/// `explained_variance`; the largest-magnitude entry of each row is
/// positive, which pins the otherwise arbitrary sign.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Array1<f64>,
    pub components: Array2<f64>,
    pub explained_variance: Vec<f64>,
}

impl PcaModel {
    pub fn input_bands(&self) -> usize {
        self.components.ncols()
    }

    pub fn n_components(&self) -> usize {
        self.components.nrows()
    }

    /// Max-abs deviation of `components * componentsᵀ` from the identity.
    pub fn orthonormality_deviation(&self) -> f64 {
        let gram = self.components.dot(&self.components.t());
        let mut worst = 0.0f64;
        for ((i, j), v) in gram.indexed_iter() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((v - target).abs());
        }
        worst
    }
}

/// The two spectral halves of a cube.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedCube {
    pub group_a: Cube,
    pub group_b: Cube,
}

/// Halves the band axis: group A takes bands `[0, ceil(C/2))`, group B the
/// rest. Requires at least two bands.
pub fn group_bands(cube: &Cube) -> Result<GroupedCube> {
    if cube.bands < 2 {
        return Err(Error::invalid(
            "band grouping requires a cube with at least 2 bands",
        ));
    }
    let half = cube.bands.div_ceil(2);
    let a = cube.values.slice(s![..half, .., ..]).to_owned();
    let b = cube.values.slice(s![half.., .., ..]).to_owned();
    Ok(GroupedCube {
        group_a: Cube::new(a, format!("{}::a", cube.name))?,
        group_b: Cube::new(b, format!("{}::b", cube.name))?,
    })
}

/// Eigendecomposition of a symmetric matrix by the cyclic Jacobi method.
/// Returns (eigenvalues, eigenvectors-as-columns), unsorted.
fn jacobi_eigen(mut a: Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let n = a.nrows();
    let mut v = Array2::<f64>::eye(n);
    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[[p, q]] * a[[p, q]];
            }
        }
        if off.sqrt() < 1e-14 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[[p, q]];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    1.0 / (theta - (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[[p, k]];
                    let aqk = a[[q, k]];
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    let eigenvalues = (0..n).map(|i| a[[i, i]]).collect();
    (eigenvalues, v)
}

/// Fits PCA over all pixels of a cube: per-band mean, covariance with the
/// 1/(n-1) estimator accumulated in f64, top eigenvectors by decreasing
/// eigenvalue.
pub fn fit_pca(cube: &Cube, n_components: usize) -> Result<PcaModel> {
    fit_pca_on_pixels(cube, n_components, None)
}

/// Like [`fit_pca`] but restricted to the given pixel coordinates
/// (used when the PCA basis must be fitted on training pixels only).
pub fn fit_pca_on_pixels(
    cube: &Cube,
    n_components: usize,
    pixels: Option<&[(u32, u32)]>,
) -> Result<PcaModel> {
    let bands = cube.bands;
    if n_components == 0 || n_components > bands {
        return Err(Error::invalid(format!(
            "n_components {n_components} out of range for {bands} bands"
        )));
    }
    let spectra: Vec<Vec<f64>> = match pixels {
        None => {
            let mut all = Vec::with_capacity(cube.rows * cube.cols);
            for r in 0..cube.rows {
                for c in 0..cube.cols {
                    all.push((0..bands).map(|b| cube.values[[b, r, c]] as f64).collect());
                }
            }
            all
        }
        Some(coords) => coords
            .iter()
            .map(|&(r, c)| {
                (0..bands)
                    .map(|b| cube.values[[b, r as usize, c as usize]] as f64)
                    .collect()
            })
            .collect(),
    };
    let n_pix = spectra.len();
    if n_pix < n_components + 1 {
        return Err(Error::invalid(format!(
            "need at least {} pixels to fit {} components, got {}",
            n_components + 1,
            n_components,
            n_pix
        )));
    }

    let mut mean = vec![0.0f64; bands];
    for s in &spectra {
        for (m, x) in mean.iter_mut().zip(s) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n_pix as f64;
    }

    let mut cov = Array2::<f64>::zeros((bands, bands));
    let mut centered = vec![0.0f64; bands];
    for s in &spectra {
        for b in 0..bands {
            centered[b] = s[b] - mean[b];
        }
        for i in 0..bands {
            let ci = centered[i];
            for j in i..bands {
                cov[[i, j]] += ci * centered[j];
            }
        }
    }
    let denom = (n_pix - 1) as f64;
    for i in 0..bands {
        for j in i..bands {
            let v = cov[[i, j]] / denom;
            cov[[i, j]] = v;
            cov[[j, i]] = v;
        }
    }

    let (eigenvalues, vectors) = jacobi_eigen(cov);
    let mut order: Vec<usize> = (0..bands).collect();
    order.sort_by(|&i, &j| {
        eigenvalues[j]
            .partial_cmp(&eigenvalues[i])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });

    let mut components = Array2::<f64>::zeros((n_components, bands));
    let mut explained = Vec::with_capacity(n_components);
    for (row, &idx) in order.iter().take(n_components).enumerate() {
        explained.push(eigenvalues[idx].max(0.0));
        let mut comp: Vec<f64> = vectors.column(idx).to_vec();
        // Sign convention: make the largest-magnitude entry positive.
        let mut best = 0usize;
        for (i, v) in comp.iter().enumerate() {
            if v.abs() > comp[best].abs() {
                best = i;
            }
        }
        if comp[best] < 0.0 {
            comp.iter_mut().for_each(|v| *v = -*v);
        }
        components.row_mut(row).assign(&Array1::from(comp));
    }

    Ok(PcaModel {
        mean: Array1::from(mean),
        components,
        explained_variance: explained,
    })
}

/// Projects a cube onto a fitted PCA basis: per pixel,
/// `out = components · (pixel - mean)`. Output has `n_components` bands.
pub fn apply_pca(model: &PcaModel, cube: &Cube) -> Result<Cube> {
    if cube.bands != model.input_bands() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} bands", model.input_bands()),
            actual: format!("{} bands", cube.bands),
        });
    }
    let n_pix = cube.rows * cube.cols;
    let mut data = Array2::<f64>::zeros((cube.bands, n_pix));
    for ((b, r, c), &v) in cube.values.indexed_iter() {
        data[[b, r * cube.cols + c]] = v as f64 - model.mean[b];
    }
    let projected = model.components.dot(&data);
    let mut out = Array3::<f32>::zeros((model.n_components(), cube.rows, cube.cols));
    for ((comp, pix), &v) in projected.indexed_iter() {
        out[[comp, pix / cube.cols, pix % cube.cols]] = v as f32;
    }
    Cube::new(out, format!("{}::pca", cube.name))
}

#[derive(Serialize, Deserialize)]
struct PcaSidecar {
    input_bands: usize,
    n_components: usize,
    dtype: String,
    explained_variance: Vec<f64>,
}

/// Persists the model as `<stem>.json` (dims + explained variance) plus
/// `<stem>.raw` holding the mean then the component rows as f32 LE.
pub fn save_pca(model: &PcaModel, path: impl AsRef<Path>) -> Result<()> {
    let stem = path.as_ref().with_extension("");
    let sidecar = PcaSidecar {
        input_bands: model.input_bands(),
        n_components: model.n_components(),
        dtype: "f32le".into(),
        explained_variance: model.explained_variance.clone(),
    };
    let json_path = stem.with_extension("json");
    if let Some(parent) = json_path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(
        &json_path,
        serde_json::to_vec(&sidecar).expect("sidecar serializes"),
    )
    .map_err(|e| Error::io(&json_path, e))?;
    let mut bytes = Vec::with_capacity((model.input_bands() * (model.n_components() + 1)) * 4);
    for &v in model.mean.iter() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    for &v in model.components.iter() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let raw_path = stem.with_extension("raw");
    fs::write(&raw_path, bytes).map_err(|e| Error::io(&raw_path, e))
}

/// Loads a model written by [`save_pca`]. Values round through f32.
pub fn load_pca(path: impl AsRef<Path>) -> Result<PcaModel> {
    let stem = path.as_ref().with_extension("");
    let json_path = stem.with_extension("json");
    let sidecar: PcaSidecar = serde_json::from_slice(
        &fs::read(&json_path).map_err(|e| Error::io(&json_path, e))?,
    )
    .map_err(|e| Error::Sidecar {
        path: json_path.clone(),
        source: e,
    })?;
    let raw_path = stem.with_extension("raw");
    let raw = fs::read(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
    let expected = ((sidecar.n_components + 1) * sidecar.input_bands * 4) as u64;
    if raw.len() as u64 != expected {
        return Err(Error::SizeMismatch {
            path: raw_path,
            expected,
            actual: raw.len() as u64,
        });
    }
    let floats: Vec<f64> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let (mean_part, comp_part) = floats.split_at(sidecar.input_bands);
    Ok(PcaModel {
        mean: Array1::from(mean_part.to_vec()),
        components: Array2::from_shape_vec(
            (sidecar.n_components, sidecar.input_bands),
            comp_part.to_vec(),
        )
        .expect("length checked above"),
        explained_variance: sidecar.explained_variance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datacube::{synth_cube, SynthSpec};
    use ndarray::arr3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cube(bands: usize, rows: usize, cols: usize, seed: u64) -> Cube {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values: Vec<f32> = (0..bands * rows * cols)
            .map(|_| rng.gen_range(-1.0f32..1.0))
            .collect();
        Cube::new(
            Array3::from_shape_vec((bands, rows, cols), values).unwrap(),
            "rand",
        )
        .unwrap()
    }

    #[test]
    fn grouping_even_and_odd() {
        let cube = random_cube(4, 2, 2, 0);
        let g = group_bands(&cube).unwrap();
        assert_eq!(g.group_a.bands, 2);
        assert_eq!(g.group_b.bands, 2);

        let cube = random_cube(5, 2, 2, 1);
        let g = group_bands(&cube).unwrap();
        assert_eq!(g.group_a.bands, 3);
        assert_eq!(g.group_b.bands, 2);
    }

    #[test]
    fn grouping_concat_reconstructs() {
        let cube = random_cube(5, 3, 4, 2);
        let g = group_bands(&cube).unwrap();
        for b in 0..5 {
            for r in 0..3 {
                for c in 0..4 {
                    let v = if b < 3 {
                        g.group_a.values[[b, r, c]]
                    } else {
                        g.group_b.values[[b - 3, r, c]]
                    };
                    assert_eq!(v, cube.values[[b, r, c]]);
                }
            }
        }
    }

    #[test]
    fn grouping_single_band_rejected() {
        let cube = random_cube(1, 2, 2, 3);
        assert!(group_bands(&cube).is_err());
    }

    #[test]
    fn pca_degenerate_single_axis() {
        // All spectra lie on span{e1}: values vary only in band 0.
        let values = arr3(&[
            [[1.0f32, -2.0], [3.0, 0.5]],
            [[0.0, 0.0], [0.0, 0.0]],
            [[0.0, 0.0], [0.0, 0.0]],
        ]);
        let cube = Cube::new(values, "axis").unwrap();
        let model = fit_pca(&cube, 1).unwrap();
        let comp = model.components.row(0);
        assert!((comp[0] - 1.0).abs() < 1e-9, "sign rule forces +e1, got {comp}");
        assert!(comp[1].abs() < 1e-9 && comp[2].abs() < 1e-9);
        // Total variance lives on that axis.
        let xs: Vec<f64> = vec![1.0, -2.0, 3.0, 0.5];
        let m: f64 = xs.iter().sum::<f64>() / 4.0;
        let var: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 3.0;
        assert!((model.explained_variance[0] - var).abs() < 1e-9);
    }

    #[test]
    fn pca_full_rank_roundtrip() {
        let cube = random_cube(6, 5, 5, 4);
        let model = fit_pca(&cube, 6).unwrap();
        assert!(model.orthonormality_deviation() < 1e-10);
        // Project then back-project reconstructs centered data.
        let projected = apply_pca(&model, &cube).unwrap();
        for r in 0..5 {
            for c in 0..5 {
                let y: Vec<f64> = (0..6).map(|b| projected.values[[b, r, c]] as f64).collect();
                for b in 0..6 {
                    let recon: f64 = (0..6).map(|k| model.components[[k, b]] * y[k]).sum();
                    let centered = cube.values[[b, r, c]] as f64 - model.mean[b];
                    assert!(
                        (recon - centered).abs() < 1e-4,
                        "band {b} at ({r},{c}): {recon} vs {centered}"
                    );
                }
            }
        }
    }

    #[test]
    fn pca_matches_dense_eigendecomposition_oracle() {
        let cube = random_cube(6, 5, 5, 5);
        let model = fit_pca(&cube, 6).unwrap();

        // Independent oracle: dense symmetric eigendecomposition from nalgebra.
        let bands = 6;
        let n_pix = 25;
        let mut mean = vec![0.0f64; bands];
        for r in 0..5 {
            for c in 0..5 {
                for b in 0..bands {
                    mean[b] += cube.values[[b, r, c]] as f64;
                }
            }
        }
        mean.iter_mut().for_each(|m| *m /= n_pix as f64);
        let mut cov = nalgebra::DMatrix::<f64>::zeros(bands, bands);
        for r in 0..5 {
            for c in 0..5 {
                let x: Vec<f64> = (0..bands)
                    .map(|b| cube.values[[b, r, c]] as f64 - mean[b])
                    .collect();
                for i in 0..bands {
                    for j in 0..bands {
                        cov[(i, j)] += x[i] * x[j];
                    }
                }
            }
        }
        cov /= (n_pix - 1) as f64;
        let eig = nalgebra::SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..bands).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].partial_cmp(&eig.eigenvalues[i]).unwrap());

        for (row, &idx) in order.iter().enumerate() {
            assert!(
                (model.explained_variance[row] - eig.eigenvalues[idx]).abs() < 1e-6,
                "eigenvalue {row}"
            );
            let oracle: Vec<f64> = eig.eigenvectors.column(idx).iter().cloned().collect();
            let mine: Vec<f64> = model.components.row(row).to_vec();
            let dot: f64 = oracle.iter().zip(&mine).map(|(a, b)| a * b).sum();
            let sign = if dot < 0.0 { -1.0 } else { 1.0 };
            for (a, b) in oracle.iter().zip(&mine) {
                assert!((sign * a - b).abs() < 1e-6, "eigenvector {row}");
            }
        }
    }

    #[test]
    fn apply_pca_centering_and_projection_identity() {
        let cube = random_cube(4, 4, 4, 6);
        let model = fit_pca(&cube, 2).unwrap();
        // A pixel equal to the model mean projects to zero.
        let mut values = Array3::<f32>::zeros((4, 1, 1));
        for b in 0..4 {
            values[[b, 0, 0]] = model.mean[b] as f32;
        }
        let mean_cube = Cube::new(values, "mean").unwrap();
        let out = apply_pca(&model, &mean_cube).unwrap();
        for b in 0..2 {
            assert!(out.values[[b, 0, 0]].abs() < 1e-6);
        }
        // mean + 2 * component0 projects to [2, 0].
        let mut values = Array3::<f32>::zeros((4, 1, 1));
        for b in 0..4 {
            values[[b, 0, 0]] = (model.mean[b] + 2.0 * model.components[[0, b]]) as f32;
        }
        let shifted = Cube::new(values, "shift").unwrap();
        let out = apply_pca(&model, &shifted).unwrap();
        assert!((out.values[[0, 0, 0]] - 2.0).abs() < 1e-5);
        assert!(out.values[[1, 0, 0]].abs() < 1e-5);
    }

    #[test]
    fn apply_pca_matches_dense_multiply_oracle() {
        let (cube, _) = synth_cube(&SynthSpec {
            rows: 6,
            cols: 7,
            bands: 8,
            num_classes: 3,
            class_signature_separation: 0.4,
            noise_sigma: 0.1,
            region_scale: 2,
            seed: 17,
        })
        .unwrap();
        let normalized = cube.normalize();
        let model = fit_pca(&normalized, 3).unwrap();
        let out = apply_pca(&model, &normalized).unwrap();
        for r in 0..6 {
            for c in 0..7 {
                for comp in 0..3 {
                    let oracle: f64 = (0..8)
                        .map(|b| {
                            model.components[[comp, b]]
                                * (normalized.values[[b, r, c]] as f64 - model.mean[b])
                        })
                        .sum();
                    assert!(
                        (out.values[[comp, r, c]] as f64 - oracle).abs() < 1e-5,
                        "pixel ({r},{c}) comp {comp}"
                    );
                }
            }
        }
    }

    #[test]
    fn explained_variance_matches_projection_variance() {
        let cube = random_cube(6, 8, 8, 8);
        let model = fit_pca(&cube, 4).unwrap();
        let projected = apply_pca(&model, &cube).unwrap();
        let n = 64usize;
        for comp in 0..4 {
            let vals: Vec<f64> = projected
                .values
                .index_axis(Axis(0), comp)
                .iter()
                .map(|&v| v as f64)
                .collect();
            let m: f64 = vals.iter().sum::<f64>() / n as f64;
            let var: f64 = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64;
            let rel = (var - model.explained_variance[comp]).abs()
                / model.explained_variance[comp].max(1e-12);
            assert!(rel < 1e-4, "component {comp}: {var} vs {}", model.explained_variance[comp]);
        }
    }

    #[test]
    fn eigenvalues_non_increasing_and_deterministic() {
        let cube = random_cube(7, 6, 6, 9);
        let a = fit_pca(&cube, 7).unwrap();
        let b = fit_pca(&cube, 7).unwrap();
        assert_eq!(a, b);
        for w in a.explained_variance.windows(2) {
            assert!(w[0] >= w[1]);
        }
    }

    #[test]
    fn n_components_out_of_range() {
        let cube = random_cube(3, 2, 2, 10);
        assert!(fit_pca(&cube, 4).is_err());
        assert!(fit_pca(&cube, 0).is_err());
    }

    #[test]
    fn band_mismatch_rejected() {
        let cube = random_cube(4, 2, 2, 11);
        let model = fit_pca(&cube, 2).unwrap();
        let other = random_cube(5, 2, 2, 12);
        assert!(apply_pca(&model, &other).is_err());
    }

    #[test]
    fn model_io_roundtrip_close() {
        let cube = random_cube(5, 4, 4, 13);
        let model = fit_pca(&cube, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pca_a");
        save_pca(&model, &path).unwrap();
        let loaded = load_pca(&path).unwrap();
        assert_eq!(loaded.n_components(), 3);
        assert_eq!(loaded.input_bands(), 5);
        assert_eq!(loaded.explained_variance, model.explained_variance);
        for (a, b) in model.mean.iter().zip(loaded.mean.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
        for (a, b) in model.components.iter().zip(loaded.components.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
