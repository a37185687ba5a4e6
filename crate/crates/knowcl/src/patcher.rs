//! Patch extraction and two-view augmentation.
//!
//! Patches are windows centered on a pixel with reflect padding at raster
//! borders (mirror without repeating the edge pixel). The augmentation
//! pipeline is: random crop, bilinear resize to the canonical size, random
//! vertical/horizontal flips, and Gaussian blur applied with probability
//! one half. Color jitter is deliberately absent: spectra are not colors.

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datacube::Cube;
use crate::error::{Error, Result};
use crate::spectral::GroupedCube;

/// A `(channels, size, size)` window around a center pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub values: Array3<f32>,
    pub center: (u32, u32),
    pub label: Option<u32>,
}

impl Patch {
    pub fn channels(&self) -> usize {
        self.values.dim().0
    }

    pub fn size(&self) -> usize {
        self.values.dim().1
    }
}

/// Augmentation parameters. `blur_sigma_range` bounds the uniform draw of
/// the Gaussian blur sigma; the blur itself fires with probability 0.5.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    pub crop_size: usize,
    pub canonical_size: usize,
    pub flip_prob: f64,
    pub blur_sigma_range: (f64, f64),
    pub seed: Option<u64>,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            crop_size: 23,
            canonical_size: 24,
            flip_prob: 0.5,
            blur_sigma_range: (0.1, 2.0),
            seed: None,
        }
    }
}

impl AugmentConfig {
    /// An identity pipeline for the given patch size: no crop movement, no
    /// flips, no blur, no resize.
    pub fn identity(size: usize) -> Self {
        AugmentConfig {
            crop_size: size,
            canonical_size: size,
            flip_prob: 0.0,
            blur_sigma_range: (0.0, 0.0),
            seed: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.crop_size == 0 || self.canonical_size == 0 {
            return Err(Error::invalid("crop/canonical sizes must be positive"));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::invalid("flip_prob must be in [0, 1]"));
        }
        let (lo, hi) = self.blur_sigma_range;
        if lo < 0.0 || hi < lo {
            return Err(Error::invalid("blur_sigma_range must be 0 <= lo <= hi"));
        }
        Ok(())
    }
}

/// Two augmented views of the same center pixel, one per spectral group.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewPair {
    pub view_a: Patch,
    pub view_b: Patch,
    pub center: (u32, u32),
}

/// Deterministic per-sample RNG substream: identical regardless of which
/// worker thread processes the sample. `parts` typically holds
/// `(epoch, sample index, view id)`.
pub fn substream(seed: u64, parts: &[u64]) -> ChaCha8Rng {
    let mut state = splitmix64(seed ^ 0x9e37_79b9_7f4a_7c15);
    for &p in parts {
        state = splitmix64(state ^ splitmix64(p.wrapping_add(0xbf58_476d_1ce4_e5b9)));
    }
    ChaCha8Rng::seed_from_u64(state)
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Mirror an index into [0, n) without repeating the edge pixel.
/// Valid for offsets within one reflection, which the patch-size
/// precondition guarantees.
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let n = n as isize;
    let mut i = i;
    if i < 0 {
        i = -i;
    }
    if i >= n {
        i = 2 * (n - 1) - i;
    }
    debug_assert!((0..n).contains(&i));
    i as usize
}

/// Extracts an odd-sized window centered on `center`; out-of-raster
/// positions are reflect-padded.
pub fn extract_patch(cube: &Cube, center: (u32, u32), size: usize) -> Result<Patch> {
    if size % 2 == 0 {
        return Err(Error::invalid(format!("patch size must be odd, got {size}")));
    }
    let limit = 2 * cube.rows.min(cube.cols) - 1;
    if size > limit {
        return Err(Error::invalid(format!(
            "patch size {size} exceeds the reflectable limit {limit} for a {}x{} raster",
            cube.rows, cube.cols
        )));
    }
    let (row, col) = (center.0 as usize, center.1 as usize);
    if row >= cube.rows || col >= cube.cols {
        return Err(Error::invalid(format!(
            "center ({row}, {col}) outside {}x{} raster",
            cube.rows, cube.cols
        )));
    }
    let half = (size - 1) / 2;
    let mut values = Array3::<f32>::zeros((cube.bands, size, size));
    for b in 0..cube.bands {
        for dr in 0..size {
            let r = reflect(row as isize + dr as isize - half as isize, cube.rows);
            for dc in 0..size {
                let c = reflect(col as isize + dc as isize - half as isize, cube.cols);
                values[[b, dr, dc]] = cube.values[[b, r, c]];
            }
        }
    }
    Ok(Patch {
        values,
        center: (center.0, center.1),
        label: None,
    })
}

fn bilinear_resize(values: &Array3<f32>, out_size: usize) -> Array3<f32> {
    let (channels, in_h, in_w) = values.dim();
    if in_h == out_size && in_w == out_size {
        return values.clone();
    }
    let mut out = Array3::<f32>::zeros((channels, out_size, out_size));
    let scale_y = in_h as f32 / out_size as f32;
    let scale_x = in_w as f32 / out_size as f32;
    for oy in 0..out_size {
        let sy = ((oy as f32 + 0.5) * scale_y - 0.5).clamp(0.0, (in_h - 1) as f32);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(in_h - 1);
        let fy = sy - y0 as f32;
        for ox in 0..out_size {
            let sx = ((ox as f32 + 0.5) * scale_x - 0.5).clamp(0.0, (in_w - 1) as f32);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(in_w - 1);
            let fx = sx - x0 as f32;
            for ch in 0..channels {
                let top = values[[ch, y0, x0]] * (1.0 - fx) + values[[ch, y0, x1]] * fx;
                let bot = values[[ch, y1, x0]] * (1.0 - fx) + values[[ch, y1, x1]] * fx;
                out[[ch, oy, ox]] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    out
}

fn flip_vertical(values: &mut Array3<f32>) {
    let (channels, h, w) = values.dim();
    for ch in 0..channels {
        for r in 0..h / 2 {
            for c in 0..w {
                values.swap([ch, r, c], [ch, h - 1 - r, c]);
            }
        }
    }
}

fn flip_horizontal(values: &mut Array3<f32>) {
    let (channels, h, w) = values.dim();
    for ch in 0..channels {
        for r in 0..h {
            for c in 0..w / 2 {
                values.swap([ch, r, c], [ch, r, w - 1 - c]);
            }
        }
    }
}

/// Separable Gaussian blur with kernel radius `ceil(3 sigma)`, truncated and
/// renormalized; borders are reflected. Sigma 0 is the identity.
fn gaussian_blur(values: &Array3<f32>, sigma: f64) -> Array3<f32> {
    let radius = (3.0 * sigma).ceil() as isize;
    if radius == 0 {
        return values.clone();
    }
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    for i in -radius..=radius {
        kernel.push((-(i * i) as f64 / (2.0 * sigma * sigma)).exp());
    }
    let total: f64 = kernel.iter().sum();
    let kernel: Vec<f32> = kernel.iter().map(|k| (k / total) as f32).collect();

    let (channels, h, w) = values.dim();
    let mut tmp = Array3::<f32>::zeros((channels, h, w));
    for ch in 0..channels {
        for r in 0..h {
            for c in 0..w {
                let mut acc = 0.0f32;
                for (ki, k) in kernel.iter().enumerate() {
                    let cc = reflect(c as isize + ki as isize - radius, w);
                    acc += k * values[[ch, r, cc]];
                }
                tmp[[ch, r, c]] = acc;
            }
        }
    }
    let mut out = Array3::<f32>::zeros((channels, h, w));
    for ch in 0..channels {
        for r in 0..h {
            for c in 0..w {
                let mut acc = 0.0f32;
                for (ki, k) in kernel.iter().enumerate() {
                    let rr = reflect(r as isize + ki as isize - radius, h);
                    acc += k * tmp[[ch, rr, c]];
                }
                out[[ch, r, c]] = acc;
            }
        }
    }
    out
}

/// Applies the augmentation pipeline to a patch. Deterministic given the
/// draw state: the pipeline consumes a fixed sequence of draws (crop row,
/// crop col, vertical flip, horizontal flip, blur gate, blur sigma)
/// regardless of which transforms fire.
pub fn augment_view<R: Rng>(patch: &Patch, cfg: &AugmentConfig, draw: &mut R) -> Result<Patch> {
    cfg.validate()?;
    let size = patch.size();
    if cfg.crop_size > size {
        return Err(Error::invalid(format!(
            "crop_size {} exceeds patch size {size}",
            cfg.crop_size
        )));
    }
    let max_off = size - cfg.crop_size;
    let off_y = if max_off > 0 { draw.gen_range(0..=max_off) } else { 0 };
    let off_x = if max_off > 0 { draw.gen_range(0..=max_off) } else { 0 };
    let cropped = patch
        .values
        .slice(ndarray::s![
            ..,
            off_y..off_y + cfg.crop_size,
            off_x..off_x + cfg.crop_size
        ])
        .to_owned();

    let mut values = bilinear_resize(&cropped, cfg.canonical_size);

    if draw.gen::<f64>() < cfg.flip_prob {
        flip_vertical(&mut values);
    }
    if draw.gen::<f64>() < cfg.flip_prob {
        flip_horizontal(&mut values);
    }

    let apply_blur = draw.gen::<f64>() < 0.5;
    let (lo, hi) = cfg.blur_sigma_range;
    let sigma = if hi > lo { draw.gen_range(lo..hi) } else { lo };
    if apply_blur && sigma > 0.0 {
        values = gaussian_blur(&values, sigma);
    }

    Ok(Patch {
        values,
        center: patch.center,
        label: patch.label,
    })
}

/// Builds the two augmented views of one center pixel from the post-PCA
/// grouped cubes, with independent draw states per view.
pub fn make_view_pair<R: Rng>(
    grouped: &GroupedCube,
    center: (u32, u32),
    size: usize,
    cfg: &AugmentConfig,
    label: Option<u32>,
    draw_a: &mut R,
    draw_b: &mut R,
) -> Result<ViewPair> {
    if grouped.group_a.bands != grouped.group_b.bands {
        return Err(Error::ShapeMismatch {
            expected: format!("{} channels in both groups", grouped.group_a.bands),
            actual: format!("{} vs {}", grouped.group_a.bands, grouped.group_b.bands),
        });
    }
    let mut raw_a = extract_patch(&grouped.group_a, center, size)?;
    let mut raw_b = extract_patch(&grouped.group_b, center, size)?;
    raw_a.label = label;
    raw_b.label = label;
    let view_a = augment_view(&raw_a, cfg, draw_a)?;
    let view_b = augment_view(&raw_b, cfg, draw_b)?;
    Ok(ViewPair {
        view_a,
        view_b,
        center,
    })
}
