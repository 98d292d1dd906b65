//! Crop pre-processing: global contrast/brightness/saturation enhancement
//! and multi-scale retinex with chromaticity preservation (MSRCP).

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::color::{clamp_u8, hsv_to_rgb, rgb_to_hsv, Rgb};
use crate::error::{Error, Result};
use crate::gauss::{self, FoldedKernel};
use crate::pipeline::{self, LabeledIdentity, LabelingParams};
use crate::raster::ImageBuffer;
use crate::tree::DecisionTree;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnhancementParams {
    /// Gain around mid-gray 128.
    pub contrast: f64,
    /// Additive offset in channel levels.
    pub brightness: f64,
    /// HSV saturation gain.
    pub saturation: f64,
}

impl Default for EnhancementParams {
    fn default() -> Self {
        EnhancementParams::IDENTITY
    }
}

impl EnhancementParams {
    pub const IDENTITY: EnhancementParams = EnhancementParams {
        contrast: 1.0,
        brightness: 0.0,
        saturation: 1.0,
    };

    pub fn validate(&self) -> Result<()> {
        let finite = self.contrast.is_finite() && self.brightness.is_finite() && self.saturation.is_finite();
        if !finite {
            return Err(Error::param("enhancement parameters must be finite"));
        }
        if self.contrast < 0.0 || self.saturation < 0.0 {
            return Err(Error::param("contrast and saturation gains must be >= 0"));
        }
        if !(-255.0..=255.0).contains(&self.brightness) {
            return Err(Error::param("brightness must be within [-255, 255]"));
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        *self == EnhancementParams::IDENTITY
    }

    fn distance_to_identity(&self) -> f64 {
        (self.contrast - 1.0).abs() + self.brightness.abs() / 255.0 + (self.saturation - 1.0).abs()
    }
}

#[inline]
pub fn enhance_pixel(p: Rgb, params: &EnhancementParams) -> Rgb {
    let c = p
        .to_f64()
        .map(|v| (params.contrast * (v - 128.0) + 128.0 + params.brightness).clamp(0.0, 255.0));
    if params.saturation == 1.0 {
        return Rgb(c.map(clamp_u8));
    }
    let [h, s, v] = rgb_to_hsv(c.map(|x| x / 255.0));
    let s = (s * params.saturation).clamp(0.0, 1.0);
    Rgb(hsv_to_rgb([h, s, v]).map(|x| clamp_u8(x * 255.0)))
}

/// Applies `clamp(contrast * (v - 128) + 128 + brightness)` per channel,
/// then scales HSV saturation.
pub fn enhance(img: &ImageBuffer, params: &EnhancementParams) -> ImageBuffer {
    if params.is_identity() {
        return img.clone();
    }
    img.map(|p| enhance_pixel(p, params))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetinexParams {
    /// Gaussian surround standard deviations in pixels.
    pub scales: Vec<f64>,
    pub low_clip: f64,
    pub high_clip: f64,
}

impl Default for RetinexParams {
    fn default() -> Self {
        RetinexParams {
            scales: vec![15.0, 80.0, 250.0],
            low_clip: 0.01,
            high_clip: 0.01,
        }
    }
}

impl RetinexParams {
    pub fn validate(&self) -> Result<()> {
        if self.scales.is_empty() {
            return Err(Error::param("retinex needs at least one scale"));
        }
        if let Some(s) = self.scales.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::param(format!("retinex scale must be positive, got {s}")));
        }
        let clip_ok = |c: f64| (0.0..0.5).contains(&c);
        if !clip_ok(self.low_clip) || !clip_ok(self.high_clip) || self.low_clip + self.high_clip >= 1.0 {
            return Err(Error::param("clip fractions must be in [0, 0.5)"));
        }
        Ok(())
    }
}

thread_local! {
    static KERNELS: RefCell<HashMap<(u64, usize), Rc<FoldedKernel>>> = RefCell::new(HashMap::new());
}

fn folded(sigma: f64, n: usize) -> Rc<FoldedKernel> {
    KERNELS.with(|cache| {
        let mut cache = cache.borrow_mut();
        if cache.len() > 64 {
            cache.clear();
        }
        cache
            .entry((sigma.to_bits(), n))
            .or_insert_with(|| Rc::new(FoldedKernel::new(sigma, gauss::half_size(sigma), n)))
            .clone()
    })
}

/// Multi-scale retinex on the intensity channel, stretched by simplest color
/// balance, then applied to each pixel as a common gain on all three
/// channels (capped so the largest channel stays <= 255).
pub fn msrcp(img: &ImageBuffer, params: &RetinexParams) -> Result<ImageBuffer> {
    params.validate()?;
    let (w, h) = (img.width(), img.height());
    if w == 0 || h == 0 {
        return Err(Error::param("cannot run retinex on a zero-area image"));
    }
    let smallest = params.scales.iter().copied().fold(f64::INFINITY, f64::min);
    if (w.min(h) as f64) <= smallest {
        log::warn!("image {w}x{h} is not larger than the smallest retinex scale {smallest}");
    }

    let intensity: Vec<f64> = img.pixels().iter().map(|p| p.intensity()).collect();
    let log_i: Vec<f64> = intensity.iter().map(|&v| (v + 1.0).ln()).collect();
    let mut msr = vec![0.0; intensity.len()];
    for &sigma in &params.scales {
        let blurred = gauss::blur_plane_with(&intensity, w, h, &folded(sigma, w), &folded(sigma, h));
        for ((m, &li), &b) in msr.iter_mut().zip(&log_i).zip(&blurred) {
            *m += li - (b + 1.0).ln();
        }
    }
    let scale_count = params.scales.len() as f64;
    msr.iter_mut().for_each(|m| *m /= scale_count);

    let stretched = simplest_color_balance(&msr, params.low_clip, params.high_clip);
    let pixels = img
        .pixels()
        .iter()
        .zip(&intensity)
        .zip(&stretched)
        .map(|((&p, &old), &new)| {
            if old <= 0.0 {
                return p;
            }
            let peak = f64::from(*p.0.iter().max().unwrap());
            let gain = (255.0 / peak).min(new / old);
            Rgb(p.to_f64().map(|c| clamp_u8(gain * c)))
        })
        .collect();
    ImageBuffer::new(w, h, pixels)
}

/// Affine stretch of `values` onto [0, 255] after clipping the given
/// fractions at each end. A constant input maps to mid-gray 128.
pub fn simplest_color_balance(values: &[f64], low_clip: f64, high_clip: f64) -> Vec<f64> {
    let n = values.len();
    if n == 0 {
        return Vec::new();
    }
    let mut scratch = values.to_vec();
    let lo_rank = ((low_clip * (n - 1) as f64).floor() as usize).min(n - 1);
    let hi_rank = (((1.0 - high_clip) * (n - 1) as f64).ceil() as usize).min(n - 1);
    let lo = *scratch.select_nth_unstable_by(lo_rank, f64::total_cmp).1;
    let hi = *scratch.select_nth_unstable_by(hi_rank, f64::total_cmp).1;
    if hi - lo <= 1e-12 {
        return vec![128.0; n];
    }
    values
        .iter()
        .map(|&v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0) * 255.0)
        .collect()
}

/// Candidate values for the enhancement grid search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnhancementGrid {
    pub contrast: Vec<f64>,
    pub brightness: Vec<f64>,
    pub saturation: Vec<f64>,
}

impl Default for EnhancementGrid {
    fn default() -> Self {
        EnhancementGrid {
            contrast: vec![0.8, 1.0, 1.2, 1.4, 1.6],
            brightness: vec![-20.0, -10.0, 0.0, 10.0, 20.0, 30.0, 40.0],
            saturation: vec![1.0, 1.25, 1.5, 1.75, 2.0],
        }
    }
}

impl EnhancementGrid {
    pub fn points(&self) -> Vec<EnhancementParams> {
        let mut out = Vec::with_capacity(self.contrast.len() * self.brightness.len() * self.saturation.len());
        for &contrast in &self.contrast {
            for &brightness in &self.brightness {
                for &saturation in &self.saturation {
                    out.push(EnhancementParams {
                        contrast,
                        brightness,
                        saturation,
                    });
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LearnedEnhancement {
    pub params: EnhancementParams,
    pub ras: f64,
    /// Every grid point with its validation RAS, in grid order.
    pub scores: Vec<(EnhancementParams, f64)>,
}

/// Exhaustive grid search for the enhancement maximizing validation RAS of
/// the full labeling pipeline. Ties go to the point closest to identity.
///
/// The preprocessing mode in `labeling` is ignored; every other labeling
/// parameter is used as given.
pub fn learn_enhancement(
    validation: &[LabeledIdentity],
    tree: &DecisionTree,
    grid: &EnhancementGrid,
    labeling: &LabelingParams,
) -> Result<LearnedEnhancement> {
    let points = grid.points();
    if points.is_empty() {
        return Err(Error::param("enhancement grid is empty"));
    }
    if validation.is_empty() {
        return Err(Error::EmptyDataset("validation set".into()));
    }
    for p in &points {
        p.validate()?;
    }

    let regions: Vec<Vec<pipeline::FrameRegions>> = validation
        .par_iter()
        .map(|item| {
            item.frames
                .frames
                .iter()
                .map(|f| {
                    // Parts without ground truth never change the score.
                    let mut regions = pipeline::frame_regions(f, labeling)?;
                    regions.regions.retain(|(class, _)| {
                        let name = labeling.classes.name(*class).unwrap_or_default();
                        item.truth.parts.contains_key(name)
                    });
                    Ok(regions)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let truth: Vec<_> = validation.iter().map(|v| v.truth.clone()).collect();

    let scores: Vec<(EnhancementParams, f64)> = points
        .par_iter()
        .map(|params| {
            let records: Vec<_> = validation
                .iter()
                .zip(&regions)
                .map(|(item, frames)| {
                    pipeline::record_from_regions(&item.frames.id, frames, tree, labeling, |p| {
                        enhance_pixel(p, params)
                    })
                })
                .collect();
            let ras = crate::search::evaluate(&records, &truth).map(|r| r.ras);
            ras.map(|ras| (*params, ras))
        })
        .collect::<Result<_>>()?;

    let (params, ras) = scores
        .iter()
        .copied()
        .reduce(|best, cur| {
            let better = cur.1 > best.1
                || (cur.1 == best.1 && cur.0.distance_to_identity() < best.0.distance_to_identity());
            if better {
                cur
            } else {
                best
            }
        })
        .expect("non-empty grid");
    Ok(LearnedEnhancement { params, ras, scores })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_enhancement_is_exact() {
        let img = ImageBuffer::from_fn(16, 16, |x, y| Rgb::new((x * 16) as u8, (y * 16) as u8, ((x * y) % 256) as u8));
        assert_eq!(enhance(&img, &EnhancementParams::IDENTITY), img);
        for p in img.pixels() {
            assert_eq!(enhance_pixel(*p, &EnhancementParams::IDENTITY), *p);
        }
    }

    #[test]
    fn enhancement_formula() {
        let bright = EnhancementParams {
            brightness: 10.0,
            ..EnhancementParams::IDENTITY
        };
        assert_eq!(enhance_pixel(Rgb::new(250, 250, 250), &bright), Rgb::new(255, 255, 255));
        let contrast = EnhancementParams {
            contrast: 2.0,
            ..EnhancementParams::IDENTITY
        };
        assert_eq!(enhance_pixel(Rgb::new(100, 100, 100), &contrast), Rgb::new(72, 72, 72));
    }

    #[test]
    fn saturation_gain_moves_away_from_gray() {
        let sat = EnhancementParams {
            saturation: 2.0,
            ..EnhancementParams::IDENTITY
        };
        let out = enhance_pixel(Rgb::new(200, 150, 150), &sat);
        assert_eq!(out, Rgb::new(200, 100, 100));
        assert_eq!(enhance_pixel(Rgb::new(90, 90, 90), &sat), Rgb::new(90, 90, 90));
    }

    #[test]
    fn uniform_image_maps_to_uniform_mid_intensity() {
        let img = ImageBuffer::filled(20, 12, Rgb::new(40, 80, 120));
        let out = msrcp(&img, &RetinexParams::default()).unwrap();
        let first = out.pixels()[0];
        assert!(out.pixels().iter().all(|&p| p == first));
        assert_eq!(first, Rgb::new(64, 128, 192));
    }

    #[test]
    fn zero_area_is_an_error() {
        let img = ImageBuffer::new(0, 5, Vec::new()).unwrap();
        assert!(msrcp(&img, &RetinexParams::default()).is_err());
    }

    #[test]
    fn retinex_params_validation() {
        assert!(RetinexParams { scales: vec![], ..Default::default() }.validate().is_err());
        assert!(RetinexParams { scales: vec![-1.0], ..Default::default() }.validate().is_err());
        assert!(RetinexParams { low_clip: 0.5, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn color_balance_clips_and_stretches() {
        let values: Vec<f64> = (0..101).map(f64::from).collect();
        let out = simplest_color_balance(&values, 0.1, 0.1);
        assert_eq!(out[0], 0.0);
        assert_eq!(out[10], 0.0);
        assert_eq!(out[90], 255.0);
        assert!((out[50] - 127.5).abs() < 1e-9);
        assert_eq!(simplest_color_balance(&[3.0; 5], 0.01, 0.01), vec![128.0; 5]);
    }

    #[test]
    fn empty_grid_is_rejected() {
        let grid = EnhancementGrid {
            contrast: vec![],
            ..Default::default()
        };
        assert!(grid.points().is_empty());
    }
}
