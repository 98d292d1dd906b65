//! Per-part color extraction from semantic maps.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::color::Rgb;
use crate::error::{Error, Result};
use crate::gauss::{self, FoldedKernel};
use crate::raster::ImageBuffer;

/// Semantic map value for pixels outside every part.
pub const BACKGROUND: u8 = 255;

/// Part class names; a class id is its position in the list.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassVocabulary {
    names: Vec<String>,
}

impl ClassVocabulary {
    pub fn new<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let names: Vec<String> = names.into_iter().map(|s| s.into().trim().to_string()).collect();
        if names.is_empty() || names.len() >= usize::from(BACKGROUND) {
            return Err(Error::param(format!(
                "class vocabulary must have between 1 and 254 names, got {}",
                names.len()
            )));
        }
        if let Some(empty) = names.iter().position(String::is_empty) {
            return Err(Error::param(format!("class {empty} has an empty name")));
        }
        Ok(ClassVocabulary { names })
    }

    /// Sidecar format: one class name per line, line `i` naming class `i`.
    pub fn parse(text: &str) -> Result<Self> {
        ClassVocabulary::new(text.lines().map(str::trim).filter(|l| !l.is_empty()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ClassVocabulary::parse(&text)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, class: u8) -> Option<&str> {
        self.names.get(usize::from(class)).map(String::as_str)
    }

    pub fn id(&self, name: &str) -> Option<u8> {
        self.names.iter().position(|n| n == name).map(|i| i as u8)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        BinaryMask {
            width,
            height,
            bits,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }
}

/// Morphological erosion with a disc of the given radius. Neighbors beyond
/// the image border are ignored, so parts touching the border only erode
/// from their interior edges.
pub fn erode_mask(mask: &BinaryMask, radius: usize) -> BinaryMask {
    if radius == 0 {
        return mask.clone();
    }
    let r = radius as i64;
    let offsets: Vec<(i64, i64)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
        .filter(|&(dx, dy)| dx * dx + dy * dy <= r * r && (dx, dy) != (0, 0))
        .collect();
    let (w, h) = (mask.width as i64, mask.height as i64);
    BinaryMask::from_fn(mask.width, mask.height, |x, y| {
        mask.get(x, y)
            && offsets.iter().all(|&(dx, dy)| {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                nx < 0 || ny < 0 || nx >= w || ny >= h || mask.get(nx as usize, ny as usize)
            })
    })
}

/// Per-pixel part assignment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SemanticMap {
    width: usize,
    height: usize,
    class_count: u8,
    labels: Vec<u8>,
}

impl SemanticMap {
    pub fn new(width: usize, height: usize, class_count: u8, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::param(format!(
                "semantic map has {} labels for {width}x{height}",
                labels.len()
            )));
        }
        if class_count == BACKGROUND {
            return Err(Error::param("at most 254 part classes are supported"));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= class_count && l != BACKGROUND) {
            return Err(Error::param(format!(
                "class id {bad} outside vocabulary of {class_count}"
            )));
        }
        Ok(SemanticMap {
            width,
            height,
            class_count,
            labels,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        class_count: u8,
        mut f: impl FnMut(usize, usize) -> u8,
    ) -> Result<Self> {
        let mut labels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                labels.push(f(x, y));
            }
        }
        SemanticMap::new(width, height, class_count, labels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn class_count(&self) -> u8 {
        self.class_count
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    pub fn mask(&self, class: u8) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            bits: self.labels.iter().map(|&l| l == class).collect(),
        }
    }

    /// Part classes with at least one pixel, ascending; background excluded.
    pub fn classes_present(&self) -> Vec<u8> {
        let mut seen = [false; 256];
        for &l in &self.labels {
            seen[usize::from(l)] = true;
        }
        (0..self.class_count).filter(|&c| seen[usize::from(c)]).collect()
    }

    pub fn pixel_count(&self, class: u8) -> usize {
        self.labels.iter().filter(|&&l| l == class).count()
    }

    /// Reads a single-channel index PNG (value = class id, 255 = background).
    pub fn open(path: &Path, classes: &ClassVocabulary) -> Result<Self> {
        let img = image::open(path)
            .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?
            .to_luma8();
        let (w, h) = img.dimensions();
        SemanticMap::new(w as usize, h as usize, classes.len() as u8, img.into_raw())
            .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let img = image::GrayImage::from_raw(self.width as u32, self.height as u32, self.labels.clone())
            .ok_or_else(|| Error::Image("map size mismatch".into()))?;
        img.save(path)
            .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuantizationParams {
    pub kmeans_k: usize,
    pub erosion_radius: usize,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for QuantizationParams {
    fn default() -> Self {
        QuantizationParams {
            kmeans_k: 5,
            erosion_radius: 2,
            max_iters: 50,
            seed: 0,
        }
    }
}

impl QuantizationParams {
    pub fn validate(&self) -> Result<()> {
        if self.kmeans_k < 1 {
            return Err(Error::param("kmeans_k must be at least 1"));
        }
        if self.max_iters < 1 {
            return Err(Error::param("max_iters must be at least 1"));
        }
        Ok(())
    }
}

/// Dominant color of one part in one frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartColor {
    pub class: u8,
    pub rgb: Rgb,
    /// Fraction of the part's pixels in the winning cluster.
    pub share: f64,
}

/// Erodes `mask`, clusters the covered pixels of `img` and returns the
/// center of the largest cluster.
pub fn dominant_color(
    img: &ImageBuffer,
    mask: &BinaryMask,
    class: u8,
    params: &QuantizationParams,
) -> Result<PartColor> {
    if (img.width(), img.height()) != (mask.width(), mask.height()) {
        return Err(Error::param("mask and image dimensions differ"));
    }
    let eroded = erode_mask(mask, params.erosion_radius);
    let pixels: Vec<Rgb> = img
        .pixels()
        .iter()
        .zip(eroded.bits())
        .filter(|(_, &b)| b)
        .map(|(&p, _)| p)
        .collect();
    dominant_color_of(&pixels, class, params)
}

/// Dominant color over an explicit pixel list (no erosion).
pub fn dominant_color_of(pixels: &[Rgb], class: u8, params: &QuantizationParams) -> Result<PartColor> {
    if pixels.is_empty() {
        return Err(Error::EmptyRegion);
    }
    let clusters = kmeans(pixels, params.kmeans_k, params.max_iters, params.seed);
    let total = pixels.len() as f64;
    let winner = clusters
        .iter()
        .filter(|c| c.size > 0)
        .min_by(|a, b| {
            b.size
                .cmp(&a.size)
                .then_with(|| a.center_rgb().luminance().total_cmp(&b.center_rgb().luminance()))
        })
        .expect("at least one non-empty cluster");
    Ok(PartColor {
        class,
        rgb: winner.center_rgb(),
        share: winner.size as f64 / total,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cluster {
    pub center: [f64; 3],
    pub size: usize,
}

impl Cluster {
    pub fn center_rgb(&self) -> Rgb {
        Rgb::from_f64(self.center)
    }
}

fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// Lloyd's K-means with seeded farthest-point initialization.
///
/// The first center is a seeded uniform pick among the pixels; each next
/// center is the color farthest from the current centers. When every color
/// already coincides with a center, fewer than `k` clusters are returned.
/// Iterates until assignments stop changing or `max_iters` is reached.
pub fn kmeans(pixels: &[Rgb], k: usize, max_iters: usize, seed: u64) -> Vec<Cluster> {
    let mut sorted = pixels.to_vec();
    sorted.sort_unstable();
    let mut colors: Vec<[f64; 3]> = Vec::new();
    let mut weights: Vec<usize> = Vec::new();
    for run in sorted.chunk_by(|a, b| a == b) {
        colors.push(run[0].to_f64());
        weights.push(run.len());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = pixels[rng.random_range(0..pixels.len())].to_f64();
    let mut centers = vec![first];
    let mut nearest: Vec<f64> = colors.iter().map(|&c| dist2(c, first)).collect();
    while centers.len() < k {
        let (far, &d) = nearest
            .iter()
            .enumerate()
            .fold((0, &-1.0), |best, cur| if *cur.1 > *best.1 { cur } else { best });
        if d <= 0.0 {
            break;
        }
        let c = colors[far];
        centers.push(c);
        for (n, &col) in nearest.iter_mut().zip(&colors) {
            *n = n.min(dist2(col, c));
        }
    }

    let assign = |centers: &[[f64; 3]]| -> Vec<usize> {
        colors
            .iter()
            .map(|&c| {
                let mut best = 0;
                let mut best_d = f64::INFINITY;
                for (j, &m) in centers.iter().enumerate() {
                    let d = dist2(c, m);
                    if d < best_d {
                        best_d = d;
                        best = j;
                    }
                }
                best
            })
            .collect()
    };

    let mut labels = assign(&centers);
    for _ in 0..max_iters {
        let mut sums = vec![[0.0f64; 3]; centers.len()];
        let mut counts = vec![0usize; centers.len()];
        for ((&c, &w), &l) in colors.iter().zip(&weights).zip(&labels) {
            for ch in 0..3 {
                sums[l][ch] += c[ch] * w as f64;
            }
            counts[l] += w;
        }
        for (j, center) in centers.iter_mut().enumerate() {
            if counts[j] > 0 {
                *center = sums[j].map(|s| s / counts[j] as f64);
            }
        }
        let next = assign(&centers);
        if next == labels {
            break;
        }
        labels = next;
    }

    let mut sizes = vec![0usize; centers.len()];
    for (&w, &l) in weights.iter().zip(&labels) {
        sizes[l] += w;
    }
    centers
        .into_iter()
        .zip(sizes)
        .map(|(center, size)| Cluster { center, size })
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolingMode {
    Random,
    #[default]
    Average,
    #[serde(alias = "sat-sort", alias = "sat_sort")]
    SatSort,
}

impl std::str::FromStr for PoolingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "random" => Ok(PoolingMode::Random),
            "average" => Ok(PoolingMode::Average),
            "satsort" | "sat-sort" | "sat_sort" => Ok(PoolingMode::SatSort),
            other => Err(Error::param(format!("unknown pooling mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for PoolingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PoolingMode::Random => "random",
            PoolingMode::Average => "average",
            PoolingMode::SatSort => "satsort",
        })
    }
}

fn mean_color<'a>(colors: impl Iterator<Item = &'a Rgb>) -> Rgb {
    let mut sum = [0.0; 3];
    let mut n = 0.0;
    for c in colors {
        for (s, v) in sum.iter_mut().zip(c.to_f64()) {
            *s += v;
        }
        n += 1.0;
    }
    Rgb::from_f64(sum.map(|s| s / n))
}

/// Combines one part's per-frame dominant colors into a single color.
///
/// Frames are first put in canonical order by frame id. `Random` picks one
/// frame with a `seed`-driven uniform draw, `Average` takes the per-channel
/// mean, `SatSort` averages the `top_m` most saturated frames.
pub fn pool_parts(
    frames: &[(String, PartColor)],
    mode: PoolingMode,
    seed: u64,
    top_m: usize,
) -> Result<Rgb> {
    if frames.is_empty() {
        return Err(Error::param("cannot pool an empty frame collection"));
    }
    let mut ordered: Vec<&(String, PartColor)> = frames.iter().collect();
    ordered.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(match mode {
        PoolingMode::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            ordered[rng.random_range(0..ordered.len())].1.rgb
        }
        PoolingMode::Average => mean_color(ordered.iter().map(|f| &f.1.rgb)),
        PoolingMode::SatSort => {
            if top_m < 1 {
                return Err(Error::param("top_m must be at least 1"));
            }
            ordered.sort_by(|a, b| b.1.rgb.saturation().total_cmp(&a.1.rgb.saturation()));
            mean_color(ordered.iter().take(top_m).map(|f| &f.1.rgb))
        }
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothingParams {
    pub sigma: f64,
    pub half_size: usize,
}

impl SmoothingParams {
    /// Half-size `ceil(3 sigma)`.
    pub fn new(sigma: f64) -> Result<Self> {
        let p = SmoothingParams {
            sigma,
            half_size: gauss::half_size(sigma.max(0.0)),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::param(format!("sigma must be finite and >= 0, got {}", self.sigma)));
        }
        if self.half_size < gauss::half_size(self.sigma) {
            return Err(Error::param(format!(
                "kernel half-size {} is below 3 sigma ({})",
                self.half_size,
                gauss::half_size(self.sigma)
            )));
        }
        Ok(())
    }
}

/// Gaussian-smoothed indicator map of every class present (background
/// included, listed last), in ascending class order.
pub fn class_responses(map: &SemanticMap, params: &SmoothingParams) -> Vec<(u8, Vec<f64>)> {
    let mut classes = map.classes_present();
    if map.labels.contains(&BACKGROUND) {
        classes.push(BACKGROUND);
    }
    let horizontal = FoldedKernel::new(params.sigma, params.half_size, map.width);
    let vertical = FoldedKernel::new(params.sigma, params.half_size, map.height).cumulative();
    classes
        .into_iter()
        .map(|c| {
            let bits: Vec<bool> = map.labels.iter().map(|&l| l == c).collect();
            let smoothed =
                gauss::blur_binary_with(&bits, map.width, map.height, &horizontal, &vertical);
            (c, smoothed)
        })
        .collect()
}

/// Each pixel takes the class with the largest smoothed indicator response;
/// ties go to the lower class id (background counts as 255).
pub fn smooth_semantic_map(map: &SemanticMap, params: &SmoothingParams) -> Result<SemanticMap> {
    params.validate()?;
    if params.sigma == 0.0 || map.labels.is_empty() {
        return Ok(map.clone());
    }
    let responses = class_responses(map, params);
    let labels = (0..map.labels.len())
        .map(|i| {
            let mut best = responses[0].0;
            let mut best_v = f64::NEG_INFINITY;
            for (c, r) in &responses {
                if r[i] > best_v {
                    best_v = r[i];
                    best = *c;
                }
            }
            best
        })
        .collect();
    SemanticMap::new(map.width, map.height, map.class_count, labels)
}
