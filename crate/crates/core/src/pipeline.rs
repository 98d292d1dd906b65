//! Per-identity labeling: pre-process each frame, extract one dominant
//! color per semantic part, pool across frames and name the result.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::color::Rgb;
use crate::error::{Error, Result};
use crate::imgproc::{self, EnhancementParams, RetinexParams};
use crate::raster::ImageBuffer;
use crate::region::{
    self, erode_mask, ClassVocabulary, PartColor, PoolingMode, QuantizationParams, SemanticMap,
    SmoothingParams,
};
use crate::search::{build_record, PersonRecord, RecordProvenance};
use crate::tree::DecisionTree;
use crate::util::{fnv1a, mix_seed};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum Preprocess {
    #[default]
    None,
    Learned(EnhancementParams),
    Msrcp(RetinexParams),
}

impl Preprocess {
    pub fn validate(&self) -> Result<()> {
        match self {
            Preprocess::None => Ok(()),
            Preprocess::Learned(p) => p.validate(),
            Preprocess::Msrcp(p) => p.validate(),
        }
    }

    pub fn apply(&self, img: &ImageBuffer) -> Result<ImageBuffer> {
        match self {
            Preprocess::None => Ok(img.clone()),
            Preprocess::Learned(p) => Ok(imgproc::enhance(img, p)),
            Preprocess::Msrcp(p) => imgproc::msrcp(img, p),
        }
    }
}

/// One crop with its semantic map.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub id: String,
    pub image: ImageBuffer,
    pub map: SemanticMap,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IdentityFrames {
    pub id: String,
    pub frames: Vec<Frame>,
}

/// Frames of an identity together with its annotated part colors.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledIdentity {
    pub frames: IdentityFrames,
    pub truth: PersonRecord,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabelingParams {
    pub preprocess: Preprocess,
    pub quantization: QuantizationParams,
    /// `None` leaves the semantic maps untouched.
    pub smoothing: Option<SmoothingParams>,
    pub pooling: PoolingMode,
    pub top_m: usize,
    pub seed: u64,
    pub classes: ClassVocabulary,
}

impl LabelingParams {
    pub fn new(classes: ClassVocabulary) -> Self {
        LabelingParams {
            preprocess: Preprocess::None,
            quantization: QuantizationParams::default(),
            smoothing: None,
            pooling: PoolingMode::Average,
            top_m: 3,
            seed: 0,
            classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.preprocess.validate()?;
        self.quantization.validate()?;
        if let Some(s) = &self.smoothing {
            s.validate()?;
        }
        if self.top_m < 1 {
            return Err(Error::param("top_m must be at least 1"));
        }
        Ok(())
    }

    fn class_name(&self, class: u8) -> String {
        match self.classes.name(class) {
            Some(name) => name.to_string(),
            None => format!("class{class}"),
        }
    }
}

/// Eroded part pixels of one frame, per class present.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameRegions {
    pub frame_id: String,
    pub regions: Vec<(u8, Vec<Rgb>)>,
}

fn prepared_map(frame: &Frame, params: &LabelingParams) -> Result<SemanticMap> {
    let (w, h) = (frame.image.width(), frame.image.height());
    if (w, h) != (frame.map.width(), frame.map.height()) {
        return Err(Error::param(format!(
            "frame {}: image is {w}x{h} but its semantic map is {}x{}",
            frame.id,
            frame.map.width(),
            frame.map.height()
        )));
    }
    match &params.smoothing {
        Some(s) => region::smooth_semantic_map(&frame.map, s),
        None => Ok(frame.map.clone()),
    }
}

/// Region pixels of the raw (not pre-processed) frame after smoothing and
/// erosion. Parts that erode away are left out.
pub fn frame_regions(frame: &Frame, params: &LabelingParams) -> Result<FrameRegions> {
    let map = prepared_map(frame, params)?;
    let regions = map
        .classes_present()
        .into_iter()
        .filter_map(|class| {
            let eroded = erode_mask(&map.mask(class), params.quantization.erosion_radius);
            let pixels: Vec<Rgb> = frame
                .image
                .pixels()
                .iter()
                .zip(eroded.bits())
                .filter(|(_, &b)| b)
                .map(|(&p, _)| p)
                .collect();
            (!pixels.is_empty()).then_some((class, pixels))
        })
        .collect();
    Ok(FrameRegions {
        frame_id: frame.id.clone(),
        regions,
    })
}

fn pool_and_name(
    id: &str,
    per_class: BTreeMap<u8, Vec<(String, PartColor)>>,
    mut frame_ids: Vec<String>,
    tree: &DecisionTree,
    params: &LabelingParams,
) -> Result<PersonRecord> {
    // Same canonical order pooling uses.
    frame_ids.sort();
    let mut pooled = BTreeMap::new();
    for (class, frames) in per_class {
        let name = params.class_name(class);
        let seed = mix_seed(params.seed, fnv1a(format!("{id}/{name}").as_bytes()));
        pooled.insert(name, region::pool_parts(&frames, params.pooling, seed, params.top_m)?);
    }
    let provenance = RecordProvenance {
        frames: frame_ids,
        pooling: params.pooling,
    };
    build_record(id, &pooled, tree, Some(provenance))
}

/// Labels one identity from pre-extracted region pixels, mapping every
/// pixel through `f` first. An identity without any usable part yields a
/// record with no parts.
pub fn record_from_regions(
    id: &str,
    frames: &[FrameRegions],
    tree: &DecisionTree,
    params: &LabelingParams,
    f: impl Fn(Rgb) -> Rgb,
) -> PersonRecord {
    let mut per_class: BTreeMap<u8, Vec<(String, PartColor)>> = BTreeMap::new();
    let mut buf = Vec::new();
    for frame in frames {
        for (class, pixels) in &frame.regions {
            buf.clear();
            buf.extend(pixels.iter().map(|&p| f(p)));
            if let Ok(part) = region::dominant_color_of(&buf, *class, &params.quantization) {
                per_class.entry(*class).or_default().push((frame.frame_id.clone(), part));
            }
        }
    }
    let frame_ids = frames.iter().map(|f| f.frame_id.clone()).collect();
    pool_and_name(id, per_class, frame_ids, tree, params)
        .unwrap_or_else(|_| PersonRecord::labels_only(id, Vec::<(String, String)>::new()))
}

/// Runs the full labeling chain on every frame of `identity`.
pub fn label_identity(
    identity: &IdentityFrames,
    tree: &DecisionTree,
    params: &LabelingParams,
) -> Result<PersonRecord> {
    params.validate()?;
    if identity.frames.is_empty() {
        return Err(Error::param(format!("identity {} has no frames", identity.id)));
    }
    let mut per_class: BTreeMap<u8, Vec<(String, PartColor)>> = BTreeMap::new();
    for frame in &identity.frames {
        let map = prepared_map(frame, params)?;
        let image = params.preprocess.apply(&frame.image)?;
        for class in map.classes_present() {
            match region::dominant_color(&image, &map.mask(class), class, &params.quantization) {
                Ok(part) => per_class.entry(class).or_default().push((frame.id.clone(), part)),
                Err(Error::EmptyRegion) => {
                    log::debug!("{}/{}: class {class} erodes to nothing", identity.id, frame.id)
                }
                Err(e) => return Err(e),
            }
        }
    }
    let frame_ids = identity.frames.iter().map(|f| f.id.clone()).collect();
    pool_and_name(&identity.id, per_class, frame_ids, tree, params)
}

/// Labels identities in parallel. Failures are reported per identity.
pub fn label_all(
    identities: &[IdentityFrames],
    tree: &DecisionTree,
    params: &LabelingParams,
) -> Vec<Result<PersonRecord>> {
    identities
        .par_iter()
        .map(|ident| label_identity(ident, tree, params))
        .collect()
}

/// Frame files of one identity, as listed in a manifest.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestIdentity {
    pub id: String,
    /// `(frame id, image path, mask path)`.
    pub frames: Vec<(String, PathBuf, PathBuf)>,
}

impl ManifestIdentity {
    pub fn load(&self, classes: &ClassVocabulary) -> Result<IdentityFrames> {
        let frames = self
            .frames
            .iter()
            .map(|(id, image, mask)| {
                Ok(Frame {
                    id: id.clone(),
                    image: ImageBuffer::open(image)?,
                    map: SemanticMap::open(mask, classes)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(IdentityFrames {
            id: self.id.clone(),
            frames,
        })
    }
}

#[derive(Deserialize)]
struct ManifestRow {
    identity: String,
    frame: String,
    image: PathBuf,
    mask: PathBuf,
}

/// Reads an `identity,frame,image,mask` CSV. Relative paths resolve against
/// the manifest's directory; identities keep their first-seen order.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestIdentity>> {
    let base = path.parent().unwrap_or(Path::new(""));
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let mut out: Vec<ManifestIdentity> = Vec::new();
    let mut index: BTreeMap<String, usize> = BTreeMap::new();
    let headers = reader.headers()?.clone();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let row: ManifestRow = record.deserialize(Some(&headers))?;
        let slot = *index.entry(row.identity.clone()).or_insert_with(|| {
            out.push(ManifestIdentity {
                id: row.identity.clone(),
                frames: Vec::new(),
            });
            out.len() - 1
        });
        if out[slot].frames.iter().any(|f| f.0 == row.frame) {
            return Err(Error::Parse {
                line,
                message: format!("frame '{}' of '{}' listed twice", row.frame, row.identity),
            });
        }
        out[slot].frames.push((row.frame, base.join(row.image), base.join(row.mask)));
    }
    if out.is_empty() {
        return Err(Error::EmptyDataset(format!("manifest {}", path.display())));
    }
    Ok(out)
}
