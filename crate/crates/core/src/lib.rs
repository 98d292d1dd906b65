//! Explainable color naming for person search.
//!
//! The crate covers the whole labeling chain for pedestrian crops:
//!
//! * [`survey`] turns a crowd-sourced color-name survey into a balanced,
//!   cleaned training set restricted to a chosen vocabulary.
//! * [`tree`] trains and queries an axis-aligned decision tree over RGB.
//! * [`imgproc`] pre-processes crops (learned contrast/brightness/saturation
//!   or multi-scale retinex with chromaticity preservation).
//! * [`region`] extracts one dominant color per semantic part, pools them
//!   across frames and implements semantic-map smoothing.
//! * [`search`] stores per-identity part colors, answers conjunctive queries
//!   and scores predictions (region annotation score, recall, confusion).
//! * [`pipeline`] glues the above into per-identity labeling.
//!
//! [`synth`] generates deterministic synthetic surveys and pedestrian
//! fixtures used by the tests, benches and demos.

pub mod color;
pub mod error;
pub mod gauss;
pub mod imgproc;
pub mod neighbors;
pub mod pipeline;
pub mod raster;
pub mod region;
pub mod search;
pub mod survey;
pub mod synth;
pub mod tree;

mod util;

pub use util::write_atomic;

pub use color::{Channel, Rgb};
pub use error::{Error, Result};
pub use imgproc::{EnhancementGrid, EnhancementParams, RetinexParams};
pub use pipeline::{Frame, IdentityFrames, LabeledIdentity, LabelingParams, Preprocess};
pub use raster::ImageBuffer;
pub use region::{
    BinaryMask, ClassVocabulary, PartColor, PoolingMode, QuantizationParams, SemanticMap,
    SmoothingParams, BACKGROUND,
};
pub use search::{EvaluationReport, PersonRecord, Query, RecordStore, SearchVocabulary};
pub use survey::{ColorNameDataset, ColorSample, DatasetFilterParams, LabelSet, Stage};
pub use tree::{ColorPrediction, DecisionTree, SplitCriterion, TreeTrainParams};
