use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use huesearch_core::pipeline::{label_all, read_manifest, LabeledIdentity};
use huesearch_core::search::{self, ClassMapping};
use huesearch_core::survey::{self, Stage};
use huesearch_core::synth::{self, SceneParams, SurveyModel};
use huesearch_core::tree::{self, train_tree};
use huesearch_core::{
    imgproc, write_atomic, ClassVocabulary, ColorNameDataset, DecisionTree, LabelingParams,
    PersonRecord, Query, SearchVocabulary,
};
use log::{info, warn};
use serde::Serialize;

use crate::config::{require, PipelineConfig};
use crate::error::{CliError, Context};

/// Identities loaded and labeled per batch; bounds memory on large manifests.
const LABEL_BATCH: usize = 64;

fn stage_dir(config: &PipelineConfig) -> PathBuf {
    config.paths.work_dir.join("stages")
}

fn stage_path(config: &PipelineConfig, stage: Stage) -> PathBuf {
    stage_dir(config).join(format!("{stage}.csv"))
}

fn tree_path(config: &PipelineConfig) -> PathBuf {
    config.paths.work_dir.join("tree.json")
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

#[derive(Serialize)]
struct StageSummary {
    stage: Stage,
    file: Option<String>,
    samples: usize,
    labels: usize,
    fingerprint: String,
}

impl StageSummary {
    fn of(d: &ColorNameDataset, file: Option<&Path>) -> Self {
        StageSummary {
            stage: d.stage(),
            file: file.map(|p| p.file_name().unwrap_or_default().to_string_lossy().into_owned()),
            samples: d.len(),
            labels: d.label_counts().len(),
            fingerprint: d.fingerprint(),
        }
    }
}

#[derive(Serialize)]
struct PrepareReport {
    survey: String,
    malformed_rows: usize,
    seed: u64,
    tau: f64,
    clean: bool,
    outlier_k: usize,
    outlier_radius: f64,
    smote: bool,
    smote_k: usize,
    labels: Vec<String>,
    stages: Vec<StageSummary>,
}

pub fn prepare(config: &PipelineConfig) -> Result<(), CliError> {
    let survey_path = require(&config.paths.survey, "survey")?;
    let labels = config.label_set()?;
    let p = config.survey.filter_params();
    let dir = stage_dir(config);
    create_dir(&dir)?;

    let started = Instant::now();
    let raw = survey::read_survey_file(survey_path).context("reading the survey")?;
    info!("parsed {} answers ({} malformed rows) in {:.1?}", raw.len(), raw.malformed_rows(), started.elapsed());
    let malformed_rows = raw.malformed_rows();
    let mut stages = vec![StageSummary::of(&raw, None)];

    let mut save = |d: &ColorNameDataset| -> Result<(), CliError> {
        let path = stage_path(config, d.stage());
        survey::save_dataset(d, &path).context(format!("writing {}", path.display()))?;
        stages.push(StageSummary::of(d, Some(&path)));
        Ok(())
    };
    let mut d = survey::filter_by_frequency(&raw, p.tau).context("frequency filter")?;
    drop(raw);
    save(&d)?;
    if config.survey.clean {
        d = survey::remove_outliers(&d, p.outlier_k, p.outlier_radius).context("outlier removal")?;
        save(&d)?;
    }
    if config.survey.smote {
        d = survey::resample_smote_for(&d, p.smote_k, config.seed, Some(&labels)).context("SMOTE")?;
        save(&d)?;
    }
    d = survey::restrict_labels(&d, &labels).context("label restriction")?;
    save(&d)?;
    // Drop leftovers of skipped stages so the directory matches this run.
    for stage in [Stage::Cleaned, Stage::Resampled] {
        let skipped = (stage == Stage::Cleaned && !config.survey.clean) || (stage == Stage::Resampled && !config.survey.smote);
        let path = stage_path(config, stage);
        if skipped && path.exists() {
            fs::remove_file(&path).map_err(|e| CliError::Data(format!("cannot remove {}: {e}", path.display())))?;
        }
    }

    let report = PrepareReport {
        survey: survey_path.display().to_string(),
        malformed_rows,
        seed: config.seed,
        tau: p.tau,
        clean: config.survey.clean,
        outlier_k: p.outlier_k,
        outlier_radius: p.outlier_radius,
        smote: config.survey.smote,
        smote_k: p.smote_k,
        labels: labels.iter().map(str::to_string).collect(),
        stages,
    };
    write_json(&config.paths.work_dir.join("prepare_report.json"), &report)?;
    println!("{:<11} {:>10} {:>7}", "stage", "samples", "labels");
    for s in &report.stages {
        println!("{:<11} {:>10} {:>7}", s.stage.as_str(), s.samples, s.labels);
    }
    info!("prepare finished in {:.1?}", started.elapsed());
    Ok(())
}

#[derive(Serialize)]
struct TrainMetrics {
    samples: usize,
    train_samples: usize,
    holdout_samples: usize,
    /// Absent when the dataset is too small to hold anything out.
    holdout_accuracy: Option<f64>,
    train_accuracy: f64,
    depth: usize,
    leaves: usize,
    labels: Vec<String>,
    dataset_fingerprint: String,
    seed: u64,
}

pub fn train(config: &PipelineConfig) -> Result<(), CliError> {
    let path = stage_path(config, Stage::Restricted);
    if !path.exists() {
        return Err(CliError::Data(format!(
            "no prepared dataset at {}; run `huesearch prepare` first",
            path.display()
        )));
    }
    let d = survey::load_dataset(&path).context(format!("reading {}", path.display()))?;
    let (train_set, holdout) = d.split_holdout(config.survey.holdout, config.seed)?;
    let train_set = if train_set.is_empty() { d.clone() } else { train_set };
    let params = huesearch_core::TreeTrainParams { seed: config.seed, ..config.tree.clone() };
    let started = Instant::now();
    let tree = train_tree(&train_set, &params).context("training")?;
    info!("trained on {} samples in {:.1?}", train_set.len(), started.elapsed());

    let metrics = TrainMetrics {
        samples: d.len(),
        train_samples: train_set.len(),
        holdout_samples: holdout.len(),
        holdout_accuracy: (!holdout.is_empty()).then(|| tree.accuracy(&holdout)),
        train_accuracy: tree.accuracy(&train_set),
        depth: tree.depth(),
        leaves: tree.leaf_count(),
        labels: tree.labels().to_vec(),
        dataset_fingerprint: d.fingerprint(),
        seed: config.seed,
    };
    create_dir(&config.paths.work_dir)?;
    tree::save_tree_file(&tree, &tree_path(config))?;
    write_json(&config.paths.work_dir.join("train_metrics.json"), &metrics)?;
    match metrics.holdout_accuracy {
        Some(a) => println!("held-out accuracy {:.2}% on {} samples", 100.0 * a, metrics.holdout_samples),
        None => println!("dataset too small for a held-out split"),
    }
    println!(
        "training accuracy {:.2}%, depth {}, {} leaves",
        100.0 * metrics.train_accuracy,
        metrics.depth,
        metrics.leaves
    );
    Ok(())
}

fn load_tree(path: &Path) -> Result<DecisionTree, CliError> {
    if !path.exists() {
        return Err(CliError::Data(format!("no tree at {}; run `huesearch train` first", path.display())));
    }
    tree::load_tree_file(path).context(format!("reading {}", path.display()))
}

fn labeling_params(config: &PipelineConfig, classes: ClassVocabulary) -> Result<LabelingParams, CliError> {
    let mut p = LabelingParams::new(classes);
    p.preprocess = config.preprocess.clone();
    p.quantization = config.quantization.clone();
    p.smoothing = config.smoothing_params()?;
    p.pooling = config.pooling.mode;
    p.top_m = config.pooling.top_m;
    p.seed = config.seed;
    p.validate()?;
    Ok(p)
}

pub struct LabelOptions {
    pub tree: Option<PathBuf>,
    pub append: bool,
}

pub fn label(config: &PipelineConfig, opts: &LabelOptions) -> Result<(), CliError> {
    let manifest_path = require(&config.paths.manifest, "manifest")?;
    let classes_path = require(&config.paths.classes, "classes")?;
    let tree = load_tree(opts.tree.as_deref().unwrap_or(&tree_path(config)))?;
    let classes = ClassVocabulary::load(classes_path).context("reading classes")?;
    let params = labeling_params(config, classes)?;
    let manifest = read_manifest(manifest_path).context("reading the manifest")?;

    let started = Instant::now();
    let mut records = Vec::with_capacity(manifest.len());
    let mut failed = 0usize;
    for batch in manifest.chunks(LABEL_BATCH) {
        let mut loaded = Vec::with_capacity(batch.len());
        for entry in batch {
            match entry.load(&params.classes) {
                Ok(identity) => loaded.push(identity),
                Err(e) => {
                    warn!("skipping identity {}: {e}", entry.id);
                    failed += 1;
                }
            }
        }
        for (identity, result) in loaded.iter().zip(label_all(&loaded, &tree, &params)) {
            match result {
                Ok(record) => records.push(record),
                Err(e) => {
                    warn!("skipping identity {}: {e}", identity.id);
                    failed += 1;
                }
            }
        }
    }
    if records.is_empty() {
        return Err(CliError::Data(format!("none of the {} identities could be labeled", manifest.len())));
    }
    let out = config.records_path();
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    if opts.append {
        search::append_records(&records, &out)?;
    } else {
        search::save_records(&records, &out)?;
    }
    info!("labeling took {:.1?}", started.elapsed());
    println!(
        "labeled {} of {} identities ({} skipped) -> {}",
        records.len(),
        manifest.len(),
        failed,
        out.display()
    );
    Ok(())
}

/// Ground truth by id; identities without truth are dropped with a warning.
fn attach_truth(
    manifest: &Path,
    truth: &Path,
    classes: &ClassVocabulary,
) -> Result<Vec<LabeledIdentity>, CliError> {
    let truth: BTreeMap<String, PersonRecord> = search::load_truth_csv(truth)
        .context("reading validation truth")?
        .into_iter()
        .map(|r| (r.id.clone(), r))
        .collect();
    let mut out = Vec::new();
    for entry in read_manifest(manifest).context("reading the validation manifest")? {
        let Some(t) = truth.get(&entry.id) else {
            warn!("validation identity {} has no ground truth; ignored", entry.id);
            continue;
        };
        out.push(LabeledIdentity {
            frames: entry.load(classes).context(format!("loading {}", entry.id))?,
            truth: t.clone(),
        });
    }
    Ok(out)
}

pub fn tune(config: &PipelineConfig, tree: Option<&Path>) -> Result<(), CliError> {
    let manifest = require(&config.paths.validation_manifest, "validation_manifest")?;
    let truth = require(&config.paths.validation_truth, "validation_truth")?;
    let classes_path = require(&config.paths.classes, "classes")?;
    let tree = load_tree(tree.unwrap_or(&tree_path(config)))?;
    let classes = ClassVocabulary::load(classes_path).context("reading classes")?;
    let mut base = labeling_params(config, classes)?;
    base.preprocess = huesearch_core::Preprocess::None;
    let validation = attach_truth(manifest, truth, &base.classes)?;
    let started = Instant::now();
    let learned = imgproc::learn_enhancement(&validation, &tree, &config.tune, &base)?;
    info!("searched {} grid points in {:.1?}", learned.scores.len(), started.elapsed());

    let p = learned.params;
    let snippet = format!(
        "# validation RAS {:.1} over {} identities\n[preprocess]\nmode = \"learned\"\ncontrast = {}\nbrightness = {}\nsaturation = {}\n",
        100.0 * learned.ras,
        validation.len(),
        p.contrast,
        p.brightness,
        p.saturation
    );
    let mut scores = String::from("contrast,brightness,saturation,ras\n");
    for (q, ras) in &learned.scores {
        scores.push_str(&format!("{},{},{},{ras}\n", q.contrast, q.brightness, q.saturation));
    }
    create_dir(&config.paths.work_dir)?;
    write_atomic(&config.paths.work_dir.join("enhancement.toml"), snippet.as_bytes())?;
    write_atomic(&config.paths.work_dir.join("tune_scores.csv"), scores.as_bytes())?;
    print!("{snippet}");
    Ok(())
}

fn load_records(path: &Path) -> Result<Vec<PersonRecord>, CliError> {
    if !path.exists() {
        return Err(CliError::Data(format!("no record database at {}; run `huesearch label` first", path.display())));
    }
    search::load_records(path).context(format!("reading {}", path.display()))
}

pub fn search(config: &PipelineConfig, query: &str, json: bool) -> Result<(), CliError> {
    let query = Query::parse(query)?;
    let records = load_records(&config.records_path())?;
    // Prefer the full vocabulary of the tree and class list; fall back to
    // whatever the database itself mentions.
    let tree_file = tree_path(config);
    let vocabulary = match (&config.paths.classes, tree_file.exists()) {
        (Some(classes), true) if classes.exists() => {
            let classes = ClassVocabulary::load(classes).context("reading classes")?;
            let mut v = SearchVocabulary::new(&classes, &load_tree(&tree_file)?);
            v.classes.extend(SearchVocabulary::from_records(&records).classes);
            v
        }
        _ => SearchVocabulary::from_records(&records),
    };
    let ids = search::search(&query, &records, &vocabulary)?;
    if json {
        println!("{}", serde_json::to_string(&ids).map_err(|e| CliError::Internal(e.to_string()))?);
    } else {
        println!("[{}]", ids.join(", "));
    }
    Ok(())
}

pub struct EvaluateOptions {
    pub json: bool,
    pub confusion: Option<PathBuf>,
}

pub fn evaluate(config: &PipelineConfig, opts: &EvaluateOptions) -> Result<(), CliError> {
    let truth_path = require(&config.paths.truth, "truth")?;
    let mut predictions = load_records(&config.records_path())?;
    if let Some(mapping) = &config.paths.class_mapping {
        ClassMapping::load(mapping).context("reading the class mapping")?.apply(&mut predictions);
    }
    let truth = search::load_truth_csv(truth_path).context("reading ground truth")?;
    let report = search::evaluate(&predictions, &truth)?;
    if let Some(path) = &opts.confusion {
        write_atomic(path, report.confusion_csv().as_bytes())?;
    }
    if opts.json {
        println!("{}", report.to_json());
    } else {
        print!("{report}");
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum TreeFormat {
    Json,
    Dot,
}

pub fn export_tree(config: &PipelineConfig, tree: Option<&Path>, format: TreeFormat, out: Option<&Path>) -> Result<(), CliError> {
    let tree = load_tree(tree.unwrap_or(&tree_path(config)))?;
    let text = match format {
        TreeFormat::Dot => tree.to_dot(),
        TreeFormat::Json => {
            let mut buf = Vec::new();
            tree::save_tree(&tree, &mut buf)?;
            buf.push(b'\n');
            String::from_utf8(buf).map_err(|e| CliError::Internal(e.to_string()))?
        }
    };
    match out {
        Some(path) => write_atomic(path, text.as_bytes())?,
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Data(format!("stdout: {e}")))?,
    }
    Ok(())
}

pub struct SynthOptions {
    pub out: PathBuf,
    pub survey_size: usize,
    pub identities: usize,
    pub seed: u64,
}

/// Demo inputs: a synthetic survey, a labeled pedestrian fixture split into
/// validation and test halves, and a config wired to both.
pub fn synth(opts: &SynthOptions) -> Result<(), CliError> {
    if opts.identities < 2 {
        return Err(CliError::Usage("--identities must be at least 2".into()));
    }
    create_dir(&opts.out)?;
    let samples = synth::synthetic_survey(opts.survey_size, opts.seed, &SurveyModel::default());
    let mut buf = Vec::new();
    synth::write_survey_csv(&samples, &mut buf)?;
    write_atomic(&opts.out.join("survey.csv"), &buf)?;

    let fixture = synth::pedestrian_fixture(opts.identities, opts.seed, &SceneParams::market());
    let (validation, test) = fixture.split_at(opts.identities / 2);
    synth::export_fixture(validation, &opts.out.join("validation"))?;
    synth::export_fixture(test, &opts.out.join("test"))?;

    let config = "seed = 0\n\n\
        [paths]\n\
        survey = \"survey.csv\"\n\
        work_dir = \"work\"\n\
        manifest = \"test/manifest.csv\"\n\
        classes = \"test/classes.txt\"\n\
        truth = \"test/truth.csv\"\n\
        validation_manifest = \"validation/manifest.csv\"\n\
        validation_truth = \"validation/truth.csv\"\n\n\
        [pooling]\n\
        mode = \"average\"\n";
    write_atomic(&opts.out.join("huesearch.toml"), config.as_bytes())?;
    println!(
        "wrote {} survey answers and {} identities ({} validation, {} test) to {}",
        samples.len(),
        fixture.len(),
        validation.len(),
        test.len(),
        opts.out.display()
    );
    Ok(())
}
