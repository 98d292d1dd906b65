//! Deterministic synthetic data: a color-naming survey simulator and
//! rendered pedestrian crops with semantic maps and part-color annotations.
//!
//! Survey respondents are modeled as picking a name from the XKCD color
//! palette with probability proportional to
//! `prior(name) * exp(-dE(color, prototype)^2 / (2 T^2))` in CIELAB, plus a
//! fraction of careless answers and free-form junk.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::color::{rgb_to_lab, Rgb};
use crate::error::{Error, Result};
use crate::pipeline::{Frame, IdentityFrames, LabeledIdentity};
use crate::raster::ImageBuffer;
use crate::region::{ClassVocabulary, SemanticMap, BACKGROUND};
use crate::search::PersonRecord;
use crate::survey::{ColorSample, BERLIN_KAY};
use crate::util::mix_seed;

const PALETTE_TSV: &str = include_str!("../data/xkcd_palette.tsv");

pub struct Palette {
    pub names: Vec<String>,
    pub rgb: Vec<Rgb>,
    lab: Vec<[f64; 3]>,
}

/// The 949 named colors of the XKCD color survey with their reported RGB.
pub fn xkcd_palette() -> &'static Palette {
    static PALETTE: OnceLock<Palette> = OnceLock::new();
    PALETTE.get_or_init(|| {
        let mut names = Vec::new();
        let mut rgb = Vec::new();
        for line in PALETTE_TSV.lines().filter(|l| !l.is_empty()) {
            let (hex, name) = line.split_once('\t').expect("palette line");
            rgb.push(Rgb::from_hex(u32::from_str_radix(hex, 16).expect("palette hex")));
            names.push(name.to_string());
        }
        let lab = rgb.iter().map(|&c| rgb_to_lab(c)).collect();
        Palette { names, rgb, lab }
    })
}

impl Palette {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn rgb_of(&self, name: &str) -> Option<Rgb> {
        self.names.iter().position(|n| n == name).map(|i| self.rgb[i])
    }
}

fn lab_sq(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SurveyModel {
    /// Spread of answers around a prototype, in CIELAB units.
    pub temperature: f64,
    /// Prior weight of the eleven basic names relative to other names.
    pub basic_weight: f64,
    /// Share of answers ignoring the shown color.
    pub careless_rate: f64,
    /// Share of free-form junk answers.
    pub junk_rate: f64,
    /// Share of "grey" answers spelled "gray".
    pub gray_spelling: f64,
}

impl Default for SurveyModel {
    fn default() -> Self {
        SurveyModel {
            temperature: 12.0,
            basic_weight: 40.0,
            careless_rate: 0.05,
            junk_rate: 0.04,
            gray_spelling: 0.6,
        }
    }
}

impl SurveyModel {
    fn log_priors(&self, palette: &Palette) -> Vec<f64> {
        palette
            .names
            .iter()
            .map(|n| {
                let basic = BERLIN_KAY.contains(&n.as_str()) || n == "grey";
                if basic {
                    self.basic_weight.ln()
                } else {
                    0.0
                }
            })
            .collect()
    }

    fn spell(&self, name: &str, rng: &mut ChaCha8Rng) -> String {
        if name.contains("grey") && rng.random::<f64>() < self.gray_spelling {
            name.replace("grey", "gray")
        } else {
            name.to_string()
        }
    }
}

fn junk_label(rng: &mut ChaCha8Rng) -> String {
    const WORDS: [&str; 12] = [
        "idk", "ugly", "no idea", "poop", "baby puke", "meh", "asdf", "dunno", "booger", "mud",
        "eww", "colorblind",
    ];
    if rng.random::<f64>() < 0.5 {
        WORDS[rng.random_range(0..WORDS.len())].to_string()
    } else {
        let len = rng.random_range(3..10);
        (0..len).map(|_| char::from(b'a' + rng.random_range(0..26u8))).collect()
    }
}

/// `n` survey answers for uniformly drawn colors.
pub fn synthetic_survey(n: usize, seed: u64, model: &SurveyModel) -> Vec<ColorSample> {
    const CHUNK: usize = 4096;
    let palette = xkcd_palette();
    let log_prior = model.log_priors(palette);
    let prior_total: f64 = log_prior.iter().map(|l| l.exp()).sum();
    let inv_two_t2 = 1.0 / (2.0 * model.temperature * model.temperature);
    let chunks = n.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .flat_map_iter(|chunk| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, chunk as u64));
            let count = CHUNK.min(n - chunk * CHUNK);
            let mut weights = vec![0.0; palette.len()];
            let mut out = Vec::with_capacity(count);
            for _ in 0..count {
                let rgb = Rgb(rng.random());
                let roll: f64 = rng.random();
                let label = if roll < model.junk_rate {
                    junk_label(&mut rng)
                } else if roll < model.junk_rate + model.careless_rate {
                    let mut target = rng.random::<f64>() * prior_total;
                    let mut pick = palette.len() - 1;
                    for (i, l) in log_prior.iter().enumerate() {
                        target -= l.exp();
                        if target <= 0.0 {
                            pick = i;
                            break;
                        }
                    }
                    model.spell(&palette.names[pick], &mut rng)
                } else {
                    let lab = rgb_to_lab(rgb);
                    let mut total = 0.0;
                    for (i, w) in weights.iter_mut().enumerate() {
                        let logit = log_prior[i] - lab_sq(&lab, &palette.lab[i]) * inv_two_t2;
                        *w = if logit < -30.0 { 0.0 } else { logit.exp() };
                        total += *w;
                    }
                    let pick = if total > 0.0 {
                        let mut target = rng.random::<f64>() * total;
                        weights
                            .iter()
                            .position(|w| {
                                target -= w;
                                target <= 0.0
                            })
                            .unwrap_or(palette.len() - 1)
                    } else {
                        nearest(&lab, &palette.lab)
                    };
                    model.spell(&palette.names[pick], &mut rng)
                };
                out.push(ColorSample::new(rgb, &label).expect("non-empty label"));
            }
            out
        })
        .collect()
}

fn nearest(lab: &[f64; 3], protos: &[[f64; 3]]) -> usize {
    protos
        .iter()
        .enumerate()
        .min_by(|a, b| lab_sq(lab, a.1).total_cmp(&lab_sq(lab, b.1)))
        .map(|(i, _)| i)
        .expect("non-empty palette")
}

/// Writes samples as `r,g,b,"label"` lines.
pub fn write_survey_csv<W: Write>(samples: &[ColorSample], sink: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .quote_style(csv::QuoteStyle::NonNumeric)
        .from_writer(sink);
    for s in samples {
        w.write_record([
            s.rgb.r().to_string().as_str(),
            s.rgb.g().to_string().as_str(),
            s.rgb.b().to_string().as_str(),
            &s.label,
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Posterior over the eleven basic names under the survey model (equal
/// priors), sorted by decreasing probability.
pub fn basic_name_posterior(rgb: Rgb, temperature: f64) -> Vec<(&'static str, f64)> {
    static PROTOS: OnceLock<Vec<[f64; 3]>> = OnceLock::new();
    let protos = PROTOS.get_or_init(|| {
        let palette = xkcd_palette();
        BERLIN_KAY
            .iter()
            .map(|&n| {
                let proto = if n == "gray" { "grey" } else { n };
                rgb_to_lab(palette.rgb_of(proto).expect("basic name in palette"))
            })
            .collect()
    });
    let lab = rgb_to_lab(rgb);
    let logits: Vec<f64> = protos
        .iter()
        .map(|p| -lab_sq(&lab, p) / (2.0 * temperature * temperature))
        .collect();
    let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut out: Vec<(&'static str, f64)> = BERLIN_KAY
        .iter()
        .zip(weights)
        .map(|(&n, w)| (n, w / total))
        .collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(b.0)));
    out
}

/// Part classes of the rendered pedestrians, in class-id order.
pub const PART_CLASSES: [&str; 7] = ["hair", "face", "upper", "arms", "lower", "legs", "shoes"];

pub fn part_vocabulary() -> ClassVocabulary {
    ClassVocabulary::new(PART_CLASSES).expect("static vocabulary")
}

const HAIR: u8 = 0;
const FACE: u8 = 1;
const UPPER: u8 = 2;
const ARMS: u8 = 3;
const LOWER: u8 = 4;
const LEGS: u8 = 5;
const SHOES: u8 = 6;

/// Rendering and annotation settings for a pedestrian fixture.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneParams {
    pub width: usize,
    pub height: usize,
    pub frames_per_identity: (usize, usize),
    /// Number of camera profiles frames are drawn from.
    pub cameras: usize,
    /// Range of per-camera exposure gains.
    pub gain: (f64, f64),
    /// Range of per-camera haze transmission (1 = clear).
    pub transmission: (f64, f64),
    pub cast_sigma: f64,
    pub shadow_probability: f64,
    pub noise_sigma: f64,
    /// Standard deviation of segmentation misalignment, in pixels of a
    /// 64-pixel-wide crop.
    pub mask_jitter: f64,
    /// Parts carrying ground-truth color labels.
    pub annotated: Vec<&'static str>,
    /// Minimum basic-name posterior of an annotated color.
    pub annotation_confidence: f64,
    pub temperature: f64,
}

impl SceneParams {
    /// Multi-frame surveillance crops annotated on upper and lower clothing.
    pub fn market() -> Self {
        SceneParams {
            width: 64,
            height: 128,
            frames_per_identity: (2, 6),
            cameras: 6,
            gain: (0.55, 1.1),
            transmission: (0.7, 1.0),
            cast_sigma: 0.06,
            shadow_probability: 0.3,
            noise_sigma: 7.0,
            mask_jitter: 1.5,
            annotated: vec!["upper", "lower"],
            annotation_confidence: 0.6,
            temperature: SurveyModel::default().temperature,
        }
    }

    /// Single-frame crops annotated on clothing, with semantic maps at four
    /// times the usual crop resolution.
    pub fn pcn() -> Self {
        SceneParams {
            width: 256,
            height: 512,
            frames_per_identity: (1, 1),
            cameras: 4,
            gain: (0.7, 1.1),
            transmission: (0.85, 1.0),
            shadow_probability: 0.2,
            noise_sigma: 5.0,
            mask_jitter: 1.0,
            ..SceneParams::market()
        }
    }
}

struct Camera {
    gain: f64,
    transmission: f64,
    cast: [f64; 3],
    airlight: f64,
}

struct Appearance {
    hair: Rgb,
    skin: Rgb,
    upper: Rgb,
    stripe: Option<(Rgb, usize)>,
    lower: Rgb,
    shoes: Rgb,
    shorts: bool,
    long_hair: bool,
    long_sleeves: bool,
}

#[derive(Clone, Copy)]
struct Pose {
    cx: f64,
    top: f64,
    scale: f64,
}

const SKIN: [Rgb; 6] = [
    Rgb::new(224, 172, 105),
    Rgb::new(241, 194, 125),
    Rgb::new(198, 134, 66),
    Rgb::new(141, 85, 36),
    Rgb::new(255, 219, 172),
    Rgb::new(92, 57, 35),
];

fn garment_prior(part: u8) -> &'static [(&'static str, f64)] {
    match part {
        HAIR => &[("black", 0.6), ("brown", 0.3), ("yellow", 0.05), ("gray", 0.05)],
        UPPER => &[
            ("black", 0.22),
            ("white", 0.16),
            ("gray", 0.12),
            ("blue", 0.12),
            ("red", 0.1),
            ("green", 0.07),
            ("purple", 0.06),
            ("yellow", 0.05),
            ("pink", 0.05),
            ("orange", 0.03),
            ("brown", 0.02),
        ],
        LOWER => &[
            ("black", 0.34),
            ("blue", 0.24),
            ("gray", 0.14),
            ("brown", 0.08),
            ("white", 0.07),
            ("green", 0.04),
            ("red", 0.03),
            ("pink", 0.02),
            ("purple", 0.02),
            ("yellow", 0.02),
        ],
        _ => &[
            ("black", 0.45),
            ("white", 0.2),
            ("gray", 0.1),
            ("brown", 0.15),
            ("blue", 0.05),
            ("red", 0.05),
        ],
    }
}

fn pick_weighted<'a>(items: &'a [(&'a str, f64)], rng: &mut ChaCha8Rng) -> &'a str {
    let total: f64 = items.iter().map(|i| i.1).sum();
    let mut target = rng.random::<f64>() * total;
    for (name, w) in items {
        target -= w;
        if target <= 0.0 {
            return name;
        }
    }
    items[items.len() - 1].0
}

/// A color whose most probable basic name is `label` with posterior at
/// least `confidence`.
fn color_named(label: &str, confidence: f64, temperature: f64, rng: &mut ChaCha8Rng) -> Rgb {
    for _ in 0..200_000 {
        let c = Rgb(rng.random());
        let post = basic_name_posterior(c, temperature);
        if post[0].0 == label && post[0].1 >= confidence {
            return c;
        }
    }
    let proto = if label == "gray" { "grey" } else { label };
    xkcd_palette().rgb_of(proto).expect("basic name in palette")
}

/// Ideal part layout in a `height` x `width` crop.
fn part_at(x: f64, y: f64, pose: Pose, app: &Appearance) -> u8 {
    let u = (x - pose.cx) / pose.scale;
    let v = (y - pose.top) / pose.scale;
    let au = u.abs();
    let head = (u / 7.5).powi(2) + ((v - 14.0) / 10.0).powi(2) <= 1.0;
    if head {
        return if v < 10.0 { HAIR } else { FACE };
    }
    if app.long_hair && (5.0..=9.0).contains(&au) && (10.0..30.0).contains(&v) {
        return HAIR;
    }
    if au < 3.0 && (23.0..27.0).contains(&v) {
        return FACE;
    }
    if (27.0..64.0).contains(&v) {
        let shoulder = if v < 31.0 { 12.0 - (31.0 - v) } else { 12.0 };
        if au <= shoulder {
            return UPPER;
        }
        if au <= 17.0 && (29.0..66.0).contains(&v) && v < 31.0 + au {
            return if app.long_sleeves || v < 42.0 { UPPER } else { ARMS };
        }
    }
    if (64.0..66.0).contains(&v) && (12.0..=17.0).contains(&au) {
        return if app.long_sleeves { UPPER } else { ARMS };
    }
    let lower_end = if app.shorts { 88.0 } else { 110.0 };
    if (64.0..lower_end).contains(&v) && au <= 11.0 {
        if v > 76.0 && au < 1.5 {
            return BACKGROUND;
        }
        return LOWER;
    }
    if (lower_end..110.0).contains(&v) && (2.0..=8.0).contains(&au) {
        return LEGS;
    }
    if (110.0..118.0).contains(&v) && (1.5..=10.0).contains(&au) {
        return SHOES;
    }
    BACKGROUND
}

fn albedo(part: u8, v: f64, app: &Appearance) -> Rgb {
    match part {
        HAIR => app.hair,
        FACE | ARMS | LEGS => app.skin,
        UPPER => match app.stripe {
            Some((c, period)) if (v.max(0.0) as usize / period) % 2 == 1 => c,
            _ => app.upper,
        },
        LOWER => app.lower,
        _ => app.shoes,
    }
}

struct Background {
    base: [f64; 3],
    rects: Vec<(usize, usize, usize, usize, [f64; 3])>,
}

impl Background {
    fn random(w: usize, h: usize, rng: &mut ChaCha8Rng) -> Self {
        let g = rng.random_range(90.0..190.0);
        let base = [g + rng.random_range(-15.0..15.0), g, g + rng.random_range(-15.0..15.0)];
        let rects = (0..rng.random_range(2..7))
            .map(|_| {
                let x0 = rng.random_range(0..w);
                let y0 = rng.random_range(0..h);
                let x1 = (x0 + rng.random_range(4..w)).min(w);
                let y1 = (y0 + rng.random_range(8..h / 2)).min(h);
                let c: [u8; 3] = rng.random();
                (x0, y0, x1, y1, c.map(f64::from))
            })
            .collect();
        Background { base, rects }
    }

    fn at(&self, x: usize, y: usize, h: usize) -> [f64; 3] {
        for &(x0, y0, x1, y1, c) in self.rects.iter().rev() {
            if (x0..x1).contains(&x) && (y0..y1).contains(&y) {
                return c;
            }
        }
        let fade = 1.0 - 0.25 * y as f64 / h as f64;
        self.base.map(|c| c * fade)
    }
}

fn render_frame(
    id: String,
    app: &Appearance,
    cam: &Camera,
    scene: &SceneParams,
    rng: &mut ChaCha8Rng,
) -> Frame {
    let (w, h) = (scene.width, scene.height);
    let sx = w as f64 / 64.0;
    let sy = h as f64 / 128.0;
    let pose = Pose {
        cx: w as f64 / 2.0 + rng.random_range(-3.0..=3.0) * sx,
        top: rng.random_range(2.0..=7.0) * sy,
        scale: rng.random_range(0.92..=1.04) * sy,
    };
    let jitter = Normal::new(0.0, scene.mask_jitter.max(1e-9)).expect("finite jitter");
    let seg_pose = Pose {
        cx: pose.cx + jitter.sample(rng) * sx,
        top: pose.top + jitter.sample(rng) * sy,
        scale: pose.scale * (1.0 + 0.015 * jitter.sample(rng)),
    };
    let gain = cam.gain * rng.random_range(0.85..=1.15);
    let shadow = (rng.random::<f64>() < scene.shadow_probability).then(|| {
        let slope = rng.random_range(-1.5..1.5);
        let offset = rng.random_range(0.3..0.7) * w as f64;
        (slope, offset, rng.random::<bool>())
    });
    let background = Background::random(w, h, rng);
    let noise = Normal::new(0.0, scene.noise_sigma.max(1e-9)).expect("finite noise");

    let mut pixels = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
            let part = part_at(fx, fy, pose, app);
            let (base, shade) = if part == BACKGROUND {
                (background.at(x, y, h), 1.0)
            } else {
                let u = ((fx - pose.cx) / (14.0 * pose.scale)).clamp(-1.0, 1.0);
                let v = (fy - pose.top) / pose.scale;
                (albedo(part, v, app).to_f64(), 1.0 - 0.2 * u * u)
            };
            let mut light = gain * shade;
            if let Some((slope, offset, side)) = shadow {
                if ((fx - offset - slope * (fy - h as f64 / 2.0)) > 0.0) == side {
                    light *= 0.55;
                }
            }
            let mut c = [0.0; 3];
            for ch in 0..3 {
                let lit = base[ch] * light * cam.cast[ch];
                let hazed = lit * cam.transmission + cam.airlight * (1.0 - cam.transmission);
                c[ch] = hazed + noise.sample(rng);
            }
            pixels.push(Rgb::from_f64(c));
        }
    }
    let image = ImageBuffer::new(w, h, pixels).expect("consistent size");
    let map = SemanticMap::from_fn(w, h, PART_CLASSES.len() as u8, |x, y| {
        part_at(x as f64 + 0.5, y as f64 + 0.5, seg_pose, app)
    })
    .expect("valid labels");
    Frame { id, image, map }
}

/// Renders `identities` pedestrians, each with its annotated part colors.
pub fn pedestrian_fixture(identities: usize, seed: u64, scene: &SceneParams) -> Vec<LabeledIdentity> {
    let mut cam_rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x00ca_3e7a));
    let cast = Normal::new(1.0, scene.cast_sigma.max(1e-9)).expect("finite cast");
    let cameras: Vec<Camera> = (0..scene.cameras.max(1))
        .map(|_| Camera {
            gain: cam_rng.random_range(scene.gain.0..=scene.gain.1),
            transmission: cam_rng.random_range(scene.transmission.0..=scene.transmission.1),
            cast: [0; 3].map(|_: i32| cast.sample(&mut cam_rng)),
            airlight: cam_rng.random_range(170.0..230.0),
        })
        .collect();

    (0..identities)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, i as u64 + 1));
            let mut truth = BTreeMap::new();
            let mut garment = |part: u8, rng: &mut ChaCha8Rng| {
                let label = pick_weighted(garment_prior(part), rng);
                let name = PART_CLASSES[part as usize];
                if scene.annotated.contains(&name) {
                    truth.insert(name.to_string(), label.to_string());
                }
                color_named(label, scene.annotation_confidence, scene.temperature, rng)
            };
            let hair = garment(HAIR, &mut rng);
            let upper = garment(UPPER, &mut rng);
            let lower = garment(LOWER, &mut rng);
            let shoes = garment(SHOES, &mut rng);
            let stripe = (rng.random::<f64>() < 0.15).then(|| {
                let c: [u8; 3] = rng.random();
                (Rgb(c), rng.random_range(6..10))
            });
            let app = Appearance {
                hair,
                skin: SKIN[rng.random_range(0..SKIN.len())],
                upper,
                stripe,
                lower,
                shoes,
                shorts: rng.random::<f64>() < 0.2,
                long_hair: rng.random::<f64>() < 0.3,
                long_sleeves: rng.random::<f64>() < 0.6,
            };
            let id = format!("{i:04}");
            let (lo, hi) = scene.frames_per_identity;
            let n_frames = rng.random_range(lo.max(1)..=hi.max(lo).max(1));
            let frames = (0..n_frames)
                .map(|f| {
                    let cam = &cameras[rng.random_range(0..cameras.len())];
                    render_frame(format!("{id}_{f:02}"), &app, cam, scene, &mut rng)
                })
                .collect();
            LabeledIdentity {
                frames: IdentityFrames {
                    id: id.clone(),
                    frames,
                },
                truth: PersonRecord::labels_only(id, truth),
            }
        })
        .collect()
}

/// Writes a fixture as PNG crops and index-PNG maps with `classes.txt`,
/// `manifest.csv` (`identity,frame,image,mask`) and `truth.csv`
/// (`identity,class,label`).
pub fn export_fixture(items: &[LabeledIdentity], dir: &Path) -> Result<()> {
    let images = dir.join("images");
    let masks = dir.join("masks");
    for d in [&images, &masks] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let classes = PART_CLASSES.join("\n") + "\n";
    let classes_path = dir.join("classes.txt");
    fs::write(&classes_path, classes).map_err(|e| Error::io(&classes_path, e))?;

    let mut manifest = csv::Writer::from_writer(Vec::new());
    manifest.write_record(["identity", "frame", "image", "mask"])?;
    let mut truth = csv::Writer::from_writer(Vec::new());
    truth.write_record(["identity", "class", "label"])?;
    for item in items {
        for frame in &item.frames.frames {
            let image = format!("images/{}.png", frame.id);
            let mask = format!("masks/{}.png", frame.id);
            frame.image.save(&dir.join(&image))?;
            frame.map.save(&dir.join(&mask))?;
            manifest.write_record([item.frames.id.as_str(), &frame.id, &image, &mask])?;
        }
        for (class, label) in &item.truth.parts {
            truth.write_record([item.truth.id.as_str(), class, label])?;
        }
    }
    for (name, w) in [("manifest.csv", manifest), ("truth.csv", truth)] {
        let bytes = w.into_inner().map_err(|e| Error::Other(e.to_string()))?;
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
