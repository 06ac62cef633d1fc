//! Dataset post-processing and quality control: pair manifesting,
//! misalignment rejection via residual analysis, and stratified
//! sampling.
//!
//! Expected on-disk layout:
//! `<category>/<light>/<angle>/<environment>/<id>_{hl,gt}.png`.
//! An id may carry an optional language prefix, e.g. `en-0042`.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use walkdir::WalkDir;

use crate::imagecore::{self, to_grayscale, GrayImage, ImageError};
use crate::prior::{self, PriorConfig};

#[derive(Debug, Error)]
pub enum QcError {
    #[error("root {0} contains no image pairs")]
    EmptyRoot(PathBuf),
    #[error("duplicate id {id}: {first} and {second}")]
    DuplicateId {
        id: String,
        first: PathBuf,
        second: PathBuf,
    },
    #[error("empty manifest")]
    EmptyManifest,
    #[error("fraction {0} out of (0, 1]")]
    InvalidFraction(f64),
    #[error("unknown stratum field {0:?}")]
    UnknownStratum(String),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("manifest I/O failed: {0}")]
    Io(String),
}

macro_rules! closed_enum {
    ($name:ident { $($variant:ident => $tag:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(rename_all = "snake_case")]
        pub enum $name {
            $($variant),+
        }

        impl FromStr for $name {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($tag => Ok(Self::$variant),)+
                    other => Err(format!(concat!("unknown ", stringify!($name), " {:?}"), other)),
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                let tag = match self {
                    $(Self::$variant => $tag),+
                };
                f.write_str(tag)
            }
        }
    };
}

closed_enum!(Category {
    SingleLeaf => "single_leaf",
    Book => "book",
    Poster => "poster",
    Menu => "menu",
    Card => "card",
    PlasticSleeved => "plastic_sleeved",
});

closed_enum!(Light {
    Cold => "cold",
    White => "white",
    Warm => "warm",
    Red => "red",
    Yellow => "yellow",
    Green => "green",
    Cyan => "cyan",
    Blue => "blue",
    Purple => "purple",
});

closed_enum!(Angle {
    Vertical => "vertical",
    Deg15 => "deg15",
    Deg30 => "deg30",
    Deg45 => "deg45",
    Gt45 => "gt45",
});

closed_enum!(Environment {
    Laboratory => "laboratory",
    Daily => "daily",
});

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairRecord {
    pub id: String,
    pub highlight_path: PathBuf,
    pub gt_path: PathBuf,
    pub category: Category,
    pub light: Light,
    pub angle: Angle,
    pub environment: Environment,
    pub language: String,
}

#[derive(Debug, Clone)]
pub struct Manifest {
    pub records: Vec<PairRecord>,
    pub source_root: PathBuf,
}

impl Manifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SkippedEntry {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Debug)]
pub struct ScanResult {
    pub manifest: Manifest,
    pub skipped: Vec<SkippedEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Aligned,
    Misaligned,
}

#[derive(Debug, Clone, Serialize)]
pub struct AlignmentReport {
    pub pair_id: String,
    pub residual_outside_mask: f64,
    pub estimated_shift: (i32, i32),
    pub verdict: Verdict,
}

#[derive(Debug, Clone, Copy)]
pub struct AlignmentConfig {
    /// dilation radius (Chebyshev) applied to the binary highlight mask
    pub dilation: usize,
    /// shift search window, +-pixels per axis
    pub max_shift: i32,
    /// mean-abs residual tolerance outside the dilated mask, unit scale
    pub residual_tol: f64,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        Self {
            dilation: 5,
            max_shift: 8,
            residual_tol: 0.02,
        }
    }
}

fn parse_language(id: &str) -> String {
    match id.split_once('-') {
        Some((prefix, _))
            if (2..=3).contains(&prefix.len())
                && prefix.chars().all(|c| c.is_ascii_alphabetic()) =>
        {
            prefix.to_string()
        }
        _ => "und".to_string(),
    }
}

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "pgm", "ppm"];

/// Walk `root` and build one record per discovered highlight/gt pair.
/// Unparseable entries are reported in `skipped`, never silently
/// dropped. Duplicate ids are an error naming both paths.
pub fn scan_manifest(root: impl AsRef<Path>) -> Result<ScanResult, QcError> {
    let root = root.as_ref();
    let mut skipped = Vec::new();
    let mut pending: BTreeMap<String, (Option<PathBuf>, Option<PathBuf>, PathBuf)> =
        BTreeMap::new();
    let mut labels: BTreeMap<String, (Category, Light, Angle, Environment)> = BTreeMap::new();

    for entry in WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| QcError::Io(e.to_string()))?;
        if !entry.file_type().is_file() {
            continue;
        }
        let path = entry.path();
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        if !IMAGE_EXTENSIONS.contains(&ext) {
            continue;
        }
        let rel = path.strip_prefix(root).unwrap();
        let segments: Vec<&str> = rel
            .parent()
            .map(|p| p.iter().filter_map(|s| s.to_str()).collect())
            .unwrap_or_default();
        if segments.len() != 4 {
            skipped.push(SkippedEntry {
                path: path.to_path_buf(),
                reason: format!(
                    "expected category/light/angle/environment/<file>, found {} path segments",
                    segments.len()
                ),
            });
            continue;
        }
        let parsed = (
            segments[0].parse::<Category>(),
            segments[1].parse::<Light>(),
            segments[2].parse::<Angle>(),
            segments[3].parse::<Environment>(),
        );
        let (category, light, angle, environment) = match parsed {
            (Ok(c), Ok(l), Ok(a), Ok(e)) => (c, l, a, e),
            (c, l, a, e) => {
                let reason = [c.err(), l.err(), a.err(), e.err()]
                    .into_iter()
                    .flatten()
                    .collect::<Vec<_>>()
                    .join("; ");
                skipped.push(SkippedEntry {
                    path: path.to_path_buf(),
                    reason,
                });
                continue;
            }
        };
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
        let (id, is_hl) = if let Some(id) = stem.strip_suffix("_hl") {
            (id, true)
        } else if let Some(id) = stem.strip_suffix("_gt") {
            (id, false)
        } else {
            skipped.push(SkippedEntry {
                path: path.to_path_buf(),
                reason: "file name lacks _hl/_gt suffix".to_string(),
            });
            continue;
        };

        let parent = path.parent().unwrap().to_path_buf();
        let slot = pending
            .entry(id.to_string())
            .or_insert_with(|| (None, None, parent.clone()));
        if slot.2 != parent {
            return Err(QcError::DuplicateId {
                id: id.to_string(),
                first: slot.2.clone(),
                second: parent,
            });
        }
        let target = if is_hl { &mut slot.0 } else { &mut slot.1 };
        if let Some(existing) = target {
            return Err(QcError::DuplicateId {
                id: id.to_string(),
                first: existing.clone(),
                second: path.to_path_buf(),
            });
        }
        *target = Some(path.to_path_buf());
        labels.insert(id.to_string(), (category, light, angle, environment));
    }

    let mut records = Vec::new();
    for (id, (hl, gt, dir)) in pending {
        match (hl, gt) {
            (Some(highlight_path), Some(gt_path)) => {
                let (category, light, angle, environment) = labels[&id];
                let language = parse_language(&id);
                records.push(PairRecord {
                    id,
                    highlight_path,
                    gt_path,
                    category,
                    light,
                    angle,
                    environment,
                    language,
                });
            }
            (Some(p), None) => skipped.push(SkippedEntry {
                path: p,
                reason: format!("missing gt file for id {id:?} in {}", dir.display()),
            }),
            (None, Some(p)) => skipped.push(SkippedEntry {
                path: p,
                reason: format!("missing highlight file for id {id:?} in {}", dir.display()),
            }),
            (None, None) => unreachable!(),
        }
    }

    if records.is_empty() {
        return Err(QcError::EmptyRoot(root.to_path_buf()));
    }
    Ok(ScanResult {
        manifest: Manifest {
            records,
            source_root: root.to_path_buf(),
        },
        skipped,
    })
}

fn dilate(mask: &[u8], w: usize, h: usize, radius: usize) -> Vec<u8> {
    if radius == 0 {
        return mask.to_vec();
    }
    let r = radius as i64;
    let mut out = vec![0u8; mask.len()];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            'search: for dy in -r..=r {
                for dx in -r..=r {
                    let (sx, sy) = (x + dx, y + dy);
                    if sx >= 0
                        && sy >= 0
                        && sx < w as i64
                        && sy < h as i64
                        && mask[(sy as usize) * w + sx as usize] == 1
                    {
                        out[(y as usize) * w + x as usize] = 1;
                        break 'search;
                    }
                }
            }
        }
    }
    out
}

fn gradient_magnitude(img: &GrayImage) -> Vec<f64> {
    let (w, h) = (img.width, img.height);
    let mut out = vec![0.0f64; w * h];
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let dx = (img.sample(x + 1, y) - img.sample(x - 1, y)) as f64 * 0.5;
            let dy = (img.sample(x, y + 1) - img.sample(x, y - 1)) as f64 * 0.5;
            out[y * w + x] = (dx * dx + dy * dy).sqrt();
        }
    }
    out
}

/// Integer shift of `moved` relative to `reference` by argmax of
/// zero-mean normalized cross-correlation of gradient magnitudes.
/// Ties prefer the smaller displacement, so featureless inputs report
/// `(0, 0)`.
pub fn estimate_shift(
    reference: &GrayImage,
    moved: &GrayImage,
    max_shift: i32,
) -> (i32, i32) {
    let (w, h) = (reference.width as i64, reference.height as i64);
    let ga = gradient_magnitude(reference);
    let gb = gradient_magnitude(moved);

    let mut best = (0i32, 0i32);
    let mut best_score = f64::NEG_INFINITY;
    let mut offsets: Vec<(i32, i32)> = Vec::new();
    for dy in -max_shift..=max_shift {
        for dx in -max_shift..=max_shift {
            offsets.push((dx, dy));
        }
    }
    // small displacements first so ties resolve toward (0, 0)
    offsets.sort_by_key(|&(dx, dy)| (dx.abs().max(dy.abs()), dx.abs() + dy.abs(), dy, dx));

    for (dx, dy) in offsets {
        // moved(x, y) ~ reference(x - dx, y - dy)
        let mut sum_a = 0.0;
        let mut sum_b = 0.0;
        let mut n = 0.0;
        let mut dots = (0.0, 0.0, 0.0);
        let mut samples: Vec<(f64, f64)> = Vec::new();
        for y in 0..h {
            for x in 0..w {
                let (rx, ry) = (x - dx as i64, y - dy as i64);
                if rx < 0 || ry < 0 || rx >= w || ry >= h {
                    continue;
                }
                let a = ga[(ry * w + rx) as usize];
                let b = gb[(y * w + x) as usize];
                sum_a += a;
                sum_b += b;
                n += 1.0;
                samples.push((a, b));
            }
        }
        if n < 4.0 {
            continue;
        }
        let (ma, mb) = (sum_a / n, sum_b / n);
        for (a, b) in samples {
            dots.0 += (a - ma) * (b - mb);
            dots.1 += (a - ma) * (a - ma);
            dots.2 += (b - mb) * (b - mb);
        }
        let denom = (dots.1 * dots.2).sqrt();
        let score = if denom > 0.0 { dots.0 / denom } else { 0.0 };
        if score > best_score {
            best_score = score;
            best = (dx, dy);
        }
    }
    best
}

/// Residual-based alignment check. The binary highlight mask is dilated
/// and excluded; residual energy outside it, or a nonzero estimated
/// shift, marks the pair misaligned.
pub fn check_alignment(
    pair: &PairRecord,
    cfg: &AlignmentConfig,
) -> Result<AlignmentReport, QcError> {
    let hl = imagecore::load_image(&pair.highlight_path)?;
    let gt = imagecore::load_image(&pair.gt_path)?;
    if hl.width != gt.width || hl.height != gt.height {
        return Ok(AlignmentReport {
            pair_id: pair.id.clone(),
            residual_outside_mask: 0.0,
            estimated_shift: (0, 0),
            verdict: Verdict::Misaligned,
        });
    }

    let result = prior::generate_prior(&hl, &gt, &PriorConfig::default())
        .map_err(|e| QcError::Io(e.to_string()))?;
    let dilated = dilate(
        &result.binary.data,
        result.binary.width,
        result.binary.height,
        cfg.dilation,
    );

    let hl_gray = to_grayscale(&hl);
    let gt_gray = to_grayscale(&gt);
    let mut sum = 0.0f64;
    let mut count = 0u64;
    for (i, (&a, &b)) in hl_gray.data.iter().zip(&gt_gray.data).enumerate() {
        if dilated[i] == 0 {
            sum += (a - b).abs() as f64;
            count += 1;
        }
    }
    let residual_outside_mask = if count > 0 { sum / count as f64 } else { 0.0 };
    let estimated_shift = estimate_shift(&gt_gray, &hl_gray, cfg.max_shift);

    let verdict = if residual_outside_mask > cfg.residual_tol || estimated_shift != (0, 0) {
        Verdict::Misaligned
    } else {
        Verdict::Aligned
    };
    Ok(AlignmentReport {
        pair_id: pair.id.clone(),
        residual_outside_mask,
        estimated_shift,
        verdict,
    })
}

/// Partition the manifest by alignment verdict, preserving record order.
pub fn filter_aligned(
    m: &Manifest,
    cfg: &AlignmentConfig,
) -> Result<(Manifest, Vec<AlignmentReport>), QcError> {
    if m.is_empty() {
        return Err(QcError::EmptyManifest);
    }
    let mut kept = Vec::new();
    let mut rejected = Vec::new();
    for record in &m.records {
        let report = check_alignment(record, cfg)?;
        if report.verdict == Verdict::Aligned {
            kept.push(record.clone());
        } else {
            rejected.push(report);
        }
    }
    Ok((
        Manifest {
            records: kept,
            source_root: m.source_root.clone(),
        },
        rejected,
    ))
}

pub const STRATUM_FIELDS: [&str; 5] = ["category", "light", "angle", "environment", "language"];

fn stratum_key(record: &PairRecord, strata: &[String]) -> Result<Vec<String>, QcError> {
    strata
        .iter()
        .map(|field| match field.as_str() {
            "category" => Ok(record.category.to_string()),
            "light" => Ok(record.light.to_string()),
            "angle" => Ok(record.angle.to_string()),
            "environment" => Ok(record.environment.to_string()),
            "language" => Ok(record.language.clone()),
            other => Err(QcError::UnknownStratum(other.to_string())),
        })
        .collect()
}

/// Sample `ceil(fraction * n)` records without replacement from every
/// stratum (cross-product of the chosen fields). Deterministic for a
/// fixed seed; output is ordered by id.
pub fn stratified_sample(
    m: &Manifest,
    fraction: f64,
    strata: &[String],
    seed: u64,
) -> Result<Manifest, QcError> {
    if m.is_empty() {
        return Err(QcError::EmptyManifest);
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(QcError::InvalidFraction(fraction));
    }
    let mut groups: BTreeMap<Vec<String>, Vec<&PairRecord>> = BTreeMap::new();
    for record in &m.records {
        groups
            .entry(stratum_key(record, strata)?)
            .or_default()
            .push(record);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut selected = Vec::new();
    for (_, mut members) in groups {
        members.sort_by(|a, b| a.id.cmp(&b.id));
        let take = ((fraction * members.len() as f64).ceil() as usize).min(members.len());
        members.shuffle(&mut rng);
        selected.extend(members.into_iter().take(take).cloned());
    }
    selected.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(Manifest {
        records: selected,
        source_root: m.source_root.clone(),
    })
}

pub const MANIFEST_CSV_HEADER: [&str; 8] = [
    "id",
    "highlight_path",
    "gt_path",
    "category",
    "light",
    "angle",
    "environment",
    "language",
];

pub fn write_manifest_csv(m: &Manifest, path: impl AsRef<Path>) -> Result<(), QcError> {
    let mut writer = csv::Writer::from_path(path.as_ref()).map_err(|e| QcError::Io(e.to_string()))?;
    writer
        .write_record(MANIFEST_CSV_HEADER)
        .map_err(|e| QcError::Io(e.to_string()))?;
    for r in &m.records {
        writer
            .write_record([
                r.id.as_str(),
                &r.highlight_path.display().to_string(),
                &r.gt_path.display().to_string(),
                &r.category.to_string(),
                &r.light.to_string(),
                &r.angle.to_string(),
                &r.environment.to_string(),
                r.language.as_str(),
            ])
            .map_err(|e| QcError::Io(e.to_string()))?;
    }
    writer.flush().map_err(|e| QcError::Io(e.to_string()))?;
    Ok(())
}

pub fn read_manifest_csv(path: impl AsRef<Path>) -> Result<Manifest, QcError> {
    let mut reader =
        csv::Reader::from_path(path.as_ref()).map_err(|e| QcError::Io(e.to_string()))?;
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| QcError::Io(e.to_string()))?;
        if row.len() != 8 {
            return Err(QcError::Io(format!("expected 8 columns, got {}", row.len())));
        }
        records.push(PairRecord {
            id: row[0].to_string(),
            highlight_path: PathBuf::from(&row[1]),
            gt_path: PathBuf::from(&row[2]),
            category: row[3].parse().map_err(QcError::Io)?,
            light: row[4].parse().map_err(QcError::Io)?,
            angle: row[5].parse().map_err(QcError::Io)?,
            environment: row[6].parse().map_err(QcError::Io)?,
            language: row[7].to_string(),
        });
    }
    Ok(Manifest {
        records,
        source_root: PathBuf::new(),
    })
}

pub fn write_manifest_jsonl(m: &Manifest, path: impl AsRef<Path>) -> Result<(), QcError> {
    let mut file = std::fs::File::create(path.as_ref()).map_err(|e| QcError::Io(e.to_string()))?;
    for r in &m.records {
        let line = serde_json::to_string(r).map_err(|e| QcError::Io(e.to_string()))?;
        writeln!(file, "{line}").map_err(|e| QcError::Io(e.to_string()))?;
    }
    Ok(())
}

pub fn write_reports_jsonl(
    reports: &[AlignmentReport],
    path: impl AsRef<Path>,
) -> Result<(), QcError> {
    let mut file = std::fs::File::create(path.as_ref()).map_err(|e| QcError::Io(e.to_string()))?;
    for r in reports {
        let line = serde_json::to_string(r).map_err(|e| QcError::Io(e.to_string()))?;
        writeln!(file, "{line}").map_err(|e| QcError::Io(e.to_string()))?;
    }
    Ok(())
}
