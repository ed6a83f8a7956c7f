//! Dataset manifests: a TOML file declaring the dataset root, class list,
//! split tag, sensor geometry, and optional per-class subsampling.
//!
//! Expected layout under `root`: one directory per class holding `.bin`
//! event files, or a flat directory plus a `labels` file mapping file names
//! to class names (one `name class` pair per line).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::{EventStream, Geometry};
use crate::io::format::{parse_records, ParseOptions};

/// Sensor geometry declaration: explicit, or derived from the union of event
/// extents across the dataset (for recordings without a fixed frame).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GeometrySpec {
    Declared(Geometry),
    Mode(String),
}

impl GeometrySpec {
    fn validate(&self) -> Result<()> {
        match self {
            GeometrySpec::Declared(g) => {
                if g.width == 0 || g.height == 0 {
                    return Err(Error::Config("manifest geometry must be positive".into()));
                }
                Ok(())
            }
            GeometrySpec::Mode(mode) if mode == "from_events" => Ok(()),
            GeometrySpec::Mode(mode) => Err(Error::Config(format!(
                "manifest geometry must be {{ width, height }} or \"from_events\", got \"{mode}\""
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    /// Dataset root, resolved relative to the manifest file when relative.
    pub root: PathBuf,
    /// Split tag, e.g. "train" or "test"; informational.
    pub split: String,
    pub geometry: GeometrySpec,
    pub classes: Vec<String>,
    /// Keep only the first K samples per class; 0 keeps everything.
    #[serde(default)]
    pub subsample: usize,
    /// Optional file-to-class map for flat layouts.
    #[serde(default)]
    pub labels_file: Option<PathBuf>,
    /// Ordering slack passed to the parser, microseconds.
    #[serde(default)]
    pub ordering_slack_us: i64,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::Config("manifest classes must not be empty".into()));
        }
        self.geometry.validate()
    }
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut manifest: DatasetManifest =
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    manifest.validate()?;
    if manifest.root.is_relative() {
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        manifest.root = base.join(&manifest.root);
    }
    Ok(manifest)
}

/// A fully loaded, labeled dataset.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub geometry: Geometry,
    pub classes: Vec<String>,
    /// Streams with labels set, in deterministic enumeration order
    /// (classes in manifest order, files sorted by name within a class).
    pub samples: Vec<EventStream>,
    /// Non-fatal observations, e.g. empty class directories.
    pub warnings: Vec<String>,
}

impl Dataset {
    pub fn labels(&self) -> Vec<usize> {
        self.samples
            .iter()
            .map(|s| s.label.expect("dataset samples are labeled"))
            .collect()
    }

    pub fn per_class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes.len()];
        for s in &self.samples {
            counts[s.label.expect("labeled")] += 1;
        }
        counts
    }
}

/// Loads every sample listed by the manifest. `subsample_override`, when
/// given, replaces the manifest's per-class cap.
pub fn load_dataset(
    manifest: &DatasetManifest,
    subsample_override: Option<usize>,
) -> Result<Dataset> {
    manifest.validate()?;
    let subsample = subsample_override.unwrap_or(manifest.subsample);
    let opts = ParseOptions {
        ordering_slack_us: manifest.ordering_slack_us,
    };
    let mut warnings = Vec::new();

    // enumerate (path, label) deterministically
    let mut listed: Vec<(PathBuf, usize)> = Vec::new();
    if let Some(labels_file) = &manifest.labels_file {
        let labels_path = if labels_file.is_relative() {
            manifest.root.join(labels_file)
        } else {
            labels_file.clone()
        };
        let text = std::fs::read_to_string(&labels_path).map_err(|e| Error::io(&labels_path, e))?;
        let mut per_class = vec![0usize; manifest.classes.len()];
        for (line_no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (name, class) = line.split_once(char::is_whitespace).ok_or_else(|| {
                Error::Dataset(format!(
                    "{}:{}: expected `file class`",
                    labels_path.display(),
                    line_no + 1
                ))
            })?;
            let class = class.trim();
            let label = manifest
                .classes
                .iter()
                .position(|c| c == class)
                .ok_or_else(|| {
                    Error::Dataset(format!(
                        "{}:{}: unknown label \"{class}\"",
                        labels_path.display(),
                        line_no + 1
                    ))
                })?;
            if subsample > 0 && per_class[label] >= subsample {
                continue;
            }
            per_class[label] += 1;
            listed.push((manifest.root.join(name), label));
        }
    } else {
        for (label, class) in manifest.classes.iter().enumerate() {
            let dir = manifest.root.join(class);
            if !dir.is_dir() {
                warnings.push(format!("class directory missing: {}", dir.display()));
                continue;
            }
            let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
                .map_err(|e| Error::io(&dir, e))?
                .filter_map(|entry| entry.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|ext| ext == "bin"))
                .collect();
            files.sort();
            if files.is_empty() {
                warnings.push(format!("no samples in {}", dir.display()));
            }
            if subsample > 0 {
                files.truncate(subsample);
            }
            listed.extend(files.into_iter().map(|f| (f, label)));
        }
    }

    // parse everything; geometry either declared or grown from the events
    let declared = match &manifest.geometry {
        GeometrySpec::Declared(g) => Some(*g),
        GeometrySpec::Mode(_) => None,
    };
    let mut parsed: Vec<(Vec<crate::event::Event>, usize)> = Vec::with_capacity(listed.len());
    let mut max_x = 0u16;
    let mut max_y = 0u16;
    for (path, label) in &listed {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let events = parse_records(&bytes, opts)
            .map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
        for e in &events {
            max_x = max_x.max(e.x);
            max_y = max_y.max(e.y);
        }
        parsed.push((events, *label));
    }
    let geometry = declared.unwrap_or(Geometry {
        width: max_x + 1,
        height: max_y + 1,
    });

    let mut samples = Vec::with_capacity(parsed.len());
    for ((events, label), (path, _)) in parsed.into_iter().zip(listed.iter()) {
        let stream = EventStream::new(geometry, events, Some(label))
            .map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
        samples.push(stream);
    }
    if samples.is_empty() {
        warnings.push("dataset is empty".into());
    }
    Ok(Dataset {
        geometry,
        classes: manifest.classes.clone(),
        samples,
        warnings,
    })
}
