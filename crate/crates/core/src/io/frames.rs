//! Conventional frame sequences and their conversion into event streams by
//! per-pixel level crossing.

use std::path::Path;

use crate::error::{Error, Result};
use crate::event::{Event, EventStream, Geometry, Polarity};

/// Ordered gray-level frames with their capture times.
#[derive(Debug, Clone)]
pub struct FrameSequence {
    pub geometry: Geometry,
    /// Row-major gray levels in `[0, 1]`, one per frame.
    pub frames: Vec<Vec<f64>>,
    /// Strictly increasing, microseconds.
    pub timestamps_us: Vec<i64>,
}

impl FrameSequence {
    pub fn new(
        geometry: Geometry,
        frames: Vec<Vec<f64>>,
        timestamps_us: Vec<i64>,
    ) -> Result<FrameSequence> {
        if frames.len() != timestamps_us.len() {
            return Err(Error::Config(format!(
                "{} frames but {} timestamps",
                frames.len(),
                timestamps_us.len()
            )));
        }
        let pixels = geometry.pixel_count();
        for (i, frame) in frames.iter().enumerate() {
            if frame.len() != pixels {
                return Err(Error::DimensionMismatch {
                    expected: pixels,
                    got: frame.len(),
                });
            }
            if i > 0 && timestamps_us[i] <= timestamps_us[i - 1] {
                return Err(Error::Ordering {
                    index: i,
                    t: timestamps_us[i],
                    previous: timestamps_us[i - 1],
                    slack: 0,
                });
            }
        }
        Ok(FrameSequence {
            geometry,
            frames,
            timestamps_us,
        })
    }
}

/// Loads a directory of 8-bit grayscale images (PNG or PGM, sorted by file
/// name) plus a `timestamps.txt` sidecar with one integer microsecond value
/// per line.
pub fn load_frame_sequence(dir: &Path) -> Result<FrameSequence> {
    let sidecar = dir.join("timestamps.txt");
    let text = std::fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
    let timestamps_us: Vec<i64> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.trim()
                .parse::<i64>()
                .map_err(|e| Error::Config(format!("{}: bad timestamp \"{l}\": {e}", sidecar.display())))
        })
        .collect::<Result<_>>()?;

    let mut image_paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "pgm"))
        })
        .collect();
    image_paths.sort();
    if image_paths.len() != timestamps_us.len() {
        return Err(Error::Config(format!(
            "{} images but {} timestamps in {}",
            image_paths.len(),
            timestamps_us.len(),
            dir.display()
        )));
    }

    let mut geometry = None;
    let mut frames = Vec::with_capacity(image_paths.len());
    for path in &image_paths {
        let img = image::open(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
            .into_luma8();
        let g = Geometry::new(img.width() as u16, img.height() as u16);
        match geometry {
            None => geometry = Some(g),
            Some(existing) if existing != g => {
                return Err(Error::Config(format!(
                    "{}: frame size {} differs from {}",
                    path.display(),
                    g,
                    existing
                )))
            }
            _ => {}
        }
        frames.push(img.pixels().map(|p| p.0[0] as f64 / 255.0).collect());
    }
    let geometry = geometry.ok_or_else(|| Error::Config(format!("no frames in {}", dir.display())))?;
    FrameSequence::new(geometry, frames, timestamps_us)
}

/// Emulates an event camera over a frame sequence with level-crossing
/// sampling: per pixel, whenever the gray level moves at least `threshold`
/// away from its reference level, emit `floor(|delta| / threshold)` events of
/// the matching polarity at the frame's timestamp and advance the reference
/// by the emitted multiple.
pub fn frames_to_events(seq: &FrameSequence, threshold: f64) -> Result<EventStream> {
    if !(threshold > 0.0) {
        return Err(Error::Config(format!(
            "contrast threshold must be > 0, got {threshold}"
        )));
    }
    if seq.frames.len() < 2 {
        return Err(Error::Config(format!(
            "need at least 2 frames, got {}",
            seq.frames.len()
        )));
    }
    let width = seq.geometry.width as usize;
    let mut reference = seq.frames[0].clone();
    let mut events = Vec::new();
    for (frame, &t) in seq.frames.iter().zip(seq.timestamps_us.iter()).skip(1) {
        for (idx, (&level, r)) in frame.iter().zip(reference.iter_mut()).enumerate() {
            let delta = level - *r;
            let crossings = (delta.abs() / threshold).floor() as usize;
            if crossings == 0 {
                continue;
            }
            let polarity = if delta > 0.0 { Polarity::On } else { Polarity::Off };
            let x = (idx % width) as u16;
            let y = (idx / width) as u16;
            for _ in 0..crossings {
                events.push(Event { x, y, t, p: polarity });
            }
            *r += delta.signum() * crossings as f64 * threshold;
        }
    }
    EventStream::new(seq.geometry, events, None)
}
