//! Dataset input and output: the 5-byte binary event-record format, dataset
//! manifests, frame-sequence conversion into events, and synthetic stream
//! generation for benchmarks and tests.

pub mod format;
pub mod frames;
pub mod manifest;
pub mod synth;

pub use format::{parse_event_file, parse_event_file_with, write_event_file, ParseOptions};
pub use frames::{frames_to_events, load_frame_sequence, FrameSequence};
pub use manifest::{load_dataset, load_manifest, Dataset, DatasetManifest, GeometrySpec};
