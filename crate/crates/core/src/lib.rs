//! Hierarchical time-surface feature extraction and classification for
//! event-camera streams.
//!
//! The pipeline ingests asynchronous event streams, turns each event into an
//! exponentially decayed time surface of its spatial neighborhood, compresses
//! surfaces with backprop-trained autoencoders into per-pixel code vectors
//! held in a feature volume, optionally stacks further layers over that
//! volume at larger spatio-temporal scales, and classifies the final volume
//! with a softmax MLP.
//!
//! Modules:
//! - [`event`] — events, per-pixel timestamp state, time surfaces, the
//!   brute-force reference surface
//! - [`io`] — binary event files, dataset manifests, frame-to-event
//!   conversion, synthetic data
//! - [`autoencoder`] — single-hidden-layer autoencoder with online SGD
//! - [`hierarchy`] — layer configuration and scaling, feature volumes, the
//!   inter-layer strategies, the event-driven cascade
//! - [`classifier`] — MLP, confusion matrices
//! - [`persist`] — binary model blobs
//! - [`config`] — pipeline configuration file schema
//! - [`pipeline`] — train / evaluate / bench orchestration and bundles

pub mod autoencoder;
pub mod classifier;
pub mod config;
pub mod error;
pub mod event;
pub mod hierarchy;
pub mod io;
pub mod persist;
pub mod pipeline;

pub use error::{Error, Result};
pub use event::{Event, EventStream, Geometry, Polarity};

/// Derives a per-component RNG seed from the single run seed so each
/// component draws from an independent, reproducible stream.
pub fn component_seed(base: u64, component: u64) -> u64 {
    // splitmix64 of the combined value
    let mut z = base ^ component.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed streams for [`component_seed`].
pub mod seeds {
    pub const AUTOENCODER_BASE: u64 = 0x10;
    pub const MLP_INIT: u64 = 0x20;
    pub const MLP_SHUFFLE: u64 = 0x21;
    pub const BENCH_STREAM: u64 = 0x30;

    /// Stream id for the autoencoder of layer `l` (0-based).
    pub fn autoencoder_layer(layer: usize) -> u64 {
        AUTOENCODER_BASE + layer as u64
    }
}
