//! Layer composition: parameter scaling across layers, the feature volume,
//! sub-volume extraction with read-time decay, the inter-layer output
//! strategies, and the event-driven cascade that runs a stream through a
//! stack of layers.
//!
//! Layer 1 consumes sensor events and encodes time surfaces. Every deeper
//! layer consumes feature events, reads a decayed sub-volume of the previous
//! layer's feature volume around the event location, and encodes that. Codes
//! are written latest-write-wins into the layer's own volume.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::autoencoder::Autoencoder;
use crate::error::{Error, Result};
use crate::event::{Event, EventStream, Geometry, TimeSurface, TimestampMap, NEVER};

/// Spatial pooling reduction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolMode {
    Max,
    Mean,
}

/// How a layer hands its codes to the next layer.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutputStrategy {
    /// Pass raw codes on; the next layer's sub-volume read is pooled
    /// spatially with `window` (1 = pass-through). One feature event is
    /// emitted per input event, at the same location and time.
    RawPool { mode: PoolMode, window: usize },
    /// Re-express code magnitude as latency: channel `i` fires at
    /// `t_in + alpha_us * z_i`.
    TimeDelay { alpha_us: f64 },
    /// Emit one feature event per code channel at or above `theta`,
    /// carrying the channel index.
    Threshold { theta: f64 },
}

impl Default for OutputStrategy {
    fn default() -> Self {
        OutputStrategy::RawPool {
            mode: PoolMode::Max,
            window: 1,
        }
    }
}

/// Parameters of one layer of the hierarchy.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LayerConfig {
    /// Neighborhood radius: surfaces and sub-volumes span `(2R+1)x(2R+1)`.
    pub radius: u16,
    /// Decay constant of the exponential kernel, microseconds.
    pub tau_us: f64,
    /// Code length produced by this layer's autoencoder.
    pub code_dim: usize,
    pub strategy: OutputStrategy,
}

impl LayerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.radius < 1 {
            return Err(Error::Config("layer radius must be >= 1".into()));
        }
        if !(self.tau_us > 0.0) {
            return Err(Error::Config(format!(
                "layer tau_us must be > 0, got {}",
                self.tau_us
            )));
        }
        if self.code_dim < 1 {
            return Err(Error::Config("layer code_dim must be >= 1".into()));
        }
        match self.strategy {
            OutputStrategy::RawPool { window, .. } if window < 1 => {
                Err(Error::Config("pool window must be >= 1".into()))
            }
            OutputStrategy::TimeDelay { alpha_us } if !alpha_us.is_finite() => {
                Err(Error::Config("time-delay alpha_us must be finite".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Multipliers that derive layer `l+1` parameters from layer `l`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ScalingFactors {
    pub k_radius: f64,
    pub k_tau: f64,
    pub k_code: f64,
}

impl ScalingFactors {
    pub fn new(k_radius: f64, k_tau: f64, k_code: f64) -> Result<ScalingFactors> {
        for (name, v) in [("k_radius", k_radius), ("k_tau", k_tau), ("k_code", k_code)] {
            if !(v > 0.0) {
                return Err(Error::Config(format!(
                    "scaling factor {name} must be > 0, got {v}"
                )));
            }
        }
        Ok(ScalingFactors {
            k_radius,
            k_tau,
            k_code,
        })
    }
}

/// Derives the next layer's parameters: `R' = round(K_R * R)` (at least 1),
/// `tau' = K_tau * tau`, `N' = round(K_N * N)` (at least 1). The output
/// strategy is inherited.
pub fn scale_config(cfg: &LayerConfig, k: &ScalingFactors) -> LayerConfig {
    LayerConfig {
        radius: ((k.k_radius * cfg.radius as f64).round() as u64).max(1) as u16,
        tau_us: k.k_tau * cfg.tau_us,
        code_dim: ((k.k_code * cfg.code_dim as f64).round() as u64).max(1) as usize,
        strategy: cfg.strategy,
    }
}

/// H x W grid of latest code vectors with per-cell update times.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVolume {
    geometry: Geometry,
    depth: usize,
    /// Layout `(y * width + x) * depth + channel`; untouched cells are zero.
    codes: Vec<f64>,
    /// Layout `y * width + x`; [`NEVER`] until the first write.
    last_update: Vec<i64>,
}

impl FeatureVolume {
    pub fn new(geometry: Geometry, depth: usize) -> FeatureVolume {
        FeatureVolume {
            geometry,
            depth,
            codes: vec![0.0; geometry.pixel_count() * depth],
            last_update: vec![NEVER; geometry.pixel_count()],
        }
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Flattened codes in `(y, x, channel)` order. Cells never written hold
    /// zeros, so this doubles as the vectorized volume.
    pub fn codes(&self) -> &[f64] {
        &self.codes
    }

    pub fn code(&self, x: u16, y: u16) -> &[f64] {
        let base = (y as usize * self.geometry.width as usize + x as usize) * self.depth;
        &self.codes[base..base + self.depth]
    }

    pub fn last_update(&self, x: u16, y: u16) -> i64 {
        self.last_update[y as usize * self.geometry.width as usize + x as usize]
    }

    /// Stores `code` at `(x, y)` with update time `t`, overwriting the
    /// previous code (latest write wins).
    pub fn write(&mut self, x: u16, y: u16, code: &[f64], t: i64) -> Result<()> {
        if !self.geometry.contains(x, y) {
            return Err(Error::OutOfBounds {
                x,
                y,
                width: self.geometry.width,
                height: self.geometry.height,
            });
        }
        if code.len() != self.depth {
            return Err(Error::DimensionMismatch {
                expected: self.depth,
                got: code.len(),
            });
        }
        let cell = y as usize * self.geometry.width as usize + x as usize;
        if t < self.last_update[cell] {
            return Err(Error::Ordering {
                index: cell,
                t,
                previous: self.last_update[cell],
                slack: 0,
            });
        }
        let base = cell * self.depth;
        self.codes[base..base + self.depth].copy_from_slice(code);
        self.last_update[cell] = t;
        Ok(())
    }

    /// Concatenates the codes of the `(2R+1)x(2R+1)` neighborhood of
    /// `(x, y)`, each scaled by `exp(-(t_now - last_update) / tau_us)`.
    /// Never-written and off-sensor cells contribute zeros. Output is in
    /// `(dy, dx, channel)` order, length `(2R+1)^2 * depth`.
    pub fn read_subvolume(
        &self,
        x: u16,
        y: u16,
        radius: u16,
        tau_us: f64,
        t_now: i64,
    ) -> Vec<f64> {
        let side = 2 * radius as usize + 1;
        let mut out = vec![0.0; side * side * self.depth];
        self.read_subvolume_into(x, y, radius, tau_us, t_now, &mut out);
        out
    }

    pub fn read_subvolume_into(
        &self,
        x: u16,
        y: u16,
        radius: u16,
        tau_us: f64,
        t_now: i64,
        out: &mut [f64],
    ) {
        let side = 2 * radius as usize + 1;
        debug_assert_eq!(out.len(), side * side * self.depth);
        out.fill(0.0);
        let r = radius as i32;
        let w = self.geometry.width as i32;
        let h = self.geometry.height as i32;
        let mut offset = 0;
        for dy in -r..=r {
            for dx in -r..=r {
                let nx = x as i32 + dx;
                let ny = y as i32 + dy;
                if nx >= 0 && ny >= 0 && nx < w && ny < h {
                    let cell = ny as usize * w as usize + nx as usize;
                    let updated = self.last_update[cell];
                    if updated >= 0 {
                        debug_assert!(updated <= t_now, "sub-volume read before cell update");
                        let factor = (-((t_now - updated) as f64) / tau_us).exp();
                        let base = cell * self.depth;
                        for c in 0..self.depth {
                            out[offset + c] = self.codes[base + c] * factor;
                        }
                    }
                }
                offset += self.depth;
            }
        }
    }
}

/// Per-channel spatial pooling of a flattened `side x side x depth`
/// sub-volume. Windows that do not divide `side` evenly are reduced as
/// partial windows. Output length is `ceil(side/window)^2 * depth`.
pub fn pool(
    sub: &[f64],
    side: usize,
    depth: usize,
    mode: PoolMode,
    window: usize,
) -> Result<Vec<f64>> {
    if window < 1 {
        return Err(Error::Config("pool window must be >= 1".into()));
    }
    if sub.len() != side * side * depth {
        return Err(Error::DimensionMismatch {
            expected: side * side * depth,
            got: sub.len(),
        });
    }
    if window == 1 {
        return Ok(sub.to_vec());
    }
    let out_side = side.div_ceil(window);
    let mut out = vec![0.0; out_side * out_side * depth];
    for wy in 0..out_side {
        for wx in 0..out_side {
            let y0 = wy * window;
            let x0 = wx * window;
            let y1 = (y0 + window).min(side);
            let x1 = (x0 + window).min(side);
            let cells = ((y1 - y0) * (x1 - x0)) as f64;
            for c in 0..depth {
                let mut acc = match mode {
                    PoolMode::Max => f64::NEG_INFINITY,
                    PoolMode::Mean => 0.0,
                };
                for y in y0..y1 {
                    for x in x0..x1 {
                        let v = sub[(y * side + x) * depth + c];
                        match mode {
                            PoolMode::Max => acc = acc.max(v),
                            PoolMode::Mean => acc += v,
                        }
                    }
                }
                if let PoolMode::Mean = mode {
                    acc /= cells;
                }
                out[(wy * out_side + wx) * depth + c] = acc;
            }
        }
    }
    Ok(out)
}

/// Re-expresses code values as per-channel arrival delays:
/// channel `i` fires at `t_in + alpha_us * z_i`, rounded to microseconds.
/// Returned pairs are sorted by firing time (channel index breaks ties).
pub fn encode_time_delay(code: &[f64], t_in: i64, alpha_us: f64) -> Result<Vec<(usize, i64)>> {
    if code.iter().any(|z| !z.is_finite()) {
        return Err(Error::NonFinite {
            what: "code vector for time-delay encoding".into(),
        });
    }
    let mut fired: Vec<(usize, i64)> = code
        .iter()
        .enumerate()
        .map(|(i, &z)| (i, t_in + (alpha_us * z).round() as i64))
        .collect();
    fired.sort_by_key(|&(i, t)| (t, i));
    Ok(fired)
}

/// Indices of the code channels at or above `theta`, ascending.
pub fn threshold_features(code: &[f64], theta: f64) -> Vec<usize> {
    code.iter()
        .enumerate()
        .filter(|(_, &z)| z >= theta)
        .map(|(i, _)| i)
        .collect()
}

/// An event between layers: a location, a firing time, and the code channel
/// that fired (0 under the raw strategy, where the event is just a trigger).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureEvent {
    pub x: u16,
    pub y: u16,
    pub t: i64,
    pub channel: usize,
}

/// Input vector length expected by the autoencoder of layer `index`.
///
/// Layer 0 encodes time surfaces; deeper layers encode (optionally pooled)
/// sub-volume reads of the previous layer's volume.
pub fn layer_input_dim(layers: &[LayerConfig], index: usize) -> usize {
    if index == 0 {
        return TimeSurface::input_dim(layers[0].radius);
    }
    let side = 2 * layers[index].radius as usize + 1;
    let cells = match layers[index - 1].strategy {
        OutputStrategy::RawPool { window, .. } if window > 1 => {
            let s = side.div_ceil(window);
            s * s
        }
        _ => side * side,
    };
    cells * layers[index - 1].code_dim
}

fn emit(strategy: &OutputStrategy, code: &[f64], x: u16, y: u16, t: i64) -> Result<Vec<FeatureEvent>> {
    Ok(match *strategy {
        OutputStrategy::RawPool { .. } => vec![FeatureEvent { x, y, t, channel: 0 }],
        OutputStrategy::Threshold { theta } => threshold_features(code, theta)
            .into_iter()
            .map(|channel| FeatureEvent { x, y, t, channel })
            .collect(),
        OutputStrategy::TimeDelay { alpha_us } => encode_time_delay(code, t, alpha_us)?
            .into_iter()
            .map(|(channel, t_out)| FeatureEvent {
                x,
                y,
                t: t_out,
                channel,
            })
            .collect(),
    })
}

/// Runs a single first layer over a raw event stream: per event, build the
/// time surface, encode it, store the code, and emit feature events per the
/// layer's strategy. Returns the final volume and the emitted events sorted
/// by time.
pub fn run_layer(
    stream: &EventStream,
    cfg: &LayerConfig,
    ae: &Autoencoder,
) -> Result<(FeatureVolume, Vec<FeatureEvent>)> {
    let (mut volumes, emitted, _) = drive(
        stream,
        std::slice::from_ref(cfg),
        std::slice::from_ref(ae),
        None,
    )?;
    Ok((volumes.pop().expect("one layer"), emitted))
}

/// A stack of layer parameters with their trained encoders.
pub struct Hierarchy<'a> {
    layers: &'a [LayerConfig],
    encoders: &'a [Autoencoder],
}

/// Final state of a cascade run.
pub struct HierarchyRun {
    /// One volume per layer; the last is the input to the classifier.
    pub volumes: Vec<FeatureVolume>,
    /// Events emitted by the last layer's strategy, sorted by time.
    pub emitted: Vec<FeatureEvent>,
}

impl<'a> Hierarchy<'a> {
    pub fn new(layers: &'a [LayerConfig], encoders: &'a [Autoencoder]) -> Result<Hierarchy<'a>> {
        if layers.is_empty() {
            return Err(Error::Config("hierarchy needs at least one layer".into()));
        }
        if layers.len() != encoders.len() {
            return Err(Error::Config(format!(
                "{} layers but {} encoders",
                layers.len(),
                encoders.len()
            )));
        }
        for (i, (cfg, ae)) in layers.iter().zip(encoders.iter()).enumerate() {
            cfg.validate()?;
            let expected = layer_input_dim(layers, i);
            if ae.input_dim() != expected {
                return Err(Error::Compat(format!(
                    "layer {} encoder expects input dim {}, layer chain provides {}",
                    i + 1,
                    ae.input_dim(),
                    expected
                )));
            }
            if ae.code_dim() != cfg.code_dim {
                return Err(Error::Compat(format!(
                    "layer {} encoder code dim {} != configured {}",
                    i + 1,
                    ae.code_dim(),
                    cfg.code_dim
                )));
            }
        }
        Ok(Hierarchy { layers, encoders })
    }

    /// Processes a full stream through every layer in event-time order and
    /// returns the final volumes.
    pub fn process(&self, stream: &EventStream) -> Result<HierarchyRun> {
        let (volumes, emitted, _) = drive(stream, self.layers, self.encoders, None)?;
        Ok(HierarchyRun { volumes, emitted })
    }
}

/// Drives a stream through layers `0..target` (which must already have
/// encoders) and hands every input vector destined for layer `target` to
/// `sink`, in event order. Used for layer-by-layer training. Returns `false`
/// if the sink stopped the drive early.
pub fn collect_layer_inputs(
    stream: &EventStream,
    layers: &[LayerConfig],
    encoders: &[Autoencoder],
    target: usize,
    sink: &mut dyn FnMut(&[f64]) -> Result<bool>,
) -> Result<bool> {
    assert!(target < layers.len());
    assert!(encoders.len() >= target);
    let (_, _, completed) = drive(stream, &layers[..=target], &encoders[..target], Some(sink))?;
    Ok(completed)
}

/// Pending feature event awaiting processing by `layer`. Ordered by time,
/// then insertion sequence, so propagation is deterministic.
#[derive(PartialEq, Eq, PartialOrd, Ord)]
struct Pending {
    t: i64,
    seq: u64,
    layer: usize,
    x: u16,
    y: u16,
}

/// Mutable state of one cascade run over one stream.
struct Cascade<'a> {
    layers: &'a [LayerConfig],
    encoders: &'a [Autoencoder],
    volumes: Vec<FeatureVolume>,
    map: TimestampMap,
    /// Per-layer input scratch, sized by [`layer_input_dim`].
    inputs: Vec<Vec<f64>>,
    /// Per-encoded-layer code scratch.
    codes: Vec<Vec<f64>>,
    pending: BinaryHeap<Reverse<Pending>>,
    seq: u64,
    emitted: Vec<FeatureEvent>,
}

impl<'a> Cascade<'a> {
    fn new(geometry: Geometry, layers: &'a [LayerConfig], encoders: &'a [Autoencoder]) -> Cascade<'a> {
        Cascade {
            layers,
            encoders,
            volumes: layers[..encoders.len()]
                .iter()
                .map(|cfg| FeatureVolume::new(geometry, cfg.code_dim))
                .collect(),
            map: TimestampMap::new(geometry),
            inputs: (0..layers.len())
                .map(|i| vec![0.0; layer_input_dim(layers, i)])
                .collect(),
            codes: layers[..encoders.len()]
                .iter()
                .map(|cfg| vec![0.0; cfg.code_dim])
                .collect(),
            pending: BinaryHeap::new(),
            seq: 0,
            emitted: Vec::new(),
        }
    }

    fn pop_due(&mut self, up_to: i64) -> Option<Pending> {
        if self.pending.peek().is_some_and(|Reverse(p)| p.t <= up_to) {
            self.pending.pop().map(|Reverse(p)| p)
        } else {
            None
        }
    }

    /// Ingests a sensor event and fills `inputs[0]` with its time surface.
    fn prepare_sensor_input(&mut self, e: &Event) -> Result<()> {
        self.map.update(e)?;
        let ctx = self.map.time_context(e, self.layers[0].radius);
        crate::event::time_surface_into(&ctx, e.t, self.layers[0].tau_us, &mut self.inputs[0]);
        Ok(())
    }

    /// Fills `inputs[p.layer]` with the decayed (and, if the previous layer
    /// says so, pooled) sub-volume read at the pending event.
    fn prepare_pending_input(&mut self, p: &Pending) -> Result<()> {
        let l = p.layer;
        let prev = l - 1;
        let radius = self.layers[l].radius;
        let tau = self.layers[l].tau_us;
        match self.layers[prev].strategy {
            OutputStrategy::RawPool { mode, window } if window > 1 => {
                let side = 2 * radius as usize + 1;
                let raw =
                    self.volumes[prev].read_subvolume(p.x, p.y, radius, tau, p.t);
                let pooled = pool(&raw, side, self.layers[prev].code_dim, mode, window)?;
                self.inputs[l].copy_from_slice(&pooled);
            }
            _ => {
                let mut buf = std::mem::take(&mut self.inputs[l]);
                self.volumes[prev].read_subvolume_into(p.x, p.y, radius, tau, p.t, &mut buf);
                self.inputs[l] = buf;
            }
        }
        Ok(())
    }

    /// Encodes the prepared input of `layer`, stores the code at `(x, y, t)`
    /// and queues or collects the resulting feature events.
    fn encode_at(&mut self, layer: usize, x: u16, y: u16, t: i64) -> Result<()> {
        let input = &self.inputs[layer];
        let code = &mut self.codes[layer];
        self.encoders[layer].encode_into(input, code)?;
        self.volumes[layer].write(x, y, code, t)?;
        let events = emit(&self.layers[layer].strategy, code, x, y, t)?;
        if layer + 1 < self.layers.len() {
            for fe in events {
                self.pending.push(Reverse(Pending {
                    t: fe.t,
                    seq: self.seq,
                    layer: layer + 1,
                    x: fe.x,
                    y: fe.y,
                }));
                self.seq += 1;
            }
        } else {
            self.emitted.extend(events);
        }
        Ok(())
    }
}

fn drive(
    stream: &EventStream,
    layers: &[LayerConfig],
    encoders: &[Autoencoder],
    mut sink: Option<&mut dyn FnMut(&[f64]) -> Result<bool>>,
) -> Result<(Vec<FeatureVolume>, Vec<FeatureEvent>, bool)> {
    // With a sink, the last layer in the slice is tapped: its inputs go to
    // the sink instead of an encoder (it has none yet).
    let tap_layer = sink.as_ref().map(|_| layers.len() - 1);
    debug_assert_eq!(
        encoders.len(),
        layers.len() - usize::from(tap_layer.is_some())
    );
    let mut c = Cascade::new(stream.geometry, layers, encoders);

    for e in &stream.events {
        // propagate everything scheduled at or before this event first
        while let Some(p) = c.pop_due(e.t) {
            c.prepare_pending_input(&p)?;
            if Some(p.layer) == tap_layer {
                let sink = sink.as_mut().expect("tap implies sink");
                if !sink(&c.inputs[p.layer])? {
                    return Ok((c.volumes, c.emitted, false));
                }
            } else {
                c.encode_at(p.layer, p.x, p.y, p.t)?;
            }
        }
        c.prepare_sensor_input(e)?;
        if tap_layer == Some(0) {
            let sink = sink.as_mut().expect("tap implies sink");
            if !sink(&c.inputs[0])? {
                return Ok((c.volumes, c.emitted, false));
            }
        } else {
            c.encode_at(0, e.x, e.y, e.t)?;
        }
    }
    while let Some(p) = c.pop_due(i64::MAX) {
        c.prepare_pending_input(&p)?;
        if Some(p.layer) == tap_layer {
            let sink = sink.as_mut().expect("tap implies sink");
            if !sink(&c.inputs[p.layer])? {
                return Ok((c.volumes, c.emitted, false));
            }
        } else {
            c.encode_at(p.layer, p.x, p.y, p.t)?;
        }
    }

    c.emitted.sort_by_key(|fe| fe.t);
    Ok((c.volumes, c.emitted, true))
}
