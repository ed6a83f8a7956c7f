//! Event representation, per-pixel most-recent-timestamp state, and
//! time-surface construction.
//!
//! A time surface is the local history of activity around an event: the grid
//! of most recent event times in a `(2R+1)x(2R+1)` neighborhood (one plane per
//! polarity), passed through an exponential decay kernel `exp(-dt/tau)` so that
//! recent activity is close to 1 and stale activity fades to 0.

use crate::error::{Error, Result};

/// Marker for "no event has ever fired here". Valid timestamps are
/// non-negative microseconds, so any negative value is distinguishable.
pub const NEVER: i64 = -1;

/// Sign of the brightness change that produced an event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Polarity {
    /// Brightness decrease, mapped to -1.
    Off,
    /// Brightness increase, mapped to +1.
    On,
}

impl Polarity {
    #[inline]
    pub fn sign(self) -> i8 {
        match self {
            Polarity::Off => -1,
            Polarity::On => 1,
        }
    }

    /// Plane index used by the timestamp map and surface layouts (OFF = 0, ON = 1).
    #[inline]
    pub fn index(self) -> usize {
        match self {
            Polarity::Off => 0,
            Polarity::On => 1,
        }
    }

    #[inline]
    pub fn from_index(index: usize) -> Polarity {
        if index == 0 {
            Polarity::Off
        } else {
            Polarity::On
        }
    }
}

/// One asynchronous camera event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    /// Pixel column.
    pub x: u16,
    /// Pixel row.
    pub y: u16,
    /// Timestamp in microseconds, non-negative.
    pub t: i64,
    /// Polarity of the brightness change.
    pub p: Polarity,
}

impl Event {
    pub fn new(x: u16, y: u16, t: i64, p: Polarity) -> Event {
        Event { x, y, t, p }
    }
}

/// Sensor dimensions in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Geometry {
    pub width: u16,
    pub height: u16,
}

impl Geometry {
    pub fn new(width: u16, height: u16) -> Geometry {
        Geometry { width, height }
    }

    #[inline]
    pub fn contains(&self, x: u16, y: u16) -> bool {
        x < self.width && y < self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

impl std::fmt::Display for Geometry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

/// An ordered sequence of events from one recording, with its sensor geometry
/// and an optional class label (index into a dataset's class list).
#[derive(Debug, Clone, PartialEq)]
pub struct EventStream {
    pub geometry: Geometry,
    pub events: Vec<Event>,
    pub label: Option<usize>,
}

impl EventStream {
    /// Builds a stream, validating bounds, non-negative timestamps and
    /// non-decreasing order.
    pub fn new(geometry: Geometry, events: Vec<Event>, label: Option<usize>) -> Result<EventStream> {
        let stream = EventStream {
            geometry,
            events,
            label,
        };
        stream.validate()?;
        Ok(stream)
    }

    pub fn validate(&self) -> Result<()> {
        let mut previous = 0i64;
        for (index, e) in self.events.iter().enumerate() {
            if !self.geometry.contains(e.x, e.y) {
                return Err(Error::OutOfBounds {
                    x: e.x,
                    y: e.y,
                    width: self.geometry.width,
                    height: self.geometry.height,
                });
            }
            if e.t < previous {
                return Err(Error::Ordering {
                    index,
                    t: e.t,
                    previous,
                    slack: 0,
                });
            }
            previous = e.t;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// Per-pixel, per-polarity most recent event time.
///
/// This is the incremental state behind the time-context: after ingesting a
/// prefix of a stream, `last_time(x, y, p)` equals the maximum timestamp of
/// all ingested events at that pixel and polarity, or [`NEVER`].
#[derive(Debug, Clone)]
pub struct TimestampMap {
    geometry: Geometry,
    /// Layout: `(y * width + x) * 2 + polarity_index`.
    last_time: Vec<i64>,
    /// Most recent ingested timestamp, for stream-order enforcement.
    latest: i64,
    ordering_slack_us: i64,
    ingested: usize,
}

impl TimestampMap {
    pub fn new(geometry: Geometry) -> TimestampMap {
        TimestampMap::with_ordering_slack(geometry, 0)
    }

    /// `slack_us` tolerates bounded timestamp regressions (events may arrive
    /// up to `slack_us` before the latest ingested timestamp).
    pub fn with_ordering_slack(geometry: Geometry, slack_us: i64) -> TimestampMap {
        TimestampMap {
            geometry,
            last_time: vec![NEVER; geometry.pixel_count() * 2],
            latest: NEVER,
            ordering_slack_us: slack_us,
            ingested: 0,
        }
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    /// Ingests one event in stream order. The stored time for the event's
    /// cell becomes the max of the old value and `e.t`, so stored times never
    /// decrease even when the slack admits a late event.
    pub fn update(&mut self, e: &Event) -> Result<()> {
        if !self.geometry.contains(e.x, e.y) {
            return Err(Error::OutOfBounds {
                x: e.x,
                y: e.y,
                width: self.geometry.width,
                height: self.geometry.height,
            });
        }
        if e.t < self.latest - self.ordering_slack_us {
            return Err(Error::Ordering {
                index: self.ingested,
                t: e.t,
                previous: self.latest,
                slack: self.ordering_slack_us,
            });
        }
        let idx = (e.y as usize * self.geometry.width as usize + e.x as usize) * 2 + e.p.index();
        if e.t > self.last_time[idx] {
            self.last_time[idx] = e.t;
        }
        if e.t > self.latest {
            self.latest = e.t;
        }
        self.ingested += 1;
        Ok(())
    }

    /// Most recent event time at `(x, y, p)`, or [`NEVER`]. Off-sensor
    /// coordinates also report [`NEVER`], matching the border convention.
    #[inline]
    pub fn last_time(&self, x: i32, y: i32, p: Polarity) -> i64 {
        if x < 0 || y < 0 || x >= self.geometry.width as i32 || y >= self.geometry.height as i32 {
            return NEVER;
        }
        self.last_time[(y as usize * self.geometry.width as usize + x as usize) * 2 + p.index()]
    }

    /// Extracts the `(2R+1)x(2R+1)x2` grid of most recent event times around
    /// `e`. Call after [`update`](Self::update) with the same event so the
    /// center cell holds `e.t`. Cells outside the sensor hold [`NEVER`].
    pub fn time_context(&self, e: &Event, radius: u16) -> TimeContext {
        let side = 2 * radius as usize + 1;
        let mut values = vec![NEVER; side * side * 2];
        let r = radius as i32;
        let cx = e.x as i32;
        let cy = e.y as i32;
        let mut idx = 0;
        for dy in -r..=r {
            for dx in -r..=r {
                values[idx] = self.last_time(cx + dx, cy + dy, Polarity::Off);
                values[idx + 1] = self.last_time(cx + dx, cy + dy, Polarity::On);
                idx += 2;
            }
        }
        TimeContext {
            radius,
            values,
            center_time: e.t,
            center_polarity: e.p,
        }
    }
}

/// Grid of most recent event times (or [`NEVER`]) around one event, before
/// the decay kernel is applied.
///
/// Layout is row-major with the polarity planes interleaved:
/// `((dy+R) * (2R+1) + (dx+R)) * 2 + polarity_index`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeContext {
    pub radius: u16,
    pub center_time: i64,
    pub center_polarity: Polarity,
    values: Vec<i64>,
}

impl TimeContext {
    pub fn side(&self) -> usize {
        2 * self.radius as usize + 1
    }

    pub fn values(&self) -> &[i64] {
        &self.values
    }

    /// Entry at spatial offset `(dx, dy)` from the center, for polarity `p`.
    pub fn get(&self, dx: i32, dy: i32, p: Polarity) -> i64 {
        let r = self.radius as i32;
        assert!(dx >= -r && dx <= r && dy >= -r && dy <= r, "offset outside context");
        let side = self.side();
        self.values[((dy + r) as usize * side + (dx + r) as usize) * 2 + p.index()]
    }
}

/// Exponentially decayed time context: values in `[0, 1]`, 1 at the
/// triggering event's own cell, 0 where no event was ever seen.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSurface {
    pub radius: u16,
    pub center_time: i64,
    pub center_polarity: Polarity,
    values: Vec<f64>,
}

impl TimeSurface {
    pub fn side(&self) -> usize {
        2 * self.radius as usize + 1
    }

    /// Flattened values, same layout as [`TimeContext`]; this is the vector
    /// fed to an autoencoder.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, dx: i32, dy: i32, p: Polarity) -> f64 {
        let r = self.radius as i32;
        assert!(dx >= -r && dx <= r && dy >= -r && dy <= r, "offset outside surface");
        let side = self.side();
        self.values[((dy + r) as usize * side + (dx + r) as usize) * 2 + p.index()]
    }

    /// Length of the flattened surface for a given radius: `2 * (2R+1)^2`.
    pub fn input_dim(radius: u16) -> usize {
        let side = 2 * radius as usize + 1;
        2 * side * side
    }
}

/// Applies the exponential decay kernel to a time context, evaluated at
/// `t_i`: `exp(-(t_i - T) / tau)` per entry, 0 for [`NEVER`] entries.
///
/// `t_i` is passed explicitly so a frozen context can be decayed at later
/// reference times.
pub fn time_surface(ctx: &TimeContext, t_i: i64, tau_us: f64) -> Result<TimeSurface> {
    if !(tau_us > 0.0) {
        return Err(Error::Config(format!(
            "tau_us must be > 0, got {tau_us}"
        )));
    }
    let values = ctx
        .values
        .iter()
        .map(|&t| {
            if t < 0 {
                0.0
            } else {
                debug_assert!(t <= t_i, "context entry after reference time");
                (-((t_i - t) as f64) / tau_us).exp()
            }
        })
        .collect();
    Ok(TimeSurface {
        radius: ctx.radius,
        center_time: t_i,
        center_polarity: ctx.center_polarity,
        values,
    })
}

/// Writes the decayed surface for `ctx` into `out` without allocating.
/// `out.len()` must equal `TimeSurface::input_dim(ctx.radius)`.
pub fn time_surface_into(ctx: &TimeContext, t_i: i64, tau_us: f64, out: &mut [f64]) {
    debug_assert_eq!(out.len(), ctx.values.len());
    for (o, &t) in out.iter_mut().zip(ctx.values.iter()) {
        *o = if t < 0 {
            0.0
        } else {
            (-((t_i - t) as f64) / tau_us).exp()
        };
    }
}

/// Reference implementation of the time surface at event `index`: recomputes
/// the most-recent-time maxima by scanning the stream prefix directly, then
/// applies the decay kernel inline.
///
/// Deliberately independent of [`TimestampMap`] so it can serve as the oracle
/// for the incremental path.
pub fn brute_force_time_surface(
    stream: &EventStream,
    index: usize,
    radius: u16,
    tau_us: f64,
) -> Result<TimeSurface> {
    if index >= stream.events.len() {
        return Err(Error::Config(format!(
            "event index {index} out of range for stream of {} events",
            stream.events.len()
        )));
    }
    if !(tau_us > 0.0) {
        return Err(Error::Config(format!("tau_us must be > 0, got {tau_us}")));
    }
    let center = stream.events[index];
    let r = radius as i32;
    let side = 2 * radius as usize + 1;
    let mut max_times = vec![NEVER; side * side * 2];
    for e in &stream.events[..=index] {
        let dx = e.x as i32 - center.x as i32;
        let dy = e.y as i32 - center.y as i32;
        if dx < -r || dx > r || dy < -r || dy > r {
            continue;
        }
        let idx = ((dy + r) as usize * side + (dx + r) as usize) * 2 + e.p.index();
        if e.t > max_times[idx] {
            max_times[idx] = e.t;
        }
    }
    let values = max_times
        .iter()
        .map(|&t| {
            if t < 0 {
                0.0
            } else {
                (-((center.t - t) as f64) / tau_us).exp()
            }
        })
        .collect();
    Ok(TimeSurface {
        radius,
        center_time: center.t,
        center_polarity: center.p,
        values,
    })
}

/// Drops events that follow a kept event at the same pixel and polarity by
/// less than `min_gap_us`. A gap of 0 keeps everything, which is the default
/// pipeline behavior.
pub fn refractory_filter(events: &[Event], geometry: Geometry, min_gap_us: i64) -> Vec<Event> {
    if min_gap_us <= 0 {
        return events.to_vec();
    }
    let mut last_kept = vec![NEVER; geometry.pixel_count() * 2];
    let mut kept = Vec::with_capacity(events.len());
    for e in events {
        if !geometry.contains(e.x, e.y) {
            continue;
        }
        let idx = (e.y as usize * geometry.width as usize + e.x as usize) * 2 + e.p.index();
        if last_kept[idx] < 0 || e.t - last_kept[idx] >= min_gap_us {
            kept.push(*e);
            last_kept[idx] = e.t;
        }
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom() -> Geometry {
        Geometry::new(8, 8)
    }

    #[test]
    fn single_update_sets_only_its_cell() {
        let mut map = TimestampMap::new(geom());
        map.update(&Event::new(3, 4, 100, Polarity::On)).unwrap();
        assert_eq!(map.last_time(3, 4, Polarity::On), 100);
        assert_eq!(map.last_time(3, 4, Polarity::Off), NEVER);
        for y in 0..8 {
            for x in 0..8 {
                if (x, y) != (3, 4) {
                    assert_eq!(map.last_time(x, y, Polarity::On), NEVER);
                }
            }
        }
    }

    #[test]
    fn update_keeps_max_per_cell() {
        let mut map = TimestampMap::new(geom());
        map.update(&Event::new(2, 2, 100, Polarity::On)).unwrap();
        map.update(&Event::new(2, 2, 200, Polarity::On)).unwrap();
        assert_eq!(map.last_time(2, 2, Polarity::On), 200);
    }

    #[test]
    fn polarity_planes_are_independent() {
        let mut map = TimestampMap::new(geom());
        map.update(&Event::new(3, 4, 100, Polarity::On)).unwrap();
        map.update(&Event::new(3, 4, 150, Polarity::Off)).unwrap();
        assert_eq!(map.last_time(3, 4, Polarity::On), 100);
        assert_eq!(map.last_time(3, 4, Polarity::Off), 150);
    }

    #[test]
    fn out_of_bounds_update_rejected() {
        let mut map = TimestampMap::new(geom());
        let err = map.update(&Event::new(8, 0, 10, Polarity::On)).unwrap_err();
        assert!(matches!(err, Error::OutOfBounds { x: 8, .. }));
    }

    #[test]
    fn regression_beyond_slack_rejected() {
        let mut map = TimestampMap::with_ordering_slack(geom(), 5);
        map.update(&Event::new(1, 1, 100, Polarity::On)).unwrap();
        // within slack
        map.update(&Event::new(1, 2, 96, Polarity::On)).unwrap();
        let err = map.update(&Event::new(1, 3, 94, Polarity::On)).unwrap_err();
        assert!(matches!(err, Error::Ordering { .. }));
        // cell value did not decrease under the slack path
        assert_eq!(map.last_time(1, 1, Polarity::On), 100);
    }

    #[test]
    fn context_single_event_has_one_entry() {
        let mut map = TimestampMap::new(geom());
        let e = Event::new(4, 4, 1000, Polarity::On);
        map.update(&e).unwrap();
        let ctx = map.time_context(&e, 1);
        let non_never = ctx.values().iter().filter(|&&t| t >= 0).count();
        assert_eq!(non_never, 1);
        assert_eq!(ctx.get(0, 0, Polarity::On), 1000);
    }

    #[test]
    fn context_at_corner_marks_off_sensor_never() {
        let mut map = TimestampMap::new(geom());
        let e = Event::new(0, 0, 50, Polarity::On);
        map.update(&e).unwrap();
        let ctx = map.time_context(&e, 1);
        // 3x3 neighborhood at the corner: 5 cells fall off-sensor.
        let mut off_sensor = 0;
        for dy in -1..=1 {
            for dx in -1..=1 {
                if dx < 0 || dy < 0 {
                    off_sensor += 1;
                    assert_eq!(ctx.get(dx, dy, Polarity::On), NEVER);
                    assert_eq!(ctx.get(dx, dy, Polarity::Off), NEVER);
                }
            }
        }
        assert_eq!(off_sensor, 5);
    }

    #[test]
    fn context_shape_r2() {
        let mut map = TimestampMap::new(geom());
        let e = Event::new(4, 4, 1, Polarity::Off);
        map.update(&e).unwrap();
        let ctx = map.time_context(&e, 2);
        assert_eq!(ctx.values().len(), 50);
    }

    #[test]
    fn surface_analytic_values() {
        let mut map = TimestampMap::new(geom());
        let tau = 100.0;
        map.update(&Event::new(3, 3, 0, Polarity::On)).unwrap();
        let e = Event::new(4, 4, 100, Polarity::On);
        map.update(&e).unwrap();
        let ctx = map.time_context(&e, 1);
        let s = time_surface(&ctx, e.t, tau).unwrap();
        // the triggering event itself
        assert_eq!(s.get(0, 0, Polarity::On), 1.0);
        // aged exactly tau
        assert!((s.get(-1, -1, Polarity::On) - (-1.0f64).exp()).abs() < 1e-12);
        // no history
        assert_eq!(s.get(1, 0, Polarity::Off), 0.0);
    }

    #[test]
    fn surface_rejects_nonpositive_tau() {
        let mut map = TimestampMap::new(geom());
        let e = Event::new(1, 1, 10, Polarity::On);
        map.update(&e).unwrap();
        let ctx = map.time_context(&e, 1);
        assert!(time_surface(&ctx, e.t, 0.0).is_err());
        assert!(time_surface(&ctx, e.t, -5.0).is_err());
    }

    #[test]
    fn brute_force_single_event_is_centered_one() {
        let stream = EventStream::new(
            geom(),
            vec![Event::new(5, 5, 42, Polarity::Off)],
            None,
        )
        .unwrap();
        let s = brute_force_time_surface(&stream, 0, 2, 1000.0).unwrap();
        assert_eq!(s.get(0, 0, Polarity::Off), 1.0);
        let ones = s.values().iter().filter(|&&v| v != 0.0).count();
        assert_eq!(ones, 1);
    }

    #[test]
    fn brute_force_ignores_order_of_equal_timestamps() {
        let a = Event::new(3, 3, 10, Polarity::On);
        let b = Event::new(4, 3, 10, Polarity::On);
        let center = Event::new(4, 4, 20, Polarity::On);
        let s1 = brute_force_time_surface(
            &EventStream::new(geom(), vec![a, b, center], None).unwrap(),
            2,
            1,
            100.0,
        )
        .unwrap();
        let s2 = brute_force_time_surface(
            &EventStream::new(geom(), vec![b, a, center], None).unwrap(),
            2,
            1,
            100.0,
        )
        .unwrap();
        assert_eq!(s1.values(), s2.values());
    }

    #[test]
    fn stream_validation_catches_disorder_and_bounds() {
        let bad_order = EventStream::new(
            geom(),
            vec![
                Event::new(1, 1, 10, Polarity::On),
                Event::new(1, 1, 5, Polarity::On),
            ],
            None,
        );
        assert!(matches!(bad_order, Err(Error::Ordering { index: 1, .. })));
        let oob = EventStream::new(geom(), vec![Event::new(9, 0, 1, Polarity::On)], None);
        assert!(matches!(oob, Err(Error::OutOfBounds { .. })));
    }

    #[test]
    fn refractory_drops_close_repeats() {
        let events = vec![
            Event::new(1, 1, 0, Polarity::On),
            Event::new(1, 1, 50, Polarity::On),  // too close, dropped
            Event::new(1, 1, 60, Polarity::Off), // other polarity, kept
            Event::new(1, 1, 100, Polarity::On), // exactly at the gap, kept
        ];
        let kept = refractory_filter(&events, geom(), 100);
        assert_eq!(kept.len(), 3);
        assert_eq!(kept[1].p, Polarity::Off);
        assert_eq!(kept[2].t, 100);
    }

    #[test]
    fn refractory_zero_gap_is_identity() {
        let events = vec![
            Event::new(1, 1, 0, Polarity::On),
            Event::new(1, 1, 0, Polarity::On),
        ];
        assert_eq!(refractory_filter(&events, geom(), 0), events);
    }
}
