//! The 5-byte big-endian event record format.
//!
//! Each record is byte 0 = x, byte 1 = y, byte 2 bit 7 = polarity (1 = ON),
//! byte 2 bits 6..0 concatenated with bytes 3-4 = 23-bit timestamp in
//! microseconds.

use crate::error::{Error, Result};
use crate::event::{Event, EventStream, Geometry, Polarity};

pub const RECORD_BYTES: usize = 5;
/// Timestamps are 23-bit: at most 2^23 - 1 microseconds (about 8.4 s).
pub const MAX_TIMESTAMP_US: i64 = (1 << 23) - 1;
pub const MAX_COORDINATE: u16 = u8::MAX as u16;

/// Tolerances applied while parsing.
#[derive(Debug, Clone, Copy, Default)]
pub struct ParseOptions {
    /// Accept timestamps up to this many microseconds before the running
    /// maximum; accepted stragglers are stably re-sorted so the resulting
    /// stream is still non-decreasing. 0 requires sorted input.
    pub ordering_slack_us: i64,
}

/// Decodes raw records without geometry validation.
pub fn parse_records(bytes: &[u8], opts: ParseOptions) -> Result<Vec<Event>> {
    let remainder = bytes.len() % RECORD_BYTES;
    if remainder != 0 {
        return Err(Error::Truncated {
            offset: bytes.len() - remainder,
            remaining: remainder,
        });
    }
    let mut events = Vec::with_capacity(bytes.len() / RECORD_BYTES);
    let mut latest = 0i64;
    let mut needs_sort = false;
    for (index, record) in bytes.chunks_exact(RECORD_BYTES).enumerate() {
        let x = record[0] as u16;
        let y = record[1] as u16;
        let p = if record[2] & 0x80 != 0 {
            Polarity::On
        } else {
            Polarity::Off
        };
        let t = ((record[2] & 0x7f) as i64) << 16 | (record[3] as i64) << 8 | record[4] as i64;
        if t < latest {
            if latest - t > opts.ordering_slack_us {
                return Err(Error::Ordering {
                    index,
                    t,
                    previous: latest,
                    slack: opts.ordering_slack_us,
                });
            }
            needs_sort = true;
        } else {
            latest = t;
        }
        events.push(Event { x, y, t, p });
    }
    if needs_sort {
        events.sort_by_key(|e| e.t);
    }
    Ok(events)
}

/// Parses a binary event file into a stream with the declared geometry.
/// Out-of-geometry coordinates are an error, never clamped.
pub fn parse_event_file(bytes: &[u8], geometry: Geometry) -> Result<EventStream> {
    parse_event_file_with(bytes, geometry, ParseOptions::default())
}

pub fn parse_event_file_with(
    bytes: &[u8],
    geometry: Geometry,
    opts: ParseOptions,
) -> Result<EventStream> {
    let events = parse_records(bytes, opts)?;
    EventStream::new(geometry, events, None)
}

/// Serializes a stream into the 5-byte record format; exact inverse of
/// [`parse_event_file`] for in-range streams.
pub fn write_event_file(stream: &EventStream) -> Result<Vec<u8>> {
    let mut bytes = Vec::with_capacity(stream.events.len() * RECORD_BYTES);
    for (index, e) in stream.events.iter().enumerate() {
        if e.x > MAX_COORDINATE {
            return Err(Error::FieldOverflow {
                index,
                field: "x",
                value: e.x as i64,
            });
        }
        if e.y > MAX_COORDINATE {
            return Err(Error::FieldOverflow {
                index,
                field: "y",
                value: e.y as i64,
            });
        }
        if e.t < 0 || e.t > MAX_TIMESTAMP_US {
            return Err(Error::FieldOverflow {
                index,
                field: "t",
                value: e.t,
            });
        }
        let polarity_bit = if e.p == Polarity::On { 0x80u8 } else { 0 };
        bytes.push(e.x as u8);
        bytes.push(e.y as u8);
        bytes.push(polarity_bit | ((e.t >> 16) as u8 & 0x7f));
        bytes.push((e.t >> 8) as u8);
        bytes.push(e.t as u8);
    }
    Ok(bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent decoder: reads the whole 40-bit record as one big-endian
    /// integer and slices fields by shifting. Checked by hand:
    ///   0x0A148O0064 -> x=10 y=20 ON t=100
    ///   0x0000000000 -> x=0 y=0 OFF t=0
    ///   0x0102FFFFFF -> x=1 y=2 ON t=0x7FFFFF
    fn oracle_decode(record: &[u8; 5]) -> (u16, u16, bool, i64) {
        let mut v: u64 = 0;
        for &b in record {
            v = (v << 8) | b as u64;
        }
        let x = (v >> 32) as u16;
        let y = ((v >> 24) & 0xff) as u16;
        let on = (v >> 23) & 1 == 1;
        let t = (v & 0x7f_ffff) as i64;
        (x, y, on, t)
    }

    #[test]
    fn documented_record_decodes_as_expected() {
        let bytes = [0x0a, 0x14, 0x80, 0x00, 0x64];
        let events = parse_records(&bytes, ParseOptions::default()).unwrap();
        assert_eq!(events, vec![Event::new(10, 20, 100, Polarity::On)]);
        assert_eq!(oracle_decode(&bytes), (10, 20, true, 100));
    }

    #[test]
    fn all_zero_record_is_origin_off_at_zero() {
        let bytes = [0u8; 5];
        let events = parse_records(&bytes, ParseOptions::default()).unwrap();
        assert_eq!(events, vec![Event::new(0, 0, 0, Polarity::Off)]);
        assert_eq!(oracle_decode(&[0; 5]), (0, 0, false, 0));
    }

    #[test]
    fn max_timestamp_record_round_trips() {
        let bytes = [0x01, 0x02, 0xff, 0xff, 0xff];
        let events = parse_records(&bytes, ParseOptions::default()).unwrap();
        assert_eq!(events, vec![Event::new(1, 2, MAX_TIMESTAMP_US, Polarity::On)]);
        assert_eq!(oracle_decode(&bytes), (1, 2, true, MAX_TIMESTAMP_US));
    }

    #[test]
    fn parse_matches_bit_oracle_on_random_records() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for _ in 0..500 {
            let record: [u8; 5] = rng.gen();
            // single-record parse cannot fail ordering
            let events = parse_records(&record, ParseOptions::default()).unwrap();
            let (x, y, on, t) = oracle_decode(&record);
            assert_eq!(events[0].x, x);
            assert_eq!(events[0].y, y);
            assert_eq!(events[0].p == Polarity::On, on);
            assert_eq!(events[0].t, t);
        }
    }

    #[test]
    fn truncated_input_reports_offset() {
        let err = parse_records(&[0u8; 4], ParseOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Truncated { offset: 0, remaining: 4 }));
        let err = parse_records(&[0u8; 12], ParseOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Truncated { offset: 10, remaining: 2 }));
    }

    #[test]
    fn regression_names_record_index() {
        // record 0 at t=100, record 1 at t=99
        let mut bytes = write_event_file(
            &EventStream::new(
                Geometry::new(4, 4),
                vec![Event::new(0, 0, 100, Polarity::On)],
                None,
            )
            .unwrap(),
        )
        .unwrap();
        bytes.extend_from_slice(&[0, 0, 0x80, 0, 99]);
        let err = parse_records(&bytes, ParseOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Ordering { index: 1, .. }));
        // with slack the same input parses and is re-sorted
        let events = parse_records(&bytes, ParseOptions { ordering_slack_us: 5 }).unwrap();
        assert_eq!(events[0].t, 99);
        assert_eq!(events[1].t, 100);
    }

    #[test]
    fn out_of_geometry_coordinates_are_reported() {
        let bytes = [40, 0, 0x80, 0, 1];
        let err = parse_event_file(&bytes, Geometry::new(34, 34)).unwrap_err();
        assert!(matches!(err, Error::OutOfBounds { x: 40, .. }));
    }

    #[test]
    fn empty_stream_writes_empty_bytes() {
        let stream = EventStream::new(Geometry::new(34, 34), vec![], None).unwrap();
        assert!(write_event_file(&stream).unwrap().is_empty());
    }

    #[test]
    fn oversized_fields_are_encoding_errors() {
        let stream = EventStream {
            geometry: Geometry::new(300, 34),
            events: vec![Event::new(280, 0, 0, Polarity::On)],
            label: None,
        };
        assert!(matches!(
            write_event_file(&stream).unwrap_err(),
            Error::FieldOverflow { index: 0, field: "x", .. }
        ));
        let stream = EventStream {
            geometry: Geometry::new(34, 34),
            events: vec![Event::new(0, 0, 1 << 23, Polarity::On)],
            label: None,
        };
        assert!(matches!(
            write_event_file(&stream).unwrap_err(),
            Error::FieldOverflow { index: 0, field: "t", .. }
        ));
    }
}
