//! Event sequences: ordered `(time, type[, vertex])` records.

use alloc::format;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default lower bound on the first time stamp; the intensity divides by the
/// anchor time, so time stamps must stay strictly positive.
pub const DEFAULT_MIN_TIME: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    pub k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v: Option<usize>,
}

impl Event {
    pub fn new(t: f64, k: usize) -> Self {
        Event { t, k, v: None }
    }

    pub fn with_vertex(t: f64, k: usize, v: usize) -> Self {
        Event { t, k, v: Some(v) }
    }
}

/// A validated event sequence.
///
/// Invariants: at least one event, finite and strictly increasing times, and
/// either every event carries a vertex id or none does.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSequence", into = "RawSequence")]
pub struct EventSequence {
    events: Vec<Event>,
}

#[derive(Serialize, Deserialize)]
struct RawSequence {
    events: Vec<Event>,
}

impl TryFrom<RawSequence> for EventSequence {
    type Error = Error;
    fn try_from(raw: RawSequence) -> Result<Self> {
        EventSequence::new(raw.events)
    }
}

impl From<EventSequence> for RawSequence {
    fn from(s: EventSequence) -> Self {
        RawSequence { events: s.events }
    }
}

impl EventSequence {
    pub fn new(events: Vec<Event>) -> Result<Self> {
        if events.is_empty() {
            return Err(Error::InvalidSequence {
                position: 0,
                reason: "sequence is empty".into(),
            });
        }
        let has_vertex = events[0].v.is_some();
        for (i, e) in events.iter().enumerate() {
            if !e.t.is_finite() {
                return Err(Error::InvalidSequence {
                    position: i,
                    reason: format!("time {} is not finite", e.t),
                });
            }
            if i > 0 && !(e.t > events[i - 1].t) {
                return Err(Error::InvalidSequence {
                    position: i,
                    reason: format!("time {} does not exceed previous time {}", e.t, events[i - 1].t),
                });
            }
            if e.v.is_some() != has_vertex {
                return Err(Error::InvalidSequence {
                    position: i,
                    reason: "vertex ids must be present on every event or on none".into(),
                });
            }
        }
        Ok(EventSequence { events })
    }

    /// Builds an unmarked-vertex sequence from parallel time/type slices.
    pub fn from_parts(times: &[f64], types: &[usize]) -> Result<Self> {
        if times.len() != types.len() {
            return Err(Error::InvalidSequence {
                position: times.len().min(types.len()),
                reason: "time and type lists differ in length".into(),
            });
        }
        EventSequence::new(times.iter().zip(types).map(|(&t, &k)| Event::new(t, k)).collect())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.events.len()
    }

    /// Always false; kept for API symmetry with slices.
    #[inline]
    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    #[inline]
    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn times(&self) -> Vec<f64> {
        self.events.iter().map(|e| e.t).collect()
    }

    pub fn types(&self) -> Vec<usize> {
        self.events.iter().map(|e| e.k).collect()
    }

    /// Vertex ids, if the sequence carries them.
    pub fn vertices(&self) -> Option<Vec<usize>> {
        self.events.iter().map(|e| e.v).collect()
    }

    pub fn has_vertices(&self) -> bool {
        self.events[0].v.is_some()
    }

    pub fn start(&self) -> f64 {
        self.events[0].t
    }

    pub fn end(&self) -> f64 {
        self.events[self.events.len() - 1].t
    }

    /// The first `n` events.
    pub fn prefix(&self, n: usize) -> Result<Self> {
        EventSequence::new(self.events[..n.min(self.len())].to_vec())
    }

    /// Shifts every time stamp so that the first one is at least `min_time`.
    /// Sequences already satisfying the bound are returned unchanged.
    pub fn shifted_positive(&self, min_time: f64) -> Self {
        let shift = min_time - self.start();
        if shift <= 0.0 {
            return self.clone();
        }
        EventSequence {
            events: self
                .events
                .iter()
                .map(|e| Event {
                    t: e.t + shift,
                    ..*e
                })
                .collect(),
        }
    }

    /// Validates type (and vertex) ids against the model's ranges.
    pub fn check_ranges(&self, num_types: usize, num_vertices: Option<usize>) -> Result<()> {
        for (i, e) in self.events.iter().enumerate() {
            if e.k >= num_types {
                return Err(Error::IndexOutOfRange {
                    what: "type",
                    position: i,
                    index: e.k,
                    bound: num_types,
                });
            }
            if let Some(nv) = num_vertices {
                match e.v {
                    Some(v) if v >= nv => {
                        return Err(Error::IndexOutOfRange {
                            what: "vertex",
                            position: i,
                            index: v,
                            bound: nv,
                        })
                    }
                    None => {
                        return Err(Error::InvalidSequence {
                            position: i,
                            reason: "structured model requires vertex ids".into(),
                        })
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn rejects_decreasing_times() {
        let err = EventSequence::from_parts(&[1.0, 2.0, 1.5], &[0, 0, 0]).unwrap_err();
        assert!(matches!(err, Error::InvalidSequence { position: 2, .. }));
    }

    #[test]
    fn rejects_mixed_vertices() {
        let err = EventSequence::new(vec![Event::with_vertex(1.0, 0, 0), Event::new(2.0, 0)]).unwrap_err();
        assert!(matches!(err, Error::InvalidSequence { position: 1, .. }));
    }

    #[test]
    fn rejects_empty() {
        assert!(EventSequence::new(vec![]).is_err());
    }

    #[test]
    fn shift_makes_first_time_positive() {
        let s = EventSequence::from_parts(&[0.0, 0.5], &[0, 1]).unwrap();
        let shifted = s.shifted_positive(DEFAULT_MIN_TIME);
        assert_eq!(shifted.times(), vec![1e-3, 0.501]);
        let already = EventSequence::from_parts(&[2.0, 3.0], &[0, 0]).unwrap();
        assert_eq!(already.shifted_positive(DEFAULT_MIN_TIME), already);
    }

    #[test]
    fn range_check_names_position() {
        let s = EventSequence::from_parts(&[1.0, 2.0], &[0, 3]).unwrap();
        assert_eq!(
            s.check_ranges(2, None),
            Err(Error::IndexOutOfRange {
                what: "type",
                position: 1,
                index: 3,
                bound: 2
            })
        );
    }
}
