//! Interval events over frames and their algebra.
//!
//! Every interval is half-open, `[start, end)`. An [`EventSeq`] is always
//! normalized: sorted, non-empty intervals, pairwise disjoint and
//! non-adjacent (touching intervals are merged).

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EventError {
    #[error("frame count mismatch: {expected} vs {got}")]
    FrameCountMismatch { expected: usize, got: usize },
    #[error("at least {needed} operands required, got {got}")]
    TooFewOperands { needed: usize, got: usize },
    #[error("event [{start}, {end}) for `{key}` exceeds n_frames {n_frames}")]
    OutOfRange { key: String, start: usize, end: usize, n_frames: usize },
    #[error("invalid subject key `{0}`")]
    BadKey(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Event {
    pub start: usize,
    pub end: usize,
}

impl Event {
    /// `None` for empty or inverted intervals.
    pub fn new(start: usize, end: usize) -> Option<Event> {
        (start < end).then_some(Event { start, end })
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start >= self.end
    }

    pub fn contains(&self, frame: usize) -> bool {
        self.start <= frame && frame < self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EventSeq {
    events: Vec<Event>,
}

impl EventSeq {
    pub fn empty() -> Self {
        EventSeq::default()
    }

    /// Normalizes arbitrary intervals: drops empty ones, merges overlapping or touching ones.
    pub fn from_intervals(intervals: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut raw: Vec<Event> = intervals.into_iter().filter_map(|(s, e)| Event::new(s, e)).collect();
        raw.sort();
        let mut events: Vec<Event> = Vec::with_capacity(raw.len());
        for ev in raw {
            match events.last_mut() {
                Some(last) if ev.start <= last.end => last.end = last.end.max(ev.end),
                _ => events.push(ev),
            }
        }
        EventSeq { events }
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn total_frames(&self) -> usize {
        self.events.iter().map(Event::len).sum()
    }

    pub fn end_frame(&self) -> usize {
        self.events.last().map_or(0, |e| e.end)
    }

    pub fn contains(&self, frame: usize) -> bool {
        let i = self.events.partition_point(|e| e.end <= frame);
        self.events.get(i).is_some_and(|e| e.contains(frame))
    }

    /// Maximal runs of `true` become events.
    pub fn from_mask(mask: &[bool]) -> Self {
        let mut events = Vec::new();
        let mut start = None;
        for (i, &m) in mask.iter().enumerate() {
            match (m, start) {
                (true, None) => start = Some(i),
                (false, Some(s)) => {
                    events.push(Event { start: s, end: i });
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            events.push(Event { start: s, end: mask.len() });
        }
        EventSeq { events }
    }

    /// Undefined entries count as false.
    pub fn from_partial_mask(mask: &[Option<bool>]) -> Self {
        let m: Vec<bool> = mask.iter().map(|v| v.unwrap_or(false)).collect();
        Self::from_mask(&m)
    }

    pub fn to_mask(&self, n_frames: usize) -> Vec<bool> {
        let mut mask = vec![false; n_frames];
        for e in &self.events {
            for slot in &mut mask[e.start.min(n_frames)..e.end.min(n_frames)] {
                *slot = true;
            }
        }
        mask
    }

    pub fn intersect(&self, other: &EventSeq) -> EventSeq {
        let (a, b) = (&self.events, &other.events);
        let (mut i, mut j) = (0, 0);
        let mut out = Vec::new();
        while i < a.len() && j < b.len() {
            let s = a[i].start.max(b[j].start);
            let e = a[i].end.min(b[j].end);
            if s < e {
                out.push(Event { start: s, end: e });
            }
            if a[i].end < b[j].end {
                i += 1;
            } else {
                j += 1;
            }
        }
        // intersections of normalized sequences stay disjoint, but may touch
        EventSeq::from_intervals(out.into_iter().map(|e| (e.start, e.end)))
    }

    pub fn complement(&self, n_frames: usize) -> EventSeq {
        let mut out = Vec::with_capacity(self.events.len() + 1);
        let mut cursor = 0;
        for e in &self.events {
            if e.start >= n_frames {
                break;
            }
            if e.start > cursor {
                out.push(Event { start: cursor, end: e.start });
            }
            cursor = cursor.max(e.end);
        }
        if cursor < n_frames {
            out.push(Event { start: cursor, end: n_frames });
        }
        EventSeq { events: out }
    }

    /// Each event of `self` is chained with the earliest event of `next`
    /// starting between 0 and `max_gap` frames after it ends.
    pub fn then(&self, next: &EventSeq, max_gap: usize) -> EventSeq {
        let mut out = Vec::new();
        for ea in &self.events {
            let j = next.events.partition_point(|eb| eb.start < ea.end);
            if let Some(eb) = next.events.get(j) {
                if eb.start - ea.end <= max_gap {
                    out.push((ea.start, eb.end));
                }
            }
        }
        EventSeq::from_intervals(out)
    }

    /// Merges neighbours whose gap is strictly less than `window`.
    pub fn smooth(&self, window: usize) -> EventSeq {
        let mut out: Vec<Event> = Vec::with_capacity(self.events.len());
        for &e in &self.events {
            match out.last_mut() {
                Some(last) if e.start - last.end < window => last.end = e.end,
                _ => out.push(e),
            }
        }
        EventSeq { events: out }
    }

    /// Drops events strictly shorter than `window`.
    pub fn drop_short(&self, window: usize) -> EventSeq {
        EventSeq { events: self.events.iter().copied().filter(|e| e.len() >= window).collect() }
    }
}

/// Events belong to a single animal or to an ordered (focal, target) pair.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SubjectKey {
    Animal(String),
    Pair(String, String),
}

impl SubjectKey {
    pub fn animal(id: &str) -> Self {
        SubjectKey::Animal(id.to_string())
    }

    pub fn pair(focal: &str, target: &str) -> Self {
        SubjectKey::Pair(focal.to_string(), target.to_string())
    }

    /// The animal the events are attributed to: itself, or the focal animal of a pair.
    pub fn focal(&self) -> &str {
        match self {
            SubjectKey::Animal(a) | SubjectKey::Pair(a, _) => a,
        }
    }

    pub fn is_pair(&self) -> bool {
        matches!(self, SubjectKey::Pair(..))
    }
}

impl fmt::Display for SubjectKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SubjectKey::Animal(a) => write!(f, "{a}"),
            SubjectKey::Pair(a, b) => write!(f, "{a}->{b}"),
        }
    }
}

impl FromStr for SubjectKey {
    type Err = EventError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = match s.split_once("->") {
            Some((a, b)) if !a.is_empty() && !b.is_empty() && !b.contains("->") => SubjectKey::pair(a, b),
            None if !s.is_empty() => SubjectKey::animal(s),
            _ => return Err(EventError::BadKey(s.to_string())),
        };
        Ok(key)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PostProcessSpec {
    #[serde(default)]
    pub smooth_window: usize,
    #[serde(default)]
    pub min_window: usize,
}

impl PostProcessSpec {
    pub fn new(smooth_window: usize, min_window: usize) -> Self {
        PostProcessSpec { smooth_window, min_window }
    }

    pub fn is_noop(&self) -> bool {
        self.smooth_window == 0 && self.min_window == 0
    }

    /// Smoothing first, then the minimum-length filter.
    pub fn apply(&self, seq: &EventSeq) -> EventSeq {
        let smoothed = if self.smooth_window > 0 { seq.smooth(self.smooth_window) } else { seq.clone() };
        if self.min_window > 0 {
            smoothed.drop_short(self.min_window)
        } else {
            smoothed
        }
    }
}

/// Per-subject event sequences over a common frame range.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventDict {
    n_frames: usize,
    entries: BTreeMap<SubjectKey, EventSeq>,
}

impl EventDict {
    pub fn new(n_frames: usize) -> Self {
        EventDict { n_frames, entries: BTreeMap::new() }
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn insert(&mut self, key: SubjectKey, seq: EventSeq) -> Result<(), EventError> {
        if let Some(last) = seq.events().last() {
            if last.end > self.n_frames {
                return Err(EventError::OutOfRange {
                    key: key.to_string(),
                    start: last.start,
                    end: last.end,
                    n_frames: self.n_frames,
                });
            }
        }
        self.entries.insert(key, seq);
        Ok(())
    }

    pub fn get(&self, key: &SubjectKey) -> Option<&EventSeq> {
        self.entries.get(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &SubjectKey> {
        self.entries.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&SubjectKey, &EventSeq)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// True when no subject has any event.
    pub fn has_no_events(&self) -> bool {
        self.entries.values().all(EventSeq::is_empty)
    }

    pub fn map(&self, f: impl Fn(&EventSeq) -> EventSeq) -> EventDict {
        EventDict { n_frames: self.n_frames, entries: self.entries.iter().map(|(k, v)| (k.clone(), f(v))).collect() }
    }

    /// Per-frame union over all subjects.
    pub fn any_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.n_frames];
        for seq in self.entries.values() {
            for e in seq.events() {
                for slot in &mut mask[e.start..e.end] {
                    *slot = true;
                }
            }
        }
        mask
    }

    /// Re-keys animal entries onto ordered pairs through the focal animal.
    /// Pair entries are kept as they are.
    pub fn lift_to_pairs(&self, pairs: &[(String, String)]) -> EventDict {
        let mut out = EventDict::new(self.n_frames);
        for (f, t) in pairs {
            let key = SubjectKey::pair(f, t);
            if let Some(seq) = self.entries.get(&key).or_else(|| self.entries.get(&SubjectKey::animal(f))) {
                out.entries.insert(key, seq.clone());
            }
        }
        out
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("event dict serializes")
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EventDictJson {
    n_frames: usize,
    events: BTreeMap<String, Vec<(usize, usize)>>,
}

impl Serialize for EventDict {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        EventDictJson {
            n_frames: self.n_frames,
            events: self
                .entries
                .iter()
                .map(|(k, v)| (k.to_string(), v.events().iter().map(|e| (e.start, e.end)).collect()))
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for EventDict {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let raw = EventDictJson::deserialize(de)?;
        let mut out = EventDict::new(raw.n_frames);
        for (k, spans) in raw.events {
            let key: SubjectKey = k.parse().map_err(D::Error::custom)?;
            if let Some(&(s, e)) = spans.iter().find(|(s, e)| s >= e) {
                return Err(D::Error::custom(format!("empty or inverted interval [{s}, {e}) for `{k}`")));
            }
            out.insert(key, EventSeq::from_intervals(spans)).map_err(D::Error::custom)?;
        }
        Ok(out)
    }
}

pub fn events_from_mask(mask: &[bool]) -> EventSeq {
    EventSeq::from_mask(mask)
}

fn check_frames(a: &EventDict, b: &EventDict) -> Result<(), EventError> {
    if a.n_frames != b.n_frames {
        return Err(EventError::FrameCountMismatch { expected: a.n_frames, got: b.n_frames });
    }
    Ok(())
}

/// Frame-wise conjunction; subjects missing from any operand are dropped.
pub fn add_simultaneous_events(operands: &[&EventDict]) -> Result<EventDict, EventError> {
    if operands.len() < 2 {
        return Err(EventError::TooFewOperands { needed: 2, got: operands.len() });
    }
    let first = operands[0];
    for other in &operands[1..] {
        check_frames(first, other)?;
    }
    let mut out = EventDict::new(first.n_frames);
    'keys: for (key, seq) in &first.entries {
        let mut acc = seq.clone();
        for other in &operands[1..] {
            match other.entries.get(key) {
                Some(s) => acc = acc.intersect(s),
                None => continue 'keys,
            }
        }
        out.entries.insert(key.clone(), acc);
    }
    Ok(out)
}

pub fn add_sequential_events(first: &EventDict, second: &EventDict, max_gap: usize) -> Result<EventDict, EventError> {
    check_frames(first, second)?;
    let mut out = EventDict::new(first.n_frames);
    for (key, a) in &first.entries {
        if let Some(b) = second.entries.get(key) {
            out.entries.insert(key.clone(), a.then(b, max_gap));
        }
    }
    Ok(out)
}

pub fn negate_events(events: &EventDict, n_frames: usize) -> EventDict {
    EventDict {
        n_frames,
        entries: events.entries.iter().map(|(k, v)| (k.clone(), v.complement(n_frames))).collect(),
    }
}

pub fn postprocess(events: &EventDict, spec: PostProcessSpec) -> EventDict {
    events.map(|s| spec.apply(s))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventStats {
    pub count: usize,
    pub total_frames: usize,
}

pub fn event_stats(events: &EventDict) -> BTreeMap<SubjectKey, EventStats> {
    events
        .entries
        .iter()
        .map(|(k, s)| (k.clone(), EventStats { count: s.len(), total_frames: s.total_frames() }))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(v: &[(usize, usize)]) -> EventSeq {
        EventSeq::from_intervals(v.iter().copied())
    }

    fn spans(s: &EventSeq) -> Vec<(usize, usize)> {
        s.events().iter().map(|e| (e.start, e.end)).collect()
    }

    fn dict(n: usize, v: &[(usize, usize)]) -> EventDict {
        let mut d = EventDict::new(n);
        d.insert(SubjectKey::animal("a"), seq(v)).unwrap();
        d
    }

    fn only(d: &EventDict) -> Vec<(usize, usize)> {
        spans(d.get(&SubjectKey::animal("a")).unwrap())
    }

    #[test]
    fn mask_runs() {
        let (t, f) = (true, false);
        assert_eq!(spans(&events_from_mask(&[f, t, t, f, t])), [(1, 3), (4, 5)]);
        assert!(events_from_mask(&[f; 5]).is_empty());
        assert_eq!(spans(&events_from_mask(&[t; 5])), [(0, 5)]);
    }

    #[test]
    fn normalization_merges_touching() {
        assert_eq!(spans(&seq(&[(5, 8), (0, 3), (3, 4), (7, 9), (10, 10)])), [(0, 4), (5, 9)]);
    }

    #[test]
    fn simultaneous() {
        let r = add_simultaneous_events(&[&dict(20, &[(0, 10)]), &dict(20, &[(5, 15)])]).unwrap();
        assert_eq!(only(&r), [(5, 10)]);
        let r = add_simultaneous_events(&[&dict(20, &[(0, 3)]), &dict(20, &[(5, 8)])]).unwrap();
        assert!(only(&r).is_empty());
        let r = add_simultaneous_events(&[&dict(20, &[(0, 10)]), &dict(20, &[(2, 8)]), &dict(20, &[(4, 12)])])
            .unwrap();
        assert_eq!(only(&r), [(4, 8)]);
    }

    #[test]
    fn simultaneous_drops_unshared_keys_and_checks_frames() {
        let mut b = dict(20, &[(0, 20)]);
        b.insert(SubjectKey::animal("z"), seq(&[(0, 1)])).unwrap();
        let r = add_simultaneous_events(&[&dict(20, &[(0, 4)]), &b]).unwrap();
        assert_eq!(r.keys().collect::<Vec<_>>(), [&SubjectKey::animal("a")]);
        assert_eq!(
            add_simultaneous_events(&[&dict(20, &[]), &dict(21, &[])]),
            Err(EventError::FrameCountMismatch { expected: 20, got: 21 })
        );
        assert!(matches!(add_simultaneous_events(&[&b]), Err(EventError::TooFewOperands { .. })));
    }

    #[test]
    fn sequential() {
        let r = add_sequential_events(&dict(20, &[(0, 5)]), &dict(20, &[(5, 9)]), 0).unwrap();
        assert_eq!(only(&r), [(0, 9)]);
        let r = add_sequential_events(&dict(20, &[(0, 5)]), &dict(20, &[(7, 9)]), 0).unwrap();
        assert!(only(&r).is_empty());
        let r = add_sequential_events(&dict(20, &[(0, 5)]), &dict(20, &[(6, 9)]), 1).unwrap();
        assert_eq!(only(&r), [(0, 9)]);
    }

    #[test]
    fn sequential_pairs_with_earliest_follower() {
        let r = add_sequential_events(&dict(30, &[(0, 5)]), &dict(30, &[(6, 8), (9, 12)]), 5).unwrap();
        assert_eq!(only(&r), [(0, 8)]);
    }

    #[test]
    fn negate() {
        assert_eq!(only(&negate_events(&dict(8, &[(2, 5)]), 8)), [(0, 2), (5, 8)]);
        assert_eq!(only(&negate_events(&dict(8, &[]), 8)), [(0, 8)]);
        let x = dict(8, &[(0, 1), (3, 5), (7, 8)]);
        assert_eq!(negate_events(&negate_events(&x, 8), 8), x);
    }

    #[test]
    fn postprocess_rules() {
        let x = dict(20, &[(0, 2), (4, 6)]);
        assert_eq!(only(&postprocess(&x, PostProcessSpec::new(3, 0))), [(0, 6)]);
        assert_eq!(only(&postprocess(&x, PostProcessSpec::new(2, 0))), [(0, 2), (4, 6)]);
        let y = dict(20, &[(0, 4), (10, 12)]);
        assert!(only(&postprocess(&y, PostProcessSpec::new(0, 5))).is_empty());
    }

    #[test]
    fn stats() {
        let key = SubjectKey::animal("a");
        assert_eq!(event_stats(&dict(20, &[(0, 2), (4, 6)]))[&key], EventStats { count: 2, total_frames: 4 });
        assert_eq!(event_stats(&dict(20, &[]))[&key], EventStats { count: 0, total_frames: 0 });
        assert_eq!(event_stats(&dict(20, &[(0, 8)]))[&key], EventStats { count: 1, total_frames: 8 });
    }

    #[test]
    fn json_format() {
        let mut d = EventDict::new(10);
        d.insert(SubjectKey::pair("animal0", "animal1"), seq(&[(1, 3)])).unwrap();
        d.insert(SubjectKey::animal("animal0"), EventSeq::empty()).unwrap();
        let s = serde_json::to_string(&d).unwrap();
        assert_eq!(s, r#"{"n_frames":10,"events":{"animal0":[],"animal0->animal1":[[1,3]]}}"#);
        let back: EventDict = serde_json::from_str(&s).unwrap();
        assert_eq!(back, d);
        assert!(serde_json::from_str::<EventDict>(r#"{"n_frames":2,"events":{"a":[[0,3]]}}"#).is_err());
        assert!(serde_json::from_str::<EventDict>(r#"{"n_frames":5,"events":{"a":[[3,1]]}}"#).is_err());
    }

    #[test]
    fn out_of_range_insert_rejected() {
        let mut d = EventDict::new(4);
        assert!(d.insert(SubjectKey::animal("a"), seq(&[(2, 5)])).is_err());
    }

    #[test]
    fn key_parsing() {
        assert_eq!("a->b".parse::<SubjectKey>().unwrap(), SubjectKey::pair("a", "b"));
        assert_eq!("a".parse::<SubjectKey>().unwrap(), SubjectKey::animal("a"));
        assert!("->b".parse::<SubjectKey>().is_err());
        assert!("".parse::<SubjectKey>().is_err());
    }
}
