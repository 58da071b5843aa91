//! Event streams: CSV ingestion, a log-intensity simulator driven by camera
//! translation, polarity-count accumulation and red/blue rendering.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::illumination::ImageTensor;
use crate::numerics::Tensor;

/// Offset inside the log so black pixels stay finite.
pub const LOG_EPS: f64 = 1e-3;
/// Nominal duration over which simulated events are spread.
pub const SIM_WINDOW_US: u64 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Event {
    pub t: u64,
    pub x: u32,
    pub y: u32,
    /// `+1` or `-1`.
    pub p: i8,
}

impl Event {
    fn sort_key(&self) -> (u64, u32, u32, i8) {
        (self.t, self.y, self.x, self.p)
    }
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.sort_key().cmp(&other.sort_key())
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Sensor geometry stored next to an event CSV as `<file>.json`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSize {
    pub width: u32,
    pub height: u32,
}

/// Events sorted by `t`, ties broken by `(y, x, p)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventStream {
    width: u32,
    height: u32,
    events: Vec<Event>,
}

impl EventStream {
    /// Validates bounds and polarity, then sorts.
    pub fn new(width: u32, height: u32, mut events: Vec<Event>) -> Result<Self> {
        for e in &events {
            check_event(e, width, height)?;
        }
        events.sort();
        Ok(EventStream { width, height, events })
    }

    pub fn empty(width: u32, height: u32) -> Self {
        EventStream {
            width,
            height,
            events: Vec::new(),
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn size(&self) -> SensorSize {
        SensorSize {
            width: self.width,
            height: self.height,
        }
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

    /// CSV with a `t,x,y,p` header, one event per line.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,x,y,p\n");
        for e in &self.events {
            s.push_str(&format!("{},{},{},{}\n", e.t, e.x, e.y, e.p));
        }
        s
    }
}

fn check_event(e: &Event, width: u32, height: u32) -> Result<()> {
    if e.p != 1 && e.p != -1 {
        return Err(Error::contract(format!("polarity must be +1 or -1, got {}", e.p)));
    }
    if e.x >= width || e.y >= height {
        return Err(Error::Bounds(format!(
            "event t={} x={} y={} p={} outside {}x{} sensor",
            e.t, e.x, e.y, e.p, width, height
        )));
    }
    Ok(())
}

/// Parses `t_us,x,y,p` lines. A leading `t,x,y,p` header and blank lines are
/// skipped.
pub fn parse_event_csv(text: &str, width: u32, height: u32) -> Result<EventStream> {
    let mut events = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if events.is_empty() && line.replace(' ', "") == "t,x,y,p" {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let [t, x, y, p] = fields.as_slice() else {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected 4 fields, got {}", fields.len()),
            });
        };
        let bad = |what: &str, v: &str| Error::Parse {
            line: line_no,
            msg: format!("bad {what} {v:?}"),
        };
        let e = Event {
            t: t.parse().map_err(|_| bad("timestamp", t))?,
            x: x.parse().map_err(|_| bad("x", x))?,
            y: y.parse().map_err(|_| bad("y", y))?,
            p: match *p {
                "1" | "+1" => 1,
                "-1" => -1,
                other => return Err(bad("polarity", other)),
            },
        };
        if e.x >= width || e.y >= height {
            return Err(Error::Bounds(format!(
                "line {line_no}: event t={} x={} y={} p={} outside {width}x{height} sensor",
                e.t, e.x, e.y, e.p
            )));
        }
        events.push(e);
    }
    events.sort();
    Ok(EventStream { width, height, events })
}

/// Log-intensity change for every pixel when the view is translated
/// horizontally by `shift_px` (content at `x + shift` moves to `x`, edges
/// replicated). Row-major, one value per pixel.
pub fn log_deltas(frame: &ImageTensor, shift_px: i64) -> Result<Vec<f64>> {
    if frame.channels() != 1 {
        return Err(Error::contract(format!(
            "event simulation expects a grayscale frame, got {} channels",
            frame.channels()
        )));
    }
    let (h, w) = (frame.height(), frame.width());
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let sx = (x as i64 + shift_px).clamp(0, w as i64 - 1) as usize;
            let before = frame.get(y, x, 0);
            let after = frame.get(y, sx, 0);
            out.push((after + LOG_EPS).ln() - (before + LOG_EPS).ln());
        }
    }
    Ok(out)
}

/// Simulated event burst for a horizontal camera translation.
///
/// Each pixel fires `floor(|delta| / threshold)` events with the sign of the
/// log change. Events are emitted in raster order (row, column, then repeat)
/// and the `j`-th of `E` total events gets `t = j * 1000 / E` microseconds.
pub fn simulate_events(frame: &ImageTensor, shift_px: i64, threshold: f64) -> Result<EventStream> {
    if !(threshold > 0.0) || !threshold.is_finite() {
        return Err(Error::contract(format!("contrast threshold must be > 0, got {threshold}")));
    }
    let deltas = log_deltas(frame, shift_px)?;
    let w = frame.width();
    let mut fired: Vec<(u32, u32, i8, u64)> = Vec::new();
    for (i, d) in deltas.iter().enumerate() {
        let n = (d.abs() / threshold).floor() as u64;
        if n > 0 {
            fired.push(((i % w) as u32, (i / w) as u32, if *d > 0.0 { 1 } else { -1 }, n));
        }
    }
    let total: u64 = fired.iter().map(|f| f.3).sum();
    let mut events = Vec::with_capacity(total as usize);
    let mut j = 0u64;
    for (x, y, p, n) in fired {
        for _ in 0..n {
            events.push(Event {
                t: j * SIM_WINDOW_US / total,
                x,
                y,
                p,
            });
            j += 1;
        }
    }
    EventStream::new(w as u32, frame.height() as u32, events)
}

/// Two-channel polarity histogram, `H x W x 2`; channel 0 counts positive
/// events, channel 1 negative.
#[derive(Debug, Clone, PartialEq)]
pub struct EventFrame {
    counts: Tensor,
}

impl EventFrame {
    pub fn zeros(width: u32, height: u32) -> Self {
        EventFrame {
            counts: Tensor::zeros(vec![height as usize, width as usize, 2]),
        }
    }

    pub fn from_tensor(counts: Tensor) -> Result<Self> {
        match counts.shape() {
            [_, _, 2] => {}
            s => return Err(Error::contract(format!("event frame must be H x W x 2, got {s:?}"))),
        }
        if counts.data().iter().any(|&c| c < 0.0 || c.fract() != 0.0) {
            return Err(Error::contract("event counts must be non-negative integers"));
        }
        Ok(EventFrame { counts })
    }

    pub fn height(&self) -> usize {
        self.counts.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.counts.shape()[1]
    }

    pub fn counts(&self) -> &Tensor {
        &self.counts
    }

    pub fn get(&self, y: usize, x: usize, channel: usize) -> f64 {
        self.counts.data()[(y * self.width() + x) * 2 + channel]
    }

    pub fn total(&self) -> f64 {
        self.counts.data().iter().sum()
    }

    /// Cell-wise sum; frames must share a shape.
    pub fn merge(&self, other: &EventFrame) -> Result<EventFrame> {
        if self.counts.shape() != other.counts.shape() {
            return Err(Error::contract(format!(
                "cannot merge event frames {:?} and {:?}",
                self.counts.shape(),
                other.counts.shape()
            )));
        }
        let data = self
            .counts
            .data()
            .iter()
            .zip(other.counts.data())
            .map(|(a, b)| a + b)
            .collect();
        Ok(EventFrame {
            counts: Tensor::new(self.counts.shape().to_vec(), data)?,
        })
    }

    /// Copy with the two polarity channels exchanged.
    pub fn swap_polarity(&self) -> EventFrame {
        let mut counts = self.counts.clone();
        for cell in counts.data_mut().chunks_exact_mut(2) {
            cell.swap(0, 1);
        }
        EventFrame { counts }
    }
}

/// Counts events with `t0 <= t < t1`.
pub fn accumulate(stream: &EventStream, t0: u64, t1: u64) -> Result<EventFrame> {
    if t0 > t1 {
        return Err(Error::contract(format!("window start {t0} after end {t1}")));
    }
    let mut frame = EventFrame::zeros(stream.width, stream.height);
    let w = stream.width as usize;
    let data = frame.counts.data_mut();
    let start = stream.events.partition_point(|e| e.t < t0);
    for e in stream.events[start..].iter().take_while(|e| e.t < t1) {
        let ch = if e.p > 0 { 0 } else { 1 };
        data[(e.y as usize * w + e.x as usize) * 2 + ch] += 1.0;
    }
    Ok(frame)
}

/// Accumulates the whole stream (`[0, u64::MAX)`).
pub fn accumulate_all(stream: &EventStream) -> EventFrame {
    accumulate(stream, 0, u64::MAX).expect("valid window")
}

/// Red/blue on 0.5 gray: red = `0.5 + 0.5 tanh(pos / 2)`, blue likewise for
/// negative counts, green stays 0.5.
pub fn render_event_frame(ef: &EventFrame) -> ImageTensor {
    let vals = ef
        .counts
        .data()
        .chunks_exact(2)
        .flat_map(|c| [intensity(c[0]), 0.5, intensity(c[1])])
        .collect();
    ImageTensor::new(ef.height(), ef.width(), 3, vals).expect("rendered values lie in [0, 1]")
}

fn intensity(count: f64) -> f64 {
    (0.5 + 0.5 * (count / 2.0).tanh()).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(t: u64, x: u32, y: u32, p: i8) -> Event {
        Event { t, x, y, p }
    }

    #[test]
    fn parse_examples() {
        assert!(parse_event_csv("", 8, 8).unwrap().is_empty());
        let s = parse_event_csv("5,3,2,1", 8, 8).unwrap();
        assert_eq!(s.events(), &[ev(5, 3, 2, 1)]);
        match parse_event_csv("5,3,2,2", 8, 8) {
            Err(Error::Parse { line: 1, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn parse_header_sorting_and_errors() {
        let s = parse_event_csv("t,x,y,p\n9,0,0,-1\n\n5,1,1,1\n5,0,1,-1\n", 2, 2).unwrap();
        assert_eq!(s.events(), &[ev(5, 0, 1, -1), ev(5, 1, 1, 1), ev(9, 0, 0, -1)]);
        match parse_event_csv("1,0,0,1\n2,0,0\n", 2, 2) {
            Err(Error::Parse { line: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
        let err = parse_event_csv("1,8,0,1", 8, 8).unwrap_err();
        assert!(matches!(err, Error::Bounds(ref m) if m.contains("x=8")), "{err}");
        assert!(matches!(parse_event_csv("-3,0,0,1", 8, 8), Err(Error::Parse { .. })));
    }

    #[test]
    fn csv_roundtrip() {
        let s = EventStream::new(4, 4, vec![ev(3, 1, 2, -1), ev(1, 3, 3, 1)]).unwrap();
        assert_eq!(parse_event_csv(&s.to_csv(), 4, 4).unwrap(), s);
    }

    fn gray(w: usize, vals: Vec<f64>) -> ImageTensor {
        ImageTensor::new(vals.len() / w, w, 1, vals).unwrap()
    }

    #[test]
    fn uniform_and_unshifted_frames_are_silent() {
        let f = gray(4, vec![0.3; 16]);
        assert!(simulate_events(&f, 2, 0.1).unwrap().is_empty());
        let g = gray(4, (0..16).map(|i| i as f64 / 15.0).collect());
        assert!(simulate_events(&g, 0, 0.1).unwrap().is_empty());
    }

    #[test]
    fn step_edge_fires_in_edge_column() {
        // Columns 0..4 at 0.2, 4..8 at 0.8.
        let vals: Vec<f64> = (0..64).map(|i| if i % 8 < 4 { 0.2 } else { 0.8 }).collect();
        let f = gray(8, vals);
        let s = simulate_events(&f, 1, 0.2).unwrap();
        // Oracle: ln(0.801 / 0.201) / 0.2 = 6.91...
        let per_pixel = ((0.801f64.ln() - 0.201f64.ln()).abs() / 0.2).floor() as usize;
        assert_eq!(per_pixel, 6);
        assert_eq!(s.len(), 8 * per_pixel);
        assert!(s.events().iter().all(|e| e.x == 3 && e.p == 1));
        assert!(s.events().iter().all(|e| e.t < SIM_WINDOW_US));
        let frame = accumulate_all(&s);
        for y in 0..8 {
            assert_eq!(frame.get(y, 3, 0), 6.0);
        }
    }

    #[test]
    fn rejects_bad_threshold() {
        let f = gray(2, vec![0.1, 0.9]);
        assert!(simulate_events(&f, 1, 0.0).unwrap_err().is_contract());
        assert!(simulate_events(&f, 1, -0.5).unwrap_err().is_contract());
    }

    #[test]
    fn accumulate_examples() {
        let empty = EventStream::empty(4, 4);
        assert_eq!(accumulate(&empty, 0, 100).unwrap().total(), 0.0);

        let s = EventStream::new(8, 8, vec![ev(10, 3, 2, 1)]).unwrap();
        let f = accumulate(&s, 0, 100).unwrap();
        assert_eq!(f.get(2, 3, 0), 1.0);
        assert_eq!(f.total(), 1.0);

        let s = EventStream::new(8, 8, vec![ev(10, 3, 2, 1), ev(11, 3, 2, -1)]).unwrap();
        let f = accumulate(&s, 0, 100).unwrap();
        assert_eq!((f.get(2, 3, 0), f.get(2, 3, 1)), (1.0, 1.0));

        // Half-open window.
        assert_eq!(accumulate(&s, 10, 11).unwrap().total(), 1.0);
        assert!(accumulate(&s, 5, 4).unwrap_err().is_contract());
    }

    #[test]
    fn render_examples() {
        let zero = EventFrame::zeros(3, 2);
        assert!(render_event_frame(&zero).values().iter().all(|&v| v == 0.5));

        let mut t = Tensor::zeros(vec![1, 2, 2]);
        t.data_mut()[0] = 1e6;
        t.data_mut()[3] = 3.0;
        let ef = EventFrame::from_tensor(t).unwrap();
        let img = render_event_frame(&ef);
        assert!((img.get(0, 0, 0) - 1.0).abs() < 1e-6);

        let swapped = render_event_frame(&ef.swap_polarity());
        for y in 0..1 {
            for x in 0..2 {
                assert_eq!(swapped.get(y, x, 0), img.get(y, x, 2));
                assert_eq!(swapped.get(y, x, 2), img.get(y, x, 0));
                assert_eq!(swapped.get(y, x, 1), img.get(y, x, 1));
            }
        }
    }

    fn arb_stream() -> impl Strategy<Value = EventStream> {
        proptest::collection::vec((0u64..500, 0u32..6, 0u32..5, prop::bool::ANY), 0..60).prop_map(|v| {
            let events = v
                .into_iter()
                .map(|(t, x, y, pos)| ev(t, x, y, if pos { 1 } else { -1 }))
                .collect();
            EventStream::new(6, 5, events).unwrap()
        })
    }

    proptest! {
        #[test]
        fn accumulate_additive(s in arb_stream(), a in 0u64..200, ab in 0u64..200, bc in 0u64..200) {
            let (b, c) = (a + ab, a + ab + bc);
            let left = accumulate(&s, a, b).unwrap();
            let right = accumulate(&s, b, c).unwrap();
            prop_assert_eq!(left.merge(&right).unwrap(), accumulate(&s, a, c).unwrap());
        }

        #[test]
        fn frame_total_matches_event_count(s in arb_stream()) {
            prop_assert_eq!(accumulate_all(&s).total() as usize, s.len());
        }

        #[test]
        fn stream_is_sorted(s in arb_stream()) {
            prop_assert!(s.events().windows(2).all(|w| w[0] <= w[1]));
        }

        #[test]
        fn complementary_two_level_frames_flip_polarity(
            bits in proptest::collection::vec(prop::bool::ANY, 30),
            a in 0.0f64..0.5,
            shift in -3i64..4,
        ) {
            // Levels {a, 1 - a}: replacing the frame with 1 - frame negates
            // every log change exactly.
            let f = gray(6, bits.iter().map(|&b| if b { 1.0 - a } else { a }).collect());
            let g = gray(6, bits.iter().map(|&b| if b { a } else { 1.0 - a }).collect());
            let sf = simulate_events(&f, shift, 0.15).unwrap();
            let sg = simulate_events(&g, shift, 0.15).unwrap();
            prop_assert_eq!(sf.len(), sg.len());
            for (x, y) in sf.events().iter().zip(sg.events()) {
                prop_assert_eq!((x.t, x.x, x.y), (y.t, y.x, y.y));
                prop_assert_eq!(x.p, -y.p);
            }
        }
    }
}
