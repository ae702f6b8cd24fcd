//! Event streams from DVS-style sensors and their dense representations.
//!
//! A raw [`EventStream`] is binned into a [`FrameSequence`] of per-millisecond
//! event counts (the spiking encoder's input) and summarised into a
//! [`TraceImage`] time surface (the decoder's reconstruction target).

mod format;
mod frames;
mod synth;

pub use format::{parse_event_file, write_event_file, EventFormat, ParseError};
pub use frames::{
    bin_events, downsample_spatial, random_crop_ms, time_surface, FrameSequence, TraceImage,
    TraceState,
};
pub use synth::{gen_synthetic, Direction, Shape, SyntheticSpec, NUM_DIRECTIONS};

use thiserror::Error;

/// Bin width used throughout the pipeline, in microseconds.
pub const BIN_US: u32 = 1000;

#[derive(Debug, Error, PartialEq)]
pub enum EventError {
    #[error("event {index} at ({x}, {y}) lies outside the {width}x{height} sensor")]
    OutOfBounds {
        index: usize,
        x: u16,
        y: u16,
        width: u16,
        height: u16,
    },
    #[error("number of bins must be positive")]
    ZeroBins,
    #[error("bin width must be positive")]
    ZeroBinWidth,
    #[error("{height}x{width} frames are not divisible by factor {factor}")]
    NotDivisible {
        height: usize,
        width: usize,
        factor: usize,
    },
    #[error("sample spans {available_ms} ms, shorter than the requested {requested_ms} ms crop")]
    TooShort {
        available_ms: u64,
        requested_ms: u64,
    },
    #[error("time constant must be positive, got {0}")]
    BadTimeConstant(f64),
    #[error("unknown synthetic class id {0}")]
    UnknownClass(usize),
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("timestamp {0} us does not fit the binary format's u32 field")]
    TimestampOverflow(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Polarity {
    Off = 0,
    On = 1,
}

impl Polarity {
    pub fn from_bit(bit: u8) -> Option<Self> {
        match bit {
            0 => Some(Polarity::Off),
            1 => Some(Polarity::On),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// A single sensor event; `t` is in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    pub t: u64,
    pub x: u16,
    pub y: u16,
    pub p: Polarity,
}

impl Event {
    pub fn new(t: u64, x: u16, y: u16, p: Polarity) -> Self {
        Self { t, x, y, p }
    }
}

/// Time-ordered events from a `width` x `height` sensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventStream {
    width: u16,
    height: u16,
    events: Vec<Event>,
}

impl EventStream {
    /// Validates coordinates and stable-sorts by timestamp.
    pub fn new(width: u16, height: u16, mut events: Vec<Event>) -> Result<Self, EventError> {
        if let Some((index, e)) = events
            .iter()
            .enumerate()
            .find(|(_, e)| e.x >= width || e.y >= height)
        {
            return Err(EventError::OutOfBounds {
                index,
                x: e.x,
                y: e.y,
                width,
                height,
            });
        }
        if !events.windows(2).all(|w| w[0].t <= w[1].t) {
            events.sort_by_key(|e| e.t);
        }
        Ok(Self {
            width,
            height,
            events,
        })
    }

    pub fn empty(width: u16, height: u16) -> Self {
        Self {
            width,
            height,
            events: Vec::new(),
        }
    }

    pub fn width(&self) -> u16 {
        self.width
    }

    pub fn height(&self) -> u16 {
        self.height
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

    /// Timestamp of the last event plus one microsecond, or 0 when empty.
    pub fn duration_us(&self) -> u64 {
        self.events.last().map_or(0, |e| e.t + 1)
    }

    /// Integer-divides every coordinate by `factor`, shrinking the sensor.
    pub fn downscale(&self, factor: u16) -> Result<Self, EventError> {
        if factor == 0 || self.width % factor != 0 || self.height % factor != 0 {
            return Err(EventError::NotDivisible {
                height: self.height as usize,
                width: self.width as usize,
                factor: factor as usize,
            });
        }
        let events = self
            .events
            .iter()
            .map(|e| Event::new(e.t, e.x / factor, e.y / factor, e.p))
            .collect();
        Ok(Self {
            width: self.width / factor,
            height: self.height / factor,
            events,
        })
    }
}

/// `exp(-dt / tau)`, the per-step decay shared by traces and LIF states.
///
/// Evaluated in f64 and rounded once so every caller sees the same f32.
pub fn decay_factor(dt_ms: f64, tau_ms: f64) -> f32 {
    (-dt_ms / tau_ms).exp() as f32
}
