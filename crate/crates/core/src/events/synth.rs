//! Desk-scale moving-pattern event generator.
//!
//! Each class is a motion direction. An object (a bar spanning part of the
//! field, a tilted bar, or a disc) sweeps across the sensor; pixels near its leading edge
//! emit ON events and pixels near its trailing edge emit OFF events, with
//! Poisson counts per millisecond. Uniform background noise is added on top.

use super::{Event, EventError, EventStream, Polarity};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

pub const NUM_DIRECTIONS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Left,
    Right,
    Up,
    Down,
}

impl Direction {
    pub fn from_class(class_id: usize) -> Result<Self, EventError> {
        match class_id {
            0 => Ok(Direction::Left),
            1 => Ok(Direction::Right),
            2 => Ok(Direction::Up),
            3 => Ok(Direction::Down),
            other => Err(EventError::UnknownClass(other)),
        }
    }

    pub fn class_id(self) -> usize {
        self as usize
    }

    /// Unit motion vector in image coordinates (y grows downward).
    pub fn vector(self) -> (f64, f64) {
        match self {
            Direction::Left => (-1.0, 0.0),
            Direction::Right => (1.0, 0.0),
            Direction::Up => (0.0, -1.0),
            Direction::Down => (0.0, 1.0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Direction::Left => "left",
            Direction::Right => "right",
            Direction::Up => "up",
            Direction::Down => "down",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Shape {
    Bar,
    Blob,
    /// A bar rotated 15 to 30 degrees away from perpendicular to its motion.
    Tilted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    /// Selects the motion direction, see [`Direction::from_class`].
    pub class_id: usize,
    pub shape: Shape,
    /// Square sensor side in pixels.
    pub sensor: u16,
    pub duration_ms: u64,
    /// Expected events per edge pixel per millisecond.
    pub event_rate: f64,
    /// Expected background events per pixel per millisecond.
    pub noise_rate: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(class_id: usize, seed: u64) -> Self {
        Self {
            class_id,
            shape: Shape::Bar,
            sensor: 128,
            duration_ms: 300,
            event_rate: 0.25,
            noise_rate: 2e-4,
            seed,
        }
    }

    fn validate(&self) -> Result<Direction, EventError> {
        if self.duration_ms < 200 {
            return Err(EventError::InvalidSpec(format!(
                "duration {} ms is below the 200 ms minimum",
                self.duration_ms
            )));
        }
        if !(self.event_rate >= 0.0 && self.noise_rate >= 0.0) {
            return Err(EventError::InvalidSpec("rates must be non-negative".into()));
        }
        if self.sensor < 8 {
            return Err(EventError::InvalidSpec("sensor must be at least 8 pixels".into()));
        }
        Direction::from_class(self.class_id)
    }
}

/// Half-width of the band around an edge that emits events, in pixels.
const EDGE_BAND: f64 = 1.0;

/// Bar half-length across the motion axis, as a fraction of the sensor side.
const BAR_HALF: std::ops::Range<f64> = 0.20..0.35;

struct Geometry {
    dir: (f64, f64),
    /// Position along the motion axis at t = 0 and at the end.
    start: f64,
    end: f64,
    /// Centre and half-extent across the motion axis.
    cross_center: f64,
    cross_half: f64,
    /// Bar thickness or disc radius.
    size: f64,
    /// Bar rotation in radians; zero for an upright bar.
    tilt: f64,
}

impl Geometry {
    fn sample(shape: Shape, dir: Direction, side: f64, rng: &mut ChaCha8Rng) -> Self {
        let from = rng.gen_range(0.10..0.30) * side;
        let to = rng.gen_range(0.70..0.90) * side;
        let (dx, dy) = dir.vector();
        let (start, end) = if dx + dy > 0.0 { (from, to) } else { (side - from, side - to) };
        let (cross_center, cross_half, size) = match shape {
            Shape::Bar | Shape::Tilted => (
                rng.gen_range(0.35..0.65) * side,
                rng.gen_range(BAR_HALF) * side,
                rng.gen_range(0.03..0.07) * side,
            ),
            Shape::Blob => {
                let r = rng.gen_range(0.08..0.14) * side;
                (rng.gen_range(0.35..0.65) * side, r, r)
            }
        };
        let tilt = match shape {
            Shape::Tilted => {
                let a = rng.gen_range(15.0f64..30.0).to_radians();
                if rng.gen_bool(0.5) { a } else { -a }
            }
            _ => 0.0,
        };
        Self {
            dir: (dx, dy),
            start,
            end,
            cross_center,
            cross_half,
            size,
            tilt,
        }
    }
}

/// Generates one labelled stream; identical specs give identical streams.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<(EventStream, usize), EventError> {
    let dir = spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let side = spec.sensor as f64;
    let geo = Geometry::sample(spec.shape, dir, side, &mut rng);
    let along_x = geo.dir.0 != 0.0;
    let sign = geo.dir.0 + geo.dir.1;

    // A disc ring of radius r has an effective (|n.v|-weighted) edge length of
    // 4r against 4 * half-length for the two bar edges; scale the disc rate so
    // both shapes emit the same expected flux as a mean bar.
    let gain = match spec.shape {
        Shape::Bar | Shape::Tilted => 1.0,
        Shape::Blob => (BAR_HALF.start + BAR_HALF.end) / 2.0 * side / geo.size,
    };
    let edge_counts = (spec.event_rate > 0.0)
        .then(|| Poisson::new(spec.event_rate * gain).expect("positive rate"));
    let noise_per_bin = spec.noise_rate * side * side;
    let noise_counts = (noise_per_bin > 0.0)
        .then(|| Poisson::new(noise_per_bin).expect("positive rate"));

    let n = spec.sensor as usize;
    let mut events = Vec::new();
    let mut emit = |rng: &mut ChaCha8Rng, bin: u64, x: usize, y: usize, p: Polarity, k: u64| {
        for _ in 0..k {
            events.push(Event::new(bin * 1000 + rng.gen_range(0..1000), x as u16, y as u16, p));
        }
    };

    for bin in 0..spec.duration_ms {
        let frac = (bin as f64 + 0.5) / spec.duration_ms as f64;
        let pos = geo.start + (geo.end - geo.start) * frac;

        if let Some(pois) = &edge_counts {
            match spec.shape {
                Shape::Bar => {
                    let lead = pos + sign * geo.size / 2.0;
                    let trail = pos - sign * geo.size / 2.0;
                    let lo = ((geo.cross_center - geo.cross_half).floor().max(0.0)) as usize;
                    let hi = ((geo.cross_center + geo.cross_half).ceil() as usize).min(n);
                    for (edge, pol) in [(lead, Polarity::On), (trail, Polarity::Off)] {
                        let a0 = ((edge - EDGE_BAND).floor().max(0.0)) as usize;
                        let a1 = ((edge + EDGE_BAND).ceil().max(0.0) as usize).min(n);
                        for a in a0..a1 {
                            if ((a as f64 + 0.5) - edge).abs() >= EDGE_BAND {
                                continue;
                            }
                            for c in lo..hi {
                                let k = pois.sample(&mut rng) as u64;
                                let (x, y) = if along_x { (a, c) } else { (c, a) };
                                emit(&mut rng, bin, x, y, pol, k);
                            }
                        }
                    }
                }
                Shape::Blob => {
                    let (cx, cy) = if along_x {
                        (pos, geo.cross_center)
                    } else {
                        (geo.cross_center, pos)
                    };
                    let r = geo.size;
                    let x0 = ((cx - r - EDGE_BAND).floor().max(0.0)) as usize;
                    let x1 = ((cx + r + EDGE_BAND).ceil().max(0.0) as usize).min(n);
                    let y0 = ((cy - r - EDGE_BAND).floor().max(0.0)) as usize;
                    let y1 = ((cy + r + EDGE_BAND).ceil().max(0.0) as usize).min(n);
                    for y in y0..y1 {
                        for x in x0..x1 {
                            let (px, py) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                            let d = (px * px + py * py).sqrt();
                            if (d - r).abs() >= EDGE_BAND {
                                continue;
                            }
                            let ahead = px * geo.dir.0 + py * geo.dir.1;
                            let pol = if ahead >= 0.0 { Polarity::On } else { Polarity::Off };
                            // Brightness change scales with the normal speed |n.v|;
                            // thin the edge events accordingly.
                            let w = (ahead.abs() / d.max(1e-9)).min(1.0);
                            let k = (0..pois.sample(&mut rng) as u64).filter(|_| rng.gen_bool(w)).count() as u64;
                            emit(&mut rng, bin, x, y, pol, k);
                        }
                    }
                }
                Shape::Tilted => {
                    let (cx, cy) = if along_x {
                        (pos, geo.cross_center)
                    } else {
                        (geo.cross_center, pos)
                    };
                    let (d, p) = (geo.dir, (-geo.dir.1, geo.dir.0));
                    let (cos, sin) = (geo.tilt.cos(), geo.tilt.sin());
                    let normal = (cos * d.0 + sin * p.0, cos * d.1 + sin * p.1);
                    let along = (-sin * d.0 + cos * p.0, -sin * d.1 + cos * p.1);
                    let reach = geo.cross_half + geo.size + EDGE_BAND;
                    let x0 = ((cx - reach).floor().max(0.0)) as usize;
                    let x1 = ((cx + reach).ceil().max(0.0) as usize).min(n);
                    let y0 = ((cy - reach).floor().max(0.0)) as usize;
                    let y1 = ((cy + reach).ceil().max(0.0) as usize).min(n);
                    for y in y0..y1 {
                        for x in x0..x1 {
                            let (px, py) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                            if (px * along.0 + py * along.1).abs() >= geo.cross_half {
                                continue;
                            }
                            let dn = px * normal.0 + py * normal.1;
                            let pol = if (dn - geo.size / 2.0).abs() < EDGE_BAND {
                                Polarity::On
                            } else if (dn + geo.size / 2.0).abs() < EDGE_BAND {
                                Polarity::Off
                            } else {
                                continue;
                            };
                            // Normal speed of a tilted edge is cos(tilt).
                            let k = (0..pois.sample(&mut rng) as u64).filter(|_| rng.gen_bool(cos)).count() as u64;
                            emit(&mut rng, bin, x, y, pol, k);
                        }
                    }
                }
            }
        }

        if let Some(pois) = &noise_counts {
            let k = pois.sample(&mut rng) as u64;
            for _ in 0..k {
                let x = rng.gen_range(0..n);
                let y = rng.gen_range(0..n);
                let p = if rng.gen_bool(0.5) { Polarity::On } else { Polarity::Off };
                emit(&mut rng, bin, x, y, p, 1);
            }
        }
    }

    let stream = EventStream::new(spec.sensor, spec.sensor, events)?;
    Ok((stream, dir.class_id()))
}
