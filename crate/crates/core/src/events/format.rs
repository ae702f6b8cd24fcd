//! Portable on-disk event formats.
//!
//! Text: a header line `EVT,width,height`, then one `t_us,x,y,p` record per
//! line. Binary: magic `EVT1`, `u16` width, `u16` height, `u64` count, then
//! `count` packed little-endian records of `(u32 t_us, u16 x, u16 y, u8 p)`.

use super::{Event, EventError, EventStream, Polarity};
use thiserror::Error;

const BINARY_MAGIC: &[u8; 4] = b"EVT1";
const BINARY_HEADER_LEN: usize = 4 + 2 + 2 + 8;
const BINARY_RECORD_LEN: usize = 4 + 2 + 2 + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventFormat {
    Text,
    Binary,
}

impl EventFormat {
    /// Guesses the format from the leading bytes.
    pub fn detect(bytes: &[u8]) -> Option<Self> {
        if bytes.starts_with(BINARY_MAGIC) {
            Some(EventFormat::Binary)
        } else if bytes.starts_with(b"EVT,") {
            Some(EventFormat::Text)
        } else {
            None
        }
    }
}

#[derive(Debug, Error, PartialEq)]
#[error("{message} at byte {offset}")]
pub struct ParseError {
    pub offset: usize,
    pub message: String,
}

impl ParseError {
    fn new(offset: usize, message: impl Into<String>) -> Self {
        Self {
            offset,
            message: message.into(),
        }
    }
}

pub fn parse_event_file(bytes: &[u8], format: EventFormat) -> Result<EventStream, ParseError> {
    match format {
        EventFormat::Text => parse_text(bytes),
        EventFormat::Binary => parse_binary(bytes),
    }
}

pub fn write_event_file(stream: &EventStream, format: EventFormat) -> Result<Vec<u8>, EventError> {
    match format {
        EventFormat::Text => {
            let mut out = format!("EVT,{},{}\n", stream.width(), stream.height());
            for e in stream.events() {
                out.push_str(&format!("{},{},{},{}\n", e.t, e.x, e.y, e.p as u8));
            }
            Ok(out.into_bytes())
        }
        EventFormat::Binary => {
            let mut out =
                Vec::with_capacity(BINARY_HEADER_LEN + BINARY_RECORD_LEN * stream.len());
            out.extend_from_slice(BINARY_MAGIC);
            out.extend_from_slice(&stream.width().to_le_bytes());
            out.extend_from_slice(&stream.height().to_le_bytes());
            out.extend_from_slice(&(stream.len() as u64).to_le_bytes());
            for e in stream.events() {
                let t = u32::try_from(e.t).map_err(|_| EventError::TimestampOverflow(e.t))?;
                out.extend_from_slice(&t.to_le_bytes());
                out.extend_from_slice(&e.x.to_le_bytes());
                out.extend_from_slice(&e.y.to_le_bytes());
                out.push(e.p as u8);
            }
            Ok(out)
        }
    }
}

fn finish(
    width: u16,
    height: u16,
    events: Vec<Event>,
    offsets: &[usize],
) -> Result<EventStream, ParseError> {
    EventStream::new(width, height, events).map_err(|e| match e {
        EventError::OutOfBounds { index, .. } => {
            ParseError::new(offsets[index], format!("record out of bounds: {e}"))
        }
        other => ParseError::new(0, other.to_string()),
    })
}

fn parse_text(bytes: &[u8]) -> Result<EventStream, ParseError> {
    let text = std::str::from_utf8(bytes).map_err(|e| {
        ParseError::new(e.valid_up_to(), "text event file is not valid UTF-8")
    })?;
    let mut offset = 0usize;
    let mut lines = text.split_inclusive('\n');

    let header = lines
        .next()
        .ok_or_else(|| ParseError::new(0, "missing EVT header"))?;
    let fields: Vec<&str> = header.trim_end_matches(['\n', '\r']).split(',').collect();
    if fields.len() != 3 || fields[0] != "EVT" {
        return Err(ParseError::new(0, "malformed header, expected `EVT,width,height`"));
    }
    let dim = |s: &str, what: &str| {
        s.trim()
            .parse::<u16>()
            .map_err(|_| ParseError::new(0, format!("malformed header {what} `{s}`")))
    };
    let width = dim(fields[1], "width")?;
    let height = dim(fields[2], "height")?;
    offset += header.len();

    let mut events = Vec::new();
    let mut offsets = Vec::new();
    for line in lines {
        let body = line.trim_end_matches(['\n', '\r']);
        if body.is_empty() {
            offset += line.len();
            continue;
        }
        let parts: Vec<&str> = body.split(',').collect();
        if parts.len() != 4 {
            return Err(ParseError::new(
                offset,
                format!("truncated record `{body}`, expected `t_us,x,y,p`"),
            ));
        }
        let field = |i: usize, name: &str| {
            parts[i]
                .trim()
                .parse::<u64>()
                .map_err(|_| ParseError::new(offset, format!("bad {name} field `{}`", parts[i])))
        };
        let t = field(0, "timestamp")?;
        let x = u16::try_from(field(1, "x")?)
            .map_err(|_| ParseError::new(offset, "x coordinate out of range"))?;
        let y = u16::try_from(field(2, "y")?)
            .map_err(|_| ParseError::new(offset, "y coordinate out of range"))?;
        let p = u8::try_from(field(3, "polarity")?)
            .ok()
            .and_then(Polarity::from_bit)
            .ok_or_else(|| ParseError::new(offset, "polarity must be 0 or 1"))?;
        events.push(Event::new(t, x, y, p));
        offsets.push(offset);
        offset += line.len();
    }
    finish(width, height, events, &offsets)
}

fn parse_binary(bytes: &[u8]) -> Result<EventStream, ParseError> {
    if bytes.len() < BINARY_HEADER_LEN {
        return Err(ParseError::new(bytes.len(), "truncated binary header"));
    }
    if &bytes[..4] != BINARY_MAGIC {
        return Err(ParseError::new(0, "bad magic, expected `EVT1`"));
    }
    let width = u16::from_le_bytes([bytes[4], bytes[5]]);
    let height = u16::from_le_bytes([bytes[6], bytes[7]]);
    let count = u64::from_le_bytes(bytes[8..16].try_into().expect("8-byte slice"));
    let body = &bytes[BINARY_HEADER_LEN..];
    let needed = count
        .checked_mul(BINARY_RECORD_LEN as u64)
        .filter(|&n| n <= body.len() as u64)
        .ok_or_else(|| {
            let complete = body.len() / BINARY_RECORD_LEN;
            ParseError::new(
                BINARY_HEADER_LEN + complete * BINARY_RECORD_LEN,
                format!("truncated record: header declares {count} records, {complete} present"),
            )
        })? as usize;
    if needed != body.len() {
        return Err(ParseError::new(
            BINARY_HEADER_LEN + needed,
            "trailing bytes after last record",
        ));
    }

    let mut events = Vec::with_capacity(count as usize);
    let mut offsets = Vec::with_capacity(count as usize);
    for (i, rec) in body.chunks_exact(BINARY_RECORD_LEN).enumerate() {
        let offset = BINARY_HEADER_LEN + i * BINARY_RECORD_LEN;
        let t = u32::from_le_bytes(rec[0..4].try_into().expect("4-byte slice"));
        let x = u16::from_le_bytes([rec[4], rec[5]]);
        let y = u16::from_le_bytes([rec[6], rec[7]]);
        let p = Polarity::from_bit(rec[8])
            .ok_or_else(|| ParseError::new(offset + 8, "polarity must be 0 or 1"))?;
        events.push(Event::new(t as u64, x, y, p));
        offsets.push(offset);
    }
    finish(width, height, events, &offsets)
}
