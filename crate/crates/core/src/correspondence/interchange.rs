//! Text interchange format for correspondence sets.
//!
//! ```text
//! corrs v1 <frame_a> <frame_b> <count>
//! x_a \t y_a \t x_b \t y_b \t confidence \t source      (count lines)
//! ```
//!
//! Coordinates are printed with 4 decimals, confidences with 6. Frame ids are
//! `<video>:<index>`.

use super::{CorrespondenceError, CorrespondenceSet, FrameId, Match};
use crate::geometry::ImageSize;
use nalgebra::Point2;
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

const MAGIC: &str = "corrs";
const VERSION: &str = "v1";

#[derive(Debug, Error)]
pub enum InterchangeError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Correspondence(#[from] CorrespondenceError),
}

fn parse_err(line: usize, message: impl Into<String>) -> InterchangeError {
    InterchangeError::Parse {
        line,
        message: message.into(),
    }
}

/// Non-fatal observations made while parsing.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ParseReport {
    /// Rows that collapsed onto an earlier row and were dropped.
    pub duplicates: usize,
}

pub fn format_correspondences(set: &CorrespondenceSet) -> String {
    let mut out = String::with_capacity(64 + set.len() * 48);
    let _ = writeln!(
        out,
        "{MAGIC} {VERSION} {} {} {}",
        set.frame_a(),
        set.frame_b(),
        set.len()
    );
    for m in set.matches() {
        let _ = writeln!(
            out,
            "{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.6}\t{}",
            m.pa.x, m.pa.y, m.pb.x, m.pb.y, m.confidence, m.source
        );
    }
    out
}

fn parse_coord(field: &str, line: usize, name: &str) -> Result<f64, InterchangeError> {
    let v: f64 = field
        .parse()
        .map_err(|_| parse_err(line, format!("{name}: not a number: {field:?}")))?;
    if !v.is_finite() {
        return Err(parse_err(line, format!("{name}: not finite")));
    }
    Ok(v)
}

/// Parses the interchange text. With `sizes`, endpoints outside
/// `[0, w) x [0, h)` of their frame are rejected; otherwise only negative
/// coordinates are.
pub fn parse_correspondences(
    text: &str,
    sizes: Option<(ImageSize, ImageSize)>,
) -> Result<(CorrespondenceSet, ParseReport), InterchangeError> {
    let mut lines = text.split('\n').enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines.next().ok_or_else(|| parse_err(1, "missing header"))?;
    let fields: Vec<&str> = header.split(' ').collect();
    if fields.len() != 5 || fields[0] != MAGIC || fields[1] != VERSION {
        return Err(parse_err(
            1,
            format!("expected `{MAGIC} {VERSION} <frame_a> <frame_b> <count>`"),
        ));
    }
    let frame_a: FrameId = fields[2]
        .parse()
        .map_err(|e: CorrespondenceError| parse_err(1, e.to_string()))?;
    let frame_b: FrameId = fields[3]
        .parse()
        .map_err(|e: CorrespondenceError| parse_err(1, e.to_string()))?;
    let count: usize = fields[4]
        .parse()
        .map_err(|_| parse_err(1, format!("malformed count {:?}", fields[4])))?;
    if frame_a >= frame_b {
        return Err(parse_err(1, "frames not in canonical order"));
    }

    let mut matches = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let (ln, line) = match lines.next() {
            Some((ln, l)) if !l.is_empty() => (ln, l),
            _ => {
                return Err(parse_err(
                    matches.len() + 2,
                    format!("expected {count} rows, found {}", matches.len()),
                ));
            }
        };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 6 {
            return Err(parse_err(ln, format!("expected 6 fields, got {}", cols.len())));
        }
        let xa = parse_coord(cols[0], ln, "x_a")?;
        let ya = parse_coord(cols[1], ln, "y_a")?;
        let xb = parse_coord(cols[2], ln, "x_b")?;
        let yb = parse_coord(cols[3], ln, "y_b")?;
        let confidence = parse_coord(cols[4], ln, "confidence")?;
        let m = Match::new(Point2::new(xa, ya), Point2::new(xb, yb), confidence, cols[5]);
        if let Err(reason) = m.check() {
            return Err(parse_err(ln, reason));
        }
        if let Some((sa, sb)) = sizes {
            if !sa.contains(&m.pa) || !sb.contains(&m.pb) {
                return Err(parse_err(ln, "coordinates outside image bounds"));
            }
        }
        matches.push(m);
    }
    for (ln, rest) in lines {
        if !rest.is_empty() {
            return Err(parse_err(ln, format!("more rows than the declared count {count}")));
        }
    }
    let (set, raw) = CorrespondenceSet::from_raw(frame_a, frame_b, matches, None)?;
    Ok((
        set,
        ParseReport {
            duplicates: raw.duplicates,
        },
    ))
}

pub fn write_correspondences(path: &Path, set: &CorrespondenceSet) -> std::io::Result<()> {
    std::fs::write(path, format_correspondences(set))
}

pub fn read_correspondences(
    path: &Path,
    sizes: Option<(ImageSize, ImageSize)>,
) -> Result<(CorrespondenceSet, ParseReport), InterchangeError> {
    let text = std::fs::read_to_string(path)?;
    parse_correspondences(&text, sizes)
}
