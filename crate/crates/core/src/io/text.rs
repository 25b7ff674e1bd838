use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{Rect, Shape};

/// Parses a `.pts` annotation: `version: 1`, `n_points: <p>`, `{`, one
/// `<x> <y>` line per point, `}`. Coordinates in the file are 1-based and
/// come back 0-based. Blank lines are ignored.
pub fn parse_pts(text: &str) -> Result<Shape> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let mut next = |what: &str| {
        lines
            .next()
            .ok_or_else(|| Error::parse(text.lines().count() + 1, format!("unexpected end of file, expected {what}")))
    };

    let (n, l) = next("version line")?;
    let version = header_value(n, l, "version")?;
    if version != "1" {
        return Err(Error::parse(n, format!("unsupported pts version {version:?}")));
    }
    let (n, l) = next("n_points line")?;
    let count: usize = header_value(n, l, "n_points")?
        .parse()
        .map_err(|_| Error::parse(n, "n_points is not a non-negative integer"))?;
    let (n, l) = next("'{'")?;
    if l != "{" {
        return Err(Error::parse(n, format!("expected '{{', found {l:?}")));
    }
    let mut coords = Vec::with_capacity(2 * count.min(1 << 16));
    loop {
        let (n, l) = next("a point or '}'")?;
        if l == "}" {
            break;
        }
        let mut it = l.split_whitespace();
        let mut coord = |axis: &str| -> Result<f64> {
            let tok = it.next().ok_or_else(|| Error::parse(n, format!("missing {axis} coordinate")))?;
            let v: f64 = tok
                .parse()
                .map_err(|_| Error::parse(n, format!("invalid {axis} coordinate {tok:?}")))?;
            if v.is_finite() {
                Ok(v - 1.0)
            } else {
                Err(Error::parse(n, format!("non-finite {axis} coordinate")))
            }
        };
        let x = coord("x")?;
        let y = coord("y")?;
        if it.next().is_some() {
            return Err(Error::parse(n, "more than two numbers on a point line"));
        }
        coords.push(x);
        coords.push(y);
    }
    if let Some((n, l)) = lines.next() {
        return Err(Error::parse(n, format!("unexpected content after '}}': {l:?}")));
    }
    if coords.len() / 2 != count {
        return Err(Error::MismatchedCount {
            expected: count,
            found: coords.len() / 2,
        });
    }
    Shape::new(coords)
}

fn header_value<'a>(line_no: usize, line: &'a str, key: &str) -> Result<&'a str> {
    line.split_once(':')
        .filter(|(k, _)| k.trim() == key)
        .map(|(_, v)| v.trim())
        .ok_or_else(|| Error::parse(line_no, format!("expected '{key}: ...', found {line:?}")))
}

/// Formats a shape as `.pts` text with 1-based, 6-decimal coordinates.
pub fn format_pts(s: &Shape) -> String {
    let mut out = format!("version: 1\nn_points: {}\n{{\n", s.num_points());
    for [x, y] in s.points() {
        out.push_str(&format!("{:.6} {:.6}\n", x + 1.0, y + 1.0));
    }
    out.push_str("}\n");
    out
}

pub fn load_pts(path: impl AsRef<Path>) -> Result<Shape> {
    parse_pts(&read_text(path.as_ref())?)
}

pub fn write_pts(path: impl AsRef<Path>, s: &Shape) -> Result<()> {
    write_atomic(path.as_ref(), format_pts(s).as_bytes())
}

/// Parses four whitespace- or comma-separated numbers: left top right bottom.
pub fn parse_bbox(text: &str) -> Result<Rect> {
    let mut vals = Vec::with_capacity(4);
    for (i, line) in text.lines().enumerate() {
        for tok in line.split(|c: char| c.is_whitespace() || c == ',').filter(|t| !t.is_empty()) {
            let v: f64 = tok
                .parse()
                .map_err(|_| Error::parse(i + 1, format!("invalid number {tok:?}")))?;
            if !v.is_finite() {
                return Err(Error::parse(i + 1, "non-finite box coordinate"));
            }
            if vals.len() == 4 {
                return Err(Error::parse(i + 1, "more than four numbers in bounding box"));
            }
            vals.push(v);
        }
    }
    if vals.len() != 4 {
        return Err(Error::parse(
            text.lines().count().max(1),
            format!("expected 4 numbers (left top right bottom), found {}", vals.len()),
        ));
    }
    Rect::new(vals[0], vals[1], vals[2], vals[3])
}

pub fn format_bbox(r: &Rect) -> String {
    format!("{:.6} {:.6} {:.6} {:.6}\n", r.left, r.top, r.right, r.bottom)
}

pub fn load_bbox(path: impl AsRef<Path>) -> Result<Rect> {
    parse_bbox(&read_text(path.as_ref())?)
}

pub fn write_bbox(path: impl AsRef<Path>, r: &Rect) -> Result<()> {
    write_atomic(path.as_ref(), format_bbox(r).as_bytes())
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes through a sibling temporary file and renames it into place.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArg(format!("{} has no file name", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::io(path, e)
    })
}
