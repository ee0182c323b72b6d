//! Text file formats.
//!
//! Floats are written with 17 significant digits, which reproduces every
//! `f64` bit for bit. Tokens are separated by single spaces; a line with
//! missing or extra tokens is an error.
//!
//! Frame (`LAF1`):
//!
//! ```text
//! LAF1
//! frame <frame_id> <n_points> <n_boxes> <rows> <cols>
//! <x> <y> <z> <intensity> <elongation> <ray_row> <ray_col>    n_points lines, ray -1 -1 when absent
//! <cx> <cy> <cz> <l> <w> <h> <heading> <class> <uid>          n_boxes lines
//! ```
//!
//! `rows cols` is `0 0` for frames without a range image.
//!
//! Exemplar bank (`LAB1`): a count line, then per exemplar a header line,
//! its box line and its points in the box's local frame.
//!
//! ```text
//! LAB1
//! exemplars <n>
//! exemplar <source_frame_id> <n_points>
//! <box line>
//! <x> <y> <z> <intensity> <elongation>
//! ```
//!
//! Range image (`LAR1`): sensor layout, then one line per cell in row-major
//! order, `-1` for an empty cell and `<range> <x> <y> <z> <intensity>
//! <elongation>` otherwise, then the frame's boxes.
//!
//! ```text
//! LAR1
//! image <frame_id> <rows> <cols> <n_boxes>
//! azimuth_origin <phi>
//! inclinations <theta_0> ... <theta_{rows-1}>
//! ```

use std::fmt::Write;

use thiserror::Error;

use crate::geometry::{Box3D, ClassId, Frame, ImageShape, Point, RayIndex};
use crate::ops::{ExemplarBank, ObjectExemplar};
use crate::rangeview::{RangeGeometry, RangeImage, RangeReturn};

pub const FRAME_MAGIC: &str = "LAF1";
pub const BANK_MAGIC: &str = "LAB1";
pub const IMAGE_MAGIC: &str = "LAR1";

#[derive(Debug, Clone, Error, PartialEq)]
#[error("line {line}: {message}")]
pub struct FormatError {
    /// 1-based; 0 when the error concerns the whole file.
    pub line: usize,
    pub message: String,
}

fn err<T>(line: usize, message: impl Into<String>) -> Result<T, FormatError> {
    Err(FormatError {
        line,
        message: message.into(),
    })
}

/// Scientific notation with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            inner: text.lines().enumerate(),
            last: 0,
        }
    }

    fn next_line(&mut self, what: &str) -> Result<(usize, &'a str), FormatError> {
        match self.inner.next() {
            Some((i, l)) => {
                self.last = i + 1;
                Ok((i + 1, l))
            }
            None => err(
                self.last + 1,
                format!("unexpected end of file, expected {what}"),
            ),
        }
    }

    /// Splits the next line into exactly `n` tokens.
    fn tokens(&mut self, what: &str, n: usize) -> Result<(usize, Vec<&'a str>), FormatError> {
        let (line, l) = self.next_line(what)?;
        let t: Vec<&str> = l.split_whitespace().collect();
        if t.len() != n {
            return err(
                line,
                format!("{what}: expected {n} fields, found {}", t.len()),
            );
        }
        Ok((line, t))
    }

    fn magic(&mut self, magic: &str) -> Result<(), FormatError> {
        let (line, l) = self.next_line(magic)?;
        if l.trim_end() != magic {
            return err(line, format!("expected {magic:?}, found {l:?}"));
        }
        Ok(())
    }

    fn finish(&mut self) -> Result<(), FormatError> {
        for (i, l) in self.inner.by_ref() {
            if !l.trim().is_empty() {
                return err(i + 1, "unexpected content after the last record");
            }
        }
        Ok(())
    }
}

fn float(line: usize, s: &str) -> Result<f64, FormatError> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => err(line, format!("bad number {s:?}")),
    }
}

fn int<T: std::str::FromStr>(line: usize, s: &str) -> Result<T, FormatError> {
    s.parse::<T>()
        .or_else(|_| err(line, format!("bad integer {s:?}")))
}

fn keyword(line: usize, got: &str, want: &str) -> Result<(), FormatError> {
    if got != want {
        return err(line, format!("expected {want:?}, found {got:?}"));
    }
    Ok(())
}

fn box_line(b: &Box3D) -> String {
    let f: Vec<String> = [b.cx, b.cy, b.cz, b.length, b.width, b.height, b.heading]
        .into_iter()
        .map(fmt_f64)
        .collect();
    format!("{} {} {}\n", f.join(" "), b.class, b.uid)
}

fn parse_box(lines: &mut Lines<'_>) -> Result<Box3D, FormatError> {
    let (line, t) = lines.tokens("box", 9)?;
    let v: Vec<f64> = t[..7]
        .iter()
        .map(|s| float(line, s))
        .collect::<Result<_, _>>()?;
    let class: ClassId = t[7]
        .parse()
        .or_else(|e: crate::geometry::GeometryError| err(line, e.to_string()))?;
    let uid = int(line, t[8])?;
    let b = Box3D {
        cx: v[0],
        cy: v[1],
        cz: v[2],
        length: v[3],
        width: v[4],
        height: v[5],
        heading: v[6],
        class,
        uid,
    };
    b.validate().or_else(|e| err(line, e.to_string()))?;
    Ok(b)
}

pub fn write_frame(frame: &Frame) -> String {
    let shape = frame.range_shape.unwrap_or(ImageShape { rows: 0, cols: 0 });
    let mut s = format!(
        "{FRAME_MAGIC}\nframe {} {} {} {} {}\n",
        frame.frame_id,
        frame.points.len(),
        frame.boxes.len(),
        shape.rows,
        shape.cols
    );
    for p in &frame.points {
        let (r, c) = p
            .ray
            .map(|r| (r.row as i64, r.col as i64))
            .unwrap_or((-1, -1));
        let _ = writeln!(
            s,
            "{} {} {} {} {} {r} {c}",
            fmt_f64(p.x),
            fmt_f64(p.y),
            fmt_f64(p.z),
            fmt_f64(p.intensity),
            fmt_f64(p.elongation)
        );
    }
    for b in &frame.boxes {
        s.push_str(&box_line(b));
    }
    s
}

pub fn parse_frame(text: &str) -> Result<Frame, FormatError> {
    let mut lines = Lines::new(text);
    lines.magic(FRAME_MAGIC)?;
    let (hl, h) = lines.tokens("frame header", 6)?;
    keyword(hl, h[0], "frame")?;
    let n_points: usize = int(hl, h[2])?;
    let n_boxes: usize = int(hl, h[3])?;
    let rows: u32 = int(hl, h[4])?;
    let cols: u32 = int(hl, h[5])?;
    let range_shape = match (rows, cols) {
        (0, 0) => None,
        (0, _) | (_, 0) => return err(hl, "rows and cols must both be zero or both positive"),
        _ => Some(ImageShape { rows, cols }),
    };
    let mut frame = Frame::new(h[1]);
    frame.range_shape = range_shape;
    frame.points.reserve(n_points.min(1 << 24));
    for _ in 0..n_points {
        let (line, t) = lines.tokens("point", 7)?;
        let mut p = Point::new(float(line, t[0])?, float(line, t[1])?, float(line, t[2])?)
            .with_features(float(line, t[3])?, float(line, t[4])?);
        let row: i64 = int(line, t[5])?;
        let col: i64 = int(line, t[6])?;
        p.ray = match (row, col) {
            (-1, -1) => None,
            (r, c) if r >= 0 && c >= 0 && r <= u32::MAX as i64 && c <= u32::MAX as i64 => {
                Some(RayIndex::new(r as u32, c as u32))
            }
            _ => return err(line, format!("bad ray index ({row}, {col})")),
        };
        frame.points.push(p);
    }
    for _ in 0..n_boxes {
        frame.boxes.push(parse_box(&mut lines)?);
    }
    lines.finish()?;
    frame.validate().or_else(|e| err(hl, e.to_string()))?;
    Ok(frame)
}

pub fn write_bank(bank: &ExemplarBank) -> String {
    let mut s = format!("{BANK_MAGIC}\nexemplars {}\n", bank.exemplars.len());
    for e in &bank.exemplars {
        let _ = writeln!(s, "exemplar {} {}", e.source_frame_id, e.points.len());
        s.push_str(&box_line(&e.bbox));
        for p in &e.points {
            let _ = writeln!(
                s,
                "{} {} {} {} {}",
                fmt_f64(p.x),
                fmt_f64(p.y),
                fmt_f64(p.z),
                fmt_f64(p.intensity),
                fmt_f64(p.elongation)
            );
        }
    }
    s
}

pub fn parse_bank(text: &str) -> Result<ExemplarBank, FormatError> {
    let mut lines = Lines::new(text);
    lines.magic(BANK_MAGIC)?;
    let (cl, c) = lines.tokens("exemplar count", 2)?;
    keyword(cl, c[0], "exemplars")?;
    let n: usize = int(cl, c[1])?;
    let mut exemplars = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        let (hl, h) = lines.tokens("exemplar header", 3)?;
        keyword(hl, h[0], "exemplar")?;
        let n_points: usize = int(hl, h[2])?;
        let bbox = parse_box(&mut lines)?;
        let mut points = Vec::with_capacity(n_points.min(1 << 20));
        for _ in 0..n_points {
            let (line, t) = lines.tokens("exemplar point", 5)?;
            let p = Point::new(float(line, t[0])?, float(line, t[1])?, float(line, t[2])?)
                .with_features(float(line, t[3])?, float(line, t[4])?);
            if !bbox.contains_local(p.position()) {
                return err(line, "exemplar point lies outside its box");
            }
            points.push(p);
        }
        exemplars.push(ObjectExemplar {
            bbox,
            points,
            source_frame_id: h[1].to_string(),
        });
    }
    lines.finish()?;
    Ok(ExemplarBank::new(exemplars))
}

/// A range image with the labels of the frame it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageFile {
    pub frame_id: String,
    pub image: RangeImage,
    pub boxes: Vec<Box3D>,
}

pub fn write_image(file: &ImageFile) -> String {
    let g = file.image.geometry();
    let mut s = format!(
        "{IMAGE_MAGIC}\nimage {} {} {} {}\nazimuth_origin {}\ninclinations",
        file.frame_id,
        g.rows(),
        g.cols(),
        file.boxes.len(),
        fmt_f64(g.azimuth_origin())
    );
    for t in g.inclinations() {
        s.push(' ');
        s.push_str(&fmt_f64(*t));
    }
    s.push('\n');
    for cell in file.image.cells() {
        match cell {
            None => s.push_str("-1\n"),
            Some(r) => {
                let _ = writeln!(
                    s,
                    "{} {} {} {} {} {}",
                    fmt_f64(r.range()),
                    fmt_f64(r.position[0]),
                    fmt_f64(r.position[1]),
                    fmt_f64(r.position[2]),
                    fmt_f64(r.intensity),
                    fmt_f64(r.elongation)
                );
            }
        }
    }
    for b in &file.boxes {
        s.push_str(&box_line(b));
    }
    s
}

pub fn parse_image(text: &str) -> Result<ImageFile, FormatError> {
    let mut lines = Lines::new(text);
    lines.magic(IMAGE_MAGIC)?;
    let (hl, h) = lines.tokens("image header", 5)?;
    keyword(hl, h[0], "image")?;
    let frame_id = h[1].to_string();
    if frame_id.is_empty() {
        return err(hl, "empty frame id");
    }
    let rows: u32 = int(hl, h[2])?;
    let cols: u32 = int(hl, h[3])?;
    let n_boxes: usize = int(hl, h[4])?;
    let (al, a) = lines.tokens("azimuth origin", 2)?;
    keyword(al, a[0], "azimuth_origin")?;
    let origin = float(al, a[1])?;
    let (il, inc) = lines.tokens("inclinations", rows as usize + 1)?;
    keyword(il, inc[0], "inclinations")?;
    let inclinations = inc[1..]
        .iter()
        .map(|s| float(il, s))
        .collect::<Result<Vec<_>, _>>()?;
    let geometry =
        RangeGeometry::new(inclinations, cols, origin).or_else(|e| err(il, e.to_string()))?;
    let mut image = RangeImage::new(geometry);
    for row in 0..rows {
        for col in 0..cols {
            let (line, l) = lines.next_line("cell")?;
            let t: Vec<&str> = l.split_whitespace().collect();
            match t.as_slice() {
                ["-1"] => {}
                [range, rest @ ..] if rest.len() == 5 => {
                    let v = rest
                        .iter()
                        .map(|s| float(line, s))
                        .collect::<Result<Vec<_>, _>>()?;
                    let r = RangeReturn {
                        position: [v[0], v[1], v[2]],
                        intensity: v[3],
                        elongation: v[4],
                    };
                    if float(line, range)?.to_bits() != r.range().to_bits() {
                        return err(line, "range does not match the stored position");
                    }
                    image
                        .set(row, col, Some(r))
                        .or_else(|e| err(line, e.to_string()))?;
                }
                _ => {
                    return err(
                        line,
                        format!("cell: expected -1 or 6 fields, found {} fields", t.len()),
                    )
                }
            }
        }
    }
    let mut boxes = Vec::with_capacity(n_boxes.min(1 << 20));
    for _ in 0..n_boxes {
        boxes.push(parse_box(&mut lines)?);
    }
    lines.finish()?;
    Ok(ImageFile {
        frame_id,
        image,
        boxes,
    })
}
