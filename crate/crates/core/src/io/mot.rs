//! MOT-challenge style text records:
//! `frame,id,left,top,width,height,conf,class,visibility`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{read_text, EmbeddingSidecar, IoError};
use crate::assoc::{Detection, TrajectorySet};
use crate::geometry::BBox;
use crate::metrics::AnnotatedBox;
use crate::FrameMap;

const MIN_FIELDS: usize = 7;
const MAX_FIELDS: usize = 10;

struct LineCtx<'a> {
    file: &'a str,
    line: usize,
}

impl LineCtx<'_> {
    fn err(&self, column: usize, message: impl Into<String>) -> IoError {
        IoError::Parse {
            file: self.file.to_string(),
            line: self.line,
            column,
            message: message.into(),
        }
    }

    fn real(&self, fields: &[&str], i: usize, name: &str) -> Result<f64, IoError> {
        let v: f64 = fields[i]
            .parse()
            .map_err(|_| self.err(i + 1, format!("{name}: cannot parse {:?} as a number", fields[i])))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(self.err(i + 1, format!("{name}: {v} is not finite")))
        }
    }

    /// Integers may be written as `3` or `3.0`.
    fn integer(&self, fields: &[&str], i: usize, name: &str) -> Result<i64, IoError> {
        if let Ok(v) = fields[i].parse::<i64>() {
            return Ok(v);
        }
        let v = self.real(fields, i, name)?;
        if v.fract() == 0.0 && v.abs() < 9.0e15 {
            Ok(v as i64)
        } else {
            Err(self.err(i + 1, format!("{name}: {:?} is not an integer", fields[i])))
        }
    }
}

fn parse_line(ctx: &LineCtx<'_>, raw: &str) -> Result<AnnotatedBox, IoError> {
    let fields: Vec<&str> = raw.split(',').map(str::trim).collect();
    if !(MIN_FIELDS..=MAX_FIELDS).contains(&fields.len()) {
        return Err(ctx.err(
            fields.len().min(MAX_FIELDS + 1),
            format!("expected {MIN_FIELDS} to {MAX_FIELDS} fields, found {}", fields.len()),
        ));
    }
    let frame = ctx.integer(&fields, 0, "frame")?;
    let frame = u32::try_from(frame)
        .ok()
        .filter(|&f| f >= 1)
        .ok_or_else(|| ctx.err(1, format!("frame {frame} must be a positive 32-bit integer")))?;
    let id = ctx.integer(&fields, 1, "id")?;
    let bbox = BBox::new(
        ctx.real(&fields, 2, "left")?,
        ctx.real(&fields, 3, "top")?,
        ctx.real(&fields, 4, "width")?,
        ctx.real(&fields, 5, "height")?,
    );
    if bbox.width <= 0.0 {
        return Err(ctx.err(5, "width must be positive"));
    }
    if bbox.height <= 0.0 {
        return Err(ctx.err(6, "height must be positive"));
    }
    let conf = ctx.real(&fields, 6, "conf")?;
    let class_id = if fields.len() > 7 {
        let c = ctx.integer(&fields, 7, "class")?;
        i32::try_from(c).map_err(|_| ctx.err(8, format!("class {c} out of range")))?
    } else {
        1
    };
    let visibility = if fields.len() > 8 {
        ctx.real(&fields, 8, "visibility")?
    } else {
        1.0
    };
    Ok(AnnotatedBox {
        frame,
        id,
        bbox,
        class_id,
        conf,
        visibility,
    })
}

/// Parses MOT text. Blank lines are skipped; frames come out ascending with
/// file order preserved inside each frame.
pub fn parse_mot_str(text: &str, file: &str) -> Result<FrameMap<AnnotatedBox>, IoError> {
    let mut out = FrameMap::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let b = parse_line(&LineCtx { file, line: i + 1 }, raw)?;
        out.entry(b.frame).or_insert_with(Vec::new).push(b);
    }
    Ok(out)
}

pub fn parse_mot_file(path: &Path) -> Result<FrameMap<AnnotatedBox>, IoError> {
    parse_mot_str(&read_text(path)?, &path.display().to_string())
}

/// Nine fields: two decimals for the box, four for the confidence.
pub fn format_mot_line(b: &AnnotatedBox) -> String {
    format!(
        "{},{},{:.2},{:.2},{:.2},{:.2},{:.4},{},{:.2}",
        b.frame, b.id, b.bbox.left, b.bbox.top, b.bbox.width, b.bbox.height, b.conf, b.class_id, b.visibility
    )
}

pub fn write_mot(boxes: &FrameMap<AnnotatedBox>) -> String {
    let mut s = String::new();
    for b in boxes.values().flatten() {
        let _ = writeln!(s, "{}", format_mot_line(b));
    }
    s
}

/// Tracker output as annotated boxes ordered by frame then track id.
pub fn trajectories_to_mot(t: &TrajectorySet) -> FrameMap<AnnotatedBox> {
    t.iter()
        .map(|(&frame, outs)| {
            let mut v: Vec<AnnotatedBox> = outs
                .iter()
                .map(|o| AnnotatedBox {
                    frame,
                    id: o.track_id,
                    bbox: o.bbox,
                    class_id: o.class_id,
                    conf: o.score,
                    visibility: 1.0,
                })
                .collect();
            v.sort_by_key(|b| b.id);
            (frame, v)
        })
        .collect()
}

/// Joins detection records with their embeddings by `(frame, index within
/// frame)`. Detections without an embedding get an empty one, which
/// appearance matching treats as uninformative.
pub fn detections_from_mot(boxes: &FrameMap<AnnotatedBox>, sidecar: Option<&EmbeddingSidecar>) -> FrameMap<Detection> {
    let lookup: BTreeMap<(u32, u32), &[f32]> = sidecar
        .map(|s| {
            s.records
                .iter()
                .map(|r| ((r.frame, r.det_index), r.values.as_slice()))
                .collect()
        })
        .unwrap_or_default();
    boxes
        .iter()
        .map(|(&f, v)| {
            let dets = v
                .iter()
                .enumerate()
                .map(|(i, b)| {
                    let emb = lookup.get(&(f, i as u32)).map(|e| e.to_vec()).unwrap_or_default();
                    Detection::new(b.bbox, b.conf, b.class_id, emb)
                })
                .collect();
            (f, dets)
        })
        .collect()
}
