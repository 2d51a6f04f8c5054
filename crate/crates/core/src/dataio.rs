//! Annotation and detection text formats plus the geometric crop sampler.
//!
//! Annotations follow the WIDER FACE convention: a filename line, a face
//! count line, then one face per line as
//! `x y w h blur expression illumination invalid occlusion pose`.
//! The dataset's quirk of a zero count followed by a single all-zeros face
//! line is consumed and discarded. Detection files use the same shape with
//! `x y w h score` lines.
//!
//! The augmentation sampler picks one of five square crops (the biggest
//! square, or one of four with side uniform in [0.3, 1) of the short side),
//! places it uniformly inside the image, and flips with probability 0.5,
//! all as a pure function of the seed. Faces keep their overlap with the
//! crop only if their original center falls inside it (closed interval, so
//! the rule is mirror symmetric); boxes degenerate after intersection are
//! dropped. Surviving boxes are translated to crop coordinates, scaled to
//! the target side, and mirrored when the crop is flipped.

use crate::error::{Error, Result};
use crate::geometry::{BBox, ScoredBox};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// One face row: raw x/y/w/h as written plus the six attribute flags.
/// Degenerate boxes occur in real data; `bbox` returns `None` for them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceAnnotation {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub blur: u8,
    pub expression: u8,
    pub illumination: u8,
    pub invalid: u8,
    pub occlusion: u8,
    pub pose: u8,
}

impl FaceAnnotation {
    pub fn from_box(x: f64, y: f64, w: f64, h: f64) -> Self {
        FaceAnnotation {
            x,
            y,
            w,
            h,
            blur: 0,
            expression: 0,
            illumination: 0,
            invalid: 0,
            occlusion: 0,
            pose: 0,
        }
    }

    pub fn bbox(&self) -> Option<BBox> {
        BBox::from_xywh(self.x, self.y, self.w, self.h).ok()
    }

    pub fn is_invalid(&self) -> bool {
        self.invalid != 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub path: String,
    pub width: Option<u32>,
    pub height: Option<u32>,
    pub faces: Vec<FaceAnnotation>,
}

/// A square crop plus resize and flip bookkeeping. Produced by
/// `sample_crop`, which guarantees the square lies inside the image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropSpec {
    pub x: f64,
    pub y: f64,
    pub side: f64,
    pub target_side: f64,
    pub flipped: bool,
}

fn fmt_num(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

fn parse_face_line(line: &str, line_no: usize) -> Result<FaceAnnotation> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 10 {
        return Err(Error::parse(
            line_no,
            format!("face line needs 10 fields, got {}", fields.len()),
        ));
    }
    let num = |i: usize| -> Result<f64> {
        fields[i]
            .parse::<f64>()
            .map_err(|_| Error::parse(line_no, format!("bad number {:?}", fields[i])))
    };
    let flag = |i: usize| -> Result<u8> {
        fields[i]
            .parse::<u8>()
            .map_err(|_| Error::parse(line_no, format!("bad flag {:?}", fields[i])))
    };
    Ok(FaceAnnotation {
        x: num(0)?,
        y: num(1)?,
        w: num(2)?,
        h: num(3)?,
        blur: flag(4)?,
        expression: flag(5)?,
        illumination: flag(6)?,
        invalid: flag(7)?,
        occlusion: flag(8)?,
        pose: flag(9)?,
    })
}

fn is_all_zero_face_line(line: &str) -> bool {
    let fields: Vec<&str> = line.split_whitespace().collect();
    fields.len() == 10 && fields.iter().all(|f| f.parse::<f64>() == Ok(0.0))
}

pub fn parse_wider_annotations(text: &str) -> Result<Vec<ImageRecord>> {
    let lines: Vec<&str> = text.lines().collect();
    let mut records = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        let path = lines[i].trim();
        if path.is_empty() {
            i += 1;
            continue;
        }
        i += 1;
        let count_line = lines
            .get(i)
            .ok_or_else(|| Error::parse(i + 1, "expected face count".to_string()))?;
        let count: usize = count_line
            .trim()
            .parse()
            .map_err(|_| Error::parse(i + 1, format!("bad face count {:?}", count_line.trim())))?;
        i += 1;
        let mut faces = Vec::with_capacity(count);
        for _ in 0..count {
            let line = lines
                .get(i)
                .ok_or_else(|| Error::parse(i + 1, "file ends inside a face list".to_string()))?;
            faces.push(parse_face_line(line, i + 1)?);
            i += 1;
        }
        if count == 0 {
            // Zero-count records are followed by one placeholder row of
            // ten zeros in the published files.
            if let Some(line) = lines.get(i) {
                if is_all_zero_face_line(line) {
                    i += 1;
                }
            }
        }
        records.push(ImageRecord {
            path: path.to_string(),
            width: None,
            height: None,
            faces,
        });
    }
    Ok(records)
}

pub fn serialize_wider_annotations(records: &[ImageRecord]) -> String {
    let mut out = String::new();
    for record in records {
        out.push_str(&record.path);
        out.push('\n');
        out.push_str(&record.faces.len().to_string());
        out.push('\n');
        for f in &record.faces {
            out.push_str(&format!(
                "{} {} {} {} {} {} {} {} {} {}\n",
                fmt_num(f.x),
                fmt_num(f.y),
                fmt_num(f.w),
                fmt_num(f.h),
                f.blur,
                f.expression,
                f.illumination,
                f.invalid,
                f.occlusion,
                f.pose
            ));
        }
    }
    out
}

pub const DEFAULT_TARGET_SIDE: f64 = 640.0;

/// Draw a crop for a width x height image. Draw order is fixed (candidate,
/// side fraction when applicable, x, y, flip), so a seed fully determines
/// the result. Candidate 0 takes the biggest square; candidates 1 through 4
/// scale the short side by a uniform fraction in [0.3, 1). Sides are
/// clamped to at least one pixel for degenerate inputs.
pub fn sample_crop(width: u32, height: u32, seed: u64, target_side: f64) -> Result<CropSpec> {
    if width == 0 || height == 0 {
        return Err(Error::invalid("image dimensions must be at least 1"));
    }
    if !(target_side.is_finite() && target_side > 0.0) {
        return Err(Error::invalid(format!("bad target side {target_side}")));
    }
    let short = width.min(height) as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let candidate: u32 = rng.random_range(0..5);
    let side = if candidate == 0 {
        short
    } else {
        (short * rng.random_range(0.3..1.0)).max(1.0)
    };
    let x = rng.random_range(0.0..=(width as f64 - side));
    let y = rng.random_range(0.0..=(height as f64 - side));
    let flipped = rng.random_bool(0.5);
    Ok(CropSpec {
        x,
        y,
        side,
        target_side,
        flipped,
    })
}

/// Transform faces into the crop's target coordinate frame, keeping a face
/// only if its original center lies inside the crop square.
pub fn apply_crop_to_boxes(crop: &CropSpec, faces: &[FaceAnnotation]) -> Vec<FaceAnnotation> {
    let scale = crop.target_side / crop.side;
    let mut out = Vec::new();
    for face in faces {
        if !(face.w > 0.0 && face.h > 0.0) || !face.x.is_finite() || !face.y.is_finite() {
            continue;
        }
        let cx = face.x + face.w / 2.0;
        let cy = face.y + face.h / 2.0;
        if !(cx >= crop.x && cx <= crop.x + crop.side && cy >= crop.y && cy <= crop.y + crop.side) {
            continue;
        }
        let x1 = face.x.max(crop.x);
        let y1 = face.y.max(crop.y);
        let x2 = (face.x + face.w).min(crop.x + crop.side);
        let y2 = (face.y + face.h).min(crop.y + crop.side);
        if x2 <= x1 || y2 <= y1 {
            continue;
        }
        let (mut sx1, mut sx2) = ((x1 - crop.x) * scale, (x2 - crop.x) * scale);
        let (sy1, sy2) = ((y1 - crop.y) * scale, (y2 - crop.y) * scale);
        if crop.flipped {
            (sx1, sx2) = (crop.target_side - sx2, crop.target_side - sx1);
        }
        let mut kept = face.clone();
        kept.x = sx1;
        kept.y = sy1;
        kept.w = sx2 - sx1;
        kept.h = sy2 - sy1;
        out.push(kept);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub path: String,
    pub detections: Vec<ScoredBox>,
}

pub fn read_detections(text: &str) -> Result<Vec<DetectionRecord>> {
    let lines: Vec<&str> = text.lines().collect();
    let mut records = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        let path = lines[i].trim();
        if path.is_empty() {
            i += 1;
            continue;
        }
        i += 1;
        let count_line = lines
            .get(i)
            .ok_or_else(|| Error::parse(i + 1, "expected detection count".to_string()))?;
        let count: usize = count_line.trim().parse().map_err(|_| {
            Error::parse(
                i + 1,
                format!("bad detection count {:?}", count_line.trim()),
            )
        })?;
        i += 1;
        let mut detections = Vec::with_capacity(count);
        for _ in 0..count {
            let line = lines.get(i).ok_or_else(|| {
                Error::parse(i + 1, "file ends inside a detection list".to_string())
            })?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 5 {
                return Err(Error::parse(
                    i + 1,
                    format!("detection line needs 5 fields, got {}", fields.len()),
                ));
            }
            let mut nums = [0.0f64; 5];
            for (slot, field) in nums.iter_mut().zip(&fields) {
                *slot = field
                    .parse()
                    .map_err(|_| Error::parse(i + 1, format!("bad number {field:?}")))?;
            }
            let bbox = BBox::from_xywh(nums[0], nums[1], nums[2], nums[3])
                .map_err(|e| Error::parse(i + 1, e.to_string()))?;
            let scored =
                ScoredBox::new(bbox, nums[4]).map_err(|e| Error::parse(i + 1, e.to_string()))?;
            detections.push(scored);
            i += 1;
        }
        records.push(DetectionRecord {
            path: path.to_string(),
            detections,
        });
    }
    Ok(records)
}

pub fn write_detections(records: &[DetectionRecord]) -> String {
    let mut out = String::new();
    for record in records {
        out.push_str(&record.path);
        out.push('\n');
        out.push_str(&record.detections.len().to_string());
        out.push('\n');
        for d in &record.detections {
            out.push_str(&format!(
                "{} {} {} {} {}\n",
                fmt_num(d.bbox.x1),
                fmt_num(d.bbox.y1),
                fmt_num(d.bbox.width()),
                fmt_num(d.bbox.height()),
                fmt_num(d.score)
            ));
        }
    }
    out
}
