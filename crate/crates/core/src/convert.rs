//! COCO <-> YOLO text label conversion.
//!
//! A YOLO label file holds one line per object:
//! `class cx cy w h`, coordinates normalized by the image size and written
//! with six decimals. Each line ends in `\n`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::{Annotation, DatasetIndex, ImageRecord};
use crate::error::{Error, Result};
use crate::geometry::BBox;

/// Slack allowed on normalized coordinates.
pub const SLACK: f64 = 1e-6;

pub const CLASSES_FILE: &str = "classes.txt";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YoloLine {
    pub class_index: usize,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl YoloLine {
    pub fn new(class_index: usize, cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        let line = Self {
            class_index,
            cx,
            cy,
            w,
            h,
        };
        line.check().map_err(Error::Integrity)?;
        Ok(line)
    }

    fn check(&self) -> std::result::Result<(), String> {
        let unit = |v: f64| (-SLACK..=1.0 + SLACK).contains(&v);
        if !(self.w > 0.0 && self.w <= 1.0 + SLACK && self.h > 0.0 && self.h <= 1.0 + SLACK) {
            return Err(format!("size ({}, {}) outside (0, 1]", self.w, self.h));
        }
        let edges = [
            self.cx - self.w / 2.0,
            self.cx + self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cy + self.h / 2.0,
        ];
        if !unit(self.cx) || !unit(self.cy) || !edges.iter().all(|&e| unit(e)) {
            return Err(format!(
                "box ({}, {}, {}, {}) leaves the unit square",
                self.cx, self.cy, self.w, self.h
            ));
        }
        Ok(())
    }

    /// Parses one line of a label file. `line_no` is 1-based.
    pub fn parse(text: &str, line_no: usize) -> Result<Self> {
        let err = |message: String| Error::LineParse {
            line: line_no,
            message,
        };
        let tokens: Vec<&str> = text.split_whitespace().collect();
        if tokens.len() != 5 {
            return Err(err(format!("expected 5 tokens, found {}", tokens.len())));
        }
        let class_index = tokens[0]
            .parse::<usize>()
            .map_err(|_| err(format!("bad class index {:?}", tokens[0])))?;
        let mut v = [0.0f64; 4];
        for (slot, tok) in v.iter_mut().zip(&tokens[1..]) {
            *slot = tok
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| err(format!("non-numeric value {tok:?}")))?;
        }
        let line = Self {
            class_index,
            cx: v[0],
            cy: v[1],
            w: v[2],
            h: v[3],
        };
        line.check().map_err(err)?;
        Ok(line)
    }

    pub fn to_bbox(&self, img_w: u32, img_h: u32) -> BBox {
        let (iw, ih) = (f64::from(img_w), f64::from(img_h));
        let x1 = ((self.cx - self.w / 2.0) * iw).clamp(0.0, iw);
        let x2 = ((self.cx + self.w / 2.0) * iw).clamp(0.0, iw);
        let y1 = ((self.cy - self.h / 2.0) * ih).clamp(0.0, ih);
        let y2 = ((self.cy + self.h / 2.0) * ih).clamp(0.0, ih);
        BBox::new(x1, y1, x2.max(x1), y2.max(y1)).expect("finite ordered box")
    }
}

impl fmt::Display for YoloLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:.6} {:.6} {:.6} {:.6}",
            self.class_index, self.cx, self.cy, self.w, self.h
        )
    }
}

/// Contiguous class indices assigned by ascending category id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassMap {
    category_ids: Vec<u64>,
}

impl ClassMap {
    pub fn from_dataset(ds: &DatasetIndex) -> Self {
        Self {
            category_ids: ds.category_ids().collect(),
        }
    }

    pub fn new(mut category_ids: Vec<u64>) -> Self {
        category_ids.sort_unstable();
        category_ids.dedup();
        Self { category_ids }
    }

    pub fn index_of(&self, category_id: u64) -> Option<usize> {
        self.category_ids.binary_search(&category_id).ok()
    }

    pub fn category_id(&self, index: usize) -> Option<u64> {
        self.category_ids.get(index).copied()
    }

    pub fn len(&self) -> usize {
        self.category_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.category_ids.is_empty()
    }
}

pub fn to_yolo(ann: &Annotation, img: &ImageRecord, classes: &ClassMap) -> Result<YoloLine> {
    let class_index = classes
        .index_of(ann.category_id)
        .ok_or(Error::Mapping(ann.category_id))?;
    let (iw, ih) = (f64::from(img.width), f64::from(img.height));
    let b = &ann.bbox;
    let line = YoloLine::new(
        class_index,
        (b.x1() + b.x2()) / (2.0 * iw),
        (b.y1() + b.y2()) / (2.0 * ih),
        b.width() / iw,
        b.height() / ih,
    )
    .map_err(|e| Error::Integrity(format!("annotation {}: {e}", ann.id)))?;
    // the six-decimal text must satisfy the same invariants
    YoloLine::parse(&line.to_string(), 1).map_err(|e| {
        Error::Integrity(format!(
            "annotation {} does not survive quantization: {e}",
            ann.id
        ))
    })?;
    Ok(line)
}

/// Parses a label file into annotations of `img`, ids starting at 1.
pub fn from_yolo(text: &str, img: &ImageRecord, classes: &ClassMap) -> Result<Vec<Annotation>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let line = YoloLine::parse(raw, i + 1)?;
        let category_id =
            classes
                .category_id(line.class_index)
                .ok_or_else(|| Error::LineParse {
                    line: i + 1,
                    message: format!("class index {} has no category", line.class_index),
                })?;
        let bbox = line.to_bbox(img.width, img.height);
        out.push(Annotation {
            id: out.len() as u64 + 1,
            image_id: img.id,
            category_id,
            area: bbox.area(),
            bbox,
            iscrowd: false,
            source_id: None,
        });
    }
    Ok(out)
}

/// Rendered label files keyed by file name, plus `classes.txt`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct YoloExport {
    pub files: BTreeMap<String, String>,
    pub classes: String,
    pub lines: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ConvertSummary {
    pub files_written: usize,
    pub lines_written: usize,
}

pub fn render_yolo(ds: &DatasetIndex, emit_empty: bool) -> Result<YoloExport> {
    let classes = ClassMap::from_dataset(ds);
    let mut files = BTreeMap::new();
    let mut lines = 0;
    for img in ds.images_by_id() {
        let anns: Vec<&Annotation> = ds.annotations_for_image(img.id).collect();
        if anns.is_empty() && !emit_empty {
            continue;
        }
        let mut body = String::new();
        for a in anns {
            body.push_str(&to_yolo(a, img, &classes)?.to_string());
            body.push('\n');
            lines += 1;
        }
        let name = format!("{}.txt", img.stem());
        if name == CLASSES_FILE || files.contains_key(&name) {
            return Err(Error::Integrity(format!(
                "output file {name} collides (image {} {:?})",
                img.id, img.file_name
            )));
        }
        files.insert(name, body);
    }
    let mut class_text = String::new();
    for id in ds.category_ids() {
        class_text.push_str(&ds.category(id).expect("listed category").name);
        class_text.push('\n');
    }
    Ok(YoloExport {
        files,
        classes: class_text,
        lines,
    })
}

/// Writes one label file per image plus `classes.txt` into `out_dir`.
pub fn dataset_to_yolo(
    ds: &DatasetIndex,
    out_dir: &Path,
    emit_empty: bool,
) -> Result<ConvertSummary> {
    let export = render_yolo(ds, emit_empty)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let entries: Vec<(&String, &String)> = export.files.iter().collect();
    entries.par_iter().try_for_each(|(name, body)| {
        let path = out_dir.join(name);
        std::fs::write(&path, body).map_err(|e| Error::io(path, e))
    })?;
    let path = out_dir.join(CLASSES_FILE);
    std::fs::write(&path, &export.classes).map_err(|e| Error::io(path, e))?;
    Ok(ConvertSummary {
        files_written: export.files.len(),
        lines_written: export.lines,
    })
}

/// Reads `{stem}.txt` label files for every image of `template`.
///
/// Images and categories come from `template`; its annotations are
/// discarded. Missing label files mean no objects.
pub fn yolo_to_dataset(labels_dir: &Path, template: &DatasetIndex) -> Result<DatasetIndex> {
    let classes = ClassMap::from_dataset(template);
    let mut annotations = Vec::new();
    for img in template.images_by_id() {
        let path = labels_dir.join(format!("{}.txt", img.stem()));
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => continue,
            Err(e) => return Err(Error::io(path, e)),
        };
        let anns = from_yolo(&text, img, &classes).map_err(|e| match e {
            Error::LineParse { line, message } => Error::LineParse {
                line,
                message: format!("{}: {message}", path.display()),
            },
            other => other,
        })?;
        for mut a in anns {
            a.id = annotations.len() as u64 + 1;
            annotations.push(a);
        }
    }
    DatasetIndex::new(
        template.categories().to_vec(),
        template.images().to_vec(),
        annotations,
    )
}
