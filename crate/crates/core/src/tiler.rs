//! Overlapping fixed-size patch extraction with annotation re-projection.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Annotation, DatasetIndex, ImageRecord};
use crate::error::{Error, Result};
use crate::geometry::BBox;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TileConfig {
    pub patch_w: u32,
    pub patch_h: u32,
    pub stride_x: u32,
    pub stride_y: u32,
    /// Minimum fraction of a truncated box's area that must remain.
    pub keep_area_fraction: f64,
    /// Minimum side, in pixels, of a truncated box.
    pub min_side: f64,
}

impl Default for TileConfig {
    fn default() -> Self {
        Self {
            patch_w: 800,
            patch_h: 800,
            stride_x: 600,
            stride_y: 600,
            keep_area_fraction: 0.25,
            min_side: 2.0,
        }
    }
}

impl TileConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_w == 0 || self.patch_h == 0 {
            return Err(Error::Config("patch dimensions must be positive".into()));
        }
        if self.stride_x == 0 || self.stride_x > self.patch_w {
            return Err(Error::Config(format!(
                "stride_x {} must be in 1..={}",
                self.stride_x, self.patch_w
            )));
        }
        if self.stride_y == 0 || self.stride_y > self.patch_h {
            return Err(Error::Config(format!(
                "stride_y {} must be in 1..={}",
                self.stride_y, self.patch_h
            )));
        }
        if !(self.keep_area_fraction > 0.0 && self.keep_area_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "keep_area_fraction {} must be in (0, 1]",
                self.keep_area_fraction
            )));
        }
        if !(self.min_side >= 0.0 && self.min_side.is_finite()) {
            return Err(Error::Config(format!(
                "min_side {} must be >= 0",
                self.min_side
            )));
        }
        Ok(())
    }
}

/// Pixel-aligned window inside a source image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl Window {
    pub fn bbox(&self) -> BBox {
        BBox::from_xywh(self.x as f64, self.y as f64, self.w as f64, self.h as f64)
            .expect("window extents are non-negative")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TileWindow {
    pub source_image_id: u64,
    pub patch_image_id: u64,
    pub window: Window,
    pub patch_name: String,
}

/// One manifest row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub patch_name: String,
    pub source_file: String,
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

fn plan_axis(dim: u32, patch: u32, stride: u32) -> (Vec<u32>, u32) {
    if dim <= patch {
        return (vec![0], dim);
    }
    let last = dim - patch;
    let mut origins = Vec::new();
    let mut x = 0u32;
    loop {
        let o = x.min(last);
        if origins.last() != Some(&o) {
            origins.push(o);
        }
        if o == last {
            break;
        }
        x += stride;
    }
    (origins, patch)
}

/// Clamped grid of windows covering a `width x height` image, row-major.
pub fn plan_tiles(width: u32, height: u32, cfg: &TileConfig) -> Vec<Window> {
    let (xs, w) = plan_axis(width, cfg.patch_w, cfg.stride_x);
    let (ys, h) = plan_axis(height, cfg.patch_h, cfg.stride_y);
    ys.iter()
        .flat_map(|&y| xs.iter().map(move |&x| Window { x, y, w, h }))
        .collect()
}

/// Clips annotations to `window` and moves them to patch-local coordinates.
///
/// Boxes lying entirely inside the window are always kept. Truncated boxes
/// are kept when enough of their area survives and both remaining sides are
/// at least `min_side`. Output ids run from 1 in input order; `source_id`
/// records the original annotation id.
pub fn tile_annotations(
    anns: &[Annotation],
    window: &TileWindow,
    cfg: &TileConfig,
) -> Vec<Annotation> {
    let wb = window.window.bbox();
    let (dx, dy) = (-wb.x1(), -wb.y1());
    let mut out = Vec::new();
    for a in anns {
        let Some(clipped) = a.bbox.clip(&wb) else {
            continue;
        };
        let whole = clipped == a.bbox;
        if !whole {
            let ratio = clipped.area() / a.bbox.area();
            if ratio < cfg.keep_area_fraction
                || clipped.width() < cfg.min_side
                || clipped.height() < cfg.min_side
            {
                continue;
            }
        }
        out.push(Annotation {
            id: out.len() as u64 + 1,
            image_id: window.patch_image_id,
            category_id: a.category_id,
            bbox: clipped.translate(dx, dy),
            area: if whole { a.area } else { clipped.area() },
            iscrowd: a.iscrowd,
            source_id: Some(a.id),
        });
    }
    out
}

fn patch_name(img: &ImageRecord, w: &Window, ext: Option<&str>) -> String {
    match ext.or(img.extension()) {
        Some(ext) => format!("{}__{}_{}.{}", img.stem(), w.x, w.y, ext),
        None => format!("{}__{}_{}", img.stem(), w.x, w.y),
    }
}

/// Output of [`tile_dataset`].
#[derive(Debug, Clone)]
pub struct TiledDataset {
    pub dataset: DatasetIndex,
    pub windows: Vec<TileWindow>,
    pub manifest: Vec<ManifestEntry>,
}

/// Tiles every image; patch names keep the source extension.
pub fn tile_dataset(ds: &DatasetIndex, cfg: &TileConfig) -> Result<TiledDataset> {
    tile_dataset_with_extension(ds, cfg, None)
}

/// Tiles every image, naming patches `{stem}__{x}_{y}.{ext}`.
///
/// Source images are visited in id order; the result does not depend on the
/// size of the rayon pool.
pub fn tile_dataset_with_extension(
    ds: &DatasetIndex,
    cfg: &TileConfig,
    ext: Option<&str>,
) -> Result<TiledDataset> {
    cfg.validate()?;
    let sources: Vec<&ImageRecord> = ds.images_by_id().collect();
    let per_image: Vec<Vec<(Window, Vec<Annotation>)>> = sources
        .par_iter()
        .map(|img| {
            let anns: Vec<Annotation> = ds.annotations_for_image(img.id).cloned().collect();
            plan_tiles(img.width, img.height, cfg)
                .into_iter()
                .map(|w| {
                    let tw = TileWindow {
                        source_image_id: img.id,
                        patch_image_id: 0,
                        window: w,
                        patch_name: String::new(),
                    };
                    (w, tile_annotations(&anns, &tw, cfg))
                })
                .collect()
        })
        .collect();

    let mut images = Vec::new();
    let mut annotations = Vec::new();
    let mut windows = Vec::new();
    let mut manifest = Vec::new();
    for (img, tiles) in sources.iter().zip(per_image) {
        for (w, anns) in tiles {
            let patch_id = images.len() as u64 + 1;
            let name = patch_name(img, &w, ext);
            images.push(ImageRecord {
                id: patch_id,
                file_name: name.clone(),
                width: w.w,
                height: w.h,
            });
            for mut a in anns {
                a.id = annotations.len() as u64 + 1;
                a.image_id = patch_id;
                annotations.push(a);
            }
            manifest.push(ManifestEntry {
                patch_name: name.clone(),
                source_file: img.file_name.clone(),
                x: w.x,
                y: w.y,
                w: w.w,
                h: w.h,
            });
            windows.push(TileWindow {
                source_image_id: img.id,
                patch_image_id: patch_id,
                window: w,
                patch_name: name,
            });
        }
    }
    let dataset = DatasetIndex::new(ds.categories().to_vec(), images, annotations)?;
    Ok(TiledDataset {
        dataset,
        windows,
        manifest,
    })
}

pub fn manifest_json(manifest: &[ManifestEntry]) -> String {
    serde_json::to_string_pretty(manifest).expect("manifest serializes")
}

/// Result of cropping patch pixels.
#[derive(Debug, Clone, Default, Serialize)]
pub struct PixelReport {
    pub patches_written: usize,
    pub errors: Vec<PixelError>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PixelError {
    pub source_file: String,
    pub message: String,
}

/// Decodes each source image under `img_dir` and writes its patches to
/// `out_dir`. Failing images are reported and skipped.
pub fn write_patch_images(
    ds: &DatasetIndex,
    windows: &[TileWindow],
    img_dir: &Path,
    out_dir: &Path,
) -> Result<PixelReport> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut grouped: Vec<(u64, Vec<&TileWindow>)> = Vec::new();
    for w in windows {
        match grouped.last_mut() {
            Some((id, v)) if *id == w.source_image_id => v.push(w),
            _ => grouped.push((w.source_image_id, vec![w])),
        }
    }
    let results: Vec<std::result::Result<usize, PixelError>> = grouped
        .par_iter()
        .map(|(id, tiles)| {
            let img = ds.image(*id).expect("window refers to a dataset image");
            crop_one(img, tiles, &img_dir.join(&img.file_name), out_dir).map_err(|message| {
                PixelError {
                    source_file: img.file_name.clone(),
                    message,
                }
            })
        })
        .collect();
    let mut report = PixelReport::default();
    for r in results {
        match r {
            Ok(n) => report.patches_written += n,
            Err(e) => {
                log::error!("{}: {}", e.source_file, e.message);
                report.errors.push(e);
            }
        }
    }
    Ok(report)
}

fn crop_one(
    img: &ImageRecord,
    tiles: &[&TileWindow],
    src: &PathBuf,
    out_dir: &Path,
) -> std::result::Result<usize, String> {
    let pixels = image::open(src).map_err(|e| format!("cannot read {}: {e}", src.display()))?;
    if pixels.width() != img.width || pixels.height() != img.height {
        return Err(format!(
            "decoded size {}x{} differs from annotated {}x{}",
            pixels.width(),
            pixels.height(),
            img.width,
            img.height
        ));
    }
    for t in tiles {
        let w = t.window;
        let patch = pixels.crop_imm(w.x, w.y, w.w, w.h);
        let dst = out_dir.join(&t.patch_name);
        patch
            .save_with_format(&dst, image::ImageFormat::Png)
            .map_err(|e| format!("cannot write {}: {e}", dst.display()))?;
    }
    Ok(tiles.len())
}
