//! COCO-style annotation index, class statistics, class grouping and
//! background-image reduction.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    #[serde(deserialize_with = "flex_u64")]
    pub id: u64,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    #[serde(deserialize_with = "flex_u64")]
    pub id: u64,
    pub file_name: String,
    #[serde(deserialize_with = "flex_u32")]
    pub width: u32,
    #[serde(deserialize_with = "flex_u32")]
    pub height: u32,
}

impl ImageRecord {
    /// File name without directories or extension.
    pub fn stem(&self) -> &str {
        split_name(&self.file_name).0
    }

    pub fn extension(&self) -> Option<&str> {
        split_name(&self.file_name).1
    }
}

fn split_name(file_name: &str) -> (&str, Option<&str>) {
    let base = file_name.rsplit(['/', '\\']).next().unwrap_or(file_name);
    match base.rfind('.') {
        Some(i) if i > 0 => (&base[..i], Some(&base[i + 1..])),
        _ => (base, None),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u64,
    pub bbox: BBox,
    pub area: f64,
    pub iscrowd: bool,
    /// Id of the annotation this one was derived from (tiling).
    pub source_id: Option<u64>,
}

/// How out-of-image annotation boxes are handled on ingestion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BoxValidation {
    /// Clamp to the image bounds and log a warning.
    #[default]
    Clamp,
    /// Reject the document.
    Strict,
}

/// Parsed dataset with id lookups.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetIndex {
    categories: Vec<Category>,
    images: Vec<ImageRecord>,
    annotations: Vec<Annotation>,
    image_pos: BTreeMap<u64, usize>,
    category_pos: BTreeMap<u64, usize>,
    by_image: BTreeMap<u64, Vec<usize>>,
    by_category: BTreeMap<u64, Vec<usize>>,
}

impl DatasetIndex {
    /// Builds an index, checking id uniqueness and referential integrity.
    pub fn new(
        categories: Vec<Category>,
        images: Vec<ImageRecord>,
        annotations: Vec<Annotation>,
    ) -> Result<Self> {
        let mut category_pos = BTreeMap::new();
        let mut names = BTreeSet::new();
        for (i, c) in categories.iter().enumerate() {
            if category_pos.insert(c.id, i).is_some() {
                return Err(Error::Integrity(format!("duplicate category id {}", c.id)));
            }
            if c.name.is_empty() {
                return Err(Error::Integrity(format!(
                    "category {} has an empty name",
                    c.id
                )));
            }
            if !names.insert(c.name.as_str()) {
                return Err(Error::Integrity(format!(
                    "duplicate category name {:?}",
                    c.name
                )));
            }
        }

        let mut image_pos = BTreeMap::new();
        let mut by_image: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
        for (i, img) in images.iter().enumerate() {
            if image_pos.insert(img.id, i).is_some() {
                return Err(Error::Integrity(format!("duplicate image id {}", img.id)));
            }
            if img.width == 0 || img.height == 0 {
                return Err(Error::Integrity(format!(
                    "image {} has zero size {}x{}",
                    img.id, img.width, img.height
                )));
            }
            by_image.insert(img.id, Vec::new());
        }

        let mut by_category: BTreeMap<u64, Vec<usize>> =
            categories.iter().map(|c| (c.id, Vec::new())).collect();
        let mut ann_ids = BTreeSet::new();
        for (i, a) in annotations.iter().enumerate() {
            if !ann_ids.insert(a.id) {
                return Err(Error::Integrity(format!(
                    "duplicate annotation id {}",
                    a.id
                )));
            }
            let Some(bucket) = by_image.get_mut(&a.image_id) else {
                return Err(Error::Integrity(format!(
                    "annotation {} references unknown image id {}",
                    a.id, a.image_id
                )));
            };
            bucket.push(i);
            let Some(bucket) = by_category.get_mut(&a.category_id) else {
                return Err(Error::Integrity(format!(
                    "annotation {} references unknown category id {}",
                    a.id, a.category_id
                )));
            };
            bucket.push(i);
        }

        Ok(Self {
            categories,
            images,
            annotations,
            image_pos,
            category_pos,
            by_image,
            by_category,
        })
    }

    pub fn empty() -> Self {
        Self::new(Vec::new(), Vec::new(), Vec::new()).expect("empty dataset is valid")
    }

    pub fn categories(&self) -> &[Category] {
        &self.categories
    }

    pub fn images(&self) -> &[ImageRecord] {
        &self.images
    }

    pub fn annotations(&self) -> &[Annotation] {
        &self.annotations
    }

    pub fn image(&self, id: u64) -> Option<&ImageRecord> {
        self.image_pos.get(&id).map(|&i| &self.images[i])
    }

    pub fn category(&self, id: u64) -> Option<&Category> {
        self.category_pos.get(&id).map(|&i| &self.categories[i])
    }

    /// Annotations of one image, in document order.
    pub fn annotations_for_image(&self, image_id: u64) -> impl Iterator<Item = &Annotation> {
        self.by_image
            .get(&image_id)
            .into_iter()
            .flatten()
            .map(|&i| &self.annotations[i])
    }

    pub fn annotations_for_category(&self, category_id: u64) -> impl Iterator<Item = &Annotation> {
        self.by_category
            .get(&category_id)
            .into_iter()
            .flatten()
            .map(|&i| &self.annotations[i])
    }

    pub fn annotation_count(&self, image_id: u64) -> usize {
        self.by_image.get(&image_id).map_or(0, Vec::len)
    }

    /// Images sorted by id.
    pub fn images_by_id(&self) -> impl Iterator<Item = &ImageRecord> {
        self.image_pos.values().map(|&i| &self.images[i])
    }

    /// Category ids in ascending order.
    pub fn category_ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.category_pos.keys().copied()
    }

    /// Keeps the images for which `keep` returns true, with their annotations.
    pub fn retain_images(&self, mut keep: impl FnMut(&ImageRecord) -> bool) -> DatasetIndex {
        let images: Vec<ImageRecord> = self.images.iter().filter(|i| keep(i)).cloned().collect();
        let ids: BTreeSet<u64> = images.iter().map(|i| i.id).collect();
        let annotations = self
            .annotations
            .iter()
            .filter(|a| ids.contains(&a.image_id))
            .cloned()
            .collect();
        DatasetIndex::new(self.categories.clone(), images, annotations)
            .expect("subset of a valid index is valid")
    }

    /// Serializes to a COCO JSON document.
    pub fn to_coco_json(&self) -> String {
        let doc = RawDocumentOut {
            images: &self.images,
            annotations: self
                .annotations
                .iter()
                .map(RawAnnotationOut::from)
                .collect(),
            categories: &self.categories,
        };
        serde_json::to_string(&doc).expect("dataset serializes")
    }
}

#[derive(Deserialize)]
struct RawDocument {
    images: Vec<ImageRecord>,
    annotations: Vec<RawAnnotation>,
    categories: Vec<Category>,
}

#[derive(Deserialize)]
struct RawAnnotation {
    #[serde(deserialize_with = "flex_u64")]
    id: u64,
    #[serde(deserialize_with = "flex_u64")]
    image_id: u64,
    #[serde(deserialize_with = "flex_u64")]
    category_id: u64,
    bbox: [f64; 4],
    #[serde(default)]
    area: Option<f64>,
    #[serde(default, deserialize_with = "flex_flag")]
    iscrowd: bool,
    #[serde(default, rename = "source_annotation_id")]
    source_id: Option<u64>,
}

#[derive(Serialize)]
struct RawDocumentOut<'a> {
    images: &'a [ImageRecord],
    annotations: Vec<RawAnnotationOut>,
    categories: &'a [Category],
}

#[derive(Serialize)]
struct RawAnnotationOut {
    id: u64,
    image_id: u64,
    category_id: u64,
    bbox: [f64; 4],
    area: f64,
    iscrowd: u8,
    #[serde(
        skip_serializing_if = "Option::is_none",
        rename = "source_annotation_id"
    )]
    source_id: Option<u64>,
}

impl From<&Annotation> for RawAnnotationOut {
    fn from(a: &Annotation) -> Self {
        Self {
            id: a.id,
            image_id: a.image_id,
            category_id: a.category_id,
            bbox: a.bbox.to_xywh(),
            area: a.area,
            iscrowd: a.iscrowd as u8,
            source_id: a.source_id,
        }
    }
}

fn flex_u64<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<u64, D::Error> {
    let n = serde_json::Number::deserialize(d)?;
    if let Some(v) = n.as_u64() {
        return Ok(v);
    }
    match n.as_f64() {
        Some(f) if f >= 0.0 && f.fract() == 0.0 && f < 1.8e19 => Ok(f as u64),
        _ => Err(serde::de::Error::custom(format!(
            "expected a non-negative integer, found {n}"
        ))),
    }
}

fn flex_u32<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<u32, D::Error> {
    let v = flex_u64(d)?;
    u32::try_from(v).map_err(|_| serde::de::Error::custom(format!("{v} out of range")))
}

fn flex_flag<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<bool, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Flag {
        Bool(bool),
        Num(f64),
    }
    Ok(match Flag::deserialize(d)? {
        Flag::Bool(b) => b,
        Flag::Num(n) => n != 0.0,
    })
}

/// Parses a COCO object-detection document.
pub fn parse_coco(text: &str, validation: BoxValidation) -> Result<DatasetIndex> {
    let raw: RawDocument = serde_json::from_str(text).map_err(|e| Error::from_json(&e, text))?;
    let sizes: BTreeMap<u64, (u32, u32)> = raw
        .images
        .iter()
        .map(|i| (i.id, (i.width, i.height)))
        .collect();

    let mut annotations = Vec::with_capacity(raw.annotations.len());
    for r in raw.annotations {
        let [x, y, w, h] = r.bbox;
        if w < 0.0 || h < 0.0 {
            return Err(Error::Integrity(format!(
                "annotation {} has negative size w={w} h={h}",
                r.id
            )));
        }
        let mut bbox = BBox::from_xywh(x, y, w, h)
            .map_err(|e| Error::Integrity(format!("annotation {}: {e}", r.id)))?;
        if let Some(&(iw, ih)) = sizes.get(&r.image_id) {
            let (iw, ih) = (f64::from(iw), f64::from(ih));
            if !bbox.within(iw, ih) {
                match validation {
                    BoxValidation::Strict => {
                        return Err(Error::Integrity(format!(
                            "annotation {} box {:?} exceeds image {} bounds {iw}x{ih}",
                            r.id, r.bbox, r.image_id
                        )))
                    }
                    BoxValidation::Clamp => {
                        log::warn!(
                            "annotation {} box {:?} clamped to image {} bounds {iw}x{ih}",
                            r.id,
                            r.bbox,
                            r.image_id
                        );
                        bbox = bbox.clamp_to(iw, ih);
                    }
                }
            }
        }
        annotations.push(Annotation {
            id: r.id,
            image_id: r.image_id,
            category_id: r.category_id,
            area: r.area.unwrap_or_else(|| bbox.area()),
            bbox,
            iscrowd: r.iscrowd,
            source_id: r.source_id,
        });
    }
    DatasetIndex::new(raw.categories, raw.images, annotations)
}

/// Instance counts of a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClassStats {
    /// category id -> instance count (every declared category present).
    pub per_class: BTreeMap<u64, usize>,
    /// image id -> instance count.
    pub per_image: BTreeMap<u64, usize>,
    pub labelled: usize,
    pub unlabelled: usize,
    pub total_images: usize,
    pub total_annotations: usize,
}

pub fn stats(ds: &DatasetIndex) -> ClassStats {
    let per_class = ds
        .category_ids()
        .map(|c| (c, ds.annotations_for_category(c).count()))
        .collect();
    let per_image: BTreeMap<u64, usize> = ds
        .images()
        .iter()
        .map(|i| (i.id, ds.annotation_count(i.id)))
        .collect();
    let labelled = per_image.values().filter(|&&n| n > 0).count();
    ClassStats {
        per_class,
        labelled,
        unlabelled: per_image.len() - labelled,
        total_images: per_image.len(),
        total_annotations: ds.annotations().len(),
        per_image,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassGroup {
    Frequent,
    Common,
    Rare,
}

impl fmt::Display for ClassGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClassGroup::Frequent => "frequent",
            ClassGroup::Common => "common",
            ClassGroup::Rare => "rare",
        })
    }
}

/// Total assignment of categories to frequency groups.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassGrouping {
    pub groups: BTreeMap<u64, ClassGroup>,
}

impl ClassGrouping {
    pub fn get(&self, category_id: u64) -> Option<ClassGroup> {
        self.groups.get(&category_id).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum GroupingPolicy {
    /// First floor(K/3) ranks frequent, last floor(K/3) rare, rest common.
    #[default]
    RankThirds,
    /// count >= frequent -> frequent, count <= rare -> rare.
    Thresholds { frequent: usize, rare: usize },
}

pub fn group_classes(stats: &ClassStats, policy: GroupingPolicy) -> Result<ClassGrouping> {
    if stats.per_class.values().all(|&n| n == 0) {
        return Err(Error::Config(
            "class grouping needs at least one class with instances".into(),
        ));
    }
    let groups = match policy {
        GroupingPolicy::RankThirds => {
            let mut ranked: Vec<(u64, usize)> =
                stats.per_class.iter().map(|(&c, &n)| (c, n)).collect();
            ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
            let k = ranked.len();
            let third = k / 3;
            ranked
                .iter()
                .enumerate()
                .map(|(rank, &(c, _))| {
                    let g = if rank < third {
                        ClassGroup::Frequent
                    } else if rank >= k - third {
                        ClassGroup::Rare
                    } else {
                        ClassGroup::Common
                    };
                    (c, g)
                })
                .collect()
        }
        GroupingPolicy::Thresholds { frequent, rare } => {
            if rare >= frequent {
                return Err(Error::Config(format!(
                    "rare threshold {rare} must be below frequent threshold {frequent}"
                )));
            }
            stats
                .per_class
                .iter()
                .map(|(&c, &n)| {
                    let g = if n >= frequent {
                        ClassGroup::Frequent
                    } else if n <= rare {
                        ClassGroup::Rare
                    } else {
                        ClassGroup::Common
                    };
                    (c, g)
                })
                .collect()
        }
    };
    Ok(ClassGrouping { groups })
}

/// Which zero-annotation images survive background reduction.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum BackgroundPolicy {
    #[default]
    KeepAll,
    DropAll,
    /// Keep `floor(f * labelled_count)` background images.
    Fraction(f64),
}

impl FromStr for BackgroundPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "keep-all" => Ok(Self::KeepAll),
            "drop-all" => Ok(Self::DropAll),
            _ => {
                let f = s
                    .strip_prefix("fraction:")
                    .and_then(|v| v.parse::<f64>().ok())
                    .ok_or_else(|| {
                        Error::Config(format!(
                            "unknown background policy {s:?} (keep-all, drop-all, fraction:F)"
                        ))
                    })?;
                Ok(Self::Fraction(f))
            }
        }
    }
}

impl fmt::Display for BackgroundPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::KeepAll => f.write_str("keep-all"),
            Self::DropAll => f.write_str("drop-all"),
            Self::Fraction(v) => write!(f, "fraction:{v}"),
        }
    }
}

pub fn filter_background(
    ds: &DatasetIndex,
    policy: BackgroundPolicy,
    seed: u64,
) -> Result<DatasetIndex> {
    let labelled = ds
        .images()
        .iter()
        .filter(|i| ds.annotation_count(i.id) > 0)
        .count();
    let background: Vec<u64> = ds
        .images()
        .iter()
        .filter(|i| ds.annotation_count(i.id) == 0)
        .map(|i| i.id)
        .collect();

    let keep_bg: BTreeSet<u64> = match policy {
        BackgroundPolicy::KeepAll => return Ok(ds.clone()),
        BackgroundPolicy::DropAll => BTreeSet::new(),
        BackgroundPolicy::Fraction(f) => {
            let max = if labelled == 0 {
                f64::INFINITY
            } else {
                background.len() as f64 / labelled as f64
            };
            if !(f >= 0.0 && f <= max) {
                return Err(Error::Config(format!(
                    "background fraction {f} outside [0, {max}]"
                )));
            }
            let k = (f * labelled as f64).floor() as usize;
            SplitMix64::new(seed)
                .choose_multiple(&background, k)
                .into_iter()
                .collect()
        }
    };
    Ok(ds.retain_images(|i| ds.annotation_count(i.id) > 0 || keep_bg.contains(&i.id)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const MINIMAL: &str = r#"{
        "images": [{"id": 1, "file_name": "a.png", "width": 100, "height": 100}],
        "annotations": [{"id": 7, "image_id": 1, "category_id": 3, "bbox": [0, 0, 10, 10], "area": 100, "iscrowd": 0}],
        "categories": [{"id": 3, "name": "ship"}]
    }"#;

    fn build(counts_per_image: &[&[(u64, usize)]], cats: &[u64]) -> DatasetIndex {
        let categories = cats
            .iter()
            .map(|&id| Category {
                id,
                name: format!("c{id}"),
            })
            .collect();
        let mut images = Vec::new();
        let mut anns = Vec::new();
        for (i, per) in counts_per_image.iter().enumerate() {
            let image_id = i as u64 + 1;
            images.push(ImageRecord {
                id: image_id,
                file_name: format!("img{image_id}.png"),
                width: 100,
                height: 100,
            });
            for &(cat, n) in per.iter() {
                for _ in 0..n {
                    let bbox = BBox::new(1.0, 1.0, 5.0, 5.0).unwrap();
                    anns.push(Annotation {
                        id: anns.len() as u64 + 1,
                        image_id,
                        category_id: cat,
                        area: bbox.area(),
                        bbox,
                        iscrowd: false,
                        source_id: None,
                    });
                }
            }
        }
        DatasetIndex::new(categories, images, anns).unwrap()
    }

    fn counts(pairs: &[(u64, usize)]) -> ClassStats {
        ClassStats {
            per_class: pairs.iter().copied().collect(),
            per_image: BTreeMap::new(),
            labelled: 0,
            unlabelled: 0,
            total_images: 0,
            total_annotations: pairs.iter().map(|p| p.1).sum(),
        }
    }

    #[test]
    fn parses_minimal_document() {
        let ds = parse_coco(MINIMAL, BoxValidation::Strict).unwrap();
        assert_eq!(ds.images().len(), 1);
        assert_eq!(ds.categories().len(), 1);
        assert_eq!(ds.annotations().len(), 1);
        assert_eq!(
            ds.annotations()[0].bbox,
            BBox::new(0.0, 0.0, 10.0, 10.0).unwrap()
        );
        assert_eq!(ds.annotations_for_image(1).count(), 1);
        assert_eq!(ds.annotations_for_category(3).count(), 1);
    }

    #[test]
    fn unknown_image_reference_is_integrity_error() {
        let doc = MINIMAL.replace("\"image_id\": 1", "\"image_id\": 999");
        let err = parse_coco(&doc, BoxValidation::Clamp).unwrap_err();
        assert!(
            matches!(err, Error::Integrity(ref m) if m.contains("999")),
            "{err}"
        );
    }

    #[test]
    fn duplicate_ids_named() {
        let doc = r#"{"images": [{"id": 4, "file_name": "a", "width": 1, "height": 1},
                                 {"id": 4, "file_name": "b", "width": 1, "height": 1}],
                      "annotations": [], "categories": []}"#;
        let err = parse_coco(doc, BoxValidation::Clamp).unwrap_err();
        assert!(matches!(err, Error::Integrity(ref m) if m.contains("duplicate image id 4")));
    }

    #[test]
    fn negative_size_rejected() {
        let doc = MINIMAL.replace("[0, 0, 10, 10]", "[0, 0, -3, 10]");
        assert!(matches!(
            parse_coco(&doc, BoxValidation::Clamp),
            Err(Error::Integrity(_))
        ));
    }

    #[test]
    fn malformed_json_reports_offset() {
        let truncated = &MINIMAL[..40];
        match parse_coco(truncated, BoxValidation::Clamp) {
            Err(Error::Parse { offset, .. }) => assert!(offset <= truncated.len()),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn float_numbers_and_bool_crowd_accepted() {
        let doc = MINIMAL
            .replace("\"width\": 100", "\"width\": 100.0")
            .replace("\"iscrowd\": 0", "\"iscrowd\": true")
            .replace("\"id\": 7", "\"id\": 7.0, \"extra\": {\"x\": 1}");
        let ds = parse_coco(&doc, BoxValidation::Strict).unwrap();
        assert_eq!(ds.images()[0].width, 100);
        assert!(ds.annotations()[0].iscrowd);
        assert_eq!(ds.annotations()[0].id, 7);
    }

    #[test]
    fn out_of_bounds_box_clamped_or_rejected() {
        let doc = MINIMAL.replace("[0, 0, 10, 10]", "[95, -2, 10, 10]");
        assert!(parse_coco(&doc, BoxValidation::Strict).is_err());
        let ds = parse_coco(&doc, BoxValidation::Clamp).unwrap();
        assert_eq!(
            ds.annotations()[0].bbox,
            BBox::new(95.0, 0.0, 100.0, 8.0).unwrap()
        );
    }

    #[test]
    fn stats_examples() {
        let empty = stats(&DatasetIndex::empty());
        assert_eq!(
            (empty.labelled, empty.unlabelled, empty.total_annotations),
            (0, 0, 0)
        );

        let ds = build(&[&[(1, 2)], &[], &[(1, 5)]], &[1]);
        let s = stats(&ds);
        assert_eq!(s.per_class[&1], 7);
        assert_eq!((s.labelled, s.unlabelled), (2, 1));
    }

    #[test]
    fn validation_manifest_counts() {
        // Validation split sizes: 6049 labelled, 22487 unlabelled.
        let mut per: Vec<&[(u64, usize)]> = vec![&[(1, 1)]; 6049];
        per.extend(std::iter::repeat_n(&[][..], 22487));
        let s = stats(&build(&per, &[1]));
        assert_eq!((s.labelled, s.unlabelled), (6049, 22487));
    }

    #[test]
    fn rank_thirds_examples() {
        let fifteen: Vec<(u64, usize)> = (1..=15).map(|c| (c, 1000 - c as usize * 7)).collect();
        let g = group_classes(&counts(&fifteen), GroupingPolicy::RankThirds).unwrap();
        for group in [ClassGroup::Frequent, ClassGroup::Common, ClassGroup::Rare] {
            assert_eq!(g.groups.values().filter(|&&x| x == group).count(), 5);
        }

        let g = group_classes(
            &counts(&[(1, 100), (2, 100), (3, 1)]),
            GroupingPolicy::RankThirds,
        )
        .unwrap();
        assert_eq!(g.get(1), Some(ClassGroup::Frequent));
        assert_eq!(g.get(2), Some(ClassGroup::Common));
        assert_eq!(g.get(3), Some(ClassGroup::Rare));
    }

    #[test]
    fn threshold_grouping() {
        let policy = GroupingPolicy::Thresholds {
            frequent: 50,
            rare: 5,
        };
        let g = group_classes(&counts(&[(1, 100), (2, 20), (3, 3)]), policy).unwrap();
        assert_eq!(g.get(1), Some(ClassGroup::Frequent));
        assert_eq!(g.get(2), Some(ClassGroup::Common));
        assert_eq!(g.get(3), Some(ClassGroup::Rare));

        let bad = GroupingPolicy::Thresholds {
            frequent: 5,
            rare: 5,
        };
        assert!(matches!(
            group_classes(&counts(&[(1, 1)]), bad),
            Err(Error::Config(_))
        ));
        assert!(group_classes(&counts(&[(1, 0)]), GroupingPolicy::RankThirds).is_err());
    }

    #[test]
    fn background_policies() {
        let mut per: Vec<&[(u64, usize)]> = vec![&[(1, 1)]; 10];
        per.extend(std::iter::repeat_n(&[][..], 30));
        let ds = build(&per, &[1]);
        assert_eq!(
            filter_background(&ds, BackgroundPolicy::KeepAll, 0)
                .unwrap()
                .images()
                .len(),
            40
        );
        assert_eq!(
            filter_background(&ds, BackgroundPolicy::DropAll, 0)
                .unwrap()
                .images()
                .len(),
            10
        );
        let f = filter_background(&ds, BackgroundPolicy::Fraction(0.5), 3).unwrap();
        assert_eq!(f.images().len(), 15);
        assert_eq!(
            f,
            filter_background(&ds, BackgroundPolicy::Fraction(0.5), 3).unwrap()
        );
        assert!(filter_background(&ds, BackgroundPolicy::Fraction(3.5), 0).is_err());
        assert!(filter_background(&ds, BackgroundPolicy::Fraction(-0.1), 0).is_err());
        assert!(filter_background(&ds, BackgroundPolicy::Fraction(3.0), 0).is_ok());
    }

    #[test]
    fn policy_strings() {
        assert_eq!(
            "drop-all".parse::<BackgroundPolicy>().unwrap(),
            BackgroundPolicy::DropAll
        );
        assert_eq!(
            "fraction:0.1".parse::<BackgroundPolicy>().unwrap(),
            BackgroundPolicy::Fraction(0.1)
        );
        assert!("fraction:x".parse::<BackgroundPolicy>().is_err());
        assert_eq!(BackgroundPolicy::Fraction(0.1).to_string(), "fraction:0.1");
    }

    #[test]
    fn stems() {
        let img = ImageRecord {
            id: 1,
            file_name: "dir/P0001.tar.png".into(),
            width: 1,
            height: 1,
        };
        assert_eq!(img.stem(), "P0001.tar");
        assert_eq!(img.extension(), Some("png"));
        let img = ImageRecord {
            id: 1,
            file_name: "noext".into(),
            width: 1,
            height: 1,
        };
        assert_eq!((img.stem(), img.extension()), ("noext", None));
    }

    fn arb_dataset() -> impl Strategy<Value = DatasetIndex> {
        let image = (1u32..500, 1u32..500);
        let ann = (
            0usize..8,
            0usize..3,
            0.0..1.0f64,
            0.0..1.0f64,
            0.0..1.0f64,
            0.0..1.0f64,
            any::<bool>(),
        );
        (
            proptest::collection::vec(image, 0..8),
            proptest::collection::vec(ann, 0..30),
        )
            .prop_map(|(imgs, anns)| {
                let images: Vec<ImageRecord> = imgs
                    .iter()
                    .enumerate()
                    .map(|(i, &(w, h))| ImageRecord {
                        id: i as u64 * 3 + 2,
                        file_name: format!("im_{i}.jpg"),
                        width: w,
                        height: h,
                    })
                    .collect();
                let categories = (0..3)
                    .map(|c| Category {
                        id: c + 10,
                        name: format!("cat{c}"),
                    })
                    .collect();
                let annotations = if images.is_empty() {
                    Vec::new()
                } else {
                    anns.iter()
                        .enumerate()
                        .map(|(k, &(im, cat, fx, fy, fw, fh, crowd))| {
                            let img = &images[im % images.len()];
                            let (w, h) = (img.width as f64, img.height as f64);
                            let x = fx * w;
                            let y = fy * h;
                            let bbox = BBox::from_xywh(x, y, fw * (w - x), fh * (h - y)).unwrap();
                            Annotation {
                                id: k as u64 + 100,
                                image_id: img.id,
                                category_id: cat as u64 + 10,
                                area: bbox.area(),
                                bbox,
                                iscrowd: crowd,
                                source_id: (k % 2 == 0).then_some(k as u64),
                            }
                        })
                        .collect()
                };
                DatasetIndex::new(categories, images, annotations).unwrap()
            })
    }

    proptest! {
        #[test]
        fn serialize_parse_round_trip(ds in arb_dataset()) {
            let text = ds.to_coco_json();
            let back = parse_coco(&text, BoxValidation::Strict).unwrap();
            prop_assert_eq!(&back, &ds);
        }

        #[test]
        fn stats_totals_consistent(ds in arb_dataset()) {
            let s = stats(&ds);
            prop_assert_eq!(s.labelled + s.unlabelled, ds.images().len());
            prop_assert_eq!(s.per_class.values().sum::<usize>(), ds.annotations().len());
        }

        #[test]
        fn rank_thirds_scale_invariant(
            raw in proptest::collection::vec(0usize..50, 1..20),
            factor in 1usize..9,
        ) {
            prop_assume!(raw.iter().any(|&n| n > 0));
            let base: Vec<(u64, usize)> = raw.iter().enumerate().map(|(i, &n)| (i as u64, n)).collect();
            let scaled: Vec<(u64, usize)> = base.iter().map(|&(c, n)| (c, n * factor)).collect();
            prop_assert_eq!(
                group_classes(&counts(&base), GroupingPolicy::RankThirds).unwrap(),
                group_classes(&counts(&scaled), GroupingPolicy::RankThirds).unwrap()
            );
        }

        #[test]
        fn background_filter_is_subset_keeping_labelled(
            ds in arb_dataset(),
            frac in 0.0..1.0f64,
            seed in any::<u64>(),
        ) {
            let s = stats(&ds);
            let max = if s.labelled == 0 { 1.0 } else { s.unlabelled as f64 / s.labelled as f64 };
            let f = frac * max.min(1.0);
            for policy in [BackgroundPolicy::KeepAll, BackgroundPolicy::DropAll, BackgroundPolicy::Fraction(f)] {
                let out = filter_background(&ds, policy, seed).unwrap();
                prop_assert!(out.images().iter().all(|i| ds.image(i.id).is_some()));
                for img in ds.images() {
                    if ds.annotation_count(img.id) > 0 {
                        prop_assert!(out.image(img.id).is_some());
                    }
                }
                prop_assert_eq!(out.annotations().len(), ds.annotations().len());
                prop_assert_eq!(&out, &filter_background(&ds, policy, seed).unwrap());
            }
        }
    }
}
