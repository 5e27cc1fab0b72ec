//! Synthetic inputs shared by the benchmarks.

use adt_core::evaluator::Detection;
use adt_core::rng::SplitMix64;
use adt_core::{Annotation, BBox, Category, DatasetIndex, ImageRecord};

fn unit(rng: &mut SplitMix64) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

pub fn random_boxes(n: usize, extent: f64, seed: u64) -> Vec<BBox> {
    let mut rng = SplitMix64::new(seed);
    (0..n)
        .map(|_| {
            let x = unit(&mut rng) * extent;
            let y = unit(&mut rng) * extent;
            let w = 10.0 + unit(&mut rng) * 290.0;
            let h = 10.0 + unit(&mut rng) * 290.0;
            BBox::from_xywh(x, y, w, h).expect("positive size")
        })
        .collect()
}

/// Dataset of `images` 2000x2000 images with `per_image` boxes over 15
/// classes, plus jittered detections.
pub fn scene(images: usize, per_image: usize, seed: u64) -> (DatasetIndex, Vec<Detection>) {
    let mut rng = SplitMix64::new(seed);
    let categories = (1..=15)
        .map(|id| Category {
            id,
            name: format!("class{id}"),
        })
        .collect();
    let mut imgs = Vec::new();
    let mut anns = Vec::new();
    let mut dets = Vec::new();
    for i in 0..images as u64 {
        imgs.push(ImageRecord {
            id: i + 1,
            file_name: format!("P{i:04}.png"),
            width: 2000,
            height: 2000,
        });
        for b in random_boxes(per_image, 1700.0, rng.next_u64()) {
            let category_id = rng.below(15) + 1;
            anns.push(Annotation {
                id: anns.len() as u64 + 1,
                image_id: i + 1,
                category_id,
                area: b.area(),
                bbox: b,
                iscrowd: false,
                source_id: None,
            });
            let jitter = (unit(&mut rng) - 0.5) * 8.0;
            let d = b.translate(jitter, -jitter);
            dets.push(Detection::new(i + 1, category_id, d, unit(&mut rng)).expect("valid score"));
        }
    }
    (
        DatasetIndex::new(categories, imgs, anns).expect("valid synthetic dataset"),
        dets,
    )
}
