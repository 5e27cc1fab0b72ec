use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use adt_core::convert::{dataset_to_yolo, yolo_to_dataset};
use adt_core::dataset::{filter_background, group_classes, parse_coco, stats};
use adt_core::evaluator::{self, EvalConfig};
use adt_core::geometry::density;
use adt_core::losses::{focal_loss, FocalParams};
use adt_core::sampler::{sample_with_counts, Proposal, SamplerConfig};
use adt_core::tiler::{self, TileConfig};
use adt_core::{
    BackgroundPolicy, BoxValidation, ClassGrouping, DatasetIndex, Error, GroupingPolicy, Result,
    VERSION,
};
use clap::{Args, ValueEnum};
use serde_json::{json, Value};

use crate::{Cli, Command, GlobalArgs};

pub fn run(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Stats(a) => cmd_stats(g, a),
        Command::Tile(a) => cmd_tile(g, a),
        Command::Convert(a) => cmd_convert(g, a),
        Command::Group(a) => cmd_group(g, a),
        Command::Sample(a) => cmd_sample(g, a),
        Command::Density(a) => cmd_density(g, a),
        Command::Eval(a) => cmd_eval(g, a),
        Command::Focal(a) => cmd_focal(g, a),
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn validation(g: &GlobalArgs) -> BoxValidation {
    if g.strict {
        BoxValidation::Strict
    } else {
        BoxValidation::Clamp
    }
}

fn load_coco(g: &GlobalArgs, path: &Path) -> Result<DatasetIndex> {
    parse_coco(&read_text(path)?, validation(g))
}

fn json_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serializable")
}

/// Writes `{tool_version, command, config, result}` to `--out` or stdout.
fn emit(g: &GlobalArgs, command: &str, mut config: Value, result: Value) -> Result<()> {
    if let Value::Object(m) = &mut config {
        m.insert("seed".into(), json!(g.seed));
        m.insert("strict".into(), json!(g.strict));
    }
    let doc = json!({
        "tool_version": VERSION,
        "command": command,
        "config": config,
        "result": result,
    });
    let mut text = serde_json::to_string_pretty(&doc).expect("json output");
    text.push('\n');
    match &g.out {
        Some(p) => write_text(p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// COCO annotation file.
    pub coco: PathBuf,
    /// Print a human-readable table instead of JSON on stdout.
    #[arg(long)]
    pub table: bool,
}

fn cmd_stats(g: &GlobalArgs, a: &StatsArgs) -> Result<()> {
    let ds = load_coco(g, &a.coco)?;
    let s = stats(&ds);
    let per_class: Vec<Value> = s
        .per_class
        .iter()
        .map(|(&id, &count)| {
            json!({"category_id": id, "name": ds.category(id).map(|c| c.name.as_str()), "count": count})
        })
        .collect();
    let result = json!({
        "labelled": s.labelled,
        "unlabelled": s.unlabelled,
        "total_images": s.total_images,
        "total_annotations": s.total_annotations,
        "per_class": per_class,
    });
    if a.table {
        let mut t = String::new();
        let _ = writeln!(t, "{:<8} {:<24} {:>10}", "id", "class", "instances");
        for (&id, &count) in &s.per_class {
            let name = ds.category(id).map_or("", |c| c.name.as_str());
            let _ = writeln!(t, "{id:<8} {name:<24} {count:>10}");
        }
        let _ = writeln!(t, "labelled images:   {}", s.labelled);
        let _ = writeln!(t, "unlabelled images: {}", s.unlabelled);
        print!("{t}");
        if g.out.is_none() {
            return Ok(());
        }
    }
    emit(g, "stats", json!({"coco": a.coco}), result)
}

#[derive(Debug, Args)]
pub struct TileArgs {
    /// COCO annotation file of the source images.
    pub coco: PathBuf,
    /// Output directory for patches.json, manifest.json and patch images.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Source image directory; enables pixel cropping.
    #[arg(long)]
    pub img_dir: Option<PathBuf>,
    /// Square patch side; overridden by --patch-w/--patch-h.
    #[arg(long, default_value_t = 800)]
    pub patch_size: u32,
    #[arg(long)]
    pub patch_w: Option<u32>,
    #[arg(long)]
    pub patch_h: Option<u32>,
    /// Stride on both axes; overridden by --stride-x/--stride-y.
    #[arg(long, default_value_t = 600)]
    pub stride: u32,
    #[arg(long)]
    pub stride_x: Option<u32>,
    #[arg(long)]
    pub stride_y: Option<u32>,
    /// Minimum surviving area fraction for truncated boxes.
    #[arg(long, default_value_t = 0.25)]
    pub keep_frac: f64,
    /// Minimum side in pixels for truncated boxes.
    #[arg(long, default_value_t = 2.0)]
    pub min_side: f64,
}

fn cmd_tile(g: &GlobalArgs, a: &TileArgs) -> Result<()> {
    let cfg = TileConfig {
        patch_w: a.patch_w.unwrap_or(a.patch_size),
        patch_h: a.patch_h.unwrap_or(a.patch_size),
        stride_x: a.stride_x.unwrap_or(a.stride),
        stride_y: a.stride_y.unwrap_or(a.stride),
        keep_area_fraction: a.keep_frac,
        min_side: a.min_side,
    };
    cfg.validate()?;
    if let Some(dir) = &a.img_dir {
        if !dir.is_dir() {
            return Err(Error::io(
                dir,
                std::io::Error::new(std::io::ErrorKind::NotFound, "image directory not found"),
            ));
        }
    }
    let ds = load_coco(g, &a.coco)?;
    let ext = a.img_dir.as_ref().map(|_| "png");
    let tiled = tiler::tile_dataset_with_extension(&ds, &cfg, ext)?;
    write_text(
        &a.out_dir.join("patches.json"),
        &tiled.dataset.to_coco_json(),
    )?;
    write_text(
        &a.out_dir.join("manifest.json"),
        &(tiler::manifest_json(&tiled.manifest) + "\n"),
    )?;
    let pixels = match &a.img_dir {
        Some(dir) => Some(tiler::write_patch_images(
            &ds,
            &tiled.windows,
            dir,
            &a.out_dir.join("images"),
        )?),
        None => None,
    };
    emit(
        g,
        "tile",
        json!({
            "coco": a.coco,
            "out_dir": a.out_dir,
            "img_dir": a.img_dir,
            "tile": json_value(&cfg),
        }),
        json!({
            "source_images": ds.images().len(),
            "patches": tiled.dataset.images().len(),
            "annotations": tiled.dataset.annotations().len(),
            "pixels": pixels.map(|p| json_value(&p)),
        }),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Direction {
    Coco2yolo,
    Yolo2coco,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    /// COCO annotation file (for yolo2coco: supplies images and categories).
    pub coco: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = Direction::Coco2yolo)]
    pub direction: Direction,
    /// Background images: keep-all, drop-all or fraction:F.
    #[arg(long, default_value = "drop-all")]
    pub bg_policy: String,
    /// Write empty label files for images without objects.
    #[arg(long)]
    pub emit_empty: bool,
    /// YOLO label directory (yolo2coco).
    #[arg(long)]
    pub labels: Option<PathBuf>,
}

fn cmd_convert(g: &GlobalArgs, a: &ConvertArgs) -> Result<()> {
    let policy: BackgroundPolicy = a.bg_policy.parse()?;
    let ds = load_coco(g, &a.coco)?;
    let config = json!({
        "coco": a.coco,
        "out_dir": a.out_dir,
        "direction": format!("{:?}", a.direction).to_lowercase(),
        "bg_policy": policy.to_string(),
        "emit_empty": a.emit_empty,
        "labels": a.labels,
    });
    match a.direction {
        Direction::Coco2yolo => {
            let filtered = filter_background(&ds, policy, g.seed)?;
            let summary = dataset_to_yolo(&filtered, &a.out_dir, a.emit_empty)?;
            emit(
                g,
                "convert",
                config,
                json!({
                    "images": filtered.images().len(),
                    "files_written": summary.files_written,
                    "lines_written": summary.lines_written,
                }),
            )
        }
        Direction::Yolo2coco => {
            let labels = a
                .labels
                .as_ref()
                .ok_or_else(|| Error::Config("yolo2coco needs --labels".into()))?;
            let out = yolo_to_dataset(labels, &ds)?;
            let path = a.out_dir.join("annotations.json");
            write_text(&path, &out.to_coco_json())?;
            emit(
                g,
                "convert",
                config,
                json!({
                    "images": out.images().len(),
                    "annotations": out.annotations().len(),
                    "output": path,
                }),
            )
        }
    }
}

#[derive(Debug, Args)]
pub struct GroupArgs {
    pub coco: PathBuf,
    /// rank-thirds or thresholds:FREQUENT,RARE
    #[arg(long, default_value = "rank-thirds")]
    pub policy: String,
}

fn parse_grouping_policy(s: &str) -> Result<GroupingPolicy> {
    if s == "rank-thirds" {
        return Ok(GroupingPolicy::RankThirds);
    }
    s.strip_prefix("thresholds:")
        .and_then(|v| v.split_once(','))
        .and_then(|(f, r)| Some((f.trim().parse().ok()?, r.trim().parse().ok()?)))
        .map(|(frequent, rare)| GroupingPolicy::Thresholds { frequent, rare })
        .ok_or_else(|| Error::Config(format!("unknown grouping policy {s:?}")))
}

fn cmd_group(g: &GlobalArgs, a: &GroupArgs) -> Result<()> {
    let policy = parse_grouping_policy(&a.policy)?;
    let ds = load_coco(g, &a.coco)?;
    let grouping = group_classes(&stats(&ds), policy)?;
    emit(
        g,
        "group",
        json!({"coco": a.coco, "policy": a.policy}),
        json_value(&grouping),
    )
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// JSON list of {index, label}; label null means background.
    pub proposals: PathBuf,
    /// JSON map category_id -> frequent|common|rare (or `adt group` output).
    pub grouping: PathBuf,
    #[arg(long, default_value_t = 256)]
    pub total: usize,
    #[arg(long, default_value_t = 24)]
    pub quota_rare: usize,
    #[arg(long, default_value_t = 20)]
    pub quota_common: usize,
    #[arg(long, default_value_t = 20)]
    pub quota_frequent: usize,
}

fn cmd_sample(g: &GlobalArgs, a: &SampleArgs) -> Result<()> {
    let cfg = SamplerConfig::with_quotas(a.total, a.quota_rare, a.quota_common, a.quota_frequent)?;
    let text = read_text(&a.proposals)?;
    let proposals: Vec<Proposal> =
        serde_json::from_str(&text).map_err(|e| Error::from_json(&e, &text))?;
    let text = read_text(&a.grouping)?;
    let mut value: Value = serde_json::from_str(&text).map_err(|e| Error::from_json(&e, &text))?;
    if let Some(inner) = value.get_mut("result") {
        value = inner.take();
    }
    let grouping: ClassGrouping = serde_json::from_value(value).map_err(|e| Error::Parse {
        offset: 0,
        message: format!("grouping: {e}"),
    })?;
    let selection = sample_with_counts(&proposals, &grouping, &cfg, g.seed)?;
    emit(
        g,
        "sample",
        json!({
            "proposals": a.proposals,
            "grouping": a.grouping,
            "sampler": json_value(&cfg),
        }),
        json_value(&selection),
    )
}

#[derive(Debug, Args)]
pub struct DensityArgs {
    pub coco: PathBuf,
}

fn cmd_density(g: &GlobalArgs, a: &DensityArgs) -> Result<()> {
    let ds = load_coco(g, &a.coco)?;
    let mut rows = Vec::new();
    for img in ds.images_by_id() {
        let anns: Vec<_> = ds.annotations_for_image(img.id).collect();
        let boxes: Vec<_> = anns.iter().map(|a| a.bbox).collect();
        for (ann, d) in anns.iter().zip(density(&boxes)) {
            rows.push(json!({"annotation_id": ann.id, "image_id": img.id, "density": d}));
        }
    }
    emit(
        g,
        "density",
        json!({"coco": a.coco}),
        json!({"annotations": rows}),
    )
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Ground-truth COCO file.
    pub gt: PathBuf,
    /// COCO results JSON.
    pub detections: PathBuf,
    /// Per-class CSV output.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// PR points (IoU 0.5, all areas) CSV output.
    #[arg(long)]
    pub pr_csv: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub max_dets: usize,
    /// Score cutoff for size-stratified precision/recall.
    #[arg(long, default_value_t = 0.5)]
    pub op_score: f64,
    /// IoU threshold for size-stratified precision/recall.
    #[arg(long, default_value_t = 0.5)]
    pub op_iou: f64,
}

fn cmd_eval(g: &GlobalArgs, a: &EvalArgs) -> Result<()> {
    let cfg = EvalConfig {
        max_detections_per_image: a.max_dets,
        operating_score: a.op_score,
        operating_iou: a.op_iou,
        ..EvalConfig::default()
    };
    cfg.validate()?;
    let ds = load_coco(g, &a.gt)?;
    let dets = evaluator::parse_detections(&read_text(&a.detections)?)?;
    let result = evaluator::evaluate(&dets, &ds, &cfg)?;
    if let Some(p) = &a.csv {
        write_text(p, &evaluator::per_class_csv(&result, &ds, &cfg))?;
    }
    if let Some(p) = &a.pr_csv {
        write_text(p, &evaluator::pr_points_csv(&result, &cfg))?;
    }
    emit(
        g,
        "eval",
        json!({
            "gt": a.gt,
            "detections": a.detections,
            "csv": a.csv,
            "pr_csv": a.pr_csv,
            "eval": json_value(&cfg),
        }),
        json_value(&result),
    )
}

#[derive(Debug, Args)]
pub struct FocalArgs {
    /// Probability of the true class; may be repeated.
    #[arg(long)]
    pub pt: Vec<f64>,
    /// CSV whose first column holds p_t values (a header row is skipped).
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long, default_value_t = 0.25)]
    pub alpha: f64,
    #[arg(long, default_value_t = 2.0)]
    pub gamma: f64,
}

fn read_pt_csv(path: &Path) -> Result<Vec<f64>> {
    let text = read_text(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::LineParse {
            line: i + 1,
            message: e.to_string(),
        })?;
        let field = rec.get(0).unwrap_or("").trim();
        match field.parse::<f64>() {
            Ok(v) => out.push(v),
            Err(_) if i == 0 => {}
            Err(_) => {
                return Err(Error::LineParse {
                    line: i + 1,
                    message: format!("not a number: {field:?}"),
                })
            }
        }
    }
    Ok(out)
}

fn cmd_focal(g: &GlobalArgs, a: &FocalArgs) -> Result<()> {
    let params = FocalParams::new(a.alpha, a.gamma)?;
    let mut values = a.pt.clone();
    if let Some(p) = &a.csv {
        values.extend(read_pt_csv(p)?);
    }
    if values.is_empty() {
        return Err(Error::Config("give --pt or --csv".into()));
    }
    let rows = values
        .iter()
        .map(|&p| Ok(json!({"p_t": p, "loss": focal_loss(p, params)?})))
        .collect::<Result<Vec<Value>>>()?;
    emit(
        g,
        "focal",
        json!({"alpha": a.alpha, "gamma": a.gamma, "csv": a.csv}),
        json!({"values": rows}),
    )
}
