//! Command-line front end. Every subcommand renders its full output as one
//! text blob (CSV for tables, JSON for structured results, annotation or
//! detection text for file transforms) and writes it to stdout or to
//! --output, so identical invocations produce byte-identical results.

use clap::{Parser, Subcommand, ValueEnum};
use facekit::anchors::{anchor_census, tile_anchors, AnchorConfig};
use facekit::dataio::{
    apply_crop_to_boxes, parse_wider_annotations, read_detections, sample_crop,
    serialize_wider_annotations, write_detections, DetectionRecord, ImageRecord,
};
use facekit::eval::{evaluate, parse_subset_list, subset_filter, EvalConfig};
use facekit::loss::{loss_gradients, mine_batch, multitask_loss, LossConfig, SampleBatch};
use facekit::matching::{
    match_baseline, match_scale_compensated, matched_count_sums, MatchConfig, NPolicy,
};
use facekit::netgeom::{summary_for, trace_geometry, verify_design, LayerChain};
use facekit::{nms, BBox, NmsParams, Result};
use serde::Deserialize;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "facekit",
    version,
    about = "Anchor geometry, matching, loss, and evaluation toolkit for single-shot face detection"
)]
struct Cli {
    /// JSON file with optional "chain" and "anchors" sections overriding
    /// the builtin network design.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Base seed for randomized subcommands.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Write output to this file instead of stdout ("-" for stdout).
    #[arg(long, global = true)]
    output: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Strategy {
    Baseline,
    Compensated,
}

#[derive(Subcommand)]
enum Command {
    /// Print per-detection-layer stride, anchor scale, and receptive field
    /// as CSV.
    RfTable,
    /// Print the anchor census for a given image size as CSV.
    Anchors {
        #[arg(long, default_value_t = 640)]
        width: u32,
        #[arg(long, default_value_t = 640)]
        height: u32,
    },
    /// Match annotated faces against the anchor grid and print mean
    /// matched counts binned by face scale as CSV.
    MatchStats {
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long, default_value_t = 640)]
        width: u32,
        #[arg(long, default_value_t = 640)]
        height: u32,
        #[arg(long, value_enum, default_value_t = Strategy::Compensated)]
        strategy: Strategy,
        /// IoU threshold for the baseline strategy.
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        /// Fixed per-face anchor target for the compensated strategy
        /// (default: per-image average).
        #[arg(long)]
        match_n: Option<usize>,
    },
    /// Filter a detection file with score thresholding and NMS.
    Nms {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long, default_value_t = 0.3)]
        iou: f64,
        #[arg(long, default_value_t = 0.05)]
        conf: f64,
        #[arg(long, default_value_t = 400)]
        pre_top: usize,
        #[arg(long, default_value_t = 200)]
        post_top: usize,
    },
    /// Compute the multi-task loss of a JSON batch (negatives are mined
    /// first); optionally verify gradients against finite differences.
    Loss {
        #[arg(long)]
        batch: PathBuf,
        #[arg(long)]
        grad_check: bool,
        #[arg(long, default_value_t = 4.0)]
        lambda: f64,
        #[arg(long, default_value_t = 3)]
        n_m: usize,
        #[arg(long, default_value_t = 3.0)]
        neg_pos_ratio: f64,
    },
    /// Apply the seeded crop/flip augmentation to every image of an
    /// annotation file and print the transformed annotations.
    Augment {
        #[arg(long)]
        annotations: PathBuf,
        /// Pixel width shared by all images in the file.
        #[arg(long)]
        width: u32,
        /// Pixel height shared by all images in the file.
        #[arg(long)]
        height: u32,
        #[arg(long, default_value_t = 640.0)]
        target_side: f64,
    },
    /// Score detections against annotations: prints the AP summary as JSON
    /// followed by the PR curve as CSV.
    Eval {
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        detections: PathBuf,
        /// Subset list ("filename face_index" per line); faces outside it
        /// become ignore regions.
        #[arg(long)]
        subset: Option<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
    },
    /// Verify the builtin design against its frozen reference values.
    Selfcheck,
}

#[derive(Deserialize, Default)]
struct ConfigFile {
    chain: Option<LayerChain>,
    anchors: Option<AnchorConfig>,
}

struct ToolConfig {
    chain: LayerChain,
    anchors: AnchorConfig,
}

fn load_config(path: Option<&Path>) -> Result<ToolConfig> {
    let file: ConfigFile = match path {
        None => ConfigFile::default(),
        Some(p) => serde_json::from_str(&read_text(p)?)?,
    };
    let chain = file.chain.unwrap_or_else(LayerChain::builtin);
    chain.validate()?;
    let anchors = file.anchors.unwrap_or_else(AnchorConfig::builtin);
    anchors.validate()?;
    Ok(ToolConfig { chain, anchors })
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| facekit::Error::invalid(format!("{}: {e}", path.display())))
}

fn run_rf_table(cli: &Cli) -> Result<String> {
    let config = load_config(cli.config.as_deref())?;
    let trace = trace_geometry(&config.chain)?;
    let mut out = String::from("layer,stride,anchor,rf\n");
    for name in &config.chain.detection_layers {
        let summary = summary_for(&trace, name).ok_or_else(|| {
            facekit::Error::invalid(format!("detection layer {name} not in chain"))
        })?;
        let scale = config
            .anchors
            .layers
            .iter()
            .find(|l| &l.layer == name)
            .map(|l| l.scale)
            .ok_or_else(|| {
                facekit::Error::invalid(format!("no anchor scale configured for {name}"))
            })?;
        writeln!(
            out,
            "{},{},{},{}",
            name, summary.jump, scale, summary.trf_block
        )
        .unwrap();
    }
    Ok(out)
}

fn run_anchors(cli: &Cli, width: u32, height: u32) -> Result<String> {
    let config = load_config(cli.config.as_deref())?;
    let census = anchor_census(width, height, &config.anchors)?;
    let mut out = String::from("layer,scale,count,percentage\n");
    for row in census {
        writeln!(
            out,
            "{},{},{},{:.2}",
            row.layer, row.scale, row.count, row.percentage
        )
        .unwrap();
    }
    Ok(out)
}

const STAT_BIN_EDGES: [f64; 9] = [4.0, 8.0, 16.0, 32.0, 64.0, 128.0, 256.0, 512.0, 1024.0];

fn run_match_stats(
    cli: &Cli,
    annotations: &Path,
    width: u32,
    height: u32,
    strategy: Strategy,
    threshold: f64,
    match_n: Option<usize>,
) -> Result<String> {
    let config = load_config(cli.config.as_deref())?;
    let records = parse_wider_annotations(&read_text(annotations)?)?;
    let grid = tile_anchors(width, height, &config.anchors)?;

    let nbins = STAT_BIN_EDGES.len() - 1;
    let mut sums = vec![0usize; nbins];
    let mut counts = vec![0usize; nbins];
    for record in &records {
        let faces: Vec<BBox> = record.faces.iter().filter_map(|f| f.bbox()).collect();
        let result = match strategy {
            Strategy::Baseline => match_baseline(&faces, &grid, threshold)?,
            Strategy::Compensated => {
                let config = MatchConfig {
                    n_policy: match_n.map_or(NPolicy::PerImageAverage, NPolicy::Fixed),
                    ..MatchConfig::default()
                };
                match_scale_compensated(&faces, &grid, &config)?
            }
        };
        let (s, c) = matched_count_sums(&faces, &result, &STAT_BIN_EDGES)?;
        for i in 0..nbins {
            sums[i] += s[i];
            counts[i] += c[i];
        }
    }

    let mut out = String::from("scale_bin,mean_matched,face_count\n");
    for i in 0..nbins {
        let label = format!("{}..{}", STAT_BIN_EDGES[i], STAT_BIN_EDGES[i + 1]);
        if counts[i] > 0 {
            writeln!(
                out,
                "{},{},{}",
                label,
                sums[i] as f64 / counts[i] as f64,
                counts[i]
            )
            .unwrap();
        } else {
            writeln!(out, "{},,0", label).unwrap();
        }
    }
    Ok(out)
}

fn run_nms(
    detections: &Path,
    iou: f64,
    conf: f64,
    pre_top: usize,
    post_top: usize,
) -> Result<String> {
    let params = NmsParams {
        iou_thresh: iou,
        conf_thresh: conf,
        pre_top,
        post_top,
    };
    params.validate()?;
    let records = read_detections(&read_text(detections)?)?;
    let filtered: Vec<DetectionRecord> = records
        .into_iter()
        .map(|r| DetectionRecord {
            path: r.path,
            detections: nms(&r.detections, &params),
        })
        .collect();
    Ok(write_detections(&filtered))
}

fn run_loss(
    batch_path: &Path,
    grad_check: bool,
    lambda: f64,
    n_m: usize,
    neg_pos_ratio: f64,
) -> Result<String> {
    let config = LossConfig {
        lambda,
        n_m,
        neg_pos_ratio,
    };
    let batch = SampleBatch::from_json(&read_text(batch_path)?)?;
    let mined = mine_batch(&batch, &config)?;
    let loss = multitask_loss(&mined, &config)?;
    if !grad_check {
        return Ok(format!("{}\n", serde_json::to_string(&loss)?));
    }

    let grads = loss_gradients(&mined, &config)?;
    let h = 1e-5;
    let total_of = |b: &SampleBatch| -> Result<f64> { Ok(multitask_loss(b, &config)?.total) };
    let mut max_diff = 0.0f64;
    let mut params = 0usize;
    for (i, grad) in grads.iter().enumerate() {
        for j in 0..mined.anchors[i].logits.len() {
            let mut up = mined.clone();
            up.anchors[i].logits[j] += h;
            let mut down = mined.clone();
            down.anchors[i].logits[j] -= h;
            let fd = (total_of(&up)? - total_of(&down)?) / (2.0 * h);
            max_diff = max_diff.max((grad.d_logits[j] - fd).abs());
            params += 1;
        }
        for c in 0..4 {
            let mut up = mined.clone();
            let mut a = up.anchors[i].delta.as_array();
            a[c] += h;
            up.anchors[i].delta = facekit::BoxDelta::from_array(a);
            let mut down = mined.clone();
            let mut a = down.anchors[i].delta.as_array();
            a[c] -= h;
            down.anchors[i].delta = facekit::BoxDelta::from_array(a);
            let fd = (total_of(&up)? - total_of(&down)?) / (2.0 * h);
            max_diff = max_diff.max((grad.d_delta[c] - fd).abs());
            params += 1;
        }
    }
    let report = serde_json::json!({
        "total": loss.total,
        "cls": loss.cls,
        "reg": loss.reg,
        "grad_max_abs_diff": max_diff,
        "grad_params_checked": params,
    });
    Ok(format!("{}\n", serde_json::to_string(&report)?))
}

fn run_augment(
    cli: &Cli,
    annotations: &Path,
    width: u32,
    height: u32,
    target_side: f64,
) -> Result<String> {
    let records = parse_wider_annotations(&read_text(annotations)?)?;
    let mut out = Vec::with_capacity(records.len());
    for (i, record) in records.into_iter().enumerate() {
        let crop = sample_crop(width, height, cli.seed.wrapping_add(i as u64), target_side)?;
        out.push(ImageRecord {
            faces: apply_crop_to_boxes(&crop, &record.faces),
            ..record
        });
    }
    Ok(serialize_wider_annotations(&out))
}

fn run_eval(
    annotations: &Path,
    detections: &Path,
    subset: Option<&Path>,
    iou: f64,
) -> Result<String> {
    let mut records = parse_wider_annotations(&read_text(annotations)?)?;
    if let Some(subset) = subset {
        let pairs = parse_subset_list(&read_text(subset)?)?;
        records = subset_filter(&records, &pairs)?;
    }
    let dets = read_detections(&read_text(detections)?)?;
    let config = EvalConfig {
        iou_threshold: iou,
        ..EvalConfig::default()
    };
    let eval = evaluate(&records, &dets, &config)?;
    let mut out = format!("{}\n", serde_json::to_string(&eval.result)?);
    out.push_str("recall,precision,score_threshold\n");
    for p in &eval.curve.points {
        writeln!(out, "{},{},{}", p.recall, p.precision, p.score).unwrap();
    }
    Ok(out)
}

const CENSUS_REFERENCE: [(&str, u32, usize); 6] = [
    ("conv3_3", 16, 25600),
    ("conv4_3", 32, 6400),
    ("conv5_3", 64, 1600),
    ("conv_fc7", 128, 400),
    ("conv6_2", 256, 100),
    ("conv7_2", 512, 25),
];
const CENSUS_TOTAL: usize = 34125;

fn run_selfcheck() -> Result<(String, bool)> {
    let chain = LayerChain::builtin();
    let anchors = AnchorConfig::builtin();
    let report = verify_design(&chain, &anchors)?;
    let (design_pass, design_total) = report.check_counts();

    let census = anchor_census(640, 640, &anchors)?;
    let mut census_pass = 0;
    if census.len() == CENSUS_REFERENCE.len() {
        for (row, (layer, scale, count)) in census.iter().zip(CENSUS_REFERENCE) {
            if row.layer == layer && row.scale == scale && row.count == count {
                census_pass += 1;
            }
        }
    }
    if census.iter().map(|r| r.count).sum::<usize>() == CENSUS_TOTAL {
        census_pass += 1;
    }
    let census_total = CENSUS_REFERENCE.len() + 1;

    let text = format!(
        "{design_pass}/{design_total} Table-1 checks, {census_pass}/{census_total} Table-2 checks\n"
    );
    Ok((
        text,
        design_pass == design_total && census_pass == census_total,
    ))
}

fn run(cli: &Cli) -> Result<(String, bool)> {
    let text = match &cli.command {
        Command::RfTable => run_rf_table(cli)?,
        Command::Anchors { width, height } => run_anchors(cli, *width, *height)?,
        Command::MatchStats {
            annotations,
            width,
            height,
            strategy,
            threshold,
            match_n,
        } => run_match_stats(
            cli,
            annotations,
            *width,
            *height,
            *strategy,
            *threshold,
            *match_n,
        )?,
        Command::Nms {
            detections,
            iou,
            conf,
            pre_top,
            post_top,
        } => run_nms(detections, *iou, *conf, *pre_top, *post_top)?,
        Command::Loss {
            batch,
            grad_check,
            lambda,
            n_m,
            neg_pos_ratio,
        } => run_loss(batch, *grad_check, *lambda, *n_m, *neg_pos_ratio)?,
        Command::Augment {
            annotations,
            width,
            height,
            target_side,
        } => run_augment(cli, annotations, *width, *height, *target_side)?,
        Command::Eval {
            annotations,
            detections,
            subset,
            iou,
        } => run_eval(annotations, detections, subset.as_deref(), *iou)?,
        Command::Selfcheck => return run_selfcheck(),
    };
    Ok((text, true))
}

fn emit(output: Option<&Path>, text: &str) -> std::io::Result<()> {
    match output {
        Some(path) if path != Path::new("-") => std::fs::write(path, text),
        _ => {
            print!("{text}");
            Ok(())
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if matches!(cli.command, Command::Selfcheck) && cli.config.is_some() {
        eprintln!("error: selfcheck verifies the builtin design and takes no --config");
        std::process::exit(2);
    }
    match run(&cli) {
        Ok((text, ok)) => {
            if let Err(e) = emit(cli.output.as_deref(), &text) {
                eprintln!("error: {e}");
                std::process::exit(1);
            }
            if !ok {
                std::process::exit(1);
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(1);
        }
    }
}
