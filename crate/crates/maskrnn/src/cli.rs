//! Command-line front end.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use maskrnn_core::data::{default_suite, synth_generate, VideoRecord};
use maskrnn_core::metrics::{evaluate_sequence, MetricsReport};
use maskrnn_core::pipeline::{
    ablation_rows, ablation_table, finetune_object, infer, init_model, resolve_flows, run_ablation, train_recurrent,
    train_static, AblationRow, ModelConfig, Progress, Stage,
};
use maskrnn_core::tensor::ParamStore;
use maskrnn_core::LabelMask;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::checkpoint::{load_checkpoint, pack_objects, save_checkpoint, unpack_objects};
use crate::config::RunConfig;
use crate::dataset::{list_sequences, load_davis, load_sequence, read_manifest, save_predictions, write_corpus, LoadedVideo};
use crate::error::{Error, Result};
use crate::overlay::render_overlay;
use crate::parallel::par_map;
use crate::png_io::{read_label_png, write_rgb_png};
use crate::report::{read_json, write_json, BoxesFile, EvalReport, FrameBoxes, RunManifest, SCHEMA};

#[derive(Debug, Parser)]
#[command(name = "maskrnn", version, about = "Recurrent instance-level video object segmentation")]
pub struct Cli {
    /// JSON run configuration; missing keys keep their defaults
    /// (see `maskrnn print-config`).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for data generation, initialization and training [default: 0].
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for per-object and per-sequence work [default: 1].
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Where to write the run manifest [default: `run.json` inside directory
    /// outputs, none for single-file outputs].
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum StageArg {
    Static,
    Recurrent,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the synthetic corpus as a dataset directory.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Skip the exact-flow sidecars so later stages estimate flow.
        #[arg(long)]
        no_flow: bool,
    },
    /// Offline training on every sequence of a split.
    Train {
        #[arg(long, value_enum)]
        stage: StageArg,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Starting checkpoint; required for the recurrent stage.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Manifest split to train on [default: train when a manifest
        /// exists, otherwise every sequence].
        #[arg(long)]
        split: Option<String>,
    },
    /// Online finetuning on the first annotated frame of one sequence.
    Finetune {
        /// Dataset root.
        #[arg(long)]
        video: PathBuf,
        /// Required when the root holds more than one sequence.
        #[arg(long)]
        sequence: Option<String>,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Segment sequences into `<out>/<sequence>/` masks and `boxes.json`.
    Infer {
        #[arg(long)]
        video: PathBuf,
        /// Sequence to segment [default: the checkpoint's sequence, else all].
        #[arg(long)]
        sequence: Option<String>,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Finetune a shared checkpoint on each sequence before inference.
        #[arg(long)]
        online: bool,
    },
    /// Score predicted masks against annotations.
    Eval {
        /// Prediction root with one directory per sequence.
        #[arg(long)]
        pred: PathBuf,
        /// Dataset root with the annotations.
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Draw predicted instances and boxes over the frames.
    Overlay {
        #[arg(long)]
        video: PathBuf,
        #[arg(long)]
        sequence: Option<String>,
        /// Prediction root written by `infer`.
        #[arg(long)]
        masks: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and score component ablations on the synthetic suite.
    Ablate {
        /// Comma-separated row names, or `all`.
        #[arg(long, default_value = "all")]
        toggles: String,
        /// JSON report with every seed's scores.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Print the effective configuration as JSON.
    PrintConfig,
}

struct Run {
    cfg: RunConfig,
    args: Vec<String>,
    start: Instant,
    timing: Vec<(String, f64)>,
    inputs: Vec<String>,
    outputs: Vec<String>,
}

fn log_progress(p: &Progress, elapsed: f64) {
    let stage = match p.stage {
        Stage::Static => "static",
        Stage::Recurrent => "recurrent",
        Stage::Online => "online",
    };
    eprintln!(
        "event=progress stage={stage} epoch={} object={} steps={} loss={:.6} lr={:.3e} elapsed={elapsed:.2}",
        p.epoch, p.object, p.steps, p.loss, p.learning_rate
    );
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn model_from(meta: &serde_json::Value, fallback: &ModelConfig) -> Result<ModelConfig> {
    match meta.get("model") {
        Some(m) => serde_json::from_value(m.clone()).map_err(|e| Error::json(Path::new("<checkpoint metadata>"), e)),
        None => Ok(fallback.clone()),
    }
}

fn select_sequence(root: &Path, sequence: Option<&str>) -> Result<String> {
    if let Some(s) = sequence {
        return Ok(s.to_string());
    }
    let names = list_sequences(root)?;
    match names.as_slice() {
        [one] => Ok(one.clone()),
        [] => Err(Error::Usage(format!("{} holds no sequence", root.display()))),
        _ => Err(Error::Usage(format!(
            "{} holds {} sequences; pick one with --sequence",
            root.display(),
            names.len()
        ))),
    }
}

fn load_with_warnings(root: &Path, name: &str) -> Result<LoadedVideo> {
    let v = load_sequence(root, name)?;
    for w in &v.warnings {
        eprintln!("event=warning message={w:?}");
    }
    Ok(v)
}

/// Finetune every object of `video` in parallel.
fn finetune_video(run: &mut Run, video: &VideoRecord, params: &ParamStore, model: &ModelConfig) -> Result<Vec<ParamStore>> {
    let padded = video.padded(model.seg.stride());
    let flows = resolve_flows(&padded, model)?;
    let objects: Vec<usize> = (1..=video.num_objects).collect();
    let cfg = &run.cfg.online_stage;
    let t0 = Instant::now();
    let results = par_map(&objects, run.cfg.threads, |_, &obj| {
        let t = Instant::now();
        finetune_object(&padded, &flows, params, model, cfg, obj).map(|r| (r, t.elapsed().as_secs_f64()))
    });
    let mut out = Vec::with_capacity(objects.len());
    for (obj, r) in objects.iter().zip(results) {
        let ((p, losses), secs) = r?;
        let mean = losses.iter().sum::<f64>() / losses.len().max(1) as f64;
        log_progress(
            &Progress {
                stage: Stage::Online,
                epoch: 0,
                object: *obj,
                steps: losses.len(),
                loss: mean,
                learning_rate: cfg.online_rate(cfg.online_iterations.saturating_sub(1)),
            },
            t0.elapsed().as_secs_f64(),
        );
        run.timing.push((format!("{}/object{obj}", video.name), secs));
        out.push(p);
    }
    Ok(out)
}

fn cmd_synth(run: &mut Run, out: &Path, no_flow: bool) -> Result<()> {
    let (train, test) = default_suite(&run.cfg.suite, run.cfg.seed);
    let mut videos = Vec::with_capacity(train.len() + test.len());
    for (scenes, split) in [(&train, "train"), (&test, "test")] {
        for s in scenes {
            let mut v = synth_generate(s, run.cfg.seed)?;
            if no_flow {
                v.flows.clear();
            }
            videos.push((v, split));
        }
    }
    write_corpus(out, &videos)?;
    eprintln!("event=synth sequences={} out={}", videos.len(), out.display());
    run.outputs.push(display(out));
    Ok(())
}

fn cmd_train(run: &mut Run, stage: StageArg, data: &Path, out: &Path, init: Option<&Path>, split: Option<&str>) -> Result<()> {
    let split = match split {
        Some("all") => None,
        Some(s) => Some(s.to_string()),
        None => read_manifest(data)?.map(|_| "train".to_string()),
    };
    let loaded = load_davis(data, split.as_deref())?;
    for v in &loaded {
        for w in &v.warnings {
            eprintln!("event=warning message={w:?}");
        }
    }
    let videos: Vec<VideoRecord> = loaded.into_iter().map(|v| v.record).collect();
    run.inputs.push(display(data));
    let (params, model) = match init {
        Some(p) => {
            let (params, meta) = load_checkpoint(p)?;
            run.inputs.push(display(p));
            (params, model_from(&meta, &run.cfg.model)?)
        }
        None if stage == StageArg::Recurrent => {
            return Err(Error::Usage("the recurrent stage needs --init with a static checkpoint".into()))
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(run.cfg.seed);
            (init_model(&run.cfg.model, &mut rng)?, run.cfg.model.clone())
        }
    };
    let t0 = Instant::now();
    let mut last = 0.0;
    let mut epochs = Vec::new();
    let mut log = |p: &Progress| {
        let now = t0.elapsed().as_secs_f64();
        log_progress(p, now);
        epochs.push((format!("epoch{}", p.epoch), now - last));
        last = now;
    };
    let (params, report) = match stage {
        StageArg::Static => train_static(&videos, params, &model, &run.cfg.static_stage, &mut log)?,
        StageArg::Recurrent => train_recurrent(&videos, params, &model, &run.cfg.recurrent_stage, &mut log)?,
    };
    run.timing.extend(epochs);
    let meta = json!({
        "model": model,
        "stage": format!("{stage:?}").to_lowercase(),
        "seed": run.cfg.seed,
        "epoch_losses": report.epoch_losses,
    });
    save_checkpoint(out, &params, &meta)?;
    run.outputs.push(display(out));
    Ok(())
}

fn cmd_finetune(run: &mut Run, root: &Path, sequence: Option<&str>, ckpt: &Path, out: &Path) -> Result<()> {
    let name = select_sequence(root, sequence)?;
    let video = load_with_warnings(root, &name)?;
    let (params, meta) = load_checkpoint(ckpt)?;
    let model = model_from(&meta, &run.cfg.model)?;
    run.inputs.extend([display(root), display(ckpt)]);
    let sets = finetune_video(run, &video.record, &params, &model)?;
    let meta = json!({
        "model": model,
        "stage": "online",
        "seed": run.cfg.seed,
        "sequence": name,
        "objects": sets.len(),
    });
    save_checkpoint(out, &pack_objects(&sets), &meta)?;
    run.outputs.push(display(out));
    Ok(())
}

fn cmd_infer(run: &mut Run, root: &Path, sequence: Option<&str>, ckpt: &Path, out: &Path, online: bool) -> Result<()> {
    let (params, meta) = load_checkpoint(ckpt)?;
    let model = model_from(&meta, &run.cfg.model)?;
    let sets = unpack_objects(&params);
    let per_object = meta.get("sequence").and_then(|s| s.as_str());
    let names = match (sequence, per_object) {
        (Some(s), _) => vec![s.to_string()],
        (None, Some(s)) => vec![s.to_string()],
        (None, None) => list_sequences(root)?,
    };
    if online && per_object.is_some() {
        return Err(Error::Usage(format!("{} is already finetuned; drop --online", ckpt.display())));
    }
    run.inputs.extend([display(root), display(ckpt)]);
    create_dir(out)?;
    let mut videos = Vec::with_capacity(names.len());
    for n in &names {
        videos.push(load_with_warnings(root, n)?);
    }
    let mut tuned = Vec::with_capacity(videos.len());
    for v in &videos {
        tuned.push(if online { finetune_video(run, &v.record, &params, &model)? } else { sets.clone() });
    }
    // Finetuning already uses the workers; sequences run in parallel here.
    let results = par_map(&videos, run.cfg.threads, |i, v| {
        let t = Instant::now();
        infer(&v.record, &tuned[i], &model).map(|p| (p, t.elapsed().as_secs_f64()))
    });
    for (v, r) in videos.iter().zip(results) {
        let (pred, secs) = r?;
        let dir = out.join(&v.record.name);
        save_predictions(&pred.masks, &v.frame_names, &v.label_ids, &dir)?;
        let boxes = BoxesFile {
            schema: SCHEMA,
            sequence: v.record.name.clone(),
            label_ids: v.label_ids.clone(),
            frames: v
                .frame_names
                .iter()
                .zip(&pred.boxes)
                .map(|(f, b)| FrameBoxes {
                    frame: f.clone(),
                    boxes: b.clone(),
                })
                .collect(),
        };
        write_json(&dir.join("boxes.json"), &boxes)?;
        let per_frame = secs / (v.record.len().max(2) - 1) as f64;
        eprintln!(
            "event=infer sequence={} frames={} objects={} seconds={secs:.3} per_frame={per_frame:.4}",
            v.record.name,
            v.record.len(),
            v.record.num_objects
        );
        run.timing.push((format!("{}/per_frame", v.record.name), per_frame));
        run.outputs.push(display(&dir));
    }
    Ok(())
}

/// Read `<dir>/<frame>.png` for every frame name, mapping annotation ids to
/// object indices through `label_ids`; unknown ids become background.
fn read_predictions(dir: &Path, video: &LoadedVideo) -> Result<Vec<LabelMask>> {
    let mut lut = [0u8; 256];
    for (i, &id) in video.label_ids.iter().enumerate() {
        lut[id as usize] = i as u8 + 1;
    }
    let dims = video.record.dims();
    video
        .frame_names
        .iter()
        .take(video.record.masks.len())
        .map(|n| {
            let p = dir.join(format!("{n}.png"));
            let m = read_label_png(&p)?;
            if m.dims() != dims {
                return Err(Error::dataset(
                    &video.record.name,
                    format!("prediction {} is {:?}, frames are {dims:?}", p.display(), m.dims()),
                ));
            }
            Ok(m.map(|l| lut[l as usize]))
        })
        .collect()
}

fn cmd_eval(run: &mut Run, pred: &Path, gt: &Path, report: &Path) -> Result<()> {
    let mut names: Vec<String> = fs::read_dir(pred)
        .map_err(|e| Error::io(pred, e))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::Usage(format!("{} holds no prediction directory", pred.display())));
    }
    run.inputs.extend([display(pred), display(gt)]);
    let mut objects = Vec::new();
    for n in &names {
        let video = load_with_warnings(gt, n)?;
        let masks = read_predictions(&pred.join(n), &video)?;
        let gt_masks = &video.record.masks[..masks.len()];
        objects.extend(evaluate_sequence(n, &masks, gt_masks, video.record.num_objects, &run.cfg.metrics)?);
    }
    let r = MetricsReport::from_objects(objects);
    let table = r.table();
    print!("{table}");
    write_json(
        report,
        &EvalReport {
            schema: SCHEMA,
            metrics: run.cfg.metrics.clone(),
            report: r,
            table,
        },
    )?;
    run.outputs.push(display(report));
    Ok(())
}

fn cmd_overlay(run: &mut Run, root: &Path, sequence: Option<&str>, masks: &Path, out: &Path) -> Result<()> {
    let name = select_sequence(root, sequence)?;
    let video = load_with_warnings(root, &name)?;
    let dir = masks.join(&name);
    let boxes_path = dir.join("boxes.json");
    let boxes: Option<BoxesFile> = if boxes_path.is_file() { Some(read_json(&boxes_path)?) } else { None };
    let out_dir = out.join(&name);
    create_dir(&out_dir)?;
    run.inputs.extend([display(root), display(masks)]);
    for (t, f) in video.frame_names.iter().enumerate() {
        let p = dir.join(format!("{f}.png"));
        if !p.is_file() {
            break;
        }
        // Overlays keep the annotation ids, so no remapping is needed.
        let m = read_label_png(&p)?;
        let frame_boxes = boxes
            .as_ref()
            .and_then(|b| b.frames.get(t))
            .map(|fb| fb.boxes.clone())
            .unwrap_or_default();
        let ids: Vec<u8> = (1..=255).collect();
        let raw_boxes: Vec<Option<_>> = {
            let mut v = vec![None; 255];
            for (i, b) in frame_boxes.into_iter().enumerate() {
                if let Some(&id) = video.label_ids.get(i) {
                    v[id as usize - 1] = b;
                }
            }
            v
        };
        let img = render_overlay(&video.record.frames[t], &m, &raw_boxes, &ids);
        write_rgb_png(&out_dir.join(format!("{f}.png")), &img)?;
    }
    run.outputs.push(display(&out_dir));
    Ok(())
}

fn parse_rows(spec: &str) -> Result<Vec<AblationRow>> {
    let all = ablation_rows();
    if spec.trim() == "all" {
        return Ok(all);
    }
    spec.split(',')
        .map(|s| {
            let s = s.trim();
            all.iter().find(|r| r.name == s).cloned().ok_or_else(|| {
                let names: Vec<&str> = all.iter().map(|r| r.name.as_str()).collect();
                Error::Usage(format!("unknown ablation row {s:?} (expected one of {})", names.join(", ")))
            })
        })
        .collect()
}

fn cmd_ablate(run: &mut Run, toggles: &str, report: Option<&Path>) -> Result<()> {
    let rows = parse_rows(toggles)?;
    let t0 = Instant::now();
    let results = run_ablation(&run.cfg.ablation, &rows, &mut |row, p| {
        eprint!("row={row:?} ");
        log_progress(p, t0.elapsed().as_secs_f64());
    })?;
    print!("{}", ablation_table(&results));
    if let Some(r) = report {
        write_json(r, &json!({"schema": SCHEMA, "results": results}))?;
        run.outputs.push(display(r));
    }
    Ok(())
}

/// Commands writing a directory put their manifest inside it. Commands
/// writing one file only write a manifest when `--manifest` names it.
fn default_manifest_path(cmd: &Command) -> Option<PathBuf> {
    match cmd {
        Command::Synth { out, .. } | Command::Infer { out, .. } | Command::Overlay { out, .. } => Some(out.join("run.json")),
        _ => None,
    }
}

fn command_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Synth { .. } => "synth",
        Command::Train { .. } => "train",
        Command::Finetune { .. } => "finetune",
        Command::Infer { .. } => "infer",
        Command::Eval { .. } => "eval",
        Command::Overlay { .. } => "overlay",
        Command::Ablate { .. } => "ablate",
        Command::PrintConfig => "print-config",
    }
}

/// Execute a parsed command line.
pub fn run(cli: Cli, args: Vec<String>) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(|e| Error::Usage(format!("configuration {e}")))?,
        None => RunConfig::default(),
    }
    .with_overrides(cli.seed, cli.threads);
    cfg.validate().map_err(|e| match e {
        Error::Core(c) => Error::Usage(format!("invalid configuration: {c}")),
        e => e,
    })?;
    let mut run = Run {
        cfg,
        args,
        start: Instant::now(),
        timing: Vec::new(),
        inputs: cli.config.iter().map(|p| display(p)).collect(),
        outputs: Vec::new(),
    };
    match &cli.command {
        Command::Synth { out, no_flow } => cmd_synth(&mut run, out, *no_flow)?,
        Command::Train {
            stage,
            data,
            out,
            init,
            split,
        } => cmd_train(&mut run, *stage, data, out, init.as_deref(), split.as_deref())?,
        Command::Finetune {
            video,
            sequence,
            ckpt,
            out,
        } => cmd_finetune(&mut run, video, sequence.as_deref(), ckpt, out)?,
        Command::Infer {
            video,
            sequence,
            ckpt,
            out,
            online,
        } => cmd_infer(&mut run, video, sequence.as_deref(), ckpt, out, *online)?,
        Command::Eval { pred, gt, report } => cmd_eval(&mut run, pred, gt, report)?,
        Command::Overlay {
            video,
            sequence,
            masks,
            out,
        } => cmd_overlay(&mut run, video, sequence.as_deref(), masks, out)?,
        Command::Ablate { toggles, report } => cmd_ablate(&mut run, toggles, report.as_deref())?,
        Command::PrintConfig => {
            let text = serde_json::to_string_pretty(&run.cfg).map_err(|e| Error::json(Path::new("<stdout>"), e))?;
            println!("{text}");
        }
    }
    if let Some(path) = cli.manifest.clone().or_else(|| default_manifest_path(&cli.command)) {
        let manifest = RunManifest {
            schema: SCHEMA,
            command: command_name(&cli.command).into(),
            args: run.args.clone(),
            seed: run.cfg.seed,
            config: serde_json::to_value(&run.cfg).map_err(|e| Error::json(&path, e))?,
            inputs: run.inputs.clone(),
            outputs: run.outputs.clone(),
            timing: run.timing.clone(),
            total_seconds: run.start.elapsed().as_secs_f64(),
        };
        write_json(&path, &manifest)?;
    }
    Ok(())
}

/// Parse `args` and run, returning the process exit code. Failures print one
/// `status=error code=<n> kind=<kind> reason=<quoted>` line to stderr.
pub fn main_with_args(args: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let reason = e.to_string();
            let first = reason.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprint!("{e}");
            eprintln!("status=error code=1 kind=usage reason={first:?}");
            return 1;
        }
    };
    match run(cli, args) {
        Ok(()) => 0,
        Err(e) => {
            let code = e.exit_code();
            eprintln!("status=error code={code} kind={} reason={:?}", e.kind(), e.to_string());
            code
        }
    }
}
