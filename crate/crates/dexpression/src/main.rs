//! Command-line front end: training, cross-validation, frame extraction,
//! gradient checking, prediction, and feature-map visualization.
//!
//! Exit codes: 0 success, 1 internal failure, 2 usage or input error.

use clap::{Parser, Subcommand, ValueEnum};
use dexpression::dataset::{load_class_directory_dataset, LabeledDataset};
use dexpression::frameselect::{
    extract_mmi_style, load_frame_directory, load_image, resize_to_input, DiffMetric,
};
use dexpression::layers::{
    check_conv, check_fc, check_lrn, check_maxpool, check_relu, GradCheckReport,
    DEFAULT_EPSILON, DEFAULT_TOLERANCE,
};
use dexpression::network::{
    build_dexpression, check_network_gradients, forward, load_checkpoint, save_checkpoint,
    CheckpointMeta,
};
use dexpression::synth::generate_synthetic_dataset;
use dexpression::training::{cross_validate, metrics_csv, train, EpochStats, TrainConfig};
use dexpression::{Error, Tensor};
use sha2::Digest;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "dexpression", version, about = "Facial expression CNN toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Training hyperparameter flags, overriding the config file and defaults.
#[derive(clap::Args, Debug)]
struct TrainFlags {
    /// TOML file with training hyperparameters.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    lr: Option<f32>,
    #[arg(long)]
    momentum: Option<f32>,
    #[arg(long)]
    weight_decay: Option<f32>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr_step_factor: Option<f32>,
    #[arg(long)]
    lr_step_interval: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

impl TrainFlags {
    /// Precedence: flags > config file > built-in defaults.
    fn resolve(&self) -> Result<TrainConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)?;
                toml::from_str(&text)
                    .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?
            }
            None => TrainConfig::default(),
        };
        if let Some(v) = self.lr {
            cfg.learning_rate = v;
        }
        if let Some(v) = self.momentum {
            cfg.momentum = v;
        }
        if let Some(v) = self.weight_decay {
            cfg.weight_decay = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.lr_step_factor {
            cfg.lr_step_factor = v;
        }
        if let Some(v) = self.lr_step_interval {
            cfg.lr_step_interval = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        cfg.validate()?;
        if cfg.learning_rate == 0.0 {
            eprintln!("warning: learning rate is 0; parameters will not move");
        }
        Ok(cfg)
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LayerCheck {
    Conv,
    Fc,
    Lrn,
    Maxpool,
    Relu,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MetricFlag {
    MeanAbs,
    MeanSq,
}

impl From<MetricFlag> for DiffMetric {
    fn from(m: MetricFlag) -> Self {
        match m {
            MetricFlag::MeanAbs => DiffMetric::MeanAbsolute,
            MetricFlag::MeanSq => DiffMetric::MeanSquared,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train on a class-per-directory image tree and write a checkpoint.
    Train {
        /// Dataset root: one subdirectory per class.
        #[arg(long)]
        data: PathBuf,
        /// Expected class count; checked against the dataset when given.
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        flags: TrainFlags,
    },
    /// K-fold cross-validation over a dataset tree.
    Crossval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
        /// Worker thread hint; folds run in parallel when > 1.
        #[arg(long, default_value_t = 1)]
        threads: usize,
        #[command(flatten)]
        flags: TrainFlags,
    },
    /// Select representative frames from video-derived image sequences.
    Extract {
        /// A session directory of ordered frames, or a root of session
        /// directories.
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Gaussian smoothing width applied before frame differencing.
        #[arg(long, default_value_t = 1.0)]
        sigma: f32,
        /// Frames to select before discarding the two earliest.
        #[arg(long, default_value_t = 20)]
        count: usize,
        #[arg(long, value_enum, default_value_t = MetricFlag::MeanAbs)]
        metric: MetricFlag,
    },
    /// Compare analytic gradients against finite differences.
    Gradcheck {
        /// Check a single layer type.
        #[arg(long, value_enum, conflicts_with = "full_small")]
        layer: Option<LayerCheck>,
        /// Check the whole network end to end on a shrunken 16x16 graph.
        #[arg(long)]
        full_small: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Classify a single image with a trained checkpoint.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Emit one JSON object instead of plain text.
        #[arg(long)]
        json: bool,
    },
    /// Write per-channel activation images for the requested layers.
    Visualize {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Layer name, repeatable.
        #[arg(long = "layer", required = true)]
        layers: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic geometric-pattern dataset tree.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        classes: usize,
        #[arg(long, default_value_t = 100)]
        per_class: usize,
        #[arg(long, default_value_t = 224)]
        side: usize,
        #[arg(long, default_value_t = 0.1)]
        noise: f32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Usage and input problems exit with 2, internal failures with 1.
fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Io(_)
        | Error::UnreadableFile { .. }
        | Error::UnsupportedFormat(_)
        | Error::NoClasses
        | Error::EmptyClass(_)
        | Error::EmptyDataset
        | Error::InvalidConfig(_)
        | Error::UnknownLayer { .. }
        | Error::TooFewFrames { .. }
        | Error::TooFewSamples { .. }
        | Error::ClassCountMismatch { .. }
        | Error::VersionMismatch { .. }
        | Error::CorruptCheckpoint(_) => 2,
        _ => 1,
    }
}

fn write_manifest(
    out_dir: &Path,
    command: &str,
    config: serde_json::Value,
    seed: u64,
    started: chrono::DateTime<chrono::Utc>,
    inputs: &[&Path],
    outputs: &[PathBuf],
    checkpoint: Option<&Path>,
) -> Result<(), Error> {
    let checkpoint_sha256 = match checkpoint {
        Some(p) => {
            let bytes = std::fs::read(p)?;
            let digest = sha2::Sha256::digest(&bytes);
            Some(digest.iter().map(|b| format!("{b:02x}")).collect::<String>())
        }
        None => None,
    };
    let manifest = serde_json::json!({
        "command": command,
        "config": config,
        "seed": seed,
        "started": started.to_rfc3339(),
        "finished": chrono::Utc::now().to_rfc3339(),
        "inputs": inputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        "outputs": outputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        "checkpoint_sha256": checkpoint_sha256,
    });
    std::fs::write(
        out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).expect("manifest is serializable") + "\n",
    )?;
    Ok(())
}

fn load_dataset_checked(data: &Path, classes: Option<usize>) -> Result<LabeledDataset, Error> {
    if !data.is_dir() {
        return Err(Error::UnreadableFile {
            path: data.display().to_string(),
            detail: "dataset directory does not exist".into(),
        });
    }
    let ds = load_class_directory_dataset(data)?;
    if let Some(expected) = classes {
        if ds.class_names.len() != expected {
            return Err(Error::ClassCountMismatch {
                checkpoint: ds.class_names.len(),
                requested: expected,
            });
        }
    }
    Ok(ds)
}

fn tensor_to_gray_png(t: &Tensor<f32>, path: &Path) -> Result<(), Error> {
    let (_, h, w) = t.chw()?;
    let data = t.as_slice();
    let buf: Vec<u8> = data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let img = image::GrayImage::from_raw(w as u32, h as u32, buf)
        .expect("buffer sized from tensor dims");
    img.save(path).map_err(|e| Error::UnreadableFile {
        path: path.display().to_string(),
        detail: e.to_string(),
    })
}

fn cmd_train(
    data: &Path,
    classes: Option<usize>,
    out: &Path,
    flags: &TrainFlags,
) -> Result<(), Error> {
    let started = chrono::Utc::now();
    let cfg = flags.resolve()?;
    let ds = load_dataset_checked(data, classes)?;
    let graph = build_dexpression(ds.class_names.len())?;
    println!(
        "training on {} samples, {} classes, {} epochs",
        ds.len(),
        ds.class_names.len(),
        cfg.epochs
    );
    let result = train(&graph, &ds, &cfg)?;
    std::fs::create_dir_all(out)?;

    let ckpt_path = out.join("checkpoint.bin");
    let meta = CheckpointMeta {
        epoch: cfg.epochs as u64,
        seed: cfg.seed,
        class_names: ds.class_names.clone(),
    };
    save_checkpoint(&ckpt_path, &graph, &result.params, &meta)?;

    let metrics_path = out.join("metrics.csv");
    std::fs::write(&metrics_path, metrics_csv(&[(0, &result.loss_curve)]))?;

    if let Some(last) = result.loss_curve.last() {
        println!(
            "final epoch: loss {:.6}, train accuracy {:.2}%",
            last.mean_loss,
            100.0 * last.train_accuracy
        );
    }
    write_manifest(
        out,
        "train",
        serde_json::to_value(&cfg).expect("config is serializable"),
        cfg.seed,
        started,
        &[data],
        &[ckpt_path.clone(), metrics_path],
        Some(&ckpt_path),
    )
}

fn cmd_crossval(
    data: &Path,
    k: usize,
    out: &Path,
    threads: usize,
    flags: &TrainFlags,
) -> Result<(), Error> {
    let started = chrono::Utc::now();
    let cfg = flags.resolve()?;
    if k < 2 {
        return Err(Error::InvalidConfig(format!("k must be >= 2, got {k}")));
    }
    let ds = load_dataset_checked(data, None)?;
    let graph = build_dexpression(ds.class_names.len())?;
    if threads > 1 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    }
    println!("{k}-fold cross-validation on {} samples", ds.len());
    let result = cross_validate(&graph, &ds, &cfg, k, threads > 1)?;
    std::fs::create_dir_all(out)?;

    let mut folds_csv = String::from("fold,accuracy\n");
    for f in &result.folds {
        println!("fold {}: accuracy {:.2}%", f.fold, 100.0 * f.accuracy);
        folds_csv.push_str(&format!("{},{}\n", f.fold, f.accuracy));
    }
    folds_csv.push_str(&format!("mean,{}\n", result.mean_accuracy));
    println!("mean accuracy {:.2}%", 100.0 * result.mean_accuracy);

    let folds_path = out.join("folds.csv");
    std::fs::write(&folds_path, folds_csv)?;
    let confusion_path = out.join("confusion.csv");
    std::fs::write(&confusion_path, result.summed_confusion.to_csv())?;
    let metrics_path = out.join("metrics.csv");
    let rows: Vec<(usize, &[EpochStats])> =
        result.folds.iter().map(|f| (f.fold, f.loss_curve.as_slice())).collect();
    std::fs::write(&metrics_path, metrics_csv(&rows))?;

    write_manifest(
        out,
        "crossval",
        serde_json::json!({"train": &cfg, "k": k, "threads": threads}),
        cfg.seed,
        started,
        &[data],
        &[folds_path, confusion_path, metrics_path],
        None,
    )
}

fn cmd_extract(
    frames: &Path,
    out: &Path,
    sigma: f32,
    count: usize,
    metric: DiffMetric,
) -> Result<(), Error> {
    let started = chrono::Utc::now();
    if !frames.is_dir() {
        return Err(Error::UnreadableFile {
            path: frames.display().to_string(),
            detail: "frames directory does not exist".into(),
        });
    }
    // A root whose entries are directories is a tree of sessions; otherwise
    // the path itself is a single session.
    let mut sessions: Vec<PathBuf> = std::fs::read_dir(frames)?
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    if sessions.is_empty() {
        sessions.push(frames.to_path_buf());
    }
    sessions.sort();

    std::fs::create_dir_all(out)?;
    let mut manifest_csv = String::from("session,selected,discarded\n");
    let mut outputs = Vec::new();
    for session_dir in &sessions {
        let seq = load_frame_directory(session_dir)?;
        let extraction = extract_mmi_style(&seq, sigma, metric, count)?;
        let session_out = out.join(&seq.session);
        std::fs::create_dir_all(&session_out)?;
        for (img, &idx) in extraction.images.iter().zip(&extraction.kept_indices) {
            let path = session_out.join(format!("frame_{idx:04}.png"));
            tensor_to_gray_png(img, &path)?;
        }
        println!("{}: kept {} frames", seq.session, extraction.images.len());
        let join = |v: &[usize]| {
            v.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(";")
        };
        manifest_csv.push_str(&format!(
            "{},{},{}\n",
            seq.session,
            join(&extraction.kept_indices),
            join(&extraction.discarded_indices)
        ));
        outputs.push(session_out);
    }
    let manifest_path = out.join("extraction.csv");
    std::fs::write(&manifest_path, manifest_csv)?;
    outputs.push(manifest_path);

    write_manifest(
        out,
        "extract",
        serde_json::json!({"sigma": sigma, "count": count, "metric": format!("{metric:?}")}),
        0,
        started,
        &[frames],
        &outputs,
        None,
    )
}

fn cmd_gradcheck(layer: Option<LayerCheck>, full_small: bool, seed: u64) -> Result<bool, Error> {
    let (eps, tol) = (DEFAULT_EPSILON, DEFAULT_TOLERANCE);
    let reports: Vec<GradCheckReport> = if full_small {
        vec![check_network_gradients(seed, eps, 1e-3)?]
    } else {
        match layer {
            Some(LayerCheck::Conv) => vec![check_conv(seed, eps, tol)],
            Some(LayerCheck::Fc) => vec![check_fc(seed, eps, tol)],
            Some(LayerCheck::Lrn) => vec![check_lrn(seed, eps, tol)],
            Some(LayerCheck::Maxpool) => vec![check_maxpool(seed, eps, tol)],
            Some(LayerCheck::Relu) => vec![check_relu(seed, eps, tol)],
            None => vec![
                check_conv(seed, eps, tol),
                check_fc(seed, eps, tol),
                check_lrn(seed, eps, tol),
                check_maxpool(seed, eps, tol),
                check_relu(seed, eps, tol),
            ],
        }
    };
    let mut all_passed = true;
    for r in &reports {
        println!("{r}");
        all_passed &= r.passed;
    }
    Ok(all_passed)
}

fn load_input_image(path: &Path) -> Result<Tensor<f32>, Error> {
    let raw = load_image(path)?;
    let (_, h, w) = raw.chw()?;
    if h == 224 && w == 224 {
        Ok(raw)
    } else {
        resize_to_input(&raw)
    }
}

fn cmd_predict(checkpoint: &Path, image: &Path, json: bool) -> Result<(), Error> {
    let (graph, params, meta) = load_checkpoint(checkpoint)?;
    let x = load_input_image(image)?;
    let out = forward(&graph, &params, &x, false)?;
    let predicted = out.predicted_class();
    let name = meta
        .class_names
        .get(predicted)
        .cloned()
        .unwrap_or_else(|| predicted.to_string());
    if json {
        println!(
            "{}",
            serde_json::json!({
                "image": image.display().to_string(),
                "class": name,
                "class_index": predicted,
                "probabilities": out.probabilities,
            })
        );
    } else {
        println!("{name} ({:.2}%)", 100.0 * out.probabilities[predicted]);
        for (i, p) in out.probabilities.iter().enumerate() {
            let label = meta.class_names.get(i).map(String::as_str).unwrap_or("?");
            println!("  {label}: {p:.6}");
        }
    }
    Ok(())
}

fn cmd_visualize(
    checkpoint: &Path,
    image: &Path,
    layers: &[String],
    out: &Path,
) -> Result<(), Error> {
    let started = chrono::Utc::now();
    let (graph, params, _) = load_checkpoint(checkpoint)?;
    let x = load_input_image(image)?;
    let result = forward(&graph, &params, &x, true)?;
    let activations = result.activations.expect("capture requested");

    for name in layers {
        if !activations.contains_key(name) {
            return Err(Error::UnknownLayer {
                name: name.clone(),
                valid: graph.layers.iter().map(|l| l.name.as_str()).collect::<Vec<_>>().join(", "),
            });
        }
    }
    std::fs::create_dir_all(out)?;
    let mut outputs = Vec::new();
    for name in layers {
        let act = &activations[name];
        let (c, h, w) = act.chw()?;
        // Per-layer min-max normalization; a constant layer maps to mid-gray.
        let data = act.as_slice();
        let lo = data.iter().cloned().fold(f32::INFINITY, f32::min);
        let hi = data.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let layer_dir = out.join(name.replace(' ', "_"));
        std::fs::create_dir_all(&layer_dir)?;
        for ch in 0..c {
            let plane = &data[ch * h * w..(ch + 1) * h * w];
            let norm: Vec<f32> = if hi > lo {
                plane.iter().map(|&v| (v - lo) / (hi - lo)).collect()
            } else {
                vec![0.5; plane.len()]
            };
            let t = Tensor::from_vec(dexpression::shape![1, h, w], norm)?;
            let path = layer_dir.join(format!("ch{ch:03}.png"));
            tensor_to_gray_png(&t, &path)?;
        }
        println!("{name}: wrote {c} channel images");
        outputs.push(layer_dir);
    }
    write_manifest(
        out,
        "visualize",
        serde_json::json!({"layers": layers}),
        0,
        started,
        &[checkpoint, image],
        &outputs,
        Some(checkpoint),
    )
}

fn cmd_synth(
    out: &Path,
    classes: usize,
    per_class: usize,
    side: usize,
    noise: f32,
    seed: u64,
) -> Result<(), Error> {
    let started = chrono::Utc::now();
    let ds = generate_synthetic_dataset(classes, per_class, side, noise, seed)?;
    let mut written = vec![0usize; classes];
    for s in &ds.samples {
        let dir = out.join(&ds.class_names[s.label]);
        std::fs::create_dir_all(&dir)?;
        let path = dir.join(format!("{:04}.png", written[s.label]));
        tensor_to_gray_png(&s.image, &path)?;
        written[s.label] += 1;
    }
    println!("wrote {} images across {classes} classes to {}", ds.len(), out.display());
    write_manifest(
        out,
        "synth",
        serde_json::json!({
            "classes": classes, "per_class": per_class,
            "side": side, "noise": noise,
        }),
        seed,
        started,
        &[],
        &[out.to_path_buf()],
        None,
    )
}

fn run(cli: Cli) -> Result<bool, Error> {
    match cli.command {
        Command::Train { data, classes, out, flags } => {
            cmd_train(&data, classes, &out, &flags).map(|()| true)
        }
        Command::Crossval { data, k, out, threads, flags } => {
            cmd_crossval(&data, k, &out, threads, &flags).map(|()| true)
        }
        Command::Extract { frames, out, sigma, count, metric } => {
            cmd_extract(&frames, &out, sigma, count, metric.into()).map(|()| true)
        }
        Command::Gradcheck { layer, full_small, seed } => cmd_gradcheck(layer, full_small, seed),
        Command::Predict { checkpoint, image, json } => {
            cmd_predict(&checkpoint, &image, json).map(|()| true)
        }
        Command::Visualize { checkpoint, image, layers, out } => {
            cmd_visualize(&checkpoint, &image, &layers, &out).map(|()| true)
        }
        Command::Synth { out, classes, per_class, side, noise, seed } => {
            cmd_synth(&out, classes, per_class, side, noise, seed).map(|()| true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
