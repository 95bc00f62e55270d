//! `ifnet`: synthetic data, ground truth, training, evaluation, inference and
//! gradient checks from the command line.
//!
//! Results go to stdout as JSON; progress and tables go to stderr.

mod dataset;
mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ifnet::config::RunConfig;
use ifnet::density::io::{write_annotations, write_dmap, AnnotationRecord};
use ifnet::density::{synth_scene, DensityMap, Image, SceneConfig, SegMask, DEFAULT_SEG_TAU};
use ifnet::model::{read_checkpoint, write_checkpoint, xavier_init, ModelConfig, ParamStore};
use ifnet::train::{
    infer, model_grad_check, score_maps, train, write_history_csv, Evaluation, MODEL_CHECK_EPS, MODEL_CHECK_SIDE,
};
use ifnet::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use manifest::{content_hash, file_entries, relative, RunManifest};

/// Gradient checks fail at or above this relative error.
const GRADCHECK_TOLERANCE: f64 = 1e-3;
const MANIFEST: &str = "manifest.json";
const CONFIG_SIDECAR: &str = "config.txt";

#[derive(Parser)]
#[command(name = "ifnet", version, about = "Crowd counting with cross-column fusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render synthetic crowd scenes with point annotations.
    GenData(GenData),
    /// Write density maps and segmentation masks for a dataset.
    MakeGt(MakeGt),
    /// Train from scratch and write a checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint (or the ground truth itself) on a dataset.
    Eval(EvalArgs),
    /// Predict a density map for one image.
    Infer(InferArgs),
    /// Finite-difference check of the full objective.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct GenData {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    scenes: usize,
    /// HxW, e.g. 64x64.
    #[arg(long, default_value = "64x64", value_parser = parse_size)]
    size: (usize, usize),
    /// Inclusive A:B.
    #[arg(long, default_value = "5:30", value_parser = parse_range)]
    count_range: (usize, usize),
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct MakeGt {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 4.0)]
    sigma: f64,
    #[arg(long, default_value_t = DEFAULT_SEG_TAU)]
    tau: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// key = value file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, required_unless_present = "oracle")]
    ckpt: Option<PathBuf>,
    /// Defaults to config.txt beside the checkpoint.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Score the ground truth maps as if they were predictions.
    #[arg(long)]
    oracle: bool,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    /// Defaults to config.txt beside the checkpoint.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Model and loss settings; the tiny preset when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = MODEL_CHECK_EPS)]
    eps: f64,
    #[arg(long, default_value_t = MODEL_CHECK_SIDE)]
    side: usize,
}

fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let (h, w) = s.split_once(['x', 'X']).ok_or("expected HxW")?;
    Ok((h.parse().map_err(|_| "bad height")?, w.parse().map_err(|_| "bad width")?))
}

fn parse_range(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s.split_once(':').ok_or("expected A:B")?;
    let (a, b) = (a.parse().map_err(|_| "bad lower bound")?, b.parse().map_err(|_| "bad upper bound")?);
    if a > b {
        return Err(format!("{a}:{b} is empty"));
    }
    Ok((a, b))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_owned(), source }
}

fn emit(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("JSON values serialize"));
}

fn io_source(e: &Error) -> bool {
    let mut cur: Option<&dyn std::error::Error> = std::error::Error::source(e);
    while let Some(c) = cur {
        if c.is::<std::io::Error>() {
            return true;
        }
        cur = c.source();
    }
    false
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } => 2,
        Error::Checkpoint(_) => 4,
        Error::NonFinite(_) => 5,
        // An unreadable image file is an I/O failure, a malformed one is data.
        Error::Image(_) if io_source(e) => 2,
        _ => 3,
    }
}

fn gen_data(a: &GenData) -> Result<()> {
    fs::create_dir_all(&a.out).map_err(io_err(&a.out))?;
    let scene = SceneConfig {
        height: a.size.0,
        width: a.size.1,
        count_range: a.count_range,
        ..SceneConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut records = Vec::with_capacity(a.scenes);
    let mut outputs = Vec::new();
    for i in 0..a.scenes {
        let (image, ann) = synth_scene(&scene, rng.random())?;
        let name = format!("scene_{i:04}.png");
        image.save_png(&a.out.join(&name))?;
        records.push(AnnotationRecord {
            image: PathBuf::from(&name),
            points: ann.points().iter().map(|&(x, y)| [x, y]).collect(),
        });
        outputs.push(name);
    }
    write_annotations(&a.out.join(dataset::ANNOTATIONS), &records)?;
    outputs.push(dataset::ANNOTATIONS.into());
    let config = serde_json::to_value(&scene)?;
    let manifest = RunManifest {
        command: "gen-data".into(),
        input_hash: content_hash(&[("scene".into(), config.to_string().into_bytes())]),
        config,
        seed: Some(a.seed),
        inputs: vec![],
        outputs,
    };
    manifest.write(&a.out.join(MANIFEST))?;
    eprintln!("wrote {} scenes to {}", a.scenes, a.out.display());
    emit(&json!({ "scenes": a.scenes, "out": a.out }));
    Ok(())
}

fn mask_as_map(mask: &SegMask) -> Result<DensityMap> {
    let v = mask.values().iter().map(|&m| f32::from(m)).collect();
    DensityMap::new(mask.height(), mask.width(), mask.resolution_divisor(), v)
}

fn make_gt(a: &MakeGt) -> Result<()> {
    let entries = dataset::load(&a.data)?;
    let samples = dataset::samples(&entries, a.sigma, a.tau)?;
    fs::create_dir_all(&a.out).map_err(io_err(&a.out))?;
    let mut outputs = Vec::new();
    let mut summary = Vec::new();
    for (e, s) in entries.iter().zip(&samples) {
        let stem = Path::new(&e.name).file_stem().map_or(e.name.clone(), |s| s.to_string_lossy().into_owned());
        let files = [
            (format!("{stem}.d1.dmap"), s.full.clone()),
            (format!("{stem}.d4.dmap"), s.gt.density4.clone()),
            (format!("{stem}.d8.dmap"), s.gt.density8.clone()),
            (format!("{stem}.m4.dmap"), mask_as_map(&s.gt.mask4)?),
        ];
        for (name, map) in &files {
            write_dmap(&a.out.join(name), map)?;
            outputs.push(name.clone());
        }
        eprintln!("{:<24} {:>4} heads  sum {:.4}", e.name, e.annotation.count(), s.full.sum());
        summary.push(json!({ "image": e.name, "count": e.annotation.count(), "sum": s.full.sum() }));
    }
    let config = json!({ "sigma": a.sigma, "tau": a.tau });
    let mut hashed = file_entries(&a.data, &dataset::input_files(&a.data, &entries))?;
    hashed.push(("config".into(), config.to_string().into_bytes()));
    RunManifest {
        command: "make-gt".into(),
        config,
        seed: None,
        input_hash: content_hash(&hashed),
        inputs: hashed.iter().map(|(n, _)| n.clone()).collect(),
        outputs,
    }
    .write(&a.out.join(MANIFEST))?;
    emit(&json!({ "images": summary }));
    Ok(())
}

fn read_config(path: Option<&Path>, ckpt: Option<&Path>) -> Result<RunConfig> {
    if let Some(p) = path {
        return RunConfig::read(p);
    }
    if let Some(side) = ckpt.map(|c| c.with_file_name(CONFIG_SIDECAR)) {
        if side.exists() {
            return RunConfig::read(&side);
        }
    }
    Ok(RunConfig::default())
}

fn train_cmd(a: &TrainArgs) -> Result<()> {
    let cfg = match &a.config {
        Some(p) => RunConfig::read(p)?,
        None => RunConfig::default(),
    };
    let entries = dataset::load(&a.data)?;
    let samples = dataset::samples(&entries, cfg.train.sigma, cfg.train.seg_tau)?;
    fs::create_dir_all(&a.out).map_err(io_err(&a.out))?;
    let init: ParamStore<f32> = xavier_init(&cfg.model, cfg.train.seed)?;
    let (params, history) = train(init, &cfg.model, &samples, &cfg.train)?;

    let ckpt = a.out.join("model.ifnw");
    write_checkpoint(&ckpt, &params)?;
    write_history_csv(&a.out.join("history.csv"), &history)?;
    let side = a.out.join(CONFIG_SIDECAR);
    fs::write(&side, cfg.to_text()).map_err(io_err(&side))?;

    let mut hashed = file_entries(&a.data, &dataset::input_files(&a.data, &entries))?;
    hashed.push(("config".into(), cfg.to_text().into_bytes()));
    RunManifest {
        command: "train".into(),
        config: serde_json::to_value(&cfg)?,
        seed: Some(cfg.train.seed),
        input_hash: content_hash(&hashed),
        inputs: hashed.iter().map(|(n, _)| n.clone()).collect(),
        outputs: vec!["model.ifnw".into(), "history.csv".into(), CONFIG_SIDECAR.into()],
    }
    .write(&a.out.join(MANIFEST))?;

    let last = history.last();
    emit(&json!({
        "checkpoint": ckpt,
        "epochs": history.len(),
        "final_loss": last.map(|r| r.loss_total),
    }));
    Ok(())
}

fn print_table(eval: &Evaluation, names: &[String]) {
    eprintln!("{:<24} {:>9} {:>9} {:>8} {:>7}", "image", "pred", "gt", "psnr", "ssim");
    for (n, s) in names.iter().zip(&eval.images) {
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.3}"));
        eprintln!("{n:<24} {:>9.3} {:>9.0} {:>8} {:>7}", s.pred_count, s.gt_count, opt(s.psnr), opt(s.ssim));
    }
    eprintln!("MAE {:.4}  MSE {:.4}", eval.report.mae, eval.report.mse);
}

fn eval_cmd(a: &EvalArgs) -> Result<()> {
    let cfg = read_config(a.config.as_deref(), a.ckpt.as_deref())?;
    let entries = dataset::load(&a.data)?;
    let samples = dataset::samples(&entries, cfg.train.sigma, cfg.train.seg_tau)?;
    let mut hashed = file_entries(&a.data, &dataset::input_files(&a.data, &entries))?;
    let preds: Vec<DensityMap> = if a.oracle {
        samples.iter().map(|s| s.gt.density4.clone()).collect()
    } else {
        let ckpt = a.ckpt.as_deref().expect("clap requires --ckpt without --oracle");
        let params = read_checkpoint(ckpt)?;
        params.check_against(&cfg.model).map_err(|e| Error::Checkpoint(e.to_string()))?;
        hashed.extend(file_entries(Path::new(""), &[ckpt.to_owned()])?);
        samples
            .iter()
            .map(|s| infer(&s.image, &params, &cfg.model).map(|i| i.density))
            .collect::<Result<_>>()?
    };
    let gts: Vec<(&DensityMap, f64)> = samples.iter().map(|s| (&s.gt.density4, s.annotation.count() as f64)).collect();
    let eval = score_maps(&preds, &gts)?;
    let names: Vec<String> = entries.iter().map(|e| e.name.clone()).collect();
    print_table(&eval, &names);
    let manifest = RunManifest {
        command: "eval".into(),
        config: serde_json::to_value(&cfg)?,
        seed: None,
        input_hash: content_hash(&hashed),
        inputs: hashed.iter().map(|(n, _)| n.clone()).collect(),
        outputs: vec![],
    };
    emit(&json!({
        "report": eval.report,
        "images": names.iter().zip(&eval.images).map(|(n, s)| json!({ "image": n, "score": s })).collect::<Vec<_>>(),
        "oracle": a.oracle,
        "manifest": manifest,
    }));
    Ok(())
}

fn infer_cmd(a: &InferArgs) -> Result<()> {
    let cfg = read_config(a.config.as_deref(), Some(&a.ckpt))?;
    let params = read_checkpoint(&a.ckpt)?;
    params.check_against(&cfg.model).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let image = Image::load_png(&a.image)?;
    let out = infer(&image, &params, &cfg.model)?;
    write_dmap(&a.out, &out.density)?;
    let hashed = file_entries(Path::new(""), &[a.image.clone(), a.ckpt.clone()])?;
    let manifest_path = PathBuf::from(format!("{}.manifest.json", a.out.display()));
    RunManifest {
        command: "infer".into(),
        config: serde_json::to_value(&cfg)?,
        seed: None,
        input_hash: content_hash(&hashed),
        inputs: hashed.iter().map(|(n, _)| n.clone()).collect(),
        outputs: vec![relative(Path::new(""), &a.out)],
    }
    .write(&manifest_path)?;
    eprintln!("{}: {:.3} people", a.image.display(), out.count);
    emit(&json!({
        "count": out.count,
        "density": a.out,
        "input_size": out.input_size,
        "mask_area": out.mask.area(),
    }));
    Ok(())
}

fn gradcheck_cmd(a: &GradcheckArgs) -> Result<bool> {
    let cfg = match &a.config {
        Some(p) => RunConfig::read(p)?,
        None => RunConfig { model: ModelConfig::tiny(), ..RunConfig::tiny() },
    };
    let report = model_grad_check(&cfg.model, &cfg.train.weights, a.side, a.seed, a.eps)?;
    let pass = report.max_rel_error < GRADCHECK_TOLERANCE;
    eprintln!(
        "max relative error {:.3e} over {} coordinates: {}",
        report.max_rel_error,
        report.coordinates,
        if pass { "ok" } else { "FAILED" }
    );
    let config = serde_json::to_value(&cfg)?;
    let manifest = RunManifest {
        command: "gradcheck".into(),
        input_hash: content_hash(&[("config".into(), cfg.to_text().into_bytes())]),
        config,
        seed: Some(a.seed),
        inputs: vec![],
        outputs: vec![],
    };
    emit(&json!({
        "max_rel_error": report.max_rel_error,
        "coordinates": report.coordinates,
        "worst": report.worst,
        "eps": a.eps,
        "pass": pass,
        "manifest": manifest,
    }));
    Ok(pass)
}

fn run(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::GenData(a) => gen_data(a).map(|_| true),
        Command::MakeGt(a) => make_gt(a).map(|_| true),
        Command::Train(a) => train_cmd(a).map(|_| true),
        Command::Eval(a) => eval_cmd(a).map(|_| true),
        Command::Infer(a) => infer_cmd(a).map(|_| true),
        Command::Gradcheck(a) => gradcheck_cmd(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(5),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
