//! Command-line entry point.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::info;
use serde_json::{json, Value};

use crate::checks;
use crate::config::{KeyValues, RunConfig};
use crate::data::{self, Manifest, PredictionSet, SyntheticSpec};
use crate::error::{Error, Result};
use crate::eval::{self, Profile};
use crate::infer;
use crate::model::{self, ModelConfig};
use crate::numerics::checkpoint::read_checkpoint;
use crate::numerics::gradcheck::FD_TOLERANCE;
use crate::numerics::{ComputeGraph, ParamStore};
use crate::train::{self, Trainer};
use crate::xgpn;

#[derive(Parser, Debug)]
#[command(name = "vsgn", version, about = "Locate and classify actions in snippet feature sequences")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset (feature files and manifest).
    GenData {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override a spec entry, `key=value`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Train a model and write a checkpoint after every epoch.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Manifest subset to train on.
        #[arg(long, default_value = "train")]
        subset: String,
    },
    /// Predict action segments for every video of a manifest.
    Infer {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Restrict to one manifest subset.
        #[arg(long)]
        subset: Option<String>,
    },
    /// Score a predictions file against the manifest annotations.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        profile: String,
        #[arg(long)]
        out: PathBuf,
        /// Restrict ground truth and predictions to one manifest subset.
        #[arg(long)]
        subset: Option<String>,
    },
    /// Run the finite-difference gradient suite.
    Gradcheck {
        #[arg(long)]
        module: Option<String>,
    },
    /// Print the graph edges built for the first network input of a feature file.
    InspectGraph {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        features: PathBuf,
        /// Trained parameters; freshly initialised ones otherwise.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// Number of classes the checkpoint was trained with.
        #[arg(long, default_value_t = 1)]
        classes: usize,
    },
}

#[derive(Args, Debug)]
struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,
    /// Override a configuration entry, `key=value`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        require(&self.config)?;
        let mut kv = KeyValues::read(&self.config)?;
        kv.apply_overrides(&self.overrides)?;
        RunConfig::from_key_values(&kv)
    }
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::argument(format!("no such file: {}", path.display())))
    }
}

/// Exit status for an error: 2 for usage problems, 1 for runtime failures.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Argument(_) => 2,
        _ => 1,
    }
}

/// Parses `argv` (including the program name) and runs the subcommand.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::GenData { spec, out, overrides } => gen_data(&spec, &out, &overrides),
        Command::Train { config, manifest, out, subset } => train_cmd(&config.load()?, &manifest, &out, &subset),
        Command::Infer { config, manifest, ckpt, out, subset } => infer_cmd(&config.load()?, &manifest, &ckpt, &out, subset.as_deref()),
        Command::Eval { manifest, predictions, profile, out, subset } => {
            eval_cmd(&manifest, &predictions, profile.parse()?, &out, subset.as_deref())
        }
        Command::Gradcheck { module } => gradcheck(module.as_deref()),
        Command::InspectGraph { config, features, ckpt, classes } => inspect_graph(&config.load()?, &features, ckpt.as_deref(), classes),
    }
}

fn gen_data(spec: &Path, out: &Path, overrides: &[String]) -> Result<i32> {
    require(spec)?;
    let mut kv = KeyValues::read(spec)?;
    kv.apply_overrides(overrides)?;
    let spec = SyntheticSpec::from_key_values(&kv)?;
    let ds = data::generate_synthetic(&spec)?;
    let manifest = ds.write(out)?;
    println!("wrote {} videos to {}", ds.videos.len(), manifest.display());
    Ok(0)
}

fn load_manifest(path: &Path) -> Result<Manifest> {
    require(path)?;
    Manifest::read(path)
}

fn resolve_model(run: &RunConfig, manifest: &Manifest, videos: &[data::LoadedVideo]) -> Result<ModelConfig> {
    let channels = videos.first().map_or(run.in_channels, |v| v.features.cols());
    let model = run.model_config(channels, manifest.classes.len())?;
    if model.num_classes == 0 || model.in_channels == 0 {
        return Err(Error::config("cannot determine class or channel count from an empty dataset"));
    }
    Ok(model)
}

/// Effective configuration with the resolved model dimensions.
fn effective(run: &RunConfig, model: &ModelConfig) -> RunConfig {
    let mut e = run.clone();
    e.in_channels = model.in_channels;
    e.num_classes = model.num_classes;
    if e.anchor_base.is_empty() {
        e.anchor_base = model.anchor_base.to_vec();
    }
    e
}

fn train_cmd(run: &RunConfig, manifest: &Path, out: &Path, subset: &str) -> Result<i32> {
    let manifest = load_manifest(manifest)?;
    let videos = manifest.load_videos(Some(subset))?;
    if videos.is_empty() {
        return Err(Error::argument(format!("manifest has no videos in subset {subset:?}")));
    }
    let model = resolve_model(run, &manifest, &videos)?;
    let run = effective(run, &model);
    let samples = train::build_samples(&run, &videos)?;
    info!("{} videos, {} network inputs, {} parameters", videos.len(), samples.len(), model::param_shapes(&model).iter().map(|(_, s)| s.iter().product::<usize>()).sum::<usize>());
    let start = Instant::now();
    let mut trainer = Trainer::new(run, model)?;
    for s in trainer.fit(&samples, Some(out))? {
        println!("epoch {} steps {} loss {:.6} (loc {:.6} cls {:.6} adj {:.6} scr {:.6})", s.epoch, s.steps, s.mean.total, s.mean.loc, s.mean.cls, s.mean.adj, s.mean.scr);
    }
    println!("trained in {:.1}s, checkpoint {}", start.elapsed().as_secs_f64(), out.display());
    Ok(0)
}

fn load_params(model: &ModelConfig, ckpt: &Path) -> Result<ParamStore> {
    require(ckpt)?;
    let params = read_checkpoint(ckpt)?;
    model::check_params(model, &params)?;
    Ok(params)
}

fn infer_cmd(run: &RunConfig, manifest: &Path, ckpt: &Path, out: &Path, subset: Option<&str>) -> Result<i32> {
    let manifest = load_manifest(manifest)?;
    let videos = manifest.load_videos(subset)?;
    let model = resolve_model(run, &manifest, &videos)?;
    let params = load_params(&model, ckpt)?;
    let run = effective(run, &model);
    let (set, _) = infer::predict_videos(&run, &model, &params, &videos, &manifest.classes)?;
    set.write(out, Some(serde_json::to_value(&run)?))?;
    println!("wrote {} detections for {} videos to {}", set.detections().len(), set.results.len(), out.display());
    Ok(0)
}

fn eval_cmd(manifest: &Path, predictions: &Path, profile: Profile, out: &Path, subset: Option<&str>) -> Result<i32> {
    let manifest = load_manifest(manifest)?;
    require(predictions)?;
    let text = std::fs::read_to_string(predictions)?;
    let value: Value = serde_json::from_str(&text)?;
    let set = PredictionSet::from_json(&value)?;
    for id in set.results.keys() {
        if !manifest.videos.contains_key(id) {
            return Err(Error::schema(format!("$.results.{id}"), "video is not in the manifest"));
        }
    }
    let keep: Vec<&String> = manifest.select(subset).map(|(id, _)| id).collect();
    let dets: Vec<eval::Detection> = set.detections().into_iter().filter(|d| keep.contains(&&d.video)).collect();
    let gts = manifest.ground_truths(subset);
    let report = eval::evaluate(&dets, &gts, profile);
    print!("{}", report.to_text());
    let mut doc = json!({ "report": report });
    if let Some(c) = value.get("config") {
        doc["config"] = c.clone();
    }
    std::fs::write(out, serde_json::to_string_pretty(&doc)?)?;
    Ok(0)
}

fn gradcheck(module: Option<&str>) -> Result<i32> {
    if let Some(m) = module {
        if !checks::modules().contains(&m) {
            return Err(Error::argument(format!("unknown module {m:?}; registered: {}", checks::modules().join(", "))));
        }
    }
    let mut failed = 0;
    for c in checks::registry().into_iter().filter(|c| module.map_or(true, |m| c.module == m)) {
        let r = (c.run)()?;
        let ok = r.passed(FD_TOLERANCE);
        failed += usize::from(!ok);
        println!(
            "{} {:10} {:26} checked {:6} skipped {:4} max_rel {:.3e}",
            if ok { "PASS" } else { "FAIL" },
            c.module,
            c.name,
            r.checked,
            r.skipped,
            r.max_rel_error
        );
    }
    Ok(if failed == 0 { 0 } else { 1 })
}

fn inspect_graph(run: &RunConfig, features: &Path, ckpt: Option<&Path>, classes: usize) -> Result<i32> {
    require(features)?;
    let file = data::read_features(features)?;
    let model = run.model_config(file.features.cols(), classes)?;
    let params = match ckpt {
        Some(p) => load_params(&model, p)?,
        None => model::init_params(&model, run.seed)?,
    };
    let (input, layout) = infer::inference_inputs(run, &file.features)?
        .into_iter()
        .next()
        .ok_or_else(|| Error::argument("feature file yields no network input"))?;
    let mut g = ComputeGraph::new();
    let p = params.bind(&mut g);
    let x = g.leaf(input);
    let pyramid = xgpn::forward(&mut g, &p, &model, x, &layout)?;
    println!("# input {}", if layout.is_stitched() { "stitched" } else { "unpartitioned" });
    for (l, edges) in pyramid.edges.iter().enumerate() {
        match edges {
            Some(e) => {
                println!("# level {} nodes {} edges {}", l + 1, e.num_nodes(), e.num_edges());
                print!("{}", e.to_text());
            }
            None => println!("# level {} (graph branch disabled)", l + 1),
        }
    }
    Ok(0)
}
