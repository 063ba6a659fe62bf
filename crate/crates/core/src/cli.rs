//! Command-line front end: `synth`, `train`, `eval`, `bench` and `inspect`.
//!
//! Every command writes `<command>_config.json` next to its outputs. Passing
//! that file back through `--config` reproduces the run.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::bench::{self, BenchOptions, ScalingOptions};
use crate::data::{load_jets, save_jets, synth_generate_with, DatasetSplit, Format, SplitRole, SynthParams, DESK_FEATURES};
use crate::error::{Error, Result};
use crate::gravconv::Variant;
use crate::metrics::{MetricsReport, ScoredSet};
use crate::model::{Tagger, TaggerConfig, CHECKPOINT_FORMAT};
use crate::train::{train, write_history, AdamConfig, TrainConfig};

#[derive(Parser, Debug)]
#[command(name = "gravnorm", version, about = "GravNet / GravNetNorm jet tagging engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic two-class jet dataset split into train/val/test.
    Synth(SynthArgs),
    /// Train a tagger.
    Train(TrainArgs),
    /// Score a dataset with a checkpoint and report metrics.
    Eval(EvalArgs),
    /// Time inference or topology construction.
    Bench(BenchArgs),
    /// Summarize a checkpoint or dataset file.
    Inspect(InspectArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum VariantArg {
    Norm,
    Original,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Norm => Variant::Norm,
            VariantArg::Original => Variant::Original,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormatArg {
    Jsonl,
    Bin,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Jsonl => Format::Jsonl,
            FormatArg::Bin => Format::Bin,
        }
    }
}

#[derive(Args, Debug)]
struct ModelArgs {
    #[arg(long, value_enum, default_value = "norm")]
    variant: VariantArg,
    #[arg(long, default_value_t = 3.0)]
    g: f64,
    #[arg(long, default_value_t = 1.0)]
    radius: f64,
    #[arg(long, default_value_t = 16)]
    k: usize,
    #[arg(long, default_value_t = 3)]
    blocks: usize,
    #[arg(long, default_value_t = 4)]
    sdim: usize,
    #[arg(long, default_value_t = 0.2)]
    dropout: f64,
}

impl ModelArgs {
    fn config(&self, input_dim: usize) -> TaggerConfig {
        let mut cfg = TaggerConfig::desk(self.variant.into(), input_dim);
        let mut block = cfg.blocks[0].clone();
        block.g = self.g;
        block.r = self.radius;
        block.k = self.k;
        block.space_dim = self.sdim;
        cfg.blocks = vec![block; self.blocks];
        cfg.dropout = self.dropout;
        cfg
    }
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// total jets across the three splits
    #[arg(long, default_value_t = 3000)]
    n: usize,
    #[arg(long, default_value_t = 10)]
    n_min: usize,
    #[arg(long, default_value_t = 40)]
    n_max: usize,
    #[arg(long, value_enum, default_value = "jsonl")]
    format: FormatArg,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// directory holding train.<ext> and val.<ext>
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 10)]
    patience: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "jsonl")]
    format: FormatArg,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// defaults to the checkpoint's directory
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "lowercase")]
enum BenchMode {
    Inference,
    Scaling,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long, value_enum, default_value = "inference")]
    mode: BenchMode,
    #[command(flatten)]
    model: ModelArgs,
    /// trained checkpoint; a freshly initialized model is used otherwise
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// dataset file; synthetic jets are generated otherwise
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[arg(long, default_value_t = 5)]
    trials: usize,
    #[arg(long, default_value_t = 2)]
    warmup: usize,
    #[arg(long)]
    parallel: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// point counts for scaling mode
    #[arg(long, value_delimiter = ',', default_value = "2000,4000,8000,16000")]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 4)]
    dim: usize,
    #[arg(long, default_value_t = 16.0)]
    expected_degree: f64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct InspectArgs {
    path: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct SynthRun {
    out: PathBuf,
    format: Format,
    params: SynthParams,
    split_fractions: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TrainRun {
    data: PathBuf,
    out: PathBuf,
    format: Format,
    model: TaggerConfig,
    train: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct EvalRun {
    ckpt: PathBuf,
    data: PathBuf,
    out: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct BenchRun {
    mode: BenchMode,
    out: PathBuf,
    ckpt: Option<PathBuf>,
    data: Option<PathBuf>,
    model: TaggerConfig,
    seed: u64,
    options: BenchOptions,
    scaling: ScalingOptions,
}

/// Parses `argv` (program name first) and runs the command. Returns the
/// process exit code: 0 on success, 1 when the run fails, 2 on bad usage.
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
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Bench(a) => bench_cmd(a),
        Command::Inspect(a) => inspect(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Parameter(_) => 2,
                _ => 1,
            }
        }
    }
}

fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

fn write_config<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(dir.join(format!("{name}_config.json")), text)?;
    Ok(())
}

fn required(v: Option<PathBuf>, flag: &str) -> Result<PathBuf> {
    v.ok_or_else(|| Error::Parameter(format!("--{flag} is required")))
}

const SPLITS: [(SplitRole, &str); 3] = [(SplitRole::Train, "train"), (SplitRole::Val, "val"), (SplitRole::Test, "test")];
const SPLIT_FRACTIONS: [f64; 3] = [0.70, 0.15, 0.15];

fn synth(a: SynthArgs) -> Result<()> {
    let run: SynthRun = match &a.config {
        Some(p) => read_config(p)?,
        None => SynthRun {
            out: required(a.out, "out")?,
            format: a.format.into(),
            params: SynthParams::new(a.seed, a.n, a.n_min, a.n_max),
            split_fractions: SPLIT_FRACTIONS,
        },
    };
    fs::create_dir_all(&run.out)?;
    let all = synth_generate_with(&run.params, SplitRole::Train)?;
    let n = all.len();
    let n_train = (n as f64 * run.split_fractions[0]).round() as usize;
    let n_val = ((n as f64 * run.split_fractions[1]).round() as usize).min(n - n_train);
    let bounds = [0, n_train, n_train + n_val, n];
    for (k, (role, name)) in SPLITS.iter().enumerate() {
        let split = DatasetSplit {
            role: *role,
            jets: all.jets[bounds[k]..bounds[k + 1]].to_vec(),
        };
        save_jets(&run.out.join(format!("{name}.{}", run.format.extension())), &split, run.format)?;
    }
    write_config(&run.out, "synth", &run)?;
    println!("wrote {n} jets to {}", run.out.display());
    Ok(())
}

fn split_path(dir: &Path, name: &str, format: Format) -> PathBuf {
    dir.join(format!("{name}.{}", format.extension()))
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let run: TrainRun = match &a.config {
        Some(p) => read_config(p)?,
        None => {
            let data = required(a.data, "data")?;
            let format: Format = a.format.into();
            let input_dim = load_jets(&split_path(&data, "train", format), format, SplitRole::Train)?
                .feature_dim()
                .unwrap_or(DESK_FEATURES);
            TrainRun {
                out: required(a.out, "out")?,
                format,
                model: a.model.config(input_dim),
                train: TrainConfig {
                    epochs: a.epochs,
                    batch_size: a.batch,
                    adam: AdamConfig {
                        learning_rate: a.lr,
                        ..AdamConfig::default()
                    },
                    seed: a.seed,
                    patience: a.patience,
                    ..TrainConfig::default()
                },
                data,
            }
        }
    };
    let train_split = load_jets(&split_path(&run.data, "train", run.format), run.format, SplitRole::Train)?;
    let val_split = load_jets(&split_path(&run.data, "val", run.format), run.format, SplitRole::Val)?;
    fs::create_dir_all(&run.out)?;
    write_config(&run.out, "train", &run)?;
    let outcome = train(&train_split, &val_split, &run.model, &run.train)?;
    outcome.best.save(&run.out.join("ckpt"))?;
    write_history(&run.out.join("history.csv"), &outcome.history)?;
    println!(
        "best epoch {} of {}; checkpoint at {}",
        outcome.best_epoch,
        outcome.history.len(),
        run.out.join("ckpt").display()
    );
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let run: EvalRun = match &a.config {
        Some(p) => read_config(p)?,
        None => {
            let ckpt = required(a.ckpt, "ckpt")?;
            let out = match a.out {
                Some(o) => o,
                None => ckpt.parent().map(Path::to_path_buf).unwrap_or_default(),
            };
            EvalRun {
                data: required(a.data, "data")?,
                ckpt,
                out,
            }
        }
    };
    let tagger = Tagger::load(&run.ckpt)?;
    let split = load_jets(&run.data, Format::from_path(&run.data), SplitRole::Test)?;
    let scores = tagger.predict(&split.jets, 32, true)?;
    let labels = split.jets.iter().map(|j| j.label).collect();
    let report = MetricsReport::compute(&ScoredSet::new(scores, labels)?)?;
    let json = serde_json::to_string_pretty(&report)?;
    if !run.out.as_os_str().is_empty() {
        fs::create_dir_all(&run.out)?;
    }
    fs::write(run.out.join("metrics.json"), format!("{json}\n"))?;
    write_config(&run.out, "eval", &run)?;
    println!("{json}");
    Ok(())
}

fn bench_cmd(a: BenchArgs) -> Result<()> {
    let run: BenchRun = match &a.config {
        Some(p) => read_config(p)?,
        None => BenchRun {
            mode: a.mode,
            out: required(a.out, "out")?,
            model: a.model.config(DESK_FEATURES),
            seed: a.seed,
            options: BenchOptions {
                batch_size: a.batch,
                n_trials: a.trials,
                n_warmup: a.warmup,
                parallel: a.parallel,
            },
            scaling: ScalingOptions {
                sizes: a.sizes,
                dim: a.dim,
                r: a.model.radius,
                k: a.model.k,
                expected_degree: a.expected_degree,
                n_trials: a.trials,
                seed: a.seed,
                verify: true,
            },
            ckpt: a.ckpt,
            data: a.data,
        },
    };
    fs::create_dir_all(&run.out)?;
    write_config(&run.out, "bench", &run)?;
    match run.mode {
        BenchMode::Inference => {
            let tagger = match &run.ckpt {
                Some(p) => Tagger::load(p)?,
                None => Tagger::new(run.model.clone(), run.seed)?,
            };
            let jets = match &run.data {
                Some(p) => load_jets(p, Format::from_path(p), SplitRole::Test)?.jets,
                None => {
                    let p = SynthParams::new(run.seed, run.options.batch_size, 10, 40);
                    synth_generate_with(&p, SplitRole::Test)?.jets
                }
            };
            let outcome = bench::bench_inference(&tagger, &jets, &run.options)?;
            let json = serde_json::to_string_pretty(&outcome.report)?;
            fs::write(run.out.join("bench.json"), format!("{json}\n"))?;
            bench::write_reports_csv(fs::File::create(run.out.join("bench.csv"))?, &[outcome.report])?;
            println!("{json}");
        }
        BenchMode::Scaling => {
            let rows = bench::bench_topology_scaling(&run.scaling)?;
            bench::write_scaling_csv(&run.out.join("scaling.csv"), &rows)?;
            for r in &rows {
                println!("{}\t{:.6}\t{:.6}", r.n, r.radius_secs, r.knn_secs);
            }
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct DatasetSummary {
    path: PathBuf,
    n_jets: usize,
    n_signal: usize,
    feature_dim: Option<usize>,
    min_nodes: usize,
    max_nodes: usize,
    mean_nodes: f64,
}

#[derive(Serialize)]
struct CheckpointSummary<'a> {
    path: &'a Path,
    format: &'static str,
    seed: u64,
    param_count: usize,
    config: &'a TaggerConfig,
}

fn inspect(a: InspectArgs) -> Result<()> {
    let looks_like_ckpt = fs::read(&a.path)
        .ok()
        .and_then(|b| serde_json::from_slice::<serde_json::Value>(&b).ok())
        .is_some_and(|v| v.get("format").and_then(|f| f.as_str()) == Some(CHECKPOINT_FORMAT));
    let json = if looks_like_ckpt {
        let t = Tagger::load(&a.path)?;
        serde_json::to_string_pretty(&CheckpointSummary {
            path: &a.path,
            format: CHECKPOINT_FORMAT,
            seed: t.seed,
            param_count: t.param_count(),
            config: &t.config,
        })?
    } else {
        let split = load_jets(&a.path, Format::from_path(&a.path), SplitRole::Test)?;
        let sizes: Vec<usize> = split.jets.iter().map(|j| j.n_nodes()).collect();
        serde_json::to_string_pretty(&DatasetSummary {
            path: a.path.clone(),
            n_jets: split.len(),
            n_signal: split.n_signal(),
            feature_dim: split.feature_dim(),
            min_nodes: sizes.iter().copied().min().unwrap_or(0),
            max_nodes: sizes.iter().copied().max().unwrap_or(0),
            mean_nodes: sizes.iter().sum::<usize>() as f64 / sizes.len().max(1) as f64,
        })?
    };
    println!("{json}");
    Ok(())
}
