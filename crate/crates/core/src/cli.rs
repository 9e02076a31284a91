//! Command-line interface.
//!
//! Every subcommand accepts `--config <file.json>`, a flat JSON object
//! whose keys are long flag names without the dashes (`"epochs": 30`,
//! `"loss": ["ce", "caml"]`). Flags given on the command line take
//! precedence over the file; settings that contradict each other are
//! usage errors naming where each one came from.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::parser::ValueSource;
use clap::{ArgAction, ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use crate::curves::{curve_rows, curves_csv, CamlContext, CurveMode, CurveRequest};
use crate::error::Error;
use crate::gradcheck::{check_with_step, default_tolerance, DEFAULT_STEP};
use crate::losses::{LossKind, LossSpec};
use crate::problems::random_problem;
use crate::synthdata::{
    self, subsample_train, DataFraction, ShapeFamily, SynthDataset, SynthTaskConfig,
};
use crate::trainer::csv::{curve_csv, results_csv, summary_csv};
use crate::trainer::{self, AbsentIou, Architecture, SweepCell, TrainConfig};

pub const EXIT_OK: i32 = 0;
/// A check or tolerance failed, or an output could not be written.
pub const EXIT_FAILURE: i32 = 1;
/// A loss or gradient became non-finite.
pub const EXIT_NUMERICAL: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

const CURVES_HELP: &str = "\
Output CSV columns: p,loss_kind,value,grad_norm,alpha
  p          probability of the true class at both pixels of a two-pixel
             binary batch (one pixel per class)
  loss_kind  loss name, `additive=<lambda>`, `caml-r=<r>`, or
             `caml@pbar=<p>;d=<D>` for fixed-context CAML (fig3)
  grad_norm  Euclidean norm of the logit gradient
  alpha      confidence exponent (empty for non-adaptive losses)";

const GRADCHECK_HELP: &str = "\
Prints one row per (loss, pixels, classes) with the worst relative error
over the seeds. Default tolerances: 1e-5 (ce, dice, additive, ml) and
1e-4 (caml, caml-r). Exit 0 iff every check is below its tolerance.";

const TRAIN_HELP: &str = "\
Files written to --out:
  results.csv        fraction,loss,lambda,r,repeat,class,iou,miou,seed
  summary.csv        fraction,loss,lambda,r,repeats,miou_mean,miou_std,
                     iou_<c>_mean,iou_<c>_std for each class c, status
  curve_<k>.csv      epoch,train_loss,val_loss,p_bar,dice_mean,alpha
                     (one per repeat k)
The summary is also printed to stdout. Empty fields are not applicable.";

const SWEEP_HELP: &str = "\
Files written to --out:
  results.csv   fraction,loss,lambda,r,repeat,class,iou,miou,seed
  summary.csv   fraction,loss,lambda,r,repeats,miou_mean,miou_std,
                iou_<c>_mean,iou_<c>_std for each class c, status
Rows are ordered by fraction (largest first), then loss in the order
given, then repeat. The summary is also printed to stdout.";

const GEN_DATA_HELP: &str = "\
Directory layout:
  meta.json     format version, generator config, image size, split
  features.bin  f64 array [images, height, width, 5]
  labels.bin    i32 array [images, height, width]
Both binaries start with the magic `SSEG`, a u32 version, a u32 rank and
u64 dimensions, followed by little-endian data.";

#[derive(Parser, Debug)]
#[command(
    name = "segloss",
    version,
    about = "Multiplicative segmentation losses: curves, gradient checks and training"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Emit loss and gradient-magnitude curves over the true-class probability.
    #[command(after_help = CURVES_HELP)]
    Curves(CurvesArgs),
    /// Certify analytic loss gradients against central differences.
    #[command(after_help = GRADCHECK_HELP)]
    Gradcheck(GradcheckArgs),
    /// Train one loss on a synthetic task and report test IoU.
    #[command(after_help = TRAIN_HELP)]
    Train(TrainArgs),
    /// Train every (data fraction, loss) combination.
    #[command(after_help = SWEEP_HELP)]
    Sweep(SweepArgs),
    /// Constant-exponent ablation: caml-r for each r, plus caml, at one fraction.
    #[command(after_help = SWEEP_HELP)]
    Ablate(AblateArgs),
    /// Generate a synthetic dataset and save it to a directory.
    #[command(after_help = GEN_DATA_HELP)]
    GenData(GenDataArgs),
}

#[derive(Args, Debug)]
struct ConfigArg {
    /// JSON file of flag values; command-line flags take precedence.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct LossArgs {
    /// Loss names, comma separated: ce, dice, additive[=lambda], ml, caml, caml-r[=r].
    #[arg(long, value_delimiter = ',')]
    loss: Vec<String>,
    /// Weight of the Dice term for `additive` losses given without a value.
    #[arg(long)]
    lambda: Option<f64>,
    /// Constant exponent for `caml-r` losses given without a value.
    #[arg(long)]
    r: Option<f64>,
}

#[derive(Args, Debug)]
struct CurvesArgs {
    /// fig1 (every loss) or fig3 (ML against fixed-context CAML).
    #[arg(long, default_value = "fig1")]
    mode: CurveMode,
    #[command(flatten)]
    losses: LossArgs,
    /// Grid spacing; the grid is step, 2·step, … below 1.
    #[arg(long, default_value_t = 0.01)]
    step: f64,
    /// Fixed mean true-class probabilities for fig3.
    #[arg(long, value_delimiter = ',')]
    p_bar: Vec<f64>,
    /// Fixed mean Dice values for fig3.
    #[arg(long, value_delimiter = ',')]
    dice: Vec<f64>,
    /// Output CSV file (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArg,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[command(flatten)]
    losses: LossArgs,
    /// First problem seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of consecutive seeds per shape.
    #[arg(long, default_value_t = 5)]
    num_seeds: u64,
    #[arg(long, value_delimiter = ',', default_value = "8,32,64")]
    pixels: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "2,3,5")]
    classes: Vec<usize>,
    /// Relative-error bar applied to every loss (per-kind defaults if omitted).
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_STEP)]
    step: f64,
    #[command(flatten)]
    config: ConfigArg,
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Dataset directory from `gen-data`, instead of generating one.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    image_size: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    images: Option<usize>,
    /// Target foreground fraction per image.
    #[arg(long)]
    foreground: Option<f64>,
    /// blobs, vessels or mixed.
    #[arg(long)]
    shape: Option<ShapeFamily>,
    /// Standard deviation of the intensity noise.
    #[arg(long)]
    noise: Option<f64>,
    /// Generator seed (defaults to --seed).
    #[arg(long)]
    data_seed: Option<u64>,
}

const GENERATION_KEYS: [&str; 7] = [
    "image-size",
    "classes",
    "images",
    "foreground",
    "shape",
    "noise",
    "data-seed",
];

#[derive(Args, Debug)]
struct FitArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 60)]
    epochs: usize,
    /// Training runs with different initializations.
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    /// Images per mini-batch.
    #[arg(long, default_value_t = 4)]
    batch_images: usize,
    #[arg(long, default_value_t = 1e-3)]
    learning_rate: f64,
    /// Disable random horizontal flips.
    #[arg(long)]
    no_flip: bool,
    /// Score of a class absent from prediction and labels: one or skip.
    #[arg(long, default_value = "one")]
    absent_iou: AbsentIou,
    /// linear, mlp1 or mlp1:<hidden>.
    #[arg(long, default_value = "mlp1")]
    arch: Architecture,
}

impl FitArgs {
    fn train_config(&self, loss: LossSpec) -> TrainConfig {
        TrainConfig {
            loss,
            epochs: self.epochs,
            batch_images: self.batch_images,
            learning_rate: self.learning_rate,
            seed: self.seed,
            flip_augment: !self.no_flip,
            repeats: self.repeats,
            absent_iou: self.absent_iou,
            ..TrainConfig::default()
        }
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    losses: LossArgs,
    /// Training-set fraction: 1, 1/2, 1/4 or 1/8.
    #[arg(long, default_value = "1")]
    fraction: DataFraction,
    #[command(flatten)]
    fit: FitArgs,
    #[command(flatten)]
    data: DataArgs,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArg,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    losses: LossArgs,
    #[arg(long, value_delimiter = ',', default_value = "1,1/2,1/4,1/8")]
    fractions: Vec<DataFraction>,
    #[command(flatten)]
    fit: FitArgs,
    #[command(flatten)]
    data: DataArgs,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArg,
}

#[derive(Args, Debug)]
struct AblateArgs {
    /// Constant exponents for caml-r.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
    r: Vec<f64>,
    /// The single training-set fraction to ablate at.
    #[arg(long, value_delimiter = ',', default_value = "1/8")]
    fractions: Vec<DataFraction>,
    #[command(flatten)]
    fit: FitArgs,
    #[command(flatten)]
    data: DataArgs,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArg,
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    data: DataArgs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArg,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Check(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Check(_) => EXIT_FAILURE,
            Failure::Lib(Error::InvalidInput(_)) => EXIT_USAGE,
            Failure::Lib(Error::NumericalFailure { .. } | Error::TrainingDiverged { .. }) => {
                EXIT_NUMERICAL
            }
            Failure::Lib(_) => EXIT_FAILURE,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Check(m) => f.write_str(m),
            Failure::Lib(e) => write!(f, "{e}"),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// Where each setting came from.
struct Origin {
    file: Option<PathBuf>,
    file_keys: BTreeSet<String>,
    explicit: BTreeSet<String>,
}

impl Origin {
    fn is_set(&self, key: &str) -> bool {
        self.explicit.contains(key)
    }

    fn describe(&self, key: &str) -> String {
        match &self.file {
            Some(path) if self.file_keys.contains(key) => {
                format!("`{key}` in config file {}", path.display())
            }
            _ if self.explicit.contains(key) => format!("--{key} on the command line"),
            _ => format!("the default --{key}"),
        }
    }

    fn conflict(&self, a: &str, b: &str, why: &str) -> Failure {
        Failure::Usage(format!(
            "conflicting settings: {} and {}: {why}",
            self.describe(a),
            self.describe(b)
        ))
    }
}

/// Runs the CLI on `args` (including the program name) and returns the
/// process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let (cli, origin) = match parse(argv) {
        Ok(parsed) => parsed,
        Err(ParseError::Clap(e)) => {
            let shown = e.render().ansi().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{shown}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{shown}");
                    EXIT_USAGE
                }
            };
        }
        Err(ParseError::Config(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            return EXIT_USAGE;
        }
    };
    let result = match cli.command {
        Command::Curves(a) => cmd_curves(&a, &origin, out),
        Command::Gradcheck(a) => cmd_gradcheck(&a, &origin, out),
        Command::Train(a) => cmd_train(&a, &origin, out),
        Command::Sweep(a) => cmd_sweep(&a, &origin, out, err),
        Command::Ablate(a) => cmd_ablate(&a, &origin, out, err),
        Command::GenData(a) => cmd_gen_data(&a, &origin, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(err, "error: {f}");
            f.code()
        }
    }
}

enum ParseError {
    Clap(clap::Error),
    Config(String),
}

/// Parses the command line, then appends the config file's settings that
/// the command line left unset and parses again.
fn parse(mut argv: Vec<OsString>) -> std::result::Result<(Cli, Origin), ParseError> {
    let command = Cli::command();
    let mut matches = command
        .clone()
        .try_get_matches_from(&argv)
        .map_err(ParseError::Clap)?;
    let (name, sub) = matches.subcommand().expect("a subcommand is required");
    let name = name.to_string();
    let sub_command = command
        .find_subcommand(&name)
        .expect("parsed subcommand exists");
    let file = sub.get_one::<PathBuf>("config").cloned();
    let mut file_keys = BTreeSet::new();

    if let Some(path) = &file {
        let text = fs::read_to_string(path).map_err(|e| {
            ParseError::Config(format!("cannot read config file {}: {e}", path.display()))
        })?;
        let json: serde_json::Value = serde_json::from_str(&text).map_err(|e| {
            ParseError::Config(format!(
                "config file {} is not valid JSON: {e}",
                path.display()
            ))
        })?;
        let serde_json::Value::Object(entries) = json else {
            return Err(ParseError::Config(format!(
                "config file {} must hold a JSON object",
                path.display()
            )));
        };
        for (key, value) in entries {
            let arg = sub_command
                .get_arguments()
                .find(|a| a.get_long() == Some(key.as_str()) && key != "config")
                .ok_or_else(|| {
                    ParseError::Config(format!(
                        "unknown key `{key}` in config file {} for `{name}`",
                        path.display()
                    ))
                })?;
            if sub.value_source(arg.get_id().as_str()) == Some(ValueSource::CommandLine) {
                continue;
            }
            let bad = || {
                ParseError::Config(format!(
                    "unsupported value for `{key}` in config file {}",
                    path.display()
                ))
            };
            if matches!(arg.get_action(), ArgAction::SetTrue) {
                match value {
                    serde_json::Value::Bool(true) => argv.push(format!("--{key}").into()),
                    serde_json::Value::Bool(false) => {}
                    _ => return Err(bad()),
                }
            } else {
                let text = match value {
                    serde_json::Value::Array(items) => items
                        .iter()
                        .map(|v| scalar_text(v).ok_or_else(bad))
                        .collect::<std::result::Result<Vec<_>, _>>()?
                        .join(","),
                    v => scalar_text(&v).ok_or_else(bad)?,
                };
                argv.push(format!("--{key}={text}").into());
            }
            file_keys.insert(key);
        }
        matches = command
            .clone()
            .try_get_matches_from(&argv)
            .map_err(ParseError::Clap)?;
    }

    let sub = matches.subcommand_matches(&name).expect("same subcommand");
    let explicit = explicit_keys(sub_command, sub);
    let cli = Cli::from_arg_matches(&matches).map_err(ParseError::Clap)?;
    Ok((
        cli,
        Origin {
            file,
            file_keys,
            explicit,
        },
    ))
}

fn scalar_text(v: &serde_json::Value) -> Option<String> {
    match v {
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Number(n) => Some(n.to_string()),
        serde_json::Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

fn explicit_keys(command: &clap::Command, matches: &ArgMatches) -> BTreeSet<String> {
    command
        .get_arguments()
        .filter(|a| matches.value_source(a.get_id().as_str()) == Some(ValueSource::CommandLine))
        .filter_map(|a| a.get_long().map(str::to_string))
        .collect()
}

/// Parses loss tokens and applies `--lambda` / `--r` to tokens without an
/// inline value. `default` is used when no loss was given.
fn resolve_losses(
    args: &LossArgs,
    default: &[LossSpec],
    origin: &Origin,
) -> CliResult<Vec<LossSpec>> {
    if args.loss.is_empty() {
        let specs: Vec<LossSpec> = default.to_vec();
        let has = |k: LossKind| specs.iter().any(|s| s.kind() == k);
        if args.lambda.is_some() && !has(LossKind::Additive) {
            return Err(origin.conflict("lambda", "loss", "lambda only applies to `additive`"));
        }
        if args.r.is_some() && !has(LossKind::CamlConstR) {
            return Err(origin.conflict("r", "loss", "r only applies to `caml-r`"));
        }
        return Ok(specs
            .into_iter()
            .map(|s| match s {
                LossSpec::Additive { .. } if args.lambda.is_some() => LossSpec::Additive {
                    lambda: args.lambda.unwrap(),
                },
                LossSpec::CamlConstR { .. } if args.r.is_some() => {
                    LossSpec::CamlConstR { r: args.r.unwrap() }
                }
                other => other,
            })
            .map(|s| s.validate().map(|_| s))
            .collect::<crate::Result<Vec<_>>>()?);
    }
    let mut specs = Vec::with_capacity(args.loss.len());
    let (mut used_lambda, mut used_r) = (false, false);
    for token in &args.loss {
        let spec: LossSpec = token.parse()?;
        let inline = token.contains('=');
        let spec = match spec {
            LossSpec::Additive { lambda } => match args.lambda {
                Some(l) if inline && l != lambda => {
                    return Err(origin.conflict(
                        "loss",
                        "lambda",
                        &format!("`{token}` and lambda = {l} disagree"),
                    ))
                }
                Some(l) => {
                    used_lambda = true;
                    LossSpec::Additive { lambda: l }
                }
                None => spec,
            },
            LossSpec::CamlConstR { r } => match args.r {
                Some(v) if inline && v != r => {
                    return Err(origin.conflict(
                        "loss",
                        "r",
                        &format!("`{token}` and r = {v} disagree"),
                    ))
                }
                Some(v) => {
                    used_r = true;
                    LossSpec::CamlConstR { r: v }
                }
                None => spec,
            },
            other => other,
        };
        spec.validate()?;
        specs.push(spec);
    }
    if args.lambda.is_some() && !used_lambda {
        return Err(origin.conflict("lambda", "loss", "lambda only applies to `additive`"));
    }
    if args.r.is_some() && !used_r {
        return Err(origin.conflict("r", "loss", "r only applies to `caml-r`"));
    }
    Ok(specs)
}

fn load_dataset(args: &DataArgs, seed: u64, origin: &Origin) -> CliResult<SynthDataset> {
    if let Some(dir) = &args.data {
        if let Some(key) = GENERATION_KEYS.iter().find(|k| origin.is_set(k)) {
            return Err(origin.conflict("data", key, "a loaded dataset cannot be regenerated"));
        }
        return Ok(synthdata::io::load(dir)?);
    }
    let d = SynthTaskConfig::default();
    let config = SynthTaskConfig {
        image_size: args.image_size.unwrap_or(d.image_size),
        num_classes: args.classes.unwrap_or(d.num_classes),
        num_images: args.images.unwrap_or(d.num_images),
        foreground_fraction_target: args.foreground.unwrap_or(d.foreground_fraction_target),
        shape_family: args.shape.unwrap_or(d.shape_family),
        noise_sigma: args.noise.unwrap_or(d.noise_sigma),
        seed: args.data_seed.unwrap_or(seed),
    };
    Ok(synthdata::generate(&config)?)
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| Failure::Lib(Error::io(path, e)))
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| Failure::Lib(Error::io(dir, e)))
}

fn print(out: &mut dyn Write, text: &str) -> CliResult<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| Failure::Lib(Error::io(Path::new("<stdout>"), e)))
}

fn curve_grid(step: f64) -> CliResult<Vec<f64>> {
    if !(step > 0.0 && step < 0.5) {
        return Err(Failure::Usage(format!(
            "--step must lie in (0, 0.5), got {step}"
        )));
    }
    let n = (1.0 / step).round();
    if ((n * step) - 1.0).abs() < 1e-9 {
        let n = n as usize;
        return Ok((1..n).map(|k| k as f64 / n as f64).collect());
    }
    Ok((1..)
        .map(|k| k as f64 * step)
        .take_while(|&p| p < 1.0)
        .collect())
}

fn cmd_curves(a: &CurvesArgs, origin: &Origin, out: &mut dyn Write) -> CliResult<()> {
    let mut req = CurveRequest::new(a.mode);
    req.grid = curve_grid(a.step)?;
    match a.mode {
        CurveMode::LossAndGrad => {
            for key in ["p-bar", "dice"] {
                if origin.is_set(key) {
                    return Err(origin.conflict(key, "mode", "fixed contexts only apply to fig3"));
                }
            }
            req.losses = resolve_losses(&a.losses, &LossSpec::family(), origin)?;
        }
        CurveMode::CamlVsMl => {
            for key in ["loss", "lambda", "r"] {
                if origin.is_set(key) {
                    return Err(origin.conflict(key, "mode", "fig3 always compares ml and caml"));
                }
            }
            if !a.p_bar.is_empty() || !a.dice.is_empty() {
                let levels = [0.2, 0.5, 0.8];
                let p_bars = if a.p_bar.is_empty() {
                    &levels[..]
                } else {
                    &a.p_bar[..]
                };
                let dices = if a.dice.is_empty() {
                    &levels[..]
                } else {
                    &a.dice[..]
                };
                req.contexts = p_bars
                    .iter()
                    .flat_map(|&p_bar| dices.iter().map(move |&dice| CamlContext { p_bar, dice }))
                    .collect();
            }
        }
    }
    let csv = curves_csv(&curve_rows(&req)?);
    match &a.out {
        Some(path) => write_file(path, &csv),
        None => print(out, &csv),
    }
}

fn cmd_gradcheck(a: &GradcheckArgs, origin: &Origin, out: &mut dyn Write) -> CliResult<()> {
    let specs = resolve_losses(&a.losses, &LossSpec::family(), origin)?;
    if a.num_seeds == 0 || a.pixels.is_empty() || a.classes.is_empty() {
        return Err(Failure::Usage(
            "gradcheck needs at least one seed, pixel count and class count".into(),
        ));
    }
    if a.pixels.contains(&0) || a.classes.iter().any(|&c| c < 2) {
        return Err(Failure::Usage(
            "pixel counts must be positive and class counts at least 2".into(),
        ));
    }
    let mut table = format!(
        "{:<22} {:>6} {:>7} {:>5} {:>13} {:>13} {:>9}  status\n",
        "loss", "pixels", "classes", "seeds", "max_rel_error", "max_abs_error", "tolerance"
    );
    let (mut total, mut failed) = (0usize, 0usize);
    for spec in &specs {
        let tolerance = a
            .tolerance
            .unwrap_or_else(|| default_tolerance(spec.kind()));
        for &pixels in &a.pixels {
            for &classes in &a.classes {
                let (mut rel, mut abs, mut ok) = (0.0f64, 0.0f64, true);
                for k in 0..a.num_seeds {
                    let (logits, labels) = random_problem(a.seed + k, pixels, classes);
                    let report = check_with_step(spec, &logits, &labels, tolerance, a.step)?;
                    rel = rel.max(report.max_rel_error);
                    abs = abs.max(report.max_abs_error);
                    ok &= report.passed();
                    total += 1;
                    failed += usize::from(!report.passed());
                }
                table.push_str(&format!(
                    "{:<22} {:>6} {:>7} {:>5} {:>13.3e} {:>13.3e} {:>9.1e}  {}\n",
                    spec.to_string(),
                    pixels,
                    classes,
                    a.num_seeds,
                    rel,
                    abs,
                    tolerance,
                    if ok { "pass" } else { "FAIL" }
                ));
            }
        }
    }
    table.push_str(&format!("{} of {total} checks passed\n", total - failed));
    print(out, &table)?;
    if failed > 0 {
        return Err(Failure::Check(format!(
            "{failed} of {total} gradient checks exceeded tolerance"
        )));
    }
    Ok(())
}

fn cmd_train(a: &TrainArgs, origin: &Origin, out: &mut dyn Write) -> CliResult<()> {
    let specs = resolve_losses(&a.losses, &[LossSpec::Ce], origin)?;
    let [loss] = specs[..] else {
        return Err(Failure::Usage(
            "train takes exactly one --loss; use `sweep` for several".into(),
        ));
    };
    let dataset = load_dataset(&a.data, a.fit.seed, origin)?;
    let data = subsample_train(&dataset, a.fraction, a.fit.seed)?;
    let cfg = a.fit.train_config(loss);
    let (_, report) = trainer::train(&data, a.fit.arch, &cfg)?;
    let classes = dataset.num_classes();
    let runs = report.runs.clone();
    let cells = [SweepCell {
        fraction: a.fraction,
        loss,
        seed: cfg.seed,
        outcome: Ok(report),
    }];
    let summary = summary_csv(&cells, classes);
    if let Some(dir) = &a.out {
        ensure_dir(dir)?;
        write_file(&dir.join("results.csv"), &results_csv(&cells))?;
        write_file(&dir.join("summary.csv"), &summary)?;
        for run in &runs {
            write_file(
                &dir.join(format!("curve_{}.csv", run.repeat)),
                &curve_csv(run),
            )?;
        }
    }
    print(out, &summary)
}

fn finish_sweep(
    cells: &[SweepCell],
    classes: usize,
    dir: Option<&PathBuf>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> CliResult<()> {
    let summary = summary_csv(cells, classes);
    if let Some(dir) = dir {
        ensure_dir(dir)?;
        write_file(&dir.join("results.csv"), &results_csv(cells))?;
        write_file(&dir.join("summary.csv"), &summary)?;
    }
    for cell in cells {
        if let Err(msg) = &cell.outcome {
            let _ = writeln!(
                err,
                "warning: cell {} / {} failed: {msg}",
                cell.fraction, cell.loss
            );
        }
    }
    print(out, &summary)
}

fn cmd_sweep(
    a: &SweepArgs,
    origin: &Origin,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> CliResult<()> {
    let specs = resolve_losses(&a.losses, &LossSpec::family(), origin)?;
    let dataset = load_dataset(&a.data, a.fit.seed, origin)?;
    let cfg = a.fit.train_config(specs[0]);
    let cells = trainer::sweep(&dataset, &a.fractions, &specs, a.fit.arch, &cfg)?;
    finish_sweep(&cells, dataset.num_classes(), a.out.as_ref(), out, err)
}

fn cmd_ablate(
    a: &AblateArgs,
    origin: &Origin,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> CliResult<()> {
    if a.fractions.len() != 1 {
        return Err(Failure::Usage(format!(
            "ablate runs at a single fraction; {} given by {}",
            a.fractions.len(),
            origin.describe("fractions")
        )));
    }
    if a.r.is_empty() {
        return Err(Failure::Usage("ablate needs at least one r".into()));
    }
    let mut specs: Vec<LossSpec> = a.r.iter().map(|&r| LossSpec::CamlConstR { r }).collect();
    specs.push(LossSpec::Caml);
    let dataset = load_dataset(&a.data, a.fit.seed, origin)?;
    let cfg = a.fit.train_config(LossSpec::Caml);
    let cells = trainer::sweep(&dataset, &a.fractions, &specs, a.fit.arch, &cfg)?;
    finish_sweep(&cells, dataset.num_classes(), a.out.as_ref(), out, err)
}

fn cmd_gen_data(a: &GenDataArgs, origin: &Origin, out: &mut dyn Write) -> CliResult<()> {
    if a.data.data.is_some() {
        return Err(Failure::Usage(format!(
            "gen-data writes a new dataset; remove {}",
            origin.describe("data")
        )));
    }
    let dataset = load_dataset(&a.data, a.seed, origin)?;
    synthdata::io::save(&dataset, &a.out)?;
    print(
        out,
        &format!(
            "wrote {} images of {}x{} to {}\n",
            dataset.num_images(),
            dataset.height,
            dataset.width,
            a.out.display()
        ),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let argv = std::iter::once("segloss").chain(args.iter().copied());
        let code = run(argv, &mut out, &mut err);
        (
            code,
            String::from_utf8(out).unwrap(),
            String::from_utf8(err).unwrap(),
        )
    }

    #[test]
    fn help_and_version_exit_zero() {
        assert_eq!(run_args(&["--help"]).0, EXIT_OK);
        assert_eq!(run_args(&["--version"]).0, EXIT_OK);
        let (code, out, _) = run_args(&["train", "--help"]);
        assert_eq!(code, EXIT_OK);
        assert!(out.contains("epoch,train_loss,val_loss,p_bar,dice_mean,alpha"));
    }

    #[test]
    fn unknown_flag_or_subcommand_is_usage_error() {
        assert_eq!(run_args(&["frobnicate"]).0, EXIT_USAGE);
        assert_eq!(run_args(&["curves", "--bogus"]).0, EXIT_USAGE);
        assert_eq!(run_args(&[]).0, EXIT_USAGE);
    }

    #[test]
    fn unknown_loss_is_usage_error() {
        let (code, _, err) = run_args(&["gradcheck", "--loss", "focal"]);
        assert_eq!(code, EXIT_USAGE);
        assert!(err.contains("focal"));
    }

    #[test]
    fn zero_tolerance_fails_the_check() {
        let (code, out, _) = run_args(&[
            "gradcheck",
            "--loss",
            "ce",
            "--pixels",
            "8",
            "--classes",
            "2",
            "--tolerance",
            "0",
        ]);
        assert_eq!(code, EXIT_FAILURE);
        assert!(out.contains("FAIL"));
    }

    #[test]
    fn small_gradcheck_passes() {
        let (code, out, _) = run_args(&["gradcheck", "--pixels", "8", "--classes", "3"]);
        assert_eq!(code, EXIT_OK, "{out}");
        assert!(out.contains("30 of 30 checks passed"));
    }

    #[test]
    fn lambda_without_additive_conflicts() {
        let (code, _, err) = run_args(&["curves", "--loss", "ce,ml", "--lambda", "0.3"]);
        assert_eq!(code, EXIT_USAGE);
        assert!(err.contains("--lambda on the command line"), "{err}");
        assert!(err.contains("--loss on the command line"), "{err}");
    }

    #[test]
    fn inline_and_flag_parameters_must_agree() {
        assert_eq!(
            run_args(&["curves", "--loss", "additive=0.3", "--lambda", "0.3"]).0,
            EXIT_OK
        );
        assert_eq!(
            run_args(&["curves", "--loss", "additive=0.3", "--lambda", "0.4"]).0,
            EXIT_USAGE
        );
    }

    #[test]
    fn curves_to_stdout() {
        let (code, out, _) = run_args(&["curves", "--loss", "ce,ml"]);
        assert_eq!(code, EXIT_OK);
        assert_eq!(out.lines().count(), 1 + 99 * 2);
        let (code, out, _) = run_args(&[
            "curves", "--mode", "fig3", "--p-bar", "0.5", "--dice", "0.1,0.9",
        ]);
        assert_eq!(code, EXIT_OK);
        assert_eq!(out.lines().count(), 1 + 99 * 3);
    }

    #[test]
    fn config_file_fills_unset_flags_and_flags_win() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"loss": ["ce", "dice"], "step": 0.25}"#).unwrap();
        let p = path.to_str().unwrap();
        let (code, out, _) = run_args(&["curves", "--config", p]);
        assert_eq!(code, EXIT_OK);
        assert_eq!(out.lines().count(), 1 + 3 * 2);
        let (code, out, _) = run_args(&["curves", "--config", p, "--loss", "ml"]);
        assert_eq!(code, EXIT_OK);
        assert_eq!(out.lines().count(), 1 + 3);
    }

    #[test]
    fn config_conflict_names_both_sources() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"loss": "ce"}"#).unwrap();
        let (code, _, err) = run_args(&[
            "curves",
            "--config",
            path.to_str().unwrap(),
            "--lambda",
            "0.2",
        ]);
        assert_eq!(code, EXIT_USAGE);
        assert!(err.contains("--lambda on the command line"), "{err}");
        assert!(err.contains("`loss` in config file"), "{err}");
    }

    #[test]
    fn config_unknown_key_or_bad_file_is_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"epochz": 3}"#).unwrap();
        assert_eq!(
            run_args(&["curves", "--config", path.to_str().unwrap()]).0,
            EXIT_USAGE
        );
        fs::write(&path, "[1, 2]").unwrap();
        assert_eq!(
            run_args(&["curves", "--config", path.to_str().unwrap()]).0,
            EXIT_USAGE
        );
        assert_eq!(
            run_args(&["curves", "--config", "/nonexistent/c.json"]).0,
            EXIT_USAGE
        );
    }

    #[test]
    fn unwritable_output_is_failure() {
        let (code, _, _) = run_args(&["curves", "--loss", "ce", "--out", "/nonexistent/dir/x.csv"]);
        assert_eq!(code, EXIT_FAILURE);
    }

    #[test]
    fn grid_spacing() {
        assert_eq!(curve_grid(0.01).unwrap().len(), 99);
        assert_eq!(curve_grid(0.01).unwrap()[2], 0.03);
        assert_eq!(curve_grid(0.3).unwrap(), vec![0.3, 0.6, 0.8999999999999999]);
        assert!(curve_grid(0.0).is_err());
    }
}
