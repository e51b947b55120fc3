//! Command-line front end.
//!
//! `dispatch` takes the full argv (program name first) and writes to the
//! given streams, so tests drive it without spawning a process. Exit codes:
//! 0 success, 1 a property failed or a command errored, 2 usage error.
//!
//! `--config FILE` may appear anywhere. The file holds `key = value` lines
//! (`#` starts a comment) naming flags of the chosen subcommand; they are
//! applied first so flags given on the command line win.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand};

use crate::costmodel::{sweep_to_csv, CostConfig, FlopsReport};
use crate::error::{Error, Result};
use crate::inference::{bench_prefill_decode, generate_greedy_traced};
use crate::layers::io::{load_features, load_weights, save_features, save_weights};
use crate::layers::{Mode, Model, ModelConfig};
use crate::tensor::Prng;
use crate::verify::{gradcheck_all, verify_all, GRADCHECK_EPS};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Parser, Debug)]
#[command(
    name = "compattn",
    version,
    about = "Composite text-query attention: verification, cost model, benchmark and demo decoding",
    args_override_self = true,
    after_help = "Any subcommand accepts --config FILE with `key = value` lines; command-line flags override the file."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Closed-form FLOPs of both wirings with the per-component breakdown.
    Flops(FlopsArgs),
    /// Seeded oracle and invariant suites; exits 1 if any case fails.
    Verify(VerifyArgs),
    /// Finite-difference checks of the backward passes; exits 1 on failure.
    Gradcheck(GradcheckArgs),
    /// Prefill and decode wall-clock for both wirings of one random model.
    Bench(BenchArgs),
    /// Greedy decoding through the KV cache.
    Generate(GenerateArgs),
}

#[derive(Args, Debug)]
struct FlopsArgs {
    /// Text tokens.
    #[arg(long)]
    t: u64,
    /// Visual tokens.
    #[arg(long)]
    v: u64,
    #[arg(long)]
    hidden: u64,
    #[arg(long)]
    layers: u64,
    /// Also write the CSV sweep (or the single config) here.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Vary one of t, v, hidden, layers over a list, e.g. `v=576,2880,4900`.
    #[arg(long)]
    sweep: Option<String>,
    /// Also count the matmuls of a random model of this size. Only sensible
    /// for small shapes.
    #[arg(long)]
    instrument: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    trials: usize,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = GRADCHECK_EPS)]
    eps: f64,
    /// Number of consecutive seeds to check.
    #[arg(long, default_value_t = 20)]
    seeds: usize,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long)]
    v: usize,
    #[arg(long)]
    t: usize,
    #[arg(long)]
    hidden: usize,
    #[arg(long)]
    layers: usize,
    /// Generation lengths, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "2,8,32,128")]
    gen: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    #[arg(long, default_value_t = 256)]
    vocab: usize,
    #[arg(long, default_value_t = 64)]
    feat_dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// Weight file; a random model seeded with --seed is used when absent.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Visual feature file; random features are used when absent.
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', required = true)]
    prompt_ids: Vec<usize>,
    #[arg(long)]
    max_new: usize,
    /// Overrides the mode stored in the weight file.
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random-model shape, used only without --weights.
    #[arg(long, default_value_t = 32)]
    hidden: usize,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 2)]
    heads: usize,
    #[arg(long, default_value_t = 64)]
    vocab: usize,
    #[arg(long, default_value_t = 16)]
    feat_dim: usize,
    /// Random visual token count, used only without --features.
    #[arg(long, default_value_t = 8)]
    visual: usize,
    /// Write the model actually used here.
    #[arg(long)]
    save_weights: Option<PathBuf>,
    /// Write the features actually used here.
    #[arg(long)]
    save_features: Option<PathBuf>,
    /// Also print the top logit of every step.
    #[arg(long)]
    show_logits: bool,
}

/// A rejected command line; carries the text to show on stderr.
#[derive(Debug)]
struct Usage(String);

/// Parses the config file into `--key value` tokens for `subcommand`.
fn config_args(path: &Path, subcommand: &str) -> std::result::Result<Vec<String>, Usage> {
    let text = fs::read_to_string(path).map_err(|e| Usage(format!("cannot read config {}: {e}", path.display())))?;
    let root = Cli::command();
    let Some(cmd) = root.find_subcommand(subcommand) else {
        return Err(Usage(format!("unknown subcommand '{subcommand}'")));
    };
    let mut out = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Usage(format!("{}:{}: expected `key = value`", path.display(), no + 1)));
        };
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        let Some(arg) = cmd.get_arguments().find(|a| a.get_long() == Some(key.as_str())) else {
            return Err(Usage(format!(
                "{}:{}: unknown key '{}' for {subcommand}",
                path.display(),
                no + 1,
                key
            )));
        };
        if arg.get_action().takes_values() {
            out.push(format!("--{key}"));
            out.push(value.to_string());
        } else {
            match value {
                "true" => out.push(format!("--{key}")),
                "false" => {}
                _ => {
                    return Err(Usage(format!(
                        "{}:{}: '{key}' takes true or false",
                        path.display(),
                        no + 1
                    )))
                }
            }
        }
    }
    Ok(out)
}

/// Strips `--config FILE` and splices the file's flags in right after the
/// subcommand name.
fn expand_config(argv: Vec<String>) -> std::result::Result<Vec<String>, Usage> {
    let mut rest = Vec::with_capacity(argv.len());
    let mut config = None;
    let mut it = argv.into_iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            config = Some(it.next().ok_or_else(|| Usage("--config needs a file".into()))?);
        } else if let Some(p) = a.strip_prefix("--config=") {
            config = Some(p.to_string());
        } else {
            rest.push(a);
        }
    }
    let Some(config) = config else {
        return Ok(rest);
    };
    let Some(pos) = rest.iter().skip(1).position(|a| !a.starts_with('-')).map(|p| p + 1) else {
        return Ok(rest);
    };
    let extra = config_args(Path::new(&config), &rest[pos])?;
    rest.splice(pos + 1..pos + 1, extra);
    Ok(rest)
}

/// Runs one command line. Output goes to `out`, diagnostics to `err`.
pub fn dispatch<I, S>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let argv: Vec<String> = argv.into_iter().map(Into::into).collect();
    let argv = match expand_config(argv) {
        Ok(a) => a,
        Err(Usage(msg)) => {
            let _ = writeln!(err, "error: {msg}\n\n{}", Cli::command().render_usage());
            return EXIT_USAGE;
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                EXIT_USAGE
            } else {
                let _ = write!(out, "{text}");
                EXIT_OK
            };
        }
    };
    let result = match cli.command {
        Command::Flops(a) => run_flops(a, out),
        Command::Verify(a) => run_verify(a, out),
        Command::Gradcheck(a) => run_gradcheck(a, out),
        Command::Bench(a) => run_bench(a, out),
        Command::Generate(a) => run_generate(a, out),
    };
    match result {
        Ok(code) => code,
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(err, "error: {msg}\n\n{}", Cli::command().render_usage());
            EXIT_USAGE
        }
        Err(Failure::Run(e)) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_FAILURE
        }
    }
}

enum Failure {
    /// Arguments parsed but violate a precondition.
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Run(e.into())
    }
}

type CmdResult = std::result::Result<i32, Failure>;

fn usage<T>(r: Result<T>) -> std::result::Result<T, Failure> {
    r.map_err(|e| Failure::Usage(e.to_string()))
}

fn parse_sweep(spec: &str, base: CostConfig) -> std::result::Result<Vec<CostConfig>, Failure> {
    let bad = || {
        Failure::Usage(format!(
            "--sweep expects name=a,b,c with name one of t, v, hidden, layers; got '{spec}'"
        ))
    };
    let (name, values) = spec.split_once('=').ok_or_else(bad)?;
    let values = values
        .split(',')
        .map(|v| v.trim().parse::<u64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| bad())?;
    values
        .into_iter()
        .map(|x| {
            let mut c = base;
            match name.trim() {
                "t" => c.text = x,
                "v" => c.visual = x,
                "hidden" => c.hidden = x,
                "layers" => c.layers = x,
                _ => return Err(bad()),
            }
            usage(c.validate()).map(|_| c)
        })
        .collect()
}

fn run_flops(a: FlopsArgs, out: &mut dyn Write) -> CmdResult {
    let config = usage(CostConfig::new(a.t, a.v, a.hidden, a.layers))?;
    let grid = match &a.sweep {
        Some(s) => parse_sweep(s, config)?,
        None => vec![config],
    };
    let report = if a.instrument {
        let h = usize::try_from(a.hidden).map_err(|_| Failure::Usage("hidden too large".into()))?;
        let heads = if h % 2 == 0 { 2 } else { 1 };
        let cfg = ModelConfig {
            layers: a.layers as usize,
            hidden: h,
            heads,
            vocab: 16,
            feat_dim: 4,
            mode: Mode::Composite,
        };
        let model = usage(Model::new(cfg, a.seed))?;
        FlopsReport::with_instrumentation(&model, a.v as usize, a.t as usize, a.seed)?
    } else {
        FlopsReport::analytic(config)?
    };
    write!(out, "{}", report.render())?;
    if let Some(path) = &a.csv {
        fs::write(path, sweep_to_csv(&grid)?)?;
        writeln!(out, "wrote {} rows to {}", grid.len(), path.display())?;
    } else if a.sweep.is_some() {
        write!(out, "{}", sweep_to_csv(&grid)?)?;
    }
    Ok(EXIT_OK)
}

fn run_verify(a: VerifyArgs, out: &mut dyn Write) -> CmdResult {
    if a.trials == 0 {
        return Err(Failure::Usage("--trials must be at least 1".into()));
    }
    writeln!(out, "verify seed={} trials={}", a.seed, a.trials)?;
    let report = verify_all(a.seed, a.trials);
    write!(out, "{}", report.render())?;
    Ok(if report.passed() { EXIT_OK } else { EXIT_FAILURE })
}

fn run_gradcheck(a: GradcheckArgs, out: &mut dyn Write) -> CmdResult {
    if !(a.eps > 0.0 && a.eps.is_finite()) {
        return Err(Failure::Usage(format!("--eps must be positive, got {}", a.eps)));
    }
    if a.seeds == 0 {
        return Err(Failure::Usage("--seeds must be at least 1".into()));
    }
    writeln!(out, "gradcheck seed={} seeds={} eps={:e}", a.seed, a.seeds, a.eps)?;
    let report = gradcheck_all(a.seed, a.seeds, a.eps);
    write!(out, "{}", report.render())?;
    Ok(if report.passed() { EXIT_OK } else { EXIT_FAILURE })
}

fn run_bench(a: BenchArgs, out: &mut dyn Write) -> CmdResult {
    let cfg = ModelConfig {
        layers: a.layers,
        hidden: a.hidden,
        heads: a.heads,
        vocab: a.vocab,
        feat_dim: a.feat_dim,
        mode: Mode::Baseline,
    };
    let baseline = usage(Model::new(cfg, a.seed))?;
    let composite = baseline.with_mode(Mode::Composite);
    writeln!(
        out,
        "bench seed={} V={} T={} h={} d={} heads={} repeats={}",
        a.seed, a.v, a.t, a.hidden, a.layers, a.heads, a.repeats
    )?;
    let table = usage(bench_prefill_decode(&baseline, &composite, a.v, a.t, &a.gen, a.repeats))?;
    write!(out, "{}", table.ratio_table())?;
    let csv = table.to_csv();
    match &a.csv {
        Some(path) => {
            fs::write(path, csv)?;
            writeln!(out, "wrote {}", path.display())?;
        }
        None => write!(out, "{csv}")?,
    }
    Ok(EXIT_OK)
}

fn run_generate(a: GenerateArgs, out: &mut dyn Write) -> CmdResult {
    if a.max_new == 0 {
        return Err(Failure::Usage("--max-new must be at least 1".into()));
    }
    let mut model = match &a.weights {
        Some(p) => load_weights(p)?,
        None => usage(Model::new(
            ModelConfig {
                layers: a.layers,
                hidden: a.hidden,
                heads: a.heads,
                vocab: a.vocab,
                feat_dim: a.feat_dim,
                mode: Mode::Composite,
            },
            a.seed,
        ))?,
    };
    if let Some(mode) = a.mode {
        model = model.with_mode(mode);
    }
    let features = match &a.features {
        Some(p) => load_features(p)?,
        None => Prng::new(a.seed.wrapping_add(1)).uniform_matrix(a.visual, model.config.feat_dim, -1.0, 1.0),
    };
    if features.cols() != model.config.feat_dim {
        return Err(Failure::Usage(format!(
            "features have width {}, model expects {}",
            features.cols(),
            model.config.feat_dim
        )));
    }
    if let Some(&bad) = a.prompt_ids.iter().find(|&&id| id >= model.config.vocab) {
        return Err(Failure::Usage(format!(
            "prompt id {bad} is outside the vocabulary of {}",
            model.config.vocab
        )));
    }
    if let Some(p) = &a.save_weights {
        save_weights(p, &model)?;
    }
    if let Some(p) = &a.save_features {
        save_features(p, &features)?;
    }
    let g = generate_greedy_traced(&model, &features, &a.prompt_ids, a.max_new)?;
    writeln!(
        out,
        "generate seed={} mode={} V={} prompt={}",
        a.seed,
        model.mode(),
        features.rows(),
        join(&a.prompt_ids)
    )?;
    writeln!(out, "ids: {}", join(&g.ids))?;
    if a.show_logits {
        for (step, (id, row)) in g.ids.iter().zip(&g.logits).enumerate() {
            writeln!(out, "step {step}: id={id} logit={:.12e}", row[*id])?;
        }
    }
    Ok(EXIT_OK)
}

fn join(ids: &[usize]) -> String {
    ids.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}
