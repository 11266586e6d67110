use std::fs::{self, File};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mmforge::attention::{differential_map, rank_features, ObservationEncoderPath, DEFAULT_STEPS};
use mmforge::automaton::{
    build_from_traces, deserialize, minimize, read_traces, run_policy, serialize, stats, write_traces,
    DirectCode, Fallback, MooreMachine, ObservationEncoder,
};
use mmforge::envs::{seed_range, Environment};
use mmforge::neural::read_checkpoint;
use mmforge::pipeline::{env_and_expert, run_to_disk, PipelineConfig};
use mmforge::policy::{collect_transitions, evaluate_net, insert_qbns, DiscretizedRpn, Rpn};
use mmforge::pruner::{classify, prune, PruneConfig, Tolerance};
use mmforge::qbn::Qbn;
use mmforge::reducer::{machine_to_dot, reduce_all, view_to_dot, Annotations};
use mmforge::seed::SEED_ENV;

/// Extract, reduce, prune and explain finite-state machines of recurrent
/// control policies.
#[derive(Parser)]
#[command(name = "mmforge", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage from cloning to pruning and write all artifacts.
    Pipeline(PipelineArgs),
    /// Record ternary transition traces of a discretized policy.
    Trace(TraceArgs),
    /// Build a machine from a trace file.
    Extract(ExtractArgs),
    /// Compute the interpretable reduced view of a machine.
    Reduce(ReduceArgs),
    /// Minimize a machine.
    Minimize(MinimizeArgs),
    /// Prune decision-point branches that do not affect return.
    Prune(PruneArgs),
    /// Differential attention between two observations.
    Attend(AttendArgs),
    /// Evaluate a machine or a policy on an environment.
    Eval(EvalArgs),
    /// Write a machine, or its reduced view, as Graphviz DOT.
    ExportDot(ExportDotArgs),
    /// Print structural statistics of a machine.
    Stats(StatsArgs),
}

#[derive(Args)]
struct PipelineArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    env: Option<String>,
    /// Master seed; falls back to the environment variable, then the config.
    #[arg(long, env = SEED_ENV)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Extra overrides, `key=value`; applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

/// Where the policy and its quantizers are stored.
#[derive(Args)]
struct NetArgs {
    #[arg(long)]
    policy: Option<PathBuf>,
    #[arg(long)]
    qbn_h: Option<PathBuf>,
    #[arg(long)]
    qbn_o: Option<PathBuf>,
}

#[derive(Args)]
struct EpisodeArgs {
    /// `cartpole`, `parity`, or `synthetic:<spec file>`.
    #[arg(long)]
    env: String,
    #[arg(long, default_value_t = 20)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed_base: u64,
    /// File of whitespace-separated seeds; overrides the episode range.
    #[arg(long)]
    seeds: Option<PathBuf>,
}

#[derive(Args)]
struct TraceArgs {
    #[command(flatten)]
    net: NetArgs,
    #[arg(long)]
    env: String,
    #[arg(long, default_value_t = 50)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed_base: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    traces: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReduceArgs {
    #[arg(long)]
    machine: PathBuf,
    #[arg(long)]
    traces: PathBuf,
    /// Steps before this index are treated as warm-up.
    #[arg(long)]
    warmup_end: Option<usize>,
    /// Steps from this index on are treated as termination.
    #[arg(long)]
    termination_start: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    dot: Option<PathBuf>,
}

#[derive(Args)]
struct MinimizeArgs {
    #[arg(long)]
    machine: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PruneArgs {
    #[arg(long)]
    machine: PathBuf,
    #[command(flatten)]
    episodes: EpisodeArgs,
    /// Allowed drop as a fraction of the baseline return.
    #[arg(long, default_value_t = 0.01)]
    tolerance: f64,
    /// Minimum allowed drop in absolute return units.
    #[arg(long, default_value_t = 0.5)]
    tolerance_floor: f64,
    #[arg(long, default_value_t = 3)]
    max_passes: usize,
    #[command(flatten)]
    net: NetArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct AttendArgs {
    #[arg(long)]
    qbn_o: PathBuf,
    /// Policy whose feature layers map raw observations to the quantizer's
    /// input. Without it, observations are fed to the quantizer directly.
    #[arg(long)]
    policy: Option<PathBuf>,
    #[arg(long)]
    obs_a: PathBuf,
    #[arg(long)]
    obs_b: PathBuf,
    #[arg(long, default_value_t = DEFAULT_STEPS)]
    steps: usize,
    #[arg(long)]
    out: PathBuf,
    /// Also write the ranked raw features as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    machine: Option<PathBuf>,
    #[command(flatten)]
    net: NetArgs,
    #[command(flatten)]
    episodes: EpisodeArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportDotArgs {
    #[arg(long)]
    machine: PathBuf,
    /// With traces, export the reduced view instead of the raw machine.
    #[arg(long)]
    traces: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    machine: PathBuf,
    /// Pruned version of the machine, for classification.
    #[arg(long)]
    pruned: Option<PathBuf>,
}

fn read_machine(path: &Path) -> Result<MooreMachine> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    deserialize(&text).with_context(|| format!("parsing {}", path.display()))
}

fn read_ckpt(path: &Path) -> Result<mmforge::neural::Checkpoint> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_checkpoint(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

impl NetArgs {
    fn load(&self) -> Result<Option<DiscretizedRpn>> {
        let Some(p) = &self.policy else {
            if self.qbn_h.is_some() || self.qbn_o.is_some() {
                bail!("quantizers given without --policy");
            }
            return Ok(None);
        };
        let rpn = Rpn::from_checkpoint(&read_ckpt(p)?)?;
        let q = |p: &Option<PathBuf>| -> Result<Option<Qbn>> {
            p.as_deref().map(|p| Ok(Qbn::from_checkpoint(&read_ckpt(p)?)?)).transpose()
        };
        Ok(Some(insert_qbns(rpn, q(&self.qbn_h)?, q(&self.qbn_o)?)?))
    }
}

impl EpisodeArgs {
    fn seeds(&self) -> Result<Vec<u64>> {
        match &self.seeds {
            None => Ok(seed_range(self.seed_base, self.episodes)),
            Some(p) => fs::read_to_string(p)
                .with_context(|| format!("reading {}", p.display()))?
                .split_whitespace()
                .map(|s| s.parse().with_context(|| format!("bad seed `{s}`")))
                .collect(),
        }
    }

    fn env(&self) -> Result<Box<dyn Environment>> {
        Ok(env_and_expert(&self.env)?.0)
    }
}

/// Encoder binding raw observations to machine observations: the policy's
/// observation path when given, else the raw values as codes.
fn encoder(net: &Option<DiscretizedRpn>) -> Result<&dyn ObservationEncoder> {
    match net {
        Some(n) if n.q_o.is_some() => Ok(n),
        Some(_) => bail!("machine evaluation with a policy needs --qbn-o"),
        None => Ok(&DirectCode),
    }
}

fn cmd_pipeline(a: PipelineArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => PipelineConfig::parse(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?,
        None => PipelineConfig::default(),
    };
    for o in &a.overrides {
        let (k, v) = o.split_once('=').with_context(|| format!("override `{o}` is not KEY=VALUE"))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(env) = a.env {
        cfg.env = env;
    }
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = a.out_dir {
        cfg.out_dir = dir;
    }
    for p in run_to_disk(&cfg)? {
        println!("{}", p.display());
    }
    Ok(())
}

fn cmd_trace(a: TraceArgs) -> Result<()> {
    let net = a.net.load()?.context("--policy is required")?;
    let env = env_and_expert(&a.env)?.0;
    let traces = collect_transitions(&net, env.as_ref(), &seed_range(a.seed_base, a.episodes))?;
    let mut buf = Vec::new();
    write_traces(&mut buf, &traces)?;
    fs::write(&a.out, buf).with_context(|| format!("writing {}", a.out.display()))
}

fn cmd_extract(a: ExtractArgs) -> Result<()> {
    let f = File::open(&a.traces).with_context(|| format!("opening {}", a.traces.display()))?;
    let traces = read_traces(BufReader::new(f))?;
    write_text(&a.out, &serialize(&build_from_traces(&traces)?))
}

fn load_traces(path: &Path) -> Result<Vec<mmforge::automaton::Trace>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(read_traces(BufReader::new(f))?)
}

fn cmd_reduce(a: ReduceArgs) -> Result<()> {
    let mm = read_machine(&a.machine)?;
    let traces = load_traces(&a.traces)?;
    let ann = Annotations {
        warmup_end: a.warmup_end,
        termination_start: a.termination_start,
    };
    let view = reduce_all(&mm, &traces, &ann)?;
    write_text(&a.out, &serde_json::to_string_pretty(&view)?)?;
    if let Some(dot) = a.dot {
        write_text(&dot, &view_to_dot(&view))?;
    }
    Ok(())
}

fn cmd_minimize(a: MinimizeArgs) -> Result<()> {
    write_text(&a.out, &serialize(&minimize(&read_machine(&a.machine)?)))
}

fn cmd_prune(a: PruneArgs) -> Result<()> {
    let mm = read_machine(&a.machine)?;
    let env = a.episodes.env()?;
    let net = a.net.load()?;
    let cfg = PruneConfig {
        seeds: a.episodes.seeds()?,
        tolerance: Tolerance::Relative {
            fraction: a.tolerance,
            floor: a.tolerance_floor,
        },
        max_passes: a.max_passes,
    };
    let (pruned, log) = prune(&mm, env.as_ref(), encoder(&net)?, &cfg)?;
    write_text(&a.out, &serialize(&pruned))?;
    if let Some(p) = a.log {
        write_text(&p, &serde_json::to_string_pretty(&log)?)?;
    }
    println!("{:?}", classify(&mm, &pruned));
    Ok(())
}

fn read_obs(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("{} is not a JSON array of numbers", path.display()))
}

fn cmd_attend(a: AttendArgs) -> Result<()> {
    let q_o = Qbn::from_checkpoint(&read_ckpt(&a.qbn_o)?)?;
    let (o1, o2) = (read_obs(&a.obs_a)?, read_obs(&a.obs_b)?);
    let map = match &a.policy {
        Some(p) => {
            let rpn = Rpn::from_checkpoint(&read_ckpt(p)?)?;
            differential_map(&ObservationEncoderPath::new(&rpn, &q_o)?, &o1, &o2, a.steps)?
        }
        None => differential_map(&q_o, &o1, &o2, a.steps)?,
    };
    write_text(&a.out, &serde_json::to_string_pretty(&map)?)?;
    if let Some(p) = a.csv {
        let mut out = String::from("rank,feature,attribution\n");
        for (r, f) in rank_features(&map).into_iter().enumerate() {
            out.push_str(&format!("{},{},{}\n", r + 1, f, map.combined[f]));
        }
        write_text(&p, &out)?;
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let env = a.episodes.env()?;
    let seeds = a.episodes.seeds()?;
    let net = a.net.load()?;
    let report = match (&a.machine, &net) {
        (Some(m), _) => {
            let mm = read_machine(m)?;
            run_policy(&mm, env.as_ref(), &seeds, Fallback::MostFrequentBranch, encoder(&net)?)?
        }
        (None, Some(n)) => evaluate_net(n, env.as_ref(), &seeds)?,
        (None, None) => bail!("give --machine or --policy"),
    };
    let json = serde_json::to_string_pretty(&report)?;
    match a.out {
        Some(p) => write_text(&p, &json),
        None => Ok(writeln!(std::io::stdout(), "{json}")?),
    }
}

fn cmd_export_dot(a: ExportDotArgs) -> Result<()> {
    let mm = read_machine(&a.machine)?;
    let dot = match &a.traces {
        Some(t) => view_to_dot(&reduce_all(&mm, &load_traces(t)?, &Annotations::default())?),
        None => machine_to_dot(&mm),
    };
    write_text(&a.out, &dot)
}

fn cmd_stats(a: StatsArgs) -> Result<()> {
    let mm = read_machine(&a.machine)?;
    let mut v = serde_json::to_value(stats(&mm))?;
    if let Some(p) = a.pruned {
        v["class"] = serde_json::to_value(classify(&mm, &read_machine(&p)?))?;
    }
    println!("{}", serde_json::to_string_pretty(&v)?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Pipeline(a) => cmd_pipeline(a),
        Command::Trace(a) => cmd_trace(a),
        Command::Extract(a) => cmd_extract(a),
        Command::Reduce(a) => cmd_reduce(a),
        Command::Minimize(a) => cmd_minimize(a),
        Command::Prune(a) => cmd_prune(a),
        Command::Attend(a) => cmd_attend(a),
        Command::Eval(a) => cmd_eval(a),
        Command::ExportDot(a) => cmd_export_dot(a),
        Command::Stats(a) => cmd_stats(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
