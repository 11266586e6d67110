//! End-to-end extraction: clone a policy, quantize it, extract and analyse
//! its machine, and write every artifact plus one results-table row.
//!
//! Configuration is a flat `key = value` file; [`PipelineConfig::set`]
//! applies the same keys as overrides. Every stage draws its randomness from
//! the master seed through a fixed label, so a configuration always produces
//! the same bytes.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use crate::automaton::{
    build_from_traces, minimize, run_policy, serialize, stats, step, write_traces, DirectCode, Fallback,
    MachineStats, MooreMachine, ObservationEncoder, StateId, Trace,
};
use crate::envs::{
    env_by_name, seed_range, CartPoleExpert, EnvError, Environment, Policy, SyntheticEnv, SyntheticSpec,
};
use crate::neural::write_checkpoint;
use crate::policy::{
    clone_train, collect_continuous, collect_transitions, evaluate_net, fine_tune, insert_qbns, CloneConfig,
    CloneReport, DiscretizedRpn, FineTuneConfig, FineTuneReport, ImitationConfig,
};
use crate::pruner::{classify, prune, PolicyClass, PruneConfig, PruneLog, Tolerance};
use crate::qbn::{train_qbn, Qbn, QbnKind, QbnTrainConfig};
use crate::reducer::{machine_to_dot, reduce_all, view_to_dot, Annotations};
use crate::{seed, Error, Result};

pub const CSV_HEADER: &str = "env,Nh,No,orig_dp,orig_states,orig_obs,orig_perf,pruned_dp,pruned_states,pruned_obs,pruned_perf,min_dp,min_states,min_obs,min_perf";

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// `cartpole`, `parity`, or `synthetic:<spec path>`.
    pub env: String,
    pub seed: u64,
    pub nh: usize,
    pub no: usize,
    pub hidden: usize,
    pub clone_expert_episodes: usize,
    pub clone_epochs: usize,
    pub clone_dagger_rounds: usize,
    pub clone_dagger_episodes: usize,
    pub clone_dagger_epochs: usize,
    pub clone_lr: f64,
    pub qbn_episodes: usize,
    pub qbn_epochs: usize,
    pub qbn_lr: f64,
    pub qbn_batch: usize,
    pub finetune: bool,
    pub finetune_rounds: usize,
    pub finetune_episodes: usize,
    pub finetune_lr: f64,
    pub trace_episodes: usize,
    pub eval_episodes: usize,
    pub prune_tolerance: f64,
    pub prune_floor: f64,
    pub prune_max_passes: usize,
    pub out_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            env: String::new(),
            seed: 0,
            nh: 4,
            no: 4,
            hidden: crate::policy::DEFAULT_HIDDEN,
            clone_expert_episodes: 20,
            clone_epochs: 15,
            clone_dagger_rounds: 2,
            clone_dagger_episodes: 10,
            clone_dagger_epochs: 5,
            clone_lr: 3e-3,
            qbn_episodes: 20,
            qbn_epochs: 200,
            qbn_lr: 1e-4,
            qbn_batch: 32,
            finetune: true,
            finetune_rounds: 5,
            finetune_episodes: 10,
            finetune_lr: 1e-3,
            trace_episodes: 50,
            eval_episodes: 20,
            prune_tolerance: 0.01,
            prune_floor: 0.5,
            prune_max_passes: 3,
            out_dir: PathBuf::from("mmforge-out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("bad value for `{key}`: `{value}`")]
    BadValue { key: String, value: String },
    #[error("{0}")]
    Invalid(String),
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
    })
}

impl PipelineConfig {
    /// Parses `key = value` lines on top of the defaults. Blank lines and
    /// `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "env" => self.env = value.to_string(),
            "seed" => self.seed = parse(key, value)?,
            "nh" => self.nh = parse(key, value)?,
            "no" => self.no = parse(key, value)?,
            "hidden" => self.hidden = parse(key, value)?,
            "clone_expert_episodes" => self.clone_expert_episodes = parse(key, value)?,
            "clone_epochs" => self.clone_epochs = parse(key, value)?,
            "clone_dagger_rounds" => self.clone_dagger_rounds = parse(key, value)?,
            "clone_dagger_episodes" => self.clone_dagger_episodes = parse(key, value)?,
            "clone_dagger_epochs" => self.clone_dagger_epochs = parse(key, value)?,
            "clone_lr" => self.clone_lr = parse(key, value)?,
            "qbn_episodes" => self.qbn_episodes = parse(key, value)?,
            "qbn_epochs" => self.qbn_epochs = parse(key, value)?,
            "qbn_lr" => self.qbn_lr = parse(key, value)?,
            "qbn_batch" => self.qbn_batch = parse(key, value)?,
            "finetune" => self.finetune = parse(key, value)?,
            "finetune_rounds" => self.finetune_rounds = parse(key, value)?,
            "finetune_episodes" => self.finetune_episodes = parse(key, value)?,
            "finetune_lr" => self.finetune_lr = parse(key, value)?,
            "trace_episodes" => self.trace_episodes = parse(key, value)?,
            "eval_episodes" => self.eval_episodes = parse(key, value)?,
            "prune_tolerance" => self.prune_tolerance = parse(key, value)?,
            "prune_floor" => self.prune_floor = parse(key, value)?,
            "prune_max_passes" => self.prune_max_passes = parse(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.env.is_empty() {
            return invalid("no environment given");
        }
        if self.nh == 0 || self.no == 0 || self.hidden == 0 {
            return invalid("sizes must be at least 1");
        }
        if self.clone_expert_episodes == 0 || self.qbn_episodes == 0 {
            return invalid("episode counts must be at least 1");
        }
        if self.trace_episodes == 0 || self.eval_episodes == 0 {
            return invalid("episode counts must be at least 1");
        }
        if self.prune_tolerance < 0.0 || self.prune_floor < 0.0 {
            return invalid("tolerance must be nonnegative");
        }
        Ok(())
    }

    fn stage_seeds(&self, label: &str, count: usize) -> Vec<u64> {
        seed_range(u64::from(seed::derive(self.seed, label) as u32), count)
    }

    pub fn eval_seeds(&self) -> Vec<u64> {
        self.stage_seeds("eval", self.eval_episodes)
    }

    pub fn tolerance(&self) -> Tolerance {
        Tolerance::Relative {
            fraction: self.prune_tolerance,
            floor: self.prune_floor,
        }
    }
}

/// A machine driven by ternary observations used directly as a policy.
#[derive(Debug, Clone)]
pub struct MachineExpert {
    mm: MooreMachine,
    state: StateId,
}

impl MachineExpert {
    pub fn new(mm: MooreMachine) -> Self {
        Self {
            state: mm.start(),
            mm,
        }
    }
}

impl Policy for MachineExpert {
    fn reset(&mut self) {
        self.state = self.mm.start();
    }

    fn act(&mut self, obs: &[f64]) -> Result<usize> {
        let code = DirectCode.encode(obs)?;
        let o = self.mm.bind_code(&code).ok_or_else(|| {
            crate::automaton::AutomatonError::Unbindable(format!("observation {code}"))
        })?;
        let (next, action) = step(&self.mm, self.state, o, Fallback::MostFrequentBranch)?;
        self.state = next;
        Ok(action)
    }
}

/// An environment and a scripted expert for it.
pub fn env_and_expert(name: &str) -> Result<(Box<dyn Environment>, Box<dyn Policy>)> {
    if let Some(path) = name.strip_prefix("synthetic:") {
        let text = fs::read_to_string(path)?;
        let spec = SyntheticSpec::parse(&text)?;
        let expert = MachineExpert::new(spec.machine.clone());
        return Ok((Box::new(SyntheticEnv::new(spec)?), Box::new(expert)));
    }
    let env = env_by_name(name)?;
    let expert: Box<dyn Policy> = match name {
        "cartpole" => Box::new(CartPoleExpert),
        "parity" => Box::new(MachineExpert::new(crate::envs::parity_oracle_machine())),
        other => return Err(EnvError::UnknownEnv(other.to_string()).into()),
    };
    Ok((env, expert))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableRow {
    pub env: String,
    pub nh: usize,
    pub no: usize,
    pub original: MachineStats,
    pub pruned: MachineStats,
    pub minimized: MachineStats,
}

fn perf(s: &MachineStats) -> String {
    s.mean_return.map_or_else(String::new, |r| format!("{r}"))
}

impl TableRow {
    pub fn csv_line(&self) -> String {
        let mut cells = vec![self.env.clone(), self.nh.to_string(), self.no.to_string()];
        for s in [&self.original, &self.pruned, &self.minimized] {
            cells.extend([
                s.decision_points.to_string(),
                s.states.to_string(),
                s.observations.to_string(),
                perf(s),
            ]);
        }
        cells.join(",")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QbnSummary {
    pub train_history: Vec<f64>,
    pub best_epoch: usize,
    pub heldout_initial: f64,
    pub heldout_final: f64,
    pub distinct_codes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineReport {
    pub clone: CloneReport,
    pub clone_return: f64,
    pub qbn_h: QbnSummary,
    pub qbn_o: QbnSummary,
    pub discretized_return: f64,
    pub fine_tune: Option<FineTuneReport>,
    pub class: PolicyClass,
    pub row: TableRow,
}

/// Everything the pipeline produced, in memory.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub net: DiscretizedRpn,
    pub traces: Vec<Trace>,
    pub original: MooreMachine,
    pub pruned: MooreMachine,
    pub minimized: MooreMachine,
    pub prune_log: PruneLog,
    pub report: PipelineReport,
}

fn train_quantizer(
    cfg: &PipelineConfig,
    kind: QbnKind,
    bottleneck: usize,
    data: &[Vec<f64>],
    label: &str,
) -> Result<(Qbn, QbnSummary)> {
    let split = data.len() - data.len() / 10;
    let (train, heldout) = data.split_at(split.max(1).min(data.len()));
    let heldout = if heldout.is_empty() { train } else { heldout };
    let width = data.first().map_or(0, Vec::len);
    let mut q = Qbn::new(width, bottleneck, kind, seed::derive(cfg.seed, &format!("{label}-init")))?;
    let heldout_initial = q.loss(heldout)?;
    let tc = QbnTrainConfig {
        lr: cfg.qbn_lr,
        epochs: cfg.qbn_epochs,
        batch: cfg.qbn_batch,
        seed: seed::derive(cfg.seed, &format!("{label}-train")),
        ..QbnTrainConfig::default()
    };
    let r = train_qbn(&mut q, train, &tc)?;
    let summary = QbnSummary {
        best_epoch: r.best,
        train_history: r.history,
        heldout_initial,
        heldout_final: q.loss(heldout)?,
        distinct_codes: q.distinct_codes(data)?,
    };
    Ok((q, summary))
}

fn machine_stats(
    mm: &MooreMachine,
    env: &dyn Environment,
    seeds: &[u64],
    encoder: &dyn ObservationEncoder,
) -> Result<MachineStats> {
    let r = run_policy(mm, env, seeds, Fallback::MostFrequentBranch, encoder)?;
    Ok(stats(mm).with_returns(r.mean, seeds.len()))
}

/// Runs every stage in memory. Errors name the stage that failed.
pub fn run(cfg: &PipelineConfig) -> Result<PipelineOutput> {
    cfg.validate().map_err(|e| Error::from(e).in_stage("config"))?;
    let (mut env, mut expert) = env_and_expert(&cfg.env).map_err(|e| e.in_stage("environment"))?;
    let eval_seeds = cfg.eval_seeds();

    let clone_cfg = CloneConfig {
        hidden: cfg.hidden,
        expert_episodes: cfg.clone_expert_episodes,
        epochs: cfg.clone_epochs,
        dagger_rounds: cfg.clone_dagger_rounds,
        dagger_episodes: cfg.clone_dagger_episodes,
        dagger_epochs: cfg.clone_dagger_epochs,
        eval_episodes: cfg.eval_episodes,
        train: ImitationConfig {
            lr: cfg.clone_lr,
            ..ImitationConfig::default()
        },
        seed: seed::derive(cfg.seed, "clone"),
    };
    let (rpn, clone_report) =
        clone_train(env.as_mut(), expert.as_mut(), &clone_cfg).map_err(|e| e.in_stage("clone"))?;
    let plain = DiscretizedRpn::from(rpn.clone());
    let clone_return = evaluate_net(&plain, env.as_ref(), &eval_seeds)
        .map_err(|e| e.in_stage("clone"))?
        .mean;

    let data = collect_continuous(&rpn, env.as_ref(), &cfg.stage_seeds("qbn-data", cfg.qbn_episodes))
        .map_err(|e| e.in_stage("qbn"))?;
    let (q_h, qbn_h) =
        train_quantizer(cfg, QbnKind::Hidden, cfg.nh, &data.hidden, "qbn-h").map_err(|e| e.in_stage("qbn"))?;
    let (q_o, qbn_o) = train_quantizer(cfg, QbnKind::Observation, cfg.no, &data.features, "qbn-o")
        .map_err(|e| e.in_stage("qbn"))?;

    let mut net = insert_qbns(rpn.clone(), Some(q_h), Some(q_o)).map_err(|e| e.in_stage("insert"))?;
    let discretized_return = evaluate_net(&net, env.as_ref(), &eval_seeds)
        .map_err(|e| e.in_stage("insert"))?
        .mean;
    let mut fine_tune_report = None;
    if cfg.finetune {
        let ft = FineTuneConfig {
            rounds: cfg.finetune_rounds,
            episodes_per_round: cfg.finetune_episodes,
            eval_seeds: eval_seeds.clone(),
            train: ImitationConfig {
                lr: cfg.finetune_lr,
                ..ImitationConfig::default()
            },
            seed: seed::derive(cfg.seed, "finetune"),
            ..FineTuneConfig::default()
        };
        let (tuned, report) = fine_tune(&net, &rpn, env.as_mut(), &ft).map_err(|e| e.in_stage("fine-tune"))?;
        net = tuned;
        fine_tune_report = Some(report);
    }

    let traces = collect_transitions(&net, env.as_ref(), &cfg.stage_seeds("traces", cfg.trace_episodes))
        .map_err(|e| e.in_stage("traces"))?;
    let original = build_from_traces(&traces).map_err(|e| Error::from(e).in_stage("extract"))?;
    let minimized = minimize(&original);

    let prune_cfg = PruneConfig {
        seeds: eval_seeds.clone(),
        tolerance: cfg.tolerance(),
        max_passes: cfg.prune_max_passes,
    };
    let (pruned, prune_log) = prune(&original, env.as_ref(), &net, &prune_cfg).map_err(|e| e.in_stage("prune"))?;

    let stat = |mm: &MooreMachine| machine_stats(mm, env.as_ref(), &eval_seeds, &net);
    let row = TableRow {
        env: env.name().to_string(),
        nh: cfg.nh,
        no: cfg.no,
        original: stat(&original).map_err(|e| e.in_stage("stats"))?,
        pruned: stat(&pruned).map_err(|e| e.in_stage("stats"))?,
        minimized: stat(&minimized).map_err(|e| e.in_stage("stats"))?,
    };
    let report = PipelineReport {
        clone: clone_report,
        clone_return,
        qbn_h,
        qbn_o,
        discretized_return,
        fine_tune: fine_tune_report,
        class: classify(&original, &pruned),
        row,
    };
    Ok(PipelineOutput {
        net,
        traces,
        original,
        pruned,
        minimized,
        prune_log,
        report,
    })
}

fn write(dir: &Path, name: &str, bytes: impl AsRef<[u8]>) -> Result<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, bytes)?;
    Ok(path)
}

/// Runs the pipeline and writes its artifacts into `cfg.out_dir`. Returns
/// the written paths.
pub fn run_to_disk(cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let out = run(cfg)?;
    let dir = cfg.out_dir.as_path();
    let io = |e: Error| e.in_stage("write");
    fs::create_dir_all(dir).map_err(|e| io(e.into()))?;
    let mut paths = Vec::new();
    let mut ckpt = |name: &str, c: &crate::neural::Checkpoint| -> Result<()> {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, c)?;
        paths.push(write(dir, name, buf)?);
        Ok(())
    };
    let (policy, q_h, q_o) = out.net.to_checkpoints();
    ckpt("policy.ckpt", &policy).map_err(io)?;
    ckpt("qbn_h.ckpt", &q_h.expect("inserted")).map_err(io)?;
    ckpt("qbn_o.ckpt", &q_o.expect("inserted")).map_err(io)?;

    let mut buf = Vec::new();
    write_traces(&mut buf, &out.traces)?;
    let view = reduce_all(&out.original, &out.traces, &Annotations::default()).map_err(|e| Error::from(e).in_stage("reduce"))?;
    let files: Vec<(&str, String)> = vec![
        ("traces.jsonl", String::from_utf8(buf).expect("JSON is UTF-8")),
        ("machine.mm", serialize(&out.original)),
        ("pruned.mm", serialize(&out.pruned)),
        ("minimized.mm", serialize(&out.minimized)),
        ("machine.dot", machine_to_dot(&out.original)),
        ("pruned.dot", machine_to_dot(&out.pruned)),
        ("reduced.dot", view_to_dot(&view)),
        ("reduced.json", serde_json::to_string_pretty(&view)?),
        ("prune_log.json", serde_json::to_string_pretty(&out.prune_log)?),
        ("report.json", serde_json::to_string_pretty(&out.report)?),
        ("table.csv", format!("{CSV_HEADER}\n{}\n", out.report.row.csv_line())),
    ];
    for (name, text) in files {
        paths.push(write(dir, name, text).map_err(io)?);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_parsing() {
        let cfg = PipelineConfig::parse("env = cartpole\n# comment\nnh=3 # trailing\n\nfinetune = false\n").unwrap();
        assert_eq!(cfg.env, "cartpole");
        assert_eq!(cfg.nh, 3);
        assert!(!cfg.finetune);
        assert_eq!(cfg.no, 4);
        assert!(PipelineConfig::parse("nh 3").is_err());
        assert!(PipelineConfig::parse("colour = red").is_err());
        assert!(PipelineConfig::parse("nh = -1").is_err());
    }

    #[test]
    fn validation() {
        assert!(PipelineConfig::default().validate().is_err());
        let mut cfg = PipelineConfig::parse("env = parity").unwrap();
        assert!(cfg.validate().is_ok());
        cfg.nh = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn missing_env_fails_in_config_stage() {
        let err = run(&PipelineConfig::default()).unwrap_err();
        assert!(err.to_string().starts_with("config:"), "{err}");
        let cfg = PipelineConfig::parse("env = nowhere").unwrap();
        let err = run(&cfg).unwrap_err();
        assert!(err.to_string().starts_with("environment:"), "{err}");
    }

    #[test]
    fn csv_row_shape() {
        let s = MachineStats {
            decision_points: 6,
            states: 12,
            observations: 9,
            transitions: 30,
            mean_return: Some(500.0),
            episodes_evaluated: 20,
        };
        let row = TableRow {
            env: "cartpole".into(),
            nh: 4,
            no: 4,
            original: s.clone(),
            pruned: s.clone(),
            minimized: s,
        };
        let line = row.csv_line();
        assert_eq!(line.split(',').count(), CSV_HEADER.split(',').count());
        assert!(line.starts_with("cartpole,4,4,6,12,9,500,"));
    }

    #[test]
    fn parity_expert_is_optimal() {
        let (mut env, mut expert) = env_and_expert("parity").unwrap();
        for seed in 0..30 {
            let r = crate::envs::run_episode(expert.as_mut(), env.as_mut(), seed).unwrap();
            assert_eq!(r, 1.0);
        }
    }
}
