use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{EnvError, Environment, Step};
use crate::automaton::{self, decision_points, Fallback, MooreMachine, ObsId, StateId};
use crate::seed;

const EMISSION_HEADER: &str = "[emission]";
/// Cap on the number of joint branch choices the certificate enumerates.
const MAX_FORCINGS: usize = 4096;

/// A ground-truth Moore machine together with how the environment drives it.
///
/// The machine part uses the ordinary machine file format. An optional
/// `[emission]` section follows, with lines
///
/// ```text
/// emit <state> <obs id> [<obs id> ...]
/// redundant <state>
/// horizon <steps>
/// ```
///
/// A state without an `emit` line emits every observation it has a
/// transition on. An episode ends after `horizon` steps or on reaching a
/// state that emits nothing.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub machine: MooreMachine,
    pub emission: BTreeMap<StateId, Vec<ObsId>>,
    pub redundant: BTreeSet<StateId>,
    pub horizon: usize,
}

impl SyntheticSpec {
    pub fn new(machine: MooreMachine, horizon: usize) -> Self {
        Self {
            machine,
            emission: BTreeMap::new(),
            redundant: BTreeSet::new(),
            horizon,
        }
    }

    pub fn parse(text: &str) -> Result<Self, EnvError> {
        let lines: Vec<&str> = text.lines().collect();
        let split = lines
            .iter()
            .position(|l| l.trim() == EMISSION_HEADER)
            .unwrap_or(lines.len());
        let machine = automaton::deserialize(&lines[..split].join("\n"))
            .map_err(|e| EnvError::InvalidSpec(e.to_string()))?;
        let mut spec = Self::new(machine, 0);
        let mut horizon = None;
        for (i, line) in lines.iter().enumerate().skip(split + 1) {
            let bad = |m: &str| EnvError::InvalidSpec(format!("line {}: {m}", i + 1));
            let words: Vec<&str> = line.split_whitespace().collect();
            let nums = |ws: &[&str]| -> Result<Vec<u32>, EnvError> {
                ws.iter()
                    .map(|w| w.parse().map_err(|_| bad(&format!("bad number `{w}`"))))
                    .collect()
            };
            match words.as_slice() {
                [] => {}
                [c, ..] if c.starts_with('#') => {}
                ["emit", state, obs @ ..] if !obs.is_empty() => {
                    let state = StateId(nums(&[state])?[0]);
                    let obs = nums(obs)?.into_iter().map(ObsId).collect();
                    if spec.emission.insert(state, obs).is_some() {
                        return Err(bad("duplicate emit line"));
                    }
                }
                ["redundant", state] => {
                    spec.redundant.insert(StateId(nums(&[state])?[0]));
                }
                ["horizon", n] => {
                    horizon = Some(n.parse().map_err(|_| bad("bad horizon"))?);
                }
                _ => return Err(bad(&format!("unrecognized line `{line}`"))),
            }
        }
        spec.horizon = horizon.ok_or_else(|| EnvError::InvalidSpec("missing horizon".into()))?;
        Ok(spec)
    }

    pub fn to_text(&self) -> String {
        let mut out = automaton::serialize(&self.machine);
        out.push_str(EMISSION_HEADER);
        out.push('\n');
        for (s, obs) in &self.emission {
            write!(out, "emit {}", s.0).unwrap();
            for o in obs {
                write!(out, " {}", o.0).unwrap();
            }
            out.push('\n');
        }
        for s in &self.redundant {
            writeln!(out, "redundant {}", s.0).unwrap();
        }
        writeln!(out, "horizon {}", self.horizon).unwrap();
        out
    }

    pub fn emitted(&self, state: StateId) -> Vec<ObsId> {
        match self.emission.get(&state) {
            Some(obs) => obs.clone(),
            None => self.machine.outgoing(state).map(|(o, _)| o).collect(),
        }
    }

    pub fn action_count(&self) -> usize {
        self.machine
            .states()
            .values()
            .map(|s| s.action + 1)
            .max()
            .unwrap_or(1)
    }

    /// Return of the ground-truth machine on every emission sequence: one
    /// reward per step.
    fn validate(&self) -> Result<(), EnvError> {
        let invalid = |m: String| Err(EnvError::InvalidSpec(m));
        if self.horizon == 0 {
            return invalid("horizon must be at least 1".into());
        }
        if self.emitted(self.machine.start()).is_empty() {
            return invalid("start state emits nothing".into());
        }
        for (s, obs) in &self.emission {
            if !self.machine.contains_state(*s) {
                return invalid(format!("emission for unknown state {s}"));
            }
            for o in obs {
                if self.machine.transition(*s, *o).is_none() {
                    return invalid(format!("state {s} emits {o} but has no transition on it"));
                }
            }
        }
        let dps: BTreeSet<StateId> = decision_points(&self.machine).into_iter().collect();
        for d in &self.redundant {
            if !dps.contains(d) {
                return invalid(format!("redundant state {d} is not a decision point"));
            }
        }
        self.certify_redundancy()
    }

    /// Exhaustive check that forcing every redundant decision point onto any
    /// one of its successors, jointly, still earns full reward on every
    /// emission sequence.
    fn certify_redundancy(&self) -> Result<(), EnvError> {
        let choices: Vec<(StateId, Vec<StateId>)> = self
            .redundant
            .iter()
            .map(|&d| (d, self.machine.successors(d).into_iter().collect()))
            .collect();
        let total = choices
            .iter()
            .try_fold(1usize, |acc, (_, c)| acc.checked_mul(c.len()))
            .filter(|&n| n <= MAX_FORCINGS)
            .ok_or_else(|| EnvError::InvalidSpec("too many redundant branches to certify".into()))?;
        for mut index in 0..total {
            let mut forced = self.machine.clone();
            let mut desc = Vec::new();
            for (d, targets) in &choices {
                let keep = targets[index % targets.len()];
                index /= targets.len();
                let drop: Vec<ObsId> = forced
                    .outgoing(*d)
                    .filter(|(_, t)| t.target != keep)
                    .map(|(o, _)| o)
                    .collect();
                for o in drop {
                    forced = forced.without_transition(*d, o);
                }
                desc.push(format!("{d}->{keep}"));
            }
            if let Some(t) = self.first_loss(&forced) {
                return Err(EnvError::InvalidSpec(format!(
                    "forcing {} loses reward at step {t}",
                    desc.join(", ")
                )));
            }
        }
        Ok(())
    }

    /// Depth-first search over (true state, agent state, step) for a step at
    /// which `agent` misses the reward or cannot move.
    fn first_loss(&self, agent: &MooreMachine) -> Option<usize> {
        let mut seen = HashSet::new();
        let mut stack = vec![(self.machine.start(), agent.start(), 0usize)];
        while let Some((env, ag, t)) = stack.pop() {
            if t >= self.horizon || !seen.insert((env, ag, t)) {
                continue;
            }
            for o in self.emitted(env) {
                let next_env = self.machine.transition(env, o)?.target;
                let Ok((next_ag, action)) =
                    automaton::step(agent, ag, o, Fallback::MostFrequentBranch)
                else {
                    return Some(t);
                };
                if Some(action) != self.machine.action(next_env) {
                    return Some(t);
                }
                stack.push((next_env, next_ag, t + 1));
            }
        }
        None
    }
}

/// Environment driven by a ground-truth machine. Each step emits one of the
/// current state's observations (seeded choice); the reward is 1 when the
/// action equals the label of the state the machine moves to. The
/// ground-truth machine itself is therefore optimal.
#[derive(Debug, Clone)]
pub struct SyntheticEnv {
    spec: Arc<SyntheticSpec>,
    action_count: usize,
    state: StateId,
    current: Option<ObsId>,
    t: usize,
    rng: ChaCha8Rng,
}

impl SyntheticEnv {
    pub fn new(spec: SyntheticSpec) -> Result<Self, EnvError> {
        spec.validate()?;
        Ok(Self {
            action_count: spec.action_count(),
            state: spec.machine.start(),
            spec: Arc::new(spec),
            current: None,
            t: 0,
            rng: seed::rng(0),
        })
    }

    pub fn spec(&self) -> &SyntheticSpec {
        &self.spec
    }

    /// Return the ground-truth machine earns in one episode.
    pub fn optimal_return(&self, seed: u64) -> f64 {
        let mut env = self.clone();
        env.reset(seed);
        let mut ret = 0.0;
        while let Some(o) = env.current {
            let next = env.spec.machine.transition(env.state, o).map(|t| t.target);
            let action = next.and_then(|s| env.spec.machine.action(s)).unwrap_or(0);
            let step = env.step(action).expect("validated spec");
            ret += step.reward;
            if step.done {
                break;
            }
        }
        ret
    }

    fn emit(&mut self) -> Vec<f64> {
        let options = self.spec.emitted(self.state);
        let o = options[self.rng.gen_range(0..options.len())];
        self.current = Some(o);
        self.spec.machine.obs_code(o).expect("validated spec").to_f64s()
    }
}

impl Environment for SyntheticEnv {
    fn name(&self) -> &str {
        "synthetic"
    }

    fn obs_dim(&self) -> usize {
        self.spec.machine.obs_len()
    }

    fn action_count(&self) -> usize {
        self.action_count
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.rng = seed::rng(seed);
        self.state = self.spec.machine.start();
        self.t = 0;
        self.emit()
    }

    fn step(&mut self, action: usize) -> Result<Step, EnvError> {
        let o = self.current.ok_or(EnvError::StepAfterDone)?;
        if action >= self.action_count {
            return Err(EnvError::InvalidAction {
                action,
                count: self.action_count,
            });
        }
        let next = self.spec.machine.transition(self.state, o).expect("validated spec").target;
        let reward = if self.spec.machine.action(next) == Some(action) { 1.0 } else { 0.0 };
        self.state = next;
        self.t += 1;
        let done = self.t >= self.spec.horizon || self.spec.emitted(next).is_empty();
        let obs = if done {
            self.current = None;
            vec![0.0; self.obs_dim()]
        } else {
            self.emit()
        };
        Ok(Step { obs, reward, done })
    }

    fn boxed_clone(&self) -> Box<dyn Environment> {
        Box::new(self.clone())
    }
}
