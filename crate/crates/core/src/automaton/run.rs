use super::{AutomatonError, MooreMachine, ObsId, StateId, Trace, TransitionTuple};
use crate::envs::{evaluate_seeds, Environment, EvalReport, Policy};
use crate::{Result, TernaryCode};

/// What to do on an observation the current state has no transition for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fallback {
    /// Follow the state's most frequent outgoing transition.
    #[default]
    MostFrequentBranch,
    Fail,
}

/// One machine step: returns the next state and the action it emits.
pub fn step(
    mm: &MooreMachine,
    state: StateId,
    obs: ObsId,
    fallback: Fallback,
) -> Result<(StateId, usize), AutomatonError> {
    if !mm.contains_state(state) {
        return Err(AutomatonError::UnknownState(state));
    }
    let target = match (mm.transition(state, obs), fallback) {
        (Some(t), _) => t.target,
        (None, Fallback::Fail) => return Err(AutomatonError::UnknownObservation { state, obs }),
        (None, Fallback::MostFrequentBranch) => {
            mm.most_frequent_branch(state)
                .ok_or(AutomatonError::DeadEnd(state))?
                .1
                .target
        }
    };
    Ok((target, mm.state(target).expect("validated target").action))
}

/// Maps raw environment observations to ternary codes.
pub trait ObservationEncoder: Sync {
    fn encode(&self, raw: &[f64]) -> Result<TernaryCode>;
}

/// Encoder for environments whose observations already are ternary codes.
#[derive(Debug, Clone, Copy, Default)]
pub struct DirectCode;

impl ObservationEncoder for DirectCode {
    fn encode(&self, raw: &[f64]) -> Result<TernaryCode> {
        TernaryCode::from_f64s(raw)
            .map_err(|e| AutomatonError::Unbindable(format!("{} is not ternary", e.0)).into())
    }
}

/// A machine acting as a policy. Raw observations are encoded and bound to
/// the nearest observation of the alphabet.
#[derive(Clone, Copy)]
pub struct MachinePolicy<'a> {
    mm: &'a MooreMachine,
    encoder: &'a dyn ObservationEncoder,
    fallback: Fallback,
    state: StateId,
}

impl<'a> MachinePolicy<'a> {
    pub fn new(mm: &'a MooreMachine, encoder: &'a dyn ObservationEncoder, fallback: Fallback) -> Self {
        Self {
            mm,
            encoder,
            fallback,
            state: mm.start(),
        }
    }

    pub fn state(&self) -> StateId {
        self.state
    }

    fn bind(&self, raw: &[f64]) -> Result<ObsId> {
        let code = self.encoder.encode(raw)?;
        Ok(self.mm.bind_code(&code).ok_or_else(|| {
            AutomatonError::Unbindable(format!(
                "code {code} against an alphabet of {} codes of length {}",
                self.mm.observations().len(),
                self.mm.obs_len()
            ))
        })?)
    }
}

impl Policy for MachinePolicy<'_> {
    fn reset(&mut self) {
        self.state = self.mm.start();
    }

    fn act(&mut self, obs: &[f64]) -> Result<usize> {
        let o = self.bind(obs)?;
        let (next, action) = step(self.mm, self.state, o, self.fallback)?;
        self.state = next;
        Ok(action)
    }
}

/// Runs the machine for one episode per seed.
pub fn run_policy(
    mm: &MooreMachine,
    env: &dyn Environment,
    seeds: &[u64],
    fallback: Fallback,
    encoder: &dyn ObservationEncoder,
) -> Result<EvalReport> {
    evaluate_seeds(&MachinePolicy::new(mm, encoder, fallback), env, seeds)
}

/// Runs the machine and records its own transition tuples, one trace per
/// seed. The recorded observation code is the bound alphabet code.
pub fn rollout_traces(
    mm: &MooreMachine,
    env: &mut dyn Environment,
    seeds: &[u64],
    fallback: Fallback,
    encoder: &dyn ObservationEncoder,
) -> Result<Vec<Trace>> {
    let mut policy = MachinePolicy::new(mm, encoder, fallback);
    let code = |s: StateId| mm.state(s).expect("machine state").code.clone();
    seeds
        .iter()
        .map(|&seed| {
            policy.reset();
            let mut obs = env.reset(seed);
            let mut trace = Trace {
                ret: 0.0,
                steps: Vec::new(),
            };
            loop {
                let o = policy.bind(&obs)?;
                let h = policy.state;
                let (hn, a) = step(mm, h, o, fallback)?;
                policy.state = hn;
                trace.steps.push(TransitionTuple {
                    h: code(h),
                    a,
                    f: mm.obs_code(o).expect("bound id").clone(),
                    hn: code(hn),
                });
                let s = env.step(a)?;
                trace.ret += s.reward;
                if s.done {
                    return Ok(trace);
                }
                obs = s.obs;
            }
        })
        .collect()
}
