//! Recurrent policy networks for low-dimensional control.
//!
//! An [`Rpn`] maps an observation to features `f_t` (dense 16 ELU, dense 8
//! ReLU6), updates its memory with a GRU and reads action logits off the new
//! memory. A [`DiscretizedRpn`] routes `f_t` and the memory through the
//! encode/decode round trip of quantized bottleneck networks, which makes the
//! network a finite-state machine over ternary codes.
//!
//! Policies are trained by behaviour cloning with optional DAgger rounds and
//! truncated backpropagation through time. Quantizers pass gradients with
//! the straight-through estimator.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::automaton::{ObservationEncoder, Trace, TransitionTuple};
use crate::envs::{evaluate_seeds, Environment, EvalReport, Policy};
use crate::neural::{
    clip_grad_norm, Activation, Adam, Checkpoint, Dense, DenseCache, GruCache, GruCell, Mlp,
    MlpCache, Mode, Parameterized, Tensor,
};
use crate::qbn::Qbn;
use crate::{seed, Result, TernaryCode};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error("expert failed: {0}")]
    ExpertFailure(String),
    #[error("{what}: expected width {expected}, found {found}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("operation needs the {0} quantizer")]
    MissingQbn(&'static str),
    #[error("checkpoint does not hold a policy: {0}")]
    Checkpoint(String),
}

fn check(what: &'static str, expected: usize, found: usize) -> Result<(), PolicyError> {
    if expected == found {
        Ok(())
    } else {
        Err(PolicyError::ShapeMismatch {
            what,
            expected,
            found,
        })
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub const FEATURE_WIDTHS: [usize; 2] = [16, 8];
pub const DEFAULT_HIDDEN: usize = 8;
const RPN_KIND: &str = "rpn";

#[derive(Debug, Clone, PartialEq)]
pub struct Rpn {
    pub features: Mlp,
    pub gru: GruCell,
    pub policy_head: Dense,
    /// Kept for checkpoint compatibility with actor-critic training; not
    /// used by cloning or analysis.
    pub value_head: Dense,
}

impl Rpn {
    pub fn new(obs_dim: usize, action_count: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = seed::rng(seed);
        let features = Mlp::new(
            &[obs_dim, FEATURE_WIDTHS[0], FEATURE_WIDTHS[1]],
            &[Activation::Elu, Activation::Relu6],
            &mut rng,
        );
        let gru = GruCell::new(FEATURE_WIDTHS[1], hidden, &mut rng);
        let policy_head = Dense::new(hidden, action_count, Activation::Identity, &mut rng);
        let value_head = Dense::new(hidden, 1, Activation::Identity, &mut rng);
        Self {
            features,
            gru,
            policy_head,
            value_head,
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.features.input_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.output_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.gru.hidden_dim()
    }

    pub fn action_count(&self) -> usize {
        self.policy_head.output_dim()
    }

    pub fn initial_hidden(&self) -> Vec<f64> {
        vec![0.0; self.hidden_dim()]
    }

    pub fn feature(&self, obs: &[f64]) -> Result<Vec<f64>> {
        check("observation", self.obs_dim(), obs.len())?;
        Ok(self.features.output(obs, Mode::Quantized)?)
    }

    /// One step: action logits read off the updated memory, and that memory.
    pub fn step(&self, obs: &[f64], h: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        check("hidden state", self.hidden_dim(), h.len())?;
        let f = self.feature(obs)?;
        let hn = self.gru.forward(&f, h)?.output;
        let logits = self.policy_head.forward(&hn, Mode::Quantized)?.output;
        Ok((logits, hn))
    }

    pub fn value(&self, h: &[f64]) -> Result<f64> {
        Ok(self.value_head.forward(h, Mode::Quantized)?.output[0])
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = serde_json::json!({
            "obs_dim": self.obs_dim(),
            "action_count": self.action_count(),
            "hidden": self.hidden_dim(),
        });
        let mut c = Checkpoint::new(RPN_KIND, meta);
        for (name, t) in RPN_TENSORS.iter().zip(self.params()) {
            c.push(*name, t);
        }
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        if c.kind != RPN_KIND {
            return Err(PolicyError::Checkpoint(format!("kind is `{}`", c.kind)).into());
        }
        let field = |k: &str| -> Result<usize> {
            let v = c
                .meta
                .get(k)
                .cloned()
                .ok_or_else(|| PolicyError::Checkpoint(format!("missing `{k}`")))?;
            Ok(serde_json::from_value(v)?)
        };
        let mut rpn = Self::new(field("obs_dim")?, field("action_count")?, field("hidden")?, 0);
        let targets = RPN_TENSORS
            .iter()
            .map(|n| n.to_string())
            .zip(rpn.params_mut())
            .collect();
        c.load_into(targets)?;
        Ok(rpn)
    }
}

const RPN_TENSORS: [&str; 12] = [
    "features.0.weight",
    "features.0.bias",
    "features.1.weight",
    "features.1.bias",
    "gru.w_ih",
    "gru.w_hh",
    "gru.b_ih",
    "gru.b_hh",
    "policy.weight",
    "policy.bias",
    "value.weight",
    "value.bias",
];

impl Parameterized for Rpn {
    fn params(&self) -> Vec<&Tensor> {
        let mut p = self.features.params();
        p.extend(self.gru.params());
        p.extend(self.policy_head.params());
        p.extend(self.value_head.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.features.params_mut();
        p.extend(self.gru.params_mut());
        p.extend(self.policy_head.params_mut());
        p.extend(self.value_head.params_mut());
        p
    }
}

/// Memory of a (possibly) discretized network between steps: the vector fed
/// to the GRU, and its ternary code when a hidden quantizer is present.
#[derive(Debug, Clone, PartialEq)]
pub struct NetState {
    pub h: Vec<f64>,
    pub code: Option<TernaryCode>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub logits: Vec<f64>,
    pub action: usize,
    /// Code of the observation features when an observation quantizer is
    /// present.
    pub obs_code: Option<TernaryCode>,
    pub next: NetState,
}

/// An RPN with optional quantizers on its features and memory.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretizedRpn {
    pub rpn: Rpn,
    pub q_h: Option<Qbn>,
    pub q_o: Option<Qbn>,
}

impl From<Rpn> for DiscretizedRpn {
    fn from(rpn: Rpn) -> Self {
        Self {
            rpn,
            q_h: None,
            q_o: None,
        }
    }
}

/// Inserts quantizers in place of the memory and feature wires.
pub fn insert_qbns(rpn: Rpn, q_h: Option<Qbn>, q_o: Option<Qbn>) -> Result<DiscretizedRpn> {
    if let Some(q) = &q_h {
        check("hidden quantizer input", rpn.hidden_dim(), q.input_dim())?;
    }
    if let Some(q) = &q_o {
        check("observation quantizer input", rpn.feature_dim(), q.input_dim())?;
    }
    Ok(DiscretizedRpn { rpn, q_h, q_o })
}

struct StepCache {
    feat: MlpCache,
    q_o: Option<(MlpCache, MlpCache)>,
    gru: GruCache,
    q_h: Option<(MlpCache, MlpCache)>,
    head: DenseCache,
}

/// Result of one forward/backward pass over a labelled sequence.
struct SequencePass {
    loss: f64,
    end: Vec<f64>,
    #[cfg_attr(not(test), allow(dead_code))]
    obs_grads: Vec<Vec<f64>>,
}

fn through_qbn(q: &Qbn, x: &[f64], mode: Mode) -> Result<(MlpCache, MlpCache)> {
    let enc = q.encoder.forward(x, mode)?;
    let dec = q.decoder.forward(enc.output(), mode)?;
    Ok((enc, dec))
}

fn back_through_qbn(q: &Qbn, caches: &(MlpCache, MlpCache), g: &[f64], grads: &mut [Tensor]) -> Vec<f64> {
    let (ge, gd) = grads.split_at_mut(2 * q.encoder.layers.len());
    let gcode = q.decoder.backward(&caches.1, g, gd);
    q.encoder.backward(&caches.0, &gcode, ge)
}

fn cross_entropy(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    let mut grad: Vec<f64> = exps.iter().map(|e| e / z).collect();
    let loss = -(grad[target].ln());
    grad[target] -= 1.0;
    (loss, grad)
}

impl DiscretizedRpn {
    pub fn remove_qbns(self) -> Rpn {
        self.rpn
    }

    pub fn obs_dim(&self) -> usize {
        self.rpn.obs_dim()
    }

    pub fn action_count(&self) -> usize {
        self.rpn.action_count()
    }

    /// Starting memory: zero, or its quantized round trip `D_h(E_h(0))`.
    pub fn initial_state(&self) -> Result<NetState> {
        let zero = self.rpn.initial_hidden();
        match &self.q_h {
            None => Ok(NetState { h: zero, code: None }),
            Some(q) => {
                let (code, _) = q.encode(&zero)?;
                Ok(NetState {
                    h: q.decode(&code)?,
                    code: Some(code),
                })
            }
        }
    }

    pub fn step(&self, obs: &[f64], state: &NetState) -> Result<StepOutput> {
        Ok(self.forward(obs, &state.h, Mode::Quantized)?.1)
    }

    fn forward(&self, obs: &[f64], h: &[f64], mode: Mode) -> Result<(StepCache, StepOutput)> {
        check("observation", self.obs_dim(), obs.len())?;
        check("hidden state", self.rpn.hidden_dim(), h.len())?;
        let feat = self.rpn.features.forward(obs, mode)?;
        let (q_o, f, obs_code) = match &self.q_o {
            None => (None, feat.output().to_vec(), None),
            Some(q) => {
                let c = through_qbn(q, feat.output(), mode)?;
                let code = TernaryCode::from_f64s(c.0.output()).ok();
                let f = c.1.output().to_vec();
                (Some(c), f, code)
            }
        };
        let gru = self.rpn.gru.forward(&f, h)?;
        let (q_h, hn, code) = match &self.q_h {
            None => (None, gru.output.clone(), None),
            Some(q) => {
                let c = through_qbn(q, &gru.output, mode)?;
                let code = TernaryCode::from_f64s(c.0.output()).ok();
                let hn = c.1.output().to_vec();
                (Some(c), hn, code)
            }
        };
        let head = self.rpn.policy_head.forward(&hn, mode)?;
        let out = StepOutput {
            action: argmax(&head.output),
            logits: head.output.clone(),
            obs_code,
            next: NetState { h: hn, code },
        };
        let cache = StepCache {
            feat,
            q_o,
            gru,
            q_h,
            head,
        };
        Ok((cache, out))
    }

    /// Backpropagates one step. `dh_next` is the gradient reaching this
    /// step's output memory from later steps. Returns the observation and
    /// input-memory gradients.
    fn backward(&self, c: &StepCache, dlogits: &[f64], dh_next: &[f64], grads: &mut [Tensor]) -> (Vec<f64>, Vec<f64>) {
        let (g_feat, rest) = grads.split_at_mut(4);
        let (g_gru, rest) = rest.split_at_mut(4);
        let (g_head, rest) = rest.split_at_mut(2);
        let rest = &mut rest[2..];
        let n_qo = self.q_o.as_ref().map_or(0, |q| q.params().len());
        let (g_qo, g_qh) = rest.split_at_mut(n_qo);

        let mut dh = self.rpn.policy_head.backward(&c.head, dlogits, g_head);
        for (d, n) in dh.iter_mut().zip(dh_next) {
            *d += n;
        }
        if let (Some(q), Some(qc)) = (&self.q_h, &c.q_h) {
            dh = back_through_qbn(q, qc, &dh, g_qh);
        }
        let (mut df, dh_prev) = self.rpn.gru.backward(&c.gru, &dh, g_gru);
        if let (Some(q), Some(qc)) = (&self.q_o, &c.q_o) {
            df = back_through_qbn(q, qc, &df, g_qo);
        }
        let dobs = self.rpn.features.backward(&c.feat, &df, g_feat);
        (dobs, dh_prev)
    }

    /// Summed cross-entropy of the greedy logits against `labels` along a
    /// sequence started from memory `h0`. With `grads`, gradients of the
    /// loss times `scale` are accumulated.
    fn sequence(
        &self,
        h0: &[f64],
        obs: &[Vec<f64>],
        labels: &[usize],
        mode: Mode,
        grads: Option<(&mut [Tensor], f64)>,
    ) -> Result<SequencePass> {
        let mut caches = Vec::with_capacity(obs.len());
        let mut dlogits = Vec::with_capacity(obs.len());
        let mut h = h0.to_vec();
        let mut loss = 0.0;
        for (o, &label) in obs.iter().zip(labels) {
            let (cache, out) = self.forward(o, &h, mode)?;
            let (l, g) = cross_entropy(&out.logits, label);
            loss += l;
            caches.push(cache);
            dlogits.push(g);
            h = out.next.h;
        }
        let mut obs_grads = Vec::new();
        if let Some((grads, scale)) = grads {
            let mut dh = vec![0.0; h.len()];
            obs_grads = vec![Vec::new(); obs.len()];
            for t in (0..obs.len()).rev() {
                let g: Vec<f64> = dlogits[t].iter().map(|v| v * scale).collect();
                let (dobs, dprev) = self.backward(&caches[t], &g, &dh, grads);
                obs_grads[t] = dobs;
                dh = dprev;
            }
        }
        Ok(SequencePass {
            loss,
            end: h,
            obs_grads,
        })
    }

    pub fn to_checkpoints(&self) -> (Checkpoint, Option<Checkpoint>, Option<Checkpoint>) {
        (
            self.rpn.to_checkpoint(),
            self.q_h.as_ref().map(Qbn::to_checkpoint),
            self.q_o.as_ref().map(Qbn::to_checkpoint),
        )
    }
}

impl Parameterized for DiscretizedRpn {
    fn params(&self) -> Vec<&Tensor> {
        let mut p = self.rpn.params();
        for q in [&self.q_o, &self.q_h].into_iter().flatten() {
            p.extend(q.params());
        }
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.rpn.params_mut();
        for q in [&mut self.q_o, &mut self.q_h].into_iter().flatten() {
            p.extend(q.params_mut());
        }
        p
    }
}

/// `E_o`: raw observation to the code of its features.
impl ObservationEncoder for DiscretizedRpn {
    fn encode(&self, raw: &[f64]) -> Result<TernaryCode> {
        let q = self.q_o.as_ref().ok_or(PolicyError::MissingQbn("observation"))?;
        Ok(q.encode(&self.rpn.feature(raw)?)?.0)
    }
}

/// Greedy policy backed by a network; `reset` restores the initial memory.
#[derive(Debug, Clone)]
pub struct NetPolicy<'a> {
    net: &'a DiscretizedRpn,
    init: NetState,
    state: NetState,
}

impl<'a> NetPolicy<'a> {
    pub fn new(net: &'a DiscretizedRpn) -> Result<Self> {
        let init = net.initial_state()?;
        Ok(Self {
            net,
            state: init.clone(),
            init,
        })
    }

    pub fn state(&self) -> &NetState {
        &self.state
    }
}

impl Policy for NetPolicy<'_> {
    fn reset(&mut self) {
        self.state = self.init.clone();
    }

    fn act(&mut self, obs: &[f64]) -> Result<usize> {
        let out = self.net.step(obs, &self.state)?;
        self.state = out.next;
        Ok(out.action)
    }
}

pub fn evaluate_net(net: &DiscretizedRpn, env: &dyn Environment, seeds: &[u64]) -> Result<EvalReport> {
    evaluate_seeds(&NetPolicy::new(net)?, env, seeds)
}

/// Observations of one episode with the action label for each.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelledEpisode {
    pub obs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

fn expert_act(expert: &mut (impl Policy + ?Sized), obs: &[f64], actions: usize) -> Result<usize> {
    let a = expert
        .act(obs)
        .map_err(|e| PolicyError::ExpertFailure(e.to_string()))?;
    if a >= actions {
        return Err(PolicyError::ExpertFailure(format!("action {a} out of {actions}")).into());
    }
    Ok(a)
}

/// Runs `actor` for one episode, labelling every observation with the
/// teacher's choice (or the actor's own when there is no teacher).
fn labelled_rollout(
    env: &mut dyn Environment,
    actor: &mut dyn Policy,
    mut teacher: Option<&mut dyn Policy>,
    seed: u64,
) -> Result<LabelledEpisode> {
    let actions = env.action_count();
    actor.reset();
    if let Some(t) = teacher.as_deref_mut() {
        t.reset();
    }
    let mut obs = env.reset(seed);
    let mut ep = LabelledEpisode {
        obs: Vec::new(),
        labels: Vec::new(),
    };
    loop {
        let a = actor.act(&obs)?;
        let label = match teacher.as_deref_mut() {
            Some(t) => expert_act(t, &obs, actions)?,
            None => a,
        };
        ep.obs.push(obs);
        ep.labels.push(label);
        let step = env.step(a)?;
        if step.done {
            return Ok(ep);
        }
        obs = step.obs;
    }
}

/// Wraps an expert so that its errors and bad actions read as expert
/// failures while it drives rollouts.
struct Checked<'a, P: Policy + ?Sized> {
    inner: &'a mut P,
    actions: usize,
}

impl<P: Policy + ?Sized> Policy for Checked<'_, P> {
    fn reset(&mut self) {
        self.inner.reset();
    }

    fn act(&mut self, obs: &[f64]) -> Result<usize> {
        expert_act(self.inner, obs, self.actions)
    }
}

/// Settings shared by the imitation trainers.
#[derive(Debug, Clone, PartialEq)]
pub struct ImitationConfig {
    pub lr: f64,
    pub max_norm: f64,
    /// Truncation length for backpropagation through time.
    pub bptt: usize,
}

impl Default for ImitationConfig {
    fn default() -> Self {
        Self {
            lr: 3e-3,
            max_norm: 5.0,
            bptt: 32,
        }
    }
}

/// One pass over the episodes in shuffled order; one Adam step per
/// truncated chunk. Returns the mean per-step loss seen during the pass.
fn imitation_epoch<R: Rng>(
    net: &mut DiscretizedRpn,
    episodes: &[LabelledEpisode],
    adam: &mut Adam,
    cfg: &ImitationConfig,
    rng: &mut R,
) -> Result<f64> {
    let mut order: Vec<usize> = (0..episodes.len()).collect();
    order.shuffle(rng);
    let (mut total, mut steps) = (0.0, 0usize);
    for i in order {
        let ep = &episodes[i];
        let mut h = net.initial_state()?.h;
        let bptt = cfg.bptt.max(1);
        for start in (0..ep.obs.len()).step_by(bptt) {
            let end = (start + bptt).min(ep.obs.len());
            let mut grads = net.zero_grads();
            let scale = 1.0 / (end - start) as f64;
            let pass = net.sequence(
                &h,
                &ep.obs[start..end],
                &ep.labels[start..end],
                Mode::Quantized,
                Some((&mut grads, scale)),
            )?;
            clip_grad_norm(&mut grads, cfg.max_norm);
            adam.step(net.params_mut(), &grads);
            total += pass.loss;
            steps += end - start;
            h = pass.end;
        }
    }
    Ok(total / steps.max(1) as f64)
}

/// Mean per-step cross-entropy of the network against the labels.
pub fn imitation_loss(net: &DiscretizedRpn, episodes: &[LabelledEpisode]) -> Result<f64> {
    let h0 = net.initial_state()?.h;
    let per: Vec<(f64, usize)> = episodes
        .par_iter()
        .map(|ep| {
            net.sequence(&h0, &ep.obs, &ep.labels, Mode::Quantized, None)
                .map(|p| (p.loss, ep.obs.len()))
        })
        .collect::<Result<_>>()?;
    let (l, n) = per.iter().fold((0.0, 0), |(l, n), (a, b)| (l + a, n + b));
    Ok(l / n.max(1) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CloneConfig {
    pub hidden: usize,
    pub expert_episodes: usize,
    pub epochs: usize,
    /// Each round rolls out the learner, labels its observations with the
    /// expert, and retrains on everything collected.
    pub dagger_rounds: usize,
    pub dagger_episodes: usize,
    pub dagger_epochs: usize,
    pub eval_episodes: usize,
    pub train: ImitationConfig,
    pub seed: u64,
}

impl Default for CloneConfig {
    fn default() -> Self {
        Self {
            hidden: DEFAULT_HIDDEN,
            expert_episodes: 20,
            epochs: 15,
            dagger_rounds: 2,
            dagger_episodes: 10,
            dagger_epochs: 5,
            eval_episodes: 20,
            train: ImitationConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CloneReport {
    /// Mean per-step training loss of every epoch, across all rounds.
    pub loss_history: Vec<f64>,
    pub eval: EvalReport,
}

fn episode_seeds(master: u64, label: &str, count: usize) -> Vec<u64> {
    let mut rng = seed::rng(seed::derive(master, label));
    (0..count).map(|_| rng.gen::<u32>() as u64).collect()
}

/// Behaviour cloning of `expert` on `env`, followed by DAgger rounds.
pub fn clone_train<P: Policy + ?Sized>(
    env: &mut dyn Environment,
    expert: &mut P,
    cfg: &CloneConfig,
) -> Result<(Rpn, CloneReport)> {
    let actions = env.action_count();
    let mut net = DiscretizedRpn::from(Rpn::new(
        env.obs_dim(),
        actions,
        cfg.hidden,
        seed::derive(cfg.seed, "clone-init"),
    ));
    let mut expert = Checked {
        inner: expert,
        actions,
    };
    let mut data = Vec::new();
    for s in episode_seeds(cfg.seed, "clone-expert", cfg.expert_episodes) {
        data.push(labelled_rollout(env, &mut expert, None, s)?);
    }
    let mut rng = seed::rng(seed::derive(cfg.seed, "clone-train"));
    let mut adam = Adam::new(cfg.train.lr);
    let mut loss_history = Vec::new();
    for _ in 0..cfg.epochs {
        loss_history.push(imitation_epoch(&mut net, &data, &mut adam, &cfg.train, &mut rng)?);
    }
    for round in 0..cfg.dagger_rounds {
        let seeds = episode_seeds(cfg.seed, &format!("clone-dagger-{round}"), cfg.dagger_episodes);
        for s in seeds {
            let mut learner = NetPolicy::new(&net)?;
            data.push(labelled_rollout(env, &mut learner, Some(&mut expert), s)?);
        }
        for _ in 0..cfg.dagger_epochs {
            loss_history.push(imitation_epoch(&mut net, &data, &mut adam, &cfg.train, &mut rng)?);
        }
    }
    let eval_seeds = episode_seeds(cfg.seed, "clone-eval", cfg.eval_episodes);
    let eval = evaluate_net(&net, env, &eval_seeds)?;
    Ok((net.remove_qbns(), CloneReport { loss_history, eval }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FineTuneConfig {
    pub rounds: usize,
    pub episodes_per_round: usize,
    pub epochs_per_round: usize,
    pub eval_seeds: Vec<u64>,
    pub train: ImitationConfig,
    pub seed: u64,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        Self {
            rounds: 5,
            episodes_per_round: 10,
            epochs_per_round: 2,
            eval_seeds: (0..20).collect(),
            train: ImitationConfig {
                lr: 1e-3,
                ..ImitationConfig::default()
            },
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FineTuneReport {
    /// Loss against the teacher on each round's fresh rollouts, measured
    /// before that round's updates.
    pub loss_history: Vec<f64>,
    /// Mean return on the evaluation seeds: initial, then after each round.
    pub returns: Vec<f64>,
    /// Index into `returns` of the parameters that were kept.
    pub best: usize,
}

/// Imitation of the continuous teacher by the discretized network on the
/// discretized network's own rollouts. Network and quantizer weights are
/// updated jointly; the parameters with the best evaluation return are kept
/// (the initial ones on ties).
pub fn fine_tune(
    drpn: &DiscretizedRpn,
    teacher: &Rpn,
    env: &mut dyn Environment,
    cfg: &FineTuneConfig,
) -> Result<(DiscretizedRpn, FineTuneReport)> {
    check("teacher observation", drpn.obs_dim(), teacher.obs_dim())?;
    check("teacher actions", drpn.action_count(), teacher.action_count())?;
    let teacher = DiscretizedRpn::from(teacher.clone());
    let mut net = drpn.clone();
    let mut best = (drpn.clone(), evaluate_net(drpn, env, &cfg.eval_seeds)?.mean, 0);
    let mut returns = vec![best.1];
    let mut loss_history = Vec::new();
    let mut rng = seed::rng(seed::derive(cfg.seed, "finetune-train"));
    let mut adam = Adam::new(cfg.train.lr);
    for round in 0..cfg.rounds {
        let mut data = Vec::new();
        for s in episode_seeds(cfg.seed, &format!("finetune-{round}"), cfg.episodes_per_round) {
            let mut actor = NetPolicy::new(&net)?;
            let mut t = NetPolicy::new(&teacher)?;
            data.push(labelled_rollout(env, &mut actor, Some(&mut t), s)?);
        }
        loss_history.push(imitation_loss(&net, &data)?);
        for _ in 0..cfg.epochs_per_round {
            imitation_epoch(&mut net, &data, &mut adam, &cfg.train, &mut rng)?;
        }
        let r = evaluate_net(&net, env, &cfg.eval_seeds)?.mean;
        returns.push(r);
        if r > best.1 {
            best = (net.clone(), r, round + 1);
        }
    }
    Ok((
        best.0,
        FineTuneReport {
            loss_history,
            returns,
            best: best.2,
        },
    ))
}

/// Runs the discretized network greedily, one episode per seed, recording
/// the ternary tuples of every step.
pub fn collect_transitions(net: &DiscretizedRpn, env: &dyn Environment, seeds: &[u64]) -> Result<Vec<Trace>> {
    if net.q_h.is_none() {
        return Err(PolicyError::MissingQbn("hidden").into());
    }
    if net.q_o.is_none() {
        return Err(PolicyError::MissingQbn("observation").into());
    }
    let init = net.initial_state()?;
    let jobs: Vec<_> = seeds.iter().map(|&s| (s, env.boxed_clone())).collect();
    jobs.into_par_iter()
        .map(|(seed, mut env)| {
            let mut state = init.clone();
            let mut obs = env.reset(seed);
            let mut trace = Trace {
                ret: 0.0,
                steps: Vec::new(),
            };
            loop {
                let out = net.step(&obs, &state)?;
                trace.steps.push(TransitionTuple {
                    h: state.code.clone().expect("hidden quantizer present"),
                    a: out.action,
                    f: out.obs_code.clone().expect("observation quantizer present"),
                    hn: out.next.code.clone().expect("hidden quantizer present"),
                });
                let step = env.step(out.action)?;
                trace.ret += step.reward;
                if step.done {
                    return Ok(trace);
                }
                state = out.next;
                obs = step.obs;
            }
        })
        .collect()
}

/// Continuous training data for the quantizers: the features `f_t` and the
/// updated memories `h_{t+1}` seen while running the network greedily.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ContinuousData {
    pub features: Vec<Vec<f64>>,
    pub hidden: Vec<Vec<f64>>,
}

pub fn collect_continuous(rpn: &Rpn, env: &dyn Environment, seeds: &[u64]) -> Result<ContinuousData> {
    let jobs: Vec<_> = seeds.iter().map(|&s| (s, env.boxed_clone())).collect();
    let per: Vec<ContinuousData> = jobs
        .into_par_iter()
        .map(|(seed, mut env)| {
            let mut data = ContinuousData::default();
            let mut h = rpn.initial_hidden();
            let mut obs = env.reset(seed);
            loop {
                data.features.push(rpn.feature(&obs)?);
                let (logits, hn) = rpn.step(&obs, &h)?;
                data.hidden.push(hn.clone());
                let step = env.step(argmax(&logits))?;
                if step.done {
                    return Ok(data);
                }
                h = hn;
                obs = step.obs;
            }
        })
        .collect::<Result<_>>()?;
    let mut out = ContinuousData::default();
    for d in per {
        out.features.extend(d.features);
        out.hidden.extend(d.hidden);
    }
    Ok(out)
}
