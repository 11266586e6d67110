use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::Serialize;

use super::counts::{replay, Hop, VisitCounts};
use super::ReduceError;
use crate::automaton::{MooreMachine, ObsId, StateId, Trace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum ArcKind {
    Plain,
    Macro,
    Abstract,
    Boundary,
}

/// Why a state is drawn as a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum NodeRole {
    Start,
    DecisionPoint,
    Terminal,
    Boundary,
    /// A state picked to break a cycle that contains no other node.
    Anchor,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ViewNode {
    pub id: StateId,
    pub action: usize,
    pub role: NodeRole,
    /// Branches to two or more drawn successors. The start state can be one.
    pub decision_point: bool,
}

/// An arc of the view.
///
/// Plain and abstract arcs are single steps: `obs` holds the one observation
/// or the merged set. Macro and boundary arcs walk `src`, the states of
/// `hidden_path`, then `dst`; `hop_obs[i]` lists the observations that make
/// hop `i` of that walk and `action_sequence` the actions emitted on entering
/// the hidden states. A macro arc's `length` is the number of hidden states,
/// a boundary arc's the number of steps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ViewArc {
    pub kind: ArcKind,
    pub src: StateId,
    pub dst: StateId,
    pub length: usize,
    pub obs: Vec<ObsId>,
    pub obs_count: usize,
    pub hidden_path: Vec<StateId>,
    pub hop_obs: Vec<Vec<ObsId>>,
    pub action_sequence: Vec<usize>,
}

impl ViewArc {
    fn plain(src: StateId, obs: ObsId, dst: StateId) -> Self {
        Self {
            kind: ArcKind::Plain,
            src,
            dst,
            length: 1,
            obs: vec![obs],
            obs_count: 1,
            hidden_path: Vec::new(),
            hop_obs: Vec::new(),
            action_sequence: Vec::new(),
        }
    }

    fn walk(kind: ArcKind, mm: &MooreMachine, src: StateId, path: Vec<StateId>, dst: StateId, hops: Vec<Vec<ObsId>>) -> Self {
        let length = match kind {
            ArcKind::Boundary => path.len() + 1,
            _ => path.len(),
        };
        Self {
            kind,
            src,
            dst,
            length,
            obs: Vec::new(),
            obs_count: 0,
            action_sequence: path.iter().map(|&s| mm.action(s).expect("machine state")).collect(),
            hidden_path: path,
            hop_obs: hops,
        }
    }

    fn sort_key(&self) -> impl Ord + '_ {
        (self.src, self.dst, self.kind, &self.obs, &self.hidden_path, &self.hop_obs)
    }
}

/// A loop through `entry` that recorded runs traverse exactly once each time
/// they reach `entry`: the first visit continues into the loop at `first`,
/// the second leaves through `exit`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct UnrolledLoop {
    pub first: StateId,
    pub exit: StateId,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Annotations {
    /// Steps before this index are warm-up.
    pub warmup_end: Option<usize>,
    /// Steps from this index on are the termination phase.
    pub termination_start: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReducedView<'a> {
    #[serde(skip)]
    source: &'a MooreMachine,
    pub nodes: Vec<ViewNode>,
    pub arcs: Vec<ViewArc>,
    pub unrolled: BTreeMap<StateId, UnrolledLoop>,
    pub merged: bool,
}

impl<'a> ReducedView<'a> {
    pub fn source(&self) -> &'a MooreMachine {
        self.source
    }

    /// Nodes drawn as decision points.
    pub fn decision_points(&self) -> Vec<StateId> {
        self.nodes
            .iter()
            .filter(|n| n.decision_point)
            .map(|n| n.id)
            .collect()
    }

    pub fn node(&self, id: StateId) -> Option<&ViewNode> {
        self.nodes.iter().find(|n| n.id == id)
    }
}

/// Visited transitions grouped as `from -> to -> observations`.
type Graph = BTreeMap<StateId, BTreeMap<StateId, BTreeSet<ObsId>>>;

fn graph_of<'h>(hops: impl IntoIterator<Item = &'h Hop>) -> Graph {
    let mut g = Graph::new();
    for &(s, o, t) in hops {
        g.entry(s).or_default().entry(t).or_default().insert(o);
    }
    g
}

fn graph_from_counts(mm: &MooreMachine, counts: &VisitCounts) -> Graph {
    let mut g = Graph::new();
    for (&(s, o), &n) in &counts.transitions {
        if n > 0 {
            let t = mm.transition(s, o).expect("counted transition exists").target;
            g.entry(s).or_default().entry(t).or_default().insert(o);
        }
    }
    g
}

fn successors(g: &Graph, s: StateId) -> Vec<StateId> {
    g.get(&s).map(|m| m.keys().copied().collect()).unwrap_or_default()
}

/// Next state of a walk through `cur`, honouring unrolled loops. `passes`
/// counts earlier visits of `cur` in the same walk. `None` if the walk
/// cannot continue deterministically.
fn walk_next(g: &Graph, unrolled: &BTreeMap<StateId, UnrolledLoop>, cur: StateId, passes: usize) -> Option<StateId> {
    let succ = successors(g, cur);
    if let Some(l) = unrolled.get(&cur) {
        if succ == sorted([l.first, l.exit]) {
            return match passes {
                0 => Some(l.first),
                1 => Some(l.exit),
                _ => None,
            };
        }
    }
    match succ.as_slice() {
        [only] if passes == 0 => Some(*only),
        _ => None,
    }
}

fn sorted(mut v: [StateId; 2]) -> Vec<StateId> {
    v.sort();
    v.to_vec()
}

/// Finds loops traversed exactly once per entry, innermost first.
///
/// A loop through `v` qualifies when `v` has exactly two successors, the
/// walk from one of them returns to `v` through states that are
/// non-branching or already unrolled, every pair of states on the walk is
/// traversed `E` times per occurrence (where `E` counts entries into `v`
/// from outside the loop), the exit is taken `E` times, and no state on the
/// loop is entered from elsewhere.
pub fn unroll_once_loops(mm: &MooreMachine, counts: &VisitCounts) -> BTreeMap<StateId, UnrolledLoop> {
    let g = graph_from_counts(mm, counts);
    let mut unrolled = BTreeMap::new();
    loop {
        let mut found = None;
        'search: for (&v, targets) in &g {
            if unrolled.contains_key(&v) || targets.len() != 2 {
                continue;
            }
            let succ: Vec<StateId> = targets.keys().copied().collect();
            for (first, exit) in [(succ[0], succ[1]), (succ[1], succ[0])] {
                if once_loop(mm, counts, &g, &unrolled, v, first, exit) {
                    found = Some((v, UnrolledLoop { first, exit }));
                    break 'search;
                }
            }
        }
        match found {
            Some((v, l)) => {
                unrolled.insert(v, l);
            }
            None => return unrolled,
        }
    }
}

fn once_loop(
    mm: &MooreMachine,
    counts: &VisitCounts,
    g: &Graph,
    unrolled: &BTreeMap<StateId, UnrolledLoop>,
    v: StateId,
    first: StateId,
    exit: StateId,
) -> bool {
    let limit = 2 * g.len() + 2;
    let mut walk = vec![v];
    let mut passes: HashMap<StateId, usize> = HashMap::new();
    let mut cur = first;
    while cur != v {
        if walk.len() > limit {
            return false;
        }
        walk.push(cur);
        let p = passes.entry(cur).or_default();
        let Some(next) = walk_next(g, unrolled, cur, *p) else {
            return false;
        };
        *p += 1;
        cur = next;
    }
    walk.push(v);

    let back = walk[walk.len() - 2];
    let total = counts.state(v);
    let e = counts.pair(mm, v, exit);
    if e == 0 || total != 2 * e {
        return false;
    }
    let mut pair_uses: HashMap<(StateId, StateId), u64> = HashMap::new();
    for w in walk.windows(2) {
        *pair_uses.entry((w[0], w[1])).or_default() += 1;
    }
    if pair_uses.iter().any(|(&(a, b), &k)| counts.pair(mm, a, b) != e * k) {
        return false;
    }
    let mut occurrences: HashMap<StateId, u64> = HashMap::new();
    for &s in &walk[1..walk.len() - 1] {
        *occurrences.entry(s).or_default() += 1;
    }
    occurrences.iter().all(|(&s, &k)| counts.state(s) == e * k) && counts.pair(mm, back, v) == e
}

/// States that must be drawn, before anchors are added.
fn is_branching(g: &Graph, unrolled: &BTreeMap<StateId, UnrolledLoop>, s: StateId) -> bool {
    let succ = successors(g, s);
    succ.len() >= 2 && !unrolled.get(&s).is_some_and(|l| succ == sorted([l.first, l.exit]))
}

fn base_nodes(
    mm: &MooreMachine,
    g: &Graph,
    members: &BTreeSet<StateId>,
    unrolled: &BTreeMap<StateId, UnrolledLoop>,
    boundary: &BTreeSet<StateId>,
) -> BTreeMap<StateId, NodeRole> {
    let mut roles = BTreeMap::new();
    for &s in members {
        let succ = successors(g, s);
        let role = if s == mm.start() {
            Some(NodeRole::Start)
        } else if is_branching(g, unrolled, s) {
            Some(NodeRole::DecisionPoint)
        } else if succ.is_empty() {
            Some(NodeRole::Terminal)
        } else if boundary.contains(&s) {
            Some(NodeRole::Boundary)
        } else {
            None
        };
        if let Some(r) = role {
            roles.insert(s, r);
        }
    }
    for &s in boundary {
        roles.entry(s).or_insert(NodeRole::Boundary);
    }
    roles
}

enum Walked {
    Arcs(Vec<ViewArc>),
    NeedAnchor(StateId),
}

fn walk_all(mm: &MooreMachine, g: &Graph, unrolled: &BTreeMap<StateId, UnrolledLoop>, roles: &BTreeMap<StateId, NodeRole>) -> Walked {
    let limit = 2 * g.len() + 2;
    let mut arcs = Vec::new();
    let mut covered: BTreeSet<(StateId, StateId)> = BTreeSet::new();
    for &r in roles.keys() {
        let Some(targets) = g.get(&r) else { continue };
        for (&t, obs) in targets {
            covered.insert((r, t));
            if roles.contains_key(&t) {
                arcs.extend(obs.iter().map(|&o| ViewArc::plain(r, o, t)));
                continue;
            }
            let mut path = Vec::new();
            let mut hops = vec![obs.iter().copied().collect::<Vec<_>>()];
            let mut passes: HashMap<StateId, usize> = HashMap::new();
            let mut cur = t;
            let dst = loop {
                if path.len() > limit {
                    return Walked::NeedAnchor(cur);
                }
                path.push(cur);
                let p = passes.entry(cur).or_default();
                let Some(next) = walk_next(g, unrolled, cur, *p) else {
                    return Walked::NeedAnchor(cur);
                };
                *p += 1;
                covered.insert((cur, next));
                hops.push(g[&cur][&next].iter().copied().collect());
                if roles.contains_key(&next) {
                    break next;
                }
                cur = next;
            };
            arcs.push(ViewArc::walk(ArcKind::Macro, mm, r, path, dst, hops));
        }
    }
    for (&s, targets) in g {
        for &t in targets.keys() {
            if !covered.contains(&(s, t)) {
                return Walked::NeedAnchor(s);
            }
        }
    }
    Walked::Arcs(arcs)
}

fn build(
    mm: &MooreMachine,
    g: &Graph,
    members: &BTreeSet<StateId>,
    unrolled: &BTreeMap<StateId, UnrolledLoop>,
    boundary: &BTreeSet<StateId>,
) -> (Vec<ViewNode>, Vec<ViewArc>) {
    let mut roles = base_nodes(mm, g, members, unrolled, boundary);
    let arcs = loop {
        match walk_all(mm, g, unrolled, &roles) {
            Walked::Arcs(a) => break a,
            Walked::NeedAnchor(s) => {
                roles.insert(s, NodeRole::Anchor);
            }
        }
    };
    let nodes = roles
        .into_iter()
        .map(|(id, role)| ViewNode {
            id,
            action: mm.action(id).expect("machine state"),
            role,
            decision_point: is_branching(g, unrolled, id),
        })
        .collect();
    (nodes, arcs)
}

fn finish(mut arcs: Vec<ViewArc>) -> Vec<ViewArc> {
    arcs.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    arcs
}

/// Replaces maximal non-branching chains of visited states by macro arcs.
/// Transitions between two drawn nodes stay plain, one arc per observation.
pub fn reduce_sequences<'a>(
    mm: &'a MooreMachine,
    counts: &VisitCounts,
    unrolled: &BTreeMap<StateId, UnrolledLoop>,
) -> ReducedView<'a> {
    let g = graph_from_counts(mm, counts);
    let mut members: BTreeSet<StateId> = counts.states.keys().copied().collect();
    members.insert(mm.start());
    let (nodes, arcs) = build(mm, &g, &members, unrolled, &BTreeSet::new());
    ReducedView {
        source: mm,
        nodes,
        arcs: finish(arcs),
        unrolled: unrolled.clone(),
        merged: false,
    }
}

/// Merges plain arcs that share source and destination into one abstract
/// arc labelled with the number of observations.
pub fn merge_parallel(mut view: ReducedView<'_>) -> ReducedView<'_> {
    let mut groups: BTreeMap<(StateId, StateId), Vec<ObsId>> = BTreeMap::new();
    let mut rest = Vec::new();
    for arc in view.arcs {
        if arc.kind == ArcKind::Plain {
            groups.entry((arc.src, arc.dst)).or_default().extend(arc.obs);
        } else {
            rest.push(arc);
        }
    }
    for ((src, dst), mut obs) in groups {
        obs.sort();
        if obs.len() == 1 {
            rest.push(ViewArc::plain(src, obs[0], dst));
        } else {
            rest.push(ViewArc {
                kind: ArcKind::Abstract,
                src,
                dst,
                length: 1,
                obs_count: obs.len(),
                obs,
                hidden_path: Vec::new(),
                hop_obs: Vec::new(),
                action_sequence: Vec::new(),
            });
        }
    }
    view.arcs = finish(rest);
    view.merged = true;
    view
}

/// Collapses the annotated warm-up steps `[0, warmup_end)` and termination
/// steps `[termination_start, end)` of every trace into boundary arcs.
///
/// The view is rebuilt from the transitions taken between the two indices;
/// states visited only outside that window disappear. Each distinct
/// warm-up (termination) path gets its own boundary arc.
pub fn mark_boundaries<'a>(
    view: ReducedView<'a>,
    traces: &[Trace],
    warmup_end: usize,
    termination_start: Option<usize>,
) -> Result<ReducedView<'a>, ReduceError> {
    let mm = view.source;
    let runs = replay(mm, traces)?;
    if let Some(t) = termination_start {
        if warmup_end > t {
            return Err(ReduceError::IndexOutOfRange {
                index: warmup_end,
                message: format!("warm-up end after termination start {t}"),
            });
        }
    }
    let mut middle: Vec<Hop> = Vec::new();
    let mut members = BTreeSet::new();
    let mut boundary = BTreeSet::new();
    let mut segments: BTreeMap<(StateId, Vec<StateId>, StateId), Vec<BTreeSet<ObsId>>> = BTreeMap::new();
    for run in &runs {
        let len = run.len();
        let end = termination_start.unwrap_or(len);
        if warmup_end > len {
            return Err(ReduceError::IndexOutOfRange {
                index: warmup_end,
                message: format!("episode has only {len} steps"),
            });
        }
        if end > len {
            return Err(ReduceError::IndexOutOfRange {
                index: end,
                message: format!("episode has only {len} steps"),
            });
        }
        let states: Vec<StateId> = std::iter::once(mm.start()).chain(run.iter().map(|h| h.2)).collect();
        let mut segment = |from: usize, to: usize| {
            if from == to {
                return;
            }
            let key = (states[from], states[from + 1..to].to_vec(), states[to]);
            let hops = segments.entry(key).or_insert_with(|| vec![BTreeSet::new(); to - from]);
            for (i, h) in run[from..to].iter().enumerate() {
                hops[i].insert(h.1);
            }
            boundary.insert(states[from]);
            boundary.insert(states[to]);
        };
        segment(0, warmup_end);
        segment(end, len);
        middle.extend_from_slice(&run[warmup_end..end]);
        members.extend(&states[warmup_end..=end]);
    }
    members.insert(mm.start());
    let g = graph_of(&middle);
    let (nodes, mut arcs) = build(mm, &g, &members, &view.unrolled, &boundary);
    for ((src, path, dst), hops) in segments {
        let hops = hops.into_iter().map(|h| h.into_iter().collect()).collect();
        arcs.push(ViewArc::walk(ArcKind::Boundary, mm, src, path, dst, hops));
    }
    let rebuilt = ReducedView {
        source: mm,
        nodes,
        arcs: finish(arcs),
        unrolled: view.unrolled,
        merged: false,
    };
    Ok(if view.merged { merge_parallel(rebuilt) } else { rebuilt })
}

/// Unrolling, sequence reduction, parallel merging and, if annotated,
/// boundary marking, in that order.
pub fn reduce_all<'a>(mm: &'a MooreMachine, traces: &[Trace], annotations: &Annotations) -> Result<ReducedView<'a>, ReduceError> {
    let counts = VisitCounts::from_hops(mm.start(), &replay(mm, traces)?);
    let unrolled = unroll_once_loops(mm, &counts);
    let view = merge_parallel(reduce_sequences(mm, &counts, &unrolled));
    match annotations {
        Annotations {
            warmup_end: None,
            termination_start: None,
        } => Ok(view),
        a => mark_boundaries(view, traces, a.warmup_end.unwrap_or(0), a.termination_start),
    }
}

/// Every transition `(state, obs, next)` the view's arcs stand for.
pub fn expand(view: &ReducedView<'_>) -> BTreeSet<(StateId, ObsId, StateId)> {
    let mut out = BTreeSet::new();
    for arc in &view.arcs {
        match arc.kind {
            ArcKind::Plain | ArcKind::Abstract => {
                out.extend(arc.obs.iter().map(|&o| (arc.src, o, arc.dst)));
            }
            ArcKind::Macro | ArcKind::Boundary => {
                let walk: Vec<StateId> = std::iter::once(arc.src)
                    .chain(arc.hidden_path.iter().copied())
                    .chain(std::iter::once(arc.dst))
                    .collect();
                for (w, obs) in walk.windows(2).zip(&arc.hop_obs) {
                    out.extend(obs.iter().map(|&o| (w[0], o, w[1])));
                }
            }
        }
    }
    out
}

/// Replays each trace through the transitions recovered by [`expand`] and
/// returns the emitted action sequences.
pub fn replay_expanded(view: &ReducedView<'_>, traces: &[Trace]) -> Result<Vec<Vec<usize>>, ReduceError> {
    let mm = view.source;
    let table: HashMap<(StateId, ObsId), StateId> = expand(view).into_iter().map(|(s, o, t)| ((s, o), t)).collect();
    traces
        .iter()
        .enumerate()
        .map(|(ti, trace)| {
            let mut state = mm.start();
            trace
                .steps
                .iter()
                .enumerate()
                .map(|(si, tuple)| {
                    let next = mm
                        .obs_id(&tuple.f)
                        .and_then(|o| table.get(&(state, o)))
                        .ok_or_else(|| ReduceError::ReplayMismatch {
                            trace: ti,
                            step: si,
                            message: format!("no expanded transition from {state} on {}", tuple.f),
                        })?;
                    state = *next;
                    Ok(mm.action(state).expect("machine state"))
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::automaton::figure_machine;
    use crate::automaton::{rollout_traces, stats, DirectCode, Fallback, MachineBuilder, TransitionTuple};
    use crate::reducer::visit_counts;

    fn trace_of(mm: &MooreMachine, hops: &[(u32, u32)]) -> Trace {
        let code = |s: u32| mm.state(StateId(s)).unwrap().code.clone();
        let mut cur = mm.start().0;
        let steps = hops
            .iter()
            .map(|&(o, t)| {
                let tuple = TransitionTuple {
                    h: code(cur),
                    a: mm.action(StateId(t)).unwrap(),
                    f: mm.obs_code(ObsId(o)).unwrap().clone(),
                    hn: code(t),
                };
                cur = t;
                tuple
            })
            .collect();
        Trace { ret: 0.0, steps }
    }

    fn check_expansion(view: &ReducedView<'_>, traces: &[Trace]) {
        let replayed = replay_expanded(view, traces).unwrap();
        for (t, actions) in traces.iter().zip(replayed) {
            assert_eq!(t.steps.iter().map(|s| s.a).collect::<Vec<_>>(), actions);
        }
        let counts = visit_counts(view.source(), traces).unwrap();
        let visited: BTreeSet<_> = counts
            .transitions
            .keys()
            .map(|&(s, o)| (s, o, view.source().transition(s, o).unwrap().target))
            .collect();
        assert_eq!(expand(view), visited);
    }

    /// Start, five chain states, a decision point, then two exits.
    fn chain_into_dp() -> (MooreMachine, Vec<Trace>) {
        let mut b = MachineBuilder::new(3, 1);
        for i in 0..9 {
            b.auto_state(i, (i % 2) as usize);
        }
        b.auto_obs(0).auto_obs(1);
        for i in 0..6 {
            b.trans(i, 0, i + 1, 2);
        }
        b.trans(6, 0, 7, 1).trans(6, 1, 8, 1);
        let mm = b.build().unwrap();
        let base: Vec<(u32, u32)> = (1..=6).map(|i| (0, i)).collect();
        let mut a = base.clone();
        a.push((0, 7));
        let mut c = base;
        c.push((1, 8));
        let traces = vec![trace_of(&mm, &a), trace_of(&mm, &c)];
        (mm, traces)
    }

    #[test]
    fn five_state_chain_is_one_macro_arc() {
        let (mm, traces) = chain_into_dp();
        let view = reduce_all(&mm, &traces, &Annotations::default()).unwrap();
        let macros: Vec<_> = view.arcs.iter().filter(|a| a.kind == ArcKind::Macro).collect();
        assert_eq!(macros.len(), 1);
        assert_eq!(macros[0].length, 5);
        assert_eq!(macros[0].hidden_path, (1..=5).map(StateId).collect::<Vec<_>>());
        assert_eq!(macros[0].action_sequence, vec![1, 0, 1, 0, 1]);
        assert_eq!(view.decision_points(), vec![StateId(6)]);
        check_expansion(&view, &traces);
    }

    #[test]
    fn chain_broken_by_a_decision_point_gives_two_macros() {
        // 0 -> 1 -> 2 (dp) -> {3 -> 4 -> 5, 6}
        let mm = MachineBuilder::new(2, 1)
            .auto_state(0, 0)
            .auto_state(1, 0)
            .auto_state(2, 0)
            .auto_state(3, 1)
            .auto_state(4, 1)
            .auto_state(5, 1)
            .auto_state(6, 1)
            .auto_obs(0)
            .auto_obs(1)
            .trans(0, 0, 1, 2)
            .trans(1, 0, 2, 2)
            .trans(2, 0, 3, 1)
            .trans(3, 0, 4, 1)
            .trans(4, 0, 5, 1)
            .trans(2, 1, 6, 1)
            .build()
            .unwrap();
        let traces = vec![
            trace_of(&mm, &[(0, 1), (0, 2), (0, 3), (0, 4), (0, 5)]),
            trace_of(&mm, &[(0, 1), (0, 2), (1, 6)]),
        ];
        let view = reduce_all(&mm, &traces, &Annotations::default()).unwrap();
        let macros: Vec<_> = view.arcs.iter().filter(|a| a.kind == ArcKind::Macro).map(|a| a.length).collect();
        assert_eq!(macros, vec![1, 2]);
        check_expansion(&view, &traces);
    }

    #[test]
    fn parallel_arcs_and_self_loops_merge() {
        let mut b = MachineBuilder::new(1, 1);
        b.auto_state(0, 0).auto_state(1, 1);
        for o in 0..3 {
            b.auto_obs(o);
        }
        let mm = b
            .trans(0, 0, 1, 1)
            .trans(0, 1, 1, 1)
            .trans(0, 2, 0, 1)
            .trans(1, 0, 1, 1)
            .trans(1, 1, 1, 1)
            .trans(1, 2, 1, 1)
            .build()
            .unwrap();
        let traces = vec![
            trace_of(&mm, &[(2, 0), (0, 1), (0, 1), (1, 1), (2, 1)]),
            trace_of(&mm, &[(1, 1)]),
        ];
        let view = reduce_all(&mm, &traces, &Annotations::default()).unwrap();
        let abs: Vec<_> = view
            .arcs
            .iter()
            .filter(|a| a.kind == ArcKind::Abstract)
            .map(|a| (a.src.0, a.dst.0, a.obs_count))
            .collect();
        assert_eq!(abs, vec![(0, 1, 2), (1, 1, 3)]);
        check_expansion(&view, &traces);
        let before: BTreeSet<_> = view.decision_points().into_iter().collect();
        let unmerged = reduce_sequences(&mm, &visit_counts(&mm, &traces).unwrap(), &BTreeMap::new());
        assert_eq!(before, unmerged.decision_points().into_iter().collect());
    }

    /// `0 -> 1 -> 2 -> 3 -> 1 -> 4`: the loop through 1 runs once.
    fn once_loop() -> (MooreMachine, Vec<Trace>) {
        let mm = MachineBuilder::new(2, 1)
            .auto_state(0, 0)
            .auto_state(1, 1)
            .auto_state(2, 0)
            .auto_state(3, 1)
            .auto_state(4, 0)
            .auto_state(5, 0)
            .auto_obs(0)
            .auto_obs(1)
            .trans(0, 0, 1, 1)
            .trans(1, 0, 2, 1)
            .trans(2, 0, 3, 1)
            .trans(3, 0, 1, 1)
            .trans(1, 1, 4, 1)
            .trans(4, 0, 5, 1)
            .build()
            .unwrap();
        let traces = vec![trace_of(&mm, &[(0, 1), (0, 2), (0, 3), (0, 1), (1, 4), (0, 5)])];
        (mm, traces)
    }

    #[test]
    fn loop_traversed_once_is_unrolled() {
        let (mm, traces) = once_loop();
        let counts = visit_counts(&mm, &traces).unwrap();
        let unrolled = unroll_once_loops(&mm, &counts);
        assert_eq!(
            unrolled.get(&StateId(1)),
            Some(&UnrolledLoop {
                first: StateId(2),
                exit: StateId(4)
            })
        );
        let view = reduce_all(&mm, &traces, &Annotations::default()).unwrap();
        assert!(view.decision_points().is_empty());
        assert_eq!(view.arcs.len(), 1);
        let arc = &view.arcs[0];
        assert_eq!(arc.kind, ArcKind::Macro);
        assert_eq!(arc.hidden_path, [1, 2, 3, 1, 4].map(StateId).to_vec());
        check_expansion(&view, &traces);
    }

    #[test]
    fn loop_traversed_three_times_stays() {
        let (mm, _) = once_loop();
        // 0 1 2 3 1 2 3 1 2 3 1 4 5
        let hops = [
            (0, 1), (0, 2), (0, 3), (0, 1), (0, 2), (0, 3), (0, 1), (0, 2), (0, 3), (0, 1), (1, 4), (0, 5),
        ];
        let traces = vec![trace_of(&mm, &hops)];
        let counts = visit_counts(&mm, &traces).unwrap();
        assert!(unroll_once_loops(&mm, &counts).is_empty());
        let view = reduce_all(&mm, &traces, &Annotations::default()).unwrap();
        assert_eq!(view.decision_points(), vec![StateId(1)]);
        check_expansion(&view, &traces);
    }

    #[test]
    fn nested_once_loops_unroll_inner_first() {
        // 0 -> 1 -> 2 -> 3 -> 2 -> 4 -> 1 -> 5
        let mm = MachineBuilder::new(2, 1)
            .auto_state(0, 0)
            .auto_state(1, 1)
            .auto_state(2, 0)
            .auto_state(3, 1)
            .auto_state(4, 0)
            .auto_state(5, 1)
            .auto_obs(0)
            .auto_obs(1)
            .trans(0, 0, 1, 1)
            .trans(1, 0, 2, 1)
            .trans(2, 0, 3, 1)
            .trans(3, 0, 2, 1)
            .trans(2, 1, 4, 1)
            .trans(4, 0, 1, 1)
            .trans(1, 1, 5, 1)
            .build()
            .unwrap();
        let traces = vec![trace_of(&mm, &[(0, 1), (0, 2), (0, 3), (0, 2), (1, 4), (0, 1), (1, 5)])];
        let counts = visit_counts(&mm, &traces).unwrap();
        let unrolled = unroll_once_loops(&mm, &counts);
        assert_eq!(unrolled.keys().copied().collect::<Vec<_>>(), vec![StateId(1), StateId(2)]);
        let view = reduce_all(&mm, &traces, &Annotations::default()).unwrap();
        assert_eq!(view.arcs.len(), 1);
        check_expansion(&view, &traces);
    }

    #[test]
    fn pure_cycle_gets_an_anchor() {
        let mm = MachineBuilder::new(2, 1)
            .auto_state(0, 0)
            .auto_state(1, 1)
            .auto_state(2, 0)
            .auto_obs(0)
            .trans(0, 0, 1, 1)
            .trans(1, 0, 2, 2)
            .trans(2, 0, 1, 1)
            .build()
            .unwrap();
        let traces = vec![trace_of(&mm, &[(0, 1), (0, 2), (0, 1), (0, 2)])];
        let view = reduce_all(&mm, &traces, &Annotations::default()).unwrap();
        assert!(view.nodes.iter().any(|n| n.role == NodeRole::Anchor));
        check_expansion(&view, &traces);
    }

    #[test]
    fn figure_machine_reduces_to_one_decision_point() {
        let mm = figure_machine();
        // Episodes: 0 1 2 (3|4) 5 6 2 ... through the S5-S6 parallel arcs.
        let mut traces = Vec::new();
        for (branch, obs56) in [(3u32, 5u32), (4, 6), (3, 7), (3, 5), (4, 5), (3, 6)] {
            let mid = if branch == 3 { (2, 3) } else { (3, 4) };
            traces.push(trace_of(&mm, &[(0, 1), (1, 2), mid, (4, 5), (obs56, 6), (8, 2)]));
        }
        let before = stats(&mm);
        let view = reduce_all(&mm, &traces, &Annotations::default()).unwrap();
        assert_eq!(stats(&mm), before);
        assert_eq!(view.decision_points(), vec![StateId(2)]);
        let kinds: BTreeSet<_> = view.arcs.iter().map(|a| a.kind).collect();
        assert!(kinds.contains(&ArcKind::Macro));
        check_expansion(&view, &traces);
    }

    #[test]
    fn warmup_becomes_boundary_arc() {
        let (mm, traces) = chain_into_dp();
        let none = reduce_all(&mm, &traces, &Annotations::default()).unwrap();
        let zero = reduce_all(
            &mm,
            &traces,
            &Annotations {
                warmup_end: Some(0),
                termination_start: None,
            },
        )
        .unwrap();
        assert_eq!(none.arcs, zero.arcs);
        assert_eq!(none.nodes, zero.nodes);

        let view = reduce_all(
            &mm,
            &traces,
            &Annotations {
                warmup_end: Some(4),
                termination_start: None,
            },
        )
        .unwrap();
        let b: Vec<_> = view.arcs.iter().filter(|a| a.kind == ArcKind::Boundary).collect();
        assert_eq!(b.len(), 1);
        assert_eq!((b[0].src, b[0].dst, b[0].length), (StateId(0), StateId(4), 4));
        assert!(view.node(StateId(2)).is_none());
        assert_eq!(view.decision_points(), vec![StateId(6)]);
        check_expansion(&view, &traces);
    }

    #[test]
    fn termination_phase_becomes_boundary_arcs() {
        let (mm, traces) = chain_into_dp();
        let view = reduce_all(
            &mm,
            &traces,
            &Annotations {
                warmup_end: Some(2),
                termination_start: Some(5),
            },
        )
        .unwrap();
        let b: Vec<_> = view
            .arcs
            .iter()
            .filter(|a| a.kind == ArcKind::Boundary)
            .map(|a| (a.src.0, a.dst.0, a.length))
            .collect();
        assert_eq!(b, vec![(0, 2, 2), (5, 7, 2), (5, 8, 2)]);
        check_expansion(&view, &traces);
    }

    #[test]
    fn bad_indices_are_rejected() {
        let (mm, traces) = chain_into_dp();
        for (w, t) in [(5, Some(3)), (0, Some(100))] {
            let err = reduce_all(
                &mm,
                &traces,
                &Annotations {
                    warmup_end: Some(w),
                    termination_start: t,
                },
            )
            .unwrap_err();
            assert!(matches!(err, ReduceError::IndexOutOfRange { .. }));
        }
        let err = reduce_all(
            &mm,
            &traces,
            &Annotations {
                warmup_end: Some(100),
                termination_start: None,
            },
        );
        assert!(err.is_err());
    }

    #[test]
    fn synthetic_rollouts_expand_exactly() {
        let mm = figure_machine();
        let spec = crate::envs::SyntheticSpec::new(mm.clone(), 40);
        let mut env = crate::envs::SyntheticEnv::new(spec).unwrap();
        let traces = rollout_traces(&mm, &mut env, &[0, 1, 2, 3], Fallback::Fail, &DirectCode).unwrap();
        let view = reduce_all(&mm, &traces, &Annotations::default()).unwrap();
        check_expansion(&view, &traces);
    }
}
