use std::collections::BTreeSet;
use std::fmt::Write as _;

use super::{ArcKind, NodeRole, ReducedView};
use crate::automaton::{decision_points, MooreMachine};

fn node_line(out: &mut String, id: u32, action: usize, shape: &str, start: bool) {
    let peripheries = if start { ", peripheries=2" } else { "" };
    writeln!(out, "  S{id} [label=\"S{id}\\na={action}\", shape={shape}{peripheries}];").unwrap();
}

/// Every state and transition, one edge per observation. Decision points are
/// drawn as diamonds and the start state with a double border.
pub fn machine_to_dot(mm: &MooreMachine) -> String {
    let dps: BTreeSet<_> = decision_points(mm).into_iter().collect();
    let mut out = String::from("digraph machine {\n  rankdir=LR;\n");
    for (id, s) in mm.states() {
        let shape = if dps.contains(id) { "diamond" } else { "ellipse" };
        node_line(&mut out, id.0, s.action, shape, *id == mm.start());
    }
    for (&(s, o), t) in mm.transitions() {
        writeln!(out, "  S{} -> S{} [label=\"O{} ({})\"];", s.0, t.target.0, o.0, t.count).unwrap();
    }
    out.push_str("}\n");
    out
}

/// Macro arcs are dotted and labelled with their length, abstract arcs with
/// `k obs`, boundary arcs are doubled and labelled `||n`.
pub fn view_to_dot(view: &ReducedView<'_>) -> String {
    let start = view.source().start();
    let mut out = String::from("digraph reduced {\n  rankdir=LR;\n");
    for n in &view.nodes {
        let shape = match n.role {
            _ if n.decision_point => "diamond",
            NodeRole::Terminal => "box",
            NodeRole::Anchor => "circle",
            _ => "ellipse",
        };
        node_line(&mut out, n.id.0, n.action, shape, n.id == start);
    }
    for a in &view.arcs {
        let attrs = match a.kind {
            ArcKind::Plain => format!("label=\"O{}\"", a.obs[0].0),
            ArcKind::Abstract => format!("label=\"{} obs\"", a.obs_count),
            ArcKind::Macro => format!("style=dotted, label=\"{}\"", a.length),
            ArcKind::Boundary => format!("color=\"black:black\", label=\"||{}\"", a.length),
        };
        writeln!(out, "  S{} -> S{} [{attrs}];", a.src.0, a.dst.0).unwrap();
    }
    out.push_str("}\n");
    out
}
