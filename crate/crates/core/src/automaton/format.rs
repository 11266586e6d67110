//! Line-oriented text format:
//!
//! ```text
//! mm v1 Nh=2 No=1
//! start 0
//! state 0 action 1 code +-
//! obs 0 code 0
//! trans 0 0 0 count 4
//! ```
//!
//! Blank lines and lines starting with `#` are ignored.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::{AutomatonError, MooreMachine, ObsId, StateId, StateRecord, Transition};
use crate::TernaryCode;

pub fn serialize(mm: &MooreMachine) -> String {
    let mut out = String::new();
    writeln!(out, "mm v1 Nh={} No={}", mm.hidden_len(), mm.obs_len()).unwrap();
    writeln!(out, "start {}", mm.start().0).unwrap();
    for (id, s) in mm.states() {
        writeln!(out, "state {} action {} code {}", id.0, s.action, s.code).unwrap();
    }
    for (id, code) in mm.observations() {
        writeln!(out, "obs {} code {}", id.0, code).unwrap();
    }
    for (&(s, o), t) in mm.transitions() {
        writeln!(out, "trans {} {} {} count {}", s.0, o.0, t.target.0, t.count).unwrap();
    }
    // An empty code leaves a trailing space; keep lines clean.
    out.replace(" \n", "\n")
}

fn err(line: usize, message: impl Into<String>) -> AutomatonError {
    AutomatonError::Parse {
        line,
        message: message.into(),
    }
}

fn num<T: std::str::FromStr>(line: usize, what: &str, s: &str) -> Result<T, AutomatonError> {
    s.parse().map_err(|_| err(line, format!("invalid {what} `{s}`")))
}

fn code(line: usize, s: Option<&&str>, len: usize) -> Result<TernaryCode, AutomatonError> {
    let s = s.copied().unwrap_or("");
    let c = TernaryCode::parse_symbols(s).ok_or_else(|| err(line, format!("invalid code `{s}`")))?;
    if c.len() != len {
        return Err(err(line, format!("code `{s}` has length {}, expected {len}", c.len())));
    }
    Ok(c)
}

pub fn deserialize(text: &str) -> Result<MooreMachine, AutomatonError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (line, header) = lines.next().ok_or_else(|| err(1, "empty input"))?;
    let (hidden_len, obs_len) = match header.split_whitespace().collect::<Vec<_>>().as_slice() {
        ["mm", "v1", nh, no] => {
            let nh = nh.strip_prefix("Nh=").ok_or_else(|| err(line, "expected Nh="))?;
            let no = no.strip_prefix("No=").ok_or_else(|| err(line, "expected No="))?;
            (num(line, "Nh", nh)?, num(line, "No", no)?)
        }
        _ => return Err(err(line, "expected header `mm v1 Nh=<int> No=<int>`")),
    };

    let mut start = None;
    let mut states = BTreeMap::new();
    let mut obs = BTreeMap::new();
    let mut transitions = BTreeMap::new();
    let mut trans_lines = Vec::new();
    let mut last = line;

    for (line, text) in lines {
        last = line;
        let words: Vec<&str> = text.split_whitespace().collect();
        match words.as_slice() {
            ["start", id] => {
                if start.replace(StateId(num(line, "state id", id)?)).is_some() {
                    return Err(err(line, "duplicate start line"));
                }
            }
            ["state", id, "action", a, "code", rest @ ..] if rest.len() <= 1 => {
                let id = StateId(num(line, "state id", id)?);
                let record = StateRecord {
                    action: num(line, "action", a)?,
                    code: code(line, rest.first(), hidden_len)?,
                };
                if states.insert(id, record).is_some() {
                    return Err(err(line, format!("duplicate state {}", id.0)));
                }
            }
            ["obs", id, "code", rest @ ..] if rest.len() <= 1 => {
                let id = ObsId(num(line, "obs id", id)?);
                if obs.insert(id, code(line, rest.first(), obs_len)?).is_some() {
                    return Err(err(line, format!("duplicate obs {}", id.0)));
                }
            }
            ["trans", s, o, t, "count", c] => {
                let key = (StateId(num(line, "state id", s)?), ObsId(num(line, "obs id", o)?));
                let tr = Transition {
                    target: StateId(num(line, "state id", t)?),
                    count: num(line, "count", c)?,
                };
                if tr.count == 0 {
                    return Err(err(line, "transition count must be at least 1"));
                }
                if transitions.insert(key, tr).is_some() {
                    return Err(err(line, format!("duplicate transition key ({s}, {o})")));
                }
                trans_lines.push((line, key, tr.target));
            }
            _ => return Err(err(line, format!("unrecognized line `{text}`"))),
        }
    }

    for (line, (s, o), t) in trans_lines {
        for id in [s, t] {
            if !states.contains_key(&id) {
                return Err(err(line, format!("unknown state {}", id.0)));
            }
        }
        if !obs.contains_key(&o) {
            return Err(err(line, format!("unknown obs {}", o.0)));
        }
    }
    let start = start.ok_or_else(|| err(last, "missing start line"))?;
    MooreMachine::new(hidden_len, obs_len, start, states, obs, transitions)
        .map_err(|e| err(last, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::automaton::figure_machine;
    use crate::automaton::MachineBuilder;
    use proptest::prelude::*;

    fn three() -> MooreMachine {
        MachineBuilder::new(2, 1)
            .auto_state(0, 0)
            .auto_state(1, 1)
            .auto_state(2, 0)
            .auto_obs(0)
            .auto_obs(1)
            .trans(0, 0, 1, 3)
            .trans(1, 1, 2, 1)
            .trans(2, 0, 0, 7)
            .build()
            .unwrap()
    }

    #[test]
    fn round_trip_small() {
        let mm = three();
        assert_eq!(deserialize(&serialize(&mm)).unwrap(), mm);
        let fig = figure_machine();
        assert_eq!(deserialize(&serialize(&fig)).unwrap(), fig);
    }

    #[test]
    fn empty_codes_round_trip() {
        let mm = MachineBuilder::new(0, 0).auto_state(0, 2).build().unwrap();
        let text = serialize(&mm);
        assert!(text.contains("state 0 action 2 code\n"));
        assert_eq!(deserialize(&text).unwrap(), mm);
    }

    fn line_of(e: AutomatonError) -> usize {
        match e {
            AutomatonError::Parse { line, .. } => line,
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn dangling_target_is_reported_with_line() {
        let text = "mm v1 Nh=1 No=1\nstart 0\nstate 0 action 0 code 0\nobs 0 code +\ntrans 0 0 5 count 1\n";
        assert_eq!(line_of(deserialize(text).unwrap_err()), 5);
    }

    #[test]
    fn duplicate_key_is_reported_with_line() {
        let text = "mm v1 Nh=1 No=1\nstart 0\nstate 0 action 0 code 0\nobs 0 code +\n\
                    trans 0 0 0 count 1\ntrans 0 0 0 count 2\n";
        assert_eq!(line_of(deserialize(text).unwrap_err()), 6);
    }

    #[test]
    fn malformed_inputs() {
        for text in [
            "",
            "mm v2 Nh=1 No=1\n",
            "mm v1 Nh=1 No=1\nstate 0 action 0 code 0\n",
            "mm v1 Nh=1 No=1\nstart 0\nstate 0 action 0 code 00\n",
            "mm v1 Nh=1 No=1\nstart 0\nstate 0 action 0 code x\n",
            "mm v1 Nh=1 No=1\nstart 0\nstate 0 action 0 code 0\nobs 0 code +\ntrans 0 0 0 count 0\n",
            "mm v1 Nh=1 No=1\nstart 3\nstate 0 action 0 code 0\n",
        ] {
            assert!(deserialize(text).is_err(), "accepted {text:?}");
        }
    }

    prop_compose! {
        fn arb_machine()(n in 1u32..8, k in 0u32..4)(
            actions in prop::collection::vec(0usize..3, n as usize),
            edges in prop::collection::vec((0..n, 0..k.max(1), 0..n, 1u64..50), 0..20),
            start in 0..n,
            k in Just(k),
        ) -> MooreMachine {
            let mut b = MachineBuilder::new(2, 2);
            for (i, a) in actions.iter().enumerate() {
                b.auto_state(i as u32, *a);
            }
            for o in 0..k {
                b.auto_obs(o);
            }
            if k > 0 {
                for (s, o, t, c) in edges {
                    b.trans(s, o, t, c);
                }
            }
            b.start(start).build().unwrap()
        }
    }

    proptest! {
        #[test]
        fn serialize_round_trips(mm in arb_machine()) {
            prop_assert_eq!(deserialize(&serialize(&mm)).unwrap(), mm);
        }
    }
}
