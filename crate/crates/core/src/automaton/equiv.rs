use std::collections::HashSet;

use super::{step, AutomatonError, Fallback, MooreMachine, StateId};

/// True iff both machines emit the same actions on every observation string
/// of length at most `depth`, running from their start states with the
/// most-frequent-branch fallback. Reaching a dead end counts as an output, so
/// two machines that both stop on the same prefix agree there.
///
/// Pairs of states already explored at the same remaining depth are not
/// expanded again; this prunes only repeated work, not strings.
pub fn equivalent(a: &MooreMachine, b: &MooreMachine, depth: usize) -> Result<bool, AutomatonError> {
    if a.observations() != b.observations() {
        return Err(AutomatonError::AlphabetMismatch);
    }
    let alphabet: Vec<_> = a.observations().keys().copied().collect();
    let mut seen: HashSet<(StateId, StateId, usize)> = HashSet::new();
    let mut stack = vec![(a.start(), b.start(), depth)];
    while let Some((sa, sb, left)) = stack.pop() {
        if left == 0 || !seen.insert((sa, sb, left)) {
            continue;
        }
        for &o in &alphabet {
            let ra = step(a, sa, o, Fallback::MostFrequentBranch);
            let rb = step(b, sb, o, Fallback::MostFrequentBranch);
            match (ra, rb) {
                (Ok((ta, x)), Ok((tb, y))) => {
                    if x != y {
                        return Ok(false);
                    }
                    stack.push((ta, tb, left - 1));
                }
                (Err(AutomatonError::DeadEnd(_)), Err(AutomatonError::DeadEnd(_))) => {}
                (Err(e), _) | (_, Err(e)) if !matches!(e, AutomatonError::DeadEnd(_)) => return Err(e),
                _ => return Ok(false),
            }
        }
    }
    Ok(true)
}
