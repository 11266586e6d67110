use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::{Error, Result, TernaryCode};

/// One discretized step: in hidden state `h` the network observed `f`, moved
/// to `hn` and emitted action `a`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionTuple {
    pub h: TernaryCode,
    pub a: usize,
    pub f: TernaryCode,
    pub hn: TernaryCode,
}

/// One episode of tuples plus the episode return.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    #[serde(rename = "return")]
    pub ret: f64,
    pub steps: Vec<TransitionTuple>,
}

/// Reads a JSON-lines trace file: one episode object per non-empty line.
pub fn read_traces<R: BufRead>(reader: R) -> Result<Vec<Trace>> {
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(Error::Json)?);
    }
    Ok(out)
}

pub fn write_traces<W: Write>(mut writer: W, traces: &[Trace]) -> Result<()> {
    for t in traces {
        serde_json::to_writer(&mut writer, t)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}
