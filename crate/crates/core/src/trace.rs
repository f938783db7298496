//! Per-instruction execution trace, its line format, and projections.
//!
//! One line per executed instruction:
//! `tick<TAB>tcb<TAB>ip<TAB>mnemonic<TAB>operand<TAB>tos`, all decimal, with
//! `-` standing in for an empty stack. `ip` is the address the instruction
//! was fetched from and `tos` is the top of stack before it executed.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::isa::Opcode;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceEntry {
    pub tick: u64,
    pub tcb: u32,
    pub ip: u32,
    pub opcode: Opcode,
    pub operand: i32,
    pub tos: Option<i32>,
}

impl TraceEntry {
    /// Same instruction in the same thread, ignoring when it ran.
    pub fn same_step(&self, other: &TraceEntry) -> bool {
        self.tcb == other.tcb
            && self.ip == other.ip
            && self.opcode == other.opcode
            && self.operand == other.operand
            && self.tos == other.tos
    }
}

impl fmt::Display for TraceEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{}\t{}\t{}\t{}\t",
            self.tick,
            self.tcb,
            self.ip,
            self.opcode.mnemonic(),
            self.operand
        )?;
        match self.tos {
            Some(v) => write!(f, "{v}"),
            None => f.write_str("-"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed trace line: {0}")]
pub struct ParseTraceError(pub String);

impl FromStr for TraceEntry {
    type Err = ParseTraceError;

    fn from_str(line: &str) -> Result<Self, Self::Err> {
        let bad = || ParseTraceError(line.to_string());
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 6 {
            return Err(bad());
        }
        Ok(TraceEntry {
            tick: fields[0].parse().map_err(|_| bad())?,
            tcb: fields[1].parse().map_err(|_| bad())?,
            ip: fields[2].parse().map_err(|_| bad())?,
            opcode: Opcode::from_mnemonic(fields[3]).ok_or_else(bad)?,
            operand: fields[4].parse().map_err(|_| bad())?,
            tos: match fields[5] {
                "-" => None,
                v => Some(v.parse().map_err(|_| bad())?),
            },
        })
    }
}

pub fn render(entries: &[TraceEntry]) -> String {
    let mut out = String::with_capacity(entries.len() * 24);
    for e in entries {
        out.push_str(&e.to_string());
        out.push('\n');
    }
    out
}

pub fn parse(text: &str) -> Result<Vec<TraceEntry>, ParseTraceError> {
    text.lines().filter(|l| !l.is_empty()).map(str::parse).collect()
}

/// The subsequence of entries executed by one thread.
pub fn project(entries: &[TraceEntry], tcb: u32) -> Vec<TraceEntry> {
    entries.iter().filter(|e| e.tcb == tcb).copied().collect()
}

/// Entries of every thread except `root`, renumbered so the tick column
/// counts positions within the view. Two runs that interleave their worker
/// threads identically produce identical views, whatever the root did.
pub fn workers_view(entries: &[TraceEntry], root: u32) -> Vec<TraceEntry> {
    entries
        .iter()
        .filter(|e| e.tcb != root)
        .enumerate()
        .map(|(i, e)| TraceEntry { tick: i as u64 + 1, ..*e })
        .collect()
}

/// Maximal runs of consecutive entries from the same thread, as
/// `(tcb, length)`.
pub fn bursts(entries: &[TraceEntry]) -> Vec<(u32, usize)> {
    let mut out: Vec<(u32, usize)> = Vec::new();
    for e in entries {
        match out.last_mut() {
            Some((tcb, len)) if *tcb == e.tcb => *len += 1,
            _ => out.push((e.tcb, 1)),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceDiff {
    Identical,
    /// 1-based line number of the first difference, with both sides
    /// (`None` when one trace ended early).
    Diverges { line: usize, left: Option<String>, right: Option<String> },
}

/// Line-wise comparison of two rendered traces.
pub fn diff_text(left: &str, right: &str) -> TraceDiff {
    let mut a = left.lines();
    let mut b = right.lines();
    let mut line = 0;
    loop {
        line += 1;
        match (a.next(), b.next()) {
            (None, None) => return TraceDiff::Identical,
            (x, y) if x == y => continue,
            (x, y) => {
                return TraceDiff::Diverges {
                    line,
                    left: x.map(str::to_string),
                    right: y.map(str::to_string),
                }
            }
        }
    }
}
