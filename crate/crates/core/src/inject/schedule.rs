use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{InjectionPlan, InjectionType};
use crate::refvm::{Opcode, TraceRecord};

/// Campaign-wide count of injections per mnemonic.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct InjectionCounters(BTreeMap<Opcode, u64>);

impl InjectionCounters {
    pub fn new() -> InjectionCounters {
        InjectionCounters::default()
    }

    pub fn get(&self, op: Opcode) -> u64 {
        self.0.get(&op).copied().unwrap_or(0)
    }

    pub fn increment(&mut self, op: Opcode) {
        *self.0.entry(op).or_insert(0) += 1;
    }

    pub fn iter(&self) -> impl Iterator<Item = (Opcode, u64)> + '_ {
        self.0.iter().map(|(op, n)| (*op, *n))
    }

    pub fn total(&self) -> u64 {
        self.0.values().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScheduleDecision {
    pub plan: InjectionPlan,
    pub mnemonic: Opcode,
    /// Least-injected mnemonics of the trace at decision time.
    pub argmin: Vec<Opcode>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ScheduleError {
    #[error("trace has no injectable rows")]
    EmptyTrace,
    #[error("no injection types enabled")]
    NoTypes,
}

/// Picks the least-injected mnemonic present in the trace (ties broken
/// uniformly), a uniform row among its occurrences and a uniform enabled
/// type, then bumps that mnemonic's counter. `halt` rows are never targeted.
pub fn schedule<R: Rng + ?Sized>(
    trace: &TraceRecord,
    counters: &mut InjectionCounters,
    enabled: &BTreeSet<InjectionType>,
    rng: &mut R,
) -> Result<ScheduleDecision, ScheduleError> {
    if enabled.is_empty() {
        return Err(ScheduleError::NoTypes);
    }
    let mut rows_by_op: BTreeMap<Opcode, Vec<usize>> = BTreeMap::new();
    for row in trace.rows.iter().filter(|r| r.instr.op != Opcode::Halt) {
        rows_by_op.entry(row.instr.op).or_default().push(row.step);
    }
    let min = rows_by_op.keys().map(|op| counters.get(*op)).min().ok_or(ScheduleError::EmptyTrace)?;
    let argmin: Vec<Opcode> = rows_by_op.keys().copied().filter(|op| counters.get(*op) == min).collect();
    let mnemonic = argmin[rng.gen_range(0..argmin.len())];
    let rows = &rows_by_op[&mnemonic];
    let target_step = rows[rng.gen_range(0..rows.len())];
    let types: Vec<InjectionType> = enabled.iter().copied().collect();
    let kind = types[rng.gen_range(0..types.len())];
    let payload_seed = rng.gen();
    counters.increment(mnemonic);
    Ok(ScheduleDecision { plan: InjectionPlan { kind, target_step, payload_seed }, mnemonic, argmin })
}
