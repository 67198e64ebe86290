use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::isa::{isa_semantics, load_extend, MemAccess, Memory};
use super::trace::TraceRecord;
use super::{ExitStatus, Format, Opcode, RefProgram, OUTPUT_REG};
use crate::il::Word;

/// Seeded verifier weaknesses (soundness) and defects (completeness).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Weakness {
    /// rs2 operand of three-register ops is unconstrained.
    #[serde(rename = "W_TRIREG")]
    TriReg,
    /// Low byte of stored and loaded values is unconstrained.
    #[serde(rename = "W_STORE_LOW")]
    StoreLow,
    /// Immediate of `lui` is unconstrained.
    #[serde(rename = "W_LUI_IMM")]
    LuiImm,
    /// Traces shorter than 256 rows are rejected.
    #[serde(rename = "D_SHORT_TRACE")]
    ShortTrace,
    /// Cycle count is off by one in the padded-length check.
    #[serde(rename = "D_CYCLE_OFF_BY_ONE")]
    CycleOffByOne,
}

impl Weakness {
    pub const ALL: [Weakness; 5] =
        [Weakness::TriReg, Weakness::StoreLow, Weakness::LuiImm, Weakness::ShortTrace, Weakness::CycleOffByOne];

    pub fn name(self) -> &'static str {
        match self {
            Weakness::TriReg => "W_TRIREG",
            Weakness::StoreLow => "W_STORE_LOW",
            Weakness::LuiImm => "W_LUI_IMM",
            Weakness::ShortTrace => "D_SHORT_TRACE",
            Weakness::CycleOffByOne => "D_CYCLE_OFF_BY_ONE",
        }
    }

    pub fn is_soundness(self) -> bool {
        matches!(self, Weakness::TriReg | Weakness::StoreLow | Weakness::LuiImm)
    }
}

impl fmt::Display for Weakness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Weakness {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Weakness::ALL
            .into_iter()
            .find(|w| w.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown weakness `{s}`"))
    }
}

pub type WeaknessSet = BTreeSet<Weakness>;

/// Length below which the short-trace defect rejects.
const SHORT_TRACE_ROWS: usize = 256;
/// Row padding granularity used by the cycle-count check.
const CYCLE_PADDING: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ConstraintId {
    /// Fetched opcode, rd and immediate match the program.
    C1,
    /// Operand values match the register file.
    C2,
    /// Result and store value follow the instruction semantics.
    C3,
    /// Control flow: pc continuity and next pc.
    C4,
    /// Loads return the current memory contents.
    C5,
    /// Clean halt with the output register as final output.
    C6,
    /// Minimum trace length.
    MinLength,
    /// Padded cycle-count consistency.
    CycleCount,
}

impl fmt::Display for ConstraintId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub constraint: ConstraintId,
    pub row: usize,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Accept,
    Reject(Rejection),
}

impl Decision {
    pub fn is_accept(&self) -> bool {
        matches!(self, Decision::Accept)
    }

    pub fn rejection(&self) -> Option<&Rejection> {
        match self {
            Decision::Accept => None,
            Decision::Reject(r) => Some(r),
        }
    }
}

fn reject(constraint: ConstraintId, row: usize, detail: impl Into<String>) -> Decision {
    Decision::Reject(Rejection { constraint, row, detail: detail.into() })
}

/// Replays a shadow machine over the trace and checks constraints C1-C6.
/// Only `program` and `trace` are consulted.
pub fn verify(program: &RefProgram, trace: &TraceRecord, weaknesses: &WeaknessSet) -> Decision {
    use ConstraintId::*;
    let rows = &trace.rows;
    if weaknesses.contains(&Weakness::ShortTrace) && rows.len() < SHORT_TRACE_ROWS {
        return reject(MinLength, 0, format!("{} rows < {SHORT_TRACE_ROWS}", rows.len()));
    }
    if weaknesses.contains(&Weakness::CycleOffByOne) {
        let cycles = rows.len().saturating_sub(1);
        let padded = cycles.div_ceil(CYCLE_PADDING) * CYCLE_PADDING;
        if padded < rows.len() {
            return reject(CycleCount, rows.len().saturating_sub(1), format!("padded {padded} < {} rows", rows.len()));
        }
    }
    let tri_reg = weaknesses.contains(&Weakness::TriReg);
    let store_low = weaknesses.contains(&Weakness::StoreLow);
    let lui_imm = weaknesses.contains(&Weakness::LuiImm);
    let low_mask: Word = if store_low { !0xFF } else { Word::MAX };

    let mut regs = [0 as Word; 32];
    let mut mem = Memory::new();
    mem.load_words(program.input_base, &trace.inputs);
    let mut pc: Word = 0;

    for (i, row) in rows.iter().enumerate() {
        if row.step != i || row.pc != pc {
            return reject(C4, i, format!("row at pc {:#x}, expected {pc:#x}", row.pc));
        }
        let Some(expected) = program.instructions.get((pc / 4) as usize).filter(|_| pc.is_multiple_of(4)) else {
            return reject(C1, i, format!("pc {pc:#x} outside program"));
        };
        let ins = row.instr;
        if ins.op != expected.op || ins.rd != expected.rd || (ins.imm != expected.imm && !(lui_imm && ins.op == Opcode::Lui)) {
            return reject(C1, i, format!("executed `{ins}`, program has `{expected}`"));
        }
        let fmt = expected.format();
        if fmt.reads_rs1() && row.rs1_val != regs[expected.rs1 as usize] {
            return reject(C2, i, format!("rs1 value {:#x} != x{} = {:#x}", row.rs1_val, expected.rs1, regs[expected.rs1 as usize]));
        }
        if fmt.reads_rs2() {
            let want = regs[expected.rs2 as usize];
            let ok = match fmt {
                Format::R if tri_reg => true,
                Format::Store => (row.rs2_val ^ want) & low_mask == 0,
                _ => row.rs2_val == want,
            };
            if !ok {
                return reject(C2, i, format!("rs2 value {:#x} != x{} = {want:#x}", row.rs2_val, expected.rs2));
            }
        }
        if ins.op == Opcode::Halt {
            if i + 1 != rows.len() {
                return reject(C6, i, "halt is not the last row");
            }
            break;
        }
        let effect = isa_semantics(&ins, row.rs1_val, row.rs2_val, row.pc);
        match effect.mem {
            MemAccess::None => {
                if row.mem_addr.is_some() || row.mem_val.is_some() {
                    return reject(C3, i, "memory effect on a non-memory instruction");
                }
                let want = effect.rd_val.unwrap_or(0);
                if row.rd_val != want {
                    return reject(C3, i, format!("rd value {:#x}, expected {want:#x}", row.rd_val));
                }
            }
            MemAccess::Load { addr, width, signed } => {
                if row.mem_addr != Some(addr) {
                    return reject(C3, i, format!("load address {:?}, expected {addr:#x}", row.mem_addr));
                }
                let stored = match mem.read(addr, width) {
                    Ok(v) => v,
                    Err(e) => return reject(C5, i, e.to_string()),
                };
                let loaded = row.mem_val.unwrap_or(!stored);
                if (loaded ^ stored) & low_mask != 0 || loaded & !width.mask() != 0 {
                    return reject(C5, i, format!("loaded {loaded:#x}, memory holds {stored:#x}"));
                }
                if row.rd_val != load_extend(loaded, width, signed) {
                    return reject(C3, i, "rd value does not extend the loaded value");
                }
            }
            MemAccess::Store { addr, width, value } => {
                if row.mem_addr != Some(addr) {
                    return reject(C3, i, format!("store address {:?}, expected {addr:#x}", row.mem_addr));
                }
                let written = row.mem_val.unwrap_or(!value);
                if (written ^ value) & low_mask != 0 || written & !width.mask() != 0 {
                    return reject(C3, i, format!("stored {written:#x}, operand is {value:#x}"));
                }
                if row.rd_val != 0 {
                    return reject(C3, i, "store writes a register");
                }
                if let Err(e) = mem.write(addr, width, written) {
                    return reject(C5, i, e.to_string());
                }
            }
        }
        if row.next_pc != effect.next_pc {
            return reject(C4, i, format!("next pc {:#x}, expected {:#x}", row.next_pc, effect.next_pc));
        }
        if fmt.writes_rd() && ins.rd != 0 {
            regs[ins.rd as usize] = row.rd_val;
        }
        pc = row.next_pc;
    }

    let last = rows.len().saturating_sub(1);
    if rows.last().map(|r| r.instr.op) != Some(Opcode::Halt) || trace.exit != ExitStatus::Clean {
        return reject(C6, last, format!("trace does not end in a clean halt ({})", trace.exit));
    }
    if trace.final_output != regs[OUTPUT_REG as usize] {
        return reject(C6, last, format!("claimed output {:#x}, x10 = {:#x}", trace.final_output, regs[OUTPUT_REG as usize]));
    }
    Decision::Accept
}
