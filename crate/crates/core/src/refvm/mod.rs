//! Reference mini-zkVM: an RV32IM-subset executor that records a trace and a
//! verifier that replays constraints over it, with optional seeded weaknesses.

mod exec;
mod isa;
mod trace;
mod verify;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::il::Word;

pub use exec::{execute, ExecConfig, ExecMode, ExitStatus, DEFAULT_STEP_BUDGET};
pub use isa::{isa_semantics, load_extend, Effect, MemAccess, Memory, MemoryError, Width};
pub use trace::{InjectionEvent, TraceParseError, TraceRecord, TraceRow};
pub use verify::{verify, ConstraintId, Rejection, Decision, Weakness, WeaknessSet};

/// Register holding the program result at halt (`a0`).
pub const OUTPUT_REG: u8 = 10;

macro_rules! opcodes {
    ($($variant:ident => $name:literal : $fmt:ident),* $(,)?) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(rename_all = "lowercase")]
        pub enum Opcode {
            $($variant),*
        }

        impl Opcode {
            pub const ALL: &'static [Opcode] = &[$(Opcode::$variant),*];

            pub fn mnemonic(self) -> &'static str {
                match self {
                    $(Opcode::$variant => $name),*
                }
            }

            pub fn format(self) -> Format {
                match self {
                    $(Opcode::$variant => Format::$fmt),*
                }
            }
        }
    };
}

opcodes! {
    Add => "add": R, Sub => "sub": R, Mul => "mul": R, Mulh => "mulh": R,
    Mulhsu => "mulhsu": R, Mulhu => "mulhu": R, Div => "div": R, Divu => "divu": R,
    Rem => "rem": R, Remu => "remu": R, And => "and": R, Or => "or": R, Xor => "xor": R,
    Sll => "sll": R, Srl => "srl": R, Sra => "sra": R, Slt => "slt": R, Sltu => "sltu": R,
    Addi => "addi": IAlu, Andi => "andi": IAlu, Ori => "ori": IAlu, Xori => "xori": IAlu,
    Slti => "slti": IAlu, Sltiu => "sltiu": IAlu,
    Slli => "slli": IShift, Srli => "srli": IShift, Srai => "srai": IShift,
    Lui => "lui": U, Auipc => "auipc": U,
    Lw => "lw": Load, Lb => "lb": Load, Lh => "lh": Load, Lbu => "lbu": Load, Lhu => "lhu": Load,
    Sw => "sw": Store, Sh => "sh": Store, Sb => "sb": Store,
    Beq => "beq": Branch, Bne => "bne": Branch, Blt => "blt": Branch, Bge => "bge": Branch,
    Bltu => "bltu": Branch, Bgeu => "bgeu": Branch,
    Jal => "jal": Jal, Jalr => "jalr": Jalr, Halt => "halt": Halt,
}

impl Opcode {
    pub fn from_mnemonic(s: &str) -> Option<Opcode> {
        Opcode::ALL.iter().copied().find(|op| op.mnemonic() == s)
    }

    /// Opcodes sharing this opcode's operand format, including itself.
    pub fn siblings(self) -> impl Iterator<Item = Opcode> {
        let fmt = self.format();
        Opcode::ALL.iter().copied().filter(move |op| op.format() == fmt)
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.mnemonic())
    }
}

/// Operand format of an opcode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Format {
    /// Three-register ALU op.
    R,
    IAlu,
    IShift,
    U,
    Load,
    Store,
    Branch,
    Jal,
    Jalr,
    Halt,
}

impl Format {
    pub fn reads_rs1(self) -> bool {
        matches!(self, Format::R | Format::IAlu | Format::IShift | Format::Load | Format::Store | Format::Branch | Format::Jalr)
    }

    pub fn reads_rs2(self) -> bool {
        matches!(self, Format::R | Format::Store | Format::Branch)
    }

    pub fn writes_rd(self) -> bool {
        matches!(self, Format::R | Format::IAlu | Format::IShift | Format::U | Format::Load | Format::Jal | Format::Jalr)
    }

    /// Inclusive immediate range and required granularity.
    pub fn imm_range(self) -> (i32, i32, i32) {
        match self {
            Format::R | Format::IAlu | Format::Load | Format::Store | Format::Jalr => (-2048, 2047, 1),
            Format::IShift => (0, 31, 1),
            Format::U => (0, 0xF_FFFF, 1),
            Format::Branch => (-4096, 4092, 4),
            Format::Jal => (-(1 << 20), (1 << 20) - 4, 4),
            Format::Halt => (0, 0, 1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Instruction {
    pub op: Opcode,
    pub rd: u8,
    pub rs1: u8,
    pub rs2: u8,
    pub imm: i32,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InstrError {
    #[error("register x{0} out of range")]
    Register(u8),
    #[error("immediate {imm} out of range for {op}")]
    Immediate { op: Opcode, imm: i32 },
}

impl Instruction {
    pub fn r(op: Opcode, rd: u8, rs1: u8, rs2: u8) -> Instruction {
        Instruction { op, rd, rs1, rs2, imm: 0 }
    }

    pub fn i(op: Opcode, rd: u8, rs1: u8, imm: i32) -> Instruction {
        Instruction { op, rd, rs1, rs2: 0, imm }
    }

    pub fn u(op: Opcode, rd: u8, imm: i32) -> Instruction {
        Instruction { op, rd, rs1: 0, rs2: 0, imm }
    }

    /// `op rs2, imm(rs1)`.
    pub fn s(op: Opcode, rs2: u8, rs1: u8, imm: i32) -> Instruction {
        Instruction { op, rd: 0, rs1, rs2, imm }
    }

    pub fn b(op: Opcode, rs1: u8, rs2: u8, offset: i32) -> Instruction {
        Instruction { op, rd: 0, rs1, rs2, imm: offset }
    }

    pub fn halt() -> Instruction {
        Instruction { op: Opcode::Halt, rd: 0, rs1: 0, rs2: 0, imm: 0 }
    }

    pub fn format(&self) -> Format {
        self.op.format()
    }

    pub fn validate(&self) -> Result<(), InstrError> {
        for r in [self.rd, self.rs1, self.rs2] {
            if r >= 32 {
                return Err(InstrError::Register(r));
            }
        }
        let (lo, hi, step) = self.format().imm_range();
        if self.imm < lo || self.imm > hi || self.imm % step != 0 {
            return Err(InstrError::Immediate { op: self.op, imm: self.imm });
        }
        Ok(())
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let Instruction { op, rd, rs1, rs2, imm } = *self;
        match op.format() {
            Format::R => write!(f, "{op} x{rd}, x{rs1}, x{rs2}"),
            Format::IAlu | Format::IShift => write!(f, "{op} x{rd}, x{rs1}, {imm}"),
            Format::U => write!(f, "{op} x{rd}, {imm:#x}"),
            Format::Load | Format::Jalr => write!(f, "{op} x{rd}, {imm}(x{rs1})"),
            Format::Store => write!(f, "{op} x{rs2}, {imm}(x{rs1})"),
            Format::Branch => write!(f, "{op} x{rs1}, x{rs2}, {imm}"),
            Format::Jal => write!(f, "{op} x{rd}, {imm}"),
            Format::Halt => write!(f, "{op}"),
        }
    }
}

/// A compiled program for the reference VM. Execution starts at pc 0;
/// inputs are preloaded as consecutive words from `input_base`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefProgram {
    pub instructions: Vec<Instruction>,
    pub input_base: Word,
    pub input_len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProgramError {
    #[error("instruction {index}: {source}")]
    Instruction { index: usize, source: InstrError },
    #[error("program must end in exactly one halt")]
    Halt,
    #[error("instruction {0}: jump target out of range")]
    Target(usize),
}

impl RefProgram {
    pub fn validate(&self) -> Result<(), ProgramError> {
        let n = self.instructions.len();
        if self.instructions.iter().filter(|i| i.op == Opcode::Halt).count() != 1
            || self.instructions.last().map(|i| i.op) != Some(Opcode::Halt)
        {
            return Err(ProgramError::Halt);
        }
        for (index, ins) in self.instructions.iter().enumerate() {
            ins.validate().map_err(|source| ProgramError::Instruction { index, source })?;
            if matches!(ins.format(), Format::Branch | Format::Jal) {
                let target = index as i64 + i64::from(ins.imm / 4);
                if target < 0 || target >= n as i64 {
                    return Err(ProgramError::Target(index));
                }
            }
        }
        Ok(())
    }

    /// Distinct mnemonics appearing in the program text.
    pub fn mnemonics(&self) -> std::collections::BTreeSet<Opcode> {
        self.instructions.iter().map(|i| i.op).collect()
    }

    pub fn count(&self, op: Opcode) -> usize {
        self.instructions.iter().filter(|i| i.op == op).count()
    }

    /// One `pc: instruction` line per instruction.
    pub fn disassemble(&self) -> String {
        let mut out = format!("; inputs: {} words at {:#x}\n", self.input_len, self.input_base);
        for (i, ins) in self.instructions.iter().enumerate() {
            out.push_str(&format!("{:#06x}:  {ins}\n", i * 4));
        }
        out
    }
}
