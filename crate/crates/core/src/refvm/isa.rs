use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Instruction, Opcode};
use crate::il::{eval_custom, eval_int_op, CustomFn, IntOp, Word};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Width {
    Byte,
    Half,
    Word,
}

impl Width {
    pub fn bytes(self) -> Word {
        match self {
            Width::Byte => 1,
            Width::Half => 2,
            Width::Word => 4,
        }
    }

    pub fn mask(self) -> Word {
        match self {
            Width::Byte => 0xFF,
            Width::Half => 0xFFFF,
            Width::Word => Word::MAX,
        }
    }
}

/// Memory access requested by an instruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MemAccess {
    None,
    Load { addr: Word, width: Width, signed: bool },
    Store { addr: Word, width: Width, value: Word },
}

/// Architectural effect of one instruction given its operand values.
/// For loads `rd_val` is `None`; use [`load_extend`] on the loaded bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Effect {
    pub rd_val: Option<Word>,
    pub next_pc: Word,
    pub mem: MemAccess,
}

/// Pure RV32IM semantics shared by the executor and the verifier.
pub fn isa_semantics(instr: &Instruction, rs1_val: Word, rs2_val: Word, pc: Word) -> Effect {
    use Opcode::*;
    let imm = instr.imm as Word;
    let seq = pc.wrapping_add(4);
    let alu = |v: Word| Effect { rd_val: Some(v), next_pc: seq, mem: MemAccess::None };
    let (a, b) = (rs1_val, rs2_val);
    match instr.op {
        Add => alu(eval_int_op(IntOp::Add, a, b)),
        Sub => alu(eval_int_op(IntOp::Sub, a, b)),
        Mul => alu(eval_int_op(IntOp::Mul, a, b)),
        Divu => alu(eval_int_op(IntOp::Div, a, b)),
        Remu => alu(eval_int_op(IntOp::Rem, a, b)),
        And => alu(a & b),
        Or => alu(a | b),
        Xor => alu(a ^ b),
        Mulh => alu(eval_custom(CustomFn::Mulh, &[a, b])),
        Mulhsu => alu(eval_custom(CustomFn::Mulhsu, &[a, b])),
        Mulhu => alu(eval_custom(CustomFn::Mulhu, &[a, b])),
        Div => alu(eval_custom(CustomFn::Divs, &[a, b])),
        Rem => alu(eval_custom(CustomFn::Rems, &[a, b])),
        Sll => alu(eval_custom(CustomFn::Sll, &[a, b])),
        Srl => alu(eval_custom(CustomFn::Srl, &[a, b])),
        Sra => alu(eval_custom(CustomFn::Sra, &[a, b])),
        Slt => alu(eval_custom(CustomFn::Slt, &[a, b])),
        Sltu => alu(eval_custom(CustomFn::Sltu, &[a, b])),
        Addi => alu(a.wrapping_add(imm)),
        Andi => alu(a & imm),
        Ori => alu(a | imm),
        Xori => alu(a ^ imm),
        Slti => alu(eval_custom(CustomFn::Slt, &[a, imm])),
        Sltiu => alu(eval_custom(CustomFn::Sltu, &[a, imm])),
        Slli => alu(eval_custom(CustomFn::Sll, &[a, imm])),
        Srli => alu(eval_custom(CustomFn::Srl, &[a, imm])),
        Srai => alu(eval_custom(CustomFn::Sra, &[a, imm])),
        Lui => alu(imm << 12),
        Auipc => alu(pc.wrapping_add(imm << 12)),
        Lw | Lb | Lh | Lbu | Lhu => {
            let (width, signed) = match instr.op {
                Lw => (Width::Word, false),
                Lb => (Width::Byte, true),
                Lh => (Width::Half, true),
                Lbu => (Width::Byte, false),
                _ => (Width::Half, false),
            };
            Effect { rd_val: None, next_pc: seq, mem: MemAccess::Load { addr: a.wrapping_add(imm), width, signed } }
        }
        Sw | Sh | Sb => {
            let width = match instr.op {
                Sw => Width::Word,
                Sh => Width::Half,
                _ => Width::Byte,
            };
            let mem = MemAccess::Store { addr: a.wrapping_add(imm), width, value: b & width.mask() };
            Effect { rd_val: None, next_pc: seq, mem }
        }
        Beq | Bne | Blt | Bge | Bltu | Bgeu => {
            let taken = branch_taken(instr, a, b).unwrap_or(false);
            let next_pc = if taken { pc.wrapping_add(imm) } else { seq };
            Effect { rd_val: None, next_pc, mem: MemAccess::None }
        }
        Jal => Effect { rd_val: Some(seq), next_pc: pc.wrapping_add(imm), mem: MemAccess::None },
        Jalr => Effect { rd_val: Some(seq), next_pc: a.wrapping_add(imm) & !1, mem: MemAccess::None },
        Halt => Effect { rd_val: None, next_pc: pc, mem: MemAccess::None },
    }
}

/// Whether the branch condition of `instr` holds; `None` for non-branches.
pub(crate) fn branch_taken(instr: &Instruction, a: Word, b: Word) -> Option<bool> {
    use Opcode::*;
    Some(match instr.op {
        Beq => a == b,
        Bne => a != b,
        Blt => (a as i32) < (b as i32),
        Bge => (a as i32) >= (b as i32),
        Bltu => a < b,
        Bgeu => a >= b,
        _ => return None,
    })
}

/// Sign- or zero-extends the low `width` bits of a loaded value.
pub fn load_extend(raw: Word, width: Width, signed: bool) -> Word {
    let raw = raw & width.mask();
    match (width, signed) {
        (Width::Byte, true) => raw as u8 as i8 as i32 as Word,
        (Width::Half, true) => raw as u16 as i16 as i32 as Word,
        _ => raw,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum MemoryError {
    #[error("misaligned {width:?} access at {addr:#x}")]
    Misaligned { addr: Word, width: Width },
}

/// Sparse byte-addressable memory backed by little-endian words.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Memory {
    words: HashMap<Word, Word>,
}

impl Memory {
    pub fn new() -> Memory {
        Memory::default()
    }

    pub fn check_aligned(addr: Word, width: Width) -> Result<(), MemoryError> {
        if addr.is_multiple_of(width.bytes()) {
            Ok(())
        } else {
            Err(MemoryError::Misaligned { addr, width })
        }
    }

    /// Reads `width` bytes, zero-extended.
    pub fn read(&self, addr: Word, width: Width) -> Result<Word, MemoryError> {
        Memory::check_aligned(addr, width)?;
        let word = self.words.get(&(addr >> 2)).copied().unwrap_or(0);
        let shift = (addr & 3) * 8;
        Ok((word >> shift) & width.mask())
    }

    pub fn write(&mut self, addr: Word, width: Width, value: Word) -> Result<(), MemoryError> {
        Memory::check_aligned(addr, width)?;
        let slot = self.words.entry(addr >> 2).or_insert(0);
        let shift = (addr & 3) * 8;
        let mask = width.mask() << shift;
        *slot = (*slot & !mask) | ((value << shift) & mask);
        Ok(())
    }

    /// Addresses of all words ever written, ascending.
    pub fn word_addrs(&self) -> Vec<Word> {
        let mut out: Vec<Word> = self.words.keys().map(|k| k << 2).collect();
        out.sort_unstable();
        out
    }

    pub fn load_words(&mut self, base: Word, words: &[Word]) {
        for (i, w) in words.iter().enumerate() {
            self.words.insert((base >> 2) + i as Word, *w);
        }
    }
}
