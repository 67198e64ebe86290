//! Fault-injection planning: injection types, instruction mutation and the
//! fairness scheduler.

mod schedule;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::il::Word;
use crate::refvm::{Format, Instruction, Opcode};

pub use schedule::{schedule, InjectionCounters, ScheduleDecision, ScheduleError};

macro_rules! injection_types {
    ($($variant:ident => $name:literal),* $(,)?) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum InjectionType {
            $(#[serde(rename = $name)] $variant),*
        }

        impl InjectionType {
            pub const ALL: &'static [InjectionType] = &[$(InjectionType::$variant),*];

            pub fn name(self) -> &'static str {
                match self {
                    $(InjectionType::$variant => $name),*
                }
            }
        }
    };
}

injection_types! {
    InstrWordMod => "INSTR_WORD_MOD",
    PreExecPcMod => "PRE_EXEC_PC_MOD",
    PostExecPcMod => "POST_EXEC_PC_MOD",
    CompOutMod => "COMP_OUT_MOD",
    LoadValMod => "LOAD_VAL_MOD",
    StoreOutMod => "STORE_OUT_MOD",
    PreExecRegMod => "PRE_EXEC_REG_MOD",
    PostExecRegMod => "POST_EXEC_REG_MOD",
    PreExecMemMod => "PRE_EXEC_MEM_MOD",
    PostExecMemMod => "POST_EXEC_MEM_MOD",
    BrNegCond => "BR_NEG_COND",
}

impl fmt::Display for InjectionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InjectionType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        InjectionType::ALL
            .iter()
            .copied()
            .find(|t| t.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown injection type `{s}`"))
    }
}

/// One fault to apply at a given step of an execution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InjectionPlan {
    #[serde(rename = "type")]
    pub kind: InjectionType,
    pub target_step: usize,
    pub payload_seed: u64,
}

/// Field class touched by an instruction mutation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FieldClass {
    Opcode,
    Rd,
    Rs1,
    Rs2,
    Imm,
}

impl FieldClass {
    pub const ALL: [FieldClass; 5] = [FieldClass::Opcode, FieldClass::Rd, FieldClass::Rs1, FieldClass::Rs2, FieldClass::Imm];
}

/// Field classes that can change for this instruction.
pub fn mutable_classes(instr: &Instruction) -> Vec<FieldClass> {
    let fmt = instr.format();
    if fmt == Format::Halt {
        return Vec::new();
    }
    FieldClass::ALL
        .into_iter()
        .filter(|c| match c {
            FieldClass::Opcode => instr.op.siblings().count() > 1,
            _ => true,
        })
        .collect()
}

/// Returns a well-formed instruction that differs from `instr` in exactly one
/// field, together with the class of that field. The opcode only changes
/// within its operand format, so the result is never `halt`.
///
/// # Panics
/// If `instr` is `halt`.
pub fn mutate_with_class<R: Rng + ?Sized>(instr: &Instruction, rng: &mut R) -> (Instruction, FieldClass) {
    let classes = mutable_classes(instr);
    assert!(!classes.is_empty(), "halt cannot be mutated");
    let class = classes[rng.gen_range(0..classes.len())];
    let mut out = *instr;
    let other_reg = |rng: &mut R, cur: u8| {
        let r = rng.gen_range(0..31u8);
        if r >= cur {
            r + 1
        } else {
            r
        }
    };
    match class {
        FieldClass::Opcode => {
            let others: Vec<Opcode> = instr.op.siblings().filter(|op| *op != instr.op).collect();
            out.op = others[rng.gen_range(0..others.len())];
        }
        FieldClass::Rd => out.rd = other_reg(rng, instr.rd),
        FieldClass::Rs1 => out.rs1 = other_reg(rng, instr.rs1),
        FieldClass::Rs2 => out.rs2 = other_reg(rng, instr.rs2),
        FieldClass::Imm => {
            let (lo, hi, step) = instr.format().imm_range();
            let slots = (hi - lo) / step + 1;
            loop {
                let imm = lo + rng.gen_range(0..slots) * step;
                if imm != instr.imm {
                    out.imm = imm;
                    break;
                }
            }
        }
    }
    debug_assert!(out.validate().is_ok());
    (out, class)
}

/// Random single-field mutation of a non-halt instruction.
pub fn mutate_instruction<R: Rng + ?Sized>(instr: &Instruction, rng: &mut R) -> Instruction {
    mutate_with_class(instr, rng).0
}

/// A value that differs from `old` within `mask`: half the time the low
/// byte is flipped by a nonzero pattern, otherwise a fresh random word.
pub fn perturb_word<R: Rng + ?Sized>(rng: &mut R, old: Word, mask: Word) -> Word {
    loop {
        let v = if rng.gen_bool(0.5) { old ^ rng.gen_range(1..=0xFF) } else { rng.gen() };
        if v & mask != old & mask {
            return v & mask;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    #[test]
    fn type_names_round_trip() {
        assert_eq!(InjectionType::ALL.len(), 11);
        for t in InjectionType::ALL {
            assert_eq!(t.name().parse::<InjectionType>(), Ok(*t));
            let json = serde_json::to_string(t).unwrap();
            assert_eq!(json, format!("\"{}\"", t.name()));
        }
        assert!("BIT_FLIP".parse::<InjectionType>().is_err());
    }

    #[test]
    fn mutation_always_differs_and_validates() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let samples = [
            Instruction::r(Opcode::Remu, 5, 6, 7),
            Instruction::i(Opcode::Addi, 5, 0, -18),
            Instruction::u(Opcode::Lui, 10, 0xC10),
            Instruction::s(Opcode::Sw, 5, 0, 0x200),
            Instruction::b(Opcode::Bne, 5, 6, 12),
            Instruction::u(Opcode::Jal, 0, 8),
            Instruction::i(Opcode::Slli, 1, 2, 31),
        ];
        for ins in samples {
            for _ in 0..2000 {
                let m = mutate_instruction(&ins, &mut rng);
                assert_ne!(m, ins);
                assert_ne!(m.op, Opcode::Halt);
                assert_eq!(m.format(), ins.format());
                assert!(m.validate().is_ok(), "{m}");
            }
        }
    }

    #[test]
    fn every_field_class_is_reachable() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let add = Instruction::r(Opcode::Add, 5, 6, 7);
        let seen: BTreeSet<FieldClass> = (0..10_000).map(|_| mutate_with_class(&add, &mut rng).1).collect();
        assert_eq!(seen.len(), 5);
    }

    #[test]
    fn divisor_aliasing_is_a_possible_mutation() {
        let remu = Instruction::r(Opcode::Remu, 5, 6, 7);
        let want = Instruction::r(Opcode::Remu, 5, 6, 6);
        let hit = (0..5000u64).any(|s| mutate_instruction(&remu, &mut ChaCha8Rng::seed_from_u64(s)) == want);
        assert!(hit);
    }

    #[test]
    fn perturbation_differs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for old in [0, 5, Word::MAX] {
            for _ in 0..500 {
                assert_ne!(perturb_word(&mut rng, old, Word::MAX), old);
                let b = perturb_word(&mut rng, old, 0xFF);
                assert!(b <= 0xFF && b != old & 0xFF);
            }
        }
    }
}
