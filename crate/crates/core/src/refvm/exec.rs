use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::isa::{branch_taken, isa_semantics, load_extend, MemAccess, Memory};
use super::trace::{InjectionEvent, TraceRecord, TraceRow};
use super::{Format, Opcode, RefProgram, Width, OUTPUT_REG};
use crate::il::Word;
use crate::inject::{mutate_instruction, perturb_word, InjectionPlan, InjectionType};

pub const DEFAULT_STEP_BUDGET: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExecConfig {
    pub step_budget: usize,
}

impl Default for ExecConfig {
    fn default() -> Self {
        ExecConfig { step_budget: DEFAULT_STEP_BUDGET }
    }
}

/// Normal execution, or execution with one planned fault. Injected runs are
/// lenient: misaligned accesses are aligned down instead of aborting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecMode {
    Normal,
    Injected(InjectionPlan),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitStatus {
    Clean,
    Fault(String),
    StepBudget,
}

impl fmt::Display for ExitStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExitStatus::Clean => f.write_str("clean"),
            ExitStatus::Fault(msg) => write!(f, "fault({msg})"),
            ExitStatus::StepBudget => f.write_str("step-budget"),
        }
    }
}

impl FromStr for ExitStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "clean" => Ok(ExitStatus::Clean),
            "step-budget" => Ok(ExitStatus::StepBudget),
            _ => s
                .strip_prefix("fault(")
                .and_then(|r| r.strip_suffix(')'))
                .map(|m| ExitStatus::Fault(m.to_string()))
                .ok_or_else(|| format!("unknown exit status `{s}`")),
        }
    }
}

struct Armed {
    plan: InjectionPlan,
    rng: ChaCha8Rng,
    fired: bool,
    detail: Option<String>,
}

struct Machine<'p> {
    program: &'p RefProgram,
    regs: [Word; 32],
    mem: Memory,
    lenient: bool,
    armed: Option<Armed>,
}

impl Machine<'_> {
    /// Injection guard: enabled, type matches, step matches. Fires once and
    /// hands out the payload rng.
    fn guard(&mut self, kind: InjectionType, step: usize) -> Option<ChaCha8Rng> {
        let armed = self.armed.as_mut()?;
        if armed.fired || armed.plan.kind != kind || armed.plan.target_step != step {
            return None;
        }
        armed.fired = true;
        Some(armed.rng.clone())
    }

    fn note(&mut self, detail: String) {
        if let Some(a) = self.armed.as_mut() {
            a.detail = Some(detail);
        }
    }

    fn set_reg(&mut self, r: u8, v: Word) {
        if r != 0 {
            self.regs[r as usize] = v;
        }
    }

    fn other_pc(&mut self, kind: InjectionType, step: usize, pc: Word) -> Option<Word> {
        let n = self.program.instructions.len() as Word;
        let mut rng = self.guard(kind, step)?;
        if n < 2 {
            return None;
        }
        let mut idx = rng.gen_range(0..n - 1);
        if idx >= pc / 4 {
            idx += 1;
        }
        Some(idx * 4)
    }

    fn reg_fault(&mut self, kind: InjectionType, step: usize) {
        let Some(mut rng) = self.guard(kind, step) else { return };
        let r = rng.gen_range(1..32u8);
        let old = self.regs[r as usize];
        let v = perturb_word(&mut rng, old, Word::MAX);
        self.set_reg(r, v);
        self.note(format!("x{r}: {old:#x} -> {v:#x}"));
    }

    fn mem_fault(&mut self, kind: InjectionType, step: usize) {
        let candidates = self.mem.word_addrs();
        let base = self.program.input_base;
        let Some(mut rng) = self.guard(kind, step) else { return };
        let addr = if candidates.is_empty() { base } else { candidates[rng.gen_range(0..candidates.len())] };
        let old = self.mem.read(addr, Width::Word).unwrap_or(0);
        let v = perturb_word(&mut rng, old, Word::MAX);
        self.mem.write(addr, Width::Word, v).expect("aligned");
        self.note(format!("mem[{addr:#x}]: {old:#x} -> {v:#x}"));
    }
}

/// Runs `program` on `inputs`, recording a trace. Never panics on program
/// behaviour: faults and budget exhaustion are reported in the exit status.
pub fn execute(program: &RefProgram, inputs: &[Word], mode: &ExecMode, config: &ExecConfig) -> TraceRecord {
    let mut m = Machine {
        program,
        regs: [0; 32],
        mem: Memory::new(),
        lenient: matches!(mode, ExecMode::Injected(_)),
        armed: match mode {
            ExecMode::Normal => None,
            ExecMode::Injected(plan) => Some(Armed {
                plan: *plan,
                rng: ChaCha8Rng::seed_from_u64(plan.payload_seed),
                fired: false,
                detail: None,
            }),
        },
    };
    m.mem.load_words(program.input_base, inputs);
    let mut rows: Vec<TraceRow> = Vec::new();
    let mut pc: Word = 0;
    let exit = loop {
        let step = rows.len();
        if step >= config.step_budget {
            break ExitStatus::StepBudget;
        }
        if let Some(new_pc) = m.other_pc(InjectionType::PreExecPcMod, step, pc) {
            m.note(format!("pc {pc:#x} -> {new_pc:#x}"));
            pc = new_pc;
        }
        if !pc.is_multiple_of(4) || (pc / 4) as usize >= program.instructions.len() {
            break ExitStatus::Fault(format!("fetch outside program at pc {pc:#x}"));
        }
        let mut instr = program.instructions[(pc / 4) as usize];
        if instr.op != Opcode::Halt {
            if let Some(mut rng) = m.guard(InjectionType::InstrWordMod, step) {
                let mutated = mutate_instruction(&instr, &mut rng);
                m.note(format!("{instr} -> {mutated}"));
                instr = mutated;
            }
        }
        m.reg_fault(InjectionType::PreExecRegMod, step);
        m.mem_fault(InjectionType::PreExecMemMod, step);

        let rs1_val = m.regs[instr.rs1 as usize];
        let rs2_val = m.regs[instr.rs2 as usize];
        let mut row = TraceRow {
            step,
            pc,
            instr,
            rs1_val,
            rs2_val,
            rd_val: 0,
            mem_addr: None,
            mem_val: None,
            next_pc: pc,
        };
        if instr.op == Opcode::Halt {
            rows.push(row);
            break ExitStatus::Clean;
        }
        let effect = isa_semantics(&instr, rs1_val, rs2_val, pc);
        let mut next_pc = effect.next_pc;
        if instr.format() == Format::Branch && m.guard(InjectionType::BrNegCond, step).is_some() {
            let taken = branch_taken(&instr, rs1_val, rs2_val).expect("branch");
            next_pc = if taken { pc.wrapping_add(4) } else { pc.wrapping_add(instr.imm as Word) };
            m.note(format!("branch {} inverted", if taken { "taken" } else { "not taken" }));
        }
        let mut rd_val = effect.rd_val;
        match effect.mem {
            MemAccess::None => {}
            MemAccess::Load { addr, width, signed } => {
                let addr = if m.lenient { addr - addr % width.bytes() } else { addr };
                let mut raw = match m.mem.read(addr, width) {
                    Ok(v) => v,
                    Err(e) => {
                        rows.push(row);
                        break ExitStatus::Fault(e.to_string());
                    }
                };
                if let Some(mut rng) = m.guard(InjectionType::LoadValMod, step) {
                    let v = perturb_word(&mut rng, raw, width.mask());
                    m.note(format!("loaded {raw:#x} -> {v:#x}"));
                    raw = v;
                }
                row.mem_addr = Some(addr);
                row.mem_val = Some(raw);
                rd_val = Some(load_extend(raw, width, signed));
            }
            MemAccess::Store { addr, width, mut value } => {
                let addr = if m.lenient { addr - addr % width.bytes() } else { addr };
                if let Some(mut rng) = m.guard(InjectionType::StoreOutMod, step) {
                    let v = perturb_word(&mut rng, value, width.mask());
                    m.note(format!("stored {value:#x} -> {v:#x}"));
                    value = v;
                }
                if let Err(e) = m.mem.write(addr, width, value) {
                    rows.push(row);
                    break ExitStatus::Fault(e.to_string());
                }
                row.mem_addr = Some(addr);
                row.mem_val = Some(value);
            }
        }
        if let Some(v) = rd_val {
            let v = match m.guard(InjectionType::CompOutMod, step) {
                Some(mut rng) => {
                    let nv = perturb_word(&mut rng, v, Word::MAX);
                    m.note(format!("x{} result {v:#x} -> {nv:#x}", instr.rd));
                    nv
                }
                None => v,
            };
            row.rd_val = v;
            m.set_reg(instr.rd, v);
        }
        if let Some(new_pc) = m.other_pc(InjectionType::PostExecPcMod, step, next_pc) {
            m.note(format!("next pc {next_pc:#x} -> {new_pc:#x}"));
            next_pc = new_pc;
        }
        row.next_pc = next_pc;
        rows.push(row);
        m.reg_fault(InjectionType::PostExecRegMod, step);
        m.mem_fault(InjectionType::PostExecMemMod, step);
        pc = next_pc;
    };
    let injection = m.armed.as_ref().filter(|a| a.fired).map(|a| InjectionEvent {
        step: a.plan.target_step,
        kind: a.plan.kind,
        detail: a.detail.clone().unwrap_or_else(|| "no effect".to_string()),
    });
    TraceRecord { inputs: inputs.to_vec(), rows, final_output: m.regs[OUTPUT_REG as usize], exit, injection }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::refvm::{Instruction, Opcode::*};

    fn prog(instructions: Vec<Instruction>) -> RefProgram {
        RefProgram { instructions, input_base: 0x100, input_len: 2 }
    }

    fn run(p: &RefProgram, inputs: &[Word], mode: ExecMode) -> TraceRecord {
        execute(p, inputs, &mode, &ExecConfig::default())
    }

    fn remainder_program() -> RefProgram {
        prog(vec![
            Instruction::i(Lw, 5, 0, 0x100),
            Instruction::i(Lw, 6, 0, 0x104),
            Instruction::r(Remu, 10, 5, 6),
            Instruction::halt(),
        ])
    }

    #[test]
    fn straight_line() {
        let t = run(&remainder_program(), &[7, 5], ExecMode::Normal);
        assert_eq!(t.exit, ExitStatus::Clean);
        assert_eq!(t.final_output, 2);
        assert_eq!(t.rows.len(), 4);
        assert_eq!(t.rows[0].mem_val, Some(7));
        assert_eq!(t.last().unwrap().instr.op, Halt);
        assert!(t.rows.windows(2).all(|w| w[0].next_pc == w[1].pc));
    }

    #[test]
    fn deterministic() {
        let p = remainder_program();
        let plan = InjectionPlan { kind: InjectionType::CompOutMod, target_step: 2, payload_seed: 9 };
        assert_eq!(run(&p, &[7, 5], ExecMode::Injected(plan)), run(&p, &[7, 5], ExecMode::Injected(plan)));
    }

    #[test]
    fn computation_fault_ripples() {
        let p = prog(vec![
            Instruction::i(Addi, 5, 0, 2),
            Instruction::i(Addi, 6, 5, 3),
            Instruction::r(Add, 10, 6, 0),
            Instruction::halt(),
        ]);
        let plan = InjectionPlan { kind: InjectionType::CompOutMod, target_step: 1, payload_seed: 4 };
        let t = run(&p, &[], ExecMode::Injected(plan));
        assert_ne!(t.rows[1].rd_val, 5);
        assert_eq!(t.rows[2].rs1_val, t.rows[1].rd_val);
        assert_eq!(t.final_output, t.rows[1].rd_val);
        assert!(t.injection.is_some());
    }

    #[test]
    fn branch_negation_falls_through() {
        let p = prog(vec![
            Instruction::b(Beq, 0, 0, 8),
            Instruction::i(Addi, 10, 0, 1),
            Instruction::halt(),
        ]);
        assert_eq!(run(&p, &[], ExecMode::Normal).final_output, 0);
        let plan = InjectionPlan { kind: InjectionType::BrNegCond, target_step: 0, payload_seed: 0 };
        let t = run(&p, &[], ExecMode::Injected(plan));
        assert_eq!(t.rows[0].next_pc, 4);
        assert_eq!(t.final_output, 1);
    }

    #[test]
    fn load_value_fault() {
        let p = prog(vec![Instruction::i(Lw, 10, 0, 0x100), Instruction::halt()]);
        let plan = InjectionPlan { kind: InjectionType::LoadValMod, target_step: 0, payload_seed: 1 };
        let t = run(&p, &[0x1234], ExecMode::Injected(plan));
        assert_ne!(t.final_output, 0x1234);
        assert_eq!(Some(t.final_output), t.rows[0].mem_val);
    }

    #[test]
    fn misalignment_faults_only_in_normal_mode() {
        let p = prog(vec![Instruction::i(Lw, 10, 0, 0x102), Instruction::halt()]);
        assert!(matches!(run(&p, &[1], ExecMode::Normal).exit, ExitStatus::Fault(_)));
        // a plan whose hook never fires still makes the run lenient
        let plan = InjectionPlan { kind: InjectionType::StoreOutMod, target_step: 0, payload_seed: 0 };
        let t = run(&p, &[1], ExecMode::Injected(plan));
        assert_eq!(t.exit, ExitStatus::Clean);
        assert_eq!(t.final_output, 1);
        assert!(t.injection.is_none());
    }

    #[test]
    fn fault_fires_once() {
        let p = remainder_program();
        for kind in InjectionType::ALL {
            for step in 0..4 {
                let plan = InjectionPlan { kind: *kind, target_step: step, payload_seed: 5 };
                let t = run(&p, &[7, 5], ExecMode::Injected(plan));
                if let Some(ev) = &t.injection {
                    assert_eq!(ev.step, step);
                    assert_eq!(ev.kind, *kind);
                }
            }
        }
    }

    #[test]
    fn runaway_loop_hits_budget() {
        let p = prog(vec![Instruction::u(Jal, 0, 0), Instruction::halt()]);
        let t = execute(&p, &[], &ExecMode::Normal, &ExecConfig { step_budget: 50 });
        assert_eq!(t.exit, ExitStatus::StepBudget);
        assert_eq!(t.rows.len(), 50);
    }

    #[test]
    fn exit_status_text() {
        for e in [ExitStatus::Clean, ExitStatus::StepBudget, ExitStatus::Fault("misaligned".into())] {
            assert_eq!(e.to_string().parse::<ExitStatus>(), Ok(e));
        }
    }

    #[test]
    fn tsv_round_trip() {
        let p = remainder_program();
        let plan = InjectionPlan { kind: InjectionType::InstrWordMod, target_step: 2, payload_seed: 3 };
        for mode in [ExecMode::Normal, ExecMode::Injected(plan)] {
            let t = run(&p, &[7, 5], mode);
            assert_eq!(TraceRecord::from_tsv(&t.to_tsv()), Ok(t));
        }
        assert!(TraceRecord::from_tsv("0\t0x0\tadd").is_err());
    }
}
