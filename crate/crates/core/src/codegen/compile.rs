use std::collections::HashMap;

use thiserror::Error;

use super::ProductProgram;
use crate::il::{BoolOp, CmpOp, CustomFn, Expr, IntOp, Word};
use crate::refvm::{Instruction, Opcode, RefProgram, OUTPUT_REG};

/// Input words are preloaded from here.
pub const INPUT_BASE: Word = 0x100;
/// Function results are stored here, one word per function.
pub const RESULT_BASE: Word = 0x200;
/// Evaluation-stack spill slots.
pub const SPILL_BASE: Word = 0x300;

const MAX_IMM: i64 = 2047;
const SCRATCH_A: u8 = 3;
const SCRATCH_B: u8 = 4;
/// Evaluation-stack registers, everything except zero, ra, sp, the two
/// scratch registers and the output register.
const POOL: [u8; 26] = [5, 6, 7, 8, 9, 11, 12, 13, 14, 15, 16, 17, 18, 19, 20, 21, 22, 23, 24, 25, 26, 27, 28, 29, 30, 31];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CompileOptions {
    /// Evaluation-stack depth held in registers before spilling to memory.
    pub registers: usize,
}

impl Default for CompileOptions {
    fn default() -> Self {
        CompileOptions { registers: POOL.len() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CompileError {
    #[error("register pool size must be in 1..={}", POOL.len())]
    Pool,
    #[error("expression too deep: spill slot {0} is not addressable")]
    SpillOverflow(usize),
    #[error("branch offset {0} out of range")]
    BranchRange(i64),
    #[error("undeclared variable `{0}`")]
    Variable(String),
}

type Label = usize;

enum Item {
    Ins(Instruction),
    Branch { op: Opcode, rs1: u8, rs2: u8, target: Label },
    Jump { target: Label },
    Label(Label),
}

/// Where evaluation-stack slot `d` lives.
enum Loc {
    Reg(u8),
    Spill(i32),
}

struct Compiler<'a> {
    items: Vec<Item>,
    labels: usize,
    registers: usize,
    inputs: &'a HashMap<&'a str, usize>,
}

impl Compiler<'_> {
    fn emit(&mut self, ins: Instruction) {
        self.items.push(Item::Ins(ins));
    }

    fn label(&mut self) -> Label {
        self.labels += 1;
        self.labels - 1
    }

    fn loc(&self, depth: usize) -> Result<Loc, CompileError> {
        if depth < self.registers {
            return Ok(Loc::Reg(POOL[depth]));
        }
        let off = i64::from(SPILL_BASE) + 4 * (depth - self.registers) as i64;
        if off > MAX_IMM {
            return Err(CompileError::SpillOverflow(depth - self.registers));
        }
        Ok(Loc::Spill(off as i32))
    }

    /// Register holding slot `depth`, loading spilled values into `scratch`.
    fn read(&mut self, depth: usize, scratch: u8) -> Result<u8, CompileError> {
        match self.loc(depth)? {
            Loc::Reg(r) => Ok(r),
            Loc::Spill(off) => {
                self.emit(Instruction::i(Opcode::Lw, scratch, 0, off));
                Ok(scratch)
            }
        }
    }

    /// Register to compute slot `depth` into; pair with [`Self::commit`].
    fn target(&self, depth: usize) -> Result<u8, CompileError> {
        Ok(match self.loc(depth)? {
            Loc::Reg(r) => r,
            Loc::Spill(_) => SCRATCH_A,
        })
    }

    fn commit(&mut self, depth: usize, reg: u8) -> Result<(), CompileError> {
        if let Loc::Spill(off) = self.loc(depth)? {
            self.emit(Instruction::s(Opcode::Sw, reg, 0, off));
        }
        Ok(())
    }

    fn load_const(&mut self, rd: u8, w: Word) {
        let v = w as i32;
        if (-2048..=2047).contains(&v) {
            self.emit(Instruction::i(Opcode::Addi, rd, 0, v));
            return;
        }
        let upper = (w.wrapping_add(0x800) >> 12) & 0xF_FFFF;
        let lower = w.wrapping_sub(upper << 12) as i32;
        self.emit(Instruction::u(Opcode::Lui, rd, upper as i32));
        if lower != 0 {
            self.emit(Instruction::i(Opcode::Addi, rd, rd, lower));
        }
    }

    /// Compiles `e` into evaluation-stack slot `depth`.
    fn expr(&mut self, e: &Expr, depth: usize) -> Result<(), CompileError> {
        use Opcode::*;
        match e {
            Expr::Var(name) => {
                let idx = *self.inputs.get(name.as_str()).ok_or_else(|| CompileError::Variable(name.clone()))?;
                let dst = self.target(depth)?;
                self.emit(Instruction::i(Lw, dst, 0, (INPUT_BASE as usize + 4 * idx) as i32));
                self.commit(depth, dst)
            }
            Expr::Int(w) => {
                let dst = self.target(depth)?;
                self.load_const(dst, *w);
                self.commit(depth, dst)
            }
            Expr::Bool(b) => {
                let dst = self.target(depth)?;
                self.emit(Instruction::i(Addi, dst, 0, i32::from(*b)));
                self.commit(depth, dst)
            }
            Expr::IntBin(IntOp::Pow, base, exp) => {
                let Expr::Int(n) = **exp else { unreachable!("typechecked exponent") };
                self.expr(base, depth)?;
                let a = self.read(depth, SCRATCH_A)?;
                let dst = self.target(depth)?;
                if n == 3 {
                    self.emit(Instruction::r(Mul, SCRATCH_B, a, a));
                    self.emit(Instruction::r(Mul, dst, SCRATCH_B, a));
                } else {
                    self.emit(Instruction::r(Mul, dst, a, a));
                }
                self.commit(depth, dst)
            }
            Expr::IntBin(op, l, r) => {
                let opcode = match op {
                    IntOp::Add => Add,
                    IntOp::Sub => Sub,
                    IntOp::Mul => Mul,
                    IntOp::Div => Divu,
                    IntOp::Rem => Remu,
                    IntOp::And => And,
                    IntOp::Or => Or,
                    IntOp::Xor => Xor,
                    IntOp::Pow => unreachable!(),
                };
                self.binary(opcode, l, r, depth)
            }
            Expr::Call(func, args) => {
                let opcode = match func {
                    CustomFn::Mulh => Mulh,
                    CustomFn::Mulhsu => Mulhsu,
                    CustomFn::Mulhu => Mulhu,
                    CustomFn::Divs => Div,
                    CustomFn::Rems => Rem,
                    CustomFn::Sll => Sll,
                    CustomFn::Srl => Srl,
                    CustomFn::Sra => Sra,
                    CustomFn::Slt => Slt,
                    CustomFn::Sltu => Sltu,
                };
                self.binary(opcode, &args[0], &args[1], depth)
            }
            Expr::BoolBin(op, l, r) => {
                let opcode = match op {
                    BoolOp::Land => And,
                    BoolOp::Lor => Or,
                    BoolOp::Lxor => Xor,
                };
                self.binary(opcode, l, r, depth)
            }
            Expr::Not(inner) => {
                self.expr(inner, depth)?;
                let a = self.read(depth, SCRATCH_A)?;
                let dst = self.target(depth)?;
                self.emit(Instruction::i(Xori, dst, a, 1));
                self.commit(depth, dst)
            }
            Expr::Cmp(op, l, r) => {
                self.expr(l, depth)?;
                self.expr(r, depth + 1)?;
                let a = self.read(depth, SCRATCH_A)?;
                let b = self.read(depth + 1, SCRATCH_B)?;
                let dst = self.target(depth)?;
                match op {
                    CmpOp::Eq => {
                        self.emit(Instruction::r(Sub, dst, a, b));
                        self.emit(Instruction::i(Sltiu, dst, dst, 1));
                    }
                    CmpOp::Neq => {
                        self.emit(Instruction::r(Sub, dst, a, b));
                        self.emit(Instruction::r(Sltu, dst, 0, dst));
                    }
                    CmpOp::Lt => self.emit(Instruction::r(Sltu, dst, a, b)),
                    CmpOp::Gt => self.emit(Instruction::r(Sltu, dst, b, a)),
                    CmpOp::Leq => {
                        self.emit(Instruction::r(Sltu, dst, b, a));
                        self.emit(Instruction::i(Xori, dst, dst, 1));
                    }
                    CmpOp::Geq => {
                        self.emit(Instruction::r(Sltu, dst, a, b));
                        self.emit(Instruction::i(Xori, dst, dst, 1));
                    }
                }
                self.commit(depth, dst)
            }
            Expr::Ite(c, t, f) => {
                let (else_l, end_l) = (self.label(), self.label());
                self.expr(c, depth)?;
                let cond = self.read(depth, SCRATCH_A)?;
                self.items.push(Item::Branch { op: Beq, rs1: cond, rs2: 0, target: else_l });
                self.expr(t, depth)?;
                self.items.push(Item::Jump { target: end_l });
                self.items.push(Item::Label(else_l));
                self.expr(f, depth)?;
                self.items.push(Item::Label(end_l));
                Ok(())
            }
        }
    }

    fn binary(&mut self, opcode: Opcode, l: &Expr, r: &Expr, depth: usize) -> Result<(), CompileError> {
        self.expr(l, depth)?;
        self.expr(r, depth + 1)?;
        let a = self.read(depth, SCRATCH_A)?;
        let b = self.read(depth + 1, SCRATCH_B)?;
        let dst = self.target(depth)?;
        self.emit(Instruction::r(opcode, dst, a, b));
        self.commit(depth, dst)
    }

    fn assemble(self) -> Result<Vec<Instruction>, CompileError> {
        let mut at = vec![0usize; self.labels];
        let mut pc = 0;
        for item in &self.items {
            match item {
                Item::Label(l) => at[*l] = pc,
                _ => pc += 1,
            }
        }
        let mut out = Vec::with_capacity(pc);
        for item in self.items {
            let here = out.len() as i64;
            let offset = |target: Label| 4 * (at[target] as i64 - here);
            match item {
                Item::Ins(ins) => out.push(ins),
                Item::Branch { op, rs1, rs2, target } => {
                    let off = offset(target);
                    if !(-4096..=4092).contains(&off) {
                        return Err(CompileError::BranchRange(off));
                    }
                    out.push(Instruction::b(op, rs1, rs2, off as i32));
                }
                Item::Jump { target } => out.push(Instruction::u(Opcode::Jal, 0, offset(target) as i32)),
                Item::Label(_) => {}
            }
        }
        Ok(out)
    }
}

/// Compiles every function into the evaluation stack, stores its result,
/// then compares adjacent results and leaves SUCCESS or OOPS in `x10`.
pub fn compile_to_refvm(product: &ProductProgram, options: &CompileOptions) -> Result<RefProgram, CompileError> {
    if options.registers == 0 || options.registers > POOL.len() {
        return Err(CompileError::Pool);
    }
    let inputs: HashMap<&str, usize> = product.circuits[0].input_names().enumerate().map(|(i, n)| (n, i)).collect();
    let mut c = Compiler { items: Vec::new(), labels: 0, registers: options.registers, inputs: &inputs };
    for (i, circuit) in product.circuits.iter().enumerate() {
        c.expr(&circuit.output, 0)?;
        let r = c.read(0, SCRATCH_A)?;
        c.emit(Instruction::s(Opcode::Sw, r, 0, (RESULT_BASE as usize + 4 * i) as i32));
    }
    let (oops, end) = (c.label(), c.label());
    let (x, y) = (POOL[0], POOL[1]);
    for i in 0..product.circuits.len() - 1 {
        c.emit(Instruction::i(Opcode::Lw, x, 0, (RESULT_BASE as usize + 4 * i) as i32));
        c.emit(Instruction::i(Opcode::Lw, y, 0, (RESULT_BASE as usize + 4 * (i + 1)) as i32));
        c.items.push(Item::Branch { op: Opcode::Bne, rs1: x, rs2: y, target: oops });
    }
    c.load_const(OUTPUT_REG, product.success_word);
    c.items.push(Item::Jump { target: end });
    c.items.push(Item::Label(oops));
    c.load_const(OUTPUT_REG, product.oops_word);
    c.items.push(Item::Label(end));
    c.emit(Instruction::halt());
    let program = RefProgram { instructions: c.assemble()?, input_base: INPUT_BASE, input_len: product.arity() };
    debug_assert_eq!(program.validate(), Ok(()));
    Ok(program)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codegen::{OOPS, SUCCESS};
    use crate::il::Circuit;
    use crate::refvm::{execute, ExecConfig, ExecMode};

    fn circuit(text: &str) -> Circuit {
        Circuit::parse(text).unwrap()
    }

    fn run(p: &RefProgram, inputs: &[Word]) -> Word {
        let t = execute(p, inputs, &ExecMode::Normal, &ExecConfig::default());
        assert!(t.is_clean(), "{}", t.exit);
        t.final_output
    }

    fn walkthrough() -> ProductProgram {
        ProductProgram::new(vec![
            circuit("inputs : a, b, c\noutputs: out\nout = (a % (b + c))"),
            circuit("inputs : a, b, c\noutputs: out\nout = (a % ((c + 0) + b))"),
        ])
        .unwrap()
    }

    #[test]
    fn walkthrough_product() {
        let p = compile_to_refvm(&walkthrough(), &CompileOptions::default()).unwrap();
        assert_eq!(p.count(Opcode::Remu), 2);
        assert_eq!(run(&p, &[7, 3, 2]), SUCCESS);
        assert_eq!(p.instructions.last(), Some(&Instruction::halt()));
    }

    #[test]
    fn mismatch_returns_oops() {
        let product = ProductProgram::new(vec![
            circuit("inputs : a\noutputs: out\nout = a"),
            circuit("inputs : a\noutputs: out\nout = (a + 1)"),
        ])
        .unwrap();
        let p = compile_to_refvm(&product, &CompileOptions::default()).unwrap();
        assert_eq!(run(&p, &[41]), OOPS);
    }

    #[test]
    fn custom_calls_map_to_opcodes() {
        let product = ProductProgram::new(vec![
            circuit("inputs : a, b, c\noutputs: out\nout = mulhsu(a, (b + c))"),
            circuit("inputs : a, b, c\noutputs: out\nout = mulhsu(a, (c + b))"),
        ])
        .unwrap();
        let p = compile_to_refvm(&product, &CompileOptions::default()).unwrap();
        assert_eq!(p.count(Opcode::Mulhsu), 2);
        assert_eq!(run(&p, &[0xFFFF_FFFF, 1, 1]), SUCCESS);
    }

    #[test]
    fn constants() {
        for w in [0, 1, 2047, 2048, 0xFFFF_F800, 0x7FFF_FFFF, 0x8000_0000, 0xFFFF_FFFF, 0xC0FFEE, 0x1000] {
            let product = ProductProgram::new(vec![
                circuit(&format!("inputs : a\noutputs: out\nout = {}", crate::il::Expr::Int(w))),
                circuit("inputs : a\noutputs: out\nout = a"),
            ])
            .unwrap();
            let p = compile_to_refvm(&product, &CompileOptions::default()).unwrap();
            assert_eq!(run(&p, &[w]), SUCCESS, "{w:#x}");
        }
    }

    #[test]
    fn spilling_preserves_results() {
        let deep = circuit("inputs : a, b\noutputs: out\nout = ((a + (b * (a - (b ^ 3))) ) % (ite((a < b), (a ** 3), (b ** 2)) + 1))");
        let product = ProductProgram::new(vec![deep.clone(), deep.clone()]).unwrap();
        let spilled = compile_to_refvm(&product, &CompileOptions { registers: 1 }).unwrap();
        assert!(spilled.instructions.iter().any(|i| i.op == Opcode::Sw && i.imm as Word >= SPILL_BASE));
        let full = compile_to_refvm(&product, &CompileOptions::default()).unwrap();
        for inputs in [[1, 2], [9, 3], [0xFFFF_FFFF, 0]] {
            assert_eq!(run(&spilled, &inputs), SUCCESS);
            assert_eq!(run(&full, &inputs), SUCCESS);
        }
        assert_eq!(compile_to_refvm(&product, &CompileOptions { registers: 0 }), Err(CompileError::Pool));
    }

    #[test]
    fn success_constant_uses_lui() {
        let p = compile_to_refvm(&walkthrough(), &CompileOptions::default()).unwrap();
        assert!(p.instructions.contains(&Instruction::u(Opcode::Lui, OUTPUT_REG, 0xC10)));
    }
}
