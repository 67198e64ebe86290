#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use zkmorph_core::codegen::{compile_to_refvm, CompileOptions, ProductProgram};
use zkmorph_core::gen::{generate_circuit, GenConfig};
use zkmorph_core::harness::{FindingReport, OutcomeSummary, RefVmAdapter, Signature, Verdict, VmAdapter};
use zkmorph_core::il::{Circuit, Word};
use zkmorph_core::inject::{InjectionPlan, InjectionType};
use zkmorph_core::metamorph::{transform, RuleCatalog};
use zkmorph_core::refvm::{Opcode, RefProgram, TraceRow, Weakness, WeaknessSet};

pub const C1: &str = "inputs : a, b, c\noutputs: out\nout = (a % (b + c))";
pub const C2: &str = "inputs : a, b, c\noutputs: out\nout = (a % ((c + 0) + b))";
pub const WALKTHROUGH_INPUTS: [Word; 3] = [7, 3, 2];

pub fn walkthrough_product() -> ProductProgram {
    ProductProgram::new(vec![Circuit::parse(C1).unwrap(), Circuit::parse(C2).unwrap()]).unwrap()
}

pub fn weak(ws: &[Weakness]) -> RefVmAdapter {
    RefVmAdapter::new(ws.iter().copied().collect::<WeaknessSet>())
}

/// Random product program: a generated circuit plus k-1 transformed variants.
pub fn random_product(seed: u64, gen: &GenConfig, k: usize) -> ProductProgram {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let original = generate_circuit(rng.gen(), gen).unwrap();
    let catalog = RuleCatalog::standard();
    let mut circuits = vec![original.clone()];
    for _ in 1..k {
        let n = rng.gen_range(1..=4);
        circuits.push(transform(&original, &catalog, n, &mut rng).circuit);
    }
    ProductProgram::new(circuits).unwrap()
}

pub fn compile(product: &ProductProgram) -> RefProgram {
    compile_to_refvm(product, &CompileOptions::default()).unwrap()
}

fn aliased(normal: &TraceRow, injected: &TraceRow) -> bool {
    injected.instr.op == Opcode::Remu
        && injected.instr.rs2 == injected.instr.rs1
        && normal.instr.rs2 != normal.instr.rs1
        && injected.instr.rd == normal.instr.rd
        && injected.instr.rs1 == normal.instr.rs1
}

/// Instruction-word injection at the first `remu` that rewrites its divisor
/// register to the dividend register.
pub fn divisor_aliasing_plan(adapter: &RefVmAdapter, program: &RefProgram, inputs: &[Word]) -> InjectionPlan {
    let normal = adapter.run_program(program, inputs, None).trace.unwrap();
    let step = normal.rows.iter().find(|r| r.instr.op == Opcode::Remu).expect("remu executed").step;
    (0..10_000u64)
        .map(|payload_seed| InjectionPlan { kind: InjectionType::InstrWordMod, target_step: step, payload_seed })
        .find(|plan| {
            let t = adapter.run_program(program, inputs, Some(plan)).trace.unwrap();
            t.rows.get(step).is_some_and(|row| aliased(&normal.rows[step], row))
        })
        .expect("an aliasing payload seed")
}

/// Finding report for the walkthrough scenario on `adapter`.
pub fn walkthrough_report(adapter: &mut RefVmAdapter) -> FindingReport {
    let product = walkthrough_product();
    let art = adapter.build(&product).unwrap();
    let program = art.program.clone().unwrap();
    let plan = divisor_aliasing_plan(adapter, &program, &WALKTHROUGH_INPUTS);
    let normal = adapter.run(&art, &WALKTHROUGH_INPUTS, None).unwrap();
    let injected = adapter.run(&art, &WALKTHROUGH_INPUTS, Some(&plan)).unwrap();
    let verdict = zkmorph_core::harness::classify(&normal, Some(&injected));
    FindingReport {
        verdict,
        signature: Signature::of(verdict, &normal, Some(&plan)),
        vm: adapter.id(),
        campaign_seed: 0,
        program: 0,
        round: 0,
        circuits: vec![C1.to_string(), C2.to_string()],
        inputs: WALKTHROUGH_INPUTS.to_vec(),
        plan: Some(plan),
        normal: OutcomeSummary::from(&normal),
        injected: Some(OutcomeSummary::from(&injected)),
        trace_file: None,
    }
}

/// Checks that a soundness reproducer's fault is `7 % 5` computed as 0:
/// the faithful run divides 7 by 5 at the target row, the injected run
/// records 0 there, and the trace is accepted.
pub fn witnesses_seven_mod_five(report: &FindingReport, adapter: &mut RefVmAdapter) -> Result<(), String> {
    let plan = report.plan.ok_or("no plan")?;
    let product = report.product().map_err(|e| e.to_string())?;
    let program = adapter.build(&product).map_err(|e| e.to_string())?.program.unwrap();
    let normal = adapter.run_program(&program, &report.inputs, None);
    let injected = adapter.run_program(&program, &report.inputs, Some(&plan));
    let n = &normal.trace.as_ref().unwrap().rows[plan.target_step];
    let i = &injected.trace.as_ref().unwrap().rows[plan.target_step];
    if n.instr.op != Opcode::Remu || (n.rs1_val, n.rs2_val, n.rd_val) != (7, 5, 2) {
        return Err(format!("faithful row is `{}` with {} % {} = {}", n.instr, n.rs1_val, n.rs2_val, n.rd_val));
    }
    if i.instr.op != Opcode::Remu || i.rs1_val != 7 || i.rd_val != 0 {
        return Err(format!("injected row is `{}` with result {}", i.instr, i.rd_val));
    }
    if !injected.decision.as_ref().is_some_and(|d| d.is_accept()) {
        return Err(format!("injected trace rejected: {:?}", injected.decision));
    }
    if zkmorph_core::harness::classify(&normal, Some(&injected)) != Verdict::SoundnessBug {
        return Err("not a soundness bug".into());
    }
    Ok(())
}
