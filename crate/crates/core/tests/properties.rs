mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::*;
use zkmorph_core::codegen::SUCCESS;
use zkmorph_core::gen::{generate_circuit, GenConfig, SizeRange};
use zkmorph_core::harness::{classify, run_campaign_observed, CampaignConfig, CampaignEvent, Verdict, VmAdapter};
use zkmorph_core::il::{eval_circuit, eval_int_op, Circuit, IntOp, Word};
use zkmorph_core::inject::{InjectionPlan, InjectionType};
use zkmorph_core::metamorph::{transform, RuleCatalog};
use zkmorph_core::refvm::{isa_semantics, Instruction, Opcode, TraceRecord};

fn any_type() -> impl Strategy<Value = InjectionType> {
    prop::sample::select(InjectionType::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn transforms_preserve_semantics(seed in any::<u64>(), n in 1usize..8, inputs in prop::collection::vec(any::<Word>(), 8)) {
        let c = generate_circuit(seed, &GenConfig::default()).unwrap();
        let t = transform(&c, &RuleCatalog::standard(), n, &mut ChaCha8Rng::seed_from_u64(seed ^ 1));
        prop_assert!(t.circuit.same_signature(&c));
        let args = &inputs[..c.arity()];
        prop_assert_eq!(eval_circuit(&t.circuit, args), eval_circuit(&c, args));
    }

    #[test]
    fn circuit_text_round_trips(seed in any::<u64>()) {
        let c = generate_circuit(seed, &GenConfig::default()).unwrap();
        prop_assert_eq!(Circuit::parse(&c.render()).unwrap(), c);
    }

    #[test]
    fn reference_vm_agrees_with_il(seed in any::<u64>(), k in 2usize..6, inputs in prop::collection::vec(any::<Word>(), 8)) {
        let product = random_product(seed, &GenConfig::default(), k);
        let args = &inputs[..product.arity()];
        let out = weak(&[]).run_program(&compile(&product), args, None);
        prop_assert_eq!(out.exit_code, 0);
        prop_assert_eq!(out.output, product.evaluate(args).unwrap());
        prop_assert_eq!(out.output, SUCCESS);
    }

    #[test]
    fn accepted_trace_replays_to_output(seed in any::<u64>(), inputs in prop::collection::vec(any::<Word>(), 8)) {
        let product = random_product(seed, &GenConfig::default(), 3);
        let out = weak(&[]).run_program(&compile(&product), &inputs[..product.arity()], None);
        let trace = out.trace.unwrap();
        prop_assert!(out.decision.unwrap().is_accept());
        let last = trace.last().unwrap();
        prop_assert_eq!(last.instr.op, Opcode::Halt);
        prop_assert_eq!(trace.final_output, out.output);
        prop_assert_eq!(TraceRecord::from_tsv(&trace.to_tsv()).unwrap(), trace);
    }

    #[test]
    fn sound_verifier_is_never_deceived(
        seed in any::<u64>(),
        kind in any_type(),
        step_frac in 0.0f64..1.0,
        payload_seed in any::<u64>(),
        inputs in prop::collection::vec(any::<Word>(), 8),
    ) {
        let mut vm = weak(&[]);
        let product = random_product(seed, &GenConfig::default(), 2);
        let art = vm.build(&product).unwrap();
        let args = &inputs[..product.arity()];
        let normal = vm.run(&art, args, None).unwrap();
        let rows = normal.trace.as_ref().unwrap().rows.len();
        let plan = InjectionPlan { kind, target_step: ((rows - 1) as f64 * step_frac) as usize, payload_seed };
        let injected = vm.run(&art, args, Some(&plan)).unwrap();
        prop_assert_ne!(classify(&normal, Some(&injected)), Verdict::SoundnessBug);
        let trace = injected.trace.unwrap();
        prop_assert_eq!(TraceRecord::from_tsv(&trace.to_tsv()).unwrap(), trace);
    }

    #[test]
    fn alu_semantics_match_il(a in any::<Word>(), b in any::<Word>()) {
        let pairs = [
            (Opcode::Add, IntOp::Add), (Opcode::Sub, IntOp::Sub), (Opcode::Mul, IntOp::Mul),
            (Opcode::Divu, IntOp::Div), (Opcode::Remu, IntOp::Rem), (Opcode::And, IntOp::And),
            (Opcode::Or, IntOp::Or), (Opcode::Xor, IntOp::Xor),
        ];
        for (op, il) in pairs {
            let e = isa_semantics(&Instruction::r(op, 5, 6, 7), a, b, 0);
            prop_assert_eq!(e.rd_val, Some(eval_int_op(il, a, b)));
        }
    }

    #[test]
    fn campaign_matrix_and_schedule_invariants(seed in any::<u64>()) {
        let config = CampaignConfig {
            seed,
            programs: 12,
            functions: SizeRange::new(2, 4),
            ..CampaignConfig::default()
        };
        let mut argmin_ok = true;
        let r = run_campaign_observed(&config, &mut weak(&[]), &mut |e| {
            if let CampaignEvent::Scheduled { decision, counters_before, trace } = e {
                let present: BTreeSet<Opcode> =
                    trace.rows.iter().map(|r| r.instr.op).filter(|op| *op != Opcode::Halt).collect();
                let min = present.iter().map(|op| counters_before.get(*op)).min().unwrap();
                argmin_ok &= counters_before.get(decision.mnemonic) == min && present.contains(&decision.mnemonic);
            }
        })
        .unwrap();
        prop_assert!(argmin_ok);
        let s = &r.stats;
        prop_assert_eq!(s.outcome_matrix.total(), s.injected_runs);
        prop_assert_eq!(s.outcome_matrix.oops_exit_zero, 0);
        prop_assert_eq!(s.injection_counters.total(), s.injected_runs);
        prop_assert!(r.findings.is_empty());
    }
}
