use thiserror::Error;

use super::adapter::{AdapterError, VmAdapter};
use super::campaign::{FindingReport, OutcomeSummary, ReportError, Signature};
use super::{classify, Verdict, VmOutcome};
use crate::codegen::ProductProgram;
use crate::il::{eval_expr, Circuit, Env, Expr, Value, Word};
use crate::inject::InjectionPlan;
use crate::refvm::{Opcode, TraceRecord};

/// Rows of the target mnemonic tried when re-deriving an injection plan.
const PLAN_ROWS: usize = 16;
/// Payload seeds tried per row, besides the recorded one.
const PLAN_SEEDS: u64 = 16;

#[derive(Debug)]
pub struct Replay {
    pub verdict: Verdict,
    pub normal: VmOutcome,
    pub injected: Option<VmOutcome>,
    /// Non-fatal notes, e.g. a VM build mismatch.
    pub warnings: Vec<String>,
}

#[derive(Debug, Error)]
pub enum MinimizeError {
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Adapter(#[from] AdapterError),
    #[error("finding does not reproduce: expected {expected}, got {found}")]
    NotReproducing { expected: Verdict, found: Verdict },
}

/// Re-executes the recorded circuits, inputs and plan.
pub fn replay(report: &FindingReport, adapter: &mut dyn VmAdapter) -> Result<Replay, MinimizeError> {
    let product = report.product()?;
    let mut warnings = Vec::new();
    let id = adapter.id();
    if report.vm != id {
        warnings.push(format!("finding was recorded on `{}`, replaying on `{id}`", report.vm));
    }
    let artifact = adapter.build(&product)?;
    let normal = adapter.run(&artifact, &report.inputs, None)?;
    let injected = match &report.plan {
        Some(plan) => Some(adapter.run(&artifact, &report.inputs, Some(plan))?),
        None => None,
    };
    let verdict = classify(&normal, injected.as_ref());
    Ok(Replay { verdict, normal, injected, warnings })
}

/// Values at the faulty row of a soundness finding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Witness {
    op: Opcode,
    rs1_val: Word,
    rs2_val: Word,
    rd_val: Word,
}

impl Witness {
    fn of(trace: Option<&TraceRecord>, step: usize) -> Option<Witness> {
        let row = trace?.rows.get(step)?;
        Some(Witness { op: row.instr.op, rs1_val: row.rs1_val, rs2_val: row.rs2_val, rd_val: row.rd_val })
    }
}

struct Candidate {
    circuits: Vec<Circuit>,
    plan: Option<InjectionPlan>,
    normal: VmOutcome,
    injected: Option<VmOutcome>,
}

struct Reducer<'a> {
    adapter: &'a mut dyn VmAdapter,
    inputs: Vec<Word>,
    signature: Signature,
    plan: Option<InjectionPlan>,
    witness: Option<Witness>,
}

fn total_size(circuits: &[Circuit]) -> usize {
    circuits.iter().map(|c| c.output.size()).sum()
}

fn soft<T>(r: Result<T, AdapterError>) -> Result<Option<T>, AdapterError> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(e) if e.is_fatal() => Err(e),
        Err(_) => Ok(None),
    }
}

impl Reducer<'_> {
    /// Rebuilds `circuits` and checks that the finding still reproduces,
    /// searching for a fresh plan when the finding is injection-based.
    fn check(&mut self, circuits: Vec<Circuit>) -> Result<Option<Candidate>, AdapterError> {
        let Ok(product) = ProductProgram::new(circuits) else { return Ok(None) };
        let Some(artifact) = soft(self.adapter.build(&product))? else { return Ok(None) };
        let Some(normal) = soft(self.adapter.run(&artifact, &self.inputs, None))? else { return Ok(None) };
        let ProductProgram { circuits, .. } = product;
        let verdict = self.signature.verdict;
        if verdict != Verdict::SoundnessBug {
            let ok = classify(&normal, None) == verdict && Signature::of(verdict, &normal, None) == self.signature;
            return Ok(ok.then_some(Candidate { circuits, plan: None, normal, injected: None }));
        }
        let Some(orig) = self.plan else { return Ok(None) };
        if !normal.is_success() {
            return Ok(None);
        }
        let Some(trace) = &normal.trace else { return Ok(None) };
        let mut steps: Vec<usize> = trace
            .rows
            .iter()
            .filter(|r| Some(r.instr.op) == self.signature.mnemonic)
            .map(|r| r.step)
            .take(PLAN_ROWS)
            .collect();
        if let Some(pos) = steps.iter().position(|s| *s == orig.target_step) {
            steps.swap(0, pos);
        }
        let seeds: Vec<u64> = std::iter::once(orig.payload_seed).chain(0..PLAN_SEEDS).collect();
        for step in steps {
            for &payload_seed in &seeds {
                let plan = InjectionPlan { kind: orig.kind, target_step: step, payload_seed };
                let Some(inj) = soft(self.adapter.run(&artifact, &self.inputs, Some(&plan)))? else { continue };
                if classify(&normal, Some(&inj)) != Verdict::SoundnessBug {
                    continue;
                }
                if self.witness.is_none() || Witness::of(inj.trace.as_ref(), step) == self.witness {
                    return Ok(Some(Candidate { circuits, plan: Some(plan), normal, injected: Some(inj) }));
                }
            }
        }
        Ok(None)
    }

    fn try_accept(&mut self, best: &mut Candidate, circuits: Vec<Circuit>) -> Result<bool, AdapterError> {
        let smaller = circuits.len() < best.circuits.len()
            || (circuits.len() == best.circuits.len() && total_size(&circuits) < total_size(&best.circuits));
        if !smaller {
            return Ok(false);
        }
        match self.check(circuits)? {
            Some(c) => {
                *best = c;
                Ok(true)
            }
            None => Ok(false),
        }
    }

    fn drop_functions(&mut self, best: &mut Candidate) -> Result<bool, AdapterError> {
        let mut any = false;
        'outer: while best.circuits.len() > 2 {
            for i in (0..best.circuits.len()).rev() {
                let mut cs = best.circuits.clone();
                cs.remove(i);
                if self.try_accept(best, cs)? {
                    any = true;
                    continue 'outer;
                }
            }
            break;
        }
        Ok(any)
    }

    fn unify_functions(&mut self, best: &mut Candidate) -> Result<bool, AdapterError> {
        let mut any = false;
        for i in 0..best.circuits.len() {
            for j in 0..best.circuits.len() {
                if i != j && best.circuits[i] != best.circuits[j] {
                    let mut cs = best.circuits.clone();
                    cs[i] = cs[j].clone();
                    any |= self.try_accept(best, cs)?;
                }
            }
        }
        Ok(any)
    }

    fn shrink_expressions(&mut self, best: &mut Candidate) -> Result<bool, AdapterError> {
        let mut any = false;
        for i in 0..best.circuits.len() {
            let env: Env = best.circuits[i].input_names().map(str::to_string).zip(self.inputs.iter().copied()).collect();
            'restart: loop {
                let sites: Vec<(Vec<usize>, Expr)> = best.circuits[i]
                    .output
                    .walk()
                    .into_iter()
                    .filter(|(_, e)| e.size() > 1)
                    .map(|(p, e)| (p, e.clone()))
                    .collect();
                for (path, sub) in sites {
                    let literal = match eval_expr(&sub, &env) {
                        Ok(Value::Int(w)) => Expr::Int(w),
                        Ok(Value::Bool(b)) => Expr::Bool(b),
                        Err(_) => continue,
                    };
                    let mut cs = best.circuits.clone();
                    cs[i].output.replace_at(&path, literal);
                    if self.try_accept(best, cs)? {
                        any = true;
                        continue 'restart;
                    }
                }
                break;
            }
        }
        Ok(any)
    }
}

/// Greedy verdict-preserving reduction: drops bundled functions down to
/// two, replaces variants by smaller siblings and subtrees by the literal
/// they evaluate to. Injection-based findings keep the faulty row's values.
pub fn minimize(report: &FindingReport, adapter: &mut dyn VmAdapter) -> Result<FindingReport, MinimizeError> {
    let first = replay(report, adapter)?;
    if first.verdict != report.verdict {
        return Err(MinimizeError::NotReproducing { expected: report.verdict, found: first.verdict });
    }
    let witness = report.plan.and_then(|p| Witness::of(first.injected.as_ref().and_then(|o| o.trace.as_ref()), p.target_step));
    let signature = Signature::of(report.verdict, &first.normal, report.plan.as_ref());
    let mut best =
        Candidate { circuits: report.parsed_circuits()?, plan: report.plan, normal: first.normal, injected: first.injected };
    let mut reducer = Reducer { adapter, inputs: report.inputs.clone(), signature, plan: report.plan, witness };
    let mut changed = false;
    loop {
        let mut improved = reducer.drop_functions(&mut best)?;
        improved |= reducer.unify_functions(&mut best)?;
        improved |= reducer.shrink_expressions(&mut best)?;
        if !improved {
            break;
        }
        changed = true;
    }
    if !changed {
        return Ok(report.clone());
    }
    Ok(FindingReport {
        verdict: report.verdict,
        signature: Signature::of(report.verdict, &best.normal, best.plan.as_ref()),
        vm: reducer.adapter.id(),
        circuits: best.circuits.iter().map(Circuit::render).collect(),
        plan: best.plan,
        normal: OutcomeSummary::from(&best.normal),
        injected: best.injected.as_ref().map(OutcomeSummary::from),
        trace_file: None,
        ..report.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gen::SizeRange;
    use crate::harness::{run_campaign, CampaignConfig, RefVmAdapter};
    use crate::refvm::{Weakness, WeaknessSet};

    fn trireg() -> RefVmAdapter {
        RefVmAdapter::new([Weakness::TriReg].into_iter().collect())
    }

    fn soundness_finding(functions: SizeRange) -> FindingReport {
        let c = CampaignConfig {
            seed: 3,
            programs: 300,
            functions,
            weaknesses: [Weakness::TriReg].into_iter().collect(),
            stop_on_finding: true,
            ..CampaignConfig::default()
        };
        let r = run_campaign(&c, &mut trireg()).unwrap();
        r.findings.into_iter().find(|f| f.verdict == Verdict::SoundnessBug).expect("soundness finding")
    }

    #[test]
    fn replay_reproduces_and_detects_fix() {
        let f = soundness_finding(SizeRange::new(2, 4));
        let same = replay(&f, &mut trireg()).unwrap();
        assert_eq!(same.verdict, Verdict::SoundnessBug);
        assert!(same.warnings.is_empty());
        let fixed = replay(&f, &mut RefVmAdapter::new(WeaknessSet::new())).unwrap();
        assert_eq!(fixed.verdict, Verdict::Inconclusive);
        assert_eq!(fixed.warnings.len(), 1);
    }

    #[test]
    fn corrupted_report() {
        let f = soundness_finding(SizeRange::new(2, 2));
        let text = f.to_json();
        assert!(FindingReport::from_json(&text[..text.len() / 2]).is_err());
        let mut bad = f.clone();
        bad.circuits[0] = "inputs : a\noutputs: out\nout = (a +".into();
        assert!(matches!(replay(&bad, &mut trireg()), Err(MinimizeError::Report(ReportError::Circuit(0, _)))));
    }

    #[test]
    fn minimize_reduces_to_two_functions() {
        let f = soundness_finding(SizeRange::new(10, 10));
        assert_eq!(f.circuits.len(), 10);
        let m = minimize(&f, &mut trireg()).unwrap();
        assert_eq!(m.circuits.len(), 2);
        assert_eq!(replay(&m, &mut trireg()).unwrap().verdict, Verdict::SoundnessBug);
        let size = |r: &FindingReport| total_size(&r.parsed_circuits().unwrap());
        assert!(size(&m) < size(&f));
        assert_eq!(minimize(&m, &mut trireg()).unwrap(), m);
    }

    #[test]
    fn non_reproducing_finding() {
        let f = soundness_finding(SizeRange::new(2, 3));
        let err = minimize(&f, &mut RefVmAdapter::new(WeaknessSet::new())).unwrap_err();
        assert!(matches!(
            err,
            MinimizeError::NotReproducing { expected: Verdict::SoundnessBug, found: Verdict::Inconclusive }
        ));
    }
}
