use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::adapter::{AdapterError, Artifact, VmAdapter};
use super::{classify, generate_inputs, CampaignConfig, CampaignStats, ConfigError, Verdict, VmOutcome};
use crate::codegen::{ProductError, ProductProgram};
use crate::gen::generate_circuit;
use crate::il::{Circuit, Word};
use crate::inject::{schedule, InjectionCounters, InjectionPlan, ScheduleDecision};
use crate::metamorph::{transform, RuleCatalog};
use crate::refvm::{ConstraintId, Decision, ExitStatus, InjectionEvent, Opcode, TraceRecord};

pub const STATS_FILE: &str = "stats.json";

/// Deduplication key of a finding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Signature {
    pub verdict: Verdict,
    pub constraint: Option<ConstraintId>,
    pub mnemonic: Option<Opcode>,
}

impl Signature {
    /// Soundness findings are keyed by the injected mnemonic, the others by
    /// the rejecting constraint and the mnemonic of the rejected row.
    pub fn of(verdict: Verdict, normal: &VmOutcome, plan: Option<&InjectionPlan>) -> Signature {
        let row_op = |step: usize| normal.trace.as_ref().and_then(|t| t.rows.get(step)).map(|r| r.instr.op);
        match verdict {
            Verdict::SoundnessBug => {
                Signature { verdict, constraint: None, mnemonic: plan.and_then(|p| row_op(p.target_step)) }
            }
            _ => match normal.decision.as_ref().and_then(Decision::rejection) {
                Some(r) => Signature { verdict, constraint: Some(r.constraint), mnemonic: row_op(r.row) },
                None => Signature { verdict, constraint: None, mnemonic: None },
            },
        }
    }
}

impl fmt::Display for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = self.constraint.map_or("-".to_string(), |c| c.to_string());
        let m = self.mnemonic.map_or("-", |m| m.mnemonic());
        write!(f, "{}/{c}/{m}", self.verdict)
    }
}

/// Serializable part of a [`VmOutcome`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeSummary {
    pub output: Word,
    pub exit_code: i32,
    pub exit: Option<ExitStatus>,
    pub decision: Option<Decision>,
    pub injection: Option<InjectionEvent>,
}

impl From<&VmOutcome> for OutcomeSummary {
    fn from(o: &VmOutcome) -> Self {
        OutcomeSummary {
            output: o.output,
            exit_code: o.exit_code,
            exit: o.exit.clone(),
            decision: o.decision.clone(),
            injection: o.trace.as_ref().and_then(|t| t.injection.clone()),
        }
    }
}

/// Replayable record of one finding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FindingReport {
    pub verdict: Verdict,
    pub signature: Signature,
    /// Build identifier of the VM that produced the finding.
    pub vm: String,
    pub campaign_seed: u64,
    pub program: u64,
    pub round: u64,
    /// Original circuit followed by its transformed variants, in IL text.
    pub circuits: Vec<String>,
    pub inputs: Vec<Word>,
    pub plan: Option<InjectionPlan>,
    pub normal: OutcomeSummary,
    pub injected: Option<OutcomeSummary>,
    /// Trace file name, relative to the report.
    pub trace_file: Option<String>,
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("malformed finding report: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("circuit {0}: {1}")]
    Circuit(usize, String),
    #[error("product program: {0}")]
    Product(#[from] ProductError),
}

impl FindingReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialize");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<FindingReport, ReportError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn parsed_circuits(&self) -> Result<Vec<Circuit>, ReportError> {
        self.circuits
            .iter()
            .enumerate()
            .map(|(i, c)| Circuit::parse(c).map_err(|e| ReportError::Circuit(i, e.to_string())))
            .collect()
    }

    pub fn product(&self) -> Result<ProductProgram, ReportError> {
        Ok(ProductProgram::new(self.parsed_circuits()?)?)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CampaignResult {
    pub stats: CampaignStats,
    pub findings: Vec<FindingReport>,
    /// Persistence failures, one message each.
    pub io_errors: Vec<String>,
}

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("invalid configuration: {0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Adapter(#[from] AdapterError),
}

/// Progress notifications for observers of a running campaign.
#[derive(Debug)]
pub enum CampaignEvent<'a> {
    Built { program: u64, product: &'a ProductProgram, artifact: &'a Artifact },
    Normal { program: u64, round: u64, outcome: &'a VmOutcome },
    Scheduled { decision: &'a ScheduleDecision, counters_before: &'a InjectionCounters, trace: &'a TraceRecord },
    Injected { outcome: &'a VmOutcome },
    Finding { report: &'a FindingReport, duplicate: bool },
}

fn sub_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generates the original circuit and its transformed variants for program
/// `program`; returns the product, the program's generator for later rounds
/// and the number of stalled transformations.
fn draw_product(
    config: &CampaignConfig,
    catalog: &RuleCatalog,
    program: u64,
) -> Result<(ProductProgram, ChaCha8Rng, u64), ConfigError> {
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(config.seed, program));
    let original = generate_circuit(rng.gen(), &config.gen).map_err(|e| ConfigError::Gen(e.to_string()))?;
    let k = config.functions.sample(&mut rng);
    let mut circuits = vec![original.clone()];
    let mut stalled = 0;
    for _ in 1..k {
        let t = transform(&original, catalog, config.transforms.sample(&mut rng), &mut rng);
        stalled += u64::from(t.stalled);
        circuits.push(t.circuit);
    }
    let product = ProductProgram::new(circuits).expect("variants share the original signature");
    Ok((product, rng, stalled))
}

/// The product program a campaign with `config` builds for index `program`.
pub fn campaign_product(config: &CampaignConfig, program: u64) -> Result<ProductProgram, ConfigError> {
    config.validate()?;
    Ok(draw_product(config, &RuleCatalog::standard(), program)?.0)
}

pub fn run_campaign(config: &CampaignConfig, adapter: &mut dyn VmAdapter) -> Result<CampaignResult, CampaignError> {
    run_campaign_observed(config, adapter, &mut |_| {})
}

fn recoverable<T>(r: Result<T, AdapterError>, stats: &mut CampaignStats) -> Result<Option<T>, AdapterError> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(e) if e.is_fatal() => Err(e),
        Err(_) => {
            stats.adapter_errors += 1;
            Ok(None)
        }
    }
}

/// Runs the generate / transform / execute loops described by `config`,
/// reporting progress to `observer`.
pub fn run_campaign_observed(
    config: &CampaignConfig,
    adapter: &mut dyn VmAdapter,
    observer: &mut dyn FnMut(CampaignEvent<'_>),
) -> Result<CampaignResult, CampaignError> {
    config.validate()?;
    let catalog = RuleCatalog::standard();
    let mut stats = CampaignStats { seed: config.seed, vm: adapter.id(), ..CampaignStats::default() };
    let mut counters = InjectionCounters::new();
    let mut seen: BTreeSet<Signature> = BTreeSet::new();
    let mut findings = Vec::new();
    let mut io_errors = Vec::new();

    'programs: for program in 0..config.programs as u64 {
        stats.programs += 1;
        let (product, mut rng, stalled) = draw_product(config, &catalog, program)?;
        stats.transforms_stalled += stalled;
        let Some(artifact) = recoverable(adapter.build(&product), &mut stats)? else { continue };
        if let Some(p) = &artifact.program {
            stats.coverage.extend(p.mnemonics());
        }
        observer(CampaignEvent::Built { program, product: &product, artifact: &artifact });

        for round in 0..config.rounds_per_product as u64 {
            let inputs = generate_inputs(product.arity(), &mut rng, config.input_pool_probability);
            let Some(normal) = recoverable(adapter.run(&artifact, &inputs, None), &mut stats)? else { continue };
            stats.normal_runs += 1;
            if artifact.program.is_none() {
                if let Some(t) = &normal.trace {
                    stats.coverage.extend(t.rows.iter().map(|r| r.instr.op));
                }
            }
            observer(CampaignEvent::Normal { program, round, outcome: &normal });

            let mut plan = None;
            let mut injected = None;
            if config.injection && normal.is_success() {
                if let Some(trace) = &normal.trace {
                    let before = counters.clone();
                    if let Ok(decision) = schedule(trace, &mut counters, &config.injection_types, &mut rng) {
                        observer(CampaignEvent::Scheduled { decision: &decision, counters_before: &before, trace });
                        if let Some(out) = recoverable(adapter.run(&artifact, &inputs, Some(&decision.plan)), &mut stats)? {
                            stats.injected_runs += 1;
                            stats.injections_fired += u64::from(out.trace.as_ref().is_some_and(|t| t.injection.is_some()));
                            stats.outcome_matrix.record(&out);
                            observer(CampaignEvent::Injected { outcome: &out });
                            plan = Some(decision.plan);
                            injected = Some(out);
                        }
                    }
                }
            }

            let verdict = classify(&normal, injected.as_ref());
            *stats.verdicts.entry(verdict).or_insert(0) += 1;
            if !verdict.is_finding() {
                continue;
            }
            let signature = Signature::of(verdict, &normal, plan.as_ref());
            let mut report = FindingReport {
                verdict,
                signature,
                vm: stats.vm.clone(),
                campaign_seed: config.seed,
                program,
                round,
                circuits: product.circuits.iter().map(Circuit::render).collect(),
                inputs,
                plan: if verdict == Verdict::SoundnessBug { plan } else { None },
                normal: OutcomeSummary::from(&normal),
                injected: if verdict == Verdict::SoundnessBug { injected.as_ref().map(OutcomeSummary::from) } else { None },
                trace_file: None,
            };
            if !seen.insert(signature) {
                stats.duplicates += 1;
                observer(CampaignEvent::Finding { report: &report, duplicate: true });
                continue;
            }
            stats.findings += 1;
            if let Some(dir) = &config.output_dir {
                let trace = match verdict {
                    Verdict::SoundnessBug => injected.as_ref().and_then(|o| o.trace.as_ref()),
                    _ => normal.trace.as_ref(),
                };
                if let Err(e) = persist(dir, findings.len() + 1, &mut report, trace) {
                    stats.io_errors += 1;
                    io_errors.push(format!("finding {}: {e}", findings.len() + 1));
                }
            }
            observer(CampaignEvent::Finding { report: &report, duplicate: false });
            findings.push(report);
            if config.stop_on_finding {
                break 'programs;
            }
        }
    }

    stats.injection_counters = counters;
    if let Some(dir) = &config.output_dir {
        if let Err(e) = fs::create_dir_all(dir).and_then(|_| fs::write(dir.join(STATS_FILE), stats.to_json())) {
            io_errors.push(format!("{STATS_FILE}: {e}"));
        }
    }
    Ok(CampaignResult { stats, findings, io_errors })
}

fn persist(dir: &Path, index: usize, report: &mut FindingReport, trace: Option<&TraceRecord>) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    let stem = format!("finding-{index:04}");
    if let Some(t) = trace {
        let name = format!("{stem}.trace.tsv");
        fs::write(dir.join(&name), t.to_tsv())?;
        report.trace_file = Some(name);
    }
    fs::write(dir.join(format!("{stem}.json")), report.to_json())
}
