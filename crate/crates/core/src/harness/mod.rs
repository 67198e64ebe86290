//! Campaign orchestration: input generation, the bug oracle, finding
//! persistence, replay and minimization, and the VM adapter boundary.

mod adapter;
mod campaign;
mod reduce;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codegen::SUCCESS;
use crate::gen::{draw_literal, GenConfig, SizeRange, BOUNDARY_POOL};
use crate::il::Word;
use crate::inject::{InjectionCounters, InjectionType};
use crate::refvm::{Decision, ExitStatus, Opcode, TraceRecord, WeaknessSet, DEFAULT_STEP_BUDGET};

pub use adapter::{
    open_adapter, serve, AdapterError, Artifact, ExternalAdapter, RefVmAdapter, Request, Response, VmAdapter,
    EXIT_BUDGET, EXIT_FAULT, EXIT_OK, EXIT_REJECTED,
};
pub use campaign::{
    campaign_product, run_campaign, run_campaign_observed, CampaignError, CampaignEvent, CampaignResult, FindingReport,
    OutcomeSummary, ReportError, Signature, STATS_FILE,
};
pub use reduce::{minimize, replay, MinimizeError, Replay};

/// Default probability that an input word comes from the boundary pool.
pub const DEFAULT_INPUT_POOL_PROBABILITY: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignConfig {
    pub seed: u64,
    /// `refvm`, or a command line starting an external adapter process.
    pub vm: String,
    pub programs: usize,
    /// Rewrite rules stacked per transformed variant.
    pub transforms: SizeRange,
    /// Functions bundled per product program (the original included).
    pub functions: SizeRange,
    pub rounds_per_product: usize,
    pub injection: bool,
    pub injection_types: BTreeSet<InjectionType>,
    pub weaknesses: WeaknessSet,
    pub input_pool_probability: f64,
    pub step_budget: usize,
    /// Stop after the first persisted finding.
    pub stop_on_finding: bool,
    pub output_dir: Option<PathBuf>,
    pub gen: GenConfig,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig {
            seed: 0,
            vm: "refvm".to_string(),
            programs: 100,
            transforms: SizeRange::new(1, 4),
            functions: SizeRange::new(2, 10),
            rounds_per_product: 3,
            injection: true,
            injection_types: InjectionType::ALL.iter().copied().collect(),
            weaknesses: WeaknessSet::new(),
            input_pool_probability: DEFAULT_INPUT_POOL_PROBABILITY,
            step_budget: DEFAULT_STEP_BUDGET,
            stop_on_finding: false,
            output_dir: None,
            gen: GenConfig { asm_extension: true, ..GenConfig::default() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("transforms range {0}..={1} is empty")]
    Transforms(usize, usize),
    #[error("functions range {0}..={1} must be non-empty with a minimum of at least 2")]
    Functions(usize, usize),
    #[error("at most {} functions per product are supported", crate::codegen::MAX_FUNCTIONS)]
    TooManyFunctions,
    #[error("input pool probability {0} is outside [0, 1]")]
    Probability(String),
    #[error("injection is on but no injection types are enabled")]
    NoTypes,
    #[error("step budget must be positive")]
    StepBudget,
    #[error("generator: {0}")]
    Gen(String),
}

impl CampaignConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.transforms.is_empty() {
            return Err(ConfigError::Transforms(self.transforms.min, self.transforms.max));
        }
        if self.functions.is_empty() || self.functions.min < 2 {
            return Err(ConfigError::Functions(self.functions.min, self.functions.max));
        }
        if self.functions.max > crate::codegen::MAX_FUNCTIONS {
            return Err(ConfigError::TooManyFunctions);
        }
        if !(0.0..=1.0).contains(&self.input_pool_probability) {
            return Err(ConfigError::Probability(self.input_pool_probability.to_string()));
        }
        if self.injection && self.injection_types.is_empty() {
            return Err(ConfigError::NoTypes);
        }
        if self.step_budget == 0 {
            return Err(ConfigError::StepBudget);
        }
        self.gen.validate().map_err(|e| ConfigError::Gen(e.to_string()))
    }
}

/// Input words for one round: boundary values with probability
/// `pool_probability`, uniform words otherwise.
pub fn generate_inputs<R: Rng + ?Sized>(arity: usize, rng: &mut R, pool_probability: f64) -> Vec<Word> {
    (0..arity).map(|_| draw_literal(rng, &BOUNDARY_POOL, pool_probability)).collect()
}

/// Outcome of one program run as seen by the harness. Exit code 0 means the
/// run finished and its proof was accepted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VmOutcome {
    pub output: Word,
    pub exit_code: i32,
    /// Executor status, when the adapter exposes it.
    pub exit: Option<ExitStatus>,
    /// Verifier decision, when the adapter exposes it.
    pub decision: Option<Decision>,
    pub trace: Option<TraceRecord>,
}

impl VmOutcome {
    pub fn is_success(&self) -> bool {
        self.exit_code == EXIT_OK && self.output == SUCCESS
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Verdict {
    Ok,
    CompletenessBug,
    MTDivergence,
    SoundnessBug,
    Inconclusive,
}

impl Verdict {
    pub const ALL: [Verdict; 5] =
        [Verdict::Ok, Verdict::CompletenessBug, Verdict::MTDivergence, Verdict::SoundnessBug, Verdict::Inconclusive];

    pub fn name(self) -> &'static str {
        match self {
            Verdict::Ok => "Ok",
            Verdict::CompletenessBug => "CompletenessBug",
            Verdict::MTDivergence => "MTDivergence",
            Verdict::SoundnessBug => "SoundnessBug",
            Verdict::Inconclusive => "Inconclusive",
        }
    }

    /// Verdicts that are persisted as findings.
    pub fn is_finding(self) -> bool {
        matches!(self, Verdict::CompletenessBug | Verdict::MTDivergence | Verdict::SoundnessBug)
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Verdict {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Verdict::ALL.into_iter().find(|v| v.name() == s).ok_or_else(|| format!("unknown verdict `{s}`"))
    }
}

/// Three-way oracle. Any output other than SUCCESS counts as altered.
pub fn classify(normal: &VmOutcome, injected: Option<&VmOutcome>) -> Verdict {
    if normal.exit_code != EXIT_OK {
        return Verdict::CompletenessBug;
    }
    if normal.output != SUCCESS {
        return Verdict::MTDivergence;
    }
    match injected {
        None => Verdict::Ok,
        Some(inj) if inj.exit_code == EXIT_OK && inj.output != SUCCESS => Verdict::SoundnessBug,
        Some(_) => Verdict::Inconclusive,
    }
}

/// Injected-run outcomes split by output (SUCCESS or altered) and exit code.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeMatrix {
    pub success_exit_zero: u64,
    pub success_exit_nonzero: u64,
    pub oops_exit_zero: u64,
    pub oops_exit_nonzero: u64,
}

impl OutcomeMatrix {
    pub fn record(&mut self, outcome: &VmOutcome) {
        let cell = match (outcome.output == SUCCESS, outcome.exit_code == EXIT_OK) {
            (true, true) => &mut self.success_exit_zero,
            (true, false) => &mut self.success_exit_nonzero,
            (false, true) => &mut self.oops_exit_zero,
            (false, false) => &mut self.oops_exit_nonzero,
        };
        *cell += 1;
    }

    pub fn total(&self) -> u64 {
        self.success_exit_zero + self.success_exit_nonzero + self.oops_exit_zero + self.oops_exit_nonzero
    }

    /// Runs whose output or exit code changed.
    pub fn affected(&self) -> u64 {
        self.total() - self.success_exit_zero
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CampaignStats {
    pub seed: u64,
    pub vm: String,
    pub programs: u64,
    pub adapter_errors: u64,
    pub transforms_stalled: u64,
    pub normal_runs: u64,
    pub injected_runs: u64,
    /// Injected runs in which the fault actually fired.
    pub injections_fired: u64,
    pub verdicts: BTreeMap<Verdict, u64>,
    pub findings: u64,
    pub duplicates: u64,
    pub io_errors: u64,
    pub outcome_matrix: OutcomeMatrix,
    /// Distinct mnemonics over all compiled programs.
    pub coverage: BTreeSet<Opcode>,
    pub injection_counters: InjectionCounters,
}

impl CampaignStats {
    pub fn verdict_count(&self, v: Verdict) -> u64 {
        self.verdicts.get(&v).copied().unwrap_or(0)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("stats serialize");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<CampaignStats, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Human-readable summary.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let m = &self.outcome_matrix;
        writeln!(out, "seed {} on {}", self.seed, self.vm).unwrap();
        writeln!(
            out,
            "programs {} (adapter errors {}), normal runs {}, injected runs {} (fired {})",
            self.programs, self.adapter_errors, self.normal_runs, self.injected_runs, self.injections_fired
        )
        .unwrap();
        writeln!(out, "findings {} (duplicates {}, io errors {})", self.findings, self.duplicates, self.io_errors)
            .unwrap();
        writeln!(out, "verdicts:").unwrap();
        for v in Verdict::ALL {
            writeln!(out, "  {:<16} {}", v.name(), self.verdict_count(v)).unwrap();
        }
        writeln!(out, "injected outcomes    exit = 0   exit != 0").unwrap();
        writeln!(out, "  SUCCESS          {:>10} {:>11}", m.success_exit_zero, m.success_exit_nonzero).unwrap();
        writeln!(out, "  OOPS             {:>10} {:>11}", m.oops_exit_zero, m.oops_exit_nonzero).unwrap();
        let names: Vec<&str> = self.coverage.iter().map(|op| op.mnemonic()).collect();
        writeln!(out, "instruction coverage {}: {}", names.len(), names.join(" ")).unwrap();
        let counts: Vec<String> = self.injection_counters.iter().map(|(op, n)| format!("{op}={n}")).collect();
        writeln!(out, "injections per mnemonic: {}", counts.join(" ")).unwrap();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn outcome(output: Word, exit_code: i32) -> VmOutcome {
        VmOutcome { output, exit_code, exit: None, decision: None, trace: None }
    }

    #[test]
    fn oracle() {
        let ok = outcome(SUCCESS, EXIT_OK);
        assert_eq!(classify(&outcome(0, EXIT_FAULT), None), Verdict::CompletenessBug);
        assert_eq!(classify(&outcome(SUCCESS, EXIT_REJECTED), None), Verdict::CompletenessBug);
        assert_eq!(classify(&outcome(0, EXIT_OK), None), Verdict::MTDivergence);
        assert_eq!(classify(&ok, None), Verdict::Ok);
        assert_eq!(classify(&ok, Some(&outcome(0, EXIT_OK))), Verdict::SoundnessBug);
        assert_eq!(classify(&ok, Some(&outcome(0, EXIT_REJECTED))), Verdict::Inconclusive);
        assert_eq!(classify(&ok, Some(&outcome(SUCCESS, EXIT_OK))), Verdict::Inconclusive);
        assert_eq!(classify(&ok, Some(&outcome(5, EXIT_FAULT))), Verdict::Inconclusive);
        assert_eq!(classify(&outcome(0, EXIT_FAULT), Some(&outcome(0, EXIT_OK))), Verdict::CompletenessBug);
    }

    #[test]
    fn inputs() {
        assert!(generate_inputs(0, &mut ChaCha8Rng::seed_from_u64(0), 0.3).is_empty());
        let a = generate_inputs(8, &mut ChaCha8Rng::seed_from_u64(5), 0.3);
        assert_eq!(a, generate_inputs(8, &mut ChaCha8Rng::seed_from_u64(5), 0.3));
        let words = generate_inputs(10_000, &mut ChaCha8Rng::seed_from_u64(6), 0.3);
        for b in BOUNDARY_POOL {
            assert!(words.contains(&b), "{b:#x} never drawn");
        }
    }

    #[test]
    fn config_validation() {
        assert_eq!(CampaignConfig::default().validate(), Ok(()));
        let mut c = CampaignConfig { functions: SizeRange::new(1, 3), ..CampaignConfig::default() };
        assert_eq!(c.validate(), Err(ConfigError::Functions(1, 3)));
        c.functions = SizeRange::new(2, 2);
        c.transforms = SizeRange::new(3, 2);
        assert_eq!(c.validate(), Err(ConfigError::Transforms(3, 2)));
        c.transforms = SizeRange::new(1, 1);
        c.injection_types.clear();
        assert_eq!(c.validate(), Err(ConfigError::NoTypes));
        c.injection = false;
        assert_eq!(c.validate(), Ok(()));
    }

    #[test]
    fn matrix_accounting() {
        let mut m = OutcomeMatrix::default();
        m.record(&outcome(SUCCESS, 0));
        m.record(&outcome(SUCCESS, 2));
        m.record(&outcome(0, 0));
        m.record(&outcome(7, 1));
        assert_eq!((m.success_exit_zero, m.success_exit_nonzero, m.oops_exit_zero, m.oops_exit_nonzero), (1, 1, 1, 1));
        assert_eq!(m.total(), 4);
        assert_eq!(m.affected(), 3);
    }

    #[test]
    fn verdict_names() {
        for v in Verdict::ALL {
            assert_eq!(v.name().parse::<Verdict>(), Ok(v));
            assert_eq!(serde_json::to_string(&v).unwrap(), format!("\"{v}\""));
        }
    }
}
