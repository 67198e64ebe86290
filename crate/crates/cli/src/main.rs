use std::collections::BTreeSet;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use zkmorph_core::codegen::{compile_to_refvm, CompileOptions};
use zkmorph_core::harness::{
    campaign_product, minimize, open_adapter, replay, run_campaign_observed, serve, AdapterError, CampaignConfig,
    CampaignError, CampaignEvent, CampaignStats, ExternalAdapter, FindingReport, MinimizeError, RefVmAdapter,
    VmAdapter,
};
use zkmorph_core::inject::InjectionType;
use zkmorph_core::metamorph::RuleCatalog;
use zkmorph_core::refvm::{Weakness, WeaknessSet};

const EXIT_FINDINGS: u8 = 10;
const EXIT_USAGE: u8 = 2;
const EXIT_ADAPTER: u8 = 3;
const EXIT_OTHER: u8 = 1;
/// Overrides the output directory of the config file.
const OUT_ENV: &str = "ZKMORPH_OUT";

#[derive(Parser)]
#[command(name = "zkmorph", version, about = "Metamorphic and fault-injection fuzzer for zkVM pipelines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a fuzzing campaign.
    Fuzz(FuzzArgs),
    /// Re-execute a stored finding and print its verdict.
    Replay(ReplayArgs),
    /// Write the product-program source and reference-VM disassembly.
    Emit(EmitArgs),
    /// Print the rewrite-rule catalog.
    Rules,
    /// Re-render a stored campaign statistics file.
    Stats {
        /// Path to a stats.json file.
        file: PathBuf,
    },
    /// Serve the reference VM over the external adapter protocol.
    #[command(hide = true)]
    AdapterRefvm {
        #[arg(long, value_parser = parse_weaknesses)]
        weaknesses: Option<WeaknessSet>,
        /// Directory for run traces.
        #[arg(long)]
        trace_dir: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Args)]
struct CampaignFlags {
    /// TOML campaign configuration; explicit flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Campaign seed.
    #[arg(long)]
    seed: Option<u64>,
    /// `refvm` or the command line of an external adapter.
    #[arg(long)]
    vm: Option<String>,
    /// Number of product programs.
    #[arg(long)]
    programs: Option<usize>,
    /// Minimum rewrite rules per transformed variant.
    #[arg(long)]
    transforms_min: Option<usize>,
    /// Maximum rewrite rules per transformed variant.
    #[arg(long)]
    transforms_max: Option<usize>,
    /// Minimum functions per product program.
    #[arg(long)]
    functions_min: Option<usize>,
    /// Maximum functions per product program.
    #[arg(long)]
    functions_max: Option<usize>,
    /// Input rounds per product program.
    #[arg(long)]
    rounds: Option<usize>,
    /// Fault injection on or off.
    #[arg(long, value_enum)]
    inject: Option<Switch>,
    /// Comma-separated injection types, or `all`.
    #[arg(long, value_parser = parse_types)]
    types: Option<BTreeSet<InjectionType>>,
    /// Comma-separated seeded weaknesses of the reference VM, or `none`.
    #[arg(long, value_parser = parse_weaknesses)]
    weaknesses: Option<WeaknessSet>,
    /// Output directory for findings and statistics.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FuzzArgs {
    #[command(flatten)]
    campaign: CampaignFlags,
    /// Stop after the first finding.
    #[arg(long)]
    stop_on_finding: bool,
    /// Minimize every finding and store it next to the original.
    #[arg(long)]
    minimize: bool,
    /// Print the effective configuration as TOML and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Args)]
struct ReplayArgs {
    /// Finding report (JSON).
    file: PathBuf,
    /// VM to replay on; defaults to the reference VM.
    #[arg(long)]
    vm: Option<String>,
    /// Reference-VM weaknesses; defaults to those recorded in the finding.
    #[arg(long, value_parser = parse_weaknesses)]
    weaknesses: Option<WeaknessSet>,
    /// Minimize the finding after replaying it.
    #[arg(long)]
    minimize: bool,
    /// Where to write the minimized report; printed when absent.
    #[arg(long, requires = "minimize")]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct EmitArgs {
    #[command(flatten)]
    campaign: CampaignFlags,
    /// Index of the campaign program to emit.
    #[arg(long, default_value_t = 0)]
    program: u64,
    /// Emit the product program of a finding report instead.
    #[arg(long)]
    finding: Option<PathBuf>,
}

fn parse_list<T>(s: &str, all: &str, every: impl Fn() -> BTreeSet<T>, item: impl Fn(&str) -> Result<T, String>) -> Result<BTreeSet<T>, String>
where
    T: Ord,
{
    if s.eq_ignore_ascii_case(all) {
        return Ok(every());
    }
    s.split(',').map(str::trim).filter(|p| !p.is_empty()).map(item).collect()
}

fn parse_types(s: &str) -> Result<BTreeSet<InjectionType>, String> {
    parse_list(s, "all", || InjectionType::ALL.iter().copied().collect(), str::parse)
}

fn parse_weaknesses(s: &str) -> Result<WeaknessSet, String> {
    parse_list(s, "none", WeaknessSet::new, str::parse)
}

enum CliError {
    Usage(String),
    Adapter(String),
    Other(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Adapter(_) => EXIT_ADAPTER,
            CliError::Other(_) => EXIT_OTHER,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Adapter(m) | CliError::Other(m) => m,
        }
    }
}

impl From<AdapterError> for CliError {
    fn from(e: AdapterError) -> Self {
        CliError::Adapter(e.to_string())
    }
}

impl From<MinimizeError> for CliError {
    fn from(e: MinimizeError) -> Self {
        match e {
            MinimizeError::Adapter(a) => a.into(),
            other => CliError::Other(other.to_string()),
        }
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Other(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Other(format!("{}: {e}", path.display())))
}

fn resolve(flags: &CampaignFlags) -> Result<CampaignConfig, CliError> {
    let mut c = match &flags.config {
        Some(path) => toml::from_str(&read(path)?)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?,
        None => CampaignConfig::default(),
    };
    if let Some(dir) = std::env::var_os(OUT_ENV) {
        c.output_dir = Some(dir.into());
    }
    if let Some(v) = flags.seed {
        c.seed = v;
    }
    if let Some(v) = &flags.vm {
        c.vm = v.clone();
    }
    if let Some(v) = flags.programs {
        c.programs = v;
    }
    if let Some(v) = flags.transforms_min {
        c.transforms.min = v;
    }
    if let Some(v) = flags.transforms_max {
        c.transforms.max = v;
    }
    if let Some(v) = flags.functions_min {
        c.functions.min = v;
    }
    if let Some(v) = flags.functions_max {
        c.functions.max = v;
    }
    if let Some(v) = flags.rounds {
        c.rounds_per_product = v;
    }
    if let Some(v) = flags.inject {
        c.injection = matches!(v, Switch::On);
    }
    if let Some(v) = &flags.types {
        c.injection_types = v.clone();
    }
    if let Some(v) = &flags.weaknesses {
        c.weaknesses = v.clone();
    }
    if let Some(v) = &flags.out {
        c.output_dir = Some(v.clone());
    }
    c.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(c)
}

fn fuzz(args: &FuzzArgs) -> Result<u8, CliError> {
    let mut config = resolve(&args.campaign)?;
    config.stop_on_finding |= args.stop_on_finding;
    if args.print_config {
        let text = toml::to_string(&config).map_err(|e| CliError::Other(e.to_string()))?;
        print!("{text}");
        return Ok(0);
    }
    let mut adapter = open_adapter(&config)?;
    let result = run_campaign_observed(&config, adapter.as_mut(), &mut |e| {
        if let CampaignEvent::Finding { report, duplicate: false } = e {
            eprintln!("finding {} at program {} round {}", report.signature, report.program, report.round);
        }
    })
    .map_err(|e| match e {
        CampaignError::Config(c) => CliError::Usage(c.to_string()),
        CampaignError::Adapter(a) => a.into(),
    })?;
    print!("{}", result.stats.render());
    for (i, f) in result.findings.iter().enumerate() {
        println!("finding-{:04}: {} (program {}, round {})", i + 1, f.signature, f.program, f.round);
    }
    for e in &result.io_errors {
        eprintln!("error: {e}");
    }
    if args.minimize {
        for (i, f) in result.findings.iter().enumerate() {
            let m = minimize(f, adapter.as_mut())?;
            let text = m.to_json();
            match &config.output_dir {
                Some(dir) => write(&dir.join(format!("finding-{:04}.min.json", i + 1)), &text)?,
                None => print!("{text}"),
            }
        }
    }
    Ok(if result.findings.is_empty() { 0 } else { EXIT_FINDINGS })
}

/// Weaknesses recorded in a reference-VM build id such as `refvm 0.1.0 [W_TRIREG]`.
fn recorded_weaknesses(vm: &str) -> Option<WeaknessSet> {
    let inner = vm.strip_prefix("refvm ")?.split_once('[')?.1.strip_suffix(']')?;
    inner.split(',').filter(|s| !s.is_empty()).map(|s| s.parse::<Weakness>().ok()).collect()
}

fn replay_cmd(args: &ReplayArgs) -> Result<u8, CliError> {
    let report = FindingReport::from_json(&read(&args.file)?).map_err(|e| CliError::Other(e.to_string()))?;
    let mut adapter: Box<dyn VmAdapter> = match args.vm.as_deref() {
        None | Some("refvm") => {
            let weaknesses =
                args.weaknesses.clone().or_else(|| recorded_weaknesses(&report.vm)).unwrap_or_default();
            Box::new(RefVmAdapter::new(weaknesses))
        }
        Some(cmd) => Box::new(ExternalAdapter::spawn(cmd)?),
    };
    let r = replay(&report, adapter.as_mut())?;
    for w in &r.warnings {
        eprintln!("warning: {w}");
    }
    println!("stored verdict: {}", report.verdict);
    println!("replayed verdict: {}", r.verdict);
    if args.minimize {
        let m = minimize(&report, adapter.as_mut())?;
        match &args.output {
            Some(path) => write(path, &m.to_json())?,
            None => print!("{}", m.to_json()),
        }
    }
    Ok(0)
}

fn emit(args: &EmitArgs) -> Result<u8, CliError> {
    let config = resolve(&args.campaign)?;
    let product = match &args.finding {
        Some(path) => {
            let report = FindingReport::from_json(&read(path)?).map_err(|e| CliError::Other(e.to_string()))?;
            report.product().map_err(|e| CliError::Other(e.to_string()))?
        }
        None => campaign_product(&config, args.program).map_err(|e| CliError::Usage(e.to_string()))?,
    };
    let source = product.source();
    let asm = compile_to_refvm(&product, &CompileOptions::default())
        .map_err(|e| CliError::Other(e.to_string()))?
        .disassemble();
    match &config.output_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| CliError::Other(format!("{}: {e}", dir.display())))?;
            write(&dir.join("product.rs"), &source)?;
            write(&dir.join("product.s"), &asm)?;
            println!("{}", dir.join("product.rs").display());
            println!("{}", dir.join("product.s").display());
        }
        None => print!("{source}\n{asm}"),
    }
    Ok(0)
}

fn stats(file: &Path) -> Result<u8, CliError> {
    let stats = CampaignStats::from_json(&read(file)?)
        .map_err(|e| CliError::Other(format!("{}: {e}", file.display())))?;
    print!("{}", stats.render());
    Ok(0)
}

fn adapter_refvm(weaknesses: Option<WeaknessSet>, trace_dir: Option<PathBuf>) -> Result<u8, CliError> {
    let dir = trace_dir.unwrap_or_else(|| std::env::temp_dir().join(format!("zkmorph-traces-{}", std::process::id())));
    fs::create_dir_all(&dir).map_err(|e| CliError::Other(format!("{}: {e}", dir.display())))?;
    let mut vm = RefVmAdapter::new(weaknesses.unwrap_or_default());
    serve(&mut vm, io::stdin().lock(), io::stdout().lock(), Some(&dir)).map_err(|e| CliError::Other(e.to_string()))?;
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fuzz(args) => fuzz(&args),
        Command::Replay(args) => replay_cmd(&args),
        Command::Emit(args) => emit(&args),
        Command::Rules => {
            print!("{}", RuleCatalog::standard().render_table());
            Ok(0)
        }
        Command::Stats { file } => stats(&file),
        Command::AdapterRefvm { weaknesses, trace_dir } => adapter_refvm(weaknesses, trace_dir),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn list_parsing() {
        assert_eq!(parse_types("all").unwrap().len(), InjectionType::ALL.len());
        assert_eq!(
            parse_types("instr_word_mod, BR_NEG_COND").unwrap(),
            [InjectionType::InstrWordMod, InjectionType::BrNegCond].into_iter().collect()
        );
        assert!(parse_types("nope").is_err());
        assert!(parse_weaknesses("none").unwrap().is_empty());
        assert_eq!(parse_weaknesses("W_TRIREG").unwrap(), [Weakness::TriReg].into_iter().collect());
    }

    #[test]
    fn build_ids() {
        assert_eq!(recorded_weaknesses("refvm 0.1.0 []"), Some(WeaknessSet::new()));
        assert_eq!(
            recorded_weaknesses("refvm 0.1.0 [W_TRIREG,D_SHORT_TRACE]"),
            Some([Weakness::TriReg, Weakness::ShortTrace].into_iter().collect())
        );
        assert_eq!(recorded_weaknesses("other-vm"), None);
    }
}
