use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use zkmorph_core::harness::{
    run_campaign, CampaignConfig, ExternalAdapter, FindingReport, RefVmAdapter, Verdict, VmAdapter,
};
use zkmorph_core::refvm::Weakness;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_zkmorph"));
    c.env_remove("ZKMORPH_OUT");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("zkmorph-cli-{name}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn findings(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| {
            let n = p.file_name().unwrap().to_string_lossy();
            n.starts_with("finding-") && n.ends_with(".json") && !n.ends_with(".min.json")
        })
        .collect();
    v.sort();
    v
}

#[test]
fn rules_table() {
    let o = run(&["rules"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 85);
    assert!(lines[0].starts_with("Rule ID"));
    assert!(lines[1].starts_with("comm-or"));
    assert!(text.lines().any(|l| l.starts_with("one-div ")));
}

#[test]
fn help_documents_every_flag() {
    let text = stdout(&run(&["fuzz", "--help"]));
    for flag in [
        "--seed", "--vm", "--programs", "--transforms-min", "--transforms-max", "--functions-min", "--functions-max",
        "--rounds", "--inject", "--types", "--weaknesses", "--out", "--config",
    ] {
        assert!(text.contains(flag), "{flag} missing from help");
    }
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(run(&["fuzz", "--inject", "maybe"]).status.code(), Some(2));
    assert_eq!(run(&["fuzz", "--types", "NOT_A_TYPE"]).status.code(), Some(2));
    assert_eq!(run(&["bogus"]).status.code(), Some(2));
    let o = run(&["fuzz", "--functions-min", "1", "--programs", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("functions"));
}

#[test]
fn fuzz_smoke_with_trireg() {
    let o = run(&["fuzz", "--seed", "1", "--programs", "10", "--weaknesses", "W_TRIREG"]);
    let text = stdout(&o);
    assert!(text.contains("SoundnessBug"));
    assert!(text.contains("injected outcomes"));
    assert!(text.contains("instruction coverage"));
    let found = text.lines().any(|l| l.starts_with("finding-"));
    assert_eq!(o.status.code(), Some(if found { 10 } else { 0 }));
}

#[test]
fn clean_campaign_exits_zero() {
    let o = run(&["fuzz", "--seed", "2", "--programs", "5", "--functions-max", "3"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(!stdout(&o).lines().any(|l| l.starts_with("finding-")));
}

#[test]
fn findings_are_persisted_replayed_and_minimized() {
    let dir = scratch("replay");
    let out = dir.to_str().unwrap();
    let o = run(&[
        "fuzz", "--seed", "3", "--programs", "200", "--weaknesses", "W_TRIREG", "--types", "INSTR_WORD_MOD",
        "--out", out, "--stop-on-finding",
    ]);
    assert_eq!(o.status.code(), Some(10), "{}", stdout(&o));
    let files = findings(&dir);
    assert_eq!(files.len(), 1);
    let report = FindingReport::from_json(&fs::read_to_string(&files[0]).unwrap()).unwrap();
    assert_eq!(report.verdict, Verdict::SoundnessBug);
    assert!(dir.join("stats.json").exists());
    let file = files[0].to_str().unwrap();

    let same = run(&["replay", file]);
    assert_eq!(same.status.code(), Some(0));
    assert!(stdout(&same).contains("replayed verdict: SoundnessBug"));

    let fixed = run(&["replay", file, "--weaknesses", "none"]);
    assert_eq!(fixed.status.code(), Some(0));
    assert!(stdout(&fixed).contains("replayed verdict: Inconclusive"));
    assert!(String::from_utf8_lossy(&fixed.stderr).contains("warning"));

    let min_path = dir.join("min.json");
    let m = run(&["replay", file, "--minimize", "--output", min_path.to_str().unwrap()]);
    assert_eq!(m.status.code(), Some(0));
    let min = FindingReport::from_json(&fs::read_to_string(&min_path).unwrap()).unwrap();
    assert_eq!(min.circuits.len(), 2);
    assert!(stdout(&run(&["replay", min_path.to_str().unwrap()])).contains("replayed verdict: SoundnessBug"));

    let stats = run(&["stats", dir.join("stats.json").to_str().unwrap()]);
    assert_eq!(stats.status.code(), Some(0));
    assert!(stdout(&stats).contains("SoundnessBug     1"));
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn corrupted_finding_fails_to_parse() {
    let dir = scratch("corrupt");
    let path = dir.join("finding.json");
    fs::write(&path, "{\"verdict\": \"SoundnessBug\", ").unwrap();
    let o = run(&["replay", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("malformed finding report"));
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn config_file_round_trips_and_flags_override() {
    let dir = scratch("config");
    let first = run(&["fuzz", "--print-config", "--seed", "9", "--weaknesses", "W_LUI_IMM", "--rounds", "2"]);
    assert!(first.status.success());
    let text = stdout(&first);
    let parsed: CampaignConfig = toml::from_str(&text).unwrap();
    assert_eq!(parsed.seed, 9);
    assert_eq!(parsed.rounds_per_product, 2);
    assert_eq!(toml::to_string(&parsed).unwrap(), text);

    let path = dir.join("campaign.toml");
    fs::write(&path, &text).unwrap();
    let p = path.to_str().unwrap();
    assert_eq!(stdout(&run(&["fuzz", "--print-config", "--config", p])), text);
    let overridden: CampaignConfig =
        toml::from_str(&stdout(&run(&["fuzz", "--print-config", "--config", p, "--seed", "4", "--inject", "off"])))
            .unwrap();
    assert_eq!((overridden.seed, overridden.injection, overridden.rounds_per_product), (4, false, 2));

    let env: CampaignConfig = toml::from_str(&stdout(
        &bin().args(["fuzz", "--print-config", "--config", p]).env("ZKMORPH_OUT", "/tmp/elsewhere").output().unwrap(),
    ))
    .unwrap();
    assert_eq!(env.output_dir, Some(PathBuf::from("/tmp/elsewhere")));
    let flag: CampaignConfig = toml::from_str(&stdout(
        &bin()
            .args(["fuzz", "--print-config", "--config", p, "--out", "/tmp/flag"])
            .env("ZKMORPH_OUT", "/tmp/elsewhere")
            .output()
            .unwrap(),
    ))
    .unwrap();
    assert_eq!(flag.output_dir, Some(PathBuf::from("/tmp/flag")));

    fs::write(&path, "seed = 1\nunknown_key = 3\n").unwrap();
    assert_eq!(run(&["fuzz", "--config", p]).status.code(), Some(2));
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn emit_writes_source_and_disassembly() {
    let dir = scratch("emit");
    let o = run(&["emit", "--seed", "4", "--program", "2", "--out", dir.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let src = fs::read_to_string(dir.join("product.rs")).unwrap();
    assert!(src.starts_with("const OOPS: u32 = 0x0;\nconst SUCCESS: u32 = 0xC0FFEE;\n"));
    assert!(src.contains("// VM entry point"));
    let asm = fs::read_to_string(dir.join("product.s")).unwrap();
    assert!(asm.contains("halt"));
    let again = stdout(&run(&["emit", "--seed", "4", "--program", "2"]));
    assert!(again.starts_with(&src));
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn external_adapter_matches_bundled_vm() {
    let cmd = format!("{} adapter-refvm --weaknesses W_TRIREG", env!("CARGO_BIN_EXE_zkmorph"));
    let config = CampaignConfig {
        seed: 21,
        programs: 25,
        vm: cmd.clone(),
        weaknesses: [Weakness::TriReg].into_iter().collect(),
        ..CampaignConfig::default()
    };
    let mut external = ExternalAdapter::spawn(&cmd).unwrap();
    let mut local = RefVmAdapter::new(config.weaknesses.clone());
    assert_eq!(external.id(), local.id());
    let a = run_campaign(&config, &mut external).unwrap();
    let b = run_campaign(&config, &mut local).unwrap();
    assert_eq!(a.stats.verdicts, b.stats.verdicts);
    assert_eq!(a.stats.outcome_matrix, b.stats.outcome_matrix);
    assert_eq!(a.stats.injection_counters, b.stats.injection_counters);
    assert_eq!(
        a.findings.iter().map(|f| (f.verdict, f.program, f.round)).collect::<Vec<_>>(),
        b.findings.iter().map(|f| (f.verdict, f.program, f.round)).collect::<Vec<_>>()
    );
}

#[test]
fn external_adapter_via_cli() {
    let vm = format!("{} adapter-refvm", env!("CARGO_BIN_EXE_zkmorph"));
    let o = run(&["fuzz", "--seed", "5", "--programs", "3", "--functions-max", "3", "--vm", &vm]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("normal runs 9"));
    let missing = run(&["fuzz", "--programs", "1", "--vm", "/nonexistent/adapter"]);
    assert_eq!(missing.status.code(), Some(3));
}
