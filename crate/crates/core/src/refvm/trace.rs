use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ExitStatus, Instruction, Opcode};
use crate::il::Word;
use crate::inject::InjectionType;

/// Facts about one executed instruction, as claimed by the prover.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub pc: Word,
    /// The instruction actually executed.
    pub instr: Instruction,
    pub rs1_val: Word,
    pub rs2_val: Word,
    /// Value written to `rd`, or 0 when the instruction writes no register.
    pub rd_val: Word,
    pub mem_addr: Option<Word>,
    /// Loaded bits for loads, stored bits for stores.
    pub mem_val: Option<Word>,
    pub next_pc: Word,
}

/// Description of the fault applied during an injected run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectionEvent {
    pub step: usize,
    pub kind: InjectionType,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    /// Public input tape preloaded into memory.
    pub inputs: Vec<Word>,
    pub rows: Vec<TraceRow>,
    pub final_output: Word,
    pub exit: ExitStatus,
    /// Set only when an injected fault actually fired.
    pub injection: Option<InjectionEvent>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TraceParseError {
    #[error("line {line}: {msg}")]
    Line { line: usize, msg: String },
    #[error("missing `{0}` header")]
    MissingHeader(&'static str),
}

const COLUMNS: &str = "step\tpc\tmnemonic\trd\trs1\trs2\timm\trs1_val\trs2_val\trd_val\tmem_addr\tmem_val\tnext_pc";

fn hex(w: Word) -> String {
    format!("{w:#010x}")
}

fn opt_hex(w: Option<Word>) -> String {
    w.map_or_else(|| "-".to_string(), hex)
}

fn parse_hex(s: &str) -> Result<Word, String> {
    let digits = s.strip_prefix("0x").ok_or_else(|| format!("expected hex word, got `{s}`"))?;
    Word::from_str_radix(digits, 16).map_err(|e| format!("`{s}`: {e}"))
}

fn parse_opt_hex(s: &str) -> Result<Option<Word>, String> {
    if s == "-" {
        Ok(None)
    } else {
        parse_hex(s).map(Some)
    }
}

impl TraceRecord {
    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    pub fn is_clean(&self) -> bool {
        self.exit == ExitStatus::Clean
    }

    /// Tab-separated dump: `# key: value` metadata, a column header, then
    /// one row per executed instruction with words in hex.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        let inputs: Vec<String> = self.inputs.iter().map(|w| hex(*w)).collect();
        writeln!(out, "# inputs: {}", inputs.join(",")).unwrap();
        writeln!(out, "# output: {}", hex(self.final_output)).unwrap();
        writeln!(out, "# exit: {}", self.exit).unwrap();
        if let Some(ev) = &self.injection {
            writeln!(out, "# injection: {} @ {}: {}", ev.kind, ev.step, ev.detail).unwrap();
        }
        writeln!(out, "#{COLUMNS}").unwrap();
        for r in &self.rows {
            let i = r.instr;
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.step,
                hex(r.pc),
                i.op,
                i.rd,
                i.rs1,
                i.rs2,
                i.imm,
                hex(r.rs1_val),
                hex(r.rs2_val),
                hex(r.rd_val),
                opt_hex(r.mem_addr),
                opt_hex(r.mem_val),
                hex(r.next_pc)
            )
            .unwrap();
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<TraceRecord, TraceParseError> {
        let mut inputs = None;
        let mut output = None;
        let mut exit = None;
        let mut injection = None;
        let mut rows = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let err = |msg: String| TraceParseError::Line { line: n + 1, msg };
            if line.trim().is_empty() {
                continue;
            }
            if let Some(meta) = line.strip_prefix("# ") {
                let (key, value) = meta.split_once(": ").ok_or_else(|| err("malformed header".into()))?;
                match key {
                    "inputs" => {
                        let words = if value.is_empty() {
                            Vec::new()
                        } else {
                            value.split(',').map(parse_hex).collect::<Result<_, _>>().map_err(err)?
                        };
                        inputs = Some(words);
                    }
                    "output" => output = Some(parse_hex(value).map_err(err)?),
                    "exit" => exit = Some(value.parse::<ExitStatus>().map_err(err)?),
                    "injection" => injection = Some(parse_injection(value).map_err(err)?),
                    _ => return Err(err(format!("unknown header `{key}`"))),
                }
                continue;
            }
            if line.starts_with('#') {
                continue;
            }
            rows.push(parse_row(line).map_err(err)?);
        }
        Ok(TraceRecord {
            inputs: inputs.ok_or(TraceParseError::MissingHeader("inputs"))?,
            rows,
            final_output: output.ok_or(TraceParseError::MissingHeader("output"))?,
            exit: exit.ok_or(TraceParseError::MissingHeader("exit"))?,
            injection,
        })
    }
}

fn parse_injection(value: &str) -> Result<InjectionEvent, String> {
    let (head, detail) = value.split_once(": ").ok_or("malformed injection header")?;
    let (kind, step) = head.split_once(" @ ").ok_or("malformed injection header")?;
    Ok(InjectionEvent {
        step: step.parse().map_err(|e| format!("{e}"))?,
        kind: kind.parse()?,
        detail: detail.to_string(),
    })
}

fn parse_row(line: &str) -> Result<TraceRow, String> {
    let f: Vec<&str> = line.split('\t').collect();
    if f.len() != 13 {
        return Err(format!("expected 13 columns, found {}", f.len()));
    }
    let reg = |s: &str| s.parse::<u8>().map_err(|e| format!("register `{s}`: {e}"));
    let op = Opcode::from_mnemonic(f[2]).ok_or_else(|| format!("unknown mnemonic `{}`", f[2]))?;
    let instr = Instruction {
        op,
        rd: reg(f[3])?,
        rs1: reg(f[4])?,
        rs2: reg(f[5])?,
        imm: f[6].parse().map_err(|e| format!("imm `{}`: {e}", f[6]))?,
    };
    Ok(TraceRow {
        step: f[0].parse().map_err(|e| format!("step `{}`: {e}", f[0]))?,
        pc: parse_hex(f[1])?,
        instr,
        rs1_val: parse_hex(f[7])?,
        rs2_val: parse_hex(f[8])?,
        rd_val: parse_hex(f[9])?,
        mem_addr: parse_opt_hex(f[10])?,
        mem_val: parse_opt_hex(f[11])?,
        next_pc: parse_hex(f[12])?,
    })
}
