use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{CampaignConfig, VmOutcome};
use crate::codegen::{compile_to_refvm, CompileOptions, ProductProgram};
use crate::il::{Circuit, Word};
use crate::inject::InjectionPlan;
use crate::refvm::{execute, verify, ExecConfig, ExecMode, ExitStatus, RefProgram, TraceRecord, WeaknessSet};

pub const EXIT_OK: i32 = 0;
pub const EXIT_REJECTED: i32 = 1;
pub const EXIT_FAULT: i32 = 2;
pub const EXIT_BUDGET: i32 = 3;

#[derive(Debug, Error)]
pub enum AdapterError {
    #[error("build failed: {0}")]
    Build(String),
    #[error("run failed: {0}")]
    Run(String),
    #[error("adapter i/o: {0}")]
    Io(#[from] io::Error),
    #[error("adapter protocol: {0}")]
    Protocol(String),
}

impl AdapterError {
    /// Errors after which the adapter cannot be used any more.
    pub fn is_fatal(&self) -> bool {
        matches!(self, AdapterError::Io(_) | AdapterError::Protocol(_))
    }
}

/// Build product of an adapter. `handle` is opaque to the harness; the
/// bundled VM also exposes the compiled program.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifact {
    pub handle: String,
    pub program: Option<RefProgram>,
}

pub trait VmAdapter {
    /// Identifies the VM build under test.
    fn id(&self) -> String;
    fn build(&mut self, product: &ProductProgram) -> Result<Artifact, AdapterError>;
    fn run(&mut self, artifact: &Artifact, inputs: &[Word], plan: Option<&InjectionPlan>)
        -> Result<VmOutcome, AdapterError>;
}

/// The bundled reference VM with a configurable set of seeded weaknesses.
#[derive(Debug, Clone, Default)]
pub struct RefVmAdapter {
    pub weaknesses: WeaknessSet,
    pub exec: ExecConfig,
    pub compile: CompileOptions,
}

impl RefVmAdapter {
    pub fn new(weaknesses: WeaknessSet) -> RefVmAdapter {
        RefVmAdapter { weaknesses, ..RefVmAdapter::default() }
    }

    pub fn with_exec(mut self, exec: ExecConfig) -> RefVmAdapter {
        self.exec = exec;
        self
    }

    /// Executes and verifies a compiled program directly.
    pub fn run_program(&self, program: &RefProgram, inputs: &[Word], plan: Option<&InjectionPlan>) -> VmOutcome {
        let mode = plan.map_or(ExecMode::Normal, |p| ExecMode::Injected(*p));
        let trace = execute(program, inputs, &mode, &self.exec);
        let decision = verify(program, &trace, &self.weaknesses);
        let exit_code = match &trace.exit {
            ExitStatus::Fault(_) => EXIT_FAULT,
            ExitStatus::StepBudget => EXIT_BUDGET,
            ExitStatus::Clean if decision.is_accept() => EXIT_OK,
            ExitStatus::Clean => EXIT_REJECTED,
        };
        VmOutcome {
            output: trace.final_output,
            exit_code,
            exit: Some(trace.exit.clone()),
            decision: Some(decision),
            trace: Some(trace),
        }
    }
}

impl VmAdapter for RefVmAdapter {
    fn id(&self) -> String {
        let names: Vec<&str> = self.weaknesses.iter().map(|w| w.name()).collect();
        format!("refvm {} [{}]", env!("CARGO_PKG_VERSION"), names.join(","))
    }

    fn build(&mut self, product: &ProductProgram) -> Result<Artifact, AdapterError> {
        let program = compile_to_refvm(product, &self.compile).map_err(|e| AdapterError::Build(e.to_string()))?;
        Ok(Artifact { handle: String::new(), program: Some(program) })
    }

    fn run(
        &mut self,
        artifact: &Artifact,
        inputs: &[Word],
        plan: Option<&InjectionPlan>,
    ) -> Result<VmOutcome, AdapterError> {
        let program = artifact.program.as_ref().ok_or_else(|| AdapterError::Run("artifact has no program".into()))?;
        Ok(self.run_program(program, inputs, plan))
    }
}

/// Adapter requests, one JSON object per line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "snake_case")]
pub enum Request {
    Hello,
    /// `source` is the Rust product program; `circuits` carries the same
    /// program in IL text form for adapters that compile from the IL.
    Build { source: String, circuits: Vec<String> },
    Run { artifact: String, inputs: Vec<Word>, plan: Option<InjectionPlan> },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Response {
    /// `ok` or `error`.
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub artifact: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<Word>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exit_code: Option<i32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_path: Option<String>,
}

impl Response {
    fn ok() -> Response {
        Response { status: "ok".into(), ..Response::default() }
    }

    fn error(message: impl Into<String>) -> Response {
        Response { status: "error".into(), message: Some(message.into()), ..Response::default() }
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

/// Client side of the line protocol, talking to a subprocess.
pub struct ExternalAdapter {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
    id: String,
}

impl ExternalAdapter {
    /// Starts `command_line` (whitespace-separated program and arguments)
    /// and performs the hello exchange.
    pub fn spawn(command_line: &str) -> Result<ExternalAdapter, AdapterError> {
        let mut parts = command_line.split_whitespace();
        let program = parts.next().ok_or_else(|| AdapterError::Protocol("empty adapter command".into()))?;
        let mut child = Command::new(program).args(parts).stdin(Stdio::piped()).stdout(Stdio::piped()).spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        let mut adapter = ExternalAdapter { child, stdin, stdout, id: String::new() };
        let hello = adapter.call(&Request::Hello)?;
        if !hello.is_ok() {
            return Err(AdapterError::Protocol(hello.message.unwrap_or_else(|| "hello rejected".into())));
        }
        adapter.id = hello.id.unwrap_or_else(|| command_line.to_string());
        Ok(adapter)
    }

    fn call(&mut self, request: &Request) -> Result<Response, AdapterError> {
        let line = serde_json::to_string(request).map_err(|e| AdapterError::Protocol(e.to_string()))?;
        writeln!(self.stdin, "{line}")?;
        self.stdin.flush()?;
        let mut reply = String::new();
        if self.stdout.read_line(&mut reply)? == 0 {
            return Err(AdapterError::Protocol("adapter closed its output".into()));
        }
        serde_json::from_str(&reply).map_err(|e| AdapterError::Protocol(format!("bad response: {e}")))
    }
}

impl Drop for ExternalAdapter {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl VmAdapter for ExternalAdapter {
    fn id(&self) -> String {
        self.id.clone()
    }

    fn build(&mut self, product: &ProductProgram) -> Result<Artifact, AdapterError> {
        let circuits = product.circuits.iter().map(Circuit::render).collect();
        let resp = self.call(&Request::Build { source: product.source(), circuits })?;
        if !resp.is_ok() {
            return Err(AdapterError::Build(resp.message.unwrap_or_default()));
        }
        let handle = resp.artifact.ok_or_else(|| AdapterError::Protocol("build response without artifact".into()))?;
        Ok(Artifact { handle, program: None })
    }

    fn run(
        &mut self,
        artifact: &Artifact,
        inputs: &[Word],
        plan: Option<&InjectionPlan>,
    ) -> Result<VmOutcome, AdapterError> {
        let resp =
            self.call(&Request::Run { artifact: artifact.handle.clone(), inputs: inputs.to_vec(), plan: plan.copied() })?;
        if !resp.is_ok() {
            return Err(AdapterError::Run(resp.message.unwrap_or_default()));
        }
        let (Some(output), Some(exit_code)) = (resp.output, resp.exit_code) else {
            return Err(AdapterError::Protocol("run response without output or exit code".into()));
        };
        let trace = match resp.trace_path {
            Some(path) => {
                let text = fs::read_to_string(&path)?;
                Some(TraceRecord::from_tsv(&text).map_err(|e| AdapterError::Protocol(format!("{path}: {e}")))?)
            }
            None => None,
        };
        Ok(VmOutcome { output, exit_code, exit: None, decision: None, trace })
    }
}

/// Opens the adapter named by `config.vm`.
pub fn open_adapter(config: &CampaignConfig) -> Result<Box<dyn VmAdapter>, AdapterError> {
    if config.vm == "refvm" {
        let exec = ExecConfig { step_budget: config.step_budget };
        Ok(Box::new(RefVmAdapter::new(config.weaknesses.clone()).with_exec(exec)))
    } else {
        Ok(Box::new(ExternalAdapter::spawn(&config.vm)?))
    }
}

/// Server side of the line protocol: answers requests from `input` with
/// `adapter` until end of input. Traces are written under `trace_dir`.
pub fn serve<A, R, W>(adapter: &mut A, input: R, mut output: W, trace_dir: Option<&Path>) -> io::Result<()>
where
    A: VmAdapter + ?Sized,
    R: BufRead,
    W: Write,
{
    let mut artifacts: Vec<Artifact> = Vec::new();
    let mut runs = 0usize;
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let response = match serde_json::from_str::<Request>(&line) {
            Err(e) => Response::error(format!("bad request: {e}")),
            Ok(Request::Hello) => Response { id: Some(adapter.id()), ..Response::ok() },
            Ok(Request::Build { circuits, .. }) => match build_from_text(adapter, &circuits) {
                Ok(artifact) => {
                    artifacts.push(artifact);
                    Response { artifact: Some(format!("a{}", artifacts.len() - 1)), ..Response::ok() }
                }
                Err(msg) => Response::error(msg),
            },
            Ok(Request::Run { artifact, inputs, plan }) => {
                let found = artifact.strip_prefix('a').and_then(|n| n.parse::<usize>().ok()).and_then(|n| artifacts.get(n));
                match found {
                    None => Response::error(format!("unknown artifact `{artifact}`")),
                    Some(a) => match adapter.run(a, &inputs, plan.as_ref()) {
                        Err(e) => Response::error(e.to_string()),
                        Ok(outcome) => {
                            let mut resp =
                                Response { output: Some(outcome.output), exit_code: Some(outcome.exit_code), ..Response::ok() };
                            if let (Some(dir), Some(trace)) = (trace_dir, &outcome.trace) {
                                let path = dir.join(format!("trace-{runs}.tsv"));
                                runs += 1;
                                match fs::write(&path, trace.to_tsv()) {
                                    Ok(()) => resp.trace_path = Some(path.display().to_string()),
                                    Err(e) => resp = Response::error(format!("writing trace: {e}")),
                                }
                            }
                            resp
                        }
                    },
                }
            }
        };
        let text = serde_json::to_string(&response).map_err(io::Error::other)?;
        writeln!(output, "{text}")?;
        output.flush()?;
    }
    Ok(())
}

fn build_from_text<A: VmAdapter + ?Sized>(adapter: &mut A, circuits: &[String]) -> Result<Artifact, String> {
    let parsed = circuits.iter().map(|c| Circuit::parse(c)).collect::<Result<Vec<_>, _>>().map_err(|e| e.to_string())?;
    let product = ProductProgram::new(parsed).map_err(|e| e.to_string())?;
    adapter.build(&product).map_err(|e| e.to_string())
}
