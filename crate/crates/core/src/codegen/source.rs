use std::collections::BTreeSet;
use std::fmt::Write as _;

use super::ProductProgram;
use crate::il::{BoolOp, Circuit, CmpOp, CustomFn, Expr, IntOp};

pub const DEFAULT_ENTRY_ATTRIBUTE: &str = "#[zkvm::entry(main)]";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceFunction {
    pub name: String,
    pub arity: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceOptions {
    /// Line placed above the entry point.
    pub entry_attribute: String,
    /// Adapter-specific lines inserted at the top of the entry point body,
    /// e.g. reading inputs from the VM's input tape.
    pub prologue: Option<String>,
}

impl Default for SourceOptions {
    fn default() -> Self {
        SourceOptions { entry_attribute: DEFAULT_ENTRY_ATTRIBUTE.to_string(), prologue: None }
    }
}

const KEYWORDS: &[&str] = &[
    "as", "break", "const", "continue", "crate", "else", "enum", "extern", "false", "fn", "for", "if", "impl", "in",
    "let", "loop", "match", "mod", "move", "mut", "pub", "ref", "return", "static", "struct", "trait", "true",
    "type", "unsafe", "use", "where", "while", "async", "await", "dyn", "abstract", "become", "box", "do", "final",
    "macro", "override", "priv", "typeof", "unsized", "virtual", "yield", "try", "gen",
];

fn ident(name: &str) -> String {
    if KEYWORDS.contains(&name) {
        format!("r#{name}")
    } else {
        name.to_string()
    }
}

fn params(circuit: &Circuit) -> String {
    circuit.input_names().map(|n| format!("{}: u32", ident(n))).collect::<Vec<_>>().join(", ")
}

fn args(circuit: &Circuit) -> String {
    circuit.input_names().map(ident).collect::<Vec<_>>().join(", ")
}

fn literal(w: u32) -> String {
    if w > 0xFFFF {
        format!("0x{w:X}u32")
    } else {
        format!("{w}u32")
    }
}

fn asm_macro(func: CustomFn) -> String {
    format!(
        "  macro_rules! {name} {{
    ($a:expr, $b:expr) => {{{{
      let result: u32;
      unsafe {{
        core::arch::asm!(
          \"{mnemonic} {{result}}, {{a}}, {{b}}\",
          result = out(reg) result,
          a = in(reg) $a,
          b = in(reg) $b,
        );
      }}
      result
    }}}}
  }}
",
        name = func.name(),
        mnemonic = func.mnemonic()
    )
}

fn expr(e: &Expr) -> String {
    match e {
        Expr::Var(name) => ident(name),
        Expr::Int(w) => literal(*w),
        Expr::Bool(b) => b.to_string(),
        Expr::IntBin(op, l, r) => {
            let (l, r) = (expr(l), expr(r));
            match op {
                IntOp::Add => format!("({l}).wrapping_add({r})"),
                IntOp::Sub => format!("({l}).wrapping_sub({r})"),
                IntOp::Mul => format!("({l}).wrapping_mul({r})"),
                IntOp::Pow => format!("({l}).wrapping_pow({})", r.trim_end_matches("u32")),
                IntOp::Div => format!("{{ let (n, d) = ({l}, {r}); if d == 0 {{ u32::MAX }} else {{ n / d }} }}"),
                IntOp::Rem => format!("{{ let (n, d) = ({l}, {r}); if d == 0 {{ n }} else {{ n % d }} }}"),
                IntOp::And => format!("({l} & {r})"),
                IntOp::Or => format!("({l} | {r})"),
                IntOp::Xor => format!("({l} ^ {r})"),
            }
        }
        Expr::BoolBin(op, l, r) => {
            let sym = match op {
                BoolOp::Land => "&&",
                BoolOp::Lor => "||",
                BoolOp::Lxor => "^",
            };
            format!("({} {sym} {})", expr(l), expr(r))
        }
        Expr::Not(e) => format!("!({})", expr(e)),
        Expr::Cmp(op, l, r) => {
            let sym = match op {
                CmpOp::Eq => "==",
                CmpOp::Neq => "!=",
                CmpOp::Lt => "<",
                CmpOp::Leq => "<=",
                CmpOp::Gt => ">",
                CmpOp::Geq => ">=",
            };
            format!("({} {sym} {})", expr(l), expr(r))
        }
        Expr::Ite(c, t, e) => format!("(if {} {{ {} }} else {{ {} }})", expr(c), expr(t), expr(e)),
        Expr::Call(func, call_args) => {
            let a: Vec<String> = call_args.iter().map(expr).collect();
            format!("{}!({})", func.name(), a.join(", "))
        }
    }
}

/// Translates a circuit into a standalone Rust function. Custom calls
/// expand to inline-assembly macros defined inside the function body.
pub fn emit_function(circuit: &Circuit, name: &str) -> SourceFunction {
    let mut text = format!("fn {name}({}) -> u32 {{\n", params(circuit));
    let used: BTreeSet<CustomFn> = circuit.output.custom_calls();
    for func in used {
        text.push_str(&asm_macro(func));
    }
    writeln!(text, "  {}\n}}", expr(&circuit.output)).unwrap();
    SourceFunction { name: name.to_string(), arity: circuit.arity(), text }
}

/// Full product-program source: constants, one function per circuit and
/// the entry point chaining pairwise output comparisons.
pub fn emit_product_source(product: &ProductProgram, options: &SourceOptions) -> String {
    let first = &product.circuits[0];
    let mut out = String::new();
    writeln!(out, "const OOPS: u32 = 0x{:X};", product.oops_word).unwrap();
    writeln!(out, "const SUCCESS: u32 = 0x{:X};", product.success_word).unwrap();
    for (circuit, name) in product.circuits.iter().zip(&product.names) {
        writeln!(out, "\n// circuit {name} as Rust function").unwrap();
        out.push_str(&emit_function(circuit, name).text);
    }
    writeln!(out, "\n// VM entry point").unwrap();
    writeln!(out, "{}", options.entry_attribute).unwrap();
    writeln!(out, "fn main({}) -> u32 {{", params(first)).unwrap();
    if let Some(prologue) = &options.prologue {
        for line in prologue.lines() {
            writeln!(out, "  {line}").unwrap();
        }
    }
    for name in &product.names {
        writeln!(out, "  let {name}_out = {name}({});", args(first)).unwrap();
    }
    writeln!(out, "\n  // check if violation occurred").unwrap();
    for (i, pair) in product.names.windows(2).enumerate() {
        let kw = if i == 0 { "if" } else { "} else if" };
        writeln!(out, "  {kw} {}_out != {}_out {{", pair[0], pair[1]).unwrap();
        writeln!(out, "    OOPS // unexpected result").unwrap();
    }
    writeln!(out, "  }} else {{\n    SUCCESS // expected result\n  }}\n}}").unwrap();
    out
}
