//! The circuit intermediate language: typed expressions over 32-bit words,
//! circuits with declared inputs, a type checker and a reference evaluator.
//!
//! The evaluator is the ground truth every other component is checked
//! against. Arithmetic wraps modulo 2^32 and division is total, following
//! the RV32 `divu`/`remu` conventions for a zero divisor.

mod eval;
pub mod syntax;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use eval::{eval_circuit, eval_custom, eval_expr, eval_int_op, Env, EvalError, Value};

/// A 32-bit machine word. All IL integer arithmetic wraps.
pub type Word = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TypeTag {
    Int,
    Bool,
}

impl fmt::Display for TypeTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TypeTag::Int => f.write_str("int"),
            TypeTag::Bool => f.write_str("bool"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum IntOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    Pow,
    And,
    Or,
    Xor,
}

impl IntOp {
    pub const ALL: [IntOp; 9] = [
        IntOp::Add,
        IntOp::Sub,
        IntOp::Mul,
        IntOp::Div,
        IntOp::Rem,
        IntOp::Pow,
        IntOp::And,
        IntOp::Or,
        IntOp::Xor,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            IntOp::Add => "+",
            IntOp::Sub => "-",
            IntOp::Mul => "*",
            IntOp::Div => "/",
            IntOp::Rem => "%",
            IntOp::Pow => "**",
            IntOp::And => "&",
            IntOp::Or => "|",
            IntOp::Xor => "^",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BoolOp {
    Land,
    Lor,
    Lxor,
}

impl BoolOp {
    pub const ALL: [BoolOp; 3] = [BoolOp::Land, BoolOp::Lor, BoolOp::Lxor];

    pub fn symbol(self) -> &'static str {
        match self {
            BoolOp::Land => "&&",
            BoolOp::Lor => "||",
            BoolOp::Lxor => "^^",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CmpOp {
    Eq,
    Neq,
    Lt,
    Leq,
    Gt,
    Geq,
}

impl CmpOp {
    pub const ALL: [CmpOp; 6] = [CmpOp::Eq, CmpOp::Neq, CmpOp::Lt, CmpOp::Leq, CmpOp::Gt, CmpOp::Geq];

    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "==",
            CmpOp::Neq => "!=",
            CmpOp::Lt => "<",
            CmpOp::Leq => "<=",
            CmpOp::Gt => ">",
            CmpOp::Geq => ">=",
        }
    }
}

/// Functions that lower to a single inline-assembly instruction.
///
/// All of them take two words and return one; the signed variants
/// reinterpret their operands as two's complement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CustomFn {
    Mulh,
    Mulhsu,
    Mulhu,
    Divs,
    Rems,
    Sll,
    Srl,
    Sra,
    Slt,
    Sltu,
}

impl CustomFn {
    pub const ALL: [CustomFn; 10] = [
        CustomFn::Mulh,
        CustomFn::Mulhsu,
        CustomFn::Mulhu,
        CustomFn::Divs,
        CustomFn::Rems,
        CustomFn::Sll,
        CustomFn::Srl,
        CustomFn::Sra,
        CustomFn::Slt,
        CustomFn::Sltu,
    ];

    /// Name used in the textual IL.
    pub fn name(self) -> &'static str {
        match self {
            CustomFn::Mulh => "mulh",
            CustomFn::Mulhsu => "mulhsu",
            CustomFn::Mulhu => "mulhu",
            CustomFn::Divs => "divs",
            CustomFn::Rems => "rems",
            CustomFn::Sll => "sll",
            CustomFn::Srl => "srl",
            CustomFn::Sra => "sra",
            CustomFn::Slt => "slt",
            CustomFn::Sltu => "sltu",
        }
    }

    /// The RV32IM mnemonic the function lowers to.
    pub fn mnemonic(self) -> &'static str {
        match self {
            CustomFn::Divs => "div",
            CustomFn::Rems => "rem",
            other => other.name(),
        }
    }

    pub fn arity(self) -> usize {
        2
    }

    pub fn from_name(name: &str) -> Option<CustomFn> {
        CustomFn::ALL.into_iter().find(|f| f.name() == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Expr {
    Var(String),
    Int(Word),
    Bool(bool),
    IntBin(IntOp, Box<Expr>, Box<Expr>),
    BoolBin(BoolOp, Box<Expr>, Box<Expr>),
    Not(Box<Expr>),
    Cmp(CmpOp, Box<Expr>, Box<Expr>),
    Ite(Box<Expr>, Box<Expr>, Box<Expr>),
    Call(CustomFn, Vec<Expr>),
}

impl Expr {
    pub fn var(name: impl Into<String>) -> Expr {
        Expr::Var(name.into())
    }

    pub fn int_bin(op: IntOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::IntBin(op, Box::new(lhs), Box::new(rhs))
    }

    pub fn bool_bin(op: BoolOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::BoolBin(op, Box::new(lhs), Box::new(rhs))
    }

    pub fn cmp(op: CmpOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::Cmp(op, Box::new(lhs), Box::new(rhs))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(operand: Expr) -> Expr {
        Expr::Not(Box::new(operand))
    }

    pub fn ite(cond: Expr, then: Expr, otherwise: Expr) -> Expr {
        Expr::Ite(Box::new(cond), Box::new(then), Box::new(otherwise))
    }

    pub fn call(func: CustomFn, args: Vec<Expr>) -> Expr {
        Expr::Call(func, args)
    }

    /// Direct children in evaluation order.
    pub fn children(&self) -> Vec<&Expr> {
        match self {
            Expr::Var(_) | Expr::Int(_) | Expr::Bool(_) => Vec::new(),
            Expr::IntBin(_, l, r) | Expr::BoolBin(_, l, r) | Expr::Cmp(_, l, r) => vec![l, r],
            Expr::Not(e) => vec![e],
            Expr::Ite(c, t, e) => vec![c, t, e],
            Expr::Call(_, args) => args.iter().collect(),
        }
    }

    fn children_mut(&mut self) -> Vec<&mut Expr> {
        match self {
            Expr::Var(_) | Expr::Int(_) | Expr::Bool(_) => Vec::new(),
            Expr::IntBin(_, l, r) | Expr::BoolBin(_, l, r) | Expr::Cmp(_, l, r) => vec![l, r],
            Expr::Not(e) => vec![e],
            Expr::Ite(c, t, e) => vec![c, t, e],
            Expr::Call(_, args) => args.iter_mut().collect(),
        }
    }

    /// Result type, assuming the expression is well formed.
    pub fn type_tag(&self) -> TypeTag {
        match self {
            Expr::Var(_) | Expr::Int(_) | Expr::IntBin(..) | Expr::Ite(..) | Expr::Call(..) => {
                TypeTag::Int
            }
            Expr::Bool(_) | Expr::BoolBin(..) | Expr::Not(_) | Expr::Cmp(..) => TypeTag::Bool,
        }
    }

    /// Number of nodes on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        1 + self.children().into_iter().map(Expr::depth).max().unwrap_or(0)
    }

    pub fn size(&self) -> usize {
        1 + self.children().into_iter().map(Expr::size).sum::<usize>()
    }

    /// Subexpression at a child-index path, if the path exists.
    pub fn at(&self, path: &[usize]) -> Option<&Expr> {
        let mut cur = self;
        for &i in path {
            cur = *cur.children().get(i)?;
        }
        Some(cur)
    }

    pub fn at_mut(&mut self, path: &[usize]) -> Option<&mut Expr> {
        let mut cur = self;
        for &i in path {
            cur = cur.children_mut().into_iter().nth(i)?;
        }
        Some(cur)
    }

    /// Replaces the subexpression at `path`, returning the old one.
    pub fn replace_at(&mut self, path: &[usize], new: Expr) -> Option<Expr> {
        let slot = self.at_mut(path)?;
        Some(std::mem::replace(slot, new))
    }

    /// Pre-order walk yielding every node with its path.
    pub fn walk(&self) -> Vec<(Vec<usize>, &Expr)> {
        let mut out = Vec::new();
        let mut stack = vec![(Vec::new(), self)];
        while let Some((path, node)) = stack.pop() {
            let children = node.children();
            for (i, child) in children.into_iter().enumerate().rev() {
                let mut p = path.clone();
                p.push(i);
                stack.push((p, child));
            }
            out.push((path, node));
        }
        out
    }

    /// Whether the node at `path` is the literal exponent of a `**` node.
    /// Exponent slots must stay literal, so rewrites skip them.
    pub fn is_pow_exponent(&self, path: &[usize]) -> bool {
        match path.split_last() {
            Some((&1, parent)) => matches!(self.at(parent), Some(Expr::IntBin(IntOp::Pow, ..))),
            _ => false,
        }
    }

    pub fn variables(&self) -> BTreeSet<&str> {
        self.walk()
            .into_iter()
            .filter_map(|(_, e)| match e {
                Expr::Var(name) => Some(name.as_str()),
                _ => None,
            })
            .collect()
    }

    pub fn custom_calls(&self) -> BTreeSet<CustomFn> {
        self.walk()
            .into_iter()
            .filter_map(|(_, e)| match e {
                Expr::Call(f, _) => Some(*f),
                _ => None,
            })
            .collect()
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&syntax::render_expr(self))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Visibility {
    #[default]
    Public,
    Private,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Input {
    pub name: String,
    pub visibility: Visibility,
}

impl Input {
    pub fn public(name: impl Into<String>) -> Input {
        Input { name: name.into(), visibility: Visibility::Public }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Circuit {
    pub inputs: Vec<Input>,
    pub output_name: String,
    pub output: Expr,
}

impl Circuit {
    /// Builds a circuit and checks it.
    pub fn new(inputs: Vec<Input>, output_name: impl Into<String>, output: Expr) -> Result<Circuit, TypeError> {
        let circuit = Circuit { inputs, output_name: output_name.into(), output };
        circuit.check()?;
        Ok(circuit)
    }

    /// Shorthand for a circuit whose inputs are all public.
    pub fn with_public_inputs(names: &[&str], output: Expr) -> Result<Circuit, TypeError> {
        Circuit::new(names.iter().map(|n| Input::public(*n)).collect(), "out", output)
    }

    pub fn arity(&self) -> usize {
        self.inputs.len()
    }

    pub fn input_names(&self) -> impl Iterator<Item = &str> {
        self.inputs.iter().map(|i| i.name.as_str())
    }

    /// Checks the circuit invariants: unique input names, all variables
    /// declared, output expression of type int.
    pub fn check(&self) -> Result<(), TypeError> {
        let mut declared = BTreeSet::new();
        for input in &self.inputs {
            if !declared.insert(input.name.as_str()) {
                return Err(TypeError::DuplicateInput(input.name.clone()));
            }
        }
        if declared.contains(self.output_name.as_str()) {
            return Err(TypeError::DuplicateInput(self.output_name.clone()));
        }
        match typecheck(&self.output, &declared)? {
            TypeTag::Int => Ok(()),
            TypeTag::Bool => Err(TypeError::Mismatch {
                expr: self.output.to_string(),
                expected: TypeTag::Int,
                found: TypeTag::Bool,
            }),
        }
    }

    /// Same declared inputs (names and order), ignoring visibility.
    pub fn same_signature(&self, other: &Circuit) -> bool {
        self.input_names().eq(other.input_names())
    }

    pub fn parse(text: &str) -> Result<Circuit, syntax::ParseError> {
        syntax::parse_circuit(text)
    }

    pub fn render(&self) -> String {
        syntax::render_circuit(self)
    }
}

impl fmt::Display for Circuit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TypeError {
    #[error("undeclared variable `{0}`")]
    Undeclared(String),
    #[error("in `{expr}`: expected {expected}, found {found}")]
    Mismatch { expr: String, expected: TypeTag, found: TypeTag },
    #[error("in `{0}`: exponent must be the literal 2 or 3")]
    BadExponent(String),
    #[error("in `{expr}`: {func} takes {expected} arguments, got {found}")]
    Arity { expr: String, func: &'static str, expected: usize, found: usize },
    #[error("duplicate name `{0}`")]
    DuplicateInput(String),
}

/// Computes the type of `expr`, rejecting ill-formed subexpressions.
pub fn typecheck(expr: &Expr, declared: &BTreeSet<&str>) -> Result<TypeTag, TypeError> {
    let expect = |e: &Expr, want: TypeTag| -> Result<(), TypeError> {
        let found = typecheck(e, declared)?;
        if found == want {
            Ok(())
        } else {
            Err(TypeError::Mismatch { expr: expr.to_string(), expected: want, found })
        }
    };
    match expr {
        Expr::Var(name) => {
            if declared.contains(name.as_str()) {
                Ok(TypeTag::Int)
            } else {
                Err(TypeError::Undeclared(name.clone()))
            }
        }
        Expr::Int(_) => Ok(TypeTag::Int),
        Expr::Bool(_) => Ok(TypeTag::Bool),
        Expr::IntBin(IntOp::Pow, base, exp) => {
            expect(base, TypeTag::Int)?;
            match **exp {
                Expr::Int(2) | Expr::Int(3) => Ok(TypeTag::Int),
                _ => Err(TypeError::BadExponent(expr.to_string())),
            }
        }
        Expr::IntBin(_, l, r) => {
            expect(l, TypeTag::Int)?;
            expect(r, TypeTag::Int)?;
            Ok(TypeTag::Int)
        }
        Expr::BoolBin(_, l, r) => {
            expect(l, TypeTag::Bool)?;
            expect(r, TypeTag::Bool)?;
            Ok(TypeTag::Bool)
        }
        Expr::Not(e) => {
            expect(e, TypeTag::Bool)?;
            Ok(TypeTag::Bool)
        }
        Expr::Cmp(_, l, r) => {
            expect(l, TypeTag::Int)?;
            expect(r, TypeTag::Int)?;
            Ok(TypeTag::Bool)
        }
        Expr::Ite(c, t, e) => {
            expect(c, TypeTag::Bool)?;
            expect(t, TypeTag::Int)?;
            expect(e, TypeTag::Int)?;
            Ok(TypeTag::Int)
        }
        Expr::Call(func, args) => {
            if args.len() != func.arity() {
                return Err(TypeError::Arity {
                    expr: expr.to_string(),
                    func: func.name(),
                    expected: func.arity(),
                    found: args.len(),
                });
            }
            for arg in args {
                expect(arg, TypeTag::Int)?;
            }
            Ok(TypeTag::Int)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn declared<'a>(names: &[&'a str]) -> BTreeSet<&'a str> {
        names.iter().copied().collect()
    }

    #[test]
    fn comparison_is_bool() {
        let e = Expr::cmp(CmpOp::Eq, Expr::var("a"), Expr::var("b"));
        assert_eq!(typecheck(&e, &declared(&["a", "b"])), Ok(TypeTag::Bool));
    }

    #[test]
    fn int_op_rejects_bool_operand() {
        let e = Expr::int_bin(IntOp::Add, Expr::var("a"), Expr::Bool(true));
        let err = typecheck(&e, &declared(&["a"])).unwrap_err();
        assert!(matches!(err, TypeError::Mismatch { expected: TypeTag::Int, found: TypeTag::Bool, .. }));
    }

    #[test]
    fn ite_is_int() {
        let e = Expr::ite(
            Expr::cmp(CmpOp::Lt, Expr::var("a"), Expr::var("b")),
            Expr::var("a"),
            Expr::var("b"),
        );
        assert_eq!(typecheck(&e, &declared(&["a", "b"])), Ok(TypeTag::Int));
    }

    #[test]
    fn undeclared_variable_is_named() {
        let e = Expr::int_bin(IntOp::Add, Expr::var("a"), Expr::var("zz"));
        assert_eq!(typecheck(&e, &declared(&["a"])), Err(TypeError::Undeclared("zz".into())));
    }

    #[test]
    fn pow_exponent_must_be_two_or_three() {
        let ok = Expr::int_bin(IntOp::Pow, Expr::var("a"), Expr::Int(3));
        assert_eq!(typecheck(&ok, &declared(&["a"])), Ok(TypeTag::Int));
        for bad in [Expr::Int(4), Expr::Int(1), Expr::var("a")] {
            let e = Expr::int_bin(IntOp::Pow, Expr::var("a"), bad);
            assert!(matches!(typecheck(&e, &declared(&["a"])), Err(TypeError::BadExponent(_))));
        }
    }

    #[test]
    fn circuit_rejects_duplicates_and_bool_output() {
        let dup = Circuit::with_public_inputs(&["a", "a"], Expr::var("a"));
        assert!(matches!(dup, Err(TypeError::DuplicateInput(_))));
        let boolean = Circuit::with_public_inputs(&["a"], Expr::Bool(true));
        assert!(matches!(boolean, Err(TypeError::Mismatch { .. })));
    }

    #[test]
    fn paths_address_subexpressions() {
        let e = Expr::int_bin(
            IntOp::Rem,
            Expr::var("a"),
            Expr::int_bin(IntOp::Add, Expr::var("b"), Expr::var("c")),
        );
        assert_eq!(e.at(&[1, 0]), Some(&Expr::var("b")));
        assert_eq!(e.at(&[2]), None);
        let order: Vec<String> = e.walk().into_iter().map(|(_, n)| n.to_string()).collect();
        assert_eq!(order, ["(a % (b + c))", "a", "(b + c)", "b", "c"]);
        assert_eq!(e.depth(), 3);
        assert_eq!(e.size(), 5);
    }

    #[test]
    fn exponent_slot_detection() {
        let e = Expr::int_bin(IntOp::Pow, Expr::var("a"), Expr::Int(2));
        assert!(e.is_pow_exponent(&[1]));
        assert!(!e.is_pow_exponent(&[0]));
        assert!(!e.is_pow_exponent(&[]));
    }
}
