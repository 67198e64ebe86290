//! Textual form of circuits and rewrite patterns.
//!
//! ```text
//! inputs : a, b, c#priv
//! outputs: out
//! out = (a % (b + c))
//! ```
//!
//! Expressions are infix with the usual precedence; the renderer always
//! emits full parentheses. Pattern metavariables (`?a`, `?a:int`,
//! `$r:bool`) share the same grammar and are rejected when parsing a
//! plain expression.

use std::fmt::Write as _;

use thiserror::Error;

use super::{BoolOp, Circuit, CmpOp, CustomFn, Expr, Input, IntOp, TypeError, TypeTag, Visibility, Word};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("unexpected end of input")]
    Eof,
    #[error("unexpected token `{0}`")]
    Unexpected(String),
    #[error("metavariable `{0}` is not allowed in a circuit")]
    Metavariable(String),
    #[error(transparent)]
    Type(#[from] TypeError),
}

/// Binary operator as written in source.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Int(IntOp),
    Bool(BoolOp),
    Cmp(CmpOp),
}

/// Untyped syntax tree shared by expressions and patterns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Ast {
    Ident(String),
    /// `?name` with an optional type annotation.
    Capture(String, Option<TypeTag>),
    /// `$name:type`
    Fresh(String, Option<TypeTag>),
    Int(Word),
    Bool(bool),
    Bin(BinOp, Box<Ast>, Box<Ast>),
    Not(Box<Ast>),
    Call(String, Vec<Ast>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Capture(String, Option<TypeTag>),
    Fresh(String, Option<TypeTag>),
    Int(Word),
    Op(&'static str),
    LParen,
    RParen,
    Comma,
}

const OPERATORS: [&str; 19] = [
    "**", "&&", "||", "^^", "==", "!=", "<=", ">=", "+", "-", "*", "/", "%", "&", "|", "^", "<", ">", "!",
];

fn tokenize(src: &str) -> Result<Vec<Tok>, ParseError> {
    let bytes = src.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    let ident_end = |mut j: usize| {
        while j < bytes.len() && (bytes[j].is_ascii_alphanumeric() || bytes[j] == b'_') {
            j += 1;
        }
        j
    };
    let annotation = |j: usize| -> Result<(Option<TypeTag>, usize), ParseError> {
        if bytes.get(j) != Some(&b':') {
            return Ok((None, j));
        }
        let end = ident_end(j + 1);
        match &src[j + 1..end] {
            "int" => Ok((Some(TypeTag::Int), end)),
            "bool" => Ok((Some(TypeTag::Bool), end)),
            other => Err(ParseError::Unexpected(format!(":{other}"))),
        }
    };
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
        } else if c == b'(' {
            toks.push(Tok::LParen);
            i += 1;
        } else if c == b')' {
            toks.push(Tok::RParen);
            i += 1;
        } else if c == b',' {
            toks.push(Tok::Comma);
            i += 1;
        } else if c == b'?' || c == b'$' {
            let end = ident_end(i + 1);
            if end == i + 1 {
                return Err(ParseError::Unexpected((c as char).to_string()));
            }
            let name = src[i + 1..end].to_string();
            let (ty, next) = annotation(end)?;
            toks.push(if c == b'?' { Tok::Capture(name, ty) } else { Tok::Fresh(name, ty) });
            i = next;
        } else if c.is_ascii_digit() {
            let end = ident_end(i);
            let text = &src[i..end];
            let value = if let Some(hex) = text.strip_prefix("0x").or_else(|| text.strip_prefix("0X")) {
                Word::from_str_radix(hex, 16)
            } else {
                text.parse::<Word>()
            }
            .map_err(|_| ParseError::Unexpected(text.to_string()))?;
            toks.push(Tok::Int(value));
            i = end;
        } else if c.is_ascii_alphabetic() || c == b'_' {
            let end = ident_end(i);
            toks.push(Tok::Ident(src[i..end].to_string()));
            i = end;
        } else if let Some(op) = OPERATORS.iter().find(|op| src[i..].starts_with(**op)) {
            toks.push(Tok::Op(op));
            i += op.len();
        } else {
            return Err(ParseError::Unexpected(src[i..].chars().next().unwrap().to_string()));
        }
    }
    Ok(toks)
}

fn binary_op(sym: &str) -> Option<(BinOp, u8)> {
    Some(match sym {
        "||" => (BinOp::Bool(BoolOp::Lor), 1),
        "^^" => (BinOp::Bool(BoolOp::Lxor), 2),
        "&&" => (BinOp::Bool(BoolOp::Land), 3),
        "==" => (BinOp::Cmp(CmpOp::Eq), 4),
        "!=" => (BinOp::Cmp(CmpOp::Neq), 4),
        "<" => (BinOp::Cmp(CmpOp::Lt), 4),
        "<=" => (BinOp::Cmp(CmpOp::Leq), 4),
        ">" => (BinOp::Cmp(CmpOp::Gt), 4),
        ">=" => (BinOp::Cmp(CmpOp::Geq), 4),
        "|" => (BinOp::Int(IntOp::Or), 5),
        "^" => (BinOp::Int(IntOp::Xor), 6),
        "&" => (BinOp::Int(IntOp::And), 7),
        "+" => (BinOp::Int(IntOp::Add), 8),
        "-" => (BinOp::Int(IntOp::Sub), 8),
        "*" => (BinOp::Int(IntOp::Mul), 9),
        "/" => (BinOp::Int(IntOp::Div), 9),
        "%" => (BinOp::Int(IntOp::Rem), 9),
        "**" => (BinOp::Int(IntOp::Pow), 10),
        _ => return None,
    })
}

struct Parser {
    toks: Vec<Tok>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn next(&mut self) -> Result<Tok, ParseError> {
        let tok = self.toks.get(self.pos).cloned().ok_or(ParseError::Eof)?;
        self.pos += 1;
        Ok(tok)
    }

    fn expect(&mut self, want: Tok) -> Result<(), ParseError> {
        let tok = self.next()?;
        if tok == want {
            Ok(())
        } else {
            Err(ParseError::Unexpected(format!("{tok:?}")))
        }
    }

    fn expr(&mut self, min_prec: u8) -> Result<Ast, ParseError> {
        let mut lhs = self.unary()?;
        while let Some(Tok::Op(sym)) = self.peek() {
            let Some((op, prec)) = binary_op(sym) else { break };
            if prec < min_prec {
                break;
            }
            self.pos += 1;
            // `**` is right associative, comparisons do not chain
            let next_min = if matches!(op, BinOp::Int(IntOp::Pow)) { prec } else { prec + 1 };
            let rhs = self.expr(next_min)?;
            lhs = Ast::Bin(op, Box::new(lhs), Box::new(rhs));
            if matches!(op, BinOp::Cmp(_)) {
                if let Some(Tok::Op(s)) = self.peek() {
                    if matches!(binary_op(s), Some((BinOp::Cmp(_), _))) {
                        return Err(ParseError::Unexpected(s.to_string()));
                    }
                }
            }
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Ast, ParseError> {
        if self.peek() == Some(&Tok::Op("!")) {
            self.pos += 1;
            return Ok(Ast::Not(Box::new(self.unary()?)));
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Ast, ParseError> {
        match self.next()? {
            Tok::LParen => {
                let inner = self.expr(0)?;
                self.expect(Tok::RParen)?;
                Ok(inner)
            }
            Tok::Int(w) => Ok(Ast::Int(w)),
            Tok::Capture(name, ty) => Ok(Ast::Capture(name, ty)),
            Tok::Fresh(name, ty) => Ok(Ast::Fresh(name, ty)),
            Tok::Ident(name) => match name.as_str() {
                "T" => Ok(Ast::Bool(true)),
                "F" => Ok(Ast::Bool(false)),
                _ if self.peek() == Some(&Tok::LParen) => {
                    self.pos += 1;
                    let mut args = Vec::new();
                    if self.peek() != Some(&Tok::RParen) {
                        loop {
                            args.push(self.expr(0)?);
                            if self.peek() == Some(&Tok::Comma) {
                                self.pos += 1;
                            } else {
                                break;
                            }
                        }
                    }
                    self.expect(Tok::RParen)?;
                    Ok(Ast::Call(name, args))
                }
                _ => Ok(Ast::Ident(name)),
            },
            other => Err(ParseError::Unexpected(format!("{other:?}"))),
        }
    }
}

/// Parses an infix expression (possibly containing metavariables).
pub fn parse_ast(src: &str) -> Result<Ast, ParseError> {
    let mut parser = Parser { toks: tokenize(src)?, pos: 0 };
    let ast = parser.expr(0)?;
    match parser.peek() {
        None => Ok(ast),
        Some(tok) => Err(ParseError::Unexpected(format!("{tok:?}"))),
    }
}

fn ast_to_expr(ast: Ast) -> Result<Expr, ParseError> {
    Ok(match ast {
        Ast::Ident(name) => Expr::Var(name),
        Ast::Capture(name, _) => return Err(ParseError::Metavariable(format!("?{name}"))),
        Ast::Fresh(name, _) => return Err(ParseError::Metavariable(format!("${name}"))),
        Ast::Int(w) => Expr::Int(w),
        Ast::Bool(b) => Expr::Bool(b),
        Ast::Bin(op, l, r) => {
            let (l, r) = (ast_to_expr(*l)?, ast_to_expr(*r)?);
            match op {
                BinOp::Int(op) => Expr::int_bin(op, l, r),
                BinOp::Bool(op) => Expr::bool_bin(op, l, r),
                BinOp::Cmp(op) => Expr::cmp(op, l, r),
            }
        }
        Ast::Not(e) => Expr::not(ast_to_expr(*e)?),
        Ast::Call(name, args) => {
            let args = args.into_iter().map(ast_to_expr).collect::<Result<Vec<_>, _>>()?;
            if name == "ite" {
                let [c, t, e]: [Expr; 3] =
                    args.try_into().map_err(|_| ParseError::Unexpected("ite arity".into()))?;
                Expr::ite(c, t, e)
            } else {
                let func = CustomFn::from_name(&name).ok_or(ParseError::Unexpected(name))?;
                Expr::call(func, args)
            }
        }
    })
}

/// Parses a plain expression (no metavariables, no type check).
pub fn parse_expr(src: &str) -> Result<Expr, ParseError> {
    ast_to_expr(parse_ast(src)?)
}

fn render_word(w: Word) -> String {
    if w > 0xFFFF {
        format!("0x{w:X}")
    } else {
        w.to_string()
    }
}

fn render_into(e: &Expr, out: &mut String) {
    match e {
        Expr::Var(name) => out.push_str(name),
        Expr::Int(w) => out.push_str(&render_word(*w)),
        Expr::Bool(b) => out.push(if *b { 'T' } else { 'F' }),
        Expr::IntBin(op, l, r) => render_bin(op.symbol(), l, r, out),
        Expr::BoolBin(op, l, r) => render_bin(op.symbol(), l, r, out),
        Expr::Cmp(op, l, r) => render_bin(op.symbol(), l, r, out),
        Expr::Not(inner) => {
            out.push_str("(!");
            render_into(inner, out);
            out.push(')');
        }
        Expr::Ite(c, t, f) => render_call("ite", [&**c, &**t, &**f], out),
        Expr::Call(func, args) => render_call(func.name(), args.iter(), out),
    }
}

fn render_bin(sym: &str, l: &Expr, r: &Expr, out: &mut String) {
    out.push('(');
    render_into(l, out);
    let _ = write!(out, " {sym} ");
    render_into(r, out);
    out.push(')');
}

fn render_call<'a>(name: &str, args: impl IntoIterator<Item = &'a Expr>, out: &mut String) {
    out.push_str(name);
    out.push('(');
    for (i, arg) in args.into_iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        render_into(arg, out);
    }
    out.push(')');
}

pub fn render_expr(e: &Expr) -> String {
    let mut out = String::new();
    render_into(e, &mut out);
    out
}

pub fn render_circuit(c: &Circuit) -> String {
    let inputs: Vec<String> = c
        .inputs
        .iter()
        .map(|i| match i.visibility {
            Visibility::Public => i.name.clone(),
            Visibility::Private => format!("{}#priv", i.name),
        })
        .collect();
    format!(
        "inputs : {}\noutputs: {}\n{} = {}\n",
        inputs.join(", "),
        c.output_name,
        c.output_name,
        render_expr(&c.output)
    )
}

fn header<'a>(line: Option<(usize, &'a str)>, key: &str) -> Result<&'a str, ParseError> {
    let (n, line) = line.ok_or(ParseError::Eof)?;
    let (k, rest) = line
        .split_once(':')
        .ok_or_else(|| ParseError::Syntax { line: n + 1, msg: format!("expected `{key} :`") })?;
    if k.trim() != key {
        return Err(ParseError::Syntax { line: n + 1, msg: format!("expected `{key}`, found `{}`", k.trim()) });
    }
    Ok(rest.trim())
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
        && s != "T"
        && s != "F"
}

/// Parses and checks the three-line circuit format.
pub fn parse_circuit(text: &str) -> Result<Circuit, ParseError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let inputs_line = header(lines.next(), "inputs")?;
    let mut inputs = Vec::new();
    for item in inputs_line.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (name, visibility) = match item.strip_suffix("#priv") {
            Some(name) => (name, Visibility::Private),
            None => (item, Visibility::Public),
        };
        if !is_identifier(name) {
            return Err(ParseError::Syntax { line: 1, msg: format!("bad input name `{name}`") });
        }
        inputs.push(Input { name: name.to_string(), visibility });
    }
    let output_name = header(lines.next(), "outputs")?.to_string();
    if !is_identifier(&output_name) {
        return Err(ParseError::Syntax { line: 2, msg: format!("bad output name `{output_name}`") });
    }
    let (n, body) = lines.next().ok_or(ParseError::Eof)?;
    let (lhs, rhs) = body
        .split_once('=')
        .ok_or_else(|| ParseError::Syntax { line: n + 1, msg: "expected `out = <expr>`".into() })?;
    if lhs.trim() != output_name {
        return Err(ParseError::Syntax { line: n + 1, msg: format!("assignment to unknown output `{}`", lhs.trim()) });
    }
    if let Some((n, _)) = lines.next() {
        return Err(ParseError::Syntax { line: n + 1, msg: "trailing content".into() });
    }
    let output = parse_expr(rhs)?;
    Ok(Circuit::new(inputs, output_name, output)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn figure_one_round_trip() {
        let text = "inputs : a, b, c\noutputs: out\nout = (a % (b + c))\n";
        let c = parse_circuit(text).unwrap();
        assert_eq!(render_circuit(&c), text);
    }

    #[test]
    fn precedence_without_parentheses() {
        let e = parse_expr("a % b + c * d").unwrap();
        assert_eq!(render_expr(&e), "((a % b) + (c * d))");
        let e = parse_expr("(a < b) && T || F ^^ T").unwrap();
        assert_eq!(render_expr(&e), "(((a < b) && T) || (F ^^ T))");
        let e = parse_expr("a ** 2 ** 3").unwrap();
        assert_eq!(render_expr(&e), "(a ** (2 ** 3))");
    }

    #[test]
    fn calls_and_ite() {
        let e = parse_expr("ite(a < b, mulhsu(a, b + c), 0xFFFFFFFF)").unwrap();
        assert_eq!(render_expr(&e), "ite((a < b), mulhsu(a, (b + c)), 0xFFFFFFFF)");
    }

    #[test]
    fn private_inputs() {
        let c = parse_circuit("inputs : a, b#priv\noutputs: out\nout = (a ^ b)").unwrap();
        assert_eq!(c.inputs[1].visibility, Visibility::Private);
        assert!(render_circuit(&c).starts_with("inputs : a, b#priv\n"));
    }

    #[test]
    fn rejects_metavariables_and_garbage() {
        assert!(matches!(parse_expr("?a + 1"), Err(ParseError::Metavariable(_))));
        assert!(parse_expr("a +").is_err());
        assert!(parse_expr("a b").is_err());
        assert!(parse_expr("a < b < c").is_err());
        assert!(parse_circuit("inputs : a\noutputs: out\nout = (a + z)").is_err());
        assert!(parse_circuit("outputs: out\ninputs : a\nout = a").is_err());
        assert!(parse_circuit("inputs : a\noutputs: out\nout = a\nextra").is_err());
    }

    #[test]
    fn pattern_tokens() {
        let ast = parse_ast("($r:int ^ $r:int)").unwrap();
        assert_eq!(
            ast,
            Ast::Bin(
                BinOp::Int(IntOp::Xor),
                Box::new(Ast::Fresh("r".into(), Some(TypeTag::Int))),
                Box::new(Ast::Fresh("r".into(), Some(TypeTag::Int))),
            )
        );
        assert!(matches!(parse_ast("?a:bool"), Ok(Ast::Capture(_, Some(TypeTag::Bool)))));
        assert!(parse_ast("?a:float").is_err());
    }
}
