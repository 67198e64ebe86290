//! Rewrite engine: pattern matching, template instantiation and stacked
//! random application of the rule catalog.
//!
//! Patterns use `?x` for captures (optionally `?x:int` / `?x:bool`) and
//! `$r:int` / `$r:bool` for constants drawn once per application. A capture
//! that occurs twice must bind structurally equal subexpressions.

mod catalog;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::gen::{draw_literal, BOUNDARY_POOL};
use crate::il::syntax::{parse_ast, Ast, BinOp, ParseError};
use crate::il::{BoolOp, Circuit, CmpOp, Expr, IntOp, TypeTag, Word};

/// Probability that a fresh `$r:int` constant comes from the boundary pool.
const FRESH_POOL_PROBABILITY: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Pattern {
    Capture(String, Option<TypeTag>),
    Fresh(String, TypeTag),
    Int(Word),
    Bool(bool),
    IntBin(IntOp, Box<Pattern>, Box<Pattern>),
    BoolBin(BoolOp, Box<Pattern>, Box<Pattern>),
    Not(Box<Pattern>),
    Cmp(CmpOp, Box<Pattern>, Box<Pattern>),
}

pub type Binding = BTreeMap<String, Expr>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PatternError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("`{0}` is not allowed in a rewrite pattern")]
    Unsupported(String),
    #[error("fresh constant `${0}` needs a type annotation")]
    UntypedFresh(String),
    #[error("`{0}` has conflicting types")]
    TypeConflict(String),
    #[error("cannot infer the type of `?{0}`")]
    Untyped(String),
}

impl Pattern {
    pub fn parse(src: &str) -> Result<Pattern, PatternError> {
        Pattern::from_ast(parse_ast(src)?)
    }

    fn from_ast(ast: Ast) -> Result<Pattern, PatternError> {
        let sub = |a: Box<Ast>| Pattern::from_ast(*a).map(Box::new);
        Ok(match ast {
            Ast::Capture(name, ty) => Pattern::Capture(name, ty),
            Ast::Fresh(name, Some(ty)) => Pattern::Fresh(name, ty),
            Ast::Fresh(name, None) => return Err(PatternError::UntypedFresh(name)),
            Ast::Int(w) => Pattern::Int(w),
            Ast::Bool(b) => Pattern::Bool(b),
            Ast::Bin(BinOp::Int(op), l, r) => Pattern::IntBin(op, sub(l)?, sub(r)?),
            Ast::Bin(BinOp::Bool(op), l, r) => Pattern::BoolBin(op, sub(l)?, sub(r)?),
            Ast::Bin(BinOp::Cmp(op), l, r) => Pattern::Cmp(op, sub(l)?, sub(r)?),
            Ast::Not(e) => Pattern::Not(sub(e)?),
            Ast::Ident(name) => return Err(PatternError::Unsupported(name)),
            Ast::Call(name, _) => return Err(PatternError::Unsupported(format!("{name}(..)"))),
        })
    }

    fn children(&self) -> Vec<&Pattern> {
        match self {
            Pattern::Capture(..) | Pattern::Fresh(..) | Pattern::Int(_) | Pattern::Bool(_) => Vec::new(),
            Pattern::IntBin(_, l, r) | Pattern::BoolBin(_, l, r) | Pattern::Cmp(_, l, r) => vec![l, r],
            Pattern::Not(e) => vec![e],
        }
    }

    pub fn captures(&self) -> BTreeSet<&str> {
        let mut out = BTreeSet::new();
        self.visit(&mut |p| {
            if let Pattern::Capture(name, _) = p {
                out.insert(name.as_str());
            }
        });
        out
    }

    pub fn fresh_names(&self) -> BTreeSet<&str> {
        let mut out = BTreeSet::new();
        self.visit(&mut |p| {
            if let Pattern::Fresh(name, _) = p {
                out.insert(name.as_str());
            }
        });
        out
    }

    fn visit<'a>(&'a self, f: &mut impl FnMut(&'a Pattern)) {
        f(self);
        for c in self.children() {
            c.visit(f);
        }
    }

    /// Infers the result type and the type of every capture.
    pub fn infer_types(&self) -> Result<(TypeTag, BTreeMap<String, TypeTag>), PatternError> {
        let mut env = BTreeMap::new();
        let ty = self.infer(None, &mut env)?;
        for name in self.captures() {
            if !env.contains_key(name) {
                return Err(PatternError::Untyped(name.to_string()));
            }
        }
        Ok((ty, env))
    }

    fn infer(&self, expected: Option<TypeTag>, env: &mut BTreeMap<String, TypeTag>) -> Result<TypeTag, PatternError> {
        let fixed = |ty: TypeTag, what: String| -> Result<TypeTag, PatternError> {
            match expected {
                Some(e) if e != ty => Err(PatternError::TypeConflict(what)),
                _ => Ok(ty),
            }
        };
        match self {
            Pattern::Capture(name, ann) => {
                let ty = match (ann, expected) {
                    (Some(a), Some(e)) if *a != e => return Err(PatternError::TypeConflict(format!("?{name}"))),
                    (Some(a), _) => Some(*a),
                    (None, e) => e,
                };
                match (ty, env.get(name)) {
                    (Some(t), Some(prev)) if *prev != t => Err(PatternError::TypeConflict(format!("?{name}"))),
                    (Some(t), _) => {
                        env.insert(name.clone(), t);
                        Ok(t)
                    }
                    (None, Some(prev)) => Ok(*prev),
                    (None, None) => Err(PatternError::Untyped(name.clone())),
                }
            }
            Pattern::Fresh(name, ty) => fixed(*ty, format!("${name}")),
            Pattern::Int(_) => fixed(TypeTag::Int, self.to_string()),
            Pattern::Bool(_) => fixed(TypeTag::Bool, self.to_string()),
            Pattern::IntBin(_, l, r) => {
                l.infer(Some(TypeTag::Int), env)?;
                r.infer(Some(TypeTag::Int), env)?;
                fixed(TypeTag::Int, self.to_string())
            }
            Pattern::BoolBin(_, l, r) => {
                l.infer(Some(TypeTag::Bool), env)?;
                r.infer(Some(TypeTag::Bool), env)?;
                fixed(TypeTag::Bool, self.to_string())
            }
            Pattern::Not(e) => {
                e.infer(Some(TypeTag::Bool), env)?;
                fixed(TypeTag::Bool, self.to_string())
            }
            Pattern::Cmp(_, l, r) => {
                l.infer(Some(TypeTag::Int), env)?;
                r.infer(Some(TypeTag::Int), env)?;
                fixed(TypeTag::Bool, self.to_string())
            }
        }
    }

    /// Substitutes a binding into a pattern without fresh constants.
    /// Returns `None` if a capture is unbound or a fresh constant occurs.
    pub fn substitute(&self, binding: &Binding) -> Option<Expr> {
        let sub = |p: &Pattern| p.substitute(binding);
        Some(match self {
            Pattern::Capture(name, _) => binding.get(name)?.clone(),
            Pattern::Fresh(..) => return None,
            Pattern::Int(w) => Expr::Int(*w),
            Pattern::Bool(b) => Expr::Bool(*b),
            Pattern::IntBin(op, l, r) => Expr::int_bin(*op, sub(l)?, sub(r)?),
            Pattern::BoolBin(op, l, r) => Expr::bool_bin(*op, sub(l)?, sub(r)?),
            Pattern::Not(e) => Expr::not(sub(e)?),
            Pattern::Cmp(op, l, r) => Expr::cmp(*op, sub(l)?, sub(r)?),
        })
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Pattern::Capture(name, None) => write!(f, "?{name}"),
            Pattern::Capture(name, Some(ty)) => write!(f, "?{name}:{ty}"),
            Pattern::Fresh(name, ty) => write!(f, "${name}:{ty}"),
            Pattern::Int(w) => write!(f, "{w}"),
            Pattern::Bool(b) => f.write_str(if *b { "T" } else { "F" }),
            Pattern::IntBin(op, l, r) => write!(f, "({l} {} {r})", op.symbol()),
            Pattern::BoolBin(op, l, r) => write!(f, "({l} {} {r})", op.symbol()),
            Pattern::Cmp(op, l, r) => write!(f, "({l} {} {r})", op.symbol()),
            Pattern::Not(e) => write!(f, "(!{e})"),
        }
    }
}

/// Matches `pattern` against the root of `expr`.
pub fn match_at(pattern: &Pattern, expr: &Expr) -> Option<Binding> {
    let mut binding = Binding::new();
    match_into(pattern, expr, &mut binding).then_some(binding)
}

fn match_into(pattern: &Pattern, expr: &Expr, binding: &mut Binding) -> bool {
    match (pattern, expr) {
        (Pattern::Capture(name, ty), _) => {
            if ty.is_some_and(|t| t != expr.type_tag()) {
                return false;
            }
            match binding.get(name) {
                Some(bound) => bound == expr,
                None => {
                    binding.insert(name.clone(), expr.clone());
                    true
                }
            }
        }
        (Pattern::Fresh(..), _) => false,
        (Pattern::Int(a), Expr::Int(b)) => a == b,
        (Pattern::Bool(a), Expr::Bool(b)) => a == b,
        (Pattern::IntBin(pop, pl, pr), Expr::IntBin(eop, el, er)) => {
            pop == eop && match_into(pl, el, binding) && match_into(pr, er, binding)
        }
        (Pattern::BoolBin(pop, pl, pr), Expr::BoolBin(eop, el, er)) => {
            pop == eop && match_into(pl, el, binding) && match_into(pr, er, binding)
        }
        (Pattern::Cmp(pop, pl, pr), Expr::Cmp(eop, el, er)) => {
            pop == eop && match_into(pl, el, binding) && match_into(pr, er, binding)
        }
        (Pattern::Not(p), Expr::Not(e)) => match_into(p, e, binding),
        _ => false,
    }
}

/// How fresh `$r` constants are drawn during instantiation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FreshPolicy {
    pub nonzero: bool,
}

/// Builds the template with the binding substituted. Each distinct fresh
/// name is drawn once and reused at every occurrence.
///
/// # Panics
/// If the template refers to a capture missing from `binding`.
pub fn instantiate<R: Rng + ?Sized>(template: &Pattern, binding: &Binding, rng: &mut R, policy: FreshPolicy) -> Expr {
    let mut fresh = BTreeMap::new();
    build(template, binding, rng, policy, &mut fresh)
}

fn build<R: Rng + ?Sized>(
    p: &Pattern,
    binding: &Binding,
    rng: &mut R,
    policy: FreshPolicy,
    fresh: &mut BTreeMap<String, Expr>,
) -> Expr {
    let mut sub = |q: &Pattern| build(q, binding, rng, policy, fresh);
    match p {
        Pattern::Capture(name, _) => binding.get(name).unwrap_or_else(|| panic!("unbound capture ?{name}")).clone(),
        Pattern::Fresh(name, ty) => {
            if let Some(e) = fresh.get(name) {
                return e.clone();
            }
            let value = match ty {
                TypeTag::Int => loop {
                    let w = draw_literal(rng, &BOUNDARY_POOL, FRESH_POOL_PROBABILITY);
                    if !policy.nonzero || w != 0 {
                        break Expr::Int(w);
                    }
                },
                TypeTag::Bool => Expr::Bool(rng.gen()),
            };
            fresh.insert(name.clone(), value.clone());
            value
        }
        Pattern::Int(w) => Expr::Int(*w),
        Pattern::Bool(b) => Expr::Bool(*b),
        Pattern::IntBin(op, l, r) => {
            let l = sub(l);
            Expr::int_bin(*op, l, sub(r))
        }
        Pattern::BoolBin(op, l, r) => {
            let l = sub(l);
            Expr::bool_bin(*op, l, sub(r))
        }
        Pattern::Cmp(op, l, r) => {
            let l = sub(l);
            Expr::cmp(*op, l, sub(r))
        }
        Pattern::Not(e) => Expr::not(sub(e)),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RewriteRule {
    pub id: String,
    pub pattern: Pattern,
    pub template: Pattern,
    pub pattern_text: String,
    pub template_text: String,
    pub fresh: FreshPolicy,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RuleError {
    #[error("rule {id}: {source}")]
    Pattern { id: String, source: PatternError },
    #[error("rule {0}: fresh constants may only appear in the template")]
    FreshInPattern(String),
    #[error("rule {id}: template capture ?{capture} is not bound by the pattern")]
    UnboundCapture { id: String, capture: String },
    #[error("rule {0}: pattern and template types differ")]
    TypeMismatch(String),
    #[error("duplicate rule id {0}")]
    DuplicateId(String),
}

impl RewriteRule {
    pub fn new(id: &str, pattern: &str, template: &str, fresh: FreshPolicy) -> Result<RewriteRule, RuleError> {
        let err = |source| RuleError::Pattern { id: id.to_string(), source };
        let pat = Pattern::parse(pattern).map_err(err)?;
        let tpl = Pattern::parse(template).map_err(err)?;
        if !pat.fresh_names().is_empty() {
            return Err(RuleError::FreshInPattern(id.to_string()));
        }
        let bound = pat.captures();
        if let Some(missing) = tpl.captures().into_iter().find(|c| !bound.contains(c)) {
            return Err(RuleError::UnboundCapture { id: id.to_string(), capture: missing.to_string() });
        }
        let (pat_ty, pat_env) = pat.infer_types().map_err(err)?;
        // template captures take their types from the pattern
        let mut tpl_env = pat_env.clone();
        let tpl_ty = tpl.infer(Some(pat_ty), &mut tpl_env).map_err(|_| RuleError::TypeMismatch(id.to_string()))?;
        if tpl_ty != pat_ty || tpl_env != pat_env {
            return Err(RuleError::TypeMismatch(id.to_string()));
        }
        Ok(RewriteRule {
            id: id.to_string(),
            pattern: pat,
            template: tpl,
            pattern_text: pattern.to_string(),
            template_text: template.to_string(),
            fresh,
        })
    }

    pub fn result_type(&self) -> TypeTag {
        self.pattern.infer_types().expect("validated at construction").0
    }

    /// Rewrites the subexpression at `site` if the rule matches there.
    pub fn apply_at<R: Rng + ?Sized>(&self, expr: &Expr, site: &[usize], rng: &mut R) -> Option<Expr> {
        if expr.is_pow_exponent(site) {
            return None;
        }
        let target = expr.at(site)?;
        let binding = match_at(&self.pattern, target)?;
        let replacement = instantiate(&self.template, &binding, rng, self.fresh);
        let mut out = expr.clone();
        out.replace_at(site, replacement);
        Some(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleCatalog {
    rules: Vec<RewriteRule>,
}

impl RuleCatalog {
    pub fn new(rules: Vec<RewriteRule>) -> Result<RuleCatalog, RuleError> {
        let mut ids = BTreeSet::new();
        for r in &rules {
            if !ids.insert(r.id.as_str()) {
                return Err(RuleError::DuplicateId(r.id.clone()));
            }
        }
        Ok(RuleCatalog { rules })
    }

    /// The full built-in catalog.
    pub fn standard() -> RuleCatalog {
        let rules = catalog::RULES
            .iter()
            .map(|(id, pat, tpl)| {
                let fresh = FreshPolicy { nonzero: catalog::NONZERO_FRESH.contains(id) };
                RewriteRule::new(id, pat, tpl, fresh).expect("built-in rule is well formed")
            })
            .collect();
        RuleCatalog::new(rules).expect("built-in ids are unique")
    }

    pub fn rules(&self) -> &[RewriteRule] {
        &self.rules
    }

    pub fn get(&self, id: &str) -> Option<&RewriteRule> {
        self.rules.iter().find(|r| r.id == id)
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    /// Text table with one `id  pattern  template` row per rule.
    pub fn render_table(&self) -> String {
        let w_id = self.rules.iter().map(|r| r.id.len()).max().unwrap_or(0);
        let w_pat = self.rules.iter().map(|r| r.pattern_text.len()).max().unwrap_or(0);
        let mut out = format!("{:<w_id$}  {:<w_pat$}  {}\n", "Rule ID", "Match Pattern", "Rewrite Template");
        for r in &self.rules {
            out.push_str(&format!("{:<w_id$}  {:<w_pat$}  {}\n", r.id, r.pattern_text, r.template_text));
        }
        out
    }
}

/// Positions (pre-order) where `rule` matches in the circuit's output.
/// Exponent slots of `**` are never sites.
pub fn applicable_sites(circuit: &Circuit, rule: &RewriteRule) -> Vec<Vec<usize>> {
    sites_in(&circuit.output, rule)
}

fn sites_in(expr: &Expr, rule: &RewriteRule) -> Vec<Vec<usize>> {
    expr.walk()
        .into_iter()
        .filter(|(path, node)| !expr.is_pow_exponent(path) && match_at(&rule.pattern, node).is_some())
        .map(|(path, _)| path)
        .collect()
}

/// One rewrite performed by [`transform`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Application {
    pub rule: String,
    pub site: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transformed {
    pub circuit: Circuit,
    pub applied: Vec<Application>,
    /// Set when some step found no applicable (rule, site) pair.
    pub stalled: bool,
}

/// Applies `n_rules` rewrites in sequence, each drawn uniformly from all
/// applicable (rule, site) pairs.
pub fn transform<R: Rng + ?Sized>(circuit: &Circuit, catalog: &RuleCatalog, n_rules: usize, rng: &mut R) -> Transformed {
    let mut current = circuit.clone();
    let mut applied = Vec::with_capacity(n_rules);
    for _ in 0..n_rules {
        let pairs: Vec<(usize, Vec<usize>)> = catalog
            .rules()
            .iter()
            .enumerate()
            .flat_map(|(i, rule)| sites_in(&current.output, rule).into_iter().map(move |s| (i, s)))
            .collect();
        if pairs.is_empty() {
            return Transformed { circuit: current, applied, stalled: true };
        }
        let (idx, site) = &pairs[rng.gen_range(0..pairs.len())];
        let rule = &catalog.rules()[*idx];
        current.output = rule.apply_at(&current.output, site, rng).expect("site was matched");
        applied.push(Application { rule: rule.id.clone(), site: site.clone() });
    }
    debug_assert!(current.check().is_ok());
    Transformed { circuit: current, applied, stalled: false }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::il::{eval_circuit, syntax::parse_expr};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fig1() -> Circuit {
        Circuit::parse("inputs : a, b, c\noutputs: out\nout = (a % (b + c))").unwrap()
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn catalog_is_complete_and_valid() {
        let cat = RuleCatalog::standard();
        assert_eq!(cat.len(), 84);
        assert!(cat.get("comm-add").is_some());
        assert!(cat.get("relation-not-equ-to-neq").is_some());
        assert!(cat.get("one-div").unwrap().fresh.nonzero);
        assert!(!cat.get("inv-xor-rev").unwrap().fresh.nonzero);
    }

    #[test]
    fn structural_match() {
        let p = Pattern::parse("?a + ?b").unwrap();
        let e = parse_expr("(x * y) + 3").unwrap();
        let b = match_at(&p, &e).unwrap();
        assert_eq!(b["a"], parse_expr("x * y").unwrap());
        assert_eq!(b["b"], Expr::Int(3));
        assert_eq!(p.substitute(&b), Some(e));
    }

    #[test]
    fn repeated_capture_must_agree() {
        let p = Pattern::parse("?a ^ ?a").unwrap();
        assert!(match_at(&p, &parse_expr("x ^ y").unwrap()).is_none());
        assert!(match_at(&p, &parse_expr("(x + 1) ^ (x + 1)").unwrap()).is_some());
    }

    #[test]
    fn annotation_restricts_type() {
        let p = Pattern::parse("?a:bool").unwrap();
        assert!(match_at(&p, &Expr::Int(5)).is_none());
        assert!(match_at(&p, &Expr::Bool(true)).is_some());
    }

    #[test]
    fn fresh_constant_is_shared() {
        let cat = RuleCatalog::standard();
        let rule = cat.get("inv-xor-rev").unwrap();
        let mut r = rng();
        for _ in 0..100 {
            let out = rule.apply_at(&Expr::Int(0), &[], &mut r).unwrap();
            let Expr::IntBin(IntOp::Xor, l, rr) = &out else { panic!("{out}") };
            assert_eq!(l, rr);
            assert!(matches!(**l, Expr::Int(_)));
        }
        let rule = cat.get("add-sub-random-value").unwrap();
        let out = rule.apply_at(&Expr::var("x"), &[], &mut r).unwrap();
        let Expr::IntBin(IntOp::Add, inner, k2) = &out else { panic!("{out}") };
        let Expr::IntBin(IntOp::Sub, x, k1) = &**inner else { panic!("{out}") };
        assert_eq!(**x, Expr::var("x"));
        assert_eq!(k1, k2);
    }

    #[test]
    fn one_div_constant_is_nonzero() {
        let cat = RuleCatalog::standard();
        let rule = cat.get("one-div").unwrap();
        let mut r = rng();
        for _ in 0..500 {
            let out = rule.apply_at(&Expr::Int(1), &[], &mut r).unwrap();
            let Expr::IntBin(IntOp::Div, k1, k2) = &out else { panic!("{out}") };
            assert_eq!(k1, k2);
            assert_ne!(**k1, Expr::Int(0));
        }
        // a zero divisor would break the identity under the total semantics
        let zero = Circuit::with_public_inputs(&[], parse_expr("0 / 0").unwrap()).unwrap();
        assert_eq!(eval_circuit(&zero, &[]), Ok(0xFFFF_FFFF));
        let k = Circuit::with_public_inputs(&[], parse_expr("0xFFFFFFFF / 0xFFFFFFFF").unwrap()).unwrap();
        assert_eq!(eval_circuit(&k, &[]), Ok(1));
    }

    #[test]
    fn sites_are_preorder() {
        let cat = RuleCatalog::standard();
        let c = fig1();
        assert_eq!(applicable_sites(&c, cat.get("comm-add").unwrap()), vec![vec![1]]);
        let id = Circuit::parse("inputs : a\noutputs: out\nout = a").unwrap();
        assert!(applicable_sites(&id, cat.get("comm-add").unwrap()).is_empty());
        let all = applicable_sites(&c, cat.get("zero-add-con").unwrap());
        assert_eq!(all, vec![vec![], vec![0], vec![1], vec![1, 0], vec![1, 1]]);
    }

    #[test]
    fn exponent_slot_is_not_a_site() {
        let cat = RuleCatalog::standard();
        let c = Circuit::parse("inputs : a\noutputs: out\nout = (a ** 2)").unwrap();
        let sites = applicable_sites(&c, cat.get("zero-add-con").unwrap());
        assert_eq!(sites, vec![vec![], vec![0]]);
    }

    #[test]
    fn walkthrough_rewrites() {
        let cat = RuleCatalog::standard();
        let mut r = rng();
        let c = fig1();
        let step1 = cat.get("comm-add").unwrap().apply_at(&c.output, &[1], &mut r).unwrap();
        assert_eq!(step1.to_string(), "(a % (c + b))");
        let step2 = cat.get("zero-add-con").unwrap().apply_at(&step1, &[1, 0], &mut r).unwrap();
        assert_eq!(step2.to_string(), "(a % ((c + 0) + b))");
    }

    #[test]
    fn root_constructor_rule() {
        let cat = RuleCatalog::standard();
        let c = fig1();
        let out = cat.get("zero-add-con").unwrap().apply_at(&c.output, &[], &mut rng()).unwrap();
        assert_eq!(out.to_string(), "((a % (b + c)) + 0)");
    }

    #[test]
    fn commuting_twice_restores_subtree() {
        let cat = RuleCatalog::standard();
        let rule = cat.get("comm-add").unwrap();
        let c = fig1();
        let once = rule.apply_at(&c.output, &[1], &mut rng()).unwrap();
        let twice = rule.apply_at(&once, &[1], &mut rng()).unwrap();
        assert_ne!(once, c.output);
        assert_eq!(twice, c.output);
    }

    #[test]
    fn transform_is_seeded() {
        let cat = RuleCatalog::standard();
        let c = fig1();
        let a = transform(&c, &cat, 4, &mut ChaCha8Rng::seed_from_u64(3));
        let b = transform(&c, &cat, 4, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
        assert_eq!(a.applied.len(), 4);
        assert!(!a.stalled);
    }

    #[test]
    fn transform_reports_stall() {
        let only = RuleCatalog::new(vec![RewriteRule::new("comm-add", "?a + ?b", "?b + ?a", FreshPolicy::default()).unwrap()]).unwrap();
        let c = Circuit::parse("inputs : a\noutputs: out\nout = a").unwrap();
        let t = transform(&c, &only, 2, &mut rng());
        assert!(t.stalled);
        assert_eq!(t.circuit, c);
    }

    #[test]
    fn malformed_rules_are_rejected() {
        let p = FreshPolicy::default();
        assert!(matches!(RewriteRule::new("x", "$r:int", "0", p), Err(RuleError::FreshInPattern(_))));
        assert!(matches!(RewriteRule::new("x", "?a + 0", "?b", p), Err(RuleError::UnboundCapture { .. })));
        assert!(matches!(RewriteRule::new("x", "?a + 0", "?a && T", p), Err(RuleError::TypeMismatch(_))));
        let dup = RewriteRule::new("x", "?a + 0", "?a", p).unwrap();
        assert!(matches!(RuleCatalog::new(vec![dup.clone(), dup]), Err(RuleError::DuplicateId(_))));
    }

    #[test]
    fn table_lists_every_rule() {
        let cat = RuleCatalog::standard();
        let table = cat.render_table();
        assert_eq!(table.lines().count(), 85);
        assert!(table.contains("inv-xor-rev"));
        assert!(table.contains("($r:int ^ $r:int)"));
    }
}
