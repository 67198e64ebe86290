//! Seeded random generation of well-typed circuits.
//!
//! Generation is top-down with a depth budget: each node spends one unit
//! and leaves are forced once the budget reaches one. Node kinds are drawn
//! by weight; operators within a kind are drawn uniformly.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::il::{BoolOp, Circuit, CmpOp, CustomFn, Expr, Input, IntOp, TypeTag, Word};

/// Boundary values mixed into literals and fresh constants.
pub const BOUNDARY_POOL: [Word; 6] = [0, 1, 2, 0x7FFF_FFFF, 0x8000_0000, 0xFFFF_FFFF];

/// Expression shapes the generator can emit. Custom calls are weighted
/// separately through [`GenConfig::asm_weight`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    InputVar,
    IntLiteral,
    IntBinOp,
    Ite,
    BoolLiteral,
    BoolBinOp,
    BoolNot,
    Compare,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeRange {
    pub min: usize,
    pub max: usize,
}

impl SizeRange {
    pub fn new(min: usize, max: usize) -> SizeRange {
        SizeRange { min, max }
    }

    pub fn is_empty(&self) -> bool {
        self.min > self.max
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        rng.gen_range(self.min..=self.max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub max_depth: usize,
    pub num_inputs: SizeRange,
    pub op_weights: BTreeMap<NodeKind, u32>,
    pub asm_extension: bool,
    pub asm_weight: u32,
    pub literal_pool: Vec<Word>,
    /// Probability that a literal comes from the pool rather than being
    /// drawn uniformly.
    pub pool_probability: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        let op_weights = [
            (NodeKind::InputVar, 3),
            (NodeKind::IntLiteral, 2),
            (NodeKind::IntBinOp, 6),
            (NodeKind::Ite, 1),
            (NodeKind::BoolLiteral, 1),
            (NodeKind::BoolBinOp, 2),
            (NodeKind::BoolNot, 1),
            (NodeKind::Compare, 4),
        ]
        .into_iter()
        .collect();
        GenConfig {
            max_depth: 5,
            num_inputs: SizeRange::new(1, 4),
            op_weights,
            asm_extension: false,
            asm_weight: 2,
            literal_pool: BOUNDARY_POOL.to_vec(),
            pool_probability: 0.75,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GenError {
    #[error("max_depth must be at least 1")]
    ZeroDepth,
    #[error("input-count range {0}..={1} is empty")]
    EmptyInputs(usize, usize),
    #[error("no int-producing leaf (input_var or int_literal) has positive weight")]
    NoIntLeaf,
    #[error("input_var has positive weight but circuits may have zero inputs")]
    VarWithoutInputs,
    #[error("pool probability {0} is outside [0, 1]")]
    BadProbability(String),
}

impl GenConfig {
    pub fn weight(&self, kind: NodeKind) -> u32 {
        self.op_weights.get(&kind).copied().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<(), GenError> {
        if self.max_depth == 0 {
            return Err(GenError::ZeroDepth);
        }
        if self.num_inputs.is_empty() {
            return Err(GenError::EmptyInputs(self.num_inputs.min, self.num_inputs.max));
        }
        let var = self.weight(NodeKind::InputVar);
        if var + self.weight(NodeKind::IntLiteral) == 0 {
            return Err(GenError::NoIntLeaf);
        }
        if self.num_inputs.min == 0 && self.weight(NodeKind::IntLiteral) == 0 {
            return Err(GenError::VarWithoutInputs);
        }
        if !(0.0..=1.0).contains(&self.pool_probability) {
            return Err(GenError::BadProbability(self.pool_probability.to_string()));
        }
        Ok(())
    }
}

/// Names used for generated inputs: a..z, then a1, b1, ...
pub fn input_name(i: usize) -> String {
    let letter = (b'a' + (i % 26) as u8) as char;
    match i / 26 {
        0 => letter.to_string(),
        n => format!("{letter}{n}"),
    }
}

/// Draws a literal: pool value with the configured probability, else uniform.
pub fn draw_literal<R: Rng + ?Sized>(rng: &mut R, pool: &[Word], pool_probability: f64) -> Word {
    if !pool.is_empty() && rng.gen_bool(pool_probability) {
        *pool.choose(rng).expect("non-empty pool")
    } else {
        rng.gen()
    }
}

struct Generator<'a, R> {
    cfg: &'a GenConfig,
    rng: &'a mut R,
    names: Vec<String>,
}

impl<R: Rng> Generator<'_, R> {
    fn pick<T: Copy>(&mut self, options: &[(T, u32)]) -> T {
        let total: u32 = options.iter().map(|(_, w)| w).sum();
        let mut x = self.rng.gen_range(0..total);
        for &(item, w) in options {
            if x < w {
                return item;
            }
            x -= w;
        }
        unreachable!("weights sum to total")
    }

    fn literal(&mut self) -> Word {
        draw_literal(self.rng, &self.cfg.literal_pool, self.cfg.pool_probability)
    }

    fn int_leaf(&mut self) -> Expr {
        let var_w = if self.names.is_empty() { 0 } else { self.cfg.weight(NodeKind::InputVar) };
        let lit_w = self.cfg.weight(NodeKind::IntLiteral);
        // validate() guarantees at least one leaf kind; a zero-input circuit
        // falls back to literals
        if var_w + lit_w == 0 || !self.pick(&[(true, var_w), (false, lit_w)]) {
            Expr::Int(self.literal())
        } else {
            Expr::Var(self.names.choose(self.rng).expect("inputs").clone())
        }
    }

    fn int_expr(&mut self, budget: usize) -> Expr {
        if budget <= 1 {
            return self.int_leaf();
        }
        // `None` stands for a custom call
        let mut options: Vec<(Option<NodeKind>, u32)> = vec![
            (Some(NodeKind::InputVar), if self.names.is_empty() { 0 } else { self.cfg.weight(NodeKind::InputVar) }),
            (Some(NodeKind::IntLiteral), self.cfg.weight(NodeKind::IntLiteral)),
            (Some(NodeKind::IntBinOp), self.cfg.weight(NodeKind::IntBinOp)),
            (Some(NodeKind::Ite), self.cfg.weight(NodeKind::Ite)),
        ];
        if self.cfg.asm_extension {
            options.push((None, self.cfg.asm_weight));
        }
        options.retain(|(_, w)| *w > 0);
        if options.is_empty() {
            return self.int_leaf();
        }
        match self.pick(&options) {
            Some(NodeKind::InputVar) | Some(NodeKind::IntLiteral) => self.int_leaf(),
            Some(NodeKind::IntBinOp) => {
                let op = *IntOp::ALL.choose(self.rng).unwrap();
                let lhs = self.int_expr(budget - 1);
                let rhs = if op == IntOp::Pow {
                    Expr::Int(self.rng.gen_range(2..=3))
                } else {
                    self.int_expr(budget - 1)
                };
                Expr::int_bin(op, lhs, rhs)
            }
            Some(NodeKind::Ite) => {
                let cond = self.bool_expr(budget - 1);
                let then = self.int_expr(budget - 1);
                let otherwise = self.int_expr(budget - 1);
                Expr::ite(cond, then, otherwise)
            }
            None => {
                let func = *CustomFn::ALL.choose(self.rng).unwrap();
                let args = (0..func.arity()).map(|_| self.int_expr(budget - 1)).collect();
                Expr::call(func, args)
            }
            Some(other) => unreachable!("{other:?} is not int-valued"),
        }
    }

    fn bool_expr(&mut self, budget: usize) -> Expr {
        if budget <= 1 {
            return Expr::Bool(self.rng.gen());
        }
        let options: Vec<(NodeKind, u32)> = [NodeKind::BoolLiteral, NodeKind::BoolBinOp, NodeKind::BoolNot, NodeKind::Compare]
            .into_iter()
            .map(|k| (k, self.cfg.weight(k)))
            .filter(|(_, w)| *w > 0)
            .collect();
        if options.is_empty() {
            return Expr::Bool(self.rng.gen());
        }
        match self.pick(&options) {
            NodeKind::BoolLiteral => Expr::Bool(self.rng.gen()),
            NodeKind::BoolBinOp => {
                let op = *BoolOp::ALL.choose(self.rng).unwrap();
                Expr::bool_bin(op, self.bool_expr(budget - 1), self.bool_expr(budget - 1))
            }
            NodeKind::BoolNot => Expr::not(self.bool_expr(budget - 1)),
            NodeKind::Compare => {
                let op = *CmpOp::ALL.choose(self.rng).unwrap();
                Expr::cmp(op, self.int_expr(budget - 1), self.int_expr(budget - 1))
            }
            other => unreachable!("{other:?} is not bool-valued"),
        }
    }
}

/// Generates a circuit; identical `(seed, config)` give identical circuits.
pub fn generate_circuit(seed: u64, config: &GenConfig) -> Result<Circuit, GenError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let arity = config.num_inputs.sample(&mut rng);
    let names: Vec<String> = (0..arity).map(input_name).collect();
    let mut gen = Generator { cfg: config, rng: &mut rng, names };
    let output = gen.int_expr(config.max_depth);
    let inputs = gen.names.iter().map(|n| Input::public(n.clone())).collect();
    Ok(Circuit::new(inputs, "out", output).expect("generator emits well-typed circuits"))
}

/// Generates a random expression of type `ty` over `inputs`, bounded by
/// `max_depth`. Used to instantiate rewrite patterns in property tests.
pub fn generate_expr<R: Rng>(rng: &mut R, ty: TypeTag, max_depth: usize, inputs: &[String], config: &GenConfig) -> Expr {
    let mut gen = Generator { cfg: config, rng, names: inputs.to_vec() };
    match ty {
        TypeTag::Int => gen.int_expr(max_depth.max(1)),
        TypeTag::Bool => gen.bool_expr(max_depth.max(1)),
    }
}
