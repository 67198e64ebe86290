//! Circuit translation: Rust source text for external zkVM toolchains and
//! direct compilation of product programs to the reference VM.

mod compile;
mod source;

use thiserror::Error;

use crate::il::{eval_circuit, Circuit, EvalError, Word};

pub use compile::{compile_to_refvm, CompileError, CompileOptions, RESULT_BASE, SPILL_BASE};
pub use source::{emit_function, emit_product_source, SourceFunction, SourceOptions, DEFAULT_ENTRY_ATTRIBUTE};

pub const SUCCESS: Word = 0xC0FFEE;
pub const OOPS: Word = 0x0;
/// Upper bound on bundled functions; result slots must stay addressable.
pub const MAX_FUNCTIONS: usize = 64;
/// Upper bound on shared inputs; input words must stay addressable.
pub const MAX_ARITY: usize = 64;

/// k semantically related circuits sharing one input signature, merged
/// into a single entry point that returns SUCCESS iff all outputs agree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProductProgram {
    pub circuits: Vec<Circuit>,
    pub names: Vec<String>,
    pub success_word: Word,
    pub oops_word: Word,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProductError {
    #[error("a product program needs at least 2 functions, got {0}")]
    TooFew(usize),
    #[error("at most {MAX_FUNCTIONS} functions are supported, got {0}")]
    TooMany(usize),
    #[error("at most {MAX_ARITY} inputs are supported, got {0}")]
    Arity(usize),
    #[error("function {0} does not share the input signature of the first")]
    Signature(usize),
    #[error("expected {expected} function names, got {found}")]
    Names { expected: usize, found: usize },
}

impl ProductProgram {
    /// Bundles circuits under names `c1`, `c2`, ...
    pub fn new(circuits: Vec<Circuit>) -> Result<ProductProgram, ProductError> {
        let names = (1..=circuits.len()).map(|i| format!("c{i}")).collect();
        ProductProgram::with_names(circuits, names)
    }

    pub fn with_names(circuits: Vec<Circuit>, names: Vec<String>) -> Result<ProductProgram, ProductError> {
        let k = circuits.len();
        if k < 2 {
            return Err(ProductError::TooFew(k));
        }
        if k > MAX_FUNCTIONS {
            return Err(ProductError::TooMany(k));
        }
        if names.len() != k {
            return Err(ProductError::Names { expected: k, found: names.len() });
        }
        if circuits[0].arity() > MAX_ARITY {
            return Err(ProductError::Arity(circuits[0].arity()));
        }
        if let Some(i) = circuits.iter().position(|c| !c.same_signature(&circuits[0])) {
            return Err(ProductError::Signature(i));
        }
        Ok(ProductProgram { circuits, names, success_word: SUCCESS, oops_word: OOPS })
    }

    pub fn arity(&self) -> usize {
        self.circuits[0].arity()
    }

    pub fn len(&self) -> usize {
        self.circuits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.circuits.is_empty()
    }

    /// Entry-point semantics over the IL evaluator.
    pub fn evaluate(&self, inputs: &[Word]) -> Result<Word, EvalError> {
        let outs = self.circuits.iter().map(|c| eval_circuit(c, inputs)).collect::<Result<Vec<_>, _>>()?;
        Ok(if outs.windows(2).all(|w| w[0] == w[1]) { self.success_word } else { self.oops_word })
    }

    /// Full source text with the default entry attribute.
    pub fn source(&self) -> String {
        emit_product_source(self, &SourceOptions::default())
    }
}
