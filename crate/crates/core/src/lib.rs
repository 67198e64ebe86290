//! Metamorphic and fault-injection fuzzing for zkVM-style prover/verifier
//! pipelines, with a bundled reference VM.

pub mod il;
pub mod gen;
pub mod metamorph;
pub mod refvm;
pub mod inject;
pub mod codegen;
pub mod harness;
