//! BROOM models: a textual language for hierarchical actors with ports, flat
//! state machines and continuous control blocks, plus the tools that run on
//! it. A model is parsed with [`dsl::parse`], checked with
//! [`model::validate`], instantiated with [`model::instantiate`] and then
//! simulated ([`sim`]), rehearsed against scenarios ([`scenario`]) or turned
//! into C ([`codegen`]).

pub mod blocks;
pub mod codegen;
pub mod diag;
pub mod dsl;
pub mod fixture;
pub mod model;
pub mod scenario;
pub mod sim;

pub use diag::{Code, Diagnostic, Span};

/// Version string written into trace headers and printed by the CLI.
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
