//! Textual concrete syntax for models (`.broom` files).

mod lexer;
mod parser;
mod render;

pub use parser::{is_keyword, parse, parse_bytes};
pub use render::render;

