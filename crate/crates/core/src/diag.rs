//! Diagnostics and source locations shared by the parser, validator and instantiator.

use std::cmp::Ordering;
use std::fmt;

/// A 1-based location inside a `.broom` source file.
///
/// Spans never take part in structural equality: two model nodes that differ
/// only in where they were written compare equal. This is what makes
/// `parse(render(m)) == m` meaningful.
#[derive(Debug, Clone, Copy, Default)]
pub struct Span {
    pub line: u32,
    pub column: u32,
    pub length: u32,
}

impl Span {
    pub fn new(line: u32, column: u32, length: u32) -> Self {
        Self { line, column, length }
    }

    fn key(&self) -> (u32, u32) {
        (self.line, self.column)
    }
}

impl PartialEq for Span {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

impl Eq for Span {}

/// Stable diagnostic codes. The string forms are part of the CLI contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Code {
    Syntax,
    MultiInherit,
    Override,
    ChanDangling,
    PortIncompat,
    ContainCycle,
    AlgebraicLoop,
    Type,
    Unresolved,
    Unbound,
    Duplicate,
    Fanout,
    CallCycle,
    BlockParam,
    Structure,
}

impl Code {
    pub fn as_str(self) -> &'static str {
        match self {
            Code::Syntax => "E_SYNTAX",
            Code::MultiInherit => "E_MULTI_INHERIT",
            Code::Override => "E_OVERRIDE",
            Code::ChanDangling => "E_CHAN_DANGLING",
            Code::PortIncompat => "E_PORT_INCOMPAT",
            Code::ContainCycle => "E_CONTAIN_CYCLE",
            Code::AlgebraicLoop => "E_ALGEBRAIC_LOOP",
            Code::Type => "E_TYPE",
            Code::Unresolved => "E_UNRESOLVED",
            Code::Unbound => "E_UNBOUND",
            Code::Duplicate => "E_DUPLICATE",
            Code::Fanout => "E_FANOUT",
            Code::CallCycle => "E_CALL_CYCLE",
            Code::BlockParam => "E_BLOCK_PARAM",
            Code::Structure => "E_STRUCTURE",
        }
    }
}

impl fmt::Display for Code {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone)]
pub struct Diagnostic {
    pub code: Code,
    pub span: Span,
    pub message: String,
}

impl Diagnostic {
    pub fn new(code: Code, span: Span, message: impl Into<String>) -> Self {
        Self { code, span, message: message.into() }
    }

    /// `CODE file:line:col message`
    pub fn render(&self, file: &str) -> String {
        format!(
            "{} {}:{}:{} {}",
            self.code, file, self.span.line, self.span.column, self.message
        )
    }
}

// Diagnostics compare on their real location, unlike bare spans.
impl PartialEq for Diagnostic {
    fn eq(&self, other: &Self) -> bool {
        self.code == other.code
            && self.span.key() == other.span.key()
            && self.message == other.message
    }
}

impl Eq for Diagnostic {}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}:{} {}", self.code, self.span.line, self.span.column, self.message)
    }
}

/// Sort by location, then code, then message. Duplicates are dropped.
pub fn sort_diagnostics(diags: &mut Vec<Diagnostic>) {
    diags.sort_by(|a, b| {
        a.span
            .key()
            .cmp(&b.span.key())
            .then(a.code.cmp(&b.code))
            .then_with(|| a.message.cmp(&b.message))
    });
    diags.dedup();
}

pub fn cmp_location(a: &Diagnostic, b: &Diagnostic) -> Ordering {
    a.span.key().cmp(&b.span.key())
}
