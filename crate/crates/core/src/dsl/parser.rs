use super::lexer::{tokenize, Tok, Token};
use crate::diag::{Code, Diagnostic, Span};
use crate::model::*;

const KEYWORDS: &[&str] = &[
    "model", "actor", "data", "protocol", "enum", "root", "provides", "requires", "attr",
    "tunable", "method", "message", "part", "connect", "self", "machine", "states", "initial",
    "on", "if", "block", "pt1", "pi", "limiter", "deadline", "timer", "send", "set", "cancel",
    "return", "true", "false", "bool", "int", "real", "out",
];

const MAX_DEPTH: usize = 200;

pub fn is_keyword(s: &str) -> bool {
    KEYWORDS.contains(&s)
}

/// Parse one `.broom` unit. On failure the first syntax error is returned.
pub fn parse(text: &str) -> Result<ModelUnit, Vec<Diagnostic>> {
    let tokens = tokenize(text).map_err(|d| vec![d])?;
    let mut p = Parser { tokens, pos: 0, depth: 0 };
    p.unit().map_err(|d| vec![d])
}

/// Like [`parse`] but accepts raw bytes, rejecting invalid UTF-8.
pub fn parse_bytes(bytes: &[u8]) -> Result<ModelUnit, Vec<Diagnostic>> {
    match std::str::from_utf8(bytes) {
        Ok(text) => parse(text),
        Err(e) => {
            let prefix = &bytes[..e.valid_up_to()];
            let line = 1 + prefix.iter().filter(|&&b| b == b'\n').count() as u32;
            let col = 1 + prefix.iter().rev().take_while(|&&b| b != b'\n').count() as u32;
            Err(vec![Diagnostic::new(Code::Syntax, Span::new(line, col, 1), "invalid UTF-8")])
        }
    }
}

type PResult<T> = Result<T, Diagnostic>;

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    depth: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].tok
    }

    fn peek_at(&self, n: usize) -> &Tok {
        let i = (self.pos + n).min(self.tokens.len() - 1);
        &self.tokens[i].tok
    }

    fn span(&self) -> Span {
        self.tokens[self.pos].span
    }

    fn advance(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn error<T>(&self, expected: &str) -> PResult<T> {
        Err(Diagnostic::new(
            Code::Syntax,
            self.span(),
            format!("expected {expected}, found {}", self.peek().describe()),
        ))
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == kw)
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.is_kw(kw) {
            self.advance();
            true
        } else {
            false
        }
    }

    fn expect_kw(&mut self, kw: &str) -> PResult<Span> {
        if self.is_kw(kw) {
            Ok(self.advance().span)
        } else {
            self.error(&format!("`{kw}`"))
        }
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == tok {
            self.advance();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, tok: Tok) -> PResult<Span> {
        if *self.peek() == tok {
            Ok(self.advance().span)
        } else {
            self.error(&format!("`{}`", tok.symbol()))
        }
    }

    fn ident(&mut self) -> PResult<(String, Span)> {
        match self.peek().clone() {
            Tok::Ident(s) if !is_keyword(&s) => {
                let span = self.advance().span;
                Ok((s, span))
            }
            _ => self.error("identifier"),
        }
    }

    fn reference(&mut self) -> PResult<Reference> {
        let (name, span) = self.ident()?;
        Ok(Reference { name, span })
    }

    fn enter(&mut self) -> PResult<()> {
        self.depth += 1;
        if self.depth > MAX_DEPTH {
            return Err(Diagnostic::new(Code::Syntax, self.span(), "nesting too deep"));
        }
        Ok(())
    }

    fn unit(&mut self) -> PResult<ModelUnit> {
        let span = self.expect_kw("model")?;
        let (name, _) = self.ident()?;
        self.expect(Tok::LBrace)?;
        let mut unit = ModelUnit {
            name,
            enums: Vec::new(),
            protocols: Vec::new(),
            data_classes: Vec::new(),
            actor_classes: Vec::new(),
            root: String::new(),
            root_span: Span::default(),
            span,
        };
        loop {
            if self.is_kw("actor") {
                let a = self.actor()?;
                unit.actor_classes.push(a);
            } else if self.is_kw("data") {
                let d = self.data()?;
                unit.data_classes.push(d);
            } else if self.is_kw("protocol") {
                let p = self.protocol()?;
                unit.protocols.push(p);
            } else if self.is_kw("enum") {
                let e = self.enum_decl()?;
                unit.enums.push(e);
            } else if self.is_kw("root") {
                break;
            } else {
                return self.error("`actor`, `data`, `protocol`, `enum` or `root`");
            }
        }
        self.expect_kw("root")?;
        let (root, root_span) = self.ident()?;
        unit.root = root;
        unit.root_span = root_span;
        self.expect(Tok::RBrace)?;
        if *self.peek() != Tok::Eof {
            return self.error("end of input");
        }
        Ok(unit)
    }

    fn enum_decl(&mut self) -> PResult<EnumDecl> {
        self.expect_kw("enum")?;
        let (name, span) = self.ident()?;
        self.expect(Tok::LBrace)?;
        let mut variants = vec![self.ident()?.0];
        while self.eat(&Tok::Comma) {
            variants.push(self.ident()?.0);
        }
        self.expect(Tok::RBrace)?;
        Ok(EnumDecl { name, variants, span })
    }

    fn protocol(&mut self) -> PResult<Protocol> {
        self.expect_kw("protocol")?;
        let (name, span) = self.ident()?;
        self.expect(Tok::LBrace)?;
        let mut signatures = Vec::new();
        while !self.eat(&Tok::RBrace) {
            let kind = if self.eat_kw("method") {
                SigKind::Method
            } else if self.eat_kw("message") {
                SigKind::Message
            } else {
                return self.error("`method`, `message` or `}`");
            };
            let (sname, sspan) = self.ident()?;
            let params = self.params()?;
            let ret = if kind == SigKind::Method && self.eat(&Tok::Colon) {
                Some(self.ty()?)
            } else {
                None
            };
            self.expect(Tok::Semi)?;
            signatures.push(Signature { kind, name: sname, params, ret, span: sspan });
        }
        Ok(Protocol { name, signatures, span })
    }

    fn params(&mut self) -> PResult<Vec<Param>> {
        self.expect(Tok::LParen)?;
        let mut params = Vec::new();
        if !self.eat(&Tok::RParen) {
            loop {
                let (name, span) = self.ident()?;
                self.expect(Tok::Colon)?;
                let ty = self.ty()?;
                params.push(Param { name, ty, span });
                if self.eat(&Tok::RParen) {
                    break;
                }
                self.expect(Tok::Comma)?;
            }
        }
        Ok(params)
    }

    fn ty(&mut self) -> PResult<Type> {
        if self.eat_kw("bool") {
            Ok(Type::Bool)
        } else if self.eat_kw("int") {
            Ok(Type::Int)
        } else if self.eat_kw("real") {
            Ok(Type::Real)
        } else {
            match self.ident() {
                Ok((n, _)) => Ok(Type::Named(n)),
                Err(_) => self.error("type"),
            }
        }
    }

    fn literal(&mut self) -> PResult<Literal> {
        let negative = self.eat(&Tok::Minus);
        match self.peek().clone() {
            Tok::Int(v) => {
                let span = self.advance().span;
                signed_int(v, negative, span).map(Literal::Int)
            }
            Tok::Real(v) => {
                self.advance();
                Ok(Literal::Real(if negative { -v } else { v }))
            }
            Tok::Ident(s) if !negative && (s == "true" || s == "false") => {
                self.advance();
                Ok(Literal::Bool(s == "true"))
            }
            Tok::Ident(_) if !negative => {
                let (e, _) = self.ident()?;
                self.expect(Tok::Dot)?;
                let (v, _) = self.ident()?;
                Ok(Literal::Enum(e, v))
            }
            _ => self.error("literal"),
        }
    }

    fn number(&mut self) -> PResult<f64> {
        match self.literal()? {
            Literal::Real(v) => Ok(v),
            Literal::Int(v) => Ok(v as f64),
            _ => Err(Diagnostic::new(Code::Syntax, self.span(), "expected number")),
        }
    }

    fn attribute(&mut self, tunable: bool) -> PResult<Attribute> {
        self.expect_kw("attr")?;
        let (name, span) = self.ident()?;
        self.expect(Tok::Colon)?;
        let ty = self.ty()?;
        let init = if self.eat(&Tok::Equals) { Some(self.literal()?) } else { None };
        self.expect(Tok::Semi)?;
        Ok(Attribute { name, ty, init, tunable, span })
    }

    fn method(&mut self) -> PResult<Method> {
        self.expect_kw("method")?;
        let (name, span) = self.ident()?;
        let params = self.params()?;
        let ret = if self.eat(&Tok::Colon) { Some(self.ty()?) } else { None };
        let body = self.stmt_block()?;
        Ok(Method { name, params, ret, body, span })
    }

    fn data(&mut self) -> PResult<DataClass> {
        self.expect_kw("data")?;
        let (name, span) = self.ident()?;
        self.expect(Tok::LBrace)?;
        let mut fields = Vec::new();
        let mut methods = Vec::new();
        while !self.eat(&Tok::RBrace) {
            if self.is_kw("attr") {
                fields.push(self.attribute(false)?);
            } else if self.is_kw("method") {
                methods.push(self.method()?);
            } else {
                return self.error("`attr`, `method` or `}`");
            }
        }
        Ok(DataClass { name, fields, methods, span })
    }

    fn actor(&mut self) -> PResult<ActorClass> {
        self.expect_kw("actor")?;
        let (name, span) = self.ident()?;
        let mut class = ActorClass::empty(&name);
        class.span = span;
        if self.eat(&Tok::Colon) {
            class.superclasses.push(self.reference()?);
            while self.eat(&Tok::Comma) {
                class.superclasses.push(self.reference()?);
            }
        }
        self.expect(Tok::LBrace)?;
        while !self.eat(&Tok::RBrace) {
            let here = self.span();
            if self.is_kw("provides") || self.is_kw("requires") {
                let direction =
                    if self.eat_kw("provides") { Direction::Provided } else {
                        self.advance();
                        Direction::Required
                    };
                let (pname, pspan) = self.ident()?;
                self.expect(Tok::Colon)?;
                let (protocol, _) = self.ident()?;
                self.expect(Tok::Semi)?;
                class.ports.push(Port { name: pname, direction, protocol, span: pspan });
            } else if self.eat_kw("tunable") {
                class.attributes.push(self.attribute(true)?);
            } else if self.is_kw("attr") {
                class.attributes.push(self.attribute(false)?);
            } else if self.eat_kw("timer") {
                let (tname, tspan) = self.ident()?;
                self.expect(Tok::Semi)?;
                class.timers.push(Timer { name: tname, span: tspan });
            } else if self.is_kw("method") {
                class.methods.push(self.method()?);
            } else if self.eat_kw("part") {
                let (pname, pspan) = self.ident()?;
                self.expect(Tok::Colon)?;
                let (cls, _) = self.ident()?;
                self.expect(Tok::Semi)?;
                class.parts.push(Part { name: pname, class: cls, span: pspan });
            } else if self.eat_kw("connect") {
                let a = self.endpoint()?;
                self.expect(Tok::Wire)?;
                let b = self.endpoint()?;
                self.expect(Tok::Semi)?;
                class.channels.push(Channel { a, b, span: here });
            } else if self.is_kw("machine") {
                if class.machine.is_some() {
                    return Err(Diagnostic::new(Code::Syntax, here, "second `machine` in actor"));
                }
                class.machine = Some(self.machine()?);
            } else if self.is_kw("block") {
                if class.block.is_some() {
                    return Err(Diagnostic::new(Code::Syntax, here, "second `block` in actor"));
                }
                class.block = Some(self.block()?);
            } else if self.eat_kw("deadline") {
                if class.deadline.is_some() {
                    return Err(Diagnostic::new(Code::Syntax, here, "second `deadline` in actor"));
                }
                let ticks = match self.peek().clone() {
                    Tok::Int(v) => {
                        self.advance();
                        v
                    }
                    _ => return self.error("tick count"),
                };
                self.expect(Tok::Semi)?;
                class.deadline = Some(Deadline { ticks, span: here });
            } else {
                return self.error("actor member");
            }
        }
        Ok(class)
    }

    fn endpoint(&mut self) -> PResult<Endpoint> {
        let span = self.span();
        let part = if self.eat_kw("self") { None } else { Some(self.ident()?.0) };
        self.expect(Tok::Dot)?;
        let (port, _) = self.ident()?;
        Ok(Endpoint { part, port, span })
    }

    fn machine(&mut self) -> PResult<StateMachine> {
        let span = self.expect_kw("machine")?;
        self.expect(Tok::LBrace)?;
        self.expect_kw("states")?;
        let mut states = vec![self.reference()?];
        while self.eat(&Tok::Comma) {
            states.push(self.reference()?);
        }
        self.expect(Tok::Semi)?;
        self.expect_kw("initial")?;
        let initial = self.reference()?;
        self.expect(Tok::Semi)?;
        let mut transitions = Vec::new();
        while !self.eat(&Tok::RBrace) {
            let tspan = self.span();
            let from = self.reference()?;
            self.expect(Tok::Arrow)?;
            let to = self.reference()?;
            self.expect_kw("on")?;
            let trigger = self.reference()?;
            let guard = if self.eat_kw("if") { Some(self.expr()?) } else { None };
            let actions = if self.eat(&Tok::Slash) { self.stmt_block()? } else { Vec::new() };
            self.expect(Tok::Semi)?;
            transitions.push(Transition { from, to, trigger, guard, actions, span: tspan });
        }
        Ok(StateMachine { states, initial, transitions, span })
    }

    fn block(&mut self) -> PResult<Block> {
        let span = self.expect_kw("block")?;
        let kind = if self.eat_kw("pt1") {
            let v = self.number_args(2)?;
            BlockKind::Pt1 { gain: v[0], time_constant: v[1] }
        } else if self.eat_kw("pi") {
            let v = self.number_args(4)?;
            BlockKind::Pi { kp: v[0], ki: v[1], lo: v[2], hi: v[3] }
        } else if self.eat_kw("limiter") {
            let v = self.number_args(2)?;
            BlockKind::Limiter { lo: v[0], hi: v[1] }
        } else {
            return self.error("`pt1`, `pi` or `limiter`");
        };
        self.expect(Tok::Feed)?;
        let input = self.expr()?;
        self.expect(Tok::Semi)?;
        Ok(Block { kind, input, span })
    }

    fn number_args(&mut self, n: usize) -> PResult<Vec<f64>> {
        self.expect(Tok::LParen)?;
        let mut v = Vec::with_capacity(n);
        for i in 0..n {
            if i > 0 {
                self.expect(Tok::Comma)?;
            }
            v.push(self.number()?);
        }
        self.expect(Tok::RParen)?;
        Ok(v)
    }

    fn stmt_block(&mut self) -> PResult<Vec<Stmt>> {
        self.expect(Tok::LBrace)?;
        let mut body = Vec::new();
        while !self.eat(&Tok::RBrace) {
            body.push(self.stmt()?);
        }
        Ok(body)
    }

    fn stmt(&mut self) -> PResult<Stmt> {
        let span = self.span();
        let kind = if self.eat_kw("send") {
            let (port, _) = self.ident()?;
            self.expect(Tok::Dot)?;
            let (message, _) = self.ident()?;
            let args = self.args()?;
            StmtKind::Send { port, message, args }
        } else if self.eat_kw("set") {
            let (timer, _) = self.ident()?;
            self.expect(Tok::LParen)?;
            let ticks = self.expr()?;
            self.expect(Tok::RParen)?;
            StmtKind::SetTimer { timer, ticks }
        } else if self.eat_kw("cancel") {
            let (timer, _) = self.ident()?;
            StmtKind::CancelTimer { timer }
        } else if self.eat_kw("return") {
            StmtKind::Return(self.expr()?)
        } else {
            let mut path = vec![self.ident()?.0];
            while self.eat(&Tok::Dot) {
                path.push(self.ident()?.0);
            }
            if *self.peek() == Tok::LParen {
                if path.len() < 2 {
                    return Err(Diagnostic::new(
                        Code::Syntax,
                        span,
                        "calls need a receiver: `port.method(...)`",
                    ));
                }
                let method = path.pop().unwrap_or_default();
                let args = self.args()?;
                StmtKind::Call { target: path, method, args }
            } else {
                self.expect(Tok::Assign)?;
                let value = self.expr()?;
                StmtKind::Assign { target: path, value }
            }
        };
        self.expect(Tok::Semi)?;
        Ok(Stmt { kind, span })
    }

    fn args(&mut self) -> PResult<Vec<Expr>> {
        self.expect(Tok::LParen)?;
        let mut args = Vec::new();
        if !self.eat(&Tok::RParen) {
            loop {
                args.push(self.expr()?);
                if self.eat(&Tok::RParen) {
                    break;
                }
                self.expect(Tok::Comma)?;
            }
        }
        Ok(args)
    }

    fn expr(&mut self) -> PResult<Expr> {
        self.enter()?;
        let e = self.binary(1);
        self.depth -= 1;
        e
    }

    fn binary(&mut self, min_prec: u8) -> PResult<Expr> {
        let mut lhs = self.unary()?;
        while let Some(op) = binary_op(self.peek()) {
            // `if g / { ... }`: the slash opens a transition's actions
            if op == BinaryOp::Div && *self.peek_at(1) == Tok::LBrace {
                break;
            }
            let prec = op.precedence();
            if prec < min_prec {
                break;
            }
            let span = self.advance().span;
            let rhs = self.binary(prec + 1)?;
            if op.is_comparison() {
                if let Some(next) = binary_op(self.peek()) {
                    if next.is_comparison() {
                        return self.error("operator; comparisons do not chain");
                    }
                }
            }
            lhs = Expr::new(ExprKind::Binary(op, Box::new(lhs), Box::new(rhs)), span);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> PResult<Expr> {
        let span = self.span();
        if *self.peek() == Tok::Minus {
            // `-` directly before a number is part of the literal
            match self.peek_at(1).clone() {
                Tok::Int(v) => {
                    self.advance();
                    let s = self.advance().span;
                    let v = signed_int(v, true, s)?;
                    return Ok(Expr::new(ExprKind::Lit(Literal::Int(v)), span));
                }
                Tok::Real(v) => {
                    self.advance();
                    self.advance();
                    return Ok(Expr::new(ExprKind::Lit(Literal::Real(-v)), span));
                }
                _ => {}
            }
            self.advance();
            self.enter()?;
            let inner = self.unary();
            self.depth -= 1;
            return Ok(Expr::new(ExprKind::Unary(UnaryOp::Neg, Box::new(inner?)), span));
        }
        if self.eat(&Tok::Bang) {
            self.enter()?;
            let inner = self.unary();
            self.depth -= 1;
            return Ok(Expr::new(ExprKind::Unary(UnaryOp::Not, Box::new(inner?)), span));
        }
        self.primary()
    }

    fn primary(&mut self) -> PResult<Expr> {
        let span = self.span();
        match self.peek().clone() {
            Tok::Int(v) => {
                self.advance();
                let v = signed_int(v, false, span)?;
                Ok(Expr::new(ExprKind::Lit(Literal::Int(v)), span))
            }
            Tok::Real(v) => {
                self.advance();
                Ok(Expr::new(ExprKind::Lit(Literal::Real(v)), span))
            }
            Tok::LParen => {
                self.advance();
                let e = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(e)
            }
            Tok::Ident(s) if s == "true" || s == "false" => {
                self.advance();
                Ok(Expr::new(ExprKind::Lit(Literal::Bool(s == "true")), span))
            }
            Tok::Ident(s) if s == "out" => {
                self.advance();
                Ok(Expr::new(ExprKind::Out, span))
            }
            Tok::Ident(_) => {
                let mut path = vec![self.ident()?.0];
                while self.eat(&Tok::Dot) {
                    path.push(self.ident()?.0);
                }
                if *self.peek() == Tok::LParen {
                    if path.len() < 2 {
                        return Err(Diagnostic::new(
                            Code::Syntax,
                            span,
                            "calls need a receiver: `port.method(...)`",
                        ));
                    }
                    let method = path.pop().unwrap_or_default();
                    let args = self.args()?;
                    return Ok(Expr::new(ExprKind::Call { target: path, method, args }, span));
                }
                let mut it = path.into_iter();
                let first = it.next().unwrap_or_default();
                let mut e = Expr::new(ExprKind::Name(first), span);
                for f in it {
                    e = Expr::new(ExprKind::Field(Box::new(e), f), span);
                }
                Ok(e)
            }
            _ => self.error("expression"),
        }
    }
}

fn binary_op(t: &Tok) -> Option<BinaryOp> {
    Some(match t {
        Tok::Plus => BinaryOp::Add,
        Tok::Minus => BinaryOp::Sub,
        Tok::Star => BinaryOp::Mul,
        Tok::Slash => BinaryOp::Div,
        Tok::Lt => BinaryOp::Lt,
        Tok::Le => BinaryOp::Le,
        Tok::Gt => BinaryOp::Gt,
        Tok::Ge => BinaryOp::Ge,
        Tok::EqEq => BinaryOp::Eq,
        Tok::Ne => BinaryOp::Ne,
        Tok::AndAnd => BinaryOp::And,
        Tok::OrOr => BinaryOp::Or,
        _ => return None,
    })
}

fn signed_int(magnitude: u64, negative: bool, span: Span) -> PResult<i64> {
    if negative {
        if magnitude == 1u64 << 63 {
            Ok(i64::MIN)
        } else if magnitude < 1u64 << 63 {
            Ok(-(magnitude as i64))
        } else {
            Err(Diagnostic::new(Code::Syntax, span, "integer literal out of range"))
        }
    } else {
        i64::try_from(magnitude)
            .map_err(|_| Diagnostic::new(Code::Syntax, span, "integer literal out of range"))
    }
}
