//! Datalog syntax: AST, parser, disjunction normalization and the
//! canonical single-line rule rendering stored in metadata tables.

use crate::value::{ColumnType, Value};
use std::fmt;
use thiserror::Error;

/// Predicate identity: name plus arity.
pub type PredKey = (String, usize);

/// Arithmetic function names the SQL compiler knows how to map.
/// Rules using other functions stay in the local database.
pub const FUNC_REGISTRY: &[&str] = &["sin", "cos", "abs"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl ArithOp {
    pub fn symbol(&self) -> &'static str {
        match self {
            ArithOp::Add => "+",
            ArithOp::Sub => "-",
            ArithOp::Mul => "*",
            ArithOp::Div => "/",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn symbol(&self) -> &'static str {
        match self {
            CmpOp::Eq => "=",
            CmpOp::Ne => "\\=",
            CmpOp::Lt => "<",
            CmpOp::Le => "=<",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }
}

/// Depth-1 term: atom arguments are variables or constants only.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Term {
    Var(String),
    Const(Value),
}

/// Arithmetic expression, used inside comparisons and `is`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Expr {
    Term(Term),
    Arith(ArithOp, Box<Expr>, Box<Expr>),
    Func(String, Vec<Expr>),
}

impl Expr {
    pub fn vars(&self, out: &mut Vec<String>) {
        match self {
            Expr::Term(Term::Var(v)) => {
                if !out.contains(v) {
                    out.push(v.clone());
                }
            }
            Expr::Term(Term::Const(_)) => {}
            Expr::Arith(_, l, r) => {
                l.vars(out);
                r.vars(out);
            }
            Expr::Func(_, args) => {
                for a in args {
                    a.vars(out);
                }
            }
        }
    }

    /// Function names occurring anywhere in the expression.
    pub fn funcs(&self, out: &mut Vec<String>) {
        match self {
            Expr::Term(_) => {}
            Expr::Arith(_, l, r) => {
                l.funcs(out);
                r.funcs(out);
            }
            Expr::Func(name, args) => {
                out.push(name.clone());
                for a in args {
                    a.funcs(out);
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Atom {
    pub pred: String,
    pub args: Vec<Term>,
}

impl Atom {
    pub fn key(&self) -> PredKey {
        (self.pred.clone(), self.args.len())
    }

    pub fn is_propositional(&self) -> bool {
        self.args.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Literal {
    Pos(Atom),
    Neg(Atom),
    Cmp(CmpOp, Expr, Expr),
    Is(String, Expr),
}

impl Literal {
    pub fn vars(&self) -> Vec<String> {
        let mut out = Vec::new();
        match self {
            Literal::Pos(a) | Literal::Neg(a) => {
                for t in &a.args {
                    if let Term::Var(v) = t {
                        if !out.contains(v) {
                            out.push(v.clone());
                        }
                    }
                }
            }
            Literal::Cmp(_, l, r) => {
                l.vars(&mut out);
                r.vars(&mut out);
            }
            Literal::Is(v, e) => {
                out.push(v.clone());
                e.vars(&mut out);
            }
        }
        out
    }
}

/// A disjunction of conjunctions; conjoining several groups forms a rule
/// body before normalization.
pub type BodyGroup = Vec<Vec<Literal>>;

/// A parsed rule. Facts have an empty body. A normalized rule has exactly
/// one group with one conjunction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rule {
    pub head: Atom,
    pub body: Vec<BodyGroup>,
}

/// A disjunction-free rule: the form every downstream module consumes.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NormalRule {
    pub head: Atom,
    pub body: Vec<Literal>,
}

impl NormalRule {
    pub fn fact(head: Atom) -> Self {
        NormalRule { head, body: Vec::new() }
    }

    pub fn is_fact(&self) -> bool {
        self.body.is_empty()
    }

    pub fn is_ground_fact(&self) -> bool {
        self.is_fact() && self.head.args.iter().all(|t| matches!(t, Term::Const(_)))
    }

    /// Predicates called in the body, with polarity (true = positive).
    pub fn callees(&self) -> Vec<(PredKey, bool)> {
        let mut out = Vec::new();
        for lit in &self.body {
            match lit {
                Literal::Pos(a) => out.push((a.key(), true)),
                Literal::Neg(a) => out.push((a.key(), false)),
                _ => {}
            }
        }
        out
    }
}

/// Expand disjunctive bodies into one rule per combination of disjuncts.
pub fn normalize(rule: &Rule) -> Vec<NormalRule> {
    let mut bodies: Vec<Vec<Literal>> = vec![Vec::new()];
    for group in &rule.body {
        let mut next = Vec::new();
        for prefix in &bodies {
            for disjunct in group {
                let mut body = prefix.clone();
                body.extend(disjunct.iter().cloned());
                next.push(body);
            }
        }
        bodies = next;
    }
    bodies
        .into_iter()
        .map(|body| NormalRule { head: rule.head.clone(), body })
        .collect()
}

// ---------------------------------------------------------------------------
// Declarations

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypeDecl {
    pub pred: String,
    pub columns: Vec<(String, ColumnType)>,
}

/// `:-persistent(p/2)`, `:-persistent(p(a:int,b:int))`, optionally with a
/// trailing connection name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PersistAssertion {
    pub pred: String,
    pub arity: usize,
    pub columns: Option<Vec<(String, Option<ColumnType>)>>,
    pub connection: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProgramItem {
    Rule(Rule),
    Type(TypeDecl),
    Persistent(PersistAssertion),
}

// ---------------------------------------------------------------------------
// Parser

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("syntax error at line {line}, column {col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("unknown directive '{name}' at line {line}, column {col}")]
    UnknownDirective { name: String, line: usize, col: usize },
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Var(String),
    Int(i64),
    Float(f64),
    Str(String),
    Punct(&'static str),
}

#[derive(Debug, Clone)]
struct SpannedTok {
    tok: Tok,
    line: usize,
    col: usize,
}

struct Lexer<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    line: usize,
    col: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer { chars: src.chars().peekable(), line: 1, col: 1 }
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.next()?;
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn err(&self, msg: impl Into<String>) -> ParseError {
        ParseError::Syntax { line: self.line, col: self.col, msg: msg.into() }
    }

    fn tokenize(mut self) -> Result<Vec<SpannedTok>, ParseError> {
        let mut toks = Vec::new();
        loop {
            while let Some(&c) = self.chars.peek() {
                if c == '%' {
                    while let Some(c) = self.bump() {
                        if c == '\n' {
                            break;
                        }
                    }
                } else if c.is_whitespace() {
                    self.bump();
                } else {
                    break;
                }
            }
            let (line, col) = (self.line, self.col);
            let Some(&c) = self.chars.peek() else { break };
            let tok = match c {
                'a'..='z' => {
                    let s = self.take_ident();
                    Tok::Ident(s)
                }
                'A'..='Z' | '_' => {
                    let s = self.take_ident();
                    Tok::Var(s)
                }
                '0'..='9' => self.take_number()?,
                '\'' => {
                    self.bump();
                    let mut s = String::new();
                    loop {
                        match self.bump() {
                            Some('\'') => {
                                if self.chars.peek() == Some(&'\'') {
                                    self.bump();
                                    s.push('\'');
                                } else {
                                    break;
                                }
                            }
                            Some(c) => s.push(c),
                            None => return Err(self.err("unterminated quoted string")),
                        }
                    }
                    Tok::Str(s)
                }
                ':' => {
                    self.bump();
                    if self.chars.peek() == Some(&'-') {
                        self.bump();
                        Tok::Punct(":-")
                    } else {
                        Tok::Punct(":")
                    }
                }
                '=' => {
                    self.bump();
                    if self.chars.peek() == Some(&'<') {
                        self.bump();
                        Tok::Punct("=<")
                    } else {
                        Tok::Punct("=")
                    }
                }
                '\\' => {
                    self.bump();
                    if self.chars.peek() == Some(&'=') {
                        self.bump();
                        Tok::Punct("\\=")
                    } else {
                        return Err(self.err("expected '=' after '\\'"));
                    }
                }
                '>' => {
                    self.bump();
                    if self.chars.peek() == Some(&'=') {
                        self.bump();
                        Tok::Punct(">=")
                    } else {
                        Tok::Punct(">")
                    }
                }
                '<' => {
                    self.bump();
                    Tok::Punct("<")
                }
                '(' | ')' | ',' | ';' | '.' | '+' | '-' | '*' | '/' => {
                    self.bump();
                    match c {
                        '(' => Tok::Punct("("),
                        ')' => Tok::Punct(")"),
                        ',' => Tok::Punct(","),
                        ';' => Tok::Punct(";"),
                        '.' => Tok::Punct("."),
                        '+' => Tok::Punct("+"),
                        '-' => Tok::Punct("-"),
                        '*' => Tok::Punct("*"),
                        '/' => Tok::Punct("/"),
                        _ => unreachable!(),
                    }
                }
                other => return Err(self.err(format!("unexpected character '{}'", other))),
            };
            toks.push(SpannedTok { tok, line, col });
        }
        Ok(toks)
    }

    fn take_ident(&mut self) -> String {
        let mut s = String::new();
        while let Some(&c) = self.chars.peek() {
            if c.is_ascii_alphanumeric() || c == '_' {
                s.push(c);
                self.bump();
            } else {
                break;
            }
        }
        s
    }

    fn take_number(&mut self) -> Result<Tok, ParseError> {
        let mut s = String::new();
        while let Some(&c) = self.chars.peek() {
            if c.is_ascii_digit() {
                s.push(c);
                self.bump();
            } else {
                break;
            }
        }
        // A '.' is part of the number only when followed by a digit;
        // otherwise it terminates the clause.
        let mut cl = self.chars.clone();
        if cl.next() == Some('.') {
            if matches!(cl.next(), Some(d) if d.is_ascii_digit()) {
                s.push('.');
                self.bump();
                while let Some(&c) = self.chars.peek() {
                    if c.is_ascii_digit() {
                        s.push(c);
                        self.bump();
                    } else {
                        break;
                    }
                }
                return s
                    .parse::<f64>()
                    .map(Tok::Float)
                    .map_err(|_| self.err("invalid float literal"));
            }
        }
        s.parse::<i64>()
            .map(Tok::Int)
            .map_err(|_| self.err("integer literal out of range"))
    }
}

pub struct Parser {
    toks: Vec<SpannedTok>,
    pos: usize,
}

impl Parser {
    pub fn new(src: &str) -> Result<Self, ParseError> {
        Ok(Parser { toks: Lexer::new(src).tokenize()?, pos: 0 })
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.tok)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|t| t.tok.clone());
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn here(&self) -> (usize, usize) {
        self.toks
            .get(self.pos.min(self.toks.len().saturating_sub(1)))
            .map(|t| (t.line, t.col))
            .unwrap_or((1, 1))
    }

    fn err(&self, msg: impl Into<String>) -> ParseError {
        let (line, col) = self.here();
        ParseError::Syntax { line, col, msg: msg.into() }
    }

    fn expect(&mut self, p: &'static str) -> Result<(), ParseError> {
        match self.next() {
            Some(Tok::Punct(q)) if q == p => Ok(()),
            _ => {
                self.pos = self.pos.saturating_sub(1);
                Err(self.err(format!("expected '{}'", p)))
            }
        }
    }

    fn eat(&mut self, p: &'static str) -> bool {
        if self.peek() == Some(&Tok::Punct(p)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    pub fn at_end(&self) -> bool {
        self.pos >= self.toks.len()
    }

    pub fn parse_program(&mut self) -> Result<Vec<ProgramItem>, ParseError> {
        let mut items = Vec::new();
        while !self.at_end() {
            items.push(self.parse_item()?);
        }
        Ok(items)
    }

    pub fn parse_item(&mut self) -> Result<ProgramItem, ParseError> {
        if self.peek() == Some(&Tok::Punct(":-")) {
            let (line, col) = self.here();
            self.next();
            let name = match self.next() {
                Some(Tok::Ident(n)) => n,
                _ => return Err(self.err("expected directive name after ':-'")),
            };
            let item = match name.as_str() {
                "type" => ProgramItem::Type(self.parse_type_decl()?),
                "persistent" => ProgramItem::Persistent(self.parse_persist_assertion()?),
                other => {
                    return Err(ParseError::UnknownDirective {
                        name: other.to_string(),
                        line,
                        col,
                    })
                }
            };
            self.expect(".")?;
            Ok(item)
        } else {
            let rule = self.parse_rule_clause()?;
            self.expect(".")?;
            Ok(ProgramItem::Rule(rule))
        }
    }

    fn parse_type_decl(&mut self) -> Result<TypeDecl, ParseError> {
        self.expect("(")?;
        let pred = match self.next() {
            Some(Tok::Ident(n)) => n,
            _ => return Err(self.err("expected predicate name in type declaration")),
        };
        self.expect("(")?;
        let mut columns = Vec::new();
        loop {
            let arg = match self.next() {
                Some(Tok::Ident(n)) => n,
                _ => return Err(self.err("expected argument name")),
            };
            self.expect(":")?;
            let ty = self.parse_column_type()?;
            columns.push((arg, ty));
            if !self.eat(",") {
                break;
            }
        }
        self.expect(")")?;
        self.expect(")")?;
        Ok(TypeDecl { pred, columns })
    }

    fn parse_column_type(&mut self) -> Result<ColumnType, ParseError> {
        let name = match self.next() {
            Some(Tok::Ident(n)) => n,
            _ => return Err(self.err("expected a type name")),
        };
        match name.as_str() {
            "int" | "integer" => Ok(ColumnType::Int),
            "float" | "real" => Ok(ColumnType::Float),
            "string" | "varchar" => {
                if self.eat("(") {
                    let n = match self.next() {
                        Some(Tok::Int(n)) if n > 0 => n as u32,
                        _ => return Err(self.err("expected a positive string length")),
                    };
                    self.expect(")")?;
                    Ok(ColumnType::Str(n))
                } else {
                    Ok(ColumnType::Str(crate::value::DEFAULT_STRING_LEN))
                }
            }
            other => Err(self.err(format!("unknown type name '{}'", other))),
        }
    }

    fn parse_persist_assertion(&mut self) -> Result<PersistAssertion, ParseError> {
        self.expect("(")?;
        let pred = match self.next() {
            Some(Tok::Ident(n)) => n,
            _ => return Err(self.err("expected predicate name in persistence assertion")),
        };
        let (arity, columns) = if self.eat("/") {
            let n = match self.next() {
                Some(Tok::Int(n)) if n >= 0 => n as usize,
                _ => return Err(self.err("expected arity after '/'")),
            };
            (n, None)
        } else {
            self.expect("(")?;
            let mut cols = Vec::new();
            loop {
                let arg = match self.next() {
                    Some(Tok::Ident(n)) => n,
                    _ => return Err(self.err("expected argument name")),
                };
                let ty = if self.eat(":") {
                    Some(self.parse_column_type()?)
                } else {
                    None
                };
                cols.push((arg, ty));
                if !self.eat(",") {
                    break;
                }
            }
            self.expect(")")?;
            (cols.len(), Some(cols))
        };
        let connection = if self.eat(",") {
            match self.next() {
                Some(Tok::Ident(n)) => Some(n),
                Some(Tok::Str(n)) => Some(n),
                _ => return Err(self.err("expected connection name")),
            }
        } else {
            None
        };
        self.expect(")")?;
        Ok(PersistAssertion { pred, arity, columns, connection })
    }

    /// Parse a rule or fact without the terminating period.
    pub fn parse_rule_clause(&mut self) -> Result<Rule, ParseError> {
        let head = self.parse_atom()?;
        let body = if self.eat(":-") { self.parse_body()? } else { Vec::new() };
        Ok(Rule { head, body })
    }

    /// Parse a query body (used by the top level).
    pub fn parse_body(&mut self) -> Result<Vec<BodyGroup>, ParseError> {
        let expr = self.parse_disj()?;
        Ok(flatten_body(expr))
    }

    fn parse_disj(&mut self) -> Result<BodyExpr, ParseError> {
        let mut alts = vec![self.parse_conj()?];
        while self.eat(";") {
            alts.push(self.parse_conj()?);
        }
        if alts.len() == 1 {
            Ok(alts.pop().unwrap())
        } else {
            Ok(BodyExpr::Or(alts))
        }
    }

    fn parse_conj(&mut self) -> Result<BodyExpr, ParseError> {
        let mut items = vec![self.parse_body_elem()?];
        while self.eat(",") {
            items.push(self.parse_body_elem()?);
        }
        if items.len() == 1 {
            Ok(items.pop().unwrap())
        } else {
            Ok(BodyExpr::And(items))
        }
    }

    fn parse_body_elem(&mut self) -> Result<BodyExpr, ParseError> {
        if self.peek() == Some(&Tok::Punct("(")) {
            self.next();
            let inner = self.parse_disj()?;
            self.expect(")")?;
            return Ok(inner);
        }
        Ok(BodyExpr::Lit(self.parse_literal()?))
    }

    fn parse_literal(&mut self) -> Result<Literal, ParseError> {
        if let Some(Tok::Ident(id)) = self.peek() {
            if id == "not" {
                self.next();
                let parens = self.eat("(");
                let atom = self.parse_atom()?;
                if parens {
                    self.expect(")")?;
                }
                return Ok(Literal::Neg(atom));
            }
        }
        // Could be an atom, a comparison or an `is` goal; parse an
        // expression first and decide on the following token.
        let left = self.parse_expr()?;
        if let Some(Tok::Ident(id)) = self.peek() {
            if id == "is" {
                self.next();
                let var = match left {
                    Expr::Term(Term::Var(v)) => v,
                    _ => return Err(self.err("left side of 'is' must be a variable")),
                };
                let rhs = self.parse_expr()?;
                return Ok(Literal::Is(var, rhs));
            }
        }
        for op in [CmpOp::Eq, CmpOp::Ne, CmpOp::Lt, CmpOp::Le, CmpOp::Gt, CmpOp::Ge] {
            if self.peek() == Some(&Tok::Punct(op.symbol())) {
                self.next();
                let right = self.parse_expr()?;
                return Ok(Literal::Cmp(op, left, right));
            }
        }
        // Not a comparison: the expression must be an atom.
        match left {
            Expr::Func(name, args) => {
                let mut terms = Vec::new();
                for a in args {
                    match a {
                        Expr::Term(t) => terms.push(t),
                        _ => {
                            return Err(self.err(
                                "atom arguments must be variables or constants",
                            ))
                        }
                    }
                }
                Ok(Literal::Pos(Atom { pred: name, args: terms }))
            }
            Expr::Term(Term::Const(Value::Str(s))) => {
                // Bare identifier: a propositional (0-ary) atom.
                Ok(Literal::Pos(Atom { pred: s, args: Vec::new() }))
            }
            _ => Err(self.err("expected an atom, comparison or 'is' goal")),
        }
    }

    pub fn parse_atom(&mut self) -> Result<Atom, ParseError> {
        let pred = match self.next() {
            Some(Tok::Ident(n)) => n,
            Some(Tok::Str(n)) => n,
            _ => {
                self.pos = self.pos.saturating_sub(1);
                return Err(self.err("expected predicate name"));
            }
        };
        let mut args = Vec::new();
        if self.eat("(") {
            loop {
                args.push(self.parse_term_arg()?);
                if !self.eat(",") {
                    break;
                }
            }
            self.expect(")")?;
        }
        Ok(Atom { pred, args })
    }

    fn parse_term_arg(&mut self) -> Result<Term, ParseError> {
        match self.parse_expr()? {
            Expr::Term(t) => Ok(t),
            _ => Err(self.err("atom arguments must be variables or constants")),
        }
    }

    fn parse_expr(&mut self) -> Result<Expr, ParseError> {
        let mut left = self.parse_expr_term()?;
        loop {
            let op = if self.eat("+") {
                ArithOp::Add
            } else if self.eat("-") {
                ArithOp::Sub
            } else {
                break;
            };
            let right = self.parse_expr_term()?;
            left = Expr::Arith(op, Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn parse_expr_term(&mut self) -> Result<Expr, ParseError> {
        let mut left = self.parse_expr_factor()?;
        loop {
            let op = if self.eat("*") {
                ArithOp::Mul
            } else if self.eat("/") {
                ArithOp::Div
            } else {
                break;
            };
            let right = self.parse_expr_factor()?;
            left = Expr::Arith(op, Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn parse_expr_factor(&mut self) -> Result<Expr, ParseError> {
        match self.next() {
            Some(Tok::Punct("(")) => {
                let e = self.parse_expr()?;
                self.expect(")")?;
                Ok(e)
            }
            Some(Tok::Punct("-")) => {
                let e = self.parse_expr_factor()?;
                match e {
                    Expr::Term(Term::Const(Value::Int(i))) => {
                        Ok(Expr::Term(Term::Const(Value::Int(-i))))
                    }
                    Expr::Term(Term::Const(Value::Float(f))) => {
                        Ok(Expr::Term(Term::Const(Value::Float(-f))))
                    }
                    other => Ok(Expr::Arith(
                        ArithOp::Sub,
                        Box::new(Expr::Term(Term::Const(Value::Int(0)))),
                        Box::new(other),
                    )),
                }
            }
            Some(Tok::Int(i)) => Ok(Expr::Term(Term::Const(Value::Int(i)))),
            Some(Tok::Float(f)) => Ok(Expr::Term(Term::Const(Value::Float(f)))),
            Some(Tok::Str(s)) => Ok(Expr::Term(Term::Const(Value::Str(s)))),
            Some(Tok::Var(v)) => Ok(Expr::Term(Term::Var(v))),
            Some(Tok::Ident(name)) => {
                if self.peek() == Some(&Tok::Punct("(")) {
                    self.next();
                    let mut args = Vec::new();
                    loop {
                        args.push(self.parse_expr()?);
                        if !self.eat(",") {
                            break;
                        }
                    }
                    self.expect(")")?;
                    Ok(Expr::Func(name, args))
                } else {
                    Ok(Expr::Term(Term::Const(Value::Str(name))))
                }
            }
            _ => {
                self.pos = self.pos.saturating_sub(1);
                Err(self.err("expected a term"))
            }
        }
    }
}

enum BodyExpr {
    Lit(Literal),
    And(Vec<BodyExpr>),
    Or(Vec<BodyExpr>),
}

/// Convert the parsed and/or tree into conjoined disjunction groups.
fn flatten_body(expr: BodyExpr) -> Vec<BodyGroup> {
    match expr {
        BodyExpr::And(items) => items.into_iter().map(|i| dnf(i)).collect(),
        other => vec![dnf(other)],
    }
}

/// Disjunctive normal form of one body node.
fn dnf(expr: BodyExpr) -> BodyGroup {
    match expr {
        BodyExpr::Lit(l) => vec![vec![l]],
        BodyExpr::Or(alts) => alts.into_iter().flat_map(dnf).collect(),
        BodyExpr::And(items) => {
            let mut acc: Vec<Vec<Literal>> = vec![Vec::new()];
            for item in items {
                let choices = dnf(item);
                let mut next = Vec::new();
                for prefix in &acc {
                    for choice in &choices {
                        let mut c = prefix.clone();
                        c.extend(choice.iter().cloned());
                        next.push(c);
                    }
                }
                acc = next;
            }
            acc
        }
    }
}

/// Parse a full source text into program items.
pub fn parse_program(text: &str) -> Result<Vec<ProgramItem>, ParseError> {
    Parser::new(text)?.parse_program()
}

/// Parse a single rule or fact, with or without the final period.
pub fn parse_rule(text: &str) -> Result<Rule, ParseError> {
    let mut p = Parser::new(text)?;
    let rule = p.parse_rule_clause()?;
    let _ = p.eat(".");
    if !p.at_end() {
        return Err(p.err("unexpected input after rule"));
    }
    Ok(rule)
}

/// Parse a top-level query body.
pub fn parse_query(text: &str) -> Result<Vec<BodyGroup>, ParseError> {
    let mut p = Parser::new(text)?;
    let body = p.parse_body()?;
    let _ = p.eat(".");
    if !p.at_end() {
        return Err(p.err("unexpected input after query"));
    }
    Ok(body)
}

// ---------------------------------------------------------------------------
// Rendering

/// True when a string constant can be written without quotes.
fn is_plain_atom_text(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_lowercase() => {}
        _ => return false,
    }
    if chars.clone().any(|c| !(c.is_ascii_alphanumeric() || c == '_')) {
        return false;
    }
    // Must not collide with word tokens the parser treats specially.
    !matches!(s, "not" | "is")
}

/// Datalog source rendering of a constant: strings are quoted unless they
/// look like a plain identifier; embedded quotes are doubled.
pub fn render_const(v: &Value) -> String {
    match v {
        Value::Str(s) => {
            if is_plain_atom_text(s) {
                s.clone()
            } else {
                format!("'{}'", s.replace('\'', "''"))
            }
        }
        other => other.to_string(),
    }
}

fn expr_prec(e: &Expr) -> u8 {
    match e {
        Expr::Arith(ArithOp::Add | ArithOp::Sub, _, _) => 1,
        Expr::Arith(ArithOp::Mul | ArithOp::Div, _, _) => 2,
        _ => 3,
    }
}

fn render_expr(e: &Expr, rename: Option<&std::collections::HashMap<String, String>>) -> String {
    match e {
        Expr::Term(Term::Var(v)) => match rename {
            Some(map) => map.get(v).cloned().unwrap_or_else(|| v.clone()),
            None => v.clone(),
        },
        Expr::Term(Term::Const(c)) => render_const(c),
        Expr::Arith(op, l, r) => {
            let my = expr_prec(e);
            let ls = render_expr(l, rename);
            let rs = render_expr(r, rename);
            let ls = if expr_prec(l) < my { format!("({})", ls) } else { ls };
            // Subtraction and division are left-associative.
            let rs = if expr_prec(r) < my
                || (expr_prec(r) == my && matches!(op, ArithOp::Sub | ArithOp::Div))
            {
                format!("({})", rs)
            } else {
                rs
            };
            format!("{}{}{}", ls, op.symbol(), rs)
        }
        Expr::Func(name, args) => {
            let args: Vec<String> = args.iter().map(|a| render_expr(a, rename)).collect();
            format!("{}({})", name, args.join(","))
        }
    }
}

fn render_term(t: &Term, rename: Option<&std::collections::HashMap<String, String>>) -> String {
    match t {
        Term::Var(v) => match rename {
            Some(map) => map.get(v).cloned().unwrap_or_else(|| v.clone()),
            None => v.clone(),
        },
        Term::Const(c) => render_const(c),
    }
}

fn render_atom(a: &Atom, rename: Option<&std::collections::HashMap<String, String>>) -> String {
    if a.args.is_empty() {
        a.pred.clone()
    } else {
        let args: Vec<String> = a.args.iter().map(|t| render_term(t, rename)).collect();
        format!("{}({})", a.pred, args.join(","))
    }
}

fn render_literal(
    l: &Literal,
    rename: Option<&std::collections::HashMap<String, String>>,
    compact: bool,
) -> String {
    match l {
        Literal::Pos(a) => render_atom(a, rename),
        Literal::Neg(a) => {
            if compact {
                format!("not({})", render_atom(a, rename))
            } else {
                format!("not {}", render_atom(a, rename))
            }
        }
        Literal::Cmp(op, a, b) => {
            format!("{}{}{}", render_expr(a, rename), op.symbol(), render_expr(b, rename))
        }
        Literal::Is(v, e) => {
            let vs = match rename {
                Some(map) => map.get(v).cloned().unwrap_or_else(|| v.clone()),
                None => v.clone(),
            };
            format!("{} is {}", vs, render_expr(e, rename))
        }
    }
}

/// Canonical variable name for position `i`: A..Z, then AA, AB, ...
fn canonical_var_name(mut i: usize) -> String {
    let mut out = Vec::new();
    loop {
        out.push(b'A' + (i % 26) as u8);
        if i < 26 {
            break;
        }
        i = i / 26 - 1;
    }
    out.reverse();
    String::from_utf8(out).unwrap()
}

fn first_occurrence_vars(rule: &NormalRule) -> Vec<String> {
    let mut seen = Vec::new();
    let mut push = |v: &String| {
        if !seen.contains(v) {
            seen.push(v.clone());
        }
    };
    for t in &rule.head.args {
        if let Term::Var(v) = t {
            push(v);
        }
    }
    for lit in &rule.body {
        match lit {
            Literal::Pos(a) | Literal::Neg(a) => {
                for t in &a.args {
                    if let Term::Var(v) = t {
                        push(v);
                    }
                }
            }
            Literal::Cmp(_, l, r) => {
                let mut vs = Vec::new();
                l.vars(&mut vs);
                r.vars(&mut vs);
                for v in &vs {
                    push(v);
                }
            }
            Literal::Is(v, e) => {
                push(v);
                let mut vs = Vec::new();
                e.vars(&mut vs);
                for v in &vs {
                    push(v);
                }
            }
        }
    }
    seen
}

/// The single-line canonical rendering of a normalized rule: variables
/// renamed A,B,C,... in first-occurrence order, no optional whitespace,
/// terminal period. This is the wire format of metadata tables.
pub fn canonical_text(rule: &NormalRule) -> String {
    let vars = first_occurrence_vars(rule);
    let rename: std::collections::HashMap<String, String> = vars
        .iter()
        .enumerate()
        .map(|(i, v)| (v.clone(), canonical_var_name(i)))
        .collect();
    let head = render_atom(&rule.head, Some(&rename));
    if rule.body.is_empty() {
        format!("{}.", head)
    } else {
        let body: Vec<String> = rule
            .body
            .iter()
            .map(|l| render_literal(l, Some(&rename), true))
            .collect();
        format!("{}:-{}.", head, body.join(","))
    }
}

/// Alpha-equivalence on normalized rules.
pub fn alpha_eq(a: &NormalRule, b: &NormalRule) -> bool {
    canonical_text(a) == canonical_text(b)
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", render_atom(self, None))
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", render_literal(self, None, false))
    }
}

impl fmt::Display for NormalRule {
    /// Display form used in warnings and listings, with original variable
    /// names: `ancestor(X,Y) :- parent(X,Z), ancestor(Z,Y).`
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.body.is_empty() {
            write!(f, "{}.", self.head)
        } else {
            let body: Vec<String> = self.body.iter().map(|l| l.to_string()).collect();
            write!(f, "{} :- {}.", self.head, body.join(", "))
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.body.is_empty() {
            return write!(f, "{}.", self.head);
        }
        let groups: Vec<String> = self
            .body
            .iter()
            .map(|g| {
                let alts: Vec<String> = g
                    .iter()
                    .map(|conj| {
                        conj.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(", ")
                    })
                    .collect();
                if alts.len() == 1 {
                    alts.into_iter().next().unwrap()
                } else {
                    format!("({})", alts.join(" ; "))
                }
            })
            .collect();
        write!(f, "{} :- {}.", self.head, groups.join(", "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disjunction_normalizes_to_one_rule_per_branch() {
        let rule = parse_rule("parent(X,Y) :- father(X,Y) ; mother(X,Y).").unwrap();
        let normal = normalize(&rule);
        assert_eq!(normal.len(), 2);
        assert_eq!(canonical_text(&normal[0]), "parent(A,B):-father(A,B).");
        assert_eq!(canonical_text(&normal[1]), "parent(A,B):-mother(A,B).");
    }

    #[test]
    fn canonical_text_renames_and_compacts() {
        let rule = parse_rule("ancestor(Foo, Bar) :- parent(Foo, Mid), ancestor(Mid, Bar).").unwrap();
        let normal = normalize(&rule);
        assert_eq!(
            canonical_text(&normal[0]),
            "ancestor(A,B):-parent(A,C),ancestor(C,B)."
        );
    }

    #[test]
    fn canonical_text_round_trips_through_the_parser() {
        for src in [
            "p(1,2).",
            "p(X):-q(X),not(r(X)).",
            "p(X,Y):-q(X),Y is X*2+1.",
            "p(X):-q(X,Z),Z>=3,Z\\=5.",
            "p('hello world').",
            "p(X):-q(X),X=<2.5.",
        ] {
            let r1 = normalize(&parse_rule(src).unwrap()).remove(0);
            let text = canonical_text(&r1);
            let r2 = normalize(&parse_rule(&text).unwrap()).remove(0);
            assert_eq!(canonical_text(&r2), text, "for {}", src);
        }
    }

    #[test]
    fn alpha_equivalence_ignores_variable_names() {
        let a = normalize(&parse_rule("p(X,Y):-q(Y,X).").unwrap()).remove(0);
        let b = normalize(&parse_rule("p(U,V):-q(V,U).").unwrap()).remove(0);
        let c = normalize(&parse_rule("p(X,Y):-q(X,Y).").unwrap()).remove(0);
        assert!(alpha_eq(&a, &b));
        assert!(!alpha_eq(&a, &c));
    }

    #[test]
    fn clause_final_dot_is_not_part_of_a_number() {
        let items = parse_program("p(3).\nq(2.5).").unwrap();
        assert_eq!(items.len(), 2);
        match &items[1] {
            ProgramItem::Rule(r) => {
                assert_eq!(r.head.args, vec![Term::Const(Value::Float(2.5))]);
            }
            other => panic!("unexpected item {:?}", other),
        }
    }

    #[test]
    fn negation_accepts_both_surface_forms() {
        let a = normalize(&parse_rule("p(X):-q(X),not r(X).").unwrap()).remove(0);
        let b = normalize(&parse_rule("p(X):-q(X),not(r(X)).").unwrap()).remove(0);
        assert!(alpha_eq(&a, &b));
    }

    #[test]
    fn directives_parse() {
        let items = parse_program(
            ":-type(mother(mother:string,child:string)).\n:-persistent(path(a:int,b:int),mysql).\n:-persistent(p/3).",
        )
        .unwrap();
        assert!(matches!(&items[0], ProgramItem::Type(d) if d.pred == "mother"));
        match &items[1] {
            ProgramItem::Persistent(a) => {
                assert_eq!(a.pred, "path");
                assert_eq!(a.arity, 2);
                assert_eq!(a.connection.as_deref(), Some("mysql"));
            }
            other => panic!("unexpected item {:?}", other),
        }
        match &items[2] {
            ProgramItem::Persistent(a) => {
                assert_eq!((a.pred.as_str(), a.arity), ("p", 3));
                assert!(a.columns.is_none() && a.connection.is_none());
            }
            other => panic!("unexpected item {:?}", other),
        }
    }

    #[test]
    fn queries_parse_with_and_without_final_dot() {
        assert!(parse_query("path(X,Y)").is_ok());
        assert!(parse_query("path(X,Y).").is_ok());
        assert!(parse_query("p(X), q(X,Y), Y > 2").is_ok());
        assert!(parse_query("p(X) q(X)").is_err());
    }

    #[test]
    fn quoted_constants_keep_their_text() {
        let rule = parse_rule("p('Tom''s cat').").unwrap();
        assert_eq!(rule.head.args, vec![Term::Const(Value::Str("Tom's cat".to_string()))]);
        let normal = normalize(&rule).remove(0);
        assert_eq!(canonical_text(&normal), "p('Tom''s cat').");
    }

    #[test]
    fn syntax_errors_carry_positions() {
        match parse_rule("p(X) :- q(") {
            Err(ParseError::Syntax { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected syntax error, got {:?}", other),
        }
        assert!(matches!(
            parse_program(":-frobnicate(p/2)."),
            Err(ParseError::UnknownDirective { .. })
        ));
    }
}
