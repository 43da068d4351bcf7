//! Parser for the SQL subset the renderer emits, used by the embedded
//! store. Identifier delimiters follow the store's dialect.

use super::BackendError;
use crate::ast::{ArithOp, CmpOp};
use crate::sql::{
    FromlessPolicy, Projection, SqlCond, SqlDialect, SqlExpr, SqlQuery, SqlStatement,
};
use crate::value::{ColumnType, Value};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),   // bare identifier or keyword
    Quoted(String), // dialect-delimited identifier
    Int(i64),
    Float(f64),
    Str(String),
    Punct(&'static str),
}

fn tokenize(sql: &str, d: &SqlDialect) -> Result<Vec<Tok>, String> {
    let mut toks = Vec::new();
    let mut chars = sql.chars().peekable();
    while let Some(&c) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
        } else if c == d.delim_open {
            chars.next();
            let mut s = String::new();
            loop {
                match chars.next() {
                    Some(x) if x == d.delim_close => break,
                    Some(x) => s.push(x),
                    None => return Err("unterminated identifier delimiter".to_string()),
                }
            }
            toks.push(Tok::Quoted(s));
        } else if c == '\'' {
            chars.next();
            let mut s = String::new();
            loop {
                match chars.next() {
                    Some('\'') => {
                        if chars.peek() == Some(&'\'') {
                            chars.next();
                            s.push('\'');
                        } else {
                            break;
                        }
                    }
                    Some(x) => s.push(x),
                    None => return Err("unterminated string literal".to_string()),
                }
            }
            toks.push(Tok::Str(s));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let mut s = String::new();
            while let Some(&x) = chars.peek() {
                if x.is_ascii_alphanumeric() || x == '_' {
                    s.push(x);
                    chars.next();
                } else {
                    break;
                }
            }
            toks.push(Tok::Word(s));
        } else if c.is_ascii_digit() {
            let mut s = String::new();
            while let Some(&x) = chars.peek() {
                if x.is_ascii_digit() {
                    s.push(x);
                    chars.next();
                } else {
                    break;
                }
            }
            let mut is_float = false;
            if chars.peek() == Some(&'.') {
                let mut cl = chars.clone();
                cl.next();
                if matches!(cl.peek(), Some(d) if d.is_ascii_digit()) {
                    is_float = true;
                    s.push('.');
                    chars.next();
                    while let Some(&x) = chars.peek() {
                        if x.is_ascii_digit() {
                            s.push(x);
                            chars.next();
                        } else {
                            break;
                        }
                    }
                }
            }
            if is_float {
                toks.push(Tok::Float(s.parse().map_err(|_| "bad float".to_string())?));
            } else {
                toks.push(Tok::Int(s.parse().map_err(|_| "bad integer".to_string())?));
            }
        } else {
            chars.next();
            let p = match c {
                '(' => "(",
                ')' => ")",
                ',' => ",",
                '.' => ".",
                ';' => ";",
                '*' => "*",
                '+' => "+",
                '-' => "-",
                '/' => "/",
                '=' => "=",
                '<' => {
                    if chars.peek() == Some(&'>') {
                        chars.next();
                        "<>"
                    } else if chars.peek() == Some(&'=') {
                        chars.next();
                        "<="
                    } else {
                        "<"
                    }
                }
                '>' => {
                    if chars.peek() == Some(&'=') {
                        chars.next();
                        ">="
                    } else {
                        ">"
                    }
                }
                other => return Err(format!("unexpected character '{}'", other)),
            };
            toks.push(Tok::Punct(p));
        }
    }
    Ok(toks)
}

pub struct SqlParser {
    toks: Vec<Tok>,
    pos: usize,
    sql: String,
}

impl SqlParser {
    pub fn new(sql: &str, dialect: &SqlDialect) -> Result<Self, BackendError> {
        let toks = tokenize(sql, dialect).map_err(|msg| BackendError::SqlSyntax {
            msg,
            sql: sql.to_string(),
        })?;
        Ok(SqlParser { toks, pos: 0, sql: sql.to_string() })
    }

    fn err(&self, msg: impl Into<String>) -> BackendError {
        BackendError::SqlSyntax { msg: msg.into(), sql: self.sql.clone() }
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn eat_punct(&mut self, p: &str) -> bool {
        if matches!(self.peek(), Some(Tok::Punct(q)) if *q == p) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_punct(&mut self, p: &str) -> Result<(), BackendError> {
        if self.eat_punct(p) {
            Ok(())
        } else {
            Err(self.err(format!("expected '{}'", p)))
        }
    }

    fn peek_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Tok::Word(w)) if w.eq_ignore_ascii_case(kw))
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.peek_kw(kw) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_kw(&mut self, kw: &str) -> Result<(), BackendError> {
        if self.eat_kw(kw) {
            Ok(())
        } else {
            Err(self.err(format!("expected {}", kw)))
        }
    }

    fn ident(&mut self) -> Result<String, BackendError> {
        match self.next() {
            Some(Tok::Word(w)) => Ok(w),
            Some(Tok::Quoted(q)) => Ok(q),
            _ => Err(self.err("expected an identifier")),
        }
    }

    fn literal(&mut self) -> Result<Value, BackendError> {
        match self.next() {
            Some(Tok::Int(i)) => Ok(Value::Int(i)),
            Some(Tok::Float(f)) => Ok(Value::Float(f)),
            Some(Tok::Str(s)) => Ok(Value::Str(s)),
            Some(Tok::Punct("-")) => match self.next() {
                Some(Tok::Int(i)) => Ok(Value::Int(-i)),
                Some(Tok::Float(f)) => Ok(Value::Float(-f)),
                _ => Err(self.err("expected a number after '-'")),
            },
            _ => Err(self.err("expected a literal value")),
        }
    }

    pub fn parse_statement(&mut self, dialect: &SqlDialect) -> Result<SqlStatement, BackendError> {
        let st = if self.eat_kw("CREATE") {
            if self.eat_kw("TABLE") {
                self.parse_create_table(dialect)?
            } else if self.eat_kw("VIEW") {
                self.parse_create_view(dialect)?
            } else {
                return Err(self.err("expected TABLE or VIEW after CREATE"));
            }
        } else if self.eat_kw("DROP") {
            if self.eat_kw("TABLE") {
                SqlStatement::DropTable(self.ident()?)
            } else if self.eat_kw("VIEW") {
                SqlStatement::DropView(self.ident()?)
            } else {
                return Err(self.err("expected TABLE or VIEW after DROP"));
            }
        } else if self.eat_kw("INSERT") {
            self.expect_kw("INTO")?;
            let table = self.ident()?;
            self.expect_kw("VALUES")?;
            self.expect_punct("(")?;
            let mut values = Vec::new();
            loop {
                values.push(self.literal()?);
                if !self.eat_punct(",") {
                    break;
                }
            }
            self.expect_punct(")")?;
            SqlStatement::Insert { table, values }
        } else if self.eat_kw("DELETE") {
            self.expect_kw("FROM")?;
            let table = self.ident()?;
            let cond = if self.eat_kw("WHERE") { self.parse_cond(dialect)? } else { SqlCond::True };
            SqlStatement::Delete { table, cond }
        } else {
            SqlStatement::Query(self.parse_query(dialect)?)
        };
        let _ = self.eat_punct(";");
        if self.pos < self.toks.len() {
            return Err(self.err("unexpected trailing input"));
        }
        Ok(st)
    }

    fn parse_create_table(&mut self, dialect: &SqlDialect) -> Result<SqlStatement, BackendError> {
        let name = self.ident()?;
        self.expect_punct("(")?;
        let mut columns = Vec::new();
        loop {
            let col = self.ident()?;
            let tyname = self.ident()?;
            let arg = if self.eat_punct("(") {
                let n = match self.next() {
                    Some(Tok::Int(n)) if n > 0 => n as u32,
                    _ => return Err(self.err("expected a length")),
                };
                self.expect_punct(")")?;
                Some(n)
            } else {
                None
            };
            let ty: ColumnType = dialect
                .parse_type_name(&tyname, arg)
                .ok_or_else(|| self.err(format!("unknown SQL type '{}'", tyname)))?;
            columns.push((col, ty));
            if !self.eat_punct(",") {
                break;
            }
        }
        self.expect_punct(")")?;
        Ok(SqlStatement::CreateTable { name, columns })
    }

    fn parse_create_view(&mut self, dialect: &SqlDialect) -> Result<SqlStatement, BackendError> {
        let name = self.ident()?;
        self.expect_punct("(")?;
        let mut columns = Vec::new();
        loop {
            columns.push(self.ident()?);
            if !self.eat_punct(",") {
                break;
            }
        }
        self.expect_punct(")")?;
        self.expect_kw("AS")?;
        let query = self.parse_query(dialect)?;
        Ok(SqlStatement::CreateView { name, columns, query })
    }

    pub fn parse_query(&mut self, dialect: &SqlDialect) -> Result<SqlQuery, BackendError> {
        let mut branches = vec![self.parse_query_branch(dialect)?];
        while self.eat_kw("UNION") {
            self.expect_kw("ALL")?;
            branches.push(self.parse_query_branch(dialect)?);
        }
        if branches.len() == 1 {
            Ok(branches.pop().unwrap())
        } else {
            Ok(SqlQuery::UnionAll(branches))
        }
    }

    fn parse_query_branch(&mut self, dialect: &SqlDialect) -> Result<SqlQuery, BackendError> {
        if self.eat_punct("(") {
            let q = self.parse_query(dialect)?;
            self.expect_punct(")")?;
            return Ok(q);
        }
        self.parse_select(dialect)
    }

    fn parse_select(&mut self, dialect: &SqlDialect) -> Result<SqlQuery, BackendError> {
        self.expect_kw("SELECT")?;
        let proj = if self.eat_punct("*") {
            Projection::Star
        } else {
            let mut cols = Vec::new();
            loop {
                cols.push(self.parse_expr(dialect)?);
                if !self.eat_punct(",") {
                    break;
                }
            }
            Projection::Cols(cols)
        };
        let mut from: Vec<(String, Option<String>)> = Vec::new();
        if self.eat_kw("FROM") {
            loop {
                let rel = self.ident()?;
                let alias = if self.eat_kw("AS") { Some(self.ident()?) } else { None };
                from.push((rel, alias));
                if !self.eat_punct(",") {
                    break;
                }
            }
        }
        let cond =
            if self.eat_kw("WHERE") { self.parse_cond(dialect)? } else { SqlCond::True };
        // A select whose only FROM entry is the dialect's dual table is a
        // from-less select in disguise.
        let is_dual = match (&dialect.fromless, from.as_slice()) {
            (FromlessPolicy::RequiresDual(dual), [(rel, None)]) => rel == dual,
            _ => false,
        };
        if from.is_empty() || is_dual {
            let proj = match proj {
                Projection::Cols(cols) => cols,
                Projection::Star => {
                    return Err(self.err("SELECT * requires a FROM clause"));
                }
            };
            return Ok(SqlQuery::Fromless { proj, cond });
        }
        Ok(SqlQuery::Select { proj, from, cond })
    }

    fn parse_cond(&mut self, dialect: &SqlDialect) -> Result<SqlCond, BackendError> {
        let mut conds = vec![self.parse_cond_atom(dialect)?];
        while self.eat_kw("AND") {
            conds.push(self.parse_cond_atom(dialect)?);
        }
        Ok(SqlCond::conjoin(conds))
    }

    fn parse_cond_atom(&mut self, dialect: &SqlDialect) -> Result<SqlCond, BackendError> {
        if self.eat_kw("TRUE") {
            return Ok(SqlCond::True);
        }
        if self.eat_kw("NOT") {
            self.expect_kw("EXISTS")?;
            self.expect_punct("(")?;
            let q = self.parse_query(dialect)?;
            self.expect_punct(")")?;
            return Ok(SqlCond::NotExists(Box::new(q)));
        }
        let left = self.parse_expr(dialect)?;
        let op = if self.eat_punct("=") {
            CmpOp::Eq
        } else if self.eat_punct("<>") {
            CmpOp::Ne
        } else if self.eat_punct("<=") {
            CmpOp::Le
        } else if self.eat_punct("<") {
            CmpOp::Lt
        } else if self.eat_punct(">=") {
            CmpOp::Ge
        } else if self.eat_punct(">") {
            CmpOp::Gt
        } else {
            return Err(self.err("expected a comparison operator"));
        };
        let right = self.parse_expr(dialect)?;
        Ok(SqlCond::Cmp(op, left, right))
    }

    fn parse_expr(&mut self, dialect: &SqlDialect) -> Result<SqlExpr, BackendError> {
        let mut left = self.parse_expr_term(dialect)?;
        loop {
            let op = if self.eat_punct("+") {
                ArithOp::Add
            } else if self.eat_punct("-") {
                ArithOp::Sub
            } else {
                break;
            };
            let right = self.parse_expr_term(dialect)?;
            left = SqlExpr::Arith(op, Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn parse_expr_term(&mut self, dialect: &SqlDialect) -> Result<SqlExpr, BackendError> {
        let mut left = self.parse_expr_factor(dialect)?;
        loop {
            let op = if self.eat_punct("*") {
                ArithOp::Mul
            } else if self.eat_punct("/") {
                ArithOp::Div
            } else {
                break;
            };
            let right = self.parse_expr_factor(dialect)?;
            left = SqlExpr::Arith(op, Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn parse_expr_factor(&mut self, dialect: &SqlDialect) -> Result<SqlExpr, BackendError> {
        match self.next() {
            Some(Tok::Punct("(")) => {
                let e = self.parse_expr(dialect)?;
                self.expect_punct(")")?;
                Ok(e)
            }
            Some(Tok::Punct("-")) => {
                let e = self.parse_expr_factor(dialect)?;
                match e {
                    SqlExpr::Const(Value::Int(i)) => Ok(SqlExpr::Const(Value::Int(-i))),
                    SqlExpr::Const(Value::Float(f)) => Ok(SqlExpr::Const(Value::Float(-f))),
                    other => Ok(SqlExpr::Arith(
                        ArithOp::Sub,
                        Box::new(SqlExpr::Const(Value::Int(0))),
                        Box::new(other),
                    )),
                }
            }
            Some(Tok::Int(i)) => Ok(SqlExpr::Const(Value::Int(i))),
            Some(Tok::Float(f)) => Ok(SqlExpr::Const(Value::Float(f))),
            Some(Tok::Str(s)) => Ok(SqlExpr::Const(Value::Str(s))),
            Some(Tok::Quoted(q)) => {
                if self.eat_punct(".") {
                    let col = self.ident()?;
                    Ok(SqlExpr::Col { table: Some(q), column: col })
                } else {
                    Ok(SqlExpr::Col { table: None, column: q })
                }
            }
            Some(Tok::Word(w)) => {
                if self.eat_punct("(") {
                    // function call; normalize the name to lowercase
                    let mut args = Vec::new();
                    if !self.eat_punct(")") {
                        loop {
                            args.push(self.parse_expr(dialect)?);
                            if !self.eat_punct(",") {
                                break;
                            }
                        }
                        self.expect_punct(")")?;
                    }
                    Ok(SqlExpr::Func(w.to_ascii_lowercase(), args))
                } else if self.eat_punct(".") {
                    let col = self.ident()?;
                    Ok(SqlExpr::Col { table: Some(w), column: col })
                } else {
                    Ok(SqlExpr::Col { table: None, column: w })
                }
            }
            _ => Err(self.err("expected an expression")),
        }
    }
}

/// Parse one statement of the rendered SQL subset.
pub fn parse_statement(sql: &str, dialect: &SqlDialect) -> Result<SqlStatement, BackendError> {
    SqlParser::new(sql, dialect)?.parse_statement(dialect)
}
