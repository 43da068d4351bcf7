//! Backend-neutral SQL AST and per-dialect rendering.
//!
//! All SQL text that reaches a backend is produced by [`render_query`] or
//! [`render_statement`]; nothing else in the crate builds SQL strings.

pub mod translate;

use crate::ast::{ArithOp, CmpOp};
use crate::value::{ColumnType, Value};
use std::collections::BTreeMap;
use std::fmt::Write;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq)]
pub enum SqlExpr {
    /// Column reference, optionally qualified by a relation alias.
    Col { table: Option<String>, column: String },
    Const(Value),
    Arith(ArithOp, Box<SqlExpr>, Box<SqlExpr>),
    Func(String, Vec<SqlExpr>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum SqlCond {
    True,
    Cmp(CmpOp, SqlExpr, SqlExpr),
    And(Vec<SqlCond>),
    NotExists(Box<SqlQuery>),
}

impl SqlCond {
    pub fn conjoin(conds: Vec<SqlCond>) -> SqlCond {
        let conds: Vec<SqlCond> =
            conds.into_iter().filter(|c| !matches!(c, SqlCond::True)).collect();
        match conds.len() {
            0 => SqlCond::True,
            1 => conds.into_iter().next().unwrap(),
            _ => SqlCond::And(conds),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Projection {
    Star,
    Cols(Vec<SqlExpr>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum SqlQuery {
    Select {
        proj: Projection,
        /// (relation, optional alias) pairs, in join order.
        from: Vec<(String, Option<String>)>,
        cond: SqlCond,
    },
    /// A select with no FROM clause; dialects without from-less selects
    /// render it against their one-row dual table.
    Fromless { proj: Vec<SqlExpr>, cond: SqlCond },
    UnionAll(Vec<SqlQuery>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum SqlStatement {
    CreateTable { name: String, columns: Vec<(String, ColumnType)> },
    CreateView { name: String, columns: Vec<String>, query: SqlQuery },
    DropTable(String),
    DropView(String),
    Insert { table: String, values: Vec<Value> },
    Delete { table: String, cond: SqlCond },
    Query(SqlQuery),
}

// ---------------------------------------------------------------------------
// Dialects

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FromlessPolicy {
    Allowed,
    RequiresDual(String),
}

/// Per-backend SQL rendering profile.
#[derive(Debug, Clone)]
pub struct SqlDialect {
    pub name: String,
    pub delim_open: char,
    pub delim_close: char,
    pub fromless: FromlessPolicy,
    /// Datalog function name -> SQL function name; absence is a
    /// render-time error.
    pub functions: BTreeMap<String, String>,
}

impl SqlDialect {
    /// MySQL-flavored reference dialect: backquoted identifiers,
    /// from-less selects allowed, sin/cos/abs supported.
    pub fn backquote() -> Self {
        SqlDialect {
            name: "backquote".to_string(),
            delim_open: '`',
            delim_close: '`',
            fromless: FromlessPolicy::Allowed,
            functions: [("sin", "SIN"), ("cos", "COS"), ("abs", "ABS")]
                .into_iter()
                .map(|(a, b)| (a.to_string(), b.to_string()))
                .collect(),
        }
    }

    /// Access/Oracle-flavored quirk dialect: bracket identifiers and a
    /// mandatory dual table for from-less selects; no trig functions.
    pub fn bracket() -> Self {
        SqlDialect {
            name: "bracket".to_string(),
            delim_open: '[',
            delim_close: ']',
            fromless: FromlessPolicy::RequiresDual("dual".to_string()),
            functions: [("abs", "ABS")]
                .into_iter()
                .map(|(a, b)| (a.to_string(), b.to_string()))
                .collect(),
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "backquote" => Some(Self::backquote()),
            "bracket" => Some(Self::bracket()),
            _ => None,
        }
    }

    pub fn ident(&self, name: &str) -> String {
        format!("{}{}{}", self.delim_open, name, self.delim_close)
    }

    pub fn type_name(&self, ty: &ColumnType) -> String {
        match ty {
            ColumnType::Int => "INT".to_string(),
            ColumnType::Float => "FLOAT".to_string(),
            ColumnType::Str(n) => format!("VARCHAR({})", n),
        }
    }

    pub fn parse_type_name(&self, name: &str, arg: Option<u32>) -> Option<ColumnType> {
        match name.to_ascii_uppercase().as_str() {
            "INT" | "INTEGER" | "BIGINT" => Some(ColumnType::Int),
            "FLOAT" | "REAL" | "DOUBLE" => Some(ColumnType::Float),
            "VARCHAR" | "CHAR" | "TEXT" => {
                Some(ColumnType::Str(arg.unwrap_or(crate::value::DEFAULT_STRING_LEN)))
            }
            _ => None,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RenderError {
    #[error("function '{func}' is not supported by dialect '{dialect}'")]
    UnsupportedFunction { func: String, dialect: String },
}

// ---------------------------------------------------------------------------
// Rendering

pub fn render_value(v: &Value) -> String {
    match v {
        Value::Str(s) => format!("'{}'", s.replace('\'', "''")),
        other => other.to_string(),
    }
}

fn sql_expr_prec(e: &SqlExpr) -> u8 {
    match e {
        SqlExpr::Arith(ArithOp::Add | ArithOp::Sub, _, _) => 1,
        SqlExpr::Arith(ArithOp::Mul | ArithOp::Div, _, _) => 2,
        _ => 3,
    }
}

pub fn render_expr(e: &SqlExpr, d: &SqlDialect) -> Result<String, RenderError> {
    Ok(match e {
        SqlExpr::Col { table, column } => match table {
            Some(t) => format!("{}.{}", d.ident(t), d.ident(column)),
            None => d.ident(column),
        },
        SqlExpr::Const(v) => render_value(v),
        SqlExpr::Arith(op, l, r) => {
            let my = sql_expr_prec(e);
            let ls = render_expr(l, d)?;
            let rs = render_expr(r, d)?;
            let ls = if sql_expr_prec(l) < my { format!("({})", ls) } else { ls };
            let rs = if sql_expr_prec(r) < my
                || (sql_expr_prec(r) == my && matches!(op, ArithOp::Sub | ArithOp::Div))
            {
                format!("({})", rs)
            } else {
                rs
            };
            format!("{}{}{}", ls, op.symbol(), rs)
        }
        SqlExpr::Func(name, args) => {
            let mapped = d.functions.get(name).ok_or_else(|| {
                RenderError::UnsupportedFunction { func: name.clone(), dialect: d.name.clone() }
            })?;
            let args: Result<Vec<String>, RenderError> =
                args.iter().map(|a| render_expr(a, d)).collect();
            format!("{}({})", mapped, args?.join(","))
        }
    })
}

fn cmp_sql(op: CmpOp) -> &'static str {
    match op {
        CmpOp::Eq => "=",
        CmpOp::Ne => "<>",
        CmpOp::Lt => "<",
        CmpOp::Le => "<=",
        CmpOp::Gt => ">",
        CmpOp::Ge => ">=",
    }
}

pub fn render_cond(c: &SqlCond, d: &SqlDialect) -> Result<String, RenderError> {
    Ok(match c {
        SqlCond::True => "TRUE".to_string(),
        SqlCond::Cmp(op, l, r) => {
            format!("{}{}{}", render_expr(l, d)?, cmp_sql(*op), render_expr(r, d)?)
        }
        SqlCond::And(cs) => {
            let parts: Result<Vec<String>, RenderError> =
                cs.iter().map(|x| render_cond(x, d)).collect();
            parts?.join(" AND ")
        }
        SqlCond::NotExists(q) => format!("NOT EXISTS ({})", render_query(q, d)?),
    })
}

/// Deterministic single-line rendering of a query.
pub fn render_query(q: &SqlQuery, d: &SqlDialect) -> Result<String, RenderError> {
    Ok(match q {
        SqlQuery::Select { proj, from, cond } => {
            let proj_s = match proj {
                Projection::Star => "*".to_string(),
                Projection::Cols(cols) => {
                    let parts: Result<Vec<String>, RenderError> =
                        cols.iter().map(|c| render_expr(c, d)).collect();
                    parts?.join(",")
                }
            };
            let from_s: Vec<String> = from
                .iter()
                .map(|(rel, alias)| match alias {
                    Some(a) => format!("{} AS {}", d.ident(rel), d.ident(a)),
                    None => d.ident(rel),
                })
                .collect();
            let mut s = format!("SELECT {} FROM {}", proj_s, from_s.join(","));
            if !matches!(cond, SqlCond::True) {
                write!(s, " WHERE {}", render_cond(cond, d)?).unwrap();
            }
            s
        }
        SqlQuery::Fromless { proj, cond } => {
            let parts: Result<Vec<String>, RenderError> =
                proj.iter().map(|c| render_expr(c, d)).collect();
            let mut s = format!("SELECT {}", parts?.join(","));
            if let FromlessPolicy::RequiresDual(dual) = &d.fromless {
                write!(s, " FROM {}", d.ident(dual)).unwrap();
            }
            if !matches!(cond, SqlCond::True) {
                write!(s, " WHERE {}", render_cond(cond, d)?).unwrap();
            }
            s
        }
        SqlQuery::UnionAll(branches) => {
            let parts: Result<Vec<String>, RenderError> =
                branches.iter().map(|b| render_query(b, d)).collect();
            parts?
                .into_iter()
                .map(|p| format!("({})", p))
                .collect::<Vec<_>>()
                .join(" UNION ALL ")
        }
    })
}

/// Render a statement. CREATE VIEW uses the multi-line layout shown by
/// the schema listing command, one union branch per line.
pub fn render_statement(st: &SqlStatement, d: &SqlDialect) -> Result<String, RenderError> {
    Ok(match st {
        SqlStatement::CreateTable { name, columns } => {
            let cols: Vec<String> = columns
                .iter()
                .map(|(n, t)| format!("{} {}", d.ident(n), d.type_name(t)))
                .collect();
            format!("CREATE TABLE {}({})", d.ident(name), cols.join(","))
        }
        SqlStatement::CreateView { name, columns, query } => {
            let cols: Vec<String> = columns.iter().map(|c| d.ident(c)).collect();
            let body = match query {
                SqlQuery::UnionAll(branches) => {
                    let parts: Result<Vec<String>, RenderError> =
                        branches.iter().map(|b| render_query(b, d)).collect();
                    parts?
                        .into_iter()
                        .map(|p| format!("({})", p))
                        .collect::<Vec<_>>()
                        .join(" UNION ALL\n  ")
                }
                other => render_query(other, d)?,
            };
            format!(
                "CREATE VIEW {}({}) AS\n  {};",
                d.ident(name),
                cols.join(","),
                body
            )
        }
        SqlStatement::DropTable(name) => format!("DROP TABLE {}", d.ident(name)),
        SqlStatement::DropView(name) => format!("DROP VIEW {}", d.ident(name)),
        SqlStatement::Insert { table, values } => {
            let vals: Vec<String> = values.iter().map(render_value).collect();
            format!("INSERT INTO {} VALUES({})", d.ident(table), vals.join(","))
        }
        SqlStatement::Delete { table, cond } => {
            if matches!(cond, SqlCond::True) {
                format!("DELETE FROM {}", d.ident(table))
            } else {
                format!("DELETE FROM {} WHERE {}", d.ident(table), render_cond(cond, d)?)
            }
        }
        SqlStatement::Query(q) => render_query(q, d)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ast::CmpOp;

    fn col(table: &str, column: &str) -> SqlExpr {
        SqlExpr::Col { table: Some(table.to_string()), column: column.to_string() }
    }

    #[test]
    fn point_select_renders_with_backquotes() {
        let q = SqlQuery::Select {
            proj: Projection::Star,
            from: vec![("ancestor".to_string(), None)],
            cond: SqlCond::Cmp(
                CmpOp::Eq,
                SqlExpr::Col { table: None, column: "descendant".to_string() },
                SqlExpr::Const(Value::Str("amy".to_string())),
            ),
        };
        assert_eq!(
            render_query(&q, &SqlDialect::backquote()).unwrap(),
            "SELECT * FROM `ancestor` WHERE `descendant`='amy'"
        );
    }

    #[test]
    fn bracket_dialect_uses_brackets_and_dual() {
        let d = SqlDialect::bracket();
        let q = SqlQuery::Fromless {
            proj: vec![SqlExpr::Const(Value::Int(1)), SqlExpr::Const(Value::Str("a".to_string()))],
            cond: SqlCond::True,
        };
        assert_eq!(render_query(&q, &d).unwrap(), "SELECT 1,'a' FROM [dual]");
        assert_eq!(d.ident("t"), "[t]");
        // The same query needs no dual under the reference dialect.
        assert_eq!(
            render_query(&q, &SqlDialect::backquote()).unwrap(),
            "SELECT 1,'a'"
        );
    }

    #[test]
    fn create_view_lays_out_union_branches_per_line() {
        let st = SqlStatement::CreateView {
            name: "p".to_string(),
            columns: vec!["a".to_string()],
            query: SqlQuery::UnionAll(vec![
                SqlQuery::Select {
                    proj: Projection::Star,
                    from: vec![("p_des_table".to_string(), None)],
                    cond: SqlCond::True,
                },
                SqlQuery::Select {
                    proj: Projection::Cols(vec![col("rel1", "a")]),
                    from: vec![("q".to_string(), Some("rel1".to_string()))],
                    cond: SqlCond::True,
                },
            ]),
        };
        assert_eq!(
            render_statement(&st, &SqlDialect::backquote()).unwrap(),
            "CREATE VIEW `p`(`a`) AS\n  (SELECT * FROM `p_des_table`) UNION ALL\n  (SELECT `rel1`.`a` FROM `q` AS `rel1`);"
        );
    }

    #[test]
    fn arithmetic_precedence_gets_parentheses_only_when_needed() {
        use crate::ast::ArithOp::*;
        let d = SqlDialect::backquote();
        let e = SqlExpr::Arith(
            Mul,
            Box::new(SqlExpr::Arith(
                Add,
                Box::new(SqlExpr::Const(Value::Int(1))),
                Box::new(SqlExpr::Const(Value::Int(2))),
            )),
            Box::new(SqlExpr::Const(Value::Int(3))),
        );
        assert_eq!(render_expr(&e, &d).unwrap(), "(1+2)*3");
        let e2 = SqlExpr::Arith(
            Sub,
            Box::new(SqlExpr::Const(Value::Int(1))),
            Box::new(SqlExpr::Arith(
                Sub,
                Box::new(SqlExpr::Const(Value::Int(2))),
                Box::new(SqlExpr::Const(Value::Int(3))),
            )),
        );
        assert_eq!(render_expr(&e2, &d).unwrap(), "1-(2-3)");
    }

    #[test]
    fn string_values_escape_quotes() {
        assert_eq!(render_value(&Value::Str("o'neil".to_string())), "'o''neil'");
    }

    #[test]
    fn unsupported_functions_are_render_errors() {
        let e = SqlExpr::Func("sin".to_string(), vec![SqlExpr::Const(Value::Int(1))]);
        assert!(render_expr(&e, &SqlDialect::backquote()).is_ok());
        assert!(matches!(
            render_expr(&e, &SqlDialect::bracket()),
            Err(RenderError::UnsupportedFunction { .. })
        ));
    }

    #[test]
    fn not_exists_renders_as_correlated_subquery() {
        let q = SqlQuery::Select {
            proj: Projection::Cols(vec![col("rel1", "a")]),
            from: vec![("q".to_string(), Some("rel1".to_string()))],
            cond: SqlCond::NotExists(Box::new(SqlQuery::Select {
                proj: Projection::Star,
                from: vec![("r".to_string(), Some("rel2".to_string()))],
                cond: SqlCond::Cmp(CmpOp::Eq, col("rel2", "a"), col("rel1", "a")),
            })),
        };
        assert_eq!(
            render_query(&q, &SqlDialect::backquote()).unwrap(),
            "SELECT `rel1`.`a` FROM `q` AS `rel1` WHERE NOT EXISTS (SELECT * FROM `r` AS `rel2` WHERE `rel2`.`a`=`rel1`.`a`)"
        );
    }
}
