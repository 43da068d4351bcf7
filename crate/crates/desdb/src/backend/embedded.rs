//! Embedded SQL store: an in-process backend that accepts the rendered
//! SQL subset, with optional JSON durability and snapshot transactions.

use super::sqlparse::parse_statement;
use super::{BackendError, Driver, RelationInfo, RelationKind, RowCursor};
use crate::ast::ArithOp;
use crate::builtin;
use crate::sql::{
    FromlessPolicy, Projection, SqlCond, SqlDialect, SqlExpr, SqlQuery, SqlStatement,
};
use crate::value::{ColumnType, Value};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::PathBuf;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StoredTable {
    columns: Vec<(String, ColumnType)>,
    rows: Vec<Vec<Value>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StoredView {
    columns: Vec<(String, ColumnType)>,
    /// Rendered query body, reparsed on evaluation.
    query_sql: String,
    /// Full CREATE VIEW text, kept for schema introspection.
    create_sql: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct Store {
    tables: BTreeMap<String, StoredTable>,
    views: BTreeMap<String, StoredView>,
}

/// One open embedded database. Locations starting with `mem:` are kept
/// in memory only; anything else is a JSON file path.
pub struct EmbeddedStore {
    path: Option<PathBuf>,
    dialect: SqlDialect,
    store: Store,
    snapshot: Option<Store>,
}

/// Name resolution frame during query evaluation: one per FROM entry.
struct Frame<'a> {
    alias: &'a str,
    columns: &'a [String],
    row: &'a [Value],
}

impl EmbeddedStore {
    pub fn open(location: &str, dialect: SqlDialect) -> Result<Self, BackendError> {
        if let Some(rest) = location.strip_prefix("mem:") {
            let _ = rest;
            return Ok(EmbeddedStore {
                path: None,
                dialect,
                store: Store::default(),
                snapshot: None,
            });
        }
        let path = PathBuf::from(location);
        let store = if path.exists() {
            let text = std::fs::read_to_string(&path)
                .map_err(|e| BackendError::Io { path: location.to_string(), source: e })?;
            serde_json::from_str(&text).map_err(|e| BackendError::CorruptStore {
                path: location.to_string(),
                msg: e.to_string(),
            })?
        } else {
            Store::default()
        };
        Ok(EmbeddedStore { path: Some(path), dialect, store, snapshot: None })
    }

    fn save(&self) -> Result<(), BackendError> {
        if let Some(path) = &self.path {
            let text = serde_json::to_string(&self.store).expect("store serializes");
            std::fs::write(path, text).map_err(|e| BackendError::Io {
                path: path.display().to_string(),
                source: e,
            })?;
        }
        Ok(())
    }

    fn persist_unless_in_tx(&self) -> Result<(), BackendError> {
        if self.snapshot.is_none() {
            self.save()?;
        }
        Ok(())
    }

    fn exec_err(&self, msg: impl Into<String>, sql: &str) -> BackendError {
        BackendError::Execution { msg: msg.into(), sql: sql.to_string() }
    }

    fn relation_exists(&self, name: &str) -> bool {
        self.store.tables.contains_key(name) || self.store.views.contains_key(name)
    }

    // -- query evaluation ---------------------------------------------------

    /// Rows and column names of a named relation (table, view, or the
    /// dialect's implicit dual).
    fn relation_rows(
        &self,
        name: &str,
        sql: &str,
        depth: usize,
    ) -> Result<(Vec<String>, Vec<Vec<Value>>), BackendError> {
        if depth > 64 {
            return Err(self.exec_err(format!("view expansion too deep at '{}'", name), sql));
        }
        if let Some(t) = self.store.tables.get(name) {
            let cols = t.columns.iter().map(|(n, _)| n.clone()).collect();
            return Ok((cols, t.rows.clone()));
        }
        if let Some(v) = self.store.views.get(name) {
            let query = match parse_statement(&v.query_sql, &self.dialect)? {
                SqlStatement::Query(q) => q,
                _ => unreachable!("stored view body is a query"),
            };
            let rows = self.eval_query(&query, &[], sql, depth + 1)?;
            let cols = v.columns.iter().map(|(n, _)| n.clone()).collect();
            return Ok((cols, rows));
        }
        if let FromlessPolicy::RequiresDual(dual) = &self.dialect.fromless {
            if name == dual {
                return Ok((Vec::new(), vec![Vec::new()]));
            }
        }
        Err(self.exec_err(format!("unknown relation '{}'", name), sql))
    }

    fn resolve_col(
        &self,
        table: &Option<String>,
        column: &str,
        frames: &[Frame<'_>],
        sql: &str,
    ) -> Result<Value, BackendError> {
        // Innermost frames first so subquery aliases shadow outer ones.
        for f in frames.iter().rev() {
            if let Some(t) = table {
                if f.alias != t {
                    continue;
                }
            }
            if let Some(i) = f.columns.iter().position(|c| c == column) {
                return Ok(f.row[i].clone());
            }
            if table.is_some() {
                return Err(self.exec_err(
                    format!("no column '{}' in relation '{}'", column, f.alias),
                    sql,
                ));
            }
        }
        Err(self.exec_err(format!("unknown column '{}'", column), sql))
    }

    fn eval_expr(
        &self,
        e: &SqlExpr,
        frames: &[Frame<'_>],
        sql: &str,
    ) -> Result<Value, BackendError> {
        match e {
            SqlExpr::Col { table, column } => self.resolve_col(table, column, frames, sql),
            SqlExpr::Const(v) => Ok(v.clone()),
            SqlExpr::Arith(op, l, r) => {
                let a = self.eval_expr(l, frames, sql)?;
                let b = self.eval_expr(r, frames, sql)?;
                builtin::arith(*op, &a, &b).map_err(|e| self.exec_err(e.to_string(), sql))
            }
            SqlExpr::Func(name, args) => {
                let args: Result<Vec<Value>, BackendError> =
                    args.iter().map(|a| self.eval_expr(a, frames, sql)).collect();
                builtin::apply_func(name, &args?)
                    .map_err(|e| self.exec_err(e.to_string(), sql))
            }
        }
    }

    fn eval_cond(
        &self,
        c: &SqlCond,
        frames: &[Frame<'_>],
        sql: &str,
        depth: usize,
    ) -> Result<bool, BackendError> {
        match c {
            SqlCond::True => Ok(true),
            SqlCond::Cmp(op, l, r) => {
                let a = self.eval_expr(l, frames, sql)?;
                let b = self.eval_expr(r, frames, sql)?;
                builtin::compare(*op, &a, &b).map_err(|e| self.exec_err(e.to_string(), sql))
            }
            SqlCond::And(cs) => {
                for c in cs {
                    if !self.eval_cond(c, frames, sql, depth)? {
                        return Ok(false);
                    }
                }
                Ok(true)
            }
            SqlCond::NotExists(q) => {
                let rows = self.eval_query(q, frames, sql, depth + 1)?;
                Ok(rows.is_empty())
            }
        }
    }

    /// Evaluate a query under an (possibly empty) outer environment for
    /// correlated subqueries.
    fn eval_query(
        &self,
        q: &SqlQuery,
        outer: &[Frame<'_>],
        sql: &str,
        depth: usize,
    ) -> Result<Vec<Vec<Value>>, BackendError> {
        match q {
            SqlQuery::Fromless { proj, cond } => {
                if self.eval_cond(cond, outer, sql, depth)? {
                    let row: Result<Vec<Value>, BackendError> =
                        proj.iter().map(|e| self.eval_expr(e, outer, sql)).collect();
                    Ok(vec![row?])
                } else {
                    Ok(Vec::new())
                }
            }
            SqlQuery::UnionAll(branches) => {
                let mut out = Vec::new();
                let mut arity: Option<usize> = None;
                for b in branches {
                    let rows = self.eval_query(b, outer, sql, depth)?;
                    if let Some(r) = rows.first() {
                        match arity {
                            None => arity = Some(r.len()),
                            Some(a) if a != r.len() => {
                                return Err(self
                                    .exec_err("UNION ALL branches differ in arity", sql));
                            }
                            _ => {}
                        }
                    }
                    out.extend(rows);
                }
                Ok(out)
            }
            SqlQuery::Select { proj, from, cond } => {
                // Materialize each FROM entry once, then nested-loop join.
                let mut sources: Vec<(String, Vec<String>, Vec<Vec<Value>>)> = Vec::new();
                for (rel, alias) in from {
                    let (cols, rows) = self.relation_rows(rel, sql, depth)?;
                    let alias = alias.clone().unwrap_or_else(|| rel.clone());
                    sources.push((alias, cols, rows));
                }
                let mut out = Vec::new();
                let mut indices = vec![0usize; sources.len()];
                'outer: loop {
                    // Check all sources are non-empty before joining.
                    for (_, _, rows) in &sources {
                        if rows.is_empty() {
                            break 'outer;
                        }
                    }
                    let mut frames: Vec<Frame<'_>> = outer.to_vec_frames();
                    for (i, (alias, cols, rows)) in sources.iter().enumerate() {
                        frames.push(Frame { alias, columns: cols, row: &rows[indices[i]] });
                    }
                    if self.eval_cond(cond, &frames, sql, depth)? {
                        let row = match proj {
                            Projection::Star => {
                                let inner = &frames[outer.len()..];
                                inner.iter().flat_map(|f| f.row.iter().cloned()).collect()
                            }
                            Projection::Cols(cols) => {
                                let r: Result<Vec<Value>, BackendError> = cols
                                    .iter()
                                    .map(|e| self.eval_expr(e, &frames, sql))
                                    .collect();
                                r?
                            }
                        };
                        out.push(row);
                    }
                    // Advance the rightmost index (odometer order).
                    let mut i = sources.len();
                    loop {
                        if i == 0 {
                            break 'outer;
                        }
                        i -= 1;
                        indices[i] += 1;
                        if indices[i] < sources[i].2.len() {
                            break;
                        }
                        indices[i] = 0;
                    }
                }
                Ok(out)
            }
        }
    }

    /// Output column names and types of a query, for view creation.
    fn query_schema(
        &self,
        q: &SqlQuery,
        sql: &str,
    ) -> Result<Vec<(String, ColumnType)>, BackendError> {
        match q {
            SqlQuery::UnionAll(branches) => self.query_schema(&branches[0], sql),
            SqlQuery::Fromless { proj, cond: _ } => {
                Ok(proj.iter().enumerate().map(|(i, e)| self.expr_schema(e, i, &[])).collect())
            }
            SqlQuery::Select { proj, from, .. } => {
                let mut rels: Vec<(String, Vec<(String, ColumnType)>)> = Vec::new();
                for (rel, alias) in from {
                    let cols = if let Some(t) = self.store.tables.get(rel) {
                        t.columns.clone()
                    } else if let Some(v) = self.store.views.get(rel) {
                        v.columns.clone()
                    } else {
                        return Err(self.exec_err(format!("unknown relation '{}'", rel), sql));
                    };
                    rels.push((alias.clone().unwrap_or_else(|| rel.clone()), cols));
                }
                match proj {
                    Projection::Star => {
                        Ok(rels.into_iter().flat_map(|(_, cols)| cols).collect())
                    }
                    Projection::Cols(cols) => Ok(cols
                        .iter()
                        .enumerate()
                        .map(|(i, e)| self.expr_schema(e, i, &rels))
                        .collect()),
                }
            }
        }
    }

    fn expr_schema(
        &self,
        e: &SqlExpr,
        pos: usize,
        rels: &[(String, Vec<(String, ColumnType)>)],
    ) -> (String, ColumnType) {
        let fallback = format!("c{}", pos + 1);
        match e {
            SqlExpr::Const(v) => (fallback, ColumnType::of_value(v)),
            SqlExpr::Col { table, column } => {
                for (alias, cols) in rels {
                    if let Some(t) = table {
                        if alias != t {
                            continue;
                        }
                    }
                    if let Some((_, ty)) = cols.iter().find(|(n, _)| n == column) {
                        return (column.clone(), *ty);
                    }
                }
                (column.clone(), ColumnType::Int)
            }
            SqlExpr::Arith(op, l, r) => {
                let (_, lt) = self.expr_schema(l, pos, rels);
                let (_, rt) = self.expr_schema(r, pos, rels);
                let ty = if matches!(op, ArithOp::Div)
                    || lt == ColumnType::Float
                    || rt == ColumnType::Float
                {
                    ColumnType::Float
                } else {
                    ColumnType::Int
                };
                (fallback, ty)
            }
            SqlExpr::Func(name, args) => match name.as_str() {
                "sin" | "cos" => (fallback, ColumnType::Float),
                "abs" if !args.is_empty() => {
                    let (_, ty) = self.expr_schema(&args[0], pos, rels);
                    (fallback, ty)
                }
                _ => (fallback, ColumnType::Float),
            },
        }
    }

    fn exec_statement(&mut self, st: SqlStatement, sql: &str) -> Result<u64, BackendError> {
        match st {
            SqlStatement::CreateTable { name, columns } => {
                if self.relation_exists(&name) {
                    return Err(self.exec_err(format!("relation '{}' already exists", name), sql));
                }
                self.store.tables.insert(name, StoredTable { columns, rows: Vec::new() });
                self.persist_unless_in_tx()?;
                Ok(0)
            }
            SqlStatement::CreateView { name, columns, query } => {
                if self.relation_exists(&name) {
                    return Err(self.exec_err(format!("relation '{}' already exists", name), sql));
                }
                let inferred = self.query_schema(&query, sql)?;
                if inferred.len() != columns.len() {
                    return Err(self.exec_err(
                        format!(
                            "view '{}' declares {} column(s) but its query yields {}",
                            name,
                            columns.len(),
                            inferred.len()
                        ),
                        sql,
                    ));
                }
                let typed: Vec<(String, ColumnType)> = columns
                    .into_iter()
                    .zip(inferred.iter().map(|(_, t)| *t))
                    .collect();
                let query_sql = crate::sql::render_query(&query, &self.dialect)
                    .map_err(|e| self.exec_err(e.to_string(), sql))?;
                self.store.views.insert(
                    name,
                    StoredView { columns: typed, query_sql, create_sql: sql.to_string() },
                );
                self.persist_unless_in_tx()?;
                Ok(0)
            }
            SqlStatement::DropTable(name) => {
                if self.store.tables.remove(&name).is_none() {
                    return Err(self.exec_err(format!("no table '{}'", name), sql));
                }
                self.persist_unless_in_tx()?;
                Ok(0)
            }
            SqlStatement::DropView(name) => {
                if self.store.views.remove(&name).is_none() {
                    return Err(self.exec_err(format!("no view '{}'", name), sql));
                }
                self.persist_unless_in_tx()?;
                Ok(0)
            }
            SqlStatement::Insert { table, values } => {
                let t = self
                    .store
                    .tables
                    .get_mut(&table)
                    .ok_or_else(|| BackendError::Execution {
                        msg: format!("no table '{}'", table),
                        sql: sql.to_string(),
                    })?;
                if values.len() != t.columns.len() {
                    return Err(BackendError::Execution {
                        msg: format!(
                            "arity mismatch: table '{}' has {} column(s), got {}",
                            table,
                            t.columns.len(),
                            values.len()
                        ),
                        sql: sql.to_string(),
                    });
                }
                let mut row = Vec::with_capacity(values.len());
                for (v, (col, ty)) in values.into_iter().zip(&t.columns) {
                    // Integers widen into float columns; other kind
                    // mismatches are rejected.
                    let v = match (ty, v) {
                        (ColumnType::Float, Value::Int(i)) => Value::Float(i as f64),
                        (ty, v) => {
                            if !ty.same_kind(&ColumnType::of_value(&v)) {
                                return Err(BackendError::Execution {
                                    msg: format!(
                                        "type mismatch for column '{}': expected {}, got {}",
                                        col, ty, v
                                    ),
                                    sql: sql.to_string(),
                                });
                            }
                            v
                        }
                    };
                    row.push(v);
                }
                t.rows.push(row);
                self.persist_unless_in_tx()?;
                Ok(1)
            }
            SqlStatement::Delete { table, cond } => {
                let t = match self.store.tables.get(&table) {
                    Some(t) => t.clone(),
                    None => {
                        return Err(self.exec_err(format!("no table '{}'", table), sql));
                    }
                };
                let cols: Vec<String> = t.columns.iter().map(|(n, _)| n.clone()).collect();
                let mut kept = Vec::new();
                let mut deleted = 0u64;
                for row in &t.rows {
                    let frames = [Frame { alias: &table, columns: &cols, row }];
                    if self.eval_cond(&cond, &frames, sql, 0)? {
                        deleted += 1;
                    } else {
                        kept.push(row.clone());
                    }
                }
                self.store.tables.get_mut(&table).unwrap().rows = kept;
                self.persist_unless_in_tx()?;
                Ok(deleted)
            }
            SqlStatement::Query(_) => {
                Err(self.exec_err("queries must go through the fetch interface", sql))
            }
        }
    }
}

/// Helper to re-borrow outer frames when pushing inner ones.
trait FrameVec<'a> {
    fn to_vec_frames(&self) -> Vec<Frame<'a>>;
}

impl<'a> FrameVec<'a> for &[Frame<'a>] {
    fn to_vec_frames(&self) -> Vec<Frame<'a>> {
        self.iter()
            .map(|f| Frame { alias: f.alias, columns: f.columns, row: f.row })
            .collect()
    }
}

impl Driver for EmbeddedStore {
    fn dialect(&self) -> &SqlDialect {
        &self.dialect
    }

    fn exec_update(&mut self, sql: &str) -> Result<u64, BackendError> {
        let st = parse_statement(sql, &self.dialect)?;
        self.exec_statement(st, sql)
    }

    fn query_fetch(&mut self, sql: &str) -> Result<RowCursor, BackendError> {
        let q = match parse_statement(sql, &self.dialect)? {
            SqlStatement::Query(q) => q,
            _ => {
                return Err(BackendError::Execution {
                    msg: "expected a query".to_string(),
                    sql: sql.to_string(),
                })
            }
        };
        let rows = self.eval_query(&q, &[], sql, 0)?;
        let arity = rows.first().map(|r| r.len()).unwrap_or_else(|| {
            self.query_schema(&q, sql).map(|s| s.len()).unwrap_or(0)
        });
        Ok(RowCursor::new(rows, arity))
    }

    fn list_relations(&self) -> Result<Vec<RelationInfo>, BackendError> {
        let mut out = Vec::new();
        for (name, t) in &self.store.tables {
            out.push(RelationInfo {
                name: name.clone(),
                kind: RelationKind::Table,
                columns: t.columns.clone(),
                view_sql: None,
            });
        }
        for (name, v) in &self.store.views {
            out.push(RelationInfo {
                name: name.clone(),
                kind: RelationKind::View,
                columns: v.columns.clone(),
                view_sql: Some(v.create_sql.clone()),
            });
        }
        Ok(out)
    }

    fn begin(&mut self) {
        if self.snapshot.is_none() {
            self.snapshot = Some(self.store.clone());
        }
    }

    fn commit(&mut self) -> Result<(), BackendError> {
        self.snapshot = None;
        self.save()
    }

    fn rollback(&mut self) {
        if let Some(s) = self.snapshot.take() {
            self.store = s;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mem() -> EmbeddedStore {
        EmbeddedStore::open("mem:test", SqlDialect::backquote()).unwrap()
    }

    fn fetch_all(s: &mut EmbeddedStore, sql: &str) -> Vec<Vec<Value>> {
        let mut cur = s.query_fetch(sql).unwrap();
        let mut rows = Vec::new();
        while let Some(r) = cur.next_row().unwrap() {
            rows.push(r);
        }
        rows
    }

    #[test]
    fn create_insert_select() {
        let mut s = mem();
        s.exec_update("CREATE TABLE `t`(`a` INT,`b` VARCHAR(200))").unwrap();
        assert_eq!(s.exec_update("INSERT INTO `t` VALUES(1,'x')").unwrap(), 1);
        assert_eq!(s.exec_update("INSERT INTO `t` VALUES(2,'y')").unwrap(), 1);
        let rows = fetch_all(&mut s, "SELECT * FROM `t` WHERE `a`=2");
        assert_eq!(rows, vec![vec![Value::Int(2), Value::Str("y".into())]]);
    }

    #[test]
    fn join_and_view() {
        let mut s = mem();
        s.exec_update("CREATE TABLE `e`(`x` INT,`y` INT)").unwrap();
        for (x, y) in [(1, 2), (2, 3)] {
            s.exec_update(&format!("INSERT INTO `e` VALUES({},{})", x, y)).unwrap();
        }
        s.exec_update(
            "CREATE VIEW `hop`(`x`,`y`) AS\n  SELECT `r1`.`x`,`r2`.`y` FROM `e` AS `r1`,`e` AS `r2` WHERE `r2`.`x`=`r1`.`y`;",
        )
        .unwrap();
        let rows = fetch_all(&mut s, "SELECT * FROM `hop`");
        assert_eq!(rows, vec![vec![Value::Int(1), Value::Int(3)]]);
    }

    #[test]
    fn not_exists_is_correlated() {
        let mut s = mem();
        s.exec_update("CREATE TABLE `p`(`a` INT)").unwrap();
        s.exec_update("CREATE TABLE `q`(`a` INT)").unwrap();
        for v in [1, 2, 3] {
            s.exec_update(&format!("INSERT INTO `p` VALUES({})", v)).unwrap();
        }
        s.exec_update("INSERT INTO `q` VALUES(2)").unwrap();
        let rows = fetch_all(
            &mut s,
            "SELECT `r1`.`a` FROM `p` AS `r1` WHERE NOT EXISTS (SELECT * FROM `q` AS `r2` WHERE `r2`.`a`=`r1`.`a`)",
        );
        assert_eq!(rows, vec![vec![Value::Int(1)], vec![Value::Int(3)]]);
    }

    #[test]
    fn transactions_roll_back() {
        let mut s = mem();
        s.exec_update("CREATE TABLE `t`(`a` INT)").unwrap();
        s.begin();
        s.exec_update("INSERT INTO `t` VALUES(1)").unwrap();
        s.rollback();
        assert!(fetch_all(&mut s, "SELECT * FROM `t`").is_empty());
        s.begin();
        s.exec_update("INSERT INTO `t` VALUES(2)").unwrap();
        s.commit().unwrap();
        assert_eq!(fetch_all(&mut s, "SELECT * FROM `t`"), vec![vec![Value::Int(2)]]);
    }

    #[test]
    fn durability_across_reopen() {
        let dir = std::env::temp_dir().join(format!("desdb-store-{}", std::process::id()));
        let _ = std::fs::create_dir_all(&dir);
        let path = dir.join("db.json");
        let loc = path.to_str().unwrap().to_string();
        {
            let mut s = EmbeddedStore::open(&loc, SqlDialect::backquote()).unwrap();
            s.exec_update("CREATE TABLE `t`(`a` INT)").unwrap();
            s.exec_update("INSERT INTO `t` VALUES(7)").unwrap();
        }
        let mut s = EmbeddedStore::open(&loc, SqlDialect::backquote()).unwrap();
        assert_eq!(fetch_all(&mut s, "SELECT * FROM `t`"), vec![vec![Value::Int(7)]]);
        let _ = std::fs::remove_file(&path);
    }

    #[test]
    fn bracket_dialect_dual() {
        let mut s = EmbeddedStore::open("mem:x", SqlDialect::bracket()).unwrap();
        let rows = fetch_all(&mut s, "SELECT 1,2 FROM [dual]");
        assert_eq!(rows, vec![vec![Value::Int(1), Value::Int(2)]]);
    }
}
