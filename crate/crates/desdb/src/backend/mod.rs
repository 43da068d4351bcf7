//! SQL backend driver abstraction: named connections, DDL/update
//! execution, demand-driven row fetching and relation introspection.
//!
//! The reference backend is the embedded store in [`embedded`]; the
//! trait is shaped so a socket- or bridge-based driver can be dropped in.

pub mod embedded;
pub mod sqlparse;

use crate::sql::SqlDialect;
use crate::value::{ColumnType, Value};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("unknown connection '{name}' (not defined in registry {registry})")]
    UnknownConnection { name: String, registry: String },
    #[error("connection '{0}' is not open")]
    NotOpen(String),
    #[error("unknown backend kind '{0}'")]
    UnknownBackendKind(String),
    #[error("unknown dialect '{0}'")]
    UnknownDialect(String),
    #[error("backend error: {msg} (while executing: {sql})")]
    Execution { msg: String, sql: String },
    #[error("SQL parse error: {msg} (in: {sql})")]
    SqlSyntax { msg: String, sql: String },
    #[error("cursor used after close")]
    CursorClosed,
    #[error("i/o error on '{path}': {source}")]
    Io { path: String, source: std::io::Error },
    #[error("corrupt store file '{path}': {msg}")]
    CorruptStore { path: String, msg: String },
    #[error("registry parse error at line {line}: {msg}")]
    RegistryParse { line: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelationKind {
    Table,
    View,
}

#[derive(Debug, Clone)]
pub struct RelationInfo {
    pub name: String,
    pub kind: RelationKind,
    pub columns: Vec<(String, ColumnType)>,
    /// For views: the CREATE VIEW text as originally executed.
    pub view_sql: Option<String>,
}

impl RelationInfo {
    /// Backing objects created by the persistence layer.
    pub fn is_persistence_object(&self) -> bool {
        self.name.ends_with("_des_table") || self.name.ends_with("_des_metadata")
    }
}

/// Demand-driven row stream for one query.
pub struct RowCursor {
    rows: std::vec::IntoIter<Vec<Value>>,
    arity: usize,
    closed: bool,
}

impl RowCursor {
    pub fn new(rows: Vec<Vec<Value>>, arity: usize) -> Self {
        RowCursor { rows: rows.into_iter(), arity, closed: false }
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn next_row(&mut self) -> Result<Option<Vec<Value>>, BackendError> {
        if self.closed {
            return Err(BackendError::CursorClosed);
        }
        Ok(self.rows.next())
    }

    pub fn close(&mut self) {
        self.closed = true;
    }
}

/// One SQL backend under a connection. All SQL on the wire is text
/// produced by the `sql` module's renderer.
pub trait Driver {
    fn dialect(&self) -> &SqlDialect;
    fn exec_update(&mut self, sql: &str) -> Result<u64, BackendError>;
    fn query_fetch(&mut self, sql: &str) -> Result<RowCursor, BackendError>;
    fn list_relations(&self) -> Result<Vec<RelationInfo>, BackendError>;
    fn begin(&mut self);
    fn commit(&mut self) -> Result<(), BackendError>;
    fn rollback(&mut self);
}

// ---------------------------------------------------------------------------
// Connection registry

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConnectionConfig {
    pub name: String,
    pub backend_kind: String,
    pub location: String,
    pub dialect: String,
}

/// Parses the registry file format: one connection per line,
/// `name kind location dialect`, with `#` comments.
pub fn parse_registry(text: &str) -> Result<Vec<ConnectionConfig>, BackendError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(BackendError::RegistryParse {
                line: i + 1,
                msg: format!(
                    "expected 'name kind location dialect', got {} field(s)",
                    fields.len()
                ),
            });
        }
        out.push(ConnectionConfig {
            name: fields[0].to_string(),
            backend_kind: fields[1].to_string(),
            location: fields[2].to_string(),
            dialect: fields[3].to_string(),
        });
    }
    Ok(out)
}

struct OpenConnection {
    driver: Box<dyn Driver>,
    refcount: usize,
}

/// Named connections: registry of configs plus the open, reference
/// counted driver instances.
pub struct Connections {
    registry_path: String,
    configs: HashMap<String, ConnectionConfig>,
    open: HashMap<String, OpenConnection>,
}

impl Connections {
    pub fn new(registry_path: &str, configs: Vec<ConnectionConfig>) -> Self {
        Connections {
            registry_path: registry_path.to_string(),
            configs: configs.into_iter().map(|c| (c.name.clone(), c)).collect(),
            open: HashMap::new(),
        }
    }

    pub fn from_registry_file(path: &str) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Io { path: path.to_string(), source: e })?;
        Ok(Self::new(path, parse_registry(&text)?))
    }

    pub fn config(&self, name: &str) -> Option<&ConnectionConfig> {
        self.configs.get(name)
    }

    pub fn names(&self) -> Vec<String> {
        let mut v: Vec<String> = self.configs.keys().cloned().collect();
        v.sort();
        v
    }

    pub fn is_open(&self, name: &str) -> bool {
        self.open.contains_key(name)
    }

    pub fn open_names(&self) -> Vec<String> {
        let mut v: Vec<String> = self.open.keys().cloned().collect();
        v.sort();
        v
    }

    /// Open (or re-open) a connection. Opening twice yields the same
    /// logical connection with an incremented reference count.
    pub fn open(&mut self, name: &str) -> Result<(), BackendError> {
        if let Some(conn) = self.open.get_mut(name) {
            conn.refcount += 1;
            return Ok(());
        }
        let config = self.configs.get(name).ok_or_else(|| BackendError::UnknownConnection {
            name: name.to_string(),
            registry: self.registry_path.clone(),
        })?;
        let dialect = SqlDialect::by_name(&config.dialect)
            .ok_or_else(|| BackendError::UnknownDialect(config.dialect.clone()))?;
        let driver: Box<dyn Driver> = match config.backend_kind.as_str() {
            "embedded" => Box::new(embedded::EmbeddedStore::open(&config.location, dialect)?),
            other => return Err(BackendError::UnknownBackendKind(other.to_string())),
        };
        self.open.insert(name.to_string(), OpenConnection { driver, refcount: 1 });
        Ok(())
    }

    pub fn close(&mut self, name: &str) {
        if let Some(conn) = self.open.get_mut(name) {
            conn.refcount -= 1;
            if conn.refcount == 0 {
                self.open.remove(name);
            }
        }
    }

    pub fn driver(&mut self, name: &str) -> Result<&mut dyn Driver, BackendError> {
        match self.open.get_mut(name) {
            Some(conn) => Ok(conn.driver.as_mut()),
            None => Err(BackendError::NotOpen(name.to_string())),
        }
    }

    pub fn dialect(&self, name: &str) -> Result<SqlDialect, BackendError> {
        match self.open.get(name) {
            Some(conn) => Ok(conn.driver.dialect().clone()),
            None => Err(BackendError::NotOpen(name.to_string())),
        }
    }
}
