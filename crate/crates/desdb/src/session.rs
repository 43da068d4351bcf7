//! Interactive database state: local rules, declared types, connections,
//! persistence records, optimization flags and the tabling registry.

use crate::ast::{
    self, NormalRule, ParseError, PredKey, ProgramItem, Term, TypeDecl,
};
use crate::backend::{BackendError, Connections};
use crate::builtin::EvalError;
use crate::catalog::{
    check_facts_against_schema, Catalog, CatalogError, PredicateSchema,
};
use crate::engine::{Counters, OptFlags, SessionTables, Tuple};
use crate::persist::PersistenceRecord;
use crate::sql::translate::TranslateError;
use crate::sql::RenderError;
use crate::value::Value;
use std::collections::{BTreeSet, HashMap};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Translate(#[from] TranslateError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("evaluation error: {0}")]
    Eval(#[from] EvalError),
    #[error("unsafe rule {rule}: {reasons}")]
    UnsafeRule { rule: String, reasons: String },
    #[error("no database is currently open; name a connection explicitly")]
    NoCurrentDb,
    #[error("propositional predicate {0} cannot be made persistent")]
    ZeroArity(String),
    #[error("predicate {0}/{1} is already persistent in connection '{2}'")]
    AlreadyPersistent(String, usize, String),
    #[error("relation '{0}' already exists externally and is not a persistence object")]
    NameCollision(String),
    #[error("stored schema for {0}/{1} does not match the assertion")]
    SchemaMismatch(String, usize),
    #[error("predicate {0}/{1} is not persistent in connection '{2}'")]
    NotPersistent(String, usize, String),
    #[error("unknown predicate {0}/{1}")]
    UnknownPredicate(String, usize),
    #[error("unknown optimization '{0}'")]
    UnknownOptimization(String),
    #[error("variable {0} is unbound during evaluation")]
    Unbound(String),
    #[error("fixpoint did not converge for {0}/{1}")]
    NonTerminating(String, usize),
    #[error("migration requires two distinct connections")]
    SameConnection,
}

/// One interactive session: the local database plus everything needed to
/// reach external ones.
pub struct Session {
    pub catalog: Catalog,
    /// Local rules per predicate, in assertion order. Rules of a loaded
    /// persistent predicate live in its record instead.
    pub rules: HashMap<PredKey, Vec<NormalRule>>,
    pub connections: Connections,
    pub current_db: Option<String>,
    pub persistent: HashMap<PredKey, PersistenceRecord>,
    pub flags: OptFlags,
    pub counters: Counters,
    pub tables: SessionTables,
    /// Answer table left by the most recent query.
    pub last_answer_table: HashMap<PredKey, BTreeSet<Tuple>>,
}

impl Session {
    pub fn new(connections: Connections) -> Self {
        Session {
            catalog: Catalog::new(),
            rules: HashMap::new(),
            connections,
            current_db: None,
            persistent: HashMap::new(),
            flags: OptFlags::default(),
            counters: Counters::default(),
            tables: SessionTables::default(),
            last_answer_table: HashMap::new(),
        }
    }

    /// Open a connection and make it the current database.
    pub fn open_db(&mut self, name: &str) -> Result<Vec<String>, SessionError> {
        if !self.connections.is_open(name) {
            self.connections.open(name)?;
        }
        self.current_db = Some(name.to_string());
        self.invalidate();
        Ok(vec![format!("Info: Database '{}' opened.", name)])
    }

    /// Any change to the program or to persistence invalidates memoized
    /// state.
    pub fn invalidate(&mut self) {
        self.tables.clear();
        self.last_answer_table.clear();
    }

    pub fn declare(&mut self, decl: &TypeDecl) -> Result<(), SessionError> {
        let schema = PredicateSchema { name: decl.pred.clone(), columns: decl.columns.clone() };
        // Reject declarations contradicted by facts already loaded.
        let key = schema.key();
        if let Some(rules) = self.rules.get(&key) {
            let facts: Vec<Vec<Value>> = rules
                .iter()
                .filter(|r| r.is_ground_fact())
                .map(|r| {
                    r.head
                        .args
                        .iter()
                        .map(|t| match t {
                            Term::Const(v) => v.clone(),
                            Term::Var(_) => unreachable!(),
                        })
                        .collect()
                })
                .collect();
            check_facts_against_schema(&schema, &facts)?;
        }
        self.catalog.declare_type(schema)?;
        Ok(())
    }

    /// All rules visible to analysis: local ones plus every persistent
    /// predicate's full intensional rule set.
    pub fn all_rules(&self) -> HashMap<PredKey, Vec<NormalRule>> {
        let mut all = self.rules.clone();
        for (k, rec) in &self.persistent {
            all.entry(k.clone()).or_default().extend(rec.rules.iter().cloned());
        }
        all
    }

    /// Load a program text: rules, type declarations and persistence
    /// assertions, in source order. Per-item errors become message lines
    /// and processing continues.
    pub fn consult_text(&mut self, text: &str) -> Vec<String> {
        let items = match ast::parse_program(text) {
            Ok(items) => items,
            Err(e) => return vec![format!("Error: {}", e)],
        };
        let mut out = Vec::new();
        for item in items {
            match self.process_item(&item) {
                Ok(msgs) => out.extend(msgs),
                Err(e) => out.push(format!("Error: {}", e)),
            }
        }
        out
    }

    pub fn process_item(&mut self, item: &ProgramItem) -> Result<Vec<String>, SessionError> {
        match item {
            ProgramItem::Type(decl) => {
                self.declare(decl)?;
                Ok(Vec::new())
            }
            ProgramItem::Rule(rule) => self.assert_rule(rule),
            ProgramItem::Persistent(a) => self.persist_assertion(a),
        }
    }

    pub fn set_optimization(&mut self, name: &str, on: bool) -> Result<(), SessionError> {
        self.flags.set(name, on)?;
        Ok(())
    }

    pub fn statistics_lines(&self) -> Vec<String> {
        let onoff = |b: bool| if b { "on" } else { "off" };
        vec![
            format!("Fixpoint iterations: {}", self.counters.iterations),
            format!("Backend fetches: {}", self.counters.fetches),
            format!("Rule resolutions: {}", self.counters.resolutions),
            format!("complete_computations: {}", onoff(self.flags.complete_computations)),
            format!("extensional_fetch: {}", onoff(self.flags.extensional_fetch)),
            format!("nonrecursive_cache: {}", onoff(self.flags.nonrecursive_cache)),
        ]
    }

    /// Render the schema listing for `$des` (the local database) or a
    /// named connection.
    pub fn dbschema(&mut self, target: Option<&str>) -> Result<Vec<String>, SessionError> {
        match target {
            None | Some("$des") => {
                let mut lines = vec!["Local database $des:".to_string()];
                let mut keys: Vec<PredKey> = self
                    .rules
                    .keys()
                    .chain(self.persistent.keys())
                    .cloned()
                    .collect::<BTreeSet<_>>()
                    .into_iter()
                    .collect();
                keys.sort();
                for k in keys {
                    let mut line = format!("  {}/{}", k.0, k.1);
                    if let Some(s) = self.catalog.declared(&k) {
                        let cols: Vec<String> =
                            s.columns.iter().map(|(n, t)| format!("{}:{}", n, t)).collect();
                        line.push_str(&format!(" ({})", cols.join(",")));
                    }
                    if let Some(rec) = self.persistent.get(&k) {
                        line.push_str(&format!(" [persistent at {}]", rec.connection));
                    }
                    lines.push(line);
                }
                // Persistence views, in the display format the backend
                // received them.
                let mut recs: Vec<&PersistenceRecord> = self.persistent.values().collect();
                recs.sort_by(|a, b| a.pred.cmp(&b.pred));
                for rec in recs {
                    let conn = rec.connection.clone();
                    let view = rec.pred.0.clone();
                    let driver = self.connections.driver(&conn)?;
                    for rel in driver.list_relations()? {
                        if rel.name == view {
                            if let Some(sql) = rel.view_sql {
                                lines.push(String::new());
                                lines.extend(sql.lines().map(|l| l.to_string()));
                            }
                        }
                    }
                }
                Ok(lines)
            }
            Some(conn) => {
                let driver = self.connections.driver(conn)?;
                let mut lines = vec![format!("Connection '{}':", conn)];
                let mut rels = driver.list_relations()?;
                rels.sort_by(|a, b| a.name.cmp(&b.name));
                let mut views = Vec::new();
                for rel in rels {
                    let cols: Vec<String> =
                        rel.columns.iter().map(|(n, t)| format!("{}:{}", n, t)).collect();
                    let kind = match rel.kind {
                        crate::backend::RelationKind::Table => "Table",
                        crate::backend::RelationKind::View => "View",
                    };
                    lines.push(format!("  {} {}({})", kind, rel.name, cols.join(",")));
                    if let Some(sql) = rel.view_sql {
                        views.push(sql);
                    }
                }
                for sql in views {
                    lines.push(String::new());
                    lines.extend(sql.lines().map(|l| l.to_string()));
                }
                Ok(lines)
            }
        }
    }
}
