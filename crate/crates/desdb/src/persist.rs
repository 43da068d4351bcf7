//! Persistence lifecycle: making predicates persistent against a
//! connection, restoring them in later sessions, asserting and retracting
//! on persistent predicates, dropping persistence and migrating between
//! connections.
//!
//! A persistent predicate `p` owns three backend objects: the fact table
//! `p_des_table`, the metadata table `p_des_metadata` holding the
//! canonical text of every intensional rule, and the view `p` unioning
//! the fact table with the translation of each SQL-expressible rule.
//! Rules that cannot be translated (recursion, unsupported built-ins,
//! predicates not available externally) stay local and are combined with
//! the view at solve time.

use crate::ast::{
    self, alpha_eq, canonical_text, NormalRule, PersistAssertion, PredKey, Rule, Term,
};
use crate::catalog::{
    build_pdg, check_facts_against_schema, check_type_consistency, is_safe, PredicateSchema,
};
use crate::session::{Session, SessionError};
use crate::sql::translate::{classify_rule, dl_to_sql, dx_translate, RuleClass};
use crate::sql::{
    render_query, render_statement, Projection, SqlCond, SqlDialect, SqlExpr, SqlQuery,
    SqlStatement,
};
use crate::ast::CmpOp;
use crate::value::{ColumnType, Value};
use std::collections::{HashMap, HashSet};

pub fn table_name_of(pred: &str) -> String {
    format!("{}_des_table", pred)
}

pub fn metadata_name_of(pred: &str) -> String {
    format!("{}_des_metadata", pred)
}

/// Width of the metadata rule_text column.
const RULE_TEXT_LEN: u32 = 1000;

/// Session-side state of one persistent predicate.
#[derive(Debug, Clone)]
pub struct PersistenceRecord {
    pub pred: PredKey,
    pub connection: String,
    pub schema: PredicateSchema,
    /// All intensional rules, in metadata order.
    pub rules: Vec<NormalRule>,
    /// The subset of `rules` the view cannot express; solved locally.
    pub local_rules: Vec<NormalRule>,
}

impl PersistenceRecord {
    pub fn table_name(&self) -> String {
        table_name_of(&self.pred.0)
    }

    pub fn metadata_name(&self) -> String {
        metadata_name_of(&self.pred.0)
    }

    pub fn view_name(&self) -> &str {
        &self.pred.0
    }
}

fn metadata_schema(pred: &str) -> Vec<(String, ColumnType)> {
    let _ = pred;
    vec![
        ("seq".to_string(), ColumnType::Int),
        ("rule_text".to_string(), ColumnType::Str(RULE_TEXT_LEN)),
    ]
}

/// The closure step kinds computed before touching the backend.
#[derive(Debug, Clone, PartialEq, Eq)]
enum Action {
    Persist(PredKey),
    Restore(PredKey),
}

impl Session {
    fn resolve_connection(&self, explicit: Option<&str>) -> Result<String, SessionError> {
        match explicit {
            Some(c) => Ok(c.to_string()),
            None => self.current_db.clone().ok_or(SessionError::NoCurrentDb),
        }
    }

    fn ensure_open(&mut self, conn: &str) -> Result<(), SessionError> {
        if !self.connections.is_open(conn) {
            self.connections.open(conn)?;
        }
        Ok(())
    }

    /// Names of relations present on a connection.
    fn relation_names(&mut self, conn: &str) -> Result<HashSet<String>, SessionError> {
        let driver = self.connections.driver(conn)?;
        Ok(driver.list_relations()?.into_iter().map(|r| r.name).collect())
    }

    /// Schema of a backend relation, if present.
    fn relation_schema(
        &mut self,
        conn: &str,
        name: &str,
    ) -> Result<Option<PredicateSchema>, SessionError> {
        let driver = self.connections.driver(conn)?;
        for rel in driver.list_relations()? {
            if rel.name == name {
                return Ok(Some(PredicateSchema { name: rel.name, columns: rel.columns }));
            }
        }
        Ok(None)
    }

    fn has_backing_pair(&mut self, conn: &str, pred: &str) -> Result<bool, SessionError> {
        let names = self.relation_names(conn)?;
        Ok(names.contains(&table_name_of(pred)) && names.contains(&metadata_name_of(pred)))
    }

    /// Process `:-persistent(...)`: make the predicate and its non-external
    /// dependency closure persistent, restoring predicates whose backing
    /// objects already exist.
    pub fn persist_assertion(
        &mut self,
        a: &PersistAssertion,
    ) -> Result<Vec<String>, SessionError> {
        if a.arity == 0 {
            return Err(SessionError::ZeroArity(a.pred.clone()));
        }
        let conn = self.resolve_connection(a.connection.as_deref())?;
        self.ensure_open(&conn)?;
        let key: PredKey = (a.pred.clone(), a.arity);

        // Fully typed column lists act as a type declaration.
        let declared_cols: Option<Vec<(String, ColumnType)>> = a.columns.as_ref().and_then(|cols| {
            cols.iter()
                .map(|(n, t)| t.map(|t| (n.clone(), t)))
                .collect::<Option<Vec<_>>>()
        });
        if let Some(cols) = &declared_cols {
            self.catalog
                .declare_type(PredicateSchema { name: a.pred.clone(), columns: cols.clone() })?;
        }

        if let Some(rec) = self.persistent.get(&key) {
            if rec.connection == conn {
                // Already loaded: nothing to do.
                return Ok(vec![format!(
                    "Info: Predicate {}/{} is already persistent.",
                    key.0, key.1
                )]);
            }
            return Err(SessionError::AlreadyPersistent(
                key.0.clone(),
                key.1,
                rec.connection.clone(),
            ));
        }

        let column_names: Option<Vec<String>> =
            a.columns.as_ref().map(|cols| cols.iter().map(|(n, _)| n.clone()).collect());

        let order = self.persist_closure(&key, &conn)?;
        let mut warnings = Vec::new();
        let mut infos = Vec::new();
        for action in order {
            match action {
                Action::Persist(k) => {
                    let decl = if k == key { declared_cols.clone() } else { None };
                    let names = if k == key { column_names.clone() } else { None };
                    let w = self.do_persist(&k, &conn, decl.as_deref(), names)?;
                    warnings.extend(w);
                    infos.push(format!("Info: Predicate {}/{} made persistent.", k.0, k.1));
                }
                Action::Restore(k) => {
                    let decl = if k == key { declared_cols.clone() } else { None };
                    let w = self.do_restore(&k, &conn, decl.as_deref())?;
                    warnings.extend(w);
                    infos.push(format!("Info: Predicate {}/{} made persistent.", k.0, k.1));
                }
            }
        }
        self.refresh_persistent_views()?;
        self.invalidate();
        warnings.extend(infos);
        Ok(warnings)
    }

    /// Post-order walk from the target: callees are handled before their
    /// callers. Existing raw relations and already-loaded persistent
    /// predicates stop the walk.
    fn persist_closure(
        &mut self,
        target: &PredKey,
        conn: &str,
    ) -> Result<Vec<Action>, SessionError> {
        let rel_names = self.relation_names(conn)?;
        let mut order = Vec::new();
        let mut visited: HashSet<PredKey> = HashSet::new();
        self.walk_closure(target, target, conn, &rel_names, &mut visited, &mut order)?;
        Ok(order)
    }

    fn walk_closure(
        &mut self,
        k: &PredKey,
        target: &PredKey,
        conn: &str,
        rel_names: &HashSet<String>,
        visited: &mut HashSet<PredKey>,
        order: &mut Vec<Action>,
    ) -> Result<(), SessionError> {
        if !visited.insert(k.clone()) {
            return Ok(());
        }
        let has_pair =
            rel_names.contains(&table_name_of(&k.0)) && rel_names.contains(&metadata_name_of(&k.0));
        if k != target {
            if self.persistent.contains_key(k) {
                return Ok(()); // already loaded, untouched
            }
            if !has_pair && rel_names.contains(&k.0) {
                return Ok(()); // raw external relation, untouched
            }
        }
        // Rules the predicate will carry: local ones, plus stored metadata
        // when restoring.
        let mut rules: Vec<NormalRule> = self.rules.get(k).cloned().unwrap_or_default();
        if has_pair {
            rules.extend(self.read_metadata_rules(conn, &k.0)?);
        } else if rules.is_empty()
            && self.catalog.declared(k).is_none()
            && (k != target || !rel_names.contains(&k.0))
        {
            return Err(SessionError::UnknownPredicate(k.0.clone(), k.1));
        }
        for rule in &rules {
            for (callee, _) in rule.callees() {
                if callee == *k {
                    continue;
                }
                self.walk_closure(&callee, target, conn, rel_names, visited, order)?;
            }
        }
        if has_pair {
            order.push(Action::Restore(k.clone()));
        } else if k == target && rel_names.contains(&k.0) {
            // A relation with the predicate's name exists but is not a
            // persistence pair: refuse to shadow it.
            return Err(SessionError::NameCollision(k.0.clone()));
        } else {
            order.push(Action::Persist(k.clone()));
        }
        Ok(())
    }

    fn read_metadata_rules(
        &mut self,
        conn: &str,
        pred: &str,
    ) -> Result<Vec<NormalRule>, SessionError> {
        let dialect = self.connections.dialect(conn)?;
        let q = SqlQuery::Select {
            proj: Projection::Star,
            from: vec![(metadata_name_of(pred), None)],
            cond: SqlCond::True,
        };
        let sql = render_query(&q, &dialect)?;
        let driver = self.connections.driver(conn)?;
        let mut cursor = driver.query_fetch(&sql)?;
        let mut rows: Vec<(i64, String)> = Vec::new();
        while let Some(row) = cursor.next_row()? {
            match (&row[0], &row[1]) {
                (Value::Int(seq), Value::Str(text)) => rows.push((*seq, text.clone())),
                _ => {
                    return Err(SessionError::SchemaMismatch(pred.to_string(), 0));
                }
            }
        }
        cursor.close();
        rows.sort();
        let mut rules = Vec::new();
        for (_, text) in rows {
            let rule = ast::parse_rule(&text)?;
            rules.extend(ast::normalize(&rule));
        }
        Ok(rules)
    }

    /// Predicates whose full meaning is queryable as one relation on
    /// `conn`: raw relations plus residue-free persistent predicates.
    fn available_on(&mut self, conn: &str) -> Result<HashSet<PredKey>, SessionError> {
        let mut avail: HashSet<PredKey> = HashSet::new();
        let driver = self.connections.driver(conn)?;
        for rel in driver.list_relations()? {
            if rel.is_persistence_object() {
                continue;
            }
            let key = (rel.name.clone(), rel.columns.len());
            if let Some(rec) = self.persistent.get(&key) {
                if rec.connection == conn && rec.local_rules.is_empty() {
                    avail.insert(key);
                }
                continue;
            }
            avail.insert(key);
        }
        Ok(avail)
    }

    /// Body-predicate schemas as the backend knows them, for translation.
    fn translation_schemas(
        &mut self,
        conn: &str,
    ) -> Result<HashMap<PredKey, PredicateSchema>, SessionError> {
        let mut out = HashMap::new();
        let driver = self.connections.driver(conn)?;
        for rel in driver.list_relations()? {
            if rel.is_persistence_object() {
                continue;
            }
            out.insert(
                (rel.name.clone(), rel.columns.len()),
                PredicateSchema { name: rel.name, columns: rel.columns },
            );
        }
        for (k, rec) in &self.persistent {
            if rec.connection == conn {
                out.insert(k.clone(), rec.schema.clone());
            }
        }
        Ok(out)
    }

    /// Split rules into translatable ones and the local residue, demoting
    /// rules whose SQL the dialect cannot render.
    fn classify_rules(
        &mut self,
        key: &PredKey,
        rules: &[NormalRule],
        conn: &str,
    ) -> Result<(Vec<NormalRule>, Vec<(NormalRule, RuleClass)>), SessionError> {
        let all = self.all_rules_with(key, rules);
        let avail = self.available_on(conn)?;
        let schemas = self.translation_schemas(conn)?;
        let ext_keys: Vec<PredKey> = avail.iter().cloned().collect();
        let pdg = build_pdg(&all, &ext_keys);
        let dialect = self.connections.dialect(conn)?;
        let mut translatable = Vec::new();
        let mut local = Vec::new();
        for rule in rules {
            match classify_rule(rule, &pdg, &avail) {
                RuleClass::Translatable => {
                    // The dialect must actually render it.
                    match dx_translate(rule, &schemas).map(|q| render_query(&q, &dialect)) {
                        Ok(Ok(_)) => translatable.push(rule.clone()),
                        Ok(Err(e)) => local.push((
                            rule.clone(),
                            RuleClass::LocalUnsupported(e.to_string()),
                        )),
                        Err(e) => local.push((
                            rule.clone(),
                            RuleClass::LocalUnsupported(e.to_string()),
                        )),
                    }
                }
                other => local.push((rule.clone(), other)),
            }
        }
        Ok((translatable, local))
    }

    /// `all_rules` with the given predicate's rule set replaced.
    fn all_rules_with(
        &self,
        key: &PredKey,
        rules: &[NormalRule],
    ) -> HashMap<PredKey, Vec<NormalRule>> {
        let mut all = self.all_rules();
        all.insert(key.clone(), rules.to_vec());
        all
    }

    fn exec_on(&mut self, conn: &str, st: &SqlStatement) -> Result<u64, SessionError> {
        let dialect = self.connections.dialect(conn)?;
        let sql = render_statement(st, &dialect)?;
        let driver = self.connections.driver(conn)?;
        Ok(driver.exec_update(&sql)?)
    }

    fn create_view_for(
        &mut self,
        rec: &PersistenceRecord,
        translatable: &[NormalRule],
        replace: bool,
    ) -> Result<(), SessionError> {
        let conn = rec.connection.clone();
        let schemas = self.translation_schemas(&conn)?;
        let query = dl_to_sql(&rec.table_name(), translatable, &schemas)?;
        if replace {
            let names = self.relation_names(&conn)?;
            if names.contains(rec.view_name()) {
                self.exec_on(&conn, &SqlStatement::DropView(rec.pred.0.clone()))?;
            }
        }
        let st = SqlStatement::CreateView {
            name: rec.pred.0.clone(),
            columns: rec.schema.column_names(),
            query,
        };
        self.exec_on(&conn, &st)?;
        Ok(())
    }

    fn warning_for(rule: &NormalRule, class: &RuleClass) -> Vec<String> {
        let first = match class {
            RuleClass::LocalRecursive => {
                "Warning: Recursive rule cannot be transferred to external database"
            }
            _ => "Warning: Rule cannot be transferred to external database",
        };
        vec![
            first.to_string(),
            "  (kept in local database for its processing):".to_string(),
            rule.to_string(),
        ]
    }

    /// Create the backing objects for one predicate and move its facts
    /// and rules there. Returns warning lines for rules kept local.
    fn do_persist(
        &mut self,
        key: &PredKey,
        conn: &str,
        declared: Option<&[(String, ColumnType)]>,
        column_names: Option<Vec<String>>,
    ) -> Result<Vec<String>, SessionError> {
        let rules = self.rules.get(key).cloned().unwrap_or_default();
        for rule in &rules {
            let report = is_safe(rule);
            if !report.safe {
                return Err(SessionError::UnsafeRule {
                    rule: rule.to_string(),
                    reasons: report.violations.join("; "),
                });
            }
        }
        // Schema: declared types dominate; otherwise inferred.
        let all = self.all_rules_with(key, &rules);
        let externals = self.external_schemas()?;
        let mut schema = check_type_consistency(key, &all, &self.catalog, &externals)?;
        if let Some(cols) = declared {
            schema = PredicateSchema { name: key.0.clone(), columns: cols.to_vec() };
        } else if let Some(names) = column_names {
            for (slot, name) in schema.columns.iter_mut().zip(names) {
                slot.0 = name;
            }
        }

        // Name collisions with unrelated relations.
        let names = self.relation_names(conn)?;
        for obj in [key.0.clone(), table_name_of(&key.0), metadata_name_of(&key.0)] {
            if names.contains(&obj) {
                return Err(SessionError::NameCollision(obj));
            }
        }

        let facts: Vec<Vec<Value>> = rules
            .iter()
            .filter(|r| r.is_ground_fact())
            .map(|r| fact_row(r))
            .collect();
        check_facts_against_schema(&schema, &facts)?;
        let intensional: Vec<NormalRule> =
            rules.iter().filter(|r| !r.is_fact()).cloned().collect();

        let (translatable, local) = {
            // Classification sees the record-to-be so self-calls resolve.
            self.persistent.insert(
                key.clone(),
                PersistenceRecord {
                    pred: key.clone(),
                    connection: conn.to_string(),
                    schema: schema.clone(),
                    rules: intensional.clone(),
                    local_rules: Vec::new(),
                },
            );
            let r = self.classify_rules(key, &intensional, conn);
            if r.is_err() {
                self.persistent.remove(key);
            }
            r?
        };

        let result: Result<(), SessionError> = (|| {
            self.connections.driver(conn)?.begin();
            self.exec_on(
                conn,
                &SqlStatement::CreateTable {
                    name: table_name_of(&key.0),
                    columns: schema.columns.clone(),
                },
            )?;
            self.exec_on(
                conn,
                &SqlStatement::CreateTable {
                    name: metadata_name_of(&key.0),
                    columns: metadata_schema(&key.0),
                },
            )?;
            for row in &facts {
                self.exec_on(
                    conn,
                    &SqlStatement::Insert {
                        table: table_name_of(&key.0),
                        values: row.clone(),
                    },
                )?;
            }
            for (i, rule) in intensional.iter().enumerate() {
                self.exec_on(
                    conn,
                    &SqlStatement::Insert {
                        table: metadata_name_of(&key.0),
                        values: vec![
                            Value::Int(i as i64 + 1),
                            Value::Str(canonical_text(rule)),
                        ],
                    },
                )?;
            }
            let rec = self.persistent.get(key).unwrap().clone();
            self.create_view_for(&rec, &translatable, false)?;
            self.connections.driver(conn)?.commit()?;
            Ok(())
        })();
        if let Err(e) = result {
            self.connections.driver(conn)?.rollback();
            self.persistent.remove(key);
            return Err(e);
        }

        let mut warnings = Vec::new();
        let local_rules: Vec<NormalRule> = local.iter().map(|(r, _)| r.clone()).collect();
        for (rule, class) in &local {
            warnings.extend(Self::warning_for(rule, class));
        }
        let rec = self.persistent.get_mut(key).unwrap();
        rec.local_rules = local_rules;
        self.rules.remove(key);
        Ok(warnings)
    }

    /// Load an existing persistence pair from the backend, merging any
    /// rules and facts the session holds locally.
    fn do_restore(
        &mut self,
        key: &PredKey,
        conn: &str,
        declared: Option<&[(String, ColumnType)]>,
    ) -> Result<Vec<String>, SessionError> {
        let stored = self
            .relation_schema(conn, &table_name_of(&key.0))?
            .ok_or_else(|| SessionError::NotPersistent(key.0.clone(), key.1, conn.to_string()))?;
        let schema = PredicateSchema { name: key.0.clone(), columns: stored.columns };
        if schema.arity() != key.1 {
            return Err(SessionError::SchemaMismatch(key.0.clone(), key.1));
        }
        if let Some(cols) = declared {
            let same = cols.len() == schema.columns.len()
                && cols
                    .iter()
                    .zip(&schema.columns)
                    .all(|(a, b)| a.0 == b.0 && a.1.same_kind(&b.1));
            if !same {
                return Err(SessionError::SchemaMismatch(key.0.clone(), key.1));
            }
        }
        let mut rules = self.read_metadata_rules(conn, &key.0)?;

        // Merge local state: facts move to the table, new rules to the
        // metadata; nothing local is lost.
        let local = self.rules.get(key).cloned().unwrap_or_default();
        let local_facts: Vec<Vec<Value>> =
            local.iter().filter(|r| r.is_ground_fact()).map(|r| fact_row(r)).collect();
        check_facts_against_schema(&schema, &local_facts)?;
        let new_rules: Vec<NormalRule> = local
            .iter()
            .filter(|r| !r.is_fact())
            .filter(|r| !rules.iter().any(|s| alpha_eq(r, s)))
            .cloned()
            .collect();

        let result: Result<(), SessionError> = (|| {
            self.connections.driver(conn)?.begin();
            for row in &local_facts {
                self.insert_fact_idempotent(conn, &table_name_of(&key.0), &schema, row)?;
            }
            let mut seq = rules.len() as i64;
            for rule in &new_rules {
                seq += 1;
                self.exec_on(
                    conn,
                    &SqlStatement::Insert {
                        table: metadata_name_of(&key.0),
                        values: vec![Value::Int(seq), Value::Str(canonical_text(rule))],
                    },
                )?;
            }
            self.connections.driver(conn)?.commit()?;
            Ok(())
        })();
        if let Err(e) = result {
            self.connections.driver(conn)?.rollback();
            return Err(e);
        }
        rules.extend(new_rules);

        self.persistent.insert(
            key.clone(),
            PersistenceRecord {
                pred: key.clone(),
                connection: conn.to_string(),
                schema,
                rules: rules.clone(),
                local_rules: Vec::new(),
            },
        );
        let (translatable, local_cls) = match self.classify_rules(key, &rules, conn) {
            Ok(v) => v,
            Err(e) => {
                self.persistent.remove(key);
                return Err(e);
            }
        };
        let mut warnings = Vec::new();
        for (rule, class) in &local_cls {
            warnings.extend(Self::warning_for(rule, class));
        }
        let local_rules: Vec<NormalRule> =
            local_cls.iter().map(|(r, _)| r.clone()).collect();
        self.persistent.get_mut(key).unwrap().local_rules = local_rules;
        let rec = self.persistent.get(key).unwrap().clone();
        self.create_view_for(&rec, &translatable, true)?;
        self.rules.remove(key);
        Ok(warnings)
    }

    /// Insert a fact unless an identical row is already present, keeping
    /// set semantics on the backing table.
    fn insert_fact_idempotent(
        &mut self,
        conn: &str,
        table: &str,
        schema: &PredicateSchema,
        row: &[Value],
    ) -> Result<bool, SessionError> {
        let cond = row_equality(schema, row);
        let dialect = self.connections.dialect(conn)?;
        let q = SqlQuery::Select {
            proj: Projection::Star,
            from: vec![(table.to_string(), None)],
            cond,
        };
        let sql = render_query(&q, &dialect)?;
        let driver = self.connections.driver(conn)?;
        let mut cursor = driver.query_fetch(&sql)?;
        let present = cursor.next_row()?.is_some();
        cursor.close();
        if present {
            return Ok(false);
        }
        self.exec_on(
            conn,
            &SqlStatement::Insert { table: table.to_string(), values: row.to_vec() },
        )?;
        Ok(true)
    }

    /// Re-derive every persistent predicate's rule classification after a
    /// rule change; availability depends on other predicates' residues, so
    /// iterate to a fixpoint and recreate views whose bodies changed.
    pub(crate) fn refresh_persistent_views(&mut self) -> Result<(), SessionError> {
        let keys: Vec<PredKey> = self.persistent.keys().cloned().collect();
        for _ in 0..=keys.len() {
            let mut changed = false;
            for key in &keys {
                let rec = self.persistent.get(key).unwrap().clone();
                let (translatable, local_cls) =
                    self.classify_rules(key, &rec.rules, &rec.connection)?;
                let local_rules: Vec<NormalRule> =
                    local_cls.iter().map(|(r, _)| r.clone()).collect();
                if local_rules != rec.local_rules {
                    self.persistent.get_mut(key).unwrap().local_rules = local_rules;
                    self.create_view_for(&rec, &translatable, true)?;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        Ok(())
    }

    /// Remove persistence: facts and rules come back to the local
    /// database and the backing objects are dropped.
    pub fn drop_assertion(&mut self, a: &PersistAssertion) -> Result<Vec<String>, SessionError> {
        let conn = self.resolve_connection(a.connection.as_deref())?;
        self.ensure_open(&conn)?;
        let key: PredKey = (a.pred.clone(), a.arity);
        if !self.persistent.contains_key(&key) {
            // Not loaded this session: restore silently first if the
            // backing objects exist.
            if self.has_backing_pair(&conn, &key.0)? {
                self.do_restore(&key, &conn, None)?;
            } else {
                return Err(SessionError::NotPersistent(key.0.clone(), key.1, conn));
            }
        }
        let rec = self.persistent.get(&key).unwrap().clone();
        if rec.connection != conn {
            return Err(SessionError::NotPersistent(key.0.clone(), key.1, conn));
        }

        // Read facts back before dropping anything.
        let dialect = self.connections.dialect(&conn)?;
        let q = SqlQuery::Select {
            proj: Projection::Star,
            from: vec![(rec.table_name(), None)],
            cond: SqlCond::True,
        };
        let sql = render_query(&q, &dialect)?;
        let driver = self.connections.driver(&conn)?;
        let mut cursor = driver.query_fetch(&sql)?;
        let mut facts: Vec<Vec<Value>> = Vec::new();
        while let Some(row) = cursor.next_row()? {
            facts.push(row);
        }
        cursor.close();

        let result: Result<(), SessionError> = (|| {
            self.connections.driver(&conn)?.begin();
            self.exec_on(&conn, &SqlStatement::DropView(rec.pred.0.clone()))?;
            self.exec_on(&conn, &SqlStatement::DropTable(rec.table_name()))?;
            self.exec_on(&conn, &SqlStatement::DropTable(rec.metadata_name()))?;
            self.connections.driver(&conn)?.commit()?;
            Ok(())
        })();
        if let Err(e) = result {
            self.connections.driver(&conn)?.rollback();
            return Err(e);
        }

        self.persistent.remove(&key);
        let slot = self.rules.entry(key.clone()).or_default();
        for row in facts {
            slot.push(NormalRule::fact(crate::ast::Atom {
                pred: key.0.clone(),
                args: row.into_iter().map(Term::Const).collect(),
            }));
        }
        slot.extend(rec.rules.iter().cloned());
        self.refresh_persistent_views()?;
        self.invalidate();
        Ok(vec![format!("Info: Persistence removed for predicate {}/{}.", key.0, key.1)])
    }

    /// Move a persistent predicate's backing objects from one connection
    /// to another. The target is fully populated before the source is
    /// touched; on failure the source is left intact.
    pub fn migrate(
        &mut self,
        pred: &PredKey,
        from: &str,
        to: &str,
    ) -> Result<Vec<String>, SessionError> {
        if from == to {
            return Err(SessionError::SameConnection);
        }
        self.ensure_open(from)?;
        self.ensure_open(to)?;
        let rec = match self.persistent.get(pred) {
            Some(r) if r.connection == from => r.clone(),
            _ => {
                if self.has_backing_pair(from, &pred.0)? {
                    self.do_restore(pred, from, None)?;
                    self.persistent.get(pred).unwrap().clone()
                } else {
                    return Err(SessionError::NotPersistent(
                        pred.0.clone(),
                        pred.1,
                        from.to_string(),
                    ));
                }
            }
        };

        // Stage everything from the source.
        let dialect = self.connections.dialect(from)?;
        let q = SqlQuery::Select {
            proj: Projection::Star,
            from: vec![(rec.table_name(), None)],
            cond: SqlCond::True,
        };
        let sql = render_query(&q, &dialect)?;
        let driver = self.connections.driver(from)?;
        let mut cursor = driver.query_fetch(&sql)?;
        let mut facts: Vec<Vec<Value>> = Vec::new();
        while let Some(row) = cursor.next_row()? {
            facts.push(row);
        }
        cursor.close();

        // Collision checks on the target.
        let names = self.relation_names(to)?;
        for obj in [pred.0.clone(), table_name_of(&pred.0), metadata_name_of(&pred.0)] {
            if names.contains(&obj) {
                return Err(SessionError::NameCollision(obj));
            }
        }

        // Build the target; only on success drop the source.
        let build: Result<(), SessionError> = (|| {
            self.connections.driver(to)?.begin();
            self.exec_on(
                to,
                &SqlStatement::CreateTable {
                    name: rec.table_name(),
                    columns: rec.schema.columns.clone(),
                },
            )?;
            self.exec_on(
                to,
                &SqlStatement::CreateTable {
                    name: rec.metadata_name(),
                    columns: metadata_schema(&pred.0),
                },
            )?;
            for row in &facts {
                self.exec_on(
                    to,
                    &SqlStatement::Insert { table: rec.table_name(), values: row.clone() },
                )?;
            }
            for (i, rule) in rec.rules.iter().enumerate() {
                self.exec_on(
                    to,
                    &SqlStatement::Insert {
                        table: rec.metadata_name(),
                        values: vec![
                            Value::Int(i as i64 + 1),
                            Value::Str(canonical_text(rule)),
                        ],
                    },
                )?;
            }
            Ok(())
        })();
        if let Err(e) = build {
            self.connections.driver(to)?.rollback();
            return Err(e);
        }

        // Reclassify against the target connection and create its view.
        self.persistent.get_mut(pred).unwrap().connection = to.to_string();
        let (translatable, local_cls) = match self.classify_rules(pred, &rec.rules, to) {
            Ok(v) => v,
            Err(e) => {
                self.connections.driver(to)?.rollback();
                self.persistent.get_mut(pred).unwrap().connection = from.to_string();
                return Err(e);
            }
        };
        let mut warnings = Vec::new();
        for (rule, class) in &local_cls {
            warnings.extend(Self::warning_for(rule, class));
        }
        self.persistent.get_mut(pred).unwrap().local_rules =
            local_cls.iter().map(|(r, _)| r.clone()).collect();
        let new_rec = self.persistent.get(pred).unwrap().clone();
        if let Err(e) = self.create_view_for(&new_rec, &translatable, false) {
            self.connections.driver(to)?.rollback();
            self.persistent.get_mut(pred).unwrap().connection = from.to_string();
            return Err(e);
        }
        self.connections.driver(to)?.commit()?;

        // Now remove the source objects.
        self.connections.driver(from)?.begin();
        self.exec_on(from, &SqlStatement::DropView(pred.0.clone()))?;
        self.exec_on(from, &SqlStatement::DropTable(rec.table_name()))?;
        self.exec_on(from, &SqlStatement::DropTable(rec.metadata_name()))?;
        self.connections.driver(from)?.commit()?;

        self.invalidate();
        warnings.push(format!(
            "Info: Predicate {}/{} migrated from '{}' to '{}'.",
            pred.0, pred.1, from, to
        ));
        Ok(warnings)
    }

    /// Assert a rule or fact, routing to the backend when the head
    /// predicate is persistent.
    pub fn assert_rule(&mut self, rule: &Rule) -> Result<Vec<String>, SessionError> {
        let mut messages = Vec::new();
        for nr in ast::normalize(rule) {
            let report = is_safe(&nr);
            if !report.safe {
                return Err(SessionError::UnsafeRule {
                    rule: nr.to_string(),
                    reasons: report.violations.join("; "),
                });
            }
            let key = nr.head.key();
            if self.persistent.contains_key(&key) {
                messages.extend(self.assert_on_persistent(&key, &nr)?);
            } else {
                if let Some(s) = self.catalog.declared(&key) {
                    if nr.is_ground_fact() {
                        check_facts_against_schema(s, &[fact_row(&nr)])?;
                    }
                }
                let externals = self.external_relations()?;
                if externals.contains_key(&key) {
                    messages.push(format!(
                        "Warning: Predicate {}/{} is an external relation; the clause is only loaded in the local database.",
                        key.0, key.1
                    ));
                }
                let slot = self.rules.entry(key).or_default();
                if !slot.iter().any(|r| alpha_eq(r, &nr)) {
                    slot.push(nr);
                }
            }
        }
        self.refresh_persistent_views()?;
        self.invalidate();
        Ok(messages)
    }

    fn assert_on_persistent(
        &mut self,
        key: &PredKey,
        nr: &NormalRule,
    ) -> Result<Vec<String>, SessionError> {
        let rec = self.persistent.get(key).unwrap().clone();
        let conn = rec.connection.clone();
        if nr.is_ground_fact() {
            let row = fact_row(nr);
            check_facts_against_schema(&rec.schema, &[row.clone()])?;
            self.insert_fact_idempotent(&conn, &rec.table_name(), &rec.schema, &row)?;
            return Ok(Vec::new());
        }
        // Intensional rule: type check against the full program, then
        // record in metadata and reclassify.
        let mut candidate = rec.rules.clone();
        if candidate.iter().any(|r| alpha_eq(r, nr)) {
            return Ok(vec![format!("Info: Rule already present: {}", nr)]);
        }
        candidate.push(nr.clone());
        let all = self.all_rules_with(key, &candidate);
        let externals = self.external_schemas()?;
        check_type_consistency(key, &all, &self.catalog, &externals)?;

        let seq = candidate.len() as i64;
        self.exec_on(
            &conn,
            &SqlStatement::Insert {
                table: rec.metadata_name(),
                values: vec![Value::Int(seq), Value::Str(canonical_text(nr))],
            },
        )?;
        self.persistent.get_mut(key).unwrap().rules = candidate.clone();
        let (translatable, local_cls) = self.classify_rules(key, &candidate, &conn)?;
        let mut messages = Vec::new();
        for (rule, class) in &local_cls {
            if alpha_eq(rule, nr) {
                messages.extend(Self::warning_for(rule, class));
            }
        }
        self.persistent.get_mut(key).unwrap().local_rules =
            local_cls.iter().map(|(r, _)| r.clone()).collect();
        let rec = self.persistent.get(key).unwrap().clone();
        self.create_view_for(&rec, &translatable, true)?;
        Ok(messages)
    }

    /// Retract a rule or fact. Absent clauses produce a notice, not an
    /// error.
    pub fn retract_rule(&mut self, rule: &Rule) -> Result<Vec<String>, SessionError> {
        let mut messages = Vec::new();
        for nr in ast::normalize(rule) {
            let key = nr.head.key();
            if self.persistent.contains_key(&key) {
                messages.extend(self.retract_on_persistent(&key, &nr)?);
            } else {
                let mut removed = false;
                if let Some(slot) = self.rules.get_mut(&key) {
                    if let Some(pos) = slot.iter().position(|r| alpha_eq(r, &nr)) {
                        slot.remove(pos);
                        removed = true;
                    }
                    if slot.is_empty() {
                        self.rules.remove(&key);
                    }
                }
                if !removed {
                    messages.push(format!("Info: Nothing retracted for: {}", nr));
                }
            }
        }
        self.refresh_persistent_views()?;
        self.invalidate();
        Ok(messages)
    }

    fn retract_on_persistent(
        &mut self,
        key: &PredKey,
        nr: &NormalRule,
    ) -> Result<Vec<String>, SessionError> {
        let rec = self.persistent.get(key).unwrap().clone();
        let conn = rec.connection.clone();
        if nr.is_ground_fact() {
            let row = fact_row(nr);
            let cond = row_equality(&rec.schema, &row);
            let n = self.exec_on(
                &conn,
                &SqlStatement::Delete { table: rec.table_name(), cond },
            )?;
            if n == 0 {
                return Ok(vec![format!("Info: Nothing retracted for: {}", nr)]);
            }
            return Ok(Vec::new());
        }
        let Some(pos) = rec.rules.iter().position(|r| alpha_eq(r, nr)) else {
            return Ok(vec![format!("Info: Nothing retracted for: {}", nr)]);
        };
        let text = canonical_text(&rec.rules[pos]);
        self.exec_on(
            &conn,
            &SqlStatement::Delete {
                table: rec.metadata_name(),
                cond: SqlCond::Cmp(
                    CmpOp::Eq,
                    SqlExpr::Col { table: None, column: "rule_text".to_string() },
                    SqlExpr::Const(Value::Str(text)),
                ),
            },
        )?;
        let mut rules = rec.rules.clone();
        rules.remove(pos);
        self.persistent.get_mut(key).unwrap().rules = rules.clone();
        let (translatable, local_cls) = self.classify_rules(key, &rules, &conn)?;
        self.persistent.get_mut(key).unwrap().local_rules =
            local_cls.iter().map(|(r, _)| r.clone()).collect();
        let rec = self.persistent.get(key).unwrap().clone();
        self.create_view_for(&rec, &translatable, true)?;
        Ok(Vec::new())
    }
}

fn fact_row(rule: &NormalRule) -> Vec<Value> {
    rule.head
        .args
        .iter()
        .map(|t| match t {
            Term::Const(v) => v.clone(),
            Term::Var(_) => unreachable!("ground facts only"),
        })
        .collect()
}

fn row_equality(schema: &PredicateSchema, row: &[Value]) -> SqlCond {
    SqlCond::conjoin(
        schema
            .columns
            .iter()
            .zip(row)
            .map(|((name, _), v)| {
                SqlCond::Cmp(
                    CmpOp::Eq,
                    SqlExpr::Col { table: None, column: name.clone() },
                    SqlExpr::Const(v.clone()),
                )
            })
            .collect(),
    )
}

/// Dialect helper used by tests building expected SQL by hand.
pub fn dialect_of(session: &Session, conn: &str) -> Result<SqlDialect, SessionError> {
    Ok(session.connections.dialect(conn)?)
}
