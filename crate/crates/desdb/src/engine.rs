//! Tabled, pattern-directed query evaluation over local rules, persistence
//! views and raw external relations.
//!
//! Calls are predicate plus a bound/free pattern over argument positions.
//! Each call gets an answer table filled by a semi-naive-ish fixpoint;
//! recursive re-entries return the partial table and flag the dependency
//! so the outermost call of the cluster iterates to convergence.

use crate::ast::{Atom, Expr, Literal, NormalRule, PredKey, Term};
use crate::builtin;
use crate::catalog::{build_pdg, is_safe, stratify, PredicateDependencyGraph, PredicateSchema};
use crate::persist::PersistenceRecord;
use crate::session::{Session, SessionError};
use crate::sql::{render_query, Projection, SqlCond, SqlDialect, SqlExpr, SqlQuery};
use crate::ast::CmpOp;
use crate::value::Value;
use std::collections::{BTreeSet, HashMap};

pub type Tuple = Vec<Value>;

/// Variable bindings during body evaluation. Environments are tiny and
/// cloned per joined tuple, so a flat vector with linear lookup beats a
/// hash map by a wide margin.
#[derive(Debug, Clone, Default)]
struct Env(Vec<(String, Value)>);

impl Env {
    fn new() -> Env {
        Env(Vec::new())
    }

    fn get(&self, key: &str) -> Option<&Value> {
        self.0.iter().find(|(k, _)| k == key).map(|(_, v)| v)
    }

    fn contains_key(&self, key: &str) -> bool {
        self.get(key).is_some()
    }

    fn insert(&mut self, key: String, value: Value) {
        self.0.push((key, value));
    }
}

/// Per-call fixpoint cap; hitting it means runaway arithmetic recursion.
const MAX_ITERATIONS: u64 = 10_000;

/// Independently toggleable evaluation optimizations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OptFlags {
    /// Keep completed call tables across queries and reuse them (also via
    /// subsumption) instead of recomputing.
    pub complete_computations: bool,
    /// Answer calls to extensional predicates with a single scan instead
    /// of a fixpoint.
    pub extensional_fetch: bool,
    /// For non-recursive top-level goals, keep only the goal's own entry
    /// in the answer table instead of memorizing every dependent call.
    pub nonrecursive_cache: bool,
}

impl OptFlags {
    pub fn set(&mut self, name: &str, on: bool) -> Result<(), SessionError> {
        match name {
            "complete_computations" => self.complete_computations = on,
            "extensional_fetch" => self.extensional_fetch = on,
            "nonrecursive_cache" => self.nonrecursive_cache = on,
            other => return Err(SessionError::UnknownOptimization(other.to_string())),
        }
        Ok(())
    }
}

/// Instrumentation counters, cumulative per session.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counters {
    /// Fixpoint passes executed.
    pub iterations: u64,
    /// SQL queries sent to backends.
    pub fetches: u64,
    /// Rule body evaluations attempted.
    pub resolutions: u64,
}

impl Counters {
    pub fn since(&self, start: &Counters) -> Counters {
        Counters {
            iterations: self.iterations - start.iterations,
            fetches: self.fetches - start.fetches,
            resolutions: self.resolutions - start.resolutions,
        }
    }
}

/// A tabled call: predicate plus per-position binding.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Call {
    pub pred: PredKey,
    /// `Some(v)` = position bound to `v`; `None` = free.
    pub pattern: Vec<Option<Value>>,
}

impl Call {
    /// The call pattern an atom denotes under an environment: constants
    /// and already-bound variables are bound positions.
    fn from_atom(atom: &Atom, env: &Env) -> Call {
        let pattern = atom
            .args
            .iter()
            .map(|t| match t {
                Term::Const(v) => Some(v.clone()),
                Term::Var(v) => env.get(v).cloned(),
            })
            .collect();
        Call { pred: atom.key(), pattern }
    }

    /// `self` is at least as general as `other`: every bound position of
    /// `self` is bound to the same value in `other`.
    pub fn subsumes(&self, other: &Call) -> bool {
        self.pred == other.pred
            && self
                .pattern
                .iter()
                .zip(&other.pattern)
                .all(|(a, b)| match (a, b) {
                    (None, _) => true,
                    (Some(x), Some(y)) => x == y,
                    (Some(_), None) => false,
                })
    }

    pub fn admits(&self, tuple: &Tuple) -> bool {
        self.pattern
            .iter()
            .zip(tuple)
            .all(|(p, v)| p.as_ref().map_or(true, |b| b == v))
    }
}

fn filter_answers(answers: &BTreeSet<Tuple>, call: &Call) -> BTreeSet<Tuple> {
    answers.iter().filter(|t| call.admits(t)).cloned().collect()
}

/// Cross-query memoized state; cleared whenever the program changes.
#[derive(Default)]
pub struct SessionTables {
    /// Completed call tables kept for reuse under complete_computations.
    pub completed: HashMap<Call, BTreeSet<Tuple>>,
}

impl SessionTables {
    pub fn clear(&mut self) {
        self.completed.clear();
    }
}

/// A raw external relation visible through an open connection.
#[derive(Debug, Clone)]
pub struct ExternalRelation {
    pub connection: String,
    pub schema: PredicateSchema,
}

struct Entry {
    answers: BTreeSet<Tuple>,
    complete: bool,
    in_progress: bool,
    depth: usize,
}

/// The `SELECT * FROM rel [WHERE col=const AND ...]` a bound call pattern
/// compiles to.
pub fn build_filter_query(
    relation: &str,
    schema: &PredicateSchema,
    pattern: &[Option<Value>],
    dialect: &SqlDialect,
) -> Result<String, SessionError> {
    let conds: Vec<SqlCond> = pattern
        .iter()
        .enumerate()
        .filter_map(|(i, p)| {
            p.as_ref().map(|v| {
                SqlCond::Cmp(
                    CmpOp::Eq,
                    SqlExpr::Col { table: None, column: schema.columns[i].0.clone() },
                    SqlExpr::Const(v.clone()),
                )
            })
        })
        .collect();
    let q = SqlQuery::Select {
        proj: Projection::Star,
        from: vec![(relation.to_string(), None)],
        cond: SqlCond::conjoin(conds),
    };
    Ok(render_query(&q, dialect)?)
}

/// One query evaluation over a frozen view of the session.
pub(crate) struct Eval<'a> {
    rules: &'a HashMap<PredKey, Vec<NormalRule>>,
    persistent: &'a HashMap<PredKey, PersistenceRecord>,
    external: &'a HashMap<PredKey, ExternalRelation>,
    connections: &'a mut crate::backend::Connections,
    flags: OptFlags,
    counters: &'a mut Counters,
    registry: &'a mut HashMap<Call, BTreeSet<Tuple>>,
    pdg: &'a PredicateDependencyGraph,
    tables: HashMap<Call, Entry>,
    fetch_cache: HashMap<Call, Vec<Tuple>>,
    /// Total answers across all entries; monotone, used as the fixpoint
    /// change detector.
    total: u64,
    /// Minimum depth of any in-progress call the current computation
    /// depends on; usize::MAX when none.
    dep_min: usize,
}

impl<'a> Eval<'a> {
    fn known(&self, pred: &PredKey) -> bool {
        self.rules.contains_key(pred)
            || self.persistent.contains_key(pred)
            || self.external.contains_key(pred)
    }

    fn solve_call(&mut self, call: &Call, depth: usize) -> Result<BTreeSet<Tuple>, SessionError> {
        if self.flags.complete_computations {
            if let Some(ans) =
                self.registry.iter().find(|(c, _)| c.subsumes(call)).map(|(_, a)| a)
            {
                return Ok(filter_answers(ans, call));
            }
        }
        let mut recompute_seed = false;
        if let Some(e) = self.tables.get(call) {
            if e.complete {
                return Ok(e.answers.clone());
            }
            if e.in_progress {
                self.dep_min = self.dep_min.min(e.depth);
                return Ok(e.answers.clone());
            }
            // Left incomplete by an earlier outer iteration: recompute,
            // seeded with what it already has.
            recompute_seed = true;
        }
        if !recompute_seed {
            // Subsumption against other entries: prefer a complete
            // subsumer, fall back to an in-progress one.
            let mut partial: Option<(usize, BTreeSet<Tuple>)> = None;
            for (c, e) in &self.tables {
                if !c.subsumes(call) {
                    continue;
                }
                if e.complete {
                    return Ok(filter_answers(&e.answers, call));
                }
                if e.in_progress {
                    partial = Some((e.depth, filter_answers(&e.answers, call)));
                }
            }
            if let Some((d, ans)) = partial {
                self.dep_min = self.dep_min.min(d);
                return Ok(ans);
            }
        }

        if !self.known(&call.pred) {
            return Err(SessionError::UnknownPredicate(call.pred.0.clone(), call.pred.1));
        }

        // Extensional shortcut: predicates with no dependencies need one
        // pass, not a fixpoint.
        if self.flags.extensional_fetch && self.pdg.is_extensional(&call.pred) {
            self.tables.entry(call.clone()).or_insert_with(|| Entry {
                answers: BTreeSet::new(),
                complete: false,
                in_progress: false,
                depth,
            });
            self.pass(call, depth)?;
            let e = self.tables.get_mut(call).unwrap();
            e.complete = true;
            return Ok(e.answers.clone());
        }

        let entry = self.tables.entry(call.clone()).or_insert_with(|| Entry {
            answers: BTreeSet::new(),
            complete: false,
            in_progress: false,
            depth,
        });
        entry.in_progress = true;
        entry.depth = depth;

        let saved_dep = std::mem::replace(&mut self.dep_min, usize::MAX);
        let mut local_iters = 0u64;
        loop {
            self.counters.iterations += 1;
            local_iters += 1;
            if local_iters > MAX_ITERATIONS {
                return Err(SessionError::NonTerminating(
                    call.pred.0.clone(),
                    call.pred.1,
                ));
            }
            let before = self.total;
            self.pass(call, depth)?;
            if self.total == before {
                break;
            }
        }
        let my_dep = self.dep_min;
        let entry = self.tables.get_mut(call).unwrap();
        entry.in_progress = false;
        let answers = if my_dep >= depth {
            // All dependencies resolved within this call's own fixpoint.
            entry.complete = true;
            self.dep_min = saved_dep;
            entry.answers.clone()
        } else {
            // Depends on an outer in-progress call: leave incomplete and
            // let that caller's loop re-enter us.
            self.dep_min = saved_dep.min(my_dep);
            entry.answers.clone()
        };
        Ok(answers)
    }

    /// One derivation pass for a call: base rows from the backend plus
    /// every local clause.
    fn pass(&mut self, call: &Call, depth: usize) -> Result<(), SessionError> {
        let rows = self.base_rows(call)?;
        for row in rows {
            self.insert(call, row);
        }
        let clauses: Vec<NormalRule> = match self.persistent.get(&call.pred) {
            Some(rec) => rec.local_rules.clone(),
            None => self.rules.get(&call.pred).cloned().unwrap_or_default(),
        };
        for rule in &clauses {
            self.counters.resolutions += 1;
            let Some(env0) = bind_head(&rule.head, &call.pattern) else { continue };
            let envs = self.solve_body(&rule.body, vec![env0], depth)?;
            for env in envs {
                let tuple = ground_head(&rule.head, &env)?;
                self.insert(call, tuple);
            }
        }
        Ok(())
    }

    fn insert(&mut self, call: &Call, tuple: Tuple) {
        let entry = self.tables.get_mut(call).expect("entry exists during pass");
        if entry.answers.insert(tuple) {
            self.total += 1;
        }
    }

    /// Rows the backend contributes to a call: the persistence view for a
    /// persistent predicate, or the raw relation for an external one.
    /// Fetched once per call pattern per query.
    fn base_rows(&mut self, call: &Call) -> Result<Vec<Tuple>, SessionError> {
        if let Some(rows) = self.fetch_cache.get(call) {
            return Ok(rows.clone());
        }
        let fetched = if let Some(rec) = self.persistent.get(&call.pred) {
            Some((rec.connection.clone(), rec.pred.0.clone(), rec.schema.clone()))
        } else {
            self.external
                .get(&call.pred)
                .map(|e| (e.connection.clone(), e.schema.name.clone(), e.schema.clone()))
        };
        let rows = match fetched {
            Some((conn, relation, schema)) => {
                let dialect = self.connections.dialect(&conn)?;
                let sql = build_filter_query(&relation, &schema, &call.pattern, &dialect)?;
                self.counters.fetches += 1;
                let driver = self.connections.driver(&conn)?;
                let mut cursor = driver.query_fetch(&sql)?;
                let mut rows = Vec::new();
                while let Some(row) = cursor.next_row()? {
                    rows.push(row);
                }
                cursor.close();
                rows
            }
            None => Vec::new(),
        };
        self.fetch_cache.insert(call.clone(), rows.clone());
        Ok(rows)
    }

    /// Left-to-right set-at-a-time body evaluation.
    fn solve_body(
        &mut self,
        body: &[Literal],
        mut envs: Vec<Env>,
        depth: usize,
    ) -> Result<Vec<Env>, SessionError> {
        for lit in body {
            if envs.is_empty() {
                break;
            }
            let mut next = Vec::new();
            match lit {
                Literal::Pos(atom) => {
                    // Many environments often induce the same call
                    // pattern (e.g. a join variable introduced by this
                    // literal); solve each distinct pattern once.
                    let mut by_call: HashMap<Call, BTreeSet<Tuple>> = HashMap::new();
                    for env in &envs {
                        let sub = Call::from_atom(atom, env);
                        if !by_call.contains_key(&sub) {
                            let solved = self.solve_call(&sub, depth + 1)?;
                            by_call.insert(sub.clone(), solved);
                        }
                        let ans = &by_call[&sub];
                        for tuple in ans {
                            if let Some(e2) = extend_env(atom, tuple, env) {
                                next.push(e2);
                            }
                        }
                    }
                }
                Literal::Neg(atom) => {
                    for env in &envs {
                        let sub = Call::from_atom(atom, env);
                        if sub.pattern.iter().any(|p| p.is_none()) {
                            let unbound = atom
                                .args
                                .iter()
                                .find_map(|t| match t {
                                    Term::Var(v) if !env.contains_key(v) => Some(v.clone()),
                                    _ => None,
                                })
                                .unwrap_or_default();
                            return Err(SessionError::Unbound(unbound));
                        }
                        let dep_before = self.dep_min;
                        let ans = self.solve_call(&sub, depth + 1)?;
                        // Stratification guarantees the negated call
                        // completes; a dependency on an in-progress call
                        // here would make negation unsound.
                        debug_assert_eq!(dep_before, self.dep_min);
                        if ans.is_empty() {
                            next.push(env.clone());
                        }
                    }
                }
                Literal::Cmp(op, l, r) => {
                    for env in &envs {
                        let a = eval_expr(l, env)?;
                        let b = eval_expr(r, env)?;
                        if builtin::compare(*op, &a, &b)? {
                            next.push(env.clone());
                        }
                    }
                }
                Literal::Is(v, e) => {
                    for env in &envs {
                        let val = eval_expr(e, env)?;
                        match env.get(v) {
                            Some(bound) if *bound == val => next.push(env.clone()),
                            Some(_) => {}
                            None => {
                                let mut e2 = env.clone();
                                e2.insert(v.clone(), val);
                                next.push(e2);
                            }
                        }
                    }
                }
            }
            // Distinct environments stay distinct under every literal
            // kind (answer sets are duplicate-free and fresh-variable
            // positions determine the extension), so no dedup pass.
            envs = next;
        }
        Ok(envs)
    }
}

/// Unify the rule head with a call pattern: `None` on constant clash,
/// otherwise the environment the bound positions induce.
fn bind_head(head: &Atom, pattern: &[Option<Value>]) -> Option<Env> {
    let mut env = Env::new();
    for (arg, p) in head.args.iter().zip(pattern) {
        match (arg, p) {
            (Term::Const(c), Some(v)) if c != v => return None,
            (Term::Const(_), _) => {}
            (Term::Var(x), Some(v)) => match env.get(x) {
                Some(prev) if prev != v => return None,
                Some(_) => {}
                None => {
                    env.insert(x.clone(), v.clone());
                }
            },
            (Term::Var(_), None) => {}
        }
    }
    Some(env)
}

fn ground_head(head: &Atom, env: &Env) -> Result<Tuple, SessionError> {
    head.args
        .iter()
        .map(|t| match t {
            Term::Const(c) => Ok(c.clone()),
            Term::Var(v) => {
                env.get(v).cloned().ok_or_else(|| SessionError::Unbound(v.clone()))
            }
        })
        .collect()
}

fn extend_env(atom: &Atom, tuple: &Tuple, env: &Env) -> Option<Env> {
    let mut out = env.clone();
    for (arg, val) in atom.args.iter().zip(tuple) {
        match arg {
            Term::Const(c) => {
                if c != val {
                    return None;
                }
            }
            Term::Var(v) => match out.get(v) {
                Some(prev) if prev != val => return None,
                Some(_) => {}
                None => {
                    out.insert(v.clone(), val.clone());
                }
            },
        }
    }
    Some(out)
}

fn eval_expr(e: &Expr, env: &Env) -> Result<Value, SessionError> {
    match e {
        Expr::Term(Term::Const(v)) => Ok(v.clone()),
        Expr::Term(Term::Var(v)) => {
            env.get(v).cloned().ok_or_else(|| SessionError::Unbound(v.clone()))
        }
        Expr::Arith(op, l, r) => {
            let a = eval_expr(l, env)?;
            let b = eval_expr(r, env)?;
            Ok(builtin::arith(*op, &a, &b)?)
        }
        Expr::Func(name, args) => {
            let vals: Result<Vec<Value>, SessionError> =
                args.iter().map(|a| eval_expr(a, env)).collect();
            Ok(builtin::apply_func(name, &vals?)?)
        }
    }
}

// ---------------------------------------------------------------------------
// Session-level entry points

/// Result of a top-level query: the projected variable bindings plus the
/// counters this query added.
#[derive(Debug, Clone)]
pub struct QueryResult {
    /// Projection variables, in first-occurrence order across the bodies.
    pub vars: Vec<String>,
    pub rows: BTreeSet<Tuple>,
    pub counters: Counters,
}

impl Session {
    /// Raw external relations currently visible, keyed by predicate.
    /// Relations already represented by a loaded persistent predicate and
    /// persistence backing objects are excluded.
    pub fn external_relations(&mut self) -> Result<HashMap<PredKey, ExternalRelation>, SessionError> {
        let mut names = self.connections.open_names();
        // The current connection wins name clashes.
        if let Some(cur) = &self.current_db {
            names.retain(|n| n != cur);
            names.insert(0, cur.clone());
        }
        let mut out: HashMap<PredKey, ExternalRelation> = HashMap::new();
        for name in names {
            let driver = self.connections.driver(&name)?;
            for rel in driver.list_relations()? {
                if rel.is_persistence_object() {
                    continue;
                }
                let key = (rel.name.clone(), rel.columns.len());
                if self.persistent.contains_key(&key) {
                    continue;
                }
                out.entry(key).or_insert_with(|| ExternalRelation {
                    connection: name.clone(),
                    schema: PredicateSchema { name: rel.name.clone(), columns: rel.columns.clone() },
                });
            }
        }
        Ok(out)
    }

    /// Schemas of everything queryable externally: raw relations plus
    /// loaded persistent predicates.
    pub fn external_schemas(&mut self) -> Result<HashMap<PredKey, PredicateSchema>, SessionError> {
        let mut out: HashMap<PredKey, PredicateSchema> = self
            .external_relations()?
            .into_iter()
            .map(|(k, e)| (k, e.schema))
            .collect();
        for (k, rec) in &self.persistent {
            out.insert(k.clone(), rec.schema.clone());
        }
        Ok(out)
    }

    /// Solve a top-level query given as normalized disjunctive bodies.
    pub fn solve_query(&mut self, bodies: &[Vec<Literal>]) -> Result<QueryResult, SessionError> {
        // Projection: distinct variables in first-occurrence order.
        let mut vars: Vec<String> = Vec::new();
        for body in bodies {
            for lit in body {
                for v in lit.vars() {
                    if !vars.contains(&v) {
                        vars.push(v.clone());
                    }
                }
            }
        }
        // Each disjunct must bind every projected variable.
        for body in bodies {
            let head = Atom {
                pred: "_query".to_string(),
                args: vars.iter().map(|v| Term::Var(v.clone())).collect(),
            };
            let probe = NormalRule { head, body: body.clone() };
            let report = is_safe(&probe);
            if !report.safe {
                return Err(SessionError::UnsafeRule {
                    rule: probe.to_string(),
                    reasons: report.violations.join("; "),
                });
            }
        }

        let external = self.external_relations()?;
        let all_rules = self.all_rules();
        let ext_keys: Vec<PredKey> = external.keys().cloned().collect();
        let pdg = build_pdg(&all_rules, &ext_keys);
        stratify(&pdg)?;

        let start = self.counters;
        let mut eval = Eval {
            rules: &self.rules,
            persistent: &self.persistent,
            external: &external,
            connections: &mut self.connections,
            flags: self.flags,
            counters: &mut self.counters,
            registry: &mut self.tables.completed,
            pdg: &pdg,
            tables: HashMap::new(),
            fetch_cache: HashMap::new(),
            total: 0,
            dep_min: usize::MAX,
        };

        let mut rows: BTreeSet<Tuple> = BTreeSet::new();
        for body in bodies {
            let envs = eval.solve_body(body, vec![Env::new()], 0)?;
            for env in envs {
                let tuple: Result<Tuple, SessionError> = vars
                    .iter()
                    .map(|v| {
                        env.get(v).cloned().ok_or_else(|| SessionError::Unbound(v.clone()))
                    })
                    .collect();
                rows.insert(tuple?);
            }
        }

        // Detect the single-atom goal shape for answer-table policy.
        let single_goal: Option<PredKey> = match bodies {
            [body] => match body.as_slice() {
                [Literal::Pos(atom)] => Some(atom.key()),
                _ => None,
            },
            _ => None,
        };
        let nonrecursive_goal = single_goal.as_ref().map_or(false, |g| {
            !pdg.is_recursive(g) && pdg.reachable(g).iter().all(|k| !pdg.is_recursive(k))
        });

        // Answer table left behind by this query.
        self.last_answer_table.clear();
        let keep_only_goal = self.flags.nonrecursive_cache && nonrecursive_goal;
        for (call, entry) in &eval.tables {
            if keep_only_goal && Some(&call.pred) != single_goal.as_ref() {
                continue;
            }
            let slot = self.last_answer_table.entry(call.pred.clone()).or_default();
            slot.extend(entry.answers.iter().cloned());
        }

        // Promote completed tables for cross-query reuse.
        if self.flags.complete_computations {
            for (call, entry) in eval.tables {
                if !entry.complete {
                    continue;
                }
                if keep_only_goal && Some(&call.pred) != single_goal.as_ref() {
                    continue;
                }
                self.tables.completed.entry(call).or_insert(entry.answers);
            }
        }

        Ok(QueryResult { vars, rows, counters: self.counters.since(&start) })
    }

    /// Parse and solve a query text.
    pub fn query_text(&mut self, text: &str) -> Result<QueryResult, SessionError> {
        let groups = crate::ast::parse_query(text)?;
        let rule = crate::ast::Rule {
            head: Atom { pred: "_query".to_string(), args: Vec::new() },
            body: groups,
        };
        let bodies: Vec<Vec<Literal>> =
            crate::ast::normalize(&rule).into_iter().map(|r| r.body).collect();
        self.solve_query(&bodies)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::Connections;
    use crate::session::Session;
    use std::collections::BTreeSet;

    fn local_session(program: &str) -> Session {
        let mut s = Session::new(Connections::new("", Vec::new()));
        for line in s.consult_text(program) {
            assert!(!line.starts_with("Error"), "{}", line);
        }
        s
    }

    fn rows(s: &mut Session, query: &str) -> BTreeSet<Tuple> {
        s.query_text(query).unwrap().rows.into_iter().collect()
    }

    fn ints(rows: &BTreeSet<Tuple>) -> BTreeSet<Vec<i64>> {
        rows.iter()
            .map(|r| {
                r.iter()
                    .map(|v| match v {
                        Value::Int(i) => *i,
                        other => panic!("expected int, got {:?}", other),
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn transitive_closure_reaches_fixpoint() {
        let mut s = local_session(
            "edge(1,2). edge(2,3). edge(3,4).\n\
             path(X,Y) :- edge(X,Y).\n\
             path(X,Y) :- edge(X,Z), path(Z,Y).",
        );
        let got = ints(&rows(&mut s, "path(X,Y)"));
        let want: BTreeSet<Vec<i64>> = [
            vec![1, 2], vec![1, 3], vec![1, 4],
            vec![2, 3], vec![2, 4], vec![3, 4],
        ]
        .into_iter()
        .collect();
        assert_eq!(got, want);
        assert_eq!(ints(&rows(&mut s, "path(1,Y)")), [vec![2], vec![3], vec![4]].into_iter().collect());
        assert!(rows(&mut s, "path(4,Y)").is_empty());
    }

    #[test]
    fn stratified_negation_uses_completed_lower_strata() {
        let mut s = local_session(
            "node(1). node(2). node(3).\n\
             edge(1,2).\n\
             reach(X,Y) :- edge(X,Y).\n\
             reach(X,Y) :- edge(X,Z), reach(Z,Y).\n\
             sep(X,Y) :- node(X), node(Y), not(reach(X,Y)).",
        );
        let got = ints(&rows(&mut s, "sep(1,Y)"));
        assert_eq!(got, [vec![1], vec![3]].into_iter().collect());
    }

    #[test]
    fn unstratifiable_programs_are_rejected_at_query_time() {
        let mut s = local_session("q(1).\np(X) :- q(X), not(r(X)).\nr(X) :- p(X).");
        assert!(matches!(s.query_text("p(X)"), Err(SessionError::Catalog(_))));
    }

    #[test]
    fn arithmetic_and_comparisons_filter_and_compute() {
        let mut s = local_session("n(1). n(2). n(3).\ndouble(X,Y) :- n(X), Y is X*2.\nbig(X) :- n(X), X > 1.");
        assert_eq!(
            ints(&rows(&mut s, "double(X,Y)")),
            [vec![1, 2], vec![2, 4], vec![3, 6]].into_iter().collect()
        );
        assert_eq!(ints(&rows(&mut s, "big(X)")), [vec![2], vec![3]].into_iter().collect());
        // Division produces floats.
        let halves = rows(&mut s, "n(X), Y is X/2, X = 1");
        assert_eq!(halves.into_iter().next().unwrap(), vec![Value::Int(1), Value::Float(0.5)]);
    }

    #[test]
    fn unsafe_queries_are_reported_not_evaluated() {
        let mut s = local_session("q(1).");
        assert!(matches!(s.query_text("q(X), Y > 2"), Err(SessionError::UnsafeRule { .. })));
        assert!(matches!(s.query_text("not(q(X))"), Err(SessionError::UnsafeRule { .. })));
    }

    #[test]
    fn unknown_predicates_are_an_error() {
        let mut s = local_session("q(1).");
        assert!(matches!(s.query_text("nosuch(X)"), Err(SessionError::UnknownPredicate(..))));
    }

    #[test]
    fn call_subsumption_is_reflexive_and_ordered_by_generality() {
        let free = Call {
            pred: ("p".to_string(), 2),
            pattern: vec![None, None],
        };
        let bound = Call {
            pred: ("p".to_string(), 2),
            pattern: vec![Some(Value::Int(1)), None],
        };
        assert!(free.subsumes(&free));
        assert!(free.subsumes(&bound));
        assert!(!bound.subsumes(&free));
        assert!(bound.admits(&vec![Value::Int(1), Value::Int(9)]));
        assert!(!bound.admits(&vec![Value::Int(2), Value::Int(9)]));
    }

    #[test]
    fn counters_track_iterations_and_resolutions() {
        let mut s = local_session("e(1,2). e(2,3).\nt(X,Y) :- e(X,Y).\nt(X,Y) :- e(X,Z), t(Z,Y).");
        let before = s.counters;
        let result = s.query_text("t(X,Y)").unwrap();
        assert!(result.counters.iterations >= 2);
        assert!(result.counters.resolutions >= 2);
        assert_eq!(s.counters.iterations - before.iterations, result.counters.iterations);
    }

    #[test]
    fn duplicate_facts_do_not_duplicate_answers() {
        let mut s = local_session("q(1). q(1). q(1).\np(X,Y) :- q(X), q(Y).");
        assert_eq!(rows(&mut s, "p(X,Y)").len(), 1);
        let result = s.query_text("p(X,Y)").unwrap();
        assert_eq!(result.rows.len(), 1);
    }
}
