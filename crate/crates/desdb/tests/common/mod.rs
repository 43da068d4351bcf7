//! Shared test support: an independent naive bottom-up evaluator used as
//! an oracle, a derivation-counting oracle for translated rules, and
//! random program generators.
//!
//! The oracle deliberately shares no evaluation machinery with the engine
//! under test: stratification and fixpoint are reimplemented here in the
//! most straightforward way possible.

#![allow(dead_code)]
#![allow(unused_assignments)] // fresh-variable counters outlive their last draw

use desdb::ast::{Atom, Expr, Literal, NormalRule, PredKey, Term};
use desdb::builtin;
use desdb::value::Value;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet, HashMap};

pub type Tuple = Vec<Value>;
pub type Model = HashMap<PredKey, BTreeSet<Tuple>>;

// ---------------------------------------------------------------------------
// Naive stratified bottom-up evaluation

fn eval_expr(e: &Expr, env: &HashMap<String, Value>) -> Option<Value> {
    match e {
        Expr::Term(Term::Const(v)) => Some(v.clone()),
        Expr::Term(Term::Var(v)) => env.get(v).cloned(),
        Expr::Arith(op, l, r) => {
            builtin::arith(*op, &eval_expr(l, env)?, &eval_expr(r, env)?).ok()
        }
        Expr::Func(name, args) => {
            let args: Option<Vec<Value>> = args.iter().map(|a| eval_expr(a, env)).collect();
            builtin::apply_func(name, &args?).ok()
        }
    }
}

fn match_atom(atom: &Atom, row: &Tuple, env: &HashMap<String, Value>) -> Option<HashMap<String, Value>> {
    let mut env = env.clone();
    for (term, value) in atom.args.iter().zip(row) {
        match term {
            Term::Const(c) => {
                if c != value {
                    return None;
                }
            }
            Term::Var(v) => match env.get(v) {
                Some(bound) => {
                    if bound != value {
                        return None;
                    }
                }
                None => {
                    env.insert(v.clone(), value.clone());
                }
            },
        }
    }
    Some(env)
}

fn ground_atom(atom: &Atom, env: &HashMap<String, Value>) -> Tuple {
    atom.args
        .iter()
        .map(|t| match t {
            Term::Const(c) => c.clone(),
            Term::Var(v) => env.get(v).expect("oracle: unbound variable").clone(),
        })
        .collect()
}

/// All environments satisfying `body` against `model`, in literal order.
/// Returned with multiplicity one per distinct binding path; callers that
/// need bags should use `rule_derivations` over explicit row vectors.
fn solve_body(
    body: &[Literal],
    model: &Model,
    env: HashMap<String, Value>,
    out: &mut Vec<HashMap<String, Value>>,
) {
    match body.split_first() {
        None => out.push(env),
        Some((lit, rest)) => match lit {
            Literal::Pos(atom) => {
                if let Some(rows) = model.get(&atom.key()) {
                    for row in rows {
                        if let Some(next) = match_atom(atom, row, &env) {
                            solve_body(rest, model, next, out);
                        }
                    }
                }
            }
            Literal::Neg(atom) => {
                let row = ground_atom(atom, &env);
                let present = model.get(&atom.key()).map_or(false, |rows| rows.contains(&row));
                if !present {
                    solve_body(rest, model, env, out);
                }
            }
            Literal::Cmp(op, l, r) => {
                let (Some(lv), Some(rv)) = (eval_expr(l, &env), eval_expr(r, &env)) else {
                    return;
                };
                if builtin::compare(*op, &lv, &rv) == Ok(true) {
                    solve_body(rest, model, env, out);
                }
            }
            Literal::Is(v, e) => {
                let Some(val) = eval_expr(e, &env) else { return };
                match env.get(v) {
                    Some(bound) => {
                        if *bound == val {
                            solve_body(rest, model, env.clone(), out);
                        }
                    }
                    None => {
                        let mut next = env.clone();
                        next.insert(v.clone(), val);
                        solve_body(rest, model, next, out);
                    }
                }
            }
        },
    }
}

/// Independent stratification: minimal stratum per predicate, computed by
/// fixpoint directly over rule bodies. Panics on unstratifiable input;
/// the generators only produce stratified programs.
fn strata_of(rules: &HashMap<PredKey, Vec<NormalRule>>) -> BTreeMap<PredKey, usize> {
    let mut strata: BTreeMap<PredKey, usize> = BTreeMap::new();
    for (k, rs) in rules {
        strata.insert(k.clone(), 1);
        for r in rs {
            for (callee, _) in r.callees() {
                strata.insert(callee, 1);
            }
        }
    }
    let max = strata.len() + 1;
    let mut changed = true;
    while changed {
        changed = false;
        for rs in rules.values() {
            for r in rs {
                let head = r.head.key();
                for (callee, positive) in r.callees() {
                    let need = strata[&callee] + usize::from(!positive);
                    if strata[&head] < need {
                        assert!(need <= max, "oracle: program is not stratifiable");
                        *strata.get_mut(&head).unwrap() = need;
                        changed = true;
                    }
                }
            }
        }
    }
    strata
}

/// Naive stratified bottom-up model of a normalized program. Facts are
/// rules with empty bodies.
pub fn naive_model(rules: &HashMap<PredKey, Vec<NormalRule>>) -> Model {
    let strata = strata_of(rules);
    let mut model: Model = strata.keys().map(|k| (k.clone(), BTreeSet::new())).collect();
    let max_stratum = strata.values().copied().max().unwrap_or(1);
    for level in 1..=max_stratum {
        let mut changed = true;
        while changed {
            changed = false;
            for (k, rs) in rules {
                if strata[k] != level {
                    continue;
                }
                for r in rs {
                    let mut envs = Vec::new();
                    solve_body(&r.body, &model, HashMap::new(), &mut envs);
                    for env in envs {
                        let row = ground_atom(&r.head, &env);
                        if model.get_mut(k).unwrap().insert(row) {
                            changed = true;
                        }
                    }
                }
            }
        }
    }
    model
}

/// Derivation-counting oracle for a single non-recursive rule over an
/// extensional database: the multiset of head instantiations, one per
/// derivation path through the positive body atoms (in body order).
pub fn rule_derivations(rule: &NormalRule, edb: &HashMap<PredKey, Vec<Tuple>>) -> Vec<Tuple> {
    fn walk(
        body: &[Literal],
        edb: &HashMap<PredKey, Vec<Tuple>>,
        env: HashMap<String, Value>,
        out: &mut Vec<HashMap<String, Value>>,
    ) {
        match body.split_first() {
            None => out.push(env),
            Some((lit, rest)) => match lit {
                Literal::Pos(atom) => {
                    for row in edb.get(&atom.key()).map_or(&[][..], |v| v.as_slice()) {
                        if let Some(next) = match_atom(atom, row, &env) {
                            walk(rest, edb, next, out);
                        }
                    }
                }
                Literal::Neg(atom) => {
                    let row = ground_atom(atom, &env);
                    let present =
                        edb.get(&atom.key()).map_or(false, |rows| rows.contains(&row));
                    if !present {
                        walk(rest, edb, env, out);
                    }
                }
                Literal::Cmp(op, l, r) => {
                    let (Some(lv), Some(rv)) = (eval_expr(l, &env), eval_expr(r, &env)) else {
                        return;
                    };
                    if builtin::compare(*op, &lv, &rv) == Ok(true) {
                        walk(rest, edb, env, out);
                    }
                }
                Literal::Is(v, e) => {
                    let Some(val) = eval_expr(e, &env) else { return };
                    match env.get(v) {
                        Some(bound) if *bound == val => walk(rest, edb, env.clone(), out),
                        Some(_) => {}
                        None => {
                            let mut next = env.clone();
                            next.insert(v.clone(), val);
                            walk(rest, edb, next, out);
                        }
                    }
                }
            },
        }
    }
    let mut envs = Vec::new();
    walk(&rule.body, edb, HashMap::new(), &mut envs);
    envs.iter().map(|env| ground_atom(&rule.head, env)).collect()
}

// ---------------------------------------------------------------------------
// Random generators

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A randomly generated stratified program, kept as source text so the
/// same input drives both the session under test and the oracle.
#[derive(Debug, Clone)]
pub struct GenProgram {
    pub text: String,
    /// Predicates by generation level; level 0 holds only facts.
    pub preds: Vec<Vec<(String, usize)>>,
}

impl GenProgram {
    pub fn all_preds(&self) -> Vec<(String, usize)> {
        self.preds.iter().flatten().cloned().collect()
    }

    pub fn extensional_preds(&self) -> &[(String, usize)] {
        &self.preds[0]
    }

    pub fn derived_preds(&self) -> Vec<(String, usize)> {
        self.preds[1..].iter().flatten().cloned().collect()
    }

    pub fn rules(&self) -> HashMap<PredKey, Vec<NormalRule>> {
        let mut out: HashMap<PredKey, Vec<NormalRule>> = HashMap::new();
        for item in desdb::ast::parse_program(&self.text).expect("generated program parses") {
            if let desdb::ast::ProgramItem::Rule(r) = item {
                for n in desdb::ast::normalize(&r) {
                    out.entry(n.head.key()).or_default().push(n);
                }
            }
        }
        out
    }
}

fn var_name(i: usize) -> String {
    format!("V{}", i)
}

/// Random stratified, safe, int-typed program. Level-0 predicates are
/// extensional; every higher level may call its own level positively
/// (recursion) and strictly lower levels under negation.
pub fn gen_program(rng: &mut ChaCha8Rng, tag: &str) -> GenProgram {
    let levels = rng.gen_range(2..=3usize);
    let mut preds: Vec<Vec<(String, usize)>> = Vec::new();
    let mut lines: Vec<String> = Vec::new();

    // Extensional layer: 1-3 predicates with up to 12 distinct facts each.
    let mut level0 = Vec::new();
    for i in 0..rng.gen_range(1..=3usize) {
        let name = format!("{}b{}", tag, i);
        let arity = rng.gen_range(1..=2usize);
        let mut facts: BTreeSet<Vec<i64>> = BTreeSet::new();
        for _ in 0..rng.gen_range(1..=12usize) {
            facts.insert((0..arity).map(|_| rng.gen_range(0..8i64)).collect());
        }
        for f in &facts {
            let args: Vec<String> = f.iter().map(|v| v.to_string()).collect();
            lines.push(format!("{}({}).", name, args.join(",")));
        }
        level0.push((name, arity));
    }
    preds.push(level0);

    for level in 1..levels {
        let mut this_level: Vec<(String, usize)> = Vec::new();
        for i in 0..rng.gen_range(1..=3usize) {
            let name = format!("{}d{}_{}", tag, level, i);
            let arity = rng.gen_range(1..=2usize);
            this_level.push((name, arity));
        }
        // Rules may call predicates declared on this same level (recursion),
        // so collect the level first and then emit rule bodies.
        for (name, arity) in &this_level {
            let lower: Vec<(String, usize)> =
                preds.iter().flatten().cloned().collect();
            for rule_no in 0..rng.gen_range(1..=2usize) {
                let mut body: Vec<String> = Vec::new();
                let mut bound: Vec<String> = Vec::new();
                let mut next_var = 0usize;
                let mut same_level_call = false;
                let n_pos = rng.gen_range(1..=2usize);
                for _atom_no in 0..n_pos {
                    // Positive atom: mostly lower levels, sometimes this one.
                    // Each predicate's first rule only reads lower levels so
                    // every column type is inferable from ground facts.
                    let (cp, ca) = if rule_no > 0 && rng.gen_bool(0.2) {
                        same_level_call = true;
                        this_level[rng.gen_range(0..this_level.len())].clone()
                    } else {
                        lower[rng.gen_range(0..lower.len())].clone()
                    };
                    let mut args = Vec::new();
                    for _ in 0..ca {
                        if !bound.is_empty() && rng.gen_bool(0.3) {
                            args.push(bound[rng.gen_range(0..bound.len())].clone());
                        } else if rng.gen_bool(0.15) {
                            args.push(rng.gen_range(0..8i64).to_string());
                        } else {
                            let v = var_name(next_var);
                            next_var += 1;
                            bound.push(v.clone());
                            args.push(v);
                        }
                    }
                    body.push(format!("{}({})", cp, args.join(",")));
                }
                // Optional comparison over a bound variable.
                if !bound.is_empty() && rng.gen_bool(0.3) {
                    let v = &bound[rng.gen_range(0..bound.len())];
                    let ops = ["<", ">", ">=", "=<", "\\="];
                    let op = ops[rng.gen_range(0..ops.len())];
                    body.push(format!("{}{}{}", v, op, rng.gen_range(0..8i64)));
                }
                // Optional arithmetic binding a fresh variable. Skipped in
                // rules with a same-level call: computed values flowing
                // around a cycle would grow the model without bound.
                if !same_level_call && !bound.is_empty() && rng.gen_bool(0.3) {
                    let src = bound[rng.gen_range(0..bound.len())].clone();
                    let tgt = var_name(next_var);
                    next_var += 1;
                    let ops = ["+", "-", "*"];
                    let op = ops[rng.gen_range(0..ops.len())];
                    body.push(format!("{} is {}{}{}", tgt, src, op, rng.gen_range(1..4i64)));
                    bound.push(tgt);
                }
                // Optional negation of a strictly lower predicate, fully bound.
                if !bound.is_empty() && rng.gen_bool(0.35) {
                    let (cp, ca) = lower[rng.gen_range(0..lower.len())].clone();
                    let args: Vec<String> = (0..ca)
                        .map(|_| {
                            if rng.gen_bool(0.7) {
                                bound[rng.gen_range(0..bound.len())].clone()
                            } else {
                                rng.gen_range(0..8i64).to_string()
                            }
                        })
                        .collect();
                    body.push(format!("not({}({}))", cp, args.join(",")));
                }
                let head_args: Vec<String> = (0..*arity)
                    .map(|_| {
                        if !bound.is_empty() && rng.gen_bool(0.85) {
                            bound[rng.gen_range(0..bound.len())].clone()
                        } else {
                            rng.gen_range(0..8i64).to_string()
                        }
                    })
                    .collect();
                lines.push(format!("{}({}) :- {}.", name, head_args.join(","), body.join(", ")));
            }
        }
        preds.push(this_level);
    }
    GenProgram { text: lines.join("\n"), preds }
}

/// Random safe, non-recursive, SQL-expressible rule plus a random
/// extensional database it reads from (distinct int facts, <= 30 in
/// total per relation).
pub struct GenRule {
    pub rule: NormalRule,
    pub edb: HashMap<PredKey, Vec<Tuple>>,
    pub schemas: HashMap<PredKey, desdb::catalog::PredicateSchema>,
}

pub fn gen_translatable_rule(rng: &mut ChaCha8Rng, tag: &str) -> GenRule {
    use desdb::catalog::PredicateSchema;
    use desdb::value::ColumnType;

    let n_rel = rng.gen_range(1..=3usize);
    let mut edb: HashMap<PredKey, Vec<Tuple>> = HashMap::new();
    let mut schemas = HashMap::new();
    let mut rels: Vec<(String, usize)> = Vec::new();
    for i in 0..n_rel {
        let name = format!("{}r{}", tag, i);
        let arity = rng.gen_range(1..=3usize);
        let mut facts: BTreeSet<Vec<i64>> = BTreeSet::new();
        for _ in 0..rng.gen_range(1..=30usize) {
            facts.insert((0..arity).map(|_| rng.gen_range(0..8i64)).collect());
        }
        let rows: Vec<Tuple> =
            facts.iter().map(|f| f.iter().map(|v| Value::Int(*v)).collect()).collect();
        let key = (name.clone(), arity);
        edb.insert(key.clone(), rows);
        schemas.insert(
            key,
            PredicateSchema {
                name: name.clone(),
                columns: (0..arity).map(|c| (format!("c{}", c), ColumnType::Int)).collect(),
            },
        );
        rels.push((name, arity));
    }

    let mut body: Vec<String> = Vec::new();
    let mut bound: Vec<String> = Vec::new();
    let mut next_var = 0usize;
    for _ in 0..rng.gen_range(1..=3usize) {
        let (rp, ra) = rels[rng.gen_range(0..rels.len())].clone();
        let mut args = Vec::new();
        for _ in 0..ra {
            if !bound.is_empty() && rng.gen_bool(0.25) {
                args.push(bound[rng.gen_range(0..bound.len())].clone());
            } else if rng.gen_bool(0.15) {
                args.push(rng.gen_range(0..8i64).to_string());
            } else {
                let v = var_name(next_var);
                next_var += 1;
                bound.push(v.clone());
                args.push(v);
            }
        }
        body.push(format!("{}({})", rp, args.join(",")));
    }
    if !bound.is_empty() && rng.gen_bool(0.4) {
        let v = &bound[rng.gen_range(0..bound.len())];
        let ops = ["<", ">", ">=", "=<", "\\=", "="];
        let op = ops[rng.gen_range(0..ops.len())];
        body.push(format!("{}{}{}", v, op, rng.gen_range(0..8i64)));
    }
    if !bound.is_empty() && rng.gen_bool(0.4) {
        let src = bound[rng.gen_range(0..bound.len())].clone();
        let tgt = var_name(next_var);
        next_var += 1;
        let expr = if rng.gen_bool(0.2) {
            format!("abs({}-{})", src, rng.gen_range(0..8i64))
        } else {
            let ops = ["+", "-", "*"];
            let op = ops[rng.gen_range(0..ops.len())];
            format!("{}{}{}", src, op, rng.gen_range(1..4i64))
        };
        body.push(format!("{} is {}", tgt, expr));
        bound.push(tgt);
    }
    if !bound.is_empty() && rng.gen_bool(0.35) {
        let (rp, ra) = rels[rng.gen_range(0..rels.len())].clone();
        let args: Vec<String> = (0..ra)
            .map(|_| {
                if rng.gen_bool(0.7) {
                    bound[rng.gen_range(0..bound.len())].clone()
                } else {
                    rng.gen_range(0..8i64).to_string()
                }
            })
            .collect();
        body.push(format!("not({}({}))", rp, args.join(",")));
    }
    let head_arity = rng.gen_range(1..=3usize);
    let head_args: Vec<String> = (0..head_arity)
        .map(|_| {
            if !bound.is_empty() && rng.gen_bool(0.85) {
                bound[rng.gen_range(0..bound.len())].clone()
            } else {
                rng.gen_range(0..8i64).to_string()
            }
        })
        .collect();
    let text = format!("{}out({}) :- {}.", tag, head_args.join(","), body.join(", "));
    let rule = desdb::ast::normalize(&desdb::ast::parse_rule(&text).expect("generated rule parses"))
        .remove(0);
    GenRule { rule, edb, schemas }
}

// ---------------------------------------------------------------------------
// Session plumbing

use desdb::backend::{ConnectionConfig, Connections};
use desdb::Session;

pub fn mem_config(name: &str, store: &str, dialect: &str) -> ConnectionConfig {
    ConnectionConfig {
        name: name.to_string(),
        backend_kind: "embedded".to_string(),
        location: format!("mem:{}", store),
        dialect: dialect.to_string(),
    }
}

pub fn session_with(configs: Vec<ConnectionConfig>) -> Session {
    Session::new(Connections::new("", configs))
}

/// Load a program text, panicking on any reported error line.
pub fn load(session: &mut Session, text: &str) {
    for line in session.consult_text(text) {
        assert!(!line.starts_with("Error"), "load failed: {}", line);
    }
}

/// Solve `p(V1,...,Vn)` and return the answer set.
pub fn query_pred(session: &mut Session, pred: &str, arity: usize) -> BTreeSet<Tuple> {
    let vars: Vec<String> = (0..arity).map(|i| format!("Q{}", i)).collect();
    let text = format!("{}({})", pred, vars.join(","));
    session
        .query_text(&text)
        .unwrap_or_else(|e| panic!("query {} failed: {}", text, e))
        .rows
        .into_iter()
        .collect()
}
