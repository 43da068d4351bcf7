//! Translation of safe, non-recursive Datalog rules and facts into the
//! backend-neutral SQL AST, plus per-predicate view assembly.

use super::{Projection, SqlCond, SqlExpr, SqlQuery};
use crate::ast::{
    Atom, CmpOp, Expr, Literal, NormalRule, PredKey, Term, FUNC_REGISTRY,
};
use crate::catalog::{PredicateDependencyGraph, PredicateSchema};
use std::collections::HashMap;
use thiserror::Error;

/// Where a rule executes: in the external database or locally.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RuleClass {
    Translatable,
    LocalRecursive,
    LocalUnsupported(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TranslateError {
    #[error("no schema known for body predicate {0}/{1}")]
    UnknownSchema(String, usize),
    #[error("cannot translate non-ground fact {0}")]
    NonGroundFact(String),
    #[error("variable {0} has no binding during translation")]
    UnboundVariable(String),
}

/// Classify one normalized, safe rule. `available` lists the predicates
/// whose full meaning is queryable as a relation on the target
/// connection (external tables/views and residue-free persistent
/// predicates).
pub fn classify_rule(
    rule: &NormalRule,
    pdg: &PredicateDependencyGraph,
    available: &std::collections::HashSet<PredKey>,
) -> RuleClass {
    let head = rule.head.key();
    if pdg.is_recursive(&head) {
        let scc = pdg.same_scc(&head);
        let through_body = rule.callees().iter().any(|(k, _)| scc.contains(k));
        if through_body {
            return RuleClass::LocalRecursive;
        }
    }
    for lit in &rule.body {
        let mut funcs = Vec::new();
        match lit {
            Literal::Cmp(_, l, r) => {
                l.funcs(&mut funcs);
                r.funcs(&mut funcs);
            }
            Literal::Is(_, e) => e.funcs(&mut funcs),
            Literal::Pos(a) | Literal::Neg(a) => {
                if a.is_propositional() {
                    return RuleClass::LocalUnsupported(format!(
                        "propositional predicate {} is not supported externally",
                        a.pred
                    ));
                }
                let k = a.key();
                if k != rule.head.key() && !available.contains(&k) {
                    return RuleClass::LocalUnsupported(format!(
                        "predicate {}/{} is not available in the external database",
                        k.0, k.1
                    ));
                }
            }
        }
        for f in funcs {
            if !FUNC_REGISTRY.contains(&f.as_str()) {
                return RuleClass::LocalUnsupported(format!(
                    "function '{}' is outside the supported registry",
                    f
                ));
            }
        }
    }
    RuleClass::Translatable
}

/// What a variable denotes during translation.
#[derive(Debug, Clone)]
enum Binding {
    Col(SqlExpr),
    Expr(SqlExpr),
}

impl Binding {
    fn expr(&self) -> &SqlExpr {
        match self {
            Binding::Col(e) | Binding::Expr(e) => e,
        }
    }
}

fn schema_of<'a>(
    schemas: &'a HashMap<PredKey, PredicateSchema>,
    key: &PredKey,
) -> Result<&'a PredicateSchema, TranslateError> {
    schemas.get(key).ok_or_else(|| TranslateError::UnknownSchema(key.0.clone(), key.1))
}

fn translate_expr(
    e: &Expr,
    bindings: &HashMap<String, Binding>,
) -> Result<SqlExpr, TranslateError> {
    Ok(match e {
        Expr::Term(Term::Const(v)) => SqlExpr::Const(v.clone()),
        Expr::Term(Term::Var(v)) => bindings
            .get(v)
            .ok_or_else(|| TranslateError::UnboundVariable(v.clone()))?
            .expr()
            .clone(),
        Expr::Arith(op, l, r) => SqlExpr::Arith(
            *op,
            Box::new(translate_expr(l, bindings)?),
            Box::new(translate_expr(r, bindings)?),
        ),
        Expr::Func(name, args) => SqlExpr::Func(
            name.clone(),
            args.iter()
                .map(|a| translate_expr(a, bindings))
                .collect::<Result<Vec<_>, _>>()?,
        ),
    })
}

/// Translate one rule into a SELECT: one aliased relation per positive
/// body atom (rel1, rel2, ... in body order), shared-variable equalities,
/// constant bindings, comparisons and `is` equalities in the WHERE
/// clause, and NOT EXISTS subqueries for negated atoms.
pub fn dx_translate(
    rule: &NormalRule,
    schemas: &HashMap<PredKey, PredicateSchema>,
) -> Result<SqlQuery, TranslateError> {
    let mut bindings: HashMap<String, Binding> = HashMap::new();
    let mut from: Vec<(String, Option<String>)> = Vec::new();
    let mut conds: Vec<SqlCond> = Vec::new();
    let mut alias_count = 0usize;

    // First pass: positive atoms establish the from-list and column
    // bindings; other literals are handled in body order afterwards so
    // every variable they use is already bound.
    for lit in &rule.body {
        if let Literal::Pos(atom) = lit {
            alias_count += 1;
            let alias = format!("rel{}", alias_count);
            let schema = schema_of(schemas, &atom.key())?;
            from.push((atom.pred.clone(), Some(alias.clone())));
            for (i, arg) in atom.args.iter().enumerate() {
                let col = SqlExpr::Col {
                    table: Some(alias.clone()),
                    column: schema.columns[i].0.clone(),
                };
                match arg {
                    Term::Const(v) => {
                        conds.push(SqlCond::Cmp(CmpOp::Eq, col, SqlExpr::Const(v.clone())));
                    }
                    Term::Var(v) => match bindings.get(v) {
                        Some(prev) => {
                            conds.push(SqlCond::Cmp(CmpOp::Eq, col, prev.expr().clone()));
                        }
                        None => {
                            bindings.insert(v.clone(), Binding::Col(col));
                        }
                    },
                }
            }
        }
    }

    // `is` targets may chain; resolve them to expressions first.
    let mut pending: Vec<&Literal> =
        rule.body.iter().filter(|l| !matches!(l, Literal::Pos(_))).collect();
    let mut progress = true;
    while progress {
        progress = false;
        pending.retain(|lit| {
            if let Literal::Is(v, e) = lit {
                if bindings.contains_key(v) {
                    return true; // equality, handled below
                }
                if let Ok(sql) = translate_expr(e, &bindings) {
                    bindings.insert(v.clone(), Binding::Expr(sql));
                    progress = true;
                    return false;
                }
            }
            true
        });
    }

    let mut neg_alias = alias_count;
    for lit in &rule.body {
        match lit {
            Literal::Pos(_) => {}
            Literal::Cmp(op, l, r) => {
                conds.push(SqlCond::Cmp(
                    *op,
                    translate_expr(l, &bindings)?,
                    translate_expr(r, &bindings)?,
                ));
            }
            Literal::Is(v, e) => {
                if let Some(Binding::Col(col)) = bindings.get(v).cloned() {
                    conds.push(SqlCond::Cmp(CmpOp::Eq, col, translate_expr(e, &bindings)?));
                }
                // Expression-bound targets were resolved above.
            }
            Literal::Neg(atom) => {
                neg_alias += 1;
                conds.push(translate_negation(atom, neg_alias, &bindings, schemas)?);
            }
        }
    }

    let proj = head_projection(&rule.head, &bindings)?;
    if from.is_empty() {
        return Ok(SqlQuery::Fromless { proj, cond: SqlCond::conjoin(conds) });
    }
    Ok(SqlQuery::Select {
        proj: Projection::Cols(proj),
        from,
        cond: SqlCond::conjoin(conds),
    })
}

fn head_projection(
    head: &Atom,
    bindings: &HashMap<String, Binding>,
) -> Result<Vec<SqlExpr>, TranslateError> {
    head.args
        .iter()
        .map(|arg| match arg {
            Term::Const(v) => Ok(SqlExpr::Const(v.clone())),
            Term::Var(v) => bindings
                .get(v)
                .map(|b| b.expr().clone())
                .ok_or_else(|| TranslateError::UnboundVariable(v.clone())),
        })
        .collect()
}

/// Negation compiles to NOT EXISTS with correlated equalities.
fn translate_negation(
    atom: &Atom,
    alias_no: usize,
    outer: &HashMap<String, Binding>,
    schemas: &HashMap<PredKey, PredicateSchema>,
) -> Result<SqlCond, TranslateError> {
    let schema = schema_of(schemas, &atom.key())?;
    let alias = format!("rel{}", alias_no);
    let mut conds = Vec::new();
    let mut inner: HashMap<String, SqlExpr> = HashMap::new();
    for (i, arg) in atom.args.iter().enumerate() {
        let col =
            SqlExpr::Col { table: Some(alias.clone()), column: schema.columns[i].0.clone() };
        match arg {
            Term::Const(v) => {
                conds.push(SqlCond::Cmp(CmpOp::Eq, col, SqlExpr::Const(v.clone())))
            }
            Term::Var(v) => {
                if let Some(b) = outer.get(v) {
                    conds.push(SqlCond::Cmp(CmpOp::Eq, col, b.expr().clone()));
                } else if let Some(prev) = inner.get(v) {
                    conds.push(SqlCond::Cmp(CmpOp::Eq, col, prev.clone()));
                } else {
                    inner.insert(v.clone(), col);
                }
            }
        }
    }
    Ok(SqlCond::NotExists(Box::new(SqlQuery::Select {
        proj: Projection::Star,
        from: vec![(atom.pred.clone(), Some(alias))],
        cond: SqlCond::conjoin(conds),
    })))
}

/// Translate a ground fact into a from-less select of its constants.
pub fn translate_fact(fact: &NormalRule) -> Result<SqlQuery, TranslateError> {
    if !fact.is_ground_fact() {
        return Err(TranslateError::NonGroundFact(fact.to_string()));
    }
    let proj = fact
        .head
        .args
        .iter()
        .map(|t| match t {
            Term::Const(v) => SqlExpr::Const(v.clone()),
            Term::Var(_) => unreachable!(),
        })
        .collect();
    Ok(SqlQuery::Fromless { proj, cond: SqlCond::True })
}

/// Assemble the view body for a persistent predicate: the backing table
/// select followed by the translation of each translatable rule in
/// program order.
pub fn dl_to_sql(
    table_name: &str,
    rules: &[NormalRule],
    schemas: &HashMap<PredKey, PredicateSchema>,
) -> Result<SqlQuery, TranslateError> {
    let table_branch = SqlQuery::Select {
        proj: Projection::Star,
        from: vec![(table_name.to_string(), None)],
        cond: SqlCond::True,
    };
    if rules.is_empty() {
        return Ok(table_branch);
    }
    let mut branches = vec![table_branch];
    for rule in rules {
        branches.push(dx_translate(rule, schemas)?);
    }
    Ok(SqlQuery::UnionAll(branches))
}
