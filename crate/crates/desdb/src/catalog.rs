//! Predicate schemas, type consistency, the predicate dependency graph,
//! stratification, safety analysis and recursion detection.

use crate::ast::{Expr, Literal, NormalRule, PredKey, Term};
use crate::value::{ColumnType, Value, DEFAULT_STRING_LEN};
use petgraph::graph::{DiGraph, NodeIndex};
use std::collections::{HashMap, HashSet};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredicateSchema {
    pub name: String,
    pub columns: Vec<(String, ColumnType)>,
}

impl PredicateSchema {
    pub fn arity(&self) -> usize {
        self.columns.len()
    }

    pub fn key(&self) -> PredKey {
        (self.name.clone(), self.arity())
    }

    pub fn column_names(&self) -> Vec<String> {
        self.columns.iter().map(|(n, _)| n.clone()).collect()
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CatalogError {
    #[error("type declaration for {0}/{1} conflicts with an existing declaration")]
    DeclarationConflict(String, usize),
    #[error("predicate {pred}/{arity}: type mismatch at argument {arg} in {context}")]
    TypeMismatch { pred: String, arity: usize, arg: usize, context: String },
    #[error("predicate {0}/{1} cannot be typed: no declaration and no inference source")]
    Untypable(String, usize),
    #[error("arity of {0}/{1} conflicts with declared schema")]
    ArityMismatch(String, usize),
    #[error("duplicate argument name '{1}' in schema for {0}")]
    DuplicateArgName(String, String),
    #[error("predicate {0}/{1} is not stratifiable (cycle through negation)")]
    Unstratifiable(String, usize),
    #[error("rule calls unknown predicate {0}/{1}")]
    UnknownPredicate(String, usize),
}

/// Declared predicate schemas. Single writer; the engine reads between
/// commands only.
#[derive(Debug, Default, Clone)]
pub struct Catalog {
    declared: HashMap<PredKey, PredicateSchema>,
}

impl Catalog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn declared(&self, key: &PredKey) -> Option<&PredicateSchema> {
        self.declared.get(key)
    }

    pub fn declared_keys(&self) -> impl Iterator<Item = &PredKey> {
        self.declared.keys()
    }

    /// Record a schema. Re-declaring the identical schema is a no-op;
    /// a different schema for the same name/arity is a conflict.
    pub fn declare_type(&mut self, schema: PredicateSchema) -> Result<(), CatalogError> {
        let mut seen = HashSet::new();
        for (name, _) in &schema.columns {
            if !seen.insert(name.clone()) {
                return Err(CatalogError::DuplicateArgName(schema.name.clone(), name.clone()));
            }
        }
        let key = schema.key();
        if let Some(existing) = self.declared.get(&key) {
            if existing == &schema {
                return Ok(());
            }
            return Err(CatalogError::DeclarationConflict(key.0, key.1));
        }
        self.declared.insert(key, schema);
        Ok(())
    }

    pub fn undeclare(&mut self, key: &PredKey) {
        self.declared.remove(key);
    }
}

// ---------------------------------------------------------------------------
// Type inference

/// Infer or check schemas for `pred` and its dependency closure over the
/// given rules, seeded with declared schemas and externally known ones.
///
/// Declared schemas dominate inference; constants infer bottom-up;
/// conflicts are errors, never coercions.
pub fn check_type_consistency(
    pred: &PredKey,
    rules: &HashMap<PredKey, Vec<NormalRule>>,
    catalog: &Catalog,
    external: &HashMap<PredKey, PredicateSchema>,
) -> Result<PredicateSchema, CatalogError> {
    let mut closure: Vec<PredKey> = Vec::new();
    let mut stack = vec![pred.clone()];
    let mut seen: HashSet<PredKey> = HashSet::new();
    while let Some(k) = stack.pop() {
        if !seen.insert(k.clone()) {
            continue;
        }
        closure.push(k.clone());
        if let Some(rs) = rules.get(&k) {
            for r in rs {
                for (callee, _) in r.callees() {
                    stack.push(callee);
                }
            }
        }
    }

    // Per-predicate, per-column candidate types; None = unknown yet.
    let mut types: HashMap<PredKey, Vec<Option<ColumnType>>> = HashMap::new();
    for k in &closure {
        let mut init = vec![None; k.1];
        if let Some(s) = catalog.declared(k).or_else(|| external.get(k)) {
            if s.arity() != k.1 {
                return Err(CatalogError::ArityMismatch(k.0.clone(), k.1));
            }
            init = s.columns.iter().map(|(_, t)| Some(*t)).collect();
        } else if rules.get(k).is_none() && external.get(k).is_none() {
            return Err(CatalogError::UnknownPredicate(k.0.clone(), k.1));
        }
        types.insert(k.clone(), init);
    }

    let merge = |slot: &mut Option<ColumnType>,
                 ty: ColumnType,
                 k: &PredKey,
                 arg: usize,
                 ctx: &str|
     -> Result<(), CatalogError> {
        match slot {
            None => {
                *slot = Some(ty);
                Ok(())
            }
            Some(t) if t.same_kind(&ty) => Ok(()),
            Some(_) => Err(CatalogError::TypeMismatch {
                pred: k.0.clone(),
                arity: k.1,
                arg: arg + 1,
                context: ctx.to_string(),
            }),
        }
    };

    // Fixpoint: propagate types from constants and from callee schemas to
    // head positions; declared types already seeded and never change.
    let mut changed = true;
    while changed {
        changed = false;
        for k in &closure {
            let Some(rs) = rules.get(k) else { continue };
            for rule in rs {
                let ctx = rule.to_string();
                // Variable types known from body atom positions and `is`.
                let mut var_types: HashMap<String, ColumnType> = HashMap::new();
                for lit in &rule.body {
                    if let Literal::Pos(a) | Literal::Neg(a) = lit {
                        let akey = a.key();
                        let Some(atypes) = types.get(&akey).cloned() else { continue };
                        for (i, t) in a.args.iter().enumerate() {
                            match t {
                                Term::Var(v) => {
                                    if let Some(ty) = atypes[i] {
                                        var_types.entry(v.clone()).or_insert(ty);
                                    }
                                }
                                Term::Const(c) => {
                                    let snapshot = types.get_mut(&akey).unwrap();
                                    let before = snapshot[i];
                                    merge(
                                        &mut snapshot[i],
                                        ColumnType::of_value(c),
                                        &akey,
                                        i,
                                        &ctx,
                                    )?;
                                    if before != snapshot[i] {
                                        changed = true;
                                    }
                                }
                            }
                        }
                    }
                }
                for lit in &rule.body {
                    if let Literal::Is(v, e) = lit {
                        if let Some(ty) = expr_type(e, &var_types) {
                            var_types.entry(v.clone()).or_insert(ty);
                        }
                    }
                }
                // Head positions.
                let htypes = types.get_mut(k).unwrap();
                for (i, t) in rule.head.args.iter().enumerate() {
                    let inferred = match t {
                        Term::Const(c) => Some(ColumnType::of_value(c)),
                        Term::Var(v) => var_types.get(v).copied(),
                    };
                    if let Some(ty) = inferred {
                        let before = htypes[i];
                        merge(&mut htypes[i], ty, k, i, &ctx)?;
                        if before != htypes[i] {
                            changed = true;
                        }
                    }
                }
            }
        }
    }

    let cols = types.remove(pred).unwrap();
    let named = match catalog.declared(pred).or_else(|| external.get(pred)) {
        Some(s) => s.column_names(),
        None => (1..=pred.1).map(|i| format!("a{}", i)).collect(),
    };
    let mut columns = Vec::new();
    for (i, ty) in cols.into_iter().enumerate() {
        match ty {
            Some(t) => columns.push((named[i].clone(), t)),
            None => return Err(CatalogError::Untypable(pred.0.clone(), pred.1)),
        }
    }
    Ok(PredicateSchema { name: pred.0.clone(), columns })
}

/// Static type of an arithmetic expression, when determinable.
/// Division always yields float; other operators stay int unless an
/// operand is float. sin/cos yield float; abs preserves its operand type.
pub fn expr_type(e: &Expr, var_types: &HashMap<String, ColumnType>) -> Option<ColumnType> {
    match e {
        Expr::Term(Term::Const(v)) => Some(ColumnType::of_value(v)),
        Expr::Term(Term::Var(v)) => var_types.get(v).copied(),
        Expr::Arith(op, l, r) => {
            if matches!(op, crate::ast::ArithOp::Div) {
                return Some(ColumnType::Float);
            }
            match (expr_type(l, var_types)?, expr_type(r, var_types)?) {
                (ColumnType::Int, ColumnType::Int) => Some(ColumnType::Int),
                (ColumnType::Str(_), _) | (_, ColumnType::Str(_)) => None,
                _ => Some(ColumnType::Float),
            }
        }
        Expr::Func(name, args) => match name.as_str() {
            "sin" | "cos" => Some(ColumnType::Float),
            "abs" => expr_type(args.first()?, var_types),
            _ => None,
        },
    }
}

/// Check already-loaded ground facts against a schema.
pub fn check_facts_against_schema(
    schema: &PredicateSchema,
    facts: &[Vec<Value>],
) -> Result<(), CatalogError> {
    for row in facts {
        for (i, v) in row.iter().enumerate() {
            if !ColumnType::of_value(v).same_kind(&schema.columns[i].1) {
                return Err(CatalogError::TypeMismatch {
                    pred: schema.name.clone(),
                    arity: schema.arity(),
                    arg: i + 1,
                    context: "loaded facts".to_string(),
                });
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Predicate dependency graph

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Polarity {
    Positive,
    Negative,
}

/// Caller -> callee dependency graph. Extensional predicates are the ones
/// with no outgoing edges: they depend on nothing.
#[derive(Debug, Clone)]
pub struct PredicateDependencyGraph {
    graph: DiGraph<PredKey, Polarity>,
    index: HashMap<PredKey, NodeIndex>,
}

impl PredicateDependencyGraph {
    pub fn nodes(&self) -> Vec<PredKey> {
        self.graph.node_weights().cloned().collect()
    }

    pub fn edges(&self) -> Vec<(PredKey, PredKey, Polarity)> {
        self.graph
            .edge_indices()
            .map(|e| {
                let (a, b) = self.graph.edge_endpoints(e).unwrap();
                (
                    self.graph[a].clone(),
                    self.graph[b].clone(),
                    *self.graph.edge_weight(e).unwrap(),
                )
            })
            .collect()
    }

    pub fn contains(&self, key: &PredKey) -> bool {
        self.index.contains_key(key)
    }

    /// Extensional: no outgoing dependency edges.
    pub fn is_extensional(&self, key: &PredKey) -> bool {
        match self.index.get(key) {
            Some(&n) => self
                .graph
                .neighbors_directed(n, petgraph::Direction::Outgoing)
                .next()
                .is_none(),
            None => true,
        }
    }

    /// True iff the predicate lies on a dependency cycle (including a
    /// self-loop or mutual recursion).
    pub fn is_recursive(&self, key: &PredKey) -> bool {
        let Some(&n) = self.index.get(key) else { return false };
        let scc = self.scc_of(n);
        scc.len() > 1
            || self
                .graph
                .neighbors_directed(n, petgraph::Direction::Outgoing)
                .any(|m| m == n)
    }

    /// Keys in the same strongly connected component as `key`.
    pub fn same_scc(&self, key: &PredKey) -> HashSet<PredKey> {
        match self.index.get(key) {
            Some(&n) => self.scc_of(n).into_iter().map(|i| self.graph[i].clone()).collect(),
            None => std::iter::once(key.clone()).collect(),
        }
    }

    fn scc_of(&self, n: NodeIndex) -> Vec<NodeIndex> {
        petgraph::algo::kosaraju_scc(&self.graph)
            .into_iter()
            .find(|c| c.contains(&n))
            .unwrap_or_default()
    }

    /// Predicates reachable from `key` (excluding `key` unless on a cycle).
    pub fn reachable(&self, key: &PredKey) -> HashSet<PredKey> {
        let mut out = HashSet::new();
        let Some(&start) = self.index.get(key) else {
            return out;
        };
        let mut stack = vec![start];
        let mut seen = HashSet::new();
        while let Some(n) = stack.pop() {
            for m in self.graph.neighbors_directed(n, petgraph::Direction::Outgoing) {
                if seen.insert(m) {
                    out.insert(self.graph[m].clone());
                    stack.push(m);
                }
            }
        }
        out
    }

    /// Direct callees of `key`, in no particular order.
    pub fn callees(&self, key: &PredKey) -> Vec<PredKey> {
        match self.index.get(key) {
            Some(&n) => self
                .graph
                .neighbors_directed(n, petgraph::Direction::Outgoing)
                .map(|m| self.graph[m].clone())
                .collect(),
            None => Vec::new(),
        }
    }
}

/// Build the dependency graph from normalized rules plus known external
/// relations (which become isolated or leaf nodes).
pub fn build_pdg(
    rules: &HashMap<PredKey, Vec<NormalRule>>,
    external_relations: &[PredKey],
) -> PredicateDependencyGraph {
    let mut graph = DiGraph::new();
    let mut index: HashMap<PredKey, NodeIndex> = HashMap::new();
    let node = |graph: &mut DiGraph<PredKey, Polarity>,
                    index: &mut HashMap<PredKey, NodeIndex>,
                    k: &PredKey| {
        *index.entry(k.clone()).or_insert_with(|| graph.add_node(k.clone()))
    };
    for k in external_relations {
        node(&mut graph, &mut index, k);
    }
    // One edge per distinct (caller, callee, polarity).
    let mut seen_edges: HashSet<(PredKey, PredKey, bool)> = HashSet::new();
    for (k, rs) in rules {
        let caller = node(&mut graph, &mut index, k);
        for r in rs {
            for (callee, positive) in r.callees() {
                if seen_edges.insert((k.clone(), callee.clone(), positive)) {
                    let cn = node(&mut graph, &mut index, &callee);
                    graph.add_edge(
                        caller,
                        cn,
                        if positive { Polarity::Positive } else { Polarity::Negative },
                    );
                }
            }
        }
    }
    PredicateDependencyGraph { graph, index }
}

/// Standard stratification with minimal stratum numbers starting at 1.
/// Callee stratum <= caller stratum, strictly less across negative edges.
pub fn stratify(
    pdg: &PredicateDependencyGraph,
) -> Result<HashMap<PredKey, usize>, CatalogError> {
    let sccs = petgraph::algo::kosaraju_scc(&pdg.graph);
    let mut scc_of: HashMap<NodeIndex, usize> = HashMap::new();
    for (i, scc) in sccs.iter().enumerate() {
        for &n in scc {
            scc_of.insert(n, i);
        }
    }
    // Negative edge inside an SCC means a cycle through negation.
    for e in pdg.graph.edge_indices() {
        let (a, b) = pdg.graph.edge_endpoints(e).unwrap();
        if scc_of[&a] == scc_of[&b] && *pdg.graph.edge_weight(e).unwrap() == Polarity::Negative
        {
            let k = &pdg.graph[a];
            return Err(CatalogError::Unstratifiable(k.0.clone(), k.1));
        }
    }
    // kosaraju_scc returns reverse topological order: callees first under
    // caller -> callee edges... it returns components in reverse topo order
    // of the condensation; process so that callees are assigned first.
    let mut stratum: Vec<usize> = vec![1; sccs.len()];
    // Compute strata by iterating to fixpoint over edges (small graphs).
    let mut changed = true;
    while changed {
        changed = false;
        for e in pdg.graph.edge_indices() {
            let (a, b) = pdg.graph.edge_endpoints(e).unwrap();
            let (sa, sb) = (scc_of[&a], scc_of[&b]);
            if sa == sb {
                continue;
            }
            let need = match pdg.graph.edge_weight(e).unwrap() {
                Polarity::Positive => stratum[sb],
                Polarity::Negative => stratum[sb] + 1,
            };
            if stratum[sa] < need {
                stratum[sa] = need;
                changed = true;
            }
        }
    }
    Ok(pdg
        .index
        .iter()
        .map(|(k, &n)| (k.clone(), stratum[scc_of[&n]]))
        .collect())
}

// ---------------------------------------------------------------------------
// Safety

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SafetyReport {
    pub safe: bool,
    pub violations: Vec<String>,
}

/// Range restriction: every variable in the head, in a negated atom, in a
/// comparison, or inside an `is` expression must be bound by a positive
/// non-comparison body literal; the `is` target is bound by the `is`.
pub fn is_safe(rule: &NormalRule) -> SafetyReport {
    let mut bound: HashSet<String> = HashSet::new();
    for lit in &rule.body {
        if let Literal::Pos(a) = lit {
            for t in &a.args {
                if let Term::Var(v) = t {
                    bound.insert(v.clone());
                }
            }
        }
    }
    // `is` targets become bound once their expression is bound.
    let mut changed = true;
    while changed {
        changed = false;
        for lit in &rule.body {
            if let Literal::Is(v, e) = lit {
                let mut vs = Vec::new();
                e.vars(&mut vs);
                if vs.iter().all(|x| bound.contains(x)) && bound.insert(v.clone()) {
                    changed = true;
                }
            }
        }
    }

    let mut violations = Vec::new();
    for t in &rule.head.args {
        if let Term::Var(v) = t {
            if !bound.contains(v) {
                violations.push(format!("head variable {} is unbound", v));
            }
        }
    }
    for lit in &rule.body {
        match lit {
            Literal::Neg(a) => {
                for t in &a.args {
                    if let Term::Var(v) = t {
                        if !bound.contains(v) {
                            violations
                                .push(format!("variable {} in negated atom is unbound", v));
                        }
                    }
                }
            }
            Literal::Cmp(_, l, r) => {
                let mut vs = Vec::new();
                l.vars(&mut vs);
                r.vars(&mut vs);
                for v in vs {
                    if !bound.contains(&v) {
                        violations.push(format!("variable {} in comparison is unbound", v));
                    }
                }
            }
            Literal::Is(_, e) => {
                let mut vs = Vec::new();
                e.vars(&mut vs);
                for v in vs {
                    if !bound.contains(&v) {
                        violations
                            .push(format!("variable {} in 'is' expression is unbound", v));
                    }
                }
            }
            Literal::Pos(_) => {}
        }
    }
    SafetyReport { safe: violations.is_empty(), violations }
}

/// Default string length for inferred string columns, re-exported for
/// callers building schemas by hand.
pub fn default_string_type() -> ColumnType {
    ColumnType::Str(DEFAULT_STRING_LEN)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ast::{parse_rule, normalize, NormalRule, PredKey};

    fn rules_of(srcs: &[&str]) -> HashMap<PredKey, Vec<NormalRule>> {
        let mut out: HashMap<PredKey, Vec<NormalRule>> = HashMap::new();
        for src in srcs {
            for r in normalize(&parse_rule(src).unwrap()) {
                out.entry(r.head.key()).or_default().push(r);
            }
        }
        out
    }

    fn key(name: &str, arity: usize) -> PredKey {
        (name.to_string(), arity)
    }

    #[test]
    fn stratification_assigns_minimal_strata() {
        let rules = rules_of(&[
            "e(1,2).",
            "r(X,Y):-e(X,Y).",
            "r(X,Y):-e(X,Z),r(Z,Y).",
            "unreached(X,Y):-node(X),node(Y),not(r(X,Y)).",
            "node(1).",
        ]);
        let pdg = build_pdg(&rules, &[]);
        let strata = stratify(&pdg).unwrap();
        assert_eq!(strata[&key("e", 2)], 1);
        assert_eq!(strata[&key("r", 2)], 1);
        assert_eq!(strata[&key("node", 1)], 1);
        assert_eq!(strata[&key("unreached", 2)], 2);
    }

    #[test]
    fn negation_inside_a_cycle_is_rejected() {
        let rules = rules_of(&["p(X):-q(X),not(r(X)).", "r(X):-p(X).", "q(1)."]);
        let pdg = build_pdg(&rules, &[]);
        assert!(matches!(stratify(&pdg), Err(CatalogError::Unstratifiable(..))));
    }

    #[test]
    fn recursion_detection_covers_self_and_mutual_cycles() {
        let rules = rules_of(&[
            "a(X):-b(X).",
            "b(X):-a(X).",
            "s(X):-s(X).",
            "plain(X):-base(X).",
            "base(1).",
        ]);
        let pdg = build_pdg(&rules, &[]);
        assert!(pdg.is_recursive(&key("a", 1)));
        assert!(pdg.is_recursive(&key("b", 1)));
        assert!(pdg.is_recursive(&key("s", 1)));
        assert!(!pdg.is_recursive(&key("plain", 1)));
        assert!(pdg.is_extensional(&key("base", 1)));
        assert!(!pdg.is_extensional(&key("plain", 1)));
    }

    #[test]
    fn safety_requires_range_restriction() {
        let safe = normalize(&parse_rule("p(X,Y):-q(X),Y is X+1.").unwrap()).remove(0);
        assert!(is_safe(&safe).safe);

        let unsafe_head = normalize(&parse_rule("p(X,Y):-q(X).").unwrap()).remove(0);
        let report = is_safe(&unsafe_head);
        assert!(!report.safe);
        assert_eq!(report.violations, vec!["head variable Y is unbound"]);

        let unsafe_neg = normalize(&parse_rule("p(X):-q(X),not(r(Y)).").unwrap()).remove(0);
        assert!(!is_safe(&unsafe_neg).safe);

        let unsafe_cmp = normalize(&parse_rule("p(X):-q(X),Y>2.").unwrap()).remove(0);
        assert!(!is_safe(&unsafe_cmp).safe);
    }

    #[test]
    fn type_inference_propagates_from_constants_and_declarations() {
        let rules = rules_of(&[
            "age(ann,36).",
            "older(N):-age(N,A),A>30.",
        ]);
        let catalog = Catalog::new();
        let schema =
            check_type_consistency(&key("older", 1), &rules, &catalog, &HashMap::new()).unwrap();
        assert_eq!(schema.columns.len(), 1);
        assert!(matches!(schema.columns[0].1, ColumnType::Str(_)));

        let age =
            check_type_consistency(&key("age", 2), &rules, &catalog, &HashMap::new()).unwrap();
        assert_eq!(age.columns[1].1, ColumnType::Int);
    }

    #[test]
    fn conflicting_column_types_are_an_error() {
        let rules = rules_of(&["p(1).", "p(x)."]);
        let err = check_type_consistency(&key("p", 1), &rules, &Catalog::new(), &HashMap::new())
            .unwrap_err();
        assert!(matches!(err, CatalogError::TypeMismatch { .. }));
    }

    #[test]
    fn declared_schema_dominates_and_redeclaration_conflicts() {
        let mut catalog = Catalog::new();
        catalog
            .declare_type(PredicateSchema {
                name: "p".to_string(),
                columns: vec![("a".to_string(), ColumnType::Float)],
            })
            .unwrap();
        // Identical redeclaration is fine; a different one is not.
        assert!(catalog
            .declare_type(PredicateSchema {
                name: "p".to_string(),
                columns: vec![("a".to_string(), ColumnType::Float)],
            })
            .is_ok());
        assert!(matches!(
            catalog.declare_type(PredicateSchema {
                name: "p".to_string(),
                columns: vec![("a".to_string(), ColumnType::Int)],
            }),
            Err(CatalogError::DeclarationConflict(..))
        ));

        let rules = rules_of(&["q(X):-p(X)."]);
        let schema =
            check_type_consistency(&key("q", 1), &rules, &catalog, &HashMap::new()).unwrap();
        assert_eq!(schema.columns[0].1, ColumnType::Float);
    }

    #[test]
    fn division_makes_floats_in_is_targets() {
        let rules = rules_of(&["half(Y):-n(X),Y is X/2.", "n(4)."]);
        let schema =
            check_type_consistency(&key("half", 1), &rules, &Catalog::new(), &HashMap::new())
                .unwrap();
        assert_eq!(schema.columns[0].1, ColumnType::Float);
    }
}
