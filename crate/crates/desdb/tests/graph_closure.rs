//! Transitive closure on random digraphs, checked against a direct
//! reachability oracle, locally and with the edge relation persisted.

mod common;

use common::*;
use desdb::ast::PersistAssertion;
use desdb::value::Value;
use rand::Rng;
use std::collections::BTreeSet;

#[test]
fn closure_matches_reachability_on_random_graphs() {
    let mut rng = rng(0xd1_6ca9);
    for case in 0..60 {
        let n = rng.gen_range(2..=10usize);
        let mut edges: BTreeSet<(usize, usize)> = BTreeSet::new();
        for _ in 0..rng.gen_range(1..=n * 2) {
            edges.insert((rng.gen_range(0..n), rng.gen_range(0..n)));
        }
        // Oracle: one-step closure iterated to fixpoint.
        let mut reach = edges.clone();
        loop {
            let mut next = reach.clone();
            for &(a, b) in &reach {
                for &(c, d) in &reach {
                    if b == c {
                        next.insert((a, d));
                    }
                }
            }
            if next == reach {
                break;
            }
            reach = next;
        }
        let expected: BTreeSet<Vec<Value>> = reach
            .iter()
            .map(|&(a, b)| vec![Value::Int(a as i64), Value::Int(b as i64)])
            .collect();

        let program: String = edges
            .iter()
            .map(|(a, b)| format!("edge({},{}).\n", a, b))
            .chain([
                "path(X,Y) :- edge(X,Y).\n".to_string(),
                "path(X,Y) :- edge(X,Z), path(Z,Y).\n".to_string(),
            ])
            .collect();

        let mut s = session_with(vec![mem_config("m", &format!("graph_{}", case), "backquote")]);
        load(&mut s, &program);
        assert_eq!(query_pred(&mut s, "path", 2), expected, "case {} local", case);

        // Same answers once the base relation lives externally: the base
        // rule runs through the backend view, the recursive one locally.
        s.persist_assertion(&PersistAssertion {
            pred: "path".to_string(),
            arity: 2,
            columns: None,
            connection: Some("m".to_string()),
        })
        .unwrap();
        assert_eq!(query_pred(&mut s, "path", 2), expected, "case {} persistent", case);
    }
}
