//! Persistence lifecycle across sessions and backends: durability on
//! file-backed stores, restore-with-merge, migration, and a second
//! dialect exercising the whole path.

mod common;

use common::*;
use desdb::ast::{self, PersistAssertion};
use desdb::backend::ConnectionConfig;
use desdb::repl::{self, LineOutcome};
use desdb::value::Value;
use std::collections::BTreeSet;

fn file_config(name: &str, path: &std::path::Path, dialect: &str) -> ConnectionConfig {
    ConnectionConfig {
        name: name.to_string(),
        backend_kind: "embedded".to_string(),
        location: path.to_string_lossy().into_owned(),
        dialect: dialect.to_string(),
    }
}

fn persist_p(session: &mut desdb::Session, conn: &str) -> Vec<String> {
    session
        .persist_assertion(&PersistAssertion {
            pred: "p".to_string(),
            arity: 1,
            columns: Some(vec![("a".to_string(), Some(desdb::value::ColumnType::Int))]),
            connection: Some(conn.to_string()),
        })
        .unwrap()
}

fn p_rows(session: &mut desdb::Session) -> BTreeSet<Vec<Value>> {
    query_pred(session, "p", 1)
}

fn ints(ns: &[i64]) -> BTreeSet<Vec<Value>> {
    ns.iter().map(|n| vec![Value::Int(*n)]).collect()
}

#[test]
fn facts_and_rules_survive_process_boundaries() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("db1.json");

    // Session one: persist p with facts and a derived rule.
    {
        let mut s = session_with(vec![file_config("db1", &store, "backquote")]);
        load(&mut s, "q(10).\np(1).\np(2).\np(X) :- q(X).");
        persist_p(&mut s, "db1");
        assert_eq!(p_rows(&mut s), ints(&[1, 2, 10]));
    }

    // Session two: a fresh process restores from the same file by
    // submitting the original assertion again, then keeps updating.
    {
        let mut s = session_with(vec![file_config("db1", &store, "backquote")]);
        let out = persist_p(&mut s, "db1");
        assert!(out.iter().any(|l| l.contains("made persistent")), "{:?}", out);
        assert_eq!(p_rows(&mut s), ints(&[1, 2, 10]));
        s.assert_rule(&ast::parse_rule("p(3).").unwrap()).unwrap();
        assert_eq!(p_rows(&mut s), ints(&[1, 2, 3, 10]));
    }

    // Session three: the update from session two is durable too.
    {
        let mut s = session_with(vec![file_config("db1", &store, "backquote")]);
        persist_p(&mut s, "db1");
        assert_eq!(p_rows(&mut s), ints(&[1, 2, 3, 10]));
    }
}

#[test]
fn restore_merges_preexisting_local_rules() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("db1.json");
    {
        let mut s = session_with(vec![file_config("db1", &store, "backquote")]);
        load(&mut s, "p(1).");
        persist_p(&mut s, "db1");
    }
    // Local rules present at restore time become persistent instead of
    // being discarded.
    {
        let mut s = session_with(vec![file_config("db1", &store, "backquote")]);
        load(&mut s, "p(9).");
        persist_p(&mut s, "db1");
        assert_eq!(p_rows(&mut s), ints(&[1, 9]));
    }
    {
        let mut s = session_with(vec![file_config("db1", &store, "backquote")]);
        persist_p(&mut s, "db1");
        assert_eq!(p_rows(&mut s), ints(&[1, 9]));
    }
}

#[test]
fn drop_assertion_brings_everything_home() {
    let mut s = session_with(vec![mem_config("m", "drop_home", "backquote")]);
    load(&mut s, "q(4).\np(1).\np(X) :- q(X).");
    persist_p(&mut s, "m");
    // Facts live externally now, not in the local rule store.
    assert!(s.rules.get(&("p".to_string(), 1)).is_none());
    let out = s
        .drop_assertion(&PersistAssertion {
            pred: "p".to_string(),
            arity: 1,
            columns: None,
            connection: Some("m".to_string()),
        })
        .unwrap();
    assert_eq!(out, vec!["Info: Persistence removed for predicate p/1.".to_string()]);
    assert_eq!(p_rows(&mut s), ints(&[1, 4]));
    // All backend objects are gone.
    let names: Vec<String> = s
        .connections
        .driver("m")
        .unwrap()
        .list_relations()
        .unwrap()
        .into_iter()
        .map(|r| r.name)
        .filter(|n| n.starts_with("p"))
        .collect();
    assert!(names.is_empty(), "leftover objects: {:?}", names);
}

#[test]
fn migrate_moves_backing_objects_between_dialects() {
    let mut s = session_with(vec![
        mem_config("a", "mig_a", "bracket"),
        mem_config("b", "mig_b", "backquote"),
    ]);
    load(&mut s, "q(7).\np(1).\np(2).\np(X) :- q(X).");
    persist_p(&mut s, "a");
    let out = s.migrate(&("p".to_string(), 1), "a", "b").unwrap();
    assert!(out.iter().any(|l| l == "Info: Predicate p/1 migrated from 'a' to 'b'."), "{:?}", out);
    assert_eq!(s.persistent[&("p".to_string(), 1)].connection, "b");
    assert_eq!(p_rows(&mut s), ints(&[1, 2, 7]));
    let a_names: Vec<String> = s
        .connections
        .driver("a")
        .unwrap()
        .list_relations()
        .unwrap()
        .into_iter()
        .map(|r| r.name)
        .filter(|n| n.starts_with("p"))
        .collect();
    assert!(a_names.is_empty(), "source not cleaned: {:?}", a_names);
    assert!(s.migrate(&("p".to_string(), 1), "b", "b").is_err());
}

#[test]
fn bracket_dialect_runs_the_full_lifecycle() {
    let mut s = session_with(vec![mem_config("acc", "brk", "bracket")]);
    s.open_db("acc").unwrap();
    let out = lines(&mut s, ":-persistent(path(a:int,b:int),acc)");
    assert_eq!(out, vec!["Info: Predicate path/2 made persistent.".to_string()]);
    lines(&mut s, "/assert path(1,2)");
    lines(&mut s, "/assert path(2,3)");
    let warn = lines(&mut s, "/assert path(X,Y):-path(X,Z),path(Z,Y)");
    assert_eq!(warn[0], "Warning: Recursive rule cannot be transferred to external database");
    assert_eq!(
        lines(&mut s, "path(X,Y)"),
        vec!["{ path(1,2), path(1,3), path(2,3) }".to_string()]
    );
    // The view text on this backend uses bracket delimiters.
    let rels = s.connections.driver("acc").unwrap().list_relations().unwrap();
    let view = rels.iter().find(|r| r.name == "path").unwrap();
    assert!(view.view_sql.as_deref().unwrap().contains("[path_des_table]"));
}

#[test]
fn asserting_on_a_raw_external_relation_stays_local() {
    let mut s = session_with(vec![mem_config("m", "raw_rel", "backquote")]);
    s.open_db("m").unwrap();
    s.connections
        .driver("m")
        .unwrap()
        .exec_update("CREATE TABLE `father`(`father` VARCHAR(20),`child` VARCHAR(20))")
        .unwrap();
    s.connections
        .driver("m")
        .unwrap()
        .exec_update("INSERT INTO `father` VALUES('tom','amy')")
        .unwrap();
    let out = s.assert_rule(&ast::parse_rule("father(bob,joe).").unwrap()).unwrap();
    assert_eq!(
        out,
        vec![
            "Warning: Predicate father/2 is an external relation; the clause is only loaded in the local database."
                .to_string()
        ]
    );
    // Queries see both sources; the external table itself is untouched.
    let rows = query_pred(&mut s, "father", 2);
    assert_eq!(rows.len(), 2);
    let mut cursor =
        s.connections.driver("m").unwrap().query_fetch("SELECT * FROM `father`").unwrap();
    let mut external = Vec::new();
    while let Some(row) = cursor.next_row().unwrap() {
        external.push(row);
    }
    assert_eq!(external, vec![vec![Value::Str("tom".into()), Value::Str("amy".into())]]);
}

#[test]
fn already_persistent_assertions_are_reported() {
    let mut s = session_with(vec![
        mem_config("a", "dup_a", "backquote"),
        mem_config("b", "dup_b", "backquote"),
    ]);
    load(&mut s, "p(1).");
    persist_p(&mut s, "a");
    let again = persist_p(&mut s, "a");
    assert_eq!(again, vec!["Info: Predicate p/1 is already persistent.".to_string()]);
    let err = s
        .persist_assertion(&PersistAssertion {
            pred: "p".to_string(),
            arity: 1,
            columns: None,
            connection: Some("b".to_string()),
        })
        .unwrap_err();
    assert!(matches!(err, desdb::session::SessionError::AlreadyPersistent(..)));
}

fn lines(session: &mut desdb::Session, line: &str) -> Vec<String> {
    match repl::handle_line(session, line) {
        LineOutcome::Continue(out) => out,
        LineOutcome::Quit => panic!("unexpected quit"),
    }
}
