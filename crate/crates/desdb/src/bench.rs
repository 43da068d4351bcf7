//! Timing harness comparing the in-memory database against a persistent
//! connection: bulk inserts, point selects, an autojoin, and the
//! persistence create/drop lifecycle.
//!
//! Each measurement runs on a fresh session, repeated `REPS` times; the
//! best and worst runs are discarded and the rest averaged.

use crate::ast::{Atom, Literal, PersistAssertion, Term};
use crate::backend::{ConnectionConfig, Connections};
use crate::session::{Session, SessionError};
use crate::value::{ColumnType, Value};
use std::time::Instant;

pub const REPS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    Insert,
    Select,
    Join,
    Create,
    Drop,
}

impl Scenario {
    pub fn parse(name: &str) -> Option<Scenario> {
        match name {
            "insert" => Some(Scenario::Insert),
            "select" => Some(Scenario::Select),
            "join" => Some(Scenario::Join),
            "create" => Some(Scenario::Create),
            "drop" => Some(Scenario::Drop),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Scenario::Insert => "insert",
            Scenario::Select => "select",
            Scenario::Join => "join",
            Scenario::Create => "create",
            Scenario::Drop => "drop",
        }
    }
}

fn registry_of(session: &Session) -> Vec<ConnectionConfig> {
    session
        .connections
        .names()
        .into_iter()
        .filter_map(|n| session.connections.config(&n).cloned())
        .collect()
}

fn fresh_session(configs: &[ConnectionConfig]) -> Session {
    let mut session = Session::new(Connections::new("", configs.to_vec()));
    // All optimizations on, matching the measurement protocol.
    session.flags.complete_computations = true;
    session.flags.extensional_fetch = true;
    session.flags.nonrecursive_cache = true;
    session
}

fn fact(i: usize) -> crate::ast::Rule {
    crate::ast::Rule {
        head: Atom { pred: "t".to_string(), args: vec![Term::Const(Value::Int(i as i64))] },
        body: Vec::new(),
    }
}

fn t_assertion(conn: &str) -> PersistAssertion {
    PersistAssertion {
        pred: "t".to_string(),
        arity: 1,
        columns: Some(vec![("a".to_string(), Some(ColumnType::Int))]),
        connection: Some(conn.to_string()),
    }
}

fn load_facts(session: &mut Session, n: usize) -> Result<(), SessionError> {
    for i in 0..n {
        session.assert_rule(&fact(i))?;
    }
    Ok(())
}

/// One timed run of a scenario. Returns (milliseconds, join row count).
fn scenario_once(
    configs: &[ConnectionConfig],
    target: Option<&str>,
    scenario: Scenario,
    n: usize,
) -> Result<(f64, Option<usize>), SessionError> {
    let mut s = fresh_session(configs);
    if let Some(conn) = target {
        s.open_db(conn)?;
    }
    match scenario {
        Scenario::Insert => {
            if let Some(conn) = target {
                s.persist_assertion(&t_assertion(conn))?;
            }
            let start = Instant::now();
            load_facts(&mut s, n)?;
            Ok((ms(start), None))
        }
        Scenario::Select => {
            if let Some(conn) = target {
                s.persist_assertion(&t_assertion(conn))?;
            }
            load_facts(&mut s, n)?;
            let start = Instant::now();
            for i in 0..n {
                let body = vec![Literal::Pos(Atom {
                    pred: "t".to_string(),
                    args: vec![Term::Const(Value::Int(i as i64))],
                })];
                let result = s.solve_query(&[body])?;
                assert_eq!(result.rows.len(), 1);
            }
            Ok((ms(start), None))
        }
        Scenario::Join => {
            if let Some(conn) = target {
                s.persist_assertion(&t_assertion(conn))?;
            }
            load_facts(&mut s, n)?;
            let body = vec![
                Literal::Pos(Atom {
                    pred: "t".to_string(),
                    args: vec![Term::Var("X".to_string())],
                }),
                Literal::Pos(Atom {
                    pred: "t".to_string(),
                    args: vec![Term::Var("Y".to_string())],
                }),
            ];
            let start = Instant::now();
            let result = s.solve_query(&[body])?;
            Ok((ms(start), Some(result.rows.len())))
        }
        Scenario::Create => {
            let conn = target.ok_or(SessionError::NoCurrentDb)?;
            load_facts(&mut s, n)?;
            let start = Instant::now();
            s.persist_assertion(&t_assertion(conn))?;
            Ok((ms(start), None))
        }
        Scenario::Drop => {
            let conn = target.ok_or(SessionError::NoCurrentDb)?;
            load_facts(&mut s, n)?;
            s.persist_assertion(&t_assertion(conn))?;
            let start = Instant::now();
            s.drop_assertion(&t_assertion(conn))?;
            Ok((ms(start), None))
        }
    }
}

fn ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1000.0
}

/// Mean over `REPS` runs with best and worst discarded.
fn mean_of(mut samples: Vec<f64>) -> f64 {
    samples.sort_by(|a, b| a.total_cmp(b));
    let trimmed = &samples[1..samples.len() - 1];
    trimmed.iter().sum::<f64>() / trimmed.len() as f64
}

pub fn mean_scenario_with(
    configs: &[ConnectionConfig],
    target: Option<&str>,
    scenario: Scenario,
    n: usize,
    reps: usize,
) -> Result<(f64, Option<usize>), SessionError> {
    let mut samples = Vec::with_capacity(reps);
    let mut join_count = None;
    for _ in 0..reps {
        let (t, jc) = scenario_once(configs, target, scenario, n)?;
        samples.push(t);
        if jc.is_some() {
            join_count = jc;
        }
    }
    Ok((mean_of(samples), join_count))
}

/// Entry point for the `/bench` command: measure one scenario against the
/// given target using the session's connection registry.
pub fn mean_scenario_ms(
    session: &Session,
    target: Option<&str>,
    scenario: Scenario,
    n: usize,
) -> Result<f64, SessionError> {
    let configs = registry_of(session);
    Ok(mean_scenario_with(&configs, target, scenario, n, REPS)?.0)
}

/// Full comparison report between the local database and one connection.
#[derive(Debug, Clone)]
pub struct Report {
    pub n: usize,
    pub connection: String,
    /// (scenario, local ms, persistent ms).
    pub rows: Vec<(Scenario, f64, f64)>,
    /// (scenario, persistent ms) for the lifecycle operations.
    pub lifecycle: Vec<(Scenario, f64)>,
    pub join_rows_local: usize,
    pub join_rows_persistent: usize,
}

impl Report {
    pub fn ratio(&self, scenario: Scenario) -> Option<f64> {
        self.rows
            .iter()
            .find(|(s, _, _)| *s == scenario)
            .map(|(_, l, p)| p / l)
    }

    pub fn lines(&self) -> Vec<String> {
        let mut out = Vec::new();
        out.push(format!("Benchmark: n = {}, {} repetitions, best/worst discarded", self.n, REPS));
        out.push(format!(
            "{:<10} {:>12} {:>12} {:>8}",
            "scenario", "local (ms)", "extern (ms)", "ratio"
        ));
        for (s, l, p) in &self.rows {
            out.push(format!("{:<10} {:>12.2} {:>12.2} {:>8.2}", s.name(), l, p, p / l));
        }
        for (s, p) in &self.lifecycle {
            out.push(format!("{:<10} {:>12} {:>12.2} {:>8}", s.name(), "-", p, "-"));
        }
        out.push(format!(
            "autojoin rows: local {}, {} {}",
            self.join_rows_local, self.connection, self.join_rows_persistent
        ));
        out
    }

    pub fn csv_lines(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (s, l, p) in &self.rows {
            out.push(format!("{},local,{:.2}", s.name(), l));
            out.push(format!("{},{},{:.2}", s.name(), self.connection, p));
        }
        for (s, p) in &self.lifecycle {
            out.push(format!("{},{},{:.2}", s.name(), self.connection, p));
        }
        out
    }
}

/// Run the complete protocol against `conn`.
pub fn run_report(
    configs: &[ConnectionConfig],
    conn: &str,
    n: usize,
    reps: usize,
) -> Result<Report, SessionError> {
    let mut rows = Vec::new();
    let mut join_local = 0;
    let mut join_persistent = 0;
    for scenario in [Scenario::Insert, Scenario::Select, Scenario::Join] {
        let (local, jl) = mean_scenario_with(configs, None, scenario, n, reps)?;
        let (ext, jp) = mean_scenario_with(configs, Some(conn), scenario, n, reps)?;
        if let Some(j) = jl {
            join_local = j;
        }
        if let Some(j) = jp {
            join_persistent = j;
        }
        rows.push((scenario, local, ext));
    }
    let mut lifecycle = Vec::new();
    for scenario in [Scenario::Create, Scenario::Drop] {
        let (ext, _) = mean_scenario_with(configs, Some(conn), scenario, n, reps)?;
        lifecycle.push((scenario, ext));
    }
    Ok(Report {
        n,
        connection: conn.to_string(),
        rows,
        lifecycle,
        join_rows_local: join_local,
        join_rows_persistent: join_persistent,
    })
}
