//! Line-oriented command loop. Lines starting with `/` are commands,
//! lines starting with `:-` are directives, anything else is a query.
//! Errors are reported per line and the loop keeps going.

use crate::ast::{self, Atom, Literal, ProgramItem, Term};
use crate::bench;
use crate::engine::QueryResult;
use crate::session::{Session, SessionError};
use crate::value::Value;
use std::collections::HashMap;
use std::io::{BufRead, Write};

pub enum LineOutcome {
    Continue(Vec<String>),
    Quit,
}

/// Handle one input line against the session.
pub fn handle_line(session: &mut Session, line: &str) -> LineOutcome {
    let line = line.trim();
    if line.is_empty() || line.starts_with('%') {
        return LineOutcome::Continue(Vec::new());
    }
    let result = if let Some(rest) = line.strip_prefix('/') {
        handle_command(session, rest)
    } else if line.starts_with(":-") {
        handle_directive(session, line)
    } else {
        handle_query(session, line).map(Some)
    };
    match result {
        Ok(Some(lines)) => LineOutcome::Continue(lines),
        Ok(None) => LineOutcome::Quit,
        Err(e) => LineOutcome::Continue(vec![format!("Error: {}", e)]),
    }
}

fn handle_directive(session: &mut Session, line: &str) -> Result<Option<Vec<String>>, SessionError> {
    let mut text = line.to_string();
    if !text.ends_with('.') {
        text.push('.');
    }
    let items = ast::parse_program(&text)?;
    let mut out = Vec::new();
    for item in items {
        out.extend(session.process_item(&item)?);
    }
    Ok(Some(out))
}

fn handle_query(session: &mut Session, line: &str) -> Result<Vec<String>, SessionError> {
    let groups = ast::parse_query(line)?;
    let rule = ast::Rule {
        head: Atom { pred: "_query".to_string(), args: Vec::new() },
        body: groups,
    };
    let bodies: Vec<Vec<Literal>> =
        ast::normalize(&rule).into_iter().map(|r| r.body).collect();
    let result = session.solve_query(&bodies)?;
    Ok(vec![format_answers(&bodies, &result)])
}

/// `{ p(a,b), p(c,d) }` for single-atom goals; bare binding tuples
/// otherwise.
pub fn format_answers(bodies: &[Vec<Literal>], result: &QueryResult) -> String {
    let single_atom: Option<&Atom> = match bodies {
        [body] => match body.as_slice() {
            [Literal::Pos(atom)] => Some(atom),
            _ => None,
        },
        _ => None,
    };
    let items: Vec<String> = result
        .rows
        .iter()
        .map(|row| {
            let env: HashMap<&str, &Value> =
                result.vars.iter().map(|v| v.as_str()).zip(row.iter()).collect();
            match single_atom {
                Some(atom) => {
                    let args: Vec<String> = atom
                        .args
                        .iter()
                        .map(|t| match t {
                            Term::Const(v) => ast::render_const(v),
                            Term::Var(v) => ast::render_const(env[v.as_str()]),
                        })
                        .collect();
                    if args.is_empty() {
                        atom.pred.clone()
                    } else {
                        format!("{}({})", atom.pred, args.join(","))
                    }
                }
                None => {
                    let vals: Vec<String> =
                        row.iter().map(ast::render_const).collect();
                    format!("({})", vals.join(","))
                }
            }
        })
        .collect();
    if items.is_empty() {
        "{ }".to_string()
    } else {
        format!("{{ {} }}", items.join(", "))
    }
}

fn handle_command(session: &mut Session, rest: &str) -> Result<Option<Vec<String>>, SessionError> {
    let (cmd, arg) = match rest.find(char::is_whitespace) {
        Some(i) => (&rest[..i], rest[i..].trim()),
        None => (rest, ""),
    };
    match cmd {
        "quit" | "exit" => Ok(None),
        "assert" => {
            let rule = ast::parse_rule(arg)?;
            Ok(Some(session.assert_rule(&rule)?))
        }
        "retract" => {
            let rule = ast::parse_rule(arg)?;
            Ok(Some(session.retract_rule(&rule)?))
        }
        "drop_assertion" => {
            let mut text = arg.to_string();
            if !text.ends_with('.') {
                text.push('.');
            }
            let items = ast::parse_program(&text)?;
            match items.as_slice() {
                [ProgramItem::Persistent(a)] => Ok(Some(session.drop_assertion(a)?)),
                _ => Err(SessionError::Parse(ast::ParseError::Syntax {
                    line: 1,
                    col: 1,
                    msg: "expected a persistence assertion".to_string(),
                })),
            }
        }
        "dbschema" => {
            let target = if arg.is_empty() { None } else { Some(arg) };
            Ok(Some(session.dbschema(target)?))
        }
        "open_db" => Ok(Some(session.open_db(arg)?)),
        "optimization" => {
            let mut parts = arg.split_whitespace();
            let (name, state) = (parts.next().unwrap_or(""), parts.next().unwrap_or(""));
            let on = match state {
                "on" => true,
                "off" => false,
                other => {
                    return Err(SessionError::UnknownOptimization(format!(
                        "{} (expected 'on' or 'off', got '{}')",
                        name, other
                    )))
                }
            };
            session.set_optimization(name, on)?;
            Ok(Some(vec![format!(
                "Info: Optimization {} turned {}.",
                name,
                if on { "on" } else { "off" }
            )]))
        }
        "statistics" => Ok(Some(session.statistics_lines())),
        "consult" => {
            let text = std::fs::read_to_string(arg).map_err(|e| {
                SessionError::Backend(crate::backend::BackendError::Io {
                    path: arg.to_string(),
                    source: e,
                })
            })?;
            Ok(Some(session.consult_text(&text)))
        }
        "bench" => {
            let mut parts = arg.split_whitespace();
            let scenario = parts.next().unwrap_or("");
            let n: usize = parts.next().and_then(|s| s.parse().ok()).unwrap_or(1000);
            let target = parts.next().unwrap_or("local");
            let scenario = bench::Scenario::parse(scenario).ok_or_else(|| {
                SessionError::UnknownOptimization(format!("unknown bench scenario '{}'", scenario))
            })?;
            let target = if target == "local" { None } else { Some(target.to_string()) };
            let ms = bench::mean_scenario_ms(session, target.as_deref(), scenario, n)?;
            Ok(Some(vec![format!(
                "{},{},{:.2}",
                scenario.name(),
                target.as_deref().unwrap_or("local"),
                ms
            )]))
        }
        other => Err(SessionError::UnknownOptimization(format!("unknown command '/{}'", other))),
    }
}

/// Run the command loop to end of input or `/quit`. Returns the process
/// exit code.
pub fn run<R: BufRead, W: Write>(
    session: &mut Session,
    input: R,
    out: &mut W,
    quiet: bool,
) -> std::io::Result<i32> {
    for line in input.lines() {
        let line = line?;
        if !quiet {
            writeln!(out, "DES> {}", line)?;
        }
        match handle_line(session, &line) {
            LineOutcome::Continue(lines) => {
                for l in lines {
                    writeln!(out, "{}", l)?;
                }
            }
            LineOutcome::Quit => return Ok(0),
        }
    }
    Ok(0)
}
