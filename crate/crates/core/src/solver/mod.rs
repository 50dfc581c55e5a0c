//! External SMT solver process: one child per check, driven over
//! stdin/stdout with SMT-LIB2 text.
//!
//! The script handed to [`SolverHandle::run`] must end with `(check-sat)`.
//! After reading the verdict the client asks for `(get-model)` or
//! `(get-unsat-core)` itself, then sends `(exit)`. The child is killed and
//! reaped on every path, including timeouts.

mod sexpr;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, BufReader, Read, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::{Mutex, OnceLock};
use std::thread;
use std::time::{Duration, Instant};

use num_rational::BigRational;
use num_traits::{Signed, Zero};
use serde::{Deserialize, Serialize};

pub use sexpr::{parse_all, ParseError, SExpr};

use crate::model::{Decimal, Literal};

pub const SOLVER_PATH_ENV: &str = "CAPAPLAN_SOLVER_PATH";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub executable: String,
    pub args: Vec<String>,
    pub timeout_ms: u64,
    pub seed_options: Vec<String>,
    /// Reuse definite verdicts for byte-identical scripts within this process.
    pub memoize: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            executable: "z3".into(),
            args: vec!["-in".into()],
            timeout_ms: 10_000,
            seed_options: vec!["smt.random_seed=0".into(), "sat.random_seed=0".into()],
            memoize: false,
        }
    }
}

impl SolverConfig {
    /// Replaces the executable with `CAPAPLAN_SOLVER_PATH` when set.
    pub fn with_env_override(mut self) -> Self {
        if let Ok(path) = std::env::var(SOLVER_PATH_ENV) {
            if !path.trim().is_empty() {
                self.executable = path;
            }
        }
        self
    }

    pub fn with_timeout(mut self, ms: u64) -> Self {
        self.timeout_ms = ms;
        self
    }

    pub fn with_memoize(mut self, on: bool) -> Self {
        self.memoize = on;
        self
    }
}

type MemoKey = (String, Vec<String>, Vec<String>, String);

fn memo() -> &'static Mutex<HashMap<MemoKey, SolverVerdict>> {
    static MEMO: OnceLock<Mutex<HashMap<MemoKey, SolverVerdict>>> = OnceLock::new();
    MEMO.get_or_init(Default::default)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "verdict", content = "detail")]
pub enum SolverVerdict {
    Sat(String),
    Unsat(String),
    Unknown,
    Timeout,
    ProtocolError(String),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SolverError {
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error("cannot start solver `{executable}`: {detail}")]
    Spawn { executable: String, detail: String },
}

/// Kills and reaps the child when dropped.
struct Reaper(Option<Child>);

impl Reaper {
    fn finish(&mut self) {
        if let Some(mut child) = self.0.take() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }

    fn wait_exit(&mut self, deadline: Instant) {
        if let Some(child) = self.0.as_mut() {
            while Instant::now() < deadline {
                if let Ok(Some(_)) = child.try_wait() {
                    self.0 = None;
                    return;
                }
                thread::sleep(Duration::from_millis(1));
            }
        }
        self.finish();
    }
}

impl Drop for Reaper {
    fn drop(&mut self) {
        self.finish();
    }
}

/// Single-owner handle; each `run` launches a fresh process.
#[derive(Debug)]
pub struct SolverHandle {
    config: SolverConfig,
    last_pid: Option<u32>,
}

impl SolverHandle {
    pub fn new(config: SolverConfig) -> Result<Self, SolverError> {
        if config.timeout_ms == 0 {
            return Err(SolverError::Config("timeout must be positive".into()));
        }
        Ok(SolverHandle { config, last_pid: None })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    /// Process id of the most recent child, for lifecycle checks.
    pub fn last_pid(&self) -> Option<u32> {
        self.last_pid
    }

    pub fn run(&mut self, script: &str) -> Result<SolverVerdict, SolverError> {
        if !self.config.memoize {
            return self.run_process(script);
        }
        let c = &self.config;
        let key = (c.executable.clone(), c.args.clone(), c.seed_options.clone(), script.to_string());
        if let Some(v) = memo().lock().unwrap().get(&key) {
            return Ok(v.clone());
        }
        let verdict = self.run_process(script)?;
        // timeouts and unknowns depend on load, so only definite answers are kept
        if matches!(verdict, SolverVerdict::Sat(_) | SolverVerdict::Unsat(_)) {
            memo().lock().unwrap().insert(key, verdict.clone());
        }
        Ok(verdict)
    }

    fn run_process(&mut self, script: &str) -> Result<SolverVerdict, SolverError> {
        let deadline = Instant::now() + Duration::from_millis(self.config.timeout_ms);
        let mut child = Command::new(&self.config.executable)
            .args(&self.config.args)
            .args(&self.config.seed_options)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| SolverError::Spawn {
                executable: self.config.executable.clone(),
                detail: e.to_string(),
            })?;
        self.last_pid = Some(child.id());
        let stdout = child.stdout.take().expect("piped stdout");
        let mut stderr = child.stderr.take().expect("piped stderr");
        let stdin = child.stdin.take().expect("piped stdin");
        let mut reaper = Reaper(Some(child));

        let (tx, rx) = mpsc::channel::<String>();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let Ok(line) = line else { break };
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        let stderr_reader = thread::spawn(move || {
            let mut text = String::new();
            let _ = stderr.read_to_string(&mut text);
            text
        });
        let body = script.to_string();
        let writer = thread::spawn(move || -> std::io::Result<ChildStdin> {
            let mut stdin = stdin;
            stdin.write_all(body.as_bytes())?;
            stdin.write_all(b"\n")?;
            stdin.flush()?;
            Ok(stdin)
        });

        let mut early_errors = Vec::new();
        let verdict_word = loop {
            let remaining = deadline.saturating_duration_since(Instant::now());
            match rx.recv_timeout(remaining) {
                Ok(line) => {
                    let trimmed = line.trim();
                    match trimmed {
                        "" => continue,
                        "sat" | "unsat" | "unknown" => break trimmed.to_string(),
                        _ => early_errors.push(trimmed.to_string()),
                    }
                }
                Err(RecvTimeoutError::Timeout) => {
                    reaper.finish();
                    return Ok(SolverVerdict::Timeout);
                }
                Err(RecvTimeoutError::Disconnected) => {
                    reaper.finish();
                    let err = stderr_reader.join().unwrap_or_default();
                    let mut detail = early_errors.join("\n");
                    if !err.trim().is_empty() {
                        detail.push_str(err.trim());
                    }
                    if detail.is_empty() {
                        detail = "solver exited without a verdict".into();
                    }
                    return Ok(SolverVerdict::ProtocolError(detail));
                }
            }
        };
        if !early_errors.is_empty() {
            return Ok(SolverVerdict::ProtocolError(early_errors.join("\n")));
        }

        let follow_up = match verdict_word.as_str() {
            "sat" => "(get-model)\n(exit)\n",
            "unsat" => "(get-unsat-core)\n(exit)\n",
            _ => "(exit)\n",
        };
        match writer.join() {
            Ok(Ok(mut stdin)) => {
                if stdin.write_all(follow_up.as_bytes()).and_then(|_| stdin.flush()).is_err() {
                    return Ok(SolverVerdict::ProtocolError("solver closed its input".into()));
                }
            }
            _ => return Ok(SolverVerdict::ProtocolError("failed to write script".into())),
        }

        let mut rest = Vec::new();
        loop {
            let remaining = deadline.saturating_duration_since(Instant::now());
            match rx.recv_timeout(remaining) {
                Ok(line) => rest.push(line),
                Err(RecvTimeoutError::Timeout) => {
                    reaper.finish();
                    return Ok(SolverVerdict::Timeout);
                }
                Err(RecvTimeoutError::Disconnected) => break,
            }
        }
        reaper.wait_exit(deadline);
        let text = rest.join("\n");
        if text.contains("(error") {
            return Ok(SolverVerdict::ProtocolError(text));
        }
        Ok(match verdict_word.as_str() {
            "sat" => SolverVerdict::Sat(text),
            "unsat" => SolverVerdict::Unsat(text),
            _ => SolverVerdict::Unknown,
        })
    }
}

/// Convenience wrapper: a fresh handle per call.
pub fn run(config: &SolverConfig, script: &str) -> Result<SolverVerdict, SolverError> {
    SolverHandle::new(config.clone())?.run(script)
}

/// Parses a `(get-model)` response into variable values. Constants of
/// non-builtin sorts come back as `Literal::String` holding the
/// constructor symbol. Definitions with parameters and Boolean definitions
/// whose body is an expression are skipped.
pub fn parse_model(text: &str) -> Result<BTreeMap<String, Literal>, ParseError> {
    let exprs = parse_all(text)?;
    let bad = |message: String| ParseError { offset: 0, message };
    let mut items: &[SExpr] = match exprs.as_slice() {
        [SExpr::List(items)] => items,
        [] => &[],
        _ => return Err(bad("expected a single model list".into())),
    };
    if items.first().and_then(SExpr::atom) == Some("model") {
        items = &items[1..];
    }
    let mut out = BTreeMap::new();
    for item in items {
        let parts = item.list().ok_or_else(|| bad(format!("unexpected model entry `{item}`")))?;
        match parts {
            [SExpr::Atom(head), SExpr::Atom(name), SExpr::List(params), sort, value] if head == "define-fun" => {
                if !params.is_empty() {
                    continue;
                }
                let sort = sort.atom().ok_or_else(|| bad(format!("unsupported sort `{sort}`")))?;
                // Named assertions show up as Boolean definitions over
                // other symbols; they are not variables.
                if sort == "Bool" && value.list().is_some() {
                    continue;
                }
                out.insert(name.clone(), value_literal(sort, value).map_err(bad)?);
            }
            _ => continue,
        }
    }
    Ok(out)
}

fn value_literal(sort: &str, value: &SExpr) -> Result<Literal, String> {
    match sort {
        "Bool" => match value.atom() {
            Some("true") => Ok(Literal::Boolean(true)),
            Some("false") => Ok(Literal::Boolean(false)),
            _ => Err(format!("invalid Bool value `{value}`")),
        },
        "Int" => Ok(Literal::Integer(Decimal(numeric(value)?))),
        "Real" => Ok(Literal::Real(Decimal(numeric(value)?))),
        _ => match value.atom() {
            Some(sym) => Ok(Literal::String(sym.to_string())),
            None => Err(format!("unsupported value `{value}` of sort {sort}")),
        },
    }
}

fn numeric(value: &SExpr) -> Result<BigRational, String> {
    match value {
        SExpr::Atom(a) => {
            let d: Decimal = a.parse().map_err(|_| format!("invalid numeral `{a}`"))?;
            Ok(d.0)
        }
        SExpr::List(items) => match items.as_slice() {
            [SExpr::Atom(op), x] if op == "-" => Ok(-numeric(x)?),
            [SExpr::Atom(op), n, d] if op == "/" => {
                let d = numeric(d)?;
                if d.is_zero() {
                    return Err("division by zero in model value".into());
                }
                Ok(numeric(n)? / d)
            }
            _ => Err(format!("unsupported numeric form `{value}`")),
        },
    }
}

/// Writes values in the solver's model syntax; `parse_model` inverts it.
/// String literals are printed as constructor symbols of sort `Str`.
pub fn print_model(values: &BTreeMap<String, Literal>) -> String {
    let mut out = String::from("(\n");
    for (name, value) in values {
        let (sort, text) = match value {
            Literal::Boolean(b) => ("Bool", b.to_string()),
            Literal::Integer(d) => ("Int", smt_int(&d.0)),
            Literal::Real(d) => ("Real", smt_real(&d.0)),
            Literal::String(s) => ("Str", s.clone()),
        };
        out.push_str(&format!("  (define-fun {name} () {sort}\n    {text})\n"));
    }
    out.push(')');
    out
}

pub(crate) fn smt_int(v: &BigRational) -> String {
    let n = v.to_integer();
    if n.is_negative() {
        format!("(- {})", n.abs())
    } else {
        n.to_string()
    }
}

pub(crate) fn smt_real(v: &BigRational) -> String {
    let body = |r: &BigRational| -> String {
        if r.is_integer() {
            format!("{}.0", r.to_integer())
        } else {
            match Decimal(r.clone()).to_decimal_string() {
                Some(s) => s,
                None => format!("(/ {}.0 {}.0)", r.numer(), r.denom()),
            }
        }
    };
    if v.is_negative() {
        format!("(- {})", body(&-v.clone()))
    } else {
        body(v)
    }
}

/// Parses a `(get-unsat-core)` response.
pub fn parse_core(text: &str) -> Result<BTreeSet<String>, ParseError> {
    let exprs = parse_all(text)?;
    match exprs.as_slice() {
        [SExpr::List(items)] => items
            .iter()
            .map(|i| {
                i.atom().map(str::to_string).ok_or_else(|| ParseError {
                    offset: 0,
                    message: format!("core entry `{i}` is not a label"),
                })
            })
            .collect(),
        _ => Err(ParseError { offset: 0, message: "expected a single label list".into() }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_values_parse() {
        let text = "(\n  (define-fun depth_s1 () Real\n    7.0)\n  (define-fun n () Int\n    (- 3))\n  (define-fun q () Real\n    (/ 1.0 3.0))\n  (define-fun b () Bool\n    false)\n  (define-fun s () Str\n    str__1)\n  (define-fun f ((x Int)) Int\n    x)\n  (define-fun g__0 () Bool\n    (= n 3))\n)";
        let m = parse_model(text).unwrap();
        assert_eq!(m["depth_s1"], Literal::real("7"));
        assert_eq!(m["n"], Literal::integer(-3));
        assert_eq!(m["q"], Literal::Real("1/3".parse().unwrap()));
        assert_eq!(m["b"], Literal::Boolean(false));
        assert_eq!(m["s"], Literal::String("str__1".into()));
        assert!(!m.contains_key("f"));
        assert!(!m.contains_key("g__0"));
    }

    #[test]
    fn negative_real_and_legacy_model_header() {
        let m = parse_model("(model (define-fun x () Real (- (/ 5.0 2.0))))").unwrap();
        assert_eq!(m["x"], Literal::real("-2.5"));
    }

    #[test]
    fn print_parse_identity() {
        let mut values = BTreeMap::new();
        values.insert("a".to_string(), Literal::real("-7.25"));
        values.insert("b".to_string(), Literal::Real("-2/3".parse().unwrap()));
        values.insert("c".to_string(), Literal::integer(-4));
        values.insert("d".to_string(), Literal::Boolean(true));
        values.insert("e".to_string(), Literal::String("str__0".into()));
        assert_eq!(parse_model(&print_model(&values)).unwrap(), values);
    }

    #[test]
    fn cores_parse() {
        let core = parse_core("(g__0 c__ab12cd34__0__s0)").unwrap();
        assert_eq!(core.len(), 2);
        assert!(core.contains("g__0"));
        assert!(parse_core("()").unwrap().is_empty());
        assert!(parse_core("(g__0").is_err());
    }
}
