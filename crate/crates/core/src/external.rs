//! Evaluator backed by a child process speaking a line protocol on its
//! standard streams.
//!
//! ```text
//! parent: SPACE <single-line JSON space document>
//! child:  READY
//! parent: EVAL <label_1> <label_2> ... <label_d>
//! child:  <decimal float>
//! parent: END            (child exits with status 0)
//! ```
//!
//! Requests are strictly serialized: one reply line per `EVAL`. Any other
//! line from the child is a protocol violation.

use std::io::{self, BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, ExitStatus, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, TryRecvError};
use std::thread;
use std::time::{Duration, Instant};

use rand::{RngCore, SeedableRng};
use thiserror::Error;

use crate::optimizer::{EvalError, Evaluator, NtbeaRng};
use crate::space::{Point, SearchSpace};

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("empty evaluator command")]
    EmptyCommand,
    #[error("failed to start `{command}`: {source}")]
    Spawn {
        command: String,
        #[source]
        source: io::Error,
    },
    #[error("value label `{0}` cannot be sent on one line (empty or contains whitespace)")]
    BadLabel(String),
    #[error("no READY from evaluator within {0:?}")]
    HandshakeTimeout(Duration),
    #[error("no reply to `{request}` within {timeout:?}")]
    ReplyTimeout { request: String, timeout: Duration },
    #[error("protocol violation: expected {expected}, got line {line:?}")]
    UnexpectedLine { expected: &'static str, line: String },
    #[error("evaluator closed its output while waiting for {awaiting}")]
    PrematureEof { awaiting: String },
    #[error("evaluator replied with non-finite fitness {0:?}")]
    NonFinite(String),
    #[error("i/o error talking to evaluator: {0}")]
    Io(#[from] io::Error),
}

impl ProtocolError {
    /// Errors that mean the child died rather than misbehaved.
    fn is_crash(&self) -> bool {
        match self {
            ProtocolError::PrematureEof { .. } => true,
            ProtocolError::Io(e) => e.kind() == io::ErrorKind::BrokenPipe,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExternalEvaluatorConfig {
    /// Program followed by its arguments.
    pub command: Vec<String>,
    pub timeout: Duration,
    pub restart_on_crash: bool,
    pub max_restarts: u32,
}

impl ExternalEvaluatorConfig {
    pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

    /// Splits `command` on whitespace; no shell quoting is interpreted.
    pub fn from_command_line(command: &str) -> Self {
        Self {
            command: command.split_whitespace().map(String::from).collect(),
            timeout: Self::DEFAULT_TIMEOUT,
            restart_on_crash: false,
            max_restarts: 0,
        }
    }
}

struct ChildProcess {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<io::Result<String>>,
}

impl ChildProcess {
    fn start(cfg: &ExternalEvaluatorConfig) -> Result<Self, ProtocolError> {
        let (program, args) = cfg.command.split_first().ok_or(ProtocolError::EmptyCommand)?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|source| ProtocolError::Spawn {
                command: cfg.command.join(" "),
                source,
            })?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        Ok(Self {
            child,
            stdin,
            lines: rx,
        })
    }

    fn send(&mut self, line: &str) -> Result<(), ProtocolError> {
        self.stdin.write_all(line.as_bytes())?;
        self.stdin.write_all(b"\n")?;
        self.stdin.flush()?;
        Ok(())
    }

    /// Next line from the child; `Ok(None)` on timeout.
    fn recv(&self, timeout: Duration, awaiting: &str) -> Result<Option<String>, ProtocolError> {
        match self.lines.recv_timeout(timeout) {
            Ok(Ok(line)) => Ok(Some(line.trim_end_matches('\r').to_string())),
            Ok(Err(e)) => Err(ProtocolError::Io(e)),
            Err(RecvTimeoutError::Timeout) => Ok(None),
            Err(RecvTimeoutError::Disconnected) => Err(ProtocolError::PrematureEof {
                awaiting: awaiting.to_string(),
            }),
        }
    }

    /// Fails if the child has written anything nobody asked for.
    fn ensure_quiet(&self) -> Result<(), ProtocolError> {
        match self.lines.try_recv() {
            Ok(Ok(line)) => Err(ProtocolError::UnexpectedLine {
                expected: "no output between requests",
                line,
            }),
            Ok(Err(e)) => Err(ProtocolError::Io(e)),
            Err(TryRecvError::Empty) | Err(TryRecvError::Disconnected) => Ok(()),
        }
    }

    fn handshake(&mut self, space_line: &str, timeout: Duration) -> Result<(), ProtocolError> {
        self.send(&format!("SPACE {space_line}"))?;
        match self.recv(timeout, "READY")? {
            None => Err(ProtocolError::HandshakeTimeout(timeout)),
            Some(line) if line == "READY" => Ok(()),
            Some(line) => Err(ProtocolError::UnexpectedLine {
                expected: "READY",
                line,
            }),
        }
    }

    fn request(&mut self, request: &str, timeout: Duration) -> Result<f64, ProtocolError> {
        self.ensure_quiet()?;
        self.send(request)?;
        let line = self
            .recv(timeout, &format!("a reply to `{request}`"))?
            .ok_or_else(|| ProtocolError::ReplyTimeout {
                request: request.to_string(),
                timeout,
            })?;
        let value: f64 = line.trim().parse().map_err(|_| ProtocolError::UnexpectedLine {
            expected: "a decimal float",
            line: line.clone(),
        })?;
        if !value.is_finite() {
            return Err(ProtocolError::NonFinite(line));
        }
        Ok(value)
    }

    /// Sends END and waits up to `timeout` for the child to exit.
    fn finish(mut self, timeout: Duration) -> Result<ExitStatus, ProtocolError> {
        let _ = self.send("END");
        let deadline = Instant::now() + timeout;
        loop {
            if let Some(status) = self.child.try_wait()? {
                return Ok(status);
            }
            if Instant::now() >= deadline {
                let _ = self.child.kill();
                return Ok(self.child.wait()?);
            }
            thread::sleep(Duration::from_millis(5));
        }
    }

    fn kill(mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// An [`Evaluator`] that forwards each point to a child process.
pub struct ExternalEvaluator {
    cfg: ExternalEvaluatorConfig,
    space: SearchSpace,
    space_line: String,
    child: Option<ChildProcess>,
    restarts: u32,
}

impl ExternalEvaluator {
    /// Starts the child and completes the handshake.
    pub fn spawn(cfg: ExternalEvaluatorConfig, space: &SearchSpace) -> Result<Self, ProtocolError> {
        for dim in space.dims() {
            for i in 0..dim.cardinality() {
                let label = dim.label(i);
                if label.is_empty() || label.chars().any(char::is_whitespace) {
                    return Err(ProtocolError::BadLabel(label));
                }
            }
        }
        let mut evaluator = Self {
            cfg,
            space: space.clone(),
            space_line: space.to_json_line(),
            child: None,
            restarts: 0,
        };
        evaluator.start_child()?;
        Ok(evaluator)
    }

    fn start_child(&mut self) -> Result<(), ProtocolError> {
        let mut child = ChildProcess::start(&self.cfg)?;
        if let Err(e) = child.handshake(&self.space_line, self.cfg.timeout) {
            child.kill();
            return Err(e);
        }
        self.child = Some(child);
        Ok(())
    }

    /// Number of times a crashed child has been replaced.
    pub fn restarts(&self) -> u32 {
        self.restarts
    }

    pub fn eval_line(&self, p: &Point) -> String {
        format!("EVAL {}", self.space.labels(p).join(" "))
    }

    pub fn evaluate_point(&mut self, p: &Point) -> Result<f64, ProtocolError> {
        let request = self.eval_line(p);
        loop {
            if self.child.is_none() {
                self.start_child()?;
            }
            let child = self.child.as_mut().expect("child running");
            match child.request(&request, self.cfg.timeout) {
                Ok(v) => return Ok(v),
                Err(e) => {
                    if let Some(c) = self.child.take() {
                        c.kill();
                    }
                    if e.is_crash() && self.cfg.restart_on_crash && self.restarts < self.cfg.max_restarts {
                        self.restarts += 1;
                        continue;
                    }
                    return Err(e);
                }
            }
        }
    }

    /// Sends END and returns the child's exit status.
    pub fn shutdown(mut self) -> Result<Option<ExitStatus>, ProtocolError> {
        match self.child.take() {
            Some(child) => child.finish(self.cfg.timeout).map(Some),
            None => Ok(None),
        }
    }
}

impl Drop for ExternalEvaluator {
    fn drop(&mut self) {
        if let Some(child) = self.child.take() {
            let _ = child.finish(Duration::from_secs(1));
        }
    }
}

impl Evaluator for ExternalEvaluator {
    fn evaluate(&mut self, point: &Point, _rng: &mut dyn RngCore) -> Result<f64, EvalError> {
        Ok(self.evaluate_point(point)?)
    }
}

/// Outcome of [`protocol_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConformanceReport {
    /// Human-readable steps that succeeded.
    pub passed: Vec<String>,
    /// Violations, each quoting the offending raw line where there is one.
    pub violations: Vec<String>,
}

impl ConformanceReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// How long to wait for stray output after each probe reply.
const PROBE_GRACE: Duration = Duration::from_millis(200);

/// Handshake, `probes` evaluations of random points, then END with a clean exit.
pub fn protocol_check(
    cfg: &ExternalEvaluatorConfig,
    space: &SearchSpace,
    probes: usize,
    seed: u64,
) -> ConformanceReport {
    let mut report = ConformanceReport {
        passed: Vec::new(),
        violations: Vec::new(),
    };
    let mut child = match ChildProcess::start(cfg) {
        Ok(c) => c,
        Err(e) => {
            report.violations.push(e.to_string());
            return report;
        }
    };
    if let Err(e) = child.handshake(&space.to_json_line(), cfg.timeout) {
        report.violations.push(format!("handshake: {e}"));
        child.kill();
        return report;
    }
    report.passed.push("handshake: READY received".into());

    let mut rng = NtbeaRng::seed_from_u64(seed);
    for i in 0..probes {
        let p = space.random_point(&mut rng);
        let request = format!("EVAL {}", space.labels(&p).join(" "));
        match child.request(&request, cfg.timeout) {
            Ok(v) => report.passed.push(format!("probe {}: `{request}` -> {v}", i + 1)),
            Err(e) => {
                report.violations.push(format!("probe {}: {e}", i + 1));
                child.kill();
                return report;
            }
        }
        match child.recv(PROBE_GRACE, "nothing") {
            Ok(None) | Err(ProtocolError::PrematureEof { .. }) => {}
            Ok(Some(line)) => {
                report.violations.push(format!(
                    "probe {}: protocol violation: extra output line {line:?} after the reply",
                    i + 1
                ));
                child.kill();
                return report;
            }
            Err(e) => {
                report.violations.push(format!("probe {}: {e}", i + 1));
                child.kill();
                return report;
            }
        }
    }

    match child.finish(cfg.timeout) {
        Ok(status) if status.success() => report.passed.push("shutdown: exit status 0".into()),
        Ok(status) => report
            .violations
            .push(format!("shutdown: child exited with {status} after END")),
        Err(e) => report.violations.push(format!("shutdown: {e}")),
    }
    report
}
