use std::time::Duration;

use ntbea::external::{protocol_check, ExternalEvaluator, ExternalEvaluatorConfig, ProtocolError};
use ntbea::optimizer;
use ntbea::{NtbeaSettings, Point, SearchSpace, WeightingScheme};

const REF: &str = env!("CARGO_BIN_EXE_ntbea-ref-evaluator");

fn demo_space() -> SearchSpace {
    let doc = r#"{"dimensions": [
        {"name": "depth", "values": [1, 2, 4]},
        {"name": "policy", "values": ["greedy", "mcts"]},
        {"name": "rate", "values": [0.1, 0.5]}
    ]}"#;
    SearchSpace::from_config(doc, ntbea::space::ConfigFormat::Json).unwrap()
}

fn cfg(args: &[&str]) -> ExternalEvaluatorConfig {
    ExternalEvaluatorConfig {
        command: std::iter::once(REF.to_string())
            .chain(args.iter().map(|s| s.to_string()))
            .collect(),
        timeout: Duration::from_secs(2),
        restart_on_crash: false,
        max_restarts: 0,
    }
}

#[test]
fn reference_child_evaluates_index_sums() {
    let space = demo_space();
    let mut ev = ExternalEvaluator::spawn(cfg(&[]), &space).unwrap();
    assert_eq!(ev.eval_line(&Point::new(vec![2, 1, 0])), "EVAL 4 mcts 0.1");
    assert_eq!(ev.evaluate_point(&Point::new(vec![2, 1, 0])).unwrap(), 3.0);
    assert_eq!(ev.evaluate_point(&Point::new(vec![0, 0, 0])).unwrap(), 0.0);
    let status = ev.shutdown().unwrap().unwrap();
    assert!(status.success());
}

#[test]
fn optimizer_runs_against_external_child() {
    let space = demo_space();
    let mut ev = ExternalEvaluator::spawn(cfg(&[]), &space).unwrap();
    let settings = NtbeaSettings::new(40, WeightingScheme::vanilla(), 4);
    let (model, rec) = optimizer::run(&space, &mut ev, &settings).unwrap();
    assert_eq!(model.total_iterations(), 40);
    assert_eq!(rec.evaluations_used, 40);
    // Deterministic fitness: the best point is the all-max corner.
    assert_eq!(rec.recommended.indices(), &[2, 1, 1]);
}

#[test]
fn conforming_child_passes_check() {
    let report = protocol_check(&cfg(&[]), &demo_space(), 3, 0);
    assert!(report.is_ok(), "{:?}", report.violations);
    assert_eq!(report.passed.len(), 5);
}

#[test]
fn double_reply_is_reported_with_raw_line() {
    let report = protocol_check(&cfg(&["--fault", "double-reply"]), &demo_space(), 3, 0);
    assert_eq!(report.violations.len(), 1);
    assert!(report.violations[0].contains("extra output line"), "{:?}", report.violations);
}

#[test]
fn missing_ready_times_out() {
    let mut c = cfg(&["--fault", "no-ready"]);
    c.timeout = Duration::from_millis(500);
    let report = protocol_check(&c, &demo_space(), 3, 0);
    assert_eq!(report.violations.len(), 1);
    assert!(report.violations[0].contains("no READY"), "{:?}", report.violations);
}

#[test]
fn non_numeric_reply_is_quoted() {
    let report = protocol_check(&cfg(&["--fault", "non-numeric"]), &demo_space(), 3, 0);
    assert_eq!(report.violations.len(), 1);
    assert!(report.violations[0].contains("\"score="), "{:?}", report.violations);
    let mut ev = ExternalEvaluator::spawn(cfg(&["--fault", "non-numeric"]), &demo_space()).unwrap();
    match ev.evaluate_point(&Point::new(vec![0, 0, 0])) {
        Err(ProtocolError::UnexpectedLine { line, .. }) => assert_eq!(line, "score=0"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn crash_without_restart_fails() {
    let mut ev = ExternalEvaluator::spawn(cfg(&["--fault", "crash", "--after", "2"]), &demo_space()).unwrap();
    let p = Point::new(vec![1, 1, 1]);
    assert!(ev.evaluate_point(&p).is_ok());
    assert!(ev.evaluate_point(&p).is_ok());
    assert!(matches!(ev.evaluate_point(&p), Err(ProtocolError::PrematureEof { .. })));
}

#[test]
fn crash_with_restart_recovers() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("starts.log");
    let log_arg = log.to_str().unwrap();
    let mut c = cfg(&["--fault", "crash", "--after", "2", "--start-log", log_arg]);
    c.restart_on_crash = true;
    c.max_restarts = 3;
    let mut ev = ExternalEvaluator::spawn(c, &demo_space()).unwrap();
    let p = Point::new(vec![1, 1, 1]);
    for _ in 0..5 {
        assert_eq!(ev.evaluate_point(&p).unwrap(), 3.0);
    }
    assert_eq!(ev.restarts(), 2);
    drop(ev);
    let starts = std::fs::read_to_string(&log).unwrap();
    assert_eq!(starts.lines().count(), 3);
}

#[test]
fn restart_budget_is_enforced() {
    let mut c = cfg(&["--fault", "crash", "--after", "0"]);
    c.restart_on_crash = true;
    c.max_restarts = 2;
    let mut ev = ExternalEvaluator::spawn(c, &demo_space()).unwrap();
    assert!(ev.evaluate_point(&Point::new(vec![0, 0, 0])).is_err());
    assert_eq!(ev.restarts(), 2);
}

#[test]
fn unknown_program_fails_to_spawn() {
    let c = ExternalEvaluatorConfig::from_command_line("/nonexistent/evaluator --x");
    assert!(matches!(
        ExternalEvaluator::spawn(c, &demo_space()),
        Err(ProtocolError::Spawn { .. })
    ));
    let c = ExternalEvaluatorConfig::from_command_line("   ");
    assert!(matches!(ExternalEvaluator::spawn(c, &demo_space()), Err(ProtocolError::EmptyCommand)));
}

#[test]
fn labels_with_whitespace_are_rejected() {
    let doc = r#"{"dimensions": [{"name": "a", "values": ["x y", "z"]}]}"#;
    let space = SearchSpace::from_config(doc, ntbea::space::ConfigFormat::Json).unwrap();
    assert!(matches!(ExternalEvaluator::spawn(cfg(&[]), &space), Err(ProtocolError::BadLabel(_))));
}
