use capaplan_core::solver::{parse_core, SolverConfig, SolverHandle, SolverVerdict};

fn config() -> SolverConfig {
    SolverConfig::default().with_env_override()
}

fn reaped(pid: u32) -> bool {
    match std::fs::read_to_string(format!("/proc/{pid}/stat")) {
        Err(_) => true,
        // A zombie would still show up with state `Z`.
        Ok(stat) => !stat.split_whitespace().nth(2).is_some_and(|s| s == "Z"),
    }
}

#[test]
fn false_assertion_is_unsat() {
    let mut h = SolverHandle::new(config()).unwrap();
    let v = h
        .run("(set-option :produce-unsat-cores true)\n(assert (! false :named a0))\n(check-sat)")
        .unwrap();
    match v {
        SolverVerdict::Unsat(core) => assert_eq!(parse_core(&core).unwrap().len(), 1),
        other => panic!("expected unsat, got {other:?}"),
    }
    assert!(reaped(h.last_pid().unwrap()));
}

#[test]
fn true_assertion_is_sat() {
    let v = capaplan_core::solver::run(&config(), "(declare-const x Int)\n(assert (> x 2))\n(check-sat)").unwrap();
    let SolverVerdict::Sat(model) = v else { panic!("expected sat") };
    let values = capaplan_core::solver::parse_model(&model).unwrap();
    assert!(values.contains_key("x"));
}

#[test]
fn timeout_kills_and_reaps_the_child() {
    let mut script = String::new();
    for i in 0..400 {
        script.push_str(&format!("(declare-const x{i} Int)\n(assert (> (* 3 x{i}) (+ x{} 7)))\n", (i + 1) % 400));
    }
    script.push_str("(check-sat)");
    let mut h = SolverHandle::new(config().with_timeout(1)).unwrap();
    assert_eq!(h.run(&script).unwrap(), SolverVerdict::Timeout);
    assert!(reaped(h.last_pid().unwrap()));
}

#[test]
fn malformed_script_is_a_protocol_error() {
    let v = capaplan_core::solver::run(&config(), "(assert (undeclared_symbol))\n(check-sat)").unwrap();
    assert!(matches!(v, SolverVerdict::ProtocolError(_)), "{v:?}");
}

#[test]
fn missing_executable_is_a_spawn_error() {
    let cfg = SolverConfig { executable: "/nonexistent/solver".into(), ..SolverConfig::default() };
    assert!(capaplan_core::solver::run(&cfg, "(check-sat)").is_err());
}

#[test]
fn zero_timeout_is_rejected() {
    assert!(SolverHandle::new(config().with_timeout(0)).is_err());
}

#[test]
fn memoized_verdict_matches_fresh_run_without_a_second_process() {
    let script = "(declare-const y Int)\n(assert (= (* y 3) 12))\n(check-sat)";
    let fresh = capaplan_core::solver::run(&config(), script).unwrap();
    let mut h = SolverHandle::new(config().with_memoize(true)).unwrap();
    assert_eq!(h.run(script).unwrap(), fresh);
    let first_pid = h.last_pid();
    assert_eq!(h.run(script).unwrap(), fresh);
    assert_eq!(h.last_pid(), first_pid);
}
