mod common;

use capaplan_core::scenario::{run_scenario, run_suite, Grade, LoadedScenario};
use common::fixtures_dir;

#[test]
fn shipped_suite_passes_once() {
    let report = run_suite(&fixtures_dir().join("scenarios"), Some(1)).unwrap();
    println!("{}", report.render());
    assert_eq!(report.cases.len(), 23);
    assert!(report.all_passed());
}

#[test]
fn answer_missing_a_fact_is_partial() {
    let s = LoadedScenario::load(&fixtures_dir().join("test_only/kq-partial.json")).unwrap();
    let (report, reps) = run_scenario(&s, 1).unwrap();
    assert_eq!(report.grade, Grade::Partially);
    assert!(reps[0].notes.iter().any(|n| n.contains("10 mm")));
    assert!(report.notes.iter().any(|n| n.contains("out-of-band")));
}

#[test]
fn empty_directory_gives_empty_report() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_suite(dir.path(), None).unwrap();
    assert!(report.cases.is_empty());
    assert!(report.all_passed());
}
