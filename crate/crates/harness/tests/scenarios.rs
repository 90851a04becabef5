use std::path::PathBuf;
use std::process::Command;

use tutorlink_harness::local::LocalGateway;
use tutorlink_harness::{run_scenario, Api, HarnessError, Scenario, ScenarioParseError};

fn bundled(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(format!("{name}.toml"))
}

async fn run(scenario: &Scenario, simulated: bool) -> Result<tutorlink_harness::ScenarioReport, HarnessError> {
    let gw = LocalGateway::start(simulated).await.expect("local gateway");
    let report = run_scenario(&Api::new(&gw.addr()), scenario).await;
    gw.stop().await;
    report
}

#[tokio::test]
async fn bundled_scenarios_pass() {
    for name in ["algebra_hint", "inactivity", "handshake"] {
        let s = Scenario::load(&bundled(name)).unwrap();
        let report = run(&s, true).await.unwrap();
        let failures: Vec<_> = report.failures().collect();
        assert!(failures.is_empty(), "{name}: {failures:?}");
        assert!(!report.assertions.is_empty());
        assert!(report.violations.is_empty(), "{name}: {:?}", report.violations);
    }
}

#[tokio::test]
async fn empty_scenario_has_no_assertions_and_passes() {
    let s = Scenario::parse("name = \"empty\"\n", "empty").unwrap();
    let report = run(&s, true).await.unwrap();
    assert_eq!(report.assertions.len(), 0);
    assert!(report.passed());
}

#[test]
fn out_of_order_steps_are_a_parse_error() {
    let text = r#"
[students]
count = 1

[[step]]
at = 5
do = "wait"

[[step]]
at = 4
do = "wait"
"#;
    match Scenario::parse(text, "bad") {
        Err(ScenarioParseError::OutOfOrder { index, .. }) => assert_eq!(index, 1),
        other => panic!("expected OutOfOrder, got {other:?}"),
    }
}

#[tokio::test]
async fn same_traffic_on_every_simulated_run() {
    let s = Scenario::load(&bundled("inactivity")).unwrap();
    let a = run(&s, true).await.unwrap();
    let b = run(&s, true).await.unwrap();
    assert_eq!(a.signature, b.signature);
    assert!(!a.signature.is_empty());
}

#[tokio::test]
async fn unmet_expectation_fails_the_run() {
    let text = r#"
[students]
count = 1

[[step]]
at = 0
do = "join"

[[step]]
at = 30
do = "wait"

[[expect]]
kind = "alert"
student = "Student 1"
alert = "inactivity"
"#;
    let s = Scenario::parse(text, "too-early").unwrap();
    let report = run(&s, true).await.unwrap();
    assert!(!report.passed());
    assert_eq!(report.failures().count(), 1);
}

#[tokio::test]
async fn real_clock_scenario_runs_in_wall_time() {
    let text = r#"
clock = "real"

[students]
count = 2

[[step]]
at = 0
do = "join"

[[step]]
at = 0.3
do = "chat"
from = "Student 1"
to = "tutor"
text = "hello"

[[expect]]
kind = "connected"

[[expect]]
kind = "chat"
to = "tutor"
from = "Student 1"
text = "hello"
"#;
    let s = Scenario::parse(text, "real").unwrap();
    let report = run(&s, false).await.unwrap();
    assert!(report.passed(), "{:?}", report.failures().collect::<Vec<_>>());
    assert!(report.wall.as_secs_f64() >= 0.3);
}

#[tokio::test]
async fn simulated_scenario_needs_the_test_clock() {
    let s = Scenario::load(&bundled("inactivity")).unwrap();
    match run(&s, false).await {
        Err(HarnessError::Refused { what, .. }) => assert_eq!(what, "clock advance"),
        other => panic!("expected a refusal, got {other:?}"),
    }
}

#[tokio::test]
async fn unreachable_gateway_is_a_connection_failure() {
    let s = Scenario::load(&bundled("inactivity")).unwrap();
    // bind and drop to find a port nobody listens on
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let err = run_scenario(&Api::new(&format!("127.0.0.1:{port}")), &s).await.unwrap_err();
    assert!(matches!(err, HarnessError::ConnectionFailure { .. }), "{err:?}");
}

#[test]
fn cli_runs_a_scenario_and_reports_each_assertion() {
    let out = Command::new(env!("CARGO_BIN_EXE_harness"))
        .arg("run")
        .arg(bundled("inactivity"))
        .output()
        .unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{stdout}\n{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS ")).count(), 2, "{stdout}");
}

#[test]
fn cli_rejects_a_malformed_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "[[step]]\nat = 2\ndo = \"wait\"\n[[step]]\nat = 1\ndo = \"wait\"\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_harness")).arg("run").arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("comes before the previous step"));
}
