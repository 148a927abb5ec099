use std::path::PathBuf;
use std::process::{Command, Output};

const HEADER: &str = "config,strategy,model,lambda_spec,direction,value,exact,backend,nodes_or_n,seed,runtime_ms";

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seqsens")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn scratch(name: &str) -> PathBuf {
    std::env::temp_dir().join(format!("seqsens-cli-{}-{name}", std::process::id()))
}

#[test]
fn bounds_csv() {
    let o = run(&["bounds", "--lambda", "2", "--nodes", "16"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], HEADER);
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("C1,11,primary,2|2,upper,"));
    assert!(lines[2].starts_with("C1,11,primary,2|2,lower,"));
    let upper: f64 = lines[1].split(',').nth(5).unwrap().parse().unwrap();
    let lower: f64 = lines[2].split(',').nth(5).unwrap().parse().unwrap();
    assert!(lower < 60.0 && 60.0 < upper);
}

#[test]
fn product_bounds_need_both_channels() {
    let o = run(&["bounds", "--model", "prod_v1", "--lambda-y", "2"]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(&["bounds", "--model", "prod_v1,prod_v2", "--lambda-l", "2,1", "--lambda-y", "1,2", "--direction", "upper"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().count(), 3);
}

#[test]
fn input_errors_exit_one() {
    for args in [
        &["bounds", "--config", "C9"][..],
        &["bounds", "--lambda", "0.5"],
        &["bounds", "--lambda", "2,2,2"],
        &["sweep", "--model", "nope"],
        &["bounds", "--strategy", "1x"],
    ] {
        let o = run(args);
        assert_eq!(o.status.code(), Some(1), "{args:?}");
        assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"), "{args:?}");
    }
}

#[test]
fn sweep_is_byte_stable() {
    let args = ["sweep", "--config", "C3", "--lambda", "1,2,3", "--nodes", "16"];
    let (a, b) = (run(&args), run(&args));
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(stdout(&a).lines().count(), 1 + 3 * 4);
    let mc = ["sweep", "--lambda", "2", "--model", "primary", "--mc", "20000", "--seed", "4"];
    let (a, b) = (run(&mc), run(&mc));
    assert_eq!(a.stdout, b.stdout);
    assert!(stdout(&a).lines().nth(1).unwrap().ends_with(",mc,20000,4,0"));
}

#[test]
fn implied_distribution_file() {
    let path = scratch("dist.csv");
    let o = run(&["implied-dist", "--config", "C2", "--nodes", "8", "--out", path.to_str().unwrap()]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::remove_file(&path).ok();
    assert_eq!(text.lines().next(), Some("stage,cell,y,weight"));
    let footer = text.lines().last().unwrap();
    assert!(footer.starts_with("marginal_mean,*,"));
    let marginal: f64 = text.lines().filter(|l| l.starts_with("marginal,")).map(|l| l.split(',').nth(3).unwrap().parse::<f64>().unwrap()).sum();
    assert!((marginal - 1.0).abs() < 1e-9);
    let o = run(&["implied-dist", "--direction", "both", "--out", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn json_config() {
    let path = scratch("law.json");
    std::fs::write(
        &path,
        r#"{
  "periods": 1,
  "covariate_supports": [["a"]],
  "baseline_marginal": [1.0],
  "strategy": "1",
  "propensities": {"a": 0.5},
  "transitions": {},
  "outcomes": {"a": {"support": [[0.0, 0.5], [1.0, 0.5]]}}
}"#,
    )
    .unwrap();
    let o = run(&["bounds", "--config", path.to_str().unwrap(), "--lambda", "2", "--direction", "upper"]);
    std::fs::remove_file(&path).ok();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let row = text.lines().nth(1).unwrap();
    assert!(row.contains(",primary,2,upper,0.625,sharp,"), "{row}");
}

#[test]
fn validate_passes() {
    let o = run(&["validate", "--nodes", "16"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.lines().count() >= 8);
    assert!(text.lines().all(|l| l.starts_with("PASS ")));
}
