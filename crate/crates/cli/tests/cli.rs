use std::path::PathBuf;
use std::process::{Command, Output};

fn fixture(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../core/fixtures")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dreamsched"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn schedule_explain_reports_objective() {
    let o = run(&[
        "schedule",
        "--profile",
        &fixture("three_layer.profile"),
        "--H",
        "2",
        "--explain",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("schedule={3}|{2,1}\n"), "{text}");
    assert!(text.contains("iteration 1: bp_before=0.0 bp_first=1.0 overlap_window=2.0 comm_span=2.0 term=3.0\n"));
    assert!(text.contains("iteration 2: bp_before=1.0 bp_first=1.0 overlap_window=1.0 comm_span=4.0 term=6.0\n"));
    assert!(text.contains("objective=9.0\n"));
}

#[test]
fn schedule_file_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s.schedule");
    let o = run(&[
        "schedule",
        "--profile",
        &fixture("three_layer.profile"),
        "--H",
        "2",
        "--out",
        out.to_str().unwrap(),
        "--no-fill",
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(
        std::fs::read_to_string(&out).unwrap(),
        "dreamsched-schedule v1\nH=2 L=3\nh=1: sync=[3] fill=[]\nh=2: sync=[2,1] fill=[]\n"
    );
}

#[test]
fn oracle_gap_is_zero_on_the_fixture() {
    let o = run(&["oracle", "--profile", &fixture("three_layer.profile"), "--H", "2"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("dfs_cost=9.0\n") && text.contains("brute_cost=9.0\n"));
    assert!(text.contains("gap=0.0%\n"), "{text}");
}

#[test]
fn simulate_flsgd_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.json");
    let o = run(&[
        "simulate",
        "--profile",
        &fixture("totals_123.profile"),
        "--mode",
        "flsgd",
        "--H",
        "5",
        "--iters",
        "10",
        "--trace",
        trace.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("makespan=36.0\n"));
    let json = std::fs::read_to_string(&trace).unwrap();
    assert!(json.contains("\"COMM ALL\""));

    let o = run(&[
        "simulate",
        "--profile",
        &fixture("totals_123.profile"),
        "--mode",
        "ssgd",
        "--iters",
        "10",
    ]);
    assert!(stdout(&o).contains("makespan=60.0\n"));
    let o = run(&[
        "simulate",
        "--profile",
        &fixture("three_layer.profile"),
        "--mode",
        "plsgd",
        "--iters",
        "2",
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn profile_gen_then_compare() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.profile");
    let p = p.to_str().unwrap();
    let o = run(&[
        "profile",
        "gen",
        "--layers",
        "30",
        "--seed",
        "7",
        "--regime",
        "comm-heavy",
        "--out",
        p,
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("layers=30\n"));
    assert!(stdout(&run(&["profile", "check", "--profile", p])).contains("label=m\n"));
    let o = run(&["compare", "--profile", p, "--H", "5", "--iters", "10"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("mode\tmakespan_s\tavg_iter_s\n"));
    let s1: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("S1="))
        .unwrap()
        .parse()
        .unwrap();
    assert!(s1 > 1.0);
}

#[test]
fn train_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.conf");
    std::fs::write(
        &cfg,
        "blocks = 4,4,4\nworkers = 4\nperiod = 3\niterations = 30\nmode = partial\nlog_stride = 10\n",
    )
    .unwrap();
    let csv = dir.path().join("trace.csv");
    let o = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("mode=partial\n"));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("r,gamma,gamma_l_1,gamma_l_2,gamma_l_3,lemma2_bound,subopt,eta\n"));
    assert_eq!(text.lines().count(), 5);

    std::fs::write(&cfg, "workers = many\n").unwrap();
    let o = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 1"));
}

#[test]
fn bench_sched_is_deterministic_csv() {
    let a = run(&["bench", "sched", "--max-layers", "12"]);
    let b = run(&["bench", "sched", "--max-layers", "12", "--sequential"]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let text = stdout(&a);
    assert!(text.starts_with("layers,H,brute_candidates,dfs_solutions,bound,"));
    assert_eq!(text.lines().count(), 1 + 8);
}

#[test]
fn errors_map_to_exit_codes() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(
        run(&["oracle", "--profile", "x", "--H", "2", "--bogus"]).status.code(),
        Some(1)
    );
    let missing = run(&["oracle", "--profile", "/definitely/missing.profile", "--H", "2"]);
    assert_eq!(missing.status.code(), Some(1));
    let err = String::from_utf8_lossy(&missing.stderr);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert_eq!(
        run(&["schedule", "--profile", &fixture("three_layer.profile"), "--H", "4"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}
