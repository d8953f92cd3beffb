use std::path::PathBuf;

use dreamsched::cost_model::{period_objective, saved_ratio, t_lsgd_total, t_ssgd_total};
use dreamsched::profile::{load_profile, save_profile};
use dreamsched::schedule::{load_schedule, save_schedule, Schedule};
use dreamsched::scheduler::{bubble_fill, schedule_dfs};
use dreamsched::simulator::{export_trace, simulate_run, Mode};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

#[test]
fn resnet18_like_loads() {
    let p = load_profile(fixture("resnet18_like.profile")).unwrap();
    assert_eq!(p.num_layers(), 61);
    assert_eq!(p.label(), "resnet18_like");
    let (mut fp, mut bp, mut comm) = (0.0, 0.0, 0.0);
    for l in p.layers() {
        fp += l.t_fp;
        bp += l.t_bp;
        comm += p.comm(l.index);
    }
    let want = 1000.0 * (fp + bp + comm);
    assert!((t_ssgd_total(&p, 1000) - want).abs() <= 1e-12 * want);
}

#[test]
fn resnet18_like_schedules_and_simulates() {
    let p = load_profile(fixture("resnet18_like.profile")).unwrap();
    let s = bubble_fill(&schedule_dfs(&p, 5).unwrap().best, &p).unwrap();
    let cost = period_objective(&s, &p).unwrap();
    let t = simulate_run(&p, Mode::Plsgd, Some(&s), None, 5).unwrap();
    assert!((t.makespan - cost.total_with_fp).abs() <= 1e-9 * cost.total_with_fp);
    let enp = Schedule::equal_number(61, 5).unwrap();
    assert!(cost.objective <= period_objective(&enp, &p).unwrap().objective);
}

#[test]
fn small_fixtures_match_hand_numbers() {
    let totals = load_profile(fixture("totals_123.profile")).unwrap();
    assert_eq!(t_ssgd_total(&totals, 10), 60.0);
    assert_eq!(t_lsgd_total(&totals, 10, 5).unwrap(), 36.0);
    assert_eq!(saved_ratio(&totals, 5).unwrap(), 0.4);

    let three = load_profile(fixture("three_layer.profile")).unwrap();
    let dfs = schedule_dfs(&three, 2).unwrap();
    assert_eq!(dfs.best.to_string(), "{3}|{2,1}");
    assert_eq!(dfs.best_cost, 9.0);
}

#[test]
fn files_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let p = load_profile(fixture("resnet18_like.profile")).unwrap();
    let path = dir.path().join("copy.profile");
    save_profile(&p, &path).unwrap();
    assert_eq!(
        std::fs::read_to_string(&path).unwrap(),
        std::fs::read_to_string(fixture("resnet18_like.profile")).unwrap()
    );

    let s = bubble_fill(&schedule_dfs(&p, 4).unwrap().best, &p).unwrap();
    let spath = dir.path().join("s.schedule");
    save_schedule(&s, &spath).unwrap();
    assert_eq!(load_schedule(&spath).unwrap(), s);

    let t = simulate_run(&p, Mode::Wfbp, None, None, 2).unwrap();
    let tpath = dir.path().join("t.json");
    export_trace(&t, &tpath).unwrap();
    assert!(std::fs::metadata(&tpath).unwrap().len() > 0);
}
