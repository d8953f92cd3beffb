use dreamsched::cost_model::{period_objective, wfbp_iteration_time, CostModel};
use dreamsched::profile::{comm_time, format_profile, parse_profile, LayerProfile, LinkModel, ModelProfile};
use dreamsched::schedule::{format_schedule, parse_schedule, Schedule};
use dreamsched::scheduler::{bubble_fill, schedule_brute_force, schedule_dfs};
use dreamsched::simulator::{simulate_run, Mode};
use dreamsched::trainer::{run_training_with, synced_layers, Problem, SyncMode, TrainerConfig};
use dreamsched::Exec;
use proptest::prelude::*;

/// Times are multiples of 1/8 s so sums and maxima are exact.
fn dyadic_profile(max_layers: usize) -> impl Strategy<Value = ModelProfile> {
    (1..=max_layers).prop_flat_map(|l| {
        (
            prop::collection::vec(0u32..16, l),
            prop::collection::vec(1u32..32, l),
            prop::collection::vec(0u32..64, l),
        )
            .prop_map(|(fp, bp, comm)| {
                let s = |v: Vec<u32>| v.into_iter().map(|x| x as f64 / 8.0).collect::<Vec<_>>();
                ModelProfile::from_times(&s(fp), &s(bp), &s(comm)).unwrap()
            })
    })
}

/// Contiguous split into `h` sets, trailing sets possibly empty.
fn schedule_for(layers: usize) -> impl Strategy<Value = Schedule> {
    (1..=layers.min(6)).prop_flat_map(move |h| {
        (prop::collection::vec(any::<bool>(), layers.saturating_sub(1)), Just(h)).prop_map(move |(cuts, h)| {
            let mut sets: Vec<Vec<usize>> = vec![vec![layers]];
            for (i, cut) in cuts.iter().enumerate() {
                let layer = layers - 1 - i;
                if *cut && sets.len() < h {
                    sets.push(vec![layer]);
                } else {
                    sets.last_mut().unwrap().push(layer);
                }
            }
            sets.resize(h, Vec::new());
            Schedule::new(layers, sets).unwrap()
        })
    })
}

fn profile_and_schedule() -> impl Strategy<Value = (ModelProfile, Schedule)> {
    dyadic_profile(9).prop_flat_map(|p| {
        let l = p.num_layers();
        (Just(p), schedule_for(l))
    })
}

fn stored_profile() -> impl Strategy<Value = ModelProfile> {
    (1usize..8).prop_flat_map(|l| {
        (
            prop::collection::vec(
                (
                    "[a-z][a-z0-9_.]{0,10}",
                    1u64..1 << 30,
                    0u64..10_000_000,
                    0u64..10_000_000,
                    prop::option::of(0u64..10_000_000),
                ),
                l,
            ),
            1.0e3f64..1.0e12,
            0u64..1000,
        )
            .prop_map(|(rows, bw, lat)| {
                let layers = rows
                    .into_iter()
                    .enumerate()
                    .map(|(i, (name, bytes, fp, bp, comm))| LayerProfile {
                        index: i + 1,
                        name,
                        param_bytes: bytes,
                        t_fp: fp as f64 / 1e6,
                        t_bp: bp as f64 / 1e6,
                        t_comm_override: comm.map(|c| c as f64 / 1e6),
                    })
                    .collect();
                ModelProfile::new(layers, LinkModel::new(bw, lat as f64 / 1e6).unwrap(), "p").unwrap()
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn profile_text_round_trips(p in stored_profile()) {
        let text = format_profile(&p);
        let back = parse_profile(&text, "p").unwrap();
        prop_assert_eq!(&back, &p);
        prop_assert_eq!(format_profile(&back), text);
    }

    #[test]
    fn comm_time_is_monotone(bytes in 1u64..1 << 40, extra in 0u64..1 << 30, bw in 1.0f64..1e12, lat in 0.0f64..1.0) {
        let layer = |b| LayerProfile { index: 1, name: "x".into(), param_bytes: b, t_fp: 0.0, t_bp: 0.0, t_comm_override: None };
        let link = LinkModel::new(bw, lat).unwrap();
        prop_assert!(comm_time(&layer(bytes + extra), &link) >= comm_time(&layer(bytes), &link));
        prop_assert!(comm_time(&layer(bytes), &LinkModel::new(bw, lat + 0.5).unwrap()) >= comm_time(&layer(bytes), &link));
        prop_assert!(comm_time(&layer(bytes), &LinkModel::new(bw * 2.0, lat).unwrap()) <= comm_time(&layer(bytes), &link));
    }

    #[test]
    fn schedule_text_round_trips((p, s) in profile_and_schedule()) {
        let filled = bubble_fill(&s, &p).unwrap();
        prop_assert_eq!(parse_schedule(&format_schedule(&filled)).unwrap(), filled);
    }

    #[test]
    fn adding_a_layer_never_shortens_the_span(p in dyadic_profile(10), mask in any::<u16>(), extra in 0usize..10) {
        let cm = CostModel::new(&p);
        let l = p.num_layers();
        let set: Vec<usize> = (1..=l).filter(|i| mask & (1 << (i - 1)) != 0).collect();
        let add = extra % l + 1;
        let mut bigger = set.clone();
        if !bigger.contains(&add) {
            bigger.push(add);
        }
        prop_assert!(cm.span(&bigger).finish >= cm.span(&set).finish);
    }

    #[test]
    fn objective_bounds_and_degenerate_cases((p, s) in profile_and_schedule()) {
        let cost = period_objective(&s, &p).unwrap();
        let h = s.period() as f64;
        prop_assert!(cost.objective >= h * p.total_bp());
        let silent = p.with_comm_scaled(0.0);
        prop_assert_eq!(period_objective(&s, &silent).unwrap().objective, h * p.total_bp());
        let one = Schedule::all_in_first(p.num_layers(), 1).unwrap();
        prop_assert_eq!(period_objective(&one, &p).unwrap().total_with_fp, wfbp_iteration_time(&p));
    }

    #[test]
    fn simulator_agrees_with_cost_model((p, s) in profile_and_schedule()) {
        let s = bubble_fill(&s, &p).unwrap();
        let cost = period_objective(&s, &p).unwrap();
        let t = simulate_run(&p, Mode::Plsgd, Some(&s), None, s.period() as u64).unwrap();
        prop_assert!((cost.total_with_fp - t.makespan).abs() <= 1e-9 * cost.total_with_fp.max(1e-300));
    }

    #[test]
    fn fill_keeps_objective_and_grows_when_comm_shrinks((p, s) in profile_and_schedule()) {
        let filled = bubble_fill(&s, &p).unwrap();
        prop_assert_eq!(period_objective(&filled, &p).unwrap().objective, period_objective(&s, &p).unwrap().objective);
        let cheaper = p.with_comm_scaled(0.5);
        let refilled = bubble_fill(&s, &cheaper).unwrap();
        for h in 1..=s.period() {
            prop_assert!(refilled.fill_set(h).len() >= filled.fill_set(h).len(), "h={}", h);
        }
    }

    #[test]
    fn dfs_is_complete_and_never_beats_the_oracle(p in dyadic_profile(8), h in 1usize..5) {
        let h = h.min(p.num_layers());
        let dfs = schedule_dfs(&p, h).unwrap();
        let mut all: Vec<usize> = dfs.best.sets().iter().flatten().copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (1..=p.num_layers()).collect::<Vec<_>>());
        let brute = schedule_brute_force(&p, h, None).unwrap();
        prop_assert!(dfs.best_cost >= brute.best_cost);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn divergence_decomposes_and_runs_are_deterministic(
        blocks in prop::collection::vec(1usize..5, 1..6),
        workers in 1usize..6,
        h in 1usize..4,
        seed in any::<u64>(),
        mode in prop::sample::select(vec![SyncMode::Partial, SyncMode::Full, SyncMode::Ssgd]),
    ) {
        let l = blocks.len();
        let h = h.min(l);
        let problem = Problem::synthetic(blocks, 1.0, 3.0, 1.0, 1.0, seed).unwrap();
        let cfg = TrainerConfig::new(workers, h, 40, mode)
            .with_schedule(Schedule::equal_number(l, h).unwrap())
            .with_seed(seed);
        let a = run_training_with(&cfg, &problem, Exec::Sequential).unwrap();
        let b = run_training_with(&cfg, &problem, Exec::Parallel).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.rows[0].gamma, 0.0);
        for row in &a.rows {
            prop_assert!(row.gamma >= 0.0);
            prop_assert_eq!(row.gamma, row.gamma_l.iter().sum::<f64>());
        }
        let mut seen: Vec<usize> = (0..h as u64).flat_map(|r| synced_layers(&cfg, l, r)).collect();
        seen.sort_unstable();
        seen.dedup();
        prop_assert_eq!(seen, (1..=l).collect::<Vec<_>>());
    }
}
