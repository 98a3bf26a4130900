use cvrrw::diagnostics::z_star;
use cvrrw::graph::*;
use cvrrw::sampling::{RngStream, StreamId};
use cvrrw::stats::{median, chi_square_gof, chi_square_two_sample, ks_two_sample};
use cvrrw::walkers::*;
use proptest::prelude::*;

const ALPHA: f64 = 0.01;

fn k3() -> WeightedGraph {
    build_complete(3, &[1.0; 3]).unwrap()
}

fn stream(seed: u64, replica: u64) -> RngStream {
    RngStream::new(seed, replica, StreamId::Global)
}

#[test]
fn leaf_steps_to_anchor() {
    let g = build_complete_like(3, &[1.0; 3], &[(1, 2.0)]).unwrap();
    let mut r = stream(1, 0);
    for _ in 0..100 {
        let mut s = LocalTimeState::new(&g, 3).unwrap();
        assert_eq!(cvrrw_step(&mut s, &g, &mut r).unwrap().1, 1);
    }
}

#[test]
fn destination_law_from_local_times() {
    let g = k3();
    let mut base = LocalTimeState::new(&g, 0).unwrap();
    base.local = vec![0.0, 2f64.ln(), 0.0];
    base.neighbor = g.neighbor_sums(&base.local);
    base.t = 2f64.ln();
    let mut r = stream(2, 0);
    let n = 100_000;
    let to2 = (0..n)
        .filter(|_| cvrrw_step(&mut base.clone(), &g, &mut r).unwrap().1 == 2)
        .count() as f64;
    let p = 2.0 / 3.0;
    let sd = (p * (1.0 - p) / n as f64).sqrt();
    assert!((to2 / n as f64 - p).abs() < 4.0 * sd);
}

#[test]
fn symmetric_first_jump() {
    let g = k3();
    let mut r = stream(3, 0);
    let mut counts = [0u64; 3];
    for _ in 0..30_000 {
        counts[cvrrw_step(&mut LocalTimeState::new(&g, 0).unwrap(), &g, &mut r).unwrap().1] += 1;
    }
    assert_eq!(counts[0], 0);
    assert!(chi_square_gof(&counts[1..], &[0.5, 0.5]).p_value > ALPHA);
}

#[test]
fn zero_horizon() {
    let g = k3();
    for e in [Engine::Direct, Engine::Timelines, Engine::PoissonEmbed] {
        let t = run_cvrrw(&g, 0, 0.0, &[0.0], stream(4, 0), &RunOptions::engine(e)).unwrap();
        assert!(t.events.is_empty());
        assert_eq!(t.records.len(), 1);
        assert!(t.records[0].local_times.iter().all(|&x| x == 0.0));
    }
}

#[test]
fn bad_inputs_rejected() {
    let g = k3();
    let o = RunOptions::default();
    assert!(matches!(run_cvrrw(&g, 7, 1.0, &[1.0], stream(0, 0), &o), Err(WalkError::InvalidVertex(7))));
    assert!(run_cvrrw(&g, 0, -1.0, &[], stream(0, 0), &o).is_err());
    assert!(run_cvrrw(&g, 0, 1.0, &[2.0], stream(0, 0), &o).is_err());
}

#[test]
fn k5_uniform_limit() {
    let g = build_complete(5, &[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
    let t = run_cvrrw(&g, 0, 200.0, &linear_grid(200.0, 21), stream(5, 0), &RunOptions::engine(Engine::Hybrid)).unwrap();
    let pi = &t.last_record().unwrap().pi;
    assert!(pi.iter().all(|p| (p - 0.2).abs() < 1e-6), "{pi:?}");
}

#[test]
fn event_cap_truncates() {
    let g = k3();
    let opts = RunOptions {
        event_cap: 50,
        ..RunOptions::default()
    };
    match run_cvrrw(&g, 0, 30.0, &[30.0], stream(6, 0), &opts) {
        Err(WalkError::Truncated { cap, partial, .. }) => {
            assert_eq!(cap, 50);
            assert_eq!(partial.event_count, 50);
        }
        other => panic!("expected truncation, got {other:?}"),
    }
}

#[test]
fn vrrw_second_step_returns() {
    let g = k3();
    let n = 100_000u64;
    let back = (0..n)
        .filter(|&k| run_vrrw(&g, 0, &[1.0; 3], 2, &[], true, &mut stream(7, k)).unwrap().path[2] == 0)
        .count() as f64;
    // Z(0) = (2,1,1): the first move goes to j w.p. 1/2, then 0 has count 2 against 1.
    let p = 2.0 / 3.0;
    assert!((back / n as f64 - p).abs() < 4.0 * (p * (1.0 - p) / n as f64).sqrt());
}

#[test]
fn vrrw_occupation_on_k5() {
    let g = build_complete(5, &[1.0; 5]).unwrap();
    let n = 1_000_000u64;
    let mut dev = [Vec::new(), Vec::new()];
    for k in 0..9 {
        let run = run_vrrw(&g, 0, &[1.0; 5], n, &[n / 10, n], false, &mut stream(8, k)).unwrap();
        assert_eq!(run.state.z.iter().sum::<f64>(), 5.0 + n as f64 + 1.0);
        for (slot, s) in run.history.iter().enumerate() {
            let m = s.z.iter().map(|z| (z / s.n as f64 - 0.2).abs()).fold(0.0, f64::max);
            dev[slot].push(m);
        }
    }
    let (early, late) = (median(&dev[0]), median(&dev[1]));
    // deviations shrink like n^{-1/4}, so a decade buys a factor of about 0.56
    assert!(late < 0.8 * early && late < 0.02, "{early} {late}");
}

fn encode(path: &[usize], n: usize) -> usize {
    path.iter().fold(0, |acc, &v| acc * n + v)
}

fn histogram(cells: usize, paths: impl Iterator<Item = Vec<usize>>) -> Vec<u64> {
    let mut h = vec![0u64; cells];
    for p in paths {
        h[encode(&p, 3)] += 1;
    }
    h
}

#[test]
fn embedded_skeleton_matches_vrrw() {
    let g = k3();
    let reps = 100_000u64;
    let a = histogram(27, (0..reps).map(|k| vrrw_embedded_skeleton(&g, 0, &[1.0; 3], 3, stream(9, k)).unwrap()));
    let b = histogram(
        27,
        (0..reps).map(|k| run_vrrw(&g, 0, &[1.0; 3], 3, &[], true, &mut stream(10, k)).unwrap().path[1..].to_vec()),
    );
    assert!(chi_square_two_sample(&a, &b).p_value > ALPHA);
}

#[test]
fn embedded_walk_times_increase() {
    let g = k3();
    let t = run_vrrw_embedded(&g, 0, &[1.0; 3], 3.0, &[3.0], stream(11, 0), &RunOptions::default()).unwrap();
    assert!(t.events.windows(2).all(|w| w[1].time > w[0].time));
    assert!(!t.events.is_empty());
}

#[test]
fn mixture_skeleton_basics() {
    let g = build_complete_like(3, &[1.0; 3], &[(2, 1.0)]).unwrap();
    for k in 0..50 {
        assert_eq!(gamma_mixture_skeleton(&g, 3, &[1.0; 4], 3, stream(12, k)).unwrap()[0], 2);
    }
    let one = gamma_mixture_skeleton(&g, 0, &[1.0; 4], 20, stream(13, 4)).unwrap();
    assert_eq!(one, gamma_mixture_skeleton(&g, 0, &[1.0; 4], 20, stream(13, 4)).unwrap());
}

#[test]
fn engines_agree_on_first_jumps() {
    let g = k3();
    let reps = 100_000u64;
    let h = |e: Engine, seed| histogram(27, (0..reps).map(|k| cvrrw_skeleton(&g, 0, 3, stream(seed, k), e).unwrap()));
    assert!(chi_square_two_sample(&h(Engine::Direct, 14), &h(Engine::Timelines, 15)).p_value > ALPHA);
}

#[test]
fn visit_counts_track_clock_mass() {
    // The number of visits to x is the number of alarms of x's clock by
    // clock time N_x, whose mean is W_x (e^{N_x} - 1).
    let g = build_complete(5, &[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
    let h = 18.0;
    let opts = RunOptions {
        stored_events: 0,
        ..RunOptions::default()
    };
    let t = run_cvrrw(&g, 0, h, &[h], stream(16, 0), &opts).unwrap();
    let r = t.last_record().unwrap();
    let n = g.neighbor_sums(&r.local_times);
    for x in 0..5 {
        let ratio = r.visits[x] / (g.weight(x) * n[x].exp_m1());
        assert!((ratio - 1.0).abs() < 0.01, "vertex {x}: {ratio}");
    }
}

#[test]
fn glued_leaves_same_law() {
    // Two leaves on one anchor behave, on the core and in total leaf time,
    // like the single glued leaf.
    let split = build_complete_like(3, &[1.0; 3], &[(0, 0.5), (0, 1.0)]).unwrap();
    let (glued, remap) = glue_leaves(&split);
    let h = 3.0;
    let reps = 4000u64;
    let run = |g: &WeightedGraph, seed, merge: bool| -> (Vec<f64>, Vec<u64>) {
        let mut leaf = Vec::new();
        let mut pos = vec![0u64; 4];
        for k in 0..reps {
            let t = run_cvrrw(g, 1, h, &[h], stream(seed, k), &RunOptions::default()).unwrap();
            let r = t.last_record().unwrap();
            let lt = if merge { remap.push_forward(&r.local_times, glued.len()) } else { r.local_times.clone() };
            leaf.push(lt[3]);
            pos[if merge { remap.old_to_new[r.position] } else { r.position }] += 1;
        }
        (leaf, pos)
    };
    let (la, pa) = run(&split, 17, true);
    let (lb, pb) = run(&glued, 18, false);
    assert!(ks_two_sample(&la, &lb).unwrap().p_value > ALPHA);
    assert!(chi_square_two_sample(&pa, &pb).p_value > ALPHA);
}

#[test]
fn limit_profiles() {
    let g = build_complete_like(4, &[1.0; 4], &[(0, 1.0)]).unwrap();
    assert_eq!(limit_profile(&g).unwrap(), z_star(&g).unwrap().values().to_vec());
    let p = build_d_partite(&[2, 1], &[1.0, 3.0, 2.0], &[]).unwrap();
    let r = limit_profile(&p).unwrap();
    assert!((r[0] - 0.125).abs() < 1e-15 && (r[1] - 0.375).abs() < 1e-15 && (r[2] - 0.5).abs() < 1e-15);
}

fn small_graph() -> impl Strategy<Value = WeightedGraph> {
    (3usize..6)
        .prop_flat_map(|d| {
            (
                Just(d),
                prop::collection::vec(0.2f64..5.0, d),
                prop::collection::vec((0..d, 0.2f64..3.0), 0..3),
            )
        })
        .prop_map(|(d, w, l)| glue_leaves(&build_complete_like(d, &w, &l).unwrap()).0)
}

fn engine() -> impl Strategy<Value = Engine> {
    prop_oneof![Just(Engine::Direct), Just(Engine::Timelines), Just(Engine::PoissonEmbed)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn local_time_bookkeeping(g in small_graph(), e in engine(), seed in 0u64..10_000, h in 0.1f64..4.0) {
        let grid = linear_grid(h, 9);
        let t = run_cvrrw(&g, 0, h, &grid, stream(seed, 0), &RunOptions::engine(e)).unwrap();
        prop_assert_eq!(t.records.len(), grid.len());
        let mut prev = vec![0.0; g.len()];
        for r in &t.records {
            let sum: f64 = r.local_times.iter().sum();
            prop_assert!((sum - r.time).abs() <= 1e-9 * r.time.max(1.0));
            for i in 0..g.len() {
                prop_assert!(r.local_times[i] >= prev[i] && r.local_times[i] >= 0.0);
                prop_assert!((r.local_times[i] - prev[i] - r.increments[i]).abs() <= 1e-12 * r.time.max(1.0));
            }
            let pi_sum: f64 = r.pi.iter().sum();
            prop_assert!((pi_sum - 1.0).abs() < 1e-12);
            prev = r.local_times.clone();
        }
        let mut at = t.start;
        for ev in &t.events {
            prop_assert_eq!(ev.from, at);
            prop_assert!(g.is_adjacent(ev.from, ev.to));
            at = ev.to;
        }
        prop_assert_eq!(at, t.last_record().unwrap().position);
    }

    #[test]
    fn stepping_keeps_neighbor_sums(g in small_graph(), seed in 0u64..10_000) {
        let mut s = LocalTimeState::new(&g, 0).unwrap();
        let mut r = stream(seed, 0);
        for _ in 0..500 {
            let x = s.current;
            let (soj, dest) = cvrrw_step(&mut s, &g, &mut r).unwrap();
            prop_assert!(soj > 0.0 && g.is_adjacent(x, dest));
        }
        let (ds, dn) = s.drift(&g);
        prop_assert!(ds <= 1e-9 * s.t.max(1.0) && dn <= 1e-9 * s.t.max(1.0));
    }

    #[test]
    fn vrrw_counts(g in small_graph(), seed in 0u64..10_000, steps in 1u64..2000) {
        let a = vec![1.0; g.len()];
        let run = run_vrrw(&g, 0, &a, steps, &[steps], true, &mut stream(seed, 0)).unwrap();
        prop_assert_eq!(run.path.len() as u64, steps + 1);
        prop_assert!(run.path.windows(2).all(|p| g.is_adjacent(p[0], p[1])));
        for (i, z) in run.state.z.iter().enumerate() {
            let visits = run.path.iter().filter(|&&v| v == i).count() as f64;
            prop_assert_eq!(*z, 1.0 + visits);
        }
    }
}
