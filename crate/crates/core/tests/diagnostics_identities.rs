use cvrrw::chain::stationary;
use cvrrw::diagnostics::*;
use cvrrw::graph::*;
use cvrrw::sampling::{RngStream, StreamId};
use cvrrw::walkers::*;
use proptest::prelude::*;

fn k(d: usize) -> WeightedGraph {
    build_complete(d, &vec![1.0; d]).unwrap()
}

fn simplex(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.001f64..1.0, n).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    })
}

#[test]
fn entropy_special_points() {
    for d in 3..8 {
        let g = k(d);
        let z = z_star(&g).unwrap();
        let h = entropy_h(z.values(), &g);
        assert!((h - (d as f64 - 1.0) / d as f64).abs() < 1e-15);
        assert!(dissipation_j(z.values(), &g).abs() < 1e-15);
    }
    let mut point = vec![0.0; 3];
    point[1] = 1.0;
    assert_eq!(entropy_h(&point, &k(3)), 0.0);
}

#[test]
fn z_star_profiles() {
    let g = build_complete_like(4, &[1.0; 4], &[(0, 1.0)]).unwrap();
    assert_eq!(z_star(&g).unwrap().values(), &[0.25, 0.25, 0.25, 0.25, 0.0]);
    let u = z_star(&k(3)).unwrap();
    assert!(u.values().iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-16));
    assert!(ProbVector::new(vec![0.5, 0.6]).is_err());
}

#[test]
fn lyapunov_at_uniform() {
    for d in 3..7 {
        let v = lyapunov_v(&k(d), &vec![0.0; d]).unwrap();
        assert!((v + (d as f64).ln()).abs() < 1e-14);
    }
}

#[test]
fn hj_sandwich_near_uniform() {
    let g = k(5);
    let d = 5.0;
    let delta = 0.05;
    let (c1, c2) = (2.0 / d - 2.0 * delta * (1.0 + delta), 2.0 / d + 2.0 * delta);
    assert!(c1 < 2.0 / d && 2.0 / d < c2);
    let mut r = RngStream::new(1, 0, StreamId::Aux(0));
    let hz = entropy_h(z_star(&g).unwrap().values(), &g);
    for _ in 0..1000 {
        // a direction in the tangent space of the simplex, scaled into the ball
        let mut e: Vec<f64> = (0..5).map(|_| r.standard_normal()).collect();
        let m = e.iter().sum::<f64>() / d;
        e.iter_mut().for_each(|x| *x -= m);
        let norm = e.iter().map(|x| x * x).sum::<f64>().sqrt();
        let rad = delta * r.open();
        let x: Vec<f64> = e.iter().map(|v| 0.2 + v * rad / norm).collect();
        let gap = hz - entropy_h(&x, &g);
        let j = dissipation_j(&x, &g);
        assert!(c1 * gap <= j && j <= c2 * gap, "{gap} {j}");
    }
}

#[test]
fn synthetic_exponential_rate() {
    let pts: Vec<(f64, f64)> = (0..50).map(|k| (k as f64, 3.0 * (-0.2 * k as f64).exp())).collect();
    let fit = fit_exponential_rate(&pts, 1.0).unwrap();
    assert!((fit.slope + 0.2).abs() < 1e-12);
    assert!(fit_exponential_rate(&pts[..5], 1.0).is_err());
    let logs: Vec<(f64, f64)> = pts.iter().map(|&(t, v)| (t, v.ln())).collect();
    assert!((fit_log_rate(&logs, 0.5).unwrap().slope + 0.2).abs() < 1e-12);
}

#[test]
fn t_over_d_prediction() {
    let g = build_complete(5, &[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
    let t = run_cvrrw(&g, 0, 1.0, &[1.0], RngStream::new(2, 0, StreamId::Global), &RunOptions::default()).unwrap();
    let lim = t_over_d_limit(t.last_record().unwrap(), &g).unwrap();
    assert!((lim[0].1 - (-(120f64.ln()) / 5.0)).abs() < 1e-14);
    assert!((lim[0].1 + 0.9575).abs() < 1e-4);
    let eq = t_over_d_limit(t.last_record().unwrap(), &build_complete(5, &[2.0; 5]).unwrap()).unwrap();
    assert!(eq.iter().all(|p| p.1.abs() < 1e-15));
    assert!(t_over_d_limit(t.last_record().unwrap(), &k(3)).is_err());
}

#[test]
fn k3_scaled_process_positive() {
    let g = build_complete(3, &[1.0, 2.0, 3.0]).unwrap();
    let opts = RunOptions::engine(Engine::Hybrid);
    let t = run_cvrrw(&g, 0, 100.0, &linear_grid(100.0, 51), RngStream::new(3, 0, StreamId::Global), &opts).unwrap();
    let s = k3_scaled_growth(&t.records, &g, 0.75).unwrap();
    assert!(s.log_scaled.iter().all(|x| x.is_finite()));
    assert!(s.log_running_max.windows(2).all(|w| w[1] >= w[0]));
    assert!(k3_scaled_growth(&t.records, &k(4), 0.75).is_err());
}

#[test]
fn log_domain_norm_matches_naive() {
    let g = k(5);
    let mut r = RngStream::new(4, 0, StreamId::Aux(0));
    for _ in 0..100 {
        let t: Vec<f64> = (0..5).map(|_| 20.0 * r.open()).collect();
        let pi = stationary(&g, &t);
        let naive = pi.iter().map(|p| (p - 0.2).powi(2)).sum::<f64>().sqrt();
        let l = log_distance_to_z_star(&g, &t).unwrap();
        assert!((l.exp() - naive).abs() < 1e-12 * naive.max(1e-300) + 1e-15);
    }
}

#[test]
fn constant_functional_decomposes_to_zero() {
    let g = k(4);
    let opts = RunOptions {
        stored_events: usize::MAX,
        ..RunOptions::default()
    };
    let t = run_cvrrw(&g, 0, 2.0, &linear_grid(2.0, 5), RngStream::new(5, 0, StreamId::Global), &opts).unwrap();
    let d = decompose_trajectory(&t, &g, &Functional::Constant, &DecomposeOptions::default()).unwrap();
    for v in [&d.increment, &d.drift, &d.boundary_t, &d.correction_q, &d.correction_grad, &d.martingale, &d.quadratic_variation] {
        assert!(v.iter().all(|&x| x == 0.0));
    }
    let c = decompose_trajectory(&t, &g, &Functional::Coordinate(1), &DecomposeOptions::default()).unwrap();
    assert!(c.richardson < 1e-6 && c.richardson_ok());
    assert!(c.identity_residual().iter().all(|r| r.abs() < 1e-9));
    let h = decompose_trajectory(&t, &g, &Functional::HPi, &DecomposeOptions::default()).unwrap();
    assert!(h.richardson < 1e-6);
}

#[test]
fn decomposition_refuses_incomplete_paths() {
    let g = k(3);
    let opts = RunOptions {
        stored_events: 3,
        ..RunOptions::default()
    };
    let t = run_cvrrw(&g, 0, 5.0, &[5.0], RngStream::new(6, 0, StreamId::Global), &opts).unwrap();
    assert!(t.events_truncated);
    assert!(decompose_trajectory(&t, &g, &Functional::V, &DecomposeOptions::default()).is_err());
}

#[test]
fn larger_complete_like_leaf_exponent() {
    // same law at d = 5: the leaf count grows like n^{1/4}. Single runs are
    // dominated by counting noise, so the fit uses the ensemble mean of
    // log Z over the last two decades.
    let g = build_complete_like(5, &[1.0; 5], &[(0, 1.0)]).unwrap();
    let n = 30_000_000u64;
    let grid = geometric_step_grid(n, 10);
    let reps = 9;
    let mut mean_log = vec![0.0; grid.len()];
    for k in 0..reps {
        let mut r = RngStream::new(7, k, StreamId::Global);
        let run = run_vrrw(&g, 0, &[1.0; 6], n, &grid, false, &mut r).unwrap();
        for (m, s) in mean_log.iter_mut().zip(&run.history) {
            *m += s.z[5].ln() / reps as f64;
        }
    }
    let pts: Vec<(f64, f64)> = grid
        .iter()
        .zip(&mean_log)
        .filter(|(&s, _)| s as f64 >= n as f64 / 100.0)
        .map(|(&s, &m)| ((s as f64).ln(), m))
        .collect();
    let fit = fit_line(&pts).unwrap();
    assert!((fit.slope - 0.25).abs() < 0.05, "{fit:?}");
}

fn graphs() -> impl Strategy<Value = (WeightedGraph, Vec<f64>)> {
    let g = prop_oneof![
        (3usize..6).prop_map(|d| build_complete(d, &(0..d).map(|i| 1.0 + 0.3 * i as f64).collect::<Vec<_>>()).unwrap()),
        Just(build_complete_like(4, &[1.0, 2.0, 0.5, 1.5], &[(1, 0.8)]).unwrap()),
        Just(build_d_partite(&[2, 1, 2], &[1.0, 0.6, 1.4, 2.0, 0.9], &[]).unwrap()),
    ];
    g.prop_flat_map(|g| {
        let n = g.len();
        (Just(g), prop::collection::vec(0.0f64..2.0, n))
    })
}

fn functionals(g: &WeightedGraph) -> Vec<Functional> {
    let mut f = vec![Functional::Coordinate(1), Functional::V, Functional::HPi];
    if g.is_complete_like() {
        f.push(Functional::Contrast(0, 2));
    }
    f
}

proptest! {
    #[test]
    fn h_and_j_identities(x in simplex(5)) {
        let g = k(5);
        let hz = entropy_h(z_star(&g).unwrap().values(), &g);
        let dev2: f64 = x.iter().map(|v| (v - 0.2).powi(2)).sum();
        let h = entropy_h(&x, &g);
        prop_assert!((hz - h - dev2).abs() < 1e-12);
        let j_rhs = 2.0 * x.iter().map(|v| v * (v - 0.2).powi(2)).sum::<f64>() - 2.0 * (hz - h).powi(2);
        prop_assert!((dissipation_j(&x, &g) - j_rhs).abs() < 1e-12);
    }

    #[test]
    fn probability_vectors(x in simplex(6)) {
        let p = ProbVector::new(x.clone()).unwrap();
        prop_assert_eq!(p.values(), &x[..]);
        let mut bad = x.clone();
        bad[0] += 0.01;
        prop_assert!(ProbVector::new(bad).is_err());
    }

    #[test]
    fn lyapunov_is_mean_log_pi(t in prop::collection::vec(0.0f64..30.0, 5)) {
        let g = build_complete(5, &[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let v = lyapunov_v(&g, &t).unwrap();
        let pi = stationary(&g, &t);
        let direct = pi.iter().map(|p| p.ln()).sum::<f64>() / 5.0;
        prop_assert!((v - direct).abs() < 1e-10 * direct.abs().max(1.0));
        prop_assert!(-(5f64.ln()) - v >= -1e-12);
    }

    #[test]
    fn d_partite_v_bounded(t in prop::collection::vec(0.0f64..5.0, 5)) {
        let g = build_d_partite(&[2, 2, 1], &[1.0, 0.5, 2.0, 1.5, 0.7], &[]).unwrap();
        let v = lyapunov_v(&g, &t).unwrap();
        let b = v_part_bound(&g, &t).unwrap();
        prop_assert!(v <= b + 1e-12 && b <= 1e-12);
    }

    #[test]
    fn functional_derivatives_match_differences((g, t) in graphs()) {
        let h = 1e-4;
        for f in functionals(&g) {
            let (grad, hess) = f.derivatives(&g, &t).unwrap();
            let at = |k: usize, s: f64| {
                let mut u = t.clone();
                u[k] += s;
                u
            };
            for kk in 0..g.len() {
                let fd = (f.value(&g, &at(kk, h)).unwrap() - f.value(&g, &at(kk, -h)).unwrap()) / (2.0 * h);
                prop_assert!((fd - grad[kk]).abs() < 1e-6 * grad[kk].abs().max(1.0), "{f} grad {kk}: {fd} vs {}", grad[kk]);
                let (gp, _) = f.derivatives(&g, &at(kk, h)).unwrap();
                let (gm, _) = f.derivatives(&g, &at(kk, -h)).unwrap();
                for l in 0..g.len() {
                    let fd2 = (gp[l] - gm[l]) / (2.0 * h);
                    prop_assert!((fd2 - hess[(l, kk)]).abs() < 1e-6 * hess[(l, kk)].abs().max(1.0), "{f} hess {l},{kk}");
                }
            }
        }
    }
}
