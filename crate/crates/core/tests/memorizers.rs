use robmem::dataset::{gen_random, sample_ball, Dataset, Norm, RobustSpec};
use robmem::exec::Exec;
use robmem::memorizers::{
    base_memorize, construct, construct_auto, construct_large_rho, construct_lp, construct_moderate_rho,
    construct_small_rho, large_case, large_case_dim, moderate_group_size, n_alpha_points, quantize_network, thresholds, with_cleanup_head,
    QuantMode, Regime,
};
use robmem::net_ir::{Activation, Layer, Network, Scratch};
use robmem::verify::{verify_robust, SamplePlan, Tolerance};
use robmem::Error;

fn exact_on_balls(net: &Network, d: &Dataset, p: Norm, mu: f64, samples: usize) -> usize {
    let plan = SamplePlan { p, mu, samples, seed: 11, tolerance: Tolerance::Exact, balls: None };
    verify_robust(net, d, &plan, Exec::Parallel).unwrap().errors()
}

fn spec(d: &Dataset, rho: f64) -> RobustSpec {
    RobustSpec::new(d, Norm::L2, rho).unwrap()
}

/// Least-squares slope of `ln y` against `ln x`.
fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let (lx, ly): (Vec<f64>, Vec<f64>) = xs.iter().zip(ys).map(|(a, b)| (a.ln(), b.ln())).unzip();
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    sxy / lx.iter().map(|a| (a - mx).powi(2)).sum::<f64>()
}

#[test]
fn small_two_far_points() {
    let d = Dataset::new(vec![vec![0.0, 0.0], vec![10.0, 0.0]], vec![1, 2]).unwrap();
    let rho = 1.0 / (5.0 * 2.0 * 2f64.sqrt());
    let s = spec(&d, rho);
    let (net, rep) = construct_small_rho(&d, rho, 0).unwrap();
    assert_eq!(rep.regime, Regime::Small);
    let mut sc = Scratch::default();
    for (i, want) in [(0, 1.0), (1, 2.0)] {
        for x in sample_ball(d.point(i), s.mu, Norm::L2, i as u64, 500).unwrap() {
            assert_eq!(net.eval1(&x, &mut sc), want);
        }
    }
}

#[test]
fn small_width_accounting() {
    for (n, dim) in [(16, 8), (40, 12)] {
        let d = gen_random(n, dim, 3, n as u64).unwrap();
        let (t1, _) = thresholds(n, dim);
        let (net, rep) = construct_small_rho(&d, t1, 1).unwrap();
        let m = rep.projection_dim.unwrap_or(dim);
        assert!(rep.achieved.width <= 5 * m + 2, "width {} vs m={m}", rep.achieved.width);
        assert_eq!(rep.achieved, net.resources());
        let staged: u64 = rep.stages.iter().map(|s| s.params_all).sum();
        assert_eq!(staged, rep.achieved.params_all);
    }
    let d = gen_random(8, 4, 2, 0).unwrap();
    assert!(matches!(construct_small_rho(&d, 0.2, 0), Err(Error::Regime(_))));
}

#[test]
fn moderate_midway_meets_eta() {
    let d = gen_random(8, 4, 3, 449).unwrap();
    let (a, b) = thresholds(8, 4);
    let rho = (a + b) / 2.0;
    let (net, rep) = construct_moderate_rho(&d, rho, 0.05, 2).unwrap();
    assert_eq!(rep.regime, Regime::Moderate);
    let s = spec(&d, rho);
    let plan = SamplePlan { p: Norm::L2, mu: s.mu, samples: 2000, seed: 5, tolerance: Tolerance::Exact, balls: None };
    let st = verify_robust(&net, &d, &plan, Exec::Parallel).unwrap();
    assert!(st.wilson_upper <= 0.05, "wilson {}", st.wilson_upper);
}

#[test]
fn moderate_lower_edge_groups() {
    let d = gen_random(8, 4, 3, 7).unwrap();
    let (a, _) = thresholds(8, 4);
    let rho = a * (1.0 + 1e-9);
    let (net, rep) = construct_moderate_rho(&d, rho, 0.05, 3).unwrap();
    // g = ⌊N/(1+δ)⌋ = N − 1 just above the lower threshold
    assert_eq!(moderate_group_size(4, rho), 7);
    assert_eq!(rep.groups, Some(2));
    assert_eq!(exact_on_balls(&net, &d, Norm::L2, spec(&d, rho).mu, 1000), 0);
}

#[test]
fn eta_required_in_moderate_regime() {
    let d = gen_random(8, 4, 3, 7).unwrap();
    let (a, b) = thresholds(8, 4);
    let r = construct_auto(&d, &spec(&d, (a + b) / 2.0), None, 0);
    assert!(matches!(r, Err(Error::Precondition(_))));
}

#[test]
fn n_alpha_single_index() {
    let d = Dataset::new(vec![vec![0.0, 0.0], vec![3.0, 0.0], vec![0.0, 3.0]], vec![1, 2, 3]).unwrap();
    let rho = 1.0 / (4.0 * 1.5);
    let eta = 0.05;
    let net = n_alpha_points(&d, &[0], rho, eta).unwrap();
    assert!(net.resources().width <= 5 * 2 + 12);
    let mu = rho * 1.5;
    let mut sc = Scratch::default();
    for x in sample_ball(d.point(0), mu, Norm::L2, 1, 1000).unwrap() {
        assert_eq!(net.eval1(&x, &mut sc), 1.0);
    }
    for i in 1..3 {
        let xs = sample_ball(d.point(i), mu, Norm::L2, i as u64, 2000).unwrap();
        let bad = xs.iter().filter(|x| {
            let y = net.eval1(x, &mut sc);
            y != 0.0 && y != d.label(i) as f64
        });
        assert!((bad.count() as f64) / 2000.0 <= eta);
    }
}

#[test]
fn large_examples() {
    let d = gen_random(4, 2, 2, 466).unwrap();
    let (net, rep) = construct_large_rho(&d, 0.9, 0).unwrap();
    assert_eq!(rep.large_case, Some(1));
    assert_eq!(exact_on_balls(&net, &d, Norm::L2, spec(&d, 0.9).mu, 1000), 0);

    let anti = Dataset::new(vec![vec![1.0, 0.0, 0.0], vec![-1.0, 0.0, 0.0]], vec![1, 2]).unwrap();
    let net = base_memorize(&anti, 0.5).unwrap();
    assert_eq!(exact_on_balls(&net, &anti, Norm::L2, 0.5, 1000), 0);

    // same-label points closer than 2μ
    let close = Dataset::new(vec![vec![0.0, 0.0], vec![0.1, 0.0], vec![2.0, 0.0]], vec![1, 1, 2]).unwrap();
    let net = base_memorize(&close, 0.8).unwrap();
    assert_eq!(exact_on_balls(&net, &close, Norm::L2, 0.8 * 0.95, 1000), 0);
}

#[test]
fn high_dimensional_case_projects_and_shifts() {
    // N < 600 ln N ≤ d: natural projection, then the base memorizer
    let (n, dim, rho) = (4, 900, 0.2);
    assert_eq!(large_case(n, dim, rho), 3);
    let d = gen_random(n, dim, 2, 1).unwrap();
    let (net, rep) = construct_large_rho(&d, rho, 0).unwrap();
    assert_eq!(rep.large_case, Some(3));
    assert_eq!(rep.projection_dim, Some(n));
    let mu = spec(&d, rho).mu;
    assert_eq!(exact_on_balls(&net, &d, Norm::L2, mu, 200), 0);
    // first hidden layer stays in its linear region on the balls
    let l = &net.layers()[0];
    for i in 0..n {
        for x in sample_ball(d.point(i), mu, Norm::L2, 9 + i as u64, 2500).unwrap() {
            for r in 0..l.rows() {
                let z: f64 = (0..l.cols()).map(|c| l.weight(r, c) * x[c]).sum::<f64>() + l.bias()[r];
                assert!(z >= 0.0);
            }
        }
    }
}

#[test]
fn case_dimensions() {
    let (n, d) = (100_000usize, 10_000usize);
    let want = ((9.0f64 * d as f64 * 0.04).ceil()).max((600.0 * (n as f64).ln()).ceil()).max((10.0 * (d as f64).ln()).ceil());
    assert_eq!(large_case_dim(4, n, d, 0.2), want as usize);
    // never more than the ambient dimension
    assert_eq!(large_case_dim(4, 4096, 64, 0.2), 64);
    assert_eq!(large_case_dim(5, 10, 50, 0.9), 50);
    // the threshold table puts this instance in case 2 (d < 600 ln N)
    assert_eq!(large_case(4096, 64, 0.2), 2);
}

#[test]
fn dispatch_boundaries() {
    let d = gen_random(8, 4, 2, 1).unwrap();
    let (a, b) = thresholds(8, 4);
    assert_eq!(construct_auto(&d, &spec(&d, a), None, 0).unwrap().1.regime, Regime::Small);
    let (_, rep) = construct_auto(&d, &spec(&d, b + 1e-12), None, 0).unwrap();
    assert_eq!(rep.regime, Regime::Large);
    assert!(rep.theoretical_param_bound > 0.0);
    assert_eq!(rep.bound_formula, "N * d^2 * rho^4");
}

#[test]
fn lp_wrapper() {
    let d = gen_random(6, 4, 2, 494).unwrap();
    let s = RobustSpec::new(&d, Norm::Inf, 0.3).unwrap();
    let (net, rep) = construct_lp(&d, &s, None, 0).unwrap();
    assert!((rep.rho_l2 - 0.6).abs() < 1e-12);
    assert_eq!(exact_on_balls(&net, &d, Norm::Inf, s.mu, 1000), 0);

    let s2 = spec(&d, 0.3);
    let (a, _) = construct(&d, &s2, None, None, 4).unwrap();
    let (b, _) = construct_auto(&d, &s2, None, 4).unwrap();
    assert_eq!(a.to_json(), b.to_json());

    let d9 = gen_random(6, 9, 2, 1).unwrap();
    let s = RobustSpec::new(&d9, Norm::P(1.0), 0.4).unwrap();
    match construct_lp(&d9, &s, None, 0) {
        Err(Error::Regime(m)) => assert!(m.contains("outside the lp range")),
        other => panic!("expected a regime error, got {:?}", other.map(|r| r.1.regime)),
    }
}

#[test]
fn quantization_modes() {
    // dyadic parameters survive any grid
    let net = Network::new(1, vec![Layer::new(1, 1, vec![0.5], vec![0.25], Activation::Identity).unwrap()]).unwrap();
    let (q, _) = quantize_network(&net, 0.1, 1.0, &QuantMode::Analytic).unwrap();
    assert_eq!(q.evaluate(&[3.0]).unwrap(), net.evaluate(&[3.0]).unwrap());

    let d = gen_random(16, 8, 3, 503).unwrap();
    let (t1, _) = thresholds(16, 8);
    let (net, _) = construct_small_rho(&d, t1, 0).unwrap();
    let r = d.max_norm() + 1.0;
    let mode = QuantMode::Empirical { points: None, samples: 2000, seed: 1 };
    let (q, bits) = quantize_network(&net, 0.1, r, &mode).unwrap();
    assert_eq!(q.bit_complexity(), Some(bits));
    let head = with_cleanup_head(&q, d.classes()).unwrap();
    assert_eq!(exact_on_balls(&head, &d, Norm::L2, spec(&d, t1).mu, 1000), 0);
    assert!(quantize_network(&net, 1.5, r, &mode).is_err());
}

#[test]
fn cleanup_head_restores_labels() {
    let id = Network::identity(1);
    let head = with_cleanup_head(&id, 9).unwrap();
    let mut sc = Scratch::default();
    for y in 1..=9 {
        for dy in [-0.1, -0.05, 0.0, 0.05, 0.1] {
            assert_eq!(head.eval1(&[y as f64 + dy], &mut sc), y as f64);
        }
    }
}

#[test]
fn report_is_consistent() {
    let d = gen_random(12, 6, 3, 2).unwrap();
    let (net, rep) = construct_auto(&d, &spec(&d, 0.5), None, 0).unwrap();
    assert_eq!(rep.achieved, net.resources());
    let j = rep.to_json();
    assert_eq!(j["schema"], "v1");
    assert_eq!(j["regime"], "large");
    assert_eq!(j["achieved"]["params_all"], rep.achieved.params_all);
}

// Trends over N at fixed d; construction only (no sampling).

#[test]
fn small_regime_params_grow_like_sqrt_n() {
    let dim = 8;
    let ns: Vec<usize> = (4..=10).map(|k| 1 << k).collect();
    let params: Vec<f64> = ns
        .iter()
        .map(|&n| {
            let d = gen_random(n, dim, 4, n as u64).unwrap();
            let (t1, _) = thresholds(n, dim);
            construct_small_rho(&d, t1, 0).unwrap().1.achieved.params_all as f64
        })
        .collect();
    let s = slope(&ns.iter().map(|&n| n as f64).collect::<Vec<_>>(), &params);
    assert!((0.35..=0.65).contains(&s), "slope {s}, params {params:?}");
}

#[test]
fn large_regime_params_grow_linearly() {
    let dim = 8;
    let ns: Vec<usize> = (4..=8).map(|k| 1 << k).collect();
    let params: Vec<f64> = ns
        .iter()
        .map(|&n| {
            let d = gen_random(n, dim, 4, n as u64).unwrap();
            construct_large_rho(&d, 0.5, 0).unwrap().1.achieved.params_all as f64
        })
        .collect();
    let s = slope(&ns.iter().map(|&n| n as f64).collect::<Vec<_>>(), &params);
    assert!((0.85..=1.15).contains(&s), "slope {s}, params {params:?}");
}
