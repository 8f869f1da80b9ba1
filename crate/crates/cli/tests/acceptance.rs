//! Acceptance suite. Runs as a plain binary (`harness = false`) and prints one
//! PASS/FAIL line per criterion; the process fails if any criterion does.
//!
//! Tolerances, sample counts and runtime budgets are pinned as constants below.
//! A criterion over its budget is reported as FAIL.
//!
//! `cargo test -p robmem-cli --test acceptance -- 3 5` runs a subset.

use anyhow::{bail, ensure, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use robmem::bounds::{certificate_check, random_subspace, standard_basis, subspace_distance};
use robmem::dataset::{gen_random, gen_width_lb_dataset, sample_ball, scale, separation, Dataset, Norm, RobustSpec};
use robmem::exec::{split_seed, Exec};
use robmem::gadgets::{floor_gadget, integer_memorizer_with_layout};
use robmem::memorizers::{
    construct, construct_auto, large_case, moderate_group_networks, quantize_network, with_cleanup_head, QuantMode,
    Regime, RegimeReport,
};
use robmem::net_ir::{scale_input, Activation, Layer, Network, Scratch};
use robmem::pl1d::verify_integer_map;
use robmem::verify::{verify_robust, SamplePlan, Tolerance, VerificationStats};
use robmem::Error;
use std::collections::{BTreeMap, BTreeSet};
use std::panic::{self, AssertUnwindSafe};
use std::time::Instant;

// ---- pinned constants

const FLOOR_SAMPLES: usize = 100_000;
const INT_INSTANCES: usize = 200;
const INT_MAX_KEYS: usize = 64;
const INT_MAX_KEY: u64 = 1_000_000;
const INT_MAX_LABEL: u32 = 16;
const INT_WIDTH: usize = 12;
/// Instances with keys below this are additionally checked by brute force.
const INT_BRUTE_MAX_KEY: u64 = 4_000;
const INT_BRUTE_INSTANCES: usize = 20;
const INT_RANDOM_PROBES: usize = 2_000;

const BALL_SAMPLES: usize = 1_000;
const SMALL_SLOPE: (f64, f64) = (0.35, 0.65);
/// Projection dimension must stay below `SMALL_M_PER_LN_N · ln N + SMALL_M_SLACK`.
const SMALL_M_PER_LN_N: f64 = 4.0;
const SMALL_M_SLACK: f64 = 2.0;

const MODERATE_ETA: f64 = 0.05;
const MODERATE_SAMPLES: usize = 2_000;

const LARGE_RANDOM_DATASETS: usize = 20;
const LARGE_RHOS: [f64; 3] = [0.4, 0.7, 0.9];
const LARGE_MAX_N: usize = 32;
const LARGE_MAX_D: usize = 16;

const GEOM_TOL: f64 = 1e-9;
const GEOM_SUBSPACES: usize = 1_000;
const GEOM_MAX_D: usize = 12;
const CERT_TRIALS: usize = 20;

const QUANT_NU: f64 = 0.1;
const QUANT_SAMPLES_PER_BALL: usize = 64;

const LP_D: usize = 4;
const SCALE_TRIALS: usize = 10;

const SWEEP_N: usize = 128;
const SWEEP_D: usize = 16;
/// Consecutive sweep rows may shrink by at most this factor.
const SWEEP_BAND: f64 = 2.0;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Result<Verdict> {
    Ok(Verdict { pass, detail: detail.into() })
}

type Check = fn() -> Result<Verdict>;

fn main() {
    let criteria: [(u8, &str, Option<f64>, Check); 10] = [
        (1, "floor gadget exactness", Some(10.0), c1_floor),
        (2, "integer memorizer", Some(60.0), c2_integer),
        (3, "small-rho end to end", Some(300.0), c3_small),
        (4, "moderate-rho end to end", Some(300.0), c4_moderate),
        (5, "large-rho end to end", Some(300.0), c5_large),
        (6, "lower-bound geometry", Some(60.0), c6_geometry),
        (7, "quantization + cleanup head", Some(120.0), c7_quantization),
        (8, "lp wrapper", Some(120.0), c8_lp),
        (9, "scaling invariance", None, c9_scaling),
        (10, "sweep sanity", None, c10_sweep),
    ];
    let only: Vec<u8> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (id, name, budget, check) in criteria {
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check));
        let secs = start.elapsed().as_secs_f64();
        let (ok, detail) = match outcome {
            Ok(Ok(v)) => (v.pass, v.detail),
            Ok(Err(e)) => (false, format!("error: {e:#}")),
            Err(_) => (false, "panicked".to_string()),
        };
        let in_budget = budget.is_none_or(|b| secs <= b);
        let pass = ok && in_budget;
        if !pass {
            failed += 1;
        }
        let budget = match budget {
            Some(b) => format!("{secs:.1}s of {b:.0}s budget"),
            None => format!("{secs:.1}s, no budget"),
        };
        let over = if in_budget { "" } else { " [over budget]" };
        println!("{} criterion {id:>2} ({name}): {detail} ({budget}){over}", if pass { "PASS" } else { "FAIL" });
    }
    println!("acceptance: {}/{ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

// ---- helpers

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn plan(p: Norm, mu: f64, samples: usize, seed: u64, tolerance: Tolerance) -> SamplePlan {
    SamplePlan { p, mu, samples, seed, tolerance, balls: None }
}

fn exact_check(net: &Network, d: &Dataset, p: Norm, mu: f64, seed: u64) -> Result<VerificationStats> {
    Ok(verify_robust(net, d, &plan(p, mu, BALL_SAMPLES, seed, Tolerance::Exact), Exec::Parallel)?)
}

fn build(d: &Dataset, p: Norm, rho: f64, eta: Option<f64>, seed: u64) -> Result<(Network, RegimeReport, RobustSpec)> {
    let spec = RobustSpec::new(d, p, rho)?;
    let (net, rep) = construct(d, &spec, None, eta, seed)?;
    Ok((net, rep, spec))
}

/// Five-case table of the large-ρ dispatcher, written out independently.
fn case_table(n: usize, d: usize, rho: f64) -> u8 {
    let lim = 600.0 * (n as f64).ln();
    match () {
        _ if rho >= 1.0 / 3.0 => 1,
        _ if (d as f64) < lim => 2,
        _ if (n as f64) < lim => 3,
        _ if n >= d => 4,
        _ => 5,
    }
}

fn small_rho(n: usize, d: usize) -> f64 {
    1.0 / (6.0 * n as f64 * (d as f64).sqrt())
}

/// Least-squares slope of `ln y` against `ln x`.
fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Datasets whose same-label balls overlap heavily at every tested ρ.
fn crafted_overlapping() -> Result<Vec<Dataset>> {
    let mut out = vec![Dataset::new(vec![vec![0.0, 0.0], vec![0.2, 0.0], vec![2.0, 0.0]], vec![1, 1, 2])?];
    let mut pts = Vec::new();
    let mut labels = Vec::new();
    for (k, centre) in [[0.0, 0.0, 0.0], [3.0, 0.0, 0.0], [0.0, 3.0, 0.0]].iter().enumerate() {
        for j in 0..4 {
            let mut p = centre.to_vec();
            p[j % 3] += 0.1 * (j as f64 + 1.0);
            pts.push(p);
            labels.push(k as u32 + 1);
        }
    }
    out.push(Dataset::new(pts, labels)?);
    // pairs of nearby same-label points spread in R^6
    let mut r = rng(55);
    let mut pts = Vec::new();
    let mut labels = Vec::new();
    for k in 0..6 {
        let base: Vec<f64> = (0..6).map(|_| r.random_range(-4.0..4.0)).collect();
        for _ in 0..2 {
            pts.push(base.iter().map(|v| v + r.random_range(-0.05..0.05)).collect());
            labels.push(k % 3 + 1);
        }
    }
    out.push(Dataset::new(pts, labels)?);
    Ok(out)
}

/// Crafted datasets above must really contain overlapping same-label balls.
fn has_same_label_overlap(d: &Dataset, mu: f64) -> bool {
    (0..d.n()).any(|i| {
        (i + 1..d.n()).any(|j| d.label(i) == d.label(j) && Norm::L2.dist(d.point(i), d.point(j)) < 2.0 * mu)
    })
}

// ---- 1

fn c1_floor() -> Result<Verdict> {
    let mut r = rng(1);
    let mut bad = Vec::new();
    let mut total = 0usize;
    for n in 1..=12u32 {
        for gamma in [1.0 / 4.0, 1.0 / 16.0, 1.0 / 64.0] {
            let net = floor_gadget(n, gamma)?;
            let mut s = Scratch::default();
            let top = (1u64 << n) as f64;
            let mut mism = 0usize;
            let mut taken = 0usize;
            while taken < FLOOR_SAMPLES {
                let x: f64 = r.random_range(0.0..top);
                if x.fract() <= gamma {
                    continue;
                }
                taken += 1;
                if net.eval1(&[x], &mut s) != x.floor() {
                    mism += 1;
                }
            }
            total += taken;
            if mism > 0 {
                bad.push(format!("n={n} gamma={gamma}: {mism} mismatches"));
            }
        }
    }
    verdict(bad.is_empty(), format!("36 gadgets, {total} samples, mismatches: [{}]", bad.join("; ")))
}

// ---- 2

fn random_pairs(r: &mut ChaCha8Rng, max_key: u64) -> Vec<(u64, u32)> {
    let nk = r.random_range(1..=INT_MAX_KEYS).min(max_key as usize + 1);
    let mut keys = BTreeSet::new();
    while keys.len() < nk {
        keys.insert(r.random_range(0..=max_key));
    }
    keys.into_iter().map(|k| (k, r.random_range(1..=INT_MAX_LABEL))).collect()
}

fn c2_integer() -> Result<Verdict> {
    let mut r = rng(2);
    let mut failures = Vec::new();
    let mut pieces = 0usize;
    let mut brute_points = 0usize;
    for inst in 0..INT_INSTANCES + INT_BRUTE_INSTANCES {
        let brute = inst >= INT_INSTANCES;
        let pairs = random_pairs(&mut r, if brute { INT_BRUTE_MAX_KEY } else { INT_MAX_KEY });
        let (net, _) = integer_memorizer_with_layout(&pairs)?;
        let width = net.resources().width;
        if width != INT_WIDTH {
            failures.push(format!("instance {inst}: width {width}"));
        }
        let table: BTreeMap<i64, f64> = pairs.iter().map(|&(k, y)| (k as i64, y as f64)).collect();
        let hi = pairs.last().map(|p| p.0).unwrap_or(0) as i64 + 10;
        let check = verify_integer_map(&net, 0, hi, &table)?;
        pieces += check.pieces;
        if let Some((m, want, got)) = check.first_mismatch {
            failures.push(format!("instance {inst}: F({m}) = {got}, want {want}"));
        }
        // independent evaluation: every integer (brute instances) or random probes
        let mut s = Scratch::default();
        let probes: Vec<i64> =
            if brute { (0..=hi).collect() } else { (0..INT_RANDOM_PROBES).map(|_| r.random_range(0..=hi)).collect() };
        brute_points += probes.len();
        if let Some(m) =
            probes.iter().find(|&&m| net.eval1(&[m as f64], &mut s) != table.get(&m).copied().unwrap_or(0.0))
        {
            failures.push(format!("instance {inst}: direct evaluation differs at {m}"));
        }
    }
    verdict(
        failures.is_empty(),
        format!(
            "{} instances ({} brute-forced), {pieces} affine pieces, {brute_points} direct evaluations, failures: [{}]",
            INT_INSTANCES + INT_BRUTE_INSTANCES,
            INT_BRUTE_INSTANCES,
            failures.join("; ")
        ),
    )
}

// ---- 3

fn small_instances() -> Result<Vec<(Dataset, Network, RegimeReport, RobustSpec)>> {
    [(8, 8), (32, 16), (128, 32)]
        .iter()
        .enumerate()
        .map(|(k, &(n, d))| {
            let data = gen_random(n, d, 4, 300 + k as u64)?;
            let (net, rep, spec) = build(&data, Norm::L2, small_rho(n, d), None, 3)?;
            Ok((data, net, rep, spec))
        })
        .collect()
}

fn c3_small() -> Result<Verdict> {
    let mut ok = true;
    let mut notes = Vec::new();
    let mut ns = Vec::new();
    let mut params = Vec::new();
    for (k, (data, net, rep, spec)) in small_instances()?.into_iter().enumerate() {
        let (n, d) = (data.n(), data.d());
        let m = rep.projection_dim.unwrap_or(d);
        let width = rep.achieved.width;
        let m_cap = SMALL_M_PER_LN_N * (n as f64).ln() + SMALL_M_SLACK;
        let stats = exact_check(&net, &data, Norm::L2, spec.mu, 30 + k as u64)?;
        let good = rep.regime == Regime::Small && stats.exact() && width <= 5 * m + 4 && (m as f64) <= m_cap;
        ok &= good;
        notes.push(format!(
            "N={n} d={d}: regime {}, m={m} (cap {m_cap:.1}), width {width} (<= {}), params {}, errors {}/{}",
            rep.regime,
            5 * m + 4,
            rep.achieved.params_all,
            stats.errors(),
            stats.total_samples
        ));
        ns.push(n as f64);
        params.push(rep.achieved.params_all as f64);
    }
    let slope = loglog_slope(&ns, &params);
    ok &= slope >= SMALL_SLOPE.0 && slope <= SMALL_SLOPE.1;
    notes.push(format!("slope {slope:.4} (window [{}, {}])", SMALL_SLOPE.0, SMALL_SLOPE.1));
    verdict(ok, notes.join("; "))
}

// ---- 4

fn c4_moderate() -> Result<Verdict> {
    let (n, d) = (64, 16);
    let rho = 1.0 / (10.0 * (d as f64).sqrt());
    let data = gen_random(n, d, 4, 400)?;
    let (net, rep, spec) = build(&data, Norm::L2, rho, Some(MODERATE_ETA), 4)?;
    ensure!(rep.regime == Regime::Moderate, "dispatched to {}", rep.regime);

    // each group's own network is exact on the balls it owns
    let groups = moderate_group_networks(&data, rho, MODERATE_ETA, 4)?;
    let mut owned_errors = 0usize;
    let mut owned_samples = 0usize;
    for (g, (cover, gnet)) in groups.iter().enumerate() {
        let p = SamplePlan { balls: Some(cover.clone()), ..plan(Norm::L2, spec.mu, BALL_SAMPLES, 40 + g as u64, Tolerance::Exact) };
        let s = verify_robust(gnet, &data, &p, Exec::Parallel)?;
        owned_errors += s.errors();
        owned_samples += s.total_samples;
    }
    let covered: BTreeSet<usize> = groups.iter().flat_map(|g| g.0.iter().copied()).collect();

    let stats = verify_robust(&net, &data, &plan(Norm::L2, spec.mu, MODERATE_SAMPLES, 41, Tolerance::Exact), Exec::Parallel)?;
    let exact_balls = stats.per_ball.iter().filter(|b| b.errors == 0).count();
    let pass = owned_errors == 0 && covered.len() == n && stats.wilson_upper <= MODERATE_ETA;
    verdict(
        pass,
        format!(
            "{} groups covering {}/{n} points, owned-ball errors {owned_errors}/{owned_samples}; full network: \
             max per-ball Wilson {:.5} (<= {MODERATE_ETA}), {} errors in {} samples, {exact_balls}/{n} balls exact, \
             params {}",
            groups.len(),
            covered.len(),
            stats.wilson_upper,
            stats.errors(),
            stats.total_samples,
            rep.achieved.params_all
        ),
    )
}

// ---- 5

fn c5_large() -> Result<Verdict> {
    let mut r = rng(5);
    let mut datasets = Vec::new();
    for k in 0..LARGE_RANDOM_DATASETS {
        let n = r.random_range(4..=LARGE_MAX_N);
        let d = r.random_range(2..=LARGE_MAX_D);
        let c = r.random_range(2..=4u32.min(n as u32));
        datasets.push((format!("random#{k}"), gen_random(n, d, c, 500 + k as u64)?));
    }
    for (k, d) in crafted_overlapping()?.into_iter().enumerate() {
        datasets.push((format!("crafted#{k}"), d));
    }

    // frozen dispatch table values (hand-evaluated)
    let table = [
        ((32, 16, 0.4), 1),
        ((32, 16, 0.2), 2),
        ((4096, 64, 0.2), 2),
        ((10, 5000, 0.2), 3),
        ((100_000, 10_000, 0.2), 4),
        ((10_000, 100_000, 0.2), 5),
    ];
    let mut failures = Vec::new();
    for &((n, d, rho), want) in &table {
        if large_case(n, d, rho) != want || case_table(n, d, rho) != want {
            failures.push(format!("case table at ({n},{d},{rho}) != {want}"));
        }
    }

    let mut nets = 0;
    let mut samples = 0;
    for (name, data) in &datasets {
        for (j, &rho) in LARGE_RHOS.iter().enumerate() {
            let (net, rep, spec) = build(data, Norm::L2, rho, None, 5)?;
            if name.starts_with("crafted") && !has_same_label_overlap(data, spec.mu) {
                failures.push(format!("{name}: crafted balls do not overlap at rho={rho}"));
            }
            let want = case_table(data.n(), data.d(), rho);
            if rep.regime != Regime::Large || rep.large_case != Some(want) {
                failures.push(format!("{name} rho={rho}: regime {} case {:?}, want case {want}", rep.regime, rep.large_case));
            }
            let stats = exact_check(&net, data, Norm::L2, spec.mu, 50 + j as u64)?;
            nets += 1;
            samples += stats.total_samples;
            if !stats.exact() {
                let dev = stats.per_ball.iter().map(|b| b.max_deviation).fold(0.0, f64::max);
                failures.push(format!(
                    "{name} (N={}, d={}) rho={rho}: {} errors, max deviation {dev:e}",
                    data.n(),
                    data.d(),
                    stats.errors()
                ));
            }
        }
    }
    verdict(
        failures.is_empty(),
        format!("{nets} networks ({} datasets), {samples} samples, failures: [{}]", datasets.len(), failures.join("; ")),
    )
}

// ---- 6

fn c6_geometry() -> Result<Verdict> {
    let mut failures = Vec::new();
    let mut subspaces = 0usize;
    let mut lps = 0usize;
    for d in 2..=GEOM_MAX_D {
        let basis = standard_basis(d, d);
        for k in 1..d {
            for s in 0..GEOM_SUBSPACES {
                let z = random_subspace(d, k, split_seed(6_000 + (d * 100 + k) as u64, s as u64));
                subspaces += 1;
                // l2: all d targets, then the first t targets for every t >= d - k
                let mut d2 = Vec::with_capacity(d);
                for e in &basis {
                    d2.push(subspace_distance(std::slice::from_ref(e), &z, Norm::L2)?.0);
                }
                let full = subspace_distance(&basis, &z, Norm::L2)?.0;
                if full > (((d - k) as f64) / d as f64).sqrt() + GEOM_TOL {
                    failures.push(format!("l2 d={d} k={k} #{s}: {full}"));
                }
                for t in (d - k).max(1)..=d {
                    let m = d2[..t].iter().copied().fold(f64::INFINITY, f64::min);
                    if m > (((d - k) as f64) / t as f64).sqrt() + GEOM_TOL {
                        failures.push(format!("l2-gen d={d} k={k} t={t} #{s}: {m}"));
                    }
                }
                // l_inf: min over the first t targets <= 1/2 whenever t >= d - k + 1;
                // the first target within 1/2 settles every such t at once
                let mut hit = None;
                for (j, e) in basis.iter().enumerate() {
                    lps += 1;
                    if subspace_distance(std::slice::from_ref(e), &z, Norm::Inf)?.0 <= 0.5 + GEOM_TOL {
                        hit = Some(j);
                        break;
                    }
                }
                match hit {
                    Some(j) if j < d - k + 1 => {}
                    _ => failures.push(format!("linf d={d} k={k} #{s}: first target within 1/2 is {hit:?}")),
                }
            }
        }
        if failures.len() > 20 {
            break;
        }
    }

    // certificate: width-starved first layers with 2μ > √(m/(N−1)) are refuted
    let mut r = rng(66);
    let mut refuted = 0;
    let mut starved = 0;
    let mut first_layers: Vec<(usize, Vec<f64>, f64)> = vec![(1, vec![1.0, 0.0, 0.0, 0.0], 0.9)];
    for d in 2..=GEOM_MAX_D {
        for m in 1..d {
            for _ in 0..CERT_TRIALS {
                let w: Vec<f64> = (0..m * d).map(|_| r.random_range(-1.0..1.0)).collect();
                let lo = (m as f64 / d as f64).sqrt();
                let two_mu = lo + r.random_range(0.001..1.0) * (1.0 - lo);
                first_layers.push((m, w, two_mu));
            }
        }
    }
    for (m, w, two_mu) in first_layers {
        let d = w.len() / m;
        let data = gen_width_lb_dataset(d + 1, d)?;
        let l1 = Layer::new(m, d, w, vec![0.0; m], Activation::Relu)?;
        let l2 = Layer::new(1, m, vec![1.0; m], vec![0.0], Activation::Identity)?;
        let net = Network::new(d, vec![l1, l2])?;
        starved += 1;
        if !certificate_check(&net, &data, two_mu / 2.0)?.passed() {
            refuted += 1;
        } else {
            failures.push(format!("certificate passed a width-{m} first layer in d={d} at 2mu={two_mu}"));
        }
    }

    // ... and every constructed memorizer of the hard dataset passes
    let mut built = 0;
    for &(n, d) in &[(5, 4), (7, 4), (9, 8), (13, 12)] {
        let data = gen_width_lb_dataset(n, d)?;
        let (t1, t2) = (1.0 / (5.0 * n as f64 * (d as f64).sqrt()), 1.0 / (5.0 * (d as f64).sqrt()));
        for rho in [t1, (t1 * t2).sqrt(), 0.2, 0.4, 0.7, 0.9] {
            let (net, _, spec) = build(&data, Norm::L2, rho, Some(MODERATE_ETA), 6)?;
            built += 1;
            let cert = certificate_check(&net, &data, spec.mu)?;
            if !cert.passed() {
                failures.push(format!("constructed memorizer (N={n}, d={d}, rho={rho}) failed: {cert:?}"));
            }
        }
    }
    failures.truncate(10);
    verdict(
        failures.is_empty(),
        format!(
            "{subspaces} subspaces ({lps} l_inf LPs), {refuted}/{starved} starved layers refuted, {built} memorizers \
             certified, failures: [{}]",
            failures.join("; ")
        ),
    )
}

// ---- 7

fn quantize_and_check(data: &Dataset, net: &Network, mu: f64, seed: u64) -> Result<(u32, VerificationStats)> {
    let mut pts = Vec::new();
    for i in 0..data.n() {
        pts.extend(sample_ball(data.point(i), mu, Norm::L2, split_seed(seed, i as u64), QUANT_SAMPLES_PER_BALL)?);
    }
    let radius = (data.max_norm() + mu).max(1.0);
    let mode = QuantMode::Empirical { points: Some(pts), samples: 0, seed };
    let (q, bits) = quantize_network(net, QUANT_NU, radius, &mode)?;
    let head = with_cleanup_head(&q, data.classes())?;
    let stats = exact_check(&head, data, Norm::L2, mu, seed + 1)?;
    Ok((bits, stats))
}

fn c7_quantization() -> Result<Verdict> {
    let mut instances: Vec<(String, Dataset, Network, f64)> = small_instances()?
        .into_iter()
        .map(|(data, net, _, spec)| (format!("small N={}", data.n()), data, net, spec.mu))
        .collect();
    for (k, &(n, d, rho)) in [(12, 6, 0.4), (16, 8, 0.7), (24, 12, 0.9)].iter().enumerate() {
        let data = gen_random(n, d, 3, 700 + k as u64)?;
        let (net, _, spec) = build(&data, Norm::L2, rho, None, 7)?;
        instances.push((format!("large N={n} rho={rho}"), data, net, spec.mu));
    }
    let mut ok = true;
    let mut notes = Vec::new();
    for (k, (name, data, net, mu)) in instances.iter().enumerate() {
        let (bits, stats) = quantize_and_check(data, net, *mu, 70 + k as u64)?;
        ok &= stats.exact();
        notes.push(format!("{name}: {bits} bits, errors {}/{}", stats.errors(), stats.total_samples));
    }
    verdict(ok, notes.join("; "))
}

// ---- 8

fn c8_lp() -> Result<Verdict> {
    let mut ok = true;
    let mut notes = Vec::new();
    for (pi, p) in [Norm::P(1.0), Norm::Inf].into_iter().enumerate() {
        let gamma = (LP_D as f64).powf((0.5 - p.inv()).abs());
        let data = gen_random(8, LP_D, 3, 800 + pi as u64)?;
        let t1 = 1.0 / (5.0 * 8.0 * (LP_D as f64).sqrt());
        // small (ρ′ below the small threshold) and large (ρ′ = 0.6, 0.9) regimes
        for rho in [t1 / gamma / 2.0, 0.6 / gamma, 0.9 / gamma] {
            let (net, rep, spec) = build(&data, p, rho, None, 8)?;
            let stats = exact_check(&net, &data, p, spec.mu, 80)?;
            ok &= stats.exact();
            notes.push(format!(
                "p={p} rho={rho:.5} ({}): errors {}/{}",
                rep.regime,
                stats.errors(),
                stats.total_samples
            ));
        }
        for rho in [1.0 / gamma, 0.75] {
            let spec = RobustSpec::new(&data, p, rho)?;
            match construct(&data, &spec, None, Some(MODERATE_ETA), 8) {
                Err(Error::Regime(msg)) if msg.contains("outside the lp range") => {
                    notes.push(format!("p={p} rho={rho} rejected"));
                }
                Err(e) => {
                    ok = false;
                    notes.push(format!("p={p} rho={rho}: wrong error {e}"));
                }
                Ok(_) => {
                    ok = false;
                    notes.push(format!("p={p} rho={rho}: accepted"));
                }
            }
        }
    }
    verdict(ok, notes.join("; "))
}

// ---- 9

fn c9_scaling() -> Result<Verdict> {
    let mut r = rng(9);
    let mut ok = true;
    let mut notes = Vec::new();
    for t in 0..SCALE_TRIALS {
        let n = r.random_range(4..=16);
        let d = r.random_range(2..=8);
        let data = gen_random(n, d, 3, 900 + t as u64)?;
        let (t1, t2) = (1.0 / (5.0 * n as f64 * (d as f64).sqrt()), 1.0 / (5.0 * (d as f64).sqrt()));
        let rho = if t % 2 == 0 { t1 * r.random_range(0.2..1.0) } else { t2 + r.random_range(0.0..0.95 - t2) };
        let c = r.random_range(-3.0f64..3.0).exp();
        let spec = RobustSpec::new(&data, Norm::L2, rho)?;
        let (f, rep) = construct_auto(&data, &spec, None, 9)?;
        let g = scale_input(&f, c)?;
        let scaled = scale(&data, c)?;
        let mu_c = c * spec.mu;
        let sep_ratio = separation(&scaled, Norm::L2) / (c * separation(&data, Norm::L2));
        let stats = exact_check(&g, &scaled, Norm::L2, mu_c, 90 + t as u64)?;
        let same = g.resources().params_all == f.resources().params_all;
        ok &= stats.exact() && same && (sep_ratio - 1.0).abs() < 1e-12;
        notes.push(format!("{}/c={c:.3}: errors {}, params equal {same}", rep.regime, stats.errors()));
    }
    verdict(ok, notes.join("; "))
}

// ---- 10

#[derive(serde::Deserialize)]
struct Row {
    rho: f64,
    regime: String,
    status: String,
    params_all: Option<u64>,
}

fn next_up(x: f64) -> f64 {
    f64::from_bits(x.to_bits() + 1)
}

fn c10_sweep() -> Result<Verdict> {
    let t1 = 1.0 / (5.0 * SWEEP_N as f64 * (SWEEP_D as f64).sqrt());
    let t2 = 1.0 / (5.0 * (SWEEP_D as f64).sqrt());
    let rhos = [t1 / 4.0, t1, next_up(t1), 4.0 * t1, 0.005, 0.02, t2, next_up(t2), 0.2, 0.6];
    let dir = tempfile::tempdir()?;
    let out = dir.path().join("sweep.csv");
    let list: Vec<String> = rhos.iter().map(|r| r.to_string()).collect();
    let args: Vec<String> = ["robmem", "sweep", "--n", &SWEEP_N.to_string(), "--d", &SWEEP_D.to_string(), "--rhos"]
        .iter()
        .map(|s| s.to_string())
        .chain([list.join(","), "--out".into(), out.display().to_string()])
        .collect();
    let (mut so, mut se) = (Vec::new(), Vec::new());
    let code = robmem_cli::main_with(&args, &mut so, &mut se);
    if code != 0 {
        bail!("sweep exited {code}: {}", String::from_utf8_lossy(&se));
    }
    let rows: Vec<Row> = csv::Reader::from_path(&out)
        .context("reading sweep csv")?
        .deserialize()
        .collect::<std::result::Result<_, _>>()?;
    ensure!(rows.len() == rhos.len(), "expected {} rows, got {}", rhos.len(), rows.len());

    let mut failures = Vec::new();
    let mut prev: Option<u64> = None;
    let mut line = Vec::new();
    for (row, &rho) in rows.iter().zip(&rhos) {
        let want = if rho <= t1 {
            "small"
        } else if rho <= t2 {
            "moderate"
        } else {
            "large"
        };
        if row.rho != rho || row.regime != want {
            failures.push(format!("rho={rho}: labelled {}, want {want}", row.regime));
        }
        let Some(p) = row.params_all.filter(|_| row.status == "ok") else {
            failures.push(format!("rho={rho}: status {}", row.status));
            continue;
        };
        if let Some(q) = prev {
            if (p as f64) < q as f64 / SWEEP_BAND {
                failures.push(format!("params fall from {q} to {p} at rho={rho}"));
            }
        }
        prev = Some(p);
        line.push(format!("{rho:.3e}:{}:{p}", &row.regime[..1]));
    }
    verdict(failures.is_empty(), format!("[{}], failures: [{}]", line.join(" "), failures.join("; ")))
}
