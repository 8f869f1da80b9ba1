//! Robust memorizers for the three robustness regimes, the dispatcher, the
//! ℓp wrapper and post-hoc quantization.
//!
//! Small and moderate ρ share one pipeline: project, scale so differently
//! labeled points land in different unit cells, translate the cells away from
//! the balls, index the cells with floor gadgets and look the index up with an
//! integer memorizer. Moderate ρ runs that per group of points and chains the
//! groups through a running max. Large ρ uses a distance-gate memorizer.

use crate::dataset::{separation, Dataset, Norm, RobustSpec};
use crate::error::{invalid, Error, Result};
use crate::exec::split_seed;
use crate::gadgets::{bit_len, emit_floors, emit_integer_memorizer, emit_squares, floor_bits_for, Layering};
use crate::lattice::{dist_to_integers, error_budget_eta_prime, grid_translate_subset, vd_ratio, GridTranslation};
use crate::net_ir::{compose_serial, snap_network, FixedPointFormat, Junction, NetBuilder, Network, ResourceProfile, Row, Scratch};
use crate::reduce::{jl_project, jl_smallest, natural_projection, point_separation, relu_safe_bias, Projection, DEFAULT_RETRIES};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use std::collections::{BTreeMap, HashMap};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Small,
    Moderate,
    Large,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Small => "small",
            Regime::Moderate => "moderate",
            Regime::Large => "large",
        })
    }
}

/// `(1/(5N√d), 1/(5√d))`: upper ends of the small and moderate intervals.
pub fn thresholds(n: usize, d: usize) -> (f64, f64) {
    let sd = (d as f64).sqrt();
    (1.0 / (5.0 * n as f64 * sd), 1.0 / (5.0 * sd))
}

/// Regime of `ρ` (both interval ends closed on the right).
pub fn regime_for(n: usize, d: usize, rho: f64) -> Regime {
    let (a, b) = thresholds(n, d);
    if rho <= a {
        Regime::Small
    } else if rho <= b {
        Regime::Moderate
    } else {
        Regime::Large
    }
}

/// Parameter bound of the regime with all hidden constants and logs set to 1.
pub fn theoretical_param_bound(regime: Regime, n: usize, d: usize, rho: f64) -> (f64, &'static str) {
    let (n, d) = (n as f64, d as f64);
    match regime {
        Regime::Small => (d + n.sqrt(), "d + sqrt(N)"),
        Regime::Moderate => (n * d.powf(0.25) * rho.sqrt(), "N * d^(1/4) * rho^(1/2)"),
        Regime::Large => (n * d * d * rho.powi(4), "N * d^2 * rho^4"),
    }
}

/// Resources of one construction stage (a contiguous run of layers).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub first_layer: usize,
    pub layers: usize,
    pub params_all: u64,
    pub width: usize,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeReport {
    pub regime: Regime,
    pub rho: f64,
    pub p: Norm,
    /// ρ actually used by the ℓ2 construction (differs from `rho` for p ≠ 2).
    pub rho_l2: f64,
    pub theoretical_param_bound: f64,
    pub bound_formula: String,
    pub achieved: ResourceProfile,
    pub eta_requested: Option<f64>,
    /// Analytic per-ball error bound of the moderate construction.
    pub eta_estimated: Option<f64>,
    pub seed: u64,
    pub projection_dim: Option<usize>,
    pub large_case: Option<u8>,
    pub groups: Option<usize>,
    pub group_size: Option<usize>,
    pub key_bits: Option<u32>,
    pub stages: Vec<StageRecord>,
    pub notes: Vec<String>,
}

impl RegimeReport {
    fn new(regime: Regime, d: &Dataset, rho: f64, seed: u64) -> Self {
        let (b, f) = theoretical_param_bound(regime, d.n(), d.d(), rho);
        RegimeReport {
            regime,
            rho,
            p: Norm::L2,
            rho_l2: rho,
            theoretical_param_bound: b,
            bound_formula: f.to_string(),
            achieved: ResourceProfile { params_all: 0, params_nonzero: 0, width: 0, depth: 0, bit_complexity: None },
            eta_requested: None,
            eta_estimated: None,
            seed,
            projection_dim: None,
            large_case: None,
            groups: None,
            group_size: None,
            key_bits: None,
            stages: Vec::new(),
            notes: Vec::new(),
        }
    }

    fn finish(&mut self, net: &Network, marks: &[(String, usize, String)]) {
        self.achieved = net.resources();
        let layers = net.layers();
        for (k, (name, start, note)) in marks.iter().enumerate() {
            let end = marks.get(k + 1).map(|m| m.1).unwrap_or(layers.len());
            let slice = &layers[*start..end];
            self.stages.push(StageRecord {
                name: name.clone(),
                first_layer: *start,
                layers: slice.len(),
                params_all: slice.iter().map(|l| ((l.cols() + 1) * l.rows()) as u64).sum(),
                width: slice.iter().map(|l| l.rows()).max().unwrap_or(0),
                note: note.clone(),
            });
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("report serializes");
        v.as_object_mut().unwrap().insert("schema".into(), "v1".into());
        v
    }
}

fn pow2_floor(x: f64) -> f64 {
    x.log2().floor().exp2()
}

// ------------------------------------------------------------------ cell pipeline

/// Stage I result: quantized, scaled projection and the projected centers.
struct CellFrame {
    m: usize,
    rows: Vec<Vec<f64>>,
    z: Vec<Vec<f64>>,
    /// Per-coordinate image radius of a robustness ball.
    r: f64,
    scale: f64,
    proj_bits: u32,
}

fn cell_frame(d: &Dataset, proj: &Projection, mu: f64, kappa: f64) -> Result<CellFrame> {
    let m = proj.m();
    let pz = proj.apply_all(d.points());
    let eps_p = point_separation(&pz, d.labels());
    if !(eps_p > mu) {
        return Err(Error::Construction(format!("projected separation {eps_p} does not exceed the radius {mu}")));
    }
    // differently labeled centers end up at least κ·√m apart
    let scale = kappa * (m as f64).sqrt() / (2.0 * eps_p);
    let r0 = scale * mu;
    let xmax = d.points().iter().flat_map(|p| p.iter()).fold(0.0f64, |a, v| a.max(v.abs())) + mu;
    let nu = [109.0 / 11880.0 * (m as f64).sqrt(), r0 / 88.0, 1.0 / (360.0 * d.n() as f64), 1.0]
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    let bits = ((d.d() as f64 * xmax.max(1.0) / (2.0 * nu)).log2().ceil().max(0.0)) as u32;
    let fmt = FixedPointFormat { frac_bits: bits, int_bits: 64 };
    let rows: Vec<Vec<f64>> = (0..m).map(|i| proj.row(i).iter().map(|v| fmt.snap(v * scale)).collect()).collect();
    let z: Vec<Vec<f64>> = d
        .points()
        .iter()
        .map(|x| rows.iter().map(|r| r.iter().zip(x).map(|(a, b)| a * b).sum()).collect())
        .collect();
    let rmax = rows.iter().map(|r| Norm::L2.norm(r)).fold(0.0, f64::max);
    Ok(CellFrame { m, rows, z, r: rmax * mu, scale, proj_bits: bits })
}

/// One group's translation, floor precision and key map.
struct CellGroup {
    offset: Vec<f64>,
    n_bits: u32,
    gamma: f64,
    coeffs: Vec<u64>,
    pairs: Vec<(u64, u32)>,
    overlaps: usize,
    band_bound: f64,
    margin: f64,
}

fn cells_of(zt: &[f64], r: f64) -> Vec<Vec<i64>> {
    let mut out = vec![vec![]];
    for &v in zt {
        let lo = (v - r).floor() as i64;
        let hi = (v + r).floor() as i64;
        let mut next = Vec::with_capacity(out.len() * (hi - lo + 1) as usize);
        for c in &out {
            for k in lo..=hi {
                let mut c2 = c.clone();
                c2.push(k);
                next.push(c2);
            }
        }
        out = next;
    }
    out
}

fn key_of(cell: &[i64], a: &[u64]) -> Option<u64> {
    let mut k: u64 = 0;
    for (c, w) in cell.iter().zip(a) {
        k = k.checked_add((*c as u64).checked_mul(*w)?)?;
    }
    Some(k)
}

/// Keys of the owned cells if they are consistent: one label per key and no
/// differently labeled foreign cell sharing a key. Returns the max key.
fn keys_ok(owned: &BTreeMap<Vec<i64>, u32>, touched: &[(Vec<i64>, u32)], a: &[u64]) -> Option<u64> {
    let mut by_key: HashMap<u64, u32> = HashMap::with_capacity(owned.len());
    let mut max = 0;
    for (c, &y) in owned {
        let k = key_of(c, a)?;
        if k >= 1 << 50 {
            return None;
        }
        if let Some(&y0) = by_key.get(&k) {
            if y0 != y {
                return None;
            }
        }
        by_key.insert(k, y);
        max = max.max(k);
    }
    for (c, y) in touched {
        if owned.contains_key(c) {
            continue;
        }
        if let Some(&y0) = by_key.get(&key_of(c, a)?) {
            if y0 != *y {
                return None;
            }
        }
    }
    Some(max)
}

/// Mixed-radix coefficients (always injective on the box) or a random small
/// coefficient vector separating the labeled cells, whichever gives smaller keys.
fn choose_coeffs(owned: &BTreeMap<Vec<i64>, u32>, touched: &[(Vec<i64>, u32)], radix: &[u64], seed: u64) -> Result<Vec<u64>> {
    let m = radix.len();
    let mut a = vec![1u64; m];
    for j in (0..m.saturating_sub(1)).rev() {
        a[j] = a[j + 1]
            .checked_mul(radix[j + 1])
            .ok_or_else(|| Error::Construction("grid index overflows 64 bits".into()))?;
    }
    let mut best = keys_ok(owned, touched, &a).map(|k| (k, a.clone()));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = bit_len(owned.len() as u64);
    for b in start..48 {
        if let Some((k, _)) = &best {
            if bit_len(*k) <= b {
                break;
            }
        }
        let mut found = None;
        for _ in 0..32 {
            let cand: Vec<u64> = (0..m).map(|_| rng.random_range(1..=(1u64 << b))).collect();
            if let Some(k) = keys_ok(owned, touched, &cand) {
                found = Some((k, cand));
                break;
            }
        }
        if let Some((k, cand)) = found {
            if best.as_ref().map(|(bk, _)| k < *bk).unwrap_or(true) {
                best = Some((k, cand));
            }
            break;
        }
    }
    best.map(|(_, a)| a).ok_or_else(|| Error::Construction("no consistent cell indexing found".into()))
}

/// Plans the floor/flatten/memorize stage for the points in `cover`; other
/// points only constrain the positivity shift, the range and the key choice.
fn plan_group(
    z: &[Vec<f64>],
    labels: &[u32],
    cover: &[usize],
    r: f64,
    budget: Option<(usize, f64)>,
    seed: u64,
) -> Result<CellGroup> {
    let tr: GridTranslation = grid_translate_subset(z, cover, cover.len(), r)?;
    let zt: Vec<Vec<f64>> = z.iter().map(|p| tr.apply(p)).collect();
    let margin = cover.iter().flat_map(|&i| zt[i].iter().map(|&v| dist_to_integers(v))).fold(f64::INFINITY, f64::min);
    let slack = margin - r - 1e-9;
    if !(slack > 0.0) {
        return Err(Error::Construction(format!(
            "ball image (radius {r:.3e}) does not fit its cell (lattice margin {margin:.3e})"
        )));
    }
    let mut gamma = pow2_floor(slack / 2.0);
    let m = z[0].len();
    let mut band_bound = 0.0;
    if let Some((d_ball, eta)) = budget {
        let (_, eta_p) = error_budget_eta_prime(d_ball, r, eta)?;
        gamma = gamma.min(pow2_floor(eta_p));
        band_bound = m as f64 * gamma / (r * vd_ratio(d_ball));
    }
    let mut radix = vec![1u64; m];
    for (j, rj) in radix.iter_mut().enumerate() {
        *rj = zt.iter().map(|p| (p[j] + r).floor() as u64 + 1).max().unwrap();
    }
    let n_bits = floor_bits_for(*radix.iter().max().unwrap());
    let mut owned: BTreeMap<Vec<i64>, u32> = BTreeMap::new();
    for &i in cover {
        let c: Vec<i64> = zt[i].iter().map(|v| v.floor() as i64).collect();
        if let Some(&y) = owned.get(&c) {
            if y != labels[i] {
                return Err(Error::Construction(format!("labels {y} and {} share a grid cell", labels[i])));
            }
        }
        owned.insert(c, labels[i]);
    }
    let in_cover: Vec<bool> = {
        let mut v = vec![false; z.len()];
        cover.iter().for_each(|&i| v[i] = true);
        v
    };
    let mut touched = Vec::new();
    let mut overlaps = 0;
    for (i, p) in zt.iter().enumerate() {
        if in_cover[i] {
            continue;
        }
        for c in cells_of(p, r) {
            if owned.get(&c).is_some_and(|&y| y != labels[i]) {
                overlaps += 1;
            }
            touched.push((c, labels[i]));
        }
    }
    let coeffs = choose_coeffs(&owned, &touched, &radix, seed)?;
    let mut by_key: BTreeMap<u64, u32> = BTreeMap::new();
    for (c, &y) in &owned {
        by_key.insert(key_of(c, &coeffs).expect("checked"), y);
    }
    Ok(CellGroup {
        offset: tr.offset(),
        n_bits,
        gamma,
        coeffs,
        pairs: by_key.into_iter().collect(),
        overlaps,
        band_bound,
        margin,
    })
}

/// Emits one group reading the cell coordinates `zs`; returns the output expression.
fn emit_group(nb: &mut NetBuilder, zs: &[Row], g: &CellGroup, extra: &mut [Row]) -> Result<(Row, u32)> {
    let fl = emit_floors(nb, zs, g.n_bits, g.gamma, extra)?;
    let mut key = Row::new(0.0);
    for (f, &a) in fl.iter().zip(&g.coeffs) {
        key = key.plus(&f.scaled(a as f64));
    }
    let (out, lay) = emit_integer_memorizer(nb, &key, &g.pairs, extra)?;
    Ok((out, lay.b_u))
}

fn choose_projection(d: &Dataset, seed: u64) -> Result<Projection> {
    let dim = d.d();
    let m_min = 2.max((d.n() as f64).ln().ceil() as usize + 1).min(dim);
    jl_smallest(d, m_min, dim, DEFAULT_RETRIES, seed)
}

/// Exact memorizer for `ρ ≤ 1/(5N√d)`.
pub fn construct_small_rho(d: &Dataset, rho: f64, seed: u64) -> Result<(Network, RegimeReport)> {
    let (t_small, _) = thresholds(d.n(), d.d());
    if !(rho > 0.0) || rho > t_small {
        return Err(Error::Regime(format!("small regime needs 0 < rho <= 1/(5N sqrt d) = {t_small:.6e}, got {rho}")));
    }
    let mu = rho * separation(d, Norm::L2);
    let proj = choose_projection(d, split_seed(seed, 1))?;
    let frame = cell_frame(d, &proj, mu, 1.01)?;
    let cover: Vec<usize> = (0..d.n()).collect();
    let g = plan_group(&frame.z, d.labels(), &cover, frame.r, None, split_seed(seed, 2))?;

    let mut nb = NetBuilder::new(d.d());
    let mut marks = vec![("project".to_string(), 0, format!("m = {}, {} fractional bits", frame.m, frame.proj_bits))];
    nb.relu(first_layer(&frame, &g.offset))?;
    let zs: Vec<Row> = (0..frame.m).map(Row::unit).collect();
    marks.push(("flatten".into(), nb.layer_count(), format!("gamma = {:e}, n = {}", g.gamma, g.n_bits)));
    let fl = emit_floors(&mut nb, &zs, g.n_bits, g.gamma, &mut [])?;
    let mut key = Row::new(0.0);
    for (f, &a) in fl.iter().zip(&g.coeffs) {
        key = key.plus(&f.scaled(a as f64));
    }
    marks.push(("memorize".into(), nb.layer_count(), format!("{} distinct keys", g.pairs.len())));
    let (out, lay) = emit_integer_memorizer(&mut nb, &key, &g.pairs, &mut [])?;
    let net = nb.finish(vec![out])?;

    let mut rep = RegimeReport::new(Regime::Small, d, rho, seed);
    rep.projection_dim = Some(frame.m);
    rep.key_bits = Some(lay.b_u);
    rep.groups = Some(1);
    rep.group_size = Some(d.n());
    rep.notes.push(format!(
        "cell radius {:.4e} inside lattice margin {:.4e}; scale {:.4e}; separation ratio {:.4}",
        frame.r, g.margin, frame.scale, proj.achieved_separation_ratio
    ));
    rep.finish(&net, &marks);
    Ok((net.with_meta("regime", "small".into()), rep))
}

/// Group size `g = ⌊1/(5ρ√d)⌋` of the moderate construction.
pub fn moderate_group_size(d: usize, rho: f64) -> usize {
    ((1.0 / (5.0 * rho * (d as f64).sqrt())).floor() as usize).max(1)
}

struct ModeratePlan {
    groups: Vec<Vec<usize>>,
    group_size: usize,
    frame: CellFrame,
    plans: Vec<CellGroup>,
    kappa: f64,
    overlaps: usize,
}

fn plan_moderate(d: &Dataset, rho: f64, eta: f64, seed: u64) -> Result<ModeratePlan> {
    let (t_small, t_large) = thresholds(d.n(), d.d());
    if !(rho > t_small && rho <= t_large) {
        return Err(Error::Regime(format!(
            "moderate regime needs 1/(5N sqrt d) = {t_small:.6e} < rho <= 1/(5 sqrt d) = {t_large:.6e}, got {rho}"
        )));
    }
    if !(eta > 0.0 && eta < 1.0) {
        return invalid(format!("eta must lie in (0,1), got {eta}"));
    }
    let n = d.n();
    let g = moderate_group_size(d.d(), rho).min(n);
    let groups: Vec<Vec<usize>> = (0..n).collect::<Vec<_>>().chunks(g).map(|c| c.to_vec()).collect();
    let eta_g = eta / groups.len() as f64;
    let mu = rho * separation(d, Norm::L2);
    let proj = choose_projection(d, split_seed(seed, 1))?;

    // Widen the cells until no foreign ball reaches an owned cell, if possible.
    let mut first_fit = None;
    for kappa in [1.01, 1.1, 1.25, 1.5, 2.0] {
        let Ok(frame) = cell_frame(d, &proj, mu, kappa) else { continue };
        let plans: Result<Vec<CellGroup>> = groups
            .iter()
            .enumerate()
            .map(|(j, c)| plan_group(&frame.z, d.labels(), c, frame.r, Some((d.d(), eta_g)), split_seed(seed, 100 + j as u64)))
            .collect();
        let Ok(plans) = plans else { continue };
        let overlaps: usize = plans.iter().map(|p| p.overlaps).sum();
        let plan = ModeratePlan { groups: groups.clone(), group_size: g, frame, plans, kappa, overlaps };
        if overlaps == 0 {
            return Ok(plan);
        }
        first_fit.get_or_insert(plan);
    }
    first_fit.ok_or_else(|| Error::Construction("no cell scale fits the owned balls".into()))
}

fn first_layer(frame: &CellFrame, offset: &[f64]) -> Vec<Row> {
    frame
        .rows
        .iter()
        .zip(offset)
        .map(|(r, &b)| r.iter().enumerate().fold(Row::new(b), |acc, (k, &w)| acc.t(k, w)))
        .collect()
}

/// Memorizer for `1/(5N√d) < ρ ≤ 1/(5√d)`: exact on the balls of each group's
/// own points, error at most `eta` per ball elsewhere (analytic bound).
pub fn construct_moderate_rho(d: &Dataset, rho: f64, eta: f64, seed: u64) -> Result<(Network, RegimeReport)> {
    let ModeratePlan { group_size, frame, plans, kappa, overlaps, .. } = plan_moderate(d, rho, eta, seed)?;
    let mut nb = NetBuilder::new(d.d());
    let mut marks = vec![("project".to_string(), 0, format!("m = {}, scale factor {kappa}", frame.m))];
    let base = &plans[0].offset;
    nb.relu(first_layer(&frame, base))?;
    let mut extra: Vec<Row> = (0..frame.m).map(Row::unit).collect();
    extra.push(Row::new(0.0));
    let m = frame.m;
    let mut key_bits = 0;
    for (j, p) in plans.iter().enumerate() {
        marks.push((format!("group {j}"), nb.layer_count(), format!("{} keys, gamma = {:e}", p.pairs.len(), p.gamma)));
        let zs: Vec<Row> = (0..m).map(|k| extra[k].plus_const(p.offset[k] - base[k])).collect();
        let (out, b) = emit_group(&mut nb, &zs, p, &mut extra)?;
        key_bits = key_bits.max(b);
        // running max with the carried label
        let y = extra[m].clone();
        let diff = out.plus(&y.scaled(-1.0));
        let mut l = Layering::carrying(&mut extra);
        let q = l.unit(diff);
        l.push(&mut nb)?;
        extra[m] = extra[m].plus(&q);
    }
    let net = nb.finish(vec![extra[m].clone()])?;

    let mut rep = RegimeReport::new(Regime::Moderate, d, rho, seed);
    rep.eta_requested = Some(eta);
    rep.eta_estimated = Some(plans.iter().map(|p| p.band_bound).sum());
    rep.projection_dim = Some(m);
    rep.groups = Some(plans.len());
    rep.group_size = Some(group_size);
    rep.key_bits = Some(key_bits);
    if overlaps > 0 {
        rep.notes.push(format!("{overlaps} foreign ball/cell contacts with a different label remain"));
    }
    rep.finish(&net, &marks);
    Ok((net.with_meta("regime", "moderate".into()), rep))
}

/// The per-group networks `x ↦ f̃_j(x)` that [`construct_moderate_rho`] chains,
/// each paired with the indices of the points it owns.
pub fn moderate_group_networks(d: &Dataset, rho: f64, eta: f64, seed: u64) -> Result<Vec<(Vec<usize>, Network)>> {
    let plan = plan_moderate(d, rho, eta, seed)?;
    let mut out = Vec::with_capacity(plan.plans.len());
    for (cover, p) in plan.groups.into_iter().zip(&plan.plans) {
        let mut nb = NetBuilder::new(d.d());
        nb.relu(first_layer(&plan.frame, &p.offset))?;
        let zs: Vec<Row> = (0..plan.frame.m).map(Row::unit).collect();
        let (y, _) = emit_group(&mut nb, &zs, p, &mut [])?;
        out.push((cover, nb.finish(vec![y])?));
    }
    Ok(out)
}

/// Memorizer for the points `I` of a dataset with `ε ≥ √d/2`, working directly
/// in input space: exact on the balls of `I`, and on any other ball outputs
/// 0 or that ball's label except on a small band (≤ `eta`).
pub fn n_alpha_points(d: &Dataset, cover: &[usize], rho: f64, eta: f64) -> Result<Network> {
    let eps = separation(d, Norm::L2);
    if eps < (d.d() as f64).sqrt() / 2.0 {
        return Err(Error::Precondition(format!("separation {eps} below sqrt(d)/2")));
    }
    if cover.is_empty() || cover.iter().any(|&i| i >= d.n()) {
        return invalid("index set must be a non-empty subset of the points");
    }
    if !(rho > 0.0 && rho < 1.0) || !(eta > 0.0 && eta < 1.0) {
        return invalid("need rho and eta in (0,1)");
    }
    let r = rho * eps;
    let g = plan_group(d.points(), d.labels(), cover, r, Some((d.d(), eta)), 7)?;
    let mut nb = NetBuilder::new(d.d());
    let zs: Vec<Row> = (0..d.d()).map(|k| Row::unit(k).plus_const(g.offset[k])).collect();
    let mut l = Layering::new();
    let zs: Vec<Row> = zs.iter().map(|z| l.unit(z.clone())).collect();
    l.push(&mut nb)?;
    let (out, _) = emit_group(&mut nb, &zs, &g, &mut [])?;
    nb.finish(vec![out])
}

// ------------------------------------------------------------------ large ρ

/// Case of the large-ρ dispatch (1–5).
pub fn large_case(n: usize, d: usize, rho: f64) -> u8 {
    let t = 600.0 * (n as f64).ln();
    let (n, d) = (n as f64, d as f64);
    if rho >= 1.0 / 3.0 {
        1
    } else if d < t {
        2
    } else if n < t {
        3
    } else if n >= d {
        4
    } else {
        5
    }
}

/// Projection dimension used by cases 4 and 5.
pub fn large_case_dim(case: u8, n: usize, d: usize, rho: f64) -> usize {
    let ln_n = (n as f64).ln();
    let m = match case {
        4 => ((9.0 * d as f64 * rho * rho).ceil()).max((600.0 * ln_n).ceil()).max((10.0 * (d as f64).ln()).ceil()),
        5 => ((9.0 * n as f64 * rho * rho).ceil()).max((600.0 * ln_n).ceil()),
        _ => d as f64,
    };
    (m as usize).clamp(1, d)
}

/// Emits the distance-gate memorizer on the nonnegative coordinates `xs`
/// (`centers` in the same coordinates). Returns the output expression.
fn emit_base(nb: &mut NetBuilder, xs: &[Row], centers: &[Vec<f64>], labels: &[u32], eps: f64, mu: f64) -> Result<Row> {
    let dim = xs.len();
    let gamma = eps - mu;
    let rmax = centers.iter().flat_map(|c| c.iter()).fold(0.0f64, |a, v| a.max(v.abs()));
    let s = 2.0 * (rmax + eps);
    let k = ((dim as f64 * s * s / (eps * gamma)).log2() / 2.0).ceil().max(0.0) as u32 + 2;
    let s2 = s * s;
    let a_on = (mu * mu + eps * gamma) / s2;
    let a_off = ((2.0 * eps - mu).powi(2) - eps * gamma) / s2;
    let delta = a_off - a_on;
    let mut extra: Vec<Row> = xs.to_vec();
    extra.push(Row::new(0.0));
    for (c, &y) in centers.iter().zip(labels) {
        // t_j = (x_j − c_j + S)/(2S) ∈ [0,1]; (2t_j − 1)² = ((x_j − c_j)/S)²
        let ts: Vec<Row> = (0..dim).map(|j| extra[j].plus_const(s - c[j]).scaled(1.0 / (2.0 * s))).collect();
        let sq = emit_squares(nb, &ts, k, &mut extra)?;
        let mut shat = Row::new(0.0);
        for j in 0..dim {
            let t = extra[j].plus_const(s - c[j]).scaled(1.0 / (2.0 * s));
            shat = shat.plus(&sq[j].plus(&t.scaled(-1.0)).scaled(4.0)).plus_const(1.0);
        }
        let u = shat.plus_const(-a_on).scaled(1.0 / delta);
        let mut l = Layering::carrying(&mut extra);
        let w = l.unit(u);
        l.push(nb)?;
        let mut l = Layering::carrying(&mut extra);
        let p = l.unit(Row::new(1.0).plus(&w.scaled(-1.0)));
        l.push(nb)?;
        let yv = extra[dim].clone();
        let diff = p.scaled(y as f64).plus(&yv.scaled(-1.0));
        let mut l = Layering::carrying(&mut extra);
        let q = l.unit(diff);
        l.push(nb)?;
        extra[dim] = extra[dim].plus(&q);
    }
    Ok(extra[dim].clone())
}

/// Exact distance-gate memorizer: width `4d + 1`, `k + 3` layers per point.
pub fn base_memorize(d: &Dataset, rho: f64) -> Result<Network> {
    if !(rho > 0.0 && rho < 1.0) {
        return invalid(format!("rho must lie in (0,1), got {rho}"));
    }
    let eps = separation(d, Norm::L2);
    let mu = rho * eps;
    let (xs, centers) = shifted_inputs(d.points(), mu);
    let mut nb = NetBuilder::new(d.d());
    let out = emit_base(&mut nb, &xs, &centers, d.labels(), eps, mu)?;
    nb.finish(vec![out])
}

/// `x_j + K_j ≥ 0` on every ball, as expressions and shifted centers.
fn shifted_inputs(points: &[Vec<f64>], mu: f64) -> (Vec<Row>, Vec<Vec<f64>>) {
    let dim = points[0].len();
    let shift: Vec<f64> = (0..dim)
        .map(|j| {
            let lo = points.iter().map(|p| p[j]).fold(f64::INFINITY, f64::min);
            (mu - lo).max(0.0).ceil()
        })
        .collect();
    let xs = (0..dim).map(|j| Row::unit(j).plus_const(shift[j])).collect();
    let centers = points.iter().map(|p| p.iter().zip(&shift).map(|(a, b)| a + b).collect()).collect();
    (xs, centers)
}

/// Exact memorizer for `ρ > 1/(5√d)`, dispatched over the five cases.
pub fn construct_large_rho(d: &Dataset, rho: f64, seed: u64) -> Result<(Network, RegimeReport)> {
    let (_, t_large) = thresholds(d.n(), d.d());
    if !(rho > t_large && rho < 1.0) {
        return Err(Error::Regime(format!("large regime needs 1/(5 sqrt d) = {t_large:.6e} < rho < 1, got {rho}")));
    }
    let (n, dim) = (d.n(), d.d());
    let eps = separation(d, Norm::L2);
    let mu = rho * eps;
    let case = large_case(n, dim, rho);
    let mut rep = RegimeReport::new(Regime::Large, d, rho, seed);
    rep.large_case = Some(case);
    let mut nb = NetBuilder::new(dim);
    let mut marks = Vec::new();
    let out = match case {
        1 | 2 => {
            marks.push(("base".to_string(), 0, "direct".to_string()));
            let (xs, centers) = shifted_inputs(d.points(), mu);
            emit_base(&mut nb, &xs, &centers, d.labels(), eps, mu)?
        }
        _ => {
            let mut proj = natural_projection(d).ok();
            if case == 4 || case == 5 {
                let src = match &proj {
                    Some(p) if case == 5 => Dataset::new(p.apply_all(d.points()), d.labels().to_vec())?,
                    _ => d.clone(),
                };
                let m = large_case_dim(case, n, src.d(), rho);
                let jl = jl_project(&src, m, Some(1.2 * rho), DEFAULT_RETRIES, split_seed(seed, 3))?;
                proj = Some(match proj {
                    Some(p) if case == 5 => compose_projections(&p, &jl),
                    _ => jl,
                });
            }
            let proj = proj.ok_or_else(|| Error::Construction("projection unavailable".into()))?;
            rep.projection_dim = Some(proj.m());
            let rows: Vec<Vec<f64>> = (0..proj.m()).map(|i| proj.row(i)).collect();
            let radius = d.max_norm() + mu;
            let bias = relu_safe_bias(&rows, radius);
            let mut l = Layering::new();
            let xs: Vec<Row> = rows
                .iter()
                .zip(&bias)
                .map(|(r, &b)| l.unit(r.iter().enumerate().fold(Row::new(b), |acc, (k, &w)| acc.t(k, w))))
                .collect();
            l.push(&mut nb)?;
            marks.push(("project".to_string(), 0, format!("m = {}", proj.m())));
            let centers: Vec<Vec<f64>> =
                d.points().iter().map(|x| proj.apply(x).iter().zip(&bias).map(|(a, b)| a + b).collect()).collect();
            let eps_p = point_separation(&centers, d.labels());
            if !(mu < eps_p) {
                return Err(Error::Construction(format!("projected separation {eps_p} does not exceed radius {mu}")));
            }
            marks.push(("base".to_string(), 1, format!("rho' = {:.4}", mu / eps_p)));
            emit_base(&mut nb, &xs, &centers, d.labels(), eps_p, mu)?
        }
    };
    let net = nb.finish(vec![out])?;
    rep.finish(&net, &marks);
    Ok((net.with_meta("regime", "large".into()), rep))
}

fn compose_projections(first: &Projection, second: &Projection) -> Projection {
    let p = second.matrix() * first.matrix();
    let rows: Vec<Vec<f64>> = (0..p.nrows()).map(|i| p.row(i).iter().copied().collect()).collect();
    Projection::from_rows(&rows, second.achieved_separation_ratio)
}

// ------------------------------------------------------------------ dispatch

/// Regime dispatch for ℓ2 (other norms go through [`construct_lp`]).
pub fn construct_auto(d: &Dataset, spec: &RobustSpec, eta: Option<f64>, seed: u64) -> Result<(Network, RegimeReport)> {
    construct(d, spec, None, eta, seed)
}

/// Construction for any norm, with the regime dispatched from `ρ` unless forced.
pub fn construct(
    d: &Dataset,
    spec: &RobustSpec,
    regime: Option<Regime>,
    eta: Option<f64>,
    seed: u64,
) -> Result<(Network, RegimeReport)> {
    if !spec.p.is_l2() {
        return construct_lp_in(d, spec, regime, eta, seed);
    }
    let regime = regime.unwrap_or_else(|| regime_for(d.n(), d.d(), spec.rho));
    construct_regime(d, regime, spec.rho, eta, seed)
}

/// Runs the named regime's construction (errors if `rho` is outside it).
pub fn construct_regime(d: &Dataset, regime: Regime, rho: f64, eta: Option<f64>, seed: u64) -> Result<(Network, RegimeReport)> {
    tracing::info!(%regime, rho, n = d.n(), d = d.d(), "constructing");
    match regime {
        Regime::Small => construct_small_rho(d, rho, seed),
        Regime::Moderate => {
            let eta = eta.ok_or_else(|| Error::Precondition("eta required in the moderate regime".into()))?;
            construct_moderate_rho(d, rho, eta, seed)
        }
        Regime::Large => construct_large_rho(d, rho, seed),
    }
}

/// `ln Vol(B_p(0, r))` in `d` dimensions.
pub fn ln_ball_volume(p: Norm, d: usize, r: f64) -> f64 {
    let df = d as f64;
    match p {
        Norm::Inf => df * (2.0 * r).ln(),
        Norm::P(q) => df * (2.0f64.ln() + ln_gamma(1.0 / q + 1.0) + r.ln()) - ln_gamma(df / q + 1.0),
    }
}

/// ℓp robust memorizer via the ℓ2 construction at `ρ′ = γ_p(d)·ρ`.
pub fn construct_lp(d: &Dataset, spec: &RobustSpec, eta: Option<f64>, seed: u64) -> Result<(Network, RegimeReport)> {
    construct_lp_in(d, spec, None, eta, seed)
}

fn construct_lp_in(
    d: &Dataset,
    spec: &RobustSpec,
    forced: Option<Regime>,
    eta: Option<f64>,
    seed: u64,
) -> Result<(Network, RegimeReport)> {
    let gamma = spec.p.gamma(d.d());
    let rho2 = gamma * spec.rho;
    if rho2 >= 1.0 {
        return Err(Error::Regime(format!(
            "rho * gamma_p(d) = {} * {gamma} = {rho2} >= 1: outside the lp range (need rho < 1/gamma_p(d) = {})",
            spec.rho,
            1.0 / gamma
        )));
    }
    let regime = forced.unwrap_or_else(|| regime_for(d.n(), d.d(), rho2));
    let eta2 = match (regime, eta) {
        (Regime::Moderate, Some(e)) => {
            // a bad event of mass η′ in the ℓ2 ball has mass ≤ η′·Vol(B₂)/Vol(B_p) in the ℓp ball
            let eps_p = separation(d, spec.p);
            let eps_2 = separation(d, Norm::L2);
            let ln_ratio = ln_ball_volume(spec.p, d.d(), spec.rho * eps_p) - ln_ball_volume(Norm::L2, d.d(), rho2 * eps_2);
            Some(e * ln_ratio.exp().min(1.0))
        }
        (_, e) => e,
    };
    let (net, mut rep) = construct_regime(d, regime, rho2, eta2, seed)?;
    rep.p = spec.p;
    rep.rho = spec.rho;
    rep.rho_l2 = rho2;
    rep.eta_requested = eta;
    if regime == Regime::Moderate {
        rep.notes.push(format!("l2 error target rescaled to {:e}", eta2.unwrap_or(0.0)));
    }
    Ok((net, rep))
}

// ------------------------------------------------------------------ quantization

/// How [`quantize_network`] picks the grid.
#[derive(Debug, Clone, PartialEq)]
pub enum QuantMode {
    /// Worst-case grid from the layer-wise error recursion.
    Analytic,
    /// Fewest fractional bits whose sampled deviation stays within ν. Samples are
    /// `points` if given, else `samples` uniform points of `B₂(0, R)`.
    Empirical { points: Option<Vec<Vec<f64>>>, samples: usize, seed: u64 },
}

fn max_deviation(a: &Network, b: &Network, pts: &[Vec<f64>]) -> f64 {
    let (mut s1, mut s2) = (Scratch::default(), Scratch::default());
    let mut worst: f64 = 0.0;
    for x in pts {
        let ya = a.eval_with(x, &mut s1).to_vec();
        let yb = b.eval_with(x, &mut s2);
        for (u, v) in ya.iter().zip(yb) {
            worst = worst.max((u - v).abs());
        }
    }
    worst
}

fn int_bits_for(net: &Network) -> u32 {
    let m = net.max_abs_param();
    if m < 1.0 {
        1
    } else {
        m.log2().floor() as u32 + 2
    }
}

/// Snaps all parameters to a dyadic grid; returns the network and its bit count.
pub fn quantize_network(net: &Network, nu: f64, radius: f64, mode: &QuantMode) -> Result<(Network, u32)> {
    if !(nu > 0.0 && nu < 1.0) || !(radius >= 1.0) {
        return invalid(format!("need nu in (0,1) and R >= 1, got {nu}, {radius}"));
    }
    let int_bits = int_bits_for(net);
    match mode {
        QuantMode::Analytic => {
            let r = net.resources();
            let dd = (r.width.max(net.input_dim()).max(1)) as f64;
            let l = r.depth as f64;
            let m = net.max_abs_param().max(1.0);
            // S = (DM)^{L−1}(DML+R), Q = DL(S+1)(2DM)^{L−1}, ζ = ν/(DS + 2DMQ + D), in log₂
            let lg = |x: f64| x.log2();
            let ls = (l - 1.0) * lg(dd * m) + lg(dd * m * l + radius);
            let lq = lg(dd * l) + (ls.exp2() + 1.0).log2().max(ls) + (l - 1.0) * lg(2.0 * dd * m);
            let terms = [lg(dd) + ls, lg(2.0 * dd * m) + lq, lg(dd)];
            let mx = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lsum = mx + terms.iter().map(|t| (t - mx).exp2()).sum::<f64>().log2();
            let lzeta = lg(nu) - lsum;
            let frac = (-lzeta).ceil().max(0.0);
            if frac > 1000.0 {
                return Err(Error::Quantization(format!(
                    "analytic grid needs 2^-{frac} resolution, below representable dyadics; use empirical mode"
                )));
            }
            let fmt = FixedPointFormat::new(frac as u32, int_bits)?;
            let q = snap_network(net, fmt)?;
            let bits = (lg(m) - lzeta).ceil() as u32;
            Ok((q.with_bit_complexity(Some(bits)), bits))
        }
        QuantMode::Empirical { points, samples, seed } => {
            let pts: Vec<Vec<f64>> = match points {
                Some(p) => p.clone(),
                None => {
                    let mut s = crate::dataset::BallSampler::new(net.input_dim(), Norm::L2, *seed);
                    let c = vec![0.0; net.input_dim()];
                    (0..*samples).map(|_| s.sample(&c, radius)).collect()
                }
            };
            let dev = |frac: u32| -> Result<(Network, f64)> {
                let q = snap_network(net, FixedPointFormat::new(frac, int_bits)?)?;
                let e = max_deviation(net, &q, &pts);
                Ok((q, e))
            };
            let (mut lo, mut hi) = (0u32, 64u32);
            let (mut best, e_hi) = dev(hi)?;
            if e_hi > nu {
                return Err(Error::Quantization(format!("64 fractional bits still deviate by {e_hi}")));
            }
            while lo < hi {
                let mid = (lo + hi) / 2;
                let (q, e) = dev(mid)?;
                if e <= nu {
                    hi = mid;
                    best = q;
                } else {
                    lo = mid + 1;
                }
            }
            let bits = hi + int_bits;
            tracing::debug!(frac = hi, int_bits, samples = pts.len(), "empirical grid");
            Ok((best.with_bit_complexity(Some(bits)), bits))
        }
    }
}

/// Appends `y ↦ ⌊y + ½⌋` (floor gadget with γ = 1/16), restoring integer labels
/// in `1..=classes` from outputs within ±0.4 of them.
pub fn with_cleanup_head(net: &Network, classes: u32) -> Result<Network> {
    let n = bit_len(classes as u64 + 1);
    let mut nb = NetBuilder::new(1);
    let out = emit_floors(&mut nb, &[Row::unit(0).plus_const(0.5)], n, 1.0 / 16.0, &mut [])?;
    let head = nb.finish(out)?;
    let bits = net.bit_complexity();
    Ok(compose_serial(net, &head, Junction::Relu)?.with_bit_complexity(bits))
}
