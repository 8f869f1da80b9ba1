//! Labeled point sets, separation constants, robustness balls and the
//! hard instances used by the lower bounds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use crate::error::{invalid, Error, Result};

/// Norm index `p ∈ [1, ∞]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Norm {
    P(f64),
    Inf,
}

impl Norm {
    pub const L2: Norm = Norm::P(2.0);

    pub fn new(p: f64) -> Result<Norm> {
        if p.is_infinite() && p > 0.0 {
            Ok(Norm::Inf)
        } else if p >= 1.0 {
            Ok(Norm::P(p))
        } else {
            invalid(format!("norm index must lie in [1, inf], got {p}"))
        }
    }

    pub fn validate(self) -> Result<Norm> {
        match self {
            Norm::Inf => Ok(self),
            Norm::P(p) => Norm::new(p),
        }
    }

    /// `1/p`, zero for ∞.
    pub fn inv(self) -> f64 {
        match self {
            Norm::Inf => 0.0,
            Norm::P(p) => 1.0 / p,
        }
    }

    pub fn is_l2(self) -> bool {
        self == Norm::P(2.0)
    }

    pub fn norm(self, v: &[f64]) -> f64 {
        match self {
            Norm::Inf => v.iter().fold(0.0f64, |m, x| m.max(x.abs())),
            Norm::P(p) if p == 2.0 => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
            Norm::P(p) if p == 1.0 => v.iter().map(|x| x.abs()).sum(),
            Norm::P(p) => v.iter().map(|x| x.abs().powf(p)).sum::<f64>().powf(1.0 / p),
        }
    }

    pub fn dist(self, a: &[f64], b: &[f64]) -> f64 {
        let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        self.norm(&diff)
    }

    /// `d^{|1/2 − 1/p|}`: the factor turning ℓp robustness into ℓ2 robustness.
    pub fn gamma(self, d: usize) -> f64 {
        (d as f64).powf((0.5 - self.inv()).abs())
    }
}

impl fmt::Display for Norm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Norm::Inf => write!(f, "inf"),
            Norm::P(p) => write!(f, "{p}"),
        }
    }
}

impl FromStr for Norm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Norm> {
        let t = s.trim().to_ascii_lowercase();
        if t == "inf" || t == "infinity" {
            return Ok(Norm::Inf);
        }
        let p: f64 = t.parse().map_err(|_| Error::Invalid(format!("cannot parse norm index {s:?}")))?;
        Norm::new(p)
    }
}

/// `N` distinct points in `R^d` with labels in `1..=C`, every class present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    points: Vec<Vec<f64>>,
    labels: Vec<u32>,
    d: usize,
    c: u32,
}

impl Dataset {
    pub fn new(points: Vec<Vec<f64>>, labels: Vec<u32>) -> Result<Dataset> {
        if points.len() != labels.len() {
            return Err(Error::Dataset(format!("{} points but {} labels", points.len(), labels.len())));
        }
        let n = points.len();
        let d = points.first().map(|p| p.len()).unwrap_or(0);
        if d == 0 {
            return Err(Error::Dataset("empty dataset or zero dimension".into()));
        }
        for (i, p) in points.iter().enumerate() {
            if p.len() != d {
                return Err(Error::Dataset(format!("row {i} has {} coordinates, expected {d}", p.len())));
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::Dataset(format!("row {i} has a non-finite coordinate")));
            }
        }
        if let Some(i) = labels.iter().position(|&l| l == 0) {
            return Err(Error::Dataset(format!("row {i}: labels must be positive integers")));
        }
        let c = *labels.iter().max().unwrap();
        if c < 2 {
            return Err(Error::Dataset("need at least two classes".into()));
        }
        if (n as u32) < c {
            return Err(Error::Dataset(format!("N = {n} < C = {c}")));
        }
        let mut seen = vec![false; c as usize + 1];
        for &l in &labels {
            seen[l as usize] = true;
        }
        if let Some(k) = (1..=c as usize).find(|&k| !seen[k]) {
            return Err(Error::Dataset(format!("class {k} has no point")));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| points[a].partial_cmp(&points[b]).unwrap());
        for w in order.windows(2) {
            if points[w[0]] == points[w[1]] {
                return Err(Error::Dataset(format!("rows {} and {} coincide", w[0], w[1])));
            }
        }
        Ok(Dataset { points, labels, d, c })
    }

    pub fn n(&self) -> usize {
        self.points.len()
    }
    pub fn d(&self) -> usize {
        self.d
    }
    pub fn classes(&self) -> u32 {
        self.c
    }
    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }
    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i]
    }
    pub fn labels(&self) -> &[u32] {
        &self.labels
    }
    pub fn label(&self, i: usize) -> u32 {
        self.labels[i]
    }

    /// Same labels, points replaced (used after linear maps).
    pub fn with_points(&self, points: Vec<Vec<f64>>) -> Result<Dataset> {
        Dataset::new(points, self.labels.clone())
    }

    /// Largest ℓ2 norm of a data point.
    pub fn max_norm(&self) -> f64 {
        self.points.iter().map(|p| Norm::L2.norm(p)).fold(0.0, f64::max)
    }

    // ---- CSV ----

    pub fn from_csv_reader<R: Read>(r: R) -> Result<Dataset> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(r);
        let headers = rdr
            .headers()
            .map_err(|e| Error::Csv { row: 0, col: 0, msg: e.to_string() })?
            .clone();
        let cols = headers.len();
        if cols < 2 {
            return Err(Error::Csv { row: 0, col: 0, msg: "need at least one coordinate and a label".into() });
        }
        for (j, h) in headers.iter().enumerate() {
            let want = if j + 1 == cols { "label".to_string() } else { format!("x{}", j + 1) };
            if h != want {
                return Err(Error::Csv { row: 0, col: j + 1, msg: format!("header {h:?}, expected {want:?}") });
            }
        }
        let mut points = Vec::new();
        let mut labels = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let row = i + 2; // 1-based, after the header
            let rec = rec.map_err(|e| Error::Csv { row, col: 0, msg: e.to_string() })?;
            if rec.len() != cols {
                return Err(Error::Csv { row, col: rec.len().min(cols), msg: format!("{} fields, expected {cols}", rec.len()) });
            }
            let mut p = Vec::with_capacity(cols - 1);
            for j in 0..cols - 1 {
                let v: f64 = rec[j]
                    .parse()
                    .map_err(|_| Error::Csv { row, col: j + 1, msg: format!("not a number: {:?}", &rec[j]) })?;
                if !v.is_finite() {
                    return Err(Error::Csv { row, col: j + 1, msg: "non-finite value".into() });
                }
                p.push(v);
            }
            let l: u32 = rec[cols - 1].parse().ok().filter(|&l| l >= 1).ok_or_else(|| Error::Csv {
                row,
                col: cols,
                msg: format!("label must be a positive integer, got {:?}", &rec[cols - 1]),
            })?;
            points.push(p);
            labels.push(l);
        }
        Dataset::new(points, labels)
    }

    pub fn load_csv(path: &std::path::Path) -> Result<Dataset> {
        Dataset::from_csv_reader(std::fs::File::open(path)?)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (1..=self.d).map(|j| format!("x{j}")).collect();
        header.push("label".into());
        wr.write_record(&header).map_err(|e| Error::Dataset(e.to_string()))?;
        for (p, l) in self.points.iter().zip(&self.labels) {
            let mut rec: Vec<String> = p.iter().map(|v| format!("{v:?}")).collect();
            rec.push(l.to_string());
            wr.write_record(&rec).map_err(|e| Error::Dataset(e.to_string()))?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Robustness requirement `(p, ρ)` attached to a dataset; `mu = ρ · ε_{D,p}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustSpec {
    pub p: Norm,
    pub rho: f64,
    pub mu: f64,
}

impl RobustSpec {
    pub fn new(d: &Dataset, p: Norm, rho: f64) -> Result<RobustSpec> {
        let p = p.validate()?;
        if !(rho > 0.0 && rho < 1.0) {
            return invalid(format!("robustness ratio must lie in (0,1), got {rho}"));
        }
        Ok(RobustSpec { p, rho, mu: rho * separation(d, p) })
    }
}

/// Half the smallest `p`-distance between differently labeled points.
pub fn separation(d: &Dataset, p: Norm) -> f64 {
    let mut best = f64::INFINITY;
    let pts = d.points();
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            if d.label(i) != d.label(j) {
                best = best.min(p.dist(&pts[i], &pts[j]));
            }
        }
    }
    best / 2.0
}

/// `k` i.i.d. points uniform in the open ball `B_p(center, radius)`.
pub fn sample_ball(center: &[f64], radius: f64, p: Norm, seed: u64, k: usize) -> Result<Vec<Vec<f64>>> {
    let p = p.validate()?;
    if !(radius > 0.0) {
        return invalid(format!("radius must be positive, got {radius}"));
    }
    let mut s = BallSampler::new(center.len(), p, seed);
    Ok((0..k).map(|_| s.sample(center, radius)).collect())
}

/// Stateful uniform sampler for unit-ball directions; owns its RNG.
pub struct BallSampler {
    d: usize,
    p: Norm,
    rng: ChaCha8Rng,
    gamma: Option<Gamma<f64>>,
}

impl BallSampler {
    pub fn new(d: usize, p: Norm, seed: u64) -> Self {
        let gamma = match p {
            Norm::P(q) if q != 2.0 => Some(Gamma::new(1.0 / q, 1.0).expect("valid gamma shape")),
            _ => None,
        };
        BallSampler { d, p, rng: ChaCha8Rng::seed_from_u64(seed), gamma }
    }

    /// Uniform point of the open unit ball.
    pub fn unit(&mut self) -> Vec<f64> {
        loop {
            let v = match self.p {
                Norm::Inf => (0..self.d).map(|_| self.rng.random_range(-1.0..1.0)).collect::<Vec<f64>>(),
                Norm::P(q) if q == 2.0 => {
                    let g: Vec<f64> = (0..self.d).map(|_| StandardNormal.sample(&mut self.rng)).collect();
                    let n = Norm::L2.norm(&g);
                    if n == 0.0 {
                        continue;
                    }
                    let r = self.rng.random::<f64>().powf(1.0 / self.d as f64);
                    g.iter().map(|x| x / n * r).collect()
                }
                Norm::P(q) => {
                    let gam = self.gamma.as_ref().unwrap();
                    let g: Vec<f64> = (0..self.d)
                        .map(|_| {
                            let m: f64 = gam.sample(&mut self.rng).powf(1.0 / q);
                            if self.rng.random::<bool>() { m } else { -m }
                        })
                        .collect();
                    let w: f64 = Exp1.sample(&mut self.rng);
                    let s = (g.iter().map(|x| x.abs().powf(q)).sum::<f64>() + w).powf(1.0 / q);
                    g.iter().map(|x| x / s).collect()
                }
            };
            if self.p.norm(&v) < 1.0 {
                return v;
            }
        }
    }

    pub fn sample(&mut self, center: &[f64], radius: f64) -> Vec<f64> {
        let u = self.unit();
        let mut out: Vec<f64> = center.iter().zip(&u).map(|(c, x)| c + radius * x).collect();
        // rounding can push a point onto the sphere; pull it back inside
        let mut t = 1.0;
        while self.p.dist(&out, center) >= radius {
            t *= 0.5;
            out = center.iter().zip(&u).map(|(c, x)| c + radius * t * x).collect();
        }
        out
    }
}

/// `c · D`.
pub fn scale(d: &Dataset, c: f64) -> Result<Dataset> {
    if !(c > 0.0) || !c.is_finite() {
        return invalid(format!("scale factor must be positive, got {c}"));
    }
    d.with_points(d.points().iter().map(|p| p.iter().map(|v| v * c).collect()).collect())
}

fn unit_vec(d: usize, j: usize, s: f64) -> Vec<f64> {
    let mut v = vec![0.0; d];
    v[j] = s;
    v
}

/// Basis vectors labeled 2 against the origin labeled 1; for `n − 1 > d`
/// the extra points `k·e₁` (k = 2..n−d) keep the separation at 1/2.
pub fn gen_width_lb_dataset(n: usize, d: usize) -> Result<Dataset> {
    if n < 3 || d < 2 {
        return invalid(format!("need n >= 3 and d >= 2, got n={n}, d={d}"));
    }
    let mut pts = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for j in 0..(n - 1).min(d) {
        pts.push(unit_vec(d, j, 1.0));
        labels.push(2);
    }
    if n - 1 > d {
        for k in 2..=(n - d) {
            pts.push(unit_vec(d, 0, k as f64));
            labels.push(2);
        }
    }
    pts.push(vec![0.0; d]);
    labels.push(1);
    Dataset::new(pts, labels)
}

/// Shattering construction: for each row `l` of the ±1 `labeling`, the pair
/// `c_l ± (Σ_{J+} e_j − Σ_{J−} e_j)` with `c_l = 2d²(l−1)e₁`, labeled 2 / 1.
/// Returns the shattered point set `{c_l + e_j}` alongside the dataset.
pub fn gen_shattering_instance(labeling: &[Vec<i8>], d: usize) -> Result<(Vec<Vec<f64>>, Dataset)> {
    if d < 2 {
        return invalid("need d >= 2");
    }
    let k = labeling.first().map(|r| r.len()).unwrap_or(0);
    if k == 0 || labeling.iter().any(|r| r.len() != k) {
        return invalid("labeling must be a non-empty rectangular matrix");
    }
    if k > d {
        return invalid(format!("k = {k} exceeds d = {d}"));
    }
    if labeling.iter().flatten().any(|&s| s != 1 && s != -1) {
        return invalid("labeling entries must be ±1");
    }
    let mut x = Vec::new();
    let mut pts = Vec::new();
    let mut labels = Vec::new();
    for (l, row) in labeling.iter().enumerate() {
        let mut c = vec![0.0; d];
        c[0] = 2.0 * (d * d) as f64 * l as f64;
        for j in 0..k {
            let mut p = c.clone();
            p[j] += 1.0;
            x.push(p);
        }
        let mut a = c.clone();
        let mut b = c.clone();
        for (j, &s) in row.iter().enumerate() {
            a[j] += s as f64;
            b[j] -= s as f64;
        }
        pts.push(a);
        labels.push(2);
        pts.push(b);
        labels.push(1);
    }
    Ok((x, Dataset::new(pts, labels)?))
}

/// Gaussian points with labels drawn so that every class in `1..=c` appears.
pub fn gen_random(n: usize, d: usize, c: u32, seed: u64) -> Result<Dataset> {
    if (c as usize) > n || c < 2 {
        return invalid(format!("need 2 <= C <= N, got C={c}, N={n}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| StandardNormal.sample(&mut rng)).collect()).collect();
    let mut labels: Vec<u32> = (0..n).map(|i| if i < c as usize { i as u32 + 1 } else { rng.random_range(1..=c) }).collect();
    // shuffle so the guaranteed labels are not always the first rows
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        labels.swap(i, j);
    }
    Dataset::new(pts, labels)
}
