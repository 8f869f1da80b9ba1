//! Exact ReLU building blocks.
//!
//! Depth is counted in affine maps (ReLU layers + 1), matching
//! [`ResourceProfile::depth`](crate::net_ir::ResourceProfile).
//!
//! Several gadgets are bit-exact in binary64 on their guaranteed regions:
//! the floor gadget for dyadic `γ`, and the bit extractor / integer memorizer
//! on integer inputs. That relies on evaluation summing each row in column
//! order, so units are laid out deliberately below.

use crate::error::{invalid, Error, Result};
use crate::net_ir::{compose_serial, minimal_fixed_point, Junction, NetBuilder, Network, Row};

/// Rows of one hidden layer under construction; `unit` returns the new
/// unit's expression in the coordinates of the *next* layer.
#[derive(Default)]
pub(crate) struct Layering {
    pub rows: Vec<Row>,
}

impl Layering {
    pub fn new() -> Self {
        Layering { rows: Vec::new() }
    }
    pub fn unit(&mut self, r: Row) -> Row {
        self.rows.push(r);
        Row::unit(self.rows.len() - 1)
    }
    /// Passes a nonnegative quantity through the ReLU; constants need no unit.
    pub fn carry(&mut self, e: &Row) -> Row {
        if e.is_const() {
            e.clone()
        } else {
            self.unit(e.clone())
        }
    }
    /// New layer that first passes every `extra` wire through.
    pub fn carrying(extra: &mut [Row]) -> Self {
        let mut l = Layering::new();
        for e in extra.iter_mut() {
            *e = l.carry(e);
        }
        l
    }
    pub fn push(self, nb: &mut NetBuilder) -> Result<()> {
        nb.relu(self.rows).map(|_| ())
    }
}

// ---------------------------------------------------------------- bit strings

/// Fixed-length bit string; segments are indexed from the most significant side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BitString {
    value: u64,
    len: u32,
}

/// Number of bits needed to write `v` (at least 1).
pub fn bit_len(v: u64) -> u32 {
    (64 - v.leading_zeros()).max(1)
}

impl BitString {
    pub fn new(value: u64, len: u32) -> Result<BitString> {
        if len == 0 || len > 64 || (len < 64 && value >> len != 0) {
            return invalid(format!("{value} does not fit in {len} bits"));
        }
        Ok(BitString { value, len })
    }
    pub fn value(&self) -> u64 {
        self.value
    }
    pub fn len(&self) -> u32 {
        self.len
    }
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
    /// `BIN_{i:j}`: bits `i..=j`, 1-indexed from the most significant bit.
    pub fn bin(&self, i: u32, j: u32) -> Result<u64> {
        if i == 0 || i > j || j > self.len {
            return invalid(format!("bit range {i}:{j} outside 1:{}", self.len));
        }
        let width = j - i + 1;
        let shifted = self.value >> (self.len - j);
        Ok(if width == 64 { shifted } else { shifted & ((1u64 << width) - 1) })
    }
    /// Segment `s` (0-indexed) of width `b`: bits `s·b+1 ..= (s+1)·b`.
    pub fn segment(&self, s: u32, b: u32) -> Result<u64> {
        self.bin(s * b + 1, (s + 1) * b)
    }
    /// Concatenation of `b`-bit segments, first segment most significant.
    pub fn concat(segments: &[u64], b: u32) -> Result<BitString> {
        let len = b * segments.len() as u32;
        if len == 0 || len > 64 {
            return invalid(format!("{} segments of {b} bits do not fit 64 bits", segments.len()));
        }
        let mut v = 0u64;
        for &s in segments {
            if b < 64 && s >> b != 0 {
                return invalid(format!("segment {s} wider than {b} bits"));
            }
            v = if b == 64 { s } else { (v << b) | s };
        }
        BitString::new(v, len)
    }
}

// ---------------------------------------------------------------- bump / triangle

/// Trapezoid indicator: 1 on `[m, n−η]`, 0 outside `(m−η, n)`, linear in between.
/// Width 2, two ReLU layers (depth 3).
pub fn bump(m: u64, n: u64, eta: f64) -> Result<Network> {
    if m >= n {
        return invalid(format!("bump needs m < n, got m={m}, n={n}"));
    }
    bump_real(m as f64, n as f64, eta)
}

pub(crate) fn bump_real(m: f64, n: f64, eta: f64) -> Result<Network> {
    if !(eta > 0.0 && eta < 1.0) {
        return invalid(format!("eta must lie in (0,1), got {eta}"));
    }
    let mut nb = NetBuilder::new(1);
    let x = Row::unit(0);
    let (u1, u2) = bump_first(&x, m, n, eta);
    nb.relu(vec![u1, u2])?;
    nb.relu(vec![Row::new(1.0).t(0, -1.0), Row::new(1.0).t(1, -1.0)])?;
    nb.finish(vec![Row::new(-1.0).t(0, 1.0).t(1, 1.0)]).map(declare_bits)
}

/// Inner ReLU arguments of the bump for `x` (any affine expression).
fn bump_first(x: &Row, m: f64, n: f64, eta: f64) -> (Row, Row) {
    let u1 = x.scaled(-1.0 / eta).plus_const(m / eta);
    let u2 = x.scaled(1.0 / eta).plus_const(-(n - eta) / eta);
    (u1, u2)
}

/// Tent map `φ(z) = σ(σ(2z) − σ(4z − 2))`.
pub fn triangle() -> Network {
    let mut nb = NetBuilder::new(1);
    nb.relu(vec![Row::new(0.0).t(0, 2.0), Row::new(-2.0).t(0, 4.0)]).expect("shape");
    nb.relu(vec![Row::new(0.0).t(0, 1.0).t(1, -1.0)]).expect("shape");
    nb.finish(vec![Row::unit(0)]).expect("shape")
}

/// `φ^{(s)}` as one network.
pub fn triangle_iterate(s: usize) -> Result<Network> {
    if s == 0 {
        return invalid("iterate count must be >= 1");
    }
    let t = triangle();
    let mut acc = t.clone();
    for _ in 1..s {
        acc = compose_serial(&acc, &t, Junction::Relu)?;
    }
    Ok(acc)
}

// ---------------------------------------------------------------- floor / flatten

/// Appends the ReLU layers of `len(xs)` parallel floor gadgets and returns the
/// expressions of `⌊x_j⌋` over the last layer.
///
/// Per coordinate, layer `k` holds `A = σ(v−½)`, `B = σ(v−½−γ_k)`, `V = σ(v)` and
/// the running integer part; `v_0 = x/2ⁿ`, `v_{k+1} = 2v_k − b_k` with
/// `b_k = (A−B)/γ_k`, `γ_k = γ/2^{n−k}`. The integer part accumulates
/// `Σ 2^{n−1−k} b_k`, so on `[0, 2ⁿ)` with `frac(x) ≥ γ` every `b_k` is the
/// exact binary digit and the output is exactly `⌊x⌋`.
pub(crate) fn emit_floors(nb: &mut NetBuilder, xs: &[Row], n: u32, gamma: f64, extra: &mut [Row]) -> Result<Vec<Row>> {
    if n == 0 {
        return invalid("floor gadget needs n >= 1");
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return invalid(format!("gamma must lie in (0,1), got {gamma}"));
    }
    let scale = (-(n as f64)).exp2();
    let mut v: Vec<Row> = xs.iter().map(|x| x.scaled(scale)).collect();
    let mut acc: Vec<Row> = vec![Row::new(0.0); xs.len()];
    let mut out = Vec::new();
    for k in 0..n {
        let gk = gamma * ((k as f64) - (n as f64)).exp2();
        let w = ((n - 1 - k) as f64).exp2();
        let mut l = Layering::carrying(extra);
        let mut units = Vec::with_capacity(xs.len());
        for j in 0..xs.len() {
            let a = l.unit(v[j].plus_const(-0.5));
            let b = l.unit(v[j].plus_const(-(0.5 + gk)));
            let vv = l.unit(v[j].clone());
            let s = l.carry(&acc[j]);
            units.push((a, b, vv, s));
        }
        l.push(nb)?;
        out.clear();
        for (j, (a, b, vv, s)) in units.into_iter().enumerate() {
            let bit = a.scaled(1.0 / gk).plus(&b.scaled(-1.0 / gk));
            v[j] = a.scaled(-1.0 / gk).plus(&b.scaled(1.0 / gk)).plus(&vv.scaled(2.0));
            acc[j] = bit.scaled(w).plus(&s);
            out.push(acc[j].clone());
        }
    }
    Ok(out)
}

/// `⌊x⌋` on `[0, 2ⁿ)` away from the `γ`-band above each integer.
/// Width 4 (3 when n = 1), n ReLU layers.
pub fn floor_gadget(n: u32, gamma: f64) -> Result<Network> {
    let mut nb = NetBuilder::new(1);
    let out = emit_floors(&mut nb, &[Row::unit(0)], n, gamma, &mut [])?;
    nb.finish(out).map(declare_bits)
}

/// Grid index `Σ_j coeffs[j]·⌊z_j⌋` with `n` floor layers per coordinate.
pub fn flatten_with_coeffs(coeffs: &[u64], n: u32, gamma: f64) -> Result<Network> {
    if coeffs.is_empty() {
        return invalid("flatten needs at least one coordinate");
    }
    let m = coeffs.len();
    let mut nb = NetBuilder::new(m);
    let xs: Vec<Row> = (0..m).map(Row::unit).collect();
    let fl = emit_floors(&mut nb, &xs, n, gamma, &mut [])?;
    let mut out = Row::new(0.0);
    for (f, &c) in fl.iter().zip(coeffs) {
        out = out.plus(&f.scaled(c as f64));
    }
    nb.finish(vec![out]).map(declare_bits)
}

/// Floor layers needed for coordinates in `[0, R)`.
pub fn floor_bits_for(r: u64) -> u32 {
    if r <= 2 {
        1
    } else {
        64 - (r - 1).leading_zeros()
    }
}

/// `Σ_j R^{m−j}⌊z_j⌋` for `z ∈ [0,R)^m` away from the γ-bands.
pub fn flatten_gadget(m: usize, r: u64, gamma: f64) -> Result<Network> {
    if m == 0 || r < 2 {
        return invalid(format!("flatten needs m >= 1 and R >= 2, got m={m}, R={r}"));
    }
    let mut coeffs = Vec::with_capacity(m);
    let mut p: u64 = 1;
    for _ in 0..m {
        coeffs.push(p);
        p = p.checked_mul(r).ok_or_else(|| Error::Invalid(format!("R^m overflows for R={r}, m={m}")))?;
    }
    coeffs.reverse();
    flatten_with_coeffs(&coeffs, floor_bits_for(r), gamma)
}

// ---------------------------------------------------------------- interval memorizer

/// Group boundaries `(first, last)` of consecutive keys, `n2` per group;
/// groups without any real key are `None`.
fn group_ranges(ms: &[u64], n1: usize, n2: usize) -> Vec<Option<(u64, u64)>> {
    (0..n1)
        .map(|j| {
            let lo = j * n2;
            if lo >= ms.len() {
                None
            } else {
                let hi = ((j + 1) * n2).min(ms.len()) - 1;
                Some((ms[lo], ms[hi]))
            }
        })
        .collect()
}

/// Emits the interval blocks. `x` is the (arbitrary-sign) input expression;
/// the carried value is `σ(x + shift − x0)` with `x0 = m_1 − 1`, which only
/// clamps inputs where every bump is already zero. Returns `(c, channels, x0)`.
pub(crate) fn emit_interval(
    nb: &mut NetBuilder,
    x: &Row,
    ms: &[u64],
    n1: usize,
    n2: usize,
    values: &[Vec<f64>],
    eta: f64,
    shift: f64,
    extra: &mut [Row],
) -> Result<(Row, Vec<Row>, f64)> {
    if ms.is_empty() {
        return invalid("no keys");
    }
    if ms.windows(2).any(|w| w[0] >= w[1]) {
        return invalid("keys must be strictly increasing");
    }
    if n1 * n2 < ms.len() {
        return invalid(format!("N1·N2 = {} < {} keys", n1 * n2, ms.len()));
    }
    if !(eta > 0.0 && eta < 1.0) {
        return invalid(format!("eta must lie in (0,1), got {eta}"));
    }
    for v in values {
        if v.len() != n1 {
            return invalid("one value per group required");
        }
        if v.iter().any(|w| *w < 0.0) {
            return invalid("group values must be nonnegative");
        }
    }
    let x0 = ms[0] as f64 - 1.0;
    let mut l = Layering::carrying(extra);
    let mut c = l.unit(x.plus_const(shift - x0));
    l.push(nb)?;
    let mut ys: Vec<Row> = vec![Row::new(0.0); values.len()];
    for (j, g) in group_ranges(ms, n1, n2).into_iter().enumerate() {
        let (a, b) = g.map(|(a, b)| (a as f64, b as f64)).unwrap_or((ms[ms.len() - 1] as f64, ms[ms.len() - 1] as f64));
        let xh = c.plus_const(x0);
        // block layer 1
        let mut l = Layering::carrying(extra);
        let c1 = l.unit(c.clone());
        let y1: Vec<Row> = ys.iter().map(|y| l.carry(y)).collect();
        let (u1, u2) = bump_first(&xh, a, b + 1.0, eta);
        let u1 = l.unit(u1);
        let u2 = l.unit(u2);
        l.push(nb)?;
        // block layer 2
        let mut l = Layering::carrying(extra);
        let c2 = l.unit(c1);
        let y2: Vec<Row> = y1.iter().map(|y| l.carry(y)).collect();
        let v1 = l.unit(Row::new(1.0).plus(&u1.scaled(-1.0)));
        let v2 = l.unit(Row::new(1.0).plus(&u2.scaled(-1.0)));
        l.push(nb)?;
        // block layer 3
        let ind = v1.plus(&v2).plus_const(-1.0);
        let mut l = Layering::carrying(extra);
        c = l.unit(c2);
        ys = y2
            .iter()
            .zip(values)
            .map(|(y, vals)| {
                let w = if g.is_some() { vals[j] } else { 0.0 };
                l.unit(y.plus(&ind.scaled(w)))
            })
            .collect();
        l.push(nb)?;
    }
    Ok((c, ys, x0))
}

/// `F(x) = w_{⌈i/N2⌉}` on `[m_i, m_i+1−η]`, 0 away from the group ranges.
/// Width 4, depth `3·N1 + 2`. Groups holding no key contribute 0.
pub fn interval_memorizer(sorted_ms: &[u64], n1: usize, n2: usize, w: &[u64], eta: f64) -> Result<Network> {
    let mut nb = NetBuilder::new(1);
    let vals = vec![w.iter().map(|&v| v as f64).collect::<Vec<_>>()];
    let (_, ys, _) = emit_interval(&mut nb, &Row::unit(0), sorted_ms, n1, n2, &vals, eta, 0.0, &mut [])?;
    nb.finish(vec![ys[0].clone()]).map(declare_bits)
}

// ---------------------------------------------------------------- bit extractor

/// Shape of a bit-extraction network: `n` segments of `b_u` key bits and
/// `b_w` value bits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BitExtractorShape {
    pub n: u32,
    pub b_u: u32,
    pub b_w: u32,
    pub eta: f64,
}

/// Largest total bit count a packed word may use so that the tent-map
/// encodings stay exact in binary64.
pub const MAX_PACKED_BITS: u32 = 51;

impl BitExtractorShape {
    pub fn depth(&self) -> usize {
        (3 * self.n * self.b_u.max(self.b_w) + 2 * self.n + 2) as usize
    }
    fn check(&self) -> Result<()> {
        if self.n == 0 || self.b_u == 0 || self.b_w == 0 {
            return invalid("bit extractor needs n, b_u, b_w >= 1");
        }
        if self.n * self.b_u > MAX_PACKED_BITS || self.n * self.b_w > MAX_PACKED_BITS {
            return invalid(format!(
                "{} segments of {} bits exceed the {MAX_PACKED_BITS}-bit exact range",
                self.n,
                self.b_u.max(self.b_w)
            ));
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return invalid("eta must lie in (0,1)");
        }
        Ok(())
    }
}

struct Stream {
    a: Row,
    ap: Row,
    acc: Row,
    total: u32,
    step: u32,
}

impl Stream {
    fn new(word: &Row, total: u32) -> Stream {
        let s = (-(total as f64)).exp2();
        Stream {
            a: word.scaled(s).plus_const((-(total as f64) - 1.0).exp2()),
            ap: word.scaled(s).plus_const((-(total as f64) - 2.0).exp2()),
            acc: Row::new(0.0),
            total,
            step: 0,
        }
    }
    fn carry_all(&mut self, l: &mut Layering) {
        self.a = l.carry(&self.a);
        self.ap = l.carry(&self.ap);
        self.acc = l.carry(&self.acc);
    }
}

/// Appends the extractor to `nb`; `x` must be nonnegative with the actual
/// input equal to `x + x_offset`. Returns the output expression.
pub(crate) fn emit_bit_extractor(
    nb: &mut NetBuilder,
    x: &Row,
    w: &Row,
    u: &Row,
    shape: BitExtractorShape,
    x_offset: f64,
    extra: &mut [Row],
) -> Result<Row> {
    shape.check()?;
    let BitExtractorShape { n, b_u, b_w, eta } = shape;
    let mut xs = x.clone();
    let mut y = Row::new(0.0);
    let mut gate: Option<Row> = None;
    let mut su = Stream::new(u, n * b_u);
    let mut sw = Stream::new(w, n * b_w);
    let top = (b_w as f64 + 1.0).exp2();
    for seg in 0..n {
        for slot in 0..b_u.max(b_w) {
            let act = [slot < b_u, slot < b_w];
            // layer 1: doubling ramps of both encodings
            let mut l = Layering::carrying(extra);
            xs = l.carry(&xs);
            y = l.carry(&y);
            if let Some(g) = gate.take() {
                let gu = l.unit(g);
                y = y.plus(&gu);
            }
            let mut ramps: [Option<(Row, Row, Row, Row)>; 2] = [None, None];
            for (k, s) in [&mut su, &mut sw].into_iter().enumerate() {
                if act[k] {
                    let p1 = l.unit(s.a.scaled(2.0));
                    let p2 = l.unit(s.a.scaled(4.0).plus_const(-2.0));
                    let q1 = l.unit(s.ap.scaled(2.0));
                    let q2 = l.unit(s.ap.scaled(4.0).plus_const(-2.0));
                    s.acc = l.carry(&s.acc);
                    ramps[k] = Some((p1, p2, q1, q2));
                } else {
                    s.carry_all(&mut l);
                }
            }
            l.push(nb)?;
            // layer 2: tent values
            let mut l = Layering::carrying(extra);
            xs = l.carry(&xs);
            y = l.carry(&y);
            for (k, s) in [&mut su, &mut sw].into_iter().enumerate() {
                if let Some((p1, p2, q1, q2)) = ramps[k].take() {
                    s.a = l.unit(p1.plus(&p2.scaled(-1.0)));
                    s.ap = l.unit(q1.plus(&q2.scaled(-1.0)));
                    s.acc = l.carry(&s.acc);
                } else {
                    s.carry_all(&mut l);
                }
            }
            l.push(nb)?;
            // layer 3: read the bit from the orientation and accumulate
            let mut l = Layering::carrying(extra);
            xs = l.carry(&xs);
            y = l.carry(&y);
            for (k, s) in [&mut su, &mut sw].into_iter().enumerate() {
                if act[k] {
                    s.step += 1;
                    let delta = (s.step as f64 - s.total as f64 - 2.0).exp2();
                    let bit = s.a.scaled(-0.5 / delta).plus(&s.ap.scaled(0.5 / delta)).plus_const(0.5);
                    let new_acc = bit.plus(&s.acc.scaled(2.0));
                    s.a = l.carry(&s.a);
                    s.ap = l.carry(&s.ap);
                    s.acc = l.unit(new_acc);
                } else {
                    s.carry_all(&mut l);
                }
            }
            l.push(nb)?;
        }
        let last = seg + 1 == n;
        // bump of x against the key segment
        let xh = xs.plus_const(x_offset);
        let diff = xh.plus(&su.acc.scaled(-1.0));
        let mut l = Layering::carrying(extra);
        xs = l.carry(&xs);
        y = l.carry(&y);
        if !last {
            su.a = l.carry(&su.a);
            su.ap = l.carry(&su.ap);
            sw.a = l.carry(&sw.a);
            sw.ap = l.carry(&sw.ap);
        }
        let accw = l.carry(&sw.acc);
        let u1 = l.unit(diff.scaled(-1.0 / eta));
        let u2 = l.unit(diff.scaled(1.0 / eta).plus_const(-(1.0 - eta) / eta));
        l.push(nb)?;
        let mut l = Layering::carrying(extra);
        xs = l.carry(&xs);
        y = l.carry(&y);
        if !last {
            su.a = l.carry(&su.a);
            su.ap = l.carry(&su.ap);
            sw.a = l.carry(&sw.a);
            sw.ap = l.carry(&sw.ap);
        }
        let accw = l.carry(&accw);
        let v1 = l.unit(Row::new(1.0).plus(&u1.scaled(-1.0)));
        let v2 = l.unit(Row::new(1.0).plus(&u2.scaled(-1.0)));
        l.push(nb)?;
        gate = Some(v1.scaled(top).plus(&v2.scaled(top)).plus(&accw).plus_const(-2.0 * top));
        su.acc = Row::new(0.0);
        sw.acc = Row::new(0.0);
    }
    let mut l = Layering::carrying(extra);
    y = l.carry(&y);
    let g = l.unit(gate.take().expect("at least one segment"));
    l.push(nb)?;
    Ok(y.plus(&g))
}

/// On input `(x, w, u)`: returns segment `j` of `w` when `x ∈ [segment_j(u), segment_j(u)+1−η]`,
/// and 0 away from every key interval (for `x ≥ 0`). Width ≤ 12, depth `3n·max(b_u,b_w)+2n+2`.
/// The network cannot notice repeated key segments; use [`bit_extractor_words`] to pack and check.
pub fn bit_extractor(n_groups: u32, b_u: u32, b_w: u32, eta: f64) -> Result<Network> {
    let shape = BitExtractorShape { n: n_groups, b_u, b_w, eta };
    let mut nb = NetBuilder::new(3);
    let out = emit_bit_extractor(&mut nb, &Row::unit(0), &Row::unit(1), &Row::unit(2), shape, 0.0, &mut [])?;
    nb.finish(vec![out]).map(declare_bits)
}

/// Packs keys and values into the `(u, w)` words read by [`bit_extractor`];
/// errors on repeated keys or overflowing segments.
pub fn bit_extractor_words(keys: &[u64], values: &[u64], b_u: u32, b_w: u32) -> Result<(u64, u64)> {
    if keys.len() != values.len() || keys.is_empty() {
        return invalid("need one value per key");
    }
    let mut sorted = keys.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Precondition("key segments must be pairwise distinct".into()));
    }
    let u = BitString::concat(keys, b_u)?.value();
    let w = BitString::concat(values, b_w)?.value();
    Ok((u, w))
}

// ---------------------------------------------------------------- integer memorizer

/// Layout chosen for an integer memorizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegerLayout {
    pub keys: usize,
    pub groups: usize,
    pub group_size: usize,
    pub b_u: u32,
    pub b_w: u32,
}

/// Group size minimizing the total depth `3⌈N/g⌉ + (3b+2)g` of the interval
/// stage plus the extractor (so `g ≈ √(N/b)`), capped so one packed word stays
/// within [`MAX_PACKED_BITS`]. Groups hold at least two slots (a lone key is
/// padded); ties go to the larger group.
pub fn integer_layout(n_keys: usize, max_key: u64, max_label: u64) -> Result<IntegerLayout> {
    let b_u = bit_len(max_key).max(2);
    let b_w = bit_len(max_label).max(2);
    let b = b_u.max(b_w);
    if b > MAX_PACKED_BITS {
        return invalid(format!("keys need {b} bits, more than {MAX_PACKED_BITS}"));
    }
    let cap = ((MAX_PACKED_BITS / b) as usize).min(n_keys.max(2));
    let cost = |g: usize| 3 * n_keys.div_ceil(g) + (3 * b as usize + 2) * g;
    let g = (2.min(cap)..=cap).rev().min_by_key(|&g| cost(g)).unwrap_or(1);
    let groups = n_keys.div_ceil(g);
    Ok(IntegerLayout { keys: n_keys, groups, group_size: g, b_u, b_w })
}

/// Exact map `m_i ↦ y_i` on the naturals, 0 on every other natural.
///
/// Built as an interval memorizer that routes each key to its group's packed
/// `(w_j, u_j)` words, followed by a bit extractor. Inputs are read as
/// `x + ¼`, so each key's plateau is `[m − ¼, m + ¼]`: integer inputs carrying
/// a little rounding noise are still mapped exactly. Width 12.
pub fn integer_memorizer(pairs: &[(u64, u32)]) -> Result<Network> {
    Ok(integer_memorizer_with_layout(pairs)?.0)
}

pub fn integer_memorizer_with_layout(pairs: &[(u64, u32)]) -> Result<(Network, IntegerLayout)> {
    let mut nb = NetBuilder::new(1);
    let (out, lay) = emit_integer_memorizer(&mut nb, &Row::unit(0), pairs, &mut [])?;
    Ok((declare_bits(nb.finish(vec![out])?), lay))
}

/// Appends an integer memorizer reading the key expression `x`.
pub(crate) fn emit_integer_memorizer(
    nb: &mut NetBuilder,
    x: &Row,
    pairs: &[(u64, u32)],
    extra: &mut [Row],
) -> Result<(Row, IntegerLayout)> {
    if pairs.is_empty() {
        return invalid("no pairs to memorize");
    }
    let mut p = pairs.to_vec();
    p.sort_unstable();
    if let Some(w) = p.windows(2).find(|w| w[0].0 == w[1].0) {
        return invalid(format!("duplicate key {}", w[0].0));
    }
    let max_key = p.last().unwrap().0;
    let max_label = p.iter().map(|q| q.1 as u64).max().unwrap();
    let lay = integer_layout(p.len(), max_key, max_label)?;
    let g = lay.group_size;
    let keys: Vec<u64> = p.iter().map(|q| q.0).collect();
    let mut wv = Vec::with_capacity(lay.groups);
    let mut uv = Vec::with_capacity(lay.groups);
    for chunk in p.chunks(g) {
        let mut ks: Vec<u64> = chunk.iter().map(|q| q.0).collect();
        let mut ls: Vec<u64> = chunk.iter().map(|q| q.1 as u64).collect();
        // pad with unused keys carrying value 0
        let mut cand = 0u64;
        while ks.len() < g {
            if !ks.contains(&cand) {
                ks.push(cand);
                ls.push(0);
            }
            cand += 1;
            if cand >> lay.b_u != 0 && ks.len() < g {
                return Err(Error::Construction("no free padding key".into()));
            }
        }
        let (u, w) = bit_extractor_words(&ks, &ls, lay.b_u, lay.b_w)?;
        uv.push(u as f64);
        wv.push(w as f64);
    }
    let (c, ys, x0) = emit_interval(nb, x, &keys, lay.groups, g, &[wv, uv], 0.5, 0.25, extra)?;
    let shape = BitExtractorShape { n: g as u32, b_u: lay.b_u, b_w: lay.b_w, eta: 0.5 };
    let out = emit_bit_extractor(nb, &c, &ys[0], &ys[1], shape, x0, extra)?;
    Ok((out, lay))
}

/// Records the smallest exact fixed-point width of `net` as its bit complexity.
pub(crate) fn declare_bits(net: Network) -> Network {
    let bits = minimal_fixed_point(&net, 64).map(|f| f.total_bits());
    net.with_bit_complexity(bits)
}

// ---------------------------------------------------------------- max / square

/// `max(a, b) = a + σ(b − a)` with `a` passed on two rails.
pub fn running_max() -> Network {
    let mut nb = NetBuilder::new(2);
    nb.relu(vec![Row::unit(0), Row::new(0.0).t(0, -1.0), Row::new(0.0).t(0, -1.0).t(1, 1.0)]).expect("shape");
    nb.finish(vec![Row::new(0.0).t(0, 1.0).t(1, -1.0).t(2, 1.0)]).expect("shape")
}

pub fn select_max(a: f64, b: f64) -> f64 {
    a + (b - a).max(0.0)
}

/// Appends `sq_k(t) = t − Σ_{s≤k} g_s(t)/4^s` for each `t` in `ts` (all in `[0,1]`),
/// where `g_s` is the `s`-fold tent map. Three units per input per layer, `k` layers.
pub(crate) fn emit_squares(nb: &mut NetBuilder, ts: &[Row], k: u32, extra: &mut [Row]) -> Result<Vec<Row>> {
    let mut g: Vec<Row> = ts.to_vec();
    let mut acc: Vec<Row> = ts.to_vec();
    for s in 1..=k {
        let mut l = Layering::carrying(extra);
        let q = 0.25f64.powi(s as i32);
        for j in 0..ts.len() {
            let gg = l.unit(g[j].clone());
            let hh = l.unit(g[j].plus_const(-0.5));
            let aa = l.unit(acc[j].clone());
            g[j] = gg.scaled(2.0).plus(&hh.scaled(-4.0));
            acc[j] = aa.plus(&g[j].scaled(-q));
        }
        l.push(nb)?;
    }
    Ok(acc)
}

/// `t²` on `[0,1]` to within `2^{−2k−2}`; width 3, depth `k + 1`.
pub fn square_approx(k: u32) -> Result<Network> {
    if k == 0 {
        return invalid("k must be >= 1");
    }
    let mut nb = NetBuilder::new(1);
    let out = emit_squares(&mut nb, &[Row::unit(0)], k, &mut [])?;
    nb.finish(out).map(declare_bits)
}
