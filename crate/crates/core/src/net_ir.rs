//! Layered affine + ReLU networks: construction, evaluation, composition,
//! resource accounting, fixed-point snapping and JSON round-tripping.
//!
//! A [`Network`] is immutable once built. Every hidden layer applies a ReLU,
//! the final layer is affine. Evaluation sums each row strictly left to right
//! over the nonzero weights and adds the bias last; the gadget constructions
//! rely on that order to stay bit-exact on dyadic inputs.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use std::ops::Range;

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    #[serde(rename = "relu")]
    Relu,
    #[serde(rename = "id")]
    Identity,
}

/// One affine map `x -> act(W x + b)`, weights stored row-major.
#[derive(Debug, Clone)]
pub struct Layer {
    rows: usize,
    cols: usize,
    w: Vec<f64>,
    b: Vec<f64>,
    act: Activation,
    // compressed rows, columns ascending
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<f64>,
}

impl PartialEq for Layer {
    fn eq(&self, o: &Self) -> bool {
        self.rows == o.rows && self.cols == o.cols && self.w == o.w && self.b == o.b && self.act == o.act
    }
}

impl Layer {
    /// Dense constructor; `w` is row-major with `rows * cols` entries.
    pub fn new(rows: usize, cols: usize, w: Vec<f64>, b: Vec<f64>, act: Activation) -> Result<Self> {
        if w.len() != rows * cols {
            return Err(Error::Dim { expected: rows * cols, got: w.len() });
        }
        if b.len() != rows {
            return Err(Error::Dim { expected: rows, got: b.len() });
        }
        if w.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return invalid("non-finite parameter");
        }
        let mut row_ptr = Vec::with_capacity(rows + 1);
        let mut col_idx = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for r in 0..rows {
            for c in 0..cols {
                let v = w[r * cols + c];
                if v != 0.0 {
                    col_idx.push(c);
                    vals.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Ok(Layer { rows, cols, w, b, act, row_ptr, col_idx, vals })
    }

    pub fn from_rows(cols: usize, rows: &[Row], act: Activation) -> Result<Self> {
        let mut w = vec![0.0; rows.len() * cols];
        let mut b = Vec::with_capacity(rows.len());
        for (r, row) in rows.iter().enumerate() {
            for &(c, v) in &row.terms {
                if c >= cols {
                    return invalid(format!("row term column {c} out of range {cols}"));
                }
                w[r * cols + c] += v;
            }
            b.push(row.bias);
        }
        Layer::new(rows.len(), cols, w, b, act)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }
    pub fn act(&self) -> Activation {
        self.act
    }
    pub fn weights(&self) -> &[f64] {
        &self.w
    }
    pub fn bias(&self) -> &[f64] {
        &self.b
    }
    pub fn weight(&self, r: usize, c: usize) -> f64 {
        self.w[r * self.cols + c]
    }

    fn with_act(&self, act: Activation) -> Layer {
        let mut l = self.clone();
        l.act = act;
        l
    }

    fn map_params(&self, mut f: impl FnMut(f64) -> f64) -> Result<Layer> {
        let w = self.w.iter().map(|&v| f(v)).collect();
        let b = self.b.iter().map(|&v| f(v)).collect();
        Layer::new(self.rows, self.cols, w, b, self.act)
    }

    #[inline]
    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for r in 0..self.rows {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[k] * x[self.col_idx[k]];
            }
            acc += self.b[r];
            if self.act == Activation::Relu && !(acc > 0.0) {
                acc = 0.0;
            }
            out.push(acc);
        }
    }

    /// Number of nonzero weights plus nonzero biases.
    pub fn nonzeros(&self) -> usize {
        self.vals.len() + self.b.iter().filter(|v| **v != 0.0).count()
    }
}

/// Sparse row used by the builders: `sum_k terms[k].1 * a[terms[k].0] + bias`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Row {
    pub terms: Vec<(usize, f64)>,
    pub bias: f64,
}

impl Row {
    pub fn new(bias: f64) -> Self {
        Row { terms: Vec::new(), bias }
    }
    /// Adds `w * a[col]`; zero weights are dropped.
    pub fn t(mut self, col: usize, w: f64) -> Self {
        if w != 0.0 {
            self.terms.push((col, w));
        }
        self
    }
    /// Pass-through of a single unit.
    pub fn unit(col: usize) -> Self {
        Row::new(0.0).t(col, 1.0)
    }
    pub fn scaled(&self, c: f64) -> Row {
        Row { terms: self.terms.iter().map(|&(i, w)| (i, w * c)).filter(|t| t.1 != 0.0).collect(), bias: self.bias * c }
    }
    pub fn plus(&self, o: &Row) -> Row {
        let mut terms = self.terms.clone();
        terms.extend_from_slice(&o.terms);
        Row { terms, bias: self.bias + o.bias }
    }
    pub fn plus_const(&self, c: f64) -> Row {
        Row { terms: self.terms.clone(), bias: self.bias + c }
    }
    /// True when the row does not read any unit.
    pub fn is_const(&self) -> bool {
        self.terms.is_empty()
    }
}

/// Incremental builder; each `relu` call appends a hidden layer fed by the
/// previous one, `finish` appends the affine output layer.
#[derive(Debug, Clone)]
pub struct NetBuilder {
    input_dim: usize,
    cur: usize,
    layers: Vec<Layer>,
}

impl NetBuilder {
    pub fn new(input_dim: usize) -> Self {
        NetBuilder { input_dim, cur: input_dim, layers: Vec::new() }
    }
    /// Dimension of the most recent layer (the input dimension initially).
    pub fn dim(&self) -> usize {
        self.cur
    }
    /// Layers appended so far.
    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }
    pub fn relu(&mut self, rows: Vec<Row>) -> Result<&mut Self> {
        let l = Layer::from_rows(self.cur, &rows, Activation::Relu)?;
        self.cur = l.rows;
        self.layers.push(l);
        Ok(self)
    }
    pub fn finish(mut self, rows: Vec<Row>) -> Result<Network> {
        let l = Layer::from_rows(self.cur, &rows, Activation::Identity)?;
        self.layers.push(l);
        Network::new(self.input_dim, self.layers)
    }
}

/// Feedforward ReLU network.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input_dim: usize,
    layers: Vec<Layer>,
    meta: Map<String, Value>,
    bit_complexity: Option<u32>,
}

/// Parameter, width and depth counts of a network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceProfile {
    pub params_all: u64,
    pub params_nonzero: u64,
    pub width: usize,
    pub depth: usize,
    pub bit_complexity: Option<u32>,
}

/// How the output of `f` feeds `g` in [`compose_serial`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Junction {
    /// `g(σ(f(x)))`: the output layer of `f` becomes a ReLU layer.
    Relu,
    /// `g(f(x))` for outputs of any sign via the (σ(u), σ(−u)) encoding; depth still adds.
    TwoRail,
    /// `g(f(x))` by fusing the two affine maps; depth is one less than the sum.
    Merge,
}

/// Input routing for [`stack_parallel`].
#[derive(Debug, Clone, PartialEq)]
pub enum Inputs {
    /// Every net reads the whole (shared) input.
    Shared,
    /// Net `i` reads the coordinates in `slices[i]` of a common input of dimension `total`.
    Slices { total: usize, slices: Vec<Range<usize>> },
}

impl Network {
    pub fn new(input_dim: usize, layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return invalid("network needs at least one layer");
        }
        let mut prev = input_dim;
        let last = layers.len() - 1;
        for (i, l) in layers.iter().enumerate() {
            if l.cols != prev {
                return Err(Error::Dim { expected: prev, got: l.cols });
            }
            let want = if i == last { Activation::Identity } else { Activation::Relu };
            if l.act != want {
                return invalid(format!("layer {i} has activation {:?}, expected {want:?}", l.act));
            }
            prev = l.rows;
        }
        Ok(Network { input_dim, layers, meta: Map::new(), bit_complexity: None })
    }

    /// A single identity layer on `dim` coordinates.
    pub fn identity(dim: usize) -> Self {
        let rows: Vec<Row> = (0..dim).map(Row::unit).collect();
        NetBuilder::new(dim).finish(rows).expect("identity is well formed")
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }
    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.rows).unwrap_or(0)
    }
    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }
    pub fn depth(&self) -> usize {
        self.layers.len()
    }
    pub fn meta(&self) -> &Map<String, Value> {
        &self.meta
    }
    pub fn with_meta(mut self, key: &str, v: Value) -> Self {
        self.meta.insert(key.to_string(), v);
        self
    }
    pub fn bit_complexity(&self) -> Option<u32> {
        self.bit_complexity
    }
    pub fn with_bit_complexity(mut self, bits: Option<u32>) -> Self {
        self.bit_complexity = bits;
        self
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim {
            return Err(Error::Dim { expected: self.input_dim, got: x.len() });
        }
        let mut s = Scratch::default();
        Ok(self.eval_with(x, &mut s).to_vec())
    }

    /// Forward pass reusing caller-owned buffers; `x.len()` must equal `input_dim`.
    pub fn eval_with<'a>(&self, x: &[f64], s: &'a mut Scratch) -> &'a [f64] {
        debug_assert_eq!(x.len(), self.input_dim);
        s.a.clear();
        s.a.extend_from_slice(x);
        for l in &self.layers {
            l.apply(&s.a, &mut s.b);
            std::mem::swap(&mut s.a, &mut s.b);
        }
        &s.a
    }

    /// Scalar output convenience for 1-output nets.
    pub fn eval1(&self, x: &[f64], s: &mut Scratch) -> f64 {
        self.eval_with(x, s)[0]
    }

    pub fn resources(&self) -> ResourceProfile {
        let mut all = 0u64;
        let mut nz = 0u64;
        let mut width = 0;
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            all += ((l.cols + 1) * l.rows) as u64;
            nz += l.nonzeros() as u64;
            if i < last {
                width = width.max(l.rows);
            }
        }
        ResourceProfile {
            params_all: all,
            params_nonzero: nz,
            width,
            depth: self.layers.len(),
            bit_complexity: self.bit_complexity,
        }
    }

    /// Largest absolute parameter.
    pub fn max_abs_param(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.w.iter().chain(l.b.iter()))
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Returns a copy with parameters mapped by `f` (used by quantizers).
    pub fn map_params(&self, mut f: impl FnMut(f64) -> f64) -> Result<Network> {
        let layers = self.layers.iter().map(|l| l.map_params(&mut f)).collect::<Result<Vec<_>>>()?;
        let mut n = Network::new(self.input_dim, layers)?;
        n.meta = self.meta.clone();
        Ok(n)
    }

    /// Replaces one layer (same shape and activation) — handy for mutation tests.
    pub fn with_layer(&self, idx: usize, layer: Layer) -> Result<Network> {
        let mut layers = self.layers.clone();
        if idx >= layers.len() {
            return invalid("layer index out of range");
        }
        layers[idx] = layer;
        let mut n = Network::new(self.input_dim, layers)?;
        n.meta = self.meta.clone();
        Ok(n)
    }
}

/// Reusable evaluation buffers; one per thread.
#[derive(Debug, Default, Clone)]
pub struct Scratch {
    a: Vec<f64>,
    b: Vec<f64>,
}

pub fn evaluate(net: &Network, x: &[f64]) -> Result<Vec<f64>> {
    net.evaluate(x)
}

pub fn resources(net: &Network) -> ResourceProfile {
    net.resources()
}

/// `g ∘ f` (or `g ∘ σ ∘ f`) as one network.
pub fn compose_serial(f: &Network, g: &Network, junction: Junction) -> Result<Network> {
    if f.output_dim() != g.input_dim {
        return Err(Error::Dim { expected: g.input_dim, got: f.output_dim() });
    }
    let nf = f.layers.len();
    let mut layers: Vec<Layer> = Vec::with_capacity(nf + g.layers.len());
    match junction {
        Junction::Relu => {
            layers.extend(f.layers[..nf - 1].iter().cloned());
            layers.push(f.layers[nf - 1].with_act(Activation::Relu));
            layers.extend(g.layers.iter().cloned());
        }
        Junction::TwoRail => {
            let fl = &f.layers[nf - 1];
            let (r, c) = (fl.rows, fl.cols);
            let mut w = Vec::with_capacity(2 * r * c);
            let mut b = Vec::with_capacity(2 * r);
            for i in 0..r {
                w.extend_from_slice(&fl.w[i * c..(i + 1) * c]);
                b.push(fl.b[i]);
            }
            for i in 0..r {
                w.extend(fl.w[i * c..(i + 1) * c].iter().map(|v| -v));
                b.push(-fl.b[i]);
            }
            layers.extend(f.layers[..nf - 1].iter().cloned());
            layers.push(Layer::new(2 * r, c, w, b, Activation::Relu)?);
            let g0 = &g.layers[0];
            let mut w0 = vec![0.0; g0.rows * 2 * r];
            for i in 0..g0.rows {
                for j in 0..r {
                    let v = g0.w[i * r + j];
                    w0[i * 2 * r + j] = v;
                    w0[i * 2 * r + r + j] = -v;
                }
            }
            layers.push(Layer::new(g0.rows, 2 * r, w0, g0.b.clone(), g0.act)?);
            layers.extend(g.layers[1..].iter().cloned());
        }
        Junction::Merge => {
            let fl = &f.layers[nf - 1];
            let g0 = &g.layers[0];
            let (r, c, k) = (g0.rows, fl.cols, fl.rows);
            let mut w = vec![0.0; r * c];
            let mut b = g0.b.clone();
            for i in 0..r {
                for j in 0..k {
                    let gij = g0.w[i * k + j];
                    if gij == 0.0 {
                        continue;
                    }
                    for t in 0..c {
                        w[i * c + t] += gij * fl.w[j * c + t];
                    }
                    b[i] += gij * fl.b[j];
                }
            }
            layers.extend(f.layers[..nf - 1].iter().cloned());
            layers.push(Layer::new(r, c, w, b, g0.act)?);
            layers.extend(g.layers[1..].iter().cloned());
        }
    }
    Network::new(f.input_dim, layers)
}

/// Runs several nets side by side and concatenates their outputs.
///
/// Nets of smaller depth are padded after their output with ReLU pass-through
/// rows, so their outputs must be nonnegative wherever the stack is used.
pub fn stack_parallel(nets: &[Network], inputs: &Inputs) -> Result<Network> {
    if nets.is_empty() {
        return invalid("stack_parallel needs at least one network");
    }
    let (in_dim, slices): (usize, Vec<Range<usize>>) = match inputs {
        Inputs::Shared => {
            let d = nets[0].input_dim;
            if nets.iter().any(|n| n.input_dim != d) {
                return invalid("shared-input stack with differing input dims");
            }
            (d, vec![0..d; nets.len()])
        }
        Inputs::Slices { total, slices } => {
            if slices.len() != nets.len() {
                return invalid("one slice per network required");
            }
            for (n, s) in nets.iter().zip(slices) {
                if s.end > *total || s.len() != n.input_dim {
                    return invalid(format!("slice {s:?} incompatible with input dim {} of {total}", n.input_dim));
                }
            }
            (*total, slices.clone())
        }
    };
    let depth = nets.iter().map(|n| n.depth()).max().unwrap();
    // Expand each net to exactly `depth` layers.
    let padded: Vec<Vec<Layer>> = nets
        .iter()
        .map(|n| {
            let mut ls = n.layers.clone();
            if ls.len() < depth {
                let last = ls.len() - 1;
                ls[last] = ls[last].with_act(Activation::Relu);
                let k = n.output_dim();
                while ls.len() < depth {
                    let act = if ls.len() + 1 == depth { Activation::Identity } else { Activation::Relu };
                    let mut w = vec![0.0; k * k];
                    for i in 0..k {
                        w[i * k + i] = 1.0;
                    }
                    ls.push(Layer::new(k, k, w, vec![0.0; k], act)?);
                }
            }
            Ok(ls)
        })
        .collect::<Result<_>>()?;
    let mut layers = Vec::with_capacity(depth);
    for l in 0..depth {
        let rows: usize = padded.iter().map(|p| p[l].rows).sum();
        let cols: usize = if l == 0 { in_dim } else { padded.iter().map(|p| p[l - 1].rows).sum() };
        let mut w = vec![0.0; rows * cols];
        let mut b = Vec::with_capacity(rows);
        let (mut r0, mut c0) = (0, 0);
        for (i, p) in padded.iter().enumerate() {
            let pl = &p[l];
            let coff = if l == 0 { slices[i].start } else { c0 };
            for r in 0..pl.rows {
                for c in 0..pl.cols {
                    w[(r0 + r) * cols + coff + c] = pl.w[r * pl.cols + c];
                }
                b.push(pl.b[r]);
            }
            r0 += pl.rows;
            if l > 0 {
                c0 += p[l - 1].rows;
            }
        }
        let act = if l + 1 == depth { Activation::Identity } else { Activation::Relu };
        layers.push(Layer::new(rows, cols, w, b, act)?);
    }
    Network::new(in_dim, layers)
}

/// `x -> net(x / c)`.
pub fn scale_input(net: &Network, c: f64) -> Result<Network> {
    if !(c > 0.0) || !c.is_finite() {
        return invalid(format!("scale factor must be positive, got {c}"));
    }
    let mut layers = net.layers.clone();
    layers[0] = layers[0].map_params_w(|v| v / c)?;
    let mut n = Network::new(net.input_dim, layers)?;
    n.meta = net.meta.clone();
    n.bit_complexity = None;
    Ok(n)
}

impl Layer {
    fn map_params_w(&self, f: impl Fn(f64) -> f64) -> Result<Layer> {
        let w = self.w.iter().map(|&v| f(v)).collect();
        Layer::new(self.rows, self.cols, w, self.b.clone(), self.act)
    }
}

/// Binary fixed point: values `k · 2^{-frac_bits}` with `|k · 2^{-frac_bits}| < 2^{int_bits}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedPointFormat {
    pub frac_bits: u32,
    pub int_bits: u32,
}

impl FixedPointFormat {
    pub fn new(frac_bits: u32, int_bits: u32) -> Result<Self> {
        if frac_bits + int_bits == 0 {
            return invalid("fixed-point format needs at least one bit");
        }
        Ok(FixedPointFormat { frac_bits, int_bits })
    }
    pub fn total_bits(&self) -> u32 {
        self.frac_bits + self.int_bits
    }
    /// Nearest grid value, ties to even.
    pub fn snap(&self, v: f64) -> f64 {
        let s = (self.frac_bits as f64).exp2();
        (v * s).round_ties_even() / s
    }
    pub fn fits(&self, v: f64) -> bool {
        v.abs() < (self.int_bits as f64).exp2()
    }
}

/// Snaps every parameter to `fmt`; overflow of the integer part is an error naming the layer.
pub fn snap_network(net: &Network, fmt: FixedPointFormat) -> Result<Network> {
    let mut layers = Vec::with_capacity(net.layers.len());
    for (i, l) in net.layers.iter().enumerate() {
        for &v in l.w.iter().chain(l.b.iter()) {
            let s = fmt.snap(v);
            if !fmt.fits(s) {
                return Err(Error::FixedPointOverflow { layer: i, value: v, int_bits: fmt.int_bits });
            }
        }
        layers.push(l.map_params(|v| fmt.snap(v))?);
    }
    let mut n = Network::new(net.input_dim, layers)?;
    n.meta = net.meta.clone();
    n.bit_complexity = Some(fmt.total_bits());
    Ok(n)
}

/// Smallest fixed-point format holding every parameter exactly, if one with at
/// most `max_frac` fractional bits exists.
pub fn minimal_fixed_point(net: &Network, max_frac: u32) -> Option<FixedPointFormat> {
    let mut frac = 0u32;
    let mut max_abs = 0.0f64;
    for l in &net.layers {
        for &v in l.w.iter().chain(l.b.iter()) {
            max_abs = max_abs.max(v.abs());
            while frac <= max_frac && (v * (frac as f64).exp2()).fract() != 0.0 {
                frac += 1;
            }
            if frac > max_frac {
                return None;
            }
        }
    }
    // |v| < 2^int_bits for the largest magnitude
    let int_bits = if max_abs < 1.0 { 0 } else { max_abs.log2().floor() as u32 + 1 };
    FixedPointFormat::new(frac, int_bits.max(if frac == 0 { 1 } else { 0 })).ok()
}

pub fn evaluate_fixed_point(net: &Network, fmt: FixedPointFormat, x: &[f64]) -> Result<Vec<f64>> {
    snap_network(net, fmt)?.evaluate(x)
}

// ---- JSON ----

#[derive(Serialize, Deserialize)]
struct JsonLayer {
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
    act: Activation,
}

#[derive(Serialize, Deserialize)]
struct JsonNet {
    input_dim: usize,
    layers: Vec<JsonLayer>,
    #[serde(default)]
    meta: Map<String, Value>,
}

impl Network {
    pub fn to_json_value(&self) -> Value {
        let mut meta = self.meta.clone();
        if let Some(b) = self.bit_complexity {
            meta.insert("bit_complexity".into(), Value::from(b));
        }
        let j = JsonNet {
            input_dim: self.input_dim,
            layers: self
                .layers
                .iter()
                .map(|l| JsonLayer {
                    w: (0..l.rows).map(|r| l.w[r * l.cols..(r + 1) * l.cols].to_vec()).collect(),
                    b: l.b.clone(),
                    act: l.act,
                })
                .collect(),
            meta,
        };
        serde_json::to_value(j).expect("network serializes")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_json_value()).expect("network serializes")
    }

    pub fn from_json(s: &str) -> Result<Network> {
        let j: JsonNet = serde_json::from_str(s)?;
        let mut layers = Vec::with_capacity(j.layers.len());
        let mut prev = j.input_dim;
        for jl in j.layers {
            let rows = jl.w.len();
            let mut w = Vec::with_capacity(rows * prev);
            for r in &jl.w {
                if r.len() != prev {
                    return Err(Error::Dim { expected: prev, got: r.len() });
                }
                w.extend_from_slice(r);
            }
            layers.push(Layer::new(rows, prev, w, jl.b, jl.act)?);
            prev = rows;
        }
        let mut n = Network::new(j.input_dim, layers)?;
        n.bit_complexity = j.meta.get("bit_complexity").and_then(|v| v.as_u64()).map(|v| v as u32);
        n.meta = j.meta;
        n.meta.remove("bit_complexity");
        Ok(n)
    }
}
