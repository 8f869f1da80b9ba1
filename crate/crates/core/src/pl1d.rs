//! Exhaustive checks of scalar-input networks over integer ranges.
//!
//! A 1→k ReLU net is affine between consecutive activation-pattern changes.
//! Propagating `α + βx` forms and splitting the integer range wherever a unit
//! changes sign gives pieces on which the output is affine, so a handful of
//! real evaluations per piece covers every integer in it.

use crate::error::{invalid, Result};
use crate::net_ir::{Activation, Network, Scratch};
use std::collections::BTreeMap;

/// Integer range `[lo, hi]` on which the first output equals `alpha + beta·x`
/// (in exact arithmetic; the forms are propagated in binary64).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Piece {
    pub lo: i64,
    pub hi: i64,
    pub alpha: f64,
    pub beta: f64,
}

type Forms = Vec<(f64, f64)>;

fn affine(net: &Network, l: usize, inp: &Forms) -> Forms {
    let layer = &net.layers()[l];
    let (rows, cols) = (layer.rows(), layer.cols());
    let w = layer.weights();
    let b = layer.bias();
    (0..rows)
        .map(|r| {
            let mut a = 0.0;
            let mut be = 0.0;
            for c in 0..cols {
                let wv = w[r * cols + c];
                if wv != 0.0 {
                    a += wv * inp[c].0;
                    be += wv * inp[c].1;
                }
            }
            (a + b[r], be)
        })
        .collect()
}

/// Splits `[lo, hi]` into pieces with a constant activation pattern.
pub fn integer_pieces(net: &Network, lo: i64, hi: i64) -> Result<Vec<Piece>> {
    if net.input_dim() != 1 {
        return invalid("integer pieces need a scalar-input network");
    }
    if lo > hi {
        return invalid(format!("empty range [{lo}, {hi}]"));
    }
    let depth = net.layers().len();
    let mut out = Vec::new();
    let mut stack: Vec<(usize, i64, i64, Forms)> = vec![(0, lo, hi, vec![(0.0, 1.0)])];
    while let Some((l, a, b, forms)) = stack.pop() {
        let pre = affine(net, l, &forms);
        if net.layers()[l].act() == Activation::Identity {
            debug_assert_eq!(l + 1, depth);
            out.push(Piece { lo: a, hi: b, alpha: pre[0].0, beta: pre[0].1 });
            continue;
        }
        let (fa, fb) = (a as f64, b as f64);
        let split = pre.iter().find_map(|&(al, be)| {
            let (va, vb) = (al + be * fa, al + be * fb);
            if (va > 0.0 && vb < 0.0) || (va < 0.0 && vb > 0.0) {
                let s = (-al / be).floor() as i64;
                Some(s.clamp(a, b - 1))
            } else {
                None
            }
        });
        match split {
            Some(s) => {
                stack.push((l, s + 1, b, forms.clone()));
                stack.push((l, a, s, forms));
            }
            None => {
                let next = pre
                    .iter()
                    .map(|&(al, be)| {
                        let (va, vb) = (al + be * fa, al + be * fb);
                        if va >= 0.0 && vb >= 0.0 && (va > 0.0 || vb > 0.0) {
                            (al, be)
                        } else {
                            (0.0, 0.0)
                        }
                    })
                    .collect();
                stack.push((l + 1, a, b, next));
            }
        }
    }
    out.sort_by_key(|p| p.lo);
    Ok(out)
}

/// Outcome of [`verify_integer_map`].
#[derive(Debug, Clone, PartialEq)]
pub struct IntegerCheck {
    pub pieces: usize,
    pub evaluations: usize,
    /// First integer whose output differs from the expected map.
    pub first_mismatch: Option<(i64, f64, f64)>,
}

impl IntegerCheck {
    pub fn ok(&self) -> bool {
        self.first_mismatch.is_none()
    }
}

/// Checks `net(m) == table[m]` (0 off the table) with exact equality for every
/// integer `m ∈ [lo, hi]`.
///
/// Keys are evaluated directly. On each affine piece the non-key integers are
/// covered by evaluating the two outermost ones: two exact zeros pin the affine
/// output to zero on the whole piece.
pub fn verify_integer_map(net: &Network, lo: i64, hi: i64, table: &BTreeMap<i64, f64>) -> Result<IntegerCheck> {
    let pieces = integer_pieces(net, lo, hi)?;
    let mut s = Scratch::default();
    let mut evals = 0usize;
    let mut check = |x: i64, s: &mut Scratch| -> Option<(i64, f64, f64)> {
        evals += 1;
        let want = table.get(&x).copied().unwrap_or(0.0);
        let got = net.eval1(&[x as f64], s);
        (got != want).then_some((x, want, got))
    };
    for p in &pieces {
        for (&k, _) in table.range(p.lo..=p.hi) {
            if let Some(m) = check(k, &mut s) {
                return Ok(IntegerCheck { pieces: pieces.len(), evaluations: evals, first_mismatch: Some(m) });
            }
        }
        let first = (p.lo..=p.hi).find(|x| !table.contains_key(x));
        let last = (p.lo..=p.hi).rev().find(|x| !table.contains_key(x));
        let mut probe = vec![];
        if let Some(f) = first {
            probe.push(f);
        }
        if let Some(l) = last {
            if Some(l) != first {
                probe.push(l);
            }
        }
        for x in probe {
            if let Some(m) = check(x, &mut s) {
                return Ok(IntegerCheck { pieces: pieces.len(), evaluations: evals, first_mismatch: Some(m) });
            }
        }
    }
    Ok(IntegerCheck { pieces: pieces.len(), evaluations: evals, first_mismatch: None })
}
