//! Parameterized building blocks recorded on a [`Tape`].

use std::sync::Arc;

use rand::Rng as _;

use super::matrix::Matrix;
use super::params::ParamStore;
use super::tape::{RopeTable, Tape, Var};
use crate::rng::Rng;

/// `x · W + b` with parameters `{name}.w` and optionally `{name}.b`.
pub fn linear(tape: &mut Tape, store: &ParamStore, name: &str, x: Var) -> Var {
    let w = tape.param(store, &format!("{name}.w"));
    let y = tape.matmul(x, w);
    let b = format!("{name}.b");
    if store.contains(&b) {
        let b = tape.param(store, &b);
        tape.add_row(y, b)
    } else {
        y
    }
}

pub fn layer_norm(tape: &mut Tape, store: &ParamStore, name: &str, x: Var) -> Var {
    let g = tape.param(store, &format!("{name}.g"));
    let b = tape.param(store, &format!("{name}.b"));
    tape.layer_norm(x, g, b)
}

/// Two-layer GELU network `{name}.up` then `{name}.down`.
pub fn feed_forward(tape: &mut Tape, store: &ParamStore, name: &str, x: Var) -> Var {
    let h = linear(tape, store, &format!("{name}.up"), x);
    let h = tape.gelu(h);
    linear(tape, store, &format!("{name}.down"), h)
}

/// Multi-head scaled dot-product attention with projections
/// `{name}.{q,k,v,o}`. Queries come from `q_in`, keys and values from `kv_in`.
/// Rotary embeddings are applied to the projected queries and keys.
#[allow(clippy::too_many_arguments)]
pub fn attention(
    tape: &mut Tape,
    store: &ParamStore,
    name: &str,
    q_in: Var,
    kv_in: Var,
    n_heads: usize,
    rope: Option<(&Arc<RopeTable>, &Arc<RopeTable>)>,
    key_mask: Option<&[bool]>,
) -> Var {
    let mut q = linear(tape, store, &format!("{name}.q"), q_in);
    let mut k = linear(tape, store, &format!("{name}.k"), kv_in);
    let v = linear(tape, store, &format!("{name}.v"), kv_in);
    if let Some((rq, rk)) = rope {
        q = tape.rope(q, rq.clone());
        k = tape.rope(k, rk.clone());
    }
    let width = tape.value(q).cols;
    let dh = width / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut heads = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let qh = tape.slice_cols(q, h * dh, dh);
        let kh = tape.slice_cols(k, h * dh, dh);
        let vh = tape.slice_cols(v, h * dh, dh);
        let s = tape.matmul_nt(qh, kh);
        let s = tape.scale(s, scale);
        let p = tape.softmax(s, key_mask);
        heads.push(tape.matmul(p, vh));
    }
    let ctx = if n_heads == 1 {
        heads[0]
    } else {
        tape.concat_cols(&heads)
    };
    linear(tape, store, &format!("{name}.o"), ctx)
}

/// Inverted dropout; identity when `rng` is `None` or `rate` is zero.
pub fn dropout(tape: &mut Tape, x: Var, rate: f64, rng: Option<&mut Rng>) -> Var {
    let Some(rng) = rng else { return x };
    if rate <= 0.0 {
        return x;
    }
    let (rows, cols) = tape.value(x).shape();
    let keep = 1.0 / (1.0 - rate);
    let mask = (0..rows * cols)
        .map(|_| {
            if rng.random::<f64>() < rate {
                0.0
            } else {
                keep
            }
        })
        .collect();
    tape.mul_const(x, Matrix::from_vec(rows, cols, mask))
}
