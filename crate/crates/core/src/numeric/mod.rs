//! Dense numeric kernel: matrices, a reverse-mode tape, transformer
//! building blocks, checkpointing, and a finite-difference harness.

pub mod checkpoint;
pub mod gradcheck;
pub mod matrix;
pub mod tape;

pub use checkpoint::ParamStore;
pub use gradcheck::{grad_check, GradCheckReport, LossBuilder, ProbePlan};
pub use matrix::DenseMatrix;
pub use tape::{Grads, Tape, Var};

use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// x·w + b, with b broadcast across rows.
pub fn linear(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let xw = tape.matmul(x, w)?;
    tape.add_row_broadcast(xw, b)
}

/// Tape vars for one attention projection set.
#[derive(Debug, Clone, Copy)]
pub struct AttnParams {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
}

/// Tape vars for one transformer block: attention, two layer norms, MLP.
#[derive(Debug, Clone, Copy)]
pub struct BlockParams {
    pub attn: AttnParams,
    pub ln1_g: Var,
    pub ln1_b: Var,
    pub ln2_g: Var,
    pub ln2_b: Var,
    pub mlp_w1: Var,
    pub mlp_b1: Var,
    pub mlp_w2: Var,
    pub mlp_b2: Var,
}

/// Square token grid partitioned into non-overlapping square windows.
#[derive(Debug, Clone, Copy)]
pub struct WindowSpec {
    pub grid: usize,
    pub window: usize,
}

impl WindowSpec {
    pub fn validate(&self, m: usize) -> Result<()> {
        if self.grid * self.grid != m {
            return Err(Error::Config(format!(
                "windowed attention needs a square grid: {} tokens is not {}x{}",
                m, self.grid, self.grid
            )));
        }
        if self.window == 0 || self.grid % self.window != 0 {
            return Err(Error::Config(format!(
                "grid {} does not divide into windows of {}",
                self.grid, self.window
            )));
        }
        Ok(())
    }

    /// Token indices in window-major order: all tokens of window 0 first
    /// (row-major within the window), then window 1, and so on.
    pub fn partition(&self) -> Vec<usize> {
        let (g, w) = (self.grid, self.window);
        let per_side = g / w;
        let mut idx = Vec::with_capacity(g * g);
        for wr in 0..per_side {
            for wc in 0..per_side {
                for r in 0..w {
                    for c in 0..w {
                        idx.push((wr * w + r) * g + (wc * w + c));
                    }
                }
            }
        }
        idx
    }
}

fn invert_permutation(idx: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; idx.len()];
    for (i, &p) in idx.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// Multi-head attention with queries from `q` and keys/values from `kv`.
/// With a window spec (self-attention only), attention weights never
/// cross window boundaries.
pub fn multi_head_attention(
    tape: &mut Tape,
    q: Var,
    kv: Var,
    p: &AttnParams,
    heads: usize,
    window: Option<WindowSpec>,
) -> Result<Var> {
    let d = tape.value(q).cols();
    if heads == 0 || d % heads != 0 {
        return Err(Error::Config(format!("embedding width {d} not divisible by {heads} heads")));
    }
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();

    let qm = linear(tape, q, p.wq, p.bq)?;
    let km = linear(tape, kv, p.wk, p.bk)?;
    let vm = linear(tape, kv, p.wv, p.bv)?;

    // (start, len) spans of contiguous attention groups after optional
    // window reordering. Full attention is one span.
    let (qm, km, vm, spans, restore) = match window {
        None => {
            let mq = tape.value(qm).rows();
            (qm, km, vm, vec![(0usize, mq)], None)
        }
        Some(spec) => {
            let m = tape.value(q).rows();
            if m != tape.value(kv).rows() {
                return Err(Error::Config(
                    "windowed attention requires queries and keys from the same grid".into(),
                ));
            }
            spec.validate(m)?;
            let idx = spec.partition();
            let inv = invert_permutation(&idx);
            let qg = tape.gather_rows(qm, idx.clone())?;
            let kg = tape.gather_rows(km, idx.clone())?;
            let vg = tape.gather_rows(vm, idx)?;
            let per = spec.window * spec.window;
            let spans = (0..m / per).map(|i| (i * per, per)).collect();
            (qg, kg, vg, spans, Some(inv))
        }
    };

    // Per-span, per-head scaled dot-product attention, concatenated back
    // to M x d in head order.
    let mut span_outputs = Vec::with_capacity(spans.len());
    for &(start, len) in &spans {
        let qs = tape.slice_rows(qm, start, len)?;
        let ks = tape.slice_rows(km, start, len)?;
        let vs = tape.slice_rows(vm, start, len)?;
        let mut head_outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = tape.slice_cols(qs, h * dh, dh)?;
            let kh = tape.slice_cols(ks, h * dh, dh)?;
            let vh = tape.slice_cols(vs, h * dh, dh)?;
            let kt = tape.transpose(kh);
            let scores = tape.matmul(qh, kt)?;
            let scaled = tape.scale(scores, scale);
            let attn = tape.softmax_rows(scaled);
            head_outs.push(tape.matmul(attn, vh)?);
        }
        let mut concat = head_outs[0];
        for &h in &head_outs[1..] {
            concat = tape.concat_cols(concat, h)?;
        }
        span_outputs.push(concat);
    }
    let mut out = span_outputs[0];
    for &s in &span_outputs[1..] {
        out = tape.concat_rows(out, s)?;
    }
    if let Some(inv) = restore {
        out = tape.gather_rows(out, inv)?;
    }
    linear(tape, out, p.wo, p.bo)
}

fn mlp(tape: &mut Tape, x: Var, p: &BlockParams) -> Result<Var> {
    let h = linear(tape, x, p.mlp_w1, p.mlp_b1)?;
    let a = tape.gelu(h);
    linear(tape, a, p.mlp_w2, p.mlp_b2)
}

fn block_tail(tape: &mut Tape, x: Var, attended: Var, p: &BlockParams) -> Result<Var> {
    let r1 = tape.add(x, attended)?;
    let n1 = tape.layer_norm(r1, p.ln1_g, p.ln1_b, LAYER_NORM_EPS)?;
    let m = mlp(tape, n1, p)?;
    let r2 = tape.add(n1, m)?;
    tape.layer_norm(r2, p.ln2_g, p.ln2_b, LAYER_NORM_EPS)
}

/// Self-attention transformer block: attention + residual + layer norm,
/// MLP + residual + layer norm. Output shape equals input shape.
pub fn self_attention_block(
    tape: &mut Tape,
    x: Var,
    p: &BlockParams,
    heads: usize,
    window: Option<WindowSpec>,
) -> Result<Var> {
    let a = multi_head_attention(tape, x, x, &p.attn, heads, window)?;
    block_tail(tape, x, a, p)
}

/// Cross-attention transformer block: queries attend over `kv`, residual
/// path follows the queries.
pub fn cross_attention_block(
    tape: &mut Tape,
    q: Var,
    kv: Var,
    p: &BlockParams,
    heads: usize,
) -> Result<Var> {
    let a = multi_head_attention(tape, q, kv, &p.attn, heads, None)?;
    block_tail(tape, q, a, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha20Rng;
    use std::collections::BTreeMap;

    fn rand_matrix(rng: &mut ChaCha20Rng, rows: usize, cols: usize, s: f64) -> DenseMatrix {
        DenseMatrix::from_fn(rows, cols, |_, _| (rng.random::<f64>() - 0.5) * 2.0 * s)
    }

    fn block_store(rng: &mut ChaCha20Rng, d: usize) -> ParamStore {
        let mut store = ParamStore::new();
        for name in ["wq", "wk", "wv", "wo"] {
            store.insert(name, rand_matrix(rng, d, d, 0.4)).unwrap();
        }
        for name in ["bq", "bk", "bv", "bo"] {
            store.insert(name, rand_matrix(rng, 1, d, 0.1)).unwrap();
        }
        store.insert("ln1_g", DenseMatrix::filled(1, d, 1.0)).unwrap();
        store.insert("ln1_b", DenseMatrix::zeros(1, d)).unwrap();
        store.insert("ln2_g", DenseMatrix::filled(1, d, 1.0)).unwrap();
        store.insert("ln2_b", DenseMatrix::zeros(1, d)).unwrap();
        store.insert("mlp_w1", rand_matrix(rng, d, 4 * d, 0.3)).unwrap();
        store.insert("mlp_b1", rand_matrix(rng, 1, 4 * d, 0.1)).unwrap();
        store.insert("mlp_w2", rand_matrix(rng, 4 * d, d, 0.3)).unwrap();
        store.insert("mlp_b2", rand_matrix(rng, 1, d, 0.1)).unwrap();
        store
    }

    fn bind_block(store: &ParamStore, tape: &mut Tape) -> (BlockParams, BTreeMap<String, Var>) {
        let mut map = BTreeMap::new();
        let mut get = |name: &str, tape: &mut Tape| {
            let v = tape.param(store.get(name).unwrap().clone());
            map.insert(name.to_string(), v);
            v
        };
        let p = BlockParams {
            attn: AttnParams {
                wq: get("wq", tape),
                bq: get("bq", tape),
                wk: get("wk", tape),
                bk: get("bk", tape),
                wv: get("wv", tape),
                bv: get("bv", tape),
                wo: get("wo", tape),
                bo: get("bo", tape),
            },
            ln1_g: get("ln1_g", tape),
            ln1_b: get("ln1_b", tape),
            ln2_g: get("ln2_g", tape),
            ln2_b: get("ln2_b", tape),
            mlp_w1: get("mlp_w1", tape),
            mlp_b1: get("mlp_b1", tape),
            mlp_w2: get("mlp_w2", tape),
            mlp_b2: get("mlp_b2", tape),
        };
        (p, map)
    }

    #[test]
    fn identical_tokens_stay_identical() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let d = 8;
        let store = block_store(&mut rng, d);
        let mut tape = Tape::new();
        let (p, _) = bind_block(&store, &mut tape);
        let x = tape.leaf(DenseMatrix::from_fn(4, d, |_, j| 0.1 * j as f64 - 0.3));
        let out = self_attention_block(&mut tape, x, &p, 2, None).unwrap();
        let om = tape.value(out);
        assert_eq!(om.shape(), (4, d));
        for i in 1..4 {
            for j in 0..d {
                assert!((om.get(i, j) - om.get(0, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn block_preserves_shape_and_softmax_rows() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let d = 8;
        let store = block_store(&mut rng, d);
        let mut tape = Tape::new();
        let (p, _) = bind_block(&store, &mut tape);
        let x = tape.leaf(rand_matrix(&mut rng, 4, d, 1.0));
        let out = self_attention_block(&mut tape, x, &p, 2, None).unwrap();
        assert_eq!(tape.value(out).shape(), (4, d));
        assert!(tape.worst_softmax_row_defect() < 1e-12);
    }

    #[test]
    fn heads_must_divide_width() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let store = block_store(&mut rng, 8);
        let mut tape = Tape::new();
        let (p, _) = bind_block(&store, &mut tape);
        let x = tape.leaf(DenseMatrix::zeros(4, 8));
        let err = self_attention_block(&mut tape, x, &p, 3, None).unwrap_err();
        assert!(err.to_string().contains("heads"));
    }

    #[test]
    fn window_partition_reorders_and_restores() {
        let spec = WindowSpec { grid: 4, window: 2 };
        let idx = spec.partition();
        assert_eq!(idx[..4], [0, 1, 4, 5]);
        assert_eq!(idx[4..8], [2, 3, 6, 7]);
        let inv = invert_permutation(&idx);
        let restored: Vec<usize> = inv.iter().map(|&i| idx[i]).collect();
        assert_eq!(restored, (0..16).collect::<Vec<_>>());
    }

    #[test]
    fn windowed_attention_ignores_other_windows() {
        // Perturbing a token in window A must not change outputs of the raw
        // attention mix in window B. Layer norms are per-row, so the block
        // keeps the property.
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let d = 8;
        let store = block_store(&mut rng, d);
        let base = rand_matrix(&mut rng, 16, d, 1.0);
        let mut bumped = base.clone();
        bumped.set(0, 0, bumped.get(0, 0) + 5.0);

        let run = |input: &DenseMatrix| {
            let mut tape = Tape::new();
            let (p, _) = bind_block(&store, &mut tape);
            let x = tape.leaf(input.clone());
            let out = self_attention_block(
                &mut tape,
                x,
                &p,
                2,
                Some(WindowSpec { grid: 4, window: 2 }),
            )
            .unwrap();
            tape.value(out).clone()
        };
        let a = run(&base);
        let b = run(&bumped);
        // Token 0 lives in the top-left window {0,1,4,5}; token 10 is in the
        // bottom-right window and must be untouched.
        for j in 0..d {
            assert_eq!(a.get(10, j), b.get(10, j));
        }
        assert!((a.get(1, 0) - b.get(1, 0)).abs() > 0.0);
    }

    #[test]
    fn window_requires_square_divisible_grid() {
        let spec = WindowSpec { grid: 4, window: 3 };
        assert!(spec.validate(16).is_err());
        let spec = WindowSpec { grid: 4, window: 2 };
        assert!(spec.validate(12).is_err());
        assert!(spec.validate(16).is_ok());
    }

    #[test]
    fn self_attention_block_passes_gradient_check() {
        // The loss weights the output by a fixed random matrix. A bare sum
        // of squares would be nearly constant (each layer-normed row has a
        // fixed norm), leaving no gradient signal to compare against.
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let d = 8;
        let mut store = block_store(&mut rng, d);
        store.insert("x", rand_matrix(&mut rng, 4, d, 0.8)).unwrap();
        let weights = rand_matrix(&mut rng, 4, d, 1.0);
        let f = move |s: &ParamStore, t: &mut Tape| {
            let x = t.param(s.get("x")?.clone());
            let mut tmp_store = ParamStore::new();
            for (name, m) in s.iter() {
                if name != "x" {
                    tmp_store.insert(name, m.clone())?;
                }
            }
            let (p, mut map) = bind_block(&tmp_store, t);
            map.insert("x".to_string(), x);
            let out = self_attention_block(t, x, &p, 2, None)?;
            let c = t.leaf(weights.clone());
            let weighted = t.mul_elem(out, c)?;
            let loss = t.sum_all(weighted);
            Ok((loss, map))
        };
        let report =
            grad_check(&f, &store, 1e-5, 1e-6, ProbePlan::Random { per_block: 4, seed: 0 }).unwrap();
        assert!(report.pass(), "max rel err {} at {}", report.max_rel_err, report.worst_param);
    }

    #[test]
    fn cross_attention_follows_query_shape() {
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let d = 8;
        let store = block_store(&mut rng, d);
        let mut tape = Tape::new();
        let (p, _) = bind_block(&store, &mut tape);
        let q = tape.leaf(rand_matrix(&mut rng, 3, d, 1.0));
        let kv = tape.leaf(rand_matrix(&mut rng, 7, d, 1.0));
        let out = cross_attention_block(&mut tape, q, kv, &p, 2).unwrap();
        assert_eq!(tape.value(out).shape(), (3, d));
    }

    #[test]
    fn linear_is_exactly_linear() {
        // f(ax + by) = a f(x) + b f(y) - (a+b-1) b_vec, exactly.
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let w = rand_matrix(&mut rng, 3, 2, 1.0);
        let bvec = rand_matrix(&mut rng, 1, 2, 1.0);
        let x = rand_matrix(&mut rng, 2, 3, 1.0);
        let y = rand_matrix(&mut rng, 2, 3, 1.0);
        let (alpha, beta) = (2.0, -0.5);

        let apply = |input: &DenseMatrix| {
            let mut tape = Tape::new();
            let xi = tape.leaf(input.clone());
            let wi = tape.leaf(w.clone());
            let bi = tape.leaf(bvec.clone());
            let out = linear(&mut tape, xi, wi, bi).unwrap();
            tape.value(out).clone()
        };
        let combo = x.zip_map(&y, |a, b| alpha * a + beta * b).unwrap();
        let lhs = apply(&combo);
        let fx = apply(&x);
        let fy = apply(&y);
        for i in 0..lhs.rows() {
            for j in 0..lhs.cols() {
                let rhs =
                    alpha * fx.get(i, j) + beta * fy.get(i, j) - (alpha + beta - 1.0) * bvec.get(0, j);
                assert!((lhs.get(i, j) - rhs).abs() < 1e-12);
            }
        }
    }
}
