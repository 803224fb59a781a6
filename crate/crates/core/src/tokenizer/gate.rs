//! Learnable spatial-spectral fusion gate.
//!
//! Each patch index i gets a weight α_i ∈ (0,1); the fused token is the
//! convex combination α_i·z_fc,i + (1−α_i)·z_hsi,i. The gate is either
//! content-driven (a linear form over the concatenated token pair, shared
//! across branches) or positional (one free logit per patch index).

use super::embed::TokenGrid;
use crate::error::{Error, Result};
use crate::numeric::{DenseMatrix, Tape, Var};

/// Gate parameterization. Content mode is branch-agnostic; positional
/// mode is tied to a specific grid size through its logit count.
#[derive(Debug, Clone, PartialEq)]
pub enum GateParams {
    /// α_i = sigmoid(w_g' . [z_fc,i ; z_hsi,i] + b_g), w_g is (2d) x 1.
    Content { w_g: DenseMatrix, b_g: f64 },
    /// α_i = sigmoid(logits[i]).
    Positional { logits: Vec<f64> },
}

/// Everything the dual tokenizer owns: one embedding per branch plus the
/// fusion gate.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams {
    pub e_fc: DenseMatrix,
    pub b_fc: DenseMatrix,
    pub e_hsi: DenseMatrix,
    pub b_hsi: DenseMatrix,
    pub gate: GateParams,
}

impl FusionParams {
    pub fn new(
        e_fc: DenseMatrix,
        b_fc: DenseMatrix,
        e_hsi: DenseMatrix,
        b_hsi: DenseMatrix,
        gate: GateParams,
    ) -> Result<Self> {
        let d = e_fc.cols();
        if e_hsi.cols() != d {
            return Err(Error::shape("fusion embeddings", e_fc.shape(), e_hsi.shape()));
        }
        if b_fc.shape() != (1, d) || b_hsi.shape() != (1, d) {
            return Err(Error::Config("fusion biases must be 1 x d".into()));
        }
        if let GateParams::Content { w_g, .. } = &gate {
            if w_g.shape() != (2 * d, 1) {
                return Err(Error::shape("content gate", (2 * d, 1), w_g.shape()));
            }
        }
        Ok(FusionParams { e_fc, b_fc, e_hsi, b_hsi, gate })
    }

    pub fn dim(&self) -> usize {
        self.e_fc.cols()
    }
}

fn check_pair(z_fc: &TokenGrid, z_hsi: &TokenGrid) -> Result<()> {
    if z_fc.count() != z_hsi.count() || z_fc.dim() != z_hsi.dim() {
        return Err(Error::shape(
            "fusion pair",
            (z_fc.count(), z_fc.dim()),
            (z_hsi.count(), z_hsi.dim()),
        ));
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Per-patch gate values for a token pair.
pub fn compute_alpha(
    z_fc: &TokenGrid,
    z_hsi: &TokenGrid,
    params: &FusionParams,
) -> Result<Vec<f64>> {
    check_pair(z_fc, z_hsi)?;
    let (m, d) = (z_fc.count(), z_fc.dim());
    match &params.gate {
        GateParams::Content { w_g, b_g } => {
            if w_g.shape() != (2 * d, 1) {
                return Err(Error::shape("content gate", (2 * d, 1), w_g.shape()));
            }
            let w = w_g.as_slice();
            Ok((0..m)
                .map(|i| {
                    let s_fc: f64 = z_fc.token(i).iter().zip(&w[..d]).map(|(z, wk)| z * wk).sum();
                    let s_hsi: f64 =
                        z_hsi.token(i).iter().zip(&w[d..]).map(|(z, wk)| z * wk).sum();
                    sigmoid(s_fc + s_hsi + b_g)
                })
                .collect())
        }
        GateParams::Positional { logits } => {
            if logits.len() != m {
                return Err(Error::Config(format!(
                    "positional gate has {} logits for {m} patches",
                    logits.len()
                )));
            }
            Ok(logits.iter().map(|&l| sigmoid(l)).collect())
        }
    }
}

/// Convex combination z_i = α_i·z_fc,i + (1−α_i)·z_hsi,i.
///
/// Endpoints are bitwise: α_i = 1 copies the fc token, α_i = 0 copies the
/// hsi token. Equal components pass through unchanged and every other
/// component is clamped into the closed interval spanned by its inputs,
/// so convexity holds exactly despite rounding.
pub fn fuse_tokens(z_fc: &TokenGrid, z_hsi: &TokenGrid, alpha: &[f64]) -> Result<TokenGrid> {
    check_pair(z_fc, z_hsi)?;
    let (m, d) = (z_fc.count(), z_fc.dim());
    if alpha.len() != m {
        return Err(Error::Config(format!("{} gate values for {m} patches", alpha.len())));
    }
    if let Some(a) = alpha.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(Error::Domain(format!("gate value {a} outside [0, 1]")));
    }
    let mut out = DenseMatrix::zeros(m, d);
    for i in 0..m {
        let (fc, hsi) = (z_fc.token(i), z_hsi.token(i));
        let row = out.row_mut(i);
        let a = alpha[i];
        if a == 1.0 {
            row.copy_from_slice(fc);
        } else if a == 0.0 {
            row.copy_from_slice(hsi);
        } else {
            for j in 0..d {
                row[j] = if fc[j] == hsi[j] {
                    fc[j]
                } else {
                    let (lo, hi) = (fc[j].min(hsi[j]), fc[j].max(hsi[j]));
                    (a * fc[j] + (1.0 - a) * hsi[j]).clamp(lo, hi)
                };
            }
        }
    }
    TokenGrid::new(out, z_fc.grid_h(), z_fc.grid_w())
}

/// Tape form of the content gate: sigmoid([z_fc z_hsi] . w_g + b_g), M x 1.
pub fn alpha_content_t(
    tape: &mut Tape,
    z_fc: Var,
    z_hsi: Var,
    w_g: Var,
    b_g: Var,
) -> Result<Var> {
    let cat = tape.concat_cols(z_fc, z_hsi)?;
    let scores = tape.matmul(cat, w_g)?;
    let shifted = tape.add_row_broadcast(scores, b_g)?;
    Ok(tape.sigmoid(shifted))
}

/// Tape form of the positional gate: sigmoid over a free logit column.
pub fn alpha_positional_t(tape: &mut Tape, logits: Var) -> Var {
    tape.sigmoid(logits)
}

/// Tape form of the fusion: α broadcast down columns of each branch.
/// No clamping here; training tolerates ulp-level interval leaks and
/// needs the combination kept smooth.
pub fn fuse_tokens_t(tape: &mut Tape, z_fc: Var, z_hsi: Var, alpha: Var) -> Result<Var> {
    let (m, _) = tape.value(alpha).shape();
    let ones = tape.leaf(DenseMatrix::filled(m, 1, 1.0));
    let rest = tape.sub(ones, alpha)?;
    let a_fc = tape.mul_col_broadcast(z_fc, alpha)?;
    let a_hsi = tape.mul_col_broadcast(z_hsi, rest)?;
    tape.add(a_fc, a_hsi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{grad_check, ParamStore, ProbePlan, Tape};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;
    use std::collections::BTreeMap;

    fn grid(rows: Vec<Vec<f64>>) -> TokenGrid {
        let m = rows.len();
        TokenGrid::new(DenseMatrix::from_rows(&rows).unwrap(), m, 1).unwrap()
    }

    fn random_grid(rng: &mut ChaCha20Rng, m: usize, d: usize) -> TokenGrid {
        TokenGrid::new(
            DenseMatrix::from_fn(m, d, |_, _| rng.random::<f64>() * 2.0 - 1.0),
            m,
            1,
        )
        .unwrap()
    }

    fn content_params(d: usize, w_g: DenseMatrix, b_g: f64) -> FusionParams {
        FusionParams::new(
            DenseMatrix::identity(d),
            DenseMatrix::zeros(1, d),
            DenseMatrix::identity(d),
            DenseMatrix::zeros(1, d),
            GateParams::Content { w_g, b_g },
        )
        .unwrap()
    }

    #[test]
    fn zero_content_gate_is_half() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let (z_fc, z_hsi) = (random_grid(&mut rng, 6, 4), random_grid(&mut rng, 6, 4));
        let params = content_params(4, DenseMatrix::zeros(8, 1), 0.0);
        let alpha = compute_alpha(&z_fc, &z_hsi, &params).unwrap();
        assert!(alpha.iter().all(|&a| a == 0.5));
    }

    #[test]
    fn saturated_positional_logit() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let (z_fc, z_hsi) = (random_grid(&mut rng, 3, 4), random_grid(&mut rng, 3, 4));
        let params = FusionParams::new(
            DenseMatrix::identity(4),
            DenseMatrix::zeros(1, 4),
            DenseMatrix::identity(4),
            DenseMatrix::zeros(1, 4),
            GateParams::Positional { logits: vec![20.0, 0.0, -20.0] },
        )
        .unwrap();
        let alpha = compute_alpha(&z_fc, &z_hsi, &params).unwrap();
        assert!(alpha[0] > 0.999999);
        assert_eq!(alpha[1], 0.5);
        assert!(alpha[2] < 1e-6);
    }

    #[test]
    fn fusion_arithmetic() {
        let z_fc = grid(vec![vec![2.0, 4.0]]);
        let z_hsi = grid(vec![vec![0.0, 2.0]]);
        let fused = fuse_tokens(&z_fc, &z_hsi, &[0.5]).unwrap();
        assert_eq!(fused.token(0), &[1.0, 3.0]);
    }

    #[test]
    fn endpoints_copy_bits() {
        let z_fc = grid(vec![vec![-0.0, 1.5, f64::MIN_POSITIVE]]);
        let z_hsi = grid(vec![vec![7.0, -3.0, 2.0]]);
        let ones = fuse_tokens(&z_fc, &z_hsi, &[1.0]).unwrap();
        for (a, b) in ones.token(0).iter().zip(z_fc.token(0)) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        let zeros = fuse_tokens(&z_fc, &z_hsi, &[0.0]).unwrap();
        for (a, b) in zeros.token(0).iter().zip(z_hsi.token(0)) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn equal_inputs_pass_through_exactly() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let z = random_grid(&mut rng, 5, 7);
        for &a in &[0.0, 0.1, 0.3, 0.5, 0.9999, 1.0] {
            let fused = fuse_tokens(&z, &z, &vec![a; 5]).unwrap();
            assert_eq!(fused.tokens(), z.tokens(), "alpha = {a}");
        }
    }

    #[test]
    fn fused_components_stay_in_interval() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        for _ in 0..50 {
            let (z_fc, z_hsi) = (random_grid(&mut rng, 4, 6), random_grid(&mut rng, 4, 6));
            let alpha: Vec<f64> = (0..4).map(|_| rng.random::<f64>()).collect();
            let fused = fuse_tokens(&z_fc, &z_hsi, &alpha).unwrap();
            for i in 0..4 {
                for j in 0..6 {
                    let (a, b) = (z_fc.token(i)[j], z_hsi.token(i)[j]);
                    let v = fused.token(i)[j];
                    assert!(v >= a.min(b) && v <= a.max(b));
                }
            }
        }
    }

    #[test]
    fn out_of_range_alpha_is_rejected() {
        let z = grid(vec![vec![1.0]]);
        let err = fuse_tokens(&z, &z, &[1.25]).unwrap_err();
        assert!(matches!(err, Error::Domain(_)), "{err}");
        assert!(fuse_tokens(&z, &z, &[-0.1]).is_err());
    }

    #[test]
    fn mismatched_grids_are_rejected() {
        let z_fc = grid(vec![vec![1.0, 2.0]]);
        let z_hsi = grid(vec![vec![1.0]]);
        assert!(compute_alpha(
            &z_fc,
            &z_hsi,
            &content_params(2, DenseMatrix::zeros(4, 1), 0.0)
        )
        .is_err());
        assert!(fuse_tokens(&z_fc, &z_hsi, &[0.5]).is_err());
    }

    #[test]
    fn gate_gradient_matches_finite_differences() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let (m, d) = (6, 4);
        let z_fc = DenseMatrix::from_fn(m, d, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let z_hsi = DenseMatrix::from_fn(m, d, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let mut store = ParamStore::new();
        store
            .insert("w_g", DenseMatrix::from_fn(2 * d, 1, |_, _| rng.random::<f64>() - 0.5))
            .unwrap();
        store.insert("b_g", DenseMatrix::filled(1, 1, 0.2)).unwrap();
        let z_fc2 = z_fc.clone();
        let z_hsi2 = z_hsi.clone();
        let report = grad_check(
            &move |store: &ParamStore, tape: &mut Tape| {
                let w_g = tape.param(store.get("w_g")?.clone());
                let b_g = tape.param(store.get("b_g")?.clone());
                let fc = tape.leaf(z_fc2.clone());
                let hsi = tape.leaf(z_hsi2.clone());
                let alpha = alpha_content_t(tape, fc, hsi, w_g, b_g)?;
                let loss = tape.sum_all(alpha);
                let mut bound = BTreeMap::new();
                bound.insert("w_g".to_string(), w_g);
                bound.insert("b_g".to_string(), b_g);
                Ok((loss, bound))
            },
            &store,
            1e-5,
            1e-6,
            ProbePlan::Exhaustive,
        )
        .unwrap();
        assert!(report.pass(), "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn tape_fusion_matches_value_fusion() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let (z_fc, z_hsi) = (random_grid(&mut rng, 5, 3), random_grid(&mut rng, 5, 3));
        let alpha: Vec<f64> = (0..5).map(|_| 0.2 + 0.6 * rng.random::<f64>()).collect();
        let expect = fuse_tokens(&z_fc, &z_hsi, &alpha).unwrap();

        let mut tape = Tape::new();
        let fc = tape.leaf(z_fc.tokens().clone());
        let hsi = tape.leaf(z_hsi.tokens().clone());
        let a = tape.leaf(DenseMatrix::from_vec(5, 1, alpha).unwrap());
        let fused = fuse_tokens_t(&mut tape, fc, hsi, a).unwrap();
        let got = tape.value(fused);
        for i in 0..5 {
            for j in 0..3 {
                assert!((got.get(i, j) - expect.token(i)[j]).abs() < 1e-15);
            }
        }
    }
}
