//! Linear patch embedding.

use super::patches::PatchSet;
use crate::error::{Error, Result};
use crate::numeric::DenseMatrix;

/// Token matrix (one row per patch) together with the patch grid it
/// came from, so spatial structure survives the flattening.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenGrid {
    tokens: DenseMatrix,
    grid_h: usize,
    grid_w: usize,
}

impl TokenGrid {
    pub fn new(tokens: DenseMatrix, grid_h: usize, grid_w: usize) -> Result<Self> {
        if tokens.rows() != grid_h * grid_w {
            return Err(Error::Config(format!(
                "token grid {grid_h}x{grid_w} needs {} rows, got {}",
                grid_h * grid_w,
                tokens.rows()
            )));
        }
        Ok(TokenGrid { tokens, grid_h, grid_w })
    }

    pub fn tokens(&self) -> &DenseMatrix {
        &self.tokens
    }

    pub fn into_tokens(self) -> DenseMatrix {
        self.tokens
    }

    pub fn grid_h(&self) -> usize {
        self.grid_h
    }

    pub fn grid_w(&self) -> usize {
        self.grid_w
    }

    pub fn count(&self) -> usize {
        self.tokens.rows()
    }

    pub fn dim(&self) -> usize {
        self.tokens.cols()
    }

    pub fn token(&self, m: usize) -> &[f64] {
        self.tokens.row(m)
    }
}

/// Project every flattened patch through `e` ((C.P.P) x d) and add the
/// bias `b` (1 x d): token_m = e' . patch_m + b.
pub fn embed_patches(ps: &PatchSet, e: &DenseMatrix, b: &DenseMatrix) -> Result<TokenGrid> {
    let x = ps.matrix();
    if e.rows() != x.cols() {
        return Err(Error::shape("embed", x.shape(), e.shape()));
    }
    if b.shape() != (1, e.cols()) {
        return Err(Error::shape("embed bias", (1, e.cols()), b.shape()));
    }
    let mut tokens = x.matmul(e)?;
    for m in 0..tokens.rows() {
        let row = tokens.row_mut(m);
        for (t, &bias) in row.iter_mut().zip(b.row(0)) {
            *t += bias;
        }
    }
    TokenGrid::new(tokens, ps.grid_h(), ps.grid_w())
}
