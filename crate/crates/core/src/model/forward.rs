//! Full forward pass: dual tokenization, shared backbone, encoder-decoder
//! fusion, and the prediction heads, all built on one tape.

use super::config::{GateMode, ModelConfig, PATCH};
use crate::data::HsiCube;
use crate::error::{Error, Result};
use crate::numeric::{
    cross_attention_block, linear, self_attention_block, AttnParams, BlockParams, DenseMatrix,
    ParamStore, Tape, Var, WindowSpec,
};
use crate::tokenizer::{alpha_content_t, extract_patches, fuse_tokens_t};
use std::collections::BTreeMap;

/// Which tower a crop flows through. The towers share every attention
/// weight; only positional/branch embeddings and grid sizes differ.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Template,
    Search,
}

/// How fusion weights are produced for a forward pass.
///
/// `Fixed(1.0)` and `Fixed(0.0)` are hard endpoints: the unused cube is
/// never tokenized, so its contents cannot influence any output bit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlphaPolicy {
    Gate(GateMode),
    Fixed(f64),
}

/// One frame's aligned crops for a single branch.
#[derive(Debug, Clone, Copy)]
pub struct BranchFrames<'a> {
    pub fc: &'a HsiCube,
    pub hsi: &'a HsiCube,
}

/// Parameter store bound onto a tape, one `Var` per named tensor.
#[derive(Debug)]
pub struct ModelVars {
    vars: BTreeMap<String, Var>,
}

impl ModelVars {
    /// Bind every parameter as a differentiable tape input.
    pub fn bind(tape: &mut Tape, store: &ParamStore) -> Self {
        Self::bind_inner(tape, store, true)
    }

    /// Bind every parameter as a constant (inference paths).
    pub fn bind_frozen(tape: &mut Tape, store: &ParamStore) -> Self {
        Self::bind_inner(tape, store, false)
    }

    fn bind_inner(tape: &mut Tape, store: &ParamStore, trainable: bool) -> Self {
        let mut vars = BTreeMap::new();
        for (name, value) in store.iter() {
            let var = if trainable {
                tape.param(value.clone())
            } else {
                tape.leaf(value.clone())
            };
            vars.insert(name.to_string(), var);
        }
        ModelVars { vars }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars.get(name).copied().ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    /// Names and tape handles, in name order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(n, v)| (n.as_str(), *v))
    }

    fn block(&self, prefix: &str) -> Result<BlockParams> {
        let g = |suffix: &str| self.get(&format!("{prefix}.{suffix}"));
        Ok(BlockParams {
            attn: AttnParams {
                wq: g("attn.wq")?,
                bq: g("attn.bq")?,
                wk: g("attn.wk")?,
                bk: g("attn.bk")?,
                wv: g("attn.wv")?,
                bv: g("attn.bv")?,
                wo: g("attn.wo")?,
                bo: g("attn.bo")?,
            },
            ln1_g: g("ln1.g")?,
            ln1_b: g("ln1.b")?,
            ln2_g: g("ln2.g")?,
            ln2_b: g("ln2.b")?,
            mlp_w1: g("mlp.w1")?,
            mlp_b1: g("mlp.b1")?,
            mlp_w2: g("mlp.w2")?,
            mlp_b2: g("mlp.b2")?,
        })
    }
}

fn crop_size(cfg: &ModelConfig, branch: Branch) -> usize {
    match branch {
        Branch::Template => cfg.template_size,
        Branch::Search => cfg.search_size,
    }
}

fn embed_cube(
    tape: &mut Tape,
    cube: &HsiCube,
    e: Var,
    b: Var,
    what: &str,
    size: usize,
) -> Result<Var> {
    if cube.height() != size || cube.width() != size {
        return Err(Error::Config(format!(
            "{what} crop is {}x{}, expected {size}x{size}",
            cube.height(),
            cube.width()
        )));
    }
    let ps = extract_patches(cube, PATCH)?;
    let expect_rows = tape.value(e).rows();
    if ps.matrix().cols() != expect_rows {
        return Err(Error::Config(format!(
            "{what} crop has {} bands but the embedding expects {}",
            cube.bands(),
            expect_rows / (PATCH * PATCH)
        )));
    }
    let x = tape.leaf(ps.matrix().clone());
    linear(tape, x, e, b)
}

/// Tokenize one branch's crops and fuse them per the policy. Returns the
/// fused M x d tokens and, for gated modes, the M x 1 gate values.
pub fn tokenize_branch(
    tape: &mut Tape,
    vars: &ModelVars,
    cfg: &ModelConfig,
    policy: AlphaPolicy,
    frames: BranchFrames<'_>,
    branch: Branch,
) -> Result<(Var, Option<Var>)> {
    let size = crop_size(cfg, branch);
    let fc_tokens = |tape: &mut Tape| {
        let e = vars.get("tok.E_fc")?;
        let b = vars.get("tok.b_fc")?;
        embed_cube(tape, frames.fc, e, b, "false-color", size)
    };
    let hsi_tokens = |tape: &mut Tape| {
        let e = vars.get("tok.E_hsi")?;
        let b = vars.get("tok.b_hsi")?;
        embed_cube(tape, frames.hsi, e, b, "spectral", size)
    };
    match policy {
        AlphaPolicy::Fixed(a) if a == 1.0 => Ok((fc_tokens(tape)?, None)),
        AlphaPolicy::Fixed(a) if a == 0.0 => Ok((hsi_tokens(tape)?, None)),
        AlphaPolicy::Fixed(a) => {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::Domain(format!("fixed gate value {a} outside [0, 1]")));
            }
            let z_fc = fc_tokens(tape)?;
            let z_hsi = hsi_tokens(tape)?;
            let m = tape.value(z_fc).rows();
            let alpha = tape.leaf(DenseMatrix::filled(m, 1, a));
            Ok((fuse_tokens_t(tape, z_fc, z_hsi, alpha)?, None))
        }
        AlphaPolicy::Gate(GateMode::Content) => {
            let z_fc = fc_tokens(tape)?;
            let z_hsi = hsi_tokens(tape)?;
            let w = vars.get("tok.gate.w")?;
            let b = vars.get("tok.gate.b")?;
            let alpha = alpha_content_t(tape, z_fc, z_hsi, w, b)?;
            Ok((fuse_tokens_t(tape, z_fc, z_hsi, alpha)?, Some(alpha)))
        }
        AlphaPolicy::Gate(GateMode::Positional) => {
            let z_fc = fc_tokens(tape)?;
            let z_hsi = hsi_tokens(tape)?;
            let logits = match branch {
                Branch::Template => vars.get("tok.gate.logits_t")?,
                Branch::Search => vars.get("tok.gate.logits_s")?,
            };
            let alpha = tape.sigmoid(logits);
            Ok((fuse_tokens_t(tape, z_fc, z_hsi, alpha)?, Some(alpha)))
        }
    }
}

/// Shared-weight backbone: add the branch's positional embedding, then
/// run the attention blocks (windowed if configured).
pub fn backbone_forward_t(
    tape: &mut Tape,
    vars: &ModelVars,
    cfg: &ModelConfig,
    tokens: Var,
    branch: Branch,
) -> Result<Var> {
    let (pos_name, grid) = match branch {
        Branch::Template => ("bb.pos_t", cfg.template_grid()),
        Branch::Search => ("bb.pos_s", cfg.search_grid()),
    };
    let pos = vars.get(pos_name)?;
    let mut x = tape.add(tokens, pos)?;
    let window = cfg.window.map(|w| WindowSpec { grid, window: w });
    for i in 0..cfg.backbone_blocks {
        let p = vars.block(&format!("bb.{i}"))?;
        x = self_attention_block(tape, x, &p, cfg.heads, window)?;
    }
    Ok(x)
}

/// Encoder-decoder fusion: self-attention over the concatenated branch
/// features (tagged by branch-identity embeddings), then cross-attention
/// with the search slice as queries. Returns M_s x d tokens.
pub fn siamese_fuse_t(
    tape: &mut Tape,
    vars: &ModelVars,
    cfg: &ModelConfig,
    t_feat: Var,
    s_feat: Var,
) -> Result<Var> {
    let bt = vars.get("fuse.branch_t")?;
    let bs = vars.get("fuse.branch_s")?;
    let t_tag = tape.add_row_broadcast(t_feat, bt)?;
    let s_tag = tape.add_row_broadcast(s_feat, bs)?;
    let m_t = tape.value(t_tag).rows();
    let m_s = tape.value(s_tag).rows();
    let mut seq = tape.concat_rows(t_tag, s_tag)?;
    for i in 0..cfg.encoder_blocks {
        let p = vars.block(&format!("enc.{i}"))?;
        seq = self_attention_block(tape, seq, &p, cfg.heads, None)?;
    }
    let mut q = tape.slice_rows(seq, m_t, m_s)?;
    for i in 0..cfg.decoder_blocks {
        let p = vars.block(&format!("dec.{i}"))?;
        q = cross_attention_block(tape, q, seq, &p, cfg.heads)?;
    }
    Ok(q)
}

/// Prediction heads over fused search tokens. Returns raw per-token
/// classification logits (M x 1) and box offsets before softplus (M x 4).
pub fn predict_t(tape: &mut Tape, vars: &ModelVars, fused: Var) -> Result<(Var, Var)> {
    let head = |tape: &mut Tape, prefix: &str| -> Result<Var> {
        let w1 = vars.get(&format!("{prefix}.w1"))?;
        let b1 = vars.get(&format!("{prefix}.b1"))?;
        let w2 = vars.get(&format!("{prefix}.w2"))?;
        let b2 = vars.get(&format!("{prefix}.b2"))?;
        let h = linear(tape, fused, w1, b1)?;
        let h = tape.gelu(h);
        linear(tape, h, w2, b2)
    };
    let cls_logits = head(tape, "head.cls")?;
    let box_raw = head(tape, "head.box")?;
    Ok((cls_logits, box_raw))
}

/// Everything a training step needs from one template/search pair.
#[derive(Debug, Clone, Copy)]
pub struct PairForward {
    pub cls_logits: Var,
    pub box_raw: Var,
    pub alpha_t: Option<Var>,
    pub alpha_s: Option<Var>,
}

/// Run the whole pipeline for one pair of branch crops.
pub fn forward_pair(
    tape: &mut Tape,
    vars: &ModelVars,
    cfg: &ModelConfig,
    policy: AlphaPolicy,
    template: BranchFrames<'_>,
    search: BranchFrames<'_>,
) -> Result<PairForward> {
    let (t_tokens, alpha_t) = tokenize_branch(tape, vars, cfg, policy, template, Branch::Template)?;
    let (s_tokens, alpha_s) = tokenize_branch(tape, vars, cfg, policy, search, Branch::Search)?;
    let t_feat = backbone_forward_t(tape, vars, cfg, t_tokens, Branch::Template)?;
    let s_feat = backbone_forward_t(tape, vars, cfg, s_tokens, Branch::Search)?;
    let fused = siamese_fuse_t(tape, vars, cfg, t_feat, s_feat)?;
    let (cls_logits, box_raw) = predict_t(tape, vars, fused)?;
    Ok(PairForward { cls_logits, box_raw, alpha_t, alpha_s })
}
