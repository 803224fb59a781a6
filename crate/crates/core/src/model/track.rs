//! Frame-by-frame tracking loop.

use super::config::ModelConfig;
use super::crop::CropWindow;
use super::forward::{
    backbone_forward_t, predict_t, siamese_fuse_t, tokenize_branch, AlphaPolicy, Branch,
    BranchFrames, ModelVars,
};
use super::params::hsi_bands;
use super::train::{SEARCH_SCALE, TEMPLATE_SCALE};
use crate::data::{pad_bands, HsiCube, SequenceRecord};
use crate::error::{Error, Result};
use crate::geom::Bbox;
use crate::numeric::{DenseMatrix, ParamStore, Tape};
use crate::tokenizer::TokenGrid;

/// Tracking state between frames. The template is embedded once at
/// initialization and never updated.
#[derive(Debug, Clone)]
pub struct TrackerState {
    pub template_tokens: TokenGrid,
    pub prev_box: Bbox,
    pub frame_index: usize,
    pub lost: bool,
}

/// Per-token classification scores and decoded offsets for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxPrediction {
    /// Sigmoid scores, row-major over the search grid, each in [0, 1].
    pub cls_map: DenseMatrix,
    /// Softplus offsets (l, t, r, b) per cell, fractions of search size.
    pub box_map: DenseMatrix,
}

/// Symmetric cosine taper, 1.0 at the center. Mirror symmetry is exact
/// so equal scores tie symmetrically and resolve by the row-major rule.
pub fn hanning(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    let mut h = vec![0.0; n];
    for k in 0..n / 2 {
        let v = 0.5 - 0.5 * (std::f64::consts::TAU * k as f64 / (n - 1) as f64).cos();
        h[k] = v;
        h[n - 1 - k] = v;
    }
    if n % 2 == 1 {
        h[n / 2] = 1.0;
    }
    h
}

/// Argmax with ties broken toward the lowest row-major index.
pub fn select_cell(scores: &DenseMatrix) -> (usize, usize) {
    let (rows, cols) = scores.shape();
    let mut best = (0usize, 0usize);
    let mut best_v = f64::NEG_INFINITY;
    for i in 0..rows {
        for j in 0..cols {
            let v = scores.get(i, j);
            if v > best_v {
                best_v = v;
                best = (i, j);
            }
        }
    }
    best
}

/// Decode the box predicted at one grid cell into search-crop pixels.
pub fn decode_cell_box(
    cell: (usize, usize),
    offsets: &[f64],
    grid: usize,
    search_size: usize,
) -> Bbox {
    let s = search_size as f64;
    let cell_px = s / grid as f64;
    let (i, j) = cell;
    let (cx, cy) = ((j as f64 + 0.5) * cell_px, (i as f64 + 0.5) * cell_px);
    let (l, t, r, b) = (offsets[0], offsets[1], offsets[2], offsets[3]);
    let x1 = cx - l * s;
    let y1 = cy - t * s;
    Bbox::new(x1, y1, (l + r) * s, (t + b) * s)
}

fn embed_template(
    store: &ParamStore,
    cfg: &ModelConfig,
    policy: AlphaPolicy,
    fc: &HsiCube,
    hsi: &HsiCube,
) -> Result<TokenGrid> {
    let mut tape = Tape::new();
    let vars = ModelVars::bind_frozen(&mut tape, store);
    let (tokens, _) =
        tokenize_branch(&mut tape, &vars, cfg, policy, BranchFrames { fc, hsi }, Branch::Template)?;
    let feat = backbone_forward_t(&mut tape, &vars, cfg, tokens, Branch::Template)?;
    let grid = cfg.template_grid();
    TokenGrid::new(tape.value(feat).clone(), grid, grid)
}

/// Start tracking: crop the template around the first-frame box and
/// cache its backbone features.
pub fn init_tracker(
    store: &ParamStore,
    cfg: &ModelConfig,
    policy: AlphaPolicy,
    fc0: &HsiCube,
    hsi0: &HsiCube,
    gt0: &Bbox,
) -> Result<TrackerState> {
    if !(gt0.w > 0.0 && gt0.h > 0.0 && gt0.is_finite()) {
        return Err(Error::Config(format!("initial box {gt0:?} is degenerate")));
    }
    let bands = hsi_bands(store)?;
    let win = CropWindow::around(gt0, TEMPLATE_SCALE, cfg.template_size);
    let t_fc = win.extract(fc0)?;
    let t_hsi = pad_bands(&win.extract(hsi0)?, bands)?;
    let template_tokens = embed_template(store, cfg, policy, &t_fc, &t_hsi)?;
    Ok(TrackerState { template_tokens, prev_box: *gt0, frame_index: 0, lost: false })
}

/// Run the model on one frame's search window.
pub fn predict_frame(
    state: &TrackerState,
    store: &ParamStore,
    cfg: &ModelConfig,
    policy: AlphaPolicy,
    fc: &HsiCube,
    hsi: &HsiCube,
) -> Result<(BoxPrediction, CropWindow)> {
    let bands = hsi_bands(store)?;
    let win = CropWindow::around(&state.prev_box, SEARCH_SCALE, cfg.search_size);
    let s_fc = win.extract(fc)?;
    let s_hsi = pad_bands(&win.extract(hsi)?, bands)?;

    let mut tape = Tape::new();
    let vars = ModelVars::bind_frozen(&mut tape, store);
    let t_feat = tape.leaf(state.template_tokens.tokens().clone());
    let (s_tokens, _) = tokenize_branch(
        &mut tape,
        &vars,
        cfg,
        policy,
        BranchFrames { fc: &s_fc, hsi: &s_hsi },
        Branch::Search,
    )?;
    let s_feat = backbone_forward_t(&mut tape, &vars, cfg, s_tokens, Branch::Search)?;
    let fused = siamese_fuse_t(&mut tape, &vars, cfg, t_feat, s_feat)?;
    let (cls_logits, box_raw) = predict_t(&mut tape, &vars, fused)?;
    let cls_v = tape.sigmoid(cls_logits);
    let box_v = tape.softplus(box_raw);

    let grid = cfg.search_grid();
    let flat = tape.value(cls_v);
    let cls_map = DenseMatrix::from_fn(grid, grid, |i, j| flat.get(i * grid + j, 0));
    let box_map = tape.value(box_v).clone();
    if !cls_map.is_finite() || !box_map.is_finite() {
        return Err(Error::NonFinite { context: format!("frame {} prediction", state.frame_index) });
    }
    Ok((BoxPrediction { cls_map, box_map }, win))
}

/// Advance one frame: window the scores, pick the best cell, decode and
/// clamp the box. A box with no frame overlap marks the track lost.
pub fn track_step(
    state: &mut TrackerState,
    store: &ParamStore,
    cfg: &ModelConfig,
    policy: AlphaPolicy,
    fc: &HsiCube,
    hsi: &HsiCube,
) -> Result<Bbox> {
    let (pred, win) = predict_frame(state, store, cfg, policy, fc, hsi)?;
    let grid = cfg.search_grid();
    let taper = hanning(grid);
    let penalized =
        DenseMatrix::from_fn(grid, grid, |i, j| pred.cls_map.get(i, j) * taper[i] * taper[j]);
    let cell = select_cell(&penalized);
    let offsets = pred.box_map.row(cell.0 * grid + cell.1);
    let crop_box = decode_cell_box(cell, offsets, grid, cfg.search_size);
    let frame_box = win.to_frame(&crop_box);
    let (w, h) = (fc.width() as f64, fc.height() as f64);
    if frame_box.outside_frame(w, h) {
        state.lost = true;
    }
    let clamped = frame_box.clamp_to_frame(w, h);
    state.prev_box = clamped;
    state.frame_index += 1;
    Ok(clamped)
}

/// Track a whole sequence. Frame 0 reports the ground-truth box it was
/// initialized with, matching the usual one-pass evaluation protocol.
pub fn track_sequence(
    store: &ParamStore,
    cfg: &ModelConfig,
    policy: AlphaPolicy,
    record: &SequenceRecord,
) -> Result<Vec<Bbox>> {
    record.validate()?;
    let mut state = init_tracker(
        store,
        cfg,
        policy,
        &record.false_color[0],
        &record.frames[0],
        &record.gt_boxes[0],
    )?;
    let mut boxes = Vec::with_capacity(record.len());
    boxes.push(record.gt_boxes[0]);
    for k in 1..record.len() {
        boxes.push(track_step(
            &mut state,
            store,
            cfg,
            policy,
            &record.false_color[k],
            &record.frames[k],
        )?);
    }
    Ok(boxes)
}
