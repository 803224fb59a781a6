//! Tracking loss: classification BCE over the search grid plus IoU and
//! L1 box terms at the positive cell.

use super::config::ModelConfig;
use super::forward::PairForward;
use crate::error::{Error, Result};
use crate::geom::Bbox;
use crate::numeric::{DenseMatrix, Tape, Var};

/// Weights for the box terms; BCE always has weight 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub iou: f64,
    pub l1: f64,
}

/// Per-term scalar tape nodes for one sample or one batch.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub bce: Var,
    pub iou: Var,
    pub l1: Var,
}

/// Per-term loss values pulled off the tape.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct LossReport {
    pub total: f64,
    pub bce: f64,
    pub iou: f64,
    pub l1: f64,
}

impl LossReport {
    pub fn from_tape(tape: &Tape, vars: &LossVars) -> Self {
        let read = |v: Var| tape.value(v).get(0, 0);
        LossReport {
            total: read(vars.total),
            bce: read(vars.bce),
            iou: read(vars.iou),
            l1: read(vars.l1),
        }
    }

    /// Abort signal for diverged training; names the offending term.
    pub fn check_finite(&self) -> Result<()> {
        for (name, v) in [
            ("total", self.total),
            ("bce", self.bce),
            ("iou", self.iou),
            ("l1", self.l1),
        ] {
            if !v.is_finite() {
                return Err(Error::NonFinite { context: format!("{name} loss term = {v}") });
            }
        }
        Ok(())
    }
}

/// Index of the grid cell whose center is nearest the box center;
/// row-major first on ties.
pub fn positive_cell(gt: &Bbox, grid: usize, search_size: usize) -> usize {
    let cell = search_size as f64 / grid as f64;
    let (cx, cy) = gt.center();
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for i in 0..grid {
        for j in 0..grid {
            let (mx, my) = ((j as f64 + 0.5) * cell, (i as f64 + 0.5) * cell);
            let d = (mx - cx).powi(2) + (my - cy).powi(2);
            if d < best_d {
                best_d = d;
                best = i * grid + j;
            }
        }
    }
    best
}

fn const_scalar(tape: &mut Tape, v: f64) -> Var {
    tape.leaf(DenseMatrix::filled(1, 1, v))
}

/// Loss terms for one forward pass against a ground-truth box given in
/// search-crop pixels.
pub fn pair_loss(
    tape: &mut Tape,
    fwd: &PairForward,
    gt: &Bbox,
    cfg: &ModelConfig,
    weights: LossWeights,
) -> Result<LossVars> {
    let grid = cfg.search_grid();
    let m = grid * grid;
    let s = cfg.search_size as f64;
    let (gx1, gy1, gx2, gy2) = gt.corners();
    if !(gt.w > 0.0 && gt.h > 0.0) {
        return Err(Error::Config(format!("degenerate training box {gt:?}")));
    }
    let (gcx, gcy) = gt.center();
    if !(0.0..=s).contains(&gcx) || !(0.0..=s).contains(&gcy) {
        return Err(Error::Config(format!(
            "training box center ({gcx:.1}, {gcy:.1}) lies outside the search crop"
        )));
    }

    // Classification: binary target, positive at the nearest-center cell.
    let pos = positive_cell(gt, grid, cfg.search_size);
    let one_minus_t =
        tape.leaf(DenseMatrix::from_fn(m, 1, |i, _| if i == pos { 0.0 } else { 1.0 }));
    let miss = tape.mul_elem(one_minus_t, fwd.cls_logits)?;
    let neg_logits = tape.scale(fwd.cls_logits, -1.0);
    let sp = tape.softplus(neg_logits);
    let bce_terms = tape.add(miss, sp)?;
    let bce_sum = tape.sum_all(bce_terms);
    let bce = tape.scale(bce_sum, 1.0 / m as f64);

    // Box terms at the positive cell only.
    let raw = tape.gather_rows(fwd.box_raw, vec![pos])?;
    let off = tape.softplus(raw);
    let cell = cfg.search_size as f64 / grid as f64;
    let (ci, cj) = (pos / grid, pos % grid);
    let (mx, my) = ((cj as f64 + 0.5) * cell, (ci as f64 + 0.5) * cell);
    let mut corner = |k: usize, center: f64, sign: f64| -> Result<Var> {
        let o = tape.slice_cols(off, k, 1)?;
        let scaled = tape.scale(o, sign * s);
        let c = const_scalar(tape, center);
        tape.add(c, scaled)
    };
    let x1 = corner(0, mx, -1.0)?;
    let y1 = corner(1, my, -1.0)?;
    let x2 = corner(2, mx, 1.0)?;
    let y2 = corner(3, my, 1.0)?;

    let g_x1 = const_scalar(tape, gx1);
    let g_y1 = const_scalar(tape, gy1);
    let g_x2 = const_scalar(tape, gx2);
    let g_y2 = const_scalar(tape, gy2);

    let ix1 = tape.max_elem(x1, g_x1)?;
    let iy1 = tape.max_elem(y1, g_y1)?;
    let ix2 = tape.min_elem(x2, g_x2)?;
    let iy2 = tape.min_elem(y2, g_y2)?;
    let iw_raw = tape.sub(ix2, ix1)?;
    let ih_raw = tape.sub(iy2, iy1)?;
    let iw = tape.clamp_min(iw_raw, 0.0);
    let ih = tape.clamp_min(ih_raw, 0.0);
    let inter = tape.mul_elem(iw, ih)?;
    let pw = tape.sub(x2, x1)?;
    let ph = tape.sub(y2, y1)?;
    let area_p = tape.mul_elem(pw, ph)?;
    let area_g = const_scalar(tape, gt.area());
    let areas = tape.add(area_p, area_g)?;
    let union = tape.sub(areas, inter)?;
    let iou_v = tape.div_elem(inter, union)?;
    let one = const_scalar(tape, 1.0);
    let iou = tape.sub(one, iou_v)?;

    let mut l1_sum: Option<Var> = None;
    for (pred, gt_c) in [(x1, g_x1), (y1, g_y1), (x2, g_x2), (y2, g_y2)] {
        let diff = tape.sub(pred, gt_c)?;
        let a = tape.abs(diff);
        l1_sum = Some(match l1_sum {
            None => a,
            Some(acc) => tape.add(acc, a)?,
        });
    }
    let l1 = tape.scale(l1_sum.expect("four corners"), 1.0 / (4.0 * s));

    let iou_w = tape.scale(iou, weights.iou);
    let l1_w = tape.scale(l1, weights.l1);
    let partial = tape.add(bce, iou_w)?;
    let total = tape.add(partial, l1_w)?;
    Ok(LossVars { total, bce, iou, l1 })
}

/// Mean of per-sample loss nodes; all four reported terms are averaged
/// on the tape so the report matches what backward saw.
pub fn mean_loss(tape: &mut Tape, samples: &[LossVars]) -> Result<LossVars> {
    if samples.is_empty() {
        return Err(Error::Empty("loss batch".into()));
    }
    let k = 1.0 / samples.len() as f64;
    let mut mean_of = |pick: fn(&LossVars) -> Var| -> Result<Var> {
        let mut acc = pick(&samples[0]);
        for s in &samples[1..] {
            acc = tape.add(acc, pick(s))?;
        }
        Ok(tape.scale(acc, k))
    };
    Ok(LossVars {
        total: mean_of(|s| s.total)?,
        bce: mean_of(|s| s.bce)?,
        iou: mean_of(|s| s.iou)?,
        l1: mean_of(|s| s.l1)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::forward::PairForward;

    fn cfg16() -> ModelConfig {
        ModelConfig { d: 16, ..ModelConfig::default() }
    }

    /// Hand-built prediction: logits and raw offsets as plain leaves.
    fn fake_forward(tape: &mut Tape, logits: DenseMatrix, raw: DenseMatrix) -> PairForward {
        PairForward {
            cls_logits: tape.param(logits),
            box_raw: tape.param(raw),
            alpha_t: None,
            alpha_s: None,
        }
    }

    #[test]
    fn perfect_prediction_has_near_zero_loss() {
        let cfg = cfg16();
        let (grid, s) = (cfg.search_grid(), cfg.search_size as f64);
        // Ground truth centered exactly on cell (3, 3).
        let cell = s / grid as f64;
        let (mx, my) = (3.5 * cell, 3.5 * cell);
        let gt = Bbox::from_center(mx, my, 20.0, 12.0);
        let pos = positive_cell(&gt, grid, cfg.search_size);
        assert_eq!(pos, 3 * grid + 3);

        let logits = DenseMatrix::from_fn(grid * grid, 1, |i, _| {
            if i == pos {
                40.0
            } else {
                -40.0
            }
        });
        // softplus(raw) must equal the exact fractional offsets.
        let inv_softplus = |y: f64| (y.exp_m1()).ln();
        let offs = [10.0 / s, 6.0 / s, 10.0 / s, 6.0 / s];
        let raw = DenseMatrix::from_fn(grid * grid, 4, |_, j| inv_softplus(offs[j]));

        let mut tape = Tape::new();
        let fwd = fake_forward(&mut tape, logits, raw);
        let vars =
            pair_loss(&mut tape, &fwd, &gt, &cfg, LossWeights { iou: 2.0, l1: 5.0 }).unwrap();
        let report = LossReport::from_tape(&tape, &vars);
        assert!(report.bce < 1e-12, "bce = {}", report.bce);
        assert!(report.iou.abs() < 1e-9, "iou term = {}", report.iou);
        assert!(report.l1.abs() < 1e-9, "l1 term = {}", report.l1);
        assert!(report.total < 1e-8);
    }

    #[test]
    fn loss_is_nonnegative() {
        let cfg = cfg16();
        let grid = cfg.search_grid();
        for seed in 0..5u64 {
            let k = seed as f64;
            let logits = DenseMatrix::from_fn(grid * grid, 1, |i, _| ((i as f64) - k).sin() * 3.0);
            let raw = DenseMatrix::from_fn(grid * grid, 4, |i, j| ((i + j) as f64 + k).cos());
            let gt = Bbox::new(40.0 + k, 50.0, 25.0, 18.0);
            let mut tape = Tape::new();
            let fwd = fake_forward(&mut tape, logits, raw);
            let vars =
                pair_loss(&mut tape, &fwd, &gt, &cfg, LossWeights { iou: 2.0, l1: 5.0 }).unwrap();
            let report = LossReport::from_tape(&tape, &vars);
            report.check_finite().unwrap();
            assert!(report.total >= 0.0);
            assert!(report.bce >= 0.0 && report.iou >= 0.0 && report.l1 >= 0.0);
        }
    }

    #[test]
    fn tie_breaks_to_the_first_cell_in_row_major_order() {
        let cfg = cfg16();
        // Center equidistant from all four central cells.
        let gt = Bbox::from_center(64.0, 64.0, 10.0, 10.0);
        assert_eq!(positive_cell(&gt, cfg.search_grid(), cfg.search_size), 3 * 8 + 3);
    }

    #[test]
    fn boxes_outside_the_crop_are_rejected() {
        let cfg = cfg16();
        let gt = Bbox::from_center(200.0, 64.0, 10.0, 10.0);
        let mut tape = Tape::new();
        let logits = DenseMatrix::zeros(64, 1);
        let raw = DenseMatrix::zeros(64, 4);
        let fwd = fake_forward(&mut tape, logits, raw);
        let err =
            pair_loss(&mut tape, &fwd, &gt, &cfg, LossWeights { iou: 2.0, l1: 5.0 }).unwrap_err();
        assert!(err.to_string().contains("search crop"));
    }

    #[test]
    fn non_finite_report_names_the_term() {
        let report = LossReport { total: f64::NAN, bce: 0.1, iou: 0.2, l1: 0.3 };
        let err = report.check_finite().unwrap_err();
        assert!(err.to_string().contains("total"));
    }

    #[test]
    fn gradients_flow_to_both_heads() {
        let cfg = cfg16();
        let grid = cfg.search_grid();
        let gt = Bbox::from_center(60.0, 70.0, 22.0, 14.0);
        let mut tape = Tape::new();
        let logits = DenseMatrix::from_fn(grid * grid, 1, |i, _| (i as f64).sin());
        let raw = DenseMatrix::from_fn(grid * grid, 4, |i, j| ((i * 4 + j) as f64).cos() * 0.1);
        let fwd = fake_forward(&mut tape, logits, raw);
        let vars =
            pair_loss(&mut tape, &fwd, &gt, &cfg, LossWeights { iou: 2.0, l1: 5.0 }).unwrap();
        let grads = tape.backward(vars.total).unwrap();
        let g_cls = grads.get(fwd.cls_logits).unwrap();
        let g_box = grads.get(fwd.box_raw).unwrap();
        assert!(g_cls.max_abs() > 0.0);
        assert!(g_box.max_abs() > 0.0);
        // Only the positive cell's box offsets receive gradient.
        let pos = positive_cell(&gt, grid, cfg.search_size);
        for i in 0..grid * grid {
            let row_mag: f64 = g_box.row(i).iter().map(|v| v.abs()).sum();
            if i == pos {
                assert!(row_mag > 0.0);
            } else {
                assert_eq!(row_mag, 0.0);
            }
        }
    }
}
