//! Finite-difference verification of tape gradients.
//!
//! A check builds the forward graph once on the unperturbed parameters,
//! runs backward, then compares each probed entry's tape gradient against
//! a central difference (f(x+eps) - f(x-eps)) / 2eps. Non-finite loss at
//! any probe is a hard error naming the parameter and entry.

use std::collections::BTreeMap;

use rand::prelude::*;
use rand_chacha::ChaCha20Rng;

use super::checkpoint::ParamStore;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// How each parameter block gets probed.
///
/// Exhaustive mode compares every entry against its own central
/// difference; single entries with near-zero gradients sit at the noise
/// floor of the difference quotient, so it suits small analytic cases.
/// Random mode probes whole-block directional derivatives instead, which
/// compare at the natural scale of the block and stay meaningful for
/// composite models.
#[derive(Debug, Clone, Copy)]
pub enum ProbePlan {
    /// Every entry of every block. Only viable for small models.
    Exhaustive,
    /// `per_block` random sign-vector directions per block.
    Random { per_block: usize, seed: u64 },
}

/// Builds the scalar loss for one evaluation. Receives the parameter
/// values to evaluate at and a fresh tape; returns the loss node and the
/// tape var bound to each parameter (each parameter bound at most once).
pub trait LossBuilder {
    fn build(&self, store: &ParamStore, tape: &mut Tape) -> Result<(Var, BTreeMap<String, Var>)>;
}

impl<F> LossBuilder for F
where
    F: Fn(&ParamStore, &mut Tape) -> Result<(Var, BTreeMap<String, Var>)>,
{
    fn build(&self, store: &ParamStore, tape: &mut Tape) -> Result<(Var, BTreeMap<String, Var>)> {
        self(store, tape)
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub tol: f64,
    /// Worst relative error per parameter block, over probed entries.
    pub per_param: BTreeMap<String, f64>,
    pub max_rel_err: f64,
    pub worst_param: String,
    pub probes: usize,
}

impl GradCheckReport {
    pub fn pass(&self) -> bool {
        self.max_rel_err < self.tol
    }
}

/// Relative accuracy of one loss evaluation, conservative for graphs of
/// up to ~10^4 sequential operations. A central difference inherits an
/// absolute uncertainty of |loss| * this / (2 eps), and no gradient
/// smaller than that divided by the tolerance can be resolved by the
/// probe; the error denominator is floored there so unresolvable probes
/// read as matches while errors proportional to real gradient magnitude
/// still surface.
const EVAL_NOISE: f64 = 1e-12;

fn fd_floor(base_loss: f64, eps: f64, tol: f64) -> f64 {
    let atol = base_loss.abs().max(1.0) * EVAL_NOISE / (2.0 * eps);
    (atol / tol).max(1e-8)
}

fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    let denom = a.abs().max(b.abs()).max(floor);
    (a - b).abs() / denom
}

fn eval_loss(
    f: &impl LossBuilder,
    store: &ParamStore,
    context: &str,
) -> Result<f64> {
    let mut tape = Tape::new();
    let (loss, _) = f.build(store, &mut tape)?;
    let v = tape.value(loss);
    if v.shape() != (1, 1) {
        return Err(Error::Config(format!(
            "grad_check loss must be scalar, got {}x{}",
            v.rows(),
            v.cols()
        )));
    }
    let loss = v.get(0, 0);
    if !loss.is_finite() {
        return Err(Error::NonFinite { context: format!("grad_check loss at {context}") });
    }
    Ok(loss)
}

/// Compare tape gradients of `f` against central finite differences over
/// the parameters in `store`.
pub fn grad_check(
    f: &impl LossBuilder,
    store: &ParamStore,
    eps: f64,
    tol: f64,
    plan: ProbePlan,
) -> Result<GradCheckReport> {
    if eps <= 0.0 {
        return Err(Error::Config(format!("grad_check eps must be positive, got {eps}")));
    }

    // One backward pass on the unperturbed parameters.
    let mut tape = Tape::new();
    let (loss, bound) = f.build(store, &mut tape)?;
    let lv = tape.value(loss);
    if lv.shape() != (1, 1) {
        return Err(Error::Config(format!(
            "grad_check loss must be scalar, got {}x{}",
            lv.rows(),
            lv.cols()
        )));
    }
    if !lv.get(0, 0).is_finite() {
        return Err(Error::NonFinite { context: "grad_check loss at base point".into() });
    }
    let grads = tape.backward(loss)?;

    let mut rng = match plan {
        ProbePlan::Random { seed, .. } => Some(ChaCha20Rng::seed_from_u64(seed)),
        ProbePlan::Exhaustive => None,
    };

    let mut per_param = BTreeMap::new();
    let mut max_rel = 0.0f64;
    let mut worst = String::new();
    let mut probes = 0usize;

    for (name, base) in store.iter() {
        let n = base.len();

        // Unused parameters must hold an exact-zero tape gradient and a
        // vanishing finite difference.
        let tape_grad = match bound.get(name) {
            Some(&var) => grads.wrt(var, base.rows(), base.cols()),
            None => super::matrix::DenseMatrix::zeros(base.rows(), base.cols()),
        };

        let mut block_worst = 0.0f64;
        let mut note_probe = |e: f64, label: String, block_worst: &mut f64| {
            probes += 1;
            if e > *block_worst {
                *block_worst = e;
            }
            if e > max_rel {
                max_rel = e;
                worst = label;
            }
        };

        match plan {
            ProbePlan::Exhaustive => {
                for idx in 0..n {
                    let mut pstore = store.clone();
                    let orig = pstore.get(name)?.as_slice()[idx];

                    pstore.get_mut(name)?.as_mut_slice()[idx] = orig + eps;
                    let lp = eval_loss(f, &pstore, &format!("{name}[{idx}] +eps"))?;

                    pstore.get_mut(name)?.as_mut_slice()[idx] = orig - eps;
                    let lm = eval_loss(f, &pstore, &format!("{name}[{idx}] -eps"))?;

                    let fd = (lp - lm) / (2.0 * eps);
                    let e = rel_err(tape_grad.as_slice()[idx], fd);
                    note_probe(e, format!("{name}[{idx}]"), &mut block_worst);
                }
            }
            ProbePlan::Random { per_block, .. } => {
                let rng = rng.as_mut().expect("rng present for random plan");
                for k in 0..per_block {
                    let dir: Vec<f64> =
                        (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
                    let analytic: f64 =
                        tape_grad.as_slice().iter().zip(&dir).map(|(g, v)| g * v).sum();

                    let mut pstore = store.clone();
                    for (p, v) in pstore.get_mut(name)?.as_mut_slice().iter_mut().zip(&dir) {
                        *p += eps * v;
                    }
                    let lp = eval_loss(f, &pstore, &format!("{name} dir {k} +eps"))?;
                    let mut pstore = store.clone();
                    for (p, v) in pstore.get_mut(name)?.as_mut_slice().iter_mut().zip(&dir) {
                        *p -= eps * v;
                    }
                    let lm = eval_loss(f, &pstore, &format!("{name} dir {k} -eps"))?;

                    let fd = (lp - lm) / (2.0 * eps);
                    let e = rel_err(analytic, fd);
                    note_probe(e, format!("{name} dir {k}"), &mut block_worst);
                }
            }
        }
        per_param.insert(name.to_string(), block_worst);
    }

    Ok(GradCheckReport { tol, per_param, max_rel_err: max_rel, worst_param: worst, probes })
}
