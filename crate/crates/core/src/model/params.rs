//! Parameter initialization and naming.
//!
//! Every tensor lives in a [`ParamStore`] under a dotted name; the
//! checkpoint container serializes them sorted by that name. Creation
//! order below is fixed so a seed fully determines the initial weights.

use super::config::{GateMode, ModelConfig, PATCH};
use crate::error::{Error, Result};
use crate::numeric::{DenseMatrix, ParamStore};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use std::path::Path;

const WEIGHT_STD: f64 = 0.02;

/// Starting box offset as a fraction of search size; softplus of the
/// box-head bias lands here so initial boxes have a plausible scale.
const INIT_OFFSET: f64 = 0.125;

fn gaussian(rng: &mut ChaCha20Rng, rows: usize, cols: usize) -> DenseMatrix {
    let dist = Normal::new(0.0, WEIGHT_STD).expect("valid std");
    DenseMatrix::from_fn(rows, cols, |_, _| dist.sample(rng))
}

fn push_block(store: &mut ParamStore, rng: &mut ChaCha20Rng, prefix: &str, d: usize) -> Result<()> {
    for name in ["wq", "wk", "wv", "wo"] {
        store.insert(format!("{prefix}.attn.{name}"), gaussian(rng, d, d))?;
    }
    for name in ["bq", "bk", "bv", "bo"] {
        store.insert(format!("{prefix}.attn.{name}"), DenseMatrix::zeros(1, d))?;
    }
    for ln in ["ln1", "ln2"] {
        store.insert(format!("{prefix}.{ln}.g"), DenseMatrix::filled(1, d, 1.0))?;
        store.insert(format!("{prefix}.{ln}.b"), DenseMatrix::zeros(1, d))?;
    }
    store.insert(format!("{prefix}.mlp.w1"), gaussian(rng, d, 4 * d))?;
    store.insert(format!("{prefix}.mlp.b1"), DenseMatrix::zeros(1, 4 * d))?;
    store.insert(format!("{prefix}.mlp.w2"), gaussian(rng, 4 * d, d))?;
    store.insert(format!("{prefix}.mlp.b2"), DenseMatrix::zeros(1, d))?;
    Ok(())
}

/// Fresh parameters for the given shape, gate mode, and spectral band
/// count (the harmonized B_max the HSI tokenizer sees).
pub fn init_params(
    cfg: &ModelConfig,
    gate: GateMode,
    bands: usize,
    seed: u64,
) -> Result<ParamStore> {
    cfg.validate()?;
    if bands == 0 {
        return Err(Error::Config("HSI tokenizer needs at least 1 band".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let d = cfg.d;
    let p2 = PATCH * PATCH;

    store.insert("tok.E_fc", gaussian(&mut rng, 3 * p2, d))?;
    store.insert("tok.b_fc", DenseMatrix::zeros(1, d))?;
    store.insert("tok.E_hsi", gaussian(&mut rng, bands * p2, d))?;
    store.insert("tok.b_hsi", DenseMatrix::zeros(1, d))?;

    // Gate starts neutral: alpha = 0.5 everywhere.
    match gate {
        GateMode::Content => {
            store.insert("tok.gate.w", DenseMatrix::zeros(2 * d, 1))?;
            store.insert("tok.gate.b", DenseMatrix::zeros(1, 1))?;
        }
        GateMode::Positional => {
            store.insert("tok.gate.logits_t", DenseMatrix::zeros(cfg.template_tokens(), 1))?;
            store.insert("tok.gate.logits_s", DenseMatrix::zeros(cfg.search_tokens(), 1))?;
        }
    }

    store.insert("bb.pos_t", DenseMatrix::zeros(cfg.template_tokens(), d))?;
    store.insert("bb.pos_s", DenseMatrix::zeros(cfg.search_tokens(), d))?;
    for i in 0..cfg.backbone_blocks {
        push_block(&mut store, &mut rng, &format!("bb.{i}"), d)?;
    }
    for i in 0..cfg.encoder_blocks {
        push_block(&mut store, &mut rng, &format!("enc.{i}"), d)?;
    }
    for i in 0..cfg.decoder_blocks {
        push_block(&mut store, &mut rng, &format!("dec.{i}"), d)?;
    }

    store.insert("fuse.branch_t", DenseMatrix::zeros(1, d))?;
    store.insert("fuse.branch_s", DenseMatrix::zeros(1, d))?;

    store.insert("head.cls.w1", gaussian(&mut rng, d, d))?;
    store.insert("head.cls.b1", DenseMatrix::zeros(1, d))?;
    store.insert("head.cls.w2", gaussian(&mut rng, d, 1))?;
    store.insert("head.cls.b2", DenseMatrix::zeros(1, 1))?;
    store.insert("head.box.w1", gaussian(&mut rng, d, d))?;
    store.insert("head.box.b1", DenseMatrix::zeros(1, d))?;
    store.insert("head.box.w2", gaussian(&mut rng, d, 4))?;
    let b2 = (INIT_OFFSET.exp_m1()).ln();
    store.insert("head.box.b2", DenseMatrix::filled(1, 4, b2))?;

    Ok(store)
}

/// The HSI band count a parameter store was built for.
pub fn hsi_bands(store: &ParamStore) -> Result<usize> {
    let rows = store.get("tok.E_hsi")?.rows();
    if rows % (PATCH * PATCH) != 0 {
        return Err(Error::Config(format!(
            "tok.E_hsi has {rows} rows, not a multiple of the patch area"
        )));
    }
    Ok(rows / (PATCH * PATCH))
}

/// Import weights produced by another training system.
///
/// Stub: the on-disk container is supported (STCK1), but no mapping from
/// any external checkpoint layout onto these parameter names exists yet.
/// Convert such weights offline into STCK1 under the names `init_params`
/// creates, then load them with [`ParamStore::load`].
pub fn import_external_weights(path: &Path) -> Result<ParamStore> {
    Err(Error::Config(format!(
        "external weight import is not implemented; convert {} to an STCK1 \
         checkpoint using this crate's parameter names and load it directly",
        path.display()
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_seed_deterministic() {
        let cfg = ModelConfig { d: 16, ..ModelConfig::default() };
        let a = init_params(&cfg, GateMode::Content, 25, 7).unwrap();
        let b = init_params(&cfg, GateMode::Content, 25, 7).unwrap();
        assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap());
        let c = init_params(&cfg, GateMode::Content, 25, 8).unwrap();
        assert_ne!(a.to_bytes().unwrap(), c.to_bytes().unwrap());
    }

    #[test]
    fn content_and_positional_gates_have_their_own_names() {
        let cfg = ModelConfig { d: 16, ..ModelConfig::default() };
        let content = init_params(&cfg, GateMode::Content, 25, 1).unwrap();
        assert!(content.contains("tok.gate.w") && content.contains("tok.gate.b"));
        let pos = init_params(&cfg, GateMode::Positional, 25, 1).unwrap();
        assert!(pos.contains("tok.gate.logits_t") && pos.contains("tok.gate.logits_s"));
        assert_eq!(pos.get("tok.gate.logits_t").unwrap().rows(), 16);
        assert_eq!(pos.get("tok.gate.logits_s").unwrap().rows(), 64);
    }

    #[test]
    fn band_count_round_trips_through_the_embedding() {
        let cfg = ModelConfig { d: 16, ..ModelConfig::default() };
        let store = init_params(&cfg, GateMode::Content, 25, 1).unwrap();
        assert_eq!(hsi_bands(&store).unwrap(), 25);
    }

    #[test]
    fn box_bias_decodes_to_the_target_offset() {
        let cfg = ModelConfig { d: 16, ..ModelConfig::default() };
        let store = init_params(&cfg, GateMode::Content, 25, 1).unwrap();
        let b2 = store.get("head.box.b2").unwrap().get(0, 0);
        let softplus = (1.0 + b2.exp()).ln();
        assert!((softplus - INIT_OFFSET).abs() < 1e-12);
    }

    #[test]
    fn import_stub_names_the_path() {
        let err = import_external_weights(Path::new("vit_base.bin")).unwrap_err();
        assert!(err.to_string().contains("vit_base.bin"));
    }
}
