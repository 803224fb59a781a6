//! Synthetic snapshot-spectral sequences: two equally sized squares move
//! over a flat background along linear-plus-sinusoidal paths. In
//! ambiguity mode the distractor's signature is a metamer of the target's
//! under the false-color filter, so the two objects are pixel-identical
//! in false color while their spectra differ substantially.

use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::types::{HsiCube, Modality, SequenceRecord, SpectralSignature};
use crate::error::{Error, Result};
use crate::geom::Bbox;
use crate::numeric::DenseMatrix;

/// Scene description for one generated sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub name: String,
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub modality: Modality,
    pub noise_sigma: f64,
    pub object_size: f64,
    /// Distractor signature is a false-color metamer of the target's.
    pub ambiguity: bool,
}

impl SceneSpec {
    /// Desk-scale defaults: big enough for 4x search crops around a
    /// 24-pixel object, small enough to generate in well under a second.
    pub fn demo(name: impl Into<String>, modality: Modality) -> Self {
        SceneSpec {
            name: name.into(),
            height: 128,
            width: 128,
            frames: 24,
            modality,
            noise_sigma: 0.005,
            object_size: 24.0,
            ambiguity: true,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.frames < 2 {
            return Err(Error::Config(format!(
                "scene {:?} needs at least 2 frames, got {}",
                self.name, self.frames
            )));
        }
        let min_dim = self.height.min(self.width) as f64;
        if self.object_size < 2.0 || self.object_size * 2.0 > min_dim {
            return Err(Error::Config(format!(
                "scene {:?}: object size {} does not fit a {}x{} frame",
                self.name, self.object_size, self.width, self.height
            )));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::Config("noise sigma must be non-negative".into()));
        }
        Ok(())
    }
}

/// Generator internals exposed for analysis: signatures, the filter, and
/// the distractor's per-frame boxes.
#[derive(Debug, Clone)]
pub struct SceneTrace {
    pub background: SpectralSignature,
    pub target: SpectralSignature,
    pub distractor: SpectralSignature,
    pub filter: DenseMatrix,
    pub distractor_boxes: Vec<Bbox>,
}

/// Fixed 3xB false-color filter: rows are smooth Gaussian bumps over the
/// band axis, L1-normalized. Full-rank for every B >= 3 (verified).
pub fn false_color_filter(bands: usize) -> Result<DenseMatrix> {
    if bands < 3 {
        return Err(Error::Config(format!(
            "false-color filter needs at least 3 bands, got {bands}"
        )));
    }
    let sigma = (bands as f64 / 6.0).max(0.75);
    let mut f = DenseMatrix::from_fn(3, bands, |c, b| {
        let mu = (c as f64 + 0.5) * bands as f64 / 3.0 - 0.5;
        let z = (b as f64 - mu) / sigma;
        (-0.5 * z * z).exp()
    });
    for c in 0..3 {
        let sum: f64 = f.row(c).iter().sum();
        for v in f.row_mut(c) {
            *v /= sum;
        }
    }
    // Rank check via Gram-Schmidt residuals; the bumps are distinct, so a
    // failure here means the construction itself is broken.
    let q = orthonormal_rows(&f);
    if q.len() < 3 {
        return Err(Error::Domain(format!("false-color filter rank-deficient at B={bands}")));
    }
    Ok(f)
}

/// Orthonormalized copies of the non-degenerate rows (two-pass
/// Gram-Schmidt for numerical headroom).
fn orthonormal_rows(m: &DenseMatrix) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for i in 0..m.rows() {
        let mut v: Vec<f64> = m.row(i).to_vec();
        for _ in 0..2 {
            for q in &basis {
                let dot: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
                for (vv, qq) in v.iter_mut().zip(q) {
                    *vv -= dot * qq;
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let orig_norm = m.row(i).iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 * orig_norm.max(1e-30) {
            for vv in v.iter_mut() {
                *vv /= norm;
            }
            basis.push(v);
        }
    }
    basis
}

/// A signature that maps to the same false color as `sig` under `f`
/// while differing by more than 0.1 in some band and more than 5 degrees
/// in spectral angle.
pub fn metameric_partner(
    f: &DenseMatrix,
    sig: &SpectralSignature,
    rng: &mut ChaCha20Rng,
) -> Result<SpectralSignature> {
    let bands = f.cols();
    if bands <= 3 {
        return Err(Error::Domain(format!(
            "no metamer exists: the filter has a trivial null space at B={bands}"
        )));
    }
    if sig.len() != bands {
        return Err(Error::shape("metameric_partner", (1, sig.len()), (3, bands)));
    }
    let basis = orthonormal_rows(f);

    for _attempt in 0..64 {
        // Random direction projected into the filter's null space.
        let mut v: Vec<f64> = (0..bands).map(|_| rng.random::<f64>() - 0.5).collect();
        for _ in 0..2 {
            for q in &basis {
                let dot: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
                for (vv, qq) in v.iter_mut().zip(q) {
                    *vv -= dot * qq;
                }
            }
        }
        let vmax = v.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
        if vmax < 1e-6 {
            continue;
        }
        for vv in v.iter_mut() {
            *vv /= vmax;
        }

        // Largest step that keeps every band strictly inside [0, 1],
        // with 10% margin so rounding can never push a value out.
        let mut c_max = f64::INFINITY;
        for (s, dv) in sig.values().iter().zip(&v) {
            if *dv > 0.0 {
                c_max = c_max.min((1.0 - s) / dv);
            } else if *dv < 0.0 {
                c_max = c_max.min(s / -dv);
            }
        }
        let c = (0.9 * c_max).min(0.3);
        if c <= 0.1 {
            continue;
        }
        let values: Vec<f64> = sig.values().iter().zip(&v).map(|(s, dv)| s + c * dv).collect();
        let partner = SpectralSignature::new(values)?;
        if partner.angle_deg(sig) > 5.0 && partner.max_band_diff(sig) > 0.1 {
            return Ok(partner);
        }
    }
    Err(Error::Domain(
        "could not construct a metameric partner with the required separation".into(),
    ))
}

/// Smooth pseudo-random curve over the band axis, affinely mapped into
/// [lo, hi].
fn smooth_curve(rng: &mut ChaCha20Rng, bands: usize, lo: f64, hi: f64) -> Vec<f64> {
    let harmonics: Vec<(f64, f64)> =
        (0..3).map(|_| (rng.random::<f64>(), rng.random::<f64>() * std::f64::consts::TAU)).collect();
    let raw: Vec<f64> = (0..bands)
        .map(|b| {
            harmonics
                .iter()
                .enumerate()
                .map(|(k, (amp, phase))| {
                    amp * ((k + 1) as f64 * std::f64::consts::TAU * b as f64
                        / bands.max(2) as f64
                        + phase)
                        .sin()
                })
                .sum()
        })
        .collect();
    let min = raw.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max - min < 1e-9 {
        return vec![(lo + hi) / 2.0; bands];
    }
    raw.iter().map(|&r| lo + (r - min) / (max - min) * (hi - lo)).collect()
}

struct Path {
    x_start: f64,
    x_end: f64,
    y_start: f64,
    y_end: f64,
    amp_x: f64,
    amp_y: f64,
    period_x: f64,
    period_y: f64,
    phase_x: f64,
    phase_y: f64,
}

impl Path {
    fn sample(rng: &mut ChaCha20Rng, width: f64, height: f64, margin: f64) -> Path {
        let span = |rng: &mut ChaCha20Rng, lo: f64, hi: f64| {
            // Endpoints at least 40% of the range apart: real motion.
            let range = hi - lo;
            let a = lo + rng.random::<f64>() * range;
            let mut b = lo + rng.random::<f64>() * range;
            if (a - b).abs() < 0.4 * range {
                b = if a < (lo + hi) / 2.0 { hi } else { lo };
            }
            (a, b)
        };
        let (x_start, x_end) = span(rng, margin, width - margin);
        let (y_start, y_end) = span(rng, margin, height - margin);
        Path {
            x_start,
            x_end,
            y_start,
            y_end,
            amp_x: 4.0 + rng.random::<f64>() * 8.0,
            amp_y: 4.0 + rng.random::<f64>() * 8.0,
            period_x: 8.0 + rng.random::<f64>() * 12.0,
            period_y: 8.0 + rng.random::<f64>() * 12.0,
            phase_x: rng.random::<f64>() * std::f64::consts::TAU,
            phase_y: rng.random::<f64>() * std::f64::consts::TAU,
        }
    }

    fn at(&self, t: f64) -> (f64, f64) {
        let x = self.x_start
            + (self.x_end - self.x_start) * t
            + self.amp_x * (std::f64::consts::TAU * t * self.period_x / 10.0 + self.phase_x).sin();
        let y = self.y_start
            + (self.y_end - self.y_start) * t
            + self.amp_y * (std::f64::consts::TAU * t * self.period_y / 10.0 + self.phase_y).sin();
        (x, y)
    }
}

fn fill_box(plane: &mut [f32], width: usize, height: usize, b: &Bbox, value: f32) {
    let (x1, y1, x2, y2) = b.corners();
    // A pixel is covered when its center lies inside the box.
    let px_lo = (x1 - 0.5).ceil().max(0.0) as usize;
    let px_hi = ((x2 - 0.5).ceil().max(0.0) as usize).min(width);
    let py_lo = (y1 - 0.5).ceil().max(0.0) as usize;
    let py_hi = ((y2 - 0.5).ceil().max(0.0) as usize).min(height);
    for py in py_lo..py_hi {
        for px in px_lo..px_hi {
            plane[py * width + px] = value;
        }
    }
}

/// Render one sequence deterministically from (spec, seed), returning the
/// generator internals alongside the record.
pub fn generate_with_trace(spec: &SceneSpec, seed: u64) -> Result<(SequenceRecord, SceneTrace)> {
    spec.validate()?;
    let bands = spec.modality.bands;
    let filter = false_color_filter(bands)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);

    let background = SpectralSignature::new(smooth_curve(&mut rng, bands, 0.05, 0.2))?;
    let target = SpectralSignature::new(smooth_curve(&mut rng, bands, 0.3, 0.7))?;
    let distractor = if spec.ambiguity {
        metameric_partner(&filter, &target, &mut rng)?
    } else {
        SpectralSignature::new(smooth_curve(&mut rng, bands, 0.3, 0.7))?
    };

    let (w, h) = (spec.width as f64, spec.height as f64);
    let margin = spec.object_size / 2.0 + 2.0;
    let target_path = Path::sample(&mut rng, w, h, margin);
    // Distractor orbits the target; the radius sweeps from a far pass to
    // a near pass so spatial proximity alone cannot separate the two.
    let orbit_max = (0.3 * w.min(h)).max(spec.object_size * 1.2);
    let orbit_min = spec.object_size * 0.4;
    let orbit_phase = rng.random::<f64>() * std::f64::consts::TAU;
    let orbit_turns = 0.75 + rng.random::<f64>() * 0.5;
    let radius_phase = rng.random::<f64>() * std::f64::consts::TAU;

    let mut frames = Vec::with_capacity(spec.frames);
    let mut false_color = Vec::with_capacity(spec.frames);
    let mut gt_boxes = Vec::with_capacity(spec.frames);
    let mut distractor_boxes = Vec::with_capacity(spec.frames);

    for fi in 0..spec.frames {
        let t = fi as f64 / (spec.frames - 1) as f64;
        let (tx, ty) = target_path.at(t);
        let tx = tx.clamp(margin, w - margin);
        let ty = ty.clamp(margin, h - margin);
        let tbox = Bbox::from_center(tx, ty, spec.object_size, spec.object_size);

        let theta = orbit_phase + std::f64::consts::TAU * orbit_turns * t;
        let radius = orbit_min
            + (orbit_max - orbit_min)
                * (0.5 + 0.5 * (std::f64::consts::TAU * t + radius_phase).cos());
        let dx = (tx + radius * theta.cos()).clamp(margin, w - margin);
        let dy = (ty + radius * theta.sin()).clamp(margin, h - margin);
        let dbox = Bbox::from_center(dx, dy, spec.object_size, spec.object_size);

        let mut cube = HsiCube::zeros(bands, spec.height, spec.width);
        for b in 0..bands {
            let plane = cube.plane_mut(b);
            plane.fill(background.values()[b] as f32);
            // Target drawn last: it stays on top during near passes.
            fill_box(plane, spec.width, spec.height, &dbox, distractor.values()[b] as f32);
            fill_box(plane, spec.width, spec.height, &tbox, target.values()[b] as f32);
            if spec.noise_sigma > 0.0 {
                for v in plane.iter_mut() {
                    let z: f64 = rng.sample(StandardNormal);
                    *v = (*v as f64 + spec.noise_sigma * z) as f32;
                }
            }
        }

        let mut fc = HsiCube::zeros(3, spec.height, spec.width);
        for y in 0..spec.height {
            for x in 0..spec.width {
                for c in 0..3 {
                    let mut acc = 0.0f64;
                    for b in 0..bands {
                        acc += filter.get(c, b) * cube.get(b, y, x) as f64;
                    }
                    fc.set(c, y, x, acc as f32);
                }
            }
        }

        frames.push(cube);
        false_color.push(fc);
        gt_boxes.push(tbox);
        distractor_boxes.push(dbox);
    }

    let record = SequenceRecord {
        name: spec.name.clone(),
        frames,
        false_color,
        gt_boxes,
        modality: spec.modality.clone(),
        seed: Some(seed),
    };
    record.validate()?;
    let trace = SceneTrace { background, target, distractor, filter, distractor_boxes };
    Ok((record, trace))
}

pub fn generate_synthetic_sequence(spec: &SceneSpec, seed: u64) -> Result<SequenceRecord> {
    generate_with_trace(spec, seed).map(|(record, _)| record)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vis() -> Modality {
        Modality::new("VIS", 16).unwrap()
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = SceneSpec::demo("det", vis());
        let a = generate_synthetic_sequence(&spec, 5).unwrap();
        let b = generate_synthetic_sequence(&spec, 5).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic_sequence(&spec, 6).unwrap();
        assert_ne!(a.frames[0].as_slice(), c.frames[0].as_slice());
    }

    #[test]
    fn gt_boxes_cover_every_frame_in_bounds() {
        let spec = SceneSpec::demo("bounds", vis());
        let (rec, trace) = generate_with_trace(&spec, 11).unwrap();
        assert_eq!(rec.gt_boxes.len(), spec.frames);
        assert_eq!(trace.distractor_boxes.len(), spec.frames);
        for b in rec.gt_boxes.iter().chain(&trace.distractor_boxes) {
            assert!(b.x >= 0.0 && b.y >= 0.0);
            assert!(b.x + b.w <= spec.width as f64);
            assert!(b.y + b.h <= spec.height as f64);
        }
    }

    #[test]
    fn filter_rows_are_normalized_and_full_rank() {
        for bands in [3, 6, 15, 16, 25] {
            let f = false_color_filter(bands).unwrap();
            assert_eq!(f.shape(), (3, bands));
            for c in 0..3 {
                let sum: f64 = f.row(c).iter().sum();
                assert!((sum - 1.0).abs() < 1e-12);
                assert!(f.row(c).iter().all(|&v| v > 0.0));
            }
            assert_eq!(orthonormal_rows(&f).len(), 3);
        }
        assert!(false_color_filter(2).is_err());
    }

    #[test]
    fn metamer_matches_in_false_color_but_not_in_spectrum() {
        let f = false_color_filter(16).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let sig = SpectralSignature::new(smooth_curve(&mut rng, 16, 0.3, 0.7)).unwrap();
        let partner = metameric_partner(&f, &sig, &mut rng).unwrap();
        for c in 0..3 {
            let fa: f64 = f.row(c).iter().zip(sig.values()).map(|(a, b)| a * b).sum();
            let fb: f64 = f.row(c).iter().zip(partner.values()).map(|(a, b)| a * b).sum();
            assert!((fa - fb).abs() < 1e-12, "channel {c}: {fa} vs {fb}");
        }
        assert!(partner.angle_deg(&sig) > 5.0);
        assert!(partner.max_band_diff(&sig) > 0.1);
    }

    #[test]
    fn ambiguity_needs_a_null_space() {
        let spec = SceneSpec::demo("b3", Modality::new("RGBLIKE", 3).unwrap());
        let err = generate_synthetic_sequence(&spec, 0).unwrap_err();
        assert!(err.to_string().contains("null space"));
    }

    /// First frame whose target and distractor boxes do not overlap.
    fn disjoint_frame(rec: &SequenceRecord, trace: &SceneTrace) -> usize {
        (0..rec.len())
            .find(|&fi| {
                let t = &rec.gt_boxes[fi];
                let d = &trace.distractor_boxes[fi];
                let (tc, dc) = (t.center(), d.center());
                (tc.0 - dc.0).abs() > t.w + 2.0 || (tc.1 - dc.1).abs() > t.h + 2.0
            })
            .expect("the orbit includes far passes")
    }

    #[test]
    fn noiseless_ambiguity_is_pixel_identical_in_false_color() {
        let mut spec = SceneSpec::demo("amb", vis());
        spec.noise_sigma = 0.0;
        let (rec, trace) = generate_with_trace(&spec, 9).unwrap();
        let fi = disjoint_frame(&rec, &trace);
        let t = rec.gt_boxes[fi].center();
        let d = trace.distractor_boxes[fi].center();
        let fc = &rec.false_color[fi];
        for c in 0..3 {
            let tv = fc.get(c, t.1 as usize, t.0 as usize);
            let dv = fc.get(c, d.1 as usize, d.0 as usize);
            assert_eq!(tv.to_bits(), dv.to_bits(), "channel {c} differs in frame {fi}");
        }
        assert!(trace.target.angle_deg(&trace.distractor) > 5.0);
        // The spectral planes DO distinguish the objects.
        let hsi = &rec.frames[fi];
        let diff = (0..16)
            .map(|b| {
                (hsi.get(b, t.1 as usize, t.0 as usize) - hsi.get(b, d.1 as usize, d.0 as usize))
                    .abs()
            })
            .fold(0.0f32, f32::max);
        assert!(diff > 0.1);
    }

    #[test]
    fn plain_mode_distractor_differs_in_false_color() {
        let mut spec = SceneSpec::demo("plain", vis());
        spec.ambiguity = false;
        spec.noise_sigma = 0.0;
        let (rec, trace) = generate_with_trace(&spec, 2).unwrap();
        let fi = disjoint_frame(&rec, &trace);
        let fc = &rec.false_color[fi];
        let t = rec.gt_boxes[fi].center();
        let d = trace.distractor_boxes[fi].center();
        let diff = (0..3)
            .map(|c| (fc.get(c, t.1 as usize, t.0 as usize) - fc.get(c, d.1 as usize, d.0 as usize)).abs())
            .fold(0.0f32, f32::max);
        assert!(diff > 1e-4, "distinct signatures should differ in false color, got {diff}");
    }

    #[test]
    fn short_scenes_are_rejected() {
        let mut spec = SceneSpec::demo("short", vis());
        spec.frames = 1;
        assert!(generate_synthetic_sequence(&spec, 0).is_err());
    }
}
