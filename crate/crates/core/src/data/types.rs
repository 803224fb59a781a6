//! Core data types: modalities, spectral cubes, signatures, sequences.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Bbox;

/// A sensor modality: a name plus its band count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Modality {
    pub name: String,
    pub bands: usize,
}

impl Modality {
    pub fn new(name: impl Into<String>, bands: usize) -> Result<Self> {
        let name = name.into();
        if bands == 0 {
            return Err(Error::Config(format!("modality {name:?} must have at least 1 band")));
        }
        Ok(Modality { name, bands })
    }
}

/// Set of modalities a model is trained across. Band harmonization pads
/// every cube up to the largest band count in the registry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModalityRegistry {
    mods: Vec<Modality>,
}

impl ModalityRegistry {
    pub fn new(mods: Vec<Modality>) -> Result<Self> {
        if mods.is_empty() {
            return Err(Error::Empty("modality registry".into()));
        }
        for (i, m) in mods.iter().enumerate() {
            if mods[..i].iter().any(|other| other.name == m.name) {
                return Err(Error::Config(format!("duplicate modality name {:?}", m.name)));
            }
        }
        Ok(ModalityRegistry { mods })
    }

    /// The three-modality setup used throughout the experiments.
    pub fn standard() -> Self {
        ModalityRegistry {
            mods: vec![
                Modality { name: "VIS".into(), bands: 16 },
                Modality { name: "NIR".into(), bands: 25 },
                Modality { name: "RedNIR".into(), bands: 15 },
            ],
        }
    }

    pub fn max_bands(&self) -> usize {
        self.mods.iter().map(|m| m.bands).max().expect("registry non-empty")
    }

    pub fn get(&self, name: &str) -> Result<&Modality> {
        self.mods
            .iter()
            .find(|m| m.name == name)
            .ok_or_else(|| Error::Config(format!("unknown modality {name:?}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Modality> {
        self.mods.iter()
    }

    pub fn len(&self) -> usize {
        self.mods.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mods.is_empty()
    }
}

/// One spectral frame: `bands` planes of `height` x `width` samples,
/// stored band-major then row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct HsiCube {
    bands: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl HsiCube {
    pub fn zeros(bands: usize, height: usize, width: usize) -> Self {
        HsiCube { bands, height, width, data: vec![0.0; bands * height * width] }
    }

    pub fn from_data(bands: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != bands * height * width {
            return Err(Error::Format(format!(
                "cube payload holds {} samples, expected {}x{}x{} = {}",
                data.len(),
                bands,
                height,
                width,
                bands * height * width
            )));
        }
        Ok(HsiCube { bands, height, width, data })
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn plane(&self, band: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[band * n..(band + 1) * n]
    }

    pub fn plane_mut(&mut self, band: usize) -> &mut [f32] {
        let n = self.height * self.width;
        &mut self.data[band * n..(band + 1) * n]
    }

    pub fn get(&self, band: usize, y: usize, x: usize) -> f32 {
        self.data[(band * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, band: usize, y: usize, x: usize, v: f32) {
        self.data[(band * self.height + y) * self.width + x] = v;
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Per-pixel spectrum at (y, x), one value per band.
    pub fn spectrum(&self, y: usize, x: usize) -> Vec<f32> {
        (0..self.bands).map(|b| self.get(b, y, x)).collect()
    }
}

/// Per-band reflectance curve with values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralSignature {
    values: Vec<f64>,
}

impl SpectralSignature {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("spectral signature".into()));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Domain(format!("signature value {v} outside [0, 1]")));
        }
        Ok(SpectralSignature { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Angle between two signatures viewed as vectors, in degrees.
    pub fn angle_deg(&self, other: &SpectralSignature) -> f64 {
        let dot: f64 = self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum();
        let na: f64 = self.values.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nb: f64 = other.values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            return 0.0;
        }
        (dot / (na * nb)).clamp(-1.0, 1.0).acos().to_degrees()
    }

    /// Largest per-band absolute difference.
    pub fn max_band_diff(&self, other: &SpectralSignature) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// A tracked sequence: spectral frames, their false-color renderings,
/// and per-frame ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceRecord {
    pub name: String,
    pub frames: Vec<HsiCube>,
    pub false_color: Vec<HsiCube>,
    pub gt_boxes: Vec<Bbox>,
    pub modality: Modality,
    pub seed: Option<u64>,
}

impl SequenceRecord {
    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::Empty(format!("sequence {:?}", self.name)));
        }
        let (h, w) = (self.frames[0].height(), self.frames[0].width());
        for f in &self.frames {
            if f.height() != h || f.width() != w || f.bands() != self.modality.bands {
                return Err(Error::Format(format!(
                    "sequence {:?}: frame shape {}x{}x{} does not match {}x{}x{}",
                    self.name,
                    f.bands(),
                    f.height(),
                    f.width(),
                    self.modality.bands,
                    h,
                    w
                )));
            }
        }
        if self.false_color.len() != self.frames.len() {
            return Err(Error::Format(format!(
                "sequence {:?}: {} false-color frames for {} spectral frames",
                self.name,
                self.false_color.len(),
                self.frames.len()
            )));
        }
        for fc in &self.false_color {
            if fc.bands() != 3 || fc.height() != h || fc.width() != w {
                return Err(Error::Format(format!(
                    "sequence {:?}: false-color frames must be 3x{}x{}",
                    self.name, h, w
                )));
            }
        }
        if self.gt_boxes.len() != self.frames.len() {
            return Err(Error::Format(format!(
                "sequence {:?}: {} ground-truth boxes for {} frames",
                self.name,
                self.gt_boxes.len(),
                self.frames.len()
            )));
        }
        for b in &self.gt_boxes {
            if !b.is_finite() || b.x < 0.0 || b.y < 0.0 || b.x + b.w > w as f64 || b.y + b.h > h as f64
            {
                return Err(Error::Domain(format!(
                    "sequence {:?}: ground-truth box ({}, {}, {}, {}) outside {}x{} frame",
                    self.name, b.x, b.y, b.w, b.h, w, h
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}
