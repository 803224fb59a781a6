//! Data layer: spectral cubes and sequences, band harmonization, the
//! cross-modality schedule, synthetic scene generation, and disk I/O.

pub mod io;
pub mod pad;
pub mod schedule;
pub mod synth;
pub mod types;

pub use io::{list_sequence_stems, load_sequence, save_sequence};
pub use pad::pad_bands;
pub use schedule::{modality_schedule, ScheduleMode};
pub use synth::{
    false_color_filter, generate_synthetic_sequence, generate_with_trace, metameric_partner,
    SceneSpec, SceneTrace,
};
pub use types::{HsiCube, Modality, ModalityRegistry, SequenceRecord, SpectralSignature};
