//! EDF recordings, seizure summaries and synthetic surrogates.

mod edf;
mod recording;
mod summary;
mod synth;

pub use edf::{
    parse_edf_header, read_edf_file, read_recording, write_edf, EdfError, RecordingHeader,
    SignalHeader,
};
pub use recording::{
    default_channel_selection, resolve_selection, Calibration, Recording, CHB_MIT_23,
    EEG_SAMPLE_RATE,
};
pub use summary::{
    format_offsets, format_summary, parse_offsets, parse_summary, SeizureAnnotation, SummaryError,
};
pub use synth::{synth_recording, Signature, SynthError, SynthSpec, ICTAL_SECONDS};
