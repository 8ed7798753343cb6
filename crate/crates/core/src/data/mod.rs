//! Cohort records, preprocessing, labeling and window extraction.

pub mod impute;
pub mod io;
pub mod labels;
pub mod normalize;
pub mod record;
pub mod split;
pub mod synth;
pub mod windows;

pub use impute::{impute, MAX_CARRY_MINUTES, SPO2_FLOOR};
pub use io::{atomic_write, read_cohort, read_manifest, read_surgery, write_cohort, write_surgery};
pub use labels::{
    assign_labels_and_mask, events_from_flags, label_events, label_events_with_run, low_flags, Interval, Outcome,
    LOW_SPO2, PERSISTENT_MIN_RUN,
};
pub use normalize::Normalizer;
pub use record::{SurgeryRecord, CHANNELS, SPO2};
pub use split::{split_cohort, CohortSplit};
pub use synth::{cohort_stats, synth_generate, CohortSpec, CohortStats};
pub use windows::{extract_windows, fill_window, forecast_target, prepare, LabelSpec, PreparedSurgery, WindowSample, WindowSpec};
