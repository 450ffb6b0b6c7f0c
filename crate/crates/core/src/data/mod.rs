//! Slices on disk, the centred crop, subject-level splits, synthetic data and
//! lesion-size statistics.

mod histogram;
mod io;
mod sample;
mod split;
mod synth;

pub use histogram::{histogram_edges, lesion_size_histogram, LesionSizeHistogram};
pub use io::{load_dataset, save_dataset, Layout};
pub use sample::{crop_center, crop_offsets, normalize_intensity, SamplePair};
pub use split::{make_split, proportional_counts, Split, SplitManifest};
pub use synth::{synth_dataset, synth_sample, Blob, Difficulty, SynthSample, LESION_COUNT_WEIGHTS};
