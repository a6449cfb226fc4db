//! Synthetic sequences, sliding windows, and on-disk formats.

mod io;
mod synth;
mod windows;

pub use io::{
    decode_features, encode_features, load_dataset, read_annotations, read_features, sha256_hex,
    write_annotations, write_dataset, write_features, AnnotationRecord, Manifest,
    ANNOTATIONS_FILE, FEATURES_DIR, FEATURE_MAGIC, FEATURE_VERSION, MANIFEST_FILE,
};
pub use synth::{
    generate_dataset, generate_sequence, video_id, AnnotatedSequence, SynthConfig,
    SyntheticDataset, MAX_PACKING_ATTEMPTS,
};
pub use windows::{clip_instance, sliding_windows, window_offsets, Window, MIN_RETAINED_FRACTION};
