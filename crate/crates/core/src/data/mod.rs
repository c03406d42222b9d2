//! Videos, features, annotations, label conversion, splits and file formats.

mod features;
mod io;
mod labels;
mod split;
mod types;

pub use features::{
    decode_feature_stream, encode_feature_stream, read_feature_stream, write_feature_stream,
    FEATURE_MAGIC, FEATURE_VERSION, HEADER_LEN,
};
pub use io::{
    corpus_fingerprint, feature_path, read_json, write_json, read_annotations, read_manifest, write_annotations, write_manifest,
    Annotations, Corpus, LabeledVideo, ANNOTATIONS_FILE, FEATURES_DIR, FEATURE_EXT,
    MANIFEST_FILE,
};
pub use labels::{intervals_to_frame_labels, time_to_frame, LabelConversion};
pub use split::{build_split, validation_participants, Split, SplitMode, SplitSpec};
pub use types::{
    Activity, FeatureStream, FrameLabelTrack, StruggleIntervals, VideoRecord, MAX_ATTEMPTS,
};
