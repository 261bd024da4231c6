//! Sample schema, synthetic scene dataset, text normalisation and the
//! on-disk dataset format.

pub mod audio;
pub mod dataset;
pub mod instruct;
pub mod normalize;
pub mod scene;
mod types;

pub use audio::{synth_audio_features, synth_audio_features_with, DEFAULT_AUDIO_SEED, DEFAULT_FRAMES_PER_CHAR};
pub use dataset::{
    content_hash, generate_dataset, load_image, read_dataset, read_manifest, validate_sample,
    write_dataset, AudioSettings, Dataset, DatasetConfig, DatasetManifest, IMAGES_DIR, MANIFEST_FILE,
    SAMPLES_FILE,
};
pub use instruct::{make_instruction, relation, Relation};
pub use normalize::{normalize_text, Normalized};
pub use scene::{render_scene, synth_scene, synth_scene_on, Color, SceneSpec, Shape, ShapeKind};
pub use types::{BBox, InstructionType, Sample};

pub use crate::error::DataError;
