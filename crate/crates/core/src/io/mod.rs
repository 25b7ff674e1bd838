//! On-disk formats: `.pts` annotations, bounding boxes, binary PGM images,
//! model files, configuration text, and corpus directories.

mod config;
mod corpus;
mod model;
mod pgm;
mod text;

pub use config::{
    config_to_string, load_synth_config, load_train_config, parse_pairs, parse_synth_config, parse_train_config,
    SynthConfig,
};
pub use corpus::{benchmark_seeds, load_corpus, make_benchmark, read_manifest, write_corpus, AnnotatedSample, MANIFEST};
pub use model::{decode_model, encode_model, load_model, save_model, MODEL_MAGIC, MODEL_VERSION};
pub use pgm::{decode_pgm, encode_pgm, load_image, write_image};
pub use text::{format_bbox, format_pts, load_bbox, load_pts, parse_bbox, parse_pts, write_bbox, write_pts};
