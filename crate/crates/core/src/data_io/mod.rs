//! Tables, preprocessing, synthetic data and model files.

pub mod config;
pub mod model_io;
pub mod preprocess;
pub mod synth;
pub mod table;

pub use config::{apply_hyperparams, hyperparams_to_pairs, parse_key_values, read_key_values};
pub use model_io::{load_model, model_from_bytes, model_to_bytes, save_model};
pub use preprocess::{
    impute, normalize_observed, normalize_unit_columns, one_hot_flatten, split_train_test, Channel, ChannelLayout,
    ImputePolicy, NearbyWeights, CLINICAL_NORMAL_VALUES,
};
pub use synth::{generate_synthetic, Synthetic, SyntheticSpec};
pub use table::{
    encode_integer, load_csv, parse_table, to_table, write_csv, Dataset, EncodingMap, LabelIndex, LoadOptions,
    StringTable, DEFAULT_MISSING,
};
