//! Datasets, seeded random streams, and every on-disk format: IDX input,
//! binary checkpoints, trace CSV, and PGM image grids.

pub mod checkpoint;
mod dataset;
mod image;
pub mod rng;
mod trace_csv;

pub use checkpoint::{
    load_checkpoint, load_tensors, save_checkpoint, save_tensors, CheckpointHeader, CHECKPOINT_VERSION,
};
pub use dataset::{
    blob_center, load_idx, make_toy_dataset, write_idx, Dataset, Split, ToyKind, BLOB_RADIUS, IDX_IMAGES_MAGIC,
    IDX_LABELS_MAGIC,
};
pub use image::{encode_pgm, image_grid, scatter_pgm, to_byte, write_image_grid, write_scatter_pgm};
pub use rng::{normals, permutation, SeedTree, StreamRng};
pub use trace_csv::{format_sig, read_trace_csv, trace_csv, write_trace_csv, TRACE_HEADER};
