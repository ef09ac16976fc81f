//! Files: images, run configuration and checkpoints.

pub mod checkpoint;
pub mod config;
pub mod image;

pub use self::checkpoint::Checkpoint;
pub use self::config::RunConfig;
pub use self::image::{crop_to, load_dir, load_image, pad_to_block, save_image, Extent};
