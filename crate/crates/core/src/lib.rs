//! Short-text clustering with attention-enhanced contrastive learning over
//! precomputed sentence embeddings.
//!
//! The pipeline projects each embedding, lets every sample attend to the
//! rest of its mini-batch to form a consistent representation, and trains
//! a clustering head with similarity-guided instance contrast, cluster-level
//! contrast, confidence-filtered pseudo-labels and entropy regularisers.
//!
//! ```no_run
//! use aecl::embeddings_io::generate_synthetic;
//! use aecl::model::ModelDims;
//! use aecl::training::{train, TrainConfig};
//!
//! let mut data = generate_synthetic(4, 200, 32, 10.0, 1.0, 7)?;
//! data.view1 = None; // let the trainer augment
//! let mut config = TrainConfig::new(ModelDims::new(32, 128, 4)?);
//! config.epochs_total = 40;
//! let (_params, history) = train(&data, &config)?;
//! println!("{:?}", history.last().and_then(|r| r.acc));
//! # Ok::<(), aecl::AeclError>(())
//! ```

pub mod checkpoint;
pub mod embeddings_io;
pub mod error;
pub mod evaluation;
pub mod losses;
pub mod model;
pub mod training;

pub use error::{AeclError, ErrorKind, Result};
