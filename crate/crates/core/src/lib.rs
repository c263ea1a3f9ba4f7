//! Adaptive multi-modal fusion hashing.
//!
//! Categories are assigned hash centers taken from a Sylvester Hadamard
//! matrix. Per-modality projections of Gaussian anchor features are trained
//! to regress those centers with modality weights learned in closed form,
//! and new data is encoded with weights re-estimated per batch. Codes are
//! compared by Hamming ranking and scored with mean average precision.
//!
//! ```
//! use amfh::centers::{audit_centers, build_center_table};
//!
//! let table = build_center_table(16, 10, 0).unwrap();
//! let audit = audit_centers(&table);
//! assert_eq!(audit.average, 8.0);
//! assert!(audit.passed);
//! ```

pub mod bench;
pub mod centers;
pub mod codes;
pub mod config;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod io;
pub mod kernel;
pub mod labels;
pub mod protocol;
pub mod synth;
pub mod trainer;

pub use centers::{HashCenterTable, TargetCodes};
pub use codes::CodeMatrix;
pub use encoder::{EncodeMode, EncodeOptions, EncodeResult, QueryBatch};
pub use error::{Error, Result};
pub use eval::EvalReport;
pub use kernel::AnchorSet;
pub use labels::LabelSet;
pub use synth::{DatasetBundle, SynthSpec};
pub use trainer::{TrainConfig, TrainedModel};
