//! Video copy detection with an ensemble of mutually compatible embedding networks.
//!
//! Several small embedding networks are trained so that their features live
//! in one shared space (anchored to a frozen base model on original images),
//! then fine-tuned on ground-truth copy pairs. Their averaged frame
//! descriptors drive both global video ranking and temporal segment
//! localization.

mod codec;
pub mod descriptor;
pub mod error;
pub mod localization;
pub mod losses;
pub mod net;
pub mod retrieval;
pub mod segment;
pub mod seed;
pub mod trainer;
pub mod transform;

pub use error::{FcplError, Result};
