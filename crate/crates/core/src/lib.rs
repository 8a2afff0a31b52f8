//! Review polarity-wise recommendation.
//!
//! Each user's training reviews are split by polarity. A convolutional
//! extractor turns the positive document into importance over
//! user-preferred aspects and the negative document into importance over
//! user-rejected aspects. An attention map over the aspect indicator columns
//! transfers importance between the two sides, and the rating is the
//! preferred-aspect inner product minus the rejected-aspect one.

pub mod checkpoint;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod kernel;
pub mod model;
pub mod train;

pub use error::{Error, Result};
