//! Sum-rate/fairness tradeoff machinery for the K-user MISO broadcast channel
//! under zero-forcing dirty-paper coding (ZFDPC).
//!
//! * [`channel`]: channel draws, the QR-based ZFDPC decomposition, DPC and ZFDPC rates.
//! * [`fairness`]: Jain's index and the l1 fairness measure.
//! * [`allocators`]: max-sum, proportional-fair, harmonic-mean and max-min power allocation.
//! * [`tristage`]: cake-cutting sweep, concave-envelope mixing, operating-point
//!   selection and the randomized allocation sampler.
//! * [`benchmark`]: multi-block ensembles and the rate-split upper bound.

pub mod allocators;
pub mod benchmark;
pub mod channel;
pub mod error;
pub mod fairness;
pub mod tristage;

pub use error::{Error, Result};
