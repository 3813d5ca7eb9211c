//! Nested-subdivision digit expansions, the sufficient-digits coupling,
//! residual Markov chains, and a read-once perfect sampler.

pub mod error;
pub mod real;
pub mod scheme;
pub mod density;
pub mod coupling;
pub mod markov;
pub mod readonce;
pub mod verify;
pub mod polya;
pub mod acceptance;

pub use error::{Error, Result};
pub use real::{Hp, Real};
pub use scheme::{Digit, DigitSeq, Interval, Scheme, SchemeConfig};
