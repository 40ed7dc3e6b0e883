//! Neural-network training that offloads every matrix product to untrusted
//! workers. Operands leave the trusted master only in blinded form, results
//! are unblinded and checked with Freivalds' algorithm, and the operands
//! blinded in the forward pass are reused by the backward pass.

pub mod dataset;
pub mod error;
pub mod master;
pub mod nn;
pub mod obfuscate;
pub mod privacy;
pub mod protocol;
pub mod rng;
pub mod tensor;
pub mod worker;

pub use error::{Error, Result};
pub use obfuscate::{IntegrityFailure, KeySlot, KeySpace, SecretKey, Verifier};
pub use rng::Rng;
pub use tensor::{Axis, Matrix, TensorError};
