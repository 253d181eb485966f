//! Scenario files, trace and report formats, plots and the batch pipeline around `lfc-core`.

pub mod acceptance;
pub mod config;
pub mod files;
pub mod pipeline;
pub mod plot;

use std::fmt;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error("configuration: {0}")]
    Config(String),
    #[error("file format: {0}")]
    Format(String),
    #[error("model: {0}")]
    Model(#[from] lfc_core::model::ModelError),
    #[error("synthesis: {0}")]
    Lmi(#[from] lfc_core::lmi::LmiError),
    #[error("simulation: {0}")]
    Sim(#[from] lfc_core::dde::SimError),
    #[error("verification: {0}")]
    Verify(#[from] lfc_core::verify::VerifyError),
    #[error("provenance: {0}")]
    Provenance(String),
}

/// Hex SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in digest.iter() {
        fmt::Write::write_fmt(&mut s, format_args!("{b:02x}")).unwrap();
    }
    s
}
