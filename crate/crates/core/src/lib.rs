pub mod config;
pub mod encoder;
pub mod error;
pub mod gan;
pub mod imgc;
pub mod io;
pub mod kgc;
pub mod numcore;
pub mod ontology;
pub mod pipeline;
pub mod zoo;

pub use error::{Error, Result};
