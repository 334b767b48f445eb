pub mod attention;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data_io;
pub mod error;
pub mod fusion;
pub mod gradcheck;
pub mod graph;
pub mod heads;
pub mod init;
pub mod metrics;
pub mod model;
pub mod pyramid;
pub mod train;

pub use error::{Error, Result};
