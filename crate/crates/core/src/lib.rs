pub mod cli;
pub mod engine;
pub mod error;
pub mod game;
pub mod graph;
pub mod output;
pub mod plant;
pub mod plot;
pub mod scenario;

pub use error::{NesError, Result};
