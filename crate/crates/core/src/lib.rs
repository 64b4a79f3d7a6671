pub mod alice;
pub mod bob;
pub mod channel;
pub mod error;
pub mod game;
pub mod io;
pub mod numerics;
pub mod protocol;
pub mod report;

pub use error::{Error, Result};
