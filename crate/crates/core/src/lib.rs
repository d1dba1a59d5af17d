//! Weighted with-replacement sampling over multi-way joins without
//! materializing the join.

pub mod error;
pub mod gof;
pub mod ingest;
pub mod joinindex;
pub mod model;
pub mod multinomial;
pub mod oracle;
pub mod output;
pub mod pipeline;
pub mod run;

pub use error::{Error, ErrorCategory, Result};
pub use run::{run, Runner};
