#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod exec;
pub mod experiment;
pub mod gp;
pub mod iqc;
pub mod sector;
pub mod synthesis;
pub mod linalg;
pub mod lmi;
pub mod lti;
pub mod sim;

pub use error::{Error, Result};
