//! Command line and HTTP front ends for `seg_core`.

pub mod server;
