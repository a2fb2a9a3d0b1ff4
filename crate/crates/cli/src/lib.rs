//! Command-line driver for the fce3d pipeline.

pub fn run() {}
