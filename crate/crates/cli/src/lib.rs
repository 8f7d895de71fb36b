//! Library side of the `cph` binary: spec parsing, the subcommands and
//! the SVG writer.

pub mod commands;
pub mod spec;
pub mod svg;
