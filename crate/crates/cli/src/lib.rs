//! Command-line front end: simulation, deblurring, gradient checks, scoring
//! and benchmark sweeps.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod kernels;

use anyhow::Result;

use args::{Cli, Command};

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Deblur(a) => commands::deblur(a),
        Command::GradCheck(a) => commands::grad_check(a),
        Command::Evaluate(a) => commands::evaluate_cmd(a),
        Command::Bench(a) => commands::bench(a),
    }
}
