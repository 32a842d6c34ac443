//! Writes a seeded random weight archive to disk so the CLI and the
//! evaluation flows have something to load. The values are small enough to
//! keep activations bounded; they are a stand-in for an imported checkpoint,
//! not a trained model.
//!
//! Usage: cargo run --example make_demo_weights -- <2|4> <seed> <out-file>

use std::path::Path;
use std::process::ExitCode;

use ipassr_core::imaging::Upscale;
use ipassr_core::network::WeightArchive;

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    let (factor, seed, out) = match &args[1..] {
        [f, s, o] => match (f.parse::<u32>(), s.parse::<u64>()) {
            (Ok(f), Ok(s)) => (f, s, o),
            _ => {
                eprintln!("error: scale and seed must be integers");
                return ExitCode::from(2);
            }
        },
        _ => {
            eprintln!("usage: make_demo_weights <2|4> <seed> <out-file>");
            return ExitCode::from(2);
        }
    };
    let scale = match Upscale::from_factor(factor) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let archive = WeightArchive::random(scale, seed);
    match archive.save(Path::new(out)) {
        Ok(()) => {
            println!(
                "wrote={out} scale={factor} seed={seed} params={}",
                archive.param_count()
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
