//! `eval`: PSNR/SSIM table for super-resolved outputs against ground truth.
//!
//! Scenes pair by file stem: `<stem>_L.png` and `<stem>_R.png` must exist in
//! both directories. Pairs are scored concurrently; `IPASSR_THREADS`
//! (integer >= 1) overrides the worker count.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use ipassr_core::imaging::{evaluate_pair, load_png, MetricReport, Protocol, StereoPair};

use crate::{invalid, AppResult, EvalArgs};

fn thread_count() -> AppResult<usize> {
    match std::env::var("IPASSR_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(invalid(format!(
                "IPASSR_THREADS must be an integer >= 1, got `{v}`"
            ))),
        },
        Err(std::env::VarError::NotPresent) => Ok(std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)),
        Err(e) => Err(invalid(format!("IPASSR_THREADS: {e}"))),
    }
}

/// Stems of every `*_L.png` / `*_R.png` file in the directory.
fn stems(dir: &Path) -> AppResult<BTreeSet<String>> {
    let mut out = BTreeSet::new();
    let entries =
        std::fs::read_dir(dir).map_err(|e| invalid(format!("{}: {e}", dir.display())))?;
    for entry in entries {
        let entry = entry.map_err(|e| invalid(format!("{}: {e}", dir.display())))?;
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        for suffix in ["_L.png", "_R.png"] {
            if let Some(stem) = name.strip_suffix(suffix) {
                out.insert(stem.to_string());
            }
        }
    }
    Ok(out)
}

fn load_pair(dir: &Path, stem: &str) -> AppResult<StereoPair> {
    let left = dir.join(format!("{stem}_L.png"));
    let right = dir.join(format!("{stem}_R.png"));
    let l = load_png(&left).map_err(|e| invalid(format!("{}: {e}", left.display())))?;
    let r = load_png(&right).map_err(|e| invalid(format!("{}: {e}", right.display())))?;
    StereoPair::new(l, r).map_err(|e| invalid(format!("{stem}: {e}")))
}

fn score_one(args: &EvalArgs, protocol: Protocol, stem: &str) -> AppResult<MetricReport> {
    let sr = load_pair(&args.sr_dir, stem)?;
    let gt = load_pair(&args.gt_dir, stem)?;
    evaluate_pair(&sr, &gt, protocol).map_err(|e| invalid(format!("{stem}: {e}")))
}

pub fn run(args: &EvalArgs) -> AppResult<()> {
    let protocol: Protocol = args
        .protocol
        .parse()
        .map_err(|e| invalid(format!("--protocol: {e}")))?;
    let threads = thread_count()?;
    for dir in [&args.sr_dir, &args.gt_dir] {
        if !dir.is_dir() {
            return Err(invalid(format!("not a directory: {}", dir.display())));
        }
    }

    let all: BTreeSet<String> = stems(&args.sr_dir)?
        .union(&stems(&args.gt_dir)?)
        .cloned()
        .collect();
    if all.is_empty() {
        return Err(invalid(format!(
            "no `*_L.png` / `*_R.png` files under {} or {}",
            args.sr_dir.display(),
            args.gt_dir.display()
        )));
    }
    let mut missing: Vec<PathBuf> = Vec::new();
    for stem in &all {
        for dir in [&args.sr_dir, &args.gt_dir] {
            for suffix in ["_L.png", "_R.png"] {
                let path = dir.join(format!("{stem}{suffix}"));
                if !path.is_file() {
                    missing.push(path);
                }
            }
        }
    }
    if !missing.is_empty() {
        let names: Vec<String> = missing.iter().map(|p| p.display().to_string()).collect();
        return Err(invalid(format!("unpaired files: {}", names.join(", "))));
    }

    let order: Vec<&String> = all.iter().collect();
    let results: Mutex<Vec<Option<AppResult<MetricReport>>>> =
        Mutex::new((0..order.len()).map(|_| None).collect());
    let cursor = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..threads.min(order.len()) {
            scope.spawn(|| loop {
                let i = cursor.fetch_add(1, Ordering::Relaxed);
                if i >= order.len() {
                    break;
                }
                let scored = score_one(args, protocol, order[i]);
                results.lock().expect("no panics hold the lock")[i] = Some(scored);
            });
        }
    });

    let mut rows = Vec::with_capacity(order.len());
    for (stem, slot) in order.iter().zip(results.into_inner().expect("scope joined")) {
        let report = slot.expect("every index was scored");
        rows.push((stem.as_str(), report?));
    }

    let width = rows
        .iter()
        .map(|(s, _)| s.len())
        .max()
        .unwrap_or(0)
        .max("mean".len());
    println!(
        "protocol={} pairs={} threads={threads}",
        protocol.name(),
        rows.len()
    );
    let line = |stem: &str, psnr_db: f64, ssim: f64| {
        println!(
            "pair={:<width$} psnr_db={:<8} ssim={:.6}",
            stem,
            format!("{psnr_db:.3}"),
            ssim
        );
    };
    let mut psnr_sum = 0.0f64;
    let mut ssim_sum = 0.0f64;
    for (stem, report) in &rows {
        psnr_sum += report.psnr_db;
        ssim_sum += report.ssim;
        line(stem, report.psnr_db, report.ssim);
    }
    let n = rows.len() as f64;
    line("mean", psnr_sum / n, ssim_sum / n);
    Ok(())
}
