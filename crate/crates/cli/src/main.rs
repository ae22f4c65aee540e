//! `miss` command-line driver.

mod args;
mod commands;

use std::process::ExitCode;

use miss_core::MissError;

const EXIT_CONFIG: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

fn exit_code(e: &MissError) -> u8 {
    match e.root() {
        MissError::Config(_) | MissError::ConfigFile { .. } => EXIT_CONFIG,
        MissError::NonFinite { .. } | MissError::GradCheck(_) | MissError::Autodiff(_) => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}

/// Training allocates and frees many multi-megabyte tensors per step; keeping
/// them on the heap instead of fresh mmaps halves wall time.
#[cfg(all(target_os = "linux", target_env = "gnu"))]
fn tune_allocator() {
    const LARGE: libc::c_int = 1 << 30;
    // SAFETY: mallopt only adjusts glibc allocator thresholds.
    unsafe {
        libc::mallopt(libc::M_MMAP_THRESHOLD, LARGE);
        libc::mallopt(libc::M_TRIM_THRESHOLD, LARGE);
    }
}

#[cfg(not(all(target_os = "linux", target_env = "gnu")))]
fn tune_allocator() {}

fn main() -> ExitCode {
    tune_allocator();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let matches = match args::parse(std::env::args_os().collect()) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_CONFIG) } else { ExitCode::SUCCESS };
        }
    };
    let result = args::resolve(&matches).and_then(|inv| commands::run(&inv.verb, inv.cfg));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            log::debug!("{e:?}");
            ExitCode::from(exit_code(&e))
        }
    }
}
