#![allow(dead_code)]

pub mod naive;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use inpaint::dataset::synthetic::write_synthetic_cifar;

pub const SYNTH_SEED: u64 = 0;

/// A synthetic dataset in CIFAR-10 layout, generated once per target dir
/// and shared by every test binary.
pub fn synth_data() -> &'static Path {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let root = PathBuf::from(env!("CARGO_TARGET_TMPDIR"));
        let dir = root.join(format!("synth-cifar-{SYNTH_SEED}"));
        if !dir.join("test_batch.bin").exists() {
            let staging = root.join(format!("synth-cifar-{SYNTH_SEED}-{}", std::process::id()));
            write_synthetic_cifar(&staging, SYNTH_SEED).expect("generate synthetic data");
            if std::fs::rename(&staging, &dir).is_err() {
                // another process got there first
                let _ = std::fs::remove_dir_all(&staging);
            }
        }
        dir
    })
}

pub fn inpaint() -> Command {
    Command::new(env!("CARGO_BIN_EXE_inpaint"))
}

pub fn run(args: &[&str]) -> Output {
    inpaint().args(args).output().expect("spawn inpaint")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}
