use std::path::Path;
use std::process::{Command, Output};

pub fn landside(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_landside"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

/// Runs a subcommand and panics with its stderr on failure.
pub fn ok(args: &[&str], out: &Path) {
    let o = landside(args, out);
    assert!(
        o.status.success(),
        "landside {args:?} exited {:?}: {}",
        o.status.code(),
        String::from_utf8_lossy(&o.stderr)
    );
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("UTF-8 path")
}
