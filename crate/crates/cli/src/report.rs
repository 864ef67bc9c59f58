//! Report files: every command echoes its resolved configuration next to its
//! results. `wall_clock_secs` is the one field that varies between otherwise
//! identical runs.

use std::path::{Path, PathBuf};

use recomb_core::{Error, Result};
use serde_json::{json, Value};

use crate::Ctx;

/// Fails unless the output directory already exists.
pub fn ensure_out_dir(out: &Path) -> Result<()> {
    if !out.is_dir() {
        return Err(Error::Io(format!(
            "output directory {} does not exist",
            out.display()
        )));
    }
    Ok(())
}

pub fn write_text(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::Io(format!("writing {}: {e}", path.display())))
}

/// Assembles and writes `{out}/{name}`, returning its path.
pub fn write_report(
    ctx: &Ctx,
    command: &str,
    results: Value,
    wall_clock_secs: f64,
    name: &str,
) -> Result<PathBuf> {
    let doc = json!({
        "command": command,
        "seed": ctx.seed,
        "config": ctx.config.values(),
        "results": results,
        "wall_clock_secs": wall_clock_secs,
    });
    let text = serde_json::to_string_pretty(&doc)
        .map_err(|e| Error::Format(format!("report serialization: {e}")))?;
    let path = ctx.out.join(name);
    write_text(&path, &text)?;
    Ok(path)
}
