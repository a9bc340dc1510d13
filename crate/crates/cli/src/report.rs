//! Plot-ready FDR paths from trace directories.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use sheref_core::sim::metrics::{MetricsAccumulator, RunStats};
use sheref_core::sim::run::RunTrace;

use crate::error::CliError;
use crate::open_output;

pub const CSV_HEADER: &str = "group,t,fdr,fdr_se,reps";

fn collect(dir: &Path, found: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        if path.is_dir() {
            collect(&path, found)?;
        } else if path.extension().is_some_and(|x| x == "jsonl") {
            found.push(path);
        }
    }
    Ok(())
}

/// Groups are trace subdirectories relative to `root`, `.` for files at
/// the top level.
pub fn render(root: &Path) -> Result<String, CliError> {
    let mut files = Vec::new();
    collect(root, &mut files)?;
    files.sort();

    let mut groups: BTreeMap<String, (u32, MetricsAccumulator)> = BTreeMap::new();
    for path in &files {
        let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
        let (trace, _) = RunTrace::read_jsonl(BufReader::new(file)).map_err(|e| CliError::Stream {
            line: match &e {
                sheref_core::sim::run::TraceReadError::Malformed { line, .. } => *line,
                _ => 0,
            },
            reason: format!("{}: {e}", path.display()),
        })?;
        let group = path
            .parent()
            .and_then(|p| p.strip_prefix(root).ok())
            .map(|p| p.display().to_string())
            .filter(|s| !s.is_empty())
            .unwrap_or_else(|| ".".into());
        let entry = groups
            .entry(group.clone())
            .or_insert_with(|| (trace.deadline, MetricsAccumulator::new(trace.deadline.saturating_sub(1) as usize)));
        if entry.0 != trace.deadline {
            return Err(CliError::Run(format!(
                "group {group} mixes deadlines {} and {}",
                entry.0, trace.deadline
            )));
        }
        entry.1.push(&RunStats::from_trace(&trace));
    }

    let mut text = String::from(CSV_HEADER);
    text.push('\n');
    for (group, (_, acc)) in &groups {
        let m = acc.finish();
        for (i, (fdr, se)) in m.fdr_path.iter().zip(&m.fdr_path_se).enumerate() {
            writeln!(text, "{group},{},{fdr},{se},{}", i + 1, m.replications).expect("writing to a string");
        }
    }
    Ok(text)
}

pub fn run(root: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let text = render(root)?;
    let mut w = open_output(out)?;
    w.write_all(text.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| CliError::io(out.unwrap_or(Path::new("<stdout>")), e))
}
