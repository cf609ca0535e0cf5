//! Output plumbing: atomic file writes, the `run.json` config echo, and
//! small auxiliary file formats (split and metadata files).

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use viscon::dataset::Split;

/// Writes via a temporary sibling file and a rename so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let name = path
        .file_name()
        .with_context(|| format!("{} has no file name", path.display()))?
        .to_string_lossy();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

/// Renders with a writer-taking function, then writes atomically.
pub fn write_with<F>(path: &Path, render: F) -> Result<()>
where
    F: FnOnce(&mut Vec<u8>) -> viscon::Result<()>,
{
    let mut buf = Vec::new();
    render(&mut buf).with_context(|| format!("rendering {}", path.display()))?;
    write_atomic(path, &buf)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

#[derive(Serialize)]
struct RunRecord<'a, C: Serialize, E: Serialize> {
    tool: &'static str,
    version: &'static str,
    argv: Vec<String>,
    config: &'a C,
    effective: &'a E,
}

/// `run.json`: the command line, every parsed flag (defaults included) and
/// the resolved settings the command actually used.
pub fn write_run_json<C: Serialize, E: Serialize>(out_dir: &Path, config: &C, effective: &E) -> Result<PathBuf> {
    let path = out_dir.join("run.json");
    write_json(
        &path,
        &RunRecord {
            tool: "viscon",
            version: env!("CARGO_PKG_VERSION"),
            argv: std::env::args().collect(),
            config,
            effective,
        },
    )?;
    Ok(path)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitFile {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

impl SplitFile {
    pub fn from_split(split: &Split, ids: &[String]) -> Self {
        SplitFile {
            train: split.train().iter().map(|&i| ids[i].clone()).collect(),
            test: split.test().iter().map(|&i| ids[i].clone()).collect(),
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing split file {}", path.display()))
    }

    pub fn to_split(&self, ids: &[String]) -> Result<Split> {
        let lookup: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        let resolve = |names: &[String]| -> Result<Vec<usize>> {
            names
                .iter()
                .map(|n| match lookup.get(n.as_str()) {
                    Some(&i) => Ok(i),
                    None => bail!("split refers to unknown id {n:?}"),
                })
                .collect()
        };
        Ok(Split::new(resolve(&self.train)?, resolve(&self.test)?, ids.len())?)
    }
}

/// Reads column `column` of a metadata CSV keyed by `id`, in `ids` order.
pub fn read_group_column(path: &Path, column: &str, ids: &[String]) -> Result<Vec<String>> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let header = rdr.headers()?.clone();
    let id_col = header.iter().position(|h| h == "id").context("metadata CSV has no `id` column")?;
    let col = match header.iter().position(|h| h == column) {
        Some(c) => c,
        None => bail!("metadata CSV has no column {column:?}"),
    };
    let mut by_id = HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        by_id.insert(rec[id_col].to_string(), rec[col].to_string());
    }
    ids.iter()
        .map(|id| by_id.remove(id).with_context(|| format!("metadata has no row for id {id:?}")))
        .collect()
}
