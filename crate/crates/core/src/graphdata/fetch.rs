use std::fs;
use std::io::{Cursor, Read};
use std::path::{Path, PathBuf};

use log::info;

use crate::error::{Error, Result};

pub const DEFAULT_URL_BASE: &str = "https://www.chrsmrrs.com/graphkerneldatasets";

const MANDATORY: [&str; 3] = ["A", "graph_indicator", "graph_labels"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fetched {
    /// Directory holding `{name}_*.txt`.
    pub path: PathBuf,
    /// True when no download was needed.
    pub cached: bool,
}

/// `{cache_dir}/{name}/raw`.
pub fn raw_dir(cache_dir: &Path, name: &str) -> PathBuf {
    cache_dir.join(name).join("raw")
}

fn is_complete(dir: &Path, name: &str) -> bool {
    MANDATORY
        .iter()
        .all(|s| dir.join(format!("{name}_{s}.txt")).is_file())
}

/// Downloads `{url_base}/{name}.zip` into the cache unless the mandatory
/// files are already there.
pub fn fetch_tu(name: &str, url_base: &str, cache_dir: &Path) -> Result<Fetched> {
    let raw = raw_dir(cache_dir, name);
    if is_complete(&raw, name) {
        return Ok(Fetched {
            path: raw,
            cached: true,
        });
    }
    fs::create_dir_all(cache_dir)?;
    let lock = fs::File::create(cache_dir.join(format!("{name}.lock")))?;
    lock.lock()?;
    // Another process may have finished the download while we waited.
    if is_complete(&raw, name) {
        return Ok(Fetched {
            path: raw,
            cached: true,
        });
    }

    let url = format!("{}/{name}.zip", url_base.trim_end_matches('/'));
    info!("downloading {url}");
    let bytes = download(&url)?;
    let staging = cache_dir.join(name).join("raw.partial");
    if staging.exists() {
        fs::remove_dir_all(&staging)?;
    }
    fs::create_dir_all(&staging)?;
    extract_txt(&bytes, &staging)?;
    if !is_complete(&staging, name) {
        fs::remove_dir_all(&staging)?;
        return Err(Error::Integrity(format!(
            "archive for {name} lacks one of {name}_{{A,graph_indicator,graph_labels}}.txt"
        )));
    }
    if raw.exists() {
        fs::remove_dir_all(&raw)?;
    }
    fs::rename(&staging, &raw)?;
    Ok(Fetched {
        path: raw,
        cached: false,
    })
}

fn download(url: &str) -> Result<Vec<u8>> {
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .http_status_as_error(false)
        .build()
        .into();
    let mut resp = agent.get(url).call().map_err(|e| Error::Transport {
        status: 0,
        msg: format!("{url}: {e}"),
    })?;
    let status = resp.status().as_u16();
    if !(200..300).contains(&status) {
        return Err(Error::Transport {
            status,
            msg: format!("GET {url} failed"),
        });
    }
    resp.body_mut()
        .with_config()
        .limit(u64::MAX)
        .read_to_vec()
        .map_err(|e| Error::Transport {
            status,
            msg: format!("{url}: reading body: {e}"),
        })
}

/// Writes every `.txt` entry of the archive into `dest`, flattening
/// directories.
fn extract_txt(bytes: &[u8], dest: &Path) -> Result<()> {
    let mut archive = zip::ZipArchive::new(Cursor::new(bytes))
        .map_err(|e| Error::Integrity(format!("bad zip archive: {e}")))?;
    for i in 0..archive.len() {
        let mut entry = archive
            .by_index(i)
            .map_err(|e| Error::Integrity(format!("bad zip entry {i}: {e}")))?;
        if entry.is_dir() {
            continue;
        }
        let Some(file_name) = entry
            .enclosed_name()
            .and_then(|p| p.file_name().map(|f| f.to_owned()))
        else {
            continue;
        };
        if !file_name.to_string_lossy().ends_with(".txt") {
            continue;
        }
        let mut buf = Vec::with_capacity(entry.size() as usize);
        entry
            .read_to_end(&mut buf)
            .map_err(|e| Error::Integrity(format!("corrupt entry {}: {e}", entry.name())))?;
        fs::write(dest.join(file_name), buf)?;
    }
    Ok(())
}
