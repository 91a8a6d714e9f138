//! Part-number to datasheet-URL libraries.
//!
//! Configured in the run config as
//!
//! ```toml
//! [[libraries]]
//! kind = "csv_table"          # part_number,datasheet_url
//! priority = 1
//! path = "parts.csv"
//!
//! [[libraries]]
//! kind = "local_directory"    # files whose stem equals the part number
//! priority = 2
//! path = "datasheets"
//!
//! [[libraries]]
//! kind = "json_template_api"  # GET template -> {"datasheet_url": ...}
//! priority = 3
//! url_template = "https://parts.example/api/{part}"
//!
//! [[libraries]]
//! kind = "http_part_api"      # GET {base_url}/parts/{part} -> {"datasheet_url"} or {"datasheet_urls": [...]}
//! priority = 4
//! base_url = "https://plm.example"
//! token_env = "PLM_TOKEN"
//! ```
//!
//! Relative paths resolve against the config file's directory. Local results
//! are reported as `file:` URLs relative to that directory so that candidate
//! URLs, and therefore agent payloads, do not depend on where the checkout
//! lives.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::fetch::{is_http, resolve, Fetcher};
use super::{DatasheetError, PartRef};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LibraryKind {
    HttpPartApi {
        base_url: String,
        #[serde(default)]
        token_env: Option<String>,
    },
    JsonTemplateApi {
        url_template: String,
    },
    CsvTable {
        path: PathBuf,
    },
    LocalDirectory {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LibrarySource {
    pub priority: i64,
    #[serde(flatten)]
    pub kind: LibraryKind,
}

impl LibrarySource {
    pub fn new(priority: i64, kind: LibraryKind) -> Self {
        Self { priority, kind }
    }

    fn name(&self) -> &'static str {
        match self.kind {
            LibraryKind::HttpPartApi { .. } => "http_part_api",
            LibraryKind::JsonTemplateApi { .. } => "json_template_api",
            LibraryKind::CsvTable { .. } => "csv_table",
            LibraryKind::LocalDirectory { .. } => "local_directory",
        }
    }
}

/// Rejects duplicate priorities.
pub fn validate_libraries(libs: &[LibrarySource]) -> Result<(), String> {
    let mut seen = std::collections::HashSet::new();
    for l in libs {
        if !seen.insert(l.priority) {
            return Err(format!("library priority {} is used twice", l.priority));
        }
    }
    Ok(())
}

fn file_url(p: &Path) -> String {
    let s = p.to_string_lossy().replace('\\', "/");
    if p.is_absolute() {
        format!("file://{s}")
    } else {
        format!("file:{s}")
    }
}

fn encode(part: &str) -> String {
    url::form_urlencoded::byte_serialize(part.as_bytes()).collect()
}

fn json_urls(body: &[u8]) -> Result<Vec<String>, String> {
    let v: Value = serde_json::from_slice(body).map_err(|e| e.to_string())?;
    let mut out = Vec::new();
    if let Some(u) = v.get("datasheet_url").and_then(Value::as_str) {
        out.push(u.to_string());
    }
    for u in v.get("datasheet_urls").and_then(Value::as_array).into_iter().flatten() {
        if let Some(u) = u.as_str() {
            out.push(u.to_string());
        }
    }
    Ok(out)
}

async fn query(
    lib: &LibrarySource,
    id: &str,
    fetcher: &dyn Fetcher,
    base_dir: &Path,
) -> Result<Vec<String>, String> {
    match &lib.kind {
        LibraryKind::HttpPartApi { base_url, token_env } => {
            let url = format!("{}/parts/{}", base_url.trim_end_matches('/'), encode(id));
            let token = token_env.as_ref().and_then(|v| std::env::var(v).ok());
            match fetcher.fetch_authorized(&url, token).await {
                Ok(body) => json_urls(&body),
                // an unknown part is an empty answer, not a library failure
                Err(DatasheetError::FetchFailed { detail, .. }) if detail.contains("404") => Ok(vec![]),
                Err(e) => Err(e.to_string()),
            }
        }
        LibraryKind::JsonTemplateApi { url_template } => {
            let url = url_template.replace("{part}", &encode(id));
            match fetcher.fetch(&url).await {
                Ok(body) => json_urls(&body),
                Err(DatasheetError::FetchFailed { detail, .. }) if detail.contains("404") => Ok(vec![]),
                Err(e) => Err(e.to_string()),
            }
        }
        LibraryKind::CsvTable { path } => {
            let full = resolve(base_dir, path);
            let mut rdr = csv::ReaderBuilder::new()
                .trim(csv::Trim::All)
                .from_path(&full)
                .map_err(|e| format!("{}: {e}", full.display()))?;
            let headers = rdr.headers().map_err(|e| e.to_string())?.clone();
            let col = |name: &str| {
                headers
                    .iter()
                    .position(|h| h == name)
                    .ok_or_else(|| format!("{}: missing column `{name}`", full.display()))
            };
            let (pc, uc) = (col("part_number")?, col("datasheet_url")?);
            let dir = path.parent().unwrap_or(Path::new(""));
            let mut out = Vec::new();
            for rec in rdr.records() {
                let rec = rec.map_err(|e| format!("{}: {e}", full.display()))?;
                if rec.get(pc) != Some(id) {
                    continue;
                }
                let Some(u) = rec.get(uc).filter(|u| !u.is_empty()) else { continue };
                if is_http(u) || u.starts_with("file://") {
                    out.push(u.to_string());
                } else {
                    out.push(file_url(&dir.join(u.strip_prefix("file:").unwrap_or(u))));
                }
            }
            Ok(out)
        }
        LibraryKind::LocalDirectory { path } => {
            let full = resolve(base_dir, path);
            let entries = std::fs::read_dir(&full).map_err(|e| format!("{}: {e}", full.display()))?;
            let mut names: Vec<String> = entries
                .filter_map(Result::ok)
                .filter(|e| e.file_type().is_ok_and(|t| t.is_file()))
                .filter_map(|e| {
                    let p = e.path();
                    (p.file_stem()?.to_str()? == id).then(|| p.file_name()?.to_str().map(str::to_string))?
                })
                .collect();
            names.sort();
            Ok(names.into_iter().map(|n| file_url(&path.join(n))).collect())
        }
    }
}

/// Candidate datasheet URLs for `part`: the schematic's own URL first, then
/// each library's answers in priority order, without duplicates. Libraries
/// that fail are logged and skipped.
pub async fn locate(
    part: &PartRef,
    libraries: &[LibrarySource],
    schematic_url: Option<&str>,
    fetcher: &dyn Fetcher,
    base_dir: &Path,
) -> Result<Vec<String>, DatasheetError> {
    let mut out: Vec<String> = Vec::new();
    let push = |u: String, out: &mut Vec<String>| {
        if !out.contains(&u) {
            out.push(u);
        }
    };
    if let Some(u) = schematic_url.filter(|u| !u.trim().is_empty()) {
        push(u.to_string(), &mut out);
    }
    let mut libs: Vec<&LibrarySource> = libraries.iter().collect();
    libs.sort_by_key(|l| l.priority);
    let ids: Vec<&str> = [part.mpn.as_deref(), part.ipn.as_deref()].into_iter().flatten().collect();
    for lib in libs {
        for id in &ids {
            match query(lib, id, fetcher, base_dir).await {
                Ok(urls) => urls.into_iter().for_each(|u| push(u, &mut out)),
                Err(e) => tracing::warn!(library = lib.name(), part = %id, error = %e, "library lookup failed"),
            }
        }
    }
    if out.is_empty() {
        return Err(DatasheetError::NoCandidates(part.key().to_string()));
    }
    Ok(out)
}
