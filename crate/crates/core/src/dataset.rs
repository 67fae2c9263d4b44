//! On-disk universe layout (`<dir>/<ticker>/<YYYY-MM-DD>.csv` plus a `.json`
//! metadata file beside it) and `ticker,date` manifest files.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::epfilter::{Episode, EpisodeId, FilterError};
use crate::marketdata::{parse_ticks, MarketDataError, TickerMeta};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Market { path: PathBuf, source: MarketDataError },
    #[error("{path}: {source}")]
    Episode { path: PathBuf, source: FilterError },
    #[error("{path}: file name is not a YYYY-MM-DD date")]
    BadFileName { path: PathBuf },
    #[error("{path} line {line}: expected ticker,YYYY-MM-DD")]
    BadManifest { path: PathBuf, line: usize },
    #[error("episode {0} is listed but not in the data directory")]
    UnknownEpisode(EpisodeId),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Every `(ticker, date, csv path)` under `dir`, sorted.
pub fn list_days(dir: &Path) -> Result<Vec<(EpisodeId, PathBuf)>, DataError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let tdir = entry.map_err(io_err(dir))?.path();
        if !tdir.is_dir() {
            continue;
        }
        let ticker = tdir.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        for f in fs::read_dir(&tdir).map_err(io_err(&tdir))? {
            let path = f.map_err(io_err(&tdir))?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("csv") {
                continue;
            }
            let date = path
                .file_stem()
                .and_then(|s| s.to_str())
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| DataError::BadFileName { path: path.clone() })?;
            out.push((
                EpisodeId {
                    ticker: ticker.clone(),
                    date,
                },
                path,
            ));
        }
    }
    out.sort();
    Ok(out)
}

pub fn load_episode(id: &EpisodeId, csv: &Path) -> Result<Episode, DataError> {
    let meta_path = csv.with_extension("json");
    let text = fs::read_to_string(&meta_path).map_err(io_err(&meta_path))?;
    let meta = TickerMeta::from_json(&text).map_err(|source| DataError::Market {
        path: meta_path.clone(),
        source,
    })?;
    let file = fs::File::open(csv).map_err(io_err(csv))?;
    let records = parse_ticks(io::BufReader::new(file), &meta).map_err(|source| DataError::Market {
        path: csv.to_path_buf(),
        source,
    })?;
    Episode::new(id.ticker.clone(), id.date, records, meta).map_err(|source| DataError::Episode {
        path: csv.to_path_buf(),
        source,
    })
}

/// Loads every day in the universe, in `(ticker, date)` order.
pub fn load_universe(dir: &Path) -> Result<Vec<Episode>, DataError> {
    list_days(dir)?
        .iter()
        .map(|(id, path)| load_episode(id, path))
        .collect()
}

/// Loads only the listed episodes, in manifest order.
pub fn load_listed(dir: &Path, ids: &[EpisodeId]) -> Result<Vec<Episode>, DataError> {
    ids.iter()
        .map(|id| {
            let csv = dir.join(&id.ticker).join(format!("{}.csv", id.date));
            if !csv.exists() {
                return Err(DataError::UnknownEpisode(id.clone()));
            }
            load_episode(id, &csv)
        })
        .collect()
}

/// Writes one `ticker,date` per line after an optional `#` header line.
pub fn write_manifest(path: &Path, header: Option<&str>, ids: &[EpisodeId]) -> Result<(), DataError> {
    let mut text = header.map(|h| format!("# {h}\n")).unwrap_or_default();
    text.extend(ids.iter().map(|id| format!("{id}\n")));
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_manifest(path: &Path) -> Result<Vec<EpisodeId>, DataError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(i, l)| {
            EpisodeId::parse(l).ok_or_else(|| DataError::BadManifest {
                path: path.to_path_buf(),
                line: i + 1,
            })
        })
        .collect()
}
