//! Turns a `<category>/<train|test>/*.off` tree into face-set caches.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::mesh_io::{load_mesh, Cache, CacheError, DatasetRecord, LoadError, Manifest, ManifestEntry};
use crate::preprocess::{fill_to_budget, prepare, PreprocessError};

pub const SPLITS: [&str; 2] = ["train", "test"];
const EXTENSIONS: [&str; 2] = ["off", "obj"];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error("{0}")]
    Layout(String),
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error("{path}: {source}")]
    Preprocess {
        path: String,
        #[source]
        source: PreprocessError,
    },
    #[error(transparent)]
    Cache(#[from] CacheError),
}

fn read_dir_sorted(dir: &Path) -> Result<Vec<PathBuf>, DatasetError> {
    let io = |e| DatasetError::Io(dir.display().to_string(), e);
    let mut out = std::fs::read_dir(dir)
        .map_err(io)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<Vec<_>, _>>()
        .map_err(io)?;
    out.sort();
    Ok(out)
}

/// Lists every mesh under `root`. Categories are the subdirectories of
/// `root`; files are sorted by path so the manifest is reproducible.
pub fn scan(root: &Path, face_budget: usize) -> Result<Manifest, DatasetError> {
    let categories: Vec<PathBuf> = read_dir_sorted(root)?.into_iter().filter(|p| p.is_dir()).collect();
    if categories.is_empty() {
        return Err(DatasetError::Layout(format!(
            "{}: no category directories",
            root.display()
        )));
    }
    let names: Vec<String> = categories
        .iter()
        .map(|p| p.file_name().unwrap_or_default().to_string_lossy().into_owned())
        .collect();
    let mut manifest = Manifest::with_categories(&names, face_budget);
    for (dir, name) in categories.iter().zip(&names) {
        let label = manifest.categories[name];
        for split in SPLITS {
            let sub = dir.join(split);
            if !sub.is_dir() {
                continue;
            }
            let entries = read_dir_sorted(&sub)?
                .into_iter()
                .filter(|p| {
                    p.extension()
                        .and_then(|e| e.to_str())
                        .is_some_and(|e| EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
                })
                .map(|p| ManifestEntry {
                    path: p.display().to_string(),
                    label,
                });
            match split {
                "train" => manifest.train.extend(entries),
                _ => manifest.test.extend(entries),
            }
        }
    }
    if manifest.train.is_empty() && manifest.test.is_empty() {
        return Err(DatasetError::Layout(format!(
            "{}: no .off/.obj files under <category>/train or <category>/test",
            root.display()
        )));
    }
    Ok(manifest)
}

/// Loads, decimates, normalizes and fills one mesh. The fill draws from
/// stream `stream` of `seed`, so results do not depend on thread count.
pub fn process_entry(
    entry: &ManifestEntry,
    budget: usize,
    seed: u64,
    stream: u64,
) -> Result<DatasetRecord, DatasetError> {
    let mesh = load_mesh(Path::new(&entry.path))?;
    let wrap = |source| DatasetError::Preprocess {
        path: entry.path.clone(),
        source,
    };
    let fs = prepare(&mesh, budget).map_err(wrap)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    Ok(DatasetRecord {
        face_set: fill_to_budget(&fs, budget, &mut rng).map_err(wrap)?,
        label: entry.label,
        source_path: entry.path.clone(),
    })
}

/// Outcome of [`build_split`]: the cache plus entries that failed when
/// `skip_invalid` was set.
#[derive(Debug)]
pub struct SplitResult {
    pub cache: Cache,
    pub kept: Vec<ManifestEntry>,
    pub skipped: Vec<(ManifestEntry, String)>,
}

/// Processes `entries` in parallel; `split` selects the stream range so the
/// two splits never share random draws.
pub fn build_split(
    entries: &[ManifestEntry],
    manifest: &Manifest,
    split: usize,
    seed: u64,
    skip_invalid: bool,
) -> Result<SplitResult, DatasetError> {
    let budget = manifest.face_budget;
    let results: Vec<Result<DatasetRecord, DatasetError>> = entries
        .par_iter()
        .enumerate()
        .map(|(i, e)| process_entry(e, budget, seed, ((split as u64) << 40) | i as u64))
        .collect();
    let mut records = Vec::with_capacity(entries.len());
    let mut kept = Vec::with_capacity(entries.len());
    let mut skipped = Vec::new();
    for (e, r) in entries.iter().zip(results) {
        match r {
            Ok(rec) => {
                records.push(rec);
                kept.push(e.clone());
            }
            Err(err) if skip_invalid => {
                log::warn!("skipping {}: {err}", e.path);
                skipped.push((e.clone(), err.to_string()));
            }
            Err(err) => return Err(err),
        }
    }
    Ok(SplitResult {
        cache: Cache::new(budget, manifest.num_categories(), records)?,
        kept,
        skipped,
    })
}
