//! Dataset manifest schema, empty-frame filtering and the train/validation
//! split.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::labelmap::read_labelmap;

/// Challenge stage a frame belongs to: the training pool or one of the
/// three test stages of increasing difficulty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
pub enum Stage {
    #[serde(rename = "train")]
    Train,
    #[serde(rename = "1")]
    Stage1,
    #[serde(rename = "2")]
    Stage2,
    #[serde(rename = "3")]
    Stage3,
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Stage::Train),
            "1" => Ok(Stage::Stage1),
            "2" => Ok(Stage::Stage2),
            "3" => Ok(Stage::Stage3),
            other => Err(Error::config(format!(
                "unknown stage '{other}' (expected train|1|2|3)"
            ))),
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Train => "train",
            Stage::Stage1 => "1",
            Stage::Stage2 => "2",
            Stage::Stage3 => "3",
        })
    }
}

/// One frame: identity, originating procedure, stage tag and the two files.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FrameRecord {
    pub frame_id: String,
    pub procedure: String,
    pub stage: Stage,
    pub image: PathBuf,
    pub annotation: PathBuf,
}

/// Per-stage record counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize)]
pub struct StageCounts {
    pub train: usize,
    pub stage1: usize,
    pub stage2: usize,
    pub stage3: usize,
}

#[derive(Debug, Clone, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct DatasetManifest {
    pub records: Vec<FrameRecord>,
}

impl DatasetManifest {
    pub fn new(records: Vec<FrameRecord>) -> Self {
        DatasetManifest { records }
    }

    pub fn stage_counts(&self) -> StageCounts {
        let mut c = StageCounts::default();
        for r in &self.records {
            match r.stage {
                Stage::Train => c.train += 1,
                Stage::Stage1 => c.stage1 += 1,
                Stage::Stage2 => c.stage2 += 1,
                Stage::Stage3 => c.stage3 += 1,
            }
        }
        c
    }

    pub fn stage_records(&self, stage: Stage) -> Vec<&FrameRecord> {
        self.records.iter().filter(|r| r.stage == stage).collect()
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Load and validate a JSON manifest. Relative paths are resolved against
/// the manifest's directory; every referenced file must exist.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| {
        Error::format(format!("{}: malformed manifest: {e}", path.display()))
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut seen: HashMap<PathBuf, bool> = HashMap::new();
    for r in &mut manifest.records {
        r.image = resolve(base, &r.image);
        r.annotation = resolve(base, &r.annotation);
        for (kind, p) in [("image", &r.image), ("annotation", &r.annotation)] {
            let exists = *seen
                .entry(p.clone())
                .or_insert_with(|| p.exists());
            if !exists {
                return Err(Error::format(format!(
                    "frame '{}': {kind} path {} does not exist",
                    r.frame_id,
                    p.display()
                )));
            }
        }
    }
    Ok(manifest)
}

/// Write a manifest as pretty JSON.
pub fn save_manifest(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Outcome of removing all-background training frames.
pub struct FilterOutcome {
    pub manifest: DatasetManifest,
    /// Number of training frames removed.
    pub removed: usize,
    /// Set when the filter left zero training frames behind.
    pub warning: Option<String>,
}

/// Drop training frames whose annotation is entirely background. Test-stage
/// records pass through untouched. Annotations are read once per distinct
/// path.
pub fn filter_empty_frames(manifest: &DatasetManifest) -> Result<FilterOutcome> {
    let mut empty_cache: HashMap<PathBuf, bool> = HashMap::new();
    let mut kept = Vec::with_capacity(manifest.records.len());
    let mut removed = 0usize;
    let mut had_train = false;
    for r in &manifest.records {
        if r.stage != Stage::Train {
            kept.push(r.clone());
            continue;
        }
        had_train = true;
        let is_empty = match empty_cache.get(&r.annotation) {
            Some(&v) => v,
            None => {
                let v = read_labelmap(&r.annotation)?.map.is_empty_frame();
                empty_cache.insert(r.annotation.clone(), v);
                v
            }
        };
        if is_empty {
            removed += 1;
        } else {
            kept.push(r.clone());
        }
    }
    let manifest = DatasetManifest::new(kept);
    let warning = (had_train && manifest.stage_counts().train == 0)
        .then(|| "all training frames were empty; training set is now empty".to_string());
    Ok(FilterOutcome {
        manifest,
        removed,
        warning,
    })
}

/// Seeded 85-15-style split of the training records. Train size is
/// round(n·fraction); the two halves partition the input.
pub fn split_train_val(
    records: &[FrameRecord],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<FrameRecord>, Vec<FrameRecord>)> {
    if records.is_empty() {
        return Err(Error::contract("split_train_val: empty training set"));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::config(format!(
            "split fraction {fraction} outside (0,1)"
        )));
    }
    let mut shuffled: Vec<FrameRecord> = records.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffled.shuffle(&mut rng);
    let n_train = ((records.len() as f64) * fraction).round() as usize;
    let val = shuffled.split_off(n_train.min(shuffled.len()));
    Ok((shuffled, val))
}
