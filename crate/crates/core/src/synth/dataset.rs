//! On-disk datasets: WAV files plus a JSON-lines manifest.
//!
//! Layout under the output directory:
//!
//! ```text
//! scene.json                 the SceneConfig used
//! manifest.jsonl             one ManifestRecord per line
//! {split}/{id}_mix.wav       M-channel mixture (float32)
//! {split}/{id}_s{i}.wav      target of source i (float32, mono)
//! ```

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::nn::RngState;
use crate::signal::{read_wav, write_wav, MultichannelWaveform, SampleFormat};
use crate::synth::{gen_clip, SceneConfig, SourceKind};

pub const SPLITS: [&str; 3] = ["train", "val", "test"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for SplitCounts {
    fn default() -> Self {
        SplitCounts {
            train: 64,
            val: 16,
            test: 16,
        }
    }
}

impl SplitCounts {
    fn get(&self, split: &str) -> usize {
        match split {
            "train" => self.train,
            "val" => self.val,
            _ => self.test,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub split: String,
    /// Paths relative to the manifest directory.
    pub mixture: String,
    pub references: Vec<String>,
    pub seed: u64,
    pub mics: usize,
    pub sources: usize,
    pub sample_rate: u32,
    pub samples: usize,
    pub source_kind: SourceKind,
    pub scale: f64,
    pub decay_rate: Vec<f64>,
    pub direct_delay: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    pub fn path(root: &Path) -> PathBuf {
        root.join("manifest.jsonl")
    }

    /// Read `manifest.jsonl` from a dataset directory (or the file itself).
    pub fn load(path: &Path) -> Result<Self> {
        let (root, file) = if path.is_dir() {
            (path.to_path_buf(), Self::path(path))
        } else {
            (path.parent().unwrap_or(Path::new(".")).to_path_buf(), path.to_path_buf())
        };
        let text = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| Error::Json { path: file.clone(), source: e }))
            .collect::<Result<_>>()?;
        Ok(DatasetManifest { root, records })
    }

    pub fn split<'a>(&'a self, split: &'a str) -> impl Iterator<Item = &'a ManifestRecord> + 'a {
        self.records.iter().filter(move |r| r.split == split)
    }
}

/// Seed of clip `index` in `split`; splits draw from disjoint streams.
pub fn clip_seed(base: u64, split: &str, index: usize) -> u64 {
    let tag = SPLITS.iter().position(|s| *s == split).unwrap_or(SPLITS.len()) as u64 + 1;
    RngState::new(base).fork(tag).fork(index as u64).seed()
}

/// Generate every clip and write the dataset under `dir`.
pub fn build_dataset(cfg: &SceneConfig, counts: SplitCounts, dir: &Path) -> Result<DatasetManifest> {
    cfg.validate()?;
    let mut records = Vec::new();
    for split in SPLITS {
        let n = counts.get(split);
        if n == 0 {
            continue;
        }
        let sdir = dir.join(split);
        fs::create_dir_all(&sdir).map_err(|e| Error::io(&sdir, e))?;
        let built: Vec<Result<ManifestRecord>> = exec::map_indices(n, |k| {
            let seed = clip_seed(cfg.seed, split, k);
            let (m, filters) = gen_clip(cfg, seed)?;
            let id = format!("{split}{k:05}");
            let mix_rel = format!("{split}/{id}_mix.wav");
            write_wav(&dir.join(&mix_rel), &m.mixture, SampleFormat::Float32)?;
            let mut refs = Vec::new();
            for (i, t) in m.targets.into_iter().enumerate() {
                let rel = format!("{split}/{id}_s{i}.wav");
                write_wav(&dir.join(&rel), &MultichannelWaveform::new(vec![t], cfg.sample_rate)?, SampleFormat::Float32)?;
                refs.push(rel);
            }
            Ok(ManifestRecord {
                id,
                split: split.to_string(),
                mixture: mix_rel,
                references: refs,
                seed,
                mics: cfg.mics,
                sources: cfg.sources,
                sample_rate: cfg.sample_rate,
                samples: cfg.samples(),
                source_kind: cfg.source_kind,
                scale: m.scale,
                decay_rate: filters.decay_rate,
                direct_delay: filters.direct_delay,
            })
        });
        for r in built {
            records.push(r?);
        }
    }
    let scene = dir.join("scene.json");
    fs::write(&scene, serde_json::to_string_pretty(cfg).expect("scene serializes")).map_err(|e| Error::io(&scene, e))?;
    let path = DatasetManifest::path(dir);
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    for r in &records {
        writeln!(f, "{}", serde_json::to_string(r).expect("record serializes")).map_err(|e| Error::io(&path, e))?;
    }
    Ok(DatasetManifest {
        root: dir.to_path_buf(),
        records,
    })
}

/// One loaded utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub id: String,
    pub mixture: MultichannelWaveform,
    pub targets: Vec<Vec<f32>>,
}

#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub examples: Vec<Example>,
}

impl Dataset {
    /// Load every record of `split`, checking shapes against the manifest.
    pub fn load(manifest: &DatasetManifest, split: &str) -> Result<Self> {
        let mut examples = Vec::new();
        for r in manifest.split(split) {
            let path = manifest.root.join(&r.mixture);
            let mixture = read_wav(&path)?;
            if mixture.channels() != r.mics || mixture.len() != r.samples {
                return Err(Error::shape(
                    path.display().to_string(),
                    format!("{}×{} samples, manifest says {}×{}", mixture.channels(), mixture.len(), r.mics, r.samples),
                ));
            }
            let mut targets = Vec::new();
            for rel in &r.references {
                let p = manifest.root.join(rel);
                let w = read_wav(&p)?;
                if w.channels() != 1 || w.len() != r.samples {
                    return Err(Error::shape(p.display().to_string(), "reference must be mono and as long as the mixture"));
                }
                targets.push(w.into_channels().remove(0));
            }
            examples.push(Example {
                id: r.id.clone(),
                mixture,
                targets,
            });
        }
        Ok(Dataset { examples })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}
