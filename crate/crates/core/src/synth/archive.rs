//! Dataset archive: `manifest.json` plus `blobs.bin` with frame-major RGB
//! bytes.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Event;
use crate::encoders::{AudioCaption, VideoClip};
use crate::error::{Error, Result};
use crate::model::{Example, ModelInput};
use crate::vocab::Vocabulary;

pub const ARCHIVE_VERSION: &str = "MICAP-DS-1";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const BLOBS_FILE: &str = "blobs.bin";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub frame_offset: u64,
    pub frame_len: u64,
    pub video_caption: String,
    pub audio_caption: String,
    pub references: Vec<String>,
    #[serde(default)]
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event: Option<Event>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(rename = "S")]
    pub s: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub vocab: Vocabulary,
    pub samples: Vec<SampleRecord>,
}

/// A validated manifest with its frame bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetArchive {
    manifest: Manifest,
    blobs: Vec<u8>,
}

impl DatasetArchive {
    pub fn new(manifest: Manifest, blobs: Vec<u8>) -> Result<Self> {
        validate(&manifest, blobs.len())?;
        Ok(Self { manifest, blobs })
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn blobs(&self) -> &[u8] {
        &self.blobs
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.manifest.vocab
    }

    pub fn len(&self) -> usize {
        self.manifest.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.samples.is_empty()
    }

    pub fn sample(&self, i: usize) -> &SampleRecord {
        &self.manifest.samples[i]
    }

    pub fn index_of(&self, id: &str) -> Result<usize> {
        self.manifest
            .samples
            .iter()
            .position(|s| s.id == id)
            .ok_or_else(|| Error::Inconsistent(format!("no sample with id {id}")))
    }

    /// Indices of the samples in `split`.
    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.sample(i).split == split)
            .collect()
    }

    pub fn frames(&self, i: usize) -> &[u8] {
        let s = self.sample(i);
        &self.blobs[s.frame_offset as usize..(s.frame_offset + s.frame_len) as usize]
    }

    pub fn clip(&self, i: usize) -> Result<VideoClip> {
        let m = &self.manifest;
        VideoClip::new(m.t, m.h, m.w, self.frames(i).to_vec())
    }

    pub fn audio(&self, i: usize) -> Result<AudioCaption> {
        let (ids, valid) = self
            .vocab()
            .encode_padded(&self.sample(i).audio_caption, self.manifest.s)?;
        AudioCaption::new(ids, valid)
    }

    pub fn input(&self, i: usize) -> Result<ModelInput> {
        Ok(ModelInput {
            clip: self.clip(i)?,
            audio: self.audio(i)?,
        })
    }

    pub fn example(&self, i: usize) -> Result<Example> {
        Ok(Example {
            input: self.input(i)?,
            caption: self.vocab().tokenize(&self.sample(i).video_caption),
        })
    }

    pub fn examples(&self, indices: &[usize]) -> Result<Vec<Example>> {
        indices.iter().map(|&i| self.example(i)).collect()
    }

    /// Replaces the frame bytes of every sample; used to probe variants that
    /// must ignore video.
    pub fn with_blobs(&self, blobs: Vec<u8>) -> Result<Self> {
        Self::new(self.manifest.clone(), blobs)
    }
}

fn validate(m: &Manifest, available: usize) -> Result<()> {
    if m.version != ARCHIVE_VERSION {
        return Err(Error::VersionMismatch {
            expected: ARCHIVE_VERSION.into(),
            found: m.version.clone(),
        });
    }
    if m.c != 3 {
        return Err(Error::Inconsistent(format!(
            "expected 3 channels, manifest says {}",
            m.c
        )));
    }
    let expected_len = (m.t * m.h * m.w * m.c) as u64;
    let mut ids = HashSet::new();
    let mut covered = 0u64;
    for s in &m.samples {
        if !ids.insert(s.id.as_str()) {
            return Err(Error::Inconsistent(format!("duplicate sample id {}", s.id)));
        }
        let end = s.frame_offset.saturating_add(s.frame_len);
        if end > available as u64 {
            return Err(Error::TruncatedBlob {
                sample: s.id.clone(),
                start: s.frame_offset,
                end,
                available: available as u64,
            });
        }
        if s.frame_len != expected_len {
            return Err(Error::Inconsistent(format!(
                "sample {} has {} frame bytes, T*h*w*c = {expected_len}",
                s.id, s.frame_len
            )));
        }
        if s.references.is_empty() {
            return Err(Error::Inconsistent(format!(
                "sample {} has no references",
                s.id
            )));
        }
        covered += s.frame_len;
    }
    if covered != available as u64 {
        return Err(Error::Inconsistent(format!(
            "samples address {covered} bytes but blobs hold {available}"
        )));
    }
    Ok(())
}

pub fn write_archive(archive: &DatasetArchive, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest =
        serde_json::to_string_pretty(&archive.manifest).map_err(|e| Error::json("manifest", e))?;
    let mpath = dir.join(MANIFEST_FILE);
    fs::write(&mpath, manifest).map_err(|e| Error::io(&mpath, e))?;
    let bpath = dir.join(BLOBS_FILE);
    fs::write(&bpath, &archive.blobs).map_err(|e| Error::io(&bpath, e))
}

pub fn read_archive(dir: &Path) -> Result<DatasetArchive> {
    let mpath = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let raw: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::json("manifest", e))?;
    // Check the version before the schema so foreign archives report it.
    let version = raw
        .get("version")
        .and_then(|v| v.as_str())
        .unwrap_or("<missing>");
    if version != ARCHIVE_VERSION {
        return Err(Error::VersionMismatch {
            expected: ARCHIVE_VERSION.into(),
            found: version.into(),
        });
    }
    let manifest: Manifest = serde_json::from_value(raw).map_err(|e| Error::json("manifest", e))?;
    let bpath = dir.join(BLOBS_FILE);
    let blobs = fs::read(&bpath).map_err(|e| Error::io(&bpath, e))?;
    DatasetArchive::new(manifest, blobs)
}
