//! JSON episode manifests.
//!
//! Paths are resolved relative to the manifest's directory. Images are tensor
//! containers `[3, H, W]`; masks are graymaps or `[H, W]` containers.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::container::{read_tensor, MAGIC};
use crate::io::pgm::read_pgm;
use crate::mask::BinaryMask;
use crate::pipeline::episode::{Episode, Shot};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShotEntry {
    pub image: String,
    pub mask: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeEntry {
    pub class_id: u32,
    pub query_id: String,
    pub query_image: String,
    pub query_mask: String,
    pub supports: Vec<ShotEntry>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeManifest {
    pub episodes: Vec<EpisodeEntry>,
}

impl EpisodeManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_slice(&crate::io::read_file(path)?)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io::write_file(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

fn read_mask(path: &Path) -> Result<BinaryMask> {
    let bytes = crate::io::read_file(path)?;
    if bytes.starts_with(MAGIC) {
        BinaryMask::from_tensor(&read_tensor(path)?)
    } else {
        read_pgm(path)
    }
}

fn read_shot(dir: &Path, image: &str, mask: &str) -> Result<Shot> {
    let resolve = |p: &str| -> PathBuf { dir.join(p) };
    let img = read_tensor(resolve(image))?;
    let m = read_mask(&resolve(mask))?;
    Shot::new(img, m).map_err(|e| Error::Validation(format!("{image}: {e}")))
}

/// Reads a manifest and every file it references.
pub fn load_episodes(path: impl AsRef<Path>) -> Result<Vec<Episode>> {
    let path = path.as_ref();
    let manifest = EpisodeManifest::load(path)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    manifest
        .episodes
        .iter()
        .map(|e| {
            let query = read_shot(dir, &e.query_image, &e.query_mask)?;
            let supports = e
                .supports
                .iter()
                .map(|s| read_shot(dir, &s.image, &s.mask))
                .collect::<Result<Vec<_>>>()?;
            Episode::new(e.class_id, e.query_id.clone(), supports, query)
                .map_err(|err| Error::Validation(format!("episode {}: {err}", e.query_id)))
        })
        .collect()
}
