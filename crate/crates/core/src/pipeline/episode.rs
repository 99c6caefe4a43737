//! Episodes and seeded episode sampling.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::init::SeededRng;
use crate::mask::BinaryMask;
use crate::tensor::Tensor;

/// An annotated image: `[3, H, W]` pixels plus its binary mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Shot {
    pub image: Tensor<f32>,
    pub mask: BinaryMask,
}

impl Shot {
    pub fn new(image: Tensor<f32>, mask: BinaryMask) -> Result<Self> {
        let (c, h, w) = image.chw()?;
        if c != 3 {
            return Err(Error::shape(format!("images must have 3 channels, got {c}")));
        }
        if mask.dims() != (h, w) {
            return Err(Error::shape(format!(
                "mask {:?} does not match image {h}x{w}",
                mask.dims()
            )));
        }
        Ok(Self { image, mask })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.mask.dims()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub class_id: u32,
    pub query_id: String,
    pub supports: Vec<Shot>,
    pub query: Shot,
}

impl Episode {
    pub fn new(class_id: u32, query_id: impl Into<String>, supports: Vec<Shot>, query: Shot) -> Result<Self> {
        if supports.is_empty() {
            return Err(Error::validation("an episode needs at least one support"));
        }
        if let Some(s) = supports.iter().find(|s| s.dims() != query.dims()) {
            return Err(Error::shape(format!(
                "support {:?} and query {:?} image dims differ",
                s.dims(),
                query.dims()
            )));
        }
        Ok(Self {
            class_id,
            query_id: query_id.into(),
            supports,
            query,
        })
    }

    pub fn shots(&self) -> usize {
        self.supports.len()
    }

    pub fn image_dims(&self) -> (usize, usize) {
        self.query.dims()
    }
}

/// K-shot inference settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KShotConfig {
    pub k: usize,
    pub tau: f64,
}

impl Default for KShotConfig {
    fn default() -> Self {
        Self { k: 1, tau: 0.5 }
    }
}

impl KShotConfig {
    pub fn new(k: usize, tau: f64) -> Result<Self> {
        let cfg = Self { k, tau };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::validation("shot count must be at least 1"));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::validation(format!("tau must lie in (0, 1), got {}", self.tau)));
        }
        Ok(())
    }
}

/// One labelled image available to the sampler.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolItem {
    pub class_id: u32,
    pub id: String,
    pub shot: Shot,
}

/// Draws `count` episodes: a class uniformly, then a query and `shots`
/// distinct supports from that class.
pub fn sample_episodes(pool: &[PoolItem], count: usize, shots: usize, rng: &mut SeededRng) -> Result<Vec<Episode>> {
    let mut classes: Vec<u32> = pool.iter().map(|p| p.class_id).collect();
    classes.sort_unstable();
    classes.dedup();
    let eligible: Vec<u32> = classes
        .into_iter()
        .filter(|&c| pool.iter().filter(|p| p.class_id == c).count() > shots)
        .collect();
    if eligible.is_empty() {
        return Err(Error::validation(format!(
            "no class has more than {shots} images to sample from"
        )));
    }
    (0..count)
        .map(|_| {
            let class = eligible[rng.gen_range(0..eligible.len())];
            let members: Vec<&PoolItem> = pool.iter().filter(|p| p.class_id == class).collect();
            let picked: Vec<&&PoolItem> = members.choose_multiple(rng, shots + 1).collect();
            let query = picked[0];
            let supports = picked[1..].iter().map(|p| p.shot.clone()).collect();
            Episode::new(class, query.id.clone(), supports, query.shot.clone())
        })
        .collect()
}
