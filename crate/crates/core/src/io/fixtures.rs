//! Seeded synthetic segmentation data: rectangles (class 0) and discs
//! (class 1) on a noisy gray background.

use std::path::Path;

use rand::Rng;

use crate::error::Result;
use crate::init::{seeded, SeededRng};
use crate::io::container::write_tensor;
use crate::io::manifest::{EpisodeEntry, EpisodeManifest, ShotEntry};
use crate::io::pgm::write_pgm;
use crate::mask::BinaryMask;
use crate::pipeline::episode::{Episode, Shot};
use crate::tensor::Tensor;

pub const RECTANGLE: u32 = 0;
pub const DISC: u32 = 1;

const CLASS_COLORS: [[f32; 3]; 2] = [[0.9, 0.25, 0.2], [0.2, 0.35, 0.9]];
const BACKGROUND: [f32; 3] = [0.35, 0.35, 0.3];

/// Rectangle with edges on a 4-pixel grid.
fn rectangle(size: usize, rng: &mut SeededRng) -> BinaryMask {
    let cells = size / 4;
    let h = rng.gen_range(cells / 3..=cells * 2 / 3).max(1);
    let w = rng.gen_range(cells / 3..=cells * 2 / 3).max(1);
    let y0 = rng.gen_range(0..=cells - h) * 4;
    let x0 = rng.gen_range(0..=cells - w) * 4;
    BinaryMask::from_fn(size, size, |y, x| y >= y0 && y < y0 + h * 4 && x >= x0 && x < x0 + w * 4)
}

fn disc(size: usize, rng: &mut SeededRng) -> BinaryMask {
    let s = size as f64;
    let r = rng.gen_range(0.22 * s..0.32 * s);
    let cy = rng.gen_range(r..s - r);
    let cx = rng.gen_range(r..s - r);
    BinaryMask::from_fn(size, size, |y, x| {
        let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
        dy * dy + dx * dx <= r * r
    })
}

/// Image and mask of one synthetic object.
pub fn synthetic_shot(class_id: u32, size: usize, rng: &mut SeededRng) -> Shot {
    let mask = if class_id == RECTANGLE { rectangle(size, rng) } else { disc(size, rng) };
    let color = CLASS_COLORS[class_id as usize % 2];
    let mut data = vec![0.0f32; 3 * size * size];
    for c in 0..3 {
        for p in 0..size * size {
            let base = if mask.data()[p] == 1 { color[c] } else { BACKGROUND[c] };
            data[c * size * size + p] = base + rng.gen_range(-0.05f32..0.05);
        }
    }
    let image = Tensor::new([3, size, size], data).expect("dims match");
    Shot::new(image, mask).expect("dims match")
}

/// `count` episodes alternating between the two classes.
pub fn synthetic_episodes(count: usize, size: usize, shots: usize, seed: u64) -> Vec<Episode> {
    let mut rng = seeded(seed);
    (0..count)
        .map(|i| {
            let class = (i % 2) as u32;
            let supports = (0..shots).map(|_| synthetic_shot(class, size, &mut rng)).collect();
            let query = synthetic_shot(class, size, &mut rng);
            Episode::new(class, format!("q{i:03}"), supports, query).expect("consistent dims")
        })
        .collect()
}

/// Writes episodes as containers, graymaps and a manifest under `dir`.
pub fn export_episodes(dir: impl AsRef<Path>, episodes: &[Episode]) -> Result<EpisodeManifest> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir.join("images"))?;
    std::fs::create_dir_all(dir.join("masks"))?;
    let mut manifest = EpisodeManifest::default();
    for ep in episodes {
        let write = |name: String, shot: &Shot| -> Result<ShotEntry> {
            let image = format!("images/{name}.feca");
            let mask = format!("masks/{name}.pgm");
            write_tensor(dir.join(&image), &shot.image)?;
            write_pgm(dir.join(&mask), &shot.mask)?;
            Ok(ShotEntry { image, mask })
        };
        let q = write(format!("{}_query", ep.query_id), &ep.query)?;
        let supports = ep
            .supports
            .iter()
            .enumerate()
            .map(|(i, s)| write(format!("{}_support{i}", ep.query_id), s))
            .collect::<Result<Vec<_>>>()?;
        manifest.episodes.push(EpisodeEntry {
            class_id: ep.class_id,
            query_id: ep.query_id.clone(),
            query_image: q.image,
            query_mask: q.mask,
            supports,
        });
    }
    manifest.save(dir.join("manifest.json"))?;
    Ok(manifest)
}
