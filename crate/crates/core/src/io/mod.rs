//! File formats, configuration and synthetic fixtures.

pub mod bundle;
pub mod config;
pub mod container;
pub mod fixtures;
pub mod manifest;
pub mod pgm;

pub use bundle::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::RunConfig;
pub use container::{read_tensor, write_tensor};
pub use manifest::{load_episodes, EpisodeManifest};
pub use pgm::{read_pgm, write_pgm};

fn with_path(path: &std::path::Path, e: std::io::Error) -> crate::error::Error {
    std::io::Error::new(e.kind(), format!("{}: {e}", path.display())).into()
}

/// `std::fs::read` with the path in the error message.
pub fn read_file(path: impl AsRef<std::path::Path>) -> crate::error::Result<Vec<u8>> {
    let path = path.as_ref();
    std::fs::read(path).map_err(|e| with_path(path, e))
}

/// `std::fs::write` with the path in the error message.
pub fn write_file(path: impl AsRef<std::path::Path>, bytes: impl AsRef<[u8]>) -> crate::error::Result<()> {
    let path = path.as_ref();
    std::fs::write(path, bytes).map_err(|e| with_path(path, e))
}
