//! Frame files, PLY export and atomic file writes.

mod frame_file;
mod ply;

use std::path::Path;

use crate::error::Result;

pub use frame_file::{
    frame_file_name, frame_index_from_name, frame_to_bytes, quantize, read_frame, read_frame_file,
    write_frame, FORMAT_VERSION, MAGIC,
};
pub use ply::{read_ply, write_ply, PlyColoring, PlyEncoding, PlyVertex};

/// Writes `bytes` to a temporary sibling of `path` and renames it into place,
/// so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    std::io::Write::write_all(&mut tmp, bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

pub fn write_frame_file(path: &Path, frame: &crate::geometry::Frame) -> Result<()> {
    write_atomic(path, &frame_to_bytes(frame)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
