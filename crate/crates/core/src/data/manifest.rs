//! JSON-lines dataset manifests: one `{"path": ..., "label": 0|1}` object
//! per frame, paths resolved relative to the manifest file.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::parallel;

use super::pgm;
use super::FrameSequence;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: u8,
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut entries = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(&line)
            .map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))?;
        if entry.label > 1 {
            return Err(Error::format(
                path,
                format!("line {}: label must be 0 or 1", i + 1),
            ));
        }
        entries.push(entry);
    }
    Ok(entries)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for e in entries {
        serde_json::to_writer(&mut w, e).map_err(|err| Error::format(path, err.to_string()))?;
        w.write_all(b"\n").map_err(|err| Error::io(path, err))?;
    }
    w.flush().map_err(|err| Error::io(path, err))?;
    Ok(())
}

/// Load the frames named by a manifest, in manifest order, with labels.
/// Relative entry paths are resolved against the manifest's directory.
pub fn load_frames(manifest_path: &Path) -> Result<(FrameSequence, Vec<u8>)> {
    let entries = read_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let resolved: Vec<PathBuf> = entries
        .iter()
        .map(|e| {
            if e.path.is_absolute() {
                e.path.clone()
            } else {
                base.join(&e.path)
            }
        })
        .collect();
    let frames = parallel::par_map(&resolved, |p| pgm::read_pgm(p));
    let mut loaded = Vec::with_capacity(frames.len());
    for f in frames {
        loaded.push(f?);
    }
    let labels = entries.iter().map(|e| e.label).collect();
    Ok((FrameSequence::new(loaded)?, labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn empty_manifest_loads_empty_sequence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        std::fs::write(&path, "").unwrap();
        let (seq, labels) = load_frames(&path).unwrap();
        assert!(seq.is_empty());
        assert!(labels.is_empty());
    }

    #[test]
    fn loads_frames_in_manifest_order() {
        let dir = tempfile::tempdir().unwrap();
        for (name, fill) in [("a.pgm", 10.0), ("b.pgm", 200.0)] {
            let frame = Tensor::new(vec![2, 2], vec![fill; 4]).unwrap();
            pgm::write_pgm(&dir.path().join(name), &frame).unwrap();
        }
        let path = dir.path().join("m.jsonl");
        let entries = vec![
            ManifestEntry { path: "b.pgm".into(), label: 1 },
            ManifestEntry { path: "a.pgm".into(), label: 0 },
        ];
        write_manifest(&path, &entries).unwrap();

        let (seq, labels) = load_frames(&path).unwrap();
        assert_eq!(labels, vec![1, 0]);
        assert_eq!(seq.frames[0].data()[0], 200.0);
        assert_eq!(seq.frames[1].data()[0], 10.0);
    }

    #[test]
    fn missing_file_error_names_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        write_manifest(
            &path,
            &[ManifestEntry { path: "ghost.pgm".into(), label: 0 }],
        )
        .unwrap();
        let err = load_frames(&path).unwrap_err().to_string();
        assert!(err.contains("ghost.pgm"), "{err}");
    }

    #[test]
    fn mismatched_frame_sizes_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        pgm::write_pgm(
            &dir.path().join("a.pgm"),
            &Tensor::new(vec![2, 2], vec![0.0; 4]).unwrap(),
        )
        .unwrap();
        pgm::write_pgm(
            &dir.path().join("b.pgm"),
            &Tensor::new(vec![3, 2], vec![0.0; 6]).unwrap(),
        )
        .unwrap();
        let path = dir.path().join("m.jsonl");
        write_manifest(
            &path,
            &[
                ManifestEntry { path: "a.pgm".into(), label: 0 },
                ManifestEntry { path: "b.pgm".into(), label: 0 },
            ],
        )
        .unwrap();
        assert!(matches!(load_frames(&path), Err(Error::Dimension { .. })));
    }
}
