//! On-disk dataset layout.
//!
//! ```text
//! <root>/manifest.json         ids, label/feature paths (relative to root), L, D
//! <root>/classes.txt           "<id> <name>" per line
//! <root>/groundTruth/<id>.txt  one class name per line per frame
//! <root>/features/<id>.bin     u64 D, u64 T, then T*D f32, frame-major, little-endian
//! ```
//!
//! Feature files ending in `.csv` are read as T rows of D comma-separated values.

use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Dataset, LabeledSequence};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
const CLASSES_FILE: &str = "classes.txt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub labels: PathBuf,
    pub features: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub num_classes: usize,
    pub feature_dim: usize,
    #[serde(default = "default_classes_path")]
    pub classes: PathBuf,
    pub sequences: Vec<ManifestEntry>,
}

fn default_classes_path() -> PathBuf {
    PathBuf::from(CLASSES_FILE)
}

fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}

fn read_classes(path: &Path, num_classes: usize) -> Result<Vec<String>> {
    let text = fs::read_to_string(path)?;
    let mut names: Vec<Option<String>> = vec![None; num_classes];
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (Some(id), Some(name), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::parse_line(path, n + 1, "expected '<id> <name>'"));
        };
        let id: usize = id
            .parse()
            .map_err(|_| Error::parse_line(path, n + 1, format!("invalid class id '{id}'")))?;
        if id >= num_classes {
            return Err(Error::Range {
                what: "class id",
                value: id,
                bound: num_classes,
            });
        }
        if names[id].replace(name.to_string()).is_some() {
            return Err(Error::parse_line(path, n + 1, format!("class id {id} listed twice")));
        }
    }
    names
        .into_iter()
        .enumerate()
        .map(|(i, n)| n.ok_or_else(|| Error::config(format!("{}: class id {i} missing", path.display()))))
        .collect()
}

/// Reads one class-name token per line.
pub fn read_label_file(path: &Path, name_to_id: &HashMap<&str, usize>) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path)?;
    let mut labels = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let token = line.trim();
        if token.is_empty() {
            continue;
        }
        match name_to_id.get(token) {
            Some(&id) => labels.push(id),
            None => return Err(Error::parse_line(path, n + 1, format!("unknown class '{token}'"))),
        }
    }
    Ok(labels)
}

/// Writes one class-name token per line.
pub fn write_label_file(path: &Path, labels: &[usize], class_names: &[String]) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for &y in labels {
        let name = class_names.get(y).ok_or(Error::Range {
            what: "label",
            value: y,
            bound: class_names.len(),
        })?;
        writeln!(out, "{name}")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a feature file, returning `(D, T, frame-major values)`.
pub fn read_features(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        return read_features_csv(path);
    }
    let bytes = fs::read(path)?;
    if bytes.len() < 16 {
        return Err(Error::parse_offset(path, bytes.len(), "truncated header"));
    }
    let dim = u64::from_le_bytes(bytes[0..8].try_into().unwrap()) as usize;
    let frames = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let expected = dim
        .checked_mul(frames)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(16))
        .ok_or_else(|| Error::parse_offset(path, 0, "header dimensions overflow"))?;
    if bytes.len() != expected {
        return Err(Error::parse_offset(
            path,
            bytes.len().min(expected),
            format!("expected {expected} bytes for D={dim}, T={frames}, found {}", bytes.len()),
        ));
    }
    let values = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((dim, frames, values))
}

fn read_features_csv(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let text = fs::read_to_string(path)?;
    let mut values = Vec::new();
    let mut dim = None;
    let mut frames = 0;
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|tok| {
                tok.trim()
                    .parse::<f32>()
                    .map_err(|_| Error::parse_line(path, n + 1, format!("invalid number '{}'", tok.trim())))
            })
            .collect::<Result<Vec<_>>>()?;
        match dim {
            None => dim = Some(row.len()),
            Some(d) if d != row.len() => {
                return Err(Error::parse_line(path, n + 1, format!("expected {d} columns, found {}", row.len())))
            }
            _ => {}
        }
        values.extend(row);
        frames += 1;
    }
    Ok((dim.unwrap_or(0), frames, values))
}

pub fn write_features(path: &Path, dim: usize, values: &[f32]) -> Result<()> {
    let frames = values.len() / dim;
    let mut out = BufWriter::new(fs::File::create(path)?);
    out.write_all(&(dim as u64).to_le_bytes())?;
    out.write_all(&(frames as u64).to_le_bytes())?;
    for v in values {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

/// Loads a dataset from a manifest file or a directory containing `manifest.json`.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let manifest_file = manifest_path(path);
    let root = manifest_file.parent().unwrap_or(Path::new("."));
    let manifest: Manifest = serde_json::from_slice(&fs::read(&manifest_file)?)?;
    let l = manifest.num_classes;
    let class_names = read_classes(&root.join(&manifest.classes), l)?;
    let name_to_id: HashMap<&str, usize> = class_names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();

    let mut sequences = Vec::with_capacity(manifest.sequences.len());
    for entry in &manifest.sequences {
        let labels = read_label_file(&root.join(&entry.labels), &name_to_id)?;
        let feature_path = root.join(&entry.features);
        let (dim, frames, values) = read_features(&feature_path)?;
        if dim != manifest.feature_dim {
            return Err(Error::config(format!(
                "{}: feature dimension {dim} differs from manifest ({})",
                feature_path.display(),
                manifest.feature_dim
            )));
        }
        if frames != labels.len() {
            return Err(Error::FrameCountMismatch {
                path: feature_path,
                id: entry.id.clone(),
                labels: labels.len(),
                features: frames,
            });
        }
        sequences.push(LabeledSequence::new(entry.id.clone(), dim, values, labels, l)?);
    }
    Dataset::with_class_names(sequences, l, manifest.feature_dim, class_names)
}

/// Writes the dataset under directory `dir` and returns the manifest path.
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir.join("groundTruth"))?;
    fs::create_dir_all(dir.join("features"))?;

    let mut classes = BufWriter::new(fs::File::create(dir.join(CLASSES_FILE))?);
    for (i, name) in dataset.class_names().iter().enumerate() {
        writeln!(classes, "{i} {name}")?;
    }
    classes.flush()?;

    let mut entries = Vec::with_capacity(dataset.sequences().len());
    for seq in dataset.sequences() {
        let labels = PathBuf::from("groundTruth").join(format!("{}.txt", seq.id()));
        let features = PathBuf::from("features").join(format!("{}.bin", seq.id()));
        write_label_file(&dir.join(&labels), seq.frame_labels(), dataset.class_names())?;
        write_features(&dir.join(&features), seq.feature_dim(), seq.features())?;
        entries.push(ManifestEntry {
            id: seq.id().to_string(),
            labels,
            features,
        });
    }
    let manifest = Manifest {
        num_classes: dataset.num_classes(),
        feature_dim: dataset.feature_dim(),
        classes: default_classes_path(),
        sequences: entries,
    };
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seqdata::{generate_synthetic, SynthConfig};

    fn small_manifest(dir: &Path, labels: &str, features_name: &str) {
        fs::write(dir.join("classes.txt"), "0 pour\n1 stir\n").unwrap();
        fs::create_dir_all(dir.join("gt")).unwrap();
        fs::write(dir.join("gt/a.txt"), labels).unwrap();
        let manifest = format!(
            r#"{{"num_classes":2,"feature_dim":2,"sequences":[{{"id":"a","labels":"gt/a.txt","features":"{features_name}"}}]}}"#
        );
        fs::write(dir.join("manifest.json"), manifest).unwrap();
    }

    #[test]
    fn round_trip_generated() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate_synthetic(&SynthConfig {
            num_sequences: 6,
            ..Default::default()
        })
        .unwrap();
        let manifest = save_dataset(&ds, dir.path()).unwrap();
        assert_eq!(load_dataset(&manifest).unwrap(), ds);
        assert_eq!(load_dataset(dir.path()).unwrap(), ds);
    }

    #[test]
    fn six_line_label_file() {
        let dir = tempfile::tempdir().unwrap();
        small_manifest(dir.path(), "pour\npour\nstir\nstir\nstir\npour\n", "a.csv");
        let rows: String = (0..6).map(|t| format!("{t},{}\n", t as f32 * 0.5)).collect();
        fs::write(dir.path().join("a.csv"), rows).unwrap();
        let ds = load_dataset(dir.path()).unwrap();
        let s = &ds.sequences()[0];
        assert_eq!(s.len(), 6);
        assert_eq!(s.frame_labels(), &[0, 0, 1, 1, 1, 0]);
        assert_eq!(s.frame(5), &[5.0, 2.5]);
        assert_eq!(ds.class_names(), &["pour".to_string(), "stir".to_string()]);
    }

    #[test]
    fn frame_count_mismatch_names_both_counts() {
        let dir = tempfile::tempdir().unwrap();
        small_manifest(dir.path(), "pour\nstir\nstir\n", "a.bin");
        write_features(&dir.path().join("a.bin"), 2, &[0.0; 8]).unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(matches!(err, Error::FrameCountMismatch { labels: 3, features: 4, .. }));
        let msg = err.to_string();
        assert!(msg.contains("3 label frames") && msg.contains("4 feature frames"), "{msg}");
    }

    #[test]
    fn malformed_files_report_location() {
        let dir = tempfile::tempdir().unwrap();
        small_manifest(dir.path(), "pour\nchop\n", "a.csv");
        fs::write(dir.path().join("a.csv"), "0,0\n1,1\n").unwrap();
        let msg = load_dataset(dir.path()).unwrap_err().to_string();
        assert!(msg.contains("line 2") && msg.contains("chop"), "{msg}");

        small_manifest(dir.path(), "pour\nstir\n", "a.csv");
        fs::write(dir.path().join("a.csv"), "0,0\n1,x\n").unwrap();
        let msg = load_dataset(dir.path()).unwrap_err().to_string();
        assert!(msg.contains("line 2"), "{msg}");

        small_manifest(dir.path(), "pour\nstir\n", "a.bin");
        fs::write(dir.path().join("a.bin"), [0u8; 20]).unwrap();
        let msg = load_dataset(dir.path()).unwrap_err().to_string();
        assert!(msg.contains("offset"), "{msg}");
    }

    #[test]
    fn class_id_out_of_range() {
        let dir = tempfile::tempdir().unwrap();
        small_manifest(dir.path(), "pour\n", "a.csv");
        fs::write(dir.path().join("classes.txt"), "0 pour\n2 stir\n").unwrap();
        fs::write(dir.path().join("a.csv"), "0,0\n").unwrap();
        assert!(matches!(
            load_dataset(dir.path()),
            Err(Error::Range { value: 2, bound: 2, .. })
        ));
    }
}
