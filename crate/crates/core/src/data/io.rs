//! Annotation (JSON) and feature (`.srft` binary) files, and dataset directories.
//!
//! Feature file layout, all little-endian:
//!
//! | bytes | content |
//! |---|---|
//! | 4 | magic `SRFT` |
//! | 2 | version (u16, currently 1) |
//! | 4 | channels (u32) |
//! | 4 | length (u32) |
//! | 4·channels·length | `f32` values, row-major |

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::synth::AnnotatedSequence;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::targets::ActionInstance;

pub const FEATURE_MAGIC: &[u8; 4] = b"SRFT";
pub const FEATURE_VERSION: u16 = 1;
const HEADER_LEN: usize = 14;

pub const ANNOTATIONS_FILE: &str = "annotations.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const FEATURES_DIR: &str = "features";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationRecord {
    pub video_id: String,
    pub length_frames: usize,
    pub fps: f64,
    pub instances: Vec<ActionInstance>,
}

impl AnnotationRecord {
    pub fn from_sequence(seq: &AnnotatedSequence) -> Self {
        AnnotationRecord {
            video_id: seq.video_id.clone(),
            length_frames: seq.len_frames(),
            fps: seq.fps,
            instances: seq.instances.clone(),
        }
    }

    fn validate(&self) -> std::result::Result<(), String> {
        for inst in &self.instances {
            inst.validate().map_err(|e| format!("{}: {e}", self.video_id))?;
            if inst.end > self.length_frames as f64 {
                return Err(format!(
                    "{}: instance [{}, {}] extends past {} frames",
                    self.video_id, inst.start, inst.end, self.length_frames
                ));
            }
        }
        Ok(())
    }
}

pub fn write_annotations(path: &Path, records: &[AnnotationRecord]) -> Result<()> {
    let text = serde_json::to_string_pretty(records)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_annotations(path: &Path) -> Result<Vec<AnnotationRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let records: Vec<AnnotationRecord> =
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
    for r in &records {
        r.validate().map_err(|reason| Error::Format {
            path: path.to_path_buf(),
            reason,
        })?;
    }
    Ok(records)
}

pub fn encode_features(t: &Tensor) -> Result<Vec<u8>> {
    let (channels, len) = t.dims2("write_features")?;
    let to_u32 = |v: usize| {
        u32::try_from(v).map_err(|_| Error::invalid("write_features", format!("extent {v} exceeds u32")))
    };
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * t.numel());
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.extend_from_slice(&to_u32(channels)?.to_le_bytes());
    out.extend_from_slice(&to_u32(len)?.to_le_bytes());
    for &v in t.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_features(path: &Path, bytes: &[u8]) -> Result<Tensor> {
    let bad = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < HEADER_LEN {
        return Err(bad(format!("truncated header ({} bytes)", bytes.len())));
    }
    if &bytes[..4] != FEATURE_MAGIC {
        return Err(bad("bad magic, not an SRFT feature file".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FEATURE_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let channels = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes")) as usize;
    let len = u32::from_le_bytes(bytes[10..14].try_into().expect("4 bytes")) as usize;
    if channels == 0 || len == 0 {
        return Err(bad(format!("empty shape {channels}x{len}")));
    }
    let body = &bytes[HEADER_LEN..];
    let expected = channels
        .checked_mul(len)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| bad("shape overflows".into()))?;
    if body.len() != expected {
        return Err(bad(format!(
            "header declares {channels}x{len} ({expected} bytes) but body has {} bytes",
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Tensor::new(vec![channels, len], data)
}

pub fn write_features(path: &Path, t: &Tensor) -> Result<()> {
    fs::write(path, encode_features(t)?).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(path, &bytes)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Dataset directory manifest: generator config echo plus content hashes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: serde_json::Value,
    pub n_videos: usize,
    /// Relative path → SHA-256 of file contents.
    pub hashes: BTreeMap<String, String>,
}

fn feature_rel_path(video_id: &str) -> String {
    format!("{FEATURES_DIR}/{video_id}.srft")
}

/// Writes `features/*.srft`, `annotations.json` and `manifest.json` under `dir`.
pub fn write_dataset<C: Serialize>(dir: &Path, sequences: &[AnnotatedSequence], config: &C) -> Result<Manifest> {
    let features_dir = dir.join(FEATURES_DIR);
    fs::create_dir_all(&features_dir).map_err(|e| Error::io(&features_dir, e))?;
    let mut hashes = BTreeMap::new();
    for seq in sequences {
        let rel = feature_rel_path(&seq.video_id);
        let bytes = encode_features(&seq.features)?;
        let path = dir.join(&rel);
        fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
        hashes.insert(rel, sha256_hex(&bytes));
    }
    let records: Vec<AnnotationRecord> =
        sequences.iter().map(AnnotationRecord::from_sequence).collect();
    let ann_path = dir.join(ANNOTATIONS_FILE);
    write_annotations(&ann_path, &records)?;
    let ann_bytes = fs::read(&ann_path).map_err(|e| Error::io(&ann_path, e))?;
    hashes.insert(ANNOTATIONS_FILE.to_string(), sha256_hex(&ann_bytes));

    let manifest = Manifest {
        config: serde_json::to_value(config)?,
        n_videos: sequences.len(),
        hashes,
    };
    let man_path = dir.join(MANIFEST_FILE);
    fs::write(&man_path, serde_json::to_string_pretty(&manifest)?)
        .map_err(|e| Error::io(&man_path, e))?;
    Ok(manifest)
}

/// Loads every video listed in `dir/annotations.json`.
pub fn load_dataset(dir: &Path) -> Result<Vec<AnnotatedSequence>> {
    let records = read_annotations(&dir.join(ANNOTATIONS_FILE))?;
    records
        .into_iter()
        .map(|r| {
            let path: PathBuf = dir.join(feature_rel_path(&r.video_id));
            let features = read_features(&path)?;
            if features.shape()[1] != r.length_frames {
                return Err(Error::Format {
                    path,
                    reason: format!(
                        "feature length {} does not match annotated length {}",
                        features.shape()[1],
                        r.length_frames
                    ),
                });
            }
            Ok(AnnotatedSequence {
                video_id: r.video_id,
                features,
                instances: r.instances,
                fps: r.fps,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_round_trip_is_exact_for_f32_values() {
        let t = Tensor::new(vec![2, 3], vec![0.5, -1.25, 3.0, 1e-3f32 as f64, 0.0, -7.0]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.srft");
        write_features(&p, &t).unwrap();
        assert_eq!(read_features(&p).unwrap(), t);
    }

    #[test]
    fn truncated_and_mismatched_feature_files() {
        let t = Tensor::full(&[2, 4], 1.0);
        let bytes = encode_features(&t).unwrap();
        let p = Path::new("mem.srft");
        assert!(decode_features(p, &bytes[..10]).is_err());
        assert!(decode_features(p, &bytes[..bytes.len() - 1]).is_err());
        let mut wrong = bytes.clone();
        wrong[6] = 3;
        assert!(decode_features(p, &wrong).is_err());
        let mut magic = bytes;
        magic[0] = b'X';
        assert!(decode_features(p, &magic).is_err());
    }

    #[test]
    fn malformed_annotations_report_position() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(ANNOTATIONS_FILE);
        fs::write(&p, "[\n  {\"video_id\": \"a\",\n   \"length_frames\": }\n]").unwrap();
        match read_annotations(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn inverted_instance_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(ANNOTATIONS_FILE);
        fs::write(
            &p,
            r#"[{"video_id":"a","length_frames":100,"fps":25.0,
                "instances":[{"start":50.0,"end":40.0,"label":1}]}]"#,
        )
        .unwrap();
        assert!(matches!(read_annotations(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn annotation_schema() {
        let rec = AnnotationRecord {
            video_id: "v".into(),
            length_frames: 10,
            fps: 25.0,
            instances: vec![ActionInstance::new(1.0, 2.5, 3).unwrap()],
        };
        let v = serde_json::to_value(&rec).unwrap();
        assert_eq!(
            v,
            serde_json::json!({
                "video_id": "v", "length_frames": 10, "fps": 25.0,
                "instances": [{"start": 1.0, "end": 2.5, "label": 3}]
            })
        );
    }
}
