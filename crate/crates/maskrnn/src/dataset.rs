//! DAVIS-style dataset directories.
//!
//! ```text
//! <root>/JPEGImages/<seq>/<frame>.jpg|png
//! <root>/Annotations/<seq>/<frame>.png     indexed: 0 background, i instance i
//! <root>/Flows/<seq>/<frame>_bwd.flo       optional, towards the previous frame
//! <root>/Flows/<seq>/<frame>_fwd.flo       optional, towards the next frame
//! <root>/manifest.json                     optional sequence list with splits
//! ```
//!
//! Flow sidecars use the backward-warp convention: the field stored for
//! frame `t` satisfies `I_t(p) ~ I_s(p + flow(p))`.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use maskrnn_core::data::{FrameFlows, VideoRecord};
use maskrnn_core::LabelMask;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flo::{read_flo, write_flo};
use crate::png_io::{read_frame, read_label_png, write_frame, write_label_png};

pub const MANIFEST_SCHEMA: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceEntry {
    pub name: String,
    pub split: String,
    pub frames: usize,
    pub objects: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub schema: u32,
    pub sequences: Vec<SequenceEntry>,
}

/// A loaded sequence and what is needed to write predictions back.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedVideo {
    pub record: VideoRecord,
    /// File stem of every frame, in order.
    pub frame_names: Vec<String>,
    /// Annotation index of object `i + 1`.
    pub label_ids: Vec<u8>,
    pub warnings: Vec<String>,
}

fn read_dir_sorted(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    v.sort();
    Ok(v)
}

fn is_image(p: &Path) -> bool {
    matches!(
        p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("jpg" | "jpeg" | "png")
    )
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Sequence names under `<root>/JPEGImages`, sorted.
pub fn list_sequences(root: &Path) -> Result<Vec<String>> {
    Ok(read_dir_sorted(&root.join("JPEGImages"))?
        .into_iter()
        .filter(|p| p.is_dir())
        .map(|p| p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default())
        .collect())
}

pub fn load_sequence(root: &Path, name: &str) -> Result<LoadedVideo> {
    let frame_paths: Vec<PathBuf> = read_dir_sorted(&root.join("JPEGImages").join(name))?
        .into_iter()
        .filter(|p| p.is_file() && is_image(p))
        .collect();
    if frame_paths.is_empty() {
        return Err(Error::dataset(name, "no frames"));
    }
    let frame_names: Vec<String> = frame_paths.iter().map(|p| stem(p)).collect();
    let frames = frame_paths.iter().map(|p| read_frame(p)).collect::<Result<Vec<_>>>()?;
    let dims = frames[0].dims();
    if let Some(k) = frames.iter().position(|f| f.dims() != dims) {
        return Err(Error::dataset(
            name,
            format!("frame {} is {:?}, the first frame is {dims:?}", frame_names[k], frames[k].dims()),
        ));
    }
    let ann_dir = root.join("Annotations").join(name);
    let mut raw = Vec::new();
    for s in &frame_names {
        let p = ann_dir.join(format!("{s}.png"));
        if !p.is_file() {
            break;
        }
        let m = read_label_png(&p)?;
        if m.dims() != dims {
            return Err(Error::dataset(
                name,
                format!("annotation {s} is {:?}, frames are {dims:?}", m.dims()),
            ));
        }
        raw.push(m);
    }
    let Some(first) = raw.first() else {
        return Err(Error::dataset(name, format!("missing annotation for first frame {}", frame_names[0])));
    };
    let label_ids: Vec<u8> = first.labels();
    if label_ids.is_empty() {
        return Err(Error::dataset(name, "first annotation contains no object"));
    }
    let mut lut = [0u8; 256];
    for (i, &id) in label_ids.iter().enumerate() {
        lut[id as usize] = i as u8 + 1;
    }
    let mut warnings = Vec::new();
    let mut unknown = BTreeSet::new();
    let masks: Vec<LabelMask> = raw
        .iter()
        .enumerate()
        .map(|(t, m)| {
            for &l in m.data() {
                if l != 0 && lut[l as usize] == 0 && unknown.insert(l) {
                    warnings.push(format!(
                        "sequence {name}: label {l} first seen in frame {} is absent from the first annotation; ignored",
                        frame_names[t]
                    ));
                }
            }
            m.map(|l| lut[l as usize])
        })
        .collect();
    let flow_dir = root.join("Flows").join(name);
    let flows = if flow_dir.is_dir() {
        let mut v = Vec::with_capacity(frames.len());
        for s in &frame_names {
            let load = |dir: &str| -> Result<Option<_>> {
                let p = flow_dir.join(format!("{s}_{dir}.flo"));
                if !p.is_file() {
                    return Ok(None);
                }
                let f = read_flo(&p)?;
                if f.dims() != dims {
                    return Err(Error::dataset(name, format!("flow {} is {:?}, frames are {dims:?}", p.display(), f.dims())));
                }
                Ok(Some(f))
            };
            v.push(FrameFlows {
                bwd: load("bwd")?,
                fwd: load("fwd")?,
            });
        }
        v
    } else {
        Vec::new()
    };
    let record = VideoRecord {
        name: name.to_string(),
        frames,
        masks,
        num_objects: label_ids.len(),
        flows,
    };
    record.validate().map_err(|e| Error::dataset(name, e.to_string()))?;
    Ok(LoadedVideo {
        record,
        frame_names,
        label_ids,
        warnings,
    })
}

/// Load every sequence under `root` (or those of one split when the
/// manifest lists splits).
pub fn load_davis(root: &Path, split: Option<&str>) -> Result<Vec<LoadedVideo>> {
    let names = match (split, read_manifest(root)?) {
        (Some(s), Some(m)) => m.sequences.into_iter().filter(|e| e.split == s).map(|e| e.name).collect(),
        (Some(s), None) => return Err(Error::Usage(format!("split {s} requested but {} has no manifest.json", root.display()))),
        (None, _) => list_sequences(root)?,
    };
    names.iter().map(|n| load_sequence(root, n)).collect()
}

pub fn read_manifest(root: &Path) -> Result<Option<DatasetManifest>> {
    let p = root.join("manifest.json");
    if !p.is_file() {
        return Ok(None);
    }
    let text = fs::read(&p).map_err(|e| Error::io(&p, e))?;
    let m: DatasetManifest = serde_json::from_slice(&text).map_err(|e| Error::json(&p, e))?;
    if m.schema != MANIFEST_SCHEMA {
        return Err(Error::dataset("manifest", format!("schema {} (expected {MANIFEST_SCHEMA})", m.schema)));
    }
    Ok(Some(m))
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

/// Write label masks as `<out_dir>/<name>.png`, mapping object `i + 1` back
/// to `label_ids[i]`.
pub fn save_predictions(masks: &[LabelMask], frame_names: &[String], label_ids: &[u8], out_dir: &Path) -> Result<()> {
    create_dir(out_dir)?;
    let mut lut = [0u8; 256];
    for (i, &id) in label_ids.iter().enumerate() {
        lut[i + 1] = id;
    }
    for (m, n) in masks.iter().zip(frame_names) {
        write_label_png(&out_dir.join(format!("{n}.png")), &m.map(|l| lut[l as usize]))?;
    }
    Ok(())
}

/// Canonical frame file stem.
pub fn frame_name(t: usize) -> String {
    format!("{t:05}")
}

/// Write videos as a dataset directory with flow sidecars and a manifest.
pub fn write_corpus(root: &Path, videos: &[(VideoRecord, &str)]) -> Result<()> {
    let mut entries = Vec::with_capacity(videos.len());
    for (v, split) in videos {
        let img = root.join("JPEGImages").join(&v.name);
        let ann = root.join("Annotations").join(&v.name);
        create_dir(&img)?;
        create_dir(&ann)?;
        for (t, f) in v.frames.iter().enumerate() {
            write_frame(&img.join(format!("{}.png", frame_name(t))), f)?;
        }
        for (t, m) in v.masks.iter().enumerate() {
            write_label_png(&ann.join(format!("{}.png", frame_name(t))), m)?;
        }
        if !v.flows.is_empty() {
            let fd = root.join("Flows").join(&v.name);
            create_dir(&fd)?;
            for (t, f) in v.flows.iter().enumerate() {
                if let Some(b) = &f.bwd {
                    write_flo(&fd.join(format!("{}_bwd.flo", frame_name(t))), b)?;
                }
                if let Some(b) = &f.fwd {
                    write_flo(&fd.join(format!("{}_fwd.flo", frame_name(t))), b)?;
                }
            }
        }
        entries.push(SequenceEntry {
            name: v.name.clone(),
            split: split.to_string(),
            frames: v.len(),
            objects: v.num_objects,
        });
    }
    let p = root.join("manifest.json");
    let m = DatasetManifest {
        schema: MANIFEST_SCHEMA,
        sequences: entries,
    };
    let json = serde_json::to_string_pretty(&m).map_err(|e| Error::json(&p, e))?;
    fs::write(&p, json).map_err(|e| Error::io(&p, e))
}
