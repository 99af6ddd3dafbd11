//! Clip collections: generation from a spec, clustering, and persistence.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::clip::{generate_clip, MotionClip, MotionFrame, MotionKind, MotionLabel, MotionParams};
use super::cluster::{feature_embedding, kmeans, z_normalize};
use crate::error::{Error, Result};
use crate::physics::{Range, RobotModel};

pub const DATASET_FORMAT_VERSION: u32 = 1;
const FRAME_MAGIC: &[u8; 8] = b"TAMOT1\n\0";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KindSpec {
    pub kind: MotionKind,
    pub count: usize,
    pub amplitude: Range,
    pub frequency: Range,
    #[serde(default = "zero_range")]
    pub aux: Range,
}

fn zero_range() -> Range {
    Range::new(0.0, 0.0)
}

impl KindSpec {
    pub fn default_for(kind: MotionKind, count: usize) -> Self {
        let (amplitude, frequency, aux) = match kind {
            MotionKind::Stand => (zero_range(), zero_range(), zero_range()),
            MotionKind::Lean => (Range::new(0.1, 0.3), Range::new(0.2, 0.5), zero_range()),
            MotionKind::Squat => (Range::new(0.15, 0.4), Range::new(0.3, 0.6), zero_range()),
            MotionKind::Walk => (Range::new(0.1, 0.25), Range::new(0.6, 0.9), Range::new(0.2, 0.5)),
            MotionKind::Hop => (Range::new(0.05, 0.15), Range::new(1.5, 2.5), zero_range()),
            MotionKind::Kick => (Range::new(0.3, 0.6), Range::new(0.3, 0.6), Range::new(0.2, 0.4)),
        };
        KindSpec {
            kind,
            count,
            amplitude,
            frequency,
            aux,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSpec {
    pub kinds: Vec<KindSpec>,
    pub duration: Range,
    pub fps: f64,
    pub k: usize,
    pub kmeans_iters: usize,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            kinds: MotionKind::ALL
                .iter()
                .map(|&k| KindSpec::default_for(k, 10))
                .collect(),
            duration: Range::new(4.0, 8.0),
            fps: 50.0,
            k: 6,
            kmeans_iters: 100,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.kinds.is_empty() {
            return Err(Error::config("dataset.kinds must list at least one generator"));
        }
        self.duration.check("dataset.duration")?;
        if !(self.duration.lo > 0.0) {
            return Err(Error::config("dataset.duration must be positive"));
        }
        if !(self.fps > 0.0) {
            return Err(Error::config("dataset.fps must be positive"));
        }
        for ks in &self.kinds {
            ks.amplitude.check(&format!("dataset.{}.amplitude", ks.kind))?;
            ks.frequency.check(&format!("dataset.{}.frequency", ks.kind))?;
            ks.aux.check(&format!("dataset.{}.aux", ks.kind))?;
        }
        let total: usize = self.kinds.iter().map(|k| k.count).sum();
        if self.k == 0 || self.k > total {
            return Err(Error::config(format!(
                "dataset.k = {} must lie in [1, {total}]",
                self.k
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionDataset {
    pub spec: DatasetSpec,
    pub seed: u64,
    pub clips: Vec<MotionClip>,
    pub assignments: Vec<usize>,
    pub k: usize,
}

impl MotionDataset {
    pub fn cluster_clips(&self, cluster: usize) -> Vec<usize> {
        (0..self.clips.len())
            .filter(|&i| self.assignments[i] == cluster)
            .collect()
    }

    /// Most frequent generator kind in a cluster (ties to the earlier kind).
    pub fn majority_kind(&self, cluster: usize) -> Option<MotionKind> {
        let mut counts: BTreeMap<MotionKind, usize> = BTreeMap::new();
        for i in self.cluster_clips(cluster) {
            *counts.entry(self.clips[i].kind()).or_default() += 1;
        }
        let best = counts.values().copied().max()?;
        counts.into_iter().find(|(_, c)| *c == best).map(|(k, _)| k)
    }

    /// Cluster whose majority is `kind` and which holds the most clips of it.
    pub fn cluster_of_kind(&self, kind: MotionKind) -> Option<usize> {
        (0..self.k)
            .filter(|&c| self.majority_kind(c) == Some(kind))
            .max_by_key(|&c| {
                let n = self
                    .cluster_clips(c)
                    .iter()
                    .filter(|&&i| self.clips[i].kind() == kind)
                    .count();
                (n, std::cmp::Reverse(c))
            })
    }

    /// Fraction of clips whose kind is the majority kind of their cluster.
    pub fn purity(&self) -> f64 {
        let mut hits = 0;
        for c in 0..self.k {
            if let Some(kind) = self.majority_kind(c) {
                hits += self
                    .cluster_clips(c)
                    .iter()
                    .filter(|&&i| self.clips[i].kind() == kind)
                    .count();
            }
        }
        hits as f64 / self.clips.len() as f64
    }
}

/// Generates every clip, embeds and clusters them. Pure in `(spec, seed)`.
pub fn build_dataset(model: &RobotModel, spec: &DatasetSpec, seed: u64) -> Result<MotionDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut clips = Vec::new();
    for ks in &spec.kinds {
        for _ in 0..ks.count {
            let clip_seed: u64 = rng.gen();
            let mut crng = ChaCha8Rng::seed_from_u64(clip_seed);
            let params = if ks.kind == MotionKind::Stand {
                MotionParams::zero()
            } else {
                MotionParams {
                    amplitude: ks.amplitude.sample(&mut crng),
                    frequency: ks.frequency.sample(&mut crng),
                    phase: crng.gen_range(0.0..std::f64::consts::TAU),
                    aux: ks.aux.sample(&mut crng),
                }
            };
            let duration = spec.duration.sample(&mut crng);
            clips.push(generate_clip(model, ks.kind, &params, duration, spec.fps, clip_seed)?);
        }
    }
    let mut points: Vec<Vec<f64>> = clips
        .iter()
        .map(|c| feature_embedding(c, &model.default_pose))
        .collect();
    z_normalize(&mut points);
    let km = kmeans(&points, spec.k, spec.kmeans_iters, seed ^ 0x6b6d_6561_6e73)?;
    Ok(MotionDataset {
        spec: spec.clone(),
        seed,
        clips,
        assignments: km.assignments,
        k: spec.k,
    })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClipEntry {
    file: String,
    label: MotionLabel,
    fps: f64,
    frames: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    version: u32,
    spec: DatasetSpec,
    seed: u64,
    k: usize,
    assignments: Vec<usize>,
    clips: Vec<ClipEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldLayout {
    pub name: String,
    pub width: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameHeader {
    version: u32,
    fps: f64,
    frames: usize,
    layout: Vec<FieldLayout>,
}

fn layout_for(frame: &MotionFrame) -> Vec<FieldLayout> {
    let f = |name: &str, width: usize| FieldLayout {
        name: name.into(),
        width,
    };
    vec![
        f("q", frame.q.len()),
        f("qdot", frame.qdot.len()),
        f("base_x", 1),
        f("base_height", 1),
        f("base_vel", 2),
        f("pitch", 1),
        f("pitch_rate", 1),
        f("link_pos", 2 * frame.link_pos.len()),
        f("link_vel", 2 * frame.link_vel.len()),
        f("link_angle", frame.link_angle.len()),
        f("link_rate", frame.link_rate.len()),
        f("feet_height", frame.feet_height.len()),
    ]
}

pub fn frame_to_row(frame: &MotionFrame) -> Vec<f64> {
    let mut row = Vec::new();
    row.extend(&frame.q);
    row.extend(&frame.qdot);
    row.extend([frame.base_x, frame.base_height]);
    row.extend(frame.base_vel);
    row.extend([frame.pitch, frame.pitch_rate]);
    row.extend(frame.link_pos.iter().flatten());
    row.extend(frame.link_vel.iter().flatten());
    row.extend(&frame.link_angle);
    row.extend(&frame.link_rate);
    row.extend(&frame.feet_height);
    row
}

fn row_to_frame(row: &[f64], layout: &[FieldLayout]) -> Result<MotionFrame> {
    let mut fields: BTreeMap<&str, &[f64]> = BTreeMap::new();
    let mut at = 0;
    for l in layout {
        fields.insert(l.name.as_str(), &row[at..at + l.width]);
        at += l.width;
    }
    let get = |name: &str| -> Result<&[f64]> {
        fields
            .get(name)
            .copied()
            .ok_or_else(|| Error::shape(format!("frame layout lacks {name}")))
    };
    let pairs = |v: &[f64]| v.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
    let base_vel = get("base_vel")?;
    if base_vel.len() != 2 {
        return Err(Error::shape("base_vel must have width 2"));
    }
    Ok(MotionFrame {
        q: get("q")?.to_vec(),
        qdot: get("qdot")?.to_vec(),
        base_x: get("base_x")?[0],
        base_height: get("base_height")?[0],
        base_vel: [base_vel[0], base_vel[1]],
        pitch: get("pitch")?[0],
        pitch_rate: get("pitch_rate")?[0],
        link_pos: pairs(get("link_pos")?),
        link_vel: pairs(get("link_vel")?),
        link_angle: get("link_angle")?.to_vec(),
        link_rate: get("link_rate")?.to_vec(),
        feet_height: get("feet_height")?.to_vec(),
    })
}

/// Frame file: magic, `u64` header length, JSON header, little-endian `f32` rows.
pub fn clip_to_bytes(clip: &MotionClip) -> Result<Vec<u8>> {
    let header = FrameHeader {
        version: DATASET_FORMAT_VERSION,
        fps: clip.fps,
        frames: clip.frames.len(),
        layout: layout_for(&clip.frames[0]),
    };
    let header = serde_json::to_vec(&header)?;
    let mut out = Vec::new();
    out.extend_from_slice(FRAME_MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for f in &clip.frames {
        for v in frame_to_row(f) {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn clip_from_bytes(bytes: &[u8], label: MotionLabel, path: &Path) -> Result<MotionClip> {
    let corrupt = |reason: String| Error::CorruptData {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < 16 || &bytes[..8] != FRAME_MAGIC {
        return Err(corrupt("missing frame-file magic".into()));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    if 16 + hlen > bytes.len() {
        return Err(corrupt("truncated header".into()));
    }
    let header: FrameHeader = serde_json::from_slice(&bytes[16..16 + hlen])
        .map_err(|e| corrupt(format!("unreadable header: {e}")))?;
    if header.version != DATASET_FORMAT_VERSION {
        return Err(corrupt(format!("unsupported version {}", header.version)));
    }
    let width: usize = header.layout.iter().map(|l| l.width).sum();
    let payload = &bytes[16 + hlen..];
    if payload.len() != 4 * width * header.frames || header.frames == 0 {
        return Err(corrupt(format!(
            "payload has {} bytes, expected {} frames of {} values",
            payload.len(),
            header.frames,
            width
        )));
    }
    let values: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
        .collect();
    let frames = values
        .chunks_exact(width)
        .map(|row| row_to_frame(row, &header.layout))
        .collect::<Result<Vec<_>>>()?;
    Ok(MotionClip {
        fps: header.fps,
        label,
        frames,
    })
}

pub fn clip_to_csv(clip: &MotionClip) -> String {
    let layout = layout_for(&clip.frames[0]);
    let mut cols = vec!["t".to_string()];
    for l in &layout {
        if l.width == 1 {
            cols.push(l.name.clone());
        } else {
            cols.extend((0..l.width).map(|i| format!("{}_{i}", l.name)));
        }
    }
    let mut out = cols.join(",");
    out.push('\n');
    for (k, f) in clip.frames.iter().enumerate() {
        let _ = write!(out, "{}", k as f64 / clip.fps);
        for v in frame_to_row(f) {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

fn clip_file(i: usize) -> String {
    format!("frames/clip_{i:04}.bin")
}

impl MotionDataset {
    /// Writes `manifest.json`, one binary frame file per clip and, when
    /// `with_csv`, a CSV copy of every clip under `csv/`.
    pub fn save(&self, dir: &Path, with_csv: bool) -> Result<()> {
        let frames_dir = dir.join("frames");
        std::fs::create_dir_all(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;
        let mut entries = Vec::new();
        for (i, clip) in self.clips.iter().enumerate() {
            let rel = clip_file(i);
            let path = dir.join(&rel);
            std::fs::write(&path, clip_to_bytes(clip)?).map_err(|e| Error::io(&path, e))?;
            entries.push(ClipEntry {
                file: rel,
                label: clip.label.clone(),
                fps: clip.fps,
                frames: clip.frames.len(),
            });
        }
        if with_csv {
            let csv_dir = dir.join("csv");
            std::fs::create_dir_all(&csv_dir).map_err(|e| Error::io(&csv_dir, e))?;
            for (i, clip) in self.clips.iter().enumerate() {
                let path = csv_dir.join(format!("clip_{i:04}_{}.csv", clip.kind()));
                std::fs::write(&path, clip_to_csv(clip)).map_err(|e| Error::io(&path, e))?;
            }
        }
        let manifest = Manifest {
            version: DATASET_FORMAT_VERSION,
            spec: self.spec.clone(),
            seed: self.seed,
            k: self.k,
            assignments: self.assignments.clone(),
            clips: entries,
        };
        let path = dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::CorruptData {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        if manifest.version != DATASET_FORMAT_VERSION {
            return Err(Error::CorruptData {
                path,
                reason: format!("unsupported version {}", manifest.version),
            });
        }
        if manifest.assignments.len() != manifest.clips.len()
            || manifest.assignments.iter().any(|&a| a >= manifest.k)
        {
            return Err(Error::CorruptData {
                path,
                reason: "cluster assignments do not cover the clips".into(),
            });
        }
        let mut clips = Vec::with_capacity(manifest.clips.len());
        for entry in manifest.clips {
            let p: PathBuf = dir.join(&entry.file);
            let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
            let clip = clip_from_bytes(&bytes, entry.label, &p)?;
            if clip.frames.len() != entry.frames {
                return Err(Error::CorruptData {
                    path: p,
                    reason: "frame count differs from manifest".into(),
                });
            }
            clips.push(clip);
        }
        Ok(MotionDataset {
            spec: manifest.spec,
            seed: manifest.seed,
            clips,
            assignments: manifest.assignments,
            k: manifest.k,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec(count: usize, k: usize) -> DatasetSpec {
        DatasetSpec {
            kinds: MotionKind::ALL
                .iter()
                .map(|&kind| KindSpec::default_for(kind, count))
                .collect(),
            k,
            ..DatasetSpec::default()
        }
    }

    #[test]
    fn single_kind_single_cluster() {
        let model = RobotModel::planar_biped();
        let spec = DatasetSpec {
            kinds: vec![KindSpec::default_for(MotionKind::Squat, 5)],
            k: 1,
            ..DatasetSpec::default()
        };
        let ds = build_dataset(&model, &spec, 3).unwrap();
        assert_eq!(ds.assignments, vec![0; 5]);
    }

    #[test]
    fn six_kinds_cluster_by_kind() {
        let model = RobotModel::planar_biped();
        let ds = build_dataset(&model, &small_spec(10, 6), 11).unwrap();
        assert!(ds.purity() >= 0.8, "purity {}", ds.purity());
    }

    #[test]
    fn deterministic_build() {
        let model = RobotModel::planar_biped();
        let a = build_dataset(&model, &small_spec(2, 4), 5).unwrap();
        let b = build_dataset(&model, &small_spec(2, 4), 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn save_load_round_trip() {
        let model = RobotModel::planar_biped();
        let ds = build_dataset(&model, &small_spec(1, 3), 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path(), true).unwrap();
        let back = MotionDataset::load(dir.path()).unwrap();
        assert_eq!(back.assignments, ds.assignments);
        assert_eq!(back.clips.len(), ds.clips.len());
        for (a, b) in back.clips.iter().zip(&ds.clips) {
            assert_eq!(a.frames.len(), b.frames.len());
            for (fa, fb) in a.frames.iter().zip(&b.frames) {
                for (x, y) in frame_to_row(fa).iter().zip(frame_to_row(fb)) {
                    assert_eq!(*x, f64::from(y as f32));
                }
            }
        }
        let dir2 = tempfile::tempdir().unwrap();
        back.save(dir2.path(), false).unwrap();
        let f = clip_file(0);
        assert_eq!(
            std::fs::read(dir.path().join(&f)).unwrap(),
            std::fs::read(dir2.path().join(&f)).unwrap()
        );
        assert!(dir.path().join("csv").read_dir().unwrap().count() == ds.clips.len());
    }

    #[test]
    fn truncated_frame_file_rejected() {
        let model = RobotModel::planar_biped();
        let ds = build_dataset(&model, &small_spec(1, 2), 2).unwrap();
        let bytes = clip_to_bytes(&ds.clips[1]).unwrap();
        let err = clip_from_bytes(&bytes[..bytes.len() - 3], ds.clips[1].label.clone(), Path::new("c"));
        assert!(matches!(err, Err(Error::CorruptData { .. })));
    }
}
