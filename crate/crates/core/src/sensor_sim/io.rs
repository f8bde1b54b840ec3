//! On-disk dataset format.
//!
//! Each sample is one little-endian file:
//!
//! ```text
//! magic      [u8; 4]  "HVTS"
//! version    u16      1
//! flags      u16      bit 0: selected (background-subtracted) frames
//!                     bit 1: first frame is the reference frame
//! height     u32
//! width      u32
//! frames     u32
//! markers    u32      per frame
//! label      u32      0 when unlabeled
//! compliance f64
//! frames * height * width f32, row-major
//! frames * markers * [x, y] f32
//! frames f64 timestamps
//! ```
//!
//! A dataset directory also holds `manifest.csv` with one
//! `path,label,f_push,v_push,seed` line per sample.

use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::{ClassId, LabeledPress, PressVideo};
use crate::image::Frame;

pub const MAGIC: &[u8; 4] = b"HVTS";
pub const VERSION: u16 = 1;
pub const FLAG_SELECTED: u16 = 1;
pub const FLAG_REFERENCE: u16 = 1 << 1;
pub const MANIFEST: &str = "manifest.csv";

#[derive(Debug, Error)]
pub enum FormatError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("bad magic {0:?}, expected \"HVTS\"")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),
    #[error("malformed record: {0}")]
    Malformed(String),
    #[error("manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },
}

/// The generic record stored in a sample file.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub flags: u16,
    /// 0 when unlabeled.
    pub label: u32,
    pub compliance: f64,
    pub frames: Vec<Frame>,
    pub markers: Vec<Vec<[f32; 2]>>,
    pub timestamps: Vec<f64>,
}

impl From<&PressVideo> for Record {
    fn from(v: &PressVideo) -> Self {
        Record {
            flags: 0,
            label: v.label.0,
            compliance: v.compliance,
            frames: v.frames.clone(),
            markers: v.markers.clone(),
            timestamps: v.timestamps.clone(),
        }
    }
}

impl TryFrom<Record> for PressVideo {
    type Error = FormatError;

    fn try_from(r: Record) -> Result<Self, FormatError> {
        if r.flags != 0 {
            return Err(FormatError::Malformed(format!("record flags {:#x} are not a raw press", r.flags)));
        }
        if r.label == 0 {
            return Err(FormatError::Malformed("raw press without label".into()));
        }
        Ok(PressVideo {
            frames: r.frames,
            markers: r.markers,
            timestamps: r.timestamps,
            label: ClassId(r.label),
            compliance: r.compliance,
        })
    }
}

pub fn write_record<W: Write>(w: &mut W, r: &Record) -> Result<(), FormatError> {
    let n = r.frames.len();
    let (h, wd) = r.frames.first().map_or((0, 0), Frame::shape);
    let n_markers = r.markers.first().map_or(0, Vec::len);
    if r.timestamps.len() != n || (!r.markers.is_empty() && r.markers.len() != n) {
        return Err(FormatError::Malformed("per-frame arrays disagree in length".into()));
    }
    if r.frames.iter().any(|f| f.shape() != (h, wd)) || r.markers.iter().any(|m| m.len() != n_markers) {
        return Err(FormatError::Malformed("frames or marker lists differ in size".into()));
    }
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&r.flags.to_le_bytes())?;
    for v in [h, wd, n, n_markers] {
        w.write_all(&(v as u32).to_le_bytes())?;
    }
    w.write_all(&r.label.to_le_bytes())?;
    w.write_all(&r.compliance.to_le_bytes())?;
    for f in &r.frames {
        for v in f.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    for m in &r.markers {
        for p in m {
            w.write_all(&p[0].to_le_bytes())?;
            w.write_all(&p[1].to_le_bytes())?;
        }
    }
    for t in &r.timestamps {
        w.write_all(&t.to_le_bytes())?;
    }
    Ok(())
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N], FormatError> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

pub fn read_record<R: Read>(r: &mut R) -> Result<Record, FormatError> {
    let magic: [u8; 4] = read_array(r)?;
    if &magic != MAGIC {
        return Err(FormatError::BadMagic(magic));
    }
    let version = u16::from_le_bytes(read_array(r)?);
    if version != VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let flags = u16::from_le_bytes(read_array(r)?);
    let mut dims = [0usize; 4];
    for d in &mut dims {
        *d = u32::from_le_bytes(read_array(r)?) as usize;
    }
    let [h, w, n, n_markers] = dims;
    let label = u32::from_le_bytes(read_array(r)?);
    let compliance = f64::from_le_bytes(read_array(r)?);

    let mut frames = Vec::with_capacity(n);
    for _ in 0..n {
        let mut data = Vec::with_capacity(h * w);
        for _ in 0..h * w {
            data.push(f32::from_le_bytes(read_array(r)?));
        }
        frames.push(Frame::from_vec(h, w, data));
    }
    let mut markers = Vec::with_capacity(if n_markers > 0 { n } else { 0 });
    if n_markers > 0 {
        for _ in 0..n {
            let mut m = Vec::with_capacity(n_markers);
            for _ in 0..n_markers {
                let x = f32::from_le_bytes(read_array(r)?);
                let y = f32::from_le_bytes(read_array(r)?);
                m.push([x, y]);
            }
            markers.push(m);
        }
    }
    let mut timestamps = Vec::with_capacity(n);
    for _ in 0..n {
        timestamps.push(f64::from_le_bytes(read_array(r)?));
    }
    Ok(Record { flags, label, compliance, frames, markers, timestamps })
}

pub fn write_video(path: &Path, video: &PressVideo) -> Result<(), FormatError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_record(&mut w, &Record::from(video))?;
    w.flush()?;
    Ok(())
}

pub fn read_video(path: &Path) -> Result<PressVideo, FormatError> {
    let mut r = BufReader::new(File::open(path)?);
    read_record(&mut r)?.try_into()
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    /// Path relative to the dataset directory.
    pub path: String,
    pub label: ClassId,
    pub f_push: f64,
    pub v_push: f64,
    pub seed: u64,
}

impl ManifestEntry {
    pub fn to_line(&self) -> String {
        format!("{},{},{},{},{}", self.path, self.label, self.f_push, self.v_push, self.seed)
    }

    pub fn parse(line: &str, line_no: usize) -> Result<Self, FormatError> {
        let err = |reason: String| FormatError::Manifest { line: line_no, reason };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 5 {
            return Err(err(format!("expected 5 fields, found {}", fields.len())));
        }
        let num = |i: usize, name: &str| fields[i].parse::<f64>().map_err(|e| err(format!("{name}: {e}")));
        let label: u32 = fields[1].parse().map_err(|e| err(format!("label: {e}")))?;
        if label == 0 {
            return Err(err("label must be >= 1".into()));
        }
        Ok(ManifestEntry {
            path: fields[0].to_string(),
            label: ClassId(label),
            f_push: num(2, "f_push")?,
            v_push: num(3, "v_push")?,
            seed: fields[4].parse().map_err(|e| err(format!("seed: {e}")))?,
        })
    }
}

/// File name for the `index`-th sample of a dataset.
pub fn sample_file_name(index: usize) -> String {
    format!("press_{index:05}.hvts")
}

/// Writes samples and the manifest into `dir`, creating it if needed.
pub fn export_dataset<'a, I>(dir: &Path, samples: I) -> Result<Vec<ManifestEntry>, FormatError>
where
    I: IntoIterator<Item = &'a LabeledPress>,
{
    fs::create_dir_all(dir)?;
    let mut entries = Vec::new();
    for (i, s) in samples.into_iter().enumerate() {
        let name = sample_file_name(i);
        write_video(&dir.join(&name), &s.video)?;
        entries.push(ManifestEntry {
            path: name,
            label: s.video.label,
            f_push: s.spec.params.f_push,
            v_push: s.spec.params.v_push,
            seed: s.spec.seed,
        });
    }
    write_manifest(dir, &entries)?;
    Ok(entries)
}

pub fn write_manifest(dir: &Path, entries: &[ManifestEntry]) -> Result<(), FormatError> {
    let mut w = BufWriter::new(File::create(dir.join(MANIFEST))?);
    for e in entries {
        writeln!(w, "{}", e.to_line())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestEntry>, FormatError> {
    let r = BufReader::new(File::open(dir.join(MANIFEST))?);
    let mut entries = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        entries.push(ManifestEntry::parse(&line, i + 1)?);
    }
    Ok(entries)
}

/// Reads every sample listed in the manifest of `dir`.
pub fn import_dataset(dir: &Path) -> Result<Vec<(ManifestEntry, PressVideo)>, FormatError> {
    read_manifest(dir)?
        .into_iter()
        .map(|e| {
            let path: PathBuf = dir.join(&e.path);
            let video = read_video(&path)?;
            if video.label != e.label {
                return Err(FormatError::Malformed(format!(
                    "{}: label {} disagrees with manifest label {}",
                    e.path, video.label, e.label
                )));
            }
            Ok((e, video))
        })
        .collect()
}
