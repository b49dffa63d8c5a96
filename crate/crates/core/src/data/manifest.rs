//! `id,path,u,v` manifests of real or exported images, loaded lazily.

use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Rgb};
use zian_tensor::Tensor;

use super::{Sample, Source};
use crate::error::{Result, ZianError};

pub const MANIFEST_HEADER: [&str; 4] = ["id", "path", "u", "v"];

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    /// Resolved against the manifest's directory.
    pub path: PathBuf,
    pub landmark: (f64, f64),
    /// 1-based data row, for error messages.
    pub row: usize,
}

/// Parsed manifest; images are decoded only on [`Manifest::load`].
#[derive(Debug, Clone, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

fn parse_coord(field: &str, name: &str, row: usize) -> Result<f64> {
    let v: f64 = field.trim().parse().map_err(|_| ZianError::Manifest {
        row,
        msg: format!("{name} is not a number: {field:?}"),
    })?;
    if !v.is_finite() {
        return Err(ZianError::Manifest {
            row,
            msg: format!("{name} is not finite: {field:?}"),
        });
    }
    Ok(v)
}

impl Manifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Decode entry `i` to a `3×H×W` sample in [0, 1]. Grayscale and 16-bit inputs are accepted.
    pub fn load(&self, i: usize) -> Result<Sample> {
        let e = self
            .entries
            .get(i)
            .ok_or_else(|| ZianError::Invalid(format!("manifest index {i} out of range ({})", self.len())))?;
        let image = decode_rgb(&e.path).map_err(|err| ZianError::Manifest {
            row: e.row,
            msg: format!("{}: {err}", e.path.display()),
        })?;
        Ok(Sample {
            image,
            landmark: e.landmark,
            id: e.id.clone(),
            source: Source::Manifest,
        })
    }

    pub fn load_all(&self) -> Result<Vec<Sample>> {
        (0..self.len()).map(|i| self.load(i)).collect()
    }
}

fn decode_rgb(path: &Path) -> std::result::Result<Tensor<f32>, image::ImageError> {
    let img = image::open(path)?.to_rgb32f();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0f32; 3 * h * w];
    for (i, px) in img.pixels().enumerate() {
        for ch in 0..3 {
            data[ch * h * w + i] = px[ch].clamp(0.0, 1.0);
        }
    }
    Ok(Tensor::new(vec![3, h, w], data).expect("buffer matches dimensions"))
}

/// Decode any supported image file into a `3×H×W` tensor in [0, 1].
pub fn load_image(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    decode_rgb(path).map_err(|source| ZianError::Image {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| ZianError::io(path, e))?;
    parse_manifest(&text, path.parent().unwrap_or(Path::new(".")))
}

/// Parse manifest text; relative image paths are joined onto `base`.
pub fn parse_manifest(text: &str, base: &Path) -> Result<Manifest> {
    if text.trim().is_empty() {
        return Ok(Manifest::default());
    }
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| ZianError::Manifest {
        row: 0,
        msg: e.to_string(),
    })?;
    if header.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
        return Err(ZianError::Manifest {
            row: 0,
            msg: format!("header must be {}, got {:?}", MANIFEST_HEADER.join(","), header),
        });
    }
    let mut entries = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| ZianError::Manifest { row, msg: e.to_string() })?;
        if rec.len() != 4 {
            return Err(ZianError::Manifest {
                row,
                msg: format!("expected 4 fields, got {}", rec.len()),
            });
        }
        let p = Path::new(&rec[1]);
        entries.push(ManifestEntry {
            id: rec[0].to_string(),
            path: if p.is_absolute() { p.to_path_buf() } else { base.join(p) },
            landmark: (parse_coord(&rec[2], "u", row)?, parse_coord(&rec[3], "v", row)?),
            row,
        });
    }
    Ok(Manifest { entries })
}

/// Write `3×H×W` in [0, 1] as a 16-bit RGB PNG.
pub fn save_png16(image: &Tensor<f32>, path: &Path) -> Result<()> {
    let s = image.shape();
    let (h, w) = (s[1], s[2]);
    let d = image.data();
    let mut px = Vec::with_capacity(3 * h * w);
    for i in 0..h * w {
        for ch in 0..3 {
            px.push((d[ch * h * w + i].clamp(0.0, 1.0) * 65535.0).round() as u16);
        }
    }
    let buf: ImageBuffer<Rgb<u16>, Vec<u16>> = ImageBuffer::from_raw(w as u32, h as u32, px).expect("buffer length matches dimensions");
    buf.save(path).map_err(|source| ZianError::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Export samples as `<id>.png` plus `manifest.csv` under `dir`; returns the manifest path.
/// Coordinates are written in shortest round-trip form, so reloading is exact.
pub fn write_manifest_set(samples: &[Sample], dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| ZianError::io(dir, e))?;
    let manifest = dir.join("manifest.csv");
    let mut w = csv::Writer::from_path(&manifest).map_err(|e| ZianError::Invalid(format!("{}: {e}", manifest.display())))?;
    let csv_err = |e: csv::Error| ZianError::Invalid(format!("{}: {e}", manifest.display()));
    w.write_record(MANIFEST_HEADER).map_err(csv_err)?;
    for s in samples {
        let file = format!("{}.png", s.id);
        save_png16(&s.image, &dir.join(&file))?;
        w.write_record([s.id.clone(), file, s.landmark.0.to_string(), s.landmark.1.to_string()])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| ZianError::io(&manifest, e))?;
    Ok(manifest)
}
