//! On-disk dataset layout:
//!
//! ```text
//! root/
//!   images/{id}.png    RGB
//!   masks/{id}.png     8-bit gray, 255 = smoke
//!   boxes/{id}.json    [{"x0", "y0", "x1", "y1", "score"}]
//!   labels.csv         image_id,frame_label
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::image::{read_gray8, read_rgb, write_gray8, write_rgb, Mask, Plane, RgbImage};
use crate::objectness::BBox;
use crate::{Error, Result};

/// One annotated image.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: RgbImage,
    pub mask: Mask,
    /// 1 when smoke is present.
    pub label: u8,
    pub boxes: Vec<BBox>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub image: PathBuf,
    pub mask: Option<PathBuf>,
    pub label: u8,
    pub boxes: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Deserialize, Serialize)]
struct LabelRow {
    image_id: String,
    frame_label: u8,
}

fn existing(path: PathBuf) -> Option<PathBuf> {
    path.is_file().then_some(path)
}

impl DatasetManifest {
    /// Reads `labels.csv` under `root` and resolves the per-image files.
    /// Lines starting with `#` are comments.
    pub fn scan(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let csv_path = root.join("labels.csv");
        let text = fs::read_to_string(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut entries = Vec::new();
        for row in reader.deserialize::<LabelRow>() {
            let row = row.map_err(|e| Error::data(&csv_path, e.to_string()))?;
            if row.frame_label > 1 {
                return Err(Error::data(
                    &csv_path,
                    format!("{}: frame label must be 0 or 1, got {}", row.image_id, row.frame_label),
                ));
            }
            entries.push(ManifestEntry {
                image: root.join("images").join(format!("{}.png", row.image_id)),
                mask: existing(root.join("masks").join(format!("{}.png", row.image_id))),
                boxes: existing(root.join("boxes").join(format!("{}.json", row.image_id))),
                label: row.frame_label,
                id: row.image_id,
            });
        }
        Ok(DatasetManifest { root, entries })
    }

    /// Checks that every referenced file exists and every smoke entry has
    /// a mask.
    pub fn validate(&self) -> Result<()> {
        for e in &self.entries {
            if !e.image.is_file() {
                return Err(Error::data(&e.image, format!("image of entry {} is missing", e.id)));
            }
            if e.label == 1 && e.mask.is_none() {
                return Err(Error::data(&self.root, format!("smoke entry {} has no mask", e.id)));
            }
            for p in e.mask.iter().chain(&e.boxes) {
                if !p.is_file() {
                    return Err(Error::data(p, format!("file of entry {} is missing", e.id)));
                }
            }
        }
        Ok(())
    }
}

fn load_entry(e: &ManifestEntry) -> Result<Sample> {
    let image = read_rgb(&e.image)?;
    let mask = match &e.mask {
        Some(p) => {
            let m = read_gray8(p)?.to_mask();
            if !m.same_size(&Plane::filled(image.width, image.height, ())) {
                return Err(Error::data(
                    p,
                    format!(
                        "mask is {}×{} but image {} is {}×{}",
                        m.width, m.height, e.id, image.width, image.height
                    ),
                ));
            }
            m
        }
        None => Plane::filled(image.width, image.height, false),
    };
    if e.label == 0 && mask.count() > 0 {
        return Err(Error::data(&e.image, format!("background entry {} has a non-empty mask", e.id)));
    }
    let boxes = match &e.boxes {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|err| Error::io(p, err))?;
            let boxes: Vec<BBox> =
                serde_json::from_str(&text).map_err(|err| Error::data(p, format!("invalid box list: {err}")))?;
            for b in &boxes {
                b.validate(image.width, image.height).map_err(|err| Error::data(p, err.to_string()))?;
            }
            boxes
        }
        None => Vec::new(),
    };
    Ok(Sample {
        id: e.id.clone(),
        image,
        mask,
        label: e.label,
        boxes,
    })
}

/// Decodes every entry of a manifest, in manifest order.
pub fn load_dataset(manifest: &DatasetManifest) -> Result<Vec<Sample>> {
    manifest.validate()?;
    manifest.entries.iter().map(load_entry).collect()
}

/// Writes samples in the standard layout. Existing files are overwritten.
pub fn write_dataset(root: impl AsRef<Path>, samples: &[Sample], provenance: Option<&str>) -> Result<()> {
    let root = root.as_ref();
    for d in ["images", "masks", "boxes"] {
        let dir = root.join(d);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let mut csv_text = String::new();
    if let Some(p) = provenance {
        csv_text.push_str(&format!("# provenance: {p}\n"));
    }
    csv_text.push_str("image_id,frame_label\n");
    for s in samples {
        write_rgb(root.join("images").join(format!("{}.png", s.id)), &s.image, provenance)?;
        write_gray8(root.join("masks").join(format!("{}.png", s.id)), &s.mask.to_gray8(), provenance)?;
        let path = root.join("boxes").join(format!("{}.json", s.id));
        let json = serde_json::to_string(&s.boxes).expect("boxes serialize");
        fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
        csv_text.push_str(&format!("{},{}\n", s.id, s.label));
    }
    let path = root.join("labels.csv");
    fs::write(&path, csv_text).map_err(|e| Error::io(&path, e))
}

/// Mean colour over all pixels of a set of samples.
pub fn mean_color(samples: &[Sample]) -> [f64; 3] {
    let mut sum = [0.0; 3];
    let mut n = 0usize;
    for s in samples {
        for (c, acc) in sum.iter_mut().enumerate() {
            *acc += s.image.channels[c].iter().sum::<f64>();
        }
        n += s.image.width * s.image.height;
    }
    if n == 0 {
        return [0.0; 3];
    }
    sum.map(|v| v / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(id: &str, label: u8) -> Sample {
        let image = RgbImage::from_fn(8, 8, |x, y| [x as f64 / 7.0, y as f64 / 7.0, 0.5]);
        let mask = Plane::from_fn(8, 8, |x, y| label == 1 && (2..5).contains(&x) && (1..4).contains(&y));
        let boxes = if label == 1 {
            vec![BBox { x0: 2, y0: 1, x1: 5, y1: 4, score: 0.75 }]
        } else {
            Vec::new()
        };
        Sample {
            id: id.into(),
            image: image.quantized(),
            mask,
            label,
            boxes,
        }
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let samples = vec![sample("a", 1), sample("b", 0)];
        write_dataset(dir.path(), &samples, Some("seed=1")).unwrap();
        let manifest = DatasetManifest::scan(dir.path()).unwrap();
        assert_eq!(manifest.entries.len(), 2);
        let loaded = load_dataset(&manifest).unwrap();
        assert_eq!(loaded, samples);
        assert_eq!(loaded[1].mask.count(), 0);
    }

    #[test]
    fn missing_mask_names_entry() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &[sample("smoky", 1)], None).unwrap();
        fs::remove_file(dir.path().join("masks/smoky.png")).unwrap();
        let err = load_dataset(&DatasetManifest::scan(dir.path()).unwrap()).unwrap_err();
        assert!(err.to_string().contains("smoky"), "{err}");
    }

    #[test]
    fn size_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &[sample("a", 1)], None).unwrap();
        write_gray8(dir.path().join("masks/a.png"), &Plane::filled(4, 4, 255u8), None).unwrap();
        assert!(load_dataset(&DatasetManifest::scan(dir.path()).unwrap()).is_err());
    }
}
