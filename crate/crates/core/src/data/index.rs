//! Dataset indices and their in-memory materialisation.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3, ArrayView2};

use super::io::{load_label, load_rgb};
use crate::labels::LabelSet;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Record {
    pub id: String,
    pub image: PathBuf,
    pub label: Option<PathBuf>,
}

/// A split of single images, optionally labeled.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetIndex {
    pub split: String,
    pub records: Vec<Record>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairedSample {
    pub pair_id: String,
    pub day_path: PathBuf,
    pub night_path: PathBuf,
}

/// Coarsely aligned day/night target pairs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairedIndex {
    pub pairs: Vec<PairedSample>,
}

fn png_names(dir: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::Dataset(format!("{}: {e}", dir.display())))? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.ends_with(".png") && entry.file_type()?.is_file() {
            names.push(name);
        }
    }
    names.sort();
    Ok(names)
}

fn stem(name: &str) -> String {
    name.trim_end_matches(".png").to_string()
}

impl DatasetIndex {
    /// `<root>/images/*.png` with labels of the same name under `<root>/labels`.
    /// With `require_labels`, every image must have a label.
    pub fn load(root: impl AsRef<Path>, require_labels: bool) -> Result<Self> {
        let root = root.as_ref();
        let images = root.join("images");
        let labels = root.join("labels");
        let mut records = Vec::new();
        for name in png_names(&images)? {
            let lbl = labels.join(&name);
            let label = if lbl.is_file() { Some(lbl) } else { None };
            if require_labels && label.is_none() {
                return Err(Error::Dataset(format!("missing label for {name} in {}", labels.display())));
            }
            records.push(Record {
                id: stem(&name),
                image: images.join(&name),
                label,
            });
        }
        if records.is_empty() {
            return Err(Error::Dataset(format!("no images under {}", images.display())));
        }
        Ok(Self {
            split: root.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
            records,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn is_labeled(&self) -> bool {
        self.records.iter().all(|r| r.label.is_some())
    }

    pub fn load_labels(&self) -> Result<Vec<Array2<u8>>> {
        self.records
            .iter()
            .map(|r| {
                let p = r
                    .label
                    .as_ref()
                    .ok_or_else(|| Error::Dataset(format!("record {} has no label", r.id)))?;
                load_label(p)
            })
            .collect()
    }

    /// Decodes every image (and label, when present) into memory.
    pub fn materialize(&self) -> Result<InMemorySplit> {
        let mut images = Vec::with_capacity(self.len());
        let mut labels = Vec::new();
        for r in &self.records {
            let img = load_rgb(&r.image)?;
            if let Some(lp) = &r.label {
                let l = load_label(lp)?;
                if l.dim() != (img.dim().1, img.dim().2) {
                    return Err(Error::Dataset(format!("label size differs from image for {}", r.id)));
                }
                labels.push(l);
            }
            images.push(img);
        }
        let labels = if labels.len() == images.len() { Some(labels) } else { None };
        Ok(InMemorySplit {
            ids: self.records.iter().map(|r| r.id.clone()).collect(),
            images,
            labels,
        })
    }
}

/// Reads `night_name<TAB>day_name` lines. Blank lines and `#` comments are skipped.
pub fn load_paired_index(
    day_dir: impl AsRef<Path>,
    night_dir: impl AsRef<Path>,
    pairs_file: impl AsRef<Path>,
) -> Result<PairedIndex> {
    let (day_dir, night_dir) = (day_dir.as_ref(), night_dir.as_ref());
    let text = fs::read_to_string(pairs_file.as_ref())
        .map_err(|e| Error::Dataset(format!("{}: {e}", pairs_file.as_ref().display())))?;
    let mut pairs = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (night, day) = line
            .split_once('\t')
            .ok_or_else(|| Error::Dataset(format!("line {}: expected `night<TAB>day`", i + 1)))?;
        let (night, day) = (night.trim(), day.trim());
        let night_path = night_dir.join(night);
        let day_path = day_dir.join(day);
        for (p, what) in [(&night_path, "night"), (&day_path, "day")] {
            if !p.is_file() {
                return Err(Error::Dataset(format!(
                    "line {}: {what} image {} does not exist",
                    i + 1,
                    p.display()
                )));
            }
        }
        let pair_id = stem(night);
        if !seen.insert(pair_id.clone()) {
            return Err(Error::Dataset(format!("line {}: duplicate pair id {pair_id}", i + 1)));
        }
        pairs.push(PairedSample {
            pair_id,
            day_path,
            night_path,
        });
    }
    if pairs.is_empty() {
        return Err(Error::Dataset("pairs file lists no pairs".into()));
    }
    let listed: BTreeSet<_> = pairs.iter().map(|p| p.night_path.clone()).collect();
    if let Ok(names) = png_names(night_dir) {
        let unmatched = names.iter().filter(|n| !listed.contains(&night_dir.join(n))).count();
        if unmatched > 0 {
            log::warn!("{unmatched} night images in {} are not paired", night_dir.display());
        }
    }
    Ok(PairedIndex { pairs })
}

impl PairedIndex {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn materialize(&self) -> Result<InMemoryPairs> {
        let mut day = Vec::with_capacity(self.len());
        let mut night = Vec::with_capacity(self.len());
        for p in &self.pairs {
            let d = load_rgb(&p.day_path)?;
            let n = load_rgb(&p.night_path)?;
            if d.dim() != n.dim() {
                return Err(Error::Dataset(format!("pair {} has mismatched sizes", p.pair_id)));
            }
            day.push(d);
            night.push(n);
        }
        Ok(InMemoryPairs {
            ids: self.pairs.iter().map(|p| p.pair_id.clone()).collect(),
            day,
            night,
        })
    }
}

/// Decoded images (`3×H×W`) with optional label maps.
#[derive(Clone, Debug, Default)]
pub struct InMemorySplit {
    pub ids: Vec<String>,
    pub images: Vec<Array3<f32>>,
    pub labels: Option<Vec<Array2<u8>>>,
}

impl InMemorySplit {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

#[derive(Clone, Debug, Default)]
pub struct InMemoryPairs {
    pub ids: Vec<String>,
    pub day: Vec<Array3<f32>>,
    pub night: Vec<Array3<f32>>,
}

impl InMemoryPairs {
    pub fn len(&self) -> usize {
        self.day.len()
    }

    pub fn is_empty(&self) -> bool {
        self.day.is_empty()
    }
}

/// `a_k = #pixels labeled k / #pixels not ignored`, over all maps.
pub fn class_proportions<'a>(
    labels: impl IntoIterator<Item = ArrayView2<'a, u8>>,
    set: &LabelSet,
) -> Result<Vec<f64>> {
    let k = set.len();
    let mut counts = vec![0u64; k];
    let mut valid = 0u64;
    for map in labels {
        for &l in map.iter() {
            if l == set.ignore_index() {
                continue;
            }
            if (l as usize) >= k {
                return Err(Error::Dataset(format!("label value {l} outside [0, {k})")));
            }
            counts[l as usize] += 1;
            valid += 1;
        }
    }
    if valid == 0 {
        return Err(Error::Degenerate("no valid labeled pixels".into()));
    }
    Ok(counts.iter().map(|&c| c as f64 / valid as f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::io::{save_label, save_rgb};
    use proptest::prelude::*;

    fn set3() -> LabelSet {
        LabelSet::from_names(&["a", "b", "c"]).unwrap()
    }

    #[test]
    fn proportion_examples() {
        let all0 = Array2::<u8>::zeros((4, 4));
        assert_eq!(class_proportions([all0.view()], &set3()).unwrap(), vec![1.0, 0.0, 0.0]);
        let half = Array2::from_shape_fn((4, 4), |(y, _)| if y < 2 { 0 } else { 255 });
        assert_eq!(class_proportions([half.view()], &set3()).unwrap(), vec![1.0, 0.0, 0.0]);
        let none = Array2::from_elem((2, 2), 255u8);
        assert!(class_proportions([none.view()], &set3()).is_err());
    }

    #[test]
    fn paired_index_from_files() {
        let dir = tempfile::tempdir().unwrap();
        let (d, n) = (dir.path().join("day"), dir.path().join("night"));
        fs::create_dir_all(&d).unwrap();
        fs::create_dir_all(&n).unwrap();
        let img = Array3::<f32>::zeros((3, 4, 4));
        let mut lines = String::new();
        for i in 0..3 {
            save_rgb(d.join(format!("d{i}.png")), img.view()).unwrap();
            save_rgb(n.join(format!("n{i}.png")), img.view()).unwrap();
            lines.push_str(&format!("n{i}.png\td{i}.png\n"));
        }
        fs::write(dir.path().join("pairs.tsv"), &lines).unwrap();
        let idx = load_paired_index(&d, &n, dir.path().join("pairs.tsv")).unwrap();
        assert_eq!(idx.len(), 3);
        assert_eq!(idx.materialize().unwrap().len(), 3);

        lines.push_str("n0.png\tmissing.png\n");
        fs::write(dir.path().join("bad.tsv"), &lines).unwrap();
        let err = load_paired_index(&d, &n, dir.path().join("bad.tsv")).unwrap_err().to_string();
        assert!(err.contains("line 4"), "{err}");
    }

    #[test]
    fn labeled_split_requires_labels() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("images")).unwrap();
        fs::create_dir_all(dir.path().join("labels")).unwrap();
        let img = Array3::<f32>::zeros((3, 4, 4));
        save_rgb(dir.path().join("images/x.png"), img.view()).unwrap();
        assert!(DatasetIndex::load(dir.path(), true).is_err());
        save_label(dir.path().join("labels/x.png"), Array2::<u8>::zeros((4, 4)).view()).unwrap();
        let idx = DatasetIndex::load(dir.path(), true).unwrap();
        assert!(idx.is_labeled());
        assert_eq!(idx.materialize().unwrap().labels.unwrap().len(), 1);
    }

    proptest! {
        #[test]
        fn proportions_match_counting_and_sum_to_one(vals in prop::collection::vec(prop::sample::select(vec![0u8, 1, 2, 255]), 1..64)) {
            prop_assume!(vals.iter().any(|&v| v != 255));
            let n = vals.len();
            let map = Array2::from_shape_vec((1, n), vals.clone()).unwrap();
            let a = class_proportions([map.view()], &set3()).unwrap();
            let valid = vals.iter().filter(|&&v| v != 255).count() as f64;
            for k in 0..3u8 {
                let c = vals.iter().filter(|&&v| v == k).count() as f64;
                prop_assert_eq!(a[k as usize], c / valid);
            }
            prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
