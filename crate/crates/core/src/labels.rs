//! Category taxonomies.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const IGNORE_INDEX: u8 = 255;

/// The 19 Cityscapes evaluation categories in trainId order.
pub const CITYSCAPES: [&str; 19] = [
    "road",
    "sidewalk",
    "building",
    "wall",
    "fence",
    "pole",
    "traffic light",
    "traffic sign",
    "vegetation",
    "terrain",
    "sky",
    "person",
    "rider",
    "car",
    "truck",
    "bus",
    "train",
    "motorcycle",
    "bicycle",
];

/// Categories whose pixels persist between a day image and its aligned night view.
pub const STATIC_CATEGORIES: [&str; 10] = [
    "road",
    "sidewalk",
    "wall",
    "fence",
    "pole",
    "traffic light",
    "traffic sign",
    "vegetation",
    "terrain",
    "sky",
];

/// The reduced taxonomy rendered by the synthetic scene generator.
pub const SYNTHETIC: [&str; 7] = ["road", "sidewalk", "building", "pole", "vegetation", "sky", "car"];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    names: Vec<String>,
    static_mask: Vec<bool>,
    ignore_index: u8,
}

impl LabelSet {
    pub fn new(names: Vec<String>, static_mask: Vec<bool>, ignore_index: u8) -> Result<Self> {
        if names.len() < 2 {
            return Err(Error::InvalidArgument("a label set needs at least 2 classes".into()));
        }
        if names.len() != static_mask.len() {
            return Err(Error::InvalidArgument("static mask length differs from class count".into()));
        }
        if (ignore_index as usize) < names.len() {
            return Err(Error::InvalidArgument(format!(
                "ignore index {ignore_index} collides with a class id"
            )));
        }
        Ok(Self {
            names,
            static_mask,
            ignore_index,
        })
    }

    /// Builds a set whose static categories follow [`STATIC_CATEGORIES`] by name.
    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        let names: Vec<String> = names.iter().map(|s| s.as_ref().to_string()).collect();
        let mask = names.iter().map(|n| STATIC_CATEGORIES.contains(&n.as_str())).collect();
        Self::new(names, mask, IGNORE_INDEX)
    }

    pub fn cityscapes() -> Self {
        Self::from_names(&CITYSCAPES).expect("valid taxonomy")
    }

    /// The synthetic taxonomy. Scenes are rendered from one layout per pair,
    /// so buildings persist between views and count as static here; cars are
    /// the only dynamic class.
    pub fn synthetic() -> Self {
        let names = SYNTHETIC.iter().map(|s| s.to_string()).collect();
        let mask = SYNTHETIC.iter().map(|&n| n != "car").collect();
        Self::new(names, mask, IGNORE_INDEX).expect("valid taxonomy")
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn static_mask(&self) -> &[bool] {
        &self.static_mask
    }

    pub fn ignore_index(&self) -> u8 {
        self.ignore_index
    }

    /// Class ids of the static categories, ascending.
    pub fn static_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&k| self.static_mask[k]).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn is_valid(&self, label: u8) -> bool {
        (label as usize) < self.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cityscapes_has_ten_static_categories() {
        let l = LabelSet::cityscapes();
        assert_eq!(l.len(), 19);
        let stat: Vec<&str> = l.static_indices().iter().map(|&k| l.names()[k].as_str()).collect();
        assert_eq!(stat, STATIC_CATEGORIES);
        assert_eq!(l.ignore_index(), 255);
    }

    #[test]
    fn synthetic_taxonomy() {
        let l = LabelSet::synthetic();
        assert_eq!(l.static_indices(), vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(l.index_of("pole"), Some(3));
    }

    #[test]
    fn rejects_bad_sets() {
        assert!(LabelSet::from_names(&["road"]).is_err());
        assert!(LabelSet::new(vec!["a".into(), "b".into()], vec![true, false], 1).is_err());
    }
}
