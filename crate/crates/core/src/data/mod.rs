//! Datasets: IDX and PGM loaders, class-balanced subsets and synthetic
//! unions of subspaces.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use crate::array::Array;
use crate::error::{Error, Result};
use crate::rng::seeded;

pub mod idx;
pub mod pgm;
pub mod synth;

pub use idx::{load_idx, write_idx_images, write_idx_labels};
pub use pgm::load_image_dir;
pub use synth::{synth_subspaces, SynthData, SynthParams};

/// Grayscale images in `[0, 1]` with optional ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// `N x 1 x H x W`.
    pub images: Array,
    /// Compact class ids `0..n_classes`, every class nonempty.
    pub labels: Option<Vec<usize>>,
    /// Original class names, indexed by compact id.
    pub class_names: Vec<String>,
    pub name: String,
    pub provenance: String,
}

impl Dataset {
    pub fn new(images: Array, labels: Option<Vec<usize>>, name: impl Into<String>, provenance: impl Into<String>) -> Result<Self> {
        let n = match *images.shape() {
            [n, 1, h, w] if h > 0 && w > 0 => n,
            _ => return Err(Error::config(format!("images must be N x 1 x H x W, got {:?}", images.shape()))),
        };
        if let Some(i) = images.data().iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::contract(format!("pixel {i} is outside [0, 1]")));
        }
        let mut class_names = Vec::new();
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::contract(format!("{} labels for {n} images", l.len())));
            }
            let k = l.iter().max().map_or(0, |m| m + 1);
            let mut seen = vec![false; k];
            l.iter().for_each(|&c| seen[c] = true);
            if let Some(c) = seen.iter().position(|s| !s) {
                return Err(Error::contract(format!("class {c} has no samples")));
            }
            class_names = (0..k).map(|c| c.to_string()).collect();
        }
        Ok(Dataset { images, labels, class_names, name: name.into(), provenance: provenance.into() })
    }

    /// Compacts arbitrary label ids (sorted) to `0..k`, remembering the
    /// originals as class names.
    pub fn with_raw_labels(images: Array, raw: &[String], name: impl Into<String>, provenance: impl Into<String>) -> Result<Self> {
        let ids: BTreeMap<&String, usize> = {
            let mut uniq: Vec<&String> = raw.iter().collect();
            uniq.sort();
            uniq.dedup();
            uniq.into_iter().enumerate().map(|(i, s)| (s, i)).collect()
        };
        let labels = raw.iter().map(|s| ids[s]).collect();
        let mut ds = Dataset::new(images, Some(labels), name, provenance)?;
        ds.class_names = ids.keys().map(|s| s.to_string()).collect();
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn height(&self) -> usize {
        self.images.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.images.shape()[3]
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    /// `D x N` matrix whose columns are the row-major images.
    pub fn flattened(&self) -> Array {
        let n = self.len();
        self.images
            .reshape(&[n, self.height() * self.width()])
            .and_then(|a| a.transpose())
            .expect("images are 4-D")
    }
}

/// Picks `per_class` random samples from each of `classes` (all classes
/// when `None`). The result is grouped by class in the requested order,
/// ascending original index within a class, with labels renumbered to the
/// position in `classes`.
pub fn subset_select(ds: &Dataset, per_class: usize, classes: Option<&[usize]>, seed: u64) -> Result<Dataset> {
    let labels = ds.labels.as_ref().ok_or_else(|| Error::contract("subset selection needs labels"))?;
    if per_class == 0 {
        return Err(Error::contract("per_class must be at least 1"));
    }
    let all: Vec<usize> = (0..ds.n_classes()).collect();
    let classes = classes.unwrap_or(&all);
    if classes.len() < 2 {
        return Err(Error::contract("need at least two classes"));
    }
    let mut rng = seeded(seed);
    let mut picked: Vec<(usize, usize)> = Vec::new();
    for (new_label, &c) in classes.iter().enumerate() {
        if c >= ds.n_classes() {
            return Err(Error::contract(format!("class {c} does not exist")));
        }
        let mut members: Vec<usize> = labels.iter().enumerate().filter(|(_, &l)| l == c).map(|(i, _)| i).collect();
        if members.len() < per_class {
            return Err(Error::contract(format!(
                "class {} has {} samples, {per_class} requested",
                ds.class_names[c],
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        let mut chosen = members[..per_class].to_vec();
        chosen.sort_unstable();
        picked.extend(chosen.into_iter().map(|i| (i, new_label)));
    }
    let (h, w) = (ds.height(), ds.width());
    let mut data = Vec::with_capacity(picked.len() * h * w);
    for &(i, _) in &picked {
        data.extend_from_slice(&ds.images.data()[i * h * w..(i + 1) * h * w]);
    }
    let images = Array::new(vec![picked.len(), 1, h, w], data)?;
    let mut out = Dataset::new(
        images,
        Some(picked.iter().map(|&(_, l)| l).collect()),
        format!("{}-subset", ds.name),
        format!("{} | {per_class} per class from classes {classes:?}, seed {seed}", ds.provenance),
    )?;
    out.class_names = classes.iter().map(|&c| ds.class_names[c].clone()).collect();
    Ok(out)
}

/// `count` distinct class ids drawn at random, in ascending order.
pub fn choose_classes(n_available: usize, count: usize, seed: u64) -> Result<Vec<usize>> {
    if count > n_available {
        return Err(Error::contract(format!("{count} classes requested, {n_available} available")));
    }
    let mut ids: Vec<usize> = (0..n_available).collect();
    ids.shuffle(&mut seeded(seed));
    let mut out = ids[..count].to_vec();
    out.sort_unstable();
    Ok(out)
}
