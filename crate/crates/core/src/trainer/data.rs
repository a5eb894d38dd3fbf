//! Dataset loading, case-level splits and featurization.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::features::{InputEncoding, QuantileNormalizer};
use crate::synthgen::{
    decode_png16, quantize, read_manifest, regenerate_record, ClassLabel, Domain, Manifest,
};
use crate::{Error, Result};

pub const TRAIN_FRACTION: f64 = 0.70;
pub const VAL_FRACTION: f64 = 0.15;
/// Reference levels per feature for the quantile normalizer.
pub const NORMALIZER_KNOTS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Subset {
    Train,
    Validation,
    Test,
}

/// Case indices per subset, stratified by class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaseSplit {
    pub train: BTreeSet<usize>,
    pub validation: BTreeSet<usize>,
    pub test: BTreeSet<usize>,
}

impl CaseSplit {
    pub fn subset(&self, case: usize) -> Option<Subset> {
        if self.train.contains(&case) {
            Some(Subset::Train)
        } else if self.validation.contains(&case) {
            Some(Subset::Validation)
        } else if self.test.contains(&case) {
            Some(Subset::Test)
        } else {
            None
        }
    }
}

/// Shuffles the cases of each class with `ChaCha8(seed)` and cuts them
/// 70/15/15, rounding the train and validation counts to nearest.
pub fn split_cases(case_classes: &BTreeMap<usize, usize>, seed: u64) -> CaseSplit {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (&case, &class) in case_classes {
        by_class.entry(class).or_default().push(case);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = CaseSplit {
        train: BTreeSet::new(),
        validation: BTreeSet::new(),
        test: BTreeSet::new(),
    };
    for cases in by_class.values_mut() {
        cases.shuffle(&mut rng);
        let n = cases.len() as f64;
        let n_train = (n * TRAIN_FRACTION).round() as usize;
        let n_val = ((n * VAL_FRACTION).round() as usize).min(cases.len() - n_train);
        split.train.extend(&cases[..n_train]);
        split.validation.extend(&cases[n_train..n_train + n_val]);
        split.test.extend(&cases[n_train + n_val..]);
    }
    split
}

/// Feature rows with their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    pub x: Array2<f64>,
    pub classes: Vec<usize>,
    pub domains: Vec<u8>,
    pub cases: Vec<usize>,
}

impl Samples {
    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> Samples {
        Samples {
            x: self.x.select(ndarray::Axis(0), idx),
            classes: idx.iter().map(|&i| self.classes[i]).collect(),
            domains: idx.iter().map(|&i| self.domains[i]).collect(),
            cases: idx.iter().map(|&i| self.cases[i]).collect(),
        }
    }

    /// Samples in `(class, domain)` cell order, `per_cell` from each, taken
    /// from the front of each cell.
    pub fn balanced_prefix(&self, n_classes: usize, per_cell: usize) -> Vec<usize> {
        let mut idx = Vec::with_capacity(n_classes * 2 * per_cell);
        for c in 0..n_classes {
            for d in 0..2u8 {
                idx.extend(
                    (0..self.len())
                        .filter(|&i| self.classes[i] == c && self.domains[i] == d)
                        .take(per_cell),
                );
            }
        }
        idx
    }

    pub fn cell_sizes(&self, n_classes: usize) -> Vec<usize> {
        let mut sizes = vec![0; n_classes * 2];
        for (&c, &d) in self.classes.iter().zip(&self.domains) {
            if c < n_classes {
                sizes[c * 2 + d as usize] += 1;
            }
        }
        sizes
    }
}

/// An image with its labels, before featurization.
#[derive(Debug, Clone)]
pub struct LabelledImage {
    pub subset: Subset,
    pub case: usize,
    pub class: usize,
    pub domain: Domain,
    pub pixels: Array2<f64>,
}

/// Normalized train, validation and test features.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub encoding: InputEncoding,
    pub normalizer: QuantileNormalizer,
    pub n_classes: usize,
    pub train: Samples,
    pub validation: Samples,
    pub test: Samples,
}

fn stack(rows: Vec<Vec<f64>>, dim: usize) -> Array2<f64> {
    let n = rows.len();
    Array2::from_shape_vec((n, dim), rows.into_iter().flatten().collect()).expect("uniform rows")
}

impl PreparedData {
    /// Encodes every image in parallel, fits the normalizer on the training
    /// rows and applies it to all three subsets.
    pub fn from_images(images: Vec<LabelledImage>, encoding: InputEncoding, n_classes: usize) -> Result<Self> {
        let encoded: Vec<Vec<f64>> = images
            .par_iter()
            .map(|im| encoding.encode(&im.pixels))
            .collect::<Result<_>>()?;
        let dim = encoding.dim();
        let mut parts: BTreeMap<Subset, (Vec<Vec<f64>>, Vec<usize>, Vec<u8>, Vec<usize>)> = BTreeMap::new();
        for (im, row) in images.iter().zip(encoded) {
            let e = parts.entry(im.subset).or_default();
            e.0.push(row);
            e.1.push(im.class);
            e.2.push(im.domain.bit());
            e.3.push(im.case);
        }
        let train_rows = parts
            .get(&Subset::Train)
            .map(|p| stack(p.0.clone(), dim))
            .ok_or_else(|| Error::InvalidBatch("training split is empty".into()))?;
        let normalizer = QuantileNormalizer::fit(&train_rows, NORMALIZER_KNOTS)?;
        let mut take = |s: Subset| -> Result<Samples> {
            let (rows, classes, domains, cases) = parts.remove(&s).unwrap_or_default();
            let rows = rows
                .par_iter()
                .map(|r| normalizer.transform(r))
                .collect::<Result<Vec<_>>>()?;
            Ok(Samples {
                x: stack(rows, dim),
                classes,
                domains,
                cases,
            })
        };
        let train = take(Subset::Train)?;
        let validation = take(Subset::Validation)?;
        let test = take(Subset::Test)?;
        let sizes = train.cell_sizes(n_classes);
        if let Some(empty) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::InvalidBatch(format!(
                "training cell (class {}, domain {}) is empty",
                empty / 2,
                empty % 2
            )));
        }
        Ok(Self {
            encoding,
            normalizer,
            n_classes,
            train,
            validation,
            test,
        })
    }
}

fn stored_pixels(dir: &Path, file: &str) -> Result<Array2<f64>> {
    Ok(decode_png16(&dir.join(file))?.mapv(|v| v as f64 / u16::MAX as f64))
}

/// Collects training images as stored, and both domains of every
/// validation and test case. A domain missing from the directory is
/// regenerated from its record's seed and quantized like a stored image.
pub fn collect_images(dir: &Path, manifest: &Manifest) -> Result<Vec<LabelledImage>> {
    let case_classes: BTreeMap<usize, usize> =
        manifest.records.iter().map(|r| (r.case, r.class.index())).collect();
    let split = split_cases(&case_classes, manifest.split_seed);

    let mut jobs = Vec::new();
    let mut by_case: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, r) in manifest.records.iter().enumerate() {
        by_case.entry(r.case).or_default().push(i);
    }
    for (&case, idx) in &by_case {
        let subset = split.subset(case).expect("every case is split");
        let records: Vec<_> = idx.iter().map(|&i| &manifest.records[i]).collect();
        match subset {
            Subset::Train => {
                for r in records {
                    jobs.push((subset, r.clone(), true));
                }
            }
            _ => {
                for domain in [Domain::Raw, Domain::Lut] {
                    match records.iter().find(|r| r.domain == domain) {
                        Some(r) => jobs.push((subset, (*r).clone(), true)),
                        None => {
                            let mut r = records[0].clone();
                            r.domain = domain;
                            jobs.push((subset, r, false));
                        }
                    }
                }
            }
        }
    }
    jobs.par_iter()
        .map(|(subset, record, stored)| {
            let pixels = if *stored {
                stored_pixels(dir, &record.file)?
            } else {
                regenerate_record(&manifest.generator, record)?
                    .pixels
                    .mapv(|p| quantize(p) as f64 / u16::MAX as f64)
            };
            Ok(LabelledImage {
                subset: *subset,
                case: record.case,
                class: record.class.index(),
                domain: record.domain,
                pixels,
            })
        })
        .collect()
}

/// Reads a generated dataset directory and prepares features.
pub fn load_dataset(dir: &Path, encoding: InputEncoding) -> Result<PreparedData> {
    let manifest = read_manifest(dir)?;
    let images = collect_images(dir, &manifest)?;
    PreparedData::from_images(images, encoding, ClassLabel::ALL.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_stratified_70_15_15() {
        let cases: BTreeMap<usize, usize> = (0..999).map(|c| (c, c % 3)).collect();
        let s = split_cases(&cases, 7);
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (699, 150, 150));
        for class in 0..3 {
            let count = |set: &BTreeSet<usize>| set.iter().filter(|&&c| c % 3 == class).count();
            assert_eq!((count(&s.train), count(&s.validation), count(&s.test)), (233, 50, 50));
        }
        assert!(s.train.is_disjoint(&s.validation) && s.train.is_disjoint(&s.test));
        assert_eq!(s, split_cases(&cases, 7));
        assert_ne!(s, split_cases(&cases, 8));
    }

    #[test]
    fn balanced_prefix_orders_cells() {
        let s = Samples {
            x: Array2::zeros((8, 1)),
            classes: vec![1, 0, 0, 1, 0, 1, 0, 1],
            domains: vec![0, 1, 0, 1, 0, 0, 1, 1],
            cases: (0..8).collect(),
        };
        assert_eq!(s.balanced_prefix(2, 2), vec![2, 4, 1, 6, 0, 5, 3, 7]);
        assert_eq!(s.cell_sizes(2), vec![2, 2, 2, 2]);
    }
}
