//! Synthetic clusters and a character-level next-token task.

use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Batch, Targets};
use crate::error::{out_of_range, Error, Result};
use crate::linalg::Matrix;
use crate::rng::SeededRng;
use crate::scalar::Scalar;

/// Embedded public-domain text (Shakespeare's Macbeth).
pub const CORPUS: &str = include_str!("../../data/corpus.txt");

pub const DATASET_FORMAT_VERSION: u32 = 1;

/// Fraction of the corpus (leading part) used for training.
const CHARLM_TRAIN_FRAC: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Synthetic,
    Charlm,
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "synthetic" => Ok(TaskKind::Synthetic),
            "charlm" => Ok(TaskKind::Charlm),
            other => Err(Error::Unknown {
                kind: "task",
                name: other.into(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSpec {
    pub kind: TaskKind,
    /// Synthetic: number of clusters (classes).
    pub classes: usize,
    /// Synthetic: input dimension.
    pub dim: usize,
    pub n_train: usize,
    pub n_val: usize,
    /// Synthetic: probability that a label is replaced by a different class.
    pub label_noise: f64,
    /// Synthetic: cluster centers are `N(0, center_scale²)` per coordinate.
    pub center_scale: f64,
    /// Synthetic: within-cluster standard deviation.
    pub cluster_std: f64,
    /// Charlm: characters of context fed to the model (one-hot each).
    pub context: usize,
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self {
            kind: TaskKind::Synthetic,
            classes: 4,
            dim: 16,
            n_train: 2048,
            n_val: 512,
            label_noise: 0.1,
            center_scale: 1.0,
            cluster_std: 1.0,
            context: 4,
        }
    }
}

impl TaskSpec {
    pub fn charlm() -> Self {
        Self {
            kind: TaskKind::Charlm,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            TaskKind::Synthetic => {
                if self.classes < 2 {
                    return Err(out_of_range("classes", self.classes as f64, "[2, inf)"));
                }
                if self.dim == 0 || self.n_train == 0 || self.n_val == 0 {
                    return Err(Error::Config("synthetic task needs dim, n_train and n_val > 0".into()));
                }
                if !(0.0..=1.0).contains(&self.label_noise) {
                    return Err(out_of_range("label_noise", self.label_noise, "[0, 1]"));
                }
                if !(self.center_scale >= 0.0 && self.cluster_std >= 0.0) {
                    return Err(Error::Config("center_scale and cluster_std must be >= 0".into()));
                }
            }
            TaskKind::Charlm => {
                if self.context == 0 {
                    return Err(out_of_range("context", 0.0, "[1, inf)"));
                }
            }
        }
        Ok(())
    }

    pub fn build(&self, seed: u64) -> Result<Dataset> {
        self.validate()?;
        match self.kind {
            TaskKind::Synthetic => Ok(synthetic(self, seed)),
            TaskKind::Charlm => charlm(self),
        }
    }
}

/// Builds the default task of the named kind.
pub fn make_task(kind: &str, seed: u64) -> Result<Dataset> {
    match kind.parse::<TaskKind>()? {
        TaskKind::Synthetic => TaskSpec::default().build(seed),
        TaskKind::Charlm => TaskSpec::charlm().build(seed),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum SplitData {
    Dense { x: Matrix<f64>, y: Vec<usize> },
    Tokens { ids: Vec<u16> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    format_version: u32,
    spec: TaskSpec,
    input_dim: usize,
    n_classes: usize,
    /// Charlm: the characters indexed by token id.
    vocab: Option<String>,
    train: SplitData,
    val: SplitData,
}

fn synthetic(spec: &TaskSpec, seed: u64) -> Dataset {
    let mut rng = SeededRng::new(seed, 0x7a5c);
    let centers: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| rng.normal_vec(spec.dim, spec.center_scale))
        .collect();
    let mut draw = |n: usize| {
        let mut x = Matrix::zeros(n, spec.dim);
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let class = rng.below(spec.classes);
            for (v, &c) in x.row_mut(i).iter_mut().zip(&centers[class]) {
                *v = c + spec.cluster_std * rng.normal();
            }
            let label = if rng.uniform() < spec.label_noise {
                (class + 1 + rng.below(spec.classes - 1)) % spec.classes
            } else {
                class
            };
            y.push(label);
        }
        SplitData::Dense { x, y }
    };
    let train = draw(spec.n_train);
    let val = draw(spec.n_val);
    Dataset {
        format_version: DATASET_FORMAT_VERSION,
        spec: spec.clone(),
        input_dim: spec.dim,
        n_classes: spec.classes,
        vocab: None,
        train,
        val,
    }
}

fn charlm(spec: &TaskSpec) -> Result<Dataset> {
    let mut chars: Vec<char> = CORPUS.chars().collect();
    chars.sort_unstable();
    chars.dedup();
    let ids: Vec<u16> = CORPUS
        .chars()
        .map(|c| chars.binary_search(&c).expect("char is in vocab") as u16)
        .collect();
    let cut = (ids.len() as f64 * CHARLM_TRAIN_FRAC) as usize;
    if cut <= spec.context || ids.len() - cut <= spec.context {
        return Err(out_of_range("context", spec.context as f64, "shorter than each split"));
    }
    let v = chars.len();
    Ok(Dataset {
        format_version: DATASET_FORMAT_VERSION,
        spec: spec.clone(),
        input_dim: spec.context * v,
        n_classes: v,
        vocab: Some(chars.into_iter().collect()),
        train: SplitData::Tokens { ids: ids[..cut].to_vec() },
        val: SplitData::Tokens { ids: ids[cut..].to_vec() },
    })
}

impl Dataset {
    pub fn spec(&self) -> &TaskSpec {
        &self.spec
    }

    pub fn kind(&self) -> TaskKind {
        self.spec.kind
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn vocab(&self) -> Option<&str> {
        self.vocab.as_deref()
    }

    fn split(&self, split: Split) -> &SplitData {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
        }
    }

    pub fn len(&self, split: Split) -> usize {
        match self.split(split) {
            SplitData::Dense { y, .. } => y.len(),
            SplitData::Tokens { ids } => ids.len() - self.spec.context,
        }
    }

    /// Uniformly sampled example indices (with replacement).
    pub fn sample_indices(&self, split: Split, n: usize, rng: &mut SeededRng) -> Vec<usize> {
        let len = self.len(split);
        (0..n).map(|_| rng.below(len)).collect()
    }

    /// Up to `max` evenly spaced example indices, for evaluation.
    pub fn eval_indices(&self, split: Split, max: usize) -> Vec<usize> {
        let len = self.len(split);
        let n = len.min(max);
        (0..n).map(|i| i * len / n).collect()
    }

    /// Materializes the given examples as a batch split into `micro_count`
    /// consecutive micro-batches.
    pub fn batch<F: Scalar>(&self, split: Split, indices: &[usize], micro_count: usize) -> Result<Batch<F>> {
        let len = self.len(split);
        if let Some(&bad) = indices.iter().find(|&&i| i >= len) {
            return Err(out_of_range("example index", bad as f64, "[0, split length)"));
        }
        let mut x = Matrix::zeros(indices.len(), self.input_dim);
        let mut y = Vec::with_capacity(indices.len());
        match self.split(split) {
            SplitData::Dense { x: xs, y: ys } => {
                for (r, &i) in indices.iter().enumerate() {
                    for (o, &v) in x.row_mut(r).iter_mut().zip(xs.row(i)) {
                        *o = F::lit(v);
                    }
                    y.push(ys[i]);
                }
            }
            SplitData::Tokens { ids } => {
                let (k, v) = (self.spec.context, self.n_classes);
                for (r, &i) in indices.iter().enumerate() {
                    let row = x.row_mut(r);
                    for (pos, &id) in ids[i..i + k].iter().enumerate() {
                        row[pos * v + id as usize] = F::one();
                    }
                    y.push(ids[i + k] as usize);
                }
            }
        }
        Batch::new(x, Targets::Classes(y), micro_count)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("dataset serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let d: Dataset = serde_json::from_str(s).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if d.format_version != DATASET_FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "dataset format {} (expected {DATASET_FORMAT_VERSION})",
                d.format_version
            )));
        }
        Ok(d)
    }

    /// SHA-256 of the JSON encoding, hex.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_bytes() {
        let a = make_task("synthetic", 3).unwrap();
        let b = make_task("synthetic", 3).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert_ne!(a.fingerprint(), make_task("synthetic", 4).unwrap().fingerprint());
        assert_eq!(make_task("charlm", 1).unwrap().fingerprint(), make_task("charlm", 2).unwrap().fingerprint());
    }

    #[test]
    fn unknown_kind_is_an_error() {
        assert!(matches!(make_task("imagenet", 0), Err(Error::Unknown { .. })));
    }

    #[test]
    fn json_round_trip() {
        let d = make_task("synthetic", 9).unwrap();
        assert_eq!(Dataset::from_json(&d.to_json()).unwrap(), d);
    }

    #[test]
    fn charlm_layout() {
        let d = make_task("charlm", 0).unwrap();
        let v = d.n_classes();
        assert_eq!(d.vocab().unwrap().chars().count(), v);
        assert!(v > 30 && v < 100);
        assert_eq!(d.input_dim(), 4 * v);
        let total = d.len(Split::Train) + d.len(Split::Val) + 8;
        assert_eq!(total, CORPUS.chars().count());
        let b: Batch<f64> = d.batch(Split::Train, &[0, 5], 1).unwrap();
        for r in 0..2 {
            assert_eq!(b.inputs().row(r).iter().sum::<f64>(), 4.0);
        }
        // the target of example i is the first context char of example i + 4
        let b2: Batch<f64> = d.batch(Split::Train, &[4], 1).unwrap();
        let first = b2.inputs().row(0)[..v].iter().position(|&x| x == 1.0).unwrap();
        match b.targets() {
            Targets::Classes(y) => assert_eq!(y[0], first),
            _ => unreachable!(),
        }
    }

    #[test]
    fn label_noise_changes_labels() {
        let spec = TaskSpec {
            label_noise: 1.0,
            ..TaskSpec::default()
        };
        let noisy = spec.build(5).unwrap();
        let clean = TaskSpec {
            label_noise: 0.0,
            ..TaskSpec::default()
        }
        .build(5)
        .unwrap();
        let idx: Vec<usize> = (0..100).collect();
        let a: Batch<f64> = noisy.batch(Split::Train, &idx, 1).unwrap();
        let b: Batch<f64> = clean.batch(Split::Train, &idx, 1).unwrap();
        assert!(a.inputs() != b.inputs() || a.targets() != b.targets());
        assert!(TaskSpec { label_noise: 1.5, ..TaskSpec::default() }.validate().is_err());
    }

    #[test]
    fn eval_indices_are_spread() {
        let d = make_task("synthetic", 0).unwrap();
        let idx = d.eval_indices(Split::Val, 100);
        assert_eq!(idx.len(), 100);
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(d.eval_indices(Split::Val, 10_000).len(), 512);
        assert!(d.batch::<f64>(Split::Val, &[512], 1).is_err());
    }
}
