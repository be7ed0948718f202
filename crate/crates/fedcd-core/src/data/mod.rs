//! Synthetic dataset generation and non-IID device shards.
//!
//! A [`GlobalDataset`] holds per-class pools of feature vectors, either
//! generated as Gaussian class blobs or imported from a CSV file. Each
//! device gets a [`DeviceShard`] whose label mix follows its
//! [`ArchetypeSpec`]: a hierarchical recipe (a focus label taking a
//! `bias` fraction of the data, the rest spread over a meta-archetype)
//! or a hypergeometric recipe (label mass proportional to the pmf of
//! draws-without-replacement success counts).

pub mod hypergeom;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::LabeledBatch;
use crate::rng;

/// Recipe for one device's label distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ArchetypeSpec {
    Hierarchical {
        meta_labels: Vec<usize>,
        focus_label: usize,
        bias: f64,
    },
    Hypergeometric {
        population: u64,
        successes: u64,
        draws: u64,
    },
}

impl ArchetypeSpec {
    pub fn validate(&self, classes: usize) -> Result<()> {
        match self {
            ArchetypeSpec::Hierarchical { meta_labels, focus_label, bias } => {
                if meta_labels.is_empty() {
                    return Err(Error::InvalidArchetype("meta_labels is empty".into()));
                }
                if meta_labels.iter().any(|&l| l >= classes) {
                    return Err(Error::InvalidArchetype(format!(
                        "meta label out of range for {classes} classes"
                    )));
                }
                let mut sorted = meta_labels.clone();
                sorted.sort_unstable();
                sorted.dedup();
                if sorted.len() != meta_labels.len() {
                    return Err(Error::InvalidArchetype("duplicate meta labels".into()));
                }
                if !meta_labels.contains(focus_label) {
                    return Err(Error::InvalidArchetype(format!(
                        "focus label {focus_label} not in meta archetype"
                    )));
                }
                if !(0.0..=1.0).contains(bias) {
                    return Err(Error::InvalidArchetype(format!("bias {bias} outside [0,1]")));
                }
                Ok(())
            }
            ArchetypeSpec::Hypergeometric { population, successes, draws } => {
                if successes > population || draws > population {
                    return Err(Error::InvalidArchetype(format!(
                        "need successes <= population and draws <= population, \
                         got K={successes}, n={draws}, N={population}"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Short stable tag used in metrics rows.
    pub fn tag(&self) -> String {
        match self {
            ArchetypeSpec::Hierarchical { focus_label, .. } => format!("hier{focus_label}"),
            ArchetypeSpec::Hypergeometric { successes, .. } => format!("hyper{successes}"),
        }
    }
}

/// Per-class pools of feature vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct GlobalDataset {
    feature_dim: usize,
    pools: Vec<Vec<f64>>,
}

impl GlobalDataset {
    /// Gaussian class blobs: class means drawn from `spread * N(0, I)`,
    /// examples from `mean + N(0, I)`.
    pub fn synthetic(
        classes: usize,
        feature_dim: usize,
        per_class: usize,
        spread: f64,
        seed: u64,
    ) -> Result<Self> {
        if classes < 2 {
            return Err(Error::InvalidConfig("need at least 2 classes".into()));
        }
        if feature_dim < 2 {
            return Err(Error::InvalidConfig("need feature_dim >= 2".into()));
        }
        if per_class == 0 {
            return Err(Error::InvalidConfig("per_class must be >= 1".into()));
        }
        if !spread.is_finite() || spread < 0.0 {
            return Err(Error::InvalidConfig("spread must be finite and >= 0".into()));
        }

        let mut means_rng = rng::stream(seed, "data-means", &[]);
        let means: Vec<Vec<f64>> = (0..classes)
            .map(|_| {
                (0..feature_dim)
                    .map(|_| spread * sample_normal(&mut means_rng))
                    .collect()
            })
            .collect();

        let mut pools = Vec::with_capacity(classes);
        for (c, mean) in means.iter().enumerate() {
            let mut pool_rng = rng::stream(seed, "data-pool", &[c as u64]);
            let mut pool = Vec::with_capacity(per_class * feature_dim);
            for _ in 0..per_class {
                for &m in mean {
                    pool.push(m + sample_normal(&mut pool_rng));
                }
            }
            pools.push(pool);
        }
        Ok(Self { feature_dim, pools })
    }

    /// Import from a plain-text file, one example per comma-separated
    /// line, the integer label in the last column.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut feature_dim = 0usize;
        let mut rows: Vec<(Vec<f64>, usize)> = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            let fields: Vec<&str> = trimmed.split(',').collect();
            if fields.len() < 2 {
                return Err(Error::DatasetParse {
                    line: line_no,
                    reason: "need at least one feature and a label".into(),
                });
            }
            if feature_dim == 0 {
                feature_dim = fields.len() - 1;
            } else if fields.len() - 1 != feature_dim {
                return Err(Error::DatasetParse {
                    line: line_no,
                    reason: format!("expected {} features, found {}", feature_dim, fields.len() - 1),
                });
            }
            let mut features = Vec::with_capacity(feature_dim);
            for f in &fields[..feature_dim] {
                let v: f64 = f.trim().parse().map_err(|_| Error::DatasetParse {
                    line: line_no,
                    reason: format!("bad feature value `{f}`"),
                })?;
                if !v.is_finite() {
                    return Err(Error::DatasetParse {
                        line: line_no,
                        reason: "non-finite feature value".into(),
                    });
                }
                features.push(v);
            }
            let label: usize = fields[feature_dim].trim().parse().map_err(|_| Error::DatasetParse {
                line: line_no,
                reason: format!("bad label `{}`", fields[feature_dim]),
            })?;
            rows.push((features, label));
        }
        if rows.is_empty() {
            return Err(Error::DatasetParse { line: 0, reason: "no data rows".into() });
        }
        let classes = rows.iter().map(|(_, l)| *l).max().expect("non-empty") + 1;
        let mut pools = vec![Vec::new(); classes];
        for (features, label) in rows {
            pools[label].extend(features);
        }
        Ok(Self { feature_dim, pools })
    }

    pub fn class_count(&self) -> usize {
        self.pools.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn pool_len(&self, class: usize) -> usize {
        self.pools[class].len() / self.feature_dim
    }

    fn pool_row(&self, class: usize, i: usize) -> &[f64] {
        &self.pools[class][i * self.feature_dim..(i + 1) * self.feature_dim]
    }
}

fn sample_normal<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// One device's local data plus its archetype.
#[derive(Clone, Debug, PartialEq)]
pub struct DeviceShard {
    pub device_id: usize,
    pub archetype: ArchetypeSpec,
    pub train: LabeledBatch,
    pub val: LabeledBatch,
    pub test: LabeledBatch,
}

impl DeviceShard {
    /// Label histogram over train + val + test.
    pub fn label_counts(&self, classes: usize) -> Vec<usize> {
        let mut counts = vec![0usize; classes];
        for batch in [&self.train, &self.val, &self.test] {
            for &l in batch.labels() {
                counts[l] += 1;
            }
        }
        counts
    }

    pub fn total_examples(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }
}

/// Probability of each label under the archetype recipe.
///
/// Hierarchical: `bias` on the focus label, the remainder split evenly
/// over the other meta labels, zero elsewhere. Hypergeometric: label `j`
/// carries `pmf(j)`, with mass at `k >= classes` folded into the last
/// label, renormalized.
pub fn archetype_label_weights(spec: &ArchetypeSpec, classes: usize) -> Result<Vec<f64>> {
    spec.validate(classes)?;
    let mut weights = vec![0.0; classes];
    match spec {
        ArchetypeSpec::Hierarchical { meta_labels, focus_label, bias } => {
            if meta_labels.len() == 1 {
                weights[*focus_label] = 1.0;
            } else {
                let rest = (1.0 - bias) / (meta_labels.len() - 1) as f64;
                for &l in meta_labels {
                    weights[l] = if l == *focus_label { *bias } else { rest };
                }
            }
        }
        ArchetypeSpec::Hypergeometric { population, successes, draws } => {
            for k in hypergeom::support(*population, *successes, *draws) {
                let label = (k as usize).min(classes - 1);
                weights[label] += hypergeom::pmf(*population, *successes, *draws, k);
            }
            let total: f64 = weights.iter().sum();
            weights.iter_mut().for_each(|w| *w /= total);
        }
    }
    Ok(weights)
}

/// Largest-remainder apportionment of `total` items over `weights`.
/// Counts sum to `total` exactly; remainder ties go to the lowest index.
pub fn apportion_counts(weights: &[f64], total: usize) -> Vec<usize> {
    let weight_sum: f64 = weights.iter().sum();
    if weight_sum <= 0.0 || total == 0 {
        return vec![0; weights.len()];
    }
    let mut counts = Vec::with_capacity(weights.len());
    let mut remainders = Vec::with_capacity(weights.len());
    let mut assigned = 0usize;
    for (i, &w) in weights.iter().enumerate() {
        let quota = w / weight_sum * total as f64;
        let floor = quota.floor() as usize;
        counts.push(floor);
        remainders.push((i, quota - floor as f64));
        assigned += floor;
    }
    remainders.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    for &(i, _) in remainders.iter().take(total - assigned) {
        counts[i] += 1;
    }
    counts
}

/// Per-label split sizes for one shard: validation and test counts are
/// rounded shares, training takes the rest.
fn split_counts(n: usize, val_frac: f64, test_frac: f64) -> (usize, usize, usize) {
    let val = (val_frac * n as f64).round() as usize;
    let test = (test_frac * n as f64).round() as usize;
    let train = n.saturating_sub(val + test);
    (train, val, test)
}

/// Carve one shard per archetype spec out of the shared pools.
///
/// Label counts follow `archetype_label_weights` with largest-remainder
/// rounding, draws are without replacement within a shard, and the
/// train/val/test split is stratified by label. Per-device streams are
/// derived from `(seed, device_id)`, so shards are independent of
/// construction order.
pub fn build_device_shards(
    dataset: &GlobalDataset,
    specs: &[ArchetypeSpec],
    samples_per_device: usize,
    val_frac: f64,
    test_frac: f64,
    seed: u64,
) -> Result<Vec<DeviceShard>> {
    if samples_per_device == 0 {
        return Err(Error::InvalidConfig("samples_per_device must be >= 1".into()));
    }
    for (name, f) in [("val_frac", val_frac), ("test_frac", test_frac)] {
        if !f.is_finite() || f <= 0.0 || f >= 1.0 {
            return Err(Error::InvalidConfig(format!("{name} must lie in (0,1), got {f}")));
        }
    }
    if val_frac + test_frac >= 1.0 {
        return Err(Error::InvalidConfig("val_frac + test_frac must be < 1".into()));
    }

    let classes = dataset.class_count();
    let dim = dataset.feature_dim();
    let mut shards = Vec::with_capacity(specs.len());
    for (device_id, spec) in specs.iter().enumerate() {
        let weights = archetype_label_weights(spec, classes)?;
        let counts = apportion_counts(&weights, samples_per_device);
        let mut device_rng = rng::stream(seed, "device-shard", &[device_id as u64]);

        let mut train = (Vec::new(), Vec::new());
        let mut val = (Vec::new(), Vec::new());
        let mut test = (Vec::new(), Vec::new());
        for (label, &count) in counts.iter().enumerate() {
            if count == 0 {
                continue;
            }
            let available = dataset.pool_len(label);
            if count > available {
                return Err(Error::PoolExhausted { label, requested: count, available });
            }
            let picks = rand::seq::index::sample(&mut device_rng, available, count).into_vec();
            let (n_train, n_val, _) = split_counts(count, val_frac, test_frac);
            for (pos, &pool_idx) in picks.iter().enumerate() {
                let dest = if pos < n_train {
                    &mut train
                } else if pos < n_train + n_val {
                    &mut val
                } else {
                    &mut test
                };
                dest.0.extend_from_slice(dataset.pool_row(label, pool_idx));
                dest.1.push(label);
            }
        }

        for (split, rows) in [("train", &train), ("val", &val), ("test", &test)] {
            if rows.1.is_empty() {
                return Err(Error::EmptyShardSplit { device: device_id, split });
            }
        }
        shards.push(DeviceShard {
            device_id,
            archetype: spec.clone(),
            train: LabeledBatch::new(train.0, dim, train.1)?,
            val: LabeledBatch::new(val.0, dim, val.1)?,
            test: LabeledBatch::new(test.0, dim, test.1)?,
        });
    }
    Ok(shards)
}

/// Order-sensitive digest of a shard set, for detecting partition drift
/// between runs that must share data.
pub fn shards_digest(shards: &[DeviceShard]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |v: u64| {
        h ^= v;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    };
    for shard in shards {
        eat(shard.device_id as u64);
        for b in shard.archetype.tag().into_bytes() {
            eat(u64::from(b));
        }
        for batch in [&shard.train, &shard.val, &shard.test] {
            eat(batch.len() as u64);
            eat(batch.feature_dim() as u64);
            for &l in batch.labels() {
                eat(l as u64);
            }
            for i in 0..batch.len() {
                for &x in batch.row(i) {
                    eat(x.to_bits());
                }
            }
        }
    }
    h
}
