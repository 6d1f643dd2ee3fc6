//! Datasets: synthetic Gaussian blobs, CSV ingest, train/test splitting, and
//! the client partitioning schemes used to control heterogeneity.

use crate::numerics::{DenseMatrix, SeededRng, StreamKey};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("label column {0:?} not found in header")]
    MissingLabelColumn(String),
    #[error("row {row}: bad label {value:?} (labels must be non-negative integers)")]
    BadLabel { row: usize, value: String },
    #[error("row {row}, column {col:?}: cannot parse {value:?} as a number")]
    BadField {
        row: usize,
        col: String,
        value: String,
    },
    #[error("dataset has no rows")]
    Empty,
    #[error("invalid shape: {0}")]
    BadShape(String),
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("invalid partition: {0}")]
    BadPartition(String),
    #[error("test fraction must lie strictly between 0 and 1, got {0}")]
    BadFraction(f64),
}

/// In-memory labeled dataset; one feature row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: DenseMatrix,
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

impl Dataset {
    pub fn new(features: DenseMatrix, labels: Vec<usize>, n_classes: usize) -> Self {
        assert_eq!(features.n_rows(), labels.len());
        assert!(labels.iter().all(|&c| c < n_classes));
        Self {
            features,
            labels,
            n_classes,
        }
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn dim(&self) -> usize {
        self.features.n_cols()
    }

    /// New dataset holding the given rows, in the given order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let mut features = DenseMatrix::zeros(indices.len(), self.dim());
        let mut labels = Vec::with_capacity(indices.len());
        for (r, &i) in indices.iter().enumerate() {
            for j in 0..self.dim() {
                features[(r, j)] = self.features[(i, j)];
            }
            labels.push(self.labels[i]);
        }
        Dataset::new(features, labels, self.n_classes)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.n_classes];
        for &c in &self.labels {
            counts[c] += 1;
        }
        counts
    }
}

/// Gaussian blobs with unit covariance around class centers of norm
/// `separation`. When the number of classes does not exceed the feature
/// dimension the center directions are orthonormal, so every pair of centers
/// is separation * sqrt(2) apart. Labels cycle 0, 1, ..., C-1, 0, ... so the
/// class balance is even up to rounding.
pub fn generate_synthetic(
    n_samples: usize,
    dim: usize,
    n_classes: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset, DataError> {
    if n_samples == 0 || dim == 0 {
        return Err(DataError::BadShape(format!(
            "n_samples={n_samples}, dim={dim}"
        )));
    }
    if n_classes < 2 {
        return Err(DataError::BadShape(format!("n_classes={n_classes}")));
    }
    if !(separation > 0.0) || !separation.is_finite() {
        return Err(DataError::BadShape(format!("separation={separation}")));
    }
    let mut rng = SeededRng::from_key(seed, StreamKey::Synthetic);

    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(n_classes);
    for _ in 0..n_classes {
        let dir = loop {
            let mut v: Vec<f64> = (0..dim).map(|_| rng.next_normal()).collect();
            if n_classes <= dim {
                for prev in &dirs {
                    let proj: f64 = v.iter().zip(prev.iter()).map(|(a, b)| a * b).sum();
                    for (vk, pk) in v.iter_mut().zip(prev.iter()) {
                        *vk -= proj * pk;
                    }
                }
            }
            let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-6 {
                for x in &mut v {
                    *x /= norm;
                }
                break v;
            }
        };
        dirs.push(dir);
    }
    let centers: Vec<Vec<f64>> = dirs
        .iter()
        .map(|u| u.iter().map(|x| separation * x).collect())
        .collect();

    let mut features = DenseMatrix::zeros(n_samples, dim);
    let mut labels = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let c = i % n_classes;
        for j in 0..dim {
            features[(i, j)] = centers[c][j] + rng.next_normal();
        }
        labels.push(c);
    }
    Ok(Dataset::new(features, labels, n_classes))
}

/// Loads a headered CSV with one labeled sample per row. The named label
/// column must hold non-negative integers; every other column is a feature
/// and is min-max rescaled to [0, 1] (constant columns become 0).
pub fn load_csv(path: &Path, label_column: &str) -> Result<Dataset, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| DataError::MissingLabelColumn(label_column.to_string()))?;
    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != label_idx)
        .map(|(_, h)| h.to_string())
        .collect();

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        let row = row_idx + 1;
        let mut feats = Vec::with_capacity(feature_names.len());
        for (i, field) in record.iter().enumerate() {
            if i == label_idx {
                let value: f64 = field.trim().parse().map_err(|_| DataError::BadLabel {
                    row,
                    value: field.to_string(),
                })?;
                if value < 0.0 || value.fract() != 0.0 || !value.is_finite() {
                    return Err(DataError::BadLabel {
                        row,
                        value: field.to_string(),
                    });
                }
                labels.push(value as usize);
            } else {
                let col = headers.get(i).unwrap_or("").to_string();
                let value: f64 = field.trim().parse().map_err(|_| DataError::BadField {
                    row,
                    col: col.clone(),
                    value: field.to_string(),
                })?;
                if !value.is_finite() {
                    return Err(DataError::BadField {
                        row,
                        col,
                        value: field.to_string(),
                    });
                }
                feats.push(value);
            }
        }
        rows.push(feats);
    }
    if rows.is_empty() {
        return Err(DataError::Empty);
    }

    let dim = rows[0].len();
    if dim == 0 {
        return Err(DataError::BadShape("no feature columns".into()));
    }
    let mut features = DenseMatrix::zeros(rows.len(), dim);
    for j in 0..dim {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for row in &rows {
            lo = lo.min(row[j]);
            hi = hi.max(row[j]);
        }
        let span = hi - lo;
        for (i, row) in rows.iter().enumerate() {
            features[(i, j)] = if span > 0.0 {
                (row[j] - lo) / span
            } else {
                0.0
            };
        }
    }
    let n_classes = labels.iter().max().copied().unwrap_or(0) + 1;
    Ok(Dataset::new(features, labels, n_classes))
}

/// Writes a dataset back out in the shape `load_csv` expects. Feature columns
/// are named f0, f1, ...; the label column is named by the caller.
pub fn write_csv(dataset: &Dataset, path: &Path, label_column: &str) -> Result<(), DataError> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (0..dataset.dim()).map(|j| format!("f{j}")).collect();
    header.push(label_column.to_string());
    writer.write_record(&header)?;
    for i in 0..dataset.n_samples() {
        let mut record: Vec<String> = dataset
            .features
            .row(i)
            .iter()
            .map(|v| format!("{v}"))
            .collect();
        record.push(dataset.labels[i].to_string());
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

/// How samples are spread across clients.
#[derive(Debug, Clone, PartialEq)]
pub enum PartitionKind {
    /// Uniform shuffle into near-equal shards.
    Iid,
    /// Equal label mix but Dirichlet(alpha)-skewed shard sizes.
    QuantitySkew { alpha: f64 },
    /// Per-class Dirichlet(alpha) split over clients; small alpha
    /// concentrates each class on few clients.
    LabelSkewDirichlet { alpha: f64 },
    /// Each client sees exactly k distinct labels, assigned round-robin.
    LabelSkewCount { k: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionSpec {
    pub kind: PartitionKind,
    pub n_clients: usize,
}

const PARTITION_RETRIES: usize = 100;

/// Sizes proportional to `weights`, summing exactly to `total`
/// (largest-remainder rounding).
fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut sizes: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().take(total - assigned) {
        sizes[i] += 1;
    }
    sizes
}

fn dirichlet(rng: &mut SeededRng, alpha: f64, k: usize) -> Vec<f64> {
    let mut draws: Vec<f64> = (0..k).map(|_| rng.next_gamma(alpha)).collect();
    let sum: f64 = draws.iter().sum();
    if sum > 0.0 {
        for d in &mut draws {
            *d /= sum;
        }
    } else {
        // All gamma draws underflowed to zero (tiny alpha); fall back to a
        // single uniformly chosen winner, which is the alpha -> 0 limit.
        let winner = rng.next_index(k);
        for (i, d) in draws.iter_mut().enumerate() {
            *d = if i == winner { 1.0 } else { 0.0 };
        }
    }
    draws
}

fn chunk_by_sizes(indices: &[usize], sizes: &[usize]) -> Vec<Vec<usize>> {
    let mut shards = Vec::with_capacity(sizes.len());
    let mut offset = 0;
    for &s in sizes {
        shards.push(indices[offset..offset + s].to_vec());
        offset += s;
    }
    shards
}

/// Assigns sample indices to clients. Every sample lands in exactly one
/// shard and every shard is non-empty.
pub fn partition_indices(
    labels: &[usize],
    n_classes: usize,
    spec: &PartitionSpec,
    seed: u64,
) -> Result<Vec<Vec<usize>>, DataError> {
    let n = labels.len();
    let k = spec.n_clients;
    if k == 0 {
        return Err(DataError::BadPartition("need at least one client".into()));
    }
    if n < k {
        return Err(DataError::TooFewSamples { needed: k, got: n });
    }
    let mut rng = SeededRng::from_key(seed, StreamKey::Partition);

    let mut shards = match spec.kind {
        PartitionKind::Iid => {
            let mut indices: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut indices);
            let base = n / k;
            let extra = n % k;
            let sizes: Vec<usize> = (0..k).map(|i| base + usize::from(i < extra)).collect();
            chunk_by_sizes(&indices, &sizes)
        }
        PartitionKind::QuantitySkew { alpha } => {
            if !(alpha > 0.0) {
                return Err(DataError::BadPartition(format!("alpha={alpha}")));
            }
            let mut attempt = 0;
            loop {
                let weights = dirichlet(&mut rng, alpha, k);
                let sizes = apportion(n, &weights);
                if sizes.iter().all(|&s| s > 0) {
                    let mut indices: Vec<usize> = (0..n).collect();
                    rng.shuffle(&mut indices);
                    break chunk_by_sizes(&indices, &sizes);
                }
                attempt += 1;
                if attempt >= PARTITION_RETRIES {
                    return Err(DataError::BadPartition(format!(
                        "quantity skew left an empty shard after {PARTITION_RETRIES} draws \
                         (alpha={alpha}, n={n}, clients={k})"
                    )));
                }
            }
        }
        PartitionKind::LabelSkewDirichlet { alpha } => {
            if !(alpha > 0.0) {
                return Err(DataError::BadPartition(format!("alpha={alpha}")));
            }
            let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
            for (i, &c) in labels.iter().enumerate() {
                if c >= n_classes {
                    return Err(DataError::BadPartition(format!(
                        "label {c} out of range for {n_classes} classes"
                    )));
                }
                by_class[c].push(i);
            }
            let mut attempt = 0;
            loop {
                let mut shards: Vec<Vec<usize>> = vec![Vec::new(); k];
                for class_indices in &by_class {
                    let mut pool = class_indices.clone();
                    rng.shuffle(&mut pool);
                    let weights = dirichlet(&mut rng, alpha, k);
                    let sizes = apportion(pool.len(), &weights);
                    for (shard, piece) in shards.iter_mut().zip(chunk_by_sizes(&pool, &sizes)) {
                        shard.extend(piece);
                    }
                }
                if shards.iter().all(|s| !s.is_empty()) {
                    break shards;
                }
                attempt += 1;
                if attempt >= PARTITION_RETRIES {
                    return Err(DataError::BadPartition(format!(
                        "label skew left an empty shard after {PARTITION_RETRIES} draws \
                         (alpha={alpha}, n={n}, clients={k})"
                    )));
                }
            }
        }
        PartitionKind::LabelSkewCount { k: labels_per } => {
            if labels_per == 0 || labels_per > n_classes {
                return Err(DataError::BadPartition(format!(
                    "labels per client must lie in 1..={n_classes}, got {labels_per}"
                )));
            }
            if k * labels_per < n_classes {
                return Err(DataError::BadPartition(format!(
                    "{k} clients with {labels_per} labels each cannot cover {n_classes} classes"
                )));
            }
            // Round-robin label assignment: client i holds labels
            // (i*labels_per + j) mod n_classes for j < labels_per.
            let mut holders: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
            for client in 0..k {
                for j in 0..labels_per {
                    let c = (client * labels_per + j) % n_classes;
                    if !holders[c].contains(&client) {
                        holders[c].push(client);
                    }
                }
            }
            let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
            for (i, &c) in labels.iter().enumerate() {
                if c >= n_classes {
                    return Err(DataError::BadPartition(format!(
                        "label {c} out of range for {n_classes} classes"
                    )));
                }
                by_class[c].push(i);
            }
            let mut shards: Vec<Vec<usize>> = vec![Vec::new(); k];
            for (class_indices, class_holders) in by_class.iter().zip(holders.iter()) {
                let mut pool = class_indices.clone();
                rng.shuffle(&mut pool);
                let h = class_holders.len();
                let base = pool.len() / h;
                let extra = pool.len() % h;
                let sizes: Vec<usize> = (0..h).map(|i| base + usize::from(i < extra)).collect();
                for (&client, piece) in class_holders.iter().zip(chunk_by_sizes(&pool, &sizes)) {
                    shards[client].extend(piece);
                }
            }
            if let Some(empty) = shards.iter().position(|s| s.is_empty()) {
                return Err(DataError::BadPartition(format!(
                    "client {empty} received no samples; too few samples per class"
                )));
            }
            shards
        }
    };

    for shard in &mut shards {
        shard.sort_unstable();
    }
    Ok(shards)
}

/// Splits a dataset into per-client shards.
pub fn partition(
    dataset: &Dataset,
    spec: &PartitionSpec,
    seed: u64,
) -> Result<Vec<Dataset>, DataError> {
    let shards = partition_indices(&dataset.labels, dataset.n_classes, spec, seed)?;
    Ok(shards.iter().map(|idx| dataset.select(idx)).collect())
}

/// Deterministic shuffled split into train and test parts; both sides keep
/// the original row order and are guaranteed non-empty.
pub fn split_train_test(
    dataset: &Dataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset), DataError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(DataError::BadFraction(test_fraction));
    }
    let n = dataset.n_samples();
    let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1, n.saturating_sub(1));
    if n < 2 {
        return Err(DataError::TooFewSamples { needed: 2, got: n });
    }
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = SeededRng::from_key(seed, StreamKey::TestSplit);
    rng.shuffle(&mut indices);
    let mut test_idx = indices[..n_test].to_vec();
    let mut train_idx = indices[n_test..].to_vec();
    test_idx.sort_unstable();
    train_idx.sort_unstable();
    Ok((dataset.select(&train_idx), dataset.select(&test_idx)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_labels(n: usize, n_classes: usize) -> Vec<usize> {
        (0..n).map(|i| i % n_classes).collect()
    }

    #[test]
    fn synthetic_shapes_and_balance() {
        let d = generate_synthetic(100, 5, 3, 4.0, 7).unwrap();
        assert_eq!(d.n_samples(), 100);
        assert_eq!(d.dim(), 5);
        assert_eq!(d.n_classes, 3);
        let counts = d.class_counts();
        assert_eq!(counts, vec![34, 33, 33]);
    }

    #[test]
    fn synthetic_is_deterministic_per_seed() {
        let a = generate_synthetic(50, 4, 2, 3.0, 11).unwrap();
        let b = generate_synthetic(50, 4, 2, 3.0, 11).unwrap();
        let c = generate_synthetic(50, 4, 2, 3.0, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.features, c.features);
    }

    #[test]
    fn synthetic_centers_are_separated() {
        // With orthonormal center directions the class means should sit about
        // separation * sqrt(2) apart; noise shrinks as n grows.
        let sep = 6.0;
        let d = generate_synthetic(4000, 8, 2, sep, 3).unwrap();
        let mut means = vec![vec![0.0; 8]; 2];
        let counts = d.class_counts();
        for i in 0..d.n_samples() {
            let c = d.labels[i];
            for (j, m) in means[c].iter_mut().enumerate() {
                *m += d.features[(i, j)] / counts[c] as f64;
            }
        }
        let dist: f64 = (0..8)
            .map(|j| (means[0][j] - means[1][j]).powi(2))
            .sum::<f64>()
            .sqrt();
        let expected = sep * 2.0_f64.sqrt();
        assert!(
            (dist - expected).abs() < 0.3,
            "center distance {dist}, expected near {expected}"
        );
    }

    #[test]
    fn synthetic_rejects_bad_shapes() {
        assert!(generate_synthetic(0, 3, 2, 1.0, 0).is_err());
        assert!(generate_synthetic(10, 0, 2, 1.0, 0).is_err());
        assert!(generate_synthetic(10, 3, 1, 1.0, 0).is_err());
        assert!(generate_synthetic(10, 3, 2, 0.0, 0).is_err());
    }

    #[test]
    fn iid_partition_is_a_set_partition() {
        let labels = toy_labels(103, 4);
        let spec = PartitionSpec {
            kind: PartitionKind::Iid,
            n_clients: 5,
        };
        let shards = partition_indices(&labels, 4, &spec, 9).unwrap();
        assert_eq!(shards.len(), 5);
        let mut seen = vec![false; labels.len()];
        for shard in &shards {
            assert!(!shard.is_empty());
            for &i in shard {
                assert!(!seen[i], "index {i} assigned twice");
                seen[i] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
        let sizes: Vec<usize> = shards.iter().map(|s| s.len()).collect();
        assert_eq!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap(), 1);
    }

    #[test]
    fn quantity_skew_preserves_samples_and_skews_sizes() {
        let labels = toy_labels(1000, 2);
        let spec = PartitionSpec {
            kind: PartitionKind::QuantitySkew { alpha: 0.3 },
            n_clients: 5,
        };
        let shards = partition_indices(&labels, 2, &spec, 21).unwrap();
        let total: usize = shards.iter().map(|s| s.len()).sum();
        assert_eq!(total, 1000);
        assert!(shards.iter().all(|s| !s.is_empty()));
        let sizes: Vec<usize> = shards.iter().map(|s| s.len()).collect();
        // Dirichlet(0.3) over 5 clients is very unlikely to be near-uniform.
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() > 50);
    }

    #[test]
    fn label_skew_count_gives_exactly_k_labels() {
        let labels = toy_labels(400, 4);
        let spec = PartitionSpec {
            kind: PartitionKind::LabelSkewCount { k: 2 },
            n_clients: 4,
        };
        let shards = partition_indices(&labels, 4, &spec, 5).unwrap();
        for (client, shard) in shards.iter().enumerate() {
            let mut classes: Vec<usize> = shard.iter().map(|&i| labels[i]).collect();
            classes.sort_unstable();
            classes.dedup();
            assert_eq!(classes.len(), 2, "client {client} saw labels {classes:?}");
            let expected: Vec<usize> = vec![(client * 2) % 4, (client * 2 + 1) % 4];
            assert_eq!(classes, expected);
        }
        let total: usize = shards.iter().map(|s| s.len()).sum();
        assert_eq!(total, 400);
    }

    #[test]
    fn label_skew_count_validates_coverage() {
        let labels = toy_labels(100, 10);
        let spec = PartitionSpec {
            kind: PartitionKind::LabelSkewCount { k: 2 },
            n_clients: 3,
        };
        // 3 clients * 2 labels < 10 classes.
        assert!(partition_indices(&labels, 10, &spec, 0).is_err());

        let spec = PartitionSpec {
            kind: PartitionKind::LabelSkewCount { k: 11 },
            n_clients: 3,
        };
        assert!(partition_indices(&labels, 10, &spec, 0).is_err());
    }

    #[test]
    fn label_skew_dirichlet_partitions_everything() {
        let labels = toy_labels(600, 3);
        let spec = PartitionSpec {
            kind: PartitionKind::LabelSkewDirichlet { alpha: 0.1 },
            n_clients: 5,
        };
        let shards = partition_indices(&labels, 3, &spec, 13).unwrap();
        let total: usize = shards.iter().map(|s| s.len()).sum();
        assert_eq!(total, 600);
        assert!(shards.iter().all(|s| !s.is_empty()));
    }

    #[test]
    fn label_skew_dirichlet_small_alpha_concentrates_classes() {
        // Mean over classes of the largest single-client share.
        let concentration = |alpha: f64| {
            let labels = toy_labels(900, 3);
            let spec = PartitionSpec {
                kind: PartitionKind::LabelSkewDirichlet { alpha },
                n_clients: 3,
            };
            let shards = partition_indices(&labels, 3, &spec, 2).unwrap();
            let mut total = 0.0;
            for class in 0..3 {
                let max = shards
                    .iter()
                    .map(|s| s.iter().filter(|&&i| labels[i] == class).count())
                    .max()
                    .unwrap();
                total += max as f64 / 300.0;
            }
            total / 3.0
        };
        let skewed = concentration(0.05);
        let near_uniform = concentration(100.0);
        assert!(
            skewed > near_uniform + 0.2,
            "alpha=0.05 gave {skewed}, alpha=100 gave {near_uniform}"
        );
        assert!(near_uniform < 0.45);
    }

    #[test]
    fn partition_rejects_more_clients_than_samples() {
        let labels = toy_labels(3, 2);
        let spec = PartitionSpec {
            kind: PartitionKind::Iid,
            n_clients: 5,
        };
        assert!(matches!(
            partition_indices(&labels, 2, &spec, 0),
            Err(DataError::TooFewSamples { .. })
        ));
    }

    #[test]
    fn split_is_disjoint_and_sized() {
        let d = generate_synthetic(100, 3, 2, 2.0, 1).unwrap();
        let (train, test) = split_train_test(&d, 0.2, 1).unwrap();
        assert_eq!(test.n_samples(), 20);
        assert_eq!(train.n_samples(), 80);
        assert_eq!(train.n_classes, 2);
    }

    #[test]
    fn split_rejects_degenerate_fractions() {
        let d = generate_synthetic(10, 3, 2, 2.0, 1).unwrap();
        assert!(split_train_test(&d, 0.0, 1).is_err());
        assert!(split_train_test(&d, 1.0, 1).is_err());
        assert!(split_train_test(&d, -0.5, 1).is_err());
    }

    #[test]
    fn csv_round_trip_is_stable_after_one_pass() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.csv");
        let p2 = dir.path().join("b.csv");
        let d = generate_synthetic(40, 3, 2, 2.0, 8).unwrap();
        write_csv(&d, &p1, "label").unwrap();
        let once = load_csv(&p1, "label").unwrap();
        write_csv(&once, &p2, "label").unwrap();
        let twice = load_csv(&p2, "label").unwrap();
        // Loading normalizes features, so a second round trip is exact.
        assert_eq!(once, twice);
        assert_eq!(once.labels, d.labels);
    }

    #[test]
    fn csv_normalizes_to_unit_interval() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        std::fs::write(&path, "x,y,label\n-2.0,7.0,0\n2.0,7.0,1\n0.0,7.0,0\n").unwrap();
        let d = load_csv(&path, "label").unwrap();
        assert_eq!(d.features[(0, 0)], 0.0);
        assert_eq!(d.features[(1, 0)], 1.0);
        assert_eq!(d.features[(2, 0)], 0.5);
        // Constant column collapses to zero.
        for i in 0..3 {
            assert_eq!(d.features[(i, 1)], 0.0);
        }
        assert_eq!(d.n_classes, 2);
    }

    #[test]
    fn csv_errors_carry_row_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        std::fs::write(&path, "x,label\n1.0,0\noops,1\n").unwrap();
        match load_csv(&path, "label") {
            Err(DataError::BadField { row, .. }) => assert_eq!(row, 2),
            other => panic!("expected BadField, got {other:?}"),
        }

        std::fs::write(&path, "x,label\n1.0,-1\n").unwrap();
        match load_csv(&path, "label") {
            Err(DataError::BadLabel { row, .. }) => assert_eq!(row, 1),
            other => panic!("expected BadLabel, got {other:?}"),
        }
    }

    #[test]
    fn csv_missing_label_column() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        std::fs::write(&path, "x,y\n1.0,2.0\n").unwrap();
        assert!(matches!(
            load_csv(&path, "label"),
            Err(DataError::MissingLabelColumn(_))
        ));
    }
}
