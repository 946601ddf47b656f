//! Datasets: the synthetic spirals benchmark, CSV load/save, and seeded
//! train/test splits.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{BatchVec, Rng};

/// A labeled dataset with a disjoint, covering train/test split.
/// Features are stored feature-major: `features[f][i]` is feature `f` of
/// sample `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

impl Dataset {
    pub fn num_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn num_features(&self) -> usize {
        self.features.len()
    }

    /// Assembles one minibatch as feature rows plus labels.
    pub fn batch(&self, indices: &[usize]) -> (Vec<BatchVec>, Vec<usize>) {
        let rows = self
            .features
            .iter()
            .map(|row| BatchVec::from_vec(indices.iter().map(|&i| row[i]).collect()))
            .collect();
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        (rows, labels)
    }

    pub fn train_batch(&self) -> (Vec<BatchVec>, Vec<usize>) {
        self.batch(&self.train_indices)
    }

    pub fn test_batch(&self) -> (Vec<BatchVec>, Vec<usize>) {
        self.batch(&self.test_indices)
    }

    /// Replaces the split with a fresh seeded shuffle at the given test
    /// fraction.
    pub fn resplit(&mut self, test_fraction: f64, seed: u64) {
        let n = self.num_samples();
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = Rng::new(seed);
        rng.shuffle(&mut order);
        let test_len = ((n as f64) * test_fraction).round() as usize;
        self.test_indices = order[..test_len].to_vec();
        self.train_indices = order[test_len..].to_vec();
    }
}

/// Interleaved 2-D spirals with Gaussian noise; deterministic per seed.
/// Default split holds out 20% for testing.
pub fn gen_spirals(n_per_class: usize, classes: usize, noise_sd: f64, seed: u64) -> Dataset {
    assert!(n_per_class >= 1 && classes >= 2);
    let mut rng = Rng::new(seed);
    let n = n_per_class * classes;
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for class in 0..classes {
        let offset = 2.0 * std::f64::consts::PI * class as f64 / classes as f64;
        for i in 0..n_per_class {
            let t = (i as f64 + 0.5) / n_per_class as f64;
            // Base radius keeps the arms apart near t = 0, so the classes
            // stay separable under noise.
            let radius = 0.3 + t;
            let angle = 2.5 * std::f64::consts::PI * t + offset;
            xs.push(radius * angle.cos() + noise_sd * rng.normal());
            ys.push(radius * angle.sin() + noise_sd * rng.normal());
            labels.push(class);
        }
    }
    let mut dataset = Dataset {
        features: vec![xs, ys],
        labels,
        classes,
        train_indices: Vec::new(),
        test_indices: Vec::new(),
    };
    dataset.resplit(0.2, rng.next_u64());
    dataset
}

/// Loads a CSV of numeric feature columns followed by an integer label
/// column. A non-numeric first row is treated as a header. The split is a
/// seeded shuffle at `test_fraction`.
pub fn load_csv(path: impl AsRef<Path>, test_fraction: f64, seed: u64) -> Result<Dataset> {
    let file = std::fs::File::open(path.as_ref())?;
    let reader = BufReader::new(file);
    let mut rows: Vec<(usize, Vec<f64>, usize)> = Vec::new();
    let mut width = None;
    for (line_no, line) in reader.lines().enumerate() {
        let line = line?;
        let number = line_no + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let cells: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if cells.len() < 2 {
            return Err(Error::Parse {
                line: number,
                message: "need at least one feature column and a label".into(),
            });
        }
        let parsed: std::result::Result<Vec<f64>, _> =
            cells.iter().map(|c| c.parse::<f64>()).collect();
        let values = match parsed {
            Ok(values) => values,
            Err(_) if line_no == 0 => continue, // optional header
            Err(_) => {
                return Err(Error::Parse {
                    line: number,
                    message: "non-numeric cell".into(),
                })
            }
        };
        match width {
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(Error::Parse {
                    line: number,
                    message: format!("expected {w} columns, found {}", values.len()),
                })
            }
            _ => {}
        }
        let label_raw = *values.last().unwrap();
        if label_raw < 0.0 || label_raw.fract() != 0.0 {
            return Err(Error::Parse {
                line: number,
                message: format!("label must be a non-negative integer, got {label_raw}"),
            });
        }
        rows.push((number, values[..values.len() - 1].to_vec(), label_raw as usize));
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            line: 0,
            message: "no data rows".into(),
        });
    }
    let num_features = rows[0].1.len();
    let classes = rows.iter().map(|r| r.2).max().unwrap() + 1;
    let mut features = vec![Vec::with_capacity(rows.len()); num_features];
    let mut labels = Vec::with_capacity(rows.len());
    for (_, feats, label) in &rows {
        for (f, value) in feats.iter().enumerate() {
            features[f].push(*value);
        }
        labels.push(*label);
    }
    let mut dataset = Dataset {
        features,
        labels,
        classes,
        train_indices: Vec::new(),
        test_indices: Vec::new(),
    };
    dataset.resplit(test_fraction, seed);
    Ok(dataset)
}

/// Writes a dataset as CSV (features then label per row), the inverse of
/// [`load_csv`].
pub fn save_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut file = std::fs::File::create(path.as_ref())?;
    for i in 0..dataset.num_samples() {
        let mut row: Vec<String> = dataset
            .features
            .iter()
            .map(|col| format!("{:?}", col[i]))
            .collect();
        row.push(dataset.labels[i].to_string());
        writeln!(file, "{}", row.join(","))?;
    }
    Ok(())
}
