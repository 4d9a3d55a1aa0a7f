//! Labeled datasets: synthetic 2-D generators for desk-scale training and the
//! CSV file format used by the CLI (feature columns, then an integer label
//! column).

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Inputs with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl LabeledDataset {
    pub fn new(inputs: Vec<Vec<f64>>, labels: Vec<usize>) -> Result<Self> {
        if inputs.len() != labels.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} inputs vs {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        if let Some(first) = inputs.first() {
            let d = first.len();
            if inputs.iter().any(|x| x.len() != d) {
                return Err(Error::DimensionMismatch("ragged input rows".into()));
            }
        }
        if inputs.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset inputs".into()));
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    /// Number of classes (one past the largest label).
    pub fn num_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }
}

/// Synthetic 2-D distributions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ToyGenerator {
    /// Gaussian blobs with centers spread on a circle.
    GaussianClusters {
        classes: usize,
        /// Distance of each center from the origin.
        separation: f64,
        /// Standard deviation of each blob.
        spread: f64,
    },
    /// Two interleaved half-circles.
    TwoMoons { noise: f64 },
}

fn normal_pair(rng: &mut ChaCha8Rng) -> (f64, f64) {
    // Box-Muller keeps the dependency surface small and the stream stable.
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    let radius = (-2.0 * u1.ln()).sqrt();
    let angle = 2.0 * std::f64::consts::PI * u2;
    (radius * angle.cos(), radius * angle.sin())
}

/// Generates a balanced labeled dataset (class counts differ by at most one).
/// Deterministic given the seed.
pub fn generate_toy(generator: ToyGenerator, points: usize, seed: u64) -> Result<LabeledDataset> {
    if points == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = Vec::with_capacity(points);
    let mut labels = Vec::with_capacity(points);
    match generator {
        ToyGenerator::GaussianClusters {
            classes,
            separation,
            spread,
        } => {
            if !(2..=4).contains(&classes) {
                return Err(Error::Config(format!(
                    "gaussian clusters supports 2-4 classes, got {classes}"
                )));
            }
            let centers: Vec<(f64, f64)> = (0..classes)
                .map(|c| {
                    let angle = 2.0 * std::f64::consts::PI * c as f64 / classes as f64;
                    (separation * angle.cos(), separation * angle.sin())
                })
                .collect();
            for i in 0..points {
                let label = i % classes;
                let (gx, gy) = normal_pair(&mut rng);
                let (cx, cy) = centers[label];
                inputs.push(vec![cx + spread * gx, cy + spread * gy]);
                labels.push(label);
            }
        }
        ToyGenerator::TwoMoons { noise } => {
            for i in 0..points {
                let label = i % 2;
                let t: f64 = rng.gen_range(0.0..std::f64::consts::PI);
                let (mut x, mut y) = if label == 0 {
                    (t.cos(), t.sin())
                } else {
                    (1.0 - t.cos(), 0.5 - t.sin())
                };
                let (gx, gy) = normal_pair(&mut rng);
                x += noise * gx;
                y += noise * gy;
                inputs.push(vec![x, y]);
                labels.push(label);
            }
        }
    }
    LabeledDataset::new(inputs, labels)
}

/// Writes `features..., label` rows with full round-trip float precision.
pub fn write_csv(dataset: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    for (x, label) in dataset.inputs.iter().zip(&dataset.labels) {
        for v in x {
            out.push_str(&format!("{v},"));
        }
        out.push_str(&format!("{label}\n"));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads a dataset CSV. The label column defaults to the last one; a leading
/// non-numeric row is treated as a header and skipped.
pub fn read_csv(path: impl AsRef<Path>, label_col: Option<usize>) -> Result<LabeledDataset> {
    let text = fs::read_to_string(path)?;
    parse_csv(&text, label_col)
}

fn parse_csv(text: &str, label_col: Option<usize>) -> Result<LabeledDataset> {
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 2 {
            return Err(Error::Config(format!(
                "line {}: need at least one feature and a label",
                line_no + 1
            )));
        }
        let col = label_col.unwrap_or(fields.len() - 1);
        if col >= fields.len() {
            return Err(Error::Config(format!(
                "label column {col} out of range for {} fields",
                fields.len()
            )));
        }
        let parsed: Option<Vec<f64>> = fields
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != col)
            .map(|(_, f)| f.parse::<f64>().ok())
            .collect();
        let label = fields[col].parse::<usize>().ok();
        match (parsed, label) {
            (Some(x), Some(l)) => {
                inputs.push(x);
                labels.push(l);
            }
            _ if line_no == 0 => continue, // header row
            _ => {
                return Err(Error::Config(format!(
                    "line {}: could not parse numeric row",
                    line_no + 1
                )))
            }
        }
    }
    if inputs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    LabeledDataset::new(inputs, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generators_are_deterministic_and_balanced() {
        let gen = ToyGenerator::GaussianClusters {
            classes: 3,
            separation: 2.0,
            spread: 0.4,
        };
        let a = generate_toy(gen, 100, 5).unwrap();
        let b = generate_toy(gen, 100, 5).unwrap();
        assert_eq!(a, b);
        let mut counts = [0usize; 3];
        for &l in &a.labels {
            counts[l] += 1;
        }
        assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);

        let moons = generate_toy(ToyGenerator::TwoMoons { noise: 0.05 }, 51, 9).unwrap();
        assert_eq!(moons.num_classes(), 2);
        assert_eq!(moons.input_dim(), 2);
    }

    #[test]
    fn csv_roundtrip() {
        let ds = generate_toy(
            ToyGenerator::GaussianClusters {
                classes: 2,
                separation: 1.5,
                spread: 0.3,
            },
            20,
            1,
        )
        .unwrap();
        let path = std::env::temp_dir().join(format!("innbound-ds-{}.csv", std::process::id()));
        write_csv(&ds, &path).unwrap();
        let back = read_csv(&path, None).unwrap();
        assert_eq!(ds, back);
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn csv_header_and_label_column() {
        let text = "x1,x2,label\n1.0,2.0,0\n3.0,4.0,1\n";
        let ds = parse_csv(text, None).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.inputs[1], vec![3.0, 4.0]);
        assert_eq!(ds.labels, vec![0, 1]);

        // Label in the first column.
        let text = "1,0.5,0.25\n0,0.1,0.9\n";
        let ds = parse_csv(text, Some(0)).unwrap();
        assert_eq!(ds.inputs[0], vec![0.5, 0.25]);
        assert_eq!(ds.labels, vec![1, 0]);
    }

    #[test]
    fn empty_csv_is_an_error() {
        assert!(matches!(parse_csv("", None), Err(Error::EmptyDataset)));
        assert!(matches!(
            parse_csv("a,b,c\n", None),
            Err(Error::EmptyDataset)
        ));
    }
}
