//! Model file format: a UTF-8 JSON document tagged by `kind`.
//!
//! Matrices are arrays of row arrays; numbers round-trip at full 64-bit
//! precision. The three kinds are:
//!
//! ```json
//! {"kind": "inn", "activation": "relu", "n": 2, "r": 2, "q": 1,
//!  "w": [[...]], "u": [[...]], "b": [...],
//!  "output_weight": [[...]], "output_bias": [...]}
//! ```
//!
//! `"kind": "ffnn"` replaces `w`/`u`/`b` with `"layers": [{"weight", "bias"}]`
//! and carries `widths`; `"kind": "weight_tied"` adds `"depth"` (an integer or
//! `null` for the infinite-depth limit).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::network::{Activation, FeedforwardNetwork, ImplicitNetwork, Layer, WeightTiedNetwork};

/// Any of the three supported network kinds.
#[derive(Debug, Clone, PartialEq)]
pub enum NetworkModel {
    Implicit(ImplicitNetwork),
    Feedforward(FeedforwardNetwork),
    WeightTied(WeightTiedNetwork),
}

impl NetworkModel {
    pub fn kind(&self) -> &'static str {
        match self {
            NetworkModel::Implicit(_) => "inn",
            NetworkModel::Feedforward(_) => "ffnn",
            NetworkModel::WeightTied(_) => "weight_tied",
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            NetworkModel::Implicit(n) => n.input_dim(),
            NetworkModel::Feedforward(n) => n.input_dim(),
            NetworkModel::WeightTied(n) => n.input_dim(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            NetworkModel::Implicit(n) => n.output_dim(),
            NetworkModel::Feedforward(n) => n.output_dim(),
            NetworkModel::WeightTied(n) => n.output_dim(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct RawLayer {
    weight: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind")]
enum RawModel {
    #[serde(rename = "inn")]
    Inn {
        activation: String,
        n: usize,
        r: usize,
        q: usize,
        w: Vec<Vec<f64>>,
        u: Vec<Vec<f64>>,
        b: Vec<f64>,
        output_weight: Vec<Vec<f64>>,
        output_bias: Vec<f64>,
    },
    #[serde(rename = "ffnn")]
    Ffnn {
        activation: String,
        widths: Vec<usize>,
        q: usize,
        layers: Vec<RawLayer>,
        output_weight: Vec<Vec<f64>>,
        output_bias: Vec<f64>,
    },
    #[serde(rename = "weight_tied")]
    WeightTied {
        activation: String,
        n: usize,
        r: usize,
        q: usize,
        depth: Option<usize>,
        w: Vec<Vec<f64>>,
        u: Vec<Vec<f64>>,
        b: Vec<f64>,
        output_weight: Vec<Vec<f64>>,
        output_bias: Vec<f64>,
    },
}

fn matrix_to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

fn rows_to_matrix(
    name: &str,
    rows: &[Vec<f64>],
    expect_rows: usize,
    expect_cols: usize,
) -> Result<Matrix> {
    let m =
        Matrix::from_rows(rows).map_err(|e| Error::ModelFormat(format!("field {name}: {e}")))?;
    if m.rows() != expect_rows || m.cols() != expect_cols {
        return Err(Error::ModelFormat(format!(
            "field {name} is {}x{}, expected {expect_rows}x{expect_cols}",
            m.rows(),
            m.cols()
        )));
    }
    Ok(m)
}

fn to_raw(model: &NetworkModel) -> RawModel {
    match model {
        NetworkModel::Implicit(net) => RawModel::Inn {
            activation: net.activation.name().to_string(),
            n: net.hidden_dim(),
            r: net.input_dim(),
            q: net.output_dim(),
            w: matrix_to_rows(&net.w),
            u: matrix_to_rows(&net.u),
            b: net.b.clone(),
            output_weight: matrix_to_rows(&net.c),
            output_bias: net.c_bias.clone(),
        },
        NetworkModel::Feedforward(net) => {
            let mut widths = vec![net.input_dim()];
            widths.extend(net.layers.iter().map(|l| l.weight.rows()));
            RawModel::Ffnn {
                activation: net.activation.name().to_string(),
                widths,
                q: net.output_dim(),
                layers: net
                    .layers
                    .iter()
                    .map(|l| RawLayer {
                        weight: matrix_to_rows(&l.weight),
                        bias: l.bias.clone(),
                    })
                    .collect(),
                output_weight: matrix_to_rows(&net.c),
                output_bias: net.c_bias.clone(),
            }
        }
        NetworkModel::WeightTied(net) => RawModel::WeightTied {
            activation: net.activation.name().to_string(),
            n: net.hidden_dim(),
            r: net.input_dim(),
            q: net.output_dim(),
            depth: net.depth,
            w: matrix_to_rows(&net.w),
            u: matrix_to_rows(&net.u),
            b: net.b.clone(),
            output_weight: matrix_to_rows(&net.c),
            output_bias: net.c_bias.clone(),
        },
    }
}

fn from_raw(raw: RawModel) -> Result<NetworkModel> {
    match raw {
        RawModel::Inn {
            activation,
            n,
            r,
            q,
            w,
            u,
            b,
            output_weight,
            output_bias,
        } => {
            let act = Activation::from_name(&activation)?;
            let net = ImplicitNetwork::new(
                rows_to_matrix("w", &w, n, n)?,
                rows_to_matrix("u", &u, n, r)?,
                b,
                rows_to_matrix("output_weight", &output_weight, q, n)?,
                output_bias,
                act,
            )
            .map_err(|e| Error::ModelFormat(e.to_string()))?;
            Ok(NetworkModel::Implicit(net))
        }
        RawModel::Ffnn {
            activation,
            widths,
            q,
            layers,
            output_weight,
            output_bias,
        } => {
            let act = Activation::from_name(&activation)?;
            if widths.len() != layers.len() + 1 {
                return Err(Error::ModelFormat(format!(
                    "widths has {} entries for {} layers",
                    widths.len(),
                    layers.len()
                )));
            }
            let mut typed = Vec::with_capacity(layers.len());
            for (idx, layer) in layers.into_iter().enumerate() {
                typed.push(Layer {
                    weight: rows_to_matrix(
                        &format!("layers[{idx}].weight"),
                        &layer.weight,
                        widths[idx + 1],
                        widths[idx],
                    )?,
                    bias: layer.bias,
                });
            }
            let last = *widths.last().unwrap();
            let net = FeedforwardNetwork::new(
                typed,
                rows_to_matrix("output_weight", &output_weight, q, last)?,
                output_bias,
                act,
            )
            .map_err(|e| Error::ModelFormat(e.to_string()))?;
            Ok(NetworkModel::Feedforward(net))
        }
        RawModel::WeightTied {
            activation,
            n,
            r,
            q,
            depth,
            w,
            u,
            b,
            output_weight,
            output_bias,
        } => {
            let act = Activation::from_name(&activation)?;
            if depth == Some(0) {
                return Err(Error::ModelFormat("depth must be >= 1 or null".into()));
            }
            let net = WeightTiedNetwork::new(
                rows_to_matrix("w", &w, n, n)?,
                rows_to_matrix("u", &u, n, r)?,
                b,
                rows_to_matrix("output_weight", &output_weight, q, n)?,
                output_bias,
                depth,
                act,
            )
            .map_err(|e| Error::ModelFormat(e.to_string()))?;
            Ok(NetworkModel::WeightTied(net))
        }
    }
}

/// Serializes a model to its JSON document.
pub fn model_to_json(model: &NetworkModel) -> Result<String> {
    Ok(serde_json::to_string_pretty(&to_raw(model))?)
}

/// Parses a model from a JSON document, validating dimensions and finiteness.
pub fn model_from_json(text: &str) -> Result<NetworkModel> {
    let raw: RawModel =
        serde_json::from_str(text).map_err(|e| Error::ModelFormat(e.to_string()))?;
    from_raw(raw)
}

/// Writes a model file.
pub fn save_model(model: &NetworkModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, model_to_json(model)?)?;
    Ok(())
}

/// Reads a model file.
pub fn load_model(path: impl AsRef<Path>) -> Result<NetworkModel> {
    let text = fs::read_to_string(path)?;
    model_from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_inn(rng: &mut ChaCha8Rng) -> ImplicitNetwork {
        let (n, r, q) = (4, 3, 2);
        ImplicitNetwork::new(
            Matrix::new(n, n, (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap(),
            Matrix::new(n, r, (0..n * r).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap(),
            (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            Matrix::new(q, n, (0..q * n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap(),
            (0..q).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            Activation::Relu,
        )
        .unwrap()
    }

    #[test]
    fn inn_roundtrip_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let net = random_inn(&mut rng);
        let model = NetworkModel::Implicit(net);
        let json = model_to_json(&model).unwrap();
        let back = model_from_json(&json).unwrap();
        assert_eq!(model, back);
    }

    #[test]
    fn all_kinds_roundtrip_through_files() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let inn = random_inn(&mut rng);
        let ffnn = FeedforwardNetwork::new(
            vec![
                Layer {
                    weight: Matrix::new(3, 2, (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect())
                        .unwrap(),
                    bias: vec![0.1, 0.2, -0.3],
                },
                Layer {
                    weight: Matrix::new(2, 3, (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect())
                        .unwrap(),
                    bias: vec![0.0, -1.0],
                },
            ],
            Matrix::new(2, 2, vec![1.0, 0.0, 0.5, -0.5]).unwrap(),
            vec![0.0, 0.125],
            Activation::Tanh,
        )
        .unwrap();
        let wt = WeightTiedNetwork::new(
            inn.w.clone(),
            inn.u.clone(),
            inn.b.clone(),
            inn.c.clone(),
            inn.c_bias.clone(),
            Some(7),
            Activation::Relu,
        )
        .unwrap();

        let dir = std::env::temp_dir().join(format!("innbound-model-io-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        for (name, model) in [
            ("a.json", NetworkModel::Implicit(inn)),
            ("b.json", NetworkModel::Feedforward(ffnn)),
            ("c.json", NetworkModel::WeightTied(wt)),
        ] {
            let path = dir.join(name);
            save_model(&model, &path).unwrap();
            assert_eq!(load_model(&path).unwrap(), model);
        }
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn wrong_dimension_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let net = random_inn(&mut rng);
        let json = model_to_json(&NetworkModel::Implicit(net)).unwrap();
        // Claim a larger hidden dimension than w provides.
        let corrupted = json.replace("\"n\": 4", "\"n\": 5");
        match model_from_json(&corrupted) {
            Err(Error::ModelFormat(msg)) => assert!(msg.contains("expected 5x5"), "{msg}"),
            other => panic!("expected ModelFormat error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_activation_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let net = random_inn(&mut rng);
        let json = model_to_json(&NetworkModel::Implicit(net)).unwrap();
        let corrupted = json.replace("\"relu\"", "\"gelu\"");
        assert!(matches!(
            model_from_json(&corrupted),
            Err(Error::ModelFormat(_))
        ));
    }

    #[test]
    fn ffnn_kind_with_chained_widths_parses() {
        let json = r#"{
            "kind": "ffnn",
            "activation": "relu",
            "widths": [2, 3],
            "q": 1,
            "layers": [{"weight": [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]], "bias": [0.0, 0.0, 0.0]}],
            "output_weight": [[1.0, 2.0, 3.0]],
            "output_bias": [0.0]
        }"#;
        match model_from_json(json).unwrap() {
            NetworkModel::Feedforward(net) => {
                assert_eq!(net.input_dim(), 2);
                assert_eq!(net.output_dim(), 1);
            }
            other => panic!("expected ffnn, got {}", other.kind()),
        }
    }
}
