//! Classification-robustness certification: relative classifier margins
//! bounded through the embedded fixed point, certified accuracy over a
//! dataset, and the Lipschitz-based width comparison.

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::network::ImplicitNetwork;
use crate::oracle::{sampled_tight_inclusion, SamplingPlan};
use crate::reach::{reach_inn, IntervalVector};
use crate::solver::{
    solve_embedded_fixed_point, solve_fixed_point, SolverConfig, WellposednessCertificate,
};

/// Specification matrix for a target class: applying it to an output vector
/// yields the margins `v_i - v_j` of the true class over every other class
/// (with a zero in the true class's own row).
#[derive(Debug, Clone, PartialEq)]
pub struct SpecificationMatrix {
    t: Matrix,
    label: usize,
}

impl SpecificationMatrix {
    pub fn matrix(&self) -> &Matrix {
        &self.t
    }

    pub fn label(&self) -> usize {
        self.label
    }

    /// `(T v)_j = v_label - v_j`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.t.matvec(v)
    }
}

/// Builds the specification matrix for `classes` outputs and true class `label`.
pub fn build_specification(classes: usize, label: usize) -> Result<SpecificationMatrix> {
    if label >= classes {
        return Err(Error::ClassIndexOutOfRange {
            index: label,
            classes,
        });
    }
    let mut t = Matrix::zeros(classes, classes);
    for j in 0..classes {
        if j == label {
            continue;
        }
        t.set(j, label, 1.0);
        t.set(j, j, -1.0);
    }
    Ok(SpecificationMatrix { t, label })
}

/// Index of the strict maximum, or `None` on a tie.
pub fn strict_argmax(v: &[f64]) -> Option<usize> {
    let mut best = 0usize;
    for (i, x) in v.iter().enumerate().skip(1) {
        if *x > v[best] {
            best = i;
        }
    }
    let top = v[best];
    if v.iter().enumerate().any(|(i, x)| i != best && *x == top) {
        None
    } else {
        Some(best)
    }
}

/// Per-input certification outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct CertificationReport {
    pub input: Vec<f64>,
    pub epsilon: f64,
    pub true_label: usize,
    /// Componentwise lower bound on the margins; entry `true_label` is 0.
    pub margin_lower: Vec<f64>,
    pub certified: bool,
    pub output_box: IntervalVector,
}

fn margin_from_embedded(
    net: &ImplicitNetwork,
    spec: &SpecificationMatrix,
    z_lo: &[f64],
    z_hi: &[f64],
) -> Result<Vec<f64>> {
    let tc = spec.matrix().matmul(&net.c)?;
    let mut m = tc.positive_part().matvec(z_lo);
    let t = tc.negative_part().matvec(z_hi);
    let tc_bias = spec.matrix().matvec(&net.c_bias);
    for i in 0..m.len() {
        m[i] += t[i] + tc_bias[i];
    }
    Ok(m)
}

/// Lower bound on the relative classifier margins over the infinity-norm ball
/// of radius `eps` around `x`. Entry `label` is zero by construction.
pub fn margin_lower_bound(
    net: &ImplicitNetwork,
    x: &[f64],
    label: usize,
    eps: f64,
    cert: &WellposednessCertificate,
    cfg: &SolverConfig,
) -> Result<Vec<f64>> {
    let spec = build_specification(net.output_dim(), label)?;
    let ball = IntervalVector::linf_ball(x, eps)?;
    let emb = solve_embedded_fixed_point(net, ball.lo(), ball.hi(), cert, cfg)?;
    margin_from_embedded(net, &spec, &emb.z_lo, &emb.z_hi)
}

/// Certifies that the predicted class cannot change anywhere in the
/// infinity-norm ball of radius `eps` around `x`: sufficient condition is a
/// strictly positive margin lower bound against every other class.
pub fn certify(
    net: &ImplicitNetwork,
    x: &[f64],
    label: usize,
    eps: f64,
    cert: &WellposednessCertificate,
    cfg: &SolverConfig,
) -> Result<CertificationReport> {
    let spec = build_specification(net.output_dim(), label)?;
    let ball = IntervalVector::linf_ball(x, eps)?;
    let emb = solve_embedded_fixed_point(net, ball.lo(), ball.hi(), cert, cfg)?;
    let margin_lower = margin_from_embedded(net, &spec, &emb.z_lo, &emb.z_hi)?;
    let certified = margin_lower
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != label)
        .all(|(_, m)| *m > 0.0);

    let c_pos = net.c.positive_part();
    let c_neg = net.c.negative_part();
    let mut lo = c_pos.matvec(&emb.z_lo);
    let t = c_neg.matvec(&emb.z_hi);
    for (l, (ti, bi)) in lo.iter_mut().zip(t.iter().zip(&net.c_bias)) {
        *l += ti + bi;
    }
    let mut hi = c_pos.matvec(&emb.z_hi);
    let t = c_neg.matvec(&emb.z_lo);
    for (h, (ti, bi)) in hi.iter_mut().zip(t.iter().zip(&net.c_bias)) {
        *h += ti + bi;
    }

    Ok(CertificationReport {
        input: x.to_vec(),
        epsilon: eps,
        true_label: label,
        margin_lower,
        certified,
        output_box: IntervalVector::new(lo, hi)?,
    })
}

/// Fraction of the dataset that is both correctly classified at the nominal
/// input (strict argmax; ties count as incorrect) and certified at `eps`.
pub fn certified_accuracy(
    net: &ImplicitNetwork,
    dataset: &LabeledDataset,
    eps: f64,
    cert: &WellposednessCertificate,
    cfg: &SolverConfig,
) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut hits = 0usize;
    for (x, &label) in dataset.inputs.iter().zip(&dataset.labels) {
        if label >= net.output_dim() {
            return Err(Error::ClassIndexOutOfRange {
                index: label,
                classes: net.output_dim(),
            });
        }
        let z = solve_fixed_point(net, x, cert, cfg)?.z_star;
        let y = net.output(&z);
        if strict_argmax(&y) != Some(label) {
            continue;
        }
        if certify(net, x, label, eps, cert, cfg)?.certified {
            hits += 1;
        }
    }
    Ok(hits as f64 / dataset.len() as f64)
}

/// Global upper bound on the infinity-norm Lipschitz constant of the
/// input-output map: the certified contraction gives the hidden state a gain
/// of at most `g_U / (1 - mu)` in the weighted norm, composed with the output
/// layer's weighted row sums.
pub fn lipschitz_upper_bound(net: &ImplicitNetwork, cert: &WellposednessCertificate) -> f64 {
    let eta = cert.eta().as_slice();
    let n = net.hidden_dim();
    let mut h_c = 0.0f64;
    for i in 0..net.c.rows() {
        let row = net.c.row(i);
        let mut acc = 0.0;
        for j in 0..n {
            acc += row[j].abs() * eta[j];
        }
        h_c = h_c.max(acc);
    }
    let mut g_u = 0.0f64;
    for i in 0..n {
        let acc: f64 = net.u.row(i).iter().map(|v| v.abs()).sum();
        g_u = g_u.max(acc / eta[i]);
    }
    h_c * g_u / (1.0 - cert.mu())
}

/// Width report relating the mixed-monotone box, the Lipschitz-ball width,
/// and the sampled inner approximation of the tight box.
///
/// Only the tight width is provably below the Lipschitz-ball width; the
/// mixed-monotone width may exceed it and is reported without an ordering
/// claim.
#[derive(Debug, Clone, PartialEq)]
pub struct WidthComparison {
    pub mm_width: f64,
    pub lipschitz_width: f64,
    pub sampled_tight_width: f64,
    /// `sampled_tight_width <= lipschitz_width + 1e-9`.
    pub bound_satisfied: bool,
}

/// Computes the three widths over an input box using the global Lipschitz
/// bound and a sampling plan for the inner reference.
pub fn inclusion_vs_lipschitz(
    net: &ImplicitNetwork,
    input: &IntervalVector,
    cert: &WellposednessCertificate,
    cfg: &SolverConfig,
    plan: &SamplingPlan,
) -> Result<WidthComparison> {
    let mm = reach_inn(net, input, cert, cfg)?;
    let mm_width = mm.output.max_width();
    let lipschitz_width = lipschitz_upper_bound(net, cert) * input.max_width();
    let sampled = sampled_tight_inclusion(
        |x| {
            let z = solve_fixed_point(net, x, cert, cfg)?.z_star;
            Ok(net.output(&z))
        },
        input,
        plan,
    )?;
    let sampled_tight_width = sampled.max_width();
    Ok(WidthComparison {
        mm_width,
        lipschitz_width,
        sampled_tight_width,
        bound_satisfied: sampled_tight_width <= lipschitz_width + 1e-9,
    })
}
