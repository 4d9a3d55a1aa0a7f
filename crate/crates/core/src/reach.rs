//! Inclusion functions: the mixed-monotone embedded-network bound for
//! implicit networks, interval bound propagation for feedforward and
//! weight-tied networks, and the comparison reports relating them.

use crate::error::{Error, Result};
use crate::linalg::{perron_vector_abs, weighted_inf_norm, Matrix, PositiveWeight};
use crate::network::{FeedforwardNetwork, ImplicitNetwork, WeightTiedNetwork};
use crate::solver::{
    solve_embedded_fixed_point, SolveDiagnostics, SolverConfig, WellposednessCertificate,
};

/// Componentwise interval `[lo, hi]` with `lo <= hi`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalVector {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl IntervalVector {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch(format!(
                "interval bounds have dims {} and {}",
                lo.len(),
                hi.len()
            )));
        }
        if lo.iter().chain(hi.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("interval bounds".into()));
        }
        if let Some(idx) = lo.iter().zip(&hi).position(|(l, h)| l > h) {
            return Err(Error::InvalidBox { index: idx });
        }
        Ok(Self { lo, hi })
    }

    /// Degenerate box `[x, x]`.
    pub fn point(x: &[f64]) -> Result<Self> {
        Self::new(x.to_vec(), x.to_vec())
    }

    /// Axis-aligned infinity-norm ball of radius `eps`.
    pub fn linf_ball(center: &[f64], eps: f64) -> Result<Self> {
        if !(eps >= 0.0) || !eps.is_finite() {
            return Err(Error::Config(format!("radius must be >= 0, got {eps}")));
        }
        Self::new(
            center.iter().map(|v| v - eps).collect(),
            center.iter().map(|v| v + eps).collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn widths(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).collect()
    }

    pub fn max_width(&self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .fold(0.0f64, |m, (l, h)| m.max(h - l))
    }

    /// Whether `x` lies inside the box, within `slack`.
    pub fn contains(&self, x: &[f64], slack: f64) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (l, h))| *v >= l - slack && *v <= h + slack)
    }

    /// Whether `self` is contained in `other`, within `slack`.
    pub fn is_subset_of(&self, other: &IntervalVector, slack: f64) -> bool {
        self.dim() == other.dim()
            && self.lo.iter().zip(&other.lo).all(|(a, b)| *a >= b - slack)
            && self.hi.iter().zip(&other.hi).all(|(a, b)| *a <= b + slack)
    }

    /// Midpoint of the box.
    pub fn center(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| 0.5 * (l + h))
            .collect()
    }
}

/// Which bounding technique produced a result.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReachMethod {
    MixedMonotone,
    IbpFeedforward,
    IbpWeightTied,
}

/// Output (and optionally hidden-state) bounds plus solver diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct InclusionResult {
    pub output: IntervalVector,
    pub hidden: Option<IntervalVector>,
    pub method: ReachMethod,
    pub diagnostics: Option<SolveDiagnostics>,
}

/// Lower half of the embedding map:
/// `act(Mzl(W) z_lo + rem(W) z_hi + U+ x_lo + U- x_hi + b)`.
/// The upper half is the same map with both argument pairs swapped.
pub fn embedding_map(
    net: &ImplicitNetwork,
    z_lo: &[f64],
    z_hi: &[f64],
    x_lo: &[f64],
    x_hi: &[f64],
) -> Result<Vec<f64>> {
    let n = net.hidden_dim();
    let r = net.input_dim();
    if z_lo.len() != n || z_hi.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "hidden arguments have dims {}/{}, expected {n}",
            z_lo.len(),
            z_hi.len()
        )));
    }
    if x_lo.len() != r || x_hi.len() != r {
        return Err(Error::DimensionMismatch(format!(
            "input arguments have dims {}/{}, expected {r}",
            x_lo.len(),
            x_hi.len()
        )));
    }
    let mut pre = net.w.metzler_part()?.matvec(z_lo);
    let t1 = net.w.nonmetzler_part()?.matvec(z_hi);
    let t2 = net.u.positive_part().matvec(x_lo);
    let t3 = net.u.negative_part().matvec(x_hi);
    for i in 0..n {
        pre[i] = net
            .activation
            .eval(pre[i] + t1[i] + t2[i] + t3[i] + net.b[i]);
    }
    Ok(pre)
}

/// Maps hidden-state bounds through the affine output layer with the
/// sign-split weights, producing output bounds.
fn output_interval(
    c: &Matrix,
    c_bias: &[f64],
    z_lo: &[f64],
    z_hi: &[f64],
) -> Result<IntervalVector> {
    let c_pos = c.positive_part();
    let c_neg = c.negative_part();
    let mut lo = c_pos.matvec(z_lo);
    let t = c_neg.matvec(z_hi);
    for (l, (ti, bi)) in lo.iter_mut().zip(t.iter().zip(c_bias)) {
        *l += ti + bi;
    }
    let mut hi = c_pos.matvec(z_hi);
    let t = c_neg.matvec(z_lo);
    for (h, (ti, bi)) in hi.iter_mut().zip(t.iter().zip(c_bias)) {
        *h += ti + bi;
    }
    IntervalVector::new(lo, hi)
}

/// Mixed-monotone inclusion function for the input-output map of an implicit
/// network: solves the embedded fixed point over the input box and maps the
/// hidden bounds through the sign-split output layer.
pub fn reach_inn(
    net: &ImplicitNetwork,
    input: &IntervalVector,
    cert: &WellposednessCertificate,
    cfg: &SolverConfig,
) -> Result<InclusionResult> {
    let emb = solve_embedded_fixed_point(net, input.lo(), input.hi(), cert, cfg)?;
    let output = output_interval(&net.c, &net.c_bias, &emb.z_lo, &emb.z_hi)?;
    Ok(InclusionResult {
        output,
        hidden: Some(IntervalVector::new(emb.z_lo, emb.z_hi)?),
        method: ReachMethod::MixedMonotone,
        diagnostics: Some(emb.diagnostics),
    })
}

/// Interval bound propagation through a feedforward network: sign-split layer
/// recursion followed by the sign-split output layer.
pub fn reach_ibp_ffnn(net: &FeedforwardNetwork, input: &IntervalVector) -> Result<InclusionResult> {
    if input.dim() != net.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "input box has dim {}, expected {}",
            input.dim(),
            net.input_dim()
        )));
    }
    let mut z_lo = input.lo().to_vec();
    let mut z_hi = input.hi().to_vec();
    for layer in &net.layers {
        let w_pos = layer.weight.positive_part();
        let w_neg = layer.weight.negative_part();
        let mut lo = w_pos.matvec(&z_lo);
        let t = w_neg.matvec(&z_hi);
        for (i, l) in lo.iter_mut().enumerate() {
            *l = net.activation.eval(*l + t[i] + layer.bias[i]);
        }
        let mut hi = w_pos.matvec(&z_hi);
        let t = w_neg.matvec(&z_lo);
        for (i, h) in hi.iter_mut().enumerate() {
            *h = net.activation.eval(*h + t[i] + layer.bias[i]);
        }
        z_lo = lo;
        z_hi = hi;
    }
    let output = output_interval(&net.c, &net.c_bias, &z_lo, &z_hi)?;
    Ok(InclusionResult {
        output,
        hidden: Some(IntervalVector::new(z_lo, z_hi)?),
        method: ReachMethod::IbpFeedforward,
        diagnostics: None,
    })
}

/// Depth of a weight-tied propagation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Depth {
    Finite(usize),
    /// Iterate to the infinite-depth limit; requires `rho(|W|) < 1`.
    UntilConverged,
}

/// Interval bound propagation for a weight-tied input-injected network: the
/// sign-split pair iteration from zero, run for a fixed depth or to its limit.
///
/// Convergence for the unbounded case is measured in the infinity norm
/// weighted by the Perron vector of `|W|`, in which the pair iteration
/// contracts at rate `rho(|W|)`.
pub fn reach_ibp_weight_tied(
    net: &WeightTiedNetwork,
    input: &IntervalVector,
    depth: Depth,
    tol: f64,
) -> Result<InclusionResult> {
    if input.dim() != net.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "input box has dim {}, expected {}",
            input.dim(),
            net.input_dim()
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::Config("tol must be positive".into()));
    }
    let n = net.hidden_dim();
    let (eta, max_steps) = match depth {
        Depth::Finite(k) => {
            if k == 0 {
                return Err(Error::Config("depth must be >= 1".into()));
            }
            (PositiveWeight::ones(n), k)
        }
        Depth::UntilConverged => {
            let (eta, rho) = perron_vector_abs(&net.w, 1e-12, 200_000)?;
            if rho >= 1.0 {
                return Err(Error::SpectralRadiusTooLarge { rho });
            }
            (eta, 100_000usize)
        }
    };

    let w_pos = net.w.positive_part();
    let w_neg = net.w.negative_part();
    let u_pos = net.u.positive_part();
    let u_neg = net.u.negative_part();
    let mut drive_lo = u_pos.matvec(input.lo());
    let t = u_neg.matvec(input.hi());
    for i in 0..n {
        drive_lo[i] += t[i] + net.b[i];
    }
    let mut drive_hi = u_pos.matvec(input.hi());
    let t = u_neg.matvec(input.lo());
    for i in 0..n {
        drive_hi[i] += t[i] + net.b[i];
    }

    let mut z_lo = vec![0.0; n];
    let mut z_hi = vec![0.0; n];
    let mut next_lo = vec![0.0; n];
    let mut next_hi = vec![0.0; n];
    let mut cross = vec![0.0; n];
    let mut iterations = 0usize;
    let mut final_gap = f64::INFINITY;
    let mut worst_ratio = 0.0f64;
    let mut prev_gap: Option<f64> = None;
    for step in 1..=max_steps {
        w_pos.matvec_into(&z_lo, &mut next_lo);
        w_neg.matvec_into(&z_hi, &mut cross);
        for i in 0..n {
            next_lo[i] = net.activation.eval(next_lo[i] + cross[i] + drive_lo[i]);
        }
        w_pos.matvec_into(&z_hi, &mut next_hi);
        w_neg.matvec_into(&z_lo, &mut cross);
        for i in 0..n {
            next_hi[i] = net.activation.eval(next_hi[i] + cross[i] + drive_hi[i]);
        }
        let gap_lo = weighted_inf_norm(
            &z_lo
                .iter()
                .zip(&next_lo)
                .map(|(a, b)| a - b)
                .collect::<Vec<_>>(),
            &eta,
        );
        let gap_hi = weighted_inf_norm(
            &z_hi
                .iter()
                .zip(&next_hi)
                .map(|(a, b)| a - b)
                .collect::<Vec<_>>(),
            &eta,
        );
        let gap = gap_lo.max(gap_hi);
        let scale = weighted_inf_norm(&z_lo, &eta).max(weighted_inf_norm(&z_hi, &eta));
        if let Some(prev) = prev_gap {
            if prev >= (100.0 * tol).max(1e-13 * (1.0 + scale)) {
                worst_ratio = worst_ratio.max(gap / prev);
            }
        }
        prev_gap = Some(gap);
        std::mem::swap(&mut z_lo, &mut next_lo);
        std::mem::swap(&mut z_hi, &mut next_hi);
        iterations = step;
        final_gap = gap;
        if matches!(depth, Depth::UntilConverged) && gap <= tol {
            break;
        }
    }
    if matches!(depth, Depth::UntilConverged) && final_gap > tol {
        return Err(Error::MaxIterExceeded {
            max_iter: max_steps,
            residual: final_gap,
        });
    }

    let output = output_interval(&net.c, &net.c_bias, &z_lo, &z_hi)?;
    Ok(InclusionResult {
        output,
        hidden: Some(IntervalVector::new(z_lo, z_hi)?),
        method: ReachMethod::IbpWeightTied,
        diagnostics: Some(SolveDiagnostics {
            iterations,
            final_residual: final_gap,
            contraction_estimate: worst_ratio,
        }),
    })
}

/// Report for the feedforward equality comparison: the mixed-monotone bound of
/// the converted implicit network against direct layer-wise propagation.
#[derive(Debug, Clone, PartialEq)]
pub struct FfnnComparison {
    pub max_discrepancy: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub mixed_monotone: IntervalVector,
    pub ibp: IntervalVector,
}

/// Computes both bounds for a feedforward network over the same box and
/// reports their maximum componentwise discrepancy. The two agree at the
/// exact fixed point; the tolerance `100 * cfg.tol` absorbs truncation.
pub fn compare_ffnn_equal(
    net: &FeedforwardNetwork,
    input: &IntervalVector,
    cfg: &SolverConfig,
) -> Result<FfnnComparison> {
    let inn = crate::network::ffnn_to_inn(net);
    let cert = crate::solver::wellposedness_certificate(&inn, cfg.tol.min(1e-10))?;
    let mm = reach_inn(&inn, input, &cert, cfg)?;
    let ibp = reach_ibp_ffnn(net, input)?;
    let mut disc = 0.0f64;
    for i in 0..mm.output.dim() {
        disc = disc.max((mm.output.lo()[i] - ibp.output.lo()[i]).abs());
        disc = disc.max((mm.output.hi()[i] - ibp.output.hi()[i]).abs());
    }
    let tolerance = 100.0 * cfg.tol;
    Ok(FfnnComparison {
        max_discrepancy: disc,
        tolerance,
        pass: disc <= tolerance,
        mixed_monotone: mm.output,
        ibp: ibp.output,
    })
}

/// Report for the weight-tied dominance comparison: the mixed-monotone box
/// must sit inside the weight-tied propagation limit box.
#[derive(Debug, Clone, PartialEq)]
pub struct DominanceComparison {
    /// Worst containment violation (0 when the mixed-monotone box nests).
    pub max_violation: f64,
    /// Sum over outputs of (propagation width - mixed-monotone width).
    pub tightness_gap: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub mixed_monotone: IntervalVector,
    pub ibp: IntervalVector,
}

/// Computes the mixed-monotone box (reading the weight-tied parameters as an
/// implicit network) and the infinite-depth propagation box, and checks that
/// the former is contained in the latter within `100 * cfg.tol`.
pub fn compare_weight_tied_dominance(
    net: &WeightTiedNetwork,
    input: &IntervalVector,
    cfg: &SolverConfig,
) -> Result<DominanceComparison> {
    let inn = net.as_implicit();
    let cert = crate::solver::wellposedness_certificate(&inn, cfg.tol.min(1e-10))?;
    let mm = reach_inn(&inn, input, &cert, cfg)?;
    let ibp = reach_ibp_weight_tied(net, input, Depth::UntilConverged, cfg.tol)?;
    let mut violation = 0.0f64;
    let mut gap = 0.0f64;
    for i in 0..mm.output.dim() {
        violation = violation.max(ibp.output.lo()[i] - mm.output.lo()[i]);
        violation = violation.max(mm.output.hi()[i] - ibp.output.hi()[i]);
        gap += (ibp.output.hi()[i] - ibp.output.lo()[i]) - (mm.output.hi()[i] - mm.output.lo()[i]);
    }
    let tolerance = 100.0 * cfg.tol;
    Ok(DominanceComparison {
        max_violation: violation,
        tightness_gap: gap,
        tolerance,
        pass: violation <= tolerance,
        mixed_monotone: mm.output,
        ibp: ibp.output,
    })
}
