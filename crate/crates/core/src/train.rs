//! Desk-scale robust training of implicit networks: the mixed nominal/robust
//! cross-entropy loss, gradients through both the point and embedded fixed
//! points, the per-row measure-constraint projection, and full-batch gradient
//! descent with a warm-up schedule for the robustness radius and mix.

use crate::certify::{build_specification, strict_argmax};
use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::linalg::{solve_linear, weighted_matrix_measure, Matrix, PositiveWeight};
use crate::network::ImplicitNetwork;
use crate::solver::{
    majorant_weight_search, solve_embedded_fixed_point, solve_fixed_point, SolverConfig,
    WellposednessCertificate,
};

/// How loss gradients are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientMode {
    /// Adjoint solve at the fixed points (fast path).
    ImplicitFunction,
    /// Central finite differences over every parameter (validation path).
    FiniteDifference,
}

/// Training hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    /// Robustness radius the schedule ramps toward and the history reports.
    pub epsilon_test: f64,
    /// Robust-loss mix the schedule ramps toward.
    pub kappa_nom: f64,
    /// Upper bound imposed on the weighted measure of `W` after every epoch.
    pub gamma: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    /// `(nonrobust_epochs, ramp_epochs)`: the radius and mix stay at zero for
    /// the first block, then increase linearly to their targets.
    pub warmup: (usize, usize),
    pub seed: u64,
    pub gradient_mode: GradientMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epsilon_test: 0.1,
            kappa_nom: 0.75,
            gamma: 0.0,
            epochs: 30,
            learning_rate: 0.1,
            warmup: (10, 10),
            seed: 0,
            gradient_mode: GradientMode::ImplicitFunction,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon_test >= 0.0) {
            return Err(Error::Config("epsilon_test must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.kappa_nom) {
            return Err(Error::Config("kappa_nom must lie in [0, 1]".into()));
        }
        if !(self.gamma < 1.0) {
            return Err(Error::Config("gamma must be < 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        Ok(())
    }

    /// Scheduled `(kappa, epsilon)` for a 1-indexed epoch.
    pub fn schedule(&self, epoch: usize) -> (f64, f64) {
        let (hold, ramp) = self.warmup;
        if epoch <= hold {
            (0.0, 0.0)
        } else if ramp > 0 && epoch < hold + ramp {
            let t = (epoch - hold) as f64 / ramp as f64;
            (t * self.kappa_nom, t * self.epsilon_test)
        } else {
            (self.kappa_nom, self.epsilon_test)
        }
    }
}

/// Mean loss over a batch with its two terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    /// `(1 - kappa) * nominal + kappa * robust`.
    pub total: f64,
    /// Mean cross-entropy of the nominal outputs.
    pub nominal_term: f64,
    /// Mean cross-entropy of the negated margin bound (0 when `kappa == 0`).
    pub robust_term: f64,
}

/// Gradient with the same shapes as the trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterGradient {
    pub w: Matrix,
    pub u: Matrix,
    pub b: Vec<f64>,
    pub c: Matrix,
    pub c_bias: Vec<f64>,
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let peak = v.iter().fold(f64::NEG_INFINITY, |m, x| m.max(*x));
    peak + v.iter().map(|x| (x - peak).exp()).sum::<f64>().ln()
}

fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    log_sum_exp(logits) - logits[label]
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let peak = logits.iter().fold(f64::NEG_INFINITY, |m, x| m.max(*x));
    let exps: Vec<f64> = logits.iter().map(|x| (x - peak).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn check_batch(net: &ImplicitNetwork, batch: &LabeledDataset) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if batch.input_dim() != net.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "batch inputs have dim {}, network expects {}",
            batch.input_dim(),
            net.input_dim()
        )));
    }
    if let Some(&bad) = batch.labels.iter().find(|&&l| l >= net.output_dim()) {
        return Err(Error::ClassIndexOutOfRange {
            index: bad,
            classes: net.output_dim(),
        });
    }
    Ok(())
}

/// Mean of the mixed nominal/robust loss over a batch. The robust term is the
/// cross-entropy of the negated margin lower bound, an upper bound on the
/// worst-case loss over the radius-`eps` ball around each input.
pub fn robust_loss(
    net: &ImplicitNetwork,
    batch: &LabeledDataset,
    eps: f64,
    kappa: f64,
    cert: &WellposednessCertificate,
    cfg: &SolverConfig,
) -> Result<LossBreakdown> {
    check_batch(net, batch)?;
    if !(0.0..=1.0).contains(&kappa) {
        return Err(Error::Config("kappa must lie in [0, 1]".into()));
    }
    if !(eps >= 0.0) {
        return Err(Error::Config("eps must be >= 0".into()));
    }
    let mut nominal = 0.0;
    let mut robust = 0.0;
    for (x, &label) in batch.inputs.iter().zip(&batch.labels) {
        let z = solve_fixed_point(net, x, cert, cfg)?.z_star;
        nominal += cross_entropy(&net.output(&z), label);
        if kappa > 0.0 {
            let spec = build_specification(net.output_dim(), label)?;
            let x_lo: Vec<f64> = x.iter().map(|v| v - eps).collect();
            let x_hi: Vec<f64> = x.iter().map(|v| v + eps).collect();
            let emb = solve_embedded_fixed_point(net, &x_lo, &x_hi, cert, cfg)?;
            let tc = spec.matrix().matmul(&net.c)?;
            let mut margin = tc.positive_part().matvec(&emb.z_lo);
            let t = tc.negative_part().matvec(&emb.z_hi);
            let tc_bias = spec.matrix().matvec(&net.c_bias);
            for i in 0..margin.len() {
                margin[i] += t[i] + tc_bias[i];
            }
            let neg_margin: Vec<f64> = margin.iter().map(|m| -m).collect();
            robust += cross_entropy(&neg_margin, label);
        }
    }
    let count = batch.len() as f64;
    nominal /= count;
    robust /= count;
    Ok(LossBreakdown {
        total: (1.0 - kappa) * nominal + kappa * robust,
        nominal_term: nominal,
        robust_term: robust,
    })
}

/// Routes a gradient on the Metzler/remainder (or sign) splits back to the
/// underlying matrix entries: each entry belongs to exactly one split, with
/// the subgradient value 0 at a split kink.
fn route_split_gradient(
    source: &Matrix,
    keep_diagonal: bool,
    grad_primary: &Matrix,
    grad_secondary: &Matrix,
) -> Matrix {
    let mut out = Matrix::zeros(source.rows(), source.cols());
    for i in 0..source.rows() {
        for j in 0..source.cols() {
            let v = source.get(i, j);
            let g = if (keep_diagonal && i == j) || v > 0.0 {
                grad_primary.get(i, j)
            } else if v < 0.0 {
                grad_secondary.get(i, j)
            } else {
                0.0
            };
            out.set(i, j, g);
        }
    }
    out
}

fn implicit_gradient(
    net: &ImplicitNetwork,
    batch: &LabeledDataset,
    eps: f64,
    kappa: f64,
    cert: &WellposednessCertificate,
    cfg: &SolverConfig,
) -> Result<ParameterGradient> {
    let n = net.hidden_dim();
    let r = net.input_dim();
    let q = net.output_dim();
    let mut grad_w = Matrix::zeros(n, n);
    let mut grad_u = Matrix::zeros(n, r);
    let mut grad_b = vec![0.0; n];
    let mut grad_c = Matrix::zeros(q, n);
    let mut grad_c_bias = vec![0.0; q];

    let w_mzl = net.w.metzler_part()?;
    let w_rem = net.w.nonmetzler_part()?;
    let u_pos = net.u.positive_part();
    let u_neg = net.u.negative_part();

    for (x, &label) in batch.inputs.iter().zip(&batch.labels) {
        if kappa < 1.0 {
            // Nominal channel.
            let z = solve_fixed_point(net, x, cert, cfg)?.z_star;
            let y = net.output(&z);
            let mut g_y = softmax(&y);
            g_y[label] -= 1.0;
            for g in &mut g_y {
                *g *= 1.0 - kappa;
            }
            for i in 0..q {
                for j in 0..n {
                    grad_c.set(i, j, grad_c.get(i, j) + g_y[i] * z[j]);
                }
                grad_c_bias[i] += g_y[i];
            }
            // Adjoint through z = act(W z + U x + b).
            let pre = net.w.matvec(&z);
            let ux = net.u.matvec(x);
            let d: Vec<f64> = (0..n)
                .map(|i| net.activation.derivative(pre[i] + ux[i] + net.b[i]))
                .collect();
            let upstream = net.c.matvec_transpose(&g_y);
            let mut system = Matrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    let v = if i == j { 1.0 } else { 0.0 } - net.w.get(j, i) * d[j];
                    system.set(i, j, v);
                }
            }
            let psi = solve_linear(&system, &upstream)?;
            for i in 0..n {
                let p = d[i] * psi[i];
                for j in 0..n {
                    grad_w.set(i, j, grad_w.get(i, j) + p * z[j]);
                }
                for j in 0..r {
                    grad_u.set(i, j, grad_u.get(i, j) + p * x[j]);
                }
                grad_b[i] += p;
            }
        }

        if kappa > 0.0 {
            // Robust channel through the embedded fixed point.
            let spec = build_specification(q, label)?;
            let x_lo: Vec<f64> = x.iter().map(|v| v - eps).collect();
            let x_hi: Vec<f64> = x.iter().map(|v| v + eps).collect();
            let emb = solve_embedded_fixed_point(net, &x_lo, &x_hi, cert, cfg)?;
            let (z_lo, z_hi) = (&emb.z_lo, &emb.z_hi);

            let tc = spec.matrix().matmul(&net.c)?;
            let tc_pos = tc.positive_part();
            let tc_neg = tc.negative_part();
            let mut margin = tc_pos.matvec(z_lo);
            let t = tc_neg.matvec(z_hi);
            let tc_bias = spec.matrix().matvec(&net.c_bias);
            for i in 0..q {
                margin[i] += t[i] + tc_bias[i];
            }
            let neg_margin: Vec<f64> = margin.iter().map(|m| -m).collect();
            // d loss / d margin = kappa * (onehot - softmax(-margin)).
            let s = softmax(&neg_margin);
            let mut g_m: Vec<f64> = s.iter().map(|si| -kappa * si).collect();
            g_m[label] += kappa;

            // Output-layer gradients through the sign-split of T C.
            for a in 0..q {
                for s_col in 0..n {
                    let v = tc.get(a, s_col);
                    if v == 0.0 {
                        continue;
                    }
                    let zsel = if v > 0.0 { z_lo[s_col] } else { z_hi[s_col] };
                    let g1 = g_m[a] * zsel;
                    // grad_C[r][s] += T[a][r] * g1
                    for row in 0..q {
                        let tval = spec.matrix().get(a, row);
                        if tval != 0.0 {
                            grad_c.set(row, s_col, grad_c.get(row, s_col) + tval * g1);
                        }
                    }
                }
                for row in 0..q {
                    let tval = spec.matrix().get(a, row);
                    if tval != 0.0 {
                        grad_c_bias[row] += tval * g_m[a];
                    }
                }
            }

            // Upstream into the doubled hidden state.
            let u_lo = tc_pos.matvec_transpose(&g_m);
            let u_hi = tc_neg.matvec_transpose(&g_m);

            // Slopes at the embedded pre-activations.
            let mut pre_lo = w_mzl.matvec(z_lo);
            let t1 = w_rem.matvec(z_hi);
            let t2 = u_pos.matvec(&x_lo);
            let t3 = u_neg.matvec(&x_hi);
            let mut pre_hi = w_mzl.matvec(z_hi);
            let s1 = w_rem.matvec(z_lo);
            let s2 = u_pos.matvec(&x_hi);
            let s3 = u_neg.matvec(&x_lo);
            let mut d = vec![0.0; 2 * n];
            for i in 0..n {
                pre_lo[i] += t1[i] + t2[i] + t3[i] + net.b[i];
                pre_hi[i] += s1[i] + s2[i] + s3[i] + net.b[i];
                d[i] = net.activation.derivative(pre_lo[i]);
                d[n + i] = net.activation.derivative(pre_hi[i]);
            }

            // Doubled adjoint system (I - D A)^T psi = upstream, with
            // A = [[Mzl, rem], [rem, Mzl]].
            let dim = 2 * n;
            let mut system = Matrix::zeros(dim, dim);
            for i in 0..dim {
                for j in 0..dim {
                    let a_ji = {
                        let (bi, ii) = (j / n, j % n);
                        let (bj, jj) = (i / n, i % n);
                        if bi == bj {
                            w_mzl.get(ii, jj)
                        } else {
                            w_rem.get(ii, jj)
                        }
                    };
                    let v = if i == j { 1.0 } else { 0.0 } - a_ji * d[j];
                    system.set(i, j, v);
                }
            }
            let mut upstream = vec![0.0; dim];
            upstream[..n].copy_from_slice(&u_lo);
            upstream[n..].copy_from_slice(&u_hi);
            let psi = solve_linear(&system, &upstream)?;
            let p_lo: Vec<f64> = (0..n).map(|i| d[i] * psi[i]).collect();
            let p_hi: Vec<f64> = (0..n).map(|i| d[n + i] * psi[n + i]).collect();

            // Split-channel gradients, routed back by entry sign.
            let mut g_mzl = Matrix::zeros(n, n);
            let mut g_rem = Matrix::zeros(n, n);
            let mut g_upos = Matrix::zeros(n, r);
            let mut g_uneg = Matrix::zeros(n, r);
            for i in 0..n {
                for j in 0..n {
                    g_mzl.set(i, j, p_lo[i] * z_lo[j] + p_hi[i] * z_hi[j]);
                    g_rem.set(i, j, p_lo[i] * z_hi[j] + p_hi[i] * z_lo[j]);
                }
                for j in 0..r {
                    g_upos.set(i, j, p_lo[i] * x_lo[j] + p_hi[i] * x_hi[j]);
                    g_uneg.set(i, j, p_lo[i] * x_hi[j] + p_hi[i] * x_lo[j]);
                }
                grad_b[i] += p_lo[i] + p_hi[i];
            }
            let routed_w = route_split_gradient(&net.w, true, &g_mzl, &g_rem);
            let routed_u = route_split_gradient(&net.u, false, &g_upos, &g_uneg);
            for i in 0..n {
                for j in 0..n {
                    grad_w.set(i, j, grad_w.get(i, j) + routed_w.get(i, j));
                }
                for j in 0..r {
                    grad_u.set(i, j, grad_u.get(i, j) + routed_u.get(i, j));
                }
            }
        }
    }

    let scale = 1.0 / batch.len() as f64;
    Ok(ParameterGradient {
        w: grad_w.map(|v| v * scale),
        u: grad_u.map(|v| v * scale),
        b: grad_b.iter().map(|v| v * scale).collect(),
        c: grad_c.map(|v| v * scale),
        c_bias: grad_c_bias.iter().map(|v| v * scale).collect(),
    })
}

const FD_STEP: f64 = 1e-5;

fn finite_difference_gradient(
    net: &ImplicitNetwork,
    batch: &LabeledDataset,
    eps: f64,
    kappa: f64,
    cert: &WellposednessCertificate,
    cfg: &SolverConfig,
) -> Result<ParameterGradient> {
    let mut work = net.clone();
    let eval = |net: &ImplicitNetwork| -> Result<f64> {
        Ok(robust_loss(net, batch, eps, kappa, cert, cfg)?.total)
    };
    let n = net.hidden_dim();
    let r = net.input_dim();
    let q = net.output_dim();

    let mut grad_w = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let v = net.w.get(i, j);
            work.w.set(i, j, v + FD_STEP);
            let plus = eval(&work)?;
            work.w.set(i, j, v - FD_STEP);
            let minus = eval(&work)?;
            work.w.set(i, j, v);
            grad_w.set(i, j, (plus - minus) / (2.0 * FD_STEP));
        }
    }
    let mut grad_u = Matrix::zeros(n, r);
    for i in 0..n {
        for j in 0..r {
            let v = net.u.get(i, j);
            work.u.set(i, j, v + FD_STEP);
            let plus = eval(&work)?;
            work.u.set(i, j, v - FD_STEP);
            let minus = eval(&work)?;
            work.u.set(i, j, v);
            grad_u.set(i, j, (plus - minus) / (2.0 * FD_STEP));
        }
    }
    let mut grad_b = vec![0.0; n];
    for (i, g) in grad_b.iter_mut().enumerate() {
        let v = net.b[i];
        work.b[i] = v + FD_STEP;
        let plus = eval(&work)?;
        work.b[i] = v - FD_STEP;
        let minus = eval(&work)?;
        work.b[i] = v;
        *g = (plus - minus) / (2.0 * FD_STEP);
    }
    let mut grad_c = Matrix::zeros(q, n);
    for i in 0..q {
        for j in 0..n {
            let v = net.c.get(i, j);
            work.c.set(i, j, v + FD_STEP);
            let plus = eval(&work)?;
            work.c.set(i, j, v - FD_STEP);
            let minus = eval(&work)?;
            work.c.set(i, j, v);
            grad_c.set(i, j, (plus - minus) / (2.0 * FD_STEP));
        }
    }
    let mut grad_c_bias = vec![0.0; q];
    for (i, g) in grad_c_bias.iter_mut().enumerate() {
        let v = net.c_bias[i];
        work.c_bias[i] = v + FD_STEP;
        let plus = eval(&work)?;
        work.c_bias[i] = v - FD_STEP;
        let minus = eval(&work)?;
        work.c_bias[i] = v;
        *g = (plus - minus) / (2.0 * FD_STEP);
    }
    Ok(ParameterGradient {
        w: grad_w,
        u: grad_u,
        b: grad_b,
        c: grad_c,
        c_bias: grad_c_bias,
    })
}

/// Gradient of [`robust_loss`] with respect to all parameters.
pub fn loss_gradient(
    net: &ImplicitNetwork,
    batch: &LabeledDataset,
    eps: f64,
    kappa: f64,
    cert: &WellposednessCertificate,
    cfg: &SolverConfig,
    mode: GradientMode,
) -> Result<ParameterGradient> {
    check_batch(net, batch)?;
    if !(0.0..=1.0).contains(&kappa) {
        return Err(Error::Config("kappa must lie in [0, 1]".into()));
    }
    match mode {
        GradientMode::ImplicitFunction => implicit_gradient(net, batch, eps, kappa, cert, cfg),
        GradientMode::FiniteDifference => {
            finite_difference_gradient(net, batch, eps, kappa, cert, cfg)
        }
    }
}

/// Enforces the per-row measure constraint
/// `W_ii + sum_{j != i} (eta_j / eta_i) |W_ij| <= gamma`.
///
/// Satisfied rows are returned unchanged. A violating row is scaled by
/// `gamma / rho_i` when `gamma >= 0`; for negative `gamma`, where no scaling
/// suffices, the deficit is subtracted from the diagonal entry instead.
pub fn project_measure_constraint(w: &Matrix, eta: &PositiveWeight, gamma: f64) -> Result<Matrix> {
    if !(gamma < 1.0) {
        return Err(Error::Config("gamma must be < 1".into()));
    }
    if !w.is_square() || w.rows() != eta.dim() {
        return Err(Error::DimensionMismatch(
            "projection needs a square matrix matching eta".into(),
        ));
    }
    let n = w.rows();
    let weights = eta.as_slice();
    let mut out = w.clone();
    for i in 0..n {
        let mut rho = w.get(i, i);
        for j in 0..n {
            if j != i {
                rho += (weights[j] / weights[i]) * w.get(i, j).abs();
            }
        }
        if rho <= gamma {
            continue;
        }
        if gamma >= 0.0 {
            let s = gamma / rho;
            for j in 0..n {
                out.set(i, j, s * w.get(i, j));
            }
        } else {
            out.set(i, i, w.get(i, i) - (rho - gamma));
        }
    }
    Ok(out)
}

/// One history row per epoch. The CSV surface carries the first four fields;
/// `measure` records the constraint value for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub clean_accuracy: f64,
    pub certified_accuracy: f64,
    pub kappa: f64,
    pub epsilon: f64,
    pub measure: f64,
}

/// Result of a training run. `diverged_at` is set when the loss stopped being
/// finite; the history up to that point is preserved.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: ImplicitNetwork,
    pub certificate: WellposednessCertificate,
    pub history: Vec<EpochRecord>,
    pub diverged_at: Option<usize>,
}

fn clean_accuracy(
    net: &ImplicitNetwork,
    dataset: &LabeledDataset,
    cert: &WellposednessCertificate,
    cfg: &SolverConfig,
) -> Result<f64> {
    let mut hits = 0usize;
    for (x, &label) in dataset.inputs.iter().zip(&dataset.labels) {
        let z = solve_fixed_point(net, x, cert, cfg)?.z_star;
        if strict_argmax(&net.output(&z)) == Some(label) {
            hits += 1;
        }
    }
    Ok(hits as f64 / dataset.len() as f64)
}

/// Refreshes the weight vector for the current `W`, projects `W` onto the
/// measure constraint under it, and certifies the result.
fn project_and_certify(
    net: &mut ImplicitNetwork,
    gamma: f64,
) -> Result<(WellposednessCertificate, f64)> {
    let (eta, _) = majorant_weight_search(&net.w, 1e-12)?;
    net.w = project_measure_constraint(&net.w, &eta, gamma)?;
    let mu = weighted_matrix_measure(&net.w, &eta)?;
    let cert = WellposednessCertificate::from_weights(net, eta)?;
    Ok((cert, mu))
}

/// Full-batch projected gradient descent on the mixed loss.
///
/// Each epoch computes the scheduled `(kappa, epsilon)`, takes one gradient
/// step, refreshes the measure weights, and projects `W` back onto the
/// constraint, so every recorded checkpoint satisfies it. With zero epochs the
/// initial network is returned with the projection applied once.
pub fn train(
    net_init: &ImplicitNetwork,
    dataset: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut net = net_init.clone();
    check_batch(&net, dataset)?;
    let solver_cfg = SolverConfig::default();

    let (mut cert, _) = project_and_certify(&mut net, cfg.gamma)?;
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let (kappa, eps) = cfg.schedule(epoch);
        let loss = robust_loss(&net, dataset, eps, kappa, &cert, &solver_cfg)?;
        if !loss.total.is_finite() {
            return Ok(TrainOutcome {
                network: net,
                certificate: cert,
                history,
                diverged_at: Some(epoch),
            });
        }
        let grad = loss_gradient(
            &net,
            dataset,
            eps,
            kappa,
            &cert,
            &solver_cfg,
            cfg.gradient_mode,
        )?;

        let snapshot = net.clone();
        let lr = cfg.learning_rate;
        for i in 0..net.hidden_dim() {
            for j in 0..net.hidden_dim() {
                net.w.set(i, j, net.w.get(i, j) - lr * grad.w.get(i, j));
            }
            for j in 0..net.input_dim() {
                net.u.set(i, j, net.u.get(i, j) - lr * grad.u.get(i, j));
            }
            net.b[i] -= lr * grad.b[i];
        }
        for i in 0..net.output_dim() {
            for j in 0..net.hidden_dim() {
                net.c.set(i, j, net.c.get(i, j) - lr * grad.c.get(i, j));
            }
            net.c_bias[i] -= lr * grad.c_bias[i];
        }
        // Parameters past this magnitude overflow downstream products; treat
        // the step as divergence and keep the last good checkpoint.
        let exploded = |v: &f64| !v.is_finite() || v.abs() > 1e100;
        if net.w.data().iter().any(exploded)
            || net.u.data().iter().any(exploded)
            || net.b.iter().any(exploded)
            || net.c.data().iter().any(exploded)
            || net.c_bias.iter().any(exploded)
        {
            return Ok(TrainOutcome {
                network: snapshot,
                certificate: cert,
                history,
                diverged_at: Some(epoch),
            });
        }

        let (new_cert, mu) = project_and_certify(&mut net, cfg.gamma)?;
        cert = new_cert;

        let clean = clean_accuracy(&net, dataset, &cert, &solver_cfg)?;
        let certified = crate::certify::certified_accuracy(
            &net,
            dataset,
            cfg.epsilon_test,
            &cert,
            &solver_cfg,
        )?;
        history.push(EpochRecord {
            epoch,
            loss: loss.total,
            clean_accuracy: clean,
            certified_accuracy: certified,
            kappa,
            epsilon: eps,
            measure: mu,
        });
    }

    Ok(TrainOutcome {
        network: net,
        certificate: cert,
        history,
        diverged_at: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_toy, ToyGenerator};
    use crate::network::Activation;
    use crate::solver::wellposedness_certificate;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Random certified net whose entries stay away from the sign-split kinks
    /// so central differences remain meaningful.
    fn random_smooth_net(
        rng: &mut ChaCha8Rng,
        n: usize,
        r: usize,
        q: usize,
        act: Activation,
    ) -> (ImplicitNetwork, WellposednessCertificate) {
        let off_kink = |rng: &mut ChaCha8Rng| -> f64 {
            let v: f64 = rng.gen_range(-1.0..1.0);
            if v.abs() < 1e-3 {
                v.signum() * 1e-3 + v
            } else {
                v
            }
        };
        let mut w = Matrix::new(n, n, (0..n * n).map(|_| off_kink(rng)).collect()).unwrap();
        let norm = w.inf_norm();
        w = w.map(|v| v * 0.7 / norm);
        let c = loop {
            let c = Matrix::new(q, n, (0..q * n).map(|_| off_kink(rng)).collect()).unwrap();
            // Keep all pairwise row differences away from zero so the
            // specification product has no entries at a kink.
            let mut ok = true;
            for a in 0..q {
                for b in 0..q {
                    if a == b {
                        continue;
                    }
                    for s in 0..n {
                        if (c.get(a, s) - c.get(b, s)).abs() < 1e-3 {
                            ok = false;
                        }
                    }
                }
            }
            if ok {
                break c;
            }
        };
        let net = ImplicitNetwork::new(
            w,
            Matrix::new(n, r, (0..n * r).map(|_| off_kink(rng)).collect()).unwrap(),
            (0..n).map(|_| rng.gen_range(-0.3..0.3)).collect(),
            c,
            (0..q).map(|_| rng.gen_range(-0.3..0.3)).collect(),
            act,
        )
        .unwrap();
        let cert = wellposedness_certificate(&net, 1e-12).unwrap();
        (net, cert)
    }

    fn small_batch(rng: &mut ChaCha8Rng, r: usize, q: usize, count: usize) -> LabeledDataset {
        LabeledDataset::new(
            (0..count)
                .map(|_| (0..r).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect(),
            (0..count).map(|i| i % q).collect(),
        )
        .unwrap()
    }

    #[test]
    fn schedule_matches_warmup_shape() {
        let cfg = TrainConfig {
            epsilon_test: 0.1,
            kappa_nom: 0.75,
            warmup: (10, 10),
            ..TrainConfig::default()
        };
        assert_eq!(cfg.schedule(1), (0.0, 0.0));
        assert_eq!(cfg.schedule(10), (0.0, 0.0));
        let (k, e) = cfg.schedule(15);
        assert!((k - 0.375).abs() < 1e-12 && (e - 0.05).abs() < 1e-12);
        assert_eq!(cfg.schedule(20), (0.75, 0.1));
        assert_eq!(cfg.schedule(33), (0.75, 0.1));
    }

    #[test]
    fn loss_with_zero_kappa_is_plain_cross_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(70);
        let (net, cert) = random_smooth_net(&mut rng, 5, 2, 3, Activation::Tanh);
        let batch = small_batch(&mut rng, 2, 3, 8);
        let cfg = SolverConfig::default();
        let loss = robust_loss(&net, &batch, 0.1, 0.0, &cert, &cfg).unwrap();
        let mut expect = 0.0;
        for (x, &l) in batch.inputs.iter().zip(&batch.labels) {
            let z = solve_fixed_point(&net, x, &cert, &cfg).unwrap().z_star;
            expect += cross_entropy(&net.output(&z), l);
        }
        expect /= batch.len() as f64;
        assert!((loss.total - expect).abs() < 1e-12);
        assert_eq!(loss.robust_term, 0.0);
    }

    #[test]
    fn robust_term_at_zero_radius_equals_nominal_term() {
        // The margin bound is exact at radius zero and cross-entropy is
        // shift-invariant, so both terms coincide.
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let (net, cert) = random_smooth_net(&mut rng, 6, 2, 3, Activation::Tanh);
        let batch = small_batch(&mut rng, 2, 3, 6);
        let loss = robust_loss(
            &net,
            &batch,
            0.0,
            0.5,
            &cert,
            &SolverConfig::with_tol(1e-12),
        )
        .unwrap();
        assert!(
            (loss.robust_term - loss.nominal_term).abs() < 1e-7,
            "robust {} vs nominal {}",
            loss.robust_term,
            loss.nominal_term
        );
    }

    #[test]
    fn robust_term_upper_bounds_sampled_worst_case() {
        let mut rng = ChaCha8Rng::seed_from_u64(72);
        let (net, cert) = random_smooth_net(&mut rng, 5, 2, 3, Activation::Relu);
        let batch = small_batch(&mut rng, 2, 3, 4);
        let eps = 0.08;
        let cfg = SolverConfig::default();
        let loss = robust_loss(&net, &batch, eps, 1.0, &cert, &cfg).unwrap();
        let mut worst = 0.0f64;
        for (x, &l) in batch.inputs.iter().zip(&batch.labels) {
            for _ in 0..200 {
                let xp: Vec<f64> = x.iter().map(|v| v + rng.gen_range(-eps..=eps)).collect();
                let z = solve_fixed_point(&net, &xp, &cert, &cfg).unwrap().z_star;
                worst = worst.max(cross_entropy(&net.output(&z), l));
            }
        }
        // The robust term averages per-sample upper bounds, each of which
        // dominates every sampled loss for that sample; compare against the
        // max over a batch of per-sample means is not valid, so check the
        // batch max against the batch max of bounds instead.
        let mut max_bound = 0.0f64;
        for (x, &l) in batch.inputs.iter().zip(&batch.labels) {
            let single = LabeledDataset::new(vec![x.clone()], vec![l]).unwrap();
            let lb = robust_loss(&net, &single, eps, 1.0, &cert, &cfg).unwrap();
            max_bound = max_bound.max(lb.robust_term);
        }
        assert!(worst <= max_bound + 1e-8);
        assert!(loss.robust_term <= max_bound + 1e-12);
    }

    fn assert_gradients_close(a: &ParameterGradient, b: &ParameterGradient, rtol: f64) {
        let close = |x: f64, y: f64, what: &str| {
            let scale = x.abs().max(y.abs()).max(1e-3);
            assert!(
                (x - y).abs() <= rtol * scale,
                "{what}: {x} vs {y} (rel {})",
                (x - y).abs() / scale
            );
        };
        for i in 0..a.w.rows() {
            for j in 0..a.w.cols() {
                close(a.w.get(i, j), b.w.get(i, j), "w");
            }
        }
        for i in 0..a.u.rows() {
            for j in 0..a.u.cols() {
                close(a.u.get(i, j), b.u.get(i, j), "u");
            }
        }
        for (x, y) in a.b.iter().zip(&b.b) {
            close(*x, *y, "b");
        }
        for i in 0..a.c.rows() {
            for j in 0..a.c.cols() {
                close(a.c.get(i, j), b.c.get(i, j), "c");
            }
        }
        for (x, y) in a.c_bias.iter().zip(&b.c_bias) {
            close(*x, *y, "c_bias");
        }
    }

    #[test]
    fn gradient_zero_w_tanh_matches_closed_form() {
        // With W = 0 the fixed point is z = tanh(U x + b) explicitly, and the
        // nominal gradient has the usual one-layer backprop form.
        let mut rng = ChaCha8Rng::seed_from_u64(73);
        let (mut net, _) = random_smooth_net(&mut rng, 4, 2, 3, Activation::Tanh);
        net.w = Matrix::zeros(4, 4);
        let cert = wellposedness_certificate(&net, 1e-12).unwrap();
        let batch = small_batch(&mut rng, 2, 3, 3);
        let cfg = SolverConfig::with_tol(1e-13);
        let got = loss_gradient(
            &net,
            &batch,
            0.0,
            0.0,
            &cert,
            &cfg,
            GradientMode::ImplicitFunction,
        )
        .unwrap();

        let mut expect_c = Matrix::zeros(3, 4);
        let mut expect_cb = [0.0; 3];
        let mut expect_u = Matrix::zeros(4, 2);
        let mut expect_b = [0.0; 4];
        for (x, &l) in batch.inputs.iter().zip(&batch.labels) {
            let pre = {
                let mut p = net.u.matvec(x);
                for (pi, bi) in p.iter_mut().zip(&net.b) {
                    *pi += bi;
                }
                p
            };
            let z: Vec<f64> = pre.iter().map(|v| v.tanh()).collect();
            let y = net.output(&z);
            let mut g = softmax(&y);
            g[l] -= 1.0;
            for i in 0..3 {
                for j in 0..4 {
                    expect_c.set(i, j, expect_c.get(i, j) + g[i] * z[j]);
                }
                expect_cb[i] += g[i];
            }
            let back = net.c.matvec_transpose(&g);
            for i in 0..4 {
                let slope = 1.0 - z[i] * z[i];
                let p = back[i] * slope;
                for j in 0..2 {
                    expect_u.set(i, j, expect_u.get(i, j) + p * x[j]);
                }
                expect_b[i] += p;
            }
        }
        let scale = 1.0 / batch.len() as f64;
        let expect = ParameterGradient {
            w: got.w.clone(), // W gradient not checked by this closed form
            u: expect_u.map(|v| v * scale),
            b: expect_b.iter().map(|v| v * scale).collect(),
            c: expect_c.map(|v| v * scale),
            c_bias: expect_cb.iter().map(|v| v * scale).collect(),
        };
        assert_gradients_close(&got, &expect, 1e-9);
    }

    #[test]
    fn implicit_gradient_matches_finite_differences_nominal() {
        let mut rng = ChaCha8Rng::seed_from_u64(74);
        let (net, cert) = random_smooth_net(&mut rng, 5, 2, 3, Activation::Tanh);
        let batch = small_batch(&mut rng, 2, 3, 3);
        let cfg = SolverConfig::with_tol(1e-13);
        let implicit = loss_gradient(
            &net,
            &batch,
            0.0,
            0.0,
            &cert,
            &cfg,
            GradientMode::ImplicitFunction,
        )
        .unwrap();
        let fd = loss_gradient(
            &net,
            &batch,
            0.0,
            0.0,
            &cert,
            &cfg,
            GradientMode::FiniteDifference,
        )
        .unwrap();
        assert_gradients_close(&implicit, &fd, 1e-4);
    }

    #[test]
    fn implicit_gradient_matches_finite_differences_robust() {
        let mut rng = ChaCha8Rng::seed_from_u64(75);
        for trial in 0..3 {
            let (net, cert) = random_smooth_net(&mut rng, 5, 2, 3, Activation::Tanh);
            let batch = small_batch(&mut rng, 2, 3, 2);
            let cfg = SolverConfig::with_tol(1e-13);
            let kappa = [0.4, 0.75, 1.0][trial];
            let implicit = loss_gradient(
                &net,
                &batch,
                0.07,
                kappa,
                &cert,
                &cfg,
                GradientMode::ImplicitFunction,
            )
            .unwrap();
            let fd = loss_gradient(
                &net,
                &batch,
                0.07,
                kappa,
                &cert,
                &cfg,
                GradientMode::FiniteDifference,
            )
            .unwrap();
            assert_gradients_close(&implicit, &fd, 1e-4);
        }
    }

    #[test]
    fn projection_examples() {
        let eta = PositiveWeight::ones(2);
        // Already satisfying: unchanged bitwise.
        let w = Matrix::from_rows(&[vec![-1.0, 0.25], vec![0.1, -0.5]]).unwrap();
        let out = project_measure_constraint(&w, &eta, 0.0).unwrap();
        assert_eq!(out, w);

        // Identity with gamma = 0 collapses to zero.
        let out = project_measure_constraint(&Matrix::identity(3), &PositiveWeight::ones(3), 0.0)
            .unwrap();
        assert_eq!(out, Matrix::zeros(3, 3));
    }

    #[test]
    fn projection_meets_gamma_on_random_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(76);
        for _ in 0..30 {
            let n = rng.gen_range(2..7);
            let w =
                Matrix::new(n, n, (0..n * n).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
            let eta =
                PositiveWeight::new((0..n).map(|_| rng.gen_range(0.2..3.0)).collect()).unwrap();
            for gamma in [0.5, 0.0, -0.5] {
                let out = project_measure_constraint(&w, &eta, gamma).unwrap();
                let mu = weighted_matrix_measure(&out, &eta).unwrap();
                assert!(mu <= gamma + 1e-12, "mu {mu} above gamma {gamma}");
                // Satisfied rows preserved bitwise.
                for i in 0..n {
                    let mut rho = w.get(i, i);
                    for j in 0..n {
                        if j != i {
                            rho += (eta.as_slice()[j] / eta.as_slice()[i]) * w.get(i, j).abs();
                        }
                    }
                    if rho <= gamma {
                        assert_eq!(out.row(i), w.row(i));
                    }
                }
            }
        }
    }

    #[test]
    fn zero_epochs_returns_projected_initial_network() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let (net, _) = random_smooth_net(&mut rng, 4, 2, 2, Activation::Relu);
        let ds = small_batch(&mut rng, 2, 2, 10);
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let outcome = train(&net, &ds, &cfg).unwrap();
        assert!(outcome.history.is_empty());
        assert_eq!(outcome.network.u, net.u);
        assert_eq!(outcome.network.c, net.c);
        let mu = weighted_matrix_measure(&outcome.network.w, outcome.certificate.eta()).unwrap();
        assert!(mu <= cfg.gamma + 1e-10);
    }

    #[test]
    fn training_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(78);
        let (net, _) = random_smooth_net(&mut rng, 6, 2, 2, Activation::Relu);
        let ds = generate_toy(
            ToyGenerator::GaussianClusters {
                classes: 2,
                separation: 1.2,
                spread: 0.3,
            },
            40,
            3,
        )
        .unwrap();
        let cfg = TrainConfig {
            epochs: 6,
            warmup: (2, 2),
            learning_rate: 0.2,
            ..TrainConfig::default()
        };
        let a = train(&net, &ds, &cfg).unwrap();
        let b = train(&net, &ds, &cfg).unwrap();
        assert_eq!(a.history.len(), b.history.len());
        for (x, y) in a.history.iter().zip(&b.history) {
            assert_eq!(x, y);
        }
        assert_eq!(a.network, b.network);
    }

    #[test]
    fn constraint_holds_after_every_epoch() {
        let mut rng = ChaCha8Rng::seed_from_u64(79);
        let (net, _) = random_smooth_net(&mut rng, 6, 2, 2, Activation::Relu);
        let ds = generate_toy(
            ToyGenerator::GaussianClusters {
                classes: 2,
                separation: 1.2,
                spread: 0.3,
            },
            30,
            5,
        )
        .unwrap();
        let cfg = TrainConfig {
            epochs: 8,
            warmup: (2, 3),
            learning_rate: 0.3,
            ..TrainConfig::default()
        };
        let outcome = train(&net, &ds, &cfg).unwrap();
        assert_eq!(outcome.history.len(), 8);
        for rec in &outcome.history {
            assert!(
                rec.measure <= cfg.gamma + 1e-10,
                "epoch {} measure {}",
                rec.epoch,
                rec.measure
            );
        }
    }

    #[test]
    fn nominal_training_separates_easy_clusters() {
        let mut rng = ChaCha8Rng::seed_from_u64(80);
        let (net, _) = random_smooth_net(&mut rng, 6, 2, 2, Activation::Relu);
        let ds = generate_toy(
            ToyGenerator::GaussianClusters {
                classes: 2,
                separation: 1.5,
                spread: 0.25,
            },
            60,
            7,
        )
        .unwrap();
        let cfg = TrainConfig {
            epsilon_test: 0.1,
            kappa_nom: 0.0,
            epochs: 40,
            warmup: (40, 0),
            learning_rate: 0.5,
            ..TrainConfig::default()
        };
        let outcome = train(&net, &ds, &cfg).unwrap();
        let last = outcome.history.last().unwrap();
        assert!(
            last.clean_accuracy >= 0.999,
            "clean accuracy {}",
            last.clean_accuracy
        );
    }
}
