//! Well-posedness certification and the damped fixed-point iterations that
//! evaluate implicit networks and their interval embeddings.
//!
//! A network is well posed once some positive weight vector `eta` makes the
//! weighted infinity measure of `W` smaller than one. The certificate stores
//! that pair and the largest admissible damping factor; both solvers then run
//! the averaged iteration `z <- (1 - alpha) z + alpha * N(z)`, which contracts
//! at rate `1 - alpha (1 - mu^+)` in the `eta`-weighted norm.

use crate::error::{Error, Result};
use crate::linalg::{
    metzler_power_shift, power_step, solve_linear, weighted_inf_norm, weighted_matrix_measure,
    Matrix, PositiveWeight,
};
use crate::network::ImplicitNetwork;

/// Damping factor selection for the averaged iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Alpha {
    /// Use the certificate's largest admissible factor.
    Auto,
    /// Fixed factor in (0, 1]; must not exceed the certificate's limit.
    Fixed(f64),
}

/// Solver configuration. The tolerance applies to the map residual measured
/// in the certificate's weighted infinity norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub alpha: Alpha,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 10_000,
            alpha: Alpha::Auto,
        }
    }
}

impl SolverConfig {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || !self.tol.is_finite() {
            return Err(Error::Config("solver tol must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("solver max_iter must be >= 1".into()));
        }
        if let Alpha::Fixed(a) = self.alpha {
            if !(a > 0.0 && a <= 1.0) {
                return Err(Error::Config(format!("alpha must lie in (0, 1], got {a}")));
            }
        }
        Ok(())
    }
}

/// Proof object for well-posedness: `eta > 0` with weighted measure `mu < 1`,
/// plus the largest damping factor admitted by the diagonal of `W`.
#[derive(Debug, Clone, PartialEq)]
pub struct WellposednessCertificate {
    eta: PositiveWeight,
    mu: f64,
    alpha_star: f64,
}

impl WellposednessCertificate {
    /// Weight vector of the certified norm.
    pub fn eta(&self) -> &PositiveWeight {
        &self.eta
    }

    /// Weighted infinity measure of `W` under `eta` (< 1).
    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// Largest admissible damping factor `1 / (1 - min_i min(W_ii, 0))`.
    pub fn alpha_star(&self) -> f64 {
        self.alpha_star
    }

    /// Contraction rate of the averaged iteration at damping `alpha`.
    pub fn contraction_rate(&self, alpha: f64) -> f64 {
        1.0 - alpha * (1.0 - self.mu.max(0.0))
    }

    /// Builds a certificate from an explicitly supplied weight vector.
    pub fn from_weights(net: &ImplicitNetwork, eta: PositiveWeight) -> Result<Self> {
        if eta.dim() != net.hidden_dim() {
            return Err(Error::DimensionMismatch(format!(
                "eta has dim {}, expected {}",
                eta.dim(),
                net.hidden_dim()
            )));
        }
        let mu = weighted_matrix_measure(&net.w, &eta)?;
        if mu >= 1.0 {
            return Err(Error::NoCertificate { mu });
        }
        Ok(Self {
            eta,
            mu,
            alpha_star: alpha_star_of(&net.w),
        })
    }
}

fn alpha_star_of(w: &Matrix) -> f64 {
    let n = w.rows();
    let min_neg_diag = (0..n).map(|i| w.get(i, i).min(0.0)).fold(0.0f64, f64::min);
    1.0 / (1.0 - min_neg_diag)
}

/// Power-iterates toward the Perron vector of the Metzler majorant of `w` and
/// returns the best weight vector found with its exactly evaluated measure
/// (which may be >= 1). Training reuses this to refresh weights even before
/// the constraint projection restores well-posedness.
pub(crate) fn majorant_weight_search(w: &Matrix, tol: f64) -> Result<(PositiveWeight, f64)> {
    let n = w.rows();
    let majorant = w.metzler_majorant()?;
    if majorant.max_abs() == 0.0 {
        return Ok((PositiveWeight::ones(n), 0.0));
    }

    let tau = metzler_power_shift(&majorant);
    let mut shifted = majorant;
    for i in 0..n {
        let v = shifted.get(i, i);
        shifted.set(i, i, v + tau);
    }

    const MAX_ITER: usize = 20_000;
    const MU_CHECK_EVERY: usize = 32;
    let mut x = vec![1.0; n];
    let mut scratch = vec![0.0; n];
    let mut lambda_prev = f64::INFINITY;
    let mut mu_prev = f64::INFINITY;
    let mut best: Option<(Vec<f64>, f64)> = None;
    for it in 1..=MAX_ITER {
        let (lambda, delta_vec) = power_step(&shifted, &mut x, &mut scratch);
        if lambda == 0.0 {
            break;
        }
        let delta_lam = (lambda - lambda_prev).abs();
        lambda_prev = lambda;
        if it > 1 && delta_lam <= tol * (1.0 + lambda.abs()) && delta_vec <= tol {
            break;
        }
        if it % MU_CHECK_EVERY == 0 {
            if let Ok(eta) = PositiveWeight::new(x.clone()) {
                let mu = weighted_matrix_measure(w, &eta)?;
                if best.as_ref().is_none_or(|(_, m)| mu < *m) {
                    best = Some((x.clone(), mu));
                }
                // Comfortably certified and no longer improving: stop early.
                // This is how strictly-triangular majorants terminate, where
                // the Perron limit itself is degenerate.
                if mu <= 0.95 && (mu_prev - mu) <= 1e-6 * (1.0 + mu.abs()) {
                    break;
                }
                mu_prev = mu;
            }
        }
    }

    let mut result: Option<(Vec<f64>, f64)> = None;
    if let Ok(eta) = PositiveWeight::new(x.clone()) {
        let mu = weighted_matrix_measure(w, &eta)?;
        result = Some((x, mu));
    }
    if let Some((vec, mu)) = best {
        if result.as_ref().is_none_or(|(_, m)| mu < *m) {
            result = Some((vec, mu));
        }
    }
    match result {
        Some((vec, mu)) => Ok((PositiveWeight::new(vec)?, mu)),
        None => Ok((
            PositiveWeight::ones(n),
            weighted_matrix_measure(w, &PositiveWeight::ones(n))?,
        )),
    }
}

/// Searches for a well-posedness certificate.
///
/// Strategy: power-iterate toward the Perron vector of the Metzler majorant of
/// `W` (diagonal kept, off-diagonal absolute values), whose dominant
/// eigenvalue is the smallest achievable measure. The measure of the returned
/// vector is evaluated exactly, so intermediate iterates are already valid
/// certificates once their measure clears 1; when the iteration cannot settle
/// (strictly triangular majorants in particular) an M-matrix solve supplies
/// the weights instead.
pub fn wellposedness_certificate(
    net: &ImplicitNetwork,
    tol: f64,
) -> Result<WellposednessCertificate> {
    if !(tol > 0.0) {
        return Err(Error::Config("certificate tol must be positive".into()));
    }
    let w = &net.w;
    let n = net.hidden_dim();
    let alpha_star = alpha_star_of(w);

    let (eta, mu) = majorant_weight_search(w, tol)?;
    if mu < 1.0 {
        return Ok(WellposednessCertificate {
            eta,
            mu,
            alpha_star,
        });
    }
    let mut best_mu = mu;

    // M-matrix fallback: for theta above the majorant's dominant eigenvalue,
    // (theta I - M) eta = 1 has a strictly positive solution whose measure is
    // below theta.
    let majorant = w.metzler_majorant()?;
    for theta in [0.5, 0.9, 0.99, 1.0 - 1e-6] {
        let mut shifted_neg = majorant.map(|v| -v);
        for i in 0..n {
            let v = shifted_neg.get(i, i);
            shifted_neg.set(i, i, v + theta);
        }
        let Ok(eta_vec) = solve_linear(&shifted_neg, &vec![1.0; n]) else {
            continue;
        };
        if eta_vec.iter().any(|&v| !(v > 0.0)) {
            continue;
        }
        let peak = eta_vec.iter().fold(0.0f64, |m, v| m.max(*v));
        let eta = PositiveWeight::new(eta_vec.iter().map(|v| v / peak).collect())?;
        let mu = weighted_matrix_measure(w, &eta)?;
        if mu < 1.0 {
            return Ok(WellposednessCertificate {
                eta,
                mu,
                alpha_star,
            });
        }
        best_mu = best_mu.min(mu);
    }

    Err(Error::NoCertificate { mu: best_mu })
}

/// Convergence data for one fixed-point solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveDiagnostics {
    pub iterations: usize,
    pub final_residual: f64,
    /// Largest observed ratio of successive weighted residuals.
    pub contraction_estimate: f64,
}

/// Solution of the point fixed-point problem.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointResult {
    pub z_star: Vec<f64>,
    pub iterations: usize,
    pub final_residual: f64,
    pub contraction_estimate: f64,
}

/// Lower/upper hidden-state bounds from the embedded system.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedFixedPoint {
    pub z_lo: Vec<f64>,
    pub z_hi: Vec<f64>,
    pub diagnostics: SolveDiagnostics,
}

fn resolve_alpha(cfg: &SolverConfig, cert: &WellposednessCertificate) -> Result<f64> {
    match cfg.alpha {
        Alpha::Auto => Ok(cert.alpha_star()),
        Alpha::Fixed(a) => {
            if a > cert.alpha_star() + 1e-12 {
                return Err(Error::Config(format!(
                    "alpha {a} exceeds the admissible limit {}",
                    cert.alpha_star()
                )));
            }
            Ok(a)
        }
    }
}

/// Tracks the worst residual-to-residual ratio, ignoring residuals small
/// enough for rounding noise to dominate the quotient.
struct RatioTracker {
    floor: f64,
    prev: Option<f64>,
    worst: f64,
}

impl RatioTracker {
    fn new(tol: f64) -> Self {
        Self {
            floor: 100.0 * tol,
            prev: None,
            worst: 0.0,
        }
    }

    fn observe(&mut self, residual: f64, scale: f64) {
        let floor = self.floor.max(1e-13 * (1.0 + scale));
        if let Some(prev) = self.prev {
            if prev >= floor {
                self.worst = self.worst.max(residual / prev);
            }
        }
        self.prev = Some(residual);
    }
}

/// Solves `z = act(W z + U x + b)` by the damped iteration from `z = 0`.
pub fn solve_fixed_point(
    net: &ImplicitNetwork,
    x: &[f64],
    cert: &WellposednessCertificate,
    cfg: &SolverConfig,
) -> Result<FixedPointResult> {
    cfg.validate()?;
    if x.len() != net.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "input has dim {}, expected {}",
            x.len(),
            net.input_dim()
        )));
    }
    let n = net.hidden_dim();
    if cert.eta().dim() != n {
        return Err(Error::DimensionMismatch(
            "certificate dimension does not match network".into(),
        ));
    }
    let alpha = resolve_alpha(cfg, cert)?;
    let eta = cert.eta();

    let mut drive = net.u.matvec(x);
    for (d, b) in drive.iter_mut().zip(&net.b) {
        *d += b;
    }

    let mut z = vec![0.0; n];
    let mut pre = vec![0.0; n];
    let mut ratios = RatioTracker::new(cfg.tol);
    let mut residual = f64::INFINITY;
    for it in 1..=cfg.max_iter {
        net.w.matvec_into(&z, &mut pre);
        for i in 0..n {
            pre[i] = net.activation.eval(pre[i] + drive[i]);
        }
        residual = weighted_inf_norm(
            &z.iter().zip(&pre).map(|(a, b)| a - b).collect::<Vec<_>>(),
            eta,
        );
        ratios.observe(residual, weighted_inf_norm(&z, eta));
        if residual <= cfg.tol {
            return Ok(FixedPointResult {
                z_star: z,
                iterations: it,
                final_residual: residual,
                contraction_estimate: ratios.worst,
            });
        }
        for i in 0..n {
            z[i] = (1.0 - alpha) * z[i] + alpha * pre[i];
        }
    }
    Err(Error::MaxIterExceeded {
        max_iter: cfg.max_iter,
        residual,
    })
}

/// Solves the doubled embedded fixed point for an input box, returning
/// componentwise hidden-state bounds `z_lo <= z_hi`.
pub fn solve_embedded_fixed_point(
    net: &ImplicitNetwork,
    x_lo: &[f64],
    x_hi: &[f64],
    cert: &WellposednessCertificate,
    cfg: &SolverConfig,
) -> Result<EmbeddedFixedPoint> {
    cfg.validate()?;
    if x_lo.len() != net.input_dim() || x_hi.len() != net.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "input box has dims {}/{}, expected {}",
            x_lo.len(),
            x_hi.len(),
            net.input_dim()
        )));
    }
    if let Some(idx) = x_lo.iter().zip(x_hi).position(|(lo, hi)| lo > hi) {
        return Err(Error::InvalidBox { index: idx });
    }
    let n = net.hidden_dim();
    if cert.eta().dim() != n {
        return Err(Error::DimensionMismatch(
            "certificate dimension does not match network".into(),
        ));
    }
    let alpha = resolve_alpha(cfg, cert)?;
    let eta = cert.eta();

    let w_mzl = net.w.metzler_part()?;
    let w_rem = net.w.nonmetzler_part()?;
    let u_pos = net.u.positive_part();
    let u_neg = net.u.negative_part();

    let mut drive_lo = u_pos.matvec(x_lo);
    let tmp = u_neg.matvec(x_hi);
    for i in 0..n {
        drive_lo[i] += tmp[i] + net.b[i];
    }
    let mut drive_hi = u_pos.matvec(x_hi);
    let tmp = u_neg.matvec(x_lo);
    for i in 0..n {
        drive_hi[i] += tmp[i] + net.b[i];
    }

    let mut z_lo = vec![0.0; n];
    let mut z_hi = vec![0.0; n];
    let mut pre_lo = vec![0.0; n];
    let mut pre_hi = vec![0.0; n];
    let mut cross = vec![0.0; n];
    let mut ratios = RatioTracker::new(cfg.tol);
    let mut residual = f64::INFINITY;
    let mut done = false;
    let mut iterations = cfg.max_iter;
    for it in 1..=cfg.max_iter {
        w_mzl.matvec_into(&z_lo, &mut pre_lo);
        w_rem.matvec_into(&z_hi, &mut cross);
        for i in 0..n {
            pre_lo[i] = net.activation.eval(pre_lo[i] + cross[i] + drive_lo[i]);
        }
        w_mzl.matvec_into(&z_hi, &mut pre_hi);
        w_rem.matvec_into(&z_lo, &mut cross);
        for i in 0..n {
            pre_hi[i] = net.activation.eval(pre_hi[i] + cross[i] + drive_hi[i]);
        }
        let r_lo = weighted_inf_norm(
            &z_lo
                .iter()
                .zip(&pre_lo)
                .map(|(a, b)| a - b)
                .collect::<Vec<_>>(),
            eta,
        );
        let r_hi = weighted_inf_norm(
            &z_hi
                .iter()
                .zip(&pre_hi)
                .map(|(a, b)| a - b)
                .collect::<Vec<_>>(),
            eta,
        );
        residual = r_lo.max(r_hi);
        let scale = weighted_inf_norm(&z_lo, eta).max(weighted_inf_norm(&z_hi, eta));
        ratios.observe(residual, scale);
        if residual <= cfg.tol {
            iterations = it;
            done = true;
            break;
        }
        for i in 0..n {
            z_lo[i] = (1.0 - alpha) * z_lo[i] + alpha * pre_lo[i];
            z_hi[i] = (1.0 - alpha) * z_hi[i] + alpha * pre_hi[i];
        }
    }
    if !done {
        return Err(Error::MaxIterExceeded {
            max_iter: cfg.max_iter,
            residual,
        });
    }
    // Rounding can leave dust-level inversions on degenerate boxes.
    for i in 0..n {
        if z_lo[i] > z_hi[i] {
            let mid = 0.5 * (z_lo[i] + z_hi[i]);
            z_lo[i] = mid;
            z_hi[i] = mid;
        }
    }
    Ok(EmbeddedFixedPoint {
        z_lo,
        z_hi,
        diagnostics: SolveDiagnostics {
            iterations,
            final_residual: residual,
            contraction_estimate: ratios.worst,
        },
    })
}
