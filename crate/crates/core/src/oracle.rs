//! Brute-force sampling references: inner approximations of the tight
//! inclusion box and empirical Lipschitz quotients.
//!
//! The sampled box is an *inner* approximation of the tight inclusion
//! function (its lower bound is too high, its upper bound too low), so every
//! sound bounding method must contain it. Sampling is deterministic given the
//! plan's seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::reach::IntervalVector;

/// Largest input dimension accepted by the grid strategy.
pub const MAX_GRID_DIM: usize = 6;

/// Largest dimension for which vertex enumeration is exhaustive; above it a
/// seeded sample of corners is used instead.
const MAX_VERTEX_ENUM_DIM: usize = 12;

/// How sample points are drawn from a box.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingStrategy {
    /// Full cartesian grid with `points_per_dim` levels per coordinate.
    Grid { points_per_dim: usize },
    /// All box vertices plus uniform interior samples. Vertices achieve the
    /// exact extrema for affine maps and single monotone layers.
    VerticesPlusUniform { samples: usize },
}

/// Deterministic sampling plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplingPlan {
    pub strategy: SamplingStrategy,
    pub seed: u64,
}

impl SamplingPlan {
    pub fn grid(points_per_dim: usize, seed: u64) -> Self {
        Self {
            strategy: SamplingStrategy::Grid { points_per_dim },
            seed,
        }
    }

    pub fn vertices_plus_uniform(samples: usize, seed: u64) -> Self {
        Self {
            strategy: SamplingStrategy::VerticesPlusUniform { samples },
            seed,
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        match self.strategy {
            SamplingStrategy::Grid { points_per_dim } => {
                if points_per_dim < 2 {
                    return Err(Error::Config("grid needs at least 2 points per dim".into()));
                }
                if dim > MAX_GRID_DIM {
                    return Err(Error::GridDimensionTooLarge {
                        dim,
                        max: MAX_GRID_DIM,
                    });
                }
            }
            SamplingStrategy::VerticesPlusUniform { samples } => {
                if samples < 2 {
                    return Err(Error::Config("need at least 2 samples".into()));
                }
            }
        }
        Ok(())
    }
}

/// Calls `visit` on every sample point of the plan.
fn for_each_sample<E>(
    input: &IntervalVector,
    plan: &SamplingPlan,
    mut visit: impl FnMut(&[f64]) -> std::result::Result<(), E>,
) -> std::result::Result<(), E> {
    let dim = input.dim();
    let lo = input.lo();
    let hi = input.hi();
    match plan.strategy {
        SamplingStrategy::Grid { points_per_dim } => {
            let mut idx = vec![0usize; dim];
            let mut x = vec![0.0; dim];
            loop {
                for j in 0..dim {
                    let t = idx[j] as f64 / (points_per_dim - 1) as f64;
                    x[j] = lo[j] + t * (hi[j] - lo[j]);
                }
                visit(&x)?;
                let mut j = 0;
                loop {
                    if j == dim {
                        return Ok(());
                    }
                    idx[j] += 1;
                    if idx[j] < points_per_dim {
                        break;
                    }
                    idx[j] = 0;
                    j += 1;
                }
            }
        }
        SamplingStrategy::VerticesPlusUniform { samples } => {
            let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
            let mut x = vec![0.0; dim];
            if dim <= MAX_VERTEX_ENUM_DIM {
                for mask in 0..(1u64 << dim) {
                    for j in 0..dim {
                        x[j] = if mask >> j & 1 == 1 { hi[j] } else { lo[j] };
                    }
                    visit(&x)?;
                }
            } else {
                for _ in 0..4 * samples {
                    for j in 0..dim {
                        x[j] = if rng.gen::<bool>() { hi[j] } else { lo[j] };
                    }
                    visit(&x)?;
                }
            }
            for _ in 0..samples {
                for j in 0..dim {
                    x[j] = if lo[j] == hi[j] {
                        lo[j]
                    } else {
                        rng.gen_range(lo[j]..=hi[j])
                    };
                }
                visit(&x)?;
            }
            Ok(())
        }
    }
}

/// Componentwise min/max of `evaluate` over the sample set: an inner
/// approximation of the tight inclusion box.
pub fn sampled_tight_inclusion<F>(
    evaluate: F,
    input: &IntervalVector,
    plan: &SamplingPlan,
) -> Result<IntervalVector>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    plan.validate(input.dim())?;
    let mut evaluate = evaluate;
    let mut lo: Option<Vec<f64>> = None;
    let mut hi: Option<Vec<f64>> = None;
    for_each_sample(input, plan, |x| -> Result<()> {
        let y = evaluate(x)?;
        match (&mut lo, &mut hi) {
            (Some(lo), Some(hi)) => {
                for i in 0..y.len() {
                    lo[i] = lo[i].min(y[i]);
                    hi[i] = hi[i].max(y[i]);
                }
            }
            _ => {
                lo = Some(y.clone());
                hi = Some(y);
            }
        }
        Ok(())
    })?;
    match (lo, hi) {
        (Some(lo), Some(hi)) => IntervalVector::new(lo, hi),
        _ => Err(Error::Config("sampling plan produced no points".into())),
    }
}

/// Largest sampled difference quotient
/// `max ||f(x) - f(y)||_inf / ||x - y||_inf`: a lower bound on the local
/// Lipschitz constant over the box.
pub fn empirical_lipschitz<F>(
    evaluate: F,
    input: &IntervalVector,
    plan: &SamplingPlan,
) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    plan.validate(input.dim())?;
    let mut evaluate = evaluate;
    let mut points: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    for_each_sample(input, plan, |x| -> Result<()> {
        let y = evaluate(x)?;
        points.push((x.to_vec(), y));
        Ok(())
    })?;
    let mut best = 0.0f64;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let dx = points[i]
                .0
                .iter()
                .zip(&points[j].0)
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            if dx <= 0.0 {
                continue;
            }
            let dy = points[i]
                .1
                .iter()
                .zip(&points[j].1)
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            best = best.max(dy / dx);
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;

    fn ok<F: Fn(&[f64]) -> Vec<f64>>(f: F) -> impl FnMut(&[f64]) -> Result<Vec<f64>> {
        move |x| Ok(f(x))
    }

    #[test]
    fn degenerate_box_gives_point_evaluation() {
        let input = IntervalVector::point(&[0.5, -1.0]).unwrap();
        let plan = SamplingPlan::vertices_plus_uniform(10, 1);
        let out =
            sampled_tight_inclusion(ok(|x| vec![x[0] + x[1], x[0] * x[1]]), &input, &plan).unwrap();
        assert_eq!(out.lo(), &[-0.5, -0.5]);
        assert_eq!(out.hi(), &[-0.5, -0.5]);
    }

    #[test]
    fn monotone_scalar_map_hits_endpoints_with_vertices() {
        let input = IntervalVector::new(vec![-1.0], vec![2.0]).unwrap();
        let plan = SamplingPlan::vertices_plus_uniform(20, 2);
        let out = sampled_tight_inclusion(ok(|x| vec![x[0].exp()]), &input, &plan).unwrap();
        assert_eq!(out.lo()[0], (-1.0f64).exp());
        assert_eq!(out.hi()[0], (2.0f64).exp());
    }

    #[test]
    fn affine_map_vertices_match_sign_split_bounds() {
        // For f(x) = A x the tight box is [A+ lo + A- hi, A+ hi + A- lo],
        // and vertex enumeration achieves it exactly.
        let a = Matrix::from_rows(&[vec![1.0, -2.0, 0.5], vec![-1.0, 0.25, 3.0]]).unwrap();
        let input = IntervalVector::new(vec![-0.5, 0.0, 1.0], vec![0.5, 2.0, 1.5]).unwrap();
        let plan = SamplingPlan::vertices_plus_uniform(5, 3);
        let out = sampled_tight_inclusion(ok(|x| a.matvec(x)), &input, &plan).unwrap();
        let lo_expect = {
            let mut v = a.positive_part().matvec(input.lo());
            let t = a.negative_part().matvec(input.hi());
            for i in 0..2 {
                v[i] += t[i];
            }
            v
        };
        let hi_expect = {
            let mut v = a.positive_part().matvec(input.hi());
            let t = a.negative_part().matvec(input.lo());
            for i in 0..2 {
                v[i] += t[i];
            }
            v
        };
        for i in 0..2 {
            assert!((out.lo()[i] - lo_expect[i]).abs() < 1e-12);
            assert!((out.hi()[i] - hi_expect[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_rejects_large_dimension() {
        let input = IntervalVector::linf_ball(&[0.0; 7], 1.0).unwrap();
        let plan = SamplingPlan::grid(3, 0);
        let err = sampled_tight_inclusion(ok(|x| x.to_vec()), &input, &plan).unwrap_err();
        assert!(matches!(err, Error::GridDimensionTooLarge { dim: 7, .. }));
    }

    #[test]
    fn refinement_never_shrinks_the_box() {
        let input = IntervalVector::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
        let f = |x: &[f64]| vec![(x[0] * 3.0).sin() + x[1] * x[1]];
        let coarse = sampled_tight_inclusion(ok(f), &input, &SamplingPlan::grid(3, 0)).unwrap();
        let fine = sampled_tight_inclusion(ok(f), &input, &SamplingPlan::grid(9, 0)).unwrap();
        // The 9-point grid contains the 3-point grid, so the box can only grow.
        assert!(coarse.is_subset_of(&fine, 0.0));
    }

    #[test]
    fn lipschitz_examples() {
        let input = IntervalVector::new(vec![-1.0, 0.0], vec![1.0, 2.0]).unwrap();
        let plan = SamplingPlan::vertices_plus_uniform(30, 7);
        let constant = empirical_lipschitz(ok(|_| vec![3.0, -1.0]), &input, &plan).unwrap();
        assert_eq!(constant, 0.0);
        let identity = empirical_lipschitz(ok(|x| x.to_vec()), &input, &plan).unwrap();
        assert!((1.0 - 1e-6..=1.0 + 1e-12).contains(&identity));
        let double =
            empirical_lipschitz(ok(|x| x.iter().map(|v| 2.0 * v).collect()), &input, &plan)
                .unwrap();
        assert!((double - 2.0).abs() < 1e-9);
    }
}
