//! Matrix-free linear measurement operators and observation noise.

mod noise;
mod ops;

use std::fmt::Debug;
use std::sync::Arc;

pub use noise::{observe, NoiseModel};
pub use ops::{
    blur_operator, compose, downsample_operator, gaussian_kernel, half_mask, identity, mask_operator,
    random_mask, scale_operator, Blur, Composed, Downsample, Identity, Mask, Scale,
};

use crate::error::Result;

/// A linear map `A: R^n -> R^d` together with its exact transpose.
pub trait LinearOperator: Debug + Send + Sync {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn apply(&self, x: &[f64]) -> Result<Vec<f64>>;
    fn adjoint(&self, y: &[f64]) -> Result<Vec<f64>>;
    /// Short description used in result rows and profile fingerprints.
    fn name(&self) -> String;
}

pub type Operator = Arc<dyn LinearOperator>;

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{standard_normal_vec, stream_rng};
    use proptest::prelude::*;

    fn norm(v: &[f64]) -> f64 {
        dot(v, v).sqrt()
    }

    fn adjoint_gap(op: &dyn LinearOperator, seed: u64) -> f64 {
        let mut rng = stream_rng(seed, 0);
        let x = standard_normal_vec(&mut rng, op.input_dim());
        let y = standard_normal_vec(&mut rng, op.output_dim());
        let lhs = dot(&op.apply(&x).unwrap(), &y);
        let rhs = dot(&x, &op.adjoint(&y).unwrap());
        (lhs - rhs).abs() / (norm(&x) * norm(&y))
    }

    fn catalogue() -> Vec<Operator> {
        let blur = blur_operator(16, gaussian_kernel(1.0).unwrap()).unwrap();
        let mask = half_mask(16).unwrap();
        vec![
            identity(16),
            mask.clone(),
            random_mask(16, 0.5, 2, 3).unwrap(),
            downsample_operator(16, 4).unwrap(),
            blur.clone(),
            blur_operator(8, vec![0.25, 0.5, 0.25]).unwrap(),
            scale_operator(16, 40.0).unwrap(),
            compose(mask.clone(), blur.clone()).unwrap(),
            compose(downsample_operator(8, 2).unwrap(), compose(mask, blur).unwrap()).unwrap(),
        ]
    }

    #[test]
    fn adjoint_identity_holds_for_catalogue() {
        for op in catalogue() {
            for seed in 0..100 {
                assert!(adjoint_gap(op.as_ref(), seed) <= 1e-10, "{}", op.name());
            }
        }
    }

    #[test]
    fn composition_is_associative() {
        let a = blur_operator(16, vec![0.25, 0.5, 0.25]).unwrap();
        let b = half_mask(16).unwrap();
        let c = downsample_operator(8, 2).unwrap();
        let left = compose(c.clone(), compose(b.clone(), a.clone()).unwrap()).unwrap();
        let right = compose(compose(c, b).unwrap(), a).unwrap();
        let mut rng = stream_rng(8, 0);
        let x = standard_normal_vec(&mut rng, 16);
        let (l, r) = (left.apply(&x).unwrap(), right.apply(&x).unwrap());
        assert!(l.iter().zip(&r).all(|(u, v)| (u - v).abs() <= 1e-12));
    }

    #[test]
    fn compose_with_identity() {
        let a = blur_operator(16, gaussian_kernel(0.8).unwrap()).unwrap();
        let ia = compose(identity(16), a.clone()).unwrap();
        let mut rng = stream_rng(2, 0);
        let x = standard_normal_vec(&mut rng, 16);
        assert_eq!(ia.apply(&x).unwrap(), a.apply(&x).unwrap());
        assert!(compose(identity(7), a).is_err());
    }

    proptest! {
        #[test]
        fn random_masks_are_adjoint(n in 2usize..40, p in 0.0f64..0.9, seed in 0u64..1000) {
            if let Ok(op) = random_mask(n, p, 1, seed) {
                prop_assert!(adjoint_gap(op.as_ref(), seed) <= 1e-10);
            }
        }
    }
}
