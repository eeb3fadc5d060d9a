use crate::scalar::{dot, l2, Scalar};

/// Splits `a3d` into its Euclidean projection onto `a2d` (the part shared
/// with the 2D stream) and the orthogonal residual (the part unique to 3D).
///
/// The residual is re-orthogonalized once (classical Gram-Schmidt run
/// twice), and a residual at rounding-noise level is snapped to zero so that
/// collinear inputs report no 3D-unique attention. `para + ortho`
/// reconstructs `a3d` to within a few ulps. A zero `a2d` yields `para = 0`,
/// `ortho = a3d`.
pub fn decompose_attention<T: Scalar>(a3d: &[T], a2d: &[T]) -> (Vec<T>, Vec<T>) {
    assert_eq!(
        a3d.len(),
        a2d.len(),
        "attention vectors must have equal length"
    );
    let denom = dot(a2d, a2d);
    if denom <= T::zero() {
        return (vec![T::zero(); a3d.len()], a3d.to_vec());
    }
    let mut coef = dot(a3d, a2d) / denom;
    let mut ortho: Vec<T> = a3d.iter().zip(a2d).map(|(&y, &x)| y - coef * x).collect();
    let fix = dot(&ortho, a2d) / denom;
    if fix != T::zero() {
        coef += fix;
        ortho.iter_mut().zip(a2d).for_each(|(o, &x)| *o -= fix * x);
    }
    let noise = T::of(8.0 * (a3d.len() as f64 + 1.0)) * T::epsilon() * l2(a3d);
    if l2(&ortho) <= noise {
        ortho.iter_mut().for_each(|o| *o = T::zero());
    }
    let para = a2d.iter().map(|&x| coef * x).collect();
    (para, ortho)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Scalar least-squares coefficient by bisection on the sign of
    /// d/dc ‖a3d − c·a2d‖².
    fn brute_force_coef(a3d: &[f64], a2d: &[f64]) -> f64 {
        let grad = |c: f64| -> f64 { a3d.iter().zip(a2d).map(|(y, x)| (c * x - y) * x).sum() };
        let bound = l2(a3d) / l2(a2d) + 1.0;
        let (mut lo, mut hi) = (-bound, bound);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if grad(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn collinear_has_no_orthogonal_part() {
        let (p, o) = decompose_attention(&[2.0, 0.0], &[1.0, 0.0]);
        assert_eq!((p, o), (vec![2.0, 0.0], vec![0.0, 0.0]));
    }

    #[test]
    fn orthogonal_has_no_parallel_part() {
        let (p, o) = decompose_attention(&[0.0, 3.0], &[1.0, 0.0]);
        assert_eq!((p, o), (vec![0.0, 0.0], vec![0.0, 3.0]));
    }

    #[test]
    fn mixed_case_matches_least_squares() {
        let (p, o) = decompose_attention(&[1.0, 1.0], &[1.0, 0.0]);
        assert_eq!((p.clone(), o), (vec![1.0, 0.0], vec![0.0, 1.0]));
        let c = brute_force_coef(&[1.0, 1.0], &[1.0, 0.0]);
        assert!((c - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_reference_vector() {
        let (p, o) = decompose_attention(&[0.5, 0.25], &[0.0, 0.0]);
        assert_eq!((p, o), (vec![0.0, 0.0], vec![0.5, 0.25]));
    }

    proptest! {
        #[test]
        fn reconstructs_and_is_orthogonal(
            pairs in prop::collection::vec((0.0f64..10.0, 0.0f64..10.0), 1..64),
        ) {
            let (a3d, a2d): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let (p, o) = decompose_attention(&a3d, &a2d);
            let scale = l2(&a3d);
            for i in 0..a3d.len() {
                prop_assert!((p[i] + o[i] - a3d[i]).abs() <= 1e-9 * scale.max(f64::MIN_POSITIVE));
            }
            let (np, no) = (l2(&p), l2(&o));
            prop_assert!(dot(&p, &o).abs() <= 1e-9 * np * no);
        }

        #[test]
        fn scaled_copy_is_fully_parallel(a2d in prop::collection::vec(0.01f64..10.0, 1..32), c in 0.0f64..5.0) {
            let a3d: Vec<f64> = a2d.iter().map(|x| c * x).collect();
            let (_, o) = decompose_attention(&a3d, &a2d);
            prop_assert!(l2(&o) <= 1e-12 * (1.0 + l2(&a3d)));
        }
    }
}
