//! Rotary position embedding over consecutive dimension pairs.

use ndarray::{Array2, ArrayView2, ArrayViewMut2};

use crate::error::{invalid, Result};

pub const ROPE_BASE: f64 = 10_000.0;

/// Rotates each row by its position: pair `(2i, 2i+1)` turns by
/// `position · base^(−2i/dim)`.
pub fn rope_rotate(vectors: ArrayView2<f64>, positions: &[f64]) -> Result<Array2<f64>> {
    if !vectors.ncols().is_multiple_of(2) {
        return invalid(format!("rope needs an even dimension, got {}", vectors.ncols()));
    }
    if vectors.nrows() != positions.len() {
        return invalid(format!(
            "rope: {} rows but {} positions",
            vectors.nrows(),
            positions.len()
        ));
    }
    let mut out = vectors.to_owned();
    rotate_in_place(out.view_mut(), positions, false);
    Ok(out)
}

/// In-place rotation; `inverse` rotates by the negated angle (the transpose).
pub(crate) fn rotate_in_place(mut m: ArrayViewMut2<f64>, positions: &[f64], inverse: bool) {
    let dim = m.ncols();
    let half = dim / 2;
    let sign = if inverse { -1.0 } else { 1.0 };
    for (mut row, &pos) in m.rows_mut().into_iter().zip(positions) {
        for i in 0..half {
            let freq = ROPE_BASE.powf(-((2 * i) as f64) / dim as f64);
            let (s, c) = (sign * pos * freq).sin_cos();
            let (a, b) = (row[2 * i], row[2 * i + 1]);
            row[2 * i] = a * c - b * s;
            row[2 * i + 1] = a * s + b * c;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::standard_normal;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dot(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
        a.dot(&b)
    }

    #[test]
    fn position_zero_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = standard_normal(&mut rng, 3, 16);
        assert_eq!(rope_rotate(v.view(), &[0.0; 3]).unwrap(), v);
    }

    #[test]
    fn relative_position_property() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q = standard_normal(&mut rng, 1, 32);
        let k = standard_normal(&mut rng, 1, 32);
        let score = |p1: f64, p2: f64| {
            let a = rope_rotate(q.view(), &[p1]).unwrap();
            let b = rope_rotate(k.view(), &[p2]).unwrap();
            dot(a.row(0), b.row(0))
        };
        assert!((score(3.0, 1.0) - score(10.0, 8.0)).abs() < 1e-9);
    }

    #[test]
    fn shape_errors() {
        let v = Array2::<f64>::zeros((2, 5));
        assert!(rope_rotate(v.view(), &[0.0, 1.0]).is_err());
        let v = Array2::<f64>::zeros((2, 4));
        assert!(rope_rotate(v.view(), &[0.0]).is_err());
    }

    #[test]
    fn inverse_undoes_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = standard_normal(&mut rng, 4, 8);
        let pos = [-2.0, -1.0, 0.0, 7.0];
        let mut r = rope_rotate(v.view(), &pos).unwrap();
        rotate_in_place(r.view_mut(), &pos, true);
        let err = (&r - &v).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
        assert!(err < 1e-12);
    }

    proptest! {
        #[test]
        fn norm_preserved(seed in any::<u64>(), pos in -500.0f64..500.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v = standard_normal(&mut rng, 1, 16);
            let r = rope_rotate(v.view(), &[pos]).unwrap();
            let n0 = v.row(0).dot(&v.row(0)).sqrt();
            let n1 = r.row(0).dot(&r.row(0)).sqrt();
            prop_assert!((n0 - n1).abs() < 1e-9);
        }

        #[test]
        fn logits_invariant_under_global_shift(seed in any::<u64>(), shift in -100i32..100) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q = standard_normal(&mut rng, 6, 8);
            let k = standard_normal(&mut rng, 6, 8);
            let pos: Vec<f64> = (-2..4).map(f64::from).collect();
            let moved: Vec<f64> = pos.iter().map(|p| p + f64::from(shift)).collect();
            let a = rope_rotate(q.view(), &pos).unwrap().dot(&rope_rotate(k.view(), &pos).unwrap().t());
            let b = rope_rotate(q.view(), &moved).unwrap().dot(&rope_rotate(k.view(), &moved).unwrap().t());
            let err = (&a - &b).mapv(f64::abs).fold(0.0f64, |x, &y| x.max(y));
            prop_assert!(err < 1e-9);
        }
    }
}
