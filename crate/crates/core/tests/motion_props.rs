use kdiff::motion::{
    apply_motion, delta_index, flatten_frame, rotation_from_euler, unflatten_frame, CanonicalKeypoints, EulerAngles,
    MotionFrame, LATENT_DIM, NUM_KEYPOINTS,
};
use proptest::prelude::*;

/// Rotation about x, then y, then z applied to a row vector, written out
/// from the elementary trig formulas rather than through matrices.
fn rotate_point(p: [f64; 3], pitch: f64, yaw: f64, roll: f64) -> [f64; 3] {
    // x' = x · R_roll · R_pitch · R_yaw: roll acts first on the row vector.
    let (sr, cr) = roll.to_radians().sin_cos();
    let a = [p[0] * cr - p[1] * sr, p[0] * sr + p[1] * cr, p[2]];
    let (sp, cp) = pitch.to_radians().sin_cos();
    let b = [a[0], a[1] * cp - a[2] * sp, a[1] * sp + a[2] * cp];
    let (sy, cy) = yaw.to_radians().sin_cos();
    [b[0] * cy + b[2] * sy, b[1], -b[0] * sy + b[2] * cy]
}

fn arb_frame() -> impl Strategy<Value = MotionFrame> {
    (
        0.5f64..2.0,
        prop::array::uniform3(-179.0f64..179.0),
        prop::array::uniform3(-1.0f64..1.0),
        prop::collection::vec(prop::array::uniform3(-0.2f64..0.2), NUM_KEYPOINTS),
    )
        .prop_map(|(scale, rot, translation, delta)| MotionFrame {
            scale,
            rotation: EulerAngles::new(rot[0], rot[1], rot[2]),
            translation,
            delta: delta.try_into().unwrap(),
        })
}

fn arb_canonical() -> impl Strategy<Value = CanonicalKeypoints> {
    prop::collection::vec(prop::array::uniform3(-1.0f64..1.0), NUM_KEYPOINTS)
        .prop_map(|pts| CanonicalKeypoints::new(pts.try_into().unwrap()).unwrap())
}

#[test]
fn identity_and_scaling_cases() {
    let xc = CanonicalKeypoints::new(std::array::from_fn(|i| [i as f64 * 0.1, -0.3, 0.7 - i as f64 * 0.05])).unwrap();
    assert_eq!(apply_motion(&xc, &MotionFrame::identity()).unwrap(), xc.points);
    let doubled = MotionFrame {
        scale: 2.0,
        ..MotionFrame::identity()
    };
    let out = apply_motion(&xc, &doubled).unwrap();
    for (o, p) in out.iter().zip(&xc.points) {
        assert_eq!(*o, [2.0 * p[0], 2.0 * p[1], 2.0 * p[2]]);
    }
}

#[test]
fn unit_frame_flattens_to_scale_only() {
    let v = flatten_frame(&MotionFrame::identity());
    assert_eq!(v.0[0], 1.0);
    assert!(v.0[1..].iter().all(|&x| x == 0.0));
}

#[test]
fn delta_sentinels_land_at_layout_indices() {
    let mut f = MotionFrame::identity();
    for i in 0..NUM_KEYPOINTS {
        for j in 0..3 {
            f.delta[i][j] = 1000.0 + (10 * i + j) as f64;
        }
    }
    let v = flatten_frame(&f);
    for i in 0..NUM_KEYPOINTS {
        for j in 0..3 {
            assert_eq!(v.0[7 + 3 * i + j], 1000.0 + (10 * i + j) as f64);
            assert_eq!(delta_index(i, j), 7 + 3 * i + j);
        }
    }
    assert!(unflatten_frame(&v.0[..LATENT_DIM - 1]).is_err());
}

proptest! {
    #[test]
    fn apply_motion_matches_pointwise_oracle(xc in arb_canonical(), f in arb_frame()) {
        let out = apply_motion(&xc, &f).unwrap();
        let r = f.rotation;
        for (k, p) in xc.points.iter().enumerate() {
            let rot = rotate_point(*p, r.pitch, r.yaw, r.roll);
            for j in 0..3 {
                let want = f.scale * (rot[j] + f.delta[k][j]) + f.translation[j];
                prop_assert!((out[k][j] - want).abs() < 1e-12, "point {k} coord {j}: {} vs {want}", out[k][j]);
            }
        }
    }

    #[test]
    fn translation_is_equivariant(xc in arb_canonical(), f in arb_frame(), c in prop::array::uniform3(-2.0f64..2.0)) {
        let base = apply_motion(&xc, &f).unwrap();
        let shifted = MotionFrame {
            translation: [f.translation[0] + c[0], f.translation[1] + c[1], f.translation[2] + c[2]],
            ..f
        };
        let out = apply_motion(&xc, &shifted).unwrap();
        for (o, b) in out.iter().zip(&base) {
            for j in 0..3 {
                prop_assert!((o[j] - (b[j] + c[j])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rotations_are_orthonormal(angles in prop::array::uniform3(-360.0f64..360.0)) {
        let r = rotation_from_euler(EulerAngles::new(angles[0], angles[1], angles[2])).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[i][k] * r[j][k]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                prop_assert!((dot - want).abs() < 1e-12);
            }
        }
        let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
        prop_assert!((det - 1.0).abs() < 1e-12);
    }

    #[test]
    fn flatten_roundtrip_is_exact(f in arb_frame()) {
        prop_assert_eq!(unflatten_frame(&flatten_frame(&f).0).unwrap(), f);
    }
}
