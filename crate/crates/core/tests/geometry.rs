use masc::geometry::{compose, BBox, Homography, Point2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn mat_mul(a: &[f64; 9], b: &[f64; 9]) -> [f64; 9] {
    let mut out = [0.0; 9];
    for r in 0..3 {
        for c in 0..3 {
            out[r * 3 + c] = (0..3).map(|k| a[r * 3 + k] * b[k * 3 + c]).sum();
        }
    }
    out
}

fn normalize(m: [f64; 9]) -> [f64; 9] {
    m.map(|v| v / m[8])
}

fn homogeneous(m: &[f64; 9], p: (f64, f64)) -> (f64, f64) {
    let x = m[0] * p.0 + m[1] * p.1 + m[2];
    let y = m[3] * p.0 + m[4] * p.1 + m[5];
    let w = m[6] * p.0 + m[7] * p.1 + m[8];
    (x / w, y / w)
}

fn max_diff(a: &[f64; 9], b: &[f64; 9]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Near-identity projective map with a mild perspective term.
fn well_conditioned(rng: &mut ChaCha8Rng) -> [f64; 9] {
    let mut m = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    for (i, v) in m.iter_mut().enumerate().take(8) {
        *v += match i {
            2 | 5 => rng.random_range(-200.0..200.0),
            6 | 7 => rng.random_range(-1e-4..1e-4),
            _ => rng.random_range(-0.2..0.2),
        };
    }
    m
}

#[test]
fn compose_identities_and_translations() {
    let id = Homography::identity(0);
    assert_eq!(compose(&[id, id]).unwrap().matrix(), id.matrix());
    let t = compose(&[
        Homography::translation(10.0, 0.0, 1, 0),
        Homography::translation(0.0, 5.0, 2, 1),
    ])
    .unwrap();
    assert!(t.max_abs_diff(&Homography::translation(10.0, 5.0, 2, 0)) < 1e-12);
}

#[test]
fn compose_matches_matrix_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let ms: Vec<[f64; 9]> = (0..3).map(|_| well_conditioned(&mut rng)).collect();
        let hs: Vec<Homography> = ms
            .iter()
            .enumerate()
            .map(|(k, m)| Homography::new(*m, k + 1, k).unwrap())
            .collect();
        let expected = normalize(mat_mul(&mat_mul(&ms[0], &ms[1]), &ms[2]));
        assert!(max_diff(compose(&hs).unwrap().matrix(), &expected) < 1e-9);
    }
}

#[test]
fn project_point_examples() {
    let p = Homography::identity(0).project_point(Point2::new(5.0, 7.0)).unwrap();
    assert_eq!((p.x, p.y), (5.0, 7.0));
    let p = Homography::translation(10.0, 5.0, 1, 0)
        .project_point(Point2::new(0.0, 0.0))
        .unwrap();
    assert_eq!((p.x, p.y), (10.0, 5.0));

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..200 {
        let m = well_conditioned(&mut rng);
        let h = Homography::new(m, 1, 0).unwrap();
        let q = (rng.random_range(-500.0..500.0), rng.random_range(-500.0..500.0));
        let got = h.project_point(Point2::new(q.0, q.1)).unwrap();
        let want = homogeneous(&m, q);
        assert!((got.x - want.0).abs() < 1e-9 && (got.y - want.1).abs() < 1e-9);
    }
}

#[test]
fn project_box_examples() {
    let b = BBox::new(3.0, 4.0, 5.0, 6.0);
    assert_eq!(Homography::identity(0).project_box(&b).unwrap(), b);
    let moved = Homography::translation(10.0, 0.0, 1, 0)
        .project_box(&BBox::new(0.0, 0.0, 4.0, 4.0))
        .unwrap();
    assert_eq!(moved, BBox::new(10.0, 0.0, 4.0, 4.0));

    let h = Homography::rotation_about(10.0, Point2::new(0.0, 0.0), 0);
    let got = h.project_box(&BBox::new(0.0, 0.0, 10.0, 10.0)).unwrap();
    let corners: Vec<(f64, f64)> = [(0.0, 0.0), (10.0, 0.0), (0.0, 10.0), (10.0, 10.0)]
        .iter()
        .map(|&c| homogeneous(h.matrix(), c))
        .collect();
    let x0 = corners.iter().map(|c| c.0).fold(f64::MAX, f64::min);
    let x1 = corners.iter().map(|c| c.0).fold(f64::MIN, f64::max);
    let y0 = corners.iter().map(|c| c.1).fold(f64::MAX, f64::min);
    let y1 = corners.iter().map(|c| c.1).fold(f64::MIN, f64::max);
    assert!((got.x - x0).abs() < 1e-9 && (got.y - y0).abs() < 1e-9);
    assert!((got.x1() - x1).abs() < 1e-9 && (got.y1() - y1).abs() < 1e-9);
}

#[test]
fn singular_matrix_rejected() {
    assert!(Homography::new([1.0, 2.0, 0.0, 2.0, 4.0, 0.0, 0.0, 0.0, 1.0], 1, 0).is_err());
}

fn matrix_strategy() -> impl Strategy<Value = [f64; 9]> {
    (
        prop::array::uniform4(-0.3f64..0.3),
        prop::array::uniform2(-300.0f64..300.0),
        prop::array::uniform2(-1e-4f64..1e-4),
    )
        .prop_map(|(a, t, p)| [1.0 + a[0], a[1], t[0], a[2], 1.0 + a[3], t[1], p[0], p[1], 1.0])
}

proptest! {
    #[test]
    fn inverse_round_trips(m in matrix_strategy()) {
        let h = Homography::new(m, 1, 0).unwrap();
        let prod = h * h.inverse().unwrap();
        prop_assert!(prod.max_abs_diff(&Homography::identity(0)) < 1e-9);
    }

    #[test]
    fn compose_is_sequential_projection(a in matrix_strategy(), b in matrix_strategy(), x in -400.0f64..400.0, y in -400.0f64..400.0) {
        let (ha, hb) = (Homography::new(a, 1, 0).unwrap(), Homography::new(b, 2, 1).unwrap());
        let p = Point2::new(x, y);
        let direct = compose(&[ha, hb]).unwrap().project_point(p).unwrap();
        let stepwise = ha.project_point(hb.project_point(p).unwrap()).unwrap();
        prop_assert!(direct.distance(&stepwise) < 1e-6);
    }

    #[test]
    fn translation_keeps_box_size(tx in -1e4f64..1e4, ty in -1e4f64..1e4, w in 0.1f64..500.0, h in 0.1f64..500.0) {
        let b = BBox::new(1.0, 2.0, w, h);
        let out = Homography::translation(tx, ty, 1, 0).project_box(&b).unwrap();
        prop_assert!((out.w - w).abs() < 1e-9 && (out.h - h).abs() < 1e-9);
        prop_assert!((out.x - 1.0 - tx).abs() < 1e-9 && (out.y - 2.0 - ty).abs() < 1e-9);
    }
}
