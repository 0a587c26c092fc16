use fpclass_web::*;

#[test]
fn render_is_deterministic_and_sized() {
    let a = render_fingerprint_native("W", "hq", 3, "desk").unwrap();
    let b = render_fingerprint_native("W", "hq", 3, "desk").unwrap();
    assert_eq!((a.width(), a.height()), (96, 128));
    assert_eq!(a.pixels().len(), 96 * 128);
    assert_eq!(a.pixels(), b.pixels());
    assert_ne!(
        a.pixels(),
        render_fingerprint_native("W", "hq", 4, "desk").unwrap().pixels()
    );
    assert!(render_fingerprint_native("Q", "hq", 3, "desk").is_err());
    assert!(render_fingerprint_native("W", "bad", 3, "desk").is_err());
    assert!(render_fingerprint_native("W", "hq", 3, "huge").is_err());
}

#[test]
fn clean_whorl_shows_two_cores_and_two_deltas() {
    let img = render_fingerprint_native("W", "clean", 11, "desk").unwrap();
    let pts = singular_points_native(&img.pixels(), img.width(), img.height()).unwrap();
    let cores = pts.chunks(3).filter(|p| p[2] > 0.0).count();
    let deltas = pts.chunks(3).filter(|p| p[2] < 0.0).count();
    assert_eq!((cores, deltas), (2, 2), "{pts:?}");
    for p in pts.chunks(3) {
        assert!(p[0] >= 0.0 && p[0] <= 96.0 && p[1] >= 0.0 && p[1] <= 128.0);
    }
}

#[test]
fn orientation_map_layout() {
    let img = render_fingerprint_native("A", "clean", 1, "desk").unwrap();
    let m = orientation_map_native(&img.pixels(), 96, 128).unwrap();
    let (rows, cols) = (m[0] as usize, m[1] as usize);
    assert_eq!((rows, cols, m[2]), (25, 19, 5.0));
    assert_eq!(m.len(), 3 + 2 * rows * cols);
    assert!(singular_points_native(&img.pixels(), 95, 128).is_err());
}

#[test]
fn penetration_of_reference_matrix() {
    #[rustfmt::skip]
    let counts = [
        1110.0, 0.0, 0.0, 0.0, 0.0,
        0.0, 10095.0, 0.0, 30.0, 15.0,
        0.0, 0.0, 9500.0, 10.0, 0.0,
        0.0, 40.0, 0.0, 830.0, 0.0,
        0.0, 25.0, 0.0, 0.0, 8345.0,
    ];
    let r = penetration_rate_native(&counts).unwrap();
    assert!((r[0] * 100.0 - 29.79).abs() < 0.01, "{r:?}");
    assert!((r[1] * 100.0 - 99.60).abs() < 0.01);
    assert!(penetration_rate_native(&counts[..24]).is_err());
    assert!(penetration_rate_native(&[0.0; 25]).is_err());
    let mut neg = counts;
    neg[0] = -1.0;
    assert!(penetration_rate_native(&neg).is_err());
}
