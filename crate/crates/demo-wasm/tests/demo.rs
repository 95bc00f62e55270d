use ifnet_demo::{affinity, make_scene, sdb_values};

#[test]
fn scene_density_sums_to_the_head_count() {
    for seed in 0..5 {
        let s = make_scene(seed, 96, 3, 20, 4.0).unwrap();
        assert_eq!(s.rgba().len(), 96 * 96 * 4);
        assert_eq!(s.density().len(), 96 * 96);
        assert!((3..=20).contains(&s.count()));
        assert!((s.density_sum() - s.count() as f64).abs() < 1e-3 * s.count() as f64);
        assert!(s.rgba().chunks(4).all(|p| p[3] == 255));
    }
    let (a, b) = (make_scene(9, 64, 5, 5, 2.0).unwrap(), make_scene(9, 64, 5, 5, 2.0).unwrap());
    assert_eq!(a.points(), b.points());
    assert_eq!(a.count(), 5);
}

#[test]
fn sdb_curve_is_a_steepening_step() {
    let soft = sdb_values(1.0, 0.05, 101).unwrap();
    let steep = sdb_values(500.0, 0.05, 101).unwrap();
    assert_eq!(soft[50], 0.5);
    assert_eq!(steep[50], 0.5);
    assert!(steep.windows(2).all(|w| w[1] >= w[0]));
    assert!(steep[100] > 0.999 && steep[0] < 0.001);
    assert!((soft[100] - soft[0]) < 0.05);
    assert!(sdb_values(1.0, 1.0, 1).is_err());
}

#[test]
fn affinity_rows_are_distributions() {
    for c in [1, 3, 8] {
        let w = affinity(4, c, 8, 1.0).unwrap();
        assert_eq!(w.len(), c * c);
        for row in w.chunks(c) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&v| v >= 0.0));
        }
    }
    let flat = affinity(4, 6, 8, 0.01).unwrap();
    let sharp = affinity(4, 6, 8, 10.0).unwrap();
    let peak = |w: &[f64]| w.iter().cloned().fold(0.0, f64::max);
    assert!(peak(&sharp) > peak(&flat));
    assert!(affinity(1, 0, 8, 1.0).is_err());
    assert!(affinity(1, 2, 7, 1.0).is_err());
}
