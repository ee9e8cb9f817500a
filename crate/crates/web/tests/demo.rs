use fractfield_web::{gray_rgba, jacobian_rgba, phantom, register_pair, spectrum, swirl};

#[test]
fn rgba_conversions() {
    assert_eq!(
        gray_rgba(&[0.0, 2.0, 1.0]),
        vec![0, 0, 0, 255, 255, 255, 255, 255, 128, 128, 128, 255]
    );
    assert!(gray_rgba(&[3.0; 4]).chunks(4).all(|p| p == [0, 0, 0, 255]));
    let j = jacobian_rgba(&[1.0, -0.5, 0.0]);
    assert_eq!(&j[0..4], &[255, 255, 255, 255]);
    assert_eq!(&j[4..8], &[220, 20, 30, 255]);
    assert_eq!(&j[8..12], &[220, 20, 30, 255]);
}

#[test]
fn spectra_preserve_energy() {
    let img = phantom(32, 1).unwrap();
    let energy: f64 = img.data().iter().map(|v| v * v).sum();
    for order in [0.0, 0.5, 1.0, 1.7] {
        let mag = spectrum(32, 1, order, false).unwrap();
        assert_eq!(mag.len(), 32 * 32);
        let e: f64 = mag.iter().map(|m| m * m).sum();
        assert!((e - energy).abs() <= 1e-9 * energy);
    }
    assert!(phantom(4, 1).is_err());
}

#[test]
fn pinch_folds_swirl_does_not() {
    let gentle = swirl(48, 2, 0.3, 0.0, 0.3).unwrap();
    assert_eq!(gentle.folding_pct, 0.0);
    assert_eq!(gentle.jacobian.len(), 48 * 48);
    // the swirl alone is area preserving: det stays near 1
    let twisted = swirl(48, 2, 1.0, 0.0, 0.3).unwrap();
    assert!(twisted.jacobian.iter().all(|d| (d - 1.0).abs() < 0.2));
    assert!(swirl(48, 2, 0.3, -1.5, 0.3).unwrap().folding_pct > 0.0);
    assert!(swirl(48, 2, 0.0, 6.0, 0.3).unwrap().folding_pct > 0.0);
    assert_eq!(swirl(48, 2, 0.0, 1.0, 0.3).unwrap().folding_pct, 0.0);
}

#[test]
fn registration_improves_overlap() {
    let r = register_pair("translate", "0,2,3", 32, 60, 7).unwrap();
    assert_eq!(r.loss_trace.len(), 60);
    assert!(
        r.dice_after > r.dice_before,
        "{} -> {}",
        r.dice_before,
        r.dice_after
    );
    assert!(r.folding_pct <= 1.0);
    assert!(register_pair("twist", "1", 32, 10, 7).is_err());
}
