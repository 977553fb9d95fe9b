//! Randomized properties of atoms, amalgam norms and the decomposition.

use amalgam_core::amalgam::{amalgam_norm, ExponentConfig};
use amalgam_core::atoms::{make_atom, validate_atom};
use amalgam_core::czdecomp::atomic_decompose;
use amalgam_core::grid::{sample, GridSpec, LatticeCube};
use amalgam_core::io::{read_decomposition, write_decomposition};
use proptest::prelude::*;

fn spec() -> GridSpec {
    GridSpec::new(1, 8, 64, 64).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn generated_atoms_validate(seed in any::<u64>(), k in -4i32..=3, offset in 0usize..64, delta in 0usize..3) {
        let s = spec();
        let side = 2f64.powi(k);
        let corner = -6.0 + offset as f64 * s.h();
        let a = make_atom(&s, &LatticeCube::new(vec![corner], side), 0.5, f64::INFINITY, delta, true, seed).unwrap();
        let rep = validate_atom(&a);
        prop_assert!(rep.valid, "{rep:?}");
    }

    #[test]
    fn amalgam_norm_is_homogeneous(c in 0.1f64..10.0, w in 0.0f64..5.0, q in 0.3f64..3.0, p in 0.3f64..3.0) {
        let f = sample(spec(), |x| (-x[0] * x[0]).exp() * (w * x[0]).cos()).unwrap();
        let a = amalgam_norm(&f, q, p);
        let b = amalgam_norm(&f.scale(c), q, p);
        prop_assert!((b - c * a).abs() <= 1e-12 * b.max(1e-300));
    }
}

#[test]
fn decomposition_directory_round_trip_is_lossless() {
    let s = spec();
    let f = sample(s, |x| {
        let y = x[0] / 3.0;
        if y.abs() < 1.0 { (-1.0 / (1.0 - y * y)).exp() * (1.0 + (4.0 * x[0]).sin()) } else { 0.0 }
    })
    .unwrap();
    let dec = atomic_decompose(&f, &ExponentConfig::new(0.5, 0.5, 1)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_decomposition(dir.path(), &dec).unwrap();
    let back = read_decomposition(dir.path()).unwrap();
    assert_eq!(back.entries.len(), dec.entries.len());
    assert_eq!(back.reconstruct().values, dec.reconstruct().values);
    assert!(dec.stats.reconstruction_error <= 1e-10);
}
