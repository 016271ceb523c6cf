use ndarray::Array3;
use proptest::prelude::*;

use super::*;

fn cube(shape: (usize, usize, usize), lo: [usize; 3], hi: [usize; 3]) -> Array3<bool> {
    Array3::from_shape_fn(shape, |(z, y, x)| {
        (lo[0]..hi[0]).contains(&z) && (lo[1]..hi[1]).contains(&y) && (lo[2]..hi[2]).contains(&x)
    })
}

#[test]
fn dice_edge_cases() {
    let e = Array3::from_elem((3, 3, 3), false);
    let f = cube((3, 3, 3), [0, 0, 0], [1, 1, 1]);
    assert_eq!(dice_coefficient(&e, &e).unwrap(), 1.0);
    assert_eq!(dice_coefficient(&f, &e).unwrap(), 0.0);
    assert_eq!(dice_coefficient(&f, &f).unwrap(), 1.0);
}

#[test]
fn dice_half_overlap() {
    let a = cube((1, 1, 4), [0, 0, 0], [1, 1, 2]);
    let b = cube((1, 1, 4), [0, 0, 1], [1, 1, 3]);
    assert!((dice_coefficient(&a, &b).unwrap() - 0.5).abs() < 1e-12);
}

#[test]
fn shape_mismatch_is_rejected() {
    let a = Array3::from_elem((2, 2, 2), true);
    let b = Array3::from_elem((2, 2, 3), true);
    assert!(dice_coefficient(&a, &b).is_err());
    assert!(hd95(&a, &b, [1.0; 3]).is_err());
}

#[test]
fn boundary_of_solid_cube_excludes_interior() {
    let m = cube((5, 5, 5), [1, 1, 1], [4, 4, 4]);
    let b = boundary_mask(&m);
    assert!(!b[[2, 2, 2]]);
    assert_eq!(b.iter().filter(|&&v| v).count(), 26);
    // touching the volume edge counts as boundary
    let full = Array3::from_elem((3, 3, 3), true);
    assert_eq!(extract_boundary(&full).len(), 26);
}

#[test]
fn hd95_of_shifted_cube_with_spacing() {
    let a = cube((10, 10, 10), [2, 2, 2], [6, 6, 6]);
    let b = cube((10, 10, 10), [2, 2, 3], [6, 6, 7]);
    let d = hd95(&a, &b, [1.0, 1.0, 2.5]).unwrap().unwrap();
    let r = hd95_bruteforce(&a, &b, [1.0, 1.0, 2.5]).unwrap().unwrap();
    assert!((d - r).abs() < 1e-9);
    assert!(d > 0.0 && d <= 2.5 + 1e-12);
}

#[test]
fn hd95_identical_is_zero_and_empty_is_none() {
    let a = cube((6, 6, 6), [1, 1, 1], [4, 5, 3]);
    assert_eq!(hd95(&a, &a, [1.0; 3]).unwrap(), Some(0.0));
    let e = Array3::from_elem((6, 6, 6), false);
    assert_eq!(hd95(&a, &e, [1.0; 3]).unwrap(), None);
    assert_eq!(hd95(&e, &e, [1.0; 3]).unwrap(), None);
}

#[test]
fn bruteforce_guard() {
    let a = Array3::from_elem((1, 120, 120), true);
    assert!(hd95_bruteforce(&a, &a, [1.0; 3]).is_err());
}

#[test]
fn evaluate_volume_reports_every_foreground_class() {
    let gt = Array3::from_shape_fn((4, 8, 8), |(_, y, x)| if y < 4 { 1 } else if x < 4 { 2 } else { 0 });
    let mut pred = gt.clone();
    pred[[0, 7, 7]] = 2;
    let gt = LabelVolume::new(gt, 4).unwrap();
    let pred = LabelVolume::new(pred, 4).unwrap();
    let m = evaluate_volume(&pred, &gt, [1.0; 3], 4).unwrap();
    assert_eq!(m.per_class.len(), 3);
    assert_eq!(m.per_class[0].dsc, 1.0);
    assert!(m.per_class[1].dsc < 1.0);
    // class 3 absent from both: perfect overlap, undefined distance
    assert_eq!(m.per_class[2].dsc, 1.0);
    assert_eq!(m.per_class[2].hd95, None);
    assert!(m.mean_hd95.is_some());
}

#[test]
fn reports_write_json_and_csv() {
    let gt = LabelVolume::new(Array3::from_shape_fn((2, 4, 4), |(_, y, _)| (y < 2) as u8), 2).unwrap();
    let m = evaluate_volume(&gt, &gt, [1.0; 3], 2).unwrap();
    let report = EvaluationReport::new(
        2,
        vec![CaseReport {
            case_id: "c0".into(),
            metrics: m,
        }],
    );
    let dir = tempfile::tempdir().unwrap();
    write_json_report(&report, &dir.path().join("r.json")).unwrap();
    write_csv_summary(&report, &dir.path().join("r.csv")).unwrap();
    let back: EvaluationReport =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("r.json")).unwrap()).unwrap();
    assert_eq!(back, report);
    let csv = std::fs::read_to_string(dir.path().join("r.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.lines().nth(1).unwrap().starts_with("c0,1,1.000000,"));
}

fn mask_strategy() -> impl Strategy<Value = (Array3<bool>, Array3<bool>, [f64; 3])> {
    (1usize..=16, 1usize..=16, 1usize..=16)
        .prop_flat_map(|(d, h, w)| {
            let n = d * h * w;
            (
                Just((d, h, w)),
                prop::collection::vec(prop::bool::weighted(0.3), n),
                prop::collection::vec(prop::bool::weighted(0.3), n),
                prop::array::uniform3(0.5f64..3.0),
            )
        })
        .prop_map(|(s, a, b, sp)| {
            (
                Array3::from_shape_vec(s, a).unwrap(),
                Array3::from_shape_vec(s, b).unwrap(),
                sp,
            )
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn hd95_matches_bruteforce((a, b, sp) in mask_strategy()) {
        let fast = hd95(&a, &b, sp).unwrap();
        let slow = hd95_bruteforce(&a, &b, sp).unwrap();
        match (fast, slow) {
            (None, None) => {}
            (Some(f), Some(s)) => prop_assert!((f - s).abs() <= 1e-9 * s.max(1.0), "{f} vs {s}"),
            other => prop_assert!(false, "{other:?}"),
        }
    }

    #[test]
    fn dice_is_symmetric_and_bounded((a, b, _) in mask_strategy()) {
        let ab = dice_coefficient(&a, &b).unwrap();
        prop_assert_eq!(ab, dice_coefficient(&b, &a).unwrap());
        prop_assert!((0.0..=1.0).contains(&ab));
    }
}
