use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tfeval::bias::{threshold_bias_table, CurveTable, DEFAULT_TAUS_OF_INTEREST};
use tfeval::metrics::{IoUCurve, ThresholdGrid};
use tfeval::stats::TestStatus;
use tfeval::Error;

type Row = (&'static str, f64, [(f64, f64); 3]);

const TABLE: [Row; 7] = [
    ("XRAI", 0.1844, [(0.2784, -33.8), (0.2331, -20.9), (0.1483, 24.3)]),
    ("LIME", 0.1409, [(0.1565, -10.0), (0.1565, -10.0), (0.1565, -10.0)]),
    ("SmoothGrad_IG", 0.1172, [(0.1980, -40.8), (0.1095, 7.0), (0.0536, 118.7)]),
    ("GradCAM", 0.1146, [(0.1856, -38.3), (0.1266, -9.5), (0.0671, 70.7)]),
    ("Blur_IG", 0.0979, [(0.1425, -31.3), (0.0785, 24.7), (0.0467, 109.7)]),
    ("Guided_IG", 0.0968, [(0.1508, -35.8), (0.0788, 22.8), (0.0412, 134.8)]),
    ("Vanilla_IG", 0.0606, [(0.0904, -32.9), (0.0422, 43.5), (0.0200, 202.7)]),
];

fn interpolate(knots: &[(f64, f64)], tau: f64) -> f64 {
    let k = knots.windows(2).find(|w| tau <= w[1].0 + 1e-12).unwrap();
    let ((t0, v0), (t1, v1)) = (k[0], k[1]);
    v0 + (v1 - v0) * (tau - t0) / (t1 - t0)
}

/// Mean curve through IoU@0.3/0.5/0.7 whose normalized area is `auc`,
/// with equal end values at 0.05 and 0.95 solved for.
fn mean_curve(grid: &ThresholdGrid<f64>, auc: f64, at: [f64; 3]) -> Vec<f64> {
    let [i3, i5, i7] = at;
    // integral of the piecewise-linear curve = 0.25 x + 0.225 i3 + 0.2 i5 + 0.225 i7
    let end = (0.9 * auc - 0.225 * i3 - 0.2 * i5 - 0.225 * i7) / 0.25;
    assert!((0.0..=1.0).contains(&end), "fixture end value {end}");
    let knots = [(0.05, end), (0.3, i3), (0.5, i5), (0.7, i7), (0.95, end)];
    grid.taus().iter().map(|&t| interpolate(&knots, t)).collect()
}

fn fixture(n_images: usize) -> CurveTable<f64> {
    let grid = ThresholdGrid::<f64>::default();
    TABLE
        .iter()
        .map(|(method, auc, cells)| {
            let mean = mean_curve(&grid, *auc, cells.map(|c| c.0));
            let per_image = (0..n_images)
                .map(|k| {
                    let c = 0.5 * (2.0 * k as f64 - (n_images - 1) as f64) / (n_images - 1) as f64;
                    let ious = mean.iter().map(|v| v * (1.0 + c)).collect();
                    (format!("img_{k:03}"), IoUCurve::from_points(grid.clone(), ious).unwrap())
                })
                .collect();
            (method.to_string(), per_image)
        })
        .collect()
}

#[test]
fn reconstructed_table_reproduces_relative_differences() {
    let table = threshold_bias_table(&fixture(40), &DEFAULT_TAUS_OF_INTEREST, (0.3, 0.7), 0.05).unwrap();
    assert_eq!(table.n_tests, 133);
    for (method, auc, cells) in TABLE {
        let row = table.rows.iter().find(|r| r.method_id == method).unwrap();
        assert!((row.auc_mean - auc).abs() < 1e-12);
        for (tau, (iou, printed)) in DEFAULT_TAUS_OF_INTEREST.into_iter().zip(cells) {
            let p = row.point_at(tau).unwrap();
            assert!((p.iou_mean - iou).abs() < 1e-12);
            let rel = p.rel_diff.unwrap();
            let from_inputs = (auc - iou) / iou * 100.0;
            assert!((rel - from_inputs).abs() < 1e-8, "{method}@{tau}");
            if (method, tau) == ("Vanilla_IG", 0.7) {
                // the printed 202.7 is 0.3 pp away from its own printed inputs
                assert!((rel - 203.0).abs() <= 1.0, "{rel}");
            } else {
                assert!((rel - printed).abs() <= 0.2, "{method}@{tau}: {rel} vs {printed}");
            }
            assert!(p.significant, "{method}@{tau} p_adj {}", p.p_adjusted);
            assert!(p.p_adjusted < 0.001);
        }
    }
    let lime = table.rows.iter().find(|r| r.method_id == "LIME").unwrap();
    assert!(lime.swing.unwrap().abs() < 1e-9);
    let vanilla = table.rows.iter().find(|r| r.method_id == "Vanilla_IG").unwrap();
    assert!((vanilla.swing.unwrap() - 235.6).abs() <= 1.0);
}

#[test]
fn constant_curves_have_no_bias() {
    let grid = ThresholdGrid::<f64>::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut curves: CurveTable<f64> = BTreeMap::new();
    for k in 0..12 {
        let id = format!("img_{k:02}");
        let level = rng.random_range(0.1..0.9);
        let flat = IoUCurve::from_points(grid.clone(), vec![level; 19]).unwrap();
        let falling: Vec<f64> = grid.taus().iter().map(|t| level * (1.0 - t)).collect();
        curves.entry("flat".into()).or_default().insert(id.clone(), flat);
        curves
            .entry("falling".into())
            .or_default()
            .insert(id, IoUCurve::from_points(grid.clone(), falling).unwrap());
    }
    let table = threshold_bias_table(&curves, &[0.3, 0.5, 0.7], (0.3, 0.7), 0.05).unwrap();
    assert_eq!(table.n_tests, 38);
    let flat = table.rows.iter().find(|r| r.method_id == "flat").unwrap();
    assert_eq!(flat.swing, Some(0.0));
    for p in &flat.points {
        assert_eq!(p.rel_diff, Some(0.0));
        assert_eq!(p.status, TestStatus::Degenerate);
        assert!(!p.significant);
    }
    let falling = table.rows.iter().find(|r| r.method_id == "falling").unwrap();
    assert!(falling.points[0].rel_diff.unwrap() < 0.0);
    assert!(falling.points[18].rel_diff.unwrap() > 0.0);
}

#[test]
fn seven_methods_make_133_tests() {
    let grid = ThresholdGrid::<f64>::default();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let curves: CurveTable<f64> = (0..7)
        .map(|m| {
            let per_image = (0..20)
                .map(|k| {
                    let ious: Vec<f64> = (0..19).map(|_| rng.random::<f64>()).collect();
                    (format!("img_{k:02}"), IoUCurve::from_points(grid.clone(), ious).unwrap())
                })
                .collect();
            (format!("method_{m}"), per_image)
        })
        .collect();
    let table = threshold_bias_table(&curves, &DEFAULT_TAUS_OF_INTEREST, (0.3, 0.7), 0.05).unwrap();
    assert_eq!(table.n_tests, 133);
    assert_eq!(table.rows.iter().map(|r| r.points.len()).sum::<usize>(), 133);
    for r in &table.rows {
        for p in &r.points {
            assert!(p.p_adjusted >= p.p_raw && p.p_adjusted <= 1.0);
        }
    }
}

#[test]
fn misaligned_images_are_rejected() {
    let grid = ThresholdGrid::<f64>::default();
    let curve = IoUCurve::from_points(grid, vec![0.5; 19]).unwrap();
    let mut curves: CurveTable<f64> = BTreeMap::new();
    curves.entry("a".into()).or_default().insert("img_1".into(), curve.clone());
    curves.entry("b".into()).or_default().insert("img_2".into(), curve);
    assert!(matches!(
        threshold_bias_table(&curves, &[0.5], (0.3, 0.7), 0.05),
        Err(Error::Validation(_))
    ));
}
