mod common;

use std::collections::BTreeMap;

use tfeval::grid_io::{
    load_manifest, read_grid, read_mask, write_grid, write_manifest, AttributionMap, ManifestDocument,
    ManifestImage, DEFAULT_MASK_THRESHOLD,
};
use tfeval::metrics::normalize;
use tfeval::Error;

#[test]
fn two_methods_three_images() {
    let dir = tempfile::tempdir().unwrap();
    let path = common::write_study(dir.path(), &["beta", "alpha"], 3, (4, 5), |m, i, r, c| {
        (m + i + r * c) as f32
    });
    let manifest = load_manifest(&path).unwrap();
    assert_eq!(manifest.grid_reference_count(), 6);
    assert_eq!(manifest.methods, vec!["beta", "alpha"]);
    let ids: Vec<_> = manifest.images.iter().map(|i| i.image_id.as_str()).collect();
    assert_eq!(ids, ["img_000", "img_001", "img_002"]);
    assert_eq!(manifest.images[1].original_positive_pixels, 2000);
    assert_eq!(manifest.fingerprint.len(), 64);

    let g = read_grid(&manifest.images[2].grid_paths[1]).unwrap();
    assert_eq!((g.height(), g.width()), (4, 5));
    assert_eq!(g.values()[7], (1 + 2 + 2) as f32);
    let mask = read_mask(&manifest.images[2].mask_path, DEFAULT_MASK_THRESHOLD).unwrap();
    assert_eq!(mask.grid.count_ones(), 9);
}

fn edit_manifest(path: &std::path::Path, f: impl FnOnce(&mut ManifestDocument)) {
    let mut doc: ManifestDocument = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    f(&mut doc);
    write_manifest(&doc, path).unwrap();
}

#[test]
fn missing_grid_entry_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = common::write_study(dir.path(), &["a", "b"], 3, (3, 3), |_, _, r, c| (r + c) as f32);
    edit_manifest(&path, |doc| {
        doc.images[1].grids.remove("b");
    });
    let err = load_manifest(&path).unwrap_err();
    assert!(matches!(err, Error::Validation(ref m) if m.contains("img_001")), "{err}");
}

#[test]
fn missing_file_is_a_resolution_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = common::write_study(dir.path(), &["a"], 2, (3, 3), |_, _, r, c| (r + c) as f32);
    std::fs::remove_file(dir.path().join("grids/a_img_001.agrd")).unwrap();
    let err = load_manifest(&path).unwrap_err();
    assert!(matches!(err, Error::Resolution { .. }), "{err}");
    assert!(err.is_io());
}

#[test]
fn duplicate_ids_and_undeclared_methods_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = common::write_study(dir.path(), &["a"], 2, (3, 3), |_, _, r, c| (r + c) as f32);
    let original = std::fs::read_to_string(&path).unwrap();

    edit_manifest(&path, |doc| doc.images[1].image_id = doc.images[0].image_id.clone());
    assert!(matches!(load_manifest(&path), Err(Error::Validation(_))));

    std::fs::write(&path, &original).unwrap();
    edit_manifest(&path, |doc| doc.methods.push("a".into()));
    assert!(matches!(load_manifest(&path), Err(Error::Validation(_))));

    std::fs::write(&path, &original).unwrap();
    edit_manifest(&path, |doc| {
        let g = doc.images[0].grids["a"].clone();
        doc.images[0].grids.insert("ghost".into(), g);
    });
    assert!(matches!(load_manifest(&path), Err(Error::Validation(_))));

    std::fs::write(&path, "{\"study_name\": 3}").unwrap();
    assert!(matches!(load_manifest(&path), Err(Error::Json { .. })));
}

#[test]
fn seven_by_five_hundred_references() {
    let dir = tempfile::tempdir().unwrap();
    let methods: Vec<String> = (0..7).map(|m| format!("method_{m}")).collect();
    let map = AttributionMap::new(1, 1, vec![0.5f32]).unwrap();
    std::fs::write(dir.path().join("mask.pgm"), b"P5\n1 1\n255\n\xff").unwrap();
    for m in &methods {
        write_grid(&map, dir.path().join(format!("{m}.agrd"))).unwrap();
    }
    let images = (0..500)
        .map(|i| ManifestImage {
            image_id: format!("isic_{i:04}"),
            mask: "mask.pgm".into(),
            original_positive_pixels: 40_000 + i,
            class_label: "other".into(),
            grids: methods.iter().map(|m| (m.clone(), format!("{m}.agrd"))).collect::<BTreeMap<_, _>>(),
        })
        .collect();
    let doc = ManifestDocument {
        study_name: "full-size".into(),
        methods: methods.clone(),
        images,
        seed: None,
    };
    let path = dir.path().join("manifest.json");
    write_manifest(&doc, &path).unwrap();
    let manifest = load_manifest(&path).unwrap();
    assert_eq!(manifest.grid_reference_count(), 3500);
    assert_eq!(manifest.images[499].image_id, "isic_0499");
}

#[test]
fn unwritable_destination_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let map = AttributionMap::new(1, 1, vec![0.0f32]).unwrap();
    let err = write_grid(&map, dir.path().join("no/such/dir/g.agrd")).unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
    assert!(err.is_io());
}

#[test]
fn exported_raw_grids_normalize_into_unit_range() {
    let dir = tempfile::tempdir().unwrap();
    let raw: Vec<f32> = vec![-3.5, 0.0, 12.25, 7.0, -0.125, 1e-3];
    write_grid(&AttributionMap::new(2, 3, raw).unwrap(), dir.path().join("g.agrd")).unwrap();
    let back = read_grid(dir.path().join("g.agrd")).unwrap();
    let n = normalize(&back);
    let (lo, hi) = n.values().iter().fold((f32::MAX, f32::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    assert_eq!((lo, hi), (0.0, 1.0));
}
