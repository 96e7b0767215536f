#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use tfeval::grid_io::{
    write_grid, write_manifest, write_pgm, AttributionMap, BinaryGrid, GrayImage, ManifestDocument,
    ManifestImage,
};

/// Square lesion of side `lesion` in the top-left corner of an `h`×`w` mask.
pub fn corner_mask(h: usize, w: usize, lesion: usize) -> BinaryGrid {
    BinaryGrid::from_fn(h, w, |r, c| r < lesion && c < lesion).unwrap()
}

/// Writes `n_images` masks and one grid per (image, method) under `dir`.
/// Grid values come from `value(method_index, image_index, row, col)`.
pub fn write_study(
    dir: &Path,
    methods: &[&str],
    n_images: usize,
    (h, w): (usize, usize),
    value: impl Fn(usize, usize, usize, usize) -> f32,
) -> PathBuf {
    std::fs::create_dir_all(dir.join("masks")).unwrap();
    std::fs::create_dir_all(dir.join("grids")).unwrap();
    let mut images = Vec::new();
    for i in 0..n_images {
        let id = format!("img_{i:03}");
        let mask = corner_mask(h, w, 1 + i % h.min(w).max(1));
        let mask_rel = format!("masks/{id}.pgm");
        write_pgm(&GrayImage::from_grid(&mask), dir.join(&mask_rel)).unwrap();
        let mut grids = BTreeMap::new();
        for (m, name) in methods.iter().enumerate() {
            let values = (0..h * w).map(|k| value(m, i, k / w, k % w)).collect();
            let rel = format!("grids/{name}_{id}.agrd");
            write_grid(&AttributionMap::new(h, w, values).unwrap(), dir.join(&rel)).unwrap();
            grids.insert(name.to_string(), rel);
        }
        images.push(ManifestImage {
            image_id: id,
            mask: mask_rel,
            original_positive_pixels: 1000 * (i as u64 + 1),
            class_label: if i % 3 == 0 { "melanoma" } else { "other" }.into(),
            grids,
        });
    }
    let doc = ManifestDocument {
        study_name: "fixture".into(),
        methods: methods.iter().map(|m| m.to_string()).collect(),
        images,
        seed: None,
    };
    let path = dir.join("manifest.json");
    write_manifest(&doc, &path).unwrap();
    path
}
