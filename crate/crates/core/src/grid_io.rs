//! Attribution grids, ground-truth masks and study manifests on disk.
//!
//! Grids use the AGRD layout:
//!
//! | bytes      | content                                   |
//! |------------|-------------------------------------------|
//! | 0..4       | magic `AGRD`                              |
//! | 4          | version, currently `1`                    |
//! | 5..9       | height, `u32` little-endian               |
//! | 9..13      | width, `u32` little-endian                |
//! | 13..       | `height * width` `f32` little-endian, row-major |
//!
//! Masks are read from binary PGM (`P5`, maxval ≤ 255) or from AGRD grids,
//! binarized with a strict `>` against an intensity threshold.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const AGRD_MAGIC: &[u8; 4] = b"AGRD";
pub const AGRD_VERSION: u8 = 1;
pub const AGRD_HEADER_LEN: usize = 13;

/// Default mask binarization cutoff: intensities strictly above it are positive.
pub const DEFAULT_MASK_THRESHOLD: u8 = 127;

/// Continuous attribution scores for one (image, method) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionMap<S = f32> {
    height: usize,
    width: usize,
    values: Vec<S>,
    method_id: String,
    image_id: String,
}

impl<S: Scalar> AttributionMap<S> {
    pub fn new(height: usize, width: usize, values: Vec<S>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Validation(format!(
                "attribution map must be at least 1x1, got {height}x{width}"
            )));
        }
        if values.len() != height * width {
            return Err(Error::Validation(format!(
                "attribution map {height}x{width} needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite attribution value at index {pos}"
            )));
        }
        Ok(Self {
            height,
            width,
            values,
            method_id: String::new(),
            image_id: String::new(),
        })
    }

    pub fn with_ids(mut self, method_id: impl Into<String>, image_id: impl Into<String>) -> Self {
        self.method_id = method_id.into();
        self.image_id = image_id.into();
        self
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn method_id(&self) -> &str {
        &self.method_id
    }

    pub fn image_id(&self) -> &str {
        &self.image_id
    }

    /// Converts every value to another scalar type.
    pub fn cast<T: Scalar>(&self) -> AttributionMap<T> {
        AttributionMap {
            height: self.height,
            width: self.width,
            values: self.values.iter().map(|v| T::of(v.as_f64())).collect(),
            method_id: self.method_id.clone(),
            image_id: self.image_id.clone(),
        }
    }

    /// Applies `f` to every value. The result is revalidated for finiteness.
    pub fn map_values(&self, f: impl Fn(S) -> S) -> Result<Self> {
        let values = self.values.iter().map(|&v| f(v)).collect();
        Ok(Self::new(self.height, self.width, values)?.with_ids(&self.method_id, &self.image_id))
    }
}

/// Row-major binary grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryGrid {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl BinaryGrid {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if height == 0 || width == 0 || bits.len() != height * width {
            return Err(Error::Validation(format!(
                "binary grid {height}x{width} cannot hold {} bits",
                bits.len()
            )));
        }
        Ok(Self {
            height,
            width,
            bits,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Result<Self> {
        let bits = (0..height * width).map(|i| f(i / width, i % width)).collect();
        Self::new(height, width, bits)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count_ones(&self) -> u64 {
        self.bits.iter().filter(|&&b| b).count() as u64
    }

    pub fn same_shape(&self, other: &BinaryGrid) -> bool {
        self.height == other.height && self.width == other.width
    }
}

/// Binary relevance mask plus the lesion size measured at source resolution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruthMask {
    pub grid: BinaryGrid,
    pub original_positive_pixels: u64,
    pub image_id: String,
}

impl GroundTruthMask {
    /// Mask whose original size is taken to be its own positive-pixel count.
    pub fn from_grid(grid: BinaryGrid, image_id: impl Into<String>) -> Self {
        let original_positive_pixels = grid.count_ones();
        Self {
            grid,
            original_positive_pixels,
            image_id: image_id.into(),
        }
    }

    pub fn height(&self) -> usize {
        self.grid.height()
    }

    pub fn width(&self) -> usize {
        self.grid.width()
    }
}

// ---------------------------------------------------------------------------
// AGRD
// ---------------------------------------------------------------------------

pub fn encode_grid<S: Scalar>(map: &AttributionMap<S>) -> Result<Vec<u8>> {
    let height = u32::try_from(map.height)
        .map_err(|_| Error::Validation(format!("height {} exceeds u32", map.height)))?;
    let width = u32::try_from(map.width)
        .map_err(|_| Error::Validation(format!("width {} exceeds u32", map.width)))?;
    let mut out = Vec::with_capacity(AGRD_HEADER_LEN + 4 * map.values.len());
    out.extend_from_slice(AGRD_MAGIC);
    out.push(AGRD_VERSION);
    out.extend_from_slice(&height.to_le_bytes());
    out.extend_from_slice(&width.to_le_bytes());
    for v in &map.values {
        let v = v.to_f32().unwrap_or(f32::NAN);
        if !v.is_finite() {
            return Err(Error::Validation("value not representable as finite f32".into()));
        }
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_grid(bytes: &[u8]) -> Result<AttributionMap<f32>> {
    if bytes.len() < 5 || &bytes[..4] != AGRD_MAGIC {
        return Err(Error::Format("missing AGRD magic".into()));
    }
    if bytes[4] != AGRD_VERSION {
        return Err(Error::Format(format!("unsupported AGRD version {}", bytes[4])));
    }
    if bytes.len() < AGRD_HEADER_LEN {
        return Err(Error::Corrupt(format!(
            "AGRD header truncated at {} bytes",
            bytes.len()
        )));
    }
    let height = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let width = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as usize;
    if height == 0 || width == 0 {
        return Err(Error::Format(format!("AGRD dimensions {height}x{width}")));
    }
    let expected = height
        .checked_mul(width)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Format(format!("AGRD dimensions {height}x{width} overflow")))?;
    let payload = &bytes[AGRD_HEADER_LEN..];
    if payload.len() != expected {
        return Err(Error::Corrupt(format!(
            "AGRD {height}x{width} expects {expected} payload bytes, found {}",
            payload.len()
        )));
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    AttributionMap::new(height, width, values)
}

pub fn read_grid(path: impl AsRef<Path>) -> Result<AttributionMap<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_grid(&bytes)
}

pub fn write_grid<S: Scalar>(map: &AttributionMap<S>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_grid(map)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Masks
// ---------------------------------------------------------------------------

/// 8-bit grayscale raster as stored in a PGM file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn binarize(&self, threshold: u8) -> Result<BinaryGrid> {
        BinaryGrid::new(
            self.height,
            self.width,
            self.pixels.iter().map(|&p| p > threshold).collect(),
        )
    }

    /// Mask bits as 0/255 intensities.
    pub fn from_grid(grid: &BinaryGrid) -> Self {
        Self {
            height: grid.height(),
            width: grid.width(),
            pixels: grid.bits().iter().map(|&b| if b { 255 } else { 0 }).collect(),
        }
    }
}

pub fn encode_pgm(image: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend_from_slice(&image.pixels);
    out
}

pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::Format("not a binary PGM (P5)".into()));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and '#' comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while !matches!(bytes.get(pos), None | Some(b'\n')) {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("malformed PGM header".into()));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format("PGM header number out of range".into()))?;
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(Error::Format(format!("PGM dimensions {width}x{height}")));
    }
    if maxval == 0 || maxval > 255 {
        return Err(Error::Format(format!("unsupported PGM maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::Format("PGM header not terminated".into()));
    }
    pos += 1;
    let raster = &bytes[pos..];
    if raster.len() < width * height {
        return Err(Error::Corrupt(format!(
            "PGM {width}x{height} raster truncated to {} bytes",
            raster.len()
        )));
    }
    Ok(GrayImage {
        height,
        width,
        pixels: raster[..width * height].to_vec(),
    })
}

pub fn write_pgm(image: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pgm(image)).map_err(|e| Error::io(path, e))
}

/// Reads a PGM or AGRD mask; a pixel is positive iff its intensity exceeds `threshold`.
///
/// The returned mask reports its own positive count as the original size and
/// takes its image id from the file stem; manifest loading overrides both.
pub fn read_mask(path: impl AsRef<Path>, threshold: u8) -> Result<GroundTruthMask> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let grid = if bytes.starts_with(b"P5") {
        decode_pgm(&bytes)?.binarize(threshold)?
    } else if bytes.starts_with(AGRD_MAGIC) {
        let map = decode_grid(&bytes)?;
        let cut = f32::from(threshold);
        BinaryGrid::new(
            map.height(),
            map.width(),
            map.values().iter().map(|&v| v > cut).collect(),
        )?
    } else {
        return Err(Error::Format(format!(
            "{} is neither a P5 PGM nor an AGRD grid",
            path.display()
        )));
    };
    let image_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(GroundTruthMask::from_grid(grid, image_id))
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

/// Manifest document as it appears on disk. Paths are relative to the
/// manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestDocument {
    pub study_name: String,
    pub methods: Vec<String>,
    pub images: Vec<ManifestImage>,
    /// Generator seed, present when the study was synthesized.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestImage {
    pub image_id: String,
    pub mask: String,
    pub original_positive_pixels: u64,
    pub class_label: String,
    pub grids: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageEntry {
    pub image_id: String,
    pub mask_path: PathBuf,
    /// One path per method, aligned with [`StudyManifest::methods`].
    pub grid_paths: Vec<PathBuf>,
    pub original_positive_pixels: u64,
    pub class_label: String,
}

/// Validated manifest with resolved paths, in manifest order.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyManifest {
    pub study_name: String,
    pub methods: Vec<String>,
    pub images: Vec<ImageEntry>,
    pub seed: Option<u64>,
    /// SHA-256 of the manifest bytes, lowercase hex.
    pub fingerprint: String,
}

impl StudyManifest {
    pub fn grid_reference_count(&self) -> usize {
        self.images.iter().map(|i| i.grid_paths.len()).sum()
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<StudyManifest> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let doc: ManifestDocument = serde_json::from_slice(&bytes)
        .map_err(|e| Error::json(path.display().to_string(), e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    resolve_manifest(doc, base, sha256_hex(&bytes))
}

/// Validates a parsed manifest and resolves its paths against `base`.
pub fn resolve_manifest(
    doc: ManifestDocument,
    base: &Path,
    fingerprint: String,
) -> Result<StudyManifest> {
    if doc.methods.is_empty() {
        return Err(Error::Validation("manifest declares no methods".into()));
    }
    if doc.images.is_empty() {
        return Err(Error::Validation("manifest declares no images".into()));
    }
    let mut seen = HashSet::new();
    for m in &doc.methods {
        if !seen.insert(m.as_str()) {
            return Err(Error::Validation(format!("duplicate method_id {m:?}")));
        }
    }
    let mut seen_images = HashSet::new();
    let mut images = Vec::with_capacity(doc.images.len());
    for img in doc.images {
        if !seen_images.insert(img.image_id.clone()) {
            return Err(Error::Validation(format!(
                "duplicate image_id {:?}",
                img.image_id
            )));
        }
        if let Some(extra) = img.grids.keys().find(|k| !seen.contains(k.as_str())) {
            return Err(Error::Validation(format!(
                "image {:?} has a grid for undeclared method {extra:?}",
                img.image_id
            )));
        }
        let context = format!("image {:?}", img.image_id);
        let mask_path = existing(base, &img.mask, &context)?;
        let grid_paths = doc
            .methods
            .iter()
            .map(|m| {
                let rel = img.grids.get(m).ok_or_else(|| {
                    Error::Validation(format!(
                        "image {:?} has no grid for method {m:?}",
                        img.image_id
                    ))
                })?;
                existing(base, rel, &context)
            })
            .collect::<Result<Vec<_>>>()?;
        images.push(ImageEntry {
            image_id: img.image_id,
            mask_path,
            grid_paths,
            original_positive_pixels: img.original_positive_pixels,
            class_label: img.class_label,
        });
    }
    Ok(StudyManifest {
        study_name: doc.study_name,
        methods: doc.methods,
        images,
        seed: doc.seed,
        fingerprint,
    })
}

fn existing(base: &Path, rel: &str, context: &str) -> Result<PathBuf> {
    let p = base.join(rel);
    if p.is_file() {
        Ok(p)
    } else {
        Err(Error::Resolution {
            path: p,
            context: context.to_string(),
        })
    }
}

pub fn write_manifest(doc: &ManifestDocument, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text =
        serde_json::to_string_pretty(doc).map_err(|e| Error::json("manifest", e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn map(h: usize, w: usize, v: Vec<f32>) -> AttributionMap<f32> {
        AttributionMap::new(h, w, v).unwrap()
    }

    #[test]
    fn grid_roundtrip_small() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.agrd");
        let m = map(2, 2, vec![0.1, 0.2, 0.3, 0.4]);
        write_grid(&m, &p).unwrap();
        assert_eq!(read_grid(&p).unwrap(), m);
    }

    #[test]
    fn grid_file_sizes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("one.agrd");
        write_grid(&map(1, 1, vec![0.0]), &p).unwrap();
        assert_eq!(fs::metadata(&p).unwrap().len(), 17);

        write_grid(&map(224, 224, vec![0.5; 224 * 224]), &p).unwrap();
        assert_eq!(fs::metadata(&p).unwrap().len(), 200_717);
    }

    #[test]
    fn bad_magic_is_format_error() {
        let mut bytes = encode_grid(&map(1, 1, vec![1.0])).unwrap();
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode_grid(&bytes), Err(Error::Format(_))));
        bytes[..4].copy_from_slice(b"AGRD");
        bytes[4] = 2;
        assert!(matches!(decode_grid(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_payload_is_corrupt() {
        let bytes = encode_grid(&map(2, 2, vec![1.0; 4])).unwrap();
        assert!(matches!(decode_grid(&bytes[..bytes.len() - 1]), Err(Error::Corrupt(_))));
        assert!(matches!(decode_grid(&bytes[..9]), Err(Error::Corrupt(_))));
    }

    #[test]
    fn nan_payload_is_validation_error() {
        let mut bytes = encode_grid(&map(1, 2, vec![1.0, 2.0])).unwrap();
        bytes[17..21].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode_grid(&bytes), Err(Error::Validation(_))));
        bytes[17..21].copy_from_slice(&f32::INFINITY.to_le_bytes());
        assert!(matches!(decode_grid(&bytes), Err(Error::Validation(_))));
    }

    #[test]
    fn map_invariants() {
        assert!(AttributionMap::<f64>::new(0, 3, vec![]).is_err());
        assert!(AttributionMap::new(2, 2, vec![1.0f64; 3]).is_err());
        assert!(AttributionMap::new(1, 1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn pgm_mask_threshold_is_strict() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.pgm");
        let img = GrayImage {
            height: 2,
            width: 2,
            pixels: vec![0, 127, 128, 255],
        };
        write_pgm(&img, &p).unwrap();
        let mask = read_mask(&p, DEFAULT_MASK_THRESHOLD).unwrap();
        assert_eq!(mask.grid.bits(), &[false, false, true, true]);
        assert_eq!(mask.original_positive_pixels, 2);
        assert_eq!(mask.image_id, "m");

        // configurable cutoff
        let mask = read_mask(&p, 126).unwrap();
        assert_eq!(mask.grid.bits(), &[false, true, true, true]);
    }

    #[test]
    fn uniform_pgm_masks() {
        let zeros = GrayImage { height: 3, width: 2, pixels: vec![0; 6] };
        assert_eq!(zeros.binarize(127).unwrap().count_ones(), 0);
        let full = GrayImage { height: 3, width: 2, pixels: vec![255; 6] };
        assert_eq!(full.binarize(127).unwrap().count_ones(), 6);
    }

    #[test]
    fn pgm_header_with_comment() {
        let mut bytes = b"P5\n# made by hand\n3 1\n255\n".to_vec();
        bytes.extend_from_slice(&[10, 200, 128]);
        let img = decode_pgm(&bytes).unwrap();
        assert_eq!((img.width, img.height), (3, 1));
        assert_eq!(img.binarize(127).unwrap().bits(), &[false, true, true]);
    }

    #[test]
    fn agrd_mask_and_unknown_format() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.agrd");
        write_grid(&map(1, 3, vec![0.0, 127.0, 255.0]), &p).unwrap();
        assert_eq!(read_mask(&p, 127).unwrap().grid.bits(), &[false, false, true]);

        let q = dir.path().join("m.png");
        fs::write(&q, b"\x89PNG....").unwrap();
        assert!(matches!(read_mask(&q, 127), Err(Error::Format(_))));
    }

    proptest! {
        #[test]
        fn agrd_roundtrip_is_bit_exact(
            (h, w, bits) in (1usize..9, 1usize..9).prop_flat_map(|(h, w)| {
                (Just(h), Just(w), prop::collection::vec(any::<u32>(), h * w))
            })
        ) {
            let values: Vec<f32> = bits
                .iter()
                .map(|&b| f32::from_bits(b))
                .map(|v| if v.is_finite() { v } else { 0.25 })
                .collect();
            let m = map(h, w, values);
            let bytes = encode_grid(&m).unwrap();
            prop_assert_eq!(bytes.len(), AGRD_HEADER_LEN + 4 * h * w);
            let back = decode_grid(&bytes).unwrap();
            prop_assert_eq!(encode_grid(&back).unwrap(), bytes);
            let same = back.values().iter().zip(m.values()).all(|(a, b)| a.to_bits() == b.to_bits());
            prop_assert!(same);
        }

        #[test]
        fn rebinarizing_a_binary_mask_is_idempotent(bits in prop::collection::vec(any::<bool>(), 1..64)) {
            let grid = BinaryGrid::new(1, bits.len(), bits).unwrap();
            let again = GrayImage::from_grid(&grid).binarize(DEFAULT_MASK_THRESHOLD).unwrap();
            prop_assert_eq!(again, grid);
        }
    }
}
