//! Synthetic attribution maps with known threshold-response behaviour.
//!
//! Every archetype pairs a disk-shaped lesion mask with a map:
//!
//! * `concentrated`: `exp(−concentration · d / radius)` for distance `d` from
//!   the lesion centre, so predicted regions shrink steadily as τ rises.
//! * `diffuse_superpixel`: square blocks with one value each, 1.0 for blocks
//!   touching the lesion and `background` elsewhere; two-valued maps give the
//!   same binarization at every threshold.
//! * `uniform_noise`: i.i.d. uniform values unrelated to the mask.
//! * `perfect`: the mask itself.
//! * `inverted`: one minus the mask.
//!
//! Gaussian noise with standard deviation `noise_level` is added per pixel
//! (per block for superpixels). Randomness comes from [`SplitMix64`], whose
//! output is fixed by its published constants, so fixtures are reproducible
//! from the seed alone.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid_io::{
    write_grid, write_manifest, write_pgm, AttributionMap, BinaryGrid, GrayImage, GroundTruthMask,
    ManifestDocument, ManifestImage,
};

/// SplitMix64 (Steele, Lea & Flood): a Weyl counter passed through a fixed
/// 64-bit finalizer.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(Self::GAMMA);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1) with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Standard normal via Box-Muller (cosine branch only).
    pub fn next_gaussian(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.next_f64() * n as f64) as usize
    }
}

/// Independent stream seed for item `index` under `seed`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    SplitMix64::new(seed ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03)).next_u64()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchetypeKind {
    Concentrated,
    DiffuseSuperpixel,
    UniformNoise,
    Perfect,
    Inverted,
}

/// Disk lesion in pixel coordinates; pixel `(r, c)` is inside iff
/// `(r − row)² + (c − col)² ≤ radius²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lesion {
    pub center_row: f64,
    pub center_col: f64,
    pub radius: f64,
}

impl Lesion {
    pub fn distance(&self, row: usize, col: usize) -> f64 {
        let dr = row as f64 - self.center_row;
        let dc = col as f64 - self.center_col;
        (dr * dr + dc * dc).sqrt()
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        let dr = row as f64 - self.center_row;
        let dc = col as f64 - self.center_col;
        dr * dr + dc * dc <= self.radius * self.radius
    }
}

fn default_concentration() -> f64 {
    3.0
}

fn default_superpixel() -> usize {
    8
}

fn default_background() -> f64 {
    0.2
}

/// Map-shaping parameters, shared by single archetypes and study methods.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArchetypeParams {
    pub kind: ArchetypeKind,
    #[serde(default = "default_concentration")]
    pub concentration: f64,
    #[serde(default = "default_superpixel")]
    pub superpixel_size: usize,
    /// Value of superpixel blocks away from the lesion.
    #[serde(default = "default_background")]
    pub background: f64,
    #[serde(default)]
    pub noise_level: f64,
}

impl ArchetypeParams {
    pub fn new(kind: ArchetypeKind) -> Self {
        Self {
            kind,
            concentration: default_concentration(),
            superpixel_size: default_superpixel(),
            background: default_background(),
            noise_level: 0.0,
        }
    }

    pub fn with_noise(mut self, noise_level: f64) -> Self {
        self.noise_level = noise_level;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.superpixel_size < 1 {
            return Err(Error::Domain("superpixel_size must be at least 1".into()));
        }
        if !(self.noise_level >= 0.0 && self.noise_level.is_finite()) {
            return Err(Error::Domain(format!("noise_level {} must be ≥ 0", self.noise_level)));
        }
        if !(self.concentration > 0.0 && self.concentration.is_finite()) {
            return Err(Error::Domain(format!(
                "concentration {} must be positive",
                self.concentration
            )));
        }
        if !self.background.is_finite() {
            return Err(Error::Domain("background must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArchetypeSpec {
    #[serde(flatten)]
    pub params: ArchetypeParams,
    pub lesion: Lesion,
    pub seed: u64,
}

/// Builds one (map, mask) pair. Deterministic in `spec`.
pub fn generate(
    spec: &ArchetypeSpec,
    height: usize,
    width: usize,
) -> Result<(AttributionMap<f64>, GroundTruthMask)> {
    let p = &spec.params;
    p.validate()?;
    let lesion = spec.lesion;
    if lesion.radius.is_nan() || lesion.radius < 1.0 {
        return Err(Error::Domain(format!("lesion radius {} must be ≥ 1", lesion.radius)));
    }
    let fits = |c: f64, extent: usize| c - lesion.radius >= 0.0 && c + lesion.radius <= (extent as f64 - 1.0);
    if height == 0 || width == 0 || !fits(lesion.center_row, height) || !fits(lesion.center_col, width) {
        return Err(Error::Domain(format!(
            "lesion at ({}, {}) radius {} does not fit a {height}x{width} grid",
            lesion.center_row, lesion.center_col, lesion.radius
        )));
    }
    let mask = BinaryGrid::from_fn(height, width, |r, c| lesion.contains(r, c))?;
    let mut rng = SplitMix64::new(spec.seed);
    let noise = p.noise_level;
    let jitter = |rng: &mut SplitMix64| if noise > 0.0 { noise * rng.next_gaussian() } else { 0.0 };

    let values: Vec<f64> = match p.kind {
        ArchetypeKind::Concentrated => (0..height * width)
            .map(|i| {
                let d = lesion.distance(i / width, i % width);
                (-p.concentration * d / lesion.radius).exp() + jitter(&mut rng)
            })
            .collect(),
        ArchetypeKind::DiffuseSuperpixel => {
            let s = p.superpixel_size;
            let (bh, bw) = (height.div_ceil(s), width.div_ceil(s));
            let mut touches = vec![false; bh * bw];
            for (i, &m) in mask.bits().iter().enumerate() {
                if m {
                    touches[(i / width / s) * bw + (i % width) / s] = true;
                }
            }
            let block_values: Vec<f64> = touches
                .iter()
                .map(|&t| if t { 1.0 } else { p.background } + jitter(&mut rng))
                .collect();
            (0..height * width)
                .map(|i| block_values[(i / width / s) * bw + (i % width) / s])
                .collect()
        }
        ArchetypeKind::UniformNoise => (0..height * width)
            .map(|_| rng.next_f64() + jitter(&mut rng))
            .collect(),
        ArchetypeKind::Perfect | ArchetypeKind::Inverted => {
            let on = if p.kind == ArchetypeKind::Perfect { 1.0 } else { 0.0 };
            mask.bits()
                .iter()
                .map(|&m| if m { on } else { 1.0 - on } + jitter(&mut rng))
                .collect()
        }
    };
    let map = AttributionMap::new(height, width, values)?;
    Ok((map, GroundTruthMask::from_grid(mask, "")))
}

/// Lesion radius distribution for generated studies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SizeDistribution {
    /// Pick one of `radii` uniformly, then add uniform jitter in `[−jitter, jitter]`.
    Clusters { radii: Vec<f64>, jitter: f64 },
    Uniform { min_radius: f64, max_radius: f64 },
}

impl SizeDistribution {
    fn sample(&self, rng: &mut SplitMix64) -> Result<f64> {
        match self {
            SizeDistribution::Clusters { radii, jitter } => {
                if radii.is_empty() {
                    return Err(Error::Domain("no radius clusters".into()));
                }
                let base = radii[rng.below(radii.len())];
                Ok((base + rng.uniform(-jitter, *jitter)).max(1.0))
            }
            SizeDistribution::Uniform {
                min_radius,
                max_radius,
            } => Ok(rng.uniform(*min_radius, *max_radius).max(1.0)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub method_id: String,
    #[serde(flatten)]
    pub params: ArchetypeParams,
}

/// Study description read by the `synth` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySpec {
    pub study_name: String,
    pub n_images: usize,
    pub height: usize,
    pub width: usize,
    #[serde(default)]
    pub seed: u64,
    pub size_distribution: SizeDistribution,
    pub methods: Vec<MethodSpec>,
}

impl StudySpec {
    /// Seven archetypes spanning the threshold behaviours of interest, with
    /// three well-separated lesion size clusters.
    pub fn seven_archetypes(n_images: usize, side: usize, seed: u64) -> Self {
        use ArchetypeKind::*;
        let method = |id: &str, params: ArchetypeParams| MethodSpec {
            method_id: id.to_string(),
            params,
        };
        let side_f = side as f64;
        Self {
            study_name: "seven-archetypes".into(),
            n_images,
            height: side,
            width: side,
            seed,
            size_distribution: SizeDistribution::Clusters {
                radii: vec![side_f * 0.08, side_f * 0.17, side_f * 0.3],
                jitter: side_f * 0.02,
            },
            methods: vec![
                method("concentrated", ArchetypeParams::new(Concentrated)),
                method("concentrated_noisy", ArchetypeParams::new(Concentrated).with_noise(0.08)),
                method(
                    "concentrated_broad",
                    ArchetypeParams {
                        concentration: 1.0,
                        ..ArchetypeParams::new(Concentrated).with_noise(0.03)
                    },
                ),
                method("superpixel", ArchetypeParams::new(DiffuseSuperpixel)),
                method(
                    "superpixel_noisy",
                    ArchetypeParams {
                        superpixel_size: 4,
                        ..ArchetypeParams::new(DiffuseSuperpixel).with_noise(0.15)
                    },
                ),
                method("uniform_noise", ArchetypeParams::new(UniformNoise)),
                method("perfect_blurred", ArchetypeParams::new(Perfect).with_noise(0.25)),
            ],
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_images == 0 {
            return Err(Error::Domain("n_images must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Domain("study needs at least one method".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for m in &self.methods {
            let safe = !m.method_id.is_empty()
                && m.method_id
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
                && m.method_id != "."
                && m.method_id != "..";
            if !safe {
                return Err(Error::Validation(format!(
                    "method id {:?} must be non-empty ASCII letters, digits, '_', '-' or '.'",
                    m.method_id
                )));
            }
            if !seen.insert(&m.method_id) {
                return Err(Error::Validation(format!("duplicate method id {:?}", m.method_id)));
            }
            m.params.validate()?;
        }
        Ok(())
    }
}

pub fn image_id(index: usize) -> String {
    format!("img_{index:05}")
}

/// Writes masks, grids and `manifest.json` under `out_dir` and returns the
/// manifest. Output bytes depend only on `spec`.
pub fn generate_study(spec: &StudySpec, out_dir: impl AsRef<Path>) -> Result<ManifestDocument> {
    spec.validate()?;
    let out = out_dir.as_ref();
    let mask_dir = out.join("masks");
    fs::create_dir_all(&mask_dir).map_err(|e| Error::io(&mask_dir, e))?;
    for m in &spec.methods {
        let d = out.join("grids").join(&m.method_id);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }

    let images = (0..spec.n_images)
        .into_par_iter()
        .map(|i| {
            let id = image_id(i);
            let image_seed = derive_seed(spec.seed, i as u64);
            let mut rng = SplitMix64::new(image_seed);
            let radius = spec.size_distribution.sample(&mut rng)?;
            let place = |rng: &mut SplitMix64, extent: usize| -> Result<f64> {
                let hi = extent as f64 - 1.0 - radius;
                if hi < radius {
                    return Err(Error::Domain(format!(
                        "radius {radius:.2} does not fit a {}x{} grid",
                        spec.height, spec.width
                    )));
                }
                Ok(rng.uniform(radius, hi))
            };
            let lesion = Lesion {
                center_row: place(&mut rng, spec.height)?,
                center_col: place(&mut rng, spec.width)?,
                radius,
            };
            let mut grids = BTreeMap::new();
            let mut mask_out = None;
            for (j, m) in spec.methods.iter().enumerate() {
                let archetype = ArchetypeSpec {
                    params: m.params,
                    lesion,
                    seed: derive_seed(image_seed, j as u64 + 1),
                };
                let (map, mask) = generate(&archetype, spec.height, spec.width)?;
                let rel = format!("grids/{}/{id}.agrd", m.method_id);
                write_grid(&map, out.join(&rel))?;
                grids.insert(m.method_id.clone(), rel);
                mask_out.get_or_insert(mask);
            }
            let mask = mask_out.expect("at least one method");
            let rel_mask = format!("masks/{id}.pgm");
            write_pgm(&GrayImage::from_grid(&mask.grid), out.join(&rel_mask))?;
            Ok(ManifestImage {
                image_id: id,
                mask: rel_mask,
                original_positive_pixels: mask.original_positive_pixels,
                class_label: "synthetic".into(),
                grids,
            })
        })
        .collect::<Vec<Result<ManifestImage>>>()
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let doc = ManifestDocument {
        study_name: spec.study_name.clone(),
        methods: spec.methods.iter().map(|m| m.method_id.clone()).collect(),
        images,
        seed: Some(spec.seed),
    };
    write_manifest(&doc, out.join("manifest.json"))?;
    Ok(doc)
}
