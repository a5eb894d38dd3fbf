use std::fs;
use std::io::Cursor;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    apply_lut, generate_patch, ClassLabel, Domain, GeneratorConfig, LesionParams, Patch,
};
use crate::{Error, Result};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PATCH_DIR: &str = "patches";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetMode {
    /// Each case appears once, in a domain chosen by a seeded coin flip.
    Mixed,
    /// Each case appears in both domains.
    Augmented,
}

impl FromStr for DatasetMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mixed" => Ok(DatasetMode::Mixed),
            "augmented" => Ok(DatasetMode::Augmented),
            other => Err(Error::InvalidArgument(format!(
                "unknown dataset mode {other:?} (expected \"mixed\" or \"augmented\")"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchRecord {
    pub file: String,
    /// Index of the base patch; the two domains of a case share it.
    pub case: usize,
    pub class: ClassLabel,
    pub domain: Domain,
    pub seed: u64,
    pub beta: f64,
    pub lesion_params: Option<LesionParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub generator: GeneratorConfig,
    pub mode: DatasetMode,
    pub split_seed: u64,
    pub n_cases: usize,
    pub records: Vec<PatchRecord>,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-case seed: `base_seed XOR splitmix64(case)`.
pub fn case_seed(base_seed: u64, case: usize) -> u64 {
    base_seed ^ splitmix64(case as u64)
}

/// 16-bit quantization used for the on-disk images.
pub fn quantize(p: f64) -> u16 {
    (p.clamp(0.0, 1.0) * 65535.0).round() as u16
}

pub fn encode_png16(pixels: &Array2<f64>) -> Result<Vec<u8>> {
    let (rows, cols) = pixels.dim();
    let mut data = Vec::with_capacity(rows * cols * 2);
    for &p in pixels.iter() {
        data.extend_from_slice(&quantize(p).to_be_bytes());
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, cols as u32, rows as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Sixteen);
        let png_err = |e: png::EncodingError| Error::Png {
            path: "<memory>".into(),
            detail: e.to_string(),
        };
        let mut writer = enc.write_header().map_err(png_err)?;
        writer.write_image_data(&data).map_err(png_err)?;
    }
    Ok(out)
}

/// Decodes a 16-bit grayscale PNG into raw sample values.
pub fn decode_png16(path: &Path) -> Result<Array2<u16>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let png_err = |detail: String| Error::Png {
        path: path.to_path_buf(),
        detail,
    };
    let decoder = png::Decoder::new(Cursor::new(bytes));
    let mut reader = decoder.read_info().map_err(|e| png_err(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| png_err("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| png_err(e.to_string()))?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Sixteen {
        return Err(png_err(format!(
            "expected 16-bit grayscale, got {:?} {:?}",
            info.color_type, info.bit_depth
        )));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let values: Vec<u16> = buf[..w * h * 2]
        .chunks_exact(2)
        .map(|b| u16::from_be_bytes([b[0], b[1]]))
        .collect();
    Ok(Array2::from_shape_vec((h, w), values).expect("decoded size"))
}

fn final_patch(raw: &Patch, domain: Domain, config: &GeneratorConfig) -> Result<Patch> {
    match domain {
        Domain::Raw => Ok(raw.clone()),
        Domain::Lut => apply_lut(raw, &config.lut),
    }
}

/// Generates a class-balanced dataset under `out_dir`: `manifest.json` plus
/// `patches/<index>.png`. Any previous `patches/` directory is replaced.
pub fn generate_dataset(
    config: &GeneratorConfig,
    n_patches: usize,
    mode: DatasetMode,
    split_seed: u64,
    out_dir: &Path,
) -> Result<Manifest> {
    config.validate()?;
    if n_patches == 0 || !n_patches.is_multiple_of(ClassLabel::ALL.len()) {
        return Err(Error::Config(format!(
            "n_patches must be a positive multiple of {}, got {n_patches}",
            ClassLabel::ALL.len()
        )));
    }

    let mut split_rng = ChaCha8Rng::seed_from_u64(split_seed);
    let case_domains: Vec<Vec<Domain>> = (0..n_patches)
        .map(|_| match mode {
            DatasetMode::Mixed => {
                if split_rng.random_bool(0.5) {
                    vec![Domain::Lut]
                } else {
                    vec![Domain::Raw]
                }
            }
            DatasetMode::Augmented => vec![Domain::Raw, Domain::Lut],
        })
        .collect();

    let encoded: Vec<Vec<(PatchRecord, Vec<u8>)>> = (0..n_patches)
        .into_par_iter()
        .map(|case| -> Result<Vec<(PatchRecord, Vec<u8>)>> {
            let class = ClassLabel::from_index(case % ClassLabel::ALL.len()).expect("class");
            let seed = case_seed(config.seed, case);
            let raw = generate_patch(config, class, seed)?;
            case_domains[case]
                .iter()
                .map(|&domain| {
                    let patch = final_patch(&raw, domain, config)?;
                    let record = PatchRecord {
                        file: String::new(),
                        case,
                        class,
                        domain,
                        seed,
                        beta: raw.provenance.beta,
                        lesion_params: raw.provenance.lesion.clone(),
                    };
                    Ok((record, encode_png16(&patch.pixels)?))
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let patch_dir = out_dir.join(PATCH_DIR);
    if patch_dir.exists() {
        fs::remove_dir_all(&patch_dir).map_err(|e| Error::io(&patch_dir, e))?;
    }
    fs::create_dir_all(&patch_dir).map_err(|e| Error::io(&patch_dir, e))?;

    let mut records = Vec::new();
    for (index, (mut record, bytes)) in encoded.into_iter().flatten().enumerate() {
        record.file = format!("{PATCH_DIR}/{index:05}.png");
        let path = out_dir.join(&record.file);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        records.push(record);
    }

    let manifest = Manifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        generator: config.clone(),
        mode,
        split_seed,
        n_cases: n_patches,
        records,
    };
    let path = out_dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Json {
        path: path.clone(),
        source: e,
    })?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.clone(),
        source: e,
    })?;
    if manifest.schema_version != MANIFEST_SCHEMA_VERSION {
        return Err(Error::Schema {
            path,
            detail: format!(
                "manifest schema_version {} (expected {MANIFEST_SCHEMA_VERSION})",
                manifest.schema_version
            ),
        });
    }
    Ok(manifest)
}

/// Rebuilds the exact patch behind a manifest record from its seed.
pub fn regenerate_record(config: &GeneratorConfig, record: &PatchRecord) -> Result<Patch> {
    let raw = generate_patch(config, record.class, record.seed)?;
    if raw.provenance.beta != record.beta || raw.provenance.lesion != record.lesion_params {
        return Err(Error::Pipeline(format!(
            "record {} does not match its regenerated provenance",
            record.file
        )));
    }
    final_patch(&raw, record.domain, config)
}

/// Regenerates every record and compares it sample-for-sample with the
/// stored image. Returns the number of records checked.
pub fn verify_dataset(dir: &Path) -> Result<usize> {
    let manifest = read_manifest(dir)?;
    manifest
        .records
        .par_iter()
        .map(|record| {
            let patch = regenerate_record(&manifest.generator, record)?;
            let stored = decode_png16(&dir.join(&record.file))?;
            let fresh = patch.pixels.mapv(quantize);
            if stored != fresh {
                return Err(Error::Pipeline(format!(
                    "{} differs from its regeneration",
                    record.file
                )));
            }
            Ok(())
        })
        .collect::<Result<Vec<()>>>()
        .map(|v| v.len())
}

#[cfg(test)]
mod tests {
    use super::super::CountRange;
    use super::*;

    fn small() -> GeneratorConfig {
        GeneratorConfig {
            patch_size: 32,
            mass_radius_range: super::super::Interval::new(2.0, 6.0),
            calc_area_side_range: CountRange::new(6, 12),
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("mixed".parse::<DatasetMode>().unwrap(), DatasetMode::Mixed);
        assert_eq!(
            "augmented".parse::<DatasetMode>().unwrap(),
            DatasetMode::Augmented
        );
        assert!("both".parse::<DatasetMode>().is_err());
    }

    #[test]
    fn case_seeds_are_distinct() {
        let seeds: std::collections::HashSet<u64> = (0..1000).map(|i| case_seed(42, i)).collect();
        assert_eq!(seeds.len(), 1000);
    }

    #[test]
    fn png_round_trip_is_exact_on_quantized_values() {
        let px = Array2::from_shape_fn((8, 6), |(r, c)| (r * 6 + c) as f64 / 47.0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        fs::write(&path, encode_png16(&px).unwrap()).unwrap();
        assert_eq!(decode_png16(&path).unwrap(), px.mapv(quantize));
    }

    #[test]
    fn rejects_unbalanced_count() {
        let dir = tempfile::tempdir().unwrap();
        assert!(generate_dataset(&small(), 10, DatasetMode::Mixed, 0, dir.path()).is_err());
    }

    #[test]
    fn mixed_dataset_is_balanced_and_verifiable() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_dataset(&small(), 30, DatasetMode::Mixed, 9, dir.path()).unwrap();
        assert_eq!(m.records.len(), 30);
        for class in ClassLabel::ALL {
            assert_eq!(m.records.iter().filter(|r| r.class == class).count(), 10);
        }
        assert_eq!(read_manifest(dir.path()).unwrap(), m);
        assert_eq!(verify_dataset(dir.path()).unwrap(), 30);
    }

    #[test]
    fn augmented_dataset_pairs_domains() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_dataset(&small(), 9, DatasetMode::Augmented, 1, dir.path()).unwrap();
        assert_eq!(m.records.len(), 18);
        for pair in m.records.chunks(2) {
            assert_eq!(pair[0].seed, pair[1].seed);
            assert_eq!(pair[0].case, pair[1].case);
            assert_eq!((pair[0].domain, pair[1].domain), (Domain::Raw, Domain::Lut));
            assert_eq!(pair[0].lesion_params, pair[1].lesion_params);
        }
    }

    #[test]
    fn tampered_image_fails_verification() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_dataset(&small(), 3, DatasetMode::Mixed, 1, dir.path()).unwrap();
        let victim = dir.path().join(&m.records[0].file);
        let other = dir.path().join(&m.records[1].file);
        fs::copy(other, victim).unwrap();
        assert!(verify_dataset(dir.path()).is_err());
    }

    #[test]
    fn manifest_rejects_unknown_schema_version() {
        let dir = tempfile::tempdir().unwrap();
        generate_dataset(&small(), 3, DatasetMode::Mixed, 1, dir.path()).unwrap();
        let path = dir.path().join(MANIFEST_FILE);
        let text = fs::read_to_string(&path)
            .unwrap()
            .replacen("\"schema_version\": 1", "\"schema_version\": 7", 1);
        fs::write(&path, text).unwrap();
        assert!(matches!(
            read_manifest(dir.path()),
            Err(Error::Schema { .. })
        ));
    }
}
