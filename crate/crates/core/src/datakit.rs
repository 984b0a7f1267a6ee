//! Synthetic images, PGM I/O, dataset manifests and measurement generation.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::cdp::{measure, MaskSet, MeasurementVector};
use crate::error::{Error, Result};
use crate::field::{check_pow2, RealImage};
use crate::rng::{mix_seed, streams, SeededRng};

/// Noise levels a sample may carry. Zero is allowed for noiseless sets.
pub const ALPHAS: [f64; 3] = [9.0, 27.0, 81.0];
pub const MANIFEST_FORMAT: &str = "learned-cdp-dataset";
pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.txt";

/// One ground-truth image with its precomputed measurement.
#[derive(Clone, Debug)]
pub struct Sample {
    pub name: String,
    pub image: RealImage,
    pub measurement: MeasurementVector,
    pub masks: Arc<MaskSet>,
}

/// Which mask distribution a dataset is measured with.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    /// Mask seed shared by every sample of the split.
    ///
    /// Test masks come from a separate seed domain so they never coincide
    /// with the masks seen during training.
    pub fn mask_seed(self, seed: u64) -> u64 {
        match self {
            Split::Train => mix_seed(seed, 0x6d61_736b_0001),
            Split::Test => mix_seed(seed, 0x6d61_736b_0002),
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::arg(format!(
                "unknown split '{other}' (expected train or test)"
            ))),
        }
    }
}

/// Random smooth test image: Gaussian blobs plus axis-aligned rectangles,
/// clipped to `[0, 1]`.
pub fn synth_image(rng: &mut SeededRng, height: usize, width: usize) -> Result<RealImage> {
    check_pow2(height, width)?;
    let (hf, wf) = (height as f64, width as f64);
    let scale = hf.min(wf);
    let mut data = vec![0.0; height * width];
    for _ in 0..rng.int_inclusive(3, 8) {
        let cy = rng.uniform_range(0.0, hf);
        let cx = rng.uniform_range(0.0, wf);
        let sigma = rng.uniform_range(scale / 16.0, scale / 4.0);
        let amp = rng.uniform_range(0.2, 0.7);
        let inv = 1.0 / (2.0 * sigma * sigma);
        for (r, row) in data.chunks_mut(width).enumerate() {
            let dy = r as f64 + 0.5 - cy;
            for (c, v) in row.iter_mut().enumerate() {
                let dx = c as f64 + 0.5 - cx;
                *v += amp * (-(dx * dx + dy * dy) * inv).exp();
            }
        }
    }
    for _ in 0..rng.int_inclusive(0, 3) {
        let rh = rng.uniform_range(hf / 8.0, hf / 2.0);
        let rw = rng.uniform_range(wf / 8.0, wf / 2.0);
        let top = rng.uniform_range(0.0, hf - rh);
        let left = rng.uniform_range(0.0, wf - rw);
        let value = rng.uniform_range(0.2, 0.8);
        for (r, row) in data.chunks_mut(width).enumerate() {
            let y = r as f64 + 0.5;
            if y < top || y >= top + rh {
                continue;
            }
            for (c, v) in row.iter_mut().enumerate() {
                let x = c as f64 + 0.5;
                if x >= left && x < left + rw {
                    *v += value;
                }
            }
        }
    }
    let mut img = RealImage::new(height, width, data)?;
    img.clamp_unit();
    Ok(img)
}

/// Write `bytes` to a sibling temp file, then rename over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::arg(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

/// 8-bit binary PGM bytes. Pixels are clamped to `[0, 1]` and rounded.
pub fn encode_pgm(image: &RealImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend(
        image
            .data()
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    out
}

/// Parse a binary (P5) PGM with maxval 255 into `[0, 1]` pixels.
pub fn decode_pgm(bytes: &[u8]) -> Result<RealImage> {
    match bytes.get(..2) {
        Some(b"P5") => {}
        Some(b"P2") => return Err(Error::UnsupportedFormat("ASCII PGM (P2)".into())),
        _ => return Err(Error::format(0, "missing P5 magic")),
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (i, field) in fields.iter_mut().enumerate() {
        // whitespace and comments between header tokens
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
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
            let what = ["width", "height", "maxval"][i];
            return Err(Error::format(pos as u64, format!("expected {what}")));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format(start as u64, "header number out of range"))?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(Error::UnsupportedFormat(format!(
            "PGM maxval {maxval} (only 255 is supported)"
        )));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::format(
            pos as u64,
            "expected whitespace after maxval",
        ));
    }
    pos += 1;
    let n = width * height;
    let pixels = bytes
        .get(pos..pos + n)
        .ok_or_else(|| Error::format(bytes.len() as u64, format!("expected {n} pixel bytes")))?;
    RealImage::new(
        height,
        width,
        pixels.iter().map(|&p| p as f64 / 255.0).collect(),
    )
}

pub fn load_pgm(path: &Path) -> Result<RealImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes)
}

pub fn save_pgm(image: &RealImage, path: &Path) -> Result<()> {
    write_atomic(path, &encode_pgm(image))
}

/// Where a record's ground-truth image comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum ImageSource {
    /// PGM path, relative to the manifest directory.
    File(String),
    /// Regenerated with [`synth_image`] from this seed.
    Synth(u64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleRecord {
    pub source: ImageSource,
    pub alpha: f64,
    pub mask_seed: u64,
}

/// Everything needed to rebuild a dataset bit-exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub mask_count: usize,
    pub records: Vec<SampleRecord>,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha == 0.0 || ALPHAS.contains(&alpha) {
        Ok(())
    } else {
        Err(Error::arg(format!(
            "noise level {alpha} not in {{0, 9, 27, 81}}"
        )))
    }
}

impl DatasetManifest {
    /// Render as `key=value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "format={MANIFEST_FORMAT}");
        let _ = writeln!(s, "version={MANIFEST_VERSION}");
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "height={}", self.height);
        let _ = writeln!(s, "width={}", self.width);
        let _ = writeln!(s, "masks={}", self.mask_count);
        let _ = writeln!(s, "count={}", self.records.len());
        for (i, r) in self.records.iter().enumerate() {
            match &r.source {
                ImageSource::File(p) => {
                    let _ = writeln!(s, "sample.{i}.image={p}");
                }
                ImageSource::Synth(seed) => {
                    let _ = writeln!(s, "sample.{i}.synth_seed={seed}");
                }
            }
            let _ = writeln!(s, "sample.{i}.alpha={}", r.alpha);
            let _ = writeln!(s, "sample.{i}.mask_seed={}", r.mask_seed);
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut global: HashMap<&str, &str> = HashMap::new();
        let mut samples: HashMap<usize, HashMap<&str, &str>> = HashMap::new();
        let mut offset = 0u64;
        for line in text.split_inclusive('\n') {
            let here = offset;
            offset += line.len() as u64;
            let line = line.trim_end_matches(['\n', '\r']);
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::format(here, format!("expected key=value, got '{line}'")))?;
            if let Some(rest) = key.strip_prefix("sample.") {
                let (idx, field) = rest
                    .split_once('.')
                    .ok_or_else(|| Error::format(here, format!("bad sample key '{key}'")))?;
                let idx: usize = idx
                    .parse()
                    .map_err(|_| Error::format(here, format!("bad sample index in '{key}'")))?;
                samples.entry(idx).or_default().insert(field, value);
            } else {
                global.insert(key, value);
            }
        }
        let get = |k: &str| {
            global
                .get(k)
                .copied()
                .ok_or_else(|| Error::format(0, format!("manifest missing '{k}'")))
        };
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.trim()
                .parse()
                .map_err(|_| Error::format(0, format!("bad value for '{key}': '{v}'")))
        }
        if get("format")? != MANIFEST_FORMAT {
            return Err(Error::UnsupportedFormat(format!(
                "manifest format '{}'",
                get("format")?
            )));
        }
        let version: u32 = num("version", get("version")?)?;
        if version != MANIFEST_VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                expected: MANIFEST_VERSION,
            });
        }
        let count: usize = num("count", get("count")?)?;
        let mut records = Vec::with_capacity(count);
        for i in 0..count {
            let fields = samples
                .get(&i)
                .ok_or_else(|| Error::format(0, format!("manifest missing sample {i}")))?;
            let field = |k: &str| {
                fields
                    .get(k)
                    .copied()
                    .ok_or_else(|| Error::format(0, format!("sample {i} missing '{k}'")))
            };
            let source = match (fields.get("image"), fields.get("synth_seed")) {
                (Some(p), None) => ImageSource::File(p.to_string()),
                (None, Some(s)) => ImageSource::Synth(num("synth_seed", s)?),
                _ => {
                    return Err(Error::format(
                        0,
                        format!("sample {i} needs exactly one of image, synth_seed"),
                    ))
                }
            };
            let alpha: f64 = num("alpha", field("alpha")?)?;
            check_alpha(alpha).map_err(|e| Error::Record {
                index: i,
                source: Box::new(e),
            })?;
            records.push(SampleRecord {
                source,
                alpha,
                mask_seed: num("mask_seed", field("mask_seed")?)?,
            });
        }
        if samples.keys().any(|&i| i >= count) {
            return Err(Error::format(0, "sample index beyond count"));
        }
        Ok(Self {
            seed: num("seed", get("seed")?)?,
            height: num("height", get("height")?)?,
            width: num("width", get("width")?)?,
            mask_count: num("masks", get("masks")?)?,
            records,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

/// Per-sample noise levels: `alphas` repeated round-robin, then shuffled, so
/// each level occurs equally often (up to one when `count` is not a multiple).
pub fn assign_alphas(count: usize, alphas: &[f64], seed: u64) -> Result<Vec<f64>> {
    if alphas.is_empty() {
        return Err(Error::arg("at least one noise level is required"));
    }
    for &a in alphas {
        check_alpha(a)?;
    }
    let mut out: Vec<f64> = (0..count).map(|i| alphas[i % alphas.len()]).collect();
    SeededRng::named(seed, streams::ALPHA, 0).shuffle(&mut out);
    Ok(out)
}

/// Manifest for `count` synthetic images.
pub fn synth_manifest(
    count: usize,
    height: usize,
    width: usize,
    seed: u64,
    alphas: &[f64],
    split: Split,
) -> Result<DatasetManifest> {
    check_pow2(height, width)?;
    let mask_seed = split.mask_seed(seed);
    let records = assign_alphas(count, alphas, seed)?
        .into_iter()
        .enumerate()
        .map(|(i, alpha)| SampleRecord {
            source: ImageSource::Synth(mix_seed(seed, i as u64)),
            alpha,
            mask_seed,
        })
        .collect();
    Ok(DatasetManifest {
        seed,
        height,
        width,
        mask_count: 4,
        records,
    })
}

/// Image for synthesis seed `seed`.
pub fn synth_from_seed(seed: u64, height: usize, width: usize) -> Result<RealImage> {
    synth_image(
        &mut SeededRng::named(seed, streams::SYNTH, 0),
        height,
        width,
    )
}

/// Materialize images, masks and measurements, in manifest order.
///
/// File paths are resolved against `base`.
pub fn build_dataset(manifest: &DatasetManifest, base: &Path) -> Result<Vec<Sample>> {
    let (h, w) = (manifest.height, manifest.width);
    let mut masks: HashMap<u64, Arc<MaskSet>> = HashMap::new();
    manifest
        .records
        .iter()
        .enumerate()
        .map(|(i, rec)| {
            let wrap = |e: Error| Error::Record {
                index: i,
                source: Box::new(e),
            };
            let (name, image) = match &rec.source {
                ImageSource::File(p) => {
                    let path: PathBuf = base.join(p);
                    (p.clone(), load_pgm(&path).map_err(wrap)?)
                }
                ImageSource::Synth(s) => (
                    format!("synth_{i:05}"),
                    synth_from_seed(*s, h, w).map_err(wrap)?,
                ),
            };
            if image.shape() != (h, w) {
                return Err(wrap(Error::dim(format!(
                    "image is {}x{}, manifest declares {h}x{w}",
                    image.height(),
                    image.width()
                ))));
            }
            let set = match masks.get(&rec.mask_seed) {
                Some(m) => m.clone(),
                None => {
                    let m = Arc::new(
                        MaskSet::from_seed(rec.mask_seed, manifest.mask_count, h, w)
                            .map_err(wrap)?,
                    );
                    masks.insert(rec.mask_seed, m.clone());
                    m
                }
            };
            let mut rng = SeededRng::named(manifest.seed, streams::NOISE, i as u64);
            let measurement = measure(&image, &set, rec.alpha, &mut rng).map_err(wrap)?;
            Ok(Sample {
                name,
                image,
                measurement,
                masks: set,
            })
        })
        .collect()
}

/// Load `DIR/manifest.txt` and build its dataset.
pub fn load_dataset(dir: &Path) -> Result<(DatasetManifest, Vec<Sample>)> {
    let manifest = DatasetManifest::load(&dir.join(MANIFEST_FILE))?;
    let samples = build_dataset(&manifest, dir)?;
    Ok((manifest, samples))
}

/// Write synthetic images as PGMs plus a manifest referencing them.
///
/// Images are quantized to 8 bits on disk, and the manifest points at the
/// files, so a rebuilt dataset sees exactly the stored pixels.
pub fn write_synth_dataset(
    dir: &Path,
    count: usize,
    height: usize,
    width: usize,
    seed: u64,
    alphas: &[f64],
    split: Split,
) -> Result<DatasetManifest> {
    let mut manifest = synth_manifest(count, height, width, seed, alphas, split)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, rec) in manifest.records.iter_mut().enumerate() {
        let ImageSource::Synth(s) = rec.source else {
            unreachable!("synth_manifest only emits synthetic records")
        };
        let file = format!("img_{i:05}.pgm");
        save_pgm(&synth_from_seed(s, height, width)?, &dir.join(&file))?;
        rec.source = ImageSource::File(file);
    }
    write_atomic(&dir.join(MANIFEST_FILE), manifest.to_text().as_bytes())?;
    Ok(manifest)
}
