//! Geometry/material feature maps.
//!
//! Builds a 3-channel image from a segmentation map, a depth map, and a
//! material absorption database: channels 0 and 1 pack the low-band
//! (125/500 Hz) and high-band (2000/8000 Hz) absorption coefficients as two
//! 4-bit levels each (`low + 16 * high`), channel 2 is the depth map
//! quantized over its own maximum with the meters-per-unit scale stored in
//! a sidecar.
//!
//! Object names are matched to database materials by normalized-token
//! Jaccard similarity. That is a deterministic, dependency-free stand-in
//! for sentence-embedding matching; a zero score falls back to the entry
//! named "default".

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Frequency-dependent absorption coefficients for one material.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbsorptionEntry {
    pub material_name: String,
    pub ac125: f64,
    pub ac500: f64,
    pub ac2000: f64,
    pub ac8000: f64,
}

impl AbsorptionEntry {
    pub fn validate(&self) -> Result<()> {
        for &c in &[self.ac125, self.ac500, self.ac2000, self.ac8000] {
            if !(0.0..=1.0).contains(&c) || !c.is_finite() {
                return Err(Error::CoefficientOutOfRange(c));
            }
        }
        Ok(())
    }
}

/// Name of the fallback database entry used when nothing matches.
pub const DEFAULT_MATERIAL_NAME: &str = "default";

fn tokens(name: &str) -> Vec<String> {
    name.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

fn jaccard(a: &[String], b: &[String]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let set_a: std::collections::BTreeSet<&str> = a.iter().map(String::as_str).collect();
    let set_b: std::collections::BTreeSet<&str> = b.iter().map(String::as_str).collect();
    let inter = set_a.intersection(&set_b).count();
    let union = set_a.union(&set_b).count();
    inter as f64 / union as f64
}

/// Picks the database entry whose name shares the most tokens with
/// `object_name` (Jaccard similarity, ties to the lowest index). A score of
/// zero falls back to the "default" entry.
pub fn match_material<'a>(
    object_name: &str,
    db: &'a [AbsorptionEntry],
) -> Result<&'a AbsorptionEntry> {
    if db.is_empty() {
        return Err(Error::EmptyInput("absorption database"));
    }
    let query = tokens(object_name);
    let mut best: Option<(f64, usize)> = None;
    for (i, entry) in db.iter().enumerate() {
        let score = jaccard(&query, &tokens(&entry.material_name));
        let better = match best {
            None => true,
            Some((best_score, _)) => score > best_score,
        };
        if better {
            best = Some((score, i));
        }
    }
    let (score, idx) = best.expect("db is non-empty");
    if score > 0.0 {
        return Ok(&db[idx]);
    }
    db.iter()
        .find(|e| e.material_name == DEFAULT_MATERIAL_NAME)
        .ok_or(Error::MissingDefaultEntry)
}

fn quantize_coefficient(c: f64) -> Result<u8> {
    if !(0.0..=1.0).contains(&c) || !c.is_finite() {
        return Err(Error::CoefficientOutOfRange(c));
    }
    Ok((15.0 * c).round() as u8)
}

/// Packs four absorption coefficients into two image channels: each
/// coefficient quantizes to a 4-bit level `round(15 * ac)` and a channel
/// holds `low + 16 * high`.
pub fn pack_channels(ac125: f64, ac500: f64, ac2000: f64, ac8000: f64) -> Result<(u8, u8)> {
    let q125 = quantize_coefficient(ac125)?;
    let q500 = quantize_coefficient(ac500)?;
    let q2000 = quantize_coefficient(ac2000)?;
    let q8000 = quantize_coefficient(ac8000)?;
    Ok((q125 + 16 * q500, q2000 + 16 * q8000))
}

/// Recovers the four quantized levels; exact inverse of [`pack_channels`]
/// on the 16x16 grid per channel.
pub fn unpack_channels(c0: u8, c1: u8) -> (u8, u8, u8, u8) {
    (c0 % 16, c0 / 16, c1 % 16, c1 / 16)
}

/// Integer label grid with a label -> object-name table.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationMap {
    pub labels: Vec<u16>,
    pub width: usize,
    pub height: usize,
    pub label_names: BTreeMap<u16, String>,
}

impl SegmentationMap {
    pub fn new(
        labels: Vec<u16>,
        width: usize,
        height: usize,
        label_names: BTreeMap<u16, String>,
    ) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::LengthMismatch {
                left: labels.len(),
                right: width * height,
            });
        }
        Ok(Self {
            labels,
            width,
            height,
            label_names,
        })
    }
}

/// Depth in meters, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub values: Vec<f64>,
    pub width: usize,
    pub height: usize,
}

impl DepthMap {
    pub fn new(values: Vec<f64>, width: usize, height: usize) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::LengthMismatch {
                left: values.len(),
                right: width * height,
            });
        }
        for &v in &values {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidValue(format!("bad depth value {v}")));
            }
        }
        Ok(Self {
            values,
            width,
            height,
        })
    }
}

/// The assembled 3-channel feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct GeoMatMap {
    /// Channel-major: [low-band AC, high-band AC, quantized depth].
    pub channels: [Vec<u8>; 3],
    pub width: usize,
    pub height: usize,
    /// Meters per depth-channel unit; 0 for an all-zero depth map.
    pub depth_scale: f64,
}

/// Builds the feature map: per pixel the label's object name is matched to
/// the database and its packed absorption fills channels 0-1; channel 2 is
/// depth quantized to 0-255 over the map's maximum.
pub fn build_geomat(
    seg: &SegmentationMap,
    depth: &DepthMap,
    db: &[AbsorptionEntry],
) -> Result<GeoMatMap> {
    if seg.width != depth.width || seg.height != depth.height {
        return Err(Error::GridDimMismatch {
            left_w: seg.width,
            left_h: seg.height,
            right_w: depth.width,
            right_h: depth.height,
        });
    }
    for entry in db {
        entry.validate()?;
    }
    // Resolve each distinct label once.
    let mut packed: BTreeMap<u16, (u8, u8)> = BTreeMap::new();
    for &label in &seg.labels {
        if packed.contains_key(&label) {
            continue;
        }
        let name = seg
            .label_names
            .get(&label)
            .ok_or(Error::UnmappedLabel(label))?;
        let entry = match_material(name, db)?;
        packed.insert(
            label,
            pack_channels(entry.ac125, entry.ac500, entry.ac2000, entry.ac8000)?,
        );
    }

    let pixels = seg.width * seg.height;
    let mut c0 = vec![0u8; pixels];
    let mut c1 = vec![0u8; pixels];
    for (i, &label) in seg.labels.iter().enumerate() {
        let (lo, hi) = packed[&label];
        c0[i] = lo;
        c1[i] = hi;
    }

    let depth_max = depth.values.iter().copied().fold(0.0f64, f64::max);
    let mut c2 = vec![0u8; pixels];
    let depth_scale = if depth_max > 0.0 {
        for (i, &d) in depth.values.iter().enumerate() {
            c2[i] = (255.0 * d / depth_max).round() as u8;
        }
        depth_max / 255.0
    } else {
        0.0
    };

    Ok(GeoMatMap {
        channels: [c0, c1, c2],
        width: seg.width,
        height: seg.height,
        depth_scale,
    })
}

// -- file formats -------------------------------------------------------

/// Sidecar JSON written next to the PNG.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoMatSidecar {
    pub width: usize,
    pub height: usize,
    pub depth_scale: f64,
}

/// Reads a binary PGM (P5) file with up to 16-bit samples.
pub fn read_pgm16(path: impl AsRef<Path>) -> Result<(Vec<u16>, usize, usize)> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let bad = |msg: &str| Error::Format(format!("{}: {msg}", path.display()));

    // Header tokens: magic, width, height, maxval; '#' starts a comment.
    let mut pos = 0usize;
    let mut next_token = || -> Result<String> {
        let mut tok = String::new();
        while pos < bytes.len() {
            let c = bytes[pos] as char;
            if c == '#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            if c.is_whitespace() {
                pos += 1;
                if !tok.is_empty() {
                    return Ok(tok);
                }
                continue;
            }
            tok.push(c);
            pos += 1;
        }
        if tok.is_empty() {
            Err(Error::Format("truncated PGM header".into()))
        } else {
            Ok(tok)
        }
    };

    if next_token()? != "P5" {
        return Err(bad("not a binary PGM (P5) file"));
    }
    let width: usize = next_token()?.parse().map_err(|_| bad("bad width"))?;
    let height: usize = next_token()?.parse().map_err(|_| bad("bad height"))?;
    let maxval: u32 = next_token()?.parse().map_err(|_| bad("bad maxval"))?;
    if maxval == 0 || maxval > 65_535 {
        return Err(bad("maxval out of range"));
    }
    let data = &bytes[pos..];
    let pixels = width * height;
    let samples = if maxval <= 255 {
        if data.len() != pixels {
            return Err(bad("payload size mismatch"));
        }
        data.iter().map(|&b| b as u16).collect()
    } else {
        if data.len() != 2 * pixels {
            return Err(bad("payload size mismatch"));
        }
        data.chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    };
    Ok((samples, width, height))
}

/// Writes a 16-bit binary PGM (big-endian samples, maxval 65535).
pub fn write_pgm16(
    path: impl AsRef<Path>,
    samples: &[u16],
    width: usize,
    height: usize,
) -> Result<()> {
    assert_eq!(samples.len(), width * height, "PGM payload size mismatch");
    let mut f = fs::File::create(path)?;
    write!(f, "P5\n{width} {height}\n65535\n")?;
    let mut payload = Vec::with_capacity(samples.len() * 2);
    for &s in samples {
        payload.extend_from_slice(&s.to_be_bytes());
    }
    f.write_all(&payload)?;
    Ok(())
}

/// Parses the labels JSON: an object mapping label integers (as strings)
/// to object names, e.g. `{"0": "wall", "1": "wooden chair"}`.
pub fn parse_label_names(json: &str) -> Result<BTreeMap<u16, String>> {
    let raw: BTreeMap<String, String> = serde_json::from_str(json)?;
    let mut out = BTreeMap::new();
    for (key, name) in raw {
        let label: u16 = key
            .parse()
            .map_err(|_| Error::Format(format!("label key {key:?} is not a u16")))?;
        out.insert(label, name);
    }
    Ok(out)
}

/// Loads the absorption database: a JSON array of entries.
pub fn load_absorption_db(path: impl AsRef<Path>) -> Result<Vec<AbsorptionEntry>> {
    let text = fs::read_to_string(path)?;
    let db: Vec<AbsorptionEntry> = serde_json::from_str(&text)?;
    for entry in &db {
        entry.validate()?;
    }
    Ok(db)
}

/// Writes the map as an 8-bit RGB PNG plus a JSON sidecar with the depth
/// scale; the sidecar lands at the PNG path with extension `.json`.
pub fn write_geomat_png(path: impl AsRef<Path>, map: &GeoMatMap) -> Result<()> {
    let path = path.as_ref();
    let mut raw = Vec::with_capacity(map.width * map.height * 3);
    for i in 0..map.width * map.height {
        raw.push(map.channels[0][i]);
        raw.push(map.channels[1][i]);
        raw.push(map.channels[2][i]);
    }
    let img = image::RgbImage::from_raw(map.width as u32, map.height as u32, raw)
        .expect("raw buffer matches dimensions");
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;

    let sidecar = GeoMatSidecar {
        width: map.width,
        height: map.height,
        depth_scale: map.depth_scale,
    };
    let sidecar_path = path.with_extension("json");
    fs::write(sidecar_path, serde_json::to_string_pretty(&sidecar)?)?;
    Ok(())
}
