//! Bundle format: a stored ZIP holding `manifest.json` plus one image per plane group.

pub mod image;

use std::collections::BTreeSet;
use std::io::{Cursor, Read, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::{build_grid_layout, normalize_for_sorting, prune_to_grid, Attribute, GridLayout, GridStack, SplatCloud};
use crate::error::{Error, Result};
use crate::plas::{sort_grid, SortConfig, SortReport};
use crate::quant::{from_stored, to_stored, ClipRule, QuantSpec, Quantizer};

pub use image::{codec_for_tag, decode_plane, encode_plane, ImageCodec, PlaneImage};

pub const FORMAT: &str = "sogs/1";
pub const MANIFEST_NAME: &str = "manifest.json";

/// Codec tags for the plane groups.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodecChoice {
    /// Used for every group except `sh_dc`; must be lossless.
    pub lossless: String,
    /// May be lossy.
    pub sh_dc: String,
    /// Quality passed to a lossy `sh_dc` codec.
    pub quality: u8,
}

impl Default for CodecChoice {
    fn default() -> Self {
        let tag = image::default_lossless_tag().to_string();
        CodecChoice {
            lossless: tag.clone(),
            sh_dc: tag,
            quality: 100,
        }
    }
}

impl CodecChoice {
    /// Same tag for every group.
    pub fn uniform(tag: &str) -> Self {
        CodecChoice {
            lossless: tag.to_string(),
            sh_dc: tag.to_string(),
            quality: 100,
        }
    }
}

/// How Gaussians are placed on the grid.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridOrder {
    #[default]
    Sorted,
    /// Seeded random placement, for comparison against sorting.
    Shuffled,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CompressOptions {
    pub sort: SortConfig,
    pub quant: QuantSpec,
    pub codecs: CodecChoice,
    pub order: GridOrder,
}

/// Quantizer of one image channel, mapped back to an attribute channel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelEntry {
    pub channel: usize,
    pub min: f64,
    pub max: f64,
    pub levels: u32,
}

impl ChannelEntry {
    fn quantizer(&self) -> Result<Quantizer> {
        Quantizer::new(self.min, self.max, self.levels)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaneEntry {
    pub name: String,
    pub attribute: Attribute,
    pub file: String,
    pub codec: String,
    pub quality: u8,
    pub bit_depth: u8,
    pub channels: Vec<ChannelEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub side: usize,
    pub count: usize,
    pub sh_degree: usize,
    pub sh_rest_dim: usize,
    pub order: GridOrder,
    pub sort: SortConfig,
    pub planes: Vec<PlaneEntry>,
}

/// Summary of a compression run.
#[derive(Clone, Debug)]
pub struct CompressReport {
    pub input_count: usize,
    pub side: usize,
    pub pruned: usize,
    pub bundle_size: usize,
    /// `(file name, encoded bytes)` per plane group.
    pub plane_sizes: Vec<(String, usize)>,
    pub sort: Option<SortReport>,
}

/// SH degree for a given number of rest coefficients (3 per basis function).
pub fn sh_degree(sh_rest_dim: usize) -> Result<usize> {
    (0..=8)
        .find(|d| 3 * ((d + 1) * (d + 1) - 1) == sh_rest_dim)
        .ok_or_else(|| Error::invalid(format!("{sh_rest_dim} SH coefficients do not form a full degree")))
}

/// Image groups for a cloud with `sh_rest_dim` rest coefficients: name, attribute, source channels.
fn plane_groups(sh_rest_dim: usize) -> Vec<(String, Attribute, Vec<usize>)> {
    let mut groups = vec![
        ("position".to_string(), Attribute::Position, vec![0, 1, 2]),
        ("sh_dc".to_string(), Attribute::ShDc, vec![0, 1, 2]),
        ("opacity".to_string(), Attribute::Opacity, vec![0]),
        ("scale".to_string(), Attribute::Scale, vec![0, 1, 2]),
    ];
    for i in 0..4 {
        groups.push((format!("rotation_{i}"), Attribute::Rotation, vec![i]));
    }
    let per_color = sh_rest_dim / 3;
    for i in 0..per_color {
        groups.push((
            format!("sh_rest_{i}"),
            Attribute::ShRest,
            vec![i, per_color + i, 2 * per_color + i],
        ));
    }
    groups
}

fn grid_permutation(cloud: &SplatCloud, layout: GridLayout, options: &CompressOptions) -> Result<(Vec<usize>, Option<SortReport>)> {
    match options.order {
        GridOrder::Sorted => {
            let (features, _) = normalize_for_sorting(cloud, &options.sort.weights)?;
            let report = sort_grid(&features, layout.side, &options.sort)?;
            Ok((report.permutation.clone(), Some(report)))
        }
        GridOrder::Shuffled => {
            let mut p: Vec<usize> = (0..layout.cells()).collect();
            p.shuffle(&mut ChaCha8Rng::seed_from_u64(options.sort.seed));
            Ok((p, None))
        }
    }
}

/// Compresses `cloud` into bundle bytes with sorting enabled.
pub fn compress(cloud: &SplatCloud, sort: &SortConfig, quant: &QuantSpec, codecs: &CodecChoice) -> Result<Vec<u8>> {
    let options = CompressOptions {
        sort: sort.clone(),
        quant: quant.clone(),
        codecs: codecs.clone(),
        order: GridOrder::Sorted,
    };
    Ok(compress_with_report(cloud, &options)?.0)
}

pub fn compress_with_report(cloud: &SplatCloud, options: &CompressOptions) -> Result<(Vec<u8>, CompressReport)> {
    cloud.validate()?;
    options.quant.validate()?;
    options.sort.validate()?;
    if cloud.len() < 4 {
        return Err(Error::invalid(format!("need at least 4 Gaussians, got {}", cloud.len())));
    }
    let sh_degree = sh_degree(cloud.sh_rest_dim())?;
    let groups = plane_groups(cloud.sh_rest_dim());
    let codecs = &options.codecs;

    // Reject unusable codecs before doing any sorting work.
    let layout = build_grid_layout(cloud.len())?;
    for (name, attr, _) in &groups {
        let (tag, _) = group_codec(*attr, codecs);
        let codec = codec_for_tag(tag)?;
        if *attr != Attribute::ShDc && !codec.lossless() {
            return Err(Error::UnsupportedCodec(format!("{name} needs a lossless codec, `{tag}` is lossy")));
        }
        let channels = if name.starts_with("rotation") || *attr == Attribute::Opacity { 1 } else { 3 };
        let depth = bit_depth(options.quant.get(*attr).levels);
        image::check_capabilities(codec, channels, depth, layout.side, layout.side)
            .map_err(|e| Error::UnsupportedCodec(format!("{name}: {e}")))?;
    }

    let pruned = prune_to_grid(cloud, layout)?;
    let (permutation, sort_report) = grid_permutation(&pruned, layout, options)?;
    let stack = GridStack::from_cloud(&pruned, layout, &permutation)?;

    let encoded: Vec<(PlaneEntry, Vec<u8>)> = groups
        .par_iter()
        .map(|(name, attr, source)| encode_group(&stack, name, *attr, source, &options.quant, codecs))
        .collect::<Result<_>>()?;

    let manifest = Manifest {
        format: FORMAT.to_string(),
        side: layout.side,
        count: layout.cells(),
        sh_degree,
        sh_rest_dim: cloud.sh_rest_dim(),
        order: options.order,
        sort: options.sort.clone(),
        planes: encoded.iter().map(|(e, _)| e.clone()).collect(),
    };
    let bytes = write_zip(&manifest, &encoded)?;
    let report = CompressReport {
        input_count: cloud.len(),
        side: layout.side,
        pruned: cloud.len() - layout.cells(),
        bundle_size: bytes.len(),
        plane_sizes: encoded.iter().map(|(e, b)| (e.file.clone(), b.len())).collect(),
        sort: sort_report,
    };
    Ok((bytes, report))
}

fn group_codec(attr: Attribute, codecs: &CodecChoice) -> (&str, u8) {
    if attr == Attribute::ShDc {
        (&codecs.sh_dc, codecs.quality)
    } else {
        (&codecs.lossless, 100)
    }
}

fn bit_depth(levels: u32) -> u8 {
    if levels <= 256 {
        8
    } else {
        16
    }
}

fn encode_group(
    stack: &GridStack,
    name: &str,
    attr: Attribute,
    source: &[usize],
    quant: &QuantSpec,
    codecs: &CodecChoice,
) -> Result<(PlaneEntry, Vec<u8>)> {
    let plane = stack.plane(attr);
    let rule = quant.get(attr);
    let cells = stack.layout.cells();
    let mut entries = Vec::with_capacity(source.len());
    let mut quantizers = Vec::with_capacity(source.len());
    for &ch in source {
        let values = (0..cells).map(|i| to_stored(attr, plane.data[i * plane.channels + ch]));
        let q = match rule.clip {
            ClipRule::Fixed { min, max } => Quantizer::new(min, max, rule.levels)?,
            ClipRule::DataRange => Quantizer::fitted(values, rule.levels)?,
        };
        entries.push(ChannelEntry {
            channel: ch,
            min: q.min,
            max: q.max,
            levels: q.levels,
        });
        quantizers.push(q);
    }
    let mut samples = Vec::with_capacity(cells * source.len());
    for i in 0..cells {
        for (q, &ch) in quantizers.iter().zip(source) {
            samples.push(q.quantize(to_stored(attr, plane.data[i * plane.channels + ch])));
        }
    }
    let depth = bit_depth(rule.levels);
    let side = stack.layout.side;
    let img = PlaneImage::new(side, side, source.len(), depth, samples)?;
    let (tag, quality) = group_codec(attr, codecs);
    let codec = codec_for_tag(tag)?;
    let bytes = encode_plane(&img, tag, quality).map_err(|e| match e {
        Error::Encode { message, .. } => Error::Encode {
            plane: name.to_string(),
            message,
        },
        other => other,
    })?;
    Ok((
        PlaneEntry {
            name: name.to_string(),
            attribute: attr,
            file: format!("{name}.{}", codec.extension()),
            codec: codec.tag().to_string(),
            quality,
            bit_depth: depth,
            channels: entries,
        },
        bytes,
    ))
}

fn zip_error(e: zip::result::ZipError) -> Error {
    Error::decode("bundle", e)
}

fn write_zip(manifest: &Manifest, planes: &[(PlaneEntry, Vec<u8>)]) -> Result<Vec<u8>> {
    use zip::write::SimpleFileOptions;
    let options = SimpleFileOptions::default()
        .compression_method(zip::CompressionMethod::Stored)
        .last_modified_time(zip::DateTime::default())
        .unix_permissions(0o644);
    let mut zip = zip::ZipWriter::new(Cursor::new(Vec::new()));
    let encode_err = |e: zip::result::ZipError| Error::Encode {
        plane: "bundle".into(),
        message: e.to_string(),
    };
    let json = serde_json::to_vec_pretty(manifest).map_err(|e| Error::Encode {
        plane: MANIFEST_NAME.into(),
        message: e.to_string(),
    })?;
    zip.start_file(MANIFEST_NAME, options).map_err(encode_err)?;
    zip.write_all(&json)?;
    for (entry, bytes) in planes {
        zip.start_file(entry.file.as_str(), options).map_err(encode_err)?;
        zip.write_all(bytes)?;
    }
    Ok(zip.finish().map_err(encode_err)?.into_inner())
}

/// Reads and checks the manifest of a bundle without decoding any plane.
pub fn read_manifest(bytes: &[u8]) -> Result<Manifest> {
    let mut archive = zip::ZipArchive::new(Cursor::new(bytes)).map_err(zip_error)?;
    let manifest = manifest_from(&mut archive)?;
    Ok(manifest)
}

fn read_entry(archive: &mut zip::ZipArchive<Cursor<&[u8]>>, name: &str) -> Result<Vec<u8>> {
    let mut file = archive.by_name(name).map_err(|e| Error::decode(name, e))?;
    let mut out = Vec::with_capacity(file.size() as usize);
    file.read_to_end(&mut out).map_err(|e| Error::decode(name, e))?;
    Ok(out)
}

fn manifest_from(archive: &mut zip::ZipArchive<Cursor<&[u8]>>) -> Result<Manifest> {
    let json = read_entry(archive, MANIFEST_NAME)?;
    let manifest: Manifest = serde_json::from_slice(&json).map_err(|e| Error::decode(MANIFEST_NAME, e))?;
    let bad = |msg: String| Error::decode(MANIFEST_NAME, msg);
    if manifest.format != FORMAT {
        return Err(bad(format!("unsupported format `{}`, expected `{FORMAT}`", manifest.format)));
    }
    if manifest.side < 2 || manifest.count != manifest.side * manifest.side {
        return Err(bad(format!("count {} does not fill a grid of side {}", manifest.count, manifest.side)));
    }
    if sh_degree(manifest.sh_rest_dim).ok() != Some(manifest.sh_degree) {
        return Err(bad("SH degree does not match the coefficient count".into()));
    }
    let expected = plane_groups(manifest.sh_rest_dim);
    if manifest.planes.len() != expected.len() {
        return Err(bad(format!("expected {} plane groups, found {}", expected.len(), manifest.planes.len())));
    }
    let mut files = BTreeSet::new();
    for (entry, (name, attr, source)) in manifest.planes.iter().zip(&expected) {
        let channels: Vec<usize> = entry.channels.iter().map(|c| c.channel).collect();
        if &entry.name != name || entry.attribute != *attr || &channels != source {
            return Err(bad(format!("plane group `{}` does not match the layout", entry.name)));
        }
        if !files.insert(entry.file.clone()) || entry.file == MANIFEST_NAME {
            return Err(bad(format!("duplicate file `{}`", entry.file)));
        }
        for c in &entry.channels {
            c.quantizer().map_err(|e| Error::decode(&entry.name, e))?;
            if bit_depth(c.levels) > entry.bit_depth {
                return Err(Error::decode(&entry.name, "level count exceeds the bit depth"));
            }
        }
    }
    Ok(manifest)
}

fn decode_group(entry: &PlaneEntry, bytes: &[u8], side: usize) -> Result<Vec<Vec<f32>>> {
    let name = entry.name.as_str();
    let img = decode_plane(bytes, &entry.codec).map_err(|e| match e {
        Error::Decode { message, .. } => Error::decode(name, message),
        other => Error::decode(name, other),
    })?;
    if img.width != side || img.height != side || img.channels != entry.channels.len() || img.bit_depth != entry.bit_depth {
        return Err(Error::decode(
            name,
            format!(
                "decoded {}x{}x{} {}-bit image, manifest says {side}x{side}x{} {}-bit",
                img.width,
                img.height,
                img.channels,
                img.bit_depth,
                entry.channels.len(),
                entry.bit_depth
            ),
        ));
    }
    let k = entry.channels.len();
    entry
        .channels
        .iter()
        .enumerate()
        .map(|(j, c)| {
            let q = c.quantizer()?;
            (0..side * side)
                .map(|i| {
                    let v = q.dequantize(img.samples[i * k + j]).map_err(|e| Error::decode(name, e))?;
                    from_stored(entry.attribute, v).map_err(|e| Error::decode(name, e))
                })
                .collect()
        })
        .collect()
}

/// Decodes a bundle into a cloud in row-major grid order.
pub fn decompress(bytes: &[u8]) -> Result<SplatCloud> {
    let mut archive = zip::ZipArchive::new(Cursor::new(bytes)).map_err(zip_error)?;
    let manifest = manifest_from(&mut archive)?;
    let side = manifest.side;
    let raw: Vec<Vec<u8>> = manifest
        .planes
        .iter()
        .map(|e| read_entry(&mut archive, &e.file))
        .collect::<Result<_>>()?;
    let decoded: Vec<Vec<Vec<f32>>> = manifest
        .planes
        .par_iter()
        .zip(&raw)
        .map(|(entry, bytes)| decode_group(entry, bytes, side))
        .collect::<Result<_>>()?;

    let cells = manifest.count;
    let mut columns: Vec<Vec<f32>> = Attribute::ALL
        .iter()
        .map(|a| vec![0.0; cells * a.channels(manifest.sh_rest_dim)])
        .collect();
    for (entry, channels) in manifest.planes.iter().zip(decoded) {
        let c = entry.attribute.channels(manifest.sh_rest_dim);
        let col = &mut columns[entry.attribute.index()];
        for (ce, values) in entry.channels.iter().zip(channels) {
            for (i, v) in values.into_iter().enumerate() {
                col[i * c + ce.channel] = v;
            }
        }
    }
    SplatCloud::from_columns(cells, manifest.sh_rest_dim, |a| std::mem::take(&mut columns[a.index()]))
        .map_err(|e| Error::decode("bundle", e))
}
