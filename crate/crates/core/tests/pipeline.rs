use rand::seq::SliceRandom;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sogs::cloud::{build_grid_layout, prune_to_grid, Attribute, FeatureMatrix, SplatCloud};
use sogs::codec::{compress, compress_with_report, decompress, read_manifest, CodecChoice, CompressOptions};
use sogs::error::Error;
use sogs::metrics::vad;
use sogs::plas::{sort_grid, SortConfig};
use sogs::ply::{read_ply, write_ply};
use sogs::quant::{contract, to_stored, QuantSpec, Quantizer};
use sogs::synth::{random_cloud, smooth_cloud};

fn bits(c: &SplatCloud) -> Vec<Vec<u32>> {
    Attribute::ALL
        .iter()
        .map(|&a| c.attribute(a).iter().map(|v| v.to_bits()).collect())
        .collect()
}

fn rows(c: &SplatCloud) -> Vec<Vec<u32>> {
    let mut out: Vec<Vec<u32>> = (0..c.len())
        .map(|i| {
            Attribute::ALL
                .iter()
                .flat_map(|&a| c.get(a, i).iter().map(|v| v.to_bits()))
                .collect()
        })
        .collect();
    out.sort_unstable();
    out
}

#[test]
fn ply_round_trip_thousand_gaussians() {
    for sh in [45, 0] {
        let cloud = random_cloud(1000, sh, 11);
        let bytes = write_ply(&cloud);
        let back = read_ply(&bytes).unwrap();
        assert_eq!(bits(&back), bits(&cloud));
        assert_eq!(back.sh_rest_dim(), sh);
        assert_eq!(write_ply(&back), bytes);
    }
}

#[test]
fn four_gaussians_within_half_step() {
    let cloud = random_cloud(4, 45, 12);
    let codecs = CodecChoice::uniform("png");
    let options = CompressOptions {
        codecs,
        ..CompressOptions::default()
    };
    let (bundle, report) = compress_with_report(&cloud, &options).unwrap();
    let decoded = decompress(&bundle).unwrap();
    let ordered = cloud.select(&report.sort.unwrap().permutation).unwrap();
    let manifest = read_manifest(&bundle).unwrap();
    assert_eq!(manifest.side, 2);
    for entry in &manifest.planes {
        for ce in &entry.channels {
            let q = Quantizer::new(ce.min, ce.max, ce.levels).unwrap();
            for i in 0..4 {
                let s = to_stored(entry.attribute, ordered.get(entry.attribute, i)[ce.channel]);
                let d = to_stored(entry.attribute, decoded.get(entry.attribute, i)[ce.channel]);
                assert_eq!(q.quantize(d), q.quantize(s), "{}", entry.name);
                let slack = 4.0 * f64::from(f32::EPSILON) * s.abs().max(1.0);
                assert!((d - s.clamp(q.min, q.max)).abs() <= q.step() / 2.0 + slack, "{}", entry.name);
            }
        }
    }
}

#[test]
fn world_space_position_error_follows_expansion() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut cloud = random_cloud(1024, 0, 13);
    for v in cloud.attribute_mut(Attribute::Position) {
        *v = rng.random_range(-10.0f32..=10.0);
    }
    let bundle = compress(&cloud, &SortConfig::default(), &QuantSpec::default(), &CodecChoice::default()).unwrap();
    let (_, report) = compress_with_report(&cloud, &CompressOptions::default()).unwrap();
    let ordered = cloud.select(&report.sort.unwrap().permutation).unwrap();
    let decoded = decompress(&bundle).unwrap();
    let manifest = read_manifest(&bundle).unwrap();
    let pos = &manifest.planes[0];
    for ce in &pos.channels {
        let half = (ce.max - ce.min) / f64::from(ce.levels - 1) / 2.0;
        for i in 0..cloud.len() {
            let x = f64::from(ordered.get(Attribute::Position, i)[ce.channel]);
            let y = f64::from(decoded.get(Attribute::Position, i)[ce.channel]);
            // |d expand / dy| = exp(|y|), so a half-step in contracted space moves at most this far
            let bound = half * (contract(x).abs() + half).exp() + f64::from(f32::EPSILON) * x.abs().max(1.0);
            assert!((x - y).abs() <= bound, "{x} -> {y}, bound {bound}");
        }
    }
}

#[test]
fn recompression_is_a_fixed_point() {
    let cloud = smooth_cloud(900, 45, 14);
    let sort = SortConfig::default();
    let first = decompress(&compress(&cloud, &sort, &QuantSpec::default(), &CodecChoice::default()).unwrap()).unwrap();
    let second = decompress(&compress(&first, &sort, &QuantSpec::default(), &CodecChoice::default()).unwrap()).unwrap();
    assert_eq!(rows(&second), rows(&first));
}

#[test]
fn same_seed_gives_identical_bundles() {
    let cloud = random_cloud(500, 45, 15);
    let sort = SortConfig {
        seed: 7,
        ..SortConfig::default()
    };
    let a = compress(&cloud, &sort, &QuantSpec::default(), &CodecChoice::default()).unwrap();
    let b = compress(&cloud, &sort, &QuantSpec::default(), &CodecChoice::default()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn pruning_removes_the_lowest_opacities() {
    let mut cloud = random_cloud(10, 0, 16);
    let opacities = [5.0, -3.0, 0.0, 7.0, -1.0, 2.0, 1.0, 4.0, 3.0, 6.0];
    cloud.attribute_mut(Attribute::Opacity).copy_from_slice(&opacities);
    let layout = build_grid_layout(10).unwrap();
    let kept = prune_to_grid(&cloud, layout).unwrap();
    // side 3 keeps 9 of 10; the -3.0 logit goes
    assert_eq!(
        kept.attribute(Attribute::Opacity),
        &[5.0, 0.0, 7.0, -1.0, 2.0, 1.0, 4.0, 3.0, 6.0]
    );
}

#[test]
fn no_sh_bundle_decodes_without_rest_coefficients() {
    let cloud = random_cloud(64, 45, 17).without_sh_rest();
    let bundle = compress(&cloud, &SortConfig::default(), &QuantSpec::default(), &CodecChoice::default()).unwrap();
    let back = decompress(&bundle).unwrap();
    assert!(!back.has_sh_rest());
    assert_eq!(read_manifest(&bundle).unwrap().planes.len(), 8);
}

#[test]
fn corrupt_bundles_are_rejected() {
    let cloud = random_cloud(64, 0, 18);
    let bundle = compress(&cloud, &SortConfig::default(), &QuantSpec::default(), &CodecChoice::default()).unwrap();
    let mut flipped = bundle.clone();
    let mid = flipped.len() / 2;
    for b in &mut flipped[mid..mid + 16] {
        *b ^= 0xa5;
    }
    assert!(matches!(decompress(&flipped), Err(Error::Decode { .. })));
    assert!(matches!(decompress(b"PK\x03\x04"), Err(Error::Decode { .. })));
}

#[test]
fn shuffled_smooth_image_is_restored() {
    let side = 64;
    let mut pixels: Vec<[f32; 3]> = (0..side * side)
        .map(|i| {
            let (y, x) = ((i / side) as f32, (i % side) as f32);
            [4.0 * x, 4.0 * y, 2.0 * (x + y)]
        })
        .collect();
    pixels.shuffle(&mut ChaCha8Rng::seed_from_u64(19));
    let features = FeatureMatrix::new(side * side, 3, pixels.concat()).unwrap();
    let before = vad(&features.data, side, 3).unwrap();
    let report = sort_grid(&features, side, &SortConfig::default()).unwrap();
    assert!(report.vad_final <= 0.01 * before, "{} -> {}", before, report.vad_final);
}

#[test]
fn constant_grid_is_left_alone() {
    let features = FeatureMatrix::new(256, 3, vec![42.0; 768]).unwrap();
    let report = sort_grid(&features, 16, &SortConfig::default()).unwrap();
    assert_eq!(report.vad_final, 0.0);
    let json = serde_json::to_value(&report).unwrap();
    assert!(json.get("reorders").is_some());
    assert!(json.get("vad_initial").is_some() && json.get("vad_final").is_some());
}
