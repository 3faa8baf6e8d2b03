//! Image codecs used to store quantized attribute planes.

use std::io::Cursor;

use crate::error::{Error, Result};

/// Integer image of quantization indices, samples interleaved per pixel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlaneImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// 8 or 16.
    pub bit_depth: u8,
    pub samples: Vec<u16>,
}

impl PlaneImage {
    pub fn new(width: usize, height: usize, channels: usize, bit_depth: u8, samples: Vec<u16>) -> Result<Self> {
        if samples.len() != width * height * channels {
            return Err(Error::invalid(format!(
                "{} samples do not fill a {width}x{height}x{channels} image",
                samples.len()
            )));
        }
        if bit_depth != 8 && bit_depth != 16 {
            return Err(Error::invalid(format!("unsupported bit depth {bit_depth}")));
        }
        if bit_depth == 8 && samples.iter().any(|&s| s > 255) {
            return Err(Error::invalid("sample does not fit in 8 bits"));
        }
        Ok(PlaneImage {
            width,
            height,
            channels,
            bit_depth,
            samples,
        })
    }

    fn bytes_8(&self) -> Vec<u8> {
        self.samples.iter().map(|&s| s as u8).collect()
    }
}

/// A 2D image codec.
pub trait ImageCodec: Sync {
    fn tag(&self) -> &'static str;
    fn extension(&self) -> &'static str;
    fn lossless(&self) -> bool;
    fn supports(&self, channels: usize, bit_depth: u8) -> bool;
    /// Smallest width/height the codec can store.
    fn min_dimension(&self) -> usize {
        1
    }
    fn encode(&self, image: &PlaneImage, quality: u8) -> Result<Vec<u8>>;
    fn decode(&self, bytes: &[u8]) -> Result<PlaneImage>;
}

pub struct PngCodec;

impl ImageCodec for PngCodec {
    fn tag(&self) -> &'static str {
        "png"
    }

    fn extension(&self) -> &'static str {
        "png"
    }

    fn lossless(&self) -> bool {
        true
    }

    fn supports(&self, channels: usize, bit_depth: u8) -> bool {
        matches!(channels, 1 | 3) && matches!(bit_depth, 8 | 16)
    }

    fn encode(&self, image: &PlaneImage, _quality: u8) -> Result<Vec<u8>> {
        let fail = |e: png::EncodingError| Error::Encode {
            plane: "png".into(),
            message: e.to_string(),
        };
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, image.width as u32, image.height as u32);
            enc.set_color(if image.channels == 1 {
                png::ColorType::Grayscale
            } else {
                png::ColorType::Rgb
            });
            let data = if image.bit_depth == 16 {
                enc.set_depth(png::BitDepth::Sixteen);
                image.samples.iter().flat_map(|s| s.to_be_bytes()).collect()
            } else {
                enc.set_depth(png::BitDepth::Eight);
                image.bytes_8()
            };
            enc.set_compression(png::Compression::High);
            let mut writer = enc.write_header().map_err(fail)?;
            writer.write_image_data(&data).map_err(fail)?;
            writer.finish().map_err(fail)?;
        }
        Ok(out)
    }

    fn decode(&self, bytes: &[u8]) -> Result<PlaneImage> {
        let fail = |e: png::DecodingError| Error::decode("png", e);
        let mut dec = png::Decoder::new(Cursor::new(bytes));
        dec.set_transformations(png::Transformations::IDENTITY);
        let mut reader = dec.read_info().map_err(fail)?;
        let size = reader
            .output_buffer_size()
            .ok_or_else(|| Error::decode("png", "image too large"))?;
        let mut buf = vec![0; size];
        let info = reader.next_frame(&mut buf).map_err(fail)?;
        let channels = match info.color_type {
            png::ColorType::Grayscale => 1,
            png::ColorType::Rgb => 3,
            other => return Err(Error::decode("png", format!("unexpected color type {other:?}"))),
        };
        let (bit_depth, samples) = match info.bit_depth {
            png::BitDepth::Eight => (8, buf[..info.buffer_size()].iter().map(|&b| u16::from(b)).collect()),
            png::BitDepth::Sixteen => (
                16,
                buf[..info.buffer_size()]
                    .chunks_exact(2)
                    .map(|b| u16::from_be_bytes([b[0], b[1]]))
                    .collect(),
            ),
            other => return Err(Error::decode("png", format!("unexpected bit depth {other:?}"))),
        };
        PlaneImage::new(info.width as usize, info.height as usize, channels, bit_depth, samples)
    }
}

/// Baseline JPEG: lossy, 8-bit only. Meant for the color plane.
pub struct JpegCodec;

impl ImageCodec for JpegCodec {
    fn tag(&self) -> &'static str {
        "jpeg"
    }

    fn extension(&self) -> &'static str {
        "jpg"
    }

    fn lossless(&self) -> bool {
        false
    }

    fn supports(&self, channels: usize, bit_depth: u8) -> bool {
        matches!(channels, 1 | 3) && bit_depth == 8
    }

    fn encode(&self, image: &PlaneImage, quality: u8) -> Result<Vec<u8>> {
        let (w, h) = (
            u16::try_from(image.width).map_err(|_| Error::invalid("image too wide for JPEG"))?,
            u16::try_from(image.height).map_err(|_| Error::invalid("image too tall for JPEG"))?,
        );
        let mut out = Vec::new();
        let mut enc = jpeg_encoder::Encoder::new(&mut out, quality.clamp(1, 100));
        enc.set_sampling_factor(jpeg_encoder::SamplingFactor::F_1_1);
        let color = if image.channels == 1 {
            jpeg_encoder::ColorType::Luma
        } else {
            jpeg_encoder::ColorType::Rgb
        };
        enc.encode(&image.bytes_8(), w, h, color).map_err(|e| Error::Encode {
            plane: "jpeg".into(),
            message: e.to_string(),
        })?;
        Ok(out)
    }

    fn decode(&self, bytes: &[u8]) -> Result<PlaneImage> {
        use zune_core::bytestream::ZCursor;
        use zune_core::colorspace::ColorSpace;
        use zune_core::options::DecoderOptions;

        let mut probe = zune_jpeg::JpegDecoder::new(ZCursor::new(bytes));
        probe.decode_headers().map_err(|e| Error::decode("jpeg", format!("{e:?}")))?;
        let info = probe.info().ok_or_else(|| Error::decode("jpeg", "missing header"))?;
        let (channels, space) = if info.components == 1 {
            (1, ColorSpace::Luma)
        } else {
            (3, ColorSpace::RGB)
        };
        let options = DecoderOptions::default().jpeg_set_out_colorspace(space);
        let mut dec = zune_jpeg::JpegDecoder::new_with_options(ZCursor::new(bytes), options);
        let pixels = dec.decode().map_err(|e| Error::decode("jpeg", format!("{e:?}")))?;
        PlaneImage::new(
            usize::from(info.width),
            usize::from(info.height),
            channels,
            8,
            pixels.into_iter().map(u16::from).collect(),
        )
    }
}

/// Lossless JPEG XL through a pure-Rust encoder/decoder pair.
#[cfg(feature = "jxl")]
pub struct JxlCodec;

#[cfg(feature = "jxl")]
impl ImageCodec for JxlCodec {
    fn tag(&self) -> &'static str {
        "jxl"
    }

    fn extension(&self) -> &'static str {
        "jxl"
    }

    fn lossless(&self) -> bool {
        true
    }

    fn supports(&self, channels: usize, bit_depth: u8) -> bool {
        matches!(channels, 1 | 3) && matches!(bit_depth, 8 | 16)
    }

    fn min_dimension(&self) -> usize {
        2
    }

    fn encode(&self, image: &PlaneImage, _quality: u8) -> Result<Vec<u8>> {
        use zune_core::bit_depth::BitDepth;
        use zune_core::colorspace::ColorSpace;
        use zune_core::options::EncoderOptions;

        let space = if image.channels == 1 {
            ColorSpace::Luma
        } else {
            ColorSpace::RGB
        };
        let (depth, data) = if image.bit_depth == 16 {
            (
                BitDepth::Sixteen,
                image.samples.iter().flat_map(|s| s.to_ne_bytes()).collect(),
            )
        } else {
            (BitDepth::Eight, image.bytes_8())
        };
        let options = EncoderOptions::new(image.width, image.height, space, depth);
        let mut out = Vec::new();
        zune_jpegxl::JxlSimpleEncoder::new(&data, options)
            .encode(&mut out)
            .map_err(|e| Error::Encode {
                plane: "jxl".into(),
                message: format!("{e:?}"),
            })?;
        Ok(out)
    }

    fn decode(&self, bytes: &[u8]) -> Result<PlaneImage> {
        use jxl_oxide::image::BitDepth;
        use jxl_oxide::JxlImage;

        let image = JxlImage::builder()
            .read(Cursor::new(bytes))
            .map_err(|e| Error::decode("jxl", e))?;
        let bit_depth = match image.image_header().metadata.bit_depth {
            BitDepth::IntegerSample { bits_per_sample: 8 } => 8,
            BitDepth::IntegerSample { bits_per_sample: 16 } => 16,
            other => return Err(Error::decode("jxl", format!("unexpected sample format {other:?}"))),
        };
        let (width, height) = (image.width() as usize, image.height() as usize);
        let render = image.render_frame(0).map_err(|e| Error::decode("jxl", e))?;
        let mut stream = render.stream();
        let channels = stream.channels() as usize;
        let n = width * height * channels;
        let samples = if bit_depth == 16 {
            let mut buf = vec![0u16; n];
            stream.write_to_buffer(&mut buf);
            buf
        } else {
            let mut buf = vec![0u8; n];
            stream.write_to_buffer(&mut buf);
            buf.into_iter().map(u16::from).collect()
        };
        PlaneImage::new(width, height, channels, bit_depth, samples)
    }
}

/// Codec registered under `tag`.
pub fn codec_for_tag(tag: &str) -> Result<&'static dyn ImageCodec> {
    match tag {
        "png" => Ok(&PngCodec),
        "jpeg" | "jpg" => Ok(&JpegCodec),
        #[cfg(feature = "jxl")]
        "jxl" => Ok(&JxlCodec),
        _ => Err(Error::UnsupportedCodec(format!("unknown codec `{tag}`"))),
    }
}

/// Lossless codec used when none is requested.
pub fn default_lossless_tag() -> &'static str {
    if cfg!(feature = "jxl") {
        "jxl"
    } else {
        "png"
    }
}

/// Tags of all codecs compiled in.
pub fn available_tags() -> Vec<&'static str> {
    let mut tags = vec!["png", "jpeg"];
    if cfg!(feature = "jxl") {
        tags.push("jxl");
    }
    tags
}

/// Encodes `image` with the codec named `tag`, checking its capabilities first.
pub fn encode_plane(image: &PlaneImage, tag: &str, quality: u8) -> Result<Vec<u8>> {
    let codec = codec_for_tag(tag)?;
    check_capabilities(codec, image.channels, image.bit_depth, image.width, image.height)?;
    codec.encode(image, quality)
}

pub fn decode_plane(bytes: &[u8], tag: &str) -> Result<PlaneImage> {
    codec_for_tag(tag)?.decode(bytes)
}

pub fn check_capabilities(
    codec: &dyn ImageCodec,
    channels: usize,
    bit_depth: u8,
    width: usize,
    height: usize,
) -> Result<()> {
    if !codec.supports(channels, bit_depth) {
        return Err(Error::UnsupportedCodec(format!(
            "{} cannot store {channels}-channel {bit_depth}-bit images",
            codec.tag()
        )));
    }
    if width.min(height) < codec.min_dimension() {
        return Err(Error::UnsupportedCodec(format!(
            "{} needs images of at least {m}x{m}",
            codec.tag(),
            m = codec.min_dimension()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lossless_tags() -> Vec<&'static str> {
        available_tags()
            .into_iter()
            .filter(|t| codec_for_tag(t).unwrap().lossless())
            .collect()
    }

    #[test]
    fn all_zero_plane_round_trips() {
        for tag in available_tags() {
            let img = PlaneImage::new(16, 16, 1, 8, vec![0; 256]).unwrap();
            let back = decode_plane(&encode_plane(&img, tag, 100).unwrap(), tag).unwrap();
            assert_eq!(back, img, "{tag}");
        }
    }

    #[test]
    fn sixteen_bit_needs_capable_codec() {
        let img = PlaneImage::new(4, 4, 3, 16, vec![16383; 48]).unwrap();
        assert!(matches!(encode_plane(&img, "jpeg", 100), Err(Error::UnsupportedCodec(_))));
        for tag in lossless_tags() {
            let back = decode_plane(&encode_plane(&img, tag, 100).unwrap(), tag).unwrap();
            assert_eq!(back, img);
        }
    }

    #[test]
    fn unknown_tag() {
        assert!(matches!(codec_for_tag("bmp"), Err(Error::UnsupportedCodec(_))));
    }

    #[test]
    fn garbage_fails_to_decode() {
        for tag in available_tags() {
            assert!(decode_plane(b"not an image", tag).is_err());
        }
    }

    #[test]
    fn jpeg_at_full_quality_is_close() {
        let samples: Vec<u16> = (0..32 * 32 * 3).map(|i| ((i / 3) % 32 * 4) as u16).collect();
        let img = PlaneImage::new(32, 32, 3, 8, samples).unwrap();
        let back = decode_plane(&encode_plane(&img, "jpeg", 100).unwrap(), "jpeg").unwrap();
        assert_eq!((back.width, back.height, back.channels), (32, 32, 3));
        let max_err = img
            .samples
            .iter()
            .zip(&back.samples)
            .map(|(a, b)| (i32::from(*a) - i32::from(*b)).abs())
            .max()
            .unwrap();
        assert!(max_err <= 8, "{max_err}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn lossless_round_trip(
            w in 2usize..24,
            h in 2usize..24,
            three in any::<bool>(),
            wide in any::<bool>(),
            seed in any::<u64>(),
        ) {
            let channels = if three { 3 } else { 1 };
            let (depth, mask) = if wide { (16u8, 0x3fffu64) } else { (8u8, 0x3fu64) };
            let mut s = seed;
            let samples = (0..w * h * channels)
                .map(|_| {
                    s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    ((s >> 33) & mask) as u16
                })
                .collect();
            let img = PlaneImage::new(w, h, channels, depth, samples).unwrap();
            for tag in lossless_tags() {
                let back = decode_plane(&encode_plane(&img, tag, 100).unwrap(), tag).unwrap();
                prop_assert_eq!(&back, &img);
            }
        }
    }
}
