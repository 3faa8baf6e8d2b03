use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sogs::cloud::{AttributeWeights, FeatureMatrix};
use sogs::codec::image::{ImageCodec, PlaneImage, PngCodec};
use sogs::codec::{compress_with_report, decompress, CodecChoice, CompressOptions};
use sogs::error::Error;
use sogs::metrics::{bench_csv, bench_sort};
use sogs::plas::{gather, sort_grid, SortConfig};
use sogs::ply::{read_ply, write_ply};

const EXIT_USAGE: u8 = 2;
const EXIT_CORRUPT: u8 = 3;

#[derive(Parser)]
#[command(name = "sogs", version, about = "Sort Gaussian splat attributes into 2D grids and store them as images")]
struct Cli {
    /// Worker threads (falls back to SOGS_THREADS, then to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compress a 3DGS PLY file into a bundle.
    Compress {
        input: PathBuf,
        output: PathBuf,
        #[command(flatten)]
        sort: SortArgs,
        /// Codec for every plane group (png, jxl).
        #[arg(long)]
        codec: Option<String>,
        /// Codec for the sh_dc plane group; may be lossy (e.g. jpeg).
        #[arg(long)]
        sh_dc_codec: Option<String>,
        /// Quality for a lossy sh_dc codec.
        #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u8).range(1..=100))]
        quality: u8,
        /// Drop the higher-order SH coefficients.
        #[arg(long)]
        no_sh: bool,
    },
    /// Decompress a bundle back into a PLY file.
    Decompress { input: PathBuf, output: PathBuf },
    /// Sort the pixels of a square PNG or .npy image.
    Sort {
        input: PathBuf,
        output: PathBuf,
        /// Where to write the sort report (default: OUTPUT.json).
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        sort: SortArgs,
    },
    /// Sort random grids and print timing and VAD as CSV.
    Bench {
        #[arg(long, value_delimiter = ',', default_values_t = [64usize, 128, 256])]
        sides: Vec<usize>,
        #[arg(long, default_value_t = 3)]
        channels: usize,
        #[arg(long, value_delimiter = ',', default_values_t = [1u64])]
        seeds: Vec<u64>,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        decay: Option<f64>,
    },
}

#[derive(Args)]
struct SortArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sorting weight overrides, e.g. `position=1,sh_dc=0.5`.
    #[arg(long)]
    weights: Option<String>,
    /// Relative improvement below which a pass counts as stalled.
    #[arg(long)]
    threshold: Option<f64>,
    /// Radius decay per level.
    #[arg(long)]
    decay: Option<f64>,
}

impl SortArgs {
    fn config(&self) -> Result<SortConfig, Failure> {
        let mut c = SortConfig {
            seed: self.seed,
            ..SortConfig::default()
        };
        if let Some(w) = &self.weights {
            c.weights = AttributeWeights::SORTING.with_overrides(w).map_err(Failure::from)?;
        }
        apply_schedule(&mut c, self.threshold, self.decay);
        c.validate()?;
        Ok(c)
    }
}

fn apply_schedule(c: &mut SortConfig, threshold: Option<f64>, decay: Option<f64>) {
    if let Some(t) = threshold {
        c.improvement_threshold = t;
    }
    if let Some(d) = decay {
        c.radius_decay = d;
    }
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Decode { .. } => EXIT_CORRUPT,
            Error::Encode { .. } => 1,
            _ => EXIT_USAGE,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn read_input(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| Failure::usage(format!("cannot read {}: {e}", path.display())))
}

/// Writes through a temporary file in the target directory so a failed run leaves nothing behind.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    let fail = |e: std::io::Error| Failure {
        code: 1,
        message: format!("cannot write {}: {e}", path.display()),
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(fail)?;
    tmp.write_all(bytes).map_err(fail)?;
    tmp.persist(path).map_err(|e| fail(e.error))?;
    Ok(())
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>, Failure> {
    if let Some(n) = flag {
        return Ok(Some(n));
    }
    match std::env::var("SOGS_THREADS") {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Failure::usage(format!("SOGS_THREADS must be a thread count, got `{v}`"))),
        _ => Ok(None),
    }
}

fn cmd_compress(
    input: &Path,
    output: &Path,
    sort: &SortArgs,
    codec: Option<String>,
    sh_dc_codec: Option<String>,
    quality: u8,
    no_sh: bool,
) -> Result<(), Failure> {
    let bytes = read_input(input)?;
    let mut cloud = read_ply(&bytes)?;
    if no_sh {
        cloud = cloud.without_sh_rest();
    }
    let mut codecs = match codec {
        Some(tag) => CodecChoice::uniform(&tag),
        None => CodecChoice::default(),
    };
    if let Some(tag) = sh_dc_codec {
        codecs.sh_dc = tag;
    }
    codecs.quality = quality;
    let options = CompressOptions {
        sort: sort.config()?,
        codecs,
        ..CompressOptions::default()
    };
    let (bundle, report) = compress_with_report(&cloud, &options)?;
    write_atomic(output, &bundle)?;
    println!(
        "gaussians={} side={} pruned={} original_bytes={} bundle_bytes={} ratio={:.3}",
        report.input_count,
        report.side,
        report.pruned,
        bytes.len(),
        bundle.len(),
        bytes.len() as f64 / bundle.len() as f64
    );
    for (file, size) in &report.plane_sizes {
        println!("plane={file} bytes={size}");
    }
    if let Some(s) = &report.sort {
        eprintln!(
            "sorted {}x{} grid in {:.2} s, VAD {:.3} -> {:.3}",
            s.side, s.side, s.time_s, s.vad_initial, s.vad_final
        );
    }
    Ok(())
}

fn cmd_decompress(input: &Path, output: &Path) -> Result<(), Failure> {
    let bytes = read_input(input)?;
    let cloud = decompress(&bytes)?;
    let ply = write_ply(&cloud);
    write_atomic(output, &ply)?;
    println!(
        "gaussians={} sh_rest={} bundle_bytes={} ply_bytes={}",
        cloud.len(),
        cloud.sh_rest_dim(),
        bytes.len(),
        ply.len()
    );
    Ok(())
}

enum GridFile {
    Png { bit_depth: u8 },
    Npy { shape: Vec<u64> },
}

fn is_npy(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("npy"))
}

fn read_npy(bytes: &[u8]) -> Result<(Vec<f32>, Vec<u64>), Failure> {
    let bad = |m: String| Failure::usage(format!("unsupported .npy input: {m}"));
    let npy = npyz::NpyFile::new(bytes).map_err(|e| bad(e.to_string()))?;
    if npy.order() != npyz::Order::C {
        return Err(bad("Fortran order".into()));
    }
    let shape = npy.shape().to_vec();
    fn load<T: npyz::Deserialize>(bytes: &[u8], f: impl Fn(T) -> f32) -> Option<Vec<f32>> {
        let npy = npyz::NpyFile::new(bytes).ok()?;
        Some(npy.into_vec::<T>().ok()?.into_iter().map(f).collect())
    }
    let data = load::<f32>(bytes, |v| v)
        .or_else(|| load::<f64>(bytes, |v| v as f32))
        .or_else(|| load::<u8>(bytes, f32::from))
        .or_else(|| load::<u16>(bytes, f32::from))
        .or_else(|| load::<i32>(bytes, |v| v as f32))
        .or_else(|| load::<i64>(bytes, |v| v as f32))
        .ok_or_else(|| bad(format!("dtype {}", npy.dtype().descr())))?;
    Ok((data, shape))
}

fn cmd_sort(input: &Path, output: &Path, report_path: Option<PathBuf>, sort: &SortArgs) -> Result<(), Failure> {
    let config = sort.config()?;
    let bytes = read_input(input)?;
    let (data, height, width, channels, kind) = if is_npy(input) {
        let (data, shape) = read_npy(&bytes)?;
        let (h, w, c) = match shape[..] {
            [h, w] => (h, w, 1),
            [h, w, c] => (h, w, c),
            _ => return Err(Failure::usage(format!("expected a 2D or 3D array, got shape {shape:?}"))),
        };
        (data, h as usize, w as usize, c as usize, GridFile::Npy { shape })
    } else {
        let img = PngCodec.decode(&bytes).map_err(|e| Failure::usage(e.to_string()))?;
        let data = img.samples.iter().map(|&s| f32::from(s)).collect();
        (data, img.height, img.width, img.channels, GridFile::Png { bit_depth: img.bit_depth })
    };
    if height != width {
        return Err(Failure::usage(format!("input must be square, got {height}x{width}")));
    }
    if channels == 0 {
        return Err(Failure::usage("input has no channels"));
    }
    let features = FeatureMatrix::new(height * width, channels, data)?;
    let report = sort_grid(&features, height, &config)?;
    let sorted = gather(&features.data, channels, &report.permutation);

    let out_bytes = match kind {
        GridFile::Png { bit_depth } => {
            let img = PlaneImage::new(width, height, channels, bit_depth, sorted.iter().map(|&v| v as u16).collect())?;
            PngCodec.encode(&img, 100)?
        }
        GridFile::Npy { shape } => {
            let mut buf = Vec::new();
            {
                use npyz::WriterBuilder;
                let mut w = npyz::WriteOptions::new()
                    .default_dtype()
                    .shape(&shape)
                    .writer(&mut buf)
                    .begin_nd()
                    .map_err(Error::from)?;
                w.extend(sorted.iter().copied()).map_err(Error::from)?;
                w.finish().map_err(Error::from)?;
            }
            buf
        }
    };
    let report_path = report_path.unwrap_or_else(|| {
        let mut p = output.as_os_str().to_owned();
        p.push(".json");
        PathBuf::from(p)
    });
    let mut json = serde_json::to_value(&report).map_err(|e| Failure::usage(e.to_string()))?;
    json["permutation"] = serde_json::to_value(&report.permutation).map_err(|e| Failure::usage(e.to_string()))?;
    let json = serde_json::to_vec_pretty(&json).map_err(|e| Failure::usage(e.to_string()))?;
    write_atomic(output, &out_bytes)?;
    write_atomic(&report_path, &json)?;
    println!(
        "side={} channels={} vad_initial={:.6} vad_final={:.6} reorders={} time_s={:.3}",
        report.side, report.channels, report.vad_initial, report.vad_final, report.reorders, report.time_s
    );
    Ok(())
}

fn cmd_bench(sides: &[usize], channels: usize, seeds: &[u64], threshold: Option<f64>, decay: Option<f64>) -> Result<(), Failure> {
    let mut config = SortConfig::default();
    apply_schedule(&mut config, threshold, decay);
    let rows = bench_sort(sides, channels, seeds, &config)?;
    print!("{}", bench_csv(&rows));
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = thread_count(cli.threads)? {
        if n == 0 {
            return Err(Failure::usage("thread count must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::usage(e.to_string()))?;
    }
    match cli.command {
        Command::Compress {
            input,
            output,
            sort,
            codec,
            sh_dc_codec,
            quality,
            no_sh,
        } => cmd_compress(&input, &output, &sort, codec, sh_dc_codec, quality, no_sh),
        Command::Decompress { input, output } => cmd_decompress(&input, &output),
        Command::Sort {
            input,
            output,
            report,
            sort,
        } => cmd_sort(&input, &output, report, &sort),
        Command::Bench {
            sides,
            channels,
            seeds,
            threshold,
            decay,
        } => cmd_bench(&sides, channels, &seeds, threshold, decay),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
