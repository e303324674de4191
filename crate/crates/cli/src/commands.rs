use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyprec_core::codec::{deserialize, serialize, unpack_codes};
use anyprec_core::kernel::{gemm, gemv};
use anyprec_core::quant::{build_any_precision, extend_any_precision, BuildReport};
use anyprec_core::{GemvConfig, Layout, Matrix, PackedLayer, SensitivityMap};
use anyprec_lab::{run_lab, LabConfig};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::error::{CliError, Result};
use crate::footprint::{footprint, ArchSpec};
use crate::io::{read_bytes, read_matrix, write_bytes};

#[derive(Debug, Parser)]
#[command(name = "anyprec", version, about = "Any-precision weight quantization tools")]
pub struct Cli {
    /// Seed for bench activations (default 0) and the lab benchmark
    /// (overrides the config's seed).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Quantize a weight matrix into an .apq file.
    Quantize(QuantizeArgs),
    /// Add higher bit-widths to an existing .apq file.
    Upscale(UpscaleArgs),
    /// Check an .apq file's integrity and invariants.
    Verify(VerifyArgs),
    /// Compare storage of one any-precision model against separate models.
    Footprint(FootprintArgs),
    /// Time GEMV at several bit-widths and report bytes read.
    Bench(BenchArgs),
    /// Run the uniform-quantization upscaling experiments.
    Lab(LabArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LayoutArg {
    Linear,
    Permuted,
}

impl From<LayoutArg> for Layout {
    fn from(l: LayoutArg) -> Self {
        match l {
            LayoutArg::Linear => Layout::Linear,
            LayoutArg::Permuted => Layout::Permuted,
        }
    }
}

#[derive(Debug, Args)]
pub struct QuantizeArgs {
    /// Weights: raw f32 with a .json shape sidecar, or .npy.
    #[arg(long)]
    pub weights: PathBuf,
    /// Per-weight sensitivities in the same format; uniform if omitted.
    #[arg(long)]
    pub sensitivity: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub nmin: u8,
    #[arg(long, default_value_t = 8)]
    pub nmax: u8,
    #[arg(long, value_enum, default_value_t = LayoutArg::Permuted)]
    pub layout: LayoutArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct UpscaleArgs {
    /// Existing .apq file.
    #[arg(long)]
    pub input: PathBuf,
    /// The weights the file was quantized from.
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub sensitivity: Option<PathBuf>,
    /// New maximum bit-width.
    #[arg(long)]
    pub nmax: u8,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    pub file: PathBuf,
}

#[derive(Debug, Args)]
pub struct FootprintArgs {
    /// Architecture description (JSON).
    #[arg(long)]
    pub arch: PathBuf,
    /// Bit-widths served, e.g. 3,4,6.
    #[arg(long, value_delimiter = ',', required = true)]
    pub bits: Vec<u8>,
    /// Count FP16 parameters once per separate model instead of once overall.
    #[arg(long)]
    pub passthrough_per_model: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    pub file: PathBuf,
    /// Bit-widths to run (default: all the file supports).
    #[arg(long, value_delimiter = ',')]
    pub bits: Vec<u8>,
    #[arg(long, default_value_t = 10)]
    pub repeats: usize,
    /// Activation rows per call; above 16 the dense path is used.
    #[arg(long, default_value_t = 1)]
    pub batch: usize,
    /// CSV destination (stdout if omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LabArgs {
    /// Experiment configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Directory for the CSV outputs.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Quantize(a) => quantize(a, out),
        Command::Upscale(a) => upscale(a, out),
        Command::Verify(a) => verify(a, out),
        Command::Footprint(a) => run_footprint(a, out),
        Command::Bench(a) => bench(a, cli.seed.unwrap_or(0), out),
        Command::Lab(a) => lab(a, cli.seed, out),
    }
}

fn emit(out: &mut dyn Write, text: std::fmt::Arguments) -> Result<()> {
    out.write_fmt(text).map_err(|e| CliError::io("<stdout>", e))
}

fn load_sensitivity(path: Option<&Path>, w: &Matrix) -> Result<SensitivityMap> {
    match path {
        Some(p) => {
            let s = read_matrix(p)?;
            if s.shape() != w.shape() {
                return Err(CliError::Validation(format!(
                    "sensitivity {:?} does not match weights {:?}",
                    s.shape(),
                    w.shape()
                )));
            }
            Ok(SensitivityMap::new(s)?)
        }
        None => {
            eprintln!("warning: no sensitivity file given; using uniform sensitivity");
            Ok(SensitivityMap::uniform(w.rows(), w.cols()))
        }
    }
}

fn print_sse(report: &BuildReport, n_max: u8, out: &mut dyn Write) -> Result<()> {
    emit(out, format_args!("bits,weighted_sse\n"))?;
    for k in report.n_min..=n_max {
        emit(out, format_args!("{k},{}\n", report.total_sse(k)))?;
    }
    if !report.fallback_channels.is_empty() {
        eprintln!(
            "warning: {} channel(s) had zero sensitivity and used uniform weights",
            report.fallback_channels.len()
        );
    }
    Ok(())
}

pub fn quantize(a: &QuantizeArgs, out: &mut dyn Write) -> Result<()> {
    let w = read_matrix(&a.weights)?;
    let s = load_sensitivity(a.sensitivity.as_deref(), &w)?;
    let (layer, report) = build_any_precision(&w, &s, a.nmin, a.nmax)?;
    let packed = PackedLayer::from_layer(&layer, a.layout.into())?;
    write_bytes(&a.out, &serialize(&packed)?)?;
    print_sse(&report, a.nmax, out)
}

pub fn upscale(a: &UpscaleArgs, out: &mut dyn Write) -> Result<()> {
    let packed = deserialize(&read_bytes(&a.input)?)?;
    let w = read_matrix(&a.weights)?;
    let s = load_sensitivity(a.sensitivity.as_deref(), &w)?;
    let (layer, report) = extend_any_precision(&packed.to_layer()?, &w, &s, a.nmax)?;
    let up = PackedLayer::from_layer(&layer, packed.planes().layout())?;
    write_bytes(&a.out, &serialize(&up)?)?;
    print_sse(&report, a.nmax, out)
}

/// Outcome of every check [`verify_bytes`] runs; `None` means passed.
#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<(&'static str, Option<String>)>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|(_, e)| e.is_none())
    }
}

pub fn verify_bytes(bytes: &[u8]) -> VerifyReport {
    let packed = match deserialize(bytes) {
        Ok(p) => p,
        Err(e) => {
            return VerifyReport {
                checks: vec![("format+crc", Some(e.to_string()))],
            }
        }
    };
    VerifyReport {
        checks: vec![
            ("format+crc", None),
            ("prefix", check_prefix(&packed).err()),
            ("tables_sorted", check_sorted(&packed).err()),
            ("nesting", check_nesting(&packed).err()),
            ("plane_isolation", check_isolation(&packed).err()),
        ],
    }
}

fn check_prefix(p: &PackedLayer) -> std::result::Result<(), String> {
    let full = unpack_codes(p.planes(), p.n_max()).map_err(|e| e.to_string())?;
    for k in p.n_min()..p.n_max() {
        let codes = unpack_codes(p.planes(), k).map_err(|e| e.to_string())?;
        if codes != full.shifted(p.n_max() - k) {
            return Err(format!("{k}-bit codes are not the top bits of the parent codes"));
        }
    }
    Ok(())
}

fn check_sorted(p: &PackedLayer) -> std::result::Result<(), String> {
    match p.tables().iter().find(|t| !t.rows_sorted()) {
        Some(t) => Err(format!("{}-bit table has an unsorted row", t.bit_width())),
        None => Ok(()),
    }
}

/// Each `k`-bit centroid lies between the two `k+1`-bit centroids it splits into.
fn check_nesting(p: &PackedLayer) -> std::result::Result<(), String> {
    for pair in p.tables().windows(2) {
        let (lo, hi) = (&pair[0], &pair[1]);
        for r in 0..p.rows() {
            let (a, b) = (lo.row(r), hi.row(r));
            for (i, &c) in a.iter().enumerate() {
                let (l, h) = (b[2 * i], b[2 * i + 1]);
                if !(l <= c && c <= h) {
                    return Err(format!(
                        "row {r}: {}-bit centroid {i} ({c}) outside its children [{l}, {h}]",
                        lo.bit_width()
                    ));
                }
            }
        }
    }
    Ok(())
}

/// Re-runs a GEMV at each width below the maximum with the unused planes
/// scrambled and requires identical output.
fn check_isolation(p: &PackedLayer) -> std::result::Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let x: Vec<f32> = (0..p.cols()).map(|_| rng.random_range(-1.0..1.0)).collect();
    for k in p.n_min()..p.n_max() {
        let cfg = GemvConfig::new(k);
        let (before, _) = gemv(p, &x, &cfg).map_err(|e| e.to_string())?;
        let mut scrambled = p.clone();
        for plane in k as usize..p.n_max() as usize {
            scrambled.planes_mut().plane_mut(plane).iter_mut().for_each(|b| *b = !*b ^ rng.random::<u8>());
        }
        let (after, _) = gemv(&scrambled, &x, &cfg).map_err(|e| e.to_string())?;
        if before.iter().zip(&after).any(|(a, b)| a.to_bits() != b.to_bits()) {
            return Err(format!("{k}-bit output depends on planes past {k}"));
        }
    }
    Ok(())
}

pub fn verify(a: &VerifyArgs, out: &mut dyn Write) -> Result<()> {
    let report = verify_bytes(&read_bytes(&a.file)?);
    for (name, err) in &report.checks {
        match err {
            None => emit(out, format_args!("{name}: ok\n"))?,
            Some(e) => emit(out, format_args!("{name}: FAIL ({e})\n"))?,
        }
    }
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::Validation(format!("{} failed verification", a.file.display())))
    }
}

pub fn run_footprint(a: &FootprintArgs, out: &mut dyn Write) -> Result<()> {
    let text = std::fs::read_to_string(&a.arch).map_err(|e| CliError::io(&a.arch, e))?;
    let f = footprint(&ArchSpec::from_json(&text)?, &a.bits, a.passthrough_per_model)?;
    let set: Vec<String> = f.bits.iter().map(u8::to_string).collect();
    emit(out, format_args!("bits: {{{}}}\n", set.join(",")))?;
    emit(
        out,
        format_args!("any_precision_bytes: {} ({:.2} GB)\n", f.any_precision_bytes, f.any_precision_bytes as f64 / 1e9),
    )?;
    emit(
        out,
        format_args!("separate_bytes: {} ({:.2} GB)\n", f.separate_bytes, f.separate_bytes as f64 / 1e9),
    )?;
    emit(out, format_args!("ratio: {:.2}\n", f.ratio()))
}

/// One bench CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub k: u8,
    pub repeats: usize,
    pub mean_us: f64,
    pub report: anyprec_core::ExecReport,
}

pub const BENCH_HEADER: &str = "k,repeats,mean_us,planes_bytes_read,table_bytes_read,total_bytes,path";

pub fn bench_layer(p: &PackedLayer, bits: &[u8], repeats: usize, batch: usize, seed: u64) -> Result<Vec<BenchRow>> {
    if repeats == 0 || batch == 0 {
        return Err(CliError::Usage("repeats and batch must be positive".into()));
    }
    let bits: Vec<u8> = if bits.is_empty() { (p.n_min()..=p.n_max()).collect() } else { bits.to_vec() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Matrix::new(batch, p.cols(), (0..batch * p.cols()).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let mut rows = Vec::with_capacity(bits.len());
    for k in bits {
        let cfg = GemvConfig::new(k);
        let mut first = None;
        let start = Instant::now();
        for _ in 0..repeats {
            let report = if batch == 1 { gemv(p, x.row(0), &cfg)?.1 } else { gemm(p, &x, &cfg)?.1 };
            if *first.get_or_insert(report) != report {
                return Err(CliError::Validation(format!("byte counters changed between runs at k={k}")));
            }
        }
        rows.push(BenchRow {
            k,
            repeats,
            mean_us: start.elapsed().as_secs_f64() * 1e6 / repeats as f64,
            report: first.expect("repeats > 0"),
        });
    }
    Ok(rows)
}

pub fn bench(a: &BenchArgs, seed: u64, out: &mut dyn Write) -> Result<()> {
    let p = deserialize(&read_bytes(&a.file)?)?;
    let rows = bench_layer(&p, &a.bits, a.repeats, a.batch, seed)?;
    let mut csv = format!("{BENCH_HEADER}\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{:.3},{},{},{},{}\n",
            r.k,
            r.repeats,
            r.mean_us,
            r.report.planes_bytes_read,
            r.report.table_bytes_read,
            r.report.total_bytes(),
            r.report.path
        ));
    }
    match &a.out {
        Some(path) => write_bytes(path, csv.as_bytes()),
        None => emit(out, format_args!("{csv}")),
    }
}

/// Lab configuration file. Omitted keys take the benchmark defaults.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabFile {
    pub seed: Option<u64>,
    pub rows: Option<usize>,
    pub cols: Option<usize>,
    pub samples: Option<usize>,
    pub correlation: Option<f64>,
    pub channel_spread: Option<f64>,
    pub seed_bits: Option<u8>,
    pub max_bits: Option<u8>,
}

impl LabFile {
    /// Parses a config; an empty file or empty object is a usage error.
    pub fn parse(text: &str) -> Result<Self> {
        if text.trim().is_empty() {
            return Err(CliError::Usage("lab config is empty".into()));
        }
        let f: Self = serde_json::from_str(text).map_err(|e| CliError::Validation(format!("lab config: {e}")))?;
        if f == Self::default() {
            return Err(CliError::Usage("lab config sets no parameters".into()));
        }
        Ok(f)
    }

    pub fn to_config(&self, seed: Option<u64>) -> LabConfig {
        let mut c = LabConfig::default();
        let p = &mut c.problem;
        p.seed = seed.or(self.seed).unwrap_or(p.seed);
        p.rows = self.rows.unwrap_or(p.rows);
        p.cols = self.cols.unwrap_or(p.cols);
        p.samples = self.samples.unwrap_or(p.samples);
        p.correlation = self.correlation.unwrap_or(p.correlation);
        p.channel_spread = self.channel_spread.unwrap_or(p.channel_spread);
        c.seed_bits = self.seed_bits.unwrap_or(c.seed_bits);
        c.max_bits = self.max_bits.unwrap_or(c.max_bits);
        c
    }
}

/// Files written by the lab command.
pub const LAB_OUTPUTS: [&str; 3] = ["awq_upscale.csv", "clamped_trace.csv", "direct_trace.csv"];

pub fn lab(a: &LabArgs, seed: Option<u64>, out: &mut dyn Write) -> Result<()> {
    let text = std::fs::read_to_string(&a.config).map_err(|e| CliError::io(&a.config, e))?;
    let cfg = LabFile::parse(&text)?.to_config(seed);
    let report = run_lab(&cfg)?;
    std::fs::create_dir_all(&a.out).map_err(|e| CliError::io(&a.out, e))?;
    let contents = [report.awq_csv(), report.clamped.to_csv(), report.direct.to_csv()];
    for (name, body) in LAB_OUTPUTS.iter().zip(&contents) {
        write_bytes(&a.out.join(name), body.as_bytes())?;
    }
    let n = report.clamped.len();
    emit(out, format_args!("awq upscale (bits, reused, direct):\n"))?;
    for c in &report.awq {
        emit(out, format_args!("  {} {:.6e} {:.6e}\n", c.bits, c.reused_error, c.direct_error))?;
    }
    emit(
        out,
        format_args!(
            "gptq {}->{}: clamped error {:.6e}, direct error {:.6e}, final rmsd {:.6e}\n",
            cfg.seed_bits,
            cfg.seed_bits + 1,
            report.clamped_error,
            report.direct_error,
            report.clamped.rmsd[n - 1]
        ),
    )
}
