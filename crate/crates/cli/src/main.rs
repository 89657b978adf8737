//! `specfor` command-line front end.
//!
//! Exit codes: 0 ok, 2 input error, 3 flag error, 4 missing profiles.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use specfor_core::detector::{anomaly_score, classify, enroll, load_profiles, validate_label, SourceProfile};
use specfor_core::report::{analyze_file, fingerprint_file, AnalysisParams, ARTIFACT_VERSION, REAL_LABEL};
use specfor_core::{Error, LaplacianKind, StageParams};

const EXIT_INPUT: u8 = 2;
const EXIT_FLAGS: u8 = 3;
const EXIT_PROFILES: u8 = 4;
const THREADS_ENV: &str = "SPECFOR_THREADS";

#[derive(Parser, Debug)]
#[command(name = "specfor", version, about = "Spectral fingerprinting and forgery checks for GAN-generated images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Analyze one image and write <out>/report.json
    Analyze {
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write stage, spectrum, ELA and correlation panels as PNG
        #[arg(long)]
        render: bool,
        #[arg(long)]
        profiles: Option<PathBuf>,
        #[command(flatten)]
        analysis: AnalysisArgs,
    },
    /// Fingerprint every image in a directory and write <profiles>/<label>.json
    Enroll {
        label: String,
        dir: PathBuf,
        #[arg(long)]
        profiles: PathBuf,
        #[command(flatten)]
        stage: StageArgs,
    },
    /// Classify one image against enrolled profiles; prints JSON
    Classify {
        image: PathBuf,
        #[arg(long)]
        profiles: PathBuf,
        #[command(flatten)]
        stage: StageArgs,
    },
    /// Analyze every image in a directory, one report directory per file
    Batch {
        dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        render: bool,
        #[arg(long)]
        profiles: Option<PathBuf>,
        #[command(flatten)]
        analysis: AnalysisArgs,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LaplacianArg {
    #[value(name = "4")]
    Four,
    #[value(name = "8")]
    Eight,
}

impl From<LaplacianArg> for LaplacianKind {
    fn from(a: LaplacianArg) -> Self {
        match a {
            LaplacianArg::Four => LaplacianKind::FourNeighbor,
            LaplacianArg::Eight => LaplacianKind::EightNeighbor,
        }
    }
}

#[derive(Args, Debug)]
struct StageArgs {
    /// Median window (odd)
    #[arg(long, default_value_t = 3)]
    k: usize,
    /// Laplacian stencil: 4- or 8-neighbor
    #[arg(long, value_enum, default_value = "4")]
    laplacian: LaplacianArg,
}

impl StageArgs {
    fn params(&self) -> Result<StageParams, Error> {
        if self.k == 0 || self.k % 2 == 0 {
            return Err(Error::BadParameter(format!("median window {} must be odd", self.k)));
        }
        Ok(StageParams {
            median_window: self.k,
            laplacian: self.laplacian.into(),
        })
    }
}

#[derive(Args, Debug)]
struct AnalysisArgs {
    #[command(flatten)]
    stage: StageArgs,
    /// Peak prominence threshold
    #[arg(long, default_value_t = 4.0)]
    tau: f64,
    #[arg(long, default_value_t = 90)]
    quality: u8,
    #[arg(long, default_value_t = 20.0)]
    gain: f64,
    #[arg(long = "corr-window", default_value_t = 7)]
    corr_window: usize,
    #[arg(long, default_value_t = 16)]
    block: usize,
    #[arg(long, default_value_t = 8)]
    stride: usize,
    #[arg(long, default_value_t = 0.95)]
    sim: f64,
    #[arg(long = "min-shift", default_value_t = 16.0)]
    min_shift: f64,
}

impl AnalysisArgs {
    fn params(&self) -> Result<AnalysisParams, Error> {
        let params = AnalysisParams {
            median_window: self.stage.k,
            laplacian: self.stage.laplacian.into(),
            peak_threshold: self.tau,
            ela_quality: self.quality,
            ela_gain: self.gain,
            correlation_window: self.corr_window,
            clone_block: self.block,
            clone_stride: self.stride,
            clone_similarity: self.sim,
            clone_min_shift: self.min_shift,
            ..AnalysisParams::default()
        };
        params.validate()?;
        Ok(params)
    }
}

/// A failure carrying the process exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::BadParameter(_) => EXIT_FLAGS,
            Error::NoProfiles => EXIT_PROFILES,
            _ => EXIT_INPUT,
        };
        Self::new(code, e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_FLAGS } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Analyze {
            image,
            out,
            render,
            profiles,
            analysis,
        } => cmd_analyze(&image, &out, render, profiles.as_deref(), &analysis),
        Command::Enroll {
            label,
            dir,
            profiles,
            stage,
        } => cmd_enroll(&label, &dir, &profiles, &stage),
        Command::Classify { image, profiles, stage } => cmd_classify(&image, &profiles, &stage),
        Command::Batch {
            dir,
            out,
            render,
            profiles,
            analysis,
        } => cmd_batch(&dir, &out, render, profiles.as_deref(), &analysis),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

/// Loads profiles, treating a missing or empty directory as exit 4.
fn require_profiles(dir: &Path) -> Result<Vec<SourceProfile>, Failure> {
    if !dir.is_dir() {
        return Err(Failure::new(
            EXIT_PROFILES,
            format!("profiles directory {} does not exist", dir.display()),
        ));
    }
    let profiles = load_profiles(dir).map_err(|e| Failure::new(EXIT_INPUT, format!("{}: {e}", dir.display())))?;
    if profiles.is_empty() {
        return Err(Failure::new(
            EXIT_PROFILES,
            format!("no profiles in {}", dir.display()),
        ));
    }
    Ok(profiles)
}

fn unix_seconds() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Timestamps live here, never in report.json.
fn append_run_log(out: &Path, line: &str) -> Result<(), Failure> {
    use std::io::Write;
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(out.join("run.log"))
        .map_err(|e| Failure::new(EXIT_INPUT, format!("{}: {e}", out.display())))?;
    writeln!(f, "{} specfor {} {}", unix_seconds(), ARTIFACT_VERSION, line)
        .map_err(|e| Failure::new(EXIT_INPUT, e.to_string()))
}

fn analyze_one(
    image: &Path,
    out: &Path,
    render: bool,
    params: &AnalysisParams,
    profiles: &[SourceProfile],
) -> Result<PathBuf, Failure> {
    let analysis = analyze_file(image, params, profiles)?;
    let report = analysis.write_report(out)?;
    if render {
        analysis.write_panels(out)?;
    }
    Ok(report)
}

fn cmd_analyze(
    image: &Path,
    out: &Path,
    render: bool,
    profiles_dir: Option<&Path>,
    args: &AnalysisArgs,
) -> Result<(), Failure> {
    let params = args.params()?;
    let profiles = profiles_dir.map(require_profiles).transpose()?.unwrap_or_default();
    analyze_one(image, out, render, &params, &profiles)?;
    append_run_log(out, &format!("analyze {}", image.display()))
}

fn image_files(dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    let entries = std::fs::read_dir(dir).map_err(|e| Failure::new(EXIT_INPUT, format!("{}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    Ok(files)
}

fn cmd_enroll(label: &str, dir: &Path, profiles_dir: &Path, stage: &StageArgs) -> Result<(), Failure> {
    validate_label(label).map_err(|e| Failure::new(EXIT_FLAGS, e.to_string()))?;
    let params = stage.params()?;
    let mut fingerprints = Vec::new();
    for path in image_files(dir)? {
        match fingerprint_file(&path, &params) {
            Ok(fp) => fingerprints.push(fp),
            Err(e) => eprintln!("warning: skipping {}: {e}", path.display()),
        }
    }
    if fingerprints.is_empty() {
        return Err(Failure::new(
            EXIT_INPUT,
            format!("no decodable images in {}", dir.display()),
        ));
    }
    let profile = enroll(label, &fingerprints)?;
    let path = profile.save(profiles_dir)?;
    eprintln!("enrolled {} image(s) as {label:?} -> {}", profile.count, path.display());
    Ok(())
}

#[derive(Serialize)]
struct ClassifyOutput {
    label: String,
    scores: BTreeMap<String, f64>,
    margin: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    anomaly: Option<f64>,
}

fn cmd_classify(image: &Path, profiles_dir: &Path, stage: &StageArgs) -> Result<(), Failure> {
    let params = stage.params()?;
    let profiles = require_profiles(profiles_dir)?;
    let fp = fingerprint_file(image, &params)?;
    let c = classify(&fp, &profiles)?;
    let anomaly = profiles
        .iter()
        .find(|p| p.label == REAL_LABEL)
        .map(|real| anomaly_score(&fp, real))
        .transpose()?;
    let out = ClassifyOutput {
        label: c.label,
        scores: c.scores,
        margin: c.margin,
        anomaly,
    };
    println!(
        "{}",
        serde_json::to_string_pretty(&out).map_err(|e| Failure::new(EXIT_INPUT, e.to_string()))?
    );
    Ok(())
}

#[derive(Serialize)]
struct BatchEntry {
    input: String,
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    report: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Serialize)]
struct BatchIndex {
    artifact_version: &'static str,
    params: AnalysisParams,
    entries: Vec<BatchEntry>,
}

fn thread_cap() -> Option<usize> {
    let raw = std::env::var(THREADS_ENV).ok()?;
    match raw.trim().parse::<usize>() {
        Ok(n) if n > 0 => Some(n),
        _ => {
            eprintln!("warning: ignoring {THREADS_ENV}={raw:?}");
            None
        }
    }
}

fn cmd_batch(
    dir: &Path,
    out: &Path,
    render: bool,
    profiles_dir: Option<&Path>,
    args: &AnalysisArgs,
) -> Result<(), Failure> {
    let params = args.params()?;
    let profiles = profiles_dir.map(require_profiles).transpose()?.unwrap_or_default();
    let files = image_files(dir)?;
    if files.is_empty() {
        return Err(Failure::new(EXIT_INPUT, format!("no files in {}", dir.display())));
    }

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_cap() {
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| Failure::new(EXIT_INPUT, e.to_string()))?;

    // results come back in input order regardless of scheduling
    let results: Vec<Result<PathBuf, Failure>> = pool.install(|| {
        files
            .par_iter()
            .map(|file| {
                let name = file.file_name().expect("read_dir entries have names");
                analyze_one(file, &out.join(name), render, &params, &profiles)
            })
            .collect()
    });

    let mut entries = Vec::with_capacity(files.len());
    let mut ok = 0;
    for (file, result) in files.iter().zip(results) {
        let input = file.display().to_string();
        match result {
            Ok(report) => {
                ok += 1;
                let rel = report.strip_prefix(out).unwrap_or(&report).display().to_string();
                entries.push(BatchEntry {
                    input,
                    status: "ok",
                    report: Some(rel),
                    error: None,
                });
            }
            Err(f) => {
                eprintln!("warning: {}: {}", file.display(), f.message);
                entries.push(BatchEntry {
                    input,
                    status: "error",
                    report: None,
                    error: Some(f.message),
                });
            }
        }
    }
    let index = BatchIndex {
        artifact_version: ARTIFACT_VERSION,
        params,
        entries,
    };
    std::fs::create_dir_all(out).map_err(|e| Failure::new(EXIT_INPUT, format!("{}: {e}", out.display())))?;
    let json = serde_json::to_string_pretty(&index).map_err(|e| Failure::new(EXIT_INPUT, e.to_string()))? + "\n";
    std::fs::write(out.join("index.json"), json).map_err(|e| Failure::new(EXIT_INPUT, e.to_string()))?;
    append_run_log(out, &format!("batch {} ({ok}/{} ok)", dir.display(), files.len()))?;
    if ok == 0 {
        return Err(Failure::new(EXIT_INPUT, "no image could be analyzed"));
    }
    Ok(())
}
