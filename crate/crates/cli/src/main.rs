use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use clap::{Parser, Subcommand};
use fracbubbles::acceptance::{self, ALL};
use fracbubbles::extract::{extract_all, HaltReason};
use fracbubbles::halfspace::{energy_report, Geometry};
use fracbubbles::io::{
    atomic_write, canonical_json, csv_from_str, field_to_csv, format_float, CsvData,
};
use fracbubbles::synth::{energy_ledger, Background, LEDGER_COLUMNS};
use fracbubbles::{
    Bubble, BubbleConfig, Error, ExtractionSettings, Field, FracParams, HalfSpaceGrid,
    PoissonKernel, TraceField,
};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

const EXIT_PARSE: u8 = 64;
const EXIT_NUMERIC: u8 = 65;
const EXIT_BUDGET: u8 = 2;

#[derive(Parser)]
#[command(
    name = "fracbubbles",
    version,
    about = "Bubble analysis on the flat half-space"
)]
struct Cli {
    /// Seed for every random draw.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Where to write the run manifest; defaults to stderr.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form and calibrated constants as flat JSON.
    Constants {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        gamma: f64,
    },
    /// Amplitude, trace mass and sample values of one bubble.
    Bubble {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        gamma: f64,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        /// Comma-separated coordinates; defaults to the origin.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        center: Option<Vec<f64>>,
        /// Defaults to the calibrated amplitude.
        #[arg(long)]
        amplitude: Option<f64>,
        /// Include the full calibration record.
        #[arg(long)]
        calibrate: bool,
    },
    /// Poisson extension of the calibrated bubble at the `x..,y` rows of a CSV.
    Extend {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        gamma: f64,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        #[arg(long)]
        points: PathBuf,
        /// Relative quadrature tolerance.
        #[arg(long)]
        tolerance: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Energy report of a field snapshot.
    Energy {
        #[arg(long)]
        field: PathBuf,
        /// `zero` or a file with one value per boundary node.
        #[arg(long, default_value = "zero")]
        q_potential: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-step field snapshots and the energy ledger of a bubble config.
    Synthesize {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Iterative bubble extraction from a field or trace snapshot.
    Extract {
        #[arg(long)]
        input: PathBuf,
        /// Extraction settings; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Required for trace snapshots, which do not record γ.
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Runs the acceptance suite.
    Accept {
        #[arg(long, default_value = "primary")]
        suite: String,
        /// Comma-separated subset of criteria.
        #[arg(long, value_delimiter = ',')]
        criteria: Option<Vec<u32>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Failure {
    Parse(String),
    Numeric(Error),
    Io(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Parse(_)
            | Error::Json(_)
            | Error::InvalidInput(_)
            | Error::InvalidParams(_)
            | Error::DimensionMismatch { .. }
            | Error::ScaleBelowGrid { .. } => Failure::Parse(e.to_string()),
            Error::Io(io) => Failure::Io(io.to_string()),
            other => Failure::Numeric(other),
        }
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Parse(e.to_string())
    }
}

type Run<T> = Result<T, Failure>;

struct Manifest {
    inputs: BTreeMap<String, String>,
    outputs: Vec<String>,
}

impl Manifest {
    fn read(&mut self, path: &Path) -> Run<String> {
        let bytes =
            fs::read(path).map_err(|e| Failure::Parse(format!("{}: {e}", path.display())))?;
        let digest = Sha256::digest(&bytes);
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        self.inputs.insert(path.display().to_string(), hex);
        String::from_utf8(bytes)
            .map_err(|_| Failure::Parse(format!("{}: not UTF-8", path.display())))
    }

    fn write(&mut self, path: &Path, text: &str) -> Run<()> {
        atomic_write(path, text.as_bytes())
            .map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
        self.outputs.push(path.display().to_string());
        Ok(())
    }

    fn emit(&mut self, out: Option<&Path>, text: String) -> Run<()> {
        match out {
            Some(p) => self.write(p, &text),
            None => {
                println!("{text}");
                Ok(())
            }
        }
    }
}

fn params(n: usize, gamma: f64) -> Run<FracParams<f64>> {
    Ok(FracParams::new(n, gamma)?)
}

fn constants(n: usize, gamma: f64) -> Run<String> {
    let p = params(n, gamma)?;
    let v = json!({
        "n": p.n,
        "gamma": p.gamma,
        "two_star": p.two_star,
        "d_gamma": p.d_gamma,
        "d_star": p.d_star,
        "sobolev_S": p.sobolev_s,
        "kappa": p.kappa,
        "energy_quantum": p.energy_quantum,
        "beta_zero": p.beta_zero,
    });
    Ok(canonical_json(&v)?)
}

fn bubble(
    n: usize,
    gamma: f64,
    lambda: f64,
    center: Option<Vec<f64>>,
    amplitude: Option<f64>,
    calibrate: bool,
) -> Run<String> {
    let p = params(n, gamma)?;
    let center = center.unwrap_or_else(|| vec![0.0; n]);
    let b = Bubble::new(center.clone(), lambda, amplitude.unwrap_or(p.kappa))?;
    if b.dim() != n {
        return Err(Failure::Parse(format!(
            "center has {} coordinates, expected {n}",
            b.dim()
        )));
    }
    let samples: Vec<Value> = (0..=4)
        .map(|k| {
            let mut x = center.clone();
            x[0] += k as f64 * lambda;
            json!({"x": x, "value": b.eval_trace(&p, &x)})
        })
        .collect();
    let mut v = json!({
        "kappa": p.kappa,
        "amplitude": b.amplitude,
        "trace_mass": b.trace_mass(&p),
        "sample_values": samples,
    });
    if calibrate {
        v["calibration"] = serde_json::to_value(&p.calibration)?;
    }
    Ok(canonical_json(&v)?)
}

fn parse_rows(text: &str, width: usize) -> Run<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cells: Result<Vec<f64>, _> = line.split(',').map(|c| c.trim().parse::<f64>()).collect();
        match cells {
            Ok(c) if c.len() == width => rows.push(c),
            Ok(c) => {
                return Err(Failure::Parse(format!(
                    "line {}: {} columns, expected {width}",
                    ln + 1,
                    c.len()
                )))
            }
            Err(_) if rows.is_empty() && ln == 0 => continue,
            Err(_) => return Err(Failure::Parse(format!("line {}: not numeric", ln + 1))),
        }
    }
    Ok(rows)
}

fn extend(n: usize, gamma: f64, lambda: f64, points: &str, tolerance: Option<f64>) -> Run<String> {
    let p = params(n, gamma)?;
    let b = Bubble::centered(n, lambda, p.kappa)?;
    let mut k = PoissonKernel::new(&p);
    if let Some(t) = tolerance {
        if !(t > 0.0 && t < 1.0) {
            return Err(Failure::Parse("tolerance must lie in (0, 1)".into()));
        }
        k = k.with_tolerance(t);
    }
    let mut out = String::new();
    for a in 0..n {
        out.push_str(&format!("x{a},"));
    }
    out.push_str("y,U,err_estimate\n");
    for row in parse_rows(points, n + 1)? {
        let (x, y) = row.split_at(n);
        let r = k.extend(&b, x, y[0])?;
        for c in &row {
            out.push_str(&format_float(*c));
            out.push(',');
        }
        out.push_str(&format!(
            "{},{}\n",
            format_float(r.value),
            format_float(r.error)
        ));
    }
    Ok(out)
}

fn read_field(text: &str) -> Run<Field<f64>> {
    match csv_from_str::<f64>(text)? {
        CsvData::Field(f) => Ok(f),
        CsvData::Trace(_) => Err(Failure::Parse(
            "expected a field snapshot, found a trace".into(),
        )),
    }
}

fn energy(m: &mut Manifest, field: &Path, q: &str) -> Run<String> {
    let u = read_field(&m.read(field)?)?;
    let q = if q == "zero" {
        None
    } else {
        let text = m.read(Path::new(q))?;
        let vals: Vec<f64> = parse_rows(&text, 1)?.into_iter().map(|r| r[0]).collect();
        Some(vals)
    };
    Ok(canonical_json(&energy_report(&u, q.as_deref())?)?)
}

fn synthesize(m: &mut Manifest, config: &Path, out: &Path) -> Run<()> {
    let cfg: BubbleConfig<f64> = serde_json::from_str(&m.read(config)?)?;
    cfg.validate()?;
    let p = params(cfg.n, cfg.gamma)?;
    let grid = Arc::new(HalfSpaceGrid::new(cfg.grid_spec())?);
    let u0 = match &cfg.background {
        Background::Zero => None,
        Background::File(f) => {
            let path = if f.is_relative() {
                config.parent().unwrap_or(Path::new(".")).join(f)
            } else {
                f.clone()
            };
            let b = read_field(&m.read(&path)?)?;
            Some(Field::new(grid.clone(), b.into_values())?)
        }
    };
    fs::create_dir_all(out).map_err(|e| Failure::Io(format!("{}: {e}", out.display())))?;
    let mut ledger = LEDGER_COLUMNS.join(",") + "\n";
    for alpha in 1..=cfg.steps() {
        let (rec, u) = energy_ledger(&cfg, alpha, &grid, &p, u0.as_ref())?;
        m.write(
            &out.join(format!("field_alpha{alpha}.csv")),
            &field_to_csv(&u)?,
        )?;
        ledger.push_str(&rec.csv_row().join(","));
        ledger.push('\n');
    }
    m.write(&out.join("ledger.csv"), &ledger)
}

fn extract(
    m: &mut Manifest,
    input: &Path,
    config: Option<&Path>,
    gamma: Option<f64>,
    out: &Path,
) -> Run<HaltReason> {
    let settings: ExtractionSettings<f64> = match config {
        Some(c) => serde_json::from_str(&m.read(c)?)?,
        None => ExtractionSettings::default(),
    };
    settings.validate()?;
    let (trace, n, g) = match csv_from_str::<f64>(&m.read(input)?)? {
        CsvData::Field(f) => {
            let spec = f.grid().spec().clone();
            if f.grid().geometry() != Geometry::Cartesian {
                return Err(Failure::Parse("extraction needs a Cartesian field".into()));
            }
            if gamma.is_some_and(|g| g != spec.gamma) {
                return Err(Failure::Parse(
                    "--gamma disagrees with the field header".into(),
                ));
            }
            (TraceField::from_field(&f)?, spec.n, spec.gamma)
        }
        CsvData::Trace(t) => {
            let g = gamma.ok_or_else(|| Failure::Parse("trace input needs --gamma".into()))?;
            let n = t.lattice.n;
            (t, n, g)
        }
    };
    let p = params(n, g)?;
    let rep = extract_all(&trace, &settings, &p)?;
    m.write(out, &canonical_json(&rep)?)?;
    Ok(rep.halt_reason)
}

fn accept(
    m: &mut Manifest,
    seed: u64,
    suite: &str,
    criteria: Option<Vec<u32>>,
    out: Option<&Path>,
) -> Run<bool> {
    if suite != "primary" {
        return Err(Failure::Parse(format!("unknown suite {suite:?}")));
    }
    let ids = criteria.unwrap_or_else(|| ALL.to_vec());
    if let Some(bad) = ids.iter().find(|i| !ALL.contains(i)) {
        return Err(Failure::Parse(format!("no criterion {bad}")));
    }
    let report = acceptance::run_suite(seed, &ids);
    for c in &report.criteria {
        println!("{}", c.summary_line());
    }
    if let Some(p) = out {
        m.write(p, &canonical_json(&report)?)?;
    }
    Ok(report.all_pass())
}

fn diagnostic(e: &Error) -> String {
    let diag =
        json!({"error": "numerical-failure", "message": e.to_string(), "detail": format!("{e:?}")});
    canonical_json(&diag).unwrap_or_default()
}

fn configure_threads() -> Run<()> {
    if let Ok(v) = std::env::var("FRACBUBBLES_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| Failure::Parse(format!("FRACBUBBLES_THREADS={v:?} is not a count")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Io(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: Cli, m: &mut Manifest) -> Run<u8> {
    configure_threads()?;
    let code = match cli.command {
        Command::Constants { n, gamma } => {
            println!("{}", constants(n, gamma)?);
            0
        }
        Command::Bubble {
            n,
            gamma,
            lambda,
            center,
            amplitude,
            calibrate,
        } => {
            println!(
                "{}",
                bubble(n, gamma, lambda, center, amplitude, calibrate)?
            );
            0
        }
        Command::Extend {
            n,
            gamma,
            lambda,
            points,
            tolerance,
            out,
        } => {
            let text = m.read(&points)?;
            let csv = extend(n, gamma, lambda, &text, tolerance)?;
            m.emit(out.as_deref(), csv.trim_end().to_string())?;
            0
        }
        Command::Energy {
            field,
            q_potential,
            out,
        } => {
            let text = energy(m, &field, &q_potential)?;
            m.emit(out.as_deref(), text)?;
            0
        }
        Command::Synthesize { config, out } => {
            synthesize(m, &config, &out)?;
            0
        }
        Command::Extract {
            input,
            config,
            gamma,
            out,
        } => match extract(m, &input, config.as_deref(), gamma, &out)? {
            HaltReason::BudgetExhausted => EXIT_BUDGET,
            _ => 0,
        },
        Command::Accept {
            suite,
            criteria,
            out,
        } => {
            if accept(m, cli.seed, &suite, criteria, out.as_deref())? {
                0
            } else {
                1
            }
        }
    };
    Ok(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => EXIT_PARSE,
            });
        }
    };
    let started = Instant::now();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (seed, manifest_path) = (cli.seed, cli.manifest.clone());
    let mut m = Manifest {
        inputs: BTreeMap::new(),
        outputs: Vec::new(),
    };
    let code = match run(cli, &mut m) {
        Ok(c) => c,
        Err(Failure::Parse(msg)) => {
            eprintln!("error: {msg}");
            EXIT_PARSE
        }
        Err(Failure::Io(msg)) => {
            eprintln!("error: {msg}");
            74
        }
        Err(Failure::Numeric(e)) => {
            eprintln!("{}", diagnostic(&e));
            EXIT_NUMERIC
        }
    };
    let manifest = json!({
        "args": args,
        "seed": seed,
        "inputs_sha256": m.inputs,
        "outputs": m.outputs,
        "version": env!("CARGO_PKG_VERSION"),
        "exit_code": code,
        "wall_seconds": started.elapsed().as_secs_f64(),
        "threads": rayon::current_num_threads(),
    });
    let text = canonical_json(&manifest).unwrap_or_default();
    match manifest_path {
        Some(p) => {
            if let Err(e) = atomic_write(&p, text.as_bytes()) {
                eprintln!("error: manifest {}: {e}", p.display());
            }
        }
        None => eprintln!("manifest {text}"),
    }
    ExitCode::from(code)
}
