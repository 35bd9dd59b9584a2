#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use monosmooth::cdf::{self, HistogramSpec};
use monosmooth::problem::read_data_csv;
use monosmooth::spline::Order;
use monosmooth::{solve, BnbConfig, Boundary, ProblemSpec, SolveReport, SolveStatus, SplineCurve};

/// Monotone, bounded smoothing splines.
///
/// Set MONOSMOOTH_LOG (e.g. `info`, `debug`) for solver diagnostics.
#[derive(Parser)]
#[command(name = "monosmooth", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a monotone smoothing spline to `t,alpha[,weight]` data.
    Fit(FitArgs),
    /// Estimate a CDF (and density) from samples or a histogram.
    Cdf(CdfArgs),
    /// Evaluate a fitted spline.
    Eval(EvalArgs),
    /// Render a fitted spline, optional data and its derivative as SVG.
    Plot(PlotArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum BoundaryArg {
    /// Curve starts at x(0) = 0.
    Pinned,
    /// Curve starts at the first data site with x >= 0 there.
    Free,
}

#[derive(Args)]
struct SolverArgs {
    /// Worker threads for node solves (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Node budget; exceeding it exits with status 2.
    #[arg(long, default_value_t = 100_000)]
    max_nodes: usize,
    /// Relative optimality gap.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Number of rows in samples.csv.
    #[arg(long, default_value_t = 1001)]
    resolution: usize,
}

impl SolverArgs {
    fn config(&self) -> BnbConfig {
        BnbConfig {
            max_nodes: self.max_nodes,
            tol_gap: self.tol,
            threads: self.threads,
            ..BnbConfig::default()
        }
    }
}

#[derive(Args)]
struct FitArgs {
    /// CSV with columns t, alpha and optionally weight.
    #[arg(long)]
    input: PathBuf,
    /// Data-fidelity weight.
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    /// Upper bound on the curve; required.
    #[arg(long, allow_negative_numbers = true)]
    xmax: f64,
    #[arg(long, value_enum, default_value_t = BoundaryArg::Pinned)]
    boundary: BoundaryArg,
    /// Name of the weight column (default: `weight` when present).
    #[arg(long)]
    weights_column: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args)]
struct CdfArgs {
    /// Raw samples, one per line.
    #[arg(
        long,
        conflicts_with = "histogram",
        required_unless_present = "histogram"
    )]
    samples: Option<PathBuf>,
    /// Histogram CSV with columns edge_left, edge_right, count.
    #[arg(long)]
    histogram: Option<PathBuf>,
    /// Number of equal-width bins for raw samples.
    #[arg(long, default_value_t = 20)]
    bins: usize,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = 1.0)]
    xmax: f64,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args)]
struct EvalArgs {
    /// spline.json written by `fit` or `cdf`.
    #[arg(long)]
    spline: PathBuf,
    /// Abscissae, comma separated or repeated.
    #[arg(
        long,
        value_delimiter = ',',
        allow_negative_numbers = true,
        required = true
    )]
    at: Vec<f64>,
    /// Clamp points outside the domain instead of failing.
    #[arg(long)]
    clamp: bool,
    /// Write the CSV here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long)]
    spline: PathBuf,
    /// Data CSV (t, alpha) to overlay.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MONOSMOOTH_LOG", "warn"))
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Fit(a) => fit(&a),
        Command::Cdf(a) => run_cdf(&a),
        Command::Eval(a) => eval(&a).map(|_| ExitCode::SUCCESS),
        Command::Plot(a) => plot(&a).map(|_| ExitCode::SUCCESS),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::from(1)
    })
}

fn exit_code(status: SolveStatus) -> ExitCode {
    match status {
        SolveStatus::IterationLimit => {
            eprintln!("warning: node limit reached; the result may be suboptimal");
            ExitCode::from(2)
        }
        _ => ExitCode::SUCCESS,
    }
}

fn fit(a: &FitArgs) -> anyhow::Result<ExitCode> {
    let data = read_data_csv(&a.input, a.weights_column.as_deref())
        .with_context(|| format!("reading {}", a.input.display()))?;
    let boundary = match a.boundary {
        BoundaryArg::Pinned => Boundary::PinnedZero,
        BoundaryArg::Free => Boundary::FreeStart,
    };
    let spec = ProblemSpec::new(data, a.xmax, a.lambda, boundary)?;
    let (report, curve) = solve(&spec, &a.solver.config())?;
    write_fit(&a.out, &report, &curve, a.solver.resolution)?;
    Ok(exit_code(report.status))
}

fn run_cdf(a: &CdfArgs) -> anyhow::Result<ExitCode> {
    let hist = match (&a.samples, &a.histogram) {
        (Some(path), _) => {
            let samples = cdf::read_samples_csv(path)
                .with_context(|| format!("reading {}", path.display()))?;
            HistogramSpec::from_samples(&samples, a.bins)?
        }
        (None, Some(path)) => {
            HistogramSpec::read_csv(path).with_context(|| format!("reading {}", path.display()))?
        }
        (None, None) => bail!("one of --samples or --histogram is required"),
    };
    let spec = hist.to_problem(a.lambda)?.with_upper_bound(a.xmax)?;
    let (report, curve) = solve(&spec, &a.solver.config())?;
    write_fit(&a.out, &report, &curve, a.solver.resolution)?;
    write(
        &a.out.join("density.json"),
        &cdf::density(&curve).to_json()?,
    )?;
    Ok(exit_code(report.status))
}

fn write_fit(
    dir: &Path,
    report: &SolveReport,
    curve: &SplineCurve,
    resolution: usize,
) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write(&dir.join("spline.json"), &curve.to_json()?)?;
    write(
        &dir.join("report.json"),
        &serde_json::to_string_pretty(report)?,
    )?;
    let path = dir.join("samples.csv");
    let file = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    curve.write_samples(std::io::BufWriter::new(file), resolution)?;
    log::info!(
        "{:?}: objective {:.9e}, {} nodes, output in {}",
        report.status,
        report.objective,
        report.nodes_explored,
        dir.display()
    );
    Ok(())
}

fn write(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_spline(path: &Path) -> anyhow::Result<SplineCurve> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    SplineCurve::from_json(&text).with_context(|| format!("parsing {}", path.display()))
}

fn eval(a: &EvalArgs) -> anyhow::Result<()> {
    let curve = read_spline(&a.spline)?;
    let mut out = String::from("t,x,dx,ddx\n");
    for &t in &a.at {
        let row = [Order::Value, Order::First, Order::Second]
            .map(|o| curve.eval(t, o, a.clamp))
            .into_iter()
            .collect::<monosmooth::Result<Vec<f64>>>()?;
        writeln!(out, "{t},{},{},{}", row[0], row[1], row[2])?;
    }
    match &a.out {
        Some(path) => write(path, &out),
        None => Ok(std::io::stdout().lock().write_all(out.as_bytes())?),
    }
}

fn plot(a: &PlotArgs) -> anyhow::Result<()> {
    let curve = read_spline(&a.spline)?;
    let data = match &a.data {
        Some(path) => {
            read_data_csv(path, None).with_context(|| format!("reading {}", path.display()))?
        }
        None => Vec::new(),
    };
    let points: Vec<(f64, f64)> = data.iter().map(|d| (d.t, d.alpha)).collect();
    write(&a.out, &render_svg(&curve, &points))
}

const WIDTH: f64 = 640.0;
const PANEL: f64 = 240.0;
const MARGIN: f64 = 40.0;
const SAMPLES: usize = 400;

struct Frame {
    t: (f64, f64),
    y: (f64, f64),
    top: f64,
}

impl Frame {
    fn new(t: (f64, f64), ys: impl Iterator<Item = f64>, top: f64) -> Self {
        let (mut lo, mut hi) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), y| {
            (l.min(y), h.max(y))
        });
        if !(hi > lo) {
            lo -= 0.5;
            hi += 0.5;
        }
        let pad = 0.05 * (hi - lo);
        Self {
            t,
            y: (lo - pad, hi + pad),
            top,
        }
    }

    fn px(&self, t: f64) -> f64 {
        MARGIN + (t - self.t.0) / (self.t.1 - self.t.0) * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        self.top + PANEL - (y - self.y.0) / (self.y.1 - self.y.0) * PANEL
    }

    fn axes(&self, svg: &mut String, label: &str) {
        let _ = writeln!(
            svg,
            r##"<rect x="{MARGIN:.2}" y="{:.2}" width="{:.2}" height="{PANEL:.2}" fill="none" stroke="#888"/>"##,
            self.top,
            WIDTH - 2.0 * MARGIN
        );
        let _ = writeln!(
            svg,
            r#"<text x="{MARGIN:.2}" y="{:.2}" font-size="12">{label}  [{:.4}, {:.4}]</text>"#,
            self.top - 6.0,
            self.y.0,
            self.y.1
        );
    }

    fn polyline(&self, svg: &mut String, pts: &[(f64, f64)], color: &str) {
        let path: Vec<String> = pts
            .iter()
            .map(|&(t, y)| format!("{:.2},{:.2}", self.px(t), self.py(y)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            path.join(" ")
        );
    }
}

fn render_svg(curve: &SplineCurve, data: &[(f64, f64)]) -> String {
    let (a, b) = curve.domain();
    let ts: Vec<f64> = (0..SAMPLES)
        .map(|k| a + (b - a) * k as f64 / (SAMPLES - 1) as f64)
        .collect();
    let xs: Vec<(f64, f64)> = ts.iter().map(|&t| (t, curve.value(t))).collect();
    let ds: Vec<(f64, f64)> = ts.iter().map(|&t| (t, curve.derivative_at(t))).collect();
    let shown: Vec<(f64, f64)> = data
        .iter()
        .copied()
        .filter(|&(t, _)| t >= a && t <= b)
        .collect();

    let height = 2.0 * PANEL + 3.0 * MARGIN;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH:.0}" height="{height:.0}" viewBox="0 0 {WIDTH:.0} {height:.0}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);

    let top = Frame::new((a, b), xs.iter().chain(&shown).map(|p| p.1), MARGIN);
    top.axes(&mut svg, "x(t)");
    top.polyline(&mut svg, &xs, "#1f77b4");
    for &(t, y) in &shown {
        let _ = writeln!(
            svg,
            r##"<circle cx="{:.2}" cy="{:.2}" r="3" fill="#d62728"/>"##,
            top.px(t),
            top.py(y)
        );
    }

    let bottom = Frame::new((a, b), ds.iter().map(|p| p.1), 2.0 * MARGIN + PANEL);
    bottom.axes(&mut svg, "dx/dt");
    bottom.polyline(&mut svg, &ds, "#2ca02c");
    let _ = writeln!(
        svg,
        r#"<text x="{MARGIN:.2}" y="{:.2}" font-size="12">t in [{a:.4}, {b:.4}]</text>"#,
        height - 10.0
    );
    svg.push_str("</svg>\n");
    svg
}
