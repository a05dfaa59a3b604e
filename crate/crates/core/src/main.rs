use clap::{Args, Parser, Subcommand};
use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use tesp::analysis::{expected_projector_spectrum, special_case_rho};
use tesp::bench::{
    build_deblur_problem, gen_random_equation, load_image, parse_method_spec, psnr, run_experiment,
    synthetic_image, write_results_jsonl, write_trace_csv, DeblurSpec, ExperimentSpec, MethodSpec,
    ProblemKind, Psnr,
};
use tesp::sketch::build_preset_with;
use tesp::solver::{solve, Sketching, SolverConfig};

#[derive(Parser)]
#[command(name = "tesp", about = "Randomized sketch-and-project solvers for A*X*B = C")]
struct Cli {
    /// Flat key=value file supplying defaults for any flag below.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve one random equation and report the trace.
    Solve(SolveArgs),
    /// Run a method-by-trial benchmark grid on random equations.
    Bench(BenchArgs),
    /// Build and solve the three-channel deblurring problem.
    Deblur(DeblurArgs),
    /// Print convergence factors for a preset on a random equation.
    Analyze(AnalyzeArgs),
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Problem dimensions as m,r,s,n,l.
    #[arg(long)]
    dims: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iters: Option<u64>,
    #[arg(long)]
    max_seconds: Option<f64>,
    /// Capped-sampling mixing parameter.
    #[arg(long)]
    theta: Option<f64>,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Method spec, e.g. nterk-both or aterk-both-md.
    #[arg(long)]
    method: Option<String>,
    /// Write the per-iteration trace as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated method specs.
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    trials: Option<usize>,
    /// Write result rows as JSON lines (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Zero all timing fields so reruns are byte-identical.
    #[arg(long)]
    no_timing: bool,
}

#[derive(Args)]
struct DeblurArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    trials: Option<usize>,
    /// PNG to deblur; a synthetic image is generated when omitted.
    #[arg(long)]
    image: Option<PathBuf>,
    /// Synthetic image size as HxW.
    #[arg(long)]
    size: Option<String>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    bandwidth: Option<usize>,
    /// Symmetric zero padding of the blur operators.
    #[arg(long)]
    pad: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    no_timing: bool,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Preset name, e.g. terk-both.
    #[arg(long)]
    method: Option<String>,
}

/// Defaults loaded from a `key=value` file; flags override these.
struct Defaults(HashMap<String, String>);

impl Defaults {
    fn load(path: Option<&PathBuf>) -> Result<Self, String> {
        let mut map = HashMap::new();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
            for (ln, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (k, v) = line
                    .split_once('=')
                    .ok_or_else(|| format!("{}:{}: expected key=value", p.display(), ln + 1))?;
                map.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        Ok(Self(map))
    }

    fn get<T: std::str::FromStr>(&self, key: &str, flag: Option<T>, default: T) -> Result<T, String>
    where
        T::Err: std::fmt::Display,
    {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.0.get(key) {
            Some(raw) => raw
                .parse()
                .map_err(|e| format!("config key '{key}': {e}")),
            None => Ok(default),
        }
    }

    fn get_opt<T: std::str::FromStr>(&self, key: &str, flag: Option<T>) -> Result<Option<T>, String>
    where
        T::Err: std::fmt::Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.0.get(key) {
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|e| format!("config key '{key}': {e}")),
            None => Ok(None),
        }
    }
}

fn parse_dims(s: &str) -> Result<(usize, usize, usize, usize, usize), String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse().map_err(|e| format!("dims: {e}")))
        .collect::<Result<_, _>>()?;
    if parts.len() != 5 {
        return Err("dims must be m,r,s,n,l".into());
    }
    if parts.iter().any(|&d| d == 0) {
        return Err("dims must be positive".into());
    }
    Ok((parts[0], parts[1], parts[2], parts[3], parts[4]))
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s.split_once('x').ok_or("size must be HxW")?;
    Ok((
        h.trim().parse().map_err(|e| format!("size: {e}"))?,
        w.trim().parse().map_err(|e| format!("size: {e}"))?,
    ))
}

struct Resolved {
    dims: (usize, usize, usize, usize, usize),
    seed: u64,
    tol: f64,
    max_iters: u64,
    max_seconds: f64,
    theta: f64,
}

fn resolve_common(c: &CommonArgs, d: &Defaults) -> Result<Resolved, String> {
    let dims_str = d.get_opt("dims", c.dims.clone())?.unwrap_or_else(|| "20,10,10,20,3".into());
    Ok(Resolved {
        dims: parse_dims(&dims_str)?,
        seed: d.get("seed", c.seed, 0)?,
        tol: d.get("tol", c.tol, 1e-4)?,
        max_iters: d.get("max-iters", c.max_iters, 1_000_000)?,
        max_seconds: d.get("max-seconds", c.max_seconds, 600.0)?,
        theta: d.get("theta", c.theta, 0.5)?,
    })
}

fn resolve_methods(flag: Option<String>, d: &Defaults, fallback: &str) -> Result<Vec<MethodSpec>, String> {
    let raw = d.get_opt("method", flag)?.unwrap_or_else(|| fallback.to_string());
    raw.split(',')
        .map(|m| parse_method_spec(m.trim()).map_err(|e| e.to_string()))
        .collect()
}

fn run() -> Result<(), String> {
    let cli = Cli::parse();
    let defaults = Defaults::load(cli.config.as_ref())?;
    match cli.cmd {
        Cmd::Solve(args) => cmd_solve(args, &defaults),
        Cmd::Bench(args) => cmd_bench(args, &defaults),
        Cmd::Deblur(args) => cmd_deblur(args, &defaults),
        Cmd::Analyze(args) => cmd_analyze(args, &defaults),
    }
}

fn cmd_solve(args: SolveArgs, d: &Defaults) -> Result<(), String> {
    let r = resolve_common(&args.common, d)?;
    let methods = resolve_methods(args.method, d, "nterk-both")?;
    let ms = methods[0];
    let (m, rr, s, n, l) = r.dims;
    let problem = gen_random_equation(m, rr, s, n, l, r.seed).map_err(|e| e.to_string())?;
    let mut cfg = SolverConfig::new(ms.method, Sketching::Preset(ms.preset));
    cfg.seed = r.seed;
    cfg.tol = r.tol;
    cfg.max_iters = r.max_iters;
    cfg.max_seconds = r.max_seconds;
    cfg.theta = r.theta;
    let (_, trace) = solve(&problem, &cfg).map_err(|e| e.to_string())?;
    println!(
        "method={} status={:?} iters={} final_rrn={:.6e} elapsed_s={:.3}",
        ms.as_string(),
        trace.status,
        trace.iterations(),
        trace.final_rrn(),
        trace.records.last().map(|rec| rec.elapsed_s).unwrap_or(0.0)
    );
    if let Some(path) = args.out {
        let mut w = BufWriter::new(File::create(&path).map_err(|e| e.to_string())?);
        write_trace_csv(&mut w, &trace).map_err(|e| e.to_string())?;
        w.flush().map_err(|e| e.to_string())?;
        println!("trace written to {}", path.display());
    }
    Ok(())
}

fn emit_rows(out: Option<PathBuf>, rows: &[tesp::bench::ResultRow]) -> Result<(), String> {
    match out {
        Some(path) => {
            let mut w = BufWriter::new(File::create(&path).map_err(|e| e.to_string())?);
            write_results_jsonl(&mut w, rows).map_err(|e| e.to_string())?;
            w.flush().map_err(|e| e.to_string())?;
            println!("results written to {}", path.display());
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            write_results_jsonl(&mut stdout, rows).map_err(|e| e.to_string())?;
        }
    }
    Ok(())
}

fn cmd_bench(args: BenchArgs, d: &Defaults) -> Result<(), String> {
    let r = resolve_common(&args.common, d)?;
    let methods = resolve_methods(args.method, d, "nterk-both,aterk-both-md,aterk-both-pr,aterk-both-cs")?;
    let mut spec = ExperimentSpec::new(r.dims, methods);
    spec.trials = d.get("trials", args.trials, 10)?;
    spec.seed = r.seed;
    spec.tol = r.tol;
    spec.max_iters = r.max_iters;
    spec.max_seconds = r.max_seconds;
    spec.theta = r.theta;
    spec.record_timing = !args.no_timing;
    let (rows, _) = run_experiment(&spec).map_err(|e| e.to_string())?;
    emit_rows(args.out, &rows)
}

fn cmd_deblur(args: DeblurArgs, d: &Defaults) -> Result<(), String> {
    let r = resolve_common(&args.common, d)?;
    let methods = resolve_methods(args.method, d, "nterk-left")?;
    let mut ds = DeblurSpec::default();
    ds.image = d.get_opt("image", args.image)?;
    if let Some(size) = d.get_opt("size", args.size)? {
        let (h, w) = parse_size(&size)?;
        ds.height = h;
        ds.width = w;
    }
    ds.sigma = d.get("sigma", args.sigma, ds.sigma)?;
    ds.bandwidth = d.get("bandwidth", args.bandwidth, ds.bandwidth)?;
    ds.pad = d.get("pad", args.pad, ds.pad)?;

    // baseline quality of the blurred data against the clean image
    let channels = match &ds.image {
        Some(path) => load_image(path).map_err(|e| e.to_string())?,
        None => synthetic_image(ds.height, ds.width),
    };
    let problem = build_deblur_problem(&channels, ds.sigma, ds.bandwidth, &ds.h_mix, ds.pad)
        .map_err(|e| e.to_string())?;
    let x_star = problem.x_star.as_ref().expect("built with solution");
    let (m, rr, s, n, l) = (
        problem.a.rows(),
        problem.a.cols(),
        problem.b.rows(),
        problem.b.cols(),
        problem.a.tubes(),
    );
    if ds.pad == 0 {
        match psnr(&problem.c, x_star, 1.0).map_err(|e| e.to_string())? {
            Psnr::Exact => println!("blurred baseline: exact"),
            Psnr::Db(v) => println!("blurred baseline: {v:.4} dB"),
        }
    }

    let mut spec = ExperimentSpec::new((m, rr, s, n, l), methods);
    spec.trials = d.get("trials", args.trials, 1)?;
    spec.seed = r.seed;
    spec.tol = r.tol;
    spec.max_iters = r.max_iters;
    spec.max_seconds = r.max_seconds;
    spec.theta = r.theta;
    spec.record_timing = !args.no_timing;
    spec.problem = ProblemKind::Deblur(ds);
    let (rows, _) = run_experiment(&spec).map_err(|e| e.to_string())?;
    emit_rows(args.out, &rows)
}

fn cmd_analyze(args: AnalyzeArgs, d: &Defaults) -> Result<(), String> {
    let r = resolve_common(&args.common, d)?;
    let methods = resolve_methods(args.method, d, "terk-both")?;
    let preset_name = methods[0].preset;
    let (m, rr, s, n, l) = r.dims;
    let problem = gen_random_equation(m, rr, s, n, l, r.seed).map_err(|e| e.to_string())?;
    let preset =
        build_preset_with(preset_name, &problem.a, &problem.b, true).map_err(|e| e.to_string())?;
    let report = expected_projector_spectrum(
        &problem,
        &preset.left,
        &preset.right,
        &preset.weights,
        r.theta,
    )
    .map_err(|e| e.to_string())?;
    let closed_form = special_case_rho(preset_name, &problem.a, &problem.b).map_err(|e| e.to_string())?;
    println!("preset={preset_name} dims={m},{rr},{s},{n},{l} seed={}", r.seed);
    println!("delta_p_sq={:.9}", report.delta_p_sq);
    println!(
        "delta_inf_sq={:.9} (converged={})",
        report.delta_inf_sq, report.delta_inf_converged
    );
    println!("rho={:.9}", report.rho);
    println!("rho_md={:.9}", report.rho_md);
    println!("rho_cs={:.9} (theta={})", report.rho_cs, report.theta);
    println!("rho_closed_form={closed_form:.9}");
    for (k, (z, w)) in report.per_slice_lambdas.iter().enumerate() {
        println!("slice {k}: lambda_min(E[Z])={z:.9} lambda_min(E[W])={w:.9}");
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
