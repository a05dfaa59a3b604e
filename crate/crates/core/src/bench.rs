//! Experiment drivers: random consistent equations, the channel-mixing
//! deblurring problem, metrics, and machine-readable result emission.

use crate::error::Error;
use crate::linalg::RMat;
use crate::sketch::{standard_normal, PresetName};
use crate::solver::{
    solve, Method, Problem, RunTrace, Sketching, SolverConfig, TerminalStatus,
};
use crate::tensor::TubalMatrix;
use crate::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};
use std::io::Write;
use std::path::Path;

/// A method specification string like `nterk-both` or `atercd-left-pr`:
/// optional `n`/`a` prefix selecting the i.i.d. or adaptive family, a preset
/// name, and for the adaptive family an `-md`/`-pr`/`-cs` rule suffix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MethodSpec {
    pub method: Method,
    pub preset: PresetName,
}

impl MethodSpec {
    pub fn as_string(&self) -> String {
        let p = self.preset.as_str();
        match self.method {
            Method::Ntesp | Method::TespStream => format!("n{p}"),
            Method::AtespMd => format!("a{p}-md"),
            Method::AtespPr => format!("a{p}-pr"),
            Method::AtespCs => format!("a{p}-cs"),
        }
    }
}

pub fn parse_method_spec(s: &str) -> Result<MethodSpec> {
    let lower = s.to_ascii_lowercase();
    if let Some(rest) = lower.strip_prefix('a') {
        let (preset_str, method) = if let Some(p) = rest.strip_suffix("-md") {
            (p, Method::AtespMd)
        } else if let Some(p) = rest.strip_suffix("-pr") {
            (p, Method::AtespPr)
        } else if let Some(p) = rest.strip_suffix("-cs") {
            (p, Method::AtespCs)
        } else {
            return Err(Error::InvalidArgument(format!(
                "adaptive method '{s}' needs an -md, -pr or -cs suffix"
            )));
        };
        return Ok(MethodSpec {
            method,
            preset: preset_str.parse()?,
        });
    }
    let preset_str = lower.strip_prefix('n').filter(|p| p.parse::<PresetName>().is_ok());
    let preset: PresetName = match preset_str {
        Some(p) => p.parse()?,
        None => lower.parse()?,
    };
    Ok(MethodSpec {
        method: Method::Ntesp,
        preset,
    })
}

#[derive(Clone, Debug)]
pub enum ProblemKind {
    Random,
    Deblur(DeblurSpec),
}

/// Channel-mixing deblur setup: a banded Gaussian Toeplitz blur on each
/// side, a 3x3 circulant channel mixing matrix, and symmetric zero padding
/// that makes the blur operators rectangular (`m = r + 2*pad`,
/// `n = s + 2*pad`).
#[derive(Clone, Debug)]
pub struct DeblurSpec {
    pub image: Option<std::path::PathBuf>,
    /// Synthetic image size used when no file is given.
    pub height: usize,
    pub width: usize,
    pub sigma: f64,
    pub bandwidth: usize,
    /// Row-circulant channel mixing matrix with unit row sums.
    pub h_mix: [[f64; 3]; 3],
    pub pad: usize,
}

impl Default for DeblurSpec {
    fn default() -> Self {
        Self {
            image: None,
            height: 32,
            width: 24,
            sigma: 7.0,
            bandwidth: 3,
            h_mix: [[0.3, 0.4, 0.3], [0.3, 0.3, 0.4], [0.4, 0.3, 0.3]],
            pad: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentSpec {
    pub dims: (usize, usize, usize, usize, usize),
    pub methods: Vec<MethodSpec>,
    pub trials: usize,
    pub seed: u64,
    pub problem: ProblemKind,
    pub tol: f64,
    pub max_iters: u64,
    pub max_seconds: f64,
    pub theta: f64,
    /// When false, all timing fields are zeroed so reruns are byte-identical.
    pub record_timing: bool,
}

impl ExperimentSpec {
    pub fn new(dims: (usize, usize, usize, usize, usize), methods: Vec<MethodSpec>) -> Self {
        Self {
            dims,
            methods,
            trials: 10,
            seed: 0,
            problem: ProblemKind::Random,
            tol: 1e-4,
            max_iters: 1_000_000,
            max_seconds: 600.0,
            theta: 0.5,
            record_timing: true,
        }
    }
}

/// Restoration quality; identical arrays are reported as the string
/// `"exact"` instead of an infinite dB value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Psnr {
    Exact,
    Db(f64),
}

impl Serialize for Psnr {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Psnr::Exact => s.serialize_str("exact"),
            Psnr::Db(v) => s.serialize_f64(*v),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ResultRow {
    pub method: String,
    pub dims: (usize, usize, usize, usize, usize),
    pub trials: usize,
    pub mean_iters: f64,
    pub median_iters: f64,
    pub mean_cpu_s: f64,
    pub mean_final_rrn: f64,
    pub converged: usize,
    pub time_capped: usize,
    pub psnr: Option<Psnr>,
}

impl Serialize for ResultRow {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut row = s.serialize_struct("ResultRow", 12)?;
        row.serialize_field("method", &self.method)?;
        row.serialize_field("m", &self.dims.0)?;
        row.serialize_field("r", &self.dims.1)?;
        row.serialize_field("s", &self.dims.2)?;
        row.serialize_field("n", &self.dims.3)?;
        row.serialize_field("l", &self.dims.4)?;
        row.serialize_field("trials", &self.trials)?;
        row.serialize_field("mean_iters", &self.mean_iters)?;
        row.serialize_field("median_iters", &self.median_iters)?;
        row.serialize_field("mean_cpu_s", &self.mean_cpu_s)?;
        row.serialize_field("mean_final_rrn", &self.mean_final_rrn)?;
        row.serialize_field("converged", &self.converged)?;
        row.serialize_field("time_capped", &self.time_capped)?;
        row.serialize_field("psnr", &self.psnr)?;
        row.end()
    }
}

/// A consistent random equation with standard-normal `A`, `B`, `X*`.
pub fn gen_random_equation(
    m: usize,
    r: usize,
    s: usize,
    n: usize,
    l: usize,
    seed: u64,
) -> Result<Problem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = TubalMatrix::from_fn(m, r, l, |_, _, _| standard_normal(&mut rng));
    let b = TubalMatrix::from_fn(s, n, l, |_, _, _| standard_normal(&mut rng));
    let x = TubalMatrix::from_fn(r, s, l, |_, _, _| standard_normal(&mut rng));
    Problem::with_solution(a, b, x)
}

/// Three-channel test image in `[0, 1]`: a diagonal gradient with channel-
/// offset stripes, enough structure to make blurring visibly lossy.
pub fn synthetic_image(height: usize, width: usize) -> Vec<RMat> {
    (0..3)
        .map(|c| {
            RMat::from_fn(height, width, |i, j| {
                let grad = (i + j) as f64 / (height + width) as f64;
                let stripe = if (i / 4 + c) % 3 == 0 { 0.8 } else { 0.2 };
                (0.5 * grad + 0.5 * stripe).clamp(0.0, 1.0)
            })
        })
        .collect()
}

/// Load a PNG as three `[0, 1]` channel matrices (grayscale is replicated).
pub fn load_image(path: &Path) -> Result<Vec<RMat>> {
    let img = image::open(path)
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    Ok((0..3)
        .map(|c| {
            RMat::from_fn(h as usize, w as usize, |i, j| {
                img.get_pixel(j as u32, i as u32).0[c] as f64 / 255.0
            })
        })
        .collect())
}

fn gaussian_band(d: i64, sigma: f64, bw: usize) -> f64 {
    if d.unsigned_abs() as usize > bw {
        return 0.0;
    }
    let x = d as f64;
    (-x * x / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
}

fn check_mix(h: &[[f64; 3]; 3]) -> Result<()> {
    for row in h {
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidArgument(format!(
                "channel mixing rows must sum to 1, got {sum}"
            )));
        }
    }
    for i in 0..3 {
        for j in 0..3 {
            if (h[i][j] - h[(i + 1) % 3][(j + 1) % 3]).abs() > 1e-10 {
                return Err(Error::InvalidArgument(
                    "channel mixing matrix must be circulant".into(),
                ));
            }
        }
    }
    Ok(())
}

/// Build the three-channel blurring equation for an `r x s` image: banded
/// Gaussian Toeplitz blurs on both sides, the circulant channel mix carried
/// by the tube dimension. The known solution is the clean image.
pub fn build_deblur_problem(
    channels: &[RMat],
    sigma: f64,
    bandwidth: usize,
    h_mix: &[[f64; 3]; 3],
    pad: usize,
) -> Result<Problem> {
    if channels.len() != 3 {
        return Err(Error::InvalidArgument("expected exactly 3 channels".into()));
    }
    if sigma <= 0.0 {
        return Err(Error::InvalidArgument("sigma must be positive".into()));
    }
    check_mix(h_mix)?;
    let (r, s) = channels[0].shape();
    for c in channels {
        if c.shape() != (r, s) {
            return Err(Error::ShapeMismatch("channel shapes differ".into()));
        }
    }
    let (m, n) = (r + 2 * pad, s + 2 * pad);
    let a_blur = RMat::from_fn(m, r, |i, j| {
        gaussian_band(i as i64 - j as i64 - pad as i64, sigma, bandwidth)
    });
    let b_blur = RMat::from_fn(n, s, |i, j| {
        gaussian_band(i as i64 - j as i64 - pad as i64, sigma, bandwidth)
    });
    // tube k of A carries the k-th channel weight from the circulant's
    // first column; the right blur only acts in the first tube
    let h_col = [h_mix[0][0], h_mix[1][0], h_mix[2][0]];
    let a = TubalMatrix::new((0..3).map(|k| a_blur.scale(h_col[k])).collect())?;
    let mut b_slices = vec![RMat::zeros(s, n); 3];
    b_slices[0] = b_blur.transpose();
    let b = TubalMatrix::new(b_slices)?;
    let x_star = TubalMatrix::new(channels.to_vec())?;
    Problem::with_solution(a, b, x_star)
}

/// `10 log10(peak^2 / MSE)`, or the exact sentinel for identical inputs.
pub fn psnr(restored: &TubalMatrix, reference: &TubalMatrix, peak: f64) -> Result<Psnr> {
    if peak <= 0.0 {
        return Err(Error::InvalidArgument("peak must be positive".into()));
    }
    let diff = restored.sub(reference)?;
    let count = (reference.rows() * reference.cols() * reference.tubes()) as f64;
    let mse = diff.fnorm().powi(2) / count;
    if mse == 0.0 {
        return Ok(Psnr::Exact);
    }
    Ok(Psnr::Db(10.0 * (peak * peak / mse).log10()))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for one (method, trial) cell, derived from the master seed.
pub fn trial_seed(master: u64, method_index: usize, trial: usize) -> u64 {
    splitmix64(master ^ ((method_index as u64) << 40) ^ ((trial as u64) << 8) ^ 1)
}

#[derive(Clone, Debug)]
pub struct TrialTrace {
    pub method: String,
    pub trial: usize,
    pub trace: RunTrace,
}

/// Run the full method-by-trial grid and aggregate.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<(Vec<ResultRow>, Vec<TrialTrace>)> {
    if spec.trials == 0 {
        return Err(Error::InvalidArgument("need at least one trial".into()));
    }
    let (m, r, s, n, l) = spec.dims;
    let reference: Option<(Problem, TubalMatrix)> = match &spec.problem {
        ProblemKind::Random => None,
        ProblemKind::Deblur(d) => {
            let channels = match &d.image {
                Some(path) => load_image(path)?,
                None => synthetic_image(d.height, d.width),
            };
            let p = build_deblur_problem(&channels, d.sigma, d.bandwidth, &d.h_mix, d.pad)?;
            let x_star = p.x_star.clone().expect("built with solution");
            Some((p, x_star))
        }
    };

    let mut rows = Vec::with_capacity(spec.methods.len());
    let mut traces = Vec::new();
    for (mi, ms) in spec.methods.iter().enumerate() {
        let mut iters: Vec<f64> = Vec::with_capacity(spec.trials);
        let mut cpu = 0.0;
        let mut rrn_sum = 0.0;
        let mut converged = 0usize;
        let mut time_capped = 0usize;
        let mut psnr_vals: Vec<Psnr> = Vec::new();
        for trial in 0..spec.trials {
            let seed = trial_seed(spec.seed, mi, trial);
            let problem = match &reference {
                Some((p, _)) => p.clone(),
                None => gen_random_equation(m, r, s, n, l, seed)?,
            };
            let mut cfg = SolverConfig::new(ms.method, Sketching::Preset(ms.preset));
            cfg.seed = splitmix64(seed);
            cfg.tol = spec.tol;
            cfg.max_iters = spec.max_iters;
            cfg.max_seconds = spec.max_seconds;
            cfg.theta = spec.theta;
            let (x, mut trace) = solve(&problem, &cfg)?;
            if !spec.record_timing {
                for rec in &mut trace.records {
                    rec.elapsed_s = 0.0;
                }
            }
            iters.push(trace.iterations() as f64);
            cpu += trace.records.last().map(|rec| rec.elapsed_s).unwrap_or(0.0);
            rrn_sum += trace.final_rrn();
            match trace.status {
                TerminalStatus::Converged => converged += 1,
                TerminalStatus::TimeLimit => time_capped += 1,
                TerminalStatus::MaxIters => {}
            }
            if let Some((_, x_star)) = &reference {
                psnr_vals.push(psnr(&x, x_star, 1.0)?);
            }
            traces.push(TrialTrace {
                method: ms.as_string(),
                trial,
                trace,
            });
        }
        iters.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = if spec.trials % 2 == 1 {
            iters[spec.trials / 2]
        } else {
            0.5 * (iters[spec.trials / 2 - 1] + iters[spec.trials / 2])
        };
        let psnr_row = if psnr_vals.is_empty() {
            None
        } else if psnr_vals.iter().all(|p| *p == Psnr::Exact) {
            Some(Psnr::Exact)
        } else {
            let (sum, cnt) = psnr_vals
                .iter()
                .filter_map(|p| match p {
                    Psnr::Db(v) => Some(*v),
                    Psnr::Exact => None,
                })
                .fold((0.0, 0usize), |(a, c), v| (a + v, c + 1));
            Some(Psnr::Db(sum / cnt as f64))
        };
        rows.push(ResultRow {
            method: ms.as_string(),
            dims: spec.dims,
            trials: spec.trials,
            mean_iters: iters.iter().sum::<f64>() / spec.trials as f64,
            median_iters: median,
            mean_cpu_s: cpu / spec.trials as f64,
            mean_final_rrn: rrn_sum / spec.trials as f64,
            converged,
            time_capped,
            psnr: psnr_row,
        });
    }
    Ok((rows, traces))
}

/// One JSON object per line.
pub fn write_results_jsonl<W: Write>(out: &mut W, rows: &[ResultRow]) -> Result<()> {
    for row in rows {
        serde_json::to_writer(&mut *out, row)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_trace_csv<W: Write>(out: &mut W, trace: &RunTrace) -> Result<()> {
    out.write_all(b"iter,rrn,err_fmn,i,j,elapsed_s\n")?;
    for rec in &trace.records {
        let err = rec
            .err_fmn
            .map(|e| format!("{e:.17e}"))
            .unwrap_or_default();
        let (i, j) = rec
            .chosen
            .map(|(i, j)| (i.to_string(), j.to_string()))
            .unwrap_or_default();
        writeln!(
            out,
            "{},{:.17e},{},{},{},{:.6}",
            rec.iter, rec.rrn, err, i, j, rec.elapsed_s
        )?;
    }
    Ok(())
}
