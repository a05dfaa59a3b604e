//! Sketch-and-project iterations for `A * X * B = C`.
//!
//! All iterations run in the Fourier domain on the independent half of the
//! spectrum; the remaining slices are conjugate mirrors and are only
//! materialized when the iterate is converted back to a real tensor.

use crate::error::Error;
use crate::linalg::{self, CMat};
use crate::sketch::{
    build_preset, gaussian_sketch, sample_discrete_with, sampling_sketch, PresetName, SketchKind,
    SketchOperator, SketchSet,
};
use crate::tensor::{half_count, SpectralTubal, TubalMatrix, WeightPair};
use crate::Result;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::time::Instant;

const ONE: Complex64 = Complex64::new(1.0, 0.0);
const NEG_ONE: Complex64 = Complex64::new(-1.0, 0.0);

/// A consistent tensor equation `A * X * B = C`.
#[derive(Clone, Debug)]
pub struct Problem {
    pub a: TubalMatrix,
    pub b: TubalMatrix,
    pub c: TubalMatrix,
    /// Known solution, when the problem was manufactured from one.
    pub x_star: Option<TubalMatrix>,
}

impl Problem {
    pub fn new(a: TubalMatrix, b: TubalMatrix, c: TubalMatrix) -> Result<Self> {
        if a.tubes() != b.tubes() || a.tubes() != c.tubes() {
            return Err(Error::ShapeMismatch("tube lengths differ".into()));
        }
        if c.rows() != a.rows() || c.cols() != b.cols() {
            return Err(Error::ShapeMismatch(format!(
                "C must be {}x{}x{}, got {}x{}x{}",
                a.rows(),
                b.cols(),
                a.tubes(),
                c.rows(),
                c.cols(),
                c.tubes()
            )));
        }
        Ok(Self {
            a,
            b,
            c,
            x_star: None,
        })
    }

    /// Manufacture a consistent problem with known solution `x_star`.
    pub fn with_solution(a: TubalMatrix, b: TubalMatrix, x_star: TubalMatrix) -> Result<Self> {
        if x_star.rows() != a.cols() || x_star.cols() != b.rows() {
            return Err(Error::ShapeMismatch("x_star does not fit between A and B".into()));
        }
        let c = a.tprod(&x_star)?.tprod(&b)?;
        Ok(Self {
            a,
            b,
            c,
            x_star: Some(x_star),
        })
    }

    /// `(m, r, s, n, l)` for `A: m x r`, `X: r x s`, `B: s x n`.
    pub fn dims(&self) -> (usize, usize, usize, usize, usize) {
        (
            self.a.rows(),
            self.a.cols(),
            self.b.rows(),
            self.b.cols(),
            self.a.tubes(),
        )
    }
}

/// Index-selection rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    /// Fresh sketch each iteration (or i.i.d. draws from a finite set).
    TespStream,
    /// I.i.d. draws from the finite sketch sets.
    Ntesp,
    /// Maximum distance: greedy largest sketched loss.
    AtespMd,
    /// Proportional: sample with probability proportional to the losses.
    AtespPr,
    /// Capped sampling: restrict to losses above a convex threshold.
    AtespCs,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::TespStream => "tesp-stream",
            Method::Ntesp => "ntesp",
            Method::AtespMd => "atesp-md",
            Method::AtespPr => "atesp-pr",
            Method::AtespCs => "atesp-cs",
        }
    }

    pub fn is_adaptive(&self) -> bool {
        matches!(self, Method::AtespMd | Method::AtespPr | Method::AtespCs)
    }
}

/// Generator for streaming (non-finite) sketches; operators live in the
/// first frontal slice only.
#[derive(Clone, Debug)]
pub enum StreamSketch {
    Gaussian { width: usize },
    Sampling { width: usize, probs: Option<Vec<f64>> },
}

/// Where the sketch operators come from.
#[derive(Clone)]
pub enum Sketching {
    Preset(PresetName),
    Explicit {
        left: SketchSet,
        right: SketchSet,
        weights: WeightPair,
    },
    Stream {
        left: StreamSketch,
        right: StreamSketch,
        weights: WeightPair,
    },
}

#[derive(Clone)]
pub struct SolverConfig {
    pub method: Method,
    pub sketching: Sketching,
    /// Capped-sampling mixing parameter.
    pub theta: f64,
    /// Stop when the relative residual norm drops below this.
    pub tol: f64,
    pub max_iters: u64,
    pub max_seconds: f64,
    pub seed: u64,
    /// Draw an independent index pair per Fourier slice (stream/NTESP only).
    pub per_slice_sketch: bool,
    /// Recompute maintained residuals from the iterate every this many steps.
    pub refresh_period: u64,
    pub x0: Option<TubalMatrix>,
}

impl SolverConfig {
    pub fn new(method: Method, sketching: Sketching) -> Self {
        Self {
            method,
            sketching,
            theta: 0.5,
            tol: 1e-4,
            max_iters: 1_000_000,
            max_seconds: 600.0,
            seed: 0,
            per_slice_sketch: false,
            refresh_period: 1000,
            x0: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TerminalStatus {
    Converged,
    MaxIters,
    TimeLimit,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: u64,
    /// Relative residual norm at this iterate.
    pub rrn: f64,
    /// `||X^t - X*||_{F(M,N)}` when the solution is known.
    pub err_fmn: Option<f64>,
    /// Index pair used to reach this iterate (absent for the start record
    /// and for per-slice sampling).
    pub chosen: Option<(usize, usize)>,
    pub elapsed_s: f64,
}

#[derive(Clone, Debug)]
pub struct RunTrace {
    pub records: Vec<TraceRecord>,
    pub status: TerminalStatus,
    pub baseline_residual: f64,
}

impl RunTrace {
    /// Number of update steps taken.
    pub fn iterations(&self) -> u64 {
        self.records.len().saturating_sub(1) as u64
    }

    pub fn final_rrn(&self) -> f64 {
        self.records.last().map(|r| r.rrn).unwrap_or(f64::NAN)
    }
}

/// What a single iteration did.
#[derive(Clone, Copy, Debug)]
pub struct StepInfo {
    pub chosen: Option<(usize, usize)>,
    /// Sketched loss of the chosen pair, when a loss table was formed.
    pub loss: Option<f64>,
}

/// Per-operator Fourier-domain factors.
///
/// For a left operator `S` with Gram `G = S^H A M^{-1} A^H S` and factor
/// `C C^H = G^+`:
///   `fac = C^H S^H`, `apply = M^{-1} A^H S C`, `resid_dir = A * apply`.
/// For a right operator `V` with `G = V^H B^H N^{-1} B V`, `D D^H = G^+`:
///   `fac = V D`, `apply = D^H V^H B^H N^{-1}`, `resid_dir = apply * B`.
#[derive(Clone, Debug)]
struct OpData {
    apply: Vec<CMat>,
    resid_dir: Vec<CMat>,
    fac: Vec<CMat>,
}

fn build_left_op(spec: &[CMat], a_hat: &[CMat], m_inv: &[CMat], h: usize) -> OpData {
    let mut apply = Vec::with_capacity(h);
    let mut resid_dir = Vec::with_capacity(h);
    let mut fac = Vec::with_capacity(h);
    for k in 0..h {
        let s = &spec[k];
        let ahs = a_hat[k].adjoint() * s;
        let p = &m_inv[k] * &ahs;
        let g = ahs.adjoint() * &p;
        let c = linalg::psd_pinv_factor(&g);
        let ap = &p * &c;
        resid_dir.push(&a_hat[k] * &ap);
        fac.push((s * &c).adjoint());
        apply.push(ap);
    }
    OpData {
        apply,
        resid_dir,
        fac,
    }
}

fn build_right_op(spec: &[CMat], b_hat: &[CMat], n_inv: &[CMat], h: usize) -> OpData {
    let mut apply = Vec::with_capacity(h);
    let mut resid_dir = Vec::with_capacity(h);
    let mut fac = Vec::with_capacity(h);
    for k in 0..h {
        let v = &spec[k];
        let bv = &b_hat[k] * v;
        let q = &n_inv[k] * &bv;
        let g = bv.adjoint() * &q;
        let d = linalg::psd_pinv_factor(&g);
        let ap = (&q * &d).adjoint();
        resid_dir.push(&ap * &b_hat[k]);
        fac.push(v * &d);
        apply.push(ap);
    }
    OpData {
        apply,
        resid_dir,
        fac,
    }
}

fn spectral_slices(t: &TubalMatrix, h: usize) -> Vec<CMat> {
    let s = t.dft();
    (0..h).map(|k| s.slice(k).clone()).collect()
}

/// One prepared side of the sketching.
struct Side {
    q: usize,
    widths: Vec<usize>,
    offsets: Vec<usize>,
    probs: Vec<f64>,
    ops: Vec<OpData>,
    /// Per slice: stacked `fac` blocks. Left: `(sum tau) x m`; right:
    /// `n x (sum zeta)`.
    stacked: Vec<CMat>,
    /// When every operator is a width-1 identity selector: its index plus
    /// the scalar `fac` value per slice.
    sel: Option<Vec<(usize, Vec<Complex64>)>>,
}

impl Side {
    fn build(
        set: &SketchSet,
        outer: &[CMat],
        inv: &[CMat],
        h: usize,
        is_left: bool,
        outer_dim: usize,
    ) -> Side {
        let q = set.len();
        let mut widths = Vec::with_capacity(q);
        let mut offsets = Vec::with_capacity(q);
        let mut ops = Vec::with_capacity(q);
        let mut total = 0usize;
        for op in set.ops() {
            offsets.push(total);
            widths.push(op.width());
            total += op.width();
            let spec = spectral_slices(&op.tensor, h);
            ops.push(if is_left {
                build_left_op(&spec, outer, inv, h)
            } else {
                build_right_op(&spec, outer, inv, h)
            });
        }
        let mut stacked = Vec::with_capacity(h);
        for k in 0..h {
            let mut big = if is_left {
                CMat::zeros(total, outer_dim)
            } else {
                CMat::zeros(outer_dim, total)
            };
            for i in 0..q {
                if is_left {
                    big.view_mut((offsets[i], 0), (widths[i], outer_dim))
                        .copy_from(&ops[i].fac[k]);
                } else {
                    big.view_mut((0, offsets[i]), (outer_dim, widths[i]))
                        .copy_from(&ops[i].fac[k]);
                }
            }
            stacked.push(big);
        }
        let all_selectors = set
            .ops()
            .iter()
            .all(|op| matches!(op.kind, SketchKind::Selector { .. }) && op.width() == 1);
        let sel = if all_selectors {
            Some(
                set.ops()
                    .iter()
                    .zip(&ops)
                    .map(|(op, data)| {
                        let idx = match op.kind {
                            SketchKind::Selector { index } => index,
                            _ => unreachable!(),
                        };
                        let scalars = (0..h)
                            .map(|k| {
                                if is_left {
                                    data.fac[k][(0, idx)]
                                } else {
                                    data.fac[k][(idx, 0)]
                                }
                            })
                            .collect();
                        (idx, scalars)
                    })
                    .collect(),
            )
        } else {
            None
        };
        Side {
            q,
            widths,
            offsets,
            probs: set.probs().to_vec(),
            ops,
            stacked,
            sel,
        }
    }
}

struct StreamState {
    left: StreamSketch,
    right: StreamSketch,
}

/// Iteration state. [`solve`] drives this; tests can also step it manually.
pub struct SolverState {
    h: usize,
    l: usize,
    m: usize,
    n: usize,
    r: usize,
    s: usize,
    w: Vec<f64>,
    a_hat: Vec<CMat>,
    b_hat: Vec<CMat>,
    c_hat: Vec<CMat>,
    x_hat: Vec<CMat>,
    resid: Vec<CMat>,
    xs_hat: Option<Vec<CMat>>,
    m_sqrt: Vec<CMat>,
    n_sqrt: Vec<CMat>,
    m_inv: Vec<CMat>,
    n_inv: Vec<CMat>,
    sides: Option<(Side, Side)>,
    stream: Option<StreamState>,
    method: Method,
    theta: f64,
    tol: f64,
    max_iters: u64,
    max_seconds: f64,
    per_slice: bool,
    refresh_period: u64,
    rng: ChaCha8Rng,
    iter: u64,
    baseline: f64,
    start: Instant,
    losses: Vec<f64>,
    joint_base: Vec<f64>,
    t_buf: Vec<CMat>,
    u_buf: Vec<CMat>,
}

impl SolverState {
    pub fn new(problem: &Problem, config: &SolverConfig) -> Result<Self> {
        let (m, r, s, n, l) = problem.dims();
        let h = half_count(l);
        let w: Vec<f64> = (0..h)
            .map(|k| {
                if k == 0 || (l % 2 == 0 && k == l / 2) {
                    1.0
                } else {
                    2.0
                }
            })
            .collect();

        let (left_set, right_set, weights) = match &config.sketching {
            Sketching::Preset(name) => {
                let p = build_preset(*name, &problem.a, &problem.b)?;
                (Some(p.left), Some(p.right), p.weights)
            }
            Sketching::Explicit {
                left,
                right,
                weights,
            } => (Some(left.clone()), Some(right.clone()), weights.clone()),
            Sketching::Stream { weights, .. } => (None, None, weights.clone()),
        };
        if weights.m().rows() != r || weights.n().rows() != s || weights.m().tubes() != l {
            return Err(Error::ShapeMismatch("weight pair does not fit the problem".into()));
        }
        if let Some(set) = &left_set {
            if set.op(0).rows() != m || set.op(0).tensor.tubes() != l {
                return Err(Error::ShapeMismatch("left sketches must be m x tau x l".into()));
            }
        }
        if let Some(set) = &right_set {
            if set.op(0).rows() != n || set.op(0).tensor.tubes() != l {
                return Err(Error::ShapeMismatch("right sketches must be n x zeta x l".into()));
            }
        }
        let stream = match &config.sketching {
            Sketching::Stream { left, right, .. } => {
                if config.method != Method::TespStream {
                    return Err(Error::InvalidArgument(
                        "streaming sketches require the tesp-stream method".into(),
                    ));
                }
                Some(StreamState {
                    left: left.clone(),
                    right: right.clone(),
                })
            }
            _ => None,
        };
        if config.method.is_adaptive() && left_set.is_none() {
            return Err(Error::InvalidArgument(
                "adaptive methods need finite sketch sets".into(),
            ));
        }
        if !(config.theta >= 0.0 && config.theta <= 1.0) {
            return Err(Error::InvalidArgument("theta must lie in [0, 1]".into()));
        }

        let a_hat = spectral_slices(&problem.a, h);
        let b_hat = spectral_slices(&problem.b, h);
        let c_hat = spectral_slices(&problem.c, h);
        let m_inv: Vec<CMat> = weights.m_inv()[..h].to_vec();
        let n_inv: Vec<CMat> = weights.n_inv()[..h].to_vec();
        let m_sqrt: Vec<CMat> = weights.m_sqrt()[..h].to_vec();
        let n_sqrt: Vec<CMat> = weights.n_sqrt()[..h].to_vec();

        let x0 = match &config.x0 {
            Some(x) => {
                if x.rows() != r || x.cols() != s || x.tubes() != l {
                    return Err(Error::ShapeMismatch("x0 has wrong shape".into()));
                }
                x.clone()
            }
            None => TubalMatrix::zeros(r, s, l),
        };
        let x_hat = spectral_slices(&x0, h);
        let xs_hat = problem.x_star.as_ref().map(|xs| spectral_slices(xs, h));

        let sides = match (left_set, right_set) {
            (Some(ls), Some(rs)) => {
                let left = Side::build(&ls, &a_hat, &m_inv, h, true, m);
                let right = Side::build(&rs, &b_hat, &n_inv, h, false, n);
                Some((left, right))
            }
            _ => None,
        };
        let (joint_base, losses, t_buf, u_buf) = match &sides {
            Some((left, right)) => {
                let mut jb = Vec::with_capacity(left.q * right.q);
                for i in 0..left.q {
                    for j in 0..right.q {
                        jb.push(left.probs[i] * right.probs[j]);
                    }
                }
                let lt: usize = left.widths.iter().sum();
                let rt: usize = right.widths.iter().sum();
                let t_buf = (0..h).map(|_| CMat::zeros(lt, n)).collect();
                let u_buf = (0..h).map(|_| CMat::zeros(lt, rt)).collect();
                (jb, vec![0.0; left.q * right.q], t_buf, u_buf)
            }
            None => (Vec::new(), Vec::new(), Vec::new(), Vec::new()),
        };

        let mut state = Self {
            h,
            l,
            m,
            n,
            r,
            s,
            w,
            a_hat,
            b_hat,
            c_hat,
            x_hat,
            resid: Vec::new(),
            xs_hat,
            m_sqrt,
            n_sqrt,
            m_inv,
            n_inv,
            sides,
            stream,
            method: config.method,
            theta: config.theta,
            tol: config.tol,
            max_iters: config.max_iters,
            max_seconds: config.max_seconds,
            per_slice: config.per_slice_sketch,
            refresh_period: config.refresh_period,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            iter: 0,
            baseline: 0.0,
            start: Instant::now(),
            losses,
            joint_base,
            t_buf,
            u_buf,
        };
        state.refresh_residual();
        state.baseline = state.residual_norm();
        Ok(state)
    }

    fn refresh_residual(&mut self) {
        self.resid = (0..self.h)
            .map(|k| &self.a_hat[k] * &self.x_hat[k] * &self.b_hat[k] - &self.c_hat[k])
            .collect();
    }

    pub fn residual_norm(&self) -> f64 {
        let acc: f64 = (0..self.h)
            .map(|k| self.w[k] * self.resid[k].norm_squared())
            .sum();
        (acc / self.l as f64).sqrt()
    }

    /// Relative residual norm of the current iterate.
    pub fn rrn(&self) -> f64 {
        if self.baseline == 0.0 {
            0.0
        } else {
            self.residual_norm() / self.baseline
        }
    }

    pub fn baseline(&self) -> f64 {
        self.baseline
    }

    pub fn iterations(&self) -> u64 {
        self.iter
    }

    /// `||X^t - X*||_{F(M,N)}` when the solution is known.
    pub fn err_fmn(&self) -> Option<f64> {
        let xs = self.xs_hat.as_ref()?;
        let acc: f64 = (0..self.h)
            .map(|k| {
                let d = &self.x_hat[k] - &xs[k];
                self.w[k] * (&self.m_sqrt[k] * d * &self.n_sqrt[k]).norm_squared()
            })
            .sum();
        Some((acc / self.l as f64).sqrt())
    }

    /// Reconstruct the real iterate.
    pub fn current_x(&self) -> TubalMatrix {
        let mut slices = vec![CMat::zeros(self.r, self.s); self.l];
        for k in 0..self.h {
            slices[k] = self.x_hat[k].clone();
        }
        let mut spec = SpectralTubal::from_slices(slices, true).unwrap();
        spec.enforce_conjugate_symmetry();
        spec.idft()
    }

    /// Sketched losses `f_{i,j}` at the current iterate, row-major in `i`.
    pub fn loss_table(&mut self) -> Result<Vec<f64>> {
        if self.sides.is_none() {
            return Err(Error::InvalidArgument("no finite sketch sets prepared".into()));
        }
        self.compute_losses();
        Ok(self.losses.clone())
    }

    fn compute_losses(&mut self) {
        let (left, right) = self.sides.as_ref().expect("finite sides");
        let qv = right.q;
        self.losses.iter_mut().for_each(|x| *x = 0.0);
        if let (Some(sl), Some(sr)) = (&left.sel, &right.sel) {
            for k in 0..self.h {
                let wk = self.w[k] / self.l as f64;
                for (i, (ri, lsc)) in sl.iter().enumerate() {
                    let a = lsc[k];
                    for (j, (cj, rsc)) in sr.iter().enumerate() {
                        let v = (a * self.resid[k][(*ri, *cj)]) * rsc[k];
                        self.losses[i * qv + j] += wk * v.norm_sqr();
                    }
                }
            }
        } else {
            for k in 0..self.h {
                left.stacked[k].mul_to(&self.resid[k], &mut self.t_buf[k]);
                self.t_buf[k].mul_to(&right.stacked[k], &mut self.u_buf[k]);
                let wk = self.w[k] / self.l as f64;
                for i in 0..left.q {
                    for j in 0..right.q {
                        let blk = self.u_buf[k].view(
                            (left.offsets[i], right.offsets[j]),
                            (left.widths[i], right.widths[j]),
                        );
                        self.losses[i * qv + j] += wk * blk.norm_squared();
                    }
                }
            }
        }
    }

    fn loss_floor(&self) -> f64 {
        1e-28 * self.baseline * self.baseline
    }

    /// Choose `(i, j)` according to the configured adaptive rule. Assumes
    /// `compute_losses` already ran.
    fn select_pair(&mut self) -> (usize, usize, f64) {
        let (left, right) = self.sides.as_ref().expect("finite sides");
        let (qs, qv) = (left.q, right.q);
        let max_f = self.losses.iter().cloned().fold(0.0_f64, f64::max);
        if max_f <= self.loss_floor() {
            // sketched system solved at this iterate; probe uniformly
            // (deterministic smallest pair for the greedy rule)
            return match self.method {
                Method::AtespMd => (0, 0, self.losses[0]),
                _ => {
                    let u: f64 = self.rng.random();
                    let idx = (u * (qs * qv) as f64).floor() as usize;
                    let idx = idx.min(qs * qv - 1);
                    (idx / qv, idx % qv, self.losses[idx])
                }
            };
        }
        match self.method {
            Method::AtespMd => {
                let mut best = 0usize;
                for (p, &f) in self.losses.iter().enumerate() {
                    if f > self.losses[best] {
                        best = p;
                    }
                }
                (best / qv, best % qv, self.losses[best])
            }
            Method::AtespPr => {
                let total: f64 = self.losses.iter().sum();
                let u: f64 = self.rng.random();
                let mut acc = 0.0;
                let mut pick = self.losses.len() - 1;
                for (p, &f) in self.losses.iter().enumerate() {
                    if f <= 0.0 {
                        continue;
                    }
                    acc += f / total;
                    pick = p;
                    if u < acc {
                        break;
                    }
                }
                (pick / qv, pick % qv, self.losses[pick])
            }
            Method::AtespCs => {
                let mean: f64 = self
                    .losses
                    .iter()
                    .zip(&self.joint_base)
                    .map(|(&f, &p)| p * f)
                    .sum();
                let thr = self.theta * max_f + (1.0 - self.theta) * mean;
                let eps = 1e-12 * max_f;
                let total: f64 = self
                    .losses
                    .iter()
                    .filter(|&&f| f >= thr - eps)
                    .sum();
                let u: f64 = self.rng.random();
                let mut acc = 0.0;
                let mut pick = self.losses.len() - 1;
                for (p, &f) in self.losses.iter().enumerate() {
                    if f < thr - eps {
                        continue;
                    }
                    acc += f / total;
                    pick = p;
                    if u < acc {
                        break;
                    }
                }
                (pick / qv, pick % qv, self.losses[pick])
            }
            _ => unreachable!("select_pair is only called for adaptive rules"),
        }
    }

    fn apply_pair(&mut self, i: usize, j: usize) {
        let (left, right) = self.sides.as_ref().expect("finite sides");
        for k in 0..self.h {
            Self::update_slice(
                k,
                &left.ops[i],
                &right.ops[j],
                &mut self.x_hat[k],
                &mut self.resid[k],
            );
        }
    }

    fn update_slice(k: usize, li: &OpData, rj: &OpData, x: &mut CMat, resid: &mut CMat) {
        let middle = &li.fac[k] * &*resid * &rj.fac[k];
        let lx = &li.apply[k] * &middle;
        x.gemm(NEG_ONE, &lx, &rj.apply[k], ONE);
        let lr = &li.resid_dir[k] * &middle;
        resid.gemm(NEG_ONE, &lr, &rj.resid_dir[k], ONE);
    }

    fn step_stream(&mut self) -> StepInfo {
        let stream = self.stream.as_ref().expect("stream state");
        let (ls, rs) = (stream.left.clone(), stream.right.clone());
        let slices: Vec<usize> = if self.per_slice {
            (0..self.h).collect()
        } else {
            vec![usize::MAX] // sentinel: one draw for every slice
        };
        for target in slices {
            let s_op = Self::draw_stream(&ls, self.m, self.l, &mut self.rng);
            let v_op = Self::draw_stream(&rs, self.n, self.l, &mut self.rng);
            let sspec = spectral_slices(&s_op.tensor, self.h);
            let vspec = spectral_slices(&v_op.tensor, self.h);
            let li = build_left_op(&sspec, &self.a_hat, &self.m_inv, self.h);
            let rj = build_right_op(&vspec, &self.b_hat, &self.n_inv, self.h);
            if target == usize::MAX {
                for k in 0..self.h {
                    Self::update_slice(k, &li, &rj, &mut self.x_hat[k], &mut self.resid[k]);
                }
            } else {
                Self::update_slice(target, &li, &rj, &mut self.x_hat[target], &mut self.resid[target]);
            }
        }
        StepInfo {
            chosen: None,
            loss: None,
        }
    }

    fn draw_stream(
        spec: &StreamSketch,
        rows: usize,
        tubes: usize,
        rng: &mut ChaCha8Rng,
    ) -> SketchOperator {
        match spec {
            StreamSketch::Gaussian { width } => {
                gaussian_sketch(rows, *width, tubes, rng).expect("validated at construction")
            }
            StreamSketch::Sampling { width, probs } => {
                sampling_sketch(rows, *width, tubes, probs.as_deref(), rng)
                    .expect("validated at construction")
            }
        }
    }

    /// Perform one iteration: pick an index pair (or fresh sketch), update
    /// the iterate and the maintained residual.
    pub fn step(&mut self) -> StepInfo {
        let info = if self.stream.is_some() {
            self.step_stream()
        } else if self.method.is_adaptive() {
            self.compute_losses();
            let (i, j, f) = self.select_pair();
            self.apply_pair(i, j);
            StepInfo {
                chosen: Some((i, j)),
                loss: Some(f),
            }
        } else {
            // NTESP, or TESP-stream over a finite set: i.i.d. base draws
            if self.per_slice {
                for k in 0..self.h {
                    let ul: f64 = self.rng.random();
                    let ur: f64 = self.rng.random();
                    let (left, right) = self.sides.as_ref().expect("finite sides");
                    let i = sample_discrete_with(ul, &left.probs);
                    let j = sample_discrete_with(ur, &right.probs);
                    Self::update_slice(
                        k,
                        &left.ops[i],
                        &right.ops[j],
                        &mut self.x_hat[k],
                        &mut self.resid[k],
                    );
                }
                StepInfo {
                    chosen: None,
                    loss: None,
                }
            } else {
                let ul: f64 = self.rng.random();
                let ur: f64 = self.rng.random();
                let (left, right) = self.sides.as_ref().expect("finite sides");
                let (i, j) = (
                    sample_discrete_with(ul, &left.probs),
                    sample_discrete_with(ur, &right.probs),
                );
                self.apply_pair(i, j);
                StepInfo {
                    chosen: Some((i, j)),
                    loss: None,
                }
            }
        };
        self.iter += 1;
        if self.refresh_period > 0 && self.iter % self.refresh_period == 0 {
            self.refresh_residual();
        }
        info
    }

    /// Drive to termination, recording one trace row per iterate.
    pub fn run(mut self) -> (TubalMatrix, RunTrace) {
        let mut records = Vec::new();
        let push = |records: &mut Vec<TraceRecord>,
                    iter: u64,
                    rrn: f64,
                    err: Option<f64>,
                    chosen: Option<(usize, usize)>,
                    start: &Instant| {
            records.push(TraceRecord {
                iter,
                rrn,
                err_fmn: err,
                chosen: None,
                elapsed_s: start.elapsed().as_secs_f64(),
            });
            if let Some(c) = chosen {
                records.last_mut().unwrap().chosen = Some(c);
            }
        };
        let mut rrn = self.rrn();
        push(&mut records, 0, rrn, self.err_fmn(), None, &self.start);
        let status = loop {
            if rrn < self.tol {
                break TerminalStatus::Converged;
            }
            if self.iter >= self.max_iters {
                break TerminalStatus::MaxIters;
            }
            if self.start.elapsed().as_secs_f64() > self.max_seconds {
                break TerminalStatus::TimeLimit;
            }
            let info = self.step();
            rrn = self.rrn();
            push(
                &mut records,
                self.iter,
                rrn,
                self.err_fmn(),
                info.chosen,
                &self.start,
            );
        };
        let baseline = self.baseline;
        (
            self.current_x(),
            RunTrace {
                records,
                status,
                baseline_residual: baseline,
            },
        )
    }
}

/// Solve the equation with the configured method.
pub fn solve(problem: &Problem, config: &SolverConfig) -> Result<(TubalMatrix, RunTrace)> {
    Ok(SolverState::new(problem, config)?.run())
}

/// Relative residual norm of an arbitrary iterate.
pub fn rrn(problem: &Problem, x: &TubalMatrix, x0: Option<&TubalMatrix>) -> Result<f64> {
    let res = |y: &TubalMatrix| -> Result<f64> {
        Ok(problem
            .a
            .tprod(y)?
            .tprod(&problem.b)?
            .sub(&problem.c)?
            .fnorm())
    };
    let num = res(x)?;
    let den = match x0 {
        Some(y) => res(y)?,
        None => problem.c.fnorm(),
    };
    if den == 0.0 {
        return Ok(if num == 0.0 { 0.0 } else { f64::INFINITY });
    }
    Ok(num / den)
}

/// One projection step straight from the update definition, with explicit
/// pseudoinverses in the Fourier domain. Reference path for a single
/// `(S, V)` pair; the iterative solvers use cached factors instead.
pub fn tesp_step(
    x: &TubalMatrix,
    problem: &Problem,
    s_op: &SketchOperator,
    v_op: &SketchOperator,
    w: &WeightPair,
) -> Result<TubalMatrix> {
    let (m, r, s, n, l) = problem.dims();
    if x.rows() != r || x.cols() != s || x.tubes() != l {
        return Err(Error::ShapeMismatch("x has wrong shape".into()));
    }
    if s_op.rows() != m || v_op.rows() != n {
        return Err(Error::ShapeMismatch("sketch operators do not fit the problem".into()));
    }
    let h = half_count(l);
    let a_hat = spectral_slices(&problem.a, h);
    let b_hat = spectral_slices(&problem.b, h);
    let c_hat = spectral_slices(&problem.c, h);
    let x_hat = spectral_slices(x, h);
    let s_hat = spectral_slices(&s_op.tensor, h);
    let v_hat = spectral_slices(&v_op.tensor, h);
    let mut out = vec![CMat::zeros(r, s); l];
    for k in 0..h {
        let minv = &w.m_inv()[k];
        let ninv = &w.n_inv()[k];
        let resid = &a_hat[k] * &x_hat[k] * &b_hat[k] - &c_hat[k];
        let sam = s_hat[k].adjoint() * &a_hat[k] * minv * a_hat[k].adjoint() * &s_hat[k];
        let e = &s_hat[k] * linalg::pinv_c(&sam) * s_hat[k].adjoint();
        let vbn = v_hat[k].adjoint() * b_hat[k].adjoint() * ninv * &b_hat[k] * &v_hat[k];
        let g = &v_hat[k] * linalg::pinv_c(&vbn) * v_hat[k].adjoint();
        let delta = minv * a_hat[k].adjoint() * e * resid * g * b_hat[k].adjoint() * ninv;
        out[k] = &x_hat[k] - delta;
    }
    let mut spec = SpectralTubal::from_slices(out, true)?;
    spec.enforce_conjugate_symmetry();
    Ok(spec.idft())
}

/// Fast proportional-rule solver: keeps the whole table of sketched
/// residuals `R_{i,j}` and updates it by the two-sided Gram recursion
/// instead of re-sketching the residual each iteration.
pub struct FastPrState {
    base: SolverState,
    /// Per slice: cross Grams of the left factors, `(sum tau)^2`.
    gram_l: Vec<CMat>,
    /// Per slice: cross Grams of the right factors, `(sum zeta)^2`.
    gram_r: Vec<CMat>,
    /// Per slice: stacked sketched residual table.
    table: Vec<CMat>,
}

impl FastPrState {
    pub fn new(problem: &Problem, config: &SolverConfig) -> Result<Self> {
        if config.method != Method::AtespPr {
            return Err(Error::InvalidArgument(
                "the fast table recursion implements the proportional rule".into(),
            ));
        }
        let base = SolverState::new(problem, config)?;
        let (left, right) = base
            .sides
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("fast solver needs finite sketch sets".into()))?;
        let lt: usize = left.widths.iter().sum();
        let rt: usize = right.widths.iter().sum();
        let mut gram_l = Vec::with_capacity(base.h);
        let mut gram_r = Vec::with_capacity(base.h);
        for k in 0..base.h {
            let mut rd_l = CMat::zeros(base.m, lt);
            for i in 0..left.q {
                rd_l.view_mut((0, left.offsets[i]), (base.m, left.widths[i]))
                    .copy_from(&left.ops[i].resid_dir[k]);
            }
            gram_l.push(&left.stacked[k] * rd_l);
            let mut rd_r = CMat::zeros(rt, base.n);
            for j in 0..right.q {
                rd_r.view_mut((right.offsets[j], 0), (right.widths[j], base.n))
                    .copy_from(&right.ops[j].resid_dir[k]);
            }
            gram_r.push(rd_r * &right.stacked[k]);
        }
        let mut state = Self {
            base,
            gram_l,
            gram_r,
            table: Vec::new(),
        };
        state.rebuild_table();
        Ok(state)
    }

    fn rebuild_table(&mut self) {
        let (left, right) = self.base.sides.as_ref().expect("finite sides");
        self.table = (0..self.base.h)
            .map(|k| &left.stacked[k] * &self.base.resid[k] * &right.stacked[k])
            .collect();
    }

    fn losses_from_table(&mut self) {
        let (left, right) = self.base.sides.as_ref().expect("finite sides");
        let qv = right.q;
        self.base.losses.iter_mut().for_each(|x| *x = 0.0);
        for k in 0..self.base.h {
            let wk = self.base.w[k] / self.base.l as f64;
            for i in 0..left.q {
                for j in 0..qv {
                    let blk = self.table[k].view(
                        (left.offsets[i], right.offsets[j]),
                        (left.widths[i], right.widths[j]),
                    );
                    self.base.losses[i * qv + j] += wk * blk.norm_squared();
                }
            }
        }
    }

    /// Max abs deviation of the recursed table from a direct recomputation.
    pub fn table_drift(&self) -> f64 {
        let (left, right) = self.base.sides.as_ref().expect("finite sides");
        let mut worst: f64 = 0.0;
        for k in 0..self.base.h {
            let resid =
                &self.base.a_hat[k] * &self.base.x_hat[k] * &self.base.b_hat[k] - &self.base.c_hat[k];
            let direct = &left.stacked[k] * resid * &right.stacked[k];
            worst = worst.max(linalg::max_abs_c(&(&self.table[k] - direct)));
        }
        worst
    }

    pub fn state(&self) -> &SolverState {
        &self.base
    }

    pub fn step(&mut self) -> StepInfo {
        self.losses_from_table();
        let (i, j, f) = self.base.select_pair();
        // table recursion before the residual moves
        {
            let (left, right) = self.base.sides.as_ref().expect("finite sides");
            let (loff, lw) = (left.offsets[i], left.widths[i]);
            let (roff, rw) = (right.offsets[j], right.widths[j]);
            for k in 0..self.base.h {
                let mid = self.table[k].view((loff, roff), (lw, rw)).clone_owned();
                let col = self.gram_l[k].columns(loff, lw).clone_owned();
                let row = self.gram_r[k].rows(roff, rw).clone_owned();
                let cm = &col * mid;
                self.table[k].gemm(NEG_ONE, &cm, &row, ONE);
            }
        }
        self.base.apply_pair(i, j);
        self.base.iter += 1;
        if self.base.refresh_period > 0 && self.base.iter % self.base.refresh_period == 0 {
            self.base.refresh_residual();
            self.rebuild_table();
        }
        StepInfo {
            chosen: Some((i, j)),
            loss: Some(f),
        }
    }

    pub fn run(mut self) -> (TubalMatrix, RunTrace) {
        let mut records = Vec::new();
        let mut rrn = self.base.rrn();
        records.push(TraceRecord {
            iter: 0,
            rrn,
            err_fmn: self.base.err_fmn(),
            chosen: None,
            elapsed_s: self.base.start.elapsed().as_secs_f64(),
        });
        let status = loop {
            if rrn < self.base.tol {
                break TerminalStatus::Converged;
            }
            if self.base.iter >= self.base.max_iters {
                break TerminalStatus::MaxIters;
            }
            if self.base.start.elapsed().as_secs_f64() > self.base.max_seconds {
                break TerminalStatus::TimeLimit;
            }
            let info = self.step();
            rrn = self.base.rrn();
            records.push(TraceRecord {
                iter: self.base.iter,
                rrn,
                err_fmn: self.base.err_fmn(),
                chosen: info.chosen,
                elapsed_s: self.base.start.elapsed().as_secs_f64(),
            });
        };
        let baseline = self.base.baseline;
        (
            self.base.current_x(),
            RunTrace {
                records,
                status,
                baseline_residual: baseline,
            },
        )
    }
}

/// Proportional-rule solve through the table recursion.
pub fn fast_pr_solve(problem: &Problem, config: &SolverConfig) -> Result<(TubalMatrix, RunTrace)> {
    Ok(FastPrState::new(problem, config)?.run())
}
