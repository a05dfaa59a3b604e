//! Convergence-factor computation for finite sketch sets, plus the
//! brute-force block-circulant oracle used to cross-check solver steps.
//!
//! Everything here trades speed for transparency: expectations are exact
//! finite sums, eigenproblems are dense, and the per-step oracle works on
//! fully expanded circulant matrices. Inputs are budget-checked accordingly.

use crate::error::Error;
use crate::linalg::{self, CMat, RMat};
use crate::sketch::{PresetName, SketchOperator, SketchSet};
use crate::solver::{Problem, RunTrace};
use crate::tensor::{SpectralTubal, TransposeMode, TubalMatrix, WeightPair};
use crate::Result;

/// Budget for the explicit `r*s*l`-dimensional eigenproblems.
const SPECTRUM_BUDGET: usize = 2000;
/// Tolerance and cap for the minimax iteration behind `delta_inf_sq`.
const MINIMAX_TOL: f64 = 1e-6;
const MINIMAX_CAP: usize = 500;

/// Convergence factors of one finite sketching configuration.
#[derive(Clone, Debug)]
pub struct ConvergenceReport {
    /// Smallest eigenvalue of the expected block-circulant projector.
    pub delta_p_sq: f64,
    /// Worst-direction counterpart; approximate (minimax iteration, upper
    /// bound within `MINIMAX_TOL` when `delta_inf_converged`).
    pub delta_inf_sq: f64,
    pub delta_inf_converged: bool,
    pub theta: f64,
    /// Expected factor of the i.i.d. rule: `1 - delta_p_sq`.
    pub rho: f64,
    /// Greedy-rule factor: `1 - delta_inf_sq`.
    pub rho_md: f64,
    /// Capped-sampling factor: the theta-convex mix of the two.
    pub rho_cs: f64,
    /// `(lambda_min(E[Z_(k)]), lambda_min(E[W_(k)]))` for every Fourier slice.
    pub per_slice_lambdas: Vec<(f64, f64)>,
}

impl ConvergenceReport {
    /// The per-slice product route: `min_k lambda_min(E[Z]) lambda_min(E[W])`.
    pub fn per_slice_delta_p_sq(&self) -> f64 {
        self.per_slice_lambdas
            .iter()
            .map(|&(z, w)| z * w)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Block-circulant expansion without the oracle cap of
/// [`TubalMatrix::bcirc`]; the callers here enforce their own budgets on the
/// eigenproblem dimension instead.
fn bcirc_expand(t: &TubalMatrix) -> RMat {
    let (m, n, l) = (t.rows(), t.cols(), t.tubes());
    let mut out = RMat::zeros(m * l, n * l);
    for p in 0..l {
        for q in 0..l {
            let k = (p + l - q) % l;
            out.view_mut((p * m, q * n), (m, n)).copy_from(t.frontal(k));
        }
    }
    out
}

fn tubal_from_full_spectrum(slices: Vec<CMat>) -> TubalMatrix {
    let mut s = SpectralTubal::from_slices(slices, true).expect("nonempty spectrum");
    s.enforce_conjugate_symmetry();
    s.idft()
}

/// Per-slice projectors `Z_i(k)` for a left sketch set: with
/// `G = S^H A M^{-1} A^H S` and `C C^H = G^+`, the projector is `P P^H` for
/// `P = M^{-1/2} A^H S C`.
fn left_projectors(
    set: &SketchSet,
    a_hat: &SpectralTubal,
    w: &WeightPair,
    l: usize,
) -> Vec<Vec<CMat>> {
    set.ops()
        .iter()
        .map(|op| {
            let s_hat = op.tensor.dft();
            (0..l)
                .map(|k| {
                    let ahs = a_hat.slice(k).adjoint() * s_hat.slice(k);
                    let g = ahs.adjoint() * &w.m_inv()[k] * &ahs;
                    let c = linalg::psd_pinv_factor(&g);
                    let p = &w.m_inv_sqrt()[k] * &ahs * &c;
                    &p * p.adjoint()
                })
                .collect()
        })
        .collect()
}

/// Per-slice projectors `W_j(k)` for a right sketch set: `Q Q^H` with
/// `Q = N^{-1/2} B V D` and `D D^H = (V^H B^H N^{-1} B V)^+`.
fn right_projectors(
    set: &SketchSet,
    b_hat: &SpectralTubal,
    w: &WeightPair,
    l: usize,
) -> Vec<Vec<CMat>> {
    set.ops()
        .iter()
        .map(|op| {
            let v_hat = op.tensor.dft();
            (0..l)
                .map(|k| {
                    let bv = b_hat.slice(k) * v_hat.slice(k);
                    let g = bv.adjoint() * &w.n_inv()[k] * &bv;
                    let d = linalg::psd_pinv_factor(&g);
                    let q = &w.n_inv_sqrt()[k] * &bv * &d;
                    &q * q.adjoint()
                })
                .collect()
        })
        .collect()
}

/// Exact convergence factors of a finite sketching configuration.
///
/// `delta_p_sq` comes from the smallest eigenvalue of the explicitly
/// assembled expected block-circulant projector; `per_slice_lambdas` carries
/// the independent per-slice route so callers can cross-check the two.
/// `delta_inf_sq` is estimated by an alternating minimax iteration over the
/// range-restricted directions: every evaluated direction yields a feasible
/// upper bound, so the reported value always dominates `delta_p_sq`.
pub fn expected_projector_spectrum(
    problem: &Problem,
    left: &SketchSet,
    right: &SketchSet,
    w: &WeightPair,
    theta: f64,
) -> Result<ConvergenceReport> {
    let (m, r, s, n, l) = problem.dims();
    if r * s * l > SPECTRUM_BUDGET {
        return Err(Error::OracleBudget(format!(
            "expected projector spectrum needs an {0}x{0} eigenproblem (limit {1})",
            r * s * l,
            SPECTRUM_BUDGET
        )));
    }
    if left.op(0).rows() != m || right.op(0).rows() != n {
        return Err(Error::ShapeMismatch("sketch sets do not fit the problem".into()));
    }
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::InvalidArgument("theta must lie in [0, 1]".into()));
    }

    let a_hat = problem.a.dft();
    let b_hat = problem.b.dft();
    let z = left_projectors(left, &a_hat, w, l);
    let wp = right_projectors(right, &b_hat, w, l);

    let ez: Vec<CMat> = (0..l)
        .map(|k| {
            let mut acc = CMat::zeros(r, r);
            for (i, zi) in z.iter().enumerate() {
                acc += zi[k].scale(left.probs()[i]);
            }
            acc
        })
        .collect();
    let ew: Vec<CMat> = (0..l)
        .map(|k| {
            let mut acc = CMat::zeros(s, s);
            for (j, wj) in wp.iter().enumerate() {
                acc += wj[k].scale(right.probs()[j]);
            }
            acc
        })
        .collect();
    let per_slice_lambdas: Vec<(f64, f64)> = (0..l)
        .map(|k| {
            (
                linalg::lambda_min_hermitian(&ez[k]),
                linalg::lambda_min_hermitian(&ew[k]),
            )
        })
        .collect();

    // explicit route: real symmetric eigenproblem on the assembled circulant
    let expected_kron: Vec<CMat> = (0..l).map(|k| ew[k].kronecker(&ez[k])).collect();
    let expected_bcirc = bcirc_expand(&tubal_from_full_spectrum(expected_kron));
    let delta_p_sq = linalg::lambda_min_symmetric(&expected_bcirc);

    let (delta_inf_sq, delta_inf_converged) =
        minimax_delta_inf(problem, left, right, w, &z, &wp, delta_p_sq);

    let rho = (1.0 - delta_p_sq).clamp(0.0, 1.0);
    let rho_md = (1.0 - delta_inf_sq).clamp(0.0, 1.0);
    let rho_cs = (1.0 - theta * delta_inf_sq - (1.0 - theta) * delta_p_sq).clamp(0.0, 1.0);
    Ok(ConvergenceReport {
        delta_p_sq,
        delta_inf_sq,
        delta_inf_converged,
        theta,
        rho,
        rho_md,
        rho_cs,
        per_slice_lambdas,
    })
}

/// Worst-direction factor: minimize over range-restricted unit directions
/// the largest Rayleigh quotient of the pair projectors. Alternates a
/// smallest-eigenvector step on the current mixture with an exponentiated
/// gradient step on the mixture weights, tracking the best feasible upper
/// bound and the best dual lower bound.
fn minimax_delta_inf(
    problem: &Problem,
    left: &SketchSet,
    right: &SketchSet,
    w: &WeightPair,
    z: &[Vec<CMat>],
    wp: &[Vec<CMat>],
    floor: f64,
) -> (f64, bool) {
    let (_, r, s, _, l) = problem.dims();
    let (qs, qv) = (left.len(), right.len());

    // orthonormal basis of the reachable error directions
    let m_inv_sqrt = tubal_from_full_spectrum(w.m_inv_sqrt().to_vec());
    let n_inv_sqrt = tubal_from_full_spectrum(w.n_inv_sqrt().to_vec());
    let left_reach = m_inv_sqrt
        .tprod(&problem.a.t_transpose(TransposeMode::T))
        .expect("shape-checked");
    let right_reach = n_inv_sqrt
        .t_transpose(TransposeMode::St)
        .tprod(&problem.b.t_transpose(TransposeMode::R))
        .expect("shape-checked");
    let reach = bcirc_expand(&right_reach.t_kron(&left_reach).expect("equal depth"));
    let (reach_rows, reach_cols) = reach.shape();
    // orthonormal column basis from the outer Gram's nonzero eigenspace
    let gram = &reach * reach.transpose();
    let eig = (&gram + gram.transpose()).scale(0.5).symmetric_eigen();
    let lmax = eig.eigenvalues.max().max(0.0);
    let cutoff = reach_rows.max(reach_cols) as f64 * f64::EPSILON * lmax;
    let kept: Vec<usize> = (0..eig.eigenvalues.len())
        .filter(|&p| eig.eigenvalues[p] > cutoff)
        .collect();
    if kept.is_empty() {
        return (1.0, true);
    }
    let mut q = RMat::zeros(reach_rows, kept.len());
    for (c, &p) in kept.iter().enumerate() {
        q.column_mut(c).copy_from(&eig.eigenvectors.column(p));
    }

    let mut mu = vec![1.0 / (qs * qv) as f64; qs * qv];
    let mut upper = f64::INFINITY;
    let mut lower = f64::NEG_INFINITY;
    let mut converged = false;
    let mut gains = vec![0.0_f64; qs * qv];
    for t in 0..MINIMAX_CAP {
        // mixture projector, assembled back in circulant space
        let mix: Vec<CMat> = (0..l)
            .map(|k| {
                let mut acc = CMat::zeros(r * s, r * s);
                for i in 0..qs {
                    for j in 0..qv {
                        let c = mu[i * qv + j];
                        if c > 0.0 {
                            acc += wp[j][k].transpose().kronecker(&z[i][k]).scale(c);
                        }
                    }
                }
                acc
            })
            .collect();
        let hb = bcirc_expand(&tubal_from_full_spectrum(mix));
        let hq = q.transpose() * &hb * &q;
        let eig = ((&hq + hq.transpose()).scale(0.5)).symmetric_eigen();
        let mut argmin = 0;
        for p in 0..eig.eigenvalues.len() {
            if eig.eigenvalues[p] < eig.eigenvalues[argmin] {
                argmin = p;
            }
        }
        lower = lower.max(eig.eigenvalues[argmin]);
        let y = &q * eig.eigenvectors.column(argmin);

        // gains per pair along the candidate direction, read off the spectrum
        let y_tubal = TubalMatrix::fold(&RMat::from_column_slice(r * s * l, 1, y.as_slice()), r * s, 1, l)
            .expect("fold of eigvec");
        let y_hat = y_tubal.dft();
        let y_mats: Vec<CMat> = (0..l)
            .map(|k| {
                CMat::from_fn(r, s, |i, j| y_hat.slice(k)[(j * r + i, 0)])
            })
            .collect();
        let mut max_gain = 0.0_f64;
        for i in 0..qs {
            for k in 0..l {
                let zy = &z[i][k] * &y_mats[k];
                let cross = y_mats[k].adjoint() * zy;
                for j in 0..qv {
                    let g = (&cross * &wp[j][k])
                        .diagonal()
                        .iter()
                        .map(|c| c.re)
                        .sum::<f64>()
                        / l as f64;
                    if k == 0 {
                        gains[i * qv + j] = g;
                    } else {
                        gains[i * qv + j] += g;
                    }
                }
            }
        }
        for &g in gains.iter() {
            max_gain = max_gain.max(g);
        }
        upper = upper.min(max_gain);
        if upper - lower <= MINIMAX_TOL {
            converged = true;
            break;
        }
        // exponentiated gradient ascent on the mixture weights
        let eta = 2.0 / ((t + 1) as f64).sqrt();
        let peak = gains.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (m_ij, &g) in mu.iter_mut().zip(gains.iter()) {
            *m_ij *= (eta * (g - peak)).exp();
            total += *m_ij;
        }
        for m_ij in mu.iter_mut() {
            *m_ij /= total;
        }
    }
    // any evaluated direction is feasible, so the bound stays above the
    // expected-projector floor and below one up to eigensolver round-off
    (upper.clamp(floor.max(0.0), 1.0), converged)
}

/// Closed-form factor of a named preset, evaluated slice by slice.
pub fn special_case_rho(name: PresetName, a: &TubalMatrix, b: &TubalMatrix) -> Result<f64> {
    if a.tubes() != b.tubes() {
        return Err(Error::ShapeMismatch("A and B must share tube length".into()));
    }
    let l = a.tubes();
    let a_hat = a.dft();
    let b_hat = b.dft();
    let a_sq = a.fnorm().powi(2);
    let b_sq = b.fnorm().powi(2);
    // lambda^+_min of the slice Gram, over the squared norm of the tensor
    let left_factor = |k: usize, outer: bool| -> f64 {
        let s = a_hat.slice(k);
        let g = if outer { s * s.adjoint() } else { s.adjoint() * s };
        linalg::lambda_min_plus(&g).unwrap_or(0.0) / a_sq
    };
    let right_factor = |k: usize, outer: bool| -> f64 {
        let s = b_hat.slice(k);
        let g = if outer { s * s.adjoint() } else { s.adjoint() * s };
        linalg::lambda_min_plus(&g).unwrap_or(0.0) / b_sq
    };
    // (left Gram orientation, right Gram orientation); None = side not sampled
    let (lf, rf): (Option<bool>, Option<bool>) = match name {
        PresetName::TerkBoth => (Some(true), Some(false)),
        PresetName::TerkLeft => (Some(true), None),
        PresetName::TerkRight => (None, Some(false)),
        PresetName::TercdBoth => (Some(false), Some(true)),
        PresetName::TercdLeft => (Some(false), None),
        PresetName::TercdRight => (None, Some(true)),
        PresetName::TerkRcd => (Some(true), Some(true)),
        PresetName::TercdRk => (Some(false), Some(false)),
    };
    let mut worst = f64::INFINITY;
    for k in 0..l {
        let mut f = 1.0;
        if let Some(outer) = lf {
            f *= left_factor(k, outer);
        }
        if let Some(outer) = rf {
            f *= right_factor(k, outer);
        }
        worst = worst.min(f);
    }
    Ok((1.0 - worst).clamp(0.0, 1.0))
}

/// One sketch-and-project step carried out entirely on expanded circulant
/// matrices, then folded back. Slow reference path; budget-limited through
/// [`TubalMatrix::bcirc`].
pub fn oracle_step(
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
    let ab = problem.a.bcirc()?;
    let bb = problem.b.bcirc()?;
    let cb = problem.c.bcirc()?;
    let xb = x.bcirc()?;
    let sb = s_op.tensor.bcirc()?;
    let vb = v_op.tensor.bcirc()?;
    let m_inv = linalg::pinv_r(&w.m().bcirc()?);
    let n_inv = linalg::pinv_r(&w.n().bcirc()?);

    let sam = sb.transpose() * &ab * &m_inv * ab.transpose() * &sb;
    let e = &sb * linalg::pinv_r(&sam) * sb.transpose();
    let vbn = vb.transpose() * bb.transpose() * &n_inv * &bb * &vb;
    let g = &vb * linalg::pinv_r(&vbn) * vb.transpose();
    let resid = &ab * &xb * &bb - &cb;
    let next = &xb - &m_inv * ab.transpose() * e * resid * g * bb.transpose() * &n_inv;

    // first block column of the updated circulant is the unfolding
    TubalMatrix::fold(&next.columns(0, s).into_owned(), r, s, l)
}

/// Empirical per-step contraction of the mean squared error across traces:
/// the least-squares slope of `ln(mean err^2)` over the pre-convergence
/// window, exponentiated.
pub fn empirical_rate(traces: &[RunTrace]) -> Result<f64> {
    if traces.is_empty() {
        return Err(Error::InsufficientData("no traces".into()));
    }
    let horizon = traces
        .iter()
        .map(|t| t.records.len())
        .min()
        .unwrap_or(0);
    if horizon == 0 {
        return Err(Error::InsufficientData("empty trace".into()));
    }
    let mut mean_sq = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let mut acc = 0.0;
        for trace in traces {
            let e = trace.records[t].err_fmn.ok_or_else(|| {
                Error::InsufficientData("trace does not carry solution errors".into())
            })?;
            acc += e * e;
        }
        mean_sq.push(acc / traces.len() as f64);
    }
    if mean_sq[0] <= 0.0 {
        return Ok(0.0);
    }
    // keep the window where the error is still meaningfully above round-off
    let floor = 1e-20 * mean_sq[0];
    let usable = mean_sq.iter().take_while(|&&v| v > floor).count();
    if usable <= 1 {
        return Ok(0.0);
    }
    if usable < 10 {
        return Err(Error::InsufficientData(format!(
            "only {usable} pre-convergence points (need 10)"
        )));
    }
    let n = usable as f64;
    let mut st = 0.0;
    let mut sy = 0.0;
    let mut stt = 0.0;
    let mut sty = 0.0;
    for (t, &v) in mean_sq.iter().take(usable).enumerate() {
        let x = t as f64;
        let y = v.ln();
        st += x;
        sy += y;
        stt += x * x;
        sty += x * y;
    }
    let slope = (n * sty - st * sy) / (n * stt - st * st);
    Ok(slope.exp())
}

/// Per-iteration proportional-rule factor `1 - (1 + q^2 Var[p]) delta^2`
/// evaluated on one recorded loss table. `delta_uu_sq` is the uniform-base
/// expected-projector value; the variance is taken over the uniform
/// distribution on the index pairs.
pub fn pr_step_factor(losses: &[f64], delta_uu_sq: f64) -> Result<f64> {
    if losses.is_empty() {
        return Err(Error::InvalidArgument("empty loss table".into()));
    }
    let q = losses.len() as f64;
    let total: f64 = losses.iter().sum();
    let var = if total > 0.0 {
        let mean = 1.0 / q;
        losses
            .iter()
            .map(|&f| {
                let p = f / total;
                (p - mean) * (p - mean)
            })
            .sum::<f64>()
            / q
    } else {
        0.0
    };
    Ok(1.0 - (1.0 + q * q * var) * delta_uu_sq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sketch::{build_preset, gaussian_sketch, standard_normal};
    use crate::solver::{tesp_step, TraceRecord};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_tubal(m: usize, n: usize, l: usize, seed: u64) -> TubalMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        TubalMatrix::from_fn(m, n, l, |_, _, _| standard_normal(&mut rng))
    }

    fn selector_set(dim: usize, l: usize) -> SketchSet {
        let ops = (0..dim)
            .map(|i| SketchOperator::selector(dim, i, l))
            .collect();
        SketchSet::new(ops, vec![1.0 / dim as f64; dim]).unwrap()
    }

    #[test]
    fn full_identity_sketches_give_unit_deltas() {
        let a = random_tubal(4, 4, 2, 1);
        let b = random_tubal(4, 4, 2, 2);
        let x = random_tubal(4, 4, 2, 3);
        let p = Problem::with_solution(a, b, x).unwrap();
        let l = 2;
        let left = SketchSet::single(SketchOperator::dense(TubalMatrix::identity(4, l)));
        let right = SketchSet::single(SketchOperator::dense(TubalMatrix::identity(4, l)));
        let w = WeightPair::identity(4, 4, l);
        let rep = expected_projector_spectrum(&p, &left, &right, &w, 0.5).unwrap();
        assert!((rep.delta_p_sq - 1.0).abs() < 1e-10, "{}", rep.delta_p_sq);
        assert!((rep.delta_inf_sq - 1.0).abs() < 1e-6);
        assert!(rep.rho < 1e-10);
    }

    #[test]
    fn flat_case_matches_matrix_expected_projector() {
        // l = 1 row/column selectors: E[Z] and E[W] have textbook matrix forms
        let a = random_tubal(4, 3, 1, 5);
        let b = random_tubal(3, 4, 1, 6);
        let x = random_tubal(3, 3, 1, 7);
        let p = Problem::with_solution(a.clone(), b.clone(), x).unwrap();
        let pre = build_preset(PresetName::TerkBoth, &a, &b).unwrap();
        let rep =
            expected_projector_spectrum(&p, &pre.left, &pre.right, &pre.weights, 0.5).unwrap();

        let am = a.frontal(0);
        let bm = b.frontal(0);
        let mut ezw = RMat::zeros(3, 3);
        for i in 0..4 {
            let row = am.row(i).transpose();
            let pi = row.norm_squared() / am.norm_squared();
            ezw += (&row * row.transpose()).scale(pi / row.norm_squared());
        }
        let mut eww = RMat::zeros(3, 3);
        for j in 0..4 {
            let col = bm.column(j).into_owned();
            let pj = col.norm_squared() / bm.norm_squared();
            eww += (&col * col.transpose()).scale(pj / col.norm_squared());
        }
        let kron = eww.kronecker(&ezw);
        let oracle = linalg::lambda_min_symmetric(&kron);
        assert!(
            (rep.delta_p_sq - oracle).abs() < 1e-10,
            "{} vs {}",
            rep.delta_p_sq,
            oracle
        );
    }

    #[test]
    fn factor_chain_on_random_finite_sets() {
        for seed in 0..4u64 {
            let a = random_tubal(5, 3, 2, 40 + seed);
            let b = random_tubal(3, 5, 2, 50 + seed);
            let x = random_tubal(3, 3, 2, 60 + seed);
            let p = Problem::with_solution(a, b, x).unwrap();
            let left = selector_set(5, 2);
            let right = selector_set(5, 2);
            let w = WeightPair::identity(3, 3, 2);
            let rep = expected_projector_spectrum(&p, &left, &right, &w, 0.5).unwrap();
            assert!(rep.delta_p_sq > 0.0, "seed {seed}: {}", rep.delta_p_sq);
            assert!(
                rep.delta_inf_sq >= rep.delta_p_sq - 1e-9,
                "seed {seed}: {} vs {}",
                rep.delta_inf_sq,
                rep.delta_p_sq
            );
            assert!(rep.delta_inf_sq <= 1.0 + 1e-9);
            assert!(rep.rho_md <= rep.rho + 1e-9);
            assert!(rep.rho_cs <= rep.rho + 1e-9 && rep.rho_cs >= rep.rho_md - 1e-9);
            // dual-route equality
            assert!(
                (rep.delta_p_sq - rep.per_slice_delta_p_sq()).abs() < 1e-8,
                "seed {seed}"
            );
        }
    }

    #[test]
    fn special_rho_identity_operands() {
        let r = 5;
        for l in [1usize, 3] {
            let a = TubalMatrix::identity(r, l);
            let b = TubalMatrix::identity(r, l);
            let rho = special_case_rho(PresetName::TerkLeft, &a, &b).unwrap();
            assert!((rho - (1.0 - 1.0 / r as f64)).abs() < 1e-12, "l={l}: {rho}");
        }
    }

    #[test]
    fn special_rho_both_composes_factors() {
        let a = random_tubal(5, 3, 1, 70);
        let b = random_tubal(3, 5, 1, 71);
        let both = special_case_rho(PresetName::TerkBoth, &a, &b).unwrap();
        let lf = special_case_rho(PresetName::TerkLeft, &a, &b).unwrap();
        let rf = special_case_rho(PresetName::TerkRight, &a, &b).unwrap();
        let composed = 1.0 - (1.0 - lf) * (1.0 - rf);
        assert!((both - composed).abs() < 1e-10, "{both} vs {composed}");
    }

    #[test]
    fn oracle_step_fixed_point_and_two_path() {
        let a = random_tubal(3, 2, 3, 80);
        let b = random_tubal(2, 3, 3, 81);
        let xs = random_tubal(2, 2, 3, 82);
        let p = Problem::with_solution(a, b, xs.clone()).unwrap();
        let w = WeightPair::identity(2, 2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(83);
        let s_op = gaussian_sketch(3, 2, 3, &mut rng).unwrap();
        let v_op = gaussian_sketch(3, 2, 3, &mut rng).unwrap();

        // the solution is a fixed point
        let stay = oracle_step(&xs, &p, &s_op, &v_op, &w).unwrap();
        assert!(stay.sub(&xs).unwrap().fnorm() < 1e-9);

        // matches the spectral-domain step
        let x0 = random_tubal(2, 2, 3, 84);
        let via_bcirc = oracle_step(&x0, &p, &s_op, &v_op, &w).unwrap();
        let via_spec = tesp_step(&x0, &p, &s_op, &v_op, &w).unwrap();
        assert!(via_bcirc.sub(&via_spec).unwrap().fnorm() < 1e-9);
    }

    fn trace_from_errors(errors: &[f64]) -> RunTrace {
        RunTrace {
            records: errors
                .iter()
                .enumerate()
                .map(|(t, &e)| TraceRecord {
                    iter: t as u64,
                    rrn: e,
                    err_fmn: Some(e),
                    chosen: None,
                    elapsed_s: 0.0,
                })
                .collect(),
            status: crate::solver::TerminalStatus::MaxIters,
            baseline_residual: 1.0,
        }
    }

    #[test]
    fn empirical_rate_recovers_geometric_decay() {
        let errors: Vec<f64> = (0..40).map(|t| 0.9_f64.powi(t).sqrt()).collect();
        let rate = empirical_rate(&[trace_from_errors(&errors)]).unwrap();
        assert!((rate - 0.9).abs() < 1e-6, "{rate}");
    }

    #[test]
    fn empirical_rate_degenerate_inputs() {
        // one-step convergence: single usable point, reported as zero
        let rate = empirical_rate(&[trace_from_errors(&[1.0, 0.0, 0.0])]).unwrap();
        assert_eq!(rate, 0.0);
        // short but nonzero window: not enough data
        let errs: Vec<f64> = (0..5).map(|t| 0.5_f64.powi(t)).collect();
        assert!(matches!(
            empirical_rate(&[trace_from_errors(&errs)]),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn pr_factor_dominated_by_uniform_factor() {
        let delta = 0.3;
        let uniform = pr_step_factor(&[1.0, 1.0, 1.0, 1.0], delta).unwrap();
        assert!((uniform - (1.0 - delta)).abs() < 1e-12);
        let skewed = pr_step_factor(&[4.0, 0.0, 2.0, 2.0], delta).unwrap();
        assert!(skewed <= uniform + 1e-12, "{skewed} vs {uniform}");
    }

    #[test]
    fn budget_refused() {
        // r * s * l = 3000 exceeds the eigenproblem budget
        let a = random_tubal(4, 10, 30, 93);
        let b = random_tubal(10, 4, 30, 94);
        let x = random_tubal(10, 10, 30, 95);
        let p = Problem::with_solution(a, b, x).unwrap();
        let left = selector_set(4, 30);
        let right = selector_set(4, 30);
        let w = WeightPair::identity(10, 10, 30);
        assert!(matches!(
            expected_projector_spectrum(&p, &left, &right, &w, 0.5),
            Err(Error::OracleBudget(_))
        ));
    }
}
