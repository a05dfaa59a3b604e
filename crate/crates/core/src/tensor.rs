//! Third-order tensor algebra under the t-product.
//!
//! A `TubalMatrix` is an `m x n x l` real tensor viewed as an `m x n` matrix
//! of length-`l` tubes. All products go through the DFT along the tube
//! dimension: transform, multiply frontal slices, transform back. The DFT is
//! unnormalized (the `1/l` lives on the inverse), matching `bcirc`
//! block-diagonalization exactly.

use crate::error::Error;
use crate::linalg::{self, CMat, RMat};
use crate::Result;
use num_complex::Complex64;
use rustfft::FftPlanner;

/// `m x n x l` real tensor stored as `l` frontal slices.
#[derive(Clone, Debug, PartialEq)]
pub struct TubalMatrix {
    rows: usize,
    cols: usize,
    tubes: usize,
    slices: Vec<RMat>,
}

/// Fourier-domain form: `l` complex frontal slices. When `origin_real` holds,
/// slice `k` and slice `l - k` are complex conjugates, so only the first
/// `l/2 + 1` slices carry independent information.
#[derive(Clone, Debug)]
pub struct SpectralTubal {
    rows: usize,
    cols: usize,
    tubes: usize,
    slices: Vec<CMat>,
    origin_real: bool,
}

/// The three transposes of the t-product algebra.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransposeMode {
    /// t-transpose: per-slice transpose plus reversal of slices `2..l`.
    T,
    /// slice transpose only.
    St,
    /// slice reversal only.
    R,
}

impl TubalMatrix {
    pub fn new(slices: Vec<RMat>) -> Result<Self> {
        if slices.is_empty() {
            return Err(Error::InvalidArgument("need at least one slice".into()));
        }
        let (rows, cols) = slices[0].shape();
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument("empty slices".into()));
        }
        for s in &slices {
            if s.shape() != (rows, cols) {
                return Err(Error::ShapeMismatch(format!(
                    "slice shapes differ: {:?} vs {:?}",
                    s.shape(),
                    (rows, cols)
                )));
            }
        }
        Ok(Self {
            rows,
            cols,
            tubes: slices.len(),
            slices,
        })
    }

    pub fn zeros(rows: usize, cols: usize, tubes: usize) -> Self {
        Self {
            rows,
            cols,
            tubes,
            slices: vec![RMat::zeros(rows, cols); tubes],
        }
    }

    /// Identity tubal matrix: `I` in the first slice, zeros elsewhere.
    pub fn identity(n: usize, tubes: usize) -> Self {
        let mut t = Self::zeros(n, n, tubes);
        t.slices[0] = RMat::identity(n, n);
        t
    }

    pub fn from_fn<F: FnMut(usize, usize, usize) -> f64>(
        rows: usize,
        cols: usize,
        tubes: usize,
        mut f: F,
    ) -> Self {
        let slices = (0..tubes)
            .map(|k| RMat::from_fn(rows, cols, |i, j| f(i, j, k)))
            .collect();
        Self {
            rows,
            cols,
            tubes,
            slices,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }
    pub fn tubes(&self) -> usize {
        self.tubes
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.slices[k][(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        self.slices[k][(i, j)] = v;
    }

    pub fn frontal(&self, k: usize) -> &RMat {
        &self.slices[k]
    }

    pub fn frontal_mut(&mut self, k: usize) -> &mut RMat {
        &mut self.slices[k]
    }

    pub fn slices(&self) -> &[RMat] {
        &self.slices
    }

    /// Row `i` as a `1 x n x l` tubal matrix.
    pub fn horizontal_slice(&self, i: usize) -> Self {
        Self::from_fn(1, self.cols, self.tubes, |_, j, k| self.get(i, j, k))
    }

    /// Column `j` as an `m x 1 x l` tubal matrix.
    pub fn lateral_slice(&self, j: usize) -> Self {
        Self::from_fn(self.rows, 1, self.tubes, |i, _, k| self.get(i, j, k))
    }

    pub fn fnorm(&self) -> f64 {
        self.slices
            .iter()
            .map(|s| s.norm_squared())
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            tubes: self.tubes,
            slices: self.slices.iter().map(|m| m.scale(s)).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other)?;
        let slices = self
            .slices
            .iter()
            .zip(&other.slices)
            .map(|(a, b)| a + b)
            .collect();
        Self::new(slices)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other)?;
        let slices = self
            .slices
            .iter()
            .zip(&other.slices)
            .map(|(a, b)| a - b)
            .collect();
        Self::new(slices)
    }

    fn check_same_shape(&self, other: &Self) -> Result<()> {
        if (self.rows, self.cols, self.tubes) != (other.rows, other.cols, other.tubes) {
            return Err(Error::ShapeMismatch(format!(
                "{}x{}x{} vs {}x{}x{}",
                self.rows, self.cols, self.tubes, other.rows, other.cols, other.tubes
            )));
        }
        Ok(())
    }

    /// Unnormalized DFT along the tube dimension.
    pub fn dft(&self) -> SpectralTubal {
        let l = self.tubes;
        let mut slices: Vec<CMat> = (0..l).map(|_| CMat::zeros(self.rows, self.cols)).collect();
        if l == 1 {
            slices[0] = linalg::to_c(&self.slices[0]);
        } else {
            let mut planner = FftPlanner::<f64>::new();
            let fft = planner.plan_fft_forward(l);
            let mut buf = vec![Complex64::default(); l];
            for j in 0..self.cols {
                for i in 0..self.rows {
                    for k in 0..l {
                        buf[k] = Complex64::new(self.slices[k][(i, j)], 0.0);
                    }
                    fft.process(&mut buf);
                    for k in 0..l {
                        slices[k][(i, j)] = buf[k];
                    }
                }
            }
        }
        let mut out = SpectralTubal {
            rows: self.rows,
            cols: self.cols,
            tubes: l,
            slices,
            origin_real: true,
        };
        out.enforce_conjugate_symmetry();
        out
    }

    pub fn tprod(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows || self.tubes != other.tubes {
            return Err(Error::ShapeMismatch(format!(
                "tprod: {}x{}x{} * {}x{}x{}",
                self.rows, self.cols, self.tubes, other.rows, other.cols, other.tubes
            )));
        }
        let a = self.dft();
        let b = other.dft();
        let h = half_count(self.tubes);
        let mut slices = vec![CMat::zeros(self.rows, other.cols); self.tubes];
        for k in 0..h {
            slices[k] = &a.slices[k] * &b.slices[k];
        }
        let mut s = SpectralTubal {
            rows: self.rows,
            cols: other.cols,
            tubes: self.tubes,
            slices,
            origin_real: true,
        };
        s.enforce_conjugate_symmetry();
        Ok(s.idft())
    }

    pub fn t_transpose(&self, mode: TransposeMode) -> Self {
        let l = self.tubes;
        let slice_t = |k: usize| -> RMat { self.slices[k].transpose() };
        match mode {
            TransposeMode::St => Self {
                rows: self.cols,
                cols: self.rows,
                tubes: l,
                slices: (0..l).map(slice_t).collect(),
            },
            TransposeMode::R => {
                let mut slices = Vec::with_capacity(l);
                slices.push(self.slices[0].clone());
                for k in (1..l).rev() {
                    slices.push(self.slices[k].clone());
                }
                Self {
                    rows: self.rows,
                    cols: self.cols,
                    tubes: l,
                    slices,
                }
            }
            TransposeMode::T => {
                let mut slices = Vec::with_capacity(l);
                slices.push(slice_t(0));
                for k in (1..l).rev() {
                    slices.push(slice_t(k));
                }
                Self {
                    rows: self.cols,
                    cols: self.rows,
                    tubes: l,
                    slices,
                }
            }
        }
    }

    /// t-Kronecker product: tube `(i*p + s, j*q + t)` of the result is the
    /// circular convolution of tubes `A(i, j, :)` and `B(s, t, :)`.
    pub fn t_kron(&self, other: &Self) -> Result<Self> {
        if self.tubes != other.tubes {
            return Err(Error::ShapeMismatch("t_kron: tube lengths differ".into()));
        }
        let a = self.dft();
        let b = other.dft();
        let h = half_count(self.tubes);
        let rows = self.rows * other.rows;
        let cols = self.cols * other.cols;
        let mut slices = vec![CMat::zeros(rows, cols); self.tubes];
        for k in 0..h {
            slices[k] = a.slices[k].kronecker(&b.slices[k]);
        }
        let mut s = SpectralTubal {
            rows,
            cols,
            tubes: self.tubes,
            slices,
            origin_real: true,
        };
        s.enforce_conjugate_symmetry();
        Ok(s.idft())
    }

    /// Stack the lateral slices into an `mn x 1 x l` tubal vector.
    pub fn vec_t(&self) -> Self {
        Self::from_fn(self.rows * self.cols, 1, self.tubes, |p, _, k| {
            let j = p / self.rows;
            let i = p % self.rows;
            self.get(i, j, k)
        })
    }

    /// Inverse of [`vec_t`] for a known `rows x cols` shape.
    pub fn unvec_t(&self, rows: usize, cols: usize) -> Result<Self> {
        if self.cols != 1 || self.rows != rows * cols {
            return Err(Error::ShapeMismatch("unvec_t: not a matching tubal vector".into()));
        }
        Ok(Self::from_fn(rows, cols, self.tubes, |i, j, k| {
            self.get(j * rows + i, 0, k)
        }))
    }

    /// t-Moore-Penrose pseudoinverse via per-slice SVD in the Fourier domain.
    pub fn t_pinv(&self) -> Self {
        let a = self.dft();
        let h = half_count(self.tubes);
        let mut slices = vec![CMat::zeros(self.cols, self.rows); self.tubes];
        for k in 0..h {
            slices[k] = linalg::pinv_c(&a.slices[k]);
        }
        let mut s = SpectralTubal {
            rows: self.cols,
            cols: self.rows,
            tubes: self.tubes,
            slices,
            origin_real: true,
        };
        s.enforce_conjugate_symmetry();
        s.idft()
    }

    /// True iff every Fourier slice is Hermitian within `tol` and has all
    /// eigenvalues above `tol`.
    pub fn is_t_spd(&self, tol: f64) -> bool {
        if self.rows != self.cols {
            return false;
        }
        let a = self.dft();
        let h = half_count(self.tubes);
        for k in 0..h {
            let s = &a.slices[k];
            let scale = 1.0 + linalg::max_abs_c(s);
            if linalg::max_abs_c(&(s - s.adjoint())) > tol * scale {
                return false;
            }
            if linalg::lambda_min_hermitian(s) <= tol {
                return false;
            }
        }
        true
    }

    /// Hermitian square root of a t-spd tensor.
    pub fn t_sqrt(&self) -> Result<Self> {
        if !self.is_t_spd(1e-10) {
            return Err(Error::NotTSpd("t_sqrt requires a t-spd input".into()));
        }
        let a = self.dft();
        let h = half_count(self.tubes);
        let mut slices = vec![CMat::zeros(self.rows, self.cols); self.tubes];
        for k in 0..h {
            slices[k] = linalg::hermitian_power(&a.slices[k], 0.5);
        }
        let mut s = SpectralTubal {
            rows: self.rows,
            cols: self.cols,
            tubes: self.tubes,
            slices,
            origin_real: true,
        };
        s.enforce_conjugate_symmetry();
        Ok(s.idft())
    }

    /// Block-circulant expansion, refused above 4e4 entries: this is an
    /// oracle for tests and small analyses, not a compute path.
    pub fn bcirc(&self) -> Result<RMat> {
        let (m, n, l) = (self.rows, self.cols, self.tubes);
        if m * l * n * l > 40_000 {
            return Err(Error::OracleBudget(format!(
                "bcirc of {}x{}x{} has {} entries (limit 40000)",
                m,
                n,
                l,
                m * l * n * l
            )));
        }
        let mut out = RMat::zeros(m * l, n * l);
        for p in 0..l {
            for q in 0..l {
                let k = (p + l - q) % l;
                out.view_mut((p * m, q * n), (m, n)).copy_from(&self.slices[k]);
            }
        }
        Ok(out)
    }

    /// First block column of [`bcirc`]: the `ml x n` unfolding.
    pub fn unfold(&self) -> RMat {
        let (m, n, l) = (self.rows, self.cols, self.tubes);
        let mut out = RMat::zeros(m * l, n);
        for k in 0..l {
            out.view_mut((k * m, 0), (m, n)).copy_from(&self.slices[k]);
        }
        out
    }

    /// Inverse of [`unfold`].
    pub fn fold(mat: &RMat, rows: usize, cols: usize, tubes: usize) -> Result<Self> {
        if mat.nrows() != rows * tubes || mat.ncols() != cols {
            return Err(Error::ShapeMismatch("fold: dimensions do not match".into()));
        }
        let slices = (0..tubes)
            .map(|k| mat.view((k * rows, 0), (rows, cols)).into_owned())
            .collect();
        Self::new(slices)
    }
}

/// Number of independent Fourier slices for a real tensor of depth `l`.
pub fn half_count(l: usize) -> usize {
    l / 2 + 1
}

impl SpectralTubal {
    pub fn from_slices(slices: Vec<CMat>, origin_real: bool) -> Result<Self> {
        if slices.is_empty() {
            return Err(Error::InvalidArgument("need at least one slice".into()));
        }
        let (rows, cols) = slices[0].shape();
        for s in &slices {
            if s.shape() != (rows, cols) {
                return Err(Error::ShapeMismatch("spectral slice shapes differ".into()));
            }
        }
        Ok(Self {
            rows,
            cols,
            tubes: slices.len(),
            slices,
            origin_real,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }
    pub fn tubes(&self) -> usize {
        self.tubes
    }
    pub fn origin_real(&self) -> bool {
        self.origin_real
    }

    pub fn slice(&self, k: usize) -> &CMat {
        &self.slices[k]
    }

    pub fn slices(&self) -> &[CMat] {
        &self.slices
    }

    /// Overwrite slices above the half-spectrum with conjugates of their
    /// mirror images; for even `l` the middle slice is forced real.
    pub fn enforce_conjugate_symmetry(&mut self) {
        if !self.origin_real {
            return;
        }
        let l = self.tubes;
        if l % 2 == 0 && l >= 2 {
            let mid = l / 2;
            self.slices[mid].iter_mut().for_each(|z| z.im = 0.0);
        }
        let h = half_count(l);
        for k in h..l {
            self.slices[k] = self.slices[l - k].map(|z| z.conj());
        }
    }

    /// Inverse DFT along tubes; returns the real part (exact for spectra with
    /// conjugate symmetry).
    pub fn idft(&self) -> TubalMatrix {
        let l = self.tubes;
        if l == 1 {
            return TubalMatrix::new(vec![linalg::re_mat(&self.slices[0])]).unwrap();
        }
        let mut planner = FftPlanner::<f64>::new();
        let ifft = planner.plan_fft_inverse(l);
        let mut buf = vec![Complex64::default(); l];
        let mut slices = vec![RMat::zeros(self.rows, self.cols); l];
        let inv_l = 1.0 / l as f64;
        for j in 0..self.cols {
            for i in 0..self.rows {
                for k in 0..l {
                    buf[k] = self.slices[k][(i, j)];
                }
                ifft.process(&mut buf);
                for k in 0..l {
                    slices[k][(i, j)] = buf[k].re * inv_l;
                }
            }
        }
        TubalMatrix::new(slices).unwrap()
    }

    /// `(1/l) * sum_k ||slice_k||_F^2`, equal to `||idft(self)||_F^2`.
    pub fn fnorm_squared(&self) -> f64 {
        self.slices.iter().map(|s| s.norm_squared()).sum::<f64>() / self.tubes as f64
    }
}

/// A pair `(M, N)` of t-spd weight tensors with cached Fourier-domain
/// inverses and square roots, defining the norm
/// `||A||_{F(M,N)} = ||M^{1/2} * A * N^{1/2}||_F`.
#[derive(Clone, Debug)]
pub struct WeightPair {
    m: TubalMatrix,
    n: TubalMatrix,
    m_inv: Vec<CMat>,
    n_inv: Vec<CMat>,
    m_sqrt: Vec<CMat>,
    n_sqrt: Vec<CMat>,
    m_inv_sqrt: Vec<CMat>,
    n_inv_sqrt: Vec<CMat>,
    semidefinite: bool,
}

impl WeightPair {
    pub fn new(m: TubalMatrix, n: TubalMatrix) -> Result<Self> {
        Self::build(m, n, false)
    }

    /// Accepts t-positive-semidefinite weights; inverses become
    /// pseudoinverses on the ranges of the slices.
    pub fn new_semidefinite(m: TubalMatrix, n: TubalMatrix) -> Result<Self> {
        Self::build(m, n, true)
    }

    pub fn identity(r: usize, s: usize, l: usize) -> Self {
        Self::build(TubalMatrix::identity(r, l), TubalMatrix::identity(s, l), false).unwrap()
    }

    fn build(m: TubalMatrix, n: TubalMatrix, semidefinite: bool) -> Result<Self> {
        if m.rows() != m.cols() || n.rows() != n.cols() || m.tubes() != n.tubes() {
            return Err(Error::ShapeMismatch("weights must be square with equal depth".into()));
        }
        let (m_inv, m_sqrt, m_inv_sqrt) = Self::caches(&m, semidefinite, "M")?;
        let (n_inv, n_sqrt, n_inv_sqrt) = Self::caches(&n, semidefinite, "N")?;
        Ok(Self {
            m,
            n,
            m_inv,
            n_inv,
            m_sqrt,
            n_sqrt,
            m_inv_sqrt,
            n_inv_sqrt,
            semidefinite,
        })
    }

    fn caches(
        t: &TubalMatrix,
        semidefinite: bool,
        which: &'static str,
    ) -> Result<(Vec<CMat>, Vec<CMat>, Vec<CMat>)> {
        let spec = t.dft();
        let l = t.tubes();
        let h = half_count(l);
        let dim = t.rows();
        let mut inv = vec![CMat::zeros(dim, dim); l];
        let mut sqrt = vec![CMat::zeros(dim, dim); l];
        let mut inv_sqrt = vec![CMat::zeros(dim, dim); l];
        for k in 0..h {
            let s = spec.slice(k);
            let scale = 1.0 + linalg::max_abs_c(s);
            if linalg::max_abs_c(&(s - s.adjoint())) > 1e-10 * scale {
                return Err(Error::NotTSpd(format!("{which}: Fourier slice {k} is not Hermitian")));
            }
            let (vals, _) = linalg::hermitian_eigen(s);
            let lmax = vals.max().max(0.0);
            let cutoff = dim as f64 * f64::EPSILON * lmax * 100.0;
            if vals.min() < -1e-10 * scale {
                return Err(Error::NotTSpd(format!("{which}: Fourier slice {k} is indefinite")));
            }
            if !semidefinite && vals.min() <= cutoff {
                return Err(Error::PresetNotDefinite(which));
            }
            inv[k] = linalg::hermitian_power(s, -1.0);
            sqrt[k] = linalg::hermitian_power(s, 0.5);
            inv_sqrt[k] = linalg::hermitian_power(s, -0.5);
        }
        for target in [&mut inv, &mut sqrt, &mut inv_sqrt] {
            for k in h..l {
                target[k] = target[l - k].map(|z| z.conj());
            }
            if l % 2 == 0 && l >= 2 {
                target[l / 2].iter_mut().for_each(|z| z.im = 0.0);
            }
        }
        Ok((inv, sqrt, inv_sqrt))
    }

    pub fn m(&self) -> &TubalMatrix {
        &self.m
    }
    pub fn n(&self) -> &TubalMatrix {
        &self.n
    }
    pub fn semidefinite(&self) -> bool {
        self.semidefinite
    }
    pub fn m_inv(&self) -> &[CMat] {
        &self.m_inv
    }
    pub fn n_inv(&self) -> &[CMat] {
        &self.n_inv
    }
    pub fn m_sqrt(&self) -> &[CMat] {
        &self.m_sqrt
    }
    pub fn n_sqrt(&self) -> &[CMat] {
        &self.n_sqrt
    }
    pub fn m_inv_sqrt(&self) -> &[CMat] {
        &self.m_inv_sqrt
    }
    pub fn n_inv_sqrt(&self) -> &[CMat] {
        &self.n_inv_sqrt
    }

    /// `||M^{1/2} * a * N^{1/2}||_F`, evaluated in the Fourier domain.
    pub fn fnorm_weighted(&self, a: &TubalMatrix) -> Result<f64> {
        if a.rows() != self.m.rows() || a.cols() != self.n.rows() || a.tubes() != self.m.tubes() {
            return Err(Error::ShapeMismatch("fnorm_weighted: operand does not fit weights".into()));
        }
        let spec = a.dft();
        let l = a.tubes();
        let mut acc = 0.0;
        for k in 0..l {
            acc += (&self.m_sqrt[k] * spec.slice(k) * &self.n_sqrt[k]).norm_squared();
        }
        Ok((acc / l as f64).sqrt())
    }
}
