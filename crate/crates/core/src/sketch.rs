//! Sketch operators, indexed sketch sets, and the named method presets.

use crate::error::Error;
use crate::tensor::{TransposeMode, TubalMatrix, WeightPair};
use crate::Result;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// How a sketch operator was constructed. `Selector` marks a single lateral
/// slice of the identity, which the solver exploits with a cheap loss path.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SketchKind {
    Gaussian,
    Sampling,
    Selector { index: usize },
    Dense,
}

/// A sketch operator is just a tall tubal matrix applied from the left
/// (`S^T * A * ...`) or right (`... * B * V`).
#[derive(Clone, Debug)]
pub struct SketchOperator {
    pub tensor: TubalMatrix,
    pub kind: SketchKind,
}

impl SketchOperator {
    pub fn dense(tensor: TubalMatrix) -> Self {
        Self {
            tensor,
            kind: SketchKind::Dense,
        }
    }

    /// Lateral slice `index` of the `rows x rows` identity.
    pub fn selector(rows: usize, index: usize, tubes: usize) -> Self {
        let mut t = TubalMatrix::zeros(rows, 1, tubes);
        t.set(index, 0, 0, 1.0);
        Self {
            tensor: t,
            kind: SketchKind::Selector { index },
        }
    }

    pub fn rows(&self) -> usize {
        self.tensor.rows()
    }
    pub fn width(&self) -> usize {
        self.tensor.cols()
    }
}

/// Gaussian tubal sketch: standard normal entries in the first frontal
/// slice, zeros elsewhere.
pub fn gaussian_sketch<R: Rng + ?Sized>(
    rows: usize,
    width: usize,
    tubes: usize,
    rng: &mut R,
) -> Result<SketchOperator> {
    if width == 0 || width > rows {
        return Err(Error::InvalidArgument(format!(
            "gaussian sketch width {width} out of range for {rows} rows"
        )));
    }
    let mut t = TubalMatrix::zeros(rows, width, tubes);
    for j in 0..width {
        for i in 0..rows {
            t.set(i, j, 0, standard_normal(rng));
        }
    }
    Ok(SketchOperator {
        tensor: t,
        kind: SketchKind::Gaussian,
    })
}

/// Random sampling tubal sketch: each column of the first frontal slice is a
/// standard basis vector drawn from `probs` (uniform when `None`).
pub fn sampling_sketch<R: Rng + ?Sized>(
    rows: usize,
    width: usize,
    tubes: usize,
    probs: Option<&[f64]>,
    rng: &mut R,
) -> Result<SketchOperator> {
    if width == 0 || width > rows {
        return Err(Error::InvalidArgument(format!(
            "sampling sketch width {width} out of range for {rows} rows"
        )));
    }
    let uniform = vec![1.0 / rows as f64; rows];
    let p = match probs {
        Some(p) => {
            validate_probs(p, rows)?;
            p
        }
        None => &uniform,
    };
    let mut t = TubalMatrix::zeros(rows, width, tubes);
    for j in 0..width {
        let idx = sample_discrete(rng, p);
        t.set(idx, j, 0, 1.0);
    }
    Ok(SketchOperator {
        tensor: t,
        kind: SketchKind::Sampling,
    })
}

/// Box-Muller standard normal from a generic RNG.
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u1: f64 = rng.random();
        let u2: f64 = rng.random();
        if u1 > f64::MIN_POSITIVE {
            return (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        }
    }
}

/// Inverse-CDF draw from a discrete distribution. Deterministic given the
/// RNG stream; used everywhere an index is sampled so that different solver
/// paths consume randomness identically.
pub fn sample_discrete<R: Rng + ?Sized>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    sample_discrete_with(u, probs)
}

pub fn sample_discrete_with(u: f64, probs: &[f64]) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

fn validate_probs(p: &[f64], expect_len: usize) -> Result<()> {
    if p.len() != expect_len {
        return Err(Error::InvalidArgument(format!(
            "probability vector has length {}, expected {}",
            p.len(),
            expect_len
        )));
    }
    if p.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::InvalidArgument("probabilities must be nonnegative".into()));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidArgument(format!("probabilities sum to {s}, expected 1")));
    }
    Ok(())
}

/// A finite family of sketch operators with a probability on each member.
#[derive(Clone, Debug)]
pub struct SketchSet {
    ops: Vec<SketchOperator>,
    probs: Vec<f64>,
}

impl SketchSet {
    pub fn new(ops: Vec<SketchOperator>, probs: Vec<f64>) -> Result<Self> {
        if ops.is_empty() {
            return Err(Error::InvalidArgument("sketch set must be nonempty".into()));
        }
        validate_probs(&probs, ops.len())?;
        let rows = ops[0].rows();
        let tubes = ops[0].tensor.tubes();
        for op in &ops {
            if op.rows() != rows || op.tensor.tubes() != tubes {
                return Err(Error::ShapeMismatch(
                    "sketch operators in a set must share outer dimension and depth".into(),
                ));
            }
        }
        Ok(Self { ops, probs })
    }

    /// Single deterministic operator.
    pub fn single(op: SketchOperator) -> Self {
        Self {
            ops: vec![op],
            probs: vec![1.0],
        }
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }
    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }
    pub fn ops(&self) -> &[SketchOperator] {
        &self.ops
    }
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
    pub fn op(&self, i: usize) -> &SketchOperator {
        &self.ops[i]
    }
}

/// The named sketch-and-project specializations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PresetName {
    TerkBoth,
    TerkLeft,
    TerkRight,
    TercdBoth,
    TercdLeft,
    TercdRight,
    TerkRcd,
    TercdRk,
}

impl PresetName {
    pub const ALL: [PresetName; 8] = [
        PresetName::TerkBoth,
        PresetName::TerkLeft,
        PresetName::TerkRight,
        PresetName::TercdBoth,
        PresetName::TercdLeft,
        PresetName::TercdRight,
        PresetName::TerkRcd,
        PresetName::TercdRk,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PresetName::TerkBoth => "terk-both",
            PresetName::TerkLeft => "terk-left",
            PresetName::TerkRight => "terk-right",
            PresetName::TercdBoth => "tercd-both",
            PresetName::TercdLeft => "tercd-left",
            PresetName::TercdRight => "tercd-right",
            PresetName::TerkRcd => "terk-rcd",
            PresetName::TercdRk => "tercd-rk",
        }
    }
}

impl std::fmt::Display for PresetName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for PresetName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "terk-both" => Ok(PresetName::TerkBoth),
            "terk-left" => Ok(PresetName::TerkLeft),
            "terk-right" => Ok(PresetName::TerkRight),
            "tercd-both" => Ok(PresetName::TercdBoth),
            "tercd-left" => Ok(PresetName::TercdLeft),
            "tercd-right" => Ok(PresetName::TercdRight),
            "terk-rcd" => Ok(PresetName::TerkRcd),
            "tercd-rk" => Ok(PresetName::TercdRk),
            other => Err(Error::InvalidArgument(format!("unknown preset '{other}'"))),
        }
    }
}

/// A fully instantiated preset: both sketch sets plus the weight pair.
#[derive(Clone, Debug)]
pub struct MethodPreset {
    pub name: PresetName,
    pub left: SketchSet,
    pub right: SketchSet,
    pub weights: WeightPair,
}

/// Build a named preset for the equation `A * X * B = C`.
pub fn build_preset(name: PresetName, a: &TubalMatrix, b: &TubalMatrix) -> Result<MethodPreset> {
    build_preset_with(name, a, b, false)
}

/// Like [`build_preset`], but `semidefinite` switches the TERCD weight
/// tensors to pseudoinverse handling when `A^T * A` or `B * B^T` is rank
/// deficient.
pub fn build_preset_with(
    name: PresetName,
    a: &TubalMatrix,
    b: &TubalMatrix,
    semidefinite: bool,
) -> Result<MethodPreset> {
    let (m, r, l) = (a.rows(), a.cols(), a.tubes());
    let (s, n) = (b.rows(), b.cols());
    if b.tubes() != l {
        return Err(Error::ShapeMismatch("A and B must share tube length".into()));
    }

    let rows_of_identity = |dim: usize, t: &TubalMatrix, by_rows: bool| -> Result<SketchSet> {
        let ops = (0..dim)
            .map(|i| SketchOperator::selector(dim, i, l))
            .collect();
        let probs = if by_rows { row_probs(t)? } else { col_probs(t)? };
        SketchSet::new(ops, probs)
    };
    // columns of A as left sketches: S_i = A * I(:, i, :)
    let cols_of = |t: &TubalMatrix, transpose: bool| -> Result<SketchSet> {
        let tt = if transpose {
            t.t_transpose(TransposeMode::T)
        } else {
            t.clone()
        };
        let ops = (0..tt.cols())
            .map(|j| SketchOperator::dense(tt.lateral_slice(j)))
            .collect();
        let probs = if transpose { row_probs(t)? } else { col_probs(t)? };
        SketchSet::new(ops, probs)
    };
    let full_identity = |dim: usize| SketchSet::single(SketchOperator::dense(TubalMatrix::identity(dim, l)));

    let gram_left = || a.t_transpose(TransposeMode::T).tprod(a);
    let gram_right = || b.tprod(&b.t_transpose(TransposeMode::T));
    let eye = |dim: usize| TubalMatrix::identity(dim, l);
    let weights = |mw: TubalMatrix, nw: TubalMatrix| -> Result<WeightPair> {
        if semidefinite {
            WeightPair::new_semidefinite(mw, nw)
        } else {
            WeightPair::new(mw, nw)
        }
    };

    let (left, right, w) = match name {
        PresetName::TerkBoth => (
            rows_of_identity(m, a, true)?,
            rows_of_identity(n, b, false)?,
            weights(eye(r), eye(s))?,
        ),
        PresetName::TerkLeft => (
            rows_of_identity(m, a, true)?,
            full_identity(n),
            weights(eye(r), eye(s))?,
        ),
        PresetName::TerkRight => (
            full_identity(m),
            rows_of_identity(n, b, false)?,
            weights(eye(r), eye(s))?,
        ),
        PresetName::TercdBoth => (
            cols_of(a, false)?,
            cols_of(b, true)?,
            weights(gram_left()?, gram_right()?)?,
        ),
        PresetName::TercdLeft => (
            cols_of(a, false)?,
            full_identity(n),
            weights(gram_left()?, eye(s))?,
        ),
        PresetName::TercdRight => (
            full_identity(m),
            cols_of(b, true)?,
            weights(eye(r), gram_right()?)?,
        ),
        PresetName::TerkRcd => (
            rows_of_identity(m, a, true)?,
            cols_of(b, true)?,
            weights(eye(r), gram_right()?)?,
        ),
        PresetName::TercdRk => (
            cols_of(a, false)?,
            rows_of_identity(n, b, false)?,
            weights(gram_left()?, eye(s))?,
        ),
    };
    Ok(MethodPreset {
        name,
        left,
        right,
        weights: w,
    })
}

/// `p_i = ||T(i, :, :)||_F^2 / ||T||_F^2`.
pub fn row_probs(t: &TubalMatrix) -> Result<Vec<f64>> {
    let total = t.fnorm().powi(2);
    if total <= 0.0 {
        return Err(Error::InvalidArgument("cannot derive probabilities from a zero tensor".into()));
    }
    Ok((0..t.rows())
        .map(|i| t.horizontal_slice(i).fnorm().powi(2) / total)
        .collect())
}

/// `p_j = ||T(:, j, :)||_F^2 / ||T||_F^2`.
pub fn col_probs(t: &TubalMatrix) -> Result<Vec<f64>> {
    let total = t.fnorm().powi(2);
    if total <= 0.0 {
        return Err(Error::InvalidArgument("cannot derive probabilities from a zero tensor".into()));
    }
    Ok((0..t.cols())
        .map(|j| t.lateral_slice(j).fnorm().powi(2) / total)
        .collect())
}
