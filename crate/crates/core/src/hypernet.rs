//! Condition-operator generation and sentence composition.
//!
//! A condition embedding `h_c` is mapped by a single affine layer to a linear
//! operator on sentence space. In `Full` mode the layer emits all `nh²`
//! entries; in `Lowrank` mode two layers emit `nh×nk` factors `W1`, `W2`
//! and the operator is `W1·W2ᵀ`, never densified on the projection path.
//! `Hadamard` and `Concat` are the parameter-free and linear tri-encoder
//! composers used as baselines.

use std::cell::Cell;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};

pub const INIT_STD: f64 = 0.02;
pub const DEFAULT_DROPOUT: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Full,
    Lowrank,
    Hadamard,
    Concat,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::Lowrank => "lowrank",
            Mode::Hadamard => "hadamard",
            Mode::Concat => "concat",
        }
    }

    pub fn is_hyper(self) -> bool {
        matches!(self, Mode::Full | Mode::Lowrank)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Mode::Full),
            "lowrank" => Ok(Mode::Lowrank),
            "hadamard" => Ok(Mode::Hadamard),
            "concat" => Ok(Mode::Concat),
            other => Err(Error::invalid(format!("unknown mode {other:?}"))),
        }
    }
}

/// Default low-rank width: `⌊nh/12⌋`, at least 1.
pub fn default_rank(nh: usize) -> usize {
    (nh / 12).max(1)
}

/// A named learnable tensor, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    fn new(name: &str, shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            name: name.to_owned(),
            shape,
            data,
        }
    }
}

/// Learnable parameters of the composer for one mode.
///
/// Tensor layout per mode:
/// - full: `U` (nh²×nh), `U_bias` (nh²)
/// - lowrank: `U1` (nh·nk×nh), `U1_bias` (nh·nk), `U2`, `U2_bias`
/// - concat: `Wcat` (nh×2nh)
/// - hadamard: none
#[derive(Clone, Debug, PartialEq)]
pub struct HyperNetParams {
    mode: Mode,
    nh: usize,
    nk: Option<usize>,
    dropout_p: f64,
    use_bias: bool,
    tensors: Vec<Tensor>,
}

impl HyperNetParams {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn nh(&self) -> usize {
        self.nh
    }

    pub fn nk(&self) -> Option<usize> {
        self.nk
    }

    pub fn dropout_p(&self) -> f64 {
        self.dropout_p
    }

    pub fn use_bias(&self) -> bool {
        self.use_bias
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn set_dropout(&mut self, p: f64) -> Result<()> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::invalid(format!("dropout must be in [0,1), got {p}")));
        }
        self.dropout_p = p;
        Ok(())
    }

    /// Zeroes every hypernetwork bias and freezes it there.
    pub fn disable_bias(&mut self) {
        self.use_bias = false;
        for t in &mut self.tensors {
            if t.name.ends_with("_bias") {
                t.data.iter_mut().for_each(|x| *x = 0.0);
            }
        }
    }

    /// Rebuilds params from checkpoint parts, validating shapes.
    pub fn from_parts(
        mode: Mode,
        nh: usize,
        nk: Option<usize>,
        dropout_p: f64,
        use_bias: bool,
        tensors: Vec<Tensor>,
    ) -> Result<Self> {
        let shapes = tensor_shapes(mode, nh, nk)?;
        if shapes.len() != tensors.len() {
            return Err(Error::invalid(format!(
                "{mode} params need {} tensors, got {}",
                shapes.len(),
                tensors.len()
            )));
        }
        for ((name, shape), t) in shapes.iter().zip(&tensors) {
            if *name != t.name
                || *shape != t.shape
                || t.data.len() != shape.iter().product::<usize>()
            {
                return Err(Error::invalid(format!(
                    "tensor {} has shape {:?}, expected {name} {shape:?}",
                    t.name, t.shape
                )));
            }
            if t.data.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("tensor {}", t.name)));
            }
        }
        let mut p = HyperNetParams {
            mode,
            nh,
            nk: if mode == Mode::Lowrank { nk } else { None },
            dropout_p: DEFAULT_DROPOUT,
            use_bias,
            tensors,
        };
        p.set_dropout(dropout_p)?;
        Ok(p)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_scalars() {
            return Err(Error::dims(self.num_scalars(), flat.len()));
        }
        let mut off = 0;
        for t in &mut self.tensors {
            let n = t.data.len();
            t.data.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    pub fn zero_grads(&self) -> ParamGrads {
        ParamGrads {
            tensors: self.tensors.iter().map(|t| vec![0.0; t.data.len()]).collect(),
        }
    }

    fn check_dim(&self, v: &Vector) -> Result<()> {
        if v.dim() != self.nh {
            return Err(Error::dims(self.nh, v.dim()));
        }
        Ok(())
    }

    fn wrong_mode(&self, expected: &'static str) -> Error {
        Error::WrongMode {
            expected,
            actual: self.mode.as_str(),
        }
    }
}

/// Gradient buffers shaped like [`HyperNetParams::tensors`].
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrads {
    pub tensors: Vec<Vec<f64>>,
}

impl ParamGrads {
    pub fn flat(&self) -> Vec<f64> {
        self.tensors.iter().flatten().copied().collect()
    }

    pub fn scale(&mut self, s: f64) {
        self.tensors.iter_mut().flatten().for_each(|g| *g *= s);
    }
}

fn tensor_shapes(mode: Mode, nh: usize, nk: Option<usize>) -> Result<Vec<(&'static str, Vec<usize>)>> {
    if nh == 0 {
        return Err(Error::invalid("nh must be positive"));
    }
    Ok(match mode {
        Mode::Full => vec![("U", vec![nh * nh, nh]), ("U_bias", vec![nh * nh])],
        Mode::Lowrank => {
            let nk = match nk {
                Some(k) if (1..=nh).contains(&k) => k,
                other => {
                    return Err(Error::invalid(format!(
                        "low rank nk must be in 1..={nh}, got {other:?}"
                    )))
                }
            };
            vec![
                ("U1", vec![nh * nk, nh]),
                ("U1_bias", vec![nh * nk]),
                ("U2", vec![nh * nk, nh]),
                ("U2_bias", vec![nh * nk]),
            ]
        }
        Mode::Concat => vec![("Wcat", vec![nh, 2 * nh])],
        Mode::Hadamard => vec![],
    })
}

pub fn init_params(mode: Mode, nh: usize, nk: usize, seed: u64) -> Result<HyperNetParams> {
    if nh == 0 {
        return Err(Error::invalid("nh must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gauss = |n: usize, std: f64| -> Vec<f64> {
        let d = Normal::new(0.0, std).expect("valid std");
        (0..n).map(|_| d.sample(&mut rng)).collect()
    };
    let (nk_field, tensors) = match mode {
        Mode::Full => {
            let u = gauss(nh * nh * nh, INIT_STD);
            let bias = Matrix::identity(nh).as_slice().to_vec();
            (
                None,
                vec![
                    Tensor::new("U", vec![nh * nh, nh], u),
                    Tensor::new("U_bias", vec![nh * nh], bias),
                ],
            )
        }
        Mode::Lowrank => {
            if nk == 0 || nk > nh {
                return Err(Error::invalid(format!(
                    "low rank nk must be in 1..={nh}, got {nk}"
                )));
            }
            let bias_std = INIT_STD / (nk as f64).sqrt();
            let u1 = gauss(nh * nk * nh, INIT_STD);
            let b1 = gauss(nh * nk, bias_std);
            let u2 = gauss(nh * nk * nh, INIT_STD);
            let b2 = gauss(nh * nk, bias_std);
            (
                Some(nk),
                vec![
                    Tensor::new("U1", vec![nh * nk, nh], u1),
                    Tensor::new("U1_bias", vec![nh * nk], b1),
                    Tensor::new("U2", vec![nh * nk, nh], u2),
                    Tensor::new("U2_bias", vec![nh * nk], b2),
                ],
            )
        }
        Mode::Concat => (
            None,
            vec![Tensor::new("Wcat", vec![nh, 2 * nh], gauss(2 * nh * nh, INIT_STD))],
        ),
        Mode::Hadamard => (None, vec![]),
    };
    Ok(HyperNetParams {
        mode,
        nh,
        nk: nk_field,
        dropout_p: DEFAULT_DROPOUT,
        use_bias: true,
        tensors,
    })
}

/// Exact learnable scalar count of the composer.
pub fn param_count(p: &HyperNetParams) -> usize {
    let nh = p.nh;
    match p.mode {
        Mode::Full => nh * nh * nh + nh * nh,
        Mode::Lowrank => {
            let nk = p.nk.expect("lowrank has nk");
            2 * (nh * nh * nk + nh * nk)
        }
        Mode::Concat => 2 * nh * nh,
        Mode::Hadamard => 0,
    }
}

thread_local! {
    static DENSIFY_COUNT: Cell<u64> = const { Cell::new(0) };
}

/// Number of `nh×nh` materializations of factored operators performed on
/// this thread.
pub fn densify_count() -> u64 {
    DENSIFY_COUNT.with(Cell::get)
}

/// A linear operator on sentence space.
#[derive(Clone, Debug, PartialEq)]
pub enum ConditionOperator {
    Dense(Matrix),
    /// Represents `w1 · w2ᵀ`; both factors are `nh×nk`.
    Factored { w1: Matrix, w2: Matrix },
    Diagonal(Vector),
}

impl ConditionOperator {
    pub fn dim(&self) -> usize {
        match self {
            ConditionOperator::Dense(m) => m.rows(),
            ConditionOperator::Factored { w1, .. } => w1.rows(),
            ConditionOperator::Diagonal(d) => d.dim(),
        }
    }

    /// Full `nh×nh` matrix.
    pub fn densify(&self) -> Matrix {
        match self {
            ConditionOperator::Dense(m) => m.clone(),
            ConditionOperator::Factored { w1, w2 } => {
                DENSIFY_COUNT.with(|c| c.set(c.get() + 1));
                w1.matmul(&w2.transpose()).expect("factor shapes agree")
            }
            ConditionOperator::Diagonal(d) => Matrix::diag(d),
        }
    }

    /// Number of stored scalars.
    pub fn valid_elements(&self) -> usize {
        match self {
            ConditionOperator::Dense(m) => m.rows() * m.cols(),
            ConditionOperator::Factored { w1, w2 } => {
                w1.as_slice().len() + w2.as_slice().len()
            }
            ConditionOperator::Diagonal(d) => d.dim(),
        }
    }

    /// In-memory payload size at 8 bytes per scalar.
    pub fn resident_bytes(&self) -> usize {
        self.valid_elements() * std::mem::size_of::<f64>()
    }

    /// Frobenius norm of the represented operator. Factored operators use
    /// `‖W1·W2ᵀ‖² = tr((W1ᵀW1)(W2ᵀW2))`, which needs only `nk×nk` Gram
    /// matrices.
    pub fn frobenius_norm(&self) -> f64 {
        match self {
            ConditionOperator::Dense(m) => m.frobenius_norm(),
            ConditionOperator::Diagonal(d) => d.norm(),
            ConditionOperator::Factored { w1, w2 } => {
                let g1 = gram(w1);
                let g2 = gram(w2);
                // tr(G1 G2) with both symmetric = Σ_ij G1_ij G2_ij
                let sq = linalg::dot_slice(&g1, &g2);
                sq.max(0.0).sqrt()
            }
        }
    }

    /// `‖W‖_F / √valid_elements`.
    pub fn normalized_frobenius(&self) -> f64 {
        self.frobenius_norm() / (self.valid_elements() as f64).sqrt()
    }
}

/// `MᵀM` for row-major `M`, returned row-major.
fn gram(m: &Matrix) -> Vec<f64> {
    let k = m.cols();
    let mut g = vec![0.0; k * k];
    for r in 0..m.rows() {
        let row = m.row(r);
        linalg::add_outer(1.0, row, row, &mut g);
    }
    g
}

/// Affine map `U·h + b` into a freshly allocated buffer.
fn affine(weight: &[f64], bias: &[f64], h: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; bias.len()];
    linalg::matvec_into(weight, h.len(), h, &mut out);
    for (o, b) in out.iter_mut().zip(bias) {
        *o += b;
    }
    out
}

/// `W_c = q(h_c)`.
pub fn generate_condition_matrix(p: &HyperNetParams, h_c: &Vector) -> Result<ConditionOperator> {
    p.check_dim(h_c)?;
    let nh = p.nh;
    let h = h_c.as_slice();
    match p.mode {
        Mode::Full => {
            let w = affine(&p.tensors[0].data, &p.tensors[1].data, h);
            Ok(ConditionOperator::Dense(Matrix::from_vec(nh, nh, w)))
        }
        Mode::Lowrank => {
            let nk = p.nk.expect("lowrank has nk");
            let w1 = affine(&p.tensors[0].data, &p.tensors[1].data, h);
            let w2 = affine(&p.tensors[2].data, &p.tensors[3].data, h);
            Ok(ConditionOperator::Factored {
                w1: Matrix::from_vec(nh, nk, w1),
                w2: Matrix::from_vec(nh, nk, w2),
            })
        }
        _ => Err(p.wrong_mode("full|lowrank")),
    }
}

/// Scratch values from a projection needed by its backward pass.
#[derive(Clone, Debug)]
pub(crate) enum ProjectTrace {
    Dense,
    /// `W2ᵀ·h_s`
    Factored(Vec<f64>),
    Diagonal,
}

pub(crate) fn project_traced(op: &ConditionOperator, h_s: &[f64]) -> Result<(Vec<f64>, ProjectTrace)> {
    if h_s.len() != op.dim() {
        return Err(Error::dims(op.dim(), h_s.len()));
    }
    match op {
        ConditionOperator::Dense(m) => {
            let mut out = vec![0.0; m.rows()];
            linalg::matvec_into(m.as_slice(), m.cols(), h_s, &mut out);
            Ok((out, ProjectTrace::Dense))
        }
        ConditionOperator::Factored { w1, w2 } => {
            let mut inner = vec![0.0; w2.cols()];
            linalg::matvec_t_into(w2.as_slice(), w2.cols(), h_s, &mut inner);
            let mut out = vec![0.0; w1.rows()];
            linalg::matvec_into(w1.as_slice(), w1.cols(), &inner, &mut out);
            Ok((out, ProjectTrace::Factored(inner)))
        }
        ConditionOperator::Diagonal(d) => Ok((
            d.as_slice().iter().zip(h_s).map(|(a, b)| a * b).collect(),
            ProjectTrace::Diagonal,
        )),
    }
}

/// `h_sc = W_c · h_s`. Factored operators are applied as `W1·(W2ᵀ·h_s)`.
pub fn project(op: &ConditionOperator, h_s: &Vector) -> Result<Vector> {
    project_traced(op, h_s.as_slice()).map(|(v, _)| Vector::from_vec(v))
}

/// Accumulated gradient with respect to an operator's stored entries.
#[derive(Clone, Debug, PartialEq)]
pub(crate) enum OperatorGrad {
    Dense(Vec<f64>),
    Factored { dw1: Vec<f64>, dw2: Vec<f64> },
    Diagonal(Vec<f64>),
}

impl OperatorGrad {
    pub(crate) fn zeros_like(op: &ConditionOperator) -> Self {
        match op {
            ConditionOperator::Dense(m) => OperatorGrad::Dense(vec![0.0; m.as_slice().len()]),
            ConditionOperator::Factored { w1, w2 } => OperatorGrad::Factored {
                dw1: vec![0.0; w1.as_slice().len()],
                dw2: vec![0.0; w2.as_slice().len()],
            },
            ConditionOperator::Diagonal(d) => OperatorGrad::Diagonal(vec![0.0; d.dim()]),
        }
    }
}

/// Given `g = ∂L/∂h_sc`, accumulates `∂L/∂W` into `acc`.
pub(crate) fn project_backward(
    op: &ConditionOperator,
    h_s: &[f64],
    trace: &ProjectTrace,
    g: &[f64],
    acc: &mut OperatorGrad,
) {
    match (op, trace, acc) {
        (ConditionOperator::Dense(_), ProjectTrace::Dense, OperatorGrad::Dense(dw)) => {
            linalg::add_outer(1.0, g, h_s, dw);
        }
        (
            ConditionOperator::Factored { w1, .. },
            ProjectTrace::Factored(inner),
            OperatorGrad::Factored { dw1, dw2 },
        ) => {
            // out = W1 u, u = W2ᵀ h  ⇒  dW1 = g uᵀ, du = W1ᵀ g, dW2 = h duᵀ
            linalg::add_outer(1.0, g, inner, dw1);
            let mut du = vec![0.0; w1.cols()];
            linalg::matvec_t_into(w1.as_slice(), w1.cols(), g, &mut du);
            linalg::add_outer(1.0, h_s, &du, dw2);
        }
        (ConditionOperator::Diagonal(_), ProjectTrace::Diagonal, OperatorGrad::Diagonal(dd)) => {
            for ((d, gi), hi) in dd.iter_mut().zip(g).zip(h_s) {
                *d += gi * hi;
            }
        }
        _ => unreachable!("operator, trace and gradient forms always agree"),
    }
}

/// Pushes `∂L/∂W_c` back through `q` into the parameter gradients.
pub(crate) fn generate_backward(
    p: &HyperNetParams,
    h_c: &[f64],
    op_grad: &OperatorGrad,
    grads: &mut ParamGrads,
) {
    let mut push = |wi: usize, bi: usize, dflat: &[f64]| {
        linalg::add_outer(1.0, dflat, h_c, &mut grads.tensors[wi]);
        if p.use_bias {
            linalg::axpy(1.0, dflat, &mut grads.tensors[bi]);
        }
    };
    match (p.mode, op_grad) {
        (Mode::Full, OperatorGrad::Dense(dw)) => push(0, 1, dw),
        (Mode::Lowrank, OperatorGrad::Factored { dw1, dw2 }) => {
            push(0, 1, dw1);
            push(2, 3, dw2);
        }
        _ => unreachable!("operator gradient form follows params mode"),
    }
}

/// `g1(h_c, h_s) = h_c ⊙ h_s`.
pub fn hadamard_compose(h_c: &Vector, h_s: &Vector) -> Result<Vector> {
    h_c.hadamard(h_s)
}

/// `d([h_c; h_s])` with inverted dropout; `None` mask means inference.
pub(crate) fn concat_input(h_c: &[f64], h_s: &[f64], mask: Option<&[f64]>) -> Vec<f64> {
    let mut x: Vec<f64> = h_c.iter().chain(h_s).copied().collect();
    if let Some(m) = mask {
        for (xi, mi) in x.iter_mut().zip(m) {
            *xi *= mi;
        }
    }
    x
}

/// Inverted-dropout mask: entries are `0` or `1/(1-p)`.
pub(crate) fn dropout_mask<R: Rng>(len: usize, p: f64, rng: &mut R) -> Vec<f64> {
    let keep = 1.0 / (1.0 - p);
    (0..len)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect()
}

pub(crate) fn concat_forward(p: &HyperNetParams, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; p.nh];
    linalg::matvec_into(&p.tensors[0].data, 2 * p.nh, x, &mut out);
    out
}

pub(crate) fn concat_backward(x: &[f64], g: &[f64], grads: &mut ParamGrads) {
    linalg::add_outer(1.0, g, x, &mut grads.tensors[0]);
}

/// `g2(h_c, h_s) = Wcat · d([h_c; h_s])`. Dropout applies only when
/// `training` is set.
pub fn concat_compose<R: Rng>(
    p: &HyperNetParams,
    h_c: &Vector,
    h_s: &Vector,
    training: bool,
    rng: &mut R,
) -> Result<Vector> {
    if p.mode != Mode::Concat {
        return Err(p.wrong_mode("concat"));
    }
    p.check_dim(h_c)?;
    p.check_dim(h_s)?;
    let mask = (training && p.dropout_p > 0.0).then(|| dropout_mask(2 * p.nh, p.dropout_p, rng));
    let x = concat_input(h_c.as_slice(), h_s.as_slice(), mask.as_deref());
    Ok(Vector::from_vec(concat_forward(p, &x)))
}

/// Inference-time composition for any mode.
pub fn compose(p: &HyperNetParams, h_c: &Vector, h_s: &Vector) -> Result<Vector> {
    match p.mode {
        Mode::Full | Mode::Lowrank => project(&generate_condition_matrix(p, h_c)?, h_s),
        Mode::Hadamard => {
            p.check_dim(h_c)?;
            hadamard_compose(h_c, h_s)
        }
        Mode::Concat => {
            let mut unused = ChaCha8Rng::seed_from_u64(0);
            concat_compose(p, h_c, h_s, false, &mut unused)
        }
    }
}

/// The operator a condition induces: generated for hypernetwork modes,
/// `diag(h_c)` for the Hadamard composer. Concat has no operator form.
pub fn condition_operator(p: &HyperNetParams, h_c: &Vector) -> Result<ConditionOperator> {
    match p.mode {
        Mode::Full | Mode::Lowrank => generate_condition_matrix(p, h_c),
        Mode::Hadamard => {
            p.check_dim(h_c)?;
            Ok(ConditionOperator::Diagonal(h_c.clone()))
        }
        Mode::Concat => Err(p.wrong_mode("full|lowrank|hadamard")),
    }
}

/// Result of [`fit_factors`].
#[derive(Clone, Debug)]
pub struct FactorFit {
    pub operator: ConditionOperator,
    /// `‖T − W1·W2ᵀ‖_F / ‖T‖_F`.
    pub relative_residual: f64,
    pub iterations: usize,
}

/// Least-squares fit of `target ≈ W1·W2ᵀ` with `nh×nk` factors by
/// alternating least squares from a seeded random start.
pub fn fit_factors(target: &Matrix, nk: usize, max_iters: usize, seed: u64) -> Result<FactorFit> {
    let nh = target.rows();
    if target.cols() != nh {
        return Err(Error::dims(nh, target.cols()));
    }
    if nk == 0 || nk > nh {
        return Err(Error::invalid(format!("nk must be in 1..={nh}")));
    }
    let tnorm = target.frobenius_norm();
    if tnorm == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("valid std");
    let mut w2 = Matrix::from_vec(nh, nk, (0..nh * nk).map(|_| normal.sample(&mut rng)).collect());
    let mut w1 = Matrix::zeros(nh, nk);
    let tt = target.transpose();
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    // W1 = T·W2·(W2ᵀW2)⁻¹, then symmetrically for W2 with Tᵀ.
    let update = |t: &Matrix, other: &Matrix| -> Result<Matrix> {
        let g = other.transpose().matmul(other)?;
        let rhs = t.matmul(other)?.transpose();
        Ok(linalg::solve_spd(&g, &rhs)?.transpose())
    };
    while iterations < max_iters.max(1) {
        iterations += 1;
        w1 = update(target, &w2)?;
        w2 = update(&tt, &w1)?;
        let approx = w1.matmul(&w2.transpose())?;
        let diff: Vec<f64> = approx.as_slice().iter().zip(target.as_slice()).map(|(a, b)| a - b).collect();
        let next = linalg::norm(&diff) / tnorm;
        let done = residual - next < 1e-14;
        residual = next;
        if done {
            break;
        }
    }
    Ok(FactorFit {
        operator: ConditionOperator::Factored { w1, w2 },
        relative_residual: residual,
        iterations,
    })
}
