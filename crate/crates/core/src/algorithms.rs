//! Proximal operators and the ISTA / IHT iterations with per-iteration step
//! sizes.

use ndarray::Array1;

use crate::error::{Error, Result};
use crate::evaluation::mse_db;
use crate::problem::SparseProblem;
use crate::scalar::Scalar;

/// Per-iteration step sizes `α_0 .. α_{T_max-1}`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepSchedule<F> {
    pub alphas: Vec<F>,
}

impl<F: Scalar> StepSchedule<F> {
    pub fn constant(len: usize, alpha: F) -> Self {
        Self {
            alphas: vec![alpha; len],
        }
    }

    pub fn from_vec(alphas: Vec<F>) -> Self {
        Self { alphas }
    }

    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphas.is_empty()
    }

    pub fn as_slice(&self) -> &[F] {
        &self.alphas
    }

    pub fn min(&self) -> Option<F> {
        self.alphas.iter().copied().reduce(F::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RegularizerKind {
    /// `λ‖x‖₁`, proximal step is soft thresholding (ISTA).
    L1,
    /// `λ‖x‖₀`, proximal step is hard thresholding (IHT).
    L0,
}

impl RegularizerKind {
    pub fn algorithm_name(self) -> &'static str {
        match self {
            RegularizerKind::L1 => "ista",
            RegularizerKind::L0 => "iht",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Regularizer<F> {
    pub kind: RegularizerKind,
    pub lambda: F,
    /// Added under the square root of the hard threshold; unused for `L1`.
    pub epsilon_guard: F,
}

pub const DEFAULT_EPSILON_GUARD: f64 = 1e-10;

impl<F: Scalar> Regularizer<F> {
    pub fn l1(lambda: F) -> Self {
        Self {
            kind: RegularizerKind::L1,
            lambda,
            epsilon_guard: F::zero(),
        }
    }

    pub fn l0(lambda: F, epsilon_guard: F) -> Self {
        Self {
            kind: RegularizerKind::L0,
            lambda,
            epsilon_guard,
        }
    }

    /// λ = 0.05.
    pub fn ista_default() -> Self {
        Self::l1(F::of(0.05))
    }

    /// λ = 0.01, ε = 1e-10.
    pub fn iht_default() -> Self {
        Self::l0(F::of(0.01), F::of(DEFAULT_EPSILON_GUARD))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > F::zero()) || !self.lambda.is_finite() {
            return Err(Error::InvalidConfig(format!("lambda must be positive, got {}", self.lambda)));
        }
        if self.epsilon_guard < F::zero() || !self.epsilon_guard.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "epsilon guard must be nonnegative, got {}",
                self.epsilon_guard
            )));
        }
        Ok(())
    }

    /// Threshold applied after a gradient step of size `alpha`.
    pub fn threshold(&self, alpha: F) -> Result<F> {
        match self.kind {
            RegularizerKind::L1 => {
                let tau = self.lambda * alpha;
                if tau < F::zero() {
                    return Err(Error::InvalidArgument(format!("negative soft threshold {tau}")));
                }
                Ok(tau)
            }
            RegularizerKind::L0 => hard_threshold_level(self.lambda, alpha, self.epsilon_guard),
        }
    }

    /// `R(x)`: `‖x‖₁` or the count of exact nonzeros.
    pub fn penalty(&self, x: &[F]) -> F {
        match self.kind {
            RegularizerKind::L1 => x.iter().fold(F::zero(), |acc, v| acc + v.abs()),
            RegularizerKind::L0 => F::of(x.iter().filter(|v| **v != F::zero()).count() as f64),
        }
    }
}

#[inline]
pub fn soft_threshold_scalar<F: Scalar>(v: F, tau: F) -> F {
    if v > tau {
        v - tau
    } else if v < -tau {
        v + tau
    } else {
        F::zero()
    }
}

/// Elementwise soft thresholding `S_τ`.
pub fn soft_threshold<F: Scalar>(v: &[F], tau: F) -> Result<Vec<F>> {
    if tau < F::zero() || tau.is_nan() {
        return Err(Error::InvalidArgument(format!("soft threshold must be nonnegative, got {tau}")));
    }
    Ok(v.iter().map(|&x| soft_threshold_scalar(x, tau)).collect())
}

/// `√(2λα + ε)`.
pub fn hard_threshold_level<F: Scalar>(lambda: F, alpha: F, epsilon_guard: F) -> Result<F> {
    let radicand = F::of(2.0) * lambda * alpha + epsilon_guard;
    if radicand < F::zero() || radicand.is_nan() {
        return Err(Error::InvalidArgument(format!(
            "hard threshold radicand 2λα+ε = {radicand} is negative"
        )));
    }
    Ok(radicand.sqrt())
}

/// Keeps `v` when `|v| ≥ level`; the boundary case is kept.
#[inline]
pub fn hard_threshold_scalar<F: Scalar>(v: F, level: F) -> F {
    if v.abs() >= level {
        v
    } else {
        F::zero()
    }
}

/// Elementwise hard thresholding with the guarded level `√(2λα + ε)`.
pub fn hard_threshold<F: Scalar>(v: &[F], lambda: F, alpha: F, epsilon_guard: F) -> Result<Vec<F>> {
    let level = hard_threshold_level(lambda, alpha, epsilon_guard)?;
    Ok(v.iter().map(|&x| hard_threshold_scalar(x, level)).collect())
}

/// Buffers for one layer `x → r → x'`.
#[derive(Debug, Clone)]
pub(crate) struct LayerBuffers<F> {
    /// `∇f(x) = Aᵀ(Ax − y)`.
    pub grad_f: Vec<F>,
    pub r: Vec<F>,
    pub x_next: Vec<F>,
    /// Coordinates that survived thresholding.
    pub active: Vec<bool>,
}

impl<F: Scalar> LayerBuffers<F> {
    pub fn new(n: usize) -> Self {
        Self {
            grad_f: vec![F::zero(); n],
            r: vec![F::zero(); n],
            x_next: vec![F::zero(); n],
            active: vec![false; n],
        }
    }
}

/// `∇f(x) = AᵀA·x − Aᵀy` written into `out`.
pub(crate) fn smooth_gradient<F: Scalar>(x: &[F], problem: &SparseProblem<F>, out: &mut [F]) {
    problem.a.apply_gram(x, out);
    out.iter_mut()
        .zip(problem.aty().iter())
        .for_each(|(g, &b)| *g -= b);
}

/// One proximal-gradient layer. This is the single code path shared by the
/// plain solver and the unfolded network, so their iterates agree bit for bit.
pub(crate) fn prox_layer<F: Scalar>(
    x: &[F],
    problem: &SparseProblem<F>,
    alpha: F,
    reg: &Regularizer<F>,
    buf: &mut LayerBuffers<F>,
    iteration: usize,
) -> Result<()> {
    smooth_gradient(x, problem, &mut buf.grad_f);
    for ((r, &xi), &g) in buf.r.iter_mut().zip(x).zip(&buf.grad_f) {
        *r = xi - alpha * g;
    }
    let level = reg.threshold(alpha)?;
    match reg.kind {
        RegularizerKind::L1 => {
            // At α = 0 a zero entry sits exactly on the threshold; take the
            // active set of the right limit α → 0⁺ there.
            let at_zero = alpha == F::zero();
            for (((out, act), &r), &g) in buf.x_next.iter_mut().zip(buf.active.iter_mut()).zip(&buf.r).zip(&buf.grad_f) {
                *act = r.abs() > level || (at_zero && r == F::zero() && g.abs() > reg.lambda);
                *out = soft_threshold_scalar(r, level);
            }
        }
        RegularizerKind::L0 => {
            for ((out, act), &r) in buf.x_next.iter_mut().zip(buf.active.iter_mut()).zip(&buf.r) {
                *act = r.abs() >= level;
                *out = if *act { r } else { F::zero() };
            }
        }
    }
    if buf.x_next.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence { iteration });
    }
    Ok(())
}

/// `x − α·Aᵀ(Ax − y)`.
pub fn gradient_step<F: Scalar>(x: &[F], problem: &SparseProblem<F>, alpha: F) -> Array1<F> {
    let mut grad = vec![F::zero(); x.len()];
    smooth_gradient(x, problem, &mut grad);
    x.iter().zip(&grad).map(|(&xi, &g)| xi - alpha * g).collect()
}

/// `½‖y − Ax‖₂² + λ·R(x)`.
pub fn objective_value<F: Scalar>(x: &[F], problem: &SparseProblem<F>, reg: &Regularizer<F>) -> F {
    let ax = problem.a.apply(x);
    let resid = ax
        .iter()
        .zip(problem.y.iter())
        .fold(F::zero(), |acc, (&a, &y)| acc + (a - y) * (a - y));
    F::of(0.5) * resid + reg.lambda * reg.penalty(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecordFlags {
    /// Keep every iterate `x^(t)`.
    pub iterates: bool,
    /// Record objective and MSE(dB) per iteration.
    pub metrics: bool,
}

impl RecordFlags {
    pub const METRICS: Self = Self {
        iterates: false,
        metrics: true,
    };
    pub const FULL: Self = Self {
        iterates: true,
        metrics: true,
    };
    pub const NONE: Self = Self {
        iterates: false,
        metrics: false,
    };
}

/// Record of one solver run. Metric vectors have `t_steps + 1` entries when
/// recorded, index `t` describing `x^(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<F> {
    pub iterates: Option<Vec<Array1<F>>>,
    pub objective: Vec<F>,
    pub mse_db: Vec<F>,
    pub final_iterate: Array1<F>,
}

impl<F: Scalar> Trajectory<F> {
    pub fn steps(&self) -> usize {
        self.objective.len().saturating_sub(1)
    }
}

/// Runs `t_steps` iterations of ISTA (L1) or IHT (L0) from `x^(0) = 0`
/// with step `α_t` at iteration `t`.
pub fn run_solver<F: Scalar>(
    problem: &SparseProblem<F>,
    schedule: &StepSchedule<F>,
    reg: &Regularizer<F>,
    t_steps: usize,
    record: RecordFlags,
) -> Result<Trajectory<F>> {
    if t_steps > schedule.len() {
        return Err(Error::InvalidArgument(format!(
            "{t_steps} steps requested but the schedule has {} entries",
            schedule.len()
        )));
    }
    let n = problem.n();
    let mut x = vec![F::zero(); n];
    let mut buf = LayerBuffers::new(n);
    let capacity = if record.metrics { t_steps + 1 } else { 0 };
    let mut objective = Vec::with_capacity(capacity);
    let mut mse = Vec::with_capacity(capacity);
    let mut iterates = record.iterates.then(|| Vec::with_capacity(t_steps + 1));

    let observe = |x: &[F], objective: &mut Vec<F>, mse: &mut Vec<F>| {
        if record.metrics {
            objective.push(objective_value(x, problem, reg));
            mse.push(mse_db(x, problem.x_true.as_slice().unwrap()));
        }
    };
    observe(&x, &mut objective, &mut mse);
    if let Some(it) = iterates.as_mut() {
        it.push(Array1::from(x.clone()));
    }
    for (t, &alpha) in schedule.alphas[..t_steps].iter().enumerate() {
        prox_layer(&x, problem, alpha, reg, &mut buf, t)?;
        std::mem::swap(&mut x, &mut buf.x_next);
        observe(&x, &mut objective, &mut mse);
        if let Some(it) = iterates.as_mut() {
            it.push(Array1::from(x.clone()));
        }
    }
    Ok(Trajectory {
        iterates,
        objective,
        mse_db: mse,
        final_iterate: Array1::from(x),
    })
}
