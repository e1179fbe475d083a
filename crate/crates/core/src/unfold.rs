//! The unrolled network: a recorded forward pass through `T` proximal
//! gradient layers and exact reverse-mode gradients of the training loss
//! with respect to the step sizes.
//!
//! Derivative conventions at the thresholds:
//! - soft threshold: `∂x'/∂r = 1` where `|r| > λα`, else 0; the direct
//!   derivative in `α` is `−λ·sign(r)` on the active set. `|r| = λα` counts
//!   as the dead zone, except at `α = 0` where a zero entry is treated as
//!   in the limit `α → 0⁺`: active iff `|∇f| > λ`, with sign `−sign(∇f)`.
//! - hard threshold: `∂x'/∂r = 1` where `|r| ≥ √(2λα+ε)`, else 0; the direct
//!   derivative in `α` is 0, so IHT gradients flow only through `r`.
//! - gradient layer: `∂r/∂x = I − α·AᵀA`, `∂r/∂α = −Aᵀ(Ax − y)`.

use ndarray::Array1;
use rayon::prelude::*;

use crate::algorithms::{prox_layer, smooth_gradient, LayerBuffers, Regularizer, RegularizerKind, StepSchedule};
use crate::algorithms::objective_value;
use crate::error::{Error, Result};
use crate::linalg;
use crate::problem::SparseProblem;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    /// `(1/(N_b·N))·Σ‖x̂ᵢ − xᵢ*‖²`.
    Supervised,
    /// `(1/(N_b·N))·Σ[½‖yᵢ − A x̂ᵢ‖² + λ·R(x̂ᵢ)]`.
    Unsupervised,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Supervised => "supervised",
            LossKind::Unsupervised => "unsupervised",
        }
    }
}

/// How batch items are scheduled. Both modes reduce per-item gradients in
/// batch order, so they return bit-identical results.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    #[default]
    Sequential,
    Parallel,
}

/// What one layer of one batch item needs for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerRecord<F> {
    pub t: usize,
    /// Pre-threshold vector `r^(t)`.
    pub r: Vec<F>,
    /// `Aᵀ(A x^(t) − y)`, i.e. `−∂r/∂α_t`.
    pub grad_f: Vec<F>,
    pub active: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tape<F> {
    pub t_layers: usize,
    /// Step sizes the forward pass used.
    pub alphas: Vec<F>,
    pub reg: Regularizer<F>,
    /// `records[i][t]` for batch item `i`, layer `t`.
    pub records: Vec<Vec<LayerRecord<F>>>,
    pub outputs: Vec<Array1<F>>,
}

impl<F: Scalar> Tape<F> {
    pub fn batch_size(&self) -> usize {
        self.records.len()
    }

    /// Bytes held by the per-layer records: two length-`n` float vectors and
    /// one boolean mask per layer per item.
    pub fn memory_bytes(&self) -> usize {
        self.records
            .iter()
            .flatten()
            .map(|rec| {
                (rec.r.len() + rec.grad_f.len()) * std::mem::size_of::<F>()
                    + rec.active.len() * std::mem::size_of::<bool>()
            })
            .sum()
    }
}

type ItemForward<F> = (Array1<F>, Vec<LayerRecord<F>>);

fn forward_item<F: Scalar>(
    problem: &SparseProblem<F>,
    alphas: &[F],
    reg: &Regularizer<F>,
) -> Result<ItemForward<F>> {
    let n = problem.n();
    let mut x = vec![F::zero(); n];
    let mut buf = LayerBuffers::new(n);
    let mut records = Vec::with_capacity(alphas.len());
    for (t, &alpha) in alphas.iter().enumerate() {
        prox_layer(&x, problem, alpha, reg, &mut buf, t)?;
        std::mem::swap(&mut x, &mut buf.x_next);
        records.push(LayerRecord {
            t,
            r: buf.r.clone(),
            grad_f: buf.grad_f.clone(),
            active: buf.active.clone(),
        });
    }
    Ok((Array1::from(x), records))
}

pub fn forward_unrolled<F: Scalar>(
    batch: &[SparseProblem<F>],
    schedule: &StepSchedule<F>,
    reg: &Regularizer<F>,
    t_layers: usize,
) -> Result<(Vec<Array1<F>>, Tape<F>)> {
    forward_unrolled_with(batch, schedule, reg, t_layers, Execution::Sequential)
}

/// Runs every batch item through `t_layers` layers from `x^(0) = 0`,
/// recording what [`backward_step_sizes`] needs.
pub fn forward_unrolled_with<F: Scalar>(
    batch: &[SparseProblem<F>],
    schedule: &StepSchedule<F>,
    reg: &Regularizer<F>,
    t_layers: usize,
    exec: Execution,
) -> Result<(Vec<Array1<F>>, Tape<F>)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if t_layers > schedule.len() {
        return Err(Error::InvalidArgument(format!(
            "{t_layers} layers requested but the schedule has {} entries",
            schedule.len()
        )));
    }
    let alphas = &schedule.alphas[..t_layers];
    let items: Vec<ItemForward<F>> = match exec {
        Execution::Sequential => batch
            .iter()
            .map(|p| forward_item(p, alphas, reg))
            .collect::<Result<_>>()?,
        Execution::Parallel => batch
            .par_iter()
            .map(|p| forward_item(p, alphas, reg))
            .collect::<Result<_>>()?,
    };
    let (outputs, records): (Vec<_>, Vec<_>) = items.into_iter().unzip();
    let tape = Tape {
        t_layers,
        alphas: alphas.to_vec(),
        reg: *reg,
        records,
        outputs: outputs.clone(),
    };
    Ok((outputs, tape))
}

fn check_aligned<F: Scalar>(outputs: &[Array1<F>], batch: &[SparseProblem<F>]) -> Result<()> {
    if outputs.len() != batch.len() || batch.is_empty() {
        return Err(Error::Contract(format!(
            "{} outputs for a batch of {}",
            outputs.len(),
            batch.len()
        )));
    }
    Ok(())
}

fn loss_scale<F: Scalar>(batch: &[SparseProblem<F>]) -> F {
    F::one() / F::of((batch.len() * batch[0].n()) as f64)
}

pub fn loss_value<F: Scalar>(
    outputs: &[Array1<F>],
    batch: &[SparseProblem<F>],
    reg: &Regularizer<F>,
    loss: LossKind,
) -> Result<F> {
    check_aligned(outputs, batch)?;
    let total = outputs
        .iter()
        .zip(batch)
        .fold(F::zero(), |acc, (x, p)| acc + item_loss(x.as_slice().unwrap(), p, reg, loss));
    Ok(total * loss_scale(batch))
}

fn item_loss<F: Scalar>(x: &[F], problem: &SparseProblem<F>, reg: &Regularizer<F>, loss: LossKind) -> F {
    match loss {
        LossKind::Supervised => x
            .iter()
            .zip(problem.x_true.iter())
            .fold(F::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b)),
        LossKind::Unsupervised => objective_value(x, problem, reg),
    }
}

/// `∂loss/∂x̂` for one item, already multiplied by the batch prefactor.
fn output_gradient<F: Scalar>(
    x: &[F],
    problem: &SparseProblem<F>,
    reg: &Regularizer<F>,
    loss: LossKind,
    scale: F,
) -> Vec<F> {
    match loss {
        LossKind::Supervised => x
            .iter()
            .zip(problem.x_true.iter())
            .map(|(&a, &b)| scale * F::of(2.0) * (a - b))
            .collect(),
        LossKind::Unsupervised => {
            let mut g = vec![F::zero(); x.len()];
            smooth_gradient(x, problem, &mut g);
            if reg.kind == RegularizerKind::L1 {
                for (gi, &xi) in g.iter_mut().zip(x) {
                    if xi != F::zero() {
                        *gi += reg.lambda * xi.signum();
                    }
                }
            }
            g.iter().map(|&v| scale * v).collect()
        }
    }
}

/// Sign of the pre-threshold value, or of its right limit `−α·∇f` when it
/// is exactly zero.
fn direction<F: Scalar>(r: F, grad_f: F) -> F {
    if r != F::zero() {
        r.signum()
    } else if grad_f != F::zero() {
        -grad_f.signum()
    } else {
        F::zero()
    }
}

fn backward_item<F: Scalar>(
    records: &[LayerRecord<F>],
    output: &[F],
    problem: &SparseProblem<F>,
    alphas: &[F],
    reg: &Regularizer<F>,
    loss: LossKind,
    scale: F,
) -> Vec<F> {
    let n = output.len();
    let mut grads = vec![F::zero(); records.len()];
    let mut gx = output_gradient(output, problem, reg, loss, scale);
    if let (Some(last), LossKind::Unsupervised, RegularizerKind::L1) = (records.last(), loss, reg.kind) {
        for (((g, &x), &act), (&r, &gf)) in gx.iter_mut().zip(output).zip(&last.active).zip(last.r.iter().zip(&last.grad_f)) {
            if act && x == F::zero() {
                *g += scale * reg.lambda * direction(r, gf);
            }
        }
    }
    let mut gr = vec![F::zero(); n];
    let mut tmp = vec![F::zero(); n];
    for (t, rec) in records.iter().enumerate().rev() {
        for ((g, &x), &act) in gr.iter_mut().zip(&gx).zip(&rec.active) {
            *g = if act { x } else { F::zero() };
        }
        let mut d_alpha = -linalg::dot(&gr, &rec.grad_f);
        if reg.kind == RegularizerKind::L1 {
            let direct = gr
                .iter()
                .zip(rec.r.iter().zip(&rec.grad_f))
                .fold(F::zero(), |acc, (&g, (&r, &gf))| acc + g * direction(r, gf));
            d_alpha -= reg.lambda * direct;
        }
        grads[t] = d_alpha;
        if t > 0 {
            problem.a.apply_gram(&gr, &mut tmp);
            let alpha = alphas[t];
            for ((x, &g), &h) in gx.iter_mut().zip(&gr).zip(&tmp) {
                *x = g - alpha * h;
            }
        }
    }
    grads
}

pub fn backward_step_sizes<F: Scalar>(
    tape: &Tape<F>,
    batch: &[SparseProblem<F>],
    schedule: &StepSchedule<F>,
    reg: &Regularizer<F>,
    loss: LossKind,
) -> Result<Vec<F>> {
    backward_step_sizes_with(tape, batch, schedule, reg, loss, Execution::Sequential)
}

/// `∂loss/∂α_t` for `t < tape.t_layers`, summed over the batch in batch order.
pub fn backward_step_sizes_with<F: Scalar>(
    tape: &Tape<F>,
    batch: &[SparseProblem<F>],
    schedule: &StepSchedule<F>,
    reg: &Regularizer<F>,
    loss: LossKind,
    exec: Execution,
) -> Result<Vec<F>> {
    if tape.batch_size() != batch.len() {
        return Err(Error::Contract(format!(
            "tape holds {} items but the batch has {}",
            tape.batch_size(),
            batch.len()
        )));
    }
    if tape.t_layers > schedule.len() || schedule.alphas[..tape.t_layers] != tape.alphas[..] {
        return Err(Error::Contract("schedule differs from the one used in the forward pass".into()));
    }
    if tape.reg != *reg {
        return Err(Error::Contract("regularizer differs from the one used in the forward pass".into()));
    }
    check_aligned(&tape.outputs, batch)?;
    let scale = loss_scale(batch);
    let alphas = &tape.alphas;
    let item = |i: usize| {
        backward_item(
            &tape.records[i],
            tape.outputs[i].as_slice().unwrap(),
            &batch[i],
            alphas,
            reg,
            loss,
            scale,
        )
    };
    let per_item: Vec<Vec<F>> = match exec {
        Execution::Sequential => (0..batch.len()).map(item).collect(),
        Execution::Parallel => (0..batch.len()).into_par_iter().map(item).collect(),
    };
    let mut total = vec![F::zero(); tape.t_layers];
    for g in &per_item {
        for (acc, &v) in total.iter_mut().zip(g) {
            *acc += v;
        }
    }
    Ok(total)
}

/// Loss and its step-size gradient in one call.
pub fn loss_and_gradient<F: Scalar>(
    batch: &[SparseProblem<F>],
    schedule: &StepSchedule<F>,
    reg: &Regularizer<F>,
    t_layers: usize,
    loss: LossKind,
    exec: Execution,
) -> Result<(F, Vec<F>)> {
    let (outputs, tape) = forward_unrolled_with(batch, schedule, reg, t_layers, exec)?;
    let value = loss_value(&outputs, batch, reg, loss)?;
    let grad = backward_step_sizes_with(&tape, batch, schedule, reg, loss, exec)?;
    Ok((value, grad))
}
