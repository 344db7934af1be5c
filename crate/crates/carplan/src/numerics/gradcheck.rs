//! Central finite-difference gradient verification, independent of the tape's
//! backward pass: the oracle only ever calls the forward path.

use super::params::{Binding, ParamStore};
use super::tape::{Tape, ValueId};
use super::NumericsError;

#[derive(Debug, Clone)]
pub struct BlockReport {
    pub name: String,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockReport>,
    pub max_rel_error: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }
}

/// Differences at or below this count as agreement outright. Parameters with
/// structurally zero gradients (attention key biases cancel through the
/// softmax shift) leave only f64 evaluation noise (~1e-10) in the finite
/// difference, which the relative formula's 1e-8 floor would otherwise
/// amplify into spurious percent-level "errors".
const ABS_AGREE: f64 = 1e-8;

fn rel_error(ad: f64, fd: f64) -> f64 {
    if (ad - fd).abs() <= ABS_AGREE {
        return 0.0;
    }
    (ad - fd).abs() / (ad.abs() + fd.abs()).max(1e-8)
}

/// Compare per-parameter analytic and finite-difference gradients.
/// Both inputs are flat per-block vectors aligned to the store's order.
pub fn compare_gradients(
    store: &ParamStore,
    analytic: &[Vec<f64>],
    numeric: &[Vec<f64>],
) -> GradCheckReport {
    let mut blocks = Vec::new();
    let mut overall = 0.0f64;
    for (idx, (name, _)) in store.iter().enumerate() {
        let mut worst = 0.0f64;
        for (a, f) in analytic[idx].iter().zip(&numeric[idx]) {
            worst = worst.max(rel_error(*a, *f));
        }
        overall = overall.max(worst);
        blocks.push(BlockReport { name: name.to_string(), max_rel_error: worst });
    }
    GradCheckReport { blocks, max_rel_error: overall }
}

/// Verify the tape gradient of `loss_fn` against central finite differences,
/// perturbing every scalar in the store by ±epsilon.
///
/// `loss_fn` must build the loss on the provided tape from the binding alone,
/// deterministically.
pub fn grad_check<F>(
    store: &mut ParamStore,
    epsilon: f64,
    mut loss_fn: F,
) -> Result<GradCheckReport, NumericsError>
where
    F: FnMut(&mut Tape, &Binding) -> ValueId,
{
    // Analytic gradients from one forward + backward.
    let mut tape = Tape::new();
    let binding = store.bind(&mut tape);
    let loss = loss_fn(&mut tape, &binding);
    let loss_val = tape.scalar(loss);
    if !loss_val.is_finite() {
        return Err(NumericsError::NonFiniteLoss(format!("loss = {loss_val}")));
    }
    let grads = tape.backward(loss);
    let analytic: Vec<Vec<f64>> =
        binding.ids().iter().map(|&id| grads.of(id).to_vec()).collect();

    // Finite differences, one scalar at a time.
    let mut numeric: Vec<Vec<f64>> = Vec::with_capacity(store.len());
    for p in 0..store.len() {
        let n = store.tensor(super::ParamId(p)).numel();
        let mut fd = vec![0.0; n];
        for k in 0..n {
            let orig = store.tensor(super::ParamId(p)).data[k];

            store.tensor_mut(super::ParamId(p)).data[k] = orig + epsilon;
            let plus = eval_loss(store, &mut loss_fn)?;

            store.tensor_mut(super::ParamId(p)).data[k] = orig - epsilon;
            let minus = eval_loss(store, &mut loss_fn)?;

            store.tensor_mut(super::ParamId(p)).data[k] = orig;
            fd[k] = (plus - minus) / (2.0 * epsilon);
        }
        numeric.push(fd);
    }

    Ok(compare_gradients(store, &analytic, &numeric))
}

fn eval_loss<F>(store: &ParamStore, loss_fn: &mut F) -> Result<f64, NumericsError>
where
    F: FnMut(&mut Tape, &Binding) -> ValueId,
{
    let mut tape = Tape::new();
    let binding = store.bind(&mut tape);
    let loss = loss_fn(&mut tape, &binding);
    let v = tape.scalar(loss);
    if !v.is_finite() {
        return Err(NumericsError::NonFiniteLoss(format!("loss = {v}")));
    }
    Ok(v)
}
