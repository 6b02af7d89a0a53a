//! Central finite-difference check of the analytic gradients, per parameter
//! group.

use alloc::vec::Vec;

use crate::encoder::TimeNorm;
use crate::error::Result;
use crate::math;
use crate::model::{ForwardEnv, Model};
use crate::params::Grads;
use crate::tape::Tape;
use crate::trainer::{batch_norm, Dataset, Stage};

#[derive(Debug, Clone, PartialEq)]
pub struct GroupCheck {
    pub label: &'static str,
    pub prefix: &'static str,
    pub scalars: usize,
    pub analytic_norm: f64,
    /// `|g_analytic - g_numeric| / max(|g_analytic|, |g_numeric|)` over the group.
    pub relative_error: f64,
}

impl GroupCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.scalars > 0 && self.analytic_norm > 0.0 && self.relative_error <= tol
    }
}

/// Sum of both heads' squared log errors over `batch`, averaged.
fn objective(model: &Model, data: &Dataset, batch: &[usize], norm: TimeNorm, grads: Option<&mut Grads>) -> Result<f64> {
    let all = alloc::vec![true; model.params.len()];
    let env = ForwardEnv { store: data.store, contexts: &data.pre.contexts, norm };
    let mut tape = Tape::new(&model.params, &all);
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    let mut grads = grads;
    for &i in batch {
        tape.clear();
        let out = model.forward(&mut tape, &env, i, &data.pre.inputs[i])?;
        let task = &data.tasks[i];
        let mut terms = Vec::with_capacity(2);
        for (y, stage) in [(out.pop, Stage::Popularity), (out.con, Stage::Conversion)] {
            let ly = tape.ln_1p(y);
            let d = tape.add_scalar(ly, -math::ln_1p(stage.label(task)));
            terms.push(tape.square(d));
        }
        let loss = tape.add(terms[0], terms[1]);
        total += tape.scalar(loss);
        if let Some(g) = grads.as_deref_mut() {
            tape.backward(loss, scale, g);
        }
    }
    Ok(total * scale)
}

/// Compares analytic and central-difference gradients of every parameter
/// group over `batch`. At most `max_per_tensor` evenly spaced entries of each
/// tensor are perturbed.
pub fn check_gradients(model: &Model, data: &Dataset, batch: &[usize], step: f64, max_per_tensor: usize) -> Result<Vec<GroupCheck>> {
    let norm = batch_norm(data, batch);
    let mut analytic = Grads::zeros_like(&model.params);
    objective(model, data, batch, norm, Some(&mut analytic))?;
    let mut probe = model.clone();
    let mut out = Vec::new();
    for (label, prefix) in model.parameter_groups() {
        let (mut diff, mut na, mut nn, mut scalars) = (0.0, 0.0, 0.0, 0usize);
        let ids: Vec<_> = model.params.iter().filter(|(_, n, _)| n.starts_with(prefix)).map(|(id, _, t)| (id, t.len())).collect();
        for (id, len) in ids {
            let stride = len.div_ceil(max_per_tensor.max(1)).max(1);
            for k in (0..len).step_by(stride) {
                let orig = probe.params.get(id).data[k];
                probe.params.get_mut(id).data[k] = orig + step;
                let up = objective(&probe, data, batch, norm, None)?;
                probe.params.get_mut(id).data[k] = orig - step;
                let down = objective(&probe, data, batch, norm, None)?;
                probe.params.get_mut(id).data[k] = orig;
                let numeric = (up - down) / (2.0 * step);
                let a = analytic.get(id)[k];
                diff += (a - numeric) * (a - numeric);
                na += a * a;
                nn += numeric * numeric;
                scalars += 1;
            }
        }
        let denom = math::sqrt(na).max(math::sqrt(nn));
        let relative_error = if denom == 0.0 { 0.0 } else { math::sqrt(diff) / denom };
        out.push(GroupCheck { label, prefix, scalars, analytic_norm: math::sqrt(na), relative_error });
    }
    Ok(out)
}
