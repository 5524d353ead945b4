//! Central finite-difference verification of the backward pass.
//!
//! A probe perturbs one input element by ±ε and compares the symmetric
//! difference quotient against the analytic gradient. Near a ReLU zero
//! crossing or a max-pool argmax swap the quotient straddles a kink and is
//! meaningless, so each probe records the graph's activation pattern at
//! both evaluation points and is skipped when the patterns differ.

use rand_chacha::ChaCha20Rng;

use super::graph::{topo_order, Var};
use super::ops::Op;
use crate::rng::fnv1a64_extend;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    /// Largest relative error among accepted probes.
    pub max_rel_err: f64,
    /// Probes compared against the analytic gradient.
    pub checks: usize,
    /// Probes discarded because ±ε crossed an activation kink.
    pub skipped: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.checks > 0 && self.max_rel_err <= tol
    }
}

/// Outcome of one probe-set run; `Degenerate` means every probe landed on
/// a kink and the caller should rebuild with a fresh seed.
#[derive(Debug, Clone, Copy)]
pub enum GradCheckOutcome {
    Checked(GradCheckReport),
    Degenerate,
}

/// Hash of the piecewise-linear region the graph currently sits in: ReLU
/// sign patterns, max-pool switch choices, and dropout masks.
fn activation_signature(loss: &Var) -> u64 {
    let mut h = 0xcbf29ce484222325;
    for var in topo_order(loss) {
        let node = var.node.borrow();
        match &node.op {
            Op::Relu => {
                let parent = node.parents[0].node.borrow();
                let bits: Vec<u8> = parent
                    .value
                    .iter()
                    .map(|&x| if x > 0.0 { 1u8 } else { 0u8 })
                    .collect();
                h = fnv1a64_extend(h, &bits);
            }
            Op::MaxPool2d { switches } => {
                for &s in switches {
                    h = fnv1a64_extend(h, &(s as u64).to_le_bytes());
                }
            }
            Op::Dropout { mask } => {
                let bits: Vec<u8> = mask
                    .iter()
                    .map(|&x| if x != 0.0 { 1u8 } else { 0u8 })
                    .collect();
                h = fnv1a64_extend(h, &bits);
            }
            _ => {}
        }
    }
    h
}

/// Checks `build`'s analytic gradients w.r.t. `inputs` (leaf vars feeding
/// the closure) against central differences with step `eps`. `build` must
/// be a pure function of the current input values: it is re-evaluated
/// twice per probe. Up to `max_probes` elements are sampled per input.
pub fn gradcheck(
    inputs: &[Var],
    build: &dyn Fn() -> Var,
    max_probes: usize,
    eps: f64,
    rng: &mut ChaCha20Rng,
) -> GradCheckOutcome {
    assert!(eps > 0.0);
    for v in inputs {
        assert!(v.is_leaf(), "gradcheck inputs must be leaves");
        v.zero_grad();
    }
    let loss = build();
    loss.backward();
    let analytic: Vec<Vec<f64>> = inputs.iter().map(|v| v.grad().iter().cloned().collect()).collect();

    let mut max_rel: f64 = 0.0;
    let mut checks = 0usize;
    let mut skipped = 0usize;
    for (vi, v) in inputs.iter().enumerate() {
        let n = v.len();
        let probes: Vec<usize> = if n <= max_probes {
            (0..n).collect()
        } else {
            rand::seq::index::sample(rng, n, max_probes).into_vec()
        };
        let base = v.value();
        for idx in probes {
            let mut up = base.clone();
            *up.iter_mut().nth(idx).unwrap() += eps;
            v.set_value(up);
            let loss_up = build();
            let f_up = loss_up.item();
            let sig_up = activation_signature(&loss_up);

            let mut dn = base.clone();
            *dn.iter_mut().nth(idx).unwrap() -= eps;
            v.set_value(dn);
            let loss_dn = build();
            let f_dn = loss_dn.item();
            let sig_dn = activation_signature(&loss_dn);

            v.set_value(base.clone());
            if sig_up != sig_dn {
                skipped += 1;
                continue;
            }
            let numeric = (f_up - f_dn) / (2.0 * eps);
            let a = analytic[vi][idx];
            let rel = (a - numeric).abs() / 1.0f64.max(a.abs()).max(numeric.abs());
            max_rel = max_rel.max(rel);
            checks += 1;
        }
    }
    if checks == 0 {
        GradCheckOutcome::Degenerate
    } else {
        GradCheckOutcome::Checked(GradCheckReport {
            max_rel_err: max_rel,
            checks,
            skipped,
        })
    }
}
