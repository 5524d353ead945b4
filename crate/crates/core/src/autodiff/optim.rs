use std::collections::BTreeMap;

use ndarray::Zip;

use super::paramset::{CheckpointError, ParamSet};
use super::Arr;
use crate::bytes::{Reader, Writer};

const MAGIC: &str = "MAGADAM1";

/// Adam with bias correction. Moment state is keyed by parameter name so a
/// checkpointed optimizer reattaches to a rebuilt [`ParamSet`].
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: BTreeMap<String, Arr>,
    v: BTreeMap<String, Arr>,
}

impl Adam {
    pub fn new(lr: f64) -> Adam {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One update over every parameter in the set, consuming (and zeroing)
    /// the accumulated gradients.
    pub fn step(&mut self, params: &ParamSet) {
        self.t += 1;
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        for (name, var) in params.iter() {
            let g = var.grad();
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Arr::zeros(g.raw_dim()));
            assert_eq!(m.shape(), g.shape(), "moment/grad shape drift for {name}");
            Zip::from(&mut *m).and(&g).for_each(|m, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
            });
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Arr::zeros(g.raw_dim()));
            Zip::from(&mut *v).and(&g).for_each(|v, &g| {
                *v = b2 * *v + (1.0 - b2) * g * g;
            });
            let m = &self.m[name];
            let v = &self.v[name];
            let mut value = var.value();
            Zip::from(&mut value).and(m).and(v).for_each(|x, &m, &v| {
                let mhat = m / bc1;
                let vhat = v / bc2;
                *x -= lr * mhat / (vhat.sqrt() + eps);
            });
            var.set_value(value);
            var.zero_grad();
        }
    }

    pub fn state_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.magic(MAGIC);
        w.u64(self.t);
        w.u32(self.m.len() as u32);
        for (name, m) in &self.m {
            w.str(name);
            w.arr(m);
            w.arr(&self.v[name]);
        }
        w.finish()
    }

    /// Restores step counter and moments; hyperparameters stay as
    /// constructed (they come from config, not checkpoints).
    pub fn restore_state(&mut self, bytes: &[u8]) -> Result<(), CheckpointError> {
        let mut r = Reader::new(bytes);
        r.magic(MAGIC)?;
        let t = r.u64()?;
        let count = r.u32()?;
        let mut m = BTreeMap::new();
        let mut v = BTreeMap::new();
        for _ in 0..count {
            let name = r.str()?;
            let ma = r.arr()?;
            let va = r.arr()?;
            if ma.shape() != va.shape() {
                return Err(CheckpointError::Mismatch(format!(
                    "moment shapes disagree for {name}"
                )));
            }
            m.insert(name.clone(), ma);
            v.insert(name, va);
        }
        r.expect_end()?;
        self.t = t;
        self.m = m;
        self.v = v;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::super::{arr_from, ParamSet, Var};
    use super::*;

    #[test]
    fn first_step_moves_by_about_lr() {
        let mut params = ParamSet::new();
        let x = params.param("x", arr_from(&[1], vec![5.0]));
        let mut opt = Adam::new(0.1);
        // Gradient of 1: bias correction makes the first step ≈ lr exactly
        // up to the eps term.
        let loss = x.mul(&Var::constant(arr_from(&[1], vec![1.0]))).sum_all();
        loss.backward();
        opt.step(&params);
        let moved = 5.0 - x.value()[[0]];
        assert!((moved - 0.1).abs() < 1e-6, "moved {moved}");
        // step() consumed the gradient.
        assert_eq!(x.grad()[[0]], 0.0);
    }

    #[test]
    fn zero_grad_leaves_parameter_unchanged() {
        let mut params = ParamSet::new();
        let x = params.param("x", arr_from(&[2], vec![1.0, -2.0]));
        let mut opt = Adam::new(0.1);
        opt.step(&params);
        assert_eq!(x.value(), arr_from(&[2], vec![1.0, -2.0]));
    }

    #[test]
    fn converges_on_square_in_100_steps() {
        let mut params = ParamSet::new();
        let x = params.param("x", arr_from(&[1], vec![1.0]));
        let mut opt = Adam::new(0.1);
        for _ in 0..100 {
            let loss = x.mul(&x).sum_all();
            loss.backward();
            opt.step(&params);
        }
        let v = x.value()[[0]].abs();
        assert!(v < 0.05, "|x| after 100 steps: {v}");
    }

    #[test]
    fn state_round_trips_and_resumes_identically() {
        let run = |resume_at: Option<usize>| -> f64 {
            let mut params = ParamSet::new();
            let x = params.param("x", arr_from(&[1], vec![1.0]));
            let mut opt = Adam::new(0.05);
            let mut saved: Option<(Vec<u8>, Vec<u8>)> = None;
            for i in 0..20 {
                if Some(i) == resume_at {
                    let s = saved.take().unwrap();
                    params.apply_bytes(&s.0).unwrap();
                    let mut fresh = Adam::new(0.05);
                    fresh.restore_state(&s.1).unwrap();
                    opt = fresh;
                }
                let loss = x.mul(&x).sum_all();
                loss.backward();
                opt.step(&params);
                if i == 9 && resume_at.is_some() {
                    saved = Some((params.to_bytes(), opt.state_bytes()));
                }
            }
            x.value()[[0]]
        };
        let plain = run(None);
        // Save at step 10, then at step 10 (same index) rewind onto the
        // snapshot: the tail must replay bit-exactly.
        let resumed = run(Some(10));
        assert_eq!(plain.to_bits(), resumed.to_bits());
    }
}
