use super::{ParamStore, TensorError};

pub const ADAM_BETAS: (f64, f64) = (0.9, 0.999);
pub const ADAM_EPS: f64 = 1e-8;

/// Adaptive-moment state, one slot per parameter in store order.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    pub step: u64,
    pub weight_decay: Vec<f64>,
}

impl OptimizerState {
    pub fn for_store(store: &ParamStore) -> Self {
        OptimizerState {
            first_moment: store.iter().map(|p| vec![0.0; p.value.numel()]).collect(),
            second_moment: store.iter().map(|p| vec![0.0; p.value.numel()]).collect(),
            step: 0,
            weight_decay: store.iter().map(|p| p.weight_decay).collect(),
        }
    }
}

/// AdamW with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub state: OptimizerState,
    pub betas: (f64, f64),
    pub eps: f64,
}

impl AdamW {
    pub fn new(store: &ParamStore) -> Self {
        AdamW {
            state: OptimizerState::for_store(store),
            betas: ADAM_BETAS,
            eps: ADAM_EPS,
        }
    }

    /// Applies one update. `grads[i]` belongs to the i-th parameter of
    /// `store`; every parameter must have one.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Option<Vec<f64>>], lr: f64) -> Result<(), TensorError> {
        if !(lr > 0.0) {
            return Err(TensorError::InvalidArgument {
                op: "adamw_step",
                reason: format!("learning rate {lr} must be positive"),
            });
        }
        if grads.len() != store.len() || self.state.first_moment.len() != store.len() {
            return Err(TensorError::InvalidArgument {
                op: "adamw_step",
                reason: format!(
                    "{} gradients and {} optimizer slots for {} parameters",
                    grads.len(),
                    self.state.first_moment.len(),
                    store.len()
                ),
            });
        }
        for (i, g) in grads.iter().enumerate() {
            let p = store.by_id(i);
            match g {
                None => return Err(TensorError::MissingGrad(p.name.clone())),
                Some(g) if g.len() != p.value.numel() => {
                    return Err(TensorError::ShapeMismatch {
                        op: "adamw_step",
                        lhs: p.value.shape().to_vec(),
                        rhs: vec![g.len()],
                    })
                }
                _ => {}
            }
        }

        self.state.step += 1;
        let t = self.state.step as i32;
        let (b1, b2) = self.betas;
        let bc1 = 1.0 - b1.powi(t);
        let bc2 = 1.0 - b2.powi(t);
        for (i, g) in grads.iter().enumerate() {
            let g = g.as_deref().expect("checked above");
            let decay = 1.0 - lr * self.state.weight_decay[i];
            let m = &mut self.state.first_moment[i];
            let v = &mut self.state.second_moment[i];
            let p = store.by_id_mut(i).value.data_mut();
            for j in 0..p.len() {
                m[j] = b1 * m[j] + (1.0 - b1) * g[j];
                v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] = p[j] * decay - lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn store(values: &[(&str, f64, f64)]) -> ParamStore {
        let mut s = ParamStore::new();
        for &(name, v, wd) in values {
            s.insert(name, Tensor::scalar(v), wd).unwrap();
        }
        s
    }

    #[test]
    fn zero_grad_zero_decay_is_a_no_op() {
        let mut s = store(&[("a", 0.3, 0.0), ("b", -2.0, 0.0)]);
        let mut opt = AdamW::new(&s);
        opt.step(&mut s, &[Some(vec![0.0]), Some(vec![0.0])], 0.1).unwrap();
        assert_eq!(s.get("a").unwrap().value.data(), &[0.3]);
        assert_eq!(s.get("b").unwrap().value.data(), &[-2.0]);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut s = store(&[("p", 1.0, 0.0)]);
        let mut opt = AdamW::new(&s);
        opt.step(&mut s, &[Some(vec![1.0])], 0.1).unwrap();
        // 1 - 0.1 * 1 / (1 + 1e-8)
        let expected = 1.0 - 0.1 / (1.0 + 1e-8);
        assert!((s.get("p").unwrap().value.data()[0] - expected).abs() < 1e-15);
        assert_eq!(opt.state.step, 1);
    }

    #[test]
    fn decoupled_decay_shrinks_by_lr_times_coefficient() {
        let mut s = store(&[("skip", 2.0, 1.0e-2), ("other", 2.0, 5.0e-4)]);
        let mut opt = AdamW::new(&s);
        opt.step(&mut s, &[Some(vec![0.0]), Some(vec![0.0])], 0.1).unwrap();
        assert!((s.get("skip").unwrap().value.data()[0] - 2.0 * (1.0 - 0.1 * 1.0e-2)).abs() < 1e-15);
        assert!((s.get("other").unwrap().value.data()[0] - 2.0 * (1.0 - 0.1 * 5.0e-4)).abs() < 1e-15);
    }

    #[test]
    fn missing_grad_is_rejected_by_name() {
        let mut s = store(&[("w", 1.0, 0.0)]);
        let mut opt = AdamW::new(&s);
        let err = opt.step(&mut s, &[None], 0.1).unwrap_err();
        assert!(err.to_string().contains("`w`"), "{err}");
        assert_eq!(opt.state.step, 0);
    }

    #[test]
    fn step_counter_increments_by_one() {
        let mut s = store(&[("w", 1.0, 0.0)]);
        let mut opt = AdamW::new(&s);
        for k in 1..=4 {
            opt.step(&mut s, &[Some(vec![0.5])], 0.01).unwrap();
            assert_eq!(opt.state.step, k);
        }
    }
}
