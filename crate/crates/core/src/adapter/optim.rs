use crate::float::Float;

/// Linear warmup from 0 to the base rate, then half-cosine decay to 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarmupCosine<F> {
    pub base_lr: F,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl<F: Float> WarmupCosine<F> {
    /// Warmup length is `ceil(warmup_fraction * total_steps)`.
    pub fn new(base_lr: F, total_steps: usize, warmup_fraction: f64) -> Self {
        let warmup_steps = (warmup_fraction * total_steps as f64).ceil() as usize;
        WarmupCosine {
            base_lr,
            warmup_steps: warmup_steps.min(total_steps),
            total_steps,
        }
    }

    /// Rate for the 0-based optimizer step.
    pub fn lr_at(&self, step: usize) -> F {
        if step < self.warmup_steps {
            return self.base_lr * F::from_count(step) / F::from_count(self.warmup_steps.max(1));
        }
        let decay_steps = self.total_steps.saturating_sub(self.warmup_steps).max(1);
        let progress = F::from_count(step - self.warmup_steps) / F::from_count(decay_steps);
        let pi = F::cast(std::f64::consts::PI);
        let factor = F::half() * (F::one() + (pi * progress).cos());
        self.base_lr * factor.max(F::zero())
    }
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW<F> {
    pub beta1: F,
    pub beta2: F,
    pub eps: F,
    pub weight_decay: F,
    m: Vec<F>,
    v: Vec<F>,
    t: i32,
}

impl<F: Float> AdamW<F> {
    pub fn new(n_params: usize, weight_decay: F) -> Self {
        AdamW {
            beta1: F::cast(0.9),
            beta2: F::cast(0.999),
            eps: F::cast(1e-8),
            weight_decay,
            m: vec![F::zero(); n_params],
            v: vec![F::zero(); n_params],
            t: 0,
        }
    }

    /// One update. `decay[i]` selects which parameters receive weight decay.
    pub fn step(&mut self, params: &mut [F], grads: &[F], decay: &dyn Fn(usize) -> bool, lr: F) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let bc1 = F::one() - self.beta1.powi(self.t);
        let bc2 = F::one() - self.beta2.powi(self.t);
        for (i, (p, &g)) in params.iter_mut().zip(grads).enumerate() {
            if decay(i) {
                *p = *p - lr * self.weight_decay * *p;
            }
            self.m[i] = self.beta1 * self.m[i] + (F::one() - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (F::one() - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            *p = *p - lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}
