//! Adaptive-moment optimizer over f32-stored parameters with f64 moments.

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    slots: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            step: 0,
            slots: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Starts a new step; call once before the per-slot updates.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// Updates one parameter group in place and returns which entries changed.
    /// A zero learning rate still advances the moments but never touches
    /// `params`.
    pub fn update(&mut self, slot: usize, params: &mut [f32], grads: &[f64], lr: f64) -> bool {
        assert_eq!(params.len(), grads.len(), "parameter and gradient lengths differ");
        if self.slots.len() <= slot {
            self.slots.resize(slot + 1, (Vec::new(), Vec::new()));
        }
        let (m, v) = &mut self.slots[slot];
        if m.len() != params.len() {
            *m = vec![0.0; params.len()];
            *v = vec![0.0; params.len()];
        }
        let t = self.step.max(1) as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let mut changed = false;
        for i in 0..params.len() {
            let g = grads[i];
            m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
            v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
            if lr == 0.0 {
                continue;
            }
            let delta = lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            let next = (params[i] as f64 - delta) as f32;
            changed |= next != params[i];
            params[i] = next;
        }
        changed
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut adam = Adam::new(0.9, 0.999, 1e-8);
        let mut p = [1.0f32, -2.0];
        adam.begin_step();
        adam.update(0, &mut p, &[3.0, -0.5], 0.1);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 1.9).abs() < 1e-6);
    }

    #[test]
    fn zero_rate_is_bit_identical() {
        let mut adam = Adam::new(0.9, 0.999, 1e-8);
        let orig = [0.1f32, 1e-30, -7.25, f32::MIN_POSITIVE];
        let mut p = orig;
        for _ in 0..3 {
            adam.begin_step();
            assert!(!adam.update(0, &mut p, &[1.0, -1.0, 5.0, 0.0], 0.0));
        }
        assert_eq!(p.map(f32::to_bits), orig.map(f32::to_bits));
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut adam = Adam::new(0.9, 0.999, 1e-8);
        let mut p = [5.0f32];
        for _ in 0..2000 {
            adam.begin_step();
            let g = [2.0 * (p[0] as f64 - 1.5)];
            adam.update(0, &mut p, &g, 0.05);
        }
        assert!((p[0] - 1.5).abs() < 1e-2);
    }
}
