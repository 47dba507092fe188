use super::{Param, Parameterized};

/// Adam with bias correction and no weight decay.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    step: i32,
    moments: Vec<(Vec<f32>, Vec<f32>)>,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: Vec::new(),
        }
    }
}

impl Adam {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    /// Updates every trainable parameter of `model` from its accumulated gradient.
    pub fn step(&mut self, model: &mut dyn Parameterized, lr: f32) {
        self.step += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let bc1 = 1.0 - b1.powi(self.step);
        let bc2 = 1.0 - b2.powi(self.step);
        let mut slot = 0;
        let moments = &mut self.moments;
        model.visit_mut(&mut |p: &mut Param| {
            if !p.trainable {
                return;
            }
            if moments.len() <= slot {
                moments.push((vec![0.0; p.len()], vec![0.0; p.len()]));
            }
            let (m, v) = &mut moments[slot];
            assert_eq!(m.len(), p.len(), "optimizer state does not match {}", p.name);
            for i in 0..p.len() {
                let g = p.grad[i];
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p.value[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
            slot += 1;
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Quadratic(Param);

    impl Parameterized for Quadratic {
        fn visit(&self, f: &mut dyn FnMut(&Param)) {
            f(&self.0)
        }
        fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
            f(&mut self.0)
        }
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut q = Quadratic(Param::new("x", vec![2], vec![3.0, -2.0]));
        let mut adam = Adam::new();
        for _ in 0..2000 {
            q.zero_grad();
            let x = q.0.value.clone();
            q.0.grad = x.iter().map(|v| 2.0 * v).collect();
            adam.step(&mut q, 0.05);
        }
        assert!(q.0.value.iter().all(|v| v.abs() < 1e-2), "{:?}", q.0.value);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut q = Quadratic(Param::new("x", vec![1], vec![1.0]));
        q.0.grad = vec![0.3];
        let mut adam = Adam::new();
        adam.step(&mut q, 0.01);
        assert!((q.0.value[0] - 0.99).abs() < 1e-6);
    }

    #[test]
    fn buffers_are_untouched() {
        let mut q = Quadratic(Param::buffer("b", vec![1], vec![1.0]));
        q.0.grad = vec![5.0];
        Adam::new().step(&mut q, 0.1);
        assert_eq!(q.0.value, vec![1.0]);
    }
}
