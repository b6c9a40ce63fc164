/// Adam over a fixed sequence of parameter tensors.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Start a new step; call [`Adam::update`] once per tensor in a stable order.
    pub fn begin_step(&mut self) -> AdamStep<'_> {
        self.step += 1;
        AdamStep {
            t: self.step as i32,
            index: 0,
            opt: self,
        }
    }
}

pub struct AdamStep<'a> {
    opt: &'a mut Adam,
    t: i32,
    index: usize,
}

impl AdamStep<'_> {
    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), grads.len(), "parameter/gradient length mismatch");
        let opt = &mut *self.opt;
        if opt.moments.len() <= self.index {
            opt.moments.push((vec![0.0; params.len()], vec![0.0; params.len()]));
        }
        let (m, v) = &mut opt.moments[self.index];
        assert_eq!(m.len(), params.len(), "tensor order changed between steps");
        let c1 = 1.0 - opt.beta1.powi(self.t);
        let c2 = 1.0 - opt.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grads[i];
            m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * g;
            v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * g * g;
            params[i] -= opt.learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + opt.eps);
        }
        self.index += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut opt = Adam::new(0.1);
        let mut p = vec![1.0, -1.0];
        opt.begin_step().update(&mut p, &[3.0, -0.5]);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut opt = Adam::new(0.05);
        let mut p = vec![4.0, -3.0];
        for _ in 0..2000 {
            let g: Vec<f64> = p.iter().map(|x| 2.0 * (x - 1.0)).collect();
            opt.begin_step().update(&mut p, &g);
        }
        assert!(p.iter().all(|x| (x - 1.0).abs() < 1e-3));
    }
}
