//! Adam optimizer with the standard defaults (beta1 = 0.9, beta2 = 0.999,
//! eps = 1e-8). Fully deterministic: state layout follows parameter
//! registration order.

use super::ParamStore;

pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: store.entries().iter().map(|p| vec![0.0; p.data.len()]).collect(),
            v: store.entries().iter().map(|p| vec![0.0; p.data.len()]).collect(),
        }
    }

    /// One update step. `grads` must align with the store's registration
    /// order (see [`super::collect_grads`]).
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Vec<f64>], lr: f64) {
        assert_eq!(grads.len(), self.m.len(), "gradient/state count mismatch");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((param, grad), (m, v)) in store
            .entries_mut()
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for i in 0..param.data.len() {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                param.data[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(v: f64) -> ParamStore {
        let mut store = ParamStore::new();
        store.register("x", &[1], vec![v]).unwrap();
        store
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut store = scalar_store(1.5);
        let mut adam = Adam::new(&store);
        adam.step(&mut store, &[vec![0.0]], 0.001);
        adam.step(&mut store, &[vec![0.0]], 0.001);
        assert_eq!(store.get("x").unwrap().data[0], 1.5);
    }

    #[test]
    fn unit_gradient_first_step_moves_by_learning_rate() {
        // t=1, g=1: m_hat = 1, v_hat = 1, so the step is lr/(1 + eps).
        let mut store = scalar_store(0.0);
        let mut adam = Adam::new(&store);
        adam.step(&mut store, &[vec![1.0]], 0.001);
        let x = store.get("x").unwrap().data[0];
        let expected = -0.001 / (1.0 + 1e-8);
        assert!((x - expected).abs() < 1e-15, "x = {x}");
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let mut store = scalar_store(0.3);
            store.register("y", &[2], vec![1.0, -2.0]).unwrap();
            let mut adam = Adam::new(&store);
            for step in 0..25 {
                let g = 0.1 * (step as f64 + 1.0);
                adam.step(&mut store, &[vec![g], vec![-g, g * 0.5]], 0.01);
            }
            store.to_bytes()
        };
        assert_eq!(run(), run());
    }
}
