use super::Tensor;

/// Adam moment estimates for one parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> AdamState {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect();
        AdamState {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn optimizer_step(params: &mut [Tensor], grads: &[Tensor], state: &mut AdamState, lr: f64) {
    assert_eq!(params.len(), grads.len(), "gradient count");
    assert_eq!(params.len(), state.m.len(), "optimizer state count");
    state.step += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        assert_eq!(p.shape(), g.shape(), "gradient shape");
        for (((pi, gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *pi -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![Tensor::vector(vec![1.0, -2.0, 3.5])];
        let before = p.clone();
        let mut s = AdamState::new(&p);
        for _ in 0..10 {
            optimizer_step(&mut p, &[Tensor::zeros(vec![3])], &mut s, 0.1);
        }
        assert_eq!(p, before);
    }

    #[test]
    fn constant_gradient_decreases_monotonically() {
        let mut p = vec![Tensor::vector(vec![0.0])];
        let mut s = AdamState::new(&p);
        let mut prev = 0.0;
        for _ in 0..200 {
            optimizer_step(&mut p, &[Tensor::vector(vec![0.7])], &mut s, 0.01);
            let x = p[0].data()[0];
            assert!(x < prev);
            prev = x;
        }
    }

    #[test]
    fn quadratic_bowl_converges_to_minimum() {
        // f(x) = (x - 3)^2, f'(x) = 2 (x - 3)
        let mut p = vec![Tensor::vector(vec![0.0])];
        let mut s = AdamState::new(&p);
        let mut converged_at = None;
        for step in 1..=5000 {
            let x = p[0].data()[0];
            optimizer_step(&mut p, &[Tensor::vector(vec![2.0 * (x - 3.0)])], &mut s, 0.01);
            if converged_at.is_none() && (p[0].data()[0] - 3.0).abs() < 1e-3 {
                converged_at = Some(step);
            }
        }
        assert!(converged_at.is_some());
        assert!((p[0].data()[0] - 3.0).abs() < 1e-3, "ended at {}", p[0].data()[0]);
    }

    #[test]
    fn update_is_deterministic() {
        let run = || {
            let mut p = vec![Tensor::vector(vec![0.5, 0.25])];
            let mut s = AdamState::new(&p);
            for k in 0..20 {
                let g = Tensor::vector(vec![(k as f64).sin(), (k as f64).cos()]);
                optimizer_step(&mut p, &[g], &mut s, 0.05);
            }
            p
        };
        assert_eq!(run(), run());
    }
}
