use crate::{ParamSet, Real, Result, TensorError};

/// Stochastic gradient descent with heavy-ball momentum:
/// `v ← μ·v + g`, `p ← p − lr·v`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sgd {
    pub learning_rate: Real,
    pub momentum: Real,
}

impl Sgd {
    pub fn new(learning_rate: Real, momentum: Real) -> Self {
        Sgd {
            learning_rate,
            momentum,
        }
    }

    /// Applies one update and zeroes all gradients. Nothing is modified if
    /// any gradient is non-finite.
    pub fn step(&self, params: &mut ParamSet) -> Result<()> {
        if let Some(bad) = params.iter().find(|p| !p.grad.is_finite()) {
            return Err(TensorError::NonFiniteGradient { id: bad.id.clone() });
        }
        for p in params.iter_mut() {
            let v = p.velocity.data_mut();
            for (vi, gi) in v.iter_mut().zip(p.grad.data()) {
                *vi = self.momentum * *vi + gi;
            }
            for (wi, vi) in p.value.data_mut().iter_mut().zip(p.velocity.data()) {
                *wi -= self.learning_rate * vi;
            }
            p.grad.data_mut().fill(0.0);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tensor;

    fn single(value: Real, grad: Real) -> ParamSet {
        let mut ps = ParamSet::new();
        let id = ps.add("p", Tensor::scalar(value)).unwrap();
        ps.get_mut(id).grad = Tensor::scalar(grad);
        ps
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let mut ps = single(1.0, 2.0);
        Sgd::new(0.0, 0.9).step(&mut ps).unwrap();
        assert_eq!(ps.iter().next().unwrap().value.data(), &[1.0]);
    }

    #[test]
    fn plain_step() {
        let mut ps = single(1.0, 2.0);
        Sgd::new(0.1, 0.0).step(&mut ps).unwrap();
        let p = ps.iter().next().unwrap();
        assert!((p.value.data()[0] - 0.8).abs() < 1e-12);
        assert_eq!(p.grad.data(), &[0.0]);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut ps = single(1.0, Real::NAN);
        let err = Sgd::new(0.1, 0.0).step(&mut ps).unwrap_err();
        assert!(matches!(err, TensorError::NonFiniteGradient { ref id } if id == "p"));
        assert_eq!(ps.iter().next().unwrap().value.data(), &[1.0]);
    }

    #[test]
    fn momentum_descends_quadratic() {
        // f(p) = ½·Σ aᵢ pᵢ², gradient aᵢ pᵢ.
        let a = [1.0, 4.0, 0.5];
        let mut ps = ParamSet::new();
        let id = ps.add("p", Tensor::from_vec([1, 3, 1, 1], vec![1.0, -2.0, 3.0]).unwrap()).unwrap();
        let loss = |ps: &ParamSet| -> Real {
            ps.value(id).data().iter().zip(&a).map(|(p, a)| 0.5 * a * p * p).sum()
        };
        let opt = Sgd::new(0.05, 0.2);
        let mut losses = vec![loss(&ps)];
        for _ in 0..50 {
            let g: Vec<Real> = ps.value(id).data().iter().zip(&a).map(|(p, a)| a * p).collect();
            ps.get_mut(id).grad = Tensor::from_vec([1, 3, 1, 1], g).unwrap();
            opt.step(&mut ps).unwrap();
            losses.push(loss(&ps));
        }
        for w in losses[5..].windows(2) {
            assert!(w[1] <= w[0], "{losses:?}");
        }
        assert!(losses[50] < 0.05 * losses[0]);
    }
}
