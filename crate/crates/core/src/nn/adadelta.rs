use super::params::NetworkParams;
use crate::error::{Error, Result};

/// ADADELTA running averages, one accumulator pair per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub rho: f64,
    pub epsilon: f64,
    /// Running mean of squared gradients.
    pub(crate) sq_grad: NetworkParams,
    /// Running mean of squared updates.
    pub(crate) sq_update: NetworkParams,
}

impl OptimizerState {
    pub const DEFAULT_RHO: f64 = 0.95;
    pub const DEFAULT_EPSILON: f64 = 1e-6;

    pub fn new(classes: usize) -> Result<Self> {
        Self::with_hyperparameters(classes, Self::DEFAULT_RHO, Self::DEFAULT_EPSILON)
    }

    pub fn with_hyperparameters(classes: usize, rho: f64, epsilon: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rho) || epsilon <= 0.0 {
            return Err(Error::invalid(format!(
                "invalid ADADELTA hyperparameters rho={rho} eps={epsilon}"
            )));
        }
        Ok(OptimizerState {
            rho,
            epsilon,
            sq_grad: NetworkParams::zeros(classes)?,
            sq_update: NetworkParams::zeros(classes)?,
        })
    }

    pub(crate) fn from_parts(rho: f64, epsilon: f64, sq_grad: NetworkParams, sq_update: NetworkParams) -> Result<Self> {
        if !sq_grad.same_shape(&sq_update) {
            return Err(Error::shape("accumulator shapes differ"));
        }
        Ok(OptimizerState {
            rho,
            epsilon,
            sq_grad,
            sq_update,
        })
    }

    pub fn sq_grad(&self) -> &NetworkParams {
        &self.sq_grad
    }

    pub fn sq_update(&self) -> &NetworkParams {
        &self.sq_update
    }

    /// One element-wise update:
    ///
    /// ```text
    /// Eg2  <- rho * Eg2 + (1 - rho) * g^2
    /// dx    = -sqrt(Edx2 + eps) / sqrt(Eg2 + eps) * g
    /// Edx2 <- rho * Edx2 + (1 - rho) * dx^2
    /// x    <- x + dx
    /// ```
    pub fn step(&mut self, params: &mut NetworkParams, grads: &NetworkParams) -> Result<()> {
        if !params.same_shape(grads) || !params.same_shape(&self.sq_grad) {
            return Err(Error::shape(
                "optimizer, parameters and gradients must share a class count",
            ));
        }
        let (rho, eps) = (self.rho, self.epsilon);
        let groups = params
            .tensors_mut()
            .iter_mut()
            .zip(grads.tensors())
            .zip(self.sq_grad.tensors_mut().iter_mut().zip(self.sq_update.tensors_mut()));
        for ((x, g), (eg2, edx2)) in groups {
            for i in 0..x.len() {
                let gi = g[i];
                eg2[i] = rho * eg2[i] + (1.0 - rho) * gi * gi;
                let dx = -((edx2[i] + eps).sqrt() / (eg2[i] + eps).sqrt()) * gi;
                edx2[i] = rho * edx2[i] + (1.0 - rho) * dx * dx;
                x[i] += dx;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamGroup;

    /// Scalar reference for the update rule.
    fn scalar_step(eg2: f64, edx2: f64, g: f64, rho: f64, eps: f64) -> (f64, f64, f64) {
        let eg2 = rho * eg2 + (1.0 - rho) * g * g;
        let dx = -(edx2 + eps).sqrt() / (eg2 + eps).sqrt() * g;
        (eg2, rho * edx2 + (1.0 - rho) * dx * dx, dx)
    }

    #[test]
    fn zero_gradient_only_decays() {
        let mut params = NetworkParams::init(3, 1).unwrap();
        let before = params.clone();
        let mut st = OptimizerState::new(3).unwrap();
        st.sq_grad.group_mut(ParamGroup::FcBias)[0] = 2.0;
        st.sq_update.group_mut(ParamGroup::FcBias)[0] = 4.0;
        st.step(&mut params, &NetworkParams::zeros(3).unwrap()).unwrap();
        assert_eq!(params, before);
        assert!((st.sq_grad.group(ParamGroup::FcBias)[0] - 1.9).abs() < 1e-15);
        assert!((st.sq_update.group(ParamGroup::FcBias)[0] - 3.8).abs() < 1e-15);
    }

    #[test]
    fn first_step_value() {
        let mut params = NetworkParams::zeros(3).unwrap();
        let mut grads = NetworkParams::zeros(3).unwrap();
        grads.group_mut(ParamGroup::OutBias)[1] = 1.0;
        let mut st = OptimizerState::new(3).unwrap();
        st.step(&mut params, &grads).unwrap();
        let dx = params.group(ParamGroup::OutBias)[1];
        let (_, _, want) = scalar_step(0.0, 0.0, 1.0, 0.95, 1e-6);
        assert_eq!(dx, want);
        // -sqrt(1e-6) / sqrt(0.05 + 1e-6)
        assert!((dx - (-4.472091e-3)).abs() < 1e-8, "{dx}");
    }

    #[test]
    fn first_step_scale_invariance() {
        // dx(g) = -sqrt(eps) / sqrt((1 - rho) + eps / g^2): the scale cancels
        // except through eps / g^2, which moves dx by at most
        // |dx| * eps / (2 (1 - rho) g_min^2) ~ 4.5e-8 over g in {1, 10, 100}.
        let steps: Vec<f64> = [1.0, 10.0, 100.0]
            .iter()
            .map(|&g| scalar_step(0.0, 0.0, g, 0.95, 1e-6).2)
            .collect();
        let bound = steps[0].abs() * 1e-6 / (2.0 * 0.05);
        for s in &steps {
            assert!((s - steps[2]).abs() <= bound);
        }
        let mut st = OptimizerState::new(3).unwrap();
        for g in [1.0, 10.0, 100.0] {
            let mut params = NetworkParams::zeros(3).unwrap();
            let mut grads = NetworkParams::zeros(3).unwrap();
            grads.group_mut(ParamGroup::OutBias)[0] = g;
            st = OptimizerState::new(3).unwrap();
            st.step(&mut params, &grads).unwrap();
            assert_eq!(
                params.group(ParamGroup::OutBias)[0],
                scalar_step(0.0, 0.0, g, 0.95, 1e-6).2
            );
        }
        assert!(st.sq_grad.tensors().iter().flatten().all(|&v| v >= 0.0));
    }

    #[test]
    fn matches_scalar_reference_over_steps() {
        let mut params = NetworkParams::zeros(3).unwrap();
        let mut st = OptimizerState::new(3).unwrap();
        let (mut eg2, mut edx2, mut x) = (0.0, 0.0, 0.0);
        for k in 0..20 {
            let g = ((k as f64) * 0.7).sin() * 3.0;
            let mut grads = NetworkParams::zeros(3).unwrap();
            grads.group_mut(ParamGroup::Conv1Bias)[5] = g;
            st.step(&mut params, &grads).unwrap();
            let (a, b, dx) = scalar_step(eg2, edx2, g, 0.95, 1e-6);
            eg2 = a;
            edx2 = b;
            x += dx;
            assert!((params.group(ParamGroup::Conv1Bias)[5] - x).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_bad_hyperparameters_and_shapes() {
        assert!(OptimizerState::with_hyperparameters(3, 1.0, 1e-6).is_err());
        assert!(OptimizerState::with_hyperparameters(3, 0.9, 0.0).is_err());
        let mut st = OptimizerState::new(3).unwrap();
        let mut p = NetworkParams::zeros(10).unwrap();
        assert!(st.step(&mut p, &NetworkParams::zeros(10).unwrap()).is_err());
    }
}
