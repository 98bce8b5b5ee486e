use serde::{Deserialize, Serialize};

use super::mlp::ParameterSet;
use super::tensor::Tensor2;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamHyper {
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            step_size: 1e-4,
            beta1: 0.5,
            beta2: 0.9,
            eps: 1e-8,
        }
    }
}

impl AdamHyper {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("optimizer.beta1/beta2", "must lie in [0, 1)"));
        }
        if !(self.step_size > 0.0) || !(self.eps > 0.0) {
            return Err(Error::config("optimizer.step_size/eps", "must be positive"));
        }
        Ok(())
    }
}

/// First/second moment estimates and the step counter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub first: Vec<Tensor2>,
    pub second: Vec<Tensor2>,
}

impl AdamState {
    pub fn new(params: &ParameterSet) -> Self {
        let zeros: Vec<Tensor2> = params
            .blocks
            .iter()
            .map(|b| Tensor2::zeros(b.tensor.rows, b.tensor.cols))
            .collect();
        AdamState {
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(
    params: &mut ParameterSet,
    grads: &ParameterSet,
    state: &mut AdamState,
    hyper: &AdamHyper,
) -> Result<()> {
    if params.blocks.len() != grads.blocks.len() || params.blocks.len() != state.first.len() {
        return Err(Error::Contract("optimizer block count mismatch".into()));
    }
    for (p, g) in params.blocks.iter().zip(&grads.blocks) {
        if p.tensor.shape() != g.tensor.shape() {
            return Err(Error::Contract(format!("gradient shape mismatch for block {}", p.name)));
        }
    }
    if !grads.is_finite() {
        return Err(Error::Divergence {
            iteration: state.step as usize,
            reason: "non-finite gradient entry".into(),
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (hyper.beta1, hyper.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (i, (p, g)) in params.blocks.iter_mut().zip(&grads.blocks).enumerate() {
        let m = &mut state.first[i].data;
        let v = &mut state.second[i].data;
        for (((w, &gi), mi), vi) in p.tensor.data.iter_mut().zip(&g.tensor.data).zip(m).zip(v) {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let mhat = *mi / c1;
            let vhat = *vi / c2;
            *w -= hyper.step_size * mhat / (vhat.sqrt() + hyper.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::mlp::NamedTensor;

    fn set(values: Vec<f64>) -> ParameterSet {
        ParameterSet {
            blocks: vec![NamedTensor::new("w", Tensor2::row_vector(values))],
        }
    }

    #[test]
    fn zero_gradient_leaves_params_and_counts_step() {
        let mut p = set(vec![1.0, -2.0]);
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &set(vec![0.0, 0.0]), &mut st, &AdamHyper::default()).unwrap();
        assert_eq!(p, set(vec![1.0, -2.0]));
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_without_momentum_is_sign_like() {
        let hyper = AdamHyper { step_size: 0.1, beta1: 0.0, beta2: 0.0, eps: 1e-8 };
        let g = [0.5, -3.0, 1e-3];
        let mut p = set(vec![0.0; 3]);
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &set(g.to_vec()), &mut st, &hyper).unwrap();
        for (w, gi) in p.blocks[0].tensor.data.iter().zip(g) {
            assert_eq!(*w, -0.1 * gi / (gi.abs() + 1e-8));
        }
    }

    #[test]
    fn two_steps_match_hand_trace() {
        // g = 0.2 twice, lr = 0.01, beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
        // step 1: m = 0.02, v = 4e-5, mhat = 0.2, vhat = 0.04 -> dw = -0.01*0.2/(0.2+1e-8)
        // step 2: m = 0.038, v = 7.996e-5, mhat = 0.038/0.19 = 0.2,
        //         vhat = 7.996e-5/0.001999 = 0.04 -> same update again.
        let hyper = AdamHyper { step_size: 0.01, beta1: 0.9, beta2: 0.999, eps: 1e-8 };
        let mut p = set(vec![1.0]);
        let mut st = AdamState::new(&p);
        let g = set(vec![0.2]);
        adam_step(&mut p, &g, &mut st, &hyper).unwrap();
        adam_step(&mut p, &g, &mut st, &hyper).unwrap();
        let expected = 1.0 - 2.0 * 0.01 * 0.2 / (0.2 + 1e-8);
        assert!((p.blocks[0].tensor.data[0] - expected).abs() < 1e-15);
        assert!((st.first[0].data[0] - 0.038).abs() < 1e-15);
        assert!((st.second[0].data[0] - 7.996e-5).abs() < 1e-18);
        assert_eq!(st.step, 2);
    }

    #[test]
    fn non_finite_gradient_is_divergence() {
        let mut p = set(vec![1.0]);
        let mut st = AdamState::new(&p);
        let err = adam_step(&mut p, &set(vec![f64::NAN]), &mut st, &AdamHyper::default()).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }));
        assert_eq!(p, set(vec![1.0]));
    }
}
