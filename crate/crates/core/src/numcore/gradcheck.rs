//! Central finite-difference verification of tape gradients.

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Named parameters together with their analytic gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradRecord {
    pub parameters: Vec<(String, Tensor)>,
    pub analytic_grads: Vec<Tensor>,
}

impl GradRecord {
    pub fn new(parameters: Vec<(String, Tensor)>, analytic_grads: Vec<Tensor>) -> Result<Self> {
        if parameters.len() != analytic_grads.len() {
            return Err(Error::Contract(format!(
                "{} parameters but {} gradients",
                parameters.len(),
                analytic_grads.len()
            )));
        }
        for ((name, p), g) in parameters.iter().zip(&analytic_grads) {
            if p.shape() != g.shape() {
                return Err(Error::Dimension(format!(
                    "gradient for {name} has shape {:?}, parameter has {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
        }
        Ok(Self {
            parameters,
            analytic_grads,
        })
    }

    pub fn grad(&self, name: &str) -> Option<&Tensor> {
        self.parameters
            .iter()
            .position(|(n, _)| n == name)
            .map(|i| &self.analytic_grads[i])
    }
}

fn eval_scalar<F>(op: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = op(&mut g, &vars)?;
    g.value(out).item()
}

/// Analytic gradients of a scalar-valued `op` with respect to every input.
pub fn analytic_gradients<F>(op: &F, inputs: &[Tensor]) -> Result<(f64, Vec<Tensor>)>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = op(&mut g, &vars)?;
    if !g.value(out).is_scalar() {
        return Err(Error::Contract(format!(
            "gradient check needs a scalar output, got shape {:?}",
            g.value(out).shape()
        )));
    }
    let value = g.value(out).item()?;
    let grads = g.backward(out)?;
    let per_input = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.get_or_zeros(v, t))
        .collect();
    Ok((value, per_input))
}

/// Largest relative disagreement between tape gradients and central differences:
/// `|analytic - central| / max(|analytic|, |central|, 1e-8)` over every input element.
pub fn finite_diff_check<F>(op: F, inputs: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::Contract(format!("step must be positive, got {eps}")));
    }
    let (_, analytic) = analytic_gradients(&op, inputs)?;
    let mut worst: f64 = 0.0;
    let mut probe = inputs.to_vec();
    for (k, grad) in analytic.iter().enumerate() {
        for i in 0..inputs[k].len() {
            let x0 = inputs[k].data()[i];
            probe[k].data_mut()[i] = x0 + eps;
            let fp = eval_scalar(&op, &probe)?;
            probe[k].data_mut()[i] = x0 - eps;
            let fm = eval_scalar(&op, &probe)?;
            probe[k].data_mut()[i] = x0;
            let central = (fp - fm) / (2.0 * eps);
            let a = grad.data()[i];
            let rel = (a - central).abs() / a.abs().max(central.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares() {
        let x = Tensor::from_vec(vec![1.0, 2.0, 3.0]).unwrap();
        let err = finite_diff_check(
            |g, v| {
                let sq = g.mul(v[0], v[0])?;
                Ok(g.sum(sq))
            },
            std::slice::from_ref(&x),
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
        let (_, grads) = analytic_gradients(
            &|g: &mut Graph, v: &[Var]| {
                let sq = g.mul(v[0], v[0])?;
                Ok(g.sum(sq))
            },
            &[x],
        )
        .unwrap();
        assert_eq!(grads[0].data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn constant_op_has_zero_gradient_and_error() {
        let x = Tensor::from_vec(vec![0.3, -1.0]).unwrap();
        let op = |g: &mut Graph, _v: &[Var]| Ok(g.constant(Tensor::scalar(7.0)));
        let (_, grads) = analytic_gradients(&op, std::slice::from_ref(&x)).unwrap();
        assert_eq!(grads[0].data(), &[0.0, 0.0]);
        assert_eq!(finite_diff_check(op, &[x], 1e-5).unwrap(), 0.0);
    }

    #[test]
    fn non_scalar_output_is_a_contract_error() {
        let x = Tensor::from_vec(vec![1.0, 2.0]).unwrap();
        let res = finite_diff_check(|_g, v| Ok(v[0]), &[x], 1e-5);
        assert!(matches!(res, Err(Error::Contract(_))));
    }

    #[test]
    fn rejects_nonpositive_step() {
        let x = Tensor::scalar(1.0);
        assert!(finite_diff_check(|g, v| Ok(g.sum(v[0])), &[x], 0.0).is_err());
    }

    #[test]
    fn grad_record_checks_shapes() {
        let ok = GradRecord::new(
            vec![("w".into(), Tensor::zeros(&[2, 2]))],
            vec![Tensor::zeros(&[2, 2])],
        )
        .unwrap();
        assert!(ok.grad("w").is_some());
        assert!(GradRecord::new(
            vec![("w".into(), Tensor::zeros(&[2, 2]))],
            vec![Tensor::zeros(&[4])],
        )
        .is_err());
    }
}
