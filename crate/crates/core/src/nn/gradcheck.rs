//! Central-finite-difference verification of analytic parameter gradients.

use crate::error::{Error, Result};
use crate::nn::model::{FeedforwardClassifier, Gradients};

/// A differentiable objective evaluated on a whole model: returns the scalar
/// loss and dLoss/dparameter for every parameter tensor.
pub trait ModelObjective {
    fn value(&self, model: &FeedforwardClassifier) -> Result<f64>;
    fn value_and_grads(&self, model: &FeedforwardClassifier) -> Result<(f64, Gradients)>;
}

impl<F> ModelObjective for F
where
    F: Fn(&FeedforwardClassifier) -> Result<(f64, Gradients)>,
{
    fn value(&self, model: &FeedforwardClassifier) -> Result<f64> {
        self(model).map(|(v, _)| v)
    }

    fn value_and_grads(&self, model: &FeedforwardClassifier) -> Result<(f64, Gradients)> {
        self(model)
    }
}

/// Compares the objective's analytic gradient against central differences
/// over every parameter and returns the worst relative discrepancy.
///
/// Relative error per parameter is `|analytic - numeric| / max(|analytic|,
/// |numeric|, 1e-6)`; the floor keeps near-zero gradients from blowing up the
/// ratio on rounding noise.
pub fn finite_difference_check<O: ModelObjective>(
    model: &FeedforwardClassifier,
    objective: &O,
    epsilon: f64,
) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon <= 1e-2) {
        return Err(Error::Argument("epsilon must lie in (0, 1e-2]".into()));
    }
    let (_, analytic) = objective.value_and_grads(model)?;
    let mut flat_analytic = Vec::new();
    for lg in &analytic.layers {
        flat_analytic.extend_from_slice(lg.weights.data());
        flat_analytic.extend_from_slice(&lg.biases);
    }

    let base = model.parameter_vector();
    let mut probe = model.clone();
    let mut worst = 0.0_f64;
    for (i, &a) in flat_analytic.iter().enumerate() {
        let mut params = base.clone();
        params[i] = base[i] + epsilon;
        probe.set_parameter_vector(&params)?;
        let plus = objective.value(&probe)?;
        params[i] = base[i] - epsilon;
        probe.set_parameter_vector(&params)?;
        let minus = objective.value(&probe)?;
        let numeric = (plus - minus) / (2.0 * epsilon);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        if rel > worst {
            worst = rel;
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses;
    use crate::matrix::Matrix;
    use crate::nn::model::TrainableMask;

    // CE objective over a fixed batch, wired through softmax + backward.
    fn ce_objective(
        batch: Matrix,
        labels: Vec<usize>,
    ) -> impl Fn(&FeedforwardClassifier) -> Result<(f64, Gradients)> {
        move |model| {
            let (logits, cache) = model.forward(&batch)?;
            let probs = losses::softmax_rows(&logits)?;
            let n = batch.rows() as f64;
            let mut value = 0.0;
            let mut dlogits = Matrix::zeros(logits.rows(), logits.cols());
            for (r, &label) in labels.iter().enumerate() {
                value += losses::cross_entropy(probs.row(r), label)? / n;
                let g = losses::cross_entropy_grad(probs.row(r), label)?;
                for (c, gc) in g.iter().enumerate() {
                    dlogits.set(r, c, gc / n);
                }
            }
            let grads = model.backward(&cache, &dlogits, &TrainableMask::all_trainable(model))?;
            Ok((value, grads))
        }
    }

    #[test]
    fn linear_model_ce_gradient_checks_out() {
        let model = FeedforwardClassifier::mlp(3, &[], 3, 5).unwrap();
        let batch = Matrix::from_vec(2, 3, vec![0.4, -0.9, 1.3, -0.2, 0.8, 0.1]).unwrap();
        let err = finite_difference_check(&model, &ce_objective(batch, vec![0, 2]), 1e-5).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn constant_objective_has_zero_gradients_both_ways() {
        let model = FeedforwardClassifier::mlp(2, &[3], 2, 5).unwrap();
        let objective = |m: &FeedforwardClassifier| Ok((1.5, Gradients::zeros_like(m)));
        let err = finite_difference_check(&model, &objective, 1e-5).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn epsilon_out_of_range_is_rejected() {
        let model = FeedforwardClassifier::mlp(2, &[3], 2, 5).unwrap();
        let objective = |m: &FeedforwardClassifier| Ok((0.0, Gradients::zeros_like(m)));
        assert!(finite_difference_check(&model, &objective, 0.0).is_err());
        assert!(finite_difference_check(&model, &objective, 0.1).is_err());
    }

    // Single linear layer + CE on one sample: gradient must equal
    // (softmax - onehot) ⊗ input, the classic closed form.
    #[test]
    fn softmax_ce_gradient_closed_form() {
        let model = FeedforwardClassifier::mlp(3, &[], 2, 8).unwrap();
        let batch = Matrix::from_vec(1, 3, vec![0.7, -1.1, 0.4]).unwrap();
        let labels = vec![1usize];
        let obj = ce_objective(batch.clone(), labels);
        let (_, grads) = obj(&model).unwrap();

        let probs = losses::softmax(model.logits(&batch).unwrap().row(0)).unwrap();
        for (o, &p) in probs.iter().enumerate() {
            let delta = p - if o == 1 { 1.0 } else { 0.0 };
            for i in 0..3 {
                let expected = delta * batch.get(0, i);
                let got = grads.layers[0].weights.get(o, i);
                assert!((expected - got).abs() < 1e-12, "{expected} vs {got}");
            }
            assert!((grads.layers[0].biases[o] - delta).abs() < 1e-12);
        }
    }
}
