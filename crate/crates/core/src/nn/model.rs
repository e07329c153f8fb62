//! Dense feedforward classifier with hand-derived batch backpropagation,
//! output-layer extension and encoder freezing.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::layer::{Activation, DenseLayer};
use crate::seeded::rng_from_seed;

static NEXT_MODEL_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_model_id() -> u64 {
    NEXT_MODEL_ID.fetch_add(1, Ordering::Relaxed)
}

/// Multi-layer dense classifier producing raw logits; softmax is applied by
/// the loss and score functions, never inside the network.
#[derive(Debug, Clone)]
pub struct FeedforwardClassifier {
    layers: Vec<DenseLayer>,
    /// Identity of this parameter set; changes on every in-place update so
    /// stale forward caches can be rejected.
    model_id: u64,
    version: u64,
}

/// Per-tensor trainability flags, shape-congruent with the model's layers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainableMask {
    pub layers: Vec<TensorFlags>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorFlags {
    pub weights: bool,
    pub biases: bool,
}

impl TrainableMask {
    pub fn all_trainable(model: &FeedforwardClassifier) -> Self {
        TrainableMask {
            layers: vec![
                TensorFlags {
                    weights: true,
                    biases: true
                };
                model.layers.len()
            ],
        }
    }

    fn check_congruent(&self, model: &FeedforwardClassifier) -> Result<()> {
        if self.layers.len() != model.layers.len() {
            return Err(Error::Shape(format!(
                "mask covers {} layers but model has {}",
                self.layers.len(),
                model.layers.len()
            )));
        }
        Ok(())
    }
}

/// Activation record from a forward pass; consumed by [`FeedforwardClassifier::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    model_id: u64,
    version: u64,
    batch_rows: usize,
    /// Input to each layer (the batch itself for layer 0).
    inputs: Vec<Matrix>,
    /// Pre-activation of each layer.
    pre: Vec<Matrix>,
}

/// Parameter gradients, one entry per layer, shape-congruent with the model.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<LayerGradients>,
}

#[derive(Debug, Clone)]
pub struct LayerGradients {
    pub weights: Matrix,
    pub biases: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(model: &FeedforwardClassifier) -> Self {
        Gradients {
            layers: model
                .layers
                .iter()
                .map(|l| LayerGradients {
                    weights: Matrix::zeros(l.out_dim(), l.in_dim()),
                    biases: vec![0.0; l.out_dim()],
                })
                .collect(),
        }
    }

    /// Largest absolute entry over all tensors.
    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weights.data().iter().chain(l.biases.iter()))
            .fold(0.0_f64, |m, &g| m.max(g.abs()))
    }
}

impl FeedforwardClassifier {
    /// Builds a classifier from explicit layers. The final layer must use the
    /// identity activation and emit at least two classes, and consecutive
    /// layer dimensions must chain.
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        let last = layers
            .last()
            .ok_or_else(|| Error::Argument("classifier needs at least one layer".into()))?;
        if last.activation() != Activation::Identity {
            return Err(Error::Argument(
                "final layer must use the identity activation; softmax is applied by losses".into(),
            ));
        }
        if last.out_dim() < 2 {
            return Err(Error::Argument(format!(
                "classifier needs at least 2 output classes, got {}",
                last.out_dim()
            )));
        }
        for w in layers.windows(2) {
            if w[0].out_dim() != w[1].in_dim() {
                return Err(Error::Shape(format!(
                    "layer output width {} does not feed layer input width {}",
                    w[0].out_dim(),
                    w[1].in_dim()
                )));
            }
        }
        Ok(FeedforwardClassifier {
            layers,
            model_id: fresh_model_id(),
            version: 0,
        })
    }

    /// Standard MLP: relu hidden layers, identity head, weights uniform in
    /// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, zero biases.
    pub fn mlp(input_dim: usize, hidden: &[usize], num_classes: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::Argument("input dimension must be positive".into()));
        }
        let mut rng = rng_from_seed(seed);
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut in_dim = input_dim;
        for &h in hidden {
            let scale = 1.0 / (in_dim as f64).sqrt();
            layers.push(DenseLayer::seeded(in_dim, h, Activation::Relu, scale, &mut rng)?);
            in_dim = h;
        }
        let scale = 1.0 / (in_dim as f64).sqrt();
        layers.push(DenseLayer::seeded(
            in_dim,
            num_classes,
            Activation::Identity,
            scale,
            &mut rng,
        )?);
        FeedforwardClassifier::new(layers)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn num_classes(&self) -> usize {
        self.layers.last().map_or(0, DenseLayer::out_dim)
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, DenseLayer::in_dim)
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub(crate) fn bump_version(&mut self) {
        self.version += 1;
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    /// Batch forward pass returning logits and the activation record needed
    /// by [`Self::backward`].
    pub fn forward(&self, batch: &Matrix) -> Result<(Matrix, ForwardCache)> {
        if batch.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "batch has {} columns but the model expects {}",
                batch.cols(),
                self.input_dim()
            )));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pres = Vec::with_capacity(self.layers.len());
        let mut current = batch.clone();
        for layer in &self.layers {
            let pre = layer.affine(&current);
            let mut post = pre.clone();
            if layer.activation() != Activation::Identity {
                for v in post.data_mut() {
                    *v = layer.activation().apply(*v);
                }
            }
            inputs.push(std::mem::replace(&mut current, post));
            pres.push(pre);
        }
        current.assert_finite()?;
        Ok((
            current,
            ForwardCache {
                model_id: self.model_id,
                version: self.version,
                batch_rows: batch.rows(),
                inputs,
                pre: pres,
            },
        ))
    }

    /// Convenience forward that discards the cache.
    pub fn logits(&self, batch: &Matrix) -> Result<Matrix> {
        self.forward(batch).map(|(l, _)| l)
    }

    /// Backpropagates `output_gradient` (dLoss/dlogits, one row per batch
    /// sample) through the cached activations. Parameters excluded by `mask`
    /// receive exactly zero gradient; the signal still flows to layers below.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        output_gradient: &Matrix,
        mask: &TrainableMask,
    ) -> Result<Gradients> {
        if cache.model_id != self.model_id || cache.version != self.version {
            return Err(Error::Usage(
                "forward cache is stale: the model changed since it was produced".into(),
            ));
        }
        mask.check_congruent(self)?;
        if output_gradient.rows() != cache.batch_rows
            || output_gradient.cols() != self.num_classes()
        {
            return Err(Error::Shape(format!(
                "output gradient is {}x{}, expected {}x{}",
                output_gradient.rows(),
                output_gradient.cols(),
                cache.batch_rows,
                self.num_classes()
            )));
        }

        // Nothing below the lowest trainable layer can influence any update,
        // so the downward sweep stops there (a frozen encoder reduces the
        // pass to the head).
        let lowest_trainable = mask
            .layers
            .iter()
            .position(|f| f.weights || f.biases)
            .unwrap_or(self.layers.len());

        let mut grads = Gradients::zeros_like(self);
        let mut d_out = output_gradient.clone();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            if l < lowest_trainable {
                break;
            }
            let pre = &cache.pre[l];
            let input = &cache.inputs[l];
            let n = cache.batch_rows;
            let in_dim = layer.in_dim();

            // dZ = dA ⊙ act'(pre), in place.
            if layer.activation() != Activation::Identity {
                for r in 0..n {
                    let pre_row = pre.row(r);
                    let dz = d_out.row_mut(r);
                    for (slot, &z) in dz.iter_mut().zip(pre_row) {
                        *slot *= layer.activation().derivative(z);
                    }
                }
            }

            let trainable = mask.layers[l];
            if trainable.weights || trainable.biases {
                let lg = &mut grads.layers[l];
                for r in 0..n {
                    let dz = d_out.row(r);
                    let x = input.row(r);
                    for (o, &g) in dz.iter().enumerate() {
                        if g == 0.0 {
                            continue;
                        }
                        if trainable.weights {
                            let wrow = lg.weights.row_mut(o);
                            for i in 0..in_dim {
                                wrow[i] += g * x[i];
                            }
                        }
                        if trainable.biases {
                            lg.biases[o] += g;
                        }
                    }
                }
            }

            if l > lowest_trainable {
                let mut d_prev = Matrix::zeros(n, in_dim);
                for r in 0..n {
                    let dz = d_out.row(r);
                    let dp = d_prev.row_mut(r);
                    for (o, &g) in dz.iter().enumerate() {
                        if g == 0.0 {
                            continue;
                        }
                        let wrow = layer.weights().row(o);
                        for i in 0..in_dim {
                            dp[i] += g * wrow[i];
                        }
                    }
                }
                d_out = d_prev;
            }
        }
        Ok(grads)
    }

    /// Appends `k` output classes. Existing final-layer rows and biases are
    /// preserved bit-exact; the new rows are drawn uniform in
    /// `[-init_scale, init_scale]` with zero biases, so old-class logits are
    /// unchanged on every input until fine-tuning moves them.
    pub fn extend_output_layer(&self, k: usize, init_scale: f64, seed: u64) -> Result<Self> {
        if k == 0 {
            return Err(Error::Argument("extension needs k >= 1 empty classes".into()));
        }
        if !(init_scale.is_finite() && init_scale >= 0.0) {
            return Err(Error::Argument("init_scale must be finite and >= 0".into()));
        }
        let last = self.layers.last().expect("validated at construction");
        let (q, in_dim) = (last.out_dim(), last.in_dim());

        let mut rng = rng_from_seed(seed);
        let mut weights = last.weights().data().to_vec();
        for _ in 0..k * in_dim {
            let w = if init_scale == 0.0 {
                0.0
            } else {
                rng.gen_range(-init_scale..=init_scale)
            };
            weights.push(w);
        }
        let mut biases = last.biases().to_vec();
        biases.extend(std::iter::repeat_n(0.0, k));

        let mut layers = self.layers[..self.layers.len() - 1].to_vec();
        layers.push(DenseLayer::new(
            Matrix::from_vec(q + k, in_dim, weights)?,
            biases,
            Activation::Identity,
        )?);
        FeedforwardClassifier::new(layers)
    }

    /// Default scale for newly appended output rows: `1/sqrt(fan_in)` of the
    /// final layer.
    pub fn default_extension_scale(&self) -> f64 {
        let fan_in = self.layers.last().map_or(1, DenseLayer::in_dim);
        1.0 / (fan_in as f64).sqrt()
    }

    /// Mask with everything but the final dense layer frozen.
    pub fn freeze_encoder(&self) -> Result<TrainableMask> {
        if self.layers.len() < 2 {
            return Err(Error::Argument(
                "freezing the encoder requires at least 2 layers".into(),
            ));
        }
        let mut layers = vec![
            TensorFlags {
                weights: false,
                biases: false
            };
            self.layers.len()
        ];
        *layers.last_mut().expect("non-empty") = TensorFlags {
            weights: true,
            biases: true,
        };
        Ok(TrainableMask { layers })
    }

    /// Flat copy of all parameters, layer by layer (weights then biases).
    /// Used by the gradient checker and by snapshot comparisons in tests.
    pub fn parameter_vector(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(l.weights().data());
            out.extend_from_slice(l.biases());
        }
        out
    }

    /// Overwrites all parameters from a flat vector laid out as
    /// [`Self::parameter_vector`]. Counts must match exactly.
    pub fn set_parameter_vector(&mut self, params: &[f64]) -> Result<()> {
        let expected: usize = self
            .layers
            .iter()
            .map(|l| l.out_dim() * l.in_dim() + l.out_dim())
            .sum();
        if params.len() != expected {
            return Err(Error::Shape(format!(
                "parameter vector has {} entries, model needs {expected}",
                params.len()
            )));
        }
        let mut offset = 0;
        for l in &mut self.layers {
            let wlen = l.out_dim() * l.in_dim();
            let blen = l.out_dim();
            l.weights_mut()
                .data_mut()
                .copy_from_slice(&params[offset..offset + wlen]);
            offset += wlen;
            l.biases_mut().copy_from_slice(&params[offset..offset + blen]);
            offset += blen;
        }
        self.bump_version();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_2x2() -> FeedforwardClassifier {
        let w = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        FeedforwardClassifier::new(vec![DenseLayer::new(
            w,
            vec![0.0, 0.0],
            Activation::Identity,
        )
        .unwrap()])
        .unwrap()
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let model = identity_2x2();
        let x = Matrix::from_vec(1, 2, vec![1.0, 2.0]).unwrap();
        let (logits, _) = model.forward(&x).unwrap();
        assert_eq!(logits.row(0), &[1.0, 2.0]);
    }

    #[test]
    fn relu_layer_clips_negative_preactivations() {
        let w = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let relu = DenseLayer::new(w, vec![0.0, 0.0], Activation::Relu).unwrap();
        let head = DenseLayer::new(
            Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
            vec![0.0, 0.0],
            Activation::Identity,
        )
        .unwrap();
        let model = FeedforwardClassifier::new(vec![relu, head]).unwrap();
        let x = Matrix::from_vec(1, 2, vec![-1.0, 3.0]).unwrap();
        let (logits, _) = model.forward(&x).unwrap();
        assert_eq!(logits.row(0), &[0.0, 3.0]);
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let model = identity_2x2();
        let x = Matrix::from_vec(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(model.forward(&x), Err(Error::Shape(_))));
    }

    // Independent oracle: explicit affine chain over plain vectors.
    #[test]
    fn forward_matches_hand_rolled_affine_chain() {
        let model = FeedforwardClassifier::mlp(3, &[4, 5], 2, 42).unwrap();
        let x = Matrix::from_vec(2, 3, vec![0.3, -1.2, 0.7, 1.5, 0.0, -0.4]).unwrap();
        let (logits, _) = model.forward(&x).unwrap();

        for r in 0..x.rows() {
            let mut a: Vec<f64> = x.row(r).to_vec();
            for layer in model.layers() {
                let mut next = vec![0.0; layer.out_dim()];
                for (o, slot) in next.iter_mut().enumerate() {
                    let mut acc = layer.biases()[o];
                    for (i, &xi) in a.iter().enumerate() {
                        acc += layer.weights().get(o, i) * xi;
                    }
                    *slot = layer.activation().apply(acc);
                }
                a = next;
            }
            for (c, &expected) in a.iter().enumerate() {
                assert!((logits.get(r, c) - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_output_gradient_gives_zero_parameter_gradients() {
        let model = FeedforwardClassifier::mlp(3, &[4], 2, 1).unwrap();
        let x = Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, -1.0, 0.5, 0.0]).unwrap();
        let (_, cache) = model.forward(&x).unwrap();
        let g = model
            .backward(
                &cache,
                &Matrix::zeros(2, 2),
                &TrainableMask::all_trainable(&model),
            )
            .unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn fully_frozen_mask_yields_empty_update() {
        let model = FeedforwardClassifier::mlp(3, &[4], 2, 1).unwrap();
        let x = Matrix::from_vec(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        let (_, cache) = model.forward(&x).unwrap();
        let mut mask = TrainableMask::all_trainable(&model);
        for f in &mut mask.layers {
            *f = TensorFlags {
                weights: false,
                biases: false,
            };
        }
        let dl = Matrix::from_vec(1, 2, vec![1.0, -1.0]).unwrap();
        let g = model.backward(&cache, &dl, &mask).unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut model = FeedforwardClassifier::mlp(3, &[4], 2, 1).unwrap();
        let x = Matrix::from_vec(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        let (_, cache) = model.forward(&x).unwrap();
        let params = model.parameter_vector();
        model.set_parameter_vector(&params).unwrap(); // bumps version
        let dl = Matrix::zeros(1, 2);
        assert!(matches!(
            model.backward(&cache, &dl, &TrainableMask::all_trainable(&model)),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn cache_from_another_model_is_rejected() {
        let a = FeedforwardClassifier::mlp(3, &[4], 2, 1).unwrap();
        let b = FeedforwardClassifier::mlp(3, &[4], 2, 1).unwrap();
        let x = Matrix::from_vec(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        let (_, cache) = a.forward(&x).unwrap();
        assert!(matches!(
            b.backward(&cache, &Matrix::zeros(1, 2), &TrainableMask::all_trainable(&b)),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn extension_preserves_old_logits_exactly() {
        let model = FeedforwardClassifier::mlp(4, &[8, 8], 2, 9).unwrap();
        let extended = model.extend_output_layer(3, 0.3, 77).unwrap();
        assert_eq!(extended.num_classes(), 5);

        let x = Matrix::from_vec(3, 4, vec![0.1; 12]).unwrap();
        let before = model.logits(&x).unwrap();
        let after = extended.logits(&x).unwrap();
        for r in 0..3 {
            for c in 0..2 {
                assert_eq!(before.get(r, c), after.get(r, c));
            }
        }
    }

    #[test]
    fn extension_with_zero_scale_gives_zero_new_logits() {
        let model = FeedforwardClassifier::mlp(4, &[8], 2, 9).unwrap();
        let extended = model.extend_output_layer(1, 0.0, 5).unwrap();
        let x = Matrix::from_vec(2, 4, vec![0.5; 8]).unwrap();
        let logits = extended.logits(&x).unwrap();
        assert_eq!(logits.get(0, 2), 0.0);
        assert_eq!(logits.get(1, 2), 0.0);
    }

    #[test]
    fn extension_rejects_k_zero() {
        let model = FeedforwardClassifier::mlp(4, &[8], 2, 9).unwrap();
        assert!(matches!(
            model.extend_output_layer(0, 0.1, 5),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn freeze_encoder_marks_only_final_layer() {
        let model = FeedforwardClassifier::mlp(4, &[8, 8, 8], 3, 2).unwrap();
        let mask = model.freeze_encoder().unwrap();
        assert_eq!(mask.layers.len(), 4);
        assert!(mask.layers[..3]
            .iter()
            .all(|f| !f.weights && !f.biases));
        assert!(mask.layers[3].weights && mask.layers[3].biases);
    }

    #[test]
    fn freeze_encoder_requires_two_layers() {
        let model = identity_2x2();
        assert!(matches!(model.freeze_encoder(), Err(Error::Argument(_))));
    }
}
