//! Sequential model graph: parameters, forward pass with caching, backprop.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::activation::{activate, activation_backward, Activation};
use crate::nn::batchnorm::{batchnorm_backward, batchnorm_forward, update_running, ChannelStats, Mode};
use crate::nn::conv::{conv2d_backward, conv2d_forward, conv2d_transpose_backward, conv2d_transpose_forward};
use crate::nn::dense::{dense_backward, dense_forward};
use crate::nn::layer::{infer_shapes, GraphBuilder, LayerSpec, SampleShape};
use crate::nn::pool::{maxpool2d_backward, maxpool2d_forward};
use crate::rng::SeedStream;
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T: Real = f32> {
    pub weight: Option<Tensor<T>>,
    pub bias: Option<Tensor<T>>,
    /// Batchnorm running mean / variance; not trained by the optimizer.
    pub running_mean: Option<Tensor<T>>,
    pub running_var: Option<Tensor<T>>,
}

impl<T: Real> LayerParams<T> {
    fn empty() -> Self {
        Self {
            weight: None,
            bias: None,
            running_mean: None,
            running_var: None,
        }
    }

    fn cast<U: Real>(&self) -> LayerParams<U> {
        LayerParams {
            weight: self.weight.as_ref().map(Tensor::cast),
            bias: self.bias.as_ref().map(Tensor::cast),
            running_mean: self.running_mean.as_ref().map(Tensor::cast),
            running_var: self.running_var.as_ref().map(Tensor::cast),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph<T: Real = f32> {
    pub(crate) tag: String,
    pub(crate) input_shape: SampleShape,
    pub(crate) layers: Vec<LayerSpec>,
    pub(crate) params: Vec<LayerParams<T>>,
    pub(crate) seed: u64,
    pub(crate) latent_layer: Option<usize>,
}

#[derive(Debug, Clone)]
enum Aux {
    None,
    Argmax(Vec<u32>),
    Stats(ChannelStats),
}

/// Activations retained by [`ModelGraph::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T: Real = f32> {
    mode: Mode,
    /// `acts[l]` is the input of layer `l`; the last entry is the model output.
    acts: Vec<Tensor<T>>,
    aux: Vec<Aux>,
}

impl<T: Real> ForwardCache<T> {
    pub fn output(&self) -> &Tensor<T> {
        self.acts.last().expect("cache holds at least the input")
    }

    pub fn into_output(mut self) -> Tensor<T> {
        self.acts.pop().expect("cache holds at least the input")
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Output of layer `index`.
    pub fn activation(&self, index: usize) -> Option<&Tensor<T>> {
        self.acts.get(index + 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads<T: Real = f32> {
    pub weight: Option<Tensor<T>>,
    pub bias: Option<Tensor<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T: Real = f32> {
    pub layers: Vec<LayerGrads<T>>,
    pub input: Tensor<T>,
}

impl<T: Real> Gradients<T> {
    /// Parameter gradients in [`ModelGraph::params_mut`] order.
    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()))
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.all_finite()) && self.input.all_finite()
    }
}

fn weight_limit(layer: &LayerSpec, next_act: Option<Activation>) -> f64 {
    let (fan_in, fan_out) = match *layer {
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel,
            ..
        } => {
            let k = kernel[0] * kernel[1];
            (in_channels * k, out_channels * k)
        }
        LayerSpec::Conv2dTranspose {
            in_channels,
            out_channels,
            kernel,
            stride,
            ..
        } => {
            // each output pixel sees about k/s^2 taps per input channel
            let k = kernel[0] * kernel[1];
            let s2 = stride * stride;
            ((in_channels * k / s2).max(1), (out_channels * k / s2).max(1))
        }
        LayerSpec::Dense { in_features, units } => (in_features, units),
        _ => return 0.0,
    };
    match next_act {
        Some(Activation::Relu | Activation::LeakyRelu) => (6.0 / fan_in as f64).sqrt(),
        _ => (6.0 / (fan_in + fan_out) as f64).sqrt(),
    }
}

/// The activation a weighted layer feeds, looking through shape-only layers.
fn following_activation(layers: &[LayerSpec], index: usize) -> Option<Activation> {
    for l in &layers[index + 1..] {
        match l {
            LayerSpec::Activation(a) => return Some(*a),
            LayerSpec::BatchNorm { .. } | LayerSpec::Flatten | LayerSpec::Reshape { .. } | LayerSpec::MaxPool2d { .. } => {}
            _ => return None,
        }
    }
    None
}

impl ModelGraph<f32> {
    /// Validates the layer chain and initializes parameters from `seed`.
    ///
    /// Weights feeding relu/leaky_relu are He-uniform, all others Xavier-uniform;
    /// biases start at zero, batchnorm at identity.
    pub fn new(tag: impl Into<String>, input_shape: SampleShape, layers: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        infer_shapes(input_shape, &layers)?;
        let mut rng = SeedStream::new(seed).rng("init");
        let params = layers
            .iter()
            .enumerate()
            .map(|(i, layer)| {
                let mut p = LayerParams::empty();
                if let Some((ws, bs)) = layer.param_shapes() {
                    if let LayerSpec::BatchNorm { .. } = layer {
                        p.weight = Some(Tensor::full(ws, 1.0));
                        p.bias = Some(Tensor::zeros(bs));
                        p.running_mean = Some(Tensor::zeros(bs));
                        p.running_var = Some(Tensor::full(bs, 1.0));
                    } else {
                        let limit = weight_limit(layer, following_activation(&layers, i));
                        let data = (0..ws.iter().product::<usize>())
                            .map(|_| rng.random_range(-limit..limit) as f32)
                            .collect();
                        p.weight = Some(Tensor::from_vec(ws, data)?);
                        p.bias = Some(Tensor::zeros(bs));
                    }
                }
                Ok(p)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            tag: tag.into(),
            input_shape,
            layers,
            params,
            seed,
            latent_layer: None,
        })
    }

    pub fn from_builder(tag: impl Into<String>, builder: GraphBuilder, seed: u64) -> Result<Self> {
        let (input, layers, latent) = builder.finish();
        let mut m = Self::new(tag, input, layers, seed)?;
        m.latent_layer = latent;
        Ok(m)
    }
}

impl<T: Real> ModelGraph<T> {
    /// Assembles a graph from explicit parameters (used by the model loader).
    pub(crate) fn from_parts(
        tag: String,
        input_shape: SampleShape,
        layers: Vec<LayerSpec>,
        params: Vec<LayerParams<T>>,
        seed: u64,
        latent_layer: Option<usize>,
    ) -> Result<Self> {
        infer_shapes(input_shape, &layers)?;
        if params.len() != layers.len() {
            return Err(Error::Format(format!("{} parameter groups for {} layers", params.len(), layers.len())));
        }
        for (i, (layer, p)) in layers.iter().zip(&params).enumerate() {
            let expected = layer.param_shapes();
            let got = match (&p.weight, &p.bias) {
                (Some(w), Some(b)) => Some((w.shape(), b.shape())),
                (None, None) => None,
                _ => return Err(Error::Format(format!("layer {i}: weight/bias presence mismatch"))),
            };
            if expected != got {
                return Err(Error::Format(format!("layer {i} ({}): parameter shapes {got:?}, expected {expected:?}", layer.kind())));
            }
            let is_bn = matches!(layer, LayerSpec::BatchNorm { .. });
            if is_bn != (p.running_mean.is_some() && p.running_var.is_some()) {
                return Err(Error::Format(format!("layer {i}: running statistics presence mismatch")));
            }
        }
        if let Some(l) = latent_layer {
            if l >= layers.len() {
                return Err(Error::Format(format!("latent layer {l} out of range")));
            }
        }
        Ok(Self {
            tag,
            input_shape,
            layers,
            params,
            seed,
            latent_layer,
        })
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn input_shape(&self) -> SampleShape {
        self.input_shape
    }

    pub fn output_shape(&self) -> SampleShape {
        *infer_shapes(self.input_shape, &self.layers)
            .expect("validated at construction")
            .last()
            .expect("non-empty")
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &[LayerParams<T>] {
        &self.params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn latent_layer(&self) -> Option<usize> {
        self.latent_layer
    }

    pub fn set_latent_layer(&mut self, layer: Option<usize>) -> Result<()> {
        if let Some(l) = layer {
            if l >= self.layers.len() {
                return Err(Error::invalid("set_latent_layer", format!("layer {l} out of range")));
            }
        }
        self.latent_layer = layer;
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::param_count).sum()
    }

    /// Trainable tensors, weight before bias, in layer order.
    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.params
            .iter_mut()
            .flat_map(|p| p.weight.iter_mut().chain(p.bias.iter_mut()))
            .collect()
    }

    pub fn param_tensors(&self) -> Vec<&Tensor<T>> {
        self.params
            .iter()
            .flat_map(|p| p.weight.iter().chain(p.bias.iter()))
            .collect()
    }

    pub fn cast<U: Real>(&self) -> ModelGraph<U> {
        ModelGraph {
            tag: self.tag.clone(),
            input_shape: self.input_shape,
            layers: self.layers.clone(),
            params: self.params.iter().map(LayerParams::cast).collect(),
            seed: self.seed,
            latent_layer: self.latent_layer,
        }
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<()> {
        let [_, c, h, w] = input.shape();
        let [ec, eh, ew] = self.input_shape;
        for (dim, e, a) in [("input channels", ec, c), ("input height", eh, h), ("input width", ew, w)] {
            if e != a {
                return Err(Error::shape("forward_model", dim, e, a));
            }
        }
        Ok(())
    }

    fn layer_forward(&self, index: usize, x: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, Aux)> {
        let layer = &self.layers[index];
        let p = &self.params[index];
        let wrap = |e: Error| Error::Layer {
            index,
            kind: layer.kind(),
            source: Box::new(e),
        };
        let out = match *layer {
            LayerSpec::Conv2d { stride, padding, .. } => {
                let (w, b) = weight_bias(p);
                (conv2d_forward(x, w, b.data(), stride, padding).map_err(wrap)?, Aux::None)
            }
            LayerSpec::Conv2dTranspose { stride, padding, .. } => {
                let (w, b) = weight_bias(p);
                (conv2d_transpose_forward(x, w, b.data(), stride, padding).map_err(wrap)?, Aux::None)
            }
            LayerSpec::MaxPool2d { window, odd } => {
                let (y, idx) = maxpool2d_forward(x, window, odd).map_err(wrap)?;
                (y, Aux::Argmax(idx))
            }
            LayerSpec::Dense { .. } => {
                let (w, b) = weight_bias(p);
                (dense_forward(x, w, b.data()).map_err(wrap)?, Aux::None)
            }
            LayerSpec::Activation(a) => (activate(x, a), Aux::None),
            LayerSpec::BatchNorm { .. } => {
                let (g, b) = weight_bias(p);
                let rm = p.running_mean.as_ref().expect("batchnorm running mean");
                let rv = p.running_var.as_ref().expect("batchnorm running var");
                let (y, stats) = batchnorm_forward(x, g.data(), b.data(), mode, rm.data(), rv.data()).map_err(wrap)?;
                (y, Aux::Stats(stats))
            }
            LayerSpec::Flatten => {
                let n = x.batch();
                let d = x.sample_len();
                (x.clone().reshape([n, d, 1, 1]).map_err(wrap)?, Aux::None)
            }
            LayerSpec::Reshape { shape: [c, h, w] } => (x.clone().reshape([x.batch(), c, h, w]).map_err(wrap)?, Aux::None),
        };
        Ok(out)
    }

    /// Runs every layer in order, keeping activations for [`Self::backward`].
    pub fn forward(&self, input: &Tensor<T>, mode: Mode) -> Result<ForwardCache<T>> {
        self.check_input(input)?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut aux = Vec::with_capacity(self.layers.len());
        acts.push(input.clone());
        for i in 0..self.layers.len() {
            let (y, a) = self.layer_forward(i, acts.last().expect("non-empty"), mode)?;
            acts.push(y);
            aux.push(a);
        }
        Ok(ForwardCache { mode, acts, aux })
    }

    /// Eval-mode forward pass without caching. Pure; safe to call concurrently.
    pub fn predict(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        self.predict_prefix(input, self.layers.len())
    }

    /// Eval-mode output of the first `count` layers.
    pub fn predict_prefix(&self, input: &Tensor<T>, count: usize) -> Result<Tensor<T>> {
        self.check_input(input)?;
        let mut x = input.clone();
        for i in 0..count.min(self.layers.len()) {
            x = self.layer_forward(i, &x, Mode::Eval)?.0;
        }
        Ok(x)
    }

    /// Backpropagates `grad_output` through the cached pass.
    pub fn backward(&self, cache: &ForwardCache<T>, grad_output: &Tensor<T>) -> Result<Gradients<T>> {
        if cache.acts.len() != self.layers.len() + 1 || cache.aux.len() != self.layers.len() {
            return Err(Error::MissingCache("forward cache does not belong to this model"));
        }
        if grad_output.shape() != cache.output().shape() {
            return Err(Error::shape("backward_model", "output gradient size", cache.output().len(), grad_output.len()));
        }
        let mut grads: Vec<LayerGrads<T>> = vec![LayerGrads { weight: None, bias: None }; self.layers.len()];
        let mut g = grad_output.clone();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let p = &self.params[i];
            let x = &cache.acts[i];
            let wrap = |e: Error| Error::Layer {
                index: i,
                kind: layer.kind(),
                source: Box::new(e),
            };
            g = match *layer {
                LayerSpec::Conv2d { stride, padding, .. } => {
                    let (w, b) = weight_bias(p);
                    let (gi, gw, gb) = conv2d_backward(x, w, &g, stride, padding).map_err(wrap)?;
                    grads[i] = LayerGrads {
                        weight: Some(gw),
                        bias: Some(Tensor::from_vec(b.shape(), gb)?),
                    };
                    gi
                }
                LayerSpec::Conv2dTranspose { stride, padding, .. } => {
                    let (w, b) = weight_bias(p);
                    let (gi, gw, gb) = conv2d_transpose_backward(x, w, &g, stride, padding).map_err(wrap)?;
                    grads[i] = LayerGrads {
                        weight: Some(gw),
                        bias: Some(Tensor::from_vec(b.shape(), gb)?),
                    };
                    gi
                }
                LayerSpec::MaxPool2d { .. } => match &cache.aux[i] {
                    Aux::Argmax(idx) => maxpool2d_backward(x.shape(), idx, &g).map_err(wrap)?,
                    _ => return Err(Error::MissingCache("maxpool argmax indices")),
                },
                LayerSpec::Dense { .. } => {
                    let (w, b) = weight_bias(p);
                    let (gi, gw, gb) = dense_backward(x, w, &g).map_err(wrap)?;
                    grads[i] = LayerGrads {
                        weight: Some(gw),
                        bias: Some(Tensor::from_vec(b.shape(), gb)?),
                    };
                    gi
                }
                LayerSpec::Activation(a) => activation_backward(x, &cache.acts[i + 1], &g, a),
                LayerSpec::BatchNorm { .. } => {
                    let stats = match &cache.aux[i] {
                        Aux::Stats(s) => s,
                        _ => return Err(Error::MissingCache("batchnorm statistics")),
                    };
                    let (gamma, b) = weight_bias(p);
                    let (gi, gg, gb) = batchnorm_backward(x, gamma.data(), stats, cache.mode, &g).map_err(wrap)?;
                    grads[i] = LayerGrads {
                        weight: Some(Tensor::from_vec(gamma.shape(), gg)?),
                        bias: Some(Tensor::from_vec(b.shape(), gb)?),
                    };
                    gi
                }
                LayerSpec::Flatten | LayerSpec::Reshape { .. } => g.reshape(x.shape()).map_err(wrap)?,
            };
        }
        Ok(Gradients { layers: grads, input: g })
    }

    /// Folds the batch statistics of a train-mode pass into the running ones.
    pub fn update_running_stats(&mut self, cache: &ForwardCache<T>) {
        if cache.mode != Mode::Train {
            return;
        }
        for (p, aux) in self.params.iter_mut().zip(&cache.aux) {
            if let (Aux::Stats(stats), Some(rm), Some(rv)) = (aux, p.running_mean.as_mut(), p.running_var.as_mut()) {
                update_running(stats, rm.data_mut(), rv.data_mut());
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| {
            [&p.weight, &p.bias, &p.running_mean, &p.running_var]
                .into_iter()
                .flatten()
                .all(Tensor::all_finite)
        })
    }
}

fn weight_bias<T: Real>(p: &LayerParams<T>) -> (&Tensor<T>, &Tensor<T>) {
    (
        p.weight.as_ref().expect("parameterized layer has a weight"),
        p.bias.as_ref().expect("parameterized layer has a bias"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::loss::{loss_eval, LossKind};
    use crate::nn::pool::OddExtent;

    #[test]
    fn empty_graph_is_identity() {
        let m = ModelGraph::new("id", [1, 2, 2], vec![], 0).unwrap();
        let x = Tensor::from_vec([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(m.predict(&x).unwrap(), x);
    }

    #[test]
    fn identity_dense_layer() {
        let mut m = ModelGraph::new("d", [3, 1, 1], vec![LayerSpec::Dense { in_features: 3, units: 3 }], 0).unwrap();
        m.params[0].weight = Some(Tensor::from_fn([3, 3, 1, 1], |[i, j, ..]| if i == j { 1.0 } else { 0.0 }));
        let x = Tensor::from_vec([1, 3, 1, 1], vec![0.5, -1.0, 2.0]).unwrap();
        assert_eq!(m.predict(&x).unwrap().data(), x.data());
    }

    #[test]
    fn same_seed_same_init() {
        let b = || {
            GraphBuilder::new([1, 8, 8])
                .conv(4, 3, 1, 1)
                .unwrap()
                .act(Activation::Relu)
                .unwrap()
                .flatten()
                .unwrap()
                .dense(2)
                .unwrap()
        };
        let a = ModelGraph::from_builder("m", b(), 17).unwrap();
        let c = ModelGraph::from_builder("m", b(), 17).unwrap();
        let d = ModelGraph::from_builder("m", b(), 18).unwrap();
        assert_eq!(a, c);
        assert_ne!(a.params, d.params);
    }

    #[test]
    fn forward_errors_carry_layer_index() {
        let m = ModelGraph::new("m", [1, 4, 4], vec![LayerSpec::MaxPool2d { window: 2, odd: OddExtent::Error }], 0).unwrap();
        let err = m.predict(&Tensor::zeros([1, 2, 4, 4])).unwrap_err();
        assert!(err.to_string().contains("input channels"));
    }

    #[test]
    fn zero_loss_gradient_gives_zero_param_gradients() {
        let m = ModelGraph::from_builder(
            "m",
            GraphBuilder::new([1, 4, 4]).conv(2, 3, 1, 1).unwrap().act(Activation::Tanh).unwrap().flatten().unwrap().dense(3).unwrap(),
            1,
        )
        .unwrap();
        let x = Tensor::full([2, 1, 4, 4], 0.3);
        let cache = m.forward(&x, Mode::Train).unwrap();
        let g = m.backward(&cache, &Tensor::zeros(cache.output().shape())).unwrap();
        assert!(g.tensors().iter().all(|t| t.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn dense_mse_gradient_closed_form() {
        // loss = mean_u (p_u - t_u)^2 with p = W a + b  =>  dL/dW = (2/U) (p - t) a^T
        let m = ModelGraph::new("d", [3, 1, 1], vec![LayerSpec::Dense { in_features: 3, units: 2 }], 4).unwrap().cast::<f64>();
        let a = Tensor::from_vec([1, 3, 1, 1], vec![0.2, -0.7, 1.1]).unwrap();
        let t = Tensor::from_vec([1, 2, 1, 1], vec![0.5, -0.25]).unwrap();
        let cache = m.forward(&a, Mode::Train).unwrap();
        let (_, dl) = loss_eval(cache.output(), &t, LossKind::Mse).unwrap();
        let g = m.backward(&cache, &dl).unwrap();
        let p = cache.output().data();
        let gw = g.layers[0].weight.as_ref().unwrap();
        for u in 0..2 {
            for d in 0..3 {
                let want = (p[u] - t.data()[u]) * a.data()[d];
                assert!((gw.at([u, d, 0, 0]) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn missing_cache_is_reported() {
        let m = ModelGraph::new("d", [3, 1, 1], vec![LayerSpec::Dense { in_features: 3, units: 2 }], 0).unwrap();
        let other = ModelGraph::new("e", [3, 1, 1], vec![], 0).unwrap();
        let cache = other.forward(&Tensor::zeros([1, 3, 1, 1]), Mode::Eval).unwrap();
        assert!(matches!(
            m.backward(&cache, &Tensor::zeros([1, 3, 1, 1])),
            Err(Error::MissingCache(_))
        ));
    }
}
