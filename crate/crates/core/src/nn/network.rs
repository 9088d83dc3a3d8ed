use std::fmt;
use std::str::FromStr;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layer::{self, LayerSpec};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Input geometry of the reference CNN (CIFAR-10 images).
pub const CNN_INPUT: [usize; 3] = [3, 32, 32];
pub const CNN_FC_UNITS: usize = 64;
pub const CNN_OUTPUTS: usize = 10;
/// Hidden layer count of the reference FCDNN.
pub const FCDNN_HIDDEN_LAYERS: usize = 4;

/// An ordered stack of layers with one weight and bias tensor per
/// parameterized layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T = f32> {
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    weights: Vec<Tensor<T>>,
    biases: Vec<Tensor<T>>,
    seed: u64,
}

/// Per-parameter gradients, shaped like the network's weights and biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T = f32> {
    pub weights: Vec<Tensor<T>>,
    pub biases: Vec<Tensor<T>>,
}

/// Outputs of every layer for one batch; the last entry holds the class
/// probabilities.
#[derive(Debug, Clone)]
pub struct Activations<T = f32> {
    pub layers: Vec<Tensor<T>>,
}

impl<T: Real> Activations<T> {
    pub fn probabilities(&self) -> &Tensor<T> {
        self.layers.last().expect("network has layers")
    }
}

impl<T: Real> Network<T> {
    /// Builds a network with weights drawn uniformly from
    /// ±sqrt(6 / (fan_in + fan_out)) and zero biases. The last layer must be
    /// softmax.
    pub fn new(input_shape: Vec<usize>, layers: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "input shape must be non-empty and positive, got {input_shape:?}"
            )));
        }
        if layers.last() != Some(&LayerSpec::Softmax) {
            return Err(Error::InvalidArgument(
                "network must end with a softmax layer".into(),
            ));
        }
        if layers[..layers.len() - 1].contains(&LayerSpec::Softmax) {
            return Err(Error::InvalidArgument(
                "softmax is only allowed as the final layer".into(),
            ));
        }
        let mut width: usize = input_shape.iter().product();
        for l in &layers {
            width = l.check(width)?;
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in layers.iter().filter(|l| l.has_params()) {
            let (fan_in, fan_out) = l.fans().expect("parameterized layer");
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit);
            let shape = l.weight_shape().expect("parameterized layer");
            weights.push(Tensor::from_fn(shape, |_| {
                T::from_f64_lossy(dist.sample(&mut rng))
            }));
            biases.push(Tensor::zeros(vec![l.bias_len().expect("parameterized layer")]));
        }
        Ok(Self {
            input_shape,
            layers,
            weights,
            biases,
            seed,
        })
    }

    /// Reassembles a network from stored parts, checking every shape.
    pub fn from_parts(
        input_shape: Vec<usize>,
        layers: Vec<LayerSpec>,
        weights: Vec<Tensor<T>>,
        biases: Vec<Tensor<T>>,
        seed: u64,
    ) -> Result<Self> {
        let mut net = Self::new(input_shape, layers, seed)?;
        if weights.len() != net.weights.len() || biases.len() != net.biases.len() {
            return Err(Error::Shape(format!(
                "expected {} parameter tensors, got {} weights and {} biases",
                net.weights.len(),
                weights.len(),
                biases.len()
            )));
        }
        for (have, want) in weights.iter().chain(&biases).zip(net.weights.iter().chain(&net.biases)) {
            if have.shape() != want.shape() {
                return Err(Error::Shape(format!(
                    "parameter shape {:?} does not match layer shape {:?}",
                    have.shape(),
                    want.shape()
                )));
            }
        }
        net.weights = weights;
        net.biases = biases;
        Ok(net)
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn input_width(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn num_outputs(&self) -> usize {
        self.biases.last().map_or(0, |b| b.len())
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn weights(&self) -> &[Tensor<T>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Tensor<T>] {
        &self.biases
    }

    pub fn num_param_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn weight_mut(&mut self, layer: usize) -> &mut [T] {
        self.weights[layer].data_mut()
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut [T] {
        self.biases[layer].data_mut()
    }

    /// Sum of weight and bias element counts over parameterized layers.
    pub fn count_parameters(&self) -> usize {
        self.weights.iter().chain(&self.biases).map(Tensor::len).sum()
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            input_shape: self.input_shape.clone(),
            layers: self.layers.clone(),
            weights: self.weights.iter().map(Tensor::cast).collect(),
            biases: self.biases.iter().map(Tensor::cast).collect(),
            seed: self.seed,
        }
    }

    fn batch_size(&self, batch: &Tensor<T>) -> Result<usize> {
        if batch.row_len() != self.input_width() || batch.shape().len() < 2 {
            return Err(Error::Shape(format!(
                "batch shape {:?} does not match network input {:?}",
                batch.shape(),
                self.input_shape
            )));
        }
        Ok(batch.rows())
    }

    fn params(&self, slot: Option<usize>) -> Option<(&[T], &[T])> {
        slot.map(|i| (self.weights[i].data(), self.biases[i].data()))
    }

    fn param_slots(&self) -> Vec<Option<usize>> {
        let mut next = 0;
        self.layers
            .iter()
            .map(|l| {
                l.has_params().then(|| {
                    next += 1;
                    next - 1
                })
            })
            .collect()
    }

    /// Runs the batch through every layer, keeping each layer's output.
    pub fn forward(&self, batch: &Tensor<T>) -> Result<Activations<T>> {
        let n = self.batch_size(batch)?;
        let mut outputs: Vec<Tensor<T>> = Vec::with_capacity(self.layers.len());
        for (spec, slot) in self.layers.iter().zip(self.param_slots()) {
            let input = outputs.last().map_or(batch.data(), |t| t.data());
            let out = layer::forward(spec, self.params(slot), input, n);
            let width = out.len() / n;
            outputs.push(Tensor::new(vec![n, width], out)?);
        }
        Ok(Activations { layers: outputs })
    }

    /// Class probabilities only.
    pub fn predict(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let n = self.batch_size(batch)?;
        let mut cur = batch.data().to_vec();
        for (spec, slot) in self.layers.iter().zip(self.param_slots()) {
            cur = layer::forward(spec, self.params(slot), &cur, n);
        }
        let width = cur.len() / n;
        Tensor::new(vec![n, width], cur)
    }

    /// Mean cross-entropy over the batch and its gradient with respect to
    /// every weight and bias.
    pub fn loss_and_gradients(
        &self,
        batch: &Tensor<T>,
        labels: &[usize],
    ) -> Result<(T, Gradients<T>)> {
        let n = self.batch_size(batch)?;
        if labels.len() != n {
            return Err(Error::Shape(format!(
                "{} labels for a batch of {n}",
                labels.len()
            )));
        }
        let classes = self.num_outputs();
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        let acts = self.forward(batch)?;
        let depth = self.layers.len();
        let logits = if depth >= 2 {
            acts.layers[depth - 2].data()
        } else {
            batch.data()
        };
        let probs = acts.layers[depth - 1].data();
        let scale = T::one() / T::from_f64_lossy(n as f64);

        // Loss through log-sum-exp of the logits so it stays finite even when
        // a probability underflows.
        let mut loss = T::zero();
        let mut delta = vec![T::zero(); n * classes];
        for (s, &label) in labels.iter().enumerate() {
            let z = &logits[s * classes..(s + 1) * classes];
            let max = z.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + z.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
            loss += lse - z[label];
            let d = &mut delta[s * classes..(s + 1) * classes];
            d.copy_from_slice(&probs[s * classes..(s + 1) * classes]);
            d[label] = d[label] - T::one();
            for v in d.iter_mut() {
                *v = *v * scale;
            }
        }
        loss = loss * scale;

        let mut grads = Gradients {
            weights: self.weights.iter().map(|w| Tensor::zeros(w.shape().to_vec())).collect(),
            biases: self.biases.iter().map(|b| Tensor::zeros(b.shape().to_vec())).collect(),
        };
        let slots = self.param_slots();
        for i in (0..depth - 1).rev() {
            let input = if i == 0 { batch.data() } else { acts.layers[i - 1].data() };
            let output = acts.layers[i].data();
            let g = slots[i].map(|k| {
                let (w, b) = (&mut grads.weights[k], &mut grads.biases[k]);
                (w.data_mut(), b.data_mut())
            });
            delta = layer::backward(
                &self.layers[i],
                self.params(slots[i]),
                g,
                input,
                output,
                &delta,
                n,
            );
        }
        Ok((loss, grads))
    }

    /// Plain gradient step: every parameter `p` becomes `p - lr * g`.
    pub fn sgd_update(&mut self, grads: &Gradients<T>, lr: T) -> Result<()> {
        let pairs = self
            .weights
            .iter()
            .chain(&self.biases)
            .zip(grads.weights.iter().chain(&grads.biases));
        if grads.weights.len() != self.weights.len()
            || grads.biases.len() != self.biases.len()
            || pairs.clone().any(|(p, g)| p.shape() != g.shape())
        {
            return Err(Error::Shape("gradients do not match network parameters".into()));
        }
        for (p, g) in self
            .weights
            .iter_mut()
            .chain(self.biases.iter_mut())
            .zip(grads.weights.iter().chain(&grads.biases))
        {
            for (v, &d) in p.data_mut().iter_mut().zip(g.data()) {
                *v = *v - lr * d;
            }
        }
        Ok(())
    }
}

/// FCDNN: four equal sigmoid hidden layers and a softmax output.
pub fn build_fcdnn<T: Real>(
    n_hidden: usize,
    n_inputs: usize,
    n_outputs: usize,
    seed: u64,
) -> Result<Network<T>> {
    if n_hidden == 0 || n_inputs == 0 || n_outputs == 0 {
        return Err(Error::InvalidArgument(format!(
            "FCDNN dims must be positive (hidden={n_hidden}, inputs={n_inputs}, outputs={n_outputs})"
        )));
    }
    let mut layers = Vec::new();
    let mut prev = n_inputs;
    for _ in 0..FCDNN_HIDDEN_LAYERS {
        layers.push(LayerSpec::Dense {
            inputs: prev,
            outputs: n_hidden,
        });
        layers.push(LayerSpec::Sigmoid);
        prev = n_hidden;
    }
    layers.push(LayerSpec::Dense {
        inputs: prev,
        outputs: n_outputs,
    });
    layers.push(LayerSpec::Softmax);
    Network::new(vec![n_inputs], layers, seed)
}

/// Reference CNN on 3×32×32 inputs with a 64-unit hidden layer and 10 classes.
pub fn build_cnn<T: Real>(maps: (usize, usize, usize), seed: u64) -> Result<Network<T>> {
    build_cnn_with(CNN_INPUT, maps, CNN_FC_UNITS, CNN_OUTPUTS, seed)
}

/// Three conv5×5+ReLU+maxpool stages, then FC+ReLU and FC+softmax.
/// Spatial dims must be divisible by 8.
pub fn build_cnn_with<T: Real>(
    input: [usize; 3],
    maps: (usize, usize, usize),
    fc_units: usize,
    n_outputs: usize,
    seed: u64,
) -> Result<Network<T>> {
    let (m1, m2, m3) = maps;
    if m1 == 0 || m2 == 0 || m3 == 0 {
        return Err(Error::InvalidArgument(format!(
            "feature map counts must be positive, got {m1}-{m2}-{m3}"
        )));
    }
    let [channels, mut h, mut w] = input;
    if h % 8 != 0 || w % 8 != 0 {
        return Err(Error::InvalidArgument(format!(
            "CNN input spatial size {h}x{w} must be divisible by 8"
        )));
    }
    let mut layers = Vec::new();
    let mut prev = channels;
    for m in [m1, m2, m3] {
        layers.push(LayerSpec::Conv2d {
            in_channels: prev,
            out_channels: m,
            height: h,
            width: w,
        });
        layers.push(LayerSpec::Relu);
        layers.push(LayerSpec::MaxPool2x2 {
            channels: m,
            height: h,
            width: w,
        });
        prev = m;
        h /= 2;
        w /= 2;
    }
    layers.push(LayerSpec::Dense {
        inputs: prev * h * w,
        outputs: fc_units,
    });
    layers.push(LayerSpec::Relu);
    layers.push(LayerSpec::Dense {
        inputs: fc_units,
        outputs: n_outputs,
    });
    layers.push(LayerSpec::Softmax);
    Network::new(input.to_vec(), layers, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Fcdnn,
    Cnn,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Fcdnn => "fcdnn",
            Family::Cnn => "cnn",
        })
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fcdnn" => Ok(Family::Fcdnn),
            "cnn" => Ok(Family::Cnn),
            _ => Err(Error::InvalidArgument(format!("unknown family `{s}`"))),
        }
    }
}

/// Network size within a family: hidden width for FCDNNs, feature-map
/// triple for CNNs. Text form is `"256"` or `"32-32-64"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SizeConfig {
    Fcdnn { hidden: usize },
    Cnn { maps: (usize, usize, usize) },
}

impl SizeConfig {
    pub fn family(&self) -> Family {
        match self {
            SizeConfig::Fcdnn { .. } => Family::Fcdnn,
            SizeConfig::Cnn { .. } => Family::Cnn,
        }
    }

    pub fn parse(family: Family, label: &str) -> Result<Self> {
        let num = |s: &str| {
            s.trim()
                .parse::<usize>()
                .ok()
                .filter(|&v| v > 0)
                .ok_or_else(|| Error::InvalidArgument(format!("bad size `{label}`")))
        };
        match family {
            Family::Fcdnn => Ok(SizeConfig::Fcdnn { hidden: num(label)? }),
            Family::Cnn => {
                let parts = label.split('-').map(num).collect::<Result<Vec<_>>>()?;
                match parts[..] {
                    [a, b, c] => Ok(SizeConfig::Cnn { maps: (a, b, c) }),
                    _ => Err(Error::InvalidArgument(format!(
                        "CNN size must look like 32-32-64, got `{label}`"
                    ))),
                }
            }
        }
    }

    pub fn label(&self) -> String {
        match *self {
            SizeConfig::Fcdnn { hidden } => hidden.to_string(),
            SizeConfig::Cnn { maps: (a, b, c) } => format!("{a}-{b}-{c}"),
        }
    }

    /// Scalar size used on error-vs-size curves: hidden width for FCDNNs,
    /// last-stage map count for CNNs.
    pub fn layer_size(&self) -> f64 {
        match *self {
            SizeConfig::Fcdnn { hidden } => hidden as f64,
            SizeConfig::Cnn { maps } => maps.2 as f64,
        }
    }

    /// Builds the network for inputs of the given per-sample shape.
    pub fn build<T: Real>(
        &self,
        input_shape: &[usize],
        n_outputs: usize,
        seed: u64,
    ) -> Result<Network<T>> {
        match *self {
            SizeConfig::Fcdnn { hidden } => {
                build_fcdnn(hidden, input_shape.iter().product(), n_outputs, seed)
            }
            SizeConfig::Cnn { maps } => match *input_shape {
                [c, h, w] => build_cnn_with([c, h, w], maps, CNN_FC_UNITS, n_outputs, seed),
                _ => Err(Error::Shape(format!(
                    "CNN needs channel×height×width inputs, got {input_shape:?}"
                ))),
            },
        }
    }
}

impl fmt::Display for SizeConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}
