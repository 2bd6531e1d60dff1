//! Flat layer lists with index-based skip connections.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rhomap_core::Exec;

use crate::layer::{Aux, Layer, Param};
use crate::{LayerSpec, NnError, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone)]
struct Cache {
    acts: Vec<Tensor>,
    aux: Vec<Aux>,
}

#[derive(Debug, Clone)]
pub struct Network {
    input_channels: usize,
    layers: Vec<Layer>,
    exec: Exec,
    cache: Option<Cache>,
}

/// Channel count of every activation, or the first inconsistency.
fn check_specs(input_channels: usize, specs: &[LayerSpec]) -> Result<Vec<usize>> {
    if input_channels == 0 {
        return Err(NnError::InvalidSpec("zero input channels".into()));
    }
    let mut ch = vec![input_channels];
    for (i, spec) in specs.iter().enumerate() {
        let cur = *ch.last().unwrap();
        let bad = |msg: String| Err(NnError::shape(i, msg));
        let next = match *spec {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
            } => {
                if kernel != 1 && kernel != 3 {
                    return Err(NnError::InvalidSpec(format!("layer {i}: kernel {kernel} not in {{1, 3}}")));
                }
                if in_channels != cur {
                    return bad(format!("conv2d expects {in_channels} channels, previous layer gives {cur}"));
                }
                if out_channels == 0 {
                    return Err(NnError::InvalidSpec(format!("layer {i}: zero output channels")));
                }
                out_channels
            }
            LayerSpec::FullyConnected {
                in_features,
                out_features,
            } => {
                if in_features != cur {
                    return bad(format!("fully_connected expects {in_features} features, previous layer gives {cur}"));
                }
                if out_features == 0 {
                    return Err(NnError::InvalidSpec(format!("layer {i}: zero output features")));
                }
                out_features
            }
            LayerSpec::BatchNorm {
                channels, eps, momentum, ..
            } => {
                if channels != cur {
                    return bad(format!("batch_norm expects {channels} channels, previous layer gives {cur}"));
                }
                if !(eps > 0.0) || !(0.0..=1.0).contains(&momentum) {
                    return Err(NnError::InvalidSpec(format!("layer {i}: bad batch_norm eps/momentum")));
                }
                cur
            }
            LayerSpec::ConcatSkip { from } => {
                if from > i {
                    return Err(NnError::InvalidSpec(format!("layer {i}: skip from later activation {from}")));
                }
                cur + ch[from]
            }
            LayerSpec::AddSkip { from } => {
                if from > i {
                    return Err(NnError::InvalidSpec(format!("layer {i}: skip from later activation {from}")));
                }
                if ch[from] != cur {
                    return bad(format!("add_skip of {} channels onto {cur}", ch[from]));
                }
                cur
            }
            LayerSpec::Limiter { y_min, y_max } => {
                if !(y_min < y_max) || !y_min.is_finite() || !y_max.is_finite() {
                    return Err(NnError::InvalidSpec(format!("layer {i}: limiter needs y_min < y_max")));
                }
                cur
            }
            LayerSpec::Rescale { scale, offset } => {
                if !scale.is_finite() || !offset.is_finite() {
                    return Err(NnError::InvalidSpec(format!("layer {i}: non-finite rescale")));
                }
                cur
            }
            LayerSpec::MaxPool2 | LayerSpec::Upsample2 | LayerSpec::Relu => cur,
        };
        ch.push(next);
    }
    Ok(ch)
}

impl Network {
    /// Builds a network with He-uniform weights drawn from `seed`.
    pub fn new(input_channels: usize, specs: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        check_specs(input_channels, &specs)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = specs.into_iter().map(|s| Layer::init(s, &mut rng)).collect();
        Ok(Self {
            input_channels,
            layers,
            exec: Exec::default(),
            cache: None,
        })
    }

    pub fn input_channels(&self) -> usize {
        self.input_channels
    }

    pub fn output_channels(&self) -> usize {
        let specs: Vec<LayerSpec> = self.specs();
        *check_specs(self.input_channels, &specs).expect("validated at construction").last().unwrap()
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec.clone()).collect()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn exec(&self) -> Exec {
        self.exec
    }

    pub fn set_exec(&mut self, exec: Exec) {
        self.exec = exec;
    }

    pub fn params(&self) -> impl Iterator<Item = &Param> {
        self.layers.iter().flat_map(|l| l.params.iter())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.layers.iter_mut().flat_map(|l| l.params.iter_mut())
    }

    pub fn num_params(&self) -> usize {
        self.params().map(|p| p.value.len()).sum()
    }

    /// All parameter values concatenated in layer order.
    pub fn param_vector(&self) -> Vec<f64> {
        self.params().flat_map(|p| p.value.iter().copied()).collect()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.grad.fill(0.0);
        }
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        if input.c() != self.input_channels {
            return Err(NnError::shape(
                0,
                format!("network expects {} input channels, got {}", self.input_channels, input.c()),
            ));
        }
        if input.n() == 0 {
            return Err(NnError::shape(0, "empty batch"));
        }
        Ok(())
    }

    /// Train mode uses batch statistics, updates batch-norm running averages and
    /// keeps what [`Network::backward`] needs. Eval mode is the same as
    /// [`Network::predict`].
    pub fn forward(&mut self, input: &Tensor, mode: Mode) -> Result<Tensor> {
        if mode == Mode::Eval {
            self.cache = None;
            return self.predict(input);
        }
        self.check_input(input)?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut aux = Vec::with_capacity(self.layers.len());
        acts.push(input.clone());
        let exec = self.exec;
        for idx in 0..self.layers.len() {
            let (y, a, stats) = self.layers[idx].forward(idx, &acts[idx], &acts, true, exec)?;
            if let Some(stats) = stats {
                self.layers[idx].update_running(stats);
            }
            acts.push(y);
            aux.push(a);
        }
        let out = acts.last().unwrap().clone();
        self.cache = Some(Cache { acts, aux });
        Ok(out)
    }

    /// Eval-mode forward pass; a pure function of parameters and input.
    pub fn predict(&self, input: &Tensor) -> Result<Tensor> {
        self.check_input(input)?;
        let mut acts: Vec<Tensor> = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input.clone());
        for (idx, layer) in self.layers.iter().enumerate() {
            let (y, _, _) = layer.forward(idx, &acts[idx], &acts, false, self.exec)?;
            acts.push(y);
        }
        Ok(acts.pop().unwrap())
    }

    /// Backpropagates `loss_grad` (d loss / d output) through the cached
    /// train-mode pass, overwriting every parameter gradient. Returns the
    /// gradient with respect to the input.
    pub fn backward(&mut self, loss_grad: &Tensor) -> Result<Tensor> {
        let cache = self.cache.take().ok_or(NnError::BackwardWithoutForward)?;
        let out = cache.acts.last().unwrap();
        if loss_grad.shape() != out.shape() {
            return Err(NnError::shape(
                self.layers.len().saturating_sub(1),
                format!("loss gradient {:?} vs output {:?}", loss_grad.shape(), out.shape()),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; cache.acts.len()];
        grads[self.layers.len()] = Some(loss_grad.data().to_vec());
        let exec = self.exec;
        for idx in (0..self.layers.len()).rev() {
            let Some(gy) = grads[idx + 1].take() else {
                // output of this layer feeds nothing that needs a gradient
                for p in self.layers[idx].params.iter_mut() {
                    p.grad.fill(0.0);
                }
                continue;
            };
            let back = self.layers[idx].backward(&cache.acts[idx], &cache.aux[idx], &gy, exec);
            for (p, g) in self.layers[idx].params.iter_mut().zip(back.param_grads) {
                p.grad = g;
            }
            accumulate(&mut grads[idx], back.gx);
            if let Some((from, gs)) = back.skip {
                accumulate(&mut grads[from], gs);
            }
        }
        let gin = grads[0].take().unwrap_or_else(|| vec![0.0; cache.acts[0].len()]);
        Tensor::from_vec(cache.acts[0].shape(), gin)
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, g: Vec<f64>) {
    match slot {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        None => *slot = Some(g),
    }
}

/// Incremental network construction that tracks the channel count.
///
/// [`NetworkBuilder::mark`] returns the activation index of the current
/// output, for use with [`NetworkBuilder::concat`] and [`NetworkBuilder::add`].
#[derive(Debug, Clone)]
pub struct NetworkBuilder {
    input_channels: usize,
    channels: usize,
    specs: Vec<LayerSpec>,
    skip_channels: Vec<usize>,
}

impl NetworkBuilder {
    pub fn new(input_channels: usize) -> Self {
        Self {
            input_channels,
            channels: input_channels,
            specs: Vec::new(),
            skip_channels: vec![input_channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn mark(&self) -> usize {
        self.specs.len()
    }

    fn push(&mut self, spec: LayerSpec, channels: usize) -> &mut Self {
        self.specs.push(spec);
        self.channels = channels;
        self.skip_channels.push(channels);
        self
    }

    pub fn conv(&mut self, out_channels: usize, kernel: usize) -> &mut Self {
        let spec = LayerSpec::Conv2d {
            in_channels: self.channels,
            out_channels,
            kernel,
        };
        self.push(spec, out_channels)
    }

    pub fn fc(&mut self, out_features: usize) -> &mut Self {
        let spec = LayerSpec::FullyConnected {
            in_features: self.channels,
            out_features,
        };
        self.push(spec, out_features)
    }

    pub fn batch_norm(&mut self) -> &mut Self {
        let spec = LayerSpec::BatchNorm {
            channels: self.channels,
            eps: crate::layer::BN_EPS,
            momentum: crate::layer::BN_MOMENTUM,
        };
        self.push(spec, self.channels)
    }

    pub fn relu(&mut self) -> &mut Self {
        self.push(LayerSpec::Relu, self.channels)
    }

    pub fn max_pool(&mut self) -> &mut Self {
        self.push(LayerSpec::MaxPool2, self.channels)
    }

    pub fn upsample(&mut self) -> &mut Self {
        self.push(LayerSpec::Upsample2, self.channels)
    }

    pub fn concat(&mut self, from: usize) -> &mut Self {
        let c = self.channels + self.skip_channels[from];
        self.push(LayerSpec::ConcatSkip { from }, c)
    }

    pub fn add(&mut self, from: usize) -> &mut Self {
        self.push(LayerSpec::AddSkip { from }, self.channels)
    }

    pub fn limiter(&mut self, y_min: f64, y_max: f64) -> &mut Self {
        self.push(LayerSpec::Limiter { y_min, y_max }, self.channels)
    }

    pub fn rescale(&mut self, scale: f64, offset: f64) -> &mut Self {
        self.push(LayerSpec::Rescale { scale, offset }, self.channels)
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn build(&self, seed: u64) -> Result<Network> {
        Network::new(self.input_channels, self.specs.clone(), seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn limiter_net() -> Network {
        Network::new(1, vec![LayerSpec::Limiter { y_min: 10.0, y_max: 100.0 }], 0).unwrap()
    }

    #[test]
    fn limiter_examples() {
        let net = limiter_net();
        let x = Tensor::from_rows(3, 1, vec![-5.0, 95.0, 50.0]).unwrap();
        assert_eq!(net.predict(&x).unwrap().data(), &[10.0, 100.0, 60.0]);
    }

    #[test]
    fn limiter_saturated_gradient_is_zero() {
        let mut net = limiter_net();
        let x = Tensor::from_rows(3, 1, vec![-5.0, 95.0, 50.0]).unwrap();
        net.forward(&x, Mode::Train).unwrap();
        let g = net.backward(&Tensor::full([3, 1, 1, 1], 1.0)).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn backward_without_forward() {
        let mut net = limiter_net();
        let err = net.backward(&Tensor::zeros([1, 1, 1, 1])).unwrap_err();
        assert!(matches!(err, NnError::BackwardWithoutForward));
        // the cache is consumed by backward
        let x = Tensor::zeros([1, 1, 1, 1]);
        net.forward(&x, Mode::Train).unwrap();
        net.backward(&x).unwrap();
        assert!(net.backward(&x).is_err());
    }

    #[test]
    fn shape_errors_name_the_layer() {
        let specs = vec![
            LayerSpec::Conv2d {
                in_channels: 1,
                out_channels: 2,
                kernel: 3,
            },
            LayerSpec::MaxPool2,
        ];
        let net = Network::new(1, specs, 0).unwrap();
        let err = net.predict(&Tensor::zeros([1, 1, 5, 4])).unwrap_err();
        assert!(matches!(err, NnError::Shape { layer: 1, .. }), "{err}");
        let err = net.predict(&Tensor::zeros([1, 2, 4, 4])).unwrap_err();
        assert!(matches!(err, NnError::Shape { layer: 0, .. }), "{err}");

        let bad = vec![
            LayerSpec::Relu,
            LayerSpec::Conv2d {
                in_channels: 3,
                out_channels: 2,
                kernel: 1,
            },
        ];
        let err = Network::new(1, bad, 0).unwrap_err();
        assert!(matches!(err, NnError::Shape { layer: 1, .. }), "{err}");
    }

    #[test]
    fn limiter_bounds_validated() {
        let err = Network::new(1, vec![LayerSpec::Limiter { y_min: 5.0, y_max: 5.0 }], 0).unwrap_err();
        assert!(matches!(err, NnError::InvalidSpec(_)));
    }

    #[test]
    fn builder_tracks_channels() {
        let mut b = NetworkBuilder::new(2);
        b.conv(4, 3);
        let skip = b.mark();
        b.max_pool().conv(8, 3).upsample().concat(skip).conv(1, 1);
        assert_eq!(b.channels(), 1);
        let net = b.build(1).unwrap();
        let y = net.predict(&Tensor::zeros([2, 2, 8, 8])).unwrap();
        assert_eq!(y.shape(), [2, 1, 8, 8]);
        assert_eq!(net.output_channels(), 1);
    }
}
