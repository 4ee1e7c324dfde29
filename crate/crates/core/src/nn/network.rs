use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{self, PoolIndices};
use super::params::{GradientSet, Parameters};
use super::spec::{ActivationKind, LayerSpec};
use crate::architectures::{infer_shapes, NetworkSpec, ShapeReport};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A validated network spec. Shapes are checked once, here; the forward
/// and backward passes only re-check what a caller could get wrong (the
/// input extents and the parameter layout).
#[derive(Debug, Clone)]
pub struct Network {
    spec: NetworkSpec,
    report: ShapeReport,
    layers: Vec<LayerSpec>,
}

#[derive(Debug, Clone)]
enum Aux {
    None,
    Pool(PoolIndices),
    Mask(Vec<f64>),
    Output(Tensor),
}

#[derive(Debug, Clone)]
struct LayerCache {
    input: Tensor,
    aux: Aux,
}

/// Intermediates of one forward pass, consumed by the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    layers: Vec<LayerCache>,
}

impl Network {
    pub fn new(spec: NetworkSpec) -> Result<Self> {
        let report = infer_shapes(&spec)?;
        let layers = spec.layers.iter().map(|l| l.layer).collect();
        Ok(Self {
            spec,
            report,
            layers,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn report(&self) -> &ShapeReport {
        &self.report
    }

    pub fn param_count(&self) -> usize {
        self.report.param_count()
    }

    pub fn zero_params(&self) -> Parameters {
        Parameters::zeros_for(&self.report, &self.layers)
    }

    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Parameters {
        Parameters::glorot_for(&self.report, &self.layers, rng)
    }

    fn check_params(&self, params: &Parameters) -> Result<()> {
        let expected = self.zero_params();
        let congruent = expected.blocks.len() == params.blocks.len()
            && expected.blocks.iter().zip(&params.blocks).all(|(a, b)| {
                a.layer == b.layer
                    && a.weights.len() == b.weights.len()
                    && a.biases.len() == b.biases.len()
            });
        if congruent {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "parameter layout does not match the network ({} expected, {} given)",
                expected.len(),
                params.len()
            )))
        }
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        let d = self.spec.input;
        let ok = match input.shape() {
            [r, c, ch] => (*r, *c, *ch) == (d.rows, d.cols, d.channels),
            [r, c] => d.channels == 1 && (*r, *c) == (d.rows, d.cols),
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "network expects {} input, got {:?}",
                d,
                input.shape()
            )))
        }
    }

    /// Runs every layer in order. Dropout masks are drawn from `rng` in
    /// layer order when `training` is set; otherwise `rng` is untouched.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        params: &Parameters,
        input: &Tensor,
        training: bool,
        rng: &mut R,
    ) -> Result<(Tensor, ForwardCache)> {
        self.check_input(input)?;
        self.check_params(params)?;
        let mut x = input.clone();
        if x.shape().len() == 2 {
            x = x.reshape(self.spec.input.to_vec())?;
        }
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut block = params.blocks.iter();
        for layer in &self.layers {
            let (out, aux) = match layer {
                LayerSpec::Conv2d(c) => {
                    let p = block.next().expect("validated parameter layout");
                    (layers::conv2d_forward(&x, &p.weights, &p.biases, c)?, Aux::None)
                }
                LayerSpec::MaxPool(p) => {
                    let (out, idx) = layers::maxpool_forward(&x, p)?;
                    (out, Aux::Pool(idx))
                }
                LayerSpec::Dense { .. } => {
                    let p = block.next().expect("validated parameter layout");
                    (layers::dense_forward(&x, &p.weights, &p.biases)?, Aux::None)
                }
                LayerSpec::Activation { function } => {
                    let out = layers::activation_forward(&x, *function);
                    let aux = match function {
                        ActivationKind::Relu => Aux::None,
                        ActivationKind::Sigmoid => Aux::Output(out.clone()),
                    };
                    (out, aux)
                }
                LayerSpec::Dropout { rate } => {
                    let (out, mask) = layers::dropout_apply(&x, *rate, rng, training)?;
                    (out, Aux::Mask(mask))
                }
                LayerSpec::Flatten => {
                    let n = x.len();
                    (x.clone().reshape(vec![n])?, Aux::None)
                }
                LayerSpec::Softmax => {
                    let out = layers::softmax_forward(&x);
                    (out.clone(), Aux::Output(out))
                }
            };
            caches.push(LayerCache { input: x, aux });
            x = out;
        }
        Ok((x, ForwardCache { layers: caches }))
    }

    /// Inference-mode forward pass (dropout is the identity).
    pub fn infer(&self, params: &Parameters, input: &Tensor) -> Result<Tensor> {
        let mut unused = ChaCha8Rng::seed_from_u64(0);
        Ok(self.forward(params, input, false, &mut unused)?.0)
    }

    /// Backpropagates a gradient with respect to the network output.
    pub fn backward(
        &self,
        params: &Parameters,
        cache: &ForwardCache,
        output_grad: &Tensor,
    ) -> Result<GradientSet> {
        self.backward_through(params, cache, output_grad, self.layers.len())
    }

    /// Backpropagates a gradient with respect to the inputs of the final
    /// softmax, i.e. the logits. This is the fused softmax/cross-entropy
    /// path: the caller supplies `p - onehot(y)` directly.
    pub fn backward_from_logits(
        &self,
        params: &Parameters,
        cache: &ForwardCache,
        logit_grad: &Tensor,
    ) -> Result<GradientSet> {
        if !self.spec.ends_in_softmax() {
            return Err(Error::Config(
                "fused logit gradient needs a network ending in softmax".into(),
            ));
        }
        self.backward_through(params, cache, logit_grad, self.layers.len() - 1)
    }

    fn backward_through(
        &self,
        params: &Parameters,
        cache: &ForwardCache,
        grad: &Tensor,
        end: usize,
    ) -> Result<GradientSet> {
        self.check_params(params)?;
        if cache.layers.len() != self.layers.len() {
            return Err(Error::Shape("forward cache belongs to a different network".into()));
        }
        let expected_len = if end == 0 {
            self.spec.input.len()
        } else {
            self.report.layers[end - 1].output.len()
        };
        if grad.len() != expected_len {
            return Err(Error::Shape(format!(
                "output gradient has {} values, expected {expected_len}",
                grad.len()
            )));
        }

        let mut grads = params.zeros_like();
        let mut block_idx = params.blocks.len();
        let mut g = grad.clone();
        for i in (0..end).rev() {
            let LayerCache { input, aux } = &cache.layers[i];
            g = match (&self.layers[i], aux) {
                (LayerSpec::Conv2d(c), _) => {
                    block_idx -= 1;
                    let p = &params.blocks[block_idx];
                    let up = g.reshape(self.report.layers[i].output.to_vec())?;
                    let lg = layers::conv2d_backward(input, &p.weights, c, &up)?;
                    grads.blocks[block_idx].weights = lg.weights;
                    grads.blocks[block_idx].biases = lg.biases;
                    lg.input
                }
                (LayerSpec::Dense { .. }, _) => {
                    block_idx -= 1;
                    let p = &params.blocks[block_idx];
                    let lg = layers::dense_backward(input, &p.weights, &g)?;
                    grads.blocks[block_idx].weights = lg.weights;
                    grads.blocks[block_idx].biases = lg.biases;
                    lg.input
                }
                (LayerSpec::MaxPool(_), Aux::Pool(idx)) => layers::maxpool_backward(idx, &g)?,
                (LayerSpec::Activation { function }, aux) => {
                    let output = match aux {
                        Aux::Output(o) => o,
                        _ => input,
                    };
                    layers::activation_backward(*function, input, output, &g)?
                }
                (LayerSpec::Dropout { .. }, Aux::Mask(mask)) => layers::dropout_backward(mask, &g)?,
                (LayerSpec::Flatten, _) => g.reshape(input.shape().to_vec())?,
                (LayerSpec::Softmax, Aux::Output(p)) => layers::softmax_backward(p, &g)?,
                _ => return Err(Error::Shape(format!("corrupt forward cache at layer {i}"))),
            };
        }
        Ok(grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::architectures::{build_dl1, build_dl1_for, build_dl2_for};
    use crate::tensor::Dims3;

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / f64::max(1.0, a.abs() + b.abs())
    }

    fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
    }

    /// Max relative error between backprop and central differences of
    /// `sum(probe * output)` over every parameter. Dropout masks are frozen
    /// by reseeding the same stream for each evaluation.
    fn network_grad_error(spec: NetworkSpec, seed: u64) -> f64 {
        let net = Network::new(spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = net.init_params(&mut rng);
        for b in &mut params.blocks {
            b.biases.iter_mut().for_each(|v| *v = rng.random_range(-0.1..0.1));
        }
        let input = random_tensor(&mut rng, net.spec().input.to_vec());
        let out_len = net.report().output().len();
        let probe: Vec<f64> = (0..out_len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let objective = |p: &Parameters| {
            let mut r = ChaCha8Rng::seed_from_u64(99);
            let (out, _) = net.forward(p, &input, true, &mut r).unwrap();
            out.data().iter().zip(&probe).map(|(a, b)| a * b).sum::<f64>()
        };
        let mut r = ChaCha8Rng::seed_from_u64(99);
        let (_, cache) = net.forward(&params, &input, true, &mut r).unwrap();
        let grads = net.backward(&params, &cache, &Tensor::vector(probe.clone())).unwrap();

        let analytic = grads.to_flat();
        let flat = params.to_flat();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        let mut probe_params = params.clone();
        for i in 0..flat.len() {
            let mut v = flat.clone();
            v[i] = flat[i] + h;
            probe_params.load_flat(&v).unwrap();
            let plus = objective(&probe_params);
            v[i] = flat[i] - h;
            probe_params.load_flat(&v).unwrap();
            let minus = objective(&probe_params);
            worst = worst.max(rel_err(analytic[i], (plus - minus) / (2.0 * h)));
        }
        worst
    }

    #[test]
    fn single_layer_matches_layer_forward() {
        let spec = NetworkSpec::new(Dims3::new(8, 1, 1)).push(LayerSpec::conv(1, 7, 1));
        let net = Network::new(spec).unwrap();
        let mut params = net.zero_params();
        params.blocks[0].weights = vec![1., 0., 0., 0., 0., 0., -1.];
        let input = Tensor::new(vec![8, 1, 1], (1..=8).map(f64::from).collect()).unwrap();
        let out = net.infer(&params, &input).unwrap();
        assert_eq!(out.data(), &[-6.0, -6.0]);
    }

    #[test]
    fn dl1_emits_probability_pair() {
        let net = Network::new(build_dl1()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = net.init_params(&mut rng);
        let input = random_tensor(&mut rng, vec![30, 10, 1]);
        let out = net.infer(&params, &input).unwrap();
        assert_eq!(out.len(), 2);
        assert!((out.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_wrong_input() {
        let net = Network::new(build_dl1()).unwrap();
        let params = net.zero_params();
        assert!(net.infer(&params, &Tensor::zeros(vec![30, 12, 1])).is_err());
    }

    #[test]
    fn dl1_gradient_check_reduced() {
        let err = network_grad_error(build_dl1_for(10, 4), 7);
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn dl2_gradient_check_reduced() {
        let err = network_grad_error(build_dl2_for(10, 12), 8);
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn deterministic_under_seed() {
        let net = Network::new(build_dl2_for(30, 12)).unwrap();
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let params = net.init_params(&mut rng);
            let input = random_tensor(&mut rng, vec![30, 12, 1]);
            let (out, cache) = net.forward(&params, &input, true, &mut rng).unwrap();
            let g = net.backward(&params, &cache, &Tensor::vector(vec![1.0, -1.0])).unwrap();
            (out, g)
        };
        let (a, ga) = run();
        let (b, gb) = run();
        assert_eq!(a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!(ga, gb);
    }
}
