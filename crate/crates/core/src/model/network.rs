use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::conv::{conv2d_backward, conv2d_forward, ConvParams};
use crate::error::{shape_err, Error, Result};
use crate::model::spec::{
    ActivationOrder, LayerRole, LayerShape, NetworkSpec, VariantKind, IMAGE_CHANNELS,
};
use crate::ops::{add, add_assign, relu_backward, relu_forward};
use crate::tensor::{Dims, Real, Tensor4};

/// Stream id used for skip-conv initialization. Branch and path convs draw
/// from stream 0, so they come out identical across skip variants.
const SKIP_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy)]
struct UnitIndex {
    branch: [usize; 2],
    skip: Option<usize>,
    activation: ActivationOrder,
}

#[derive(Debug, Clone)]
struct Layout {
    extraction: Vec<usize>,
    units: Vec<UnitIndex>,
    reconstruction: Vec<usize>,
}

impl Layout {
    fn of(layers: &[LayerShape], spec: &NetworkSpec) -> Self {
        let mut layout = Layout {
            extraction: Vec::new(),
            units: Vec::new(),
            reconstruction: Vec::new(),
        };
        for (i, l) in layers.iter().enumerate() {
            match l.role {
                LayerRole::Extraction => layout.extraction.push(i),
                LayerRole::Branch { unit, index } => {
                    if index == 0 {
                        debug_assert_eq!(unit, layout.units.len());
                        layout.units.push(UnitIndex {
                            branch: [i, usize::MAX],
                            skip: None,
                            activation: spec.activation,
                        });
                    } else {
                        layout.units[unit].branch[1] = i;
                    }
                }
                LayerRole::Skip { unit } => layout.units[unit].skip = Some(i),
                LayerRole::Reconstruction => layout.reconstruction.push(i),
            }
        }
        layout
    }
}

/// A network spec with its parameters, in the order of [`NetworkSpec::layers`].
#[derive(Debug, Clone)]
pub struct Network<T = f32> {
    spec: NetworkSpec,
    layout: Layout,
    params: Vec<ConvParams<T>>,
}

/// Activations recorded by [`Network::forward_train`] for the backward pass.
pub struct Trace<T> {
    input: Tensor4<T>,
    /// Conv input and pre-activation of each extraction layer.
    extraction: Vec<(Tensor4<T>, Tensor4<T>)>,
    units: Vec<UnitTrace<T>>,
    /// Conv inputs of the reconstruction layers.
    reconstruction: Vec<Tensor4<T>>,
}

struct UnitTrace<T> {
    x: Tensor4<T>,
    a1: Tensor4<T>,
    a2: Tensor4<T>,
}

pub struct Gradients<T> {
    pub params: Vec<ConvParams<T>>,
    pub input: Tensor4<T>,
}

fn init_std(role: LayerRole, fan_in: usize) -> f64 {
    let fan_in = fan_in as f64;
    match role {
        // Followed by a ReLU.
        LayerRole::Extraction | LayerRole::Branch { index: 0, .. } => (2.0 / fan_in).sqrt(),
        // The two summed paths of a unit each carry half the signal power.
        LayerRole::Branch { .. } => (1.0 / fan_in).sqrt(),
        LayerRole::Skip { .. } => (0.5 / fan_in).sqrt(),
        LayerRole::Reconstruction => (1.0 / fan_in).sqrt(),
    }
}

/// Extra factor on the image-producing conv so an untrained network predicts
/// a near-zero residual.
pub const OUTPUT_GAIN: f64 = 0.01;

fn sample_conv<T: Real>(rng: &mut ChaCha8Rng, shape: &LayerShape) -> ConvParams<T> {
    let mut std = init_std(shape.role, shape.in_ch * 9);
    if shape.role == LayerRole::Reconstruction && shape.out_ch == IMAGE_CHANNELS {
        std *= OUTPUT_GAIN;
    }
    let mut p = ConvParams::zeros(shape.in_ch, shape.out_ch);
    for w in p.weights.data_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *w = T::from_f64(std * z);
    }
    p
}

impl<T: Real> Network<T> {
    /// Builds `spec` with fan-in scaled Gaussian weights and zero biases,
    /// deterministic in `seed`.
    pub fn build(spec: NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let layers = spec.layers();
        let mut main = ChaCha8Rng::seed_from_u64(seed);
        let mut skip = ChaCha8Rng::seed_from_u64(seed);
        skip.set_stream(SKIP_STREAM);
        let params = layers
            .iter()
            .map(|l| match l.role {
                LayerRole::Skip { .. } => sample_conv(&mut skip, l),
                _ => sample_conv(&mut main, l),
            })
            .collect();
        Ok(Self {
            layout: Layout::of(&layers, &spec),
            spec,
            params,
        })
    }

    /// One of the four skip/activation ablation variants of `spec`.
    pub fn build_variant(kind: VariantKind, spec: &NetworkSpec, seed: u64) -> Result<Self> {
        Self::build(kind.apply(spec), seed)
    }

    /// Reassembles a network from a spec and parameters in declared order.
    pub fn from_parts(spec: NetworkSpec, params: Vec<ConvParams<T>>) -> Result<Self> {
        spec.validate()?;
        let layers = spec.layers();
        if layers.len() != params.len() {
            return Err(Error::Format(format!(
                "spec declares {} convs, got {} parameter sets",
                layers.len(),
                params.len()
            )));
        }
        for (i, (l, p)) in layers.iter().zip(&params).enumerate() {
            if p.in_channels() != l.in_ch || p.out_channels() != l.out_ch {
                return Err(Error::Format(format!(
                    "conv {i}: expected {}->{}, got {}->{}",
                    l.in_ch,
                    l.out_ch,
                    p.in_channels(),
                    p.out_channels()
                )));
            }
        }
        Ok(Self {
            layout: Layout::of(&layers, &spec),
            spec,
            params,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &[ConvParams<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [ConvParams<T>] {
        &mut self.params
    }

    pub fn into_params(self) -> Vec<ConvParams<T>> {
        self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(ConvParams::param_count).sum()
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            spec: self.spec.clone(),
            layout: self.layout.clone(),
            params: self.params.iter().map(ConvParams::cast).collect(),
        }
    }

    /// Sets every weight and bias to zero.
    pub fn zero_params(&mut self) {
        for p in &mut self.params {
            p.weights.data_mut().fill(T::ZERO);
            p.bias.fill(T::ZERO);
        }
    }

    /// Parameters of the `F` branches, unit by unit.
    pub fn branch_params(&self) -> Vec<&ConvParams<T>> {
        self.layout
            .units
            .iter()
            .flat_map(|u| u.branch.iter().map(|&i| &self.params[i]))
            .collect()
    }

    fn check_input(&self, input: &Tensor4<T>) -> Result<()> {
        if input.dims().c != IMAGE_CHANNELS {
            return Err(shape_err!(
                "network input must have {IMAGE_CHANNELS} channel(s), got {}",
                input.dims().c
            ));
        }
        Ok(())
    }

    fn unit_forward(&self, u: &UnitIndex, x: &Tensor4<T>) -> Result<(Tensor4<T>, Tensor4<T>, Tensor4<T>)> {
        let [f1, f2] = u.branch;
        let (a1, a2, branch) = match u.activation {
            ActivationOrder::AfterAct => {
                let a1 = conv2d_forward(x, &self.params[f1])?;
                let a2 = conv2d_forward(&relu_forward(&a1), &self.params[f2])?;
                let b = relu_forward(&a2);
                (a1, a2, b)
            }
            ActivationOrder::PreAct => {
                let a1 = conv2d_forward(&relu_forward(x), &self.params[f1])?;
                let a2 = conv2d_forward(&relu_forward(&a1), &self.params[f2])?;
                let b = a2.clone();
                (a1, a2, b)
            }
        };
        let y = match u.skip {
            Some(s) => add(&conv2d_forward(x, &self.params[s])?, &branch)?,
            None => add(x, &branch)?,
        };
        Ok((y, a1, a2))
    }

    /// Inference on a `(n, 1, h, w)` batch.
    pub fn forward(&self, input: &Tensor4<T>) -> Result<Tensor4<T>> {
        let mut x = self.forward_residual(input)?;
        if self.spec.global_residual {
            add_assign(&mut x, input)?;
        }
        Ok(x)
    }

    /// Output of the reconstruction layers, before the global skip (if any)
    /// adds the input back.
    pub fn forward_residual(&self, input: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.check_input(input)?;
        let mut x = input.clone();
        for &i in &self.layout.extraction {
            x = relu_forward(&conv2d_forward(&x, &self.params[i])?);
        }
        for u in &self.layout.units {
            x = self.unit_forward(u, &x)?.0;
        }
        for &i in &self.layout.reconstruction {
            x = conv2d_forward(&x, &self.params[i])?;
        }
        Ok(x)
    }

    /// Forward pass that keeps what [`Network::backward`] needs.
    pub fn forward_train(&self, input: &Tensor4<T>) -> Result<(Tensor4<T>, Trace<T>)> {
        self.check_input(input)?;
        let mut trace = Trace {
            input: input.clone(),
            extraction: Vec::with_capacity(self.layout.extraction.len()),
            units: Vec::with_capacity(self.layout.units.len()),
            reconstruction: Vec::with_capacity(self.layout.reconstruction.len()),
        };
        let mut x = input.clone();
        for &i in &self.layout.extraction {
            let a = conv2d_forward(&x, &self.params[i])?;
            let next = relu_forward(&a);
            trace.extraction.push((x, a));
            x = next;
        }
        for u in &self.layout.units {
            let (y, a1, a2) = self.unit_forward(u, &x)?;
            trace.units.push(UnitTrace { x, a1, a2 });
            x = y;
        }
        for &i in &self.layout.reconstruction {
            let next = conv2d_forward(&x, &self.params[i])?;
            trace.reconstruction.push(x);
            x = next;
        }
        if self.spec.global_residual {
            add_assign(&mut x, input)?;
        }
        Ok((x, trace))
    }

    /// Gradients of a scalar loss with respect to every parameter and the
    /// input, given `d loss / d output`.
    pub fn backward(&self, trace: &Trace<T>, grad_out: &Tensor4<T>) -> Result<Gradients<T>> {
        let mut grads: Vec<Option<ConvParams<T>>> = vec![None; self.params.len()];
        let mut g = grad_out.clone();

        for (&i, x) in self
            .layout
            .reconstruction
            .iter()
            .zip(&trace.reconstruction)
            .rev()
        {
            let cg = conv2d_backward(x, &self.params[i], &g)?;
            grads[i] = Some(cg.params);
            g = cg.input;
        }

        for (u, t) in self.layout.units.iter().zip(&trace.units).rev() {
            let [f1, f2] = u.branch;
            let mut g_x = match u.skip {
                Some(s) => {
                    let cg = conv2d_backward(&t.x, &self.params[s], &g)?;
                    grads[s] = Some(cg.params);
                    cg.input
                }
                None => g.clone(),
            };
            let g_a2 = match u.activation {
                ActivationOrder::AfterAct => relu_backward(&t.a2, &g)?,
                ActivationOrder::PreAct => g,
            };
            let cg2 = conv2d_backward(&relu_forward(&t.a1), &self.params[f2], &g_a2)?;
            grads[f2] = Some(cg2.params);
            let g_a1 = relu_backward(&t.a1, &cg2.input)?;
            let branch_in = match u.activation {
                ActivationOrder::AfterAct => None,
                ActivationOrder::PreAct => Some(relu_forward(&t.x)),
            };
            let cg1 = conv2d_backward(branch_in.as_ref().unwrap_or(&t.x), &self.params[f1], &g_a1)?;
            grads[f1] = Some(cg1.params);
            let g_branch_x = match u.activation {
                ActivationOrder::AfterAct => cg1.input,
                ActivationOrder::PreAct => relu_backward(&t.x, &cg1.input)?,
            };
            add_assign(&mut g_x, &g_branch_x)?;
            g = g_x;
        }

        for (&i, (x, a)) in self.layout.extraction.iter().zip(&trace.extraction).rev() {
            let g_a = relu_backward(a, &g)?;
            let cg = conv2d_backward(x, &self.params[i], &g_a)?;
            grads[i] = Some(cg.params);
            g = cg.input;
        }

        if self.spec.global_residual {
            add_assign(&mut g, grad_out)?;
        }
        debug_assert_eq!(g.dims(), trace.input.dims());

        let params = grads
            .into_iter()
            .enumerate()
            .map(|(i, p)| p.ok_or_else(|| Error::Shape(format!("conv {i} received no gradient"))))
            .collect::<Result<_>>()?;
        Ok(Gradients { params, input: g })
    }
}

/// Wraps a single-channel plane as a `(1, 1, h, w)` tensor.
pub fn plane_tensor<T: Real>(h: usize, w: usize, data: Vec<T>) -> Result<Tensor4<T>> {
    Tensor4::from_vec(Dims::new(1, 1, h, w), data)
}
