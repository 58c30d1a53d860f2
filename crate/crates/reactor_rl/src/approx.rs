//! Dense feed-forward networks with analytic backpropagation and Adam.
//!
//! This is the engine under every actor and critic: ReLU hidden layers,
//! a linear or range-scaled tanh output, exact reverse-mode gradients
//! (including the gradient with respect to the input, which actor updates
//! need to differentiate through a critic), and a bias-corrected Adam
//! optimizer. All math is f64 and batched through matrix products.

use ndarray::{Array1, Array2, Axis, Zip};
use rand::{Rng, RngExt};
use std::io::{Read, Write};

use crate::binio;
use crate::error::{Error, Result};

const MLP_MAGIC: &[u8; 4] = b"MLP1";

/// Activation applied to the final layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OutputActivation {
    Linear,
    /// tanh rescaled to map the reals onto [lo, hi], midpoint at zero
    /// pre-activation.
    ScaledTanh { lo: f64, hi: f64 },
}

/// Layered feed-forward approximator. Hidden layers use ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    /// Per layer: [n_in, n_out].
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
    out_act: OutputActivation,
}

/// Activations recorded during a forward pass, consumed by [`Mlp::backward`].
pub struct ForwardCache {
    /// acts[0] is the input batch; acts[l + 1] the output of layer l.
    acts: Vec<Array2<f64>>,
}

/// Parameter gradients with the same shapes as the network parameters.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub w: Vec<Array2<f64>>,
    pub b: Vec<Array1<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Gradients {
            w: net.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            b: net.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.w.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.b.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

impl Mlp {
    /// Build a network with uniform fan-in initialization: every weight and
    /// bias of a layer with `n_in` inputs is drawn from U(-1/sqrt(n_in),
    /// 1/sqrt(n_in)). Draw order is fixed (layer by layer, weights
    /// row-major, then biases) so a seeded RNG reproduces the network.
    pub fn init<R: Rng + ?Sized>(sizes: &[usize], out_act: OutputActivation, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output sizes");
        assert!(sizes.iter().all(|&s| s > 0), "layer widths must be positive");
        let mut weights = Vec::with_capacity(sizes.len() - 1);
        let mut biases = Vec::with_capacity(sizes.len() - 1);
        for l in 0..sizes.len() - 1 {
            let (n_in, n_out) = (sizes[l], sizes[l + 1]);
            let bound = 1.0 / (n_in as f64).sqrt();
            let w = Array2::from_shape_fn((n_in, n_out), |_| rng.random_range(-bound..bound));
            let b = Array1::from_shape_fn(n_out, |_| rng.random_range(-bound..bound));
            weights.push(w);
            biases.push(b);
        }
        Mlp {
            sizes: sizes.to_vec(),
            weights,
            biases,
            out_act,
        }
    }

    /// Assemble a network from explicit parameter tensors. Shapes must be
    /// consistent with `sizes`; intended for handcrafted nets in tests and
    /// tools.
    pub fn from_raw_parts(
        sizes: Vec<usize>,
        weights: Vec<Array2<f64>>,
        biases: Vec<Array1<f64>>,
        out_act: OutputActivation,
    ) -> Self {
        assert_eq!(weights.len(), sizes.len() - 1);
        assert_eq!(biases.len(), sizes.len() - 1);
        for l in 0..weights.len() {
            assert_eq!(weights[l].nrows(), sizes[l]);
            assert_eq!(weights[l].ncols(), sizes[l + 1]);
            assert_eq!(biases[l].len(), sizes[l + 1]);
        }
        Mlp {
            sizes,
            weights,
            biases,
            out_act,
        }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.out_act
    }

    pub fn param_count(&self) -> usize {
        self.sizes
            .windows(2)
            .map(|w| (w[0] + 1) * w[1])
            .sum()
    }

    /// Mutable view of the final layer's bias, used to centre an actor's
    /// initial output on the midpoint of the action range.
    pub fn output_bias_mut(&mut self) -> &mut Array1<f64> {
        self.biases.last_mut().unwrap()
    }

    /// All parameters flattened in a fixed order (per layer: weights
    /// row-major, then biases).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    /// Largest absolute parameter difference between two equally shaped nets.
    pub fn max_abs_diff(&self, other: &Mlp) -> f64 {
        self.flatten()
            .iter()
            .zip(other.flatten().iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    fn apply_output_activation(&self, z: &mut Array2<f64>) {
        if let OutputActivation::ScaledTanh { lo, hi } = self.out_act {
            let half = 0.5 * (hi - lo);
            let mid = 0.5 * (hi + lo);
            z.mapv_inplace(|v| mid + half * v.tanh());
        }
    }

    /// Forward pass over a batch (rows are samples).
    pub fn forward_batch(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward_cached(x)?.0)
    }

    /// Forward pass that records per-layer activations for a later
    /// [`Mlp::backward`].
    pub fn forward_cached(&self, x: &Array2<f64>) -> Result<(Array2<f64>, ForwardCache)> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Shape {
                what: "mlp forward input",
                expected: self.input_dim(),
                got: x.ncols(),
            });
        }
        let n_layers = self.weights.len();
        let mut acts = Vec::with_capacity(n_layers + 1);
        acts.push(x.clone());
        for l in 0..n_layers {
            let mut z = acts[l].dot(&self.weights[l]);
            z += &self.biases[l];
            if l + 1 < n_layers {
                z.mapv_inplace(|v| v.max(0.0));
            } else {
                self.apply_output_activation(&mut z);
            }
            acts.push(z);
        }
        let out = acts.last().unwrap().clone();
        Ok((out, ForwardCache { acts }))
    }

    /// Single-sample forward pass.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let row = Array2::from_shape_vec((1, x.len()), x.to_vec())
            .map_err(|e| Error::fault(e.to_string()))?;
        let out = self.forward_batch(&row)?;
        Ok(out.row(0).to_vec())
    }

    /// Exact reverse-mode gradients for the batch recorded in `cache`.
    ///
    /// `upstream` is dLoss/dOutput, one row per sample; any loss scaling
    /// (e.g. 1/batch for a mean) belongs in it. Returns the parameter
    /// gradients summed over the batch together with dLoss/dInput.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        upstream: &Array2<f64>,
    ) -> Result<(Gradients, Array2<f64>)> {
        let n_layers = self.weights.len();
        let output = &cache.acts[n_layers];
        if upstream.raw_dim() != output.raw_dim() {
            return Err(Error::Shape {
                what: "mlp backward upstream",
                expected: output.len(),
                got: upstream.len(),
            });
        }

        let mut delta = match self.out_act {
            OutputActivation::Linear => upstream.clone(),
            OutputActivation::ScaledTanh { lo, hi } => {
                // dy/dz recovered from the cached output y:
                // y = mid + half*tanh(z)  =>  dy/dz = half*(1 - tanh^2 z).
                let half = 0.5 * (hi - lo);
                let mid = 0.5 * (hi + lo);
                let mut d = upstream.clone();
                Zip::from(&mut d).and(output).for_each(|du, &y| {
                    let th = (y - mid) / half;
                    *du *= half * (1.0 - th * th);
                });
                d
            }
        };

        let mut grads = Gradients {
            w: Vec::with_capacity(n_layers),
            b: Vec::with_capacity(n_layers),
        };
        let mut input_grad = None;
        for l in (0..n_layers).rev() {
            let a_prev = &cache.acts[l];
            grads.w.push(a_prev.t().dot(&delta));
            grads.b.push(delta.sum_axis(Axis(0)));
            let da_prev = delta.dot(&self.weights[l].t());
            if l > 0 {
                // ReLU mask: a unit inactive in the forward pass (act == 0)
                // receives exactly zero gradient.
                let mut next_delta = da_prev;
                Zip::from(&mut next_delta)
                    .and(&cache.acts[l])
                    .for_each(|d, &a| {
                        if a <= 0.0 {
                            *d = 0.0;
                        }
                    });
                delta = next_delta;
            } else {
                input_grad = Some(da_prev);
            }
        }
        grads.w.reverse();
        grads.b.reverse();
        Ok((grads, input_grad.unwrap()))
    }

    /// Polyak tracking update: self <- tau * source + (1 - tau) * self.
    pub fn polyak_from(&mut self, source: &Mlp, tau: f64) {
        for (wt, ws) in self.weights.iter_mut().zip(&source.weights) {
            Zip::from(wt).and(ws).for_each(|t, &s| *t = tau * s + (1.0 - tau) * *t);
        }
        for (bt, bs) in self.biases.iter_mut().zip(&source.biases) {
            Zip::from(bt).and(bs).for_each(|t, &s| *t = tau * s + (1.0 - tau) * *t);
        }
    }

    /// Hard copy of all parameters from `source`.
    pub fn copy_from(&mut self, source: &Mlp) {
        for (wt, ws) in self.weights.iter_mut().zip(&source.weights) {
            wt.assign(ws);
        }
        for (bt, bs) in self.biases.iter_mut().zip(&source.biases) {
            bt.assign(bs);
        }
    }

    /// Serialize as a flat binary parameter file with a layer-shape header.
    pub fn save<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MLP_MAGIC)?;
        match self.out_act {
            OutputActivation::Linear => binio::write_u8(w, 0)?,
            OutputActivation::ScaledTanh { lo, hi } => {
                binio::write_u8(w, 1)?;
                binio::write_f64(w, lo)?;
                binio::write_f64(w, hi)?;
            }
        }
        binio::write_u32(w, self.sizes.len() as u32)?;
        for s in &self.sizes {
            binio::write_u32(w, *s as u32)?;
        }
        for (wm, bv) in self.weights.iter().zip(&self.biases) {
            binio::write_f64_slice(w, wm.as_slice().expect("contiguous"))?;
            binio::write_f64_slice(w, bv.as_slice().expect("contiguous"))?;
        }
        Ok(())
    }

    pub fn load<R: Read>(r: &mut R) -> Result<Mlp> {
        binio::expect_magic(r, MLP_MAGIC, "mlp parameter file")?;
        let out_act = match binio::read_u8(r)? {
            0 => OutputActivation::Linear,
            1 => {
                let lo = binio::read_f64(r)?;
                let hi = binio::read_f64(r)?;
                OutputActivation::ScaledTanh { lo, hi }
            }
            tag => {
                return Err(Error::Checkpoint(format!(
                    "mlp parameter file: unknown activation tag {tag}"
                )))
            }
        };
        let n_sizes = binio::read_u32(r)? as usize;
        if n_sizes < 2 || n_sizes > 64 {
            return Err(Error::Checkpoint(format!(
                "mlp parameter file: implausible layer count {n_sizes}"
            )));
        }
        let mut sizes = Vec::with_capacity(n_sizes);
        for _ in 0..n_sizes {
            sizes.push(binio::read_u32(r)? as usize);
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..n_sizes - 1 {
            let (n_in, n_out) = (sizes[l], sizes[l + 1]);
            let w_data = binio::read_f64_vec(r, n_in * n_out)?;
            let w = Array2::from_shape_vec((n_in, n_out), w_data)
                .map_err(|e| Error::Checkpoint(e.to_string()))?;
            let b = Array1::from_vec(binio::read_f64_vec(r, n_out)?);
            weights.push(w);
            biases.push(b);
        }
        Ok(Mlp {
            sizes,
            weights,
            biases,
            out_act,
        })
    }
}

/// Adam optimizer state for one network.
#[derive(Debug, Clone)]
pub struct AdamState {
    m_w: Vec<Array2<f64>>,
    m_b: Vec<Array1<f64>>,
    v_w: Vec<Array2<f64>>,
    v_b: Vec<Array1<f64>>,
    step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_opt: f64,
}

impl AdamState {
    /// Zero-moment state with the canonical (0.9, 0.999, 1e-8) constants.
    pub fn new(net: &Mlp, lr: f64) -> Self {
        AdamState {
            m_w: net.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            m_b: net.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
            v_w: net.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            v_b: net.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps_opt: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn save<W: Write>(&self, w: &mut W) -> Result<()> {
        binio::write_f64(w, self.lr)?;
        binio::write_f64(w, self.beta1)?;
        binio::write_f64(w, self.beta2)?;
        binio::write_f64(w, self.eps_opt)?;
        binio::write_u64(w, self.step)?;
        for (mw, mb) in self.m_w.iter().zip(&self.m_b) {
            binio::write_f64_slice(w, mw.as_slice().expect("contiguous"))?;
            binio::write_f64_slice(w, mb.as_slice().expect("contiguous"))?;
        }
        for (vw, vb) in self.v_w.iter().zip(&self.v_b) {
            binio::write_f64_slice(w, vw.as_slice().expect("contiguous"))?;
            binio::write_f64_slice(w, vb.as_slice().expect("contiguous"))?;
        }
        Ok(())
    }

    /// Read back a state saved for a network with `net`'s shapes.
    pub fn load<R: Read>(r: &mut R, net: &Mlp) -> Result<AdamState> {
        let lr = binio::read_f64(r)?;
        let beta1 = binio::read_f64(r)?;
        let beta2 = binio::read_f64(r)?;
        let eps_opt = binio::read_f64(r)?;
        let step = binio::read_u64(r)?;
        let mut st = AdamState::new(net, lr);
        st.beta1 = beta1;
        st.beta2 = beta2;
        st.eps_opt = eps_opt;
        st.step = step;
        for l in 0..net.weights.len() {
            let w_shape = net.weights[l].raw_dim();
            let data = binio::read_f64_vec(r, w_shape[0] * w_shape[1])?;
            st.m_w[l] = Array2::from_shape_vec(w_shape, data)
                .map_err(|e| Error::Checkpoint(e.to_string()))?;
            st.m_b[l] = Array1::from_vec(binio::read_f64_vec(r, net.biases[l].len())?);
        }
        for l in 0..net.weights.len() {
            let w_shape = net.weights[l].raw_dim();
            let data = binio::read_f64_vec(r, w_shape[0] * w_shape[1])?;
            st.v_w[l] = Array2::from_shape_vec(w_shape, data)
                .map_err(|e| Error::Checkpoint(e.to_string()))?;
            st.v_b[l] = Array1::from_vec(binio::read_f64_vec(r, net.biases[l].len())?);
        }
        Ok(st)
    }
}

/// One bias-corrected Adam update of `net` along `grads`.
pub fn adam_step(net: &mut Mlp, grads: &Gradients, st: &mut AdamState) {
    st.step += 1;
    let bc1 = 1.0 - st.beta1.powi(st.step as i32);
    let bc2 = 1.0 - st.beta2.powi(st.step as i32);
    let (b1, b2, lr, eps) = (st.beta1, st.beta2, st.lr, st.eps_opt);
    for l in 0..net.weights.len() {
        Zip::from(&mut net.weights[l])
            .and(&mut st.m_w[l])
            .and(&mut st.v_w[l])
            .and(&grads.w[l])
            .for_each(|p, m, v, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
            });
        Zip::from(&mut net.biases[l])
            .and(&mut st.m_b[l])
            .and(&mut st.v_b[l])
            .and(&grads.b[l])
            .for_each(|p, m, v, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
            });
    }
}
