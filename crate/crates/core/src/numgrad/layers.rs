use std::str::FromStr;

use crate::error::{Error, Result};

use super::{BufferId, NormStats, ParamId, ParamStore, Real, Tape, Tensor, Var};

/// Whether normalization layers use batch statistics or running estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Fully connected layer `y = xW + b`.
#[derive(Debug, Clone)]
pub struct Affine {
    name: String,
    weight: ParamId,
    bias: ParamId,
    in_dim: usize,
    out_dim: usize,
}

impl Affine {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, in_dim: usize, out_dim: usize) -> Result<Self> {
        let weight = store.add_uniform(&format!("{name}.weight"), &[in_dim, out_dim], in_dim)?;
        let bias = store.add(&format!("{name}.bias"), Tensor::zeros(&[out_dim]))?;
        Ok(Self {
            name: name.to_string(),
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn weight(&self) -> ParamId {
        self.weight
    }

    pub fn bias(&self) -> ParamId {
        self.bias
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let xv = tape.value(x);
        if xv.cols() != self.in_dim {
            return Err(Error::shape("affine", xv.shape(), store.value(self.weight).shape()));
        }
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let xw = tape.matmul(x, w)?;
        let y = tape.add_bias(xw, b)?;
        if !tape.value(y).is_finite() {
            return Err(Error::Numeric(format!("output of layer `{}`", self.name)));
        }
        Ok(y)
    }
}

/// Functional form of [`Affine::forward`].
pub fn affine<T: Real>(tape: &mut Tape<T>, store: &ParamStore<T>, layer: &Affine, x: Var) -> Result<Var> {
    layer.forward(tape, store, x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Relu,
    Tanh,
    Softmax,
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigmoid" => Ok(Self::Sigmoid),
            "relu" => Ok(Self::Relu),
            "tanh" => Ok(Self::Tanh),
            "softmax" => Ok(Self::Softmax),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }
}

impl Activation {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Sigmoid => "sigmoid",
            Self::Relu => "relu",
            Self::Tanh => "tanh",
            Self::Softmax => "softmax",
        }
    }

    pub fn apply<T: Real>(self, tape: &mut Tape<T>, x: Var) -> Var {
        match self {
            Self::Sigmoid => tape.sigmoid(x),
            Self::Relu => tape.relu(x),
            Self::Tanh => tape.tanh(x),
            Self::Softmax => tape.softmax(x),
        }
    }
}

/// Per-feature batch normalization with running statistics.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    gamma: ParamId,
    beta: ParamId,
    running_mean: BufferId,
    running_var: BufferId,
    eps: f64,
    momentum: f64,
    pass_single_row: bool,
}

impl BatchNorm {
    pub const EPS: f64 = 1e-5;

    /// `momentum` is the weight kept on the old running value (0.9 by default).
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, dim: usize, momentum: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&momentum) {
            return Err(Error::Config(format!("batchnorm momentum must be in [0, 1], got {momentum}")));
        }
        Ok(Self {
            gamma: store.add(&format!("{name}.gamma"), Tensor::full(&[dim], T::one()))?,
            beta: store.add(&format!("{name}.beta"), Tensor::zeros(&[dim]))?,
            running_mean: store.add_buffer(&format!("{name}.running_mean"), Tensor::zeros(&[dim]))?,
            running_var: store.add_buffer(&format!("{name}.running_var"), Tensor::full(&[dim], T::one()))?,
            eps: Self::EPS,
            momentum,
            pass_single_row: false,
        })
    }

    /// Lets a single-row batch through unchanged in train mode instead of failing.
    pub fn with_single_row_passthrough(mut self, on: bool) -> Self {
        self.pass_single_row = on;
        self
    }

    pub fn gamma(&self) -> ParamId {
        self.gamma
    }

    pub fn beta(&self) -> ParamId {
        self.beta
    }

    pub fn running_mean(&self) -> BufferId {
        self.running_mean
    }

    pub fn running_var(&self) -> BufferId {
        self.running_var
    }

    /// Train mode normalizes with batch statistics and folds them into the
    /// running estimates; eval mode uses the running estimates only.
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &mut ParamStore<T>, x: Var, mode: Mode) -> Result<Var> {
        let gamma = tape.param(store, self.gamma);
        let beta = tape.param(store, self.beta);
        let eps = T::of(self.eps);
        match mode {
            Mode::Train if self.pass_single_row && tape.value(x).rows() == 1 => Ok(x),
            Mode::Train => {
                let (y, stats) = tape.batchnorm(x, gamma, beta, NormStats::Batch, eps)?;
                let (mean, var) = stats.expect("batch statistics");
                let keep = T::of(self.momentum);
                let take = T::one() - keep;
                for (r, m) in store.buffer_mut(self.running_mean).data_mut().iter_mut().zip(&mean) {
                    *r = keep * *r + take * *m;
                }
                for (r, v) in store.buffer_mut(self.running_var).data_mut().iter_mut().zip(&var) {
                    *r = keep * *r + take * *v;
                }
                Ok(y)
            }
            Mode::Eval => {
                let mean = store.buffer(self.running_mean).data().to_vec();
                let var = store.buffer(self.running_var).data().to_vec();
                let (y, _) = tape.batchnorm(x, gamma, beta, NormStats::Fixed { mean: &mean, var: &var }, eps)?;
                Ok(y)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn affine_with(w: Tensor<f64>, b: Tensor<f64>) -> (ParamStore<f64>, Affine) {
        let mut store = ParamStore::new(0);
        let layer = Affine::new(&mut store, "fc", w.rows(), w.cols()).unwrap();
        *store.value_mut(layer.weight()) = w;
        *store.value_mut(layer.bias()) = b;
        (store, layer)
    }

    fn run(store: &ParamStore<f64>, layer: &Affine, x: Tensor<f64>) -> Vec<f64> {
        let mut tape = Tape::new();
        let xv = tape.input(x);
        let y = affine(&mut tape, store, layer, xv).unwrap();
        tape.value(y).data().to_vec()
    }

    #[test]
    fn affine_identity_and_permutation() {
        let (s, l) = affine_with(Tensor::identity(2), Tensor::zeros(&[2]));
        assert_eq!(run(&s, &l, Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap()), vec![1.0, 2.0]);
        let perm = Tensor::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let (s, l) = affine_with(perm, Tensor::zeros(&[2]));
        assert_eq!(run(&s, &l, Tensor::from_rows(&[vec![3.0, 4.0]]).unwrap()), vec![4.0, 3.0]);
    }

    #[test]
    fn affine_scalar() {
        let (s, l) = affine_with(Tensor::from_rows(&[vec![2.0]]).unwrap(), Tensor::full(&[1], 1.0));
        assert_eq!(run(&s, &l, Tensor::from_rows(&[vec![3.0]]).unwrap()), vec![7.0]);
    }

    #[test]
    fn affine_shape_mismatch_names_both_shapes() {
        let (s, l) = affine_with(Tensor::identity(2), Tensor::zeros(&[2]));
        let mut tape = Tape::new();
        let x = tape.input(Tensor::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap());
        let err = affine(&mut tape, &s, &l, x).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[1, 3]") && msg.contains("[2, 2]"), "{msg}");
    }

    #[test]
    fn activations() {
        let mut tape = Tape::<f64>::new();
        let zero = tape.input(Tensor::scalar(0.0));
        let neg = tape.input(Tensor::scalar(-3.0));
        let row = tape.input(Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap());
        let s = Activation::Sigmoid.apply(&mut tape, zero);
        let r = Activation::Relu.apply(&mut tape, neg);
        let sm = Activation::Softmax.apply(&mut tape, row);
        assert_eq!(tape.scalar(s), 0.5);
        assert_eq!(tape.scalar(r), 0.0);
        assert_eq!(tape.value(sm).data(), &[0.5, 0.5]);
        assert!(matches!("gelu".parse::<Activation>(), Err(Error::Config(_))));
    }

    #[test]
    fn batchnorm_eval_uses_running_stats() {
        let mut store = ParamStore::<f64>::new(0);
        let bn = BatchNorm::new(&mut store, "bn", 1, 0.9).unwrap();
        let mut tape = Tape::new();
        let x = tape.input(Tensor::from_rows(&[vec![2.0]]).unwrap());
        let y = bn.forward(&mut tape, &mut store, x, Mode::Eval).unwrap();
        assert!((tape.scalar(y) - 2.0).abs() < 1e-4);
    }

    #[test]
    fn batchnorm_zero_gamma_annihilates() {
        let mut store = ParamStore::<f64>::new(0);
        let bn = BatchNorm::new(&mut store, "bn", 2, 0.9).unwrap();
        *store.value_mut(bn.gamma()) = Tensor::zeros(&[2]);
        let mut tape = Tape::new();
        let x = tape.input(Tensor::from_rows(&[vec![1.0, 5.0], vec![3.0, -2.0]]).unwrap());
        let y = bn.forward(&mut tape, &mut store, x, Mode::Train).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn batchnorm_single_row_policy() {
        let mut store = ParamStore::<f64>::new(0);
        let bn = BatchNorm::new(&mut store, "bn", 1, 0.9).unwrap();
        let mut tape = Tape::new();
        let x = tape.input(Tensor::from_rows(&[vec![4.0]]).unwrap());
        assert!(bn.forward(&mut tape, &mut store, x, Mode::Train).is_err());
        let bn = bn.with_single_row_passthrough(true);
        let y = bn.forward(&mut tape, &mut store, x, Mode::Train).unwrap();
        assert_eq!(tape.scalar(y), 4.0);
    }

    #[test]
    fn batchnorm_train_updates_running_stats() {
        let mut store = ParamStore::<f64>::new(0);
        let bn = BatchNorm::new(&mut store, "bn", 1, 0.9).unwrap();
        let mut tape = Tape::new();
        let x = tape.input(Tensor::from_rows(&[vec![1.0], vec![3.0]]).unwrap());
        bn.forward(&mut tape, &mut store, x, Mode::Train).unwrap();
        // mean 2, var 1
        assert!((store.buffer(bn.running_mean()).item() - 0.2).abs() < 1e-15);
        assert!((store.buffer(bn.running_var()).item() - 1.0).abs() < 1e-15);
    }
}
