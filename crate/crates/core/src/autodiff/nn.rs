//! Neural building blocks on top of the tape: linear layers, an LSTM,
//! a two-layer MLP and dropout.

use std::rc::Rc;

use rand::Rng;

use crate::autodiff::params::{Bound, ParamId, ParamStore};
use crate::autodiff::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Inverted dropout. In training mode each entry is zeroed with probability
/// `rate` and survivors are scaled by `1 / (1 - rate)`; otherwise identity.
pub fn dropout<T: Scalar, R: Rng>(
    tape: &mut Tape<T>,
    x: Var,
    rate: f64,
    training: bool,
    rng: &mut R,
) -> Result<Var> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!(
            "dropout rate {rate} outside [0, 1)"
        )));
    }
    if !training || rate == 0.0 {
        return Ok(x);
    }
    let (r, c) = tape.shape(x);
    let mask = dropout_mask(r, c, rate, rng);
    tape.mask_mul(x, Rc::new(mask))
}

pub fn dropout_mask<T: Scalar, R: Rng>(
    rows: usize,
    cols: usize,
    rate: f64,
    rng: &mut R,
) -> Matrix<T> {
    let keep = T::from_f64_lossy(1.0 / (1.0 - rate));
    Matrix::from_fn(rows, cols, |_, _| {
        if rng.gen::<f64>() < rate {
            T::zero()
        } else {
            keep
        }
    })
}

/// Affine map `x W + b`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Self {
        let weight = store.add_weight(&format!("{name}.weight"), fan_in, fan_out, rng);
        let bias = store.add_bias(&format!("{name}.bias"), fan_out);
        Self {
            weight,
            bias,
            fan_in,
            fan_out,
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, bound: &Bound, x: Var) -> Result<Var> {
        let xw = tape.matmul(x, bound.var(self.weight))?;
        tape.add_row(xw, bound.var(self.bias))
    }
}

/// Two-layer perceptron: `dropout -> linear -> relu -> dropout -> linear`.
#[derive(Clone, Copy, Debug)]
pub struct Mlp {
    pub hidden: Linear,
    pub output: Linear,
}

impl Mlp {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        hidden: usize,
        output: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            hidden: Linear::new(store, &format!("{name}.0"), input, hidden, rng),
            output: Linear::new(store, &format!("{name}.1"), hidden, output, rng),
        }
    }

    pub fn forward<T: Scalar, R: Rng>(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        x: Var,
        dropout_rate: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        let x = dropout(tape, x, dropout_rate, training, rng)?;
        let h = self.hidden.forward(tape, bound, x)?;
        let h = tape.relu(h);
        let h = dropout(tape, h, dropout_rate, training, rng)?;
        self.output.forward(tape, bound, h)
    }
}

/// Single-layer LSTM. Gate blocks are laid out as `[input, forget, cell, output]`.
#[derive(Clone, Copy, Debug)]
pub struct Lstm {
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub bias: ParamId,
    pub input_size: usize,
    pub hidden_size: usize,
}

/// Hidden and cell state of a batch of sequences.
#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub hidden: Var,
    pub cell: Var,
}

impl Lstm {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        input_size: usize,
        hidden_size: usize,
        rng: &mut R,
    ) -> Self {
        let w_input =
            store.add_weight(&format!("{name}.w_input"), input_size, 4 * hidden_size, rng);
        let w_hidden = store.add_weight(
            &format!("{name}.w_hidden"),
            hidden_size,
            4 * hidden_size,
            rng,
        );
        let mut b = Matrix::zeros(1, 4 * hidden_size);
        for j in hidden_size..2 * hidden_size {
            b.set(0, j, T::one());
        }
        let bias = store.add(format!("{name}.bias"), b, false);
        Self {
            w_input,
            w_hidden,
            bias,
            input_size,
            hidden_size,
        }
    }

    /// Input projection `x W_input + b` for every row of `x` at once.
    pub fn project<T: Scalar>(&self, tape: &mut Tape<T>, bound: &Bound, x: Var) -> Result<Var> {
        let (_, d) = tape.shape(x);
        if d != self.input_size {
            return Err(Error::Shape(format!(
                "lstm: input width {d}, expected {}",
                self.input_size
            )));
        }
        let xw = tape.matmul(x, bound.var(self.w_input))?;
        tape.add_row(xw, bound.var(self.bias))
    }

    /// One recurrence step on a batch. `projected` holds the already
    /// projected inputs (`B x 4H`); `prev` is `None` for the zero state.
    pub fn step<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        projected: Var,
        prev: Option<LstmState>,
    ) -> Result<LstmState> {
        let h = self.hidden_size;
        let gates = match prev {
            Some(state) => {
                let rec = tape.matmul(state.hidden, bound.var(self.w_hidden))?;
                tape.add(projected, rec)?
            }
            None => projected,
        };
        let i = tape.slice_cols(gates, 0, h)?;
        let i = tape.sigmoid(i);
        let g = tape.slice_cols(gates, 2 * h, h)?;
        let g = tape.tanh(g);
        let o = tape.slice_cols(gates, 3 * h, h)?;
        let o = tape.sigmoid(o);
        let ig = tape.mul(i, g)?;
        let cell = match prev {
            Some(state) => {
                let f = tape.slice_cols(gates, h, h)?;
                let f = tape.sigmoid(f);
                let fc = tape.mul(f, state.cell)?;
                tape.add(fc, ig)?
            }
            None => ig,
        };
        let tc = tape.tanh(cell);
        let hidden = tape.mul(o, tc)?;
        Ok(LstmState { hidden, cell })
    }

    /// Runs the recurrence over the rows of `sequence` (`L x D`) and returns
    /// the final hidden state (`1 x H`).
    pub fn forward_sequence<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        sequence: Var,
    ) -> Result<Var> {
        let len = tape.shape(sequence).0;
        if len == 0 {
            return Err(Error::EmptySequence);
        }
        let projected = self.project(tape, bound, sequence)?;
        let mut state = None;
        for t in 0..len {
            let row = tape.gather_rows(projected, Rc::from(vec![t]))?;
            state = Some(self.step(tape, bound, row, state)?);
        }
        Ok(state.expect("len >= 1").hidden)
    }
}
