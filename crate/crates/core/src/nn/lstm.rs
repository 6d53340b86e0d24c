use alloc::format;

use serde::{Deserialize, Serialize};

use super::{uniform_fan_in, Bound, ParamId, ParamStore, RngStream};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Single LSTM layer. Gate pre-activations are packed column-wise in the
/// order input, forget, output, candidate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Lstm {
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl Lstm {
    /// Weights uniform in `±1/sqrt(input + hidden)`; forget-gate bias 1,
    /// all other biases 0.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut RngStream,
    ) -> Self {
        let fan_in = input + hidden;
        let w_x = store.add(
            format!("{name}.w_x"),
            uniform_fan_in(rng, input, 4 * hidden, fan_in),
        );
        let w_h = store.add(
            format!("{name}.w_h"),
            uniform_fan_in(rng, hidden, 4 * hidden, fan_in),
        );
        let mut b = Tensor::zeros(1, 4 * hidden);
        b.data[hidden..2 * hidden].iter_mut().for_each(|v| *v = 1.0);
        let bias = store.add(format!("{name}.b"), b);
        Lstm {
            w_x,
            w_h,
            bias,
            input,
            hidden,
        }
    }

    /// One cell update; returns `(h, c)`.
    pub fn step(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        h_prev: Var,
        c_prev: Var,
        x: Var,
    ) -> Result<(Var, Var)> {
        let m = self.hidden;
        let xs = tape.value(x);
        if xs.cols() != self.input {
            return Err(Error::ShapeMismatch {
                op: "lstm_step",
                lhs: xs.shape.clone(),
                rhs: alloc::vec![self.input],
            });
        }
        for v in [h_prev, c_prev] {
            let t = tape.value(v);
            if t.cols() != m {
                return Err(Error::ShapeMismatch {
                    op: "lstm_step",
                    lhs: t.shape.clone(),
                    rhs: alloc::vec![m],
                });
            }
        }
        let gx = tape.matmul(x, bound.var(self.w_x))?;
        let gh = tape.matmul(h_prev, bound.var(self.w_h))?;
        let pre = tape.add(gx, gh)?;
        let pre = tape.add(pre, bound.var(self.bias))?;
        let i = tape.slice(pre, 0, m)?;
        let f = tape.slice(pre, m, 2 * m)?;
        let o = tape.slice(pre, 2 * m, 3 * m)?;
        let g = tape.slice(pre, 3 * m, 4 * m)?;
        let i = tape.sigmoid(i)?;
        let f = tape.sigmoid(f)?;
        let o = tape.sigmoid(o)?;
        let g = tape.tanh(g)?;
        let fc = tape.mul(f, c_prev)?;
        let ig = tape.mul(i, g)?;
        let c = tape.add(fc, ig)?;
        let tc = tape.tanh(c)?;
        let h = tape.mul(o, tc)?;
        Ok((h, c))
    }
}
