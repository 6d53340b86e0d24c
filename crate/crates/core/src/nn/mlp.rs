use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{Bound, ParamId, ParamStore, RngStream};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Output activation of an [`Mlp`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Head {
    Linear,
    Softplus,
    Sigmoid,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Dense {
    w: ParamId,
    b: ParamId,
    fan_in: usize,
}

/// Dense stack with `tanh` hidden activations and a configurable head.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Dense>,
    head: Head,
}

/// `rows x cols` weights uniform in `±1/sqrt(fan_in)`.
pub fn uniform_fan_in(rng: &mut RngStream, rows: usize, cols: usize, fan_in: usize) -> Tensor {
    let bound = 1.0 / libm::sqrt(fan_in.max(1) as f64);
    let data = (0..rows * cols)
        .map(|_| rng.uniform_in(-bound, bound))
        .collect();
    Tensor {
        shape: alloc::vec![rows, cols],
        data,
    }
}

impl Mlp {
    /// `dims` lists every width from input to output, e.g. `[in, 128, 64, out]`.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dims: &[usize],
        head: Head,
        rng: &mut RngStream,
    ) -> Self {
        assert!(dims.len() >= 2, "an MLP needs an input and an output width");
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, d)| Dense {
                w: store.add(
                    format!("{name}.{i}.w"),
                    uniform_fan_in(rng, d[0], d[1], d[0]),
                ),
                b: store.add(format!("{name}.{i}.b"), Tensor::zeros(1, d[1])),
                fan_in: d[0],
            })
            .collect();
        Mlp { layers, head }
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].fan_in
    }

    /// `(weight, bias)` ids per layer.
    pub fn layer_params(&self) -> Vec<(ParamId, ParamId)> {
        self.layers.iter().map(|l| (l.w, l.b)).collect()
    }

    pub fn output_bias(&self) -> ParamId {
        self.layers.last().unwrap().b
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let width = tape.value(x).cols();
        if width != self.input_width() {
            return Err(Error::ShapeMismatch {
                op: "mlp_forward",
                lhs: tape.value(x).shape.clone(),
                rhs: alloc::vec![self.input_width()],
            });
        }
        let last = self.layers.len() - 1;
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            let z = tape.matmul(h, bound.var(layer.w))?;
            let z = tape.add(z, bound.var(layer.b))?;
            h = if i < last {
                tape.tanh(z)?
            } else {
                match self.head {
                    Head::Linear => z,
                    Head::Softplus => tape.softplus(z)?,
                    Head::Sigmoid => tape.sigmoid(z)?,
                }
            };
        }
        Ok(h)
    }
}
