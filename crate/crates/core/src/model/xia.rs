use rand_chacha::ChaCha8Rng;

use super::layers::{fan_in_weight, zeros, Bound, Linear};
use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Tape, Tensor, Var};

/// Where the attention queries come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionMode {
    /// Queries from the partner's features.
    Cross,
    /// Queries from the person's own features; the partner is ignored.
    SelfAttention,
}

/// Cross-interaction attention: `FC(MHA(w, v, v) + v)` over a batch of token
/// sequences, where `w` is the partner's feature and `v` the person's own.
///
/// Inputs are `[B·L, E]` matrices holding `B` sequences of `L` tokens of
/// width `E`. The FC block is two linear `E × E` layers, so with `Wo = 0`
/// and identity FC weights the module returns `v` unchanged.
#[derive(Clone, Debug)]
pub struct XiaModule {
    pub width: usize,
    pub heads: usize,
    pub residual: bool,
    pub mode: AttentionMode,
    wq: Linear,
    wk: Linear,
    wv: Linear,
    wo: Linear,
    fc1: Linear,
    fc2: Linear,
}

impl XiaModule {
    pub fn init(
        store: &mut ParamStore,
        name: &str,
        width: usize,
        heads: usize,
        residual: bool,
        mode: AttentionMode,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if heads == 0 || width % heads != 0 {
            return Err(Error::Config(format!("{heads} heads do not divide width {width}")));
        }
        let wq = Linear::init(store, &format!("{name}.q"), width, width, rng)?;
        let wk = Linear::init(store, &format!("{name}.k"), width, width, rng)?;
        let wv = Linear::init(store, &format!("{name}.v"), width, width, rng)?;
        // Without the residual a zero output projection would erase `v`.
        let wo_init = if residual {
            zeros([width, width])
        } else {
            fan_in_weight(rng, width, width)
        };
        let wo = Linear::new(store, &format!("{name}.o"), wo_init, zeros([1, width]))?;
        let fc1 = Linear::new(store, &format!("{name}.fc1"), Tensor::eye(width)?, zeros([1, width]))?;
        let fc2 = Linear::new(store, &format!("{name}.fc2"), Tensor::eye(width)?, zeros([1, width]))?;
        Ok(XiaModule {
            width,
            heads,
            residual,
            mode,
            wq,
            wk,
            wv,
            wo,
            fc1,
            fc2,
        })
    }

    /// Refines `own` (`[batch·L, E]`). `partner` must have the same shape in
    /// cross mode and is not read in self-attention mode.
    pub fn forward(&self, tape: &mut Tape, p: Bound, own: Var, partner: Option<Var>, batch: usize) -> Result<Var> {
        let shape = tape.shape(own).to_vec();
        if shape.len() != 2 || shape[1] != self.width || batch == 0 || shape[0] % batch != 0 {
            return Err(Error::dim(
                "xia",
                format!("own {shape:?} with width {} and batch {batch}", self.width),
            ));
        }
        let query_src = match self.mode {
            AttentionMode::SelfAttention => own,
            AttentionMode::Cross => {
                let w = partner.ok_or_else(|| Error::contract("cross attention needs the partner feature"))?;
                if tape.shape(w) != shape.as_slice() {
                    return Err(Error::dim("xia", format!("partner {:?} vs own {shape:?}", tape.shape(w))));
                }
                w
            }
        };
        let len = shape[0] / batch;
        let as3 = |tape: &mut Tape, x: Var| tape.reshape(x, [batch, len, self.width]);

        let q = self.wq.forward(tape, p, query_src)?;
        let k = self.wk.forward(tape, p, own)?;
        let v = self.wv.forward(tape, p, own)?;
        let (q, k, v) = (as3(tape, q)?, as3(tape, k)?, as3(tape, v)?);

        let dh = self.width / self.heads;
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (
                    tape.slice(q, 2, h * dh, dh)?,
                    tape.slice(k, 2, h * dh, dh)?,
                    tape.slice(v, 2, h * dh, dh)?,
                )
            };
            let kt = tape.transpose(kh)?;
            let scores = tape.matmul(qh, kt)?;
            let scores = tape.scale(scores, 1.0 / (dh as f64).sqrt())?;
            let weights = tape.softmax(scores, 2)?;
            outs.push(tape.matmul(weights, vh)?);
        }
        let heads = if outs.len() == 1 { outs[0] } else { tape.concat(&outs, 2)? };
        let heads = tape.reshape(heads, [batch * len, self.width])?;
        let mut x = self.wo.forward(tape, p, heads)?;
        if self.residual {
            x = tape.add(x, own)?;
        }
        let x = self.fc1.forward(tape, p, x)?;
        self.fc2.forward(tape, p, x)
    }
}
