//! Linear toy encoders with unit-norm outputs.
//!
//! An encoder is `e(x) = normalize(W x + b)`. That is enough structure to
//! exercise the full training loop (gradients flow through the
//! normalization) while staying cheap and exactly reproducible. Identity
//! initialization stands in for a pretrained backbone: with unit inputs it
//! starts as the identity on features, so mining quality at step zero
//! reflects the raw data geometry.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature::FeatureVec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyEncoder {
    in_dim: usize,
    out_dim: usize,
    /// Row-major `out_dim x in_dim`.
    weights: Vec<f64>,
    bias: Option<Vec<f64>>,
}

/// Byproducts of an encode pass needed for backpropagation.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodeTrace {
    /// Unit-norm output.
    pub unit: Vec<f64>,
    /// Norm of the pre-normalization output.
    pub raw_norm: f64,
}

/// Parameter-space gradient, same layout as the encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrad {
    pub weights: Vec<f64>,
    pub bias: Option<Vec<f64>>,
}

impl ToyEncoder {
    pub fn identity(dim: usize) -> Self {
        let mut weights = vec![0.0; dim * dim];
        for i in 0..dim {
            weights[i * dim + i] = 1.0;
        }
        ToyEncoder {
            in_dim: dim,
            out_dim: dim,
            weights,
            bias: None,
        }
    }

    /// Gaussian init scaled by 1/sqrt(in_dim) so raw outputs stay O(1) for
    /// unit inputs. Deterministic in the seed.
    pub fn seeded(in_dim: usize, out_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (in_dim as f64).sqrt();
        let weights = (0..in_dim * out_dim)
            .map(|_| {
                let g: f64 = StandardNormal.sample(&mut rng);
                g * scale
            })
            .collect();
        ToyEncoder {
            in_dim,
            out_dim,
            weights,
            bias: None,
        }
    }

    pub fn with_params(
        in_dim: usize,
        out_dim: usize,
        weights: Vec<f64>,
        bias: Option<Vec<f64>>,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::InvalidConfig("encoder dims must be >= 1".into()));
        }
        if weights.len() != in_dim * out_dim {
            return Err(Error::DimMismatch {
                context: "encoder weights".into(),
                expected: in_dim * out_dim,
                got: weights.len(),
            });
        }
        if let Some(b) = &bias {
            if b.len() != out_dim {
                return Err(Error::DimMismatch {
                    context: "encoder bias".into(),
                    expected: out_dim,
                    got: b.len(),
                });
            }
            if b.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    context: "encoder bias".into(),
                });
            }
        }
        if weights.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "encoder weights".into(),
            });
        }
        Ok(ToyEncoder {
            in_dim,
            out_dim,
            weights,
            bias,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> Option<&[f64]> {
        self.bias.as_deref()
    }

    fn raw_output(&self, input: &FeatureVec) -> Result<Vec<f64>> {
        if input.dim() != self.in_dim {
            return Err(Error::DimMismatch {
                context: "encoder input".into(),
                expected: self.in_dim,
                got: input.dim(),
            });
        }
        let x = input.values();
        let mut z = vec![0.0; self.out_dim];
        for i in 0..self.out_dim {
            let row = &self.weights[i * self.in_dim..(i + 1) * self.in_dim];
            let mut acc = 0.0;
            for (w, v) in row.iter().zip(x) {
                acc += w * v;
            }
            z[i] = acc;
        }
        if let Some(b) = &self.bias {
            for (zi, bi) in z.iter_mut().zip(b) {
                *zi += bi;
            }
        }
        Ok(z)
    }

    /// Unit-norm embedding of the input.
    pub fn encode(&self, input: &FeatureVec) -> Result<FeatureVec> {
        Ok(self.encode_traced(input)?.0)
    }

    /// Embedding plus the trace needed by `param_grad`.
    pub fn encode_traced(&self, input: &FeatureVec) -> Result<(FeatureVec, EncodeTrace)> {
        let raw = FeatureVec::new(self.raw_output(input)?).map_err(|_| Error::NonFinite {
            context: "encoder output".into(),
        })?;
        let raw_norm = raw.l2_norm();
        let unit = raw.normalized().map_err(|e| match e {
            Error::DegenerateFeature { .. } => Error::DegenerateFeature {
                context: "encoder output".into(),
            },
            other => other,
        })?;
        let trace = EncodeTrace {
            unit: unit.values().to_vec(),
            raw_norm,
        };
        Ok((unit, trace))
    }

    /// Backpropagates a gradient on the unit output to the parameters.
    /// The normalization Jacobian at output e with raw norm r is
    /// (I - e e^T) / r; that projection is idempotent, so callers may pass
    /// either the raw loss gradient on e or an already projected one.
    pub fn param_grad(
        &self,
        input: &FeatureVec,
        trace: &EncodeTrace,
        grad_unit: &[f64],
    ) -> Result<ParamGrad> {
        if input.dim() != self.in_dim {
            return Err(Error::DimMismatch {
                context: "param_grad input".into(),
                expected: self.in_dim,
                got: input.dim(),
            });
        }
        if grad_unit.len() != self.out_dim || trace.unit.len() != self.out_dim {
            return Err(Error::DimMismatch {
                context: "param_grad output gradient".into(),
                expected: self.out_dim,
                got: grad_unit.len(),
            });
        }
        if !(trace.raw_norm.is_finite() && trace.raw_norm > 0.0) {
            return Err(Error::NonFinite {
                context: "param_grad raw norm".into(),
            });
        }
        let e = &trace.unit;
        let along: f64 = grad_unit.iter().zip(e).map(|(g, u)| g * u).sum();
        let gz: Vec<f64> = grad_unit
            .iter()
            .zip(e)
            .map(|(g, u)| (g - along * u) / trace.raw_norm)
            .collect();
        let x = input.values();
        let mut gw = vec![0.0; self.out_dim * self.in_dim];
        for i in 0..self.out_dim {
            for j in 0..self.in_dim {
                gw[i * self.in_dim + j] = gz[i] * x[j];
            }
        }
        let gb = self.bias.as_ref().map(|_| gz.clone());
        Ok(ParamGrad {
            weights: gw,
            bias: gb,
        })
    }

    /// One SGD step: w <- w - lr * g.
    pub fn apply_step(&mut self, grad: &ParamGrad, learning_rate: f64) -> Result<()> {
        if grad.weights.len() != self.weights.len() {
            return Err(Error::DimMismatch {
                context: "apply_step weights".into(),
                expected: self.weights.len(),
                got: grad.weights.len(),
            });
        }
        if grad.bias.is_some() != self.bias.is_some() {
            return Err(Error::InvalidInput(
                "apply_step bias presence mismatch".into(),
            ));
        }
        if !learning_rate.is_finite() || learning_rate < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be finite and >= 0, got {learning_rate}"
            )));
        }
        for (w, g) in self.weights.iter_mut().zip(&grad.weights) {
            *w -= learning_rate * g;
        }
        if let (Some(b), Some(gb)) = (&mut self.bias, &grad.bias) {
            if gb.len() != b.len() {
                return Err(Error::DimMismatch {
                    context: "apply_step bias".into(),
                    expected: b.len(),
                    got: gb.len(),
                });
            }
            for (bi, gi) in b.iter_mut().zip(gb) {
                *bi -= learning_rate * gi;
            }
        }
        Ok(())
    }

    /// Sum of gradient accumulation, used when averaging over a batch.
    pub fn zero_grad(&self) -> ParamGrad {
        ParamGrad {
            weights: vec![0.0; self.weights.len()],
            bias: self.bias.as_ref().map(|b| vec![0.0; b.len()]),
        }
    }
}

impl ParamGrad {
    pub fn add_assign(&mut self, other: &ParamGrad) -> Result<()> {
        if self.weights.len() != other.weights.len()
            || self.bias.as_ref().map(|b| b.len()) != other.bias.as_ref().map(|b| b.len())
        {
            return Err(Error::InvalidInput("gradient shape mismatch".into()));
        }
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        if let (Some(a), Some(b)) = (&mut self.bias, &other.bias) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for w in &mut self.weights {
            *w *= factor;
        }
        if let Some(b) = &mut self.bias {
            for v in b {
                *v *= factor;
            }
        }
    }
}

/// Exponential moving average of the live encoder into `ema`, elementwise
/// `ema <- momentum * ema + (1 - momentum) * live`. The pair must have
/// identical shapes (including bias presence).
pub fn ema_update(ema: &mut ToyEncoder, live: &ToyEncoder, momentum: f64) -> Result<()> {
    if !(momentum.is_finite() && (0.0..1.0).contains(&momentum)) {
        return Err(Error::InvalidConfig(format!(
            "ema momentum must be in [0, 1), got {momentum}"
        )));
    }
    if ema.in_dim != live.in_dim
        || ema.out_dim != live.out_dim
        || ema.bias.is_some() != live.bias.is_some()
    {
        return Err(Error::InvalidInput(
            "ema and live encoder shapes differ".into(),
        ));
    }
    for (e, l) in ema.weights.iter_mut().zip(&live.weights) {
        *e = momentum * *e + (1.0 - momentum) * l;
    }
    if let (Some(eb), Some(lb)) = (&mut ema.bias, &live.bias) {
        for (e, l) in eb.iter_mut().zip(lb) {
            *e = momentum * *e + (1.0 - momentum) * l;
        }
    }
    Ok(())
}
