use candle_core::{DType, Device, Tensor, D};
use rand::Rng;

use crate::error::Result;
use crate::models::params::ParamStore;
use crate::rng::SeededRng;

pub fn log_softmax(xs: &Tensor, dim: usize) -> Result<Tensor> {
    let max = xs.max_keepdim(dim)?;
    let shifted = xs.broadcast_sub(&max)?;
    let lse = shifted.exp()?.sum_keepdim(dim)?.log()?;
    Ok(shifted.broadcast_sub(&lse)?)
}

pub fn softmax(xs: &Tensor, dim: usize) -> Result<Tensor> {
    let max = xs.max_keepdim(dim)?;
    let e = xs.broadcast_sub(&max)?.exp()?;
    let sum = e.sum_keepdim(dim)?;
    Ok(e.broadcast_div(&sum)?)
}

pub fn sigmoid(xs: &Tensor) -> Result<Tensor> {
    Ok(xs.affine(0.5, 0.0)?.tanh()?.affine(0.5, 0.5)?)
}

/// `log(1 + e^x)` in the overflow-free form `max(x, 0) + log(1 + e^-|x|)`.
pub fn softplus(xs: &Tensor) -> Result<Tensor> {
    let tail = xs.abs()?.neg()?.exp()?.affine(1.0, 1.0)?.log()?;
    Ok((xs.relu()? + tail)?)
}

/// Builds a tensor from host data in the requested dtype.
pub fn from_host(data: Vec<f64>, shape: &[usize], dtype: DType, device: &Device) -> Result<Tensor> {
    Ok(Tensor::from_vec(data, shape, device)?.to_dtype(dtype)?)
}

/// Inverted dropout driven by a seeded stream; a context without a stream
/// is evaluation mode.
pub struct Dropout<'a> {
    rate: f64,
    rng: Option<&'a mut SeededRng>,
}

impl<'a> Dropout<'a> {
    pub fn train(rate: f64, rng: &'a mut SeededRng) -> Self {
        Self { rate, rng: Some(rng) }
    }

    pub fn eval() -> Self {
        Self { rate: 0.0, rng: None }
    }

    pub fn is_training(&self) -> bool {
        self.rng.is_some()
    }

    pub fn rng(&mut self) -> Option<&mut SeededRng> {
        self.rng.as_deref_mut()
    }

    pub fn apply(&mut self, xs: &Tensor) -> Result<Tensor> {
        let Some(rng) = self.rng.as_deref_mut() else {
            return Ok(xs.clone());
        };
        if self.rate <= 0.0 {
            return Ok(xs.clone());
        }
        let keep = 1.0 - self.rate;
        let mask: Vec<f64> =
            (0..xs.elem_count()).map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect();
        let mask = from_host(mask, xs.dims(), xs.dtype(), xs.device())?;
        Ok((xs * mask)?)
    }
}

#[derive(Clone)]
pub struct Linear {
    weight: Tensor,
    bias: Option<Tensor>,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        range: f64,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let weight = store.uniform(&format!("{name}.weight"), &[input, output], range, rng)?;
        let bias = Some(store.zeros(&format!("{name}.bias"), &[output])?);
        Ok(Self { weight, bias })
    }

    pub fn no_bias(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        range: f64,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let weight = store.uniform(&format!("{name}.weight"), &[input, output], range, rng)?;
        Ok(Self { weight, bias: None })
    }

    /// Applies the layer over the last dimension of a 2-d or 3-d input.
    pub fn forward(&self, xs: &Tensor) -> Result<Tensor> {
        let out = match xs.dims() {
            [b, t, d] => xs.reshape((b * t, *d))?.matmul(&self.weight)?.reshape((*b, *t, ()))?,
            _ => xs.matmul(&self.weight)?,
        };
        Ok(match &self.bias {
            Some(b) => out.broadcast_add(b)?,
            None => out,
        })
    }
}

/// Gated recurrent unit cell (reset, update, candidate gates packed in that order).
#[derive(Clone)]
pub struct GruCell {
    input: Linear,
    recurrent: Linear,
    hidden: usize,
}

impl GruCell {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        range: f64,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        Ok(Self {
            input: Linear::new(store, &format!("{name}.ih"), input, 3 * hidden, range, rng)?,
            recurrent: Linear::new(store, &format!("{name}.hh"), hidden, 3 * hidden, range, rng)?,
            hidden,
        })
    }

    /// Input projection, computable ahead of time for a whole sequence.
    pub fn project_input(&self, xs: &Tensor) -> Result<Tensor> {
        self.input.forward(xs)
    }

    /// One step from a precomputed input projection `gx` of shape (B, 3H).
    pub fn step(&self, gx: &Tensor, h: &Tensor) -> Result<Tensor> {
        let hs = self.hidden;
        let gh = self.recurrent.forward(h)?;
        let r = sigmoid(&(gx.narrow(1, 0, hs)? + gh.narrow(1, 0, hs)?)?)?;
        let u = sigmoid(&(gx.narrow(1, hs, hs)? + gh.narrow(1, hs, hs)?)?)?;
        let n = (gx.narrow(1, 2 * hs, hs)? + (r * gh.narrow(1, 2 * hs, hs)?)?)?.tanh()?;
        Ok((&n + (u * (h - &n)?)?)?)
    }

    /// Step that leaves rows with mask 0 untouched. `mask` is (B, 1).
    pub fn masked_step(&self, gx: &Tensor, h: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let next = self.step(gx, h)?;
        Ok((h + (next - h)?.broadcast_mul(mask)?)?)
    }

    /// Runs over a (B, T, in) sequence, optionally right-to-left. Returns
    /// per-step outputs (B, T, H) and the final state.
    pub fn run(&self, xs: &Tensor, mask: &Tensor, reverse: bool) -> Result<(Tensor, Tensor)> {
        let (b, t, _) = xs.dims3()?;
        let gx = self.project_input(xs)?;
        let mut h = Tensor::zeros((b, self.hidden), xs.dtype(), xs.device())?;
        let mut outputs = vec![None; t];
        let steps: Box<dyn Iterator<Item = usize>> = if reverse { Box::new((0..t).rev()) } else { Box::new(0..t) };
        for i in steps {
            let m = mask.narrow(1, i, 1)?;
            h = self.masked_step(&gx.narrow(1, i, 1)?.squeeze(1)?, &h, &m)?;
            outputs[i] = Some(h.clone());
        }
        let outputs: Vec<Tensor> = outputs.into_iter().map(|o| o.expect("every step visited")).collect();
        Ok((Tensor::stack(&outputs, 1)?, h))
    }
}

/// Stacked unidirectional GRU.
#[derive(Clone)]
pub struct Gru {
    layers: Vec<GruCell>,
}

impl Gru {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        layers: usize,
        range: f64,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let layers = (0..layers)
            .map(|l| {
                GruCell::new(store, &format!("{name}.{l}"), if l == 0 { input } else { hidden }, hidden, range, rng)
            })
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[GruCell] {
        &self.layers
    }

    /// Top-layer outputs (B, T, H) and final state of the top layer.
    pub fn run(&self, xs: &Tensor, mask: &Tensor, dropout: &mut Dropout) -> Result<(Tensor, Tensor)> {
        let mut input = xs.clone();
        let mut last = None;
        for (l, cell) in self.layers.iter().enumerate() {
            if l > 0 {
                input = dropout.apply(&input)?;
            }
            let (out, h) = cell.run(&input, mask, false)?;
            input = out;
            last = Some(h);
        }
        Ok((input, last.expect("at least one layer")))
    }
}

/// Stacked bidirectional GRU; each layer's input is the concatenation of
/// both directions of the layer below.
#[derive(Clone)]
pub struct BiGru {
    forward: Vec<GruCell>,
    backward: Vec<GruCell>,
}

impl BiGru {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        layers: usize,
        range: f64,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let mut forward = Vec::with_capacity(layers);
        let mut backward = Vec::with_capacity(layers);
        for l in 0..layers {
            let inp = if l == 0 { input } else { 2 * hidden };
            forward.push(GruCell::new(store, &format!("{name}.fwd.{l}"), inp, hidden, range, rng)?);
            backward.push(GruCell::new(store, &format!("{name}.bwd.{l}"), inp, hidden, range, rng)?);
        }
        Ok(Self { forward, backward })
    }

    /// Sentence vectors (B, 2H): final forward state next to final backward state.
    pub fn encode(&self, xs: &Tensor, mask: &Tensor, dropout: &mut Dropout) -> Result<Tensor> {
        let mut input = xs.clone();
        let mut finals = None;
        for (l, (f, b)) in self.forward.iter().zip(&self.backward).enumerate() {
            if l > 0 {
                input = dropout.apply(&input)?;
            }
            let (fo, fh) = f.run(&input, mask, false)?;
            let (bo, bh) = b.run(&input, mask, true)?;
            input = Tensor::cat(&[fo, bo], D::Minus1)?;
            finals = Some(Tensor::cat(&[fh, bh], 1)?);
        }
        Ok(finals.expect("at least one layer"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn softplus_matches_naive_form_and_stays_finite() {
        let x = Tensor::new(&[-30.0f64, -1.0, 0.0, 2.0, 800.0], &Device::Cpu).unwrap();
        let y: Vec<f64> = softplus(&x).unwrap().to_vec1().unwrap();
        for (xi, yi) in [-30.0f64, -1.0, 0.0, 2.0].iter().zip(&y) {
            assert!((yi - (1.0 + xi.exp()).ln()).abs() < 1e-12);
        }
        assert_eq!(y[4], 800.0);
    }

    #[test]
    fn masked_rows_keep_state() {
        let mut store = ParamStore::new(DType::F64, Device::Cpu);
        let mut rng = seeded(1);
        let cell = GruCell::new(&mut store, "g", 3, 4, 0.5, &mut rng).unwrap();
        let x = Tensor::ones((2, 3), DType::F64, &Device::Cpu).unwrap();
        let h = Tensor::full(0.3f64, (2, 4), &Device::Cpu).unwrap();
        let mask = Tensor::new(&[[1.0f64], [0.0]], &Device::Cpu).unwrap();
        let out = cell.masked_step(&cell.project_input(&x).unwrap(), &h, &mask).unwrap();
        let rows: Vec<Vec<f64>> = out.to_vec2().unwrap();
        assert!(rows[0].iter().any(|v| (v - 0.3).abs() > 1e-6));
        assert!(rows[1].iter().all(|v| (v - 0.3).abs() < 1e-15));
    }

    #[test]
    fn dropout_is_identity_in_eval() {
        let x = Tensor::ones((3, 3), DType::F32, &Device::Cpu).unwrap();
        let y = Dropout::eval().apply(&x).unwrap();
        assert_eq!(y.to_vec2::<f32>().unwrap(), x.to_vec2::<f32>().unwrap());
        let mut rng = seeded(0);
        let z = Dropout::train(0.5, &mut rng).apply(&x).unwrap();
        assert!(z.flatten_all().unwrap().to_vec1::<f32>().unwrap().iter().all(|v| *v == 0.0 || *v == 2.0));
    }
}
