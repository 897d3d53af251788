use crate::error::{shape_err, Result, SalError};
use crate::grid::{Grid, GridKind, GridStack};
use crate::rng::SeededRng;
use serde::{Deserialize, Serialize};

/// Output channels of the five readout layers.
pub const READOUT_WIDTHS: [usize; 5] = [8, 16, 1, 128, 1];
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// One `layer norm -> 1x1 conv -> softplus` block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadoutLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    pub ln_scale: Vec<f64>,
    pub ln_shift: Vec<f64>,
    /// `[out][in]`
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ReadoutLayer {
    fn param_count(&self) -> usize {
        2 * self.in_channels + self.out_channels * (self.in_channels + 1)
    }
}

/// Shared readout network mapping averaged features to a priority map.
///
/// Layer norm statistics are taken over all channels and pixels of the
/// image; scale and shift are per channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadoutParams {
    pub layers: Vec<ReadoutLayer>,
}

#[inline]
pub(crate) fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

#[inline]
pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ReadoutTrace {
    height: usize,
    width: usize,
    layers: Vec<LayerTrace>,
}

#[derive(Debug, Clone)]
struct LayerTrace {
    xhat: Vec<f64>,
    inv_std: f64,
    y: Vec<f64>,
    z: Vec<f64>,
}

impl ReadoutParams {
    /// Xavier-uniform weights, zero biases, unit layer-norm scale, zero shift.
    pub fn init(in_channels: usize, seed: u64) -> Self {
        let mut rng = SeededRng::new(seed);
        let mut layers = Vec::with_capacity(READOUT_WIDTHS.len());
        let mut cin = in_channels;
        for &cout in &READOUT_WIDTHS {
            let bound = (6.0 / (cin + cout) as f64).sqrt();
            layers.push(ReadoutLayer {
                in_channels: cin,
                out_channels: cout,
                ln_scale: vec![1.0; cin],
                ln_shift: vec![0.0; cin],
                weight: (0..cin * cout).map(|_| rng.uniform_range(-bound, bound)).collect(),
                bias: vec![0.0; cout],
            });
            cin = cout;
        }
        ReadoutParams { layers }
    }

    pub fn in_channels(&self) -> usize {
        self.layers[0].in_channels
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(ReadoutLayer::param_count).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let widths: Vec<usize> = self.layers.iter().map(|l| l.out_channels).collect();
        if widths != READOUT_WIDTHS {
            return Err(shape_err!("readout widths {widths:?} differ from {READOUT_WIDTHS:?}"));
        }
        let mut cin = self.layers[0].in_channels;
        for l in &self.layers {
            if l.in_channels != cin
                || l.ln_scale.len() != cin
                || l.ln_shift.len() != cin
                || l.weight.len() != cin * l.out_channels
                || l.bias.len() != l.out_channels
            {
                return Err(shape_err!("inconsistent readout layer shapes"));
            }
            cin = l.out_channels;
        }
        if self.to_flat().iter().any(|v| !v.is_finite()) {
            return Err(SalError::Numerical("non-finite readout parameter".into()));
        }
        Ok(())
    }

    /// Parameters as one vector: per layer `ln_scale, ln_shift, weight, bias`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.ln_scale);
            out.extend_from_slice(&l.ln_shift);
            out.extend_from_slice(&l.weight);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count());
        let mut k = 0;
        let mut take = |dst: &mut Vec<f64>| {
            let n = dst.len();
            dst.copy_from_slice(&flat[k..k + n]);
            k += n;
        };
        for l in &mut self.layers {
            take(&mut l.ln_scale);
            take(&mut l.ln_shift);
            take(&mut l.weight);
            take(&mut l.bias);
        }
    }

    /// SHA-256 of the little-endian parameter bytes.
    pub fn checksum(&self) -> String {
        let bytes: Vec<u8> = self.to_flat().iter().flat_map(|v| v.to_le_bytes()).collect();
        crate::io::sha256_hex(&bytes)
    }

    pub fn forward(&self, features: &GridStack) -> Result<Grid> {
        Ok(self.forward_traced(features)?.0)
    }

    pub fn forward_traced(&self, features: &GridStack) -> Result<(Grid, ReadoutTrace)> {
        if features.channels() != self.in_channels() {
            return Err(shape_err!(
                "features have {} channels, readout expects {}",
                features.channels(),
                self.in_channels()
            ));
        }
        let (h, w) = (features.height(), features.width());
        let p = h * w;
        let mut x = features.values().to_vec();
        let mut traces = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let n = x.len() as f64;
            let mean = x.iter().sum::<f64>() / n;
            let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let inv_std = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            let xhat: Vec<f64> = x.iter().map(|v| (v - mean) * inv_std).collect();
            let mut y = vec![0.0; x.len()];
            for c in 0..l.in_channels {
                for i in 0..p {
                    y[c * p + i] = l.ln_scale[c] * xhat[c * p + i] + l.ln_shift[c];
                }
            }
            let mut z = vec![0.0; l.out_channels * p];
            for o in 0..l.out_channels {
                let dst = &mut z[o * p..(o + 1) * p];
                dst.iter_mut().for_each(|v| *v = l.bias[o]);
                for c in 0..l.in_channels {
                    let wt = l.weight[o * l.in_channels + c];
                    for (d, s) in dst.iter_mut().zip(&y[c * p..(c + 1) * p]) {
                        *d += wt * s;
                    }
                }
            }
            x = z.iter().map(|&v| softplus(v)).collect();
            if x.iter().any(|v| !v.is_finite()) {
                return Err(SalError::Numerical("non-finite readout activation".into()));
            }
            traces.push(LayerTrace { xhat, inv_std, y, z });
        }
        let out = Grid::new(h, w, GridKind::Priority, x)?;
        Ok((
            out,
            ReadoutTrace {
                height: h,
                width: w,
                layers: traces,
            },
        ))
    }

    /// Gradients of `sum(upstream * S)` with respect to the flat parameters
    /// and to the input features.
    pub fn backward(&self, trace: &ReadoutTrace, upstream: &Grid) -> (Vec<f64>, GridStack) {
        let p = trace.height * trace.width;
        let mut grads: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        let mut da = upstream.values().to_vec();
        for (l, t) in self.layers.iter().zip(&trace.layers).rev() {
            let dz: Vec<f64> = da.iter().zip(&t.z).map(|(d, &z)| d * sigmoid(z)).collect();
            let cin = l.in_channels;
            let mut dw = vec![0.0; l.out_channels * cin];
            let mut db = vec![0.0; l.out_channels];
            let mut dy = vec![0.0; cin * p];
            for o in 0..l.out_channels {
                let g = &dz[o * p..(o + 1) * p];
                db[o] = g.iter().sum();
                for c in 0..cin {
                    let yc = &t.y[c * p..(c + 1) * p];
                    dw[o * cin + c] = g.iter().zip(yc).map(|(a, b)| a * b).sum();
                    let wt = l.weight[o * cin + c];
                    for (d, gv) in dy[c * p..(c + 1) * p].iter_mut().zip(g) {
                        *d += wt * gv;
                    }
                }
            }
            let mut dscale = vec![0.0; cin];
            let mut dshift = vec![0.0; cin];
            let mut dxhat = vec![0.0; cin * p];
            for c in 0..cin {
                for i in 0..p {
                    let k = c * p + i;
                    dscale[c] += dy[k] * t.xhat[k];
                    dshift[c] += dy[k];
                    dxhat[k] = dy[k] * l.ln_scale[c];
                }
            }
            let n = dxhat.len() as f64;
            let m1 = dxhat.iter().sum::<f64>() / n;
            let m2 = dxhat.iter().zip(&t.xhat).map(|(a, b)| a * b).sum::<f64>() / n;
            da = dxhat
                .iter()
                .zip(&t.xhat)
                .map(|(d, xh)| t.inv_std * (d - m1 - xh * m2))
                .collect();
            let mut g = dscale;
            g.extend(dshift);
            g.extend(dw);
            g.extend(db);
            grads.push(g);
        }
        grads.reverse();
        let flat = grads.concat();
        let dinput = GridStack::new(self.in_channels(), trace.height, trace.width, da).expect("input shape");
        (flat, dinput)
    }
}
