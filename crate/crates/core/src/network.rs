//! Scalar-in, scalar-out tanh multilayer perceptron.
//!
//! Besides the value, the network propagates the input tangent `d/dx` through
//! every layer, and [`loss_gradient`] runs the adjoint of both passes so that
//! losses containing `d/dx` terms get exact parameter gradients.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};

/// Default architecture: four hidden layers of twenty neurons.
pub const DEFAULT_LAYERS: [usize; 6] = [1, 20, 20, 20, 20, 1];

const CHUNK: usize = 256;

/// Layer sizes plus every weight and bias packed in one parameter vector.
///
/// Layer `l` contributes its row-major `N_l x N_{l-1}` weight matrix followed
/// by its `N_l` biases. Inputs pass through the fixed affine map
/// `x -> (x - shift) * scale` before the first layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    theta: Vec<f64>,
    input_shift: f64,
    input_scale: f64,
}

pub fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

fn check_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 3 {
        return Err(invalid("layer_sizes", "need input, output and at least one hidden layer"));
    }
    if sizes[0] != 1 || sizes[sizes.len() - 1] != 1 {
        return Err(invalid("layer_sizes", "input and output dimension must be 1"));
    }
    if sizes.contains(&0) {
        return Err(invalid("layer_sizes", "layers must be non-empty"));
    }
    Ok(())
}

impl Mlp {
    pub fn new(sizes: Vec<usize>, theta: Vec<f64>) -> Result<Self> {
        check_sizes(&sizes)?;
        let expected = param_count(&sizes);
        if theta.len() != expected {
            return Err(invalid(
                "theta",
                format!("expected {expected} parameters, got {}", theta.len()),
            ));
        }
        Ok(Self {
            sizes,
            theta,
            input_shift: 0.0,
            input_scale: 1.0,
        })
    }

    pub fn zeros(sizes: Vec<usize>) -> Result<Self> {
        let n = param_count(&sizes);
        Self::new(sizes, vec![0.0; n])
    }

    /// Glorot-uniform weights, zero biases, reproducible from `seed`.
    pub fn init(sizes: Vec<usize>, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in 1..net.sizes.len() {
            let (nin, nout) = (net.sizes[l - 1], net.sizes[l]);
            let g = (6.0 / (nin + nout) as f64).sqrt();
            let off = net.weight_offset(l);
            for w in &mut net.theta[off..off + nin * nout] {
                *w = rng.random_range(-g..g);
            }
        }
        Ok(net)
    }

    /// Maps `[lo, hi]` onto `[-1, 1]` ahead of the first layer.
    pub fn with_input_range(mut self, lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(invalid("input_range", format!("need lo < hi, got [{lo}, {hi}]")));
        }
        self.input_shift = 0.5 * (lo + hi);
        self.input_scale = 2.0 / (hi - lo);
        Ok(self)
    }

    /// `(shift, scale)` of the fixed input map.
    pub fn input_map(&self) -> (f64, f64) {
        (self.input_shift, self.input_scale)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn params(&self) -> &[f64] {
        &self.theta
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn into_params(self) -> Vec<f64> {
        self.theta
    }

    pub fn with_params(&self, theta: Vec<f64>) -> Result<Self> {
        let mut net = Self::new(self.sizes.clone(), theta)?;
        net.input_shift = self.input_shift;
        net.input_scale = self.input_scale;
        Ok(net)
    }

    fn map_input(&self, x: f64) -> f64 {
        (x - self.input_shift) * self.input_scale
    }

    fn weight_offset(&self, layer: usize) -> usize {
        param_count(&self.sizes[..layer])
    }

    /// Weights of layer `layer` (1-based), row-major.
    pub fn weights(&self, layer: usize) -> &[f64] {
        let off = self.weight_offset(layer);
        &self.theta[off..off + self.sizes[layer] * self.sizes[layer - 1]]
    }

    pub fn biases(&self, layer: usize) -> &[f64] {
        let off = self.weight_offset(layer) + self.sizes[layer] * self.sizes[layer - 1];
        &self.theta[off..off + self.sizes[layer]]
    }

    pub fn forward(&self, x: f64) -> f64 {
        let mut act = vec![self.map_input(x)];
        let depth = self.sizes.len() - 1;
        for l in 1..=depth {
            let (w, b) = (self.weights(l), self.biases(l));
            let nin = self.sizes[l - 1];
            act = (0..self.sizes[l])
                .map(|i| {
                    let z = b[i] + dot(&w[i * nin..(i + 1) * nin], &act);
                    if l < depth {
                        tanh(z)
                    } else {
                        z
                    }
                })
                .collect();
        }
        act[0]
    }

    /// Value and exact derivative with respect to the input.
    pub fn forward_with_input_derivative(&self, x: f64) -> (f64, f64) {
        let mut act = vec![self.map_input(x)];
        let mut tan = vec![self.input_scale];
        let depth = self.sizes.len() - 1;
        for l in 1..=depth {
            let (w, b) = (self.weights(l), self.biases(l));
            let nin = self.sizes[l - 1];
            let mut next = Vec::with_capacity(self.sizes[l]);
            let mut next_tan = Vec::with_capacity(self.sizes[l]);
            for i in 0..self.sizes[l] {
                let row = &w[i * nin..(i + 1) * nin];
                let z = b[i] + dot(row, &act);
                let zt = dot(row, &tan);
                if l < depth {
                    let h = tanh(z);
                    next.push(h);
                    next_tan.push((1.0 - h * h) * zt);
                } else {
                    next.push(z);
                    next_tan.push(zt);
                }
            }
            act = next;
            tan = next_tan;
        }
        (act[0], tan[0])
    }

    /// `layer_sizes` and `input_map` header lines followed by one parameter
    /// per line.
    pub fn to_text(&self) -> String {
        let sizes: Vec<String> = self.sizes.iter().map(|s| s.to_string()).collect();
        let mut out = format!("layer_sizes {}\n", sizes.join(","));
        writeln!(out, "input_map {:?} {:?}", self.input_shift, self.input_scale).unwrap();
        for v in &self.theta {
            writeln!(out, "{v:?}").unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        let sizes = header
            .strip_prefix("layer_sizes ")
            .ok_or_else(|| Error::Parse(format!("bad parameter header `{header}`")))?
            .split(',')
            .map(|s| s.trim().parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse(format!("layer sizes: {e}")))?;
        let mut lines = lines.peekable();
        let mut map = (0.0, 1.0);
        if let Some(rest) = lines.peek().and_then(|l| l.strip_prefix("input_map ")) {
            let v: Vec<f64> = rest
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse(format!("input map: {e}")))?;
            if v.len() != 2 || !(v[1].is_finite() && v[1] != 0.0 && v[0].is_finite()) {
                return Err(Error::Parse(format!("bad input map `{rest}`")));
            }
            map = (v[0], v[1]);
            lines.next();
        }
        let theta = lines
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| {
                l.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("parameter line {}: {e}", i + 2)))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut net = Self::new(sizes, theta)?;
        (net.input_shift, net.input_scale) = map;
        Ok(net)
    }
}

/// Branch-free `tanh`, absolute error below 4e-16, vectorisable inside loops.
#[inline(always)]
pub fn tanh(x: f64) -> f64 {
    const SHIFTER: f64 = 6755399441055744.0;
    const LN2_HI: f64 = 6.931_471_803_691_238e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    const TAYLOR: [f64; 14] = [
        1.0 / 6_227_020_800.0,
        1.0 / 479_001_600.0,
        1.0 / 39_916_800.0,
        1.0 / 3_628_800.0,
        1.0 / 362_880.0,
        1.0 / 40_320.0,
        1.0 / 5_040.0,
        1.0 / 720.0,
        1.0 / 120.0,
        1.0 / 24.0,
        1.0 / 6.0,
        0.5,
        1.0,
        1.0,
    ];
    // e = exp(-2|x|) = 2^k exp(r), |r| <= ln2 / 2
    let t = -2.0 * x.abs().min(20.0);
    let shifted = t * std::f64::consts::LOG2_E + SHIFTER;
    let k = shifted - SHIFTER;
    let r = (t - k * LN2_HI) - k * LN2_LO;
    let mut p = TAYLOR[0];
    for c in &TAYLOR[1..] {
        p = p * r + c;
    }
    let pow2 = f64::from_bits(shifted.to_bits().wrapping_sub(SHIFTER.to_bits()).wrapping_add(1023) << 52);
    let e = p * pow2;
    let y = ((1.0 - e) / (1.0 + e)).copysign(x);
    if x.is_nan() {
        x
    } else {
        y
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for j in 0..8 {
            acc[j] += x[j] * y[j];
        }
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    let lo = (acc[0] + acc[4]) + (acc[1] + acc[5]);
    let hi = (acc[2] + acc[6]) + (acc[3] + acc[7]);
    lo + hi + tail
}

#[inline]
fn sum(a: &[f64]) -> f64 {
    let mut acc = [0.0; 8];
    let mut chunks = a.chunks_exact(8);
    for x in &mut chunks {
        for j in 0..8 {
            acc[j] += x[j];
        }
    }
    let tail: f64 = chunks.remainder().iter().sum();
    let lo = (acc[0] + acc[4]) + (acc[1] + acc[5]);
    let hi = (acc[2] + acc[6]) + (acc[3] + acc[7]);
    lo + hi + tail
}

const BLOCK: usize = 8;

/// `y[j] += sum_k a(k) * x[k * p + j]` with `p = y.len()`, summed in increasing `k`.
#[inline]
fn combine(y: &mut [f64], a: impl Fn(usize) -> f64, n: usize, x: &[f64]) {
    let p = y.len();
    let mut j = 0;
    while j + BLOCK <= p {
        let mut acc = [0.0; BLOCK];
        acc.copy_from_slice(&y[j..j + BLOCK]);
        for k in 0..n {
            let c = a(k);
            let xs = &x[k * p + j..k * p + j + BLOCK];
            for t in 0..BLOCK {
                acc[t] += c * xs[t];
            }
        }
        y[j..j + BLOCK].copy_from_slice(&acc);
        j += BLOCK;
    }
    for (jj, yj) in y.iter_mut().enumerate().skip(j) {
        for k in 0..n {
            *yj += a(k) * x[k * p + jj];
        }
    }
}

/// A scalar loss built from network values at `value_points` and values plus
/// input-derivatives at `derivative_points`.
pub trait PointFunctional {
    fn value_points(&self) -> &[f64];
    fn derivative_points(&self) -> &[f64];

    /// Returns the loss and writes its partial derivatives with respect to
    /// each supplied quantity into the matching `adj_*` slice.
    #[allow(clippy::too_many_arguments)]
    fn evaluate(
        &self,
        values: &[f64],
        deriv_values: &[f64],
        derivs: &[f64],
        adj_values: &mut [f64],
        adj_deriv_values: &mut [f64],
        adj_derivs: &mut [f64],
    ) -> f64;
}

/// Stored activations of one chunk of points.
struct Pass {
    width: usize,
    /// `acts[l]`: layer `l` outputs, `N_l x width` (input layer holds `x`).
    acts: Vec<Vec<f64>>,
    /// `d/dx` of hidden pre-activations (`ż`) and of layer outputs.
    pre_tans: Vec<Vec<f64>>,
    tans: Vec<Vec<f64>>,
}

impl Pass {
    fn output(&self) -> &[f64] {
        self.acts.last().expect("non-empty")
    }

    fn output_tangent(&self) -> &[f64] {
        self.tans.last().expect("non-empty")
    }
}

fn forward_chunk(net: &Mlp, xs: &[f64], tangent: bool) -> Pass {
    let p = xs.len();
    let depth = net.sizes.len() - 1;
    let mut acts: Vec<Vec<f64>> = Vec::with_capacity(depth + 1);
    let mut tans = Vec::with_capacity(depth + 1);
    let mut pre_tans = Vec::with_capacity(depth + 1);
    acts.push(xs.iter().map(|&x| net.map_input(x)).collect());
    if tangent {
        tans.push(vec![net.input_scale; p]);
        pre_tans.push(Vec::new());
    }
    for l in 1..=depth {
        let (nin, nout) = (net.sizes[l - 1], net.sizes[l]);
        let (w, b) = (net.weights(l), net.biases(l));
        let mut z = vec![0.0; nout * p];
        for i in 0..nout {
            let row = &mut z[i * p..(i + 1) * p];
            row.fill(b[i]);
            combine(row, |k| w[i * nin + k], nin, &acts[l - 1]);
        }
        let hidden = l < depth;
        if hidden {
            for v in &mut z {
                *v = tanh(*v);
            }
        }
        if tangent {
            let mut zt = vec![0.0; nout * p];
            for i in 0..nout {
                combine(&mut zt[i * p..(i + 1) * p], |k| w[i * nin + k], nin, &tans[l - 1]);
            }
            if hidden {
                let ht: Vec<f64> = zt.iter().zip(&z).map(|(t, h)| (1.0 - h * h) * t).collect();
                tans.push(ht);
                pre_tans.push(zt);
            } else {
                tans.push(zt.clone());
                pre_tans.push(zt);
            }
        }
        acts.push(z);
    }
    Pass {
        width: p,
        acts,
        pre_tans,
        tans,
    }
}

/// Accumulates parameter gradients given adjoints of the outputs and (when the
/// pass carried tangents) of the output input-derivatives.
fn backward_chunk(net: &Mlp, pass: &Pass, adj_out: &[f64], adj_out_tan: Option<&[f64]>, grad: &mut [f64]) {
    let p = pass.width;
    let depth = net.sizes.len() - 1;
    let mut hbar = adj_out.to_vec();
    let mut htbar = adj_out_tan.map(|a| a.to_vec());
    for l in (1..=depth).rev() {
        let (nin, nout) = (net.sizes[l - 1], net.sizes[l]);
        let (zbar, ztbar) = if l < depth {
            let h = &pass.acts[l];
            match htbar.take() {
                Some(htb) => {
                    let zt = &pass.pre_tans[l];
                    let mut zbar = vec![0.0; nout * p];
                    let mut ztbar = vec![0.0; nout * p];
                    for q in 0..nout * p {
                        let s = 1.0 - h[q] * h[q];
                        ztbar[q] = s * htb[q];
                        let total = hbar[q] - 2.0 * h[q] * htb[q] * zt[q];
                        zbar[q] = s * total;
                    }
                    (zbar, Some(ztbar))
                }
                None => {
                    let zbar = hbar.iter().zip(h).map(|(hb, h)| (1.0 - h * h) * hb).collect();
                    (zbar, None)
                }
            }
        } else {
            (std::mem::take(&mut hbar), htbar.take())
        };

        let off = net.weight_offset(l);
        let w = net.weights(l);
        let input = &pass.acts[l - 1];
        let input_tan = ztbar.as_ref().map(|_| &pass.tans[l - 1]);
        for i in 0..nout {
            let zb = &zbar[i * p..(i + 1) * p];
            for k in 0..nin {
                let mut g = dot(zb, &input[k * p..(k + 1) * p]);
                if let (Some(ztb), Some(it)) = (&ztbar, input_tan) {
                    g += dot(&ztb[i * p..(i + 1) * p], &it[k * p..(k + 1) * p]);
                }
                grad[off + i * nin + k] += g;
            }
            grad[off + nout * nin + i] += sum(zb);
        }
        if l > 1 {
            let mut prev = vec![0.0; nin * p];
            for (k, row) in prev.chunks_exact_mut(p).enumerate() {
                combine(row, |i| w[i * nin + k], nout, &zbar);
            }
            hbar = prev;
            htbar = ztbar.map(|ztb| {
                let mut prev_t = vec![0.0; nin * p];
                for (k, row) in prev_t.chunks_exact_mut(p).enumerate() {
                    combine(row, |i| w[i * nin + k], nout, &ztb);
                }
                prev_t
            });
        }
    }
}

fn forward_all(net: &Mlp, xs: &[f64], tangent: bool) -> Vec<Pass> {
    xs.chunks(CHUNK).map(|c| forward_chunk(net, c, tangent)).collect()
}

fn gather(passes: &[Pass], f: impl Fn(&Pass) -> &[f64]) -> Vec<f64> {
    passes.iter().flat_map(|p| f(p).iter().copied()).collect()
}

fn check_finite(values: &[f64], points: &[f64], what: &str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFinite {
            location: format!("network {what} at x = {}", points[i]),
        }),
        None => Ok(()),
    }
}

/// Loss value only.
pub fn loss_value<L: PointFunctional + ?Sized>(net: &Mlp, loss: &L) -> Result<f64> {
    Ok(loss_and_gradient_impl(net, loss, false)?.0)
}

/// Loss value and its exact gradient over the packed parameter vector.
pub fn loss_gradient<L: PointFunctional + ?Sized>(net: &Mlp, loss: &L) -> Result<(f64, Vec<f64>)> {
    loss_and_gradient_impl(net, loss, true)
}

fn loss_and_gradient_impl<L: PointFunctional + ?Sized>(
    net: &Mlp,
    loss: &L,
    with_grad: bool,
) -> Result<(f64, Vec<f64>)> {
    let vp = loss.value_points();
    let dp = loss.derivative_points();
    let v_pass = forward_all(net, vp, false);
    let d_pass = forward_all(net, dp, true);
    let values = gather(&v_pass, Pass::output);
    let dvalues = gather(&d_pass, Pass::output);
    let derivs = gather(&d_pass, Pass::output_tangent);
    check_finite(&values, vp, "value")?;
    check_finite(&dvalues, dp, "value")?;
    check_finite(&derivs, dp, "derivative")?;

    let mut adj_v = vec![0.0; vp.len()];
    let mut adj_dv = vec![0.0; dp.len()];
    let mut adj_d = vec![0.0; dp.len()];
    let value = loss.evaluate(&values, &dvalues, &derivs, &mut adj_v, &mut adj_dv, &mut adj_d);
    if !value.is_finite() {
        return Err(Error::NonFinite {
            location: "loss value".into(),
        });
    }
    let mut grad = vec![0.0; net.theta.len()];
    if with_grad {
        for (c, pass) in v_pass.iter().enumerate() {
            let r = c * CHUNK..c * CHUNK + pass.width;
            backward_chunk(net, pass, &adj_v[r], None, &mut grad);
        }
        for (c, pass) in d_pass.iter().enumerate() {
            let r = c * CHUNK..c * CHUNK + pass.width;
            backward_chunk(net, pass, &adj_dv[r.clone()], Some(&adj_d[r]), &mut grad);
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                location: format!("gradient component {i}"),
            });
        }
    }
    Ok((value, grad))
}

/// Batched values at many points.
pub fn forward_batch(net: &Mlp, xs: &[f64]) -> Vec<f64> {
    gather(&forward_all(net, xs, false), Pass::output)
}

/// Batched values and input-derivatives at many points.
pub fn forward_batch_with_derivative(net: &Mlp, xs: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let passes = forward_all(net, xs, true);
    (gather(&passes, Pass::output), gather(&passes, Pass::output_tangent))
}
