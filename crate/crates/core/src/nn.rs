//! Fully connected networks with ReLU hidden layers, exact reverse-mode
//! gradients and Adam.
//!
//! Parameters live in one flat vector laid out layer by layer as
//! `[W (out x in, row-major), b (out)]`. Batched passes go through `dgemm`.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputHead {
    /// Plain affine output.
    Linear,
    /// Output split in halves `(mean, log_std)`; the second half is clamped
    /// to `[LOG_STD_MIN, LOG_STD_MAX]`.
    GaussianPair,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    /// `[input, hidden..., output]`.
    pub widths: Vec<usize>,
    pub head: OutputHead,
}

impl MlpSpec {
    pub fn new(input: usize, hidden: &[usize], output: usize, head: OutputHead) -> Result<Self> {
        let mut widths = vec![input];
        widths.extend_from_slice(hidden);
        widths.push(output);
        let s = Self { widths, head };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 3 {
            return Err(Error::Config("network needs at least one hidden layer".into()));
        }
        if self.widths.iter().any(|&w| w == 0) {
            return Err(Error::Config("layer widths must be > 0".into()));
        }
        if self.head == OutputHead::GaussianPair && self.output() % 2 != 0 {
            return Err(Error::Config("Gaussian head needs an even output width".into()));
        }
        Ok(())
    }

    pub fn input(&self) -> usize {
        self.widths[0]
    }

    pub fn output(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn n_params(&self) -> usize {
        self.widths.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
    }

    /// Offset of each layer's weight block in the flat vector.
    fn offsets(&self) -> Vec<usize> {
        let mut off = Vec::with_capacity(self.n_layers());
        let mut acc = 0;
        for w in self.widths.windows(2) {
            off.push(acc);
            acc += w[1] * w[0] + w[1];
        }
        off
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub params: Vec<f64>,
}

/// Intermediate values of a batched forward pass, reused across calls.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    batch: usize,
    /// `acts[0]` is the input; `acts[l + 1]` the post-activation output of layer `l`.
    acts: Vec<Vec<f64>>,
    /// Raw (pre-clamp) network output.
    raw_out: Vec<f64>,
    scratch: Vec<f64>,
    scratch2: Vec<f64>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

/// `C (m x n) = alpha * A (m x k) B (k x n) + beta * C` over strided slices.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    rsc: usize,
) {
    debug_assert!(m == 0 || k == 0 || a.len() >= (m - 1) * rsa + (k - 1) * csa + 1);
    debug_assert!(k == 0 || n == 0 || b.len() >= (k - 1) * rsb + (n - 1) * csb + 1);
    debug_assert!(m == 0 || n == 0 || c.len() >= (m - 1) * rsc + n);
    // SAFETY: the asserted bounds cover every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

impl Mlp {
    pub fn zeros(spec: MlpSpec) -> Self {
        let n = spec.n_params();
        Self {
            spec,
            params: vec![0.0; n],
        }
    }

    /// Uniform fan-in initialisation, `U(-1/sqrt(in), 1/sqrt(in))` for weights and biases.
    pub fn init<R: Rng + ?Sized>(spec: MlpSpec, rng: &mut R) -> Self {
        let mut params = Vec::with_capacity(spec.n_params());
        for w in spec.widths.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            for _ in 0..(w[1] * w[0] + w[1]) {
                params.push(rng.random_range(-bound..bound));
            }
        }
        Self { spec, params }
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    /// Single-sample forward pass.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let mut cache = ForwardCache::default();
        self.forward_batch(input, 1, &mut cache)?;
        Ok(cache.output().to_vec())
    }

    /// Row-major batch of inputs (`batch x input`); outputs land in `cache.output()`.
    pub fn forward_batch(&self, inputs: &[f64], batch: usize, cache: &mut ForwardCache) -> Result<()> {
        let spec = &self.spec;
        if inputs.len() != batch * spec.input() {
            return Err(Error::Shape {
                expected: batch * spec.input(),
                got: inputs.len(),
            });
        }
        let nl = spec.n_layers();
        cache.batch = batch;
        cache.acts.resize_with(nl + 1, Vec::new);
        cache.acts[0].clear();
        cache.acts[0].extend_from_slice(inputs);

        let offsets = spec.offsets();
        for l in 0..nl {
            let (nin, nout) = (spec.widths[l], spec.widths[l + 1]);
            let w = &self.params[offsets[l]..offsets[l] + nout * nin];
            let b = &self.params[offsets[l] + nout * nin..offsets[l] + nout * nin + nout];
            let (before, after) = cache.acts.split_at_mut(l + 1);
            let x = &before[l];
            let z = &mut after[0];
            z.clear();
            z.reserve(batch * nout);
            for _ in 0..batch {
                z.extend_from_slice(b);
            }
            gemm(batch, nin, nout, 1.0, x, (nin, 1), w, (1, nin), 1.0, z, nout);
            if l + 1 < nl {
                for v in z.iter_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
        }

        let out_w = spec.output();
        let last = cache.acts.last_mut().unwrap();
        cache.raw_out.clear();
        cache.raw_out.extend_from_slice(last);
        if spec.head == OutputHead::GaussianPair {
            let half = out_w / 2;
            for row in last.chunks_mut(out_w) {
                for v in &mut row[half..] {
                    *v = v.clamp(LOG_STD_MIN, LOG_STD_MAX);
                }
            }
        }
        Ok(())
    }

    /// Reverse pass for the batch held in `cache`.
    ///
    /// `d_out` is the cotangent of the (clamped) output. Parameter gradients
    /// are accumulated into `grads` (summed over the batch); the input
    /// cotangent is written to `d_input` when given.
    pub fn backward(
        &self,
        cache: &mut ForwardCache,
        d_out: &[f64],
        grads: Option<&mut [f64]>,
        d_input: Option<&mut [f64]>,
    ) -> Result<()> {
        let spec = &self.spec;
        let batch = cache.batch;
        let out_w = spec.output();
        if d_out.len() != batch * out_w {
            return Err(Error::Shape {
                expected: batch * out_w,
                got: d_out.len(),
            });
        }
        if let Some(g) = grads.as_ref() {
            if g.len() != self.params.len() {
                return Err(Error::Shape {
                    expected: self.params.len(),
                    got: g.len(),
                });
            }
        }
        if let Some(d) = d_input.as_ref() {
            if d.len() != batch * spec.input() {
                return Err(Error::Shape {
                    expected: batch * spec.input(),
                    got: d.len(),
                });
            }
        }
        let mut grads = grads;

        let mut delta = std::mem::take(&mut cache.scratch);
        delta.clear();
        delta.extend_from_slice(d_out);
        if spec.head == OutputHead::GaussianPair {
            let half = out_w / 2;
            for (drow, raw) in delta.chunks_mut(out_w).zip(cache.raw_out.chunks(out_w)) {
                for j in half..out_w {
                    if raw[j] < LOG_STD_MIN || raw[j] > LOG_STD_MAX {
                        drow[j] = 0.0;
                    }
                }
            }
        }

        let offsets = spec.offsets();
        let mut next = std::mem::take(&mut cache.scratch2);
        for l in (0..spec.n_layers()).rev() {
            let (nin, nout) = (spec.widths[l], spec.widths[l + 1]);
            let x = &cache.acts[l];
            let w_off = offsets[l];
            if let Some(g) = grads.as_deref_mut() {
                let (gw, gb) = g[w_off..w_off + nout * nin + nout].split_at_mut(nout * nin);
                gemm(nout, batch, nin, 1.0, &delta, (1, nout), x, (nin, 1), 1.0, gw, nin);
                for row in delta.chunks(nout) {
                    for (b, d) in gb.iter_mut().zip(row) {
                        *b += d;
                    }
                }
            }
            if l == 0 && d_input.is_none() {
                break;
            }
            let w = &self.params[w_off..w_off + nout * nin];
            next.clear();
            next.resize(batch * nin, 0.0);
            gemm(batch, nout, nin, 1.0, &delta, (nout, 1), w, (nin, 1), 0.0, &mut next, nin);
            if l > 0 {
                // ReLU mask from the stored post-activation
                for (d, a) in next.iter_mut().zip(x) {
                    if *a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            std::mem::swap(&mut delta, &mut next);
        }
        if let Some(d) = d_input {
            d.copy_from_slice(&delta);
        }
        cache.scratch = delta;
        cache.scratch2 = next;
        Ok(())
    }

    /// Polyak averaging: `self <- (1 - tau) self + tau online`.
    pub fn soft_update_from(&mut self, online: &Mlp, tau: f64) -> Result<()> {
        if online.params.len() != self.params.len() {
            return Err(Error::Shape {
                expected: self.params.len(),
                got: online.params.len(),
            });
        }
        if tau == 1.0 {
            self.params.copy_from_slice(&online.params);
            return Ok(());
        }
        for (t, o) in self.params.iter_mut().zip(&online.params) {
            *t = (1.0 - tau) * *t + tau * o;
        }
        Ok(())
    }

    /// Text checkpoint; parameters are written as IEEE-754 bit patterns so
    /// loading reproduces them exactly.
    pub fn to_checkpoint(&self) -> String {
        let mut s = String::new();
        let widths: Vec<String> = self.spec.widths.iter().map(|w| w.to_string()).collect();
        let head = match self.spec.head {
            OutputHead::Linear => "linear",
            OutputHead::GaussianPair => "gaussian",
        };
        let _ = writeln!(s, "mlp v1");
        let _ = writeln!(s, "widths {}", widths.join(" "));
        let _ = writeln!(s, "head {head}");
        let _ = writeln!(s, "params {}", self.params.len());
        for p in &self.params {
            let _ = writeln!(s, "{:016x}", p.to_bits());
        }
        s
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if lines.next() != Some("mlp v1") {
            return Err(bad("missing `mlp v1` header"));
        }
        let widths: Vec<usize> = lines
            .next()
            .and_then(|l| l.strip_prefix("widths "))
            .ok_or_else(|| bad("missing widths"))?
            .split_whitespace()
            .map(|w| w.parse().map_err(|_| bad("bad width")))
            .collect::<Result<_>>()?;
        let head = match lines.next().and_then(|l| l.strip_prefix("head ")) {
            Some("linear") => OutputHead::Linear,
            Some("gaussian") => OutputHead::GaussianPair,
            _ => return Err(bad("bad head")),
        };
        let n: usize = lines
            .next()
            .and_then(|l| l.strip_prefix("params "))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad("missing params count"))?;
        let spec = MlpSpec { widths, head };
        spec.validate()?;
        if n != spec.n_params() {
            return Err(bad("parameter count does not match widths"));
        }
        let params = lines
            .by_ref()
            .take(n)
            .map(|l| {
                u64::from_str_radix(l.trim(), 16)
                    .map(f64::from_bits)
                    .map_err(|_| bad("bad parameter"))
            })
            .collect::<Result<Vec<_>>>()?;
        if params.len() != n {
            return Err(bad("truncated parameters"));
        }
        Ok(Self { spec, params })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Bias-corrected Adam update in place. Non-finite gradients are rejected
    /// before anything is modified.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape {
                expected: self.m.len(),
                got: grads.len().min(params.len()),
            });
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient"));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("parameters after Adam step"));
        }
        Ok(())
    }
}
