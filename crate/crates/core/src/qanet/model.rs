use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::QanetError;
use crate::cues::{CueMask, CueVector};

pub const FORMAT_VERSION: u32 = 1;

/// Hidden-layer widths of the three sub-networks. Input widths follow from the cue
/// mask; the head always ends in a single output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Widths {
    pub point: Vec<usize>,
    pub recon: Vec<usize>,
    pub head: Vec<usize>,
}

impl Default for Widths {
    fn default() -> Self {
        Self { point: vec![32, 64, 128], recon: vec![16, 32], head: vec![64, 32] }
    }
}

/// Full layer dimensions, input first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arch {
    pub point_dims: Vec<usize>,
    /// Empty when the reconstruction-wise branch is disabled.
    pub recon_dims: Vec<usize>,
    pub head_dims: Vec<usize>,
    pub mask: CueMask,
}

impl Arch {
    pub fn new(mask: CueMask, widths: &Widths) -> Result<Self, QanetError> {
        let pd = mask.point_dim();
        if pd == 0 || widths.point.is_empty() {
            return Err(QanetError::InvalidArch("point branch needs inputs and at least one layer".into()));
        }
        let mut point_dims = vec![pd];
        point_dims.extend(&widths.point);
        let rd = mask.recon_dim();
        let recon_dims = if rd == 0 || widths.recon.is_empty() {
            Vec::new()
        } else {
            let mut v = vec![rd];
            v.extend(&widths.recon);
            v
        };
        let head_in = point_dims.last().unwrap() + recon_dims.last().copied().unwrap_or(0);
        let mut head_dims = vec![head_in];
        head_dims.extend(&widths.head);
        head_dims.push(1);
        if point_dims.iter().chain(&recon_dims).chain(&head_dims).any(|&d| d == 0) {
            return Err(QanetError::InvalidArch("zero-width layer".into()));
        }
        Ok(Self { point_dims, recon_dims, head_dims, mask })
    }

    fn validate(&self) -> Result<(), QanetError> {
        let pooled = *self.point_dims.last().ok_or(QanetError::InvalidArch("empty point branch".into()))?;
        let recon_out = self.recon_dims.last().copied().unwrap_or(0);
        let ok = self.point_dims.len() >= 2
            && self.point_dims[0] == self.mask.point_dim()
            && (self.recon_dims.is_empty()
                || (self.recon_dims.len() >= 2 && self.recon_dims[0] == self.mask.recon_dim()))
            && self.head_dims.len() >= 2
            && self.head_dims[0] == pooled + recon_out
            && *self.head_dims.last().unwrap() == 1;
        if ok {
            Ok(())
        } else {
            Err(QanetError::InvalidArch("layer dimensions do not chain".into()))
        }
    }
}

/// Fully connected layer; `weights` is row-major `[fan_in][fan_out]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self { fan_in, fan_out, weights: vec![0.0; fan_in * fan_out], bias: vec![0.0; fan_out] }
    }

    fn glorot<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let weights = (0..fan_in * fan_out).map(|_| rng.gen_range(-a..a)).collect();
        Self { fan_in, fan_out, weights, bias: vec![0.0; fan_out] }
    }

    #[inline]
    fn forward(&self, input: &[f64], out: &mut [f64], relu: bool) {
        out.copy_from_slice(&self.bias);
        for (i, &x) in input.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let row = &self.weights[i * self.fan_out..(i + 1) * self.fan_out];
            for (o, &w) in out.iter_mut().zip(row) {
                *o += x * w;
            }
        }
        if relu {
            for o in out.iter_mut() {
                if *o < 0.0 {
                    *o = 0.0;
                }
            }
        }
    }

    /// Accumulates parameter gradients into `grad` and writes the input gradient.
    #[inline]
    fn backward(&self, input: &[f64], delta: &[f64], grad: &mut Dense, d_input: Option<&mut [f64]>) {
        for (g, &d) in grad.bias.iter_mut().zip(delta) {
            *g += d;
        }
        for (i, &x) in input.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let row = &mut grad.weights[i * self.fan_out..(i + 1) * self.fan_out];
            for (g, &d) in row.iter_mut().zip(delta) {
                *g += x * d;
            }
        }
        if let Some(d_in) = d_input {
            for (i, di) in d_in.iter_mut().enumerate() {
                let row = &self.weights[i * self.fan_out..(i + 1) * self.fan_out];
                *di = row.iter().zip(delta).map(|(w, d)| w * d).sum();
            }
        }
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Quality assessment network: a shared per-point MLP max-pooled over points, an MLP on
/// the reconstruction-wise cues, and a head on their concatenation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaModel {
    pub format_version: u32,
    pub arch: Arch,
    pub point: Vec<Dense>,
    pub recon: Vec<Dense>,
    pub head: Vec<Dense>,
}

fn build(dims: &[usize], mut make: impl FnMut(usize, usize) -> Dense) -> Vec<Dense> {
    dims.windows(2).map(|w| make(w[0], w[1])).collect()
}

/// Intermediate values of one forward pass that backpropagation needs.
pub(crate) struct Trace {
    pub pooled: Vec<f64>,
    pub argmax: Vec<usize>,
    pub recon_acts: Vec<Vec<f64>>,
    pub head_acts: Vec<Vec<f64>>,
}

impl Trace {
    pub fn score(&self) -> f64 {
        self.head_acts.last().expect("head has an output layer")[0]
    }
}

impl QaModel {
    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng>(arch: Arch, rng: &mut R) -> Result<Self, QanetError> {
        arch.validate()?;
        let point = build(&arch.point_dims, |i, o| Dense::glorot(i, o, rng));
        let recon = build(&arch.recon_dims, |i, o| Dense::glorot(i, o, rng));
        let head = build(&arch.head_dims, |i, o| Dense::glorot(i, o, rng));
        Ok(Self { format_version: FORMAT_VERSION, arch, point, recon, head })
    }

    /// Same shape, all parameters zero. Used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let z = |layers: &[Dense]| layers.iter().map(|l| Dense::zeros(l.fan_in, l.fan_out)).collect();
        Self {
            format_version: self.format_version,
            arch: self.arch.clone(),
            point: z(&self.point),
            recon: z(&self.recon),
            head: z(&self.head),
        }
    }

    pub fn validate(&self) -> Result<(), QanetError> {
        if self.format_version != FORMAT_VERSION {
            return Err(QanetError::InvalidArch(format!("unsupported format version {}", self.format_version)));
        }
        self.arch.validate()?;
        let chain = |layers: &[Dense], dims: &[usize]| {
            layers.len() + 1 == dims.len().max(1)
                && layers.iter().zip(dims.windows(2)).all(|(l, d)| {
                    l.fan_in == d[0]
                        && l.fan_out == d[1]
                        && l.weights.len() == d[0] * d[1]
                        && l.bias.len() == d[1]
                })
        };
        if !chain(&self.point, &self.arch.point_dims)
            || !chain(&self.recon, &self.arch.recon_dims)
            || !chain(&self.head, &self.arch.head_dims)
        {
            return Err(QanetError::InvalidArch("layer shapes disagree with arch".into()));
        }
        if self.layers().any(|l| l.weights.iter().chain(&l.bias).any(|v| !v.is_finite())) {
            return Err(QanetError::InvalidArch("non-finite parameter".into()));
        }
        Ok(())
    }

    pub fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.point.iter().chain(&self.recon).chain(&self.head)
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut Dense> {
        self.point.iter_mut().chain(self.recon.iter_mut()).chain(self.head.iter_mut())
    }

    pub fn param_count(&self) -> usize {
        self.layers().map(Dense::param_count).sum()
    }

    /// All parameters in a fixed order: point, recon, head layers; weights then bias.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        for l in self.layers() {
            v.extend_from_slice(&l.weights);
            v.extend_from_slice(&l.bias);
        }
        v
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers_mut().flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn set_param(&mut self, index: usize, value: f64) {
        *self.params_mut().nth(index).expect("parameter index in range") = value;
    }

    fn check_dims(&self, cv: &CueVector) -> Result<(), QanetError> {
        let pd = self.arch.point_dims[0];
        let rd = self.arch.recon_dims.first().copied().unwrap_or(0);
        let want_recon = if self.arch.recon_dims.is_empty() { 0 } else { rd };
        let recon_ok = if self.arch.recon_dims.is_empty() {
            true
        } else {
            cv.recon_cues.len() == want_recon
        };
        if cv.point_dim() != pd || cv.n == 0 || cv.point_cues.len() != cv.n * pd || !recon_ok {
            return Err(QanetError::DimMismatch {
                expected: (pd, want_recon),
                got: (cv.point_dim(), cv.recon_cues.len()),
            });
        }
        Ok(())
    }

    pub(crate) fn point_row_forward(&self, row: &[f64], acts: &mut [Vec<f64>]) {
        let mut input = row;
        for (layer, out) in self.point.iter().zip(acts.iter_mut()) {
            layer.forward(input, out, true);
            input = out;
        }
    }

    fn point_buffers(&self) -> Vec<Vec<f64>> {
        self.arch.point_dims[1..].iter().map(|&d| vec![0.0; d]).collect()
    }

    pub(crate) fn forward(&self, cv: &CueVector) -> Result<Trace, QanetError> {
        self.check_dims(cv)?;
        let pooled_dim = *self.arch.point_dims.last().unwrap();
        let mut acts = self.point_buffers();
        let mut pooled = vec![f64::NEG_INFINITY; pooled_dim];
        let mut argmax = vec![0usize; pooled_dim];
        for (r, row) in cv.rows().enumerate() {
            self.point_row_forward(row, &mut acts);
            let last = acts.last().unwrap();
            for k in 0..pooled_dim {
                // Strict comparison: ties keep the lowest row index.
                if last[k] > pooled[k] {
                    pooled[k] = last[k];
                    argmax[k] = r;
                }
            }
        }

        let mut recon_acts = Vec::with_capacity(self.recon.len());
        let mut input: &[f64] = &cv.recon_cues;
        for layer in &self.recon {
            let mut out = vec![0.0; layer.fan_out];
            layer.forward(input, &mut out, true);
            recon_acts.push(out);
            input = recon_acts.last().unwrap();
        }

        let mut head_in = pooled.clone();
        if let Some(r) = recon_acts.last() {
            head_in.extend_from_slice(r);
        }
        let mut head_acts: Vec<Vec<f64>> = Vec::with_capacity(self.head.len() + 1);
        head_acts.push(head_in);
        let last = self.head.len() - 1;
        for (i, layer) in self.head.iter().enumerate() {
            let mut out = vec![0.0; layer.fan_out];
            layer.forward(head_acts.last().unwrap(), &mut out, i != last);
            head_acts.push(out);
        }
        Ok(Trace { pooled, argmax, recon_acts, head_acts })
    }

    /// Predicted quality score; only its order relative to other scores is meaningful.
    pub fn score(&self, cv: &CueVector) -> Result<f64, QanetError> {
        Ok(self.forward(cv)?.score())
    }

    /// Adds `d_score * d(score)/d(theta)` into `grad`.
    pub(crate) fn backward(&self, cv: &CueVector, trace: &Trace, d_score: f64, grad: &mut QaModel) {
        // Head, walking back from the scalar output.
        let mut delta = vec![d_score];
        for (i, layer) in self.head.iter().enumerate().rev() {
            let input = &trace.head_acts[i];
            let mut d_in = vec![0.0; layer.fan_in];
            layer.backward(input, &delta, &mut grad.head[i], Some(&mut d_in));
            if i > 0 {
                // Hidden head layers are rectified.
                for (d, &a) in d_in.iter_mut().zip(input) {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            delta = d_in;
        }
        let pooled_dim = trace.pooled.len();
        let (d_pooled, d_recon_out) = delta.split_at(pooled_dim);

        // Reconstruction-wise branch.
        if !self.recon.is_empty() {
            let mut delta: Vec<f64> = d_recon_out
                .iter()
                .zip(trace.recon_acts.last().unwrap())
                .map(|(&d, &a)| if a > 0.0 { d } else { 0.0 })
                .collect();
            for i in (0..self.recon.len()).rev() {
                let input: &[f64] = if i == 0 { &cv.recon_cues } else { &trace.recon_acts[i - 1] };
                let mut d_in = vec![0.0; self.recon[i].fan_in];
                let need_input = i > 0;
                self.recon[i].backward(input, &delta, &mut grad.recon[i], need_input.then_some(&mut d_in[..]));
                if need_input {
                    delta = d_in.iter().zip(input).map(|(&d, &a)| if a > 0.0 { d } else { 0.0 }).collect();
                }
            }
        }

        // Point branch: each pooled coordinate routes its gradient to its argmax row.
        let mut rows: Vec<usize> = trace.argmax.clone();
        rows.sort_unstable();
        rows.dedup();
        let mut acts = self.point_buffers();
        for r in rows {
            let row = cv.row(r);
            self.point_row_forward(row, &mut acts);
            let last = acts.last().unwrap();
            let mut delta: Vec<f64> = (0..pooled_dim)
                .map(|k| if trace.argmax[k] == r && last[k] > 0.0 { d_pooled[k] } else { 0.0 })
                .collect();
            if delta.iter().all(|&d| d == 0.0) {
                continue;
            }
            for i in (0..self.point.len()).rev() {
                let input: &[f64] = if i == 0 { row } else { &acts[i - 1] };
                let need_input = i > 0;
                let mut d_in = vec![0.0; self.point[i].fan_in];
                self.point[i].backward(input, &delta, &mut grad.point[i], need_input.then_some(&mut d_in[..]));
                if need_input {
                    delta = d_in.iter().zip(input).map(|(&d, &a)| if a > 0.0 { d } else { 0.0 }).collect();
                }
            }
        }
    }

    /// Gradient of the score with respect to every parameter, in `flat_params` order.
    pub fn score_gradient(&self, cv: &CueVector) -> Result<Vec<f64>, QanetError> {
        let trace = self.forward(cv)?;
        let mut grad = self.zeros_like();
        self.backward(cv, &trace, 1.0, &mut grad);
        Ok(grad.flat_params())
    }

    /// Hash of every rectifier on/off state and every pooling argmax for `cv`.
    ///
    /// Two parameter settings with equal signatures lie in the same smooth piece of the
    /// network function; finite-difference checks use this to detect kink crossings.
    pub fn activation_signature(&self, cv: &CueVector) -> Result<u64, QanetError> {
        let trace = self.forward(cv)?;
        let mut h = DefaultHasher::new();
        trace.argmax.hash(&mut h);
        let mut acts = self.point_buffers();
        for row in cv.rows() {
            self.point_row_forward(row, &mut acts);
            for a in acts.iter().flatten() {
                (*a > 0.0).hash(&mut h);
            }
        }
        for a in trace.recon_acts.iter().flatten() {
            (*a > 0.0).hash(&mut h);
        }
        for layer in &trace.head_acts[1..trace.head_acts.len() - 1] {
            for a in layer {
                (*a > 0.0).hash(&mut h);
            }
        }
        Ok(h.finish())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, QanetError> {
        let m: QaModel = serde_json::from_str(s).map_err(|e| QanetError::Format(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }
}
