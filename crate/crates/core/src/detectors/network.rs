//! LSTM motion-profile detector: inference over externally trained weights.
//!
//! One independent network per profile. Each network normalizes the 6-vector
//! `(gyro, accel)`, runs it through two stacked LSTM layers and maps the top
//! hidden state through a two-layer dense head and a sigmoid. The on-disk
//! layout is described in `docs/detector-weights.md`.

use std::path::Path;
use std::sync::Arc;

use super::{MotionDetector, MotionFlags, ProfileScores};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::state::ImuSample;

pub const WEIGHTS_MAGIC: &[u8; 8] = b"RINSWDET";
pub const WEIGHTS_VERSION: u32 = 1;
pub const PROFILE_COUNT: usize = 4;
pub const INPUT_SIZE: usize = 6;
pub const LSTM_LAYERS: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
}

impl Activation {
    fn tag(self) -> u32 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
        }
    }

    fn from_tag(tag: u32) -> Result<Self> {
        match tag {
            0 => Ok(Activation::Identity),
            1 => Ok(Activation::Relu),
            t => Err(Error::Weights(format!("unknown activation tag {t}"))),
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
        }
    }
}

/// Gate blocks stacked as (input, forget, cell, output), row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmLayer {
    pub input_size: usize,
    pub hidden_size: usize,
    /// `4H × input_size`
    pub w_ih: Vec<f32>,
    /// `4H × H`
    pub w_hh: Vec<f32>,
    pub b_ih: Vec<f32>,
    pub b_hh: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub input_size: usize,
    pub output_size: usize,
    pub activation: Activation,
    /// `output_size × input_size`, row-major
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProfileNetwork {
    /// Inputs are mapped to `(x − mean) · scale` before the first layer.
    pub norm_mean: [f32; INPUT_SIZE],
    pub norm_scale: [f32; INPUT_SIZE],
    pub lstm: Vec<LstmLayer>,
    /// Hidden layer then scalar output layer; a sigmoid follows.
    pub head: [DenseLayer; 2],
    pub threshold: f32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectorWeights {
    pub hidden_size: usize,
    pub profiles: Vec<ProfileNetwork>,
}

/// Per-profile, per-layer `(h, c)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectorHiddenState {
    pub layers: Vec<Vec<(Vec<f64>, Vec<f64>)>>,
}

impl DetectorHiddenState {
    pub fn zeros(weights: &DetectorWeights) -> Self {
        let h = weights.hidden_size;
        Self {
            layers: weights
                .profiles
                .iter()
                .map(|p| {
                    p.lstm
                        .iter()
                        .map(|_| (vec![0.0; h], vec![0.0; h]))
                        .collect()
                })
                .collect(),
        }
    }

    fn matches(&self, weights: &DetectorWeights) -> bool {
        self.layers.len() == weights.profiles.len()
            && self.layers.iter().zip(&weights.profiles).all(|(l, p)| {
                l.len() == p.lstm.len()
                    && l.iter().all(|(h, c)| {
                        h.len() == weights.hidden_size && c.len() == weights.hidden_size
                    })
            })
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `out += W x` for a row-major `rows × x.len()` matrix.
fn gemv_acc(out: &mut [f64], w: &[f32], x: &[f64]) {
    let cols = x.len();
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o += row.iter().zip(x).map(|(a, b)| *a as f64 * b).sum::<f64>();
    }
}

impl LstmLayer {
    fn zeros(input_size: usize, hidden_size: usize) -> Self {
        let g = 4 * hidden_size;
        Self {
            input_size,
            hidden_size,
            w_ih: vec![0.0; g * input_size],
            w_hh: vec![0.0; g * hidden_size],
            b_ih: vec![0.0; g],
            b_hh: vec![0.0; g],
        }
    }

    fn step(&self, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let hs = self.hidden_size;
        let mut gates: Vec<f64> = self
            .b_ih
            .iter()
            .zip(&self.b_hh)
            .map(|(a, b)| *a as f64 + *b as f64)
            .collect();
        gemv_acc(&mut gates, &self.w_ih, x);
        gemv_acc(&mut gates, &self.w_hh, h);
        let mut h_next = vec![0.0; hs];
        let mut c_next = vec![0.0; hs];
        for k in 0..hs {
            let i = sigmoid(gates[k]);
            let f = sigmoid(gates[hs + k]);
            let g = gates[2 * hs + k].tanh();
            let o = sigmoid(gates[3 * hs + k]);
            c_next[k] = f * c[k] + i * g;
            h_next[k] = o * c_next[k].tanh();
        }
        (h_next, c_next)
    }
}

impl DenseLayer {
    fn zeros(input_size: usize, output_size: usize, activation: Activation) -> Self {
        Self {
            input_size,
            output_size,
            activation,
            weight: vec![0.0; input_size * output_size],
            bias: vec![0.0; output_size],
        }
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = self.bias.iter().map(|b| *b as f64).collect();
        gemv_acc(&mut out, &self.weight, x);
        out.into_iter().map(|v| self.activation.apply(v)).collect()
    }
}

impl ProfileNetwork {
    /// All-zero network (scores 0.5 everywhere) with the given threshold.
    pub fn zeros(hidden_size: usize, head_hidden: usize, threshold: f32) -> Self {
        Self {
            norm_mean: [0.0; INPUT_SIZE],
            norm_scale: [1.0; INPUT_SIZE],
            lstm: vec![
                LstmLayer::zeros(INPUT_SIZE, hidden_size),
                LstmLayer::zeros(hidden_size, hidden_size),
            ],
            head: [
                DenseLayer::zeros(hidden_size, head_hidden, Activation::Relu),
                DenseLayer::zeros(head_hidden, 1, Activation::Identity),
            ],
            threshold,
        }
    }
}

/// Default per-profile thresholds: 0.95 for (vel, ang), 0.5 for (lat, up).
pub const DEFAULT_THRESHOLDS: [f32; 4] = [0.95, 0.95, 0.5, 0.5];

impl DetectorWeights {
    pub fn zeros(hidden_size: usize, head_hidden: usize) -> Self {
        Self {
            hidden_size,
            profiles: DEFAULT_THRESHOLDS
                .iter()
                .map(|t| ProfileNetwork::zeros(hidden_size, head_hidden, *t))
                .collect(),
        }
    }

    pub fn thresholds(&self) -> [f64; 4] {
        let mut t = [0.0; 4];
        for (dst, p) in t.iter_mut().zip(&self.profiles) {
            *dst = p.threshold as f64;
        }
        t
    }

    /// Checks every tensor shape and value range.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Weights(m));
        let h = self.hidden_size;
        if h == 0 {
            return bad("hidden size must be positive".into());
        }
        if self.profiles.len() != PROFILE_COUNT {
            return bad(format!(
                "expected {PROFILE_COUNT} profiles, got {}",
                self.profiles.len()
            ));
        }
        for (k, p) in self.profiles.iter().enumerate() {
            if p.lstm.len() != LSTM_LAYERS {
                return bad(format!(
                    "profile {k}: expected {LSTM_LAYERS} LSTM layers, got {}",
                    p.lstm.len()
                ));
            }
            for (l, layer) in p.lstm.iter().enumerate() {
                let input = if l == 0 { INPUT_SIZE } else { h };
                let g = 4 * h;
                let ok = layer.input_size == input
                    && layer.hidden_size == h
                    && layer.w_ih.len() == g * input
                    && layer.w_hh.len() == g * h
                    && layer.b_ih.len() == g
                    && layer.b_hh.len() == g;
                if !ok {
                    return bad(format!("profile {k}: LSTM layer {l} shape mismatch"));
                }
            }
            let [h1, h2] = &p.head;
            let ok = h1.input_size == h
                && h1.output_size > 0
                && h1.weight.len() == h1.input_size * h1.output_size
                && h1.bias.len() == h1.output_size
                && h2.input_size == h1.output_size
                && h2.output_size == 1
                && h2.weight.len() == h2.input_size
                && h2.bias.len() == 1;
            if !ok {
                return bad(format!("profile {k}: head shape mismatch"));
            }
            if !(p.threshold > 0.0 && p.threshold < 1.0) {
                return bad(format!(
                    "profile {k}: threshold {} outside (0, 1)",
                    p.threshold
                ));
            }
            let all_finite = p
                .norm_mean
                .iter()
                .chain(&p.norm_scale)
                .all(|v| v.is_finite())
                && p.lstm.iter().all(|l| {
                    l.w_ih
                        .iter()
                        .chain(&l.w_hh)
                        .chain(&l.b_ih)
                        .chain(&l.b_hh)
                        .all(|v| v.is_finite())
                })
                && p.head
                    .iter()
                    .all(|d| d.weight.iter().chain(&d.bias).all(|v| v.is_finite()));
            if !all_finite {
                return bad(format!("profile {k}: non-finite parameter"));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(WEIGHTS_MAGIC);
        w.u32(WEIGHTS_VERSION);
        w.u32(self.profiles.len() as u32);
        w.u32(self.hidden_size as u32);
        w.u32(INPUT_SIZE as u32);
        for p in &self.profiles {
            w.f32s(&p.norm_mean);
            w.f32s(&p.norm_scale);
            for l in &p.lstm {
                w.f32s(&l.w_ih);
                w.f32s(&l.w_hh);
                w.f32s(&l.b_ih);
                w.f32s(&l.b_hh);
            }
            w.u32(p.head[0].output_size as u32);
            for d in &p.head {
                w.u32(d.activation.tag());
                w.f32s(&d.weight);
                w.f32s(&d.bias);
            }
            w.f32s(&[p.threshold]);
        }
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(8)? != WEIGHTS_MAGIC {
            return Err(Error::Weights("bad magic".into()));
        }
        let version = r.u32()?;
        if version != WEIGHTS_VERSION {
            return Err(Error::Weights(format!("unsupported version {version}")));
        }
        let profiles = r.u32()? as usize;
        let h = r.u32()? as usize;
        let input = r.u32()? as usize;
        if profiles != PROFILE_COUNT || input != INPUT_SIZE || h == 0 || h > 1 << 16 {
            return Err(Error::Weights(format!(
                "header: {profiles} profiles, hidden {h}, input {input}; expected {PROFILE_COUNT} profiles and input {INPUT_SIZE}"
            )));
        }
        let mut out = Vec::with_capacity(profiles);
        for _ in 0..profiles {
            let norm_mean = r.f32_array()?;
            let norm_scale = r.f32_array()?;
            let mut lstm = Vec::with_capacity(LSTM_LAYERS);
            for l in 0..LSTM_LAYERS {
                let in_size = if l == 0 { INPUT_SIZE } else { h };
                lstm.push(LstmLayer {
                    input_size: in_size,
                    hidden_size: h,
                    w_ih: r.f32s(4 * h * in_size)?,
                    w_hh: r.f32s(4 * h * h)?,
                    b_ih: r.f32s(4 * h)?,
                    b_hh: r.f32s(4 * h)?,
                });
            }
            let m = r.u32()? as usize;
            if m == 0 || m > 1 << 16 {
                return Err(Error::Weights(format!("head hidden size {m}")));
            }
            let a1 = Activation::from_tag(r.u32()?)?;
            let head1 = DenseLayer {
                input_size: h,
                output_size: m,
                activation: a1,
                weight: r.f32s(m * h)?,
                bias: r.f32s(m)?,
            };
            let a2 = Activation::from_tag(r.u32()?)?;
            let head2 = DenseLayer {
                input_size: m,
                output_size: 1,
                activation: a2,
                weight: r.f32s(m)?,
                bias: r.f32s(1)?,
            };
            let threshold = r.f32s(1)?[0];
            out.push(ProfileNetwork {
                norm_mean,
                norm_scale,
                lstm,
                head: [head1, head2],
                threshold,
            });
        }
        if r.pos != bytes.len() {
            return Err(Error::Weights(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        let weights = DetectorWeights {
            hidden_size: h,
            profiles: out,
        };
        weights.validate()?;
        Ok(weights)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| Error::Weights(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.validate()?;
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f32s(&mut self, v: &[f32]) {
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Weights(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n * 4)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    fn f32_array(&mut self) -> Result<[f32; INPUT_SIZE]> {
        let v = self.f32s(INPUT_SIZE)?;
        Ok(v.try_into().expect("INPUT_SIZE floats"))
    }
}

/// One recurrent step of all four networks on a raw sample.
pub fn detect_step<T: Real>(
    weights: &DetectorWeights,
    hidden: &DetectorHiddenState,
    sample: &ImuSample<T>,
) -> Result<(ProfileScores, DetectorHiddenState)> {
    if !hidden.matches(weights) {
        return Err(Error::Weights("hidden state does not match weights".into()));
    }
    let raw: Vec<f64> = sample
        .gyro
        .iter()
        .chain(sample.accel.iter())
        .map(|v| v.to_f64().unwrap_or(f64::NAN))
        .collect();

    let mut scores = [0.0; 4];
    let mut next = Vec::with_capacity(weights.profiles.len());
    for ((net, state), score) in weights
        .profiles
        .iter()
        .zip(&hidden.layers)
        .zip(scores.iter_mut())
    {
        let mut x: Vec<f64> = raw
            .iter()
            .zip(net.norm_mean.iter().zip(&net.norm_scale))
            .map(|(v, (m, s))| (v - *m as f64) * *s as f64)
            .collect();
        let mut layers = Vec::with_capacity(net.lstm.len());
        for (layer, (h, c)) in net.lstm.iter().zip(state) {
            let (h2, c2) = layer.step(&x, h, c);
            x = h2.clone();
            layers.push((h2, c2));
        }
        let z = net.head[1].forward(&net.head[0].forward(&x));
        *score = sigmoid(z[0]);
        next.push(layers);
    }
    Ok((ProfileScores(scores), DetectorHiddenState { layers: next }))
}

/// `flag_k = score_k ≥ threshold_k`.
pub fn threshold_scores(scores: &ProfileScores, weights: &DetectorWeights) -> MotionFlags {
    let t = weights.thresholds();
    MotionFlags::from_array([0, 1, 2, 3].map(|k| scores.0[k] >= t[k]))
}

/// Streaming wrapper holding the per-sequence hidden state.
#[derive(Clone, Debug)]
pub struct NetworkDetector {
    weights: Arc<DetectorWeights>,
    hidden: DetectorHiddenState,
}

impl NetworkDetector {
    pub fn new(weights: Arc<DetectorWeights>) -> Self {
        let hidden = DetectorHiddenState::zeros(&weights);
        Self { weights, hidden }
    }

    pub fn scores<T: Real>(&mut self, sample: &ImuSample<T>) -> ProfileScores {
        let (scores, hidden) = detect_step(&self.weights, &self.hidden, sample)
            .expect("hidden state built from weights");
        self.hidden = hidden;
        scores
    }
}

impl<T: Real> MotionDetector<T> for NetworkDetector {
    fn detect(&mut self, sample: &ImuSample<T>) -> MotionFlags {
        let s = self.scores(sample);
        threshold_scores(&s, &self.weights)
    }

    fn reset(&mut self) {
        self.hidden = DetectorHiddenState::zeros(&self.weights);
    }
}
