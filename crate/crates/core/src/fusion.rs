//! Weighted channel-attention transform applied to FPN outputs.
//!
//! Each level goes through a squeeze-excitation gate (global average pool,
//! bottleneck MLP with ReLU, sigmoid) and is then scaled by a positive
//! per-level weight. Levels are independent of one another.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense `C x H x W` activations, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::Shape(format!(
                "feature map dims must be positive, got {channels}x{height}x{width}"
            )));
        }
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "{} values for a {channels}x{height}x{width} map",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain(
                "feature map contains non-finite values".into(),
            ));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }
}

/// Squeeze-excitation parameters. Matrices are row-major:
/// `w1` is `hidden x channels`, `w2` is `channels x hidden`,
/// with `hidden = channels / reduction`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionParams {
    pub channels: usize,
    pub reduction: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl AttentionParams {
    pub fn validate(&self) -> Result<()> {
        let (c, r) = (self.channels, self.reduction);
        if c == 0 || r == 0 || c % r != 0 {
            return Err(Error::Shape(format!(
                "channels {c} must be a positive multiple of reduction {r}"
            )));
        }
        let hidden = c / r;
        let expect = [
            ("w1", self.w1.len(), hidden * c),
            ("b1", self.b1.len(), hidden),
            ("w2", self.w2.len(), c * hidden),
            ("b2", self.b2.len(), c),
        ];
        for (name, got, want) in expect {
            if got != want {
                return Err(Error::Shape(format!(
                    "{name} has {got} entries, expected {want}"
                )));
            }
        }
        let all = self
            .w1
            .iter()
            .chain(&self.b1)
            .chain(&self.w2)
            .chain(&self.b2);
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("attention parameters must be finite".into()));
        }
        Ok(())
    }

    pub fn hidden(&self) -> usize {
        self.channels / self.reduction
    }

    /// All-zero parameters: every gate is exactly 0.5.
    pub fn zeros(channels: usize, reduction: usize) -> Result<Self> {
        Self::with_output_bias(channels, reduction, 0.0)
    }

    /// Zero weights with a constant output bias, giving gate `sigmoid(bias)`.
    pub fn with_output_bias(channels: usize, reduction: usize, bias: f64) -> Result<Self> {
        let hidden = channels.checked_div(reduction).unwrap_or(0);
        let p = Self {
            channels,
            reduction,
            w1: vec![0.0; hidden * channels],
            b1: vec![0.0; hidden],
            w2: vec![0.0; channels * hidden],
            b2: vec![bias; channels],
        };
        p.validate()?;
        Ok(p)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(text).map_err(|e| Error::from_json(&e, text))?;
        p.validate()?;
        Ok(p)
    }
}

/// Per-level scalars, coarsest level first.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelWeights(pub [f64; 4]);

impl Default for LevelWeights {
    fn default() -> Self {
        Self([1.5, 2.0, 2.5, 3.0])
    }
}

impl LevelWeights {
    pub fn new(wt: [f64; 4]) -> Result<Self> {
        if wt.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::Config(format!(
                "level weights must be positive, got {wt:?}"
            )));
        }
        if wt.windows(2).any(|p| p[1] < p[0]) {
            log::warn!("level weights {wt:?} are not non-decreasing from coarse to fine");
        }
        Ok(Self(wt))
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Per-channel gates in (0, 1).
pub fn attention_gates(fm: &FeatureMap, p: &AttentionParams) -> Result<Vec<f64>> {
    p.validate()?;
    if p.channels != fm.channels {
        return Err(Error::Shape(format!(
            "params for {} channels applied to a {}-channel map",
            p.channels, fm.channels
        )));
    }
    let c = fm.channels;
    let hidden = p.hidden();
    let n = (fm.height * fm.width) as f64;
    let squeeze: Vec<f64> = (0..c)
        .map(|ch| fm.plane(ch).iter().sum::<f64>() / n)
        .collect();
    let excite: Vec<f64> = (0..hidden)
        .map(|j| {
            let row = &p.w1[j * c..(j + 1) * c];
            let v = row.iter().zip(&squeeze).map(|(w, z)| w * z).sum::<f64>() + p.b1[j];
            v.max(0.0)
        })
        .collect();
    Ok((0..c)
        .map(|ch| {
            let row = &p.w2[ch * hidden..(ch + 1) * hidden];
            sigmoid(row.iter().zip(&excite).map(|(w, e)| w * e).sum::<f64>() + p.b2[ch])
        })
        .collect())
}

pub fn channel_attention(fm: &FeatureMap, p: &AttentionParams) -> Result<FeatureMap> {
    scaled_attention(fm, p, 1.0)
}

fn scaled_attention(fm: &FeatureMap, p: &AttentionParams, weight: f64) -> Result<FeatureMap> {
    let gates = attention_gates(fm, p)?;
    let n = fm.height * fm.width;
    let data = fm
        .data
        .chunks_exact(n)
        .zip(&gates)
        .flat_map(|(plane, g)| plane.iter().map(move |v| weight * g * v))
        .collect();
    Ok(FeatureMap { data, ..*fm })
}

/// `out[i] = wt[i] * channel_attention(levels[i], params[i])` for four levels.
pub fn weighted_fuse(
    levels: &[FeatureMap],
    weights: &LevelWeights,
    params: &[AttentionParams],
) -> Result<Vec<FeatureMap>> {
    if levels.len() != 4 || params.len() != 4 {
        return Err(Error::Shape(format!(
            "expected 4 levels and 4 parameter sets, got {} and {}",
            levels.len(),
            params.len()
        )));
    }
    levels
        .iter()
        .zip(params)
        .zip(weights.0)
        .map(|((fm, p), w)| scaled_attention(fm, p, w))
        .collect()
}

const HEADER_LEN: usize = 12;

/// Little-endian `u32` C, H, W followed by `f32` values.
pub fn encode_feature_map(fm: &FeatureMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * fm.data.len());
    for d in [fm.channels, fm.height, fm.width] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in &fm.data {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode_feature_map(bytes: &[u8]) -> Result<FeatureMap> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Parse {
            offset: bytes.len(),
            message: "truncated feature map header".into(),
        });
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap()) as usize;
    let (c, h, w) = (word(0), word(1), word(2));
    let expected = c
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .and_then(|v| v.checked_mul(4))
        .and_then(|v| v.checked_add(HEADER_LEN));
    if expected != Some(bytes.len()) {
        return Err(Error::Parse {
            offset: HEADER_LEN,
            message: format!(
                "payload of {} bytes does not match {c}x{h}x{w}",
                bytes.len() - HEADER_LEN
            ),
        });
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|b| f64::from(f32::from_le_bytes(b.try_into().unwrap())))
        .collect();
    FeatureMap::new(c, h, w, data)
}
