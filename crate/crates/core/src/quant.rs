//! Logarithmic coordinate contraction and linear quantization.

use serde::{Deserialize, Serialize};

use crate::cloud::Attribute;
use crate::error::{Error, Result};

/// Largest `|x_log|` whose expansion stays finite in `f64`.
const MAX_EXPAND: f64 = 709.0;

/// Maps contracted coordinates back to world space: `sign(x) * (exp(|x|) - 1)`.
pub fn expand(x_log: f64) -> Result<f64> {
    if !x_log.is_finite() || x_log.abs() > MAX_EXPAND {
        return Err(Error::Range(format!("cannot expand {x_log}")));
    }
    Ok(x_log.signum() * x_log.abs().exp_m1())
}

/// Inverse of [`expand`]: `sign(x) * ln(1 + |x|)`.
pub fn contract(x: f64) -> f64 {
    x.signum() * x.abs().ln_1p()
}

/// Clip range and level count for one channel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quantizer {
    pub min: f64,
    pub max: f64,
    pub levels: u32,
}

impl Quantizer {
    pub fn new(min: f64, max: f64, levels: u32) -> Result<Self> {
        if !(min.is_finite() && max.is_finite() && min < max) {
            return Err(Error::invalid(format!("invalid clip range [{min}, {max}]")));
        }
        if levels < 2 {
            return Err(Error::invalid(format!("need at least 2 levels, got {levels}")));
        }
        Ok(Quantizer { min, max, levels })
    }

    /// Range spanned by the data. A constant channel gets a unit-wide range
    /// so that its value is still reproduced exactly by index 0.
    pub fn fitted(values: impl IntoIterator<Item = f64>, levels: u32) -> Result<Self> {
        let (lo, hi) = values
            .into_iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        if !lo.is_finite() || !hi.is_finite() {
            return Err(Error::invalid("cannot fit a range to empty or non-finite data"));
        }
        let hi = if hi > lo { hi } else { lo + 1.0 };
        Quantizer::new(lo, hi, levels)
    }

    /// Distance between neighbouring levels.
    pub fn step(&self) -> f64 {
        (self.max - self.min) / f64::from(self.levels - 1)
    }

    /// Clamps, maps to `[0, 1]` and rounds to the nearest level (halves away from zero).
    pub fn quantize(&self, v: f64) -> u16 {
        let t = (v.clamp(self.min, self.max) - self.min) / (self.max - self.min);
        (t * f64::from(self.levels - 1)).round() as u16
    }

    pub fn dequantize(&self, index: u16) -> Result<f64> {
        if u32::from(index) >= self.levels {
            return Err(Error::invalid(format!(
                "index {index} out of range for {} levels",
                self.levels
            )));
        }
        Ok(self.min + f64::from(index) / f64::from(self.levels - 1) * (self.max - self.min))
    }

    pub fn bits(&self) -> u32 {
        32 - (self.levels - 1).leading_zeros()
    }
}

pub fn quantize(values: &[f64], q: &Quantizer) -> Vec<u16> {
    values.iter().map(|&v| q.quantize(v)).collect()
}

pub fn dequantize(indices: &[u16], q: &Quantizer) -> Result<Vec<f64>> {
    indices.iter().map(|&i| q.dequantize(i)).collect()
}

/// How one attribute is clipped before quantization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClipRule {
    /// Fixed range shared by every channel.
    Fixed { min: f64, max: f64 },
    /// Per-channel min/max of the data, stored alongside the bundle.
    DataRange,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeQuant {
    pub clip: ClipRule,
    pub levels: u32,
}

/// Quantization settings for every attribute.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantSpec {
    pub position: AttributeQuant,
    pub sh_dc: AttributeQuant,
    pub sh_rest: AttributeQuant,
    pub opacity: AttributeQuant,
    pub scale: AttributeQuant,
    pub rotation: AttributeQuant,
}

impl Default for QuantSpec {
    fn default() -> Self {
        QuantSpec {
            // quantized in contracted space
            position: AttributeQuant {
                clip: ClipRule::DataRange,
                levels: 1 << 14,
            },
            sh_dc: AttributeQuant {
                clip: ClipRule::Fixed { min: -2.0, max: 4.0 },
                levels: 1 << 8,
            },
            sh_rest: AttributeQuant {
                clip: ClipRule::Fixed { min: -1.0, max: 1.0 },
                levels: 1 << 5,
            },
            opacity: AttributeQuant {
                clip: ClipRule::Fixed { min: -6.0, max: 12.0 },
                levels: 1 << 6,
            },
            scale: AttributeQuant {
                clip: ClipRule::DataRange,
                levels: 1 << 6,
            },
            rotation: AttributeQuant {
                clip: ClipRule::Fixed { min: -1.0, max: 2.0 },
                levels: 1 << 6,
            },
        }
    }
}

impl QuantSpec {
    pub fn get(&self, attr: Attribute) -> &AttributeQuant {
        match attr {
            Attribute::Position => &self.position,
            Attribute::ShDc => &self.sh_dc,
            Attribute::ShRest => &self.sh_rest,
            Attribute::Opacity => &self.opacity,
            Attribute::Scale => &self.scale,
            Attribute::Rotation => &self.rotation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for a in Attribute::ALL {
            let q = self.get(a);
            if !(2..=1 << 16).contains(&q.levels) {
                return Err(Error::invalid(format!("{a}: level count {} out of range", q.levels)));
            }
            if let ClipRule::Fixed { min, max } = q.clip {
                Quantizer::new(min, max, q.levels)?;
            }
        }
        Ok(())
    }
}

/// Value stored for an attribute: contracted for positions, raw otherwise.
pub fn to_stored(attr: Attribute, raw: f32) -> f64 {
    let v = f64::from(raw);
    match attr {
        Attribute::Position => contract(v),
        _ => v,
    }
}

pub fn from_stored(attr: Attribute, stored: f64) -> Result<f32> {
    let v = match attr {
        Attribute::Position => expand(stored)?,
        _ => stored,
    };
    Ok(v as f32)
}
