use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Quantization step for x, y and scale, in pixels.
pub const POSITION_STEP: f64 = 0.25;
/// Number of orientation bins over a full turn (step π/16).
pub const ORIENTATION_BINS: u8 = 32;

/// Keypoint location quantized to quarter-pixel position/scale and π/16
/// orientation steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct QuantizedKeypoint {
    pub x: i32,
    pub y: i32,
    pub scale: i32,
    pub orientation: u8,
}

impl QuantizedKeypoint {
    pub fn new(x: i32, y: i32, scale: i32, orientation: u8) -> Result<Self> {
        let kp = Self {
            x,
            y,
            scale,
            orientation,
        };
        kp.validate()?;
        Ok(kp)
    }

    pub fn validate(&self) -> Result<()> {
        if self.x < 0 || self.y < 0 || self.scale < 0 {
            return Err(Error::InvalidKeypoint(format!(
                "negative component in {self:?}"
            )));
        }
        if self.orientation >= ORIENTATION_BINS {
            return Err(Error::InvalidKeypoint(format!(
                "orientation index {} >= {ORIENTATION_BINS}",
                self.orientation
            )));
        }
        Ok(())
    }

    /// (x, y, scale, orientation) in pixels and radians.
    pub fn dequantize(&self) -> (f64, f64, f64, f64) {
        (
            self.x as f64 * POSITION_STEP,
            self.y as f64 * POSITION_STEP,
            self.scale as f64 * POSITION_STEP,
            self.orientation as f64 * PI / 16.0,
        )
    }

    pub fn position(&self) -> (f64, f64) {
        (self.x as f64 * POSITION_STEP, self.y as f64 * POSITION_STEP)
    }
}

/// Rounds a real keypoint onto the quantization grid. Ties round half away
/// from zero; orientation is reduced modulo 2π first.
pub fn quantize_keypoint(x: f64, y: f64, scale: f64, orientation: f64) -> Result<QuantizedKeypoint> {
    if !(x.is_finite() && y.is_finite() && scale.is_finite() && orientation.is_finite()) {
        return Err(Error::InvalidKeypoint("non-finite component".into()));
    }
    if scale <= 0.0 {
        return Err(Error::InvalidKeypoint(format!("scale {scale} must be positive")));
    }
    let q = |v: f64| -> Result<i32> {
        let r = (v / POSITION_STEP).round();
        if r < 0.0 || r > i32::MAX as f64 {
            return Err(Error::InvalidKeypoint(format!("coordinate {v} out of range")));
        }
        Ok(r as i32)
    };
    let theta = orientation.rem_euclid(2.0 * PI);
    let bin = (theta / (PI / 16.0)).round() as i64;
    Ok(QuantizedKeypoint {
        x: q(x)?,
        y: q(y)?,
        scale: q(scale)?,
        orientation: bin.rem_euclid(ORIENTATION_BINS as i64) as u8,
    })
}
