//! Keypoints, binary descriptors, per-frame feature sets and the on-disk
//! feature stream formats.

mod container;
mod descriptor;
mod json;
mod keypoint;
mod synth;

use std::collections::BTreeMap;

pub use container::{read_stream, write_stream, decode_stream, encode_stream, FORMAT_VERSION, MAGIC};
pub use descriptor::BinaryDescriptor;
pub use json::{read_stream_json, stream_from_json, stream_to_json, write_stream_json};
pub use keypoint::{quantize_keypoint, QuantizedKeypoint, ORIENTATION_BINS, POSITION_STEP};
pub use synth::{synth_stream, DexelSource, SynthConfig};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocalFeature {
    pub keypoint: QuantizedKeypoint,
    pub descriptor: BinaryDescriptor,
}

impl LocalFeature {
    pub fn new(keypoint: QuantizedKeypoint, descriptor: BinaryDescriptor) -> Self {
        Self {
            keypoint,
            descriptor,
        }
    }

    /// Raster ordering key: (y, x, scale, orientation, descriptor).
    fn raster_key(&self) -> (i32, i32, i32, u8, &BinaryDescriptor) {
        let k = &self.keypoint;
        (k.y, k.x, k.scale, k.orientation, &self.descriptor)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FrameFeatures {
    pub frame_index: u32,
    pub features: Vec<LocalFeature>,
}

impl FrameFeatures {
    pub fn new(frame_index: u32, features: Vec<LocalFeature>) -> Self {
        Self {
            frame_index,
            features,
        }
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// Sorts features into raster order, the order in which the local codec
    /// emits and reconstructs them.
    pub fn sort_raster(&mut self) {
        self.features.sort_by(|a, b| a.raster_key().cmp(&b.raster_key()));
    }

    pub fn is_raster_sorted(&self) -> bool {
        self.features
            .windows(2)
            .all(|w| w[0].raster_key() <= w[1].raster_key())
    }

    pub fn descriptors(&self) -> impl Iterator<Item = &BinaryDescriptor> {
        self.features.iter().map(|f| &f.descriptor)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureStream {
    pub descriptor_length: usize,
    pub frames: Vec<FrameFeatures>,
    pub metadata: BTreeMap<String, String>,
}

impl FeatureStream {
    pub fn new(descriptor_length: usize) -> Self {
        Self {
            descriptor_length,
            frames: Vec::new(),
            metadata: BTreeMap::new(),
        }
    }

    /// Checks descriptor lengths, keypoint ranges and frame ordering.
    pub fn validate(&self) -> Result<()> {
        if self.descriptor_length == 0 || self.descriptor_length > u16::MAX as usize {
            return Err(Error::Stream(format!(
                "descriptor length {} outside 1..=65535",
                self.descriptor_length
            )));
        }
        let mut prev: Option<u32> = None;
        for frame in &self.frames {
            if prev.is_some_and(|p| frame.frame_index <= p) {
                return Err(Error::Stream(format!(
                    "frame index {} not strictly increasing",
                    frame.frame_index
                )));
            }
            prev = Some(frame.frame_index);
            for f in &frame.features {
                if f.descriptor.len() != self.descriptor_length {
                    return Err(Error::Dimension {
                        expected: self.descriptor_length,
                        actual: f.descriptor.len(),
                    });
                }
                f.keypoint.validate()?;
            }
        }
        Ok(())
    }

    pub fn feature_count(&self) -> usize {
        self.frames.iter().map(|f| f.len()).sum()
    }

    pub fn descriptors(&self) -> impl Iterator<Item = &BinaryDescriptor> {
        self.frames.iter().flat_map(|f| f.descriptors())
    }

    /// Frame width and height in pixels, when recorded in the metadata.
    pub fn frame_size(&self) -> Option<(u32, u32)> {
        let w = self.metadata.get("width")?.parse().ok()?;
        let h = self.metadata.get("height")?.parse().ok()?;
        Some((w, h))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feat(x: i32, y: i32) -> LocalFeature {
        LocalFeature::new(
            QuantizedKeypoint::new(x, y, 4, 0).unwrap(),
            BinaryDescriptor::zeros(8),
        )
    }

    #[test]
    fn raster_sort_is_row_major() {
        let mut f = FrameFeatures::new(0, vec![feat(5, 2), feat(1, 3), feat(0, 2)]);
        f.sort_raster();
        let xy: Vec<_> = f.features.iter().map(|f| (f.keypoint.x, f.keypoint.y)).collect();
        assert_eq!(xy, vec![(0, 2), (5, 2), (1, 3)]);
        assert!(f.is_raster_sorted());
    }

    #[test]
    fn validate_catches_length_and_order() {
        let mut s = FeatureStream::new(8);
        s.frames.push(FrameFeatures::new(3, vec![feat(0, 0)]));
        s.frames.push(FrameFeatures::new(3, vec![]));
        assert!(s.validate().is_err());
        s.frames[1].frame_index = 4;
        assert!(s.validate().is_ok());
        s.frames[1].features.push(LocalFeature::new(
            QuantizedKeypoint::new(0, 0, 1, 0).unwrap(),
            BinaryDescriptor::zeros(16),
        ));
        assert!(matches!(s.validate(), Err(Error::Dimension { .. })));
    }
}
