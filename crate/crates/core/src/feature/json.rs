//! JSON mirror of the "BFS1" container, field for field. Descriptors are
//! hex strings of the same ceil(P/8) bytes the binary format stores.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BinaryDescriptor, FeatureStream, FrameFeatures, LocalFeature, QuantizedKeypoint};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonStream {
    magic: String,
    version: u16,
    descriptor_length: u16,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
    frames: Vec<JsonFrame>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonFrame {
    frame_index: u32,
    features: Vec<JsonFeature>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonFeature {
    x: i32,
    y: i32,
    scale: i32,
    orientation: u8,
    descriptor: String,
}

pub fn stream_to_json(stream: &FeatureStream) -> Result<String> {
    stream.validate()?;
    let doc = JsonStream {
        magic: "BFS1".into(),
        version: super::FORMAT_VERSION,
        descriptor_length: stream.descriptor_length as u16,
        metadata: stream.metadata.clone(),
        frames: stream
            .frames
            .iter()
            .map(|f| JsonFrame {
                frame_index: f.frame_index,
                features: f
                    .features
                    .iter()
                    .map(|lf| JsonFeature {
                        x: lf.keypoint.x,
                        y: lf.keypoint.y,
                        scale: lf.keypoint.scale,
                        orientation: lf.keypoint.orientation,
                        descriptor: lf.descriptor.to_hex(),
                    })
                    .collect(),
            })
            .collect(),
    };
    Ok(serde_json::to_string_pretty(&doc)?)
}

/// Parses the JSON form. Errors report the frame/feature position in place of
/// a byte offset, since the JSON layout is not fixed-width.
pub fn stream_from_json(text: &str) -> Result<FeatureStream> {
    let doc: JsonStream = serde_json::from_str(text)?;
    if doc.magic != "BFS1" {
        return Err(Error::format(0, format!("bad magic {:?}", doc.magic)));
    }
    if doc.version != super::FORMAT_VERSION {
        return Err(Error::format(0, format!("unsupported version {}", doc.version)));
    }
    let p = doc.descriptor_length as usize;
    let mut stream = FeatureStream::new(p);
    stream.metadata = doc.metadata;
    for (fi, frame) in doc.frames.into_iter().enumerate() {
        let mut features = Vec::with_capacity(frame.features.len());
        for (i, f) in frame.features.into_iter().enumerate() {
            let at = |e: Error| Error::format(0, format!("frame {fi} feature {i}: {e}"));
            let keypoint = QuantizedKeypoint::new(f.x, f.y, f.scale, f.orientation).map_err(at)?;
            let descriptor = BinaryDescriptor::from_hex(&f.descriptor, p).map_err(at)?;
            features.push(LocalFeature::new(keypoint, descriptor));
        }
        stream.frames.push(FrameFeatures::new(frame.frame_index, features));
    }
    stream
        .validate()
        .map_err(|e| Error::format(0, e.to_string()))?;
    Ok(stream)
}

pub fn read_stream_json(path: impl AsRef<Path>) -> Result<FeatureStream> {
    stream_from_json(&fs::read_to_string(path)?)
}

pub fn write_stream_json(stream: &FeatureStream, path: impl AsRef<Path>) -> Result<u64> {
    let text = stream_to_json(stream)?;
    fs::write(path, &text)?;
    Ok(text.len() as u64)
}
