//! "BFS1" feature stream container.
//!
//! ```text
//! header   : "BFS1" | u16 version | u16 P | u32 N
//! frame    : u32 frame_index | u32 M
//! feature  : i32 x | i32 y | i32 scale | u8 orientation | ceil(P/8) descriptor bytes
//! trailer  : "META" | u32 count | count x (u16 key_len | key | u32 val_len | val)
//! ```
//!
//! All integers little-endian. The metadata trailer is present only when the
//! map is non-empty, with keys in ascending byte order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{BinaryDescriptor, FeatureStream, FrameFeatures, LocalFeature, QuantizedKeypoint};
use crate::error::{Error, Result};
use crate::io::ByteReader;

pub const MAGIC: &[u8; 4] = b"BFS1";
pub const FORMAT_VERSION: u16 = 1;
const META_TAG: &[u8; 4] = b"META";

pub fn encode_stream(stream: &FeatureStream) -> Result<Vec<u8>> {
    stream.validate()?;
    let desc_bytes = stream.descriptor_length.div_ceil(8);
    let mut out = Vec::with_capacity(12 + stream.feature_count() * (13 + desc_bytes));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(stream.descriptor_length as u16).to_le_bytes());
    out.extend_from_slice(&(stream.frames.len() as u32).to_le_bytes());
    for frame in &stream.frames {
        out.extend_from_slice(&frame.frame_index.to_le_bytes());
        out.extend_from_slice(&(frame.features.len() as u32).to_le_bytes());
        for f in &frame.features {
            let k = &f.keypoint;
            out.extend_from_slice(&k.x.to_le_bytes());
            out.extend_from_slice(&k.y.to_le_bytes());
            out.extend_from_slice(&k.scale.to_le_bytes());
            out.push(k.orientation);
            out.extend_from_slice(&f.descriptor.to_bytes());
        }
    }
    if !stream.metadata.is_empty() {
        out.extend_from_slice(META_TAG);
        out.extend_from_slice(&(stream.metadata.len() as u32).to_le_bytes());
        for (k, v) in &stream.metadata {
            if k.len() > u16::MAX as usize {
                return Err(Error::Stream(format!("metadata key too long: {}", k.len())));
            }
            out.extend_from_slice(&(k.len() as u16).to_le_bytes());
            out.extend_from_slice(k.as_bytes());
            out.extend_from_slice(&(v.len() as u32).to_le_bytes());
            out.extend_from_slice(v.as_bytes());
        }
    }
    Ok(out)
}

pub fn decode_stream(bytes: &[u8]) -> Result<FeatureStream> {
    let mut r = ByteReader::new(bytes);
    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(Error::format(0, format!("bad magic {magic:02x?}")));
    }
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let p = r.u16()? as usize;
    if p == 0 {
        return Err(Error::format(6, "descriptor length is zero"));
    }
    let n = r.u32()?;
    let desc_bytes = p.div_ceil(8);
    let mut stream = FeatureStream::new(p);
    let mut prev_index: Option<u32> = None;
    for _ in 0..n {
        let at = r.offset();
        let frame_index = r.u32()?;
        if prev_index.is_some_and(|pi| frame_index <= pi) {
            return Err(Error::format(at, format!("frame index {frame_index} not increasing")));
        }
        prev_index = Some(frame_index);
        let m = r.u32()?;
        // Guard the allocation against corrupt counts.
        let mut features = Vec::with_capacity((m as usize).min(r.remaining() / (13 + desc_bytes) + 1));
        for _ in 0..m {
            let at = r.offset();
            let x = r.i32()?;
            let y = r.i32()?;
            let scale = r.i32()?;
            let orientation = r.u8()?;
            let keypoint = QuantizedKeypoint::new(x, y, scale, orientation)
                .map_err(|e| Error::format(at, e.to_string()))?;
            let at = r.offset();
            let descriptor = BinaryDescriptor::from_bytes(r.take(desc_bytes)?, p)
                .map_err(|e| Error::format(at, e.to_string()))?;
            features.push(LocalFeature::new(keypoint, descriptor));
        }
        stream.frames.push(FrameFeatures::new(frame_index, features));
    }
    if r.remaining() > 0 {
        stream.metadata = read_metadata(&mut r)?;
    }
    Ok(stream)
}

fn read_metadata(r: &mut ByteReader<'_>) -> Result<BTreeMap<String, String>> {
    let at = r.offset();
    if r.take(4)? != META_TAG {
        return Err(Error::format(at, "unexpected trailing bytes"));
    }
    let count = r.u32()?;
    if count == 0 {
        return Err(Error::format(at, "empty metadata block"));
    }
    let mut map = BTreeMap::new();
    let mut last: Option<String> = None;
    for _ in 0..count {
        let at = r.offset();
        let klen = r.u16()? as usize;
        let key = utf8(r.take(klen)?, at)?;
        let vlen = r.u32()? as usize;
        let value = utf8(r.take(vlen)?, at)?;
        if last.as_ref().is_some_and(|l| *l >= key) {
            return Err(Error::format(at, format!("metadata key {key:?} out of order")));
        }
        last = Some(key.clone());
        map.insert(key, value);
    }
    if r.remaining() > 0 {
        return Err(Error::format(r.offset(), "trailing bytes after metadata"));
    }
    Ok(map)
}

fn utf8(bytes: &[u8], at: u64) -> Result<String> {
    String::from_utf8(bytes.to_vec()).map_err(|_| Error::format(at, "metadata is not UTF-8"))
}

pub fn read_stream(path: impl AsRef<Path>) -> Result<FeatureStream> {
    decode_stream(&fs::read(path)?)
}

/// Writes the stream and returns the number of bytes written.
pub fn write_stream(stream: &FeatureStream, path: impl AsRef<Path>) -> Result<u64> {
    let bytes = encode_stream(stream)?;
    fs::write(path, &bytes)?;
    Ok(bytes.len() as u64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feature(seed: u8, p: usize) -> LocalFeature {
        let bits = (0..p).map(|j| (j as u8).wrapping_mul(seed).is_multiple_of(3));
        LocalFeature::new(
            QuantizedKeypoint::new(seed as i32, 2 * seed as i32, 8, seed % 32).unwrap(),
            BinaryDescriptor::from_bits(bits),
        )
    }

    #[test]
    fn empty_stream_round_trips() {
        let s = FeatureStream::new(256);
        let bytes = encode_stream(&s).unwrap();
        assert_eq!(bytes.len(), 12);
        assert_eq!(decode_stream(&bytes).unwrap(), s);
    }

    #[test]
    fn one_empty_frame() {
        let mut s = FeatureStream::new(256);
        s.frames.push(FrameFeatures::new(0, vec![]));
        assert_eq!(encode_stream(&s).unwrap().len(), 12 + 8);
    }

    #[test]
    fn size_of_two_frames_of_three_features() {
        let mut s = FeatureStream::new(512);
        for n in 0..2 {
            s.frames.push(FrameFeatures::new(n, (0..3).map(|i| feature(i + 1, 512)).collect()));
        }
        // 12-byte header, 8 bytes per frame, 13 + 64 bytes per feature.
        assert_eq!(encode_stream(&s).unwrap().len(), 12 + 2 * 8 + 6 * (13 + 64));
    }

    #[test]
    fn bytes_round_trip_with_metadata() {
        let mut s = FeatureStream::new(20);
        s.metadata.insert("width".into(), "640".into());
        s.metadata.insert("height".into(), "480".into());
        s.frames.push(FrameFeatures::new(1, vec![feature(3, 20), feature(5, 20)]));
        let bytes = encode_stream(&s).unwrap();
        let back = decode_stream(&bytes).unwrap();
        assert_eq!(back, s);
        assert_eq!(encode_stream(&back).unwrap(), bytes);
    }

    #[test]
    fn errors_carry_offsets() {
        let mut s = FeatureStream::new(16);
        s.frames.push(FrameFeatures::new(0, vec![feature(1, 16)]));
        let bytes = encode_stream(&s).unwrap();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_stream(&bad), Err(Error::Format { offset: 0, .. })));

        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(decode_stream(&bad), Err(Error::Format { offset: 4, .. })));

        let truncated = &bytes[..bytes.len() - 1];
        assert!(matches!(decode_stream(truncated), Err(Error::Format { .. })));

        let mut bad = bytes.clone();
        bad.extend_from_slice(b"junk");
        assert!(matches!(decode_stream(&bad), Err(Error::Format { .. })));

        // Orientation byte of the single feature sits at 12 + 8 + 12.
        let mut bad = bytes;
        bad[32] = 40;
        assert!(matches!(decode_stream(&bad), Err(Error::Format { offset: 20, .. })));
    }
}
