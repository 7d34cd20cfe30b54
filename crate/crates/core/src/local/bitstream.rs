//! "BFE1" encoded local feature stream.
//!
//! ```text
//! header : "BFE1" | u16 version | u16 P | u16 K | u8 mode | u8 x_bits | u8 y_bits | u8 0
//!          | f64 lambda | u32 dx | u32 dy | u32 dscale | 32-byte config digest
//!          | u32 meta_count | meta_count x (u16 key_len | key | u32 val_len | val)
//!          | u32 frame_count
//! chunk  : u32 frame_index | u32 M | u32 reference_count (0xFFFFFFFF = none)
//!          | u32 payload_len | payload
//! ```
//!
//! The digest covers the codebook bytes, K, lambda and the search window;
//! decoding with a different codebook is refused.

use std::collections::BTreeMap;
use std::sync::Arc;

use super::codec::{EncodedFrame, FrameRate, LocalCodec};
use super::{CodingMode, EncoderConfig, FrameGeometry, LocalCodebook, SearchWindow, StreamMode};
use crate::error::{Error, Result};
use crate::feature::{FeatureStream, FrameFeatures};
use crate::io::ByteReader;

pub const LOCAL_MAGIC: &[u8; 4] = b"BFE1";
const VERSION: u16 = 1;
const NO_REFERENCE: u32 = u32::MAX;
const CHUNK_HEADER_BYTES: u64 = 16;

/// Rate report for a whole encoded stream.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamRate {
    pub frames: Vec<FrameRate>,
    pub header_bytes: u64,
    pub total_bytes: u64,
}

impl StreamRate {
    pub fn feature_count(&self) -> usize {
        self.frames.iter().map(|f| f.features.len()).sum()
    }

    /// Range-coded payload bits over all frames.
    pub fn payload_bits(&self) -> u64 {
        self.frames.iter().map(|f| f.payload_bits).sum()
    }

    /// Payload bits per feature; container framing excluded.
    pub fn bits_per_feature(&self) -> f64 {
        self.payload_bits() as f64 / self.feature_count().max(1) as f64
    }

    /// Mean bits per feature spent on the given component selector.
    pub fn mean_bits(&self, component: impl Fn(&super::FeatureRate) -> f64) -> f64 {
        let n = self.feature_count().max(1) as f64;
        self.frames.iter().flat_map(|f| &f.features).map(component).sum::<f64>() / n
    }

    pub fn inter_fraction(&self) -> f64 {
        let inter = self
            .frames
            .iter()
            .flat_map(|f| &f.features)
            .filter(|f| f.mode == CodingMode::Inter)
            .count();
        inter as f64 / self.feature_count().max(1) as f64
    }
}

fn put_u16(out: &mut Vec<u8>, v: u16) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn write_header(out: &mut Vec<u8>, codec: &LocalCodec, frames: usize, metadata: &BTreeMap<String, String>) -> Result<()> {
    let cfg = codec.config();
    out.extend_from_slice(LOCAL_MAGIC);
    put_u16(out, VERSION);
    put_u16(out, codec.codebook().descriptor_length() as u16);
    put_u16(out, cfg.k as u16);
    out.extend_from_slice(&[cfg.mode.to_byte(), cfg.geometry.x_bits, cfg.geometry.y_bits, 0]);
    out.extend_from_slice(&cfg.lambda.to_le_bytes());
    put_u32(out, cfg.window.dx);
    put_u32(out, cfg.window.dy);
    put_u32(out, cfg.window.dscale);
    out.extend_from_slice(&codec.digest());
    put_u32(out, metadata.len() as u32);
    for (k, v) in metadata {
        if k.len() > u16::MAX as usize {
            return Err(Error::Stream(format!("metadata key too long: {}", k.len())));
        }
        put_u16(out, k.len() as u16);
        out.extend_from_slice(k.as_bytes());
        put_u32(out, v.len() as u32);
        out.extend_from_slice(v.as_bytes());
    }
    put_u32(out, frames as u32);
    Ok(())
}

/// Encodes a full-length stream. Frame geometry is derived from the stream;
/// each frame is predicted from the decoded previous frame.
pub fn encode_local_stream(codec: &LocalCodec, stream: &FeatureStream) -> Result<(Vec<u8>, StreamRate)> {
    stream.validate()?;
    if stream.descriptor_length != codec.codebook().descriptor_length() {
        return Err(Error::Stream(format!(
            "stream has P = {}, codebook expects {}",
            stream.descriptor_length,
            codec.codebook().descriptor_length()
        )));
    }
    let codec = codec.with_geometry(FrameGeometry::for_stream(stream))?;
    let mut out = Vec::new();
    write_header(&mut out, &codec, stream.frames.len(), &stream.metadata)?;
    let header_bytes = out.len() as u64;
    let mut rates = Vec::with_capacity(stream.frames.len());
    let mut previous: Option<FrameFeatures> = None;
    for frame in &stream.frames {
        let projected = codec.project(frame)?;
        let (encoded, rate) = codec.encode_projected(&projected, previous.as_ref())?;
        write_chunk(&mut out, &encoded);
        rates.push(rate);
        // Lossless coding: the decoder's reconstruction is the projection.
        previous = Some(projected);
    }
    let total_bytes = out.len() as u64;
    Ok((
        out,
        StreamRate {
            frames: rates,
            header_bytes,
            total_bytes,
        },
    ))
}

fn write_chunk(out: &mut Vec<u8>, e: &EncodedFrame) {
    put_u32(out, e.frame_index);
    put_u32(out, e.feature_count);
    put_u32(out, e.reference_count.unwrap_or(NO_REFERENCE));
    put_u32(out, e.payload.len() as u32);
    out.extend_from_slice(&e.payload);
}

/// Parsed stream header plus the codec it describes.
struct Header {
    codec: LocalCodec,
    metadata: BTreeMap<String, String>,
    frames: u32,
}

fn read_header(r: &mut ByteReader<'_>, codebook: Arc<LocalCodebook>) -> Result<Header> {
    r.expect_magic(LOCAL_MAGIC)?;
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let p = r.u16()? as usize;
    let k = r.u16()? as usize;
    let at = r.offset();
    let mode = StreamMode::from_byte(r.u8()?).ok_or_else(|| Error::format(at, "unknown mode"))?;
    let geometry = FrameGeometry {
        x_bits: r.u8()?,
        y_bits: r.u8()?,
    };
    if geometry.x_bits > 31 || geometry.y_bits > 31 {
        return Err(Error::format(at + 1, "geometry exceeds 31 bits"));
    }
    r.u8()?;
    let lambda = r.f64()?;
    let window = SearchWindow {
        dx: r.u32()?,
        dy: r.u32()?,
        dscale: r.u32()?,
    };
    let digest_at = r.offset();
    let digest: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
    if p != codebook.descriptor_length() || k != codebook.k() {
        return Err(Error::Stream(format!(
            "stream coded with P = {p}, K = {k}; codebook has P = {}, K = {}",
            codebook.descriptor_length(),
            codebook.k()
        )));
    }
    let codec = LocalCodec::new(
        codebook,
        EncoderConfig {
            k,
            lambda,
            window,
            mode,
            geometry,
        },
    )?;
    if codec.digest() != digest {
        return Err(Error::Stream(format!(
            "config digest at byte {digest_at} does not match the codebook"
        )));
    }
    let count = r.u32()?;
    let mut metadata = BTreeMap::new();
    for _ in 0..count {
        let at = r.offset();
        let klen = r.u16()? as usize;
        let key = String::from_utf8(r.take(klen)?.to_vec()).map_err(|_| Error::format(at, "metadata key is not UTF-8"))?;
        let vlen = r.u32()? as usize;
        let val = String::from_utf8(r.take(vlen)?.to_vec()).map_err(|_| Error::format(at, "metadata value is not UTF-8"))?;
        metadata.insert(key, val);
    }
    let frames = r.u32()?;
    Ok(Header { codec, metadata, frames })
}

fn read_chunk(r: &mut ByteReader<'_>) -> Result<EncodedFrame> {
    let frame_index = r.u32()?;
    let feature_count = r.u32()?;
    let reference = r.u32()?;
    let len = r.u32()? as usize;
    let payload = r.take(len)?.to_vec();
    Ok(EncodedFrame {
        frame_index,
        feature_count,
        reference_count: (reference != NO_REFERENCE).then_some(reference),
        payload,
    })
}

/// Decodes a BFE1 stream into K-dexel features.
pub fn decode_local_stream(bytes: &[u8], codebook: Arc<LocalCodebook>) -> Result<FeatureStream> {
    let mut r = ByteReader::new(bytes);
    let header = read_header(&mut r, codebook)?;
    let mut stream = FeatureStream::new(header.codec.config().k);
    stream.metadata = header.metadata;
    for _ in 0..header.frames {
        let encoded = read_chunk(&mut r)?;
        let frame = header.codec.decode_frame(&encoded, stream.frames.last())?;
        stream.frames.push(frame);
    }
    r.finish()?;
    Ok(stream)
}

impl StreamRate {
    /// Bytes of chunk framing (everything outside header and payloads).
    pub fn framing_bytes(&self) -> u64 {
        CHUNK_HEADER_BYTES * self.frames.len() as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boosting::DexelRanking;
    use crate::feature::{synth_stream, SynthConfig};

    fn setup() -> (LocalCodec, FeatureStream) {
        let cfg = SynthConfig {
            descriptor_length: 64,
            frames: 4,
            min_features: 10,
            max_features: 20,
            seed: 3,
            ..SynthConfig::default()
        };
        let stream = synth_stream(&cfg).unwrap();
        let book = LocalCodebook::uninformed(64, DexelRanking::identity(64), 32, SearchWindow::default()).unwrap();
        let codec = LocalCodec::new(Arc::new(book), EncoderConfig::new(32)).unwrap();
        (codec, stream)
    }

    #[test]
    fn round_trip_and_sizes() {
        let (codec, stream) = setup();
        let (bytes, rate) = encode_local_stream(&codec, &stream).unwrap();
        assert_eq!(rate.total_bytes, bytes.len() as u64);
        assert_eq!(
            rate.header_bytes + rate.framing_bytes() + rate.payload_bits() / 8,
            rate.total_bytes
        );
        let decoded = decode_local_stream(&bytes, codec.codebook().clone()).unwrap();
        let expected = crate::local::project_stream(&stream, &codec.codebook().selection.order, 32).unwrap();
        assert_eq!(decoded, expected);
    }

    #[test]
    fn wrong_codebook_is_refused() {
        let (codec, stream) = setup();
        let (bytes, _) = encode_local_stream(&codec, &stream).unwrap();
        let mut other = (**codec.codebook()).clone();
        other.selection.order.swap(0, 1);
        assert!(matches!(decode_local_stream(&bytes, Arc::new(other)), Err(Error::Stream(_))));
    }

    #[test]
    fn truncation_is_an_error() {
        let (codec, stream) = setup();
        let (bytes, _) = encode_local_stream(&codec, &stream).unwrap();
        for cut in [3, 40, bytes.len() - 1] {
            assert!(decode_local_stream(&bytes[..cut], codec.codebook().clone()).is_err());
        }
    }
}
