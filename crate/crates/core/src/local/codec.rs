use std::sync::Arc;

use sha2::{Digest, Sha256};

use super::{
    CodingMode, EncoderConfig, FrameGeometry, LocalCodebook, StreamMode, SCALE_ESCAPE, SCALE_RAW_BITS,
};
use crate::entropy::{RangeDecoder, RangeEncoder};
use crate::error::{Error, Result};
use crate::feature::{FrameFeatures, LocalFeature, QuantizedKeypoint, ORIENTATION_BINS};
use crate::par;

/// One coded frame: a single range-coded payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedFrame {
    pub frame_index: u32,
    pub feature_count: u32,
    /// Feature count of the reference frame, when one was used.
    pub reference_count: Option<u32>,
    pub payload: Vec<u8>,
}

/// Per-feature rate split. Bits are the exact share of the payload consumed
/// while coding each component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureRate {
    pub mode: CodingMode,
    pub mode_bits: f64,
    /// Quantized location (INTRA) or displacement (INTER).
    pub location_bits: f64,
    pub identifier_bits: f64,
    pub descriptor_bits: f64,
    /// Modeled cost of coding the feature INTRA.
    pub intra_cost: f64,
    /// Modeled cost of coding it INTER, when a candidate reference existed.
    pub inter_cost: Option<f64>,
}

impl FeatureRate {
    pub fn total(&self) -> f64 {
        self.mode_bits + self.location_bits + self.identifier_bits + self.descriptor_bits
    }

    /// Modeled cost of the mode that was chosen.
    pub fn chosen_cost(&self) -> f64 {
        match self.mode {
            CodingMode::Intra => self.intra_cost,
            CodingMode::Inter => self.inter_cost.expect("inter mode implies a candidate"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRate {
    pub features: Vec<FeatureRate>,
    pub flush_bits: f64,
    pub payload_bits: u64,
}

impl FrameRate {
    pub fn feature_bits(&self) -> f64 {
        self.features.iter().map(FeatureRate::total).sum()
    }

    pub fn inter_count(&self) -> usize {
        self.features.iter().filter(|f| f.mode == CodingMode::Inter).count()
    }
}

/// Best reference for a feature: index into the reference frame, the search
/// cost `hamming + lambda * rate`, and the modeled rate of the reference
/// identifier plus displacement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceMatch {
    pub index: usize,
    pub cost: f64,
    pub hamming: u32,
    pub location_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Displacement {
    dx: i32,
    dy: i32,
    dscale: i32,
    dorientation: u8,
}

impl Displacement {
    fn between(current: &QuantizedKeypoint, reference: &QuantizedKeypoint) -> Self {
        Self {
            dx: current.x - reference.x,
            dy: current.y - reference.y,
            dscale: current.scale - reference.scale,
            dorientation: (current.orientation + ORIENTATION_BINS - reference.orientation) % ORIENTATION_BINS,
        }
    }

    fn apply(&self, reference: &QuantizedKeypoint) -> Result<QuantizedKeypoint> {
        QuantizedKeypoint::new(
            reference.x + self.dx,
            reference.y + self.dy,
            reference.scale + self.dscale,
            (reference.orientation + self.dorientation) % ORIENTATION_BINS,
        )
        .map_err(|e| Error::CorruptBitstream(e.to_string()))
    }
}

/// Number of bits of the fixed-length reference identifier.
pub(crate) fn identifier_bits(reference_count: usize) -> u32 {
    match reference_count {
        0 | 1 => 0,
        m => usize::BITS - (m - 1).leading_zeros(),
    }
}

struct Decision {
    mode: CodingMode,
    intra_cost: f64,
    inter: Option<(ReferenceMatch, f64)>,
}

/// Encoder/decoder bound to one codebook and configuration.
#[derive(Debug, Clone)]
pub struct LocalCodec {
    codebook: Arc<LocalCodebook>,
    config: EncoderConfig,
    digest: [u8; 32],
}

impl LocalCodec {
    pub fn new(codebook: Arc<LocalCodebook>, config: EncoderConfig) -> Result<Self> {
        codebook.validate()?;
        let p = codebook.descriptor_length();
        if config.k > p || config.k != codebook.k() {
            return Err(Error::Config(format!(
                "K = {} does not match codebook (K = {}, P = {p})",
                config.k,
                codebook.k()
            )));
        }
        if !(config.lambda.is_finite() && config.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda {} must be >= 0", config.lambda)));
        }
        if !codebook.inter.window.contains(&config.window) {
            return Err(Error::Config(format!(
                "search window {:?} exceeds the trained window {:?}",
                config.window, codebook.inter.window
            )));
        }
        let digest = config_digest(&codebook, &config);
        Ok(Self {
            codebook,
            config,
            digest,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn codebook(&self) -> &Arc<LocalCodebook> {
        &self.codebook
    }

    /// Hash of codebook, K, lambda and window.
    pub fn digest(&self) -> [u8; 32] {
        self.digest
    }

    pub fn with_geometry(&self, geometry: FrameGeometry) -> Result<Self> {
        Self::new(self.codebook.clone(), EncoderConfig { geometry, ..self.config })
    }

    pub fn with_mode(&self, mode: StreamMode) -> Result<Self> {
        Self::new(self.codebook.clone(), EncoderConfig { mode, ..self.config })
    }

    fn selection(&self) -> &[usize] {
        &self.codebook.selection.order[..self.config.k]
    }

    /// Projects and raster-sorts a frame of full-length descriptors.
    pub fn project(&self, frame: &FrameFeatures) -> Result<FrameFeatures> {
        let p = self.codebook.descriptor_length();
        if let Some(f) = frame.features.iter().find(|f| f.descriptor.len() != p) {
            return Err(Error::Stream(format!(
                "descriptor length {} does not match P = {p}",
                f.descriptor.len()
            )));
        }
        super::project_frame(frame, self.selection(), self.config.k)
    }

    fn intra_location_cost(&self, kp: &QuantizedKeypoint) -> f64 {
        let intra = &self.codebook.intra;
        let g = self.config.geometry;
        let scale_sym = (kp.scale as usize).min(SCALE_ESCAPE);
        let escape = if scale_sym == SCALE_ESCAPE { SCALE_RAW_BITS as f64 } else { 0.0 };
        g.x_bits as f64
            + g.y_bits as f64
            + intra.scale.cost(scale_sym)
            + escape
            + intra.orientation.cost(kp.orientation as usize)
    }

    fn in_window(&self, d: &Displacement) -> bool {
        let w = self.config.window;
        d.dx.unsigned_abs() <= w.dx && d.dy.unsigned_abs() <= w.dy && d.dscale.unsigned_abs() <= w.dscale
    }

    fn displacement_cost(&self, d: &Displacement) -> f64 {
        let inter = &self.codebook.inter;
        let w = inter.window;
        inter.dx.cost((d.dx + w.dx as i32) as usize)
            + inter.dy.cost((d.dy + w.dy as i32) as usize)
            + inter.dscale.cost((d.dscale + w.dscale as i32) as usize)
            + inter.dorientation.cost(d.dorientation as usize)
    }

    /// Reference search over the previous frame: among features inside the
    /// search window, minimize Hamming distance plus lambda times the
    /// modeled identifier and displacement rate. Ties go to the lowest index.
    pub fn find_reference(&self, feature: &LocalFeature, reference: &FrameFeatures) -> Option<ReferenceMatch> {
        let id_bits = identifier_bits(reference.len()) as f64;
        let mut best: Option<ReferenceMatch> = None;
        for (index, r) in reference.features.iter().enumerate() {
            let d = Displacement::between(&feature.keypoint, &r.keypoint);
            if !self.in_window(&d) {
                continue;
            }
            let hamming = feature.descriptor.hamming(&r.descriptor);
            let location_rate = id_bits + self.displacement_cost(&d);
            let cost = hamming as f64 + self.config.lambda * location_rate;
            if best.is_none_or(|b| cost < b.cost) {
                best = Some(ReferenceMatch {
                    index,
                    cost,
                    hamming,
                    location_rate,
                });
            }
        }
        best
    }

    fn decide(&self, f: &LocalFeature, reference: Option<&FrameFeatures>) -> Result<Decision> {
        let intra_cost = self.intra_location_cost(&f.keypoint) + self.codebook.intra.permutation.cost(&f.descriptor)?;
        let inter = match reference {
            Some(r) => self
                .find_reference(f, r)
                .map(|m| {
                    let residual = f.descriptor.xor(&r.features[m.index].descriptor);
                    self.codebook
                        .inter
                        .permutation
                        .cost(&residual)
                        .map(|bits| (m, m.location_rate + bits))
                })
                .transpose()?,
            None => None,
        };
        let mode = match (self.config.mode, inter) {
            (StreamMode::Intra, _) | (_, None) => CodingMode::Intra,
            (StreamMode::Inter, Some(_)) => CodingMode::Inter,
            (StreamMode::Auto, Some((_, j_inter))) if j_inter < intra_cost => CodingMode::Inter,
            (StreamMode::Auto, Some(_)) => CodingMode::Intra,
        };
        Ok(Decision {
            mode,
            intra_cost,
            inter,
        })
    }

    /// For a projected, sorted frame: the reference each feature would be
    /// predicted from, or `None` where it would be coded INTRA.
    pub(crate) fn inter_choices(&self, frame: &FrameFeatures, reference: Option<&FrameFeatures>) -> Result<Vec<Option<ReferenceMatch>>> {
        self.check_reference(reference)?;
        let reference = reference.filter(|_| self.config.mode != StreamMode::Intra);
        par::map(&frame.features, |f| self.decide(f, reference))
            .into_iter()
            .map(|d| {
                let d = d?;
                Ok(match d.mode {
                    CodingMode::Inter => d.inter.map(|(m, _)| m),
                    CodingMode::Intra => None,
                })
            })
            .collect()
    }

    fn check_reference(&self, reference: Option<&FrameFeatures>) -> Result<()> {
        if let Some(r) = reference {
            if let Some(f) = r.features.iter().find(|f| f.descriptor.len() != self.config.k) {
                return Err(Error::Stream(format!(
                    "reference descriptor length {} does not match K = {}",
                    f.descriptor.len(),
                    self.config.k
                )));
            }
        }
        Ok(())
    }

    /// Encodes a frame of full-length descriptors against the decoded previous
    /// frame (K-dexel descriptors, raster order), if any.
    pub fn encode_frame(&self, frame: &FrameFeatures, reference: Option<&FrameFeatures>) -> Result<(EncodedFrame, FrameRate)> {
        let projected = self.project(frame)?;
        self.encode_projected(&projected, reference)
    }

    /// Like `encode_frame` for a frame that is already projected and sorted.
    pub fn encode_projected(&self, frame: &FrameFeatures, reference: Option<&FrameFeatures>) -> Result<(EncodedFrame, FrameRate)> {
        self.check_reference(reference)?;
        if let Some(f) = frame.features.iter().find(|f| f.descriptor.len() != self.config.k) {
            return Err(Error::Stream(format!(
                "descriptor length {} does not match K = {}",
                f.descriptor.len(),
                self.config.k
            )));
        }
        if !frame.is_raster_sorted() {
            return Err(Error::Stream("features must be in raster order".into()));
        }
        let g = self.config.geometry;
        if let Some(f) = frame.features.iter().find(|f| !g.fits(f.keypoint.x, f.keypoint.y)) {
            return Err(Error::Stream(format!(
                "keypoint ({}, {}) outside the {}x{}-bit frame geometry",
                f.keypoint.x, f.keypoint.y, g.x_bits, g.y_bits
            )));
        }
        let reference = reference.filter(|_| self.config.mode != StreamMode::Intra);
        let flagged = reference.is_some_and(|r| !r.is_empty());

        let decisions = par::map(&frame.features, |f| self.decide(f, reference));
        let mut enc = RangeEncoder::new();
        let mut rates = Vec::with_capacity(frame.len());
        for (f, decision) in frame.features.iter().zip(decisions) {
            let decision = decision?;
            let mut mark = enc.bits();
            let mut lap = |enc: &RangeEncoder| {
                let now = enc.bits();
                let d = now - mark;
                mark = now;
                d
            };
            if flagged {
                enc.encode_direct((decision.mode == CodingMode::Inter) as u64, 1);
            }
            let mode_bits = lap(&enc);
            let (location_bits, identifier_bits, descriptor_bits);
            match decision.mode {
                CodingMode::Intra => {
                    self.encode_intra_location(&f.keypoint, &mut enc)?;
                    location_bits = lap(&enc);
                    identifier_bits = 0.0;
                    self.codebook.intra.permutation.encode(&f.descriptor, &mut enc)?;
                    descriptor_bits = lap(&enc);
                }
                CodingMode::Inter => {
                    let (m, _) = decision.inter.expect("inter mode implies a match");
                    let r = &reference.expect("inter mode implies a reference").features[m.index];
                    enc.encode_direct(m.index as u64, identifier_bits_of(reference));
                    identifier_bits = lap(&enc);
                    self.encode_displacement(&Displacement::between(&f.keypoint, &r.keypoint), &mut enc)?;
                    location_bits = lap(&enc);
                    let residual = f.descriptor.xor(&r.descriptor);
                    self.codebook.inter.permutation.encode(&residual, &mut enc)?;
                    descriptor_bits = lap(&enc);
                }
            }
            rates.push(FeatureRate {
                mode: decision.mode,
                mode_bits,
                location_bits,
                identifier_bits,
                descriptor_bits,
                intra_cost: decision.intra_cost,
                inter_cost: decision.inter.map(|(_, j)| j),
            });
        }
        let flush_bits = enc.flush_bits();
        let payload = enc.finish();
        let rate = FrameRate {
            features: rates,
            flush_bits,
            payload_bits: 8 * payload.len() as u64,
        };
        let encoded = EncodedFrame {
            frame_index: frame.frame_index,
            feature_count: frame.len() as u32,
            reference_count: reference.map(|r| r.len() as u32),
            payload,
        };
        Ok((encoded, rate))
    }

    fn encode_intra_location(&self, kp: &QuantizedKeypoint, enc: &mut RangeEncoder) -> Result<()> {
        let intra = &self.codebook.intra;
        let g = self.config.geometry;
        enc.encode_direct(kp.x as u64, g.x_bits as u32);
        enc.encode_direct(kp.y as u64, g.y_bits as u32);
        let s = (kp.scale as usize).min(SCALE_ESCAPE);
        enc.encode(&intra.scale, s)?;
        if s == SCALE_ESCAPE {
            enc.encode_direct(kp.scale as u64, SCALE_RAW_BITS);
        }
        enc.encode(&intra.orientation, kp.orientation as usize)
    }

    fn encode_displacement(&self, d: &Displacement, enc: &mut RangeEncoder) -> Result<()> {
        let inter = &self.codebook.inter;
        let w = inter.window;
        enc.encode(&inter.dx, (d.dx + w.dx as i32) as usize)?;
        enc.encode(&inter.dy, (d.dy + w.dy as i32) as usize)?;
        enc.encode(&inter.dscale, (d.dscale + w.dscale as i32) as usize)?;
        enc.encode(&inter.dorientation, d.dorientation as usize)
    }

    /// Reconstructs the K-dexel features of a frame. `reference` must be the
    /// decoded previous frame whenever the encoder used one.
    pub fn decode_frame(&self, encoded: &EncodedFrame, reference: Option<&FrameFeatures>) -> Result<FrameFeatures> {
        let reference = match encoded.reference_count {
            None => None,
            Some(n) => {
                let r = reference.ok_or_else(|| Error::Stream("frame was inter coded but no reference was given".into()))?;
                if r.len() != n as usize {
                    return Err(Error::Stream(format!(
                        "reference has {} features, encoder used {n}",
                        r.len()
                    )));
                }
                self.check_reference(Some(r))?;
                Some(r)
            }
        };
        let flagged = self.config.mode != StreamMode::Intra && reference.is_some_and(|r| !r.is_empty());
        let mut dec = RangeDecoder::new(&encoded.payload)?;
        let mut features = Vec::with_capacity(encoded.feature_count as usize);
        for _ in 0..encoded.feature_count {
            let inter = flagged && dec.decode_direct(1)? == 1;
            let feature = if inter {
                let r = reference.expect("flag implies reference");
                let index = dec.decode_direct(identifier_bits_of(Some(r)))? as usize;
                let base = r
                    .features
                    .get(index)
                    .ok_or_else(|| Error::CorruptBitstream(format!("reference index {index} out of range")))?;
                let keypoint = self.decode_displacement(&mut dec)?.apply(&base.keypoint)?;
                let residual = self.codebook.inter.permutation.decode(&mut dec)?;
                LocalFeature::new(keypoint, residual.xor(&base.descriptor))
            } else {
                let keypoint = self.decode_intra_location(&mut dec)?;
                LocalFeature::new(keypoint, self.codebook.intra.permutation.decode(&mut dec)?)
            };
            features.push(feature);
        }
        dec.finish()?;
        Ok(FrameFeatures::new(encoded.frame_index, features))
    }

    fn decode_intra_location(&self, dec: &mut RangeDecoder<'_>) -> Result<QuantizedKeypoint> {
        let intra = &self.codebook.intra;
        let g = self.config.geometry;
        let x = dec.decode_direct(g.x_bits as u32)? as i32;
        let y = dec.decode_direct(g.y_bits as u32)? as i32;
        let mut scale = dec.decode(&intra.scale)? as i32;
        if scale as usize == SCALE_ESCAPE {
            scale = dec.decode_direct(SCALE_RAW_BITS)? as i32;
        }
        let orientation = dec.decode(&intra.orientation)? as u8;
        QuantizedKeypoint::new(x, y, scale, orientation).map_err(|e| Error::CorruptBitstream(e.to_string()))
    }

    fn decode_displacement(&self, dec: &mut RangeDecoder<'_>) -> Result<Displacement> {
        let inter = &self.codebook.inter;
        let w = inter.window;
        Ok(Displacement {
            dx: dec.decode(&inter.dx)? as i32 - w.dx as i32,
            dy: dec.decode(&inter.dy)? as i32 - w.dy as i32,
            dscale: dec.decode(&inter.dscale)? as i32 - w.dscale as i32,
            dorientation: dec.decode(&inter.dorientation)? as u8,
        })
    }
}

fn identifier_bits_of(reference: Option<&FrameFeatures>) -> u32 {
    identifier_bits(reference.map_or(0, |r| r.len()))
}

fn config_digest(codebook: &LocalCodebook, config: &EncoderConfig) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(codebook.to_codebook().to_bytes());
    h.update((config.k as u32).to_le_bytes());
    h.update(config.lambda.to_le_bytes());
    h.update(config.window.dx.to_le_bytes());
    h.update(config.window.dy.to_le_bytes());
    h.update(config.window.dscale.to_le_bytes());
    h.finalize().into()
}
