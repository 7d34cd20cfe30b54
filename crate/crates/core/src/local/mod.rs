//! Intra- and inter-frame coding of local feature streams.
//!
//! Each frame is coded as one range-coded payload. Features are emitted in
//! raster order; a feature is either coded on its own (INTRA: quantized
//! location plus the descriptor under the intra coding order) or predicted
//! from one feature of the previous decoded frame (INTER: reference index,
//! keypoint displacement, and the XOR residual under the inter coding order).

mod bitstream;
mod codec;
mod train;

use std::sync::Arc;

pub use bitstream::{decode_local_stream, encode_local_stream, StreamRate, LOCAL_MAGIC};
pub use codec::{EncodedFrame, FeatureRate, FrameRate, LocalCodec, ReferenceMatch};
pub use train::{train_local_codebook, LocalTrainingConfig};

use crate::boosting::DexelRanking;
use crate::codebook::{Codebook, Section, SectionKind};
use crate::entropy::{CodingPermutation, FrequencyTable};
use crate::error::{Error, Result};
use crate::feature::{BinaryDescriptor, FeatureStream, FrameFeatures, LocalFeature, ORIENTATION_BINS};

pub const DEFAULT_LAMBDA: f64 = 1.0;
/// Scale symbols above this are sent as an escape plus raw bits.
pub const SCALE_ESCAPE: usize = 255;
pub const SCALE_ALPHABET: usize = SCALE_ESCAPE + 1;
pub(crate) const SCALE_RAW_BITS: u32 = 31;

/// Target descriptor sizes used in rate sweeps.
pub const K_GRID: [usize; 7] = [512, 256, 128, 64, 32, 16, 8];

/// Candidate neighbourhood for reference search, in quantized units.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchWindow {
    pub dx: u32,
    pub dy: u32,
    pub dscale: u32,
}

impl Default for SearchWindow {
    fn default() -> Self {
        Self {
            dx: 64,
            dy: 64,
            dscale: 4,
        }
    }
}

impl SearchWindow {
    pub fn contains(&self, other: &SearchWindow) -> bool {
        other.dx <= self.dx && other.dy <= self.dy && other.dscale <= self.dscale
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamMode {
    Intra,
    Inter,
    Auto,
}

impl StreamMode {
    pub(crate) fn to_byte(self) -> u8 {
        match self {
            StreamMode::Intra => 0,
            StreamMode::Inter => 1,
            StreamMode::Auto => 2,
        }
    }

    pub(crate) fn from_byte(b: u8) -> Option<Self> {
        Some(match b {
            0 => StreamMode::Intra,
            1 => StreamMode::Inter,
            2 => StreamMode::Auto,
            _ => return None,
        })
    }
}

impl std::str::FromStr for StreamMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "intra" => Ok(StreamMode::Intra),
            "inter" => Ok(StreamMode::Inter),
            "auto" => Ok(StreamMode::Auto),
            _ => Err(Error::Config(format!("unknown mode {s:?} (intra|inter|auto)"))),
        }
    }
}

impl std::fmt::Display for StreamMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StreamMode::Intra => "intra",
            StreamMode::Inter => "inter",
            StreamMode::Auto => "auto",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CodingMode {
    Intra,
    Inter,
}

/// Bit widths of the fixed-length x and y codes used by intra location coding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameGeometry {
    pub x_bits: u8,
    pub y_bits: u8,
}

fn bits_for(max_value: u64) -> u8 {
    (64 - max_value.leading_zeros()) as u8
}

impl FrameGeometry {
    /// Geometry for a frame of `width x height` pixels.
    pub fn from_size(width: u32, height: u32) -> Self {
        Self {
            x_bits: bits_for((4 * width as u64).saturating_sub(1)),
            y_bits: bits_for((4 * height as u64).saturating_sub(1)),
        }
    }

    /// Geometry from the stream's recorded frame size, widened if any
    /// keypoint falls outside it.
    pub fn for_stream(stream: &FeatureStream) -> Self {
        let (mut mx, mut my) = stream
            .frame_size()
            .map(|(w, h)| ((4 * w as u64).saturating_sub(1), (4 * h as u64).saturating_sub(1)))
            .unwrap_or((0, 0));
        for f in stream.frames.iter().flat_map(|f| &f.features) {
            mx = mx.max(f.keypoint.x as u64);
            my = my.max(f.keypoint.y as u64);
        }
        Self {
            x_bits: bits_for(mx),
            y_bits: bits_for(my),
        }
    }

    pub fn fits(&self, x: i32, y: i32) -> bool {
        (x as u64) >> self.x_bits == 0 && (y as u64) >> self.y_bits == 0
    }
}

impl Default for FrameGeometry {
    fn default() -> Self {
        Self::from_size(640, 480)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderConfig {
    pub k: usize,
    /// Bits charged per unit of Hamming distance during reference search.
    pub lambda: f64,
    pub window: SearchWindow,
    pub mode: StreamMode,
    pub geometry: FrameGeometry,
}

impl EncoderConfig {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            lambda: DEFAULT_LAMBDA,
            window: SearchWindow::default(),
            mode: StreamMode::Auto,
            geometry: FrameGeometry::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntraLocalCodebook {
    /// Length of the descriptors before dexel selection.
    pub descriptor_length: usize,
    pub permutation: CodingPermutation,
    pub scale: FrequencyTable,
    pub orientation: FrequencyTable,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterLocalCodebook {
    pub descriptor_length: usize,
    pub window: SearchWindow,
    pub permutation: CodingPermutation,
    pub dx: FrequencyTable,
    pub dy: FrequencyTable,
    pub dscale: FrequencyTable,
    pub dorientation: FrequencyTable,
}

/// Everything encoder and decoder must share for one target size K.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalCodebook {
    pub selection: DexelRanking,
    pub intra: IntraLocalCodebook,
    pub inter: InterLocalCodebook,
}

impl LocalCodebook {
    pub fn descriptor_length(&self) -> usize {
        self.intra.descriptor_length
    }

    pub fn k(&self) -> usize {
        self.intra.permutation.len()
    }

    /// Codebook with fair models everywhere, for bootstrapping training.
    pub fn uninformed(descriptor_length: usize, selection: DexelRanking, k: usize, window: SearchWindow) -> Result<Self> {
        let uniform = |a: usize| FrequencyTable::uniform(a);
        Ok(Self {
            selection,
            intra: IntraLocalCodebook {
                descriptor_length,
                permutation: CodingPermutation::identity(k),
                scale: uniform(SCALE_ALPHABET)?,
                orientation: uniform(ORIENTATION_BINS as usize)?,
            },
            inter: InterLocalCodebook {
                descriptor_length,
                window,
                permutation: CodingPermutation::identity(k),
                dx: uniform(2 * window.dx as usize + 1)?,
                dy: uniform(2 * window.dy as usize + 1)?,
                dscale: uniform(2 * window.dscale as usize + 1)?,
                dorientation: uniform(ORIENTATION_BINS as usize)?,
            },
        })
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.descriptor_length();
        let k = self.k();
        if self.inter.descriptor_length != p || self.inter.permutation.len() != k {
            return Err(Error::Config("intra and inter sections disagree on P or K".into()));
        }
        if self.selection.order.len() < k || self.selection.order.iter().any(|&j| j >= p) {
            return Err(Error::Config(format!(
                "dexel selection must list at least {k} dexels below {p}"
            )));
        }
        let w = self.inter.window;
        let expect = [
            (&self.inter.dx, 2 * w.dx as usize + 1),
            (&self.inter.dy, 2 * w.dy as usize + 1),
            (&self.inter.dscale, 2 * w.dscale as usize + 1),
            (&self.inter.dorientation, ORIENTATION_BINS as usize),
            (&self.intra.orientation, ORIENTATION_BINS as usize),
            (&self.intra.scale, SCALE_ALPHABET),
        ];
        if expect.iter().any(|(t, a)| t.len() != *a) {
            return Err(Error::Config("location table sizes do not match the window".into()));
        }
        Ok(())
    }

    pub fn to_codebook(&self) -> Codebook {
        Codebook::new(vec![
            Section::DexelSelection {
                descriptor_length: self.descriptor_length(),
                ranking: self.selection.clone(),
            },
            Section::IntraLocal(self.intra.clone()),
            Section::InterLocal(self.inter.clone()),
        ])
    }

    pub fn from_codebook(cb: &Codebook) -> Result<Self> {
        let missing = |what: &str| Error::Config(format!("codebook has no {what} section"));
        let Some(Section::IntraLocal(intra)) = cb.find(SectionKind::IntraLocal) else {
            return Err(missing("intra-local"));
        };
        let Some(Section::InterLocal(inter)) = cb.find(SectionKind::InterLocal) else {
            return Err(missing("inter-local"));
        };
        let selection = match cb.find(SectionKind::DexelSelection) {
            Some(Section::DexelSelection { ranking, .. }) => ranking.clone(),
            _ => DexelRanking::identity(intra.descriptor_length),
        };
        let book = Self {
            selection,
            intra: intra.clone(),
            inter: inter.clone(),
        };
        book.validate()?;
        Ok(book)
    }

    pub fn into_shared(self) -> Arc<Self> {
        Arc::new(self)
    }
}

/// Keeps the first `k` dexels of `selection`, in selection order.
pub fn select_dexels(descriptor: &BinaryDescriptor, selection: &[usize], k: usize) -> Result<BinaryDescriptor> {
    if k > selection.len() {
        return Err(Error::Config(format!(
            "K = {k} exceeds the {} selected dexels",
            selection.len()
        )));
    }
    if let Some(&j) = selection[..k].iter().find(|&&j| j >= descriptor.len()) {
        return Err(Error::Config(format!(
            "selected dexel {j} outside descriptor of length {}",
            descriptor.len()
        )));
    }
    Ok(descriptor.gather(&selection[..k]))
}

/// Projects every descriptor onto the first `k` selected dexels and sorts
/// the features into raster order: exactly what the decoder reconstructs.
pub fn project_frame(frame: &FrameFeatures, selection: &[usize], k: usize) -> Result<FrameFeatures> {
    let features = frame
        .features
        .iter()
        .map(|f| Ok(LocalFeature::new(f.keypoint, select_dexels(&f.descriptor, selection, k)?)))
        .collect::<Result<Vec<_>>>()?;
    let mut out = FrameFeatures::new(frame.frame_index, features);
    out.sort_raster();
    Ok(out)
}

pub fn project_stream(stream: &FeatureStream, selection: &[usize], k: usize) -> Result<FeatureStream> {
    let mut out = FeatureStream::new(k);
    out.metadata = stream.metadata.clone();
    out.frames = stream
        .frames
        .iter()
        .map(|f| project_frame(f, selection, k))
        .collect::<Result<_>>()?;
    Ok(out)
}
