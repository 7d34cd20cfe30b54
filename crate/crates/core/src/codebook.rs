//! "BFCB" codebook sidecar shared by encoder and decoder.
//!
//! ```text
//! file     : "BFCB" | u16 version | u16 section_count | sections
//! section  : u8 kind | u32 payload_len | payload
//! kind     : 0 intra-local, 1 inter-local, 2 intra-bovw, 3 inter-bovw,
//!            4 dexel-selection
//! perm     : u16 K | K x u16 order | u16 freq0(first) | (K-1) x (u16 freq0|prev=0, u16 freq0|prev=1)
//! table    : u32 A | A x u16 freq            (frequencies sum to 65536)
//! ctable   : u32 A | A x table               (row = context symbol)
//!
//! intra-local     : u16 P | u16 K | perm | table(scale) | table(orientation)
//! inter-local     : u16 P | u16 K | u32 dx | u32 dy | u32 dscale | perm
//!                   | table(dx) | table(dy) | table(dscale) | table(dorientation)
//! intra-bovw      : u32 V | f64 delta | table
//! inter-bovw      : u32 V | f64 delta | ctable
//! dexel-selection : u16 P | u16 count | count x u16 dexel | count x f64 score
//! ```
//!
//! Little-endian throughout.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::boosting::DexelRanking;
use crate::bovw::{InterBovwCodebook, IntraBovwCodebook};
use crate::entropy::{BitModel, CodingPermutation, ConditionalTable, FrequencyTable};
use crate::error::{Error, Result};
use crate::io::ByteReader;
use crate::local::{InterLocalCodebook, IntraLocalCodebook, SearchWindow};

pub const MAGIC: &[u8; 4] = b"BFCB";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SectionKind {
    IntraLocal = 0,
    InterLocal = 1,
    IntraBovw = 2,
    InterBovw = 3,
    DexelSelection = 4,
}

impl SectionKind {
    fn from_byte(b: u8) -> Option<Self> {
        Some(match b {
            0 => Self::IntraLocal,
            1 => Self::InterLocal,
            2 => Self::IntraBovw,
            3 => Self::InterBovw,
            4 => Self::DexelSelection,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Section {
    IntraLocal(IntraLocalCodebook),
    InterLocal(InterLocalCodebook),
    IntraBovw(IntraBovwCodebook),
    InterBovw(InterBovwCodebook),
    DexelSelection {
        descriptor_length: usize,
        ranking: DexelRanking,
    },
}

impl Section {
    pub fn kind(&self) -> SectionKind {
        match self {
            Section::IntraLocal(_) => SectionKind::IntraLocal,
            Section::InterLocal(_) => SectionKind::InterLocal,
            Section::IntraBovw(_) => SectionKind::IntraBovw,
            Section::InterBovw(_) => SectionKind::InterBovw,
            Section::DexelSelection { .. } => SectionKind::DexelSelection,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Codebook {
    pub sections: Vec<Section>,
}

impl Codebook {
    pub fn new(sections: Vec<Section>) -> Self {
        Self { sections }
    }

    pub fn find(&self, kind: SectionKind) -> Option<&Section> {
        self.sections.iter().find(|s| s.kind() == kind)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u16(&mut out, VERSION);
        put_u16(&mut out, self.sections.len() as u16);
        for s in &self.sections {
            let mut body = Vec::new();
            write_section(s, &mut body);
            out.push(s.kind() as u8);
            put_u32(&mut out, body.len() as u32);
            out.extend_from_slice(&body);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.expect_magic(MAGIC)?;
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::format(4, format!("unsupported codebook version {version}")));
        }
        let count = r.u16()?;
        let mut sections = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let at = r.offset();
            let kind = SectionKind::from_byte(r.u8()?)
                .ok_or_else(|| Error::format(at, "unknown section kind"))?;
            let len = r.u32()? as usize;
            let body_at = r.offset();
            let body = r.take(len)?;
            let mut br = ByteReader::new(body);
            let section = read_section(kind, &mut br)
                .and_then(|s| br.finish().map(|_| s))
                .map_err(|e| match e {
                    Error::Format { offset, reason } => Error::format(body_at + offset, reason),
                    other => Error::format(body_at, other.to_string()),
                })?;
            sections.push(section);
        }
        r.finish()?;
        Ok(Self { sections })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<u64> {
        let bytes = self.to_bytes();
        fs::write(path, &bytes)?;
        Ok(bytes.len() as u64)
    }

    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(self.to_bytes()).into()
    }
}

fn put_u16(out: &mut Vec<u8>, v: u16) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_table(out: &mut Vec<u8>, t: &FrequencyTable) {
    put_u32(out, t.len() as u32);
    for f in t.freqs() {
        put_u16(out, f as u16);
    }
}

fn put_permutation(out: &mut Vec<u8>, p: &CodingPermutation) {
    put_u16(out, p.len() as u16);
    for &j in p.order() {
        put_u16(out, j as u16);
    }
    put_u16(out, p.first().freq0() as u16);
    for [m0, m1] in p.transitions() {
        put_u16(out, m0.freq0() as u16);
        put_u16(out, m1.freq0() as u16);
    }
}

fn write_section(s: &Section, out: &mut Vec<u8>) {
    match s {
        Section::IntraLocal(c) => {
            put_u16(out, c.descriptor_length as u16);
            put_u16(out, c.permutation.len() as u16);
            put_permutation(out, &c.permutation);
            put_table(out, &c.scale);
            put_table(out, &c.orientation);
        }
        Section::InterLocal(c) => {
            put_u16(out, c.descriptor_length as u16);
            put_u16(out, c.permutation.len() as u16);
            put_u32(out, c.window.dx);
            put_u32(out, c.window.dy);
            put_u32(out, c.window.dscale);
            put_permutation(out, &c.permutation);
            for t in [&c.dx, &c.dy, &c.dscale, &c.dorientation] {
                put_table(out, t);
            }
        }
        Section::IntraBovw(c) => {
            put_u32(out, c.words as u32);
            out.extend_from_slice(&c.delta.to_le_bytes());
            put_table(out, &c.table);
        }
        Section::InterBovw(c) => {
            put_u32(out, c.words as u32);
            out.extend_from_slice(&c.delta.to_le_bytes());
            put_u32(out, c.table.alphabet() as u32);
            for row in c.table.rows() {
                put_table(out, row);
            }
        }
        Section::DexelSelection {
            descriptor_length,
            ranking,
        } => {
            put_u16(out, *descriptor_length as u16);
            put_u16(out, ranking.order.len() as u16);
            for &j in &ranking.order {
                put_u16(out, j as u16);
            }
            for &s in &ranking.scores {
                out.extend_from_slice(&s.to_le_bytes());
            }
        }
    }
}

fn read_table(r: &mut ByteReader<'_>) -> Result<FrequencyTable> {
    let at = r.offset();
    let a = r.u32()? as usize;
    if a > r.remaining() / 2 {
        return Err(Error::format(at, "table alphabet exceeds payload"));
    }
    let freqs = (0..a).map(|_| r.u16().map(u32::from)).collect::<Result<Vec<_>>>()?;
    FrequencyTable::from_freqs(&freqs).map_err(|e| Error::format(at, e.to_string()))
}

fn read_permutation(r: &mut ByteReader<'_>) -> Result<CodingPermutation> {
    let at = r.offset();
    let k = r.u16()? as usize;
    let order = (0..k).map(|_| r.u16().map(usize::from)).collect::<Result<Vec<_>>>()?;
    let bit = |r: &mut ByteReader<'_>| -> Result<BitModel> {
        let at = r.offset();
        BitModel::from_freq0(r.u16()? as u32).map_err(|e| Error::format(at, e.to_string()))
    };
    let first = bit(r)?;
    let transitions = (1..k)
        .map(|_| Ok([bit(r)?, bit(r)?]))
        .collect::<Result<Vec<_>>>()?;
    CodingPermutation::from_parts(order, first, transitions).map_err(|e| Error::format(at, e.to_string()))
}

fn read_section(kind: SectionKind, r: &mut ByteReader<'_>) -> Result<Section> {
    Ok(match kind {
        SectionKind::IntraLocal => {
            let descriptor_length = r.u16()? as usize;
            let _k = r.u16()?;
            Section::IntraLocal(IntraLocalCodebook {
                descriptor_length,
                permutation: read_permutation(r)?,
                scale: read_table(r)?,
                orientation: read_table(r)?,
            })
        }
        SectionKind::InterLocal => {
            let descriptor_length = r.u16()? as usize;
            let _k = r.u16()?;
            let window = SearchWindow {
                dx: r.u32()?,
                dy: r.u32()?,
                dscale: r.u32()?,
            };
            Section::InterLocal(InterLocalCodebook {
                descriptor_length,
                window,
                permutation: read_permutation(r)?,
                dx: read_table(r)?,
                dy: read_table(r)?,
                dscale: read_table(r)?,
                dorientation: read_table(r)?,
            })
        }
        SectionKind::IntraBovw => Section::IntraBovw(IntraBovwCodebook {
            words: r.u32()? as usize,
            delta: r.f64()?,
            table: read_table(r)?,
        }),
        SectionKind::InterBovw => {
            let words = r.u32()? as usize;
            let delta = r.f64()?;
            let at = r.offset();
            let a = r.u32()? as usize;
            if a > r.remaining() {
                return Err(Error::format(at, "table alphabet exceeds payload"));
            }
            let rows = (0..a).map(|_| read_table(r)).collect::<Result<Vec<_>>>()?;
            let table = ConditionalTable::new(rows).map_err(|e| Error::format(at, e.to_string()))?;
            Section::InterBovw(InterBovwCodebook { words, delta, table })
        }
        SectionKind::DexelSelection => {
            let descriptor_length = r.u16()? as usize;
            let n = r.u16()? as usize;
            let order = (0..n).map(|_| r.u16().map(usize::from)).collect::<Result<Vec<_>>>()?;
            let scores = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            Section::DexelSelection {
                descriptor_length,
                ranking: DexelRanking { order, scores },
            }
        }
    })
}
