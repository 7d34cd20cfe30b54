//! Rate-efficiency sweeps over one parameter axis.
//!
//! Results CSV columns, in order:
//!
//! ```text
//! experiment,mode,k,delta,gop,strategy,bits_per_feature,bytes_per_query,metric,value
//! ```
//!
//! `experiment` is `homography` (local-feature sweep over K) or `retrieval`
//! (global-descriptor sweep over delta or GOP size). Columns that do not
//! apply to a row are left empty.

use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use serde::Serialize;

use super::experiment::{evaluate_retrieval, prepare_retrieval, synth_retrieval, QueryCoding, RetrievalSynthConfig};
use super::planar::{homography_precision, synth_planar, HomographyEvalConfig, PlanarConfig};
use crate::boosting::DexelRanking;
use crate::bovw::{ClusterMethod, GopStrategy};
use crate::codebook::Codebook;
use crate::error::{Error, Result};
use crate::local::{
    decode_local_stream, encode_local_stream, project_stream, train_local_codebook, EncoderConfig, LocalCodebook,
    LocalCodec, LocalTrainingConfig, StreamMode,
};

#[derive(Debug, Clone, PartialEq)]
pub enum SweepAxis {
    K(Vec<usize>),
    Delta(Vec<f64>),
    Gop(Vec<usize>),
}

impl SweepAxis {
    pub fn len(&self) -> usize {
        match self {
            SweepAxis::K(v) => v.len(),
            SweepAxis::Delta(v) => v.len(),
            SweepAxis::Gop(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    /// `k=8,64,512`, `delta=0.01,0.05` or `gop=1,2,5`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, values) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("grid {s:?} must look like name=v1,v2,...")))?;
        fn parse<T: FromStr>(values: &str) -> Result<Vec<T>> {
            values
                .split(',')
                .map(|v| {
                    v.trim()
                        .parse()
                        .map_err(|_| Error::Config(format!("bad grid value {v:?}")))
                })
                .collect()
        }
        let axis = match name.trim() {
            "k" => SweepAxis::K(parse(values)?),
            "delta" => SweepAxis::Delta(parse(values)?),
            "gop" => SweepAxis::Gop(parse(values)?),
            other => return Err(Error::Config(format!("unknown grid axis {other:?} (k|delta|gop)"))),
        };
        if axis.is_empty() {
            return Err(Error::Config("grid has no values".into()));
        }
        Ok(axis)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    pub planar: PlanarConfig,
    pub homography: HomographyEvalConfig,
    /// Local coding mode for the K axis.
    pub mode: StreamMode,
    pub lambda: f64,
    /// Dexel ranking used for selection; identity when absent.
    pub selection: Option<DexelRanking>,
    /// Directory with pre-trained `local-k<K>.bfcb` codebooks. When absent,
    /// codebooks are trained on a separate synthetic sequence.
    pub codebook_dir: Option<PathBuf>,
    pub retrieval: RetrievalSynthConfig,
    pub words: usize,
    pub method: ClusterMethod,
    /// Fixed query coding for the delta and GOP axes (delta/gop overridden
    /// by the axis value).
    pub coding: QueryCoding,
    pub seed: u64,
}

impl SweepConfig {
    pub fn new(axis: SweepAxis) -> Self {
        Self {
            axis,
            planar: PlanarConfig::default(),
            homography: HomographyEvalConfig::default(),
            mode: StreamMode::Auto,
            lambda: crate::local::DEFAULT_LAMBDA,
            selection: None,
            codebook_dir: None,
            retrieval: RetrievalSynthConfig::default(),
            words: 256,
            method: ClusterMethod::KMedians,
            coding: QueryCoding {
                delta: Some(0.05),
                ..QueryCoding::default()
            },
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub experiment: String,
    pub mode: String,
    pub k: Option<usize>,
    pub delta: Option<f64>,
    pub gop: Option<usize>,
    pub strategy: Option<String>,
    pub bits_per_feature: Option<f64>,
    pub bytes_per_query: Option<f64>,
    pub metric: String,
    pub value: f64,
}

pub fn run_rate_efficiency(cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    match &cfg.axis {
        SweepAxis::K(ks) => sweep_k(cfg, ks),
        SweepAxis::Delta(deltas) => sweep_global(
            cfg,
            deltas
                .iter()
                .map(|&d| QueryCoding {
                    delta: Some(d),
                    ..cfg.coding
                })
                .collect(),
        ),
        SweepAxis::Gop(gops) => sweep_global(
            cfg,
            gops.iter()
                .map(|&gop| QueryCoding { gop, ..cfg.coding })
                .collect(),
        ),
    }
}

fn load_codebook(cfg: &SweepConfig, k: usize, train: &crate::feature::FeatureStream) -> Result<LocalCodebook> {
    match &cfg.codebook_dir {
        Some(dir) => {
            let path = dir.join(format!("local-k{k}.bfcb"));
            if !path.exists() {
                return Err(Error::Config(format!("missing codebook {}", path.display())));
            }
            let book = LocalCodebook::from_codebook(&Codebook::read(&path)?)?;
            if book.k() != k {
                return Err(Error::Config(format!("{} holds K = {}, expected {k}", path.display(), book.k())));
            }
            Ok(book)
        }
        None => {
            let p = cfg.planar.descriptor_length;
            let selection = cfg.selection.clone().unwrap_or_else(|| DexelRanking::identity(p));
            let tc = LocalTrainingConfig {
                lambda: cfg.lambda,
                ..LocalTrainingConfig::new(k, selection)
            };
            train_local_codebook(std::slice::from_ref(train), &tc)
        }
    }
}

fn sweep_k(cfg: &SweepConfig, ks: &[usize]) -> Result<Vec<SweepRow>> {
    let test = synth_planar(&PlanarConfig {
        seed: cfg.seed,
        ..cfg.planar.clone()
    })?;
    let train = synth_planar(&PlanarConfig {
        seed: cfg.seed.wrapping_add(1),
        ..cfg.planar.clone()
    })?
    .stream;
    let mut rows = Vec::with_capacity(ks.len());
    for &k in ks {
        let book = Arc::new(load_codebook(cfg, k, &train)?);
        let codec = LocalCodec::new(
            book.clone(),
            EncoderConfig {
                lambda: cfg.lambda,
                mode: cfg.mode,
                ..EncoderConfig::new(k)
            },
        )?;
        let (bytes, rate) = encode_local_stream(&codec, &test.stream)?;
        let decoded = decode_local_stream(&bytes, book.clone())?;
        if decoded != project_stream(&test.stream, &book.selection.order, k)? {
            return Err(Error::Stream(format!("K = {k}: decoded stream differs from the projection")));
        }
        let report = homography_precision(&decoded, &test.truth, &cfg.homography)?;
        rows.push(SweepRow {
            experiment: "homography".into(),
            mode: cfg.mode.to_string(),
            k: Some(k),
            delta: None,
            gop: None,
            strategy: None,
            bits_per_feature: Some(rate.bits_per_feature()),
            bytes_per_query: None,
            metric: "precision".into(),
            value: report.precision(),
        });
    }
    Ok(rows)
}

fn sweep_global(cfg: &SweepConfig, points: Vec<QueryCoding>) -> Result<Vec<SweepRow>> {
    let data = synth_retrieval(&RetrievalSynthConfig {
        seed: cfg.seed,
        ..cfg.retrieval.clone()
    })?;
    let setup = prepare_retrieval(&data, cfg.words, cfg.method, cfg.seed)?;
    points
        .into_iter()
        .map(|coding| {
            let report = evaluate_retrieval(&setup, &coding)?;
            Ok(SweepRow {
                experiment: "retrieval".into(),
                mode: if coding.inter { "inter" } else { "intra" }.into(),
                k: None,
                delta: coding.delta,
                gop: Some(coding.gop),
                strategy: Some(
                    match coding.strategy {
                        GopStrategy::Skip => "skip",
                        GopStrategy::Median => "median",
                    }
                    .into(),
                ),
                bits_per_feature: None,
                bytes_per_query: Some(report.bytes_per_query),
                metric: "map".into(),
                value: report.map,
            })
        })
        .collect()
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(true).from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
