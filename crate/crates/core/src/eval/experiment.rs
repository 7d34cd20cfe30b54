//! Synthetic retrieval benchmark: database and query sequences drawn from
//! planted scene clusters, and the end-to-end query pipeline (BoVW, optional
//! GOP aggregation and compression, ranking, re-ranking, MAP).

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::matching::DEFAULT_RATIO;
use super::retrieval::{
    average_precision, mean_average_precision, median_rank_aggregate, rerank, retrieve, DatabaseEntry, Relevance,
    RetrievalDatabase, DEFAULT_TOP_K,
};
use crate::bovw::{
    aggregate_sequence, build_global, decode_global_stream, encode_global_stream, learn_dictionary, quantize_global,
    train_bovw_codebooks, ClusterMethod, Dictionary, DictionaryConfig, GlobalDescriptor, GopStrategy,
};
use crate::error::{Error, Result};
use crate::feature::{quantize_keypoint, BinaryDescriptor, FrameFeatures, LocalFeature};

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalSynthConfig {
    pub descriptor_length: usize,
    pub images: usize,
    pub clusters: usize,
    /// Distinct descriptors that make up one cluster's scene.
    pub scene_features: usize,
    pub features_per_image: usize,
    /// Share of each image's features drawn from its scene; the rest come
    /// from a background pool shared by all clusters.
    pub scene_fraction: f64,
    pub background_features: usize,
    /// Per-dexel flip probability applied to every observed descriptor.
    pub flip_probability: f64,
    pub query_frames: usize,
    /// Share of a query's features replaced from one frame to the next.
    pub churn: f64,
    /// Unlabelled sequences per cluster for training the BoVW coders.
    pub training_sequences: usize,
    pub seed: u64,
}

impl Default for RetrievalSynthConfig {
    fn default() -> Self {
        Self {
            descriptor_length: 256,
            images: 200,
            clusters: 10,
            scene_features: 120,
            features_per_image: 60,
            scene_fraction: 0.6,
            background_features: 400,
            flip_probability: 0.04,
            query_frames: 8,
            churn: 0.15,
            training_sequences: 1,
            seed: 0,
        }
    }
}

impl RetrievalSynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.into()));
        if self.descriptor_length == 0 || self.descriptor_length > u16::MAX as usize {
            return fail("descriptor length must be in 1..=65535");
        }
        if self.clusters == 0 || self.images < self.clusters {
            return fail("need at least one image per cluster");
        }
        if self.features_per_image == 0 || self.query_frames == 0 {
            return fail("images and queries need at least one feature and frame");
        }
        let scene = (self.features_per_image as f64 * self.scene_fraction).round() as usize;
        if scene > self.scene_features || (scene < self.features_per_image && self.background_features == 0) {
            return fail("scene and background pools are too small for the image size");
        }
        if !(0.0..=1.0).contains(&self.scene_fraction)
            || !(0.0..=1.0).contains(&self.flip_probability)
            || !(0.0..=1.0).contains(&self.churn)
        {
            return fail("fractions and probabilities must lie in [0, 1]");
        }
        Ok(())
    }

    fn scene_count(&self) -> usize {
        (self.features_per_image as f64 * self.scene_fraction).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalQuery {
    pub id: String,
    pub frames: Vec<FrameFeatures>,
    pub relevant: BTreeSet<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalData {
    /// Database image `i` has id `i`.
    pub database: Vec<FrameFeatures>,
    pub queries: Vec<RetrievalQuery>,
    pub training: Vec<Vec<FrameFeatures>>,
}

impl RetrievalData {
    pub fn relevance(&self) -> Relevance {
        self.queries.iter().map(|q| (q.id.clone(), q.relevant.clone())).collect()
    }
}

struct Pools {
    scenes: Vec<Vec<BinaryDescriptor>>,
    background: Vec<BinaryDescriptor>,
}

fn random_descriptor(len: usize, rng: &mut ChaCha8Rng) -> BinaryDescriptor {
    BinaryDescriptor::from_bits((0..len).map(|_| rng.random_bool(0.5)))
}

fn observe(d: &BinaryDescriptor, p: f64, rng: &mut ChaCha8Rng) -> BinaryDescriptor {
    let mut d = d.clone();
    for j in 0..d.len() {
        if rng.random_bool(p) {
            d.flip(j);
        }
    }
    d
}

fn place(d: BinaryDescriptor, rng: &mut ChaCha8Rng) -> Result<LocalFeature> {
    let kp = quantize_keypoint(
        rng.random_range(0.0..640.0),
        rng.random_range(0.0..480.0),
        rng.random_range(2.0..8.0),
        rng.random_range(0.0..std::f64::consts::TAU),
    )?;
    Ok(LocalFeature::new(kp, d))
}

/// Picks scene and background members for one view, as pool indices.
fn pick(cfg: &RetrievalSynthConfig, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let s = cfg.scene_count();
    let b = cfg.features_per_image - s;
    (
        sample(rng, cfg.scene_features, s).into_vec(),
        sample(rng, cfg.background_features, b.min(cfg.background_features)).into_vec(),
    )
}

fn render(frame_index: u32, pools: &Pools, cluster: usize, members: &(Vec<usize>, Vec<usize>), cfg: &RetrievalSynthConfig, rng: &mut ChaCha8Rng) -> Result<FrameFeatures> {
    let mut features = Vec::with_capacity(cfg.features_per_image);
    for &i in &members.0 {
        features.push(place(observe(&pools.scenes[cluster][i], cfg.flip_probability, rng), rng)?);
    }
    for &i in &members.1 {
        features.push(place(observe(&pools.background[i], cfg.flip_probability, rng), rng)?);
    }
    let mut frame = FrameFeatures::new(frame_index, features);
    frame.sort_raster();
    Ok(frame)
}

/// A temporally coherent view sequence of one cluster: each frame replaces a
/// `churn` share of the previous frame's scene and background members.
fn sequence(pools: &Pools, cluster: usize, cfg: &RetrievalSynthConfig, rng: &mut ChaCha8Rng) -> Result<Vec<FrameFeatures>> {
    let mut members = pick(cfg, rng);
    let mut frames = Vec::with_capacity(cfg.query_frames);
    for n in 0..cfg.query_frames {
        if n > 0 {
            churn(&mut members.0, cfg.scene_features, cfg.churn, rng);
            churn(&mut members.1, cfg.background_features, cfg.churn, rng);
        }
        frames.push(render(n as u32, pools, cluster, &members, cfg, rng)?);
    }
    Ok(frames)
}

fn churn(members: &mut [usize], pool: usize, rate: f64, rng: &mut ChaCha8Rng) {
    if members.len() >= pool {
        return;
    }
    for k in 0..members.len() {
        if rng.random_bool(rate) {
            let fresh = loop {
                let c = rng.random_range(0..pool);
                if !members.contains(&c) {
                    break c;
                }
            };
            members[k] = fresh;
        }
    }
}

pub fn synth_retrieval(cfg: &RetrievalSynthConfig) -> Result<RetrievalData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let p = cfg.descriptor_length;
    let pools = Pools {
        scenes: (0..cfg.clusters)
            .map(|_| (0..cfg.scene_features).map(|_| random_descriptor(p, &mut rng)).collect())
            .collect(),
        background: (0..cfg.background_features).map(|_| random_descriptor(p, &mut rng)).collect(),
    };
    let cluster_of = |id: usize| id * cfg.clusters / cfg.images;
    let database = (0..cfg.images)
        .map(|id| {
            let members = pick(cfg, &mut rng);
            render(id as u32, &pools, cluster_of(id), &members, cfg, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let queries = (0..cfg.clusters)
        .map(|c| {
            Ok(RetrievalQuery {
                id: format!("q{c}"),
                frames: sequence(&pools, c, cfg, &mut rng)?,
                relevant: (0..cfg.images).filter(|&id| cluster_of(id) == c).map(|id| id as u32).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let training = (0..cfg.clusters * cfg.training_sequences)
        .map(|i| sequence(&pools, i % cfg.clusters, cfg, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(RetrievalData {
        database,
        queries,
        training,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuerySet {
    pub id: String,
    pub frames: Vec<FrameFeatures>,
    pub globals: Vec<GlobalDescriptor>,
    pub relevant: BTreeSet<u32>,
}

/// Dictionary, database and query globals shared by every grid point.
#[derive(Debug, Clone)]
pub struct RetrievalSetup {
    pub dictionary: Dictionary,
    pub database: RetrievalDatabase,
    pub queries: Vec<QuerySet>,
    pub training: Vec<Vec<GlobalDescriptor>>,
}

/// Learns a `words`-word dictionary on the database descriptors, takes idf
/// from the database images, and builds every global descriptor.
pub fn prepare_retrieval(data: &RetrievalData, words: usize, method: ClusterMethod, seed: u64) -> Result<RetrievalSetup> {
    let sample: Vec<BinaryDescriptor> = data.database.iter().flat_map(|f| f.descriptors().cloned()).collect();
    let mut dictionary = learn_dictionary(&sample, &DictionaryConfig::new(words, method, seed))?.dictionary;
    dictionary.compute_idf(&data.database)?;
    prepare_with_dictionary(data, dictionary)
}

pub fn prepare_with_dictionary(data: &RetrievalData, dictionary: Dictionary) -> Result<RetrievalSetup> {
    let global = |f: &FrameFeatures| build_global(f.descriptors(), &dictionary);
    let database = RetrievalDatabase {
        entries: data
            .database
            .iter()
            .enumerate()
            .map(|(id, f)| {
                Ok(DatabaseEntry {
                    id: id as u32,
                    global: global(f)?,
                    features: f.clone(),
                })
            })
            .collect::<Result<_>>()?,
    };
    let queries = data
        .queries
        .iter()
        .map(|q| {
            Ok(QuerySet {
                id: q.id.clone(),
                globals: q.frames.iter().map(global).collect::<Result<_>>()?,
                frames: q.frames.clone(),
                relevant: q.relevant.clone(),
            })
        })
        .collect::<Result<_>>()?;
    let training = data
        .training
        .iter()
        .map(|s| s.iter().map(global).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    Ok(RetrievalSetup {
        dictionary,
        database,
        queries,
        training,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregation {
    /// AP per query frame, averaged per query.
    PerFrame,
    /// One AP per query on the median-rank-aggregated list.
    MedianRank,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryCoding {
    /// Quantization step; `None` sends unquantized descriptors.
    pub delta: Option<f64>,
    pub inter: bool,
    pub gop: usize,
    pub strategy: GopStrategy,
    pub aggregation: Aggregation,
    pub top_k: usize,
    pub rerank: bool,
    pub ratio: f64,
}

impl Default for QueryCoding {
    fn default() -> Self {
        Self {
            delta: None,
            inter: false,
            gop: 1,
            strategy: GopStrategy::Skip,
            aggregation: Aggregation::PerFrame,
            top_k: DEFAULT_TOP_K,
            rerank: false,
            ratio: DEFAULT_RATIO,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalReport {
    pub map: f64,
    /// Per-query AP.
    pub per_query: BTreeMap<String, f64>,
    /// Coded bytes per query frame (zero when unquantized).
    pub bytes_per_query: f64,
}

pub fn evaluate_retrieval(setup: &RetrievalSetup, coding: &QueryCoding) -> Result<RetrievalReport> {
    let codebooks = match coding.delta {
        Some(delta) => Some(train_bovw_codebooks(&setup.training, delta)?),
        None => None,
    };
    let mut total_bytes = 0u64;
    let mut total_frames = 0usize;
    let mut aps = Vec::with_capacity(setup.queries.len());
    let mut per_query = BTreeMap::new();
    for q in &setup.queries {
        let sent = aggregate_sequence(&q.globals, coding.gop, coding.strategy)?;
        let received = match (&codebooks, coding.delta) {
            (Some((intra, inter)), Some(delta)) => {
                let quantized = sent.iter().map(|g| quantize_global(g, delta)).collect::<Result<Vec<_>>>()?;
                let inter = coding.inter.then_some(inter);
                let (bytes, rate) = encode_global_stream(&quantized, intra, inter)?;
                total_bytes += rate.frame_bits.iter().sum::<u64>() / 8;
                let decoded = decode_global_stream(&bytes, intra, inter)?;
                decoded.iter().map(|d| d.dequantize()).collect()
            }
            _ => sent,
        };
        total_frames += q.frames.len();
        let rankings = q
            .frames
            .iter()
            .enumerate()
            .map(|(n, frame)| {
                let ranked = retrieve(&received[n / coding.gop], &setup.database, coding.top_k);
                if coding.rerank {
                    rerank(frame, &ranked, &setup.database, coding.ratio)
                } else {
                    Ok(ranked)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let frame_aps = match coding.aggregation {
            Aggregation::PerFrame => rankings
                .iter()
                .map(|r| average_precision(&r.ids, &q.relevant))
                .collect::<Result<Vec<_>>>()?,
            Aggregation::MedianRank => {
                let lists: Vec<Vec<u32>> = rankings.into_iter().map(|r| r.ids).collect();
                vec![average_precision(&median_rank_aggregate(&lists)?, &q.relevant)?]
            }
        };
        per_query.insert(q.id.clone(), frame_aps.iter().sum::<f64>() / frame_aps.len() as f64);
        aps.push(frame_aps);
    }
    Ok(RetrievalReport {
        map: mean_average_precision(&aps)?,
        per_query,
        bytes_per_query: total_bytes as f64 / total_frames.max(1) as f64,
    })
}
