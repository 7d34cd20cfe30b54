//! Task-level evaluation: homography estimation from matched local features
//! and content-based retrieval with BoVW global descriptors.

mod experiment;
mod homography;
mod matching;
mod planar;
mod retrieval;
mod sweep;

pub use experiment::{
    evaluate_retrieval, prepare_retrieval, prepare_with_dictionary, synth_retrieval, Aggregation, QueryCoding,
    QuerySet, RetrievalData, RetrievalQuery, RetrievalReport, RetrievalSetup, RetrievalSynthConfig,
};
pub use homography::{
    estimate_homography, fit_homography, symmetric_transfer_error, Homography, Point, RansacConfig,
};
pub use matching::{match_descriptors, match_features, Match, DEFAULT_RATIO};
pub use planar::{
    backprojection_error, homography_precision, synth_planar, FrameTruth, GroundTruth, HomographyEvalConfig,
    PlanarConfig, PlanarSequence, PrecisionReport,
};
pub use retrieval::{
    average_precision, average_precision_exact, mean_average_precision, median_rank_aggregate, read_relevance,
    rerank, retrieve, write_relevance, DatabaseEntry, RankedList, Relevance, RetrievalDatabase, DEFAULT_TOP_K,
};
pub use sweep::{run_rate_efficiency, write_sweep_csv, SweepAxis, SweepConfig, SweepRow};
