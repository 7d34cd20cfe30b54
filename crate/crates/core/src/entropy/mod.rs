//! Dexel statistics, entropy measures, the greedy coding order and the
//! static-model range coder.

mod permutation;
mod range_coder;
mod stats;
mod table;

pub use permutation::{
    conditional_entropy, entropy, learn_permutation, marginal_entropy, marginal_entropy_sum,
    CodingPermutation, TIE_TOLERANCE,
};
pub use range_coder::{range_decode, range_encode, RangeDecoder, RangeEncoder, SymbolModel};
pub use stats::DexelStats;
pub use table::{BitModel, ConditionalTable, FrequencyTable, PROB_BITS, PROB_TOTAL};
