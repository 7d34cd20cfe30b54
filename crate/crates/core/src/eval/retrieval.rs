use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use num::{BigInt, BigRational, ToPrimitive, Zero};

use super::matching::match_features;
use crate::bovw::GlobalDescriptor;
use crate::error::{Error, Result};
use crate::feature::FrameFeatures;
use crate::par;

/// Candidates passed from the global stage to re-ranking.
pub const DEFAULT_TOP_K: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct DatabaseEntry {
    pub id: u32,
    pub global: GlobalDescriptor,
    pub features: FrameFeatures,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RetrievalDatabase {
    pub entries: Vec<DatabaseEntry>,
}

impl RetrievalDatabase {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Database ids in rank order; the first `candidates` are the re-ranking pool.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankedList {
    pub ids: Vec<u32>,
    pub candidates: usize,
}

/// Ranks the whole database by ascending Euclidean distance, ties by id.
pub fn retrieve(query: &GlobalDescriptor, db: &RetrievalDatabase, k: usize) -> RankedList {
    let mut scored: Vec<(f64, u32)> = db.entries.iter().map(|e| (query.distance(&e.global), e.id)).collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    RankedList {
        candidates: k.min(scored.len()),
        ids: scored.into_iter().map(|(_, id)| id).collect(),
    }
}

/// Reorders the candidate block by descending number of ratio-test matches
/// with the query frame; ties keep the global-stage order and the rest of
/// the list is untouched.
pub fn rerank(query: &FrameFeatures, ranked: &RankedList, db: &RetrievalDatabase, ratio: f64) -> Result<RankedList> {
    let by_id: HashMap<u32, &DatabaseEntry> = db.entries.iter().map(|e| (e.id, e)).collect();
    let pool = &ranked.ids[..ranked.candidates];
    let counts = par::map(pool, |id| -> Result<usize> {
        let entry = by_id
            .get(id)
            .ok_or_else(|| Error::Config(format!("ranked id {id} not in database")))?;
        if query.is_empty() {
            return Ok(0);
        }
        match match_features(query, &entry.features, ratio) {
            Ok(m) => Ok(m.len()),
            Err(Error::InsufficientCandidates(_)) => Ok(0),
            Err(e) => Err(e),
        }
    });
    let mut order: Vec<(usize, u32)> = counts
        .into_iter()
        .zip(pool)
        .map(|(c, &id)| c.map(|c| (c, id)))
        .collect::<Result<_>>()?;
    order.sort_by_key(|e| std::cmp::Reverse(e.0));
    let mut ids: Vec<u32> = order.into_iter().map(|(_, id)| id).collect();
    ids.extend_from_slice(&ranked.ids[ranked.candidates..]);
    Ok(RankedList {
        ids,
        candidates: ranked.candidates,
    })
}

/// Exact average precision: sum over relevant ranks k of P(k), divided by
/// the number of relevant documents.
pub fn average_precision_exact(ranking: &[u32], relevant: &BTreeSet<u32>) -> Result<BigRational> {
    if relevant.is_empty() {
        return Err(Error::UndefinedAp);
    }
    let mut sum = BigRational::zero();
    let mut hits = 0u64;
    for (k, id) in ranking.iter().enumerate() {
        if relevant.contains(id) {
            hits += 1;
            sum += BigRational::new(BigInt::from(hits), BigInt::from(k as u64 + 1));
        }
    }
    Ok(sum / BigRational::from_integer(BigInt::from(relevant.len())))
}

pub fn average_precision(ranking: &[u32], relevant: &BTreeSet<u32>) -> Result<f64> {
    Ok(average_precision_exact(ranking, relevant)?
        .to_f64()
        .expect("AP lies in [0, 1]"))
}

/// Mean over queries of the mean over each query's frames.
pub fn mean_average_precision(per_query: &[Vec<f64>]) -> Result<f64> {
    if per_query.is_empty() {
        return Err(Error::Config("no queries to average".into()));
    }
    if per_query.iter().any(|q| q.is_empty()) {
        return Err(Error::Config("every query needs at least one frame".into()));
    }
    let per: Vec<f64> = per_query.iter().map(|q| q.iter().sum::<f64>() / q.len() as f64).collect();
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

/// Median Rank Aggregation: each item scores the lower median of its
/// 1-based positions across the per-frame rankings; ascending score, ties by
/// ascending id.
pub fn median_rank_aggregate(rankings: &[Vec<u32>]) -> Result<Vec<u32>> {
    let first = rankings.first().ok_or_else(|| Error::Config("no rankings to aggregate".into()))?;
    let universe: BTreeSet<u32> = first.iter().copied().collect();
    if universe.len() != first.len() {
        return Err(Error::Config("ranking contains duplicate ids".into()));
    }
    let mut positions: BTreeMap<u32, Vec<usize>> = universe.iter().map(|&id| (id, Vec::new())).collect();
    for r in rankings {
        if r.len() != universe.len() {
            return Err(Error::Config("rankings cover different databases".into()));
        }
        for (pos, id) in r.iter().enumerate() {
            positions
                .get_mut(id)
                .ok_or_else(|| Error::Config(format!("id {id} missing from the first ranking")))?
                .push(pos + 1);
        }
    }
    let mut scored: Vec<(usize, u32)> = positions
        .into_iter()
        .map(|(id, mut p)| {
            if p.len() != rankings.len() {
                return Err(Error::Config(format!("id {id} repeated within a ranking")));
            }
            p.sort_unstable();
            Ok((p[(p.len() - 1) / 2], id))
        })
        .collect::<Result<_>>()?;
    scored.sort_unstable();
    Ok(scored.into_iter().map(|(_, id)| id).collect())
}

/// Query id to the set of relevant database ids.
pub type Relevance = BTreeMap<String, BTreeSet<u32>>;

pub fn read_relevance(path: impl AsRef<Path>) -> Result<Relevance> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

pub fn write_relevance(relevance: &Relevance, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(relevance)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature::{BinaryDescriptor, LocalFeature, QuantizedKeypoint};

    fn set(ids: &[u32]) -> BTreeSet<u32> {
        ids.iter().copied().collect()
    }

    fn rational(n: i64, d: i64) -> BigRational {
        BigRational::new(n.into(), d.into())
    }

    #[test]
    fn ap_examples() {
        let ranking: Vec<u32> = (1..=10).collect();
        assert_eq!(average_precision(&ranking, &set(&[1])).unwrap(), 1.0);
        assert_eq!(average_precision_exact(&ranking, &set(&[2])).unwrap(), rational(1, 2));
        assert_eq!(average_precision_exact(&ranking[..5], &set(&[1, 3])).unwrap(), rational(5, 6));
        assert!(matches!(average_precision(&ranking, &set(&[])), Err(Error::UndefinedAp)));
    }

    #[test]
    fn map_is_two_level() {
        assert_eq!(mean_average_precision(&[vec![0.2], vec![0.8]]).unwrap(), 0.5);
        // Flat mean would be (0 + 0 + 0 + 1) / 4 = 0.25.
        let m = mean_average_precision(&[vec![0.0, 0.0, 0.0], vec![1.0]]).unwrap();
        assert_eq!(m, 0.5);
    }

    #[test]
    fn mra_example() {
        // Item 10 ranked (1, 9, 1), item 20 ranked (2, 2, 2).
        let mut a: Vec<u32> = vec![10, 20];
        a.extend(30..37);
        let mut b: Vec<u32> = vec![30, 20];
        b.extend([31, 32, 33, 34, 35, 36, 10]);
        let out = median_rank_aggregate(&[a.clone(), b, a.clone()]).unwrap();
        assert_eq!(&out[..2], &[10, 20]);
        assert_eq!(median_rank_aggregate(&[a.clone(), a.clone()]).unwrap(), a);
        assert_eq!(median_rank_aggregate(std::slice::from_ref(&a)).unwrap(), a);
    }

    fn db3() -> RetrievalDatabase {
        let g = |v: Vec<f64>| GlobalDescriptor { values: v };
        let e = |id, v| DatabaseEntry {
            id,
            global: g(v),
            features: FrameFeatures::default(),
        };
        RetrievalDatabase {
            entries: vec![e(7, vec![1.0, 0.0]), e(3, vec![0.0, 1.0]), e(5, vec![0.6, 0.8])],
        }
    }

    #[test]
    fn retrieve_orders_by_distance() {
        let q = GlobalDescriptor { values: vec![0.8, 0.6] };
        // Distances: id 7 -> sqrt(0.04 + 0.36), id 3 -> sqrt(0.64 + 0.16), id 5 -> sqrt(0.04 + 0.04).
        let r = retrieve(&q, &db3(), 2);
        assert_eq!(r.ids, vec![5, 7, 3]);
        assert_eq!(r.candidates, 2);
        let exact = retrieve(&db3().entries[1].global, &db3(), DEFAULT_TOP_K);
        assert_eq!(exact.ids[0], 3);
    }

    fn bits(v: u64) -> BinaryDescriptor {
        BinaryDescriptor::from_bits((0..64).map(|j| (v >> j) & 1 == 1))
    }

    fn frame(ds: &[u64]) -> FrameFeatures {
        FrameFeatures::new(
            0,
            ds.iter()
                .map(|&v| LocalFeature::new(QuantizedKeypoint::new(0, 0, 4, 0).unwrap(), bits(v)))
                .collect(),
        )
    }

    #[test]
    fn rerank_by_match_count() {
        // Query features are pairwise 14 bits apart; a candidate holding the
        // first n of them (plus far-away fillers) yields exactly n matches,
        // since a missing feature sees two neighbours at distance 14.
        let query: Vec<u64> = (0..9).map(|i| 0x7Fu64 << (7 * i)).collect();
        let holding = |n: usize| {
            let mut v: Vec<u64> = query[..n].to_vec();
            v.extend([0x5555_5555_5555_5555, u64::MAX]);
            frame(&v)
        };
        let entry = |id, n| DatabaseEntry {
            id,
            global: GlobalDescriptor::zeros(1),
            features: holding(n),
        };
        let db = RetrievalDatabase {
            entries: vec![entry(1, 5), entry(2, 2), entry(3, 9), entry(4, 9)],
        };
        let ranked = RankedList {
            ids: vec![1, 2, 3, 4],
            candidates: 3,
        };
        let q = frame(&query);
        for id in [1u32, 2, 3] {
            let n = [5, 2, 9][id as usize - 1];
            assert_eq!(match_features(&q, &db.entries[id as usize - 1].features, 0.7).unwrap().len(), n);
        }
        let r = rerank(&q, &ranked, &db, 0.7).unwrap();
        assert_eq!(r.ids, vec![3, 1, 2, 4]);
        let empty = rerank(&FrameFeatures::default(), &ranked, &db, 0.7).unwrap();
        assert_eq!(empty, ranked);
    }

    #[test]
    fn relevance_json_round_trip() {
        let rel: Relevance = BTreeMap::from([("q0".to_string(), set(&[1, 2])), ("q1".to_string(), set(&[9]))]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rel.json");
        write_relevance(&rel, &p).unwrap();
        assert_eq!(read_relevance(&p).unwrap(), rel);
    }
}
