//! Hierarchical navigable small-world graph over the embedding corpus for
//! approximate nearest-token queries, plus the exact brute-force oracle all
//! recall tests compare against.
//!
//! Vectors are not copied into the index; queries read them from the
//! [`EmbeddingCorpus`] the index was built over, and serialized indexes
//! carry the corpus content hash for pairing validation.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fs;
use std::io::{self, Write as _};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seeding;
use crate::text::{EmbeddingCorpus, Token};

const MAGIC: &[u8; 8] = b"DISPHNSW";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("cannot build an index over an empty corpus")]
    EmptyCorpus,
    #[error("query against an empty index")]
    EmptyIndex,
    #[error("query dimension {query} does not match index dimension {index}")]
    DimensionMismatch { query: usize, index: usize },
    #[error("index was built over a different corpus (hash {expected}, got {found})")]
    PairingMismatch { expected: String, found: String },
    #[error("corrupt index file at byte {offset}: {reason}")]
    Corrupt { offset: u64, reason: String },
    #[error("unsupported index format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("structural invariant violated: {0}")]
    InvariantViolation(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Squared Euclidean distance; monotone-equivalent to Euclidean and cheaper.
pub fn squared_euclidean(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0f32;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

/// Nearest neighbors in ascending distance order, with the number of
/// distance computations the query performed.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnResult {
    pub neighbors: Vec<(u32, f32)>,
    pub distance_evaluations: u64,
}

impl KnnResult {
    pub fn ids(&self) -> Vec<u32> {
        self.neighbors.iter().map(|&(id, _)| id).collect()
    }
}

/// Exact scan over the whole corpus. Ties break toward the lower node id.
/// This is the oracle for every recall test.
pub fn brute_force_knn(
    corpus: &EmbeddingCorpus,
    query: &[f32],
    num_neighbors: usize,
) -> Result<KnnResult, IndexError> {
    if corpus.n() == 0 {
        return Err(IndexError::EmptyCorpus);
    }
    if query.len() != corpus.k() {
        return Err(IndexError::DimensionMismatch {
            query: query.len(),
            index: corpus.k(),
        });
    }
    let mut all: Vec<(u32, f32)> = (0..corpus.n())
        .map(|i| (i as u32, squared_euclidean(query, corpus.vector(i))))
        .collect();
    all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    all.truncate(num_neighbors.min(corpus.n()));
    Ok(KnnResult {
        neighbors: all,
        distance_evaluations: corpus.n() as u64,
    })
}

/// Candidate ordering used by the search heaps: by distance, then by id so
/// that traversal order (and therefore the whole build) is deterministic.
#[derive(Debug, Clone, Copy, PartialEq)]
struct HeapItem {
    dist: f32,
    id: u32,
}

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(self.id.cmp(&other.id))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexHeader {
    n: usize,
    dim: usize,
    m: usize,
    ef_construction: usize,
    seed: u64,
    entry_point: u32,
    max_level: u32,
    metric: String,
    corpus_hash: String,
    levels: Vec<u32>,
}

/// Layered small-world graph. Layer 0 holds every node; a node of level ℓ
/// appears in layers 0..=ℓ. Adjacency is kept symmetric within each layer.
#[derive(Debug, Clone)]
pub struct HnswIndex {
    m: usize,
    ef_construction: usize,
    seed: u64,
    dim: usize,
    levels: Vec<u32>,
    /// layers[layer][node] -> neighbor ids; empty when the node is absent
    /// from that layer.
    layers: Vec<Vec<Vec<u32>>>,
    entry_point: u32,
    max_level: u32,
    corpus_hash: String,
}

impl HnswIndex {
    pub fn n(&self) -> usize {
        self.levels.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn entry_point(&self) -> u32 {
        self.entry_point
    }

    pub fn max_level(&self) -> u32 {
        self.max_level
    }

    pub fn level(&self, node: u32) -> u32 {
        self.levels[node as usize]
    }

    pub fn neighbors(&self, layer: u32, node: u32) -> &[u32] {
        &self.layers[layer as usize][node as usize]
    }

    pub fn corpus_hash(&self) -> &str {
        &self.corpus_hash
    }

    /// Fails unless the given corpus is the one this index was built over.
    pub fn validate_pairing(&self, corpus: &EmbeddingCorpus) -> Result<(), IndexError> {
        let found = corpus.content_hash();
        if found != self.corpus_hash {
            return Err(IndexError::PairingMismatch {
                expected: self.corpus_hash.clone(),
                found,
            });
        }
        Ok(())
    }

    fn max_degree(&self, layer: u32) -> usize {
        if layer == 0 {
            2 * self.m
        } else {
            self.m
        }
    }

    /// Audit the structural invariants: valid endpoints, per-layer symmetry,
    /// degree caps, level monotonicity, and entry-point maximality.
    pub fn check_invariants(&self) -> Result<(), IndexError> {
        let n = self.n();
        let fail = |msg: String| Err(IndexError::InvariantViolation(msg));
        if self.layers.len() != self.max_level as usize + 1 {
            return fail(format!(
                "expected {} layers, found {}",
                self.max_level + 1,
                self.layers.len()
            ));
        }
        let entry_level = self.levels[self.entry_point as usize];
        if entry_level != self.max_level {
            return fail(format!(
                "entry point level {entry_level} is not the maximum {}",
                self.max_level
            ));
        }
        if let Some(over) = self.levels.iter().position(|&l| l > self.max_level) {
            return fail(format!("node {over} exceeds the maximum level"));
        }
        for (layer, adj) in self.layers.iter().enumerate() {
            if adj.len() != n {
                return fail(format!("layer {layer} adjacency has wrong length"));
            }
            for (node, nbrs) in adj.iter().enumerate() {
                let present = self.levels[node] as usize >= layer;
                if !present && !nbrs.is_empty() {
                    return fail(format!("node {node} has edges above its level {layer}"));
                }
                if nbrs.len() > self.max_degree(layer as u32) {
                    return fail(format!(
                        "node {node} violates the layer-{layer} degree cap"
                    ));
                }
                for &nb in nbrs {
                    if nb as usize >= n {
                        return fail(format!("edge {node}->{nb} leaves the node range"));
                    }
                    if nb as usize == node {
                        return fail(format!("self-loop at node {node}, layer {layer}"));
                    }
                    if (self.levels[nb as usize] as usize) < layer {
                        return fail(format!(
                            "edge {node}->{nb} targets a node absent from layer {layer}"
                        ));
                    }
                    if !adj[nb as usize].contains(&(node as u32)) {
                        return fail(format!(
                            "edge {node}->{nb} at layer {layer} lacks its reverse"
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// Greedy descent (beam width 1) within one layer.
    fn greedy_step(
        &self,
        corpus: &EmbeddingCorpus,
        query: &[f32],
        layer: u32,
        mut cur: u32,
        mut cur_dist: f32,
        evals: &mut u64,
    ) -> (u32, f32) {
        loop {
            let mut improved = false;
            for &nb in self.neighbors(layer, cur) {
                let d = squared_euclidean(query, corpus.vector(nb as usize));
                *evals += 1;
                if d < cur_dist {
                    cur = nb;
                    cur_dist = d;
                    improved = true;
                }
            }
            if !improved {
                return (cur, cur_dist);
            }
        }
    }

    /// Beam search within one layer; returns up to `ef` candidates in
    /// ascending (distance, id) order.
    fn search_layer(
        &self,
        corpus: &EmbeddingCorpus,
        query: &[f32],
        entries: &[(u32, f32)],
        ef: usize,
        layer: u32,
        visited: &mut [bool],
        evals: &mut u64,
    ) -> Vec<(u32, f32)> {
        let mut candidates: BinaryHeap<std::cmp::Reverse<HeapItem>> = BinaryHeap::new();
        let mut results: BinaryHeap<HeapItem> = BinaryHeap::new();
        for &(id, dist) in entries {
            if visited[id as usize] {
                continue;
            }
            visited[id as usize] = true;
            candidates.push(std::cmp::Reverse(HeapItem { dist, id }));
            results.push(HeapItem { dist, id });
            if results.len() > ef {
                results.pop();
            }
        }
        while let Some(std::cmp::Reverse(cur)) = candidates.pop() {
            if results.len() >= ef {
                let worst = results.peek().expect("results non-empty").dist;
                if cur.dist > worst {
                    break;
                }
            }
            for &nb in self.neighbors(layer, cur.id) {
                if visited[nb as usize] {
                    continue;
                }
                visited[nb as usize] = true;
                let d = squared_euclidean(query, corpus.vector(nb as usize));
                *evals += 1;
                if results.len() < ef || d < results.peek().expect("non-empty").dist {
                    candidates.push(std::cmp::Reverse(HeapItem { dist: d, id: nb }));
                    results.push(HeapItem { dist: d, id: nb });
                    if results.len() > ef {
                        results.pop();
                    }
                }
            }
        }
        let mut out: Vec<(u32, f32)> = results.into_iter().map(|h| (h.id, h.dist)).collect();
        out.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        out
    }

    /// Approximate k-nearest-neighbor query: greedy descent through the
    /// upper layers, then a beam of width `ef_search` at layer 0.
    pub fn query(
        &self,
        corpus: &EmbeddingCorpus,
        query: &[f32],
        num_neighbors: usize,
        ef_search: usize,
    ) -> Result<KnnResult, IndexError> {
        if self.n() == 0 {
            return Err(IndexError::EmptyIndex);
        }
        if query.len() != self.dim {
            return Err(IndexError::DimensionMismatch {
                query: query.len(),
                index: self.dim,
            });
        }
        let mut evals: u64 = 0;
        let mut cur = self.entry_point;
        let mut cur_dist = squared_euclidean(query, corpus.vector(cur as usize));
        evals += 1;
        for layer in (1..=self.max_level).rev() {
            (cur, cur_dist) = self.greedy_step(corpus, query, layer, cur, cur_dist, &mut evals);
        }
        let ef = ef_search.max(num_neighbors).max(1);
        let mut visited = vec![false; self.n()];
        let mut found = self.search_layer(
            corpus,
            query,
            &[(cur, cur_dist)],
            ef,
            0,
            &mut visited,
            &mut evals,
        );
        found.truncate(num_neighbors);
        Ok(KnnResult {
            neighbors: found,
            distance_evaluations: evals,
        })
    }

    /// Surface of the top-1 query result for an estimated embedding.
    pub fn nearest_token(
        &self,
        corpus: &EmbeddingCorpus,
        embedding: &[f32],
        ef_search: usize,
    ) -> Result<(Token, f32), IndexError> {
        let result = self.query(corpus, embedding, 1, ef_search)?;
        let &(id, dist) = result.neighbors.first().ok_or(IndexError::EmptyIndex)?;
        Ok((corpus.token(id as usize).clone(), dist))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), IndexError> {
        let header = IndexHeader {
            n: self.n(),
            dim: self.dim,
            m: self.m,
            ef_construction: self.ef_construction,
            seed: self.seed,
            entry_point: self.entry_point,
            max_level: self.max_level,
            metric: "squared_euclidean".to_owned(),
            corpus_hash: self.corpus_hash.clone(),
            levels: self.levels.clone(),
        };
        let header_bytes =
            serde_json::to_vec(&header).map_err(|e| io::Error::other(e.to_string()))?;
        let mut out = io::BufWriter::new(fs::File::create(path)?);
        out.write_all(MAGIC)?;
        out.write_all(&FORMAT_VERSION.to_le_bytes())?;
        out.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
        out.write_all(&header_bytes)?;
        for layer in &self.layers {
            let present: Vec<(u32, &Vec<u32>)> = layer
                .iter()
                .enumerate()
                .filter(|(_, nbrs)| !nbrs.is_empty())
                .map(|(id, nbrs)| (id as u32, nbrs))
                .collect();
            out.write_all(&(present.len() as u32).to_le_bytes())?;
            for (id, nbrs) in present {
                out.write_all(&id.to_le_bytes())?;
                out.write_all(&(nbrs.len() as u32).to_le_bytes())?;
                for &nb in nbrs {
                    out.write_all(&nb.to_le_bytes())?;
                }
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, IndexError> {
        let mut reader = CountingReader {
            inner: io::BufReader::new(fs::File::open(path)?),
            offset: 0,
        };
        let mut magic = [0u8; 8];
        reader.read_exact_at(&mut magic)?;
        if &magic != MAGIC {
            return Err(IndexError::Corrupt {
                offset: 0,
                reason: "bad magic bytes".into(),
            });
        }
        let version = reader.read_u32()?;
        if version != FORMAT_VERSION {
            return Err(IndexError::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let header_len = reader.read_u64()? as usize;
        let header_offset = reader.offset;
        let mut header_bytes = vec![0u8; header_len];
        reader.read_exact_at(&mut header_bytes)?;
        let header: IndexHeader =
            serde_json::from_slice(&header_bytes).map_err(|e| IndexError::Corrupt {
                offset: header_offset,
                reason: format!("header JSON: {e}"),
            })?;
        if header.levels.len() != header.n {
            return Err(IndexError::Corrupt {
                offset: header_offset,
                reason: "level table length disagrees with n".into(),
            });
        }
        let mut layers = vec![vec![Vec::new(); header.n]; header.max_level as usize + 1];
        for layer in layers.iter_mut() {
            let count = reader.read_u32()? as usize;
            for _ in 0..count {
                let node_offset = reader.offset;
                let id = reader.read_u32()? as usize;
                if id >= header.n {
                    return Err(IndexError::Corrupt {
                        offset: node_offset,
                        reason: format!("node id {id} out of range"),
                    });
                }
                let degree = reader.read_u32()? as usize;
                let mut nbrs = Vec::with_capacity(degree);
                for _ in 0..degree {
                    let nb = reader.read_u32()?;
                    if nb as usize >= header.n {
                        return Err(IndexError::Corrupt {
                            offset: node_offset,
                            reason: format!("neighbor id {nb} out of range"),
                        });
                    }
                    nbrs.push(nb);
                }
                layer[id] = nbrs;
            }
        }
        let index = HnswIndex {
            m: header.m,
            ef_construction: header.ef_construction,
            seed: header.seed,
            dim: header.dim,
            levels: header.levels,
            layers,
            entry_point: header.entry_point,
            max_level: header.max_level,
            corpus_hash: header.corpus_hash,
        };
        index.check_invariants()?;
        Ok(index)
    }
}

struct CountingReader<R> {
    inner: R,
    offset: u64,
}

impl<R: io::Read> CountingReader<R> {
    fn read_exact_at(&mut self, buf: &mut [u8]) -> Result<(), IndexError> {
        let at = self.offset;
        self.inner.read_exact(buf).map_err(|e| IndexError::Corrupt {
            offset: at,
            reason: format!("unexpected end of file ({e})"),
        })?;
        self.offset += buf.len() as u64;
        Ok(())
    }

    fn read_u32(&mut self) -> Result<u32, IndexError> {
        let mut b = [0u8; 4];
        self.read_exact_at(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    fn read_u64(&mut self) -> Result<u64, IndexError> {
        let mut b = [0u8; 8];
        self.read_exact_at(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }
}

struct Builder<'a> {
    corpus: &'a EmbeddingCorpus,
    index: HnswIndex,
}

impl<'a> Builder<'a> {
    /// Neighbor selection: walk candidates in ascending distance order and
    /// keep those closer to the target than to every already-kept neighbor.
    fn select_neighbors(&self, target: &[f32], candidates: &[(u32, f32)], m: usize) -> Vec<u32> {
        let _ = target;
        let mut selected: Vec<(u32, f32)> = Vec::with_capacity(m);
        for &(cand, dist_to_target) in candidates {
            if selected.len() >= m {
                break;
            }
            let cand_vec = self.corpus.vector(cand as usize);
            let keep = selected.iter().all(|&(kept, _)| {
                squared_euclidean(cand_vec, self.corpus.vector(kept as usize)) > dist_to_target
            });
            if keep {
                selected.push((cand, dist_to_target));
            }
        }
        selected.into_iter().map(|(id, _)| id).collect()
    }

    fn add_edge(&mut self, layer: u32, a: u32, b: u32) {
        self.index.layers[layer as usize][a as usize].push(b);
        self.index.layers[layer as usize][b as usize].push(a);
    }

    /// Re-select a node's neighbor list when it exceeds the layer cap,
    /// removing reverse edges of dropped neighbors to preserve symmetry.
    fn shrink(&mut self, layer: u32, node: u32) {
        let cap = self.index.max_degree(layer);
        let current = self.index.layers[layer as usize][node as usize].clone();
        if current.len() <= cap {
            return;
        }
        let node_vec = self.corpus.vector(node as usize);
        let mut with_dist: Vec<(u32, f32)> = current
            .iter()
            .map(|&nb| (nb, squared_euclidean(node_vec, self.corpus.vector(nb as usize))))
            .collect();
        with_dist.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        let kept = self.select_neighbors(node_vec, &with_dist, cap);
        for &nb in &current {
            if !kept.contains(&nb) {
                self.index.layers[layer as usize][nb as usize].retain(|&x| x != node);
            }
        }
        self.index.layers[layer as usize][node as usize] = kept;
    }

    fn insert(&mut self, node: u32) {
        let level = self.index.levels[node as usize];
        // New top level: grow the layer stack before searching.
        while self.index.layers.len() <= level as usize {
            self.index.layers.push(vec![Vec::new(); self.index.n()]);
        }
        let query = self.corpus.vector(node as usize);
        if node == 0 {
            self.index.entry_point = 0;
            self.index.max_level = level;
            return;
        }

        let mut evals = 0u64;
        let mut cur = self.index.entry_point;
        let mut cur_dist = squared_euclidean(query, self.corpus.vector(cur as usize));
        evals += 1;
        let top = self.index.max_level;
        for layer in ((level + 1)..=top).rev() {
            (cur, cur_dist) =
                self.index
                    .greedy_step(self.corpus, query, layer, cur, cur_dist, &mut evals);
        }

        let mut entries = vec![(cur, cur_dist)];
        for layer in (0..=level.min(top)).rev() {
            let mut visited = vec![false; self.index.n()];
            let found = self.index.search_layer(
                self.corpus,
                query,
                &entries,
                self.index.ef_construction,
                layer,
                &mut visited,
                &mut evals,
            );
            let selected = self.select_neighbors(query, &found, self.index.m);
            for &nb in &selected {
                self.add_edge(layer, node, nb);
            }
            for &nb in &selected {
                if self.index.layers[layer as usize][nb as usize].len()
                    > self.index.max_degree(layer)
                {
                    self.shrink(layer, nb);
                }
            }
            entries = found;
        }

        if level > self.index.max_level {
            self.index.max_level = level;
            self.index.entry_point = node;
        }
    }
}

/// Build the layered graph over every corpus row. Node levels are drawn as
/// floor(-ln(u) / ln(M)) from a per-(seed, node) stream, so builds are
/// reproducible no matter how insertion is scheduled.
pub fn build_index(
    corpus: &EmbeddingCorpus,
    m: usize,
    ef_construction: usize,
    seed: u64,
) -> Result<HnswIndex, IndexError> {
    if corpus.n() == 0 {
        return Err(IndexError::EmptyCorpus);
    }
    assert!(m >= 1, "M must be at least 1");
    let n = corpus.n();
    let lambda = 1.0 / (m.max(2) as f64).ln();
    let levels: Vec<u32> = (0..n)
        .map(|i| sample_level(seed, i as u64, lambda))
        .collect();

    let index = HnswIndex {
        m,
        ef_construction,
        seed,
        dim: corpus.k(),
        levels,
        layers: vec![vec![Vec::new(); n]],
        entry_point: 0,
        max_level: 0,
        corpus_hash: corpus.content_hash(),
    };
    let mut builder = Builder { corpus, index };
    for node in 0..n as u32 {
        builder.insert(node);
    }
    debug_assert!(builder.index.check_invariants().is_ok());
    Ok(builder.index)
}

fn sample_level(seed: u64, node: u64, lambda: f64) -> u32 {
    use rand::Rng as _;
    let mut rng = seeding::rng(seeding::derive(seed, node));
    let mut u: f64 = rng.random();
    if u <= 0.0 {
        u = f64::MIN_POSITIVE;
    }
    (-u.ln() * lambda).floor() as u32
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::Token;

    fn corpus_from(rows: &[(&str, &[f32])]) -> EmbeddingCorpus {
        let k = rows[0].1.len();
        let tokens = rows
            .iter()
            .map(|(t, _)| Token::new(*t).unwrap())
            .collect::<Vec<_>>();
        let values = rows.iter().flat_map(|(_, v)| v.iter().copied()).collect();
        EmbeddingCorpus::new(tokens, values, k).unwrap()
    }

    fn gaussian_corpus(n: usize, k: usize, seed: u64) -> EmbeddingCorpus {
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = seeding::rng(seed);
        let tokens = (0..n)
            .map(|i| Token::new(format!("t{i}")).unwrap())
            .collect();
        let normal = StandardNormal;
        let values = (0..n * k)
            .map(|_| {
                let v: f64 = normal.sample(&mut rng);
                v as f32
            })
            .collect();
        EmbeddingCorpus::new(tokens, values, k).unwrap()
    }

    #[test]
    fn brute_force_examples() {
        let corpus = corpus_from(&[
            ("a", &[0.0, 0.0]),
            ("b", &[1.0, 0.0]),
            ("c", &[0.0, 2.0]),
        ]);
        let r = brute_force_knn(&corpus, &[0.9, 0.1], 1).unwrap();
        assert_eq!(r.ids(), vec![1]);
        assert_eq!(r.distance_evaluations, 3);

        // exact match comes back first with distance zero
        let r = brute_force_knn(&corpus, &[0.0, 2.0], 2).unwrap();
        assert_eq!(r.neighbors[0], (2, 0.0));

        // clipping
        let r = brute_force_knn(&corpus, &[0.0, 0.0], 10).unwrap();
        assert_eq!(r.neighbors.len(), 3);
    }

    #[test]
    fn brute_force_breaks_ties_by_lower_id() {
        let corpus = corpus_from(&[("a", &[1.0, 0.0]), ("b", &[-1.0, 0.0])]);
        let r = brute_force_knn(&corpus, &[0.0, 0.0], 2).unwrap();
        assert_eq!(r.ids(), vec![0, 1]);
    }

    #[test]
    fn single_node_index() {
        let corpus = corpus_from(&[("only", &[1.0, 2.0])]);
        let index = build_index(&corpus, 4, 10, 7).unwrap();
        assert_eq!(index.n(), 1);
        assert_eq!(index.entry_point(), 0);
        assert!(index.neighbors(0, 0).is_empty());
        let r = index.query(&corpus, &[0.0, 0.0], 1, 8).unwrap();
        assert_eq!(r.ids(), vec![0]);
        index.check_invariants().unwrap();
    }

    #[test]
    fn empty_corpus_is_rejected() {
        let corpus = EmbeddingCorpus::new(Vec::new(), Vec::new(), 3).unwrap();
        assert!(matches!(
            build_index(&corpus, 4, 10, 7),
            Err(IndexError::EmptyCorpus)
        ));
        assert!(matches!(
            brute_force_knn(&corpus, &[0.0; 3], 1),
            Err(IndexError::EmptyCorpus)
        ));
    }

    #[test]
    fn self_match_returns_distance_zero() {
        let corpus = gaussian_corpus(300, 8, 3);
        let index = build_index(&corpus, 8, 100, 11).unwrap();
        for probe in [0usize, 17, 123, 299] {
            let r = index.query(&corpus, corpus.vector(probe), 1, 32).unwrap();
            assert_eq!(r.neighbors[0], (probe as u32, 0.0));
        }
    }

    #[test]
    fn structural_invariants_hold_after_build() {
        let corpus = gaussian_corpus(800, 12, 5);
        let index = build_index(&corpus, 8, 60, 5).unwrap();
        index.check_invariants().unwrap();
        assert!(index.max_level() >= 1, "800 nodes should stack layers");
    }

    #[test]
    fn degree_caps_are_enforced() {
        let corpus = gaussian_corpus(100, 4, 9);
        let index = build_index(&corpus, 8, 64, 2).unwrap();
        for node in 0..100u32 {
            assert!(index.neighbors(0, node).len() <= 16);
        }
    }

    #[test]
    fn full_beam_matches_brute_force() {
        let corpus = gaussian_corpus(200, 6, 21);
        let index = build_index(&corpus, 8, 80, 21).unwrap();
        for probe in 0..20 {
            let query: Vec<f32> = corpus.vector(probe * 7).iter().map(|v| v + 0.01).collect();
            let exact = brute_force_knn(&corpus, &query, 10).unwrap();
            let approx = index.query(&corpus, &query, 10, corpus.n()).unwrap();
            assert_eq!(exact.neighbors, approx.neighbors);
        }
    }

    #[test]
    fn recall_at_one_on_small_gaussian_corpus() {
        let corpus = gaussian_corpus(1000, 16, 40);
        let index = build_index(&corpus, 16, 100, 40).unwrap();
        let queries = gaussian_corpus(100, 16, 41);
        let mut hits = 0;
        for q in 0..queries.n() {
            let query = queries.vector(q);
            let exact = brute_force_knn(&corpus, query, 1).unwrap();
            let approx = index.query(&corpus, query, 1, 64).unwrap();
            if exact.ids() == approx.ids() {
                hits += 1;
            }
        }
        assert!(hits >= 98, "recall@1 too low: {hits}/100");
    }

    #[test]
    fn nearest_token_decodes_cluster_membership() {
        // two far-apart clusters; a probe near cluster A decodes to an A token
        let corpus = corpus_from(&[
            ("a0", &[10.0, 10.0]),
            ("a1", &[10.5, 9.5]),
            ("b0", &[-10.0, -10.0]),
            ("b1", &[-9.5, -10.5]),
        ]);
        let index = build_index(&corpus, 4, 16, 1).unwrap();
        let (token, _) = index.nearest_token(&corpus, &[8.0, 8.0], 8).unwrap();
        assert!(token.as_str().starts_with('a'));
        let exact = brute_force_knn(&corpus, &[8.0, 8.0], 1).unwrap();
        assert_eq!(corpus.token(exact.ids()[0] as usize), &token);
    }

    #[test]
    fn save_load_round_trip_preserves_queries() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.hnsw");
        let corpus = gaussian_corpus(400, 8, 17);
        let index = build_index(&corpus, 8, 60, 17).unwrap();
        index.save(&path).unwrap();
        let loaded = HnswIndex::load(&path).unwrap();
        loaded.validate_pairing(&corpus).unwrap();
        let probes = gaussian_corpus(50, 8, 18);
        for p in 0..probes.n() {
            let a = index.query(&corpus, probes.vector(p), 5, 32).unwrap();
            let b = loaded.query(&corpus, probes.vector(p), 5, 32).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn load_rejects_truncation_version_and_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.hnsw");
        let corpus = gaussian_corpus(50, 4, 3);
        let index = build_index(&corpus, 4, 20, 3).unwrap();
        index.save(&path).unwrap();

        let bytes = std::fs::read(&path).unwrap();

        let truncated = dir.path().join("trunc.hnsw");
        std::fs::write(&truncated, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(
            HnswIndex::load(&truncated),
            Err(IndexError::Corrupt { .. })
        ));

        let mut bumped = bytes.clone();
        bumped[8] = 99; // version field
        let vpath = dir.path().join("ver.hnsw");
        std::fs::write(&vpath, &bumped).unwrap();
        assert!(matches!(
            HnswIndex::load(&vpath),
            Err(IndexError::VersionMismatch { found: 99, .. })
        ));

        let mut mangled = bytes;
        mangled[0] = b'X';
        let mpath = dir.path().join("magic.hnsw");
        std::fs::write(&mpath, &mangled).unwrap();
        assert!(matches!(
            HnswIndex::load(&mpath),
            Err(IndexError::Corrupt { offset: 0, .. })
        ));
    }

    #[test]
    fn pairing_mismatch_is_detected() {
        let corpus = gaussian_corpus(30, 4, 3);
        let other = gaussian_corpus(30, 4, 4);
        let index = build_index(&corpus, 4, 20, 3).unwrap();
        assert!(index.validate_pairing(&corpus).is_ok());
        assert!(matches!(
            index.validate_pairing(&other),
            Err(IndexError::PairingMismatch { .. })
        ));
    }

    #[test]
    fn builds_are_deterministic_for_fixed_seed() {
        let corpus = gaussian_corpus(200, 6, 8);
        let a = build_index(&corpus, 8, 40, 9).unwrap();
        let b = build_index(&corpus, 8, 40, 9).unwrap();
        assert_eq!(a.levels, b.levels);
        assert_eq!(a.layers, b.layers);
        assert_eq!(a.entry_point, b.entry_point);
    }
}
