//! Entity index: id-addressed entity vectors with exact brute-force search
//! and a deterministic HNSW-style approximate search, persisted to disk.
//!
//! Similarity is the raw inner product. Entity vectors are unit-norm by
//! construction, so maximum-inner-product search coincides with cosine.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::EntityRecord;
use crate::encoder::{encode_entity, EncoderParams};
use crate::error::{BelaError, Result};

pub const INDEX_MAGIC: &[u8; 8] = b"BELAIDX1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndexKind {
    Exact,
    Hnsw,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BuildParams {
    /// Max neighbors per node (layer 0 allows 2M).
    pub m: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
    pub seed: u64,
}

impl Default for BuildParams {
    fn default() -> Self {
        BuildParams {
            m: 16,
            ef_construction: 200,
            ef_search: 128,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Storage {
    F32(Vec<f32>),
    /// Symmetric per-vector int8: value ≈ code * scale.
    Int8 { codes: Vec<i8>, scales: Vec<f32> },
}

#[derive(Debug, Clone, PartialEq)]
struct HnswGraph {
    entry: u32,
    max_level: usize,
    /// neighbors[node][level] = adjacency list.
    neighbors: Vec<Vec<Vec<u32>>>,
}

#[derive(Debug, Clone)]
pub struct EntityIndex {
    pub ids: Vec<String>,
    pub dim: usize,
    kind: IndexKind,
    storage: Storage,
    graph: Option<HnswGraph>,
    pub build_params: BuildParams,
}

/// (similarity, node) ordered by similarity then smaller node id, so heap
/// behavior is deterministic under score ties.
#[derive(PartialEq)]
struct Cand(f64, u32);

impl Eq for Cand {}

impl PartialOrd for Cand {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Cand {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0).then(other.1.cmp(&self.1))
    }
}

impl EntityIndex {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn kind(&self) -> IndexKind {
        self.kind
    }

    pub fn is_quantized(&self) -> bool {
        matches!(self.storage, Storage::Int8 { .. })
    }

    fn score(&self, row: usize, query: &[f64]) -> f64 {
        let d = self.dim;
        match &self.storage {
            Storage::F32(v) => {
                let r = &v[row * d..(row + 1) * d];
                r.iter().zip(query).map(|(&x, &q)| x as f64 * q).sum()
            }
            Storage::Int8 { codes, scales } => {
                let r = &codes[row * d..(row + 1) * d];
                let s: f64 = r.iter().zip(query).map(|(&x, &q)| x as f64 * q).sum();
                s * scales[row] as f64
            }
        }
    }

    /// Dense f32 row (dequantized if needed).
    pub fn vector(&self, row: usize) -> Vec<f32> {
        let d = self.dim;
        match &self.storage {
            Storage::F32(v) => v[row * d..(row + 1) * d].to_vec(),
            Storage::Int8 { codes, scales } => codes[row * d..(row + 1) * d]
                .iter()
                .map(|&c| c as f32 * scales[row])
                .collect(),
        }
    }

    pub fn row_of(&self, entity_id: &str) -> Option<usize> {
        self.ids.iter().position(|id| id == entity_id)
    }

    fn check_query(&self, query: &[f64], k: usize) -> Result<()> {
        if self.is_empty() {
            return Err(BelaError::EmptyIndex);
        }
        if k == 0 {
            return Err(BelaError::Invalid("k must be >= 1".into()));
        }
        if query.len() != self.dim {
            return Err(BelaError::DimMismatch {
                expected: self.dim,
                got: query.len(),
            });
        }
        Ok(())
    }

    /// Top-k by inner product, descending; ties broken by entity id. Exact
    /// indexes return the true top-k, HNSW a best-effort beam result.
    pub fn search(&self, query: &[f64], k: usize) -> Result<Vec<(String, f64)>> {
        self.check_query(query, k)?;
        let rows = match self.kind {
            IndexKind::Exact => {
                let mut all: Vec<(usize, f64)> =
                    (0..self.len()).map(|r| (r, self.score(r, query))).collect();
                all.sort_by(|a, b| b.1.total_cmp(&a.1).then(self.ids[a.0].cmp(&self.ids[b.0])));
                all.truncate(k);
                all
            }
            IndexKind::Hnsw => self.hnsw_search(query, k),
        };
        Ok(rows
            .into_iter()
            .map(|(r, s)| (self.ids[r].clone(), s))
            .collect())
    }

    fn hnsw_search(&self, query: &[f64], k: usize) -> Vec<(usize, f64)> {
        let graph = self.graph.as_ref().expect("hnsw index without graph");
        let mut ep = graph.entry;
        for level in (1..=graph.max_level).rev() {
            ep = self.greedy_descend(query, ep, level, graph);
        }
        let ef = self.build_params.ef_search.max(k);
        let mut found = self.search_layer(query, &[ep], ef, 0, graph);
        found.sort_by(|a, b| b.0.total_cmp(&a.0).then(self.ids[a.1 as usize].cmp(&self.ids[b.1 as usize])));
        found
            .into_iter()
            .take(k)
            .map(|Cand(s, r)| (r as usize, s))
            .collect()
    }

    fn greedy_descend(&self, query: &[f64], mut ep: u32, level: usize, graph: &HnswGraph) -> u32 {
        let mut best = self.score(ep as usize, query);
        loop {
            let mut improved = false;
            for &nb in &graph.neighbors[ep as usize][level] {
                let s = self.score(nb as usize, query);
                if s > best || (s == best && nb < ep) {
                    best = s;
                    ep = nb;
                    improved = true;
                }
            }
            if !improved {
                return ep;
            }
        }
    }

    /// Classic beam search on one layer; returns up to `ef` candidates.
    fn search_layer(
        &self,
        query: &[f64],
        entry_points: &[u32],
        ef: usize,
        level: usize,
        graph: &HnswGraph,
    ) -> Vec<Cand> {
        use std::cmp::Reverse;
        use std::collections::BinaryHeap;

        let mut visited = vec![false; self.len()];
        let mut candidates: BinaryHeap<Cand> = BinaryHeap::new();
        let mut results: BinaryHeap<Reverse<Cand>> = BinaryHeap::new();

        for &ep in entry_points {
            if visited[ep as usize] {
                continue;
            }
            visited[ep as usize] = true;
            let s = self.score(ep as usize, query);
            candidates.push(Cand(s, ep));
            results.push(Reverse(Cand(s, ep)));
        }

        while let Some(Cand(s, node)) = candidates.pop() {
            let worst = results.peek().map(|Reverse(c)| c.0).unwrap_or(f64::NEG_INFINITY);
            if results.len() >= ef && s < worst {
                break;
            }
            for &nb in &graph.neighbors[node as usize][level] {
                if visited[nb as usize] {
                    continue;
                }
                visited[nb as usize] = true;
                let ns = self.score(nb as usize, query);
                let worst = results.peek().map(|Reverse(c)| c.0).unwrap_or(f64::NEG_INFINITY);
                if results.len() < ef || ns > worst {
                    candidates.push(Cand(ns, nb));
                    results.push(Reverse(Cand(ns, nb)));
                    if results.len() > ef {
                        results.pop();
                    }
                }
            }
        }
        results.into_iter().map(|Reverse(c)| c).collect()
    }

    pub fn exact_from_vectors(ids: Vec<String>, vectors: Vec<f32>, dim: usize) -> Result<Self> {
        Self::validate_ids(&ids)?;
        if vectors.len() != ids.len() * dim {
            return Err(BelaError::DimMismatch {
                expected: ids.len() * dim,
                got: vectors.len(),
            });
        }
        Ok(EntityIndex {
            ids,
            dim,
            kind: IndexKind::Exact,
            storage: Storage::F32(vectors),
            graph: None,
            build_params: BuildParams::default(),
        })
    }

    pub fn hnsw_from_vectors(
        ids: Vec<String>,
        vectors: Vec<f32>,
        dim: usize,
        build_params: BuildParams,
    ) -> Result<Self> {
        let mut index = Self::exact_from_vectors(ids, vectors, dim)?;
        index.kind = IndexKind::Hnsw;
        index.build_params = build_params;
        index.graph = Some(index.build_graph());
        Ok(index)
    }

    fn validate_ids(ids: &[String]) -> Result<()> {
        let mut seen = HashSet::new();
        for id in ids {
            if !seen.insert(id) {
                return Err(BelaError::DuplicateEntity(id.clone()));
            }
        }
        Ok(())
    }

    fn build_graph(&self) -> HnswGraph {
        let params = self.build_params;
        let m = params.m.max(1);
        let level_mult = 1.0 / (m as f64).ln().max(1e-9);
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let mut graph = HnswGraph {
            entry: 0,
            max_level: 0,
            neighbors: Vec::with_capacity(self.len()),
        };

        for node in 0..self.len() as u32 {
            let u: f64 = rng.gen::<f64>().max(1e-300);
            let level = (-u.ln() * level_mult).floor() as usize;
            graph.neighbors.push(vec![Vec::new(); level + 1]);
            if node == 0 {
                graph.entry = 0;
                graph.max_level = level;
                continue;
            }
            let query = self.row_f64(node as usize);
            let mut ep = graph.entry;
            for l in ((level + 1)..=graph.max_level).rev() {
                ep = self.greedy_descend(&query, ep, l, &graph);
            }
            for l in (0..=level.min(graph.max_level)).rev() {
                let mut found = self.search_layer(&query, &[ep], params.ef_construction, l, &graph);
                found.sort_by(|a, b| b.cmp(a));
                let cap = if l == 0 { 2 * m } else { m };
                let selected: Vec<u32> = found.iter().take(m).map(|c| c.1).collect();
                ep = found.first().map(|c| c.1).unwrap_or(ep);
                for &nb in &selected {
                    graph.neighbors[node as usize][l].push(nb);
                    graph.neighbors[nb as usize][l].push(node);
                    if graph.neighbors[nb as usize][l].len() > cap {
                        self.prune_neighbors(nb, l, cap, &mut graph);
                    }
                }
            }
            if level > graph.max_level {
                graph.max_level = level;
                graph.entry = node;
            }
        }
        graph
    }

    fn prune_neighbors(&self, node: u32, level: usize, cap: usize, graph: &mut HnswGraph) {
        let base = self.row_f64(node as usize);
        let mut scored: Vec<Cand> = graph.neighbors[node as usize][level]
            .iter()
            .map(|&nb| Cand(self.score(nb as usize, &base), nb))
            .collect();
        scored.sort_by(|a, b| b.cmp(a));
        scored.truncate(cap);
        graph.neighbors[node as usize][level] = scored.into_iter().map(|c| c.1).collect();
    }

    fn row_f64(&self, row: usize) -> Vec<f64> {
        self.vector(row).into_iter().map(|x| x as f64).collect()
    }

    /// Int8 copy of this index (per-vector symmetric scales). The graph and
    /// ids are preserved; only vector storage changes.
    pub fn quantized(&self) -> Self {
        let d = self.dim;
        let mut codes = Vec::with_capacity(self.len() * d);
        let mut scales = Vec::with_capacity(self.len());
        for r in 0..self.len() {
            let v = self.vector(r);
            let max = v.iter().fold(0.0f32, |a, &x| a.max(x.abs()));
            let scale = if max == 0.0 { 1.0 } else { max / 127.0 };
            scales.push(scale);
            codes.extend(v.iter().map(|&x| (x / scale).round().clamp(-127.0, 127.0) as i8));
        }
        EntityIndex {
            ids: self.ids.clone(),
            dim: d,
            kind: self.kind,
            storage: Storage::Int8 { codes, scales },
            graph: self.graph.clone(),
            build_params: self.build_params,
        }
    }
}

fn encode_catalog(catalog: &[EntityRecord], params: &EncoderParams) -> Result<(Vec<String>, Vec<f32>)> {
    let mut ids = Vec::with_capacity(catalog.len());
    let mut vectors = Vec::with_capacity(catalog.len() * params.config.dim);
    for rec in catalog {
        ids.push(rec.entity_id.clone());
        let v = encode_entity(rec, params)?;
        vectors.extend(v.into_iter().map(|x| x as f32));
    }
    Ok((ids, vectors))
}

pub fn build_exact(catalog: &[EntityRecord], params: &EncoderParams) -> Result<EntityIndex> {
    if catalog.is_empty() {
        return Err(BelaError::Invalid("catalog is empty".into()));
    }
    let (ids, vectors) = encode_catalog(catalog, params)?;
    EntityIndex::exact_from_vectors(ids, vectors, params.config.dim)
}

pub fn build_approximate(
    catalog: &[EntityRecord],
    params: &EncoderParams,
    build_params: BuildParams,
) -> Result<EntityIndex> {
    if catalog.is_empty() {
        return Err(BelaError::Invalid("catalog is empty".into()));
    }
    let (ids, vectors) = encode_catalog(catalog, params)?;
    EntityIndex::hnsw_from_vectors(ids, vectors, params.config.dim, build_params)
}

// ---------------------------------------------------------------------------
// Persistence

struct Writer<W: Write> {
    inner: W,
    path: String,
}

impl<W: Write> Writer<W> {
    fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.inner.write_all(b).map_err(|e| BelaError::io(&*self.path, e))
    }
    fn u8(&mut self, v: u8) -> Result<()> {
        self.bytes(&[v])
    }
    fn u32(&mut self, v: u32) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn u64(&mut self, v: u64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn f32(&mut self, v: f32) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }
}

struct Reader<R: Read> {
    inner: R,
    path: String,
}

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| BelaError::format(&*self.path, "truncated file"))?;
        Ok(buf)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }
}

impl EntityIndex {
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| BelaError::io(path.display().to_string(), e))?;
        let mut w = Writer {
            inner: std::io::BufWriter::new(file),
            path: path.display().to_string(),
        };
        w.bytes(INDEX_MAGIC)?;
        w.u8(match self.kind {
            IndexKind::Exact => 0,
            IndexKind::Hnsw => 1,
        })?;
        w.u8(if self.is_quantized() { 1 } else { 0 })?;
        w.u32(self.len() as u32)?;
        w.u32(self.dim as u32)?;
        for id in &self.ids {
            let b = id.as_bytes();
            w.u32(b.len() as u32)?;
            w.bytes(b)?;
        }
        match &self.storage {
            Storage::F32(v) => {
                for &x in v {
                    w.f32(x)?;
                }
            }
            Storage::Int8 { codes, scales } => {
                let raw: Vec<u8> = codes.iter().map(|&c| c as u8).collect();
                w.bytes(&raw)?;
                for &s in scales {
                    w.f32(s)?;
                }
            }
        }
        w.u32(self.build_params.m as u32)?;
        w.u32(self.build_params.ef_construction as u32)?;
        w.u32(self.build_params.ef_search as u32)?;
        w.u64(self.build_params.seed)?;
        if let Some(graph) = &self.graph {
            w.u32(graph.entry)?;
            w.u32(graph.max_level as u32)?;
            for node in &graph.neighbors {
                w.u32(node.len() as u32)?;
                for level in node {
                    w.u32(level.len() as u32)?;
                    for &nb in level {
                        w.u32(nb)?;
                    }
                }
            }
        }
        w.inner.flush().map_err(|e| BelaError::io(path.display().to_string(), e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| BelaError::io(path.display().to_string(), e))?;
        let pathstr = path.display().to_string();
        let mut r = Reader {
            inner: std::io::BufReader::new(file),
            path: pathstr.clone(),
        };
        let magic = r.bytes(8)?;
        if magic != INDEX_MAGIC {
            return Err(BelaError::format(pathstr, "bad magic (expected BELAIDX1)"));
        }
        let kind = match r.u8()? {
            0 => IndexKind::Exact,
            1 => IndexKind::Hnsw,
            k => return Err(BelaError::format(pathstr, format!("unknown index kind {k}"))),
        };
        let quantized = match r.u8()? {
            0 => false,
            1 => true,
            s => return Err(BelaError::format(pathstr, format!("unknown storage mode {s}"))),
        };
        let n = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let mut ids = Vec::with_capacity(n);
        for _ in 0..n {
            let len = r.u32()? as usize;
            let raw = r.bytes(len)?;
            ids.push(String::from_utf8(raw).map_err(|_| BelaError::format(&*r.path, "invalid utf-8 id"))?);
        }
        let storage = if quantized {
            let raw = r.bytes(n * dim)?;
            let codes: Vec<i8> = raw.into_iter().map(|b| b as i8).collect();
            let mut scales = Vec::with_capacity(n);
            for _ in 0..n {
                scales.push(r.f32()?);
            }
            Storage::Int8 { codes, scales }
        } else {
            let mut v = Vec::with_capacity(n * dim);
            for _ in 0..n * dim {
                v.push(r.f32()?);
            }
            Storage::F32(v)
        };
        let build_params = BuildParams {
            m: r.u32()? as usize,
            ef_construction: r.u32()? as usize,
            ef_search: r.u32()? as usize,
            seed: r.u64()?,
        };
        let graph = if kind == IndexKind::Hnsw {
            let entry = r.u32()?;
            let max_level = r.u32()? as usize;
            let mut neighbors = Vec::with_capacity(n);
            for _ in 0..n {
                let levels = r.u32()? as usize;
                let mut node = Vec::with_capacity(levels);
                for _ in 0..levels {
                    let count = r.u32()? as usize;
                    let mut list = Vec::with_capacity(count);
                    for _ in 0..count {
                        let nb = r.u32()?;
                        if nb as usize >= n {
                            return Err(BelaError::format(&*r.path, "neighbor id out of range"));
                        }
                        list.push(nb);
                    }
                    node.push(list);
                }
                neighbors.push(node);
            }
            Some(HnswGraph {
                entry,
                max_level,
                neighbors,
            })
        } else {
            None
        };
        Ok(EntityIndex {
            ids,
            dim,
            kind,
            storage,
            graph,
            build_params,
        })
    }
}

impl PartialEq for EntityIndex {
    fn eq(&self, other: &Self) -> bool {
        self.ids == other.ids
            && self.dim == other.dim
            && self.kind == other.kind
            && self.storage == other.storage
            && self.graph == other.graph
            && self.build_params == other.build_params
    }
}
