//! Cosine-similarity nearest-neighbour search over unit-norm embeddings:
//! an exact scan and an inverted-file index partitioned by spherical k-means.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};

/// Allowed deviation of a row norm from 1. Pools stored as 32-bit floats
/// carry rounding error of order 1e-7.
const UNIT_NORM_TOLERANCE: f64 = 1e-4;

/// Embeddings with their identifiers.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub ids: Vec<String>,
    pub vectors: Matrix,
}

impl EmbeddingSet {
    pub fn new(ids: Vec<String>, vectors: Matrix) -> Result<Self> {
        if ids.len() != vectors.rows() {
            return Err(Error::shape(format!("{} ids for {} vectors", ids.len(), vectors.rows())));
        }
        Ok(Self { ids, vectors })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|i| i == id)
    }

    pub fn save(&self, pool_path: &Path, ids_path: &Path) -> Result<()> {
        write_pool(&self.vectors, BufWriter::new(File::create(pool_path)?))?;
        write_ids(&self.ids, BufWriter::new(File::create(ids_path)?))
    }

    pub fn load(pool_path: &Path, ids_path: &Path) -> Result<Self> {
        let vectors = read_pool(BufReader::new(File::open(pool_path)?))?;
        let ids = read_ids(BufReader::new(File::open(ids_path)?))?;
        Self::new(ids, vectors)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IndexMode {
    Exact,
    Partitioned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexConfig {
    pub mode: IndexMode,
    pub clusters: usize,
    pub probes: usize,
    pub kmeans_iters: usize,
    pub seed: u64,
}

impl IndexConfig {
    pub fn exact() -> Self {
        Self {
            mode: IndexMode::Exact,
            clusters: 1,
            probes: 1,
            kmeans_iters: 0,
            seed: 0,
        }
    }

    pub fn partitioned(clusters: usize, probes: usize) -> Self {
        Self {
            mode: IndexMode::Partitioned,
            clusters,
            probes,
            kmeans_iters: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hit {
    pub id: String,
    pub row: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    mode: IndexMode,
    vectors: Matrix,
    ids: Vec<String>,
    centroids: Option<Matrix>,
    /// Member rows per centroid, ascending.
    assignments: Vec<Vec<usize>>,
    probes: usize,
}

/// Orders by descending score, then ascending id.
fn rank_order(ids: &[String], a: (usize, f64), b: (usize, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| ids[a.0].cmp(&ids[b.0]))
}

fn top_k(ids: &[String], mut scored: Vec<(usize, f64)>, k: usize) -> Vec<(usize, f64)> {
    let cmp = |a: &(usize, f64), b: &(usize, f64)| rank_order(ids, *a, *b);
    if scored.len() > k {
        scored.select_nth_unstable_by(k - 1, cmp);
        scored.truncate(k);
    }
    scored.sort_by(cmp);
    scored
}

fn check_unit_rows(m: &Matrix, what: &str) -> Result<()> {
    for (i, r) in m.iter_rows().enumerate() {
        let n = linalg::norm(r);
        if (n - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(Error::invalid(format!("{what} row {i} has norm {n}, expected 1")));
        }
    }
    Ok(())
}

fn argmax_centroid(centroids: &Matrix, v: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for c in 0..centroids.rows() {
        let s = linalg::dot(centroids.row(c), v);
        if s > best.1 {
            best = (c, s);
        }
    }
    best
}

/// Spherical k-means: farthest-point initialization from a seeded first
/// centre, a fixed number of assign/update rounds, and re-seeding of empty
/// clusters from the member of the largest cluster least similar to its
/// centre.
fn spherical_kmeans(vectors: &Matrix, clusters: usize, iters: usize, seed: u64) -> Result<(Matrix, Vec<Vec<usize>>)> {
    let m = vectors.rows();
    let d = vectors.cols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = Matrix::zeros(clusters, d);
    let first = rng.gen_range(0..m);
    centroids.row_mut(0).copy_from_slice(vectors.row(first));
    // best similarity of every point to the chosen centres so far
    let mut nearest: Vec<f64> = (0..m).map(|i| linalg::dot(vectors.row(i), vectors.row(first))).collect();
    for c in 1..clusters {
        let mut pick = 0;
        for i in 1..m {
            if nearest[i] < nearest[pick] {
                pick = i;
            }
        }
        centroids.row_mut(c).copy_from_slice(vectors.row(pick));
        for (i, s) in nearest.iter_mut().enumerate() {
            *s = s.max(linalg::dot(vectors.row(i), vectors.row(pick)));
        }
    }

    let assign = |centroids: &Matrix| -> Vec<Vec<usize>> {
        let mut members = vec![Vec::new(); clusters];
        for i in 0..m {
            members[argmax_centroid(centroids, vectors.row(i)).0].push(i);
        }
        members
    };

    let mut members = assign(&centroids);
    for _ in 0..iters {
        for c in 0..clusters {
            if members[c].is_empty() {
                continue;
            }
            let mut sum = vec![0.0; d];
            for &i in &members[c] {
                linalg::axpy(1.0, vectors.row(i), &mut sum);
            }
            if linalg::normalize(&mut sum).is_ok() {
                centroids.row_mut(c).copy_from_slice(&sum);
            }
        }
        for c in 0..clusters {
            if !members[c].is_empty() {
                continue;
            }
            let largest = (0..clusters)
                .max_by(|&a, &b| members[a].len().cmp(&members[b].len()).then(b.cmp(&a)))
                .expect("at least one cluster");
            if members[largest].len() < 2 {
                break;
            }
            let (pos, _) = members[largest]
                .iter()
                .enumerate()
                .map(|(p, &i)| (p, linalg::dot(vectors.row(i), centroids.row(largest))))
                .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best });
            let moved = members[largest].remove(pos);
            centroids.row_mut(c).copy_from_slice(vectors.row(moved));
            members[c].push(moved);
        }
        members = assign(&centroids);
    }
    Ok((centroids, members))
}

impl VectorIndex {
    pub fn build(vectors: Matrix, ids: Vec<String>, config: &IndexConfig) -> Result<Self> {
        if ids.len() != vectors.rows() {
            return Err(Error::shape(format!("{} ids for {} vectors", ids.len(), vectors.rows())));
        }
        let mut seen = HashSet::with_capacity(ids.len());
        if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(Error::invalid(format!("duplicate id {dup:?}")));
        }
        check_unit_rows(&vectors, "vector")?;
        match config.mode {
            IndexMode::Exact => Ok(Self {
                mode: IndexMode::Exact,
                assignments: vec![(0..vectors.rows()).collect()],
                vectors,
                ids,
                centroids: None,
                probes: 1,
            }),
            IndexMode::Partitioned => {
                if config.clusters == 0 || config.probes == 0 {
                    return Err(Error::invalid("clusters and probes must be at least 1"));
                }
                if vectors.rows() < config.clusters {
                    return Err(Error::invalid(format!(
                        "{} vectors cannot fill {} clusters",
                        vectors.rows(),
                        config.clusters
                    )));
                }
                let (centroids, assignments) =
                    spherical_kmeans(&vectors, config.clusters, config.kmeans_iters, config.seed)?;
                Ok(Self {
                    mode: IndexMode::Partitioned,
                    vectors,
                    ids,
                    centroids: Some(centroids),
                    assignments,
                    probes: config.probes.min(config.clusters),
                })
            }
        }
    }

    pub fn mode(&self) -> IndexMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vectors(&self) -> &Matrix {
        &self.vectors
    }

    pub fn centroids(&self) -> Option<&Matrix> {
        self.centroids.as_ref()
    }

    pub fn assignments(&self) -> &[Vec<usize>] {
        &self.assignments
    }

    pub fn probes(&self) -> usize {
        self.probes
    }

    pub fn set_probes(&mut self, probes: usize) {
        self.probes = probes.clamp(1, self.assignments.len().max(1));
    }

    fn check_query(&self, query: &[f64], k: usize) -> Result<()> {
        if self.is_empty() {
            return Err(Error::invalid("search on an empty index"));
        }
        if k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        if query.len() != self.dim() {
            return Err(Error::shape(format!("query has dimension {}, index {}", query.len(), self.dim())));
        }
        Ok(())
    }

    fn hits(&self, ranked: Vec<(usize, f64)>) -> Vec<Hit> {
        ranked
            .into_iter()
            .map(|(row, score)| Hit {
                id: self.ids[row].clone(),
                row,
                score,
            })
            .collect()
    }

    /// True top-k by dot product over every stored vector, regardless of mode.
    pub fn exact_search(&self, query: &[f64], k: usize) -> Result<Vec<Hit>> {
        self.check_query(query, k)?;
        let scored = (0..self.len())
            .map(|i| (i, linalg::dot(query, self.vectors.row(i))))
            .collect();
        Ok(self.hits(top_k(&self.ids, scored, k)))
    }

    pub fn search(&self, query: &[f64], k: usize) -> Result<Vec<Hit>> {
        self.search_with_cost(query, k).map(|(h, _)| h)
    }

    /// Search plus the number of stored rows (centroids included) touched.
    pub fn search_with_cost(&self, query: &[f64], k: usize) -> Result<(Vec<Hit>, usize)> {
        self.check_query(query, k)?;
        let Some(centroids) = &self.centroids else {
            return Ok((self.exact_search(query, k)?, self.len()));
        };
        let mut probe_order: Vec<(usize, f64)> = (0..centroids.rows())
            .map(|c| (c, linalg::dot(query, centroids.row(c))))
            .collect();
        probe_order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut touched = centroids.rows();
        let mut scored = Vec::new();
        for &(c, _) in probe_order.iter().take(self.probes) {
            touched += self.assignments[c].len();
            scored.extend(
                self.assignments[c]
                    .iter()
                    .map(|&i| (i, linalg::dot(query, self.vectors.row(i)))),
            );
        }
        Ok((self.hits(top_k(&self.ids, scored, k)), touched))
    }

    /// Writes `index.pool`, `index.ids` and, when partitioned,
    /// `index.centroids` and `index.assign` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let set = EmbeddingSet::new(self.ids.clone(), self.vectors.clone())?;
        set.save(&dir.join("index.pool"), &dir.join("index.ids"))?;
        if let Some(c) = &self.centroids {
            write_pool(c, BufWriter::new(File::create(dir.join("index.centroids"))?))?;
            let mut owner = vec![0usize; self.len()];
            for (c, rows) in self.assignments.iter().enumerate() {
                for &r in rows {
                    owner[r] = c;
                }
            }
            let mut w = BufWriter::new(File::create(dir.join("index.assign"))?);
            for o in owner {
                writeln!(w, "{o}")?;
            }
            w.flush()?;
        }
        Ok(())
    }

    pub fn load(dir: &Path, probes: usize) -> Result<Self> {
        let set = EmbeddingSet::load(&dir.join("index.pool"), &dir.join("index.ids"))?;
        let centroid_path = dir.join("index.centroids");
        if !centroid_path.exists() {
            return Self::build(set.vectors, set.ids, &IndexConfig::exact());
        }
        let centroids = read_pool(BufReader::new(File::open(&centroid_path)?))?;
        let owners = read_ids(BufReader::new(File::open(dir.join("index.assign"))?))?;
        if owners.len() != set.len() {
            return Err(Error::format("index.assign", format!("{} entries for {} vectors", owners.len(), set.len())));
        }
        let mut assignments = vec![Vec::new(); centroids.rows()];
        for (row, o) in owners.iter().enumerate() {
            let c: usize = o
                .parse()
                .ok()
                .filter(|&c: &usize| c < centroids.rows())
                .ok_or_else(|| Error::format(format!("index.assign line {}", row + 1), format!("bad centroid {o:?}")))?;
            assignments[c].push(row);
        }
        let mut index = Self {
            mode: IndexMode::Partitioned,
            vectors: set.vectors,
            ids: set.ids,
            centroids: Some(centroids),
            assignments,
            probes: 1,
        };
        index.set_probes(probes);
        Ok(index)
    }
}

/// Fraction of queries whose exact top-1 appears in the index's top-k.
pub fn recall_vs_exact(index: &VectorIndex, queries: &Matrix, k: usize) -> Result<f64> {
    if queries.rows() == 0 {
        return Ok(1.0);
    }
    let mut found = 0usize;
    for q in queries.iter_rows() {
        let truth = &index.exact_search(q, 1)?[0];
        if index.search(q, k)?.iter().any(|h| h.row == truth.row) {
            found += 1;
        }
    }
    Ok(found as f64 / queries.rows() as f64)
}

/// Pool file: a text header line `M d`, then `M * d` little-endian f32 values.
pub fn write_pool<W: Write>(m: &Matrix, mut w: W) -> Result<()> {
    writeln!(w, "{} {}", m.rows(), m.cols())?;
    let mut buf = Vec::with_capacity(m.as_slice().len() * 4);
    for &v in m.as_slice() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

pub fn read_pool<R: BufRead>(mut r: R) -> Result<Matrix> {
    let mut header = String::new();
    r.read_line(&mut header)?;
    let mut parts = header.split_whitespace().map(str::parse::<usize>);
    let (rows, cols) = match (parts.next(), parts.next(), parts.next()) {
        (Some(Ok(m)), Some(Ok(d)), None) => (m, d),
        _ => return Err(Error::format("pool header", format!("expected \"M d\", found {:?}", header.trim_end()))),
    };
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let expected = rows * cols * 4;
    if bytes.len() != expected {
        return Err(Error::format(
            format!("pool byte {}", header.len() + bytes.len().min(expected)),
            format!("expected {expected} payload bytes, found {}", bytes.len()),
        ));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Matrix::from_vec(rows, cols, data)
}

pub fn write_ids<W: Write>(ids: &[String], mut w: W) -> Result<()> {
    for id in ids {
        writeln!(w, "{id}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_ids<R: BufRead>(r: R) -> Result<Vec<String>> {
    r.lines()
        .map(|l| l.map(|s| s.trim_end_matches('\r').to_string()).map_err(Error::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert_eq, proptest, ProptestConfig};

    fn random_unit(rng: &mut ChaCha8Rng, m: usize, d: usize) -> Matrix {
        let mut v = Matrix::from_vec(m, d, (0..m * d).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        for i in 0..m {
            linalg::normalize(v.row_mut(i)).unwrap();
        }
        v
    }

    fn ids(m: usize) -> Vec<String> {
        (0..m).map(|i| format!("{i:05}")).collect()
    }

    fn brute_force(v: &Matrix, ids: &[String], q: &[f64], k: usize) -> Vec<(String, f64)> {
        let mut all: Vec<(String, f64)> = (0..v.rows()).map(|i| (ids[i].clone(), linalg::dot(q, v.row(i)))).collect();
        all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        all.truncate(k);
        all
    }

    #[test]
    fn self_retrieval() {
        let v = Matrix::identity(3);
        let idx = VectorIndex::build(v, ids(3), &IndexConfig::exact()).unwrap();
        let hits = idx.search(&[0.0, 1.0, 0.0], 1).unwrap();
        assert_eq!(hits[0].row, 1);
        assert_eq!(hits[0].score, 1.0);
    }

    #[test]
    fn orthogonal_query_ties_break_by_id() {
        let v = Matrix::from_rows(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]).unwrap();
        let idx = VectorIndex::build(v, vec!["b".into(), "a".into()], &IndexConfig::exact()).unwrap();
        let hits = idx.search(&[0.0, 0.0, 1.0], 2).unwrap();
        assert_eq!(hits[0].id, "a");
        assert_eq!(hits[0].score, 0.0);
        assert_eq!(hits[1].id, "b");
    }

    #[test]
    fn full_k_matches_sort() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = random_unit(&mut rng, 50, 6);
        let idx = VectorIndex::build(v.clone(), ids(50), &IndexConfig::exact()).unwrap();
        let q = random_unit(&mut rng, 1, 6);
        let got: Vec<(String, f64)> = idx.search(q.row(0), 50).unwrap().into_iter().map(|h| (h.id, h.score)).collect();
        assert_eq!(got, brute_force(&v, &ids(50), q.row(0), 50));
    }

    #[test]
    fn single_cluster_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v = random_unit(&mut rng, 200, 8);
        let exact = VectorIndex::build(v.clone(), ids(200), &IndexConfig::exact()).unwrap();
        let part = VectorIndex::build(v, ids(200), &IndexConfig::partitioned(1, 1)).unwrap();
        let qs = random_unit(&mut rng, 20, 8);
        for q in qs.iter_rows() {
            assert_eq!(exact.search(q, 5).unwrap(), part.search(q, 5).unwrap());
        }
    }

    #[test]
    fn build_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = random_unit(&mut rng, 4, 3);
        assert!(VectorIndex::build(v.clone(), ids(4), &IndexConfig::partitioned(5, 1)).is_err());
        assert!(VectorIndex::build(v.clone(), vec!["a".into(); 4], &IndexConfig::exact()).is_err());
        let mut not_unit = v.clone();
        not_unit.row_mut(0)[0] += 1.0;
        assert!(VectorIndex::build(not_unit, ids(4), &IndexConfig::exact()).is_err());
        let empty = VectorIndex::build(Matrix::zeros(0, 3), vec![], &IndexConfig::exact()).unwrap();
        assert!(empty.search(&[1.0, 0.0, 0.0], 1).is_err());
    }

    #[test]
    fn partitioning_is_deterministic_and_complete() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let v = random_unit(&mut rng, 500, 8);
        let cfg = IndexConfig { seed: 7, ..IndexConfig::partitioned(16, 4) };
        let a = VectorIndex::build(v.clone(), ids(500), &cfg).unwrap();
        let b = VectorIndex::build(v, ids(500), &cfg).unwrap();
        assert_eq!(a, b);
        let mut all: Vec<usize> = a.assignments().iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..500).collect::<Vec<_>>());
        assert!(a.assignments().iter().all(|m| !m.is_empty()));
    }

    #[test]
    fn search_cost_is_bounded_and_scores_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v = random_unit(&mut rng, 400, 8);
        let idx = VectorIndex::build(v.clone(), ids(400), &IndexConfig::partitioned(20, 3)).unwrap();
        let qs = random_unit(&mut rng, 30, 8);
        let mut sizes: Vec<usize> = idx.assignments().iter().map(Vec::len).collect();
        sizes.sort_unstable_by(|a, b| b.cmp(a));
        let bound = 20 + sizes.iter().take(3).sum::<usize>();
        for q in qs.iter_rows() {
            let (hits, cost) = idx.search_with_cost(q, 3).unwrap();
            assert!(cost <= bound);
            for h in hits {
                assert_eq!(h.score, linalg::dot(q, v.row(h.row)));
            }
        }
    }

    #[test]
    fn recall_grows_with_probes() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let v = random_unit(&mut rng, 2000, 8);
        let mut idx = VectorIndex::build(v, ids(2000), &IndexConfig::partitioned(32, 1)).unwrap();
        let qs = random_unit(&mut rng, 200, 8);
        let mut prev = 0.0;
        for p in [1, 2, 4, 8, 16, 32] {
            idx.set_probes(p);
            let r = recall_vs_exact(&idx, &qs, 1).unwrap();
            assert!(r >= prev);
            prev = r;
        }
        assert_eq!(prev, 1.0);
        let exact = VectorIndex::build(idx.vectors().clone(), idx.ids().to_vec(), &IndexConfig::exact()).unwrap();
        assert_eq!(recall_vs_exact(&exact, &qs, 1).unwrap(), 1.0);
    }

    #[test]
    fn persistence_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let v = random_unit(&mut rng, 64, 4);
        let dir = tempfile::tempdir().unwrap();
        let idx = VectorIndex::build(v, ids(64), &IndexConfig::partitioned(4, 2)).unwrap();
        idx.save(dir.path()).unwrap();
        let back = VectorIndex::load(dir.path(), 2).unwrap();
        assert_eq!(back.assignments(), idx.assignments());
        assert_eq!(back.ids(), idx.ids());
        for (a, b) in back.vectors().as_slice().iter().zip(idx.vectors().as_slice()) {
            assert_eq!(*a, *b as f32 as f64);
        }
        let header = std::fs::read(dir.path().join("index.pool")).unwrap();
        assert!(header.starts_with(b"64 4\n"));
        assert_eq!(header.len(), 5 + 64 * 4 * 4);
    }

    #[test]
    fn truncated_pool_is_rejected() {
        let mut buf = Vec::new();
        write_pool(&Matrix::identity(2), &mut buf).unwrap();
        buf.pop();
        let err = read_pool(&buf[..]).unwrap_err().to_string();
        assert!(err.contains("payload"), "{err}");
        assert!(read_pool(&b"2\n"[..]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn exact_equals_brute_force(seed in any::<u64>(), m in 1usize..400, d in 1usize..10, k in 1usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v = random_unit(&mut rng, m, d);
            let idx = VectorIndex::build(v.clone(), ids(m), &IndexConfig::exact()).unwrap();
            let q = random_unit(&mut rng, 1, d);
            let got: Vec<(String, f64)> = idx.search(q.row(0), k).unwrap().into_iter().map(|h| (h.id, h.score)).collect();
            prop_assert_eq!(got, brute_force(&v, &ids(m), q.row(0), k));
        }
    }
}
