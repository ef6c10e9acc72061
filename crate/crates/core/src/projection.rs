//! Mapping source-language embeddings into the universal key space:
//! seed-pair extraction, the orthogonality-constrained alignment solve,
//! and projection of whole tables.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::embeddings::EmbeddingTable;
use crate::tensor::kernels::{matmul, matmul_tn};
use crate::tensor::svd::svd;
use crate::{Error, Result};

/// Ranked `(source token, universal token)` pairs for one language.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SeedDictionary {
    pub lang: String,
    /// `(source, universal, count)`, ranked by count descending.
    pub pairs: Vec<(String, String, u64)>,
}

/// Square orthogonal map for one source language.
#[derive(Debug, Clone)]
pub struct OrthogonalMap {
    pub lang: String,
    pub dim: usize,
    pub matrix: Vec<f64>,
}

/// Everything the alignment solve reports besides the map itself.
#[derive(Debug, Clone)]
pub struct ProcrustesSolution {
    pub map: OrthogonalMap,
    /// Σ over seeds of projected-query · key dot products.
    pub objective: f64,
    /// Same objective for the identity map (sanity lower bound).
    pub identity_objective: f64,
    pub warnings: Vec<String>,
}

/// Collect a seed dictionary from a stream of aligned token pairs.
///
/// Each source token keeps its single highest-count universal token
/// (ties broken lexicographically), survivors are ranked by count,
/// thresholded at `min_count` and truncated at `max_seeds`.
pub fn extract_seeds<I>(
    lang: &str,
    aligned_pairs: I,
    min_count: u64,
    max_seeds: usize,
) -> Result<SeedDictionary>
where
    I: IntoIterator<Item = (String, String)>,
{
    let mut counts: HashMap<(String, String), u64> = HashMap::new();
    let mut any = false;
    for pair in aligned_pairs {
        any = true;
        *counts.entry(pair).or_insert(0) += 1;
    }
    if !any {
        return Err(Error::Input("empty alignment stream".into()));
    }

    // One universal token per source: highest count, ties lexicographic.
    let mut best: HashMap<&str, (&str, u64)> = HashMap::new();
    for ((src, uni), &count) in counts.iter().map(|(k, v)| ((k.0.as_str(), k.1.as_str()), v)) {
        match best.get(src) {
            Some(&(cur_uni, cur_count))
                if cur_count > count || (cur_count == count && cur_uni <= uni) => {}
            _ => {
                best.insert(src, (uni, count));
            }
        }
    }

    let mut pairs: Vec<(String, String, u64)> = best
        .into_iter()
        .filter(|(_, (_, c))| *c >= min_count)
        .map(|(s, (u, c))| (s.to_string(), u.to_string(), c))
        .collect();
    if pairs.is_empty() {
        return Err(Error::Input(format!(
            "no aligned pair reaches min_count {min_count}; seed dictionary would be empty"
        )));
    }
    pairs.sort_by(|a, b| b.2.cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    pairs.truncate(max_seeds);
    Ok(SeedDictionary { lang: lang.to_string(), pairs })
}

impl SeedDictionary {
    /// TSV: `source_token<TAB>universal_token<TAB>count`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (s, u, c) in &self.pairs {
            writeln!(out, "{s}\t{u}\t{c}").unwrap();
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path, lang: &str) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut cols = line.split('\t');
            let (s, u, c) = match (cols.next(), cols.next(), cols.next()) {
                (Some(s), Some(u), Some(c)) => (s, u, c),
                _ => return Err(Error::format_at(i + 1, "expected `src<TAB>uni<TAB>count`")),
            };
            let count: u64 =
                c.trim().parse().map_err(|_| Error::format_at(i + 1, "bad count"))?;
            pairs.push((s.to_string(), u.to_string(), count));
        }
        Ok(SeedDictionary { lang: lang.to_string(), pairs })
    }
}

/// Solve for the orthogonal map that best aligns seed query vectors to
/// their key vectors: `O = U·Vᵀ` with `U,S,Vᵀ = svd(XᵀY)` where X stacks
/// seed query rows and Y stacks seed key rows.
pub fn solve_procrustes(
    queries: &EmbeddingTable,
    keys: &EmbeddingTable,
    seeds: &SeedDictionary,
) -> Result<ProcrustesSolution> {
    if !queries.normalized || !keys.normalized {
        return Err(Error::State("both tables must be normalized before solving".into()));
    }
    if queries.dim != keys.dim {
        return Err(Error::Shape(format!(
            "query dim {} differs from key dim {}",
            queries.dim, keys.dim
        )));
    }
    if seeds.pairs.len() < 2 {
        return Err(Error::Input(format!(
            "need at least 2 seeds to solve, got {}",
            seeds.pairs.len()
        )));
    }
    let mut warnings = Vec::new();
    if seeds.pairs.len() < 50 {
        warnings.push(format!("only {} seeds; the map may be poorly determined", seeds.pairs.len()));
    }

    let d = queries.dim;
    let n = seeds.pairs.len();
    let mut x = Vec::with_capacity(n * d);
    let mut y = Vec::with_capacity(n * d);
    for (src, uni, _) in &seeds.pairs {
        let q = queries
            .vector(src)
            .ok_or_else(|| Error::Lookup(format!("seed source token `{src}` has no query vector")))?;
        let k = keys
            .vector(uni)
            .ok_or_else(|| Error::Lookup(format!("seed universal token `{uni}` has no key vector")))?;
        x.extend_from_slice(q);
        y.extend_from_slice(k);
    }

    let c = matmul_tn(&x, &y, n, d, d);
    let f = svd(&c, d, d)?;
    if f.s.iter().any(|&s| s < 1e-12) {
        warnings.push("seed cross-covariance is rank-deficient".into());
    }
    let matrix = matmul(&f.u, &f.vt, d, d, d);
    let map = OrthogonalMap { lang: seeds.lang.clone(), dim: d, matrix };

    let objective = seed_objective(&x, &y, n, d, Some(&map));
    let identity_objective = seed_objective(&x, &y, n, d, None);
    Ok(ProcrustesSolution { map, objective, identity_objective, warnings })
}

fn seed_objective(x: &[f64], y: &[f64], n: usize, d: usize, map: Option<&OrthogonalMap>) -> f64 {
    let projected = match map {
        Some(m) => matmul(x, &m.matrix, n, d, d),
        None => x.to_vec(),
    };
    projected.chunks(d).zip(y.chunks(d)).map(|(p, k)| crate::tensor::kernels::dot(p, k)).sum()
}

impl OrthogonalMap {
    /// max |OᵀO - I|.
    pub fn orthogonality_residual(&self) -> f64 {
        let d = self.dim;
        let gram = matmul_tn(&self.matrix, &self.matrix, d, d, d);
        let mut worst = 0.0f64;
        for i in 0..d {
            for j in 0..d {
                let want = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((gram[i * d + j] - want).abs());
            }
        }
        worst
    }

    pub fn identity(lang: &str, dim: usize) -> Self {
        let mut matrix = vec![0.0; dim * dim];
        for i in 0..dim {
            matrix[i * dim + i] = 1.0;
        }
        OrthogonalMap { lang: lang.to_string(), dim, matrix }
    }

    /// Text format: first line `<dim>`, then dim rows of dim reals.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        writeln!(out, "{}", self.dim).unwrap();
        for row in self.matrix.chunks(self.dim) {
            let mut first = true;
            for v in row {
                if !first {
                    out.push(' ');
                }
                write!(out, "{}", v).unwrap();
                first = false;
            }
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path, lang: &str) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines().enumerate();
        let (_, header) =
            lines.next().ok_or_else(|| Error::format_at(1, "missing `<dim>` header"))?;
        let dim: usize =
            header.trim().parse().map_err(|_| Error::format_at(1, "bad dim header"))?;
        let mut matrix = Vec::with_capacity(dim * dim);
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            for s in line.split_whitespace() {
                matrix.push(
                    s.parse::<f64>().map_err(|_| Error::format_at(i + 1, format!("bad real `{s}`")))?,
                );
            }
        }
        if matrix.len() != dim * dim {
            return Err(Error::Format(format!(
                "expected {} values for a {dim}x{dim} map, got {}",
                dim * dim,
                matrix.len()
            )));
        }
        Ok(OrthogonalMap { lang: lang.to_string(), dim, matrix })
    }
}

/// Right-multiply every row of `table` by the map. Orthogonality makes
/// this an isometry, so norms and the `normalized` flag carry over.
pub fn project(table: &EmbeddingTable, map: &OrthogonalMap) -> Result<EmbeddingTable> {
    if table.dim != map.dim {
        return Err(Error::Shape(format!(
            "table dim {} differs from map dim {}",
            table.dim, map.dim
        )));
    }
    let projected = matmul(table.data(), &map.matrix, table.len(), table.dim, table.dim);
    let mut out = EmbeddingTable::new(&table.lang, table.dim);
    for (i, tok) in table.tokens().iter().enumerate() {
        out.push(tok, &projected[i * table.dim..(i + 1) * table.dim])?;
    }
    out.normalized = table.normalized;
    out.zero_rows = table.zero_rows.clone();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::tensor::kernels::{dot, l2_norm};

    fn random_table(lang: &str, n: usize, dim: usize, rng: &mut Rng) -> EmbeddingTable {
        let mut t = EmbeddingTable::new(lang, dim);
        for i in 0..n {
            let v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
            t.push(&format!("{lang}_{i}"), &v).unwrap();
        }
        t.normalize_rows()
    }

    /// Random orthogonal matrix via SVD of a Gaussian matrix.
    fn random_rotation(dim: usize, rng: &mut Rng) -> Vec<f64> {
        let g: Vec<f64> = (0..dim * dim).map(|_| rng.normal()).collect();
        let f = svd(&g, dim, dim).unwrap();
        matmul(&f.u, &f.vt, dim, dim, dim)
    }

    #[test]
    fn majority_rule_picks_dominant_translation() {
        let stream = [("gato", "cat"); 5]
            .into_iter()
            .chain([("gato", "dog"); 1])
            .map(|(a, b)| (a.to_string(), b.to_string()));
        let seeds = extract_seeds("es", stream, 2, 100).unwrap();
        assert_eq!(seeds.pairs.len(), 1);
        assert_eq!(seeds.pairs[0], ("gato".to_string(), "cat".to_string(), 5));
    }

    #[test]
    fn max_seeds_keeps_the_highest_count_pair() {
        let mut stream = Vec::new();
        for _ in 0..3 {
            stream.push(("uno".to_string(), "one".to_string()));
        }
        for _ in 0..7 {
            stream.push(("dos".to_string(), "two".to_string()));
        }
        for _ in 0..5 {
            stream.push(("tres".to_string(), "three".to_string()));
        }
        let seeds = extract_seeds("es", stream, 1, 1).unwrap();
        assert_eq!(seeds.pairs[0].0, "dos");
    }

    #[test]
    fn matches_counting_oracle_on_synthetic_stream() {
        let mut rng = Rng::seed_from(77);
        let srcs = ["a", "b", "c", "d"];
        let unis = ["x", "y", "z"];
        let stream: Vec<(String, String)> = (0..500)
            .map(|_| {
                (
                    srcs[rng.below(srcs.len())].to_string(),
                    unis[rng.below(unis.len())].to_string(),
                )
            })
            .collect();
        let seeds = extract_seeds("es", stream.clone(), 1, 100).unwrap();

        // Oracle: count with a sorted association list.
        let mut counts: Vec<((String, String), u64)> = Vec::new();
        for p in &stream {
            match counts.iter_mut().find(|(k, _)| k == p) {
                Some((_, c)) => *c += 1,
                None => counts.push((p.clone(), 1)),
            }
        }
        for src in srcs {
            let mut cands: Vec<(&str, u64)> = counts
                .iter()
                .filter(|((s, _), _)| s == src)
                .map(|((_, u), c)| (u.as_str(), *c))
                .collect();
            cands.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
            let expected = cands[0];
            let got = seeds.pairs.iter().find(|(s, _, _)| s == src).unwrap();
            assert_eq!((got.1.as_str(), got.2), expected, "source {src}");
        }
    }

    #[test]
    fn below_threshold_everything_is_an_error() {
        let stream = vec![("a".to_string(), "b".to_string())];
        assert!(extract_seeds("es", stream, 10, 5).is_err());
    }

    #[test]
    fn aligned_tables_yield_identity() {
        let mut rng = Rng::seed_from(3);
        let queries = random_table("es", 60, 8, &mut rng);
        let mut keys = EmbeddingTable::new("en", 8);
        for (i, tok) in queries.tokens().iter().enumerate() {
            keys.push(&format!("uni_{i}"), queries.row(i)).unwrap();
            let _ = tok;
        }
        let keys = keys.normalize_rows();
        let pairs = (0..60).map(|i| (format!("es_{i}"), format!("uni_{i}"), 1u64)).collect();
        let seeds = SeedDictionary { lang: "es".into(), pairs };
        let sol = solve_procrustes(&queries, &keys, &seeds).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((sol.map.matrix[i * 8 + j] - want).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn planted_rotation_is_recovered() {
        let mut rng = Rng::seed_from(19);
        let dim = 16;
        let queries = random_table("es", 120, dim, &mut rng);
        let rot = random_rotation(dim, &mut rng);
        let mut keys = EmbeddingTable::new("en", dim);
        for i in 0..queries.len() {
            let projected = matmul(queries.row(i), &rot, 1, dim, dim);
            keys.push(&format!("uni_{i}"), &projected).unwrap();
        }
        let keys = keys.normalize_rows();
        let pairs = (0..queries.len())
            .map(|i| (format!("es_{i}"), format!("uni_{i}"), 1u64))
            .collect();
        let seeds = SeedDictionary { lang: "es".into(), pairs };
        let sol = solve_procrustes(&queries, &keys, &seeds).unwrap();
        let worst = sol
            .map
            .matrix
            .iter()
            .zip(&rot)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-6, "recovered map differs from planted rotation by {worst}");
        assert!(sol.map.orthogonality_residual() < 1e-8);
        assert!(sol.objective >= sol.identity_objective - 1e-9);

        // Projected seed queries land on their keys.
        let projected = project(&queries, &sol.map).unwrap();
        for i in 0..queries.len() {
            let cos = dot(projected.row(i), keys.row(i));
            assert!(cos > 1.0 - 1e-5, "seed {i} cosine {cos}");
        }
    }

    #[test]
    fn missing_seed_token_is_a_lookup_error() {
        let mut rng = Rng::seed_from(5);
        let queries = random_table("es", 10, 4, &mut rng);
        let keys = random_table("en", 10, 4, &mut rng);
        let seeds = SeedDictionary {
            lang: "es".into(),
            pairs: vec![
                ("es_0".into(), "en_0".into(), 2),
                ("missing".into(), "en_1".into(), 1),
            ],
        };
        let err = solve_procrustes(&queries, &keys, &seeds).unwrap_err();
        assert!(err.to_string().contains("missing"), "{err}");
    }

    #[test]
    fn projection_preserves_norms_and_pairwise_cosines() {
        let mut rng = Rng::seed_from(23);
        let table = random_table("es", 40, 12, &mut rng);
        let rot = random_rotation(12, &mut rng);
        let map = OrthogonalMap { lang: "es".into(), dim: 12, matrix: rot };
        let projected = project(&table, &map).unwrap();
        for i in 0..table.len() {
            assert!((l2_norm(projected.row(i)) - l2_norm(table.row(i))).abs() < 1e-10);
        }
        for i in 0..10 {
            for j in 0..10 {
                let before = dot(table.row(i), table.row(j));
                let after = dot(projected.row(i), projected.row(j));
                assert!((before - after).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn identity_map_is_a_noop() {
        let mut rng = Rng::seed_from(41);
        let table = random_table("es", 15, 6, &mut rng);
        let map = OrthogonalMap::identity("es", 6);
        let projected = project(&table, &map).unwrap();
        assert_eq!(projected.data(), table.data());
    }

    #[test]
    fn map_file_roundtrip_is_bit_exact() {
        let mut rng = Rng::seed_from(67);
        let rot = random_rotation(5, &mut rng);
        let map = OrthogonalMap { lang: "es".into(), dim: 5, matrix: rot };
        let dir = std::env::temp_dir().join("uninmt_proj_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("map.txt");
        map.save(&path).unwrap();
        let back = OrthogonalMap::load(&path, "es").unwrap();
        assert_eq!(back.matrix, map.matrix);
        let _ = std::fs::remove_file(&path);
    }

    #[test]
    fn corrupted_seeds_still_improve_alignment() {
        // 10% of seeds point at random keys; the solved map should still
        // align seed queries to keys better than no projection at all.
        let mut rng = Rng::seed_from(97);
        let dim = 16;
        let queries = random_table("es", 100, dim, &mut rng);
        let rot = random_rotation(dim, &mut rng);
        let mut keys = EmbeddingTable::new("en", dim);
        for i in 0..queries.len() {
            keys.push(&format!("uni_{i}"), &matmul(queries.row(i), &rot, 1, dim, dim)).unwrap();
        }
        let keys = keys.normalize_rows();
        let pairs = (0..100)
            .map(|i| {
                let target = if i % 10 == 0 { (i + 37) % 100 } else { i };
                (format!("es_{i}"), format!("uni_{target}"), 1u64)
            })
            .collect();
        let seeds = SeedDictionary { lang: "es".into(), pairs };
        let sol = solve_procrustes(&queries, &keys, &seeds).unwrap();
        let projected = project(&queries, &sol.map).unwrap();
        let avg = |t: &EmbeddingTable| {
            (0..100).map(|i| dot(t.row(i), keys.row(i))).sum::<f64>() / 100.0
        };
        assert!(avg(&projected) > avg(&queries));
        assert!(sol.map.orthogonality_residual() < 1e-8);
    }
}
