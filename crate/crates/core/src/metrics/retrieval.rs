use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::EmbeddingDataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub vector: Vec<f64>,
}

impl Query {
    /// One query per row of an embedding file.
    pub fn from_dataset(ds: &EmbeddingDataset) -> Vec<Query> {
        (0..ds.n())
            .map(|i| Query {
                id: ds.ids()[i].clone(),
                vector: ds.row_f64(i),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRanking {
    pub query_id: String,
    /// Gallery row indices, best first.
    pub rows: Vec<usize>,
    pub ids: Vec<String>,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalRun {
    pub k: usize,
    pub rankings: Vec<QueryRanking>,
}

fn norm(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    dot / (norm(a.iter().copied()) * norm(b.iter().copied()))
}

/// Exact top-`k` gallery rows per query by cosine similarity, ties to the
/// lower row index.
pub fn cosine_retrieval(queries: &[Query], gallery: &EmbeddingDataset, k: usize) -> Result<RetrievalRun> {
    if k == 0 {
        return Err(Error::Argument("retrieval cutoff k must be >= 1".into()));
    }
    let d = gallery.d();
    let norms: Vec<f64> = (0..gallery.n())
        .map(|i| norm(gallery.row(i).iter().map(|&x| x as f64)))
        .collect();
    if let Some(i) = norms.iter().position(|&x| x == 0.0) {
        return Err(Error::Validation(format!(
            "gallery row {i} (`{}`) has zero norm",
            gallery.ids()[i]
        )));
    }
    for q in queries {
        if q.vector.len() != d {
            return Err(Error::Shape {
                expected: d,
                actual: q.vector.len(),
            });
        }
        if norm(q.vector.iter().copied()) == 0.0 {
            return Err(Error::Validation(format!("query `{}` has zero norm", q.id)));
        }
    }
    let keep = k.min(gallery.n());
    let rankings = queries
        .par_iter()
        .map(|q| {
            let qn = norm(q.vector.iter().copied());
            let scores: Vec<f64> = (0..gallery.n())
                .map(|i| {
                    let dot: f64 = gallery
                        .row(i)
                        .iter()
                        .zip(&q.vector)
                        .map(|(&g, &x)| g as f64 * x)
                        .sum();
                    dot / (qn * norms[i])
                })
                .collect();
            let mut idx: Vec<usize> = (0..gallery.n()).collect();
            let order = |a: &usize, b: &usize| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b));
            if keep < idx.len() {
                idx.select_nth_unstable_by(keep, order);
                idx.truncate(keep);
            }
            idx.sort_by(order);
            QueryRanking {
                query_id: q.id.clone(),
                ids: idx.iter().map(|&i| gallery.ids()[i].clone()).collect(),
                scores: idx.iter().map(|&i| scores[i]).collect(),
                rows: idx,
            }
        })
        .collect();
    Ok(RetrievalRun { k, rankings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn gallery() -> EmbeddingDataset {
        EmbeddingDataset::new(array![[1.0, 0.0], [0.0, 1.0]], vec!["e1".into(), "e2".into()]).unwrap()
    }

    #[test]
    fn axis_query() {
        let q = [Query {
            id: "q".into(),
            vector: vec![1.0, 0.0],
        }];
        let run = cosine_retrieval(&q, &gallery(), 1).unwrap();
        assert_eq!(run.rankings[0].ids, vec!["e1".to_string()]);
    }

    #[test]
    fn k_beyond_gallery_returns_everything_sorted() {
        let q = [Query {
            id: "q".into(),
            vector: vec![0.2, 1.0],
        }];
        let run = cosine_retrieval(&q, &gallery(), 10).unwrap();
        assert_eq!(run.rankings[0].rows, vec![1, 0]);
    }

    #[test]
    fn zero_norm_row_is_named() {
        let g = EmbeddingDataset::new(array![[1.0, 0.0], [0.0, 0.0]], vec!["a".into(), "zero".into()]).unwrap();
        let q = [Query {
            id: "q".into(),
            vector: vec![1.0, 0.0],
        }];
        let err = cosine_retrieval(&q, &g, 1).unwrap_err();
        assert!(err.to_string().contains("row 1"), "{err}");
    }

    #[test]
    fn ties_prefer_lower_row() {
        let g = EmbeddingDataset::new(array![[1.0, 0.0], [1.0, 0.0], [2.0, 0.0]], vec!["a".into(), "b".into(), "c".into()]).unwrap();
        let q = [Query {
            id: "q".into(),
            vector: vec![1.0, 0.0],
        }];
        assert_eq!(cosine_retrieval(&q, &g, 2).unwrap().rankings[0].rows, vec![0, 1]);
    }
}
