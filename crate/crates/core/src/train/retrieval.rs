//! Leave-one-out retrieval mAP over L2 distances.

use super::TrainError;

/// Squared L2 distances between all rows of an `[n, dim]` matrix.
pub fn pairwise_sq_distances(embeddings: &[f32], dim: usize) -> Vec<f64> {
    let n = embeddings.len() / dim.max(1);
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        let a = &embeddings[i * dim..(i + 1) * dim];
        for j in i + 1..n {
            let b = &embeddings[j * dim..(j + 1) * dim];
            let s: f64 = a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum();
            d[i * n + j] = s;
            d[j * n + i] = s;
        }
    }
    d
}

/// mAP from a full `n×n` distance matrix. Each sample queries all others
/// in ascending distance (ties by index); AP averages the precision at
/// every relevant rank. Queries with no other member of their class are
/// skipped.
pub fn map_from_distances(dist: &[f64], labels: &[usize]) -> Result<f64, TrainError> {
    let n = labels.len();
    if n < 2 {
        return Err(TrainError::Retrieval(format!("need at least 2 samples, got {n}")));
    }
    if dist.len() != n * n {
        return Err(TrainError::Retrieval(format!(
            "distance matrix has {} entries for {n} samples",
            dist.len()
        )));
    }
    let mut total = 0.0;
    let mut queries = 0usize;
    let mut order: Vec<usize> = Vec::with_capacity(n - 1);
    for q in 0..n {
        let row = &dist[q * n..(q + 1) * n];
        order.clear();
        order.extend((0..n).filter(|&j| j != q));
        order.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
        let mut hits = 0usize;
        let mut sum = 0.0;
        for (rank, &j) in order.iter().enumerate() {
            if labels[j] == labels[q] {
                hits += 1;
                sum += hits as f64 / (rank + 1) as f64;
            }
        }
        if hits > 0 {
            total += sum / hits as f64;
            queries += 1;
        }
    }
    if queries == 0 {
        return Err(TrainError::Retrieval("no query has a relevant item".into()));
    }
    Ok(total / queries as f64)
}

/// Retrieval mAP of `[n, dim]` embeddings under L2 distance.
pub fn retrieval_map(embeddings: &[f32], dim: usize, labels: &[usize]) -> Result<f64, TrainError> {
    if dim == 0 || embeddings.len() != labels.len() * dim {
        return Err(TrainError::Retrieval(format!(
            "{} values do not form {} rows of width {dim}",
            embeddings.len(),
            labels.len()
        )));
    }
    map_from_distances(&pairwise_sq_distances(embeddings, dim), labels)
}
