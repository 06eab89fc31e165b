//! Embedding clustering and cluster-balanced selection.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::select::{ranked_ids, Direction};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    #[serde(rename = "id")]
    pub instruction_id: String,
    #[serde(rename = "cluster")]
    pub cluster_id: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansParams {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Stop once no centroid moves farther than this.
    pub tol: f64,
}

impl KMeansParams {
    pub fn new(k: usize, seed: u64) -> Self {
        KMeansParams {
            k,
            seed,
            max_iter: 100,
            tol: 1e-6,
        }
    }
}

/// k-means over L2-normalized embeddings with k-means++ seeding.
///
/// Assignments are returned in input order and are a pure function of the
/// points and `params`.
pub fn kmeans(points: &[(String, Vec<f64>)], params: KMeansParams) -> Result<Vec<ClusterAssignment>> {
    let n = points.len();
    let k = params.k;
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if k > n {
        return Err(Error::invalid(format!("k = {k} exceeds the number of points ({n})")));
    }
    if params.max_iter == 0 || params.tol.is_nan() || params.tol <= 0.0 {
        return Err(Error::invalid("max_iter and tol must be positive"));
    }
    let dim = points[0].1.len();
    let mut data = Vec::with_capacity(n);
    for (id, v) in points {
        if v.len() != dim {
            return Err(Error::validation(format!(
                "embedding for {id:?} has dimension {}, expected {dim}",
                v.len()
            )));
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if dim == 0 || norm == 0.0 || !norm.is_finite() {
            return Err(Error::validation(format!("embedding for {id:?} has zero length")));
        }
        data.push(v.iter().map(|x| x / norm).collect::<Vec<f64>>());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut centroids = seed_plus_plus(&data, k, &mut rng);
    let mut labels = assign(&data, &centroids);

    for _ in 0..params.max_iter {
        let mut next = update_centroids(&data, &labels, k, dim);
        reseed_empty(&data, &labels, &centroids, &mut next);
        let shift = centroids
            .iter()
            .zip(&next)
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        labels = assign(&data, &centroids);
        if shift < params.tol {
            break;
        }
    }

    Ok(points
        .iter()
        .zip(labels)
        .map(|((id, _), c)| ClusterAssignment {
            instruction_id: id.clone(),
            cluster_id: c,
        })
        .collect())
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn seed_plus_plus(data: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = data.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![data[first].clone()];
    let mut d2: Vec<f64> = data.iter().map(|p| sq_dist(p, &data[first])).collect();

    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if w > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave target just above the last partial sum
            pick.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).unwrap())
        } else {
            // every remaining point coincides with a centroid
            chosen.iter().position(|c| !c).unwrap()
        };
        chosen[pick] = true;
        for (i, p) in data.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &data[pick]));
        }
        centroids.push(data[pick].clone());
    }
    centroids
}

fn assign(data: &[Vec<f64>], centroids: &[Vec<f64>]) -> Vec<usize> {
    data.par_iter()
        .map(|p| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, cent) in centroids.iter().enumerate() {
                let d = sq_dist(p, cent);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            best
        })
        .collect()
}

fn update_centroids(data: &[Vec<f64>], labels: &[usize], k: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &c) in data.iter().zip(labels) {
        counts[c] += 1;
        for (s, x) in sums[c].iter_mut().zip(p) {
            *s += x;
        }
    }
    for (s, &cnt) in sums.iter_mut().zip(&counts) {
        if cnt > 0 {
            s.iter_mut().for_each(|x| *x /= cnt as f64);
        } else {
            s.clear();
        }
    }
    sums
}

/// Moves each empty centroid onto the point lying farthest from its own
/// centroid, never reusing a point.
fn reseed_empty(data: &[Vec<f64>], labels: &[usize], old: &[Vec<f64>], next: &mut [Vec<f64>]) {
    if next.iter().all(|c| !c.is_empty()) {
        return;
    }
    let mut far: Vec<(usize, f64)> = data
        .iter()
        .zip(labels)
        .enumerate()
        .map(|(i, (p, &c))| (i, sq_dist(p, &old[c])))
        .collect();
    far.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut far = far.into_iter();
    for c in next.iter_mut().filter(|c| c.is_empty()) {
        match far.next() {
            Some((i, _)) => *c = data[i].clone(),
            None => unreachable!("k <= n guarantees a point per empty cluster"),
        }
    }
}

/// Number of members per cluster id.
pub fn cluster_sizes(assignments: &[ClusterAssignment]) -> BTreeMap<usize, usize> {
    let mut out = BTreeMap::new();
    for a in assignments {
        *out.entry(a.cluster_id).or_insert(0) += 1;
    }
    out
}

/// Draws `budget` ids, an equal share from each cluster, best-ranked first.
///
/// Each cluster gets `budget / n_clusters` slots; the remainder goes one slot
/// apiece to the largest clusters (smaller id on ties). Slots a small cluster
/// cannot fill are refilled from the best not-yet-chosen ids overall. The
/// result is ordered by the global ranking.
pub fn balanced_select(
    assignments: &[ClusterAssignment],
    scores: &HashMap<String, f64>,
    budget: usize,
    direction: Direction,
) -> Result<Vec<String>> {
    if budget == 0 {
        return Err(Error::invalid("budget must be at least 1"));
    }
    if budget > assignments.len() {
        return Err(Error::invalid(format!(
            "budget {budget} exceeds the number of clustered records ({})",
            assignments.len()
        )));
    }
    let mut cluster_of: HashMap<&str, usize> = HashMap::with_capacity(assignments.len());
    let mut pool: HashMap<String, f64> = HashMap::with_capacity(assignments.len());
    for a in assignments {
        let s = scores.get(&a.instruction_id).ok_or_else(|| {
            Error::validation(format!("no score for {:?}", a.instruction_id))
        })?;
        if cluster_of.insert(&a.instruction_id, a.cluster_id).is_some() {
            return Err(Error::validation(format!(
                "{:?} assigned more than once",
                a.instruction_id
            )));
        }
        pool.insert(a.instruction_id.clone(), *s);
    }

    let order = ranked_ids(&pool, direction);
    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (pos, id) in order.iter().enumerate() {
        members.entry(cluster_of[id.as_str()]).or_default().push(pos);
    }

    let n_clusters = members.len();
    let base = budget / n_clusters;
    let extra = budget % n_clusters;
    let mut by_size: Vec<(usize, usize)> = members.iter().map(|(&c, m)| (c, m.len())).collect();
    by_size.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let bonus: HashSet<usize> = by_size.iter().take(extra).map(|&(c, _)| c).collect();

    let mut picked = vec![false; order.len()];
    let mut count = 0;
    for (c, m) in &members {
        let quota = base + usize::from(bonus.contains(c));
        for &pos in m.iter().take(quota) {
            picked[pos] = true;
            count += 1;
        }
    }
    for slot in picked.iter_mut() {
        if count == budget {
            break;
        }
        if !*slot {
            *slot = true;
            count += 1;
        }
    }

    Ok(order
        .into_iter()
        .zip(picked)
        .filter(|(_, p)| *p)
        .map(|(id, _)| id.clone())
        .collect())
}
