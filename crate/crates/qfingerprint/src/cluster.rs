//! K-means++ partitioning of feature vectors and the K-d-tree bin-density
//! diagnostic used when choosing K by hand.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurize::FeatureMatrix;

/// A K-way partition: per-row cluster labels and the final centroids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub k: usize,
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub seed: u64,
    pub inertia: f64,
}

/// Per-iteration diagnostics of a K-means run.
#[derive(Debug, Clone, PartialEq)]
pub struct KmeansTrace {
    /// Inertia measured after each assignment step.
    pub inertia: Vec<f64>,
    /// Iterations in which an empty cluster was reseeded from the farthest
    /// point; monotone non-increase is only guaranteed between repairs.
    pub repaired_iters: Vec<usize>,
    pub n_iters: usize,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum()
}

/// Lloyd's algorithm with K-means++ (D-squared) seeding. Deterministic for a
/// fixed seed; empty clusters are repaired by reseeding from the point
/// farthest from its assigned centroid.
pub fn kmeans_pp(
    features: &FeatureMatrix,
    k: usize,
    seed: u64,
    max_iters: usize,
    tol: f64,
) -> Result<(ClusterAssignment, KmeansTrace)> {
    let n = features.n_rows();
    let d = features.dim();
    if k < 1 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    if k > n {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds the number of rows {n}"
        )));
    }
    let rows: Vec<&[f64]> = features.rows().iter().map(|r| r.weights.as_slice()).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);

    // D^2 seeding: first centroid uniform, the rest weighted by squared
    // distance to the nearest chosen centroid.
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(rows[rng.gen_range(0..n)].to_vec());
    let mut min_d2: Vec<f64> = rows.iter().map(|r| dist2(r, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = min_d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, w) in min_d2.iter().enumerate() {
                target -= w;
                if target <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            // All remaining mass at distance zero: duplicate points.
            rng.gen_range(0..n)
        };
        centroids.push(rows[next].to_vec());
        for (i, row) in rows.iter().enumerate() {
            let d2 = dist2(row, centroids.last().unwrap());
            if d2 < min_d2[i] {
                min_d2[i] = d2;
            }
        }
    }

    let mut labels = vec![0usize; n];
    let mut trace = KmeansTrace {
        inertia: Vec::new(),
        repaired_iters: Vec::new(),
        n_iters: 0,
    };
    let mut inertia = f64::INFINITY;

    for iter in 0..max_iters {
        // Assignment: nearest centroid, ties to the lowest cluster id.
        inertia = 0.0;
        for (i, row) in rows.iter().enumerate() {
            let mut best = 0usize;
            let mut best_d2 = dist2(row, &centroids[0]);
            for (c, centroid) in centroids.iter().enumerate().skip(1) {
                let d2 = dist2(row, centroid);
                if d2 < best_d2 {
                    best = c;
                    best_d2 = d2;
                }
            }
            labels[i] = best;
            inertia += best_d2;
        }
        trace.inertia.push(inertia);
        trace.n_iters = iter + 1;

        // Repair empty clusters from the farthest point before updating.
        let mut counts = vec![0usize; k];
        for &l in &labels {
            counts[l] += 1;
        }
        let mut repaired = false;
        for c in 0..k {
            if counts[c] == 0 {
                let (far, _) = rows
                    .iter()
                    .enumerate()
                    .map(|(i, row)| (i, dist2(row, &centroids[labels[i]])))
                    .fold((0usize, -1.0), |acc, (i, d2)| {
                        if d2 > acc.1 {
                            (i, d2)
                        } else {
                            acc
                        }
                    });
                centroids[c] = rows[far].to_vec();
                counts[labels[far]] -= 1;
                labels[far] = c;
                counts[c] = 1;
                repaired = true;
            }
        }
        if repaired {
            trace.repaired_iters.push(iter);
            continue;
        }

        // Update: mean of members, summed in row order for determinism.
        let mut next: Vec<Vec<f64>> = vec![vec![0.0; d]; k];
        for (i, row) in rows.iter().enumerate() {
            let acc = &mut next[labels[i]];
            for (a, x) in acc.iter_mut().zip(row.iter()) {
                *a += x;
            }
        }
        for c in 0..k {
            for a in next[c].iter_mut() {
                *a /= counts[c] as f64;
            }
        }

        let shift = centroids
            .iter()
            .zip(next.iter())
            .map(|(old, new)| dist2(old, new).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        if shift < tol {
            break;
        }
    }

    // Final assignment against the final centroids.
    inertia = 0.0;
    for (i, row) in rows.iter().enumerate() {
        let mut best = 0usize;
        let mut best_d2 = dist2(row, &centroids[0]);
        for (c, centroid) in centroids.iter().enumerate().skip(1) {
            let d2 = dist2(row, centroid);
            if d2 < best_d2 {
                best = c;
                best_d2 = d2;
            }
        }
        labels[i] = best;
        inertia += best_d2;
    }
    trace.inertia.push(inertia);

    Ok((
        ClusterAssignment {
            k,
            labels,
            centroids,
            seed,
            inertia,
        },
        trace,
    ))
}

impl ClusterAssignment {
    /// Members of each cluster as row indices, in row order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }

    /// JSONL of `{id, cluster}` plus a `.meta.json` sidecar holding k, seed,
    /// inertia, and centroids.
    pub fn save(&self, path: impl AsRef<Path>, ids: &[String]) -> Result<()> {
        let path = path.as_ref();
        if ids.len() != self.labels.len() {
            return Err(Error::DimensionMismatch {
                expected: self.labels.len(),
                got: ids.len(),
            });
        }
        let mut out = String::new();
        for (id, label) in ids.iter().zip(self.labels.iter()) {
            out.push_str(
                &serde_json::to_string(&AssignmentLine {
                    id: id.clone(),
                    cluster: *label,
                })
                .map_err(|e| Error::json(path, e))?,
            );
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))?;

        let meta = AssignmentMeta {
            k: self.k,
            seed: self.seed,
            inertia: self.inertia,
            centroids: self.centroids.clone(),
        };
        let meta_path = meta_path(path);
        fs::write(
            &meta_path,
            serde_json::to_string(&meta).map_err(|e| Error::json(&meta_path, e))?,
        )
        .map_err(|e| Error::io(&meta_path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, Vec<String>)> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut ids = Vec::new();
        let mut labels = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let entry: AssignmentLine =
                serde_json::from_str(line).map_err(|e| Error::json(path, e))?;
            ids.push(entry.id);
            labels.push(entry.cluster);
        }
        let meta_path = meta_path(path);
        let meta_text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: AssignmentMeta =
            serde_json::from_str(&meta_text).map_err(|e| Error::json(&meta_path, e))?;
        if labels.iter().any(|&l| l >= meta.k) {
            return Err(Error::Format {
                path: path.to_path_buf(),
                reason: "cluster label out of range".into(),
            });
        }
        Ok((
            ClusterAssignment {
                k: meta.k,
                labels,
                centroids: meta.centroids,
                seed: meta.seed,
                inertia: meta.inertia,
            },
            ids,
        ))
    }
}

fn meta_path(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_os_string();
    os.push(".meta.json");
    std::path::PathBuf::from(os)
}

#[derive(Serialize, Deserialize)]
struct AssignmentLine {
    id: String,
    cluster: usize,
}

#[derive(Serialize, Deserialize)]
struct AssignmentMeta {
    k: usize,
    seed: u64,
    inertia: f64,
    centroids: Vec<Vec<f64>>,
}

/// One leaf bin of the density tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafBin {
    pub depth: usize,
    pub count: usize,
}

/// Leaf occupancy of a K-d tree over the feature rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityReport {
    pub leaf_capacity: usize,
    pub n_points: usize,
    pub leaves: Vec<LeafBin>,
    pub max_depth: usize,
    /// Histogram of leaf counts: (occupancy, number of leaves).
    pub occupancy_histogram: BTreeMap<usize, usize>,
}

/// Build a K-d tree by cycling through dimensions (skipping spreadless ones)
/// and splitting at the midpoint of the min/max range, until a node holds at
/// most `leaf_capacity` points or cannot be split. Reports per-leaf counts
/// so a human can judge a plausible K.
pub fn kd_density_report(features: &FeatureMatrix, leaf_capacity: usize) -> Result<DensityReport> {
    if leaf_capacity < 1 {
        return Err(Error::InvalidArgument("leaf_capacity must be >= 1".into()));
    }
    let rows: Vec<&[f64]> = features.rows().iter().map(|r| r.weights.as_slice()).collect();
    let d = features.dim();
    let mut leaves = Vec::new();
    let mut stack = vec![(rows.iter().map(|_| 0usize).len(), 0usize)];
    stack.clear();

    // Explicit work stack of (point indices, depth).
    let mut work: Vec<(Vec<usize>, usize)> = vec![((0..rows.len()).collect(), 0)];
    while let Some((indices, depth)) = work.pop() {
        if indices.len() <= leaf_capacity {
            leaves.push(LeafBin {
                depth,
                count: indices.len(),
            });
            continue;
        }
        // First dimension at or after depth % d with nonzero spread.
        let mut split_dim = None;
        for probe in 0..d {
            let dim = (depth + probe) % d;
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for &i in &indices {
                let v = rows[i][dim];
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if hi > lo {
                split_dim = Some((dim, (lo + hi) / 2.0));
                break;
            }
        }
        let Some((dim, mid)) = split_dim else {
            // All points identical across every dimension.
            leaves.push(LeafBin {
                depth,
                count: indices.len(),
            });
            continue;
        };
        let (left, right): (Vec<usize>, Vec<usize>) =
            indices.into_iter().partition(|&i| rows[i][dim] <= mid);
        work.push((right, depth + 1));
        work.push((left, depth + 1));
    }

    let max_depth = leaves.iter().map(|l| l.depth).max().unwrap_or(0);
    let mut occupancy_histogram = BTreeMap::new();
    for leaf in &leaves {
        *occupancy_histogram.entry(leaf.count).or_insert(0) += 1;
    }
    Ok(DensityReport {
        leaf_capacity,
        n_points: rows.len(),
        leaves,
        max_depth,
        occupancy_histogram,
    })
}

/// Uniform per-cluster sample of record ids without replacement; clusters
/// smaller than `per_cluster` are taken whole. Each cluster draws from its
/// own RNG stream, so the result is stable under cluster enumeration order.
pub fn sample_seed_set(
    assignment: &ClusterAssignment,
    ids: &[String],
    per_cluster: usize,
    seed: u64,
) -> Result<BTreeMap<usize, Vec<String>>> {
    if per_cluster < 1 {
        return Err(Error::InvalidArgument("per_cluster must be >= 1".into()));
    }
    if ids.len() != assignment.labels.len() {
        return Err(Error::DimensionMismatch {
            expected: assignment.labels.len(),
            got: ids.len(),
        });
    }
    let mut out = BTreeMap::new();
    for (cluster, members) in assignment.members().into_iter().enumerate() {
        if members.is_empty() {
            out.insert(cluster, Vec::new());
            continue;
        }
        let chosen = if members.len() <= per_cluster {
            members
        } else {
            let mut rng = ChaCha20Rng::seed_from_u64(seed ^ (cluster as u64).wrapping_mul(0x9E3779B97F4A7C15));
            // Partial Fisher-Yates over a copy of the member list.
            let mut pool = members;
            for i in 0..per_cluster {
                let j = rng.gen_range(i..pool.len());
                pool.swap(i, j);
            }
            let mut picked: Vec<usize> = pool[..per_cluster].to_vec();
            picked.sort_unstable();
            picked
        };
        out.insert(cluster, chosen.into_iter().map(|i| ids[i].clone()).collect());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featurize::{FeatureMatrix, FeatureVector};

    fn matrix(rows: Vec<Vec<f64>>) -> FeatureMatrix {
        let d = rows[0].len();
        FeatureMatrix::new(
            d,
            "test".into(),
            rows.into_iter()
                .map(|weights| FeatureVector { weights })
                .collect(),
        )
        .unwrap()
    }

    /// Two binary blobs active on disjoint index ranges.
    fn blob_matrix(per_blob: usize, d: usize) -> (FeatureMatrix, Vec<usize>) {
        let mut rows = Vec::new();
        let mut truth = Vec::new();
        for i in 0..per_blob * 2 {
            let mut w = vec![0.0; d];
            let blob = i / per_blob;
            let base = blob * (d / 2);
            for j in 0..d / 4 {
                w[base + (i + j) % (d / 2)] = 1.0;
            }
            rows.push(w);
            truth.push(blob);
        }
        (matrix(rows), truth)
    }

    fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
        let ka = a.iter().max().unwrap() + 1;
        let kb = b.iter().max().unwrap() + 1;
        let mut table = vec![vec![0usize; kb]; ka];
        for (&x, &y) in a.iter().zip(b.iter()) {
            table[x][y] += 1;
        }
        let comb2 = |n: usize| (n * n.saturating_sub(1)) as f64 / 2.0;
        let sum_ij: f64 = table.iter().flatten().map(|&n| comb2(n)).sum();
        let sum_a: f64 = table.iter().map(|row| comb2(row.iter().sum())).sum();
        let sum_b: f64 = (0..kb)
            .map(|j| comb2(table.iter().map(|row| row[j]).sum()))
            .sum();
        let total = comb2(a.len());
        let expected = sum_a * sum_b / total;
        let max = (sum_a + sum_b) / 2.0;
        (sum_ij - expected) / (max - expected)
    }

    #[test]
    fn two_blobs_recovered_exactly() {
        let (m, truth) = blob_matrix(20, 16);
        let (assignment, trace) = kmeans_pp(&m, 2, 7, 300, 1e-6).unwrap();
        assert_eq!(adjusted_rand_index(&assignment.labels, &truth), 1.0);
        assert!(trace.repaired_iters.is_empty());
        for w in trace.inertia.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "inertia increased: {w:?}");
        }
    }

    #[test]
    fn n_equals_k_gives_singletons() {
        let m = matrix(vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ]);
        let (assignment, _) = kmeans_pp(&m, 3, 1, 300, 1e-6).unwrap();
        let mut sorted = assignment.labels.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1, 2]);
        assert_eq!(assignment.inertia, 0.0);
    }

    #[test]
    fn k_larger_than_n_is_an_error() {
        let m = matrix(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert!(kmeans_pp(&m, 3, 0, 300, 1e-6).is_err());
    }

    #[test]
    fn fixed_seed_is_bit_deterministic() {
        let (m, _) = blob_matrix(15, 12);
        let (a1, t1) = kmeans_pp(&m, 3, 99, 300, 1e-6).unwrap();
        let (a2, t2) = kmeans_pp(&m, 3, 99, 300, 1e-6).unwrap();
        assert_eq!(a1, a2);
        assert_eq!(t1, t2);
    }

    #[test]
    fn every_point_ends_on_its_nearest_centroid() {
        let (m, _) = blob_matrix(10, 8);
        let (assignment, _) = kmeans_pp(&m, 2, 5, 300, 1e-6).unwrap();
        for (i, row) in m.rows().iter().enumerate() {
            let mut best = 0;
            let mut best_d2 = f64::INFINITY;
            for (c, centroid) in assignment.centroids.iter().enumerate() {
                let d2 = dist2(&row.weights, centroid);
                if d2 < best_d2 {
                    best = c;
                    best_d2 = d2;
                }
            }
            assert_eq!(assignment.labels[i], best);
        }
    }

    #[test]
    fn no_cluster_is_left_empty() {
        // Many duplicate points force D^2 mass to zero and stress repair.
        let mut rows = vec![vec![0.0, 0.0]; 12];
        rows.push(vec![1.0, 1.0]);
        rows.push(vec![1.0, 1.0]);
        let m = matrix(rows);
        let (assignment, _) = kmeans_pp(&m, 4, 3, 300, 1e-6).unwrap();
        let mut counts = vec![0usize; 4];
        for &l in &assignment.labels {
            counts[l] += 1;
        }
        assert!(counts.iter().all(|&c| c > 0), "counts {counts:?}");
    }

    #[test]
    fn assignment_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("assignment.jsonl");
        let (m, _) = blob_matrix(5, 8);
        let (assignment, _) = kmeans_pp(&m, 2, 11, 300, 1e-6).unwrap();
        let ids: Vec<String> = (0..m.n_rows()).map(|i| format!("q{i}")).collect();
        assignment.save(&path, &ids).unwrap();
        let (loaded, loaded_ids) = ClusterAssignment::load(&path).unwrap();
        assert_eq!(loaded, assignment);
        assert_eq!(loaded_ids, ids);
    }

    #[test]
    fn identical_points_share_one_leaf() {
        let m = matrix(vec![vec![0.5, 0.5]; 8]);
        let report = kd_density_report(&m, 16).unwrap();
        assert_eq!(report.leaves.len(), 1);
        assert_eq!(report.leaves[0].count, 8);
    }

    #[test]
    fn disjoint_blobs_split_into_two_leaves() {
        let mut rows = Vec::new();
        for i in 0..64 {
            let blob = i / 32;
            let mut w = vec![0.0; 4];
            w[0] = blob as f64;
            w[1] = (i % 7) as f64 / 10.0;
            rows.push(w);
        }
        let report = kd_density_report(&matrix(rows), 32).unwrap();
        assert_eq!(report.leaves.len(), 2);
        assert!(report.leaves.iter().all(|l| l.count == 32));
    }

    #[test]
    fn capacity_bounds_leaf_occupancy() {
        let mut rng = ChaCha20Rng::seed_from_u64(17);
        let rows: Vec<Vec<f64>> = (0..64)
            .map(|_| (0..6).map(|_| rng.gen::<f64>()).collect())
            .collect();
        let report = kd_density_report(&matrix(rows), 8).unwrap();
        assert!(report.leaves.len() >= 8);
        assert!(report.leaves.iter().all(|l| l.count <= 8));
        assert_eq!(
            report.leaves.iter().map(|l| l.count).sum::<usize>(),
            report.n_points
        );
    }

    fn toy_assignment(sizes: &[usize]) -> (ClusterAssignment, Vec<String>) {
        let mut labels = Vec::new();
        for (c, &s) in sizes.iter().enumerate() {
            labels.extend(std::iter::repeat(c).take(s));
        }
        let ids = (0..labels.len()).map(|i| format!("q{i}")).collect();
        (
            ClusterAssignment {
                k: sizes.len(),
                centroids: vec![vec![0.0]; sizes.len()],
                seed: 0,
                inertia: 0.0,
                labels,
            },
            ids,
        )
    }

    #[test]
    fn samples_forty_distinct_ids() {
        let (assignment, ids) = toy_assignment(&[100]);
        let sample = sample_seed_set(&assignment, &ids, 40, 1).unwrap();
        let picked = &sample[&0];
        assert_eq!(picked.len(), 40);
        let mut dedup = picked.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), 40);
    }

    #[test]
    fn small_cluster_taken_whole() {
        let (assignment, ids) = toy_assignment(&[25, 60]);
        let sample = sample_seed_set(&assignment, &ids, 40, 1).unwrap();
        assert_eq!(sample[&0].len(), 25);
        assert_eq!(sample[&1].len(), 40);
    }

    #[test]
    fn sampling_is_deterministic() {
        let (assignment, ids) = toy_assignment(&[80, 90]);
        let a = sample_seed_set(&assignment, &ids, 40, 5).unwrap();
        let b = sample_seed_set(&assignment, &ids, 40, 5).unwrap();
        assert_eq!(a, b);
        let c = sample_seed_set(&assignment, &ids, 40, 6).unwrap();
        assert_ne!(a, c);
    }
}
