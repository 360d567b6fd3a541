//! Trajectory-type taxonomy: z-scored configuration features, PCA, k-means
//! with k-means++ seeding, silhouette scoring and nearest-centroid
//! assignment.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{config_from_row, ConfigFeatureSummary, CONFIG_COLUMNS, FEATURE_NAMES};
use crate::model::ConfigurationId;
use crate::rng::SeededRng;
use crate::table::{fmt_f64, parse_count, parse_req, Table};

pub const DEFAULT_K: usize = 5;
pub const DEFAULT_COMPONENTS: usize = 3;
/// Independent k-means++ restarts; the lowest-inertia run is kept.
pub const DEFAULT_RESTARTS: usize = 10;
const TOLERANCE: f64 = 1e-8;
const MAX_ITER: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaxonomyOptions {
    pub k: usize,
    pub components: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for TaxonomyOptions {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            components: DEFAULT_COMPONENTS,
            restarts: DEFAULT_RESTARTS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingAssignment {
    pub framework: String,
    pub llm: String,
    /// 1-based type index.
    pub trajectory_type: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaxonomyModel {
    /// Features used, in input order (constant features are dropped).
    pub feature_order: Vec<String>,
    #[serde(default)]
    pub dropped_features: Vec<String>,
    pub means: Vec<f64>,
    /// Population standard deviations.
    pub stds: Vec<f64>,
    /// Component loadings, one row per component.
    pub components: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
    pub centroids: Vec<Vec<f64>>,
    pub k: usize,
    pub seed: u64,
    pub restarts: usize,
    pub inertia: f64,
    pub silhouette: f64,
    pub assignments: Vec<TrainingAssignment>,
}

fn feature_matrix(summaries: &[ConfigFeatureSummary], names: &[&str]) -> Result<Vec<Vec<f64>>> {
    summaries
        .iter()
        .map(|s| {
            names
                .iter()
                .map(|&n| {
                    s.get(n).ok_or_else(|| {
                        Error::invalid(format!("configuration {}: missing feature {n}", s.config))
                    })
                })
                .collect()
        })
        .collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid (ties go to the lowest index) and the
/// squared distance to it.
fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

struct Pca {
    components: Vec<Vec<f64>>,
    explained: Vec<f64>,
    eigenvalues: Vec<f64>,
}

/// Principal components of already-centred rows, by eigendecomposition of
/// the population covariance. Each component's largest-magnitude loading is
/// made positive.
fn pca(rows: &[Vec<f64>], n_components: usize) -> Pca {
    let n = rows.len();
    let p = rows[0].len();
    let x = DMatrix::from_fn(n, p, |i, j| rows[i][j]);
    let cov = (x.transpose() * &x) / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let total: f64 = eigenvalues.iter().sum();
    let m = n_components.min(p);
    let components = order[..m]
        .iter()
        .map(|&col| {
            let v: Vec<f64> = eig.eigenvectors.column(col).iter().copied().collect();
            let lead = v
                .iter()
                .enumerate()
                .fold((0, 0.0f64), |acc, (i, x)| if x.abs() > acc.1.abs() { (i, *x) } else { acc });
            if lead.1 < 0.0 {
                v.into_iter().map(|x| -x).collect()
            } else {
                v
            }
        })
        .collect();
    Pca {
        components,
        explained: eigenvalues[..m].iter().map(|e| if total > 0.0 { e / total } else { 0.0 }).collect(),
        eigenvalues,
    }
}

fn project(z: &[f64], components: &[Vec<f64>]) -> Vec<f64> {
    components
        .iter()
        .map(|c| c.iter().zip(z).map(|(a, b)| a * b).sum())
        .collect()
}

fn kmeans_pp(points: &[Vec<f64>], k: usize, rng: &mut SeededRng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.below(points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let next = points[rng.categorical(&d2)].clone();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &next));
        }
        centroids.push(next);
    }
    centroids
}

/// Lloyd iterations until no centroid moves more than the tolerance.
fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>) -> (Vec<Vec<f64>>, Vec<usize>, f64) {
    let dim = points[0].len();
    let k = centroids.len();
    let mut labels = vec![0; points.len()];
    for _ in 0..MAX_ITER {
        for (l, p) in labels.iter_mut().zip(points) {
            *l = nearest(p, &centroids).0;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (l, p) in labels.iter().zip(points) {
            counts[*l] += 1;
            for (s, x) in sums[*l].iter_mut().zip(p) {
                *s += x;
            }
        }
        let mut updated: Vec<Vec<f64>> = (0..k)
            .map(|c| {
                if counts[c] == 0 {
                    centroids[c].clone()
                } else {
                    sums[c].iter().map(|s| s / counts[c] as f64).collect()
                }
            })
            .collect();
        // an emptied cluster takes the point farthest from its centroid
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..points.len())
                    .max_by(|&a, &b| {
                        sq_dist(&points[a], &updated[labels[a]])
                            .total_cmp(&sq_dist(&points[b], &updated[labels[b]]))
                            .then(b.cmp(&a))
                    })
                    .expect("non-empty");
                updated[c] = points[far].clone();
                labels[far] = c;
            }
        }
        let shift = centroids
            .iter()
            .zip(&updated)
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = updated;
        if shift <= TOLERANCE {
            break;
        }
    }
    let mut inertia = 0.0;
    for (l, p) in labels.iter_mut().zip(points) {
        let (c, d) = nearest(p, &centroids);
        *l = c;
        inertia += d;
    }
    (centroids, labels, inertia)
}

/// Best of `restarts` k-means++ runs on substreams of `seed`.
pub fn kmeans(points: &[Vec<f64>], k: usize, restarts: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>, f64) {
    (0..restarts.max(1))
        .map(|run| {
            let mut rng = SeededRng::substream(seed, "kmeans", run as u64);
            let init = kmeans_pp(points, k, &mut rng);
            lloyd(points, init)
        })
        .fold(None, |best: Option<(Vec<Vec<f64>>, Vec<usize>, f64)>, run| match best {
            Some(b) if b.2 <= run.2 => Some(b),
            _ => Some(run),
        })
        .expect("at least one run")
}

/// Mean silhouette. A point alone in its cluster has no within-cluster
/// distance and scores (b − 0)/b = 1; a single cluster scores 0.
pub fn silhouette(points: &[Vec<f64>], labels: &[usize]) -> f64 {
    let n = points.len();
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut present = vec![0usize; k];
    for &l in labels {
        present[l] += 1;
    }
    if present.iter().filter(|&&c| c > 0).count() < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for i in 0..n {
        let mut sum = vec![0.0; k];
        for j in 0..n {
            if i != j {
                sum[labels[j]] += sq_dist(&points[i], &points[j]).sqrt();
            }
        }
        let own = labels[i];
        let a = if present[own] > 1 {
            sum[own] / (present[own] - 1) as f64
        } else {
            0.0
        };
        let b = (0..k)
            .filter(|&c| c != own && present[c] > 0)
            .map(|c| sum[c] / present[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        total += if denom > 0.0 { (b - a) / denom } else { 0.0 };
    }
    total / n as f64
}

/// Adjusted Rand index between two labellings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    let mut table: std::collections::HashMap<(usize, usize), usize> = Default::default();
    let mut rows: std::collections::HashMap<usize, usize> = Default::default();
    let mut cols: std::collections::HashMap<usize, usize> = Default::default();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let c2 = |m: usize| (m * m.saturating_sub(1)) as f64 / 2.0;
    let index: f64 = table.values().map(|&m| c2(m)).sum();
    let sum_a: f64 = rows.values().map(|&m| c2(m)).sum();
    let sum_b: f64 = cols.values().map(|&m| c2(m)).sum();
    let expected = sum_a * sum_b / c2(n);
    let max = (sum_a + sum_b) / 2.0;
    if max == expected {
        // both partitions trivial (all singletons or one block)
        return 1.0;
    }
    (index - expected) / (max - expected)
}

pub fn fit_taxonomy(summaries: &[ConfigFeatureSummary], opts: &TaxonomyOptions) -> Result<TaxonomyModel> {
    let k = opts.k;
    if k < 1 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if summaries.len() < k {
        return Err(Error::invalid(format!(
            "{} configurations are fewer than k = {k}",
            summaries.len()
        )));
    }
    let raw = feature_matrix(summaries, &FEATURE_NAMES)?;
    let n = raw.len() as f64;
    let mut feature_order = Vec::new();
    let mut dropped = Vec::new();
    let mut means = Vec::new();
    let mut stds = Vec::new();
    let mut kept = Vec::new();
    for (j, name) in FEATURE_NAMES.iter().enumerate() {
        let mean = raw.iter().map(|r| r[j]).sum::<f64>() / n;
        let sd = (raw.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n).sqrt();
        if sd > 1e-12 * mean.abs().max(1.0) {
            feature_order.push(name.to_string());
            means.push(mean);
            stds.push(sd);
            kept.push(j);
        } else {
            log::warn!("feature {name} is constant across configurations; dropped from the taxonomy");
            dropped.push(name.to_string());
        }
    }
    if kept.is_empty() {
        return Err(Error::invalid("every feature is constant across configurations"));
    }
    let z: Vec<Vec<f64>> = raw
        .iter()
        .map(|r| kept.iter().enumerate().map(|(c, &j)| (r[j] - means[c]) / stds[c]).collect())
        .collect();
    let pca = pca(&z, opts.components);
    let points: Vec<Vec<f64>> = z.iter().map(|r| project(r, &pca.components)).collect();

    let mut distinct = points.clone();
    distinct.sort_by(|a, b| a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal));
    distinct.dedup();
    if distinct.len() < k {
        return Err(Error::invalid(format!(
            "only {} distinct configurations in the projected space for k = {k}",
            distinct.len()
        )));
    }
    let (centroids, labels, inertia) = kmeans(&points, k, opts.restarts, opts.seed);
    Ok(TaxonomyModel {
        feature_order,
        dropped_features: dropped,
        means,
        stds,
        components: pca.components,
        explained_variance: pca.explained,
        silhouette: silhouette(&points, &labels),
        centroids,
        k,
        seed: opts.seed,
        restarts: opts.restarts,
        inertia,
        assignments: summaries
            .iter()
            .zip(&labels)
            .map(|(s, &l)| TrainingAssignment {
                framework: s.config.framework.clone(),
                llm: s.config.llm.clone(),
                trajectory_type: l + 1,
            })
            .collect(),
    })
}

/// Sum of the eigenvalues of the discarded components, for checking the
/// reconstruction identity.
pub fn discarded_variance(summaries: &[ConfigFeatureSummary], model: &TaxonomyModel) -> Result<f64> {
    let names: Vec<&str> = model.feature_order.iter().map(String::as_str).collect();
    let raw = feature_matrix(summaries, &names)?;
    let z: Vec<Vec<f64>> = raw
        .iter()
        .map(|r| r.iter().enumerate().map(|(j, x)| (x - model.means[j]) / model.stds[j]).collect())
        .collect();
    let all = pca(&z, names.len());
    Ok(all.eigenvalues[model.components.len()..].iter().sum())
}

impl TaxonomyModel {
    pub fn standardize_and_project(&self, summary: &ConfigFeatureSummary) -> Result<Vec<f64>> {
        let z: Vec<f64> = self
            .feature_order
            .iter()
            .enumerate()
            .map(|(j, name)| {
                summary
                    .get(name)
                    .map(|x| (x - self.means[j]) / self.stds[j])
                    .ok_or_else(|| {
                        Error::invalid(format!("configuration {}: missing feature {name}", summary.config))
                    })
            })
            .collect::<Result<_>>()?;
        Ok(project(&z, &self.components))
    }

    /// Nearest centroid as a 1-based type, with the Euclidean distance.
    pub fn assign(&self, summary: &ConfigFeatureSummary) -> Result<(usize, f64)> {
        let point = self.standardize_and_project(summary)?;
        let (c, d) = nearest(&point, &self.centroids);
        Ok((c + 1, d.sqrt()))
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
        let p = model.feature_order.len();
        let ok = model.means.len() == p
            && model.stds.len() == p
            && model.stds.iter().all(|s| *s > 0.0)
            && model.components.iter().all(|c| c.len() == p)
            && model.centroids.len() == model.k
            && model.centroids.iter().all(|c| c.len() == model.components.len());
        if !ok {
            return Err(Error::Schema(format!("{}: inconsistent taxonomy model dimensions", path.display())));
        }
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TypeAssignment {
    pub config: ConfigurationId,
    pub trajectory_type: usize,
    pub distance: f64,
}

pub fn assign_all(model: &TaxonomyModel, summaries: &[ConfigFeatureSummary]) -> Result<Vec<TypeAssignment>> {
    use rayon::prelude::*;
    summaries
        .par_iter()
        .map(|s| {
            let (t, d) = model.assign(s)?;
            Ok(TypeAssignment {
                config: s.config.clone(),
                trajectory_type: t,
                distance: d,
            })
        })
        .collect()
}

pub fn types_table(items: &[TypeAssignment]) -> Table {
    let mut headers = CONFIG_COLUMNS.to_vec();
    headers.extend(["type", "distance"]);
    let mut t = Table::new(&headers);
    for a in items {
        t.push(vec![
            a.config.framework.clone(),
            a.config.framework_version.clone().unwrap_or_default(),
            a.config.llm.clone(),
            a.config.llm_family.clone(),
            a.trajectory_type.to_string(),
            fmt_f64(a.distance),
        ]);
    }
    t
}

pub fn types_from_table(table: &Table) -> Result<Vec<TypeAssignment>> {
    let type_col = table.require("type")?;
    let dist_col = table.require("distance")?;
    table
        .rows
        .iter()
        .map(|row| {
            Ok(TypeAssignment {
                config: config_from_row(table, row)?,
                trajectory_type: parse_count(&row[type_col], "type")?,
                distance: parse_req(&row[dist_col], "distance")?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub k: usize,
    pub silhouette: f64,
    pub inertia: f64,
}

pub fn sweep(summaries: &[ConfigFeatureSummary], ks: std::ops::RangeInclusive<usize>, opts: &TaxonomyOptions) -> Result<Vec<SweepRow>> {
    ks.map(|k| {
        let m = fit_taxonomy(summaries, &TaxonomyOptions { k, ..*opts })?;
        Ok(SweepRow {
            k,
            silhouette: m.silhouette,
            inertia: m.inertia,
        })
    })
    .collect()
}

pub fn sweep_table(rows: &[SweepRow]) -> Table {
    let mut t = Table::new(&["k", "silhouette", "inertia"]);
    for r in rows {
        t.push(vec![r.k.to_string(), fmt_f64(r.silhouette), fmt_f64(r.inertia)]);
    }
    t
}
