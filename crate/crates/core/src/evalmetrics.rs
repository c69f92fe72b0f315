//! Explanation correctness, latent-space quality, robustness and
//! faithfulness measures.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, dim_err, Error, Result};
use crate::explain::AxisRule;

pub const KNN_K: usize = 5;
pub const K_MAX: usize = 20;
pub const N_TRIPLETS: usize = 20_000;

/// Cosine similarity; 0 when either vector is zero.
pub fn cs_score(psi: &[f64], gt: &[f64]) -> f64 {
    let dot: f64 = psi.iter().zip(gt).map(|(a, b)| a * b).sum();
    let na: f64 = psi.iter().map(|a| a * a).sum();
    let nb: f64 = gt.iter().map(|b| b * b).sum();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb).sqrt()).clamp(-1.0, 1.0)
}

fn slot_score(a: f64, b: f64) -> f64 {
    if a.is_finite() && b.is_finite() {
        1.0 / (1.0 + (a - b) * (a - b))
    } else {
        0.0
    }
}

fn bound_pairs<'a>(a: &'a AxisRule, b: &'a AxisRule) -> impl Iterator<Item = (f64, f64)> + 'a {
    a.lower
        .iter()
        .zip(&b.lower)
        .chain(a.upper.iter().zip(&b.upper))
        .map(|(x, y)| (*x, *y))
}

/// Rule proximity counted over the bounds that are finite in the ground
/// truth `gt`. With no such bound the score is 1 for an all-infinite
/// prediction and 0 otherwise.
pub fn cplt_score(pred: &AxisRule, gt: &AxisRule) -> Result<f64> {
    if pred.lower.len() != gt.lower.len() {
        return dim_err("rules over different feature counts");
    }
    let mut n = 0usize;
    let mut total = 0.0;
    for (p, g) in bound_pairs(pred, gt) {
        if g.is_finite() {
            n += 1;
            total += slot_score(p, g);
        }
    }
    if n == 0 {
        let vacuous = bound_pairs(pred, gt).all(|(p, _)| p.is_infinite());
        return Ok(if vacuous { 1.0 } else { 0.0 });
    }
    Ok(total / n as f64)
}

/// Symmetric variant counting bounds finite in either rule; 1 when neither
/// rule has a finite bound.
pub fn rule_similarity(a: &AxisRule, b: &AxisRule) -> Result<f64> {
    if a.lower.len() != b.lower.len() {
        return dim_err("rules over different feature counts");
    }
    let mut n = 0usize;
    let mut total = 0.0;
    for (x, y) in bound_pairs(a, b) {
        if x.is_finite() || y.is_finite() {
            n += 1;
            total += slot_score(x, y);
        }
    }
    Ok(if n == 0 { 1.0 } else { total / n as f64 })
}

/// Average ranks (1-based); tied values share the mean of their positions.
pub fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub value: f64,
    /// One side was constant; `value` is then 0 by convention.
    pub degenerate: bool,
}

pub fn pearson(a: &[f64], b: &[f64]) -> Correlation {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Correlation {
            value: 0.0,
            degenerate: true,
        };
    }
    Correlation {
        value: (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0),
        degenerate: false,
    }
}

pub fn spearman(a: &[f64], b: &[f64]) -> Result<Correlation> {
    if a.len() != b.len() {
        return dim_err("correlated samples differ in length");
    }
    if a.len() < 2 {
        return contract("rank correlation needs at least two samples");
    }
    Ok(pearson(&ranks(a), &ranks(b)))
}

/// Leave-one-out K-NN accuracy. Neighbours are ordered by distance, then
/// index; vote ties go to the class whose best neighbour is nearest.
pub fn knn_accuracy<D>(n: usize, labels: &[usize], k: usize, dist: D) -> Result<f64>
where
    D: Fn(usize, usize) -> f64 + Sync,
{
    if labels.len() != n {
        return dim_err("labels and points differ in count");
    }
    if n <= k {
        return contract(format!("K-NN with K={k} needs more than {k} points"));
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let hits: Vec<bool> = crate::par::map_range(n, |i| {
        let mut order: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (dist(i, j), j))
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut votes = vec![0usize; n_classes];
        let mut first = vec![usize::MAX; n_classes];
        for (rank, &(_, j)) in order.iter().take(k).enumerate() {
            votes[labels[j]] += 1;
            first[labels[j]] = first[labels[j]].min(rank);
        }
        let best = (0..n_classes)
            .max_by(|&a, &b| votes[a].cmp(&votes[b]).then(first[b].cmp(&first[a])))
            .unwrap_or(0);
        best == labels[i]
    });
    Ok(hits.iter().filter(|&&h| h).count() as f64 / n as f64)
}

/// Ratio of latent-space to input-space leave-one-out K-NN accuracy.
pub fn knn_gain<DX, DZ>(n: usize, labels: &[usize], k: usize, dist_x: DX, dist_z: DZ) -> Result<f64>
where
    DX: Fn(usize, usize) -> f64 + Sync,
    DZ: Fn(usize, usize) -> f64 + Sync,
{
    let ax = knn_accuracy(n, labels, k, dist_x)?;
    if ax == 0.0 {
        return Err(Error::UndefinedRatio(
            "input-space K-NN accuracy is zero".into(),
        ));
    }
    Ok(knn_accuracy(n, labels, k, dist_z)? / ax)
}

fn sign(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

/// Whether two distances order the pair `(j, v)` around anchor `i` alike.
pub fn triplet_agrees<A, B>(i: usize, j: usize, v: usize, dist_a: &A, dist_b: &B) -> bool
where
    A: Fn(usize, usize) -> f64,
    B: Fn(usize, usize) -> f64,
{
    sign(dist_a(i, j) - dist_a(i, v)) == sign(dist_b(i, j) - dist_b(i, v))
}

/// Fraction of seeded random triplets `(i, j, v)` of distinct points whose
/// relative order agrees under both distances. When `n_triplets` covers
/// every ordered triplet, all of them are counted instead.
pub fn triplet_accuracy<A, B>(
    n: usize,
    dist_a: A,
    dist_b: B,
    n_triplets: usize,
    seed: u64,
) -> Result<f64>
where
    A: Fn(usize, usize) -> f64,
    B: Fn(usize, usize) -> f64,
{
    if n < 3 {
        return contract("triplets need at least three points");
    }
    if n_triplets == 0 {
        return contract("no triplets requested");
    }
    if n.checked_mul(n - 1)
        .and_then(|v| v.checked_mul(n - 2))
        .is_some_and(|all| all <= n_triplets)
    {
        return triplet_accuracy_exhaustive(n, dist_a, dist_b);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut agree = 0usize;
    for _ in 0..n_triplets {
        let i = rng.random_range(0..n);
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        let mut v = rng.random_range(0..n - 2);
        for skip in [i.min(j), i.max(j)] {
            if v >= skip {
                v += 1;
            }
        }
        agree += usize::from(triplet_agrees(i, j, v, &dist_a, &dist_b));
    }
    Ok(agree as f64 / n_triplets as f64)
}

/// Agreement over every ordered triplet of distinct points.
pub fn triplet_accuracy_exhaustive<A, B>(n: usize, dist_a: A, dist_b: B) -> Result<f64>
where
    A: Fn(usize, usize) -> f64,
    B: Fn(usize, usize) -> f64,
{
    if n < 3 {
        return contract("triplets need at least three points");
    }
    let mut agree = 0usize;
    let mut total = 0usize;
    for i in 0..n {
        for j in (0..n).filter(|&j| j != i) {
            for v in (0..n).filter(|&v| v != i && v != j) {
                agree += usize::from(triplet_agrees(i, j, v, &dist_a, &dist_b));
                total += 1;
            }
        }
    }
    Ok(agree as f64 / total as f64)
}

/// For every point, the up to `k_max` nearest other points with the same
/// label, nearest first (ties by index).
pub fn same_label_neighbors<D>(n: usize, labels: &[usize], k_max: usize, dist: D) -> Vec<Vec<usize>>
where
    D: Fn(usize, usize) -> f64 + Sync,
{
    crate::par::map_range(n, |i| {
        let mut c: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i && labels[j] == labels[i])
            .map(|j| (dist(i, j), j))
            .collect();
        c.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        c.into_iter().take(k_max).map(|(_, j)| j).collect()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sensitivity {
    pub score: f64,
    /// Fewer than `k_max` neighbours were available.
    pub truncated: bool,
}

/// Mean over neighbourhood sizes `K = 1..=k_max` of the least similar
/// explanation among the `K` nearest same-label neighbours. `None` for
/// points without a neighbour.
pub fn robustness_max_sensitivity<S>(
    neighbors: &[Vec<usize>],
    k_max: usize,
    sim: S,
) -> Vec<Option<Sensitivity>>
where
    S: Fn(usize, usize) -> f64 + Sync,
{
    crate::par::map_range(neighbors.len(), |i| {
        let nb = &neighbors[i];
        let kk = nb.len().min(k_max);
        if kk == 0 {
            return None;
        }
        let mut worst = f64::INFINITY;
        let mut total = 0.0;
        for &j in &nb[..kk] {
            worst = worst.min(sim(i, j));
            total += worst;
        }
        Some(Sensitivity {
            score: total / kk as f64,
            truncated: kk < k_max,
        })
    })
}

/// Rank correlation between explanation distances `1 - sim` and Euclidean
/// distances of black-box outputs over all pairs.
pub fn faithfulness<S>(outputs: &[Vec<f64>], sim: S) -> Result<Correlation>
where
    S: Fn(usize, usize) -> f64,
{
    let n = outputs.len();
    if n < 3 {
        return contract("faithfulness needs at least three instances");
    }
    let mut de = Vec::new();
    let mut db = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            de.push(1.0 - sim(i, j));
            db.push(euclid(&outputs[i], &outputs[j]));
        }
    }
    spearman(&de, &db)
}

/// Rank correlation between explanation distances and input distances over
/// pairs whose predicted labels agree.
pub fn global_robustness<S, D>(labels: &[usize], input_dist: D, sim: S) -> Result<Correlation>
where
    S: Fn(usize, usize) -> f64,
    D: Fn(usize, usize) -> f64,
{
    let n = labels.len();
    let mut de = Vec::new();
    let mut dx = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if labels[i] == labels[j] {
                de.push(1.0 - sim(i, j));
                dx.push(input_dist(i, j));
            }
        }
    }
    if de.len() < 3 {
        return contract("global robustness needs at least three same-label pairs");
    }
    spearman(&de, &dx)
}

pub fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Median absolute deviation from the median.
pub fn mad(v: &[f64]) -> f64 {
    let med = median(v);
    let dev: Vec<f64> = v.iter().map(|x| (x - med).abs()).collect();
    median(&dev)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    pub config: serde_json::Value,
    pub per_instance: Vec<f64>,
    pub mean: f64,
    pub mad: f64,
}

impl MetricReport {
    pub fn new(
        metric: impl Into<String>,
        config: serde_json::Value,
        per_instance: Vec<f64>,
    ) -> Self {
        let mean = if per_instance.is_empty() {
            f64::NAN
        } else {
            per_instance.iter().sum::<f64>() / per_instance.len() as f64
        };
        let mad = mad(&per_instance);
        Self {
            metric: metric.into(),
            config,
            per_instance,
            mean,
            mad,
        }
    }
}
