//! Independent reference implementations used as test oracles. Each one
//! follows the textbook definition directly and shares no code with the
//! library beyond plain data types.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use mmfuse::data::{ArtistId, ModalityId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_rows(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| (0..cols).map(|_| r.random_range(-1.0..1.0)).collect())
        .collect()
}

pub fn id(s: &str) -> ArtistId {
    ArtistId::new(s).unwrap()
}

pub fn modality(s: &str) -> ModalityId {
    ModalityId::new(s).unwrap()
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn cosine(x: &[f64], y: &[f64]) -> f64 {
    let d: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    d / (norm(x) * norm(y))
}

/// Pairwise InfoNCE by direct evaluation of every exponential.
pub fn infonce(a: &[Vec<f64>], b: &[Vec<f64>], tau: f64) -> f64 {
    let m = a.len();
    let zeta = |k: usize| if k < m { &a[k] } else { &b[k - m] };
    let xi = |x: &[f64], y: &[f64]| (cosine(x, y) / tau).exp();
    let mut loss = 0.0;
    for i in 0..m {
        let mut denom = 0.0;
        for k in 0..2 * m {
            if k != i {
                denom += xi(&a[i], zeta(k));
            }
        }
        loss -= (xi(&a[i], &b[i]) / denom).ln();
    }
    loss
}

pub fn ndcg(ranked: &[ArtistId], relevant: &BTreeSet<ArtistId>, k: usize) -> f64 {
    let gains: Vec<f64> = ranked
        .iter()
        .take(k)
        .map(|a| if relevant.contains(a) { 1.0 } else { 0.0 })
        .collect();
    let dcg: f64 = gains
        .iter()
        .enumerate()
        .map(|(i, g)| g / (i as f64 + 2.0).log2())
        .sum();
    let mut ideal = vec![1.0; relevant.len()];
    ideal.truncate(k);
    let idcg: f64 = ideal
        .iter()
        .enumerate()
        .map(|(i, g)| g / (i as f64 + 2.0).log2())
        .sum();
    if idcg == 0.0 {
        0.0
    } else {
        dcg / idcg
    }
}

/// Mean absolute difference over all ordered pairs, halved and scaled by
/// the mean.
pub fn gini(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let total: f64 = x.iter().sum();
    if x.is_empty() || total == 0.0 {
        return 0.0;
    }
    let mut diff = 0.0;
    for a in x {
        for b in x {
            diff += (a - b).abs();
        }
    }
    diff / (2.0 * n * total)
}

pub fn entropy(counts: &[f64]) -> f64 {
    let total: f64 = counts.iter().sum();
    let mut h = 0.0;
    for &c in counts {
        if c > 0.0 {
            h -= c / total * (c / total).ln();
        }
    }
    h
}

/// Tau-b from explicit pair classification; NaN when undefined.
pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> f64 {
    let (mut concordant, mut discordant, mut ties_x, mut ties_y) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            let dx = x[i].partial_cmp(&x[j]).unwrap();
            let dy = y[i].partial_cmp(&y[j]).unwrap();
            use std::cmp::Ordering::Equal;
            match (dx, dy) {
                (Equal, Equal) => {}
                (Equal, _) => ties_x += 1,
                (_, Equal) => ties_y += 1,
                _ if dx == dy => concordant += 1,
                _ => discordant += 1,
            }
        }
    }
    let n1 = (concordant + discordant + ties_x) as f64;
    let n2 = (concordant + discordant + ties_y) as f64;
    (concordant - discordant) as f64 / (n1 * n2).sqrt()
}

pub type Shared = BTreeMap<ModalityId, BTreeMap<ArtistId, Vec<f64>>>;

fn modalities_of<'a>(e: &'a Shared, a: &ArtistId) -> Vec<&'a ModalityId> {
    e.iter().filter(|(_, rows)| rows.contains_key(a)).map(|(m, _)| m).collect()
}

/// ECL by explicit triple loop; `None` where it is undefined.
pub fn ecl(e: &Shared, i: &ArtistId) -> Option<f64> {
    let ms = modalities_of(e, i);
    if ms.len() < 2 {
        return None;
    }
    let dist = |x: &[f64], y: &[f64]| 1.0 - cosine(x, y);
    let mut values = Vec::new();
    for u in &ms {
        for v in &ms {
            if u == v {
                continue;
            }
            let iu = &e[*u][i];
            let others: Vec<f64> = e[*v]
                .iter()
                .filter(|(j, _)| *j != i)
                .map(|(_, jv)| dist(iu, jv))
                .collect();
            if others.is_empty() {
                continue;
            }
            let expected = others.iter().sum::<f64>() / others.len() as f64;
            values.push(dist(iu, &e[*v][i]) - expected);
        }
    }
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

fn centroid(e: &Shared, a: &ArtistId) -> Vec<f64> {
    let parts: Vec<&Vec<f64>> = modalities_of(e, a).into_iter().map(|m| &e[m][a]).collect();
    let mut c = vec![0.0; parts[0].len()];
    for p in &parts {
        for (ci, x) in c.iter_mut().zip(p.iter()) {
            *ci += x / parts.len() as f64;
        }
    }
    c
}

/// `(intra, inter)` cluster distances by definition; `None` if undefined.
pub fn cluster_distances(e: &Shared, a: &ArtistId) -> Option<(f64, f64)> {
    let ms = modalities_of(e, a);
    if ms.is_empty() {
        return None;
    }
    let c = centroid(e, a);
    let intra = ms.iter().map(|m| 1.0 - cosine(&e[*m][a], &c)).sum::<f64>() / ms.len() as f64;
    let everyone: BTreeSet<&ArtistId> = e.values().flat_map(|rows| rows.keys()).collect();
    let others: Vec<f64> = everyone
        .into_iter()
        .filter(|b| *b != a)
        .map(|b| 1.0 - cosine(&c, &centroid(e, b)))
        .collect();
    if others.is_empty() {
        return None;
    }
    Some((intra, others.iter().sum::<f64>() / others.len() as f64))
}

/// Every sequence of length `n` over `0..base`.
pub fn sequences(n: usize, base: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|s| {
                (0..base).map(move |v| {
                    let mut t = s.clone();
                    t.push(v);
                    t
                })
            })
            .collect();
    }
    out
}

/// Every ordering of `items`.
pub fn permutations<T: Clone>(items: &[T]) -> Vec<Vec<T>> {
    if items.is_empty() {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, head.clone());
            out.push(p);
        }
    }
    out
}

/// Centered data's right singular vectors (as columns of a `cols × cols`
/// row-major matrix, ordered by descending singular value) and the
/// singular values.
pub fn svd_directions(rows: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let n = rows.len();
    let d = rows[0].len();
    let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let centered = nalgebra::DMatrix::from_fn(n, d, |i, j| rows[i][j] - mean[j]);
    let svd = centered.svd(false, true);
    let v_t = svd.v_t.expect("requested v_t");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let dirs = order
        .iter()
        .map(|&k| (0..d).map(|j| v_t[(k, j)]).collect())
        .collect();
    let values = order.iter().map(|&k| svd.singular_values[k]).collect();
    (dirs, values)
}
