//! One-dimensional K-means.
//!
//! [`lloyd`] is the classic assign/update iteration. [`optimal_partition`]
//! solves the same objective exactly by dynamic programming over the sorted
//! distinct values (optimal 1D clusters are contiguous in sorted order).

use crate::scalar::Scalar;

pub const MAX_ITERATIONS: usize = 100;
pub const TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct KMeans1d<T> {
    /// Cluster index of each input point.
    pub assignment: Vec<usize>,
    pub centroids: Vec<T>,
    /// Within-cluster sum of squared deviations.
    pub sse: T,
    pub iterations: usize,
}

/// Linearly interpolated quantile of already sorted values.
pub fn quantile<T: Scalar>(sorted: &[T], q: f64) -> T {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = T::of(pos - lo as f64);
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Centroids at the (2i+1)/(2k) quantiles of the data, ascending.
pub fn quantile_init<T: Scalar>(values: &[T], k: usize) -> Vec<T> {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    (0..k)
        .map(|i| quantile(&sorted, (2 * i + 1) as f64 / (2 * k) as f64))
        .collect()
}

pub fn sse<T: Scalar>(values: &[T], assignment: &[usize], centroids: &[T]) -> T {
    values
        .iter()
        .zip(assignment)
        .map(|(&v, &c)| (v - centroids[c]).powi(2))
        .sum()
}

fn assign<T: Scalar>(values: &[T], centroids: &[T], out: &mut [usize]) {
    // visit clusters from the highest centroid down so that distance ties
    // go to the higher cluster
    let mut order: Vec<usize> = (0..centroids.len()).collect();
    order.sort_by(|&a, &b| centroids[b].partial_cmp(&centroids[a]).unwrap());
    for (v, slot) in values.iter().zip(out.iter_mut()) {
        let mut best = order[0];
        let mut best_d = (*v - centroids[best]).abs();
        for &c in &order[1..] {
            let d = (*v - centroids[c]).abs();
            if d < best_d {
                best = c;
                best_d = d;
            }
        }
        *slot = best;
    }
}

/// Lloyd iterations from `init` until no centroid moves by more than
/// [`TOLERANCE`] or [`MAX_ITERATIONS`] is reached. Empty clusters keep their
/// centroid. Calls `observe(sse)` after every assignment step.
pub fn lloyd_with<T: Scalar>(
    values: &[T],
    init: Vec<T>,
    mut observe: impl FnMut(T),
) -> KMeans1d<T> {
    let k = init.len();
    let mut centroids = init;
    let mut assignment = vec![0usize; values.len()];
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        assign(values, &centroids, &mut assignment);
        observe(sse(values, &assignment, &centroids));
        let mut sums = vec![T::zero(); k];
        let mut counts = vec![0usize; k];
        for (&v, &c) in values.iter().zip(&assignment) {
            sums[c] += v;
            counts[c] += 1;
        }
        let mut moved = T::zero();
        for c in 0..k {
            if counts[c] > 0 {
                let next = sums[c] / T::from_usize(counts[c]).unwrap();
                moved = moved.max((next - centroids[c]).abs());
                centroids[c] = next;
            }
        }
        if moved < T::of(TOLERANCE) {
            break;
        }
    }
    assign(values, &centroids, &mut assignment);
    let sse = sse(values, &assignment, &centroids);
    observe(sse);
    KMeans1d {
        assignment,
        centroids,
        sse,
        iterations,
    }
}

pub fn lloyd<T: Scalar>(values: &[T], init: Vec<T>) -> KMeans1d<T> {
    lloyd_with(values, init, |_| {})
}

/// Globally optimal `k`-partition of 1D data. Equal values always share a
/// cluster. Returns `None` when there are fewer than `k` distinct values.
/// Centroids are ascending.
pub fn optimal_partition<T: Scalar>(values: &[T], k: usize) -> Option<KMeans1d<T>> {
    if k == 0 || values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut distinct: Vec<(T, usize)> = Vec::new();
    for v in sorted {
        match distinct.last_mut() {
            Some((last, n)) if *last == v => *n += 1,
            _ => distinct.push((v, 1)),
        }
    }
    let d = distinct.len();
    if d < k {
        return None;
    }
    // prefix sums of weight, first and second moments around the mean to
    // limit cancellation
    let n_total = T::from_usize(values.len()).unwrap();
    let shift = values.iter().copied().sum::<T>() / n_total;
    let mut w = vec![T::zero(); d + 1];
    let mut s1 = vec![T::zero(); d + 1];
    let mut s2 = vec![T::zero(); d + 1];
    for (i, &(v, n)) in distinct.iter().enumerate() {
        let nf = T::from_usize(n).unwrap();
        let x = v - shift;
        w[i + 1] = w[i] + nf;
        s1[i + 1] = s1[i] + nf * x;
        s2[i + 1] = s2[i] + nf * x * x;
    }
    // cost of grouping distinct values [i, j)
    let cost = |i: usize, j: usize| -> T {
        let wn = w[j] - w[i];
        let m = s1[j] - s1[i];
        (s2[j] - s2[i] - m * m / wn).max(T::zero())
    };
    let inf = T::infinity();
    // best[c][j]: min cost of splitting the first j distinct values into c+1 groups
    let mut best = vec![vec![inf; d + 1]; k];
    let mut split = vec![vec![0usize; d + 1]; k];
    for (j, b) in best[0].iter_mut().enumerate().skip(1) {
        *b = cost(0, j);
    }
    for c in 1..k {
        for j in (c + 1)..=d {
            for i in c..j {
                let cand = best[c - 1][i] + cost(i, j);
                if cand < best[c][j] {
                    best[c][j] = cand;
                    split[c][j] = i;
                }
            }
        }
    }
    // group boundaries over distinct indices
    let mut bounds = vec![d; k + 1];
    bounds[0] = 0;
    let mut j = d;
    for c in (1..k).rev() {
        j = split[c][j];
        bounds[c] = j;
    }
    let mut centroids = Vec::with_capacity(k);
    for c in 0..k {
        let (i, j) = (bounds[c], bounds[c + 1]);
        centroids.push(shift + (s1[j] - s1[i]) / (w[j] - w[i]));
    }
    let group_of = |v: T| -> usize {
        let idx = distinct
            .binary_search_by(|(x, _)| x.partial_cmp(&v).unwrap())
            .expect("value is present");
        (0..k).find(|&c| idx < bounds[c + 1]).unwrap()
    };
    let assignment: Vec<usize> = values.iter().map(|&v| group_of(v)).collect();
    let sse = sse(values, &assignment, &centroids);
    Some(KMeans1d {
        assignment,
        centroids,
        sse,
        iterations: 0,
    })
}
