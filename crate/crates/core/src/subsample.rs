//! Linear-fit residuals and k-means subsampling of the training inputs.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{check_len, Error, Result};
use crate::linfit::LinearPart;
use crate::mat::Scaler;

/// Representative samples: cluster centroids with mean member residuals.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    /// n_inputs × n_s, in the original input units.
    pub centers: DMatrix<f64>,
    /// n_targets × n_s
    pub targets: DMatrix<f64>,
    pub weights: Vec<usize>,
    /// Cluster index of every input column.
    pub assignment: Vec<usize>,
    /// Within-cluster sum of squared distances in standardized space.
    pub inertia: f64,
}

/// `E = targets − model(inputs)`, column by column. `inputs` holds the
/// linear rows `[u; x]`; `sched` is required for scheduled models.
pub fn residual_error(
    inputs: &DMatrix<f64>,
    sched: Option<&[f64]>,
    targets: &DMatrix<f64>,
    model: &LinearPart,
) -> Result<DMatrix<f64>> {
    check_len("residual input rows", model.n_inputs(), inputs.nrows())?;
    check_len("residual target rows", model.n_targets(), targets.nrows())?;
    check_len("residual columns", inputs.ncols(), targets.ncols())?;
    if let Some(s) = sched {
        check_len("residual scheduling samples", inputs.ncols(), s.len())?;
    }
    let mut out = targets.clone();
    let mut pred = vec![0.0; targets.nrows()];
    for c in 0..inputs.ncols() {
        let w = sched.map(|s| s[c]);
        model.eval_into(inputs.column(c).as_slice(), w, &mut pred)?;
        for (r, p) in pred.iter().enumerate() {
            out[(r, c)] -= p;
        }
    }
    Ok(out)
}

/// Lloyd iteration limits for [`kmeans_subsample`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansOptions {
    pub max_iter: usize,
    pub n_restarts: usize,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        KMeansOptions {
            max_iter: 300,
            n_restarts: 10,
        }
    }
}

/// Points stored row-major, one standardized point per `d` entries.
struct Points<'a> {
    data: &'a [f64],
    d: usize,
}

impl Points<'_> {
    fn len(&self) -> usize {
        self.data.len() / self.d
    }

    fn get(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// One seeded k-means run in standardized space.
pub(crate) struct Run {
    pub assign: Vec<usize>,
    pub inertia: f64,
    /// Inertia after every center update.
    /// Inertia after every Lloyd iteration, checked by the tests.
    #[cfg_attr(not(test), allow(dead_code))]
    pub history: Vec<f64>,
}

fn seed_plus_plus(pts: &Points, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = pts.len();
    let d = pts.d;
    let mut centers = Vec::with_capacity(k * d);
    let first = rng.random_range(0..n);
    centers.extend_from_slice(pts.get(first));
    let mut closest: Vec<f64> = (0..n).map(|i| dist2(pts.get(i), pts.get(first))).collect();
    for _ in 1..k {
        let total: f64 = closest.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, c) in closest.iter().enumerate() {
                acc += c;
                if acc > target {
                    pick = i;
                    break;
                }
            }
            // never pick an already-covered point because of round-off
            if closest[pick] == 0.0 {
                pick = closest.iter().rposition(|&c| c > 0.0).unwrap_or(pick);
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        let c = pts.get(pick).to_vec();
        for (i, cl) in closest.iter_mut().enumerate() {
            let v = dist2(pts.get(i), &c);
            if v < *cl {
                *cl = v;
            }
        }
        centers.extend_from_slice(&c);
    }
    centers
}

/// Nearest and second-nearest center distances, lowest index on ties.
fn nearest_two(p: &[f64], centers: &[f64], d: usize) -> (usize, f64, f64) {
    let mut best = (0, f64::INFINITY);
    let mut second = f64::INFINITY;
    for (j, c) in centers.chunks_exact(d).enumerate() {
        let v = dist2(p, c);
        if v < best.1 {
            second = best.1;
            best = (j, v);
        } else if v < second {
            second = v;
        }
    }
    (best.0, best.1.sqrt(), second.sqrt())
}

fn inertia_of(pts: &Points, centers: &[f64], assign: &[usize]) -> f64 {
    let d = pts.d;
    assign
        .iter()
        .enumerate()
        .map(|(i, &a)| dist2(pts.get(i), &centers[a * d..(a + 1) * d]))
        .sum()
}

/// Lloyd iterations with Hamerly distance bounds; the bounds only skip work,
/// assignments equal those of a full scan.
fn lloyd(pts: &Points, mut centers: Vec<f64>, k: usize, max_iter: usize) -> Run {
    let n = pts.len();
    let d = pts.d;
    let mut assign = vec![0usize; n];
    let mut upper = vec![0.0; n];
    let mut lower = vec![0.0; n];
    for i in 0..n {
        let (a, u, l) = nearest_two(pts.get(i), &centers, d);
        assign[i] = a;
        upper[i] = u;
        lower[i] = l;
    }
    let mut history = Vec::new();
    let mut sums = vec![0.0; k * d];
    let mut counts = vec![0usize; k];

    for _ in 0..max_iter.max(1) {
        // update step
        sums.iter_mut().for_each(|s| *s = 0.0);
        counts.iter_mut().for_each(|c| *c = 0);
        for i in 0..n {
            let a = assign[i];
            counts[a] += 1;
            for (s, v) in sums[a * d..(a + 1) * d].iter_mut().zip(pts.get(i)) {
                *s += v;
            }
        }
        let mut new_centers = centers.clone();
        for j in 0..k {
            if counts[j] > 0 {
                for t in 0..d {
                    new_centers[j * d + t] = sums[j * d + t] / counts[j] as f64;
                }
            }
        }
        // empty clusters take the point farthest from its own center
        let mut reseeded = false;
        for j in 0..k {
            if counts[j] > 0 {
                continue;
            }
            let mut far = (usize::MAX, -1.0);
            for i in 0..n {
                if counts[assign[i]] <= 1 {
                    continue;
                }
                let a = assign[i];
                let v = dist2(pts.get(i), &new_centers[a * d..(a + 1) * d]);
                if v > far.1 {
                    far = (i, v);
                }
            }
            if far.0 == usize::MAX {
                break;
            }
            let i = far.0;
            let old = assign[i];
            // remove i from its old cluster mean
            let m = counts[old] as f64;
            for t in 0..d {
                let c = new_centers[old * d + t];
                new_centers[old * d + t] = (c * m - pts.get(i)[t]) / (m - 1.0);
            }
            counts[old] -= 1;
            counts[j] = 1;
            assign[i] = j;
            new_centers[j * d..(j + 1) * d].copy_from_slice(pts.get(i));
            reseeded = true;
        }

        let shift: Vec<f64> = (0..k)
            .map(|j| dist2(&centers[j * d..(j + 1) * d], &new_centers[j * d..(j + 1) * d]).sqrt())
            .collect();
        centers = new_centers;
        history.push(inertia_of(pts, &centers, &assign));

        // assignment step
        let max_shift = shift.iter().cloned().fold(0.0, f64::max);
        let mut changed = false;
        for i in 0..n {
            if reseeded {
                let (a, u, l) = nearest_two(pts.get(i), &centers, d);
                changed |= a != assign[i];
                assign[i] = a;
                upper[i] = u;
                lower[i] = l;
                continue;
            }
            upper[i] += shift[assign[i]];
            lower[i] -= max_shift;
            if upper[i] < lower[i] {
                continue;
            }
            let a = assign[i];
            upper[i] = dist2(pts.get(i), &centers[a * d..(a + 1) * d]).sqrt();
            if upper[i] < lower[i] {
                continue;
            }
            let (b, u, l) = nearest_two(pts.get(i), &centers, d);
            changed |= b != a;
            assign[i] = b;
            upper[i] = u;
            lower[i] = l;
        }
        if !changed {
            break;
        }
    }
    let inertia = inertia_of(pts, &centers, &assign);
    Run {
        assign,
        inertia,
        history,
    }
}

pub(crate) fn kmeans_run(z: &[f64], d: usize, k: usize, seed: u64, restart: u64, max_iter: usize) -> Run {
    let pts = Points { data: z, d };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(restart);
    let centers = seed_plus_plus(&pts, k, &mut rng);
    lloyd(&pts, centers, k, max_iter)
}

/// Row-major z-scored copy of `inputs` (dims × N).
pub(crate) fn standardize(inputs: &DMatrix<f64>) -> Vec<f64> {
    let scaler = Scaler::fit(inputs);
    let d = inputs.nrows();
    let mut z = vec![0.0; inputs.len()];
    for (c, col) in inputs.column_iter().enumerate() {
        for r in 0..d {
            z[c * d + r] = (col[r] - scaler.mean[r]) / scaler.scale[r];
        }
    }
    z
}

/// k-means++ seeded Lloyd clustering of `inputs` (z-scored per dimension),
/// best of `n_restarts` by inertia. Targets are the mean member residuals.
pub fn kmeans_subsample(
    inputs: &DMatrix<f64>,
    residuals: &DMatrix<f64>,
    n_s: usize,
    seed: u64,
    max_iter: usize,
    n_restarts: usize,
) -> Result<SampleSet> {
    let n = inputs.ncols();
    check_len("residual columns", n, residuals.ncols())?;
    if n_s == 0 {
        return Err(Error::invalid("number of samples must be at least 1"));
    }
    if n_s > n {
        return Err(Error::invalid(format!("cannot pick {n_s} samples from {n} columns")));
    }
    if !crate::mat::all_finite(inputs) || !crate::mat::all_finite(residuals) {
        return Err(Error::invalid("subsampling data contains non-finite values"));
    }
    let d = inputs.nrows();
    let z = standardize(inputs);
    let runs: Vec<Run> = (0..n_restarts.max(1) as u64)
        .into_par_iter()
        .map(|r| kmeans_run(&z, d.max(1), n_s, seed, r, max_iter))
        .collect();
    // lowest restart index wins ties
    let best = runs
        .into_iter()
        .reduce(|a, b| if b.inertia < a.inertia { b } else { a })
        .expect("at least one restart");

    let mut weights = vec![0usize; n_s];
    let mut sums = DMatrix::zeros(inputs.nrows(), n_s);
    let mut targets = DMatrix::zeros(residuals.nrows(), n_s);
    for (c, &a) in best.assign.iter().enumerate() {
        weights[a] += 1;
        let mut col = sums.column_mut(a);
        col += inputs.column(c);
        let mut t = targets.column_mut(a);
        t += residuals.column(c);
    }
    for j in 0..n_s {
        let w = weights[j].max(1) as f64;
        sums.column_mut(j).unscale_mut(w);
        targets.column_mut(j).unscale_mut(w);
    }
    // member means in original units: the de-standardized centroids
    Ok(SampleSet {
        centers: sums,
        targets,
        weights,
        assignment: best.assign,
        inertia: best.inertia,
    })
}
