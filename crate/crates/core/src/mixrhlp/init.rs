//! Starting values for EM: a sub-class partition of the curves (pluggable
//! strategy) followed by a contiguous time segmentation of each sub-class.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::basis::DesignMatrix;
use crate::data::Curve;
use crate::error::{FmdaError, Result};
use crate::numeric::{solve_wls, LogisticWeights, WlsProblem};

use super::model::{MixRhlpParams, ModelShape, SubclassParams};

/// Assigns each curve of a class to one of `k` initial sub-classes.
pub trait SubclassInit: Send + Sync {
    fn name(&self) -> &'static str;
    fn description(&self) -> &'static str;
    /// Returns one 0-based sub-class index per curve; every index in `0..k`
    /// must be used at least once.
    fn partition(&self, curves: &[Curve], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize>;
}

/// Lloyd's k-means on the raw curve vectors, seeded with k-means++.
pub struct KMeansInit {
    pub max_iter: usize,
}

impl Default for KMeansInit {
    fn default() -> Self {
        KMeansInit { max_iter: 50 }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl SubclassInit for KMeansInit {
    fn name(&self) -> &'static str {
        "kmeans"
    }

    fn description(&self) -> &'static str {
        "k-means++ seeded Lloyd iterations on curve vectors"
    }

    fn partition(&self, curves: &[Curve], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let n = curves.len();
        let m = curves[0].len();
        let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
        centers.push(curves[rng.random_range(0..n)].values().to_vec());
        let mut nearest: Vec<f64> = curves
            .iter()
            .map(|c| sq_dist(c.values(), &centers[0]))
            .collect();
        while centers.len() < k {
            let total: f64 = nearest.iter().sum();
            let pick = if total > 0.0 {
                let mut u = rng.random::<f64>() * total;
                let mut chosen = n - 1;
                for (i, d) in nearest.iter().enumerate() {
                    if u < *d {
                        chosen = i;
                        break;
                    }
                    u -= d;
                }
                chosen
            } else {
                rng.random_range(0..n)
            };
            centers.push(curves[pick].values().to_vec());
            for (i, c) in curves.iter().enumerate() {
                nearest[i] = nearest[i].min(sq_dist(c.values(), centers.last().unwrap()));
            }
        }

        let mut labels = vec![usize::MAX; n];
        for _ in 0..self.max_iter {
            let mut changed = false;
            for (i, c) in curves.iter().enumerate() {
                let best = (0..k)
                    .min_by(|&a, &b| {
                        sq_dist(c.values(), &centers[a])
                            .total_cmp(&sq_dist(c.values(), &centers[b]))
                    })
                    .unwrap();
                if labels[i] != best {
                    labels[i] = best;
                    changed = true;
                }
            }
            fill_empty(curves, &mut labels, k, &centers);
            let mut sums = vec![vec![0.0; m]; k];
            let mut counts = vec![0usize; k];
            for (i, c) in curves.iter().enumerate() {
                counts[labels[i]] += 1;
                for (s, v) in sums[labels[i]].iter_mut().zip(c.values()) {
                    *s += v;
                }
            }
            for (center, (sum, count)) in centers.iter_mut().zip(sums.into_iter().zip(counts)) {
                *center = sum.into_iter().map(|s| s / count as f64).collect();
            }
            if !changed {
                break;
            }
        }
        labels
    }
}

/// Moves the curve farthest from its center into each empty cluster.
fn fill_empty(curves: &[Curve], labels: &mut [usize], k: usize, centers: &[Vec<f64>]) {
    for cluster in 0..k {
        let mut counts = vec![0usize; k];
        labels.iter().for_each(|&l| counts[l] += 1);
        if counts[cluster] > 0 {
            continue;
        }
        let donor = (0..curves.len())
            .filter(|&i| counts[labels[i]] > 1)
            .max_by(|&a, &b| {
                sq_dist(curves[a].values(), &centers[labels[a]])
                    .total_cmp(&sq_dist(curves[b].values(), &centers[labels[b]]))
            });
        if let Some(i) = donor {
            labels[i] = cluster;
        }
    }
}

/// Uniformly random balanced assignment.
pub struct RandomInit;

impl SubclassInit for RandomInit {
    fn name(&self) -> &'static str {
        "random"
    }

    fn description(&self) -> &'static str {
        "random balanced assignment of curves to sub-classes"
    }

    fn partition(&self, curves: &[Curve], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut order: Vec<usize> = (0..curves.len()).collect();
        order.shuffle(rng);
        let mut labels = vec![0; curves.len()];
        for (pos, i) in order.into_iter().enumerate() {
            labels[i] = pos % k;
        }
        labels
    }
}

/// Name-indexed set of sub-class initialization strategies.
#[derive(Clone)]
pub struct InitRegistry {
    strategies: BTreeMap<&'static str, Arc<dyn SubclassInit>>,
}

impl InitRegistry {
    pub fn empty() -> Self {
        InitRegistry {
            strategies: BTreeMap::new(),
        }
    }

    /// `kmeans` and `random`.
    pub fn builtin() -> Self {
        let mut reg = Self::empty();
        reg.register(Arc::new(KMeansInit::default()));
        reg.register(Arc::new(RandomInit));
        reg
    }

    pub fn register(&mut self, strategy: Arc<dyn SubclassInit>) {
        self.strategies.insert(strategy.name(), strategy);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn SubclassInit>> {
        self.strategies
            .get(name)
            .cloned()
            .ok_or_else(|| FmdaError::Unknown {
                kind: "init strategy",
                name: name.to_string(),
                available: self.names().join(", "),
            })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.strategies.keys().copied().collect()
    }
}

impl Default for InitRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

/// Start indices of segments `2..=R` for an even split of `m` points.
pub fn uniform_cuts(m: usize, regimes: usize) -> Vec<usize> {
    (1..regimes)
        .map(|r| (r * m + regimes / 2) / regimes)
        .collect()
}

/// Random contiguous segmentation with every segment at least `min_len` long;
/// falls back to the uniform split when that is impossible.
pub fn random_cuts(m: usize, regimes: usize, min_len: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if regimes == 1 {
        return Vec::new();
    }
    let slack = m.saturating_sub(regimes * min_len);
    if slack == 0 {
        return uniform_cuts(m, regimes);
    }
    // Distribute the slack with sorted uniform draws.
    let mut extras: Vec<usize> = (0..regimes - 1)
        .map(|_| rng.random_range(0..=slack))
        .collect();
    extras.sort_unstable();
    extras
        .iter()
        .enumerate()
        .map(|(r, e)| (r + 1) * min_len + e)
        .collect()
}

/// Fits one RHLP component to `curves` given a contiguous segmentation:
/// per-segment least squares for the regression coefficients and variances,
/// and logistic weights whose argmax reproduces the segmentation.
pub fn segment_fit(
    curves: &[Curve],
    design: &DesignMatrix,
    covariates: &DMatrix<f64>,
    regimes: usize,
    cuts: Option<&[usize]>,
    floor: f64,
) -> Result<SubclassParams> {
    let m = design.rows();
    let uniform;
    let cuts = match cuts {
        Some(c) => c,
        None => {
            uniform = uniform_cuts(m, regimes);
            &uniform
        }
    };
    let bounds: Vec<usize> = std::iter::once(0)
        .chain(cuts.iter().copied())
        .chain(std::iter::once(m))
        .collect();
    let n = curves.len() as f64;
    let mean: Vec<f64> = (0..m)
        .map(|j| curves.iter().map(|c| c.values()[j]).sum::<f64>() / n)
        .collect();

    let mut beta = Vec::with_capacity(regimes);
    let mut sigma2 = Vec::with_capacity(regimes);
    for r in 0..regimes {
        let (lo, hi) = (bounds[r], bounds[r + 1]);
        let weights: Vec<f64> = (0..m)
            .map(|j| if j >= lo && j < hi { n } else { 0.0 })
            .collect();
        let coef = solve_wls(WlsProblem {
            design: design.matrix(),
            targets: &mean,
            weights: &weights,
        })?
        .coefficients;
        let mut sse = 0.0;
        for c in curves {
            for j in lo..hi {
                let resid = c.values()[j] - design.row_dot(j, &coef);
                sse += resid * resid;
            }
        }
        let count = (n * (hi - lo) as f64).max(1.0);
        beta.push(coef);
        sigma2.push((sse / count).max(floor));
    }

    let times: Vec<f64> = covariates.column(1).iter().copied().collect();
    let boundaries: Vec<f64> = cuts
        .iter()
        .map(|&c| 0.5 * (times[c - 1] + times[c]))
        .collect();
    Ok(SubclassParams {
        weights: segmentation_weights(&boundaries, times[0], times[m - 1])?,
        beta,
        sigma2,
    })
}

/// Logistic weights whose most probable regime switches exactly at each
/// boundary: regime `r` gets slope `lambda * r` and an intercept placing its
/// intersection with regime `r - 1` on boundary `r`.
pub fn segmentation_weights(boundaries: &[f64], start: f64, end: f64) -> Result<LogisticWeights> {
    let regimes = boundaries.len() + 1;
    let span = (end - start).max(f64::MIN_POSITIVE);
    let lambda = 10.0 * regimes as f64 / span;
    let mut pairs = Vec::with_capacity(regimes);
    let mut intercept = 0.0;
    for r in 0..regimes {
        if r > 0 {
            intercept -= lambda * boundaries[r - 1];
        }
        pairs.push([intercept, lambda * r as f64]);
    }
    LogisticWeights::from_unpinned(&pairs)
}

/// Builds the initial parameters of restart `restart` for one class.
#[allow(clippy::too_many_arguments)]
pub fn initialize(
    curves: &[Curve],
    shape: &ModelShape,
    design: &DesignMatrix,
    covariates: &DMatrix<f64>,
    strategy: &dyn SubclassInit,
    restart: usize,
    floor: f64,
    rng: &mut ChaCha8Rng,
) -> Result<MixRhlpParams> {
    let k = shape.subclasses();
    let n = curves.len();
    if n < k {
        return Err(FmdaError::invalid(format!(
            "{k} sub-classes requested for {n} curves"
        )));
    }
    let labels = if k == 1 {
        vec![0; n]
    } else {
        strategy.partition(curves, k, rng)
    };
    let m = design.rows();
    let min_len = design
        .dim()
        .max(2)
        .min(m / shape.regimes.iter().max().copied().unwrap_or(1))
        .max(1);
    let mut alpha = Vec::with_capacity(k);
    let mut components = Vec::with_capacity(k);
    for (sub, &regimes) in shape.regimes.iter().enumerate() {
        let members: Vec<Curve> = curves
            .iter()
            .zip(&labels)
            .filter(|(_, &l)| l == sub)
            .map(|(c, _)| c.clone())
            .collect();
        if members.is_empty() {
            return Err(FmdaError::Numerical(format!(
                "init strategy '{}' left sub-class {} empty",
                strategy.name(),
                sub + 1
            )));
        }
        let cuts = if restart == 0 {
            uniform_cuts(m, regimes)
        } else {
            random_cuts(m, regimes, min_len, rng)
        };
        alpha.push(members.len() as f64 / n as f64);
        components.push(segment_fit(
            &members,
            design,
            covariates,
            regimes,
            Some(&cuts),
            floor,
        )?);
    }
    Ok(MixRhlpParams { alpha, components })
}
