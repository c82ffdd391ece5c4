//! Seeded generators for the synthetic benchmark datasets.
//!
//! Every generator is a pure function of its spec and seed. Within-cluster
//! noise has standard deviation 0.5 and pure-noise dimensions 2.0.

use std::ops::Range;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{combine_labels, Dataset, LabelVector};
use crate::error::{Error, Result};
use crate::rng;

pub const CENTER_RANGE: f64 = 10.0;
pub const CLUSTER_STD: f64 = 0.5;
pub const NOISE_STD: f64 = 2.0;
/// Minimum distance between two cluster centers of the same block.
pub const MIN_CENTER_GAP: f64 = 6.0;
/// Distance between the two sub-cluster means in the CCA dataset.
pub const SUBCLUSTER_OFFSET: f64 = 3.0;
/// Share of each CCA cluster that goes to the small sub-cluster.
pub const SUBCLUSTER_SHARE: f64 = 0.2;

/// A block of dimensions in which points fall into Gaussian clusters.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterBlock {
    pub dims: Range<usize>,
    pub clusters: usize,
    pub std: f64,
    /// Centers are uniform in `[-spread, spread]` per dimension.
    pub spread: f64,
    /// Centers are redrawn until every pair is at least this far apart.
    pub min_gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBlock {
    pub dims: Range<usize>,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n: usize,
    pub cluster_blocks: Vec<ClusterBlock>,
    pub noise: Option<NoiseBlock>,
    pub seed: u64,
}

impl SyntheticSpec {
    /// The ten-dimensional benchmark: 5 clusters in dims 1-4, 4 independent
    /// clusters in dims 5-6, noise in dims 7-10. The 4-d block gets half the
    /// per-dimension spread so both blocks separate by similar distances.
    pub fn synthetic10(n: usize, seed: u64) -> Self {
        Self {
            n,
            cluster_blocks: vec![
                ClusterBlock {
                    dims: 0..4,
                    clusters: 5,
                    std: CLUSTER_STD,
                    spread: CENTER_RANGE / 2.0,
                    min_gap: MIN_CENTER_GAP,
                },
                ClusterBlock {
                    dims: 4..6,
                    clusters: 4,
                    std: CLUSTER_STD,
                    spread: CENTER_RANGE,
                    min_gap: MIN_CENTER_GAP,
                },
            ],
            noise: Some(NoiseBlock {
                dims: 6..10,
                std: NOISE_STD,
            }),
            seed,
        }
    }

    pub fn dim(&self) -> usize {
        self.cluster_blocks
            .iter()
            .map(|b| b.dims.end)
            .chain(self.noise.iter().map(|b| b.dims.end))
            .max()
            .unwrap_or(0)
    }

    fn validate(&self) -> Result<()> {
        let mut ranges: Vec<&Range<usize>> = self.cluster_blocks.iter().map(|b| &b.dims).collect();
        ranges.extend(self.noise.iter().map(|b| &b.dims));
        ranges.sort_by_key(|r| r.start);
        for w in ranges.windows(2) {
            if w[0].end > w[1].start {
                return Err(Error::invalid("synthetic dimension ranges overlap"));
            }
        }
        for b in &self.cluster_blocks {
            if b.clusters == 0 || b.dims.is_empty() || !(b.std > 0.0) || !(b.spread > 0.0) || !(b.min_gap >= 0.0) {
                return Err(Error::invalid("cluster blocks need >=1 cluster, >=1 dim, std > 0, spread > 0"));
            }
            if b.clusters > self.n {
                return Err(Error::invalid("more clusters than points"));
            }
        }
        if let Some(nb) = &self.noise {
            if !(nb.std > 0.0) {
                return Err(Error::invalid("noise std must be positive"));
            }
        }
        if self.dim() == 0 {
            return Err(Error::invalid("synthetic spec has no dimensions"));
        }
        Ok(())
    }
}

/// Uniform multinomial assignment, redrawn until every cluster is non-empty.
fn assign<R: Rng>(rng: &mut R, n: usize, clusters: usize) -> Vec<usize> {
    loop {
        let a: Vec<usize> = (0..n).map(|_| rng.random_range(0..clusters)).collect();
        let mut seen = vec![false; clusters];
        a.iter().for_each(|&c| seen[c] = true);
        if seen.iter().all(|&s| s) {
            return a;
        }
    }
}

const MAX_CENTER_DRAWS: usize = 10_000;

fn draw_centers<R: Rng>(rng: &mut R, b: &ClusterBlock) -> Result<Array2<f64>> {
    for _ in 0..MAX_CENTER_DRAWS {
        let c = Array2::from_shape_fn((b.clusters, b.dims.len()), |_| rng.random_range(-b.spread..b.spread));
        let apart = (0..b.clusters).all(|i| {
            (i + 1..b.clusters).all(|j| {
                let d2: f64 = c.row(i).iter().zip(c.row(j)).map(|(x, y)| (x - y).powi(2)).sum();
                d2 >= b.min_gap * b.min_gap
            })
        });
        if apart {
            return Ok(c);
        }
    }
    Err(Error::invalid(format!(
        "could not place {} centers {} apart in [-{}, {}]^{}",
        b.clusters,
        b.min_gap,
        b.spread,
        b.spread,
        b.dims.len()
    )))
}

fn gauss<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Generates points and one label vector per cluster block.
pub fn generate(spec: &SyntheticSpec) -> Result<(Dataset, Vec<LabelVector>)> {
    spec.validate()?;
    let mut rng = rng::seeded(spec.seed);
    let d = spec.dim();

    let centers: Vec<Array2<f64>> = spec
        .cluster_blocks
        .iter()
        .map(|b| {
            draw_centers(&mut rng, b)
        })
        .collect::<Result<_>>()?;
    let assignments: Vec<Vec<usize>> = spec
        .cluster_blocks
        .iter()
        .map(|b| assign(&mut rng, spec.n, b.clusters))
        .collect();

    let mut points = Array2::<f64>::zeros((spec.n, d));
    for i in 0..spec.n {
        for (b, block) in spec.cluster_blocks.iter().enumerate() {
            let c = assignments[b][i];
            for (k, dim) in block.dims.clone().enumerate() {
                points[[i, dim]] = centers[b][[c, k]] + block.std * gauss(&mut rng);
            }
        }
        if let Some(nb) = &spec.noise {
            for dim in nb.dims.clone() {
                points[[i, dim]] = nb.std * gauss(&mut rng);
            }
        }
    }
    let labels = assignments
        .iter()
        .map(|a| LabelVector::from_codes(a))
        .collect::<Result<Vec<_>>>()?;
    Ok((Dataset::from_matrix(points)?, labels))
}

/// The 1000-point, 10-d synthetic dataset with its two ground-truth label
/// vectors `(f_{1-4}, f_{5-6})`.
pub fn gen_synthetic10(seed: u64) -> (Dataset, LabelVector, LabelVector) {
    gen_synthetic10_n(1000, seed).expect("static spec is valid")
}

/// Same structure as [`gen_synthetic10`] at another size (scaling runs).
pub fn gen_synthetic10_n(n: usize, seed: u64) -> Result<(Dataset, LabelVector, LabelVector)> {
    let (ds, mut labels) = generate(&SyntheticSpec::synthetic10(n, seed))?;
    let f56 = labels.pop().expect("two blocks");
    let f14 = labels.pop().expect("two blocks");
    Ok((ds, f14, f56))
}

/// Output of [`gen_cca5`]; `axes[c]` is the split axis of cluster `c`.
#[derive(Debug, Clone)]
pub struct Cca5 {
    pub data: Dataset,
    pub big: LabelVector,
    pub small: LabelVector,
    pub axes: Vec<usize>,
}

/// 1000 points in 5-d, 10 Gaussian clusters, each split 20%/80% into two
/// sub-clusters along one random coordinate axis. `big` has 10 classes,
/// `small` (cluster x sub-cluster) has 20.
pub fn gen_cca5(seed: u64) -> Cca5 {
    const N: usize = 1000;
    const D: usize = 5;
    const CLUSTERS: usize = 10;
    let mut rng = rng::seeded(seed);

    let centers = Array2::from_shape_fn((CLUSTERS, D), |_| {
        rng.random_range(-CENTER_RANGE..CENTER_RANGE)
    });
    let axes: Vec<usize> = (0..CLUSTERS).map(|_| rng.random_range(0..D)).collect();
    let big = assign(&mut rng, N, CLUSTERS);

    // The first 20% (rounded) of each cluster's members, in index order,
    // form the small sub-cluster. Both halves are offset so the cluster mean
    // stays at its center.
    let mut sizes = [0usize; CLUSTERS];
    big.iter().for_each(|&c| sizes[c] += 1);
    let quota: Vec<usize> = sizes
        .iter()
        .map(|&s| (s as f64 * SUBCLUSTER_SHARE).round() as usize)
        .collect();
    let mut taken = [0usize; CLUSTERS];
    let mut sub = vec![0usize; N];
    let mut points = Array2::<f64>::zeros((N, D));
    for i in 0..N {
        let c = big[i];
        let minor = taken[c] < quota[c];
        if minor {
            taken[c] += 1;
        }
        sub[i] = usize::from(!minor);
        let shift = if minor {
            (1.0 - SUBCLUSTER_SHARE) * SUBCLUSTER_OFFSET
        } else {
            -SUBCLUSTER_SHARE * SUBCLUSTER_OFFSET
        };
        for k in 0..D {
            let mut v = centers[[c, k]] + CLUSTER_STD * gauss(&mut rng);
            if k == axes[c] {
                v += shift;
            }
            points[[i, k]] = v;
        }
    }
    let big = LabelVector::from_codes(&big).expect("non-empty");
    let sub = LabelVector::from_codes(&sub).expect("non-empty");
    let small = combine_labels(&big, &sub).expect("equal lengths");
    // Report axes in the re-coded cluster order.
    let mut axes_recoded = vec![0; CLUSTERS];
    for (code, name) in big.names().iter().enumerate() {
        let raw: usize = name.parse().expect("numeric cluster id");
        axes_recoded[code] = axes[raw];
    }
    Cca5 {
        data: Dataset::from_matrix(points).expect("finite"),
        big,
        small,
        axes: axes_recoded,
    }
}
