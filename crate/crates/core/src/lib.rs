//! Conditional t-SNE.
//!
//! Embeds high-dimensional data into two dimensions while factoring out
//! structure the analyst already knows about, expressed as a label vector.
//! Same-label pairs are given a larger prior weight (`alpha'`) than
//! different-label pairs (`beta'`), so the embedding no longer has to spend
//! its degrees of freedom reproducing the known grouping.
//!
//! The crate is organized as a pipeline:
//!
//! * [`data`]: datasets, label vectors, embeddings, run metadata, TSV I/O.
//! * [`synth`]: seeded generators for the synthetic benchmark datasets.
//! * [`affinity`]: exact kNN (vantage-point tree), perplexity calibration and
//!   the sparse symmetric input distribution.
//! * [`prior`]: the `(alpha', beta')` pair tied by the normalization constraint.
//! * [`exact`]: O(n^2) objective and gradient.
//! * [`bh`]: label-histogram Barnes-Hut quadtree, O(L n log n) gradient.
//! * [`optimizer`]: momentum/gains gradient descent with restarts.
//! * [`evaluation`]: kNN graph, normalized Laplacian score, feature ranking.
//! * [`baseline_cca`]: CCA-based label removal baselines.
//! * [`pipeline`]: glue shared by the CLI and the job server.

pub mod affinity;
pub mod baseline_cca;
pub mod bh;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod exact;
pub mod optimizer;
pub mod pipeline;
pub mod prior;
pub mod synth;

mod rng;

pub use affinity::{build_affinities, knn_search, NeighborLists, SparseAffinities};
pub use data::{combine_labels, Dataset, EmbeddingMatrix, LabelVector, RunMetadata};
pub use error::{Error, Result};
pub use optimizer::{Engine, EmbeddingResult, OptimizerConfig};
pub use prior::PriorSpec;
