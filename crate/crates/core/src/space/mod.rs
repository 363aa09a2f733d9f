//! Cell-based multi-head search space: candidate ops, genotypes, continuous
//! architecture state, and the networks built from them.

mod arch;
mod genotype;
mod modules;
mod network;
mod ops;
mod params;

pub use arch::{ArchMode, ArchParams, HeadArch, CONCENTRATION_FLOOR};
pub use genotype::{
    hamming, sample_genotype_with, sample_random_genotype, BackboneSpec, CellGenotype,
    GenotypeSpec, MultiHeadGenotype, NodeGene,
};
pub use modules::{
    edge_combination, shuffle_permutation, CandidateOp, MixedOp, NetBuilder, Norm, NormStyle,
    OpNoise, ReluConvNorm, NORM_EPS,
};
pub use network::{head_probabilities, ArchView, Backbone, DiscreteNet, ModelSpec, Supernet};
pub use ops::{CellTopology, OpKind};
pub use params::{Ctx, NormMode, ParamId, ParamStore, RunningStats, RUNNING_MOMENTUM};
