//! Rigid-motion-invariant featurization of protein backbones.

mod features;
mod frames;
mod knn;
pub mod linalg;
mod perturb;
mod rigid;

pub use features::{
    backbone_dihedrals, featurize, rbf, Dihedrals, FeatureSet, GraphConfig, NODE_FEATURES,
};
pub use frames::{local_frames, Frame};
pub use knn::{knn_graph, knn_points, ResidueGraph};
pub use perturb::{perturb, perturb_with};
pub use rigid::{apply_rigid, random_rotation};

use crate::data::BackboneStructure;
use crate::error::Result;

/// Graph and features for one structure, as consumed by the encoder.
#[derive(Debug, Clone)]
pub struct StructureInput {
    pub graph: ResidueGraph,
    pub features: FeatureSet,
}

impl StructureInput {
    pub fn build(structure: &BackboneStructure, config: &GraphConfig) -> Result<Self> {
        structure.validate()?;
        let graph = knn_graph(structure, config);
        let features = featurize(structure, &graph, config)?;
        Ok(StructureInput { graph, features })
    }

    pub fn len(&self) -> usize {
        self.graph.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graph.len() == 0
    }
}
