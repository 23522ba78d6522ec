use serde::{Deserialize, Serialize};

use super::frames::{frames_lenient, local_frames};
use super::knn::ResidueGraph;
use super::linalg::{dihedral, dist, mat_t_mat, mat_t_vec, normalize, sub};
use crate::data::BackboneStructure;
use crate::error::{Error, Result};
use crate::nn::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphConfig {
    pub k: usize,
    pub rbf_bins: usize,
    pub rbf_range: (f64, f64),
    pub rel_pos_clip: usize,
    /// Fail on degenerate residue frames instead of flagging them.
    pub strict: bool,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            k: 30,
            rbf_bins: 16,
            rbf_range: (2.0, 22.0),
            rel_pos_clip: 32,
            strict: false,
        }
    }
}

impl GraphConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rbf_bins < 2 {
            return Err(Error::Config("rbf_bins must be at least 2".into()));
        }
        if !(self.rbf_range.0 < self.rbf_range.1) {
            return Err(Error::Config("rbf_range must satisfy min < max".into()));
        }
        Ok(())
    }

    /// Width of one edge feature row.
    pub fn edge_features(&self) -> usize {
        self.rbf_bins + 3 + 9 + self.offset_classes() + 1
    }

    /// Clipped signed offsets in [-clip, clip] plus one class for cross-chain pairs.
    pub fn offset_classes(&self) -> usize {
        2 * self.rel_pos_clip + 2
    }
}

/// sin/cos of (phi, psi, omega), three undefined-angle flags and a
/// degenerate-frame flag.
pub const NODE_FEATURES: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    /// L × [`NODE_FEATURES`].
    pub node: Matrix,
    /// One row per graph edge, in [`ResidueGraph::edges`] order.
    pub edge: Matrix,
}

/// Backbone torsions in radians; `None` at chain termini and breaks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dihedrals {
    pub phi: Option<f64>,
    pub psi: Option<f64>,
    pub omega: Option<f64>,
}

pub fn backbone_dihedrals(structure: &BackboneStructure) -> Vec<Dihedrals> {
    let res: Vec<_> = structure.residues().collect();
    let breaks = structure.chain_breaks();
    (0..res.len())
        .map(|i| {
            let r = res[i];
            let phi = (i > 0 && !breaks[i - 1]).then(|| dihedral(&res[i - 1].c, &r.n, &r.ca, &r.c));
            let (psi, omega) = if !breaks[i] {
                let nx = res[i + 1];
                (
                    Some(dihedral(&r.n, &r.ca, &r.c, &nx.n)),
                    Some(dihedral(&r.ca, &r.c, &nx.n, &nx.ca)),
                )
            } else {
                (None, None)
            };
            Dihedrals { phi, psi, omega }
        })
        .collect()
}

/// Gaussian radial basis encoding of a distance; centres evenly spaced over
/// the range, width equal to the centre spacing.
pub fn rbf(d: f64, config: &GraphConfig) -> Vec<f64> {
    let (lo, hi) = config.rbf_range;
    let spacing = (hi - lo) / (config.rbf_bins - 1) as f64;
    (0..config.rbf_bins)
        .map(|b| {
            let mu = lo + b as f64 * spacing;
            (-(d - mu).powi(2) / (2.0 * spacing * spacing)).exp()
        })
        .collect()
}

pub fn featurize(
    structure: &BackboneStructure,
    graph: &ResidueGraph,
    config: &GraphConfig,
) -> Result<FeatureSet> {
    config.validate()?;
    let (frames, degenerate) = if config.strict {
        let f = local_frames(structure)?;
        let n = f.len();
        (f, vec![false; n])
    } else {
        frames_lenient(structure)
    };
    let len = structure.len();
    if graph.len() != len {
        return Err(Error::LengthMismatch {
            sequence: graph.len(),
            structure: len,
        });
    }

    let mut node = Matrix::zeros(len, NODE_FEATURES);
    for (i, d) in backbone_dihedrals(structure).iter().enumerate() {
        let row = node.row_mut(i);
        for (slot, angle) in [d.phi, d.psi, d.omega].iter().enumerate() {
            match angle {
                Some(a) => {
                    row[2 * slot] = a.sin();
                    row[2 * slot + 1] = a.cos();
                }
                None => row[6 + slot] = 1.0,
            }
        }
        row[9] = degenerate[i] as u8 as f64;
    }

    let chain = structure.chain_index();
    let width = config.edge_features();
    let clip = config.rel_pos_clip as i64;
    let mut edge = Matrix::zeros(graph.num_edges(), width);
    for (e, (i, j)) in graph.edges().enumerate() {
        let row = edge.row_mut(e);
        let (fi, fj) = (&frames[i], &frames[j]);
        let d = dist(&fi.origin, &fj.origin);
        row[..config.rbf_bins].copy_from_slice(&rbf(d, config));
        let mut at = config.rbf_bins;
        if !degenerate[i] && !degenerate[j] && d > 0.0 {
            let dir = mat_t_vec(&fi.rot, &normalize(&sub(&fj.origin, &fi.origin)));
            row[at..at + 3].copy_from_slice(&dir);
            let rel = mat_t_mat(&fi.rot, &fj.rot);
            for (k, v) in rel.iter().flatten().enumerate() {
                row[at + 3 + k] = *v;
            }
        }
        at += 12;
        let same_chain = chain[i] == chain[j];
        let class = if same_chain {
            ((j as i64 - i as i64).clamp(-clip, clip) + clip) as usize
        } else {
            config.offset_classes() - 1
        };
        row[at + class] = 1.0;
        row[width - 1] = same_chain as u8 as f64;
    }

    Ok(FeatureSet { node, edge })
}
