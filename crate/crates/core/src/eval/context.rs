use serde::{Deserialize, Serialize};

use crate::data::{in_box, BackboneStructure, HELIX_PHI_PSI, STRAND_PHI_PSI};
use crate::error::{Error, Result};
use crate::geometry::backbone_dihedrals;
use crate::geometry::linalg::dist;

/// CA atoms within this radius (excluding self) count toward burial.
pub const BURIAL_RADIUS: f64 = 10.0;
/// Residues with at least this many CA neighbours are core.
pub const CORE_MIN_NEIGHBORS: usize = 16;
/// Other-chain CA within this distance marks an interface residue.
pub const INTERFACE_RADIUS: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Burial {
    Core,
    Surface,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Secondary {
    Helix,
    Strand,
    Loop,
}

/// Per-residue structural context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextLabel {
    pub burial: Vec<Burial>,
    pub secondary: Vec<Secondary>,
    pub interface: Vec<bool>,
}

impl ContextLabel {
    pub fn len(&self) -> usize {
        self.burial.len()
    }

    pub fn is_empty(&self) -> bool {
        self.burial.is_empty()
    }
}

pub fn secondary_of(phi_deg: Option<f64>, psi_deg: Option<f64>) -> Secondary {
    match (phi_deg, psi_deg) {
        (Some(phi), Some(psi)) if in_box(phi, psi, HELIX_PHI_PSI) => Secondary::Helix,
        (Some(phi), Some(psi)) if in_box(phi, psi, STRAND_PHI_PSI) => Secondary::Strand,
        _ => Secondary::Loop,
    }
}

pub fn label_contexts(structure: &BackboneStructure) -> ContextLabel {
    let ca = structure.ca_coords();
    let chain = structure.chain_index();
    let l = ca.len();
    let mut burial = Vec::with_capacity(l);
    let mut interface = Vec::with_capacity(l);
    for i in 0..l {
        let mut near = 0;
        let mut contact = false;
        for j in 0..l {
            if i == j {
                continue;
            }
            let d = dist(&ca[i], &ca[j]);
            if d <= BURIAL_RADIUS {
                near += 1;
            }
            if chain[j] != chain[i] && d <= INTERFACE_RADIUS {
                contact = true;
            }
        }
        burial.push(if near >= CORE_MIN_NEIGHBORS {
            Burial::Core
        } else {
            Burial::Surface
        });
        interface.push(contact);
    }
    let secondary = backbone_dihedrals(structure)
        .iter()
        .map(|d| secondary_of(d.phi.map(f64::to_degrees), d.psi.map(f64::to_degrees)))
        .collect();
    ContextLabel {
        burial,
        secondary,
        interface,
    }
}

/// Residues `region` with any backbone atom within [`INTERFACE_RADIUS`] of an
/// atom on one of the `antigen_chains`.
pub fn contact_mask(
    structure: &BackboneStructure,
    region: &[bool],
    antigen_chains: &[&str],
) -> Vec<bool> {
    let antigen: Vec<[f64; 3]> = structure
        .chains
        .iter()
        .filter(|c| antigen_chains.contains(&c.id.as_str()))
        .flat_map(|c| {
            c.residues
                .iter()
                .flat_map(|r| r.atoms().copied().collect::<Vec<_>>())
        })
        .collect();
    structure
        .residues()
        .zip(region)
        .map(|(r, &inside)| {
            inside
                && r.atoms()
                    .any(|a| antigen.iter().any(|b| dist(a, b) <= INTERFACE_RADIUS))
        })
        .collect()
}

/// Correct and total residue counts of one class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClassCount {
    pub correct: usize,
    pub total: usize,
}

impl ClassCount {
    fn add(&mut self, hit: bool) {
        self.total += 1;
        self.correct += hit as usize;
    }

    /// `None` when the class has no residues.
    pub fn rate(&self) -> Option<f64> {
        (self.total > 0).then(|| self.correct as f64 / self.total as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ContextRecovery {
    pub core: ClassCount,
    pub surface: ClassCount,
    pub helix: ClassCount,
    pub strand: ClassCount,
    pub loop_: ClassCount,
    pub interface: ClassCount,
    pub all: ClassCount,
}

impl ContextRecovery {
    /// (name, recovery) rows; absent classes map to `None`.
    pub fn rows(&self) -> Vec<(&'static str, Option<f64>, usize)> {
        [
            ("core", self.core),
            ("surface", self.surface),
            ("helix", self.helix),
            ("strand", self.strand),
            ("loop", self.loop_),
            ("interface", self.interface),
            ("all", self.all),
        ]
        .into_iter()
        .map(|(n, c)| (n, c.rate(), c.total))
        .collect()
    }
}

/// Residue-level recovery restricted to each context class.
pub fn dissect_recovery(
    designs: &[Vec<u8>],
    natives: &[Vec<u8>],
    labels: &[ContextLabel],
) -> Result<ContextRecovery> {
    if designs.len() != natives.len() || designs.len() != labels.len() {
        return Err(Error::invalid("designs, natives and labels must align"));
    }
    let mut out = ContextRecovery::default();
    for ((d, n), lab) in designs.iter().zip(natives).zip(labels) {
        if d.len() != n.len() || lab.len() != n.len() {
            return Err(Error::LengthMismatch {
                sequence: d.len(),
                structure: n.len(),
            });
        }
        for i in 0..n.len() {
            let hit = d[i] == n[i];
            out.all.add(hit);
            match lab.burial[i] {
                Burial::Core => out.core.add(hit),
                Burial::Surface => out.surface.add(hit),
            }
            match lab.secondary[i] {
                Secondary::Helix => out.helix.add(hit),
                Secondary::Strand => out.strand.add(hit),
                Secondary::Loop => out.loop_.add(hit),
            }
            if lab.interface[i] {
                out.interface.add(hit);
            }
        }
    }
    Ok(out)
}
