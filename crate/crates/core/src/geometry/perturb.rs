use rand_distr::{Distribution, Normal};

use crate::data::BackboneStructure;
use crate::rng::{self, tag, Rng};

/// Adds i.i.d. N(0, eps²) noise (Å) to every atom coordinate.
pub fn perturb(structure: &BackboneStructure, eps: f64, seed: u64) -> BackboneStructure {
    perturb_with(structure, eps, &mut rng::stream(seed, &[tag::PERTURB]))
}

pub fn perturb_with(structure: &BackboneStructure, eps: f64, rng: &mut Rng) -> BackboneStructure {
    assert!(eps >= 0.0, "perturbation scale must be non-negative");
    let mut out = structure.clone();
    if eps == 0.0 {
        return out;
    }
    let normal = Normal::new(0.0, eps).unwrap();
    for r in out.residues_mut() {
        for atom in r.atoms_mut() {
            for x in atom.iter_mut() {
                *x += normal.sample(rng);
            }
        }
    }
    out
}
