//! Synthetic inverse-folding benchmark.
//!
//! Each protein is a single chain built from a plan of secondary-structure
//! segments. Backbone dihedrals follow the segment class, and the sequence
//! follows a rule table keyed on (class, previous residue) with uniform noise,
//! so both the structure and the sequence context carry information.

use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::structure::{BackboneStructure, Chain, ResidueAtoms, SequenceState};
use super::vocab::{Vocabulary, NUM_AMINO_ACIDS};
use crate::error::{Error, Result};
use crate::geometry::linalg::place_atom;
use crate::rng::{self, tag};

/// Predecessor key used for the first residue of a chain.
pub const START_SYMBOL: usize = NUM_AMINO_ACIDS;

const BOND_N_CA: f64 = 1.458;
const BOND_CA_C: f64 = 1.525;
const BOND_C_N: f64 = 1.329;
const BOND_C_O: f64 = 1.231;
const ANGLE_N_CA_C: f64 = 111.2;
const ANGLE_CA_C_N: f64 = 116.2;
const ANGLE_C_N_CA: f64 = 121.7;
const ANGLE_CA_C_O: f64 = 120.5;
const OMEGA: f64 = 180.0;
const DIHEDRAL_NOISE_DEG: f64 = 8.0;

/// Half-width (degrees) of the Ramachandran boxes around the helix and strand
/// centres. Coil dihedrals are drawn outside both boxes.
pub const SS_BOX_HALF_WIDTH: f64 = 40.0;
pub const HELIX_PHI_PSI: (f64, f64) = (-60.0, -45.0);
pub const STRAND_PHI_PSI: (f64, f64) = (-135.0, 135.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SsClass {
    Helix = 0,
    Strand = 1,
    Coil = 2,
}

impl SsClass {
    pub const ALL: [SsClass; 3] = [SsClass::Helix, SsClass::Strand, SsClass::Coil];

    fn from_index(i: usize) -> Self {
        Self::ALL[i]
    }
}

/// Rule table: `table[class][previous]` is the amino acid emitted without noise.
/// `previous` ranges over the 20 amino acids plus [`START_SYMBOL`].
pub type RuleTable = [[u8; NUM_AMINO_ACIDS + 1]; 3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_samples: usize,
    pub length_range: (usize, usize),
    pub ss_segment_length_range: (usize, usize),
    pub noise_rate: f64,
    #[serde(default = "default_rule_table")]
    pub rule_tables: RuleTable,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_samples: 2000,
            length_range: (30, 60),
            ss_segment_length_range: (4, 10),
            noise_rate: 0.1,
            rule_tables: default_rule_table(),
            seed: 0,
        }
    }
}

/// Number of distinct helix residues in the default table.
const HELIX_COUNTER_STATES: usize = 10;

/// Default rules. Helix residues count their position inside the helix
/// (saturating after ten), so the emitted residue depends on how far back the
/// helix started; strands remember whether they follow a helix; coil is
/// constant. Any noise event is forgotten within one segment.
pub fn default_rule_table() -> RuleTable {
    let tok = |c: char| Vocabulary::amino_acid(c).unwrap();
    let helix = ['A', 'E', 'L', 'K', 'M', 'Q', 'R', 'H', 'W', 'F'].map(tok);
    debug_assert_eq!(helix.len(), HELIX_COUNTER_STATES);
    let helix_state = |prev: usize| -> usize {
        helix
            .iter()
            .position(|&h| h as usize == prev)
            .map_or(0, |p| p + 1)
    };
    let mut table = [[0u8; NUM_AMINO_ACIDS + 1]; 3];
    for prev in 0..=NUM_AMINO_ACIDS {
        let state = helix_state(prev);
        table[SsClass::Helix as usize][prev] = helix[state.min(HELIX_COUNTER_STATES - 1)];
        table[SsClass::Strand as usize][prev] = if state == 0 { tok('V') } else { tok('I') };
        table[SsClass::Coil as usize][prev] = tok('G');
    }
    table
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.length_range;
        if lo == 0 || lo > hi {
            return Err(Error::Config(format!("empty length range ({lo}, {hi})")));
        }
        let (slo, shi) = self.ss_segment_length_range;
        if slo == 0 || slo > shi {
            return Err(Error::Config(format!(
                "empty segment length range ({slo}, {shi})"
            )));
        }
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return Err(Error::Config(format!(
                "noise rate {} outside [0, 1]",
                self.noise_rate
            )));
        }
        if self
            .rule_tables
            .iter()
            .flatten()
            .any(|&v| v as usize >= NUM_AMINO_ACIDS)
        {
            return Err(Error::Config(
                "rule table values must be amino-acid tokens".into(),
            ));
        }
        Ok(())
    }
}

/// A generated protein with the latent variables used to produce it.
#[derive(Debug, Clone)]
pub struct SyntheticRecord {
    pub structure: BackboneStructure,
    pub classes: Vec<SsClass>,
    /// (phi, psi) in degrees, as drawn before building coordinates.
    pub dihedrals: Vec<(f64, f64)>,
}

pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<Vec<(BackboneStructure, SequenceState)>> {
    spec.validate()?;
    Ok((0..spec.n_samples)
        .map(|i| {
            let rec = gen_synthetic_record(spec, i as u64);
            let state = SequenceState::fully_observed(rec.structure.native.clone().unwrap());
            (rec.structure, state)
        })
        .collect())
}

fn wrap_deg(x: f64) -> f64 {
    let y = (x + 180.0).rem_euclid(360.0) - 180.0;
    if y == -180.0 {
        180.0
    } else {
        y
    }
}

pub(crate) fn angle_diff_deg(a: f64, b: f64) -> f64 {
    wrap_deg(a - b).abs()
}

pub(crate) fn in_box(phi: f64, psi: f64, centre: (f64, f64)) -> bool {
    angle_diff_deg(phi, centre.0) <= SS_BOX_HALF_WIDTH
        && angle_diff_deg(psi, centre.1) <= SS_BOX_HALF_WIDTH
}

/// Generates record `index` of the dataset described by `spec`. Each record
/// draws from its own random stream, so records can be produced in any order.
pub fn gen_synthetic_record(spec: &SyntheticSpec, index: u64) -> SyntheticRecord {
    let mut rng = rng::stream(spec.seed, &[tag::SYNTHETIC, index]);
    let len = rng.random_range(spec.length_range.0..=spec.length_range.1);

    let mut classes = Vec::with_capacity(len);
    let mut prev: Option<usize> = None;
    while classes.len() < len {
        let class = match prev {
            None => rng.random_range(0..3),
            Some(p) => (p + rng.random_range(1..3)) % 3,
        };
        let seg = rng.random_range(spec.ss_segment_length_range.0..=spec.ss_segment_length_range.1);
        classes.extend(std::iter::repeat_n(SsClass::from_index(class), seg));
        prev = Some(class);
    }
    classes.truncate(len);

    let noise = Normal::new(0.0, DIHEDRAL_NOISE_DEG).unwrap();
    let dihedrals: Vec<(f64, f64)> = classes
        .iter()
        .map(|class| match class {
            SsClass::Helix => (
                HELIX_PHI_PSI.0 + noise.sample(&mut rng),
                HELIX_PHI_PSI.1 + noise.sample(&mut rng),
            ),
            SsClass::Strand => (
                STRAND_PHI_PSI.0 + noise.sample(&mut rng),
                STRAND_PHI_PSI.1 + noise.sample(&mut rng),
            ),
            SsClass::Coil => loop {
                let phi = rng.random_range(-180.0..180.0);
                let psi = rng.random_range(-180.0..180.0);
                if !in_box(phi, psi, HELIX_PHI_PSI) && !in_box(phi, psi, STRAND_PHI_PSI) {
                    break (phi, psi);
                }
            },
        })
        .collect();

    let mut native = Vec::with_capacity(len);
    let mut prev = START_SYMBOL;
    for class in &classes {
        let aa = if rng.random::<f64>() < spec.noise_rate {
            rng.random_range(0..NUM_AMINO_ACIDS as u8)
        } else {
            spec.rule_tables[*class as usize][prev]
        };
        native.push(aa);
        prev = aa as usize;
    }

    let residues = build_backbone(&dihedrals);
    SyntheticRecord {
        structure: BackboneStructure {
            id: format!("syn{}_{index:05}", spec.seed),
            chains: vec![Chain {
                id: "A".into(),
                residues,
            }],
            native: Some(native),
        },
        classes,
        dihedrals,
    }
}

/// Builds N/CA/C/O coordinates from per-residue (phi, psi) in degrees by
/// sequential frame extension with ideal bond geometry and trans peptides.
pub fn build_backbone(dihedrals: &[(f64, f64)]) -> Vec<ResidueAtoms> {
    let rad = |d: f64| d * PI / 180.0;
    let mut out: Vec<ResidueAtoms> = Vec::with_capacity(dihedrals.len());
    for (i, &(phi, _)) in dihedrals.iter().enumerate() {
        let (n, ca, c) = if i == 0 {
            let n = [0.0, 0.0, 0.0];
            let ca = [BOND_N_CA, 0.0, 0.0];
            let t = rad(180.0 - ANGLE_N_CA_C);
            let c = [ca[0] + BOND_CA_C * t.cos(), BOND_CA_C * t.sin(), 0.0];
            (n, ca, c)
        } else {
            let p = &out[i - 1];
            let psi_prev = dihedrals[i - 1].1;
            let n = place_atom(
                &p.n,
                &p.ca,
                &p.c,
                BOND_C_N,
                rad(ANGLE_CA_C_N),
                rad(psi_prev),
            );
            let ca = place_atom(&p.ca, &p.c, &n, BOND_N_CA, rad(ANGLE_C_N_CA), rad(OMEGA));
            let c = place_atom(&p.c, &n, &ca, BOND_CA_C, rad(ANGLE_N_CA_C), rad(phi));
            (n, ca, c)
        };
        let psi = dihedrals[i].1;
        let o = place_atom(&n, &ca, &c, BOND_C_O, rad(ANGLE_CA_C_O), rad(psi + 180.0));
        out.push(ResidueAtoms {
            n,
            ca,
            c,
            o: Some(o),
        });
    }
    out
}

/// Expected recovery of the predictor that knows each residue's class and its
/// true predecessor: it is right whenever no noise occurred, and by chance
/// (1 in 20) when it did.
pub fn bayes_optimal_recovery(spec: &SyntheticSpec) -> f64 {
    let eta = spec.noise_rate;
    (1.0 - eta) + eta / NUM_AMINO_ACIDS as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::linalg::{dihedral, dist};

    fn spec(eta: f64, n: usize, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            n_samples: n,
            noise_rate: eta,
            seed,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn noise_free_sequences_follow_the_table() {
        let s = spec(0.0, 20, 3);
        for i in 0..20 {
            let rec = gen_synthetic_record(&s, i);
            let mut prev = START_SYMBOL;
            for (aa, class) in rec
                .structure
                .native
                .as_ref()
                .unwrap()
                .iter()
                .zip(&rec.classes)
            {
                assert_eq!(*aa, s.rule_tables[*class as usize][prev]);
                prev = *aa as usize;
            }
        }
        assert_eq!(gen_synthetic(&s).unwrap(), gen_synthetic(&s).unwrap());
    }

    #[test]
    fn full_noise_is_uniform() {
        let s = SyntheticSpec {
            length_range: (50, 50),
            ..spec(1.0, 2000, 11)
        };
        let mut counts = [0usize; 20];
        let mut total = 0;
        for (st, _) in gen_synthetic(&s).unwrap() {
            for &aa in st.native.as_ref().unwrap() {
                counts[aa as usize] += 1;
                total += 1;
            }
        }
        assert_eq!(total, 100_000);
        for c in counts {
            let f = c as f64 / total as f64;
            // within two percentage points, and within 5 binomial sigmas
            let sigma = (0.05f64 * 0.95 / total as f64).sqrt();
            assert!((f - 0.05).abs() < 0.02, "frequency {f}");
            assert!((f - 0.05).abs() < 5.0 * sigma, "frequency {f}");
        }
    }

    #[test]
    fn helix_geometry_is_ideal() {
        let dihedrals = vec![HELIX_PHI_PSI; 10];
        let res = build_backbone(&dihedrals);
        for w in res.windows(2) {
            let d = dist(&w[0].ca, &w[1].ca);
            assert!((d - 3.8).abs() <= 0.2, "CA-CA {d}");
        }
        // Interior dihedrals come back out of the coordinates.
        for i in 1..9 {
            let phi = dihedral(&res[i - 1].c, &res[i].n, &res[i].ca, &res[i].c).to_degrees();
            let psi = dihedral(&res[i].n, &res[i].ca, &res[i].c, &res[i + 1].n).to_degrees();
            assert!((phi - HELIX_PHI_PSI.0).abs() < 1e-9);
            assert!((psi - HELIX_PHI_PSI.1).abs() < 1e-9);
        }
    }

    #[test]
    fn generated_chains_have_bonded_cas() {
        for (st, _) in gen_synthetic(&spec(0.1, 50, 5)).unwrap() {
            st.validate().unwrap();
            let breaks = st.chain_breaks();
            assert!(breaks[..breaks.len() - 1].iter().all(|b| !b));
        }
    }

    #[test]
    fn bayes_rate_examples() {
        assert_eq!(bayes_optimal_recovery(&spec(0.0, 1, 0)), 1.0);
        assert!((bayes_optimal_recovery(&spec(1.0, 1, 0)) - 0.05).abs() < 1e-15);
        assert!((bayes_optimal_recovery(&spec(0.1, 1, 0)) - 0.905).abs() < 1e-12);
    }

    /// Monte-Carlo check: applying the true rule to the true predecessor
    /// recovers the analytic Bayes rate within 3 binomial standard errors.
    #[test]
    fn bayes_rate_matches_simulation() {
        for &eta in &[0.1, 0.3, 0.7] {
            let s = spec(eta, 400, 21);
            let (mut hit, mut n) = (0usize, 0usize);
            for i in 0..s.n_samples as u64 {
                let rec = gen_synthetic_record(&s, i);
                let native = rec.structure.native.unwrap();
                let mut prev = START_SYMBOL;
                for (aa, class) in native.iter().zip(&rec.classes) {
                    hit += (s.rule_tables[*class as usize][prev] == *aa) as usize;
                    n += 1;
                    prev = *aa as usize;
                }
            }
            let p = bayes_optimal_recovery(&s);
            let emp = hit as f64 / n as f64;
            let sigma = (p * (1.0 - p) / n as f64).sqrt();
            assert!((emp - p).abs() <= 3.0 * sigma, "eta {eta}: {emp} vs {p}");
        }
    }

    #[test]
    fn seeds_change_sequences() {
        let a = gen_synthetic(&spec(0.1, 10, 1)).unwrap();
        let b = gen_synthetic(&spec(0.1, 10, 2)).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn empty_length_range_is_rejected() {
        let s = SyntheticSpec {
            length_range: (10, 5),
            ..SyntheticSpec::default()
        };
        assert!(gen_synthetic(&s).is_err());
    }
}
