use super::linalg::{cross, det, dot, norm, normalize, scale, sub, Mat3};
use crate::data::{BackboneStructure, Vec3};
use crate::error::{Error, Result};

const DEGENERATE_CROSS_NORM: f64 = 1e-8;

/// Orthonormal residue frame. `rot[r][k]` is component `r` of basis vector
/// `e_k`; the basis is (C−CA, in-plane N direction, normal) and the origin is CA.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub rot: Mat3,
    pub origin: Vec3,
}

impl Frame {
    pub fn identity(origin: Vec3) -> Self {
        Frame {
            rot: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            origin,
        }
    }

    pub fn basis(&self, k: usize) -> Vec3 {
        [self.rot[0][k], self.rot[1][k], self.rot[2][k]]
    }

    pub fn det(&self) -> f64 {
        det(&self.rot)
    }

    pub fn from_atoms(n: &Vec3, ca: &Vec3, c: &Vec3) -> Option<Self> {
        let u = sub(c, ca);
        let v = sub(n, ca);
        if norm(&cross(&u, &v)) < DEGENERATE_CROSS_NORM {
            return None;
        }
        let e1 = normalize(&u);
        let e2 = normalize(&sub(&v, &scale(&e1, dot(&e1, &v))));
        let e3 = cross(&e1, &e2);
        let mut rot = [[0.0; 3]; 3];
        for r in 0..3 {
            rot[r] = [e1[r], e2[r], e3[r]];
        }
        Some(Frame { rot, origin: *ca })
    }
}

/// Per-residue frames. Errors on the first residue whose N, CA and C are
/// collinear.
pub fn local_frames(structure: &BackboneStructure) -> Result<Vec<Frame>> {
    structure
        .residues()
        .enumerate()
        .map(|(i, r)| {
            Frame::from_atoms(&r.n, &r.ca, &r.c).ok_or(Error::DegenerateFrame { residue: i })
        })
        .collect()
}

/// Frames with degenerate residues replaced by identity, plus the flags.
pub(crate) fn frames_lenient(structure: &BackboneStructure) -> (Vec<Frame>, Vec<bool>) {
    structure
        .residues()
        .map(|r| match Frame::from_atoms(&r.n, &r.ca, &r.c) {
            Some(f) => (f, false),
            None => (Frame::identity(r.ca), true),
        })
        .unzip()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Chain, ResidueAtoms};
    use rand::{Rng, SeedableRng};

    fn single(n: Vec3, ca: Vec3, c: Vec3) -> BackboneStructure {
        BackboneStructure {
            id: "f".into(),
            chains: vec![Chain {
                id: "A".into(),
                residues: vec![ResidueAtoms { n, ca, c, o: None }],
            }],
            native: None,
        }
    }

    fn orthonormal(f: &Frame) -> bool {
        (0..3).all(|a| {
            (0..3).all(|b| {
                let d = dot(&f.basis(a), &f.basis(b));
                (d - if a == b { 1.0 } else { 0.0 }).abs() < 1e-12
            })
        })
    }

    #[test]
    fn reference_residue() {
        let s = single([-1.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 1.0, 0.0]);
        let f = local_frames(&s).unwrap()[0];
        assert!(orthonormal(&f));
        assert!((f.det() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn collinear_atoms_are_degenerate() {
        let s = single([-1.0, 0.0, 0.0], [0.0, 0.0, 0.0], [1.5, 0.0, 0.0]);
        assert!(matches!(
            local_frames(&s),
            Err(Error::DegenerateFrame { residue: 0 })
        ));
    }

    /// Classical Gram–Schmidt written out component-wise as an independent
    /// reference.
    fn reference_frame(n: Vec3, ca: Vec3, c: Vec3) -> [[f64; 3]; 3] {
        let u: Vec<f64> = (0..3).map(|k| c[k] - ca[k]).collect();
        let v: Vec<f64> = (0..3).map(|k| n[k] - ca[k]).collect();
        let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        let e1: Vec<f64> = u.iter().map(|x| x / nu).collect();
        let p: f64 = (0..3).map(|k| e1[k] * v[k]).sum();
        let w: Vec<f64> = (0..3).map(|k| v[k] - p * e1[k]).collect();
        let nw = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        let e2: Vec<f64> = w.iter().map(|x| x / nw).collect();
        let e3 = [
            e1[1] * e2[2] - e1[2] * e2[1],
            e1[2] * e2[0] - e1[0] * e2[2],
            e1[0] * e2[1] - e1[1] * e2[0],
        ];
        [e1.try_into().unwrap(), e2.try_into().unwrap(), e3]
    }

    #[test]
    fn matches_reference_on_random_residues() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut p = || -> Vec3 {
            [
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
            ]
        };
        for _ in 0..100 {
            let (n, ca, c) = (p(), p(), p());
            let f = Frame::from_atoms(&n, &ca, &c).unwrap();
            let r = reference_frame(n, ca, c);
            for k in 0..3 {
                for j in 0..3 {
                    assert!((f.basis(k)[j] - r[k][j]).abs() < 1e-9);
                }
            }
            assert!(orthonormal(&f));
            assert!((f.det() - 1.0).abs() < 1e-6);
        }
    }
}
