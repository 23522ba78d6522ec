use rand::Rng;

use super::linalg::Mat3;
use crate::data::BackboneStructure;

/// Uniformly random rotation matrix (via a normalized random quaternion).
pub fn random_rotation(rng: &mut impl Rng) -> Mat3 {
    let mut q = [0.0f64; 4];
    loop {
        for x in q.iter_mut() {
            *x = rng.random_range(-1.0..1.0);
        }
        let n: f64 = q.iter().map(|x| x * x).sum();
        if n > 1e-3 && n <= 1.0 {
            let n = n.sqrt();
            q.iter_mut().for_each(|x| *x /= n);
            break;
        }
    }
    let [w, x, y, z] = q;
    [
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - z * w),
            2.0 * (x * z + y * w),
        ],
        [
            2.0 * (x * y + z * w),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - x * w),
        ],
        [
            2.0 * (x * z - y * w),
            2.0 * (y * z + x * w),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ]
}

/// Applies `x ↦ R x + t` to every atom.
pub fn apply_rigid(s: &BackboneStructure, rot: &Mat3, t: [f64; 3]) -> BackboneStructure {
    let mut out = s.clone();
    for r in out.residues_mut() {
        for a in r.atoms_mut() {
            let v = *a;
            for k in 0..3 {
                a[k] = rot[k][0] * v[0] + rot[k][1] * v[1] + rot[k][2] * v[2] + t[k];
            }
        }
    }
    out
}
