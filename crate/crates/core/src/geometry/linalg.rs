//! Small fixed-size vector helpers for backbone geometry.

use crate::data::Vec3;

pub type Mat3 = [[f64; 3]; 3];

#[inline]
pub fn sub(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn add(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn scale(a: &Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: &Vec3, b: &Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm(a: &Vec3) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn dist(a: &Vec3, b: &Vec3) -> f64 {
    norm(&sub(a, b))
}

pub fn normalize(a: &Vec3) -> Vec3 {
    scale(a, 1.0 / norm(a))
}

/// `m * v` for a matrix stored row-major.
pub fn mat_vec(m: &Mat3, v: &Vec3) -> Vec3 {
    [dot(&m[0], v), dot(&m[1], v), dot(&m[2], v)]
}

/// `mᵀ * v`.
pub fn mat_t_vec(m: &Mat3, v: &Vec3) -> Vec3 {
    [
        m[0][0] * v[0] + m[1][0] * v[1] + m[2][0] * v[2],
        m[0][1] * v[0] + m[1][1] * v[1] + m[2][1] * v[2],
        m[0][2] * v[0] + m[1][2] * v[1] + m[2][2] * v[2],
    ]
}

/// `aᵀ * b`.
pub fn mat_t_mat(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, x) in row.iter_mut().enumerate() {
            *x = (0..3).map(|k| a[k][i] * b[k][j]).sum();
        }
    }
    out
}

pub fn det(m: &Mat3) -> f64 {
    dot(&m[0], &cross(&m[1], &m[2]))
}

/// Dihedral angle (radians) defined by four points.
pub fn dihedral(p0: &Vec3, p1: &Vec3, p2: &Vec3, p3: &Vec3) -> f64 {
    let b0 = sub(p0, p1);
    let b1 = normalize(&sub(p2, p1));
    let b2 = sub(p3, p2);
    let v = sub(&b0, &scale(&b1, dot(&b0, &b1)));
    let w = sub(&b2, &scale(&b1, dot(&b2, &b1)));
    let x = dot(&v, &w);
    let y = dot(&cross(&b1, &v), &w);
    y.atan2(x)
}

/// Places a fourth atom given three predecessors, the bond length to `c`,
/// the bond angle `b-c-d` and the dihedral `a-b-c-d` (radians).
pub fn place_atom(a: &Vec3, b: &Vec3, c: &Vec3, bond: f64, angle: f64, torsion: f64) -> Vec3 {
    let bc = normalize(&sub(c, b));
    let n = normalize(&cross(&sub(b, a), &bc));
    let m = cross(&n, &bc);
    let d2 = [
        -bond * angle.cos(),
        bond * angle.sin() * torsion.cos(),
        bond * angle.sin() * torsion.sin(),
    ];
    add(
        c,
        &add(
            &scale(&bc, d2[0]),
            &add(&scale(&m, d2[1]), &scale(&n, d2[2])),
        ),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn place_atom_reproduces_internal_coordinates() {
        let a = [0.3, -1.2, 0.4];
        let b = [1.0, 0.1, -0.2];
        let c = [2.1, 0.4, 0.9];
        for &tors in &[-2.5, -1.0, 0.0, 0.7, 3.0] {
            let d = place_atom(&a, &b, &c, 1.33, 2.0, tors);
            assert!((dist(&c, &d) - 1.33).abs() < 1e-12);
            let ang = dot(&normalize(&sub(&b, &c)), &normalize(&sub(&d, &c))).acos();
            assert!((ang - 2.0).abs() < 1e-12);
            assert!((dihedral(&a, &b, &c, &d) - tors).abs() < 1e-12);
        }
    }
}
