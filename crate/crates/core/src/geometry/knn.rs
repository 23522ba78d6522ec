use super::features::GraphConfig;
use crate::data::{BackboneStructure, Vec3};

/// Distances are compared on a 1e-8 Å² grid so that rounding noise from a
/// rigid motion cannot reorder residues at the same distance; equal keys fall
/// back to residue index.
const DIST2_RESOLUTION: f64 = 1e8;

/// Directed k-nearest-neighbour graph over CA atoms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResidueGraph {
    /// `neighbors[i]`: up to k residues ordered by CA distance, then index.
    pub neighbors: Vec<Vec<usize>>,
    /// `chain_breaks[i]`: residues `i` and `i + 1` are not bonded.
    pub chain_breaks: Vec<bool>,
}

impl ResidueGraph {
    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn num_edges(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum()
    }

    /// Edges `(i, j)` grouped by source residue.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.neighbors
            .iter()
            .enumerate()
            .flat_map(|(i, ns)| ns.iter().map(move |&j| (i, j)))
    }

    /// Start offset of every residue's edge block, plus the total at the end.
    pub fn offsets(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.len() + 1);
        let mut acc = 0;
        out.push(0);
        for ns in &self.neighbors {
            acc += ns.len();
            out.push(acc);
        }
        out
    }
}

fn dist2_key(a: &Vec3, b: &Vec3) -> i64 {
    let d2 = (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2);
    (d2 * DIST2_RESOLUTION).round() as i64
}

/// Neighbour lists for a point cloud.
pub fn knn_points(points: &[Vec3], k: usize) -> Vec<Vec<usize>> {
    let n = points.len();
    let take = k.min(n.saturating_sub(1));
    (0..n)
        .map(|i| {
            if take == 0 {
                return Vec::new();
            }
            let mut cand: Vec<(i64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (dist2_key(&points[i], &points[j]), j))
                .collect();
            cand.sort_unstable();
            cand.truncate(take);
            cand.into_iter().map(|(_, j)| j).collect()
        })
        .collect()
}

pub fn knn_graph(structure: &BackboneStructure, config: &GraphConfig) -> ResidueGraph {
    ResidueGraph {
        neighbors: knn_points(&structure.ca_coords(), config.k),
        chain_breaks: structure.chain_breaks(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn three_points_complete_graph() {
        let pts = [[0.0, 0.0, 0.0], [3.8, 0.0, 0.0], [0.0, 3.8, 0.0]];
        let g = knn_points(&pts, 2);
        assert_eq!(g, vec![vec![1, 2], vec![0, 2], vec![0, 1]]);
    }

    /// Brute-force pairwise distances with the index tie rule.
    fn brute(points: &[Vec3], k: usize) -> Vec<Vec<usize>> {
        (0..points.len())
            .map(|i| {
                let mut best: Vec<usize> = Vec::new();
                let mut used = vec![false; points.len()];
                used[i] = true;
                while best.len() < k.min(points.len() - 1) {
                    let mut pick = None::<(f64, usize)>;
                    for j in 0..points.len() {
                        if used[j] {
                            continue;
                        }
                        let d = ((points[i][0] - points[j][0]).powi(2)
                            + (points[i][1] - points[j][1]).powi(2)
                            + (points[i][2] - points[j][2]).powi(2))
                        .sqrt();
                        if pick.is_none_or(|(bd, _)| d < bd) {
                            pick = Some((d, j));
                        }
                    }
                    let (_, j) = pick.unwrap();
                    used[j] = true;
                    best.push(j);
                }
                best
            })
            .collect()
    }

    #[test]
    fn line_with_ties() {
        let pts: Vec<Vec3> = (0..4).map(|i| [4.0 * i as f64, 0.0, 0.0]).collect();
        let g = knn_points(&pts, 1);
        assert_eq!(g, brute(&pts, 1));
        assert_eq!(g[1], vec![0]);
        assert_eq!(g[2], vec![1]);
        assert_eq!(g[3], vec![2]);
    }

    #[test]
    fn k_zero_and_large_k() {
        let pts: Vec<Vec3> = (0..5).map(|i| [i as f64 * 3.0, 0.0, 1.0]).collect();
        assert!(knn_points(&pts, 0).iter().all(|n| n.is_empty()));
        assert!(knn_points(&pts, 50).iter().all(|n| n.len() == 4));
        assert!(knn_points(&pts[..1], 3)[0].is_empty());
    }

    proptest! {
        #[test]
        fn matches_brute_force(
            pts in prop::collection::vec(prop::array::uniform3(-20.0f64..20.0), 1..25),
            k in 0usize..8,
        ) {
            let g = knn_points(&pts, k);
            prop_assert_eq!(&g, &brute(&pts, k));
            for (i, ns) in g.iter().enumerate() {
                prop_assert!(!ns.contains(&i));
                prop_assert_eq!(ns.len(), k.min(pts.len() - 1));
            }
        }

        #[test]
        fn permutation_relabels_graph(
            pts in prop::collection::vec(prop::array::uniform3(-20.0f64..20.0), 2..20),
            k in 1usize..6,
            seed in 0u64..1000,
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut perm: Vec<usize> = (0..pts.len()).collect();
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            // new index p holds old residue perm[p]
            let permuted: Vec<Vec3> = perm.iter().map(|&o| pts[o]).collect();
            let mut inv = vec![0; pts.len()];
            for (p, &o) in perm.iter().enumerate() {
                inv[o] = p;
            }
            let g = knn_points(&pts, k);
            let gp = knn_points(&permuted, k);
            for (p, &o) in perm.iter().enumerate() {
                let mapped: Vec<usize> = g[o].iter().map(|&j| inv[j]).collect();
                prop_assert_eq!(&mapped, &gp[p]);
            }
        }
    }
}
