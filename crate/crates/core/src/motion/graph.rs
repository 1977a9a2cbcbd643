use std::rc::Rc;

use super::MotionError;
use crate::tensor::Tensor;

/// Skeleton topology: bones plus self-loops, degree-normalized.
#[derive(Clone, Debug)]
pub struct MotionGraph {
    pub joints: usize,
    pub edges: Vec<(usize, usize)>,
    /// Joint subtracted during root-centering.
    pub root: usize,
    adjacency: Tensor,
    normalized: Rc<Tensor>,
}

/// Bones of the seven-joint skeleton used by the synthetic corpus:
/// pelvis, spine, head, left hand, right hand, left foot, right foot.
pub const SYNTHETIC_BONES: [(usize, usize); 6] = [(0, 1), (1, 2), (1, 3), (1, 4), (0, 5), (0, 6)];

/// Bones of the 33-landmark pose layout.
pub const POSE33_BONES: [(usize, usize); 35] = [
    (0, 1), (1, 2), (2, 3), (3, 7), (0, 4), (4, 5), (5, 6), (6, 8), (9, 10), (11, 12),
    (11, 13), (13, 15), (15, 17), (15, 19), (15, 21), (17, 19), (12, 14), (14, 16), (16, 18), (16, 20),
    (16, 22), (18, 20), (11, 23), (12, 24), (23, 24), (23, 25), (24, 26), (25, 27), (26, 28), (27, 29),
    (28, 30), (29, 31), (30, 32), (27, 31), (28, 32),
];

impl MotionGraph {
    pub fn new(joints: usize, edges: &[(usize, usize)], root: usize) -> Result<Self, MotionError> {
        if joints == 0 || root >= joints {
            return Err(MotionError::Invalid(format!("root {root} invalid for {joints} joints")));
        }
        let mut a = vec![0.0; joints * joints];
        for i in 0..joints {
            a[i * joints + i] = 1.0;
        }
        for &(i, j) in edges {
            if i >= joints || j >= joints {
                return Err(MotionError::Invalid(format!("edge ({i},{j}) outside {joints} joints")));
            }
            a[i * joints + j] = 1.0;
            a[j * joints + i] = 1.0;
        }
        let mut n = a.clone();
        for row in n.chunks_mut(joints) {
            let deg: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= deg);
        }
        Ok(MotionGraph {
            joints,
            edges: edges.to_vec(),
            root,
            adjacency: Tensor::new(&[joints, joints], a)?,
            normalized: Rc::new(Tensor::new(&[joints, joints], n)?),
        })
    }

    /// The seven-joint synthetic skeleton, the 33-landmark pose layout, or a chain.
    pub fn for_joints(joints: usize) -> Result<Self, MotionError> {
        match joints {
            7 => Self::new(7, &SYNTHETIC_BONES, 0),
            33 => Self::new(33, &POSE33_BONES, 23),
            _ => {
                let chain: Vec<_> = (1..joints).map(|j| (j - 1, j)).collect();
                Self::new(joints, &chain, 0)
            }
        }
    }

    /// Symmetric 0/1 adjacency including self-loops.
    pub fn adjacency(&self) -> &Tensor {
        &self.adjacency
    }

    /// Row-stochastic D⁻¹(A + I).
    pub fn normalized(&self) -> &Rc<Tensor> {
        &self.normalized
    }

    /// Relabel joint `j` as `perm[j]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self, MotionError> {
        if perm.len() != self.joints {
            return Err(MotionError::Invalid("permutation length differs from joint count".into()));
        }
        let edges: Vec<_> = self.edges.iter().map(|&(i, j)| (perm[i], perm[j])).collect();
        Self::new(self.joints, &edges, perm[self.root])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adjacency_symmetric_and_rows_sum_to_one() {
        for j in [3, 7, 33] {
            let g = MotionGraph::for_joints(j).unwrap();
            let a = g.adjacency();
            let n = g.normalized();
            for r in 0..j {
                for c in 0..j {
                    assert_eq!(a.at(r, c), a.at(c, r));
                }
                assert!((n.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(MotionGraph::new(2, &[(0, 2)], 0).is_err());
        assert!(MotionGraph::new(2, &[(0, 1)], 2).is_err());
    }
}
