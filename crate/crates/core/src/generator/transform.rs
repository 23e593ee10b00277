use serde::{Deserialize, Serialize};

use crate::latent::RigidParams;

/// Plane map `x ↦ rotation·x + offset` applied to the generator's input
/// coordinate frame. The rendered image becomes `I′(x) = I(τ(x))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputTransform {
    pub rotation: [[f64; 2]; 2],
    pub offset: [f64; 2],
}

pub(crate) fn rotation_matrix(theta: f64) -> [[f64; 2]; 2] {
    let (s, c) = theta.sin_cos();
    [[c, -s], [s, c]]
}

pub(crate) fn mat_vec(m: &[[f64; 2]; 2], v: [f64; 2]) -> [f64; 2] {
    [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
}

fn mat_mul(a: &[[f64; 2]; 2], b: &[[f64; 2]; 2]) -> [[f64; 2]; 2] {
    [
        [
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
        ],
        [
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        ],
    ]
}

impl Default for InputTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl InputTransform {
    pub const fn identity() -> Self {
        Self {
            rotation: [[1.0, 0.0], [0.0, 1.0]],
            offset: [0.0, 0.0],
        }
    }

    /// `τ(x) = R(−r)·(x − t)`: the rendered face moves by `t` and turns by `r`.
    pub fn from_rigid(p: &RigidParams) -> Self {
        let rotation = rotation_matrix(-p.r);
        let rt = mat_vec(&rotation, [p.tx, p.ty]);
        Self {
            rotation,
            offset: [-rt[0], -rt[1]],
        }
    }

    /// Recover `(t, r)` such that `from_rigid` reproduces this map.
    pub fn to_rigid(&self) -> RigidParams {
        let r = -self.rotation[1][0].atan2(self.rotation[0][0]);
        let forward = rotation_matrix(r);
        let t = mat_vec(&forward, self.offset);
        RigidParams {
            tx: -t[0],
            ty: -t[1],
            r,
        }
    }

    pub fn apply(&self, x: [f64; 2]) -> [f64; 2] {
        let v = mat_vec(&self.rotation, x);
        [v[0] + self.offset[0], v[1] + self.offset[1]]
    }

    /// `self ∘ inner`: apply `inner` first.
    pub fn compose(&self, inner: &InputTransform) -> InputTransform {
        let rotation = mat_mul(&self.rotation, &inner.rotation);
        let o = mat_vec(&self.rotation, inner.offset);
        InputTransform {
            rotation,
            offset: [o[0] + self.offset[0], o[1] + self.offset[1]],
        }
    }

    pub fn inverse(&self) -> InputTransform {
        let r = &self.rotation;
        let rt = [[r[0][0], r[1][0]], [r[0][1], r[1][1]]];
        let o = mat_vec(&rt, self.offset);
        InputTransform {
            rotation: rt,
            offset: [-o[0], -o[1]],
        }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::identity()
    }

    pub fn max_abs_diff(&self, other: &InputTransform) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                m = m.max((self.rotation[i][j] - other.rotation[i][j]).abs());
            }
            m = m.max((self.offset[i] - other.offset[i]).abs());
        }
        m
    }

    pub fn determinant(&self) -> f64 {
        self.rotation[0][0] * self.rotation[1][1] - self.rotation[0][1] * self.rotation[1][0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn zero_params_give_identity() {
        assert!(InputTransform::from_rigid(&RigidParams::identity()).max_abs_diff(&InputTransform::identity()) == 0.0);
    }

    #[test]
    fn translation_then_inverse_is_identity() {
        let t = InputTransform::from_rigid(&RigidParams::new(0.1, 0.0, 0.0).unwrap());
        assert!(t.compose(&t.inverse()).max_abs_diff(&InputTransform::identity()) < 1e-12);
        assert!(t.inverse().compose(&t).max_abs_diff(&InputTransform::identity()) < 1e-12);
    }

    #[test]
    fn rotations_compose_additively() {
        // Oracle: explicit 2×2 matrix products of R(−r).
        for &(r1, r2) in &[(0.3, 0.4), (-1.0, 0.25), (PI / 2.0, PI / 3.0)] {
            let a = InputTransform::from_rigid(&RigidParams::new(0.0, 0.0, r1).unwrap());
            let b = InputTransform::from_rigid(&RigidParams::new(0.0, 0.0, r2).unwrap());
            let sum = InputTransform::from_rigid(&RigidParams::new(0.0, 0.0, r1 + r2).unwrap());
            assert!(a.compose(&b).max_abs_diff(&sum) < 1e-12);
            let m = [[(r1 + r2).cos(), (r1 + r2).sin()], [-(r1 + r2).sin(), (r1 + r2).cos()]];
            for i in 0..2 {
                for j in 0..2 {
                    assert!((a.compose(&b).rotation[i][j] - m[i][j]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn rigid_round_trip_and_orthonormal() {
        let p = RigidParams::new(0.12, -0.07, 0.9).unwrap();
        let t = InputTransform::from_rigid(&p);
        assert!((t.determinant() - 1.0).abs() < 1e-12);
        let q = t.to_rigid();
        assert!((q.tx - p.tx).abs() < 1e-12 && (q.ty - p.ty).abs() < 1e-12 && (q.r - p.r).abs() < 1e-12);
        // The point that lands at the origin of the transformed frame is t.
        let o = t.apply([p.tx, p.ty]);
        assert!(o[0].abs() < 1e-12 && o[1].abs() < 1e-12);
    }
}
