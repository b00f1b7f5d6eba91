//! 6D spatial vectors in `[angular; linear]` order, expressed in body coordinates.

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};

pub type SpatialVec = Vector6<f64>;

#[inline]
pub fn ang(v: &SpatialVec) -> Vector3<f64> {
    Vector3::new(v[0], v[1], v[2])
}

#[inline]
pub fn lin(v: &SpatialVec) -> Vector3<f64> {
    Vector3::new(v[3], v[4], v[5])
}

#[inline]
pub fn join(a: Vector3<f64>, l: Vector3<f64>) -> SpatialVec {
    SpatialVec::new(a.x, a.y, a.z, l.x, l.y, l.z)
}

#[inline]
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// `v x m` for motion vectors.
#[inline]
pub fn cross_motion(v: &SpatialVec, m: &SpatialVec) -> SpatialVec {
    let (w, vl) = (ang(v), lin(v));
    let (mw, ml) = (ang(m), lin(m));
    join(w.cross(&mw), w.cross(&ml) + vl.cross(&mw))
}

/// `v x* f` for force vectors.
#[inline]
pub fn cross_force(v: &SpatialVec, f: &SpatialVec) -> SpatialVec {
    let (w, vl) = (ang(v), lin(v));
    let (fa, fl) = (ang(f), lin(f));
    join(w.cross(&fa) + vl.cross(&fl), w.cross(&fl))
}

/// Rotation by `angle` about the unit vector `axis`.
pub fn axis_angle(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    let k = skew(axis);
    let (s, c) = angle.sin_cos();
    Matrix3::identity() + k * s + k * k * (1.0 - c)
}

/// Plücker transform from a parent frame to a child frame.
///
/// `rot` maps parent coordinates to child coordinates and `trans` is the child
/// origin expressed in parent coordinates.
#[derive(Clone, Copy, Debug)]
pub struct Xform {
    pub rot: Matrix3<f64>,
    pub trans: Vector3<f64>,
}

impl Xform {
    pub fn identity() -> Self {
        Self { rot: Matrix3::identity(), trans: Vector3::zeros() }
    }

    #[inline]
    pub fn apply_motion(&self, v: &SpatialVec) -> SpatialVec {
        let w = ang(v);
        join(self.rot * w, self.rot * (lin(v) - self.trans.cross(&w)))
    }

    /// Child-frame force to parent frame (`X^T f`).
    #[inline]
    pub fn transpose_force(&self, f: &SpatialVec) -> SpatialVec {
        let n = self.rot.transpose() * ang(f);
        let fl = self.rot.transpose() * lin(f);
        join(n + self.trans.cross(&fl), fl)
    }

    pub fn to_matrix(&self) -> Matrix6<f64> {
        let mut m = Matrix6::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rot);
        m.fixed_view_mut::<3, 3>(3, 3).copy_from(&self.rot);
        m.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-self.rot * skew(&self.trans)));
        m
    }
}

/// Spatial inertia about the body origin.
pub fn spatial_inertia(mass: f64, com: &Vector3<f64>, inertia_com: &Matrix3<f64>) -> Matrix6<f64> {
    let c = skew(com);
    let mut m = Matrix6::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&(inertia_com + c * c.transpose() * mass));
    m.fixed_view_mut::<3, 3>(0, 3).copy_from(&(c * mass));
    m.fixed_view_mut::<3, 3>(3, 0).copy_from(&(c.transpose() * mass));
    m.fixed_view_mut::<3, 3>(3, 3).copy_from(&(Matrix3::identity() * mass));
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transform_matrix_matches_apply() {
        let x = Xform { rot: axis_angle(&Vector3::new(0.6, 0.0, 0.8), 0.7), trans: Vector3::new(0.1, -0.3, 0.2) };
        let v = SpatialVec::new(0.3, -1.0, 0.2, 0.5, 0.1, -0.7);
        let f = SpatialVec::new(-0.2, 0.4, 1.1, 0.9, -0.5, 0.3);
        let m = x.to_matrix();
        assert!((m * v - x.apply_motion(&v)).norm() < 1e-14);
        assert!((m.transpose() * f - x.transpose_force(&f)).norm() < 1e-14);
        // Power is frame invariant.
        let fc = f;
        let vp = v;
        let p_child = fc.dot(&x.apply_motion(&vp));
        let p_parent = x.transpose_force(&fc).dot(&vp);
        assert!((p_child - p_parent).abs() < 1e-14);
    }

    #[test]
    fn inertia_kinetic_energy_matches_point_mass() {
        let com = Vector3::new(0.2, -0.1, 0.3);
        let i = spatial_inertia(2.0, &com, &Matrix3::zeros());
        let v = SpatialVec::new(0.0, 0.0, 1.5, 0.3, 0.0, 0.0);
        let vel_com = lin(&v) + ang(&v).cross(&com);
        let ke = 0.5 * v.dot(&(i * v));
        assert!((ke - 0.5 * 2.0 * vel_com.norm_squared()).abs() < 1e-14);
    }
}
