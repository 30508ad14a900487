//! Rigid alignment of a point cloud into the BMO frame.

use crate::geometry::boundary::BmoLandmarks;
use crate::geometry::cloud::OnhPointCloud;
use crate::geometry::plane::{cross3, dot3, norm3, scale3, sub3, Vec3};

pub type Mat3 = [[f64; 3]; 3];

pub const IDENTITY3: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

pub fn mat3_apply(m: &Mat3, v: Vec3) -> Vec3 {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

pub fn mat3_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for (k, row) in b.iter().enumerate() {
                out[i][j] += a[i][k] * row[j];
            }
        }
    }
    out
}

/// Rotation about a unit axis by `angle` (Rodrigues form).
pub fn rotation_axis_angle(axis: Vec3, angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    let [x, y, z] = axis;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}

/// The minimal rotation taking unit vector `from` onto unit vector `to`
/// (rotation axis `from x to`; identity when already aligned; a half-turn
/// about x for the anti-parallel case).
pub fn minimal_rotation(from: Vec3, to: Vec3) -> Mat3 {
    let axis = cross3(from, to);
    let s = norm3(axis);
    let c = dot3(from, to);
    if s < 1e-15 {
        if c >= 0.0 {
            return IDENTITY3;
        }
        return rotation_axis_angle([1.0, 0.0, 0.0], std::f64::consts::PI);
    }
    rotation_axis_angle(scale3(axis, 1.0 / s), s.atan2(c))
}

/// Center the cloud at the BMO centroid and rotate the BMO plane normal
/// onto the axial (+z) direction. Rigid by construction.
pub fn align_to_bmo(cloud: &OnhPointCloud, landmarks: &BmoLandmarks) -> OnhPointCloud {
    let rot = minimal_rotation(landmarks.plane_normal, [0.0, 0.0, 1.0]);
    let mut out = cloud.clone();
    for p in &mut out.points {
        p.pos = mat3_apply(&rot, sub3(p.pos, landmarks.center));
    }
    out
}

/// Transform landmarks with the same rigid map as a point cloud; test and
/// pipeline helper for round trips.
pub fn transform_landmarks(lm: &BmoLandmarks, rot: &Mat3, translation: Vec3) -> BmoLandmarks {
    let map = |p: Vec3| {
        let r = mat3_apply(rot, p);
        [
            r[0] + translation[0],
            r[1] + translation[1],
            r[2] + translation[2],
        ]
    };
    let mut normal = mat3_apply(rot, lm.plane_normal);
    // Plane normals keep the sign convention of the fit: toward +z.
    if normal[2] < 0.0 {
        normal = scale3(normal, -1.0);
    }
    BmoLandmarks {
        bmo_points: lm.bmo_points.iter().map(|&p| map(p)).collect(),
        center: map(lm.center),
        plane_normal: normal,
    }
}
