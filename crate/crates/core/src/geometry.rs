//! Rigid transforms, couple normalization, Procrustes alignment and two-view
//! triangulation. Coordinates are millimetres throughout.

use nalgebra::{Matrix3, Vector2, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Anchors closer than this (triangle area, mm²) are treated as collinear.
pub const COLLINEAR_AREA_MM2: f64 = 1e-6;
const COINCIDENT_MM: f64 = 1e-9;

/// Joint naming and the anchor joints used by normalization.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Skeleton {
    names: Vec<String>,
    pub left_hip: usize,
    pub right_hip: usize,
    pub neck: usize,
}

/// The 18-joint tracking layout: three head markers, neck, then left/right
/// pairs of shoulders, elbows, wrists, hips, knees, heels and toes.
pub const EXPI_JOINTS: [&str; 18] = [
    "head_front",
    "head_left",
    "head_right",
    "neck",
    "l_shoulder",
    "r_shoulder",
    "l_elbow",
    "r_elbow",
    "l_wrist",
    "r_wrist",
    "l_hip",
    "r_hip",
    "l_knee",
    "r_knee",
    "l_heel",
    "r_heel",
    "l_toes",
    "r_toes",
];

impl Skeleton {
    pub fn expi() -> Self {
        Skeleton {
            names: EXPI_JOINTS.iter().map(|s| s.to_string()).collect(),
            left_hip: 10,
            right_hip: 11,
            neck: 3,
        }
    }

    /// Reduced layout for small synthetic tests: `l_hip, r_hip, neck, j3, ...`.
    pub fn generic(joints: usize) -> Result<Self> {
        if joints < 4 {
            return Err(Error::contract(format!("skeleton needs at least 4 joints, got {joints}")));
        }
        let mut names: Vec<String> = ["l_hip", "r_hip", "neck"].iter().map(|s| s.to_string()).collect();
        names.extend((3..joints).map(|j| format!("j{j}")));
        Ok(Skeleton {
            names,
            left_hip: 0,
            right_hip: 1,
            neck: 2,
        })
    }

    /// The tracking layout for 18 joints, the generic layout otherwise.
    pub fn for_joints(joints: usize) -> Result<Self> {
        if joints == EXPI_JOINTS.len() {
            Ok(Self::expi())
        } else {
            Self::generic(joints)
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, joint: usize) -> &str {
        &self.names[joint]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Joint index of the left/right partner, or itself for midline joints.
    pub fn mirror_of(&self, joint: usize) -> usize {
        let name = &self.names[joint];
        let swapped = if let Some(rest) = name.strip_prefix("l_") {
            format!("r_{rest}")
        } else if let Some(rest) = name.strip_prefix("r_") {
            format!("l_{rest}")
        } else if name == "head_left" {
            "head_right".to_string()
        } else if name == "head_right" {
            "head_left".to_string()
        } else {
            return joint;
        };
        self.index_of(&swapped).unwrap_or(joint)
    }
}

/// One person's joints at one instant.
#[derive(Clone, Debug, PartialEq)]
pub struct Pose {
    pub joints: Vec<Vec3>,
}

impl Pose {
    pub fn new(joints: Vec<Vec3>) -> Self {
        Pose { joints }
    }

    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if flat.len() % 3 != 0 || flat.is_empty() {
            return Err(Error::dim("pose", format!("{} values is not J x 3", flat.len())));
        }
        Ok(Pose {
            joints: flat.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect(),
        })
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.joints.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.joints.iter().all(|p| p.iter().all(|v| v.is_finite()))
    }

    fn centroid(&self) -> Vec3 {
        self.joints.iter().sum::<Vec3>() / self.joints.len() as f64
    }
}

/// `x -> R x + t` with `R` a proper rotation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self> {
        let t = RigidTransform { rotation, translation };
        if !t.is_valid(1e-9) {
            return Err(Error::contract("rotation is not orthonormal with det +1"));
        }
        Ok(t)
    }

    pub fn translation(t: Vec3) -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        let rtr = self.rotation.transpose() * self.rotation;
        (rtr - Matrix3::identity()).abs().max() <= tol
            && (self.rotation.determinant() - 1.0).abs() <= tol
            && self.translation.iter().all(|v| v.is_finite())
    }

    pub fn apply_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }
}

pub fn apply_transform(t: &RigidTransform, pose: &Pose) -> Pose {
    Pose {
        joints: pose.joints.iter().map(|p| t.apply_point(p)).collect(),
    }
}

/// Transform that puts the hip centre at the origin, the left hip on +x and
/// the neck in the XOZ half-plane with positive z.
pub fn normalization_transform(pose: &Pose, skeleton: &Skeleton) -> Result<RigidTransform> {
    let max_anchor = skeleton.left_hip.max(skeleton.right_hip).max(skeleton.neck);
    if pose.len() <= max_anchor {
        return Err(Error::contract(format!(
            "pose has {} joints, anchors need {}",
            pose.len(),
            max_anchor + 1
        )));
    }
    let lhip = pose.joints[skeleton.left_hip];
    let rhip = pose.joints[skeleton.right_hip];
    let neck = pose.joints[skeleton.neck];
    if (lhip - rhip).norm() < COINCIDENT_MM {
        return Err(Error::Degenerate("hip joints coincide".into()));
    }
    let center = (lhip + rhip) * 0.5;
    let to_hip = lhip - center;
    let to_neck = neck - center;
    let area = 0.5 * to_hip.cross(&to_neck).norm();
    if area < COLLINEAR_AREA_MM2 {
        return Err(Error::Degenerate(format!(
            "hip centre, left hip and neck are collinear (area {area:.3e} mm²)"
        )));
    }
    let x = to_hip.normalize();
    let z = (to_neck - x * x.dot(&to_neck)).normalize();
    let y = z.cross(&x);
    let rotation = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
    Ok(RigidTransform {
        rotation,
        translation: -(rotation * center),
    })
}

/// Best rigid (rotation + translation, no scale) transform taking `pred` onto `gt`.
pub fn procrustes_transform(pred: &Pose, gt: &Pose) -> Result<RigidTransform> {
    if pred.len() != gt.len() || gt.is_empty() {
        return Err(Error::contract(format!(
            "procrustes needs equal non-empty joint counts, got {} and {}",
            pred.len(),
            gt.len()
        )));
    }
    let gc = gt.centroid();
    let spread: f64 = gt.joints.iter().map(|g| (g - gc).norm_squared()).sum();
    if spread < 1e-12 {
        return Err(Error::Degenerate("ground-truth joints all coincide".into()));
    }
    let pc = pred.centroid();
    let mut h = Matrix3::zeros();
    for (p, g) in pred.joints.iter().zip(&gt.joints) {
        h += (p - pc) * (g - gc).transpose();
    }
    let svd = h.svd(true, true);
    let (u, vt) = match (svd.u, svd.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return Err(Error::Degenerate("SVD did not converge".into())),
    };
    let v = vt.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let correction = Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, d));
    let rotation = v * correction * u.transpose();
    Ok(RigidTransform {
        rotation,
        translation: gc - rotation * pc,
    })
}

/// `pred` rigidly aligned onto `gt`.
pub fn procrustes_align(pred: &Pose, gt: &Pose) -> Result<Pose> {
    if pred == gt {
        procrustes_transform(pred, gt)?;
        return Ok(gt.clone());
    }
    Ok(apply_transform(&procrustes_transform(pred, gt)?, pred))
}

pub fn sum_squared_distance(a: &Pose, b: &Pose) -> f64 {
    a.joints
        .iter()
        .zip(&b.joints)
        .map(|(p, q)| (p - q).norm_squared())
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    direction: Vec3,
}

impl Ray {
    /// Normalizes `direction`; a zero direction is a contract error.
    pub fn new(origin: Vec3, direction: Vec3) -> Result<Self> {
        let n = direction.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::contract("ray direction must be non-zero and finite"));
        }
        Ok(Ray {
            origin,
            direction: direction / n,
        })
    }

    pub fn direction(&self) -> Vec3 {
        self.direction
    }

    pub fn at(&self, s: f64) -> Vec3 {
        self.origin + self.direction * s
    }

    pub fn distance_to(&self, p: &Vec3) -> f64 {
        let w = p - self.origin;
        (w - self.direction * w.dot(&self.direction)).norm()
    }
}

/// Pinhole camera; extrinsics map world to camera coordinates. Lens
/// distortion is not modelled.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    pub intrinsic: Matrix3<f64>,
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

impl Camera {
    pub fn new(intrinsic: Matrix3<f64>, rotation: Matrix3<f64>, translation: Vec3) -> Result<Self> {
        let k = &intrinsic;
        if k[(1, 0)] != 0.0 || k[(2, 0)] != 0.0 || k[(2, 1)] != 0.0 {
            return Err(Error::contract("intrinsic matrix must be upper-triangular"));
        }
        if !(k[(0, 0)] > 0.0 && k[(1, 1)] > 0.0 && k[(2, 2)] > 0.0) {
            return Err(Error::contract("intrinsic focal entries must be positive"));
        }
        RigidTransform::new(rotation, translation)?;
        Ok(Camera {
            intrinsic,
            rotation,
            translation,
        })
    }

    pub fn center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    /// Projects a world point to pixel coordinates. Fails for points on the
    /// camera plane.
    pub fn project(&self, p: &Vec3) -> Result<Vector2<f64>> {
        let h = self.intrinsic * (self.rotation * p + self.translation);
        if h.z.abs() < f64::EPSILON {
            return Err(Error::Degenerate("point lies on the camera plane".into()));
        }
        Ok(Vector2::new(h.x / h.z, h.y / h.z))
    }

    pub fn backproject(&self, pixel: &Vector2<f64>) -> Result<Ray> {
        let kinv = self
            .intrinsic
            .try_inverse()
            .ok_or_else(|| Error::Degenerate("singular intrinsic matrix".into()))?;
        let cam_dir = kinv * Vec3::new(pixel.x, pixel.y, 1.0);
        Ray::new(self.center(), self.rotation.transpose() * cam_dir)
    }
}

/// Point minimizing the summed squared distance to both lines: the midpoint
/// of their common perpendicular.
pub fn triangulate_two_rays(r1: &Ray, r2: &Ray) -> Result<Vec3> {
    let b = r1.direction.dot(&r2.direction);
    let denom = 1.0 - b * b;
    if b.abs() >= 1.0 - 1e-9 {
        return Err(Error::NoUniqueSolution("rays are parallel".into()));
    }
    let w0 = r1.origin - r2.origin;
    let d = r1.direction.dot(&w0);
    let e = r2.direction.dot(&w0);
    let s = (b * e - d) / denom;
    let u = (e - b * d) / denom;
    Ok((r1.at(s) + r2.at(u)) * 0.5)
}

/// Parses whitespace-separated camera blocks (9 intrinsic, 9 rotation,
/// 3 translation values). Blocks are separated by blank lines; `#` starts a
/// comment. Camera ids are block positions, starting at 0.
pub fn parse_cameras(text: &str, source: &str) -> Result<Vec<Camera>> {
    let mut cameras = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    let mut block_start = 0;
    let finish = |values: &mut Vec<f64>, start: usize, cams: &mut Vec<Camera>| -> Result<()> {
        if values.is_empty() {
            return Ok(());
        }
        let perr = |msg: String| Error::Parse {
            path: source.to_string(),
            line: start,
            msg,
        };
        if values.len() != 21 {
            return Err(perr(format!("camera block has {} values, expected 21", values.len())));
        }
        let k = Matrix3::from_row_slice(&values[0..9]);
        let r = Matrix3::from_row_slice(&values[9..18]);
        let t = Vec3::new(values[18], values[19], values[20]);
        cams.push(Camera::new(k, r, t).map_err(|e| perr(e.to_string()))?);
        values.clear();
        Ok(())
    };
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            if raw.trim().is_empty() {
                finish(&mut values, block_start, &mut cameras)?;
            }
            continue;
        }
        if values.is_empty() {
            block_start = i + 1;
        }
        for tok in line.split_whitespace() {
            let v: f64 = tok.parse().map_err(|_| Error::Parse {
                path: source.to_string(),
                line: i + 1,
                msg: format!("not a number: {tok:?}"),
            })?;
            values.push(v);
        }
    }
    finish(&mut values, block_start, &mut cameras)?;
    Ok(cameras)
}

pub fn format_camera(cam: &Camera) -> String {
    let row = |m: &Matrix3<f64>, r: usize| format!("{} {} {}", m[(r, 0)], m[(r, 1)], m[(r, 2)]);
    let k = &cam.intrinsic;
    let rot = &cam.rotation;
    format!(
        "{}\n{}\n{}\n{}\n{}\n{}\n{} {} {}\n",
        row(k, 0),
        row(k, 1),
        row(k, 2),
        row(rot, 0),
        row(rot, 1),
        row(rot, 2),
        cam.translation.x,
        cam.translation.y,
        cam.translation.z
    )
}
