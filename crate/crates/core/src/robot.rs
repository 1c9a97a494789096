//! Robot kinematics: a URDF subset (links, joints, origins, axes, limits,
//! mesh filenames), forward kinematics, the joint-velocity tracking law, and
//! damped least-squares differential IK.

use crate::error::{CoreError, Result};
use crate::geom::RigidTransform;
use crate::mesh::{load_mesh_obj, TriangleMesh};
use nalgebra::{DMatrix, DVector, UnitQuaternion, Vector3};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JointKind {
    Revolute,
    Prismatic,
    Fixed,
}

#[derive(Debug, Clone)]
pub struct Joint {
    pub name: String,
    pub kind: JointKind,
    /// Fixed transform from the parent link frame to the joint frame.
    pub origin: RigidTransform,
    pub axis: Vector3<f64>,
    /// (lower, upper); unbounded for fixed joints.
    pub limits: (f64, f64),
    pub parent_link: usize,
    pub child_link: usize,
}

#[derive(Debug, Clone)]
pub struct Link {
    pub name: String,
    pub mesh_file: Option<String>,
    pub mesh: Option<TriangleMesh>,
}

#[derive(Debug, Clone)]
pub struct RobotModel {
    pub links: Vec<Link>,
    /// Topologically ordered: a joint's parent link always precedes its child.
    pub joints: Vec<Joint>,
    /// Indices into the actuated-DOF vector that drive the gripper fingers.
    pub gripper_joints: Vec<usize>,
    /// ℓ2 cap on commanded joint velocities, rad/s (Appendix A.1.2 law).
    pub velocity_norm_limit: f64,
    pub root_link: usize,
}

impl RobotModel {
    /// Actuated (non-fixed) joint indices in order; their positions form the
    /// DOF vector.
    pub fn actuated(&self) -> Vec<usize> {
        self.joints
            .iter()
            .enumerate()
            .filter(|(_, j)| j.kind != JointKind::Fixed)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn dof(&self) -> usize {
        self.actuated().len()
    }

    pub fn link_index(&self, name: &str) -> Option<usize> {
        self.links.iter().position(|l| l.name == name)
    }

    pub fn clamp_to_limits(&self, q: &[f64]) -> (Vec<f64>, bool) {
        let mut clamped = false;
        let out = self
            .actuated()
            .iter()
            .zip(q)
            .map(|(&ji, &v)| {
                let (lo, hi) = self.joints[ji].limits;
                let c = v.clamp(lo, hi);
                if c != v {
                    clamped = true;
                }
                c
            })
            .collect();
        (out, clamped)
    }

    /// Load referenced OBJ meshes relative to `dir`.
    pub fn load_meshes<P: AsRef<Path>>(&mut self, dir: P) -> Result<()> {
        for link in &mut self.links {
            if let Some(file) = &link.mesh_file {
                link.mesh = Some(load_mesh_obj(dir.as_ref().join(file))?);
            }
        }
        Ok(())
    }
}

fn parse_vec3(s: &str) -> Option<Vector3<f64>> {
    let vals: Vec<f64> = s
        .split_whitespace()
        .map(|t| t.parse().ok())
        .collect::<Option<_>>()?;
    (vals.len() == 3).then(|| Vector3::new(vals[0], vals[1], vals[2]))
}

fn parse_origin(node: roxmltree::Node) -> RigidTransform {
    let mut xyz = Vector3::zeros();
    let mut rpy = Vector3::zeros();
    if let Some(o) = node.children().find(|c| c.has_tag_name("origin")) {
        if let Some(v) = o.attribute("xyz").and_then(parse_vec3) {
            xyz = v;
        }
        if let Some(v) = o.attribute("rpy").and_then(parse_vec3) {
            rpy = v;
        }
    }
    RigidTransform {
        rotation: UnitQuaternion::from_euler_angles(rpy.x, rpy.y, rpy.z),
        translation: xyz,
    }
}

/// Parse the URDF subset: links (visual/collision mesh filename), joints
/// (revolute/prismatic/continuous/fixed, origin, axis, limits). Transmissions,
/// sensors, and materials are ignored.
pub fn parse_urdf(text: &str, path: &str) -> Result<RobotModel> {
    let doc = roxmltree::Document::parse(text).map_err(|e| CoreError::Parse {
        path: path.into(),
        line: e.pos().row as usize,
        msg: e.to_string(),
    })?;
    let robot = doc
        .descendants()
        .find(|n| n.has_tag_name("robot"))
        .ok_or_else(|| CoreError::Parse {
            path: path.into(),
            line: 1,
            msg: "no <robot> element".into(),
        })?;

    let mut links = Vec::new();
    for l in robot.children().filter(|n| n.has_tag_name("link")) {
        let name = l.attribute("name").unwrap_or_default().to_string();
        let mesh_file = l
            .children()
            .filter(|c| c.has_tag_name("visual") || c.has_tag_name("collision"))
            .filter_map(|c| c.children().find(|g| g.has_tag_name("geometry")))
            .filter_map(|g| g.children().find(|m| m.has_tag_name("mesh")))
            .filter_map(|m| m.attribute("filename"))
            .next()
            .map(String::from);
        links.push(Link {
            name,
            mesh_file,
            mesh: None,
        });
    }

    let link_index = |name: &str| -> Result<usize> {
        links
            .iter()
            .position(|l| l.name == name)
            .ok_or_else(|| CoreError::Parse {
                path: path.into(),
                line: 0,
                msg: format!("joint references unknown link `{name}`"),
            })
    };

    let mut joints = Vec::new();
    for j in robot.children().filter(|n| n.has_tag_name("joint")) {
        let name = j.attribute("name").unwrap_or_default().to_string();
        let kind = match j.attribute("type") {
            Some("revolute") => JointKind::Revolute,
            Some("continuous") => JointKind::Revolute,
            Some("prismatic") => JointKind::Prismatic,
            Some("fixed") => JointKind::Fixed,
            other => {
                return Err(CoreError::Parse {
                    path: path.into(),
                    line: 0,
                    msg: format!("joint `{name}`: unsupported type {other:?}"),
                })
            }
        };
        let parent = j
            .children()
            .find(|c| c.has_tag_name("parent"))
            .and_then(|c| c.attribute("link"))
            .ok_or_else(|| CoreError::Parse {
                path: path.into(),
                line: 0,
                msg: format!("joint `{name}`: missing parent"),
            })?;
        let child = j
            .children()
            .find(|c| c.has_tag_name("child"))
            .and_then(|c| c.attribute("link"))
            .ok_or_else(|| CoreError::Parse {
                path: path.into(),
                line: 0,
                msg: format!("joint `{name}`: missing child"),
            })?;
        let axis = j
            .children()
            .find(|c| c.has_tag_name("axis"))
            .and_then(|c| c.attribute("xyz"))
            .and_then(parse_vec3)
            .unwrap_or_else(|| Vector3::new(1.0, 0.0, 0.0));
        let limits = j
            .children()
            .find(|c| c.has_tag_name("limit"))
            .map(|l| {
                let get = |a: &str| l.attribute(a).and_then(|v| v.parse().ok());
                (
                    get("lower").unwrap_or(f64::NEG_INFINITY),
                    get("upper").unwrap_or(f64::INFINITY),
                )
            })
            .unwrap_or((f64::NEG_INFINITY, f64::INFINITY));
        if limits.0 > limits.1 {
            return Err(CoreError::Parse {
                path: path.into(),
                line: 0,
                msg: format!("joint `{name}`: lower limit above upper"),
            });
        }
        joints.push(Joint {
            name,
            kind,
            origin: parse_origin(j),
            axis: axis.normalize(),
            limits,
            parent_link: link_index(parent)?,
            child_link: link_index(child)?,
        });
    }

    // Tree check: exactly one root, each link at most one parent joint.
    let mut parent_count = vec![0usize; links.len()];
    for j in &joints {
        parent_count[j.child_link] += 1;
    }
    if parent_count.iter().filter(|&&c| c > 1).count() > 0 {
        return Err(CoreError::Parse {
            path: path.into(),
            line: 0,
            msg: "link has multiple parent joints (not a tree)".into(),
        });
    }
    let roots: Vec<usize> = (0..links.len()).filter(|&i| parent_count[i] == 0).collect();
    if roots.len() != 1 {
        return Err(CoreError::Parse {
            path: path.into(),
            line: 0,
            msg: format!("expected exactly one root link, found {}", roots.len()),
        });
    }
    let root_link = roots[0];

    // Topological order of joints (BFS from root); also rejects cycles.
    let mut ordered = Vec::with_capacity(joints.len());
    let mut frontier = vec![root_link];
    while let Some(link) = frontier.pop() {
        for (ji, j) in joints.iter().enumerate() {
            if j.parent_link == link {
                ordered.push(ji);
                frontier.push(j.child_link);
            }
        }
    }
    if ordered.len() != joints.len() {
        return Err(CoreError::Parse {
            path: path.into(),
            line: 0,
            msg: "joint graph contains a cycle or disconnected joint".into(),
        });
    }
    let joints: Vec<Joint> = ordered.into_iter().map(|i| joints[i].clone()).collect();

    Ok(RobotModel {
        links,
        joints,
        gripper_joints: Vec::new(),
        velocity_norm_limit: 1.0,
        root_link,
    })
}

pub fn load_urdf<P: AsRef<Path>>(path: P) -> Result<RobotModel> {
    let path_str = path.as_ref().display().to_string();
    let text = std::fs::read_to_string(&path).map_err(|e| CoreError::Io {
        path: path_str.clone(),
        source: e,
    })?;
    parse_urdf(&text, &path_str)
}

/// Per-link world poses from the actuated joint vector.
pub fn forward_kinematics(robot: &RobotModel, q: &[f64]) -> Result<Vec<RigidTransform>> {
    let actuated = robot.actuated();
    if q.len() != actuated.len() {
        return Err(CoreError::Invalid(format!(
            "joint vector length {} != dof {}",
            q.len(),
            actuated.len()
        )));
    }
    let mut dof_of_joint = vec![None; robot.joints.len()];
    for (d, &ji) in actuated.iter().enumerate() {
        dof_of_joint[ji] = Some(d);
    }
    let mut poses = vec![RigidTransform::identity(); robot.links.len()];
    for (ji, j) in robot.joints.iter().enumerate() {
        let motion = match (j.kind, dof_of_joint[ji]) {
            (JointKind::Revolute, Some(d)) => RigidTransform {
                rotation: UnitQuaternion::from_axis_angle(
                    &nalgebra::Unit::new_normalize(j.axis),
                    q[d],
                ),
                translation: Vector3::zeros(),
            },
            (JointKind::Prismatic, Some(d)) => RigidTransform {
                rotation: UnitQuaternion::identity(),
                translation: j.axis * q[d],
            },
            _ => RigidTransform::identity(),
        };
        poses[j.child_link] = poses[j.parent_link].compose(&j.origin).compose(&motion);
    }
    Ok(poses)
}

pub const JOINT_GAIN: f64 = 5.0;

/// Tracking law: velocity = gain·(target − current), rescaled so the ℓ2 norm
/// never exceeds `limit`.
pub fn joint_velocity_controller(current: &[f64], target: &[f64], limit: f64) -> Vec<f64> {
    let mut v: Vec<f64> = current
        .iter()
        .zip(target)
        .map(|(&c, &t)| JOINT_GAIN * (t - c))
        .collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > limit {
        let s = limit / norm;
        for x in &mut v {
            *x *= s;
        }
    }
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IkMode {
    /// Full 6-DOF pose tracking.
    Spatial,
    /// Planar tasks: only x, y, and yaw are servoed; z and the remaining
    /// orientation stay wherever the kinematics put them.
    Planar,
}

#[derive(Debug, Clone)]
pub struct IkStep {
    pub joint_target: Vec<f64>,
    pub limit_clamped: bool,
    /// Task-space error norm before the step.
    pub error: f64,
}

const IK_DAMPING: f64 = 0.05;
const FD_EPS: f64 = 1e-6;

fn task_error(current: &RigidTransform, target: &RigidTransform, mode: IkMode) -> DVector<f64> {
    match mode {
        IkMode::Spatial => {
            let dp = target.translation - current.translation;
            let dr = target.rotation * current.rotation.inverse();
            let w = dr.scaled_axis();
            DVector::from_vec(vec![dp.x, dp.y, dp.z, w.x, w.y, w.z])
        }
        IkMode::Planar => {
            let dp = target.translation - current.translation;
            let dr = target.rotation * current.rotation.inverse();
            let yaw = dr.scaled_axis().z;
            DVector::from_vec(vec![dp.x, dp.y, yaw])
        }
    }
}

/// One damped least-squares differential-IK step toward an end-effector pose:
/// numeric Jacobian, dq = Jᵀ(JJᵀ + λ²I)⁻¹e, result clamped to joint limits.
pub fn resolved_rate_step(
    robot: &RobotModel,
    joints: &[f64],
    ee_link: usize,
    ee_target: &RigidTransform,
    mode: IkMode,
) -> Result<IkStep> {
    if !ee_target.translation.iter().all(|v| v.is_finite()) {
        return Err(CoreError::Invalid("non-finite IK target".into()));
    }
    let current = forward_kinematics(robot, joints)?[ee_link];
    let e = task_error(&current, ee_target, mode);
    let m = e.len();
    let n = joints.len();

    let mut jac = DMatrix::zeros(m, n);
    for d in 0..n {
        let mut qp = joints.to_vec();
        let mut qm = joints.to_vec();
        qp[d] += FD_EPS;
        qm[d] -= FD_EPS;
        let pp = forward_kinematics(robot, &qp)?[ee_link];
        let pm = forward_kinematics(robot, &qm)?[ee_link];
        // Column = d(task error)/dq_d via central difference of the pose
        // expressed as the same error coordinates about `current`.
        let ep = task_error(&current, &pp, mode);
        let em = task_error(&current, &pm, mode);
        for r in 0..m {
            jac[(r, d)] = (ep[r] - em[r]) / (2.0 * FD_EPS);
        }
    }

    let jjt = &jac * jac.transpose() + DMatrix::identity(m, m) * (IK_DAMPING * IK_DAMPING);
    let rhs = jjt
        .lu()
        .solve(&e)
        .ok_or_else(|| CoreError::Invalid("singular damped system".into()))?;
    let dq = jac.transpose() * rhs;
    let raw: Vec<f64> = joints.iter().zip(dq.iter()).map(|(&q, &d)| q + d).collect();
    let (joint_target, limit_clamped) = robot.clamp_to_limits(&raw);
    Ok(IkStep {
        joint_target,
        limit_clamped,
        error: e.norm(),
    })
}
