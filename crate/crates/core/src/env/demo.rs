//! Self-contained demo assets: a 5-DOF gantry gripper (three prismatic slides
//! plus two prismatic fingers) and cube scenarios for pick-and-place and
//! planar pushing. Everything is generated programmatically so tests and the
//! CLI need no checked-in binary assets.

use super::scenario::{
    ObjectConfig, ObjectSource, PlanarPose, PlanarRanges, RobotConfig, Scenario, SuccessSpec,
    TaskKind, ThetaRange,
};
use crate::engine::SimParams;
use crate::error::{CoreError, Result};
use crate::geom::OrientedBox;
use crate::mesh::TriangleMesh;
use std::path::{Path, PathBuf};

pub const GANTRY_URDF: &str = r#"<robot name="gantry">
  <link name="base"/>
  <link name="gantry_x"/>
  <link name="gantry_y"/>
  <link name="palm"/>
  <link name="finger_l">
    <collision><geometry><mesh filename="finger.obj"/></geometry></collision>
  </link>
  <link name="finger_r">
    <collision><geometry><mesh filename="finger.obj"/></geometry></collision>
  </link>
  <joint name="slide_x" type="prismatic">
    <parent link="base"/><child link="gantry_x"/>
    <origin xyz="0 0 0.5"/><axis xyz="1 0 0"/>
    <limit lower="-0.5" upper="0.5"/>
  </joint>
  <joint name="slide_y" type="prismatic">
    <parent link="gantry_x"/><child link="gantry_y"/>
    <axis xyz="0 1 0"/><limit lower="-0.5" upper="0.5"/>
  </joint>
  <joint name="slide_z" type="prismatic">
    <parent link="gantry_y"/><child link="palm"/>
    <axis xyz="0 0 1"/><limit lower="-0.5" upper="0.0"/>
  </joint>
  <joint name="finger_l_joint" type="prismatic">
    <parent link="palm"/><child link="finger_l"/>
    <origin xyz="0 0 -0.05"/><axis xyz="0 1 0"/>
    <limit lower="-0.04" upper="0.04"/>
  </joint>
  <joint name="finger_r_joint" type="prismatic">
    <parent link="palm"/><child link="finger_r"/>
    <origin xyz="0 0 -0.05"/><axis xyz="0 1 0"/>
    <limit lower="-0.04" upper="0.04"/>
  </joint>
</robot>
"#;

fn write_obj(mesh: &TriangleMesh, path: &Path) -> Result<()> {
    let mut text = String::new();
    for v in &mesh.vertices {
        text.push_str(&format!("v {} {} {}\n", v.x, v.y, v.z));
    }
    for t in &mesh.triangles {
        text.push_str(&format!("f {} {} {}\n", t[0] + 1, t[1] + 1, t[2] + 1));
    }
    std::fs::write(path, text).map_err(|e| CoreError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn gantry_robot_config() -> RobotConfig {
    RobotConfig {
        urdf: "gantry.urdf".into(),
        ee_link: "palm".into(),
        // Palm height is 0.5 + slide_z; fingers hang 0.05 below the palm.
        home_joints: vec![0.0, 0.0, -0.2, 0.0225, -0.0225],
        velocity_norm_limit: 0.5,
        finger_links: vec!["finger_l".into(), "finger_r".into()],
        gripper_joints: vec![3, 4],
        gripper_signs: vec![1.0, -1.0],
        max_opening: 0.045,
        closing_speed: 0.04,
        // Freeze at the first firm contact; closing further extrudes the
        // cube out of the parallel jaws.
        force_threshold: 0.5,
        link_mu: 1.5,
    }
}

fn cube_object(center: [f64; 3]) -> ObjectConfig {
    // 3x3x3 particle cube, 2 cm across. The threshold includes face
    // diagonals: axis-only lattices have zero shear stiffness and crumple
    // out of a parallel grip.
    ObjectConfig {
        name: "cube".into(),
        source: ObjectSource::Grid {
            center,
            counts: [3, 3, 3],
            spacing: 0.01,
        },
        total_mass: 0.02,
        connection_threshold: 0.015,
        max_neighbors: 18,
        stiffness: 80.0,
        per_spring_stiffness: None,
        nominal: PlanarPose::identity(),
    }
}

fn demo_sim_params() -> SimParams {
    SimParams {
        substeps: 40,
        // Explicit damping must satisfy c·dt·deg/m < 2 for the lightest
        // particle (0.74 g at degree 18).
        spring_damping: 0.05,
        global_drag: 2.0,
        self_collision_radius: 0.0,
        // Penalty gain dt·k/m must stay below 1 for the light particles or
        // first contact injects velocity instead of pushing out gently.
        contact_stiffness: 500.0,
        ..SimParams::default()
    }
}

/// Pick the cube at (0.1, 0) and place it in a box-shaped region at (0.25, 0).
pub fn pick_place_scenario() -> Scenario {
    Scenario {
        name: "demo-pick-place".into(),
        task: TaskKind::ToyPacking,
        robot: gantry_robot_config(),
        objects: vec![cube_object([0.1, 0.0, 0.012])],
        static_meshes: vec![],
        ground_z: Some(0.0),
        sim: demo_sim_params(),
        horizon_frames: 180,
        cameras: vec![],
        kernels: None,
        color_transform: None,
        success: SuccessSpec::ToyPacking {
            container: OrientedBox::axis_aligned([0.25, 0.0, 0.035], [0.045, 0.045, 0.035]),
            threshold: 24,
            window: 30,
            need: 10,
        },
        randomization: vec![PlanarRanges {
            x: (-0.01, 0.01),
            y: (-0.01, 0.01),
            theta: ThetaRange::Continuous(0.0, 0.0),
        }],
        base_dir: PathBuf::new(),
    }
}

/// Push the cube from (0.1, 0) toward (0.2, 0) with closed fingers.
pub fn push_scenario() -> Scenario {
    Scenario {
        name: "demo-push".into(),
        task: TaskKind::PushT,
        robot: RobotConfig {
            // Fingers at cube height, already closed into a pusher.
            home_joints: vec![0.03, 0.0, -0.44, 0.0, 0.0],
            max_opening: 0.0,
            ..gantry_robot_config()
        },
        objects: vec![cube_object([0.1, 0.0, 0.012])],
        static_meshes: vec![],
        ground_z: Some(0.0),
        sim: demo_sim_params(),
        horizon_frames: 150,
        cameras: vec![],
        kernels: None,
        color_transform: None,
        success: SuccessSpec::PushT {
            goal: PlanarPose { x: 0.1, y: 0.0, theta: 0.0 },
            tol: 5e-4,
            window: 30,
        },
        randomization: vec![PlanarRanges {
            x: (-0.005, 0.005),
            y: (-0.005, 0.005),
            theta: ThetaRange::Continuous(0.0, 0.0),
        }],
        base_dir: PathBuf::new(),
    }
}

/// Write the gantry URDF, finger mesh, and both scenario files into `dir`.
/// Returns the pick-place and push scenario paths.
pub fn write_demo_assets<P: AsRef<Path>>(dir: P) -> Result<(PathBuf, PathBuf)> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| CoreError::Io {
        path: dir.display().to_string(),
        source: e,
    })?;
    std::fs::write(dir.join("gantry.urdf"), GANTRY_URDF).map_err(|e| CoreError::Io {
        path: dir.join("gantry.urdf").display().to_string(),
        source: e,
    })?;
    // Jaws wide enough in x to cover the whole cube so it squeezes uniformly
    // instead of splaying out of a narrow pinch.
    let finger = TriangleMesh::box_mesh([0.0, 0.0, 0.0], [0.02, 0.004, 0.03], "finger");
    write_obj(&finger, &dir.join("finger.obj"))?;

    let mut pick = pick_place_scenario();
    pick.base_dir = dir.to_path_buf();
    let pick_path = dir.join("pick_place.json");
    pick.save(&pick_path)?;

    let mut push = push_scenario();
    push.base_dir = dir.to_path_buf();
    let push_path = dir.join("push.json");
    push.save(&push_path)?;

    Ok((pick_path, push_path))
}

/// The scripted pick-and-place controller matched to [`pick_place_scenario`].
pub fn pick_place_policy(noise_sigma: f64) -> super::policy::ScriptedPickPlace {
    super::policy::ScriptedPickPlace::new(
        [0.1, 0.0, 0.0],
        [0.25, 0.0, 0.0],
        0.165,
        0.062,
        25,
        noise_sigma,
    )
}

/// The scripted pusher matched to [`push_scenario`].
pub fn push_policy(noise_sigma: f64) -> super::policy::ScriptedPush {
    super::policy::ScriptedPush::new([0.03, 0.0], [0.22, 0.0], 100, noise_sigma)
}
