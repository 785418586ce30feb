//! Plain-text dump of a problem, one block or term per line.
//!
//! ```text
//! BAPROBLEM 1
//! huber <px>
//! group <idx> <focal> <cx> <cy> <k1> <refine 0|1> <focal_min> <focal_max>
//! camera <idx> <view_id> <group> <qw> <qx> <qy> <qz> <cx> <cy> <cz> <fixed_rot> <fixed_x> <fixed_y> <fixed_z>
//! point <idx> <track_id> <x> <y> <z> <fixed>
//! obs <camera> <point> <u> <v>
//! tprior <camera> <x> <y> <weight>
//! rprior <camera_i> <camera_j> <yaw_ij> <weight>
//! mprior <camera_i> <camera_j> <dx> <dy> <dz> <weight>
//! ```

use std::io::{self, Write};

use nalgebra::UnitQuaternion;

use super::BaProblem;
use crate::geometry::yaw_of;

fn flag(b: bool) -> u8 {
    b as u8
}

pub fn write_problem<W: Write>(problem: &BaProblem, mut out: W) -> io::Result<()> {
    writeln!(out, "BAPROBLEM 1")?;
    writeln!(out, "huber {}", problem.huber_px)?;
    for (i, g) in problem.groups.iter().enumerate() {
        let k = &g.intrinsics;
        writeln!(
            out,
            "group {i} {} {} {} {} {} {} {}",
            k.focal,
            k.cx,
            k.cy,
            k.k1,
            flag(g.refine_focal),
            g.focal_min,
            g.focal_max
        )?;
    }
    for (i, c) in problem.cameras.iter().enumerate() {
        let q = UnitQuaternion::from_matrix(&c.rotation);
        writeln!(
            out,
            "camera {i} {} {} {} {} {} {} {} {} {} {} {} {} {}",
            c.view_id,
            c.group,
            q.w,
            q.i,
            q.j,
            q.k,
            c.center.x,
            c.center.y,
            c.center.z,
            flag(c.fixed_rotation),
            flag(c.fixed_center[0]),
            flag(c.fixed_center[1]),
            flag(c.fixed_center[2])
        )?;
    }
    for (i, p) in problem.points.iter().enumerate() {
        writeln!(
            out,
            "point {i} {} {} {} {} {}",
            p.track_id,
            p.position.x,
            p.position.y,
            p.position.z,
            flag(p.fixed)
        )?;
    }
    for o in &problem.observations {
        writeln!(
            out,
            "obs {} {} {} {}",
            o.camera, o.point, o.pixel.x, o.pixel.y
        )?;
    }
    for t in &problem.translation_priors {
        writeln!(
            out,
            "tprior {} {} {} {}",
            t.camera, t.target.x, t.target.y, t.weight
        )?;
    }
    for t in &problem.rotation_priors {
        writeln!(
            out,
            "rprior {} {} {} {}",
            t.camera_i,
            t.camera_j,
            yaw_of(&t.target),
            t.weight
        )?;
    }
    for t in &problem.motion_priors {
        writeln!(
            out,
            "mprior {} {} {} {} {} {}",
            t.camera_i, t.camera_j, t.target.x, t.target.y, t.target.z, t.weight
        )?;
    }
    Ok(())
}
