//! Prismatic and revolute joint transforms, their inverses and the canonical
//! sign convention.
//!
//! `cargo run --example joint_transforms`

use std::f64::consts::FRAC_PI_2;

use articulation::joint::{canonicalize, JointModel, MotionSequence, Vec3};

fn main() -> articulation::Result<()> {
    let drawer = JointModel::prismatic(Vec3::new(0.0, -1.0, 0.0))?;
    let t = drawer.transform(0.25);
    println!("drawer direction {:?}", drawer.direction().as_slice());
    println!("origin moved by 0.25: {:?}", t.apply(&Vec3::zeros()).as_slice());

    // axis along z through (1, 0, 0); a quarter turn sends (2, 0, 0) to (1, 1, 0)
    let door = JointModel::revolute(Vec3::z(), Vec3::new(1.0, 0.0, 0.0))?;
    let r = door.transform(FRAC_PI_2);
    let p = Vec3::new(2.0, 0.0, 0.5);
    println!("door: {:?} -> {:?}", p.as_slice(), r.apply(&p).as_slice());
    let back = r.inverse().apply(&r.apply(&p));
    println!("round trip error {:.2e}", (back - p).norm());
    println!("axis point stays put: {:?}", r.apply(&Vec3::new(1.0, 0.0, 3.0)).as_slice());

    // the same physical motion can be written with either axis sign
    let motions = MotionSequence::new(vec![0.0, 0.1, 0.2])?;
    let (j, m) = canonicalize(door, motions);
    println!("canonical: direction {:?}, motions {:?}", j.direction().as_slice(), m.as_slice());
    Ok(())
}
