//! Parametric surface samplers, all uniform by surface area.
//!
//! Parameter layouts (`ShapeSpec::params`):
//! - sphere: `[radius]`
//! - box: `[ex, ey, ez]` full side lengths
//! - cylinder: `[radius, height]`
//! - torus: `[major, minor]`
//! - cone: `[radius, height]`
//! - capsule: `[radius, cylinder_height]`
//! - mug: `[body_radius, body_height, handle_major, handle_minor]`
//! - hammer: `[handle_radius, handle_length, head_x, head_y, head_z]`

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::ShapeClass;
use crate::{Error, Result};

pub(super) fn sample_params(class: ShapeClass, rng: &mut ChaCha8Rng) -> Vec<f64> {
    match class {
        ShapeClass::Sphere => vec![rng.gen_range(0.5..1.5)],
        ShapeClass::Box => vec![
            rng.gen_range(0.6..1.6),
            rng.gen_range(0.6..1.6),
            rng.gen_range(0.6..1.6),
        ],
        ShapeClass::Cylinder => vec![rng.gen_range(0.3..0.7), rng.gen_range(1.0..2.0)],
        ShapeClass::Torus => {
            let major = rng.gen_range(0.6..1.0);
            let minor = rng.gen_range(0.15..0.35) * major;
            vec![major, minor]
        }
        ShapeClass::Cone => vec![rng.gen_range(0.4..0.8), rng.gen_range(1.0..1.8)],
        ShapeClass::Capsule => vec![rng.gen_range(0.25..0.5), rng.gen_range(0.8..1.6)],
        ShapeClass::Mug => {
            let body_r = rng.gen_range(0.35..0.55);
            let body_h = rng.gen_range(0.9..1.4);
            let handle_major = rng.gen_range(0.25..0.35) * body_h;
            let handle_minor = rng.gen_range(0.05..0.09);
            vec![body_r, body_h, handle_major, handle_minor]
        }
        ShapeClass::Hammer => vec![
            rng.gen_range(0.08..0.14),
            rng.gen_range(1.2..1.8),
            rng.gen_range(0.5..0.8),
            rng.gen_range(0.18..0.3),
            rng.gen_range(0.18..0.3),
        ],
    }
}

/// One surface point plus its part label (0 for single-part shapes).
pub(super) fn sample_point(
    class: ShapeClass,
    params: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<([f64; 3], u32)> {
    let need = |n: usize| -> Result<()> {
        if params.len() != n {
            Err(Error::invalid(format!(
                "{} expects {n} parameters, got {}",
                class.name(),
                params.len()
            )))
        } else {
            Ok(())
        }
    };
    match class {
        ShapeClass::Sphere => {
            need(1)?;
            Ok((sphere_point(params[0], rng), 0))
        }
        ShapeClass::Box => {
            need(3)?;
            Ok((box_point(params[0], params[1], params[2], rng), 0))
        }
        ShapeClass::Cylinder => {
            need(2)?;
            Ok((cylinder_point(params[0], params[1], true, true, rng), 0))
        }
        ShapeClass::Torus => {
            need(2)?;
            Ok((torus_point(params[0], params[1], rng), 0))
        }
        ShapeClass::Cone => {
            need(2)?;
            Ok((cone_point(params[0], params[1], rng), 0))
        }
        ShapeClass::Capsule => {
            need(2)?;
            Ok((capsule_point(params[0], params[1], rng), 0))
        }
        ShapeClass::Mug => {
            need(4)?;
            Ok(mug_point(params[0], params[1], params[2], params[3], rng))
        }
        ShapeClass::Hammer => {
            need(5)?;
            Ok(hammer_point(
                params[0], params[1], params[2], params[3], params[4], rng,
            ))
        }
    }
}

fn sphere_point(radius: f64, rng: &mut ChaCha8Rng) -> [f64; 3] {
    // Marsaglia rejection: uniform direction on the unit sphere.
    loop {
        let u: f64 = rng.gen_range(-1.0..1.0);
        let v: f64 = rng.gen_range(-1.0..1.0);
        let s = u * u + v * v;
        if s < 1.0 {
            let f = 2.0 * (1.0 - s).sqrt();
            return [radius * u * f, radius * v * f, radius * (1.0 - 2.0 * s)];
        }
    }
}

fn box_point(ex: f64, ey: f64, ez: f64, rng: &mut ChaCha8Rng) -> [f64; 3] {
    // Six faces weighted by area; uniform within the chosen face.
    let areas = [ey * ez, ey * ez, ex * ez, ex * ez, ex * ey, ex * ey];
    let face = pick_weighted(&areas, rng);
    let (hx, hy, hz) = (ex / 2.0, ey / 2.0, ez / 2.0);
    let a: f64 = rng.gen_range(-1.0..1.0);
    let b: f64 = rng.gen_range(-1.0..1.0);
    match face {
        0 => [hx, a * hy, b * hz],
        1 => [-hx, a * hy, b * hz],
        2 => [a * hx, hy, b * hz],
        3 => [a * hx, -hy, b * hz],
        4 => [a * hx, b * hy, hz],
        _ => [a * hx, b * hy, -hz],
    }
}

fn cylinder_point(r: f64, h: f64, top_cap: bool, bottom_cap: bool, rng: &mut ChaCha8Rng) -> [f64; 3] {
    let side = 2.0 * PI * r * h;
    let cap = PI * r * r;
    let areas = [
        side,
        if top_cap { cap } else { 0.0 },
        if bottom_cap { cap } else { 0.0 },
    ];
    match pick_weighted(&areas, rng) {
        0 => {
            let theta = rng.gen_range(0.0..2.0 * PI);
            let z = rng.gen_range(-0.5..0.5) * h;
            [r * theta.cos(), r * theta.sin(), z]
        }
        cap_idx => {
            let rho = r * rng.gen::<f64>().sqrt();
            let theta = rng.gen_range(0.0..2.0 * PI);
            let z = if cap_idx == 1 { h / 2.0 } else { -h / 2.0 };
            [rho * theta.cos(), rho * theta.sin(), z]
        }
    }
}

fn torus_point(major: f64, minor: f64, rng: &mut ChaCha8Rng) -> [f64; 3] {
    let theta = torus_tube_angle(major, minor, rng);
    let phi = rng.gen_range(0.0..2.0 * PI);
    let w = major + minor * theta.cos();
    [w * phi.cos(), w * phi.sin(), minor * theta.sin()]
}

/// Tube angle with density proportional to (R + r cos t): rejection keeps
/// area-uniformity over the curved surface.
fn torus_tube_angle(major: f64, minor: f64, rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let t = rng.gen_range(0.0..2.0 * PI);
        let accept = (major + minor * t.cos()) / (major + minor);
        if rng.gen::<f64>() < accept {
            return t;
        }
    }
}

fn cone_point(r: f64, h: f64, rng: &mut ChaCha8Rng) -> [f64; 3] {
    // Apex at (0,0,h/2), base disc at z = -h/2.
    let slant = PI * r * (r * r + h * h).sqrt();
    let base = PI * r * r;
    let theta = rng.gen_range(0.0..2.0 * PI);
    if pick_weighted(&[slant, base], rng) == 0 {
        // Lateral: area grows linearly from the apex, so t = sqrt(u).
        let t = rng.gen::<f64>().sqrt();
        [
            t * r * theta.cos(),
            t * r * theta.sin(),
            h / 2.0 - t * h,
        ]
    } else {
        let rho = r * rng.gen::<f64>().sqrt();
        [rho * theta.cos(), rho * theta.sin(), -h / 2.0]
    }
}

fn capsule_point(r: f64, h: f64, rng: &mut ChaCha8Rng) -> [f64; 3] {
    let side = 2.0 * PI * r * h;
    let caps = 4.0 * PI * r * r;
    if pick_weighted(&[side, caps], rng) == 0 {
        let theta = rng.gen_range(0.0..2.0 * PI);
        let z = rng.gen_range(-0.5..0.5) * h;
        [r * theta.cos(), r * theta.sin(), z]
    } else {
        // Uniform sphere point, shifted into the matching hemisphere.
        let p = sphere_point(r, rng);
        let shift = if p[2] >= 0.0 { h / 2.0 } else { -h / 2.0 };
        [p[0], p[1], p[2] + shift]
    }
}

fn mug_point(
    body_r: f64,
    body_h: f64,
    handle_major: f64,
    handle_minor: f64,
    rng: &mut ChaCha8Rng,
) -> ([f64; 3], u32) {
    // Body: open-top cylinder. Handle: outer half-torus in the x-z plane,
    // ring centered on the body wall.
    let body_area = 2.0 * PI * body_r * body_h + PI * body_r * body_r;
    let handle_area = 2.0 * PI * PI * handle_major * handle_minor;
    if pick_weighted(&[body_area, handle_area], rng) == 0 {
        (cylinder_point(body_r, body_h, false, true, rng), 0)
    } else {
        let theta = torus_tube_angle(handle_major, handle_minor, rng);
        let phi = rng.gen_range(-PI / 2.0..PI / 2.0);
        let w = handle_major + handle_minor * theta.cos();
        (
            [
                body_r + w * phi.cos(),
                handle_minor * theta.sin(),
                w * phi.sin(),
            ],
            1,
        )
    }
}

fn hammer_point(
    handle_r: f64,
    handle_len: f64,
    head_x: f64,
    head_y: f64,
    head_z: f64,
    rng: &mut ChaCha8Rng,
) -> ([f64; 3], u32) {
    let handle_area = 2.0 * PI * handle_r * handle_len + 2.0 * PI * handle_r * handle_r;
    let head_area = 2.0 * (head_x * head_y + head_y * head_z + head_x * head_z);
    if pick_weighted(&[handle_area, head_area], rng) == 0 {
        (cylinder_point(handle_r, handle_len, false, true, rng), 0)
    } else {
        let p = box_point(head_x, head_y, head_z, rng);
        // Head sits on top of the handle.
        ([p[0], p[1], p[2] + handle_len / 2.0 + head_z / 2.0], 1)
    }
}

fn pick_weighted(weights: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut draw = rng.gen::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if draw < *w {
            return i;
        }
        draw -= w;
    }
    weights.len() - 1
}
