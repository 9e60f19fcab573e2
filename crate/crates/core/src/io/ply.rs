//! Binary little-endian PLY in the common splat layout: `x y z`,
//! `f_dc_0..2` (degree-0 SH), `opacity` (logit), `scale_0..2` (log),
//! `rot_0..3` (`w x y z`), all `float`.

use std::io::{BufRead, Write};

use crate::cloud::GaussianCloud;
use crate::error::{Error, Result};
use crate::math::{Quat, Vec3};

/// Degree-0 spherical-harmonic basis constant.
pub const SH_C0: f64 = 0.28209479177387814;

const FIELDS: [&str; 14] = [
    "x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1",
    "rot_2", "rot_3",
];

pub fn write_ply(cloud: &GaussianCloud, mut w: impl Write) -> Result<()> {
    let mut header = format!("ply\nformat binary_little_endian 1.0\nelement vertex {}\n", cloud.len());
    for f in FIELDS {
        header.push_str(&format!("property float {f}\n"));
    }
    header.push_str("end_header\n");
    w.write_all(header.as_bytes())?;
    let mut buf = Vec::with_capacity(cloud.len() * FIELDS.len() * 4);
    for i in 0..cloud.len() {
        let c = cloud.colors[i].map(|c| (c - 0.5) / SH_C0);
        let vals = [
            cloud.means[i][0],
            cloud.means[i][1],
            cloud.means[i][2],
            c[0],
            c[1],
            c[2],
            cloud.opacity_logits[i],
            cloud.log_scales[i][0],
            cloud.log_scales[i][1],
            cloud.log_scales[i][2],
            cloud.rotations[i][0],
            cloud.rotations[i][1],
            cloud.rotations[i][2],
            cloud.rotations[i][3],
        ];
        for v in vals {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

fn read_header_line(r: &mut impl BufRead) -> Result<String> {
    let mut line = String::new();
    if r.read_line(&mut line)? == 0 {
        return Err(Error::parse("header", "unexpected end of file before end_header"));
    }
    Ok(line.trim_end_matches(['\n', '\r']).to_string())
}

/// Reads a cloud written by [`write_ply`] or any splat PLY whose `vertex`
/// element carries the required float properties (extra float properties are
/// skipped). Colors are clamped to `[0, 1]` and quaternions normalized.
pub fn read_ply(mut r: impl BufRead) -> Result<GaussianCloud> {
    if read_header_line(&mut r)? != "ply" {
        return Err(Error::parse("magic", "file does not start with \"ply\""));
    }
    let mut count: Option<usize> = None;
    let mut props: Vec<String> = Vec::new();
    let mut current: Option<String> = None;
    loop {
        let line = read_header_line(&mut r)?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["end_header"] => break,
            ["format", "binary_little_endian", "1.0"] => {}
            ["format", other, ..] => {
                return Err(Error::parse("format", format!("unsupported format {other}")))
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, n] => {
                if *name == "vertex" {
                    count = Some(n.parse().map_err(|_| Error::parse("element vertex", format!("bad count {n}")))?);
                } else if n.parse::<usize>().map_or(true, |n| n != 0) {
                    return Err(Error::parse(format!("element {name}"), "only the vertex element is supported"));
                }
                current = Some(name.to_string());
            }
            ["property", ty, name] => {
                if current.as_deref() != Some("vertex") {
                    continue;
                }
                if *ty != "float" && *ty != "float32" {
                    return Err(Error::parse(format!("property {name}"), format!("type {ty}, expected float")));
                }
                if props.iter().any(|p| p == name) {
                    return Err(Error::parse(format!("property {name}"), "duplicate property"));
                }
                props.push(name.to_string());
            }
            _ => return Err(Error::parse("header", format!("unrecognized line {line:?}"))),
        }
    }
    let n = count.ok_or_else(|| Error::parse("element vertex", "missing"))?;
    let mut col = [0usize; FIELDS.len()];
    for (k, f) in FIELDS.iter().enumerate() {
        col[k] = props
            .iter()
            .position(|p| p == f)
            .ok_or_else(|| Error::parse(format!("property {f}"), "required property missing"))?;
    }
    let stride = props.len();
    let mut data = vec![0u8; n * stride * 4];
    r.read_exact(&mut data)
        .map_err(|_| Error::parse("element vertex", format!("fewer than {n} vertices of data")))?;
    if r.read(&mut [0u8; 1])? != 0 {
        return Err(Error::parse("element vertex", "trailing bytes after vertex data"));
    }
    let mut cloud = GaussianCloud::empty();
    for i in 0..n {
        let row = &data[i * stride * 4..(i + 1) * stride * 4];
        let v = |k: usize| {
            let o = col[k] * 4;
            f32::from_le_bytes(row[o..o + 4].try_into().unwrap()) as f64
        };
        let vals: Vec<f64> = (0..FIELDS.len()).map(v).collect();
        if let Some(k) = vals.iter().position(|x| !x.is_finite()) {
            return Err(Error::parse(format!("vertex {i}"), format!("non-finite {}", FIELDS[k])));
        }
        let q = Quat::new(vals[10], vals[11], vals[12], vals[13]);
        if q.norm() == 0.0 {
            return Err(Error::parse(format!("vertex {i}"), "zero quaternion"));
        }
        cloud.means.push(Vec3::new(vals[0], vals[1], vals[2]));
        cloud.colors.push(Vec3::new(vals[3], vals[4], vals[5]).map(|c| (c * SH_C0 + 0.5).clamp(0.0, 1.0)));
        cloud.opacity_logits.push(vals[6]);
        cloud.log_scales.push(Vec3::new(vals[7], vals[8], vals[9]));
        cloud.rotations.push(q.normalize());
        cloud.ids.push(i as u64);
        cloud.grad_accum.push(0.0);
        cloud.grad_count.push(0);
    }
    cloud.next_id = n as u64;
    Ok(cloud)
}
