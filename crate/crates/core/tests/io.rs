mod common;

use common::*;
use mvgs_core::config::RunConfig;
use mvgs_core::io::{read_ply, write_ply, Checkpoint, SH_C0};
use mvgs_core::math::Vec3;
use mvgs_core::optim::{LearningRates, OptimizerState};
use mvgs_core::regularizers::LossWeights;
use mvgs_core::surface::SurfaceCloud;
use mvgs_core::{init_cloud, GaussianCloud};

fn ply_bytes(cloud: &GaussianCloud) -> Vec<u8> {
    let mut buf = Vec::new();
    write_ply(cloud, &mut buf).unwrap();
    buf
}

#[test]
fn ply_round_trip_within_f32() {
    let cloud = random_scene(4, 200);
    let back = read_ply(&ply_bytes(&cloud)[..]).unwrap();
    assert_eq!(back.len(), 200);
    for i in 0..200 {
        let tol = |x: f64| 1e-6 * x.abs().max(1.0);
        for k in 0..3 {
            assert!((back.means[i][k] - cloud.means[i][k]).abs() <= tol(cloud.means[i][k]));
            assert!((back.log_scales[i][k] - cloud.log_scales[i][k]).abs() <= tol(cloud.log_scales[i][k]));
            assert!((back.colors[i][k] - cloud.colors[i][k]).abs() <= 1e-6);
        }
        assert!((back.opacity_logits[i] - cloud.opacity_logits[i]).abs() <= tol(cloud.opacity_logits[i]));
        assert!((back.rotations[i] - cloud.rotations[i]).norm() <= 1e-6);
    }
}

#[test]
fn ply_header_and_sh_mapping() {
    let mut cloud = random_scene(5, 7);
    cloud.colors[0] = Vec3::repeat(0.5);
    let bytes = ply_bytes(&cloud);
    let text = String::from_utf8_lossy(&bytes);
    let header = &text[..text.find("end_header\n").unwrap()];
    assert!(header.contains("format binary_little_endian 1.0"));
    assert!(header.contains("element vertex 7\n"));
    for p in ["x", "f_dc_0", "opacity", "scale_2", "rot_0", "rot_3"] {
        assert!(header.contains(&format!("property float {p}\n")), "{p}");
    }
    let body = &bytes[bytes.len() - 7 * 14 * 4..];
    let f_dc0 = f32::from_le_bytes(body[12..16].try_into().unwrap());
    assert_eq!(f_dc0, 0.0);
    let f_dc1 = f32::from_le_bytes(body[14 * 4 + 16..14 * 4 + 20].try_into().unwrap());
    assert!((f_dc1 as f64 - (cloud.colors[1][1] - 0.5) / SH_C0).abs() < 1e-6);
}

#[test]
fn ply_errors_name_the_element() {
    let good = ply_bytes(&random_scene(6, 3));
    let text = String::from_utf8_lossy(&good).to_string();

    let missing = text.replacen("property float rot_3\n", "", 1);
    let err = read_ply(missing.as_bytes()).unwrap_err().to_string();
    assert!(err.contains("rot_3"), "{err}");

    let wrong_type = text.replacen("property float opacity", "property uchar opacity", 1);
    let err = read_ply(wrong_type.as_bytes()).unwrap_err().to_string();
    assert!(err.contains("opacity"), "{err}");

    let ascii = text.replacen("binary_little_endian", "ascii", 1);
    assert!(read_ply(ascii.as_bytes()).unwrap_err().to_string().contains("format"));

    let err = read_ply(&good[..good.len() - 5]).unwrap_err().to_string();
    assert!(err.contains("vertex"), "{err}");
    assert!(read_ply(&b"plx\n"[..]).is_err());
    let face = text.replacen("end_header", "element face 2\nproperty list uchar int vertex_indices\nend_header", 1);
    assert!(read_ply(face.as_bytes()).unwrap_err().to_string().contains("face"));
}

fn sample_checkpoint() -> Checkpoint {
    let cloud = init_cloud(50, 1.0, 2).unwrap();
    let mut opt = OptimizerState::new(50, LearningRates::default(), 100);
    opt.groups[0].m[7] = 0.25;
    opt.groups[4].v[3] = 1e-9;
    opt.eta.m[1] = -0.5;
    Checkpoint {
        step: 1234,
        cloud,
        moments: opt.groups.clone(),
        eta_moments: opt.eta.clone(),
        optimizer_step: 1234,
        weights: LossWeights { eta: [0.1, -0.2, 0.3] },
        surface: Some(SurfaceCloud::new(vec![Vec3::new(1.0, 2.0, 3.0), Vec3::zeros()], 1200).unwrap()),
        config: RunConfig::default().to_toml(),
    }
}

#[test]
fn checkpoint_round_trip_exact() {
    let ck = sample_checkpoint();
    let bytes = ck.to_bytes();
    assert_eq!(&bytes[..9], b"MVGS-CKPT");
    assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), ck);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.ckpt");
    ck.save(&path).unwrap();
    assert_eq!(Checkpoint::load(&path).unwrap(), ck);

    let no_surface = Checkpoint {
        surface: None,
        ..ck
    };
    assert_eq!(Checkpoint::from_bytes(&no_surface.to_bytes()).unwrap(), no_surface);
}

#[test]
fn checkpoint_rejects_corruption() {
    let bytes = sample_checkpoint().to_bytes();
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() / 2]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(Checkpoint::from_bytes(&bad).unwrap_err().to_string().contains("magic"));
    let mut bad = bytes.clone();
    bad[9] = 9;
    assert!(Checkpoint::from_bytes(&bad).unwrap_err().to_string().contains("version"));
    assert!(Checkpoint::load(std::path::Path::new("/nonexistent/x.ckpt")).is_err());
}
