//! Binary wire format shared with the remote guidance worker.
//!
//! Every message travels in a frame: `u32` little-endian payload length,
//! then the payload. All integers and floats are little-endian; strings are a
//! `u32` byte length followed by UTF-8.
//!
//! Request payload: `"MVGS"`, version `u32`, prompt, negative prompt,
//! `n_views u32`, then per view `height u32`, `width u32`, azimuth `f32`
//! (degrees), elevation `f32` (degrees), camera-to-world `16 × f32`
//! (row-major) and `height·width·3 × f32` RGB (row-major); then guidance
//! scale `f32`, `t_min f32`, `t_max f32`, seed `u64`.
//!
//! Response payload: `"MVGS"`, version `u32`, status `u32`, loss `f64`,
//! `n_views u32`, per view `height u32`, `width u32`, `height·width·3 × f32`
//! gradient; then a diagnostic string (possibly empty).

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::io::bytes::{ByteReader, ByteWriter};

pub const MAGIC: [u8; 4] = *b"MVGS";
pub const VERSION: u32 = 1;
/// Upper bound on accepted frame payloads.
pub const MAX_FRAME: usize = 1 << 30;

pub const STATUS_OK: u32 = 0;
pub const STATUS_MALFORMED: u32 = 1;
pub const STATUS_MODEL: u32 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct WireView {
    pub height: u32,
    pub width: u32,
    pub azimuth_deg: f32,
    pub elevation_deg: f32,
    pub camera_to_world: [f32; 16],
    pub image: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceRequest {
    pub prompt: String,
    pub negative_prompt: String,
    pub views: Vec<WireView>,
    pub guidance_scale: f32,
    pub t_min: f32,
    pub t_max: f32,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WireGradient {
    pub height: u32,
    pub width: u32,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceResponse {
    pub status: u32,
    pub loss: f64,
    pub grads: Vec<WireGradient>,
    pub diagnostic: String,
}

fn header(w: &mut ByteWriter) {
    w.bytes(&MAGIC);
    w.u32(VERSION);
}

fn check_header(r: &mut ByteReader<'_>) -> Result<()> {
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::parse("magic", "expected \"MVGS\""));
    }
    let v = r.u32("version")?;
    if v != VERSION {
        return Err(Error::parse("version", format!("unsupported version {v} (expected {VERSION})")));
    }
    Ok(())
}

fn pixel_floats(h: u32, w: u32, what: &str) -> Result<usize> {
    (h as usize)
        .checked_mul(w as usize)
        .and_then(|p| p.checked_mul(3))
        .filter(|n| *n <= MAX_FRAME / 4)
        .ok_or_else(|| Error::parse(what, format!("image size {h}x{w} too large")))
}

pub fn encode_request(req: &GuidanceRequest) -> Result<Vec<u8>> {
    let mut w = ByteWriter::default();
    header(&mut w);
    w.str(&req.prompt);
    w.str(&req.negative_prompt);
    w.u32(req.views.len() as u32);
    for (i, v) in req.views.iter().enumerate() {
        if v.image.len() != v.height as usize * v.width as usize * 3 {
            return Err(Error::Shape {
                what: "request view image",
                expected: v.height as usize * v.width as usize * 3,
                actual: v.image.len(),
            });
        }
        if v.height != req.views[0].height || v.width != req.views[0].width {
            return Err(Error::invalid(format!("view {i} size differs from view 0")));
        }
        w.u32(v.height);
        w.u32(v.width);
        w.f32(v.azimuth_deg);
        w.f32(v.elevation_deg);
        v.camera_to_world.iter().for_each(|x| w.f32(*x));
        v.image.iter().for_each(|x| w.f32(*x));
    }
    w.f32(req.guidance_scale);
    w.f32(req.t_min);
    w.f32(req.t_max);
    w.u64(req.seed);
    Ok(w.0)
}

pub fn decode_request(buf: &[u8]) -> Result<GuidanceRequest> {
    let mut r = ByteReader::new(buf);
    check_header(&mut r)?;
    let prompt = r.str("prompt")?;
    let negative_prompt = r.str("negative_prompt")?;
    let n = r.u32("n_views")?;
    let mut views = Vec::new();
    for _ in 0..n {
        let height = r.u32("view height")?;
        let width = r.u32("view width")?;
        let azimuth_deg = r.f32("azimuth")?;
        let elevation_deg = r.f32("elevation")?;
        let c2w = r.f32s(16, "camera_to_world")?;
        let image = r.f32s(pixel_floats(height, width, "view image")?, "view image")?;
        views.push(WireView {
            height,
            width,
            azimuth_deg,
            elevation_deg,
            camera_to_world: c2w.try_into().unwrap(),
            image,
        });
    }
    let req = GuidanceRequest {
        prompt,
        negative_prompt,
        views,
        guidance_scale: r.f32("guidance_scale")?,
        t_min: r.f32("t_min")?,
        t_max: r.f32("t_max")?,
        seed: r.u64("seed")?,
    };
    r.finish("frame")?;
    Ok(req)
}

pub fn encode_response(resp: &GuidanceResponse) -> Result<Vec<u8>> {
    let mut w = ByteWriter::default();
    header(&mut w);
    w.u32(resp.status);
    w.f64(resp.loss);
    w.u32(resp.grads.len() as u32);
    for g in &resp.grads {
        if g.data.len() != g.height as usize * g.width as usize * 3 {
            return Err(Error::Shape {
                what: "response gradient",
                expected: g.height as usize * g.width as usize * 3,
                actual: g.data.len(),
            });
        }
        w.u32(g.height);
        w.u32(g.width);
        g.data.iter().for_each(|x| w.f32(*x));
    }
    w.str(&resp.diagnostic);
    Ok(w.0)
}

pub fn decode_response(buf: &[u8]) -> Result<GuidanceResponse> {
    let mut r = ByteReader::new(buf);
    check_header(&mut r)?;
    let status = r.u32("status")?;
    let loss = r.f64("loss")?;
    let n = r.u32("n_views")?;
    let mut grads = Vec::new();
    for _ in 0..n {
        let height = r.u32("gradient height")?;
        let width = r.u32("gradient width")?;
        let data = r.f32s(pixel_floats(height, width, "gradient")?, "gradient")?;
        grads.push(WireGradient { height, width, data });
    }
    let diagnostic = r.str("diagnostic")?;
    r.finish("frame")?;
    Ok(GuidanceResponse {
        status,
        loss,
        grads,
        diagnostic,
    })
}

pub fn write_frame(w: &mut impl Write, payload: &[u8]) -> Result<()> {
    if payload.len() > MAX_FRAME {
        return Err(Error::invalid(format!("frame of {} bytes exceeds the limit", payload.len())));
    }
    w.write_all(&(payload.len() as u32).to_le_bytes())?;
    w.write_all(payload)?;
    w.flush()?;
    Ok(())
}

pub fn read_frame(r: &mut impl Read) -> Result<Vec<u8>> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let len = u32::from_le_bytes(len) as usize;
    if len > MAX_FRAME {
        return Err(Error::parse("frame", format!("length {len} exceeds the limit")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    Ok(buf)
}
