//! TCP client for the remote guidance worker.

use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use super::protocol::{self, GuidanceRequest, WireView, STATUS_OK};
use super::{Guidance, GuidanceContext, GuidanceOutput, GuidanceView};
use crate::error::{Error, Result};
use crate::math::Vec3;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

/// Sends each evaluation as one framed request over a persistent connection
/// (reconnecting after failures).
#[derive(Debug)]
pub struct RemoteGuidance {
    addr: String,
    timeout: Duration,
    stream: Option<TcpStream>,
}

impl RemoteGuidance {
    pub fn new(addr: impl Into<String>, timeout: Duration) -> Self {
        RemoteGuidance {
            addr: addr.into(),
            timeout,
            stream: None,
        }
    }

    fn connect(&mut self) -> Result<&mut TcpStream> {
        if self.stream.is_none() {
            let addr = self
                .addr
                .to_socket_addrs()
                .map_err(|e| Error::Guidance(format!("resolving {}: {e}", self.addr)))?
                .next()
                .ok_or_else(|| Error::Guidance(format!("no address for {}", self.addr)))?;
            let s = TcpStream::connect_timeout(&addr, self.timeout)
                .map_err(|e| Error::Guidance(format!("connecting to {}: {e}", self.addr)))?;
            s.set_read_timeout(Some(self.timeout))?;
            s.set_write_timeout(Some(self.timeout))?;
            s.set_nodelay(true)?;
            self.stream = Some(s);
        }
        Ok(self.stream.as_mut().unwrap())
    }

    fn roundtrip(&mut self, payload: &[u8]) -> Result<Vec<u8>> {
        let s = self.connect()?;
        let r = protocol::write_frame(s, payload).and_then(|_| protocol::read_frame(s));
        if r.is_err() {
            self.stream = None;
        }
        r.map_err(|e| Error::Guidance(format!("exchange with guidance worker failed: {e}")))
    }
}

pub fn build_request(views: &[GuidanceView<'_>], ctx: &GuidanceContext) -> GuidanceRequest {
    GuidanceRequest {
        prompt: ctx.prompt.clone(),
        negative_prompt: ctx.negative_prompt.clone(),
        views: views
            .iter()
            .map(|v| {
                let c2w = v.camera.camera_to_world();
                let mut m = [0f32; 16];
                for r in 0..4 {
                    for c in 0..4 {
                        m[r * 4 + c] = c2w[(r, c)] as f32;
                    }
                }
                WireView {
                    height: v.camera.height as u32,
                    width: v.camera.width as u32,
                    azimuth_deg: v.azimuth_deg as f32,
                    elevation_deg: v.elevation_deg as f32,
                    camera_to_world: m,
                    image: v.image.iter().flat_map(|p| p.iter().map(|x| *x as f32)).collect(),
                }
            })
            .collect(),
        guidance_scale: ctx.guidance_scale as f32,
        t_min: ctx.t_min as f32,
        t_max: ctx.t_max as f32,
        seed: ctx.seed,
    }
}

impl Guidance for RemoteGuidance {
    fn evaluate(&mut self, views: &[GuidanceView<'_>], ctx: &GuidanceContext) -> Result<GuidanceOutput> {
        let req = build_request(views, ctx);
        let reply = self.roundtrip(&protocol::encode_request(&req)?)?;
        let resp = protocol::decode_response(&reply)?;
        if resp.status != STATUS_OK {
            return Err(Error::Guidance(format!("worker status {}: {}", resp.status, resp.diagnostic)));
        }
        if resp.grads.len() != views.len() {
            return Err(Error::Shape {
                what: "response views",
                expected: views.len(),
                actual: resp.grads.len(),
            });
        }
        let mut grads = Vec::with_capacity(views.len());
        for (g, v) in resp.grads.iter().zip(views) {
            if g.height as usize != v.camera.height || g.width as usize != v.camera.width {
                return Err(Error::Guidance(format!(
                    "gradient is {}x{}, view is {}x{}",
                    g.height, g.width, v.camera.height, v.camera.width
                )));
            }
            grads.push(
                g.data
                    .chunks_exact(3)
                    .map(|c| Vec3::new(c[0] as f64, c[1] as f64, c[2] as f64))
                    .collect(),
            );
        }
        if !resp.loss.is_finite() || resp.loss < 0.0 {
            return Err(Error::NonFinite(format!("guidance loss {}", resp.loss)));
        }
        Ok(GuidanceOutput { loss: resp.loss, grads })
    }
}
