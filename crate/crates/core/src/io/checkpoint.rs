//! Versioned binary checkpoint container.
//!
//! Layout (little-endian): magic `"MVGS-CKPT"`, version `u32`, section count
//! `u32`, then per section a table entry (name as `u32` length + UTF-8,
//! offset `u64` from the file start, length `u64`), then the section bodies.
//! Readers skip sections they do not know.

use std::path::Path;

use super::bytes::{ByteReader, ByteWriter};
use crate::cloud::GaussianCloud;
use crate::error::{Error, Result};
use crate::math::{Quat, Vec3};
use crate::optim::Moments;
use crate::regularizers::LossWeights;
use crate::surface::SurfaceCloud;

pub const MAGIC: &[u8; 9] = b"MVGS-CKPT";
pub const VERSION: u32 = 1;

/// Full trainer state after `step` completed steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub cloud: GaussianCloud,
    /// Indexed like [`crate::optim::GROUP_NAMES`].
    pub moments: [Moments; 5],
    pub eta_moments: Moments,
    pub optimizer_step: u64,
    pub weights: LossWeights,
    pub surface: Option<SurfaceCloud>,
    /// TOML text of the run configuration.
    pub config: String,
}

fn vec3s(w: &mut ByteWriter, v: &[Vec3]) {
    w.f64s(v.iter().flat_map(|x| x.iter().copied()));
}

fn read_vec3s(r: &mut ByteReader<'_>, n: usize, what: &str) -> Result<Vec<Vec3>> {
    Ok(r.f64s(n * 3, what)?.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect())
}

fn moments(w: &mut ByteWriter, m: &Moments) {
    w.u32(m.dim as u32);
    w.u64(m.m.len() as u64);
    w.f64s(m.m.iter().copied());
    w.f64s(m.v.iter().copied());
}

fn read_moments(r: &mut ByteReader<'_>, what: &str) -> Result<Moments> {
    let dim = r.u32(what)? as usize;
    let len = r.u64(what)? as usize;
    if dim == 0 || len % dim != 0 {
        return Err(Error::parse(what, format!("bad moment shape dim={dim} len={len}")));
    }
    Ok(Moments {
        dim,
        m: r.f64s(len, what)?,
        v: r.f64s(len, what)?,
    })
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.cloud;
        let mut sections: Vec<(&str, Vec<u8>)> = Vec::new();

        let mut meta = ByteWriter::default();
        meta.u64(self.step);
        meta.u64(self.optimizer_step);
        sections.push(("meta", meta.0));

        let mut w = ByteWriter::default();
        w.u64(c.len() as u64);
        w.u64(c.next_id);
        vec3s(&mut w, &c.means);
        vec3s(&mut w, &c.log_scales);
        w.f64s(c.rotations.iter().flat_map(|q| q.iter().copied()));
        vec3s(&mut w, &c.colors);
        w.f64s(c.opacity_logits.iter().copied());
        c.ids.iter().for_each(|i| w.u64(*i));
        w.f64s(c.grad_accum.iter().copied());
        c.grad_count.iter().for_each(|n| w.u32(*n));
        sections.push(("cloud", w.0));

        let mut w = ByteWriter::default();
        self.moments.iter().for_each(|m| moments(&mut w, m));
        moments(&mut w, &self.eta_moments);
        sections.push(("optimizer", w.0));

        let mut w = ByteWriter::default();
        w.f64s(self.weights.eta);
        sections.push(("weights", w.0));

        if let Some(s) = &self.surface {
            let mut w = ByteWriter::default();
            w.u64(s.step);
            w.u32(s.empty_warning as u32);
            w.u64(s.len() as u64);
            vec3s(&mut w, &s.points);
            sections.push(("surface", w.0));
        }

        let mut w = ByteWriter::default();
        w.str(&self.config);
        sections.push(("config", w.0));

        let mut table_len = MAGIC.len() + 8;
        for (name, _) in &sections {
            table_len += 4 + name.len() + 16;
        }
        let mut out = ByteWriter::default();
        out.bytes(MAGIC);
        out.u32(VERSION);
        out.u32(sections.len() as u32);
        let mut offset = table_len as u64;
        for (name, body) in &sections {
            out.str(name);
            out.u64(offset);
            out.u64(body.len() as u64);
            offset += body.len() as u64;
        }
        for (_, body) in &sections {
            out.bytes(body);
        }
        out.0
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(buf);
        if r.take(MAGIC.len(), "magic")? != MAGIC {
            return Err(Error::parse("magic", "not a checkpoint file"));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::parse("version", format!("unsupported checkpoint version {version}")));
        }
        let n = r.u32("section count")?;
        let mut table = Vec::new();
        for _ in 0..n {
            let name = r.str("section table")?;
            let off = r.u64("section table")? as usize;
            let len = r.u64("section table")? as usize;
            if off.checked_add(len).is_none_or(|end| end > buf.len()) {
                return Err(Error::parse(format!("section {name}"), "extends past the end of the file"));
            }
            table.push((name, off, len));
        }
        let section = |name: &str| -> Option<ByteReader<'_>> {
            table
                .iter()
                .find(|(n, _, _)| n == name)
                .map(|&(_, off, len)| ByteReader::new(&buf[off..off + len]))
        };
        let need = |name: &str| section(name).ok_or_else(|| Error::parse(format!("section {name}"), "missing"));

        let mut m = need("meta")?;
        let step = m.u64("meta")?;
        let optimizer_step = m.u64("meta")?;

        let mut r = need("cloud")?;
        let len = r.u64("cloud")? as usize;
        if len > buf.len() {
            return Err(Error::parse("cloud", format!("implausible length {len}")));
        }
        let next_id = r.u64("cloud")?;
        let means = read_vec3s(&mut r, len, "cloud means")?;
        let log_scales = read_vec3s(&mut r, len, "cloud scales")?;
        let rotations = r
            .f64s(len * 4, "cloud rotations")?
            .chunks_exact(4)
            .map(|c| Quat::new(c[0], c[1], c[2], c[3]))
            .collect();
        let colors = read_vec3s(&mut r, len, "cloud colors")?;
        let opacity_logits = r.f64s(len, "cloud opacity")?;
        let ids = (0..len).map(|_| r.u64("cloud ids")).collect::<Result<_>>()?;
        let grad_accum = r.f64s(len, "cloud grad stats")?;
        let grad_count = (0..len).map(|_| r.u32("cloud grad stats")).collect::<Result<_>>()?;
        r.finish("cloud")?;
        let cloud = GaussianCloud {
            means,
            log_scales,
            rotations,
            colors,
            opacity_logits,
            ids,
            grad_accum,
            grad_count,
            next_id,
        };

        let mut r = need("optimizer")?;
        let mut groups = Vec::new();
        for name in crate::optim::GROUP_NAMES {
            groups.push(read_moments(&mut r, name)?);
        }
        let eta_moments = read_moments(&mut r, "eta moments")?;
        r.finish("optimizer")?;

        let mut r = need("weights")?;
        let e = r.f64s(3, "weights")?;
        let weights = LossWeights {
            eta: [e[0], e[1], e[2]],
        };

        let surface = match section("surface") {
            None => None,
            Some(mut r) => {
                let s_step = r.u64("surface")?;
                let empty = r.u32("surface")? != 0;
                let n = r.u64("surface")? as usize;
                if n > buf.len() {
                    return Err(Error::parse("surface", format!("implausible length {n}")));
                }
                let mut s = SurfaceCloud::new(read_vec3s(&mut r, n, "surface points")?, s_step)?;
                s.empty_warning = empty;
                Some(s)
            }
        };

        let config = need("config")?.str("config")?;
        let ck = Checkpoint {
            step,
            cloud,
            moments: groups.try_into().expect("five groups"),
            eta_moments,
            optimizer_step,
            weights,
            surface,
            config,
        };
        ck.cloud.validate().map_err(|e| Error::parse("cloud", e.to_string()))?;
        if ck.moments.iter().any(|m| m.rows() != ck.cloud.len()) {
            return Err(Error::parse("optimizer", "moment rows do not match the cloud"));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
