//! SSDS dataset files: a batch of equally shaped gathers plus optional labels.
//!
//! Layout (little-endian):
//!
//! ```text
//! "SSDS" u16:version u32:count u32:X u32:T f64:dt f64:offsets[X] f64:v_min f64:v_max
//! f32 amplitudes[count][X][T]
//! u32 n_blocks, then per block a u8 tag and its payload:
//!   1 clean gathers   f32[count][X][T]
//!   2 velocity        f32[count][T]   (m/s)
//!   3 first break     u16[count][X]
//!   4 vrms            f32[count][T]   (m/s)
//!   5 domain          u8[count]       (0 clean, 1 field proxy)
//! ```
//!
//! Blocks are written in tag order, each at most once.

use std::fs;
use std::path::Path;

use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};
use crate::gather::{DomainTag, ShotGather};
use crate::seisgen::GeneratedSample;

pub const MAGIC: &[u8; 4] = b"SSDS";
pub const VERSION: u16 = 1;

const TAG_CLEAN: u8 = 1;
const TAG_VELOCITY: u8 = 2;
const TAG_FIRST_BREAK: u8 = 3;
const TAG_VRMS: u8 = 4;
const TAG_DOMAIN: u8 = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub n_traces: usize,
    pub n_samples: usize,
    pub dt: f64,
    pub offsets: Vec<f64>,
    /// Corpus-wide velocity bounds used to scale velocity labels.
    pub v_min: f64,
    pub v_max: f64,
    pub inputs: Vec<Vec<f32>>,
    pub clean: Option<Vec<Vec<f32>>>,
    pub velocity: Option<Vec<Vec<f32>>>,
    pub first_break: Option<Vec<Vec<u16>>>,
    pub vrms: Option<Vec<Vec<f32>>>,
    pub domains: Option<Vec<DomainTag>>,
}

impl Dataset {
    /// Empty dataset with the given geometry.
    pub fn new(n_traces: usize, n_samples: usize, dt: f64, offsets: Vec<f64>, v_min: f64, v_max: f64) -> Self {
        Self {
            n_traces,
            n_samples,
            dt,
            offsets,
            v_min,
            v_max,
            inputs: Vec::new(),
            clean: None,
            velocity: None,
            first_break: None,
            vrms: None,
            domains: None,
        }
    }

    /// Dataset with every label block filled from generated samples.
    pub fn from_samples(samples: &[GeneratedSample], v_min: f64, v_max: f64) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::contract("no samples to store"))?;
        let g = &first.input;
        let mut ds = Self::new(g.n_traces(), g.n_samples(), g.dt, g.offsets.clone(), v_min, v_max);
        ds.clean = Some(Vec::new());
        ds.velocity = Some(Vec::new());
        ds.first_break = Some(Vec::new());
        ds.vrms = Some(Vec::new());
        ds.domains = Some(Vec::new());
        for s in samples {
            ds.check_gather(&s.input)?;
            ds.inputs.push(s.input.amplitudes().to_vec());
            ds.clean.as_mut().unwrap().push(s.clean.amplitudes().to_vec());
            ds.velocity.as_mut().unwrap().push(s.labels.velocity.clone());
            ds.first_break.as_mut().unwrap().push(s.labels.first_break.clone());
            ds.vrms.as_mut().unwrap().push(s.labels.vrms.clone());
            ds.domains.as_mut().unwrap().push(s.input.domain);
        }
        Ok(ds)
    }

    fn check_gather(&self, g: &ShotGather) -> Result<()> {
        if g.n_traces() != self.n_traces || g.n_samples() != self.n_samples {
            return Err(Error::shape(
                "dataset gather",
                &[self.n_traces, self.n_samples],
                &[g.n_traces(), g.n_samples()],
            ));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn domain(&self, i: usize) -> DomainTag {
        self.domains.as_ref().map_or(DomainTag::Clean, |d| d[i])
    }

    fn make_gather(&self, amps: &[f32], i: usize) -> ShotGather {
        let mut g = ShotGather::new(self.n_traces, self.n_samples, amps.to_vec(), self.dt, self.offsets.clone())
            .expect("dataset geometry validated on load");
        g.domain = self.domain(i);
        g
    }

    pub fn gather(&self, i: usize) -> ShotGather {
        self.make_gather(&self.inputs[i], i)
    }

    pub fn clean_gather(&self, i: usize) -> Option<ShotGather> {
        self.clean.as_ref().map(|c| self.make_gather(&c[i], i))
    }

    /// The items at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let pick = |v: &Vec<Vec<f32>>| indices.iter().map(|&i| v[i].clone()).collect();
        Self {
            inputs: pick(&self.inputs),
            clean: self.clean.as_ref().map(pick),
            velocity: self.velocity.as_ref().map(pick),
            first_break: self
                .first_break
                .as_ref()
                .map(|v| indices.iter().map(|&i| v[i].clone()).collect()),
            vrms: self.vrms.as_ref().map(pick),
            domains: self
                .domains
                .as_ref()
                .map(|v| indices.iter().map(|&i| v[i]).collect()),
            ..Self::new(
                self.n_traces,
                self.n_samples,
                self.dt,
                self.offsets.clone(),
                self.v_min,
                self.v_max,
            )
        }
    }

    /// First `len - n_test` items and the last `n_test`.
    pub fn split(&self, n_test: usize) -> Result<(Self, Self)> {
        if n_test >= self.len() {
            return Err(Error::contract(format!(
                "cannot hold out {n_test} of {} gathers",
                self.len()
            )));
        }
        let cut = self.len() - n_test;
        let train: Vec<usize> = (0..cut).collect();
        let test: Vec<usize> = (cut..self.len()).collect();
        Ok((self.subset(&train), self.subset(&test)))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(MAGIC);
        w.u16(VERSION);
        w.u32(self.len() as u32);
        w.u32(self.n_traces as u32);
        w.u32(self.n_samples as u32);
        w.f64(self.dt);
        for &o in &self.offsets {
            w.f64(o);
        }
        w.f64(self.v_min);
        w.f64(self.v_max);
        for g in &self.inputs {
            w.floats(g);
        }
        let blocks = [
            self.clean.is_some(),
            self.velocity.is_some(),
            self.first_break.is_some(),
            self.vrms.is_some(),
            self.domains.is_some(),
        ];
        w.u32(blocks.iter().filter(|b| **b).count() as u32);
        if let Some(c) = &self.clean {
            w.u8(TAG_CLEAN);
            c.iter().for_each(|g| w.floats(g));
        }
        if let Some(v) = &self.velocity {
            w.u8(TAG_VELOCITY);
            v.iter().for_each(|p| w.floats(p));
        }
        if let Some(fb) = &self.first_break {
            w.u8(TAG_FIRST_BREAK);
            for picks in fb {
                for &p in picks {
                    w.u16(p);
                }
            }
        }
        if let Some(v) = &self.vrms {
            w.u8(TAG_VRMS);
            v.iter().for_each(|p| w.floats(p));
        }
        if let Some(d) = &self.domains {
            w.u8(TAG_DOMAIN);
            for tag in d {
                w.u8(match tag {
                    DomainTag::Clean => 0,
                    DomainTag::FieldProxy => 1,
                });
            }
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "dataset");
        let mut magic = [0u8; 4];
        r.fill(&mut magic)?;
        if &magic != MAGIC {
            return Err(r.error("bad magic"));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(r.error(format!("unsupported version {version}")));
        }
        let count = r.u32()? as usize;
        let x = r.u32()? as usize;
        let t = r.u32()? as usize;
        if x == 0 || t == 0 {
            return Err(r.error("empty gather shape"));
        }
        let dt = r.f64()?;
        let offsets = (0..x).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let v_min = r.f64()?;
        let v_max = r.f64()?;
        // Validate the geometry once up front.
        ShotGather::zeros(x, t, dt, offsets.clone()).map_err(|e| r.error(e.to_string()))?;
        let mut ds = Self::new(x, t, dt, offsets, v_min, v_max);
        let gathers = |r: &mut Reader| (0..count).map(|_| r.floats(x * t)).collect::<Result<Vec<_>>>();
        ds.inputs = gathers(&mut r)?;
        let n_blocks = r.u32()?;
        let mut last_tag = 0;
        for _ in 0..n_blocks {
            let tag = r.u8()?;
            if tag <= last_tag {
                return Err(r.error(format!("label block {tag} out of order")));
            }
            last_tag = tag;
            match tag {
                TAG_CLEAN => ds.clean = Some(gathers(&mut r)?),
                TAG_VELOCITY | TAG_VRMS => {
                    let profiles = (0..count).map(|_| r.floats(t)).collect::<Result<Vec<_>>>()?;
                    if tag == TAG_VELOCITY {
                        ds.velocity = Some(profiles);
                    } else {
                        ds.vrms = Some(profiles);
                    }
                }
                TAG_FIRST_BREAK => {
                    let mut fb = Vec::with_capacity(count);
                    for _ in 0..count {
                        fb.push((0..x).map(|_| r.u16()).collect::<Result<Vec<_>>>()?);
                    }
                    ds.first_break = Some(fb);
                }
                TAG_DOMAIN => {
                    let mut d = Vec::with_capacity(count);
                    for _ in 0..count {
                        d.push(match r.u8()? {
                            0 => DomainTag::Clean,
                            1 => DomainTag::FieldProxy,
                            other => return Err(r.error(format!("unknown domain {other}"))),
                        });
                    }
                    ds.domains = Some(d);
                }
                other => return Err(r.error(format!("unknown label block {other}"))),
            }
        }
        r.expect_end()?;
        Ok(ds)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
