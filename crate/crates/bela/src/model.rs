//! Full model parameter container and its on-disk format.
//!
//! File layout (all little-endian):
//! - magic "BELAENC1"
//! - mention encoder: u32 dim, u32 buckets, u32 context_window, u64 seed,
//!   then w_mix as f32 row-major
//! - tagged sections, each `u8 tag_len, tag bytes, u64 payload_len, payload`:
//!   ENTENC (entity encoder, same layout as above), MDHEAD, EDHEAD, RHEAD,
//!   META (last completed training stage, UTF-8)
//!
//! Floats are stored as f32. In memory everything is f64, but every value is
//! produced by widening an f32, so save → load → save is byte-identical and a
//! loaded model encodes bit-identically to the model that was saved.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use crate::ed::EdParams;
use crate::encoder::{EncoderConfig, EncoderParams};
use crate::error::{BelaError, Result};
use crate::md::MdParams;
use crate::rejection::{RParams, DEFAULT_HIDDEN};

pub const MODEL_MAGIC: &[u8; 8] = b"BELAENC1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Init,
    EdInBatch,
    EdHard,
    EndToEnd,
}

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Init => "init",
            Stage::EdInBatch => "ed_inbatch",
            Stage::EdHard => "ed_hard",
            Stage::EndToEnd => "end_to_end",
        }
    }

    pub fn parse(s: &str) -> Result<Stage> {
        match s {
            "init" => Ok(Stage::Init),
            "ed_inbatch" => Ok(Stage::EdInBatch),
            "ed_hard" => Ok(Stage::EdHard),
            "end_to_end" => Ok(Stage::EndToEnd),
            other => Err(BelaError::Invalid(format!("unknown stage '{other}'"))),
        }
    }

    /// True when this stage has trained the ED bi-encoder.
    pub fn has_ed(&self) -> bool {
        *self >= Stage::EdInBatch
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub enc_mention: EncoderParams,
    pub enc_entity: EncoderParams,
    pub md: MdParams,
    pub ed: EdParams,
    pub r: RParams,
    pub stage: Stage,
}

impl ModelParams {
    pub fn dim(&self) -> usize {
        self.enc_mention.config.dim
    }

    /// Fresh seeded model: near-identity encoders and pooling, small random
    /// MD and rejection heads.
    pub fn seeded_init(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = config.dim;
        let entity_config = EncoderConfig {
            // the two encoders hash tokens identically but mix separately
            ..config
        };
        let mut md = MdParams::zeros(d);
        {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x4d44);
            let s = 1.0 / (d as f64).sqrt();
            for v in [&mut md.w_start, &mut md.w_end, &mut md.w_inside] {
                for x in v.iter_mut() {
                    *x = ((rng.gen::<f64>() * 2.0 - 1.0) * s) as f32 as f64;
                }
            }
        }
        Ok(ModelParams {
            enc_mention: EncoderParams::seeded_init(config, seed ^ 0x4d454e),
            enc_entity: EncoderParams::seeded_init(entity_config, seed ^ 0x454e54),
            md,
            ed: EdParams::identity(d),
            r: RParams::seeded_init(d, DEFAULT_HIDDEN, seed ^ 0x52),
            stage: Stage::Init,
        })
    }

    /// Rounds every parameter through f32 so it is exactly representable in
    /// the on-disk format. Applied after each optimizer step.
    pub fn quantize_to_f32(&mut self) {
        fn q(v: &mut [f64]) {
            for x in v.iter_mut() {
                *x = *x as f32 as f64;
            }
        }
        q(&mut self.enc_mention.w_mix);
        q(&mut self.enc_entity.w_mix);
        q(&mut self.md.w_start);
        q(&mut self.md.w_end);
        q(&mut self.md.w_inside);
        q(&mut self.ed.pool_weight);
        q(&mut self.ed.pool_bias);
        q(&mut self.r.w1);
        q(&mut self.r.b1);
        q(&mut self.r.w2);
        self.r.b2 = self.r.b2 as f32 as f64;
    }

    /// Serialized bytes of the entity encoder alone; used to verify the
    /// frozen-encoder contract across the end-to-end stage.
    pub fn entity_encoder_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        write_encoder(&mut buf, &self.enc_entity);
        buf
    }
}

fn write_encoder(buf: &mut Vec<u8>, enc: &EncoderParams) {
    buf.extend((enc.config.dim as u32).to_le_bytes());
    buf.extend(enc.config.vocab_hash_buckets.to_le_bytes());
    buf.extend((enc.config.context_window as u32).to_le_bytes());
    buf.extend(enc.config.seed.to_le_bytes());
    for &x in &enc.w_mix {
        buf.extend((x as f32).to_le_bytes());
    }
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
    path: &'a str,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(BelaError::format(self.path, format!("truncated while reading {what}")));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let raw = self.take(4 * n, what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }
    fn done(&self) -> bool {
        self.pos >= self.data.len()
    }
}

fn read_encoder(c: &mut Cursor, what: &str) -> Result<EncoderParams> {
    let dim = c.u32(what)? as usize;
    let buckets = c.u32(what)?;
    let context_window = c.u32(what)? as usize;
    let seed = c.u64(what)?;
    let w_mix = c.f32s(dim * dim, what)?;
    Ok(EncoderParams {
        config: EncoderConfig {
            dim,
            context_window,
            vocab_hash_buckets: buckets,
            seed,
        },
        w_mix,
    })
}

impl ModelParams {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend(MODEL_MAGIC);
        write_encoder(&mut buf, &self.enc_mention);

        let section = |tag: &str, payload: Vec<u8>, buf: &mut Vec<u8>| {
            buf.push(tag.len() as u8);
            buf.extend(tag.as_bytes());
            buf.extend((payload.len() as u64).to_le_bytes());
            buf.extend(payload);
        };

        let mut p = Vec::new();
        write_encoder(&mut p, &self.enc_entity);
        section("ENTENC", p, &mut buf);

        let mut p = Vec::new();
        for v in [&self.md.w_start, &self.md.w_end, &self.md.w_inside] {
            for &x in v.iter() {
                p.extend((x as f32).to_le_bytes());
            }
        }
        section("MDHEAD", p, &mut buf);

        let mut p = Vec::new();
        for &x in self.ed.pool_weight.iter().chain(&self.ed.pool_bias) {
            p.extend((x as f32).to_le_bytes());
        }
        section("EDHEAD", p, &mut buf);

        let mut p = Vec::new();
        p.extend((self.r.hidden as u32).to_le_bytes());
        for &x in self.r.w1.iter().chain(&self.r.b1).chain(&self.r.w2) {
            p.extend((x as f32).to_le_bytes());
        }
        p.extend((self.r.b2 as f32).to_le_bytes());
        section("RHEAD", p, &mut buf);

        section("META", self.stage.as_str().as_bytes().to_vec(), &mut buf);

        let tmp = path.with_extension("tmp");
        std::fs::File::create(&tmp)
            .and_then(|mut f| f.write_all(&buf))
            .map_err(|e| BelaError::io(path.display().to_string(), e))?;
        std::fs::rename(&tmp, path).map_err(|e| BelaError::io(path.display().to_string(), e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let pathstr = path.display().to_string();
        let mut data = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut data))
            .map_err(|e| BelaError::io(&*pathstr, e))?;
        let mut c = Cursor {
            data: &data,
            pos: 0,
            path: &pathstr,
        };
        if c.take(8, "magic")? != MODEL_MAGIC {
            return Err(BelaError::format(&*pathstr, "bad magic (expected BELAENC1)"));
        }
        let enc_mention = read_encoder(&mut c, "mention encoder")?;
        let d = enc_mention.config.dim;

        let mut enc_entity = None;
        let mut md = None;
        let mut ed = None;
        let mut r = None;
        let mut stage = Stage::Init;
        while !c.done() {
            let tag_len = c.take(1, "section tag")?[0] as usize;
            let tag = String::from_utf8_lossy(c.take(tag_len, "section tag")?).to_string();
            let payload_len = c.u64("section length")? as usize;
            let payload = c.take(payload_len, &tag)?.to_vec();
            let mut pc = Cursor {
                data: &payload,
                pos: 0,
                path: &pathstr,
            };
            match tag.as_str() {
                "ENTENC" => enc_entity = Some(read_encoder(&mut pc, "entity encoder")?),
                "MDHEAD" => {
                    md = Some(MdParams {
                        w_start: pc.f32s(d, "MDHEAD w_start")?,
                        w_end: pc.f32s(d, "MDHEAD w_end")?,
                        w_inside: pc.f32s(d, "MDHEAD w_inside")?,
                    })
                }
                "EDHEAD" => {
                    ed = Some(EdParams {
                        pool_weight: pc.f32s(d * d, "EDHEAD pool_weight")?,
                        pool_bias: pc.f32s(d, "EDHEAD pool_bias")?,
                    })
                }
                "RHEAD" => {
                    let hidden = pc.u32("RHEAD hidden")? as usize;
                    let in_dim = 2 + 4 * d;
                    r = Some(RParams {
                        w1: pc.f32s(hidden * in_dim, "RHEAD w1")?,
                        b1: pc.f32s(hidden, "RHEAD b1")?,
                        w2: pc.f32s(hidden, "RHEAD w2")?,
                        b2: pc.f32s(1, "RHEAD b2")?[0],
                        hidden,
                        in_dim,
                    })
                }
                "META" => {
                    let s = String::from_utf8_lossy(&payload).to_string();
                    stage = Stage::parse(&s)
                        .map_err(|_| BelaError::format(&*pathstr, format!("unknown stage '{s}' in META")))?;
                }
                other => {
                    return Err(BelaError::format(&*pathstr, format!("unknown section '{other}'")));
                }
            }
        }

        let enc_entity =
            enc_entity.ok_or_else(|| BelaError::format(&*pathstr, "missing ENTENC section"))?;
        if enc_entity.config.dim != d {
            return Err(BelaError::format(
                &*pathstr,
                format!("dim mismatch between encoders: {} vs {d}", enc_entity.config.dim),
            ));
        }
        Ok(ModelParams {
            enc_mention,
            enc_entity,
            md: md.ok_or_else(|| BelaError::format(&*pathstr, "missing MDHEAD section"))?,
            ed: ed.ok_or_else(|| BelaError::format(&*pathstr, "missing EDHEAD section"))?,
            r: r.ok_or_else(|| BelaError::format(&*pathstr, "missing RHEAD section"))?,
            stage,
        })
    }

    /// Load and require a specific encoder dimension.
    pub fn load_with_dim(path: &Path, expected_dim: usize) -> Result<Self> {
        let model = Self::load(path)?;
        if model.dim() != expected_dim {
            return Err(BelaError::format(
                path.display().to_string(),
                format!("dim mismatch: file has dim {}, expected {expected_dim}", model.dim()),
            ));
        }
        Ok(model)
    }
}
