//! Trained model bundle and its checkpoint file.
//!
//! `.ckpt` layout (little-endian):
//!
//! ```text
//! "DHSCKPT1"
//! u32 n, n bytes of JSON: {"config": ModelConfig, "stats": MotionStats}
//! u32 tensor_count, then per tensor:
//!   u32 name_len, name bytes, u32 rows, u32 cols, f64[rows*cols] row-major
//! ```

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoders::Encoders;
use crate::error::{Error, Result};
use crate::hsi_diffusion::{ConditionAdapter, Denoiser, DenoiserConfig, MotionStats, NoiseSchedule, ScheduleConfig};
use crate::navigation::{Navigator, NavigatorConfig};
use crate::nn::{Mat, ParamStore};

pub const CKPT_MAGIC: &[u8; 8] = b"DHSCKPT1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct ModelConfig {
    pub denoiser: DenoiserConfig,
    pub navigator: NavigatorConfig,
    pub schedule: ScheduleConfig,
}

impl ModelConfig {
    /// Small networks for smoke runs and tests.
    pub fn tiny() -> Self {
        ModelConfig {
            denoiser: DenoiserConfig { width: 16, layers: 1, heads: 2, ff: 16 },
            navigator: NavigatorConfig { width: 32, layers: 1, heads: 2, ff: 32 },
            schedule: ScheduleConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Models {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    pub enc: Encoders,
    pub nav: Navigator,
    pub den: Denoiser,
    pub adapter: ConditionAdapter,
    pub stats: MotionStats,
    pub schedule: NoiseSchedule,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    stats: MotionStats,
}

impl Models {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        let schedule = NoiseSchedule::from_config(&cfg.schedule)?;
        if cfg.denoiser.width % cfg.denoiser.heads != 0 || cfg.navigator.width % cfg.navigator.heads != 0 {
            return Err(Error::config("model width must be divisible by the head count"));
        }
        if cfg.navigator.width != crate::encoders::FEATURE_DIM {
            return Err(Error::config(format!("navigator width must equal the feature size {}", crate::encoders::FEATURE_DIM)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::default();
        let enc = Encoders::new(&mut store, &mut rng);
        let nav = Navigator::new(&mut store, cfg.navigator, &mut rng);
        let den = Denoiser::new(&mut store, cfg.denoiser, cfg.schedule.steps, &mut rng);
        let adapter = ConditionAdapter::new(&mut store, &mut rng);
        Ok(Models { cfg, store, enc, nav, den, adapter, stats: MotionStats::identity(), schedule })
    }

    fn from_parts(cfg: ModelConfig, store: ParamStore, stats: MotionStats) -> Result<Self> {
        let missing = || Error::format("checkpoint is missing parameters");
        let schedule = NoiseSchedule::from_config(&cfg.schedule).map_err(|e| Error::format(e.to_string()))?;
        let enc = Encoders::lookup(&store).ok_or_else(missing)?;
        let nav = Navigator::lookup(&store, cfg.navigator).ok_or_else(missing)?;
        let den = Denoiser::lookup(&store, cfg.denoiser).ok_or_else(missing)?;
        let adapter = ConditionAdapter::lookup(&store).ok_or_else(missing)?;
        // Shape check against a fresh model of the same configuration.
        let fresh = Models::new(cfg, 0).map_err(|e| Error::format(e.to_string()))?;
        if fresh.store.len() != store.len() {
            return Err(Error::format("checkpoint parameter count does not match its config"));
        }
        for (name, m) in fresh.store.iter() {
            let id = store.id(name).ok_or_else(missing)?;
            if store.get(id).dim() != m.dim() {
                return Err(Error::format(format!("parameter {name} has the wrong shape")));
            }
        }
        if stats.mean.len() != crate::hsi_diffusion::SEGMENT_LEN {
            return Err(Error::format("motion statistics have the wrong size"));
        }
        Ok(Models { cfg, store, enc, nav, den, adapter, stats, schedule })
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CKPT_MAGIC)?;
        let header = serde_json::to_vec(&Header { config: self.cfg, stats: self.stats.clone() })?;
        w.write_u32::<LE>(header.len() as u32)?;
        w.write_all(&header)?;
        w.write_u32::<LE>(self.store.len() as u32)?;
        for (name, m) in self.store.iter() {
            w.write_u32::<LE>(name.len() as u32)?;
            w.write_all(name.as_bytes())?;
            w.write_u32::<LE>(m.nrows() as u32)?;
            w.write_u32::<LE>(m.ncols() as u32)?;
            for v in m.iter() {
                w.write_f64::<LE>(*v)?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        Self::read_inner(&mut r).map_err(|e| match e {
            Error::Io(io) if io.kind() == std::io::ErrorKind::UnexpectedEof => Error::format("checkpoint is truncated"),
            Error::Json(j) => Error::format(format!("bad checkpoint header: {j}")),
            other => other,
        })
    }

    fn read_inner<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CKPT_MAGIC {
            return Err(Error::format("not a checkpoint file"));
        }
        let n = r.read_u32::<LE>()? as usize;
        if n > 1 << 28 {
            return Err(Error::format("checkpoint header too large"));
        }
        let mut buf = vec![0u8; n];
        r.read_exact(&mut buf)?;
        let header: Header = serde_json::from_slice(&buf)?;
        let count = r.read_u32::<LE>()?;
        let mut store = ParamStore::default();
        for _ in 0..count {
            let len = r.read_u32::<LE>()? as usize;
            if len > 4096 {
                return Err(Error::format("parameter name too long"));
            }
            let mut name = vec![0u8; len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| Error::format("parameter name is not UTF-8"))?;
            let rows = r.read_u32::<LE>()? as usize;
            let cols = r.read_u32::<LE>()? as usize;
            if rows * cols > 1 << 26 {
                return Err(Error::format("parameter too large"));
            }
            let mut v = vec![0.0; rows * cols];
            r.read_f64_into::<LE>(&mut v)?;
            if store.id(&name).is_some() {
                return Err(Error::format(format!("duplicate parameter {name}")));
            }
            store.add(&name, Mat::from_shape_vec((rows, cols), v).expect("sized"));
        }
        Self::from_parts(header.config, store, header.stats)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig::tiny()
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = Models::new(small(), 3).unwrap();
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        let back = Models::read_from(&buf[..]).unwrap();
        assert_eq!(back.store, m.store);
        assert_eq!(back.cfg, m.cfg);
        assert_eq!(back.stats, m.stats);
        assert!(matches!(Models::read_from(&buf[..buf.len() - 3]), Err(Error::Format(_))));
        let mut bad = buf.clone();
        bad[1] = b'x';
        assert!(matches!(Models::read_from(&bad[..]), Err(Error::Format(_))));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = small();
        c.denoiser.heads = 3;
        assert!(matches!(Models::new(c, 0), Err(Error::Config(_))));
        let mut c = small();
        c.schedule.beta_start = 0.5;
        assert!(matches!(Models::new(c, 0), Err(Error::Config(_))));
        let mut c = small();
        c.navigator.width = 16;
        assert!(matches!(Models::new(c, 0), Err(Error::Config(_))));
    }
}
