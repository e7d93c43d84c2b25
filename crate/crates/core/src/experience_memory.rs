//! Verb-keyed store of noisy motion primes.
//!
//! Training offers each sample's `X_T` together with its clean motion,
//! local scene and prompt. Only low-loss samples are admitted; a full bucket
//! swaps out its least representative member when the newcomer scores
//! higher. At inference the prompt's verb selects a bucket, the closest
//! prompts form a shortlist, and the entry whose scene feature best matches
//! the current scene supplies the starting noise. Unknown verbs get fresh
//! Gaussian noise.
//!
//! # `.mem` layout (little-endian)
//!
//! ```text
//! "DHSMEM1" u32 version
//! f64 alpha f64 beta f64 gamma f64 tau_l u32 k_mem u32 shortlist
//! u8 blend_flag [f64 alpha_r f64 gamma_r]
//! u32 bucket_count, then per bucket:
//!   str verb, u32 entry_count, then per entry:
//!     str prompt, u32 frames, u32 joints, f64[frames*joints*3] noisy,
//!     f64[frames*joints*3] clean, u64[512] scene bits, f64[3] center, f64 yaw,
//!     u32 n f64[n] scene_feature, u32 n f64[n] text, str verb,
//!     f64 admission_similarity, f64 loss
//! str = u32 byte length + UTF-8 bytes
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::encoders::{cosine_sim, embed_text, SceneFeature, TextEmbedding};
use crate::error::{Error, Result};
use crate::skeleton::{Motion, NUM_JOINTS, SEGMENT_FRAMES};
use crate::voxel::{BitCube, LocalGrid, LOCAL_CELLS};

pub const MEM_MAGIC: &[u8; 7] = b"DHSMEM1";
pub const MEM_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub tau_l: f64,
    pub k_mem: usize,
    pub shortlist: usize,
    /// When set, retrieval scores every bucket entry by
    /// `alpha_r · Sim_text + gamma_r · Sim_scene` in a single pass.
    pub blend: Option<(f64, f64)>,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        MemoryConfig { alpha: 0.1, beta: 0.4, gamma: 0.5, tau_l: 0.001, k_mem: 20, shortlist: 10, blend: None }
    }
}

impl MemoryConfig {
    pub const RETRIEVAL_BLEND: (f64, f64) = (0.3, 0.7);

    pub fn validate(&self) -> Result<()> {
        let w = [self.alpha, self.beta, self.gamma];
        if w.iter().any(|v| !(*v >= 0.0)) || ((w.iter().sum::<f64>()) - 1.0).abs() > 1e-9 {
            return Err(Error::config("memory weights must be non-negative and sum to 1"));
        }
        if self.k_mem == 0 || self.shortlist == 0 {
            return Err(Error::config("memory capacity and shortlist must be positive"));
        }
        if !(self.tau_l >= 0.0) {
            return Err(Error::config("loss threshold must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryEntry {
    pub noisy_motion: Motion,
    /// Clean segment the prime was noised from; compared by `Sim_joints`.
    pub clean_motion: Motion,
    pub scene_context: LocalGrid,
    pub scene_feature: SceneFeature,
    pub text_embedding: TextEmbedding,
    pub prompt: String,
    pub admission_similarity: f64,
    pub loss: f64,
}

impl MemoryEntry {
    pub fn verb(&self) -> &str {
        &self.text_embedding.verb
    }
}

/// `α·Sim_scene + β·Sim_joints + γ·Sim_text`, each a cosine similarity.
pub fn combined_similarity(candidate: &MemoryEntry, reference: &MemoryEntry, cfg: &MemoryConfig) -> Result<f64> {
    if candidate.clean_motion.joints != reference.clean_motion.joints || candidate.clean_motion.data.len() != reference.clean_motion.data.len() {
        return Err(Error::input("memory entries have different motion shapes"));
    }
    let s = cosine_sim(&candidate.scene_feature.0, &reference.scene_feature.0)?;
    let j = cosine_sim(&candidate.clean_motion.data, &reference.clean_motion.data)?;
    let t = cosine_sim(&candidate.text_embedding.vector, &reference.text_embedding.vector)?;
    Ok(cfg.alpha * s + cfg.beta * j + cfg.gamma * t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StoreDecision {
    RejectedByLoss,
    Inserted,
    ReplacedIndex(usize),
    RejectedBySimilarity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PrimeSource {
    Memory,
    Gaussian,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryStore {
    pub cfg: MemoryConfig,
    pub buckets: BTreeMap<String, Vec<MemoryEntry>>,
}

impl MemoryStore {
    pub fn new(cfg: MemoryConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(MemoryStore { cfg, buckets: BTreeMap::new() })
    }

    pub fn len(&self) -> usize {
        self.buckets.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn bucket(&self, verb: &str) -> &[MemoryEntry] {
        self.buckets.get(verb).map(Vec::as_slice).unwrap_or(&[])
    }

    fn mean_similarity(&self, e: &MemoryEntry, members: &[MemoryEntry], skip: Option<usize>) -> Result<f64> {
        let mut total = 0.0;
        let mut n = 0;
        for (i, m) in members.iter().enumerate() {
            if Some(i) == skip {
                continue;
            }
            total += combined_similarity(e, m, &self.cfg)?;
            n += 1;
        }
        Ok(if n == 0 { 0.0 } else { total / n as f64 })
    }

    /// Per-member mean similarity to the rest of its bucket.
    pub fn member_scores(&self, verb: &str) -> Result<Vec<f64>> {
        let b = self.bucket(verb);
        (0..b.len()).map(|i| self.mean_similarity(&b[i], b, Some(i))).collect()
    }

    /// Loss-gated admission with similarity-based replacement.
    pub fn consider_store(&mut self, mut entry: MemoryEntry, training_loss: f64) -> Result<StoreDecision> {
        if !(training_loss <= self.cfg.tau_l) {
            return Ok(StoreDecision::RejectedByLoss);
        }
        entry.loss = training_loss;
        let verb = entry.verb().to_string();
        let members = self.bucket(&verb);
        let score = self.mean_similarity(&entry, members, None)?;
        entry.admission_similarity = score;
        if members.len() < self.cfg.k_mem {
            self.buckets.entry(verb).or_default().push(entry);
            return Ok(StoreDecision::Inserted);
        }
        let scores = self.member_scores(&verb)?;
        let (worst, min) = scores
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, &s)| if s < acc.1 { (i, s) } else { acc });
        if score > min {
            self.buckets.get_mut(&verb).expect("bucket exists")[worst] = entry;
            Ok(StoreDecision::ReplacedIndex(worst))
        } else {
            Ok(StoreDecision::RejectedBySimilarity)
        }
    }

    /// Index of the selected entry in the prompt's bucket, if any.
    pub fn select(&self, text: &TextEmbedding, scene: &SceneFeature) -> Result<Option<usize>> {
        let b = self.bucket(&text.verb);
        if b.is_empty() {
            return Ok(None);
        }
        let text_sims: Vec<f64> = b.iter().map(|e| cosine_sim(&text.vector, &e.text_embedding.vector)).collect::<Result<_>>()?;
        let scene_sim = |i: usize| cosine_sim(&scene.0, &b[i].scene_feature.0);
        if let Some((ar, gr)) = self.cfg.blend {
            let mut best = (0, f64::NEG_INFINITY);
            for i in 0..b.len() {
                let s = ar * text_sims[i] + gr * scene_sim(i)?;
                if s > best.1 {
                    best = (i, s);
                }
            }
            return Ok(Some(best.0));
        }
        let mut order: Vec<usize> = (0..b.len()).collect();
        order.sort_by(|&x, &y| text_sims[y].total_cmp(&text_sims[x]).then(x.cmp(&y)));
        order.truncate(self.cfg.shortlist);
        let mut best = (order[0], f64::NEG_INFINITY);
        for &i in &order {
            let s = scene_sim(i)?;
            if s > best.1 {
                best = (i, s);
            }
        }
        Ok(Some(best.0))
    }

    /// Prime for a new segment: a stored `X_T` when the prompt's verb has a
    /// bucket, otherwise standard normal noise from `seed`.
    pub fn retrieve(&self, prompt: &str, scene: &SceneFeature, seed: u64) -> Result<(Motion, PrimeSource)> {
        let text = embed_text(prompt)?;
        match self.select(&text, scene)? {
            Some(i) => Ok((self.bucket(&text.verb)[i].noisy_motion.clone(), PrimeSource::Memory)),
            None => Ok((gaussian_prime(seed), PrimeSource::Gaussian)),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MEM_MAGIC)?;
        w.write_u32::<LE>(MEM_VERSION)?;
        let c = &self.cfg;
        for v in [c.alpha, c.beta, c.gamma, c.tau_l] {
            w.write_f64::<LE>(v)?;
        }
        w.write_u32::<LE>(c.k_mem as u32)?;
        w.write_u32::<LE>(c.shortlist as u32)?;
        match c.blend {
            Some((a, g)) => {
                w.write_u8(1)?;
                w.write_f64::<LE>(a)?;
                w.write_f64::<LE>(g)?;
            }
            None => w.write_u8(0)?,
        }
        w.write_u32::<LE>(self.buckets.len() as u32)?;
        for (verb, entries) in &self.buckets {
            write_str(&mut w, verb)?;
            w.write_u32::<LE>(entries.len() as u32)?;
            for e in entries {
                write_entry(&mut w, e)?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        read_store(&mut r).map_err(|e| match e {
            Error::Io(io) if io.kind() == std::io::ErrorKind::UnexpectedEof => Error::format("memory file is truncated"),
            other => other,
        })
    }

    /// Approximate serialized size: the two motions, scene bits and feature vectors of every entry.
    pub fn payload_estimate(&self) -> usize {
        self.buckets
            .values()
            .flatten()
            .map(|e| 8 * (2 * e.noisy_motion.data.len() + LOCAL_CELLS / 64 + e.scene_feature.0.len() + e.text_embedding.vector.len()))
            .sum()
    }
}

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    w.write_u32::<LE>(s.len() as u32)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn write_f64s<W: Write>(w: &mut W, v: &[f64]) -> Result<()> {
    for x in v {
        w.write_f64::<LE>(*x)?;
    }
    Ok(())
}

fn write_entry<W: Write>(w: &mut W, e: &MemoryEntry) -> Result<()> {
    write_str(w, &e.prompt)?;
    w.write_u32::<LE>(e.noisy_motion.frames as u32)?;
    w.write_u32::<LE>(e.noisy_motion.joints as u32)?;
    write_f64s(w, &e.noisy_motion.data)?;
    write_f64s(w, &e.clean_motion.data)?;
    for word in e.scene_context.bits.words() {
        w.write_u64::<LE>(*word)?;
    }
    write_f64s(w, &e.scene_context.center)?;
    w.write_f64::<LE>(e.scene_context.yaw)?;
    w.write_u32::<LE>(e.scene_feature.0.len() as u32)?;
    write_f64s(w, &e.scene_feature.0)?;
    w.write_u32::<LE>(e.text_embedding.vector.len() as u32)?;
    write_f64s(w, &e.text_embedding.vector)?;
    write_str(w, &e.text_embedding.verb)?;
    w.write_f64::<LE>(e.admission_similarity)?;
    w.write_f64::<LE>(e.loss)?;
    Ok(())
}

const MAX_STR: u32 = 1 << 20;
const MAX_LEN: u32 = 1 << 24;

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let n = r.read_u32::<LE>()?;
    if n > MAX_STR {
        return Err(Error::format("string length out of range"));
    }
    let mut buf = vec![0u8; n as usize];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| Error::format("string is not UTF-8"))
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut v = vec![0.0; n];
    r.read_f64_into::<LE>(&mut v)?;
    Ok(v)
}

fn read_vec<R: Read>(r: &mut R) -> Result<Vec<f64>> {
    let n = r.read_u32::<LE>()?;
    if n > MAX_LEN {
        return Err(Error::format("vector length out of range"));
    }
    read_f64s(r, n as usize)
}

fn read_entry<R: Read>(r: &mut R) -> Result<MemoryEntry> {
    let prompt = read_str(r)?;
    let frames = r.read_u32::<LE>()? as usize;
    let joints = r.read_u32::<LE>()? as usize;
    if frames == 0 || joints == 0 || frames * joints > MAX_LEN as usize {
        return Err(Error::format("motion shape out of range"));
    }
    let noisy = Motion::from_vec(frames, joints, read_f64s(r, frames * joints * 3)?)?;
    let clean = Motion::from_vec(frames, joints, read_f64s(r, frames * joints * 3)?)?;
    let mut words = vec![0u64; LOCAL_CELLS / 64];
    r.read_u64_into::<LE>(&mut words)?;
    let c = read_f64s(r, 3)?;
    let yaw = r.read_f64::<LE>()?;
    let scene_feature = SceneFeature(read_vec(r)?);
    let vector = read_vec(r)?;
    let verb = read_str(r)?;
    Ok(MemoryEntry {
        noisy_motion: noisy,
        clean_motion: clean,
        scene_context: LocalGrid { bits: BitCube::from_words(&words)?, center: [c[0], c[1], c[2]], yaw },
        scene_feature,
        text_embedding: TextEmbedding { vector, verb },
        prompt,
        admission_similarity: r.read_f64::<LE>()?,
        loss: r.read_f64::<LE>()?,
    })
}

fn read_store<R: Read>(r: &mut R) -> Result<MemoryStore> {
    let mut magic = [0u8; 7];
    r.read_exact(&mut magic)?;
    if &magic != MEM_MAGIC {
        return Err(Error::format("not a memory file"));
    }
    let version = r.read_u32::<LE>()?;
    if version != MEM_VERSION {
        return Err(Error::format(format!("unsupported memory version {version}")));
    }
    let w = read_f64s(r, 4)?;
    let k_mem = r.read_u32::<LE>()? as usize;
    let shortlist = r.read_u32::<LE>()? as usize;
    let blend = match r.read_u8()? {
        0 => None,
        1 => Some((r.read_f64::<LE>()?, r.read_f64::<LE>()?)),
        _ => return Err(Error::format("bad blend flag")),
    };
    let cfg = MemoryConfig { alpha: w[0], beta: w[1], gamma: w[2], tau_l: w[3], k_mem, shortlist, blend };
    cfg.validate().map_err(|e| Error::format(e.to_string()))?;
    let mut store = MemoryStore::new(cfg)?;
    let nb = r.read_u32::<LE>()?;
    for _ in 0..nb {
        let verb = read_str(r)?;
        let n = r.read_u32::<LE>()? as usize;
        if n > k_mem {
            return Err(Error::format("bucket exceeds capacity"));
        }
        let entries = (0..n).map(|_| read_entry(r)).collect::<Result<Vec<_>>>()?;
        store.buckets.insert(verb, entries);
    }
    Ok(store)
}

/// Standard-normal segment drawn from a seeded generator.
pub fn gaussian_prime(seed: u64) -> Motion {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = Motion::zeros(SEGMENT_FRAMES, NUM_JOINTS);
    m.data.iter_mut().for_each(|v| *v = StandardNormal.sample(&mut rng));
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::TEXT_DIM;
    use proptest::prelude::*;
    use rand::Rng;

    fn unit(v: Vec<f64>) -> Vec<f64> {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / n).collect()
    }

    fn entry(rng: &mut ChaCha8Rng, verb: &str) -> MemoryEntry {
        let mut clean = Motion::segment_zeros();
        clean.data.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        let mut noisy = Motion::segment_zeros();
        noisy.data.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        let mut bits = BitCube::default();
        bits.set(rng.random_range(0..LOCAL_CELLS), true);
        MemoryEntry {
            noisy_motion: noisy,
            clean_motion: clean,
            scene_context: LocalGrid { bits, center: [rng.random(), 0.0, rng.random()], yaw: rng.random() },
            scene_feature: SceneFeature((0..32).map(|_| rng.random_range(-1.0..1.0)).collect()),
            text_embedding: TextEmbedding { vector: unit((0..TEXT_DIM).map(|_| rng.random_range(-1.0..1.0)).collect()), verb: verb.into() },
            prompt: format!("{verb} somewhere"),
            admission_similarity: 0.0,
            loss: 0.0,
        }
    }

    #[test]
    fn identical_entries_have_unit_similarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let e = entry(&mut rng, "walk");
        let s = combined_similarity(&e, &e, &MemoryConfig::default()).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_text_leaves_scene_and_joint_terms() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = entry(&mut rng, "walk");
        let mut b = a.clone();
        let mut ta = vec![0.0; TEXT_DIM];
        ta[0] = 1.0;
        let mut tb = vec![0.0; TEXT_DIM];
        tb[1] = 1.0;
        let mut a = a;
        a.text_embedding.vector = ta;
        b.text_embedding.vector = tb;
        let s = combined_similarity(&a, &b, &MemoryConfig::default()).unwrap();
        assert!((s - 0.5).abs() < 1e-12);
    }

    fn cos(a: &[f64], b: &[f64]) -> f64 {
        let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        d / (a.iter().map(|x| x * x).sum::<f64>().sqrt() * b.iter().map(|x| x * x).sum::<f64>().sqrt())
    }

    #[test]
    fn random_pair_matches_three_term_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let a = entry(&mut rng, "sit");
            let b = entry(&mut rng, "sit");
            let o = 0.1 * cos(&a.scene_feature.0, &b.scene_feature.0)
                + 0.4 * cos(&a.clean_motion.data, &b.clean_motion.data)
                + 0.5 * cos(&a.text_embedding.vector, &b.text_embedding.vector);
            assert!((combined_similarity(&a, &b, &MemoryConfig::default()).unwrap() - o).abs() < 1e-9);
        }
        let a = entry(&mut rng, "sit");
        let mut b = a.clone();
        b.clean_motion = Motion::zeros(10, NUM_JOINTS);
        assert!(combined_similarity(&a, &b, &MemoryConfig::default()).is_err());
    }

    #[test]
    fn admission_gate_and_insert() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = MemoryStore::new(MemoryConfig::default()).unwrap();
        assert_eq!(store.consider_store(entry(&mut rng, "walk"), 0.01).unwrap(), StoreDecision::RejectedByLoss);
        assert_eq!(store.consider_store(entry(&mut rng, "walk"), f64::NAN).unwrap(), StoreDecision::RejectedByLoss);
        assert!(store.is_empty());
        assert_eq!(store.consider_store(entry(&mut rng, "walk"), 0.0).unwrap(), StoreDecision::Inserted);
        assert_eq!(store.bucket("walk").len(), 1);
    }

    #[test]
    fn full_bucket_replacement_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = MemoryConfig { k_mem: 5, ..MemoryConfig::default() };
        let mut store = MemoryStore::new(cfg).unwrap();
        let base = entry(&mut rng, "walk");
        for i in 0..5 {
            let mut e = base.clone();
            // Near-duplicates, with member 3 perturbed the most.
            let amp = if i == 3 { 0.8 } else { 0.02 };
            e.clean_motion.data.iter_mut().for_each(|v| *v += rng.random_range(-amp..amp));
            e.scene_feature.0.iter_mut().for_each(|v| *v += rng.random_range(-amp..amp));
            assert_eq!(store.consider_store(e, 0.0).unwrap(), StoreDecision::Inserted);
        }
        let novel = entry(&mut rng, "walk");
        assert_eq!(store.consider_store(novel, 0.0).unwrap(), StoreDecision::RejectedBySimilarity);

        let members = store.bucket("walk").to_vec();
        let brute: Vec<f64> = (0..5)
            .map(|i| {
                (0..5).filter(|&j| j != i).map(|j| combined_similarity(&members[i], &members[j], &cfg).unwrap()).sum::<f64>() / 4.0
            })
            .collect();
        let worst = (0..5).min_by(|&a, &b| brute[a].total_cmp(&brute[b])).unwrap();
        assert_eq!(worst, 3);
        let dup = base.clone();
        let s: f64 = members.iter().map(|m| combined_similarity(&dup, m, &cfg).unwrap()).sum::<f64>() / 5.0;
        assert!(s > brute[worst]);
        assert_eq!(store.consider_store(dup.clone(), 0.0).unwrap(), StoreDecision::ReplacedIndex(3));
        assert_eq!(store.bucket("walk")[3].clean_motion, dup.clean_motion);
    }

    #[test]
    fn retrieval_fallback_and_single_entry() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let store = MemoryStore::new(MemoryConfig::default()).unwrap();
        let scene = SceneFeature(vec![0.5; 32]);
        let (a, sa) = store.retrieve("wave hello", &scene, 9).unwrap();
        let (b, _) = store.retrieve("wave hello", &scene, 9).unwrap();
        assert_eq!(sa, PrimeSource::Gaussian);
        assert_eq!(a, b);
        assert_ne!(a, store.retrieve("wave hello", &scene, 10).unwrap().0);

        let mut store = store;
        let mut e = entry(&mut rng, "walk");
        e.text_embedding = embed_text("walk to the table").unwrap();
        store.consider_store(e.clone(), 0.0).unwrap();
        let before = store.clone();
        let (p, src) = store.retrieve("walk quickly", &scene, 1).unwrap();
        assert_eq!(src, PrimeSource::Memory);
        assert_eq!(p, e.noisy_motion);
        assert_eq!(store, before);
    }

    #[test]
    fn two_stage_retrieval_matches_exhaustive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut store = MemoryStore::new(MemoryConfig::default()).unwrap();
        let query_text = embed_text("sit on the chair").unwrap();
        for _ in 0..20 {
            let mut e = entry(&mut rng, "sit");
            let mix: f64 = rng.random_range(0.0..1.0);
            let noise: Vec<f64> = (0..TEXT_DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
            e.text_embedding.vector = unit(query_text.vector.iter().zip(&noise).map(|(q, n)| mix * q + (1.0 - mix) * n).collect());
            store.buckets.entry("sit".into()).or_default().push(e);
        }
        let scene = SceneFeature((0..32).map(|_| rng.random_range(-1.0..1.0)).collect());
        let b = store.bucket("sit");
        let mut by_text: Vec<(f64, usize)> = b.iter().enumerate().map(|(i, e)| (cos(&query_text.vector, &e.text_embedding.vector), i)).collect();
        by_text.sort_by(|x, y| y.0.total_cmp(&x.0));
        let oracle = by_text[..10]
            .iter()
            .map(|&(_, i)| (cos(&scene.0, &b[i].scene_feature.0), i))
            .max_by(|x, y| x.0.total_cmp(&y.0))
            .unwrap()
            .1;
        assert_eq!(store.select(&query_text, &scene).unwrap(), Some(oracle));
        let (prime, _) = store.retrieve("sit on the chair", &scene, 0).unwrap();
        assert_eq!(prime, b[oracle].noisy_motion);

        let mut blended = store.clone();
        blended.cfg.blend = Some(MemoryConfig::RETRIEVAL_BLEND);
        let o2 = (0..20)
            .map(|i| (0.3 * cos(&query_text.vector, &b[i].text_embedding.vector) + 0.7 * cos(&scene.0, &b[i].scene_feature.0), i))
            .max_by(|x, y| x.0.total_cmp(&y.0))
            .unwrap()
            .1;
        assert_eq!(blended.select(&query_text, &scene).unwrap(), Some(o2));
    }

    #[test]
    fn save_load_round_trip_and_truncation() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut store = MemoryStore::new(MemoryConfig { blend: Some((0.3, 0.7)), ..MemoryConfig::default() }).unwrap();
        for verb in ["walk", "sit", "walk", "drink"] {
            store.consider_store(entry(&mut rng, verb), 0.0005).unwrap();
        }
        let mut buf = Vec::new();
        store.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..7], MEM_MAGIC);
        let back = MemoryStore::read_from(&buf[..]).unwrap();
        assert_eq!(back, store);
        for cut in [3, 20, buf.len() / 2, buf.len() - 1] {
            assert!(matches!(MemoryStore::read_from(&buf[..cut]), Err(Error::Format(_))), "cut {cut}");
        }
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(MemoryStore::read_from(&bad[..]), Err(Error::Format(_))));
    }

    #[test]
    fn file_size_tracks_payload() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cfg = MemoryConfig { k_mem: 100, ..MemoryConfig::default() };
        let mut store = MemoryStore::new(cfg).unwrap();
        for i in 0..400 {
            let verb = ["walk", "sit", "reach", "drink"][i % 4];
            store.buckets.entry(verb.into()).or_default().push(entry(&mut rng, verb));
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.mem");
        store.save(&path).unwrap();
        let size = std::fs::metadata(&path).unwrap().len() as f64;
        let est = store.payload_estimate() as f64;
        assert!(size <= 2.0 * est && size >= 0.5 * est, "{size} vs {est}");
        assert_eq!(MemoryStore::load(&path).unwrap(), store);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn capacity_and_gate_hold(ops in proptest::collection::vec((0usize..3, 0u64..1000, 0.0f64..0.003), 1..60)) {
            let cfg = MemoryConfig { k_mem: 4, ..MemoryConfig::default() };
            let mut store = MemoryStore::new(cfg).unwrap();
            for (v, seed, loss) in ops {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let e = entry(&mut rng, ["walk", "sit", "reach"][v]);
                store.consider_store(e, loss).unwrap();
                for b in store.buckets.values() {
                    prop_assert!(b.len() <= cfg.k_mem);
                    prop_assert!(b.iter().all(|e| e.loss <= cfg.tau_l));
                }
            }
        }
    }

    #[test]
    fn gaussian_prime_is_standard_normal() {
        let p = gaussian_prime(3);
        let n = p.data.len() as f64;
        let mean = p.data.iter().sum::<f64>() / n;
        let var = p.data.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.1 && (var - 1.0).abs() < 0.1);
        assert_eq!(gaussian_prime(3), p);
    }
}
