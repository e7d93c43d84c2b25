//! Fixed-width feature encoders for text, local scene, position and goal.
//!
//! The text encoder is a deterministic signed hashed bag of words; the scene
//! encoder pools the 32³ local window into 4³ patches and maps the 512 patch
//! means through a two-layer network. Position and goal encoders are small
//! MLPs. All learned encoders live in a shared [`ParamStore`].

use std::collections::HashMap;
use std::sync::OnceLock;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::nn::{sinusoidal, Graph, Linear, Mat, ParamStore, Var};
use crate::voxel::LocalGrid;

pub const TEXT_DIM: usize = 64;
pub const FEATURE_DIM: usize = 32;
pub const PATCH_COUNT: usize = 512;
pub const SCENE_HIDDEN: usize = 64;
pub const POS_INPUT: usize = 16;

/// Verbs recognised as memory keys.
pub const VERB_LEXICON: [&str; 40] = [
    "walk", "run", "sit", "stand", "reach", "drink", "lie", "jog", "jump", "turn", "pick", "place", "put", "grab",
    "open", "close", "push", "pull", "carry", "lift", "throw", "kick", "wave", "climb", "bend", "kneel", "crouch",
    "squat", "step", "stop", "look", "eat", "read", "type", "write", "sweep", "wipe", "touch", "hold", "lean",
];

const IRREGULAR: [(&str, &str); 20] = [
    ("ran", "run"),
    ("sat", "sit"),
    ("stood", "stand"),
    ("lying", "lie"),
    ("lay", "lie"),
    ("lain", "lie"),
    ("drank", "drink"),
    ("drunk", "drink"),
    ("ate", "eat"),
    ("eaten", "eat"),
    ("wrote", "write"),
    ("written", "write"),
    ("held", "hold"),
    ("threw", "throw"),
    ("thrown", "throw"),
    ("knelt", "kneel"),
    ("carries", "carry"),
    ("carried", "carry"),
    ("leant", "lean"),
    ("bent", "bend"),
];

fn verb_forms() -> &'static HashMap<String, &'static str> {
    static FORMS: OnceLock<HashMap<String, &'static str>> = OnceLock::new();
    FORMS.get_or_init(|| {
        let mut map = HashMap::new();
        for &v in VERB_LEXICON.iter() {
            let mut forms = vec![
                v.to_string(),
                format!("{v}s"),
                format!("{v}es"),
                format!("{v}ing"),
                format!("{v}ed"),
            ];
            if let Some(stem) = v.strip_suffix('e') {
                forms.push(format!("{stem}ing"));
                forms.push(format!("{v}d"));
            }
            let last = v.chars().last().unwrap_or('a');
            if !"aeiouwy".contains(last) {
                forms.push(format!("{v}{last}ing"));
                forms.push(format!("{v}{last}ed"));
            }
            for f in forms {
                map.entry(f).or_insert(v);
            }
        }
        for (form, base) in IRREGULAR {
            if let Some(&v) = VERB_LEXICON.iter().find(|&&v| v == base) {
                map.insert(form.to_string(), v);
            }
        }
        map
    })
}

fn tokenize(prompt: &str) -> Vec<String> {
    prompt
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Memory key of a prompt: the first lexicon verb (any inflection), else the first word.
pub fn extract_verb(prompt: &str) -> Option<String> {
    let tokens = tokenize(prompt);
    let forms = verb_forms();
    tokens
        .iter()
        .find_map(|t| forms.get(t.as_str()).map(|v| v.to_string()))
        .or_else(|| tokens.first().cloned())
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextEmbedding {
    pub vector: Vec<f64>,
    pub verb: String,
}

pub fn embed_text(prompt: &str) -> Result<TextEmbedding> {
    let trimmed = prompt.trim();
    if trimmed.is_empty() {
        return Err(Error::input("prompt must not be empty"));
    }
    let mut tokens = tokenize(trimmed);
    if tokens.is_empty() {
        tokens.push(trimmed.to_lowercase());
    }
    let mut v = vec![0.0; TEXT_DIM];
    for t in &tokens {
        let h = fnv1a(t.as_bytes());
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        v[(h % TEXT_DIM as u64) as usize] += sign;
    }
    let mut norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        // Every token cancelled out; fall back to the whole-prompt bucket.
        let h = fnv1a(trimmed.to_lowercase().as_bytes());
        v[(h % TEXT_DIM as u64) as usize] = 1.0;
        norm = 1.0;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    let verb = extract_verb(trimmed).unwrap_or_default();
    Ok(TextEmbedding { vector: v, verb })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFeature(pub Vec<f64>);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionFeature(pub Vec<f64>);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalFeature(pub Vec<f64>);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneDelta(pub Vec<f64>);

impl SceneDelta {
    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

pub fn scene_feature_delta(curr: &SceneFeature, prev: &SceneFeature) -> Result<SceneDelta> {
    if curr.0.len() != prev.0.len() {
        return Err(Error::input(format!(
            "scene feature dims differ: {} vs {}",
            curr.0.len(),
            prev.0.len()
        )));
    }
    Ok(SceneDelta(curr.0.iter().zip(&prev.0).map(|(a, b)| a - b).collect()))
}

/// Cosine similarity clamped to [-1, 1]; 0 when either vector is zero.
pub fn cosine_sim(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::input(format!("cosine_sim length mismatch: {} vs {}", a.len(), b.len())));
    }
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return Ok(0.0);
    }
    Ok((ab / (aa.sqrt() * bb.sqrt())).clamp(-1.0, 1.0))
}

/// Two-layer MLP with a tanh hidden layer.
#[derive(Debug, Clone, Copy)]
pub struct Mlp2 {
    pub l1: Linear,
    pub l2: Linear,
}

impl Mlp2 {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, dims: [usize; 3], rng: &mut R) -> Self {
        Mlp2 {
            l1: Linear::new(store, &format!("{name}.l1"), dims[0], dims[1], rng),
            l2: Linear::new(store, &format!("{name}.l2"), dims[1], dims[2], rng),
        }
    }

    pub fn zeros(store: &mut ParamStore, name: &str, dims: [usize; 3]) -> Self {
        Mlp2 {
            l1: Linear::zeros(store, &format!("{name}.l1"), dims[0], dims[1]),
            l2: Linear::zeros(store, &format!("{name}.l2"), dims[1], dims[2]),
        }
    }

    pub fn lookup(store: &ParamStore, name: &str) -> Option<Self> {
        Some(Mlp2 {
            l1: Linear::lookup(store, &format!("{name}.l1"))?,
            l2: Linear::lookup(store, &format!("{name}.l2"))?,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let h = self.l1.forward(g, x);
        let h = g.tanh(h);
        self.l2.forward(g, h)
    }

    pub fn apply(&self, store: &ParamStore, x: &Mat) -> Mat {
        let h = self.l1.apply(store, x).mapv(f64::tanh);
        self.l2.apply(store, &h)
    }
}

/// Learned encoders shared by the navigator and the denoiser.
#[derive(Debug, Clone, Copy)]
pub struct Encoders {
    pub scene: Mlp2,
    pub position: Mlp2,
    pub goal: Mlp2,
}

impl Encoders {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R) -> Self {
        Encoders {
            scene: Mlp2::new(store, "enc.scene", [PATCH_COUNT, SCENE_HIDDEN, FEATURE_DIM], rng),
            position: Mlp2::new(store, "enc.pos", [POS_INPUT, FEATURE_DIM, FEATURE_DIM], rng),
            goal: Mlp2::new(store, "enc.goal", [3, FEATURE_DIM, FEATURE_DIM], rng),
        }
    }

    pub fn lookup(store: &ParamStore) -> Option<Self> {
        Some(Encoders {
            scene: Mlp2::lookup(store, "enc.scene")?,
            position: Mlp2::lookup(store, "enc.pos")?,
            goal: Mlp2::lookup(store, "enc.goal")?,
        })
    }

    pub fn encode_scene_patches(&self, store: &ParamStore, patches: &[f64]) -> SceneFeature {
        let x = Mat::from_shape_vec((1, PATCH_COUNT), patches.to_vec()).expect("patch count");
        SceneFeature(self.scene.apply(store, &x).into_raw_vec_and_offset().0)
    }

    pub fn encode_position(&self, store: &ParamStore, pos: Vec3, step: usize) -> PositionFeature {
        let x = Mat::from_shape_vec((1, POS_INPUT), position_input(pos, step)).expect("pos input");
        PositionFeature(self.position.apply(store, &x).into_raw_vec_and_offset().0)
    }

    pub fn encode_goal(&self, store: &ParamStore, goal: Vec3) -> GoalFeature {
        let x = Mat::from_shape_vec((1, 3), goal.to_vec()).expect("goal input");
        GoalFeature(self.goal.apply(store, &x).into_raw_vec_and_offset().0)
    }
}

/// Position padded to the step-embedding width with the sinusoidal step code added.
pub fn position_input(pos: Vec3, step: usize) -> Vec<f64> {
    let mut v = sinusoidal(step, POS_INPUT);
    for k in 0..3 {
        v[k] += pos[k];
    }
    v
}

pub fn encode_local_scene(local: &LocalGrid, enc: &Encoders, store: &ParamStore) -> SceneFeature {
    enc.encode_scene_patches(store, &local.patch_means())
}

pub fn encode_position(pos: Vec3, step_index: usize, enc: &Encoders, store: &ParamStore) -> PositionFeature {
    enc.encode_position(store, pos, step_index)
}

pub fn encode_goal(goal: Vec3, enc: &Encoders, store: &ParamStore) -> GoalFeature {
    enc.encode_goal(store, goal)
}
