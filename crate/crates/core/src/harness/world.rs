use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::control::{AnswerRule, Binding, Plan};
use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::graph::{EntityKind, GraphConfig};
use crate::identity::VoiceSegment;
use crate::memorize::{ClipInput, LocalShortClip, MemoryEntry, TaggedObservation};

pub const WORLD_FILE: &str = "world.json";
pub const CLIPS_FILE: &str = "clips.jsonl";
pub const WORLD_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub num_identities: usize,
    pub num_clips: usize,
    /// Expected Euclidean norm of the Gaussian perturbation added to each
    /// observation before re-normalizing.
    pub noise_sigma: f64,
    pub facts_per_identity: usize,
    pub question_count: usize,
    pub seed: u64,
    #[serde(default = "default_dim")]
    pub face_dim: usize,
    #[serde(default = "default_dim")]
    pub voice_dim: usize,
    /// Largest allowed |cosine| between two identities' latents of one modality.
    #[serde(default = "default_separation")]
    pub latent_separation: f64,
    /// Chance that a solo short clip pairs a face with another cast member's voice.
    #[serde(default = "default_offscreen")]
    pub offscreen_rate: f64,
}

fn default_dim() -> usize {
    64
}

fn default_separation() -> f64 {
    0.2
}

fn default_offscreen() -> f64 {
    0.1
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            num_identities: 10,
            num_clips: 100,
            noise_sigma: 0.15,
            facts_per_identity: 2,
            question_count: 20,
            seed: 0,
            face_dim: default_dim(),
            voice_dim: default_dim(),
            latent_separation: default_separation(),
            offscreen_rate: default_offscreen(),
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_identities == 0 {
            return Err(Error::invalid("num_identities must be positive"));
        }
        if self.facts_per_identity == 0 {
            return Err(Error::invalid("facts_per_identity must be positive"));
        }
        if self.num_clips == 0 && self.question_count > 0 {
            return Err(Error::invalid("questions need at least one clip"));
        }
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return Err(Error::invalid("noise_sigma must be a finite non-negative number"));
        }
        if self.face_dim < 2 || self.voice_dim < 2 {
            return Err(Error::invalid("latent dimensions must be at least 2"));
        }
        if !(self.latent_separation > 0.0 && self.latent_separation <= 1.0) {
            return Err(Error::invalid("latent_separation must lie in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.offscreen_rate) {
            return Err(Error::invalid("offscreen_rate must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Graph configuration whose entity dimensions fit this world.
    pub fn graph_config(&self) -> GraphConfig {
        GraphConfig { face_dim: self.face_dim, voice_dim: self.voice_dim, ..GraphConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fact {
    pub predicate: String,
    pub object: String,
    /// Clip holding the fact, if it was placed.
    pub clip: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Identity {
    pub name: String,
    pub face: Embedding,
    pub voice: Embedding,
    pub facts: Vec<Fact>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaPair {
    pub question: String,
    pub answer: String,
    pub plan: Plan,
    pub identity: usize,
    pub evidence_clip: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticWorld {
    pub version: u32,
    pub config: WorldConfig,
    pub identities: Vec<Identity>,
    /// Per clip, which identity each local tag belongs to.
    pub clip_truth: Vec<BTreeMap<String, usize>>,
    pub qa: Vec<QaPair>,
    #[serde(skip)]
    pub clips: Vec<ClipInput>,
}

const NAMES: &[&str] = &[
    "Alice", "Bob", "Carol", "Dave", "Erin", "Frank", "Grace", "Heidi", "Ivan", "Judy", "Mallory", "Niaj", "Olivia",
    "Peggy", "Rupert", "Sybil", "Trent", "Victor", "Walter", "Yolanda",
];

struct Predicate {
    verb: &'static str,
    question: &'static str,
    objects: &'static [&'static str],
}

const PREDICATES: &[Predicate] = &[
    Predicate {
        verb: "likes",
        question: "What does {name} like?",
        objects: &["pizza", "jazz", "tennis", "chess", "sushi", "hiking", "painting", "coffee", "poetry", "cycling"],
    },
    Predicate {
        verb: "owns",
        question: "What does {name} own?",
        objects: &["a bicycle", "a piano", "a camera", "a kayak", "a telescope", "a guitar", "a scooter", "a drone"],
    },
    Predicate {
        verb: "works as",
        question: "What does {name} work as?",
        objects: &["a nurse", "a chef", "a pilot", "a teacher", "a plumber", "a lawyer", "a baker", "a florist"],
    },
    Predicate {
        verb: "lives in",
        question: "Where does {name} live?",
        objects: &["Lisbon", "Denver", "Osaka", "Nairobi", "Oslo", "Lima", "Hanoi", "Quebec", "Perth"],
    },
];

const ACTIVITIES: &[&str] = &[
    "walks into the kitchen",
    "opens the window",
    "sits on the sofa",
    "picks up a red folder",
    "waters the plants",
    "checks the phone",
    "pours a glass of water",
    "closes the door",
    "reads a newspaper",
    "puts on a coat",
];

const REMARKS: &[&str] = &[
    "talks about the weather",
    "mentions the meeting tomorrow",
    "asks where the keys are",
    "complains about the traffic",
    "laughs at a joke",
];

fn name_for(i: usize) -> String {
    let base = NAMES[i % NAMES.len()];
    match i / NAMES.len() {
        0 => base.to_string(),
        k => format!("{base}{}", k + 1),
    }
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Embedding {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        if let Ok(e) = Embedding::from_f64(&v) {
            return e;
        }
    }
}

/// Random unit vectors whose pairwise |cosine| stays at or below `separation`,
/// by rejection. Gives up on the constraint after a bounded number of tries.
fn separated_latents(rng: &mut ChaCha8Rng, n: usize, dim: usize, separation: f64) -> Vec<Embedding> {
    let mut out: Vec<Embedding> = Vec::with_capacity(n);
    while out.len() < n {
        let mut candidate = random_unit(rng, dim);
        for _ in 0..10_000 {
            if out.iter().all(|o| o.dot(&candidate).map(|c| c.abs() <= separation).unwrap_or(false)) {
                break;
            }
            candidate = random_unit(rng, dim);
        }
        out.push(candidate);
    }
    out
}

/// `latent + noise`, re-normalized; the noise has expected norm `sigma`.
pub fn perturb(rng: &mut ChaCha8Rng, latent: &Embedding, sigma: f64) -> Embedding {
    if sigma == 0.0 {
        return latent.clone();
    }
    let per = sigma / (latent.dim() as f64).sqrt();
    let v: Vec<f64> = latent
        .as_slice()
        .iter()
        .map(|&x| {
            let z: f64 = StandardNormal.sample(rng);
            x as f64 + per * z
        })
        .collect();
    Embedding::from_f64(&v).unwrap_or_else(|_| latent.clone())
}

fn plan_for(name: &str, verb: &str) -> Plan {
    Plan {
        searches: vec![format!("their name is {name}"), format!("{{character}} {verb}")],
        binding: Some(Binding { name: name.to_string() }),
        answer: AnswerRule::Pattern(format!(r"^{{character}} {} (.+)$", regex::escape(verb))),
    }
}

/// Builds a deterministic world from `config`.
///
/// Clip `c` is led by identity `c mod N`, who always gets a solo short clip,
/// so every identity leading at least twice yields two or more meta-clips.
/// Names are spoken (voice-referenced entries) and facts are seen
/// (face-referenced entries), so answering needs the face/voice link.
pub fn generate_world(config: &WorldConfig) -> Result<SyntheticWorld> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.num_identities;
    let faces = separated_latents(&mut rng, n, config.face_dim, config.latent_separation);
    let voices = separated_latents(&mut rng, n, config.voice_dim, config.latent_separation);
    let mut identities: Vec<Identity> = (0..n)
        .map(|i| {
            let facts = (0..config.facts_per_identity)
                .map(|k| {
                    let p = &PREDICATES[k % PREDICATES.len()];
                    Fact {
                        predicate: p.verb.to_string(),
                        object: p.objects.choose(&mut rng).expect("non-empty").to_string(),
                        clip: None,
                    }
                })
                .collect();
            Identity { name: name_for(i), face: faces[i].clone(), voice: voices[i].clone(), facts }
        })
        .collect();

    let mut clips = Vec::with_capacity(config.num_clips);
    let mut clip_truth = Vec::with_capacity(config.num_clips);
    let mut lead_count = vec![0usize; n];
    let mut named = vec![false; n];
    for c in 0..config.num_clips {
        let lead = c % n;
        let extra = rng.random_range(0..=2usize).min(n - 1);
        let mut others: Vec<usize> = (0..n).filter(|&i| i != lead).collect();
        others.shuffle(&mut rng);
        let mut cast = vec![lead];
        cast.extend(others.into_iter().take(extra));

        let mut observations = Vec::new();
        let mut truth = BTreeMap::new();
        for (p, &who) in cast.iter().enumerate() {
            let (ft, vt) = (format!("f{p}"), format!("v{p}"));
            observations.push(TaggedObservation {
                tag: ft.clone(),
                modality: EntityKind::Face,
                embedding: perturb(&mut rng, &identities[who].face, config.noise_sigma),
                segments: vec![],
            });
            let start = rng.random_range(0.0..20.0f64);
            let len = rng.random_range(2.5..8.0f64);
            observations.push(TaggedObservation {
                tag: vt.clone(),
                modality: EntityKind::Voice,
                embedding: perturb(&mut rng, &identities[who].voice, config.noise_sigma),
                segments: vec![VoiceSegment { start_s: start, end_s: start + len, transcript: String::new() }],
            });
            truth.insert(ft, who);
            truth.insert(vt, who);
        }

        let mut short_clips = vec![solo(0, 0)];
        for p in 1..cast.len() {
            if rng.random_bool(0.5) {
                short_clips.push(solo(p, p));
            }
        }
        if cast.len() > 1 {
            short_clips.push(LocalShortClip {
                faces: (0..cast.len()).map(|p| format!("f{p}")).collect(),
                voices: vec![format!("v{}", rng.random_range(0..cast.len()))],
            });
            if rng.random_bool(config.offscreen_rate) {
                short_clips.push(solo(0, rng.random_range(1..cast.len())));
            }
        }

        let mut entries = Vec::new();
        for (p, &who) in cast.iter().enumerate() {
            entries.push(MemoryEntry::episodic(format!("{{f{p}}} {}", ACTIVITIES.choose(&mut rng).unwrap())));
            entries.push(MemoryEntry::episodic(format!("{{v{p}}} {}", REMARKS.choose(&mut rng).unwrap())));
            if p == 0 || !named[who] {
                entries.push(MemoryEntry::semantic(format!("{{v{p}}} says their name is {}", identities[who].name)));
                named[who] = true;
            }
        }
        let k = lead_count[lead];
        if let Some(fact) = identities[lead].facts.get_mut(k) {
            entries.push(MemoryEntry::semantic(format!("{{f0}} {} {}", fact.predicate, fact.object)));
            fact.clip = Some(c as u64);
        }
        lead_count[lead] += 1;

        clips.push(ClipInput { clip_index: c as u64, observations, short_clips, generated: Some(entries) });
        clip_truth.push(truth);
    }

    let mut placed: Vec<(usize, usize)> = identities
        .iter()
        .enumerate()
        .flat_map(|(i, id)| id.facts.iter().enumerate().filter(|(_, f)| f.clip.is_some()).map(move |(k, _)| (i, k)))
        .collect();
    placed.shuffle(&mut rng);
    let mut qa = Vec::with_capacity(config.question_count);
    if !placed.is_empty() {
        for q in 0..config.question_count {
            let (i, k) = placed[q % placed.len()];
            let id = &identities[i];
            let fact = &id.facts[k];
            let p = PREDICATES.iter().find(|p| p.verb == fact.predicate).expect("known predicate");
            qa.push(QaPair {
                question: p.question.replace("{name}", &id.name),
                answer: fact.object.clone(),
                plan: plan_for(&id.name, &fact.predicate),
                identity: i,
                evidence_clip: fact.clip,
            });
        }
    }

    Ok(SyntheticWorld { version: WORLD_FORMAT_VERSION, config: config.clone(), identities, clip_truth, qa, clips })
}

fn solo(face: usize, voice: usize) -> LocalShortClip {
    LocalShortClip { faces: vec![format!("f{face}")], voices: vec![format!("v{voice}")] }
}

impl SyntheticWorld {
    /// Writes `world.json` and `clips.jsonl` into `dir`, creating it if needed.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(WORLD_FILE), serde_json::to_string_pretty(self)? + "\n")?;
        write_clips(&dir.join(CLIPS_FILE), &self.clips)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join(WORLD_FILE))?;
        let mut world: SyntheticWorld = serde_json::from_str(&text)?;
        if world.version != WORLD_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "world format version {} is not supported (expected {WORLD_FORMAT_VERSION})",
                world.version
            )));
        }
        world.clips = read_clips(&dir.join(CLIPS_FILE))?;
        if world.clips.len() != world.clip_truth.len() {
            return Err(Error::Format("clips.jsonl and world.json disagree on the clip count".into()));
        }
        Ok(world)
    }
}

pub fn write_clips(path: &Path, clips: &[ClipInput]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for c in clips {
        serde_json::to_writer(&mut w, c)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a JSON-lines clip stream; blank lines are skipped.
pub fn read_clips(path: &Path) -> Result<Vec<ClipInput>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let clip =
            serde_json::from_str(&line).map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), n + 1)))?;
        out.push(clip);
    }
    Ok(out)
}
