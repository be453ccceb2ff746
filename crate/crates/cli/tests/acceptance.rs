//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use mnemo_core::control::{
    run_control, ControlConfig, Message, Policy, Prompts, Role, ScriptedPolicy, Termination, Trajectory,
};
use mnemo_core::embedding::{cosine, mock_embed, MockEmbedder};
use mnemo_core::graph::{
    self, CharacterMap, EdgeKind, EntityKind, EntryKind, MemoryGraph, NodeId, NodeKind, NodeUpdate,
};
use mnemo_core::harness::{generate_world, run_eval_in_process, EvalConfig, WorldConfig};
use mnemo_core::identity::{build_meta_dictionary, extract_meta_clips, ShortClip};
use mnemo_core::retrieval::{format_results, search_clip};
use mnemo_core::rl::{clipped_term, dapo_group_filter, group_advantages, kl_estimate, TokenMask};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------------------
// 1. Meta-dictionary construction against a step-by-step execution of the
//    published listing.

fn listing_oracle(clips: &[ShortClip], p: f64) -> BTreeMap<NodeId, NodeId> {
    let mut meta = Vec::new();
    for c in clips {
        if c.faces.len() == 1 && c.voices.len() == 1 {
            meta.push((c.index, *c.faces.iter().next().unwrap(), *c.voices.iter().next().unwrap()));
        }
    }
    let mut e: BTreeMap<(NodeId, NodeId), u64> = BTreeMap::new();
    for &(_, f, v) in &meta {
        *e.entry((f, v)).or_insert(0) += 1;
    }
    e.retain(|_, w| *w != 1);

    let faces: BTreeSet<NodeId> = e.keys().map(|k| k.0).collect();
    for f in faces {
        let mut nf: Vec<(NodeId, u64)> = e.iter().filter(|(k, _)| k.0 == f).map(|(k, w)| (k.1, *w)).collect();
        nf.sort_by_key(|(v, _)| v.ordinal);
        let mut star = nf[0];
        for &(v, w) in &nf[1..] {
            if w > star.1 {
                star = (v, w);
            }
        }
        let total: u64 = nf.iter().map(|(_, w)| w).sum();
        if star.1 as f64 / total as f64 >= p {
            e.retain(|k, _| k.0 != f || k.1 == star.0);
        } else {
            e.retain(|k, _| k.0 != f);
        }
    }

    let voices: BTreeSet<NodeId> = e.keys().map(|k| k.1).collect();
    for v in voices {
        let mut nv: Vec<(NodeId, u64)> = e.iter().filter(|(k, _)| k.1 == v).map(|(k, w)| (k.0, *w)).collect();
        nv.sort_by_key(|(f, _)| f.ordinal);
        let mut star = nv[0];
        for &(f, w) in &nv[1..] {
            if w > star.1 {
                star = (f, w);
            }
        }
        e.retain(|k, _| k.1 != v || k.0 == star.0);
    }

    let mut m = BTreeMap::new();
    for (f, v) in e.keys() {
        m.insert(*v, *f);
    }
    m
}

fn random_short_clips(rng: &mut ChaCha8Rng) -> Vec<ShortClip> {
    let nf = rng.random_range(1..=10u64);
    let nv = rng.random_range(1..=10u64);
    let n = rng.random_range(0..=200usize);
    let preferred: Vec<u64> = (0..nf).map(|_| rng.random_range(0..nv)).collect();
    let loyalty = rng.random_range(0.0..1.0);
    (0..n)
        .map(|i| {
            let f = rng.random_range(0..nf);
            let v = if rng.random_bool(loyalty) { preferred[f as usize] } else { rng.random_range(0..nv) };
            let mut faces = BTreeSet::from([NodeId::face(f)]);
            let mut voices = BTreeSet::from([NodeId::voice(v)]);
            if rng.random_bool(0.15) {
                faces.insert(NodeId::face(rng.random_range(0..nf)));
            }
            if rng.random_bool(0.1) {
                voices.insert(NodeId::voice(rng.random_range(0..nv)));
            }
            if rng.random_bool(0.05) {
                voices.clear();
            }
            ShortClip { index: i as u64, faces, voices }
        })
        .collect()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut nonempty = 0;
    for case in 0..1000 {
        let clips = random_short_clips(&mut rng);
        let p = *[0.51, 0.6, 0.75, 0.9, 1.0].choose(&mut rng).unwrap();
        let got = build_meta_dictionary(&extract_meta_clips(&clips), p).map_err(|e| e.to_string())?;
        let want = listing_oracle(&clips, p);
        check(got.mapping == want, || format!("case {case}: got {:?}, oracle {:?}", got.mapping, want))?;
        nonempty += usize::from(!want.is_empty());
    }
    let elapsed = start.elapsed();
    check(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
    Ok(format!("1000/1000 agree ({nonempty} non-empty), {:.2}s", elapsed.as_secs_f64()))
}

// ---------------------------------------------------------------------------
// 2. Identity-resolution mapping accuracy on synthetic worlds.

fn criterion_2() -> Outcome {
    let config = EvalConfig::default();
    let mut noisy = Vec::new();
    for seed in 0..50 {
        let cfg = WorldConfig { num_identities: 10, num_clips: 100, noise_sigma: 0.15, seed, ..Default::default() };
        let world = generate_world(&cfg).map_err(|e| e.to_string())?;
        noisy.push(run_eval_in_process(&world, &config).map_err(|e| e.to_string())?.identity_precision);
        let clean = WorldConfig { noise_sigma: 0.0, ..cfg };
        let world = generate_world(&clean).map_err(|e| e.to_string())?;
        let acc = run_eval_in_process(&world, &config).map_err(|e| e.to_string())?.identity_precision;
        check(acc == 1.0, || format!("sigma=0 seed {seed}: accuracy {acc}"))?;
    }
    let mean = noisy.iter().sum::<f64>() / noisy.len() as f64;
    let min = noisy.iter().cloned().fold(f64::INFINITY, f64::min);
    check(mean >= 0.95, || format!("mean accuracy {mean:.4} at sigma=0.15"))?;
    Ok(format!("sigma=0.15 mean {mean:.4} (min {min:.4}); sigma=0 exactly 1.0 on 50 seeds"))
}

// ---------------------------------------------------------------------------
// 3. Majority pairing wins at a 3:1 reinforcement ratio.

fn entity_graph(faces: u64, voices: u64) -> MemoryGraph {
    let mut g = MemoryGraph::default();
    for i in 0..faces {
        g.add_entity_node(EntityKind::Face, vec![mock_embed(&format!("face {i}"), 64).unwrap()]).unwrap();
    }
    for i in 0..voices {
        g.add_entity_node(EntityKind::Voice, vec![mock_embed(&format!("voice {i}"), 64).unwrap()]).unwrap();
    }
    g
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..500 {
        let nf = rng.random_range(2..=10u64);
        let nv = rng.random_range(1..=8u64);
        let mut g = entity_graph(nf, nv);
        let mut ops = Vec::new();
        let mut majority = Vec::new();
        for v in 0..nv {
            let fm = rng.random_range(0..nf);
            let fx = (fm + rng.random_range(1..nf)) % nf;
            let k = rng.random_range(1..=4usize);
            ops.extend(std::iter::repeat_n((NodeId::voice(v), NodeId::face(fm)), 3 * k));
            ops.extend(std::iter::repeat_n((NodeId::voice(v), NodeId::face(fx)), k));
            majority.push((NodeId::voice(v), NodeId::face(fm)));
        }
        for i in (1..ops.len()).rev() {
            ops.swap(i, rng.random_range(0..=i));
        }
        for (a, b) in ops {
            let (a, b) = if rng.random_bool(0.5) { (a, b) } else { (b, a) };
            g.reinforce_edge(a, b, EdgeKind::Equivalence).map_err(|e| e.to_string())?;
        }
        let chars = g.resolve_characters();
        for (v, f) in majority {
            check(chars.get(v).is_some() && chars.get(v) == chars.get(f), || format!("case {case}: {v} not with {f}"))?;
        }
    }
    Ok("500/500 graphs place each voice with its majority face".into())
}

// ---------------------------------------------------------------------------
// 4. Clip search against a brute-force pipeline.

const SUBJECTS: [&str; 6] = ["<face_0>", "<face_1>", "<voice_0>", "<voice_1>", "the cook", "a child"];
const VERBS: [&str; 6] = ["opens", "closes", "paints", "carries", "washes", "finds"];
const OBJECTS: [&str; 8] =
    ["the door", "the window", "a red box", "the blue car", "the plants", "a letter", "the keys", "a cup"];

fn sentence(rng: &mut ChaCha8Rng) -> String {
    format!("{} {} {}", SUBJECTS.choose(rng).unwrap(), VERBS.choose(rng).unwrap(), OBJECTS.choose(rng).unwrap())
}

fn random_retrieval_graph(rng: &mut ChaCha8Rng) -> MemoryGraph {
    let mut g = entity_graph(2, 2);
    if rng.random_bool(0.5) {
        g.reinforce_edge(NodeId::face(0), NodeId::voice(1), EdgeKind::Equivalence).unwrap();
    }
    if rng.random_bool(0.5) {
        g.reinforce_edge(NodeId::face(1), NodeId::voice(0), EdgeKind::Equivalence).unwrap();
    }
    let clips = rng.random_range(0..=30u64);
    for c in 0..clips {
        if rng.random_bool(0.05) {
            g.ensure_clip(c);
            continue;
        }
        for _ in 0..rng.random_range(1..=4) {
            let kind = if rng.random_bool(0.7) { EntryKind::Episodic } else { EntryKind::Semantic };
            let text = sentence(rng);
            let e = mock_embed(&text, 64).unwrap();
            g.add_text_entry(c, kind, text, e).unwrap();
        }
    }
    g
}

fn rewrite_oracle(text: &str, chars: &CharacterMap) -> String {
    let mut out = text.to_string();
    for (id, c) in chars.assignments() {
        out = out.replace(&id.to_string(), &c.to_string());
    }
    out
}

type Hit = (u64, f64, Vec<String>, Vec<String>);

fn brute_force_search(g: &MemoryGraph, query: &str, k: usize, t: f64) -> Vec<Hit> {
    let probe = mock_embed(query, 64).unwrap();
    let chars = g.resolve_characters();
    let mut scored: Vec<(f64, u64)> = Vec::new();
    for clip in g.clips() {
        let mut best = f64::NEG_INFINITY;
        for id in clip.episodic.iter().chain(&clip.semantic) {
            let e = g.node(*id).unwrap().text_embedding().unwrap();
            best = best.max(cosine(&probe, e).unwrap());
        }
        if best >= t {
            scored.push((best, clip.clip_index));
        }
    }
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    scored
        .into_iter()
        .take(k)
        .map(|(s, c)| {
            let clip = g.clip(c).unwrap();
            let texts = |ids: &[NodeId]| -> Vec<String> {
                ids.iter().map(|id| rewrite_oracle(g.node(*id).unwrap().text().unwrap(), &chars)).collect()
            };
            (c, s, texts(&clip.episodic), texts(&clip.semantic))
        })
        .collect()
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let embedder = MockEmbedder::default();
    let mut exact = 0;
    let mut nonempty = 0;
    for case in 0..1000 {
        let g = random_retrieval_graph(&mut rng);
        let query = if rng.random_bool(0.5) {
            sentence(&mut rng)
        } else {
            format!("{} {}", VERBS.choose(&mut rng).unwrap(), OBJECTS.choose(&mut rng).unwrap())
        };
        let k = rng.random_range(1..=4);
        let t = *[0.0, 0.3, 0.5, 0.7].choose(&mut rng).unwrap();
        let got = search_clip(&g, &embedder, &query, k, t).map_err(|e| e.to_string())?;
        let got: Vec<Hit> = got.clips.into_iter().map(|h| (h.clip_index, h.score, h.episodic, h.semantic)).collect();
        let want = brute_force_search(&g, &query, k, t);
        check(got == want, || format!("case {case} query {query:?} k={k} t={t}: {got:?} vs {want:?}"))?;
        nonempty += usize::from(!want.is_empty());

        let entries: Vec<(u64, String)> = g
            .clips()
            .flat_map(|c| c.entries().map(move |id| (c.clip_index, id)))
            .map(|(c, id)| (c, g.node(id).unwrap().text().unwrap().to_string()))
            .collect();
        if let Some((_, text)) = entries.choose(&mut rng) {
            let owners: BTreeSet<u64> = entries.iter().filter(|(_, x)| x == text).map(|(c, _)| *c).collect();
            let r = search_clip(&g, &embedder, text, 2, 0.5).map_err(|e| e.to_string())?;
            check(r.top_clip().is_some_and(|c| owners.contains(&c)), || {
                format!("case {case}: exact text {text:?} ranked {:?}", r.top_clip())
            })?;
            exact += 1;
        }
    }
    Ok(format!("1000/1000 match brute force ({nonempty} non-empty); exact text rank 1 in {exact}/{exact}"))
}

// ---------------------------------------------------------------------------
// 5. Control-loop shape and hand-simulated traces.

struct RandomPolicy {
    seed: u64,
    style: usize,
}

impl Policy for RandomPolicy {
    fn respond(&self, messages: &[Message]) -> mnemo_core::Result<String> {
        let round = messages.iter().filter(|m| m.role == Role::Assistant).count() as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed * 31 + round);
        let search = format!("Action: [Search]\nContent: {}", sentence(&mut rng));
        let reply = match self.style {
            0 => search,
            1 if round >= 3 => "Action: [Answer]\nContent: the keys".to_string(),
            1 => search,
            2 => ["no action here", "Action: [Search]\nContent:", "[Answer]", "<think>[Answer] x</think>"]
                .choose(&mut rng)
                .unwrap()
                .to_string(),
            _ => match rng.random_range(0..6) {
                0 => format!("<think>maybe [Answer] now</think>\n{search}"),
                1 => "Content: the window\nAction: [Answer]".to_string(),
                2 => "[search] node: opens the door".to_string(),
                3 => "garbled".to_string(),
                4 => String::new(),
                _ => search,
            },
        };
        Ok(reply)
    }
}

fn shape_violation(t: &Trajectory, finished: bool, h: usize, prompts: &Prompts) -> Option<String> {
    if t.rounds_used > h {
        return Some(format!("rounds_used {}", t.rounds_used));
    }
    let m = &t.messages;
    if m.len() < 2 || m[0].role != Role::System || m[1].role != Role::User {
        return Some("bad prefix".into());
    }
    let assistants: Vec<usize> =
        m.iter().enumerate().filter(|(_, x)| x.role == Role::Assistant).map(|(i, _)| i).collect();
    if assistants.len() != t.rounds_used {
        return Some("assistant count differs from rounds_used".into());
    }
    if m[2..].iter().any(|x| x.role == Role::System) {
        return Some("system message after the start".into());
    }
    for w in m.windows(2) {
        if w[0].role == Role::Assistant && w[1].role == Role::Assistant {
            return Some("adjacent assistant messages".into());
        }
    }
    if let Some(&first) = assistants.first() {
        if first != 2 {
            return Some("first reply not right after the instruction".into());
        }
    }
    if assistants.len() == h {
        let before = &m[assistants[h - 1] - 1];
        if before.role != Role::User || !before.content.contains(&prompts.last_round) {
            return Some("final round not preceded by the last-round prompt".into());
        }
    }
    if finished && t.terminated_by == Termination::RoundLimit {
        let last = m.last().unwrap();
        if last.role != Role::User || !last.content.contains(&prompts.last_round) {
            return Some("round-limit trajectory does not end on the last-round prompt".into());
        }
    }
    None
}

/// Hand simulation of the published control listing for scripted replies of
/// the form `Action: [Search|Answer]\nContent: ...`. One step departs from the
/// listing: a search made in the final round is followed by the last-round
/// prompt rather than the instruction prompt.
fn listing_trace(question: &str, replies: &[String], g: &MemoryGraph, h: usize, prompts: &Prompts) -> Vec<Message> {
    let mut tau = vec![
        Message { role: Role::System, content: prompts.system.replace("{question}", question) },
        Message { role: Role::User, content: prompts.instruction.clone() },
    ];
    let mut i = 0;
    while i < h {
        let reply = replies[i].clone();
        tau.push(Message { role: Role::Assistant, content: reply.clone() });
        let (action, information) = reply.split_once("\nContent: ").unwrap();
        let memory = if action.ends_with("[Search]") {
            let r = search_clip(g, &MockEmbedder::default(), information, 2, 0.5).unwrap();
            format_results(&r)
        } else {
            break;
        };
        i += 1;
        if i == h {
            tau.push(Message { role: Role::User, content: format!("{memory}\n\n{}", prompts.last_round) });
            continue;
        }
        tau.push(Message { role: Role::User, content: format!("{memory}\n\n{}", prompts.instruction) });
        if i == h - 1 {
            tau.push(Message { role: Role::User, content: format!("{memory}\n\n{}", prompts.last_round) });
        }
    }
    tau
}

struct Replay(Vec<String>);

impl Policy for Replay {
    fn respond(&self, messages: &[Message]) -> mnemo_core::Result<String> {
        let round = messages.iter().filter(|m| m.role == Role::Assistant).count();
        Ok(self.0[round].clone())
    }
}

fn criterion_5() -> Outcome {
    let world = generate_world(&WorldConfig {
        num_identities: 4,
        num_clips: 20,
        question_count: 10,
        seed: 5,
        ..Default::default()
    })
    .map_err(|e| e.to_string())?;
    let mut g = MemoryGraph::new(world.config.graph_config()).unwrap();
    mnemo_core::memorize::ingest_stream(
        &mut g,
        &world.clips,
        &mnemo_core::memorize::FixtureGenerator,
        &MockEmbedder::default(),
        &Default::default(),
    );
    let config = ControlConfig::default();
    let h = config.max_rounds;
    check(h == 5, || format!("default H is {h}"))?;
    let embedder = MockEmbedder::default();

    let mut counts = BTreeMap::new();
    for seed in 0..200u64 {
        let policy = RandomPolicy { seed, style: (seed % 4) as usize };
        let (t, finished) = match run_control("Where are the keys?", &g, &embedder, &policy, &config) {
            Ok(t) => (t, true),
            Err(e) => (e.partial, false),
        };
        if let Some(v) = shape_violation(&t, finished, h, &config.prompts) {
            return Err(format!("policy {seed}: {v}"));
        }
        let label = if finished { format!("{:?}", t.terminated_by) } else { "PolicyError".into() };
        *counts.entry(label).or_insert(0) += 1;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(55);
    for case in 0..50 {
        let qa = world.qa.choose(&mut rng).unwrap();
        let answer_at = rng.random_range(0..=h);
        let replies: Vec<String> = (0..h)
            .map(|r| {
                if r == answer_at {
                    format!("Action: [Answer]\nContent: {}", qa.answer)
                } else if r < qa.plan.searches.len() && rng.random_bool(0.5) {
                    format!("Action: [Search]\nContent: {}", qa.plan.searches[r].replace("{name}", "Alice"))
                } else {
                    format!("Action: [Search]\nContent: {}", sentence(&mut rng))
                }
            })
            .collect();
        let t = run_control(&qa.question, &g, &embedder, &Replay(replies.clone()), &config)
            .map_err(|e| e.error.to_string())?;
        let want = listing_trace(&qa.question, &replies, &g, h, &config.prompts);
        check(t.messages == want, || format!("trace {case} differs (answer at round {answer_at})"))?;
    }

    let forced = ScriptedPolicy::new(mnemo_core::control::Plan::generic("x"));
    let t = run_control("q", &g, &embedder, &forced, &config).map_err(|e| e.error.to_string())?;
    check(t.rounds_used <= h, || "scripted policy overran".into())?;
    Ok(format!("200 random policies well-formed {counts:?}; 50/50 traces equal the hand simulation"))
}

// ---------------------------------------------------------------------------
// 6. Reward, advantage, clipping and KL arithmetic.

fn criterion_6() -> Outcome {
    let adv = group_advantages(&[1.0, 0.0, 0.0, 1.0]).map_err(|e| e.to_string())?;
    check(adv == vec![1.0, -1.0, -1.0, 1.0], || format!("advantages {adv:?}"))?;

    for bits in 0u32..16 {
        let r: Vec<f64> = (0..4).map(|i| f64::from((bits >> i) & 1)).collect();
        let keep = dapo_group_filter(&r);
        let degenerate = bits == 0 || bits == 15;
        check(keep != degenerate, || format!("group {r:?}: keep = {keep}"))?;
    }

    let a = clipped_term(2.0, 1.0, 0.2, 0.28);
    let b = clipped_term(0.5, -1.0, 0.2, 0.28);
    check((a - 1.28).abs() <= 1e-12, || format!("clipped_term(2, 1) = {a}"))?;
    check((b + 0.8).abs() <= 1e-12, || format!("clipped_term(0.5, -1) = {b}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for case in 0..10_000 {
        let n = rng.random_range(1..=16);
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(1e-6..=1.0)).collect();
        let q: Vec<f64> = (0..n).map(|_| rng.random_range(1e-6..=1.0)).collect();
        let mut mask: Vec<bool> = (0..n).map(|_| rng.random_bool(0.7)).collect();
        mask[0] = true;
        let mask = TokenMask(mask);
        let same = kl_estimate(&p, &p, &mask).map_err(|e| e.to_string())?;
        check(same == 0.0, || format!("case {case}: kl(p, p) = {same}"))?;
        let kl = kl_estimate(&p, &q, &mask).map_err(|e| e.to_string())?;
        check(kl >= 0.0, || format!("case {case}: kl = {kl}"))?;
    }
    Ok("advantages exact; 16/16 groups filtered correctly; 1.28 and -0.8 to 1e-12; KL checks on 10000 inputs".into())
}

// ---------------------------------------------------------------------------
// 7. Snapshot round-trips and truncation.

fn random_graph(rng: &mut ChaCha8Rng) -> MemoryGraph {
    let mut g = MemoryGraph::default();
    let steps = rng.random_range(0..60);
    for step in 0..steps {
        let faces: Vec<NodeId> = g.nodes_of(NodeKind::Face).map(|n| n.id).collect();
        let voices: Vec<NodeId> = g.nodes_of(NodeKind::Voice).map(|n| n.id).collect();
        let texts: Vec<NodeId> = g.nodes_of(NodeKind::Text).map(|n| n.id).collect();
        let word = format!("w{}", rng.random_range(0..1000));
        match rng.random_range(0..8) {
            0 => {
                g.add_entity_node(EntityKind::Face, vec![mock_embed(&word, 64).unwrap()]).unwrap();
            }
            1 => {
                g.add_entity_node(EntityKind::Voice, vec![mock_embed(&word, 64).unwrap()]).unwrap();
            }
            2 | 3 => {
                let kind = if rng.random_bool(0.5) { EntryKind::Episodic } else { EntryKind::Semantic };
                let text = format!("{} {word} ü \"quoted\"\n", sentence(rng));
                g.add_text_entry(rng.random_range(0..10), kind, text, mock_embed(&word, 64).unwrap()).unwrap();
            }
            4 if !faces.is_empty() && !voices.is_empty() => {
                g.reinforce_edge(*faces.choose(rng).unwrap(), *voices.choose(rng).unwrap(), EdgeKind::Equivalence)
                    .unwrap();
            }
            5 if texts.len() > 1 => {
                let a = *texts.choose(rng).unwrap();
                let b = *texts.choose(rng).unwrap();
                if a != b {
                    g.reinforce_edge(a, b, EdgeKind::Generic).unwrap();
                }
            }
            6 if !faces.is_empty() => {
                g.append_snapshot(*faces.choose(rng).unwrap(), mock_embed(&word, 64).unwrap()).unwrap();
            }
            7 if !texts.is_empty() => {
                let id = *texts.choose(rng).unwrap();
                let update =
                    NodeUpdate { content: Some(format!("edited {step}")), weight_delta: Some(2), ..Default::default() };
                g.update_node(id, update).unwrap();
                g.set_extra(id, "note", word).unwrap();
            }
            _ => g.ensure_clip(rng.random_range(0..12)),
        }
    }
    g
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut truncations = 0usize;
    for case in 0..1000 {
        let g = random_graph(&mut rng);
        let bytes = graph::snapshot(&g);
        let back = graph::load(&bytes).map_err(|e| format!("case {case}: {e}"))?;
        check(back == g, || format!("case {case}: structural mismatch"))?;
        check(graph::snapshot(&back) == bytes, || format!("case {case}: re-snapshot differs"))?;
        let cuts: Vec<usize> = if case < 20 {
            (0..bytes.len()).collect()
        } else {
            (0..8).map(|_| rng.random_range(0..bytes.len())).collect()
        };
        for cut in cuts {
            check(graph::load(&bytes[..cut]).is_err(), || format!("case {case}: prefix of {cut} bytes loaded"))?;
            truncations += 1;
        }
    }
    Ok(format!("1000/1000 round-trips identical; {truncations}/{truncations} truncations rejected"))
}

// ---------------------------------------------------------------------------
// 8. CLI and HTTP evaluation determinism.

fn mnemo(args: &[&str], cwd: &Path) -> Result<Vec<u8>, String> {
    let out =
        Command::new(env!("CARGO_BIN_EXE_mnemo")).args(args).current_dir(cwd).output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("mnemo {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)));
    }
    Ok(out.stdout)
}

struct Child(std::process::Child);

impl Drop for Child {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn wait_ready(url: &str) -> Result<(), String> {
    let agent: ureq::Agent = ureq::Agent::config_builder().timeout_global(Some(Duration::from_secs(1))).build().into();
    for _ in 0..200 {
        if agent.get(&format!("{url}/health")).call().is_ok() {
            return Ok(());
        }
        std::thread::sleep(Duration::from_millis(50));
    }
    Err(format!("{url} never became ready"))
}

fn criterion_8() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    std::fs::write(
        d.join("world.json"),
        r#"{"num_identities":10,"num_clips":100,"noise_sigma":0.15,"facts_per_identity":2,"question_count":20,"seed":42}"#,
    )
    .map_err(|e| e.to_string())?;
    mnemo(&["simulate", "--config", "world.json", "--out", "a"], d)?;
    mnemo(&["simulate", "--config", "world.json", "--out", "b"], d)?;
    for f in ["world.json", "clips.jsonl"] {
        let (x, y) = (std::fs::read(d.join("a").join(f)), std::fs::read(d.join("b").join(f)));
        check(x.is_ok() && x.ok() == y.ok(), || format!("simulate output {f} differs"))?;
    }
    let first = mnemo(&["eval", "--world", "a"], d)?;
    let second = mnemo(&["eval", "--world", "b"], d)?;
    check(first == second, || "two CLI evals differ".into())?;

    let port =
        std::net::TcpListener::bind("127.0.0.1:0").and_then(|l| l.local_addr()).map_err(|e| e.to_string())?.port();
    let server = Command::new(env!("CARGO_BIN_EXE_mnemo"))
        .args(["serve", "--graph", "served.graph", "--port", &port.to_string()])
        .current_dir(d)
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| e.to_string())?;
    let _server = Child(server);
    let url = format!("http://127.0.0.1:{port}");
    wait_ready(&url)?;
    let over_http = mnemo(&["eval", "--world", "a", "--server", &url], d)?;
    check(over_http == first, || "HTTP eval differs from CLI eval".into())?;
    Ok(format!("{} byte report identical across two runs and the HTTP path", first.len()))
}

fn main() {
    let start = Instant::now();
    let criteria: [Criterion; 8] = [
        ("meta-dictionary matches the listing oracle", criterion_1),
        ("identity mapping accuracy on synthetic worlds", criterion_2),
        ("majority pairing at a 3:1 ratio", criterion_3),
        ("clip search contract", criterion_4),
        ("control-loop shape and traces", criterion_5),
        ("RL arithmetic", criterion_6),
        ("snapshot persistence", criterion_7),
        ("end-to-end determinism", criterion_8),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS {} {name}: {detail} [{:.1}s]", i + 1, t.elapsed().as_secs_f64()),
            Err(detail) => {
                failed += 1;
                println!("FAIL {} {name}: {detail} [{:.1}s]", i + 1, t.elapsed().as_secs_f64());
            }
        }
    }
    println!(
        "acceptance: {}/{} passed in {:.1}s",
        criteria.len() - failed,
        criteria.len(),
        start.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
