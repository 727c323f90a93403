//! Deterministic synthetic datasets: a key-user graph with fixed degree signatures, a two-wave
//! collection corpus at a reference scale, Zachary's karate club, and
//! random graphs for property tests.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use chrono::DateTime;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::classify::Role;
use crate::model::{Entity, EntityKind, ForwardGraph, ForwardRecord};

fn entity(id: &str, kind: EntityKind) -> Entity {
    Entity {
        id: id.to_lowercase(),
        username: id.to_string(),
        kind,
    }
}

/// One named key user with its target degree signature.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KeyUser {
    pub channel: &'static str,
    pub role: Role,
    pub f: u64,
    pub in_degree: u32,
    pub out_degree: u32,
}

/// The eight key users, in table order (descending `f`).
pub const KEY_USERS: [KeyUser; 8] = [
    KeyUser {
        channel: "jairbolsonarobrasil",
        role: Role::ConversationStarter,
        f: 1491,
        in_degree: 0,
        out_degree: 38,
    },
    KeyUser {
        channel: "OsPatriotas",
        role: Role::Influencer,
        f: 1373,
        in_degree: 12,
        out_degree: 29,
    },
    KeyUser {
        channel: "QBrasilNews",
        role: Role::NetworkCreator,
        f: 919,
        in_degree: 47,
        out_degree: 24,
    },
    KeyUser {
        channel: "juventuderevoltada",
        role: Role::ActiveEngager,
        f: 916,
        in_degree: 130,
        out_degree: 16,
    },
    KeyUser {
        channel: "OrdemDourada_Oficial",
        role: Role::NetworkCreator,
        f: 757,
        in_degree: 57,
        out_degree: 21,
    },
    KeyUser {
        channel: "oinformanteoficial",
        role: Role::ConversationStarter,
        f: 551,
        in_degree: 4,
        out_degree: 38,
    },
    KeyUser {
        channel: "ContraOTotalitarismoDaNOM",
        role: Role::ActiveEngager,
        f: 461,
        in_degree: 41,
        out_degree: 4,
    },
    KeyUser {
        channel: "bielconn",
        role: Role::Influencer,
        f: 349,
        in_degree: 26,
        out_degree: 30,
    },
];

/// Network creators and the influencers they connect.
const STRUCTURAL_EDGES: [(&str, &str); 4] = [
    ("OsPatriotas", "QBrasilNews"),
    ("bielconn", "QBrasilNews"),
    ("OsPatriotas", "OrdemDourada_Oficial"),
    ("bielconn", "OrdemDourada_Oficial"),
];

/// Filler channels whose out-degree sits just under the named nodes' upper
/// quartile; they set the eligible-set out-degree percentile between the
/// creators' and the influencers' out-degrees.
pub const WIDE_FILLERS: usize = 9;
pub const FILLERS: usize = 40;

/// Graph realising the eight key users' exact in/out-degree and `f`, with
/// both network creators adjacent to both influencers, plus
/// [`FILLERS`] eligible filler channels. Neighbour pools are groups (edge
/// targets) and users (edge sources), neither of which is role-eligible.
pub fn key_user_graph() -> ForwardGraph {
    let mut nodes: Vec<Entity> = KEY_USERS
        .iter()
        .map(|k| entity(k.channel, EntityKind::Channel))
        .collect();
    let groups: Vec<String> = (0..38).map(|i| format!("pool_group_{i:02}")).collect();
    let users: Vec<String> = (0..130).map(|i| format!("pool_user_{i:03}")).collect();
    nodes.extend(groups.iter().map(|g| entity(g, EntityKind::Group)));
    nodes.extend(users.iter().map(|u| entity(u, EntityKind::User)));

    // (source, target) -> weight
    let mut edges: BTreeMap<(String, String), u64> = BTreeMap::new();
    for (s, t) in STRUCTURAL_EDGES {
        edges.insert((s.to_lowercase(), t.to_lowercase()), 1);
    }

    let plant = |name: &str, kind_in: u32, kind_out: u32, f: u64, edges: &mut BTreeMap<(String, String), u64>| {
        let id = name.to_lowercase();
        let have_in = edges.keys().filter(|(_, t)| *t == id).count() as u32;
        let have_out = edges.keys().filter(|(s, _)| *s == id).count() as u32;
        let mut own: Vec<(String, String)> = Vec::new();
        for g in &groups[..(kind_out - have_out) as usize] {
            own.push((id.clone(), g.clone()));
        }
        for u in &users[..(kind_in - have_in) as usize] {
            own.push((u.clone(), id.clone()));
        }
        let shared: u64 = edges
            .iter()
            .filter(|((s, t), _)| *s == id || *t == id)
            .map(|(_, w)| *w)
            .sum();
        let base = shared + own.len() as u64;
        assert!(
            f >= base && !own.is_empty(),
            "f too small for the degree tuple of {name}"
        );
        for (k, pair) in own.into_iter().enumerate() {
            let w = if k == 0 { 1 + f - base } else { 1 };
            edges.insert(pair, w);
        }
    };

    for k in &KEY_USERS {
        plant(k.channel, k.in_degree, k.out_degree, k.f, &mut edges);
    }
    for i in 0..FILLERS {
        let name = format!("filler_{i:02}");
        nodes.push(entity(&name, EntityKind::Channel));
        let (inn, out) = if i < WIDE_FILLERS {
            (4, 25)
        } else {
            (1 + (i % 3) as u32, 1 + (i % 2) as u32)
        };
        let f = 60 + 6 * i as u64;
        plant(&name, inn, out, f, &mut edges);
    }

    ForwardGraph::from_parts(nodes, edges.into_iter().map(|((s, t), w)| (s, t, w)))
        .expect("key-user fixture is well formed")
}

/// Channels named in the key-user table, lowercased.
pub fn key_user_ids() -> Vec<String> {
    KEY_USERS.iter().map(|k| k.channel.to_lowercase()).collect()
}

/// Reference two-wave collection totals.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CorpusScale {
    pub seed_groups: usize,
    pub candidate_users: usize,
    pub candidate_groups: usize,
    pub candidate_channels: usize,
    /// Candidates of no stated kind. The reference composition (94 users,
    /// 3 groups, 142 channels) sums to 239 while the reference total is 241.
    pub candidate_unknown: usize,
    pub wave1_records: usize,
    pub wave2_records: usize,
    pub forwards: u64,
    pub entities: usize,
    pub pairs: usize,
    pub threshold: u64,
}

pub const REFERENCE_SCALE: CorpusScale = CorpusScale {
    seed_groups: 25,
    candidate_users: 94,
    candidate_groups: 3,
    candidate_channels: 142,
    candidate_unknown: 2,
    wave1_records: 195_567,
    wave2_records: 91_682,
    forwards: 80_508,
    entities: 2_517,
    pairs: 9_198,
    threshold: 50,
};

impl CorpusScale {
    pub fn candidates(&self) -> usize {
        self.candidate_users + self.candidate_groups + self.candidate_channels + self.candidate_unknown
    }

    pub fn total_records(&self) -> usize {
        self.wave1_records + self.wave2_records
    }
}

#[derive(Clone, Debug)]
pub struct Corpus {
    /// Messages captured in the seed groups.
    pub wave1: Vec<ForwardRecord>,
    /// Messages captured in the second-wave chats.
    pub wave2: Vec<ForwardRecord>,
    /// Planted source -> chat weights (raw usernames).
    pub pairs: BTreeMap<(String, String), u64>,
    /// Usernames planted with at least `threshold` forwards.
    pub candidates: BTreeSet<String>,
    pub kinds: BTreeMap<String, EntityKind>,
    /// A candidate with exactly `threshold` forwards.
    pub boundary_included: String,
    /// A non-candidate with exactly `threshold - 1` forwards.
    pub boundary_excluded: String,
    pub scale: CorpusScale,
}

impl Corpus {
    pub fn records(&self) -> Vec<ForwardRecord> {
        self.wave1.iter().chain(&self.wave2).cloned().collect()
    }
}

/// Two-wave corpus planting `scale`'s totals: seed groups receive forwards in
/// wave one; sources reaching `threshold` forwards form the candidate list,
/// whose groups and channels are the wave-two chats. Records that do not
/// contribute an edge are plain messages or forwards from username-less
/// (numeric) sources.
pub fn two_wave_corpus(scale: CorpusScale, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = scale.threshold;
    let mut kinds: BTreeMap<String, EntityKind> = BTreeMap::new();
    let add = |name: String, kind: EntityKind, kinds: &mut BTreeMap<String, EntityKind>| {
        kinds.insert(name.clone(), kind);
        name
    };
    let seeds: Vec<String> = (0..scale.seed_groups)
        .map(|i| add(format!("SeedGroup{i:02}"), EntityKind::Group, &mut kinds))
        .collect();
    let mut candidates: Vec<String> = Vec::new();
    candidates
        .extend((0..scale.candidate_users).map(|i| add(format!("cand_user_{i:03}"), EntityKind::User, &mut kinds)));
    let mut wave2_chats: Vec<String> = (0..scale.candidate_groups)
        .map(|i| add(format!("CandGroup{i}"), EntityKind::Group, &mut kinds))
        .collect();
    wave2_chats.extend(
        (0..scale.candidate_channels).map(|i| add(format!("CandChannel{i:03}"), EntityKind::Channel, &mut kinds)),
    );
    candidates.extend(wave2_chats.iter().cloned());
    candidates
        .extend((0..scale.candidate_unknown).map(|i| add(format!("cand_other_{i}"), EntityKind::Unknown, &mut kinds)));
    let n_others = scale.entities - scale.seed_groups - candidates.len();
    let other_kinds = [
        EntityKind::Channel,
        EntityKind::User,
        EntityKind::Group,
        EntityKind::Unknown,
    ];
    let others: Vec<String> = (0..n_others)
        .map(|i| add(format!("src_{i:04}"), other_kinds[i % other_kinds.len()], &mut kinds))
        .collect();
    let chats: Vec<String> = seeds.iter().chain(&wave2_chats).cloned().collect();

    let mut pairs: BTreeMap<(String, String), u64> = BTreeMap::new();
    let mut out_count: BTreeMap<String, u64> = BTreeMap::new();
    let try_pair = |s: &str,
                    c: &str,
                    pairs: &mut BTreeMap<(String, String), u64>,
                    out_count: &mut BTreeMap<String, u64>|
     -> bool {
        if s == c || pairs.contains_key(&(s.to_string(), c.to_string())) {
            return false;
        }
        pairs.insert((s.to_string(), c.to_string()), 1);
        *out_count.entry(s.to_string()).or_default() += 1;
        true
    };
    for (i, c) in candidates.iter().enumerate() {
        try_pair(c, &seeds[i % seeds.len()], &mut pairs, &mut out_count);
    }
    for o in &others {
        while !try_pair(o, chats.choose(&mut rng).unwrap(), &mut pairs, &mut out_count) {}
    }
    for w in &wave2_chats {
        while !try_pair(others.choose(&mut rng).unwrap(), w, &mut pairs, &mut out_count) {}
    }
    let sources: Vec<&String> = candidates.iter().chain(&others).collect();
    while pairs.len() < scale.pairs {
        let s = *sources.choose(&mut rng).unwrap();
        let c = chats.choose(&mut rng).unwrap();
        if others.contains(s) && out_count.get(s).copied().unwrap_or(0) >= 20 {
            continue;
        }
        try_pair(s, c, &mut pairs, &mut out_count);
    }
    assert_eq!(pairs.len(), scale.pairs);

    let boundary_included = candidates[candidates.len() - 1].clone();
    let boundary_excluded = others[0].clone();
    let total_of = |pairs: &BTreeMap<(String, String), u64>, s: &str| -> u64 {
        pairs.iter().filter(|((src, _), _)| src == s).map(|(_, w)| *w).sum()
    };
    let first_pair = |pairs: &BTreeMap<(String, String), u64>, s: &str| -> (String, String) {
        pairs.keys().find(|(src, _)| src == s).cloned().unwrap()
    };

    // Others stay below the threshold; one sits exactly one short of it.
    for o in &others {
        let have = total_of(&pairs, o);
        let target = if *o == boundary_excluded {
            t - 1
        } else {
            (have + rng.random_range(0..12)).min(t - 1)
        };
        *pairs.get_mut(&first_pair(&pairs, o)).unwrap() += target - have;
    }
    // Candidates reach the threshold; one sits exactly on it.
    for c in &candidates {
        let have = total_of(&pairs, c);
        assert!(have <= t, "candidate {c} already over threshold");
        *pairs.get_mut(&first_pair(&pairs, c)).unwrap() += t - have;
    }
    let mut total: u64 = pairs.values().sum();
    assert!(total <= scale.forwards, "planted minimum exceeds the forward budget");
    let heavy: Vec<(String, String)> = pairs
        .keys()
        .filter(|(s, _)| candidates.contains(s) && *s != boundary_included)
        .cloned()
        .collect();
    while total < scale.forwards {
        let k = heavy.choose(&mut rng).unwrap();
        let bump = rng.random_range(1..=40).min(scale.forwards - total);
        *pairs.get_mut(k).unwrap() += bump;
        total += bump;
    }

    // Expand into records.
    let base_ts = 1_659_312_000; // 2022-08-01T00:00:00Z
    let month = 31 * 86_400;
    let seed_set: HashSet<&String> = seeds.iter().collect();
    let mut wave1 = Vec::with_capacity(scale.wave1_records);
    let mut wave2 = Vec::with_capacity(scale.wave2_records);
    let rec = |rng: &mut ChaCha8Rng, chat: &str, src: Option<(String, EntityKind)>| ForwardRecord {
        message_id: String::new(),
        chat: chat.to_string(),
        chat_kind: kinds[chat],
        posted_at: DateTime::from_timestamp(base_ts + rng.random_range(0..month), 0).unwrap(),
        forward_source_kind: src.as_ref().map(|s| s.1).unwrap_or_default(),
        forward_source: src.map(|s| s.0),
    };
    for ((s, c), w) in &pairs {
        for _ in 0..*w {
            let r = rec(&mut rng, c, Some((s.clone(), kinds[s])));
            if seed_set.contains(c) {
                wave1.push(r);
            } else {
                wave2.push(r);
            }
        }
    }
    assert!(wave1.len() <= scale.wave1_records && wave2.len() <= scale.wave2_records);
    for (wave, target, pool) in [
        (&mut wave1, scale.wave1_records, &seeds),
        (&mut wave2, scale.wave2_records, &wave2_chats),
    ] {
        while wave.len() < target {
            let chat = pool.choose(&mut rng).unwrap();
            let src = if rng.random_range(0..10) == 0 {
                let numeric = format!("-100{}", rng.random_range(1_000_000_000u64..1_000_005_000));
                Some((numeric, EntityKind::Unknown))
            } else {
                None
            };
            wave.push(rec(&mut rng, chat, src));
        }
    }
    for (prefix, wave) in [("a", &mut wave1), ("b", &mut wave2)] {
        wave.shuffle(&mut rng);
        for (i, r) in wave.iter_mut().enumerate() {
            r.message_id = format!("{prefix}{i:06}");
        }
    }

    Corpus {
        wave1,
        wave2,
        pairs,
        candidates: candidates.into_iter().collect(),
        kinds,
        boundary_included,
        boundary_excluded,
        scale,
    }
}

/// `total` messages spread over a few groups, exactly `forwards` of which
/// carry a public forward source.
pub fn mixed_messages(total: usize, forwards: usize, seed: u64) -> Vec<ForwardRecord> {
    assert!(forwards <= total);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut is_fwd: Vec<bool> = (0..total).map(|i| i < forwards).collect();
    is_fwd.shuffle(&mut rng);
    is_fwd
        .into_iter()
        .enumerate()
        .map(|(i, fwd)| ForwardRecord {
            message_id: i.to_string(),
            chat: format!("group_{}", rng.random_range(0..5)),
            chat_kind: EntityKind::Group,
            posted_at: DateTime::from_timestamp(1_659_312_000 + i as i64, 0).unwrap(),
            forward_source: fwd.then(|| format!("source_{}", rng.random_range(0..30))),
            forward_source_kind: if fwd { EntityKind::Channel } else { EntityKind::Unknown },
        })
        .collect()
}

/// Zachary's karate club (34 members, 78 friendships), unweighted, with
/// each friendship as one directed edge from the lower to the higher index.
pub fn karate_club() -> ForwardGraph {
    const EDGES: [(usize, usize); 78] = [
        (0, 1),
        (0, 2),
        (0, 3),
        (0, 4),
        (0, 5),
        (0, 6),
        (0, 7),
        (0, 8),
        (0, 10),
        (0, 11),
        (0, 12),
        (0, 13),
        (0, 17),
        (0, 19),
        (0, 21),
        (0, 31),
        (1, 2),
        (1, 3),
        (1, 7),
        (1, 13),
        (1, 17),
        (1, 19),
        (1, 21),
        (1, 30),
        (2, 3),
        (2, 7),
        (2, 8),
        (2, 9),
        (2, 13),
        (2, 27),
        (2, 28),
        (2, 32),
        (3, 7),
        (3, 12),
        (3, 13),
        (4, 6),
        (4, 10),
        (5, 6),
        (5, 10),
        (5, 16),
        (6, 16),
        (8, 30),
        (8, 32),
        (8, 33),
        (9, 33),
        (13, 33),
        (14, 32),
        (14, 33),
        (15, 32),
        (15, 33),
        (18, 32),
        (18, 33),
        (19, 33),
        (20, 32),
        (20, 33),
        (22, 32),
        (22, 33),
        (23, 25),
        (23, 27),
        (23, 29),
        (23, 32),
        (23, 33),
        (24, 25),
        (24, 27),
        (24, 31),
        (25, 31),
        (26, 29),
        (26, 33),
        (27, 33),
        (28, 31),
        (28, 33),
        (29, 32),
        (29, 33),
        (30, 32),
        (30, 33),
        (31, 32),
        (31, 33),
        (32, 33),
    ];
    let name = |i: usize| format!("member{i:02}");
    ForwardGraph::from_parts(
        (0..34).map(|i| entity(&name(i), EntityKind::User)),
        EDGES.iter().map(|&(a, b)| (name(a), name(b), 1)),
    )
    .expect("karate club edges are valid")
}

/// Random weighted digraph on `n` channels with up to `m` distinct edges
/// (self-loops allowed when `loops`), weights in `1..=max_weight`.
pub fn random_graph(n: usize, m: usize, max_weight: u64, loops: bool, seed: u64) -> ForwardGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let name = |i: usize| format!("v{i:04}");
    let mut pairs: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    let cap = if loops { n * n } else { n * n.saturating_sub(1) };
    while pairs.len() < m.min(cap) {
        let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
        if a == b && !loops {
            continue;
        }
        pairs.insert((a, b), rng.random_range(1..=max_weight));
    }
    ForwardGraph::from_parts(
        (0..n).map(|i| entity(&name(i), EntityKind::Channel)),
        pairs.into_iter().map(|((a, b), w)| (name(a), name(b), w)),
    )
    .expect("random graph is valid")
}

/// Successor lists of a random digraph where each ordered pair is an edge
/// with probability `p`.
pub fn random_successors(n: usize, p: f64, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|a| (0..n).filter(|&b| b != a && rng.random_bool(p)).collect())
        .collect()
}

/// `rows x cols` grid as an undirected adjacency.
pub fn grid_adjacency(rows: usize, cols: usize) -> Vec<Vec<usize>> {
    let id = |r: usize, c: usize| r * cols + c;
    let mut adj = vec![Vec::new(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            if c + 1 < cols {
                adj[id(r, c)].push(id(r, c + 1));
                adj[id(r, c + 1)].push(id(r, c));
            }
            if r + 1 < rows {
                adj[id(r, c)].push(id(r + 1, c));
                adj[id(r + 1, c)].push(id(r, c));
            }
        }
    }
    adj
}
