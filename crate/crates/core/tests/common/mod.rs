#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::path::Path;

use ddikg::config::RunConfig;
use ddikg::graph::{EnclosingSubgraph, EntityId, KnowledgeGraph, Triplet};
use ddikg::synth::{gen_synth, SynthSpec};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random multigraph-free KG with `n` nodes, up to `m` triplets and `r`
/// relations.
pub fn random_graph(seed: u64, n: usize, m: usize, r: usize) -> KnowledgeGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = BTreeSet::new();
    for _ in 0..m {
        let h = rng.gen_range(0..n as u32);
        let t = rng.gen_range(0..n as u32);
        if h != t {
            set.insert(Triplet::new(h, rng.gen_range(0..r as u32), t));
        }
    }
    KnowledgeGraph::from_triplets(n, r, set.into_iter().collect()).unwrap()
}

/// Unbounded undirected BFS straight from the triplet list.
fn all_distances(kg: &KnowledgeGraph, source: u32) -> HashMap<u32, u32> {
    let mut adj: HashMap<u32, Vec<u32>> = HashMap::new();
    for t in kg.triplets() {
        adj.entry(t.head.0).or_default().push(t.tail.0);
        adj.entry(t.tail.0).or_default().push(t.head.0);
    }
    let mut dist = HashMap::from([(source, 0)]);
    let mut queue = VecDeque::from([source]);
    while let Some(x) = queue.pop_front() {
        let d = dist[&x];
        for &y in adj.get(&x).map(Vec::as_slice).unwrap_or(&[]) {
            if !dist.contains_key(&y) {
                dist.insert(y, d + 1);
                queue.push_back(y);
            }
        }
    }
    dist
}

#[derive(Debug, PartialEq)]
pub struct OracleSubgraph {
    pub nodes: BTreeSet<u32>,
    pub edges: BTreeSet<Triplet>,
    /// Node -> (dist to u, dist to v), clamped to k.
    pub dist: BTreeMap<u32, (u32, u32)>,
}

/// Brute force: intersect the two k-balls, add the centers, keep every
/// triplet with both ends inside.
pub fn oracle_subgraph(kg: &KnowledgeGraph, u: u32, v: u32, k: u32) -> OracleSubgraph {
    let du = all_distances(kg, u);
    let dv = all_distances(kg, v);
    let within = |d: &HashMap<u32, u32>, x: u32| d.get(&x).is_some_and(|&h| h <= k);
    let mut nodes: BTreeSet<u32> = (0..kg.num_entities() as u32)
        .filter(|&x| within(&du, x) && within(&dv, x))
        .collect();
    nodes.insert(u);
    nodes.insert(v);
    let edges = kg
        .triplets()
        .iter()
        .copied()
        .filter(|t| nodes.contains(&t.head.0) && nodes.contains(&t.tail.0))
        .collect();
    let clamp = |d: &HashMap<u32, u32>, x: u32| d.get(&x).map_or(k, |&h| h.min(k));
    let dist = nodes.iter().map(|&x| (x, (clamp(&du, x), clamp(&dv, x)))).collect();
    OracleSubgraph { nodes, edges, dist }
}

pub fn as_oracle(sub: &EnclosingSubgraph) -> OracleSubgraph {
    OracleSubgraph {
        nodes: sub.nodes.iter().map(|e| e.0).collect(),
        edges: sub.global_edges().collect(),
        dist: sub
            .nodes
            .iter()
            .enumerate()
            .map(|(i, e)| (e.0, (sub.dist_u[i], sub.dist_v[i])))
            .collect(),
    }
}

pub fn entity(kg: &KnowledgeGraph, name: &str) -> EntityId {
    EntityId(kg.entities().get(name).unwrap())
}

/// Reads the generated files as plain text and recomputes every label from
/// the two motif edges that meet at a shared gene.
pub fn motif_labels(kg_file: &Path, ddi_file: &Path, side: usize) -> Vec<(String, String, usize, usize)> {
    let kg = std::fs::read_to_string(kg_file).unwrap();
    let mut into_gene: HashMap<(String, String), Vec<usize>> = HashMap::new();
    for line in kg.lines() {
        let f: Vec<&str> = line.split('\t').collect();
        if let Some(a) = f[1].strip_prefix("rho_") {
            into_gene
                .entry((f[0].to_string(), f[2].to_string()))
                .or_default()
                .push(a.parse().unwrap());
        }
    }
    let mut genes_of: HashMap<&str, Vec<(&str, usize)>> = HashMap::new();
    for ((drug, gene), rels) in &into_gene {
        for &a in rels {
            genes_of.entry(drug.as_str()).or_default().push((gene.as_str(), a));
        }
    }
    let ddi = std::fs::read_to_string(ddi_file).unwrap();
    ddi.lines()
        .map(|line| {
            let f: Vec<&str> = line.split('\t').collect();
            let (u, v, label) = (f[0], f[1], f[2].parse::<usize>().unwrap());
            let shared: Vec<usize> = genes_of[u]
                .iter()
                .flat_map(|&(g, a)| {
                    genes_of[v]
                        .iter()
                        .filter(move |&&(h, _)| h == g)
                        .map(move |&(_, b)| a * side + b)
                })
                .collect();
            assert_eq!(shared.len(), 1, "{u} {v} share {} anchor genes", shared.len());
            (u.to_string(), v.to_string(), label, shared[0])
        })
        .collect()
}

/// Small planted-motif dataset with a config sized for quick tests.
pub fn tiny_run(dir: &Path, seed: u64) -> RunConfig {
    let spec = SynthSpec {
        num_drugs: 40,
        num_genes: 80,
        num_classes: 4,
        pairs_per_drug: 3,
        noise_edges: 40,
        fingerprint_bits: 16,
        fingerprint_density: 0.2,
        seed,
    };
    let files = gen_synth(&spec, &dir.join("data")).unwrap();
    let mut c = RunConfig::default();
    c.data.kg_file = files.kg_file;
    c.data.ddi_file = files.ddi_file;
    c.data.fingerprint_file = Some(files.fingerprint_file);
    c.data.out_dir = dir.join("out");
    c.model.dim = 8;
    c.model.bases = 4;
    c.model.fingerprint_bits = 16;
    c.model.transe.epochs = 3;
    c.train.epochs = 3;
    c.train.batch_size = 16;
    c
}

/// The planted-motif dataset at its default size with the default model.
pub fn motif_run(dir: &Path) -> RunConfig {
    let files = gen_synth(&SynthSpec::default(), &dir.join("data")).unwrap();
    let mut c = RunConfig::default();
    c.data.kg_file = files.kg_file;
    c.data.ddi_file = files.ddi_file;
    c.data.fingerprint_file = Some(files.fingerprint_file);
    c.data.out_dir = dir.join("out");
    c
}

/// Concordant pairs plus half the ties over all positive/negative pairs.
pub fn concordance(scores: &[f64], labels: &[bool]) -> f64 {
    let mut twice = 0u64;
    let (mut p, mut n) = (0u64, 0u64);
    for (i, &li) in labels.iter().enumerate() {
        if li {
            p += 1;
        } else {
            n += 1;
        }
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            twice += match scores[i].partial_cmp(&scores[j]).unwrap() {
                std::cmp::Ordering::Greater => 2,
                std::cmp::Ordering::Equal => 1,
                std::cmp::Ordering::Less => 0,
            };
        }
    }
    twice as f64 / (2 * p * n) as f64
}
