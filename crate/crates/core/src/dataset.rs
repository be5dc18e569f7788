//! Labeled corpora: generation, splitting, JSONL storage and manifests.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::generate::{generate_item, item_rng, GenConfig, QueryFamily, Workload};
use crate::graph::{CostVector, JointGraph, Metric};
use crate::sim::{simulate, SimConfig};

/// Version tag written into every record and manifest.
pub const RECORD_VERSION: u32 = 1;

const SPLIT_STREAM: u64 = u64::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub v: u32,
    pub id: String,
    pub family: QueryFamily,
    /// Number of chained filters for filter-chain items.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter_chain: Option<usize>,
    pub split: Split,
    pub graph: JointGraph,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<CostVector>,
}

impl Example {
    /// Label of `metric`, if the example is labeled and the label is defined.
    pub fn label(&self, metric: Metric) -> Option<f64> {
        self.labels.as_ref().and_then(|c| c.value(metric))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub v: u32,
    pub config_hash: String,
    pub gen: GenConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimConfig>,
    pub workload: Workload,
    pub count: usize,
    /// Example ids per split; the provenance record that keeps test items
    /// out of fitting and model selection.
    pub splits: BTreeMap<Split, Vec<String>>,
    /// SHA-256 of the JSONL corpus file.
    pub data_hash: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub examples: Vec<Example>,
    pub manifest: Manifest,
}

/// SHA-256 over the canonical JSON of any serializable configuration.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("configuration serializes");
    format!("{:x}", Sha256::digest(bytes))
}

/// Noise seed for the label of item `index`.
pub fn label_seed(sim_seed: u64, index: u64) -> u64 {
    item_rng(sim_seed, index).gen()
}

/// Labels a graph with noise seeded per item.
pub fn label_graph(g: &JointGraph, sim: &SimConfig, index: u64) -> CostVector {
    let cfg = SimConfig { rng_seed: label_seed(sim.rng_seed, index), ..sim.clone() };
    simulate(g, &cfg)
}

/// Assigns 80/10/10 train/val/test splits by a seeded permutation.
pub fn assign_splits(n: usize, seed: u64) -> Vec<Split> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut item_rng(seed, SPLIT_STREAM));
    let n_train = n * 8 / 10;
    let n_val = n / 10;
    let mut splits = vec![Split::Test; n];
    for (pos, &i) in order.iter().enumerate() {
        splits[i] = if pos < n_train {
            Split::Train
        } else if pos < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    splits
}

#[derive(Serialize)]
struct HashedConfig<'a> {
    gen: &'a GenConfig,
    sim: Option<&'a SimConfig>,
    workload: Workload,
    count: usize,
}

/// Generates `count` items, labels them with `sim` (if given) and splits them.
pub fn make_dataset(gen: &GenConfig, sim: Option<&SimConfig>, workload: Workload, count: usize) -> Result<Dataset> {
    gen.validate()?;
    if let Some(s) = sim {
        s.validate()?;
    }
    let items = (0..count as u64)
        .into_par_iter()
        .map(|i| generate_item(gen, workload, i))
        .collect::<Result<Vec<_>>>()?;
    let splits = assign_splits(count, gen.seed);
    let filter_chain = match workload {
        Workload::FilterChain { filters } => Some(filters),
        _ => None,
    };
    let examples: Vec<Example> = items
        .into_par_iter()
        .enumerate()
        .map(|(i, item)| {
            let labels = sim.map(|s| label_graph(&item.graph, s, i as u64));
            Example {
                v: RECORD_VERSION,
                id: format!("q{i:06}"),
                family: item.family,
                filter_chain,
                split: splits[i],
                graph: item.graph,
                labels,
            }
        })
        .collect();
    let manifest = build_manifest(gen, sim, workload, &examples)?;
    Ok(Dataset { examples, manifest })
}

fn build_manifest(gen: &GenConfig, sim: Option<&SimConfig>, workload: Workload, examples: &[Example]) -> Result<Manifest> {
    let mut splits: BTreeMap<Split, Vec<String>> = BTreeMap::new();
    for e in examples {
        splits.entry(e.split).or_default().push(e.id.clone());
    }
    Ok(Manifest {
        v: RECORD_VERSION,
        config_hash: config_hash(&HashedConfig { gen, sim, workload, count: examples.len() }),
        gen: gen.clone(),
        sim: sim.cloned(),
        workload,
        count: examples.len(),
        splits,
        data_hash: format!("{:x}", Sha256::digest(to_jsonl(examples)?)),
    })
}

fn to_jsonl(examples: &[Example]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for e in examples {
        serde_json::to_writer(&mut out, e)?;
        out.push(b'\n');
    }
    Ok(out)
}

pub fn write_jsonl(path: &Path, examples: &[Example]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(&to_jsonl(examples)?)?;
    w.flush()?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<Example>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e: Example = serde_json::from_str(&line)?;
        if e.v != RECORD_VERSION {
            return Err(Error::SchemaMismatch(format!("line {}: record version {} (expected {RECORD_VERSION})", n + 1, e.v)));
        }
        out.push(e);
    }
    Ok(out)
}

pub const DATA_FILE: &str = "data.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

impl Dataset {
    /// Writes `data.jsonl` and `manifest.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_jsonl(&dir.join(DATA_FILE), &self.examples)?;
        fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&self.manifest)? + "\n")?;
        Ok(())
    }

    /// Loads a corpus directory and checks it against its manifest.
    pub fn load(dir: &Path) -> Result<Dataset> {
        let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
        let examples = read_jsonl(&dir.join(DATA_FILE))?;
        let hash = format!("{:x}", Sha256::digest(to_jsonl(&examples)?));
        if hash != manifest.data_hash {
            return Err(Error::SchemaMismatch(format!("{}: corpus does not match its manifest", dir.display())));
        }
        for e in &examples {
            let listed = manifest.splits.get(&e.split).is_some_and(|ids| ids.binary_search(&e.id).is_ok());
            if !listed {
                return Err(Error::SchemaMismatch(format!("example {} is not listed under its split in the manifest", e.id)));
            }
        }
        Ok(Dataset { examples, manifest })
    }

    pub fn split(&self, split: Split) -> Vec<&Example> {
        self.examples.iter().filter(|e| e.split == split).collect()
    }

    /// Replaces all labels (or adds them) using `sim`; refreshes the manifest.
    pub fn relabel(&mut self, sim: &SimConfig) -> Result<()> {
        sim.validate()?;
        let labels: Vec<CostVector> = self
            .examples
            .par_iter()
            .enumerate()
            .map(|(i, e)| label_graph(&e.graph, sim, i as u64))
            .collect();
        for (e, l) in self.examples.iter_mut().zip(labels) {
            e.labels = Some(l);
        }
        self.manifest = build_manifest(&self.manifest.gen, Some(sim), self.manifest.workload, &self.examples)?;
        Ok(())
    }
}

/// `(graph, label)` pairs for a metric; regression metrics skip failed executions.
pub fn metric_samples<'a, I>(examples: I, metric: Metric) -> Vec<(&'a JointGraph, f64)>
where
    I: IntoIterator<Item = &'a Example>,
{
    examples.into_iter().filter_map(|e| e.label(metric).map(|l| (&e.graph, l))).collect()
}

/// Indices of a class-balanced subset: every minority example is kept and the
/// majority class is subsampled to the same size. Empty if a class is absent.
pub fn balanced_indices(labels: &[bool], seed: u64) -> Vec<usize> {
    let pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    let neg: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    let (minority, mut majority) = if pos.len() <= neg.len() { (pos, neg) } else { (neg, pos) };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    majority.shuffle(&mut rng);
    majority.truncate(minority.len());
    let mut out: Vec<usize> = minority.into_iter().chain(majority).collect();
    out.sort_unstable();
    out
}
