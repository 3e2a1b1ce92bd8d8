//! Plain-text episode files and dataset generation.
//!
//! Format, one record per line, whitespace separated:
//!
//! ```text
//! N T dt                  header: agent count, step count, step length
//! #OBST cx cy r           one line per static obstacle
//! t agent_id x y group_id one line per (step, agent), t ascending
//! ```
//!
//! Floats are printed with Rust's shortest round-trip formatting, so writing
//! and re-reading an episode reproduces the exact `f64` values and identical
//! bytes. Dataset generation records robot-free crowds; per-episode RNG seeds
//! are derived from the base seed, the split, and the episode index.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::scenario::{init_scenario, ObstacleSpec, ScenarioConfig};
use crate::vec2::Vec2;
use crate::world::SimWorld;
use crate::SimError;

/// A recorded multi-agent trajectory plus scene furniture.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub dt: f64,
    pub obstacles: Vec<ObstacleSpec>,
    /// Group label per agent, indexed by agent id.
    pub group_ids: Vec<usize>,
    /// `positions[t][agent]`.
    pub positions: Vec<Vec<Vec2>>,
}

impl EpisodeRecord {
    pub fn n_agents(&self) -> usize {
        self.group_ids.len()
    }

    pub fn n_steps(&self) -> usize {
        self.positions.len()
    }

    pub fn write(&self, w: &mut impl Write) -> Result<(), SimError> {
        writeln!(w, "{} {} {}", self.n_agents(), self.n_steps(), self.dt)?;
        for o in &self.obstacles {
            writeln!(w, "#OBST {} {} {}", o.center.x, o.center.y, o.radius)?;
        }
        for (t, frame) in self.positions.iter().enumerate() {
            for (id, p) in frame.iter().enumerate() {
                writeln!(w, "{} {} {} {} {}", t, id, p.x, p.y, self.group_ids[id])?;
            }
        }
        Ok(())
    }

    pub fn read(r: impl BufRead) -> Result<Self, SimError> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| SimError::Parse("empty episode file".into()))??;
        let mut it = header.split_whitespace();
        let n: usize = parse(it.next(), "agent count")?;
        let t_total: usize = parse(it.next(), "step count")?;
        let dt: f64 = parse(it.next(), "dt")?;
        if dt <= 0.0 {
            return Err(SimError::Parse(format!("non-positive dt {dt}")));
        }

        let mut obstacles = Vec::new();
        let mut group_ids = vec![usize::MAX; n];
        let mut positions = vec![vec![Vec2::ZERO; n]; t_total];
        let mut seen = vec![vec![false; n]; t_total];
        for line in lines {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("#OBST") {
                let mut it = rest.split_whitespace();
                let cx: f64 = parse(it.next(), "obstacle cx")?;
                let cy: f64 = parse(it.next(), "obstacle cy")?;
                let radius: f64 = parse(it.next(), "obstacle r")?;
                obstacles.push(ObstacleSpec {
                    center: Vec2::new(cx, cy),
                    radius,
                });
                continue;
            }
            let mut it = line.split_whitespace();
            let t: usize = parse(it.next(), "step index")?;
            let id: usize = parse(it.next(), "agent id")?;
            let x: f64 = parse(it.next(), "x")?;
            let y: f64 = parse(it.next(), "y")?;
            let gid: usize = parse(it.next(), "group id")?;
            if t >= t_total || id >= n {
                return Err(SimError::Parse(format!(
                    "record (t={t}, agent={id}) outside header bounds {t_total}x{n}"
                )));
            }
            positions[t][id] = Vec2::new(x, y);
            seen[t][id] = true;
            if group_ids[id] == usize::MAX {
                group_ids[id] = gid;
            } else if group_ids[id] != gid {
                return Err(SimError::Parse(format!(
                    "agent {id} changes group from {} to {gid}",
                    group_ids[id]
                )));
            }
        }
        if seen.iter().any(|frame| frame.iter().any(|s| !s)) {
            return Err(SimError::Parse(
                "missing (step, agent) records relative to header".into(),
            ));
        }
        Ok(Self {
            dt,
            obstacles,
            group_ids,
            positions,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), SimError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        Self::read(BufReader::new(File::open(path)?))
    }
}

fn parse<T: std::str::FromStr>(tok: Option<&str>, what: &str) -> Result<T, SimError> {
    tok.ok_or_else(|| SimError::Parse(format!("missing {what}")))?
        .parse()
        .map_err(|_| SimError::Parse(format!("unparseable {what}")))
}

/// Steps a freshly initialized robot-free world and records `steps` position
/// snapshots (the initial configuration plus `steps - 1` updates).
pub fn record_episode(world: &mut SimWorld, steps: usize) -> EpisodeRecord {
    assert!(steps > 0, "an episode needs at least one snapshot");
    let group_ids: Vec<usize> = world.peds.iter().map(|p| p.group_id).collect();
    let mut positions = Vec::with_capacity(steps);
    positions.push(world.peds.iter().map(|p| p.pos).collect::<Vec<_>>());
    for _ in 1..steps {
        world.step(None);
        positions.push(world.peds.iter().map(|p| p.pos).collect());
    }
    EpisodeRecord {
        dt: world.cfg.dt,
        obstacles: world.obstacles.clone(),
        group_ids,
        positions,
    }
}

/// Summary of a generated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSummary {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub out_dir: PathBuf,
}

const SPLIT_NAMES: [&str; 3] = ["train", "val", "test"];
const SPLIT_SEED_STRIDE: u64 = 10_000_000;

/// Deterministic per-episode seed: disjoint blocks per split.
pub fn episode_seed(base_seed: u64, split: usize, index: usize) -> u64 {
    base_seed
        .wrapping_add(SPLIT_SEED_STRIDE.wrapping_mul(1 + split as u64))
        .wrapping_add(index as u64)
}

/// Writes `counts = (train, val, test)` episodes of `steps` snapshots each
/// under `out_dir/{train,val,test}/ep_NNNNN.txt`.
pub fn generate_dataset(
    cfg: &ScenarioConfig,
    base_seed: u64,
    out_dir: &Path,
    counts: (usize, usize, usize),
    steps: usize,
) -> Result<DatasetSummary, SimError> {
    cfg.validate()?;
    let counts = [counts.0, counts.1, counts.2];
    for (split, (&name, &count)) in SPLIT_NAMES.iter().zip(counts.iter()).enumerate() {
        let dir = out_dir.join(name);
        fs::create_dir_all(&dir)?;
        for i in 0..count {
            let mut rng = ChaCha8Rng::seed_from_u64(episode_seed(base_seed, split, i));
            let mut world = init_scenario(cfg, &mut rng, false)?;
            let record = record_episode(&mut world, steps);
            record.save(&dir.join(format!("ep_{i:05}.txt")))?;
        }
    }
    Ok(DatasetSummary {
        train: counts[0],
        val: counts[1],
        test: counts[2],
        out_dir: out_dir.to_path_buf(),
    })
}

/// Loads every episode file in a split directory, sorted by file name.
pub fn load_split(dir: &Path) -> Result<Vec<EpisodeRecord>, SimError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map_or(false, |e| e == "txt"))
        .collect();
    paths.sort();
    paths.iter().map(|p| EpisodeRecord::load(p)).collect()
}
