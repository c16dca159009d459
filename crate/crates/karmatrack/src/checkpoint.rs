//! Parameter checkpoints.
//!
//! A checkpoint is a text file. The first line is `karmatrack-checkpoint 1`;
//! every following line holds one named array:
//!
//! ```text
//! <name> <shape, comma separated> <values, space separated>
//! ```
//!
//! Values are written in the shortest decimal form that parses back to the
//! same `f64`, so save/load is bit-exact. A `manifest.toml` next to the
//! files names the architecture and knowledge mode of each network.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use karmatrack_core::knowledge::KnowledgeMode;
use karmatrack_core::nn::ParamSet;
use karmatrack_core::qnet::{Drrn, DrrnBiLstm, QNetwork};
use serde::{Deserialize, Serialize};

const MAGIC: &str = "karmatrack-checkpoint 1";

pub fn to_string<P: ParamSet>(params: &P) -> String {
    let mut out = String::from(MAGIC);
    out.push('\n');
    for t in params.tensors() {
        let shape: Vec<String> = t.shape.iter().map(|d| d.to_string()).collect();
        let _ = write!(out, "{} {}", t.name, shape.join(","));
        for v in t.data {
            let _ = write!(out, " {v:?}");
        }
        out.push('\n');
    }
    out
}

/// Fills `params` from checkpoint text; names and shapes must match exactly.
pub fn from_str<P: ParamSet>(text: &str, params: &mut P) -> Result<()> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim_end() == MAGIC => {}
        _ => bail!("not a checkpoint: first line must be `{MAGIC}`"),
    }
    let mut arrays: BTreeMap<&str, (usize, Vec<usize>, Vec<f64>)> = BTreeMap::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(' ');
        let name = parts.next().expect("split yields one item");
        let shape = parts
            .next()
            .ok_or_else(|| anyhow!("line {}: missing shape", i + 1))?
            .split(',')
            .map(|d| d.parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .with_context(|| format!("line {}: bad shape", i + 1))?;
        let data = parts
            .map(|v| v.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .with_context(|| format!("line {}: bad value", i + 1))?;
        if arrays.insert(name, (i + 1, shape, data)).is_some() {
            bail!("line {}: duplicate array `{name}`", i + 1);
        }
    }
    let mut tensors = params.tensors_mut();
    for t in &mut tensors {
        let (line, shape, data) = arrays
            .remove(t.name.as_str())
            .ok_or_else(|| anyhow!("checkpoint lacks array `{}`", t.name))?;
        if shape != t.shape || data.len() != t.data.len() {
            bail!(
                "line {line}: array `{}` has shape {:?} with {} values, expected {:?}",
                t.name,
                shape,
                data.len(),
                t.shape
            );
        }
        t.data.copy_from_slice(&data);
    }
    if let Some(name) = arrays.keys().next() {
        bail!("checkpoint has unexpected array `{name}`");
    }
    Ok(())
}

pub fn save<P: ParamSet>(path: &Path, params: &P) -> Result<()> {
    fs::write(path, to_string(params)).with_context(|| format!("writing {}", path.display()))
}

pub fn load<P: ParamSet>(path: &Path, params: &mut P) -> Result<()> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    from_str(&text, params).with_context(|| format!("loading {}", path.display()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Drrn,
    DrrnBilstm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkEntry {
    /// `q1` or `q2`.
    pub role: String,
    pub architecture: Architecture,
    /// Knowledge mode, e.g. `none` or `attention`.
    pub knowledge: String,
    pub vocab_dim: usize,
    pub file: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    #[serde(default)]
    pub networks: Vec<NetworkEntry>,
}

impl Manifest {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.toml");
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::write(dir.join("manifest.toml"), toml::to_string(self)?)?;
        Ok(())
    }

    pub fn entry(&self, role: &str) -> Option<&NetworkEntry> {
        self.networks.iter().find(|e| e.role == role)
    }
}

fn mode_of(entry: &NetworkEntry) -> Result<KnowledgeMode> {
    entry.knowledge.parse().map_err(|e| anyhow!("{e}"))
}

/// Saves `net` as `<role>.ckpt` in `dir` and records it in the manifest.
pub fn save_network<Q: QNetwork>(
    dir: &Path,
    manifest: &mut Manifest,
    role: &str,
    architecture: Architecture,
    vocab_dim: usize,
    net: &Q,
) -> Result<()> {
    let file = format!("{role}.ckpt");
    save(&dir.join(&file), net)?;
    manifest.networks.retain(|e| e.role != role);
    manifest.networks.push(NetworkEntry {
        role: role.into(),
        architecture,
        knowledge: net.tower().mode().to_string(),
        vocab_dim,
        file,
    });
    Ok(())
}

/// Rebuilds a network with the manifest's shape, then loads its values.
pub fn load_drrn(dir: &Path, entry: &NetworkEntry) -> Result<Drrn> {
    if entry.architecture != Architecture::Drrn {
        bail!("`{}` is not a DRRN checkpoint", entry.role);
    }
    let mut net = Drrn::new(entry.vocab_dim, mode_of(entry)?, &mut karmatrack_core::rng_from_seed(0))?;
    load(&dir.join(&entry.file), &mut net)?;
    Ok(net)
}

pub fn load_bilstm(dir: &Path, entry: &NetworkEntry) -> Result<DrrnBiLstm> {
    if entry.architecture != Architecture::DrrnBilstm {
        bail!("`{}` is not a DRRN-BiLSTM checkpoint", entry.role);
    }
    let mut net = DrrnBiLstm::new(entry.vocab_dim, mode_of(entry)?, &mut karmatrack_core::rng_from_seed(0))?;
    load(&dir.join(&entry.file), &mut net)?;
    Ok(net)
}
