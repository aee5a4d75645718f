//! Instance and replay file formats.
//!
//! Instance files are JSON:
//!
//! ```json
//! {
//!   "format_version": 1,
//!   "n": 3,
//!   "target": [0.5, 0.25, 0.25],
//!   "sets": [{"members": [0, 1], "prob": 0.5}, {"members": [1, 2], "prob": 0.5}],
//!   "phi": 2.0
//! }
//! ```
//!
//! States are 0-based. `target` may be unnormalized positive weights; it is
//! normalized on load. Set probabilities must already sum to one.
//!
//! Replay files hold one sample per line: `i,j,winner` for pairs or
//! `m1;m2;...;mk,winner` for any set size. Blank lines and lines starting with
//! `#` are skipped.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ComparisonDistribution, Instance, LssSample, TargetDistribution};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceFile {
    #[serde(default = "default_version")]
    format_version: u32,
    n: usize,
    target: Vec<f64>,
    sets: Vec<SetEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    phi: Option<f64>,
    /// Free-form provenance (generator settings); ignored on load.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    meta: Option<serde_json::Value>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SetEntry {
    members: Vec<usize>,
    prob: f64,
}

fn default_version() -> u32 {
    FORMAT_VERSION
}

fn parse_error(line: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, message: message.into() }
}

pub fn parse_instance(text: &str) -> Result<Instance> {
    let file: InstanceFile = serde_json::from_str(text).map_err(|e| parse_error(e.line(), e.to_string()))?;
    if file.format_version != FORMAT_VERSION {
        return Err(parse_error(0, format!("unsupported format_version {}", file.format_version)));
    }
    if file.target.len() != file.n {
        return Err(Error::DimensionMismatch { expected: file.n, found: file.target.len() });
    }
    let target = TargetDistribution::from_weights(file.target)?;
    let sets = file.sets.into_iter().map(|s| (s.members, s.prob)).collect();
    let comparisons = ComparisonDistribution::new(file.n, sets)?;
    Instance::new(target, comparisons, file.phi)
}

pub fn instance_to_string(instance: &Instance) -> String {
    instance_to_string_with_meta(instance, None)
}

/// Like [`instance_to_string`], recording `meta` alongside the instance.
pub fn instance_to_string_with_meta(instance: &Instance, meta: Option<serde_json::Value>) -> String {
    let file = InstanceFile {
        format_version: FORMAT_VERSION,
        n: instance.n(),
        target: instance.target.probs().to_vec(),
        sets: instance
            .comparisons
            .sets()
            .iter()
            .map(|s| SetEntry { members: s.members.clone(), prob: s.prob })
            .collect(),
        phi: instance.phi,
        meta,
    };
    let mut out = serde_json::to_string_pretty(&file).expect("instance serializes");
    out.push('\n');
    out
}

pub fn read_instance(path: &Path) -> Result<Instance> {
    parse_instance(&std::fs::read_to_string(path)?)
}

pub fn write_instance(path: &Path, instance: &Instance) -> Result<()> {
    std::fs::write(path, instance_to_string(instance))?;
    Ok(())
}

fn parse_index(field: &str, line: usize) -> Result<usize> {
    field
        .trim()
        .parse()
        .map_err(|_| parse_error(line, format!("expected a state index, found {field:?}")))
}

/// Parses a replay stream against the support of `comp`.
pub fn parse_replay(text: &str, comp: &ComparisonDistribution) -> Result<Vec<LssSample>> {
    let mut samples = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let (members, winner) = match fields.as_slice() {
            [set, winner] => {
                let members = set.split(';').map(|f| parse_index(f, line_no)).collect::<Result<Vec<_>>>()?;
                (members, parse_index(winner, line_no)?)
            }
            [a, b, winner] => (
                vec![parse_index(a, line_no)?, parse_index(b, line_no)?],
                parse_index(winner, line_no)?,
            ),
            _ => return Err(parse_error(line_no, "expected `i,j,winner` or `m1;...;mk,winner`")),
        };
        let sample = LssSample::from_members(comp, &members, winner).map_err(|e| parse_error(line_no, e.to_string()))?;
        samples.push(sample);
    }
    Ok(samples)
}

/// Pairs are written as `i,j,winner`, larger sets as `m1;...;mk,winner`.
pub fn replay_to_string(samples: &[LssSample], comp: &ComparisonDistribution) -> String {
    let mut out = String::new();
    for s in samples {
        let members = s.members(comp);
        if members.len() == 2 {
            writeln!(out, "{},{},{}", members[0], members[1], s.winner).unwrap();
        } else {
            let set = members.iter().map(|m| m.to_string()).collect::<Vec<_>>().join(";");
            writeln!(out, "{set},{}", s.winner).unwrap();
        }
    }
    out
}

pub fn read_replay(path: &Path, comp: &ComparisonDistribution) -> Result<Vec<LssSample>> {
    parse_replay(&std::fs::read_to_string(path)?, comp)
}
