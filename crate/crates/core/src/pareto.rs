//! Two-objective dominance, Pareto fronts and hypervolume.
//!
//! Score is maximized, cost is minimized throughout.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::{ConfigText, Configuration};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveVector {
    pub score: f64,
    pub cost: f64,
}

impl ObjectiveVector {
    pub fn new(score: f64, cost: f64) -> Self {
        Self { score, cost }
    }
}

/// `u` is no worse than `v` in both objectives and strictly better in one.
pub fn dominates(u: &ObjectiveVector, v: &ObjectiveVector) -> bool {
    u.score >= v.score && u.cost <= v.cost && (u.score > v.score || u.cost < v.cost)
}

/// Indices of the non-dominated points, ordered by ascending cost.
///
/// Among equal costs the higher score survives; exact duplicates keep the
/// first occurrence.
pub fn non_dominated_indices(points: &[ObjectiveVector]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        let (pa, pb) = (&points[a], &points[b]);
        pa.cost
            .total_cmp(&pb.cost)
            .then(pb.score.total_cmp(&pa.score))
            .then(a.cmp(&b))
    });
    let mut best = f64::NEG_INFINITY;
    let mut keep = Vec::new();
    for i in order {
        if points[i].score > best {
            best = points[i].score;
            keep.push(i);
        }
    }
    keep
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrontEntry {
    pub config: Configuration,
    pub objectives: ObjectiveVector,
}

/// Mutually non-dominated entries sorted by ascending cost.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParetoFront {
    entries: Vec<FrontEntry>,
}

impl ParetoFront {
    pub fn entries(&self) -> &[FrontEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn objectives(&self) -> Vec<ObjectiveVector> {
        self.entries.iter().map(|e| e.objectives).collect()
    }

    pub fn configs(&self) -> impl Iterator<Item = &Configuration> {
        self.entries.iter().map(|e| &e.config)
    }

    pub fn hypervolume(&self, reference: &ObjectiveVector) -> f64 {
        hypervolume(&self.objectives(), reference)
    }

    /// One JSON record per line: `{"config":{...},"score":..,"cost":..}`.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for e in &self.entries {
            let record = FrontRecord {
                config: e.config.to_text(),
                score: e.objectives.score,
                cost: e.objectives.cost,
            };
            serde_json::to_writer(&mut out, &record)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// CSV with header `layers,d_sa,d_pa,l_pt,score,cost`; layers are
    /// space-separated 1-indexed integers.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "layers,d_sa,d_pa,l_pt,score,cost")?;
        for e in &self.entries {
            let layers: Vec<String> = e.config.layers().iter().map(|l| l.to_string()).collect();
            writeln!(
                out,
                "{},{},{},{},{},{}",
                layers.join(" "),
                e.config.d_sa,
                e.config.d_pa,
                e.config.l_pt,
                e.objectives.score,
                e.objectives.cost
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrontRecord {
    pub config: ConfigText,
    pub score: f64,
    pub cost: f64,
}

pub fn non_dominated(points: &[(Configuration, ObjectiveVector)]) -> ParetoFront {
    let objectives: Vec<ObjectiveVector> = points.iter().map(|(_, o)| *o).collect();
    let entries = non_dominated_indices(&objectives)
        .into_iter()
        .map(|i| FrontEntry {
            config: points[i].0.clone(),
            objectives: points[i].1,
        })
        .collect();
    ParetoFront { entries }
}

/// Exact area dominated by `points` and bounded by `reference`.
///
/// Points that do not dominate the reference contribute nothing; the input
/// need not be mutually non-dominated.
pub fn hypervolume(points: &[ObjectiveVector], reference: &ObjectiveVector) -> f64 {
    let mut sorted: Vec<&ObjectiveVector> = points
        .iter()
        .filter(|p| p.score > reference.score && p.cost < reference.cost)
        .collect();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.cost.total_cmp(&b.cost)));
    let mut prev_cost = reference.cost;
    let mut volume = 0.0;
    for p in sorted {
        if p.cost < prev_cost {
            volume += (p.score - reference.score) * (prev_cost - p.cost);
            prev_cost = p.cost;
        }
    }
    volume
}

/// Hypervolume gained by adding `point` to a front.
///
/// `front` must be mutually non-dominated and sorted by ascending cost (as
/// produced by [`non_dominated_indices`]). Runs in time linear in the front.
pub fn hypervolume_improvement(front: &[ObjectiveVector], point: &ObjectiveVector, reference: &ObjectiveVector) -> f64 {
    if point.score <= reference.score || point.cost >= reference.cost {
        return 0.0;
    }
    // Height of the front's dominated region at cost `point.cost`.
    let mut level = reference.score;
    let mut rest = front.len();
    for (i, f) in front.iter().enumerate() {
        if f.cost <= point.cost {
            level = level.max(f.score);
        } else {
            rest = i;
            break;
        }
    }
    let mut gain = 0.0;
    let mut cursor = point.cost;
    for f in &front[rest..] {
        if level >= point.score || cursor >= reference.cost {
            return gain;
        }
        let next = f.cost.min(reference.cost);
        gain += (point.score - level) * (next - cursor);
        cursor = next;
        level = level.max(f.score);
    }
    if level < point.score && cursor < reference.cost {
        gain += (point.score - level) * (reference.cost - cursor);
    }
    gain
}

/// Componentwise worst point: minimum score, maximum cost.
pub fn nadir(points: &[ObjectiveVector]) -> Result<ObjectiveVector> {
    let first = points
        .first()
        .ok_or_else(|| Error::InvalidRun("nadir of an empty point set".into()))?;
    Ok(points.iter().fold(*first, |acc, p| ObjectiveVector {
        score: acc.score.min(p.score),
        cost: acc.cost.max(p.cost),
    }))
}
