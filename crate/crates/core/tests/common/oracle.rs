//! Reference implementations written against the documented formulas,
//! sharing no code with the crate under test.

use std::collections::{BTreeMap, BTreeSet};

/// Row-major pixels parsed from `FGRID 1` text.
pub fn parse_grid(text: &str) -> Vec<Vec<f64>> {
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("FGRID 1"));
    let dims: Vec<usize> = lines
        .next()
        .unwrap()
        .split_whitespace()
        .map(|t| t.parse().unwrap())
        .collect();
    let rows: Vec<Vec<f64>> = lines
        .take(dims[0])
        .map(|l| l.split_whitespace().map(|t| t.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), dims[0]);
    assert!(rows.iter().all(|r| r.len() == dims[1]));
    rows
}

pub fn grid_text(rows: &[Vec<f64>]) -> String {
    let mut out = format!("FGRID 1\n{} {}\n", rows.len(), rows[0].len());
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(" "));
        out.push('\n');
    }
    out
}

pub fn flag(rows: &[Vec<f64>], threshold: f64) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|r| r.iter().map(|&v| if v.abs() > threshold { 0.0 } else { v }).collect())
        .collect()
}

pub fn calibrate(rows: &[Vec<f64>], gain: f64) -> Vec<Vec<f64>> {
    rows.iter().map(|r| r.iter().map(|&v| v * gain).collect()).collect()
}

/// Direct 3×3 Gaussian convolution, σ = 1.5, clamped borders.
pub fn blur(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let sigma: f64 = 1.5;
    let mut weights = [[0.0f64; 3]; 3];
    let mut total = 0.0;
    for dy in -1i32..=1 {
        for dx in -1i32..=1 {
            let w = (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp();
            weights[(dy + 1) as usize][(dx + 1) as usize] = w;
            total += w;
        }
    }
    for w in weights.iter_mut().flatten() {
        *w /= total;
    }
    let h = rows.len() as i32;
    let w = rows[0].len() as i32;
    let mut out = vec![vec![0.0; w as usize]; h as usize];
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for dy in -1i32..=1 {
                for dx in -1i32..=1 {
                    let y = (r + dy).max(0).min(h - 1) as usize;
                    let x = (c + dx).max(0).min(w - 1) as usize;
                    acc += weights[(dy + 1) as usize][(dx + 1) as usize] * rows[y][x];
                }
            }
            out[r as usize][c as usize] = acc;
        }
    }
    out
}

/// Plain description of a cluster for the exhaustive planner oracle.
#[derive(Debug, Clone)]
pub struct Cluster {
    /// node id → (compute cost, capacity, current load)
    pub nodes: BTreeMap<String, (f64, u32, u32)>,
    /// (from, to) → (latency ms, cost per GiB); self-links are implicit.
    pub links: BTreeMap<(String, String), (f64, f64)>,
    /// data id → (size bytes, replica nodes)
    pub items: BTreeMap<String, (u64, BTreeSet<String>)>,
}

impl Cluster {
    fn link(&self, from: &str, to: &str) -> Option<(f64, f64)> {
        if from == to {
            return Some((0.0, 0.0));
        }
        self.links.get(&(from.to_string(), to.to_string())).copied()
    }

    /// Total cost on `node`, or None when infeasible.
    pub fn cost(&self, node: &str, refs: &[String], w: (f64, f64, f64)) -> Option<f64> {
        let (compute, capacity, load) = self.nodes[node];
        if load >= capacity {
            return None;
        }
        let mut transfer = 0.0;
        let mut latency: f64 = 0.0;
        let wanted: BTreeSet<&String> = refs.iter().collect();
        for id in wanted {
            let Some((size, replicas)) = self.items.get(id) else { continue };
            if replicas.contains(node) {
                continue;
            }
            let gib = *size as f64 / (1u64 << 30) as f64;
            let mut options: Vec<(f64, &String, f64)> = replicas
                .iter()
                .filter_map(|r| self.link(r, node).map(|(lat, cpg)| (gib * cpg, r, lat)))
                .collect();
            options.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(b.1)));
            let (term, _, lat) = *options.first()?;
            transfer += term;
            latency = latency.max(lat);
        }
        Some(w.0 * transfer + w.1 * latency + w.2 * compute)
    }

    /// Exhaustive argmin over nodes; ties go to the smallest node id.
    pub fn best(&self, refs: &[String], w: (f64, f64, f64)) -> Option<(String, f64)> {
        let mut all: Vec<(f64, &String)> = self
            .nodes
            .keys()
            .filter_map(|n| self.cost(n, refs, w).map(|c| (c, n)))
            .collect();
        all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(b.1)));
        all.first().map(|(c, n)| ((*n).clone(), *c))
    }
}
