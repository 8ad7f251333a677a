//! Brute-force reference for the worst case: evaluate the defender's best
//! realisable rate at a finite set of attack flows and take the maximum.
//!
//! The inner value is piecewise constant over the arrangement cut out by the
//! cap, delay and bandwidth hyperplanes, so sampling every cell is exact. For
//! two channels the cells are found from the arrangement vertices (plus small
//! offsets around each); for more channels a per-axis grid through the
//! critical coordinates is used, which can miss thin cells.

use crate::channel::{admissible, ChannelState, NetworkConfig};

use super::StateBetaTable;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub value: f64,
    pub witness: Vec<f64>,
    pub points_checked: usize,
}

/// Defender's best rate against `attack` with zero previous allocation.
pub fn inner_value(cfg: &NetworkConfig, table: &StateBetaTable, attack: &[f64]) -> f64 {
    let n = cfg.n();
    let prev = vec![0.0; n];
    ChannelState::all(n)
        .filter(|l| {
            l.enabled().all(|j| cfg.delay_ok(j, prev[j], attack[j]))
                && l.enabled().map(|j| cfg.normal_flow[j] + attack[j]).sum::<f64>() <= cfg.total_bandwidth
        })
        .map(|l| table.get(&l))
        .fold(f64::INFINITY, f64::min)
}

fn offset(cfg: &NetworkConfig) -> f64 {
    1e-7 * cfg.total_bandwidth.max(cfg.attack_budget).max(1.0)
}

fn axis_values(cfg: &NetworkConfig, j: usize, grid_density: usize) -> Vec<f64> {
    let d = offset(cfg);
    let cap = cfg.attack_cap[j];
    let thr = cfg.force_jam_threshold(j);
    let mut v = vec![0.0, cap, thr, thr - d, thr + d, cap - d];
    for l in ChannelState::all(cfg.n()).filter(|l| l.get(j)) {
        let room = cfg.total_bandwidth - l.enabled().map(|h| cfg.normal_flow[h]).sum::<f64>();
        let share = room / l.count() as f64;
        v.extend([share, share + d, share - d]);
    }
    for k in 0..=grid_density {
        v.push(cap * k as f64 / grid_density.max(1) as f64);
    }
    v.retain(|x| (0.0..=cap).contains(x));
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// Lines `a·x + b·y = c` bounding the cells of a two-channel instance.
fn arrangement_lines(cfg: &NetworkConfig) -> Vec<(f64, f64, f64)> {
    let w = cfg.total_bandwidth;
    let (r0, r1) = (cfg.normal_flow[0], cfg.normal_flow[1]);
    vec![
        (1.0, 0.0, 0.0),
        (0.0, 1.0, 0.0),
        (1.0, 0.0, cfg.attack_cap[0]),
        (0.0, 1.0, cfg.attack_cap[1]),
        (1.0, 0.0, cfg.force_jam_threshold(0)),
        (0.0, 1.0, cfg.force_jam_threshold(1)),
        (1.0, 0.0, w - r0),
        (0.0, 1.0, w - r1),
        (1.0, 1.0, w - r0 - r1),
        (1.0, 1.0, cfg.attack_budget),
    ]
}

fn arrangement_points(cfg: &NetworkConfig) -> Vec<Vec<f64>> {
    let d = offset(cfg);
    let lines = arrangement_lines(cfg);
    let mut pts = Vec::new();
    for (i, &(a1, b1, c1)) in lines.iter().enumerate() {
        for &(a2, b2, c2) in &lines[i + 1..] {
            let det = a1 * b2 - a2 * b1;
            if det.abs() < 1e-12 {
                continue;
            }
            let x = (c1 * b2 - c2 * b1) / det;
            let y = (a1 * c2 - a2 * c1) / det;
            pts.push(vec![x, y]);
            for k in 0..16 {
                let ang = (k as f64 + 0.5) * std::f64::consts::PI / 8.0;
                pts.push(vec![x + d * ang.cos(), y + d * ang.sin()]);
            }
            for &(a, b, _) in [(a1, b1, c1), (a2, b2, c2)].iter() {
                let norm = (a * a + b * b).sqrt();
                let (tx, ty) = (-b / norm, a / norm);
                for s in [-1.0, 1.0] {
                    pts.push(vec![x + s * d * tx, y + s * d * ty]);
                }
            }
        }
    }
    pts
}

fn cartesian(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = vec![vec![]];
    for axis in axes {
        out = out
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect();
    }
    out
}

/// Worst case by exhaustive sampling; `grid_density` adds evenly spaced
/// points per axis on top of the critical ones.
pub fn brute_force_worst_case(cfg: &NetworkConfig, table: &StateBetaTable, grid_density: usize) -> OracleResult {
    let n = cfg.n();
    let axes: Vec<Vec<f64>> = (0..n).map(|j| axis_values(cfg, j, grid_density)).collect();
    let mut points = cartesian(&axes);
    if n == 2 {
        points.extend(arrangement_points(cfg));
    }
    let mut best = OracleResult {
        value: inner_value(cfg, table, &vec![0.0; n]),
        witness: vec![0.0; n],
        points_checked: 0,
    };
    for p in points {
        if !admissible(cfg, &p) {
            continue;
        }
        best.points_checked += 1;
        let v = inner_value(cfg, table, &p);
        if v > best.value {
            best.value = v;
            best.witness = p;
        }
    }
    best
}
