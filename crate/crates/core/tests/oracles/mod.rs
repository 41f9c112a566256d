//! Brute-force reference implementations used as test oracles.
//!
//! Each one is written independently of the library code it checks, usually
//! by a slower but more obviously correct route.

#![allow(dead_code)]

use rimscan_core::evaluation::LossConfig;
use rimscan_core::tuning::{ScoreTable, SensitivityBand};

// ---------------------------------------------------------------- labeling

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Component count by union-find over every neighbouring voxel pair.
/// `max_axes` is 1, 2 or 3 for 6-, 18- and 26-connectivity.
pub fn union_find_components(dims: [usize; 3], bits: &[bool], max_axes: usize) -> usize {
    let [nx, ny, nz] = dims;
    let idx = |x: usize, y: usize, z: usize| x + nx * (y + ny * z);
    let mut parent: Vec<usize> = (0..bits.len()).collect();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if !bits[idx(x, y, z)] {
                    continue;
                }
                for dz in -1i64..=1 {
                    for dy in -1i64..=1 {
                        for dx in -1i64..=1 {
                            let moved =
                                (dx != 0) as usize + (dy != 0) as usize + (dz != 0) as usize;
                            if moved == 0 || moved > max_axes {
                                continue;
                            }
                            let (qx, qy, qz) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
                            if qx < 0
                                || qy < 0
                                || qz < 0
                                || qx >= nx as i64
                                || qy >= ny as i64
                                || qz >= nz as i64
                            {
                                continue;
                            }
                            let j = idx(qx as usize, qy as usize, qz as usize);
                            if bits[j] {
                                let (a, b) =
                                    (find(&mut parent, idx(x, y, z)), find(&mut parent, j));
                                parent[a] = b;
                            }
                        }
                    }
                }
            }
        }
    }
    let mut roots: Vec<usize> = (0..bits.len())
        .filter(|&i| bits[i])
        .map(|i| find(&mut parent, i))
        .collect();
    roots.sort_unstable();
    roots.dedup();
    roots.len()
}

// --------------------------------------------------------------- dilation

/// Exact test for the 3 mm ellipsoid at spacing (0.4, 0.4, 1.0):
/// (0.4 dx)^2 + (0.4 dy)^2 + dz^2 <= 9  <=>  4dx^2 + 4dy^2 + 25dz^2 <= 225.
pub fn in_3mm_ellipsoid(dx: i64, dy: i64, dz: i64) -> bool {
    4 * dx * dx + 4 * dy * dy + 25 * dz * dz <= 225
}

pub fn ellipsoid_3mm_count() -> usize {
    let mut n = 0;
    for dz in -10..=10 {
        for dy in -10..=10 {
            for dx in -10..=10 {
                n += in_3mm_ellipsoid(dx, dy, dz) as usize;
            }
        }
    }
    n
}

/// Gather-form dilation: an output voxel is set when any input voxel lies
/// within the structuring element centred on it.
pub fn dilate_gather(
    dims: [usize; 3],
    bits: &[bool],
    inside: impl Fn(i64, i64, i64) -> bool,
    reach: [i64; 3],
) -> Vec<bool> {
    let [nx, ny, nz] = dims;
    let idx = |x: i64, y: i64, z: i64| x as usize + nx * (y as usize + ny * z as usize);
    let mut out = vec![false; bits.len()];
    for z in 0..nz as i64 {
        for y in 0..ny as i64 {
            for x in 0..nx as i64 {
                'search: for dz in -reach[2]..=reach[2] {
                    for dy in -reach[1]..=reach[1] {
                        for dx in -reach[0]..=reach[0] {
                            let (qx, qy, qz) = (x + dx, y + dy, z + dz);
                            if qx < 0
                                || qy < 0
                                || qz < 0
                                || qx >= nx as i64
                                || qy >= ny as i64
                                || qz >= nz as i64
                            {
                                continue;
                            }
                            if inside(dx, dy, dz) && bits[idx(qx, qy, qz)] {
                                out[idx(x, y, z)] = true;
                                break 'search;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

// ------------------------------------------------------------- 2D slices

/// Zero-padded 2D image, indexed `img[y][x]`.
pub struct Grid {
    pub w: usize,
    pub h: usize,
    px: Vec<Vec<bool>>,
}

impl Grid {
    pub fn new(w: usize, h: usize, bits: &[bool]) -> Self {
        let mut px = vec![vec![false; w + 2]; h + 2];
        for y in 0..h {
            for x in 0..w {
                px[y + 1][x + 1] = bits[x + w * y];
            }
        }
        Self { w, h, px }
    }

    pub fn at(&self, x: i64, y: i64) -> bool {
        self.px[(y + 1) as usize][(x + 1) as usize]
    }

    fn set(&mut self, x: i64, y: i64, v: bool) {
        self.px[(y + 1) as usize][(x + 1) as usize] = v;
    }

    pub fn bits(&self) -> Vec<bool> {
        let mut out = Vec::with_capacity(self.w * self.h);
        for y in 0..self.h as i64 {
            for x in 0..self.w as i64 {
                out.push(self.at(x, y));
            }
        }
        out
    }

    /// Neighbours P2..P9 of the classic thinning notation: N, NE, E, SE, S, SW, W, NW.
    fn p(&self, x: i64, y: i64) -> [bool; 8] {
        [
            self.at(x, y - 1),
            self.at(x + 1, y - 1),
            self.at(x + 1, y),
            self.at(x + 1, y + 1),
            self.at(x, y + 1),
            self.at(x - 1, y + 1),
            self.at(x - 1, y),
            self.at(x - 1, y - 1),
        ]
    }

    /// Simple point test by explicit component counting inside the 3x3 window:
    /// exactly one 8-component of foreground neighbours and exactly one
    /// 4-component of background neighbours touching the centre 4-wise.
    fn is_simple(&self, x: i64, y: i64) -> bool {
        let mut win = [[false; 3]; 3];
        for (j, row) in win.iter_mut().enumerate() {
            for (i, v) in row.iter_mut().enumerate() {
                *v = self.at(x + i as i64 - 1, y + j as i64 - 1);
            }
        }
        win[1][1] = false;
        let fg: Vec<(usize, usize)> = (0..9)
            .map(|k| (k % 3, k / 3))
            .filter(|&(i, j)| (i, j) != (1, 1) && win[j][i])
            .collect();
        let fg_components = count_components(&fg, true);
        let bg: Vec<(usize, usize)> = (0..9)
            .map(|k| (k % 3, k / 3))
            .filter(|&(i, j)| (i, j) != (1, 1) && !win[j][i])
            .collect();
        // background components that are 4-adjacent to the centre
        let bg_labels = component_labels(&bg, false);
        let mut touching: Vec<usize> = bg
            .iter()
            .zip(&bg_labels)
            .filter(|((i, j), _)| (*i == 1) ^ (*j == 1))
            .map(|(_, &l)| l)
            .collect();
        touching.sort_unstable();
        touching.dedup();
        fg_components == 1 && touching.len() == 1
    }
}

fn adjacent(a: (usize, usize), b: (usize, usize), eight: bool) -> bool {
    let dx = a.0.abs_diff(b.0);
    let dy = a.1.abs_diff(b.1);
    if eight {
        dx <= 1 && dy <= 1 && (dx + dy) > 0
    } else {
        dx + dy == 1
    }
}

fn component_labels(cells: &[(usize, usize)], eight: bool) -> Vec<usize> {
    let mut label = vec![usize::MAX; cells.len()];
    let mut next = 0;
    for s in 0..cells.len() {
        if label[s] != usize::MAX {
            continue;
        }
        label[s] = next;
        let mut stack = vec![s];
        while let Some(c) = stack.pop() {
            for o in 0..cells.len() {
                if label[o] == usize::MAX && adjacent(cells[c], cells[o], eight) {
                    label[o] = next;
                    stack.push(o);
                }
            }
        }
        next += 1;
    }
    label
}

fn count_components(cells: &[(usize, usize)], eight: bool) -> usize {
    component_labels(cells, eight)
        .into_iter()
        .max()
        .map_or(0, |m| m + 1)
}

/// Reference thinning: two directional subiterations per pass; candidates
/// marked on a snapshot, then removed in raster order while still simple
/// with at least two foreground neighbours.
pub fn thin_reference(w: usize, h: usize, bits: &[bool]) -> Vec<bool> {
    let mut g = Grid::new(w, h, bits);
    loop {
        let mut changed = false;
        for first in [true, false] {
            let mut marked = Vec::new();
            for y in 0..h as i64 {
                for x in 0..w as i64 {
                    if !g.at(x, y) {
                        continue;
                    }
                    let p = g.p(x, y);
                    let b = p.iter().filter(|&&v| v).count();
                    let a = (0..8).filter(|&k| !p[k] && p[(k + 1) % 8]).count();
                    let (p2, p4, p6, p8) = (p[0], p[2], p[4], p[6]);
                    let dir = if first {
                        !(p2 && p4 && p6) && !(p4 && p6 && p8)
                    } else {
                        !(p2 && p4 && p8) && !(p2 && p6 && p8)
                    };
                    if (2..=6).contains(&b) && a == 1 && dir {
                        marked.push((x, y));
                    }
                }
            }
            for (x, y) in marked {
                let b = g.p(x, y).iter().filter(|&&v| v).count();
                if b >= 2 && g.is_simple(x, y) {
                    g.set(x, y, false);
                    changed = true;
                }
            }
        }
        if !changed {
            return g.bits();
        }
    }
}

/// 8-connected foreground components of a 2D image, by flood fill.
pub fn components_8(w: usize, h: usize, bits: &[bool]) -> usize {
    components_2d(w, h, bits, true)
}

pub fn components_2d(w: usize, h: usize, bits: &[bool], eight: bool) -> usize {
    let mut seen = vec![false; bits.len()];
    let mut n = 0;
    for s in 0..bits.len() {
        if !bits[s] || seen[s] {
            continue;
        }
        n += 1;
        seen[s] = true;
        let mut stack = vec![s];
        while let Some(c) = stack.pop() {
            let (x, y) = ((c % w) as i64, (c / w) as i64);
            for dy in -1..=1i64 {
                for dx in -1..=1i64 {
                    if (dx, dy) == (0, 0) || (!eight && dx != 0 && dy != 0) {
                        continue;
                    }
                    let (qx, qy) = (x + dx, y + dy);
                    if qx < 0 || qy < 0 || qx >= w as i64 || qy >= h as i64 {
                        continue;
                    }
                    let q = qx as usize + w * qy as usize;
                    if bits[q] && !seen[q] {
                        seen[q] = true;
                        stack.push(q);
                    }
                }
            }
        }
    }
    n
}

/// Foreground pixels with at least one 4-neighbour outside the image or in background.
pub fn perimeter_brute(w: usize, h: usize, bits: &[bool]) -> u32 {
    let g = Grid::new(w, h, bits);
    let mut n = 0;
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            if g.at(x, y)
                && [(0, -1), (1, 0), (0, 1), (-1, 0)]
                    .iter()
                    .any(|(dx, dy)| !g.at(x + dx, y + dy))
            {
                n += 1;
            }
        }
    }
    n
}

// -------------------------------------------------------------- decision

/// "Ratio >= tau_r on at least two consecutive slices", by direct search.
pub fn rule_brute(slices: &[usize], ratios: &[f64], tau_r: f64) -> bool {
    for i in 0..slices.len() {
        for j in 0..slices.len() {
            if slices[j] == slices[i] + 1 && ratios[i] >= tau_r && ratios[j] >= tau_r {
                return true;
            }
        }
    }
    false
}

// --------------------------------------------------------------- metrics

/// Mann-Whitney statistic over every positive/negative pair, ties 1/2.
pub fn auc_pair_count(scores: &[(f64, bool)]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for &(sp, lp) in scores {
        if !lp {
            continue;
        }
        for &(sn, ln) in scores {
            if ln {
                continue;
            }
            pairs += 1.0;
            if sp > sn {
                wins += 1.0;
            } else if sp == sn {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Average precision by enumerating every distinct threshold and recounting.
pub fn ap_enumerate(scores: &[(f64, bool)]) -> f64 {
    let mut thresholds: Vec<f64> = scores.iter().map(|s| s.0).collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let total_pos = scores.iter().filter(|s| s.1).count() as f64;
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for t in thresholds {
        let tp = scores.iter().filter(|s| s.0 >= t && s.1).count() as f64;
        let predicted = scores.iter().filter(|s| s.0 >= t).count() as f64;
        let recall = tp / total_pos;
        ap += (recall - prev_recall) * (tp / predicted);
        prev_recall = recall;
    }
    ap
}

pub fn kappa_direct(both_yes: f64, a_yes_b_no: f64, a_no_b_yes: f64, both_no: f64) -> f64 {
    let n = both_yes + a_yes_b_no + a_no_b_yes + both_no;
    let observed = (both_yes + both_no) / n;
    let a_yes = (both_yes + a_yes_b_no) / n;
    let b_yes = (both_yes + a_no_b_yes) / n;
    let expected = a_yes * b_yes + (1.0 - a_yes) * (1.0 - b_yes);
    (observed - expected) / (1.0 - expected)
}

/// Dice + weighted BCE by separate passes over the voxels.
pub fn loss_direct(prob: &[f32], truth: &[f32], cfg: &LossConfig) -> f64 {
    let p: Vec<f64> = prob.iter().map(|&v| v as f64).collect();
    let y: Vec<f64> = truth.iter().map(|&v| v as f64).collect();
    let inter: f64 = p.iter().zip(&y).map(|(a, b)| a * b).sum();
    let soft_dice =
        (2.0 * inter + cfg.smooth) / (p.iter().sum::<f64>() + y.iter().sum::<f64>() + cfg.smooth);
    let terms: Vec<f64> = p
        .iter()
        .zip(&y)
        .map(|(&pi, &yi)| {
            let c = pi.max(cfg.eps).min(1.0 - cfg.eps);
            -(cfg.pos_weight * yi * c.ln() + (1.0 - yi) * (1.0 - c).ln())
        })
        .collect();
    let bce = terms.iter().sum::<f64>() / terms.len() as f64;
    cfg.mix * (1.0 - soft_dice) + (1.0 - cfg.mix) * bce
}

// ---------------------------------------------------------------- tuning

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleChoice {
    pub tau_p: f64,
    pub tau_r: f64,
    pub sensitivity: f64,
    pub ppv: f64,
    pub fallback: bool,
}

/// Exhaustive grid: every tau_p against every score attained on the
/// training lesions at that tau_p, each pair evaluated by recounting.
pub fn grid_oracle(
    table: &ScoreTable,
    train: &[usize],
    band: SensitivityBand,
) -> Option<OracleChoice> {
    let positives = train.iter().filter(|&&i| table.lesions[i].label).count() as f64;
    let mut cells = Vec::new();
    for (g, &tau_p) in table.tau_p_grid.iter().enumerate() {
        let mut candidates: Vec<f64> = train
            .iter()
            .filter_map(|&i| table.lesions[i].pair_scores[g])
            .collect();
        candidates.sort_by(f64::total_cmp);
        candidates.dedup();
        for tau_r in candidates {
            let (mut tp, mut fp) = (0.0, 0.0);
            for &i in train {
                let l = &table.lesions[i];
                if l.pair_scores[g].is_some_and(|s| s >= tau_r) {
                    if l.label {
                        tp += 1.0;
                    } else {
                        fp += 1.0;
                    }
                }
            }
            cells.push((tau_p, tau_r, tp / positives, tp / (tp + fp)));
        }
    }
    let in_band: Vec<_> = cells
        .iter()
        .filter(|c| c.2 >= band.lo && c.2 <= band.hi)
        .collect();
    if !in_band.is_empty() {
        let best = in_band
            .into_iter()
            .max_by(|a, b| {
                a.3.total_cmp(&b.3)
                    .then(a.2.total_cmp(&b.2))
                    .then(a.0.total_cmp(&b.0))
                    .then(a.1.total_cmp(&b.1))
            })
            .unwrap();
        return Some(OracleChoice {
            tau_p: best.0,
            tau_r: best.1,
            sensitivity: best.2,
            ppv: best.3,
            fallback: false,
        });
    }
    let above: Vec<_> = cells.iter().filter(|c| c.2 >= band.lo).collect();
    let best = if above.is_empty() {
        // nothing reaches the lower bound: highest sensitivity
        cells.iter().max_by(|a, b| {
            a.2.total_cmp(&b.2)
                .then(a.3.total_cmp(&b.3))
                .then(a.0.total_cmp(&b.0))
                .then(a.1.total_cmp(&b.1))
        })?
    } else {
        above.into_iter().max_by(|a, b| {
            b.2.total_cmp(&a.2)
                .then(a.3.total_cmp(&b.3))
                .then(a.0.total_cmp(&b.0))
                .then(a.1.total_cmp(&b.1))
        })?
    };
    Some(OracleChoice {
        tau_p: best.0,
        tau_r: best.1,
        sensitivity: best.2,
        ppv: best.3,
        fallback: true,
    })
}
