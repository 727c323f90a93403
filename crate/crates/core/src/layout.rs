//! Yifan-Hu spring-electrical layout.
//!
//! Nodes repel with magnitude `C * K^2 / d` (Barnes-Hut approximated) and
//! edges of the undirected projection attract with magnitude `d^2 / K`. Each
//! iteration moves every node a fixed step along its net force; the step
//! grows after five consecutive energy decreases and shrinks by `step_ratio`
//! otherwise. Energy is the sum of squared force norms.

use std::collections::HashSet;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ForwardGraph;

/// Virtual drawing area. Only its scale matters; fixed for reproducibility.
pub const LAYOUT_AREA: f64 = 1.0e6;
const STEP_GROWTH_STREAK: u32 = 5;
const MAX_TREE_DEPTH: u32 = 48;
/// Highest multipole moment kept per quadtree cell.
pub const MULTIPOLE_ORDER: usize = 8;
/// A cell is only summarised when every point in it lies within this
/// fraction of the query's distance to the cell's centre of mass, which
/// keeps the multipole series convergent.
const MAX_RADIUS_RATIO: f64 = 0.75;

pub type Point = (f64, f64);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LayoutParams {
    pub optimal_distance_scale: f64,
    pub relative_strength: f64,
    /// Defaults to 10% of the side of the virtual area.
    pub initial_step: Option<f64>,
    pub step_ratio: f64,
    pub barnes_hut_theta: f64,
    pub convergence_tolerance: f64,
    pub max_iterations: u32,
    pub seed: u64,
}

impl Default for LayoutParams {
    fn default() -> Self {
        LayoutParams {
            optimal_distance_scale: 1.0,
            relative_strength: 0.2,
            initial_step: None,
            step_ratio: 0.95,
            barnes_hut_theta: 1.2,
            convergence_tolerance: 1e-4,
            max_iterations: 1000,
            seed: 0,
        }
    }
}

impl LayoutParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.optimal_distance_scale,
            self.relative_strength,
            self.initial_step.unwrap_or(1.0),
            self.barnes_hut_theta,
            self.convergence_tolerance,
        ];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) || self.max_iterations == 0 {
            return Err(Error::Config("layout parameters must be positive".into()));
        }
        if !(self.step_ratio > 0.0 && self.step_ratio < 1.0) {
            return Err(Error::Config("step_ratio must lie in (0, 1)".into()));
        }
        Ok(())
    }

    /// Natural spring length `K` for a graph of `n` nodes.
    pub fn optimal_distance(&self, n: usize) -> f64 {
        self.optimal_distance_scale * (LAYOUT_AREA / n.max(1) as f64).sqrt()
    }

    /// Separation at which attraction `d^2/K` balances repulsion `C K^2/d`
    /// for a lone pair of nodes: `K * cbrt(C)`.
    pub fn pair_equilibrium(&self, n: usize) -> f64 {
        self.optimal_distance(n) * self.relative_strength.cbrt()
    }

    fn step0(&self) -> f64 {
        self.initial_step.unwrap_or(0.1 * LAYOUT_AREA.sqrt())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    /// Coordinates aligned with `graph.nodes()`.
    pub coordinates: Vec<Point>,
    pub iterations_used: u32,
    pub initial_energy: f64,
    pub final_energy: f64,
    pub converged: bool,
}

#[derive(Debug)]
struct Cell {
    min: Point,
    size: f64,
    com: Point,
    /// Largest distance from `com` to a point in the cell.
    radius: f64,
    /// `moments[k] = sum over points of (p - com)^k`, points as complex numbers.
    moments: [Complex64; MULTIPOLE_ORDER + 1],
    children: Option<[usize; 4]>,
    points: Vec<usize>,
}

/// Quadtree over a point set for Barnes-Hut repulsion queries.
#[derive(Debug)]
pub struct QuadTree<'a> {
    points: &'a [Point],
    cells: Vec<Cell>,
}

impl<'a> QuadTree<'a> {
    pub fn new(points: &'a [Point]) -> Self {
        let mut tree = QuadTree {
            points,
            cells: Vec::new(),
        };
        if points.is_empty() {
            return tree;
        }
        let (mut lo, mut hi) = (points[0], points[0]);
        for p in points {
            lo = (lo.0.min(p.0), lo.1.min(p.1));
            hi = (hi.0.max(p.0), hi.1.max(p.1));
        }
        let size = (hi.0 - lo.0).max(hi.1 - lo.1).max(f64::MIN_POSITIVE) * (1.0 + 1e-9);
        let all: Vec<usize> = (0..points.len()).collect();
        tree.build(lo, size, all, 0);
        tree
    }

    fn build(&mut self, min: Point, size: f64, members: Vec<usize>, depth: u32) -> usize {
        let mass = members.len() as f64;
        let (sx, sy) = members
            .iter()
            .fold((0.0, 0.0), |(x, y), &i| (x + self.points[i].0, y + self.points[i].1));
        let com = (sx / mass, sy / mass);
        let mut moments = [Complex64::new(0.0, 0.0); MULTIPOLE_ORDER + 1];
        let mut radius: f64 = 0.0;
        for &i in &members {
            let w = Complex64::new(self.points[i].0 - com.0, self.points[i].1 - com.1);
            radius = radius.max(w.norm());
            let mut power = Complex64::new(1.0, 0.0);
            for m in moments.iter_mut() {
                *m += power;
                power *= w;
            }
        }
        let id = self.cells.len();
        self.cells.push(Cell {
            min,
            size,
            com,
            radius,
            moments,
            children: None,
            points: Vec::new(),
        });
        if members.len() <= 1 || depth >= MAX_TREE_DEPTH {
            self.cells[id].points = members;
            return id;
        }
        let half = size / 2.0;
        let mut quads: [Vec<usize>; 4] = Default::default();
        for i in members {
            let p = self.points[i];
            let q = usize::from(p.0 >= min.0 + half) + 2 * usize::from(p.1 >= min.1 + half);
            quads[q].push(i);
        }
        let mut children = [usize::MAX; 4];
        for (q, members) in quads.into_iter().enumerate() {
            if members.is_empty() {
                continue;
            }
            let cmin = (min.0 + half * (q % 2) as f64, min.1 + half * (q / 2) as f64);
            children[q] = self.build(cmin, half, members, depth + 1);
        }
        self.cells[id].children = Some(children);
        id
    }

    fn contains(cell: &Cell, p: Point) -> bool {
        p.0 >= cell.min.0 && p.0 <= cell.min.0 + cell.size && p.1 >= cell.min.1 && p.1 <= cell.min.1 + cell.size
    }

    /// Sum over points of `(query - p) / |query - p|^2`, i.e. a unit-strength
    /// `1/d` repulsion. Points coinciding with `query` contribute nothing.
    ///
    /// A cell is summarised when `size / distance < theta` (distance to its
    /// centre of mass), it does not contain `query`, and all of its points lie
    /// well inside that distance. A summarised cell acts as its total mass at
    /// the centre of mass plus multipole corrections up to
    /// [`MULTIPOLE_ORDER`]: writing points as complex numbers, the force is
    /// `conj(sum_k moments[k] / (query - com)^(k+1))`.
    pub fn repulsion(&self, query: Point, theta: f64) -> Point {
        let mut acc = (0.0, 0.0);
        if self.cells.is_empty() {
            return acc;
        }
        let mut stack = vec![0usize];
        while let Some(c) = stack.pop() {
            let cell = &self.cells[c];
            match cell.children {
                None => {
                    for &i in &cell.points {
                        add_repulsion(&mut acc, query, self.points[i]);
                    }
                }
                Some(children) => {
                    let dx = query.0 - cell.com.0;
                    let dy = query.1 - cell.com.1;
                    let d = (dx * dx + dy * dy).sqrt();
                    if d > 0.0
                        && cell.size < theta * d
                        && cell.radius < MAX_RADIUS_RATIO * d
                        && !Self::contains(cell, query)
                    {
                        let inv = Complex64::new(dx, dy).inv();
                        let mut power = inv;
                        let mut field = Complex64::new(0.0, 0.0);
                        for m in &cell.moments {
                            field += m * power;
                            power *= inv;
                        }
                        acc.0 += field.re;
                        acc.1 -= field.im;
                    } else {
                        stack.extend(children.iter().copied().filter(|&k| k != usize::MAX));
                    }
                }
            }
        }
        acc
    }
}

fn add_repulsion(acc: &mut Point, query: Point, from: Point) {
    let dx = query.0 - from.0;
    let dy = query.1 - from.1;
    let d2 = dx * dx + dy * dy;
    if d2 > 0.0 {
        acc.0 += dx / d2;
        acc.1 += dy / d2;
    }
}

/// Barnes-Hut approximation of the unit-strength repulsion on `query`.
pub fn quadtree_force(points: &[Point], query: Point, theta: f64) -> Point {
    QuadTree::new(points).repulsion(query, theta)
}

/// Exact `O(n)` counterpart of [`quadtree_force`].
pub fn exact_repulsion(points: &[Point], query: Point) -> Point {
    let mut acc = (0.0, 0.0);
    for &p in points {
        add_repulsion(&mut acc, query, p);
    }
    acc
}

/// Net spring-electrical force on every node.
pub fn forces(adj: &[Vec<usize>], pos: &[Point], k: f64, strength: f64, theta: f64) -> Vec<Point> {
    let tree = QuadTree::new(pos);
    let repulsion_scale = strength * k * k;
    (0..pos.len())
        .into_par_iter()
        .map(|i| {
            let r = tree.repulsion(pos[i], theta);
            let mut f = (r.0 * repulsion_scale, r.1 * repulsion_scale);
            for &j in &adj[i] {
                let dx = pos[j].0 - pos[i].0;
                let dy = pos[j].1 - pos[i].1;
                let d = (dx * dx + dy * dy).sqrt();
                f.0 += dx * d / k;
                f.1 += dy * d / k;
            }
            f
        })
        .collect()
}

fn energy(f: &[Point]) -> f64 {
    f.iter().map(|(x, y)| x * x + y * y).sum()
}

/// Nudges exactly coincident nodes apart by a seeded perturbation of
/// `scale` magnitude. Returns whether anything moved.
fn separate_collisions(pos: &mut [Point], rng: &mut ChaCha8Rng, scale: f64) -> bool {
    let mut moved = false;
    loop {
        let mut seen: HashSet<(u64, u64)> = HashSet::with_capacity(pos.len());
        let mut clash = false;
        for p in pos.iter_mut() {
            while !seen.insert((p.0.to_bits(), p.1.to_bits())) {
                p.0 += rng.random_range(-scale..scale);
                p.1 += rng.random_range(-scale..scale);
                clash = true;
            }
        }
        if !clash {
            return moved;
        }
        moved = true;
    }
}

/// Undirected, de-duplicated, loop-free adjacency of the graph.
pub fn undirected_adjacency(graph: &ForwardGraph) -> Vec<Vec<usize>> {
    (0..graph.node_count()).map(|v| graph.neighbors_undirected(v)).collect()
}

pub fn yifan_hu(graph: &ForwardGraph, params: &LayoutParams) -> Result<Layout> {
    if graph.is_empty() {
        return Err(Error::EmptyGraph("layout"));
    }
    params.validate()?;
    let adj = undirected_adjacency(graph);
    Ok(yifan_hu_adjacency(&adj, params))
}

/// Layout over an explicit undirected adjacency (each neighbour listed on
/// both sides, no self entries).
pub fn yifan_hu_adjacency(adj: &[Vec<usize>], params: &LayoutParams) -> Layout {
    let n = adj.len();
    if n == 1 {
        return Layout {
            coordinates: vec![(0.0, 0.0)],
            iterations_used: 0,
            initial_energy: 0.0,
            final_energy: 0.0,
            converged: true,
        };
    }
    let k = params.optimal_distance(n);
    let side = LAYOUT_AREA.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut pos: Vec<Point> = (0..n)
        .map(|_| {
            (
                rng.random_range(-side / 2.0..side / 2.0),
                rng.random_range(-side / 2.0..side / 2.0),
            )
        })
        .collect();
    let jitter = 1e-6 * k;
    separate_collisions(&mut pos, &mut rng, jitter);

    let theta = params.barnes_hut_theta;
    let strength = params.relative_strength;
    let mut step = params.step0();
    let mut progress = 0;
    let mut f = forces(adj, &pos, k, strength, theta);
    let initial_energy = energy(&f);
    let mut prev_energy = initial_energy;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < params.max_iterations {
        iterations += 1;
        for (p, fi) in pos.iter_mut().zip(&f) {
            let norm = (fi.0 * fi.0 + fi.1 * fi.1).sqrt();
            if norm > 0.0 {
                p.0 += step * fi.0 / norm;
                p.1 += step * fi.1 / norm;
            }
        }
        separate_collisions(&mut pos, &mut rng, jitter);
        f = forces(adj, &pos, k, strength, theta);
        let e = energy(&f);
        if e < prev_energy {
            progress += 1;
            if progress >= STEP_GROWTH_STREAK {
                progress = 0;
                step /= params.step_ratio;
            }
        } else {
            progress = 0;
            step *= params.step_ratio;
        }
        let rel_change = if prev_energy > 0.0 {
            (prev_energy - e).abs() / prev_energy
        } else {
            0.0
        };
        prev_energy = e;
        if rel_change < params.convergence_tolerance {
            converged = true;
            break;
        }
    }

    Layout {
        coordinates: pos,
        iterations_used: iterations,
        initial_energy,
        final_energy: prev_energy,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_far_point_is_exact() {
        let pts = [(1000.0, -250.0)];
        let q = (0.0, 0.0);
        let a = quadtree_force(&pts, q, 1.2);
        let e = exact_repulsion(&pts, q);
        assert!((a.0 - e.0).abs() < 1e-12 && (a.1 - e.1).abs() < 1e-12);
    }

    #[test]
    fn distant_cluster_is_summarised_accurately() {
        let mut pts: Vec<Point> = (0..64)
            .map(|i| (1000.0 + (i % 8) as f64 * 3.0, 40.0 + (i / 8) as f64 * 2.5))
            .collect();
        pts.push((0.0, 0.0));
        let q = (0.0, 0.0);
        let a = quadtree_force(&pts, q, 1.2);
        let e = exact_repulsion(&pts, q);
        let err = ((a.0 - e.0).powi(2) + (a.1 - e.1).powi(2)).sqrt() / (e.0 * e.0 + e.1 * e.1).sqrt();
        assert!(err < 1e-12, "relative error {err:e}");
    }

    #[test]
    fn coincident_query_is_skipped() {
        let pts = [(0.0, 0.0), (1.0, 0.0)];
        let f = quadtree_force(&pts, (0.0, 0.0), 0.0);
        assert_eq!(f, (-1.0, 0.0));
    }

    #[test]
    fn duplicate_points_do_not_recurse_forever() {
        let pts = vec![(3.0, 3.0); 10];
        let f = quadtree_force(&pts, (0.0, 0.0), 0.5);
        let e = exact_repulsion(&pts, (0.0, 0.0));
        assert!((f.0 - e.0).abs() < 1e-12);
    }

    #[test]
    fn single_node_at_origin() {
        let l = yifan_hu_adjacency(&[vec![]], &LayoutParams::default());
        assert_eq!(l.coordinates, vec![(0.0, 0.0)]);
        assert_eq!((l.iterations_used, l.final_energy), (0, 0.0));
    }

    #[test]
    fn collisions_get_separated() {
        let mut pos = vec![(1.0, 1.0); 5];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(separate_collisions(&mut pos, &mut rng, 1e-6));
        let set: HashSet<_> = pos.iter().map(|p| (p.0.to_bits(), p.1.to_bits())).collect();
        assert_eq!(set.len(), 5);
    }

    #[test]
    fn params_validation() {
        assert!(LayoutParams::default().validate().is_ok());
        assert!(LayoutParams {
            step_ratio: 1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(LayoutParams {
            max_iterations: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
