//! Centre-based clustering in (delta1, delta2) space.
//!
//! Lloyd iterations seeded with k-means++. Distances are plain Euclidean on
//! the raw coordinates since both features already share the unit scale.

use std::collections::HashSet;
use std::io;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub type Point2 = [f64; 2];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ClusteringError {
    #[error("invalid clustering config: {0}")]
    InvalidConfig(String),
    #[error("{distinct} distinct points cannot form {clusters} clusters")]
    TooFewDistinctPoints { distinct: usize, clusters: usize },
    #[error("cluster {index} does not exist (result has {available} clusters)")]
    NoSuchCluster { index: usize, available: usize },
    #[error("selected cluster has {size} points; drilling needs at least {min}")]
    SubsetTooSmall { size: usize, min: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusteringConfig {
    pub n_clusters: usize,
    pub max_iterations: usize,
    /// Stop once no centroid moves further than this.
    pub convergence_tolerance: f64,
    pub rng_seed: u64,
    /// Independent seedings; the run with the lowest inertia is kept.
    #[serde(default = "default_n_init")]
    pub n_init: usize,
}

fn default_n_init() -> usize {
    10
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        ClusteringConfig {
            n_clusters: 4,
            max_iterations: 100,
            convergence_tolerance: 1e-6,
            rng_seed: 0,
            n_init: default_n_init(),
        }
    }
}

impl ClusteringConfig {
    pub fn validate(&self) -> Result<(), ClusteringError> {
        if self.n_clusters == 0 {
            return Err(ClusteringError::InvalidConfig("n_clusters must be at least 1".into()));
        }
        if self.max_iterations == 0 {
            return Err(ClusteringError::InvalidConfig("max_iterations must be at least 1".into()));
        }
        if self.n_init == 0 {
            return Err(ClusteringError::InvalidConfig("n_init must be at least 1".into()));
        }
        if self.convergence_tolerance.is_nan() || self.convergence_tolerance < 0.0 {
            return Err(ClusteringError::InvalidConfig(
                "convergence_tolerance must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringResult {
    pub centroids: Vec<Point2>,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    pub iterations_run: usize,
    pub per_cluster_sizes: Vec<usize>,
    /// Inertia after each assignment step, ending with the final inertia.
    pub inertia_history: Vec<f64>,
    pub converged: bool,
}

#[inline]
fn dist2(a: &Point2, b: &Point2) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

/// Index of the nearest centroid; ties go to the lower index.
#[inline]
fn nearest(p: &Point2, centroids: &[Point2]) -> (usize, f64) {
    let mut best = (0, dist2(p, &centroids[0]));
    for (j, c) in centroids.iter().enumerate().skip(1) {
        let d = dist2(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn count_distinct_up_to(points: &[Point2], limit: usize) -> usize {
    let mut seen = HashSet::new();
    for p in points {
        // +0.0 folds negative zero onto positive zero.
        seen.insert(((p[0] + 0.0).to_bits(), (p[1] + 0.0).to_bits()));
        if seen.len() >= limit {
            break;
        }
    }
    seen.len()
}

/// One D²-weighted draw; points already on a centroid have no weight.
fn d2_draw(d2: &[f64], total: f64, rng: &mut ChaCha8Rng) -> usize {
    let mut target = rng.random::<f64>() * total;
    for (i, &w) in d2.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        if target < w {
            return i;
        }
        target -= w;
    }
    // Rounding can walk off the end; take the last positive-weight point.
    d2.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

fn kmeans_plus_plus(points: &[Point2], k: usize, rng: &mut ChaCha8Rng) -> Vec<Point2> {
    let mut centroids = Vec::with_capacity(k);
    centroids.push(points[rng.random_range(0..points.len())]);
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let c = points[d2_draw(&d2, total, rng)];
        for (w, p) in d2.iter_mut().zip(points) {
            *w = w.min(dist2(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn assign(points: &[Point2], centroids: &[Point2], assignments: &mut [usize]) -> f64 {
    let mut inertia = 0.0;
    for (a, p) in assignments.iter_mut().zip(points) {
        let (j, d) = nearest(p, centroids);
        *a = j;
        inertia += d;
    }
    inertia
}

fn means(points: &[Point2], assignments: &[usize], k: usize) -> (Vec<Point2>, Vec<usize>) {
    let mut sums = vec![[0.0_f64; 2]; k];
    let mut sizes = vec![0usize; k];
    for (p, &a) in points.iter().zip(assignments) {
        sums[a][0] += p[0];
        sums[a][1] += p[1];
        sizes[a] += 1;
    }
    let centroids = sums
        .iter()
        .zip(&sizes)
        .map(|(s, &n)| {
            if n == 0 {
                [f64::NAN, f64::NAN]
            } else {
                [s[0] / n as f64, s[1] / n as f64]
            }
        })
        .collect();
    (centroids, sizes)
}

/// Lloyd's algorithm with k-means++ seeding, best of `n_init` runs.
/// Deterministic for a given seed.
pub fn kmeans(points: &[Point2], config: &ClusteringConfig) -> Result<ClusteringResult, ClusteringError> {
    config.validate()?;
    let k = config.n_clusters;
    let distinct = count_distinct_up_to(points, k);
    if distinct < k {
        return Err(ClusteringError::TooFewDistinctPoints { distinct, clusters: k });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut best = lloyd(points, config, &mut rng);
    for _ in 1..config.n_init {
        let run = lloyd(points, config, &mut rng);
        if run.inertia < best.inertia {
            best = run;
        }
    }
    Ok(best)
}

fn lloyd(points: &[Point2], config: &ClusteringConfig, rng: &mut ChaCha8Rng) -> ClusteringResult {
    let k = config.n_clusters;
    let mut centroids = kmeans_plus_plus(points, k, rng);
    let mut assignments = vec![0usize; points.len()];
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations_run = 0;

    for _ in 0..config.max_iterations {
        iterations_run += 1;
        history.push(assign(points, &centroids, &mut assignments));

        let (mut next, sizes) = means(points, &assignments, k);
        let mut taken: HashSet<usize> = HashSet::new();
        for j in 0..k {
            if sizes[j] > 0 {
                continue;
            }
            // Empty cluster: re-seed at the point farthest from where it was.
            let former = centroids[j];
            let far = points
                .iter()
                .enumerate()
                .filter(|(i, _)| !taken.contains(i))
                .fold((0usize, -1.0_f64), |best, (i, p)| {
                    let d = dist2(p, &former);
                    if d > best.1 {
                        (i, d)
                    } else {
                        best
                    }
                })
                .0;
            taken.insert(far);
            next[j] = points[far];
        }

        let shift = centroids
            .iter()
            .zip(&next)
            .map(|(a, b)| dist2(a, b).sqrt())
            .fold(0.0_f64, f64::max);
        let reseeded = !taken.is_empty();
        centroids = next;
        if !reseeded && shift <= config.convergence_tolerance {
            converged = true;
            break;
        }
    }

    // Centroids are the means of the last assignment unless the loop ran out
    // right after a re-seed; realign so the reported partition is consistent.
    let (aligned, sizes) = means(points, &assignments, k);
    for (c, (m, &n)) in centroids.iter_mut().zip(aligned.iter().zip(&sizes)) {
        if n > 0 {
            *c = *m;
        }
    }
    let inertia: f64 = points
        .iter()
        .zip(&assignments)
        .map(|(p, &a)| dist2(p, &centroids[a]))
        .sum();
    history.push(inertia);

    ClusteringResult {
        centroids,
        assignments,
        inertia,
        iterations_run,
        per_cluster_sizes: sizes,
        inertia_history: history,
        converged,
    }
}

/// Cluster indices ordered from most to least suspicious: by descending
/// `delta1 + delta2` of the centroid, then descending `delta2`, then index.
pub fn rank_clusters_by_suspicion(result: &ClusteringResult) -> Vec<usize> {
    let mut order: Vec<usize> = (0..result.centroids.len()).collect();
    order.sort_by(|&a, &b| {
        let (ca, cb) = (result.centroids[a], result.centroids[b]);
        let (sa, sb) = (ca[0] + ca[1], cb[0] + cb[1]);
        sb.total_cmp(&sa)
            .then(cb[1].total_cmp(&ca[1]))
            .then(a.cmp(&b))
    });
    order
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "index")]
pub enum ClusterSelection {
    TopRanked,
    Index(usize),
}

impl ClusterSelection {
    pub fn resolve(self, result: &ClusteringResult) -> Result<usize, ClusteringError> {
        let available = result.centroids.len();
        match self {
            ClusterSelection::TopRanked => Ok(rank_clusters_by_suspicion(result)[0]),
            ClusterSelection::Index(index) if index < available => Ok(index),
            ClusterSelection::Index(index) => Err(ClusteringError::NoSuchCluster { index, available }),
        }
    }
}

/// One level of an iterative drill-down.
#[derive(Debug, Clone, PartialEq)]
pub struct DrillStep {
    /// Positions in the full point set of the points clustered at this level.
    pub members: Vec<usize>,
    pub result: ClusteringResult,
}

impl DrillStep {
    /// Positions in the full point set of cluster `cluster`'s members.
    pub fn cluster_members(&self, cluster: usize) -> Vec<usize> {
        self.members
            .iter()
            .zip(&self.result.assignments)
            .filter(|(_, &a)| a == cluster)
            .map(|(&m, _)| m)
            .collect()
    }
}

/// Clusters all points: the first level of a drill-down.
pub fn drill_root(points: &[Point2], config: &ClusteringConfig) -> Result<DrillStep, ClusteringError> {
    Ok(DrillStep {
        members: (0..points.len()).collect(),
        result: kmeans(points, config)?,
    })
}

/// Re-clusters the members of one cluster of `parent`.
///
/// Refuses when the selected cluster has fewer than `2 * n_clusters` points.
pub fn drilldown(
    points: &[Point2],
    config: &ClusteringConfig,
    parent: &DrillStep,
    selection: ClusterSelection,
) -> Result<DrillStep, ClusteringError> {
    let cluster = selection.resolve(&parent.result)?;
    let members = parent.cluster_members(cluster);
    let min = 2 * config.n_clusters;
    if members.len() < min {
        return Err(ClusteringError::SubsetTooSmall { size: members.len(), min });
    }
    let subset: Vec<Point2> = members.iter().map(|&i| points[i]).collect();
    Ok(DrillStep {
        result: kmeans(&subset, config)?,
        members,
    })
}

/// What the expert decides after inspecting a level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DrillDecision {
    Accept(usize),
    Descend(ClusterSelection),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DrillStop {
    Accepted,
    /// The cluster chosen for descent was below the size guard; it is
    /// returned as the final selection.
    TooSmall,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DrillOutcome {
    pub levels: Vec<DrillStep>,
    /// Positions in the full point set of the finally selected cluster.
    pub selected: Vec<usize>,
    pub stop: DrillStop,
}

const MAX_DRILL_DEPTH: usize = 64;

/// Runs the interactive loop: cluster, ask `decide`, descend, repeat, until
/// a cluster is accepted or the selection is too small to split again.
pub fn drill_until(
    points: &[Point2],
    config: &ClusteringConfig,
    mut decide: impl FnMut(&DrillStep) -> DrillDecision,
) -> Result<DrillOutcome, ClusteringError> {
    let mut levels = vec![drill_root(points, config)?];
    loop {
        let current = levels.last().expect("at least the root level");
        match decide(current) {
            DrillDecision::Accept(c) => {
                let c = ClusterSelection::Index(c).resolve(&current.result)?;
                let selected = current.cluster_members(c);
                return Ok(DrillOutcome { levels, selected, stop: DrillStop::Accepted });
            }
            DrillDecision::Descend(sel) => {
                let c = sel.resolve(&current.result)?;
                let next = match drilldown(points, config, current, ClusterSelection::Index(c)) {
                    Ok(next) if levels.len() < MAX_DRILL_DEPTH => next,
                    Ok(_) | Err(ClusteringError::SubsetTooSmall { .. }) => {
                        let selected = current.cluster_members(c);
                        return Ok(DrillOutcome { levels, selected, stop: DrillStop::TooSmall });
                    }
                    Err(e) => return Err(e),
                };
                levels.push(next);
            }
        }
    }
}

/// JSON summary kept alongside each clustering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringSummary {
    pub centroids: Vec<Point2>,
    pub inertia: f64,
    pub sizes: Vec<usize>,
    pub ranking: Vec<usize>,
    pub iterations_run: usize,
    pub converged: bool,
    pub config: ClusteringConfig,
    pub seed: u64,
}

impl ClusteringSummary {
    pub fn new(result: &ClusteringResult, config: &ClusteringConfig) -> Self {
        ClusteringSummary {
            centroids: result.centroids.clone(),
            inertia: result.inertia,
            sizes: result.per_cluster_sizes.clone(),
            ranking: rank_clusters_by_suspicion(result),
            iterations_run: result.iterations_run,
            converged: result.converged,
            config: *config,
            seed: config.rng_seed,
        }
    }
}

/// `point_id,cluster` rows.
pub fn write_assignments_csv<W: io::Write, S: AsRef<str>>(
    sink: W,
    point_ids: &[S],
    result: &ClusteringResult,
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["point_id", "cluster"])?;
    for (id, c) in point_ids.iter().zip(&result.assignments) {
        w.write_record([id.as_ref(), c.to_string().as_str()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn cfg(k: usize, seed: u64) -> ClusteringConfig {
        ClusteringConfig {
            n_clusters: k,
            rng_seed: seed,
            ..Default::default()
        }
    }

    fn blobs(seed: u64, n: usize, centres: &[Point2], sigma: f64) -> Vec<Point2> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, sigma).unwrap();
        centres
            .iter()
            .flat_map(|c| {
                (0..n)
                    .map(|_| [c[0] + noise.sample(&mut rng), c[1] + noise.sample(&mut rng)])
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    #[test]
    fn unit_square_exact_fit() {
        let pts = vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        let r = kmeans(&pts, &cfg(4, 3)).unwrap();
        assert_eq!(r.inertia, 0.0);
        let mut cents = r.centroids.clone();
        cents.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut expected = pts.clone();
        expected.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(cents, expected);
        assert_eq!(r.per_cluster_sizes, vec![1; 4]);
    }

    #[test]
    fn two_blobs_recovered() {
        let pts = blobs(11, 100, &[[0.1, 0.1], [0.9, 0.9]], 0.02);
        let r = kmeans(&pts, &cfg(2, 5)).unwrap();
        for (lo, hi) in [(0, 100), (100, 200)] {
            let blob = &pts[lo..hi];
            let mean = [
                blob.iter().map(|p| p[0]).sum::<f64>() / 100.0,
                blob.iter().map(|p| p[1]).sum::<f64>() / 100.0,
            ];
            let c = r.centroids[r.assignments[lo]];
            assert!(dist2(&c, &mean).sqrt() < 0.05);
            assert!(r.assignments[lo..hi].iter().all(|&a| a == r.assignments[lo]));
        }
    }

    #[test]
    fn restarts_never_worse_than_first_seeding() {
        for seed in 0..20 {
            let pts = blobs(seed, 15, &[[0.2, 0.2], [0.5, 0.8], [0.8, 0.3]], 0.2);
            let single = kmeans(&pts, &ClusteringConfig { n_init: 1, ..cfg(3, seed) }).unwrap();
            let many = kmeans(&pts, &cfg(3, seed)).unwrap();
            assert!(many.inertia <= single.inertia);
        }
        let pts = blobs(0, 5, &[[0.5, 0.5]], 0.2);
        assert!(kmeans(&pts, &ClusteringConfig { n_init: 0, ..cfg(2, 0) }).is_err());
    }

    #[test]
    fn too_few_distinct_points() {
        let pts = vec![[0.5, 0.5]; 10];
        assert_eq!(
            kmeans(&pts, &cfg(2, 0)).unwrap_err(),
            ClusteringError::TooFewDistinctPoints { distinct: 1, clusters: 2 }
        );
        assert!(kmeans(&pts, &cfg(0, 0)).is_err());
    }

    #[test]
    fn deterministic_and_monotone() {
        let pts = blobs(2, 300, &[[0.2, 0.3], [0.5, 0.5], [0.8, 0.2], [0.7, 0.9]], 0.15);
        let a = kmeans(&pts, &cfg(4, 9)).unwrap();
        let b = kmeans(&pts, &cfg(4, 9)).unwrap();
        assert_eq!(a, b);
        for w in a.inertia_history.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
        assert_eq!(a.per_cluster_sizes.iter().sum::<usize>(), pts.len());
    }

    #[test]
    fn fixed_point_at_zero_tolerance() {
        let pts = blobs(4, 200, &[[0.2, 0.3], [0.5, 0.5], [0.8, 0.2]], 0.2);
        let config = ClusteringConfig { convergence_tolerance: 0.0, max_iterations: 1000, ..cfg(3, 1) };
        let r = kmeans(&pts, &config).unwrap();
        assert!(r.converged);
        let mut again = vec![0; pts.len()];
        assign(&pts, &r.centroids, &mut again);
        assert_eq!(again, r.assignments);
        let (m, _) = means(&pts, &again, 3);
        assert_eq!(m, r.centroids);
    }

    #[test]
    fn ranking_rules() {
        let mut r = kmeans(&[[0.0, 0.0], [1.0, 1.0]], &cfg(2, 0)).unwrap();
        r.centroids = vec![[0.9, 0.8], [0.2, 0.1]];
        assert_eq!(rank_clusters_by_suspicion(&r), vec![0, 1]);
        r.centroids = vec![[0.5, 0.5], [0.6, 0.4]];
        assert_eq!(0.6 + 0.4, 1.0);
        assert_eq!(rank_clusters_by_suspicion(&r), vec![0, 1]);
        r.centroids = vec![[0.6, 0.4], [0.5, 0.5]];
        assert_eq!(rank_clusters_by_suspicion(&r), vec![1, 0]);
        r.centroids = vec![[0.3, 0.3]];
        assert_eq!(rank_clusters_by_suspicion(&r), vec![0]);
    }

    #[test]
    fn drill_shrinks_and_stays_in_corner() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut pts: Vec<Point2> = (0..400).map(|_| [rng.random::<f64>() * 0.6, rng.random::<f64>() * 0.6]).collect();
        pts.extend(blobs(9, 60, &[[0.9, 0.9]], 0.03));
        let config = cfg(4, 2);
        let root = drill_root(&pts, &config).unwrap();
        let top = rank_clusters_by_suspicion(&root.result)[0];
        let parent_sum = root.result.centroids[top][0] + root.result.centroids[top][1];
        let step = drilldown(&pts, &config, &root, ClusterSelection::TopRanked).unwrap();
        assert!(step.members.len() < pts.len());
        for &i in &step.members {
            assert!(pts[i][0] + pts[i][1] >= parent_sum - 0.2);
        }
    }

    #[test]
    fn uniform_drill_is_strict_subset() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<Point2> = (0..500).map(|_| [rng.random(), rng.random()]).collect();
        let config = cfg(4, 0);
        let root = drill_root(&pts, &config).unwrap();
        let step = drilldown(&pts, &config, &root, ClusterSelection::Index(1)).unwrap();
        assert!(step.members.len() < pts.len());
        assert_eq!(
            drilldown(&pts, &config, &root, ClusterSelection::Index(7)).unwrap_err(),
            ClusteringError::NoSuchCluster { index: 7, available: 4 }
        );
    }

    #[test]
    fn drill_guard_on_small_cluster() {
        // 3 far points form their own cluster; 4 clusters need 8 to split.
        let mut pts = vec![[0.95, 0.95], [0.96, 0.97], [0.97, 0.94]];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        pts.extend((0..100).map(|_| [rng.random::<f64>() * 0.3, rng.random::<f64>() * 0.3]));
        let config = cfg(4, 0);
        let outcome = drill_until(&pts, &config, |_| DrillDecision::Descend(ClusterSelection::TopRanked)).unwrap();
        assert_eq!(outcome.stop, DrillStop::TooSmall);
        assert!(outcome.selected.len() < 8);
        assert!(!outcome.levels.is_empty());

        let root = drill_root(&pts, &config).unwrap();
        let top = rank_clusters_by_suspicion(&root.result)[0];
        assert_eq!(root.cluster_members(top), vec![0, 1, 2]);
        assert!(matches!(
            drilldown(&pts, &config, &root, ClusterSelection::TopRanked),
            Err(ClusteringError::SubsetTooSmall { size: 3, min: 8 })
        ));
    }

    #[test]
    fn drill_accept() {
        let pts = blobs(5, 50, &[[0.1, 0.1], [0.9, 0.9]], 0.02);
        let outcome = drill_until(&pts, &cfg(2, 0), |step| {
            DrillDecision::Accept(rank_clusters_by_suspicion(&step.result)[0])
        })
        .unwrap();
        assert_eq!(outcome.stop, DrillStop::Accepted);
        assert_eq!(outcome.selected, (50..100).collect::<Vec<_>>());
    }

    #[test]
    fn assignments_export() {
        let r = kmeans(&[[0.0, 0.0], [1.0, 1.0]], &cfg(2, 0)).unwrap();
        let mut buf = Vec::new();
        write_assignments_csv(&mut buf, &["a", "b"], &r).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("point_id,cluster\na,"));
        let summary = ClusteringSummary::new(&r, &cfg(2, 0));
        let json = serde_json::to_string(&summary).unwrap();
        assert_eq!(serde_json::from_str::<ClusteringSummary>(&json).unwrap(), summary);
    }
}
