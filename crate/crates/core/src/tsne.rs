//! Exact O(n²) t-SNE into two dimensions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pairs::Direction;

/// Floor applied to probabilities before taking logs.
const PROB_FLOOR: f64 = 1e-12;
const PERPLEXITY_TOL: f64 = 1e-4;
const MAX_BISECTIONS: usize = 200;
const MIN_GAIN: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub exaggeration: f64,
    pub exaggeration_iters: usize,
    pub momentum_initial: f64,
    pub momentum_final: f64,
    pub momentum_switch: usize,
    /// Standard deviation of the Gaussian initial coordinates.
    pub init_std: f64,
    /// KL is recorded every this many iterations (and at the first and last).
    pub kl_every: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            exaggeration: 12.0,
            exaggeration_iters: 250,
            momentum_initial: 0.5,
            momentum_final: 0.8,
            momentum_switch: 250,
            init_std: 1e-2,
            kl_every: 50,
            seed: 0,
        }
    }
}

impl TsneConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if n < 3 {
            return Err(Error::invalid(format!("t-SNE needs at least 3 points, got {n}")));
        }
        if !(self.perplexity > 1.0 && self.perplexity < (n - 1) as f64) {
            return Err(Error::invalid(format!(
                "perplexity {} must lie in (1, {}) for {n} points",
                self.perplexity,
                n - 1
            )));
        }
        if self.iterations == 0 || self.kl_every == 0 {
            return Err(Error::invalid("iterations and kl_every must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.init_std > 0.0 && self.exaggeration >= 1.0) {
            return Err(Error::invalid(
                "learning rate and init std must be positive, exaggeration >= 1",
            ));
        }
        Ok(())
    }
}

/// Symmetric joint affinities `P` (row-major `n × n`) and the perplexity each
/// point's conditional distribution actually reached.
#[derive(Debug, Clone, PartialEq)]
pub struct Affinities {
    n: usize,
    p: Vec<f64>,
    perplexities: Vec<f64>,
}

impl Affinities {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.p[i * self.n + j]
    }

    pub fn matrix(&self) -> &[f64] {
        &self.p
    }

    pub fn perplexities(&self) -> &[f64] {
        &self.perplexities
    }
}

fn squared_distances(x: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = x.len();
    let dim = x.first().map_or(0, Vec::len);
    if dim == 0 || x.iter().any(|v| v.len() != dim) {
        return Err(Error::shape("t-SNE input rows must share a nonzero dimension"));
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("t-SNE input contains non-finite values"));
    }
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let s: f64 = x[i].iter().zip(&x[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            d[i * n + j] = s;
            d[j * n + i] = s;
        }
    }
    Ok(d)
}

/// Fills `row` with `p_{j|i}` for precision `beta` and returns its perplexity.
/// Distances are shifted by their minimum, which leaves both unchanged.
fn conditional(dist: &[f64], i: usize, d_min: f64, beta: f64, row: &mut [f64]) -> f64 {
    let mut z = 0.0;
    for (j, (&d, r)) in dist.iter().zip(row.iter_mut()).enumerate() {
        *r = if j == i { 0.0 } else { (-beta * (d - d_min)).exp() };
        z += *r;
    }
    let mut weighted = 0.0;
    for (j, r) in row.iter_mut().enumerate() {
        *r /= z;
        if j != i {
            weighted += *r * (dist[j] - d_min);
        }
    }
    (z.ln() + beta * weighted).exp()
}

/// Per-point Gaussian bandwidths by bisection on the precision, then
/// `p_ij = (p_{j|i} + p_{i|j}) / 2n`.
pub fn compute_affinities(x: &[Vec<f64>], perplexity: f64) -> Result<Affinities> {
    let n = x.len();
    if n < 3 {
        return Err(Error::invalid(format!("t-SNE needs at least 3 points, got {n}")));
    }
    if !(perplexity > 1.0 && perplexity < (n - 1) as f64) {
        return Err(Error::invalid(format!(
            "perplexity {perplexity} must lie in (1, {})",
            n - 1
        )));
    }
    let dist = squared_distances(x)?;
    if dist.iter().all(|&d| d == 0.0) {
        return Err(Error::Numerical("all points coincide; affinities are undefined".into()));
    }
    let mut cond = vec![0.0; n * n];
    let mut perplexities = vec![0.0; n];
    let mut unattained = 0;
    for i in 0..n {
        let di = &dist[i * n..(i + 1) * n];
        let d_min = di
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, &d)| d)
            .fold(f64::INFINITY, f64::min);
        let spread = di.iter().map(|&d| d - d_min).fold(0.0, f64::max);
        let row = &mut cond[i * n..(i + 1) * n];
        let (mut lo, mut hi) = (0.0, f64::INFINITY);
        let mut beta = if spread > 0.0 { 1.0 / spread } else { 1.0 };
        let mut best = (f64::INFINITY, beta);
        for _ in 0..MAX_BISECTIONS {
            let perp = conditional(di, i, d_min, beta, row);
            let gap = perp - perplexity;
            if gap.abs() < best.0 {
                best = (gap.abs(), beta);
            }
            if gap.abs() < PERPLEXITY_TOL {
                break;
            }
            if gap > 0.0 {
                lo = beta;
                beta = if hi.is_finite() { 0.5 * (lo + hi) } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = 0.5 * (lo + hi);
            }
        }
        perplexities[i] = conditional(di, i, d_min, best.1, row);
        if (perplexities[i] - perplexity).abs() >= 1e-3 {
            unattained += 1;
        }
    }
    if unattained > 0 {
        log::warn!(
            "target perplexity {perplexity} not reachable for {unattained} of {n} points (duplicate neighbours)"
        );
    }
    let mut p = vec![0.0; n * n];
    let scale = 1.0 / (2.0 * n as f64);
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = (cond[i * n + j] + cond[j * n + i]) * scale;
        }
    }
    Ok(Affinities { n, p, perplexities })
}

/// `KL(P || Q)` for the Student-t kernel on `coords`; both probabilities
/// are floored at 1e-12 inside the logarithm.
pub fn kl_divergence(affinities: &Affinities, coords: &[[f64; 2]]) -> f64 {
    let n = affinities.n;
    let mut z = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            z += 2.0 * student_t(&coords[i], &coords[j]);
        }
    }
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let p = affinities.get(i, j);
            if p > 0.0 {
                let q = student_t(&coords[i], &coords[j]) / z;
                kl += p * (p.max(PROB_FLOOR) / q.max(PROB_FLOOR)).ln();
            }
        }
    }
    kl
}

fn student_t(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    1.0 / (1.0 + dx * dx + dy * dy)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsneResult {
    pub coords: Vec<[f64; 2]>,
    /// `(iteration, KL)` with iteration 0 taken before the first update.
    pub kl_history: Vec<(usize, f64)>,
    pub config: TsneConfig,
}

impl TsneResult {
    pub fn initial_kl(&self) -> f64 {
        self.kl_history.first().map_or(f64::NAN, |h| h.1)
    }

    pub fn final_kl(&self) -> f64 {
        self.kl_history.last().map_or(f64::NAN, |h| h.1)
    }
}

/// Gradient descent on `KL(P || Q)` with early exaggeration, a two-stage
/// momentum schedule and per-coordinate adaptive gains.
pub fn tsne_embed(x: &[Vec<f64>], config: &TsneConfig) -> Result<TsneResult> {
    config.validate(x.len())?;
    let aff = compute_affinities(x, config.perplexity)?;
    tsne_from_affinities(&aff, config)
}

pub fn tsne_from_affinities(aff: &Affinities, config: &TsneConfig) -> Result<TsneResult> {
    let n = aff.n;
    config.validate(n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let normal = Normal::new(0.0, config.init_std).map_err(|e| Error::invalid(e.to_string()))?;
    let mut y: Vec<[f64; 2]> = (0..n)
        .map(|_| [normal.sample(&mut rng), normal.sample(&mut rng)])
        .collect();
    let mut velocity = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut grad = vec![[0.0; 2]; n];
    let mut w = vec![0.0; n * n];
    let mut kl_history = vec![(0, kl_divergence(aff, &y))];

    for iter in 0..config.iterations {
        let exaggeration = if iter < config.exaggeration_iters {
            config.exaggeration
        } else {
            1.0
        };
        let momentum = if iter < config.momentum_switch {
            config.momentum_initial
        } else {
            config.momentum_final
        };

        let mut z = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let v = student_t(&y[i], &y[j]);
                w[i * n + j] = v;
                w[j * n + i] = v;
                z += 2.0 * v;
            }
        }
        for i in 0..n {
            let mut g = [0.0; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let wij = w[i * n + j];
                let m = (exaggeration * aff.p[i * n + j] - wij / z) * wij;
                g[0] += m * (y[i][0] - y[j][0]);
                g[1] += m * (y[i][1] - y[j][1]);
            }
            grad[i] = [4.0 * g[0], 4.0 * g[1]];
        }

        let mut mean = [0.0; 2];
        for i in 0..n {
            for d in 0..2 {
                let same_sign = (grad[i][d] > 0.0) == (velocity[i][d] > 0.0);
                gains[i][d] = if same_sign {
                    gains[i][d] * 0.8
                } else {
                    gains[i][d] + 0.2
                };
                gains[i][d] = gains[i][d].max(MIN_GAIN);
                velocity[i][d] = momentum * velocity[i][d] - config.learning_rate * gains[i][d] * grad[i][d];
                y[i][d] += velocity[i][d];
                mean[d] += y[i][d];
            }
        }
        for p in &mut y {
            p[0] -= mean[0] / n as f64;
            p[1] -= mean[1] / n as f64;
        }
        if y.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("t-SNE diverged at iteration {}", iter + 1)));
        }
        let done = iter + 1;
        if done % config.kl_every == 0 || done == config.iterations {
            kl_history.push((done, kl_divergence(aff, &y)));
        }
    }
    Ok(TsneResult {
        coords: y,
        kl_history,
        config: config.clone(),
    })
}

/// Mean fraction of each point's `k` nearest 2-D neighbours (excluding
/// itself, ties by index) that share its label.
pub fn cluster_purity<L: PartialEq>(coords: &[[f64; 2]], labels: &[L], k: usize) -> Result<f64> {
    let n = coords.len();
    if labels.len() != n {
        return Err(Error::shape(format!("{n} coordinates but {} labels", labels.len())));
    }
    if k == 0 || k >= n {
        return Err(Error::invalid(format!("k = {k} neighbours with {n} points")));
    }
    let mut total = 0.0;
    let mut order: Vec<(f64, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        order.clear();
        order.extend((0..n).filter(|&j| j != i).map(|j| {
            let d = (coords[i][0] - coords[j][0]).powi(2) + (coords[i][1] - coords[j][1]).powi(2);
            (d, j)
        }));
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let same = order[..k].iter().filter(|&&(_, j)| labels[j] == labels[i]).count();
        total += same as f64 / k as f64;
    }
    Ok(total / n as f64)
}

/// `pair_id,label,x,y`; unlabeled points use `?`.
pub fn coords_to_csv(ids: &[u64], labels: &[Option<Direction>], coords: &[[f64; 2]]) -> String {
    let mut out = String::from("pair_id,label,x,y\n");
    for ((id, label), c) in ids.iter().zip(labels).zip(coords) {
        let l = label.map_or_else(|| "?".to_string(), |d| d.value().to_string());
        out.push_str(&format!("{id},{l},{},{}\n", c[0], c[1]));
    }
    out
}

fn colour(label: Option<Direction>) -> &'static str {
    match label {
        Some(Direction::Forward) => "#1f4fd1",
        Some(Direction::Backward) => "#d11f1f",
        Some(Direction::NoCausality) => "#1f9d3a",
        None => "#808080",
    }
}

/// Scatter plot: forward blue, backward red, no-causality green.
pub fn coords_to_svg(labels: &[Option<Direction>], coords: &[[f64; 2]], title: &str) -> String {
    const SIZE: f64 = 600.0;
    const MARGIN: f64 = 30.0;
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for c in coords {
        for d in 0..2 {
            lo[d] = lo[d].min(c[d]);
            hi[d] = hi[d].max(c[d]);
        }
    }
    let span = (0..2).map(|d| (hi[d] - lo[d]).max(1e-12)).fold(0.0, f64::max);
    let scale = (SIZE - 2.0 * MARGIN) / span;
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SIZE}\" height=\"{SIZE}\" viewBox=\"0 0 {SIZE} {SIZE}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{MARGIN}\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\">{}</text>\n",
        escape(title)
    );
    for (label, c) in labels.iter().zip(coords) {
        let x = MARGIN + (c[0] - lo[0]) * scale;
        let y = SIZE - MARGIN - (c[1] - lo[1]) * scale;
        out.push_str(&format!(
            "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"2.5\" fill=\"{}\" fill-opacity=\"0.8\"/>\n",
            colour(*label)
        ));
    }
    let legend = [
        (Some(Direction::Forward), "1 (A causes B)"),
        (Some(Direction::Backward), "-1 (B causes A)"),
        (Some(Direction::NoCausality), "0 (no causality)"),
    ];
    for (k, (label, text)) in legend.iter().enumerate() {
        let y = 40.0 + 16.0 * k as f64;
        out.push_str(&format!(
            "<circle cx=\"{}\" cy=\"{y}\" r=\"4\" fill=\"{}\"/><text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">{text}</text>\n",
            SIZE - 140.0,
            colour(*label),
            SIZE - 130.0,
            y + 4.0
        ));
    }
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
