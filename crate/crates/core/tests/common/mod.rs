//! Oracles shared by the integration and acceptance suites. Nothing here
//! calls into the code path it checks.

#![allow(dead_code)]

use celab::analytics::GroupVote;
use celab::nn::{cross_entropy, forward, loss_and_gradients, Mode, NetworkParams, ParamGroup};
use celab::pairs::Direction;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Worst relative error between analytic and central-difference gradients
/// for one parameter group.
#[derive(Debug, Clone)]
pub struct GroupCheck {
    pub group: ParamGroup,
    pub checked: usize,
    /// Sampled entries whose `±h` perturbation crossed a ReLU or max-pool
    /// kink and were replaced by further samples.
    pub straddled: usize,
    pub max_rel_err: f64,
}

/// Relative error with a floor on the denominator: gradients below 1e-6 are
/// compared in absolute terms, where central differences are limited by
/// round-off (~1e-11) rather than by the derivative.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Which piece of the piecewise-smooth loss a parameter vector sits on:
/// the on/off state of every ReLU and the set of winners in every max-pool
/// window (exact ties stay ties under a bias shift, so they are kept as sets).
#[derive(Debug, PartialEq)]
struct Pattern(Vec<u64>);

fn on_bits(values: &[f64], out: &mut Vec<u64>) {
    for chunk in values.chunks(64) {
        out.push(
            chunk
                .iter()
                .enumerate()
                .fold(0, |acc, (k, &v)| acc | (u64::from(v > 0.0) << k)),
        );
    }
}

fn loss_and_pattern(params: &NetworkParams, images: &[&[f64]], labels: &[usize]) -> (f64, Pattern) {
    const SIDE: usize = 22;
    const CH: usize = 32;
    let pass = forward(params, images, Mode::Infer).unwrap();
    let mut bits = Vec::new();
    for i in 0..images.len() {
        on_bits(pass.conv1(i), &mut bits);
        let c2 = pass.conv2(i);
        on_bits(c2, &mut bits);
        on_bits(pass.hidden(i), &mut bits);
        for py in 0..SIDE / 2 {
            for px in 0..SIDE / 2 {
                for c in 0..CH {
                    let at = |dy: usize, dx: usize| c2[((2 * py + dy) * SIDE + 2 * px + dx) * CH + c];
                    let w = [at(0, 0), at(0, 1), at(1, 0), at(1, 1)];
                    let m = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    bits.push(w.iter().enumerate().fold(0, |acc, (k, &v)| {
                        acc | (u64::from(m - v <= 1e-12 * m.abs().max(1.0)) << k)
                    }));
                }
            }
        }
    }
    (cross_entropy(&pass, labels).unwrap(), Pattern(bits))
}

/// Compares backprop against `(L(x + h) - L(x - h)) / 2h` on the `top`
/// largest-gradient entries and `random` further entries of every group.
///
/// A central difference only estimates the derivative when `x - h`, `x` and
/// `x + h` lie on the same smooth piece of the loss, so an entry whose
/// perturbation flips a ReLU or changes a max-pool winner is set aside and
/// the next candidate of the same kind is taken instead.
pub fn finite_difference_check(
    params: &NetworkParams,
    images: &[&[f64]],
    labels: &[usize],
    step: f64,
    top: usize,
    random: usize,
    seed: u64,
) -> Vec<GroupCheck> {
    let (_, grads) = loss_and_gradients(params, images, labels, Mode::Infer).unwrap();
    let (_, base) = loss_and_pattern(params, images, labels);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for g in ParamGroup::ALL {
        let analytic = grads.group(g);
        let mut idx: Vec<usize> = (0..analytic.len()).collect();
        idx.sort_by(|&a, &b| analytic[b].abs().total_cmp(&analytic[a].abs()));
        let mut worst: f64 = 0.0;
        let (mut checked, mut straddled) = (0, 0);
        let mut try_entry = |i: usize| -> bool {
            let mut p = params.clone();
            p.group_mut(g)[i] += step;
            let (up, pat_up) = loss_and_pattern(&p, images, labels);
            p.group_mut(g)[i] -= 2.0 * step;
            let (down, pat_down) = loss_and_pattern(&p, images, labels);
            if pat_up != base || pat_down != base {
                straddled += 1;
                return false;
            }
            worst = worst.max(rel_err(analytic[i], (up - down) / (2.0 * step)));
            checked += 1;
            true
        };
        // Largest gradients first, walking down the order past straddlers.
        let mut taken = 0;
        let mut pos = 0;
        while taken < top && pos < idx.len() {
            taken += usize::from(try_entry(idx[pos]));
            pos += 1;
        }
        let mut rest = idx.split_off(pos);
        rest.shuffle(&mut rng);
        let mut taken = 0;
        for i in rest {
            if taken == random {
                break;
            }
            taken += usize::from(try_entry(i));
        }
        out.push(GroupCheck {
            group: g,
            checked,
            straddled,
            max_rel_err: worst,
        });
    }
    out
}

/// Glorot weights plus small random biases, so no pre-activation sits
/// exactly on a ReLU kink.
pub fn jittered_params(classes: usize, seed: u64) -> NetworkParams {
    let mut p = NetworkParams::init(classes, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1a5);
    for g in [
        ParamGroup::Conv1Bias,
        ParamGroup::Conv2Bias,
        ParamGroup::FcBias,
        ParamGroup::OutBias,
    ] {
        p.group_mut(g)
            .iter_mut()
            .for_each(|b| *b = rng.random_range(-0.05..0.05));
    }
    p
}

pub fn random_images(n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (0..784).map(|_| rng.random::<f64>()).collect())
        .collect()
}

/// Mean silhouette coefficient of `labels` over 2-D points, computed
/// directly from the definition.
pub fn silhouette(points: &[[f64; 2]], labels: &[usize]) -> f64 {
    let n = points.len();
    let dist =
        |i: usize, j: usize| ((points[i][0] - points[j][0]).powi(2) + (points[i][1] - points[j][1]).powi(2)).sqrt();
    let classes: std::collections::BTreeSet<usize> = labels.iter().copied().collect();
    let mut total = 0.0;
    for i in 0..n {
        let mut a_sum = 0.0;
        let mut a_n = 0;
        let mut b = f64::INFINITY;
        for &c in &classes {
            let members: Vec<usize> = (0..n).filter(|&j| labels[j] == c && j != i).collect();
            if c == labels[i] {
                a_sum = members.iter().map(|&j| dist(i, j)).sum();
                a_n = members.len();
            } else if !members.is_empty() {
                let mean = members.iter().map(|&j| dist(i, j)).sum::<f64>() / members.len() as f64;
                b = b.min(mean);
            }
        }
        let a = if a_n > 0 { a_sum / a_n as f64 } else { 0.0 };
        total += if a_n == 0 { 0.0 } else { (b - a) / a.max(b) };
    }
    total / n as f64
}

pub const DIRS: [Direction; 3] = [Direction::Forward, Direction::Backward, Direction::NoCausality];

pub fn vote_oracle(choices: &[Direction]) -> GroupVote {
    let count = |d: Direction| choices.iter().filter(|&&c| c == d).count();
    for d in DIRS {
        if DIRS.iter().all(|&o| o == d || count(d) > count(o)) {
            return GroupVote::Choice(d);
        }
    }
    GroupVote::Tie
}

/// Rank each annotator by counting how many precede it under
/// (accuracy, id), then cut by rank.
pub fn split_oracle(acc: &[(String, f64)]) -> (Vec<String>, Vec<String>, Vec<String>) {
    let n = acc.len();
    let rank = |i: usize| {
        acc.iter()
            .filter(|o| o.1 < acc[i].1 || (o.1 == acc[i].1 && o.0 < acc[i].0))
            .count()
    };
    let cut = n / 3;
    let r = n - cut;
    let expert_count = r.div_ceil(2);
    let mut by_rank: Vec<(usize, String)> = (0..n).map(|i| (rank(i), acc[i].0.clone())).collect();
    by_rank.sort_by_key(|e| std::cmp::Reverse(e.0));
    let pick = |lo: usize, hi: usize| -> Vec<String> {
        by_rank
            .iter()
            .filter(|(k, _)| *k >= lo && *k < hi)
            .map(|(_, a)| a.clone())
            .collect()
    };
    (pick(n - expert_count, n), pick(cut, n - expert_count), pick(0, cut))
}

/// Big-endian IDX bytes built by hand, independent of the library writer.
pub fn idx_images(count: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
    let mut b = vec![0, 0, 8, 3];
    for d in [count, rows, cols] {
        b.extend(d.to_be_bytes());
    }
    b.extend(pixels);
    b
}

pub fn idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut b = vec![0, 0, 8, 1];
    b.extend((labels.len() as u32).to_be_bytes());
    b.extend(labels);
    b
}
