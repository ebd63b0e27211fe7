//! Linear-chain CRF inference in log space.
//!
//! `score(y) = start[y₀] + Σₜ emit[t, yₜ] + Σₜ trans[yₜ, yₜ₊₁] + stop[y_last]`
//! and `p(y | x) = exp(score(y) − log Z)`. Transitions are indexed
//! `[from, to]`.

use rand::Rng;

use crate::corpus::LanguageId;
use crate::error::{Error, Result};
use crate::numerics::{log_sum_exp, ParamStore, Tensor};

/// Per-sentence scores consumed by every inference routine.
#[derive(Clone, Debug, PartialEq)]
pub struct CrfPotentials {
    pub emissions: Tensor,
    pub transitions: Tensor,
    pub start: Tensor,
    pub stop: Tensor,
}

/// Gradients with respect to each potential table.
pub type PotentialGrads = CrfPotentials;

impl CrfPotentials {
    pub fn new(emissions: Tensor, transitions: Tensor, start: Tensor, stop: Tensor) -> Result<Self> {
        let shape = emissions.shape();
        if shape.len() != 2 || shape[0] == 0 || shape[1] == 0 {
            return Err(Error::ShapeMismatch(format!("emissions must be [T x L] with T, L >= 1, got {shape:?}")));
        }
        let l = shape[1];
        if transitions.shape() != [l, l] || start.shape() != [l] || stop.shape() != [l] {
            return Err(Error::ShapeMismatch(format!(
                "transitions {:?}, start {:?}, stop {:?} do not match L = {l}",
                transitions.shape(),
                start.shape(),
                stop.shape()
            )));
        }
        let p = CrfPotentials { emissions, transitions, start, stop };
        if !(p.emissions.is_finite() && p.transitions.is_finite() && p.start.is_finite() && p.stop.is_finite()) {
            return Err(Error::ShapeMismatch("potentials must be finite".into()));
        }
        Ok(p)
    }

    /// Potentials with zero transition and boundary scores.
    pub fn from_emissions(emissions: Tensor) -> Result<Self> {
        let l = emissions.shape().get(1).copied().unwrap_or(0);
        CrfPotentials::new(emissions, Tensor::zeros(&[l, l]), Tensor::zeros(&[l]), Tensor::zeros(&[l]))
    }

    pub fn zeros_like(&self) -> PotentialGrads {
        let (t, l) = (self.len(), self.num_labels());
        CrfPotentials {
            emissions: Tensor::zeros(&[t, l]),
            transitions: Tensor::zeros(&[l, l]),
            start: Tensor::zeros(&[l]),
            stop: Tensor::zeros(&[l]),
        }
    }

    pub fn len(&self) -> usize {
        self.emissions.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_labels(&self) -> usize {
        self.emissions.cols()
    }

    pub fn score(&self, labels: &[usize]) -> Result<f64> {
        if labels.len() != self.len() {
            return Err(Error::LengthMismatch { expected: self.len(), got: labels.len() });
        }
        let mut s = self.start.data()[labels[0]] + self.stop.data()[labels[labels.len() - 1]];
        for (t, &y) in labels.iter().enumerate() {
            s += self.emissions.at(t, y);
            if t > 0 {
                s += self.transitions.at(labels[t - 1], y);
            }
        }
        Ok(s)
    }

    /// Adds the feature-count vector of `labels` scaled by `weight` into `self`
    /// (used when `self` holds gradients).
    pub fn add_path_counts(&mut self, labels: &[usize], weight: f64) {
        self.start.data_mut()[labels[0]] += weight;
        self.stop.data_mut()[labels[labels.len() - 1]] += weight;
        for (t, &y) in labels.iter().enumerate() {
            *self.emissions.at_mut(t, y) += weight;
            if t > 0 {
                *self.transitions.at_mut(labels[t - 1], y) += weight;
            }
        }
    }
}

/// `alpha[t][j]` = log-sum of scores of all prefixes ending in label `j` at `t`.
fn forward_table(p: &CrfPotentials) -> Vec<Vec<f64>> {
    let (t_len, l) = (p.len(), p.num_labels());
    let mut alpha = Vec::with_capacity(t_len);
    alpha.push((0..l).map(|j| p.start.data()[j] + p.emissions.at(0, j)).collect::<Vec<_>>());
    let mut buf = vec![0.0; l];
    for t in 1..t_len {
        let prev = &alpha[t - 1];
        let row: Vec<f64> = (0..l)
            .map(|j| {
                for i in 0..l {
                    buf[i] = prev[i] + p.transitions.at(i, j);
                }
                log_sum_exp(&buf) + p.emissions.at(t, j)
            })
            .collect();
        alpha.push(row);
    }
    alpha
}

/// `beta[t][i]` = log-sum of scores of all suffixes after label `i` at `t`.
fn backward_table(p: &CrfPotentials) -> Vec<Vec<f64>> {
    let (t_len, l) = (p.len(), p.num_labels());
    let mut beta = vec![Vec::new(); t_len];
    beta[t_len - 1] = p.stop.data().to_vec();
    let mut buf = vec![0.0; l];
    for t in (0..t_len - 1).rev() {
        let next = &beta[t + 1];
        beta[t] = (0..l)
            .map(|i| {
                for j in 0..l {
                    buf[j] = p.transitions.at(i, j) + p.emissions.at(t + 1, j) + next[j];
                }
                log_sum_exp(&buf)
            })
            .collect();
    }
    beta
}

fn log_z_from(p: &CrfPotentials, alpha: &[Vec<f64>]) -> f64 {
    let last = &alpha[alpha.len() - 1];
    let v: Vec<f64> = last.iter().zip(p.stop.data()).map(|(a, s)| a + s).collect();
    log_sum_exp(&v)
}

pub fn log_partition(p: &CrfPotentials) -> f64 {
    log_z_from(p, &forward_table(p))
}

/// Posterior unary `[T × L]` and pairwise `[(T−1) × L × L]` marginals.
#[derive(Clone, Debug, PartialEq)]
pub struct Marginals {
    pub unary: Tensor,
    pub pairwise: Tensor,
    pub log_z: f64,
}

impl Marginals {
    pub fn pair(&self, t: usize, i: usize, j: usize) -> f64 {
        let l = self.unary.cols();
        self.pairwise.data()[(t * l + i) * l + j]
    }
}

pub fn marginals(p: &CrfPotentials) -> Marginals {
    let (t_len, l) = (p.len(), p.num_labels());
    let alpha = forward_table(p);
    let beta = backward_table(p);
    let log_z = log_z_from(p, &alpha);
    let mut unary = Tensor::zeros(&[t_len, l]);
    for t in 0..t_len {
        for i in 0..l {
            *unary.at_mut(t, i) = (alpha[t][i] + beta[t][i] - log_z).exp();
        }
    }
    let mut pairwise = Tensor::zeros(&[t_len.saturating_sub(1), l, l]);
    let pd = pairwise.data_mut();
    for t in 0..t_len.saturating_sub(1) {
        for i in 0..l {
            for j in 0..l {
                let v = alpha[t][i] + p.transitions.at(i, j) + p.emissions.at(t + 1, j) + beta[t + 1][j] - log_z;
                pd[(t * l + i) * l + j] = v.exp();
            }
        }
    }
    Marginals { unary, pairwise, log_z }
}

/// Expected feature counts `E[φ(y)]`, i.e. the gradient of `log Z`.
pub fn expected_counts(p: &CrfPotentials, m: &Marginals) -> PotentialGrads {
    let (t_len, l) = (p.len(), p.num_labels());
    let mut g = p.zeros_like();
    g.emissions = m.unary.clone();
    g.start.data_mut().copy_from_slice(m.unary.row(0));
    g.stop.data_mut().copy_from_slice(m.unary.row(t_len - 1));
    for t in 0..t_len.saturating_sub(1) {
        for i in 0..l {
            for j in 0..l {
                *g.transitions.at_mut(i, j) += m.pair(t, i, j);
            }
        }
    }
    g
}

/// `log p(gold | x)` and its gradient `φ(gold) − E[φ]` with respect to every
/// potential entry.
pub fn log_likelihood(p: &CrfPotentials, gold: &[usize]) -> Result<(f64, PotentialGrads)> {
    let score = p.score(gold)?;
    let m = marginals(p);
    let mut g = expected_counts(p, &m);
    g.emissions.scale(-1.0);
    g.transitions.scale(-1.0);
    g.start.scale(-1.0);
    g.stop.scale(-1.0);
    g.add_path_counts(gold, 1.0);
    Ok((score - m.log_z, g))
}

/// Max-product decoding with an arbitrary step-dependent transition score.
/// `trans(t, i, j)` scores moving from label `i` at `t − 1` to `j` at `t`.
/// Ties go to the lower label index.
pub fn viterbi_with<F>(emissions: &Tensor, start: &[f64], stop: &[f64], trans: F) -> (Vec<usize>, f64)
where
    F: Fn(usize, usize, usize) -> f64,
{
    let (t_len, l) = (emissions.rows(), emissions.cols());
    let mut delta: Vec<f64> = (0..l).map(|j| start[j] + emissions.at(0, j)).collect();
    let mut back = vec![vec![0usize; l]; t_len];
    for t in 1..t_len {
        let mut next = vec![0.0; l];
        for j in 0..l {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for (i, d) in delta.iter().enumerate() {
                let v = d + trans(t, i, j);
                if v > best {
                    best = v;
                    arg = i;
                }
            }
            next[j] = best + emissions.at(t, j);
            back[t][j] = arg;
        }
        delta = next;
    }
    let mut best = f64::NEG_INFINITY;
    let mut last = 0;
    for (j, d) in delta.iter().enumerate() {
        let v = d + stop[j];
        if v > best {
            best = v;
            last = j;
        }
    }
    let mut path = vec![last; t_len];
    for t in (1..t_len).rev() {
        path[t - 1] = back[t][path[t]];
    }
    (path, best)
}

pub fn viterbi(p: &CrfPotentials) -> (Vec<usize>, f64) {
    viterbi_with(&p.emissions, p.start.data(), p.stop.data(), |_, i, j| p.transitions.at(i, j))
}

fn draw<R: Rng>(log_weights: &[f64], rng: &mut R) -> usize {
    let m = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_weights.iter().map(|v| (v - m).exp()).collect();
    let total: f64 = w.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, wi) in w.iter().enumerate() {
        if u < *wi {
            return i;
        }
        u -= wi;
    }
    // floating-point slack: last label with positive weight
    w.iter().rposition(|&x| x > 0.0).unwrap_or(0)
}

/// Forward-filtering backward-sampling: `n` i.i.d. draws from `p(y | x)`.
pub fn sample_posterior<R: Rng>(p: &CrfPotentials, rng: &mut R, n: usize) -> Vec<Vec<usize>> {
    let alpha = forward_table(p);
    let (t_len, l) = (p.len(), p.num_labels());
    let last: Vec<f64> = alpha[t_len - 1].iter().zip(p.stop.data()).map(|(a, s)| a + s).collect();
    let mut buf = vec![0.0; l];
    (0..n)
        .map(|_| {
            let mut y = vec![0; t_len];
            y[t_len - 1] = draw(&last, rng);
            for t in (0..t_len - 1).rev() {
                for i in 0..l {
                    buf[i] = alpha[t][i] + p.transitions.at(i, y[t + 1]);
                }
                y[t] = draw(&buf, rng);
            }
            y
        })
        .collect()
}

/// Parameter names holding one set of transition/boundary scores.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TransitionNames {
    pub transitions: String,
    pub start: String,
    pub stop: String,
}

impl TransitionNames {
    fn under(prefix: &str) -> Self {
        TransitionNames {
            transitions: format!("{prefix}/transitions"),
            start: format!("{prefix}/start"),
            stop: format!("{prefix}/stop"),
        }
    }
}

/// Shared default transitions plus optional per-language overrides, stored
/// as `crf/default/*` and `crf/lang/<code>/*` parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionBank {
    default: TransitionNames,
    languages: Vec<(LanguageId, TransitionNames)>,
}

impl TransitionBank {
    pub fn new(languages: &[LanguageId]) -> Self {
        TransitionBank {
            default: TransitionNames::under("crf/default"),
            languages: languages.iter().map(|l| (l.clone(), TransitionNames::under(&format!("crf/lang/{l}")))).collect(),
        }
    }

    /// Recovers the bank layout from parameter names.
    pub fn from_params(params: &ParamStore) -> Self {
        let langs: Vec<LanguageId> = params
            .names()
            .filter_map(|n| n.strip_prefix("crf/lang/")?.strip_suffix("/transitions"))
            .filter_map(|code| LanguageId::new(code).ok())
            .collect();
        TransitionBank::new(&langs)
    }

    pub fn languages(&self) -> impl Iterator<Item = &LanguageId> {
        self.languages.iter().map(|(l, _)| l)
    }

    /// Language-specific names when present, otherwise the shared default.
    pub fn resolve(&self, lang: &LanguageId) -> &TransitionNames {
        self.languages.iter().find(|(l, _)| l == lang).map(|(_, n)| n).unwrap_or(&self.default)
    }

    pub fn init(&self, params: &mut ParamStore, num_labels: usize) -> Result<()> {
        for names in std::iter::once(&self.default).chain(self.languages.iter().map(|(_, n)| n)) {
            params.insert(&names.transitions, Tensor::zeros(&[num_labels, num_labels]))?;
            params.insert(&names.start, Tensor::zeros(&[num_labels]))?;
            params.insert(&names.stop, Tensor::zeros(&[num_labels]))?;
        }
        Ok(())
    }

    pub fn potentials(&self, params: &ParamStore, lang: &LanguageId, emissions: Tensor) -> Result<CrfPotentials> {
        let n = self.resolve(lang);
        CrfPotentials::new(
            emissions,
            params.get(&n.transitions)?.clone(),
            params.get(&n.start)?.clone(),
            params.get(&n.stop)?.clone(),
        )
    }

    /// Routes transition/boundary gradients to the parameters used for `lang`.
    pub fn accumulate(&self, grads: &mut ParamStore, lang: &LanguageId, g: &PotentialGrads) -> Result<()> {
        let n = self.resolve(lang);
        grads.get_mut(&n.transitions)?.add_assign(&g.transitions);
        grads.get_mut(&n.start)?.add_assign(&g.start);
        grads.get_mut(&n.stop)?.add_assign(&g.stop);
        Ok(())
    }
}
