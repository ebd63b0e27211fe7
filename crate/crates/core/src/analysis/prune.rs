//! One-shot magnitude pruning, prune-F1 sweeps and parameter budgets.

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{LabeledCorpus, Split};
use crate::error::{Error, Result};
use crate::evaluation::evaluate;
use crate::numerics::ParamStore;
use crate::training::Checkpoint;

/// Weight matrices and embeddings; biases and CRF scores are never pruned.
pub fn is_prunable(name: &str) -> bool {
    !name.starts_with("crf/") && (name.ends_with("/w") || name == "embed/table")
}

pub fn prunable_count(params: &ParamStore) -> usize {
    params.iter().filter(|(n, _)| is_prunable(n)).map(|(_, t)| t.len()).sum()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PruneScope {
    /// One magnitude threshold across every prunable tensor.
    #[default]
    Global,
    /// The same fraction removed from each prunable tensor separately.
    PerLayer,
}

/// `keep[i]` is false for every zeroed flat coordinate of the store.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PruneMask {
    pub keep: Vec<bool>,
    pub prunable: usize,
    pub kept: usize,
}

impl PruneMask {
    pub fn kept_fraction(&self) -> f64 {
        if self.prunable == 0 {
            1.0
        } else {
            self.kept as f64 / self.prunable as f64
        }
    }

    pub fn pruned(&self) -> impl Iterator<Item = usize> + '_ {
        self.keep.iter().enumerate().filter(|(_, k)| !**k).map(|(i, _)| i)
    }
}

fn check_fraction(fraction: f64) -> Result<()> {
    if (0.0..1.0).contains(&fraction) {
        Ok(())
    } else {
        Err(Error::InvalidFraction(fraction))
    }
}

fn kept_of(n: usize, fraction: f64) -> usize {
    ((1.0 - fraction) * n as f64).round() as usize
}

/// Mask removing the lowest-magnitude `fraction` of prunable coordinates.
/// Equal magnitudes are pruned in store order, then flat index order.
pub fn prune_mask(params: &ParamStore, fraction: f64, scope: PruneScope) -> Result<PruneMask> {
    check_fraction(fraction)?;
    let total = params.total_params();
    let mut keep = vec![true; total];
    let mut groups: Vec<Vec<(f64, usize)>> = Vec::new();
    let mut offset = 0;
    for (name, t) in params.iter() {
        if is_prunable(name) {
            let coords = t.data().iter().enumerate().map(|(i, v)| (v.abs(), offset + i));
            match scope {
                PruneScope::PerLayer => groups.push(coords.collect()),
                PruneScope::Global if groups.is_empty() => groups.push(coords.collect()),
                PruneScope::Global => groups[0].extend(coords),
            }
        }
        offset += t.len();
    }
    let (mut prunable, mut kept) = (0, 0);
    for mut g in groups {
        let n = g.len();
        let k = kept_of(n, fraction);
        g.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, i) in &g[..n - k] {
            keep[i] = false;
        }
        prunable += n;
        kept += k;
    }
    Ok(PruneMask { keep, prunable, kept })
}

/// Copy of `ckpt` with the masked weights zeroed. Optimizer state is left
/// as it was.
pub fn prune(ckpt: &Checkpoint, fraction: f64) -> Result<(Checkpoint, PruneMask)> {
    prune_with(ckpt, fraction, PruneScope::Global)
}

pub fn prune_with(ckpt: &Checkpoint, fraction: f64, scope: PruneScope) -> Result<(Checkpoint, PruneMask)> {
    let mask = prune_mask(&ckpt.params, fraction, scope)?;
    let mut out = ckpt.clone();
    for i in mask.pruned() {
        out.params.flat_set(i, 0.0);
    }
    Ok((out, mask))
}

/// Micro-F1 in points (0–100) per language at each pruned fraction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneCurve {
    pub fractions: Vec<f64>,
    pub f1: IndexMap<String, Vec<f64>>,
}

impl PruneCurve {
    pub fn points(&self, language: &str) -> Option<impl Iterator<Item = (f64, f64)> + '_> {
        let f1 = self.f1.get(language)?;
        Some(self.fractions.iter().copied().zip(f1.iter().copied()))
    }

    /// `fraction,language,f1`, one row per measurement.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("fraction,language,f1\n");
        for (i, frac) in self.fractions.iter().enumerate() {
            for (lang, f1) in &self.f1 {
                out.push_str(&format!("{frac},{lang},{}\n", f1[i]));
            }
        }
        out
    }

    /// Whitespace table: fraction column, then one column per language.
    pub fn to_gnuplot(&self) -> String {
        let mut out = String::from("# fraction");
        for lang in self.f1.keys() {
            out.push(' ');
            out.push_str(lang);
        }
        out.push('\n');
        for (i, frac) in self.fractions.iter().enumerate() {
            out.push_str(&frac.to_string());
            for f1 in self.f1.values() {
                out.push_str(&format!(" {}", f1[i]));
            }
            out.push('\n');
        }
        out
    }
}

/// `0.0, 0.1, …, 0.9`.
pub fn default_fractions() -> Vec<f64> {
    (0..10).map(|i| i as f64 / 10.0).collect()
}

/// Evaluates the pruned checkpoint on `split` of every corpus at every
/// fraction.
pub fn prune_sweep(ckpt: &Checkpoint, corpora: &[&LabeledCorpus], split: Split, fractions: &[f64]) -> Result<PruneCurve> {
    if fractions.first() != Some(&0.0) || fractions.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidConfig("fractions must increase strictly from 0.0".into()));
    }
    for &f in fractions {
        check_fraction(f)?;
    }
    let rows: Vec<Vec<f64>> = fractions
        .par_iter()
        .map(|&f| {
            let (pruned, _) = prune(ckpt, f)?;
            corpora.iter().map(|c| Ok(100.0 * evaluate(&pruned, c, split)?.micro.f1)).collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let f1 = corpora
        .iter()
        .enumerate()
        .map(|(li, c)| (c.language().to_string(), rows.iter().map(|r| r[li]).collect()))
        .collect();
    Ok(PruneCurve { fractions: fractions.to_vec(), f1 })
}

/// Largest fraction reached before F1 first falls more than `delta` points
/// below the unpruned score.
pub fn overprune_threshold(curve: &PruneCurve, language: &str, delta: f64) -> Result<f64> {
    let points: Vec<(f64, f64)> = curve.points(language).ok_or_else(|| Error::MissingBaseline(language.to_string()))?.collect();
    let baseline = points.iter().find(|(f, _)| *f == 0.0).map(|p| p.1).ok_or_else(|| Error::MissingBaseline(language.to_string()))?;
    let mut threshold = 0.0;
    for (frac, f1) in points {
        if f1 < baseline - delta - 1e-9 {
            break;
        }
        threshold = frac;
    }
    Ok(threshold)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetEntry {
    pub model: String,
    pub total: usize,
    pub prunable: usize,
    pub retained: usize,
}

/// Prunable parameter counts `M^l` of several models, their sum `M̂`, and
/// what remains after pruning each by its own fraction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterBudget {
    pub entries: Vec<BudgetEntry>,
    pub combined: usize,
    pub combined_retained: usize,
}

impl ParameterBudget {
    pub fn new(models: &[(&str, &ParamStore, f64)]) -> Result<Self> {
        let entries = models
            .iter()
            .map(|&(name, params, fraction)| {
                check_fraction(fraction)?;
                let prunable = prunable_count(params);
                Ok(BudgetEntry { model: name.to_string(), total: params.total_params(), prunable, retained: kept_of(prunable, fraction) })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ParameterBudget {
            combined: entries.iter().map(|e| e.prunable).sum(),
            combined_retained: entries.iter().map(|e| e.retained).sum(),
            entries,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn store(values: &[f64]) -> ParamStore {
        let mut p = ParamStore::new();
        p.insert("output/w", Tensor::from_vec(&[values.len()], values.to_vec()).unwrap()).unwrap();
        p.insert("output/b", Tensor::from_vec(&[2], vec![0.0, 1e-9]).unwrap()).unwrap();
        p
    }

    #[test]
    fn prunes_lowest_magnitudes() {
        let p = store(&[0.1, -0.5, 0.3, -0.05]);
        let m = prune_mask(&p, 0.5, PruneScope::Global).unwrap();
        assert_eq!(m.keep, vec![false, true, true, false, true, true]);
        assert_eq!((m.prunable, m.kept), (4, 2));
        assert!(matches!(prune_mask(&p, 1.0, PruneScope::Global), Err(Error::InvalidFraction(_))));
        assert!(matches!(prune_mask(&p, -0.1, PruneScope::Global), Err(Error::InvalidFraction(_))));
    }

    #[test]
    fn ties_follow_flat_order() {
        let p = store(&[0.2, -0.2, 0.2, 0.2]);
        let m = prune_mask(&p, 0.5, PruneScope::Global).unwrap();
        assert_eq!(&m.keep[..4], &[false, false, true, true]);
    }

    #[test]
    fn per_layer_scope() {
        let mut p = store(&[1.0, 2.0]);
        p.insert("embed/table", Tensor::from_vec(&[2], vec![10.0, 20.0]).unwrap()).unwrap();
        let g = prune_mask(&p, 0.5, PruneScope::Global).unwrap();
        assert_eq!(g.pruned().collect::<Vec<_>>(), vec![0, 1]);
        let l = prune_mask(&p, 0.5, PruneScope::PerLayer).unwrap();
        assert_eq!(l.pruned().collect::<Vec<_>>(), vec![0, 4]);
    }

    fn curve(values: &[f64]) -> PruneCurve {
        PruneCurve {
            fractions: (0..values.len()).map(|i| i as f64 / 10.0).collect(),
            f1: [("eng".to_string(), values.to_vec())].into_iter().collect(),
        }
    }

    #[test]
    fn overprune_examples() {
        assert_eq!(overprune_threshold(&curve(&[80.0, 80.0, 80.0]), "eng", 1.0).unwrap(), 0.2);
        assert_eq!(overprune_threshold(&curve(&[80.0, 79.5, 78.9]), "eng", 1.0).unwrap(), 0.1);
        assert_eq!(overprune_threshold(&curve(&[80.0, 77.0, 80.0]), "eng", 1.0).unwrap(), 0.0);
        assert_eq!(overprune_threshold(&curve(&[80.0, 79.0]), "eng", 1.0).unwrap(), 0.1);
        let no_base = PruneCurve { fractions: vec![0.1], f1: [("eng".to_string(), vec![1.0])].into_iter().collect() };
        assert!(matches!(overprune_threshold(&no_base, "eng", 1.0), Err(Error::MissingBaseline(_))));
        assert!(matches!(overprune_threshold(&curve(&[1.0]), "deu", 1.0), Err(Error::MissingBaseline(_))));
    }

    #[test]
    fn curve_formats() {
        let c = curve(&[80.0, 75.5]);
        assert_eq!(c.to_csv(), "fraction,language,f1\n0,eng,80\n0.1,eng,75.5\n");
        assert_eq!(c.to_gnuplot(), "# fraction eng\n0 80\n0.1 75.5\n");
    }

    #[test]
    fn budget_sums() {
        let a = store(&[1.0, 2.0, 3.0, 4.0]);
        let b = store(&[1.0, 2.0]);
        let budget = ParameterBudget::new(&[("eng", &a, 0.5), ("deu", &b, 0.0)]).unwrap();
        assert_eq!(budget.combined, 6);
        assert_eq!(budget.combined_retained, 4);
        assert_eq!(budget.entries[0].total, 6);
    }
}
