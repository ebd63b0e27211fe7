//! Overlap between the most important weights of two Fisher diagonals.

use serde::{Deserialize, Serialize};

use super::fisher::{pool_mean, FisherDiagonal};
use crate::error::{Error, Result};

pub const DEFAULT_KS: [f64; 3] = [5.0, 25.0, 50.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerOverlap {
    pub layer: String,
    pub size: usize,
    /// Overlap percentage for each requested k.
    pub overlap: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub a: String,
    pub b: String,
    pub ks: Vec<f64>,
    pub layers: Vec<LayerOverlap>,
    /// Unweighted mean over layers for each k.
    pub average: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pooling: Option<String>,
}

impl OverlapReport {
    /// `a,b,layer,k,overlap`, with `*` as the layer of the averages.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("a,b,layer,k,overlap\n");
        let rows = self.layers.iter().map(|l| (l.layer.as_str(), &l.overlap)).chain([("*", &self.average)]);
        for (layer, values) in rows {
            for (k, v) in self.ks.iter().zip(values) {
                out.push_str(&format!("{},{},{layer},{k},{v}\n", self.a, self.b));
            }
        }
        out
    }
}

/// Indices of the `⌈k% · n⌉` largest values; ties go to the lower index.
pub fn top_indices(values: &[f64], k_percent: f64) -> Vec<usize> {
    let n = values.len();
    let take = ((k_percent / 100.0 * n as f64).ceil() as usize).min(n);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| values[j].total_cmp(&values[i]).then(i.cmp(&j)));
    idx.truncate(take);
    idx
}

/// Percentage of `a`'s top-k set that is also in `b`'s.
pub fn overlap_percent(a: &[f64], b: &[f64], k_percent: f64) -> f64 {
    let ta = top_indices(a, k_percent);
    if ta.is_empty() {
        return 0.0;
    }
    let mut in_b = vec![false; b.len()];
    for i in top_indices(b, k_percent) {
        in_b[i] = true;
    }
    100.0 * ta.iter().filter(|&&i| in_b[i]).count() as f64 / ta.len() as f64
}

pub fn topk_overlap(fa: &FisherDiagonal, fb: &FisherDiagonal, ks: &[f64]) -> Result<OverlapReport> {
    if !fa.values.is_aligned(&fb.values) {
        return Err(Error::LayoutMismatch(format!("{} and {} come from different models", fa.language, fb.language)));
    }
    if ks.iter().any(|k| !(*k > 0.0 && *k <= 100.0)) {
        return Err(Error::InvalidConfig("k must be in (0, 100]".into()));
    }
    let layers: Vec<LayerOverlap> = fa
        .values
        .iter()
        .zip(fb.values.iter())
        .filter(|((_, t), _)| !t.is_empty())
        .map(|((name, ta), (_, tb))| LayerOverlap {
            layer: name.clone(),
            size: ta.len(),
            overlap: ks.iter().map(|&k| overlap_percent(ta.data(), tb.data(), k)).collect(),
        })
        .collect();
    let average = (0..ks.len())
        .map(|i| layers.iter().map(|l| l.overlap[i]).sum::<f64>() / layers.len().max(1) as f64)
        .collect();
    let pooling = fb.pooling.clone().or_else(|| fa.pooling.clone());
    Ok(OverlapReport { a: fa.language.clone(), b: fb.language.clone(), ks: ks.to_vec(), layers, average, pooling })
}

/// Each language against the mean of all the others, inside one model.
pub fn language_vs_rest(diagonals: &[FisherDiagonal], ks: &[f64]) -> Result<Vec<OverlapReport>> {
    if diagonals.len() < 2 {
        return Err(Error::InvalidConfig("need at least two diagonals".into()));
    }
    diagonals
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let rest: Vec<&FisherDiagonal> = diagonals.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, o)| o).collect();
            topk_overlap(d, &pool_mean(&rest)?, ks)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{ParamStore, Tensor};

    fn diag(lang: &str, values: Vec<f64>) -> FisherDiagonal {
        let mut p = ParamStore::new();
        p.insert("layer", Tensor::from_vec(&[values.len()], values).unwrap()).unwrap();
        FisherDiagonal { language: lang.into(), examples: 1, samples_per_example: 1, seed: 0, pooling: None, values: p, std_error: None }
    }

    #[test]
    fn self_overlap_is_total() {
        let d = diag("a", (0..37).map(|i| (i * 7 % 37) as f64).collect());
        let r = topk_overlap(&d, &d, &DEFAULT_KS).unwrap();
        assert_eq!(r.average, vec![100.0, 100.0, 100.0]);
    }

    #[test]
    fn disjoint_top_sets() {
        let a: Vec<f64> = (0..100).map(|i| if i < 5 { 10.0 - i as f64 } else { 0.0 }).collect();
        let b: Vec<f64> = (0..100).map(|i| if (5..10).contains(&i) { 1.0 } else { 0.0 }).collect();
        assert_eq!(top_indices(&b, 5.0), vec![5, 6, 7, 8, 9]);
        assert_eq!(overlap_percent(&a, &b, 5.0), 0.0);
    }

    #[test]
    fn ceil_and_ties() {
        assert_eq!(top_indices(&[1.0, 1.0, 1.0], 5.0), vec![0]);
        assert_eq!(top_indices(&[0.0, 2.0, 2.0, 1.0], 50.0), vec![1, 2]);
    }

    #[test]
    fn layout_mismatch() {
        let r = topk_overlap(&diag("a", vec![1.0]), &diag("b", vec![1.0, 2.0]), &DEFAULT_KS);
        assert!(matches!(r, Err(Error::LayoutMismatch(_))));
    }

    #[test]
    fn vs_rest_pools_by_mean() {
        let ds = [diag("a", vec![3.0, 2.0, 1.0, 0.0]), diag("b", vec![0.0, 1.0, 2.0, 3.0]), diag("c", vec![0.0, 1.0, 2.0, 9.0])];
        let reports = language_vs_rest(&ds, &[25.0]).unwrap();
        assert_eq!(reports[0].b, "b+c");
        assert_eq!(reports[0].pooling.as_deref(), Some("mean(b,c)"));
        assert_eq!(reports[0].average, vec![0.0]);
        assert_eq!(reports[1].average, vec![100.0]);
        assert!(reports[0].to_csv().contains("a,b+c,*,25,0\n"));
    }
}
