use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::augmentation::{apply_view, AugmentationPolicy, Image};
use crate::error::{Error, Result};
use crate::model::{Mode, ModelPair};

use super::FeatureBank;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnnWeighting {
    /// Each neighbor votes with exp(cosine / temperature).
    Exponential { temperature: f64 },
    Uniform,
}

fn cosine_scores(query: &[f32], bank: &FeatureBank) -> Vec<f64> {
    let qn = query.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt().max(1e-12);
    (0..bank.len())
        .map(|i| {
            let row = bank.row(i);
            let (mut dot, mut rn) = (0.0, 0.0);
            for (a, b) in query.iter().zip(row) {
                dot += *a as f64 * *b as f64;
                rn += (*b as f64).powi(2);
            }
            dot / (qn * rn.sqrt().max(1e-12))
        })
        .collect()
}

/// Bank indices of the `n` most cosine-similar rows, most similar first.
/// Ties keep the lower index first.
pub fn rank_by_cosine(query: &[f32], bank: &FeatureBank, n: usize) -> Result<Vec<usize>> {
    if n > bank.len() {
        return Err(Error::Eval(format!("requested {n} neighbors from a bank of {}", bank.len())));
    }
    if query.len() != bank.dim {
        return Err(Error::Eval(format!("query dim {} != bank dim {}", query.len(), bank.dim)));
    }
    let scores = cosine_scores(query, bank);
    let mut order: Vec<usize> = (0..bank.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(n);
    Ok(order)
}

/// Alias of [`rank_by_cosine`] over precomputed query features.
pub fn nearest_neighbors(query: &[f32], bank: &FeatureBank, n: usize) -> Result<Vec<usize>> {
    rank_by_cosine(query, bank, n)
}

/// Embeds one augmented view of `image` with the frozen student backbone
/// and ranks the bank against it.
pub fn query_neighbors(
    pair: &ModelPair,
    image: &Image,
    policy: &AugmentationPolicy,
    seed: u64,
    bank: &FeatureBank,
    n: usize,
) -> Result<Vec<usize>> {
    let view = apply_view(image, policy, seed)?;
    let x = Image::batch_to_tensor(&[view], pair.device())?;
    let f: Tensor = pair.student_features(&x, Mode::Eval)?;
    let q = f.flatten_all()?.to_dtype(candle_core::DType::F32)?.to_vec1::<f32>()?;
    rank_by_cosine(&q, bank, n)
}

/// Predicted class for one query: votes from the `k` nearest bank rows,
/// highest total weight wins, ties to the lower class index.
pub fn knn_predict(
    query: &[f32],
    bank: &FeatureBank,
    bank_labels: &[u32],
    num_classes: usize,
    k: usize,
    weighting: KnnWeighting,
) -> Result<u32> {
    if k == 0 {
        return Err(Error::Eval("k must be positive".into()));
    }
    let scores = cosine_scores(query, bank);
    let nn = rank_by_cosine(query, bank, k)?;
    let mut votes = vec![0f64; num_classes];
    for i in nn {
        let w = match weighting {
            KnnWeighting::Exponential { temperature } => (scores[i] / temperature).exp(),
            KnnWeighting::Uniform => 1.0,
        };
        votes[bank_labels[i] as usize] += w;
    }
    let mut best = 0;
    for (c, v) in votes.iter().enumerate() {
        if *v > votes[best] {
            best = c;
        }
    }
    Ok(best as u32)
}

/// Top-1 accuracy of k-nearest-neighbor voting over a training bank.
pub fn knn_eval(
    train: &FeatureBank,
    test: &FeatureBank,
    num_classes: usize,
    k: usize,
    weighting: KnnWeighting,
) -> Result<f64> {
    if k > train.len() {
        return Err(Error::Eval(format!("k = {k} exceeds the bank size {}", train.len())));
    }
    if test.is_empty() {
        return Err(Error::Eval("empty test set".into()));
    }
    if train.dim != test.dim {
        return Err(Error::Eval(format!("bank dim {} != test dim {}", train.dim, test.dim)));
    }
    let train_labels = train.require_labels(num_classes)?;
    let test_labels = test.require_labels(num_classes)?;
    let mut correct = 0usize;
    for (i, want) in test_labels.iter().enumerate() {
        if knn_predict(test.row(i), train, &train_labels, num_classes, k, weighting)? == *want {
            correct += 1;
        }
    }
    Ok(correct as f64 / test.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bank(rows: &[[f32; 2]], labels: &[u32]) -> FeatureBank {
        FeatureBank {
            ids: (0..rows.len()).collect(),
            labels: labels.iter().map(|l| Some(*l)).collect(),
            dim: 2,
            features: rows.iter().flatten().copied().collect(),
        }
    }

    #[test]
    fn separable_toy_bank_k1_is_perfect() {
        let train = bank(&[[1.0, 0.1], [0.9, -0.1], [-1.0, 0.2], [-0.8, -0.3]], &[0, 0, 1, 1]);
        let test = bank(&[[0.7, 0.0], [-0.6, 0.1], [2.0, 0.5]], &[0, 1, 0]);
        let acc = knn_eval(&train, &test, 2, 1, KnnWeighting::Exponential { temperature: 0.1 }).unwrap();
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn full_bank_uniform_vote_is_majority_rate() {
        let train = bank(&[[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.5, 0.5], [0.0, -1.0]], &[2, 2, 2, 0, 1]);
        let test = bank(&[[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.3, 0.7]], &[2, 0, 2, 1]);
        let acc = knn_eval(&train, &test, 3, 5, KnnWeighting::Uniform).unwrap();
        assert_eq!(acc, 0.5);
    }

    #[test]
    fn k_larger_than_bank_is_an_error() {
        let train = bank(&[[1.0, 0.0]], &[0]);
        assert!(knn_eval(&train, &train, 1, 2, KnnWeighting::Uniform).is_err());
        assert!(nearest_neighbors(&[1.0, 0.0], &train, 2).is_err());
        assert!(nearest_neighbors(&[1.0, 0.0], &train, 0).unwrap().is_empty());
    }

    proptest! {
        #[test]
        fn ranking_matches_full_sort(rows in prop::collection::vec((-1f32..1.0, -1f32..1.0), 1..30), q in (-1f32..1.0, -1f32..1.0), n in 0usize..30) {
            let rows: Vec<[f32; 2]> = rows.into_iter().map(|(a, b)| [a, b]).collect();
            let b = bank(&rows, &vec![0; rows.len()]);
            let n = n.min(rows.len());
            let got = rank_by_cosine(&[q.0, q.1], &b, n).unwrap();
            // oracle: sort (-cos, index) pairs
            let qn = ((q.0 as f64).powi(2) + (q.1 as f64).powi(2)).sqrt().max(1e-12);
            let mut pairs: Vec<(f64, usize)> = rows.iter().enumerate().map(|(i, r)| {
                let rn = ((r[0] as f64).powi(2) + (r[1] as f64).powi(2)).sqrt().max(1e-12);
                (-(q.0 as f64 * r[0] as f64 + q.1 as f64 * r[1] as f64) / (qn * rn), i)
            }).collect();
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let want: Vec<usize> = pairs.into_iter().take(n).map(|p| p.1).collect();
            prop_assert_eq!(got, want);
        }
    }
}
