//! Evaluation statistics: ROC AUC, its Hanley–McNeil standard error, a
//! paired permutation test between detectors, Bonferroni correction and
//! annotator agreement.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::seed;
use crate::{Error, Result};

/// Smallest permutation count accepted by [`compare_auc_paired`].
pub const MIN_PERMUTATIONS: usize = 1000;
const PERMUTATION_CHUNK: usize = 500;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredEntry {
    pub id: String,
    /// Higher means "more likely an error".
    pub score: f64,
    pub is_error: bool,
}

impl ScoredEntry {
    pub fn new(id: impl Into<String>, score: f64, is_error: bool) -> Self {
        Self {
            id: id.into(),
            score,
            is_error,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoredSet {
    pub entries: Vec<ScoredEntry>,
}

impl ScoredSet {
    /// Rejects non-finite scores and repeated ids.
    pub fn new(entries: Vec<ScoredEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !e.score.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "score of `{}` is not finite",
                    e.id
                )));
            }
            if !seen.insert(e.id.as_str()) {
                return Err(Error::DuplicateId {
                    kind: "scored entry",
                    id: e.id.clone(),
                });
            }
        }
        Ok(Self { entries })
    }

    pub fn n_error(&self) -> usize {
        self.entries.iter().filter(|e| e.is_error).count()
    }

    pub fn n_clean(&self) -> usize {
        self.entries.len() - self.n_error()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Mann–Whitney AUC over parallel score / label slices. Ties count ½.
fn auc_of(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let n_err = labels.iter().filter(|l| **l).count() as u64;
    let n_clean = labels.len() as u64 - n_err;
    if n_err == 0 || n_clean == 0 {
        return Err(Error::InvalidInput(format!(
            "ROC AUC needs both classes, got {n_err} error and {n_clean} clean entries"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Sweep tie groups in ascending order; `clean_below` counts clean
    // entries with strictly lower score. Twice the statistic stays integral.
    let mut twice: u128 = 0;
    let mut clean_below: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut err, mut clean) = (0u64, 0u64);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] {
                err += 1;
            } else {
                clean += 1;
            }
            j += 1;
        }
        twice += 2 * err as u128 * clean_below as u128 + err as u128 * clean as u128;
        clean_below += clean;
        i = j;
    }
    Ok((twice as f64 / 2.0) / (n_err as f64 * n_clean as f64))
}

pub fn roc_auc(set: &ScoredSet) -> Result<f64> {
    let scores: Vec<f64> = set.entries.iter().map(|e| e.score).collect();
    let labels: Vec<bool> = set.entries.iter().map(|e| e.is_error).collect();
    auc_of(&scores, &labels)
}

/// Hanley & McNeil (1982) standard error of an AUC estimate.
pub fn auc_std_error(auc: f64, n_error: usize, n_clean: usize) -> Result<f64> {
    if !(0.0..=1.0).contains(&auc) {
        return Err(Error::InvalidInput(format!("AUC {auc} outside [0, 1]")));
    }
    if n_error == 0 || n_clean == 0 {
        return Err(Error::InvalidInput(
            "standard error needs at least one entry per class".into(),
        ));
    }
    let a = auc;
    let q1 = a / (2.0 - a);
    let q2 = 2.0 * a * a / (1.0 + a);
    let var = (a * (1.0 - a)
        + (n_error as f64 - 1.0) * (q1 - a * a)
        + (n_clean as f64 - 1.0) * (q2 - a * a))
        / (n_error as f64 * n_clean as f64);
    // At A = 1 the terms cancel to zero up to rounding.
    Ok(var.max(0.0).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedComparison {
    pub auc_a: f64,
    pub auc_b: f64,
    pub n_perm: usize,
    pub p_value: f64,
}

/// Aligns two scored sets by id. Returns (labels, scores_a, scores_b) in
/// id order.
fn align(a: &ScoredSet, b: &ScoredSet) -> Result<(Vec<bool>, Vec<f64>, Vec<f64>)> {
    let by_id: HashMap<&str, &ScoredEntry> =
        b.entries.iter().map(|e| (e.id.as_str(), e)).collect();
    if a.len() != b.len() {
        return Err(Error::InvalidInput(format!(
            "paired sets differ in size ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let mut rows: BTreeMap<&str, (bool, f64, f64)> = BTreeMap::new();
    for ea in &a.entries {
        let eb = by_id.get(ea.id.as_str()).ok_or_else(|| Error::UnknownReference {
            kind: "id in second scored set",
            id: ea.id.clone(),
        })?;
        if ea.is_error != eb.is_error {
            return Err(Error::InvalidInput(format!(
                "label of `{}` differs between the paired sets",
                ea.id
            )));
        }
        rows.insert(ea.id.as_str(), (ea.is_error, ea.score, eb.score));
    }
    Ok((
        rows.values().map(|r| r.0).collect(),
        rows.values().map(|r| r.1).collect(),
        rows.values().map(|r| r.2).collect(),
    ))
}

/// Two-sided paired permutation test on |AUC_A − AUC_B|.
///
/// Each permutation swaps the two detectors' scores of an id with
/// probability ½. Permutations run in fixed-size chunks, chunk `c` drawing
/// from ChaCha stream `c` of `seed`, so the result does not depend on the
/// number of worker threads.
pub fn compare_auc_paired(
    a: &ScoredSet,
    b: &ScoredSet,
    n_perm: usize,
    seed: u64,
) -> Result<PairedComparison> {
    if n_perm < MIN_PERMUTATIONS {
        return Err(Error::InvalidInput(format!(
            "n_perm must be at least {MIN_PERMUTATIONS}, got {n_perm}"
        )));
    }
    let (labels, sa, sb) = align(a, b)?;
    let auc_a = auc_of(&sa, &labels)?;
    let auc_b = auc_of(&sb, &labels)?;
    let observed = (auc_a - auc_b).abs();
    // Guard against spurious misses from rounding: AUC differences are
    // multiples of 1/(2·n_err·n_clean), far above this tolerance.
    let threshold = observed - 1e-12;

    let n_chunks = n_perm.div_ceil(PERMUTATION_CHUNK);
    let hits: usize = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = seed::stream_rng(seed, chunk as u64);
            let todo = PERMUTATION_CHUNK.min(n_perm - chunk * PERMUTATION_CHUNK);
            let mut pa = sa.clone();
            let mut pb = sb.clone();
            let mut hits = 0;
            for _ in 0..todo {
                for i in 0..labels.len() {
                    if rng.gen::<bool>() {
                        pa[i] = sb[i];
                        pb[i] = sa[i];
                    } else {
                        pa[i] = sa[i];
                        pb[i] = sb[i];
                    }
                }
                let stat = (auc_of(&pa, &labels).expect("classes checked")
                    - auc_of(&pb, &labels).expect("classes checked"))
                .abs();
                if stat >= threshold {
                    hits += 1;
                }
            }
            hits
        })
        .sum();
    Ok(PairedComparison {
        auc_a,
        auc_b,
        n_perm,
        p_value: (1 + hits) as f64 / (1 + n_perm) as f64,
    })
}

pub fn bonferroni(pvals: &[f64]) -> Vec<f64> {
    let m = pvals.len() as f64;
    pvals.iter().map(|p| (p * m).min(1.0)).collect()
}

/// Nominal Krippendorff's alpha. `ratings[r][u]` is rater `r`'s label for
/// item `u`, `None` when missing. Items with fewer than two ratings are not
/// pairable and are ignored.
pub fn krippendorff_alpha<L: Ord + Clone>(ratings: &[Vec<Option<L>>]) -> Result<f64> {
    let n_items = ratings.first().map_or(0, Vec::len);
    if ratings.iter().any(|r| r.len() != n_items) {
        return Err(Error::InvalidInput(
            "every rater row must cover the same items".into(),
        ));
    }
    // Coincidence matrix o_ck, keyed by label.
    let mut coincidence: BTreeMap<(L, L), f64> = BTreeMap::new();
    for u in 0..n_items {
        let mut counts: BTreeMap<&L, f64> = BTreeMap::new();
        for row in ratings {
            if let Some(label) = &row[u] {
                *counts.entry(label).or_default() += 1.0;
            }
        }
        let m: f64 = counts.values().sum();
        if m < 2.0 {
            continue;
        }
        for (c, nc) in &counts {
            for (k, nk) in &counts {
                let pairs = if c == k { nc * (nc - 1.0) } else { nc * nk };
                if pairs > 0.0 {
                    *coincidence.entry(((*c).clone(), (*k).clone())).or_default() += pairs / (m - 1.0);
                }
            }
        }
    }
    let mut marginals: BTreeMap<&L, f64> = BTreeMap::new();
    for ((c, _), o) in &coincidence {
        *marginals.entry(c).or_default() += o;
    }
    let n: f64 = marginals.values().sum();
    if n < 2.0 {
        return Err(Error::InvalidInput(
            "Krippendorff's alpha needs at least two pairable ratings".into(),
        ));
    }
    let disagree_obs: f64 = coincidence
        .iter()
        .filter(|((c, k), _)| c != k)
        .map(|(_, o)| o)
        .sum();
    let sum_sq: f64 = marginals.values().map(|nc| nc * nc).sum();
    let disagree_exp = (n * n - sum_sq) / (n - 1.0);
    if disagree_exp == 0.0 {
        // A single label was ever used: no disagreement is possible.
        return Ok(1.0);
    }
    Ok(1.0 - disagree_obs / disagree_exp)
}

/// Fraction of items whose strict majority label equals the gold label. A
/// tie for the most frequent label counts as disagreement.
pub fn majority_vote_agreement<L: Ord + Clone>(ratings: &[Vec<Option<L>>], gold: &[L]) -> Result<f64> {
    if gold.is_empty() {
        return Err(Error::InvalidInput("no gold labels".into()));
    }
    if ratings.iter().any(|r| r.len() != gold.len()) {
        return Err(Error::InvalidInput(
            "every rater row must cover the gold items".into(),
        ));
    }
    let mut agree = 0usize;
    for (u, gold_label) in gold.iter().enumerate() {
        let mut counts: BTreeMap<&L, usize> = BTreeMap::new();
        for row in ratings {
            if let Some(label) = &row[u] {
                *counts.entry(label).or_default() += 1;
            }
        }
        let top = counts.values().copied().max().ok_or_else(|| {
            Error::InvalidInput(format!("item {u} has no ratings"))
        })?;
        let leaders: Vec<&&L> = counts.iter().filter(|(_, c)| **c == top).map(|(l, _)| l).collect();
        if leaders.len() == 1 && *leaders[0] == gold_label {
            agree += 1;
        }
    }
    Ok(agree as f64 / gold.len() as f64)
}


#[cfg(test)]
mod tests {
    use super::oracle::*;
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn set(rows: &[(f64, bool)]) -> ScoredSet {
        ScoredSet::new(
            rows.iter()
                .enumerate()
                .map(|(i, (s, l))| ScoredEntry::new(format!("e{i}"), *s, *l))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn auc_examples() {
        let s = set(&[(0.9, true), (0.4, true), (0.8, false), (0.1, false)]);
        assert_eq!(roc_auc(&s).unwrap(), 0.75);
        assert_eq!(roc_auc(&set(&[(0.9, true), (0.1, false)])).unwrap(), 1.0);
        assert_eq!(roc_auc(&set(&[(0.3, true), (0.3, false), (0.3, true)])).unwrap(), 0.5);
        assert!(roc_auc(&set(&[(0.3, true)])).is_err());
    }

    #[test]
    fn scored_set_rejects_bad_entries() {
        assert!(ScoredSet::new(vec![ScoredEntry::new("a", f64::NAN, true)]).is_err());
        assert!(ScoredSet::new(vec![
            ScoredEntry::new("a", 0.1, true),
            ScoredEntry::new("a", 0.2, false)
        ])
        .is_err());
    }

    #[test]
    fn hanley_mcneil() {
        assert!((auc_std_error(0.8, 10, 10).unwrap() - 0.10198).abs() < 1e-4);
        assert_eq!(auc_std_error(1.0, 10, 10).unwrap(), 0.0);
        let mut last = f64::INFINITY;
        for n in [10, 100, 1000, 10000] {
            let se = auc_std_error(0.5, n, n).unwrap();
            assert!(se < last);
            last = se;
        }
        assert!(last < 0.005);
        assert!(auc_std_error(1.2, 10, 10).is_err());
        assert!(auc_std_error(0.5, 0, 10).is_err());
    }

    #[test]
    fn bonferroni_examples() {
        assert_eq!(bonferroni(&[0.01, 0.2]), [0.02, 0.4]);
        assert_eq!(bonferroni(&[0.9]), [0.9]);
        assert_eq!(bonferroni(&[0.6, 0.6]), [1.0, 1.0]);
        assert!(bonferroni(&[]).is_empty());
    }

    #[test]
    fn identical_sets_give_p_one() {
        let s = set(&[(0.9, true), (0.4, true), (0.8, false), (0.1, false), (0.5, true)]);
        let cmp = compare_auc_paired(&s, &s, 1000, 3).unwrap();
        assert_eq!(cmp.p_value, 1.0);
    }

    fn separating_vs_noise(n: usize) -> (ScoredSet, ScoredSet) {
        let mut rng = seed::stream_rng(99, 0);
        let a = (0..n)
            .map(|i| ScoredEntry::new(format!("e{i}"), if i % 2 == 0 { 1.0 } else { 0.0 } + rng.gen::<f64>() * 0.5, i % 2 == 0))
            .collect();
        let b = (0..n)
            .map(|i| ScoredEntry::new(format!("e{i}"), rng.gen::<f64>(), i % 2 == 0))
            .collect();
        (ScoredSet::new(a).unwrap(), ScoredSet::new(b).unwrap())
    }

    #[test]
    fn separating_detector_is_significant_and_symmetric() {
        let (a, b) = separating_vs_noise(40);
        let ab = compare_auc_paired(&a, &b, 10_000, 1).unwrap();
        let ba = compare_auc_paired(&b, &a, 10_000, 1).unwrap();
        assert_eq!(roc_auc(&a).unwrap(), 1.0);
        assert!(ab.p_value < 0.01, "p = {}", ab.p_value);
        assert_eq!(ab.p_value, ba.p_value);
        assert_eq!(ab, compare_auc_paired(&a, &b, 10_000, 1).unwrap());
    }

    #[test]
    fn permutation_matches_resampling_oracle() {
        // Independent Monte Carlo estimate of the same null distribution,
        // drawn with a different generator and 50k resamples.
        let (a, b) = separating_vs_noise(16);
        let (labels, sa, sb) = align(&a, &b).unwrap();
        let observed = (pair_count_auc(&sa, &labels) - pair_count_auc(&sb, &labels)).abs();
        let mut rng = rand::rngs::StdRng::seed_from_u64(5);
        use rand::SeedableRng;
        let resamples = 50_000;
        let mut hits = 0;
        for _ in 0..resamples {
            let (mut pa, mut pb) = (sa.clone(), sb.clone());
            for i in 0..labels.len() {
                if rng.gen::<bool>() {
                    std::mem::swap(&mut pa[i], &mut pb[i]);
                }
            }
            if (pair_count_auc(&pa, &labels) - pair_count_auc(&pb, &labels)).abs() >= observed - 1e-12 {
                hits += 1;
            }
        }
        let oracle = hits as f64 / resamples as f64;
        let p = compare_auc_paired(&a, &b, 10_000, 2).unwrap().p_value;
        assert!((p - oracle).abs() <= 0.02, "p = {p}, oracle = {oracle}");
    }

    #[test]
    fn permutation_rejects_bad_input() {
        let (a, b) = separating_vs_noise(10);
        assert!(compare_auc_paired(&a, &b, 999, 0).is_err());
        let mut other = b.clone();
        other.entries[0].id = "zzz".into();
        assert!(compare_auc_paired(&a, &other, 1000, 0).is_err());
        let mut flipped = b.clone();
        flipped.entries[0].is_error ^= true;
        assert!(compare_auc_paired(&a, &flipped, 1000, 0).is_err());
    }

    #[test]
    fn alpha_perfect_agreement() {
        let row = vec![Some(1u8), Some(0), Some(1), Some(1)];
        let ratings = vec![row.clone(); 5];
        assert_eq!(krippendorff_alpha(&ratings).unwrap(), 1.0);
    }

    #[test]
    fn alpha_hand_table() {
        // 3 raters × 4 items, one missing rating.
        let ratings = vec![
            vec![Some(1u8), Some(0), Some(1), Some(0)],
            vec![Some(1), Some(1), Some(1), Some(0)],
            vec![Some(1), Some(0), None, Some(1)],
        ];
        // Coincidences: o_00 = 1 + 1, o_11 = 3 + 2, o_01 = o_10 = 1 + 1,
        // n_0 = 4, n_1 = 7, n = 11. D_o = 4/11, D_e = 2·4·7/(11·10).
        let expected = 1.0 - (4.0 / 11.0) / (56.0 / 110.0);
        let alpha = krippendorff_alpha(&ratings).unwrap();
        assert!((alpha - expected).abs() < 1e-12);
        assert!((alpha - brute_alpha(&ratings)).abs() < 1e-12);
    }

    #[test]
    fn alpha_near_zero_for_independent_raters() {
        let mut rng = seed::stream_rng(4, 0);
        let ratings: Vec<Vec<Option<u8>>> = (0..4)
            .map(|_| (0..2000).map(|_| Some(rng.gen_range(0..2))).collect())
            .collect();
        assert!(krippendorff_alpha(&ratings).unwrap().abs() < 0.05);
    }

    #[test]
    fn alpha_errors_and_missing_rows() {
        assert!(krippendorff_alpha::<u8>(&[vec![Some(1), None]]).is_err());
        assert!(krippendorff_alpha(&[vec![Some(1u8)], vec![None]]).is_err());
        let base = vec![
            vec![Some("a"), Some("b"), Some("a")],
            vec![Some("a"), Some("a"), None],
        ];
        let mut extended = base.clone();
        extended.push(vec![None, None, None]);
        assert_eq!(krippendorff_alpha(&base).unwrap(), krippendorff_alpha(&extended).unwrap());
    }

    #[test]
    fn majority_vote() {
        let gold = vec![true; 10];
        let mut ratings = vec![vec![Some(true); 10]; 3];
        assert_eq!(majority_vote_agreement(&ratings, &gold).unwrap(), 1.0);
        ratings[0][4] = Some(false);
        ratings[1][4] = Some(false);
        assert_eq!(majority_vote_agreement(&ratings, &gold).unwrap(), 0.9);
        // Tie on an even rater count.
        let tie = vec![vec![Some(true)], vec![Some(false)]];
        assert_eq!(majority_vote_agreement(&tie, &[true]).unwrap(), 0.0);
        assert!(majority_vote_agreement(&[vec![None::<bool>]], &[true]).is_err());
    }

    fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
        (2usize..50).prop_flat_map(|n| {
            (
                prop::collection::vec((0u8..8).prop_map(|v| v as f64 / 4.0), n),
                prop::collection::vec(any::<bool>(), n),
            )
        })
        .prop_filter("both classes", |(_, l)| l.iter().any(|x| *x) && l.iter().any(|x| !*x))
    }

    proptest! {
        #[test]
        fn auc_equals_pair_count((scores, labels) in instance()) {
            prop_assert_eq!(auc_of(&scores, &labels).unwrap(), pair_count_auc(&scores, &labels));
        }

        #[test]
        fn auc_invariant_under_monotone_transform((scores, labels) in instance()) {
            let transformed: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
            prop_assert_eq!(auc_of(&scores, &labels).unwrap(), auc_of(&transformed, &labels).unwrap());
        }

        #[test]
        fn complementary_labels_sum_to_one(n in 2usize..40, seed in any::<u64>()) {
            let mut rng = seed::stream_rng(seed, 0);
            let scores: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.gen()).collect();
            labels[0] = true;
            labels[1] = false;
            let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
            let total = auc_of(&scores, &labels).unwrap() + auc_of(&scores, &flipped).unwrap();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }

        #[test]
        fn alpha_matches_brute_force(
            table in prop::collection::vec(prop::collection::vec(prop::option::weighted(0.8, 0u8..3), 6), 2..6)
        ) {
            if let Ok(alpha) = krippendorff_alpha(&table) {
                prop_assert!((alpha - brute_alpha(&table)).abs() < 1e-12);
            }
        }
    }
}
