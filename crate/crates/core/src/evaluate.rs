//! Leave-one-image-out retrieval evaluation.
//!
//! Every image is used once as a query against all other images of the
//! gallery. For a ranked list of size S with R relevant items,
//!
//! ```text
//! AP = (1/R) · Σ_{r=1..S} P(r) · rel(r)
//! ```
//!
//! where P(r) is the precision of the top r. Queries with R = 0 have no
//! defined AP; they are counted but excluded from mAP and Top-1.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusManifest, SubsetTag};
use crate::error::{Error, Result};
use crate::retrieval::{rank_within, DistanceMatrix};

pub const PR_GRID_POINTS: usize = 101;

/// Relevance indicators along a ranked gallery.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelevanceList {
    rel: Vec<bool>,
    relevant: usize,
}

impl RelevanceList {
    pub fn new(rel: Vec<bool>) -> Self {
        let relevant = rel.iter().filter(|&&r| r).count();
        RelevanceList { rel, relevant }
    }

    pub fn from_bits(bits: &[u8]) -> Self {
        RelevanceList::new(bits.iter().map(|&b| b != 0).collect())
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.rel
    }

    /// S, the list length.
    pub fn len(&self) -> usize {
        self.rel.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rel.is_empty()
    }

    /// R, the number of relevant items.
    pub fn relevant(&self) -> usize {
        self.relevant
    }

    /// Precision at the rank of each relevant item, in rank order.
    pub fn precisions_at_hits(&self) -> Vec<f64> {
        let mut hits = 0usize;
        self.rel
            .iter()
            .enumerate()
            .filter(|(_, &r)| r)
            .map(|(i, _)| {
                hits += 1;
                hits as f64 / (i + 1) as f64
            })
            .collect()
    }
}

/// Single pass over the list, accumulating P(r) at each relevant rank.
pub fn average_precision(rel: &RelevanceList) -> Result<f64> {
    if rel.relevant == 0 {
        return Err(Error::UndefinedAp);
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &r) in rel.rel.iter().enumerate() {
        if r {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Ok(sum / rel.relevant as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub query_id: String,
    pub relevant_count: usize,
    /// `None` when `relevant_count == 0`.
    pub ap: Option<f64>,
    /// 1.0 when the nearest neighbor shares the query's writer, else 0.0.
    pub p_at_1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    /// Trapezoidal area under `points`.
    pub area: f64,
}

/// Macro-averaged interpolated precision-recall curve on an evenly spaced
/// recall grid. Each input holds one query's precision at each of its
/// relevant ranks; the interpolated precision at recall ρ is the best
/// precision reached at recall ≥ ρ.
pub fn precision_recall_curve(queries: &[Vec<f64>]) -> Result<PrCurve> {
    let queries: Vec<&Vec<f64>> = queries.iter().filter(|q| !q.is_empty()).collect();
    if queries.is_empty() {
        return Err(Error::NoIncludedQueries);
    }
    let grid: Vec<f64> = (0..PR_GRID_POINTS)
        .map(|i| i as f64 / (PR_GRID_POINTS - 1) as f64)
        .collect();
    let mut sums = vec![0.0; grid.len()];
    for q in &queries {
        let r = q.len() as f64;
        // suffix maxima: best precision at or after the k-th hit
        let mut best_after = q.to_vec();
        for k in (0..q.len().saturating_sub(1)).rev() {
            best_after[k] = best_after[k].max(best_after[k + 1]);
        }
        for (s, &rho) in sums.iter_mut().zip(&grid) {
            // first hit whose recall (k+1)/R reaches rho
            let k = ((rho * r).ceil() as usize).max(1) - 1;
            *s += best_after[k.min(q.len() - 1)];
        }
    }
    let n = queries.len() as f64;
    let points: Vec<PrPoint> = grid
        .iter()
        .zip(&sums)
        .map(|(&recall, &s)| PrPoint {
            recall,
            precision: s / n,
        })
        .collect();
    let area = points
        .windows(2)
        .map(|w| (w[1].recall - w[0].recall) * (w[0].precision + w[1].precision) / 2.0)
        .sum();
    Ok(PrCurve { points, area })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub total_queries: usize,
    pub used_queries: usize,
    pub excluded_queries: usize,
    /// Mean AP over queries with at least one relevant item.
    pub map: Option<f64>,
    /// Mean p@1 over the same queries.
    pub top1: Option<f64>,
    pub pr_curve: Option<PrCurve>,
    pub per_query: Vec<QueryResult>,
}

impl EvalReport {
    pub fn summary_line(&self) -> String {
        let pct = |v: Option<f64>| v.map_or("undefined".to_string(), |v| format!("{:.2}", 100.0 * v));
        format!(
            "mAP {}  top-1 {}  queries {} (used {}, excluded {})",
            pct(self.map),
            pct(self.top1),
            self.total_queries,
            self.used_queries,
            self.excluded_queries
        )
    }
}

fn check_alignment(mtx: &DistanceMatrix, manifest: &CorpusManifest) -> Result<()> {
    if manifest.is_empty() {
        return Err(Error::EmptyManifest);
    }
    if mtx.n() != manifest.len() {
        return Err(Error::IdMismatch(format!(
            "matrix has {} rows, manifest {} entries",
            mtx.n(),
            manifest.len()
        )));
    }
    if let Some((i, (a, b))) = mtx
        .ids()
        .iter()
        .map(String::as_str)
        .zip(manifest.ids())
        .enumerate()
        .find(|(_, (a, b))| a != b)
    {
        return Err(Error::IdMismatch(format!(
            "position {i}: matrix id `{a}`, manifest id `{b}`"
        )));
    }
    Ok(())
}

/// Evaluates the queries in `gallery` (ascending manifest indices) against
/// that same gallery.
fn evaluate_gallery(mtx: &DistanceMatrix, manifest: &CorpusManifest, gallery: &[usize]) -> EvalReport {
    let entries = manifest.entries();
    let per: Vec<(QueryResult, Vec<f64>)> = gallery
        .par_iter()
        .map(|&q| {
            let ranking = rank_within(mtx, q, gallery);
            let writer = &entries[q].writer_id;
            let rel = RelevanceList::new(
                ranking
                    .order
                    .iter()
                    .map(|&j| &entries[j].writer_id == writer)
                    .collect(),
            );
            let ap = average_precision(&rel).ok();
            let p_at_1 = if rel.as_slice().first() == Some(&true) { 1.0 } else { 0.0 };
            (
                QueryResult {
                    query_id: entries[q].image_id.clone(),
                    relevant_count: rel.relevant(),
                    ap,
                    p_at_1,
                },
                rel.precisions_at_hits(),
            )
        })
        .collect();

    // ordered reduction
    let mut ap_sum = 0.0;
    let mut top1_sum = 0.0;
    let mut used = 0usize;
    for (r, _) in &per {
        if let Some(ap) = r.ap {
            ap_sum += ap;
            top1_sum += r.p_at_1;
            used += 1;
        }
    }
    let hit_precisions: Vec<Vec<f64>> = per.iter().map(|(_, h)| h.clone()).collect();
    let pr_curve = precision_recall_curve(&hit_precisions).ok();
    let mean = |s: f64| (used > 0).then(|| s / used as f64);
    EvalReport {
        total_queries: per.len(),
        used_queries: used,
        excluded_queries: per.len() - used,
        map: mean(ap_sum),
        top1: mean(top1_sum),
        pr_curve,
        per_query: per.into_iter().map(|(r, _)| r).collect(),
    }
}

pub fn evaluate_matrix(mtx: &DistanceMatrix, manifest: &CorpusManifest) -> Result<EvalReport> {
    check_alignment(mtx, manifest)?;
    let gallery: Vec<usize> = (0..manifest.len()).collect();
    Ok(evaluate_gallery(mtx, manifest, &gallery))
}

/// A named gallery restriction, e.g. `MSS+Chars = {manuscripts, charters}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetDef {
    pub name: String,
    pub tags: BTreeSet<SubsetTag>,
}

impl SubsetDef {
    pub fn new(name: impl Into<String>, tags: impl IntoIterator<Item = SubsetTag>) -> Self {
        SubsetDef {
            name: name.into(),
            tags: tags.into_iter().collect(),
        }
    }

    /// Parses `name=tag,tag,...`.
    pub fn parse(s: &str) -> Result<Self> {
        let (name, tags) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("subset `{s}` must look like name=tag,tag")))?;
        let tags = tags
            .split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(str::parse)
            .collect::<Result<BTreeSet<SubsetTag>>>()?;
        if tags.is_empty() {
            return Err(Error::Config(format!("subset `{name}` has no tags")));
        }
        Ok(SubsetDef {
            name: name.trim().to_string(),
            tags,
        })
    }
}

/// The manuscript/letter/charter groupings of the competition breakdown.
pub fn competition_subsets() -> Vec<SubsetDef> {
    use SubsetTag::*;
    vec![
        SubsetDef::new("MSS", [Manuscripts]),
        SubsetDef::new("MSS+Chars", [Manuscripts, Charters]),
        SubsetDef::new("LettersA", [LettersA]),
        SubsetDef::new("LettersA+B", [LettersA, LettersB]),
        SubsetDef::new("Full", SubsetTag::ALL),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetReport {
    pub name: String,
    pub tags: BTreeSet<SubsetTag>,
    pub report: EvalReport,
}

/// Restricts both queries and gallery to each subset and re-ranks within it.
pub fn evaluate_subsets(
    mtx: &DistanceMatrix,
    manifest: &CorpusManifest,
    defs: &[SubsetDef],
) -> Result<Vec<SubsetReport>> {
    check_alignment(mtx, manifest)?;
    defs.iter()
        .map(|def| {
            if def.tags.is_empty() {
                return Err(Error::InvalidArgument(format!("subset `{}` has no tags", def.name)));
            }
            let gallery = manifest.subset_indices(&def.tags);
            Ok(SubsetReport {
                name: def.name.clone(),
                tags: def.tags.clone(),
                report: evaluate_gallery(mtx, manifest, &gallery),
            })
        })
        .collect()
}

/// Plain-text table with one row per labeled report.
pub fn format_table(rows: &[(String, &EvalReport)]) -> String {
    let mut out = String::new();
    let width = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(6);
    let _ = writeln!(
        out,
        "{:<width$}  {:>8}  {:>8}  {:>8}  {:>6}  {:>8}",
        "subset", "mAP[%]", "top1[%]", "PR-AUC", "used", "excluded"
    );
    let pct = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{:.2}", 100.0 * v));
    for (label, r) in rows {
        let _ = writeln!(
            out,
            "{:<width$}  {:>8}  {:>8}  {:>8}  {:>6}  {:>8}",
            label,
            pct(r.map),
            pct(r.top1),
            r.pr_curve.as_ref().map_or("-".into(), |c| format!("{:.4}", c.area)),
            r.used_queries,
            r.excluded_queries
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ManifestEntry;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ap(bits: &[u8]) -> f64 {
        average_precision(&RelevanceList::from_bits(bits)).unwrap()
    }

    #[test]
    fn hand_values() {
        assert_eq!(ap(&[1, 1, 0, 0]), 1.0);
        assert_eq!(ap(&[0, 1]), 0.5);
        assert!((ap(&[1, 0, 1, 0]) - 5.0 / 6.0).abs() < 1e-15);
        assert!(matches!(
            average_precision(&RelevanceList::from_bits(&[0, 0])),
            Err(Error::UndefinedAp)
        ));
    }

    fn manifest(writers: &[&str], tags: &[SubsetTag]) -> CorpusManifest {
        CorpusManifest::new(
            writers
                .iter()
                .zip(tags)
                .enumerate()
                .map(|(i, (w, &t))| ManifestEntry {
                    image_id: format!("i{i}"),
                    path: format!("{i}.png").into(),
                    writer_id: w.to_string(),
                    subset: t,
                })
                .collect(),
        )
        .unwrap()
    }

    fn matrix_from(ids: Vec<String>, f: impl Fn(usize, usize) -> f32) -> DistanceMatrix {
        let n = ids.len();
        let mut v = vec![0f32; n * n];
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    v[i * n + j] = f(i, j);
                }
            }
        }
        DistanceMatrix::new(ids, v).unwrap()
    }

    #[test]
    fn perfect_block_diagonal() {
        let writers = ["a", "a", "b", "b", "b", "c"];
        let m = manifest(&writers, &[SubsetTag::Synthetic; 6]);
        let mtx = matrix_from(m.ids().map(String::from).collect(), |i, j| {
            if writers[i] == writers[j] { 0.0 } else { 1.0 }
        });
        let r = evaluate_matrix(&mtx, &m).unwrap();
        assert_eq!(r.map, Some(1.0));
        assert_eq!(r.top1, Some(1.0));
        assert_eq!(r.excluded_queries, 1);
        assert_eq!(r.used_queries, 5);
        let c = r.pr_curve.unwrap();
        assert!(c.points.iter().all(|p| p.precision == 1.0));
        assert!((c.area - 1.0).abs() < 1e-12);
    }

    #[test]
    fn singletons_only() {
        let m = manifest(&["a", "b", "c"], &[SubsetTag::Charters; 3]);
        let mtx = matrix_from(m.ids().map(String::from).collect(), |i, j| (i + j) as f32);
        let r = evaluate_matrix(&mtx, &m).unwrap();
        assert_eq!(r.map, None);
        assert_eq!(r.top1, None);
        assert_eq!(r.excluded_queries, 3);
        assert!(r.pr_curve.is_none());
        assert!(r.summary_line().contains("undefined"));
    }

    #[test]
    fn alignment_errors() {
        let m = manifest(&["a", "a"], &[SubsetTag::Synthetic; 2]);
        let mtx = matrix_from(vec!["x".into(), "i1".into()], |_, _| 1.0);
        assert!(matches!(evaluate_matrix(&mtx, &m), Err(Error::IdMismatch(_))));
        let mtx3 = matrix_from(vec!["i0".into(), "i1".into(), "i2".into()], |_, _| 1.0);
        assert!(matches!(evaluate_matrix(&mtx3, &m), Err(Error::IdMismatch(_))));
        let empty = CorpusManifest::new(vec![]).unwrap();
        let mtx0 = DistanceMatrix::new(vec![], vec![]).unwrap();
        assert!(matches!(evaluate_matrix(&mtx0, &empty), Err(Error::EmptyManifest)));
    }

    #[test]
    fn pr_curve_cases() {
        let c = precision_recall_curve(&[vec![0.5]]).unwrap();
        assert!((c.area - 0.5).abs() < 1e-12);
        assert!(matches!(precision_recall_curve(&[]), Err(Error::NoIncludedQueries)));
        assert!(matches!(precision_recall_curve(&[vec![]]), Err(Error::NoIncludedQueries)));
        let p = RelevanceList::from_bits(&[1, 0, 1, 0]).precisions_at_hits();
        assert_eq!(p, vec![1.0, 2.0 / 3.0]);
        let c = precision_recall_curve(&[p]).unwrap();
        assert_eq!(c.points[50].precision, 1.0);
        assert_eq!(c.points[51].precision, 2.0 / 3.0);
    }

    #[test]
    fn subsets_restrict_queries_and_gallery() {
        use SubsetTag::*;
        let writers = ["a", "a", "c1", "l", "l", "lb"];
        let tags = [Manuscripts, Manuscripts, Charters, LettersA, LettersA, LettersB];
        let m = manifest(&writers, &tags);
        // letters are confused with the distractor, manuscripts are not
        let mtx = matrix_from(m.ids().map(String::from).collect(), |i, j| {
            let pair = (writers[i], writers[j]);
            match pair {
                ("a", "a") => 0.1,
                ("l", "lb") | ("lb", "l") => 0.2,
                ("l", "l") => 0.5,
                _ => 1.0,
            }
        });
        let defs = competition_subsets();
        let reports = evaluate_subsets(&mtx, &m, &defs).unwrap();
        assert_eq!(reports.len(), 5);
        assert_eq!(reports[0].name, "MSS");
        assert_eq!(reports[0].report.total_queries, 2);
        assert_eq!(reports[0].report.map, Some(1.0));
        assert_eq!(reports[1].report.total_queries, 3);
        assert_eq!(reports[1].report.excluded_queries, 1);
        assert_eq!(reports[2].report.map, Some(1.0));
        assert_eq!(reports[3].report.map, Some(0.5));
        let full = evaluate_matrix(&mtx, &m).unwrap();
        assert_eq!(reports[4].report, full);

        let only_single = evaluate_subsets(&mtx, &m, &[SubsetDef::new("C", [Charters])]).unwrap();
        assert_eq!(only_single[0].report.used_queries, 0);
        assert!(evaluate_subsets(&mtx, &m, &[SubsetDef::new("none", [])]).is_err());
    }

    #[test]
    fn subset_def_parsing() {
        let d = SubsetDef::parse("MSS+Chars=manuscripts, charters").unwrap();
        assert_eq!(d.name, "MSS+Chars");
        assert_eq!(d.tags.len(), 2);
        assert!(matches!(SubsetDef::parse("X=scrolls"), Err(Error::UnknownSubsetTag(_))));
        assert!(SubsetDef::parse("X=").is_err());
        assert!(SubsetDef::parse("nothing").is_err());
    }

    #[test]
    fn table_lists_rows() {
        let m = manifest(&["a", "a"], &[SubsetTag::Synthetic; 2]);
        let mtx = matrix_from(m.ids().map(String::from).collect(), |_, _| 1.0);
        let r = evaluate_matrix(&mtx, &m).unwrap();
        let t = format_table(&[("Full".into(), &r)]);
        assert!(t.lines().nth(1).unwrap().starts_with("Full"));
        assert!(t.contains("100.00"));
    }

    fn rel_strategy() -> impl Strategy<Value = Vec<bool>> {
        prop::collection::vec(any::<bool>(), 1..40).prop_filter("needs a relevant item", |v| v.iter().any(|&b| b))
    }

    proptest! {
        #[test]
        fn ap_bounds_and_perfect(rel in rel_strategy()) {
            let l = RelevanceList::new(rel.clone());
            let a = average_precision(&l).unwrap();
            prop_assert!((0.0..=1.0).contains(&a));
            let last_rel = rel.iter().rposition(|&r| r).unwrap();
            let first_irrel = rel.iter().position(|&r| !r).unwrap_or(rel.len());
            prop_assert_eq!(a == 1.0, last_rel < first_irrel);
        }

        #[test]
        fn ap_ignores_items_after_last_relevant(rel in rel_strategy(), extra in 0usize..10) {
            // everything after the last relevant item is irrelevant, so any
            // reordering or resizing of that tail leaves AP unchanged
            let last = rel.iter().rposition(|&r| r).unwrap();
            let mut other = rel[..=last].to_vec();
            other.extend(std::iter::repeat_n(false, extra));
            let a = average_precision(&RelevanceList::new(rel)).unwrap();
            let b = average_precision(&RelevanceList::new(other)).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn map_invariant_to_writer_relabeling(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 12;
            let writers: Vec<String> = (0..n).map(|_| format!("w{}", rng.random_range(0..4))).collect();
            let relabeled: Vec<String> = writers.iter().map(|w| format!("{w}-renamed")).collect();
            let wr: Vec<&str> = writers.iter().map(String::as_str).collect();
            let rl: Vec<&str> = relabeled.iter().map(String::as_str).collect();
            let m1 = manifest(&wr, &[SubsetTag::Synthetic; 12]);
            let m2 = manifest(&rl, &[SubsetTag::Synthetic; 12]);
            let vals: Vec<f32> = (0..n * n).map(|_| rng.random_range(0.1..5.0)).collect();
            let mtx = matrix_from(m1.ids().map(String::from).collect(), |i, j| vals[i.min(j) * n + i.max(j)]);
            let a = evaluate_matrix(&mtx, &m1).unwrap();
            let b = evaluate_matrix(&mtx, &m2).unwrap();
            prop_assert_eq!(a.map, b.map);
            prop_assert_eq!(a.top1, b.top1);
        }
    }
}
