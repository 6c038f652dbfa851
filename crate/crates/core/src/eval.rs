//! Error metrics in mph and paired cross-configuration statistics.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Zone {
    /// below 30 mph
    Congested,
    /// 30 to 55 mph inclusive
    Transition,
    /// above 55 mph
    Free,
}

impl Zone {
    pub const ALL: [Zone; 3] = [Zone::Congested, Zone::Transition, Zone::Free];

    pub fn of(speed_mph: f64) -> Zone {
        if speed_mph < 30.0 {
            Zone::Congested
        } else if speed_mph <= 55.0 {
            Zone::Transition
        } else {
            Zone::Free
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rel_l2_pct: f64,
    pub rmse_mph: f64,
    pub mae_mph: f64,
    /// Only zones with at least one truth point.
    pub zone_mae: BTreeMap<Zone, f64>,
    pub zone_counts: BTreeMap<Zone, usize>,
    pub train_time_s: f64,
}

fn check_shapes(pred: &Array2<f64>, truth: &Array2<f64>) -> Result<()> {
    if pred.dim() != truth.dim() {
        return Err(Error::Shape(format!("prediction {:?} vs truth {:?}", pred.dim(), truth.dim())));
    }
    if pred.is_empty() {
        return Err(Error::Empty("evaluation grid"));
    }
    Ok(())
}

/// `100 * ||pred - truth|| / ||truth||` over all grid points.
pub fn relative_l2(pred: &Array2<f64>, truth: &Array2<f64>) -> Result<f64> {
    check_shapes(pred, truth)?;
    let num = pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum::<f64>().sqrt();
    let den = truth.iter().map(|t| t * t).sum::<f64>().sqrt();
    if den == 0.0 {
        return Err(Error::InvalidInput("truth field has zero norm".into()));
    }
    Ok(100.0 * num / den)
}

/// RMSE, MAE and per-zone MAE, zones masked by the truth speed.
pub fn rmse_mae(pred: &Array2<f64>, truth: &Array2<f64>) -> Result<(f64, f64, BTreeMap<Zone, f64>, BTreeMap<Zone, usize>)> {
    check_shapes(pred, truth)?;
    let n = pred.len() as f64;
    let mut sq = 0.0;
    let mut abs = 0.0;
    let mut zsum: BTreeMap<Zone, f64> = BTreeMap::new();
    let mut zcount: BTreeMap<Zone, usize> = BTreeMap::new();
    for (p, t) in pred.iter().zip(truth) {
        let e = p - t;
        sq += e * e;
        abs += e.abs();
        let z = Zone::of(*t);
        *zsum.entry(z).or_default() += e.abs();
        *zcount.entry(z).or_default() += 1;
    }
    let zmae = zsum.iter().map(|(z, s)| (*z, s / zcount[z] as f64)).collect();
    Ok(((sq / n).sqrt(), abs / n, zmae, zcount))
}

pub fn evaluate(pred: &Array2<f64>, truth: &Array2<f64>, train_time_s: f64) -> Result<EvalReport> {
    let rel_l2_pct = relative_l2(pred, truth)?;
    let (rmse_mph, mae_mph, zone_mae, zone_counts) = rmse_mae(pred, truth)?;
    Ok(EvalReport { rel_l2_pct, rmse_mph, mae_mph, zone_mae, zone_counts, train_time_s })
}

/// One evaluated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: String,
    pub dataset: String,
    pub n_s: usize,
    pub seed: u64,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: String,
    pub dataset: String,
    pub n_s: usize,
    pub n_seeds: usize,
    pub rel_l2_mean: f64,
    pub rel_l2_std: f64,
    pub rmse_mean: f64,
    pub rmse_std: f64,
    pub mae_mean: f64,
    pub mae_std: f64,
    pub time_mean: f64,
    /// Methods on the same configuration with a strictly larger / smaller mean relative L2.
    pub wins: usize,
    pub losses: usize,
}

/// Paired comparison of `a - b` over configurations. A zero spread with a
/// nonzero mean reports `t` and `cohens_d` as signed infinity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedStats {
    pub n: usize,
    pub mean_diff: f64,
    pub sd_diff: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub t: f64,
    pub p: f64,
    pub cohens_d: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: String,
    pub b: String,
    /// Configurations where `a` has the lower mean relative L2; ties count to neither.
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    pub stats: Option<PairedStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub rows: Vec<AggregateRow>,
    pub comparisons: Vec<Comparison>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

fn signed_inf(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        f64::INFINITY.copysign(x)
    }
}

/// Paired t-test on `a[i] - b[i]`; needs at least two pairs.
pub fn paired_stats(a: &[f64], b: &[f64]) -> Result<PairedStats> {
    if a.len() != b.len() {
        return Err(Error::Unbalanced(format!("{} vs {} paired values", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::InvalidInput("paired statistics need at least two pairs".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len();
    let (mean, sd) = mean_std(&d);
    let df = (n - 1) as f64;
    let tdist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let se = sd / (n as f64).sqrt();
    let half = tdist.inverse_cdf(0.975) * se;
    let (t, p, d_eff) = if sd == 0.0 {
        (signed_inf(mean), if mean == 0.0 { 1.0 } else { 0.0 }, signed_inf(mean))
    } else {
        let t = mean / se;
        (t, 2.0 * (1.0 - tdist.cdf(t.abs())), mean / sd)
    };
    Ok(PairedStats { n, mean_diff: mean, sd_diff: sd, ci_low: mean - half, ci_high: mean + half, t, p, cohens_d: d_eff })
}

type ConfigKey = (String, usize);

/// Per-configuration seed means, per-row win/loss and pairwise paired statistics
/// over configurations. Every (method, dataset, n_s) cell must hold the same seed set.
pub fn aggregate(records: &[RunRecord]) -> Result<Aggregate> {
    if records.is_empty() {
        return Err(Error::Empty("no run records to aggregate"));
    }
    let mut cells: BTreeMap<(String, ConfigKey), Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        cells.entry((r.method.clone(), (r.dataset.clone(), r.n_s))).or_default().push(r);
    }
    let mut reference: Option<BTreeSet<u64>> = None;
    for ((m, (ds, ns)), runs) in &cells {
        let seeds: BTreeSet<u64> = runs.iter().map(|r| r.seed).collect();
        if seeds.len() != runs.len() {
            return Err(Error::Unbalanced(format!("duplicate seeds for {m} on {ds}/{ns}")));
        }
        match &reference {
            None => reference = Some(seeds),
            Some(s) if *s != seeds => {
                return Err(Error::Unbalanced(format!("{m} on {ds}/{ns} has seeds {seeds:?}, expected {s:?}")))
            }
            _ => {}
        }
    }

    let mut rows: Vec<AggregateRow> = cells
        .iter()
        .map(|((m, (ds, ns)), runs)| {
            let col = |f: fn(&EvalReport) -> f64| runs.iter().map(|r| f(&r.report)).collect::<Vec<_>>();
            let (rel_l2_mean, rel_l2_std) = mean_std(&col(|r| r.rel_l2_pct));
            let (rmse_mean, rmse_std) = mean_std(&col(|r| r.rmse_mph));
            let (mae_mean, mae_std) = mean_std(&col(|r| r.mae_mph));
            let (time_mean, _) = mean_std(&col(|r| r.train_time_s));
            AggregateRow {
                method: m.clone(),
                dataset: ds.clone(),
                n_s: *ns,
                n_seeds: runs.len(),
                rel_l2_mean,
                rel_l2_std,
                rmse_mean,
                rmse_std,
                mae_mean,
                mae_std,
                time_mean,
                wins: 0,
                losses: 0,
            }
        })
        .collect();
    let snapshot: Vec<(String, ConfigKey, f64)> =
        rows.iter().map(|r| (r.method.clone(), (r.dataset.clone(), r.n_s), r.rel_l2_mean)).collect();
    for row in &mut rows {
        let key = (row.dataset.clone(), row.n_s);
        for (m, k, v) in &snapshot {
            if *k == key && *m != row.method {
                if *v > row.rel_l2_mean {
                    row.wins += 1;
                } else if *v < row.rel_l2_mean {
                    row.losses += 1;
                }
            }
        }
    }
    rows.sort_by(|a, b| (&a.method, a.n_s, &a.dataset).cmp(&(&b.method, b.n_s, &b.dataset)));

    let methods: BTreeSet<&String> = rows.iter().map(|r| &r.method).collect();
    let mut by_method: BTreeMap<&String, BTreeMap<ConfigKey, f64>> = BTreeMap::new();
    for r in &rows {
        by_method.entry(&r.method).or_default().insert((r.dataset.clone(), r.n_s), r.rel_l2_mean);
    }
    let methods: Vec<&String> = methods.into_iter().collect();
    let mut comparisons = Vec::new();
    for (i, a) in methods.iter().enumerate() {
        for b in &methods[i + 1..] {
            let (ma, mb) = (&by_method[a], &by_method[b]);
            let shared: Vec<&ConfigKey> = ma.keys().filter(|k| mb.contains_key(*k)).collect();
            let va: Vec<f64> = shared.iter().map(|k| ma[*k]).collect();
            let vb: Vec<f64> = shared.iter().map(|k| mb[*k]).collect();
            let wins = va.iter().zip(&vb).filter(|(x, y)| x < y).count();
            let losses = va.iter().zip(&vb).filter(|(x, y)| x > y).count();
            comparisons.push(Comparison {
                a: (*a).clone(),
                b: (*b).clone(),
                wins,
                losses,
                ties: shared.len() - wins - losses,
                stats: paired_stats(&va, &vb).ok(),
            });
        }
    }
    Ok(Aggregate { rows, comparisons })
}

pub const AGGREGATE_HEADER: &str =
    "method,dataset,n_s,n_seeds,rel_l2_mean,rel_l2_std,rmse_mean,rmse_std,mae_mean,mae_std,time_mean,wins,losses";

pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut out = String::from(AGGREGATE_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.method,
            r.dataset,
            r.n_s,
            r.n_seeds,
            r.rel_l2_mean,
            r.rel_l2_std,
            r.rmse_mean,
            r.rmse_std,
            r.mae_mean,
            r.mae_std,
            r.time_mean,
            r.wins,
            r.losses
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn relative_l2_examples() {
        let t = array![[50.0, 20.0], [60.0, 35.0]];
        assert_eq!(relative_l2(&t, &t).unwrap(), 0.0);
        assert!((relative_l2(&(&t * 1.1), &t).unwrap() - 10.0).abs() < 1e-12);
        let flat = Array2::from_elem((3, 4), 50.0);
        assert!((relative_l2(&Array2::from_elem((3, 4), 40.0), &flat).unwrap() - 20.0).abs() < 1e-12);
        assert!(relative_l2(&flat, &Array2::zeros((3, 4))).is_err());
        assert!(relative_l2(&flat, &Array2::zeros((4, 3))).is_err());
    }

    #[test]
    fn rmse_mae_examples() {
        let t = array![[10.0, 40.0, 70.0], [29.9, 30.0, 55.0]];
        let (rmse, mae, zones, counts) = rmse_mae(&t, &t).unwrap();
        assert_eq!((rmse, mae), (0.0, 0.0));
        assert!(zones.values().all(|&v| v == 0.0));
        assert_eq!(counts.values().sum::<usize>(), 6);
        assert_eq!(counts[&Zone::Congested], 2);
        assert_eq!(counts[&Zone::Transition], 3);
        assert_eq!(counts[&Zone::Free], 1);
        let (rmse, mae, _, _) = rmse_mae(&(&t + 5.0), &t).unwrap();
        assert!((rmse - 5.0).abs() < 1e-12 && (mae - 5.0).abs() < 1e-12);
    }

    #[test]
    fn empty_zone_omitted() {
        let t = Array2::from_elem((2, 2), 60.0);
        let r = evaluate(&t, &t, 1.0).unwrap();
        assert_eq!(r.zone_mae.keys().collect::<Vec<_>>(), vec![&Zone::Free]);
    }

    #[test]
    fn textbook_paired_t() {
        // diffs 2, 3, 1: mean 2, sd 1, t = 2 / (1 / sqrt 3)
        let s = paired_stats(&[5.0, 6.0, 4.0], &[3.0, 3.0, 3.0]).unwrap();
        assert!((s.mean_diff - 2.0).abs() < 1e-12);
        assert!((s.sd_diff - 1.0).abs() < 1e-12);
        assert!((s.t - 2.0 * 3f64.sqrt()).abs() < 1e-12);
        assert!((s.cohens_d - 2.0).abs() < 1e-12);
        // t_{0.975, 2} = 4.302653
        assert!((s.ci_high - (2.0 + 4.302653 / 3f64.sqrt())).abs() < 1e-5);
        // two-sided p for t = 3.4641, df = 2
        assert!((s.p - 0.07418).abs() < 1e-4, "{}", s.p);
    }

    #[test]
    fn degenerate_differences() {
        let s = paired_stats(&[2.0, 3.0, 4.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(s.cohens_d, f64::INFINITY);
        assert_eq!(s.p, 0.0);
        let z = paired_stats(&[2.0, 3.0], &[2.0, 3.0]).unwrap();
        assert_eq!((z.mean_diff, z.cohens_d), (0.0, 0.0));
        assert!(paired_stats(&[1.0], &[2.0]).is_err());
    }

    fn rec(method: &str, n_s: usize, seed: u64, l2: f64) -> RunRecord {
        let report = EvalReport {
            rel_l2_pct: l2,
            rmse_mph: l2 / 2.0,
            mae_mph: l2 / 3.0,
            zone_mae: BTreeMap::new(),
            zone_counts: BTreeMap::new(),
            train_time_s: 1.0,
        };
        RunRecord { method: method.into(), dataset: "d".into(), n_s, seed, report }
    }

    #[test]
    fn aggregate_cardinality_and_order() {
        let mut recs = vec![];
        for m in ["B6_addpinn", "B2_pinn"] {
            for n_s in [5, 3] {
                for seed in [1, 2, 3] {
                    recs.push(rec(m, n_s, seed, if m == "B2_pinn" { 10.0 } else { 8.0 } + seed as f64));
                }
            }
        }
        let agg = aggregate(&recs).unwrap();
        assert_eq!(agg.rows.len(), 4);
        let order: Vec<(&str, usize)> = agg.rows.iter().map(|r| (r.method.as_str(), r.n_s)).collect();
        assert_eq!(order, vec![("B2_pinn", 3), ("B2_pinn", 5), ("B6_addpinn", 3), ("B6_addpinn", 5)]);
        for r in &agg.rows {
            let better = r.method == "B6_addpinn";
            assert_eq!((r.wins, r.losses), if better { (1, 0) } else { (0, 1) });
        }
        assert_eq!(agg.comparisons.len(), 1);
        let c = &agg.comparisons[0];
        assert_eq!((c.a.as_str(), c.wins, c.losses), ("B2_pinn", 0, 2));
        assert_eq!(c.stats.unwrap().mean_diff, 2.0);
        let csv = aggregate_csv(&agg.rows);
        assert_eq!(csv.lines().count(), 5);
    }

    #[test]
    fn identical_methods_tie() {
        let mut recs = vec![];
        for m in ["a", "b"] {
            for n_s in [3, 5] {
                recs.push(rec(m, n_s, 1, n_s as f64));
            }
        }
        let agg = aggregate(&recs).unwrap();
        let c = &agg.comparisons[0];
        assert_eq!((c.wins, c.losses, c.ties), (0, 0, 2));
        let s = c.stats.unwrap();
        assert_eq!((s.mean_diff, s.cohens_d), (0.0, 0.0));
        assert!(agg.rows.iter().all(|r| r.wins == 0 && r.losses == 0));
    }

    #[test]
    fn unbalanced_seeds_rejected() {
        let recs = vec![rec("a", 3, 1, 1.0), rec("a", 3, 2, 1.0), rec("b", 3, 1, 1.0)];
        assert!(matches!(aggregate(&recs), Err(Error::Unbalanced(_))));
        let dup = vec![rec("a", 3, 1, 1.0), rec("a", 3, 1, 1.0)];
        assert!(aggregate(&dup).is_err());
    }
}
