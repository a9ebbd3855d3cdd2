use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predictor::CurvePoint;
use crate::protocol::RunRecord;

/// Stream-level error and compute of a set of records.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub error: f64,
    pub cflop: u64,
    pub count: usize,
}

/// Unweighted mean error and summed FLOPs over the records kept by `filter`.
pub fn aggregate<'a>(
    records: impl IntoIterator<Item = &'a RunRecord>,
    filter: impl Fn(&RunRecord) -> bool,
) -> Result<Aggregate> {
    let (mut sum, mut cflop, mut count) = (0.0, 0u64, 0usize);
    for r in records.into_iter().filter(|r| filter(r)) {
        sum += r.error;
        cflop += r.flops;
        count += 1;
    }
    if count == 0 {
        return Err(Error::Invalid("no records left after filtering".into()));
    }
    Ok(Aggregate { error: sum / count as f64, cflop, count })
}

/// Training-set size ranges, left-closed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SizeBucket {
    Under1k,
    From1kTo10k,
    From10kTo100k,
    Over100k,
}

impl SizeBucket {
    pub fn of(train_size: usize) -> Self {
        match train_size {
            0..1_000 => SizeBucket::Under1k,
            1_000..10_000 => SizeBucket::From1kTo10k,
            10_000..100_000 => SizeBucket::From10kTo100k,
            _ => SizeBucket::Over100k,
        }
    }
}

impl fmt::Display for SizeBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SizeBucket::Under1k => "<1k",
            SizeBucket::From1kTo10k => "1k-10k",
            SizeBucket::From10kTo100k => "10k-100k",
            SizeBucket::Over100k => ">=100k",
        })
    }
}

/// Ranges of `min(avg height, avg width)`, left-closed at 64, 128 and 256.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ResolutionBucket {
    Under64,
    From64To128,
    From128To256,
    Over256,
}

impl ResolutionBucket {
    pub fn of(avg_resolution: (u32, u32)) -> Self {
        match avg_resolution.0.min(avg_resolution.1) {
            0..64 => ResolutionBucket::Under64,
            64..128 => ResolutionBucket::From64To128,
            128..256 => ResolutionBucket::From128To256,
            _ => ResolutionBucket::Over256,
        }
    }
}

impl fmt::Display for ResolutionBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ResolutionBucket::Under64 => "<64",
            ResolutionBucket::From64To128 => "64-128",
            ResolutionBucket::From128To256 => "128-256",
            ResolutionBucket::Over256 => ">=256",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slice {
    Domain,
    Size,
    Resolution,
}

impl Slice {
    pub const ALL: [Slice; 3] = [Slice::Domain, Slice::Size, Slice::Resolution];

    pub fn name(self) -> &'static str {
        match self {
            Slice::Domain => "domain",
            Slice::Size => "size",
            Slice::Resolution => "resolution",
        }
    }

    pub fn key(self, r: &RunRecord) -> String {
        match self {
            Slice::Domain => r.domain.clone(),
            Slice::Size => SizeBucket::of(r.train_size).to_string(),
            Slice::Resolution => ResolutionBucket::of(r.avg_resolution).to_string(),
        }
    }
}

impl std::str::FromStr for Slice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Slice::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown slice `{s}` (expected domain, size or resolution)")))
    }
}

/// Aggregates per slice value over the scored records.
pub fn slice_aggregates(records: &[RunRecord], slice: Slice) -> BTreeMap<String, Aggregate> {
    let mut groups: BTreeMap<String, Vec<&RunRecord>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.scored) {
        groups.entry(slice.key(r)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(k, rs)| {
            let a = aggregate(rs, |_| true).expect("groups are nonempty");
            (k, a)
        })
        .collect()
}

/// Running sum of per-task error differences to a reference run over the
/// same task sequence.
pub fn regret_curve(records: &[RunRecord], reference: &[RunRecord]) -> Result<Vec<f64>> {
    if records.len() != reference.len() {
        return Err(Error::Invalid(format!("{} records against {} reference records", records.len(), reference.len())));
    }
    let mut acc = 0.0;
    records
        .iter()
        .zip(reference)
        .map(|(r, q)| {
            if r.task_id != q.task_id {
                return Err(Error::Invalid(format!("task sequence differs: `{}` vs `{}`", r.task_id, q.task_id)));
            }
            acc += r.error - q.error;
            Ok(acc)
        })
        .collect()
}

/// Trapezoidal area under an accuracy curve with its step axis mapped
/// onto [0, 1]. A single point has area equal to its accuracy.
pub fn normalized_auc(curve: &[CurvePoint]) -> Result<f64> {
    let Some(first) = curve.first() else {
        return Err(Error::Invalid("empty learning curve".into()));
    };
    let last = curve[curve.len() - 1];
    if curve.len() == 1 || last.step == first.step {
        return Ok(curve.iter().map(|p| p.accuracy).sum::<f64>() / curve.len() as f64);
    }
    let span = (last.step - first.step) as f64;
    let mut area = 0.0;
    for w in curve.windows(2) {
        if w[1].step < w[0].step {
            return Err(Error::Invalid("learning curve steps must be non-decreasing".into()));
        }
        area += (w[1].step - w[0].step) as f64 / span * (w[0].accuracy + w[1].accuracy) / 2.0;
    }
    Ok(area)
}

/// Forward transfer from the area under a task's first learning curve to
/// the area under its curve when it reappears: `(auc2 - auc1) / (1 - auc1)`.
pub fn forward_transfer(first: &[CurvePoint], second: &[CurvePoint]) -> Result<f64> {
    forward_transfer_from_auc(normalized_auc(first)?, normalized_auc(second)?)
}

pub fn forward_transfer_from_auc(auc1: f64, auc2: f64) -> Result<f64> {
    if auc1 >= 1.0 {
        return Err(Error::Invalid("forward transfer is undefined when the first curve is perfect".into()));
    }
    Ok((auc2 - auc1) / (1.0 - auc1))
}

/// One run on the error-versus-compute plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub label: String,
    pub error: f64,
    pub flops: u64,
}

/// True when `a` is at least as good as `b` in both coordinates and better
/// in one.
pub fn dominates(a: &ParetoPoint, b: &ParetoPoint) -> bool {
    a.flops <= b.flops && a.error <= b.error && (a.flops < b.flops || a.error < b.error)
}

/// Non-dominated points sorted by FLOPs; points equal in both coordinates
/// collapse to the first one.
pub fn pareto_front(points: &[ParetoPoint]) -> Vec<ParetoPoint> {
    let mut sorted: Vec<&ParetoPoint> = points.iter().collect();
    sorted.sort_by(|a, b| a.flops.cmp(&b.flops).then(a.error.total_cmp(&b.error)));
    let mut front: Vec<ParetoPoint> = Vec::new();
    let mut best = f64::INFINITY;
    for p in sorted {
        if p.error < best {
            best = p.error;
            front.push(p.clone());
        }
    }
    front
}

/// Index of the point whose FLOPs are closest to `target` (ties to the
/// earlier point).
pub fn nearest_cflop(points: &[ParetoPoint], target: u64) -> Option<usize> {
    (0..points.len()).min_by_key(|&i| points[i].flops.abs_diff(target))
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(id: &str, error: f64, flops: u64, domain: &str, train_size: usize) -> RunRecord {
        serde_json::from_value(serde_json::json!({
            "schema_version": 1, "phase": "meta_train", "index": 0, "task_id": id, "strategy": null,
            "hparams": {}, "init_provenance": "scratch", "error": error, "val_error": error, "flops": flops,
            "learning_curve": [], "seed": 0, "wall_time": 0.0, "domain": domain, "train_size": train_size,
            "avg_resolution": [32, 32], "scored": true, "trials": 1
        }))
        .unwrap()
    }

    fn pt(flops: u64, error: f64) -> ParetoPoint {
        ParetoPoint { label: format!("{flops}/{error}"), error, flops }
    }

    fn curve(acc: &[f64]) -> Vec<CurvePoint> {
        acc.iter().enumerate().map(|(i, &a)| CurvePoint { step: i * 10, accuracy: a }).collect()
    }

    #[test]
    fn aggregate_examples() {
        let rs = [rec("a", 0.1, 3, "ocr", 10), rec("b", 0.3, 4, "object", 10), rec("c", 0.5, 5, "ocr", 10)];
        let a = aggregate(&rs[..2], |_| true).unwrap();
        assert!((a.error - 0.2).abs() < 1e-15);
        let ocr = aggregate(&rs, |r| r.domain == "ocr").unwrap();
        assert_eq!((ocr.error, ocr.cflop, ocr.count), (0.3, 8, 2));
        assert!(aggregate(&rs, |r| r.domain == "medical").is_err());
    }

    #[test]
    fn bucket_edges() {
        assert_eq!(SizeBucket::of(999), SizeBucket::Under1k);
        assert_eq!(SizeBucket::of(1000), SizeBucket::From1kTo10k);
        assert_eq!(SizeBucket::of(10_000), SizeBucket::From10kTo100k);
        assert_eq!(SizeBucket::of(100_000), SizeBucket::Over100k);
        assert_eq!(ResolutionBucket::of((300, 63)), ResolutionBucket::Under64);
        assert_eq!(ResolutionBucket::of((128, 200)), ResolutionBucket::From128To256);
    }

    #[test]
    fn regret_examples() {
        let rs = [rec("a", 0.2, 1, "x", 1), rec("b", 0.3, 1, "x", 1)];
        let refs = [rec("a", 0.3, 1, "x", 1), rec("b", 0.3, 1, "x", 1)];
        let c = regret_curve(&rs, &refs).unwrap();
        assert!((c[0] + 0.1).abs() < 1e-12 && (c[1] + 0.1).abs() < 1e-12);
        assert_eq!(regret_curve(&rs, &rs).unwrap(), vec![0.0, 0.0]);
        assert!(regret_curve(&rs, &refs[..1]).is_err());
        assert!(regret_curve(&rs, &[refs[1].clone(), refs[0].clone()]).is_err());
    }

    #[test]
    fn fwt_examples() {
        let c1 = curve(&[0.2, 0.8]);
        assert_eq!(normalized_auc(&c1).unwrap(), 0.5);
        assert_eq!(forward_transfer(&c1, &c1).unwrap(), 0.0);
        assert_eq!(forward_transfer(&c1, &curve(&[1.0, 1.0, 1.0])).unwrap(), 1.0);
        assert!((forward_transfer_from_auc(0.5, 0.8).unwrap() - 0.6).abs() < 1e-12);
        assert!((forward_transfer(&c1, &curve(&[0.6, 1.0])).unwrap() - 0.6).abs() < 1e-12);
        assert!(forward_transfer(&curve(&[1.0, 1.0]), &c1).is_err());
    }

    #[test]
    fn pareto_examples() {
        let f = pareto_front(&[pt(10, 0.30), pt(20, 0.25), pt(15, 0.35)]);
        assert_eq!(f, vec![pt(10, 0.30), pt(20, 0.25)]);
        assert_eq!(pareto_front(&[pt(1, 0.5)]), vec![pt(1, 0.5)]);
        assert_eq!(pareto_front(&[pt(1, 0.5), pt(1, 0.5)]).len(), 1);
    }

    fn brute_front(points: &[ParetoPoint]) -> Vec<(u64, u64)> {
        let mut out: Vec<(u64, u64)> = points
            .iter()
            .filter(|p| !points.iter().any(|q| dominates(q, p)))
            .map(|p| (p.flops, p.error.to_bits()))
            .collect();
        out.sort();
        out.dedup();
        out
    }

    fn arb_points() -> impl Strategy<Value = Vec<ParetoPoint>> {
        prop::collection::vec((0u64..50, 0u32..20), 1..60)
            .prop_map(|v| v.into_iter().map(|(f, e)| pt(f, e as f64 / 20.0)).collect())
    }

    proptest! {
        #[test]
        fn front_matches_pairwise_oracle(points in arb_points()) {
            let got: Vec<(u64, u64)> = pareto_front(&points).iter().map(|p| (p.flops, p.error.to_bits())).collect();
            prop_assert_eq!(got, brute_front(&points));
        }

        #[test]
        fn front_is_idempotent(points in arb_points()) {
            let f = pareto_front(&points);
            prop_assert_eq!(pareto_front(&f), f);
        }

        #[test]
        fn union_front_members_come_from_fronts(p in arb_points(), q in arb_points()) {
            let all: Vec<ParetoPoint> = p.iter().chain(&q).cloned().collect();
            let fp = pareto_front(&p);
            let fq = pareto_front(&q);
            for m in pareto_front(&all) {
                prop_assert!(fp.iter().chain(&fq).any(|c| c.flops == m.flops && c.error == m.error));
            }
        }

        #[test]
        fn partition_aggregate_is_weighted(errors in prop::collection::vec((0.0f64..1.0, 0u64..1000, 0u8..3), 1..30)) {
            let rs: Vec<RunRecord> = errors.iter().enumerate()
                .map(|(i, (e, f, d))| rec(&i.to_string(), *e, *f, &d.to_string(), 1))
                .collect();
            let whole = aggregate(&rs, |_| true).unwrap();
            let parts = slice_aggregates(&rs, Slice::Domain);
            let n: usize = parts.values().map(|a| a.count).sum();
            let e: f64 = parts.values().map(|a| a.error * a.count as f64).sum::<f64>() / n as f64;
            prop_assert_eq!(n, rs.len());
            prop_assert!((e - whole.error).abs() < 1e-12);
            prop_assert_eq!(parts.values().map(|a| a.cflop).sum::<u64>(), whole.cflop);
        }

        #[test]
        fn regret_final_value(pairs in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..30)) {
            let rs: Vec<RunRecord> = pairs.iter().enumerate().map(|(i, p)| rec(&i.to_string(), p.0, 0, "x", 1)).collect();
            let refs: Vec<RunRecord> = pairs.iter().enumerate().map(|(i, p)| rec(&i.to_string(), p.1, 0, "x", 1)).collect();
            let c = regret_curve(&rs, &refs).unwrap();
            let n = rs.len() as f64;
            let e = aggregate(&rs, |_| true).unwrap().error;
            let e_ref = aggregate(&refs, |_| true).unwrap().error;
            prop_assert!((c[c.len() - 1] - n * (e - e_ref)).abs() < 1e-9);
        }

        #[test]
        fn fwt_invariant_to_step_affine_maps(
            a in prop::collection::vec(0.0f64..0.99, 2..8),
            b in prop::collection::vec(0.0f64..1.0, 2..8),
            scale in 1usize..50,
            offset in 0usize..1000,
        ) {
            let c1 = curve(&a);
            let c2 = curve(&b);
            let map = |c: &[CurvePoint]| -> Vec<CurvePoint> {
                c.iter().map(|p| CurvePoint { step: p.step * scale + offset, accuracy: p.accuracy }).collect()
            };
            let base = forward_transfer(&c1, &c2).unwrap();
            let moved = forward_transfer(&map(&c1), &map(&c2)).unwrap();
            prop_assert!((base - moved).abs() < 1e-9);
            prop_assert!(base <= 1.0);
        }
    }
}
