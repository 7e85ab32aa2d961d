//! Detection matching, position and rotation error statistics, and
//! precision/recall curves against planted ground truth.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::peaks::{distance, rank_order, Peak};
use crate::so3::{rot_distance_deg, UnitQuaternion};
use crate::synth::Instance;

pub const DEFAULT_MATCH_TOLERANCE: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Assignment {
    pub pred: usize,
    pub gt: usize,
    pub distance: f64,
    pub pred_q: UnitQuaternion,
    pub gt_q: UnitQuaternion,
    /// Angular distance without any symmetry, in degrees.
    pub rotation_error_deg: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatchReport {
    pub assignments: Vec<Assignment>,
    pub unmatched_pred: Vec<usize>,
    pub unmatched_gt: Vec<usize>,
    pub tol: f64,
}

impl MatchReport {
    pub fn n_matched(&self) -> usize {
        self.assignments.len()
    }

    pub fn n_pred(&self) -> usize {
        self.assignments.len() + self.unmatched_pred.len()
    }

    pub fn n_gt(&self) -> usize {
        self.assignments.len() + self.unmatched_gt.len()
    }
}

/// One-to-one matching. Predictions are visited by descending score (ties
/// by position) and each takes the nearest unmatched ground-truth entry
/// within `tol`; equidistant entries are ordered by position, then id, so
/// the outcome does not depend on the order of `gt`.
pub fn match_detections(pred: &[Peak], gt: &[Instance], tol: f64) -> Result<MatchReport> {
    if !(tol > 0.0) {
        return Err(Error::Config(format!("match tolerance must be positive, got {tol}")));
    }
    let mut order: Vec<usize> = (0..pred.len()).collect();
    order.sort_by(|&a, &b| rank_order(&pred[a], &pred[b]).then(a.cmp(&b)));
    let mut taken = vec![false; gt.len()];
    let mut assignments = Vec::new();
    let mut unmatched_pred = Vec::new();
    for i in order {
        let p = &pred[i];
        let best = (0..gt.len())
            .filter(|&j| !taken[j])
            .map(|j| (j, distance(p.pos, gt[j].pos)))
            .filter(|&(_, d)| d <= tol)
            .min_by(|a, b| {
                a.1.total_cmp(&b.1)
                    .then_with(|| gt[a.0].pos.cmp(&gt[b.0].pos))
                    .then_with(|| gt[a.0].instance_id.cmp(&gt[b.0].instance_id))
            });
        match best {
            Some((j, d)) => {
                taken[j] = true;
                assignments.push(Assignment {
                    pred: i,
                    gt: j,
                    distance: d,
                    pred_q: p.q,
                    gt_q: gt[j].q,
                    rotation_error_deg: rot_distance_deg(&p.q, &gt[j].q),
                });
            }
            None => unmatched_pred.push(i),
        }
    }
    unmatched_pred.sort_unstable();
    let unmatched_gt = (0..gt.len()).filter(|&j| !taken[j]).collect();
    Ok(MatchReport {
        assignments,
        unmatched_pred,
        unmatched_gt,
        tol,
    })
}

fn mean_max(values: impl Iterator<Item = f64>) -> Result<(f64, f64)> {
    let (mut n, mut sum, mut max) = (0usize, 0.0, 0.0f64);
    for v in values {
        n += 1;
        sum += v;
        max = max.max(v);
    }
    if n == 0 {
        return Err(Error::NoMatches);
    }
    Ok((sum / n as f64, max))
}

/// Mean and maximum matched distance, in voxels.
pub fn position_stats(report: &MatchReport) -> Result<(f64, f64)> {
    mean_max(report.assignments.iter().map(|a| a.distance))
}

/// Template symmetry to quotient out of rotation errors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Symmetry {
    /// `n`-fold rotations about `axis`, in template coordinates.
    Cyclic { n: u32, axis: [f64; 3] },
    /// Continuous symmetry about `axis`; the error is the angle between
    /// the two rotated axes.
    Axial { axis: [f64; 3] },
}

impl Symmetry {
    /// Error of `pred` against `gt` modulo this symmetry, in degrees.
    pub fn error_deg(&self, pred: &UnitQuaternion, gt: &UnitQuaternion) -> Result<f64> {
        match *self {
            Symmetry::Cyclic { n, axis } => {
                if n == 0 {
                    return Err(Error::Config("cyclic symmetry order must be at least 1".into()));
                }
                let mut best = f64::INFINITY;
                for k in 0..n {
                    let angle = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
                    let g = UnitQuaternion::from_axis_angle(axis, angle)?;
                    best = best.min(rot_distance_deg(pred, &(*gt * g)));
                }
                Ok(best)
            }
            Symmetry::Axial { axis } => {
                let norm = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
                if !(norm > 0.0) || !norm.is_finite() {
                    return Err(Error::Config(format!("symmetry axis {axis:?} has no direction")));
                }
                let a = axis.map(|v| v / norm);
                let (u, v) = (pred.rotate_vector(a), gt.rotate_vector(a));
                let dot: f64 = (0..3).map(|i| u[i] * v[i]).sum();
                let cross = [
                    u[1] * v[2] - u[2] * v[1],
                    u[2] * v[0] - u[0] * v[2],
                    u[0] * v[1] - u[1] * v[0],
                ];
                let sin = (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt();
                Ok(sin.atan2(dot).to_degrees())
            }
        }
    }
}

/// Mean and maximum rotation error over matches, in degrees.
pub fn rotation_stats(report: &MatchReport, symmetry: Option<&Symmetry>) -> Result<(f64, f64)> {
    let errors = report
        .assignments
        .iter()
        .map(|a| match symmetry {
            Some(s) => s.error_deg(&a.pred_q, &a.gt_q),
            None => Ok(a.rotation_error_deg),
        })
        .collect::<Result<Vec<_>>>()?;
    mean_max(errors.into_iter())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// Returned peaks over ground-truth count.
    pub picking_factor: f64,
    pub n_peaks: usize,
    pub n_matched: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectionCurve {
    pub samples: Vec<CurvePoint>,
}

/// Precision, recall and F1 of the top `round(φ·|gt|)` predictions for each
/// picking factor `φ`. `pred` must already be ranked best first.
pub fn detection_curve(
    pred: &[Peak],
    gt: &[Instance],
    tol: f64,
    picking_factors: &[f64],
) -> Result<DetectionCurve> {
    let mut samples = Vec::with_capacity(picking_factors.len());
    for &phi in picking_factors {
        if !(phi >= 0.0) || !phi.is_finite() {
            return Err(Error::Config(format!("picking factor must be non-negative, got {phi}")));
        }
        let k = ((phi * gt.len() as f64).round() as usize).min(pred.len());
        let report = match_detections(&pred[..k], gt, tol)?;
        let m = report.n_matched();
        let precision = if k == 0 { 0.0 } else { m as f64 / k as f64 };
        let recall = if gt.is_empty() { 0.0 } else { m as f64 / gt.len() as f64 };
        let f1 = if m == 0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        samples.push(CurvePoint {
            picking_factor: if gt.is_empty() { 0.0 } else { k as f64 / gt.len() as f64 },
            n_peaks: k,
            n_matched: m,
            precision,
            recall,
            f1,
        });
    }
    Ok(DetectionCurve { samples })
}

/// One row of a position/rotation accuracy table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsRow {
    pub template: String,
    pub method: String,
    pub n_gt: usize,
    pub n_matched: usize,
    pub pos_mean: f64,
    pub pos_max: f64,
    pub rot_mean_deg: f64,
    pub rot_max_deg: f64,
}

impl StatsRow {
    pub fn from_report(
        template: &str,
        method: &str,
        report: &MatchReport,
        symmetry: Option<&Symmetry>,
    ) -> Result<Self> {
        let (pos_mean, pos_max) = position_stats(report)?;
        let (rot_mean_deg, rot_max_deg) = rotation_stats(report, symmetry)?;
        Ok(Self {
            template: template.to_string(),
            method: method.to_string(),
            n_gt: report.n_gt(),
            n_matched: report.n_matched(),
            pos_mean,
            pos_max,
            rot_mean_deg,
            rot_max_deg,
        })
    }
}

pub fn write_stats_csv<W: Write>(out: W, rows: &[StatsRow]) -> Result<()> {
    write_rows(out, rows)
}

pub fn write_curve_csv<W: Write>(out: W, curve: &DetectionCurve) -> Result<()> {
    write_rows(out, &curve.samples)
}

fn write_rows<W: Write, T: Serialize>(out: W, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        other => Error::Config(format!("csv: {other:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::peaks::ScoreKind;
    use crate::so3::{random_quaternion, sample_so3_random};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn inst(pos: [usize; 3], id: usize) -> Instance {
        Instance {
            pos,
            q: UnitQuaternion::IDENTITY,
            instance_id: id,
        }
    }

    fn peak(pos: [usize; 3], score: f64) -> Peak {
        Peak::at(pos, score, ScoreKind::Lncc)
    }

    #[test]
    fn exact_predictions_match_at_zero_distance() {
        let gt = vec![inst([5, 5, 5], 0), inst([30, 5, 5], 1), inst([5, 30, 5], 2)];
        let pred: Vec<Peak> = gt.iter().map(|g| peak(g.pos, 1.0)).collect();
        let r = match_detections(&pred, &gt, 10.0).unwrap();
        assert_eq!(r.n_matched(), 3);
        assert!(r.unmatched_gt.is_empty() && r.unmatched_pred.is_empty());
        assert_eq!(position_stats(&r).unwrap(), (0.0, 0.0));
        assert_eq!(rotation_stats(&r, None).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn tolerance_is_respected() {
        let gt = vec![inst([20, 20, 20], 0)];
        let r = match_detections(&[peak([31, 20, 20], 1.0)], &gt, 10.0).unwrap();
        assert_eq!(r.n_matched(), 0);
        assert_eq!(r.unmatched_pred, vec![0]);
        assert_eq!(r.unmatched_gt, vec![0]);
        assert!(matches!(position_stats(&r), Err(Error::NoMatches)));
        assert!(matches!(rotation_stats(&r, None), Err(Error::NoMatches)));
        assert!(match_detections(&[], &gt, 0.0).is_err());
    }

    #[test]
    fn higher_score_claims_the_instance() {
        let gt = vec![inst([20, 20, 20], 0)];
        let pred = vec![peak([21, 20, 20], 0.4), peak([23, 20, 20], 0.9)];
        let r = match_detections(&pred, &gt, 10.0).unwrap();
        assert_eq!(r.n_matched(), 1);
        assert_eq!(r.assignments[0].pred, 1);
        assert_eq!(r.unmatched_pred, vec![0]);
    }

    #[test]
    fn position_statistics() {
        let gt = vec![inst([10, 10, 10], 0), inst([40, 10, 10], 1), inst([10, 40, 10], 2)];
        let pred = vec![
            peak([11, 10, 10], 1.0),
            peak([40, 12, 10], 0.9),
            peak([10, 40, 13], 0.8),
        ];
        let r = match_detections(&pred, &gt, 10.0).unwrap();
        assert_eq!(position_stats(&r).unwrap(), (2.0, 3.0));
        let single = match_detections(&pred[..1], &gt[..1], 10.0).unwrap();
        assert_eq!(position_stats(&single).unwrap(), (1.0, 1.0));
    }

    #[test]
    fn cyclic_symmetry_is_quotiented() {
        let axis = [0.3, -0.2, 1.0];
        let gt_q = UnitQuaternion::from_axis_angle([1.0, 1.0, 0.0], 0.7).unwrap();
        let c4 = UnitQuaternion::from_axis_angle(axis, std::f64::consts::FRAC_PI_2).unwrap();
        let mut gt = vec![inst([10, 10, 10], 0)];
        gt[0].q = gt_q;
        let mut p = peak([10, 10, 10], 1.0);
        p.q = gt_q * c4;
        let r = match_detections(&[p], &gt, 10.0).unwrap();
        assert!((rotation_stats(&r, None).unwrap().0 - 90.0).abs() < 1e-9);
        let sym = Symmetry::Cyclic { n: 4, axis };
        let (mean, max) = rotation_stats(&r, Some(&sym)).unwrap();
        assert!(mean < 1e-6 && max < 1e-6);
    }

    #[test]
    fn axial_symmetry_measures_axis_tilt() {
        let axis = [0.0, 0.0, 1.0];
        let spin = UnitQuaternion::from_axis_angle(axis, 2.0).unwrap();
        let sym = Symmetry::Axial { axis };
        assert!(sym.error_deg(&spin, &UnitQuaternion::IDENTITY).unwrap() < 1e-6);
        let tilt = UnitQuaternion::from_axis_angle([1.0, 0.0, 0.0], 0.25).unwrap();
        let e = sym.error_deg(&(tilt * spin), &UnitQuaternion::IDENTITY).unwrap();
        assert!((e - 0.25f64.to_degrees()).abs() < 1e-9);
    }

    #[test]
    fn curve_arithmetic() {
        let gt = vec![inst([10, 10, 10], 0), inst([40, 10, 10], 1)];
        let pred = vec![
            peak([10, 10, 10], 1.0),
            peak([40, 10, 10], 0.9),
            peak([70, 70, 70], 0.5),
            peak([90, 70, 70], 0.4),
        ];
        let c = detection_curve(&pred, &gt, 10.0, &[1.0, 2.0]).unwrap();
        assert_eq!(c.samples[0].precision, 1.0);
        assert_eq!(c.samples[0].recall, 1.0);
        assert_eq!(c.samples[0].f1, 1.0);
        let s = c.samples[1];
        assert_eq!((s.picking_factor, s.precision, s.recall), (2.0, 0.5, 1.0));
        assert!((s.f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn csv_output_has_headers() {
        let gt = vec![inst([10, 10, 10], 0)];
        let r = match_detections(&[peak([11, 10, 10], 1.0)], &gt, 10.0).unwrap();
        let row = StatsRow::from_report("l-shape", "ttm-ref", &r, None).unwrap();
        let mut buf = Vec::new();
        write_stats_csv(&mut buf, &[row]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("template,method,n_gt,n_matched,pos_mean,pos_max,rot_mean_deg,rot_max_deg\n"));
        assert!(text.contains("l-shape,ttm-ref,1,1,1.0,1.0,0.0,0.0"));
        let mut buf = Vec::new();
        write_curve_csv(&mut buf, &detection_curve(&[], &gt, 10.0, &[1.0]).unwrap()).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("picking_factor,n_peaks,"));
    }

    fn scene(seed: u64, n_gt: usize, n_pred: usize) -> (Vec<Peak>, Vec<Instance>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        use rand::Rng;
        let gt: Vec<Instance> = (0..n_gt)
            .map(|i| Instance {
                pos: [rng.random_range(0..40), rng.random_range(0..40), rng.random_range(0..40)],
                q: random_quaternion(&mut rng),
                instance_id: i,
            })
            .collect();
        let qs = sample_so3_random(n_pred.max(1), seed).unwrap();
        let pred = (0..n_pred)
            .map(|i| {
                let mut p = peak(
                    [rng.random_range(0..40), rng.random_range(0..40), rng.random_range(0..40)],
                    // coarse scores so ties occur
                    (rng.random_range(0..5) as f64) / 4.0,
                );
                p.q = qs[i];
                p
            })
            .collect();
        (pred, gt)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn bookkeeping_identity(seed in any::<u64>(), n_gt in 1usize..15, n_pred in 0usize..25) {
            let (pred, gt) = scene(seed, n_gt, n_pred);
            let r = match_detections(&pred, &gt, 10.0).unwrap();
            prop_assert_eq!(r.n_pred(), pred.len());
            prop_assert_eq!(r.n_gt(), gt.len());
            prop_assert!(r.assignments.iter().all(|a| a.distance <= 10.0));
            let mut seen: Vec<usize> = r.assignments.iter().map(|a| a.gt).collect();
            seen.sort_unstable();
            seen.dedup();
            prop_assert_eq!(seen.len(), r.n_matched());
            let c = detection_curve(&pred, &gt, 10.0, &[0.5, 1.0, 1.5]).unwrap();
            for s in &c.samples {
                prop_assert!((s.precision * s.n_peaks as f64 - s.n_matched as f64).abs() < 1e-9);
                prop_assert!((s.recall * gt.len() as f64 - s.n_matched as f64).abs() < 1e-9);
                prop_assert!((0.0..=1.0).contains(&s.precision) && (0.0..=1.0).contains(&s.recall));
            }
        }

        #[test]
        fn gt_order_does_not_matter(seed in any::<u64>(), n_gt in 1usize..15, n_pred in 0usize..25) {
            let (pred, gt) = scene(seed, n_gt, n_pred);
            let mut shuffled = gt.clone();
            shuffled.reverse();
            shuffled.rotate_left(seed as usize % n_gt);
            let key = |r: &MatchReport, g: &[Instance]| {
                let mut v: Vec<(usize, usize)> =
                    r.assignments.iter().map(|a| (a.pred, g[a.gt].instance_id)).collect();
                v.sort_unstable();
                v
            };
            let a = match_detections(&pred, &gt, 10.0).unwrap();
            let b = match_detections(&pred, &shuffled, 10.0).unwrap();
            prop_assert_eq!(key(&a, &gt), key(&b, &shuffled));
        }

        #[test]
        fn symmetry_never_increases_error(seed in any::<u64>(), n in 1u32..8) {
            let (mut pred, gt) = scene(seed, 6, 6);
            for (p, g) in pred.iter_mut().zip(&gt) {
                p.pos = g.pos;
            }
            let r = match_detections(&pred, &gt, 10.0).unwrap();
            let axis = [0.2, 0.9, -0.4];
            for sym in [Symmetry::Cyclic { n, axis }, Symmetry::Axial { axis }] {
                for a in &r.assignments {
                    let e = sym.error_deg(&a.pred_q, &a.gt_q).unwrap();
                    prop_assert!(e <= a.rotation_error_deg + 1e-9);
                }
            }
        }
    }
}
