//! Evaluation metrics for sets of predicted futures.
//!
//! Notation: a set holds N candidate futures `Z_i` of shape `[f x 3J]`, the
//! ground truth is `X`. Diversity (APD) uses whole-sequence distances;
//! accuracy (ADE/FDE) takes the best candidate; the multimodal variants
//! average accuracy against every ground-truth future whose last observed
//! frame is close to this observation's.

use crate::diffusion::PredictionSet;
use crate::error::{Error, Result};
use ndarray::{Array1, Array2};
use std::io::Write;

fn frame_dist(a: &Array2<f64>, b: &Array2<f64>, row: usize) -> f64 {
    (0..a.ncols())
        .map(|c| (a[(row, c)] - b[(row, c)]).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn flat_dist(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn check_gt(set: &PredictionSet, gt: &Array2<f64>) -> Result<()> {
    if set.samples[0].dim() != gt.dim() {
        return Err(Error::data(format!(
            "ground truth shape {:?} does not match samples {:?}",
            gt.dim(),
            set.samples[0].dim()
        )));
    }
    Ok(())
}

/// Average pairwise distance: mean of `||Z_i - Z_j||` (flattened sequences)
/// over ordered pairs `i != j`. A single-sample set has no pairs and scores 0.
pub fn apd(set: &PredictionSet) -> f64 {
    let n = set.len();
    if n < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            total += 2.0 * flat_dist(&set.samples[i], &set.samples[j]);
        }
    }
    total / (n * (n - 1)) as f64
}

/// Average displacement error of the best candidate: per-frame Euclidean
/// distances to the truth, summed and divided by the horizon, minimised
/// over candidates.
pub fn ade(set: &PredictionSet, gt: &Array2<f64>) -> Result<f64> {
    check_gt(set, gt)?;
    let f = gt.nrows();
    let best = set
        .samples
        .iter()
        .map(|z| (0..f).map(|t| frame_dist(z, gt, t)).sum::<f64>() / f as f64)
        .fold(f64::INFINITY, f64::min);
    Ok(best)
}

/// Final displacement error of the best candidate: distance at the last
/// frame, minimised over candidates.
pub fn fde(set: &PredictionSet, gt: &Array2<f64>) -> Result<f64> {
    check_gt(set, gt)?;
    let last = gt.nrows() - 1;
    Ok(set
        .samples
        .iter()
        .map(|z| frame_dist(z, gt, last))
        .fold(f64::INFINITY, f64::min))
}

/// Multimodal ADE: mean of [`ade`] against every future in the group.
pub fn mmade(set: &PredictionSet, group: &[&Array2<f64>]) -> Result<f64> {
    if group.is_empty() {
        return Err(Error::data("multimodal group must not be empty"));
    }
    let mut total = 0.0;
    for gt in group {
        total += ade(set, gt)?;
    }
    Ok(total / group.len() as f64)
}

/// Multimodal FDE: mean of [`fde`] against every future in the group.
pub fn mmfde(set: &PredictionSet, group: &[&Array2<f64>]) -> Result<f64> {
    if group.is_empty() {
        return Err(Error::data("multimodal group must not be empty"));
    }
    let mut total = 0.0;
    for gt in group {
        total += fde(set, gt)?;
    }
    Ok(total / group.len() as f64)
}

/// For each observation, the indices (including itself) whose final observed
/// frames lie within `delta` in Euclidean distance. Groups are symmetric and
/// never empty.
pub fn multimodal_groups(last_frames: &[Array1<f64>], delta: f64) -> Vec<Vec<usize>> {
    let n = last_frames.len();
    let mut groups = vec![Vec::new(); n];
    for i in 0..n {
        for j in 0..n {
            let d = (&last_frames[i] - &last_frames[j])
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            if d <= delta {
                groups[i].push(j);
            }
        }
    }
    groups
}

/// Constant-pose baseline: repeat the last observed frame over the horizon.
pub fn zero_velocity_prediction(observed: &Array2<f64>, horizon: usize) -> Array2<f64> {
    let last = observed.row(observed.nrows() - 1);
    let mut out = Array2::zeros((horizon, observed.ncols()));
    for mut row in out.rows_mut() {
        row.assign(&last);
    }
    out
}

/// One evaluation row.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub obs_id: usize,
    pub apd: f64,
    pub ade: f64,
    pub fde: f64,
    pub mmade: f64,
    pub mmfde: f64,
}

/// Write records as CSV with a trailing `mean` row; values use 6 decimal
/// places.
pub fn write_eval_csv<W: Write>(mut w: W, records: &[EvalRecord]) -> Result<()> {
    writeln!(w, "obs_id,APD,ADE,FDE,MMADE,MMFDE")?;
    let mut sums = [0.0; 5];
    for r in records {
        writeln!(
            w,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            r.obs_id, r.apd, r.ade, r.fde, r.mmade, r.mmfde
        )?;
        for (s, v) in sums
            .iter_mut()
            .zip([r.apd, r.ade, r.fde, r.mmade, r.mmfde])
        {
            *s += v;
        }
    }
    if !records.is_empty() {
        let n = records.len() as f64;
        writeln!(
            w,
            "mean,{:.6},{:.6},{:.6},{:.6},{:.6}",
            sums[0] / n,
            sums[1] / n,
            sums[2] / n,
            sums[3] / n,
            sums[4] / n
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;
    use rand::RngExt as _;

    fn rand_set(n: usize, f: usize, w: usize, seed: u64) -> PredictionSet {
        let mut r = rng::substream(seed, &[60]);
        PredictionSet::new(
            0,
            (0..n)
                .map(|_| Array2::from_shape_fn((f, w), |_| r.random_range(-2.0..2.0)))
                .collect(),
        )
        .unwrap()
    }

    fn rand_gt(f: usize, w: usize, seed: u64) -> Array2<f64> {
        let mut r = rng::substream(seed, &[61]);
        Array2::from_shape_fn((f, w), |_| r.random_range(-2.0..2.0))
    }

    #[test]
    fn apd_of_two_known_samples() {
        // two samples differing by 3 in one coordinate and 4 in another:
        // flattened distance 5, averaged over both ordered pairs
        let a = Array2::zeros((2, 3));
        let mut b = Array2::zeros((2, 3));
        b[(0, 0)] = 3.0;
        b[(1, 2)] = 4.0;
        let set = PredictionSet::new(0, vec![a, b]).unwrap();
        assert!((apd(&set) - 5.0).abs() < 1e-15);
    }

    #[test]
    fn apd_matches_brute_force_and_is_permutation_invariant() {
        let set = rand_set(6, 4, 9, 1);
        let n = set.len();
        let mut brute = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    let d: f64 = set.samples[i]
                        .iter()
                        .zip(set.samples[j].iter())
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    brute += d.sqrt();
                }
            }
        }
        brute /= (n * (n - 1)) as f64;
        assert!((apd(&set) - brute).abs() < 1e-12);

        let mut shuffled = set.samples.clone();
        shuffled.reverse();
        let set2 = PredictionSet::new(0, shuffled).unwrap();
        assert!((apd(&set) - apd(&set2)).abs() < 1e-12);
    }

    #[test]
    fn identical_samples_have_zero_apd() {
        let a = rand_gt(3, 6, 2);
        let set = PredictionSet::new(0, vec![a.clone(), a.clone(), a]).unwrap();
        assert_eq!(apd(&set), 0.0);
        assert_eq!(apd(&rand_set(1, 3, 6, 3)), 0.0);
    }

    #[test]
    fn ade_fde_match_brute_force() {
        let set = rand_set(5, 6, 9, 4);
        let gt = rand_gt(6, 9, 5);
        let mut best_ade = f64::INFINITY;
        let mut best_fde = f64::INFINITY;
        for z in &set.samples {
            let mut total = 0.0;
            for t in 0..6 {
                let mut d = 0.0;
                for c in 0..9 {
                    d += (z[(t, c)] - gt[(t, c)]).powi(2);
                }
                total += d.sqrt();
            }
            best_ade = best_ade.min(total / 6.0);
            let mut d = 0.0;
            for c in 0..9 {
                d += (z[(5, c)] - gt[(5, c)]).powi(2);
            }
            best_fde = best_fde.min(d.sqrt());
        }
        assert!((ade(&set, &gt).unwrap() - best_ade).abs() < 1e-12);
        assert!((fde(&set, &gt).unwrap() - best_fde).abs() < 1e-12);
    }

    #[test]
    fn perfect_sample_zeroes_accuracy() {
        let gt = rand_gt(4, 6, 6);
        let mut samples = vec![rand_gt(4, 6, 7), gt.clone(), rand_gt(4, 6, 8)];
        samples[0][(0, 0)] += 10.0;
        let set = PredictionSet::new(0, samples).unwrap();
        assert_eq!(ade(&set, &gt).unwrap(), 0.0);
        assert_eq!(fde(&set, &gt).unwrap(), 0.0);
    }

    #[test]
    fn multimodal_metrics_average_over_group() {
        let set = rand_set(4, 5, 6, 9);
        let g1 = rand_gt(5, 6, 10);
        let g2 = rand_gt(5, 6, 11);
        let want_ade = (ade(&set, &g1).unwrap() + ade(&set, &g2).unwrap()) / 2.0;
        let want_fde = (fde(&set, &g1).unwrap() + fde(&set, &g2).unwrap()) / 2.0;
        assert!((mmade(&set, &[&g1, &g2]).unwrap() - want_ade).abs() < 1e-12);
        assert!((mmfde(&set, &[&g1, &g2]).unwrap() - want_fde).abs() < 1e-12);
        // singleton group reduces to the unimodal metric
        assert_eq!(mmade(&set, &[&g1]).unwrap(), ade(&set, &g1).unwrap());
        assert!(mmade(&set, &[]).is_err());
    }

    #[test]
    fn groups_respect_delta() {
        let lasts = vec![
            Array1::from_vec(vec![0.0, 0.0]),
            Array1::from_vec(vec![0.3, 0.0]),
            Array1::from_vec(vec![10.0, 0.0]),
        ];
        let g = multimodal_groups(&lasts, 0.5);
        assert_eq!(g[0], vec![0, 1]);
        assert_eq!(g[1], vec![0, 1]);
        assert_eq!(g[2], vec![2]);
        let all = multimodal_groups(&lasts, 100.0);
        assert!(all.iter().all(|g| g.len() == 3));
        let singles = multimodal_groups(&lasts, 1e-9);
        assert!(singles.iter().enumerate().all(|(i, g)| g == &vec![i]));
    }

    #[test]
    fn zero_velocity_repeats_last_frame() {
        let obs = rand_gt(5, 6, 12);
        let pred = zero_velocity_prediction(&obs, 3);
        assert_eq!(pred.dim(), (3, 6));
        for row in pred.rows() {
            assert_eq!(row, obs.row(4));
        }
    }

    #[test]
    fn eval_csv_golden() {
        let records = vec![
            EvalRecord {
                obs_id: 0,
                apd: 1.0,
                ade: 0.5,
                fde: 0.25,
                mmade: 0.5,
                mmfde: 0.25,
            },
            EvalRecord {
                obs_id: 1,
                apd: 2.0,
                ade: 1.5,
                fde: 0.75,
                mmade: 1.5,
                mmfde: 0.75,
            },
        ];
        let mut buf = Vec::new();
        write_eval_csv(&mut buf, &records).unwrap();
        let got = String::from_utf8(buf).unwrap();
        let want = "obs_id,APD,ADE,FDE,MMADE,MMFDE\n\
                    0,1.000000,0.500000,0.250000,0.500000,0.250000\n\
                    1,2.000000,1.500000,0.750000,1.500000,0.750000\n\
                    mean,1.500000,1.000000,0.500000,1.000000,0.500000\n";
        assert_eq!(got, want);
    }

    proptest! {
        #[test]
        fn apd_nonnegative_and_scale_covariant(seed in 0u64..500) {
            let set = rand_set(4, 3, 6, seed);
            let a = apd(&set);
            prop_assert!(a >= 0.0);
            let doubled = PredictionSet::new(0, set.samples.iter().map(|s| s * 2.0).collect()).unwrap();
            prop_assert!((apd(&doubled) - 2.0 * a).abs() < 1e-9);
        }

        #[test]
        fn ade_bounded_by_any_single_sample(seed in 0u64..500) {
            let set = rand_set(5, 4, 6, seed);
            let gt = rand_gt(4, 6, seed + 1000);
            let best = ade(&set, &gt).unwrap();
            for z in &set.samples {
                let single = PredictionSet::new(0, vec![z.clone()]).unwrap();
                prop_assert!(best <= ade(&single, &gt).unwrap() + 1e-12);
            }
        }
    }
}
