//! Training objectives and evaluation metrics.
//!
//! Everything here is a pure function. Degenerate inputs (silent reference,
//! zero-power channel) are errors rather than infinities so that callers can
//! count and exclude them; see [`report::aggregate`].

mod gcc;
mod report;

pub use gcc::{
    dominant_energy_window, gcc_phat_tdoa, itd_error, itd_error_windowed, GccConfig,
};
pub use report::{
    aggregate, pearson, trimmed_mean, Aggregates, MetricsReport, UtteranceMetrics,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{BinauralSignal, Waveform};

/// Denominator floor, as a fraction of the reference power. A perfect
/// estimate therefore tops out at `10*log10(1/EPS_DEN_REL)` = 120 dB.
pub const EPS_DEN_REL: f64 = 1e-12;

/// Value of the estimate-quality cap in dB.
pub const SNR_CAP_DB: f64 = 120.0;

/// A dB quantity plus a flag marking values where the denominator floor
/// dominated (error power at or below the floor), so capped entries stay
/// identifiable in reports.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DbValue {
    pub db: f64,
    pub capped: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_pair(reference: &Waveform, estimate: &Waveform) -> Result<()> {
    if reference.len() != estimate.len() {
        return Err(Error::shape(format!(
            "metric inputs differ in length: {} vs {}",
            reference.len(),
            estimate.len()
        )));
    }
    if reference.is_empty() {
        return Err(Error::invalid("metric inputs are empty"));
    }
    Ok(())
}

/// Signal-to-noise ratio of `estimate` against `reference`:
/// `10*log10(||x||^2 / (||x_hat - x||^2 + eps))` with
/// `eps = 1e-12 * ||x||^2`. Sensitive to rescaling of the estimate.
pub fn snr(reference: &Waveform, estimate: &Waveform) -> Result<DbValue> {
    check_pair(reference, estimate)?;
    let ref_power = reference.energy();
    if ref_power == 0.0 {
        return Err(Error::UndefinedMetric("snr: silent reference"));
    }
    let err_power: f64 = reference
        .samples
        .iter()
        .zip(&estimate.samples)
        .map(|(x, y)| (y - x) * (y - x))
        .sum();
    let eps = EPS_DEN_REL * ref_power;
    Ok(DbValue {
        db: 10.0 * (ref_power / (err_power + eps)).log10(),
        capped: err_power <= eps,
    })
}

/// Scale-invariant SDR: the reference is first rescaled by
/// `alpha = <x_hat, x> / <x, x>`, then SNR is taken against `alpha*x` with
/// the floor relative to `||alpha*x||^2` (which preserves exact scale
/// invariance).
pub fn si_sdr(reference: &Waveform, estimate: &Waveform) -> Result<DbValue> {
    check_pair(reference, estimate)?;
    let ref_power = reference.energy();
    if ref_power == 0.0 {
        return Err(Error::UndefinedMetric("si_sdr: silent reference"));
    }
    let alpha = dot(&estimate.samples, &reference.samples) / ref_power;
    let target_power = alpha * alpha * ref_power;
    if target_power == 0.0 {
        // Estimate orthogonal to (or zero against) the reference: the scaled
        // target vanishes and the ratio is 0/..., i.e. no target content.
        return Err(Error::UndefinedMetric("si_sdr: estimate has no component along reference"));
    }
    let err_power: f64 = reference
        .samples
        .iter()
        .zip(&estimate.samples)
        .map(|(x, y)| {
            let d = y - alpha * x;
            d * d
        })
        .sum();
    let eps = EPS_DEN_REL * target_power;
    Ok(DbValue {
        db: 10.0 * (target_power / (err_power + eps)).log10(),
        capped: err_power <= eps,
    })
}

/// Interaural level difference of a binaural signal:
/// `10*log10(||left||^2 / ||right||^2)`.
pub fn ild_db(signal: &BinauralSignal) -> Result<f64> {
    let (pl, pr) = (signal.left.energy(), signal.right.energy());
    if pl == 0.0 || pr == 0.0 {
        return Err(Error::UndefinedMetric("ild: zero-power channel"));
    }
    Ok(10.0 * (pl / pr).log10())
}

/// `|ILD(target) - ILD(estimate)|` in dB. Invariant to a common gain on
/// both estimate channels.
pub fn ild_error(target: &BinauralSignal, estimate: &BinauralSignal) -> Result<f64> {
    Ok((ild_db(target)? - ild_db(estimate)?).abs())
}

/// Mean over channels of `snr(target_ch, estimate_ch) - snr(target_ch,
/// mixture_ch)`. `capped` is set when either channel's estimate SNR hit the
/// cap, since the improvement is then a lower bound.
pub fn snr_improvement(
    mixture: &BinauralSignal,
    target: &BinauralSignal,
    estimate: &BinauralSignal,
) -> Result<DbValue> {
    let mut sum = 0.0;
    let mut capped = false;
    for (mix, tgt, est) in [
        (&mixture.left, &target.left, &estimate.left),
        (&mixture.right, &target.right, &estimate.right),
    ] {
        let after = snr(tgt, est)?;
        let before = snr(tgt, mix)?;
        sum += after.db - before.db;
        capped |= after.capped;
    }
    Ok(DbValue {
        db: sum / 2.0,
        capped,
    })
}

/// Objective used for permutation assignment and training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Snr,
    SiSdr,
}

impl Objective {
    pub fn eval(&self, reference: &Waveform, estimate: &Waveform) -> Result<DbValue> {
        match self {
            Objective::Snr => snr(reference, estimate),
            Objective::SiSdr => si_sdr(reference, estimate),
        }
    }
}

/// Best speaker assignment under an objective.
#[derive(Debug, Clone, PartialEq)]
pub struct PitAssignment {
    /// `permutation[t]` is the estimate index assigned to target `t`.
    pub permutation: Vec<usize>,
    /// Mean objective over all `2*C` channel signals under the permutation.
    pub mean_objective_db: f64,
    /// Negative of the mean objective (the quantity training minimizes).
    pub loss: f64,
}

pub(crate) fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for sub in permutations(n - 1) {
        for pos in 0..=sub.len() {
            let mut p = sub.clone();
            p.insert(pos, n - 1);
            out.push(p);
        }
    }
    out
}

/// Exhaustive utterance-level permutation-invariant assignment. The
/// binaural pair of each speaker stays tied to one slot: channels are never
/// swapped across speakers. C must be at most 4.
pub fn pit_assign(
    targets: &[BinauralSignal],
    estimates: &[BinauralSignal],
    objective: Objective,
) -> Result<PitAssignment> {
    if targets.len() != estimates.len() {
        return Err(Error::shape(format!(
            "pit_assign: {} targets vs {} estimates",
            targets.len(),
            estimates.len()
        )));
    }
    let c = targets.len();
    if c == 0 || c > 4 {
        return Err(Error::invalid(format!(
            "pit_assign: speaker count {c} outside 1..=4"
        )));
    }
    // Pairwise channel-mean objective, computed once per (target, estimate).
    let mut pair_db = vec![vec![0.0; c]; c];
    for (t, tgt) in targets.iter().enumerate() {
        for (e, est) in estimates.iter().enumerate() {
            let l = objective.eval(&tgt.left, &est.left)?;
            let r = objective.eval(&tgt.right, &est.right)?;
            pair_db[t][e] = 0.5 * (l.db + r.db);
        }
    }
    let mut best: Option<PitAssignment> = None;
    for perm in permutations(c) {
        let mean: f64 = (0..c).map(|t| pair_db[t][perm[t]]).sum::<f64>() / c as f64;
        if best.as_ref().is_none_or(|b| mean > b.mean_objective_db) {
            best = Some(PitAssignment {
                permutation: perm,
                mean_objective_db: mean,
                loss: -mean,
            });
        }
    }
    Ok(best.expect("at least one permutation"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn wave(samples: Vec<f64>) -> Waveform {
        Waveform::new(samples, 8000)
    }

    fn rand_wave(rng: &mut ChaCha8Rng, n: usize) -> Waveform {
        wave((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    fn rand_binaural(rng: &mut ChaCha8Rng, n: usize) -> BinauralSignal {
        BinauralSignal::new(rand_wave(rng, n), rand_wave(rng, n)).unwrap()
    }

    #[test]
    fn snr_caps_perfect_estimate_at_120_db() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = rand_wave(&mut rng, 64);
        let v = snr(&x, &x).unwrap();
        assert!((v.db - SNR_CAP_DB).abs() <= 1e-9);
        assert!(v.capped);
    }

    #[test]
    fn snr_of_zero_estimate_is_zero_db() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_wave(&mut rng, 64);
        let v = snr(&x, &wave(vec![0.0; 64])).unwrap();
        assert!(v.db.abs() <= 1e-9, "{}", v.db);
        assert!(!v.capped);
    }

    #[test]
    fn snr_analytic_20_db_case() {
        // ||x||^2 = 1, error energy 0.01 -> 20 dB.
        let n = 100;
        let x = wave(vec![0.1; n]); // energy 1.0
        let est = wave(vec![0.1 + 0.01; n]); // error energy n * 1e-4 = 0.01
        let v = snr(&x, &est).unwrap();
        assert!((v.db - 20.0).abs() <= 1e-9, "{}", v.db);
    }

    #[test]
    fn snr_is_scale_sensitive_but_si_sdr_is_not() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = rand_wave(&mut rng, 256);
        let est = wave(
            x.samples
                .iter()
                .map(|v| v + 0.1 * rng.gen_range(-1.0..1.0))
                .collect(),
        );
        let scaled = est.scale(2.0);
        let snr_base = snr(&x, &est).unwrap().db;
        let snr_scaled = snr(&x, &scaled).unwrap().db;
        assert!((snr_base - snr_scaled).abs() > 1.0);
        let si_base = si_sdr(&x, &est).unwrap().db;
        for c in [2.0, 0.5, 37.0] {
            let si_scaled = si_sdr(&x, &est.scale(c)).unwrap().db;
            assert!((si_base - si_scaled).abs() <= 1e-9, "c={c}");
        }
    }

    #[test]
    fn si_sdr_orthogonal_error_case() {
        // x alternating (energy 1), e orthogonal with energy 0.1 -> 10 dB.
        let n = 128;
        let amp = (1.0 / n as f64).sqrt();
        let x = wave(vec![amp; n]);
        let e_amp = (0.1 / n as f64).sqrt();
        let est = wave(
            (0..n)
                .map(|i| amp + if i % 2 == 0 { e_amp } else { -e_amp })
                .collect(),
        );
        let v = si_sdr(&x, &est).unwrap();
        assert!((v.db - 10.0).abs() <= 1e-9, "{}", v.db);
    }

    #[test]
    fn si_sdr_matches_direct_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = rand_wave(&mut rng, 200);
        let est = rand_wave(&mut rng, 200);
        let got = si_sdr(&x, &est).unwrap().db;
        // Independent recomputation straight from the definition.
        let xx: f64 = x.samples.iter().map(|v| v * v).sum();
        let xy: f64 = x.samples.iter().zip(&est.samples).map(|(a, b)| a * b).sum();
        let alpha = xy / xx;
        let num: f64 = x.samples.iter().map(|v| (alpha * v).powi(2)).sum();
        let den: f64 = x
            .samples
            .iter()
            .zip(&est.samples)
            .map(|(a, b)| (b - alpha * a).powi(2))
            .sum();
        let want = 10.0 * (num / (den + 1e-12 * num)).log10();
        assert!((got - want).abs() <= 1e-12);
    }

    #[test]
    fn ild_error_analytic_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let target = rand_binaural(&mut rng, 128);
        assert!(ild_error(&target, &target).unwrap().abs() <= 1e-12);
        // Left scaled by 2: energy ratio x4.
        let est = BinauralSignal::new(target.left.scale(2.0), target.right.clone()).unwrap();
        let want = 10.0 * 4.0f64.log10();
        assert!((ild_error(&target, &est).unwrap() - want).abs() <= 1e-6);
        assert!((want - 6.0206).abs() <= 1e-3);
        // Common gain cancels.
        let est = target.scale(10.0);
        assert!(ild_error(&target, &est).unwrap().abs() <= 1e-12);
        // Silent channel is undefined, not infinite.
        let est = BinauralSignal::new(target.left.scale(0.0), target.right.clone()).unwrap();
        assert!(matches!(
            ild_error(&target, &est),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn snri_zero_for_mixture_and_analytic_10_db() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let target = rand_binaural(&mut rng, 256);
        let noise = rand_binaural(&mut rng, 256);
        let mixture = target.add(&noise).unwrap();
        let v = snr_improvement(&mixture, &target, &mixture).unwrap();
        assert!(v.db.abs() <= 1e-12);
        // Build per-channel exact powers: target energy 1, mixture error
        // energy 1 (0 dB), estimate error energy 0.1 (10 dB).
        let n = 100;
        let t = wave(vec![0.1; n]);
        let mix = wave(t.samples.iter().map(|v| v + 0.1).collect()); // err 1.0
        let e_amp = (0.1f64 / n as f64).sqrt();
        let est = wave(t.samples.iter().map(|v| v + e_amp).collect()); // err 0.1
        let tb = BinauralSignal::new(t.clone(), t.clone()).unwrap();
        let mb = BinauralSignal::new(mix.clone(), mix).unwrap();
        let eb = BinauralSignal::new(est.clone(), est).unwrap();
        let v = snr_improvement(&mb, &tb, &eb).unwrap();
        assert!((v.db - 10.0).abs() <= 1e-9, "{}", v.db);
    }

    #[test]
    fn pit_recovers_swapped_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = rand_binaural(&mut rng, 128);
        let b = rand_binaural(&mut rng, 128);
        let targets = vec![a.clone(), b.clone()];
        let estimates = vec![b, a]; // swapped
        let got = pit_assign(&targets, &estimates, Objective::Snr).unwrap();
        assert_eq!(got.permutation, vec![1, 0]);
        assert!((got.mean_objective_db - SNR_CAP_DB).abs() <= 1e-9);
        assert!((got.loss + SNR_CAP_DB).abs() <= 1e-9);
    }

    #[test]
    fn pit_single_speaker_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = rand_binaural(&mut rng, 64);
        let e = rand_binaural(&mut rng, 64);
        let got = pit_assign(&[a], &[e], Objective::SiSdr).unwrap();
        assert_eq!(got.permutation, vec![0]);
    }

    #[test]
    fn pit_matches_exhaustive_oracle_for_three_speakers() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let targets: Vec<_> = (0..3).map(|_| rand_binaural(&mut rng, 96)).collect();
        let estimates: Vec<_> = (0..3).map(|_| rand_binaural(&mut rng, 96)).collect();
        let got = pit_assign(&targets, &estimates, Objective::Snr).unwrap();
        // Oracle: walk all 6 permutations by explicit listing.
        let all = [
            [0, 1, 2],
            [0, 2, 1],
            [1, 0, 2],
            [1, 2, 0],
            [2, 0, 1],
            [2, 1, 0],
        ];
        let mut best = f64::NEG_INFINITY;
        let mut best_perm = [0usize; 3];
        for perm in all {
            let mut acc = 0.0;
            for t in 0..3 {
                acc += snr(&targets[t].left, &estimates[perm[t]].left).unwrap().db;
                acc += snr(&targets[t].right, &estimates[perm[t]].right).unwrap().db;
            }
            let mean = acc / 6.0;
            if mean > best {
                best = mean;
                best_perm = perm;
            }
        }
        assert_eq!(got.permutation, best_perm.to_vec());
        assert!((got.mean_objective_db - best).abs() <= 1e-12);
    }

    #[test]
    fn pit_rejects_bad_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = rand_binaural(&mut rng, 64);
        assert!(pit_assign(&[a.clone()], &[a.clone(), a.clone()], Objective::Snr).is_err());
        let five: Vec<_> = (0..5).map(|_| a.clone()).collect();
        assert!(pit_assign(&five, &five, Objective::Snr).is_err());
    }
}
