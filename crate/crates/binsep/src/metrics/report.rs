//! Per-utterance metric rows, trimmed aggregation, and serialization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One evaluated (scene, speaker) pair. `itd_error_us` / `ild_error_db` are
/// `None` when the metric was undefined (silent channel); such entries are
/// excluded from aggregates and counted.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct UtteranceMetrics {
    pub scene_id: String,
    pub speaker_id: usize,
    /// Mean over channels of the per-channel SNR improvement.
    pub snri_db: f64,
    /// True when the estimate SNR hit the denominator cap on any channel,
    /// making `snri_db` a lower bound.
    pub snri_capped: bool,
    /// Mean over channels of per-channel SI-SDR.
    pub si_sdr_db: f64,
    pub itd_error_us: Option<f64>,
    pub ild_error_db: Option<f64>,
    /// Estimate index assigned to each target slot for this scene.
    pub permutation: Vec<usize>,
}

/// Dataset-level summary. SNRi is averaged untrimmed; the spatial errors
/// drop their largest `trim_fraction` before averaging.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Aggregates {
    pub n_utterances: usize,
    pub mean_snri_db: f64,
    pub mean_si_sdr_db: f64,
    pub mean_itd_error_us: Option<f64>,
    pub mean_ild_error_db: Option<f64>,
    pub trim_fraction: f64,
    pub undefined_itd_count: usize,
    pub undefined_ild_count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricsReport {
    pub per_utterance: Vec<UtteranceMetrics>,
    pub aggregates: Aggregates,
}

/// Mean after dropping the `floor(n * trim_fraction)` largest values.
/// `None` on empty input.
pub fn trimmed_mean(values: &[f64], trim_fraction: f64) -> Result<Option<f64>> {
    if !(0.0..0.5).contains(&trim_fraction) {
        return Err(Error::invalid(format!(
            "trim_fraction {trim_fraction} outside [0, 0.5)"
        )));
    }
    if values.is_empty() {
        return Ok(None);
    }
    let drop = (values.len() as f64 * trim_fraction).floor() as usize;
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let kept = &sorted[drop..];
    Ok(Some(kept.iter().sum::<f64>() / kept.len() as f64))
}

/// Build dataset aggregates from per-utterance rows.
pub fn aggregate(rows: &[UtteranceMetrics], trim_fraction: f64) -> Result<Aggregates> {
    if rows.is_empty() {
        return Err(Error::invalid("aggregate: no utterances"));
    }
    let n = rows.len();
    let mean_snri_db = rows.iter().map(|r| r.snri_db).sum::<f64>() / n as f64;
    let mean_si_sdr_db = rows.iter().map(|r| r.si_sdr_db).sum::<f64>() / n as f64;
    let itd: Vec<f64> = rows.iter().filter_map(|r| r.itd_error_us).collect();
    let ild: Vec<f64> = rows.iter().filter_map(|r| r.ild_error_db).collect();
    Ok(Aggregates {
        n_utterances: n,
        mean_snri_db,
        mean_si_sdr_db,
        mean_itd_error_us: trimmed_mean(&itd, trim_fraction)?,
        mean_ild_error_db: trimmed_mean(&ild, trim_fraction)?,
        trim_fraction,
        undefined_itd_count: n - itd.len(),
        undefined_ild_count: n - ild.len(),
    })
}

impl MetricsReport {
    pub fn new(per_utterance: Vec<UtteranceMetrics>, trim_fraction: f64) -> Result<Self> {
        let aggregates = aggregate(&per_utterance, trim_fraction)?;
        Ok(MetricsReport {
            per_utterance,
            aggregates,
        })
    }

    /// CSV with one row per utterance-speaker. Columns, in order:
    /// `scene_id, speaker_id, snri_db, snri_capped, si_sdr_db,
    /// itd_error_us, ild_error_db, permutation`. Undefined metrics are
    /// empty cells; the permutation is semicolon-joined.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "scene_id,speaker_id,snri_db,snri_capped,si_sdr_db,itd_error_us,ild_error_db,permutation\n",
        );
        for r in &self.per_utterance {
            let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
            let perm: Vec<String> = r.permutation.iter().map(|p| p.to_string()).collect();
            out.push_str(&format!(
                "{},{},{:.6},{},{:.6},{},{},{}\n",
                r.scene_id,
                r.speaker_id,
                r.snri_db,
                r.snri_capped,
                r.si_sdr_db,
                opt(r.itd_error_us),
                opt(r.ild_error_db),
                perm.join(";")
            ));
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Pearson correlation coefficient. Errors on fewer than two points or a
/// zero-variance sequence.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::shape("pearson: length mismatch"));
    }
    let n = xs.len();
    if n < 2 {
        return Err(Error::invalid("pearson: need at least two points"));
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::invalid("pearson: zero variance"));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn row(scene: usize, snri: f64, itd: Option<f64>, ild: Option<f64>) -> UtteranceMetrics {
        UtteranceMetrics {
            scene_id: format!("scene_{scene:04}"),
            speaker_id: 0,
            snri_db: snri,
            snri_capped: false,
            si_sdr_db: snri,
            itd_error_us: itd,
            ild_error_db: ild,
            permutation: vec![0, 1],
        }
    }

    #[test]
    fn trim_drops_exactly_the_top_outlier_of_twenty() {
        // floor(20 * 0.05) = 1: only the single largest value goes.
        let mut vals: Vec<f64> = (0..19).map(|i| 10.0 + i as f64 * 0.1).collect();
        vals.push(1e6);
        let got = trimmed_mean(&vals, 0.05).unwrap().unwrap();
        let want = vals[..19].iter().sum::<f64>() / 19.0;
        assert!((got - want).abs() <= 1e-9);
    }

    #[test]
    fn trim_zero_is_plain_mean() {
        let vals = [3.0, 1.0, 2.0];
        let got = trimmed_mean(&vals, 0.0).unwrap().unwrap();
        assert!((got - 2.0).abs() <= 1e-12);
    }

    #[test]
    fn trimmed_mean_matches_sort_and_slice_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let n = rng.gen_range(1..60);
            let vals: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..100.0)).collect();
            let frac = rng.gen_range(0.0..0.49);
            let got = trimmed_mean(&vals, frac).unwrap().unwrap();
            // Oracle: ascending sort, keep the low n-drop entries.
            let mut asc = vals.clone();
            asc.sort_by(f64::total_cmp);
            let drop = (n as f64 * frac).floor() as usize;
            let kept = &asc[..n - drop];
            let want = kept.iter().sum::<f64>() / kept.len() as f64;
            assert!((got - want).abs() <= 1e-9);
        }
    }

    #[test]
    fn trimmed_mean_rejects_bad_fraction() {
        assert!(trimmed_mean(&[1.0], 0.5).is_err());
        assert!(trimmed_mean(&[1.0], -0.1).is_err());
    }

    #[test]
    fn aggregate_counts_undefined_entries() {
        let rows = vec![
            row(0, 10.0, Some(50.0), Some(1.0)),
            row(1, 20.0, None, Some(3.0)),
            row(2, 30.0, Some(150.0), None),
        ];
        let agg = aggregate(&rows, 0.0).unwrap();
        assert_eq!(agg.n_utterances, 3);
        assert!((agg.mean_snri_db - 20.0).abs() <= 1e-12);
        assert_eq!(agg.undefined_itd_count, 1);
        assert_eq!(agg.undefined_ild_count, 1);
        assert!((agg.mean_itd_error_us.unwrap() - 100.0).abs() <= 1e-12);
        assert!((agg.mean_ild_error_db.unwrap() - 2.0).abs() <= 1e-12);
        assert!(aggregate(&[], 0.0).is_err());
    }

    #[test]
    fn report_round_trips_through_json_and_renders_csv() {
        let rows = vec![row(0, 5.5, Some(40.0), None)];
        let report = MetricsReport::new(rows, 0.05).unwrap();
        let json = report.to_json().unwrap();
        let back = MetricsReport::from_json(&json).unwrap();
        assert_eq!(back, report);
        let csv = report.to_csv();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "scene_id,speaker_id,snri_db,snri_capped,si_sdr_db,itd_error_us,ild_error_db,permutation"
        );
        let data = lines.next().unwrap();
        assert!(data.starts_with("scene_0000,0,5.500000,false,5.500000,40.000000,,0;1"));
    }

    #[test]
    fn pearson_matches_known_cases() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let up: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        let down: Vec<f64> = xs.iter().map(|x| -0.5 * x).collect();
        assert!((pearson(&xs, &up).unwrap() - 1.0).abs() <= 1e-12);
        assert!((pearson(&xs, &down).unwrap() + 1.0).abs() <= 1e-12);
        assert!(pearson(&xs, &[1.0, 1.0, 1.0, 1.0]).is_err());
        assert!(pearson(&xs, &xs[..2]).is_err());
    }
}
