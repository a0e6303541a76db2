use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::DecisionTrace;

/// Tolerance for deciding that a delay has reached the end of the source.
pub const END_OF_SOURCE_EPS: f64 = 1e-9;

/// Which clock the delays are measured on.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatencyUnit {
    #[default]
    Seconds,
    /// Source chunks consumed, for token-aligned instances.
    Tokens,
}

impl LatencyUnit {
    /// Delays and source length of a trace in this unit.
    pub fn delays(self, trace: &DecisionTrace) -> (Vec<f64>, f64) {
        match self {
            LatencyUnit::Seconds => (trace.delays.clone(), trace.source_duration_s),
            LatencyUnit::Tokens => (
                trace.delays_chunks.iter().map(|&d| d as f64).collect(),
                trace.source_len as f64,
            ),
        }
    }
}

fn lagging(delays: &[f64], source_len: f64, ideal_denominator: usize) -> Result<f64> {
    if delays.is_empty() {
        return Err(Error::argument("no delays to average"));
    }
    if ideal_denominator == 0 {
        return Err(Error::argument("reference length must be positive"));
    }
    if !(source_len > 0.0) {
        return Err(Error::argument(format!("source length {source_len} must be positive")));
    }
    for w in delays.windows(2) {
        if w[1] < w[0] {
            return Err(Error::domain(format!("delays decrease from {} to {}", w[0], w[1])));
        }
    }
    if let Some(d) = delays.iter().find(|&&d| !(d >= 0.0) || d > source_len + END_OF_SOURCE_EPS) {
        return Err(Error::domain(format!("delay {d} outside [0, {source_len}]")));
    }
    let tau = delays
        .iter()
        .position(|&d| (d - source_len).abs() <= END_OF_SOURCE_EPS)
        .map_or(delays.len(), |i| i + 1);
    let rate = source_len / ideal_denominator as f64;
    let total: f64 = delays[..tau]
        .iter()
        .enumerate()
        .map(|(i, &d)| d - i as f64 * rate)
        .sum();
    Ok(total / tau as f64)
}

/// Average lagging behind the ideal policy `d*_i = (i - 1) |x| / |y|`,
/// averaged up to the first delay that reaches the end of the source.
pub fn average_lagging(delays: &[f64], source_len: f64, ref_len: usize) -> Result<f64> {
    lagging(delays, source_len, ref_len)
}

/// AL with the ideal rate taken over `max(ref_len, hyp_len)`, so longer
/// hypotheses are not rewarded.
pub fn length_adaptive_average_lagging(delays: &[f64], source_len: f64, ref_len: usize, hyp_len: usize) -> Result<f64> {
    if ref_len == 0 {
        return Err(Error::argument("reference length must be positive"));
    }
    lagging(delays, source_len, ref_len.max(hyp_len))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Offsets {
    pub start_offset_s: f64,
    pub end_offset_s: f64,
}

/// Start offset is the first emission time. End offset is when serialized
/// playback of every emission finishes, minus the source duration.
pub fn offsets(trace: &DecisionTrace, source_duration_s: f64) -> Result<Offsets> {
    let first = trace
        .emissions
        .first()
        .ok_or_else(|| Error::EmptyOutput("trace has no emissions".into()))?;
    let mut playback_end = f64::NEG_INFINITY;
    for e in &trace.emissions {
        playback_end = playback_end.max(e.emit_time_s) + e.playback_duration_s;
    }
    Ok(Offsets {
        start_offset_s: first.emit_time_s,
        end_offset_s: playback_end - source_duration_s,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceLatency {
    pub id: String,
    pub al: f64,
    pub laal: f64,
    /// `None` when the instance produced no emissions.
    pub start_offset_s: Option<f64>,
    pub end_offset_s: Option<f64>,
}

impl InstanceLatency {
    pub fn from_trace(id: &str, trace: &DecisionTrace, ref_len: usize, unit: LatencyUnit) -> Result<Self> {
        let (delays, source_len) = unit.delays(trace);
        let al = average_lagging(&delays, source_len, ref_len)?;
        let laal = length_adaptive_average_lagging(&delays, source_len, ref_len, delays.len())?;
        let off = match offsets(trace, trace.source_duration_s) {
            Ok(o) => Some(o),
            Err(Error::EmptyOutput(_)) => None,
            Err(e) => return Err(e),
        };
        Ok(InstanceLatency {
            id: id.to_string(),
            al,
            laal,
            start_offset_s: off.map(|o| o.start_offset_s),
            end_offset_s: off.map(|o| o.end_offset_s),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub per_instance: Vec<InstanceLatency>,
    pub al: f64,
    pub laal: f64,
    pub start_offset_s: f64,
    pub end_offset_s: f64,
    /// Instances left out of the offset means for lack of emissions.
    pub offset_warnings: usize,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

impl LatencyReport {
    /// Unweighted means over instances, summed in the given order.
    pub fn aggregate(per_instance: Vec<InstanceLatency>) -> Self {
        let al = mean(per_instance.iter().map(|r| r.al));
        let laal = mean(per_instance.iter().map(|r| r.laal));
        let start_offset_s = mean(per_instance.iter().filter_map(|r| r.start_offset_s));
        let end_offset_s = mean(per_instance.iter().filter_map(|r| r.end_offset_s));
        let offset_warnings = per_instance.iter().filter(|r| r.start_offset_s.is_none()).count();
        LatencyReport {
            per_instance,
            al,
            laal,
            start_offset_s,
            end_offset_s,
            offset_warnings,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::Emission;

    fn trace_with(emissions: &[(f64, f64)]) -> DecisionTrace {
        DecisionTrace {
            emissions: emissions
                .iter()
                .map(|&(t, d)| Emission {
                    emit_time_s: t,
                    units: 1,
                    playback_duration_s: d,
                })
                .collect(),
            ..DecisionTrace::default()
        }
    }

    #[test]
    fn al_examples() {
        assert_eq!(average_lagging(&[4.0; 4], 4.0, 4).unwrap(), 4.0);
        assert_eq!(average_lagging(&[1.0, 2.0, 3.0, 4.0], 4.0, 4).unwrap(), 1.0);
        assert_eq!(average_lagging(&[2.0, 3.0, 4.0, 5.0, 6.0, 6.0], 6.0, 6).unwrap(), 2.0);
    }

    #[test]
    fn laal_examples() {
        let d = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(average_lagging(&d, 4.0, 2).unwrap(), -0.5);
        assert_eq!(length_adaptive_average_lagging(&d, 4.0, 2, 4).unwrap(), 1.0);
        assert_eq!(length_adaptive_average_lagging(&d, 4.0, 4, 4).unwrap(), average_lagging(&d, 4.0, 4).unwrap());
        assert_eq!(length_adaptive_average_lagging(&[3.5; 3], 3.5, 1, 9).unwrap(), 3.5);
    }

    #[test]
    fn tau_falls_back_to_all_delays() {
        assert_eq!(average_lagging(&[1.0, 2.0], 4.0, 2).unwrap(), (1.0 + 0.0) / 2.0);
    }

    #[test]
    fn tau_tolerates_rounding() {
        let x = 0.1 + 0.2;
        assert_eq!(average_lagging(&[0.3, 0.3], x, 2).unwrap(), 0.3);
    }

    #[test]
    fn al_errors() {
        assert!(matches!(average_lagging(&[], 4.0, 2), Err(Error::Argument(_))));
        assert!(matches!(average_lagging(&[2.0, 1.0], 4.0, 2), Err(Error::Domain(_))));
        assert!(matches!(average_lagging(&[5.0], 4.0, 2), Err(Error::Domain(_))));
        assert!(matches!(average_lagging(&[1.0], 4.0, 0), Err(Error::Argument(_))));
    }

    #[test]
    fn offset_examples() {
        let o = offsets(&trace_with(&[(4.0, 1.5)]), 4.0).unwrap();
        assert_eq!(o.start_offset_s, 4.0);
        assert_eq!(o.end_offset_s, 1.5);
        assert_eq!(offsets(&trace_with(&[(2.0, 1.0), (4.0, 1.0)]), 4.0).unwrap().end_offset_s, 1.0);
        assert_eq!(offsets(&trace_with(&[(2.0, 3.0), (3.0, 1.0)]), 4.0).unwrap().end_offset_s, 2.0);
        assert_eq!(offsets(&trace_with(&[(4.0, 0.0)]), 4.0).unwrap().end_offset_s, 0.0);
        assert!(matches!(offsets(&trace_with(&[]), 4.0), Err(Error::EmptyOutput(_))));
    }

    #[test]
    fn aggregate_skips_missing_offsets() {
        let rows = vec![
            InstanceLatency {
                id: "a".into(),
                al: 1.0,
                laal: 2.0,
                start_offset_s: Some(1.0),
                end_offset_s: Some(0.5),
            },
            InstanceLatency {
                id: "b".into(),
                al: 3.0,
                laal: 4.0,
                start_offset_s: None,
                end_offset_s: None,
            },
        ];
        let r = LatencyReport::aggregate(rows);
        assert_eq!((r.al, r.laal, r.start_offset_s, r.end_offset_s), (2.0, 3.0, 1.0, 0.5));
        assert_eq!(r.offset_warnings, 1);
    }
}
