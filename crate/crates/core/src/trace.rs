//! Trace records, candidate sets and NDJSON ingestion.
//!
//! A trace carries precomputed per-position (autoregressive) or
//! per-timestep (diffusion) statistics of one sample under one model, so
//! the attack and test code never touches model weights. Both the built-in
//! toy models and external exporters emit the same line-oriented schema.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest diffusion timestep accepted in a trace grid.
pub const MAX_TIMESTEP: u32 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Arm,
    Dm,
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Arm => "arm",
            Modality::Dm => "dm",
        })
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "arm" => Ok(Modality::Arm),
            "dm" => Ok(Modality::Dm),
            other => Err(Error::InvalidConfig(format!("unknown modality `{other}`"))),
        }
    }
}

/// Statistics of one token position. Log-probabilities are natural logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmStep {
    /// log p(true token | prefix, condition)
    #[serde(rename = "lp")]
    pub logp_true: f64,
    /// Same under the null condition, when the model supports it.
    #[serde(rename = "lpu")]
    pub logp_true_uncond: Option<f64>,
    /// Entropy of the predictive distribution, nats.
    #[serde(rename = "H")]
    pub entropy: f64,
    /// Mean of the log-probabilities over the whole vocabulary.
    #[serde(rename = "mu")]
    pub mu_vocab: f64,
    /// Standard deviation of the log-probabilities over the whole vocabulary.
    #[serde(rename = "sd")]
    pub sigma_vocab: f64,
    #[serde(rename = "zt")]
    pub logit_true: f64,
    #[serde(rename = "zo")]
    pub max_other_logit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmTrace {
    #[serde(rename = "id")]
    pub sample_id: String,
    #[serde(rename = "cond")]
    pub condition_id: Option<String>,
    pub zlib_size: u64,
    pub steps: Vec<ArmStep>,
    /// Per-position losses of the sample concatenated with itself.
    #[serde(rename = "rep_losses")]
    pub repeated_losses: Option<Vec<f64>>,
}

impl ArmTrace {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str| Error::SchemaViolation {
            sample_id: self.sample_id.clone(),
            field: field.to_string(),
        };
        if self.sample_id.is_empty() {
            return Err(bad("id"));
        }
        if self.steps.is_empty() {
            return Err(bad("steps"));
        }
        if self.zlib_size < 1 {
            return Err(bad("zlib_size"));
        }
        for step in &self.steps {
            if !(step.logp_true.is_finite() && step.logp_true <= 0.0) {
                return Err(bad("lp"));
            }
            if let Some(lpu) = step.logp_true_uncond {
                if !(lpu.is_finite() && lpu <= 0.0) {
                    return Err(bad("lpu"));
                }
            }
            if !(step.entropy.is_finite() && step.entropy >= 0.0) {
                return Err(bad("H"));
            }
            if !step.mu_vocab.is_finite() {
                return Err(bad("mu"));
            }
            if !(step.sigma_vocab.is_finite() && step.sigma_vocab > 0.0) {
                return Err(bad("sd"));
            }
            if !step.logit_true.is_finite() {
                return Err(bad("zt"));
            }
            if !step.max_other_logit.is_finite() {
                return Err(bad("zo"));
            }
        }
        if let Some(rep) = &self.repeated_losses {
            if rep.len() != 2 * self.steps.len() {
                return Err(bad("rep_losses"));
            }
            if rep.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
                return Err(bad("rep_losses"));
            }
        }
        Ok(())
    }

    pub fn has_unconditional(&self) -> bool {
        self.steps.iter().all(|s| s.logp_true_uncond.is_some())
    }
}

/// Per-timestep diffusion statistics of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct DmTrace {
    pub sample_id: String,
    /// Timestep -> losses of the individual noise draws.
    pub grid_losses: BTreeMap<u32, Vec<f64>>,
    pub pia_error_clean: f64,
    pub pia_error_noised: f64,
    pub pian_error_clean: f64,
    pub pian_error_noised: f64,
    pub grad_mask_error: f64,
    pub noiseopt_final_error: f64,
    pub noiseopt_delta_norm: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DmWire {
    id: String,
    grid: BTreeMap<u32, Vec<f64>>,
    pia: [f64; 2],
    pian: [f64; 2],
    gmask: f64,
    nopt: [f64; 2],
}

impl Serialize for DmTrace {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        DmWire {
            id: self.sample_id.clone(),
            grid: self.grid_losses.clone(),
            pia: [self.pia_error_clean, self.pia_error_noised],
            pian: [self.pian_error_clean, self.pian_error_noised],
            gmask: self.grad_mask_error,
            nopt: [self.noiseopt_final_error, self.noiseopt_delta_norm],
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for DmTrace {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let w = DmWire::deserialize(deserializer)?;
        Ok(DmTrace {
            sample_id: w.id,
            grid_losses: w.grid,
            pia_error_clean: w.pia[0],
            pia_error_noised: w.pia[1],
            pian_error_clean: w.pian[0],
            pian_error_noised: w.pian[1],
            grad_mask_error: w.gmask,
            noiseopt_final_error: w.nopt[0],
            noiseopt_delta_norm: w.nopt[1],
        })
    }
}

impl DmTrace {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str| Error::SchemaViolation {
            sample_id: self.sample_id.clone(),
            field: field.to_string(),
        };
        let nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if self.sample_id.is_empty() {
            return Err(bad("id"));
        }
        if self.grid_losses.is_empty() {
            return Err(bad("grid"));
        }
        for (t, losses) in &self.grid_losses {
            if *t > MAX_TIMESTEP || losses.is_empty() || !losses.iter().all(|l| nonneg(*l)) {
                return Err(bad("grid"));
            }
        }
        if !(nonneg(self.pia_error_clean) && nonneg(self.pia_error_noised)) {
            return Err(bad("pia"));
        }
        if !(nonneg(self.pian_error_clean) && nonneg(self.pian_error_noised)) {
            return Err(bad("pian"));
        }
        if !nonneg(self.grad_mask_error) {
            return Err(bad("gmask"));
        }
        if !(nonneg(self.noiseopt_final_error) && nonneg(self.noiseopt_delta_norm)) {
            return Err(bad("nopt"));
        }
        Ok(())
    }

    /// Mean loss over the noise draws at `t`.
    pub fn mean_loss(&self, t: u32) -> Option<f64> {
        self.grid_losses
            .get(&t)
            .map(|l| l.iter().sum::<f64>() / l.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Traces {
    Arm(Vec<ArmTrace>),
    Dm(Vec<DmTrace>),
}

impl Traces {
    pub fn len(&self) -> usize {
        match self {
            Traces::Arm(t) => t.len(),
            Traces::Dm(t) => t.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn modality(&self) -> Modality {
        match self {
            Traces::Arm(_) => Modality::Arm,
            Traces::Dm(_) => Modality::Dm,
        }
    }

    pub fn ids(&self) -> Vec<&str> {
        match self {
            Traces::Arm(t) => t.iter().map(|t| t.sample_id.as_str()).collect(),
            Traces::Dm(t) => t.iter().map(|t| t.sample_id.as_str()).collect(),
        }
    }
}

fn parse_line<T>(line: &str, line_no: usize) -> Result<T>
where
    T: for<'de> Deserialize<'de>,
{
    let value: serde_json::Value = serde_json::from_str(line).map_err(|e| Error::MalformedLine {
        line_no,
        message: e.to_string(),
    })?;
    let sample_id = value
        .get("id")
        .and_then(|v| v.as_str())
        .map(str::to_string)
        .unwrap_or_else(|| format!("<line {line_no}>"));
    serde_json::from_value(value).map_err(|e| Error::SchemaViolation {
        sample_id,
        field: e.to_string(),
    })
}

/// Parses an NDJSON trace stream, validating every record.
///
/// Blank lines are skipped. Line numbers in errors are 1-based.
pub fn parse_trace_stream<R: BufRead>(reader: R, modality: Modality) -> Result<Traces> {
    let mut seen = HashSet::new();
    let mut arm = Vec::new();
    let mut dm = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::MalformedLine {
            line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let id = match modality {
            Modality::Arm => {
                let trace: ArmTrace = parse_line(&line, line_no)?;
                trace.validate()?;
                let id = trace.sample_id.clone();
                arm.push(trace);
                id
            }
            Modality::Dm => {
                let trace: DmTrace = parse_line(&line, line_no)?;
                trace.validate()?;
                let id = trace.sample_id.clone();
                dm.push(trace);
                id
            }
        };
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateSample(id));
        }
    }
    Ok(match modality {
        Modality::Arm => Traces::Arm(arm),
        Modality::Dm => Traces::Dm(dm),
    })
}

/// Writes one compact JSON object per line, LF terminated.
pub fn write_trace_stream<W: Write, T: Serialize>(mut writer: W, traces: &[T]) -> std::io::Result<()> {
    for trace in traces {
        serde_json::to_writer(&mut writer, trace)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

/// The suspect set and the reference set of an audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub suspects: Vec<String>,
    pub references: Vec<String>,
    pub modality: Modality,
}

pub fn make_candidate_set(
    suspect_ids: Vec<String>,
    reference_ids: Vec<String>,
    modality: Modality,
) -> Result<CandidateSet> {
    if suspect_ids.is_empty() || reference_ids.is_empty() {
        return Err(Error::EmptySet);
    }
    let mut seen = HashSet::new();
    for id in suspect_ids.iter() {
        if !seen.insert(id.as_str()) {
            return Err(Error::DuplicateSample(id.clone()));
        }
    }
    let mut seen_ref = HashSet::new();
    let mut overlap = Vec::new();
    for id in reference_ids.iter() {
        if !seen_ref.insert(id.as_str()) {
            return Err(Error::DuplicateSample(id.clone()));
        }
        if seen.contains(id.as_str()) {
            overlap.push(id.clone());
        }
    }
    if !overlap.is_empty() {
        return Err(Error::Overlap(overlap));
    }
    Ok(CandidateSet {
        suspects: suspect_ids,
        references: reference_ids,
        modality,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const ARM_LINE: &str = r#"{"id":"s1","cond":"rain","zlib_size":12,"steps":[{"lp":-0.5,"lpu":-0.9,"H":1.2,"mu":-3.4,"sd":0.8,"zt":2.0,"zo":1.5},{"lp":-1.25,"lpu":null,"H":0.3,"mu":-3.0,"sd":1.1,"zt":0.5,"zo":0.75},{"lp":-0.0,"lpu":-0.1,"H":0.0,"mu":-5.0,"sd":2.0,"zt":9.0,"zo":1.0}],"rep_losses":null}"#;
    const DM_LINE: &str = r#"{"id":"d1","grid":{"0":[8.1,7.9],"100":[1.5,1.25]},"pia":[8.0,2.0],"pian":[7.5,2.5],"gmask":0.4,"nopt":[1.0,0.25]}"#;

    #[test]
    fn empty_stream_is_empty() {
        let t = parse_trace_stream("".as_bytes(), Modality::Arm).unwrap();
        assert!(t.is_empty());
    }

    #[test]
    fn one_arm_line() {
        let t = parse_trace_stream(ARM_LINE.as_bytes(), Modality::Arm).unwrap();
        let Traces::Arm(t) = t else { panic!() };
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].steps.len(), 3);
        assert_eq!(t[0].condition_id.as_deref(), Some("rain"));
        assert_eq!(t[0].steps[1].logp_true_uncond, None);
        assert!(!t[0].has_unconditional());
    }

    #[test]
    fn zero_sigma_is_schema_violation() {
        let line = ARM_LINE.replacen("\"sd\":0.8", "\"sd\":0", 1);
        let err = parse_trace_stream(line.as_bytes(), Modality::Arm).unwrap_err();
        assert_eq!(
            err,
            Error::SchemaViolation { sample_id: "s1".into(), field: "sd".into() }
        );
    }

    #[test]
    fn positive_logp_rejected() {
        let line = ARM_LINE.replacen("\"lp\":-0.5", "\"lp\":0.5", 1);
        assert!(matches!(
            parse_trace_stream(line.as_bytes(), Modality::Arm),
            Err(Error::SchemaViolation { .. })
        ));
    }

    #[test]
    fn repeated_losses_length_checked() {
        let line = ARM_LINE.replace("\"rep_losses\":null", "\"rep_losses\":[1.0,2.0]");
        assert!(matches!(
            parse_trace_stream(line.as_bytes(), Modality::Arm),
            Err(Error::SchemaViolation { field, .. }) if field == "rep_losses"
        ));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let input = format!("{ARM_LINE}\n{{not json\n");
        assert!(matches!(
            parse_trace_stream(input.as_bytes(), Modality::Arm),
            Err(Error::MalformedLine { line_no: 2, .. })
        ));
    }

    #[test]
    fn unknown_field_rejected() {
        let line = ARM_LINE.replacen("\"zlib_size\"", "\"extra\":1,\"zlib_size\"", 1);
        assert!(matches!(
            parse_trace_stream(line.as_bytes(), Modality::Arm),
            Err(Error::SchemaViolation { .. })
        ));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let input = format!("{ARM_LINE}\n{ARM_LINE}\n");
        assert_eq!(
            parse_trace_stream(input.as_bytes(), Modality::Arm).unwrap_err(),
            Error::DuplicateSample("s1".into())
        );
    }

    #[test]
    fn dm_line_roundtrip() {
        let t = parse_trace_stream(DM_LINE.as_bytes(), Modality::Dm).unwrap();
        let Traces::Dm(t) = t else { panic!() };
        assert_eq!(t[0].mean_loss(100), Some(1.375));
        assert_eq!(t[0].pia_error_noised, 2.0);
        let mut out = Vec::new();
        write_trace_stream(&mut out, &t).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), format!("{DM_LINE}\n"));
    }

    #[test]
    fn dm_timestep_out_of_range() {
        let line = DM_LINE.replace("\"100\"", "\"1001\"");
        assert!(matches!(
            parse_trace_stream(line.as_bytes(), Modality::Dm),
            Err(Error::SchemaViolation { field, .. }) if field == "grid"
        ));
    }

    #[test]
    fn dm_negative_loss_rejected() {
        let line = DM_LINE.replace("1.25", "-1.25");
        assert!(parse_trace_stream(line.as_bytes(), Modality::Dm).is_err());
    }

    #[test]
    fn candidate_sets() {
        let ids = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        let set = make_candidate_set(ids(&["a", "b"]), ids(&["c", "d"]), Modality::Arm).unwrap();
        assert_eq!(set.suspects, ids(&["a", "b"]));
        assert_eq!(
            make_candidate_set(ids(&["a"]), ids(&["a"]), Modality::Dm).unwrap_err(),
            Error::Overlap(ids(&["a"]))
        );
        assert_eq!(
            make_candidate_set(vec![], ids(&["c"]), Modality::Dm).unwrap_err(),
            Error::EmptySet
        );
    }
}
