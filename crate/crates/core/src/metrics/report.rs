//! Line-oriented JSON verification reports.

use std::io::{BufRead, Write};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{is_success, WatermarkKind, BER_MAX, PSNR_MIN_DB};
use crate::error::{ensure, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    pub psnr_min: f64,
    pub ber_max: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            psnr_min: PSNR_MIN_DB,
            ber_max: BER_MAX,
        }
    }
}

/// Convention string written into every summary.
pub const CHANNEL_CONVENTION: &str = "per-channel mean";

/// Finite values as JSON numbers; infinities and NaN as strings.
mod float_text {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(v),
            Raw::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("not a number: {other}"))),
            },
        }
    }
}

mod opt_float_text {
    use super::*;

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
        match v {
            Some(x) => super::float_text::serialize(x, s),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<f64>, D::Error> {
        #[derive(Deserialize)]
        struct Wrap(#[serde(with = "super::float_text")] f64);
        Ok(Option::<Wrap>::deserialize(d)?.map(|w| w.0))
    }
}

/// One (sample, attack) extraction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub index: usize,
    pub attack: String,
    /// Extracted watermark vs `w`.
    #[serde(with = "float_text")]
    pub psnr_w: f64,
    pub ber: f64,
    pub success: bool,
    /// Marked image vs host output (unattacked).
    #[serde(default, with = "opt_float_text", skip_serializing_if = "Option::is_none")]
    pub psnr_marked: Option<f64>,
    #[serde(default, with = "opt_float_text", skip_serializing_if = "Option::is_none")]
    pub ssim_marked: Option<f64>,
    #[serde(default, with = "opt_float_text", skip_serializing_if = "Option::is_none")]
    pub ms_ssim_marked: Option<f64>,
    #[serde(default, with = "opt_float_text", skip_serializing_if = "Option::is_none")]
    pub vif_marked: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SummaryRecord {
    pub attack: String,
    pub watermark_kind: WatermarkKind,
    pub samples: usize,
    pub successes: usize,
    pub sr: f64,
    #[serde(with = "float_text")]
    pub mean_psnr_w: f64,
    pub mean_ber: f64,
    pub thresholds: Thresholds,
    pub channel_convention: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum ReportRecord {
    Sample(SampleRecord),
    Summary(SummaryRecord),
}

/// Per-sample results for one attack-grid cell.
#[derive(Clone, Debug, PartialEq)]
pub struct VerificationReport {
    pub attack: String,
    pub watermark_kind: WatermarkKind,
    pub thresholds: Thresholds,
    pub samples: Vec<SampleRecord>,
}

impl VerificationReport {
    pub fn new(attack: impl Into<String>, watermark_kind: WatermarkKind, thresholds: Thresholds) -> Self {
        VerificationReport {
            attack: attack.into(),
            watermark_kind,
            thresholds,
            samples: Vec::new(),
        }
    }

    /// Adds a sample; `success` is derived from the thresholds.
    pub fn push(&mut self, index: usize, psnr_w: f64, ber: f64) -> &mut SampleRecord {
        let value = match self.watermark_kind {
            WatermarkKind::Color => psnr_w,
            WatermarkKind::Binary => ber,
        };
        self.samples.push(SampleRecord {
            index,
            attack: self.attack.clone(),
            psnr_w,
            ber,
            success: is_success(self.watermark_kind, value, &self.thresholds),
            psnr_marked: None,
            ssim_marked: None,
            ms_ssim_marked: None,
            vif_marked: None,
        });
        self.samples.last_mut().unwrap()
    }

    pub fn successes(&self) -> usize {
        self.samples.iter().filter(|s| s.success).count()
    }

    pub fn sr(&self) -> Result<f64> {
        ensure(!self.samples.is_empty(), || Error::InsufficientData("report has no samples".into()))?;
        Ok(self.successes() as f64 / self.samples.len() as f64)
    }

    pub fn summary(&self) -> Result<SummaryRecord> {
        let n = self.samples.len() as f64;
        Ok(SummaryRecord {
            attack: self.attack.clone(),
            watermark_kind: self.watermark_kind,
            samples: self.samples.len(),
            successes: self.successes(),
            sr: self.sr()?,
            mean_psnr_w: self.samples.iter().map(|s| s.psnr_w).sum::<f64>() / n,
            mean_ber: self.samples.iter().map(|s| s.ber).sum::<f64>() / n,
            thresholds: self.thresholds,
            channel_convention: CHANNEL_CONVENTION.to_string(),
        })
    }

    /// One sample record per line, then the summary record.
    pub fn write_jsonl(&self, mut out: impl Write) -> Result<()> {
        let io = |e: std::io::Error| Error::io("<report>", e);
        for s in &self.samples {
            serde_json::to_writer(&mut out, &ReportRecord::Sample(s.clone()))?;
            out.write_all(b"\n").map_err(io)?;
        }
        serde_json::to_writer(&mut out, &ReportRecord::Summary(self.summary()?))?;
        out.write_all(b"\n").map_err(io)?;
        Ok(())
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf)?;
        Ok(String::from_utf8(buf).expect("JSON is UTF-8"))
    }
}

/// Parses every record of a JSONL report stream.
pub fn read_report_jsonl(input: impl BufRead) -> Result<Vec<ReportRecord>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line.map_err(|e| Error::io("<report>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}
