//! Report documents, tables, charts and the bundled reference devices.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::perf::EnergyReport;

pub const SCHEMA: &str = "v1";
pub const TOOL: &str = "cgla-sim";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    /// Input label → sha256 of its bytes.
    pub inputs: BTreeMap<String, String>,
}

impl Provenance {
    pub fn new() -> Self {
        Self {
            tool: TOOL.into(),
            version: VERSION.into(),
            inputs: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, label: impl Into<String>, bytes: &[u8]) {
        self.inputs.insert(label.into(), sha256_hex(bytes));
    }
}

impl Default for Provenance {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema: String,
    pub command: String,
    pub provenance: Provenance,
    pub body: Value,
}

impl Report {
    pub fn new(command: &str, provenance: Provenance, body: Value) -> Self {
        Self {
            schema: SCHEMA.into(),
            command: command.into(),
            provenance,
            body,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(headers: impl IntoIterator<Item = S>) -> Self {
        Self {
            headers: headers.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push<S: Into<String>>(&mut self, row: impl IntoIterator<Item = S>) {
        self.rows.push(row.into_iter().map(Into::into).collect());
    }

    /// `provenance` lines go first as `#` comments.
    pub fn to_csv(&self, provenance: Option<&Provenance>) -> String {
        let mut out = String::new();
        if let Some(p) = provenance {
            let _ = writeln!(out, "# {} {} schema {SCHEMA}", p.tool, p.version);
            for (k, v) in &p.inputs {
                let _ = writeln!(out, "# sha256 {k} {v}");
            }
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.headers).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        out + &String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
    }

    /// Aligned text; columns after the first are right-aligned.
    pub fn to_text(&self) -> String {
        let n = self.headers.len();
        let mut width = vec![0; n];
        for r in std::iter::once(&self.headers).chain(&self.rows) {
            for (i, c) in r.iter().enumerate().take(n) {
                width[i] = width[i].max(c.chars().count());
            }
        }
        let line = |r: &[String]| {
            let cells: Vec<String> = r
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    if i == 0 {
                        format!("{c:<w$}", w = width[i])
                    } else {
                        format!("{c:>w$}", w = width[i])
                    }
                })
                .collect();
            cells.join("  ").trim_end().to_string() + "\n"
        };
        let mut out = line(&self.headers);
        out += &(width
            .iter()
            .map(|w| "-".repeat(*w))
            .collect::<Vec<_>>()
            .join("  ")
            + "\n");
        for r in &self.rows {
            out += &line(r);
        }
        out
    }
}

/// Horizontal bars, one per label, scaled to the largest value.
pub fn bar_chart_svg(title: &str, bars: &[(String, f64)], unit: &str) -> String {
    let (w, row, left, top) = (640.0, 22.0, 180.0, 36.0);
    let h = top + row * bars.len() as f64 + 12.0;
    let max = bars.iter().map(|b| b.1).fold(0.0, f64::max);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <text x=\"8\" y=\"20\" font-size=\"14\">{}</text>\n",
        escape(title)
    );
    for (i, (label, v)) in bars.iter().enumerate() {
        let y = top + row * i as f64;
        let len = if max > 0.0 {
            (w - left - 90.0) * v / max
        } else {
            0.0
        };
        let _ = write!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>\n\
             <rect x=\"{left}\" y=\"{:.1}\" width=\"{len:.1}\" height=\"{:.1}\" fill=\"#4a7ab0\"/>\n\
             <text x=\"{:.1}\" y=\"{:.1}\">{v:.3} {}</text>\n",
            left - 6.0,
            y + 14.0,
            escape(label),
            y + 3.0,
            row - 6.0,
            left + len + 4.0,
            y + 14.0,
            escape(unit)
        );
    }
    s + "</svg>\n"
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferencePoint {
    pub model: String,
    pub tokens: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pdp_j: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edp_js: Option<f64>,
}

impl ReferencePoint {
    /// Fills in the missing metrics from whichever one is given and a flat
    /// device power. Reported values win over derived ones.
    pub fn energy(&self, power_w: Option<f64>) -> Option<EnergyReport> {
        let latency = match (self.latency_s, power_w) {
            (Some(l), _) => l,
            (None, Some(p)) if p > 0.0 => match (self.pdp_j, self.edp_js) {
                (Some(pdp), _) => pdp / p,
                (None, Some(edp)) => (edp / p).sqrt(),
                _ => return None,
            },
            (None, _) => match (self.pdp_j, self.edp_js) {
                (Some(pdp), Some(edp)) if pdp > 0.0 => edp / pdp,
                _ => return None,
            },
        };
        let power = match (power_w, self.pdp_j, self.edp_js) {
            (Some(p), _, _) => p,
            (None, Some(pdp), _) if latency > 0.0 => pdp / latency,
            (None, None, Some(edp)) if latency > 0.0 => edp / (latency * latency),
            _ => return None,
        };
        let mut e = EnergyReport::new(latency, power);
        if let Some(p) = self.pdp_j {
            e.pdp_j = p;
        }
        if let Some(v) = self.edp_js {
            e.edp_js = v;
        }
        Some(e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceDevice {
    pub name: String,
    pub power_w: Option<f64>,
    pub process_nm: u32,
    pub points: Vec<ReferencePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceData {
    #[serde(default)]
    pub note: String,
    pub devices: Vec<ReferenceDevice>,
}

impl ReferenceData {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config("devices", e.to_string()))
    }

    pub fn bundled() -> Self {
        Self::from_json(crate::profiles::REFERENCE_DEVICES).expect("bundled reference data parses")
    }

    /// `(device, point, metrics)` for every point of `model` at `tokens`.
    pub fn lookup<'a>(
        &'a self,
        model: &str,
        tokens: &str,
    ) -> Vec<(
        &'a ReferenceDevice,
        &'a ReferencePoint,
        Option<EnergyReport>,
    )> {
        self.devices
            .iter()
            .flat_map(|d| d.points.iter().map(move |p| (d, p)))
            .filter(|(_, p)| p.model == model && p.tokens == tokens)
            .map(|(d, p)| (d, p, p.energy(d.power_w)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jetson_edp() {
        let data = ReferenceData::bundled();
        let hits = data.lookup("qwen3-1.7b-q8_0", "32:16");
        let (_, _, e) = hits
            .iter()
            .find(|h| h.0.name.starts_with("Jetson"))
            .unwrap();
        let e = e.unwrap();
        assert!((e.edp_js - 216.6).abs() / 216.6 < 5e-4);
    }

    #[test]
    fn reported_values_kept() {
        let p = ReferencePoint {
            model: "m".into(),
            tokens: "1:1".into(),
            latency_s: Some(14.7),
            pdp_j: None,
            edp_js: Some(413.6),
        };
        let e = p.energy(None).unwrap();
        assert_eq!(e.edp_js, 413.6);
        assert!((e.avg_power_w - 413.6 / 14.7 / 14.7).abs() < 1e-12);
    }

    #[test]
    fn csv_quotes_and_text_aligns() {
        let mut t = Table::new(["a", "bb"]);
        t.push(["x,y", "1"]);
        assert_eq!(t.to_csv(None), "a,bb\n\"x,y\",1\n");
        assert_eq!(t.to_text(), "a    bb\n---  --\nx,y   1\n");
    }

    #[test]
    fn svg_escapes() {
        let s = bar_chart_svg("a<b", &[("x&y".into(), 1.0)], "s");
        assert!(s.contains("a&lt;b") && s.contains("x&amp;y"));
    }
}
