use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::scenario::MetricsReport;
use crate::error::{Error, Result};

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

pub fn report_json(report: &MetricsReport) -> Result<String> {
    Ok(serde_json::to_string_pretty(report)? + "\n")
}

pub fn report_csv(report: &MetricsReport) -> String {
    let mut s = String::from("scenario,clip,kind,episodes,successes,sr,mpjpe_mm,mpjve_mm_per_frame\n");
    for c in &report.per_clip {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{:.4},{},{}",
            report.scenario,
            c.clip,
            c.kind,
            c.episodes,
            c.successes,
            c.sr,
            opt(c.mpjpe_mm),
            opt(c.mpjve_mm_per_frame)
        );
    }
    let _ = writeln!(
        s,
        "{},all,all,{},{},{:.4},{},{}",
        report.scenario,
        report.episodes,
        report.successes,
        report.sr,
        opt(report.mpjpe_mm),
        opt(report.mpjve_mm_per_frame)
    );
    s
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `<stem>.json` and `<stem>.csv` under `dir`.
pub fn write_report(report: &MetricsReport, dir: &Path, stem: &str) -> Result<()> {
    write_text(&dir.join(format!("{stem}.json")), &report_json(report)?)?;
    write_text(&dir.join(format!("{stem}.csv")), &report_csv(report))
}

/// Success rates of several methods across scenarios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub methods: Vec<String>,
    pub scenarios: Vec<String>,
    /// `sr[method][scenario]` in percent.
    pub sr: Vec<Vec<f64>>,
    pub mpjpe_mm: Vec<Vec<Option<f64>>>,
}

impl Comparison {
    pub fn new(scenarios: Vec<String>) -> Self {
        Comparison {
            methods: Vec::new(),
            scenarios,
            sr: Vec::new(),
            mpjpe_mm: Vec::new(),
        }
    }

    pub fn add(&mut self, method: &str, reports: &[MetricsReport]) -> Result<()> {
        let mut sr = Vec::new();
        let mut mp = Vec::new();
        for s in &self.scenarios {
            let r = reports
                .iter()
                .find(|r| &r.scenario == s)
                .ok_or_else(|| Error::config(format!("method {method} has no report for {s}")))?;
            sr.push(r.sr);
            mp.push(r.mpjpe_mm);
        }
        self.methods.push(method.to_string());
        self.sr.push(sr);
        self.mpjpe_mm.push(mp);
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("method");
        for sc in &self.scenarios {
            let _ = write!(s, ",{sc}_sr,{sc}_mpjpe_mm");
        }
        s.push('\n');
        for (m, name) in self.methods.iter().enumerate() {
            s.push_str(name);
            for k in 0..self.scenarios.len() {
                let _ = write!(s, ",{:.4},{}", self.sr[m][k], opt(self.mpjpe_mm[m][k]));
            }
            s.push('\n');
        }
        s
    }

    /// Grouped bar chart of success rates.
    pub fn to_svg(&self) -> String {
        const W: f64 = 720.0;
        const H: f64 = 360.0;
        const LEFT: f64 = 50.0;
        const BOTTOM: f64 = 60.0;
        const TOP: f64 = 30.0;
        let colors = ["#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860"];
        let plot_w = W - LEFT - 20.0;
        let plot_h = H - BOTTOM - TOP;
        let groups = self.scenarios.len().max(1) as f64;
        let group_w = plot_w / groups;
        let bar_w = group_w * 0.8 / self.methods.len().max(1) as f64;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        for tick in 0..=5 {
            let v = tick as f64 * 20.0;
            let y = TOP + plot_h * (1.0 - v / 100.0);
            let _ = writeln!(
                s,
                r##"<line x1="{LEFT}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{v}</text>"##,
                W - 20.0,
                LEFT - 4.0,
                y + 4.0
            );
        }
        for (k, sc) in self.scenarios.iter().enumerate() {
            let gx = LEFT + k as f64 * group_w + group_w * 0.1;
            for m in 0..self.methods.len() {
                let v = self.sr[m][k].clamp(0.0, 100.0);
                let h = plot_h * v / 100.0;
                let _ = writeln!(
                    s,
                    r#"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{h:.1}" fill="{}"/>"#,
                    gx + m as f64 * bar_w,
                    TOP + plot_h - h,
                    bar_w * 0.95,
                    colors[m % colors.len()]
                );
            }
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
                gx + group_w * 0.4,
                H - BOTTOM + 16.0,
                sc
            );
        }
        for (m, name) in self.methods.iter().enumerate() {
            let x = LEFT + m as f64 * 150.0;
            let y = H - 18.0;
            let _ = writeln!(
                s,
                r#"<rect x="{x:.1}" y="{:.1}" width="10" height="10" fill="{}"/><text x="{:.1}" y="{y:.1}">{}</text>"#,
                y - 9.0,
                colors[m % colors.len()],
                x + 14.0,
                name
            );
        }
        let _ = writeln!(s, r#"<text x="{LEFT}" y="18">success rate (%)</text>"#);
        s.push_str("</svg>\n");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(name: &str, sr: f64) -> MetricsReport {
        MetricsReport {
            scenario: name.into(),
            episodes: 2,
            successes: 1,
            sr,
            mpjpe_mm: Some(12.5),
            mpjve_mm_per_frame: None,
            seeds: 1,
            per_clip: Vec::new(),
        }
    }

    #[test]
    fn comparison_outputs() {
        let mut c = Comparison::new(vec!["a".into(), "b".into()]);
        c.add("m1", &[report("a", 50.0), report("b", 100.0)]).unwrap();
        assert!(c.add("m2", &[report("a", 10.0)]).is_err());
        let csv = c.to_csv();
        assert!(csv.starts_with("method,a_sr,a_mpjpe_mm,b_sr,b_mpjpe_mm\nm1,50.0000,12.500000,100.0000"));
        let svg = c.to_svg();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn csv_has_summary_row() {
        let csv = report_csv(&report("terrains", 50.0));
        assert!(csv.lines().last().unwrap().starts_with("terrains,all,all,2,1,50.0000"));
    }
}
