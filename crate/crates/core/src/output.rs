//! Result files: CSV tables with `#` metadata lines, JSON reports and
//! plain SVG line plots. Every file carries the scenario hash and the
//! numeric settings used to produce it.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use crate::certificate::CertOutcome;
use crate::channel::ChannelState;
use crate::defense::TIE_TOL;
use crate::design::LyapunovDesign;
use crate::error::Result;
use crate::linalg::matrix_to_rows;
use crate::pipeline::{Analysis, Prepared};
use crate::sim::{DominanceRow, SimResult, CONTRACT_SLACK};
use crate::worst_case::{blocking_eps, BoundaryMode, BranchOutcome, WorstCaseResult};

/// Provenance stamped into every output.
#[derive(Debug, Clone)]
pub struct OutputMeta {
    pub command: String,
    pub scenario: String,
    pub sha256: String,
    pub seed: u64,
    pub boundary: BoundaryMode,
    pub strategy: Option<String>,
    pub design_source: String,
    pub strict_eps: f64,
}

impl OutputMeta {
    pub fn new(command: &str, prep: &Prepared, seed: u64, boundary: BoundaryMode, strategy: Option<&str>) -> Self {
        OutputMeta {
            command: command.to_string(),
            scenario: prep.scenario.name.clone(),
            sha256: prep.scenario.hash(),
            seed,
            boundary,
            strategy: strategy.map(str::to_string),
            design_source: prep.source.name().to_string(),
            strict_eps: blocking_eps(&prep.scenario.network()),
        }
    }

    fn pairs(&self) -> Vec<(&'static str, String)> {
        let mut v = vec![
            ("command", self.command.clone()),
            ("scenario", self.scenario.clone()),
            ("sha256", self.sha256.clone()),
            ("seed", self.seed.to_string()),
            ("boundary", self.boundary.to_string()),
            ("design", self.design_source.clone()),
            ("surplus_policy", "equal-share".into()),
            ("tie_tol", fmt_sig(TIE_TOL)),
            ("strict_eps", fmt_sig(self.strict_eps)),
            ("contract_slack", fmt_sig(CONTRACT_SLACK)),
        ];
        if let Some(s) = &self.strategy {
            v.push(("strategy", s.clone()));
        }
        v
    }

    pub fn comment_lines(&self) -> String {
        self.pairs().iter().map(|(k, v)| format!("# {k}={v}\n")).collect()
    }

    pub fn to_json(&self) -> Value {
        Value::Object(self.pairs().into_iter().map(|(k, v)| (k.to_string(), Value::String(v))).collect())
    }
}

/// Nine significant digits, shortest form.
pub fn fmt_sig(v: f64) -> String {
    if !v.is_finite() {
        return if v.is_nan() { "nan".into() } else if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let exp = v.abs().log10().floor() as i32;
    if (-5..=15).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        let s = format!("{v:.decimals$}");
        let s = if s.contains('.') { s.trim_end_matches('0').trim_end_matches('.').to_string() } else { s };
        if s == "-0" {
            "0".into()
        } else {
            s
        }
    } else {
        format!("{v:.8e}")
    }
}

fn join(vals: &[f64]) -> String {
    vals.iter().map(|v| fmt_sig(*v)).collect::<Vec<_>>().join(",")
}

fn bits(l: &ChannelState) -> String {
    l.bits().iter().map(|&b| if b { '1' } else { '0' }).collect()
}

pub fn write(dir: &Path, name: &str, content: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    fs::write(&path, content)?;
    Ok(path)
}

pub fn design_json(meta: &OutputMeta, design: &LyapunovDesign, prep: &Prepared) -> Value {
    json!({
        "meta": meta.to_json(),
        "alpha": design.alpha,
        "p": design.p.iter().map(|p| p.to_rows()).collect::<Vec<_>>(),
        "k": design.gains.iter().map(matrix_to_rows).collect::<Vec<_>>(),
        "checks": prep.report.checks.iter().map(|c| json!({
            "name": c.name, "margin": c.margin, "passed": c.passed
        })).collect::<Vec<_>>(),
    })
}

/// `mode,state,beta` for every mode and channel state.
pub fn beta_table_csv(meta: &OutputMeta, analysis: &Analysis) -> String {
    let mut s = meta.comment_lines();
    s.push_str("mode,state,beta\n");
    for (i, t) in analysis.tables.iter().enumerate() {
        for (l, b) in t.sorted() {
            let _ = writeln!(s, "{},{},{}", i + 1, bits(&l), fmt_sig(b));
        }
    }
    s
}

fn outcome_json(o: &BranchOutcome) -> Value {
    match o {
        BranchOutcome::Excluded => json!({"kind": "excluded"}),
        BranchOutcome::Floor(b) => json!({"kind": "floor", "beta": b}),
        BranchOutcome::Value { beta, state } => json!({"kind": "value", "beta": beta, "state": state.to_string()}),
    }
}

pub fn worst_case_json(w: &WorstCaseResult) -> Value {
    json!({
        "beta_bar": w.beta_bar,
        "beta_tilde": w.beta_tilde,
        "witness": w.witness(),
        "branches": w.branches.iter().map(|b| json!({
            "pattern": b.pattern.to_string(),
            "safe": b.safe.iter().map(|l| l.to_string()).collect::<Vec<_>>(),
            "beta_hat": b.beta_hat,
            "s_opt": b.s_opt.iter().map(|(l, v)| json!([l.to_string(), v])).collect::<Vec<_>>(),
            "entry": b.entry.as_ref().map(|t| json!({
                "below": t.level,
                "blocking": t.blocking.iter().map(|l| l.to_string()).collect::<Vec<_>>(),
                "witness": t.witness,
            })),
            "tests": b.tests.iter().map(|t| json!({
                "level": t.level,
                "candidate": t.candidate.as_ref().map(|l| l.to_string()),
                "blocking": t.blocking.iter().map(|l| l.to_string()).collect::<Vec<_>>(),
                "witness": t.witness,
            })).collect::<Vec<_>>(),
            "outcome": outcome_json(&b.outcome),
        })).collect::<Vec<_>>(),
    })
}

pub fn analysis_json(meta: &OutputMeta, analysis: &Analysis, prep: &Prepared) -> Value {
    json!({
        "meta": meta.to_json(),
        "alpha": prep.design.alpha,
        "delta": prep.scenario.budget().delta(),
        "beta_bar": analysis.beta_bar,
        "certificate": serde_json::to_value(&analysis.certificate).unwrap_or(Value::Null),
        "worst_case": analysis.worst.iter().map(worst_case_json).collect::<Vec<_>>(),
    })
}

pub fn analysis_summary(analysis: &Analysis, prep: &Prepared) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "scenario {} ({} design)", prep.scenario.name, prep.source.name());
    for (i, w) in analysis.worst.iter().enumerate() {
        let _ = writeln!(
            s,
            "mode {}: alpha = {:.4}  beta_tilde = {:.4}  beta_bar = {:.4}",
            i + 1,
            prep.design.alpha[i],
            w.beta_tilde,
            w.beta_bar
        );
        for b in &w.branches {
            let outcome = match &b.outcome {
                BranchOutcome::Excluded => "excluded".to_string(),
                BranchOutcome::Floor(v) => format!("floor {v:.4}"),
                BranchOutcome::Value { beta, state } => format!("{beta:.4} at {state}"),
            };
            let hat = b.beta_hat.map_or("none".to_string(), |v| format!("{v:.4}"));
            let _ = writeln!(s, "    {}  beta_hat = {hat:<8} {outcome}", b.pattern);
        }
    }
    match &analysis.certificate {
        CertOutcome::Certified(c) => {
            let _ = writeln!(s, "certified: chi = {:.4}, c = {:.4}", c.chi, c.c);
        }
        CertOutcome::NotCertified { lhs, chi } => {
            let _ = writeln!(s, "not certified: chi = {chi:.4} (period product {lhs:.4e} is not below 1)");
        }
    }
    s
}

/// `k,mode,phase,x1..xn,norm,V,attacked` with a final row for `x(horizon)`.
pub fn trajectory_csv(meta: &OutputMeta, r: &SimResult) -> String {
    let n = r.states[0].len();
    let mut s = meta.comment_lines();
    let xs: Vec<String> = (1..=n).map(|j| format!("x{j}")).collect();
    let _ = writeln!(s, "k,mode,phase,{},norm,V,attacked", xs.join(","));
    let norms = r.norms();
    for (k, x) in r.states.iter().enumerate() {
        let (mode, phase, attacked) = match r.steps.get(k) {
            Some(st) => (st.mode.to_string(), st.phase.to_string(), (st.attacked as u8).to_string()),
            None => (String::new(), String::new(), String::new()),
        };
        let _ = writeln!(s, "{k},{mode},{phase},{},{},{},{attacked}", join(x), fmt_sig(norms[k]), fmt_sig(r.v[k]));
    }
    s
}

/// `k,mode,r1..rn,w1..wn,state,beta,v_ratio`.
pub fn decisions_csv(meta: &OutputMeta, r: &SimResult) -> String {
    let n = r.states[0].len();
    let mut s = meta.comment_lines();
    let rs: Vec<String> = (1..=n).map(|j| format!("r{j}")).collect();
    let ws: Vec<String> = (1..=n).map(|j| format!("w{j}")).collect();
    let _ = writeln!(s, "k,mode,{},{},state,beta,v_ratio", rs.join(","), ws.join(","));
    for st in &r.steps {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            st.k,
            st.mode,
            join(&st.attack),
            join(&st.w),
            bits(&st.l),
            fmt_sig(st.beta),
            fmt_sig(st.v_ratio)
        );
    }
    s
}

pub fn metrics_csv(meta: &OutputMeta, results: &[&SimResult]) -> String {
    let mut s = meta.comment_lines();
    s.push_str("strategy,peak_ratio,oscillation,settling_index,final_ratio,contract_violations,attacked_steps\n");
    for r in results {
        let m = &r.metrics;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.strategy.name(),
            fmt_sig(m.peak_ratio),
            fmt_sig(m.oscillation),
            m.settling_index.map_or(String::new(), |k| k.to_string()),
            fmt_sig(m.final_ratio),
            m.contract_violations,
            r.steps.iter().filter(|s| s.attacked).count()
        );
    }
    s
}

pub fn dominance_csv(meta: &OutputMeta, rows: &[DominanceRow]) -> String {
    let mut s = meta.comment_lines();
    s.push_str("k,mode,beta_cross,beta_a,beta_b,dominates\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.k,
            r.mode,
            fmt_sig(r.cross),
            fmt_sig(r.a),
            fmt_sig(r.b),
            r.holds(1e-6) as u8
        );
    }
    s
}

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// One panel of line series over a shared x range.
pub struct Panel {
    pub title: String,
    pub series: Vec<(String, Vec<(f64, f64)>)>,
    pub log_y: bool,
}

/// Stacked panels, 640 px wide, 220 px per panel.
pub fn svg_plot(meta: &OutputMeta, panels: &[Panel]) -> String {
    let (w, ph) = (640.0, 220.0);
    let (ml, mr, mt, mb) = (60.0, 120.0, 28.0, 28.0);
    let height = ph * panels.len() as f64;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, "<!-- scenario={} sha256={} seed={} -->", meta.scenario, meta.sha256, meta.seed);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (p, panel) in panels.iter().enumerate() {
        let top = p as f64 * ph;
        let tf = |v: f64| if panel.log_y { v.max(1e-300).log10() } else { v };
        let pts: Vec<(f64, f64)> = panel.series.iter().flat_map(|(_, v)| v.iter().map(|&(x, y)| (x, tf(y)))).collect();
        let (x0, x1) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, p| (a.0.min(p.0), a.1.max(p.0)));
        let (mut y0, mut y1) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, p| (a.0.min(p.1), a.1.max(p.1)));
        if !(y1 > y0) {
            y0 -= 1.0;
            y1 += 1.0;
        }
        let x1 = if x1 > x0 { x1 } else { x0 + 1.0 };
        let px = |x: f64| ml + (x - x0) / (x1 - x0) * (w - ml - mr);
        let py = |y: f64| top + mt + (1.0 - (y - y0) / (y1 - y0)) * (ph - mt - mb);
        let _ = writeln!(
            s,
            r#"<rect x="{ml}" y="{}" width="{}" height="{}" fill="none" stroke="gray"/>"#,
            top + mt,
            w - ml - mr,
            ph - mt - mb
        );
        let _ = writeln!(s, r#"<text x="{ml}" y="{}">{}</text>"#, top + mt - 8.0, panel.title);
        let label = |y: f64| if panel.log_y { format!("1e{y:.1}") } else { format!("{y:.3}") };
        let _ = writeln!(s, r#"<text x="4" y="{}">{}</text>"#, top + mt + 10.0, label(y1));
        let _ = writeln!(s, r#"<text x="4" y="{}">{}</text>"#, top + ph - mb, label(y0));
        let _ = writeln!(s, r#"<text x="{ml}" y="{}">{x0}</text>"#, top + ph - mb + 14.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{x1}</text>"#, w - mr, top + ph - mb + 14.0);
        for (idx, (name, data)) in panel.series.iter().enumerate() {
            let color = COLORS[idx % COLORS.len()];
            let path: Vec<String> = data.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(tf(y)))).collect();
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.3" points="{}"/>"#,
                path.join(" ")
            );
            let ly = top + mt + 14.0 * idx as f64 + 8.0;
            let _ = writeln!(
                s,
                r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{name}</text>"#,
                w - mr + 8.0,
                w - mr + 24.0,
                w - mr + 28.0,
                ly + 4.0
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

pub fn norm_series(r: &SimResult) -> Vec<(f64, f64)> {
    r.norms().into_iter().enumerate().map(|(k, v)| (k as f64, v)).collect()
}

/// Per channel: allocated bandwidth against the incoming flow `R + r̃`.
pub fn bandwidth_panels(r: &SimResult, normal_flow: &[f64]) -> Vec<Panel> {
    (0..normal_flow.len())
        .map(|j| Panel {
            title: format!("channel {}", j + 1),
            series: vec![
                ("bandwidth".into(), r.steps.iter().map(|s| (s.k as f64, s.w[j])).collect()),
                ("input flow".into(), r.steps.iter().map(|s| (s.k as f64, normal_flow[j] + s.attack[j])).collect()),
            ],
            log_y: false,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(fmt_sig(1.0), "1");
        assert_eq!(fmt_sig(1.5038), "1.5038");
        assert_eq!(fmt_sig(1.0 / 3.0), "0.333333333");
        assert_eq!(fmt_sig(123456.789123), "123456.789");
        assert_eq!(fmt_sig(-2.0 / 3.0 * 1e-3), "-0.000666666667");
        assert_eq!(fmt_sig(1.234e-9), "1.23400000e-9");
        assert_eq!(fmt_sig(0.0), "0");
        for v in [std::f64::consts::PI, 7.1e-4, 12345.678901234] {
            let back: f64 = fmt_sig(v).parse().unwrap();
            assert!(((back - v) / v).abs() < 1e-8);
        }
    }
}
