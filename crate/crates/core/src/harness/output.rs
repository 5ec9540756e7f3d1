use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::stats::Summary;

use super::linear::LinearRun;
use super::network::NnRun;

pub const LINEAR_HEADER: [&str; 15] = [
    "rep",
    "n",
    "p",
    "profile",
    "alpha",
    "delta",
    "efv_analytic",
    "fv_mc",
    "lfv",
    "jfv",
    "tic0",
    "tic_kappa",
    "ric",
    "seed",
    "summary",
];

pub const NN_HEADER: [&str; 14] = [
    "rep",
    "d",
    "m",
    "n",
    "p",
    "t",
    "lfv",
    "lfv_sd",
    "tilde_gap",
    "tilde_gap_sum",
    "lfv_reps",
    "failed",
    "seed",
    "summary",
];

/// Decimal rendering with 6 significant digits and no exponent.
pub fn sig6(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    if x == 0.0 {
        return "0.00000".into();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format has an exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp >= 5 {
        let rounded: f64 = format!("{mantissa}e{exp}").parse().expect("valid float");
        format!("{rounded:.0}")
    } else {
        let decimals = (5 - exp) as usize;
        format!("{x:.decimals$}")
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(sig6).unwrap_or_default()
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::InvalidInput(format!("cannot write {}: {e}", path.display()))
}

fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fail = |e: csv::Error| Error::InvalidInput(format!("csv encoding failed: {e}"));
    w.write_record(header).map_err(fail)?;
    for r in rows {
        w.write_record(r).map_err(fail)?;
    }
    w.into_inner().map_err(|e| Error::InvalidInput(format!("csv flush failed: {e}")))
}

pub fn linear_csv(run: &LinearRun) -> Result<Vec<u8>> {
    let mut rows = Vec::with_capacity(run.rows.len() + 1);
    for r in &run.rows {
        rows.push(vec![
            r.meta.replication.to_string(),
            r.meta.n.to_string(),
            r.meta.p.to_string(),
            r.meta.profile.clone(),
            sig6(r.meta.alpha),
            opt(r.delta),
            opt(r.efv_analytic),
            opt(r.fv_mc),
            opt(r.lfv),
            opt(r.jfv_analytic),
            opt(r.tic0),
            opt(r.tic_kappa),
            opt(r.ric),
            r.seed.to_string(),
            "false".into(),
        ]);
    }
    let s = &run.summary;
    let cfg = &run.config;
    let mean = |x: &Option<Summary>| x.map(|s| s.mean);
    rows.push(vec![
        String::new(),
        cfg.n.to_string(),
        cfg.p().to_string(),
        cfg.profile.name().to_string(),
        sig6(cfg.alpha),
        opt(mean(&s.delta)),
        opt(mean(&s.efv_analytic)),
        opt(mean(&s.fv_mc)),
        opt(mean(&s.lfv)),
        opt(mean(&s.jfv_analytic)),
        opt(mean(&s.tic0)),
        opt(mean(&s.tic_kappa)),
        opt(mean(&s.ric)),
        cfg.seed.to_string(),
        "true".into(),
    ]);
    csv_bytes(&LINEAR_HEADER, &rows)
}

pub fn nn_csv(run: &NnRun) -> Result<Vec<u8>> {
    let mut rows = Vec::new();
    for r in &run.reps {
        rows.push(vec![
            r.rep.to_string(),
            r.d.to_string(),
            r.m.to_string(),
            r.n.to_string(),
            r.p.to_string(),
            r.t.to_string(),
            opt(r.lfv),
            String::new(),
            opt(r.tilde_mean),
            opt(r.tilde_sum),
            String::new(),
            String::new(),
            r.seed.to_string(),
            "false".into(),
        ]);
    }
    for c in &run.cells {
        rows.push(vec![
            String::new(),
            c.d.to_string(),
            c.m.to_string(),
            c.n.to_string(),
            c.p.to_string(),
            c.t.to_string(),
            opt(c.lfv.map(|s| s.mean)),
            opt(c.lfv.filter(|s| s.count > 1).map(|s| s.sd)),
            opt(c.tilde_mean),
            opt(c.tilde_sum),
            c.lfv.map(|s| s.count).unwrap_or(0).to_string(),
            c.failed.to_string(),
            run.config.seed.to_string(),
            "true".into(),
        ]);
    }
    csv_bytes(&NN_HEADER, &rows)
}

fn pm(s: Option<Summary>) -> String {
    match s {
        Some(s) if s.count > 1 => format!("{:.3} ± {:.3}", s.mean, s.sd),
        Some(s) => format!("{:.3}", s.mean),
        None => "-".into(),
    }
}

fn aligned(header: &[String], rows: &[Vec<String>]) -> String {
    let cols = header.len();
    let width: Vec<usize> = (0..cols)
        .map(|j| {
            rows.iter()
                .map(|r| r[j].chars().count())
                .chain(std::iter::once(header[j].chars().count()))
                .max()
                .unwrap_or(0)
                .max(3)
        })
        .collect();
    let line = |cells: &[String]| {
        let body: Vec<String> = cells
            .iter()
            .zip(&width)
            .map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        format!("| {} |\n", body.join(" | "))
    };
    let mut out = line(header);
    let rule: Vec<String> = width.iter().map(|w| "-".repeat(*w)).collect();
    out.push_str(&format!("|-{}-|\n", rule.join("-|-")));
    for r in rows {
        out.push_str(&line(r));
    }
    out
}

/// Estimators as rows, one value column, mean ± sd.
pub fn linear_markdown(run: &LinearRun) -> String {
    let s = &run.summary;
    let cfg = &run.config;
    let header = vec!["estimator".to_string(), format!("n={}", cfg.n)];
    let entries = [
        ("Δ(α)".to_string(), s.delta),
        ("E[FV]".to_string(), s.efv_analytic),
        ("FV".to_string(), s.fv_mc),
        ("LFV".to_string(), s.lfv),
        ("J-FV".to_string(), s.jfv_analytic),
        ("TIC (κ=0)".to_string(), s.tic0),
        (format!("TIC (κ={})", cfg.kappa), s.tic_kappa),
        ("RIC".to_string(), s.ric),
    ];
    let rows: Vec<Vec<String>> = entries
        .iter()
        .filter(|(_, v)| v.is_some())
        .map(|(name, v)| vec![name.clone(), pm(*v)])
        .collect();
    let mut out = format!(
        "profile {}, n={}, p={}, α={}, {} replications\n\n",
        cfg.profile,
        cfg.n,
        cfg.p(),
        cfg.alpha,
        run.rows.len()
    );
    out.push_str(&aligned(&header, &rows));
    if run.failed > 0 {
        out.push_str(&format!("\n{} chain(s) diverged\n", run.failed));
    }
    out
}

pub fn nn_markdown(run: &NnRun) -> String {
    let header: Vec<String> = ["d", "M", "T", "LFV", "Δ̃ (mean)", "Δ̃ (sum)", "failed"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let f3 = |x: Option<f64>| x.map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".into());
    let rows: Vec<Vec<String>> = run
        .cells
        .iter()
        .map(|c| {
            vec![
                c.d.to_string(),
                c.m.to_string(),
                c.t.to_string(),
                pm(c.lfv),
                f3(c.tilde_mean),
                f3(c.tilde_sum),
                c.failed.to_string(),
            ]
        })
        .collect();
    let mut out = format!("n={}, σ²={}, α={}\n\n", run.config.n, run.config.sigma_sq, run.config.alpha);
    out.push_str(&aligned(&header, &rows));
    out
}

/// `<out>.md` next to the CSV.
pub fn markdown_path(csv: &Path) -> PathBuf {
    let mut s = csv.as_os_str().to_owned();
    s.push(".md");
    PathBuf::from(s)
}

pub fn write_outputs(csv_path: &Path, csv: &[u8], markdown: &str) -> Result<()> {
    let mut f = std::fs::File::create(csv_path).map_err(|e| io_err(csv_path, e))?;
    f.write_all(csv).map_err(|e| io_err(csv_path, e))?;
    let md = markdown_path(csv_path);
    std::fs::write(&md, markdown).map_err(|e| io_err(&md, e))
}
