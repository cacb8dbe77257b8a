//! Metrics CSV and the plain-text results table.

use std::fmt::Write as _;

use tsshdl_core::image::{GREY_MATTER, WHITE_MATTER};
use tsshdl_core::metrics::ClassScores;

use crate::pipeline::EvalRow;

pub const CSV_HEADER: &str = "image_id,class,jaccard,dice_pct,hd95_mm,avd_pct";

/// Published results on real data, printed for context only.
pub const REFERENCE_JACCARD: [(&str, f64); 2] = [("GM", 0.907), ("WM", 0.921)];
pub const REFERENCE_DICE_PCT: [(&str, f64); 2] = [("GM", 86.01), ("WM", 89.49)];

pub fn class_name(c: u8) -> &'static str {
    match c {
        GREY_MATTER => "GM",
        WHITE_MATTER => "WM",
        _ => "BG",
    }
}

fn class_id(name: &str) -> Option<u8> {
    match name {
        "GM" => Some(GREY_MATTER),
        "WM" => Some(WHITE_MATTER),
        "BG" => Some(0),
        _ => None,
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| format!("{v:.6}"))
}

/// One line per image and class; undefined distances are left empty.
pub fn to_csv(rows: &[EvalRow]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{:.6},{:.6},{},{}",
            r.image_id,
            class_name(r.class),
            r.scores.jaccard,
            r.scores.dice_pct,
            opt(r.scores.hd95_mm),
            opt(r.scores.avd_pct)
        );
    }
    s
}

pub fn from_csv(text: &str) -> Result<Vec<EvalRow>, String> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next() {
        Some(h) if h.trim() == CSV_HEADER => {}
        other => return Err(format!("expected header `{CSV_HEADER}`, got {other:?}")),
    }
    let num = |s: &str| s.trim().parse::<f64>().map_err(|e| format!("`{s}`: {e}"));
    let maybe = |s: &str| if s.trim().is_empty() { Ok(None) } else { num(s).map(Some) };
    lines
        .enumerate()
        .map(|(n, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(format!("line {}: expected 6 fields", n + 2));
            }
            let class = class_id(f[1].trim()).ok_or_else(|| format!("line {}: unknown class `{}`", n + 2, f[1]))?;
            Ok(EvalRow {
                image_id: f[0].to_owned(),
                class,
                scores: ClassScores { jaccard: num(f[2])?, dice_pct: num(f[3])?, hd95_mm: maybe(f[4])?, avd_pct: maybe(f[5])? },
            })
        })
        .collect()
}

/// Per-class means; distance metrics average over the images where they
/// are defined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMeans {
    pub images: usize,
    pub jaccard: f64,
    pub dice_pct: f64,
    pub hd95_mm: Option<f64>,
    pub avd_pct: Option<f64>,
}

pub fn class_means(rows: &[EvalRow], class: u8) -> Option<ClassMeans> {
    let sel: Vec<&ClassScores> = rows.iter().filter(|r| r.class == class).map(|r| &r.scores).collect();
    if sel.is_empty() {
        return None;
    }
    let n = sel.len() as f64;
    let mean_opt = |f: fn(&ClassScores) -> Option<f64>| {
        let v: Vec<f64> = sel.iter().filter_map(|s| f(s)).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    Some(ClassMeans {
        images: sel.len(),
        jaccard: sel.iter().map(|s| s.jaccard).sum::<f64>() / n,
        dice_pct: sel.iter().map(|s| s.dice_pct).sum::<f64>() / n,
        hd95_mm: mean_opt(|s| s.hd95_mm),
        avd_pct: mean_opt(|s| s.avd_pct),
    })
}

fn cell(v: Option<f64>, prec: usize) -> String {
    v.map_or("-".to_owned(), |v| format!("{v:.prec$}"))
}

/// Jaccard table followed by the DC / HD95 / AVD table, per image plus
/// the mean, with the published numbers underneath.
pub fn render_table(rows: &[EvalRow]) -> String {
    let mut ids: Vec<&str> = Vec::new();
    for r in rows {
        if !ids.contains(&r.image_id.as_str()) {
            ids.push(&r.image_id);
        }
    }
    let get = |id: &str, c: u8| rows.iter().find(|r| r.image_id == id && r.class == c).map(|r| r.scores);
    let (gm, wm) = (class_means(rows, GREY_MATTER), class_means(rows, WHITE_MATTER));
    let w = ids.iter().map(|s| s.len()).max().unwrap_or(0).max(8);

    let mut s = String::new();
    let _ = writeln!(s, "Jaccard index");
    let _ = writeln!(s, "{:<w$}  {:>7}  {:>7}", "image", "GM", "WM");
    for id in &ids {
        let j = |c| cell(get(id, c).map(|x| x.jaccard), 3);
        let _ = writeln!(s, "{:<w$}  {:>7}  {:>7}", id, j(GREY_MATTER), j(WHITE_MATTER));
    }
    let _ = writeln!(s, "{:<w$}  {:>7}  {:>7}", "mean", cell(gm.map(|m| m.jaccard), 3), cell(wm.map(|m| m.jaccard), 3));

    let _ = writeln!(s, "\nDice (%), 95% Hausdorff (mm), absolute volume difference (%)");
    let _ = writeln!(
        s,
        "{:<w$}  {:>7} {:>7} {:>7}  {:>7} {:>7} {:>7}",
        "image", "GM DC", "GM HD", "GM AVD", "WM DC", "WM HD", "WM AVD"
    );
    let line = |s: &mut String, label: &str, g: Option<(f64, Option<f64>, Option<f64>)>, m: Option<(f64, Option<f64>, Option<f64>)>| {
        let f = |t: Option<(f64, Option<f64>, Option<f64>)>| match t {
            Some((d, h, a)) => (format!("{d:.2}"), cell(h, 2), cell(a, 2)),
            None => ("-".into(), "-".into(), "-".into()),
        };
        let (a, b) = (f(g), f(m));
        let _ = writeln!(s, "{:<w$}  {:>7} {:>7} {:>7}  {:>7} {:>7} {:>7}", label, a.0, a.1, a.2, b.0, b.1, b.2);
    };
    for id in &ids {
        let t = |c| get(id, c).map(|x| (x.dice_pct, x.hd95_mm, x.avd_pct));
        line(&mut s, id, t(GREY_MATTER), t(WHITE_MATTER));
    }
    let mt = |m: Option<ClassMeans>| m.map(|m| (m.dice_pct, m.hd95_mm, m.avd_pct));
    line(&mut s, "mean", mt(gm), mt(wm));

    let _ = writeln!(
        s,
        "\nreference (published, different data): J GM {:.3} WM {:.3}; DC GM {:.2} WM {:.2}",
        REFERENCE_JACCARD[0].1, REFERENCE_JACCARD[1].1, REFERENCE_DICE_PCT[0].1, REFERENCE_DICE_PCT[1].1
    );
    s
}

/// Stage timings and headline diagnostics from a JSON-lines run report.
pub fn summarize_run(jsonl: &str) -> Result<String, String> {
    let mut s = String::new();
    let mut total = 0.0;
    for (n, line) in jsonl.lines().filter(|l| !l.trim().is_empty()).enumerate() {
        let v: serde_json::Value = serde_json::from_str(line).map_err(|e| format!("line {}: {e}", n + 1))?;
        let stage = v["stage"].as_str().unwrap_or("?");
        let secs = v["seconds"].as_f64().unwrap_or(0.0);
        total += secs;
        let mut note = String::new();
        let last = |k: &str| v[k].as_array().and_then(|a| a.last()).and_then(|x| x.as_f64());
        if let Some(ll) = last("em_log_likelihood") {
            let _ = write!(note, "EM {} iters, final log-likelihood {ll:.4}", v["em_log_likelihood"].as_array().map_or(0, |a| a.len()));
        }
        if let Some(l) = last("loss") {
            let _ = write!(note, "final loss {l:.5}, {} pixels", v["pixels"]);
        }
        if let Some(j) = v["val_jaccard"].as_f64() {
            let _ = write!(note, "w0={} w1={} beta={} val J {j:.4}", v["w0"], v["w1"], v["beta"]);
        }
        if let Some(c) = v["cache_hits"].as_u64() {
            let _ = write!(note, "{} slices, {c} cached", v["slices"]);
        }
        let _ = writeln!(s, "{stage:<12} {secs:>8.2}s  {note}");
    }
    let _ = writeln!(s, "{:<12} {total:>8.2}s", "total");
    Ok(s)
}
