//! Text forms of an [`EvalReport`]: a machine-readable `key=value` listing
//! with fixed key names, a per-class PR-curve table, and a human summary.
//! Reals are written in shortest round-trip form, so parsing and
//! re-serializing reproduces the text byte for byte.

use std::collections::HashMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::metrics::ap::ApMethod;
use crate::metrics::eval::{ClassReport, EvalOptions, EvalReport, PrPoint};

const PR_HEADER: &str = "rank score recall precision";

impl EvalReport {
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            out.push_str(k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        };
        put("iou_thr", self.options.iou_thr.to_string());
        put("ap_method", self.options.ap_method.to_string());
        put("precision.all", self.precision.to_string());
        put("recall.all", self.recall.to_string());
        put("map.all", self.map.to_string());
        put("precision.macro", self.macro_precision.to_string());
        put("recall.macro", self.macro_recall.to_string());
        put("tp.all", self.tp.to_string());
        put("fp.all", self.fp.to_string());
        put("fn.all", self.fn_count.to_string());
        for c in &self.classes {
            let n = &c.name;
            put(&format!("class.{n}"), c.class_id.to_string());
            put(&format!("gt.{n}"), c.gt.to_string());
            put(&format!("det.{n}"), c.det.to_string());
            put(&format!("tp.{n}"), c.tp.to_string());
            put(&format!("fp.{n}"), c.fp.to_string());
            put(&format!("fn.{n}"), c.fn_count.to_string());
            put(&format!("precision.{n}"), c.precision.to_string());
            put(&format!("recall.{n}"), c.recall.to_string());
            put(&format!("ap.{n}"), c.ap.to_string());
        }
        out
    }

    /// Inverse of [`EvalReport::to_kv`]. PR curves are not part of the
    /// listing and come back empty.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut map: HashMap<String, (usize, String)> = HashMap::new();
        let mut class_names: Vec<String> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse("report", line_no, format!("expected key=value, got `{line}`")))?;
            if k.is_empty() || v.is_empty() {
                return Err(Error::parse("report", line_no, "empty key or value"));
            }
            if map.insert(k.to_string(), (line_no, v.to_string())).is_some() {
                return Err(Error::parse("report", line_no, format!("duplicate key `{k}`")));
            }
            if let Some(name) = k.strip_prefix("class.") {
                class_names.push(name.to_string());
            }
        }
        let mut taken = 0usize;
        let mut get = |k: &str| -> Result<(usize, String)> {
            taken += 1;
            map.get(k)
                .cloned()
                .ok_or_else(|| Error::Format(format!("report is missing key `{k}`")))
        };
        fn real(k: &str, (line, v): (usize, String)) -> Result<f64> {
            let x: f64 = v
                .parse()
                .map_err(|_| Error::parse("report", line, format!("`{k}` is not a number: `{v}`")))?;
            if !x.is_finite() {
                return Err(Error::parse("report", line, format!("`{k}` is not finite")));
            }
            Ok(x)
        }
        fn metric(k: &str, entry: (usize, String)) -> Result<f64> {
            let line = entry.0;
            let x = real(k, entry)?;
            if !(0.0..=1.0).contains(&x) {
                return Err(Error::parse("report", line, format!("`{k}` = {x} outside [0, 1]")));
            }
            Ok(x)
        }
        fn count<T: std::str::FromStr>(k: &str, (line, v): (usize, String)) -> Result<T> {
            v.parse()
                .map_err(|_| Error::parse("report", line, format!("`{k}` is not a count: `{v}`")))
        }
        let (ml, mv) = get("ap_method")?;
        let ap_method: ApMethod = mv
            .parse()
            .map_err(|e: Error| Error::parse("report", ml, e.to_string()))?;
        let options = EvalOptions {
            iou_thr: metric("iou_thr", get("iou_thr")?)?,
            ap_method,
        };
        let mut classes = Vec::with_capacity(class_names.len());
        for n in &class_names {
            let k = |p: &str| format!("{p}.{n}");
            classes.push(ClassReport {
                class_id: count(&k("class"), get(&k("class"))?)?,
                name: n.clone(),
                gt: count(&k("gt"), get(&k("gt"))?)?,
                det: count(&k("det"), get(&k("det"))?)?,
                tp: count(&k("tp"), get(&k("tp"))?)?,
                fp: count(&k("fp"), get(&k("fp"))?)?,
                fn_count: count(&k("fn"), get(&k("fn"))?)?,
                precision: metric(&k("precision"), get(&k("precision"))?)?,
                recall: metric(&k("recall"), get(&k("recall"))?)?,
                ap: metric(&k("ap"), get(&k("ap"))?)?,
                pr_curve: Vec::new(),
            });
        }
        let report = EvalReport {
            options,
            tp: count("tp.all", get("tp.all")?)?,
            fp: count("fp.all", get("fp.all")?)?,
            fn_count: count("fn.all", get("fn.all")?)?,
            precision: metric("precision.all", get("precision.all")?)?,
            recall: metric("recall.all", get("recall.all")?)?,
            map: metric("map.all", get("map.all")?)?,
            macro_precision: metric("precision.macro", get("precision.macro")?)?,
            macro_recall: metric("recall.macro", get("recall.macro")?)?,
            classes,
        };
        if taken != map.len() {
            let expected = report.to_kv();
            let known: std::collections::HashSet<&str> = expected
                .lines()
                .filter_map(|l| l.split_once('=').map(|(k, _)| k))
                .collect();
            let mut extra: Vec<&str> = map.keys().map(String::as_str).filter(|k| !known.contains(k)).collect();
            extra.sort_unstable();
            return Err(Error::Format(format!("report has unknown keys {extra:?}")));
        }
        for c in &report.classes {
            if c.tp + c.fp != c.det || c.tp + c.fn_count != c.gt {
                return Err(Error::Format(format!("inconsistent counts for class `{}`", c.name)));
            }
        }
        Ok(report)
    }
}

impl ClassReport {
    pub fn pr_table(&self) -> String {
        let mut out = format!(
            "# class={} id={} gt={}\n{PR_HEADER}\n",
            self.name, self.class_id, self.gt
        );
        for (i, p) in self.pr_curve.iter().enumerate() {
            out.push_str(&format!("{} {} {} {}\n", i + 1, p.score, p.recall, p.precision));
        }
        out
    }
}

/// Parsed PR table: class name, class id, ground-truth count, points.
#[derive(Debug, Clone, PartialEq)]
pub struct PrTable {
    pub name: String,
    pub class_id: u32,
    pub gt: usize,
    pub points: Vec<PrPoint>,
}

impl PrTable {
    pub fn parse(text: &str) -> Result<Self> {
        let src = "pr table";
        let mut lines = text.lines().enumerate();
        let (_, head) = lines.next().ok_or_else(|| Error::Format("empty PR table".into()))?;
        let fields = head
            .strip_prefix("# ")
            .ok_or_else(|| Error::parse(src, 1, "missing `# class=...` header"))?;
        let mut name = None;
        let mut class_id = None;
        let mut gt = None;
        for f in fields.split_whitespace() {
            match f.split_once('=') {
                Some(("class", v)) => name = Some(v.to_string()),
                Some(("id", v)) => class_id = Some(v.parse().map_err(|_| Error::parse(src, 1, "bad class id"))?),
                Some(("gt", v)) => gt = Some(v.parse().map_err(|_| Error::parse(src, 1, "bad gt count"))?),
                _ => return Err(Error::parse(src, 1, format!("unexpected header field `{f}`"))),
            }
        }
        let (name, class_id, gt) = match (name, class_id, gt) {
            (Some(n), Some(i), Some(g)) => (n, i, g),
            _ => return Err(Error::parse(src, 1, "header needs class, id and gt")),
        };
        match lines.next() {
            Some((_, l)) if l == PR_HEADER => {}
            _ => return Err(Error::parse(src, 2, format!("expected column header `{PR_HEADER}`"))),
        }
        let mut points = Vec::new();
        for (i, l) in lines {
            let line_no = i + 1;
            let cols: Vec<&str> = l.split_whitespace().collect();
            if cols.len() != 4 {
                return Err(Error::parse(
                    src,
                    line_no,
                    format!("expected 4 columns, got {}", cols.len()),
                ));
            }
            let rank: usize = cols[0].parse().map_err(|_| Error::parse(src, line_no, "bad rank"))?;
            if rank != points.len() + 1 {
                return Err(Error::parse(src, line_no, format!("rank {rank} out of sequence")));
            }
            let mut vals = [0.0f64; 3];
            for (v, c) in vals.iter_mut().zip(&cols[1..]) {
                *v = c
                    .parse()
                    .map_err(|_| Error::parse(src, line_no, format!("bad number `{c}`")))?;
                if !(0.0..=1.0).contains(v) {
                    return Err(Error::parse(src, line_no, format!("value `{c}` outside [0, 1]")));
                }
            }
            points.push(PrPoint {
                score: vals[0],
                recall: vals[1],
                precision: vals[2],
            });
        }
        Ok(Self {
            name,
            class_id,
            gt,
            points,
        })
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "IoU threshold {}  AP method {}",
            self.options.iou_thr, self.options.ap_method
        )?;
        writeln!(
            f,
            "{:<14} {:>6} {:>6} {:>6} {:>6} {:>6} {:>10} {:>8} {:>8}",
            "class", "gt", "det", "tp", "fp", "fn", "precision", "recall", "AP"
        )?;
        for c in &self.classes {
            writeln!(
                f,
                "{:<14} {:>6} {:>6} {:>6} {:>6} {:>6} {:>10.4} {:>8.4} {:>8.4}",
                c.name, c.gt, c.det, c.tp, c.fp, c.fn_count, c.precision, c.recall, c.ap
            )?;
        }
        let gt: usize = self.classes.iter().map(|c| c.gt).sum();
        let det: usize = self.classes.iter().map(|c| c.det).sum();
        writeln!(
            f,
            "{:<14} {:>6} {:>6} {:>6} {:>6} {:>6} {:>10.4} {:>8.4} {:>8.4}",
            "all", gt, det, self.tp, self.fp, self.fn_count, self.precision, self.recall, self.map
        )?;
        write!(
            f,
            "class-averaged precision {:.4}  recall {:.4}",
            self.macro_precision, self.macro_recall
        )
    }
}
