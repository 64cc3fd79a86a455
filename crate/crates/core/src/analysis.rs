//! Post-hoc analysis of logged scores: per-class order statistics and
//! least-squares fits between class size, class accuracy and mean score.
//! Everything here is a pure function of logged values.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Classes with fewer samples are left out of correlation fits.
pub const MIN_CLASS_COUNT: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct ClassScoreStats {
    pub class: usize,
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
}

/// Linear-interpolation quantile of sorted data (`h = (n - 1) p`).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Per-class score statistics. Classes without samples are `None`.
pub fn ns_distribution(scores: &[f64], labels: &[usize], classes: usize) -> Result<Vec<Option<ClassScoreStats>>> {
    if scores.len() != labels.len() {
        return Err(Error::Invalid(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    let mut per_class = vec![Vec::new(); classes];
    for (&s, &y) in scores.iter().zip(labels) {
        per_class
            .get_mut(y)
            .ok_or(Error::LabelOutOfRange { label: y, classes })?
            .push(s);
    }
    Ok(per_class
        .into_iter()
        .enumerate()
        .map(|(class, mut v)| {
            if v.is_empty() {
                return None;
            }
            v.sort_by(f64::total_cmp);
            Some(ClassScoreStats {
                class,
                count: v.len(),
                mean: v.iter().sum::<f64>() / v.len() as f64,
                median: quantile_sorted(&v, 0.5),
                q1: quantile_sorted(&v, 0.25),
                q3: quantile_sorted(&v, 0.75),
                min: v[0],
                max: v[v.len() - 1],
            })
        })
        .collect())
}

/// `class,count,min,q1,median,q3,max,mean`; empty classes keep their row with
/// blank statistics.
pub fn box_stats_csv(stats: &[Option<ClassScoreStats>]) -> String {
    let mut out = String::from("class,count,min,q1,median,q3,max,mean\n");
    for (k, s) in stats.iter().enumerate() {
        match s {
            Some(s) => writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                s.class, s.count, s.min, s.q1, s.median, s.q3, s.max, s.mean
            ),
            None => writeln!(out, "{k},0,,,,,,"),
        }
        .expect("write to string");
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearFit {
    pub r: f64,
    pub slope: f64,
    pub intercept: f64,
}

/// Least-squares line `y = slope * x + intercept` and Pearson's r.
pub fn linear_correlation(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    if xs.len() != ys.len() {
        return Err(Error::Invalid(format!("{} x values for {} y values", xs.len(), ys.len())));
    }
    if xs.len() < 2 {
        return Err(Error::Invalid("correlation needs at least two points".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 {
        return Err(Error::ZeroVariance { axis: "x" });
    }
    if syy == 0.0 {
        return Err(Error::ZeroVariance { axis: "y" });
    }
    let slope = sxy / sxx;
    Ok(LinearFit {
        r: (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0),
        slope,
        intercept: my - slope * mx,
    })
}

/// Ranks starting at 1; tied values share their average rank.
pub fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation (Pearson on average ranks).
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    Ok(linear_correlation(&ranks(xs), &ranks(ys))?.r)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassRow {
    pub class: usize,
    pub count: usize,
    pub mean_score: Option<f64>,
    pub accuracy: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct CorrelationReport {
    pub rows: Vec<ClassRow>,
    /// Mean score against class sample count.
    pub count_fit: std::result::Result<LinearFit, String>,
    /// Mean score against class accuracy.
    pub accuracy_fit: std::result::Result<LinearFit, String>,
}

/// Class-level table plus the two fits. Classes with fewer than
/// [`MIN_CLASS_COUNT`] samples or without a score are excluded from fits.
pub fn correlation_report(counts: &[usize], mean_scores: &[Option<f64>], accuracies: &[Option<f64>]) -> Result<CorrelationReport> {
    if counts.len() != mean_scores.len() || counts.len() != accuracies.len() {
        return Err(Error::Invalid("per-class inputs differ in length".into()));
    }
    let rows: Vec<ClassRow> = (0..counts.len())
        .map(|k| ClassRow {
            class: k,
            count: counts[k],
            mean_score: mean_scores[k],
            accuracy: accuracies[k],
        })
        .collect();
    let usable = |r: &&ClassRow| r.count >= MIN_CLASS_COUNT && r.mean_score.is_some();
    let fit = |pts: Vec<(f64, f64)>| {
        let (xs, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        linear_correlation(&xs, &ys).map_err(|e| e.to_string())
    };
    let count_fit = fit(rows
        .iter()
        .filter(usable)
        .map(|r| (r.count as f64, r.mean_score.unwrap_or_default()))
        .collect());
    let accuracy_fit = fit(rows
        .iter()
        .filter(usable)
        .filter_map(|r| r.accuracy.map(|a| (a, r.mean_score.unwrap_or_default())))
        .collect());
    Ok(CorrelationReport {
        rows,
        count_fit,
        accuracy_fit,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl CorrelationReport {
    /// `class,count,mean_ns_score,accuracy`.
    pub fn classes_csv(&self) -> String {
        let mut out = String::from("class,count,mean_ns_score,accuracy\n");
        for r in &self.rows {
            writeln!(out, "{},{},{},{}", r.class, r.count, opt(r.mean_score), opt(r.accuracy)).expect("write");
        }
        out
    }

    /// `class,x,y` for one axis (`count` or `accuracy`) against mean score.
    pub fn scatter_csv(&self, axis: &str) -> String {
        let mut out = String::from("class,x,y\n");
        for r in &self.rows {
            let x = match axis {
                "count" => Some(r.count as f64),
                _ => r.accuracy,
            };
            if let (Some(x), Some(y)) = (x, r.mean_score) {
                writeln!(out, "{},{x},{y}", r.class).expect("write");
            }
        }
        out
    }

    /// `fit,slope,intercept,r,note`; undefined fits keep their row with the
    /// reason in `note`.
    pub fn fit_csv(&self) -> String {
        let mut out = String::from("fit,slope,intercept,r,note\n");
        for (name, f) in [("count_vs_score", &self.count_fit), ("accuracy_vs_score", &self.accuracy_fit)] {
            match f {
                Ok(f) => writeln!(out, "{name},{},{},{},", f.slope, f.intercept, f.r),
                Err(e) => writeln!(out, "{name},,,,{}", e.replace(',', ";")),
            }
            .expect("write");
        }
        out
    }
}
