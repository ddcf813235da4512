//! Turning attention into explanations: discrete rationales, agreement with
//! human rationales, and heatmaps.

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::textproc::Encoding;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExtractionStrategy {
    /// Tokens scoring strictly above `1 / n_content`.
    AboveUniform,
    /// The `max(1, round(ratio * n_content))` highest-scoring tokens.
    TopKRatio { ratio: f64 },
    /// Tokens scoring at least `threshold`.
    Absolute { threshold: f64 },
}

impl Default for ExtractionStrategy {
    fn default() -> Self {
        Self::AboveUniform
    }
}

impl fmt::Display for ExtractionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::AboveUniform => write!(f, "above-uniform"),
            Self::TopKRatio { ratio } => write!(f, "top-k:{ratio}"),
            Self::Absolute { threshold } => write!(f, "absolute:{threshold}"),
        }
    }
}

impl FromStr for ExtractionStrategy {
    type Err = Error;

    /// `above-uniform`, `top-k:<ratio>` or `absolute:<threshold>`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(format!("unknown rationale strategy `{s}`"));
        let num = |v: &str| v.parse::<f64>().map_err(|_| bad());
        match s.split_once(':') {
            None if s == "above-uniform" => Ok(Self::AboveUniform),
            Some(("top-k", v)) => {
                let ratio = num(v)?;
                if !(ratio > 0.0 && ratio <= 1.0) {
                    return Err(Error::InvalidConfig(format!("top-k ratio {ratio} outside (0, 1]")));
                }
                Ok(Self::TopKRatio { ratio })
            }
            Some(("absolute", v)) => Ok(Self::Absolute { threshold: num(v)? }),
            _ => Err(bad()),
        }
    }
}

/// Scores of the content positions, renormalized to sum to 1. All-zero input
/// stays zero.
pub fn content_scores(a: &[f64], enc: &Encoding) -> Vec<f64> {
    let raw: Vec<f64> = enc.content_positions().map(|p| a[p]).collect();
    let z: f64 = raw.iter().sum();
    if z > 0.0 {
        raw.iter().map(|v| v / z).collect()
    } else {
        raw
    }
}

/// Picks rationale tokens from content-normalized scores; returns content
/// indices.
pub fn select(scores: &[f64], strategy: ExtractionStrategy) -> BTreeSet<usize> {
    let n = scores.len();
    if n == 0 {
        return BTreeSet::new();
    }
    match strategy {
        ExtractionStrategy::AboveUniform => {
            let u = 1.0 / n as f64;
            (0..n).filter(|&i| scores[i] > u).collect()
        }
        ExtractionStrategy::TopKRatio { ratio } => {
            let k = ((ratio * n as f64).round() as usize).clamp(1, n);
            let mut order: Vec<usize> = (0..n).collect();
            // stable sort keeps the lower index first among ties
            order.sort_by(|&x, &y| scores[y].total_cmp(&scores[x]));
            order.truncate(k);
            order.into_iter().collect()
        }
        ExtractionStrategy::Absolute { threshold } => {
            (0..n).filter(|&i| scores[i] >= threshold).collect()
        }
    }
}

/// Rationale positions (within the encoding) chosen from attention `a`,
/// which is indexed by encoding position. Always a subset of the content
/// positions.
pub fn extract_rationale(a: &[f64], enc: &Encoding, strategy: ExtractionStrategy) -> BTreeSet<usize> {
    let positions: Vec<usize> = enc.content_positions().collect();
    select(&content_scores(a, enc), strategy)
        .into_iter()
        .map(|i| positions[i])
        .collect()
}

/// Content positions to content indices.
pub fn to_content_indices(positions: &BTreeSet<usize>, enc: &Encoding) -> BTreeSet<usize> {
    enc.content_positions()
        .enumerate()
        .filter(|(_, p)| positions.contains(p))
        .map(|(i, _)| i)
        .collect()
}

/// Pearson correlation between token scores and 0/1 gold membership, pooled
/// over every token of every instance with a nonempty gold set. `None` with
/// fewer than two such instances or zero variance on either side.
pub fn attention_rationale_correlation<'a, I>(items: I) -> Option<f64>
where
    I: IntoIterator<Item = (&'a [f64], &'a BTreeSet<usize>)>,
{
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut instances = 0;
    for (scores, gold) in items {
        if gold.is_empty() {
            continue;
        }
        instances += 1;
        for (i, &s) in scores.iter().enumerate() {
            xs.push(s);
            ys.push(if gold.contains(&i) { 1.0 } else { 0.0 });
        }
    }
    if instances < 2 {
        return None;
    }
    pearson(&xs, &ys)
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

/// What a heatmap shows: one entry per content token.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap<'a> {
    pub title: &'a str,
    pub tokens: &'a [String],
    pub scores: &'a [f64],
    pub gold: Option<&'a BTreeSet<usize>>,
}

impl Heatmap<'_> {
    /// Per-token intensity in [0, 1]: score over the maximum score.
    pub fn intensities(&self) -> Vec<f64> {
        let max = self.scores.iter().copied().fold(0.0, f64::max);
        self.scores
            .iter()
            .map(|&s| if max > 0.0 { (s / max).clamp(0.0, 1.0) } else { 0.0 })
            .collect()
    }

    fn is_gold(&self, i: usize) -> bool {
        self.gold.is_some_and(|g| g.contains(&i))
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

/// A standalone HTML page per heatmap, red background with alpha equal to
/// the intensity; gold tokens are underlined. Output is byte-stable.
pub fn render_html(maps: &[Heatmap<'_>]) -> String {
    let mut out = String::from(
        "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n<title>attention</title>\n\
         <style>\nbody{font-family:sans-serif;line-height:2}\n\
         .t{padding:2px 3px;margin:0 1px;border-radius:3px}\n\
         .g{text-decoration:underline;text-decoration-thickness:2px}\n</style>\n</head>\n<body>\n",
    );
    for m in maps {
        let _ = writeln!(out, "<div class=\"post\">\n<h3>{}</h3>\n<p>", escape(m.title));
        for (i, (tok, x)) in m.tokens.iter().zip(m.intensities()).enumerate() {
            let class = if m.is_gold(i) { "t g" } else { "t" };
            let _ = writeln!(
                out,
                "<span class=\"{class}\" style=\"background-color:rgba(220,38,38,{x:.3})\" \
                 title=\"{:.4}\">{}</span>",
                m.scores[i],
                escape(tok)
            );
        }
        out.push_str("</p>\n</div>\n");
    }
    out.push_str("</body>\n</html>\n");
    out
}

pub const TERMINAL_LEVELS: usize = 8;

/// Intensity bucket in `0..TERMINAL_LEVELS`.
pub fn quantize(x: f64) -> usize {
    ((x * TERMINAL_LEVELS as f64) as usize).min(TERMINAL_LEVELS - 1)
}

/// ANSI rendering with 24-bit backgrounds from white to red in eight steps;
/// gold tokens are underlined.
pub fn render_terminal(map: &Heatmap<'_>) -> String {
    let mut out = format!("{}\n", map.title);
    for (i, (tok, x)) in map.tokens.iter().zip(map.intensities()).enumerate() {
        let t = quantize(x) as f64 / (TERMINAL_LEVELS - 1) as f64;
        let lerp = |from: f64, to: f64| (from + (to - from) * t).round() as u8;
        let (r, g, b) = (lerp(255.0, 220.0), lerp(255.0, 38.0), lerp(255.0, 38.0));
        let underline = if map.is_gold(i) { "\x1b[4m" } else { "" };
        let _ = write!(out, "\x1b[30;48;2;{r};{g};{b}m{underline}{tok}\x1b[0m ");
    }
    out.push('\n');
    out
}
