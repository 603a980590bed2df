use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::layout::{block_of, minimal_indices, parameter_name, Block};

/// Ranks starting at 1; tied values share the average of their ranks.
pub fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Symmetric coefficient matrix; `None` where a coordinate is constant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub labels: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
    /// Coordinates that are constant over the samples.
    pub constant: Vec<usize>,
}

impl CorrelationMatrix {
    pub fn dim(&self) -> usize {
        self.labels.len()
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.values[i][j]
    }

    /// Square CSV with a header row of labels; undefined entries are empty.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("param");
        for l in &self.labels {
            let _ = write!(s, ",{l}");
        }
        s.push('\n');
        for (l, row) in self.labels.iter().zip(&self.values) {
            s.push_str(l);
            for v in row {
                match v {
                    Some(v) => {
                        let _ = write!(s, ",{v}");
                    }
                    None => s.push(','),
                }
            }
            s.push('\n');
        }
        s
    }
}

/// Spearman coefficients between the coordinates of `samples` (rows are samples).
pub fn spearman(samples: &[Vec<f64>], labels: Option<Vec<String>>) -> Result<CorrelationMatrix> {
    if samples.len() < 3 {
        return Err(Error::InvalidArgument(format!("need at least 3 samples, got {}", samples.len())));
    }
    let d = samples[0].len();
    if samples.iter().any(|s| s.len() != d) {
        return Err(Error::InvalidArgument("samples have different dimensions".into()));
    }
    let labels = labels.unwrap_or_else(|| (0..d).map(|i| format!("x{i}")).collect());
    if labels.len() != d {
        return Err(Error::Layout {
            expected: d,
            actual: labels.len(),
        });
    }
    let cols: Vec<Vec<f64>> = (0..d)
        .map(|j| ranks(&samples.iter().map(|s| s[j]).collect::<Vec<_>>()))
        .collect();
    let constant: Vec<usize> = (0..d).filter(|&j| cols[j].iter().all(|&r| r == cols[j][0])).collect();
    if !constant.is_empty() {
        log::warn!("{} constant coordinates have undefined correlations", constant.len());
    }
    let mut values = vec![vec![None; d]; d];
    for i in 0..d {
        for j in i..d {
            let v = if i == j && !constant.contains(&i) { Some(1.0) } else { pearson(&cols[i], &cols[j]) };
            values[i][j] = v;
            values[j][i] = v;
        }
    }
    Ok(CorrelationMatrix {
        labels,
        values,
        constant,
    })
}

/// Labels of the 130 analysis coordinates.
pub fn minimal_labels() -> Vec<String> {
    minimal_indices().into_iter().map(parameter_name).collect()
}

/// A named set of coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Group {
    pub name: String,
    pub indices: Vec<usize>,
}

/// The six effect blocks as positions in the minimal vector.
pub fn effect_groups() -> Vec<Group> {
    let idx = minimal_indices();
    Block::ALL
        .iter()
        .map(|&b| Group {
            name: b.name().to_string(),
            indices: idx.iter().enumerate().filter(|(_, &i)| block_of(i) == b).map(|(k, _)| k).collect(),
        })
        .collect()
}

/// Mean absolute coefficient between groups. `None` where no defined entry exists, including
/// self-blocks of single-coordinate groups.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectCorrelation {
    pub names: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
}

impl EffectCorrelation {
    /// `1 - correlation` with the diagonal at 0; undefined off-diagonal pairs count as
    /// uncorrelated.
    pub fn dissimilarity(&self) -> Vec<Vec<f64>> {
        let k = self.names.len();
        (0..k)
            .map(|a| (0..k).map(|b| if a == b { 0.0 } else { 1.0 - self.values[a][b].unwrap_or(0.0) }).collect())
            .collect()
    }
}

pub fn effect_correlation(c: &CorrelationMatrix, groups: &[Group]) -> Result<EffectCorrelation> {
    let d = c.dim();
    let mut seen = vec![false; d];
    for g in groups {
        for &i in &g.indices {
            if i >= d || seen[i] {
                return Err(Error::InvalidArgument(format!("groups do not partition 0..{d} (index {i})")));
            }
            seen[i] = true;
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::InvalidArgument(format!("groups do not cover 0..{d}")));
    }
    let k = groups.len();
    let mut values = vec![vec![None; k]; k];
    for a in 0..k {
        for b in 0..k {
            let (mut sum, mut count) = (0.0, 0usize);
            for &i in &groups[a].indices {
                for &j in &groups[b].indices {
                    if a == b && i == j {
                        continue;
                    }
                    if let Some(v) = c.get(i, j) {
                        sum += v.abs();
                        count += 1;
                    }
                }
            }
            values[a][b] = (count > 0).then(|| sum / count as f64);
            if a == b && count == 0 {
                log::warn!("self-correlation of `{}` is undefined", groups[a].name);
            }
        }
    }
    Ok(EffectCorrelation {
        names: groups.iter().map(|g| g.name.clone()).collect(),
        values,
    })
}
