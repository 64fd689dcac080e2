//! Demonstration datasets and their CSV form.
//!
//! CSV layout: header `x_0,...,x_{dx-1},a_0,...,a_{da-1}` followed by one
//! row per (state, action) pair. The reader also accepts a trailing
//! `episode` column; the writer never emits it.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `N` input/output pairs stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    input_dim: usize,
    output_dim: usize,
    inputs: Vec<T>,
    targets: Vec<T>,
    episodes: Option<Vec<usize>>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(input_dim: usize, output_dim: usize, inputs: Vec<T>, targets: Vec<T>) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 {
            return Err(Error::contract("dataset dimensions must be >= 1"));
        }
        if !inputs.len().is_multiple_of(input_dim)
            || !targets.len().is_multiple_of(output_dim)
            || inputs.len() / input_dim != targets.len() / output_dim
        {
            return Err(Error::Shape {
                op: "dataset",
                left: vec![inputs.len(), input_dim],
                right: vec![targets.len(), output_dim],
            });
        }
        if inputs.iter().chain(&targets).any(|v| !v.is_finite()) {
            return Err(Error::non_finite("dataset"));
        }
        Ok(Dataset {
            input_dim,
            output_dim,
            inputs,
            targets,
            episodes: None,
        })
    }

    pub fn with_episodes(mut self, episodes: Vec<usize>) -> Result<Self> {
        if episodes.len() != self.len() {
            return Err(Error::Shape {
                op: "dataset episodes",
                left: vec![self.len()],
                right: vec![episodes.len()],
            });
        }
        self.episodes = Some(episodes);
        Ok(self)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn len(&self) -> usize {
        self.inputs.len() / self.input_dim
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn inputs(&self) -> &[T] {
        &self.inputs
    }

    pub fn targets(&self) -> &[T] {
        &self.targets
    }

    pub fn episodes(&self) -> Option<&[usize]> {
        self.episodes.as_deref()
    }

    pub fn input(&self, i: usize) -> &[T] {
        &self.inputs[i * self.input_dim..(i + 1) * self.input_dim]
    }

    pub fn target(&self, i: usize) -> &[T] {
        &self.targets[i * self.output_dim..(i + 1) * self.output_dim]
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut inputs = Vec::with_capacity(indices.len() * self.input_dim);
        let mut targets = Vec::with_capacity(indices.len() * self.output_dim);
        for &i in indices {
            inputs.extend_from_slice(self.input(i));
            targets.extend_from_slice(self.target(i));
        }
        Dataset {
            input_dim: self.input_dim,
            output_dim: self.output_dim,
            inputs,
            targets,
            episodes: self.episodes.as_ref().map(|e| indices.iter().map(|&i| e[i]).collect()),
        }
    }

    /// Splits by episode: the first `floor(frac * E)` distinct episodes
    /// (at least one, at most `E - 1`) go to the first part.
    pub fn split_by_episode(&self, frac: f64) -> Result<(Self, Self)> {
        let episodes = self
            .episodes
            .as_ref()
            .ok_or_else(|| Error::contract("dataset has no episode ids"))?;
        let mut ids: Vec<usize> = episodes.clone();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() < 2 {
            return Err(Error::contract("episode split needs at least two episodes"));
        }
        let n_train = ((frac * ids.len() as f64).floor() as usize).clamp(1, ids.len() - 1);
        let train_ids = &ids[..n_train];
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for (i, e) in episodes.iter().enumerate() {
            if train_ids.binary_search(e).is_ok() {
                a.push(i);
            } else {
                b.push(i);
            }
        }
        Ok((self.select(&a), self.select(&b)))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let header: Vec<String> = (0..self.input_dim)
            .map(|i| format!("x_{i}"))
            .chain((0..self.output_dim).map(|i| format!("a_{i}")))
            .collect();
        out.push_str(&header.join(","));
        out.push('\n');
        for i in 0..self.len() {
            let mut first = true;
            for v in self.input(i).iter().chain(self.target(i)) {
                if !first {
                    out.push(',');
                }
                first = false;
                // shortest representation that round-trips exactly
                let _ = write!(out, "{:?}", v.to_f64_lossy());
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(Error::Parse {
            row: 1,
            column: 1,
            message: "empty file".into(),
        })?;
        let names: Vec<&str> = header.split(',').map(str::trim).collect();
        let mut input_dim = 0;
        let mut output_dim = 0;
        let mut has_episode = false;
        for (c, name) in names.iter().enumerate() {
            let ok = if has_episode {
                false
            } else if *name == format!("x_{input_dim}") && output_dim == 0 {
                input_dim += 1;
                true
            } else if *name == format!("a_{output_dim}") {
                output_dim += 1;
                true
            } else if *name == "episode" && output_dim > 0 {
                has_episode = true;
                true
            } else {
                false
            };
            if !ok {
                return Err(Error::Parse {
                    row: 1,
                    column: c + 1,
                    message: format!("unexpected header field `{name}`"),
                });
            }
        }
        if input_dim == 0 || output_dim == 0 {
            return Err(Error::Parse {
                row: 1,
                column: 1,
                message: "header needs x_0.. and a_0.. columns".into(),
            });
        }
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        let mut episodes = Vec::new();
        for (line_no, line) in lines {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != names.len() {
                return Err(Error::Parse {
                    row: line_no + 1,
                    column: fields.len().min(names.len()) + 1,
                    message: format!("expected {} fields, found {}", names.len(), fields.len()),
                });
            }
            for (c, f) in fields.iter().enumerate() {
                let parse_err = |message: String| Error::Parse {
                    row: line_no + 1,
                    column: c + 1,
                    message,
                };
                if c == input_dim + output_dim {
                    let e: usize = f.parse().map_err(|_| parse_err(format!("invalid episode id `{f}`")))?;
                    episodes.push(e);
                    continue;
                }
                let v: f64 = f.parse().map_err(|_| parse_err(format!("invalid number `{f}`")))?;
                if !v.is_finite() {
                    return Err(parse_err(format!("non-finite value `{f}`")));
                }
                if c < input_dim {
                    inputs.push(T::lit(v));
                } else {
                    targets.push(T::lit(v));
                }
            }
        }
        if inputs.is_empty() {
            return Err(Error::Parse {
                row: 2,
                column: 1,
                message: "dataset has no rows".into(),
            });
        }
        let ds = Dataset::new(input_dim, output_dim, inputs, targets)?;
        if has_episode {
            ds.with_episodes(episodes)
        } else {
            Ok(ds)
        }
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Splits `0..n` (already permuted by the caller) into `b` contiguous
/// chunks of `n / b` rows; the remainder goes to the last chunk.
pub fn minibatch_ranges(n: usize, b: usize) -> Result<Vec<std::ops::Range<usize>>> {
    if b == 0 || n < b {
        return Err(Error::contract(format!("cannot split {n} rows into {b} minibatches")));
    }
    let size = n / b;
    Ok((0..b)
        .map(|j| {
            let start = j * size;
            let end = if j + 1 == b { n } else { start + size };
            start..end
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Dataset<f64> {
        Dataset::new(2, 1, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6], vec![1.0, 2.0, 3.0])
            .unwrap()
            .with_episodes(vec![0, 0, 1])
            .unwrap()
    }

    #[test]
    fn csv_roundtrip_preserves_bits() {
        let d = Dataset::new(1, 1, vec![0.1 + 0.2, 1.0 / 3.0], vec![-1e-300, 7.0]).unwrap();
        let text = d.to_csv();
        assert!(text.starts_with("x_0,a_0\n"));
        assert_eq!(Dataset::<f64>::from_csv(&text).unwrap(), d);
        let e = Dataset::<f64>::from_csv("x_0,x_1,a_0,episode\n1,2,3,4\n").unwrap();
        assert_eq!(e.episodes(), Some(&[4usize][..]));
        assert_eq!(e.to_csv(), "x_0,x_1,a_0\n1.0,2.0,3.0\n");
    }

    #[test]
    fn malformed_csv_names_row_and_column() {
        let err = Dataset::<f64>::from_csv("x_0,a_0\n1,2\n3,oops\n").unwrap_err();
        match err {
            Error::Parse { row, column, .. } => assert_eq!((row, column), (3, 2)),
            e => panic!("{e}"),
        }
        assert!(matches!(
            Dataset::<f64>::from_csv("x_0,b_0\n1,2\n"),
            Err(Error::Parse { row: 1, column: 2, .. })
        ));
        assert!(Dataset::<f64>::from_csv("x_0,a_0\n").is_err());
    }

    #[test]
    fn minibatch_remainder_goes_last() {
        let r = minibatch_ranges(10, 3).unwrap();
        assert_eq!(r, vec![0..3, 3..6, 6..10]);
        assert!(minibatch_ranges(2, 3).is_err());
        assert!(minibatch_ranges(2, 0).is_err());
    }

    #[test]
    fn episode_split() {
        let (a, b) = sample().split_by_episode(0.8).unwrap();
        assert_eq!(a.len(), 2);
        assert_eq!(b.len(), 1);
        assert_eq!(b.target(0), &[3.0]);
    }
}
