//! Center tuples and nearest-center assignment.
//!
//! A [`Centers`] value is `k` points in `R^d` stored row-major. Assignment
//! uses squared Euclidean distance with exact float comparison; ties go to
//! the lowest index.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Separation below which objective evaluations refuse to run.
pub const NEAR_DEGENERATE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct Centers {
    k: usize,
    d: usize,
    coords: Vec<f64>,
}

/// Index of the Voronoi cell a point falls into.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Assignment {
    pub index: usize,
}

/// Result of [`Centers::min_separation`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Separation {
    pub value: f64,
    /// Set when two centers coincide (the tuple is outside the non-degenerate set).
    pub degenerate: bool,
}

impl Centers {
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self> {
        let k = points.len();
        if k == 0 {
            return Err(Error::Input("at least one center is required".into()));
        }
        let d = points[0].len();
        if d == 0 {
            return Err(Error::Input("centers must have dimension >= 1".into()));
        }
        if let Some((i, p)) = points.iter().enumerate().find(|(_, p)| p.len() != d) {
            return Err(Error::Input(format!("center {i} has dimension {}, expected {d}", p.len())));
        }
        Ok(Self { k, d, coords: points.into_iter().flatten().collect() })
    }

    pub fn from_flat(k: usize, d: usize, coords: Vec<f64>) -> Result<Self> {
        if k == 0 || d == 0 {
            return Err(Error::Input(format!("k and d must be positive (k={k}, d={d})")));
        }
        if coords.len() != k * d {
            return Err(Error::Input(format!("expected {} coordinates for k={k}, d={d}, got {}", k * d, coords.len())));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::Input("center coordinates must be finite".into()));
        }
        Ok(Self { k, d, coords })
    }

    /// Convenience constructor for one-dimensional tuples.
    pub fn line(points: &[f64]) -> Result<Self> {
        Self::from_flat(points.len(), 1, points.to_vec())
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.d..(i + 1) * self.d]
    }

    pub fn point_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.coords[i * self.d..(i + 1) * self.d]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.coords
    }

    pub fn as_flat_mut(&mut self) -> &mut [f64] {
        &mut self.coords
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.d)
    }

    pub fn nearest_center(&self, x: &[f64]) -> Result<Assignment> {
        if x.len() != self.d {
            return Err(Error::Input(format!("point has dimension {}, centers have {}", x.len(), self.d)));
        }
        Ok(Assignment { index: self.nearest_with_tie(x).0 })
    }

    /// Nearest index and whether another center was at exactly the same distance.
    /// Caller guarantees `x.len() == d`.
    pub fn nearest_with_tie(&self, x: &[f64]) -> (usize, bool) {
        let mut best = 0;
        let mut best_dist = f64::INFINITY;
        let mut tied = false;
        for (i, w) in self.points().enumerate() {
            let dist = sq_dist(w, x);
            if dist < best_dist {
                best = i;
                best_dist = dist;
                tied = false;
            } else if dist == best_dist {
                tied = true;
            }
        }
        (best, tied)
    }

    pub fn min_separation(&self) -> Result<Separation> {
        if self.k < 2 {
            return Err(Error::NoPairs);
        }
        let mut min = f64::INFINITY;
        for i in 0..self.k {
            for j in i + 1..self.k {
                min = min.min(sq_dist(self.point(i), self.point(j)));
            }
        }
        let value = min.sqrt();
        Ok(Separation { value, degenerate: value == 0.0 })
    }

    /// True iff every center has Euclidean norm at most `radius`.
    pub fn in_support_ball(&self, radius: f64) -> bool {
        self.points().all(|w| norm(w) <= radius)
    }

    /// Fails with [`Error::Degenerate`] if two centers are closer than `threshold`.
    pub fn ensure_separated(&self, threshold: f64) -> Result<()> {
        if self.k < 2 {
            return Ok(());
        }
        let sep = self.min_separation()?;
        if sep.degenerate || sep.value < threshold {
            return Err(Error::Degenerate(format!(
                "minimum separation {} is below {threshold}",
                sep.value
            )));
        }
        Ok(())
    }

    /// Frobenius distance between two tuples of the same shape.
    pub fn distance(&self, other: &Centers) -> f64 {
        debug_assert_eq!((self.k, self.d), (other.k, other.d));
        sq_dist(&self.coords, &other.coords).sqrt()
    }

    /// Distance to `other` minimized over relabelings of `other`'s centers.
    pub fn distance_up_to_permutation(&self, other: &Centers) -> f64 {
        use itertools::Itertools;
        (0..self.k)
            .permutations(self.k)
            .map(|perm| {
                perm.iter()
                    .enumerate()
                    .map(|(i, &j)| sq_dist(self.point(i), other.point(j)))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Whitespace-separated row `k d v11 v12 ... vkd`.
    pub fn to_row(&self) -> String {
        let mut out = format!("{} {}", self.k, self.d);
        for c in &self.coords {
            out.push(' ');
            out.push_str(&c.to_string());
        }
        out
    }
}

impl fmt::Display for Centers {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_row())
    }
}

impl FromStr for Centers {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut tokens = s.split_whitespace();
        let mut next_usize = |what: &str| -> Result<usize> {
            tokens
                .next()
                .ok_or_else(|| Error::Input(format!("center row is missing {what}")))?
                .parse::<usize>()
                .map_err(|e| Error::Input(format!("bad {what} in center row: {e}")))
        };
        let k = next_usize("k")?;
        let d = next_usize("d")?;
        let coords = tokens
            .map(|t| t.parse::<f64>().map_err(|e| Error::Input(format!("bad coordinate {t:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        Centers::from_flat(k, d, coords)
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}
