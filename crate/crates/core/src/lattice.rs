//! Cubic lattices `[1, L]^d` and collections of interaction ranges built from
//! translated base sets.

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};

/// Default cap on the number of lattice sites.
pub const DEFAULT_SITE_CAP: usize = 20;

/// Default cap on the Euclidean diameter of a base set.
pub const DEFAULT_MAX_DIAMETER: f64 = 4.0;

/// A site coordinate, 1-based in every direction.
pub type Coord = Vec<i64>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lattice {
    d: usize,
    side: usize,
    sites: Vec<Coord>,
}

impl Lattice {
    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn sites(&self) -> &[Coord] {
        &self.sites
    }

    pub fn num_sites(&self) -> usize {
        self.sites.len()
    }

    /// Lexicographic index of a coordinate, or `None` when it lies outside.
    pub fn index_of(&self, c: &[i64]) -> Option<usize> {
        if c.len() != self.d {
            return None;
        }
        let l = self.side as i64;
        let mut idx = 0usize;
        for &x in c {
            if x < 1 || x > l {
                return None;
            }
            idx = idx * self.side + (x - 1) as usize;
        }
        Some(idx)
    }

    pub fn origin(&self) -> Coord {
        vec![1; self.d]
    }
}

/// Build `Λ_L = Z^d ∩ [1, L]^d` with the default site cap.
pub fn build_lattice(d: usize, side: usize) -> Result<Lattice> {
    build_lattice_capped(d, side, DEFAULT_SITE_CAP)
}

pub fn build_lattice_capped(d: usize, side: usize, cap: usize) -> Result<Lattice> {
    if d == 0 || side == 0 {
        return arg_err(format!("lattice needs d >= 1 and L >= 1 (got d={d}, L={side})"));
    }
    let n = side
        .checked_pow(d as u32)
        .ok_or(Error::Size { what: "L^d", value: usize::MAX, cap })?;
    if n > cap {
        return Err(Error::Size { what: "L^d", value: n, cap });
    }
    let mut sites = Vec::with_capacity(n);
    for mut k in 0..n {
        let mut c = vec![0i64; d];
        for slot in c.iter_mut().rev() {
            *slot = (k % side) as i64 + 1;
            k /= side;
        }
        sites.push(c);
    }
    Ok(Lattice { d, side, sites })
}

/// A base set `X_k`: absolute coordinates containing the origin `(1, ..., 1)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaseSet(pub Vec<Coord>);

impl BaseSet {
    /// Base set given as offsets relative to `(1, ..., 1)`.
    pub fn from_offsets(offsets: &[Vec<i64>]) -> Self {
        BaseSet(
            offsets
                .iter()
                .map(|o| o.iter().map(|x| x + 1).collect())
                .collect(),
        )
    }

    pub fn single_site(d: usize) -> Self {
        BaseSet(vec![vec![1; d]])
    }

    /// The bond from the origin along direction `axis`.
    pub fn unit_bond(d: usize, axis: usize) -> Self {
        let a = vec![1; d];
        let mut b = a.clone();
        b[axis] += 1;
        BaseSet(vec![a, b])
    }

    pub fn diameter(&self) -> f64 {
        let mut best = 0.0f64;
        for (i, a) in self.0.iter().enumerate() {
            for b in &self.0[i + 1..] {
                let s: i64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                best = best.max((s as f64).sqrt());
            }
        }
        best
    }

    fn validate(&self, d: usize, max_diameter: f64) -> Result<()> {
        if self.0.is_empty() {
            return arg_err("empty base set");
        }
        if self.0.iter().any(|c| c.len() != d) {
            return arg_err(format!("base set coordinates must have dimension {d}"));
        }
        if !self.0.iter().any(|c| c.iter().all(|&x| x == 1)) {
            return arg_err("base set must contain the origin (1, ..., 1)");
        }
        if self.diameter() > max_diameter {
            return arg_err(format!(
                "base set diameter {} exceeds {max_diameter}",
                self.diameter()
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    /// Keep only translates fully contained in the lattice.
    #[default]
    Open,
    /// Wrap translates around the torus.
    Periodic,
}

#[derive(Debug, Clone, Copy)]
pub struct RangeOptions {
    pub boundary: Boundary,
    pub max_diameter: f64,
}

impl Default for RangeOptions {
    fn default() -> Self {
        Self {
            boundary: Boundary::Open,
            max_diameter: DEFAULT_MAX_DIAMETER,
        }
    }
}

/// The realized collection of interaction ranges `C_L`.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeFamily {
    pub label: String,
    pub base_sets: Vec<BaseSet>,
    /// Each range is a sorted list of lattice site indices.
    pub ranges: Vec<Vec<usize>>,
}

impl RangeFamily {
    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }
}

/// All translates `X_k + i` of the base sets that lie in the lattice,
/// deduplicated and sorted.
pub fn build_ranges(lat: &Lattice, base_sets: &[BaseSet]) -> Result<RangeFamily> {
    build_ranges_with(lat, base_sets, RangeOptions::default(), "C")
}

pub fn build_ranges_with(
    lat: &Lattice,
    base_sets: &[BaseSet],
    opts: RangeOptions,
    label: &str,
) -> Result<RangeFamily> {
    let l = lat.side() as i64;
    let mut ranges = Vec::new();
    for base in base_sets {
        base.validate(lat.dim(), opts.max_diameter)?;
        for shift in lat.sites() {
            let mut idx = Vec::with_capacity(base.0.len());
            let mut inside = true;
            for c in &base.0 {
                let mut t: Coord = c.iter().zip(shift).map(|(a, s)| a + s - 1).collect();
                if opts.boundary == Boundary::Periodic {
                    for x in t.iter_mut() {
                        *x = (*x - 1).rem_euclid(l) + 1;
                    }
                }
                match lat.index_of(&t) {
                    Some(i) => idx.push(i),
                    None => {
                        inside = false;
                        break;
                    }
                }
            }
            if !inside {
                continue;
            }
            idx.sort_unstable();
            idx.dedup();
            // a periodic translate that folds onto itself is not a range of the same shape
            if idx.len() == base.0.len() {
                ranges.push(idx);
            }
        }
    }
    ranges.sort();
    ranges.dedup();
    Ok(RangeFamily {
        label: label.to_string(),
        base_sets: base_sets.to_vec(),
        ranges,
    })
}

/// The nearest-neighbor bond family `B_L`.
pub fn nearest_neighbor_bonds(lat: &Lattice) -> RangeFamily {
    let bases: Vec<BaseSet> = (0..lat.dim()).map(|k| BaseSet::unit_bond(lat.dim(), k)).collect();
    build_ranges_with(lat, &bases, RangeOptions::default(), "B")
        .expect("unit bonds are valid base sets")
}
