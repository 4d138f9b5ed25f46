use std::f64::consts::FRAC_PI_4;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of a spatial state. States are numbered row-major on the grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StateId(pub usize);

impl StateId {
    #[inline]
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One of the eight compass headings a vehicle can command.
///
/// Rows grow northward and columns eastward, so `N` is `(+1 row, 0 col)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Heading {
    N,
    NE,
    E,
    SE,
    S,
    SW,
    W,
    NW,
}

/// Actions are headings.
pub type ActionId = Heading;

impl Heading {
    pub const ALL: [Heading; 8] = [
        Heading::N,
        Heading::NE,
        Heading::E,
        Heading::SE,
        Heading::S,
        Heading::SW,
        Heading::W,
        Heading::NW,
    ];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    #[inline]
    pub fn from_index(i: usize) -> Heading {
        Heading::ALL[i % 8]
    }

    /// `(d_row, d_col)` grid offset.
    pub fn offset(self) -> (i64, i64) {
        match self {
            Heading::N => (1, 0),
            Heading::NE => (1, 1),
            Heading::E => (0, 1),
            Heading::SE => (-1, 1),
            Heading::S => (-1, 0),
            Heading::SW => (-1, -1),
            Heading::W => (0, -1),
            Heading::NW => (1, -1),
        }
    }

    /// Mathematical angle of the heading (east = 0, counter-clockwise).
    pub fn angle(self) -> f64 {
        // N is index 0 at +90 degrees, and indices run clockwise.
        let k = self.index() as f64;
        2.0 * FRAC_PI_4 - k * FRAC_PI_4
    }

    /// Unit vector `(x, y)` = `(east, north)`.
    pub fn unit(self) -> (f64, f64) {
        let (dr, dc) = self.offset();
        let norm = ((dr * dr + dc * dc) as f64).sqrt();
        (dc as f64 / norm, dr as f64 / norm)
    }

    /// Rotates counter-clockwise by `steps` multiples of 45 degrees.
    pub fn rotate_ccw(self, steps: i64) -> Heading {
        Heading::from_index((self.index() as i64 - steps).rem_euclid(8) as usize)
    }

    pub fn name(self) -> &'static str {
        match self {
            Heading::N => "N",
            Heading::NE => "NE",
            Heading::E => "E",
            Heading::SE => "SE",
            Heading::S => "S",
            Heading::SW => "SW",
            Heading::W => "W",
            Heading::NW => "NW",
        }
    }
}

impl fmt::Display for Heading {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Heading {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Heading::ALL
            .into_iter()
            .find(|h| h.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown heading '{s}'")))
    }
}

/// A set of headings stored as a bitmask.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct ActionSet(u8);

impl ActionSet {
    pub const EMPTY: ActionSet = ActionSet(0);
    pub const ALL: ActionSet = ActionSet(0xff);

    pub fn single(a: Heading) -> Self {
        ActionSet(1 << a.index())
    }

    pub fn with(self, a: Heading) -> Self {
        ActionSet(self.0 | (1 << a.index()))
    }

    #[inline]
    pub fn contains(self, a: Heading) -> bool {
        self.0 & (1 << a.index()) != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn first(self) -> Option<Heading> {
        self.iter().next()
    }

    /// Iterates in `Heading::ALL` order.
    pub fn iter(self) -> impl Iterator<Item = Heading> {
        Heading::ALL.into_iter().filter(move |a| self.contains(*a))
    }
}

impl FromIterator<Heading> for ActionSet {
    fn from_iter<I: IntoIterator<Item = Heading>>(iter: I) -> Self {
        iter.into_iter().fold(ActionSet::EMPTY, ActionSet::with)
    }
}

/// Rectangular spatial grid. Cell centres sit at `(col, row) * cell_size`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    rows: usize,
    cols: usize,
    cell_size: f64,
}

impl Grid {
    pub fn new(rows: usize, cols: usize) -> Result<Self> {
        Self::with_cell_size(rows, cols, 1.0)
    }

    pub fn with_cell_size(rows: usize, cols: usize, cell_size: f64) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidModel(format!(
                "grid must be non-empty, got {rows}x{cols}"
            )));
        }
        if !(cell_size > 0.0 && cell_size.is_finite()) {
            return Err(Error::InvalidModel(format!(
                "cell size must be positive, got {cell_size}"
            )));
        }
        Ok(Self {
            rows,
            cols,
            cell_size,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn state(&self, row: usize, col: usize) -> Option<StateId> {
        (row < self.rows && col < self.cols).then(|| StateId(row * self.cols + col))
    }

    pub fn coords(&self, s: StateId) -> (usize, usize) {
        (s.0 / self.cols, s.0 % self.cols)
    }

    /// Physical position `(x, y)` of the cell centre.
    pub fn position(&self, s: StateId) -> (f64, f64) {
        let (r, c) = self.coords(s);
        (c as f64 * self.cell_size, r as f64 * self.cell_size)
    }

    pub fn states(&self) -> impl Iterator<Item = StateId> {
        (0..self.len()).map(StateId)
    }

    pub fn neighbor(&self, s: StateId, h: Heading) -> Option<StateId> {
        let (r, c) = self.coords(s);
        let (dr, dc) = h.offset();
        let nr = r as i64 + dr;
        let nc = c as i64 + dc;
        if nr < 0 || nc < 0 || nr >= self.rows as i64 || nc >= self.cols as i64 {
            return None;
        }
        Some(StateId(nr as usize * self.cols + nc as usize))
    }

    /// Headings that keep the vehicle on the grid.
    pub fn inbound_headings(&self, s: StateId) -> ActionSet {
        Heading::ALL
            .into_iter()
            .filter(|h| self.neighbor(s, *h).is_some())
            .collect()
    }

    /// Heading that moves `from` onto the adjacent cell `to`, if any.
    pub fn heading_between(&self, from: StateId, to: StateId) -> Option<Heading> {
        let (r0, c0) = self.coords(from);
        let (r1, c1) = self.coords(to);
        let dr = r1 as i64 - r0 as i64;
        let dc = c1 as i64 - c0 as i64;
        Heading::ALL.into_iter().find(|h| h.offset() == (dr, dc))
    }

    /// Euclidean distance between cell centres in physical units.
    pub fn distance(&self, a: StateId, b: StateId) -> f64 {
        let (xa, ya) = self.position(a);
        let (xb, yb) = self.position(b);
        (xa - xb).hypot(ya - yb)
    }
}
