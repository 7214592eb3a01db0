//! Voronoi tessellations over a subset of covariates.
//!
//! Only nearest-center queries are ever needed, so a tessellation is just a
//! list of centers in the covariate subspace plus one output per cell. No cell
//! polytopes are built.
//!
//! Centers produced by the structure moves are *anchored*: each one is the
//! projection of a specific training row, and that row index is kept next to
//! the coordinates. Anchors keep every cell populated (the anchor row sits in
//! its own cell) and make every move exactly reversible.

use rand::Rng;

use crate::error::{Result, VortesError};
use crate::matrix::Matrix;
use crate::scalar::Real;

/// Index of a cell (equivalently, of its center) within one tessellation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellId(pub usize);

/// What the cell outputs of a tessellation mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    /// Additive contribution to the conditional mean.
    Mean,
    /// Multiplicative factor of the conditional variance; strictly positive.
    Variance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tessellation<T> {
    dims: Vec<usize>,
    /// Row-major `b x dims.len()`.
    centers: Vec<T>,
    outputs: Vec<T>,
    /// Training row each center was copied from; empty for hand-built
    /// tessellations.
    anchors: Vec<usize>,
}

impl<T: Real> Tessellation<T> {
    /// Builds a tessellation from explicit center coordinates.
    pub fn new(dims: Vec<usize>, centers: Vec<Vec<T>>, outputs: Vec<T>) -> Result<Self> {
        let d = dims.len();
        let mut flat = Vec::with_capacity(centers.len() * d);
        for (k, c) in centers.iter().enumerate() {
            if c.len() != d {
                return Err(VortesError::InvalidTessellation(format!(
                    "center {k} has {} coordinates for {d} dimensions",
                    c.len()
                )));
            }
            flat.extend_from_slice(c);
        }
        let tess = Self {
            dims,
            centers: flat,
            outputs,
            anchors: Vec::new(),
        };
        tess.check_shape()?;
        for &v in &tess.centers {
            if !(v >= T::zero() && v <= T::one()) {
                return Err(VortesError::InvalidTessellation(format!(
                    "center coordinate {v} outside [0, 1]"
                )));
            }
        }
        Ok(tess)
    }

    /// Builds a tessellation whose centers are the `dims`-projections of the
    /// given training rows.
    pub fn anchored(
        dims: Vec<usize>,
        anchors: Vec<usize>,
        x: &Matrix<T>,
        outputs: Vec<T>,
    ) -> Result<Self> {
        if let Some(&bad) = dims.iter().find(|&&c| c >= x.cols()) {
            return Err(VortesError::InvalidTessellation(format!(
                "covariate {bad} out of range for {} columns",
                x.cols()
            )));
        }
        if let Some(&bad) = anchors.iter().find(|&&r| r >= x.rows()) {
            return Err(VortesError::InvalidTessellation(format!(
                "anchor row {bad} out of range for {} rows",
                x.rows()
            )));
        }
        let mut centers = Vec::with_capacity(anchors.len() * dims.len());
        for &r in &anchors {
            let row = x.row(r);
            centers.extend(dims.iter().map(|&c| row[c]));
        }
        let tess = Self {
            dims,
            centers,
            outputs,
            anchors,
        };
        tess.check_shape()?;
        if tess.has_duplicate_centers() {
            return Err(VortesError::InvalidTessellation(
                "two centers share a location".into(),
            ));
        }
        Ok(tess)
    }

    fn check_shape(&self) -> Result<()> {
        let b = self.outputs.len();
        if b == 0 {
            return Err(VortesError::InvalidTessellation("no centers".into()));
        }
        if self.dims.is_empty() {
            return Err(VortesError::InvalidTessellation("no dimensions".into()));
        }
        if self.centers.len() != b * self.dims.len() {
            return Err(VortesError::InvalidTessellation(format!(
                "{} outputs for {} centers",
                b,
                self.centers.len() / self.dims.len()
            )));
        }
        let mut seen = self.dims.clone();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(VortesError::InvalidTessellation(
                "duplicate covariate in dims".into(),
            ));
        }
        if !self.outputs.iter().all(|v| v.is_finite()) {
            return Err(VortesError::InvalidTessellation("non-finite output".into()));
        }
        Ok(())
    }

    /// Checks the role-specific invariant on the outputs.
    pub fn validate_role(&self, role: Role) -> Result<()> {
        if role == Role::Variance {
            if let Some(v) = self.outputs.iter().find(|&&v| !(v > T::zero())) {
                return Err(VortesError::InvalidTessellation(format!(
                    "variance output {v} is not positive"
                )));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    #[inline]
    pub fn num_cells(&self) -> usize {
        self.outputs.len()
    }

    #[inline]
    pub fn outputs(&self) -> &[T] {
        &self.outputs
    }

    pub fn anchors(&self) -> &[usize] {
        &self.anchors
    }

    pub fn is_anchored(&self) -> bool {
        self.anchors.len() == self.outputs.len()
    }

    #[inline]
    pub fn center(&self, k: usize) -> &[T] {
        let d = self.dims.len();
        &self.centers[k * d..(k + 1) * d]
    }

    pub fn set_outputs(&mut self, outputs: Vec<T>) -> Result<()> {
        if outputs.len() != self.num_cells() {
            return Err(VortesError::DimensionMismatch(format!(
                "{} outputs for {} cells",
                outputs.len(),
                self.num_cells()
            )));
        }
        self.outputs = outputs;
        Ok(())
    }

    #[inline]
    fn sq_dist(&self, k: usize, x: &[T]) -> T {
        let c = self.center(k);
        let mut acc = T::zero();
        for (&dim, &cv) in self.dims.iter().zip(c) {
            let diff = x[dim] - cv;
            acc = acc + diff * diff;
        }
        acc
    }

    /// Nearest center and its squared distance; ties go to the lowest index.
    #[inline]
    fn nearest(&self, x: &[T]) -> (usize, T) {
        let mut best = 0;
        let mut best_d = self.sq_dist(0, x);
        for k in 1..self.num_cells() {
            let d = self.sq_dist(k, x);
            if d < best_d {
                best = k;
                best_d = d;
            }
        }
        (best, best_d)
    }

    /// Cell of `x` (a full covariate vector): the nearest center in the
    /// tessellation's subspace, lowest index on ties.
    #[inline]
    pub fn assign_cell(&self, x: &[T]) -> CellId {
        CellId(self.nearest(x).0)
    }

    #[inline]
    pub fn evaluate(&self, x: &[T]) -> T {
        self.outputs[self.nearest(x).0]
    }

    pub fn cell_counts(&self, x: &Matrix<T>) -> Vec<usize> {
        let mut counts = vec![0; self.num_cells()];
        for row in x.iter_rows() {
            counts[self.nearest(row).0] += 1;
        }
        counts
    }

    /// Assigns every row of `x`, also recording how many rows sit exactly on
    /// each center.
    pub fn assign_all(&self, x: &Matrix<T>) -> Assignment {
        let b = self.num_cells();
        let mut cells = Vec::with_capacity(x.rows());
        let mut counts = vec![0u32; b];
        let mut on_center = vec![0u32; b];
        for row in x.iter_rows() {
            let (k, d) = self.nearest(row);
            cells.push(k as u32);
            counts[k] += 1;
            if d == T::zero() {
                on_center[k] += 1;
            }
        }
        Assignment {
            cells,
            counts,
            on_center,
        }
    }

    fn has_duplicate_centers(&self) -> bool {
        let b = self.num_cells();
        (0..b).any(|i| (i + 1..b).any(|j| self.center(i) == self.center(j)))
    }

    fn is_on_center(&self, row: &[T], cell: usize) -> bool {
        self.sq_dist(cell, row) == T::zero()
    }

    /// Applies a fully specified move. Returns `None` when the move is
    /// structurally impossible (out-of-range choices, emptying the
    /// tessellation, or collapsing two centers onto one location).
    ///
    /// New cells get output zero and every other cell keeps its output; the
    /// sampler redraws all outputs after a structure step anyway.
    pub fn apply(&self, mv: &Move, x: &Matrix<T>) -> Option<Self> {
        if !self.is_anchored() {
            return None;
        }
        let p = x.cols();
        let mut dims = self.dims.clone();
        let mut anchors = self.anchors.clone();
        let mut outputs = self.outputs.clone();
        match *mv {
            Move::AddCenter { row } => {
                if row >= x.rows() {
                    return None;
                }
                anchors.push(row);
                outputs.push(T::zero());
            }
            Move::RemoveCenter { center } => {
                if self.num_cells() == 1 || center >= self.num_cells() {
                    return None;
                }
                anchors.remove(center);
                outputs.remove(center);
            }
            Move::AddCovariate { covariate } => {
                if covariate >= p || dims.contains(&covariate) {
                    return None;
                }
                dims.push(covariate);
            }
            Move::RemoveCovariate { position } => {
                if dims.len() == 1 || position >= dims.len() {
                    return None;
                }
                dims.remove(position);
            }
            Move::SwapCovariate {
                position,
                covariate,
            } => {
                if position >= dims.len() || covariate >= p || dims.contains(&covariate) {
                    return None;
                }
                dims[position] = covariate;
            }
            Move::MoveCenter { center, row } => {
                if center >= self.num_cells() || row >= x.rows() {
                    return None;
                }
                anchors[center] = row;
            }
        }
        Self::anchored(dims, anchors, x, outputs).ok()
    }

    /// Move that undoes `mv` when applied to `self.apply(mv)`.
    pub fn inverse_move(&self, mv: &Move) -> Move {
        match *mv {
            Move::AddCenter { .. } => Move::RemoveCenter {
                center: self.num_cells(),
            },
            Move::RemoveCenter { center } => Move::AddCenter {
                row: self.anchors[center],
            },
            Move::AddCovariate { .. } => Move::RemoveCovariate {
                position: self.dims.len(),
            },
            Move::RemoveCovariate { position } => Move::AddCovariate {
                covariate: self.dims[position],
            },
            Move::SwapCovariate { position, .. } => Move::SwapCovariate {
                position,
                covariate: self.dims[position],
            },
            Move::MoveCenter { center, .. } => Move::MoveCenter {
                center,
                row: self.anchors[center],
            },
        }
    }
}

/// Per-row cell membership of a data matrix under one tessellation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    pub cells: Vec<u32>,
    pub counts: Vec<u32>,
    /// Rows lying exactly on each center.
    pub on_center: Vec<u32>,
}

impl Assignment {
    /// Rows whose location is not already taken by a center.
    pub fn available_rows(&self) -> usize {
        self.cells.len() - self.on_center.iter().map(|&c| c as usize).sum::<usize>()
    }

    pub fn has_empty_cell(&self) -> bool {
        self.counts.contains(&0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MoveKind {
    AddCenter,
    RemoveCenter,
    AddCovariate,
    RemoveCovariate,
    SwapCovariate,
    MoveCenter,
}

impl MoveKind {
    pub const ALL: [MoveKind; 6] = [
        MoveKind::AddCenter,
        MoveKind::RemoveCenter,
        MoveKind::AddCovariate,
        MoveKind::RemoveCovariate,
        MoveKind::SwapCovariate,
        MoveKind::MoveCenter,
    ];

    /// Default selection probabilities, in `ALL` order.
    pub const DEFAULT_PROBS: [f64; 6] = [0.2, 0.2, 0.2, 0.2, 0.1, 0.1];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn reverse(self) -> MoveKind {
        match self {
            MoveKind::AddCenter => MoveKind::RemoveCenter,
            MoveKind::RemoveCenter => MoveKind::AddCenter,
            MoveKind::AddCovariate => MoveKind::RemoveCovariate,
            MoveKind::RemoveCovariate => MoveKind::AddCovariate,
            MoveKind::SwapCovariate => MoveKind::SwapCovariate,
            MoveKind::MoveCenter => MoveKind::MoveCenter,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MoveKind::AddCenter => "add_center",
            MoveKind::RemoveCenter => "remove_center",
            MoveKind::AddCovariate => "add_covariate",
            MoveKind::RemoveCovariate => "remove_covariate",
            MoveKind::SwapCovariate => "swap_covariate",
            MoveKind::MoveCenter => "move_center",
        }
    }

    /// Draws a kind from (unnormalized) selection probabilities.
    pub fn sample<R: Rng + ?Sized>(probs: &[f64; 6], rng: &mut R) -> MoveKind {
        let total: f64 = probs.iter().sum();
        let mut u = rng.random::<f64>() * total;
        for (kind, &p) in Self::ALL.iter().zip(probs) {
            if u < p {
                return *kind;
            }
            u -= p;
        }
        // Only reachable through rounding at the upper end.
        *Self::ALL
            .iter()
            .zip(probs)
            .rev()
            .find(|(_, &p)| p > 0.0)
            .map(|(k, _)| k)
            .unwrap_or(&MoveKind::MoveCenter)
    }
}

/// A concrete structure change, with every random choice resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Move {
    AddCenter { row: usize },
    RemoveCenter { center: usize },
    AddCovariate { covariate: usize },
    RemoveCovariate { position: usize },
    SwapCovariate { position: usize, covariate: usize },
    MoveCenter { center: usize, row: usize },
}

impl Move {
    pub fn kind(&self) -> MoveKind {
        match self {
            Move::AddCenter { .. } => MoveKind::AddCenter,
            Move::RemoveCenter { .. } => MoveKind::RemoveCenter,
            Move::AddCovariate { .. } => MoveKind::AddCovariate,
            Move::RemoveCovariate { .. } => MoveKind::RemoveCovariate,
            Move::SwapCovariate { .. } => MoveKind::SwapCovariate,
            Move::MoveCenter { .. } => MoveKind::MoveCenter,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Proposal<T> {
    pub candidate: Tessellation<T>,
    /// `log q(current | candidate) - log q(candidate | current)`, given the
    /// move kind. Move-kind selection probabilities are not included.
    pub log_proposal_ratio: f64,
    pub kind: MoveKind,
    pub mv: Move,
    /// Assignment of the training rows under `candidate`.
    pub assignment: Assignment,
}

/// Draws a move of the given kind and builds the candidate.
///
/// Returns `Ok(None)` when the move is infeasible for this tessellation; the
/// caller should treat that as a rejected step.
pub fn propose_move<T: Real, R: Rng + ?Sized>(
    tess: &Tessellation<T>,
    kind: MoveKind,
    x: &Matrix<T>,
    rng: &mut R,
) -> Result<Option<Proposal<T>>> {
    let current = tess.assign_all(x);
    propose_move_with(tess, &current, kind, x, rng)
}

/// As [`propose_move`], reusing a known assignment of `x` under `tess`.
pub fn propose_move_with<T: Real, R: Rng + ?Sized>(
    tess: &Tessellation<T>,
    current: &Assignment,
    kind: MoveKind,
    x: &Matrix<T>,
    rng: &mut R,
) -> Result<Option<Proposal<T>>> {
    if !tess.is_anchored() {
        return Err(VortesError::InvalidTessellation(
            "structure moves need an anchored tessellation".into(),
        ));
    }
    if current.cells.len() != x.rows() {
        return Err(VortesError::DimensionMismatch(
            "assignment does not match data".into(),
        ));
    }
    let p = x.cols();
    let b = tess.num_cells();
    let d = tess.dims().len();
    let mv = match kind {
        MoveKind::AddCenter => match pick_available_row(tess, current, x, rng) {
            Some(row) => Move::AddCenter { row },
            None => return Ok(None),
        },
        MoveKind::RemoveCenter => {
            if b == 1 {
                return Ok(None);
            }
            Move::RemoveCenter {
                center: rng.random_range(0..b),
            }
        }
        MoveKind::AddCovariate => {
            if d == p {
                return Ok(None);
            }
            Move::AddCovariate {
                covariate: pick_unused(tess.dims(), p, rng),
            }
        }
        MoveKind::RemoveCovariate => {
            if d == 1 {
                return Ok(None);
            }
            Move::RemoveCovariate {
                position: rng.random_range(0..d),
            }
        }
        MoveKind::SwapCovariate => {
            if d == p {
                return Ok(None);
            }
            Move::SwapCovariate {
                position: rng.random_range(0..d),
                covariate: pick_unused(tess.dims(), p, rng),
            }
        }
        MoveKind::MoveCenter => {
            let center = rng.random_range(0..b);
            match pick_available_row(tess, current, x, rng) {
                Some(row) => Move::MoveCenter { center, row },
                None => return Ok(None),
            }
        }
    };
    let Some(candidate) = tess.apply(&mv, x) else {
        return Ok(None);
    };
    let assignment = candidate.assign_all(x);
    let ln = |v: usize| (v as f64).ln();
    let avail = current.available_rows();
    let avail_new = assignment.available_rows();
    let log_proposal_ratio = match kind {
        // forward: 1/avail; reverse: remove the new center, 1/(b+1)
        MoveKind::AddCenter => ln(avail) - ln(b + 1),
        // forward: 1/b; reverse: re-add the dropped row, 1/avail'
        MoveKind::RemoveCenter => ln(b) - ln(avail_new),
        MoveKind::AddCovariate => ln(p - d) - ln(d + 1),
        MoveKind::RemoveCovariate => ln(d) - ln(p - d + 1),
        MoveKind::SwapCovariate => 0.0,
        MoveKind::MoveCenter => ln(avail) - ln(avail_new),
    };
    Ok(Some(Proposal {
        candidate,
        log_proposal_ratio,
        kind,
        mv,
        assignment,
    }))
}

fn pick_unused<R: Rng + ?Sized>(dims: &[usize], p: usize, rng: &mut R) -> usize {
    let k = rng.random_range(0..p - dims.len());
    (0..p)
        .filter(|c| !dims.contains(c))
        .nth(k)
        .expect("k indexes an unused covariate")
}

/// Uniform draw among rows whose projection is not already a center.
fn pick_available_row<T: Real, R: Rng + ?Sized>(
    tess: &Tessellation<T>,
    current: &Assignment,
    x: &Matrix<T>,
    rng: &mut R,
) -> Option<usize> {
    let n = x.rows();
    let avail = current.available_rows();
    if avail == 0 {
        return None;
    }
    // Rejection sampling is exact; the scan below only bounds the work when
    // most rows coincide with centers.
    for _ in 0..32 {
        let r = rng.random_range(0..n);
        if !tess.is_on_center(x.row(r), current.cells[r] as usize) {
            return Some(r);
        }
    }
    let k = rng.random_range(0..avail);
    (0..n)
        .filter(|&r| !tess.is_on_center(x.row(r), current.cells[r] as usize))
        .nth(k)
}
