//! Discrete environments and their Markov-chain transition matrices.
//!
//! Cells are indexed row-major over the full grid and then compacted to the
//! free cells, so index `k` always refers to the `k`-th free cell in reading
//! order. A line environment is a single row.

use std::collections::VecDeque;
use std::fmt;

use crate::error::{Error, Result};
use crate::sparse::SparseColumns;

/// Self-transition probability of the line chain.
pub const LINE_STAY: f64 = 0.2;
/// Probability of moving to each side from an interior line cell.
pub const LINE_STEP: f64 = 0.4;
/// Probability of leaving a line end cell for its only neighbour.
pub const LINE_END_STEP: f64 = 0.8;

/// Self-transition probability of the grid chain.
pub const GRID_STAY: f64 = 0.04;
pub const GRID_ORTHOGONAL: f64 = 0.14;
pub const GRID_DIAGONAL: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvKind {
    Line1D,
    Grid2D,
}

/// Free cells of a line segment or an obstacle grid, with their neighbour
/// structure.
#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    kind: EnvKind,
    rows: usize,
    cols: usize,
    obstacle: Vec<bool>,
    coords: Vec<(usize, usize)>,
    index: Vec<Option<usize>>,
    adjacency: Vec<Vec<usize>>,
}

impl Environment {
    /// A line segment of `n` cells.
    pub fn line(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyEnvironment);
        }
        Self::build(EnvKind::Line1D, 1, n, vec![false; n])
    }

    /// A `rows × cols` grid; `obstacle` is row-major with `true` for blocked
    /// cells.
    pub fn grid(rows: usize, cols: usize, obstacle: Vec<bool>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidDimension(format!("grid {rows}x{cols}")));
        }
        if obstacle.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                expected: rows * cols,
                got: obstacle.len(),
            });
        }
        Self::build(EnvKind::Grid2D, rows, cols, obstacle)
    }

    /// Obstacle-free grid.
    pub fn open_grid(rows: usize, cols: usize) -> Result<Self> {
        Self::grid(rows, cols, vec![false; rows * cols])
    }

    fn build(kind: EnvKind, rows: usize, cols: usize, obstacle: Vec<bool>) -> Result<Self> {
        let mut coords = Vec::new();
        let mut index = vec![None; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                if !obstacle[r * cols + c] {
                    index[r * cols + c] = Some(coords.len());
                    coords.push((r, c));
                }
            }
        }
        if coords.is_empty() {
            return Err(Error::EmptyEnvironment);
        }

        let adjacency = coords
            .iter()
            .map(|&(r, c)| {
                let mut nb: Vec<usize> = neighbour_offsets(kind)
                    .iter()
                    .filter_map(|&(dr, dc, _)| {
                        let rr = r as isize + dr;
                        let cc = c as isize + dc;
                        if rr < 0 || cc < 0 || rr >= rows as isize || cc >= cols as isize {
                            return None;
                        }
                        index[rr as usize * cols + cc as usize]
                    })
                    .collect();
                nb.sort_unstable();
                nb
            })
            .collect();

        let env = Self {
            kind,
            rows,
            cols,
            obstacle,
            coords,
            index,
            adjacency,
        };
        let reached = env.hop_distances_from(0);
        if let Some(k) = reached.iter().position(Option::is_none) {
            let (r, c) = env.coords[k];
            return Err(Error::Disconnected(format!(
                "cell ({r}, {c}) is unreachable from ({}, {})",
                env.coords[0].0, env.coords[0].1
            )));
        }
        Ok(env)
    }

    pub fn kind(&self) -> EnvKind {
        self.kind
    }

    /// Number of free cells.
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_obstacle(&self, row: usize, col: usize) -> bool {
        self.obstacle[row * self.cols + col]
    }

    /// Grid coordinates `(row, col)` of free cell `k`.
    pub fn coord(&self, k: usize) -> (usize, usize) {
        self.coords[k]
    }

    /// Free-cell index at grid position, if that position is free.
    pub fn index_of(&self, row: usize, col: usize) -> Option<usize> {
        if row >= self.rows || col >= self.cols {
            return None;
        }
        self.index[row * self.cols + col]
    }

    pub fn neighbours(&self, k: usize) -> &[usize] {
        &self.adjacency[k]
    }

    /// Displacement from cell `from` to cell `to` in grid coordinates.
    pub fn offset(&self, from: usize, to: usize) -> (isize, isize) {
        let (r0, c0) = self.coords[from];
        let (r1, c1) = self.coords[to];
        (r1 as isize - r0 as isize, c1 as isize - c0 as isize)
    }

    /// Number of neighbour slots of a cell away from every border.
    pub fn full_degree(&self) -> usize {
        neighbour_offsets(self.kind).len()
    }

    /// BFS hop counts from `src`; `None` marks unreachable cells.
    pub fn hop_distances_from(&self, src: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.len()];
        dist[src] = Some(0);
        let mut queue = VecDeque::from([src]);
        while let Some(u) = queue.pop_front() {
            let d = dist[u].unwrap();
            for &v in &self.adjacency[u] {
                if dist[v].is_none() {
                    dist[v] = Some(d + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// All-pairs hop counts; `n²` entries, fine at desk scale.
    pub fn hop_matrix(&self) -> Vec<Vec<usize>> {
        (0..self.len())
            .map(|i| {
                self.hop_distances_from(i)
                    .into_iter()
                    .map(|d| d.expect("environment is connected"))
                    .collect()
            })
            .collect()
    }

    /// Parses the plain-text environment format: a header line `line N` or
    /// `grid R C`, followed for grids by `R` lines of `C` characters from
    /// `.` (free) and `#` (obstacle).
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim_end()))
            .filter(|(_, l)| !l.is_empty());
        let (lineno, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "missing header".into(),
        })?;
        let words: Vec<&str> = header.split_whitespace().collect();
        match words.as_slice() {
            ["line", n] => {
                let n = parse_usize(n, lineno)?;
                if let Some((l, _)) = lines.next() {
                    return Err(Error::Parse {
                        line: l,
                        msg: "unexpected content after line header".into(),
                    });
                }
                Self::line(n)
            }
            ["grid", r, c] => {
                let rows = parse_usize(r, lineno)?;
                let cols = parse_usize(c, lineno)?;
                let obstacle = parse_grid_body(&mut lines, rows, cols, |ch| match ch {
                    '.' => Some(false),
                    '#' => Some(true),
                    _ => None,
                })?;
                Self::grid(rows, cols, obstacle)
            }
            _ => Err(Error::Parse {
                line: lineno,
                msg: format!("expected `line N` or `grid R C`, found `{header}`"),
            }),
        }
    }

    /// Parses a shape overlay for this environment: same header and layout
    /// as the environment file, with `X` marking target cells and `.` the
    /// rest. Obstacles may be written as `#` and must agree with the map.
    /// Returns a 0/1 indicator over free cells.
    pub fn parse_overlay(&self, text: &str) -> Result<Vec<f64>> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim_end()))
            .filter(|(_, l)| !l.is_empty());
        let (lineno, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "missing header".into(),
        })?;
        let words: Vec<&str> = header.split_whitespace().collect();
        let (rows, cols) = match (self.kind, words.as_slice()) {
            (EnvKind::Line1D, ["line", n]) => (1, parse_usize(n, lineno)?),
            (EnvKind::Grid2D, ["grid", r, c]) => (parse_usize(r, lineno)?, parse_usize(c, lineno)?),
            _ => {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("overlay header `{header}` does not match environment"),
                })
            }
        };
        if rows != self.rows || cols != self.cols {
            return Err(Error::Parse {
                line: lineno,
                msg: format!(
                    "overlay is {rows}x{cols}, environment is {}x{}",
                    self.rows, self.cols
                ),
            });
        }
        let marks = parse_grid_body(&mut lines, rows, cols, |ch| match ch {
            '.' => Some(0u8),
            'X' => Some(1),
            '#' => Some(2),
            _ => None,
        })?;
        let mut indicator = vec![0.0; self.len()];
        for (pos, &m) in marks.iter().enumerate() {
            let blocked = self.obstacle[pos];
            match (m, blocked) {
                (2, false) | (1, true) => {
                    return Err(Error::Parse {
                        line: lineno + 1 + pos / cols,
                        msg: format!(
                            "overlay disagrees with obstacle map at ({}, {})",
                            pos / cols,
                            pos % cols
                        ),
                    })
                }
                (1, false) => indicator[self.index[pos].unwrap()] = 1.0,
                _ => {}
            }
        }
        Ok(indicator)
    }

    /// Renders a boolean mask over free cells in the overlay format.
    pub fn overlay_text(&self, mask: &[bool]) -> Result<String> {
        if mask.len() != self.len() {
            return Err(Error::ShapeMismatch {
                expected: self.len(),
                got: mask.len(),
            });
        }
        Ok(self.render_chars(|k| if mask[k] { 'X' } else { '.' }))
    }

    /// Header line plus one character per grid position; obstacles are `#`.
    pub(crate) fn render_chars(&self, mut cell: impl FnMut(usize) -> char) -> String {
        let mut out = self.header();
        out.push('\n');
        if self.kind == EnvKind::Line1D {
            out.extend((0..self.len()).map(&mut cell));
            out.push('\n');
            return out;
        }
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.push(match self.index[r * self.cols + c] {
                    Some(k) => cell(k),
                    None => '#',
                });
            }
            out.push('\n');
        }
        out
    }

    fn header(&self) -> String {
        match self.kind {
            EnvKind::Line1D => format!("line {}", self.cols),
            EnvKind::Grid2D => format!("grid {} {}", self.rows, self.cols),
        }
    }
}

impl fmt::Display for Environment {
    /// The environment file format.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            EnvKind::Line1D => writeln!(f, "{}", self.header()),
            EnvKind::Grid2D => f.write_str(&self.render_chars(|_| '.')),
        }
    }
}

fn parse_usize(s: &str, line: usize) -> Result<usize> {
    s.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("`{s}` is not a non-negative integer"),
    })
}

fn parse_grid_body<'a, T>(
    lines: &mut impl Iterator<Item = (usize, &'a str)>,
    rows: usize,
    cols: usize,
    symbol: impl Fn(char) -> Option<T>,
) -> Result<Vec<T>> {
    let mut cells = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let (lineno, line) = lines.next().ok_or(Error::Parse {
            line: r + 2,
            msg: format!("expected {rows} grid rows, found {r}"),
        })?;
        let chars: Vec<char> = line.chars().collect();
        if chars.len() != cols {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected {cols} characters, found {}", chars.len()),
            });
        }
        for ch in chars {
            cells.push(symbol(ch).ok_or(Error::Parse {
                line: lineno,
                msg: format!("unexpected character `{ch}`"),
            })?);
        }
    }
    if let Some((l, _)) = lines.next() {
        return Err(Error::Parse {
            line: l,
            msg: "trailing content after grid".into(),
        });
    }
    Ok(cells)
}

/// `(d_row, d_col, base probability)` for each neighbour slot.
fn neighbour_offsets(kind: EnvKind) -> &'static [(isize, isize, f64)] {
    const LINE: [(isize, isize, f64); 2] = [(0, -1, LINE_STEP), (0, 1, LINE_STEP)];
    const GRID: [(isize, isize, f64); 8] = [
        (-1, -1, GRID_DIAGONAL),
        (-1, 0, GRID_ORTHOGONAL),
        (-1, 1, GRID_DIAGONAL),
        (0, -1, GRID_ORTHOGONAL),
        (0, 1, GRID_ORTHOGONAL),
        (1, -1, GRID_DIAGONAL),
        (1, 0, GRID_ORTHOGONAL),
        (1, 1, GRID_DIAGONAL),
    ];
    match kind {
        EnvKind::Line1D => &LINE,
        EnvKind::Grid2D => &GRID,
    }
}

/// Column-stochastic transition matrix: entry `(i, j)` is the probability of
/// moving from cell `j` to cell `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix(SparseColumns);

impl TransitionMatrix {
    pub fn new(columns: SparseColumns) -> Self {
        Self(columns)
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0.get(i, j)
    }

    pub fn sparse(&self) -> &SparseColumns {
        &self.0
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        self.0.mul_vec(x)
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        self.0.to_dense()
    }
}

/// Line chain of `n` cells: interior cells stay with 0.2 and step either way
/// with 0.4; end cells stay with 0.2 and step inward with 0.8.
pub fn build_line_chain(n: usize) -> Result<TransitionMatrix> {
    if n < 2 {
        return Err(Error::InvalidDimension(format!(
            "line chain needs at least 2 cells, got {n}"
        )));
    }
    let cols = (0..n)
        .map(|j| {
            let mut col = vec![(j, LINE_STAY)];
            match j {
                0 => col.push((1, LINE_END_STEP)),
                _ if j == n - 1 => col.push((n - 2, LINE_END_STEP)),
                _ => {
                    col.push((j - 1, LINE_STEP));
                    col.push((j + 1, LINE_STEP));
                }
            }
            col
        })
        .collect();
    Ok(TransitionMatrix(SparseColumns::from_columns(n, cols)))
}

/// Eight-connected grid chain. A cell with every neighbour free moves
/// orthogonally with 0.14, diagonally with 0.10 and stays with 0.04. Mass of
/// blocked neighbour slots is split evenly over the free neighbours; the
/// self-transition stays at 0.04 unless the cell has no neighbours at all.
pub fn build_grid_chain(env: &Environment) -> Result<TransitionMatrix> {
    if env.kind() != EnvKind::Grid2D {
        return Err(Error::InvalidDimension(
            "grid chain requires a grid environment".into(),
        ));
    }
    let n = env.len();
    let cols = (0..n)
        .map(|j| {
            let nb = env.neighbours(j);
            if nb.is_empty() {
                return vec![(j, 1.0)];
            }
            let base: Vec<f64> = nb
                .iter()
                .map(|&i| grid_base_probability(env, j, i))
                .collect();
            let freed = (1.0 - GRID_STAY) - base.iter().sum::<f64>();
            let share = freed / nb.len() as f64;
            let mut col: Vec<(usize, f64)> = nb
                .iter()
                .zip(&base)
                .map(|(&i, &p)| (i, p + share))
                .collect();
            col.push((j, GRID_STAY));
            col
        })
        .collect();
    Ok(TransitionMatrix(SparseColumns::from_columns(n, cols)))
}

fn grid_base_probability(env: &Environment, from: usize, to: usize) -> f64 {
    match env.offset(from, to) {
        (0, _) | (_, 0) => GRID_ORTHOGONAL,
        _ => GRID_DIAGONAL,
    }
}

/// Transition matrix matching the environment kind.
pub fn build_chain(env: &Environment) -> Result<TransitionMatrix> {
    match env.kind() {
        EnvKind::Line1D => build_line_chain(env.len()),
        EnvKind::Grid2D => build_grid_chain(env),
    }
}

/// Shortest-path length between two free cells.
pub fn hop_distance(env: &Environment, i: usize, j: usize) -> Result<usize> {
    if i >= env.len() || j >= env.len() {
        return Err(Error::InvalidDimension(format!(
            "cell index out of range (n = {})",
            env.len()
        )));
    }
    env.hop_distances_from(i)[j]
        .ok_or_else(|| Error::Disconnected(format!("no path from {i} to {j}")))
}
