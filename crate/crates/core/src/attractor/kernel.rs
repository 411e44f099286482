//! Local kernels of an attractor or transition matrix.
//!
//! Column `j` of a matrix with hop radius `r` is a set of weights indexed by
//! the displacement of the destination cell from `j`. Away from walls and
//! obstacles every column is the same translated pattern `K_*`; the rest get
//! their own kernel `K_b`.

use std::collections::VecDeque;
use std::fmt::Write as _;

use super::AttractorMatrix;
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::sparse::SparseColumns;

/// Grid displacement `(d_row, d_col)`.
pub type Offset = (isize, isize);

/// Weights of one column keyed by destination offset.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    radius: usize,
    entries: Vec<(Offset, f64)>,
    window: Vec<f64>,
}

impl Kernel {
    pub fn new(radius: usize, mut entries: Vec<(Offset, f64)>) -> Result<Self> {
        entries.sort_by_key(|&(o, _)| o);
        let side = 2 * radius + 1;
        let mut window = vec![0.0; side * side];
        for w in entries.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::KernelExtraction(format!(
                    "duplicate offset {:?}",
                    w[0].0
                )));
            }
        }
        for &((dr, dc), v) in &entries {
            if dr.unsigned_abs() > radius || dc.unsigned_abs() > radius {
                return Err(Error::KernelExtraction(format!(
                    "offset ({dr}, {dc}) outside radius {radius}"
                )));
            }
            window[slot(radius, (dr, dc))] = v;
        }
        Ok(Self {
            radius,
            entries,
            window,
        })
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    /// Nonzero entries in offset order.
    pub fn entries(&self) -> &[(Offset, f64)] {
        &self.entries
    }

    /// `k_δ`; zero outside the support.
    #[inline]
    pub fn get(&self, offset: Offset) -> f64 {
        let r = self.radius;
        if offset.0.unsigned_abs() > r || offset.1.unsigned_abs() > r {
            return 0.0;
        }
        self.window[slot(r, offset)]
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn scaled(&self, factor: f64) -> Self {
        Self {
            radius: self.radius,
            entries: self.entries.iter().map(|&(o, v)| (o, v * factor)).collect(),
            window: self.window.iter().map(|v| v * factor).collect(),
        }
    }
}

#[inline]
fn slot(radius: usize, (dr, dc): Offset) -> usize {
    let side = 2 * radius + 1;
    (dr + radius as isize) as usize * side + (dc + radius as isize) as usize
}

/// Generic kernel plus per-cell boundary kernels.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelTable {
    pub target: usize,
    pub radius: usize,
    pub beta: f64,
    pub epsilon: f64,
    /// Polynomial coefficients `κ_1 … κ_r` of the underlying design.
    pub coefficients: Vec<f64>,
    /// Factor already applied to every weight (`n` for weight matrices).
    pub scale: f64,
    generic: Kernel,
    /// `Some` for boundary cells, `None` where the generic kernel applies.
    boundary: Vec<Option<Kernel>>,
}

impl KernelTable {
    pub fn generic(&self) -> &Kernel {
        &self.generic
    }

    pub fn len(&self) -> usize {
        self.boundary.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boundary.is_empty()
    }

    pub fn is_boundary(&self, cell: usize) -> bool {
        self.boundary[cell].is_some()
    }

    pub fn boundary_cells(&self) -> impl Iterator<Item = usize> + '_ {
        self.boundary
            .iter()
            .enumerate()
            .filter(|(_, k)| k.is_some())
            .map(|(i, _)| i)
    }

    /// Kernel a robot standing on `cell` applies.
    #[inline]
    pub fn kernel_for(&self, cell: usize) -> &Kernel {
        self.boundary[cell].as_ref().unwrap_or(&self.generic)
    }

    /// Copy with every weight multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            scale: self.scale * factor,
            generic: self.generic.scaled(factor),
            boundary: self
                .boundary
                .iter()
                .map(|k| k.as_ref().map(|k| k.scaled(factor)))
                .collect(),
            coefficients: self.coefficients.clone(),
            ..*self
        }
    }

    /// Rebuilds the matrix the kernels were taken from.
    pub fn to_matrix(&self, env: &Environment) -> Result<SparseColumns> {
        if env.len() != self.len() {
            return Err(Error::ShapeMismatch {
                expected: env.len(),
                got: self.len(),
            });
        }
        let mut cols = Vec::with_capacity(env.len());
        for j in 0..env.len() {
            let (r, c) = env.coord(j);
            let mut col = Vec::new();
            for &((dr, dc), v) in self.kernel_for(j).entries() {
                let rr = r as isize + dr;
                let cc = c as isize + dc;
                let i = (rr >= 0 && cc >= 0)
                    .then(|| env.index_of(rr as usize, cc as usize))
                    .flatten()
                    .ok_or_else(|| {
                        Error::KernelExtraction(format!(
                            "kernel of cell ({r}, {c}) points at ({rr}, {cc}), which is not free"
                        ))
                    })?;
                col.push((i, v));
            }
            cols.push(col);
        }
        Ok(SparseColumns::from_columns(env.len(), cols))
    }
}

/// Splits `m` into a verified generic kernel and per-cell boundary kernels.
///
/// A cell is irregular when it is missing a neighbour slot. A column only
/// depends on transition columns within `r − 1` hops, so every cell at least
/// `r` hops from the nearest irregular cell is expected to carry the generic
/// kernel; this is checked entry by entry.
pub fn extract_kernels(env: &Environment, m: &AttractorMatrix) -> Result<KernelTable> {
    let n = env.len();
    if m.dim() != n {
        return Err(Error::ShapeMismatch {
            expected: n,
            got: m.dim(),
        });
    }
    let r = m.radius;
    let full = env.full_degree();
    let irregular: Vec<usize> = (0..n).filter(|&k| env.neighbours(k).len() < full).collect();
    let dist = multi_source_hops(env, &irregular);
    let interior: Vec<bool> = dist.iter().map(|d| d.is_none_or(|d| d >= r)).collect();

    let column_kernel = |j: usize| -> Result<Kernel> {
        let entries = m
            .matrix()
            .column(j)
            .iter()
            .map(|&(i, v)| (env.offset(j, i), v))
            .collect();
        Kernel::new(r, entries).map_err(|_| {
            let (row, col) = env.coord(j);
            Error::KernelExtraction(format!(
                "column of cell ({row}, {col}) reaches beyond radius {r}"
            ))
        })
    };

    let mut generic: Option<Kernel> = None;
    let mut boundary = Vec::with_capacity(n);
    for j in 0..n {
        let k = column_kernel(j)?;
        if !interior[j] {
            boundary.push(Some(k));
            continue;
        }
        match &generic {
            None => generic = Some(k),
            Some(g) if *g == k => {}
            Some(_) => {
                let (row, col) = env.coord(j);
                return Err(Error::KernelExtraction(format!(
                    "interior cell ({row}, {col}) does not match the generic kernel"
                )));
            }
        }
        boundary.push(None);
    }

    Ok(KernelTable {
        target: m.target,
        radius: r,
        beta: m.beta,
        epsilon: m.epsilon,
        coefficients: m.coefficients.clone(),
        scale: 1.0,
        generic: generic.unwrap_or(Kernel::new(r, Vec::new())?),
        boundary,
    })
}

fn multi_source_hops(env: &Environment, sources: &[usize]) -> Vec<Option<usize>> {
    let mut dist = vec![None; env.len()];
    let mut queue = VecDeque::new();
    for &s in sources {
        dist[s] = Some(0);
        queue.push_back(s);
    }
    while let Some(u) = queue.pop_front() {
        let d = dist[u].unwrap();
        for &v in env.neighbours(u) {
            if dist[v].is_none() {
                dist[v] = Some(d + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

/// Plain-text form: a header, the generic kernel, then one block per
/// boundary cell keyed by its `(row, col)`. Weights are written in
/// shortest round-trip form.
pub fn write_kernel_table(table: &KernelTable, env: &Environment) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "kernel-table");
    let _ = writeln!(s, "target {}", table.target);
    let _ = writeln!(s, "radius {}", table.radius);
    let _ = writeln!(s, "beta {:e}", table.beta);
    let _ = writeln!(s, "epsilon {:e}", table.epsilon);
    let coeffs: Vec<String> = table
        .coefficients
        .iter()
        .map(|k| format!("{k:e}"))
        .collect();
    let _ = writeln!(s, "coefficients {}", coeffs.join(" "));
    let _ = writeln!(s, "scale {:e}", table.scale);
    let _ = writeln!(s, "cells {}", table.len());
    let block = |s: &mut String, head: String, k: &Kernel| {
        let _ = writeln!(s, "{head}");
        for &((dr, dc), v) in k.entries() {
            let _ = writeln!(s, "{dr} {dc} {v:e}");
        }
        let _ = writeln!(s, "end");
    };
    block(&mut s, "generic".into(), &table.generic);
    for j in table.boundary_cells() {
        let (r, c) = env.coord(j);
        block(&mut s, format!("boundary {r} {c}"), table.kernel_for(j));
    }
    s
}

/// Inverse of [`write_kernel_table`].
pub fn parse_kernel_table(text: &str, env: &Environment) -> Result<KernelTable> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('%'));
    let perr = |line: usize, msg: String| Error::Parse { line, msg };

    let mut expect = |key: &str| -> Result<(usize, Vec<String>)> {
        let (ln, l) = lines
            .next()
            .ok_or_else(|| perr(0, format!("missing `{key}`")))?;
        let mut w = l.split_whitespace();
        if w.next() != Some(key) {
            return Err(perr(ln, format!("expected `{key}`, found `{l}`")));
        }
        Ok((ln, w.map(str::to_owned).collect()))
    };
    fn one<T: std::str::FromStr>(ln: usize, v: &[String]) -> Result<T> {
        match v {
            [x] => x.parse().map_err(|_| Error::Parse {
                line: ln,
                msg: format!("bad value `{x}`"),
            }),
            _ => Err(Error::Parse {
                line: ln,
                msg: "expected a single value".into(),
            }),
        }
    }

    expect("kernel-table")?;
    let (ln, v) = expect("target")?;
    let target: usize = one(ln, &v)?;
    let (ln, v) = expect("radius")?;
    let radius: usize = one(ln, &v)?;
    let (ln, v) = expect("beta")?;
    let beta: f64 = one(ln, &v)?;
    let (ln, v) = expect("epsilon")?;
    let epsilon: f64 = one(ln, &v)?;
    let (ln, v) = expect("coefficients")?;
    let coefficients = v
        .iter()
        .map(|x| {
            x.parse::<f64>()
                .map_err(|_| perr(ln, format!("bad coefficient `{x}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    let (ln, v) = expect("scale")?;
    let scale: f64 = one(ln, &v)?;
    let (ln, v) = expect("cells")?;
    let cells: usize = one(ln, &v)?;
    if cells != env.len() {
        return Err(perr(
            ln,
            format!("table has {cells} cells, environment has {}", env.len()),
        ));
    }

    let mut generic = None;
    let mut boundary: Vec<Option<Kernel>> = vec![None; cells];
    while let Some((ln, head)) = lines.next() {
        let words: Vec<&str> = head.split_whitespace().collect();
        let cell = match words.as_slice() {
            ["generic"] if generic.is_none() => None,
            ["boundary", r, c] => {
                let r: usize = r.parse().map_err(|_| perr(ln, format!("bad row `{r}`")))?;
                let c: usize = c
                    .parse()
                    .map_err(|_| perr(ln, format!("bad column `{c}`")))?;
                let j = env
                    .index_of(r, c)
                    .ok_or_else(|| perr(ln, format!("({r}, {c}) is not a free cell")))?;
                if boundary[j].is_some() {
                    return Err(perr(ln, format!("duplicate kernel for ({r}, {c})")));
                }
                Some(j)
            }
            _ => return Err(perr(ln, format!("unexpected `{head}`"))),
        };
        let mut entries = Vec::new();
        loop {
            let (eln, l) = lines
                .next()
                .ok_or_else(|| perr(ln, "kernel block is not closed by `end`".into()))?;
            if l == "end" {
                break;
            }
            let w: Vec<&str> = l.split_whitespace().collect();
            let [dr, dc, v] = w.as_slice() else {
                return Err(perr(eln, format!("expected `dr dc weight`, found `{l}`")));
            };
            let bad = || perr(eln, format!("bad kernel entry `{l}`"));
            entries.push((
                (
                    dr.parse::<isize>().map_err(|_| bad())?,
                    dc.parse::<isize>().map_err(|_| bad())?,
                ),
                v.parse::<f64>().map_err(|_| bad())?,
            ));
        }
        let k = Kernel::new(radius, entries).map_err(|e| perr(ln, e.to_string()))?;
        match cell {
            None => generic = Some(k),
            Some(j) => boundary[j] = Some(k),
        }
    }
    let generic = generic.ok_or_else(|| perr(0, "missing generic kernel".into()))?;
    Ok(KernelTable {
        target,
        radius,
        beta,
        epsilon,
        coefficients,
        scale,
        generic,
        boundary,
    })
}
