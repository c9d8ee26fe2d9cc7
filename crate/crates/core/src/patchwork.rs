//! Overlapping patch grids, column-wise grouping and overlap averaging.
//!
//! A group collects every patch sharing one column (x) start. Its patches are
//! stacked along mode 3 in ascending row (y) order, giving 4th-order tensors
//! `x × y × band × patch`.

use thiserror::Error;

use crate::tensor::{DenseTensor, TensorError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PatchError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchGrid {
    pub image_w: usize,
    pub image_h: usize,
    pub patch: usize,
    pub overlap: usize,
    pub sf: usize,
    /// x offsets, one per group.
    pub col_starts: Vec<usize>,
    /// y offsets, one per patch within a group.
    pub row_starts: Vec<usize>,
}

/// Starts `0, s, 2s, …` while the patch fits, plus `size - m` if the last
/// regular patch stops short of the edge.
pub fn tile_starts(size: usize, m: usize, stride: usize) -> Vec<usize> {
    let mut starts: Vec<usize> = (0..).map(|k| k * stride).take_while(|&s| s + m <= size).collect();
    if let Some(&last) = starts.last() {
        if last + m < size {
            starts.push(size - m);
        }
    }
    starts
}

impl PatchGrid {
    pub fn plan(w: usize, h: usize, m: usize, p: usize, sf: usize) -> Result<Self, PatchError> {
        let bad = |msg: String| Err(PatchError::InvalidGrid(msg));
        if sf == 0 || m == 0 {
            return bad(format!("patch {m} and scale factor {sf} must be positive"));
        }
        if m <= p {
            return bad(format!("patch {m} must exceed overlap {p}"));
        }
        if !m.is_multiple_of(sf) || !p.is_multiple_of(sf) {
            return bad(format!("scale factor {sf} must divide patch {m} and overlap {p}"));
        }
        if !w.is_multiple_of(sf) || !h.is_multiple_of(sf) {
            return bad(format!("scale factor {sf} must divide image size {w}x{h}"));
        }
        if m > w.min(h) {
            return bad(format!("patch {m} exceeds image size {w}x{h}"));
        }
        let stride = m - p;
        let col_starts = tile_starts(w, m, stride);
        let row_starts = tile_starts(h, m, stride);
        Ok(Self {
            image_w: w,
            image_h: h,
            patch: m,
            overlap: p,
            sf,
            col_starts,
            row_starts,
        })
    }

    pub fn stride(&self) -> usize {
        self.patch - self.overlap
    }

    /// Number of groups `K`.
    pub fn groups(&self) -> usize {
        self.col_starts.len()
    }

    /// Patches per group `I4`.
    pub fn patches_per_group(&self) -> usize {
        self.row_starts.len()
    }

    pub fn lr_patch(&self) -> usize {
        self.patch / self.sf
    }
}

/// One group's observed tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupTensors {
    pub index: usize,
    /// `m/sf × m/sf × S × I4`.
    pub h: DenseTensor,
    /// `m × m × s × I4`.
    pub m: DenseTensor,
}

/// Stacks the patches of column group `k` from a 3rd-order image.
fn stack_group(img: &DenseTensor, x0: usize, rows: &[usize], m: usize) -> Result<DenseTensor, PatchError> {
    let s = img.shape();
    let (w, h, bands) = (s[0], s[1], s[2]);
    let data = img.data();
    let mut out = Vec::with_capacity(m * m * bands * rows.len());
    for &y0 in rows {
        for b in 0..bands {
            for y in y0..y0 + m {
                let base = x0 + w * (y + h * b);
                out.extend_from_slice(&data[base..base + m]);
            }
        }
    }
    Ok(DenseTensor::new(vec![m, m, bands, rows.len()], out)?)
}

fn check_image(img: &DenseTensor, w: usize, h: usize, what: &str) -> Result<(), PatchError> {
    let s = img.shape();
    if s.len() != 3 || s[0] != w || s[1] != h {
        return Err(PatchError::Shape(format!("{what} is {s:?}, expected {w}x{h}xB")));
    }
    Ok(())
}

/// Splits the HR-MSI and LR-HSI into per-group tensors.
pub fn extract_groups(hsi: &DenseTensor, msi: &DenseTensor, grid: &PatchGrid) -> Result<Vec<GroupTensors>, PatchError> {
    let sf = grid.sf;
    check_image(msi, grid.image_w, grid.image_h, "MSI")?;
    check_image(hsi, grid.image_w / sf, grid.image_h / sf, "HSI")?;
    let lr_rows: Vec<usize> = grid.row_starts.iter().map(|r| r / sf).collect();
    grid.col_starts
        .iter()
        .enumerate()
        .map(|(k, &x0)| {
            Ok(GroupTensors {
                index: k,
                h: stack_group(hsi, x0 / sf, &lr_rows, grid.lr_patch())?,
                m: stack_group(msi, x0, &grid.row_starts, grid.patch)?,
            })
        })
        .collect()
}

/// Splits a full-resolution image into per-group tensors (no degradation).
pub fn extract_image(img: &DenseTensor, grid: &PatchGrid) -> Result<Vec<DenseTensor>, PatchError> {
    check_image(img, grid.image_w, grid.image_h, "image")?;
    grid.col_starts
        .iter()
        .map(|&x0| stack_group(img, x0, &grid.row_starts, grid.patch))
        .collect()
}

/// Averages overlapping group patches back into a `W × H × S` image.
/// `groups[k]` must correspond to `grid.col_starts[k]`.
pub fn aggregate(groups: &[DenseTensor], grid: &PatchGrid) -> Result<DenseTensor, PatchError> {
    if groups.len() != grid.groups() {
        return Err(PatchError::Shape(format!(
            "{} groups given, grid has {}",
            groups.len(),
            grid.groups()
        )));
    }
    let bands = groups
        .first()
        .map(|g| g.shape().get(2).copied().unwrap_or(0))
        .unwrap_or(0);
    let mut acc = Aggregator::new(grid, bands);
    for (k, g) in groups.iter().enumerate() {
        acc.add(k, g)?;
    }
    acc.finish()
}

/// Incremental form of [`aggregate`]: groups can be added one at a time in
/// any order, so fused group tensors need not all be held at once.
#[derive(Debug, Clone)]
pub struct Aggregator<'g> {
    grid: &'g PatchGrid,
    bands: usize,
    sum: Vec<f64>,
    count: Vec<u32>,
    seen: Vec<bool>,
}

impl<'g> Aggregator<'g> {
    pub fn new(grid: &'g PatchGrid, bands: usize) -> Self {
        let n = grid.image_w * grid.image_h;
        Self {
            grid,
            bands,
            sum: vec![0.0; n * bands],
            count: vec![0; n],
            seen: vec![false; grid.groups()],
        }
    }

    pub fn add(&mut self, k: usize, g: &DenseTensor) -> Result<(), PatchError> {
        let grid = self.grid;
        let (m, bands) = (grid.patch, self.bands);
        if k >= grid.groups() || self.seen[k] {
            return Err(PatchError::Shape(format!("group {k} is out of range or repeated")));
        }
        if g.shape() != [m, m, bands, grid.patches_per_group()] {
            return Err(PatchError::Shape(format!(
                "group tensor {:?}, expected [{m}, {m}, {bands}, {}]",
                g.shape(),
                grid.patches_per_group()
            )));
        }
        self.seen[k] = true;
        let (w, h) = (grid.image_w, grid.image_h);
        let x0 = grid.col_starts[k];
        let d = g.data();
        let mut src = 0;
        for &y0 in &grid.row_starts {
            for b in 0..bands {
                for y in y0..y0 + m {
                    let base = x0 + w * (y + h * b);
                    for (acc, v) in self.sum[base..base + m].iter_mut().zip(&d[src..src + m]) {
                        *acc += v;
                    }
                    src += m;
                }
            }
            for y in y0..y0 + m {
                for c in &mut self.count[x0 + w * y..x0 + w * y + m] {
                    *c += 1;
                }
            }
        }
        Ok(())
    }

    pub fn finish(self) -> Result<DenseTensor, PatchError> {
        if let Some(k) = self.seen.iter().position(|s| !s) {
            return Err(PatchError::Shape(format!("group {k} was never added")));
        }
        assert!(self.count.iter().all(|&c| c > 0), "patch grid leaves pixels uncovered");
        let n = self.count.len();
        let mut sum = self.sum;
        for b in 0..self.bands {
            for (v, &c) in sum[b * n..(b + 1) * n].iter_mut().zip(&self.count) {
                *v /= c as f64;
            }
        }
        Ok(DenseTensor::new(
            vec![self.grid.image_w, self.grid.image_h, self.bands],
            sum,
        )?)
    }
}
