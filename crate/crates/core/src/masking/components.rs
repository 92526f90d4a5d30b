//! Connected-component labelling of binary masks.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::BinaryMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Connectivity {
    /// Face neighbours only.
    Six,
    /// Face, edge and corner neighbours.
    TwentySix,
}

impl Connectivity {
    pub fn offsets(self) -> Vec<[isize; 3]> {
        let mut out = Vec::new();
        for k in -1isize..=1 {
            for j in -1isize..=1 {
                for i in -1isize..=1 {
                    let manhattan = i.abs() + j.abs() + k.abs();
                    let keep = match self {
                        Connectivity::Six => manhattan == 1,
                        Connectivity::TwentySix => manhattan > 0,
                    };
                    if keep {
                        out.push([i, j, k]);
                    }
                }
            }
        }
        out
    }
}

impl TryFrom<u8> for Connectivity {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            6 => Ok(Connectivity::Six),
            26 => Ok(Connectivity::TwentySix),
            other => Err(format!("connectivity must be 6 or 26, got {other}")),
        }
    }
}

impl From<Connectivity> for u8 {
    fn from(c: Connectivity) -> u8 {
        match c {
            Connectivity::Six => 6,
            Connectivity::TwentySix => 26,
        }
    }
}

/// Component labelling. Components are numbered from 1 in order of their
/// smallest linear index; `labels[i] == 0` means background.
#[derive(Debug, Clone)]
pub struct Components {
    pub labels: Vec<u32>,
    /// `sizes[c - 1]` is the voxel count of component `c`.
    pub sizes: Vec<usize>,
}

impl Components {
    pub fn count(&self) -> usize {
        self.sizes.len()
    }

    pub fn mask_of(&self, m: &BinaryMask, label: u32) -> BinaryMask {
        BinaryMask::from_bools(*m.grid(), self.labels.iter().map(|&l| l == label))
    }
}

pub fn label_components(m: &BinaryMask, connectivity: Connectivity) -> Components {
    let grid = *m.grid();
    let neighbours = connectivity.offsets();
    let mut labels = vec![0u32; grid.len()];
    let mut sizes = Vec::new();
    let mut queue = VecDeque::new();
    for seed in 0..grid.len() {
        if !m.is_set(seed) || labels[seed] != 0 {
            continue;
        }
        let label = sizes.len() as u32 + 1;
        labels[seed] = label;
        queue.push_back(seed);
        let mut size = 0;
        while let Some(idx) = queue.pop_front() {
            size += 1;
            let at = grid.coords(idx);
            for &o in &neighbours {
                if let Some(q) = grid.offset_index(at, o) {
                    if m.is_set(q) && labels[q] == 0 {
                        labels[q] = label;
                        queue.push_back(q);
                    }
                }
            }
        }
        sizes.push(size);
    }
    Components { labels, sizes }
}

/// Keeps only the component with the most voxels; ties go to the component
/// whose first voxel has the smallest linear index.
pub fn largest_component(m: &BinaryMask, connectivity: Connectivity) -> Result<BinaryMask> {
    let comps = label_components(m, connectivity);
    let mut best: Option<(u32, usize)> = None;
    for (c, &size) in comps.sizes.iter().enumerate() {
        if best.is_none_or(|(_, s)| size > s) {
            best = Some((c as u32 + 1, size));
        }
    }
    let (label, _) = best.ok_or_else(|| Error::Degenerate("mask has no foreground voxels".into()))?;
    Ok(comps.mask_of(m, label))
}
