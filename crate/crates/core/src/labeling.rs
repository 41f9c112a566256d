//! 3D connected-component labeling of lesion masks.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Volume, VolumeKind};

/// Voxel adjacency used to group lesion voxels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Connectivity {
    #[serde(rename = "6")]
    Six,
    #[serde(rename = "18")]
    Eighteen,
    #[default]
    #[serde(rename = "26")]
    TwentySix,
}

impl Connectivity {
    pub fn from_count(n: u32) -> Result<Self> {
        match n {
            6 => Ok(Self::Six),
            18 => Ok(Self::Eighteen),
            26 => Ok(Self::TwentySix),
            _ => Err(Error::InvalidParameter(format!(
                "connectivity must be 6, 18 or 26, got {n}"
            ))),
        }
    }

    pub fn count(self) -> u32 {
        match self {
            Self::Six => 6,
            Self::Eighteen => 18,
            Self::TwentySix => 26,
        }
    }

    /// Neighbor offsets, excluding the origin.
    pub fn offsets(self) -> Vec<[i64; 3]> {
        let max_nonzero = match self {
            Self::Six => 1,
            Self::Eighteen => 2,
            Self::TwentySix => 3,
        };
        let mut out = Vec::with_capacity(self.count() as usize);
        for dz in -1..=1i64 {
            for dy in -1..=1i64 {
                for dx in -1..=1i64 {
                    let nz = [dx, dy, dz].iter().filter(|&&d| d != 0).count();
                    if nz > 0 && nz <= max_nonzero {
                        out.push([dx, dy, dz]);
                    }
                }
            }
        }
        out
    }
}

/// A label volume together with the ids it contains.
#[derive(Debug, Clone, PartialEq)]
pub struct LesionLabelMap {
    volume: Volume,
    lesion_ids: Vec<u32>,
    connectivity: Connectivity,
}

impl LesionLabelMap {
    /// Wrap an existing label volume, e.g. one read from disk.
    ///
    /// Ids are taken as they appear; connectedness of each id is not checked.
    pub fn from_volume(volume: Volume, connectivity: Connectivity) -> Result<Self> {
        volume.ensure_kind(VolumeKind::LabelMap, "label map")?;
        let mut ids: Vec<u32> = volume
            .data()
            .iter()
            .filter(|&&v| v > 0.0)
            .map(|&v| v as u32)
            .collect();
        ids.sort_unstable();
        ids.dedup();
        Ok(Self {
            volume,
            lesion_ids: ids,
            connectivity,
        })
    }

    pub fn volume(&self) -> &Volume {
        &self.volume
    }

    pub fn lesion_ids(&self) -> &[u32] {
        &self.lesion_ids
    }

    pub fn connectivity(&self) -> Connectivity {
        self.connectivity
    }

    pub fn len(&self) -> usize {
        self.lesion_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lesion_ids.is_empty()
    }

    pub fn contains(&self, id: u32) -> bool {
        self.lesion_ids.binary_search(&id).is_ok()
    }

    /// Linear indices of the voxels carrying `id`, in scan order.
    pub fn voxels_of(&self, id: u32) -> Vec<usize> {
        let target = id as f32;
        self.volume
            .data()
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == target)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Label the maximal connected components of a binary mask.
///
/// Components are numbered 1..=K in the order their first voxel appears in a
/// scan with x fastest, then y, then z.
pub fn label_components(mask: &Volume, connectivity: Connectivity) -> Result<LesionLabelMap> {
    mask.ensure_kind(VolumeKind::BinaryMask, "label_components")?;
    let [nx, ny, nz] = mask.dims();
    let offsets = connectivity.offsets();
    let src = mask.data();
    let mut labels = vec![0u32; src.len()];
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..src.len() {
        if src[start] == 0.0 || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            let [x, y, z] = mask.coords(i);
            for o in &offsets {
                let (qx, qy, qz) = (x as i64 + o[0], y as i64 + o[1], z as i64 + o[2]);
                if qx < 0
                    || qy < 0
                    || qz < 0
                    || qx >= nx as i64
                    || qy >= ny as i64
                    || qz >= nz as i64
                {
                    continue;
                }
                let j = mask.index(qx as usize, qy as usize, qz as usize);
                if src[j] != 0.0 && labels[j] == 0 {
                    labels[j] = next;
                    queue.push_back(j);
                }
            }
        }
    }
    let volume = Volume::new(
        mask.dims(),
        mask.spacing(),
        VolumeKind::LabelMap,
        labels.iter().map(|&l| l as f32).collect(),
    )?;
    Ok(LesionLabelMap {
        volume,
        lesion_ids: (1..=next).collect(),
        connectivity,
    })
}
