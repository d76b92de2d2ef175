//! BEV-space geometry: the ego-centered grid, the angular sector partition,
//! projection of 3D sampling points into 2D ROIs, angular objectness labels,
//! and exact 90-degree rotations of grids and trajectories.
//!
//! Conventions: the ego frame has x lateral (right positive) and y forward.
//! Sector angles are measured clockwise from the forward axis, so sector 0
//! faces the driving direction. Rotations are counterclockwise-positive and
//! are pure index permutations / sign swaps (bit-exact and invertible).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::Vec2;
use crate::scenario::{Camera, Roi};

/// Heights (meters) of the 3D sampling points used for mask projection.
pub const SAMPLING_HEIGHTS: [f64; 4] = [0.0, 0.5, 1.0, 1.5];

#[derive(Debug, Error)]
pub enum BevError {
    #[error("theta {0} does not divide 360 into a whole number of sectors")]
    BadTheta(f64),
    #[error("sector index of the origin is undefined")]
    DegenerateInput,
    #[error("operation requires a square grid, got {0}x{1}")]
    NonSquare(usize, usize),
    #[error("unsupported rotation angle {0}; expected a multiple of 90 in [0, 270]")]
    BadRotation(u32),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
}

/// Ego-centered raster. Rows run top to bottom, so +y (forward) is toward
/// row 0; cell centers never coincide with the ego origin for even sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BevGrid {
    pub height: usize,
    pub width: usize,
    /// Meters per cell.
    pub resolution: f64,
}

impl BevGrid {
    pub fn new(height: usize, width: usize, resolution: f64) -> Self {
        assert!(height % 2 == 0 && width % 2 == 0, "grid sides must be even");
        assert!(resolution > 0.0);
        BevGrid { height, width, resolution }
    }

    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    /// Ego-frame coordinates of the cell center at (row, col).
    pub fn cell_center(&self, row: usize, col: usize) -> Vec2 {
        Vec2::new(
            (col as f64 + 0.5 - self.width as f64 / 2.0) * self.resolution,
            (self.height as f64 / 2.0 - row as f64 - 0.5) * self.resolution,
        )
    }
}

/// Per-cell binary objectness raster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectMask {
    pub grid: BevGrid,
    /// Row-major, values in {0, 1}.
    pub values: Vec<u8>,
}

impl ObjectMask {
    pub fn zeros(grid: BevGrid) -> Self {
        ObjectMask { values: vec![0; grid.cells()], grid }
    }

    pub fn at(&self, row: usize, col: usize) -> u8 {
        self.values[row * self.grid.width + col]
    }
}

/// Per-sector binary objectness label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngularLabel {
    pub values: Vec<u8>,
}

impl AngularLabel {
    pub fn k(&self) -> usize {
        self.values.len()
    }
}

/// Sector index of an ego-frame point: floor of the clockwise angle from the
/// forward axis divided by theta.
///
/// ```
/// use sectordrive::bevgeo::sector_index;
/// use sectordrive::geom::Vec2;
/// assert_eq!(sector_index(Vec2::new(0.0, 5.0), 4.0).unwrap(), 0);
/// assert_eq!(sector_index(Vec2::new(5.0, 0.0), 4.0).unwrap(), 22);
/// assert_eq!(sector_index(Vec2::new(0.0, -5.0), 4.0).unwrap(), 45);
/// ```
pub fn sector_index(point: Vec2, theta_deg: f64) -> Result<usize, BevError> {
    let k = sector_count(theta_deg)?;
    if point.x == 0.0 && point.y == 0.0 {
        return Err(BevError::DegenerateInput);
    }
    // atan2(x, y) is the clockwise angle from +y.
    let mut angle = point.x.atan2(point.y).to_degrees();
    if angle < 0.0 {
        angle += 360.0;
    }
    Ok(((angle / theta_deg).floor() as usize).min(k - 1))
}

/// Number of sectors for a divisor angle.
pub fn sector_count(theta_deg: f64) -> Result<usize, BevError> {
    if theta_deg <= 0.0 {
        return Err(BevError::BadTheta(theta_deg));
    }
    let k = 360.0 / theta_deg;
    if (k - k.round()).abs() > 1e-9 {
        return Err(BevError::BadTheta(theta_deg));
    }
    Ok(k.round() as usize)
}

/// The angular partition of a grid: per-cell sector indices and a K x N
/// gather table (cell indices padded with invalid slots).
#[derive(Debug, Clone, PartialEq)]
pub struct SectorPartition {
    pub grid: BevGrid,
    pub theta_deg: f64,
    pub k: usize,
    /// Max cells over all sectors (the padded row length).
    pub n: usize,
    /// Sector index per cell, row-major.
    pub cell_sector: Vec<usize>,
    /// Flattened K x N table: `Some(cell)` or padding.
    pub gather: Vec<Option<usize>>,
}

impl SectorPartition {
    /// Validity mask of the gather table, flattened K x N.
    pub fn validity(&self) -> Vec<bool> {
        self.gather.iter().map(|g| g.is_some()).collect()
    }

    /// Cells of one sector.
    pub fn sector_cells(&self, sector: usize) -> impl Iterator<Item = usize> + '_ {
        self.gather[sector * self.n..(sector + 1) * self.n].iter().flatten().copied()
    }
}

/// Assign every cell to its sector and build the padded gather table.
/// N is the maximum sector population, computed from the grid.
pub fn build_partition(grid: BevGrid, theta_deg: f64) -> Result<SectorPartition, BevError> {
    let k = sector_count(theta_deg)?;
    let mut cell_sector = Vec::with_capacity(grid.cells());
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); k];
    for row in 0..grid.height {
        for col in 0..grid.width {
            let s = sector_index(grid.cell_center(row, col), theta_deg)?;
            cell_sector.push(s);
            buckets[s].push(row * grid.width + col);
        }
    }
    let n = buckets.iter().map(|b| b.len()).max().unwrap_or(0);
    let mut gather = Vec::with_capacity(k * n);
    for bucket in &buckets {
        for i in 0..n {
            gather.push(bucket.get(i).copied());
        }
    }
    Ok(SectorPartition { grid, theta_deg, k, n, cell_sector, gather })
}

/// Project every cell center at each sampling height into the cameras and
/// mark the cell when any point lands with positive depth inside any ROI.
pub fn project_rois_to_mask(
    rois: &[Roi],
    cameras: &[Camera],
    grid: BevGrid,
    heights: &[f64],
) -> ObjectMask {
    assert!(!heights.is_empty(), "need at least one sampling height");
    let mut mask = ObjectMask::zeros(grid);
    let by_camera: Vec<(&Camera, Vec<&Roi>)> = cameras
        .iter()
        .map(|c| (c, rois.iter().filter(|r| r.camera_id == c.id).collect()))
        .collect();
    for row in 0..grid.height {
        for col in 0..grid.width {
            let p = grid.cell_center(row, col);
            'cell: for &z in heights {
                for (camera, cam_rois) in &by_camera {
                    if cam_rois.is_empty() {
                        continue;
                    }
                    if let Some((u, v, _)) = camera.project(p, z) {
                        for roi in cam_rois {
                            if u >= roi.x_min && u <= roi.x_max && v >= roi.y_min && v <= roi.y_max
                            {
                                mask.values[row * grid.width + col] = 1;
                                break 'cell;
                            }
                        }
                    }
                }
            }
        }
    }
    mask
}

/// label[k] = 1 iff any cell of sector k is positive in the mask.
pub fn mask_to_angular_label(
    mask: &ObjectMask,
    partition: &SectorPartition,
) -> Result<AngularLabel, BevError> {
    if mask.grid != partition.grid {
        return Err(BevError::GridMismatch(format!(
            "mask {}x{} vs partition {}x{}",
            mask.grid.height, mask.grid.width, partition.grid.height, partition.grid.width
        )));
    }
    let mut values = vec![0u8; partition.k];
    for (cell, sector) in partition.cell_sector.iter().enumerate() {
        if mask.values[cell] != 0 {
            values[*sector] = 1;
        }
    }
    Ok(AngularLabel { values })
}

/// Counterclockwise rotation of a square raster by a multiple of 90 degrees.
/// Pure index permutation; rotating by 90 four times is the identity.
pub fn rotate_grid<T: Copy + Default>(
    values: &[T],
    height: usize,
    width: usize,
    r_deg: u32,
) -> Result<Vec<T>, BevError> {
    if height != width {
        return Err(BevError::NonSquare(height, width));
    }
    if !matches!(r_deg, 90 | 180 | 270) {
        return Err(BevError::BadRotation(r_deg));
    }
    let n = height;
    let mut out = vec![T::default(); values.len()];
    for i in 0..n {
        for j in 0..n {
            let src = match r_deg {
                90 => (j, n - 1 - i),
                180 => (n - 1 - i, n - 1 - j),
                _ => (n - 1 - j, i),
            };
            out[i * n + j] = values[src.0 * n + src.1];
        }
    }
    Ok(out)
}

/// Counterclockwise rotation of ego-frame waypoints by r in {0,90,180,270}.
/// Exact sign/coordinate swaps, so `rot_back(rotate_traj(x, r), r) == x`
/// bit-for-bit.
///
/// ```
/// use sectordrive::bevgeo::{rotate_traj, rot_back};
/// use sectordrive::geom::Vec2;
/// let t = vec![Vec2::new(1.0, 2.0)];
/// let r90 = rotate_traj(&t, 90).unwrap();
/// assert_eq!((r90[0].x, r90[0].y), (-2.0, 1.0));
/// assert_eq!(rot_back(&r90, 90).unwrap(), t);
/// ```
pub fn rotate_traj(traj: &[Vec2], r_deg: u32) -> Result<Vec<Vec2>, BevError> {
    let rot = |p: &Vec2| -> Result<Vec2, BevError> {
        Ok(match r_deg {
            0 => *p,
            90 => Vec2::new(-p.y, p.x),
            180 => Vec2::new(-p.x, -p.y),
            270 => Vec2::new(p.y, -p.x),
            _ => return Err(BevError::BadRotation(r_deg)),
        })
    };
    traj.iter().map(rot).collect()
}

/// Inverse of [`rotate_traj`].
pub fn rot_back(traj: &[Vec2], r_deg: u32) -> Result<Vec<Vec2>, BevError> {
    let inverse = match r_deg {
        0 => 0,
        90 => 270,
        180 => 180,
        270 => 90,
        _ => return Err(BevError::BadRotation(r_deg)),
    };
    rotate_traj(traj, inverse)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::Camera;
    use proptest::prelude::*;

    #[test]
    fn sector_index_frozen_cases() {
        // Clockwise-from-forward convention, theta = 30 degrees.
        let cases = [
            ((1.0, 0.1), 2),
            ((-0.1, -1.0), 6),
            ((0.5, -0.5), 4),
            ((-3.0, 0.0), 9),
            ((0.72, 2.9), 0),
        ];
        for ((x, y), want) in cases {
            assert_eq!(sector_index(Vec2::new(x, y), 30.0).unwrap(), want, "({x}, {y})");
        }
    }

    #[test]
    fn sector_count_accepts_divisors_only() {
        assert_eq!(sector_count(4.0).unwrap(), 90);
        assert_eq!(sector_count(90.0).unwrap(), 4);
        assert!(sector_count(7.0).is_err());
        assert!(sector_count(0.0).is_err());
        assert!(sector_count(-30.0).is_err());
        assert!(sector_index(Vec2::ZERO, 30.0).is_err());
    }

    #[test]
    fn quadrant_partition_of_4x4_grid() {
        let grid = BevGrid::new(4, 4, 1.0);
        let part = build_partition(grid, 90.0).unwrap();
        // Row-major sectors of a 4x4 grid under the quadrant partition,
        // worked out by hand from the cell centers at +-0.5 / +-1.5.
        let want = [3, 3, 0, 0, 3, 3, 0, 0, 2, 2, 1, 1, 2, 2, 1, 1];
        assert_eq!(part.cell_sector, want);
        assert_eq!((part.k, part.n), (4, 4));
    }

    #[test]
    fn partition_covers_each_cell_once() {
        let grid = BevGrid::new(16, 16, 0.5);
        let part = build_partition(grid, 15.0).unwrap();
        let mut seen = vec![0usize; grid.cells()];
        for s in 0..part.k {
            for cell in part.sector_cells(s) {
                seen[cell] += 1;
                assert_eq!(part.cell_sector[cell], s);
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
        assert_eq!(part.validity().iter().filter(|v| **v).count(), grid.cells());
    }

    #[test]
    fn mask_to_label_marks_exactly_touched_sectors() {
        let grid = BevGrid::new(8, 8, 1.0);
        let part = build_partition(grid, 90.0).unwrap();
        let mut mask = ObjectMask::zeros(grid);
        // One positive cell, front-right quadrant: row 1, col 6 -> (+2.5, +2.5).
        mask.values[grid.width + 6] = 1;
        let label = mask_to_angular_label(&mask, &part).unwrap();
        assert_eq!(label.values, vec![1, 0, 0, 0]);
        assert_eq!(label.k(), 4);
    }

    #[test]
    fn label_rejects_mismatched_grid() {
        let part = build_partition(BevGrid::new(8, 8, 1.0), 90.0).unwrap();
        let mask = ObjectMask::zeros(BevGrid::new(4, 4, 1.0));
        assert!(mask_to_angular_label(&mask, &part).is_err());
    }

    #[test]
    fn camera_projection_frozen_case() {
        // focal = 100 / tan(45 deg) = 100; point (2, 11.5) at z = 0.5 seen
        // from the front camera at (0, 1.5): depth 10, u = 100 + 100*2/10,
        // v = 50 + 100*(1.5-0.5)/10.
        let cam = Camera::new("front", Vec2::new(0.0, 1.5), 0.0, 90.0, 200, 100);
        let (u, v, depth) = cam.project(Vec2::new(2.0, 11.5), 0.5).unwrap();
        assert!((u - 120.0).abs() < 1e-9);
        assert!((v - 60.0).abs() < 1e-9);
        assert!((depth - 10.0).abs() < 1e-9);
        assert!(cam.project(Vec2::new(0.0, 1.5), 0.0).is_none(), "zero depth");
        assert!(cam.project(Vec2::new(0.0, -5.0), 0.0).is_none(), "behind");
    }

    #[test]
    fn roi_projection_marks_cell_under_box_and_not_far_cells() {
        let grid = BevGrid::new(16, 16, 1.0);
        let cam = Camera::new("front", Vec2::new(0.0, 1.5), 0.0, 90.0, 200, 100);
        // Project the center of the cell at (row 3, col 10) = (+2.5, +4.5)
        // and wrap a tight ROI around its sampled heights.
        let target = grid.cell_center(3, 10);
        let mut bounds = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for &z in &SAMPLING_HEIGHTS {
            let (u, v, _) = cam.project(target, z).unwrap();
            bounds = (bounds.0.min(u), bounds.1.max(u), bounds.2.min(v), bounds.3.max(v));
        }
        let roi = crate::scenario::Roi {
            camera_id: "front".into(),
            x_min: bounds.0 - 1.0,
            x_max: bounds.1 + 1.0,
            y_min: bounds.2 - 1.0,
            y_max: bounds.3 + 1.0,
            confidence: 1.0,
            source_agent: None,
        };
        let mask = project_rois_to_mask(&[roi], &[cam], grid, &SAMPLING_HEIGHTS);
        assert_eq!(mask.at(3, 10), 1);
        // Cells behind the ego cannot fall in a front-camera ROI.
        for col in 0..grid.width {
            assert_eq!(mask.at(15, col), 0);
        }
    }

    #[test]
    fn grid_rotation_matches_center_rotation() {
        // Independent oracle: the value landing in a destination cell must
        // come from the source cell whose center is the destination center
        // rotated backwards.
        let grid = BevGrid::new(6, 6, 0.5);
        let values: Vec<usize> = (0..grid.cells()).collect();
        for r in [90u32, 180, 270] {
            let rotated = rotate_grid(&values, 6, 6, r).unwrap();
            for row in 0..6 {
                for col in 0..6 {
                    let src_center = rot_back(&[grid.cell_center(row, col)], r).unwrap()[0];
                    let src_col = (src_center.x / grid.resolution + 3.0 - 0.5).round() as usize;
                    let src_row = (3.0 - 0.5 - src_center.y / grid.resolution).round() as usize;
                    assert_eq!(rotated[row * 6 + col], values[src_row * 6 + src_col]);
                }
            }
        }
    }

    #[test]
    fn rotations_reject_bad_input() {
        assert!(rotate_grid(&[0u8; 12], 3, 4, 90).is_err());
        assert!(rotate_grid(&[0u8; 16], 4, 4, 45).is_err());
        assert!(rotate_traj(&[Vec2::ZERO], 30).is_err());
    }

    proptest! {
        #[test]
        fn four_quarter_turns_are_identity(vals in proptest::collection::vec(0u8..2, 64)) {
            let mut v = vals.clone();
            for _ in 0..4 {
                v = rotate_grid(&v, 8, 8, 90).unwrap();
            }
            prop_assert_eq!(v, vals);
        }

        #[test]
        fn traj_rotation_round_trips(
            pts in proptest::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 1..8),
            r in prop_oneof![Just(0u32), Just(90), Just(180), Just(270)],
        ) {
            let traj: Vec<Vec2> = pts.iter().map(|&(x, y)| Vec2::new(x, y)).collect();
            let back = rot_back(&rotate_traj(&traj, r).unwrap(), r).unwrap();
            prop_assert_eq!(back, traj);
        }

        #[test]
        fn sector_rotation_shifts_index(
            x in -30.0f64..30.0, y in -30.0f64..30.0,
            quarter in 1u32..4,
        ) {
            prop_assume!(x.hypot(y) > 1e-6);
            let theta = 30.0;
            let k = sector_count(theta).unwrap();
            let p = Vec2::new(x, y);
            let s0 = sector_index(p, theta).unwrap();
            let rotated = rotate_traj(&[p], quarter * 90).unwrap()[0];
            let s1 = sector_index(rotated, theta).unwrap();
            // A counterclockwise quarter turn moves a point 90/theta sectors
            // counterclockwise, i.e. subtracts 3 from the clockwise index.
            let shift = (90.0 / theta) as usize * quarter as usize;
            prop_assert_eq!(s1, (s0 + k - (shift % k)) % k);
        }
    }
}
