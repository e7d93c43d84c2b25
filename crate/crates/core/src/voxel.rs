//! Voxelized scenes: global occupancy grids, frame-indexed scene timelines,
//! character-local occupancy windows and the 2-D navigation projection.
//!
//! Indexing: `dims = [nx, nz, ny]` counts voxels along X (length), Z (width)
//! and Y (height). Bits are stored row-major in X, Z, Y order, so the linear
//! index of voxel `(ix, iz, iy)` is `(ix * nz + iz) * ny + iy` and each
//! vertical column is contiguous. A voxel is occupied iff its center lies
//! inside the scene geometry.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, Vec3};

pub const GRID_MAGIC: &[u8; 8] = b"DHSGRID1";

/// Cells per axis of the character-local window.
pub const LOCAL_N: usize = 32;
pub const LOCAL_CELLS: usize = LOCAL_N * LOCAL_N * LOCAL_N;
/// Horizontal half-extent of the local window, meters.
pub const LOCAL_HALF_WIDTH: f64 = 0.6;
/// Vertical extent of the local window above its anchor, meters.
pub const LOCAL_HEIGHT: f64 = 1.2;
pub const LOCAL_CELL: f64 = 2.0 * LOCAL_HALF_WIDTH / LOCAL_N as f64;

pub const DEFAULT_HEIGHT_BAND: (f64, f64) = (0.1, 1.8);
pub const DEFAULT_INFLATION_RADIUS: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: Vec3,
    pub voxel_size: f64,
    /// `[nx, nz, ny]`: voxels along X, Z and Y.
    pub dims: [usize; 3],
}

impl GridSpec {
    pub fn new(origin: Vec3, voxel_size: f64, dims: [usize; 3]) -> Result<Self> {
        let spec = GridSpec {
            origin,
            voxel_size,
            dims,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.voxel_size > 0.0 && self.voxel_size.is_finite()) {
            return Err(Error::config(format!(
                "voxel_size must be positive, got {}",
                self.voxel_size
            )));
        }
        if self.dims.iter().any(|&d| d == 0) {
            return Err(Error::config(format!("grid dims must be >= 1, got {:?}", self.dims)));
        }
        if !geom::is_finite(self.origin) {
            return Err(Error::config("grid origin must be finite"));
        }
        Ok(())
    }

    pub fn nx(&self) -> usize {
        self.dims[0]
    }

    pub fn nz(&self) -> usize {
        self.dims[1]
    }

    pub fn ny(&self) -> usize {
        self.dims[2]
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn linear(&self, ix: usize, iz: usize, iy: usize) -> usize {
        (ix * self.nz() + iz) * self.ny() + iy
    }

    /// World-space center of voxel `(ix, iz, iy)`.
    #[inline]
    pub fn center(&self, ix: usize, iz: usize, iy: usize) -> Vec3 {
        let s = self.voxel_size;
        [
            self.origin[0] + (ix as f64 + 0.5) * s,
            self.origin[1] + (iy as f64 + 0.5) * s,
            self.origin[2] + (iz as f64 + 0.5) * s,
        ]
    }

    /// Voxel `(ix, iz, iy)` containing `p`, or `None` outside the grid.
    #[inline]
    pub fn voxel_of(&self, p: Vec3) -> Option<(usize, usize, usize)> {
        let s = self.voxel_size;
        let fx = ((p[0] - self.origin[0]) / s).floor();
        let fy = ((p[1] - self.origin[1]) / s).floor();
        let fz = ((p[2] - self.origin[2]) / s).floor();
        if !(fx >= 0.0 && fy >= 0.0 && fz >= 0.0) {
            return None;
        }
        let (ix, iy, iz) = (fx as usize, fy as usize, fz as usize);
        if ix >= self.nx() || iz >= self.nz() || iy >= self.ny() {
            return None;
        }
        Some((ix, iz, iy))
    }

    /// World-space `(min, max)` corners of the grid volume.
    pub fn bounds(&self) -> (Vec3, Vec3) {
        let s = self.voxel_size;
        let max = [
            self.origin[0] + self.nx() as f64 * s,
            self.origin[1] + self.ny() as f64 * s,
            self.origin[2] + self.nz() as f64 * s,
        ];
        (self.origin, max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        Aabb { min, max }
    }

    /// Inclusive containment on all faces.
    #[inline]
    pub fn contains(&self, p: Vec3) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }

    pub fn translated(&self, d: Vec3) -> Self {
        Aabb {
            min: geom::add(self.min, d),
            max: geom::add(self.max, d),
        }
    }

    pub fn is_finite(&self) -> bool {
        geom::is_finite(self.min) && geom::is_finite(self.max)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OccupancyGrid {
    spec: GridSpecKey,
    bits: Vec<u64>,
}

// GridSpec holds floats; equality on grids compares the exact bit patterns.
#[derive(Debug, Clone, Copy)]
struct GridSpecKey(GridSpec);

impl PartialEq for GridSpecKey {
    fn eq(&self, other: &Self) -> bool {
        let a = &self.0;
        let b = &other.0;
        a.dims == b.dims
            && a.voxel_size.to_bits() == b.voxel_size.to_bits()
            && (0..3).all(|k| a.origin[k].to_bits() == b.origin[k].to_bits())
    }
}

impl Eq for GridSpecKey {}

impl OccupancyGrid {
    pub fn empty(spec: GridSpec) -> Result<Self> {
        spec.validate()?;
        Ok(OccupancyGrid {
            spec: GridSpecKey(spec),
            bits: vec![0; spec.len().div_ceil(64)],
        })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec.0
    }

    #[inline]
    pub fn get_linear(&self, i: usize) -> bool {
        (self.bits[i >> 6] >> (i & 63)) & 1 == 1
    }

    #[inline]
    pub fn set_linear(&mut self, i: usize, v: bool) {
        if v {
            self.bits[i >> 6] |= 1 << (i & 63);
        } else {
            self.bits[i >> 6] &= !(1 << (i & 63));
        }
    }

    #[inline]
    pub fn get(&self, ix: usize, iz: usize, iy: usize) -> bool {
        self.get_linear(self.spec().linear(ix, iz, iy))
    }

    #[inline]
    pub fn set(&mut self, ix: usize, iz: usize, iy: usize, v: bool) {
        let i = self.spec().linear(ix, iz, iy);
        self.set_linear(i, v);
    }

    pub fn count_occupied(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Occupancy at a world point; points outside the grid read as free.
    #[inline]
    pub fn query(&self, p: Vec3) -> bool {
        match self.spec().voxel_of(p) {
            Some((ix, iz, iy)) => self.get(ix, iz, iy),
            None => false,
        }
    }

    /// Top of the highest occupied voxel in the column containing `(x, z)`
    /// whose center lies at or below `max_y`; `None` for an empty column.
    pub fn support_top(&self, x: f64, z: f64, max_y: f64) -> Option<f64> {
        let spec = self.spec();
        let probe = [x, spec.origin[1], z];
        let (ix, iz, _) = spec.voxel_of(probe)?;
        (0..spec.ny())
            .rev()
            .filter(|&iy| spec.center(ix, iz, iy)[1] <= max_y)
            .find(|&iy| self.get(ix, iz, iy))
            .map(|iy| spec.origin[1] + (iy + 1) as f64 * spec.voxel_size)
    }

    /// Bit-packed payload: voxel `i` in bit `i % 8` of byte `i / 8`.
    pub fn payload_bytes(&self) -> Vec<u8> {
        (0..self.spec().len().div_ceil(8))
            .map(|i| (self.bits[i / 8] >> ((i % 8) * 8)) as u8)
            .collect()
    }

    pub fn from_payload(spec: GridSpec, payload: &[u8]) -> Result<Self> {
        let mut grid = OccupancyGrid::empty(spec)?;
        let n = spec.len();
        if payload.len() != n.div_ceil(8) {
            return Err(Error::format(format!(
                "payload has {} bytes, expected {}",
                payload.len(),
                n.div_ceil(8)
            )));
        }
        for (i, byte) in payload.iter().enumerate() {
            grid.bits[i / 8] |= (*byte as u64) << ((i % 8) * 8);
        }
        // Reject set bits past the last voxel.
        let tail = n % 64;
        if tail != 0 {
            let last = grid.bits.len() - 1;
            if grid.bits[last] >> tail != 0 {
                return Err(Error::format("payload has bits set beyond the grid"));
            }
        }
        Ok(grid)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let spec = self.spec();
        w.write_all(GRID_MAGIC)?;
        for k in 0..3 {
            w.write_f64::<LittleEndian>(spec.origin[k])?;
        }
        w.write_f64::<LittleEndian>(spec.voxel_size)?;
        for k in 0..3 {
            let d = u32::try_from(spec.dims[k]).map_err(|_| Error::format("grid dim exceeds u32"))?;
            w.write_u32::<LittleEndian>(d)?;
        }
        w.write_all(&self.payload_bytes())?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| Error::format("truncated grid header"))?;
        if &magic != GRID_MAGIC {
            return Err(Error::format("bad grid magic"));
        }
        let trunc = |_| Error::format("truncated grid header");
        let mut origin = [0.0; 3];
        for o in origin.iter_mut() {
            *o = r.read_f64::<LittleEndian>().map_err(trunc)?;
        }
        let voxel_size = r.read_f64::<LittleEndian>().map_err(trunc)?;
        let mut dims = [0usize; 3];
        for d in dims.iter_mut() {
            *d = r.read_u32::<LittleEndian>().map_err(trunc)? as usize;
        }
        let spec = GridSpec::new(origin, voxel_size, dims).map_err(|e| Error::format(e.to_string()))?;
        let mut payload = vec![0u8; spec.len().div_ceil(8)];
        r.read_exact(&mut payload).map_err(|_| Error::format("truncated grid payload"))?;
        let mut extra = [0u8; 1];
        if r.read(&mut extra)? != 0 {
            return Err(Error::format("trailing bytes after grid payload"));
        }
        OccupancyGrid::from_payload(spec, &payload)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        OccupancyGrid::read_from(bytes.as_slice())
    }
}

/// Marks every voxel whose center lies inside at least one box.
pub fn build_from_boxes(boxes: &[Aabb], spec: GridSpec) -> Result<OccupancyGrid> {
    let mut grid = OccupancyGrid::empty(spec)?;
    for b in boxes {
        if !b.is_finite() {
            return Err(Error::input("box corners must be finite"));
        }
        // Candidate index range padded by one voxel; exact test per center.
        let range = |axis: usize, n: usize| -> Option<(usize, usize)> {
            let lo = ((b.min[axis] - spec.origin[axis]) / spec.voxel_size - 0.5).floor() - 1.0;
            let hi = ((b.max[axis] - spec.origin[axis]) / spec.voxel_size - 0.5).ceil() + 1.0;
            let lo = lo.max(0.0);
            let hi = hi.min(n as f64 - 1.0);
            (lo <= hi).then_some((lo as usize, hi as usize))
        };
        let (Some((x0, x1)), Some((y0, y1)), Some((z0, z1))) = (
            range(0, spec.nx()),
            range(1, spec.ny()),
            range(2, spec.nz()),
        ) else {
            continue;
        };
        for ix in x0..=x1 {
            for iz in z0..=z1 {
                for iy in y0..=y1 {
                    if b.contains(spec.center(ix, iz, iy)) {
                        grid.set(ix, iz, iy, true);
                    }
                }
            }
        }
    }
    Ok(grid)
}

pub fn query_occupied(grid: &OccupancyGrid, point: Vec3) -> bool {
    grid.query(point)
}

/// Box-scene JSON document accepted by the scene builder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxScene {
    pub voxel_size: f64,
    pub origin: Vec3,
    pub dims: [usize; 3],
    pub boxes: Vec<TaggedBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggedBox {
    pub min: Vec3,
    pub max: Vec3,
    #[serde(default)]
    pub tag: String,
}

impl TaggedBox {
    pub fn aabb(&self) -> Aabb {
        Aabb::new(self.min, self.max)
    }
}

impl BoxScene {
    pub fn spec(&self) -> Result<GridSpec> {
        GridSpec::new(self.origin, self.voxel_size, self.dims)
    }

    pub fn aabbs(&self) -> Vec<Aabb> {
        self.boxes.iter().map(TaggedBox::aabb).collect()
    }

    pub fn voxelize(&self) -> Result<OccupancyGrid> {
        build_from_boxes(&self.aabbs(), self.spec()?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Box description of a grid: one box per run of occupied voxels along X.
    /// Voxelizing the result reproduces the grid exactly.
    pub fn from_grid(grid: &OccupancyGrid) -> Self {
        let spec = *grid.spec();
        let vs = spec.voxel_size;
        let o = spec.origin;
        let mut boxes = Vec::new();
        for iy in 0..spec.ny() {
            for iz in 0..spec.nz() {
                let mut ix = 0;
                while ix < spec.nx() {
                    if !grid.get(ix, iz, iy) {
                        ix += 1;
                        continue;
                    }
                    let start = ix;
                    while ix < spec.nx() && grid.get(ix, iz, iy) {
                        ix += 1;
                    }
                    boxes.push(TaggedBox {
                        min: [o[0] + start as f64 * vs, o[1] + iy as f64 * vs, o[2] + iz as f64 * vs],
                        max: [o[0] + ix as f64 * vs, o[1] + (iy + 1) as f64 * vs, o[2] + (iz + 1) as f64 * vs],
                        tag: String::new(),
                    });
                }
            }
        }
        BoxScene { voxel_size: vs, origin: o, dims: spec.dims, boxes }
    }
}

/// Grids activated at increasing frame indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneTimeline {
    states: Vec<(usize, OccupancyGrid)>,
}

impl SceneTimeline {
    pub fn new(states: Vec<(usize, OccupancyGrid)>) -> Result<Self> {
        let Some((first, g0)) = states.first() else {
            return Err(Error::input("timeline needs at least one state"));
        };
        if *first != 0 {
            return Err(Error::input("first timeline state must activate at frame 0"));
        }
        for w in states.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::input("timeline activation frames must strictly increase"));
            }
        }
        if states.iter().any(|(_, g)| g.spec != g0.spec) {
            return Err(Error::input("all timeline grids must share one grid spec"));
        }
        Ok(SceneTimeline { states })
    }

    pub fn fixed(grid: OccupancyGrid) -> Self {
        SceneTimeline {
            states: vec![(0, grid)],
        }
    }

    pub fn states(&self) -> &[(usize, OccupancyGrid)] {
        &self.states
    }

    pub fn spec(&self) -> &GridSpec {
        self.states[0].1.spec()
    }

    /// Grid with the largest activation frame not after `frame`.
    pub fn grid_at(&self, frame: usize) -> &OccupancyGrid {
        let idx = self.states.partition_point(|(f, _)| *f <= frame);
        &self.states[idx - 1].1
    }

    /// Index of the active state at `frame`.
    pub fn state_index_at(&self, frame: usize) -> usize {
        self.states.partition_point(|(f, _)| *f <= frame) - 1
    }

    pub fn change_frames(&self) -> Vec<usize> {
        self.states.iter().skip(1).map(|(f, _)| *f).collect()
    }
}

pub fn grid_at(timeline: &SceneTimeline, frame: usize) -> &OccupancyGrid {
    timeline.grid_at(frame)
}

/// 32³ bit cube in local index order `(i * 32 + k) * 32 + j` with `i` along
/// local X, `k` along local Z and `j` along Y.
#[derive(Clone, PartialEq, Eq)]
pub struct BitCube(Box<[u64; LOCAL_CELLS / 64]>);

impl std::fmt::Debug for BitCube {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "BitCube({} set)", self.count())
    }
}

impl Default for BitCube {
    fn default() -> Self {
        BitCube(Box::new([0; LOCAL_CELLS / 64]))
    }
}

impl BitCube {
    #[inline]
    pub fn index(i: usize, j: usize, k: usize) -> usize {
        (i * LOCAL_N + k) * LOCAL_N + j
    }

    #[inline]
    pub fn get(&self, idx: usize) -> bool {
        (self.0[idx >> 6] >> (idx & 63)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, idx: usize, v: bool) {
        if v {
            self.0[idx >> 6] |= 1 << (idx & 63);
        } else {
            self.0[idx >> 6] &= !(1 << (idx & 63));
        }
    }

    pub fn count(&self) -> usize {
        self.0.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn words(&self) -> &[u64] {
        &self.0[..]
    }

    pub fn from_words(words: &[u64]) -> Result<Self> {
        let arr: [u64; LOCAL_CELLS / 64] = words
            .try_into()
            .map_err(|_| Error::format(format!("bit cube needs {} words", LOCAL_CELLS / 64)))?;
        Ok(BitCube(Box::new(arr)))
    }

    pub fn filled(v: bool) -> Self {
        BitCube(Box::new([if v { u64::MAX } else { 0 }; LOCAL_CELLS / 64]))
    }

    pub fn xor(&self, other: &BitCube) -> BitCube {
        let mut out = BitCube::default();
        for (o, (a, b)) in out.0.iter_mut().zip(self.0.iter().zip(other.0.iter())) {
            *o = a ^ b;
        }
        out
    }
}

/// Offset of local cell `(i, j, k)` from the window anchor, before rotation.
#[inline]
pub fn local_cell_offset(i: usize, j: usize, k: usize) -> Vec3 {
    [
        -LOCAL_HALF_WIDTH + (i as f64 + 0.5) * LOCAL_CELL,
        (j as f64 + 0.5) * LOCAL_CELL,
        -LOCAL_HALF_WIDTH + (k as f64 + 0.5) * LOCAL_CELL,
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalGrid {
    pub bits: BitCube,
    pub center: Vec3,
    pub yaw: f64,
}

impl LocalGrid {
    pub fn empty(center: Vec3, yaw: f64) -> Self {
        LocalGrid {
            bits: BitCube::default(),
            center,
            yaw,
        }
    }

    pub fn count(&self) -> usize {
        self.bits.count()
    }

    /// Mean occupancy of each 4×4×4 patch, patch-major in `(pi, pk, pj)` order.
    pub fn patch_means(&self) -> Vec<f64> {
        const P: usize = 4;
        const NP: usize = LOCAL_N / P;
        let mut out = vec![0.0; NP * NP * NP];
        for i in 0..LOCAL_N {
            for k in 0..LOCAL_N {
                for j in 0..LOCAL_N {
                    if self.bits.get(BitCube::index(i, j, k)) {
                        out[((i / P) * NP + k / P) * NP + j / P] += 1.0;
                    }
                }
            }
        }
        let inv = 1.0 / (P * P * P) as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        out
    }
}

/// Samples the global grid on the 32³ window anchored at `anchor` and
/// rotated by `yaw` about the vertical axis. Local X and Z span
/// [-0.6, 0.6] m, local Y spans [0, 1.2] m above the anchor.
pub fn extract_local(grid: &OccupancyGrid, anchor: Vec3, yaw: f64) -> LocalGrid {
    let mut out = LocalGrid::empty(anchor, yaw);
    let (s, c) = geom::sin_cos_exact(yaw);
    for i in 0..LOCAL_N {
        for k in 0..LOCAL_N {
            let o = local_cell_offset(i, 0, k);
            let wx = anchor[0] + o[0] * c + o[2] * s;
            let wz = anchor[2] - o[0] * s + o[2] * c;
            for j in 0..LOCAL_N {
                let wy = anchor[1] + (j as f64 + 0.5) * LOCAL_CELL;
                if grid.query([wx, wy, wz]) {
                    out.bits.set(BitCube::index(i, j, k), true);
                }
            }
        }
    }
    out
}

/// Changed cells between two local windows.
pub fn voxel_delta(a: &LocalGrid, b: &LocalGrid) -> (usize, BitCube) {
    let mask = a.bits.xor(&b.bits);
    (mask.count(), mask)
}

/// 2-D blocked-cell map over the X-Z plane.
#[derive(Debug, Clone, PartialEq)]
pub struct NavGrid2D {
    pub origin: [f64; 2],
    pub cell_size: f64,
    /// `[nx, nz]`.
    pub dims: [usize; 2],
    pub blocked: Vec<bool>,
}

impl NavGrid2D {
    pub fn free(origin: [f64; 2], cell_size: f64, dims: [usize; 2]) -> Self {
        NavGrid2D {
            origin,
            cell_size,
            dims,
            blocked: vec![false; dims[0] * dims[1]],
        }
    }

    #[inline]
    pub fn idx(&self, ix: usize, iz: usize) -> usize {
        ix * self.dims[1] + iz
    }

    #[inline]
    pub fn is_blocked(&self, ix: usize, iz: usize) -> bool {
        self.blocked[self.idx(ix, iz)]
    }

    pub fn set_blocked(&mut self, ix: usize, iz: usize, v: bool) {
        let i = self.idx(ix, iz);
        self.blocked[i] = v;
    }

    /// World X-Z center of a cell.
    #[inline]
    pub fn center(&self, ix: usize, iz: usize) -> [f64; 2] {
        [
            self.origin[0] + (ix as f64 + 0.5) * self.cell_size,
            self.origin[1] + (iz as f64 + 0.5) * self.cell_size,
        ]
    }

    pub fn cell_of(&self, x: f64, z: f64) -> Option<(usize, usize)> {
        let fx = ((x - self.origin[0]) / self.cell_size).floor();
        let fz = ((z - self.origin[1]) / self.cell_size).floor();
        if !(fx >= 0.0 && fz >= 0.0) {
            return None;
        }
        let (ix, iz) = (fx as usize, fz as usize);
        (ix < self.dims[0] && iz < self.dims[1]).then_some((ix, iz))
    }

    /// True when `(x, z)` lies in a blocked cell; outside the grid counts as free.
    pub fn blocked_at(&self, x: f64, z: f64) -> bool {
        self.cell_of(x, z).is_some_and(|(ix, iz)| self.is_blocked(ix, iz))
    }

    pub fn blocked_count(&self) -> usize {
        self.blocked.iter().filter(|b| **b).count()
    }
}

/// Column aggregation along Y: a cell is blocked iff a voxel of its column
/// with center height inside `[y_min, y_max]` is occupied.
pub fn project_2d(grid: &OccupancyGrid, height_band: (f64, f64)) -> Result<NavGrid2D> {
    let (y_min, y_max) = height_band;
    if !(y_min < y_max) {
        return Err(Error::input(format!("height band requires y_min < y_max, got ({y_min}, {y_max})")));
    }
    let spec = grid.spec();
    let mut nav = NavGrid2D::free(
        [spec.origin[0], spec.origin[2]],
        spec.voxel_size,
        [spec.nx(), spec.nz()],
    );
    let band: Vec<usize> = (0..spec.ny())
        .filter(|&iy| {
            let y = spec.origin[1] + (iy as f64 + 0.5) * spec.voxel_size;
            y >= y_min && y <= y_max
        })
        .collect();
    for ix in 0..spec.nx() {
        for iz in 0..spec.nz() {
            if band.iter().any(|&iy| grid.get(ix, iz, iy)) {
                nav.set_blocked(ix, iz, true);
            }
        }
    }
    Ok(nav)
}

/// Tolerance applied to the inflation radius comparison.
pub const INFLATE_EPS: f64 = 1e-9;

/// Dilates blocked cells by a disk of `radius` meters measured between cell centers.
pub fn inflate(nav: &NavGrid2D, radius: f64) -> Result<NavGrid2D> {
    if !(radius >= 0.0) {
        return Err(Error::input(format!("inflation radius must be >= 0, got {radius}")));
    }
    let cs = nav.cell_size;
    let reach = (radius / cs).floor() as isize + 1;
    let mut offsets = Vec::new();
    for di in -reach..=reach {
        for dk in -reach..=reach {
            let d = ((di * di + dk * dk) as f64).sqrt() * cs;
            if d <= radius + INFLATE_EPS {
                offsets.push((di, dk));
            }
        }
    }
    let mut out = nav.clone();
    let (nx, nz) = (nav.dims[0] as isize, nav.dims[1] as isize);
    for ix in 0..nx {
        for iz in 0..nz {
            if !nav.is_blocked(ix as usize, iz as usize) {
                continue;
            }
            for &(di, dk) in &offsets {
                let (x, z) = (ix + di, iz + dk);
                if x >= 0 && z >= 0 && x < nx && z < nz {
                    out.set_blocked(x as usize, z as usize, true);
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec() -> GridSpec {
        GridSpec::new([0.0, 0.0, 0.0], 0.1, [20, 16, 12]).unwrap()
    }

    #[test]
    fn invalid_spec_rejected() {
        assert!(matches!(GridSpec::new([0.0; 3], 0.0, [1, 1, 1]), Err(Error::Config(_))));
        assert!(matches!(GridSpec::new([0.0; 3], 0.1, [1, 0, 1]), Err(Error::Config(_))));
        let bad = GridSpec {
            origin: [0.0; 3],
            voxel_size: -1.0,
            dims: [2, 2, 2],
        };
        assert!(build_from_boxes(&[], bad).is_err());
    }

    #[test]
    fn no_boxes_is_empty() {
        let g = build_from_boxes(&[], spec()).unwrap();
        assert_eq!(g.count_occupied(), 0);
    }

    #[test]
    fn covering_box_fills_grid() {
        let g = build_from_boxes(&[Aabb::new([-1.0; 3], [5.0; 3])], spec()).unwrap();
        assert_eq!(g.count_occupied(), spec().len());
    }

    #[test]
    fn random_boxes_match_center_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = spec();
        for _ in 0..20 {
            let boxes: Vec<Aabb> = (0..5)
                .map(|_| {
                    let a: Vec3 = [rng.random_range(-0.2..2.2), rng.random_range(-0.2..1.4), rng.random_range(-0.2..1.8)];
                    let e: Vec3 = [rng.random_range(0.0..0.8), rng.random_range(0.0..0.8), rng.random_range(0.0..0.8)];
                    Aabb::new(a, geom::add(a, e))
                })
                .collect();
            let g = build_from_boxes(&boxes, s).unwrap();
            for ix in 0..s.nx() {
                for iz in 0..s.nz() {
                    for iy in 0..s.ny() {
                        let c = [
                            s.origin[0] + (ix as f64 + 0.5) * s.voxel_size,
                            s.origin[1] + (iy as f64 + 0.5) * s.voxel_size,
                            s.origin[2] + (iz as f64 + 0.5) * s.voxel_size,
                        ];
                        let inside = boxes.iter().any(|b| {
                            c[0] >= b.min[0] && c[0] <= b.max[0] && c[1] >= b.min[1] && c[1] <= b.max[1] && c[2] >= b.min[2] && c[2] <= b.max[2]
                        });
                        assert_eq!(g.get(ix, iz, iy), inside, "voxel {ix} {iz} {iy}");
                    }
                }
            }
        }
    }

    #[test]
    fn timeline_switches_at_activation_frame() {
        let g0 = build_from_boxes(&[], spec()).unwrap();
        let g1 = build_from_boxes(&[Aabb::new([0.0; 3], [0.5; 3])], spec()).unwrap();
        let tl = SceneTimeline::new(vec![(0, g0.clone()), (80, g1.clone())]).unwrap();
        assert_eq!(tl.grid_at(79), &g0);
        assert_eq!(tl.grid_at(80), &g1);
        assert_eq!(tl.grid_at(1000), &g1);
        let single = SceneTimeline::fixed(g1.clone());
        assert_eq!(single.grid_at(12345), &g1);
    }

    #[test]
    fn timeline_invariants_enforced() {
        let g = build_from_boxes(&[], spec()).unwrap();
        assert!(SceneTimeline::new(vec![(1, g.clone())]).is_err());
        assert!(SceneTimeline::new(vec![(0, g.clone()), (0, g.clone())]).is_err());
        let other = OccupancyGrid::empty(GridSpec::new([0.0; 3], 0.2, [2, 2, 2]).unwrap()).unwrap();
        assert!(SceneTimeline::new(vec![(0, g), (5, other)]).is_err());
    }

    #[test]
    fn local_grid_of_empty_scene_is_empty() {
        let g = build_from_boxes(&[], spec()).unwrap();
        assert_eq!(extract_local(&g, [1.0, 0.0, 0.8], 0.3).count(), 0);
    }

    #[test]
    fn local_grid_inside_cube_is_full() {
        let s = GridSpec::new([0.0; 3], 0.05, [60, 60, 60]).unwrap();
        let g = build_from_boxes(&[Aabb::new([0.5, 0.2, 0.5], [2.5, 2.2, 2.5])], s).unwrap();
        let local = extract_local(&g, [1.5, 0.6, 1.5], 0.37);
        assert_eq!(local.count(), LOCAL_CELLS);
    }

    #[test]
    fn local_grid_out_of_bounds_reads_free() {
        let g = build_from_boxes(&[Aabb::new([-1.0; 3], [5.0; 3])], spec()).unwrap();
        let local = extract_local(&g, [-5.0, 0.0, -5.0], 0.0);
        assert_eq!(local.count(), 0);
    }

    #[test]
    fn voxel_delta_counts() {
        let a = LocalGrid::empty([0.0; 3], 0.0);
        let mut b = LocalGrid::empty([0.0; 3], 0.0);
        assert_eq!(voxel_delta(&a, &a).0, 0);
        b.bits = BitCube::filled(true);
        assert_eq!(voxel_delta(&a, &b).0, 32768);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut c = LocalGrid::empty([0.0; 3], 0.0);
        let mut d = LocalGrid::empty([0.0; 3], 0.0);
        for idx in 0..LOCAL_CELLS {
            c.bits.set(idx, rng.random_bool(0.3));
            d.bits.set(idx, rng.random_bool(0.6));
        }
        let naive = (0..LOCAL_CELLS).filter(|&i| c.bits.get(i) != d.bits.get(i)).count();
        let (n, mask) = voxel_delta(&c, &d);
        assert_eq!(n, naive);
        assert_eq!(mask.count(), naive);
    }

    #[test]
    fn projection_cases() {
        let empty = build_from_boxes(&[], spec()).unwrap();
        assert_eq!(project_2d(&empty, DEFAULT_HEIGHT_BAND).unwrap().blocked_count(), 0);
        let floor = build_from_boxes(&[Aabb::new([-1.0, 0.0, -1.0], [5.0, 0.05, 5.0])], spec()).unwrap();
        assert!(floor.count_occupied() > 0);
        assert_eq!(project_2d(&floor, DEFAULT_HEIGHT_BAND).unwrap().blocked_count(), 0);
        assert!(project_2d(&floor, (0.5, 0.5)).is_err());
    }

    #[test]
    fn table_projection_matches_column_scan() {
        let s = spec();
        let boxes = [
            Aabb::new([0.3, 0.0, 0.4], [0.9, 0.75, 1.0]),
            Aabb::new([1.2, 1.0, 0.2], [1.6, 1.1, 0.5]),
            Aabb::new([0.0, 0.0, 0.0], [2.0, 0.05, 1.6]),
        ];
        let g = build_from_boxes(&boxes, s).unwrap();
        let nav = project_2d(&g, (0.1, 1.8)).unwrap();
        for ix in 0..s.nx() {
            for iz in 0..s.nz() {
                let mut col = false;
                for iy in 0..s.ny() {
                    let y = (iy as f64 + 0.5) * 0.1;
                    if (0.1..=1.8).contains(&y) && g.get(ix, iz, iy) {
                        col = true;
                    }
                }
                assert_eq!(nav.is_blocked(ix, iz), col);
            }
        }
    }

    #[test]
    fn inflation_cases() {
        let mut nav = NavGrid2D::free([0.0, 0.0], 0.1, [15, 15]);
        assert_eq!(inflate(&nav, 0.3).unwrap(), nav);
        nav.set_blocked(7, 7, true);
        assert_eq!(inflate(&nav, 0.0).unwrap(), nav);
        let r = 0.2;
        let inf = inflate(&nav, r).unwrap();
        for ix in 0..15 {
            for iz in 0..15 {
                let a = nav.center(ix, iz);
                let b = nav.center(7, 7);
                let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
                assert_eq!(inf.is_blocked(ix, iz), d <= r + INFLATE_EPS, "cell {ix} {iz}");
            }
        }
        let huge = inflate(&nav, 100.0).unwrap();
        assert_eq!(huge.blocked_count(), 225);
        assert!(inflate(&nav, -0.1).is_err());
    }

    #[test]
    fn query_matches_index_arithmetic() {
        let s = spec();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = build_from_boxes(&[Aabb::new([0.2, 0.1, 0.3], [1.3, 0.9, 1.1])], s).unwrap();
        assert!(!query_occupied(&g, [-0.5, 0.5, 0.5]));
        assert!(!query_occupied(&g, [0.5, 5.0, 0.5]));
        assert!(query_occupied(&g, s.center(5, 5, 5)));
        for _ in 0..1000 {
            let p = [rng.random_range(-0.5..2.5), rng.random_range(-0.5..1.7), rng.random_range(-0.5..2.1)];
            let ix = ((p[0] - s.origin[0]) / s.voxel_size).floor() as i64;
            let iy = ((p[1] - s.origin[1]) / s.voxel_size).floor() as i64;
            let iz = ((p[2] - s.origin[2]) / s.voxel_size).floor() as i64;
            let expect = ix >= 0
                && iy >= 0
                && iz >= 0
                && (ix as usize) < s.nx()
                && (iy as usize) < s.ny()
                && (iz as usize) < s.nz()
                && g.get(ix as usize, iz as usize, iy as usize);
            assert_eq!(query_occupied(&g, p), expect);
        }
    }

    #[test]
    fn grid_file_round_trip_and_errors() {
        let s = GridSpec::new([0.5, -0.1, 2.0], 0.07, [7, 5, 3]).unwrap();
        let g = build_from_boxes(&[Aabb::new([0.6, 0.0, 2.0], [0.9, 0.1, 2.2])], s).unwrap();
        let mut buf = Vec::new();
        g.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..8], GRID_MAGIC);
        assert_eq!(buf.len(), 8 + 32 + 12 + (7 * 5 * 3usize).div_ceil(8));
        let back = OccupancyGrid::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, g);
        assert!(matches!(OccupancyGrid::read_from(&buf[..buf.len() - 1]), Err(Error::Format(_))));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(OccupancyGrid::read_from(bad.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn box_scene_json() {
        let text = r#"{ "voxel_size": 0.1, "origin": [0,0,0], "dims": [10,10,10],
            "boxes": [{"min":[0.2,0,0.2],"max":[0.5,0.7,0.5],"tag":"table"}] }"#;
        let scene = BoxScene::from_json(text).unwrap();
        assert_eq!(scene.boxes[0].tag, "table");
        let g = scene.voxelize().unwrap();
        assert_eq!(g.count_occupied(), 3 * 3 * 7);
    }

    #[test]
    fn support_top_of_column() {
        let g = build_from_boxes(&[Aabb::new([0.0, 0.0, 0.0], [0.5, 0.45, 0.5])], spec()).unwrap();
        let top = g.support_top(0.25, 0.25, 1.0).unwrap();
        assert!((top - 0.5).abs() < 1e-12);
        assert!(g.support_top(1.5, 1.5, 1.0).is_none());
    }

    #[test]
    fn grid_to_boxes_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let mut g = OccupancyGrid::empty(spec()).unwrap();
            for i in 0..g.spec().len() {
                g.set_linear(i, rng.random_bool(0.3));
            }
            let scene = BoxScene::from_grid(&g);
            assert_eq!(scene.voxelize().unwrap(), g);
        }
    }

    fn random_room(rng: &mut ChaCha8Rng, n: usize) -> OccupancyGrid {
        let spec = GridSpec::new([0.0; 3], 0.05, [n, n, 30]).unwrap();
        let boxes: Vec<Aabb> = (0..4)
            .map(|_| {
                let c = [rng.random_range(0.0..n as f64 * 0.05), 0.0, rng.random_range(0.0..n as f64 * 0.05)];
                let h = [rng.random_range(0.05..0.4), rng.random_range(0.2..1.4), rng.random_range(0.05..0.4)];
                Aabb::new([c[0] - h[0], 0.0, c[2] - h[2]], [c[0] + h[0], h[1], c[2] + h[2]])
            })
            .collect();
        build_from_boxes(&boxes, spec).unwrap()
    }

    /// The grid rotated by `quarters` quarter turns about the center of its X-Z extent.
    fn rotate_grid(g: &OccupancyGrid, quarters: i32) -> OccupancyGrid {
        let spec = *g.spec();
        let n = spec.nx();
        let mut out = OccupancyGrid::empty(spec).unwrap();
        for ix in 0..n {
            for iz in 0..n {
                let (sx, sz) = match quarters.rem_euclid(4) {
                    0 => (ix, iz),
                    1 => (n - 1 - iz, ix),
                    2 => (n - 1 - ix, n - 1 - iz),
                    _ => (iz, n - 1 - ix),
                };
                for iy in 0..spec.ny() {
                    out.set(ix, iz, iy, g.get(sx, sz, iy));
                }
            }
        }
        out
    }

    #[test]
    fn local_grid_follows_quarter_turns_and_translations() {
        use std::f64::consts::FRAC_PI_2;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut nonempty = 0;
        for _ in 0..10 {
            let n = 60;
            let g = random_room(&mut rng, n);
            let mid = n as f64 * 0.05 / 2.0;
            let anchor = [mid, 0.0, mid];
            let yaw = FRAC_PI_2 * rng.random_range(0..4) as f64;
            let base = extract_local(&g, anchor, yaw);
            nonempty += usize::from(base.count() > 0 && base.count() < LOCAL_CELLS);
            for q in 1..4 {
                let r = rotate_grid(&g, q);
                let turned = extract_local(&r, anchor, yaw + FRAC_PI_2 * q as f64);
                assert_eq!(turned.bits, base.bits, "quarter turns {q}");
            }
            let shift = [0.05 * rng.random_range(-20..20) as f64, 0.0, 0.05 * rng.random_range(-20..20) as f64];
            let mut spec = *g.spec();
            spec.origin = geom::add(spec.origin, shift);
            let moved = OccupancyGrid::from_payload(spec, &g.payload_bytes()).unwrap();
            assert_eq!(extract_local(&moved, geom::add(anchor, shift), yaw).bits, base.bits);
        }
        assert!(nonempty >= 5, "{nonempty}");
    }
}
