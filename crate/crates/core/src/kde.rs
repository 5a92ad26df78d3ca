//! Causal images: bivariate kernel density estimates of an ordered variable
//! pair evaluated on a regular grid, channel-stacked with positional
//! encodings.
//!
//! Channel 0 holds the KDE values with variable `i` on the horizontal axis
//! and `j` on the vertical axis, so the images of `(i, j)` and `(j, i)` are
//! transposes of each other and carry direction information whenever the
//! joint density is not symmetric. Channels 1 and 2 are fixed coordinate
//! ramps in [-1, 1].

use std::io::{Read, Write};

use crate::data::{sample_std, DataMatrix};
use crate::error::CoreError;

/// Square evaluation grid. The per-axis range rule is `[min - 4h, max + 4h]`
/// over the column, which keeps essentially all kernel mass inside the grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridSpec {
    pub resolution: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { resolution: 32 }
    }
}

impl GridSpec {
    pub fn new(resolution: usize) -> Self {
        assert!(resolution >= 8, "grid resolution must be at least 8");
        Self { resolution }
    }
}

/// C×H×W image for an ordered pair: KDE channel plus two positional ramps.
#[derive(Clone, Debug, PartialEq)]
pub struct CausalImage {
    pub pair: (usize, usize),
    pub resolution: usize,
    pub bandwidth_x: f64,
    pub bandwidth_y: f64,
    /// Grid step along the horizontal / vertical axis.
    pub dx: f64,
    pub dy: f64,
    /// 3 * H * W values, channel-major.
    pub data: Vec<f64>,
}

impl CausalImage {
    pub const CHANNELS: usize = 3;

    pub fn channel(&self, c: usize) -> &[f64] {
        let hw = self.resolution * self.resolution;
        &self.data[c * hw..(c + 1) * hw]
    }

    /// Riemann mass of the KDE channel: sum times cell area.
    pub fn kde_mass(&self) -> f64 {
        self.channel(0).iter().sum::<f64>() * self.dx * self.dy
    }

    pub fn shape(&self) -> [usize; 3] {
        [Self::CHANNELS, self.resolution, self.resolution]
    }
}

/// Bivariate Silverman bandwidth for one axis: `h = sigma_hat * n^(-1/6)`,
/// with the sample (n-1) standard deviation.
pub fn silverman_bandwidth(column: &[f64]) -> Result<f64, CoreError> {
    assert!(column.len() >= 2, "need at least two samples");
    let sd = sample_std(column);
    if sd <= 0.0 {
        return Err(CoreError::DegenerateColumn { node: usize::MAX });
    }
    Ok(sd * (column.len() as f64).powf(-1.0 / 6.0))
}

/// Positional channels: channel 0 of the output is a ramp from -1 to 1 along
/// the horizontal axis repeated down the rows; channel 1 is its transpose.
pub fn positional_channels(grid: &GridSpec) -> Vec<f64> {
    let r = grid.resolution;
    let mut out = vec![0.0; 2 * r * r];
    for y in 0..r {
        for x in 0..r {
            let ramp_x = -1.0 + 2.0 * x as f64 / (r - 1) as f64;
            let ramp_y = -1.0 + 2.0 * y as f64 / (r - 1) as f64;
            out[y * r + x] = ramp_x;
            out[r * r + y * r + x] = ramp_y;
        }
    }
    out
}

/// Evaluation axis: equally spaced points covering `[lo, hi]` inclusive.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
}

impl Axis {
    fn point(&self, t: usize, resolution: usize) -> f64 {
        self.lo + (self.hi - self.lo) * t as f64 / (resolution - 1) as f64
    }

    fn step(&self, resolution: usize) -> f64 {
        (self.hi - self.lo) / (resolution - 1) as f64
    }
}

/// Range rule: data extent widened by four bandwidths on each side.
pub fn data_axis(column: &[f64], bandwidth: f64) -> Axis {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in column {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    Axis {
        lo: lo - 4.0 * bandwidth,
        hi: hi + 4.0 * bandwidth,
    }
}

/// KDE channel with explicit bandwidths and axes. Gaussian product kernel:
/// the separable form evaluates per-axis kernel tables and contracts them,
/// avoiding an exponential per grid cell.
pub fn kde_channel(
    xi: &[f64],
    xj: &[f64],
    h_x: f64,
    h_y: f64,
    axis_x: &Axis,
    axis_y: &Axis,
    resolution: usize,
) -> Vec<f64> {
    let n = xi.len();
    assert_eq!(n, xj.len());
    let r = resolution;
    // kx[s*r + t] = phi((u_t - xi_s)/h_x), likewise ky for the vertical axis.
    let norm = 1.0 / (2.0 * std::f64::consts::PI * h_x * h_y * n as f64);
    let mut kx = vec![0.0f64; n * r];
    let mut ky = vec![0.0f64; n * r];
    for s in 0..n {
        for t in 0..r {
            let zx = (axis_x.point(t, r) - xi[s]) / h_x;
            kx[s * r + t] = (-0.5 * zx * zx).exp();
            let zy = (axis_y.point(t, r) - xj[s]) / h_y;
            ky[s * r + t] = (-0.5 * zy * zy).exp();
        }
    }
    // channel[y*r + x] = norm * sum_s ky[s,y] * kx[s,x]
    let mut channel = vec![0.0f64; r * r];
    for s in 0..n {
        let krow = &kx[s * r..(s + 1) * r];
        for y in 0..r {
            let w = ky[s * r + y];
            if w == 0.0 {
                continue;
            }
            let row = &mut channel[y * r..(y + 1) * r];
            for x in 0..r {
                row[x] += w * krow[x];
            }
        }
    }
    for v in channel.iter_mut() {
        *v *= norm;
    }
    channel
}

/// Full causal image for the ordered pair `(i, j)` with Silverman bandwidths
/// and the ±4h range rule.
pub fn kde_image(
    x: &DataMatrix,
    i: usize,
    j: usize,
    grid: &GridSpec,
) -> Result<CausalImage, CoreError> {
    if i == j {
        return Err(CoreError::SelfLoop(i));
    }
    let ci = x.col(i);
    let cj = x.col(j);
    let h_x = silverman_bandwidth(ci).map_err(|_| CoreError::DegenerateColumn { node: i })?;
    let h_y = silverman_bandwidth(cj).map_err(|_| CoreError::DegenerateColumn { node: j })?;
    let axis_x = data_axis(ci, h_x);
    let axis_y = data_axis(cj, h_y);
    Ok(kde_image_with(ci, cj, h_x, h_y, &axis_x, &axis_y, grid, (i, j)))
}

/// Assemble an image from explicit bandwidths and axes.
#[allow(clippy::too_many_arguments)]
pub fn kde_image_with(
    xi: &[f64],
    xj: &[f64],
    h_x: f64,
    h_y: f64,
    axis_x: &Axis,
    axis_y: &Axis,
    grid: &GridSpec,
    pair: (usize, usize),
) -> CausalImage {
    let r = grid.resolution;
    let mut data = Vec::with_capacity(3 * r * r);
    data.extend(kde_channel(xi, xj, h_x, h_y, axis_x, axis_y, r));
    data.extend(positional_channels(grid));
    CausalImage {
        pair,
        resolution: r,
        bandwidth_x: h_x,
        bandwidth_y: h_y,
        dx: axis_x.step(r),
        dy: axis_y.step(r),
        data,
    }
}

const CACHE_MAGIC: u32 = 0x4443_4C49; // "DCLI"

/// Append one image record: header (pair index k, H, W, C as u64 LE;
/// bandwidths as f64 LE) followed by C*H*W f32 LE values.
pub fn write_cache_record<W: Write>(
    out: &mut W,
    pair_index: u64,
    image: &CausalImage,
) -> Result<(), CoreError> {
    out.write_all(&CACHE_MAGIC.to_le_bytes())?;
    out.write_all(&pair_index.to_le_bytes())?;
    out.write_all(&(image.resolution as u64).to_le_bytes())?;
    out.write_all(&(image.resolution as u64).to_le_bytes())?;
    out.write_all(&(CausalImage::CHANNELS as u64).to_le_bytes())?;
    out.write_all(&image.bandwidth_x.to_le_bytes())?;
    out.write_all(&image.bandwidth_y.to_le_bytes())?;
    out.write_all(&image.dx.to_le_bytes())?;
    out.write_all(&image.dy.to_le_bytes())?;
    for &v in &image.data {
        out.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

/// Read one record written by [`write_cache_record`]; `Ok(None)` at EOF.
pub fn read_cache_record<R: Read>(input: &mut R) -> Result<Option<(u64, CausalImage)>, CoreError> {
    let mut magic = [0u8; 4];
    match input.read_exact(&mut magic) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    if u32::from_le_bytes(magic) != CACHE_MAGIC {
        return Err(CoreError::Schema("bad image cache record magic".into()));
    }
    let mut u64buf = [0u8; 8];
    let mut read_u64 = |input: &mut R| -> Result<u64, CoreError> {
        input.read_exact(&mut u64buf)?;
        Ok(u64::from_le_bytes(u64buf))
    };
    let pair_index = read_u64(input)?;
    let h = read_u64(input)? as usize;
    let w = read_u64(input)? as usize;
    let c = read_u64(input)? as usize;
    if h != w || c != CausalImage::CHANNELS {
        return Err(CoreError::Schema(format!(
            "unsupported image cache record: {}x{}x{}",
            c, h, w
        )));
    }
    let mut f64buf = [0u8; 8];
    let mut read_f64 = |input: &mut R| -> Result<f64, CoreError> {
        input.read_exact(&mut f64buf)?;
        Ok(f64::from_le_bytes(f64buf))
    };
    let bandwidth_x = read_f64(input)?;
    let bandwidth_y = read_f64(input)?;
    let dx = read_f64(input)?;
    let dy = read_f64(input)?;
    let count = c * h * w;
    let mut data = Vec::with_capacity(count);
    let mut f32buf = [0u8; 4];
    for _ in 0..count {
        input.read_exact(&mut f32buf)?;
        data.push(f32::from_le_bytes(f32buf) as f64);
    }
    Ok(Some((
        pair_index,
        CausalImage {
            pair: (0, 0),
            resolution: h,
            bandwidth_x,
            bandwidth_y,
            dx,
            dy,
            data,
        },
    )))
}
