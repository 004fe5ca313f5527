//! Patch extraction (im2col) and channel-uploading angle encoding.
//!
//! A patch row lists its values in `(dy, dx, c)` order. Uploading walks the
//! whole row, channels included, and rotates qubit `j mod q` by
//! `angle_scale * row[j]`, so every channel of a receptive field lands on
//! the same small register.

use serde::{Deserialize, Serialize};

use crate::circuit::{Angle, Circuit, Op};
use crate::error::{Error, Result};
use crate::statevector::{Axis, QuantumState};
use crate::tensor::Tensor3;

/// Shape bookkeeping shared by im2col and its adjoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub in_height: usize,
    pub in_width: usize,
    pub in_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl ConvGeometry {
    pub fn new(
        (in_height, in_width, in_channels): (usize, usize, usize),
        (kernel_h, kernel_w): (usize, usize),
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        if stride == 0 || kernel_h == 0 || kernel_w == 0 {
            return Err(Error::Geometry("kernel and stride must be positive".into()));
        }
        if in_height == 0 || in_width == 0 || in_channels == 0 {
            return Err(Error::Geometry("input dimensions must be positive".into()));
        }
        let (ph, pw) = (in_height + 2 * pad, in_width + 2 * pad);
        if kernel_h > ph || kernel_w > pw {
            return Err(Error::Geometry(format!(
                "kernel {kernel_h}x{kernel_w} larger than padded input {ph}x{pw}"
            )));
        }
        Ok(Self {
            in_height,
            in_width,
            in_channels,
            kernel_h,
            kernel_w,
            stride,
            pad,
            out_height: (ph - kernel_h) / stride + 1,
            out_width: (pw - kernel_w) / stride + 1,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.out_height * self.out_width
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.kernel_h * self.kernel_w * self.in_channels
    }

    /// Source tensor index of patch entry `(row, col)`, or `None` in the padding.
    #[inline]
    fn source(&self, row: usize, col: usize) -> Option<(usize, usize, usize)> {
        let (oy, ox) = (row / self.out_width, row % self.out_width);
        let c = col % self.in_channels;
        let k = col / self.in_channels;
        let (dy, dx) = (k / self.kernel_w, k % self.kernel_w);
        let y = (oy * self.stride + dy).checked_sub(self.pad)?;
        let x = (ox * self.stride + dx).checked_sub(self.pad)?;
        (y < self.in_height && x < self.in_width).then_some((y, x, c))
    }
}

/// Row-major matrix of flattened receptive fields.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchMatrix {
    geometry: ConvGeometry,
    values: Vec<f64>,
}

impl PatchMatrix {
    pub fn from_values(geometry: ConvGeometry, values: Vec<f64>) -> Result<Self> {
        if values.len() != geometry.rows() * geometry.cols() {
            return Err(Error::Geometry(format!(
                "patch matrix needs {}x{} values, got {}",
                geometry.rows(),
                geometry.cols(),
                values.len()
            )));
        }
        Ok(Self { geometry, values })
    }

    #[inline]
    pub fn geometry(&self) -> &ConvGeometry {
        &self.geometry
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.geometry.rows()
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.geometry.cols()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.cols();
        &self.values[i * n..(i + 1) * n]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }
}

pub fn im2col(
    x: &Tensor3,
    kernel: (usize, usize),
    stride: usize,
    pad: usize,
) -> Result<PatchMatrix> {
    let geometry = ConvGeometry::new(x.shape(), kernel, stride, pad)?;
    Ok(im2col_with(x, &geometry))
}

pub(crate) fn im2col_with(x: &Tensor3, g: &ConvGeometry) -> PatchMatrix {
    debug_assert_eq!(x.shape(), (g.in_height, g.in_width, g.in_channels));
    let (rows, cols) = (g.rows(), g.cols());
    let mut values = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            if let Some((y, xx, ch)) = g.source(r, c) {
                values[r * cols + c] = x.get(y, xx, ch);
            }
        }
    }
    PatchMatrix {
        geometry: *g,
        values,
    }
}

/// Scatter-adds every patch entry back onto its source pixel; the exact
/// transpose of [`im2col`] as a linear map.
pub fn col2im_adjoint(p: &PatchMatrix) -> Result<Tensor3> {
    let g = p.geometry;
    if p.values.len() != g.rows() * g.cols() {
        return Err(Error::Geometry("patch matrix inconsistent with its geometry".into()));
    }
    let mut out = Tensor3::zeros(g.in_height, g.in_width, g.in_channels);
    let cols = g.cols();
    for r in 0..g.rows() {
        for c in 0..cols {
            if let Some((y, x, ch)) = g.source(r, c) {
                let i = out.index(y, x, ch);
                out.values_mut()[i] += p.values[r * cols + c];
            }
        }
    }
    Ok(out)
}

/// Rotation axis used when uploading data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UploadAxis {
    X,
    Y,
    Z,
    /// X, Y, Z in turn, advancing once per full sweep over the register.
    Cycle,
}

impl UploadAxis {
    fn axis_for(self, j: usize, q: usize) -> Axis {
        match self {
            UploadAxis::X => Axis::X,
            UploadAxis::Y => Axis::Y,
            UploadAxis::Z => Axis::Z,
            UploadAxis::Cycle => [Axis::X, Axis::Y, Axis::Z][(j / q) % 3],
        }
    }
}

impl std::str::FromStr for UploadAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "x" | "rx" => Ok(UploadAxis::X),
            "y" | "ry" => Ok(UploadAxis::Y),
            "z" | "rz" => Ok(UploadAxis::Z),
            "cycle" => Ok(UploadAxis::Cycle),
            other => Err(Error::Config(format!("unknown upload axis `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UploadPlan {
    pub qubits: usize,
    pub axis: UploadAxis,
    pub angle_scale: f64,
}

impl UploadPlan {
    pub fn new(qubits: usize, axis: UploadAxis, angle_scale: f64) -> Result<Self> {
        if qubits == 0 {
            return Err(Error::Config("upload plan needs at least one qubit".into()));
        }
        if !(angle_scale > 0.0 && angle_scale.is_finite()) {
            return Err(Error::Config(format!("angle scale must be positive, got {angle_scale}")));
        }
        Ok(Self {
            qubits,
            axis,
            angle_scale,
        })
    }

    /// RY uploads with angle `pi * v`.
    pub fn ry(qubits: usize) -> Self {
        Self {
            qubits,
            axis: UploadAxis::Y,
            angle_scale: std::f64::consts::PI,
        }
    }

    /// Upload gates for inputs `offset..offset + len`, in increasing order.
    pub fn ops(&self, offset: usize, len: usize) -> Vec<Op> {
        (0..len)
            .map(|j| Op::Rotation {
                axis: self.axis.axis_for(j, self.qubits),
                target: j % self.qubits,
                angle: Angle::Input {
                    index: offset + j,
                    scale: self.angle_scale,
                },
            })
            .collect()
    }
}

/// Uploads the whole row onto one `plan.qubits` register starting from `|0...0>`.
pub fn encode_row(row: &[f64], plan: &UploadPlan) -> Result<QuantumState> {
    if let Some(i) = row.iter().position(|v| !v.is_finite()) {
        return Err(Error::Data(format!("non-finite value at row index {i}")));
    }
    Circuit::new(plan.qubits, plan.ops(0, row.len()))?.run(&[], row)
}

/// Per-channel baseline: channel `c` takes entries `c, c + C, c + 2C, ...`
/// and gets a fresh register of its own.
pub fn encode_row_per_channel(
    row: &[f64],
    plan: &UploadPlan,
    channels: usize,
) -> Result<Vec<QuantumState>> {
    split_channels(row, channels)?
        .iter()
        .map(|values| encode_row(values, plan))
        .collect()
}

pub(crate) fn split_channels(row: &[f64], channels: usize) -> Result<Vec<Vec<f64>>> {
    if channels == 0 || row.len() % channels != 0 {
        return Err(Error::Geometry(format!(
            "row of length {} does not split into {channels} channels",
            row.len()
        )));
    }
    Ok((0..channels)
        .map(|c| row.iter().skip(c).step_by(channels).copied().collect())
        .collect())
}
