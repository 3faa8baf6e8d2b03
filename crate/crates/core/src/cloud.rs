//! Splat attribute schema, square grid layout, opacity pruning and the
//! per-attribute normalization used to build sorting features.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of SH coefficients beyond DC for a degree-3 cloud (15 per color channel).
pub const SH_REST_DIM: usize = 45;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribute {
    Position,
    ShDc,
    ShRest,
    Opacity,
    Scale,
    Rotation,
}

impl Attribute {
    /// Fixed attribute order used by grids, features and bundles.
    pub const ALL: [Attribute; 6] = [
        Attribute::Position,
        Attribute::ShDc,
        Attribute::ShRest,
        Attribute::Opacity,
        Attribute::Scale,
        Attribute::Rotation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Attribute::Position => "position",
            Attribute::ShDc => "sh_dc",
            Attribute::ShRest => "sh_rest",
            Attribute::Opacity => "opacity",
            Attribute::Scale => "scale",
            Attribute::Rotation => "rotation",
        }
    }

    /// Channel count of this attribute given the cloud's SH-rest width.
    pub fn channels(self, sh_rest_dim: usize) -> usize {
        match self {
            Attribute::Position | Attribute::ShDc | Attribute::Scale => 3,
            Attribute::ShRest => sh_rest_dim,
            Attribute::Opacity => 1,
            Attribute::Rotation => 4,
        }
    }

    /// The value the renderer sees: sigmoid for opacity, exp for scale, identity otherwise.
    pub fn activate(self, raw: f32) -> f64 {
        let x = f64::from(raw);
        match self {
            Attribute::Opacity => sigmoid(x),
            Attribute::Scale => x.exp(),
            _ => x,
        }
    }

    pub(crate) fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Attribute {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Attribute::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown attribute `{s}`")))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// An ordered set of Gaussians stored column-wise, one flat `n * channels`
/// vector per attribute. Values are the un-activated training parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct SplatCloud {
    len: usize,
    sh_rest_dim: usize,
    columns: [Vec<f32>; 6],
}

impl SplatCloud {
    /// A cloud of `len` Gaussians with every parameter set to zero.
    pub fn zeros(len: usize, sh_rest_dim: usize) -> Result<Self> {
        check_shape(len, sh_rest_dim)?;
        let columns = Attribute::ALL.map(|a| vec![0.0; len * a.channels(sh_rest_dim)]);
        Ok(SplatCloud {
            len,
            sh_rest_dim,
            columns,
        })
    }

    /// Builds a cloud from flat per-attribute columns, validating lengths and finiteness.
    pub fn from_columns(
        len: usize,
        sh_rest_dim: usize,
        mut column: impl FnMut(Attribute) -> Vec<f32>,
    ) -> Result<Self> {
        check_shape(len, sh_rest_dim)?;
        let columns = Attribute::ALL.map(&mut column);
        for a in Attribute::ALL {
            let got = columns[a.index()].len();
            let want = len * a.channels(sh_rest_dim);
            if got != want {
                return Err(Error::invalid(format!(
                    "{a} column has {got} values, expected {want}"
                )));
            }
        }
        let cloud = SplatCloud {
            len,
            sh_rest_dim,
            columns,
        };
        cloud.validate()?;
        Ok(cloud)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// 0 for a DC-only cloud, 45 for SH degree 3.
    pub fn sh_rest_dim(&self) -> usize {
        self.sh_rest_dim
    }

    pub fn has_sh_rest(&self) -> bool {
        self.sh_rest_dim > 0
    }

    pub fn channels(&self, attr: Attribute) -> usize {
        attr.channels(self.sh_rest_dim)
    }

    pub fn attribute(&self, attr: Attribute) -> &[f32] {
        &self.columns[attr.index()]
    }

    pub fn attribute_mut(&mut self, attr: Attribute) -> &mut [f32] {
        &mut self.columns[attr.index()]
    }

    /// Channels of Gaussian `i` for `attr`.
    pub fn get(&self, attr: Attribute, i: usize) -> &[f32] {
        let c = self.channels(attr);
        &self.columns[attr.index()][i * c..(i + 1) * c]
    }

    pub fn activated_opacity(&self, i: usize) -> f64 {
        Attribute::Opacity.activate(self.columns[Attribute::Opacity.index()][i])
    }

    /// Rejects NaN or infinite parameters.
    pub fn validate(&self) -> Result<()> {
        for a in Attribute::ALL {
            let c = self.channels(a);
            if let Some(pos) = self.attribute(a).iter().position(|v| !v.is_finite()) {
                return Err(Error::invalid(format!(
                    "non-finite {a} value in Gaussian {}",
                    pos / c.max(1)
                )));
            }
        }
        Ok(())
    }

    /// Gathers the Gaussians at `indices` (in that order) into a new cloud.
    pub fn select(&self, indices: &[usize]) -> Result<SplatCloud> {
        check_shape(indices.len(), self.sh_rest_dim)?;
        let columns = Attribute::ALL.map(|a| {
            let c = self.channels(a);
            let src = self.attribute(a);
            let mut out = Vec::with_capacity(indices.len() * c);
            for &i in indices {
                out.extend_from_slice(&src[i * c..(i + 1) * c]);
            }
            out
        });
        Ok(SplatCloud {
            len: indices.len(),
            sh_rest_dim: self.sh_rest_dim,
            columns,
        })
    }

    /// Drops the SH-rest block, giving a DC-only cloud.
    pub fn without_sh_rest(&self) -> SplatCloud {
        let mut out = self.clone();
        out.sh_rest_dim = 0;
        out.columns[Attribute::ShRest.index()] = Vec::new();
        out
    }
}

fn check_shape(len: usize, sh_rest_dim: usize) -> Result<()> {
    if len == 0 {
        return Err(Error::invalid("a splat cloud needs at least one Gaussian"));
    }
    if sh_rest_dim != 0 && sh_rest_dim != SH_REST_DIM {
        return Err(Error::invalid(format!(
            "SH-rest width must be 0 or {SH_REST_DIM}, got {sh_rest_dim}"
        )));
    }
    Ok(())
}

/// Side length of a square grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridLayout {
    pub side: usize,
}

impl GridLayout {
    pub fn cells(&self) -> usize {
        self.side * self.side
    }
}

/// Largest square grid that `n` points fill completely.
pub fn build_grid_layout(n: usize) -> Result<GridLayout> {
    if n == 0 {
        return Err(Error::invalid("cannot lay out an empty cloud"));
    }
    Ok(GridLayout { side: n.isqrt() })
}

/// Removes the lowest-opacity Gaussians that do not fit the grid.
///
/// Opacity is compared after the sigmoid; ties go against the lower index.
/// Survivors keep their relative order.
pub fn prune_to_grid(cloud: &SplatCloud, layout: GridLayout) -> Result<SplatCloud> {
    let n = cloud.len();
    let keep = layout.cells();
    if keep > n {
        return Err(Error::invalid(format!(
            "grid of side {} needs {keep} Gaussians, cloud has {n}",
            layout.side
        )));
    }
    if keep == n {
        return Ok(cloud.clone());
    }
    let mut order: Vec<usize> = (0..n).collect();
    let opacity: Vec<f64> = (0..n).map(|i| cloud.activated_opacity(i)).collect();
    // stable sort keeps lower indices first among equal opacities
    order.sort_by(|&a, &b| opacity[a].total_cmp(&opacity[b]));
    let mut removed = vec![false; n];
    for &i in &order[..n - keep] {
        removed[i] = true;
    }
    let survivors: Vec<usize> = (0..n).filter(|&i| !removed[i]).collect();
    cloud.select(&survivors)
}

/// Per-attribute weights applied after normalizing each channel to `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeWeights {
    pub position: f64,
    pub sh_dc: f64,
    pub sh_rest: f64,
    pub opacity: f64,
    pub scale: f64,
    pub rotation: f64,
}

impl AttributeWeights {
    /// Sorting keys are position, color and scale; opacity and rotation are left
    /// to the smoothness term.
    pub const SORTING: AttributeWeights = AttributeWeights {
        position: 1.0,
        sh_dc: 1.0,
        sh_rest: 0.0,
        opacity: 0.0,
        scale: 1.0,
        rotation: 0.0,
    };

    /// Weights of the smoothness regularizer.
    pub const SMOOTHNESS: AttributeWeights = AttributeWeights {
        position: 0.0,
        sh_dc: 0.0,
        sh_rest: 0.0,
        opacity: 0.09,
        scale: 0.0,
        rotation: 0.91,
    };

    pub const ZERO: AttributeWeights = AttributeWeights {
        position: 0.0,
        sh_dc: 0.0,
        sh_rest: 0.0,
        opacity: 0.0,
        scale: 0.0,
        rotation: 0.0,
    };

    pub fn get(&self, attr: Attribute) -> f64 {
        match attr {
            Attribute::Position => self.position,
            Attribute::ShDc => self.sh_dc,
            Attribute::ShRest => self.sh_rest,
            Attribute::Opacity => self.opacity,
            Attribute::Scale => self.scale,
            Attribute::Rotation => self.rotation,
        }
    }

    pub fn set(&mut self, attr: Attribute, w: f64) {
        let slot = match attr {
            Attribute::Position => &mut self.position,
            Attribute::ShDc => &mut self.sh_dc,
            Attribute::ShRest => &mut self.sh_rest,
            Attribute::Opacity => &mut self.opacity,
            Attribute::Scale => &mut self.scale,
            Attribute::Rotation => &mut self.rotation,
        };
        *slot = w;
    }

    pub fn validate(&self) -> Result<()> {
        for a in Attribute::ALL {
            let w = self.get(a);
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::invalid(format!("weight for {a} must be >= 0, got {w}")));
            }
        }
        Ok(())
    }

    /// Applies `attr=w,attr=w` overrides on top of `self`.
    pub fn with_overrides(mut self, overrides: &str) -> Result<Self> {
        for item in overrides.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (name, value) = item
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("expected attr=weight, got `{item}`")))?;
            let attr: Attribute = name.trim().parse()?;
            let w: f64 = value
                .trim()
                .parse()
                .map_err(|_| Error::invalid(format!("bad weight `{value}` for {attr}")))?;
            self.set(attr, w);
        }
        self.validate()?;
        Ok(self)
    }
}

impl Default for AttributeWeights {
    fn default() -> Self {
        AttributeWeights::SORTING
    }
}

/// Row-major `rows x dim` matrix of `f32` features.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub rows: usize,
    pub dim: usize,
    pub data: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * dim {
            return Err(Error::invalid(format!(
                "feature data has {} values, expected {rows}x{dim}",
                data.len()
            )));
        }
        Ok(FeatureMatrix { rows, dim, data })
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// Affine range of one activated channel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelRange {
    pub min: f64,
    pub max: f64,
}

impl ChannelRange {
    /// A channel with no spread; it maps to 0.
    pub fn is_constant(&self) -> bool {
        self.max <= self.min
    }
}

/// Which activated channels went into a feature matrix and how they were scaled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationSpec {
    pub weights: AttributeWeights,
    /// One entry per feature column, in column order.
    pub columns: Vec<FeatureColumn>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureColumn {
    pub attribute: Attribute,
    pub channel: usize,
    pub range: ChannelRange,
    pub weight: f64,
}

impl FeatureColumn {
    pub fn normalize(&self, activated: f64) -> f64 {
        if self.range.is_constant() {
            0.0
        } else {
            (activated - self.range.min) / (self.range.max - self.range.min) * self.weight
        }
    }

    /// Inverse of [`normalize`](Self::normalize); `None` for constant or zero-weight channels.
    pub fn denormalize(&self, feature: f64) -> Option<f64> {
        if self.range.is_constant() || self.weight == 0.0 {
            None
        } else {
            Some(self.range.min + feature / self.weight * (self.range.max - self.range.min))
        }
    }
}

/// Builds the sorting features: every activated channel rescaled to `[0, 1]`
/// over the cloud's own range and multiplied by its attribute weight.
///
/// Zero-weight attributes are left out of the matrix since they contribute
/// nothing to any distance.
pub fn normalize_for_sorting(
    cloud: &SplatCloud,
    weights: &AttributeWeights,
) -> Result<(FeatureMatrix, NormalizationSpec)> {
    weights.validate()?;
    let n = cloud.len();
    let mut columns = Vec::new();
    for a in Attribute::ALL {
        let w = weights.get(a);
        if w == 0.0 {
            continue;
        }
        let c = cloud.channels(a);
        let values = cloud.attribute(a);
        for ch in 0..c {
            let mut range = ChannelRange {
                min: f64::INFINITY,
                max: f64::NEG_INFINITY,
            };
            for i in 0..n {
                let v = a.activate(values[i * c + ch]);
                range.min = range.min.min(v);
                range.max = range.max.max(v);
            }
            columns.push(FeatureColumn {
                attribute: a,
                channel: ch,
                range,
                weight: w,
            });
        }
    }
    if columns.is_empty() {
        return Err(Error::invalid("all sorting weights are zero"));
    }
    let dim = columns.len();
    let mut data = vec![0f32; n * dim];
    for (j, col) in columns.iter().enumerate() {
        let c = cloud.channels(col.attribute);
        let values = cloud.attribute(col.attribute);
        for i in 0..n {
            let v = col.attribute.activate(values[i * c + col.channel]);
            data[i * dim + j] = col.normalize(v) as f32;
        }
    }
    Ok((
        FeatureMatrix { rows: n, dim, data },
        NormalizationSpec {
            weights: *weights,
            columns,
        },
    ))
}

/// One attribute laid out on the grid: `side * side * channels` values, row-major,
/// channels interleaved per cell.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Plane {
    pub fn cell(&self, i: usize) -> &[f32] {
        &self.data[i * self.channels..(i + 1) * self.channels]
    }

    /// Values of one channel across all cells.
    pub fn channel(&self, ch: usize) -> Vec<f32> {
        self.data
            .iter()
            .skip(ch)
            .step_by(self.channels)
            .copied()
            .collect()
    }
}

/// All attributes of a cloud arranged on one square grid through a shared permutation.
#[derive(Clone, Debug, PartialEq)]
pub struct GridStack {
    pub layout: GridLayout,
    sh_rest_dim: usize,
    planes: [Plane; 6],
}

impl GridStack {
    /// Places Gaussian `permutation[cell]` at each grid cell.
    pub fn from_cloud(cloud: &SplatCloud, layout: GridLayout, permutation: &[usize]) -> Result<Self> {
        let cells = layout.cells();
        if cloud.len() != cells || permutation.len() != cells {
            return Err(Error::invalid(format!(
                "grid of side {} needs {cells} Gaussians and permutation entries, got {} and {}",
                layout.side,
                cloud.len(),
                permutation.len()
            )));
        }
        if !is_permutation(permutation) {
            return Err(Error::invalid("grid order is not a permutation"));
        }
        let sorted = cloud.select(permutation)?;
        Ok(GridStack {
            layout,
            sh_rest_dim: cloud.sh_rest_dim(),
            planes: Attribute::ALL.map(|a| Plane {
                channels: sorted.channels(a),
                data: sorted.attribute(a).to_vec(),
            }),
        })
    }

    /// Builds a stack from raw planes (e.g. decoded images).
    pub fn from_planes(layout: GridLayout, sh_rest_dim: usize, mut plane: impl FnMut(Attribute) -> Vec<f32>) -> Result<Self> {
        let cloud = SplatCloud::from_columns(layout.cells(), sh_rest_dim, &mut plane)?;
        let identity: Vec<usize> = (0..layout.cells()).collect();
        GridStack::from_cloud(&cloud, layout, &identity)
    }

    pub fn sh_rest_dim(&self) -> usize {
        self.sh_rest_dim
    }

    pub fn plane(&self, attr: Attribute) -> &Plane {
        &self.planes[attr.index()]
    }

    pub fn plane_mut(&mut self, attr: Attribute) -> &mut Plane {
        &mut self.planes[attr.index()]
    }

    /// Flattens the grid row-major back into a cloud.
    pub fn to_cloud(&self) -> SplatCloud {
        SplatCloud {
            len: self.layout.cells(),
            sh_rest_dim: self.sh_rest_dim,
            columns: Attribute::ALL.map(|a| self.plane(a).data.clone()),
        }
    }
}

pub fn is_permutation(p: &[usize]) -> bool {
    let mut seen = vec![false; p.len()];
    for &i in p {
        if i >= p.len() || seen[i] {
            return false;
        }
        seen[i] = true;
    }
    true
}
