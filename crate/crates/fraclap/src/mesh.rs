//! Geometric tensor-product meshes on `(0,1)^d`.
//!
//! A 1D node sequence graded geometrically towards both endpoints is
//! tensorized into an axis-parallel mesh. Elements are classified into a
//! boundary layer (`L0`, touching `∂Ω`), a transition layer (`L1`, closure
//! meets the closure of an `L0` element), and the interior. On top of the
//! layers sits a continuous piecewise-multilinear cutoff that vanishes on
//! `L0` and equals one beyond `L1`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Node-placement convention for the graded 1D sequence.
///
/// * `Figure`: symmetric placement, `2L+2` elements per axis, smallest width
///   `σ^L/2` on both sides; node sets are nested across `L`.
/// * `Text`: one-sided placement `x_i = σ^{L-i}/2` mirrored, `2L+1` elements
///   per axis, smallest widths `σ^{L-1}/2` (left) and `σ^L/2` (right).
/// * `Custom`: a caller-supplied node sequence (no grading metadata).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshVariant {
    Figure,
    Text,
    Custom,
}

impl fmt::Display for MeshVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            MeshVariant::Figure => "figure",
            MeshVariant::Text => "text",
            MeshVariant::Custom => "custom",
        };
        f.write_str(s)
    }
}

impl FromStr for MeshVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "figure" => Ok(MeshVariant::Figure),
            "text" => Ok(MeshVariant::Text),
            other => Err(Error::Parse(format!(
                "unknown mesh variant {other:?} (expected \"figure\" or \"text\")"
            ))),
        }
    }
}

/// A strictly increasing node sequence on `[0,1]` with grading metadata.
#[derive(Debug, Clone)]
pub struct GeoNodes1D {
    /// Grading parameter in `(0,1)`; `NaN` for custom sequences.
    pub sigma: f64,
    /// Number of refinement layers `L`; `0` for custom sequences.
    pub layers: usize,
    pub variant: MeshVariant,
    /// Strictly increasing, first = 0, last = 1.
    pub nodes: Vec<f64>,
}

impl GeoNodes1D {
    /// Number of elements (`nodes.len() - 1`).
    pub fn element_count(&self) -> usize {
        self.nodes.len() - 1
    }
}

/// Geometrically graded nodes towards both endpoints of `[0,1]`.
///
/// `Figure` variant: `{0} ∪ {σ^{L-j}/2 : j=0..L} ∪ {1 - σ^{L-j}/2 : j=0..L-1} ∪ {1}`
/// (symmetric, `2L+3` nodes). `Text` variant: `x_0 = 0`, `x_i = σ^{L-i}/2`
/// for `i=1..L`, mirrored for `i=L+1..2L`, `x_{2L+1} = 1` (`2L+2` nodes).
pub fn geometric_nodes_1d(sigma: f64, layers: usize, variant: MeshVariant) -> Result<GeoNodes1D> {
    if !(sigma > 0.0 && sigma < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "grading parameter must lie in (0,1), got {sigma}"
        )));
    }
    if layers < 1 {
        return Err(Error::InvalidParameter("layer count must be >= 1".into()));
    }
    if variant == MeshVariant::Custom {
        return Err(Error::InvalidParameter(
            "custom variant has no generating formula; use custom_nodes".into(),
        ));
    }
    let l = layers;
    // σ^k for k = 0..L by repeated multiplication; exactness is not required,
    // strict monotonicity of the node set is asserted below.
    let mut pow = vec![1.0f64; l + 1];
    for k in 1..=l {
        pow[k] = pow[k - 1] * sigma;
    }
    let mut nodes = Vec::with_capacity(2 * l + 3);
    nodes.push(0.0);
    match variant {
        MeshVariant::Figure => {
            for j in 0..=l {
                nodes.push(0.5 * pow[l - j]);
            }
            for j in (0..l).rev() {
                nodes.push(1.0 - 0.5 * pow[l - j]);
            }
        }
        MeshVariant::Text => {
            for i in 1..=l {
                nodes.push(0.5 * pow[l - i]);
            }
            for i in l + 1..=2 * l {
                nodes.push(1.0 - 0.5 * pow[i - l]);
            }
        }
        MeshVariant::Custom => unreachable!(),
    }
    nodes.push(1.0);
    for w in nodes.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::InvalidParameter(format!(
                "node sequence not strictly increasing at {} >= {}",
                w[0], w[1]
            )));
        }
    }
    Ok(GeoNodes1D { sigma, layers, variant, nodes })
}

/// Wrap a caller-supplied node sequence (strictly increasing, 0 to 1).
pub fn custom_nodes(nodes: Vec<f64>) -> Result<GeoNodes1D> {
    if nodes.len() < 2 || nodes[0] != 0.0 || *nodes.last().unwrap() != 1.0 {
        return Err(Error::InvalidParameter(
            "custom nodes must run from 0 to 1 with at least one element".into(),
        ));
    }
    for w in nodes.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::InvalidParameter(
                "custom nodes must be strictly increasing".into(),
            ));
        }
    }
    Ok(GeoNodes1D {
        sigma: f64::NAN,
        layers: 0,
        variant: MeshVariant::Custom,
        nodes,
    })
}

/// Element layer tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    /// Touches `∂Ω`.
    L0,
    /// Not `L0`, but its closure meets the closure of an `L0` element.
    L1,
    /// Everything else.
    Interior,
}

impl Layer {
    /// Numeric code used by the mesh dump: `L0 → 0`, `L1 → 1`, interior → 2.
    pub fn code(self) -> u8 {
        match self {
            Layer::L0 => 0,
            Layer::L1 => 1,
            Layer::Interior => 2,
        }
    }
}

/// One axis-parallel element of a tensor mesh. Unused trailing axes hold
/// `lower = 0`, `width = 0`.
#[derive(Debug, Clone, Copy)]
pub struct Element {
    pub index: usize,
    pub multi: [usize; 3],
    pub lower: [f64; 3],
    pub width: [f64; 3],
    pub layer: Layer,
}

/// Tensor-product mesh of `(0,1)^d` built from one shared axis sequence.
#[derive(Debug, Clone)]
pub struct TensorMesh {
    dim: usize,
    axis: GeoNodes1D,
}

/// Tensorize a 1D node sequence into a `dim`-dimensional mesh.
pub fn build_tensor_mesh(axis: GeoNodes1D, dim: usize) -> Result<TensorMesh> {
    if !(1..=3).contains(&dim) {
        return Err(Error::InvalidParameter(format!(
            "dimension must be 1, 2 or 3, got {dim}"
        )));
    }
    Ok(TensorMesh { dim, axis })
}

impl TensorMesh {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// The shared axis metadata (identical for every axis).
    pub fn axis(&self) -> &GeoNodes1D {
        &self.axis
    }

    /// The shared axis node sequence.
    pub fn axis_nodes(&self) -> &[f64] {
        &self.axis.nodes
    }

    /// Elements per axis.
    pub fn elements_per_axis(&self) -> usize {
        self.axis.element_count()
    }

    /// Total element count (`per-axis count ^ dim`).
    pub fn element_count(&self) -> usize {
        self.elements_per_axis().pow(self.dim as u32)
    }

    /// Split a flat element index into per-axis indices (axis 1 fastest).
    pub fn multi_index(&self, mut flat: usize) -> [usize; 3] {
        let n = self.elements_per_axis();
        let mut multi = [0usize; 3];
        for m in multi.iter_mut().take(self.dim) {
            *m = flat % n;
            flat /= n;
        }
        multi
    }

    /// Flatten per-axis element indices (axis 1 fastest).
    pub fn flat_index(&self, multi: &[usize]) -> usize {
        let n = self.elements_per_axis();
        let mut flat = 0usize;
        for a in (0..self.dim).rev() {
            flat = flat * n + multi[a];
        }
        flat
    }

    /// Layer tag from the per-axis margin: an element with min axis margin 0
    /// touches the boundary (`L0`); margin 1 means some axis index is next to
    /// an extreme one, so its closure meets an `L0` closure (`L1`).
    pub fn layer_of_multi(&self, multi: &[usize]) -> Layer {
        let n = self.elements_per_axis();
        let margin = (0..self.dim)
            .map(|a| multi[a].min(n - 1 - multi[a]))
            .min()
            .expect("dim >= 1");
        match margin {
            0 => Layer::L0,
            1 => Layer::L1,
            _ => Layer::Interior,
        }
    }

    pub fn layer(&self, flat: usize) -> Layer {
        self.layer_of_multi(&self.multi_index(flat))
    }

    /// Materialize one element.
    pub fn element(&self, flat: usize) -> Element {
        let multi = self.multi_index(flat);
        let nodes = self.axis_nodes();
        let mut lower = [0.0f64; 3];
        let mut width = [0.0f64; 3];
        for a in 0..self.dim {
            lower[a] = nodes[multi[a]];
            width[a] = nodes[multi[a] + 1] - nodes[multi[a]];
        }
        Element {
            index: flat,
            multi,
            lower,
            width,
            layer: self.layer_of_multi(&multi),
        }
    }

    /// Iterator over all elements in flat order.
    pub fn elements(&self) -> impl Iterator<Item = Element> + '_ {
        (0..self.element_count()).map(|k| self.element(k))
    }

    /// Exact sum of element volumes (a tiling check).
    pub fn total_volume(&self) -> f64 {
        let axis_len: f64 = self
            .axis_nodes()
            .windows(2)
            .map(|w| w[1] - w[0])
            .sum();
        axis_len.powi(self.dim as i32)
    }

    /// Line-based debug dump: a header followed by one line per element,
    /// `index lower_1 … lower_d h_1 … h_d layer`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "# dim={} sigma={} L={} variant={}\n",
            self.dim, self.axis.sigma, self.axis.layers, self.axis.variant
        ));
        for el in self.elements() {
            out.push_str(&format!("{}", el.index));
            for a in 0..self.dim {
                out.push_str(&format!(" {:.16e}", el.lower[a]));
            }
            for a in 0..self.dim {
                out.push_str(&format!(" {:.16e}", el.width[a]));
            }
            out.push_str(&format!(" {}\n", el.layer.code()));
        }
        out
    }
}

/// Index of the element containing `x` on an axis, ties broken towards the
/// lower-index element.
pub(crate) fn locate_interval(nodes: &[f64], x: f64) -> usize {
    let n = nodes.len() - 1;
    // Count interior nodes strictly below x; a point exactly on an interior
    // node then falls to the lower element.
    nodes[1..n].partition_point(|&v| v < x)
}

/// The boundary layer `Ω_0` as a set of elements plus its exact measure.
#[derive(Debug, Clone)]
pub struct BoundarySubdomain {
    pub elements: Vec<usize>,
    pub measure: f64,
}

/// Collect the `L0` elements; the measure is the complement of the inner box
/// spanned by the second through second-to-last axis nodes.
pub fn boundary_subdomain(mesh: &TensorMesh) -> BoundarySubdomain {
    let elements: Vec<usize> = (0..mesh.element_count())
        .filter(|&k| mesh.layer(k) == Layer::L0)
        .collect();
    let nodes = mesh.axis_nodes();
    let n = nodes.len() - 1;
    let inner = nodes[n - 1] - nodes[1];
    let measure = 1.0 - inner.powi(mesh.dim() as i32);
    BoundarySubdomain { elements, measure }
}

/// Continuous piecewise-multilinear cutoff `g(x) = ∏_a g₁(x_a)`; `g₁` is 0
/// on the first and last axis elements, 1 on all but the first two and last
/// two, and linear on the transition elements.
#[derive(Debug, Clone)]
pub struct CutoffFunction {
    mesh: Arc<TensorMesh>,
    /// `g₁` vertex values on the axis nodes.
    vertex_values: Vec<f64>,
}

/// Build the tensor-product cutoff. Requires at least 3 elements per axis
/// (with exactly 3, the cutoff is identically zero, which still satisfies
/// every required property).
pub fn build_cutoff(mesh: Arc<TensorMesh>) -> Result<CutoffFunction> {
    let n = mesh.elements_per_axis();
    if n < 3 {
        return Err(Error::InvalidParameter(format!(
            "cutoff needs at least 3 elements per axis, got {n}"
        )));
    }
    let vertex_values = (0..=n)
        .map(|i| if i <= 1 || i >= n - 1 { 0.0 } else { 1.0 })
        .collect();
    Ok(CutoffFunction { mesh, vertex_values })
}

impl CutoffFunction {
    pub fn mesh(&self) -> &Arc<TensorMesh> {
        &self.mesh
    }

    /// The 1D factor `g₁` at an axis coordinate.
    pub fn eval_g1(&self, x: f64) -> f64 {
        let nodes = self.mesh.axis_nodes();
        let e = locate_interval(nodes, x);
        let h = nodes[e + 1] - nodes[e];
        let t = (x - nodes[e]) / h;
        self.vertex_values[e] * (1.0 - t) + self.vertex_values[e + 1] * t
    }

    /// The tensor-product value `g(x)`.
    pub fn eval(&self, x: &[f64]) -> f64 {
        (0..self.mesh.dim()).map(|a| self.eval_g1(x[a])).product()
    }
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
