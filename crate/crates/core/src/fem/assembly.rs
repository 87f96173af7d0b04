//! P1 element integrals and global assembly on the free nodes.

use super::mesh::Mesh;
use crate::linalg::BandedSymmetric;
use nalgebra::{DMatrix, DVector};

/// Field `a(x, y)` on the physical domain.
pub type Field = fn(f64, f64) -> f64;

/// `κ(x, ξ) = Σ_q θ_q(ξ) a_q(x)`.
#[derive(Debug, Clone)]
pub struct AffineDiffusion {
    pub name: &'static str,
    pub fields: Vec<Field>,
    pub factors: fn(&[f64]) -> Vec<f64>,
}

impl AffineDiffusion {
    pub fn terms(&self) -> usize {
        self.fields.len()
    }

    pub fn theta(&self, xi: &[f64]) -> Vec<f64> {
        let t = (self.factors)(xi);
        debug_assert_eq!(t.len(), self.fields.len());
        t
    }

    pub fn eval(&self, x: f64, y: f64, xi: &[f64]) -> f64 {
        self.theta(xi)
            .iter()
            .zip(&self.fields)
            .map(|(t, a)| t * a(x, y))
            .sum()
    }

    /// `κ ≡ 1`.
    pub fn unit() -> Self {
        Self {
            name: "unit",
            fields: vec![|_, _| 1.0],
            factors: |_| vec![1.0],
        }
    }
}

/// Seven-point rule on the reference triangle, exact for degree 5.
/// Barycentric coordinates and weights summing to one.
pub(crate) fn triangle_rule() -> [([f64; 3], f64); 7] {
    let s = 15f64.sqrt();
    let a1 = (6.0 - s) / 21.0;
    let b1 = 1.0 - 2.0 * a1;
    let w1 = (155.0 - s) / 1200.0;
    let a2 = (6.0 + s) / 21.0;
    let b2 = 1.0 - 2.0 * a2;
    let w2 = (155.0 + s) / 1200.0;
    let c = 1.0 / 3.0;
    [
        ([c, c, c], 9.0 / 40.0),
        ([a1, a1, b1], w1),
        ([a1, b1, a1], w1),
        ([b1, a1, a1], w1),
        ([a2, a2, b2], w2),
        ([a2, b2, a2], w2),
        ([b2, a2, a2], w2),
    ]
}

/// Geometry of one triangle.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Element {
    pub xy: [[f64; 2]; 3],
    pub area: f64,
    /// Gradients of the three hat functions.
    pub grad: [[f64; 2]; 3],
}

impl Element {
    pub fn new(mesh: &Mesh, nodes: [usize; 3]) -> Self {
        let xy = nodes.map(|v| mesh.coords(v));
        let [p0, p1, p2] = xy;
        let det = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]);
        let area = 0.5 * det;
        let grad = [
            [(p1[1] - p2[1]) / det, (p2[0] - p1[0]) / det],
            [(p2[1] - p0[1]) / det, (p0[0] - p2[0]) / det],
            [(p0[1] - p1[1]) / det, (p1[0] - p0[0]) / det],
        ];
        Self {
            xy,
            area,
            grad,
        }
    }

    pub fn point(&self, bary: &[f64; 3]) -> [f64; 2] {
        let mut p = [0.0; 2];
        for (b, q) in bary.iter().zip(&self.xy) {
            p[0] += b * q[0];
            p[1] += b * q[1];
        }
        p
    }

    pub fn centroid(&self) -> [f64; 2] {
        self.point(&[1.0 / 3.0; 3])
    }

    pub fn stiffness(&self) -> [[f64; 3]; 3] {
        let mut k = [[0.0; 3]; 3];
        for a in 0..3 {
            for b in 0..3 {
                k[a][b] = self.area
                    * (self.grad[a][0] * self.grad[b][0] + self.grad[a][1] * self.grad[b][1]);
            }
        }
        k
    }

    pub fn mass(&self) -> [[f64; 3]; 3] {
        let mut m = [[self.area / 12.0; 3]; 3];
        for (a, row) in m.iter_mut().enumerate() {
            row[a] = self.area / 6.0;
        }
        m
    }
}

/// Adds a local 3×3 matrix into the free-node band, dropping Dirichlet rows.
pub(crate) fn scatter(mesh: &Mesh, target: &mut BandedSymmetric, nodes: [usize; 3], local: &[[f64; 3]; 3]) {
    let free = nodes.map(|v| mesh.free_index(v));
    for a in 0..3 {
        let Some(i) = free[a] else { continue };
        for b in 0..=a {
            let Some(j) = free[b] else { continue };
            if a == b {
                target.add(i, i, local[a][a]);
            } else {
                target.add(i, j, local[a][b]);
            }
        }
    }
}

/// Stiffness blocks `A_q` for every affine term, with the minimum and maximum
/// of each field over the quadrature points actually used.
pub fn assemble_diffusion_blocks(
    mesh: &Mesh,
    diffusion: &AffineDiffusion,
) -> (Vec<BandedSymmetric>, Vec<f64>, Vec<f64>) {
    let nf = mesh.free_count();
    let bw = mesh.bandwidth();
    let rule = triangle_rule();
    let q = diffusion.terms();
    let mut blocks = vec![BandedSymmetric::zeros(nf, bw); q];
    let mut lo = vec![f64::INFINITY; q];
    let mut hi = vec![f64::NEG_INFINITY; q];
    for tri in mesh.triangles() {
        let el = Element::new(mesh, tri);
        let k = el.stiffness();
        for (t, field) in diffusion.fields.iter().enumerate() {
            let mut mean = 0.0;
            for (bary, w) in &rule {
                let [x, y] = el.point(bary);
                let a = field(x, y);
                lo[t] = lo[t].min(a);
                hi[t] = hi[t].max(a);
                mean += w * a;
            }
            let scaled = k.map(|row| row.map(|v| v * mean));
            scatter(mesh, &mut blocks[t], tri, &scaled);
        }
    }
    (blocks, lo, hi)
}

/// Mass matrix of `L²(D)` restricted to triangles whose centroid satisfies
/// `keep`.
pub fn assemble_mass(mesh: &Mesh, keep: impl Fn(f64, f64) -> bool) -> BandedSymmetric {
    let mut m = BandedSymmetric::zeros(mesh.free_count(), mesh.bandwidth());
    for tri in mesh.triangles() {
        let el = Element::new(mesh, tri);
        let [cx, cy] = el.centroid();
        if keep(cx, cy) {
            scatter(mesh, &mut m, tri, &el.mass());
        }
    }
    m
}

/// `∫ l φ_i` for every node (Dirichlet nodes included).
pub fn assemble_load_all_nodes(mesh: &Mesh, l: impl Fn(f64, f64) -> f64) -> DVector<f64> {
    let rule = triangle_rule();
    let mut out = DVector::zeros(mesh.node_count());
    for tri in mesh.triangles() {
        let el = Element::new(mesh, tri);
        for (bary, w) in &rule {
            let [x, y] = el.point(bary);
            let v = w * el.area * l(x, y);
            for a in 0..3 {
                out[tri[a]] += v * bary[a];
            }
        }
    }
    out
}

/// Load restricted to the free nodes.
pub fn assemble_load(mesh: &Mesh, l: impl Fn(f64, f64) -> f64) -> DVector<f64> {
    let all = assemble_load_all_nodes(mesh, l);
    DVector::from_fn(mesh.free_count(), |k, _| all[mesh.free_node(k)])
}

/// P1 mass matrix of the right edge in the nodal basis of its `n+1` nodes.
pub fn edge_mass(mesh: &Mesh) -> DMatrix<f64> {
    let n = mesh.cells_per_side();
    let h = mesh.h();
    let mut m = DMatrix::zeros(n + 1, n + 1);
    for e in 0..n {
        m[(e, e)] += h / 3.0;
        m[(e + 1, e + 1)] += h / 3.0;
        m[(e, e + 1)] += h / 6.0;
        m[(e + 1, e)] += h / 6.0;
    }
    m
}

/// Control operator: `(B z)_i = ∫_E z φ_i` for free node `i`, with `z` given
/// by its nodal values on the right edge.
pub fn control_operator(mesh: &Mesh) -> DMatrix<f64> {
    let me = edge_mass(mesh);
    let nf = mesh.free_count();
    let nodes = mesh.right_edge_nodes();
    let mut b = DMatrix::zeros(nf, nodes.len());
    for (j, node) in nodes.iter().enumerate() {
        if let Some(i) = mesh.free_index(*node) {
            for k in 0..nodes.len() {
                b[(i, k)] = me[(j, k)];
            }
        }
    }
    b
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triangle_rule_is_degree_five() {
        // ∫_T λ1^a λ2^b λ3^c = 2|T| a! b! c! / (a+b+c+2)!
        let fact = |n: u32| (1..=n).product::<u32>() as f64;
        let rule = triangle_rule();
        for (a, b, c) in [(0, 0, 0), (2, 1, 0), (5, 0, 0), (1, 2, 2), (3, 1, 1)] {
            let q: f64 = rule
                .iter()
                .map(|(l, w)| w * l[0].powi(a) * l[1].powi(b) * l[2].powi(c))
                .sum();
            let exact = 2.0 * fact(a as u32) * fact(b as u32) * fact(c as u32)
                / fact((a + b + c + 2) as u32);
            assert!((q - exact).abs() < 1e-15, "{a}{b}{c}: {q} vs {exact}");
        }
    }

    #[test]
    fn unit_diffusion_is_the_laplacian() {
        let mesh = Mesh::unit_square(4);
        let (blocks, lo, hi) = assemble_diffusion_blocks(&mesh, &AffineDiffusion::unit());
        assert_eq!((lo[0], hi[0]), (1.0, 1.0));
        let a = &blocks[0];
        // Interior node of the standard five-point stencil.
        let k = mesh.free_index(mesh.node(2, 2)).unwrap();
        assert!((a.get(k, k) - 4.0).abs() < 1e-14);
        let e = mesh.free_index(mesh.node(3, 2)).unwrap();
        assert!((a.get(k, e) + 1.0).abs() < 1e-14);
        let d = mesh.free_index(mesh.node(3, 3)).unwrap();
        assert!(a.get(k, d).abs() < 1e-14);
    }

    #[test]
    fn control_of_ones_is_edge_mass_row_sums() {
        let mesh = Mesh::unit_square(8);
        let b = control_operator(&mesh);
        let ones = DVector::from_element(9, 1.0);
        let bz = &b * &ones;
        let h = mesh.h();
        for j in 1..8 {
            let i = mesh.free_index(mesh.node(8, j)).unwrap();
            assert!((bz[i] - h).abs() < 1e-15);
        }
        assert!((edge_mass(&mesh).sum() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn mass_integrates_constants() {
        let mesh = Mesh::unit_square(6);
        let all = assemble_load_all_nodes(&mesh, |_, _| 1.0);
        assert!((all.sum() - 1.0).abs() < 1e-14);
        let half = assemble_load_all_nodes(&mesh, |x, y| x * y);
        assert!((half.sum() - 0.25).abs() < 1e-14);
    }
}
