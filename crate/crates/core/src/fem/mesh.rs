//! Structured triangulation of the unit square.

/// `(n+1) × (n+1)` nodes, two triangles per cell. Nodes are numbered row by
/// row, `node(i, j) = j (n+1) + i` with `x = i h`, `y = j h`. Rows `j = 0`
/// and `j = n` carry homogeneous Dirichlet conditions; the remaining nodes are
/// the free degrees of freedom, numbered in the same order.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    n: usize,
}

impl Mesh {
    pub fn unit_square(n: usize) -> Self {
        assert!(n >= 2, "mesh needs at least two cells per side");
        Self { n }
    }

    #[inline]
    pub fn cells_per_side(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn node_count(&self) -> usize {
        (self.n + 1) * (self.n + 1)
    }

    /// `(n+1)² − 2(n+1)`.
    pub fn free_count(&self) -> usize {
        (self.n + 1) * (self.n - 1)
    }

    /// Half-bandwidth of every operator on the free nodes.
    pub fn bandwidth(&self) -> usize {
        self.n + 2
    }

    #[inline]
    pub fn node(&self, i: usize, j: usize) -> usize {
        j * (self.n + 1) + i
    }

    pub fn coords(&self, node: usize) -> [f64; 2] {
        let i = node % (self.n + 1);
        let j = node / (self.n + 1);
        [i as f64 * self.h(), j as f64 * self.h()]
    }

    /// Free index of a node, `None` on the Dirichlet rows.
    #[inline]
    pub fn free_index(&self, node: usize) -> Option<usize> {
        let j = node / (self.n + 1);
        (j >= 1 && j < self.n).then(|| node - (self.n + 1))
    }

    /// Node number of free index `k`.
    #[inline]
    pub fn free_node(&self, k: usize) -> usize {
        k + self.n + 1
    }

    /// Triangles as counter-clockwise node triples.
    pub fn triangles(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        (0..self.n).flat_map(move |j| {
            (0..self.n).flat_map(move |i| {
                let a = self.node(i, j);
                let b = self.node(i + 1, j);
                let c = self.node(i + 1, j + 1);
                let d = self.node(i, j + 1);
                [[a, b, c], [a, c, d]]
            })
        })
    }

    pub fn triangle_count(&self) -> usize {
        2 * self.n * self.n
    }

    /// Nodes on the right edge `x = 1`, bottom to top. These carry the control.
    pub fn right_edge_nodes(&self) -> Vec<usize> {
        (0..=self.n).map(|j| self.node(self.n, j)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn free_dof_count() {
        assert_eq!(Mesh::unit_square(32).free_count(), 1023);
        assert_eq!(Mesh::unit_square(4).free_count(), 15);
    }

    #[test]
    fn free_numbering_roundtrip() {
        let m = Mesh::unit_square(5);
        let mut k = 0;
        for node in 0..m.node_count() {
            if let Some(f) = m.free_index(node) {
                assert_eq!(f, k);
                assert_eq!(m.free_node(f), node);
                k += 1;
            }
        }
        assert_eq!(k, m.free_count());
    }

    #[test]
    fn triangles_cover_the_square() {
        let m = Mesh::unit_square(3);
        let area: f64 = m
            .triangles()
            .map(|t| {
                let [a, b, c] = t.map(|v| m.coords(v));
                0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
            })
            .sum();
        assert_eq!(m.triangles().count(), m.triangle_count());
        assert!((area - 1.0).abs() < 1e-14);
    }
}
