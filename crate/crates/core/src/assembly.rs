//! P1 assembly of the bulk and boundary mass and stiffness matrices.
//!
//! The dynamic boundary shares its nodes with the bulk, so the trace coupling
//! is conforming: the boundary matrices simply add into the same rows. The
//! Laplace–Beltrami stiffness is the 1D arclength stiffness along the `Gamma1`
//! edges and vanishes in the rod case where `Gamma1` is a point.

use nalgebra::DVector;
use nalgebra_sparse::{CooMatrix, CsrMatrix};

use crate::error::{check_len, Error, Result};
use crate::linalg::{quad_form, restrict, row_sums};
use crate::mesh::{BoundaryTag, Mesh};

/// Node-indexed matrices before Dirichlet elimination.
#[derive(Clone, Debug)]
pub struct NodalMatrices {
    pub mass_bulk: CsrMatrix<f64>,
    pub mass_boundary: CsrMatrix<f64>,
    pub stiff_bulk: CsrMatrix<f64>,
    pub stiff_boundary: CsrMatrix<f64>,
}

/// Operators restricted to the free (non-Dirichlet) degrees of freedom.
#[derive(Clone, Debug)]
pub struct DiscreteOperators {
    pub mass_bulk: CsrMatrix<f64>,
    pub mass_boundary: CsrMatrix<f64>,
    pub stiff_bulk: CsrMatrix<f64>,
    pub stiff_boundary: CsrMatrix<f64>,
    /// `mass_bulk + mass_boundary`
    pub mass: CsrMatrix<f64>,
    /// `stiff_bulk + stiff_boundary`
    pub stiff: CsrMatrix<f64>,
    /// System index -> mesh node.
    pub free_nodes: Vec<usize>,
    /// Mesh node -> system index, `None` for Dirichlet nodes.
    pub node_to_dof: Vec<Option<usize>>,
    /// Free dofs lying on `Gamma1`.
    pub boundary_dofs: Vec<usize>,
    pub lumped_bulk: DVector<f64>,
    pub lumped_boundary: DVector<f64>,
    pub nodal: NodalMatrices,
}

fn p1_element(mesh: &Mesh, e: usize) -> (Vec<f64>, Vec<f64>) {
    let el = mesh.element(e);
    let meas = mesh.element_measure(e);
    match mesh.dim() {
        1 => {
            let h = meas;
            (
                vec![h / 3.0, h / 6.0, h / 6.0, h / 3.0],
                vec![1.0 / h, -1.0 / h, -1.0 / h, 1.0 / h],
            )
        }
        _ => {
            let p: Vec<&[f64]> = el.iter().map(|&n| mesh.node(n)).collect();
            // gradient of barycentric i is rot90(opposite edge) / (2 area)
            let grads: Vec<[f64; 2]> = (0..3)
                .map(|i| {
                    let (a, b) = (p[(i + 1) % 3], p[(i + 2) % 3]);
                    [(a[1] - b[1]) / (2.0 * meas), (b[0] - a[0]) / (2.0 * meas)]
                })
                .collect();
            let mut mass = vec![0.0; 9];
            let mut stiff = vec![0.0; 9];
            for i in 0..3 {
                for j in 0..3 {
                    mass[3 * i + j] = if i == j { meas / 6.0 } else { meas / 12.0 };
                    stiff[3 * i + j] = meas * (grads[i][0] * grads[j][0] + grads[i][1] * grads[j][1]);
                }
            }
            (mass, stiff)
        }
    }
}

/// Assembles the four matrices over all mesh nodes.
pub fn assemble_nodal(mesh: &Mesh) -> NodalMatrices {
    let n = mesh.num_nodes();
    let mut mass_bulk = CooMatrix::new(n, n);
    let mut stiff_bulk = CooMatrix::new(n, n);
    for e in 0..mesh.num_elements() {
        let el = mesh.element(e);
        let k = el.len();
        let (me, ke) = p1_element(mesh, e);
        for i in 0..k {
            for j in 0..k {
                mass_bulk.push(el[i], el[j], me[k * i + j]);
                stiff_bulk.push(el[i], el[j], ke[k * i + j]);
            }
        }
    }
    let mut mass_boundary = CooMatrix::new(n, n);
    let mut stiff_boundary = CooMatrix::new(n, n);
    for f in 0..mesh.num_facets() {
        if mesh.facet_tag(f) != BoundaryTag::Gamma1 {
            continue;
        }
        let fc = mesh.facet(f);
        match fc {
            [a] => mass_boundary.push(*a, *a, 1.0),
            [a, b] => {
                let len = mesh.facet_measure(f);
                let (a, b) = (*a, *b);
                mass_boundary.push(a, a, len / 3.0);
                mass_boundary.push(b, b, len / 3.0);
                mass_boundary.push(a, b, len / 6.0);
                mass_boundary.push(b, a, len / 6.0);
                stiff_boundary.push(a, a, 1.0 / len);
                stiff_boundary.push(b, b, 1.0 / len);
                stiff_boundary.push(a, b, -1.0 / len);
                stiff_boundary.push(b, a, -1.0 / len);
            }
            _ => unreachable!(),
        }
    }
    NodalMatrices {
        mass_bulk: CsrMatrix::from(&mass_bulk),
        mass_boundary: CsrMatrix::from(&mass_boundary),
        stiff_bulk: CsrMatrix::from(&stiff_bulk),
        stiff_boundary: CsrMatrix::from(&stiff_boundary),
    }
}

/// Assembles and eliminates the Dirichlet nodes.
pub fn assemble(mesh: &Mesh) -> Result<DiscreteOperators> {
    let nodal = assemble_nodal(mesh);
    let dirichlet = mesh.dirichlet_mask();
    let free_nodes: Vec<usize> = (0..mesh.num_nodes()).filter(|&i| !dirichlet[i]).collect();
    if free_nodes.is_empty() {
        return Err(Error::DegenerateSystem("no free degrees of freedom".into()));
    }
    let mut node_to_dof = vec![None; mesh.num_nodes()];
    for (k, &node) in free_nodes.iter().enumerate() {
        node_to_dof[node] = Some(k);
    }
    let gamma1 = mesh.gamma1_mask();
    let boundary_dofs = free_nodes
        .iter()
        .enumerate()
        .filter_map(|(k, &node)| gamma1[node].then_some(k))
        .collect();
    let pick = |v: DVector<f64>| DVector::from_iterator(free_nodes.len(), free_nodes.iter().map(|&i| v[i]));
    let lumped_bulk = pick(row_sums(&nodal.mass_bulk));
    let lumped_boundary = pick(row_sums(&nodal.mass_boundary));
    let r = |a: &CsrMatrix<f64>| restrict(a, &free_nodes, &node_to_dof);
    let (mass_bulk, mass_boundary) = (r(&nodal.mass_bulk), r(&nodal.mass_boundary));
    let (stiff_bulk, stiff_boundary) = (r(&nodal.stiff_bulk), r(&nodal.stiff_boundary));
    let mass = &mass_bulk + &mass_boundary;
    let stiff = &stiff_bulk + &stiff_boundary;
    Ok(DiscreteOperators {
        mass_bulk,
        mass_boundary,
        stiff_bulk,
        stiff_boundary,
        mass,
        stiff,
        free_nodes,
        node_to_dof,
        boundary_dofs,
        lumped_bulk,
        lumped_boundary,
        nodal,
    })
}

impl DiscreteOperators {
    pub fn num_dofs(&self) -> usize {
        self.free_nodes.len()
    }

    /// Restricts a node-indexed vector to the free dofs.
    pub fn restrict_nodal(&self, nodal: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.num_dofs(), self.free_nodes.iter().map(|&i| nodal[i]))
    }

    /// Extends a free-dof vector by zeros on the Dirichlet nodes.
    pub fn extend_to_nodes(&self, u: &DVector<f64>) -> Vec<f64> {
        self.node_to_dof
            .iter()
            .map(|d| d.map_or(0.0, |k| u[k]))
            .collect()
    }
}

/// Discrete H¹ norm: `sqrt(u^T K u + u^T M_boundary u)`.
pub fn h1_norm(ops: &DiscreteOperators, u: &DVector<f64>) -> Result<f64> {
    check_len(ops.num_dofs(), u.len())?;
    Ok((quad_form(&ops.stiff, u) + quad_form(&ops.mass_boundary, u)).max(0.0).sqrt())
}

/// Discrete H⁰ norm: `sqrt(v^T M v)`.
pub fn h0_norm(ops: &DiscreteOperators, v: &DVector<f64>) -> Result<f64> {
    check_len(ops.num_dofs(), v.len())?;
    Ok(quad_form(&ops.mass, v).max(0.0).sqrt())
}

/// `(sum_i w_i field_i |u_i|^rho)^(1/rho)` with quadrature weights `w`
/// (either lumped weight vector of the operators).
pub fn weighted_lp_norm(
    weights: &DVector<f64>,
    u: &DVector<f64>,
    rho: f64,
    field: &DVector<f64>,
) -> Result<f64> {
    if !(rho >= 1.0) {
        return Err(Error::InvalidParameter(format!("exponent must be >= 1, got {rho}")));
    }
    check_len(weights.len(), u.len())?;
    check_len(weights.len(), field.len())?;
    let sum: f64 = (0..u.len())
        .map(|i| weights[i] * field[i] * u[i].abs().powf(rho))
        .sum();
    Ok(sum.powf(1.0 / rho))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::asymmetry;
    use crate::mesh::{generate_annulus, generate_interval, generate_rectangle, Side};
    use nalgebra::{DMatrix, SymmetricEigen};
    use std::f64::consts::PI;

    fn dense(a: &CsrMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from(a)
    }

    #[test]
    fn two_element_rod_by_hand() {
        let ops = assemble(&generate_interval(1.0, 2).unwrap()).unwrap();
        assert_eq!(dense(&ops.stiff_bulk), DMatrix::from_row_slice(2, 2, &[4.0, -2.0, -2.0, 2.0]));
        assert_eq!(dense(&ops.mass_boundary), DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]));
        assert_eq!(ops.stiff_boundary.nnz(), 0);
        assert_eq!(ops.boundary_dofs, vec![1]);
        assert!((ops.lumped_bulk.clone() - DVector::from_vec(vec![0.5, 0.25])).amax() < 1e-15);
    }

    #[test]
    fn row_sums_recover_measures() {
        for (mesh, len) in [
            (generate_interval(2.5, 9).unwrap(), 1.0),
            (generate_rectangle(2.0, 0.5, 4, 3, Side::Bottom).unwrap(), 2.0),
        ] {
            let nodal = assemble_nodal(&mesh);
            assert!((row_sums(&nodal.mass_bulk).sum() - mesh.total_measure()).abs() < 1e-13);
            assert!((row_sums(&nodal.mass_boundary).sum() - len).abs() < 1e-13);
        }
        let annulus = generate_annulus(0.3, 1.0, 4, 32).unwrap();
        let nodal = assemble_nodal(&annulus);
        let perimeter = annulus.boundary_measure(BoundaryTag::Gamma1);
        assert!((row_sums(&nodal.mass_boundary).sum() - perimeter).abs() < 1e-12);
        assert!((perimeter - 2.0 * PI).abs() < 0.01 * 2.0 * PI);
    }

    #[test]
    fn matrices_are_exactly_symmetric() {
        let ops = assemble(&generate_annulus(0.3, 1.0, 5, 17).unwrap()).unwrap();
        for a in [&ops.mass_bulk, &ops.mass_boundary, &ops.stiff_bulk, &ops.stiff_boundary] {
            assert_eq!(asymmetry(a), 0.0);
        }
    }

    #[test]
    fn patch_test_before_elimination() {
        let mesh = generate_annulus(0.3, 1.0, 4, 16).unwrap();
        let nodal = assemble_nodal(&mesh);
        let ones = DVector::from_element(mesh.num_nodes(), 1.0);
        assert!(crate::linalg::spmv(&nodal.stiff_bulk, &ones).amax() < 1e-12);
        assert!(crate::linalg::spmv(&nodal.stiff_boundary, &ones).amax() < 1e-12);
    }

    #[test]
    fn spectra_are_positive() {
        for mesh in [
            generate_interval(1.0, 40).unwrap(),
            generate_annulus(0.3, 1.0, 4, 24).unwrap(),
            generate_rectangle(1.0, 1.0, 8, 8, Side::Top).unwrap(),
        ] {
            let ops = assemble(&mesh).unwrap();
            assert!(ops.num_dofs() <= 500);
            for a in [&ops.mass, &ops.stiff] {
                let eig = SymmetricEigen::new(dense(a));
                assert!(eig.eigenvalues.min() > 0.0);
            }
        }
    }

    #[test]
    fn norms_by_hand() {
        let ops = assemble(&generate_interval(1.0, 2).unwrap()).unwrap();
        let u = DVector::from_column_slice(&[0.5, 1.0]);
        assert!((h1_norm(&ops, &u).unwrap().powi(2) - 2.0).abs() < 1e-14);
        assert_eq!(h1_norm(&ops, &DVector::zeros(2)).unwrap(), 0.0);
        assert!(h1_norm(&ops, &DVector::zeros(3)).is_err());
        let lp = weighted_lp_norm(&ops.lumped_bulk, &DVector::from_column_slice(&[0.0, 1.0]), 4.0, &DVector::from_element(2, 1.0)).unwrap();
        assert!((lp - 0.25f64.powf(0.25)).abs() < 1e-15);
        assert!((lp - 0.7071).abs() < 1e-4);
        assert!(weighted_lp_norm(&ops.lumped_bulk, &u, 0.5, &DVector::from_element(2, 1.0)).is_err());
    }

    #[test]
    fn lp_with_unit_field_is_lumped_l2() {
        let ops = assemble(&generate_annulus(0.3, 1.0, 3, 12).unwrap()).unwrap();
        let u = DVector::from_fn(ops.num_dofs(), |i, _| (i as f64 * 0.37).sin());
        let ones = DVector::from_element(ops.num_dofs(), 1.0);
        let l2: f64 = (0..u.len()).map(|i| ops.lumped_bulk[i] * u[i] * u[i]).sum::<f64>().sqrt();
        assert!((weighted_lp_norm(&ops.lumped_bulk, &u, 2.0, &ones).unwrap() - l2).abs() < 1e-14);
    }

    #[test]
    fn empty_gamma1_keeps_mass_definite() {
        let ops = assemble(&generate_annulus(0.3, 1.0, 3, 12).unwrap().without_gamma1()).unwrap();
        assert_eq!(ops.mass_boundary.values().iter().map(|v| v.abs()).sum::<f64>(), 0.0);
        assert!(ops.boundary_dofs.is_empty());
        let eig = SymmetricEigen::new(dense(&ops.mass));
        assert!(eig.eigenvalues.min() > 0.0);
    }

    #[test]
    fn no_free_dofs_is_degenerate() {
        // two-element rod with both ends pinched and a single interior node is fine,
        // so strip the interior by using a mesh with only boundary nodes
        let mesh = Mesh::new(
            1,
            vec![0.0, 1.0],
            vec![0, 1],
            vec![0, 1],
            vec![BoundaryTag::Gamma0, BoundaryTag::Gamma0],
        )
        .unwrap();
        assert!(matches!(assemble(&mesh), Err(Error::DegenerateSystem(_))));
    }
}
