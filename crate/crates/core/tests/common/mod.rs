//! Shared fixtures and independent oracles for the integration tests.
#![allow(dead_code)]

use nalgebra::DMatrix;
use wncs_core::model::PlantModel;

pub type Mat = DMatrix<f64>;

pub fn mat(rows: &[&[f64]]) -> Mat {
    Mat::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])
}

pub fn a1() -> Mat {
    mat(&[&[1.1, 0.2], &[0.2, 0.8]])
}

pub fn a2() -> Mat {
    mat(&[&[1.2, 0.2], &[0.2, 0.9]])
}

pub fn a3() -> Mat {
    mat(&[&[1.3, 0.2], &[0.2, 1.0]])
}

pub fn b_col() -> Mat {
    mat(&[&[1.0], &[1.0]])
}

/// One of the three benchmark plants: `B = [1,1]ᵀ`, `C = I`, `Q = 0.1·I`.
pub fn paper_plant(a: Mat) -> PlantModel {
    let i2 = Mat::identity(2, 2);
    PlantModel::new(a, b_col(), i2.clone(), &i2 * 0.1, &i2 * 0.1).unwrap()
}

pub fn paper_plants() -> Vec<PlantModel> {
    vec![paper_plant(a1()), paper_plant(a2()), paper_plant(a3())]
}

/// Scalar unstable plant (`v = 1`).
pub fn scalar_plant() -> PlantModel {
    PlantModel::new(mat(&[&[1.3]]), mat(&[&[1.0]]), mat(&[&[1.0]]), mat(&[&[0.2]]), mat(&[&[0.05]])).unwrap()
}

/// Three-state single-input plant (`v = 3`) with a non-square output map.
pub fn third_order_plant() -> PlantModel {
    let a = mat(&[&[1.1, 0.3, 0.0], &[0.0, 0.9, 0.4], &[0.1, 0.0, 1.05]]);
    let b = mat(&[&[0.0], &[0.0], &[1.0]]);
    let c = mat(&[&[1.0, 0.0, 0.5], &[0.0, 1.0, 0.0]]);
    let qw = mat(&[&[0.1, 0.02, 0.0], &[0.02, 0.08, 0.0], &[0.0, 0.0, 0.05]]);
    let qv = mat(&[&[0.3, 0.0], &[0.0, 0.2]]);
    PlantModel::new(a, b, c, qw, qv).unwrap()
}

/// Two-state plant with unequal noise levels and a partial output.
pub fn skewed_plant() -> PlantModel {
    let a = a1();
    let c = mat(&[&[1.0, 0.5]]);
    let qw = mat(&[&[0.1, 0.03], &[0.03, 0.2]]);
    let qv = mat(&[&[0.4]]);
    PlantModel::new(a, b_col(), c, qw, qv).unwrap()
}

/// Exact second moments of the closed loop under a forced delivery script,
/// obtained by propagating the covariance of `[x, xˢ, x̂, buffer]` with
/// `x₀ ~ N(0, P̂ˢ)` and zero estimates.
///
/// Returns, per slot `k`, `(Cov(u_k), Cov(x_{k+1}), Cov(x̂_{k+1}))`.
pub fn exact_moments(p: &PlantModel, script: &[(bool, bool)]) -> Vec<(Mat, Mat, Mat)> {
    let (n, m, q, v) = (p.n(), p.m(), p.p(), p.v);
    let dim = 3 * n + v * m;
    let (xo, so, ho) = (0, n, 2 * n);
    let bo = |j: usize| 3 * n + j * m;
    let mut cov = Mat::zeros(dim, dim);
    cov.view_mut((xo, xo), (n, n)).copy_from(&p.ps_hat);
    let ikc = p.i_minus_kc();
    let mut out = Vec::new();
    for &(beta, gamma) in script {
        let mut bm = Mat::zeros(dim, dim);
        for k in 0..3 * n {
            bm[(k, k)] = 1.0;
        }
        for j in 0..v {
            if gamma {
                let g = &p.ktilde * p.phi.pow(j as u32);
                bm.view_mut((bo(j), ho), (m, n)).copy_from(&g);
            } else if j + 1 < v {
                for r in 0..m {
                    bm[(bo(j) + r, bo(j + 1) + r)] = 1.0;
                }
            }
        }
        cov = &bm * cov * bm.transpose();
        let ucov = cov.view((bo(0), bo(0)), (m, m)).into_owned();

        let mut f = Mat::zeros(dim, dim);
        let mut g = Mat::zeros(dim, n + q);
        f.view_mut((xo, xo), (n, n)).copy_from(&p.a);
        f.view_mut((xo, bo(0)), (n, m)).copy_from(&p.b);
        g.view_mut((xo, 0), (n, n)).copy_from(&Mat::identity(n, n));
        f.view_mut((so, so), (n, n)).copy_from(&(&ikc * &p.a));
        f.view_mut((so, bo(0)), (n, m)).copy_from(&(&ikc * &p.b + &p.khat * &p.c * &p.b));
        f.view_mut((so, xo), (n, n)).copy_from(&(&p.khat * &p.c * &p.a));
        g.view_mut((so, 0), (n, n)).copy_from(&(&p.khat * &p.c));
        g.view_mut((so, n), (n, q)).copy_from(&p.khat);
        if beta {
            f.view_mut((ho, so), (n, n)).copy_from(&p.a);
        } else {
            f.view_mut((ho, ho), (n, n)).copy_from(&p.a);
        }
        f.view_mut((ho, bo(0)), (n, m)).copy_from(&p.b);
        for k in 3 * n..dim {
            f[(k, k)] = 1.0;
        }
        let mut qn = Mat::zeros(n + q, n + q);
        qn.view_mut((0, 0), (n, n)).copy_from(&p.qw);
        qn.view_mut((n, n), (q, q)).copy_from(&p.qv);
        cov = &f * cov * f.transpose() + &g * qn * g.transpose();
        out.push((
            ucov,
            cov.view((xo, xo), (n, n)).into_owned(),
            cov.view((ho, ho), (n, n)).into_owned(),
        ));
    }
    out
}
