//! Transverse Levi-Civita connection and curvature of a metric on the chart.
//!
//! All partial derivatives use the grid's fourth-order periodic stencil.
//! Christoffel symbols are stored with their lower pair packed, so symmetry
//! in `(j, k)` is structural; the Riemann tensor is assembled as a difference
//! of a term and its `(i, j)`-swap, so antisymmetry holds bit for bit.

use crate::error::{Error, Result};
use crate::field::{sym, sym_det_inverse, sym_len, MetricField, ScalarField, SymTensorField};
use crate::model::FoliationModel;
use crate::scalar::{ordered_sum, Real};

/// Nodal determinants below this raise [`Error::SingularMetric`].
pub const DET_FLOOR: f64 = 1e-10;

/// Inverse metric and volume density, computed once per metric.
#[derive(Clone, Debug)]
pub struct MetricInfo<T> {
    pub inv: SymTensorField<T>,
    pub det: Vec<T>,
    pub sqrt_det: Vec<T>,
}

impl<T: Real> MetricInfo<T> {
    pub fn new(g: &MetricField<T>) -> Result<Self> {
        let grid = g.grid();
        let m = grid.m();
        let k = sym_len(m);
        let t = g.tensor();
        let planes = grid.fill_planes(k + 1, |node, out| {
            let mut buf = [T::zero(); 6];
            let a = &mut buf[..k];
            t.node_into(node, a);
            let (inv, det) = out.split_at_mut(k);
            det[0] = sym_det_inverse(m, a, inv);
        });
        let mut planes = planes;
        let det = planes.pop().expect("determinant plane");
        let floor = T::lit(DET_FLOOR);
        if let Some(node) = det.iter().position(|&d| !(d > floor)) {
            return Err(Error::SingularMetric {
                node,
                det: det[node].to_f64_lossy(),
                floor: DET_FLOOR,
            });
        }
        let sqrt_det = det.iter().map(|d| d.sqrt()).collect();
        Ok(Self {
            inv: SymTensorField::from_planes(m, planes)?,
            det,
            sqrt_det,
        })
    }

    pub fn min_det(&self) -> T {
        self.det.iter().fold(T::infinity(), |a, &b| a.min(b))
    }
}

/// `Γ^l_{jk}` with `(j, k)` packed.
#[derive(Clone, Debug)]
pub struct Christoffel<T> {
    m: usize,
    planes: Vec<Vec<T>>,
}

impl<T: Real> Christoffel<T> {
    #[inline]
    pub fn m(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn get(&self, l: usize, j: usize, k: usize) -> &[T] {
        &self.planes[l * sym_len(self.m) + sym(self.m, j, k)]
    }

    #[inline]
    pub fn at(&self, node: usize, l: usize, j: usize, k: usize) -> T {
        self.get(l, j, k)[node]
    }

    pub fn max_abs(&self) -> T {
        self.planes
            .iter()
            .flatten()
            .fold(T::zero(), |a, x| a.max(x.abs()))
    }
}

/// `Γ^l_{jk} = ½ g^{lp}(∂_j g_pk + ∂_k g_pj − ∂_p g_jk)`.
pub fn christoffel<T: Real>(g: &MetricField<T>) -> Result<Christoffel<T>> {
    let info = MetricInfo::new(g)?;
    Ok(christoffel_with(g, &info))
}

pub fn christoffel_with<T: Real>(g: &MetricField<T>, info: &MetricInfo<T>) -> Christoffel<T> {
    let grid = g.grid();
    let m = grid.m();
    let k = sym_len(m);
    // dg[a * k + c] = ∂_a g_c
    let dg: Vec<Vec<T>> = (0..m)
        .flat_map(|a| g.tensor().comps.iter().map(move |c| (a, c)))
        .map(|(a, c)| grid.diff(c, a))
        .collect();
    let planes = grid.fill_planes(m * k, |node, out| match m {
        2 => christoffel_kernel::<T, 2>(node, &dg, info, out),
        _ => christoffel_kernel::<T, 3>(node, &dg, info, out),
    });
    Christoffel { m, planes }
}

#[inline(always)]
fn christoffel_kernel<T: Real, const M: usize>(node: usize, dg: &[Vec<T>], info: &MetricInfo<T>, out: &mut [T]) {
    let k = sym_len(M);
    let mut d = [[[T::zero(); M]; M]; M];
    let mut inv = [[T::zero(); M]; M];
    for i in 0..M {
        for j in i..M {
            let c = sym(M, i, j);
            for a in 0..M {
                let v = dg[a * k + c][node];
                d[a][i][j] = v;
                d[a][j][i] = v;
            }
            let v = info.inv.comps[c][node];
            inv[i][j] = v;
            inv[j][i] = v;
        }
    }
    let half = T::lit(0.5);
    // lowered symbols Γ_{p,jk}
    let mut lower = [[[T::zero(); M]; M]; M];
    for p in 0..M {
        for j in 0..M {
            for kk in j..M {
                lower[p][j][kk] = half * (d[j][p][kk] + d[kk][p][j] - d[p][j][kk]);
            }
        }
    }
    for l in 0..M {
        for j in 0..M {
            for kk in j..M {
                let mut s = T::zero();
                for p in 0..M {
                    s += inv[l][p] * lower[p][j][kk];
                }
                out[l * k + sym(M, j, kk)] = s;
            }
        }
    }
}

/// Riemann, Ricci and scalar curvature of a metric.
#[derive(Clone, Debug)]
pub struct CurvatureBundle<T> {
    pub gamma: Christoffel<T>,
    /// `R^l_{ijk}` at plane `((l·m + i)·m + j)·m + k`.
    pub riemann: Vec<Vec<T>>,
    pub ricci: SymTensorField<T>,
    pub scal: ScalarField<T>,
}

impl<T: Real> CurvatureBundle<T> {
    #[inline]
    pub fn riemann_at(&self, node: usize, l: usize, i: usize, j: usize, k: usize) -> T {
        let m = self.gamma.m();
        self.riemann[((l * m + i) * m + j) * m + k][node]
    }

    /// Largest cyclic sum `|R^l_{ijk} + R^l_{jki} + R^l_{kij}|` over nodes and indices.
    pub fn first_bianchi_residual(&self) -> T {
        let m = self.gamma.m();
        let n = self.scal.len();
        let mut worst = T::zero();
        for node in 0..n {
            for l in 0..m {
                for i in 0..m {
                    for j in 0..m {
                        for k in 0..m {
                            let r = self.riemann_at(node, l, i, j, k)
                                + self.riemann_at(node, l, j, k, i)
                                + self.riemann_at(node, l, k, i, j);
                            worst = worst.max(r.abs());
                        }
                    }
                }
            }
        }
        worst
    }
}

/// `R^l_{ijk} = ∂_iΓ^l_{jk} − ∂_jΓ^l_{ik} + Γ^p_{jk}Γ^l_{ip} − Γ^p_{ik}Γ^l_{jp}`,
/// Ricci by the frame contraction `Ric(Y) = Σ R(Y, e_i) e_i` (lowered and
/// symmetrized), scalar curvature by the metric trace.
pub fn curvature<T: Real>(g: &MetricField<T>) -> Result<CurvatureBundle<T>> {
    let info = MetricInfo::new(g)?;
    Ok(curvature_with(g, &info))
}

pub fn curvature_with<T: Real>(g: &MetricField<T>, info: &MetricInfo<T>) -> CurvatureBundle<T> {
    curvature_from(g, info, christoffel_with(g, info))
}

/// Curvature from an already computed connection of `g`.
pub fn curvature_from<T: Real>(g: &MetricField<T>, info: &MetricInfo<T>, gamma: Christoffel<T>) -> CurvatureBundle<T> {
    let m = g.m();
    let k = sym_len(m);
    let m4 = m * m * m * m;
    let dgam = connection_derivatives(g, &gamma);
    let mut planes = g.grid().fill_planes(m4 + k + 1, |node, out| {
        let (riem, rest) = out.split_at_mut(m4);
        riemann_at_node(m, node, &gamma, &dgam, riem);
        rest[k] = ricci_at_node(m, node, g, info, riem, &mut rest[..k]);
    });
    let scal = ScalarField(planes.pop().expect("scalar plane"));
    let ricci = SymTensorField::from_planes(m, planes.split_off(m4)).expect("ricci planes");
    CurvatureBundle {
        gamma,
        riemann: planes,
        ricci,
        scal,
    }
}

/// Ricci and scalar curvature only, without materializing the Riemann planes.
pub fn ricci_from<T: Real>(g: &MetricField<T>, info: &MetricInfo<T>, gamma: &Christoffel<T>) -> (SymTensorField<T>, ScalarField<T>) {
    let m = g.m();
    let k = sym_len(m);
    let dgam = connection_derivatives(g, gamma);
    let mut planes = g.grid().fill_planes(k + 1, |node, out| {
        let (ric, scal) = out.split_at_mut(k);
        scal[0] = if m == 2 {
            let mut riem = [T::zero(); 16];
            riemann_at_node(m, node, gamma, &dgam, &mut riem);
            ricci_at_node(m, node, g, info, &riem, ric)
        } else {
            let mut riem = [T::zero(); 81];
            riemann_at_node(m, node, gamma, &dgam, &mut riem);
            ricci_at_node(m, node, g, info, &riem, ric)
        };
    });
    let scal = ScalarField(planes.pop().expect("scalar plane"));
    (SymTensorField::from_planes(m, planes).expect("ricci planes"), scal)
}

/// `dgam[(a·m + l)·k + jk] = ∂_a Γ^l_{jk}`.
fn connection_derivatives<T: Real>(g: &MetricField<T>, gamma: &Christoffel<T>) -> Vec<Vec<T>> {
    let grid = g.grid();
    let m = grid.m();
    let k = sym_len(m);
    (0..m)
        .flat_map(|a| (0..m * k).map(move |c| (a, c)))
        .map(|(a, c)| grid.diff(&gamma.planes[c], a))
        .collect()
}

fn riemann_at_node<T: Real>(m: usize, node: usize, gamma: &Christoffel<T>, dgam: &[Vec<T>], out: &mut [T]) {
    match m {
        2 => riemann_kernel::<T, 2>(node, gamma, dgam, out),
        _ => riemann_kernel::<T, 3>(node, gamma, dgam, out),
    }
}

#[inline(always)]
fn riemann_kernel<T: Real, const M: usize>(node: usize, gamma: &Christoffel<T>, dgam: &[Vec<T>], out: &mut [T]) {
    let k = sym_len(M);
    let mut gam = [[[T::zero(); M]; M]; M];
    let mut dg = [[[[T::zero(); M]; M]; M]; M];
    for l in 0..M {
        for j in 0..M {
            for kk in j..M {
                let jk = sym(M, j, kk);
                let v = gamma.planes[l * k + jk][node];
                gam[l][j][kk] = v;
                gam[l][kk][j] = v;
                for a in 0..M {
                    let d = dgam[(a * M + l) * k + jk][node];
                    dg[a][l][j][kk] = d;
                    dg[a][l][kk][j] = d;
                }
            }
        }
    }
    for l in 0..M {
        for kk in 0..M {
            let mut term = [[T::zero(); M]; M];
            for i in 0..M {
                for j in 0..M {
                    let mut s = dg[i][l][j][kk];
                    for p in 0..M {
                        s += gam[p][j][kk] * gam[l][i][p];
                    }
                    term[i][j] = s;
                }
            }
            for i in 0..M {
                for j in 0..M {
                    out[((l * M + i) * M + j) * M + kk] = term[i][j] - term[j][i];
                }
            }
        }
    }
}

/// Writes packed `Ric` at one node and returns `Scal`.
fn ricci_at_node<T: Real>(m: usize, node: usize, g: &MetricField<T>, info: &MetricInfo<T>, riem: &[T], out: &mut [T]) -> T {
    match m {
        2 => ricci_kernel::<T, 2>(node, g, info, riem, out),
        _ => ricci_kernel::<T, 3>(node, g, info, riem, out),
    }
}

#[inline(always)]
fn ricci_kernel<T: Real, const M: usize>(node: usize, g: &MetricField<T>, info: &MetricInfo<T>, riem: &[T], out: &mut [T]) -> T {
    let mut inv = [[T::zero(); M]; M];
    let mut met = [[T::zero(); M]; M];
    for i in 0..M {
        for j in i..M {
            let c = sym(M, i, j);
            let (a, b) = (info.inv.comps[c][node], g.tensor().comps[c][node]);
            inv[i][j] = a;
            inv[j][i] = a;
            met[i][j] = b;
            met[j][i] = b;
        }
    }
    // endomorphism E^l_j = g^{ik} R^l_{jik}
    let mut endo = [[T::zero(); M]; M];
    for j in 0..M {
        for l in 0..M {
            let mut s = T::zero();
            for i in 0..M {
                for kk in 0..M {
                    s += inv[i][kk] * riem[((l * M + j) * M + i) * M + kk];
                }
            }
            endo[l][j] = s;
        }
    }
    // Ric_{jq} = g_{ql} E^l_j, symmetrized
    let lowered = |j: usize, q: usize| {
        let mut s = T::zero();
        for l in 0..M {
            s += met[q][l] * endo[l][j];
        }
        s
    };
    let half = T::lit(0.5);
    let two = T::lit(2.0);
    let mut scal = T::zero();
    for j in 0..M {
        for q in j..M {
            let v = half * (lowered(j, q) + lowered(q, j));
            out[sym(M, j, q)] = v;
            let weight = if j == q { T::one() } else { two };
            scal += weight * inv[j][q] * v;
        }
    }
    scal
}

/// Weighted volume `Σ w √det g · cell volume`.
pub fn volume<T: Real>(g: &MetricField<T>, model: &FoliationModel<T>) -> Result<T> {
    let info = MetricInfo::new(g)?;
    Ok(volume_with(g, model, &info))
}

pub fn volume_with<T: Real>(g: &MetricField<T>, model: &FoliationModel<T>, info: &MetricInfo<T>) -> T {
    let dv = g.grid().cell_volume();
    ordered_sum(info.sqrt_det.iter().zip(model.w()).map(|(&s, &w)| w * s)) * dv
}

/// `g^{ij} a_i b_j` at one node.
#[inline]
pub(crate) fn dot_at<T: Real>(inv: &SymTensorField<T>, node: usize, a: &[&[T]], b: &[&[T]]) -> T {
    let m = inv.m();
    let mut s = T::zero();
    for i in 0..m {
        for j in 0..m {
            s += inv.at(node, i, j) * a[i][node] * b[j][node];
        }
    }
    s
}

/// `(u, v)_g = g^{ia} g^{jb} u_ij v_ab` at one node.
#[inline]
pub(crate) fn tensor_dot_at<T: Real>(
    inv: &SymTensorField<T>,
    node: usize,
    u: impl Fn(usize, usize) -> T,
    v: impl Fn(usize, usize) -> T,
) -> T {
    let m = inv.m();
    let mut raised = [T::zero(); 9];
    for i in 0..m {
        for j in 0..m {
            let mut s = T::zero();
            for a in 0..m {
                for b in 0..m {
                    s += inv.at(node, i, a) * inv.at(node, j, b) * v(a, b);
                }
            }
            raised[i * m + j] = s;
        }
    }
    let mut s = T::zero();
    for i in 0..m {
        for j in 0..m {
            s += u(i, j) * raised[i * m + j];
        }
    }
    s
}
