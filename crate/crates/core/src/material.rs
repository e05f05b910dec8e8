//! Closed-form elasticity tensors of orthogonal rank-3 laminates, their
//! analytic gradients, and the laminate volume fraction.
//!
//! All public 6x6 matrices use the Voigt convention (11,22,33,23,13,12) with
//! engineering shear strains. Tensor algebra (inverses, products) is carried
//! out internally in the Mandel representation, where fourth-order tensor
//! composition coincides with plain matrix algebra.

use crate::error::{Error, Result};
use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};

const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Stiff/compliant phase moduli and the shared Poisson ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaterialConstants {
    pub e_plus: f64,
    pub e_minus: f64,
    pub nu: f64,
}

impl MaterialConstants {
    pub fn new(e_plus: f64, e_minus: f64, nu: f64) -> Result<Self> {
        if !(e_plus > e_minus && e_minus > 0.0) {
            return Err(Error::Config(format!(
                "need e_plus > e_minus > 0, got e_plus={e_plus}, e_minus={e_minus}"
            )));
        }
        if !(0.0..0.5).contains(&nu) {
            return Err(Error::Config(format!("need 0 <= nu < 0.5, got {nu}")));
        }
        Ok(Self {
            e_plus,
            e_minus,
            nu,
        })
    }
}

/// Euler angles parameterizing the laminate frame, in radians.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EulerAngles {
    pub theta1: f64,
    pub theta2: f64,
    pub theta3: f64,
}

impl EulerAngles {
    pub fn new(theta1: f64, theta2: f64, theta3: f64) -> Self {
        Self {
            theta1,
            theta2,
            theta3,
        }
    }
}

/// Relative layer widths of the stiff phase, each in [0,1].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LayerWidths {
    pub mu1: f64,
    pub mu2: f64,
    pub mu3: f64,
}

impl LayerWidths {
    pub fn new(mu1: f64, mu2: f64, mu3: f64) -> Self {
        Self { mu1, mu2, mu3 }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.mu1, self.mu2, self.mu3]
    }
}

/// Orthonormal triple of layer normals. The tangents of layer `i` are the
/// other two normals: `t^{1,1}=n2, t^{1,2}=n3`, `t^{2,1}=n1, t^{2,2}=n3`,
/// `t^{3,1}=n1, t^{3,2}=n2`.
///
/// Note that the column matrix `[n1 n2 n3]` produced by [`frame_from_angles`]
/// has determinant -1 for all angles (at zero angles it is `[e3 e2 e1]`).
/// Direction fields are sign-symmetric, so consumers that need a proper
/// rotation flip one column.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub n1: Vector3<f64>,
    pub n2: Vector3<f64>,
    pub n3: Vector3<f64>,
}

impl Frame {
    /// Columns are the three normals.
    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::from_columns(&[self.n1, self.n2, self.n3])
    }

    pub fn normal(&self, layer: usize) -> Vector3<f64> {
        match layer {
            0 => self.n1,
            1 => self.n2,
            2 => self.n3,
            _ => panic!("layer index out of range"),
        }
    }

    /// Tangent pair of the given layer.
    pub fn tangents(&self, layer: usize) -> (Vector3<f64>, Vector3<f64>) {
        match layer {
            0 => (self.n2, self.n3),
            1 => (self.n1, self.n3),
            2 => (self.n1, self.n2),
            _ => panic!("layer index out of range"),
        }
    }
}

/// Symmetric 6x6 stiffness matrix in Voigt (11,22,33,23,13,12) engineering
/// convention.
#[derive(Debug, Clone, PartialEq)]
pub struct ElasticityTensor {
    voigt: Matrix6<f64>,
}

impl ElasticityTensor {
    pub fn from_voigt(voigt: Matrix6<f64>) -> Self {
        Self { voigt }
    }

    pub fn voigt(&self) -> &Matrix6<f64> {
        &self.voigt
    }

    pub fn mandel(&self) -> Matrix6<f64> {
        voigt_to_mandel(&self.voigt)
    }

    /// Isotropic tensor from Young's modulus and Poisson ratio.
    pub fn isotropic(e: f64, nu: f64) -> Self {
        let lam = e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
        let g = e / (2.0 * (1.0 + nu));
        let mut m = Matrix6::zeros();
        for i in 0..3 {
            for j in 0..3 {
                m[(i, j)] = lam;
            }
            m[(i, i)] = lam + 2.0 * g;
            m[(i + 3, i + 3)] = g;
        }
        Self { voigt: m }
    }
}

/// Scale shear rows/cols by sqrt(2): Mandel stiffness from Voigt-engineering.
pub(crate) fn voigt_to_mandel(c: &Matrix6<f64>) -> Matrix6<f64> {
    let mut m = *c;
    for i in 0..6 {
        for j in 3..6 {
            m[(i, j)] *= SQRT2;
        }
    }
    for i in 3..6 {
        for j in 0..6 {
            m[(i, j)] *= SQRT2;
        }
    }
    m
}

pub(crate) fn mandel_to_voigt(m: &Matrix6<f64>) -> Matrix6<f64> {
    let mut c = *m;
    for i in 0..6 {
        for j in 3..6 {
            c[(i, j)] /= SQRT2;
        }
    }
    for i in 3..6 {
        for j in 0..6 {
            c[(i, j)] /= SQRT2;
        }
    }
    c
}

/// Mandel 6-vector of the symmetrized dyad `a (x) b + b (x) a`.
#[inline]
fn mandel_sym_outer(a: &Vector3<f64>, b: &Vector3<f64>) -> Vector6<f64> {
    Vector6::new(
        2.0 * a[0] * b[0],
        2.0 * a[1] * b[1],
        2.0 * a[2] * b[2],
        SQRT2 * (a[1] * b[2] + a[2] * b[1]),
        SQRT2 * (a[0] * b[2] + a[2] * b[0]),
        SQRT2 * (a[0] * b[1] + a[1] * b[0]),
    )
}

/// Layer normals as functions of the Euler angles.
pub fn frame_from_angles(angles: &EulerAngles) -> Frame {
    let (s1, c1) = angles.theta1.sin_cos();
    let (s2, c2) = angles.theta2.sin_cos();
    let (s3, c3) = angles.theta3.sin_cos();
    Frame {
        n1: Vector3::new(c1 * c3 * s2 + s1 * s3, c1 * s2 * s3 - c3 * s1, c1 * c2),
        n2: Vector3::new(c3 * s1 * s2 - c1 * s3, s1 * s2 * s3 + c1 * c3, s1 * c2),
        n3: Vector3::new(c2 * c3, c2 * s3, -s2),
    }
}

/// Partial derivatives of the frame w.r.t. each Euler angle.
pub fn frame_gradients(angles: &EulerAngles) -> [Frame; 3] {
    let (s1, c1) = angles.theta1.sin_cos();
    let (s2, c2) = angles.theta2.sin_cos();
    let (s3, c3) = angles.theta3.sin_cos();
    let d_theta1 = Frame {
        n1: Vector3::new(-s1 * c3 * s2 + c1 * s3, -s1 * s2 * s3 - c3 * c1, -s1 * c2),
        n2: Vector3::new(c3 * c1 * s2 + s1 * s3, c1 * s2 * s3 - s1 * c3, c1 * c2),
        n3: Vector3::zeros(),
    };
    let d_theta2 = Frame {
        n1: Vector3::new(c1 * c3 * c2, c1 * c2 * s3, -c1 * s2),
        n2: Vector3::new(c3 * s1 * c2, s1 * c2 * s3, -s1 * s2),
        n3: Vector3::new(-s2 * c3, -s2 * s3, -c2),
    };
    let d_theta3 = Frame {
        n1: Vector3::new(-c1 * s3 * s2 + s1 * c3, c1 * s2 * c3 + s3 * s1, 0.0),
        n2: Vector3::new(-s3 * s1 * s2 - c1 * c3, s1 * s2 * c3 - c1 * s3, 0.0),
        n3: Vector3::new(-c2 * s3, c2 * c3, 0.0),
    };
    [d_theta1, d_theta2, d_theta3]
}

/// Orientation tensor of one layer in Mandel form.
fn lambda_mandel(
    n: &Vector3<f64>,
    t1: &Vector3<f64>,
    t2: &Vector3<f64>,
    nu: f64,
) -> Matrix6<f64> {
    let vn = mandel_sym_outer(n, n) * 0.5;
    let vs1 = mandel_sym_outer(t1, n);
    let vs2 = mandel_sym_outer(t2, n);
    let mut out = (vn * vn.transpose()) / (1.0 - nu);
    out += (vs1 * vs1.transpose() + vs2 * vs2.transpose()) / (2.0 * (1.0 - 2.0 * nu));
    out
}

/// Derivative of the layer orientation tensor given the derivatives of its
/// frame vectors.
fn lambda_mandel_grad(
    n: &Vector3<f64>,
    t1: &Vector3<f64>,
    t2: &Vector3<f64>,
    dn: &Vector3<f64>,
    dt1: &Vector3<f64>,
    dt2: &Vector3<f64>,
    nu: f64,
) -> Matrix6<f64> {
    let vn = mandel_sym_outer(n, n) * 0.5;
    let dvn = mandel_sym_outer(dn, n);
    let mut out = (dvn * vn.transpose() + vn * dvn.transpose()) / (1.0 - nu);
    for (t, dt) in [(t1, dt1), (t2, dt2)] {
        let vs = mandel_sym_outer(t, n);
        let dvs = mandel_sym_outer(dt, n) + mandel_sym_outer(t, dn);
        out += (dvs * vs.transpose() + vs * dvs.transpose()) / (2.0 * (1.0 - 2.0 * nu));
    }
    out
}

/// Voigt 6x6 representation of the orientation tensor of a single layer.
pub fn lambda_tensor(
    n: &Vector3<f64>,
    t1: &Vector3<f64>,
    t2: &Vector3<f64>,
    nu: f64,
) -> Matrix6<f64> {
    mandel_to_voigt(&lambda_mandel(n, t1, t2, nu))
}

/// Exact Mandel compliance of an isotropic material (inverse of the
/// stiffness, in closed form).
fn iso_compliance_mandel(e: f64, nu: f64) -> Matrix6<f64> {
    let mut s = Matrix6::zeros();
    for i in 0..3 {
        for j in 0..3 {
            s[(i, j)] = -nu / e;
        }
        s[(i, i)] = 1.0 / e;
        // Mandel shear block of the compliance is 1/(2G)
        s[(i + 3, i + 3)] = (1.0 + nu) / e;
    }
    s
}

fn layer_lambdas(angles: &EulerAngles, nu: f64) -> [Matrix6<f64>; 3] {
    let f = frame_from_angles(angles);
    [
        lambda_mandel(&f.n1, &f.n2, &f.n3, nu),
        lambda_mandel(&f.n2, &f.n1, &f.n3, nu),
        lambda_mandel(&f.n3, &f.n1, &f.n2, nu),
    ]
}

struct Rank3Core {
    /// (1-mu1)(1-mu2)(1-mu3)
    c: f64,
    /// (1+nu)(1-2nu)/E+
    s: f64,
    /// Inverse of the inner matrix (Mandel).
    g: Matrix6<f64>,
    lambdas: [Matrix6<f64>; 3],
}

fn rank3_core(
    widths: &LayerWidths,
    angles: &EulerAngles,
    mat: &MaterialConstants,
) -> Result<Option<Rank3Core>> {
    let [m1, m2, m3] = widths.as_array();
    let c = (1.0 - m1) * (1.0 - m2) * (1.0 - m3);
    if c == 0.0 {
        // Prefactor vanishes: the laminate is the stiff phase.
        return Ok(None);
    }
    let lambdas = layer_lambdas(angles, mat.nu);
    let m_sum = lambdas[0] * m1 + (lambdas[1] * m2 + lambdas[2] * ((1.0 - m2) * m3)) * (1.0 - m1);
    let s = (1.0 + mat.nu) * (1.0 - 2.0 * mat.nu) / mat.e_plus;
    let inner = iso_compliance_mandel(mat.e_plus - mat.e_minus, mat.nu) - m_sum * s;
    let g = inner.try_inverse().ok_or(Error::DegenerateInversion)?;
    Ok(Some(Rank3Core { c, s, g, lambdas }))
}

fn tensor_from_core(core: &Rank3Core, mat: &MaterialConstants) -> ElasticityTensor {
    let e_mandel = ElasticityTensor::isotropic(mat.e_plus, mat.nu).mandel() - core.g * core.c;
    ElasticityTensor::from_voigt(mandel_to_voigt(&e_mandel))
}

/// Effective elasticity tensor of the orthogonal rank-3 laminate.
pub fn rank3_elasticity(
    widths: &LayerWidths,
    angles: &EulerAngles,
    mat: &MaterialConstants,
) -> Result<ElasticityTensor> {
    if widths.mu1 == 0.0 && widths.mu2 == 0.0 && widths.mu3 == 0.0 {
        return Ok(ElasticityTensor::isotropic(mat.e_minus, mat.nu));
    }
    match rank3_core(widths, angles, mat)? {
        None => Ok(ElasticityTensor::isotropic(mat.e_plus, mat.nu)),
        Some(core) => Ok(tensor_from_core(&core, mat)),
    }
}

/// Gradients of the rank-3 tensor w.r.t. the three widths and three angles.
#[derive(Debug, Clone)]
pub struct Rank3Gradients {
    /// dE/dmu_i, Voigt convention.
    pub d_mu: [Matrix6<f64>; 3],
    /// dE/dtheta_i, Voigt convention.
    pub d_theta: [Matrix6<f64>; 3],
}

/// Tensor and its six analytic gradients in one pass.
///
/// With E = E+ - c*G, G = (A - s*M)^-1 the chain rule gives
/// dE = -dc*G - c*s*(G dM G), which is evaluated per design variable.
pub fn rank3_elasticity_with_gradients(
    widths: &LayerWidths,
    angles: &EulerAngles,
    mat: &MaterialConstants,
) -> Result<(ElasticityTensor, Rank3Gradients)> {
    let [m1, m2, m3] = widths.as_array();
    let dc = [
        -(1.0 - m2) * (1.0 - m3),
        -(1.0 - m1) * (1.0 - m3),
        -(1.0 - m1) * (1.0 - m2),
    ];
    let core = match rank3_core(widths, angles, mat)? {
        Some(core) => core,
        None => {
            // Prefactor c vanishes: E = E+ here, and the c*dG terms drop out,
            // leaving only -dc_i * G. Recompute G at this point.
            let lambdas = layer_lambdas(angles, mat.nu);
            let m_sum =
                lambdas[0] * m1 + (lambdas[1] * m2 + lambdas[2] * ((1.0 - m2) * m3)) * (1.0 - m1);
            let s = (1.0 + mat.nu) * (1.0 - 2.0 * mat.nu) / mat.e_plus;
            let inner = iso_compliance_mandel(mat.e_plus - mat.e_minus, mat.nu) - m_sum * s;
            let g = inner.try_inverse().ok_or(Error::DegenerateInversion)?;
            let d_mu = std::array::from_fn(|i| mandel_to_voigt(&(g * (-dc[i]))));
            return Ok((
                ElasticityTensor::isotropic(mat.e_plus, mat.nu),
                Rank3Gradients {
                    d_mu,
                    d_theta: [Matrix6::zeros(); 3],
                },
            ));
        }
    };
    let tensor = if m1 == 0.0 && m2 == 0.0 && m3 == 0.0 {
        ElasticityTensor::isotropic(mat.e_minus, mat.nu)
    } else {
        tensor_from_core(&core, mat)
    };

    let [l1, l2, l3] = &core.lambdas;
    let dm_dmu = [
        *l1 - (*l2 * m2 + *l3 * ((1.0 - m2) * m3)),
        (*l2 - *l3 * m3) * (1.0 - m1),
        *l3 * ((1.0 - m1) * (1.0 - m2)),
    ];
    let d_mu = std::array::from_fn(|i| {
        let d_mandel =
            core.g * (-dc[i]) - (core.g * dm_dmu[i] * core.g) * (core.c * core.s);
        mandel_to_voigt(&d_mandel)
    });

    let frame = frame_from_angles(angles);
    let dframes = frame_gradients(angles);
    let d_theta = std::array::from_fn(|k| {
        let df = &dframes[k];
        let dl1 = lambda_mandel_grad(
            &frame.n1, &frame.n2, &frame.n3, &df.n1, &df.n2, &df.n3, mat.nu,
        );
        let dl2 = lambda_mandel_grad(
            &frame.n2, &frame.n1, &frame.n3, &df.n2, &df.n1, &df.n3, mat.nu,
        );
        let dl3 = lambda_mandel_grad(
            &frame.n3, &frame.n1, &frame.n2, &df.n3, &df.n1, &df.n2, mat.nu,
        );
        let dm = dl1 * m1 + (dl2 * m2 + dl3 * ((1.0 - m2) * m3)) * (1.0 - m1);
        mandel_to_voigt(&((core.g * dm * core.g) * (-core.c * core.s)))
    });

    Ok((tensor, Rank3Gradients { d_mu, d_theta }))
}

/// Material volume fraction of the rank-3 microstructure.
pub fn volume_fraction(widths: &LayerWidths) -> f64 {
    let [m1, m2, m3] = widths.as_array();
    m1 + m2 + m3 - m1 * m2 - m1 * m3 - m2 * m3 + m1 * m2 * m3
}

/// Analytic partials of [`volume_fraction`].
pub fn volume_fraction_grad(widths: &LayerWidths) -> [f64; 3] {
    let [m1, m2, m3] = widths.as_array();
    [
        (1.0 - m2) * (1.0 - m3),
        (1.0 - m1) * (1.0 - m3),
        (1.0 - m1) * (1.0 - m2),
    ]
}
