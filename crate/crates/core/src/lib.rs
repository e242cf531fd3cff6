//! Weak Galerkin discretization of linear elasticity and Biot poroelasticity
//! on simplicial meshes, with rank-one regularized saddle-point formulations
//! and block Schur-complement preconditioned MINRES/GMRES solvers.
//!
//! The crate is organised bottom-up:
//!
//! * [`mesh`]: structured triangle/tetrahedron meshes with facet connectivity.
//! * [`wgfem`]: weak gradient/divergence and the global WG blocks and loads.
//! * [`linalg`]: sparse storage, incomplete Cholesky, PCG, MINRES, GMRES,
//!   rank-one updates and block operators.
//! * [`elasticity`], [`poro2`], [`poro3`]: the three solver formulations.
//! * [`oracle`]: dense eigenvalue checks of the spectral bounds.
//! * [`problems`]: forcing terms and manufactured solutions used by the
//!   experiments.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Component loops over `0..dim` read closer to the index notation.
#![allow(clippy::needless_range_loop)]

pub mod elasticity;
pub mod error;
pub mod linalg;
pub mod mesh;
pub mod oracle;
pub mod params;
pub mod poro2;
pub mod poro3;
pub mod problems;
pub mod quadrature;
pub mod wgfem;

pub use error::{Error, Result};
pub use linalg::{SolveReport, SparseMatrix};
pub use mesh::{build_structured_mesh, refine_family, Mesh, MeshStats};
pub use params::PhysicalParams;
pub use wgfem::WgField;

/// Krylov method for the outer saddle-point iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    /// MINRES with the block diagonal preconditioner.
    Minres,
    /// Restarted GMRES with the block lower-triangular preconditioner.
    Gmres,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Minres => "minres",
            Method::Gmres => "gmres",
        }
    }

    pub fn solve(
        self,
        a: &dyn linalg::LinearOperator,
        b: &[f64],
        p: &dyn linalg::Preconditioner,
        opts: linalg::SolveOptions,
    ) -> Result<(Vec<f64>, SolveReport)> {
        match self {
            Method::Minres => linalg::minres(a, b, p, opts),
            Method::Gmres => linalg::gmres_restarted(a, b, p, opts),
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "minres" => Ok(Method::Minres),
            "gmres" => Ok(Method::Gmres),
            other => Err(Error::Parse(format!("unknown solver `{other}`"))),
        }
    }
}

/// Shape of a block Schur-complement preconditioner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PrecondKind {
    Diagonal,
    Triangular,
}

impl PrecondKind {
    /// The preconditioner each Krylov method is analysed with.
    pub fn for_method(method: Method) -> Self {
        match method {
            Method::Minres => PrecondKind::Diagonal,
            Method::Gmres => PrecondKind::Triangular,
        }
    }

    /// MINRES needs a symmetric positive definite preconditioner, which only
    /// the block diagonal form is.
    pub fn check_compatible(self, method: Method) -> Result<()> {
        if method == Method::Minres && self == PrecondKind::Triangular {
            return Err(Error::InvalidInput(
                "MINRES requires the block diagonal preconditioner".into(),
            ));
        }
        Ok(())
    }

    pub fn name(self) -> &'static str {
        match self {
            PrecondKind::Diagonal => "diag",
            PrecondKind::Triangular => "tri",
        }
    }
}

impl std::str::FromStr for PrecondKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "diag" | "diagonal" => Ok(PrecondKind::Diagonal),
            "tri" | "triangular" => Ok(PrecondKind::Triangular),
            other => Err(Error::Parse(format!("unknown preconditioner `{other}`"))),
        }
    }
}
