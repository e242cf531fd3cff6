//! Fixtures shared by the benchmarks.

use porowg::elasticity::{build_regularized_system, RegularizedElasticitySystem};
use porowg::wgfem::{assemble_elasticity, ElasticityBlocks};
use porowg::{build_structured_mesh, Mesh, PhysicalParams};

/// A structured mesh with its elasticity blocks and regularized system.
pub struct ElasticityFixture {
    pub mesh: Mesh,
    pub blocks: ElasticityBlocks,
    pub system: RegularizedElasticitySystem,
}

impl ElasticityFixture {
    pub fn new(dim: usize, n: usize, lambda: f64) -> Self {
        let mesh = build_structured_mesh(dim, n).expect("structured mesh");
        let blocks = assemble_elasticity(&mesh).expect("assembly");
        let system = build_regularized_system(&blocks, &PhysicalParams::elasticity(lambda), 1.0)
            .expect("system");
        ElasticityFixture {
            mesh,
            blocks,
            system,
        }
    }
}
