//! Reference elements, quadrature and function spaces.

pub mod element;
pub mod quadrature;
pub mod space;

pub use element::{legendre, tabulate, ElementFamily, ReferenceElement, Tabulation};
pub use quadrature::{gauss_legendre, quadrature, QuadratureKind, QuadratureRule, MAX_EXACTNESS};
pub use space::{
    break_space, broken_rt, cell_means, create_space, dof_coordinates, eval_on_cell, interpolate_scalar, interpolate_vector, l2_error_div,
    l2_error_scalar, l2_error_vector, project_trace, Function, FunctionSpace, MixedSpace,
};
