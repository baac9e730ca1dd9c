//! Kolmogorov–Arnold layers: every edge `(q, p)` carries its own learnable
//! activation `phi_{q,p}(x) = w_{q,p} * silu(x) + sum_j c_{q,p,j} B_j(x)`,
//! and output unit `q` sums `phi_{q,p}(x_p)` over inputs `p`.

mod layer;
pub mod spline;

pub use layer::{BaseActivation, KanLayer, KanStack};
pub use spline::{GridSpec, SplineGrid};
