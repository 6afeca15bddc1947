//! Voronoi diagrams under convex polygon distance functions, with the
//! self-tuning point location pipeline built on top of them: net-trees,
//! well-separated pair decompositions, nearest neighbor structures, a trainer
//! that learns query distributions, and the operation phase that answers
//! batches of queries with certified relocation.

pub mod gauge;
pub mod geom;
pub mod loc;
pub mod mix;
pub mod net;
pub mod train;
pub mod vor;

pub use gauge::bisector::{Bend, Bisector, BisectorError, RayOwner};
pub use gauge::frame::BoundingFrame;
pub use gauge::homothet::{Homothet, HomothetError};
pub use gauge::{ConvexGauge, GaugeError, Polygon};
pub use geom::{pt, GeomResult, Point, Tie};
pub use vor::{Arc, Cell, Diagram, Edge, SiteId, VertId, VertKey};
