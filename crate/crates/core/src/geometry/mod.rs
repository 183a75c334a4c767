//! Warped-product Lorentzian metrics, null geodesics and null Fermi charts.

pub mod chart;
pub mod geodesic;
pub mod metric;

pub use chart::{build_fermi_chart, build_fermi_chart_with, riccati_data, ChartMetricJet, FermiChart, LocalFrame};
pub use geodesic::{
    trace_null_geodesic, trace_through, BoundaryHit, CausalClass, Direction, GeodesicOptions, NullGeodesic,
    PointedCovector,
};
pub use metric::{Bump, Mat4, MetricPreset, Vec4, WarpFactors, WarpedMetric, EXT_HI, EXT_LO, MAX_DIM};
