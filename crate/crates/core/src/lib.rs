//! Traffic state reconstruction from vehicle trajectories.
//!
//! Finite-difference kinematics feed inversions of the congested phase of a
//! two-phase macroscopic model, yielding density and the perturbation from
//! equilibrium at every sample. Estimates can be binned into Eulerian
//! fields, turned into emission and fuel rates, and compared against their
//! native-resolution values under coarser sampling and fewer probes.

pub mod binning;
pub mod calibration;
pub mod correction;
pub mod emissions;
pub mod error;
pub mod experiments;
pub mod format;
pub mod kinematics;
pub mod ptm;
pub mod stats;
pub mod synthetic;
pub mod trajectory;

pub use binning::{BinField, BinGrid, BinGridSpec, Observation, SegmentRates};
pub use calibration::{EnvelopeFit, FitOptions, ScatterPoint, Side};
pub use correction::{AffineFit, CvReport, CvSplit, PairedSeries};
pub use emissions::{EmissionRecord, VehicleConfig};
pub use error::{Error, Result};
pub use experiments::{
    DensityTruth, ExperimentPlan, ExperimentReport, Frame, Models, PointEstimate, Quantity,
    ReportCell,
};
pub use kinematics::KinematicPoint;
pub use ptm::{NoSourceOutcome, PtmParams, PtmState, Scheme, SkipReason, VelocityChoice};
pub use stats::ErrorStats;
pub use synthetic::{GroundTruth, SyntheticCorpus, SyntheticMode, SyntheticSpec};
pub use trajectory::{
    ColumnMap, CorpusMetadata, IngestReport, LaneFilter, Trajectory, TrajectoryCorpus,
    TrajectorySample,
};
