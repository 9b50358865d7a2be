pub mod constants;
pub mod continuum;
pub mod error;
pub mod geometry;
pub mod lindblad;
pub mod rates;
pub mod redshift;
pub mod report;
pub mod scenario;
pub mod summation;

pub use constants::{AngularFrequency, FrequencyConvention, PhysicalConstants, PositionMeasurementRate, Rate, CODATA_2018};
pub use error::{Error, Result};
pub use geometry::{ClockArray, ClockSpec, PairRateMatrix, Position};
pub use rates::{ChannelMode, DephasingReport, MeasurementRates, RateCase};
pub use report::HeadlineReport;
pub use scenario::{run_scenario, RunOptions, Scenario};
