//! Inertial odometry for handheld devices.
//!
//! A full-quaternion extended Kalman filter propagates position, velocity and
//! attitude from raw accelerometer and gyroscope samples while learning
//! additive IMU biases and a diagonal accelerometer scale error online.
//! Zero-velocity, speed, position-fix, loop-closure, barometer and wall-touch
//! observations correct the drift; a Rauch–Tung–Striebel pass smooths the
//! whole record afterwards.

pub mod error;
pub mod log;
pub mod math;
pub mod output;
pub mod propagation;
pub mod selftest;
pub mod session;
pub mod sim;
pub mod smoother;
pub mod state;
pub mod stationarity;
pub mod updates;

pub use error::{Error, Result};
pub use log::{parse_log, LogRecord};
pub use math::{Mat3, Quat, Vec3};
pub use propagation::{ekf_predict, ImuSample};
pub use session::{run_session, SessionConfig, SessionOptions, SessionResult};
pub use state::{FilterConfig, GaussianBelief, NavState};
pub use stationarity::DetectorConfig;
