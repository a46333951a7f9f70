use thiserror::Error;

use crate::hand::JointId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("joint {joint} angle {angle} deg outside [{min}, {max}]")]
    PoseOutOfRange {
        joint: JointId,
        angle: f64,
        min: f64,
        max: f64,
    },

    #[error("joint {0} is not part of the hand model")]
    UnknownJoint(JointId),

    #[error("pose is missing joint {0}")]
    MissingJoint(JointId),

    #[error(
        "target excursion {target} mm unreachable: depth bracket [{depth_lo}, {depth_hi}] mm \
         gives excursion [{excursion_lo:.4}, {excursion_hi:.4}] mm"
    )]
    UnreachableTarget {
        target: f64,
        depth_lo: f64,
        depth_hi: f64,
        excursion_lo: f64,
        excursion_hi: f64,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("malformed trace: {0}")]
    MalformedTrace(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
