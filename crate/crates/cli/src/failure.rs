//! Structured errors and exit codes.

use hbsimex::{Error, ErrorKind};
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FailureKind {
    Config,
    Data,
    Numerical,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    pub kind: FailureKind,
    pub message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            kind: FailureKind::Config,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            kind: FailureKind::Data,
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            FailureKind::Config => 2,
            FailureKind::Data => 3,
            FailureKind::Numerical => 4,
        }
    }

    /// One-line JSON for stderr.
    pub fn to_json(&self) -> String {
        serde_json::json!({
            "error": {
                "kind": self.kind,
                "exit_code": self.exit_code(),
                "message": self.message,
            }
        })
        .to_string()
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let kind = match e.kind() {
            ErrorKind::Config => FailureKind::Config,
            ErrorKind::Data => FailureKind::Data,
            ErrorKind::Numerical => FailureKind::Numerical,
        };
        Self {
            kind,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::data(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::data(e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn core_errors_map_to_exit_codes() {
        assert_eq!(Failure::from(Error::Config("x".into())).exit_code(), 2);
        assert_eq!(Failure::from(Error::Validation("x".into())).exit_code(), 3);
        assert_eq!(Failure::from(Error::SingularFit("x".into())).exit_code(), 4);
        let nested = Error::Estimator {
            lambda: 0.5,
            replicate: 1,
            source: Box::new(Error::Numerical("x".into())),
        };
        assert_eq!(Failure::from(nested).exit_code(), 4);
    }

    #[test]
    fn json_carries_kind_and_code() {
        let v: serde_json::Value =
            serde_json::from_str(&Failure::data("bad row").to_json()).unwrap();
        assert_eq!(v["error"]["kind"], "data");
        assert_eq!(v["error"]["exit_code"], 3);
        assert_eq!(v["error"]["message"], "bad row");
    }
}
