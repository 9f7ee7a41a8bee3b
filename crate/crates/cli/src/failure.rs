use std::fmt;

/// Command failure reported as one JSON line on stderr.
#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub kind: &'static str,
    pub message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            kind: "config",
            message: message.into(),
        }
    }

    pub fn input(message: impl Into<String>) -> Self {
        Self {
            kind: "input",
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            kind: "usage",
            message: message.into(),
        }
    }

    /// Library errors raised while validating configuration values.
    pub fn config_from(e: squeezefit::Error) -> Self {
        Self::config(e.to_string())
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            "usage" | "config" => 2,
            "input" | "io" => 3,
            "numerical" => 4,
            _ => 1,
        }
    }

    pub fn json(&self) -> String {
        serde_json::json!({ "error": self.kind, "message": self.message }).to_string()
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind, self.message)
    }
}

impl From<squeezefit::Error> for Failure {
    fn from(e: squeezefit::Error) -> Self {
        use squeezefit::Error as E;
        let kind = match &e {
            E::InvalidParameter { .. } | E::BarrierProximity { .. } => "config",
            E::Divergence { .. } | E::AllEscaped | E::FitNotConverged { .. } | E::Degenerate(_) => {
                "numerical"
            }
            E::Parse { .. } | E::MissingReference { .. } | E::EmptySample(_) => "input",
            E::TimeOutOfRange { .. } => "usage",
            E::Io(_) => "io",
        };
        Self {
            kind,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self {
            kind: "io",
            message: e.to_string(),
        }
    }
}
