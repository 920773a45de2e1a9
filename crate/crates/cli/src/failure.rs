use serde_json::json;

/// A failed invocation: exit code plus a machine-readable description.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub kind: &'static str,
    pub message: String,
    pub path: Option<String>,
}

pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_INPUT: i32 = 2;

impl Failure {
    pub fn config(message: impl Into<String>, path: Option<String>) -> Self {
        Failure {
            code: EXIT_INPUT,
            kind: "config",
            message: message.into(),
            path,
        }
    }

    pub fn input(message: impl Into<String>, path: Option<String>) -> Self {
        Failure {
            code: EXIT_INPUT,
            kind: "input",
            message: message.into(),
            path,
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_RUNTIME,
            kind: "runtime",
            message: message.into(),
            path: None,
        }
    }

    /// Input-side errors (unreadable or malformed files, failed integrity
    /// checks) exit with 2; anything else with 1.
    pub fn from_input(e: implantsim::Error, path: &str) -> Self {
        use implantsim::Error as E;
        match e {
            E::Parse { .. } | E::Io { .. } | E::Json(_) | E::Csv(_) | E::InvalidTable(_) | E::Integrity(_) => {
                Failure::input(e.to_string(), Some(path.to_string()))
            }
            other => Failure::runtime(other.to_string()),
        }
    }

    pub fn to_json(&self) -> String {
        let mut err = json!({
            "kind": self.kind,
            "exit_code": self.code,
            "message": self.message,
        });
        if let Some(p) = &self.path {
            err["path"] = json!(p);
        }
        json!({ "error": err }).to_string()
    }
}

impl From<implantsim::Error> for Failure {
    fn from(e: implantsim::Error) -> Self {
        Failure::runtime(e.to_string())
    }
}

pub type Outcome<T> = std::result::Result<T, Failure>;
