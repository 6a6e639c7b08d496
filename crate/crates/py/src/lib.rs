//! Python bindings: load and replay scenarios, audit them against the
//! reference evaluator, explain single requests and parse policies.

use pyo3::create_exception;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use rebac::oracle::{self, ConsentMode};
use rebac::platform::DecisionRecord;
use rebac::policy::{ParseErrorKind, Target};
use rebac::scenario::{self as sc, RequestDoc, TraceStep};
use rebac::SensitivityLevel;

create_exception!(osn_rebac, LoadError, PyValueError, "Scenario could not be loaded.");
create_exception!(osn_rebac, PolicyParseError, PyValueError, "Policy text is malformed.");

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn request_doc(component: &str, owner: &str, attribute: &str, actions: Vec<String>) -> PyResult<RequestDoc> {
    let (app, comp) = component
        .split_once('/')
        .ok_or_else(|| PyValueError::new_err(format!("expected app/component, got `{component}`")))?;
    Ok(RequestDoc {
        app: app.into(),
        component: comp.into(),
        owner: owner.into(),
        attribute: attribute.into(),
        actions,
        grant: None,
    })
}

/// A platform loaded from a JSON scenario, with its pending trace.
#[pyclass(unsendable)]
struct Scenario {
    inner: sc::Scenario,
}

impl Scenario {
    /// Checks a request against the loaded state the way a trace step is
    /// checked.
    fn checked_request(&self, doc: &RequestDoc) -> PyResult<rebac::AccessRequest> {
        let mut probe = self.inner.clone();
        probe.trace = vec![TraceStep::Request(doc.clone())];
        probe.check_trace().map_err(|e| LoadError::new_err(e.to_string()))?;
        sc::Scenario::request(doc).ok_or_else(|| PyValueError::new_err("malformed request"))
    }
}

#[pymethods]
impl Scenario {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        sc::Scenario::load(path)
            .map(|inner| Self { inner })
            .map_err(|e| LoadError::new_err(e.to_string()))
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        sc::Scenario::from_json(text)
            .map(|inner| Self { inner })
            .map_err(|e| LoadError::new_err(e.to_string()))
    }

    #[getter]
    fn users(&self) -> Vec<String> {
        self.inner
            .platform
            .graph()
            .users()
            .iter()
            .map(|u| u.to_string())
            .collect()
    }

    #[getter]
    fn apps(&self) -> Vec<String> {
        self.inner
            .platform
            .graph()
            .apps()
            .iter()
            .map(|a| a.to_string())
            .collect()
    }

    /// Replays the remaining trace. Returns `{"decisions", "flows", "alerts"}`.
    fn run<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let out = self.inner.run().map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        to_py(
            py,
            &serde_json::json!({
                "decisions": out.decisions,
                "flows": out.flows,
                "alerts": out.alerts,
            }),
        )
    }

    /// Files a policy under `owner`.
    fn add_policy(&mut self, id: &str, owner: &str, text: &str) -> PyResult<()> {
        self.inner
            .platform
            .add_policy(id, owner, text)
            .map_err(|e| PyValueError::new_err(e.to_string()))
    }

    /// Decides a request with the owner's current token, without logging it.
    #[pyo3(signature = (component, owner, attribute, actions))]
    fn decide<'py>(
        &self,
        py: Python<'py>,
        component: &str,
        owner: &str,
        attribute: &str,
        actions: Vec<String>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let doc = request_doc(component, owner, attribute, actions)?;
        let r = self.checked_request(&doc)?;
        let d = self.inner.platform.decide(&self.inner.token_for(&doc), &r);
        to_py(py, &DecisionRecord::from_decision(0, &d))
    }

    /// Compares every decision against the reference evaluator.
    #[pyo3(signature = (assume_consent = false))]
    fn audit<'py>(&self, py: Python<'py>, assume_consent: bool) -> PyResult<Bound<'py, PyAny>> {
        let mode = if assume_consent {
            ConsentMode::AssumeConsent
        } else {
            ConsentMode::Tokens
        };
        let report = oracle::audit(&self.inner.platform, mode).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        to_py(py, &report)
    }

    /// The decision plus how each stored policy relates to the request.
    fn explain<'py>(
        &self,
        py: Python<'py>,
        component: &str,
        owner: &str,
        attribute: &str,
        actions: Vec<String>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let doc = request_doc(component, owner, attribute, actions)?;
        let r = self.checked_request(&doc)?;
        let report = self.inner.platform.explain(&r);
        let policies: Vec<_> = report
            .policies
            .iter()
            .map(|p| {
                serde_json::json!({
                    "id": p.id,
                    "owner": p.owner,
                    "policy": p.text,
                    "matches": p.matches,
                    "stakeholder": p.stakeholder,
                    "condition_holds": p.condition.as_ref().map(|c| c.holds),
                    "trace": p.condition.as_ref().map(|c| c.to_string()),
                })
            })
            .collect();
        to_py(
            py,
            &serde_json::json!({
                "decision": DecisionRecord::from_decision(0, &report.decision),
                "token": report.token,
                "policies": policies,
            }),
        )
    }
}

/// A parsed policy. `str()` gives the canonical text.
#[pyclass(frozen)]
struct Policy {
    inner: rebac::Policy,
}

#[pymethods]
impl Policy {
    /// `"u"`, `"-"` or the named user or attribute.
    #[getter]
    fn target(&self) -> String {
        match &self.inner.target {
            Target::Owner => "u".into(),
            Target::Implicit => "-".into(),
            Target::Named(n) => n.clone(),
        }
    }

    #[getter]
    fn data(&self) -> Option<Vec<String>> {
        self.inner.data.as_ref().map(|d| d.iter().cloned().collect())
    }

    /// Action names; denied ones carry a leading `!`.
    #[getter]
    fn actions(&self) -> Vec<String> {
        self.inner
            .actions
            .iter()
            .map(|a| {
                if a.negated {
                    format!("!{}", a.name)
                } else {
                    a.name.clone()
                }
            })
            .collect()
    }

    #[getter]
    fn decision(&self) -> u8 {
        self.inner.decision.as_bit()
    }

    #[getter]
    fn condition(&self) -> String {
        self.inner.condition.to_string()
    }

    fn __str__(&self) -> String {
        self.inner.to_string()
    }

    fn __repr__(&self) -> String {
        format!("Policy({:?})", self.inner.to_string())
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }
}

/// Parses policy text. Raises `PolicyParseError(message, kind, position)`.
#[pyfunction]
fn parse_policy(text: &str) -> PyResult<Policy> {
    rebac::parse_policy(text).map(|inner| Policy { inner }).map_err(|e| {
        let kind = match e.kind {
            ParseErrorKind::Syntax { .. } => "syntax",
            ParseErrorKind::Sort { .. } => "sort",
            ParseErrorKind::UnboundVariable { .. } => "unbound",
        };
        PolicyParseError::new_err((e.to_string(), kind, e.position))
    })
}

/// Sensitivity level name (`NS`, `LS`, `MS`, `HS`) for a score in [0, 1].
#[pyfunction]
fn classify(score: f64) -> PyResult<String> {
    rebac::data::classify(score)
        .map(|l| l.to_string())
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Suggested generalization level for a sensitivity level name.
#[pyfunction]
fn recommend_level(level: &str) -> PyResult<u32> {
    let level: SensitivityLevel = level
        .parse()
        .map_err(|_| PyValueError::new_err(format!("unknown level `{level}`")))?;
    Ok(rebac::generalizer::recommend_level(level))
}

#[pymodule]
fn osn_rebac(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Scenario>()?;
    m.add_class::<Policy>()?;
    m.add_function(wrap_pyfunction!(parse_policy, m)?)?;
    m.add_function(wrap_pyfunction!(classify, m)?)?;
    m.add_function(wrap_pyfunction!(recommend_level, m)?)?;
    m.add("LoadError", m.py().get_type::<LoadError>())?;
    m.add("PolicyParseError", m.py().get_type::<PolicyParseError>())?;
    Ok(())
}
