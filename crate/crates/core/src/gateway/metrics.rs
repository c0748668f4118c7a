use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;
use std::sync::atomic::{AtomicI64, AtomicU64, Ordering};
use std::sync::Mutex;

use serde::Serialize;

const LATENCY_WINDOW: usize = 10_000;

/// Service counters. Everything except the in-flight gauge only grows.
#[derive(Debug)]
pub struct Metrics {
    routed: BTreeMap<String, AtomicU64>,
    route_decisions: AtomicU64,
    backend_calls: AtomicU64,
    backend_errors: AtomicU64,
    timeouts: AtomicU64,
    failovers: AtomicU64,
    rejected: AtomicU64,
    bad_requests: AtomicU64,
    in_flight: AtomicI64,
    latencies_ms: Mutex<VecDeque<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsSnapshot {
    /// `/generate` requests routed to each model.
    pub routed: BTreeMap<String, u64>,
    pub total_routed: u64,
    /// `/route` decisions served.
    pub route_decisions: u64,
    pub backend_calls: u64,
    pub backend_errors: u64,
    pub timeouts: u64,
    pub failovers: u64,
    /// Requests refused with 503 at the admission gate.
    pub rejected: u64,
    pub bad_requests: u64,
    pub in_flight: i64,
    pub latency_p50_ms: f64,
    pub latency_p95_ms: f64,
}

fn bump(c: &AtomicU64) {
    c.fetch_add(1, Ordering::Relaxed);
}

/// Nearest-rank percentile of an ascending slice; 0 for no samples.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = (q * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

impl Metrics {
    pub fn new<I, S>(model_ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            routed: model_ids
                .into_iter()
                .map(|m| (m.into(), AtomicU64::new(0)))
                .collect(),
            route_decisions: AtomicU64::new(0),
            backend_calls: AtomicU64::new(0),
            backend_errors: AtomicU64::new(0),
            timeouts: AtomicU64::new(0),
            failovers: AtomicU64::new(0),
            rejected: AtomicU64::new(0),
            bad_requests: AtomicU64::new(0),
            in_flight: AtomicI64::new(0),
            latencies_ms: Mutex::new(VecDeque::new()),
        }
    }

    pub(crate) fn record_routed(&self, model_id: &str) {
        if let Some(c) = self.routed.get(model_id) {
            bump(c);
        }
    }

    pub(crate) fn record_decision(&self) {
        bump(&self.route_decisions);
    }

    pub(crate) fn record_backend_call(&self) {
        bump(&self.backend_calls);
    }

    pub(crate) fn record_backend_error(&self) {
        bump(&self.backend_errors);
    }

    pub(crate) fn record_timeout(&self) {
        bump(&self.timeouts);
    }

    pub(crate) fn record_failover(&self) {
        bump(&self.failovers);
    }

    pub(crate) fn record_rejected(&self) {
        bump(&self.rejected);
    }

    pub(crate) fn record_bad_request(&self) {
        bump(&self.bad_requests);
    }

    pub(crate) fn enter(&self) {
        self.in_flight.fetch_add(1, Ordering::SeqCst);
    }

    pub(crate) fn leave(&self) {
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
    }

    pub(crate) fn record_latency(&self, ms: f64) {
        let mut window = self.latencies_ms.lock().expect("latency lock");
        if window.len() == LATENCY_WINDOW {
            window.pop_front();
        }
        window.push_back(ms);
    }

    pub fn snapshot(&self) -> MetricsSnapshot {
        let routed: BTreeMap<String, u64> = self
            .routed
            .iter()
            .map(|(k, v)| (k.clone(), v.load(Ordering::Relaxed)))
            .collect();
        let mut lat: Vec<f64> = self
            .latencies_ms
            .lock()
            .expect("latency lock")
            .iter()
            .copied()
            .collect();
        lat.sort_by(f64::total_cmp);
        MetricsSnapshot {
            total_routed: routed.values().sum(),
            routed,
            route_decisions: self.route_decisions.load(Ordering::Relaxed),
            backend_calls: self.backend_calls.load(Ordering::Relaxed),
            backend_errors: self.backend_errors.load(Ordering::Relaxed),
            timeouts: self.timeouts.load(Ordering::Relaxed),
            failovers: self.failovers.load(Ordering::Relaxed),
            rejected: self.rejected.load(Ordering::Relaxed),
            bad_requests: self.bad_requests.load(Ordering::Relaxed),
            in_flight: self.in_flight.load(Ordering::SeqCst),
            latency_p50_ms: percentile(&lat, 0.50),
            latency_p95_ms: percentile(&lat, 0.95),
        }
    }
}

impl MetricsSnapshot {
    /// Prometheus-style text exposition.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("# TYPE qroute_routed_total counter\n");
        for (model, n) in &self.routed {
            let _ = writeln!(out, "qroute_routed_total{{model=\"{model}\"}} {n}");
        }
        let counters = [
            ("qroute_route_decisions_total", self.route_decisions),
            ("qroute_backend_calls_total", self.backend_calls),
            ("qroute_backend_errors_total", self.backend_errors),
            ("qroute_timeouts_total", self.timeouts),
            ("qroute_failovers_total", self.failovers),
            ("qroute_rejected_total", self.rejected),
            ("qroute_bad_requests_total", self.bad_requests),
        ];
        for (name, v) in counters {
            let _ = writeln!(out, "# TYPE {name} counter\n{name} {v}");
        }
        let _ = writeln!(out, "# TYPE qroute_in_flight gauge\nqroute_in_flight {}", self.in_flight);
        let _ = writeln!(out, "# TYPE qroute_latency_ms summary");
        let _ = writeln!(out, "qroute_latency_ms{{quantile=\"0.5\"}} {}", self.latency_p50_ms);
        let _ = writeln!(out, "qroute_latency_ms{{quantile=\"0.95\"}} {}", self.latency_p95_ms);
        out
    }
}
