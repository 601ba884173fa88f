use crate::scalar::Real;
use crate::simcore::SimTime;

/// Receive-rate estimator: continuous-time EWMA of the goodput implied by each
/// inter-arrival gap, `est = e^{-dt/tau} est + (1 - e^{-dt/tau}) * bits/dt`.
#[derive(Debug, Clone)]
pub struct RxRateEstimator<F> {
    tau_ns: F,
    estimate: F,
    last_arrival: Option<SimTime>,
    // bytes that arrived at the same instant as `last_arrival`
    carried_bytes: u64,
}

impl<F: Real> RxRateEstimator<F> {
    pub fn new(tau: SimTime) -> Self {
        assert!(tau > SimTime::ZERO, "rate estimator needs a positive time constant");
        Self {
            tau_ns: F::from_u64(tau.as_nanos()).expect("u64 fits"),
            estimate: F::zero(),
            last_arrival: None,
            carried_bytes: 0,
        }
    }

    /// Bits per second.
    #[inline]
    pub fn estimate(&self) -> F {
        self.estimate
    }

    pub fn on_arrival(&mut self, now: SimTime, bytes: u32) -> F {
        let Some(last) = self.last_arrival else {
            self.last_arrival = Some(now);
            return self.estimate;
        };
        let dt = now.saturating_sub(last).as_nanos();
        if dt == 0 {
            self.carried_bytes += bytes as u64;
            return self.estimate;
        }
        let dt = F::from_u64(dt).expect("u64 fits");
        let bits = F::from_u64((bytes as u64 + self.carried_bytes) * 8).expect("u64 fits");
        let inst = bits * F::lit(1e9) / dt;
        let w = F::one() - (-dt / self.tau_ns).exp();
        self.estimate = self.estimate + w * (inst - self.estimate);
        self.last_arrival = Some(now);
        self.carried_bytes = 0;
        self.estimate
    }
}
